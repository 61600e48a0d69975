//! The teleportation pipeline on spatial wavefunctions.
//!
//! Qubits 2 and 1 are evolved together through the Bell preparation while
//! qubit 3 runs its state preparation alone. At the stage boundary the pair
//! is split into Schmidt branches; every branch evolves its qubit-2 factor
//! with qubit 3 through the Bell rotation, and its qubit-1 factor alone.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    apply_coupler_phase, fidelity, ideal_teleport, r_shift, rx, AlgebraError, GateMatrix, QubitIndex, SingleQubitState,
    ThreeQubitState,
};
use crate::device::{
    validate_blueprint, BarrierRole, CouplerElement, DeviceBlueprint, DeviceError, GateMode, Layout, PhysicalParams,
};
use crate::grid::{branch_decompose, ground_state_packet, tensor_product, ComponentWavefunction, GridError, SnapshotRow};
use crate::parallel;
use crate::propagator::{
    apply_gate_matrix, convergence_check, ConvergenceReport, EvolutionReport, NumericsParams, Propagator,
    PropagatorError,
};

use QubitIndex::{Q1, Q2, Q3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("branch decomposition needs rank {rank}, above the limit {limit}")]
    RankLimit { rank: usize, limit: usize },
    #[error("calibration of `{label}` is invalid: reference overlap modulus {overlap:.4} below 0.9")]
    CalibrationInvalid { label: String, overlap: f64 },
    #[error("full three-particle oracle limited to {limit} points per axis, got {points}")]
    OracleTooLarge { points: usize, limit: usize },
    #[error("no geometry in [{lo}, {hi}] nm reaches gamma = {target:.4} rad")]
    TargetNotBracketed { target: f64, lo: f64, hi: f64 },
    #[error("invalid protocol configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// Largest per-axis grid accepted by [`full_three_particle_oracle`].
pub const ORACLE_POINT_LIMIT: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementKind {
    #[default]
    Enumerate,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    pub phi1: f64,
    pub phi2: f64,
    /// Position of the SAW minimum carrying the three electrons at `t = 0`.
    pub initial_center: f64,
    pub measurement: MeasurementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Relative truncation error of the pair branch decomposition.
    pub rank_tolerance: f64,
    pub rank_limit: usize,
    /// Half-width of the fidelity profile window (nm).
    pub profile_half_width: f64,
    /// Calibrate dynamic couplers to report their phases.
    pub calibrate_dynamic: bool,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            phi1: 2.0 * PI / 3.0,
            phi2: FRAC_PI_2,
            initial_center: -50.0,
            measurement: MeasurementKind::Enumerate,
            seed: None,
            rank_tolerance: 1e-4,
            rank_limit: 8,
            profile_half_width: 20.0,
            calibrate_dynamic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ProtocolConfig {
    pub blueprint: DeviceBlueprint,
    pub physical: PhysicalParams,
    pub numerics: NumericsParams,
    pub protocol: ProtocolParams,
}

/// Coupler treatment shared by all couplers of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplerTreatment {
    /// Matrix couplers injecting `gamma = pi`.
    Ideal,
    /// Matrix couplers injecting a given phase.
    Hybrid,
    /// Couplers realised by the Coulomb interaction.
    Dynamic,
}

impl ProtocolConfig {
    /// Desk-scale numerics on the standard layout.
    pub fn desk() -> Self {
        Self { numerics: NumericsParams::desk(), ..Self::default() }
    }

    pub fn with_couplers(mut self, treatment: CouplerTreatment, gamma: f64) -> Self {
        match treatment {
            CouplerTreatment::Ideal => self.blueprint.set_coupler_mode(GateMode::Matrix, PI),
            CouplerTreatment::Hybrid => self.blueprint.set_coupler_mode(GateMode::Matrix, gamma),
            CouplerTreatment::Dynamic => {
                for c in &mut self.blueprint.couplers {
                    c.mode = GateMode::Dynamic;
                }
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.physical.validate()?;
        self.numerics.validate(&self.physical)?;
        let diag = validate_blueprint(&self.blueprint);
        if let Some(issue) = diag.issues.first() {
            return Err(ProtocolError::InvalidConfig(issue.message.clone()));
        }
        let pp = &self.protocol;
        let c = pp.initial_center;
        if (self.physical.saw_minimum_near(c, 0.0) - c).abs() > 1e-6 {
            return Err(ProtocolError::InvalidConfig(format!(
                "initial_center {c} nm is not a SAW minimum at t = 0 (nearest {:.6})",
                self.physical.saw_minimum_near(c, 0.0)
            )));
        }
        if pp.measurement == MeasurementKind::Sample && pp.seed.is_none() {
            return Err(ProtocolError::InvalidConfig("sample measurement requires an explicit seed".into()));
        }
        if !(pp.rank_tolerance > 0.0 && pp.rank_tolerance < 1.0) || pp.rank_limit == 0 {
            return Err(ProtocolError::InvalidConfig("rank_tolerance must lie in (0, 1) and rank_limit be positive".into()));
        }
        if !(pp.profile_half_width > 0.0) {
            return Err(ProtocolError::InvalidConfig("profile_half_width must be positive".into()));
        }
        let first = self
            .blueprint
            .splitters
            .iter()
            .map(|s| s.y_position)
            .chain(self.blueprint.barriers.iter().map(|b| b.y_start))
            .chain(self.blueprint.couplers.iter().map(|c| c.y_start))
            .fold(f64::INFINITY, f64::min);
        if first < c {
            return Err(ProtocolError::InvalidConfig(format!("element at y = {first} lies behind the initial packets")));
        }
        Ok(())
    }

    pub fn crossing_time(&self, y: f64) -> f64 {
        (y - self.protocol.initial_center) / self.physical.sound_speed
    }

    pub fn split_time(&self) -> f64 {
        self.crossing_time(self.blueprint.rotation_stage_y)
    }

    pub fn measurement_time(&self) -> f64 {
        self.crossing_time(self.blueprint.measurement_y)
    }

    /// Time at which Bob's packet has cleared the last correction element.
    pub fn completion_time(&self) -> f64 {
        let bp = &self.blueprint;
        let meas = bp.measurement_y;
        let last = bp
            .splitters
            .iter()
            .filter(|s| s.qubit == Q1 && s.y_position >= meas)
            .map(|s| s.y_position)
            .chain(bp.barriers.iter().filter(|b| b.qubit == Q1 && b.y_start >= meas).map(|b| b.y_end()))
            .fold(f64::NEG_INFINITY, f64::max);
        if last.is_finite() {
            self.crossing_time(last + 5.0 * self.physical.packet_sigma())
        } else {
            self.measurement_time()
        }
    }
}

/// Fixes the role-dependent barrier settings for a run.
///
/// `outcome = (q3, q2)` switches Bob's shifters per the correction table;
/// `None` leaves them as configured.
pub fn resolve_blueprint(bp: &DeviceBlueprint, phi1: f64, phi2: f64, outcome: Option<(u8, u8)>) -> DeviceBlueprint {
    let mut out = bp.clone();
    for b in &mut out.barriers {
        match b.role {
            BarrierRole::Fixed => {}
            BarrierRole::PrepPhi1 => b.phase = -phi1,
            BarrierRole::PrepPhi2 => b.phase = phi2,
            BarrierRole::CorrectionA => {
                if let Some((_, q2)) = outcome {
                    b.enabled = q2 == 0;
                }
            }
            BarrierRole::CorrectionB => {
                if let Some((q3, _)) = outcome {
                    b.enabled = q3 == 0;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Gate { qubit: QubitIndex, matrix: GateMatrix },
    Coupler { hi: QubitIndex, lo: QubitIndex, gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub label: String,
    pub action: Action,
}

impl Event {
    fn qubits(&self) -> Vec<QubitIndex> {
        match self.action {
            Action::Gate { qubit, .. } => vec![qubit],
            Action::Coupler { hi, lo, .. } => vec![hi, lo],
        }
    }
}

/// Matrix-mode elements as timed events, in crossing order.
pub fn schedule(cfg: &ProtocolConfig, bp: &DeviceBlueprint) -> Vec<Event> {
    let mut ev = Vec::new();
    for s in &bp.splitters {
        ev.push(Event {
            time: cfg.crossing_time(s.y_position),
            label: s.label.clone(),
            action: Action::Gate { qubit: s.qubit, matrix: rx(s.theta) },
        });
    }
    for b in bp.barriers.iter().filter(|b| b.enabled && b.mode == GateMode::Matrix) {
        ev.push(Event {
            time: cfg.crossing_time(b.y_start + 0.5 * b.y_length),
            label: b.label.clone(),
            action: Action::Gate { qubit: b.qubit, matrix: r_shift(b.wire, b.phase) },
        });
    }
    for c in bp.couplers.iter().filter(|c| c.mode == GateMode::Matrix) {
        let (hi, lo) = c.ordered_pair();
        ev.push(Event { time: cfg.crossing_time(c.y_mid()), label: c.label.clone(), action: Action::Coupler { hi, lo, gamma: c.gamma } });
    }
    ev.sort_by(|a, b| a.time.total_cmp(&b.time));
    ev
}

/// Multiplies the `|0_hi 1_lo>` components by `e^{i gamma}`.
pub fn apply_coupler_to_state(state: &mut ComponentWavefunction, hi: QubitIndex, lo: QubitIndex, gamma: f64) -> Result<()> {
    let (ph, pl) = (state.particle_of(hi)?, state.particle_of(lo)?);
    let phase = C64::from_polar(1.0, gamma);
    for c in 0..state.components.len() {
        if state.bit_of(c, ph) == 0 && state.bit_of(c, pl) == 1 {
            state.components[c].iter_mut().for_each(|z| *z *= phase);
        }
    }
    Ok(())
}

/// Evolves `state` to `t_end`, applying the events that fall in `[state.time, t_end)`.
pub fn run_segment(state: &mut ComponentWavefunction, events: &[Event], prop: &Propagator<'_>, t_end: f64) -> Result<EvolutionReport> {
    let mut report = EvolutionReport::default();
    let eps = 1e-9;
    for e in events {
        if e.time < state.time - eps || e.time >= t_end - eps {
            continue;
        }
        let qs = e.qubits();
        let present = qs.iter().filter(|q| state.qubits.contains(q)).count();
        if present == 0 {
            continue;
        }
        if present < qs.len() {
            return Err(ProtocolError::InvalidConfig(format!("element `{}` needs qubits not carried by this stage", e.label)));
        }
        report.merge(&prop.run_until(state, e.time)?);
        match &e.action {
            Action::Gate { qubit, matrix } => apply_gate_matrix(state, *qubit, matrix)?,
            Action::Coupler { hi, lo, gamma } => apply_coupler_to_state(state, *hi, *lo, *gamma)?,
        }
    }
    report.merge(&prop.run_until(state, t_end)?);
    Ok(report)
}

/// Ground-state packet of `qubit` in the initial SAW minimum.
pub fn initial_packet(cfg: &ProtocolConfig, qubit: QubitIndex, amps: SingleQubitState) -> Result<ComponentWavefunction> {
    let c0 = cfg.protocol.initial_center;
    let g = cfg.numerics.window(c0)?;
    let f = ground_state_packet(&g, c0, &cfg.physical)?;
    Ok(ComponentWavefunction::single(qubit, g, &f, amps, 0.0))
}

/// Numerics for a factor whose partners carry squared norm `weight`, so that
/// the boundary check applies to the physical amplitude.
fn weighted_numerics(n: &NumericsParams, weight: f64) -> NumericsParams {
    let tol = if weight > 0.0 { (n.boundary_tolerance / weight).min(1.0) } else { 1.0 };
    NumericsParams { boundary_tolerance: tol, ..*n }
}

fn zero_component(s: &mut ComponentWavefunction, c: usize) {
    s.components[c].iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
}

/// Time span during which the windows of a pair overlap dynamic couplers.
fn interaction_windows(cfg: &ProtocolConfig, bp: &DeviceBlueprint, a: QubitIndex, b: QubitIndex) -> Vec<(f64, f64)> {
    let reach = 0.5 * cfg.numerics.window_width + 2.0 * cfg.numerics.dy;
    let mut w: Vec<(f64, f64)> = bp
        .dynamic_couplers(a, b)
        .map(|c| (cfg.crossing_time(c.y_start - reach), cfg.crossing_time(c.y_end() + reach)))
        .collect();
    w.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (lo, hi) in w {
        match merged.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => merged.push((lo, hi)),
        }
    }
    merged
}

/// Two-particle state kept as a sum of products while the particles do not
/// interact, and as a dense grid function while they do.
enum PairForm {
    Terms(Vec<(ComponentWavefunction, ComponentWavefunction)>),
    Dense(ComponentWavefunction),
}

fn densify(terms: &[(ComponentWavefunction, ComponentWavefunction)]) -> Result<ComponentWavefunction> {
    let mut out = tensor_product(&terms[0].0, &terms[0].1)?;
    for (a, b) in &terms[1..] {
        out.add_scaled(C64::new(1.0, 0.0), &tensor_product(a, b)?)?;
    }
    Ok(out)
}

fn advance_terms(
    terms: &mut Vec<(ComponentWavefunction, ComponentWavefunction)>,
    events: &[Event],
    cfg: &ProtocolConfig,
    bp: &DeviceBlueprint,
    weight: f64,
    t_end: f64,
) -> Result<EvolutionReport> {
    let eps = 1e-9;
    let (qa, qb) = (terms[0].0.qubits[0], terms[0].1.qubits[0]);
    let t0 = terms[0].0.time;
    let mut report = EvolutionReport::default();
    let advance = |terms: &mut Vec<(ComponentWavefunction, ComponentWavefunction)>, t: f64, report: &mut EvolutionReport| -> Result<()> {
        for (a, b) in terms.iter_mut() {
            let (na, nb) = (a.norm2(), b.norm2());
            let num_a = weighted_numerics(&cfg.numerics, weight * nb);
            let num_b = weighted_numerics(&cfg.numerics, weight * na);
            report.merge(&Propagator::new(bp, &cfg.physical, &num_a).run_until(a, t)?);
            report.merge(&Propagator::new(bp, &cfg.physical, &num_b).run_until(b, t)?);
        }
        Ok(())
    };
    for e in events {
        if e.time < t0 - eps || e.time >= t_end - eps {
            continue;
        }
        match &e.action {
            Action::Gate { qubit, matrix } if *qubit == qa || *qubit == qb => {
                advance(terms, e.time, &mut report)?;
                for (a, b) in terms.iter_mut() {
                    apply_gate_matrix(if *qubit == qa { a } else { b }, *qubit, matrix)?;
                }
            }
            Action::Coupler { hi, lo, gamma } if (*hi == qa && *lo == qb) || (*hi == qb && *lo == qa) => {
                advance(terms, e.time, &mut report)?;
                let phase = C64::from_polar(1.0, *gamma);
                let mut next = Vec::with_capacity(2 * terms.len());
                for (a, b) in terms.drain(..) {
                    let (h, l) = if *hi == qa { (a, b) } else { (b, a) };
                    let mut h0 = h.clone();
                    zero_component(&mut h0, 1);
                    let mut h1 = h;
                    zero_component(&mut h1, 0);
                    let mut ld = l.clone();
                    ld.components[1].iter_mut().for_each(|z| *z *= phase);
                    let pairs = [(h0, ld), (h1, l)];
                    for (h, l) in pairs {
                        if h.norm2() > 0.0 && l.norm2() > 0.0 {
                            next.push(if *hi == qa { (h, l) } else { (l, h) });
                        }
                    }
                }
                *terms = next;
            }
            Action::Coupler { hi, lo, .. } if [qa, qb].contains(hi) || [qa, qb].contains(lo) => {
                return Err(ProtocolError::InvalidConfig(format!("element `{}` needs qubits not carried by this stage", e.label)));
            }
            _ => {}
        }
    }
    advance(terms, t_end, &mut report)?;
    Ok(report)
}

fn product_terms(dense: &ComponentWavefunction, tolerance: f64) -> Result<Vec<(ComponentWavefunction, ComponentWavefunction)>> {
    Ok(branch_decompose(dense, tolerance)?
        .branches
        .into_iter()
        .map(|b| {
            let mut first = b.first;
            first.scale(b.coefficient);
            (first, b.second)
        })
        .collect())
}

/// Evolves a pair given as a sum of products until `t_end`, switching to the
/// dense two-particle grid across interaction windows.
fn evolve_pair(
    terms: Vec<(ComponentWavefunction, ComponentWavefunction)>,
    events: &[Event],
    cfg: &ProtocolConfig,
    bp: &DeviceBlueprint,
    weight: f64,
    t_end: f64,
) -> Result<(ComponentWavefunction, EvolutionReport)> {
    let (qa, qb) = (terms[0].0.qubits[0], terms[0].1.qubits[0]);
    let mut t = terms[0].0.time;
    let mut form = PairForm::Terms(terms);
    let mut report = EvolutionReport::default();
    let dense_numerics = weighted_numerics(&cfg.numerics, weight);
    for (lo, hi) in interaction_windows(cfg, bp, qa, qb) {
        if hi <= t || lo >= t_end {
            continue;
        }
        let mut dense = match form {
            PairForm::Terms(mut terms) => {
                if lo > t {
                    report.merge(&advance_terms(&mut terms, events, cfg, bp, weight, lo)?);
                }
                densify(&terms)?
            }
            PairForm::Dense(d) => d,
        };
        let stop = hi.min(t_end);
        let prop = Propagator::new(bp, &cfg.physical, &dense_numerics);
        report.merge(&run_segment(&mut dense, events, &prop, stop)?);
        t = stop;
        form = if stop < t_end {
            PairForm::Terms(product_terms(&dense, cfg.protocol.rank_tolerance * 1e-2)?)
        } else {
            PairForm::Dense(dense)
        };
    }
    let out = match form {
        PairForm::Terms(mut terms) => {
            report.merge(&advance_terms(&mut terms, events, cfg, bp, weight, t_end)?);
            densify(&terms)?
        }
        PairForm::Dense(d) => d,
    };
    Ok((out, report))
}

/// Qubit-3 state that the preparation elements are designed to produce.
pub fn intended_input(cfg: &ProtocolConfig, bp: &DeviceBlueprint) -> SingleQubitState {
    let t_split = cfg.split_time();
    let mut gates: Vec<(f64, GateMatrix)> = bp
        .splitters
        .iter()
        .filter(|s| s.qubit == Q3)
        .map(|s| (cfg.crossing_time(s.y_position), rx(s.theta)))
        .chain(
            bp.barriers
                .iter()
                .filter(|b| b.qubit == Q3 && b.enabled)
                .map(|b| (cfg.crossing_time(b.y_start + 0.5 * b.y_length), r_shift(b.wire, b.phase))),
        )
        .filter(|(t, _)| *t < t_split)
        .collect();
    gates.sort_by(|a, b| a.0.total_cmp(&b.0));
    gates.iter().fold(SingleQubitState::one(), |s, (_, g)| g.apply(&s))
}

/// Bell preparation of qubits 2 and 1, evolved until the stage boundary.
pub fn run_bell_preparation(cfg: &ProtocolConfig) -> Result<(ComponentWavefunction, EvolutionReport)> {
    let bp = resolve_blueprint(&cfg.blueprint, cfg.protocol.phi1, cfg.protocol.phi2, None);
    let a = initial_packet(cfg, Q2, SingleQubitState::one())?;
    let b = initial_packet(cfg, Q1, SingleQubitState::one())?;
    evolve_pair(vec![(a, b)], &schedule(cfg, &bp), cfg, &bp, 1.0, cfg.split_time())
}

/// State preparation of qubit 3, evolved until the stage boundary.
pub fn run_state_preparation(cfg: &ProtocolConfig) -> Result<(ComponentWavefunction, EvolutionReport)> {
    let bp = resolve_blueprint(&cfg.blueprint, cfg.protocol.phi1, cfg.protocol.phi2, None);
    let mut s = initial_packet(cfg, Q3, SingleQubitState::one())?;
    let prop = Propagator::new(&bp, &cfg.physical, &cfg.numerics);
    let report = run_segment(&mut s, &schedule(cfg, &bp), &prop, cfg.split_time())?;
    Ok((s, report))
}

/// Three-particle state `sum_k c_k Phi_k(3,2) v_k(1)` at the detectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedState {
    pub coefficients: Vec<C64>,
    pub pairs: Vec<ComponentWavefunction>,
    pub bob: Vec<ComponentWavefunction>,
}

impl FactorizedState {
    pub fn rank(&self) -> usize {
        self.coefficients.len()
    }

    pub fn reconstruct(&self) -> Result<ComponentWavefunction> {
        let mut out = tensor_product(&self.pairs[0], &self.bob[0])?;
        out.scale(self.coefficients[0]);
        for k in 1..self.rank() {
            let mut term = tensor_product(&self.pairs[k], &self.bob[k])?;
            term.scale(self.coefficients[k]);
            out.add_scaled(C64::new(1.0, 0.0), &term)?;
        }
        Ok(out)
    }

    fn pair_gram(&self, c: usize) -> Vec<Vec<C64>> {
        let vol = self.pairs[0].cell_volume();
        let r = self.rank();
        (0..r)
            .map(|k| {
                (0..r)
                    .map(|l| {
                        let (a, b) = (&self.pairs[k].components[c], &self.pairs[l].components[c]);
                        a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>() * vol
                    })
                    .collect()
            })
            .collect()
    }

    /// Squared norm of every wire component, indexed `4 x3 + 2 x2 + x1`.
    pub fn component_weights(&self) -> [f64; 8] {
        let r = self.rank();
        let vol1 = self.bob[0].cell_volume();
        std::array::from_fn(|idx| {
            let (x32, x1) = (idx >> 1, idx & 1);
            let g = self.pair_gram(x32);
            let mut total = C64::new(0.0, 0.0);
            for k in 0..r {
                for l in 0..r {
                    let vb = self.bob[k].components[x1].iter().zip(&self.bob[l].components[x1]).map(|(x, y)| x.conj() * y).sum::<C64>() * vol1;
                    total += self.coefficients[k].conj() * self.coefficients[l] * g[k][l] * vb;
                }
            }
            total.re
        })
    }

    /// `Phi(y, y, y)` for every component, on the grid of qubit 3.
    pub fn diagonal_rows(&self) -> Vec<SnapshotRow> {
        self.diagonal_rows_with(|idx| (idx >> 1, idx & 1))
    }

    /// Diagonal slices where `split` maps a three-qubit index onto the
    /// component indices of the pair and single factors.
    fn diagonal_rows_with(&self, split: impl Fn(usize) -> (usize, usize)) -> Vec<SnapshotRow> {
        let g = self.pairs[0].grids[0];
        let time = self.pairs[0].time;
        let mut rows = Vec::new();
        for idx in 0..8 {
            let (x32, x1) = split(idx);
            for y in g.positions() {
                let mut z = C64::new(0.0, 0.0);
                let mut ok = true;
                for k in 0..self.rank() {
                    match (self.pairs[k].value_at(x32, &[y, y]), self.bob[k].value_at(x1, &[y])) {
                        (Some(a), Some(b)) => z += self.coefficients[k] * a * b,
                        _ => ok = false,
                    }
                }
                if ok {
                    rows.push(SnapshotRow { time, y, label: ThreeQubitState::label(idx), re: z.re, im: z.im });
                }
            }
        }
        rows
    }
}

/// Bell-rotation responses of every pair branch to a set of qubit-3 inputs.
#[derive(Debug, Clone)]
pub struct RotationResponses {
    pub coefficients: Vec<C64>,
    pub singular_values: Vec<f64>,
    /// `responses[k][j]`: branch `k` evolved with input `j`.
    pub responses: Vec<Vec<ComponentWavefunction>>,
    /// Qubit-1 factors at the detectors.
    pub bob: Vec<ComponentWavefunction>,
    /// Qubit-1 factors at the stage boundary.
    pub bob_split: Vec<ComponentWavefunction>,
    pub report: EvolutionReport,
}

impl RotationResponses {
    pub fn combine(&self, amps: &[C64]) -> FactorizedState {
        let pairs = self
            .responses
            .iter()
            .map(|rs| {
                let mut acc = rs[0].clone();
                acc.scale(amps[0]);
                for (r, &a) in rs.iter().zip(amps).skip(1) {
                    acc.add_scaled(a, r).expect("responses share grids");
                }
                acc
            })
            .collect();
        FactorizedState { coefficients: self.coefficients.clone(), pairs, bob: self.bob.clone() }
    }
}

pub fn rotation_responses(pair: &ComponentWavefunction, inputs: &[ComponentWavefunction], cfg: &ProtocolConfig) -> Result<RotationResponses> {
    let pp = &cfg.protocol;
    let dec = branch_decompose(pair, pp.rank_tolerance)?;
    if dec.rank() > pp.rank_limit {
        return Err(ProtocolError::RankLimit { rank: dec.rank(), limit: pp.rank_limit });
    }
    let bp = resolve_blueprint(&cfg.blueprint, pp.phi1, pp.phi2, None);
    let events = schedule(cfg, &bp);
    let t_meas = cfg.measurement_time();

    let mut jobs = Vec::new();
    for (k, b) in dec.branches.iter().enumerate() {
        let w = b.coefficient.norm_sqr();
        for (j, input) in inputs.iter().enumerate() {
            jobs.push((k, Some(j), w, input.clone(), b.first.clone()));
        }
        jobs.push((k, None, w, b.second.clone(), b.second.clone()));
    }
    let done = parallel::map(jobs, |(k, j, w, x, u)| {
        let r = match j {
            Some(_) => evolve_pair(vec![(x, u)], &events, cfg, &bp, w, t_meas),
            None => {
                let n = weighted_numerics(&cfg.numerics, w);
                let mut s = x;
                run_segment(&mut s, &events, &Propagator::new(&bp, &cfg.physical, &n), t_meas).map(|r| (s, r))
            }
        };
        let r = r.map(|(s, mut rep)| {
            rep.norm_drift *= w;
            rep.max_boundary_density *= w;
            (s, rep)
        });
        (k, j, r)
    });
    let rank = dec.rank();
    let mut responses: Vec<Vec<ComponentWavefunction>> = vec![Vec::new(); rank];
    let mut bob = vec![None; rank];
    let mut report = EvolutionReport::default();
    for (k, j, r) in done {
        let (s, r) = r?;
        report.merge(&r);
        match j {
            Some(_) => responses[k].push(s),
            None => bob[k] = Some(s),
        }
    }
    Ok(RotationResponses {
        coefficients: dec.branches.iter().map(|b| b.coefficient).collect(),
        singular_values: dec.singular_values,
        responses,
        bob: bob.into_iter().map(|b| b.expect("bob factor")).collect(),
        bob_split: dec.branches.iter().map(|b| b.second.clone()).collect(),
        report,
    })
}

/// Bell rotation in branch form for a single qubit-3 input.
pub fn run_bell_rotation_factorized(
    pair: &ComponentWavefunction,
    sp_state: &ComponentWavefunction,
    cfg: &ProtocolConfig,
) -> Result<(FactorizedState, RotationResponses)> {
    let resp = rotation_responses(pair, std::slice::from_ref(sp_state), cfg)?;
    Ok((resp.combine(&[C64::new(1.0, 0.0)]), resp))
}

/// Two-by-two density matrix stored row-major.
pub type Rho = [[C64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BobState {
    /// Normalized qubit density matrix as `[re, im]` pairs.
    pub rho: [[[f64; 2]; 2]; 2],
    pub purity: f64,
    /// Dominant eigenvector.
    pub principal: SingleQubitState,
}

impl BobState {
    fn from_rho(rho: &Rho) -> Option<Self> {
        let tr = (rho[0][0] + rho[1][1]).re;
        if !(tr > 0.0) {
            return None;
        }
        let m: Rho = std::array::from_fn(|i| std::array::from_fn(|j| rho[i][j] / tr));
        let purity = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| (m[i][j] * m[j][i]).re).sum();
        let (a, d, b) = (m[0][0].re, m[1][1].re, m[0][1]);
        let lam = 0.5 * (a + d) + (0.25 * (a - d).powi(2) + b.norm_sqr()).sqrt();
        let v = if b.norm() > 1e-15 {
            SingleQubitState::new(b, C64::new(lam - a, 0.0))
        } else if a >= d {
            SingleQubitState::zero()
        } else {
            SingleQubitState::one()
        };
        Some(Self {
            rho: std::array::from_fn(|i| std::array::from_fn(|j| [m[i][j].re, m[i][j].im])),
            purity,
            principal: v.normalized().unwrap_or(SingleQubitState::zero()),
        })
    }

    pub fn matrix(&self) -> Rho {
        std::array::from_fn(|i| std::array::from_fn(|j| C64::new(self.rho[i][j][0], self.rho[i][j][1])))
    }

    pub fn expectation(&self, psi: &SingleQubitState) -> f64 {
        let m = self.matrix();
        let v = psi.as_array();
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += v[i].conj() * m[i][j] * v[j];
            }
        }
        acc.re / psi.norm2()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub q3: u8,
    pub q2: u8,
    pub probability: f64,
    pub fidelity: f64,
    pub bob_before: Option<BobState>,
    pub bob_after: Option<BobState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// `ybar - y0` (nm).
    pub offset: f64,
    pub fidelity: f64,
    /// Bob's single-electron density (1/nm).
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub outcomes: Vec<OutcomeRow>,
    pub mean_fidelity: f64,
    pub profile: Vec<ProfilePoint>,
    /// Density-weighted fidelity over the profile window.
    pub profile_aggregate: f64,
    /// Bob's probability within the profile window.
    pub window_density: f64,
    /// `|s_f|^2`, averaged over outcomes.
    pub final_s2: f64,
    pub sampled_outcome: Option<[u8; 2]>,
    #[serde(skip)]
    pub report: EvolutionReport,
}

impl Measurement {
    pub fn profile_spread(&self) -> f64 {
        let (lo, hi) = self
            .profile
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.fidelity), hi.max(p.fidelity)));
        if self.profile.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }
}

fn density_matrix(coef: &[C64], gram: &[Vec<C64>], factors: &[ComponentWavefunction]) -> Rho {
    let vol = factors[0].cell_volume();
    let r = coef.len();
    let mut rho = [[C64::new(0.0, 0.0); 2]; 2];
    for k in 0..r {
        for l in 0..r {
            let w = coef[k] * coef[l].conj() * gram[l][k];
            for (a, row) in rho.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    let s: C64 = factors[k].components[a].iter().zip(&factors[l].components[b]).map(|(x, y)| x * y.conj()).sum();
                    *cell += w * s * vol;
                }
            }
        }
    }
    rho
}

/// Enumerates the detector outcomes, runs Bob's correction line for each and
/// evaluates the fidelities against `input`.
pub fn measure_and_correct(fs: &FactorizedState, input: &SingleQubitState, cfg: &ProtocolConfig) -> Result<Measurement> {
    let pp = &cfg.protocol;
    let t_meas = cfg.measurement_time();
    let t_end = cfg.completion_time();
    let mut report = EvolutionReport::default();
    let outcomes: Vec<(u8, u8)> = (0..4).map(|k| ((k >> 1) as u8, (k & 1) as u8)).collect();

    let jobs: Vec<(usize, usize)> = (0..4).flat_map(|o| (0..fs.rank()).map(move |k| (o, k))).collect();
    let corrected = parallel::map(jobs, |(o, k)| {
        let bp = resolve_blueprint(&cfg.blueprint, pp.phi1, pp.phi2, Some(outcomes[o]));
        let n = weighted_numerics(&cfg.numerics, fs.coefficients[k].norm_sqr());
        let prop = Propagator::new(&bp, &cfg.physical, &n);
        let mut s = fs.bob[k].clone();
        s.time = t_meas;
        let w = fs.coefficients[k].norm_sqr();
        run_segment(&mut s, &schedule(cfg, &bp), &prop, t_end).map(|mut r| {
            r.norm_drift *= w;
            r.max_boundary_density *= w;
            (s, r)
        })
    });
    let mut bob_after: Vec<Vec<ComponentWavefunction>> = vec![Vec::new(); 4];
    for (idx, res) in corrected.into_iter().enumerate() {
        let (s, r) = res?;
        report.merge(&r);
        bob_after[idx / fs.rank()].push(s);
    }

    let total: f64 = fs.component_weights().iter().sum();
    let mut rows = Vec::new();
    let mut rhos_after = Vec::new();
    let mut grams = Vec::new();
    for (o, &(q3, q2)) in outcomes.iter().enumerate() {
        let gram = fs.pair_gram(2 * q3 as usize + q2 as usize);
        let before = density_matrix(&fs.coefficients, &gram, &fs.bob);
        let after = density_matrix(&fs.coefficients, &gram, &bob_after[o]);
        let p = (before[0][0] + before[1][1]).re / total;
        let b_before = BobState::from_rho(&before);
        let b_after = BobState::from_rho(&after);
        let f = b_after.map_or(0.0, |b| b.expectation(input));
        rows.push(OutcomeRow { q3, q2, probability: p, fidelity: f, bob_before: b_before, bob_after: b_after });
        rhos_after.push(after);
        grams.push(gram);
    }
    let mean_fidelity = rows.iter().map(|r| r.probability * r.fidelity).sum();
    let tr_after: f64 = rhos_after.iter().map(|r| (r[0][0] + r[1][1]).re).sum();
    let final_s2 = rhos_after.iter().map(|r| r[0][0].re).sum::<f64>() / tr_after;

    let (profile, profile_aggregate, window_density) = fidelity_profile(fs, &bob_after, &grams, input, cfg);

    let sampled_outcome = match (pp.measurement, pp.seed) {
        (MeasurementKind::Sample, Some(seed)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = rows.len() - 1;
            for (i, row) in rows.iter().enumerate() {
                acc += row.probability;
                if r < acc {
                    pick = i;
                    break;
                }
            }
            Some([rows[pick].q3, rows[pick].q2])
        }
        _ => None,
    };
    Ok(Measurement { outcomes: rows, mean_fidelity, profile, profile_aggregate, window_density, final_s2, sampled_outcome, report })
}

/// Pointwise fidelity along the equal-offset diagonal `y_i = m_i + u`, where
/// `m_i` is the SAW minimum carrying particle `i`.
fn fidelity_profile(
    fs: &FactorizedState,
    bob_after: &[Vec<ComponentWavefunction>],
    grams: &[Vec<Vec<C64>>],
    input: &SingleQubitState,
    cfg: &ProtocolConfig,
) -> (Vec<ProfilePoint>, f64, f64) {
    let p = &cfg.physical;
    let pair_grid = fs.pairs[0].grids[0];
    let bob_grid = bob_after[0][0].grids[0];
    let m32 = p.saw_minimum_near(pair_grid.center(), fs.pairs[0].time);
    let m1 = p.saw_minimum_near(bob_grid.center(), bob_after[0][0].time);
    let dy = bob_grid.spacing;
    let half = (cfg.protocol.profile_half_width / dy).floor() as i64;
    let r = fs.rank();

    let mut pts = Vec::new();
    for j in -half..=half {
        let u = j as f64 * dy;
        let (y32, y1) = (m32 + u, m1 + u);
        let mut num = 0.0;
        let mut den = 0.0;
        let mut density = 0.0;
        let mut ok = true;
        for (o, ws) in bob_after.iter().enumerate() {
            let c = o; // 2 q3 + q2
            let mut amp = [C64::new(0.0, 0.0); 2];
            let mut wv: Vec<[C64; 2]> = Vec::with_capacity(r);
            for k in 0..r {
                let (Some(phi), Some(w0), Some(w1)) = (fs.pairs[k].value_at(c, &[y32, y32]), ws[k].value_at(0, &[y1]), ws[k].value_at(1, &[y1])) else {
                    ok = false;
                    break;
                };
                amp[0] += fs.coefficients[k] * phi * w0;
                amp[1] += fs.coefficients[k] * phi * w1;
                wv.push([w0, w1]);
            }
            if !ok {
                break;
            }
            let n2 = amp[0].norm_sqr() + amp[1].norm_sqr();
            let overlap = input.a0.conj() * amp[0] + input.a1.conj() * amp[1];
            num += overlap.norm_sqr() / input.norm2();
            den += n2;
            for k in 0..r {
                for l in 0..r {
                    let w = fs.coefficients[k] * fs.coefficients[l].conj() * grams[o][l][k];
                    density += (w * (wv[k][0] * wv[l][0].conj() + wv[k][1] * wv[l][1].conj())).re;
                }
            }
        }
        if ok {
            pts.push((u, num, den, density));
        }
    }
    let total: f64 = fs.component_weights().iter().sum();
    let peak = pts.iter().map(|p| p.2).fold(0.0, f64::max);
    let profile: Vec<ProfilePoint> = pts
        .iter()
        .filter(|p| p.2 > 1e-12 * peak)
        .map(|&(u, num, den, density)| ProfilePoint { offset: u, fidelity: num / den, density: density / total })
        .collect();
    let wsum: f64 = profile.iter().map(|p| p.density).sum();
    let aggregate = profile.iter().map(|p| p.density * p.fidelity).sum::<f64>() / wsum;
    (profile, aggregate, wsum * dy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplerPhase {
    pub label: String,
    pub mode: GateMode,
    /// Phase delay of the `|0_hi 1_lo>` branch, accumulated over the transit.
    pub gamma: f64,
    /// `gamma` reduced to `[0, 2 pi)`.
    pub gamma_wrapped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub schema: String,
    pub phi1: f64,
    pub phi2: f64,
    pub input: SingleQubitState,
    pub gamma_prep: Option<f64>,
    pub gamma_rot: Option<f64>,
    pub couplers: Vec<CouplerPhase>,
    pub branch_rank: usize,
    pub component_weights: [f64; 8],
    #[serde(flatten)]
    pub measurement: Measurement,
    #[serde(skip)]
    pub reports: Vec<(String, EvolutionReport)>,
    #[serde(skip)]
    pub factorized: Option<FactorizedState>,
}

pub const RESULT_SCHEMA: &str = "saw-teleport/result/1";

fn coupler_phase(cfg: &ProtocolConfig, c: &CouplerElement) -> Result<CouplerPhase> {
    match c.mode {
        GateMode::Matrix => Ok(CouplerPhase { label: c.label.clone(), mode: c.mode, gamma: c.gamma, gamma_wrapped: c.gamma.rem_euclid(TAU) }),
        GateMode::Dynamic => {
            let cal = calibrate_coupler(&cfg.blueprint, &c.label, &cfg.physical, &cfg.numerics)?;
            Ok(CouplerPhase { label: c.label.clone(), mode: c.mode, gamma: cal.gamma, gamma_wrapped: cal.gamma_wrapped })
        }
    }
}

/// Full pipeline: preparation, factorized Bell rotation, measurement, correction.
pub fn run_protocol(cfg: &ProtocolConfig) -> Result<ProtocolResult> {
    cfg.validate()?;
    let pp = &cfg.protocol;
    let bp = resolve_blueprint(&cfg.blueprint, pp.phi1, pp.phi2, None);
    let input = intended_input(cfg, &bp);
    let (pair, rep_a) = run_bell_preparation(cfg)?;
    let (sp, rep_sp) = run_state_preparation(cfg)?;
    let (fs, resp) = run_bell_rotation_factorized(&pair, &sp, cfg)?;
    let measurement = measure_and_correct(&fs, &input, cfg)?;

    let mut couplers = Vec::new();
    for c in &cfg.blueprint.couplers {
        if c.mode == GateMode::Matrix || pp.calibrate_dynamic {
            couplers.push(coupler_phase(cfg, c)?);
        }
    }
    let pick = |hi: QubitIndex| {
        cfg.blueprint
            .couplers
            .iter()
            .find(|c| c.ordered_pair().0 == hi)
            .and_then(|c| couplers.iter().find(|ph| ph.label == c.label))
            .map(|ph| ph.gamma)
    };
    Ok(ProtocolResult {
        schema: RESULT_SCHEMA.into(),
        phi1: pp.phi1,
        phi2: pp.phi2,
        input,
        gamma_prep: pick(Q2),
        gamma_rot: pick(Q3),
        couplers,
        branch_rank: fs.rank(),
        component_weights: fs.component_weights(),
        reports: vec![
            ("bell_preparation".into(), rep_a),
            ("state_preparation".into(), rep_sp),
            ("bell_rotation".into(), resp.report),
            ("correction".into(), measurement.report),
        ],
        measurement,
        factorized: Some(fs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub phi1: f64,
    pub si2: f64,
    pub sf2: f64,
    pub ti2: f64,
    pub tf2: f64,
    pub fidelity: [f64; 4],
    pub mean_fidelity: f64,
}

/// Whether qubit 3 only meets matrix elements before the stage boundary, so
/// that its spatial factor is the same for every preparation phase.
fn preparation_is_linear(cfg: &ProtocolConfig) -> bool {
    let t = cfg.split_time();
    !cfg.blueprint
        .barriers
        .iter()
        .any(|b| b.qubit == Q3 && b.mode == GateMode::Dynamic && cfg.crossing_time(b.y_start) < t)
}

fn sweep_row(phi1: f64, input: &SingleQubitState, m: &Measurement) -> SweepRow {
    let si2 = input.a0.norm_sqr() / input.norm2();
    SweepRow {
        phi1,
        si2,
        sf2: m.final_s2,
        ti2: 1.0 - si2,
        tf2: 1.0 - m.final_s2,
        fidelity: std::array::from_fn(|k| m.outcomes[k].fidelity),
        mean_fidelity: m.mean_fidelity,
    }
}

/// Runs the pipeline for each `phi1`, reusing the Bell preparation and, when
/// possible, the Bell-rotation responses.
pub fn sweep_phi1_detailed(cfg: &ProtocolConfig, phis: &[f64]) -> Result<Vec<(SweepRow, Measurement)>> {
    cfg.validate()?;
    let (pair, _) = run_bell_preparation(cfg)?;
    let mut out = Vec::with_capacity(phis.len());
    if preparation_is_linear(cfg) {
        let bp_plain = DeviceBlueprint { splitters: vec![], barriers: vec![], couplers: vec![], ..cfg.blueprint.clone() };
        let mut chi = initial_packet(cfg, Q3, SingleQubitState::one())?;
        let prop = Propagator::new(&bp_plain, &cfg.physical, &cfg.numerics);
        prop.run_until(&mut chi, cfg.split_time())?;
        let mut basis0 = chi.clone();
        basis0.components[0] = chi.components[1].clone();
        basis0.components[1].iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let mut basis1 = chi.clone();
        basis1.components[0].iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        let resp = rotation_responses(&pair, &[basis0, basis1], cfg)?;
        for &phi1 in phis {
            let c = ProtocolConfig { protocol: ProtocolParams { phi1, ..cfg.protocol }, ..cfg.clone() };
            let bp = resolve_blueprint(&c.blueprint, phi1, c.protocol.phi2, None);
            let input = intended_input(&c, &bp);
            let fs = resp.combine(&[input.a0, input.a1]);
            let m = measure_and_correct(&fs, &input, &c)?;
            out.push((sweep_row(phi1, &input, &m), m));
        }
    } else {
        for &phi1 in phis {
            let c = ProtocolConfig { protocol: ProtocolParams { phi1, ..cfg.protocol }, ..cfg.clone() };
            let bp = resolve_blueprint(&c.blueprint, phi1, c.protocol.phi2, None);
            let input = intended_input(&c, &bp);
            let (sp, _) = run_state_preparation(&c)?;
            let (fs, _) = run_bell_rotation_factorized(&pair, &sp, &c)?;
            let m = measure_and_correct(&fs, &input, &c)?;
            out.push((sweep_row(phi1, &input, &m), m));
        }
    }
    Ok(out)
}

pub fn sweep_phi1(cfg: &ProtocolConfig, phis: &[f64]) -> Result<Vec<SweepRow>> {
    Ok(sweep_phi1_detailed(cfg, phis)?.into_iter().map(|(r, _)| r).collect())
}

/// Evolves all eight components on the full three-particle grid until the detectors.
pub fn full_three_particle_oracle(cfg: &ProtocolConfig) -> Result<(ComponentWavefunction, EvolutionReport)> {
    cfg.validate()?;
    let points = cfg.numerics.window_points();
    if points > ORACLE_POINT_LIMIT {
        return Err(ProtocolError::OracleTooLarge { points, limit: ORACLE_POINT_LIMIT });
    }
    let pp = &cfg.protocol;
    let bp = resolve_blueprint(&cfg.blueprint, pp.phi1, pp.phi2, None);
    let s3 = initial_packet(cfg, Q3, SingleQubitState::one())?;
    let s2 = initial_packet(cfg, Q2, SingleQubitState::one())?;
    let s1 = initial_packet(cfg, Q1, SingleQubitState::one())?;
    let mut s = tensor_product(&s3, &tensor_product(&s2, &s1)?)?;
    let prop = Propagator::new(&bp, &cfg.physical, &cfg.numerics);
    let report = run_segment(&mut s, &schedule(cfg, &bp), &prop, cfg.measurement_time())?;
    Ok((s, report))
}

/// Diagonal slices `Phi(y, y, y)` of the eight components at the requested
/// times, all of which must precede the detectors.
pub fn snapshot_series(cfg: &ProtocolConfig, times: &[f64]) -> Result<Vec<SnapshotRow>> {
    cfg.validate()?;
    let mut times = times.to_vec();
    times.sort_by(f64::total_cmp);
    let (t_split, t_meas) = (cfg.split_time(), cfg.measurement_time());
    if let Some(&t) = times.iter().find(|&&t| t > t_meas || t < 0.0) {
        return Err(ProtocolError::InvalidConfig(format!("snapshot time {t} fs lies outside [0, {t_meas:.1}] fs")));
    }
    let pp = &cfg.protocol;
    let bp = resolve_blueprint(&cfg.blueprint, pp.phi1, pp.phi2, None);
    let events = schedule(cfg, &bp);
    let prop = Propagator::new(&bp, &cfg.physical, &cfg.numerics);
    let fine = pp.rank_tolerance * 1e-2;
    let mut rows = Vec::new();

    let mut terms = vec![(initial_packet(cfg, Q2, SingleQubitState::one())?, initial_packet(cfg, Q1, SingleQubitState::one())?)];
    let mut sp = initial_packet(cfg, Q3, SingleQubitState::one())?;
    for &t in times.iter().filter(|&&t| t < t_split) {
        let (pair, _) = evolve_pair(terms, &events, cfg, &bp, 1.0, t)?;
        run_segment(&mut sp, &events, &prop, t)?;
        let fs = FactorizedState {
            coefficients: vec![C64::new(1.0, 0.0)],
            pairs: vec![pair.clone()],
            bob: vec![sp.clone()],
        };
        rows.extend(fs.diagonal_rows_with(|idx| (idx & 3, idx >> 2)));
        terms = product_terms(&pair, fine)?;
    }
    let (pair, _) = evolve_pair(terms, &events, cfg, &bp, 1.0, t_split)?;
    run_segment(&mut sp, &events, &prop, t_split)?;

    let dec = branch_decompose(&pair, pp.rank_tolerance)?;
    if dec.rank() > pp.rank_limit {
        return Err(ProtocolError::RankLimit { rank: dec.rank(), limit: pp.rank_limit });
    }
    let coefficients: Vec<C64> = dec.branches.iter().map(|b| b.coefficient).collect();
    let mut branch_terms: Vec<Vec<_>> = dec.branches.iter().map(|b| vec![(sp.clone(), b.first.clone())]).collect();
    let mut bob: Vec<ComponentWavefunction> = dec.branches.iter().map(|b| b.second.clone()).collect();
    for &t in times.iter().filter(|&&t| t >= t_split) {
        let mut pairs = Vec::with_capacity(bob.len());
        for k in 0..bob.len() {
            let w = coefficients[k].norm_sqr();
            let (dense, _) = evolve_pair(std::mem::take(&mut branch_terms[k]), &events, cfg, &bp, w, t)?;
            let n = weighted_numerics(&cfg.numerics, w);
            run_segment(&mut bob[k], &events, &Propagator::new(&bp, &cfg.physical, &n), t)?;
            branch_terms[k] = product_terms(&dense, fine)?;
            pairs.push(dense);
        }
        let fs = FactorizedState { coefficients: coefficients.clone(), pairs, bob: bob.clone() };
        rows.extend(fs.diagonal_rows());
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorizationCheck {
    /// `|<factorized|full>|` for normalized states.
    pub overlap: f64,
    pub branch_rank: usize,
    pub truncation_error: f64,
}

pub fn factorized_vs_full(cfg: &ProtocolConfig) -> Result<FactorizationCheck> {
    let (pair, _) = run_bell_preparation(cfg)?;
    let (sp, _) = run_state_preparation(cfg)?;
    let (fs, resp) = run_bell_rotation_factorized(&pair, &sp, cfg)?;
    let fact = fs.reconstruct()?;
    let (full, _) = full_three_particle_oracle(cfg)?;
    let ov = fact.overlap(&full)?;
    let sv = &resp.singular_values;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let kept: f64 = sv[..fs.rank()].iter().map(|s| s * s).sum();
    Ok(FactorizationCheck {
        overlap: ov.norm() / (fact.norm2() * full.norm2()).sqrt(),
        branch_rank: fs.rank(),
        truncation_error: ((total - kept).max(0.0) / total).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedY1 {
    /// Offsets of the frozen qubit-1 coordinate from its packet centre (nm).
    pub offsets: Vec<f64>,
    /// Normalized `|amplitude|` of the eight components for each offset.
    pub amplitudes: Vec<[f64; 8]>,
    /// Largest relative amplitude change against the centred run.
    pub max_relative_change: f64,
}

/// Final three-qubit amplitudes when qubit 1 is frozen at fixed displaced
/// positions during the Bell rotation.
pub fn conditioned_y1(resp: &RotationResponses, amps: &[C64], cfg: &ProtocolConfig, offsets: &[f64]) -> ConditionedY1 {
    let fs = resp.combine(amps);
    let g = resp.bob_split[0].grids[0];
    let center = cfg.physical.saw_minimum_near(g.center(), resp.bob_split[0].time);
    let vol = fs.pairs[0].cell_volume();
    let amplitudes: Vec<[f64; 8]> = offsets
        .iter()
        .map(|&u| {
            let y1 = center + u;
            let v: Vec<[C64; 2]> = resp
                .bob_split
                .iter()
                .map(|b| [b.value_at(0, &[y1]).unwrap_or_default(), b.value_at(1, &[y1]).unwrap_or_default()])
                .collect();
            let w: [f64; 8] = std::array::from_fn(|idx| {
                let (x32, x1) = (idx >> 1, idx & 1);
                let n = fs.pairs[0].components[x32].len();
                let mut s = 0.0;
                for i in 0..n {
                    let z: C64 = (0..fs.rank()).map(|k| fs.coefficients[k] * v[k][x1] * fs.pairs[k].components[x32][i]).sum();
                    s += z.norm_sqr();
                }
                s * vol
            });
            let total: f64 = w.iter().sum();
            w.map(|x| (x / total).sqrt())
        })
        .collect();
    let centre = offsets.iter().position(|&u| u == 0.0).unwrap_or(0);
    let mut worst: f64 = 0.0;
    for (i, a) in amplitudes.iter().enumerate() {
        if i == centre {
            continue;
        }
        for idx in 0..8 {
            let c = amplitudes[centre][idx];
            if c > 0.05 {
                worst = worst.max((a[idx] / c - 1.0).abs());
            }
        }
    }
    ConditionedY1 { offsets: offsets.to_vec(), amplitudes, max_relative_change: worst }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplerCalibration {
    pub plateau_length: f64,
    pub plateau_separation: f64,
    /// `-arg <ref|int>` accumulated through the transit.
    pub gamma: f64,
    pub gamma_wrapped: f64,
    pub overlap_modulus: f64,
    #[serde(skip)]
    pub report: EvolutionReport,
}

/// Phase picked up by the `|0_hi 1_lo>` branch while crossing coupler `label`,
/// relative to an interaction-free reference.
pub fn calibrate_coupler(bp: &DeviceBlueprint, label: &str, p: &PhysicalParams, n: &NumericsParams) -> Result<CouplerCalibration> {
    calibrate_coupler_with(bp, label, p, n, true)
}

pub fn calibrate_coupler_with(
    bp: &DeviceBlueprint,
    label: &str,
    p: &PhysicalParams,
    n: &NumericsParams,
    coulomb: bool,
) -> Result<CouplerCalibration> {
    let (overlaps, ref_norm, int_norm, report) = calibration_transit(bp, label, p, n, coulomb)?;
    let mut phase = 0.0;
    let mut last = C64::new(1.0, 0.0);
    for &ov in &overlaps {
        phase += (ov / last).arg();
        last = ov;
    }
    let modulus = last.norm() / (ref_norm * int_norm).sqrt();
    let c = bp.coupler(label)?;
    if modulus < 0.9 {
        return Err(ProtocolError::CalibrationInvalid { label: label.into(), overlap: modulus });
    }
    let gamma = -phase;
    Ok(CouplerCalibration {
        plateau_length: c.plateau_length,
        plateau_separation: c.plateau_separation,
        gamma,
        gamma_wrapped: gamma.rem_euclid(TAU),
        overlap_modulus: modulus,
        report,
    })
}

type Transit = (Vec<C64>, f64, f64, EvolutionReport);

/// Co-moving pair `|0_hi 1_lo>` carried through an isolated coupler, sampled
/// at regular intervals together with its interaction-free reference.
fn calibration_transit(bp: &DeviceBlueprint, label: &str, p: &PhysicalParams, n: &NumericsParams, coulomb: bool) -> Result<Transit> {
    let mut c = bp.coupler(label)?.clone();
    c.mode = GateMode::Dynamic;
    let (hi, lo) = c.ordered_pair();
    let iso = DeviceBlueprint { splitters: vec![], barriers: vec![], couplers: vec![c.clone()], ..bp.clone() };
    let sigma = p.packet_sigma();
    let y_start = p.saw_minimum_near(c.y_start - 6.0 * sigma - 0.5 * p.saw_wavelength, 0.0);
    let t0 = 0.0;
    let t1 = (c.y_end() + 6.0 * sigma - y_start) / p.sound_speed;
    let g = n.window(y_start)?;
    let f = ground_state_packet(&g, y_start, p)?;
    let a = ComponentWavefunction::single(hi, g, &f, SingleQubitState::zero(), t0);
    let b = ComponentWavefunction::single(lo, g, &f, SingleQubitState::one(), t0);
    let mut int = tensor_product(&a, &b)?;
    let mut reference = int.clone();
    let mut prop = Propagator::new(&iso, p, n);
    prop.switches.coulomb = coulomb;
    let mut free = prop.clone();
    free.switches.coulomb = false;

    let samples = ((t1 - t0) / 200.0).ceil().max(1.0) as usize;
    let mut overlaps = Vec::with_capacity(samples);
    let mut report = EvolutionReport::default();
    for k in 1..=samples {
        let t = t0 + (t1 - t0) * k as f64 / samples as f64;
        report.merge(&prop.run_until(&mut int, t)?);
        free.run_until(&mut reference, t)?;
        overlaps.push(reference.overlap(&int)?);
    }
    Ok((overlaps, reference.norm2(), int.norm2(), report))
}

/// `1 - |<psi_dt|psi_dt/f>|` for the interacting calibration transit.
pub fn calibration_convergence(bp: &DeviceBlueprint, label: &str, p: &PhysicalParams, n: &NumericsParams, factor: f64) -> Result<ConvergenceReport> {
    let mut c = bp.coupler(label)?.clone();
    c.mode = GateMode::Dynamic;
    let (hi, lo) = c.ordered_pair();
    let iso = DeviceBlueprint { splitters: vec![], barriers: vec![], couplers: vec![c.clone()], ..bp.clone() };
    let sigma = p.packet_sigma();
    let y_start = p.saw_minimum_near(c.y_start - 6.0 * sigma - 0.5 * p.saw_wavelength, 0.0);
    let t1 = (c.y_end() + 6.0 * sigma - y_start) / p.sound_speed;
    let g = n.window(y_start)?;
    let f = ground_state_packet(&g, y_start, p)?;
    let a = ComponentWavefunction::single(hi, g, &f, SingleQubitState::zero(), 0.0);
    let b = ComponentWavefunction::single(lo, g, &f, SingleQubitState::one(), 0.0);
    let s = tensor_product(&a, &b)?;
    let prop = Propagator::new(&iso, p, n);
    Ok(convergence_check(&prop, &s, t1, factor)?)
}

/// Calibrates the same coupler for each plateau length.
pub fn sweep_plateau_length(bp: &DeviceBlueprint, label: &str, p: &PhysicalParams, n: &NumericsParams, lengths: &[f64]) -> Result<Vec<CouplerCalibration>> {
    let jobs: Vec<f64> = lengths.to_vec();
    parallel::map(jobs, |len| {
        let mut b = bp.clone();
        b.coupler_mut(label)?.plateau_length = len;
        calibrate_coupler(&b, label, p, n)
    })
    .into_iter()
    .collect()
}

/// Bisection on the plateau separation for an accumulated phase `target`.
pub fn search_separation(
    bp: &DeviceBlueprint,
    label: &str,
    p: &PhysicalParams,
    n: &NumericsParams,
    target: f64,
    bracket: (f64, f64),
    tolerance: f64,
) -> Result<CouplerCalibration> {
    let eval = |sep: f64| -> Result<CouplerCalibration> {
        let mut b = bp.clone();
        b.coupler_mut(label)?.plateau_separation = sep;
        calibrate_coupler(&b, label, p, n)
    };
    let (mut lo, mut hi) = bracket;
    let mut c_lo = eval(lo)?;
    let c_hi = eval(hi)?;
    if !((c_lo.gamma - target) * (c_hi.gamma - target) <= 0.0) {
        return Err(ProtocolError::TargetNotBracketed { target, lo, hi });
    }
    let mut best = if (c_lo.gamma - target).abs() < (c_hi.gamma - target).abs() { c_lo } else { c_hi };
    for _ in 0..40 {
        if (best.gamma - target).abs() <= tolerance {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let c_mid = eval(mid)?;
        if (c_mid.gamma - target).abs() < (best.gamma - target).abs() {
            best = c_mid;
        }
        if (c_lo.gamma - target) * (c_mid.gamma - target) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            c_lo = c_mid;
        }
    }
    Ok(best)
}

/// Standard layout with both couplers moved to `separation`.
pub fn layout_with_separation(layout: &Layout, separation: f64) -> DeviceBlueprint {
    Layout { plateau_separation: separation, ..*layout }.build()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgebraAgreement {
    pub max_probability_error: f64,
    pub max_fidelity_error: f64,
    pub max_state_error: f64,
}

impl AlgebraAgreement {
    pub fn max_error(&self) -> f64 {
        self.max_probability_error.max(self.max_fidelity_error).max(self.max_state_error)
    }
}

/// Compares a matrix-mode run with the exact gate algebra.
pub fn algebra_agreement(result: &ProtocolResult, cfg: &ProtocolConfig) -> AlgebraAgreement {
    let gamma = |hi: QubitIndex| {
        cfg.blueprint.couplers.iter().find(|c| c.ordered_pair().0 == hi).map_or(0.0, |c| c.gamma)
    };
    let ideal = ideal_teleport(cfg.protocol.phi1, cfg.protocol.phi2, gamma(Q2), gamma(Q3));
    let mut out = AlgebraAgreement { max_probability_error: 0.0, max_fidelity_error: 0.0, max_state_error: 0.0 };
    for (row, br) in result.measurement.outcomes.iter().zip(&ideal.branches) {
        out.max_probability_error = out.max_probability_error.max((row.probability - br.probability).abs());
        out.max_fidelity_error = out.max_fidelity_error.max((row.fidelity - br.fidelity).abs());
        if let (Some(a), Some(b)) = (row.bob_before, br.bob_before) {
            out.max_state_error = out.max_state_error.max(1.0 - fidelity(&a.principal, &b));
        }
    }
    out
}

/// Applies the ideal Bell preparation phase relation to recover the
/// coupler phase from the `|00>` leakage probability of a prepared pair.
pub fn leak_probability(gamma: f64) -> f64 {
    let mut s = ThreeQubitState::basis(1, 1, 1);
    for (q, u) in [(Q1, rx(FRAC_PI_2)), (Q2, rx(FRAC_PI_2))] {
        s = crate::algebra::apply_single(&s, q, &u).expect("unitary");
    }
    s = apply_coupler_phase(&s, (Q2, Q1), gamma).expect("adjacent");
    s = crate::algebra::apply_single(&s, Q1, &rx(FRAC_PI_2)).expect("unitary");
    s.amp[ThreeQubitState::index(1, 0, 0)].norm_sqr()
}
