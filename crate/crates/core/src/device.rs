//! Wire-network geometry and the potential terms acting on the electrons.
//!
//! Six wires run along `y`. In the transverse coordinate `X` they sit at
//! `pitch * (2 (q - 1) + wire)`, so the upper wire of qubit `q` faces the
//! lower wire of qubit `q + 1`. A Coulomb coupler on the pair `(hi, lo)`
//! bends wire 0 of `hi` and wire 1 of `lo` towards each other along linear
//! ramps until they run `plateau_separation` apart.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{adjacent_pair, QubitIndex};
use crate::units::{COULOMB_CONSTANT, HBAR, HBAR2_OVER_2ME};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("physical parameter `{name}` must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("pair distance requested between two particles of the same qubit {0}")]
    SameQubit(QubitIndex),
    #[error("no element labelled `{0}`")]
    UnknownElement(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// SAW amplitude `A` (eV).
    pub saw_amplitude: f64,
    /// SAW wavelength (nm).
    pub saw_wavelength: f64,
    /// Sound speed (nm/fs).
    pub sound_speed: f64,
    /// Screening length `r0` (nm).
    pub screening_length: f64,
    pub relative_permittivity: f64,
    /// Effective mass in units of the free electron mass.
    pub effective_mass_ratio: f64,
    /// `e^2 / (4 pi eps_0)` (eV nm).
    pub coulomb_constant: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            saw_amplitude: 0.020,
            saw_wavelength: 200.0,
            sound_speed: 3.3e-3,
            screening_length: 5.0,
            relative_permittivity: 12.9,
            effective_mass_ratio: 0.067,
            coulomb_constant: COULOMB_CONSTANT,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let fields = [
            ("saw_amplitude", self.saw_amplitude),
            ("saw_wavelength", self.saw_wavelength),
            ("sound_speed", self.sound_speed),
            ("screening_length", self.screening_length),
            ("relative_permittivity", self.relative_permittivity),
            ("effective_mass_ratio", self.effective_mass_ratio),
            ("coulomb_constant", self.coulomb_constant),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(DeviceError::NonPositive { name, value });
            }
        }
        Ok(())
    }

    /// `hbar^2 / (2 m*)` in eV nm^2.
    pub fn kinetic_prefactor(&self) -> f64 {
        HBAR2_OVER_2ME / self.effective_mass_ratio
    }

    pub fn wavenumber(&self) -> f64 {
        TAU / self.saw_wavelength
    }

    pub fn saw_period(&self) -> f64 {
        self.saw_wavelength / self.sound_speed
    }

    /// Level spacing of the harmonic expansion around a SAW minimum (eV).
    pub fn harmonic_energy(&self) -> f64 {
        let k = self.wavenumber();
        (2.0 * self.kinetic_prefactor() * self.saw_amplitude * k * k).sqrt()
    }

    /// Standard deviation of the ground-state probability density (nm).
    pub fn packet_sigma(&self) -> f64 {
        (self.kinetic_prefactor() / self.harmonic_energy()).sqrt()
    }

    /// Wavenumber `m* v_s / hbar` of a packet co-moving with the SAW (1/nm).
    pub fn comoving_wavenumber(&self) -> f64 {
        self.sound_speed * HBAR / (2.0 * self.kinetic_prefactor())
    }

    /// Position of the SAW minimum closest to `near` at time `t`.
    pub fn saw_minimum_near(&self, near: f64, t: f64) -> f64 {
        let lambda = self.saw_wavelength;
        let base = self.sound_speed * t - lambda / 4.0;
        base + ((near - base) / lambda).round() * lambda
    }
}

pub fn saw_potential(y: f64, t: f64, p: &PhysicalParams) -> f64 {
    p.saw_amplitude * (p.wavenumber() * (y - p.sound_speed * t)).sin()
}

/// Exponentially screened Coulomb energy (eV) at distance `r`, with
/// `r` clamped from below at `r_min`.
pub fn screened_coulomb(r: f64, r_min: f64, p: &PhysicalParams) -> f64 {
    let r = r.max(r_min).max(f64::MIN_POSITIVE);
    p.coulomb_constant / (p.relative_permittivity * r) * (-r / p.screening_length).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// Applied as its transfer matrix when the SAW minimum crosses the element.
    #[default]
    Matrix,
    /// Realised through the potential during time evolution.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitterElement {
    pub label: String,
    pub qubit: QubitIndex,
    pub y_position: f64,
    #[serde(default = "half_pi")]
    pub theta: f64,
}

fn half_pi() -> f64 {
    FRAC_PI_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BarrierRole {
    /// Phase given by the element itself.
    #[default]
    Fixed,
    /// State-preparation barrier realising `R1(-phi1)`.
    PrepPhi1,
    /// State-preparation barrier realising `R0(phi2)`.
    PrepPhi2,
    /// Bob's shifter switched on when qubit 2 reads 0.
    CorrectionA,
    /// Bob's shifter switched on when qubit 3 reads 0.
    CorrectionB,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierElement {
    pub label: String,
    pub qubit: QubitIndex,
    pub wire: u8,
    pub y_start: f64,
    pub y_length: f64,
    #[serde(default)]
    pub role: BarrierRole,
    #[serde(default)]
    pub mode: GateMode,
    /// Phase `phi` of `R_wire(phi)` (rad); resolved from the role when the
    /// protocol runs.
    #[serde(default)]
    pub phase: f64,
    /// Explicit barrier height (eV) for dynamic mode; derived from `phase`
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    /// Whether the barrier is present. Correction shifters are toggled per
    /// measurement outcome.
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl BarrierElement {
    pub fn y_end(&self) -> f64 {
        self.y_start + self.y_length
    }

    /// Height of a rectangular barrier whose transit at the sound speed
    /// multiplies the wire amplitude by `e^{i phase}`.
    ///
    /// The dynamical phase is `-h L / (hbar v_s)`, so the height is taken from
    /// `(-phase) mod 2 pi` to stay non-negative.
    pub fn height_for_phase(phase: f64, length: f64, p: &PhysicalParams) -> f64 {
        (-phase).rem_euclid(TAU) * HBAR * p.sound_speed / length
    }

    pub fn effective_height(&self, p: &PhysicalParams) -> f64 {
        self.height
            .unwrap_or_else(|| Self::height_for_phase(self.phase, self.y_length, p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplerElement {
    pub label: String,
    /// Adjacent pair, written `[hi, lo]`.
    pub pair: [QubitIndex; 2],
    pub y_start: f64,
    pub ramp_length: f64,
    pub plateau_length: f64,
    pub plateau_separation: f64,
    #[serde(default = "dynamic_mode")]
    pub mode: GateMode,
    /// Conditional phase injected in matrix mode (rad).
    #[serde(default = "pi")]
    pub gamma: f64,
}

fn dynamic_mode() -> GateMode {
    GateMode::Dynamic
}

fn pi() -> f64 {
    PI
}

impl CouplerElement {
    pub fn y_end(&self) -> f64 {
        self.y_start + 2.0 * self.ramp_length + self.plateau_length
    }

    pub fn y_mid(&self) -> f64 {
        0.5 * (self.y_start + self.y_end())
    }

    pub fn contains(&self, y: f64) -> bool {
        y >= self.y_start && y <= self.y_end()
    }

    /// `(hi, lo)` with `hi` the higher-numbered qubit.
    pub fn ordered_pair(&self) -> (QubitIndex, QubitIndex) {
        if self.pair[0] > self.pair[1] {
            (self.pair[0], self.pair[1])
        } else {
            (self.pair[1], self.pair[0])
        }
    }

    pub fn min_distance(&self) -> f64 {
        self.plateau_separation / 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePath {
    pub qubit: QubitIndex,
    pub wire: u8,
    /// `(y, X)` breakpoints, strictly increasing in `y`; `X` is constant
    /// outside the first and last breakpoint.
    pub breakpoints: Vec<(f64, f64)>,
}

impl WirePath {
    pub fn lateral_offset(&self, y: f64) -> f64 {
        let bp = &self.breakpoints;
        if y <= bp[0].0 {
            return bp[0].1;
        }
        for w in bp.windows(2) {
            let ((y0, x0), (y1, x1)) = (w[0], w[1]);
            if y <= y1 {
                return x0 + (x1 - x0) * (y - y0) / (y1 - y0);
            }
        }
        bp[bp.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceBlueprint {
    /// Transverse distance between neighbouring wires away from couplers (nm).
    pub wire_pitch_far: f64,
    /// Lab position separating Bell preparation from the Bell rotation.
    pub rotation_stage_y: f64,
    /// Lab position of Alice's charge detectors.
    pub measurement_y: f64,
    #[serde(default, rename = "splitter")]
    pub splitters: Vec<SplitterElement>,
    #[serde(default, rename = "barrier")]
    pub barriers: Vec<BarrierElement>,
    #[serde(default, rename = "coupler")]
    pub couplers: Vec<CouplerElement>,
}

/// Parameters of the standard teleportation layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Lab position of the first splitters.
    pub start_y: f64,
    /// Spacing between consecutive elements.
    pub gap: f64,
    pub barrier_length: f64,
    pub ramp_length: f64,
    pub plateau_length: f64,
    pub plateau_separation: f64,
    pub wire_pitch_far: f64,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            start_y: -40.0,
            gap: 50.0,
            barrier_length: 40.0,
            ramp_length: 100.0,
            plateau_length: 150.0,
            plateau_separation: 5.0,
            wire_pitch_far: 60.0,
        }
    }
}

impl Default for DeviceBlueprint {
    fn default() -> Self {
        Layout::default().build()
    }
}

impl Layout {
    /// Lays out the full network: Bell preparation, state preparation of
    /// qubit 3, Bell rotation, detectors and Bob's correction line.
    pub fn build(&self) -> DeviceBlueprint {
        let g = self.gap;
        let lb = self.barrier_length;
        let span = 2.0 * self.ramp_length + self.plateau_length;
        let y0 = self.start_y;
        let split = |label: &str, qubit, y_position, theta| SplitterElement {
            label: label.into(),
            qubit,
            y_position,
            theta,
        };
        let barrier = |label: &str, qubit, wire, y_start, role, phase| BarrierElement {
            label: label.into(),
            qubit,
            wire,
            y_start,
            y_length: lb,
            role,
            mode: GateMode::Matrix,
            phase,
            height: None,
            enabled: true,
        };
        let coupler = |label: &str, pair, y_start| CouplerElement {
            label: label.into(),
            pair,
            y_start,
            ramp_length: self.ramp_length,
            plateau_length: self.plateau_length,
            plateau_separation: self.plateau_separation,
            mode: GateMode::Dynamic,
            gamma: PI,
        };
        use QubitIndex::*;
        let t12_start = y0 + g;
        let t12_end = t12_start + span;
        let stage = t12_end + 1.5 * g;
        let t23_start = t12_end + 3.0 * g;
        let t23_end = t23_start + span;
        let meas = t23_end + 2.0 * g;
        let ff = t23_end + 3.0 * g;
        DeviceBlueprint {
            wire_pitch_far: self.wire_pitch_far,
            rotation_stage_y: stage,
            measurement_y: meas,
            splitters: vec![
                split("rx1_prep", Q1, y0, FRAC_PI_2),
                split("rx2_prep", Q2, y0, FRAC_PI_2),
                split("sp_rx3_a", Q3, y0, FRAC_PI_2),
                split("sp_rx3_b", Q3, y0 + 2.0 * g + lb, FRAC_PI_2),
                split("rx1_bell", Q1, t12_end + g, FRAC_PI_2),
                split("rx2_rot", Q2, t12_end + 2.0 * g, FRAC_PI_2),
                split("rx2_inv", Q2, t23_end + g, -FRAC_PI_2),
                split("rx3_inv", Q3, t23_end + g, -FRAC_PI_2),
                split("ff_rx1_a", Q1, ff, FRAC_PI_2),
                split("ff_rx1_b", Q1, ff + 2.0 * g + lb, FRAC_PI_2),
            ],
            barriers: vec![
                barrier("sp_r1", Q3, 1, y0 + g, BarrierRole::PrepPhi1, 0.0),
                barrier("sp_r0", Q3, 0, y0 + 3.0 * g + lb, BarrierRole::PrepPhi2, FRAC_PI_2),
                barrier("ff_r0a", Q1, 0, ff + g, BarrierRole::CorrectionA, PI),
                barrier("ff_r0b", Q1, 0, ff + 3.0 * g + lb, BarrierRole::CorrectionB, PI),
            ],
            couplers: vec![coupler("t12", [Q2, Q1], t12_start), coupler("t23", [Q3, Q2], t23_start)],
        }
    }
}

/// Kinds of blueprint problems reported by [`validate_blueprint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueKind {
    Overlap,
    NonAdjacent,
    SeparationTooLarge,
    InvalidExtent,
    InvalidWire,
    StageOrder,
    DuplicateLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub issues: Vec<Issue>,
    /// Smallest transverse distance between wires of different qubits.
    pub min_approach_distance: f64,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

impl DeviceBlueprint {
    pub fn base_offset(&self, qubit: QubitIndex, wire: u8) -> f64 {
        self.wire_pitch_far * (2.0 * (qubit.number() as f64 - 1.0) + wire as f64)
    }

    pub fn wire_path(&self, qubit: QubitIndex, wire: u8) -> WirePath {
        let base = self.base_offset(qubit, wire);
        let mut couplers: Vec<(&CouplerElement, f64)> = self
            .couplers
            .iter()
            .filter_map(|c| {
                let (hi, lo) = c.ordered_pair();
                let shift = 0.5 * (self.wire_pitch_far - c.plateau_separation);
                if hi == qubit && wire == 0 {
                    Some((c, -shift))
                } else if lo == qubit && wire == 1 {
                    Some((c, shift))
                } else {
                    None
                }
            })
            .collect();
        couplers.sort_by(|a, b| a.0.y_start.total_cmp(&b.0.y_start));
        let mut breakpoints = Vec::new();
        for (c, shift) in couplers {
            let a = c.y_start;
            let b = a + c.ramp_length;
            let d = b + c.plateau_length;
            let e = c.y_end();
            for (y, x) in [(a, base), (b, base + shift), (d, base + shift), (e, base)] {
                if breakpoints.last().is_none_or(|&(yl, _): &(f64, f64)| y > yl) {
                    breakpoints.push((y, x));
                }
            }
        }
        if breakpoints.is_empty() {
            breakpoints.push((0.0, base));
        }
        WirePath { qubit, wire, breakpoints }
    }

    pub fn wire_paths(&self) -> Vec<WirePath> {
        QubitIndex::ALL
            .iter()
            .rev()
            .flat_map(|&q| [0u8, 1].map(|w| self.wire_path(q, w)))
            .collect()
    }

    pub fn coupler(&self, label: &str) -> Result<&CouplerElement, DeviceError> {
        self.couplers
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| DeviceError::UnknownElement(label.into()))
    }

    pub fn coupler_mut(&mut self, label: &str) -> Result<&mut CouplerElement, DeviceError> {
        self.couplers
            .iter_mut()
            .find(|c| c.label == label)
            .ok_or_else(|| DeviceError::UnknownElement(label.into()))
    }

    /// Dynamic couplers acting on the (unordered) pair `{a, b}`.
    pub fn dynamic_couplers(&self, a: QubitIndex, b: QubitIndex) -> impl Iterator<Item = &CouplerElement> {
        self.couplers.iter().filter(move |c| {
            c.mode == GateMode::Dynamic && {
                let (hi, lo) = c.ordered_pair();
                (hi == a && lo == b) || (hi == b && lo == a)
            }
        })
    }

    /// Sets every coupler to the same mode; in matrix mode `gamma` is injected.
    pub fn set_coupler_mode(&mut self, mode: GateMode, gamma: f64) {
        for c in &mut self.couplers {
            c.mode = mode;
            c.gamma = gamma;
        }
    }
}

/// Transverse-plus-longitudinal distance between two electrons on wires of
/// different qubits.
pub fn pair_distance(
    bp: &DeviceBlueprint,
    a: (QubitIndex, u8, f64),
    b: (QubitIndex, u8, f64),
) -> Result<f64, DeviceError> {
    if a.0 == b.0 {
        return Err(DeviceError::SameQubit(a.0));
    }
    let xa = bp.wire_path(a.0, a.1).lateral_offset(a.2);
    let xb = bp.wire_path(b.0, b.1).lateral_offset(b.2);
    Ok(((a.2 - b.2).powi(2) + (xa - xb).powi(2)).sqrt())
}

/// Sum of the dynamic-mode barrier heights covering `(qubit, wire, y)`.
pub fn barrier_potential(bp: &DeviceBlueprint, p: &PhysicalParams, qubit: QubitIndex, wire: u8, y: f64) -> f64 {
    bp.barriers
        .iter()
        .filter(|b| b.enabled && b.mode == GateMode::Dynamic && b.qubit == qubit && b.wire == wire)
        .filter(|b| y >= b.y_start && y < b.y_end())
        .map(|b| b.effective_height(p))
        .sum()
}

/// Potential energy of two electrons on adjacent qubits: SAW, barriers, and
/// the screened interaction while both sit inside a dynamic coupler.
pub fn total_pair_potential(
    bp: &DeviceBlueprint,
    p: &PhysicalParams,
    a: (QubitIndex, u8, f64),
    b: (QubitIndex, u8, f64),
    t: f64,
) -> f64 {
    let mut v = saw_potential(a.2, t, p) + saw_potential(b.2, t, p);
    v += barrier_potential(bp, p, a.0, a.1, a.2) + barrier_potential(bp, p, b.0, b.1, b.2);
    for c in bp.dynamic_couplers(a.0, b.0) {
        if c.contains(a.2) && c.contains(b.2) {
            if let Ok(r) = pair_distance(bp, a, b) {
                v += screened_coulomb(r, c.min_distance(), p);
            }
        }
    }
    v
}

fn element_intervals(bp: &DeviceBlueprint) -> Vec<(QubitIndex, f64, f64, String)> {
    let mut out = Vec::new();
    for s in &bp.splitters {
        out.push((s.qubit, s.y_position, s.y_position, s.label.clone()));
    }
    for b in &bp.barriers {
        out.push((b.qubit, b.y_start, b.y_end(), b.label.clone()));
    }
    for c in &bp.couplers {
        for q in c.pair {
            out.push((q, c.y_start, c.y_end(), c.label.clone()));
        }
    }
    out
}

pub fn validate_blueprint(bp: &DeviceBlueprint) -> Diagnostics {
    let mut issues = Vec::new();
    let mut push = |kind, message: String| issues.push(Issue { kind, message });

    let mut labels: Vec<&str> = bp
        .splitters
        .iter()
        .map(|s| s.label.as_str())
        .chain(bp.barriers.iter().map(|b| b.label.as_str()))
        .chain(bp.couplers.iter().map(|c| c.label.as_str()))
        .collect();
    labels.sort_unstable();
    for w in labels.windows(2) {
        if w[0] == w[1] {
            push(IssueKind::DuplicateLabel, format!("label `{}` used more than once", w[0]));
        }
    }

    for b in &bp.barriers {
        if b.wire > 1 {
            push(IssueKind::InvalidWire, format!("barrier `{}` on wire {}", b.label, b.wire));
        }
        if !(b.y_length > 0.0) {
            push(IssueKind::InvalidExtent, format!("barrier `{}` has non-positive length", b.label));
        }
    }
    for c in &bp.couplers {
        if adjacent_pair(c.pair[0], c.pair[1]).is_err() {
            push(
                IssueKind::NonAdjacent,
                format!("coupler `{}` joins non-adjacent qubits {} and {}", c.label, c.pair[0], c.pair[1]),
            );
        }
        if !(c.ramp_length > 0.0 && c.plateau_length >= 0.0 && c.plateau_separation > 0.0) {
            push(IssueKind::InvalidExtent, format!("coupler `{}` has invalid extents", c.label));
        }
        if c.plateau_separation >= bp.wire_pitch_far {
            push(
                IssueKind::SeparationTooLarge,
                format!(
                    "coupler `{}` plateau separation {} nm is not below the far pitch {} nm",
                    c.label, c.plateau_separation, bp.wire_pitch_far
                ),
            );
        }
        let (hi, lo) = c.ordered_pair();
        let stage = bp.rotation_stage_y;
        let ok = match (hi, lo) {
            (QubitIndex::Q2, QubitIndex::Q1) => c.y_end() <= stage,
            (QubitIndex::Q3, QubitIndex::Q2) => c.y_start >= stage && c.y_end() <= bp.measurement_y,
            _ => true,
        };
        if !ok {
            push(
                IssueKind::StageOrder,
                format!("coupler `{}` crosses the stage boundary or the detectors", c.label),
            );
        }
    }
    for s in &bp.splitters {
        let y = s.y_position;
        let misplaced = match s.qubit {
            QubitIndex::Q3 => y >= bp.measurement_y,
            QubitIndex::Q2 => y >= bp.measurement_y,
            QubitIndex::Q1 => false,
        };
        if misplaced {
            push(IssueKind::StageOrder, format!("splitter `{}` lies beyond the detectors", s.label));
        }
    }

    let intervals = element_intervals(bp);
    for (i, a) in intervals.iter().enumerate() {
        for b in &intervals[i + 1..] {
            if a.0 != b.0 || a.3 == b.3 {
                continue;
            }
            let overlap = if a.1 == a.2 && b.1 == b.2 {
                a.1 == b.1
            } else {
                a.1 < b.2 && b.1 < a.2 || (a.1 == a.2 && a.1 > b.1 && a.1 < b.2) || (b.1 == b.2 && b.1 > a.1 && b.1 < a.2)
            };
            if overlap {
                push(IssueKind::Overlap, format!("`{}` and `{}` overlap on qubit {}", a.3, b.3, a.0));
            }
        }
    }

    let mut min_approach = f64::INFINITY;
    let paths = bp.wire_paths();
    for (i, pa) in paths.iter().enumerate() {
        for pb in &paths[i + 1..] {
            if pa.qubit == pb.qubit {
                continue;
            }
            let ys = pa.breakpoints.iter().chain(&pb.breakpoints).map(|b| b.0);
            for y in ys {
                let d = (pa.lateral_offset(y) - pb.lateral_offset(y)).abs();
                min_approach = min_approach.min(d);
            }
        }
    }
    Diagnostics { issues, min_approach_distance: min_approach }
}
