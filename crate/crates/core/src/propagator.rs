//! Time evolution of [`ComponentWavefunction`]s.
//!
//! One step is a Strang split: potential half-step, Cayley-form Crank-Nicolson
//! kinetic step along each axis, potential half-step. The potential is taken
//! at the step midpoint. Each particle's grid window follows the nearest SAW
//! minimum by integer-cell shifts.

use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{GateMatrix, QubitIndex, UNITARY_TOL};
use crate::device::{barrier_potential, pair_distance, saw_potential, screened_coulomb, DeviceBlueprint, PhysicalParams};
use crate::grid::{ComponentWavefunction, Grid1D, GridError};
use crate::units::HBAR;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagatorError {
    #[error("zero pivot at row {0} of a tridiagonal solve")]
    ZeroPivot(usize),
    #[error("tridiagonal system has inconsistent lengths")]
    LengthMismatch,
    #[error("packet reached the window edge at t = {time:.1} fs (edge density {density:.3e})")]
    BoundaryOverflow { time: f64, density: f64 },
    #[error("gate matrix is not unitary (deviation {0:.3e})")]
    NonUnitary(f64),
    #[error("invalid numerics: {0}")]
    InvalidNumerics(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsParams {
    /// Grid spacing (nm).
    pub dy: f64,
    /// Time step (fs).
    pub dt: f64,
    /// Width of each particle's window (nm).
    pub window_width: f64,
    /// Minimum distance from the packet centre to the window edge, in packet widths.
    pub window_margin_sigma: f64,
    /// Time-step refinement factor used by convergence checks.
    pub convergence_refinement: f64,
    /// Edge-cell probability above which a run aborts.
    pub boundary_tolerance: f64,
}

impl Default for NumericsParams {
    fn default() -> Self {
        Self {
            dy: 1.0,
            dt: 0.01,
            window_width: 200.0,
            window_margin_sigma: 4.0,
            convergence_refinement: 2.0,
            boundary_tolerance: 1e-6,
        }
    }
}

impl NumericsParams {
    /// Settings used for desk-scale runs.
    pub fn desk() -> Self {
        Self { dy: 2.0, dt: 5.0, window_width: 160.0, ..Self::default() }
    }

    pub fn window_points(&self) -> usize {
        (self.window_width / self.dy).round() as usize
    }

    pub fn validate(&self, p: &PhysicalParams) -> Result<(), PropagatorError> {
        let bad = |m: String| Err(PropagatorError::InvalidNumerics(m));
        if !(self.dy > 0.0 && self.dy.is_finite()) {
            return bad(format!("dy must be positive, got {}", self.dy));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.convergence_refinement >= 1.0) {
            return bad(format!("convergence_refinement must be at least 1, got {}", self.convergence_refinement));
        }
        if !(self.boundary_tolerance > 0.0) {
            return bad("boundary_tolerance must be positive".into());
        }
        let need = 2.0 * self.window_margin_sigma * p.packet_sigma();
        if !(self.window_width >= need) {
            return bad(format!("window_width {} nm is below {need:.1} nm", self.window_width));
        }
        if self.window_points() < 8 {
            return bad("window holds fewer than 8 points".into());
        }
        Ok(())
    }

    /// Window grid of the configured width centred on `center`.
    pub fn window(&self, center: f64) -> Result<Grid1D, GridError> {
        Grid1D::centered(center, self.dy, self.window_points())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EvolutionReport {
    pub steps: u64,
    pub norm_drift: f64,
    pub max_boundary_density: f64,
    pub wall_time: f64,
    pub window_shifts: u64,
}

impl EvolutionReport {
    pub fn merge(&mut self, other: &EvolutionReport) {
        self.steps += other.steps;
        self.norm_drift += other.norm_drift;
        self.max_boundary_density = self.max_boundary_density.max(other.max_boundary_density);
        self.wall_time += other.wall_time;
        self.window_shifts += other.window_shifts;
    }
}

/// Solves a general complex tridiagonal system by the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (so `lower[0]` is unused) and
/// `upper[i]` multiplies `x[i+1]` (so `upper[n-1]` is unused).
pub fn tridiagonal_solve(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &[C64]) -> Result<Vec<C64>, PropagatorError> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(PropagatorError::LengthMismatch);
    }
    let mut cp = vec![C64::new(0.0, 0.0); n];
    let mut dp = vec![C64::new(0.0, 0.0); n];
    let mut den = diag[0];
    if den.norm() == 0.0 {
        return Err(PropagatorError::ZeroPivot(0));
    }
    cp[0] = upper[0] / den;
    dp[0] = rhs[0] / den;
    for i in 1..n {
        den = diag[i] - lower[i] * cp[i - 1];
        if den.norm() == 0.0 {
            return Err(PropagatorError::ZeroPivot(i));
        }
        cp[i] = upper[i] / den;
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        let next = dp[i + 1];
        dp[i] -= cp[i] * next;
    }
    Ok(dp)
}

/// Precomputed elimination factors for the constant-coefficient CN system.
#[derive(Debug, Clone)]
pub struct CnCoefficients {
    beta: f64,
    cp: Vec<C64>,
    inv_den: Vec<C64>,
}

impl CnCoefficients {
    /// Coefficients for `n` interior points and `beta = (hbar^2/2m) dt / (2 hbar dy^2)`.
    pub fn new(n: usize, dt: f64, dy: f64, mass_prefactor: f64) -> Self {
        let beta = mass_prefactor * dt / (2.0 * HBAR * dy * dy);
        let b = C64::new(1.0, 2.0 * beta);
        let off = C64::new(0.0, -beta);
        let mut cp = vec![C64::new(0.0, 0.0); n];
        let mut inv_den = vec![C64::new(0.0, 0.0); n];
        let mut prev = C64::new(0.0, 0.0);
        for i in 0..n {
            let den = b - off * prev;
            inv_den[i] = den.inv();
            cp[i] = off * inv_den[i];
            prev = cp[i];
        }
        Self { beta, cp, inv_den }
    }

    pub fn len(&self) -> usize {
        self.cp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cp.is_empty()
    }

    /// Applies the Cayley step along the middle axis of an `[outer][n][inner]` block.
    pub fn sweep(&self, data: &mut [C64], inner: usize, scratch: &mut Vec<C64>) {
        let n = self.len();
        let block = n * inner;
        debug_assert_eq!(data.len() % block, 0);
        let diag_rhs = C64::new(1.0, -2.0 * self.beta);
        let off_rhs = C64::new(0.0, self.beta);
        let off_lhs = C64::new(0.0, -self.beta);
        scratch.resize(block, C64::new(0.0, 0.0));
        for chunk in data.chunks_exact_mut(block) {
            for i in 0..n {
                let (row, before) = (i * inner, i.checked_sub(1).map(|k| k * inner));
                let after = (i + 1 < n).then(|| (i + 1) * inner);
                for j in 0..inner {
                    let mut r = diag_rhs * chunk[row + j];
                    let mut nb = C64::new(0.0, 0.0);
                    if let Some(b) = before {
                        nb += chunk[b + j];
                    }
                    if let Some(a) = after {
                        nb += chunk[a + j];
                    }
                    r += off_rhs * nb;
                    if let Some(b) = before {
                        r -= off_lhs * scratch[b + j];
                    }
                    scratch[row + j] = r * self.inv_den[i];
                }
            }
            let last = (n - 1) * inner;
            chunk[last..last + inner].copy_from_slice(&scratch[last..last + inner]);
            for i in (0..n - 1).rev() {
                let c = self.cp[i];
                for j in 0..inner {
                    chunk[i * inner + j] = scratch[i * inner + j] - c * chunk[(i + 1) * inner + j];
                }
            }
        }
    }
}

/// One Crank-Nicolson kinetic step `(1 + i H dt/2hbar)^-1 (1 - i H dt/2hbar)` on a
/// hard-walled line.
pub fn cn_kinetic_step(line: &[C64], dt: f64, dy: f64, mass_prefactor: f64) -> Vec<C64> {
    let coef = CnCoefficients::new(line.len(), dt, dy, mass_prefactor);
    let mut out = line.to_vec();
    coef.sweep(&mut out, 1, &mut Vec::new());
    out
}

/// Mixes the two wire components of qubit `q` by `u` at every grid point.
pub fn apply_gate_matrix(state: &mut ComponentWavefunction, q: QubitIndex, u: &GateMatrix) -> Result<(), PropagatorError> {
    let dev = u.unitarity_deviation();
    if dev > UNITARY_TOL {
        return Err(PropagatorError::NonUnitary(dev));
    }
    let k = state.particle_of(q)?;
    let mask = 1 << (state.particle_count() - 1 - k);
    let m = u.0;
    for c0 in (0..state.components.len()).filter(|c| c & mask == 0) {
        let c1 = c0 | mask;
        let (lo, hi) = state.components.split_at_mut(c1);
        let (a, b) = (&mut lo[c0], &mut hi[0]);
        for (x0, x1) in a.iter_mut().zip(b.iter_mut()) {
            let (v0, v1) = (*x0, *x1);
            *x0 = m[0][0] * v0 + m[0][1] * v1;
            *x1 = m[1][0] * v0 + m[1][1] * v1;
        }
    }
    Ok(())
}

/// Potential terms switched on during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialSwitches {
    pub saw: bool,
    pub barriers: bool,
    pub coulomb: bool,
    /// Uniform field term `F y` (eV/nm) applied to every particle.
    pub linear_field: f64,
}

impl Default for PotentialSwitches {
    fn default() -> Self {
        Self { saw: true, barriers: true, coulomb: true, linear_field: 0.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Propagator<'a> {
    pub blueprint: &'a DeviceBlueprint,
    pub physical: &'a PhysicalParams,
    pub numerics: &'a NumericsParams,
    pub switches: PotentialSwitches,
    pub track_window: bool,
    /// Sweep the last axis first.
    pub reverse_sweeps: bool,
}

struct PairFactor {
    a: usize,
    b: usize,
    /// One `[n_a * n_b]` table per wire combination `2 * w_a + w_b`; `None` when
    /// the pair cannot interact anywhere on the current windows.
    tables: Option<[Vec<C64>; 4]>,
}

impl<'a> Propagator<'a> {
    pub fn new(blueprint: &'a DeviceBlueprint, physical: &'a PhysicalParams, numerics: &'a NumericsParams) -> Self {
        Self {
            blueprint,
            physical,
            numerics,
            switches: PotentialSwitches::default(),
            track_window: true,
            reverse_sweeps: false,
        }
    }

    /// Evolves `state` from its current time to `t1`.
    pub fn run_until(&self, state: &mut ComponentWavefunction, t1: f64) -> Result<EvolutionReport, PropagatorError> {
        let span = t1 - state.time;
        if span <= 0.0 {
            return Ok(EvolutionReport::default());
        }
        let steps = (span / self.numerics.dt - 1e-9).ceil().max(1.0) as u64;
        self.run_steps(state, span / steps as f64, steps)
    }

    /// Takes `steps` steps of signed size `dt`.
    pub fn run_steps(&self, state: &mut ComponentWavefunction, dt: f64, steps: u64) -> Result<EvolutionReport, PropagatorError> {
        let start = Instant::now();
        let np = state.particle_count();
        let t0 = state.time;
        let norm_start = state.norm2();
        let mass = self.physical.kinetic_prefactor();
        let coefs: Vec<CnCoefficients> = state
            .grids
            .iter()
            .map(|g| CnCoefficients::new(g.count, dt, g.spacing, mass))
            .collect();
        let mut active: Vec<bool> = (0..state.components.len()).map(|c| !state.is_component_zero(c)).collect();
        let mut pairs = self.pair_factors(state, dt);
        let mut scratch = Vec::new();
        let mut report = EvolutionReport::default();
        let mut edge_max = 0.0f64;

        for step in 0..steps {
            let tm = t0 + (step as f64 + 0.5) * dt;
            let line_phases = self.line_phases(state, tm, dt);
            self.apply_potential(state, &line_phases, &pairs, &active);
            let axes: Vec<usize> = if self.reverse_sweeps { (0..np).rev().collect() } else { (0..np).collect() };
            for &k in &axes {
                let inner: usize = state.grids[k + 1..].iter().map(|g| g.count).product();
                let coef = &coefs[k];
                kinetic_all(&mut state.components, &active, coef, inner, &mut scratch);
            }
            self.apply_potential(state, &line_phases, &pairs, &active);
            state.time = t0 + (step as f64 + 1.0) * dt;

            let edge = edge_density(state, &active);
            edge_max = edge_max.max(edge);
            if edge > self.numerics.boundary_tolerance {
                return Err(PropagatorError::BoundaryOverflow { time: state.time, density: edge });
            }
            if self.track_window && self.switches.saw {
                let shifted = self.track(state);
                if shifted > 0 {
                    report.window_shifts += shifted;
                    pairs = self.pair_factors(state, dt);
                    for (c, a) in active.iter_mut().enumerate() {
                        *a = *a && !state.is_component_zero(c);
                    }
                }
            }
        }
        report.steps = steps;
        report.norm_drift = (state.norm2() - norm_start).abs();
        report.max_boundary_density = edge_max;
        report.wall_time = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// `exp(-i V dt / 2hbar)` per particle, wire and grid point for single-particle terms.
    fn line_phases(&self, state: &ComponentWavefunction, t: f64, dt: f64) -> Vec<[Vec<C64>; 2]> {
        let s = self.switches;
        let scale = -0.5 * dt / HBAR;
        state
            .qubits
            .iter()
            .zip(&state.grids)
            .map(|(&q, g)| {
                let base: Vec<f64> = g
                    .positions()
                    .map(|y| {
                        let mut v = s.linear_field * y;
                        if s.saw {
                            v += saw_potential(y, t, self.physical);
                        }
                        v
                    })
                    .collect();
                [0u8, 1].map(|w| {
                    base.iter()
                        .zip(g.positions())
                        .map(|(&v, y)| {
                            let vb = if s.barriers { barrier_potential(self.blueprint, self.physical, q, w, y) } else { 0.0 };
                            C64::from_polar(1.0, scale * (v + vb))
                        })
                        .collect()
                })
            })
            .collect()
    }

    fn pair_factors(&self, state: &ComponentWavefunction, dt: f64) -> Vec<PairFactor> {
        let mut out = Vec::new();
        if !self.switches.coulomb {
            return out;
        }
        let scale = -0.5 * dt / HBAR;
        for a in 0..state.particle_count() {
            for b in a + 1..state.particle_count() {
                let (qa, qb) = (state.qubits[a], state.qubits[b]);
                if qa.number() != qb.number() + 1 {
                    continue;
                }
                let (ga, gb) = (state.grids[a], state.grids[b]);
                let couplers: Vec<_> = self
                    .blueprint
                    .dynamic_couplers(qa, qb)
                    .filter(|c| ga.last() >= c.y_start && ga.origin <= c.y_end() && gb.last() >= c.y_start && gb.origin <= c.y_end())
                    .collect();
                if couplers.is_empty() {
                    out.push(PairFactor { a, b, tables: None });
                    continue;
                }
                let tables = [0usize, 1, 2, 3].map(|combo| {
                    let (wa, wb) = ((combo >> 1) as u8, (combo & 1) as u8);
                    let mut t = Vec::with_capacity(ga.count * gb.count);
                    for ya in ga.positions() {
                        for yb in gb.positions() {
                            let mut v = 0.0;
                            for c in &couplers {
                                if c.contains(ya) && c.contains(yb) {
                                    if let Ok(r) = pair_distance(self.blueprint, (qa, wa, ya), (qb, wb, yb)) {
                                        v += screened_coulomb(r, c.min_distance(), self.physical);
                                    }
                                }
                            }
                            t.push(C64::from_polar(1.0, scale * v));
                        }
                    }
                    t
                });
                out.push(PairFactor { a, b, tables: Some(tables) });
            }
        }
        out
    }

    fn apply_potential(&self, state: &mut ComponentWavefunction, lines: &[[Vec<C64>; 2]], pairs: &[PairFactor], active: &[bool]) {
        let np = state.particle_count();
        let dims: Vec<usize> = state.grids.iter().map(|g| g.count).collect();
        let bits: Vec<Vec<usize>> = (0..state.components.len())
            .map(|c| (0..np).map(|k| state.bit_of(c, k) as usize).collect())
            .collect();
        let work = |c: usize, comp: &mut Vec<C64>| {
            if !active[c] {
                return;
            }
            let w = &bits[c];
            let f: Vec<&[C64]> = (0..np).map(|k| lines[k][w[k]].as_slice()).collect();
            let tables: Vec<(usize, usize, &[C64])> = pairs
                .iter()
                .filter_map(|p| p.tables.as_ref().map(|t| (p.a, p.b, t[2 * w[p.a] + w[p.b]].as_slice())))
                .collect();
            match np {
                1 => comp.iter_mut().zip(f[0]).for_each(|(z, p)| *z *= p),
                2 => {
                    let n1 = dims[1];
                    for (i0, row) in comp.chunks_exact_mut(n1).enumerate() {
                        let p0 = f[0][i0];
                        for (i1, z) in row.iter_mut().enumerate() {
                            *z *= p0 * f[1][i1];
                        }
                        if let Some(&(_, _, t)) = tables.first() {
                            row.iter_mut().zip(&t[i0 * n1..(i0 + 1) * n1]).for_each(|(z, p)| *z *= p);
                        }
                    }
                }
                _ => {
                    let (n1, n2) = (dims[1], dims[2]);
                    for (i0, plane) in comp.chunks_exact_mut(n1 * n2).enumerate() {
                        for (i1, row) in plane.chunks_exact_mut(n2).enumerate() {
                            let mut p01 = f[0][i0] * f[1][i1];
                            for &(a, b, t) in &tables {
                                if (a, b) == (0, 1) {
                                    p01 *= t[i0 * n1 + i1];
                                }
                            }
                            for (i2, z) in row.iter_mut().enumerate() {
                                *z *= p01 * f[2][i2];
                            }
                            for &(a, b, t) in &tables {
                                match (a, b) {
                                    (1, 2) => row.iter_mut().zip(&t[i1 * n2..(i1 + 1) * n2]).for_each(|(z, p)| *z *= p),
                                    (0, 2) => row.iter_mut().zip(&t[i0 * n2..(i0 + 1) * n2]).for_each(|(z, p)| *z *= p),
                                    _ => {}
                                }
                            }
                        }
                    }
                }
            }
        };
        for_each_component(&mut state.components, work);
    }

    /// Shifts each window to centre on the nearest SAW minimum; returns the number of shifts.
    fn track(&self, state: &mut ComponentWavefunction) -> u64 {
        let mut shifts = 0;
        for k in 0..state.particle_count() {
            let g = state.grids[k];
            let target = self.physical.saw_minimum_near(g.center(), state.time);
            let cells = ((target - g.center()) / g.spacing).round() as i64;
            if cells != 0 {
                shift_axis(state, k, cells);
                shifts += 1;
            }
        }
        shifts
    }
}

/// Moves the window of particle `k` by `cells` grid points (positive: towards +y).
pub fn shift_axis(state: &mut ComponentWavefunction, k: usize, cells: i64) {
    let dims: Vec<usize> = state.grids.iter().map(|g| g.count).collect();
    let n = dims[k];
    let inner: usize = dims[k + 1..].iter().product();
    let block = n * inner;
    let s = cells.unsigned_abs() as usize;
    for comp in &mut state.components {
        for chunk in comp.chunks_exact_mut(block) {
            if s >= n {
                chunk.fill(C64::new(0.0, 0.0));
            } else if cells > 0 {
                chunk.copy_within(s * inner.., 0);
                chunk[(n - s) * inner..].fill(C64::new(0.0, 0.0));
            } else {
                chunk.copy_within(..(n - s) * inner, s * inner);
                chunk[..s * inner].fill(C64::new(0.0, 0.0));
            }
        }
    }
    state.grids[k].origin += cells as f64 * state.grids[k].spacing;
}

/// Largest probability held in an outermost grid slab of any particle.
fn edge_density(state: &ComponentWavefunction, active: &[bool]) -> f64 {
    let dims: Vec<usize> = state.grids.iter().map(|g| g.count).collect();
    let vol = state.cell_volume();
    let mut worst = 0.0f64;
    for k in 0..dims.len() {
        let n = dims[k];
        let inner: usize = dims[k + 1..].iter().product();
        let (mut lo, mut hi) = (0.0, 0.0);
        for (c, comp) in state.components.iter().enumerate() {
            if !active[c] {
                continue;
            }
            for chunk in comp.chunks_exact(n * inner) {
                lo += chunk[..inner].iter().map(|z| z.norm_sqr()).sum::<f64>();
                hi += chunk[(n - 1) * inner..].iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
        worst = worst.max(lo * vol).max(hi * vol);
    }
    worst
}

#[cfg(feature = "parallel")]
fn for_each_component<F>(components: &mut [Vec<C64>], f: F)
where
    F: Fn(usize, &mut Vec<C64>) + Sync + Send,
{
    use rayon::prelude::*;
    components.par_iter_mut().enumerate().for_each(|(c, comp)| f(c, comp));
}

#[cfg(not(feature = "parallel"))]
fn for_each_component<F>(components: &mut [Vec<C64>], f: F)
where
    F: Fn(usize, &mut Vec<C64>),
{
    components.iter_mut().enumerate().for_each(|(c, comp)| f(c, comp));
}

fn kinetic_all(components: &mut [Vec<C64>], active: &[bool], coef: &CnCoefficients, inner: usize, scratch: &mut Vec<C64>) {
    #[cfg(feature = "parallel")]
    {
        let _ = scratch;
        use rayon::prelude::*;
        components.par_iter_mut().enumerate().for_each_init(Vec::new, |buf, (c, comp)| {
            if active[c] {
                coef.sweep(comp, inner, buf);
            }
        });
    }
    #[cfg(not(feature = "parallel"))]
    for (c, comp) in components.iter_mut().enumerate() {
        if active[c] {
            coef.sweep(comp, inner, scratch);
        }
    }
}

/// Evolves `state` from `t0` to `t1` with all blueprint potentials switched on.
pub fn evolve(
    mut state: ComponentWavefunction,
    bp: &DeviceBlueprint,
    p: &PhysicalParams,
    n: &NumericsParams,
    t0: f64,
    t1: f64,
) -> Result<(ComponentWavefunction, EvolutionReport), PropagatorError> {
    if !(t1 > t0) {
        return Err(PropagatorError::InvalidNumerics(format!("t1 = {t1} must exceed t0 = {t0}")));
    }
    state.time = t0;
    let report = Propagator::new(bp, p, n).run_until(&mut state, t1)?;
    Ok((state, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub dt: f64,
    pub dt_refined: f64,
    /// `1 - |<psi_dt | psi_dt/f>|`.
    pub deviation: f64,
}

/// Repeats a run with the time step divided by `factor` and compares the end states.
pub fn convergence_check(
    prop: &Propagator<'_>,
    initial: &ComponentWavefunction,
    t1: f64,
    factor: f64,
) -> Result<ConvergenceReport, PropagatorError> {
    let mut coarse = initial.clone();
    prop.run_until(&mut coarse, t1)?;
    let refined_numerics = NumericsParams { dt: prop.numerics.dt / factor, ..*prop.numerics };
    let refined = Propagator { numerics: &refined_numerics, ..prop.clone() };
    let mut fine = initial.clone();
    refined.run_until(&mut fine, t1)?;
    let ov = coarse.overlap(&fine)?;
    let norms = (coarse.norm2() * fine.norm2()).sqrt();
    Ok(ConvergenceReport {
        dt: prop.numerics.dt,
        dt_refined: refined_numerics.dt,
        deviation: (1.0 - ov.norm() / norms).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{rx, SingleQubitState};
    use crate::device::GateMode;
    use crate::grid::{displaced_packet, ground_state_packet, tensor_product};
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use QubitIndex::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn tridiagonal_two_by_two() {
        let x = tridiagonal_solve(&[c(0.0, 0.0), c(1.0, 0.0)], &[c(2.0, 0.0), c(3.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)], &[c(5.0, 0.0), c(10.0, 0.0)]).unwrap();
        // 2a + b = 5, a + 3b = 10
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((x[1] - c(3.0, 0.0)).norm() < 1e-14);
        assert_eq!(
            tridiagonal_solve(&[c(0.0, 0.0)], &[c(0.0, 0.0)], &[c(0.0, 0.0)], &[c(1.0, 0.0)]),
            Err(PropagatorError::ZeroPivot(0))
        );
    }

    fn dense_solve(a: &mut [Vec<C64>], b: &mut [C64]) -> Vec<C64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for k in col..n {
                    let v = a[col][k];
                    a[r][k] -= f * v;
                }
                let v = b[col];
                b[r] -= f * v;
            }
        }
        let mut x = vec![c(0.0, 0.0); n];
        for r in (0..n).rev() {
            let mut s = b[r];
            for k in r + 1..n {
                s -= a[r][k] * x[k];
            }
            x[r] = s / a[r][r];
        }
        x
    }

    proptest! {
        #[test]
        fn prop_tridiagonal_matches_dense(vals in prop::collection::vec(-1.0f64..1.0, 64 * 6)) {
            let n = 64;
            let lower: Vec<C64> = (0..n).map(|i| if i == 0 { c(0.0, 0.0) } else { c(vals[i], vals[n + i]) }).collect();
            let upper: Vec<C64> = (0..n).map(|i| if i == n - 1 { c(0.0, 0.0) } else { c(vals[2 * n + i], vals[3 * n + i]) }).collect();
            let diag: Vec<C64> = (0..n).map(|i| c(3.0 + vals[4 * n + i], vals[5 * n + i])).collect();
            let rhs: Vec<C64> = (0..n).map(|i| c(vals[(i * 7) % (6 * n)], vals[(i * 13) % (6 * n)])).collect();
            let x = tridiagonal_solve(&lower, &diag, &upper, &rhs).unwrap();
            let mut a = vec![vec![c(0.0, 0.0); n]; n];
            for i in 0..n {
                a[i][i] = diag[i];
                if i > 0 { a[i][i - 1] = lower[i]; }
                if i + 1 < n { a[i][i + 1] = upper[i]; }
            }
            let mut b = rhs.clone();
            let xd = dense_solve(&mut a, &mut b);
            let err = x.iter().zip(&xd).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn cn_inverse_times_forward_is_identity() {
        let n = 64;
        let (dt, dy, m) = (3.0, 1.0, 0.5687);
        let beta = m * dt / (2.0 * HBAR * dy * dy);
        let psi: Vec<C64> = (0..n).map(|k| c((k as f64 * 0.3).sin(), (k as f64 * 0.17).cos())).collect();
        let out = cn_kinetic_step(&psi, dt, dy, m);
        // (1 + i beta L) out == (1 - i beta L) psi, with L = tridiag(-1, 2, -1)
        for i in 0..n {
            let nb = |v: &[C64]| {
                let mut s = c(0.0, 0.0);
                if i > 0 { s += v[i - 1]; }
                if i + 1 < n { s += v[i + 1]; }
                s
            };
            let lhs = out[i] * c(1.0, 2.0 * beta) - c(0.0, beta) * nb(&out);
            let rhs = psi[i] * c(1.0, -2.0 * beta) + c(0.0, beta) * nb(&psi);
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn cayley_phase_matches_closed_form_for_every_mode() {
        let n = 64;
        let (dt, dy, m) = (2.0, 1.0, 0.5687);
        for mode in 1..=n {
            let k = mode as f64 * PI / ((n + 1) as f64 * dy);
            let line: Vec<C64> = (0..n).map(|j| c((k * (j + 1) as f64 * dy).sin(), 0.0)).collect();
            let out = cn_kinetic_step(&line, dt, dy, m);
            let e = m * (2.0 - 2.0 * (k * dy).cos()) / (dy * dy);
            let phase = -2.0 * (e * dt / (2.0 * HBAR)).atan();
            let expect = C64::from_polar(1.0, phase);
            let err = line.iter().zip(&out).map(|(a, b)| (a * expect - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "mode {mode}: {err}");
        }
    }

    #[test]
    fn constant_line_interior_is_stationary_for_short_times() {
        let n = 200;
        let (dt, dy, m) = (1e-3, 1.0, 0.5687);
        let mut line = vec![c(1.0, 0.0); n];
        for _ in 0..10 {
            line = cn_kinetic_step(&line, dt, dy, m);
        }
        for z in &line[40..160] {
            assert!((z - c(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn kinetic_norm_drift_over_ten_thousand_steps() {
        let g = Grid1D::centered(0.0, 1.0, 128).unwrap();
        let f = displaced_packet(&g, 0.0, 8.0, 0.2).unwrap();
        let coef = CnCoefficients::new(128, 1.0, 1.0, 0.5687);
        let mut line = f.clone();
        let norm = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let n0 = norm(&line);
        let mut s = Vec::new();
        for _ in 0..10_000 {
            coef.sweep(&mut line, 1, &mut s);
        }
        assert!((norm(&line) - n0).abs() < 1e-10);
    }

    #[test]
    fn gate_matrix_splits_packet() {
        let p = PhysicalParams::default();
        let g = Grid1D::centered(0.0, 1.0, 120).unwrap();
        let f = ground_state_packet(&g, 0.0, &p).unwrap();
        let mut s = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::one(), 0.0);
        let orig = s.clone();
        apply_gate_matrix(&mut s, Q1, &GateMatrix::identity()).unwrap();
        assert_eq!(s, orig);
        apply_gate_matrix(&mut s, Q1, &rx(PI / 2.0)).unwrap();
        assert!((s.component_norm2(0) - 0.5).abs() < 1e-12);
        assert!((s.component_norm2(1) - 0.5).abs() < 1e-12);
        let bad = GateMatrix([[c(1.0, 0.0), c(1.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]);
        assert!(matches!(apply_gate_matrix(&mut s, Q1, &bad), Err(PropagatorError::NonUnitary(_))));
    }

    proptest! {
        #[test]
        fn prop_gate_matrix_preserves_norm(a in 0.0f64..6.3, b in 0.0f64..6.3, d in 0.0f64..6.3, th in 0.0f64..3.2) {
            let p = PhysicalParams::default();
            let g = Grid1D::centered(0.0, 2.0, 60).unwrap();
            let f = ground_state_packet(&g, 0.0, &p).unwrap();
            let s2 = ComponentWavefunction::single(Q2, g, &f, SingleQubitState { a0: c(0.6, 0.0), a1: c(0.0, 0.8) }, 0.0);
            let s1 = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::one(), 0.0);
            let mut s = tensor_product(&s2, &s1).unwrap();
            let u = GateMatrix([
                [C64::from_polar(th.cos(), a), C64::from_polar(th.sin(), b)],
                [-C64::from_polar(th.sin(), d - b), C64::from_polar(th.cos(), d - a)],
            ]);
            apply_gate_matrix(&mut s, Q2, &u).unwrap();
            apply_gate_matrix(&mut s, Q1, &u).unwrap();
            prop_assert!((s.norm2() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn free_packet_spreads_like_the_analytic_gaussian() {
        let bp = DeviceBlueprint::default();
        let p = PhysicalParams::default();
        let n = NumericsParams { dy: 0.25, dt: 0.5, window_width: 300.0, ..NumericsParams::default() };
        let g = n.window(0.0).unwrap();
        let (sigma0, k0) = (6.0, 0.05);
        let f = displaced_packet(&g, 0.0, sigma0, k0).unwrap();
        let mut s = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::zero(), 0.0);
        let mut prop = Propagator::new(&bp, &p, &n);
        prop.switches = PotentialSwitches { saw: false, barriers: false, coulomb: false, linear_field: 0.0 };
        prop.track_window = false;
        let t = 200.0;
        let rep = prop.run_until(&mut s, t).unwrap();
        assert!(rep.norm_drift < 1e-12);
        // free Gaussian: sigma(t)^2 = sigma0^2 (1 + (hbar t / (2 m sigma0^2))^2), x(t) = hbar k0 t / m
        let hbar_over_m = 2.0 * p.kinetic_prefactor() / HBAR;
        let tau = hbar_over_m * t / (2.0 * sigma0 * sigma0);
        let sigma_t = sigma0 * (1.0 + tau * tau).sqrt();
        let x_t = hbar_over_m * k0 * t;
        let exact = displaced_packet(&g, x_t, sigma_t, k0).unwrap();
        // compare densities
        let err = s.components[0].iter().zip(&exact).map(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs()).fold(0.0, f64::max);
        let peak = exact.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        assert!(err / peak < 1e-3, "{}", err / peak);
        assert!((s.mean_position(0) - x_t).abs() < 1e-2, "{} {x_t}", s.mean_position(0));
    }

    fn trapped(center: f64, n: &NumericsParams) -> ComponentWavefunction {
        let p = PhysicalParams::default();
        let g = n.window(center).unwrap();
        let f = ground_state_packet(&g, center, &p).unwrap();
        ComponentWavefunction::single(Q1, g, &f, SingleQubitState::one(), 0.0)
    }

    #[test]
    fn trapped_packet_tracks_the_wave() {
        let bp = DeviceBlueprint { barriers: vec![], couplers: vec![], ..DeviceBlueprint::default() };
        let p = PhysicalParams::default();
        let n = NumericsParams::desk();
        let y0 = p.saw_minimum_near(0.0, 0.0);
        let mut s = trapped(y0, &n);
        let prop = Propagator::new(&bp, &p, &n);
        let period = p.saw_period();
        let mut worst: f64 = 0.0;
        for k in 1..=20 {
            let r = prop.run_until(&mut s, period * k as f64 / 20.0).unwrap();
            assert!(r.max_boundary_density < 1e-8);
            let expect = y0 + p.sound_speed * s.time;
            worst = worst.max((s.mean_position(0) - expect).abs());
        }
        assert!(worst < 0.5, "{worst}");
        assert!((s.position_std(0) / p.packet_sigma() - 1.0).abs() < 0.05);
        // the harmonic packet carries a small untrapped part that leaves the window
        assert!((s.norm2() - 1.0).abs() < 1e-7, "{}", s.norm2());
    }

    #[test]
    fn separable_two_particle_run_equals_product_of_single_runs() {
        let mut bp = DeviceBlueprint::default();
        bp.set_coupler_mode(GateMode::Matrix, PI);
        let p = PhysicalParams::default();
        let n = NumericsParams { dt: 10.0, ..NumericsParams::desk() };
        let y0 = p.saw_minimum_near(0.0, 0.0);
        let mut a = trapped(y0, &n);
        a.qubits = vec![Q2];
        apply_gate_matrix(&mut a, Q2, &rx(PI / 2.0)).unwrap();
        let mut b = trapped(y0, &n);
        apply_gate_matrix(&mut b, Q1, &rx(PI / 3.0)).unwrap();
        let mut ab = tensor_product(&a, &b).unwrap();
        let prop = Propagator::new(&bp, &p, &n);
        let t1 = 3000.0;
        prop.run_until(&mut a, t1).unwrap();
        prop.run_until(&mut b, t1).unwrap();
        prop.run_until(&mut ab, t1).unwrap();
        let prod = tensor_product(&a, &b).unwrap();
        let mut diff = ab.clone();
        diff.add_scaled(c(-1.0, 0.0), &prod).unwrap();
        assert!(diff.norm2().sqrt() < 1e-10);
    }

    #[test]
    fn strang_step_is_time_reversible() {
        let bp = DeviceBlueprint::default();
        let p = PhysicalParams::default();
        let n = NumericsParams::desk();
        let y0 = p.saw_minimum_near(0.0, 0.0);
        let s0 = trapped(y0, &n);
        let mut s = s0.clone();
        let mut prop = Propagator::new(&bp, &p, &n);
        prop.track_window = false;
        prop.run_steps(&mut s, 5.0, 400).unwrap();
        prop.run_steps(&mut s, -5.0, 400).unwrap();
        let mut diff = s.clone();
        diff.add_scaled(c(-1.0, 0.0), &s0).unwrap();
        assert!(diff.norm2().sqrt() < 1e-8);
    }

    #[test]
    fn boundary_overflow_aborts() {
        let bp = DeviceBlueprint::default();
        let p = PhysicalParams::default();
        let n = NumericsParams::desk();
        let g = n.window(0.0).unwrap();
        let f = displaced_packet(&g, 40.0, 8.0, 0.0).unwrap();
        let mut s = ComponentWavefunction::single(Q1, g, &f, SingleQubitState::one(), 0.0);
        let mut prop = Propagator::new(&bp, &p, &n);
        prop.switches.saw = false;
        let err = prop.run_until(&mut s, 50_000.0).unwrap_err();
        assert!(matches!(err, PropagatorError::BoundaryOverflow { .. }));
    }

    #[test]
    fn convergence_deviation_scales_quadratically() {
        let bp = DeviceBlueprint { barriers: vec![], couplers: vec![], ..DeviceBlueprint::default() };
        let p = PhysicalParams::default();
        let y0 = p.saw_minimum_near(0.0, 0.0);
        let mut devs = Vec::new();
        for dt in [10.0, 5.0, 2.5] {
            let n = NumericsParams { dt, ..NumericsParams::desk() };
            let s = trapped(y0, &n);
            let mut prop = Propagator::new(&bp, &p, &n);
            prop.switches.linear_field = 5e-5;
            prop.track_window = false;
            devs.push(convergence_check(&prop, &s, 2000.0, 2.0).unwrap().deviation);
            if dt == 2.5 {
                assert_eq!(convergence_check(&prop, &s, 2000.0, 1.0).unwrap().deviation, 0.0);
            }
        }
        // 1 - |overlap| is quadratic in the state error, hence ~dt^4
        let slope = (devs[0] / devs[2]).ln() / 4f64.ln();
        assert!(slope > 3.0 && slope < 5.0, "{devs:?} slope {slope}");
    }
}
