//! Multi-component wavefunctions on uniform y-grids.
//!
//! A state of `N` particles (one per qubit, qubits stored in descending order)
//! holds `2^N` wire components. Component `c` has the wire bit of the first
//! stored qubit as its most significant bit, matching the three-qubit ket
//! ordering of [`crate::algebra`]. Each component is a row-major field over the
//! per-particle grids, first particle slowest.

use std::io::{self, Write};

use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{QubitIndex, SingleQubitState};
use crate::device::PhysicalParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid spacing must be positive and count at least 8 (spacing {spacing}, count {count})")]
    InvalidGrid { spacing: f64, count: usize },
    #[error("packet centre {center} nm is closer than 4 sigma ({sigma:.3} nm) to the grid edge [{lo}, {hi}]")]
    PacketTooCloseToBoundary { center: f64, sigma: f64, lo: f64, hi: f64 },
    #[error("grids or component sets of the two states differ")]
    GridMismatch,
    #[error("product of {0} particles exceeds the three-particle limit")]
    TooManyParticles(usize),
    #[error("the two factors share qubit {0}")]
    SharedQubit(QubitIndex),
    #[error("operation needs a {expected}-particle state, got {actual}")]
    ParticleCount { expected: usize, actual: usize },
    #[error("singular value decomposition did not converge")]
    SvdFailed,
    #[error("qubit {0} is not carried by this state")]
    MissingQubit(QubitIndex),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub origin: f64,
    pub spacing: f64,
    pub count: usize,
}

impl Grid1D {
    pub fn new(origin: f64, spacing: f64, count: usize) -> Result<Self, GridError> {
        if !(spacing > 0.0 && spacing.is_finite()) || count < 8 || !origin.is_finite() {
            return Err(GridError::InvalidGrid { spacing, count });
        }
        Ok(Self { origin, spacing, count })
    }

    /// Grid of `count` points centred on `center`.
    pub fn centered(center: f64, spacing: f64, count: usize) -> Result<Self, GridError> {
        Self::new(center - 0.5 * (count as f64 - 1.0) * spacing, spacing, count)
    }

    pub fn position(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.spacing
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.position(k))
    }

    pub fn last(&self) -> f64 {
        self.position(self.count - 1)
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.origin + self.last())
    }

    /// Index of the grid point nearest `y`, if `y` lies within half a cell of the grid.
    pub fn nearest_index(&self, y: f64) -> Option<usize> {
        let k = ((y - self.origin) / self.spacing).round();
        (k >= 0.0 && k < self.count as f64).then_some(k as usize)
    }

    pub fn same_as(&self, other: &Grid1D) -> bool {
        self.count == other.count
            && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing
            && (self.origin - other.origin).abs() <= 1e-9 * self.spacing
    }
}

/// Harmonic ground state of the SAW minimum at `minimum_position`, carrying
/// the co-moving wavenumber so that it rides the wave without sloshing.
pub fn ground_state_packet(grid: &Grid1D, minimum_position: f64, p: &PhysicalParams) -> Result<Vec<C64>, GridError> {
    let sigma = p.packet_sigma();
    let (lo, hi) = (grid.origin, grid.last());
    if minimum_position - 4.0 * sigma < lo || minimum_position + 4.0 * sigma > hi {
        return Err(GridError::PacketTooCloseToBoundary { center: minimum_position, sigma, lo, hi });
    }
    let k0 = p.comoving_wavenumber();
    displaced_packet(grid, minimum_position, sigma, k0)
}

/// Normalized Gaussian with density standard deviation `sigma` and wavenumber `k0`.
pub fn displaced_packet(grid: &Grid1D, center: f64, sigma: f64, k0: f64) -> Result<Vec<C64>, GridError> {
    let mut field: Vec<C64> = grid
        .positions()
        .map(|y| {
            let u = y - center;
            C64::from_polar((-u * u / (4.0 * sigma * sigma)).exp(), k0 * u)
        })
        .collect();
    let n2: f64 = field.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.spacing;
    let s = 1.0 / n2.sqrt();
    field.iter_mut().for_each(|z| *z *= s);
    Ok(field)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentWavefunction {
    pub qubits: Vec<QubitIndex>,
    pub grids: Vec<Grid1D>,
    pub components: Vec<Vec<C64>>,
    pub time: f64,
}

impl ComponentWavefunction {
    pub fn zeros(qubits: Vec<QubitIndex>, grids: Vec<Grid1D>, time: f64) -> Self {
        assert_eq!(qubits.len(), grids.len());
        assert!(!qubits.is_empty() && qubits.len() <= 3);
        assert!(qubits.windows(2).all(|w| w[0] > w[1]), "qubits must be stored in descending order");
        let points = grids.iter().map(|g| g.count).product();
        let components = vec![vec![C64::new(0.0, 0.0); points]; 1 << qubits.len()];
        Self { qubits, grids, components, time }
    }

    /// One particle on `qubit` with spatial factor `field` and wire amplitudes `amps`.
    pub fn single(qubit: QubitIndex, grid: Grid1D, field: &[C64], amps: SingleQubitState, time: f64) -> Self {
        assert_eq!(field.len(), grid.count);
        let components = vec![
            field.iter().map(|z| z * amps.a0).collect(),
            field.iter().map(|z| z * amps.a1).collect(),
        ];
        Self { qubits: vec![qubit], grids: vec![grid], components, time }
    }

    pub fn particle_count(&self) -> usize {
        self.qubits.len()
    }

    pub fn points(&self) -> usize {
        self.components[0].len()
    }

    pub fn cell_volume(&self) -> f64 {
        self.grids.iter().map(|g| g.spacing).product()
    }

    pub fn particle_of(&self, q: QubitIndex) -> Result<usize, GridError> {
        self.qubits.iter().position(|&x| x == q).ok_or(GridError::MissingQubit(q))
    }

    /// Wire bit of particle `particle` inside component index `c`.
    pub fn bit_of(&self, c: usize, particle: usize) -> u8 {
        ((c >> (self.particle_count() - 1 - particle)) & 1) as u8
    }

    /// Component label listing the wire bits in stored qubit order, e.g. `"011"`.
    pub fn component_label(&self, c: usize) -> String {
        (0..self.particle_count()).map(|k| char::from(b'0' + self.bit_of(c, k))).collect()
    }

    pub fn component_norm2(&self, c: usize) -> f64 {
        self.components[c].iter().map(|z| z.norm_sqr()).sum::<f64>() * self.cell_volume()
    }

    pub fn is_component_zero(&self, c: usize) -> bool {
        self.components[c].iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn norm2(&self) -> f64 {
        (0..self.components.len()).map(|c| self.component_norm2(c)).sum()
    }

    pub fn scale(&mut self, s: C64) {
        for comp in &mut self.components {
            comp.iter_mut().for_each(|z| *z *= s);
        }
    }

    pub fn normalize(&mut self) {
        let n = self.norm2();
        if n > 0.0 {
            self.scale(C64::new(1.0 / n.sqrt(), 0.0));
        }
    }

    pub fn compatible(&self, other: &Self) -> bool {
        self.qubits == other.qubits && self.grids.iter().zip(&other.grids).all(|(a, b)| a.same_as(b))
    }

    pub fn overlap(&self, other: &Self) -> Result<C64, GridError> {
        if !self.compatible(other) {
            return Err(GridError::GridMismatch);
        }
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in self.components.iter().zip(&other.components) {
            acc += a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>();
        }
        Ok(acc * self.cell_volume())
    }

    /// `self += s * other` on matching grids.
    pub fn add_scaled(&mut self, s: C64, other: &Self) -> Result<(), GridError> {
        if !self.compatible(other) {
            return Err(GridError::GridMismatch);
        }
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
        Ok(())
    }

    /// Marginal position density of one particle, summed over wires and the
    /// other particles, as probability per grid cell.
    pub fn marginal_density(&self, particle: usize) -> Vec<f64> {
        let dims: Vec<usize> = self.grids.iter().map(|g| g.count).collect();
        let inner: usize = dims[particle + 1..].iter().product();
        let n = dims[particle];
        let mut out = vec![0.0; n];
        for comp in &self.components {
            for (idx, z) in comp.iter().enumerate() {
                out[(idx / inner) % n] += z.norm_sqr();
            }
        }
        let vol = self.cell_volume();
        out.iter_mut().for_each(|d| *d *= vol);
        out
    }

    /// Probability that `particle` sits in `[a, b)`.
    pub fn localization_probability(&self, particle: usize, interval: (f64, f64)) -> f64 {
        let g = &self.grids[particle];
        self.marginal_density(particle)
            .iter()
            .enumerate()
            .filter(|&(k, _)| {
                let y = g.position(k);
                y >= interval.0 && y < interval.1
            })
            .map(|(_, d)| d)
            .sum()
    }

    /// Density-weighted mean position of `particle`.
    pub fn mean_position(&self, particle: usize) -> f64 {
        let g = &self.grids[particle];
        let d = self.marginal_density(particle);
        let total: f64 = d.iter().sum();
        d.iter().enumerate().map(|(k, w)| w * g.position(k)).sum::<f64>() / total
    }

    pub fn position_std(&self, particle: usize) -> f64 {
        let g = &self.grids[particle];
        let d = self.marginal_density(particle);
        let total: f64 = d.iter().sum();
        let mean = self.mean_position(particle);
        (d.iter().enumerate().map(|(k, w)| w * (g.position(k) - mean).powi(2)).sum::<f64>() / total).sqrt()
    }

    /// Amplitude of component `c` at the grid point nearest each coordinate.
    pub fn value_at(&self, c: usize, ys: &[f64]) -> Option<C64> {
        let mut flat = 0;
        for (g, &y) in self.grids.iter().zip(ys) {
            flat = flat * g.count + g.nearest_index(y)?;
        }
        Some(self.components[c][flat])
    }

    /// Equal-position slice `Phi(y, y, ..)` sampled on the first particle's grid.
    pub fn diagonal_slice(&self) -> Vec<SnapshotRow> {
        let g = self.grids[0];
        let mut rows = Vec::new();
        for c in 0..self.components.len() {
            let label = self.component_label(c);
            for y in g.positions() {
                let ys = vec![y; self.particle_count()];
                if let Some(z) = self.value_at(c, &ys) {
                    rows.push(SnapshotRow { time: self.time, y, label: label.clone(), re: z.re, im: z.im });
                }
            }
        }
        rows
    }
}

pub fn tensor_product(a: &ComponentWavefunction, b: &ComponentWavefunction) -> Result<ComponentWavefunction, GridError> {
    let total = a.particle_count() + b.particle_count();
    if total > 3 {
        return Err(GridError::TooManyParticles(total));
    }
    if let Some(&q) = a.qubits.iter().find(|q| b.qubits.contains(q)) {
        return Err(GridError::SharedQubit(q));
    }
    if a.qubits[0] < b.qubits[0] {
        return tensor_product(b, a);
    }
    if a.qubits.last() < b.qubits.first() {
        // (Q3, Q1) x Q2
        return interleaved_product(a, b);
    }
    let mut qubits = a.qubits.clone();
    qubits.extend(&b.qubits);
    let mut grids = a.grids.clone();
    grids.extend(&b.grids);
    let nb = b.components.len();
    let mut components = Vec::with_capacity(a.components.len() * nb);
    for ca in &a.components {
        for cb in &b.components {
            let mut field = Vec::with_capacity(ca.len() * cb.len());
            for x in ca {
                field.extend(cb.iter().map(|y| x * y));
            }
            components.push(field);
        }
    }
    Ok(ComponentWavefunction { qubits, grids, components, time: a.time })
}

fn interleaved_product(a: &ComponentWavefunction, b: &ComponentWavefunction) -> Result<ComponentWavefunction, GridError> {
    let mut qubits: Vec<QubitIndex> = a.qubits.iter().chain(&b.qubits).copied().collect();
    qubits.sort_unstable_by(|x, y| y.cmp(x));
    let source = |q: QubitIndex| {
        if let Some(k) = a.qubits.iter().position(|&x| x == q) {
            (0usize, k)
        } else {
            (1usize, b.qubits.iter().position(|&x| x == q).unwrap())
        }
    };
    let map: Vec<(usize, usize)> = qubits.iter().map(|&q| source(q)).collect();
    let grids: Vec<Grid1D> = map.iter().map(|&(s, k)| if s == 0 { a.grids[k] } else { b.grids[k] }).collect();
    let mut out = ComponentWavefunction::zeros(qubits, grids.clone(), a.time);
    let dims: Vec<usize> = grids.iter().map(|g| g.count).collect();
    let da: Vec<usize> = a.grids.iter().map(|g| g.count).collect();
    let db: Vec<usize> = b.grids.iter().map(|g| g.count).collect();
    let n = dims.len();
    for c in 0..out.components.len() {
        let (mut ca, mut cb) = (0usize, 0usize);
        for (p, &(s, _)) in map.iter().enumerate() {
            let bit = (c >> (n - 1 - p)) & 1;
            if s == 0 {
                ca = ca * 2 + bit;
            } else {
                cb = cb * 2 + bit;
            }
        }
        let total: usize = dims.iter().product();
        for flat in 0..total {
            let mut rem = flat;
            let mut idx = vec![0usize; n];
            for p in (0..n).rev() {
                idx[p] = rem % dims[p];
                rem /= dims[p];
            }
            let (mut fa, mut fb) = (0usize, 0usize);
            for (p, &(s, k)) in map.iter().enumerate() {
                if s == 0 {
                    fa += idx[p] * da[k + 1..].iter().product::<usize>();
                } else {
                    fb += idx[p] * db[k + 1..].iter().product::<usize>();
                }
            }
            out.components[c][flat] = a.components[ca][fa] * b.components[cb][fb];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub coefficient: C64,
    /// Normalized one-particle factor for the first stored qubit.
    pub first: ComponentWavefunction,
    /// Normalized one-particle factor for the second stored qubit.
    pub second: ComponentWavefunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchDecomposition {
    pub branches: Vec<Branch>,
    /// All singular values, not just the retained ones.
    pub singular_values: Vec<f64>,
    /// Relative reconstruction error of the retained branches.
    pub truncation_error: f64,
}

impl BranchDecomposition {
    pub fn rank(&self) -> usize {
        self.branches.len()
    }

    pub fn reconstruct(&self) -> Result<ComponentWavefunction, GridError> {
        let first = &self.branches[0];
        let mut out = tensor_product(&first.first, &first.second)?;
        out.scale(first.coefficient);
        for b in &self.branches[1..] {
            let mut term = tensor_product(&b.first, &b.second)?;
            term.scale(b.coefficient);
            out.add_scaled(C64::new(1.0, 0.0), &term)?;
        }
        Ok(out)
    }
}

/// Schmidt decomposition across the (wire, y) coordinates of the two particles.
pub fn branch_decompose(state: &ComponentWavefunction, tolerance: f64) -> Result<BranchDecomposition, GridError> {
    if state.particle_count() != 2 {
        return Err(GridError::ParticleCount { expected: 2, actual: state.particle_count() });
    }
    let (g0, g1) = (state.grids[0], state.grids[1]);
    let (n0, n1) = (g0.count, g1.count);
    let w = (g0.spacing * g1.spacing).sqrt();
    let m = Mat::<C64>::from_fn(2 * n0, 2 * n1, |r, c| {
        let (b0, i0) = (r / n0, r % n0);
        let (b1, i1) = (c / n1, c % n1);
        state.components[2 * b0 + b1][i0 * n1 + i1] * w
    });
    let svd = m.thin_svd().map_err(|_| GridError::SvdFailed)?;
    let (u, v, sv) = (svd.U(), svd.V(), svd.S().column_vector());
    let mut order: Vec<usize> = (0..sv.nrows()).collect();
    order.sort_by(|&a, &b| sv[b].re.total_cmp(&sv[a].re));
    let singular_values: Vec<f64> = order.iter().map(|&k| sv[k].re).collect();
    let total: f64 = singular_values.iter().map(|s| s * s).sum();

    let mut rank = singular_values.len();
    let mut tail = 0.0;
    for r in (1..=singular_values.len()).rev() {
        let next = tail + singular_values[r - 1].powi(2);
        if total > 0.0 && (next / total).sqrt() >= tolerance {
            rank = r;
            break;
        }
        tail = next;
        rank = r - 1;
    }
    let rank = rank.max(1);
    let truncation_error = if total > 0.0 {
        (singular_values[rank..].iter().map(|s| s * s).sum::<f64>() / total).sqrt()
    } else {
        0.0
    };

    let s0 = 1.0 / g0.spacing.sqrt();
    let s1 = 1.0 / g1.spacing.sqrt();
    let branches = order[..rank]
        .iter()
        .map(|&k| {
            let first = ComponentWavefunction {
                qubits: vec![state.qubits[0]],
                grids: vec![g0],
                components: (0..2).map(|b| (0..n0).map(|i| u[(b * n0 + i, k)] * s0).collect()).collect(),
                time: state.time,
            };
            let second = ComponentWavefunction {
                qubits: vec![state.qubits[1]],
                grids: vec![g1],
                components: (0..2).map(|b| (0..n1).map(|i| v[(b * n1 + i, k)].conj() * s1).collect()).collect(),
                time: state.time,
            };
            Branch { coefficient: C64::new(sv[k].re, 0.0), first, second }
        })
        .collect();
    Ok(BranchDecomposition { branches, singular_values, truncation_error })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SnapshotRow {
    pub time: f64,
    pub y: f64,
    pub label: String,
    pub re: f64,
    pub im: f64,
}

impl SnapshotRow {
    pub fn abs2(&self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

pub fn write_snapshot_csv<W: Write>(mut w: W, rows: &[SnapshotRow]) -> io::Result<()> {
    writeln!(w, "t,y,component_label,re,im,abs2")?;
    for r in rows {
        writeln!(w, "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e}", r.time, r.y, r.label, r.re, r.im, r.abs2())?;
    }
    Ok(())
}
