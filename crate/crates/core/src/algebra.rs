//! Dual-rail gate algebra with no spatial degrees of freedom.
//!
//! Three wire-pair qubits are labelled 1 (Bob), 2 and 3 (Alice). A
//! three-qubit ket `|x3 x2 x1>` lives at index `4*x3 + 2*x2 + x1`; the
//! grid-state containers use the same ordering for their wire components.
//! `|1>` is the upper wire of a pair.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::Mul;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that a gate is unitary before applying it.
pub const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("gate matrix is not unitary (|U^dag U - I|_inf = {deviation:.3e})")]
    NonUnitary { deviation: f64 },
    #[error("coupler pair ({0}, {1}) is not adjacent; only (2,1) and (3,2) interact")]
    NonAdjacentPair(QubitIndex, QubitIndex),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum QubitIndex {
    Q1 = 1,
    Q2 = 2,
    Q3 = 3,
}

impl QubitIndex {
    pub const ALL: [QubitIndex; 3] = [QubitIndex::Q3, QubitIndex::Q2, QubitIndex::Q1];

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Bit position of this qubit inside a three-qubit basis index.
    pub fn bit(self) -> usize {
        self as usize - 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(QubitIndex::Q1),
            2 => Some(QubitIndex::Q2),
            3 => Some(QubitIndex::Q3),
            _ => None,
        }
    }
}

impl TryFrom<u8> for QubitIndex {
    type Error = String;
    fn try_from(n: u8) -> Result<Self, Self::Error> {
        QubitIndex::from_number(n).ok_or_else(|| format!("qubit index must be 1, 2 or 3, got {n}"))
    }
}

impl From<QubitIndex> for u8 {
    fn from(q: QubitIndex) -> u8 {
        q.number()
    }
}

impl fmt::Display for QubitIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Normalise an adjacent pair to `(higher, lower)`.
pub fn adjacent_pair(a: QubitIndex, b: QubitIndex) -> Result<(QubitIndex, QubitIndex), AlgebraError> {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi.number() - lo.number() != 1 {
        return Err(AlgebraError::NonAdjacentPair(a, b));
    }
    Ok((hi, lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleQubitState {
    pub a0: C64,
    pub a1: C64,
}

impl SingleQubitState {
    pub fn new(a0: C64, a1: C64) -> Self {
        Self { a0, a1 }
    }

    pub fn zero() -> Self {
        Self::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn one() -> Self {
        Self::new(C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    }

    pub fn norm2(&self) -> f64 {
        self.a0.norm_sqr() + self.a1.norm_sqr()
    }

    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm2().sqrt();
        (n > 0.0).then(|| Self::new(self.a0 / n, self.a1 / n))
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.a0.conj() * other.a0 + self.a1.conj() * other.a1
    }

    pub fn as_array(&self) -> [C64; 2] {
        [self.a0, self.a1]
    }

    /// Max-norm distance after removing the best global phase.
    pub fn phase_distance(&self, other: &Self) -> f64 {
        phase_aligned_distance(&self.as_array(), &other.as_array())
    }
}

/// `max_k |a_k - e^{i alpha} b_k|` with `alpha = arg <b|a>`.
pub fn phase_aligned_distance(a: &[C64], b: &[C64]) -> f64 {
    let ov: C64 = b.iter().zip(a).map(|(x, y)| x.conj() * y).sum();
    let phase = if ov.norm() > 0.0 { ov / ov.norm() } else { C64::new(1.0, 0.0) };
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - phase * y).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeQubitState {
    pub amp: [C64; 8],
}

impl ThreeQubitState {
    pub fn basis(x3: u8, x2: u8, x1: u8) -> Self {
        let mut amp = [C64::new(0.0, 0.0); 8];
        amp[Self::index(x3, x2, x1)] = C64::new(1.0, 0.0);
        Self { amp }
    }

    pub fn index(x3: u8, x2: u8, x1: u8) -> usize {
        4 * (x3 as usize & 1) + 2 * (x2 as usize & 1) + (x1 as usize & 1)
    }

    /// Bits `(x3, x2, x1)` of a basis index.
    pub fn bits(index: usize) -> (u8, u8, u8) {
        (((index >> 2) & 1) as u8, ((index >> 1) & 1) as u8, (index & 1) as u8)
    }

    pub fn label(index: usize) -> String {
        let (x3, x2, x1) = Self::bits(index);
        format!("{x3}{x2}{x1}")
    }

    pub fn product(q3: &SingleQubitState, pair21: &[C64; 4]) -> Self {
        let mut amp = [C64::new(0.0, 0.0); 8];
        for (x3, a3) in q3.as_array().into_iter().enumerate() {
            for (p, a) in pair21.iter().enumerate() {
                amp[4 * x3 + p] = a3 * a;
            }
        }
        Self { amp }
    }

    pub fn norm2(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Two-qubit `(x2, x1)` amplitudes with qubit 3 fixed to `x3`.
    pub fn pair_slice(&self, x3: u8) -> [C64; 4] {
        let base = 4 * (x3 as usize & 1);
        [self.amp[base], self.amp[base + 1], self.amp[base + 2], self.amp[base + 3]]
    }

    pub fn phase_distance(&self, other: &Self) -> f64 {
        phase_aligned_distance(&self.amp, &other.amp)
    }
}

/// Concurrence `2|a00 a11 - a01 a10|` of a normalised pure two-qubit state.
pub fn pure_concurrence(pair: &[C64; 4]) -> f64 {
    let n: f64 = pair.iter().map(|a| a.norm_sqr()).sum();
    2.0 * (pair[0] * pair[3] - pair[1] * pair[2]).norm() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateMatrix(pub [[C64; 2]; 2]);

impl GateMatrix {
    pub fn identity() -> Self {
        let o = C64::new(1.0, 0.0);
        let z = C64::new(0.0, 0.0);
        GateMatrix([[o, z], [z, o]])
    }

    pub fn dagger(&self) -> Self {
        let m = &self.0;
        GateMatrix([[m[0][0].conj(), m[1][0].conj()], [m[0][1].conj(), m[1][1].conj()]])
    }

    /// `|U^dag U - I|_inf`
    pub fn unitarity_deviation(&self) -> f64 {
        let p = self.dagger() * *self;
        let id = GateMatrix::identity();
        let mut dev: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                dev = dev.max((p.0[i][j] - id.0[i][j]).norm());
            }
        }
        dev
    }

    pub fn check_unitary(&self, tol: f64) -> Result<(), AlgebraError> {
        let deviation = self.unitarity_deviation();
        if deviation > tol {
            Err(AlgebraError::NonUnitary { deviation })
        } else {
            Ok(())
        }
    }

    pub fn apply(&self, s: &SingleQubitState) -> SingleQubitState {
        let m = &self.0;
        SingleQubitState::new(m[0][0] * s.a0 + m[0][1] * s.a1, m[1][0] * s.a0 + m[1][1] * s.a1)
    }
}

impl Mul for GateMatrix {
    type Output = GateMatrix;
    fn mul(self, rhs: GateMatrix) -> GateMatrix {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[C64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        GateMatrix(out)
    }
}

/// Gate phase parameters of the network, all in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatePhases {
    pub theta: f64,
    pub phi: f64,
    pub gamma: f64,
    pub phi1: f64,
    pub phi2: f64,
}

impl Default for GatePhases {
    fn default() -> Self {
        Self { theta: FRAC_PI_2, phi: PI, gamma: PI, phi1: 0.0, phi2: FRAC_PI_2 }
    }
}

/// Coupling-window beam splitter.
pub fn rx(theta: f64) -> GateMatrix {
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = C64::new(0.0, (theta / 2.0).sin());
    GateMatrix([[c, s], [s, c]])
}

/// Phase shifter on wire 0 (`R0`) or wire 1 (`R1`).
pub fn r_shift(wire: u8, phi: f64) -> GateMatrix {
    let ph = C64::from_polar(1.0, phi);
    let o = C64::new(1.0, 0.0);
    let z = C64::new(0.0, 0.0);
    if wire == 0 {
        GateMatrix([[ph, z], [z, o]])
    } else {
        GateMatrix([[o, z], [z, ph]])
    }
}

pub fn apply_single(
    state: &ThreeQubitState,
    q: QubitIndex,
    u: &GateMatrix,
) -> Result<ThreeQubitState, AlgebraError> {
    u.check_unitary(UNITARY_TOL)?;
    let mask = 1usize << q.bit();
    let mut out = state.amp;
    for i in (0..8).filter(|i| i & mask == 0) {
        let (a0, a1) = (state.amp[i], state.amp[i | mask]);
        out[i] = u.0[0][0] * a0 + u.0[0][1] * a1;
        out[i | mask] = u.0[1][0] * a0 + u.0[1][1] * a1;
    }
    Ok(ThreeQubitState { amp: out })
}

/// Multiplies by `e^{i gamma}` every ket with the higher qubit of the pair
/// on wire 0 and the lower qubit on wire 1.
pub fn apply_coupler_phase(
    state: &ThreeQubitState,
    pair: (QubitIndex, QubitIndex),
    gamma: f64,
) -> Result<ThreeQubitState, AlgebraError> {
    let (hi, lo) = adjacent_pair(pair.0, pair.1)?;
    let ph = C64::from_polar(1.0, gamma);
    let mut out = state.amp;
    for (i, a) in out.iter_mut().enumerate() {
        if (i >> hi.bit()) & 1 == 0 && (i >> lo.bit()) & 1 == 1 {
            *a *= ph;
        }
    }
    Ok(ThreeQubitState { amp: out })
}

fn must(r: Result<ThreeQubitState, AlgebraError>) -> ThreeQubitState {
    // Internal gate sequences only use unitary gates and adjacent pairs.
    r.expect("internal gate sequence is valid")
}

/// EPR preparation of qubits 2 and 1 from `|1_3 1_2 1_1>`.
pub fn bell_prepare(gamma: f64) -> ThreeQubitState {
    let s = ThreeQubitState::basis(1, 1, 1);
    let split = rx(FRAC_PI_2);
    let s = must(apply_single(&s, QubitIndex::Q1, &split));
    let s = must(apply_single(&s, QubitIndex::Q2, &split));
    let s = must(apply_coupler_phase(&s, (QubitIndex::Q2, QubitIndex::Q1), gamma));
    must(apply_single(&s, QubitIndex::Q1, &split))
}

/// Gate sequence of the state-preparation box acting on `|1_3>`:
/// splitter, `R1(-phi1)`, splitter, `R0(phi2)`.
///
/// `phi1` is the delay phase of the wire-1 barrier, so the shifter enters
/// with a negative sign; the output is
/// `e^{i phi2} cos(phi1/2)|0> - sin(phi1/2)|1>` up to a global phase.
pub fn sp_gates(phi1: f64, phi2: f64) -> [GateMatrix; 4] {
    [rx(FRAC_PI_2), r_shift(1, -phi1), rx(FRAC_PI_2), r_shift(0, phi2)]
}

pub fn sp_prepare(phi1: f64, phi2: f64) -> SingleQubitState {
    sp_gates(phi1, phi2)
        .iter()
        .fold(SingleQubitState::one(), |s, g| g.apply(&s))
}

/// First step of the two-step Bell measurement on qubits 3 and 2.
pub fn bell_rotation(state: &ThreeQubitState, gamma: f64) -> ThreeQubitState {
    let s = must(apply_single(state, QubitIndex::Q2, &rx(FRAC_PI_2)));
    let s = must(apply_coupler_phase(&s, (QubitIndex::Q3, QubitIndex::Q2), gamma));
    let s = must(apply_single(&s, QubitIndex::Q2, &rx(-FRAC_PI_2)));
    must(apply_single(&s, QubitIndex::Q3, &rx(-FRAC_PI_2)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementOutcome {
    pub q3: u8,
    pub q2: u8,
    pub probability: f64,
    /// `None` when the outcome has zero probability.
    pub conditional_bob: Option<SingleQubitState>,
}

/// Enumerates the four `(q3, q2)` outcomes in the order 00, 01, 10, 11.
pub fn measure(state: &ThreeQubitState) -> [MeasurementOutcome; 4] {
    let total = state.norm2();
    std::array::from_fn(|k| {
        let (q3, q2) = ((k >> 1) as u8, (k & 1) as u8);
        let a0 = state.amp[ThreeQubitState::index(q3, q2, 0)];
        let a1 = state.amp[ThreeQubitState::index(q3, q2, 1)];
        let bob = SingleQubitState::new(a0, a1);
        let p = bob.norm2();
        MeasurementOutcome {
            q3,
            q2,
            probability: p / total,
            conditional_bob: if p > f64::EPSILON * total { bob.normalized() } else { None },
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledGate {
    pub label: &'static str,
    pub matrix: GateMatrix,
}

/// Bob's reconstruction sequence for the outcome `(q3, q2)`.
///
/// `R0A` sits between the two splitters and is switched on when qubit 2
/// reads 0; `R0B` follows the second splitter and is switched on when qubit
/// 3 reads 0.
pub fn feed_forward(q3: u8, q2: u8) -> Vec<LabeledGate> {
    let mut gates = vec![LabeledGate { label: "Rx", matrix: rx(FRAC_PI_2) }];
    if q2 == 0 {
        gates.push(LabeledGate { label: "R0A", matrix: r_shift(0, PI) });
    }
    gates.push(LabeledGate { label: "Rx", matrix: rx(FRAC_PI_2) });
    if q3 == 0 {
        gates.push(LabeledGate { label: "R0B", matrix: r_shift(0, PI) });
    }
    gates
}

/// Product of the [`feed_forward`] sequence (first gate rightmost).
pub fn feed_forward_net(q3: u8, q2: u8) -> GateMatrix {
    feed_forward(q3, q2)
        .iter()
        .fold(GateMatrix::identity(), |acc, g| g.matrix * acc)
}

pub fn fidelity(psi_i: &SingleQubitState, psi_f: &SingleQubitState) -> f64 {
    psi_i.inner(psi_f).norm_sqr() / (psi_i.norm2() * psi_f.norm2())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealBranch {
    pub q3: u8,
    pub q2: u8,
    pub probability: f64,
    pub bob_before: Option<SingleQubitState>,
    pub bob_after: Option<SingleQubitState>,
    pub fidelity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealTeleport {
    pub input: SingleQubitState,
    /// State entering the Bell rotation.
    pub prepared: ThreeQubitState,
    /// State after the Bell rotation, before measurement.
    pub output: ThreeQubitState,
    pub branches: [IdealBranch; 4],
    pub mean_fidelity: f64,
}

/// Full protocol on the exact algebra.
///
/// Qubit 3 enters the Bell rotation in the SP state, qubits 2 and 1 in the
/// `x3 = 1` slice of [`bell_prepare`].
pub fn ideal_teleport(phi1: f64, phi2: f64, gamma_prep: f64, gamma_rot: f64) -> IdealTeleport {
    let input = sp_prepare(phi1, phi2);
    let pair = bell_prepare(gamma_prep).pair_slice(1);
    let prepared = ThreeQubitState::product(&input, &pair);
    let output = bell_rotation(&prepared, gamma_rot);
    let outcomes = measure(&output);
    let branches = outcomes.map(|o| {
        let after = o.conditional_bob.map(|b| feed_forward_net(o.q3, o.q2).apply(&b));
        IdealBranch {
            q3: o.q3,
            q2: o.q2,
            probability: o.probability,
            bob_before: o.conditional_bob,
            bob_after: after,
            fidelity: after.map_or(0.0, |a| fidelity(&input, &a)),
        }
    });
    let mean_fidelity = branches.iter().map(|b| b.probability * b.fidelity).sum();
    IdealTeleport { input, prepared, output, branches, mean_fidelity }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_state(v: &[f64]) -> ThreeQubitState {
        let mut amp = [c(0.0, 0.0); 8];
        for k in 0..8 {
            amp[k] = c(v[2 * k], v[2 * k + 1]);
        }
        let n = amp.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amp.iter_mut().for_each(|a| *a /= n);
        ThreeQubitState { amp }
    }

    /// Dense 8x8 embedding of a one-qubit gate, built independently of
    /// `apply_single` from the Kronecker product.
    fn kron_embed(q: QubitIndex, u: &GateMatrix) -> [[C64; 8]; 8] {
        let id = GateMatrix::identity();
        let factor = |qq: QubitIndex| if qq == q { *u } else { id };
        let (m3, m2, m1) = (factor(QubitIndex::Q3), factor(QubitIndex::Q2), factor(QubitIndex::Q1));
        let mut out = [[c(0.0, 0.0); 8]; 8];
        for i in 0..8 {
            for j in 0..8 {
                let (i3, i2, i1) = ThreeQubitState::bits(i);
                let (j3, j2, j1) = ThreeQubitState::bits(j);
                out[i][j] = m3.0[i3 as usize][j3 as usize]
                    * m2.0[i2 as usize][j2 as usize]
                    * m1.0[i1 as usize][j1 as usize];
            }
        }
        out
    }

    fn dense_apply(m: &[[C64; 8]; 8], s: &ThreeQubitState) -> ThreeQubitState {
        let mut amp = [c(0.0, 0.0); 8];
        for i in 0..8 {
            amp[i] = (0..8).map(|j| m[i][j] * s.amp[j]).sum();
        }
        ThreeQubitState { amp }
    }

    #[test]
    fn rx_examples() {
        let s = rx(FRAC_PI_2).apply(&SingleQubitState::zero());
        let r = 0.5f64.sqrt();
        assert!(s.phase_distance(&SingleQubitState::new(c(r, 0.0), c(0.0, r))) < TOL);
        assert!((s.a0 - c(r, 0.0)).norm() < TOL && (s.a1 - c(0.0, r)).norm() < TOL);
        let id = rx(0.0);
        assert_eq!(id, GateMatrix::identity());
        let t = rx(PI).apply(&SingleQubitState::one());
        assert!((t.a0 - c(0.0, 1.0)).norm() < TOL && t.a1.norm() < TOL);
    }

    #[test]
    fn shifter_examples() {
        let s = r_shift(0, PI).apply(&SingleQubitState::zero());
        assert!((s.a0 + c(1.0, 0.0)).norm() < TOL);
        let s = r_shift(1, 0.7).apply(&SingleQubitState::zero());
        assert!((s.a0 - c(1.0, 0.0)).norm() < TOL && s.a1.norm() < TOL);
        assert!(r_shift(0, 0.0).unitarity_deviation() < TOL);
        assert_eq!(r_shift(0, 0.0), GateMatrix::identity());
    }

    #[test]
    fn apply_single_slot_action() {
        let s = ThreeQubitState::basis(1, 1, 1);
        let out = apply_single(&s, QubitIndex::Q1, &rx(FRAC_PI_2)).unwrap();
        let r = 0.5f64.sqrt();
        assert!((out.amp[ThreeQubitState::index(1, 1, 0)] - c(0.0, r)).norm() < TOL);
        assert!((out.amp[ThreeQubitState::index(1, 1, 1)] - c(r, 0.0)).norm() < TOL);
        let same = apply_single(&out, QubitIndex::Q2, &GateMatrix::identity()).unwrap();
        assert_eq!(same, out);
    }

    #[test]
    fn apply_single_rejects_non_unitary() {
        let mut m = GateMatrix::identity();
        m.0[0][0] = c(1.1, 0.0);
        let err = apply_single(&ThreeQubitState::basis(0, 0, 0), QubitIndex::Q2, &m).unwrap_err();
        assert!(matches!(err, AlgebraError::NonUnitary { .. }));
    }

    #[test]
    fn coupler_phase_branches() {
        let s = ThreeQubitState::basis(0, 0, 1);
        let out = apply_coupler_phase(&s, (QubitIndex::Q2, QubitIndex::Q1), PI).unwrap();
        assert!((out.amp[1] + c(1.0, 0.0)).norm() < TOL);
        for g in [0.3, 1.7, PI] {
            let s = ThreeQubitState::basis(1, 1, 1);
            let out = apply_coupler_phase(&s, (QubitIndex::Q1, QubitIndex::Q2), g).unwrap();
            assert_eq!(out, s);
        }
        let r = random_state(&(0..16).map(|k| (k as f64 * 0.37).sin()).collect::<Vec<_>>());
        let out = apply_coupler_phase(&r, (QubitIndex::Q3, QubitIndex::Q2), 0.0).unwrap();
        assert_eq!(out, r);
        // T(23) phases |0_3 1_2 x1>
        let out = apply_coupler_phase(&ThreeQubitState::basis(0, 1, 0), (QubitIndex::Q3, QubitIndex::Q2), PI).unwrap();
        assert!((out.amp[ThreeQubitState::index(0, 1, 0)] + c(1.0, 0.0)).norm() < TOL);
    }

    #[test]
    fn coupler_rejects_non_adjacent() {
        let err = apply_coupler_phase(&ThreeQubitState::basis(0, 0, 0), (QubitIndex::Q1, QubitIndex::Q3), PI);
        assert!(matches!(err, Err(AlgebraError::NonAdjacentPair(..))));
    }

    #[test]
    fn bell_prepare_singlet() {
        let s = bell_prepare(PI);
        let r = 0.5f64.sqrt();
        let mut want = [c(0.0, 0.0); 8];
        want[ThreeQubitState::index(1, 0, 1)] = c(r, 0.0);
        want[ThreeQubitState::index(1, 1, 0)] = c(-r, 0.0);
        assert!(s.phase_distance(&ThreeQubitState { amp: want }) < TOL);
        assert!((pure_concurrence(&s.pair_slice(1)) - 1.0).abs() < TOL);
    }

    #[test]
    fn bell_prepare_without_coupler_is_separable() {
        let s = bell_prepare(0.0);
        assert!(pure_concurrence(&s.pair_slice(1)) < TOL);
    }

    #[test]
    fn bell_prepare_imperfect_coupler_leaks_into_00() {
        let g = 0.88 * PI;
        let s = bell_prepare(g);
        let amp = s.amp[ThreeQubitState::index(1, 0, 0)].norm();
        let closed = (c(-1.0, 0.0) - C64::from_polar(1.0, g)).norm() / (2.0 * 2f64.sqrt());
        assert!((amp - closed).abs() < TOL);
        assert!((amp - 0.1325).abs() < 1e-3);
        assert!((amp * amp - 0.0176).abs() < 1e-3);
    }

    #[test]
    fn sp_prepare_examples() {
        let s = sp_prepare(2.0 * PI / 3.0, FRAC_PI_2);
        let want = SingleQubitState::new(c(0.5, 0.0), c(0.0, 3f64.sqrt() / 2.0));
        assert!(s.phase_distance(&want) < TOL);
        assert!(sp_prepare(0.0, FRAC_PI_2).phase_distance(&SingleQubitState::zero()) < TOL);
        for p2 in [0.0, 0.4, 2.0] {
            assert!(sp_prepare(PI, p2).phase_distance(&SingleQubitState::one()) < TOL);
        }
        // e^{i phi2} cos(phi1/2)|0> - sin(phi1/2)|1>
        for (p1, p2) in [(0.3, 1.1), (2.5, -0.7), (1.0, 3.0)] {
            let want = SingleQubitState::new(C64::from_polar((p1 / 2.0f64).cos(), p2), c(-(p1 / 2.0f64).sin(), 0.0));
            assert!(sp_prepare(p1, p2).phase_distance(&want) < TOL);
        }
    }

    /// Post-rotation state written in terms of the input coefficients (s, t).
    fn rotated_form(s: C64, t: C64) -> ThreeQubitState {
        let h = 0.5;
        let i = c(0.0, 1.0);
        let mut amp = [c(0.0, 0.0); 8];
        let mut set = |x3, x2, a0: C64, a1: C64| {
            amp[ThreeQubitState::index(x3, x2, 0)] = a0;
            amp[ThreeQubitState::index(x3, x2, 1)] = a1;
        };
        set(0, 0, -h * s, -h * t);
        set(0, 1, h * t, -h * s);
        set(1, 0, -i * h * (-s), -i * h * t);
        set(1, 1, i * h * t, i * h * s);
        ThreeQubitState { amp }
    }

    #[test]
    fn bell_rotation_reproduces_output_form() {
        let (s, t) = (c(0.5, 0.0), c(0.0, 3f64.sqrt() / 2.0));
        let res = ideal_teleport(2.0 * PI / 3.0, FRAC_PI_2, PI, PI);
        assert!(res.output.phase_distance(&rotated_form(s, t)) < TOL);
        for b in &res.branches {
            assert!((b.probability - 0.25).abs() < TOL);
        }
    }

    #[test]
    fn measure_product_state() {
        let s = ThreeQubitState::product(&SingleQubitState::zero(), &[c(0.6, 0.0), c(0.0, 0.8), c(0.0, 0.0), c(0.0, 0.0)]);
        let out = measure(&s);
        assert!((out[0].probability - 1.0).abs() < TOL);
        for o in &out[1..] {
            assert!(o.probability.abs() < TOL);
            assert!(o.conditional_bob.is_none());
        }
    }

    #[test]
    fn feed_forward_table_rows() {
        let labels = |q3, q2| feed_forward(q3, q2).iter().map(|g| g.label).collect::<Vec<_>>();
        assert_eq!(labels(1, 1), vec!["Rx", "Rx"]);
        assert_eq!(labels(0, 0), vec!["Rx", "R0A", "Rx", "R0B"]);
        assert_eq!(labels(0, 1), vec!["Rx", "Rx", "R0B"]);
        assert_eq!(labels(1, 0), vec!["Rx", "R0A", "Rx"]);

        let (s, t) = (c(0.6, 0.0), c(0.0, 0.8));
        let psi = SingleQubitState::new(s, t);
        // (1,1): net i X
        let net = feed_forward_net(1, 1);
        let out = net.apply(&SingleQubitState::new(t, s));
        assert!(out.phase_distance(&psi) < TOL);
        assert!(((out.a0 / s) - c(0.0, 1.0)).norm() < TOL);
        // (0,0): R0B Rx R0A Rx is proportional to the identity
        let net = feed_forward_net(0, 0);
        let m = net.0;
        assert!((m[0][0] - m[1][1]).norm() < TOL && (m[0][0].norm() - 1.0).abs() < TOL);
        assert!(m[0][1].norm() < TOL && m[1][0].norm() < TOL);
        // (0,1): proportional to ZX
        let out = feed_forward_net(0, 1).apply(&SingleQubitState::new(t, -s));
        assert!(out.phase_distance(&psi) < TOL);
    }

    #[test]
    fn fidelity_basics() {
        let psi = SingleQubitState::new(c(0.6, 0.0), c(0.0, 0.8));
        let rot = SingleQubitState::new(psi.a0 * C64::from_polar(1.0, 1.3), psi.a1 * C64::from_polar(1.0, 1.3));
        assert!((fidelity(&psi, &rot) - 1.0).abs() < TOL);
        assert!(fidelity(&SingleQubitState::zero(), &SingleQubitState::one()).abs() < TOL);
    }

    #[test]
    fn imperfect_coupler_sweep_shape() {
        let g = 0.88 * PI;
        let f: Vec<f64> = (0..=8).map(|k| ideal_teleport(PI * k as f64 / 8.0, FRAC_PI_2, g, g).mean_fidelity).collect();
        let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > 0.9 && min < 0.92, "{f:?}");
        assert!(f[6] > 0.97);
    }

    proptest! {
        #[test]
        fn gates_preserve_norm(v in proptest::collection::vec(-1.0f64..1.0, 16), theta in -7.0f64..7.0, phi in -7.0f64..7.0) {
            let s = random_state(&v);
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            for q in QubitIndex::ALL {
                for u in [rx(theta), r_shift(0, phi), r_shift(1, phi)] {
                    let out = apply_single(&s, q, &u).unwrap();
                    prop_assert!((out.norm2() - 1.0).abs() < TOL);
                    let dense = dense_apply(&kron_embed(q, &u), &s);
                    prop_assert!(out.phase_distance(&dense) < TOL);
                    prop_assert!(out.amp.iter().zip(dense.amp.iter()).all(|(a, b)| (a - b).norm() < TOL));
                }
            }
            let out = apply_coupler_phase(&s, (QubitIndex::Q2, QubitIndex::Q1), phi).unwrap();
            prop_assert!((out.norm2() - 1.0).abs() < TOL);
        }

        #[test]
        fn coupler_commutes_with_non_member(v in proptest::collection::vec(-1.0f64..1.0, 16), theta in -7.0f64..7.0, gamma in -7.0f64..7.0) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let s = random_state(&v);
            let u = rx(theta) * r_shift(1, 0.3 * theta);
            let a = apply_single(&apply_coupler_phase(&s, (QubitIndex::Q2, QubitIndex::Q1), gamma).unwrap(), QubitIndex::Q3, &u).unwrap();
            let b = apply_coupler_phase(&apply_single(&s, QubitIndex::Q3, &u).unwrap(), (QubitIndex::Q2, QubitIndex::Q1), gamma).unwrap();
            prop_assert!(a.amp.iter().zip(b.amp.iter()).all(|(x, y)| (x - y).norm() < TOL));
            let a = apply_single(&apply_coupler_phase(&s, (QubitIndex::Q3, QubitIndex::Q2), gamma).unwrap(), QubitIndex::Q1, &u).unwrap();
            let b = apply_coupler_phase(&apply_single(&s, QubitIndex::Q1, &u).unwrap(), (QubitIndex::Q3, QubitIndex::Q2), gamma).unwrap();
            prop_assert!(a.amp.iter().zip(b.amp.iter()).all(|(x, y)| (x - y).norm() < TOL));
        }

        #[test]
        fn measurement_probabilities_sum_to_one(v in proptest::collection::vec(-1.0f64..1.0, 16)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let s = random_state(&v);
            let direct: f64 = s.amp.iter().map(|a| a.norm_sqr()).sum();
            let total: f64 = measure(&s).iter().map(|o| o.probability).sum();
            prop_assert!((total - direct).abs() < TOL);
        }

        #[test]
        fn feed_forward_restores_every_branch(sr in -1.0f64..1.0, si in -1.0f64..1.0, tr in -1.0f64..1.0, ti in -1.0f64..1.0) {
            let psi = SingleQubitState::new(c(sr, si), c(tr, ti));
            prop_assume!(psi.norm2() > 1e-3);
            let psi = psi.normalized().unwrap();
            let (s, t) = (psi.a0, psi.a1);
            let form = rotated_form(s, t);
            for o in measure(&form) {
                let bob = o.conditional_bob.unwrap();
                let out = feed_forward_net(o.q3, o.q2).apply(&bob);
                let ratio = out.inner(&psi).norm();
                prop_assert!((ratio - 1.0).abs() < TOL);
                prop_assert!(out.phase_distance(&psi) < TOL);
            }
        }

        #[test]
        fn fidelity_symmetric_and_phase_invariant(v in proptest::collection::vec(-1.0f64..1.0, 4), alpha in -7.0f64..7.0) {
            let a = SingleQubitState::new(c(v[0], v[1]), c(v[2], v[3]));
            let b = SingleQubitState::new(c(v[3], -v[0]), c(v[1], v[2]));
            prop_assume!(a.norm2() > 1e-3 && b.norm2() > 1e-3);
            let (a, b) = (a.normalized().unwrap(), b.normalized().unwrap());
            prop_assert!((fidelity(&a, &b) - fidelity(&b, &a)).abs() < TOL);
            let ph = C64::from_polar(1.0, alpha);
            let b2 = SingleQubitState::new(b.a0 * ph, b.a1 * ph);
            prop_assert!((fidelity(&a, &b) - fidelity(&a, &b2)).abs() < TOL);
        }

        #[test]
        fn ideal_protocol_is_exact(phi1 in -7.0f64..7.0, phi2 in -7.0f64..7.0) {
            let res = ideal_teleport(phi1, phi2, PI, PI);
            for b in &res.branches {
                prop_assert!((b.fidelity - 1.0).abs() < TOL);
            }
            prop_assert!((res.mean_fidelity - 1.0).abs() < TOL);
        }
    }
}
