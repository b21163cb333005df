//! Truncated Fock-space states of one and two bosonic modes and the
//! linear-optical maps acting on them.
//!
//! Two-mode matrices use the row/column index `n1 * (n_max + 1) + n2`.
//! Operations never renormalize silently: probability pushed above the
//! cutoff is reported, and anything above [`LEAKAGE_TOLERANCE`] is an error.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Largest truncation leakage accepted before an operation fails.
pub const LEAKAGE_TOLERANCE: f64 = 1e-6;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

/// Photon-number cutoff per mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FockCutoff(usize);

impl FockCutoff {
    pub const DEFAULT: FockCutoff = FockCutoff(5);

    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 2 {
            return Err(HomError::param(format!("n_max must be at least 2, got {n_max}")));
        }
        Ok(FockCutoff(n_max))
    }

    pub fn n_max(self) -> usize {
        self.0
    }

    /// Basis dimension of one mode.
    pub fn dim(self) -> usize {
        self.0 + 1
    }

    /// Basis dimension of two modes.
    pub fn dim2(self) -> usize {
        self.dim() * self.dim()
    }

    pub fn index(self, n1: usize, n2: usize) -> usize {
        n1 * self.dim() + n2
    }

    pub fn split(self, idx: usize) -> (usize, usize) {
        (idx / self.dim(), idx % self.dim())
    }
}

impl Default for FockCutoff {
    fn default() -> Self {
        FockCutoff::DEFAULT
    }
}

impl TryFrom<usize> for FockCutoff {
    type Error = HomError;
    fn try_from(n: usize) -> Result<Self> {
        FockCutoff::new(n)
    }
}

impl From<FockCutoff> for usize {
    fn from(c: FockCutoff) -> usize {
        c.0
    }
}

/// Which of the two spatial modes an operation addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    One,
    Two,
}

impl Mode {
    pub fn other(self) -> Mode {
        match self {
            Mode::One => Mode::Two,
            Mode::Two => Mode::One,
        }
    }

    pub fn from_number(k: u8) -> Result<Mode> {
        match k {
            1 => Ok(Mode::One),
            2 => Ok(Mode::Two),
            _ => Err(HomError::param(format!("mode must be 1 or 2, got {k}"))),
        }
    }
}

fn check_density(rho: &CMatrix, what: &str) -> Result<()> {
    let n = rho.nrows();
    if rho.ncols() != n {
        return Err(HomError::state(format!("{what}: matrix is not square")));
    }
    for i in 0..n {
        for j in 0..n {
            let d = rho[(i, j)] - rho[(j, i)].conj();
            if !(d.norm() <= HERMITIAN_TOL) {
                return Err(HomError::state(format!(
                    "{what}: not Hermitian at ({i},{j}), deviation {:.3e}",
                    d.norm()
                )));
            }
        }
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(HomError::state(format!("{what}: trace {tr} differs from 1")));
    }
    let min_eig = hermitian_eigenvalues(rho).into_iter().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL {
        return Err(HomError::state(format!("{what}: negative eigenvalue {min_eig:.3e}")));
    }
    Ok(())
}

/// Eigenvalues of a Hermitian matrix (the lower triangle is read).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    nalgebra::SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
}

/// Density matrix of a single truncated mode.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleModeState {
    cutoff: FockCutoff,
    rho: CMatrix,
}

impl SingleModeState {
    /// Validating constructor.
    pub fn new(cutoff: FockCutoff, rho: CMatrix) -> Result<Self> {
        if rho.nrows() != cutoff.dim() {
            return Err(HomError::state(format!(
                "expected {}x{} single-mode matrix, got {}x{}",
                cutoff.dim(),
                cutoff.dim(),
                rho.nrows(),
                rho.ncols()
            )));
        }
        check_density(&rho, "single-mode state")?;
        Ok(SingleModeState { cutoff, rho })
    }

    pub(crate) fn from_matrix_unchecked(cutoff: FockCutoff, rho: CMatrix) -> Self {
        debug_assert_eq!(rho.nrows(), cutoff.dim());
        SingleModeState { cutoff, rho }
    }

    pub fn fock(cutoff: FockCutoff, n: usize) -> Result<Self> {
        Self::number_diagonal(cutoff, &unit(n, cutoff.dim())?)
    }

    pub fn vacuum(cutoff: FockCutoff) -> Self {
        Self::fock(cutoff, 0).expect("vacuum is always representable")
    }

    /// Mixture `Σ p_n |n⟩⟨n|`.
    pub fn number_diagonal(cutoff: FockCutoff, probs: &[f64]) -> Result<Self> {
        if probs.len() > cutoff.dim() {
            return Err(HomError::param(format!(
                "{} populations exceed cutoff n_max={}",
                probs.len(),
                cutoff.n_max()
            )));
        }
        let mut rho = CMatrix::zeros(cutoff.dim(), cutoff.dim());
        for (n, &p) in probs.iter().enumerate() {
            rho[(n, n)] = C64::new(p, 0.0);
        }
        Self::new(cutoff, rho)
    }

    pub fn cutoff(&self) -> FockCutoff {
        self.cutoff
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn population(&self, n: usize) -> f64 {
        if n < self.cutoff.dim() {
            self.rho[(n, n)].re
        } else {
            0.0
        }
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.cutoff.dim()).map(|n| self.rho[(n, n)].re).collect()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// True when every off-diagonal element is below `tol` in magnitude.
    pub fn is_number_diagonal(&self, tol: f64) -> bool {
        let d = self.cutoff.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.rho[(i, j)].norm() <= tol))
    }

    pub fn validate(&self) -> Result<()> {
        check_density(&self.rho, "single-mode state")
    }

    /// Embeds the state into a larger cutoff.
    pub fn with_cutoff(&self, cutoff: FockCutoff) -> Result<Self> {
        let rho = resize_single(&self.rho, self.cutoff, cutoff)?;
        Ok(SingleModeState { cutoff, rho })
    }
}

fn unit(n: usize, dim: usize) -> Result<Vec<f64>> {
    if n >= dim {
        return Err(HomError::param(format!("|{n}⟩ exceeds cutoff n_max={}", dim - 1)));
    }
    let mut v = vec![0.0; n + 1];
    v[n] = 1.0;
    Ok(v)
}

fn resize_single(rho: &CMatrix, from: FockCutoff, to: FockCutoff) -> Result<CMatrix> {
    let (df, dt) = (from.dim(), to.dim());
    let mut out = CMatrix::zeros(dt, dt);
    for i in 0..df {
        for j in 0..df {
            if i < dt && j < dt {
                out[(i, j)] = rho[(i, j)];
            } else if rho[(i, j)].norm() > LEAKAGE_TOLERANCE {
                return Err(HomError::TruncationLeak {
                    leaked: rho[(i, j)].norm(),
                    threshold: LEAKAGE_TOLERANCE,
                });
            }
        }
    }
    Ok(out)
}

/// Density matrix of two truncated modes.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoModeState {
    cutoff: FockCutoff,
    rho: CMatrix,
}

impl TwoModeState {
    /// Validating constructor.
    pub fn new(cutoff: FockCutoff, rho: CMatrix) -> Result<Self> {
        if rho.nrows() != cutoff.dim2() {
            return Err(HomError::state(format!(
                "expected {0}x{0} two-mode matrix, got {1}x{2}",
                cutoff.dim2(),
                rho.nrows(),
                rho.ncols()
            )));
        }
        check_density(&rho, "two-mode state")?;
        Ok(TwoModeState { cutoff, rho })
    }

    pub(crate) fn from_matrix_unchecked(cutoff: FockCutoff, rho: CMatrix) -> Self {
        debug_assert_eq!(rho.nrows(), cutoff.dim2());
        TwoModeState { cutoff, rho }
    }

    /// Pure state from amplitudes indexed `n1 * (n_max + 1) + n2`.
    pub fn pure(cutoff: FockCutoff, amplitudes: &[C64]) -> Result<Self> {
        if amplitudes.len() != cutoff.dim2() {
            return Err(HomError::param("amplitude vector has the wrong length"));
        }
        let v = nalgebra::DVector::from_column_slice(amplitudes);
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(HomError::state(format!("pure state has norm {norm}")));
        }
        Ok(TwoModeState {
            cutoff,
            rho: &v * v.adjoint(),
        })
    }

    /// Pure superposition of number states given as `(n1, n2, amplitude)`.
    pub fn from_terms(cutoff: FockCutoff, terms: &[(usize, usize, C64)]) -> Result<Self> {
        let mut amps = vec![C64::new(0.0, 0.0); cutoff.dim2()];
        for &(n1, n2, a) in terms {
            if n1 > cutoff.n_max() || n2 > cutoff.n_max() {
                return Err(HomError::param(format!("|{n1},{n2}⟩ exceeds cutoff")));
            }
            amps[cutoff.index(n1, n2)] += a;
        }
        Self::pure(cutoff, &amps)
    }

    pub fn fock(cutoff: FockCutoff, n1: usize, n2: usize) -> Result<Self> {
        Self::from_terms(cutoff, &[(n1, n2, C64::new(1.0, 0.0))])
    }

    pub fn vacuum(cutoff: FockCutoff) -> Self {
        Self::fock(cutoff, 0, 0).expect("vacuum is always representable")
    }

    /// `|HOM(θ)⟩ = (|2,0⟩ − e^{2iθ}|0,2⟩)/√2` with θ in radians.
    pub fn hom(cutoff: FockCutoff, theta: f64) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Self::from_terms(
            cutoff,
            &[(2, 0, C64::new(s, 0.0)), (0, 2, -C64::from_polar(s, 2.0 * theta))],
        )
        .expect("cutoff is at least 2")
    }

    /// Tensor product `ρ_a ⊗ ρ_b`.
    pub fn product(a: &SingleModeState, b: &SingleModeState) -> Result<Self> {
        if a.cutoff != b.cutoff {
            return Err(HomError::param("product of states with different cutoffs"));
        }
        Ok(TwoModeState {
            cutoff: a.cutoff,
            rho: a.rho.kronecker(&b.rho),
        })
    }

    /// Mixture `Σ P(n1, n2) |n1,n2⟩⟨n1,n2|`.
    pub fn number_diagonal(cutoff: FockCutoff, joint: &DMatrix<f64>) -> Result<Self> {
        let d = cutoff.dim();
        let mut rho = CMatrix::zeros(cutoff.dim2(), cutoff.dim2());
        for n1 in 0..joint.nrows() {
            for n2 in 0..joint.ncols() {
                let p = joint[(n1, n2)];
                if p == 0.0 {
                    continue;
                }
                if n1 >= d || n2 >= d {
                    return Err(HomError::param("joint distribution exceeds cutoff"));
                }
                let k = cutoff.index(n1, n2);
                rho[(k, k)] = C64::new(p, 0.0);
            }
        }
        Self::new(cutoff, rho)
    }

    pub fn cutoff(&self) -> FockCutoff {
        self.cutoff
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    /// `⟨m1,m2|ρ|n1,n2⟩`.
    pub fn element(&self, m1: usize, m2: usize, n1: usize, n2: usize) -> C64 {
        let c = self.cutoff;
        self.rho[(c.index(m1, m2), c.index(n1, n2))]
    }

    pub fn population(&self, n1: usize, n2: usize) -> f64 {
        self.element(n1, n2, n1, n2).re
    }

    /// Joint photon-number distribution `P(n1, n2)`.
    pub fn number_distribution(&self) -> DMatrix<f64> {
        let d = self.cutoff.dim();
        DMatrix::from_fn(d, d, |n1, n2| self.population(n1, n2))
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.rho * &self.rho).trace().re
    }

    pub fn validate(&self) -> Result<()> {
        check_density(&self.rho, "two-mode state")
    }

    /// `⟨ψ|ρ|ψ⟩` for a pure reference state.
    pub fn fidelity_with_pure(&self, pure: &TwoModeState) -> f64 {
        // For a rank-one reference Tr(ρσ) is the fidelity.
        (&self.rho * &pure.rho).trace().re
    }

    /// Trace distance `½‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &TwoModeState) -> f64 {
        let diff = &self.rho - &other.rho;
        0.5 * hermitian_eigenvalues(&diff).iter().map(|e| e.abs()).sum::<f64>()
    }

    /// Re-expresses the state in a different cutoff; dropping populated
    /// levels above the new cutoff is a truncation error.
    pub fn with_cutoff(&self, cutoff: FockCutoff) -> Result<Self> {
        let (from, to) = (self.cutoff, cutoff);
        let mut rho = CMatrix::zeros(to.dim2(), to.dim2());
        for i in 0..from.dim2() {
            let (a1, a2) = from.split(i);
            for j in 0..from.dim2() {
                let (b1, b2) = from.split(j);
                let v = self.rho[(i, j)];
                if a1 < to.dim() && a2 < to.dim() && b1 < to.dim() && b2 < to.dim() {
                    rho[(to.index(a1, a2), to.index(b1, b2))] = v;
                } else if v.norm() > LEAKAGE_TOLERANCE {
                    return Err(HomError::TruncationLeak {
                        leaked: v.norm(),
                        threshold: LEAKAGE_TOLERANCE,
                    });
                }
            }
        }
        Ok(TwoModeState { cutoff, rho })
    }

    /// Exchanges the two modes.
    pub fn swap_modes(&self) -> TwoModeState {
        let c = self.cutoff;
        let perm = |i: usize| {
            let (a, b) = c.split(i);
            c.index(b, a)
        };
        let rho = CMatrix::from_fn(c.dim2(), c.dim2(), |i, j| self.rho[(perm(i), perm(j))]);
        TwoModeState { cutoff: c, rho }
    }

    /// Convex mixture `Σ w_k ρ_k` of states sharing a cutoff.
    pub fn mixture(parts: &[(f64, &TwoModeState)]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| HomError::Empty("mixture".into()))?.1;
        let mut rho = CMatrix::zeros(first.cutoff.dim2(), first.cutoff.dim2());
        for (w, s) in parts {
            if s.cutoff != first.cutoff {
                return Err(HomError::param("mixture of states with different cutoffs"));
            }
            rho += &s.rho * C64::new(*w, 0.0);
        }
        Ok(TwoModeState {
            cutoff: first.cutoff,
            rho,
        })
    }
}

/// Photon-number probabilities of one input arm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
}

impl SourceModel {
    pub fn new(p0: f64, p1: f64, p2: f64) -> Result<Self> {
        let s = SourceModel { p0, p1, p2 };
        s.validate()?;
        Ok(s)
    }

    /// Vacuum-contaminated photon with an optional two-photon fraction.
    pub fn from_purity(p1: f64, p2: f64) -> Result<Self> {
        Self::new(1.0 - p1 - p2, p1, p2)
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p0, self.p1, self.p2];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(HomError::param(format!("source probabilities out of [0,1]: {ps:?}")));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(HomError::param(format!("source probabilities do not sum to 1: {ps:?}")));
        }
        Ok(())
    }

    pub fn to_state(&self, cutoff: FockCutoff) -> Result<SingleModeState> {
        SingleModeState::number_diagonal(cutoff, &[self.p0, self.p1, self.p2])
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Fock-space matrix of the two-mode beam splitter
/// `a1† → t a1† − r a2†`, `a2† → r a1† + t a2†` with `t = √T`, `r = ±√(1−T)`.
///
/// Columns whose image leaves the truncated space lose that norm; the
/// matrix is unitary on every total-photon block with `N ≤ n_max`.
fn beam_splitter_matrix(cutoff: FockCutoff, transmittance: f64, inverse: bool) -> DMatrix<f64> {
    let d = cutoff.dim();
    let t = transmittance.sqrt();
    let r = if inverse {
        -(1.0 - transmittance).sqrt()
    } else {
        (1.0 - transmittance).sqrt()
    };
    let mut b = DMatrix::zeros(cutoff.dim2(), cutoff.dim2());
    for n1 in 0..d {
        for n2 in 0..d {
            let total = n1 + n2;
            let mut coef = vec![0.0; total + 1];
            for j in 0..=n1 {
                let a = binomial(n1, j) * t.powi(j as i32) * (-r).powi((n1 - j) as i32);
                for k in 0..=n2 {
                    let c = binomial(n2, k) * r.powi(k as i32) * t.powi((n2 - k) as i32);
                    coef[j + k] += a * c;
                }
            }
            let norm_in = (factorial(n1) * factorial(n2)).sqrt();
            for (p, c) in coef.into_iter().enumerate() {
                let q = total - p;
                if p < d && q < d && c != 0.0 {
                    let amp = c * (factorial(p) * factorial(q)).sqrt() / norm_in;
                    b[(cutoff.index(p, q), cutoff.index(n1, n2))] = amp;
                }
            }
        }
    }
    b
}

fn conjugate_real(state: &TwoModeState, b: &DMatrix<f64>) -> Result<TwoModeState> {
    let bc = b.map(|v| C64::new(v, 0.0));
    let rho = &bc * &state.rho * bc.transpose();
    let leaked = state.trace() - rho.trace().re;
    if leaked > LEAKAGE_TOLERANCE {
        return Err(HomError::TruncationLeak {
            leaked,
            threshold: LEAKAGE_TOLERANCE,
        });
    }
    Ok(TwoModeState::from_matrix_unchecked(state.cutoff, rho))
}

fn check_transmittance(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(HomError::param(format!("transmittance {t} outside [0,1]")));
    }
    Ok(())
}

/// `B ρ B†`. At transmittance ½, `B|1,1⟩ = (|2,0⟩ − |0,2⟩)/√2`.
pub fn beam_splitter_apply(state: &TwoModeState, transmittance: f64) -> Result<TwoModeState> {
    check_transmittance(transmittance)?;
    conjugate_real(state, &beam_splitter_matrix(state.cutoff, transmittance, false))
}

/// `B† ρ B`, undoing [`beam_splitter_apply`] with the same transmittance.
pub fn beam_splitter_apply_inverse(state: &TwoModeState, transmittance: f64) -> Result<TwoModeState> {
    check_transmittance(transmittance)?;
    conjugate_real(state, &beam_splitter_matrix(state.cutoff, transmittance, true))
}

/// Conjugates by `e^{iθ n}` on one mode.
pub fn phase_shift_apply(state: &TwoModeState, mode: Mode, theta: f64) -> TwoModeState {
    let c = state.cutoff;
    let number = |i: usize| {
        let (a, b) = c.split(i);
        match mode {
            Mode::One => a,
            Mode::Two => b,
        }
    };
    let rho = CMatrix::from_fn(c.dim2(), c.dim2(), |i, j| {
        let dn = number(i) as f64 - number(j) as f64;
        state.rho[(i, j)] * C64::from_polar(1.0, theta * dn)
    });
    TwoModeState::from_matrix_unchecked(c, rho)
}

/// Pure-loss channel of transmissivity `eta`, applied through its
/// photon-subtraction Kraus operators
/// `K_k = Σ_n √C(n,k) η^{(n−k)/2} (1−η)^{k/2} |n−k⟩⟨n|`.
pub fn loss_channel(state: &SingleModeState, eta: f64) -> Result<SingleModeState> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(HomError::param(format!("loss transmissivity {eta} outside [0,1]")));
    }
    let d = state.cutoff.dim();
    let mut out = CMatrix::zeros(d, d);
    for k in 0..d {
        let kraus = CMatrix::from_fn(d, d, |i, j| {
            if j >= k && i == j - k {
                let amp = binomial(j, k).sqrt() * eta.powf((j - k) as f64 / 2.0) * (1.0 - eta).powf(k as f64 / 2.0);
                C64::new(amp, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        out += &kraus * &state.rho * kraus.adjoint();
    }
    Ok(SingleModeState::from_matrix_unchecked(state.cutoff, out))
}

/// Reduced state of the kept mode.
pub fn partial_trace(state: &TwoModeState, keep: Mode) -> SingleModeState {
    let c = state.cutoff;
    let d = c.dim();
    let rho = CMatrix::from_fn(d, d, |i, j| {
        (0..d)
            .map(|k| match keep {
                Mode::One => state.rho[(c.index(i, k), c.index(j, k))],
                Mode::Two => state.rho[(c.index(k, i), c.index(k, j))],
            })
            .sum()
    });
    SingleModeState::from_matrix_unchecked(c, rho)
}

/// Balanced beam-splitter output for two photons that share only part of
/// their temporal mode.
///
/// The photon in port 1 occupies `α m + β o` and the one in port 2
/// `α m − β o`, with `m`, `o` orthonormal temporal modes and
/// `α² − β² = √C`, so the squared mode overlap is `C`. Each temporal mode
/// passes through its own balanced beam splitter; the orthogonal mode is then
/// traced out while its photons are still counted in their spatial port.
pub fn hom_with_overlap(rho1: &SingleModeState, rho2: &SingleModeState, overlap: f64) -> Result<TwoModeState> {
    if rho1.cutoff != rho2.cutoff {
        return Err(HomError::param("inputs have different cutoffs"));
    }
    for (k, r) in [(1, rho1), (2, rho2)] {
        if !r.is_number_diagonal(1e-12) {
            return Err(HomError::param(format!(
                "input {k} has number coherences; only number-diagonal inputs are supported"
            )));
        }
    }
    let p1 = rho1.populations();
    let p2 = rho2.populations();
    let joint = DMatrix::from_fn(p1.len(), p2.len(), |i, j| p1[i] * p2[j]);
    hom_from_joint(rho1.cutoff, &joint, overlap)
}

/// [`hom_with_overlap`] for a (possibly correlated) joint input photon-number
/// distribution `P(n1, n2)`.
pub fn hom_from_joint(cutoff: FockCutoff, joint: &DMatrix<f64>, overlap: f64) -> Result<TwoModeState> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(HomError::param(format!("overlap {overlap} outside [0,1]")));
    }
    let d = cutoff.dim();
    let mut rho = CMatrix::zeros(cutoff.dim2(), cutoff.dim2());
    let mut total = 0.0;
    for n1 in 0..joint.nrows() {
        for n2 in 0..joint.ncols() {
            let w = joint[(n1, n2)];
            if w == 0.0 {
                continue;
            }
            total += w;
            for group in four_mode_output(n1, n2, overlap).values() {
                for (&(a1, a2), &ca) in group {
                    if a1 >= d || a2 >= d {
                        continue;
                    }
                    for (&(b1, b2), &cb) in group {
                        if b1 >= d || b2 >= d {
                            continue;
                        }
                        rho[(cutoff.index(a1, a2), cutoff.index(b1, b2))] += C64::new(w * ca * cb, 0.0);
                    }
                }
            }
        }
    }
    let leaked = total - rho.trace().re;
    if leaked > LEAKAGE_TOLERANCE {
        return Err(HomError::TruncationLeak {
            leaked,
            threshold: LEAKAGE_TOLERANCE,
        });
    }
    Ok(TwoModeState::from_matrix_unchecked(cutoff, rho))
}

type Monomial = [u8; 4];

/// Output amplitudes for `|n1⟩` in port 1 and `|n2⟩` in port 2, grouped by
/// the orthogonal-mode occupation `(o1, o2)` and keyed by the total photon
/// number in each spatial port. Mode order: `1m, 1o, 2m, 2o`.
fn four_mode_output(n1: usize, n2: usize, overlap: f64) -> BTreeMap<(u8, u8), BTreeMap<(usize, usize), f64>> {
    let sc = overlap.sqrt();
    let alpha = ((1.0 + sc) / 2.0).sqrt();
    let beta = ((1.0 - sc) / 2.0).sqrt();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // Creation operators of the two input photons after the beam splitter.
    let port1 = [alpha * s, beta * s, -alpha * s, -beta * s];
    let port2 = [alpha * s, -beta * s, alpha * s, -beta * s];

    let mut poly: BTreeMap<Monomial, f64> = BTreeMap::from([([0; 4], 1.0)]);
    let mul = |lin: &[f64; 4], poly: &mut BTreeMap<Monomial, f64>| {
        let mut next = BTreeMap::new();
        for (mono, c) in poly.iter() {
            for (k, &l) in lin.iter().enumerate() {
                if l != 0.0 {
                    let mut m = *mono;
                    m[k] += 1;
                    *next.entry(m).or_insert(0.0) += c * l;
                }
            }
        }
        *poly = next;
    };
    for _ in 0..n1 {
        mul(&port1, &mut poly);
    }
    for _ in 0..n2 {
        mul(&port2, &mut poly);
    }
    let norm_in = (factorial(n1) * factorial(n2)).sqrt();
    let mut groups: BTreeMap<(u8, u8), BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for (m, c) in poly {
        let amp = c * m.iter().map(|&k| factorial(k as usize)).product::<f64>().sqrt() / norm_in;
        if amp == 0.0 {
            continue;
        }
        let key = ((m[0] + m[1]) as usize, (m[2] + m[3]) as usize);
        *groups.entry((m[1], m[3])).or_default().entry(key).or_insert(0.0) += amp;
    }
    groups
}
