//! Quadrature wave functions, homodyne probability densities and a sampler
//! for synthetic phase-tagged homodyne data.
//!
//! Convention: ħ = 1, `x = (a + a†)/√2`, vacuum variance ½. The quadrature
//! eigenstate at local-oscillator phase θ has amplitudes
//! `⟨x_θ|n⟩ = e^{inθ} ψ_n(x)`, so measuring at θ + φ is the same as shifting
//! the state with `e^{iφn}` and measuring at θ.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fock::{partial_trace, CMatrix, FockCutoff, Mode, SingleModeState, TwoModeState, C64};
use crate::rng;

/// `ψ_n(x) = (2ⁿ n! √π)^{-1/2} H_n(x) e^{-x²/2}`.
pub fn fock_wavefunction(n: usize, x: f64) -> f64 {
    wavefunctions(n, x)[n]
}

/// `[ψ_0(x), …, ψ_{n_max}(x)]` through the normalized three-term recurrence.
pub fn wavefunctions(n_max: usize, x: f64) -> Vec<f64> {
    let mut psi = Vec::with_capacity(n_max + 1);
    psi.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp());
    if n_max >= 1 {
        psi.push(std::f64::consts::SQRT_2 * x * psi[0]);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * psi[n] - (nf / (nf + 1.0)).sqrt() * psi[n - 1];
        psi.push(next);
    }
    psi
}

/// Cutoff-checked [`fock_wavefunction`].
pub fn fock_wavefunction_checked(cutoff: FockCutoff, n: usize, x: f64) -> Result<f64> {
    if n > cutoff.n_max() {
        return Err(HomError::param(format!("n={n} above cutoff n_max={}", cutoff.n_max())));
    }
    Ok(fock_wavefunction(n, x))
}

/// Amplitudes `⟨x_θ|n⟩` for one mode, θ in radians.
pub fn quadrature_amplitudes(cutoff: FockCutoff, theta: f64, x: f64) -> Vec<C64> {
    wavefunctions(cutoff.n_max(), x)
        .into_iter()
        .enumerate()
        .map(|(n, psi)| C64::from_polar(psi, n as f64 * theta))
        .collect()
}

/// `⟨x_θ|σ|x_θ⟩` for a single-mode state, θ in degrees.
pub fn single_mode_density(state: &SingleModeState, theta_deg: f64, x: f64) -> f64 {
    let u = quadrature_amplitudes(state.cutoff(), theta_deg.to_radians(), x);
    quadratic_form(state.matrix(), &u).max(0.0)
}

fn quadratic_form(rho: &CMatrix, u: &[C64]) -> f64 {
    let n = u.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = C64::new(0.0, 0.0);
        for j in 0..n {
            row += rho[(i, j)] * u[j].conj();
        }
        acc += u[i] * row;
    }
    acc.re
}

/// Two-mode homodyne density `⟨x1_θ1, x2_θ2|ρ|x1_θ1, x2_θ2⟩`, phases in degrees.
pub fn joint_density(state: &TwoModeState, theta1: f64, theta2: f64, x1: f64, x2: f64) -> f64 {
    let c = state.cutoff();
    let u1 = quadrature_amplitudes(c, theta1.to_radians(), x1);
    let u2 = quadrature_amplitudes(c, theta2.to_radians(), x2);
    let u: Vec<C64> = u1.iter().flat_map(|a| u2.iter().map(move |b| a * b)).collect();
    quadratic_form(state.matrix(), &u).max(0.0)
}

/// Single-mode density of the reduced state of `mode`.
pub fn marginal_density(state: &TwoModeState, mode: Mode, theta: f64, x: f64) -> f64 {
    single_mode_density(&partial_trace(state, mode), theta, x)
}

/// Local-oscillator phases per mode, in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PhaseGrid {
    phases: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if phases.is_empty() {
            return Err(HomError::param("phase grid is empty"));
        }
        if phases.iter().any(|p| !(0.0..180.0).contains(p)) {
            return Err(HomError::param("phases must lie in [0°, 180°)"));
        }
        if phases.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HomError::param("phases must be strictly increasing"));
        }
        Ok(PhaseGrid { phases })
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// All `(θ1, θ2)` pairs, θ1 major.
    pub fn combinations(&self) -> Vec<(f64, f64)> {
        self.phases
            .iter()
            .flat_map(|&a| self.phases.iter().map(move |&b| (a, b)))
            .collect()
    }
}

impl Default for PhaseGrid {
    fn default() -> Self {
        PhaseGrid {
            phases: vec![0.0, 30.0, 60.0, 90.0, 120.0, 150.0],
        }
    }
}

impl TryFrom<Vec<f64>> for PhaseGrid {
    type Error = HomError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PhaseGrid::new(v)
    }
}

impl From<PhaseGrid> for Vec<f64> {
    fn from(g: PhaseGrid) -> Vec<f64> {
        g.phases
    }
}

/// One homodyne event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRecord {
    #[serde(rename = "theta1_deg")]
    pub theta1: f64,
    #[serde(rename = "theta2_deg")]
    pub theta2: f64,
    pub x1: f64,
    pub x2: f64,
    #[serde(rename = "tau1_ns")]
    pub tau1: f64,
    #[serde(rename = "tau2_ns")]
    pub tau2: f64,
}

/// Order in which phase combinations are assigned to events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSchedule {
    #[default]
    Random,
    /// Contiguous blocks of events per combination.
    Sequential,
}

/// Uniform lattice on which densities are tabulated for inverse-CDF sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureLattice {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for QuadratureLattice {
    fn default() -> Self {
        QuadratureLattice {
            min: -6.0,
            max: 6.0,
            step: 0.01,
        }
    }
}

impl QuadratureLattice {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.max > self.min) {
            return Err(HomError::param(format!("bad quadrature lattice {self:?}")));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step).round() as usize;
        (0..=n).map(|i| self.min + i as f64 * self.step).collect()
    }
}

/// Cumulative integrals `∫_{min}^{x_i} ψ_k ψ_l dx` for `k ≤ l` on a lattice.
#[derive(Debug)]
struct CumulativeTable {
    xs: Vec<f64>,
    dim: usize,
    /// `pairs[p]` is `(k, l)`; `cum[i * pairs.len() + p]` the integral to node `i`.
    pairs: Vec<(usize, usize)>,
    cum: Vec<f64>,
}

impl CumulativeTable {
    fn new(cutoff: FockCutoff, lattice: &QuadratureLattice) -> Result<Self> {
        lattice.validate()?;
        let xs = lattice.points();
        let dim = cutoff.dim();
        let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|k| (k..dim).map(move |l| (k, l))).collect();
        let np = pairs.len();
        let psi: Vec<Vec<f64>> = xs.iter().map(|&x| wavefunctions(cutoff.n_max(), x)).collect();
        let mut cum = vec![0.0; xs.len() * np];
        for i in 1..xs.len() {
            let h = xs[i] - xs[i - 1];
            for (p, &(k, l)) in pairs.iter().enumerate() {
                let f0 = psi[i - 1][k] * psi[i - 1][l];
                let f1 = psi[i][k] * psi[i][l];
                cum[i * np + p] = cum[(i - 1) * np + p] + 0.5 * h * (f0 + f1);
            }
        }
        Ok(CumulativeTable { xs, dim, pairs, cum })
    }

    /// Coefficients of the density `Σ c_kl ψ_k ψ_l` of `sigma` at phase θ
    /// (radians), folded onto `k ≤ l`.
    fn coefficients(&self, sigma: &CMatrix, theta: f64) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|&(k, l)| {
                let phase = C64::from_polar(1.0, (k as f64 - l as f64) * theta);
                let c = (sigma[(k, l)] * phase).re;
                if k == l {
                    c
                } else {
                    2.0 * c
                }
            })
            .collect()
    }

    fn cdf_at(&self, coef: &[f64], i: usize) -> f64 {
        let np = self.pairs.len();
        self.cum[i * np..(i + 1) * np]
            .iter()
            .zip(coef)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn total(&self, coef: &[f64]) -> f64 {
        self.cdf_at(coef, self.xs.len() - 1)
    }

    /// Inverts the piecewise-linear CDF at `u ∈ [0, 1)`.
    fn invert(&self, coef: &[f64], u: f64) -> f64 {
        let target = u * self.total(coef);
        let (mut lo, mut hi) = (0usize, self.xs.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf_at(coef, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (f_lo, f_hi) = (self.cdf_at(coef, lo), self.cdf_at(coef, hi));
        let frac = if f_hi > f_lo {
            ((target - f_lo) / (f_hi - f_lo)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        self.xs[lo] + frac * (self.xs[hi] - self.xs[lo])
    }
}

const NORMALIZATION_TOL: f64 = 1e-3;

/// Draws `(x1, x2)` from the two-mode homodyne density of a fixed state:
/// `x1` from the mode-1 marginal, then `x2` from the conditional state of
/// mode 2 given `x1`.
#[derive(Debug, Clone)]
pub struct QuadratureSampler {
    state: TwoModeState,
    table: Arc<CumulativeTable>,
    /// Mode-1 reduced state.
    reduced: CMatrix,
}

impl QuadratureSampler {
    pub fn new(state: &TwoModeState, grid: &PhaseGrid, lattice: &QuadratureLattice) -> Result<Self> {
        let table = Arc::new(CumulativeTable::new(state.cutoff(), lattice)?);
        Self::with_table(state, grid, table)
    }

    fn with_table(state: &TwoModeState, grid: &PhaseGrid, table: Arc<CumulativeTable>) -> Result<Self> {
        let reduced = partial_trace(state, Mode::One).matrix().clone();
        let tr = state.trace();
        if (tr - 1.0).abs() > NORMALIZATION_TOL {
            return Err(HomError::Numerical(format!("state trace {tr} is not 1")));
        }
        for &theta in grid.phases() {
            let total = table.total(&table.coefficients(&reduced, theta.to_radians()));
            if (total - tr).abs() > NORMALIZATION_TOL {
                return Err(HomError::Numerical(format!(
                    "density integrates to {total} on the lattice at θ={theta}°"
                )));
            }
        }
        Ok(QuadratureSampler {
            state: state.clone(),
            table,
            reduced,
        })
    }

    /// Sampler for another state on the same lattice.
    pub fn for_state(&self, state: &TwoModeState, grid: &PhaseGrid) -> Result<Self> {
        if state.cutoff() != self.state.cutoff() {
            return Err(HomError::param("sampler cutoff mismatch"));
        }
        Self::with_table(state, grid, Arc::clone(&self.table))
    }

    /// One `(x1, x2)` draw at the given phases (degrees).
    pub fn sample<R: Rng + ?Sized>(&self, theta1: f64, theta2: f64, rng: &mut R) -> (f64, f64) {
        let (t1, t2) = (theta1.to_radians(), theta2.to_radians());
        let coef1 = self.table.coefficients(&self.reduced, t1);
        let x1 = self.table.invert(&coef1, rng.gen::<f64>());

        let c = self.state.cutoff();
        let d = c.dim();
        let u1 = quadrature_amplitudes(c, t1, x1);
        let rho = self.state.matrix();
        let mut cond = CMatrix::zeros(d, d);
        for b in 0..d {
            for dd in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for a in 0..d {
                    for cc in 0..d {
                        acc += u1[a] * rho[(c.index(a, b), c.index(cc, dd))] * u1[cc].conj();
                    }
                }
                cond[(b, dd)] = acc;
            }
        }
        let coef2 = self.table.coefficients(&cond, t2);
        let x2 = if self.table.total(&coef2) > 0.0 {
            self.table.invert(&coef2, rng.gen::<f64>())
        } else {
            // x1 landed where the marginal vanishes; fall back to the marginal.
            let red2 = partial_trace(&self.state, Mode::Two);
            self.table
                .invert(&self.table.coefficients(red2.matrix(), t2), rng.gen::<f64>())
        };
        (x1, x2)
    }
}

/// Inverse-CDF sampler for the quadrature of a single-mode state.
#[derive(Debug, Clone)]
pub struct SingleModeSampler {
    table: Arc<CumulativeTable>,
    coef: Vec<f64>,
}

impl SingleModeSampler {
    pub fn new(state: &SingleModeState, theta_deg: f64, lattice: &QuadratureLattice) -> Result<Self> {
        let table = CumulativeTable::new(state.cutoff(), lattice)?;
        let coef = table.coefficients(state.matrix(), theta_deg.to_radians());
        let total = table.total(&coef);
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(HomError::Numerical(format!(
                "density integrates to {total} on the lattice"
            )));
        }
        debug_assert_eq!(table.dim, state.cutoff().dim());
        Ok(SingleModeSampler {
            table: Arc::new(table),
            coef,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.table.invert(&self.coef, rng.gen::<f64>())
    }
}

/// Phase combination index for event `i` of `n`.
pub(crate) fn schedule_index<R: Rng + ?Sized>(
    schedule: PhaseSchedule,
    i: usize,
    n: usize,
    combos: usize,
    rng: &mut R,
) -> usize {
    match schedule {
        PhaseSchedule::Random => rng.gen_range(0..combos),
        PhaseSchedule::Sequential => (i * combos / n.max(1)).min(combos - 1),
    }
}

/// Synthetic homodyne records of `state`: phases uniform over the grid's
/// combinations, quadratures by lattice inverse-CDF sampling. Event `i`
/// draws only from its own random stream.
pub fn sample_records(
    state: &TwoModeState,
    grid: &PhaseGrid,
    n_events: usize,
    seed: u64,
) -> Result<Vec<QuadratureRecord>> {
    sample_records_with(
        state,
        grid,
        n_events,
        seed,
        &QuadratureLattice::default(),
        PhaseSchedule::Random,
    )
}

pub fn sample_records_with(
    state: &TwoModeState,
    grid: &PhaseGrid,
    n_events: usize,
    seed: u64,
    lattice: &QuadratureLattice,
    schedule: PhaseSchedule,
) -> Result<Vec<QuadratureRecord>> {
    if n_events == 0 {
        return Err(HomError::param("n_events must be positive"));
    }
    let sampler = QuadratureSampler::new(state, grid, lattice)?;
    let combos = grid.combinations();
    Ok((0..n_events)
        .map(|i| {
            let mut r = rng::event_rng(seed, i as u64);
            let (theta1, theta2) = combos[schedule_index(schedule, i, n_events, combos.len(), &mut r)];
            let (x1, x2) = sampler.sample(theta1, theta2, &mut r);
            QuadratureRecord {
                theta1,
                theta2,
                x1,
                x2,
                tau1: 0.0,
                tau2: 0.0,
            }
        })
        .collect())
}

/// Tabulates the joint density on a square grid, rows indexed by `x1`.
pub fn joint_density_grid(state: &TwoModeState, theta1: f64, theta2: f64, xs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), xs.len(), |i, j| {
        joint_density(state, theta1, theta2, xs[i], xs[j])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::phase_shift_apply;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn cut() -> FockCutoff {
        FockCutoff::DEFAULT
    }

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f(a + i as f64 * h)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn wavefunction_values_at_origin() {
        // H_0(0) = 1, H_2(0) = −2 from the recurrence; normalizations 1/√(√π), 1/√(8√π).
        assert_abs_diff_eq!(fock_wavefunction(0, 0.0), PI.powf(-0.25), epsilon = 1e-15);
        assert_abs_diff_eq!(fock_wavefunction(0, 0.0), 0.75113, epsilon = 1e-5);
        assert_abs_diff_eq!(fock_wavefunction(1, 0.0), 0.0, epsilon = 1e-15);
        let psi2 = -2.0 / (8.0 * PI.sqrt()).sqrt();
        assert_abs_diff_eq!(fock_wavefunction(2, 0.0), psi2, epsilon = 1e-14);
        assert_abs_diff_eq!(fock_wavefunction(2, 0.0), -0.53113, epsilon = 1e-5);
    }

    #[test]
    fn wavefunction_nodes() {
        let xs: Vec<f64> = (0..=1200).map(|i| -6.0 + 0.01 * i as f64 + 0.005).collect();
        for n in 0..=5 {
            let sign_changes = xs
                .windows(2)
                .filter(|w| fock_wavefunction(n, w[0]).signum() != fock_wavefunction(n, w[1]).signum())
                .count();
            assert_eq!(sign_changes, n, "ψ_{n}");
        }
    }

    #[test]
    fn wavefunctions_orthonormal() {
        for m in 0..=5 {
            for n in 0..=5 {
                let v = trapezoid(|x| fock_wavefunction(m, x) * fock_wavefunction(n, x), -10.0, 10.0, 4000);
                assert_abs_diff_eq!(v, if m == n { 1.0 } else { 0.0 }, epsilon = 1e-8);
            }
        }
        assert!(fock_wavefunction_checked(cut(), 6, 0.0).is_err());
    }

    #[test]
    fn hom_density_at_origin() {
        let hom = TwoModeState::hom(cut(), 0.0);
        assert!(joint_density(&hom, 0.0, 0.0, 0.0, 0.0) < 1e-12);
        let hom90 = TwoModeState::hom(cut(), PI / 2.0);
        let expect = 2.0 * (fock_wavefunction(2, 0.0) * fock_wavefunction(0, 0.0)).powi(2);
        assert_abs_diff_eq!(joint_density(&hom90, 0.0, 0.0, 0.0, 0.0), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 1.0 / PI, epsilon = 1e-12);
    }

    #[test]
    fn vacuum_density_is_gaussian() {
        let vac = TwoModeState::vacuum(cut());
        for &(t1, t2, x1, x2) in &[
            (0.0f64, 0.0f64, 0.3f64, -1.2f64),
            (30.0, 120.0, 1.0, 0.5),
            (90.0, 150.0, -2.0, 0.0),
        ] {
            let expect = (-(x1 * x1) - x2 * x2).exp() / PI;
            assert_abs_diff_eq!(joint_density(&vac, t1, t2, x1, x2), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn hom_marginal() {
        let hom = TwoModeState::hom(cut(), 0.0);
        for &x in &[-2.0, -0.4, 0.0, 1.1, 2.5] {
            let expect = 0.5 * fock_wavefunction(0, x).powi(2) + 0.5 * fock_wavefunction(2, x).powi(2);
            assert_abs_diff_eq!(marginal_density(&hom, Mode::One, 0.0, x), expect, epsilon = 1e-14);
            assert_abs_diff_eq!(marginal_density(&hom, Mode::Two, 60.0, x), expect, epsilon = 1e-14);
        }
        let total = trapezoid(|x| marginal_density(&hom, Mode::One, 0.0, x), -6.0, 6.0, 1200);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn phase_covariance() {
        let s = TwoModeState::from_terms(
            cut(),
            &[
                (1, 0, C64::new(0.6, 0.0)),
                (0, 1, C64::new(0.0, 0.48)),
                (2, 1, C64::new(0.64, 0.0)),
            ],
        )
        .unwrap();
        let phi = 0.37_f64;
        let shifted = phase_shift_apply(&phase_shift_apply(&s, Mode::One, phi), Mode::Two, phi);
        for &(t1, t2, x1, x2) in &[(0.0, 0.0, 0.5, -0.2), (30.0, 90.0, -1.0, 1.3)] {
            let a = joint_density(&s, t1 + phi.to_degrees(), t2 + phi.to_degrees(), x1, x2);
            let b = joint_density(&shifted, t1, t2, x1, x2);
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn phase_grid_validation() {
        assert!(PhaseGrid::new(vec![0.0, 30.0, 30.0]).is_err());
        assert!(PhaseGrid::new(vec![0.0, 180.0]).is_err());
        assert!(PhaseGrid::new(vec![]).is_err());
        assert_eq!(PhaseGrid::default().combinations().len(), 36);
    }

    #[test]
    fn sampler_is_deterministic() {
        let hom = TwoModeState::hom(cut(), 0.0);
        let a = sample_records(&hom, &PhaseGrid::default(), 50, 9).unwrap();
        let b = sample_records(&hom, &PhaseGrid::default(), 50, 9).unwrap();
        assert_eq!(a, b);
        let c = sample_records(&hom, &PhaseGrid::default(), 50, 10).unwrap();
        assert_ne!(a, c);
        assert!(sample_records(&hom, &PhaseGrid::default(), 0, 1).is_err());
    }

    #[test]
    fn sequential_schedule_covers_blocks() {
        let vac = TwoModeState::vacuum(cut());
        let grid = PhaseGrid::default();
        let recs = sample_records_with(
            &vac,
            &grid,
            72,
            1,
            &QuadratureLattice::default(),
            PhaseSchedule::Sequential,
        )
        .unwrap();
        let combos = grid.combinations();
        for (i, r) in recs.iter().enumerate() {
            assert_eq!((r.theta1, r.theta2), combos[i / 2]);
        }
    }

    #[test]
    fn narrow_lattice_is_rejected() {
        let one = TwoModeState::fock(cut(), 1, 1).unwrap();
        let lattice = QuadratureLattice {
            min: -1.0,
            max: 1.0,
            step: 0.01,
        };
        assert!(QuadratureSampler::new(&one, &PhaseGrid::default(), &lattice).is_err());
    }
}
