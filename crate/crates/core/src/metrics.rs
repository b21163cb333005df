//! Entanglement, interference and purity figures of merit of two-mode states.

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fock::{
    beam_splitter_apply_inverse, hermitian_eigenvalues, partial_trace, CMatrix, FockCutoff, Mode, TwoModeState, C64,
};

/// Partial transpose on one mode's indices.
pub fn partial_transpose(state: &TwoModeState, mode: Mode) -> CMatrix {
    let c = state.cutoff();
    let rho = state.matrix();
    CMatrix::from_fn(c.dim2(), c.dim2(), |i, j| {
        let (a, b) = c.split(i);
        let (cc, d) = c.split(j);
        match mode {
            Mode::One => rho[(c.index(cc, b), c.index(a, d))],
            Mode::Two => rho[(c.index(a, d), c.index(cc, b))],
        }
    })
}

/// `log₂ ‖ρ^{T_k}‖₁`, from the eigenvalues of the (Hermitian) partial transpose.
pub fn log_negativity(state: &TwoModeState, transposed: Mode) -> f64 {
    let norm: f64 = hermitian_eigenvalues(&partial_transpose(state, transposed))
        .iter()
        .map(|e| e.abs())
        .sum();
    norm.log2().max(0.0)
}

fn in_filter(n: usize) -> bool {
    n == 0 || n == 2
}

/// Projects both modes onto `span{|0⟩, |2⟩}`; returns the renormalized
/// state and the surviving probability `P_s`.
pub fn local_filter(state: &TwoModeState) -> Result<(TwoModeState, f64)> {
    let c = state.cutoff();
    let keep = |i: usize| {
        let (a, b) = c.split(i);
        in_filter(a) && in_filter(b)
    };
    let mut rho = CMatrix::zeros(c.dim2(), c.dim2());
    for i in (0..c.dim2()).filter(|&i| keep(i)) {
        for j in (0..c.dim2()).filter(|&j| keep(j)) {
            rho[(i, j)] = state.matrix()[(i, j)];
        }
    }
    let ps = rho.trace().re;
    if ps < 1e-9 {
        return Err(HomError::Numerical(format!("local filter keeps probability {ps:.3e}")));
    }
    Ok((TwoModeState::from_matrix_unchecked(c, rho / C64::new(ps, 0.0)), ps))
}

/// State after recording, without post-selection, whether each mode passed
/// the local filter: `P_s ρ_s + (1 − P_s) ρ^⊥`.
pub fn filter_dephased(state: &TwoModeState) -> TwoModeState {
    let c = state.cutoff();
    let sector = |i: usize| {
        let (a, b) = c.split(i);
        (in_filter(a), in_filter(b))
    };
    let rho = CMatrix::from_fn(c.dim2(), c.dim2(), |i, j| {
        if sector(i) == sector(j) {
            state.matrix()[(i, j)]
        } else {
            C64::new(0.0, 0.0)
        }
    });
    TwoModeState::from_matrix_unchecked(c, rho)
}

/// Log-negativity of [`filter_dephased`]; never exceeds the unfiltered value.
pub fn filtered_log_negativity(state: &TwoModeState, transposed: Mode) -> f64 {
    log_negativity(&filter_dephased(state), transposed)
}

fn mean_numbers(state: &TwoModeState) -> (f64, f64) {
    let p = state.number_distribution();
    let mut n1 = 0.0;
    let mut n2 = 0.0;
    for a in 0..p.nrows() {
        for b in 0..p.ncols() {
            n1 += a as f64 * p[(a, b)];
            n2 += b as f64 * p[(a, b)];
        }
    }
    (n1, n2)
}

/// `⟨|n1 − n2|⟩ / ⟨n1 + n2⟩`.
pub fn visibility(state: &TwoModeState) -> Result<f64> {
    let p = state.number_distribution();
    let (n1, n2) = mean_numbers(state);
    if n1 + n2 <= 1e-12 {
        return Err(HomError::Numerical("visibility of a state without photons".into()));
    }
    let mut diff = 0.0;
    for a in 0..p.nrows() {
        for b in 0..p.ncols() {
            diff += (a as f64 - b as f64).abs() * p[(a, b)];
        }
    }
    Ok(diff / (n1 + n2))
}

/// `⟨a1† a2† a2 a1⟩ / (⟨a1† a1⟩⟨a2† a2⟩) = ⟨n1 n2⟩ / (⟨n1⟩⟨n2⟩)`.
pub fn cross_correlation(state: &TwoModeState) -> Result<f64> {
    let p = state.number_distribution();
    let (n1, n2) = mean_numbers(state);
    if n1 <= 1e-12 || n2 <= 1e-12 {
        return Err(HomError::Numerical(
            "cross-correlation needs photons in both modes".into(),
        ));
    }
    let mut joint = 0.0;
    for a in 0..p.nrows() {
        for b in 0..p.ncols() {
            joint += (a * b) as f64 * p[(a, b)];
        }
    }
    Ok(joint / (n1 * n2))
}

/// `⟨1|Tr_other{B† ρ B}|1⟩`: single-photon population of one input port.
///
/// The inverse splitter is applied in a doubled cutoff, where it is exact
/// for every photon number the state can hold.
pub fn input_purity_from_output(state: &TwoModeState, mode: Mode) -> Result<f64> {
    let wide = FockCutoff::new(2 * state.cutoff().n_max())?;
    let input = beam_splitter_apply_inverse(&state.with_cutoff(wide)?, 0.5)?;
    Ok(partial_trace(&input, mode).population(1))
}

/// Bootstrap standard deviations of the report fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricErrors {
    pub log_negativity: f64,
    pub filtered_log_negativity: f64,
    pub filter_fraction: f64,
    pub visibility: f64,
    pub cross_correlation: f64,
    pub input_purities: [f64; 2],
    pub resamples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Bits, mode 1 transposed.
    pub log_negativity: f64,
    pub filtered_log_negativity: f64,
    /// `P_s`.
    pub filter_fraction: f64,
    pub visibility: f64,
    pub cross_correlation: f64,
    /// Single-photon populations of input ports 1 and 2.
    pub input_purities: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<MetricErrors>,
}

impl MetricsReport {
    pub fn compute(state: &TwoModeState) -> Result<Self> {
        let filter_fraction = match local_filter(state) {
            Ok((_, ps)) => ps,
            Err(_) => 0.0,
        };
        let report = MetricsReport {
            log_negativity: log_negativity(state, Mode::One),
            filtered_log_negativity: filtered_log_negativity(state, Mode::One),
            filter_fraction,
            visibility: visibility(state)?,
            cross_correlation: cross_correlation(state)?,
            input_purities: [
                input_purity_from_output(state, Mode::One)?,
                input_purity_from_output(state, Mode::Two)?,
            ],
            errors: None,
        };
        if !report.fields().iter().all(|v| v.is_finite()) {
            return Err(HomError::Numerical("non-finite metric".into()));
        }
        Ok(report)
    }

    fn fields(&self) -> [f64; 7] {
        [
            self.log_negativity,
            self.filtered_log_negativity,
            self.filter_fraction,
            self.visibility,
            self.cross_correlation,
            self.input_purities[0],
            self.input_purities[1],
        ]
    }

    /// Attaches standard deviations over bootstrap replicas.
    pub fn with_bootstrap(mut self, replicas: &[MetricsReport]) -> Self {
        if replicas.len() < 2 {
            return self;
        }
        let fields: Vec<[f64; 7]> = replicas.iter().map(|r| r.fields()).collect();
        let sd = |k: usize| {
            let n = fields.len() as f64;
            let mean = fields.iter().map(|f| f[k]).sum::<f64>() / n;
            (fields.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        self.errors = Some(MetricErrors {
            log_negativity: sd(0),
            filtered_log_negativity: sd(1),
            filter_fraction: sd(2),
            visibility: sd(3),
            cross_correlation: sd(4),
            input_purities: [sd(5), sd(6)],
            resamples: replicas.len(),
        });
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{beam_splitter_apply, hom_with_overlap, phase_shift_apply, SingleModeState};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn cut() -> FockCutoff {
        FockCutoff::DEFAULT
    }

    #[test]
    fn hom_is_one_ebit() {
        let hom = TwoModeState::hom(cut(), 0.0);
        assert_abs_diff_eq!(log_negativity(&hom, Mode::One), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(log_negativity(&hom, Mode::Two), 1.0, epsilon = 1e-10);
        let (filtered, ps) = local_filter(&hom).unwrap();
        assert_abs_diff_eq!(ps, 1.0, epsilon = 1e-14);
        assert!(filtered.trace_distance(&hom) < 1e-12);
        assert_abs_diff_eq!(visibility(&hom).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cross_correlation(&hom).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn mixture_against_dense_eigensolver() {
        // Oracle: partial transpose built by explicit index swap on the
        // 9×9 {0,1,2}⊗{0,1,2} block, eigenvalues from a real symmetric solver.
        let c = FockCutoff::new(2).unwrap();
        let hom = TwoModeState::hom(c, 0.0);
        let mut mixed = DMatrix::<f64>::zeros(3, 3);
        for a in [0, 2] {
            for b in [0, 2] {
                mixed[(a, b)] = 0.25;
            }
        }
        let noise = TwoModeState::number_diagonal(c, &mixed).unwrap();
        let state = TwoModeState::mixture(&[(0.5, &hom), (0.5, &noise)]).unwrap();
        let mut pt = DMatrix::<f64>::zeros(9, 9);
        for a in 0..3 {
            for b in 0..3 {
                for cc in 0..3 {
                    for d in 0..3 {
                        pt[(a * 3 + b, cc * 3 + d)] = state.matrix()[(cc * 3 + b, a * 3 + d)].re;
                    }
                }
            }
        }
        let oracle: f64 = nalgebra::SymmetricEigen::new(pt)
            .eigenvalues
            .iter()
            .map(|e| e.abs())
            .sum::<f64>()
            .log2();
        assert_abs_diff_eq!(log_negativity(&state, Mode::One), oracle, epsilon = 1e-12);
        // Analytic: ‖ρ^T‖ = 1 + 2·max(0, ¼ − ⅛)… only the |2,0⟩/|0,2⟩ coherence block
        // contributes a negative eigenvalue, ⅛ − ¼ = −⅛.
        assert_abs_diff_eq!(oracle, (1.25f64).log2(), epsilon = 1e-12);
    }

    #[test]
    fn product_states_are_ppt() {
        let a = SingleModeState::number_diagonal(cut(), &[0.3, 0.5, 0.2]).unwrap();
        let b = SingleModeState::number_diagonal(cut(), &[0.1, 0.9]).unwrap();
        let p = TwoModeState::product(&a, &b).unwrap();
        assert_abs_diff_eq!(log_negativity(&p, Mode::One), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn local_phase_invariance() {
        let a = SingleModeState::number_diagonal(cut(), &[0.35, 0.6, 0.05]).unwrap();
        let out = hom_with_overlap(&a, &a, 0.95).unwrap();
        let base = log_negativity(&out, Mode::One);
        for theta in [0.4, 1.9] {
            let shifted = phase_shift_apply(&out, Mode::Two, theta);
            assert_abs_diff_eq!(log_negativity(&shifted, Mode::One), base, epsilon = 1e-10);
        }
    }

    #[test]
    fn filter_examples() {
        let one_one = TwoModeState::fock(cut(), 1, 1).unwrap();
        assert!(local_filter(&one_one).is_err());
        let a = SingleModeState::number_diagonal(cut(), &[0.38, 0.58, 0.04]).unwrap();
        let out = hom_with_overlap(&a, &a, 0.992).unwrap();
        assert!(filtered_log_negativity(&out, Mode::One) <= log_negativity(&out, Mode::One) + 1e-9);
    }

    #[test]
    fn visibility_and_correlation_examples() {
        let one_one = TwoModeState::fock(cut(), 1, 1).unwrap();
        assert_abs_diff_eq!(visibility(&one_one).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cross_correlation(&one_one).unwrap(), 1.0, epsilon = 1e-15);
        assert!(visibility(&TwoModeState::vacuum(cut())).is_err());
        assert!(cross_correlation(&TwoModeState::fock(cut(), 2, 0).unwrap()).is_err());
    }

    #[test]
    fn visibility_of_phase_randomized_coherent_light() {
        // Oracle: direct sum over two independent Poisson(1) distributions.
        let c = FockCutoff::new(10).unwrap();
        let poisson: Vec<f64> = (0..=10)
            .map(|k| (-1.0f64).exp() / (1..=k).map(|j| j as f64).product::<f64>())
            .collect();
        let norm: f64 = poisson.iter().sum();
        let p: Vec<f64> = poisson.iter().map(|v| v / norm).collect();
        let joint = DMatrix::from_fn(11, 11, |a, b| p[a] * p[b]);
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..11 {
            for b in 0..11 {
                num += (a as f64 - b as f64).abs() * joint[(a, b)];
                den += (a + b) as f64 * joint[(a, b)];
            }
        }
        let oracle = num / den;
        let state = TwoModeState::number_diagonal(c, &joint).unwrap();
        let v = visibility(&state).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
    }

    #[test]
    fn input_purity_examples() {
        let one_one = beam_splitter_apply(&TwoModeState::fock(cut(), 1, 1).unwrap(), 0.5).unwrap();
        assert_abs_diff_eq!(
            input_purity_from_output(&one_one, Mode::One).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            input_purity_from_output(&one_one, Mode::Two).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        let a = SingleModeState::number_diagonal(cut(), &[0.4, 0.6]).unwrap();
        let b = SingleModeState::number_diagonal(cut(), &[0.35, 0.65]).unwrap();
        let out = beam_splitter_apply(&TwoModeState::product(&a, &b).unwrap(), 0.5).unwrap();
        assert_abs_diff_eq!(input_purity_from_output(&out, Mode::One).unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(
            input_purity_from_output(&out, Mode::Two).unwrap(),
            0.65,
            epsilon = 1e-12
        );
    }

    #[test]
    fn swap_symmetric_metrics() {
        let a = SingleModeState::number_diagonal(cut(), &[0.4, 0.55, 0.05]).unwrap();
        let out = hom_with_overlap(&a, &a, 0.9).unwrap();
        let swapped = out.swap_modes();
        let r1 = MetricsReport::compute(&out).unwrap();
        let r2 = MetricsReport::compute(&swapped).unwrap();
        assert_abs_diff_eq!(r1.log_negativity, r2.log_negativity, epsilon = 1e-10);
        assert_abs_diff_eq!(r1.visibility, r2.visibility, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.cross_correlation, r2.cross_correlation, epsilon = 1e-12);
        assert_abs_diff_eq!(r1.input_purities[0], r2.input_purities[1], epsilon = 1e-10);
    }
}
