//! Maximum-likelihood reconstruction of density matrices from binned
//! homodyne data with the iterative `ρ ← N[R(ρ) ρ R(ρ)]` fixed point.
//!
//! Bin probabilities use the midpoint rule: `p_j = w² ⟨x_θ|ρ|x_θ⟩` at the
//! bin centre for two modes, `w ⟨x_θ|ρ|x_θ⟩` for one. The two-mode
//! projectors factorize per port, which is what makes the accumulation
//! below cheap: bins sharing a phase pair and an `x2` bin share one
//! contraction of ρ.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fock::{CMatrix, FockCutoff, Mode, SingleModeState, TwoModeState, C64};
use crate::quadrature::{wavefunctions, QuadratureRecord};
use crate::rng;

/// One occupied bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub theta1: f64,
    pub theta2: f64,
    pub x1: f64,
    pub x2: f64,
    pub count: u64,
}

/// Histogram of two-mode records per phase pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedData {
    pub width: f64,
    pub total: u64,
    pub bins: Vec<Bin>,
}

fn lattice_index(x: f64, width: f64) -> i64 {
    (x / width).floor() as i64
}

fn centre(k: i64, width: f64) -> f64 {
    (k as f64 + 0.5) * width
}

fn check_width(width: f64) -> Result<()> {
    if !(width > 0.0) || !width.is_finite() {
        return Err(HomError::param(format!("bin width must be positive, got {width}")));
    }
    Ok(())
}

/// Histograms outcomes per phase pair on the lattice `[k w, (k+1) w)`.
pub fn bin_records(records: &[QuadratureRecord], width: f64) -> Result<BinnedData> {
    check_width(width)?;
    if records.is_empty() {
        return Err(HomError::Empty("no records to bin".into()));
    }
    let mut counts: BTreeMap<(u64, u64, i64, i64), u64> = BTreeMap::new();
    for r in records {
        if !(r.x1.is_finite() && r.x2.is_finite()) {
            return Err(HomError::param("non-finite quadrature outcome"));
        }
        let key = (
            r.theta1.to_bits(),
            r.theta2.to_bits(),
            lattice_index(r.x1, width),
            lattice_index(r.x2, width),
        );
        *counts.entry(key).or_insert(0) += 1;
    }
    let bins = counts
        .into_iter()
        .map(|((t1, t2, k1, k2), count)| Bin {
            theta1: f64::from_bits(t1),
            theta2: f64::from_bits(t2),
            x1: centre(k1, width),
            x2: centre(k2, width),
            count,
        })
        .collect();
    Ok(BinnedData {
        width,
        total: records.len() as u64,
        bins,
    })
}

impl BinnedData {
    /// One record per event at its bin centre.
    pub fn expand(&self) -> Vec<QuadratureRecord> {
        self.bins
            .iter()
            .flat_map(|b| {
                std::iter::repeat_n(
                    QuadratureRecord {
                        theta1: b.theta1,
                        theta2: b.theta2,
                        x1: b.x1,
                        x2: b.x2,
                        tau1: 0.0,
                        tau2: 0.0,
                    },
                    b.count as usize,
                )
            })
            .collect()
    }

    /// Distinct `(θ1, θ2)` pairs present.
    pub fn phase_pairs(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(u64, u64)> = self
            .bins
            .iter()
            .map(|b| (b.theta1.to_bits(), b.theta2.to_bits()))
            .collect();
        v.sort_unstable();
        v.dedup();
        v.into_iter()
            .map(|(a, b)| (f64::from_bits(a), f64::from_bits(b)))
            .collect()
    }

    pub fn scaled(&self, factor: u64) -> BinnedData {
        BinnedData {
            width: self.width,
            total: self.total * factor,
            bins: self
                .bins
                .iter()
                .map(|b| Bin {
                    count: b.count * factor,
                    ..*b
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stop once the log-likelihood gain per event falls below this.
    pub tolerance: f64,
    pub bin_width: f64,
    /// Step mixing `(1 − d) I + d R`; 1 is the plain `RρR` iteration.
    pub dilution: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            max_iterations: 2000,
            tolerance: 1e-9,
            bin_width: 0.1,
            dilution: 1.0,
        }
    }
}

impl MleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(HomError::param("max_iterations and tolerance must be positive"));
        }
        check_width(self.bin_width)?;
        if !(self.dilution > 0.0 && self.dilution <= 1.0) {
            return Err(HomError::param(format!("dilution {} outside (0, 1]", self.dilution)));
        }
        Ok(())
    }
}

/// Reconstruction with its iteration diagnostics.
#[derive(Clone, Debug)]
pub struct MleResult<S> {
    pub state: S,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood per event of the returned state.
    pub log_likelihood_per_event: f64,
    /// Log-likelihood per event after every accepted iteration, starting
    /// with the initial state.
    pub history: Vec<f64>,
}

/// Serializable summary of [`MleResult`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood_per_event: f64,
}

impl<S> MleResult<S> {
    pub fn diagnostics(&self) -> MleDiagnostics {
        MleDiagnostics {
            iterations: self.iterations,
            converged: self.converged,
            log_likelihood_per_event: self.log_likelihood_per_event,
        }
    }
}

struct Column {
    psi2: Vec<f64>,
    /// `(ψ(x1), weight)` per occupied bin in this column.
    bins: Vec<(Vec<f64>, f64)>,
}

struct PhaseBlock {
    phase1: Vec<C64>,
    phase2: Vec<C64>,
    columns: Vec<Column>,
}

/// Weighted two-mode bins prepared for repeated likelihood evaluation.
pub struct TwoModeProblem {
    cutoff: FockCutoff,
    area: f64,
    total_weight: f64,
    blocks: Vec<PhaseBlock>,
}

fn phase_vector(d: usize, theta_deg: f64) -> Vec<C64> {
    (0..d)
        .map(|n| C64::from_polar(1.0, n as f64 * theta_deg.to_radians()))
        .collect()
}

impl TwoModeProblem {
    pub fn from_binned(data: &BinnedData, cutoff: FockCutoff) -> Result<Self> {
        Self::from_weights(
            data.width,
            cutoff,
            data.bins
                .iter()
                .map(|b| (b.theta1, b.theta2, b.x1, b.x2, b.count as f64)),
        )
    }

    /// Bins given as `(θ1, θ2, x1, x2, weight)` with centres on the
    /// `width` lattice; weights need not be integers.
    pub fn from_weights(
        width: f64,
        cutoff: FockCutoff,
        bins: impl IntoIterator<Item = (f64, f64, f64, f64, f64)>,
    ) -> Result<Self> {
        check_width(width)?;
        let d = cutoff.dim();
        let mut psi_cache: HashMap<i64, Vec<f64>> = HashMap::new();
        let mut psi = |x: f64| {
            psi_cache
                .entry(lattice_index(x, width))
                .or_insert_with(|| wavefunctions(cutoff.n_max(), x))
                .clone()
        };
        let mut grouped: BTreeMap<(u64, u64), BTreeMap<i64, Vec<(f64, f64)>>> = BTreeMap::new();
        let mut total_weight = 0.0;
        for (t1, t2, x1, x2, w) in bins {
            if !(w >= 0.0) {
                return Err(HomError::param("bin weights must be non-negative"));
            }
            if w == 0.0 {
                continue;
            }
            total_weight += w;
            grouped
                .entry((t1.to_bits(), t2.to_bits()))
                .or_default()
                .entry(lattice_index(x2, width))
                .or_default()
                .push((x1, w));
        }
        if grouped.is_empty() {
            return Err(HomError::Empty("no occupied bins".into()));
        }
        let mut blocks = Vec::with_capacity(grouped.len());
        for ((t1, t2), cols) in grouped {
            let columns = cols
                .into_iter()
                .map(|(k2, entries)| Column {
                    psi2: psi(centre(k2, width)),
                    bins: entries.into_iter().map(|(x1, w)| (psi(x1), w)).collect(),
                })
                .collect();
            blocks.push(PhaseBlock {
                phase1: phase_vector(d, f64::from_bits(t1)),
                phase2: phase_vector(d, f64::from_bits(t2)),
                columns,
            });
        }
        Ok(TwoModeProblem {
            cutoff,
            area: width * width,
            total_weight,
            blocks,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    fn check_informative(&self) {
        let mut t1: Vec<u64> = Vec::new();
        let mut t2: Vec<u64> = Vec::new();
        for b in &self.blocks {
            t1.push(b.phase1.get(1).map_or(0, |z| z.arg().to_bits()));
            t2.push(b.phase2.get(1).map_or(0, |z| z.arg().to_bits()));
        }
        t1.sort_unstable();
        t1.dedup();
        t2.sort_unstable();
        t2.dedup();
        if t1.len() < 2 || t2.len() < 2 {
            log::warn!("fewer than two distinct phases per mode; the reconstruction is not informationally complete");
        }
    }

    /// `Re(ρ_{ab,cd} e^{i(a−c)θ1} e^{i(b−d)θ2})` for one phase block, row-major.
    fn rotated(&self, rho: &CMatrix, block: &PhaseBlock) -> Vec<f64> {
        let d = self.cutoff.dim();
        let n = d * d;
        let u: Vec<C64> = (0..n).map(|i| block.phase1[i / d] * block.phase2[i % d]).collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (rho[(i, j)] * u[i] * u[j].conj()).re;
            }
        }
        out
    }

    /// `M_ac = Σ_bd A_{ab,cd} ψ_b(x2) ψ_d(x2)`, row-major `d × d`.
    fn contract_column(d: usize, a: &[f64], psi2: &[f64], m: &mut [f64]) {
        let n = d * d;
        for ia in 0..d {
            for ic in 0..d {
                let mut acc = 0.0;
                for b in 0..d {
                    let row = &a[(ia * d + b) * n + ic * d..(ia * d + b) * n + ic * d + d];
                    let inner: f64 = row.iter().zip(psi2).map(|(x, y)| x * y).sum();
                    acc += psi2[b] * inner;
                }
                m[ia * d + ic] = acc;
            }
        }
    }

    fn quad(m: &[f64], v: &[f64]) -> f64 {
        let d = v.len();
        let mut acc = 0.0;
        for i in 0..d {
            let row: f64 = m[i * d..i * d + d].iter().zip(v).map(|(x, y)| x * y).sum();
            acc += v[i] * row;
        }
        acc
    }

    /// Log-likelihood `Σ_j n_j ln p_j`.
    pub fn log_likelihood(&self, state: &TwoModeState) -> Result<f64> {
        Ok(self.evaluate(state.matrix(), false)?.0)
    }

    /// Log-likelihood and, when asked, the operator `R(ρ)`.
    fn evaluate(&self, rho: &CMatrix, want_r: bool) -> Result<(f64, Option<CMatrix>)> {
        let d = self.cutoff.dim();
        let n = d * d;
        let mut ll = KahanSum::default();
        let mut r = if want_r { Some(CMatrix::zeros(n, n)) } else { None };
        let mut m = vec![0.0; d * d];
        let mut t = vec![0.0; d * d];
        let mut s = vec![0.0; n * n];
        for block in &self.blocks {
            let a = self.rotated(rho, block);
            s.iter_mut().for_each(|v| *v = 0.0);
            for col in &block.columns {
                Self::contract_column(d, &a, &col.psi2, &mut m);
                t.iter_mut().for_each(|v| *v = 0.0);
                for (psi1, w) in &col.bins {
                    let p = self.area * Self::quad(&m, psi1);
                    if !(p > 0.0) {
                        return Err(HomError::ZeroProbabilityBin);
                    }
                    ll.add(w * p.ln());
                    if want_r {
                        let f = w / p;
                        for i in 0..d {
                            let fi = f * psi1[i];
                            for j in 0..d {
                                t[i * d + j] += fi * psi1[j];
                            }
                        }
                    }
                }
                if want_r {
                    let b = &col.psi2;
                    for ia in 0..d {
                        for ib in 0..d {
                            let row = (ia * d + ib) * n;
                            for ic in 0..d {
                                let tb = t[ia * d + ic] * b[ib];
                                let out = &mut s[row + ic * d..row + ic * d + d];
                                for (o, bd) in out.iter_mut().zip(b) {
                                    *o += tb * bd;
                                }
                            }
                        }
                    }
                }
            }
            if let Some(r) = r.as_mut() {
                let u: Vec<C64> = (0..n).map(|i| block.phase1[i / d] * block.phase2[i % d]).collect();
                for i in 0..n {
                    for j in 0..n {
                        r[(i, j)] += u[i].conj() * u[j] * (self.area * s[i * n + j]);
                    }
                }
            }
        }
        let r = r.map(|r| r / C64::new(self.total_weight, 0.0));
        Ok((ll.value(), r))
    }

    /// One iteration `N[(1−d + dR) ρ (1−d + dR)]`.
    pub fn step(&self, state: &TwoModeState, dilution: f64) -> Result<TwoModeState> {
        let (_, r) = self.evaluate(state.matrix(), true)?;
        Ok(TwoModeState::from_matrix_unchecked(
            self.cutoff,
            apply_step(state.matrix(), &r.expect("requested"), dilution),
        ))
    }
}

fn apply_step(rho: &CMatrix, r: &CMatrix, dilution: f64) -> CMatrix {
    let n = rho.nrows();
    let op = CMatrix::identity(n, n) * C64::new(1.0 - dilution, 0.0) + r * C64::new(dilution, 0.0);
    let next = &op * rho * &op;
    let next = (&next + next.adjoint()) * C64::new(0.5, 0.0);
    let tr = next.trace().re;
    next / C64::new(tr, 0.0)
}

#[derive(Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, v: f64) {
        let y = v - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum
    }
}

/// Shared driver for the one- and two-mode problems.
fn iterate<F>(
    initial: CMatrix,
    total_weight: f64,
    opts: &MleOptions,
    mut evaluate: F,
) -> Result<(CMatrix, usize, bool, Vec<f64>)>
where
    F: FnMut(&CMatrix, bool) -> Result<(f64, Option<CMatrix>)>,
{
    opts.validate()?;
    let mut rho = initial;
    let (mut ll, mut r) = evaluate(&rho, true)?;
    let mut history = vec![ll / total_weight];
    let slack = 1e-12 * total_weight.max(1.0);
    for it in 1..=opts.max_iterations {
        let r_cur = r.take().expect("operator computed for the current iterate");
        let mut dilution = opts.dilution;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate = apply_step(&rho, &r_cur, dilution);
            let (ll_new, r_new) = evaluate(&candidate, true)?;
            if ll_new >= ll - slack {
                accepted = Some((candidate, ll_new, r_new));
                break;
            }
            dilution *= 0.5;
        }
        let Some((candidate, ll_new, r_new)) = accepted else {
            // No ascent direction left at machine precision.
            return Ok((rho, it - 1, true, history));
        };
        let gain = (ll_new - ll) / total_weight;
        rho = candidate;
        ll = ll_new;
        r = r_new;
        history.push(ll / total_weight);
        if gain < opts.tolerance {
            return Ok((rho, it, true, history));
        }
    }
    Ok((rho, opts.max_iterations, false, history))
}

/// Maximum-likelihood two-mode state from the maximally mixed start.
pub fn mle_reconstruct(data: &BinnedData, cutoff: FockCutoff, opts: &MleOptions) -> Result<MleResult<TwoModeState>> {
    let n = cutoff.dim2();
    let start = CMatrix::identity(n, n) / C64::new(n as f64, 0.0);
    mle_reconstruct_from(data, TwoModeState::from_matrix_unchecked(cutoff, start), opts)
}

/// Maximum-likelihood two-mode state from a given start.
pub fn mle_reconstruct_from(
    data: &BinnedData,
    initial: TwoModeState,
    opts: &MleOptions,
) -> Result<MleResult<TwoModeState>> {
    let cutoff = initial.cutoff();
    let problem = TwoModeProblem::from_binned(data, cutoff)?;
    problem.check_informative();
    let total = problem.total_weight();
    let (rho, iterations, converged, history) = iterate(initial.into_matrix(), total, opts, |rho, want| {
        problem.evaluate(rho, want)
    })?;
    if !converged {
        log::warn!("maximum-likelihood iteration stopped at {iterations} iterations without converging");
    }
    Ok(MleResult {
        state: TwoModeState::from_matrix_unchecked(cutoff, rho),
        iterations,
        converged,
        log_likelihood_per_event: *history.last().expect("history starts non-empty"),
        history,
    })
}

/// `Σ_j n_j ln p_j` with midpoint bin probabilities.
pub fn log_likelihood(state: &TwoModeState, data: &BinnedData) -> Result<f64> {
    TwoModeProblem::from_binned(data, state.cutoff())?.log_likelihood(state)
}

/// Histogram of one mode's `(θ, x)` outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleModeBinned {
    pub width: f64,
    pub total: u64,
    /// `(θ, x centre, count)`.
    pub bins: Vec<(f64, f64, u64)>,
}

pub fn bin_single_mode(records: &[QuadratureRecord], mode: Mode, width: f64) -> Result<SingleModeBinned> {
    check_width(width)?;
    if records.is_empty() {
        return Err(HomError::Empty("no records to bin".into()));
    }
    let mut counts: BTreeMap<(u64, i64), u64> = BTreeMap::new();
    for r in records {
        let (t, x) = match mode {
            Mode::One => (r.theta1, r.x1),
            Mode::Two => (r.theta2, r.x2),
        };
        *counts.entry((t.to_bits(), lattice_index(x, width))).or_insert(0) += 1;
    }
    Ok(SingleModeBinned {
        width,
        total: records.len() as u64,
        bins: counts
            .into_iter()
            .map(|((t, k), n)| (f64::from_bits(t), centre(k, width), n))
            .collect(),
    })
}

struct SingleModeProblem {
    cutoff: FockCutoff,
    width: f64,
    total_weight: f64,
    /// Per phase: phase vector and `(ψ(x), weight)` entries.
    blocks: Vec<(Vec<C64>, Vec<(Vec<f64>, f64)>)>,
}

impl SingleModeProblem {
    fn new(data: &SingleModeBinned, cutoff: FockCutoff) -> Self {
        let mut grouped: BTreeMap<u64, Vec<(Vec<f64>, f64)>> = BTreeMap::new();
        for &(t, x, n) in &data.bins {
            grouped
                .entry(t.to_bits())
                .or_default()
                .push((wavefunctions(cutoff.n_max(), x), n as f64));
        }
        SingleModeProblem {
            cutoff,
            width: data.width,
            total_weight: data.total as f64,
            blocks: grouped
                .into_iter()
                .map(|(t, e)| (phase_vector(cutoff.dim(), f64::from_bits(t)), e))
                .collect(),
        }
    }

    fn evaluate(&self, rho: &CMatrix, want_r: bool) -> Result<(f64, Option<CMatrix>)> {
        let d = self.cutoff.dim();
        let mut ll = KahanSum::default();
        let mut r = CMatrix::zeros(d, d);
        for (phase, entries) in &self.blocks {
            let a: Vec<f64> = (0..d * d)
                .map(|k| (rho[(k / d, k % d)] * phase[k / d] * phase[k % d].conj()).re)
                .collect();
            let mut s = DMatrix::<f64>::zeros(d, d);
            for (psi, w) in entries {
                let p = self.width * TwoModeProblem::quad(&a, psi);
                if !(p > 0.0) {
                    return Err(HomError::ZeroProbabilityBin);
                }
                ll.add(w * p.ln());
                if want_r {
                    let f = w / p;
                    for i in 0..d {
                        for j in 0..d {
                            s[(i, j)] += f * psi[i] * psi[j];
                        }
                    }
                }
            }
            if want_r {
                for i in 0..d {
                    for j in 0..d {
                        r[(i, j)] += phase[i].conj() * phase[j] * (self.width * s[(i, j)]);
                    }
                }
            }
        }
        Ok((ll.value(), want_r.then(|| r / C64::new(self.total_weight, 0.0))))
    }
}

/// Maximum-likelihood single-mode state.
pub fn mle_reconstruct_single(
    data: &SingleModeBinned,
    cutoff: FockCutoff,
    opts: &MleOptions,
) -> Result<MleResult<SingleModeState>> {
    let problem = SingleModeProblem::new(data, cutoff);
    let d = cutoff.dim();
    let start = CMatrix::identity(d, d) / C64::new(d as f64, 0.0);
    let (rho, iterations, converged, history) = iterate(start, problem.total_weight, opts, |rho, want| {
        problem.evaluate(rho, want)
    })?;
    Ok(MleResult {
        state: SingleModeState::from_matrix_unchecked(cutoff, rho),
        iterations,
        converged,
        log_likelihood_per_event: *history.last().expect("history starts non-empty"),
        history,
    })
}

/// Resamples records with replacement and reconstructs each resample,
/// warm-starting from `centre`.
pub fn bootstrap_states(
    records: &[QuadratureRecord],
    centre: &TwoModeState,
    opts: &MleOptions,
    resamples: usize,
    seed: u64,
) -> Result<Vec<TwoModeState>> {
    if records.is_empty() {
        return Err(HomError::Empty("no records to resample".into()));
    }
    (0..resamples)
        .map(|k| {
            let mut r = rng::event_rng(seed, k as u64);
            let sample: Vec<QuadratureRecord> = (0..records.len())
                .map(|_| records[r.gen_range(0..records.len())])
                .collect();
            let data = bin_records(&sample, opts.bin_width)?;
            Ok(mle_reconstruct_from(&data, centre.clone(), opts)?.state)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{joint_density, sample_records, PhaseGrid};
    use approx::assert_abs_diff_eq;

    fn rec(theta1: f64, theta2: f64, x1: f64, x2: f64) -> QuadratureRecord {
        QuadratureRecord {
            theta1,
            theta2,
            x1,
            x2,
            tau1: 0.0,
            tau2: 0.0,
        }
    }

    #[test]
    fn binning_examples() {
        let grid = PhaseGrid::default();
        let recs: Vec<_> = grid
            .combinations()
            .into_iter()
            .map(|(a, b)| rec(a, b, 0.33, -1.2))
            .collect();
        let data = bin_records(&recs, 0.1).unwrap();
        assert_eq!(data.bins.len(), 36);
        assert!(data.bins.iter().all(|b| b.count == 1));

        let data = bin_records(&[rec(0.0, 30.0, 0.51, 0.52), rec(0.0, 30.0, 0.51, 0.52)], 0.1).unwrap();
        assert_eq!(data.bins.len(), 1);
        assert_eq!(data.bins[0].count, 2);
        assert_abs_diff_eq!(data.bins[0].x1, 0.55, epsilon = 1e-12);

        assert!(bin_records(&[], 0.1).is_err());
        assert!(bin_records(&recs, 0.0).is_err());
    }

    #[test]
    fn expand_preserves_counts() {
        let hom = TwoModeState::hom(FockCutoff::DEFAULT, 0.0);
        let recs = sample_records(&hom, &PhaseGrid::default(), 500, 4).unwrap();
        let data = bin_records(&recs, 0.1).unwrap();
        let back = bin_records(&data.expand(), 0.1).unwrap();
        assert_eq!(back.total, 500);
        assert_eq!(back, data);
    }

    #[test]
    fn likelihood_linear_in_counts_and_order_free() {
        let hom = TwoModeState::hom(FockCutoff::DEFAULT, 0.0);
        let recs = sample_records(&hom, &PhaseGrid::default(), 400, 5).unwrap();
        let data = bin_records(&recs, 0.1).unwrap();
        let ll = log_likelihood(&hom, &data).unwrap();
        let ll2 = log_likelihood(&hom, &data.scaled(2)).unwrap();
        assert_abs_diff_eq!(ll2, 2.0 * ll, epsilon = 1e-9 * ll.abs());
        let mut shuffled = data.clone();
        shuffled.bins.reverse();
        assert_abs_diff_eq!(log_likelihood(&hom, &shuffled).unwrap(), ll, epsilon = 1e-9 * ll.abs());
    }

    #[test]
    fn zero_probability_bin_is_reported() {
        // The density underflows to exactly zero this far out.
        let hom = TwoModeState::hom(FockCutoff::DEFAULT, 0.0);
        let data = BinnedData {
            width: 0.1,
            total: 1,
            bins: vec![Bin {
                theta1: 0.0,
                theta2: 0.0,
                x1: 40.05,
                x2: 0.05,
                count: 1,
            }],
        };
        assert!(matches!(log_likelihood(&hom, &data), Err(HomError::ZeroProbabilityBin)));
    }

    #[test]
    fn exact_frequencies_give_fixed_point() {
        let c = FockCutoff::new(3).unwrap();
        let target = TwoModeState::from_terms(
            c,
            &[
                (1, 1, C64::new(0.6, 0.0)),
                (2, 0, C64::new(0.0, 0.48)),
                (0, 2, C64::new(-0.64, 0.0)),
            ],
        )
        .unwrap();
        let w = 0.1;
        let grid = PhaseGrid::new(vec![0.0, 45.0, 90.0, 135.0]).unwrap();
        let centres: Vec<f64> = (-60..60).map(|k| centre(k, w)).collect();
        let mut bins = Vec::new();
        for (t1, t2) in grid.combinations() {
            for &x1 in &centres {
                for &x2 in &centres {
                    let p = w * w * joint_density(&target, t1, t2, x1, x2);
                    bins.push((t1, t2, x1, x2, p.max(1e-300)));
                }
            }
        }
        let problem = TwoModeProblem::from_weights(w, c, bins).unwrap();
        // mixing in a tiny floor keeps every bin strictly positive
        let mixed = TwoModeState::from_matrix_unchecked(
            c,
            target.matrix() * C64::new(1.0 - 1e-14, 0.0) + CMatrix::identity(16, 16) * C64::new(1e-14 / 16.0, 0.0),
        );
        let next = problem.step(&mixed, 1.0).unwrap();
        let err = (next.matrix() - mixed.matrix())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "fixed-point error {err}");
    }

    #[test]
    fn options_validation() {
        assert!(MleOptions {
            dilution: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MleOptions {
            dilution: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MleOptions {
            bin_width: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(MleOptions::default().validate().is_ok());
    }

    #[test]
    fn single_mode_vacuum_recovery() {
        let c = FockCutoff::DEFAULT;
        let vac = TwoModeState::vacuum(c);
        let recs = sample_records(&vac, &PhaseGrid::default(), 5000, 11).unwrap();
        let data = bin_single_mode(&recs, Mode::Two, 0.1).unwrap();
        let res = mle_reconstruct_single(&data, c, &MleOptions::default()).unwrap();
        assert!(res.state.population(0) > 0.97);
        assert!(res.history.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}
