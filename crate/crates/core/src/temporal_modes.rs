//! Temporal wavepackets of the released photons, their overlaps, PCA mode
//! estimation from homodyne traces, and storage-time purity decay.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fock::SingleModeState;
use crate::quadrature::{QuadratureLattice, SingleModeSampler};
use crate::rng::event_rng;

/// Fraction of a wavepacket's norm allowed to fall outside its grid.
pub const TAIL_TOLERANCE: f64 = 1e-9;

/// Uniform time lattice in ns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl TimeGrid {
    /// Points `t0, t0 + dt, …` up to and including `t1`.
    pub fn new(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !t0.is_finite() || !t1.is_finite() || t1 <= t0 {
            return Err(HomError::param(format!("invalid time grid [{t0}, {t1}] step {dt}")));
        }
        let len = ((t1 - t0) / dt + 1e-9).floor() as usize + 1;
        Ok(TimeGrid { t0, dt, len })
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.time(i)).collect()
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            t0: -100.0,
            dt: 2.0,
            len: 801,
        }
    }
}

/// Real wavepacket sampled on a uniform grid, in ns^(-1/2).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFunction {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
}

impl ModeFunction {
    /// Checks `Σ f² dt = 1` within 1e-9.
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        let mode = Self::raw(t0, dt, samples)?;
        let norm = mode.norm_sq();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(HomError::state(format!("mode norm {norm} differs from 1")));
        }
        Ok(mode)
    }

    /// Rescales to unit norm.
    pub fn normalized(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        let mut mode = Self::raw(t0, dt, samples)?;
        let norm = mode.norm_sq();
        if norm < 1e-12 {
            return Err(HomError::Numerical("mode has vanishing norm".into()));
        }
        let s = norm.sqrt();
        mode.samples.iter_mut().for_each(|v| *v /= s);
        Ok(mode)
    }

    fn raw(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || !t0.is_finite() {
            return Err(HomError::param("mode grid needs finite start and positive step"));
        }
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return Err(HomError::state("mode samples must be finite and non-empty"));
        }
        Ok(ModeFunction { t0, dt, samples })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t0: self.t0,
            dt: self.dt,
            len: self.samples.len(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid().times()
    }

    pub fn norm_sq(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() * self.dt
    }

    /// Linear interpolation, zero outside the grid.
    pub fn value_at(&self, t: f64) -> f64 {
        let u = (t - self.t0) / self.dt;
        if u < 0.0 || u > (self.samples.len() - 1) as f64 {
            return 0.0;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.samples.len() {
            return self.samples[self.samples.len() - 1];
        }
        let w = u - i as f64;
        self.samples[i] * (1.0 - w) + self.samples[i + 1] * w
    }

    /// Full width at half maximum of `f²`, crossings linearly interpolated.
    pub fn intensity_fwhm(&self) -> f64 {
        let intensity: Vec<f64> = self.samples.iter().map(|v| v * v).collect();
        let peak = intensity.iter().cloned().fold(0.0, f64::max);
        let half = peak / 2.0;
        let first = intensity.iter().position(|&v| v >= half).unwrap_or(0);
        let last = intensity.iter().rposition(|&v| v >= half).unwrap_or(0);
        let cross = |lo: usize, hi: usize| {
            let (a, b) = (intensity[lo], intensity[hi]);
            lo as f64 + (half - a) / (b - a) * (hi as f64 - lo as f64)
        };
        let left = if first == 0 { 0.0 } else { cross(first - 1, first) };
        let right = if last + 1 == intensity.len() {
            last as f64
        } else {
            last as f64 + (intensity[last] - half) / (intensity[last] - intensity[last + 1])
        };
        (right - left) * self.dt
    }

    fn aligned_offset(&self, other: &ModeFunction) -> Option<isize> {
        if (self.dt - other.dt).abs() > 1e-12 * self.dt {
            return None;
        }
        let off = (other.t0 - self.t0) / self.dt;
        let k = off.round();
        ((off - k).abs() < 1e-9).then_some(k as isize)
    }
}

/// Release model of one memory: purity decay plus the wavepacket shape
/// `(1 − e^{−γ_rise s}) e^{−γ_fall s}` with `s = t − τ − release_delay`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryModel {
    pub p0: f64,
    /// ns
    pub tau_life: f64,
    /// ns
    pub release_delay: f64,
    /// ns⁻¹
    pub gamma_rise: f64,
    /// ns⁻¹
    pub gamma_fall: f64,
}

/// Shape rate giving a 100 ns intensity FWHM with equal rise and fall.
pub const DEFAULT_GAMMA: f64 = 0.012_116_524_9;
/// Fall-rate offset of the second memory giving a 0.992 overlap.
pub const DEFAULT_FALL_OFFSET: f64 = 0.001_768_544_4;

impl MemoryModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p0) {
            return Err(HomError::param(format!("initial purity {} outside [0,1]", self.p0)));
        }
        if !(self.tau_life > 0.0) {
            return Err(HomError::param("memory lifetime must be positive"));
        }
        if !(self.release_delay >= 0.0) || !(self.gamma_rise > 0.0) || !(self.gamma_fall > 0.0) {
            return Err(HomError::param(
                "mode shape needs non-negative delay and positive rates",
            ));
        }
        Ok(())
    }

    /// Memory-1 fit: 0.602, 2.3 μs.
    pub fn memory1() -> Self {
        MemoryModel {
            p0: 0.602,
            tau_life: 2300.0,
            release_delay: 50.0,
            gamma_rise: DEFAULT_GAMMA,
            gamma_fall: DEFAULT_GAMMA,
        }
    }

    /// Memory-2 fit: 0.637, 1.7 μs.
    pub fn memory2() -> Self {
        MemoryModel {
            p0: 0.637,
            tau_life: 1700.0,
            release_delay: 50.0,
            gamma_rise: DEFAULT_GAMMA,
            gamma_fall: DEFAULT_GAMMA + DEFAULT_FALL_OFFSET,
        }
    }

    /// Unnormalized amplitude at `s` ns after release.
    pub fn shape(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            -(-self.gamma_rise * s).exp_m1() * (-self.gamma_fall * s).exp()
        }
    }

    fn square_terms(&self) -> [(f64, f64); 3] {
        let (a, b) = (self.gamma_rise, self.gamma_fall);
        [(1.0, 2.0 * b), (-2.0, a + 2.0 * b), (1.0, 2.0 * a + 2.0 * b)]
    }

    /// `∫_s^∞ shape² ds'`.
    pub fn tail_norm(&self, s: f64) -> f64 {
        let s = s.max(0.0);
        self.square_terms().iter().map(|(w, c)| w * (-c * s).exp() / c).sum()
    }

    /// `∫_0^∞ shape² ds`.
    pub fn norm_sq(&self) -> f64 {
        self.tail_norm(0.0)
    }

    /// `Σ_j shape²(φ + j dt)` over the infinite lattice with phase φ.
    fn lattice_norm(&self, phase: f64, dt: f64) -> f64 {
        self.square_terms()
            .iter()
            .map(|(w, c)| w * (-c * phase).exp() / -(-c * dt).exp_m1())
            .sum()
    }

    /// Transmissivity of the storage loss after `tau` ns.
    pub fn storage_eta(&self, tau: f64) -> f64 {
        (-tau / self.tau_life).exp()
    }
}

/// `f(t; τ)` on `grid`. Shifting `tau` by whole grid steps moves the samples
/// by the same number of indices without changing them.
pub fn mode_function(model: &MemoryModel, tau: f64, grid: &TimeGrid) -> Result<ModeFunction> {
    model.validate()?;
    if !(tau >= 0.0) {
        return Err(HomError::param(format!("storage time {tau} must be non-negative")));
    }
    let start = tau + model.release_delay;
    if start < grid.t0 {
        return Err(HomError::param(format!(
            "wavepacket starts at {start} ns, before the grid"
        )));
    }
    let tail = model.tail_norm(grid.end() - start) / model.norm_sq();
    if tail > TAIL_TOLERANCE {
        return Err(HomError::param(format!(
            "grid ends at {} ns and misses {tail:.2e} of the wavepacket norm",
            grid.end()
        )));
    }
    let origin = grid.t0 - model.release_delay;
    let shift = tau / grid.dt;
    let s_at = |i: f64| origin + (i - shift) * grid.dt;
    let first = (shift - origin / grid.dt).ceil();
    let norm = model.lattice_norm(s_at(first), grid.dt) * grid.dt;
    let scale = 1.0 / norm.sqrt();
    let samples = (0..grid.len).map(|i| model.shape(s_at(i as f64)) * scale).collect();
    ModeFunction::new(grid.t0, grid.dt, samples)
}

/// `|∫ f g dt|²` by the trapezoid rule. Grids that are not index-aligned
/// are bridged by interpolating `g` onto `f`'s grid.
pub fn overlap(f: &ModeFunction, g: &ModeFunction) -> Result<f64> {
    let (f_end, g_end) = (f.grid().end(), g.grid().end());
    if f_end < g.t0 || g_end < f.t0 {
        return Err(HomError::param("wavepackets are defined on disjoint grids"));
    }
    let products: Vec<f64> = match f.aligned_offset(g) {
        Some(k) => (0..f.samples.len() as isize)
            .filter_map(|i| {
                let j = i - k;
                (j >= 0 && (j as usize) < g.samples.len()).then(|| f.samples[i as usize] * g.samples[j as usize])
            })
            .collect(),
        None => f
            .times()
            .iter()
            .zip(&f.samples)
            .filter(|(t, _)| **t >= g.t0 && **t <= g_end)
            .map(|(t, v)| v * g.value_at(*t))
            .collect(),
    };
    Ok(trapezoid(&products, f.dt).powi(2).min(1.0))
}

fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => 0.0,
        n => (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])) * dt,
    }
}

/// Normalized `f1 + f2`.
pub fn signal_mode(f1: &ModeFunction, f2: &ModeFunction) -> Result<ModeFunction> {
    if f1.aligned_offset(f2) != Some(0) || f1.samples.len() != f2.samples.len() {
        return Err(HomError::param("signal mode needs both wavepackets on one grid"));
    }
    let sum: Vec<f64> = f1.samples.iter().zip(&f2.samples).map(|(a, b)| a + b).collect();
    let norm = sum.iter().map(|v| v * v).sum::<f64>() * f1.dt;
    if norm.sqrt() < 1e-6 {
        return Err(HomError::Numerical("wavepackets cancel in the signal mode".into()));
    }
    ModeFunction::normalized(f1.t0, f1.dt, sum)
}

/// Principal components of a batch of traces.
#[derive(Clone, Debug)]
pub struct PcaResult {
    pub mode: ModeFunction,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors as columns, in the order of `eigenvalues`.
    pub components: DMatrix<f64>,
}

/// Leading eigenvector of `⟨x(t_i) x(t_j)⟩` over the rows of `traces`.
/// Sign is chosen so the largest-magnitude sample is positive.
pub fn pca_estimate(traces: &DMatrix<f64>, t0: f64, dt: f64) -> Result<PcaResult> {
    if traces.nrows() < 2 || traces.ncols() < 2 {
        return Err(HomError::param("PCA needs at least two traces of two samples"));
    }
    let moment = traces.tr_mul(traces) / traces.nrows() as f64;
    let eig = SymmetricEigen::new(moment);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let trace: f64 = eigenvalues.iter().sum();
    if eigenvalues[0] - eigenvalues[1] < 1e-6 * trace.abs() {
        return Err(HomError::Numerical("leading principal component is degenerate".into()));
    }
    let mut components = DMatrix::from_fn(traces.ncols(), order.len(), |i, k| eig.eigenvectors[(i, order[k])]);
    for k in 0..components.ncols() {
        let mut col = components.column_mut(k);
        let peak = col
            .iter()
            .cloned()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if peak < 0.0 {
            col.neg_mut();
        }
    }
    let scale = 1.0 / dt.sqrt();
    let samples = components.column(0).iter().map(|v| v * scale).collect();
    let mode = ModeFunction::normalized(t0, dt, samples)?;
    Ok(PcaResult {
        mode,
        eigenvalues,
        components,
    })
}

/// Homodyne traces `x_i = ξ_i + (q − u·ξ) u_i` with `u = f √dt`, `ξ` white
/// vacuum noise of variance 1/2 per bin and `q` the quadrature of `photon`.
/// The mode-matched projection `u·x` is then exactly `q`.
pub fn synthesize_traces(
    mode: &ModeFunction,
    photon: &SingleModeState,
    count: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let sampler = SingleModeSampler::new(photon, 0.0, &QuadratureLattice::default())?;
    let u: Vec<f64> = mode.samples.iter().map(|v| v * mode.dt.sqrt()).collect();
    let noise = Normal::new(0.0, 0.5f64.sqrt()).expect("positive deviation");
    let mut out = DMatrix::zeros(count, u.len());
    let mut xi = vec![0.0; u.len()];
    for i in 0..count {
        let mut rng = event_rng(seed, i as u64);
        let q = sampler.sample(&mut rng);
        xi.iter_mut().for_each(|v| *v = noise.sample(&mut rng));
        let proj: f64 = xi.iter().zip(&u).map(|(a, b)| a * b).sum();
        for j in 0..u.len() {
            out[(i, j)] = xi[j] + (q - proj) * u[j];
        }
    }
    Ok(out)
}

/// `P0 e^{−τ/τ̃}`.
pub fn purity_vs_storage(model: &MemoryModel, tau: f64) -> f64 {
    model.p0 * model.storage_eta(tau)
}

/// Storage time at which the purity decays to `threshold`.
pub fn purity_crossing(model: &MemoryModel, threshold: f64) -> Result<f64> {
    if model.p0 <= threshold {
        return Err(HomError::NoCrossing(format!(
            "initial purity {} already at or below {threshold}",
            model.p0
        )));
    }
    Ok(model.tau_life * (model.p0 / threshold).ln())
}

/// One row of the storage-time table of a memory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorageRow {
    pub tau_ns: f64,
    pub purity: f64,
    /// Overlap with the signal mode shifted by the same storage time.
    pub signal_overlap: f64,
    /// Purity in the shifted signal mode.
    pub signal_purity: f64,
}

pub fn storage_table(model: &MemoryModel, signal: &ModeFunction, taus: &[f64]) -> Result<Vec<StorageRow>> {
    let grid = signal.grid();
    taus.iter()
        .map(|&tau| {
            let f = mode_function(model, tau, &grid)?;
            let steps = (tau / grid.dt).round();
            let shifted = ModeFunction::raw(grid.t0 + steps * grid.dt, grid.dt, signal.samples.clone())?;
            let c = overlap(&f, &shifted)?;
            let purity = purity_vs_storage(model, tau);
            Ok(StorageRow {
                tau_ns: tau,
                purity,
                signal_overlap: c,
                signal_purity: purity * c,
            })
        })
        .collect()
}

struct AnalyticPair {
    m1: MemoryModel,
    m2: MemoryModel,
    n1: f64,
    n2: f64,
    hom_norm: f64,
    times: Vec<f64>,
    dt: f64,
}

impl AnalyticPair {
    fn new(m1: &MemoryModel, m2: &MemoryModel, max_shift: f64) -> Self {
        let dt = 0.5;
        let slow = m1.gamma_fall.min(m2.gamma_fall);
        let late = m1.release_delay.max(m2.release_delay) + 16.0 / slow + max_shift;
        let early = m1.release_delay.min(m2.release_delay) - max_shift;
        let times: Vec<f64> = (0..=((late - early) / dt).ceil() as usize)
            .map(|i| early + i as f64 * dt)
            .collect();
        let mut pair = AnalyticPair {
            m1: *m1,
            m2: *m2,
            n1: m1.norm_sq().sqrt(),
            n2: m2.norm_sq().sqrt(),
            hom_norm: 1.0,
            times,
            dt,
        };
        let norm: f64 = pair
            .times
            .iter()
            .map(|&t| (pair.f1(t) + pair.f2(t)).powi(2))
            .sum::<f64>()
            * dt;
        pair.hom_norm = norm.sqrt();
        pair
    }

    fn f1(&self, t: f64) -> f64 {
        self.m1.shape(t - self.m1.release_delay) / self.n1
    }

    fn f2(&self, t: f64) -> f64 {
        self.m2.shape(t - self.m2.release_delay) / self.n2
    }

    fn hom(&self, t: f64) -> f64 {
        (self.f1(t) + self.f2(t)) / self.hom_norm
    }

    /// Overlaps of photon 1 at 0 and photon 2 at `shift` with the signal
    /// mode centred between them.
    fn overlaps(&self, shift: f64) -> (f64, f64) {
        let half = shift / 2.0;
        let mut a = 0.0;
        let mut b = 0.0;
        for &t in &self.times {
            let h = self.hom(t - half);
            a += self.f1(t) * h;
            b += self.f2(t - shift) * h;
        }
        ((a * self.dt).powi(2), (b * self.dt).powi(2))
    }

    fn mean_purity(&self, shift: f64) -> f64 {
        let (c1, c2) = self.overlaps(shift);
        0.5 * (self.m1.p0 * c1 + self.m2.p0 * c2)
    }

    /// Average over timing mismatch uniform in `[−window, window]`.
    fn window_purity(&self, window: f64) -> f64 {
        if window <= 0.0 {
            return self.mean_purity(0.0);
        }
        let n = 64;
        let h = 2.0 * window / n as f64;
        let mut sum = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            sum += w * self.mean_purity(-window + k as f64 * h);
        }
        sum * h / 3.0 / (2.0 * window)
    }
}

/// Average purity in the mean-timing signal mode over a uniform timing
/// mismatch in `[−window, window]` ns.
pub fn window_average_purity(m1: &MemoryModel, m2: &MemoryModel, window: f64) -> Result<f64> {
    m1.validate()?;
    m2.validate()?;
    Ok(AnalyticPair::new(m1, m2, window.abs()).window_purity(window.abs()))
}

/// Mismatch window at which the average purity falls to `threshold`.
pub fn coherence_time(m1: &MemoryModel, m2: &MemoryModel, threshold: f64) -> Result<f64> {
    m1.validate()?;
    m2.validate()?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(HomError::param(format!("threshold {threshold} outside (0,1)")));
    }
    let max_window = 20.0 / m1.gamma_fall.min(m2.gamma_fall).min(m1.gamma_rise.min(m2.gamma_rise));
    let pair = AnalyticPair::new(m1, m2, max_window);
    let start = pair.window_purity(0.0);
    if 0.5 * (m1.p0 + m2.p0) <= threshold || start <= threshold {
        return Err(HomError::NoCrossing(format!(
            "average purity {start:.4} starts at or below {threshold}"
        )));
    }
    let mut hi = 10.0;
    while pair.window_purity(hi) > threshold {
        hi *= 2.0;
        if hi > max_window {
            return Err(HomError::NoCrossing(format!("average purity stays above {threshold}")));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if pair.window_purity(mid) > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisects a fall-rate offset for `model` so its wavepacket overlaps the
/// unmodified one by `target`.
pub fn calibrate_fall_offset(model: &MemoryModel, target: f64, grid: &TimeGrid) -> Result<f64> {
    if !(target > 0.0 && target < 1.0) {
        return Err(HomError::param(format!("target overlap {target} outside (0,1)")));
    }
    let base = mode_function(model, 0.0, grid)?;
    let at = |offset: f64| -> Result<f64> {
        let m = MemoryModel {
            gamma_fall: model.gamma_fall + offset,
            ..*model
        };
        overlap(&base, &mode_function(&m, 0.0, grid)?)
    };
    let (mut lo, mut hi) = (0.0, model.gamma_fall);
    if at(hi)? > target {
        return Err(HomError::NoCrossing("overlap stays above target".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bisects the common rise/fall rate giving an intensity FWHM of `target` ns.
pub fn calibrate_width(target: f64, grid: &TimeGrid) -> Result<f64> {
    let width = |g: f64| -> Result<f64> {
        let m = MemoryModel {
            gamma_rise: g,
            gamma_fall: g,
            ..MemoryModel::memory1()
        };
        Ok(mode_function(&m, 0.0, grid)?.intensity_fwhm())
    };
    let (mut lo, mut hi) = (5e-3, 1.0);
    if width(lo)? < target || width(hi)? > target {
        return Err(HomError::NoCrossing(format!(
            "width {target} ns not reachable on this grid"
        )));
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if width(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockCutoff;
    use approx::assert_abs_diff_eq;

    fn fine() -> TimeGrid {
        TimeGrid::new(-100.0, 2500.0, 0.25).unwrap()
    }

    #[test]
    fn shift_is_exact_on_grid() {
        let g = TimeGrid::default();
        for m in [MemoryModel::memory1(), MemoryModel::memory2()] {
            let f0 = mode_function(&m, 0.0, &g).unwrap();
            for tau in [2.0, 100.0, 500.0] {
                let f = mode_function(&m, tau, &g).unwrap();
                let k = (tau / g.dt) as usize;
                for i in 0..g.len {
                    let expect = if i >= k { f0.samples()[i - k] } else { 0.0 };
                    assert_eq!(f.samples()[i], expect, "tau {tau} index {i}");
                }
                assert_abs_diff_eq!(f.norm_sq(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn short_grid_is_rejected() {
        let g = TimeGrid::new(-100.0, 1000.0, 2.0).unwrap();
        assert!(mode_function(&MemoryModel::memory1(), 0.0, &g).is_ok());
        assert!(mode_function(&MemoryModel::memory1(), 500.0, &g).is_err());
        assert!(mode_function(&MemoryModel::memory1(), -1.0, &g).is_err());
    }

    #[test]
    fn calibrated_defaults() {
        let g = fine();
        let f1 = mode_function(&MemoryModel::memory1(), 0.0, &g).unwrap();
        let f2 = mode_function(&MemoryModel::memory2(), 0.0, &g).unwrap();
        assert_abs_diff_eq!(f1.intensity_fwhm(), 100.0, epsilon = 0.05);
        assert_abs_diff_eq!(overlap(&f1, &f2).unwrap(), 0.992, epsilon = 1e-4);
        let gamma = calibrate_width(100.0, &g).unwrap();
        assert_abs_diff_eq!(gamma, DEFAULT_GAMMA, epsilon = 1e-5);
        let off = calibrate_fall_offset(&MemoryModel::memory1(), 0.992, &g).unwrap();
        assert_abs_diff_eq!(off, DEFAULT_FALL_OFFSET, epsilon = 1e-5);
    }

    #[test]
    fn overlap_properties() {
        let g = TimeGrid::default();
        let m = MemoryModel::memory1();
        let f = mode_function(&m, 0.0, &g).unwrap();
        assert_abs_diff_eq!(overlap(&f, &f).unwrap(), 1.0, epsilon = 1e-12);
        let mut last = 1.0;
        for k in 1..40 {
            let shifted = mode_function(&m, 5.0 * k as f64, &g).unwrap();
            let c = overlap(&f, &shifted).unwrap();
            assert_abs_diff_eq!(c, overlap(&shifted, &f).unwrap(), epsilon = 1e-14);
            assert!(c < last, "{c} {last}");
            last = c;
        }
        let other = ModeFunction::new(5000.0, 2.0, vec![0.0, 1.0 / 2f64.sqrt(), 0.0]).unwrap();
        assert!(overlap(&f, &other).is_err());
    }

    #[test]
    fn overlap_across_grids_matches_analytic() {
        // Oracle: closed-form overlap of two exponentials-difference shapes.
        let m1 = MemoryModel::memory1();
        let m2 = MemoryModel::memory2();
        let cross = |a: &MemoryModel, b: &MemoryModel| {
            let terms = [
                (1.0, a.gamma_fall + b.gamma_fall),
                (-1.0, a.gamma_rise + a.gamma_fall + b.gamma_fall),
                (-1.0, a.gamma_fall + b.gamma_rise + b.gamma_fall),
                (1.0, a.gamma_rise + a.gamma_fall + b.gamma_rise + b.gamma_fall),
            ];
            terms.iter().map(|(w, c)| w / c).sum::<f64>()
        };
        let oracle = cross(&m1, &m2).powi(2) / (m1.norm_sq() * m2.norm_sq());
        let f1 = mode_function(&m1, 0.0, &fine()).unwrap();
        let f2 = mode_function(&m2, 0.0, &TimeGrid::new(-99.9, 2500.0, 0.3).unwrap()).unwrap();
        assert_abs_diff_eq!(overlap(&f1, &f2).unwrap(), oracle, epsilon = 1e-5);
        let f2_same = mode_function(&m2, 0.0, &fine()).unwrap();
        assert_abs_diff_eq!(overlap(&f1, &f2_same).unwrap(), oracle, epsilon = 1e-6);
    }

    #[test]
    fn signal_mode_examples() {
        let g = TimeGrid::default();
        let f1 = mode_function(&MemoryModel::memory1(), 0.0, &g).unwrap();
        let f2 = mode_function(&MemoryModel::memory2(), 0.0, &g).unwrap();
        let same = signal_mode(&f1, &f1).unwrap();
        for (a, b) in same.samples().iter().zip(f1.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
        assert_eq!(signal_mode(&f1, &f2).unwrap(), signal_mode(&f2, &f1).unwrap());
        let neg = ModeFunction::new(f1.t0(), f1.dt(), f1.samples().iter().map(|v| -v).collect()).unwrap();
        assert!(signal_mode(&f1, &neg).is_err());

        let hom = signal_mode(&f1, &f2).unwrap();
        for (m, rows) in [(MemoryModel::memory1(), 0), (MemoryModel::memory2(), 1)] {
            let table = storage_table(&m, &hom, &[0.0, 100.0, 250.0, 500.0]).unwrap();
            assert_eq!(table.len(), 4, "{rows}");
            for row in table {
                assert!(row.signal_overlap >= 0.96, "{row:?}");
            }
        }
    }

    #[test]
    fn purity_decay_table() {
        let m1 = MemoryModel::memory1();
        let m2 = MemoryModel::memory2();
        assert_eq!(purity_vs_storage(&m1, 0.0), 0.602);
        assert_abs_diff_eq!(
            purity_vs_storage(&m2, 500.0),
            0.637 * (-500.0f64 / 1700.0).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(purity_vs_storage(&m2, 500.0), 0.472, epsilon = 0.005);
        assert_abs_diff_eq!(purity_vs_storage(&m1, 500.0), 0.493, epsilon = 0.01);
        let c1 = purity_crossing(&m1, 0.5).unwrap();
        let c2 = purity_crossing(&m2, 0.5).unwrap();
        assert!(
            (380.0..460.0).contains(&c1) && (380.0..460.0).contains(&c2),
            "{c1} {c2}"
        );
        let a = purity_vs_storage(&m1, 120.0);
        let split = MemoryModel { p0: a, ..m1 };
        assert_abs_diff_eq!(
            purity_vs_storage(&split, 300.0),
            purity_vs_storage(&m1, 420.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn coherence_time_examples() {
        let m1 = MemoryModel::memory1();
        let m2 = MemoryModel::memory2();
        let t = coherence_time(&m1, &m2, 0.5).unwrap();
        assert!((40.0..120.0).contains(&t), "{t}");
        assert_abs_diff_eq!(window_average_purity(&m1, &m2, t).unwrap(), 0.5, epsilon = 1e-6);

        let same = MemoryModel { p0: 0.7, ..m1 };
        assert!(coherence_time(&same, &same, 0.5).unwrap() > 0.0);
        let mut last = f64::INFINITY;
        for w in [0.0, 10.0, 30.0, 60.0, 100.0, 200.0] {
            let p = window_average_purity(&same, &same, w).unwrap();
            assert!(p <= last + 1e-12, "{w} {p} {last}");
            last = p;
        }
        let low = MemoryModel { p0: 0.5, ..m1 };
        assert!(matches!(coherence_time(&low, &low, 0.5), Err(HomError::NoCrossing(_))));
        assert!(coherence_time(&m1, &m2, 1.0).is_err());
    }

    #[test]
    fn pca_recovers_generator_and_vacuum_is_flat() {
        let grid = TimeGrid::new(-100.0, 400.0, 10.0).unwrap();
        let m = MemoryModel {
            release_delay: 0.0,
            gamma_rise: 0.05,
            gamma_fall: 0.05,
            ..MemoryModel::memory1()
        };
        let f = mode_function(&m, 0.0, &grid).unwrap();
        let c = FockCutoff::DEFAULT;
        let photon = SingleModeState::fock(c, 1).unwrap();
        let traces = synthesize_traces(&f, &photon, 4000, 3).unwrap();
        let pca = pca_estimate(&traces, grid.t0, grid.dt).unwrap();
        assert!(overlap(&pca.mode, &f).unwrap() > 0.97);
        assert_abs_diff_eq!(pca.eigenvalues[0], 1.5, epsilon = 0.1);
        let gram = pca.components.tr_mul(&pca.components);
        assert!((gram - DMatrix::identity(grid.len, grid.len)).amax() < 1e-10);

        let vacuum = SingleModeState::vacuum(c);
        let traces = synthesize_traces(&f, &vacuum, 20000, 4).unwrap();
        let pca = pca_estimate(&traces, grid.t0, grid.dt).unwrap();
        for e in &pca.eigenvalues {
            assert!((e - 0.5).abs() < 0.05, "{e}");
        }
        assert!(pca_estimate(&DMatrix::zeros(1, 4), 0.0, 1.0).is_err());
    }
}
