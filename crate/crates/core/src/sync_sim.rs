//! Dual-heralding synchronization: analytic event rate and Monte-Carlo
//! simulation of two independent heralded memories.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Gamma, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::rng::{derive_seed, stage_rng};
use crate::temporal_modes::{purity_vs_storage, MemoryModel};

/// How heralds are turned into release events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncModel {
    /// Every cross-memory herald pair closer than `τ_max` in measurement
    /// time releases; no gate edges, no dead time, no blocking.
    #[default]
    Coincidence,
    /// Store-first-herald state machine with gate edges, same-memory
    /// blocking and optional dead time after a failed window.
    Controller,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncConfig {
    /// Time-averaged herald rates, cps.
    pub r1: f64,
    pub r2: f64,
    pub duty: f64,
    /// μs
    pub tau_max: f64,
    /// μs
    #[serde(default = "default_dead_time")]
    pub dead_time: f64,
    #[serde(default = "default_true")]
    pub dead_time_enabled: bool,
    /// μs
    #[serde(default = "default_period")]
    pub period: f64,
    /// s
    pub total_time: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: SyncModel,
}

fn default_dead_time() -> f64 {
    5.0
}

fn default_true() -> bool {
    true
}

fn default_period() -> f64 {
    200.0
}

impl Default for SyncConfig {
    fn default() -> Self {
        SyncConfig {
            r1: 3200.0,
            r2: 3200.0,
            duty: 0.4,
            tau_max: 1.8,
            dead_time: 5.0,
            dead_time_enabled: true,
            period: 200.0,
            total_time: 3600.0,
            seed: 1,
            model: SyncModel::Coincidence,
        }
    }
}

impl SyncConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r1 >= 0.0 && self.r2 >= 0.0) || !self.r1.is_finite() || !self.r2.is_finite() {
            return Err(HomError::param("herald rates must be finite and non-negative"));
        }
        if !(self.duty > 0.0 && self.duty <= 1.0) {
            return Err(HomError::param(format!("duty cycle {} outside (0,1]", self.duty)));
        }
        if !(self.tau_max > 0.0) || !(self.dead_time >= 0.0) || !(self.period > 0.0) || !(self.total_time > 0.0) {
            return Err(HomError::param(
                "window, dead time, period and total time must be positive",
            ));
        }
        Ok(())
    }

    pub fn with_tau_max(&self, tau_max: f64) -> Self {
        SyncConfig {
            tau_max,
            ..self.clone()
        }
    }

    fn tau_s(&self) -> f64 {
        self.tau_max * 1e-6
    }

    fn in_phase_rates(&self) -> (f64, f64) {
        (self.r1 / self.duty, self.r2 / self.duty)
    }
}

/// One synchronized release. The first-heralded photon carries the full
/// wait; the other has storage 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeraldEvent {
    #[serde(rename = "release_time_s")]
    pub release_time: f64,
    #[serde(rename = "storage1_ns")]
    pub storage1: f64,
    #[serde(rename = "storage2_ns")]
    pub storage2: f64,
}

impl HeraldEvent {
    pub fn storage(&self) -> f64 {
        self.storage1.max(self.storage2)
    }
}

/// `2 τ_max R1 R2 / δ` in cps.
pub fn analytic_dual_rate(cfg: &SyncConfig) -> f64 {
    let (l1, l2) = cfg.in_phase_rates();
    if cfg.tau_s() * l1.max(l2) > 0.05 {
        log::warn!(
            "window {} μs is not small against the herald spacing; rate formula is approximate",
            cfg.tau_max
        );
    }
    2.0 * cfg.tau_s() * cfg.r1 * cfg.r2 / cfg.duty
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncSummary {
    pub model: SyncModel,
    pub total_time_s: f64,
    pub measurement_time_s: f64,
    pub heralds: [u64; 2],
    pub events: u64,
    pub rate_cps: f64,
    pub analytic_cps: f64,
    /// Poisson standard error of `rate_cps` at the analytic rate.
    pub poisson_se_cps: f64,
    /// Stored photons discarded without a partner.
    pub failures: u64,
    pub histogram_bin_ns: f64,
    /// Counts of the nonzero storage time over `[0, τ_max]`.
    pub histogram: Vec<u64>,
}

const HISTOGRAM_BINS: usize = 20;

struct Collector<'a, F: FnMut(&HeraldEvent)> {
    cfg: &'a SyncConfig,
    window_s: f64,
    visit: F,
    events: u64,
    histogram: Vec<u64>,
}

impl<F: FnMut(&HeraldEvent)> Collector<'_, F> {
    fn emit(&mut self, release_measurement_s: f64, first: u8, wait_s: f64) {
        let cycles = (release_measurement_s / self.window_s).floor();
        let release_time = cycles * self.cfg.period * 1e-6 + (release_measurement_s - cycles * self.window_s);
        let wait_ns = wait_s * 1e9;
        let (storage1, storage2) = if first == 0 { (wait_ns, 0.0) } else { (0.0, wait_ns) };
        let bin = ((wait_ns / (self.cfg.tau_max * 1e3)) * HISTOGRAM_BINS as f64) as usize;
        self.histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
        self.events += 1;
        (self.visit)(&HeraldEvent {
            release_time,
            storage1,
            storage2,
        });
    }
}

/// Runs the simulation, handing each event to `visit` in release order.
pub fn simulate_dual_heralds_with<F: FnMut(&HeraldEvent)>(cfg: &SyncConfig, visit: F) -> Result<SyncSummary> {
    cfg.validate()?;
    let analytic = analytic_dual_rate(cfg);
    if analytic * cfg.total_time < 1.0 {
        log::warn!("total time {} s gives fewer than one expected event", cfg.total_time);
    }
    let measurement = cfg.duty * cfg.total_time;
    let mut col = Collector {
        cfg,
        window_s: cfg.duty * cfg.period * 1e-6,
        visit,
        events: 0,
        histogram: vec![0; HISTOGRAM_BINS],
    };
    let mut rng = stage_rng(derive_seed(cfg.seed, "sync"));
    let (heralds, failures) = match cfg.model {
        SyncModel::Coincidence => (coincidence(cfg, measurement, &mut rng, &mut col), 0),
        SyncModel::Controller => controller(cfg, measurement, &mut rng, &mut col),
    };
    let rate = col.events as f64 / cfg.total_time;
    Ok(SyncSummary {
        model: cfg.model,
        total_time_s: cfg.total_time,
        measurement_time_s: measurement,
        heralds,
        events: col.events,
        rate_cps: rate,
        analytic_cps: analytic,
        poisson_se_cps: (analytic / cfg.total_time).sqrt(),
        failures,
        histogram_bin_ns: cfg.tau_max * 1e3 / HISTOGRAM_BINS as f64,
        histogram: col.histogram,
    })
}

/// Collects all events in memory.
pub fn simulate_dual_heralds(cfg: &SyncConfig) -> Result<(Vec<HeraldEvent>, SyncSummary)> {
    let mut events = Vec::new();
    let summary = simulate_dual_heralds_with(cfg, |e| events.push(*e))?;
    Ok((events, summary))
}

fn label(rng: &mut ChaCha8Rng, p_first: f64) -> u8 {
    if rng.gen::<f64>() < p_first {
        0
    } else {
        1
    }
}

/// Merged herald stream in measurement time. Runs of isolated heralds
/// (neighbours further than `τ` on both sides) are skipped in bulk: their
/// number is geometric and their total duration `kτ + Gamma(k)`.
fn coincidence<F: FnMut(&HeraldEvent)>(
    cfg: &SyncConfig,
    end: f64,
    rng: &mut ChaCha8Rng,
    col: &mut Collector<'_, F>,
) -> [u64; 2] {
    let (l1, l2) = cfg.in_phase_rates();
    let lambda = l1 + l2;
    let mut heralds = [0u64; 2];
    if l1 == 0.0 || l2 == 0.0 {
        for (k, l) in [l1, l2].into_iter().enumerate() {
            if l > 0.0 {
                heralds[k] = Poisson::new(l * end).expect("positive mean").sample(rng) as u64;
            }
        }
        return heralds;
    }
    let tau = cfg.tau_s();
    let p_first = l1 / lambda;
    let p_short = -(-lambda * tau).exp_m1();
    let gap = Exp::new(lambda).expect("positive rate");
    let isolated = Geometric::new(p_short).expect("probability in (0,1]");
    let short_gap = |rng: &mut ChaCha8Rng| -((rng.gen::<f64>() * -p_short).ln_1p()) / lambda;
    let mut history: VecDeque<(f64, u8)> = VecDeque::new();
    let mut t = gap.sample(rng);
    'outer: loop {
        let k = isolated.sample(rng);
        if k > 0 {
            let kf = k as f64;
            t += kf * tau + Gamma::new(kf, 1.0 / lambda).expect("positive shape").sample(rng);
            let first = Binomial::new(k, p_first).expect("valid binomial").sample(rng);
            heralds[0] += first;
            heralds[1] += k - first;
        }
        if t > end {
            break;
        }
        history.clear();
        let mut current = (t, label(rng, p_first));
        loop {
            heralds[current.1 as usize] += 1;
            while history.front().is_some_and(|&(h, _)| current.0 - h > tau) {
                history.pop_front();
            }
            for &(h, l) in &history {
                if l != current.1 {
                    col.emit(current.0, l, current.0 - h);
                }
            }
            history.push_back(current);
            if history.len() > 1 && rng.gen::<f64>() >= p_short {
                t = current.0 + tau + gap.sample(rng);
                break;
            }
            let next = current.0 + short_gap(rng);
            if next > end {
                break 'outer;
            }
            current = (next, label(rng, p_first));
        }
    }
    heralds
}

#[derive(Clone, Copy)]
enum Gate {
    Idle,
    Stored { at: f64, memory: u8 },
    Dead { until: f64 },
}

fn controller<F: FnMut(&HeraldEvent)>(
    cfg: &SyncConfig,
    end: f64,
    rng: &mut ChaCha8Rng,
    col: &mut Collector<'_, F>,
) -> ([u64; 2], u64) {
    let (l1, l2) = cfg.in_phase_rates();
    let lambda = l1 + l2;
    let mut heralds = [0u64; 2];
    if lambda == 0.0 {
        return (heralds, 0);
    }
    let tau = cfg.tau_s();
    let dead = if cfg.dead_time_enabled {
        cfg.dead_time * 1e-6
    } else {
        0.0
    };
    let window = col.window_s;
    let gap = Exp::new(lambda).expect("positive rate");
    let mut failures = 0;
    let mut state = Gate::Idle;
    let mut cycle = 0.0;
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > end {
            break;
        }
        let memory = label(rng, l1 / lambda);
        heralds[memory as usize] += 1;
        let this_cycle = (t / window).floor();
        if this_cycle != cycle {
            if let Gate::Stored { .. } = state {
                failures += 1;
            }
            state = Gate::Idle;
            cycle = this_cycle;
        }
        if let Gate::Stored { at, .. } = state {
            if t - at > tau {
                failures += 1;
                state = Gate::Dead { until: at + tau + dead };
            }
        }
        if let Gate::Dead { until } = state {
            if t >= until {
                state = Gate::Idle;
            }
        }
        state = match state {
            Gate::Idle => Gate::Stored { at: t, memory },
            Gate::Stored { at, memory: first } if first != memory => {
                col.emit(t, first, t - at);
                Gate::Idle
            }
            other => other,
        };
    }
    (heralds, failures)
}

/// Mean input purities of the events whose storage does not exceed each
/// window on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub tau_max_us: f64,
    /// `None` when no event falls in the window.
    pub mean_p1: Option<f64>,
    pub mean_p2: Option<f64>,
    pub events: u64,
    pub rate_cps: f64,
}

/// Simulates once at the largest window and filters by storage time.
pub fn purity_vs_window(
    cfg: &SyncConfig,
    m1: &MemoryModel,
    m2: &MemoryModel,
    windows_us: &[f64],
) -> Result<Vec<WindowRow>> {
    let widest = windows_us.iter().cloned().fold(f64::NAN, f64::max);
    if windows_us.is_empty() || !(widest > 0.0) {
        return Err(HomError::param("window grid must contain a positive value"));
    }
    let mut sums = vec![(0.0, 0.0, 0u64); windows_us.len()];
    simulate_dual_heralds_with(&cfg.with_tau_max(widest), |e| {
        let p1 = purity_vs_storage(m1, e.storage1);
        let p2 = purity_vs_storage(m2, e.storage2);
        for (w, s) in windows_us.iter().zip(sums.iter_mut()) {
            if e.storage() <= w * 1e3 {
                s.0 += p1;
                s.1 += p2;
                s.2 += 1;
            }
        }
    })?;
    Ok(windows_us
        .iter()
        .zip(sums)
        .map(|(&w, (a, b, n))| {
            if n == 0 {
                log::warn!("no events with storage below {w} μs");
            }
            let mean = |v: f64| (n > 0).then(|| v / n as f64);
            WindowRow {
                tau_max_us: w,
                mean_p1: mean(a),
                mean_p2: mean(b),
                events: n,
                rate_cps: n as f64 / cfg.total_time,
            }
        })
        .collect())
}

/// Ordinary least squares `y = slope x + intercept` and its `R²`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(HomError::param("linear fit needs two or more paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HomError::Numerical("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// Event-rate gain of synchronization: `τ_max / τ_coh`.
pub fn enhancement(tau_max_ns: f64, tau_coh_ns: f64) -> Result<f64> {
    if !(tau_coh_ns > 0.0) || !(tau_max_ns >= 0.0) {
        return Err(HomError::param("enhancement needs positive coherence time"));
    }
    Ok(tau_max_ns / tau_coh_ns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick(total: f64) -> SyncConfig {
        SyncConfig {
            total_time: total,
            ..SyncConfig::default()
        }
    }

    #[test]
    fn analytic_examples() {
        let cfg = SyncConfig::default();
        assert_abs_diff_eq!(analytic_dual_rate(&cfg), 92.16, epsilon = 1e-9);
        assert_abs_diff_eq!(analytic_dual_rate(&cfg.with_tau_max(3.6)), 2.0 * 92.16, epsilon = 1e-9);
        assert!(analytic_dual_rate(&cfg.with_tau_max(1e-9)) < 1e-6);
        assert_eq!(enhancement(1800.0, 72.0).unwrap(), 25.0);
        assert!(enhancement(1800.0, 0.0).is_err());
    }

    #[test]
    fn coincidence_rate_matches_formula() {
        let cfg = quick(2000.0);
        let (events, s) = simulate_dual_heralds(&cfg).unwrap();
        assert_eq!(events.len() as u64, s.events);
        assert!((s.rate_cps - s.analytic_cps).abs() < 4.0 * s.poisson_se_cps, "{s:?}");
        let expected = 0.4 * 2000.0 * 8000.0;
        for h in s.heralds {
            assert!((h as f64 - expected).abs() < 5.0 * expected.sqrt(), "{h}");
        }
        assert!(events.windows(2).all(|w| w[0].release_time <= w[1].release_time));
        for e in &events {
            assert!(e.storage1 == 0.0 || e.storage2 == 0.0);
            assert!(e.storage() <= 1800.0 + 1e-6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = quick(50.0);
        let a = simulate_dual_heralds(&cfg).unwrap();
        let b = simulate_dual_heralds(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_dual_heralds(&SyncConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.1.events, 0);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn storage_times_are_uniform() {
        let (events, _) = simulate_dual_heralds(&quick(500.0)).unwrap();
        let mut u: Vec<f64> = events.iter().map(|e| e.storage() / 1800.0).collect();
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let d = u
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d} over {n} events");
    }

    #[test]
    fn silent_memory_gives_no_events() {
        for model in [SyncModel::Coincidence, SyncModel::Controller] {
            let cfg = SyncConfig {
                r2: 0.0,
                model,
                ..quick(20.0)
            };
            let (events, s) = simulate_dual_heralds(&cfg).unwrap();
            assert!(events.is_empty());
            assert_eq!(s.heralds[1], 0);
            assert!(s.heralds[0] > 0);
        }
    }

    #[test]
    fn controller_has_small_deficit() {
        for dead in [false, true] {
            let cfg = SyncConfig {
                model: SyncModel::Controller,
                dead_time_enabled: dead,
                ..quick(2000.0)
            };
            let (_, s) = simulate_dual_heralds(&cfg).unwrap();
            let ratio = s.rate_cps / s.analytic_cps;
            assert!(ratio > 0.85 && ratio < 1.0, "dead {dead}: {s:?}");
            assert!(s.failures > 0);
        }
    }

    #[test]
    fn label_swap_symmetry() {
        let a = SyncConfig {
            r1: 2000.0,
            r2: 4000.0,
            ..quick(1000.0)
        };
        let b = SyncConfig {
            r1: 4000.0,
            r2: 2000.0,
            seed: 9,
            ..a.clone()
        };
        let (_, sa) = simulate_dual_heralds(&a).unwrap();
        let (_, sb) = simulate_dual_heralds(&b).unwrap();
        assert!((sa.events as f64 - sb.events as f64).abs() < 4.0 * (2.0 * sa.events as f64).sqrt());
        assert!((sa.heralds[0] as f64 - sb.heralds[1] as f64).abs() < 5.0 * (2.0 * sa.heralds[0] as f64).sqrt());
    }

    #[test]
    fn purity_window_examples() {
        let cfg = quick(300.0);
        let mut grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        grid.insert(1, 0.01);
        let rows = purity_vs_window(&cfg, &MemoryModel::memory1(), &MemoryModel::memory2(), &grid).unwrap();
        assert!(rows[0].mean_p1.is_none() && rows[0].events == 0);
        assert!(rows.windows(2).all(|w| w[0].events <= w[1].events));
        let first = rows[1];
        assert_abs_diff_eq!(first.mean_p1.unwrap(), 0.602, epsilon = 0.002);
        assert_abs_diff_eq!(first.mean_p2.unwrap(), 0.637, epsilon = 0.002);
        let at18 = rows[19];
        assert_abs_diff_eq!(at18.tau_max_us, 1.8, epsilon = 1e-12);
        assert!(at18.mean_p1.unwrap() > 0.5 && at18.mean_p2.unwrap() > 0.5, "{at18:?}");
        let xs: Vec<f64> = rows.iter().map(|r| r.tau_max_us).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.rate_cps).collect();
        assert!(linear_fit(&xs, &ys).unwrap().2 > 0.99);
    }

    #[test]
    fn linear_fit_exact() {
        let (m, c, r2) = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r2, 1.0, epsilon = 1e-15);
    }
}
