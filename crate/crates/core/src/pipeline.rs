//! End-to-end runs: synchronization, storage loss, interference, homodyne
//! sampling, tomography, metrics and figure tables, with a hashed manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::error::{HomError, Result};
use crate::fock::{hom_with_overlap, loss_channel, SingleModeState, SourceModel, TwoModeState};
use crate::io;
use crate::metrics::MetricsReport;
use crate::quadrature::{
    fock_wavefunction, joint_density_grid, schedule_index, PhaseGrid, QuadratureRecord, QuadratureSampler,
};
use crate::rng::{derive_seed, event_rng};
use crate::sync_sim::{
    analytic_dual_rate, enhancement, linear_fit, purity_vs_window, simulate_dual_heralds_with, HeraldEvent, SyncConfig,
    SyncSummary,
};
use crate::temporal_modes::{
    coherence_time, mode_function, overlap, pca_estimate, purity_crossing, signal_mode, storage_table,
    synthesize_traces, MemoryModel, ModeFunction, StorageRow,
};
use crate::tomography::{bin_records, bootstrap_states, mle_reconstruct, MleResult};
use crate::wigner::{wigner_slice, SlicePlane};

/// Seeds of the random stages, derived from the run seed and stage name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub sync: u64,
    pub homodyne: u64,
    pub bootstrap: u64,
    pub pca: u64,
}

impl StageSeeds {
    pub fn new(seed: u64) -> Self {
        StageSeeds {
            sync: derive_seed(seed, "sync"),
            homodyne: derive_seed(seed, "homodyne"),
            bootstrap: derive_seed(seed, "bootstrap"),
            pca: derive_seed(seed, "pca"),
        }
    }
}

/// Single-mode input of one arm after `tau` ns of storage.
pub fn stored_input(
    source: &SourceModel,
    memory: &MemoryModel,
    tau: f64,
    cfg: &ExperimentConfig,
) -> Result<SingleModeState> {
    loss_channel(&source.to_state(cfg.cutoff)?, memory.storage_eta(tau))
}

/// Interfered output for given storage times of the two photons.
pub fn output_state(cfg: &ExperimentConfig, tau1: f64, tau2: f64) -> Result<TwoModeState> {
    let a = stored_input(&cfg.sources.arm1, &cfg.memories.memory1, tau1, cfg)?;
    let b = stored_input(&cfg.sources.arm2, &cfg.memories.memory2, tau2, cfg)?;
    hom_with_overlap(&a, &b, cfg.overlap)
}

/// Photons released without synchronization: no temporal overlap.
pub fn control_state(cfg: &ExperimentConfig) -> Result<TwoModeState> {
    let a = stored_input(&cfg.sources.arm1, &cfg.memories.memory1, 0.0, cfg)?;
    let b = stored_input(&cfg.sources.arm2, &cfg.memories.memory2, 0.0, cfg)?;
    hom_with_overlap(&a, &b, 0.0)
}

/// Synchronization stage. The simulated time is stretched, if needed, until
/// at least `cfg.events` releases occur; the first `cfg.events` are kept.
pub fn simulate_events(cfg: &ExperimentConfig) -> Result<(Vec<HeraldEvent>, SyncSummary)> {
    let base = SyncConfig {
        seed: cfg.seed,
        ..cfg.sync.clone()
    };
    let rate = analytic_dual_rate(&base);
    let mut total = base.total_time.max(1.1 * cfg.events as f64 / rate.max(1e-300));
    for _ in 0..8 {
        let sync = SyncConfig {
            total_time: total,
            ..base.clone()
        };
        let mut events = Vec::with_capacity(cfg.events);
        let summary = simulate_dual_heralds_with(&sync, |e| {
            if events.len() < cfg.events {
                events.push(*e);
            }
        })?;
        if events.len() == cfg.events {
            return Ok((events, summary));
        }
        total *= 2.0;
    }
    Err(HomError::Numerical("synchronization produced too few events".into()))
}

/// Homodyne stage: one record per event, from the output state of the
/// event's storage-time bucket.
pub fn sample_event_records(
    cfg: &ExperimentConfig,
    events: &[HeraldEvent],
    seed: u64,
) -> Result<Vec<QuadratureRecord>> {
    let bucket = cfg.storage_bucket_ns;
    let key = |e: &HeraldEvent| {
        (
            (e.storage1 / bucket).round() as u64,
            (e.storage2 / bucket).round() as u64,
        )
    };
    let mut samplers: BTreeMap<(u64, u64), QuadratureSampler> = BTreeMap::new();
    let grid = &cfg.phases.grid;
    for e in events {
        let k = key(e);
        if samplers.contains_key(&k) {
            continue;
        }
        let state = output_state(cfg, k.0 as f64 * bucket, k.1 as f64 * bucket)?;
        let sampler = match samplers.values().next() {
            Some(s) => s.for_state(&state, grid)?,
            None => QuadratureSampler::new(&state, grid, &cfg.lattice)?,
        };
        samplers.insert(k, sampler);
    }
    let combos = grid.combinations();
    Ok(events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = event_rng(seed, i as u64);
            let (theta1, theta2) = combos[schedule_index(cfg.phases.schedule, i, events.len(), combos.len(), &mut r)];
            let (x1, x2) = samplers[&key(e)].sample(theta1, theta2, &mut r);
            QuadratureRecord {
                theta1,
                theta2,
                x1,
                x2,
                tau1: e.storage1,
                tau2: e.storage2,
            }
        })
        .collect())
}

/// Forward simulation: sync events and homodyne records.
pub fn simulate(cfg: &ExperimentConfig) -> Result<(Vec<HeraldEvent>, SyncSummary, Vec<QuadratureRecord>)> {
    cfg.validate()?;
    let seeds = StageSeeds::new(cfg.seed);
    let (events, summary) = simulate_events(cfg)?;
    let records = sample_event_records(cfg, &events, seeds.homodyne)?;
    Ok((events, summary, records))
}

pub fn reconstruct(cfg: &ExperimentConfig, records: &[QuadratureRecord]) -> Result<MleResult<TwoModeState>> {
    let data = bin_records(records, cfg.tomography.bin_width)?;
    mle_reconstruct(&data, cfg.cutoff, &cfg.tomography.mle())
}

/// Metrics of `state`, with bootstrap spreads over `resamples` records
/// resamplings when `resamples ≥ 2`.
pub fn metrics_with_bootstrap(
    cfg: &ExperimentConfig,
    records: &[QuadratureRecord],
    state: &TwoModeState,
    resamples: usize,
) -> Result<MetricsReport> {
    let report = MetricsReport::compute(state)?;
    if resamples < 2 {
        return Ok(report);
    }
    let seed = StageSeeds::new(cfg.seed).bootstrap;
    let states = bootstrap_states(records, state, &cfg.tomography.mle(), resamples, seed)?;
    let replicas = states.iter().map(MetricsReport::compute).collect::<Result<Vec<_>>>()?;
    Ok(report.with_bootstrap(&replicas))
}

/// Values quoted for the experiment, for side-by-side reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceValues {
    pub log_negativity: f64,
    pub filtered_log_negativity: f64,
    pub filter_fraction: f64,
    pub visibility: f64,
    pub cross_correlation: f64,
}

pub const EXPERIMENT_REFERENCE: ReferenceValues = ReferenceValues {
    log_negativity: 0.37,
    filtered_log_negativity: 0.30,
    filter_fraction: 0.470,
    visibility: 0.902,
    cross_correlation: 0.24,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub simulated: MetricsReport,
    pub experiment: ReferenceValues,
}

/// Square histogram grid for quadrature plots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Default for HistogramGrid {
    fn default() -> Self {
        HistogramGrid {
            min: -4.0,
            max: 4.0,
            step: 0.25,
        }
    }
}

impl HistogramGrid {
    fn bins(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize
    }

    pub fn centres(&self) -> Vec<f64> {
        (0..self.bins())
            .map(|i| self.min + (i as f64 + 0.5) * self.step)
            .collect()
    }

    fn index(&self, x: f64) -> Option<usize> {
        let u = ((x - self.min) / self.step).floor();
        (u >= 0.0 && (u as usize) < self.bins()).then_some(u as usize)
    }
}

/// Empirical joint density of `(x1, x2)`, normalized by the total count.
pub fn histogram2d<'a>(points: impl IntoIterator<Item = &'a QuadratureRecord>, grid: &HistogramGrid) -> DMatrix<f64> {
    let n = grid.bins();
    let mut counts = DMatrix::zeros(n, n);
    let mut total = 0usize;
    for r in points {
        total += 1;
        if let (Some(i), Some(j)) = (grid.index(r.x1), grid.index(r.x2)) {
            counts[(i, j)] += 1.0;
        }
    }
    if total > 0 {
        counts /= total as f64 * grid.step * grid.step;
    }
    counts
}

fn relative_phase(r: &QuadratureRecord) -> f64 {
    (r.theta2 - r.theta1).rem_euclid(180.0)
}

#[derive(Serialize)]
struct PanelRow {
    theta1_deg: f64,
    theta2_deg: f64,
    x1: f64,
    x2: f64,
    density: f64,
}

#[derive(Serialize)]
struct WavefunctionRow {
    x: f64,
    psi0: f64,
    psi1: f64,
    psi2: f64,
}

/// Figure tables: per-phase-pair histograms, relative-phase histograms at
/// 0° and 90° against the unsynchronized control, ideal HOM densities and
/// Fock wavefunctions. Returns the written paths.
pub fn write_figure_tables(cfg: &ExperimentConfig, records: &[QuadratureRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    let grid = HistogramGrid::default();
    let centres = grid.centres();
    let mut written = Vec::new();

    let mut panels = Vec::new();
    for (t1, t2) in cfg.phases.grid.combinations() {
        let h = histogram2d(records.iter().filter(|r| r.theta1 == t1 && r.theta2 == t2), &grid);
        for (i, &x1) in centres.iter().enumerate() {
            for (j, &x2) in centres.iter().enumerate() {
                panels.push(PanelRow {
                    theta1_deg: t1,
                    theta2_deg: t2,
                    x1,
                    x2,
                    density: h[(i, j)],
                });
            }
        }
    }
    let p = dir.join("phase_panels.csv");
    io::save_csv(&p, &panels)?;
    written.push(p);

    let control = control_state(cfg)?;
    let ideal = TwoModeState::hom(cfg.cutoff, 0.0);
    for theta in [0.0, 90.0] {
        let h = histogram2d(
            records.iter().filter(|r| (relative_phase(r) - theta).abs() < 1e-9),
            &grid,
        );
        let tables = [
            (format!("hist_theta{theta:.0}.csv"), h),
            (
                format!("control_theta{theta:.0}.csv"),
                joint_density_grid(&control, 0.0, theta, &centres),
            ),
            (
                format!("ideal_hom_theta{theta:.0}.csv"),
                joint_density_grid(&ideal, 0.0, theta, &centres),
            ),
        ];
        for (name, m) in tables {
            let p = dir.join(name);
            io::write_matrix_csv(
                std::io::BufWriter::new(create_file(&p)?),
                "x1\\x2",
                &centres,
                &centres,
                &m,
            )?;
            written.push(p);
        }
    }

    let rows: Vec<WavefunctionRow> = (0..=160)
        .map(|k| {
            let x = -4.0 + 0.05 * k as f64;
            WavefunctionRow {
                x,
                psi0: fock_wavefunction(0, x),
                psi1: fock_wavefunction(1, x),
                psi2: fock_wavefunction(2, x),
            }
        })
        .collect();
    let p = dir.join("wavefunctions.csv");
    io::save_csv(&p, &rows)?;
    written.push(p);
    Ok(written)
}

fn create_file(path: &Path) -> Result<std::fs::File> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    Ok(std::fs::File::create(path)?)
}

/// Rate and purity versus synchronization window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncCurveRow {
    pub tau_max_us: f64,
    pub analytic_cps: f64,
    pub simulated_cps: f64,
    pub events: u64,
    pub mean_p1: Option<f64>,
    pub mean_p2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncCurve {
    pub rows: Vec<SyncCurveRow>,
    pub slope_cps_per_us: f64,
    pub intercept_cps: f64,
    pub r_squared: f64,
}

pub fn sync_curve(cfg: &ExperimentConfig, windows_us: &[f64]) -> Result<SyncCurve> {
    let sync = SyncConfig {
        seed: cfg.seed,
        ..cfg.sync.clone()
    };
    let rows: Vec<SyncCurveRow> = purity_vs_window(&sync, &cfg.memories.memory1, &cfg.memories.memory2, windows_us)?
        .into_iter()
        .map(|w| SyncCurveRow {
            tau_max_us: w.tau_max_us,
            analytic_cps: if w.tau_max_us > 0.0 {
                analytic_dual_rate(&sync.with_tau_max(w.tau_max_us))
            } else {
                0.0
            },
            simulated_cps: w.rate_cps,
            events: w.events,
            mean_p1: w.mean_p1,
            mean_p2: w.mean_p2,
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.tau_max_us).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.simulated_cps).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys)?;
    Ok(SyncCurve {
        rows,
        slope_cps_per_us: slope,
        intercept_cps: intercept,
        r_squared: r2,
    })
}

/// Wavepacket, storage-table, coherence-time and PCA summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModesReport {
    pub intensity_fwhm_ns: [f64; 2],
    pub overlap_c0: f64,
    pub purity_crossing_ns: [Option<f64>; 2],
    pub coherence_time_ns: Option<f64>,
    pub enhancement_at_sync_window: Option<f64>,
    pub enhancement_at_1800ns: Option<f64>,
    pub storage_memory1: Vec<StorageRow>,
    pub storage_memory2: Vec<StorageRow>,
    pub pca_traces: usize,
    pub pca_overlap: f64,
    pub pca_eigenvalues: Vec<f64>,
}

/// Returns the report and the modes to serialize (`f1`, `f2`, `f_HOM`, PCA).
pub fn modes_report(cfg: &ExperimentConfig) -> Result<(ModesReport, Vec<(String, ModeFunction)>)> {
    let grid = cfg.modes.grid()?;
    let (m1, m2) = (&cfg.memories.memory1, &cfg.memories.memory2);
    let f1 = mode_function(m1, 0.0, &grid)?;
    let f2 = mode_function(m2, 0.0, &grid)?;
    let hom = signal_mode(&f1, &f2)?;
    let tau_coh = coherence_time(m1, m2, 0.5).ok();
    let enhancement_at_sync_window = tau_coh.map(|t| enhancement(cfg.sync.tau_max * 1e3, t)).transpose()?;

    let pca_grid = cfg.modes.pca_grid()?;
    let generator = mode_function(m1, 0.0, &pca_grid)?;
    let photon = SingleModeState::fock(cfg.cutoff, 1)?;
    let traces = synthesize_traces(&generator, &photon, cfg.modes.pca_traces, StageSeeds::new(cfg.seed).pca)?;
    let pca = pca_estimate(&traces, pca_grid.t0, pca_grid.dt)?;
    let report = ModesReport {
        intensity_fwhm_ns: [f1.intensity_fwhm(), f2.intensity_fwhm()],
        overlap_c0: overlap(&f1, &f2)?,
        purity_crossing_ns: [purity_crossing(m1, 0.5).ok(), purity_crossing(m2, 0.5).ok()],
        coherence_time_ns: tau_coh,
        enhancement_at_sync_window,
        enhancement_at_1800ns: tau_coh.map(|t| enhancement(1800.0, t)).transpose()?,
        storage_memory1: storage_table(m1, &hom, &cfg.modes.storage_times)?,
        storage_memory2: storage_table(m2, &hom, &cfg.modes.storage_times)?,
        pca_traces: cfg.modes.pca_traces,
        pca_overlap: overlap(&pca.mode, &generator)?,
        pca_eigenvalues: pca.eigenvalues.iter().take(8).cloned().collect(),
    };
    let modes = vec![
        ("mode_memory1.csv".to_string(), f1),
        ("mode_memory2.csv".to_string(), f2),
        ("mode_signal.csv".to_string(), hom),
        ("mode_pca.csv".to_string(), pca.mode),
    ];
    Ok((report, modes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_sha256: String,
    pub seed: u64,
    pub stage_seeds: StageSeeds,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    /// Hashes `files`, recorded relative to `root`.
    pub fn build(cfg: &ExperimentConfig, root: &Path, files: &[PathBuf]) -> Result<Self> {
        let mut entries = Vec::with_capacity(files.len());
        for f in files {
            let bytes = std::fs::read(f)?;
            let rel = f.strip_prefix(root).unwrap_or(f);
            entries.push(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: hex(&Sha256::digest(&bytes)),
                bytes: bytes.len() as u64,
            });
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Manifest {
            schema_version: cfg.schema_version,
            config_sha256: cfg.hash()?,
            seed: cfg.seed,
            stage_seeds: StageSeeds::new(cfg.seed),
            files: entries,
        })
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let p = root.join("manifest.json");
        io::save_json(&p, self)?;
        Ok(p)
    }
}

/// Products of a full run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    pub sync: SyncSummary,
    pub state: TwoModeState,
    pub mle_converged: bool,
    pub mle_iterations: usize,
    pub metrics: MetricsReport,
    pub wigner_minimum: [f64; 2],
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        HomError::NotConverged { .. } | HomError::Config(_) => e,
        other => HomError::Numerical(format!("{name} stage: {other}")),
    })
}

/// Runs every stage and writes its products, plus `manifest.json`, to `out`.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let p = out.join("config.toml");
    std::fs::write(&p, cfg.to_toml_string()?)?;
    files.push(p);

    let (events, sync, records) = stage("simulate", simulate(cfg))?;
    let p = out.join("events.csv");
    io::save_events(&p, &events)?;
    files.push(p);
    let p = out.join("sync_summary.json");
    io::save_json(&p, &sync)?;
    files.push(p);
    let p = out.join("records.csv");
    io::save_records(&p, &records)?;
    files.push(p);

    let mle = stage("tomography", reconstruct(cfg, &records))?;
    let p = out.join("rho.json");
    io::save_state(&p, &mle.state, Some(mle.diagnostics()))?;
    files.push(p);
    let p = out.join("mle_history.csv");
    io::save_csv(&p, &history_rows(&mle.history))?;
    files.push(p);

    let metrics = stage(
        "metrics",
        metrics_with_bootstrap(cfg, &records, &mle.state, cfg.tomography.bootstrap),
    )?;
    let p = out.join("metrics.json");
    io::save_json(
        &p,
        &MetricsFile {
            simulated: metrics.clone(),
            experiment: EXPERIMENT_REFERENCE,
        },
    )?;
    files.push(p);

    let mut wigner_minimum = [0.0; 2];
    for (k, (stem, plane)) in [
        ("wigner_x1_x2", SlicePlane::quadrature_plane()),
        ("wigner_x1_p2", SlicePlane::mixed_plane()),
    ]
    .into_iter()
    .enumerate()
    {
        let slice = stage("wigner", wigner_slice(&mle.state, &plane, &cfg.wigner))?;
        wigner_minimum[k] = slice.min_value;
        files.extend(io::save_slice(out, stem, &slice)?);
    }

    files.extend(stage(
        "figures",
        write_figure_tables(cfg, &records, &out.join("figures")),
    )?);

    let manifest = Manifest::build(cfg, out, &files)?;
    manifest.save(out)?;
    Ok(PipelineOutput {
        manifest,
        sync,
        state: mle.state,
        mle_converged: mle.converged,
        mle_iterations: mle.iterations,
        metrics,
        wigner_minimum,
    })
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    log_likelihood_per_event: f64,
}

pub fn history_rows(history: &[f64]) -> Vec<impl Serialize> {
    history
        .iter()
        .enumerate()
        .map(|(iteration, &log_likelihood_per_event)| HistoryRow {
            iteration,
            log_likelihood_per_event,
        })
        .collect()
}

/// Phase grid spanned by the settings present in `records`.
pub fn phase_grid_of(records: &[QuadratureRecord]) -> Result<PhaseGrid> {
    let mut phases: Vec<f64> = records.iter().flat_map(|r| [r.theta1, r.theta2]).collect();
    phases.sort_by(f64::total_cmp);
    phases.dedup();
    PhaseGrid::new(phases)
}
