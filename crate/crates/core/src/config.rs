//! Experiment configuration as a versioned TOML document.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HomError, Result};
use crate::fock::{FockCutoff, SourceModel};
use crate::quadrature::{PhaseGrid, PhaseSchedule, QuadratureLattice};
use crate::sync_sim::SyncConfig;
use crate::temporal_modes::{MemoryModel, TimeGrid};
use crate::tomography::MleOptions;
use crate::wigner::SliceGrid;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sources {
    pub arm1: SourceModel,
    pub arm2: SourceModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Memories {
    pub memory1: MemoryModel,
    pub memory2: MemoryModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSettings {
    pub grid: PhaseGrid,
    #[serde(default)]
    pub schedule: PhaseSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySettings {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub bin_width: f64,
    pub dilution: f64,
    /// Bootstrap resamples for metric error bars; 0 disables them.
    pub bootstrap: usize,
}

impl TomographySettings {
    pub fn mle(&self) -> MleOptions {
        MleOptions {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            bin_width: self.bin_width,
            dilution: self.dilution,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSettings {
    /// ns
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    /// Storage times tabulated by `modes`, ns.
    pub storage_times: Vec<f64>,
    pub pca_traces: usize,
    /// Coarser step used for PCA trace synthesis, ns.
    pub pca_dt: f64,
    pub pca_t1: f64,
}

impl ModeSettings {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.t1, self.dt)
    }

    pub fn pca_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t0, self.pca_t1, self.pca_dt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub cutoff: FockCutoff,
    /// Squared wavepacket overlap `C` at zero mismatch.
    pub overlap: f64,
    /// Homodyne events in the end-to-end run.
    pub events: usize,
    /// Storage times are grouped into buckets of this width (ns) that share
    /// one output state.
    pub storage_bucket_ns: f64,
    pub sources: Sources,
    pub memories: Memories,
    pub sync: SyncConfig,
    pub phases: PhaseSettings,
    pub lattice: QuadratureLattice,
    pub tomography: TomographySettings,
    pub wigner: SliceGrid,
    pub modes: ModeSettings,
}

impl Default for ExperimentConfig {
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            seed: 20150908,
            cutoff: FockCutoff::DEFAULT,
            overlap: 0.992,
            events: 400_000,
            storage_bucket_ns: 10.0,
            sources: Sources {
                arm1: SourceModel {
                    p0: 0.354,
                    p1: 0.606,
                    p2: 0.04,
                },
                arm2: SourceModel {
                    p0: 0.318,
                    p1: 0.642,
                    p2: 0.04,
                },
            },
            memories: Memories {
                memory1: MemoryModel::memory1(),
                memory2: MemoryModel::memory2(),
            },
            sync: SyncConfig {
                tau_max: 0.4,
                total_time: 3600.0,
                ..SyncConfig::default()
            },
            phases: PhaseSettings {
                grid: PhaseGrid::default(),
                schedule: PhaseSchedule::Random,
            },
            lattice: QuadratureLattice::default(),
            tomography: TomographySettings {
                max_iterations: 2000,
                tolerance: 1e-9,
                bin_width: 0.1,
                dilution: 1.0,
                bootstrap: 50,
            },
            wigner: SliceGrid::default(),
            modes: ModeSettings {
                t0: -100.0,
                t1: 1500.0,
                dt: 2.0,
                storage_times: (0..=10).map(|k| 50.0 * k as f64).collect(),
                pca_traces: 40_000,
                pca_dt: 10.0,
                pca_t1: 1100.0,
            },
        }
    }
}

impl ExperimentConfig {
    /// Lossless, perfectly overlapping single photons.
    pub fn ideal() -> Self {
        let photon = SourceModel {
            p0: 0.0,
            p1: 1.0,
            p2: 0.0,
        };
        let lossless = |m: MemoryModel| MemoryModel {
            p0: 1.0,
            tau_life: 1e300,
            ..m
        };
        let base = ExperimentConfig::default();
        ExperimentConfig {
            overlap: 1.0,
            sources: Sources {
                arm1: photon,
                arm2: photon,
            },
            memories: Memories {
                memory1: lossless(base.memories.memory1),
                memory2: lossless(MemoryModel {
                    gamma_fall: base.memories.memory1.gamma_fall,
                    ..base.memories.memory2
                }),
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| r.map_err(|e| HomError::Config(format!("{section}: {e}")));
        if self.schema_version != SCHEMA_VERSION {
            return Err(HomError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for (name, seed) in [("seed", self.seed), ("sync.seed", self.sync.seed)] {
            if seed > i64::MAX as u64 {
                return Err(HomError::Config(format!(
                    "{name} {seed} exceeds {} and cannot be stored in TOML",
                    i64::MAX
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(HomError::Config(format!("overlap {} outside [0,1]", self.overlap)));
        }
        if self.events == 0 {
            return Err(HomError::Config("events must be positive".into()));
        }
        if !(self.storage_bucket_ns > 0.0) {
            return Err(HomError::Config("storage_bucket_ns must be positive".into()));
        }
        wrap("sources.arm1", self.sources.arm1.validate())?;
        wrap("sources.arm2", self.sources.arm2.validate())?;
        wrap("memories.memory1", self.memories.memory1.validate())?;
        wrap("memories.memory2", self.memories.memory2.validate())?;
        wrap("sync", self.sync.validate())?;
        wrap("lattice", self.lattice.validate())?;
        wrap("tomography", self.tomography.mle().validate())?;
        wrap("wigner", self.wigner.points().map(|_| ()))?;
        wrap("modes", self.modes.grid().and(self.modes.pca_grid()).map(|_| ()))?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HomError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HomError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialized form.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| HomError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical form, hex.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_toml_string()?.as_bytes())))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert!(text.contains("schema_version = 1"));
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
        ExperimentConfig::ideal().validate().unwrap();
    }

    #[test]
    fn rejects_bad_documents() {
        let text = ExperimentConfig::default().to_toml_string().unwrap();
        let wrong_version = text.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&wrong_version),
            Err(HomError::Config(_))
        ));
        let unknown = format!("bogus = 3\n{text}");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&unknown),
            Err(HomError::Config(_))
        ));
        let bad_overlap = text.replace("overlap = 0.992", "overlap = 1.5");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad_overlap),
            Err(HomError::Config(_))
        ));
        let mut cfg = ExperimentConfig::default();
        cfg.sources.arm1.p1 = 0.9;
        assert!(matches!(cfg.validate(), Err(HomError::Config(_))));
        let big_seed = ExperimentConfig {
            seed: u64::MAX,
            ..ExperimentConfig::default()
        };
        assert!(matches!(big_seed.validate(), Err(HomError::Config(_))));
    }
}
