//! Experiment configuration: one TOML file naming the data files of a run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use tdm_core::cases::{CaseConfig, Dataset, Season};
use tdm_core::coupled::SystemDemand;
use tdm_core::mpec::Schedule;
use tdm_core::network::{attach_interfaces, Demand, DistributionNetwork, TariffSchedule, TransmissionNetwork};
use tdm_core::risk::{CvarFormula, PriceHistory};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    transmission: PathBuf,
    distribution: PathBuf,
    tariff: Option<PathBuf>,
    history: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeasonSection {
    name: String,
    wm_demand: PathBuf,
    dm_demand: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    #[serde(default)]
    seasons: Vec<String>,
    hours: Option<Vec<usize>>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RiskSection {
    epsilon: f64,
    cvar_formula: CvarFormula,
}

impl Default for RiskSection {
    fn default() -> Self {
        RiskSection {
            epsilon: 0.05,
            cvar_formula: CvarFormula::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MpecSection {
    sides: usize,
    rho0: f64,
    factor: f64,
    rho_min: f64,
    max_outer: usize,
}

impl Default for MpecSection {
    fn default() -> Self {
        let s = Schedule::default();
        MpecSection {
            sides: 12,
            rho0: s.rho0,
            factor: s.factor,
            rho_min: s.rho_min,
            max_outer: s.max_outer,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    data: DataSection,
    #[serde(rename = "season")]
    seasons: Vec<SeasonSection>,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    risk: RiskSection,
    #[serde(default)]
    mpec: MpecSection,
}

/// A hashed input file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFile {
    /// Path as written in the config.
    pub name: String,
    pub sha256: String,
}

/// A loaded experiment: dataset plus the settings shared by every case.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub data: Dataset,
    pub template: CaseConfig,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<InputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Experiment> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: ConfigFile = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut inputs = Vec::new();
        let mut resolve = |p: &Path| -> Result<PathBuf> {
            let full = base.join(p);
            let bytes = std::fs::read(&full).with_context(|| format!("cannot read {}", full.display()))?;
            inputs.push(InputFile {
                name: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
            Ok(full)
        };

        let trans = TransmissionNetwork::load(&resolve(&cfg.data.transmission)?)?;
        let dist = DistributionNetwork::load(&resolve(&cfg.data.distribution)?)?;
        let links = trans.interfaces.clone();
        let sys = attach_interfaces(trans, dist, links)?;
        let tariff = match &cfg.data.tariff {
            Some(p) => Some(TariffSchedule::from_csv(&resolve(p)?)?),
            None => None,
        };
        let history = match &cfg.data.history {
            Some(p) => Some(PriceHistory::from_csv(&resolve(p)?)?),
            None => None,
        };
        if cfg.seasons.is_empty() {
            bail!("config lists no [[season]] entries");
        }
        let trans_ids: Vec<usize> = sys.trans.buses.iter().map(|b| b.id).collect();
        let dist_ids: Vec<usize> = sys.dist.buses.iter().map(|b| b.id).collect();
        let mut seasons = Vec::new();
        for s in &cfg.seasons {
            let wm = Demand::from_csv(&resolve(&s.wm_demand)?, &trans_ids)?;
            let dm = Demand::from_csv(&resolve(&s.dm_demand)?, &dist_ids)?;
            if wm.hours() != dm.hours() {
                bail!("season '{}': wholesale and distribution demand cover different hours", s.name);
            }
            seasons.push(Season {
                name: s.name.clone(),
                demand: SystemDemand { wm, dm },
            });
        }
        let data = Dataset {
            sys,
            seasons,
            tariff,
            history,
        };

        let mut template = CaseConfig::new(tdm_core::cases::Case::A);
        template.seasons = cfg.run.seasons.clone();
        template.hours = cfg.run.hours.clone();
        template.epsilon = cfg.risk.epsilon;
        template.cvar_formula = cfg.risk.cvar_formula;
        template.sides = cfg.mpec.sides;
        template.schedule = Schedule {
            rho0: cfg.mpec.rho0,
            factor: cfg.mpec.factor,
            rho_min: cfg.mpec.rho_min,
            max_outer: cfg.mpec.max_outer,
        };
        Ok(Experiment {
            data,
            template,
            seed: cfg.run.seed,
            config_sha256: sha256_hex(text.as_bytes()),
            inputs,
        })
    }
}
