//! Run configuration: TOML file, command-line overrides, validation.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use lstm_ensemble::evaluation::fingerprint;
use lstm_ensemble::ingest::{FundamentalsSchema, PriceSchema};
use lstm_ensemble::models::ModelConfigs;
use lstm_ensemble::pipeline::PrepareConfig;
use lstm_ensemble::synthetic::DriftConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generate the annual-drift universe instead of reading files.
    pub synthetic: bool,
    pub prices: Option<PathBuf>,
    pub fundamentals: Option<PathBuf>,
    pub price_schema: PriceSchema,
    pub fundamentals_schema: FundamentalsSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    /// Generator settings, used when `data.synthetic` is set.
    pub synthetic: DriftConfig,
    pub prepare: PrepareConfig,
    pub models: ModelConfigs,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            synthetic: DriftConfig::default(),
            prepare: PrepareConfig::default(),
            models: ModelConfigs::default(),
        }
    }
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub synthetic: bool,
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    seed: u64,
    data: &'a DataConfig,
    synthetic: Option<&'a DriftConfig>,
    prepare: &'a PrepareConfig,
    models: &'a ModelConfigs,
}

impl RunConfig {
    /// Defaults, then `path` if given, then `overrides`; validated.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out_dir {
            cfg.out_dir = out.clone();
        }
        if overrides.synthetic {
            cfg.data.synthetic = true;
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Derived settings: learner seeds from the run seed, and the split of
    /// the synthetic universe when it is in use.
    fn resolve(&mut self) {
        self.models.reseed(self.seed);
        if self.data.synthetic {
            self.prepare.split = self.synthetic.split();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !d.synthetic {
            if d.prices.is_none() {
                bail!("data.prices: required unless data.synthetic is true");
            }
            if d.fundamentals.is_none() {
                bail!("data.fundamentals: required unless data.synthetic is true");
            }
        } else {
            if self.synthetic.symbols == 0 {
                bail!("synthetic.symbols: must be at least 1");
            }
            if self.synthetic.years < 2 {
                bail!("synthetic.years: must be at least 2");
            }
            if !(0.0..=1.0).contains(&self.synthetic.missing_ratio_rate) {
                bail!("synthetic.missing_ratio_rate: must lie in [0, 1]");
            }
        }
        self.prepare.split.validate().context("prepare.split")?;
        self.prepare.indicators.validate().context("prepare.indicators")?;
        let ens = &self.models.ensemble;
        ens.learner1.validate().context("models.ensemble.learner1")?;
        ens.learner2.validate().context("models.ensemble.learner2")?;
        if ens.window_length == 0 {
            bail!("models.ensemble.window_length: must be at least 1");
        }
        if ens.annual_window == Some(0) {
            bail!("models.ensemble.annual_window: must be at least 1 when set");
        }
        self.models.mlp.validate().context("models.mlp")?;
        Ok(())
    }

    /// Identifies everything that affects trained models; the output
    /// directory is left out.
    pub fn fingerprint(&self) -> String {
        fingerprint(&FingerprintInput {
            seed: self.seed,
            data: &self.data,
            synthetic: self.data.synthetic.then_some(&self.synthetic),
            prepare: &self.prepare,
            models: &self.models,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing effective config")
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.out_dir.join("prepared")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out_dir.join("models")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 7\nout_dir = \"from_file\"\n[data]\nsynthetic = true\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out_dir, PathBuf::from("from_file"));
        assert_eq!(cfg.models.ensemble.learner1.hidden_size, 20);

        let o = Overrides {
            seed: Some(9),
            out_dir: Some("flag".into()),
            synthetic: false,
        };
        let cfg = RunConfig::load(Some(&path), &o).unwrap();
        assert_eq!((cfg.seed, cfg.out_dir), (9, PathBuf::from("flag")));
        assert_eq!(cfg.models.ensemble.learner1.seed, 9);
    }

    #[test]
    fn effective_config_round_trips() {
        let o = Overrides {
            synthetic: true,
            ..Overrides::default()
        };
        let cfg = RunConfig::load(None, &o).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.toml");
        std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        let again = RunConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn validation_names_the_field() {
        let err = RunConfig::load(None, &Overrides::default()).unwrap_err();
        assert!(format!("{err:#}").contains("data.prices"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "[data]\nsynthetic = true\n[models.ensemble.learner2]\nepochs = 0\n",
        )
        .unwrap();
        let err = RunConfig::load(Some(&path), &Overrides::default()).unwrap_err();
        let msg = format!("{err:#}");
        assert!(
            msg.contains("models.ensemble.learner2") && msg.contains("epochs"),
            "{msg}"
        );
    }
}
