//! The four comparable forecasters, their training entry points, and the
//! on-disk model document.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::{
    close_stats, daily_features, learner2_datasets, train_ensemble, train_learner1, AlignmentRule, EnsembleConfig,
    EnsembleError, EnsembleModel, Learner1Output, TARGET_COLUMN,
};
use crate::ingest::{AnnualFrame, DailyFrame};
use crate::lstm::{lstm_predict, lstm_predict_batch, lstm_train, LstmError, LstmParams};
use crate::nn::{mlp_train, Matrix, MlpConfig, MlpModel, NnError};
use crate::preprocess::{
    apply_normalize, build_datasets, DatasetPair, NormStats, PreprocessError, SplitSpec, WindowedDataset,
};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Lstm(#[from] LstmError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("symbol not in model: {0}")]
    UnknownSymbol(String),
    #[error("window has {got} rows, model needs {need}")]
    ShortWindow { got: usize, need: usize },
    #[error("unknown variant {0:?} (expected ensemble, daily, annual or mlp)")]
    UnknownVariant(String),
    #[error("model file: {0}")]
    File(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Report rows, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Daily,
    Annual,
    Ensemble,
    Mlp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Daily, Variant::Annual, Variant::Ensemble, Variant::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Daily => "daily",
            Variant::Annual => "annual",
            Variant::Ensemble => "ensemble",
            Variant::Mlp => "mlp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Daily => "LSTM, daily features",
            Variant::Annual => "LSTM, annual ratios",
            Variant::Ensemble => "Ensemble LSTM",
            Variant::Mlp => "MLP baseline",
        }
    }

    /// Reference RMSE for the matching configuration, for annotation only.
    pub fn reference_rmse(self) -> f64 {
        match self {
            Variant::Daily => 0.0124,
            Variant::Annual => 0.08,
            Variant::Ensemble => 0.0119,
            Variant::Mlp => 0.07,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::UnknownVariant(s.to_string()))
    }
}

/// Hyper-parameters of every variant. The daily-only LSTM reuses learner 2's
/// settings so that it differs from the ensemble only by the missing feature.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfigs {
    pub ensemble: EnsembleConfig,
    pub mlp: MlpConfig,
}

impl ModelConfigs {
    /// Derives every learner's seed from one run seed.
    pub fn reseed(&mut self, seed: u64) {
        self.ensemble.learner1.seed = seed;
        self.ensemble.learner2.seed = seed.wrapping_add(1);
        self.mlp.seed = seed.wrapping_add(2);
    }
}

/// Eight-feature daily LSTM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyModel {
    pub params: LstmParams,
    pub feature_names: Vec<String>,
    pub window_length: usize,
    pub stats: BTreeMap<String, NormStats>,
}

/// Annual learner on its own: the prediction for a day is the table value
/// of the aligned year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualModel {
    pub learner1: Learner1Output,
    pub alignment: AlignmentRule,
    pub close_stats: BTreeMap<String, NormStats>,
}

/// Dense baseline on flattened daily windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWindowModel {
    pub model: MlpModel,
    pub feature_names: Vec<String>,
    pub window_length: usize,
    pub stats: BTreeMap<String, NormStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum TrainedModel {
    Daily(DailyModel),
    Annual(AnnualModel),
    Ensemble(EnsembleModel),
    Mlp(MlpWindowModel),
}

fn window_matrix(
    recent: &DailyFrame,
    stats: &BTreeMap<String, NormStats>,
    features: &[String],
    t: usize,
) -> Result<Matrix, ModelError> {
    let s = stats
        .get(&recent.symbol)
        .ok_or_else(|| ModelError::UnknownSymbol(recent.symbol.clone()))?;
    if recent.len() < t {
        return Err(ModelError::ShortWindow {
            got: recent.len(),
            need: t,
        });
    }
    let z = apply_normalize(&recent.slice(recent.len() - t..recent.len()), s)?;
    let cols = features
        .iter()
        .map(|n| z.column(n).ok_or_else(|| PreprocessError::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Matrix::from_fn(t, cols.len(), |r, c| cols[c][r]))
}

fn denormalize_close(stats: &BTreeMap<String, NormStats>, symbol: &str, z: f64) -> Result<f64, ModelError> {
    let s = stats
        .get(symbol)
        .ok_or_else(|| ModelError::UnknownSymbol(symbol.to_string()))?;
    Ok(s.denormalize_value(s.index(TARGET_COLUMN)?, z))
}

impl TrainedModel {
    pub fn variant(&self) -> Variant {
        match self {
            TrainedModel::Daily(_) => Variant::Daily,
            TrainedModel::Annual(_) => Variant::Annual,
            TrainedModel::Ensemble(_) => Variant::Ensemble,
            TrainedModel::Mlp(_) => Variant::Mlp,
        }
    }

    /// Rows of history the model needs before the predicted day.
    pub fn window_length(&self) -> usize {
        match self {
            TrainedModel::Daily(m) => m.window_length,
            TrainedModel::Annual(_) => 1,
            TrainedModel::Ensemble(m) => m.window_length,
            TrainedModel::Mlp(m) => m.window_length,
        }
    }

    /// Close statistics used to map normalized predictions to prices.
    pub fn target_stats(&self) -> &BTreeMap<String, NormStats> {
        match self {
            TrainedModel::Daily(m) => &m.stats,
            TrainedModel::Annual(m) => &m.close_stats,
            TrainedModel::Ensemble(m) => &m.daily_stats,
            TrainedModel::Mlp(m) => &m.stats,
        }
    }

    /// Normalized next-day close after the last row of `recent` (raw columns).
    pub fn predict_normalized(&self, recent: &DailyFrame) -> Result<f64, ModelError> {
        match self {
            TrainedModel::Daily(m) => {
                let x = window_matrix(recent, &m.stats, &m.feature_names, m.window_length)?;
                Ok(lstm_predict(&m.params, &x)?)
            }
            TrainedModel::Ensemble(m) => {
                let x = m.input_window(recent)?;
                Ok(lstm_predict(&m.learner2, &x)?)
            }
            TrainedModel::Mlp(m) => {
                let x = window_matrix(recent, &m.stats, &m.feature_names, m.window_length)?;
                Ok(m.model.forward(x.as_slice())?)
            }
            TrainedModel::Annual(m) => {
                let last = *recent.dates.last().ok_or(ModelError::ShortWindow { got: 0, need: 1 })?;
                let next = last.succ_opt().unwrap_or(last);
                m.learner1
                    .table
                    .lookup(&recent.symbol, next, &m.alignment)
                    .map_err(|gap| EnsembleError::Gaps(vec![gap]).into())
            }
        }
    }

    /// Next-day close in currency units.
    pub fn predict_next_close(&self, recent: &DailyFrame) -> Result<f64, ModelError> {
        let z = self.predict_normalized(recent)?;
        denormalize_close(self.target_stats(), &recent.symbol, z)
    }

    /// Normalized predictions for prepared windows, in order.
    pub fn predict_dataset(&self, data: &WindowedDataset) -> Result<Vec<f64>, ModelError> {
        match self {
            TrainedModel::Daily(m) => Ok(lstm_predict_batch(&m.params, &data.inputs)?),
            TrainedModel::Ensemble(m) => Ok(lstm_predict_batch(&m.learner2, &data.inputs)?),
            TrainedModel::Mlp(m) => data
                .inputs
                .iter()
                .map(|x| m.model.forward(x.as_slice()).map_err(ModelError::from))
                .collect(),
            TrainedModel::Annual(m) => data
                .symbols
                .iter()
                .zip(&data.target_dates)
                .map(|(s, &d)| {
                    m.learner1
                        .table
                        .lookup(s, d, &m.alignment)
                        .map_err(|gap| EnsembleError::Gaps(vec![gap]).into())
                })
                .collect(),
        }
    }
}

/// Restricts the universe to symbols with at least two years of fundamentals,
/// the minimum the annual learner accepts, so that every variant sees the
/// same symbols.
pub fn eligible_universe(
    daily: &BTreeMap<String, DailyFrame>,
    annual: &BTreeMap<String, AnnualFrame>,
) -> BTreeMap<String, DailyFrame> {
    daily
        .iter()
        .filter(|(s, _)| annual.get(*s).is_some_and(|a| a.len() >= 2))
        .map(|(s, f)| (s.clone(), f.clone()))
        .collect()
}

/// Windows of the eight daily features shared by the daily, annual and MLP variants.
pub fn daily_datasets(
    daily: &BTreeMap<String, DailyFrame>,
    window: usize,
    split: &SplitSpec,
) -> Result<DatasetPair, ModelError> {
    Ok(build_datasets(daily, &daily_features(), TARGET_COLUMN, window, split)?)
}

/// Trains one variant; returns the model and the test windows it is scored on.
pub fn train_variant(
    variant: Variant,
    daily: &BTreeMap<String, DailyFrame>,
    annual: &BTreeMap<String, AnnualFrame>,
    configs: &ModelConfigs,
    split: &SplitSpec,
) -> Result<(TrainedModel, WindowedDataset), ModelError> {
    let ens = &configs.ensemble;
    match variant {
        Variant::Daily => {
            let data = daily_datasets(daily, ens.window_length, split)?;
            let (params, _) = lstm_train(&data.train, &ens.learner2)?;
            let model = DailyModel {
                params,
                feature_names: daily_features(),
                window_length: ens.window_length,
                stats: data.train.stats.clone(),
            };
            Ok((TrainedModel::Daily(model), data.test))
        }
        Variant::Mlp => {
            let data = daily_datasets(daily, ens.window_length, split)?;
            let (model, _) = mlp_train(&data.train.flattened(), &data.train.targets, &configs.mlp)?;
            let model = MlpWindowModel {
                model,
                feature_names: daily_features(),
                window_length: ens.window_length,
                stats: data.train.stats.clone(),
            };
            Ok((TrainedModel::Mlp(model), data.test))
        }
        Variant::Annual => {
            let data = daily_datasets(daily, ens.window_length, split)?;
            let targets = close_stats(daily, split)?;
            let learner1 = train_learner1(
                annual,
                &targets,
                Some(split.last_complete_train_year()),
                ens.annual_window,
                &ens.learner1,
            )?;
            let model = AnnualModel {
                learner1,
                alignment: ens.alignment,
                close_stats: targets,
            };
            Ok((TrainedModel::Annual(model), data.test))
        }
        Variant::Ensemble => {
            let (model, data) = train_ensemble(daily, annual, ens, split)?;
            Ok((TrainedModel::Ensemble(model), data.test))
        }
    }
}

/// Rebuilds the test windows a trained model is scored on, so a model loaded
/// from disk can be evaluated without retraining.
pub fn test_dataset(
    model: &TrainedModel,
    daily: &BTreeMap<String, DailyFrame>,
    configs: &ModelConfigs,
    split: &SplitSpec,
) -> Result<WindowedDataset, ModelError> {
    match model {
        TrainedModel::Ensemble(m) => {
            let cfg = EnsembleConfig {
                window_length: m.window_length,
                alignment: m.alignment,
                ..configs.ensemble.clone()
            };
            Ok(learner2_datasets(daily, &m.learner1, &cfg, split)?.test)
        }
        TrainedModel::Daily(DailyModel { window_length, .. })
        | TrainedModel::Mlp(MlpWindowModel { window_length, .. }) => {
            Ok(daily_datasets(daily, *window_length, split)?.test)
        }
        // The annual model ignores the daily window but is scored on the same days.
        TrainedModel::Annual(_) => Ok(daily_datasets(daily, configs.ensemble.window_length, split)?.test),
    }
}

pub const MODEL_FORMAT: &str = "lstm-ensemble-model";
pub const MODEL_VERSION: u32 = 1;

/// Versioned JSON document holding one trained variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    /// Fingerprint of the configuration the model was trained with.
    pub config_fingerprint: String,
    pub model: TrainedModel,
}

impl ModelFile {
    pub fn new(model: TrainedModel, config_fingerprint: String) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            config_fingerprint,
            model,
        }
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<(), ModelError> {
        serde_json::to_writer_pretty(&mut sink, self).map_err(|e| ModelError::File(e.to_string()))?;
        sink.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_reader(source).map_err(|e| ModelError::File(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(ModelError::File(format!("unexpected format {:?}", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(ModelError::File(format!(
                "version {} not supported (expected {MODEL_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("lstm".parse::<Variant>(), Err(ModelError::UnknownVariant(_))));
    }

    #[test]
    fn reference_values() {
        let v: Vec<f64> = Variant::ALL.iter().map(|v| v.reference_rmse()).collect();
        assert_eq!(v, vec![0.0124, 0.08, 0.0119, 0.07]);
    }

    #[test]
    fn model_file_rejects_other_versions() {
        let model = TrainedModel::Daily(DailyModel {
            params: LstmParams::init(8, 2, 1),
            feature_names: daily_features(),
            window_length: 3,
            stats: BTreeMap::new(),
        });
        let mut file = ModelFile::new(model, "abc".into());
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        assert_eq!(ModelFile::read(buf.as_slice()).unwrap(), file);
        file.version = 99;
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        assert!(ModelFile::read(buf.as_slice()).is_err());
    }
}
