//! Run settings from a JSON file, overridden by command-line flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pianist_core::density::ModelFamily;
use pianist_core::evaluation::{ExperimentConfig, ModelParams, DEFAULT_GROUPS};
use pianist_core::features::FeatureKind;
use serde::Deserialize;

use crate::CliError;

/// A list given either as `"IOI,DL,ND"` or as `["IOI", "DL", "ND"]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ListValue {
    Joined(String),
    Items(Vec<String>),
}

impl ListValue {
    fn items(&self) -> Vec<String> {
        match self {
            ListValue::Joined(s) => split_list(s),
            ListValue::Items(v) => v.iter().map(|s| s.trim().to_string()).collect(),
        }
    }
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
}

/// Every knob a command may read. Unset fields fall back to defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<Vec<PathBuf>>,
    pub reference: Option<String>,
    pub out: Option<PathBuf>,
    pub model: Option<ListValue>,
    pub features: Option<ListValue>,
    pub weights: Option<Vec<f64>>,
    pub bins: Option<usize>,
    pub bandwidths: Option<BTreeMap<String, f64>>,
    pub gmm_k: Option<usize>,
    pub groups: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub sweep: Option<bool>,
    pub performers: Option<usize>,
    pub notes: Option<usize>,
    pub separation: Option<f64>,
    pub format: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those of `self`.
    pub fn overridden_by(self, flags: RunConfig) -> RunConfig {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: flags.$f.or(self.$f)),* } };
        }
        pick!(
            input, reference, out, model, features, weights, bins, bandwidths, gmm_k, groups, seed, jobs, sweep,
            performers, notes, separation, format
        )
    }

    pub fn inputs(&self) -> Result<Vec<PathBuf>, CliError> {
        let inputs = self.input.clone().unwrap_or_default();
        if inputs.is_empty() {
            return Err(CliError::Usage("no --input given".into()));
        }
        if let Some(missing) = inputs.iter().find(|p| !p.exists()) {
            return Err(CliError::Usage(format!("input path {} does not exist", missing.display())));
        }
        Ok(inputs)
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        self.out.clone().ok_or_else(|| CliError::Usage("no --out directory given".into()))
    }

    pub fn feature_kinds(&self, default: &[FeatureKind]) -> Result<Vec<FeatureKind>, CliError> {
        match &self.features {
            None => Ok(default.to_vec()),
            Some(list) => {
                let items = list.items();
                if items.is_empty() {
                    return Err(CliError::Usage("empty feature list".into()));
                }
                FeatureKind::parse_list(&items.join(",")).map_err(|e| CliError::Usage(e.to_string()))
            }
        }
    }

    pub fn families(&self, default: &[ModelFamily]) -> Result<Vec<ModelFamily>, CliError> {
        match &self.model {
            None => Ok(default.to_vec()),
            Some(list) => list
                .items()
                .iter()
                .map(|s| s.parse::<ModelFamily>().map_err(|e| CliError::Usage(e.to_string())))
                .collect(),
        }
    }

    pub fn params(&self) -> Result<ModelParams, CliError> {
        let mut params = ModelParams::default();
        if let Some(bins) = self.bins {
            params.n_bins = bins;
        }
        if let Some(k) = self.gmm_k {
            params.gmm_k = k;
        }
        for (name, &h) in self.bandwidths.iter().flatten() {
            let kind: FeatureKind = name.parse().map_err(|e: pianist_core::Error| CliError::Usage(e.to_string()))?;
            params.bandwidths.insert(kind, h);
        }
        Ok(params)
    }

    /// Experiment for one family; equal weights unless given.
    pub fn experiment(&self, family: ModelFamily, features: &[FeatureKind]) -> Result<ExperimentConfig, CliError> {
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0; features.len()],
        };
        let config = ExperimentConfig {
            family,
            features: features.to_vec(),
            weights,
            params: self.params()?,
            n_groups: self.groups.unwrap_or(DEFAULT_GROUPS),
            seed: self.seed.unwrap_or(0),
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

/// `IOI=0.01,ND=0.02` into a map.
pub fn parse_bandwidths(s: &str) -> Result<BTreeMap<String, f64>, String> {
    split_list(s)
        .into_iter()
        .map(|item| {
            let (k, v) = item.split_once('=').ok_or_else(|| format!("expected KIND=VALUE, got `{item}`"))?;
            let v: f64 = v.trim().parse().map_err(|_| format!("bad bandwidth `{v}`"))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}

/// Comma-separated fusion weights as one flag value.
#[derive(Debug, Clone)]
pub struct Weights(pub Vec<f64>);

pub fn parse_weights(s: &str) -> Result<Weights, String> {
    split_list(s)
        .into_iter()
        .map(|w| w.parse::<f64>().map_err(|_| format!("bad weight `{w}`")))
        .collect::<Result<Vec<_>, _>>()
        .map(Weights)
}

pub fn parse_list(s: &str) -> Result<ListValue, String> {
    Ok(ListValue::Joined(s.to_string()))
}
