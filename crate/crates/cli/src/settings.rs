//! Run settings: profile defaults, overridden by an optional TOML file,
//! overridden by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sra_core::model::ModelConfig;
use sra_core::pipeline::{EvalOptions, Experiment};
use sra_core::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    /// Train/validation/test fractions used when no split file is given.
    pub split_ratios: [f64; 3],
    pub min_freq: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub profile: String,
    pub seed: u64,
    pub data: DataSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Settings {
    pub fn defaults(profile: &str) -> Result<Self> {
        let train = TrainConfig::profile(profile)?;
        let mut model = ModelConfig::desk(0, 0);
        model.max_len = train.max_len;
        Ok(Self {
            profile: profile.to_string(),
            seed: 1,
            data: DataSettings { split_ratios: [0.8, 0.1, 0.1], min_freq: 1 },
            model,
            train,
            eval: EvalOptions::default(),
        })
    }

    /// Resolves the profile (flag, then file, then `desk`), applies the file
    /// on top of that profile's defaults, then the seed flag.
    pub fn resolve(config: Option<&Path>, profile: Option<&str>, seed: Option<u64>) -> Result<Self> {
        let file: Option<Value> = match config {
            Some(p) => {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let t: toml::Table = toml::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?;
                Some(serde_json::to_value(t)?)
            }
            None => None,
        };
        let from_file = file.as_ref().and_then(|v| v.get("profile")).and_then(Value::as_str);
        let name = profile.or(from_file).unwrap_or("desk");
        let mut merged = serde_json::to_value(Self::defaults(name)?)?;
        if let Some(f) = &file {
            merge(&mut merged, f, "")?;
        }
        merged["profile"] = Value::from(name);
        let mut s: Settings = serde_json::from_value(merged).context("invalid configuration")?;
        if let Some(seed) = seed {
            s.seed = seed;
        }
        s.train.seed = s.seed;
        s.train.validate()?;
        Ok(s)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment { model: self.model.clone(), train: self.train.clone(), eval: self.eval }
    }
}

/// Overlays `over` onto `base`. Every key in `over` must already exist in
/// `base`, so typos are reported instead of silently ignored. Tables with a
/// `kind` tag pick an enum variant and replace the default outright.
fn merge(base: &mut Value, over: &Value, at: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() && v.get("kind").is_none() => {
                        merge(slot, v, &path)?
                    }
                    Some(slot) => *slot = v.clone(),
                    None => bail!("unknown configuration key `{path}`"),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(s: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), s).unwrap();
        f
    }

    #[test]
    fn precedence() {
        let f = write("profile = \"paper-en\"\nseed = 9\n[train]\nepochs = 2\n[model]\nsupervision_head = \"mean\"\n");
        let s = Settings::resolve(Some(f.path()), None, None).unwrap();
        assert_eq!(s.profile, "paper-en");
        assert_eq!(s.train.learning_rate, 2e-5);
        assert_eq!(s.train.epochs, 2);
        assert_eq!(s.seed, 9);
        assert_eq!(s.model.supervision_head, sra_core::model::HeadSelection::Mean);
        let s = Settings::resolve(Some(f.path()), Some("desk"), Some(4)).unwrap();
        assert_eq!((s.profile.as_str(), s.train.learning_rate, s.train.epochs), ("desk", 1e-3, 2));
        assert_eq!((s.seed, s.train.seed), (4, 4));
    }

    #[test]
    fn typos_and_bad_values_fail() {
        let f = write("[train]\nlearnig_rate = 0.1\n");
        let err = Settings::resolve(Some(f.path()), None, None).unwrap_err().to_string();
        assert!(err.contains("train.learnig_rate"), "{err}");
        let f = write("[train]\nepochs = 0\n");
        assert!(Settings::resolve(Some(f.path()), None, None).is_err());
        assert!(Settings::resolve(None, Some("paper-xx"), None).is_err());
    }

    #[test]
    fn strategy_from_toml() {
        let f = write("[eval.strategy]\nkind = \"top_k_ratio\"\nratio = 0.2\n");
        let s = Settings::resolve(Some(f.path()), None, None).unwrap();
        assert_eq!(s.eval.strategy, sra_core::explain::ExtractionStrategy::TopKRatio { ratio: 0.2 });
    }
}
