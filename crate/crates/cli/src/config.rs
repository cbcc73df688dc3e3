//! The optional TOML run configuration. Every key mirrors a flag; flags win.

use std::path::Path;

use coherence_core::corpus::Unit;
use coherence_core::net::ModelConfig;
use coherence_core::paths::PathQueryParams;
use coherence_core::sampler::{SplitSpec, Strategy};
use coherence_core::{Error, Result};
use serde::Deserialize;

use crate::args::{ModelFlags, PathFlags};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub paths: PathSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub corpus: CorpusSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub max_seq_len: Option<usize>,
    pub embed_dim: Option<usize>,
    pub num_filters: Option<usize>,
    pub filter_width: Option<usize>,
    pub stride: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub early_stop_patience: Option<usize>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    pub train_embeddings: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSection {
    pub k: Option<usize>,
    pub max_length: Option<usize>,
    /// 0 disables the deadline.
    pub timeout_ms: Option<u64>,
    pub directed: Option<bool>,
    pub max_degree: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub strategy: Option<String>,
    pub unit: Option<String>,
    pub seed: Option<u64>,
    /// Train, validation and test fractions.
    pub split: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub min_new_entities: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MIN_NEW_ENTITIES: usize = 3;

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string().trim_end()))
    }

    pub fn path_params(&self, flags: &PathFlags) -> Result<PathQueryParams> {
        let mut p = PathQueryParams::default();
        let f = &self.paths;
        p.k = flags.k.or(f.k).unwrap_or(p.k);
        p.max_length = flags.max_length.or(f.max_length).unwrap_or(p.max_length);
        if flags.no_timeout {
            p.timeout = None;
        } else if let Some(ms) = flags.timeout_ms.or(f.timeout_ms) {
            p.timeout = (ms > 0).then(|| std::time::Duration::from_millis(ms));
        }
        p.directed = flags.directed || f.directed.unwrap_or(false);
        p.max_degree = flags.max_degree.or(f.max_degree);
        p.validate()?;
        Ok(p)
    }

    pub fn strategy(&self, flag: Option<Strategy>) -> Result<Strategy> {
        match (flag, &self.sample.strategy) {
            (Some(s), _) => Ok(s),
            (None, Some(s)) => s.parse(),
            (None, None) => Ok(Strategy::RUf),
        }
    }

    pub fn unit(&self, flag: Option<Unit>) -> Result<Unit> {
        match (flag, &self.sample.unit) {
            (Some(u), _) => Ok(u),
            (None, Some(u)) => u.parse(),
            (None, None) => Ok(Unit::Entities),
        }
    }

    pub fn split(&self, flag: Option<&str>) -> Result<SplitSpec> {
        let fractions = match flag {
            Some(s) => {
                let v: Vec<f64> = s
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Parameter(format!("bad split `{s}`, expected three fractions")))?;
                if v.len() != 3 {
                    return Err(Error::Parameter(format!("bad split `{s}`, expected three fractions")));
                }
                Some([v[0], v[1], v[2]])
            }
            None => self.sample.split,
        };
        Ok(match fractions {
            Some([train, valid, test]) => SplitSpec::Fractions { train, valid, test },
            None => SplitSpec::default(),
        })
    }

    /// Model hyperparameters for `unit`: defaults, then the file, then flags.
    /// The embedding width always comes from the vectors.
    pub fn model(&self, unit: Unit, embed_dim: usize, flags: &ModelFlags) -> Result<ModelConfig> {
        let m = &self.model;
        if let Some(d) = m.embed_dim.filter(|d| *d != embed_dim) {
            return Err(Error::Parameter(format!(
                "config sets embed_dim {d} but the vectors have {embed_dim} dimensions"
            )));
        }
        let mut c = ModelConfig::for_unit(unit);
        c.embed_dim = embed_dim;
        macro_rules! layer {
            ($field:ident, $flag:expr) => {
                if let Some(v) = $flag.or(m.$field) {
                    c.$field = v;
                }
            };
        }
        layer!(max_seq_len, flags.max_seq_len);
        layer!(num_filters, flags.num_filters);
        layer!(filter_width, flags.filter_width);
        layer!(stride, None);
        layer!(hidden_dim, flags.hidden_dim);
        layer!(dropout_rate, flags.dropout);
        layer!(epochs, flags.epochs);
        layer!(batch_size, flags.batch_size);
        layer!(early_stop_patience, flags.patience);
        layer!(learning_rate, flags.learning_rate);
        layer!(beta1, None);
        layer!(beta2, None);
        layer!(epsilon, None);
        layer!(seed, flags.seed);
        c.train_embeddings = flags.train_embeddings || m.train_embeddings.unwrap_or(false);
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let cfg: FileConfig = toml::from_str("[model]\nepochs = 3\nnum_filters = 7\n[paths]\nk = 2\ntimeout_ms = 0").unwrap();
        let flags = ModelFlags {
            epochs: Some(9),
            ..Default::default()
        };
        let m = cfg.model(Unit::Words, 16, &flags).unwrap();
        assert_eq!((m.epochs, m.num_filters, m.embed_dim, m.max_seq_len), (9, 7, 16, 128));
        let p = cfg.path_params(&PathFlags::default()).unwrap();
        assert_eq!((p.k, p.max_length, p.timeout), (2, 9, None));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[model]\nepoch = 3").is_err());
        assert!(toml::from_str::<FileConfig>("[sampling]").is_err());
    }

    #[test]
    fn split_flag_parses_three_fractions() {
        let cfg = FileConfig::default();
        assert_eq!(
            cfg.split(Some("0.8,0.1,0.1")).unwrap(),
            SplitSpec::Fractions { train: 0.8, valid: 0.1, test: 0.1 }
        );
        assert!(cfg.split(Some("0.8,0.2")).is_err());
    }
}
