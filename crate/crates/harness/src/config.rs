use std::path::Path;

use anyhow::{bail, Context, Result};
use flipscope_core::predtree::{Concept, DEFAULT_MAX_DEPTH};
use flipscope_core::{BinarySequence, ModelSpec};
use flipscope_llm::{MockSpec, ProviderConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Overrides `provider.endpoint_url`.
pub const ENDPOINT_ENV: &str = "FLIPSCOPE_ENDPOINT";
/// Overrides `provider.api_key_env`, the variable the key is read from.
pub const KEY_ENV_ENV: &str = "FLIPSCOPE_API_KEY_ENV";

pub const DEFAULT_P_GRID: [f64; 13] = [
    0.05, 0.1, 0.2, 0.3, 0.4, 0.49, 0.5, 0.51, 0.6, 0.7, 0.8, 0.9, 0.95,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Generation,
    Judgment,
    LearningCurve,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_p_grid() -> Vec<f64> {
    DEFAULT_P_GRID.to_vec()
}
fn default_samples() -> usize {
    200
}
fn default_crop() -> usize {
    50
}
fn default_concepts() -> Vec<BinarySequence> {
    Concept::all_up_to(3)
        .into_iter()
        .map(|c| c.pattern().clone())
        .collect()
}
fn default_n_range() -> Vec<usize> {
    (1..=10).collect()
}
fn default_depths() -> Vec<usize> {
    vec![4, 6]
}
fn default_curve_p() -> f64 {
    0.5
}
fn default_pairs() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub provider: ProviderConfig,
    #[serde(default = "default_p_grid")]
    pub p_grid: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples_per_cell: usize,
    #[serde(default = "default_crop")]
    pub crop_len: usize,
    /// Bit strings such as `"011"`.
    #[serde(default = "default_concepts")]
    pub concepts: Vec<BinarySequence>,
    #[serde(default = "default_n_range")]
    pub n_range: Vec<usize>,
    #[serde(default = "default_depths")]
    pub depth_list: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    /// P(Tails) written into learning-curve prompts.
    #[serde(default = "default_curve_p")]
    pub curve_p: f64,
    /// Pair budget for mean pairwise Levenshtein distance.
    #[serde(default = "default_pairs")]
    pub levenshtein_pairs: usize,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind, provider: ProviderConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            provider,
            p_grid: default_p_grid(),
            samples_per_cell: default_samples(),
            crop_len: default_crop(),
            concepts: default_concepts(),
            n_range: default_n_range(),
            depth_list: default_depths(),
            seed: 0,
            curve_p: default_curve_p(),
            levenshtein_pairs: default_pairs(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Apply the endpoint and key-variable environment overrides.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(ENDPOINT_ENV) {
            self.provider.endpoint_url = url;
        }
        if let Ok(name) = std::env::var(KEY_ENV_ENV) {
            self.provider.api_key_env = name;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!(
                "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            );
        }
        self.provider.validate()?;
        if self.p_grid.is_empty() || self.concepts.is_empty() || self.n_range.is_empty() || self.depth_list.is_empty() {
            bail!("p_grid, concepts, n_range and depth_list must be non-empty");
        }
        if self.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
            bail!("p_grid values must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.curve_p) {
            bail!("curve_p must lie in [0, 1]");
        }
        if self.crop_len == 0 {
            bail!("crop_len must be >= 1");
        }
        if self.samples_per_cell == 0 {
            bail!("samples_per_cell must be >= 1");
        }
        for c in &self.concepts {
            Concept::new(c.clone()).with_context(|| format!("concept {c}"))?;
        }
        if let Some(d) = self
            .depth_list
            .iter()
            .find(|d| **d == 0 || **d > DEFAULT_MAX_DEPTH)
        {
            bail!("depth {d} outside 1..={DEFAULT_MAX_DEPTH}");
        }
        Ok(())
    }

    /// Provider settings as used for requests: the experiment seed drives
    /// mock sampling and request identity.
    pub fn effective_provider(&self) -> ProviderConfig {
        let mut p = self.provider.clone();
        p.seed = self.seed;
        p
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// `mock:<modelspec>` where the spec is JSON or `key=value` pairs, e.g.
/// `mock:variant=window_average,p=prompt,w=5`. `p=prompt` makes the base rate
/// follow each prompt's requested P(Tails).
pub fn parse_mock_provider(arg: &str) -> Result<MockSpec> {
    let spec = arg
        .strip_prefix("mock:")
        .with_context(|| format!("provider {arg:?} is neither mock:<modelspec> nor remote"))?;
    let follow = spec.split(',').any(|kv| kv.trim() == "p=prompt");
    let spec = if follow {
        spec.split(',')
            .map(|kv| if kv.trim() == "p=prompt" { "p=0.5" } else { kv })
            .collect::<Vec<_>>()
            .join(",")
    } else {
        spec.to_string()
    };
    let model = ModelSpec::parse_record(&spec).with_context(|| format!("model spec {spec:?}"))?;
    Ok(if follow {
        MockSpec::following_prompt(model)
    } else {
        MockSpec::model(model)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mock_config(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig::new(
            kind,
            ProviderConfig::mock(MockSpec::model(ModelSpec::bernoulli(0.5).unwrap())),
        )
    }

    #[test]
    fn defaults() {
        let c = mock_config(ExperimentKind::Generation);
        assert_eq!(c.p_grid.len(), 13);
        assert_eq!(c.samples_per_cell, 200);
        assert_eq!(c.crop_len, 50);
        assert_eq!(c.depth_list, vec![4, 6]);
        let concepts: Vec<String> = c.concepts.iter().map(|c| c.to_bit_string()).collect();
        assert_eq!(concepts, vec!["0", "1", "01", "001", "011"]);
        assert_eq!(c.provider.temperature, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn minimal_json_fills_defaults() {
        let json = r#"{"kind": "judgment",
            "provider": {"kind": "mock", "mock_model": {"kind": "model", "model": {"variant": "bernoulli", "p": 0.5}}}}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.schema_version, SCHEMA_VERSION);
        assert_eq!(c.n_range, (1..=10).collect::<Vec<_>>());
        c.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = mock_config(ExperimentKind::Generation);
        c.crop_len = 0;
        assert!(c.validate().is_err());
        let mut c = mock_config(ExperimentKind::Generation);
        c.p_grid.clear();
        assert!(c.validate().is_err());
        let mut c = mock_config(ExperimentKind::LearningCurve);
        c.concepts = vec![BinarySequence::from_bit_str("0101").unwrap()];
        assert!(c.validate().is_err());
        let mut c = mock_config(ExperimentKind::LearningCurve);
        c.depth_list = vec![9];
        assert!(c.validate().is_err());
        let mut c = mock_config(ExperimentKind::Generation);
        c.schema_version = 2;
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"kind": "generation", "provider": {"kind": "mock"}, "surprise": 1}"#
        )
        .is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = mock_config(ExperimentKind::Generation);
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn mock_provider_argument() {
        let m = parse_mock_provider("mock:variant=window_average,p=prompt,w=5").unwrap();
        assert_eq!(m, MockSpec::following_prompt(ModelSpec::window_average(0.5, 5).unwrap()));
        let m = parse_mock_provider("mock:variant=bernoulli,p=0.3").unwrap();
        assert_eq!(m, MockSpec::model(ModelSpec::bernoulli(0.3).unwrap()));
        let m = parse_mock_provider(r#"mock:{"variant":"bernoulli","p":0.25}"#).unwrap();
        assert_eq!(m, MockSpec::model(ModelSpec::bernoulli(0.25).unwrap()));
        assert!(parse_mock_provider("remote").is_err());
        assert!(parse_mock_provider("mock:variant=bernoulli,p=2").is_err());
    }
}
