//! Run configuration: a single JSON document, with command-line overrides
//! applied through dotted paths (`--train.seed=7`) before deserialisation.

use crate::error::{CliError, CliResult};
use gistnet_core::data::{BlurSchedule, Dataset, SyntheticConfig};
use gistnet_core::model::{build_fovea, build_gistnet, GistNetConfig, ModelParams};
use gistnet_core::rng::SeededRng;
use gistnet_core::tensor::{DType, Scalar};
use gistnet_core::train::Network;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gistnet,
    Fovea,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// CPU-trainable configuration.
    Desk,
    /// Full-scale 224/448 configuration for shape and parameter
    /// verification; training warns that it is not desk-feasible.
    Paper,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default = "one")]
    pub scale_num: u32,
    #[serde(default = "one")]
    pub scale_den: u32,
    /// Overrides the preset's class count (set automatically from
    /// synthetic data when omitted).
    #[serde(default)]
    pub num_classes: Option<usize>,
}

fn default_preset() -> Preset {
    Preset::Desk
}
fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DtypeChoice {
    F32,
    F64,
}

impl DtypeChoice {
    pub fn dtype(self) -> DType {
        match self {
            DtypeChoice::F32 => DType::F32,
            DtypeChoice::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSection {
    /// Learning rate. Defaults per preset: 1e-3 at desk scale, 1e-6 under
    /// the paper preset (the reported full-scale setting, tuned for
    /// 1M-iteration runs).
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "one_usize")]
    pub epochs: usize,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    /// Mandatory; every run is a pure function of (config, inputs, seed).
    pub seed: u64,
    #[serde(default = "default_dtype")]
    pub dtype: DtypeChoice,
    #[serde(default = "one_u64")]
    pub log_every: u64,
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Fovea crop margin as a fraction of max(bbox w, h).
    #[serde(default)]
    pub margin: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_batch() -> usize {
    32
}
fn one_usize() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn default_dtype() -> DtypeChoice {
    DtypeChoice::F32
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct DataSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSection {
    #[serde(default = "default_topk")]
    pub topk: Vec<usize>,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default = "default_ratio_bins")]
    pub ratio_bins: usize,
    #[serde(default = "one_usize")]
    pub ratio_topk: usize,
    /// Explicit blur sigmas; None uses the 40-level default schedule
    /// scaled to the context side.
    #[serde(default)]
    pub blur_levels: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub blur_topk: usize,
    #[serde(default = "default_sweep_samples")]
    pub sweep_samples: usize,
    #[serde(default = "default_embed_samples")]
    pub embed_samples: usize,
    #[serde(default = "default_perplexity")]
    pub tsne_perplexity: f64,
    #[serde(default = "default_tsne_iters")]
    pub tsne_iters: usize,
    #[serde(default = "default_probe_split")]
    pub probe_split: f64,
    #[serde(default = "default_saliency_samples")]
    pub saliency_samples: Vec<usize>,
}

fn default_topk() -> Vec<usize> {
    vec![1, 3, 5]
}
fn default_z() -> f64 {
    1.96
}
fn default_ratio_bins() -> usize {
    5
}
fn default_sweep_samples() -> usize {
    400
}
fn default_embed_samples() -> usize {
    1000
}
fn default_perplexity() -> f64 {
    30.0
}
fn default_tsne_iters() -> usize {
    1000
}
fn default_probe_split() -> f64 {
    0.7
}
fn default_saliency_samples() -> Vec<usize> {
    vec![0, 1, 2, 3]
}

impl Default for EvalSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all eval fields have defaults")
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Parses the JSON file and applies `--path.to.field=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Format(format!(
                "{}: line {} column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.finalize()?;
        Ok(cfg)
    }

    /// Cross-field validation plus derived defaults (synthetic class count
    /// feeds the model's class count).
    pub fn finalize(&mut self) -> CliResult<()> {
        match (&self.data.synthetic, &self.data.manifest) {
            (Some(s), None) => {
                s.validate()?;
                let k = s.num_classes();
                match self.model.num_classes {
                    None => self.model.num_classes = Some(k),
                    Some(m) if m != k => {
                        return Err(CliError::Config(format!(
                            "model.num_classes {m} conflicts with synthetic data ({k} categories)"
                        )))
                    }
                    _ => {}
                }
            }
            (None, Some(m)) => {
                if !m.is_file() {
                    return Err(CliError::Config(format!(
                        "data.manifest {} does not exist",
                        m.display()
                    )));
                }
                if let Some(t) = &self.data.test_manifest {
                    if !t.is_file() {
                        return Err(CliError::Config(format!(
                            "data.test_manifest {} does not exist",
                            t.display()
                        )));
                    }
                }
            }
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "data section must set either synthetic or manifest, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "data section must set synthetic or manifest".into(),
                ))
            }
        }
        if self.model.scale_num == 0 || self.model.scale_den == 0 {
            return Err(CliError::Config("model scale must be positive".into()));
        }
        for &k in &self.eval.topk {
            if k == 0 {
                return Err(CliError::Config("eval.topk entries must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// The resolved dual-stream model configuration (class count applied,
    /// scale applied).
    pub fn model_config(&self) -> CliResult<GistNetConfig> {
        let mut cfg = match self.model.preset {
            Preset::Desk => GistNetConfig::desk_scale(),
            Preset::Paper => GistNetConfig::full_scale(),
        };
        cfg.scale_num = self.model.scale_num;
        cfg.scale_den = self.model.scale_den;
        let mut cfg = cfg.scaled();
        if let Some(k) = self.model.num_classes {
            cfg.fovea.num_classes = k;
            cfg.periphery.num_classes = k;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the configured network with deterministic initialisation.
    pub fn build_network<T: Scalar>(&self) -> CliResult<(Network, ModelParams<T>)> {
        let cfg = self.model_config()?;
        let rng = SeededRng::new(self.train.seed, 0);
        Ok(match self.model.kind {
            ModelKind::Gistnet => {
                let (m, p) = build_gistnet(&cfg, &rng)?;
                (Network::Gist(m), p)
            }
            ModelKind::Fovea => {
                let (m, p) = build_fovea(&cfg.fovea, &rng)?;
                (Network::Fovea(m), p)
            }
        })
    }

    /// Builds the baseline (fovea-only) variant of this config, used by
    /// two-checkpoint comparisons.
    pub fn baseline_variant(&self) -> Self {
        let mut c = self.clone();
        c.model.kind = ModelKind::Fovea;
        c
    }

    /// The training dataset.
    pub fn train_dataset(&self) -> CliResult<Dataset> {
        if let Some(s) = &self.data.synthetic {
            let (train, _) = gistnet_core::data::generate_synthetic(s)?;
            return Ok(Dataset::Synthetic(train));
        }
        let manifest = self.data.manifest.as_ref().expect("finalize checked");
        Ok(Dataset::Disk(gistnet_core::data::load_manifest(manifest)?))
    }

    /// The held-out dataset (synthetic test split, or test_manifest,
    /// falling back to the training manifest).
    pub fn test_dataset(&self) -> CliResult<Dataset> {
        if let Some(s) = &self.data.synthetic {
            let (_, test) = gistnet_core::data::generate_synthetic(s)?;
            return Ok(Dataset::Synthetic(test));
        }
        let path = self
            .data
            .test_manifest
            .as_ref()
            .or(self.data.manifest.as_ref())
            .expect("finalize checked");
        Ok(Dataset::Disk(gistnet_core::data::load_manifest(path)?))
    }

    /// The blur schedule: explicit levels or the 40-level default scaled to
    /// the configured context side.
    pub fn blur_schedule(&self) -> CliResult<BlurSchedule> {
        let schedule = match &self.eval.blur_levels {
            Some(levels) => BlurSchedule {
                levels: levels.clone(),
            },
            None => BlurSchedule::default_for_side(self.model_config()?.periphery.side),
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// The effective learning rate: explicit value, else the preset
    /// default (1e-3 desk, 1e-6 paper).
    pub fn alpha(&self) -> f64 {
        self.train.alpha.unwrap_or(match self.model.preset {
            Preset::Desk => 1e-3,
            Preset::Paper => 1e-6,
        })
    }

    /// Digest input: the resolved model configuration plus kind.
    pub fn digest_payload(&self) -> CliResult<String> {
        let cfg = self.model_config()?;
        let kind = match self.model.kind {
            ModelKind::Gistnet => "gistnet",
            ModelKind::Fovea => "fovea",
        };
        Ok(format!(
            "{{\"kind\":\"{kind}\",\"config\":{}}}",
            serde_json::to_string(&cfg).expect("config serialises")
        ))
    }
}

/// Applies one `--a.b.c=value` override onto the JSON tree. Values parse as
/// JSON when possible, else as strings.
fn apply_override(root: &mut serde_json::Value, flag: &str) -> CliResult<()> {
    let body = flag.strip_prefix("--").ok_or_else(|| {
        CliError::Config(format!("override '{flag}' must start with --path.to.field="))
    })?;
    let (path, raw) = body
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{flag}' missing '='")))?;
    if path.is_empty() {
        return Err(CliError::Config(format!("override '{flag}' has an empty path")));
    }
    let value: serde_json::Value = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(_) => serde_json::Value::String(raw.to_string()),
    };
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            return Err(CliError::Config(format!(
                "override path '{path}' crosses a non-object at '{part}'"
            )));
        }
        let map = cur.as_object_mut().expect("checked");
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = map
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> String {
        r#"{
            "model": {"kind": "gistnet", "preset": "desk"},
            "train": {"seed": 42},
            "data": {"synthetic": {
                "num_pairs": 4, "num_context_classes": 8, "fidelity": 0.9,
                "scene_side": 128, "object_side_min": 16, "object_side_max": 104,
                "train_count": 100, "test_count": 20, "seed": 7
            }},
            "output_dir": "out"
        }"#
        .to_string()
    }

    fn load_from_str(json: &str, overrides: &[&str]) -> CliResult<RunConfig> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, json).unwrap();
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(&path, &o)
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = load_from_str(&base_json(), &[]).unwrap();
        assert_eq!(cfg.alpha(), 1e-3);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.eval.topk, vec![1, 3, 5]);
        // Synthetic class count propagates to the model.
        assert_eq!(cfg.model.num_classes, Some(8));
        assert_eq!(cfg.model_config().unwrap().fovea.num_classes, 8);
    }

    #[test]
    fn seed_is_mandatory() {
        let json = base_json().replace(r#""train": {"seed": 42}"#, r#""train": {}"#);
        assert!(matches!(
            load_from_str(&json, &[]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn dotted_overrides_apply() {
        let cfg = load_from_str(
            &base_json(),
            &[
                "--train.seed=7",
                "--train.alpha=0.01",
                "--data.synthetic.fidelity=0.0",
                "--model.kind=fovea",
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.alpha(), 0.01);
        assert_eq!(cfg.data.synthetic.unwrap().fidelity, 0.0);
        assert!(matches!(cfg.model.kind, ModelKind::Fovea));
    }

    #[test]
    fn invalid_fidelity_rejected() {
        let r = load_from_str(&base_json(), &["--data.synthetic.fidelity=1.5"]);
        assert!(matches!(r, Err(CliError::Core(_)) | Err(CliError::Config(_))));
    }

    #[test]
    fn class_count_conflict_rejected() {
        let r = load_from_str(&base_json(), &["--model.num_classes=10"]);
        assert!(matches!(r, Err(CliError::Config(_))));
    }

    #[test]
    fn missing_manifest_path_rejected() {
        let json = base_json().replace(
            r#""data": {"synthetic": {
                "num_pairs": 4, "num_context_classes": 8, "fidelity": 0.9,
                "scene_side": 128, "object_side_min": 16, "object_side_max": 104,
                "train_count": 100, "test_count": 20, "seed": 7
            }}"#,
            r#""data": {"manifest": "/no/such/file.json"}"#,
        );
        assert!(matches!(load_from_str(&json, &[]), Err(CliError::Config(_))));
    }

    #[test]
    fn paper_preset_resolves_full_scale() {
        let cfg = load_from_str(&base_json(), &["--model.preset=paper", "--model.num_classes=8"])
            .unwrap();
        // Synthetic data pins the class count; shape presets keep their
        // input geometry.
        let mc = cfg.model_config().unwrap();
        assert_eq!(mc.fovea.side, 224);
        assert_eq!(mc.periphery.side, 448);
        assert_eq!(mc.fovea.num_classes, 8);
    }

    #[test]
    fn paper_preset_defaults_to_reported_learning_rate() {
        let cfg = load_from_str(&base_json(), &["--model.preset=paper"]).unwrap();
        assert_eq!(cfg.alpha(), 1e-6);
        let over = load_from_str(
            &base_json(),
            &["--model.preset=paper", "--train.alpha=0.01"],
        )
        .unwrap();
        assert_eq!(over.alpha(), 0.01);
    }

    #[test]
    fn digest_payload_distinguishes_kind_and_preset() {
        let a = load_from_str(&base_json(), &[]).unwrap();
        let b = load_from_str(&base_json(), &["--model.kind=fovea"]).unwrap();
        assert_ne!(a.digest_payload().unwrap(), b.digest_payload().unwrap());
    }
}
