//! Experiment plan: one JSON document describing datasets, encoder, soft labels, models,
//! methods, training and reporting.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use softts_core::dataset::{list_datasets, VARIABLE_LENGTH_DATASETS};
use softts_core::reporting::ranks::DEFAULT_ALPHA;
use softts_core::{EncoderSpec, Method, MethodConfig, SoftLabelConfig};
use softts_nn::{Architecture, ModelSpec, Optimizer, TrainConfig};

pub const ARCHIVE_ENV: &str = "SOFTTS_ARCHIVE";
pub const ALL_FIXED_LENGTH: &str = "all-fixed-length";

const PAPER_FULL: &str = include_str!("../presets/paper-full.json");
const DESK_SCALE: &str = include_str!("../presets/desk-scale.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub data: DataSection,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub softlabel: SoftLabelConfig,
    pub models: Vec<ModelEntry>,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub report: ReportSection,
    pub output_dir: PathBuf,
}

fn default_encoder() -> EncoderSpec {
    EncoderSpec::random_conv(softts_core::representation::DEFAULT_NUM_KERNELS, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub archive_root: PathBuf,
    pub datasets: DatasetSelection,
    #[serde(default = "yes")]
    pub normalize: bool,
}

fn yes() -> bool {
    true
}

/// Either explicit names or the string `all-fixed-length`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum DatasetSelection {
    AllFixedLength,
    Named(Vec<String>),
}

impl TryFrom<serde_json::Value> for DatasetSelection {
    type Error = String;

    fn try_from(v: serde_json::Value) -> Result<Self, Self::Error> {
        match v {
            serde_json::Value::String(s) if s == ALL_FIXED_LENGTH => Ok(Self::AllFixedLength),
            serde_json::Value::Array(items) => items
                .into_iter()
                .map(|i| match i {
                    serde_json::Value::String(s) => Ok(s),
                    other => Err(format!("dataset names must be strings, got {other}")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Self::Named),
            other => Err(format!(
                "expected a list of dataset names or \"{ALL_FIXED_LENGTH}\", got {other}"
            )),
        }
    }
}

impl From<DatasetSelection> for serde_json::Value {
    fn from(d: DatasetSelection) -> Self {
        match d {
            DatasetSelection::AllFixedLength => ALL_FIXED_LENGTH.into(),
            DatasetSelection::Named(n) => n.into(),
        }
    }
}

/// Architecture preset plus optional width override. Accepts a bare preset name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelEntryRaw")]
pub struct ModelEntry {
    pub preset: ModelPreset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_channels: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelEntryRaw {
    Name(String),
    Full {
        preset: String,
        #[serde(default)]
        base_channels: Option<usize>,
    },
}

impl TryFrom<ModelEntryRaw> for ModelEntry {
    type Error = String;

    fn try_from(raw: ModelEntryRaw) -> Result<Self, Self::Error> {
        let (name, base_channels) = match raw {
            ModelEntryRaw::Name(n) => (n, None),
            ModelEntryRaw::Full {
                preset,
                base_channels,
            } => (preset, base_channels),
        };
        if base_channels == Some(0) {
            return Err("base_channels must be positive".into());
        }
        Ok(Self {
            preset: name.parse()?,
            base_channels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelPreset {
    Inception(usize),
    LstmFcn,
    Resnet18,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 6] = [
        ModelPreset::Resnet18,
        ModelPreset::LstmFcn,
        ModelPreset::Inception(6),
        ModelPreset::Inception(3),
        ModelPreset::Inception(2),
        ModelPreset::Inception(1),
    ];

    pub fn spec(self, num_classes: usize, input_length: usize, seed: u64) -> ModelSpec {
        match self {
            ModelPreset::Inception(d) => ModelSpec::inception(d, num_classes, input_length, seed),
            ModelPreset::LstmFcn => ModelSpec::lstm_fcn(num_classes, input_length, seed),
            ModelPreset::Resnet18 => ModelSpec::resnet18(num_classes, input_length, seed),
        }
    }

    pub fn architecture(self) -> Architecture {
        match self {
            ModelPreset::Inception(_) => Architecture::Inception,
            ModelPreset::LstmFcn => Architecture::LstmFcn,
            ModelPreset::Resnet18 => Architecture::Resnet18,
        }
    }
}

impl fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelPreset::Inception(6) => f.write_str("inceptiontime"),
            ModelPreset::Inception(d) => write!(f, "inceptiontime-{d}"),
            ModelPreset::LstmFcn => f.write_str("lstm_fcn"),
            ModelPreset::Resnet18 => f.write_str("resnet18"),
        }
    }
}

impl std::str::FromStr for ModelPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = Self::ALL.iter().map(ToString::to_string).collect();
                format!("unknown model `{s}`, expected one of {}", names.join(", "))
            })
    }
}

impl TryFrom<String> for ModelPreset {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<ModelPreset> for String {
    fn from(p: ModelPreset) -> Self {
        p.to_string()
    }
}

/// A method with optional overrides. Unset hyperparameters take the per-model preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MethodEntryRaw")]
pub struct MethodEntry {
    pub method: Method,
    /// Name in result records; defaults to the method name, or `ss-<encoder>` when the
    /// entry overrides the encoder.
    pub label: String,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub tau: Option<f64>,
    /// Encoder for this entry's soft labels, replacing the plan-level encoder.
    pub encoder: Option<EncoderSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MethodEntryRaw {
    Name(String),
    Full(MethodObject),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodObject {
    method: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    epsilon: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    tau: Option<f64>,
    #[serde(default)]
    encoder: Option<EncoderSpec>,
}

fn parse_method(name: &str) -> Result<Method, String> {
    name.parse::<Method>()
        .map_err(|_| format!("unknown method `{name}`, expected one of baseline, ss, ls, cp"))
}

impl TryFrom<MethodEntryRaw> for MethodEntry {
    type Error = String;

    fn try_from(raw: MethodEntryRaw) -> Result<Self, Self::Error> {
        let obj = match raw {
            MethodEntryRaw::Name(n) => MethodObject {
                method: n,
                label: None,
                epsilon: None,
                beta: None,
                tau: None,
                encoder: None,
            },
            MethodEntryRaw::Full(o) => o,
        };
        let method = parse_method(&obj.method)?;
        if obj.encoder.is_some() && method != Method::Ss {
            return Err("`encoder` applies only to method ss".into());
        }
        let label = obj.label.unwrap_or_else(|| match &obj.encoder {
            Some(e) => format!("ss-{}", e.key()),
            None => method.as_str().to_owned(),
        });
        Ok(Self {
            method,
            label,
            epsilon: obj.epsilon,
            beta: obj.beta,
            tau: obj.tau,
            encoder: obj.encoder,
        })
    }
}

impl MethodEntry {
    /// Full hyperparameters for `model`, filling unset values from the per-model defaults.
    pub fn resolve(&self, model: ModelPreset) -> MethodConfig {
        let mut cfg = preset_method(self.method, model);
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        cfg
    }
}

/// Per-model defaults: `tau = 2` except 4 for ResNet18; soft-label weight 1 for the
/// full InceptionTime, 0.5 for depths 1 and 2, 0.1 otherwise; `epsilon = 0.1`;
/// confidence-penalty weight 0.1.
pub fn preset_method(method: Method, model: ModelPreset) -> MethodConfig {
    match method {
        Method::Baseline => MethodConfig::baseline(),
        Method::Ls => MethodConfig::label_smoothing(0.1),
        Method::Cp => MethodConfig::confidence_penalty(0.1),
        Method::Ss => {
            let tau = if model == ModelPreset::Resnet18 { 4.0 } else { 2.0 };
            let beta = match model {
                ModelPreset::Inception(6) => 1.0,
                ModelPreset::Inception(1) | ModelPreset::Inception(2) => 0.5,
                _ => 0.1,
            };
            MethodConfig::soft_label(beta, tau)
        }
    }
}

/// Training settings shared by every cell, plus the list of seeds. Every cell runs once
/// per seed; the seed drives initialisation, shuffling and dropout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let c = TrainConfig::default();
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            optimizer: c.optimizer,
            eval_every: c.eval_every,
            seeds: vec![0],
        }
    }
}

impl TrainSection {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            eval_every: self.eval_every,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Methods compared in the per-model scatter plots, `[x, y]`.
    #[serde(default = "default_scatter")]
    pub scatter: [String; 2],
    #[serde(default)]
    pub tsne: Vec<TsneRequest>,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_scatter() -> [String; 2] {
    ["baseline".into(), "ss".into()]
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            scatter: default_scatter(),
            tsne: Vec::new(),
        }
    }
}

/// Penultimate-feature maps of one trained model on one dataset's test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneRequest {
    pub model: ModelPreset,
    pub dataset: String,
    /// One panel per method label.
    #[serde(default = "default_scatter_vec")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub perplexity: Option<f64>,
}

fn default_scatter_vec() -> Vec<String> {
    default_scatter().to_vec()
}

/// Reads a plan from a file, or a built-in preset by name (`paper-full`, `desk-scale`).
pub fn load_plan(source: &str) -> Result<ExperimentPlan> {
    let path = Path::new(source);
    let (text, origin) = if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading plan {source}"))?;
        (text, source.to_owned())
    } else {
        match source {
            "paper-full" => (PAPER_FULL.to_owned(), "preset paper-full".to_owned()),
            "desk-scale" => (DESK_SCALE.to_owned(), "preset desk-scale".to_owned()),
            _ => bail!("plan file {source} not found (built-in presets: paper-full, desk-scale)"),
        }
    };
    let mut plan = parse_plan(&text).with_context(|| format!("invalid plan ({origin})"))?;
    if let Ok(root) = std::env::var(ARCHIVE_ENV) {
        if !root.is_empty() {
            plan.data.archive_root = root.into();
        }
    }
    Ok(plan)
}

/// Parses and validates plan JSON. Errors name the offending field path.
pub fn parse_plan(text: &str) -> Result<ExperimentPlan> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let plan: ExperimentPlan = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        anyhow::anyhow!("at `{path}`: {}", e.into_inner())
    })?;
    plan.validate()?;
    Ok(plan)
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            bail!("at `models`: at least one model is required");
        }
        if self.methods.is_empty() {
            bail!("at `methods`: at least one method is required");
        }
        let mut labels = BTreeSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            if !labels.insert(&m.label) {
                bail!("at `methods[{i}]`: duplicate method label `{}`", m.label);
            }
            for model in &self.models {
                m.resolve(model.preset)
                    .validate()
                    .map_err(|e| anyhow::anyhow!("at `methods[{i}]`: {e}"))?;
            }
            if let Some(enc) = &m.encoder {
                enc.validate()
                    .map_err(|e| anyhow::anyhow!("at `methods[{i}].encoder`: {e}"))?;
            }
        }
        self.encoder
            .validate()
            .map_err(|e| anyhow::anyhow!("at `encoder`: {e}"))?;
        self.softlabel
            .validate()
            .map_err(|e| anyhow::anyhow!("at `softlabel`: {e}"))?;
        self.train
            .config(0)
            .validate()
            .map_err(|e| anyhow::anyhow!("at `train`: {e}"))?;
        if self.train.seeds.is_empty() {
            bail!("at `train.seeds`: at least one seed is required");
        }
        if !(self.report.alpha > 0.0 && self.report.alpha < 1.0) {
            bail!("at `report.alpha`: must lie in (0, 1)");
        }
        Ok(())
    }

    /// Resolved dataset names. Unknown or variable-length names are errors.
    pub fn dataset_names(&self) -> Result<Vec<String>> {
        let root = &self.data.archive_root;
        if !root.is_dir() {
            bail!("archive root {} is not a directory (set {ARCHIVE_ENV} to override)", root.display());
        }
        let available = list_datasets(root)?;
        match &self.data.datasets {
            DatasetSelection::AllFixedLength => {
                if available.is_empty() {
                    bail!("no datasets found under {}", root.display());
                }
                Ok(available)
            }
            DatasetSelection::Named(names) => {
                if names.is_empty() {
                    bail!("at `data.datasets`: no datasets listed");
                }
                for (i, n) in names.iter().enumerate() {
                    if VARIABLE_LENGTH_DATASETS.contains(&n.as_str()) {
                        bail!("at `data.datasets[{i}]`: `{n}` has variable-length series");
                    }
                    if !available.contains(n) {
                        bail!("at `data.datasets[{i}]`: unknown dataset `{n}` under {}", root.display());
                    }
                }
                Ok(names.clone())
            }
        }
    }

    /// Encoder used by a method entry's soft labels.
    pub fn encoder_for<'a>(&'a self, method: &'a MethodEntry) -> &'a EncoderSpec {
        method.encoder.as_ref().unwrap_or(&self.encoder)
    }

    /// Distinct encoders needed by the `ss` entries.
    pub fn soft_label_encoders(&self) -> Vec<&EncoderSpec> {
        let mut out: Vec<&EncoderSpec> = Vec::new();
        for m in self.methods.iter().filter(|m| m.method == Method::Ss) {
            let e = self.encoder_for(m);
            if !out.iter().any(|o| o.key() == e.key()) {
                out.push(e);
            }
        }
        out
    }

    pub fn model_spec(&self, entry: &ModelEntry, num_classes: usize, input_length: usize, seed: u64) -> ModelSpec {
        let mut spec = entry.preset.spec(num_classes, input_length, seed);
        if let Some(c) = entry.base_channels {
            spec.base_channels = c;
        }
        spec
    }
}

/// Artifact locations, all derived from the plan's output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn representations(&self, dataset: &str, encoder: &EncoderSpec) -> PathBuf {
        self.root
            .join("representations")
            .join(format!("{dataset}__{}.txt", encoder.key()))
    }

    pub fn soft_labels(&self, dataset: &str, encoder: &EncoderSpec, gamma: f64) -> PathBuf {
        self.root
            .join("softlabels")
            .join(format!("{dataset}__{}__g{gamma:e}.txt", encoder.key()))
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }

    pub fn checkpoint(&self, model: &str, dataset: &str, method: &str, seed: u64) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(model)
            .join(dataset)
            .join(format!("{method}-s{seed}.safetensors"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// Substitutes `{dataset}` in precomputed representation paths.
pub fn dataset_encoder(encoder: &EncoderSpec, dataset: &str) -> EncoderSpec {
    let mut e = encoder.clone();
    if let Some(p) = &e.file_path {
        e.file_path = Some(PathBuf::from(p.to_string_lossy().replace("{dataset}", dataset)));
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(methods: &str) -> String {
        format!(
            r#"{{"data":{{"archive_root":"a","datasets":["X"]}},"models":["inceptiontime-1"],"methods":{methods},"output_dir":"o"}}"#
        )
    }

    #[test]
    fn presets_fill_hyperparameters() {
        let ss = |m| preset_method(Method::Ss, m);
        assert_eq!((ss(ModelPreset::Resnet18).tau, ss(ModelPreset::Resnet18).beta), (4.0, 0.1));
        assert_eq!((ss(ModelPreset::Inception(6)).tau, ss(ModelPreset::Inception(6)).beta), (2.0, 1.0));
        assert_eq!(ss(ModelPreset::Inception(1)).beta, 0.5);
        assert_eq!(ss(ModelPreset::Inception(2)).beta, 0.5);
        assert_eq!(ss(ModelPreset::Inception(3)).beta, 0.1);
        assert_eq!(ss(ModelPreset::LstmFcn).beta, 0.1);
        assert_eq!(ss(ModelPreset::LstmFcn).tau, 2.0);
        assert_eq!(preset_method(Method::Ls, ModelPreset::Resnet18).epsilon, 0.1);
        assert_eq!(preset_method(Method::Cp, ModelPreset::LstmFcn).beta, 0.1);
    }

    #[test]
    fn overrides_win_over_presets() {
        let plan = parse_plan(&minimal(r#"[{"method":"ss","beta":0.25}]"#)).unwrap();
        let cfg = plan.methods[0].resolve(ModelPreset::Inception(1));
        assert_eq!((cfg.beta, cfg.tau), (0.25, 2.0));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let err = parse_plan(&minimal(r#"["baseline","kd"]"#)).unwrap_err().to_string();
        assert!(err.contains("methods[1]") && err.contains("kd"), "{err}");
        let err = parse_plan(&minimal(r#"[{"method":"ls","epsilon":1.5}]"#))
            .unwrap_err()
            .to_string();
        assert!(err.contains("methods[0]") && err.contains("epsilon"), "{err}");
        let text = minimal(r#"["ss"]"#).replace(r#""inceptiontime-1""#, r#""inceptiontime-4""#);
        let err = parse_plan(&text).unwrap_err().to_string();
        assert!(err.contains("models[0]"), "{err}");
        let text = minimal(r#"["ss"]"#).replace(r#"["X"]"#, r#""everything""#);
        assert!(parse_plan(&text).unwrap_err().to_string().contains("data.datasets"));
    }

    #[test]
    fn encoder_override_sets_label() {
        let plan = parse_plan(&minimal(r#"["ss",{"method":"ss","encoder":{"kind":"identity"}}]"#)).unwrap();
        assert_eq!(plan.methods[1].label, "ss-identity");
        assert_eq!(plan.soft_label_encoders().len(), 2);
        assert!(parse_plan(&minimal(r#"["ss","ss"]"#)).is_err());
        assert!(parse_plan(&minimal(r#"[{"method":"cp","encoder":{"kind":"identity"}}]"#)).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for p in ModelPreset::ALL {
            assert_eq!(p.to_string().parse::<ModelPreset>().unwrap(), p);
            assert_eq!(p.spec(3, 64, 0).name(), p.to_string());
        }
    }

    #[test]
    fn builtin_presets_parse() {
        let full = parse_plan(PAPER_FULL).unwrap();
        assert_eq!(full.models.len() * full.methods.len(), 24);
        assert_eq!(full.train.epochs, 1000);
        assert_eq!(full.data.datasets, DatasetSelection::AllFixedLength);
        let desk = parse_plan(DESK_SCALE).unwrap();
        assert_eq!(desk.train.epochs, 200);
        assert_eq!(desk.train.seeds, vec![0, 1, 2]);
    }

    #[test]
    fn placeholder_is_substituted() {
        let e = dataset_encoder(&EncoderSpec::precomputed("reps/{dataset}.txt"), "CBF");
        assert_eq!(e.file_path.unwrap(), PathBuf::from("reps/CBF.txt"));
    }
}
