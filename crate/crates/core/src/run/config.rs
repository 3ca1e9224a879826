use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::Command;
use crate::data::{
    gaussian_mixture_2d, load_csv, load_dataset, parity_sequences, shapes_8x8, synth_segmentation,
    synth_tools, two_blobs, AugmentConfig, Dataset, MixtureSpec, SplitSpec, Task, GLYPH_CLASSES,
    SEGMENT_CLASSES,
};
use crate::error::{Error, Result};
use crate::generative::{AutoencoderPair, AutoencoderTrainConfig, GanPair, GanTrainConfig};
use crate::layers::LayerSpec;
use crate::network::{check_head, infer_shapes, presets, Network, Toggle, TrainConfig};
use crate::optim::{LossKind, OptimizerKind};
use crate::recurrent::{CellSpec, OutputHead, RnnTrainConfig, SequenceModel, Supervision};
use crate::rng::{derive_indexed, stream_rng};

const PARITY_LENGTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorName {
    TwoBlobs,
    GaussianMixture,
    Parity,
    #[serde(rename = "shapes_8x8")]
    Shapes8x8,
    SynthTools,
    SynthSegmentation,
}

/// Where the examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Generator {
        name: GeneratorName,
        count: usize,
        /// Sequence length; parity only.
        #[serde(default)]
        length: Option<usize>,
        /// Data seed; `null` means the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// A dataset file: CSV when the extension is `.csv`, the binary dataset
    /// format otherwise. Relative paths resolve against the config file.
    File {
        path: PathBuf,
        /// Required for CSV.
        #[serde(default)]
        task: Option<Task>,
        /// Reshapes CSV feature rows, e.g. `[1, 8, 8]`.
        #[serde(default)]
        input_shape: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitSection {
    /// The split is seeded from the run seed.
    pub fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train: self.train,
            val: self.val,
            test: self.test,
            seed,
        }
    }
}

/// Feed-forward architecture: a preset name or an explicit layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    /// Layer indices whose parameters stay fixed during training.
    #[serde(default)]
    pub freeze: Vec<usize>,
}

fn default_patience() -> usize {
    5
}

fn default_learning_rate() -> f64 {
    0.1
}

fn default_batch_size() -> usize {
    16
}

fn default_true() -> bool {
    true
}

fn default_gradient_descent() -> OptimizerKind {
    OptimizerKind::GradientDescent
}

fn default_adaptive() -> OptimizerKind {
    OptimizerKind::Adaptive
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    pub loss: LossKind,
    #[serde(default = "default_gradient_descent")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub reg_strength: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_head() -> OutputHead {
    OutputHead::Sigmoid
}

fn default_supervision() -> Supervision {
    Supervision::PerStep
}

fn default_log_every() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentSection {
    pub cell: CellSpec,
    #[serde(default = "default_head")]
    pub head: OutputHead,
    /// Optional per-frame feature network ahead of the cell.
    #[serde(default)]
    pub features: Option<Vec<LayerSpec>>,
    pub steps: usize,
    pub loss: LossKind,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_adaptive")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_supervision")]
    pub supervision: Supervision,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn default_gan_batch() -> usize {
    32
}

fn default_generative_rate() -> f64 {
    0.05
}

fn default_gan_samples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanSection {
    /// Extent of the generator's noise input.
    pub noise: usize,
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
    pub steps: usize,
    #[serde(default = "default_gan_batch")]
    pub batch_size: usize,
    #[serde(default = "default_adaptive")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_generative_rate")]
    pub learning_rate: f64,
    /// Generated samples written after training.
    #[serde(default = "default_gan_samples")]
    pub samples: usize,
}

fn default_beta() -> f64 {
    1.0
}

fn default_ae_samples() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSection {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    #[serde(default)]
    pub variational: bool,
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_adaptive")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_generative_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_ae_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Training examples checked.
    pub examples: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            epsilon: 1e-6,
            tolerance: 1e-5,
            examples: 3,
        }
    }
}

/// Test-split example and output unit of the saliency map.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaliencySection {
    pub example: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    /// `dropout`, `l2`, `augmentation` or `layer:N`.
    pub toggles: Vec<String>,
}

fn default_name() -> String {
    "run".into()
}

/// A complete run description. Every field has a materialized default
/// except the data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitSection,
    /// Per-feature standardization of the feed-forward pipelines.
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
    #[serde(default)]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub train: Option<TrainSection>,
    #[serde(default)]
    pub recurrent: Option<RecurrentSection>,
    #[serde(default)]
    pub gan: Option<GanSection>,
    #[serde(default)]
    pub autoencoder: Option<AutoencoderSection>,
    #[serde(default)]
    pub gradcheck: GradcheckSection,
    #[serde(default)]
    pub saliency: SaliencySection,
    #[serde(default)]
    pub ablate: Option<AblateSection>,
    /// Not part of the fingerprint.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// Task and per-example shapes of a data source.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShape {
    pub task: Task,
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub count: usize,
}

impl DataShape {
    pub fn of(ds: &Dataset) -> Result<Self> {
        match (ds.input_shape(), ds.target_shape()) {
            (Some(i), Some(t)) => Ok(DataShape {
                task: ds.task,
                input: i.to_vec(),
                target: t.to_vec(),
                count: ds.len(),
            }),
            _ => Err(Error::config("dataset is empty")),
        }
    }
}

/// Problems found during validation, each tagged with a config path.
#[derive(Debug, Default)]
struct Issues(Vec<String>);

fn message(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Dimension(m) => m.clone(),
        other => other.to_string(),
    }
}

impl Issues {
    fn push(&mut self, path: &str, msg: impl Into<String>) {
        self.0.push(format!("{path}: {}", msg.into()));
    }

    fn check<T>(&mut self, path: &str, r: Result<T>) -> Option<T> {
        r.map_err(|e| self.push(path, message(&e))).ok()
    }
}

/// Parses config text, reporting the config path of the first structural
/// problem.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let mut config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        Error::Invalid(vec![format!("{path}: {}", e.into_inner())])
    })?;
    de.end()
        .map_err(|e| Error::Invalid(vec![format!("<root>: {e}")]))?;
    config.materialize();
    Ok(config)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunConfig {
    /// Fills defaults that depend on other fields.
    fn materialize(&mut self) {
        if let DataSource::Generator {
            name: GeneratorName::Parity,
            length: length @ None,
            ..
        } = &mut self.data
        {
            *length = Some(PARITY_LENGTH);
        }
    }

    /// The config with every default written out, as a JSON value with
    /// sorted keys.
    pub fn normalized(&self) -> Value {
        serde_json::to_value(self).expect("configs always serialize")
    }

    /// Hash of the normalized config (without the output directory) plus
    /// the seed. Independent of key order, whitespace and omitted defaults.
    pub fn fingerprint(&self) -> String {
        let mut v = self.normalized();
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        let text = format!("{v}\nseed={}", self.seed);
        sha256_hex(text.as_bytes())
    }

    /// Shapes known without generating anything.
    pub fn static_shape(&self) -> Option<DataShape> {
        let DataSource::Generator {
            name,
            count,
            length,
            ..
        } = &self.data
        else {
            return None;
        };
        let (task, input, target) = match name {
            GeneratorName::TwoBlobs => (Task::Binary, vec![2], vec![1]),
            GeneratorName::GaussianMixture => (Task::Multiclass, vec![2], vec![2]),
            GeneratorName::Parity => {
                let t = length.unwrap_or(PARITY_LENGTH);
                (Task::Sequence, vec![t, 1], vec![t, 1])
            }
            GeneratorName::Shapes8x8 => (Task::Multiclass, vec![1, 8, 8], vec![4]),
            GeneratorName::SynthTools => {
                (Task::Multilabel, vec![3, 64, 64], vec![GLYPH_CLASSES.len()])
            }
            GeneratorName::SynthSegmentation => (
                Task::PerPixel,
                vec![1, 32, 32],
                vec![SEGMENT_CLASSES.len(), 32, 32],
            ),
        };
        Some(DataShape {
            task,
            input,
            target,
            count: *count,
        })
    }

    /// Generates or loads the full dataset. `base_dir` anchors relative
    /// file paths.
    pub fn load_data(&self, base_dir: &Path) -> Result<Dataset> {
        match &self.data {
            DataSource::Generator {
                name,
                count,
                length,
                seed,
            } => {
                let seed = seed.unwrap_or(self.seed);
                match name {
                    GeneratorName::TwoBlobs => two_blobs(*count, seed),
                    GeneratorName::GaussianMixture => {
                        gaussian_mixture_2d(&MixtureSpec::two_component(), *count, seed)
                    }
                    GeneratorName::Parity => {
                        parity_sequences(*count, length.unwrap_or(PARITY_LENGTH), seed)
                    }
                    GeneratorName::Shapes8x8 => shapes_8x8(*count, seed),
                    GeneratorName::SynthTools => synth_tools(*count, seed),
                    GeneratorName::SynthSegmentation => synth_segmentation(*count, seed),
                }
            }
            DataSource::File {
                path,
                task,
                input_shape,
            } => {
                let path = base_dir.join(path);
                let ds = if path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
                {
                    let task =
                        task.ok_or_else(|| Error::config("data.task: CSV files need a task"))?;
                    load_csv(&path, task, input_shape.as_deref())?
                } else {
                    load_dataset(&path)?
                };
                if let Some(t) = task {
                    if *t != ds.task {
                        return Err(Error::Invalid(vec![format!(
                            "data.task: file holds a {} dataset, config says {}",
                            ds.task.name(),
                            t.name()
                        )]));
                    }
                }
                Ok(ds)
            }
        }
    }

    /// Feed-forward layer specs for the data shape.
    pub fn model_specs(&self, shape: &DataShape) -> Result<Vec<LayerSpec>> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| Error::config("no model section"))?;
        match (&m.preset, &m.layers) {
            (Some(name), None) => presets::preset(name, &shape.input, shape.task, &shape.target),
            (None, Some(layers)) => Ok(layers.clone()),
            _ => Err(Error::config("give exactly one of 'preset' and 'layers'")),
        }
    }

    /// The untrained feed-forward network with its frozen layers marked.
    pub fn build_network(&self, shape: &DataShape) -> Result<Network> {
        let specs = self.model_specs(shape)?;
        let mut net = Network::new(
            &self.name,
            shape.task,
            shape.input.clone(),
            &specs,
            self.seed,
        )?;
        check_head(&net, shape.task)?;
        if let Some(m) = &self.model {
            net.freeze(&m.freeze)?;
        }
        Ok(net)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = self
            .train
            .as_ref()
            .ok_or_else(|| Error::config("no train section"))?;
        Ok(TrainConfig {
            epochs: t.epochs,
            patience: t.patience,
            loss: t.loss,
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            reg_strength: t.reg_strength,
            batch_size: t.batch_size,
            shuffle: t.shuffle,
            seed: self.seed,
            augment: self.augment.clone(),
        })
    }

    /// Seed of the `k`-th network of a composite model.
    fn part_seed(&self, k: u64) -> u64 {
        derive_indexed(self.seed, &[k])
    }

    pub fn build_sequence_model(&self, shape: &DataShape) -> Result<SequenceModel> {
        let r = self
            .recurrent
            .as_ref()
            .ok_or_else(|| Error::config("no recurrent section"))?;
        let cell = r.cell.build(&mut stream_rng(self.part_seed(0), "init"))?;
        let features = match &r.features {
            Some(specs) => {
                let frame = shape.input.get(1..).unwrap_or_default().to_vec();
                Some(Network::new(
                    "features",
                    Task::Sequence,
                    frame,
                    specs,
                    self.part_seed(1),
                )?)
            }
            None => None,
        };
        SequenceModel::new(features, cell, r.head)
    }

    pub fn rnn_train_config(&self) -> Result<RnnTrainConfig> {
        let r = self
            .recurrent
            .as_ref()
            .ok_or_else(|| Error::config("no recurrent section"))?;
        Ok(RnnTrainConfig {
            steps: r.steps,
            batch_size: r.batch_size,
            optimizer: r.optimizer,
            learning_rate: r.learning_rate,
            loss: r.loss,
            supervision: r.supervision,
            clip_norm: r.clip_norm,
            seed: self.seed,
            log_every: r.log_every,
        })
    }

    pub fn build_gan(&self, shape: &DataShape) -> Result<GanPair> {
        let g = self
            .gan
            .as_ref()
            .ok_or_else(|| Error::config("no gan section"))?;
        let generator = Network::new(
            "generator",
            Task::Sequence,
            vec![g.noise],
            &g.generator,
            self.part_seed(0),
        )
        .map_err(|e| Error::config(format!("generator: {}", message(&e))))?;
        let discriminator = Network::new(
            "discriminator",
            Task::Binary,
            shape.input.clone(),
            &g.discriminator,
            self.part_seed(1),
        )
        .map_err(|e| Error::config(format!("discriminator: {}", message(&e))))?;
        GanPair::new(generator, discriminator)
    }

    pub fn gan_train_config(&self) -> Result<GanTrainConfig> {
        let g = self
            .gan
            .as_ref()
            .ok_or_else(|| Error::config("no gan section"))?;
        Ok(GanTrainConfig {
            steps: g.steps,
            batch_size: g.batch_size,
            optimizer: g.optimizer,
            learning_rate: g.learning_rate,
            seed: self.seed,
        })
    }

    pub fn build_autoencoder(&self, shape: &DataShape) -> Result<AutoencoderPair> {
        let a = self
            .autoencoder
            .as_ref()
            .ok_or_else(|| Error::config("no autoencoder section"))?;
        let encoder = Network::new(
            "encoder",
            Task::Sequence,
            shape.input.clone(),
            &a.encoder,
            self.part_seed(0),
        )
        .map_err(|e| Error::config(format!("encoder: {}", message(&e))))?;
        let code = encoder.output_shape();
        let latent = match (code.as_slice(), a.variational) {
            ([k], true) => k / 2,
            ([k], false) => *k,
            _ => {
                return Err(Error::config(format!(
                    "encoder must produce a vector, got {code:?}"
                )))
            }
        };
        let decoder = Network::new(
            "decoder",
            Task::Sequence,
            vec![latent.max(1)],
            &a.decoder,
            self.part_seed(1),
        )
        .map_err(|e| Error::config(format!("decoder: {}", message(&e))))?;
        AutoencoderPair::new(encoder, decoder, a.variational, a.beta)
    }

    pub fn autoencoder_train_config(&self) -> Result<AutoencoderTrainConfig> {
        let a = self
            .autoencoder
            .as_ref()
            .ok_or_else(|| Error::config("no autoencoder section"))?;
        Ok(AutoencoderTrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            optimizer: a.optimizer,
            learning_rate: a.learning_rate,
            seed: self.seed,
        })
    }

    pub fn toggles(&self) -> Result<Vec<Toggle>> {
        self.ablate.as_ref().map_or(Ok(Vec::new()), |a| {
            a.toggles.iter().map(|t| t.parse()).collect()
        })
    }

    /// Full static validation for `command` against the data shape. Every
    /// present section is checked; sections the command needs must exist.
    pub fn validate(&self, command: Command, shape: &DataShape) -> Result<()> {
        let mut issues = Issues::default();
        if self.name.trim().is_empty() {
            issues.push("name", "must not be empty");
        }
        if let DataSource::Generator {
            name,
            count,
            length,
            ..
        } = &self.data
        {
            if *count == 0 {
                issues.push("data.count", "must be at least 1");
            }
            match (name, length) {
                (GeneratorName::Parity, Some(0)) => {
                    issues.push("data.length", "must be at least 1")
                }
                (GeneratorName::Parity, _) | (_, None) => {}
                (_, Some(_)) => issues.push("data.length", "only parity sequences have a length"),
            }
        }
        let sizes = issues.check("split", self.split.spec(self.seed).sizes(shape.count));
        let train_size = sizes.map(|s| s.0);
        if let Some(a) = &self.augment {
            issues.check("augment", a.validate());
        }
        let batch_fits = |issues: &mut Issues, path: &str, batch: usize, n: Option<usize>| {
            if let Some(n) = n {
                if batch > n {
                    issues.push(path, format!("{batch} exceeds the {n} available examples"));
                }
            }
        };

        for (needed, present, section) in [
            (command.needs_model(), self.model.is_some(), "model"),
            (command.needs_model(), self.train.is_some(), "train"),
            (
                command == Command::RnnTrain,
                self.recurrent.is_some(),
                "recurrent",
            ),
            (command == Command::GanTrain, self.gan.is_some(), "gan"),
            (
                command == Command::VaeTrain,
                self.autoencoder.is_some(),
                "autoencoder",
            ),
            (command == Command::Ablate, self.ablate.is_some(), "ablate"),
        ] {
            if needed && !present {
                issues.push(
                    section,
                    format!("section is required by '{}'", command.name()),
                );
            }
        }

        let mut net = None;
        if let Some(m) = &self.model {
            match (&m.preset, &m.layers) {
                (Some(_), Some(_)) | (None, None) => {
                    issues.push("model", "give exactly one of 'preset' and 'layers'")
                }
                (Some(_), None) => net = issues.check("model.preset", self.build_network(shape)),
                (None, Some(layers)) => {
                    if issues
                        .check("model.layers", infer_shapes(&shape.input, layers))
                        .is_some()
                    {
                        net = issues.check("model", self.build_network(shape));
                    }
                }
            }
            if shape.task == Task::Sequence {
                issues.push("model", "sequence data needs the recurrent section");
            }
        }
        if let Some(t) = &self.train {
            if issues
                .check("train", self.train_config().and_then(|c| c.validate()))
                .is_some()
            {
                batch_fits(&mut issues, "train.batch_size", t.batch_size, train_size);
            }
        }
        if let Some(g) = &self.gradcheck_if_used(command) {
            if !(1e-8..=1e-4).contains(&g.epsilon) {
                issues.push(
                    "gradcheck.epsilon",
                    format!("{} outside [1e-8, 1e-4]", g.epsilon),
                );
            }
            if !(g.tolerance > 0.0 && g.tolerance.is_finite()) {
                issues.push("gradcheck.tolerance", "must be positive");
            }
            if g.examples == 0 {
                issues.push("gradcheck.examples", "must be at least 1");
            }
            batch_fits(&mut issues, "gradcheck.examples", g.examples, train_size);
        }
        if command == Command::Saliency {
            if let Some((_, _, test)) = sizes {
                if self.saliency.example >= test {
                    issues.push(
                        "saliency.example",
                        format!(
                            "{} is outside the {test} test examples",
                            self.saliency.example
                        ),
                    );
                }
            }
            if let Some(n) = &net {
                let outputs: usize = n.output_shape().iter().product();
                if self.saliency.output >= outputs {
                    issues.push(
                        "saliency.output",
                        format!("{} is outside the {outputs} outputs", self.saliency.output),
                    );
                }
            }
        }
        if let Some(a) = &self.ablate {
            for (i, t) in a.toggles.iter().enumerate() {
                if let Some(Toggle::Layer(k)) =
                    issues.check(&format!("ablate.toggles[{i}]"), t.parse::<Toggle>())
                {
                    if let Some(n) = &net {
                        if k >= n.layers().len() {
                            issues.push(
                                &format!("ablate.toggles[{i}]"),
                                format!("layer {k} does not exist ({} layers)", n.layers().len()),
                            );
                        }
                    }
                }
            }
        }
        if let Some(r) = &self.recurrent {
            if shape.task != Task::Sequence {
                issues.push(
                    "data",
                    format!(
                        "recurrent training needs sequence data, got {}",
                        shape.task.name()
                    ),
                );
            } else if issues.check("recurrent.cell", r.cell.validate()).is_some() {
                let path = if r.features.is_some() {
                    "recurrent.features"
                } else {
                    "recurrent"
                };
                if let Some(model) = issues.check(path, self.build_sequence_model(shape)) {
                    let frame = shape.input.get(1..).unwrap_or_default();
                    if model.frame_shape() != frame {
                        issues.push(
                            "recurrent.cell.inputs",
                            format!(
                                "frames are {frame:?} but the model expects {:?}",
                                model.frame_shape()
                            ),
                        );
                    }
                    let t = shape.input[0];
                    let want = match r.supervision {
                        Supervision::PerStep => vec![t, r.cell.outputs],
                        Supervision::Final => vec![r.cell.outputs],
                    };
                    if shape.target != want {
                        issues.push(
                            "recurrent.supervision",
                            format!(
                                "targets are {:?} but the model produces {want:?}",
                                shape.target
                            ),
                        );
                    }
                }
            }
            if issues
                .check(
                    "recurrent",
                    self.rnn_train_config().and_then(|c| c.validate()),
                )
                .is_some()
            {
                batch_fits(
                    &mut issues,
                    "recurrent.batch_size",
                    r.batch_size,
                    train_size,
                );
            }
        }
        if let Some(g) = &self.gan {
            if g.noise == 0 {
                issues.push("gan.noise", "must be at least 1");
            } else {
                issues.check("gan", self.build_gan(shape));
            }
            if issues
                .check("gan", self.gan_train_config().and_then(|c| c.validate()))
                .is_some()
            {
                batch_fits(
                    &mut issues,
                    "gan.batch_size",
                    g.batch_size,
                    Some(shape.count),
                );
            }
            if g.samples == 0 {
                issues.push("gan.samples", "must be at least 1");
            }
        }
        if let Some(a) = &self.autoencoder {
            issues.check("autoencoder", self.build_autoencoder(shape));
            if issues
                .check(
                    "autoencoder",
                    self.autoencoder_train_config().and_then(|c| c.validate()),
                )
                .is_some()
            {
                batch_fits(
                    &mut issues,
                    "autoencoder.batch_size",
                    a.batch_size,
                    train_size,
                );
            }
            if a.samples == 0 {
                issues.push("autoencoder.samples", "must be at least 1");
            }
        }
        if issues.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(issues.0))
        }
    }

    fn gradcheck_if_used(&self, command: Command) -> Option<GradcheckSection> {
        (command == Command::Gradcheck || command == Command::Check).then(|| self.gradcheck.clone())
    }
}
