//! Reproducible runs: a JSON run configuration, static validation, the
//! subcommand pipelines behind the `minidl` binary, and their reports.
//!
//! Every random consumer draws from its own stream of the run seed (`init`,
//! `batching`, `dropout`, `augment`, `split`, `generator`, `sampling`,
//! `evaluation`), so toggling one feature never perturbs another. Composite
//! models seed their `k`-th network with `derive_indexed(seed, [k])`.

mod bundle;
mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

pub use bundle::{load_bundle, read_bundle, save_bundle, write_bundle, Bundle};
pub use config::{
    load_config, parse_config, AblateSection, AutoencoderSection, DataShape, DataSource,
    GanSection, GeneratorName, GradcheckSection, ModelSection, RecurrentSection, RunConfig,
    SaliencySection, SplitSection, TrainSection,
};

use crate::data::{save_dataset, split, Dataset, Standardizer, Task};
use crate::error::{Error, Result};
use crate::generative::{
    autoencoder_loss, discriminator_accuracy, gan_sample, train_autoencoder, train_gan,
    vae_generate,
};
use crate::layers::LayerSpec;
use crate::network::{
    ablate, evaluate, format_ablation_table, format_shape_table, gradient_check, load_model,
    metrics_from_predictions, saliency, save_model, train, AblationBase, Metrics, Network,
    StopReason,
};
use crate::recurrent::{sequence_accuracy, train_sequence, OutputHead, SequenceModel, Supervision};
use crate::rng::stream_rng;
use crate::tensor::{save_tensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Train,
    Eval,
    Check,
    Gradcheck,
    Saliency,
    Ablate,
    RnnTrain,
    GanTrain,
    VaeTrain,
    SynthData,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Train,
        Command::Eval,
        Command::Check,
        Command::Gradcheck,
        Command::Saliency,
        Command::Ablate,
        Command::RnnTrain,
        Command::GanTrain,
        Command::VaeTrain,
        Command::SynthData,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Check => "check",
            Command::Gradcheck => "gradcheck",
            Command::Saliency => "saliency",
            Command::Ablate => "ablate",
            Command::RnnTrain => "rnn-train",
            Command::GanTrain => "gan-train",
            Command::VaeTrain => "vae-train",
            Command::SynthData => "synth-data",
        }
    }

    /// Whether the command works on the feed-forward model.
    pub fn needs_model(&self) -> bool {
        matches!(
            self,
            Command::Train
                | Command::Eval
                | Command::Gradcheck
                | Command::Saliency
                | Command::Ablate
        )
    }

    /// Commands that produce `model.sgm` and `history.csv`.
    pub fn is_training(&self) -> bool {
        matches!(
            self,
            Command::Train | Command::RnnTrain | Command::GanTrain | Command::VaeTrain
        )
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command '{s}'")))
    }
}

/// A validated configuration with its data.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub command: Command,
    pub config: RunConfig,
    /// Directory that relative data paths resolve against.
    pub base_dir: PathBuf,
    pub shape: DataShape,
    /// Absent only for `check` on a generator source.
    pub data: Option<Dataset>,
}

/// Applies the seed override, materializes the data and runs full static
/// validation. Nothing is written.
pub fn prepare(
    command: Command,
    mut config: RunConfig,
    base_dir: &Path,
    seed: Option<u64>,
) -> Result<Prepared> {
    if let Some(s) = seed {
        config.seed = s;
    }
    // Generator shapes are known up front, so bad configs fail before any
    // data is generated; file sources are validated once loaded.
    let static_shape = config.static_shape();
    if let Some(s) = &static_shape {
        config.validate(command, s)?;
    }
    let data = match (command, &static_shape) {
        (Command::Check, Some(_)) => None,
        _ => Some(config.load_data(base_dir)?),
    };
    let shape = match (&data, static_shape) {
        (Some(ds), Some(s)) => {
            debug_assert_eq!(DataShape::of(ds)?, s);
            s
        }
        (Some(ds), None) => {
            let s = DataShape::of(ds)?;
            config.validate(command, &s)?;
            s
        }
        (None, Some(s)) => s,
        (None, None) => unreachable!("data is loaded whenever the shape is not static"),
    };
    Ok(Prepared {
        command,
        config,
        base_dir: base_dir.to_path_buf(),
        shape,
        data,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub note: String,
    pub task: Task,
    pub examples: usize,
    pub input_shape: Vec<usize>,
    pub target_shape: Vec<usize>,
    /// Train, validation and test sizes, when the command splits.
    pub splits: Option<[usize; 3]>,
    pub standardized: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistorySummary {
    pub file: String,
    pub rows: usize,
    pub best_epoch: Option<usize>,
    pub stop_reason: Option<StopReason>,
}

/// Machine-readable account of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub name: String,
    pub fingerprint: String,
    pub seed: u64,
    /// The normalized configuration with every default written out.
    pub config: Value,
    pub data: DataSummary,
    /// Test-split metrics of the trained model.
    pub metrics: Option<Metrics>,
    /// Test-split metrics of the same architecture at initialization.
    pub baseline: Option<Metrics>,
    pub history: Option<HistorySummary>,
    /// Command-specific results.
    pub details: Value,
    /// Files written into the output directory.
    pub files: Vec<String>,
    pub duration_secs: f64,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    /// `None` for `check`, which writes nothing.
    pub report: Option<RunReport>,
    /// Human-readable summary for the terminal.
    pub summary: String,
}

/// Where a command writes: `--out`, else `output_dir` (relative to the
/// config file), else `runs/<name>`.
pub fn resolve_out_dir(config: &RunConfig, base_dir: &Path, out: Option<&Path>) -> PathBuf {
    match (out, &config.output_dir) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(d)) => base_dir.join(d),
        (None, None) => Path::new("runs").join(&config.name),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Loads, validates and executes `command` for the config file at `path`.
pub fn run_command(command: Command, path: &Path, options: &RunOptions) -> Result<Outcome> {
    let config = load_config(path)?;
    let base_dir = path
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let prepared = prepare(command, config, &base_dir, options.seed)?;
    let out = resolve_out_dir(&prepared.config, &base_dir, options.out.as_deref());
    execute(&prepared, &out)
}

/// Output directory writer that creates the directory on first use, so a
/// pipeline failing before its first write leaves nothing behind.
struct Output<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl<'a> Output<'a> {
    fn new(dir: &'a Path) -> Self {
        Output {
            dir,
            files: Vec::new(),
        }
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(self.dir)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(self.dir.join(name))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name)?;
        fs::write(p, text)?;
        Ok(())
    }
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    standardized: bool,
}

impl Prepared {
    fn data(&self) -> Result<&Dataset> {
        self.data
            .as_ref()
            .ok_or_else(|| Error::state("pipeline started without data"))
    }

    /// Split, then standardize every split with statistics fitted on the
    /// training split alone.
    fn splits(&self, standardize: bool) -> Result<Splits> {
        let (train, val, test) = split(self.data()?, &self.config.split.spec(self.config.seed))?;
        if !standardize {
            return Ok(Splits {
                train,
                val,
                test,
                standardized: false,
            });
        }
        let s = Standardizer::fit(&train)?;
        Ok(Splits {
            train: s.apply_dataset(&train)?,
            val: s.apply_dataset(&val)?,
            test: s.apply_dataset(&test)?,
            standardized: true,
        })
    }

    fn summary(&self, splits: Option<&Splits>) -> DataSummary {
        DataSummary {
            note: self
                .data
                .as_ref()
                .map_or_else(String::new, |d| d.note.clone()),
            task: self.shape.task,
            examples: self.shape.count,
            input_shape: self.shape.input.clone(),
            target_shape: self.shape.target.clone(),
            splits: splits.map(|s| [s.train.len(), s.val.len(), s.test.len()]),
            standardized: splits.is_some_and(|s| s.standardized),
        }
    }

    fn report(&self, data: DataSummary) -> RunReport {
        RunReport {
            command: self.command.name().to_string(),
            name: self.config.name.clone(),
            fingerprint: self.config.fingerprint(),
            seed: self.config.seed,
            config: self.config.normalized(),
            data,
            metrics: None,
            baseline: None,
            history: None,
            details: Value::Null,
            files: Vec::new(),
            duration_secs: 0.0,
        }
    }

    /// Loads `model.sgm` from the output directory and checks it against
    /// the configured architecture.
    fn trained_network(&self, dir: &Path) -> Result<Network> {
        let net = load_model(dir.join("model.sgm"))?;
        let specs = self.config.model_specs(&self.shape)?;
        if net.specs() != specs || net.input_shape() != self.shape.input.as_slice() {
            return Err(Error::Invalid(vec![format!(
                "model: {} was trained with a different architecture",
                dir.join("model.sgm").display()
            )]));
        }
        Ok(net)
    }
}

fn write_report(
    out: &mut Output<'_>,
    name: &str,
    report: &mut RunReport,
    started: Instant,
) -> Result<()> {
    out.path(name)?;
    report.files = out.files.clone();
    report.duration_secs = started.elapsed().as_secs_f64();
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Manifest(e.to_string()))?;
    out.text(name, &(json + "\n"))
}

/// Runs a validated command, writing into `out_dir`.
pub fn execute(p: &Prepared, out_dir: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let mut out = Output::new(out_dir);
    let (report, summary) = match p.command {
        Command::Check => {
            return Ok(Outcome {
                report: None,
                summary: check_summary(p)?,
            })
        }
        Command::Train => run_train(p, &mut out)?,
        Command::Eval => run_eval(p, &mut out)?,
        Command::Gradcheck => run_gradcheck(p, &mut out, started)?,
        Command::Saliency => run_saliency(p, &mut out)?,
        Command::Ablate => run_ablate(p)?,
        Command::RnnTrain => run_rnn(p, &mut out)?,
        Command::GanTrain => run_gan(p, &mut out)?,
        Command::VaeTrain => run_vae(p, &mut out)?,
        Command::SynthData => run_synth(p, &mut out)?,
    };
    let mut report = report;
    let name = if p.command.is_training() {
        "report.json".to_string()
    } else {
        format!("{}_report.json", p.command.name().replace('-', "_"))
    };
    write_report(&mut out, &name, &mut report, started)?;
    Ok(Outcome {
        report: Some(report),
        summary,
    })
}

fn shape_block(title: &str, net: &Network) -> String {
    format!(
        "{title}\n{}",
        format_shape_table(net.input_shape(), &net.shape_table())
    )
}

/// The shape tables and parameter counts of every configured network.
pub fn check_summary(p: &Prepared) -> Result<String> {
    let c = &p.config;
    let mut s = format!(
        "config ok: {} (command {}, seed {}, fingerprint {})\ndata: {} examples, task {}, input {:?}, target {:?}\n",
        c.name,
        p.command,
        c.seed,
        c.fingerprint(),
        p.shape.count,
        p.shape.task.name(),
        p.shape.input,
        p.shape.target
    );
    if c.model.is_some() {
        s.push_str(&shape_block("\nmodel", &c.build_network(&p.shape)?));
    }
    if c.recurrent.is_some() {
        let m = c.build_sequence_model(&p.shape)?;
        if let Some(f) = &m.features {
            s.push_str(&shape_block("\nrecurrent features", f));
        }
        let spec = m.cell.spec();
        s.push_str(&format!(
            "\nrecurrent cell: {:?}, inputs {}, hidden {}, outputs {}, {} parameters\n",
            spec.kind,
            spec.inputs,
            spec.hidden,
            spec.outputs,
            m.cell.param_count()
        ));
    }
    if c.gan.is_some() {
        let g = c.build_gan(&p.shape)?;
        s.push_str(&shape_block("\ngenerator", &g.generator));
        s.push_str(&shape_block("\ndiscriminator", &g.discriminator));
    }
    if c.autoencoder.is_some() {
        let a = c.build_autoencoder(&p.shape)?;
        s.push_str(&shape_block("\nencoder", &a.encoder));
        s.push_str(&shape_block("\ndecoder", &a.decoder));
    }
    Ok(s)
}

fn run_train(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let s = p.splits(p.config.standardize)?;
    let mut net = p.config.build_network(&p.shape)?;
    let baseline = evaluate(&net, &s.test)?;
    let config = p.config.train_config()?;
    let history = match train(&mut net, &s.train, &s.val, &config) {
        Ok(h) => h,
        Err(Error::Diverged {
            epoch,
            batch,
            loss,
            history,
        }) => {
            out.text("history.csv", &history.to_csv())?;
            return Err(Error::Diverged {
                epoch,
                batch,
                loss,
                history,
            });
        }
        Err(e) => return Err(e),
    };
    let metrics = evaluate(&net, &s.test)?;
    save_model(&net, out.path("model.sgm")?)?;
    out.text("history.csv", &history.to_csv())?;

    let summary = format!(
        "trained {} epochs ({:?}, best epoch {}): test accuracy {:.4}, baseline {:.4}, untrained {:.4}",
        history.records.len(),
        history.stop_reason,
        history.best_epoch,
        metrics.accuracy,
        metrics.baseline,
        baseline.accuracy
    );
    let mut report = p.report(p.summary(Some(&s)));
    report.history = Some(HistorySummary {
        file: "history.csv".into(),
        rows: history.records.len(),
        best_epoch: Some(history.best_epoch),
        stop_reason: Some(history.stop_reason),
    });
    report.details = json!({
        "param_count": net.param_count(),
        "weight_norm_squared": net.weight_norm_squared(),
        "final_train_loss": history.final_record().map(|r| r.train_loss),
        "final_val_loss": history.final_record().map(|r| r.val_loss),
    });
    report.metrics = Some(metrics);
    report.baseline = Some(baseline);
    Ok((report, summary))
}

fn run_eval(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let net = p.trained_network(out.dir)?;
    let s = p.splits(p.config.standardize)?;
    let metrics = evaluate(&net, &s.test)?;
    let baseline = evaluate(&p.config.build_network(&p.shape)?, &s.test)?;
    let summary = format!(
        "test accuracy {:.4} on {} examples (baseline {:.4}, untrained {:.4})",
        metrics.accuracy, metrics.count, metrics.baseline, baseline.accuracy
    );
    let mut report = p.report(p.summary(Some(&s)));
    report.metrics = Some(metrics);
    report.baseline = Some(baseline);
    Ok((report, summary))
}

fn without_dropout(specs: &[LayerSpec]) -> Vec<LayerSpec> {
    specs
        .iter()
        .map(|l| match l {
            LayerSpec::Dropout { .. } => LayerSpec::Dropout { rate: 0.0 },
            other => other.clone(),
        })
        .collect()
}

fn run_gradcheck(
    p: &Prepared,
    out: &mut Output<'_>,
    started: Instant,
) -> Result<(RunReport, String)> {
    let s = p.splits(p.config.standardize)?;
    let specs = without_dropout(&p.config.model_specs(&p.shape)?);
    let mut net = Network::new(
        &p.config.name,
        p.shape.task,
        p.shape.input.clone(),
        &specs,
        p.config.seed,
    )?;
    if let Some(m) = &p.config.model {
        net.freeze(&m.freeze)?;
    }
    let g = &p.config.gradcheck;
    let loss = p.config.train_config()?.loss;
    let reports = s.train.examples[..g.examples]
        .iter()
        .map(|e| gradient_check(&net, &e.input, &e.target, loss, g.epsilon, g.tolerance))
        .collect::<Result<Vec<_>>>()?;
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);
    let summary = format!(
        "gradient check {}: max relative error {worst:.3e} (tolerance {:.1e}) over {} examples",
        if pass { "passed" } else { "FAILED" },
        g.tolerance,
        reports.len()
    );
    let mut report = p.report(p.summary(Some(&s)));
    report.details = json!({ "pass": pass, "max_rel_error": worst, "examples": reports });
    if !pass {
        write_report(out, "gradcheck_report.json", &mut report, started)?;
        return Err(Error::Numeric(summary));
    }
    Ok((report, summary))
}

fn run_saliency(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let net = p.trained_network(out.dir)?;
    let s = p.splits(p.config.standardize)?;
    let cfg = &p.config.saliency;
    let map = saliency(&net, &s.test.examples[cfg.example].input, cfg.output)?;
    save_tensor(out.path("saliency.sgt")?, &map)?;
    let peak = map.data().iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let summary = format!(
        "saliency of output {} for test example {}: shape {:?}, peak |∂y/∂x| {peak:.4e}",
        cfg.output,
        cfg.example,
        map.shape()
    );
    let mut report = p.report(p.summary(Some(&s)));
    report.details = json!({
        "example": cfg.example,
        "output": cfg.output,
        "shape": map.shape(),
        "peak": peak,
        "argmax": map.data().iter().map(|v| v.abs()).enumerate().fold((0, -1.0), |b, (i, v)| if v > b.1 { (i, v) } else { b }).0,
    });
    Ok((report, summary))
}

fn run_ablate(p: &Prepared) -> Result<(RunReport, String)> {
    let s = p.splits(p.config.standardize)?;
    let base = AblationBase {
        name: p.config.name.clone(),
        task: p.shape.task,
        input_shape: p.shape.input.clone(),
        layers: p.config.model_specs(&p.shape)?,
        train: p.config.train_config()?,
        train_set: s.train.clone(),
        val_set: s.val.clone(),
        test_set: s.test.clone(),
    };
    let rows = ablate(&base, &p.config.toggles()?)?;
    let summary = format_ablation_table(&rows);
    let mut report = p.report(p.summary(Some(&s)));
    report.details = json!({ "variants": rows });
    Ok((report, summary))
}

fn sequence_metrics(
    model: &SequenceModel,
    ds: &Dataset,
    supervision: Supervision,
) -> Result<Option<Metrics>> {
    if model.head != OutputHead::Sigmoid {
        return Ok(None);
    }
    let mut preds = Vec::with_capacity(ds.len());
    for e in &ds.examples {
        let steps = model.predict(&e.input)?;
        preds.push(match supervision {
            Supervision::PerStep => Tensor::stack(&steps)?,
            Supervision::Final => steps[steps.len() - 1].clone(),
        });
    }
    let targets: Vec<Tensor> = ds.examples.iter().map(|e| e.target.clone()).collect();
    metrics_from_predictions(Task::Sequence, &preds, &targets).map(Some)
}

fn run_rnn(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let s = p.splits(false)?;
    let mut model = p.config.build_sequence_model(&p.shape)?;
    let config = p.config.rnn_train_config()?;
    let untrained = sequence_accuracy(&model, &s.test, config.supervision, config.loss)?;
    let baseline = sequence_metrics(&model, &s.test, config.supervision)?;
    let history = train_sequence(&mut model, &s.train, &s.val, &config)?;
    let (loss, step_acc, final_acc) =
        sequence_accuracy(&model, &s.test, config.supervision, config.loss)?;
    let metrics = sequence_metrics(&model, &s.test, config.supervision)?;
    save_bundle(&Bundle::Recurrent(model.clone()), out.path("model.sgm")?)?;
    out.text("history.csv", &history.to_csv())?;

    let summary = format!(
        "trained {} steps: test loss {loss:.4}, step accuracy {step_acc:.4}, final-step accuracy {final_acc:.4} (untrained {:.4})",
        config.steps, untrained.2
    );
    let mut report = p.report(p.summary(Some(&s)));
    report.history = Some(HistorySummary {
        file: "history.csv".into(),
        rows: history.records.len(),
        best_epoch: None,
        stop_reason: None,
    });
    report.details = json!({
        "param_count": model.param_count(),
        "test_loss": loss,
        "test_step_accuracy": step_acc,
        "test_final_accuracy": final_acc,
        "untrained_step_accuracy": untrained.1,
        "untrained_final_accuracy": untrained.2,
    });
    report.metrics = metrics;
    report.baseline = baseline;
    Ok((report, summary))
}

/// Per-feature mean of a stack `[n, ...]`.
fn feature_mean(rows: &[Tensor]) -> Vec<f64> {
    let mut mean = vec![0.0; rows.first().map_or(0, Tensor::len)];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.data()) {
            *m += v;
        }
    }
    let n = rows.len().max(1) as f64;
    mean.iter().map(|m| m / n).collect()
}

fn run_gan(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let data = p.data()?;
    let mut pair = p.config.build_gan(&p.shape)?;
    let config = p.config.gan_train_config()?;
    let history = train_gan(&mut pair, data, &config)?;
    let g = p.config.gan.as_ref().expect("validated");
    let samples = gan_sample(&pair, g.samples, &mut stream_rng(p.config.seed, "sampling"))?;
    let real: Vec<Tensor> = data.examples.iter().map(|e| e.input.clone()).collect();
    let d_accuracy =
        discriminator_accuracy(&pair, &real, &mut stream_rng(p.config.seed, "evaluation"))?;
    let sample_mean = feature_mean(&samples.unstack());
    let data_mean = feature_mean(&real);
    save_tensor(out.path("samples.sgt")?, &samples)?;
    save_bundle(&Bundle::Gan(pair.clone()), out.path("model.sgm")?)?;
    out.text("history.csv", &history.to_csv())?;

    let summary = format!(
        "trained {} adversarial steps: sample mean {sample_mean:.3?} vs data mean {data_mean:.3?}, discriminator accuracy {d_accuracy:.3}",
        config.steps
    );
    let mut report = p.report(p.summary(None));
    report.history = Some(HistorySummary {
        file: "history.csv".into(),
        rows: history.steps.len(),
        best_epoch: None,
        stop_reason: None,
    });
    report.details = json!({
        "samples": g.samples,
        "sample_mean": sample_mean,
        "data_mean": data_mean,
        "discriminator_accuracy": d_accuracy,
        "final_step": history.steps.last(),
    });
    Ok((report, summary))
}

fn run_vae(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let s = p.splits(false)?;
    let mut pair = p.config.build_autoencoder(&p.shape)?;
    let config = p.config.autoencoder_train_config()?;
    let untrained = autoencoder_loss(&pair, &s.test)?;
    let history = train_autoencoder(&mut pair, &s.train, &s.val, &config)?;
    let (total, recon, divergence) = autoencoder_loss(&pair, &s.test)?;
    let a = p.config.autoencoder.as_ref().expect("validated");
    let samples = vae_generate(&pair, a.samples, &mut stream_rng(p.config.seed, "sampling"))?;
    save_tensor(out.path("samples.sgt")?, &samples)?;
    save_bundle(&Bundle::Autoencoder(pair.clone()), out.path("model.sgm")?)?;
    out.text("history.csv", &history.to_csv())?;

    let summary = format!(
        "trained {} epochs: test loss {total:.4} (reconstruction {recon:.4}, divergence {divergence:.4}), untrained {:.4}",
        config.epochs, untrained.0
    );
    let mut report = p.report(p.summary(Some(&s)));
    report.history = Some(HistorySummary {
        file: "history.csv".into(),
        rows: history.records.len(),
        best_epoch: None,
        stop_reason: None,
    });
    report.details = json!({
        "latent": pair.latent,
        "variational": pair.variational,
        "beta": pair.beta,
        "test_loss": total,
        "test_reconstruction": recon,
        "test_divergence": divergence,
        "untrained_test_loss": untrained.0,
        "samples": a.samples,
    });
    Ok((report, summary))
}

fn run_synth(p: &Prepared, out: &mut Output<'_>) -> Result<(RunReport, String)> {
    let data = p.data()?;
    save_dataset(data, out.path("data.sgd")?)?;
    let summary = format!("wrote {} examples: {}", data.len(), data.note);
    Ok((p.report(p.summary(None)), summary))
}
