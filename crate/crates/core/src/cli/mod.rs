//! Command-line front end.

pub mod verify;

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::featurize::{
    featurize_lines, mock_embed, EmbeddingProvider, HttpProvider, MockProvider, PromptTemplate,
    TextMode,
};
use crate::ingest::{
    load_manifest, read_manifest_lines, split, synth_generate, write_manifest, Dataset,
    SynthStructure,
};
use crate::model::Model;
use crate::numerics::{Mutation, ParamStore, Tensor};
use crate::train::{
    checksum_hex, evaluate, run_ablation, train, AblationMode, AblationReport, FinalMetrics,
    Metrics, ResultsFile, TextSource, TrainConfig, ARTIFACT_VERSION,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ctxfusion", version, about = "Contextual-attention multimodal classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic two-modality manifest.
    Synth(SynthArgs),
    /// Fill text (and missing image) embeddings from raw text.
    Embed(EmbedArgs),
    /// Train one configuration and write a results file.
    Train(TrainArgs),
    /// Score saved parameters on a manifest.
    Eval(EvalArgs),
    /// Train and score all six configurations.
    Ablate(AblateArgs),
    /// Finite-difference check of every gradient.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print machine-readable JSON on stdout.
    #[arg(long)]
    pub json: bool,
    /// Suppress progress on stderr.
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum)]
    pub structure: StructureArg,
    #[arg(long, default_value_t = 64)]
    pub d_text: usize,
    #[arg(long, default_value_t = 64)]
    pub d_image: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StructureArg {
    Xor,
    UnimodalText,
    UnimodalImage,
}

impl From<StructureArg> for SynthStructure {
    fn from(s: StructureArg) -> Self {
        match s {
            StructureArg::Xor => SynthStructure::Xor,
            StructureArg::UnimodalText => SynthStructure::UnimodalText,
            StructureArg::UnimodalImage => SynthStructure::UnimodalImage,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Simple,
    Prompt,
    PromptVariants,
    PromptFinetune,
}

impl From<ModeArg> for TextMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Simple => TextMode::Simple,
            ModeArg::Prompt => TextMode::Prompt,
            ModeArg::PromptVariants => TextMode::PromptVariants,
            ModeArg::PromptFinetune => TextMode::PromptFinetune,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProviderArg {
    Mock,
    Http,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Manifest whose lines carry `raw_text`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Prompt)]
    pub mode: ModeArg,
    /// Prompt template with one `{text}` placeholder.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long, value_enum, default_value_t = ProviderArg::Mock)]
    pub provider: ProviderArg,
    /// Base URL of an HTTP embedding service.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "text-embedding")]
    pub model: String,
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    #[arg(long, default_value_t = 768)]
    pub d_text: usize,
    /// Dimension of mock image embeddings for lines that lack one.
    #[arg(long, default_value_t = 2048)]
    pub d_image: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ablation configuration to train.
    #[arg(long)]
    pub mode: Option<AblationMode>,
    /// Also write the trained parameters for `eval`.
    #[arg(long)]
    pub save_params: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Parameter file written by `train --save-params`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Re-embed `raw_text` per text mode with this provider.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderArg>,
    #[arg(long)]
    pub template: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MutationArg {
    SignFlip,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Corrupt the backward pass to confirm the check catches it.
    #[arg(long, value_enum)]
    pub mutate: Option<MutationArg>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// Saved model: settings, input dims and every tensor.
#[derive(Debug, Serialize, Deserialize)]
pub struct ParamsFile {
    pub artifact_version: String,
    pub config: TrainConfig,
    pub d_text: usize,
    pub d_image: usize,
    pub tensors: Vec<SavedTensor>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SavedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn config_from(common: &Common, ov: Option<&Overrides>) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(ov) = ov {
        if let Some(lr) = ov.lr {
            cfg.learning_rate = lr;
        }
        if let Some(e) = ov.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = ov.batch_size {
            cfg.batch_size = b;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<S: Serialize>(common: &Common, value: &S, human: impl FnOnce() -> String) -> Result<()> {
    if common.json {
        println!("{}", serde_json::to_string_pretty(value)?);
    } else {
        print!("{}", human());
    }
    Ok(())
}

fn fmt_metrics(m: &Option<Metrics>) -> String {
    match m {
        Some(m) => format!(
            "{:>7.2} {:>7.2} {:>7.2} {:>7.2}",
            m.accuracy, m.precision, m.recall, m.f1
        ),
        None => format!("{:>7} {:>7} {:>7} {:>7}", "-", "-", "-", "-"),
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(0);
    let ds = synth_generate(a.n, a.d_text, a.d_image, a.structure.into(), a.noise, seed)?;
    write_manifest(&a.out, &ds.records)?;
    let summary = serde_json::json!({
        "records": ds.len(),
        "structure": SynthStructure::from(a.structure).tag(),
        "out": a.out.display().to_string(),
    });
    emit(&a.common, &summary, || {
        format!("wrote {} records ({}) to {}\n", ds.len(), SynthStructure::from(a.structure).tag(), a.out.display())
    })
}

fn cmd_embed(a: &EmbedArgs) -> Result<()> {
    let mut lines = read_manifest_lines(&a.input)?;
    let tpl = match &a.template {
        Some(t) => PromptTemplate::new(t.clone())?,
        None => PromptTemplate::default(),
    };
    let provider: Box<dyn EmbeddingProvider> = match a.provider {
        ProviderArg::Mock => Box::new(MockProvider::new(a.d_text)?),
        ProviderArg::Http => {
            let endpoint = a
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config("--provider http needs --endpoint".into()))?;
            Box::new(HttpProvider::new(endpoint, &a.model, a.d_text, Duration::from_secs(a.timeout_secs))?)
        }
    };
    featurize_lines(&mut lines, a.mode.into(), &tpl, provider.as_ref(), a.common.seed.unwrap_or(0))?;
    for line in &mut lines {
        if line.image_embedding.is_none() {
            line.image_embedding = Some(mock_embed(&line.id, a.d_image)?);
        }
    }
    write_manifest(&a.out, &lines)?;
    let summary = serde_json::json!({
        "records": lines.len(),
        "mode": TextMode::from(a.mode).tag(),
        "provider": provider.name(),
        "out": a.out.display().to_string(),
    });
    emit(&a.common, &summary, || {
        format!(
            "embedded {} records ({} via {}) to {}\n",
            lines.len(),
            TextMode::from(a.mode).tag(),
            provider.name(),
            a.out.display()
        )
    })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = config_from(&a.common, Some(&a.overrides))?;
    if let Some(m) = a.mode {
        cfg.ablation_mode = m;
    }
    let ds = load_manifest(&a.data)?;
    let (tr, va, te) = split(&ds, &cfg.split, cfg.seed)?;
    if !a.common.quiet {
        eprintln!(
            "training {} on {} ({} train / {} val / {} test), {} epochs",
            cfg.ablation_mode,
            ds.name,
            tr.len(),
            va.len(),
            te.len(),
            cfg.epochs
        );
    }
    let out = train(&cfg, &tr, &va)?;
    let score = |d: &Dataset| -> Result<Option<Metrics>> {
        if d.is_empty() { Ok(None) } else { evaluate(&out.model, &out.params, d).map(Some) }
    };
    let results = ResultsFile {
        artifact_version: ARTIFACT_VERSION.into(),
        seed: cfg.seed,
        dataset: ds.name.clone(),
        config: cfg.clone(),
        final_metrics: FinalMetrics { validation: score(&va)?, test: score(&te)? },
        history: out.history,
        ablation: None,
        initial_param_checksum: checksum_hex(out.initial.checksum()),
        final_param_checksum: checksum_hex(out.params.checksum()),
    };
    results.write(&a.out)?;
    if let Some(p) = &a.save_params {
        save_params(p, &cfg, &ds, &out.params)?;
    }
    emit(&a.common, &results, || {
        let last = results.history.last().map_or(f64::NAN, |h| h.train_loss);
        format!(
            "{:<12} {:>7} {:>7} {:>7} {:>7}\n{:<12} {}\n{:<12} {}\nfinal train loss {last:.6}; results in {}\n",
            "split", "acc", "prec", "recall", "f1",
            "validation", fmt_metrics(&results.final_metrics.validation),
            "test", fmt_metrics(&results.final_metrics.test),
            a.out.display()
        )
    })
}

fn save_params(path: &Path, cfg: &TrainConfig, ds: &Dataset, store: &ParamStore<f32>) -> Result<()> {
    let file = ParamsFile {
        artifact_version: ARTIFACT_VERSION.into(),
        config: cfg.clone(),
        d_text: ds.d_text,
        d_image: ds.d_image,
        tensors: store
            .entries()
            .iter()
            .map(|e| SavedTensor {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                data: e.value.data().to_vec(),
            })
            .collect(),
    };
    write_text(path, &serde_json::to_string(&file)?)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.params).map_err(|e| Error::io(&a.params, e))?;
    let file: ParamsFile = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(format!("{}: {e}", a.params.display())))?;
    let mut store = ParamStore::<f32>::new();
    for t in file.tensors {
        store.insert(t.name, Tensor::new(t.shape, t.data)?)?;
    }
    let arch = file.config.architecture(file.d_text, file.d_image)?;
    let model = Model::bind(&store, &arch)?;
    let ds = load_manifest(&a.data)?;
    let metrics = evaluate(&model, &store, &ds)?;
    if let Some(p) = &a.out {
        write_text(p, &(serde_json::to_string_pretty(&metrics)? + "\n"))?;
    }
    emit(&a.common, &metrics, || {
        format!(
            "{} records, mode {}\n{:>7} {:>7} {:>7} {:>7}\n{}\n",
            ds.len(),
            file.config.ablation_mode,
            "acc", "prec", "recall", "f1",
            fmt_metrics(&Some(metrics))
        )
    })
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = config_from(&a.common, Some(&a.overrides))?;
    let ds = load_manifest(&a.data)?;
    let tpl = match &a.template {
        Some(t) => PromptTemplate::new(t.clone())?,
        None => PromptTemplate::default(),
    };
    let mock;
    let source = match a.provider {
        None => None,
        Some(ProviderArg::Mock) => {
            mock = MockProvider::new(ds.d_text)?;
            Some(TextSource { provider: &mock, template: tpl })
        }
        Some(ProviderArg::Http) => {
            return Err(Error::Config("ablate supports only the mock provider; embed first".into()))
        }
    };
    if !a.common.quiet {
        eprintln!("ablation on {} ({} records), {} epochs per configuration", ds.name, ds.len(), cfg.epochs);
    }
    let (report, history) = run_ablation(&cfg, &ds, source.as_ref())?;
    let fusion = report.row(AblationMode::Fusion).expect("fusion row");
    let results = ResultsFile {
        artifact_version: ARTIFACT_VERSION.into(),
        seed: cfg.seed,
        dataset: ds.name.clone(),
        config: TrainConfig { ablation_mode: AblationMode::Fusion, ..cfg },
        history,
        final_metrics: FinalMetrics { validation: fusion.validation, test: fusion.test },
        ablation: Some(report.clone()),
        initial_param_checksum: String::new(),
        final_param_checksum: String::new(),
    };
    results.write(&a.out)?;
    emit(&a.common, &results, || table(&report))
}

fn table(report: &AblationReport) -> String {
    let mut s = format!("{:<42} {:>7} {:>7} {:>7} {:>7}\n", "configuration (test)", "acc", "prec", "recall", "f1");
    for r in &report.rows {
        s += &format!("{:<42} {}\n", r.label, fmt_metrics(&r.test));
    }
    s
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let seed = a.common.seed.unwrap_or(7);
    let mutation = a.mutate.map(|MutationArg::SignFlip| Mutation::SignFlip);
    let report = verify::run_verification(seed, mutation)?;
    if let Some(p) = &a.out {
        write_text(p, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    emit(&a.common, &report, || {
        let mut s = format!("{:<28} {:>8} {:>8} {:>12}\n", "tensor", "elements", "checked", "max rel err");
        for t in &report.tensors {
            s += &format!("{:<28} {:>8} {:>8} {:>12.3e}\n", t.name, t.elements, t.checked, t.max_rel_error);
        }
        for m in &report.modules {
            s += &format!("module {:<21} {:>30.3e}\n", m.module, m.max_rel_error);
        }
        s
    })?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::Verification(format!(
            "relative error at or above {:e} in: {}",
            report.tolerance,
            report.offending().join(", ")
        )))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}
