//! Command-line interface. Flags override values from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigFile, MeanSource, ModelSource, RunConfig};
use crate::error::{Error, Result, Stage, StageExt};
use crate::manifest::validate_manifest;
use crate::pipeline::{self, Layout};
use crate::{fixture, io, report};

#[derive(Debug, Parser)]
#[command(
    name = "ctxattr",
    version,
    about = "Measure how much a classifier's attribution falls on object versus context"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a manifest and report every problem found.
    Validate(RunArgs),
    /// Filter the manifest and write image variants.
    Synthesize(RunArgs),
    /// Run the built-in network on synthesized variants, writing predictions and maps.
    Attribute(RunArgs),
    /// Join predictions with maps and masks, and compute statistics.
    Analyze(RunArgs),
    /// Render report files from an existing analysis.
    Report(RunArgs),
    /// All stages in order.
    Run(RunArgs),
    /// Write the toy fixture dataset and network.
    Fixture {
        #[arg(long, default_value = "fixtures/toy")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Line-delimited JSON manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated variant labels, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Corruption severity, 1 to 5.
    #[arg(long)]
    pub severity: Option<u8>,
    /// Attribution method: gradcam, gradcam_pp, guided_backprop, fullgrad or scorecam.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub target_layer: Option<usize>,
    /// Keep samples whose context fraction exceeds this.
    #[arg(long)]
    pub context_threshold: Option<f64>,
    /// Network JSON for the built-in engine.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Predictions JSONL from an external runner.
    #[arg(long)]
    pub external_preds: Option<PathBuf>,
    /// Directory of external attribution maps.
    #[arg(long)]
    pub external_maps: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Colour source for meannorm backgrounds.
    #[arg(long, value_enum)]
    pub meannorm: Option<MeanArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MeanArg {
    Image,
    Dataset,
}

impl RunArgs {
    /// Overlays flags on the config file.
    pub fn resolve(&self, need_model: bool) -> Result<RunConfig> {
        let mut file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        macro_rules! overlay {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    file.$field = Some(v.clone());
                }
            )*};
        }
        overlay!(manifest, seed, out, variants, severity, context_threshold, jobs);
        if self.network.is_some() {
            file.network = self.network.clone();
            file.external_preds = None;
            file.external_maps = None;
        }
        if self.external_preds.is_some() || self.external_maps.is_some() {
            file.network = None;
            file.external_preds = self.external_preds.clone().or(file.external_preds);
            file.external_maps = self.external_maps.clone().or(file.external_maps);
        }
        if let Some(m) = self.meannorm {
            file.meannorm = Some(match m {
                MeanArg::Image => MeanSource::Image,
                MeanArg::Dataset => MeanSource::Dataset,
            });
        }
        if self.method.is_some() || self.target_layer.is_some() {
            let mut method = file.method.unwrap_or_default();
            if let Some(kind) = &self.method {
                method.kind = Some(kind.clone());
            }
            if let Some(layer) = self.target_layer {
                method.target_layer = Some(layer);
            }
            file.method = Some(method);
        }
        RunConfig::resolve(file, need_model)
    }
}

fn builtin_network(cfg: &RunConfig) -> Result<PathBuf> {
    match &cfg.model {
        Some(ModelSource::Builtin { network }) => Ok(network.clone()),
        _ => Err(Error::Config("attribute needs --network".into())),
    }
}

pub fn execute(command: &Command) -> Result<String> {
    match command {
        Command::Validate(args) => {
            let cfg = args.resolve(false)?;
            let m = validate_manifest(&cfg.manifest).stage(Stage::Validate)?;
            Ok(format!("{}: {} records, {} classes", cfg.manifest.display(), m.records.len(), m.class_count()))
        }
        Command::Synthesize(args) => {
            let cfg = args.resolve(false)?;
            let layout = Layout::new(&cfg.out);
            pipeline::guarded(&layout, "synthesize", || {
                let prep = pipeline::prepare(&cfg)?;
                io::write_json(&layout.filter(), &prep.filter).stage(Stage::Filter)?;
                let written = pipeline::synthesize_stage(&cfg, &prep, &layout)?;
                Ok(format!("{} kept of {}, {} images written", prep.kept.len(), prep.filter.records_in, written.len()))
            })
        }
        Command::Attribute(args) => {
            let cfg = args.resolve(true)?;
            let network = builtin_network(&cfg)?;
            let layout = Layout::new(&cfg.out);
            pipeline::guarded(&layout, "attribute", || {
                let prep = pipeline::prepare(&cfg)?;
                let net = io::load_network(&network).stage(Stage::Attribute)?;
                let preds = pipeline::attribute_stage(&cfg, &prep, &layout, &net, &pipeline::model_id(&net, &network))?;
                Ok(format!("{} predictions written", preds.len()))
            })
        }
        Command::Analyze(args) => {
            let cfg = args.resolve(true)?;
            let layout = Layout::new(&cfg.out);
            pipeline::guarded(&layout, "analyze", || {
                let prep = pipeline::prepare(&cfg)?;
                let a = pipeline::analyze_stage(&cfg, &prep, &layout)?;
                Ok(summary(&a))
            })
        }
        Command::Report(args) => {
            let out = match (&args.out, &args.config) {
                (Some(o), _) => o.clone(),
                (None, Some(c)) => ConfigFile::load(c)?.out.unwrap_or_else(|| "out".into()),
                (None, None) => "out".into(),
            };
            let layout = Layout::new(out);
            pipeline::guarded(&layout, "report", || {
                let a = report::report_from_dir(&layout).stage(Stage::Report)?;
                Ok(summary(&a))
            })
        }
        Command::Run(args) => {
            let cfg = args.resolve(true)?;
            let a = pipeline::run_pipeline(&cfg)?;
            Ok(summary(&a))
        }
        Command::Fixture { out } => {
            fixture::generate(out)?;
            Ok(format!("fixture written to {}", out.display()))
        }
    }
}

fn summary(a: &pipeline::Analysis) -> String {
    let mut lines = Vec::new();
    for (model, m) in &a.models {
        let t = &m.accuracy;
        let fmt = |v: Option<f64>| v.map(|v| format!("{:.1}", v)).unwrap_or_else(|| "-".into());
        lines.push(format!(
            "{}: orig {:.1}  decline_cc {}  decline_cp {}",
            model,
            t.orig,
            fmt(t.decline_cc),
            fmt(t.decline_cp)
        ));
    }
    lines.join("\n")
}

/// Parses arguments, runs the command and returns the exit status.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(msg) => {
            if !msg.is_empty() {
                println!("{}", msg);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
