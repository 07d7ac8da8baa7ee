use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rauq::engine::DEFAULT_LOG_FLOOR;
use rauq::{LayerAgg, LayerPolicy, RauqConfig, Recurrence, TokenAgg};

#[derive(Debug, Parser)]
#[command(name = "rauq", version, about = "Attention-based uncertainty scoring for LLM generation traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a trace file and report invalid records.
    Validate {
        #[arg(long)]
        traces: PathBuf,
    },
    /// Score every trace with one or more methods.
    Score(ScoreArgs),
    /// Compute PRR (and optionally ROC-AUC) from a scores CSV and a quality CSV.
    Eval(EvalArgs),
    /// Score and evaluate a grid of configurations.
    Ablate(AblateArgs),
    /// Attention diagnostics.
    Analyze(AnalyzeArgs),
    /// Write synthetic traces with a planted attention signal.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = rauq::engine::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// `middle-third`, `all`, or a comma-separated list of layer indices.
    #[arg(long, default_value = "middle-third")]
    pub layers: String,
    #[arg(long, default_value = "mean_log")]
    pub token_agg: String,
    #[arg(long, default_value = "max")]
    pub layer_agg: String,
    #[arg(long, default_value = "rauq")]
    pub recurrence: String,
    #[arg(long, default_value_t = DEFAULT_LOG_FLOOR)]
    pub log_floor: f64,
}

impl ConfigArgs {
    pub fn to_config(&self) -> rauq::Result<RauqConfig> {
        let cfg = RauqConfig {
            alpha: self.alpha,
            layer_policy: self.layers.parse::<LayerPolicy>()?,
            token_agg: self.token_agg.parse::<TokenAgg>()?,
            layer_agg: self.layer_agg.parse::<LayerAgg>()?,
            recurrence: self.recurrence.parse::<Recurrence>()?,
            log_floor: self.log_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated: rauq, msp, perplexity, attn_score_original,
    /// attn_score_gen_only, attn_score_gen_selected.
    #[arg(long, default_value = "rauq")]
    pub methods: String,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// CSV with columns trace_id, method, uncertainty.
    #[arg(long)]
    pub scores: PathBuf,
    /// CSV with columns trace_id, quality.
    #[arg(long)]
    pub quality: PathBuf,
    /// Comma-separated: prr, roc_auc.
    #[arg(long, default_value = "prr")]
    pub metrics: String,
    /// Records with quality below this are the positives for ROC-AUC.
    #[arg(long, default_value_t = rauq::eval::thresholds::QA)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rejection-curve CSV; defaults to `<out stem>.curves.csv` when --out is given.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub traces: PathBuf,
    /// Quality CSV overriding the labels stored in the traces.
    #[arg(long)]
    pub quality: Option<PathBuf>,
    /// Comma-separated α grid.
    #[arg(long, default_value = "0.2")]
    pub alpha: String,
    #[arg(long, default_value = "mean_log")]
    pub token_agg: String,
    #[arg(long, default_value = "max")]
    pub layer_agg: String,
    #[arg(long, default_value = "rauq")]
    pub recurrence: String,
    #[arg(long, default_value = "middle-third")]
    pub layers: String,
    #[arg(long, default_value_t = DEFAULT_LOG_FLOOR)]
    pub log_floor: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeMode {
    /// Per-head mean attention to the previous token.
    HeadMeans,
    /// Correct vs incorrect group means.
    Contrast,
    /// Correct vs incorrect difference per preceding-token offset.
    Kth,
    /// (quality, selected-head mean attention) per trace.
    Pairs,
    /// Raw attention window in long format.
    Dump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadModeArg {
    Selected,
    Pooled,
    PerHead,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub traces: PathBuf,
    #[arg(long, value_enum)]
    pub mode: AnalyzeMode,
    /// Layer to analyze; every layer when omitted.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, value_enum, default_value = "selected")]
    pub head_mode: HeadModeArg,
    #[arg(long, default_value_t = rauq::analysis::DEFAULT_LO)]
    pub lo: f64,
    #[arg(long, default_value_t = rauq::analysis::DEFAULT_HI)]
    pub hi: f64,
    #[arg(long, default_value_t = 2)]
    pub k_max: usize,
    /// Restrict `dump` to one trace.
    #[arg(long)]
    pub trace_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub signal: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
