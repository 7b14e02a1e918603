use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "scoremix", version, about = "Mixed-effects analysis of target-trial scores against acoustic mismatch")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    #[serde(skip)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Fit the all-predictor model and write the ranked parameter table.
    Fit(FitArgs),
    /// Rank predictors by correlation of fitted values with scores.
    Rank(RankArgs),
    /// Likelihood-ratio comparison of two nested models.
    Anova(AnovaArgs),
    /// Residual and fit diagnostics from a saved fit.
    Diag(DiagArgs),
    /// Generate synthetic utterance and trial tables.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fit(_) => "fit",
            Command::Rank(_) => "rank",
            Command::Anova(_) => "anova",
            Command::Diag(_) => "diag",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionArg {
    Ml,
    Reml,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Single,
    Forward,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FittedArg {
    /// Fixed part plus predicted speaker intercepts.
    Conditional,
    /// Fixed part only.
    Fixed,
}

#[derive(Debug, Args, Serialize)]
pub struct Inputs {
    /// Utterance summary table.
    #[arg(long)]
    pub utterances: PathBuf,
    /// Target-trial score table.
    #[arg(long)]
    pub trials: PathBuf,
    /// Feature/group catalog (TOML); default is the built-in 23-feature catalog.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Restrict the analysis to the speakers listed in this file.
    #[arg(long)]
    pub speakers: Option<PathBuf>,
    /// Field delimiter of both tables.
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// F0 summaries are in Hz; convert to semitones.
    #[arg(long)]
    pub f0_hz: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum, default_value = "reml")]
    pub criterion: CriterionArg,
    /// Comma-separated predictors (group names or `<feature>_<stat>`); default all groups.
    #[arg(long)]
    pub predictors: Option<String>,
    #[arg(long, value_enum, default_value = "conditional")]
    pub fitted: FittedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    #[arg(long, value_enum, default_value = "reml")]
    pub criterion: CriterionArg,
    #[arg(long, value_enum, default_value = "single")]
    pub mode: ModeArg,
    /// `groups`, or `features:GROUP` for the member columns of one group.
    #[arg(long, default_value = "groups")]
    pub scope: String,
    #[arg(long, value_enum, default_value = "conditional")]
    pub fitted: FittedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnovaArgs {
    #[command(flatten)]
    pub inputs: Inputs,
    /// Comma-separated predictors of model A; empty for intercept only.
    #[arg(long, allow_hyphen_values = true)]
    pub model_a: String,
    /// Comma-separated predictors of model B; empty for intercept only.
    #[arg(long, allow_hyphen_values = true)]
    pub model_b: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagArgs {
    /// `fit.json` written by `scoremix fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long, value_enum, default_value = "conditional")]
    pub fitted: FittedArg,
    /// Also write scatter.svg.
    #[arg(long)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_speakers: usize,
    #[arg(long, default_value_t = 50)]
    pub trials_per_speaker: usize,
    #[arg(long, default_value_t = 10)]
    pub utterances_per_speaker: usize,
    #[arg(long, default_value_t = 28.0, allow_hyphen_values = true)]
    pub intercept: f64,
    /// `PREDICTOR=COEF`, repeatable; default F0=-1.0 and VQ=-0.35.
    #[arg(long = "effect", allow_hyphen_values = true)]
    pub effects: Vec<String>,
    /// Scores independent of every predictor.
    #[arg(long)]
    pub null: bool,
    #[arg(long, default_value_t = 4.5)]
    pub sigma_b: f64,
    #[arg(long, default_value_t = 9.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub utterance_sd: f64,
    /// Correlation of summary columns within a group.
    #[arg(long, default_value_t = 0.0)]
    pub group_correlation: f64,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
