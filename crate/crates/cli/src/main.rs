mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::PipelineConfig;

/// Radiomics-stratified ensembling and post-processing for brain-tumor segmentation.
///
/// Every global flag can also be set through an environment variable with the
/// `TUMORSEG_` prefix (`TUMORSEG_CONFIG`, `TUMORSEG_THREADS`, `TUMORSEG_SEED`,
/// `TUMORSEG_VERBOSE`). Command-line values win over the environment, and both
/// win over the config file.
#[derive(Parser, Debug)]
#[command(name = "tumorseg", version, about)]
struct Cli {
    /// Pipeline config JSON; missing sections use defaults
    #[arg(long, global = true, env = "TUMORSEG_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads for case-level parallelism (default: all cores)
    #[arg(long, global = true, env = "TUMORSEG_THREADS")]
    threads: Option<usize>,

    /// Overrides the stratification and phantom seeds
    #[arg(long, global = true, env = "TUMORSEG_SEED")]
    seed: Option<u64>,

    /// Debug-level logging
    #[arg(short, long, global = true, env = "TUMORSEG_VERBOSE")]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract the 386 radiomic features of every case into a CSV
    Features(FeaturesArgs),
    /// Fit scaler, PCA and k-means on a feature CSV and assign stratified folds
    Stratify(StratifyArgs),
    /// Fuse per-model region probability maps and decode labels
    Ensemble(EnsembleArgs),
    /// Turn per-model cross-validation Dice scores into ensemble weights
    WeightsFromCv(WeightsArgs),
    /// Grid-search a per-cluster post-processing policy
    FitPostprocess(FitArgs),
    /// Apply a post-processing policy to predictions
    Postprocess(PostprocessArgs),
    /// Lesion-wise and volumetric evaluation against ground truth
    Evaluate(EvaluateArgs),
    /// Write a synthetic case corpus with probability maps
    Phantom(PhantomArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MaskSource {
    GroundTruth,
    Prediction,
}

#[derive(Args, Debug)]
pub struct FeaturesArgs {
    /// Directory holding one sub-directory per case
    #[arg(long)]
    pub cases: PathBuf,
    /// Region the features are computed on: the whole tumor of the ground truth or of a prediction
    #[arg(long, value_enum, default_value = "ground-truth")]
    pub mask_source: MaskSource,
    /// Prediction directory (`<id>.nii.gz` files), required with `--mask-source prediction`
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StratifyArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Fitted stratification model (JSON)
    #[arg(long)]
    pub out_model: PathBuf,
    /// Fold assignment; JSON when the name ends in `.json`, CSV otherwise
    #[arg(long)]
    pub out_folds: PathBuf,
    #[arg(long)]
    pub n_folds: Option<usize>,
    #[arg(long)]
    pub k_min: Option<usize>,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Directory with one sub-directory of `<id>-prob_{et,tc,wt}` maps per model
    #[arg(long)]
    pub probs: PathBuf,
    /// Weights file `{"models": {...}, "threshold": 0.5}`; defaults to the config
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the fused probability maps under `<out>/probs`
    #[arg(long)]
    pub write_probs: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct WeightsArgs {
    /// JSON object mapping each model to its mean Dice or to a list of per-fold Dice
    #[arg(long, conflicts_with = "score")]
    pub scores: Option<PathBuf>,
    /// Inline `model=dice` pair; repeatable
    #[arg(long, value_parser = parse_score)]
    pub score: Vec<(String, f64)>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Cross-validated predictions (`<id>.nii.gz`)
    #[arg(long)]
    pub pred: PathBuf,
    /// Case directories with images and ground truth
    #[arg(long)]
    pub cases: PathBuf,
    /// Stratification model used to assign clusters
    #[arg(long)]
    pub model: PathBuf,
    /// Lesion-size candidates, comma separated; must contain 0
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<usize>>,
    /// ET/WT ratio candidates, comma separated; must contain 0
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub cases: PathBuf,
    /// Policy JSON, or `reference` for the shipped reference policy
    #[arg(long)]
    pub policy: String,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Case directories holding the ground-truth segmentations
    #[arg(long)]
    pub cases: PathBuf,
    /// Report CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Optional JSON report with per-lesion detail
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PhantomArgs {
    /// Output root; cases go to `<out>/cases`, model maps to `<out>/probs/<model>`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub cases: usize,
    /// Phantom spec JSON overriding the config's `phantom` section
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Skip the probability maps
    #[arg(long)]
    pub no_probs: bool,
}

fn parse_score(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected model=dice, got `{s}`"))?;
    let v: f64 = value.parse().map_err(|e| format!("bad score `{value}`: {e}"))?;
    Ok((name.to_string(), v))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TUMORSEG_LOG", level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failed) => {
            log::error!("{failed} case(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            log::error!("{}", chain(&e));
            ExitCode::from(2)
        }
    }
}

/// Joins an error and its causes, skipping causes already spelled out by the message above them.
fn chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// Runs one subcommand and returns the number of failed cases.
fn run(cli: Cli) -> anyhow::Result<usize> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.stratify.seed = seed;
        cfg.phantom.seed = seed;
    }
    match cli.command {
        Command::Features(a) => commands::features(&cfg, &a),
        Command::Stratify(a) => commands::stratify(&cfg, &a),
        Command::Ensemble(a) => commands::ensemble(&cfg, &a),
        Command::WeightsFromCv(a) => commands::weights_from_cv(&cfg, &a),
        Command::FitPostprocess(a) => commands::fit_postprocess(&cfg, &a),
        Command::Postprocess(a) => commands::postprocess(&cfg, &a),
        Command::Evaluate(a) => commands::evaluate(&cfg, &a),
        Command::Phantom(a) => commands::phantom(&cfg, &a, cli.seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn score_pairs() {
        assert_eq!(parse_score("nnunet=0.895").unwrap(), ("nnunet".into(), 0.895));
        assert!(parse_score("nnunet").is_err());
        assert!(parse_score("a=x").is_err());
    }

    #[test]
    fn error_chain_skips_repeated_causes() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let e = anyhow::Error::new(tumorseg::Error::Io { path: "a.json".into(), source: io }).context("loading policy");
        assert_eq!(chain(&e), "loading policy: I/O error on a.json: gone");
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["tumorseg", "phantom", "--out", "x", "--seed", "9", "--threads", "2"]).unwrap();
        assert_eq!(cli.seed, Some(9));
        assert_eq!(cli.threads, Some(2));
    }
}
