//! Command-line front end.
//!
//! Configuration precedence, highest first: command-line flags, the
//! `--config` JSON file, `TRIMASK_SEED` (seed only), built-in defaults.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PrunerConfig;
use crate::fusion::{mask_flip_rate, prune_episode, RetentionMask, StepStats};
use crate::mask_io::{read_masks, write_masks, MaskFile};
use crate::simulator::{generate_episode, predict_speedup, CostModel, ScenarioSpec};
use crate::stage1::Stage1Thresholds;
use crate::temporal::{EmaConfig, Smoothing};
use crate::trace::{load_trace, save_trace, EpisodeTrace};

pub const SEED_ENV: &str = "TRIMASK_SEED";

pub const MASKS_FILE: &str = "masks.jsonl";
pub const STATS_FILE: &str = "stats.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation: exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Any typed failure while running: exit code 1.
    #[error("{0:#}")]
    Failed(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "trimask",
    version,
    about = "Tri-stage 2D/3D visual token pruning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune a trace and write masks, per-step stats and a summary.
    Run(RunArgs),
    /// Generate a synthetic trace with ground truth.
    Simulate(SimulateArgs),
    /// Vary one hyperparameter over a grid and summarize each point.
    Sweep(SweepArgs),
    /// Convert a mask file into per-step patch grids.
    Maskgrid(MaskgridArgs),
    /// Summarize an existing mask file.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tau2d: Option<f64>,
    #[arg(long)]
    pub tau3d: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k: Option<u64>,
    /// Use raw indicators instead of temporally smoothed ones.
    #[arg(long)]
    pub no_smoothing: bool,
    #[arg(long = "theta-2dext")]
    pub theta_2dext: Option<f64>,
    #[arg(long = "eps-3d")]
    pub eps_3d: Option<f64>,
    #[arg(long)]
    pub bg_keep_prob: Option<f64>,
    /// Global pruning-rate target in [0, 1).
    #[arg(long)]
    pub budget: Option<f64>,
    /// Master seed (falls back to the config file, then TRIMASK_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON; omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub trace: PathBuf,
    /// Grid JSON: `{"param": "tau2d", "values": [0.02, 0.08, 0.14]}`.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct MaskgridArgs {
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub masks: PathBuf,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run configuration holding the cost model.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Flat, file-level run configuration. Every field is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tau2d: f64,
    pub tau3d: f64,
    pub beta: f64,
    pub k: u64,
    pub smoothing: bool,
    pub theta_2dext: f64,
    pub eps_3d: f64,
    pub bg_keep_prob: f64,
    pub budget: Option<f64>,
    pub seed: Option<u64>,
    pub cost: CostModel,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = PrunerConfig::default();
        let ema = EmaConfig::default();
        Self {
            tau2d: base.thresholds.tau2d(),
            tau3d: base.thresholds.tau3d(),
            beta: ema.beta(),
            k: ema.window(),
            smoothing: true,
            theta_2dext: base.theta_2d_extreme,
            eps_3d: base.eps_3d,
            bg_keep_prob: base.bg_keep_prob,
            budget: None,
            seed: None,
            cost: CostModel::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// File config (or defaults) with flags applied on top.
    pub fn resolve(flags: &ConfigFlags) -> anyhow::Result<Self> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! over {
            ($($f:ident => $g:ident),*) => {$( if let Some(v) = flags.$f { c.$g = v; } )*};
        }
        over!(tau2d => tau2d, tau3d => tau3d, beta => beta, k => k,
              theta_2dext => theta_2dext, eps_3d => eps_3d, bg_keep_prob => bg_keep_prob);
        if flags.no_smoothing {
            c.smoothing = false;
        }
        if flags.budget.is_some() {
            c.budget = flags.budget;
        }
        if flags.seed.is_some() {
            c.seed = flags.seed;
        }
        Ok(c)
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }

    pub fn pruner_config(&self) -> anyhow::Result<PrunerConfig> {
        let smoothing = if self.smoothing {
            Smoothing::Ema(EmaConfig::new(self.beta, self.k)?)
        } else {
            Smoothing::Passthrough
        };
        let config = PrunerConfig {
            thresholds: Stage1Thresholds::new(self.tau2d, self.tau3d)?,
            smoothing,
            theta_2d_extreme: self.theta_2dext,
            eps_3d: self.eps_3d,
            bg_keep_prob: self.bg_keep_prob,
            budget: self.budget,
            seed: self.seed()?,
        };
        config.validate()?;
        self.cost.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Serialize)]
struct StatsRow {
    t: u64,
    pr2d: f64,
    pr3d: f64,
    retained: usize,
    conflicts: usize,
    n_obj: usize,
    n_rob: usize,
    n_bg: usize,
}

/// Episode-level summary written by `run` and `stats`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episode_id: String,
    pub steps: usize,
    pub num_patches: usize,
    pub mean_pr2d: f64,
    pub mean_pr3d: f64,
    /// Pruned fraction of all tokens over all steps.
    pub overall_pr: f64,
    /// Same, excluding the cold-start step.
    pub overall_pr_after_cold_start: f64,
    pub mask_flip_rate: f64,
    pub conflicts_resolved: usize,
    pub predicted_speedup: f64,
}

pub fn summarize(
    episode_id: &str,
    num_patches: usize,
    masks: &[RetentionMask],
    conflicts: usize,
    cost: &CostModel,
) -> Summary {
    let n = masks.len();
    let mean = |f: &dyn Fn(&RetentionMask) -> f64| {
        if n == 0 {
            0.0
        } else {
            masks.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let pruned_rate = |ms: &[RetentionMask]| {
        let total: usize = ms.iter().map(|m| 2 * m.num_patches()).sum();
        if total == 0 {
            0.0
        } else {
            ms.iter().map(|m| m.pruned()).sum::<usize>() as f64 / total as f64
        }
    };
    Summary {
        episode_id: episode_id.to_string(),
        steps: n,
        num_patches,
        mean_pr2d: mean(&|m| m.pr2d()),
        mean_pr3d: mean(&|m| m.pr3d()),
        overall_pr: pruned_rate(masks),
        overall_pr_after_cold_start: pruned_rate(masks.get(1..).unwrap_or(&[])),
        mask_flip_rate: mask_flip_rate(masks),
        conflicts_resolved: conflicts,
        predicted_speedup: predict_speedup(masks, cost, 2 * num_patches),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn run_episode(
    trace: &EpisodeTrace<f64>,
    config: &RunConfig,
) -> anyhow::Result<(Vec<(RetentionMask, StepStats)>, Summary)> {
    let pc = config.pruner_config()?;
    let steps = prune_episode(trace, &pc)?;
    let masks: Vec<RetentionMask> = steps.iter().map(|(m, _)| m.clone()).collect();
    let conflicts = steps.iter().map(|(_, s)| s.conflicts_resolved).sum();
    let summary = summarize(
        &trace.episode_id,
        trace.num_patches,
        &masks,
        conflicts,
        &config.cost,
    );
    Ok((steps, summary))
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let config = RunConfig::resolve(&args.cfg)?;
    let trace: EpisodeTrace<f64> = load_trace(&args.trace)
        .with_context(|| format!("loading trace {}", args.trace.display()))?;
    let (steps, summary) = run_episode(&trace, &config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let masks_path = args.out.join(MASKS_FILE);
    let f =
        File::create(&masks_path).with_context(|| format!("creating {}", masks_path.display()))?;
    write_masks(
        BufWriter::new(f),
        &trace.episode_id,
        trace.num_patches,
        &steps,
    )
    .context("writing masks")?;

    let mut csv =
        csv::Writer::from_path(args.out.join(STATS_FILE)).context("creating stats csv")?;
    for (_, s) in &steps {
        let [n_obj, n_rob, n_bg] = s.semantic_histogram;
        csv.serialize(StatsRow {
            t: s.t,
            pr2d: s.pr2d,
            pr3d: s.pr3d,
            retained: s.retained_total,
            conflicts: s.conflicts_resolved,
            n_obj,
            n_rob,
            n_bg,
        })
        .context("writing stats csv")?;
    }
    csv.flush().context("writing stats csv")?;
    write_json(&args.out.join(SUMMARY_FILE), &summary)?;
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut spec: ScenarioSpec = match &args.spec {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading spec {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing spec {}", p.display()))?
        }
        None => ScenarioSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (trace, truth) = generate_episode(&spec).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_trace(&trace, args.out.join(TRACE_FILE)).context("writing trace")?;
    let gt_path = args.out.join(GROUND_TRUTH_FILE);
    let mut w = BufWriter::new(File::create(&gt_path).context("creating ground truth")?);
    serde_json::to_writer(&mut w, &truth).context("writing ground truth")?;
    w.write_all(b"\n").context("writing ground truth")?;
    w.flush().context("writing ground truth")?;
    Ok(())
}

/// One-dimensional hyperparameter grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub param: String,
    pub values: Vec<f64>,
}

pub const SWEEP_PARAMS: [&str; 8] = [
    "tau2d",
    "tau3d",
    "beta",
    "k",
    "theta_2dext",
    "eps_3d",
    "bg_keep_prob",
    "budget",
];

fn with_param(base: &RunConfig, param: &str, value: f64) -> anyhow::Result<RunConfig> {
    let mut c = base.clone();
    match param {
        "tau2d" => c.tau2d = value,
        "tau3d" => c.tau3d = value,
        "beta" => c.beta = value,
        "k" => {
            if value.fract() != 0.0 || value < 0.0 {
                bail!("k must be a nonnegative integer, got {value}");
            }
            c.k = value as u64
        }
        "theta_2dext" => c.theta_2dext = value,
        "eps_3d" => c.eps_3d = value,
        "bg_keep_prob" => c.bg_keep_prob = value,
        "budget" => c.budget = Some(value),
        other => bail!("unknown sweep parameter {other:?}"),
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub mean_pr2d: f64,
    pub mean_pr3d: f64,
    pub mean_retained: f64,
    pub predicted_speedup: f64,
    pub mask_flip_rate: f64,
}

/// Evaluates every grid point in parallel; rows come back in grid order.
pub fn sweep(
    trace: &EpisodeTrace<f64>,
    base: &RunConfig,
    grid: &GridSpec,
) -> anyhow::Result<Vec<SweepRow>> {
    grid.values
        .par_iter()
        .map(|&v| {
            let cfg = with_param(base, &grid.param, v)?;
            let (steps, summary) =
                run_episode(trace, &cfg).with_context(|| format!("{} = {v}", grid.param))?;
            let n = steps.len().max(1) as f64;
            Ok(SweepRow {
                param: grid.param.clone(),
                value: v,
                mean_pr2d: summary.mean_pr2d,
                mean_pr3d: summary.mean_pr3d,
                mean_retained: steps.iter().map(|(m, _)| m.retained() as f64).sum::<f64>() / n,
                predicted_speedup: summary.predicted_speedup,
                mask_flip_rate: summary.mask_flip_rate,
            })
        })
        .collect()
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.grid)
        .map_err(|e| CliError::Usage(format!("reading grid {}: {e}", args.grid.display())))?;
    let grid: GridSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad grid spec: {e}")))?;
    if grid.values.is_empty() {
        return Err(CliError::Usage("grid has no values".into()));
    }
    if !SWEEP_PARAMS.contains(&grid.param.as_str()) {
        return Err(CliError::Usage(format!(
            "unknown sweep parameter {:?}; expected one of {}",
            grid.param,
            SWEEP_PARAMS.join(", ")
        )));
    }
    let base = RunConfig::resolve(&args.cfg)?;
    let trace: EpisodeTrace<f64> = load_trace(&args.trace)
        .with_context(|| format!("loading trace {}", args.trace.display()))?;
    let rows = sweep(&trace, &base, &grid)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut csv =
        csv::Writer::from_path(args.out.join(SWEEP_FILE)).context("creating sweep csv")?;
    for row in &rows {
        csv.serialize(row).context("writing sweep csv")?;
    }
    csv.flush().context("writing sweep csv")?;
    Ok(())
}

/// Cell code of one patch: 0 pruned, 1 2D only, 2 both, 3 3D only.
pub fn cell_code(keep2d: bool, keep3d: bool) -> u8 {
    match (keep2d, keep3d) {
        (false, false) => 0,
        (true, false) => 1,
        (true, true) => 2,
        (false, true) => 3,
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("patch count {0} is not a perfect square")]
pub struct NonSquarePatchCount(pub usize);

/// Per-step `side x side` grids of cell codes, patches in row-major order.
/// Step number and rows of cell codes.
pub type StepGrid = (u64, Vec<Vec<u8>>);

pub fn mask_grids(file: &MaskFile) -> Result<Vec<StepGrid>, NonSquarePatchCount> {
    let p = file.num_patches;
    let side = (p as f64).sqrt().round() as usize;
    if side * side != p {
        return Err(NonSquarePatchCount(p));
    }
    Ok(file
        .masks
        .iter()
        .map(|m| {
            let grid = (0..side)
                .map(|r| {
                    (0..side)
                        .map(|c| cell_code(m.mask2d[r * side + c], m.mask3d[r * side + c]))
                        .collect()
                })
                .collect();
            (m.t, grid)
        })
        .collect())
}

fn read_mask_file(path: &Path) -> anyhow::Result<MaskFile> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_masks(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn cmd_maskgrid(args: &MaskgridArgs) -> Result<(), CliError> {
    let file = read_mask_file(&args.masks)?;
    let grids = mask_grids(&file).map_err(anyhow::Error::from)?;
    let side = (file.num_patches as f64).sqrt().round() as usize;
    let mut csv = csv::Writer::from_path(&args.out).context("creating grid csv")?;
    let mut header = vec!["t".to_string(), "row".to_string()];
    header.extend((0..side).map(|c| format!("c{c}")));
    csv.write_record(&header).context("writing grid csv")?;
    for (t, grid) in grids {
        for (r, row) in grid.iter().enumerate() {
            let mut rec = vec![t.to_string(), r.to_string()];
            rec.extend(row.iter().map(|c| c.to_string()));
            csv.write_record(&rec).context("writing grid csv")?;
        }
    }
    csv.flush().context("writing grid csv")?;
    Ok(())
}

pub fn cmd_stats(args: &StatsArgs) -> Result<(), CliError> {
    let cost = match &args.config {
        Some(p) => RunConfig::load(p)?.cost,
        None => CostModel::default(),
    };
    cost.validate().map_err(anyhow::Error::from)?;
    let file = read_mask_file(&args.masks)?;
    let summary = summarize(
        &file.episode_id,
        file.num_patches,
        &file.masks,
        file.conflicts.iter().sum(),
        &cost,
    );
    match &args.out {
        Some(p) => write_json(p, &summary)?,
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            serde_json::to_writer_pretty(&mut lock, &summary).map_err(|e| anyhow!(e))?;
            writeln!(lock).map_err(|e| anyhow!(e))?;
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Maskgrid(a) => cmd_maskgrid(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::RetentionMask;

    #[test]
    fn cell_codes() {
        assert_eq!(cell_code(false, false), 0);
        assert_eq!(cell_code(true, false), 1);
        assert_eq!(cell_code(true, true), 2);
        assert_eq!(cell_code(false, true), 3);
    }

    fn file(p: usize, masks: Vec<RetentionMask>) -> MaskFile {
        MaskFile {
            episode_id: "e".into(),
            num_patches: p,
            conflicts: vec![0; masks.len()],
            masks,
        }
    }

    #[test]
    fn cold_start_grid_is_all_twos() {
        let g = mask_grids(&file(4, vec![RetentionMask::all_ones(1, 4)])).unwrap();
        assert_eq!(g, vec![(1, vec![vec![2, 2], vec![2, 2]])]);
    }

    #[test]
    fn two_d_only_cell() {
        let mut m = RetentionMask::all_ones(2, 4);
        m.mask3d[3] = false;
        let g = mask_grids(&file(4, vec![m])).unwrap();
        assert_eq!(g[0].1[1][1], 1);
    }

    #[test]
    fn non_square_rejected() {
        assert_eq!(
            mask_grids(&file(6, vec![RetentionMask::all_ones(1, 6)])),
            Err(NonSquarePatchCount(6))
        );
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"tau2d":0.05,"beta":0.5,"seed":3}"#).unwrap();
        let flags = ConfigFlags {
            config: Some(path),
            beta: Some(0.9),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!((c.tau2d, c.beta, c.seed), (0.05, 0.9, Some(3)));
        assert_eq!(c.tau3d, 0.20);
        let pc = c.pruner_config().unwrap();
        assert_eq!(pc.seed, 3);
    }

    #[test]
    fn invalid_config_is_an_error() {
        let c = RunConfig {
            tau2d: 0.3,
            tau3d: 0.2,
            ..Default::default()
        };
        assert!(c.pruner_config().is_err());
    }

    #[test]
    fn unknown_sweep_param() {
        assert!(with_param(&RunConfig::default(), "gamma", 1.0).is_err());
        assert!(with_param(&RunConfig::default(), "k", 2.5).is_err());
        assert_eq!(with_param(&RunConfig::default(), "k", 4.0).unwrap().k, 4);
    }
}
