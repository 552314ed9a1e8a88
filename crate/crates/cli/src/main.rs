//! Command-line pipeline for the power-flow surrogate laboratory.
//!
//! Subcommands: `solve` (AC/DC currents for one case), `gen` (labeled
//! contingency datasets), `train` (fit one surrogate), `eval` (RMSE in
//! Amperes on a dataset), `bench` (surrogate vs AC-solver throughput).
//!
//! Every run is reproducible: all randomness flows from `--seed` (or the
//! config file's seed), and sub-streams are derived from hashed
//! (seed, purpose) labels, so identical invocations write identical files.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 case-file parse error,
//! 3 islanding topology, 4 AC non-convergence, 5 I/O error, 6 too few
//! records to split.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use gridflow::experiment::{benchmark_throughput, EvalOutcome};
use gridflow::neuralnet::{
    model_from_json, model_to_json, Encoding, Hyper, NetError, SurrogateModel, TrainConfig,
};
use gridflow::powerflow::{
    apply_topology, branch_currents, check_connectivity, dc_currents, solve_ac, solve_dc,
    InjectionSample, SolveOptions, Topology,
};
use gridflow::scenario::{
    enumerate_n1, generate_dataset, read_dataset, sample_n2, split_dataset, to_train_data,
    write_dataset, Dataset, ScenarioConfig, ScenarioError,
};
use gridflow::util::fmt_sig9;
use gridflow::{neuralnet, seeds, Grid};

#[derive(Parser)]
#[command(name = "gridflow", version, about = "Power-flow surrogate laboratory", disable_help_subcommand = true)]
struct Cli {
    /// Worker threads for dataset labeling (results are identical for any
    /// value; 1 keeps runs fully sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one case and print per-branch currents (A) as CSV.
    Solve(SolveArgs),
    /// Generate a labeled dataset directory (manifest.json + records.csv).
    Gen(GenArgs),
    /// Train a surrogate model on a dataset.
    Train(TrainArgs),
    /// Evaluate a model's RMSE in Amperes on a dataset.
    Eval(EvalArgs),
    /// Benchmark surrogate inference against the AC solver.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Matpower case file.
    #[arg(long)]
    case: PathBuf,
    /// ac: Newton-Raphson load flow; dc: linear approximation.
    #[arg(long, value_parser = ["ac", "dc"])]
    method: String,
    /// Comma-separated branch indices to disconnect, e.g. `0,7`.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    disconnect: Vec<usize>,
}

#[derive(Args)]
struct GenArgs {
    /// JSON run config (strict schema; unknown keys are rejected).
    #[arg(long)]
    config: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Which contingency set to generate.
    #[arg(long, value_parser = ["n1", "n2"], default_value = "n1")]
    set: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from `gen`.
    #[arg(long)]
    data: PathBuf,
    /// gd | oh | ov | onemodel
    #[arg(long)]
    method: String,
    /// Output model file (curves land next to it as `<stem>.curves.csv`).
    #[arg(long)]
    out: PathBuf,
    /// Root seed for initialization and batch shuffling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Seed of the 50/25/25 split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 64)]
    d_enc: usize,
    #[arg(long, default_value_t = 64)]
    d_shared: usize,
    /// Conditional units per line (guided dropout).
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Required for `onemodel`: `ref` or comma-separated branch indices.
    #[arg(long)]
    topology: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Model file from `train`.
    #[arg(long)]
    model: PathBuf,
    /// Dataset directory from `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Which records to evaluate.
    #[arg(long, value_parser = ["all", "train", "val", "test"], default_value = "all")]
    split: String,
    /// Seed of the 50/25/25 split (must match training's --split-seed).
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Report file; stdout gets a one-line summary either way.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Model file from `train`.
    #[arg(long)]
    model: PathBuf,
    /// Matpower case file the model was trained for.
    #[arg(long)]
    case: PathBuf,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Seconds of timed work per side.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
    /// Optional JSON report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Strict JSON schema of `gen --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    case_path: PathBuf,
    scenario: ScenarioConfig,
    /// Injections per n-2 pair (test-only set).
    #[serde(default = "default_n2_injections")]
    n2_injections_per_topology: usize,
}

fn default_n2_injections() -> usize {
    200
}

// ---------------------------------------------------------------------------
// Error-to-exit-code mapping
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    Usage(String),
    CaseParse(String),
    Islanding(String),
    NotConverged(String),
    Io(String),
    TooFewRecords(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::CaseParse(_) => 2,
            CliError::Islanding(_) => 3,
            CliError::NotConverged(_) => 4,
            CliError::Io(_) => 5,
            CliError::TooFewRecords(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::CaseParse(m)
            | CliError::Islanding(m)
            | CliError::NotConverged(m)
            | CliError::Io(m)
            | CliError::TooFewRecords(m) => m,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::TooFewRecords { .. } => CliError::TooFewRecords(e.to_string()),
            ScenarioError::Io(_) | ScenarioError::Format(_) => CliError::Io(e.to_string()),
            ScenarioError::PowerFlow(ref pf) => pf_error(pf.clone()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn pf_error(e: gridflow::PowerFlowError) -> CliError {
    use gridflow::PowerFlowError as P;
    match e {
        P::DisconnectedGrid => CliError::Islanding(e.to_string()),
        P::NotConverged => CliError::NotConverged(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::ModelFile(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print to stdout and succeed; anything else
            // is a usage error.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if cli.threads > 1 {
        // Per-sample RNG streams are index-derived, so any thread count
        // yields identical results.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    } else {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let result = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_case(path: &Path) -> Result<Grid, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    gridflow::parse_case(&text)
        .map_err(|e| CliError::CaseParse(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let grid = load_case(&args.case)?;
    let topo = Topology::new(args.disconnect.iter().copied());
    topo.validate(grid.n_branches())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    if !check_connectivity(&grid, &topo).connected {
        return Err(CliError::Islanding(format!(
            "disconnecting {:?} islands the grid",
            args.disconnect
        )));
    }
    let applied = apply_topology(&grid, &topo).map_err(pf_error)?;
    let inj = InjectionSample::from_grid(&applied);
    let flows = match args.method.as_str() {
        "ac" => {
            let sol = solve_ac(&applied, &inj, SolveOptions::default()).map_err(pf_error)?;
            if !sol.converged {
                return Err(CliError::NotConverged(format!(
                    "AC solve stopped at mismatch {:.3e} pu after {} iterations",
                    sol.max_mismatch, sol.iterations
                )));
            }
            branch_currents(&applied, &sol).map_err(pf_error)?
        }
        _ => {
            let dc = solve_dc(&applied, &inj).map_err(pf_error)?;
            dc_currents(&applied, &dc.flows_mw).map_err(pf_error)?
        }
    };
    println!("index,from,to,amps");
    for (i, (br, amps)) in applied.branches.iter().zip(&flows.amps).enumerate() {
        println!("{},{},{},{}", i, br.from_bus, br.to_bus, fmt_sig9(*amps));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

fn read_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    cfg.scenario
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let cfg = read_run_config(&args.config)?;
    let grid = load_case(&cfg.case_path)?;
    let case_name = cfg
        .case_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "case".to_string());

    let root = cfg.scenario.seed;
    let (topologies, scenario) = match args.set.as_str() {
        "n2" => {
            let topos = sample_n2(&grid, cfg.scenario.n2_pair_count, root)?;
            let mut sc = cfg.scenario.clone();
            sc.seed = seeds::derive_u64(root, "n2-data", &[]);
            sc.injections_per_topology = cfg.n2_injections_per_topology;
            (topos, sc)
        }
        _ => {
            let mut sc = cfg.scenario.clone();
            sc.seed = seeds::derive_u64(root, "n1-data", &[]);
            (enumerate_n1(&grid), sc)
        }
    };
    let ds = generate_dataset(&grid, &case_name, &topologies, &scenario)?;
    write_dataset(&ds, &args.out)?;
    let kept: usize = ds.manifest.topologies.iter().map(|t| t.kept).sum();
    let skipped: usize = ds.manifest.topologies.iter().map(|t| t.skipped).sum();
    println!(
        "wrote {} records ({} skipped) over {} topologies to {}",
        kept,
        skipped,
        ds.manifest.topologies.len(),
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn parse_topology_flag(raw: &str) -> Result<Topology, CliError> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "ref" || raw == "none" {
        return Ok(Topology::reference());
    }
    let indices: Result<Vec<usize>, _> = raw.split(',').map(|t| t.trim().parse()).collect();
    match indices {
        Ok(ix) => Ok(Topology::new(ix)),
        Err(_) => Err(CliError::Usage(format!(
            "--topology expects `ref` or comma-separated indices, got `{raw}`"
        ))),
    }
}

fn dataset_dims(ds: &Dataset) -> Result<(usize, usize, usize), CliError> {
    match ds.records.first() {
        Some(r) => Ok((
            r.injections.p_gen.len(),
            r.injections.p_load.len(),
            r.label.amps.len(),
        )),
        None => Err(CliError::TooFewRecords("dataset has no records".into())),
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let encoding = match args.method.as_str() {
        "gd" | "guided_dropout" => Encoding::GuidedDropout,
        "oh" | "one_hot" => Encoding::OneHot,
        "ov" | "one_var" => Encoding::OneVar,
        "onemodel" | "one_model" => {
            let Some(raw) = args.topology.as_deref() else {
                return Err(CliError::Usage(
                    "--topology is required for the onemodel method".into(),
                ));
            };
            Encoding::OneModel {
                topology: parse_topology_flag(raw)?,
            }
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method `{other}` (expected gd|oh|ov|onemodel)"
            )))
        }
    };

    let ds = read_dataset(&args.data)?;
    let (n_prod, n_load, n_lines) = dataset_dims(&ds)?;
    let split = split_dataset(&ds, args.split_seed)?;

    // A OneModel network only sees records of its bound topology.
    let filter = |ix: &[usize]| -> Vec<usize> {
        match &encoding {
            Encoding::OneModel { topology } => ix
                .iter()
                .copied()
                .filter(|&i| ds.topology(ds.records[i].topo_id) == *topology)
                .collect(),
            _ => ix.to_vec(),
        }
    };
    let train_ix = filter(&split.train);
    let val_ix = filter(&split.val);
    if train_ix.is_empty() || val_ix.is_empty() {
        return Err(CliError::TooFewRecords(
            "no records for the requested topology in the train/val split".into(),
        ));
    }
    let train_data = to_train_data(&ds, &train_ix);
    let val_data = to_train_data(&ds, &val_ix);

    let hyper = Hyper {
        d_enc: args.d_enc,
        d_shared: args.d_shared,
        k: args.k,
        leaky_slope: 0.01,
    };
    let model = SurrogateModel::<f64>::new(
        encoding,
        hyper,
        n_prod,
        n_load,
        n_lines,
        seeds::derive_u64(args.seed, "model-init", &[]),
    );
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        seed: seeds::derive_u64(args.seed, "train", &[]),
        patience: args.patience,
    };
    let (model, curve) =
        neuralnet::train(model, &train_data, &val_data, &cfg, |_, _| {}).map_err(CliError::from)?;

    std::fs::write(&args.out, model_to_json(&model)).map_err(|e| io_err(&args.out, e))?;
    let curves_path = curves_path_for(&args.out);
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &curve.epochs {
        csv.push_str(&format!(
            "{},{},{}\n",
            e.epoch,
            fmt_sig9(e.train_loss),
            fmt_sig9(e.val_loss)
        ));
    }
    std::fs::write(&curves_path, csv).map_err(|e| io_err(&curves_path, e))?;
    println!(
        "trained {} on {} records: best val loss {} (epoch {}); wrote {} and {}",
        args.method,
        train_data.len(),
        fmt_sig9(curve.best_val_loss),
        curve.best_epoch,
        args.out.display(),
        curves_path.display()
    );
    Ok(())
}

fn curves_path_for(model_path: &Path) -> PathBuf {
    let stem = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    model_path.with_file_name(format!("{stem}.curves.csv"))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct EvalFileReport<'a> {
    model: &'a str,
    data: &'a str,
    split: &'a str,
    records: usize,
    outcome: EvalOutcome,
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.model).map_err(|e| io_err(&args.model, e))?;
    let model = model_from_json(&text)?;
    let ds = read_dataset(&args.data)?;
    let indices: Option<Vec<usize>> = match args.split.as_str() {
        "all" => None,
        part => {
            let split = split_dataset(&ds, args.split_seed)?;
            Some(match part {
                "train" => split.train,
                "val" => split.val,
                _ => split.test,
            })
        }
    };
    let n_records = indices.as_ref().map_or(ds.records.len(), |ix| ix.len());
    let outcome = gridflow::experiment::model_rmse_amps(&model, &ds, indices.as_deref())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match &outcome {
        EvalOutcome::Rmse { amps } => println!("rmse_amps = {}", fmt_sig9(*amps)),
        EvalOutcome::Unsupported { reason } => println!("unsupported: {reason}"),
    }
    if let Some(out) = &args.out {
        let report = EvalFileReport {
            model: &args.model.to_string_lossy(),
            data: &args.data.to_string_lossy(),
            split: &args.split,
            records: n_records,
            outcome,
        };
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(out, json + "\n").map_err(|e| io_err(out, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.model).map_err(|e| io_err(&args.model, e))?;
    let model = model_from_json(&text)?;
    let grid = load_case(&args.case)?;
    let name = args
        .case
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    // 32-bit inference path for the throughput measurement.
    let model32 = model.cast::<f32>();
    let report = benchmark_throughput(&model32, &grid, &name, args.batch, args.duration)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let json = serde_json::to_string_pretty(&report).expect("bench serializes");
    println!("{json}");
    if let Some(out) = &args.out {
        std::fs::write(out, json + "\n").map_err(|e| io_err(out, e))?;
    }
    Ok(())
}
