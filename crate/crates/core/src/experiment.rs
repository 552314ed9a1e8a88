//! The comparison harness: train every requested topology encoding on n-1
//! data, evaluate regular generalization (n-1 test split) and
//! super-generalization (n-2 pairs, never trained on) in Amperes, put the DC
//! approximation on the same records, and benchmark inference throughput
//! against the AC solver.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::neuralnet::{
    self, Encoding, Hyper, NetError, SurrogateModel, TrainConfig,
};
use crate::powerflow::{apply_topology, dc_currents, solve_dc, PowerFlowError};
use crate::scenario::{
    enumerate_n1, generate_dataset, sample_n2, split_dataset, to_train_data, Dataset,
    InjectionSampler, ScenarioConfig, ScenarioError, Split,
};
use crate::seeds;
use crate::util::{fmt_sig9, median, quantile};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GuidedDropout,
    OneHot,
    OneVar,
    OneModel,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::GuidedDropout => "guided_dropout",
            Method::OneHot => "one_hot",
            Method::OneVar => "one_var",
            Method::OneModel => "one_model",
        }
    }

    pub fn all() -> [Method; 4] {
        [
            Method::GuidedDropout,
            Method::OneHot,
            Method::OneVar,
            Method::OneModel,
        ]
    }

    /// n-2 evaluation is only defined for encodings that compose
    /// single-line training into multi-line inference.
    pub fn supports_n2(self) -> bool {
        matches!(self, Method::GuidedDropout | Method::OneHot)
    }
}

// ---------------------------------------------------------------------------
// RMSE in Amperes
// ---------------------------------------------------------------------------

/// Result of evaluating a predictor that may not be able to represent the
/// requested topologies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum EvalOutcome {
    Rmse { amps: f64 },
    Unsupported { reason: String },
}

fn record_indices<'a>(ds: &Dataset, indices: Option<&'a [usize]>) -> Vec<usize> {
    match indices {
        Some(ix) => ix.to_vec(),
        None => (0..ds.records.len()).collect(),
    }
}

/// RMSE in raw Amperes of a trained model over dataset records:
/// `sqrt(mean over records and branches of (pred - label)^2)`.
pub fn model_rmse_amps(
    model: &SurrogateModel<f64>,
    ds: &Dataset,
    indices: Option<&[usize]>,
) -> Result<EvalOutcome, ExperimentError> {
    let ix = record_indices(ds, indices);
    if ix.is_empty() {
        return Err(ExperimentError::EmptySplit);
    }
    // Capability check up front so an unsupported split is a marker, not an
    // error deep inside the loop.
    for &i in &ix {
        let topo = ds.topology(ds.records[i].topo_id);
        match &model.encoding {
            Encoding::OneVar if topo.len() > 1 => {
                return Ok(EvalOutcome::Unsupported {
                    reason: "one_var encodes a single disconnected line".into(),
                })
            }
            Encoding::OneModel { topology } if *topology != topo => {
                return Ok(EvalOutcome::Unsupported {
                    reason: "one_model answers only the topology it was trained for".into(),
                })
            }
            _ => {}
        }
    }
    let mut ws = model.workspace();
    let mut sse = 0.0;
    let mut count = 0usize;
    for &i in &ix {
        let r = &ds.records[i];
        let topo = ds.topology(r.topo_id);
        let x = neuralnet::injection_features(&r.injections.p_gen, &r.injections.p_load);
        let pred = model.predict_amps(&x, &topo, &mut ws)?;
        for (p, t) in pred.amps.iter().zip(&r.label.amps) {
            let d = p - t;
            sse += d * d;
        }
        count += r.label.amps.len();
    }
    Ok(EvalOutcome::Rmse {
        amps: (sse / count as f64).sqrt(),
    })
}

/// RMSE in Amperes of the DC approximation over dataset records: each record
/// is solved on its topology-applied grid and converted to currents at 1 pu
/// voltage.
pub fn dc_rmse_amps(
    grid: &Grid,
    ds: &Dataset,
    indices: Option<&[usize]>,
) -> Result<f64, ExperimentError> {
    let ix = record_indices(ds, indices);
    if ix.is_empty() {
        return Err(ExperimentError::EmptySplit);
    }
    let mut applied: HashMap<usize, Grid> = HashMap::new();
    let mut sse = 0.0;
    let mut count = 0usize;
    for &i in &ix {
        let r = &ds.records[i];
        let g = match applied.entry(r.topo_id) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(apply_topology(grid, &ds.topology(r.topo_id))?)
            }
        };
        let dc = solve_dc(g, &r.injections)?;
        let pred = dc_currents(g, &dc.flows_mw)?;
        for (p, t) in pred.amps.iter().zip(&r.label.amps) {
            let d = p - t;
            sse += d * d;
        }
        count += r.label.amps.len();
    }
    Ok((sse / count as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub case: String,
    pub scenario: ScenarioConfig,
    /// Injections per n-2 pair (the n-2 set is test-only).
    pub n2_injections_per_topology: usize,
    pub methods: Vec<Method>,
    /// Training seeds; quantiles are taken across them.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
    pub hyper: Hyper,
}

impl ExperimentConfig {
    /// Desk-scale defaults mirroring the protocol's shape.
    pub fn desk_scale(case: &str) -> Self {
        Self {
            case: case.to_string(),
            scenario: ScenarioConfig::default(),
            n2_injections_per_topology: 200,
            methods: Method::all().to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            train: TrainConfig::default(),
            hyper: Hyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Per-seed values in `seeds` order (kept runs only).
    pub per_seed: Vec<f64>,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl MetricSummary {
    fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN metric"));
        Self {
            per_seed: values.to_vec(),
            median: quantile(&sorted, 0.5),
            q25: quantile(&sorted, 0.25),
            q75: quantile(&sorted, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// RMSE in Amperes on the n-1 test split at this epoch.
    pub n1_rmse_amps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub n1: MetricSummary,
    /// `None` when the encoding cannot answer n-2 topologies.
    pub n2: Option<MetricSummary>,
    /// RMSE restricted to reference-topology test records.
    pub ref_topo: MetricSummary,
    pub curves: Vec<SeedCurve>,
    /// Seeds dropped by the convergence filter (final train loss more than
    /// 10x the median across seeds).
    pub discarded_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcBaseline {
    pub n1_rmse_amps: f64,
    pub n2_rmse_amps: f64,
    pub ref_topo_rmse_amps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    pub n1_records: usize,
    pub n2_records: usize,
    pub split_sizes: (usize, usize, usize),
    pub methods: Vec<MethodReport>,
    pub dc: DcBaseline,
}

struct RunOutput {
    n1_rmse: f64,
    n2_rmse: Option<f64>,
    ref_rmse: f64,
    curve: SeedCurve,
    final_train_loss: f64,
}

/// Generate the datasets, train every requested method across all seeds,
/// evaluate against the DC baseline on identical records, and aggregate
/// 25/75% quantiles. Deterministic for a fixed config (the n-2 set is used
/// for testing only).
pub fn run_experiment(grid: &Grid, cfg: &ExperimentConfig) -> Result<EvalReport, ExperimentError> {
    let root = cfg.scenario.seed;

    let n1_topos = enumerate_n1(grid);
    let mut n1_cfg = cfg.scenario.clone();
    n1_cfg.seed = seeds::derive_u64(root, "n1-data", &[]);
    let n1_ds = generate_dataset(grid, &cfg.case, &n1_topos, &n1_cfg)?;

    let n2_topos = sample_n2(grid, cfg.scenario.n2_pair_count, root)?;
    let mut n2_cfg = cfg.scenario.clone();
    n2_cfg.seed = seeds::derive_u64(root, "n2-data", &[]);
    n2_cfg.injections_per_topology = cfg.n2_injections_per_topology;
    let n2_ds = generate_dataset(grid, &cfg.case, &n2_topos, &n2_cfg)?;

    let split = split_dataset(&n1_ds, seeds::derive_u64(root, "split", &[]))?;
    let report = evaluate_methods(grid, cfg, &n1_ds, &split, &n2_ds)?;
    Ok(report)
}

/// The training/evaluation half of [`run_experiment`], reusable with
/// pre-generated datasets.
pub fn evaluate_methods(
    grid: &Grid,
    cfg: &ExperimentConfig,
    n1_ds: &Dataset,
    split: &Split,
    n2_ds: &Dataset,
) -> Result<EvalReport, ExperimentError> {
    let ref_test_ix: Vec<usize> = split
        .test
        .iter()
        .copied()
        .filter(|&i| n1_ds.records[i].topo_id == 0)
        .collect();

    // Independent (method, seed) runs; deterministic output order.
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let outputs: Vec<Result<RunOutput, ExperimentError>> = jobs
        .par_iter()
        .map(|&(method, seed)| run_one(grid, cfg, n1_ds, split, n2_ds, &ref_test_ix, method, seed))
        .collect();

    let mut methods = Vec::new();
    for &method in &cfg.methods {
        let mut runs: Vec<(u64, &RunOutput)> = Vec::new();
        for (job, out) in jobs.iter().zip(outputs.iter()) {
            if job.0 != method {
                continue;
            }
            match out {
                Ok(r) => runs.push((job.1, r)),
                Err(e) => {
                    return Err(ExperimentError::Net(NetError::ShapeMismatch(format!(
                        "run {} seed {} failed: {e}",
                        method.name(),
                        job.1
                    ))))
                }
            }
        }

        // Convergence filter: drop runs whose final train loss is an order
        // of magnitude above the median for this method.
        let finals: Vec<f64> = runs.iter().map(|(_, r)| r.final_train_loss).collect();
        let med = median(&finals);
        let kept: Vec<&(u64, &RunOutput)> = runs
            .iter()
            .filter(|(_, r)| r.final_train_loss <= 10.0 * med)
            .collect();
        let discarded_seeds: Vec<u64> = runs
            .iter()
            .filter(|(_, r)| r.final_train_loss > 10.0 * med)
            .map(|(s, _)| *s)
            .collect();
        let kept = if kept.is_empty() { runs.iter().collect() } else { kept };

        let n1_vals: Vec<f64> = kept.iter().map(|(_, r)| r.n1_rmse).collect();
        let ref_vals: Vec<f64> = kept.iter().map(|(_, r)| r.ref_rmse).collect();
        let n2_vals: Option<Vec<f64>> = kept
            .iter()
            .map(|(_, r)| r.n2_rmse)
            .collect::<Option<Vec<f64>>>();

        methods.push(MethodReport {
            method,
            n1: MetricSummary::from_values(&n1_vals),
            n2: n2_vals.map(|v| MetricSummary::from_values(&v)),
            ref_topo: MetricSummary::from_values(&ref_vals),
            curves: runs.iter().map(|(_, r)| r.curve.clone()).collect(),
            discarded_seeds,
        });
    }

    let dc = DcBaseline {
        n1_rmse_amps: dc_rmse_amps(grid, n1_ds, Some(&split.test))?,
        n2_rmse_amps: dc_rmse_amps(grid, n2_ds, None)?,
        ref_topo_rmse_amps: dc_rmse_amps(grid, n1_ds, Some(&ref_test_ix))?,
    };

    Ok(EvalReport {
        config: cfg.clone(),
        n1_records: n1_ds.records.len(),
        n2_records: n2_ds.records.len(),
        split_sizes: (split.train.len(), split.val.len(), split.test.len()),
        methods,
        dc,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    grid: &Grid,
    cfg: &ExperimentConfig,
    n1_ds: &Dataset,
    split: &Split,
    n2_ds: &Dataset,
    ref_test_ix: &[usize],
    method: Method,
    seed: u64,
) -> Result<RunOutput, ExperimentError> {
    let n_prod = grid.n_gens();
    let n_load = grid.n_buses();
    let n_lines = grid.n_branches();

    match method {
        Method::OneModel => {
            // One dedicated network per n-1 topology, each trained and
            // standardized on its own records.
            let topo_ids: Vec<usize> = n1_ds.manifest.topologies.iter().map(|t| t.topo_id).collect();
            let mut models: HashMap<usize, SurrogateModel<f64>> = HashMap::new();
            let mut curve = SeedCurve { seed, points: Vec::new() };
            let mut final_losses = Vec::new();
            for topo_id in topo_ids {
                let only = |ix: &[usize]| -> Vec<usize> {
                    ix.iter()
                        .copied()
                        .filter(|&i| n1_ds.records[i].topo_id == topo_id)
                        .collect()
                };
                let train_ix = only(&split.train);
                let val_ix = only(&split.val);
                if train_ix.is_empty() || val_ix.is_empty() {
                    continue;
                }
                let topology = n1_ds.topology(topo_id);
                let model = SurrogateModel::new(
                    Encoding::OneModel { topology },
                    cfg.hyper.clone(),
                    n_prod,
                    n_load,
                    n_lines,
                    seeds::derive_u64(seed, "model", &[method_tag(method), topo_id as u64]),
                );
                let mut tc = cfg.train;
                tc.seed = seeds::derive_u64(seed, "train", &[method_tag(method), topo_id as u64]);
                let train_data = to_train_data(n1_ds, &train_ix);
                let val_data = to_train_data(n1_ds, &val_ix);
                let is_ref = topo_id == 0;
                let mut points = Vec::new();
                let (model, curve_part) = neuralnet::train(
                    model,
                    &train_data,
                    &val_data,
                    &tc,
                    |m, stats| {
                        if is_ref {
                            let rmse = match model_rmse_amps(m, n1_ds, Some(ref_test_ix)) {
                                Ok(EvalOutcome::Rmse { amps }) => amps,
                                _ => f64::NAN,
                            };
                            points.push(CurvePoint {
                                epoch: stats.epoch,
                                train_loss: stats.train_loss,
                                val_loss: stats.val_loss,
                                n1_rmse_amps: rmse,
                            });
                        }
                    },
                )?;
                if is_ref {
                    curve.points = points;
                }
                final_losses.push(curve_part.epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN));
                models.insert(topo_id, model);
            }

            // Route each test record to its topology's network.
            let n1_rmse = routed_rmse(&models, n1_ds, &split.test)?;
            let ref_rmse = routed_rmse(&models, n1_ds, ref_test_ix)?;
            let final_train_loss = final_losses.iter().sum::<f64>() / final_losses.len().max(1) as f64;
            Ok(RunOutput {
                n1_rmse,
                n2_rmse: None,
                ref_rmse,
                curve,
                final_train_loss,
            })
        }
        _ => {
            let encoding = match method {
                Method::GuidedDropout => Encoding::GuidedDropout,
                Method::OneHot => Encoding::OneHot,
                Method::OneVar => Encoding::OneVar,
                Method::OneModel => unreachable!(),
            };
            let model = SurrogateModel::new(
                encoding,
                cfg.hyper.clone(),
                n_prod,
                n_load,
                n_lines,
                seeds::derive_u64(seed, "model", &[method_tag(method)]),
            );
            let mut tc = cfg.train;
            tc.seed = seeds::derive_u64(seed, "train", &[method_tag(method)]);
            let train_data = to_train_data(n1_ds, &split.train);
            let val_data = to_train_data(n1_ds, &split.val);
            let mut points = Vec::new();
            let (model, curve_part) = neuralnet::train(
                model,
                &train_data,
                &val_data,
                &tc,
                |m, stats| {
                    let rmse = match model_rmse_amps(m, n1_ds, Some(&split.test)) {
                        Ok(EvalOutcome::Rmse { amps }) => amps,
                        _ => f64::NAN,
                    };
                    points.push(CurvePoint {
                        epoch: stats.epoch,
                        train_loss: stats.train_loss,
                        val_loss: stats.val_loss,
                        n1_rmse_amps: rmse,
                    });
                },
            )?;

            let n1_rmse = match model_rmse_amps(&model, n1_ds, Some(&split.test))? {
                EvalOutcome::Rmse { amps } => amps,
                EvalOutcome::Unsupported { .. } => unreachable!("n-1 split is single-line"),
            };
            let ref_rmse = match model_rmse_amps(&model, n1_ds, Some(ref_test_ix))? {
                EvalOutcome::Rmse { amps } => amps,
                EvalOutcome::Unsupported { .. } => unreachable!(),
            };
            let n2_rmse = if method.supports_n2() {
                match model_rmse_amps(&model, n2_ds, None)? {
                    EvalOutcome::Rmse { amps } => Some(amps),
                    EvalOutcome::Unsupported { .. } => None,
                }
            } else {
                None
            };
            let final_train_loss = curve_part
                .epochs
                .last()
                .map(|e| e.train_loss)
                .unwrap_or(f64::NAN);
            Ok(RunOutput {
                n1_rmse,
                n2_rmse,
                ref_rmse,
                curve: SeedCurve { seed, points },
                final_train_loss,
            })
        }
    }
}

fn method_tag(m: Method) -> u64 {
    match m {
        Method::GuidedDropout => 0,
        Method::OneHot => 1,
        Method::OneVar => 2,
        Method::OneModel => 3,
    }
}

fn routed_rmse(
    models: &HashMap<usize, SurrogateModel<f64>>,
    ds: &Dataset,
    indices: &[usize],
) -> Result<f64, ExperimentError> {
    if indices.is_empty() {
        return Err(ExperimentError::EmptySplit);
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    let mut workspaces: HashMap<usize, _> = HashMap::new();
    for &i in indices {
        let r = &ds.records[i];
        let Some(model) = models.get(&r.topo_id) else {
            continue;
        };
        let ws = workspaces
            .entry(r.topo_id)
            .or_insert_with(|| model.workspace());
        let topo = ds.topology(r.topo_id);
        let x = neuralnet::injection_features(&r.injections.p_gen, &r.injections.p_load);
        let pred = model.predict_amps(&x, &topo, ws)?;
        for (p, t) in pred.amps.iter().zip(&r.label.amps) {
            let d = p - t;
            sse += d * d;
        }
        count += r.label.amps.len();
    }
    if count == 0 {
        return Err(ExperimentError::EmptySplit);
    }
    Ok((sse / count as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Throughput benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub grid: String,
    pub batch_size: usize,
    pub nn_flows_per_sec: f64,
    pub ac_solves_per_sec: f64,
    pub speedup: f64,
}

/// Wall-clock throughput of batched 32-bit surrogate inference versus
/// sequential AC solves on identical pre-materialized inputs. Both sides are
/// warmed up before timing.
pub fn benchmark_throughput(
    model: &SurrogateModel<f32>,
    grid: &Grid,
    grid_name: &str,
    batch: usize,
    duration_secs: f64,
) -> Result<BenchReport, ExperimentError> {
    let batch = batch.max(1);
    let scenario = ScenarioConfig::default();
    let sampler = InjectionSampler::new(grid, &scenario)?;
    let topos = enumerate_n1(grid);

    // Pre-materialize inputs in memory, cycling through the n-1 topologies.
    let pool = 2048.max(batch);
    let mut samples = Vec::with_capacity(pool);
    for i in 0..pool {
        let mut rng = seeds::derive_rng(0xBE7C4, "bench-inputs", &[i as u64]);
        samples.push(sampler.sample(&mut rng)?);
    }
    let features: Vec<Vec<f32>> = samples
        .iter()
        .map(|s| {
            neuralnet::injection_features(&s.p_gen, &s.p_load)
                .iter()
                .map(|&v| v as f32)
                .collect()
        })
        .collect();
    let applied: Vec<Grid> = topos
        .iter()
        .map(|t| apply_topology(grid, t).expect("n-1 topology"))
        .collect();

    let mut ws = model.workspace();
    let mut out = vec![0.0; model.n_lines];
    let mut sink = 0.0f64;

    // Time-based warmup, then the timed batched NN pass.
    let mut run_nn = |duration: f64, sink: &mut f64| -> Result<(usize, f64), ExperimentError> {
        let t0 = Instant::now();
        let mut count = 0usize;
        'outer: loop {
            for start in (0..pool).step_by(batch) {
                let end = (start + batch).min(pool);
                for i in start..end {
                    let topo = &topos[i % topos.len()];
                    model.predict_amps_into(&features[i], topo, &mut ws, &mut out)?;
                    *sink += out[0];
                }
                count += end - start;
                if t0.elapsed().as_secs_f64() >= duration {
                    break 'outer;
                }
            }
        }
        Ok((count, t0.elapsed().as_secs_f64()))
    };
    run_nn((duration_secs * 0.25).max(0.02), &mut sink)?;
    let (nn_count, nn_secs) = run_nn(duration_secs, &mut sink)?;
    std::hint::black_box(sink);

    // Same treatment for sequential AC solves on the same inputs.
    let opts = crate::powerflow::SolveOptions::default();
    let run_ac = |duration: f64| -> Result<(usize, f64), ExperimentError> {
        let t0 = Instant::now();
        let mut count = 0usize;
        'outer: loop {
            for i in 0..pool {
                let g = &applied[i % applied.len()];
                let sol = crate::powerflow::solve_ac(g, &samples[i], opts)?;
                std::hint::black_box(sol.iterations);
                count += 1;
                if t0.elapsed().as_secs_f64() >= duration {
                    break 'outer;
                }
            }
        }
        Ok((count, t0.elapsed().as_secs_f64()))
    };
    run_ac((duration_secs * 0.25).max(0.02))?;
    let (ac_count, ac_secs) = run_ac(duration_secs)?;

    let nn_rate = nn_count as f64 / nn_secs;
    let ac_rate = ac_count as f64 / ac_secs;
    Ok(BenchReport {
        grid: grid_name.to_string(),
        batch_size: batch,
        nn_flows_per_sec: nn_rate,
        ac_solves_per_sec: ac_rate,
        speedup: nn_rate / ac_rate,
    })
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

/// Write `report.json`, `curves.csv` and `summary.md` into `dir`.
pub fn emit_report(report: &EvalReport, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json + "\n")?;

    let mut csv = String::from("epoch,method,seed,train_loss,val_loss,n1_rmse_amps\n");
    for m in &report.methods {
        for curve in &m.curves {
            for p in &curve.points {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    p.epoch,
                    m.method.name(),
                    curve.seed,
                    fmt_sig9(p.train_loss),
                    fmt_sig9(p.val_loss),
                    fmt_sig9(p.n1_rmse_amps),
                ));
            }
        }
    }
    std::fs::write(dir.join("curves.csv"), csv)?;

    let mut md = String::new();
    md.push_str(&format!("# Surrogate comparison: {}\n\n", report.config.case));
    md.push_str(&format!(
        "n-1 records: {} (train/val/test {}/{}/{}), n-2 test records: {}\n\n",
        report.n1_records,
        report.split_sizes.0,
        report.split_sizes.1,
        report.split_sizes.2,
        report.n2_records
    ));
    md.push_str("| method | n-1 test RMSE (A) | n-2 test RMSE (A) | reference-topology RMSE (A) |\n");
    md.push_str("|---|---|---|---|\n");
    let fmt_summary =
        |s: &MetricSummary| format!("{:.2} [{:.2}, {:.2}]", s.median, s.q25, s.q75);
    for m in &report.methods {
        md.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            m.method.name(),
            fmt_summary(&m.n1),
            m.n2.as_ref().map_or("unsupported".to_string(), |s| fmt_summary(s)),
            fmt_summary(&m.ref_topo),
        ));
    }
    md.push_str(&format!(
        "| dc | {:.2} | {:.2} | {:.2} |\n",
        report.dc.n1_rmse_amps, report.dc.n2_rmse_amps, report.dc.ref_topo_rmse_amps
    ));
    let mut f = std::fs::File::create(dir.join("summary.md"))?;
    f.write_all(md.as_bytes())?;
    Ok(())
}

/// Write a bench report as JSON.
pub fn emit_bench_report(report: &BenchReport, path: &Path) -> Result<(), ExperimentError> {
    let json = serde_json::to_string_pretty(report).expect("bench report serializes");
    std::fs::write(path, json + "\n")?;
    Ok(())
}
