//! Scenario generation: n-1 topology enumeration, n-2 pair sampling,
//! semi-realistic correlated injection draws, AC labeling, and the on-disk
//! dataset format (`manifest.json` + `records.csv`).
//!
//! Loads follow a two-level lognormal model: one system-wide factor times a
//! per-bus field whose log is spatially correlated along the grid graph
//! (exponential kernel in hop distance). Generators are independently
//! dropped with a configured probability and the survivors dispatch the
//! total load plus a small loss margin proportionally to capacity.
//!
//! Labeling is embarrassingly parallel: each sample's RNG stream is derived
//! from `(seed, topo_id, sample_index)`, so results are identical no matter
//! how work is scheduled.

use std::collections::HashMap;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::linalg::{cholesky, sym_eig};
use crate::neuralnet::{injection_features, TrainData};
use crate::powerflow::{
    apply_topology, branch_currents, check_connectivity, solve_ac, FlowVector, InjectionSample,
    PowerFlowError, SolveOptions, Topology,
};
use crate::seeds;
use crate::util::fmt_sig9;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("requested {requested} n-2 pairs but only {available} keep the grid connected")]
    NotEnoughPairs { requested: usize, available: usize },
    #[error("all generators sampled out of service after 100 attempts")]
    AllGensOut,
    #[error("topology {topo_id} has {count} records, need at least 4 to split")]
    TooFewRecords { topo_id: usize, count: usize },
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub injections_per_topology: usize,
    pub n2_pair_count: usize,
    /// Lognormal sigma of the system-wide load factor.
    pub load_sigma_global: f64,
    /// Per-bus lognormal sigma on top of the global factor.
    pub load_sigma_local: f64,
    /// Graph-distance scale (hops) of the spatial correlation kernel.
    pub correlation_length: f64,
    /// Probability that a non-slack generator is off in a sample.
    pub gen_outage_prob: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            injections_per_topology: 2000,
            n2_pair_count: 50,
            load_sigma_global: 0.1,
            load_sigma_local: 0.2,
            correlation_length: 3.0,
            gen_outage_prob: 0.05,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.load_sigma_global < 0.0 || self.load_sigma_local < 0.0 {
            return Err(ScenarioError::InvalidConfig("sigmas must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.gen_outage_prob) {
            return Err(ScenarioError::InvalidConfig(
                "gen_outage_prob must be in [0, 1]".into(),
            ));
        }
        if self.correlation_length < 0.0 {
            return Err(ScenarioError::InvalidConfig(
                "correlation_length must be >= 0".into(),
            ));
        }
        if self.injections_per_topology < 1 || self.n2_pair_count < 1 {
            return Err(ScenarioError::InvalidConfig("counts must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Topology enumeration
// ---------------------------------------------------------------------------

/// The reference topology first, then one topology per branch whose removal
/// keeps the grid connected, in branch order. Bridges are filtered out.
pub fn enumerate_n1(grid: &Grid) -> Vec<Topology> {
    let mut out = vec![Topology::reference()];
    for b in 0..grid.n_branches() {
        let topo = Topology::single(b);
        if check_connectivity(grid, &topo).connected {
            out.push(topo);
        }
    }
    out
}

/// All unordered branch pairs whose joint removal keeps the grid connected.
pub fn connectivity_safe_pairs(grid: &Grid) -> Vec<(usize, usize)> {
    let n = grid.n_branches();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if check_connectivity(grid, &Topology::new([i, j])).connected {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Sample `count` distinct unordered pairs of disconnected lines, uniform
/// without replacement among connectivity-preserving pairs. Deterministic
/// for a given seed.
pub fn sample_n2(grid: &Grid, count: usize, seed: u64) -> Result<Vec<Topology>, ScenarioError> {
    let mut pairs = connectivity_safe_pairs(grid);
    if count > pairs.len() {
        return Err(ScenarioError::NotEnoughPairs {
            requested: count,
            available: pairs.len(),
        });
    }
    let mut rng = seeds::derive_rng(seed, "n2-pairs", &[]);
    // Partial Fisher-Yates: the first `count` slots become the sample.
    for i in 0..count {
        let j = rng.random_range(i..pairs.len());
        pairs.swap(i, j);
    }
    Ok(pairs[..count]
        .iter()
        .map(|&(a, b)| Topology::new([a, b]))
        .collect())
}

// ---------------------------------------------------------------------------
// Injection sampling
// ---------------------------------------------------------------------------

/// Precomputed sampling state for one grid + config: base loads, power
/// factors, the factored spatial kernel, and dispatchable generator data.
pub struct InjectionSampler {
    cfg: ScenarioConfig,
    base_p: Vec<f64>,
    base_q: Vec<f64>,
    /// Row-major n x n factor L with L L^T = K.
    factor: Vec<f64>,
    n: usize,
    /// Generator slots: (in service, at slack bus).
    gens: Vec<(bool, bool)>,
    p_max: Vec<f64>,
    p_min: Vec<f64>,
    /// First in-service generator at the slack bus, if any.
    slack_gen: Option<usize>,
    n_non_slack_in_service: usize,
}

impl InjectionSampler {
    pub fn new(grid: &Grid, cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let n = grid.n_buses();
        let factor = correlation_factor(grid, cfg.correlation_length);
        let slack = grid.slack_index();
        let index = grid.bus_index();
        let gens: Vec<(bool, bool)> = grid
            .gens
            .iter()
            .map(|g| (g.status, index[&g.bus] == slack))
            .collect();
        let slack_gen = gens.iter().position(|&(on, at_slack)| on && at_slack);
        let n_non_slack_in_service = gens.iter().filter(|&&(on, at)| on && !at).count();
        Ok(Self {
            cfg: cfg.clone(),
            base_p: grid.buses.iter().map(|b| b.p_load).collect(),
            base_q: grid.buses.iter().map(|b| b.q_load).collect(),
            factor,
            n,
            gens,
            p_max: grid.gens.iter().map(|g| g.p_max).collect(),
            p_min: grid.gens.iter().map(|g| g.p_min).collect(),
            slack_gen,
            n_non_slack_in_service,
        })
    }

    /// Draw one sample. Resamples internally (up to 100 times) if the
    /// generator outage draw removes every dispatchable unit.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<InjectionSample, ScenarioError> {
        for _ in 0..100 {
            // System-wide lognormal factor.
            let g: f64 = (self.cfg.load_sigma_global * rng.sample::<f64, _>(StandardNormal)).exp();

            // Spatially correlated per-bus field z = L u.
            let u: Vec<f64> = (0..self.n)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let sl = self.cfg.load_sigma_local;
            let offset = sl * sl / 2.0;
            let mut p_load = vec![0.0; self.n];
            let mut q_load = vec![0.0; self.n];
            for i in 0..self.n {
                let mut z = 0.0;
                for j in 0..self.n {
                    z += self.factor[i * self.n + j] * u[j];
                }
                let f = g * (sl * z - offset).exp();
                p_load[i] = self.base_p[i] * f;
                // Same multiplicative factor on Q keeps the file power
                // factor exactly.
                q_load[i] = self.base_q[i] * f;
            }

            // Independent outages of non-slack units.
            let alive: Vec<bool> = self
                .gens
                .iter()
                .map(|&(on, at_slack)| {
                    if !on {
                        false
                    } else if at_slack {
                        true
                    } else {
                        rng.random::<f64>() >= self.cfg.gen_outage_prob
                    }
                })
                .collect();
            let any_non_slack_alive = self
                .gens
                .iter()
                .zip(&alive)
                .any(|(&(_, at_slack), &a)| a && !at_slack);
            if self.n_non_slack_in_service > 0 && !any_non_slack_alive {
                continue;
            }

            // Proportional dispatch with a 2% loss margin; the slack unit
            // absorbs whatever the clipped dispatch leaves over.
            let target = 1.02 * p_load.iter().sum::<f64>();
            let cap: f64 = alive
                .iter()
                .zip(&self.p_max)
                .filter(|(&a, _)| a)
                .map(|(_, &pm)| pm)
                .sum();
            let mut p_gen = vec![0.0; self.gens.len()];
            if cap > 0.0 {
                for i in 0..p_gen.len() {
                    if alive[i] {
                        p_gen[i] = (target * self.p_max[i] / cap).clamp(self.p_min[i], self.p_max[i]);
                    }
                }
            }
            if let Some(sg) = self.slack_gen {
                let dispatched: f64 = p_gen.iter().sum();
                p_gen[sg] += target - dispatched;
            }
            return Ok(InjectionSample {
                p_gen,
                p_load,
                q_load,
            });
        }
        Err(ScenarioError::AllGensOut)
    }
}

/// One-shot convenience wrapper around [`InjectionSampler`].
pub fn sample_injections(
    grid: &Grid,
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
) -> Result<InjectionSample, ScenarioError> {
    InjectionSampler::new(grid, cfg)?.sample(rng)
}

/// Factor L with L L^T equal to the exponential kernel
/// `K_ij = exp(-d_ij / len)` over hop distances. Cholesky when the kernel is
/// positive definite; otherwise the PSD projection via an eigendecomposition
/// with negative eigenvalues clipped to zero.
fn correlation_factor(grid: &Grid, len: f64) -> Vec<f64> {
    let n = grid.n_buses();
    let mut factor = vec![0.0; n * n];
    if len <= 0.0 {
        for i in 0..n {
            factor[i * n + i] = 1.0;
        }
        return factor;
    }
    let dist = hop_distances(grid);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = match dist[i * n + j] {
                Some(d) => (-(d as f64) / len).exp(),
                None => 0.0,
            };
        }
    }
    if let Some(l) = cholesky(&k, n) {
        return l;
    }
    let (vals, vecs) = sym_eig(&k, n);
    for i in 0..n {
        let s = vals[i].max(0.0).sqrt();
        for r in 0..n {
            factor[r * n + i] = vecs[r * n + i] * s;
        }
    }
    factor
}

/// All-pairs shortest hop distance over in-service branches (BFS per bus).
fn hop_distances(grid: &Grid) -> Vec<Option<usize>> {
    let n = grid.n_buses();
    let index = grid.bus_index();
    let mut adj = vec![Vec::new(); n];
    for br in grid.branches.iter().filter(|b| b.status) {
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut out = vec![None; n * n];
    let mut queue = std::collections::VecDeque::new();
    for s in 0..n {
        queue.clear();
        queue.push_back(s);
        out[s * n + s] = Some(0);
        while let Some(u) = queue.pop_front() {
            let du = out[s * n + u].unwrap();
            for &v in &adj[u] {
                if out[s * n + v].is_none() {
                    out[s * n + v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyEntry {
    pub topo_id: usize,
    pub disconnected: Vec<usize>,
    pub kept: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub case: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub topologies: Vec<TopologyEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub topo_id: usize,
    pub injections: InjectionSample,
    pub label: FlowVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn topology(&self, topo_id: usize) -> Topology {
        Topology::new(self.manifest.topologies[topo_id].disconnected.iter().copied())
    }
}

/// Label `cfg.injections_per_topology` fresh samples per topology with the
/// AC solver. Samples that fail to converge (or hit a numerically singular
/// Jacobian) are skipped and counted in the manifest, never errors.
pub fn generate_dataset(
    grid: &Grid,
    case_name: &str,
    topologies: &[Topology],
    cfg: &ScenarioConfig,
) -> Result<Dataset, ScenarioError> {
    cfg.validate()?;
    for (i, topo) in topologies.iter().enumerate() {
        topo.validate(grid.n_branches())?;
        if !check_connectivity(grid, topo).connected {
            return Err(ScenarioError::InvalidConfig(format!(
                "topology {i} would island the grid"
            )));
        }
    }
    let sampler = InjectionSampler::new(grid, cfg)?;
    let opts = SolveOptions::default();

    let per_topo: Vec<(TopologyEntry, Vec<Record>)> = topologies
        .par_iter()
        .enumerate()
        .map(|(topo_id, topo)| {
            let applied = apply_topology(grid, topo).expect("validated topology");
            let mut kept = Vec::new();
            let mut skipped = 0usize;
            for idx in 0..cfg.injections_per_topology {
                let mut rng = seeds::derive_rng(cfg.seed, "injection", &[topo_id as u64, idx as u64]);
                let Ok(sample) = sampler.sample(&mut rng) else {
                    skipped += 1;
                    continue;
                };
                match solve_ac(&applied, &sample, opts) {
                    Ok(sol) if sol.converged => {
                        let label = branch_currents(&applied, &sol).expect("converged solution");
                        kept.push(Record {
                            topo_id,
                            injections: sample,
                            label,
                        });
                    }
                    _ => skipped += 1,
                }
            }
            let entry = TopologyEntry {
                topo_id,
                disconnected: topo.iter().collect(),
                kept: kept.len(),
                skipped,
            };
            (entry, kept)
        })
        .collect();

    let mut manifest = Manifest {
        case: case_name.to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        topologies: Vec::with_capacity(topologies.len()),
    };
    let mut records = Vec::new();
    for (entry, mut recs) in per_topo {
        manifest.topologies.push(entry);
        records.append(&mut recs);
    }
    Ok(Dataset { manifest, records })
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Record indices of the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle and partition records 50/25/25, stratified per topology so every
/// topology appears in all three splits. Fails if any topology has fewer
/// than 4 records.
pub fn split_dataset(ds: &Dataset, seed: u64) -> Result<Split, ScenarioError> {
    let mut by_topo: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        by_topo.entry(r.topo_id).or_default().push(i);
    }
    let mut topo_ids: Vec<usize> = by_topo.keys().copied().collect();
    topo_ids.sort_unstable();

    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for topo_id in topo_ids {
        let mut idx = by_topo.remove(&topo_id).unwrap();
        if idx.len() < 4 {
            return Err(ScenarioError::TooFewRecords {
                topo_id,
                count: idx.len(),
            });
        }
        let mut rng = seeds::derive_rng(seed, "split", &[topo_id as u64]);
        // Fisher-Yates via the same primitive as n-2 sampling.
        for i in 0..idx.len() {
            let j = rng.random_range(i..idx.len());
            idx.swap(i, j);
        }
        let n_train = idx.len() / 2;
        let n_val = idx.len() / 4;
        split.train.extend(&idx[..n_train]);
        split.val.extend(&idx[n_train..n_train + n_val]);
        split.test.extend(&idx[n_train + n_val..]);
    }
    for (label, part) in [(0u64, &mut split.train), (1, &mut split.val), (2, &mut split.test)] {
        let mut rng = seeds::derive_rng(seed, "split-mix", &[label]);
        for i in 0..part.len() {
            let j = rng.random_range(i..part.len());
            part.swap(i, j);
        }
    }
    Ok(split)
}

/// View records as training data: features are `p_gen ++ p_load`, labels
/// are the current vectors in Amperes.
pub fn to_train_data(ds: &Dataset, indices: &[usize]) -> TrainData<f64> {
    let mut data = TrainData::default();
    for &i in indices {
        let r = &ds.records[i];
        data.features
            .push(injection_features(&r.injections.p_gen, &r.injections.p_load));
        data.labels.push(r.label.amps.clone());
        data.topos.push(ds.topology(r.topo_id));
    }
    data
}

// ---------------------------------------------------------------------------
// Disk format
// ---------------------------------------------------------------------------

/// Write `manifest.json` and `records.csv` into `dir` (created if needed).
/// Floats carry 9 significant digits; row order is generation order, so
/// identical inputs produce byte-identical files.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), ScenarioError> {
    std::fs::create_dir_all(dir)?;
    let manifest = serde_json::to_string_pretty(&ds.manifest)
        .map_err(|e| ScenarioError::Format(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), manifest + "\n")?;

    let file = std::fs::File::create(dir.join("records.csv"))?;
    let mut w = BufWriter::new(file);
    let (n_gen, n_bus, n_branch) = match ds.records.first() {
        Some(r) => (
            r.injections.p_gen.len(),
            r.injections.p_load.len(),
            r.label.amps.len(),
        ),
        None => (0, 0, 0),
    };
    let mut header = vec!["topo_id".to_string()];
    header.extend((0..n_gen).map(|i| format!("pg_{i}")));
    header.extend((0..n_bus).map(|i| format!("pl_{i}")));
    header.extend((0..n_bus).map(|i| format!("ql_{i}")));
    header.extend((0..n_branch).map(|i| format!("amps_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for r in &ds.records {
        let mut row = Vec::with_capacity(header.len());
        row.push(r.topo_id.to_string());
        row.extend(r.injections.p_gen.iter().map(|&v| fmt_sig9(v)));
        row.extend(r.injections.p_load.iter().map(|&v| fmt_sig9(v)));
        row.extend(r.injections.q_load.iter().map(|&v| fmt_sig9(v)));
        row.extend(r.label.amps.iter().map(|&v| fmt_sig9(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, ScenarioError> {
    let manifest_text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| ScenarioError::Format(format!("manifest.json: {e}")))?;

    let csv = std::fs::read_to_string(dir.join("records.csv"))?;
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| ScenarioError::Format("records.csv is empty".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"topo_id") {
        return Err(ScenarioError::Format("first column must be topo_id".into()));
    }
    let count_prefix = |p: &str| cols.iter().filter(|c| c.starts_with(p)).count();
    let n_gen = count_prefix("pg_");
    let n_bus = count_prefix("pl_");
    let n_branch = count_prefix("amps_");
    if count_prefix("ql_") != n_bus {
        return Err(ScenarioError::Format("pl_/ql_ column count mismatch".into()));
    }
    let expected = 1 + n_gen + 2 * n_bus + n_branch;

    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(ScenarioError::Format(format!(
                "row {}: expected {expected} fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, ScenarioError> {
            s.parse()
                .map_err(|_| ScenarioError::Format(format!("row {}: bad float `{s}`", lineno + 2)))
        };
        let topo_id: usize = fields[0]
            .parse()
            .map_err(|_| ScenarioError::Format(format!("row {}: bad topo_id", lineno + 2)))?;
        if topo_id >= manifest.topologies.len() {
            return Err(ScenarioError::Format(format!(
                "row {}: topo_id {topo_id} not in manifest",
                lineno + 2
            )));
        }
        let mut it = fields[1..].iter();
        let mut take = |n: usize| -> Result<Vec<f64>, ScenarioError> {
            it.by_ref().take(n).map(|s| parse(s)).collect()
        };
        records.push(Record {
            topo_id,
            injections: InjectionSample {
                p_gen: take(n_gen)?,
                p_load: take(n_bus)?,
                q_load: take(n_bus)?,
            },
            label: FlowVector { amps: take(n_branch)? },
        });
    }
    Ok(Dataset { manifest, records })
}
