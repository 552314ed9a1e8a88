//! Ground-truth physics: bus admittance assembly, full AC Newton-Raphson
//! load flow, the DC linear approximation, and conversion of flows to line
//! currents in Amperes.
//!
//! Everything here is pure and deterministic: identical inputs give
//! bit-identical solutions, and values are safe to share across threads.

use std::collections::BTreeSet;

use num_complex::Complex64;

use crate::grid::{BusKind, Grid};
use crate::linalg::{lu_solve, LuFactors};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerFlowError {
    #[error("branch index {index} out of range for {len} branches")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("in-service branch {branch} has zero impedance")]
    ZeroImpedanceBranch { branch: usize },
    #[error("grid is not connected under the given topology")]
    DisconnectedGrid,
    #[error("Newton-Raphson Jacobian is singular")]
    SingularJacobian,
    #[error("DC susceptance matrix is singular")]
    SingularMatrix,
    #[error("AC solution did not converge")]
    NotConverged,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A set of disconnected branches, by 0-based position in `Grid::branches`.
#[derive(Debug, Clone, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct Topology {
    disconnected: BTreeSet<usize>,
}

impl Topology {
    /// The reference topology: every branch in service.
    pub fn reference() -> Self {
        Self::default()
    }

    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        Self {
            disconnected: indices.into_iter().collect(),
        }
    }

    pub fn single(index: usize) -> Self {
        Self::new([index])
    }

    pub fn is_reference(&self) -> bool {
        self.disconnected.is_empty()
    }

    pub fn len(&self) -> usize {
        self.disconnected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.disconnected.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.disconnected.contains(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.disconnected.iter().copied()
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            disconnected: self.disconnected.union(&other.disconnected).copied().collect(),
        }
    }

    pub fn validate(&self, n_branches: usize) -> Result<(), PowerFlowError> {
        match self.disconnected.iter().find(|&&i| i >= n_branches) {
            Some(&index) => Err(PowerFlowError::IndexOutOfRange {
                index,
                len: n_branches,
            }),
            None => Ok(()),
        }
    }
}

/// One scenario's inputs: per-gen active setpoints and per-bus loads.
/// `p_gen` is indexed like `Grid::gens`; entries for out-of-service
/// generators are ignored by the solvers and are 0 by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSample {
    /// Active generation per gen, MW.
    pub p_gen: Vec<f64>,
    /// Active load per bus, MW.
    pub p_load: Vec<f64>,
    /// Reactive load per bus, MVAr.
    pub q_load: Vec<f64>,
}

impl InjectionSample {
    /// The injections recorded in the case file itself.
    pub fn from_grid(grid: &Grid) -> Self {
        Self {
            p_gen: grid
                .gens
                .iter()
                .map(|g| if g.status { g.p_gen } else { 0.0 })
                .collect(),
            p_load: grid.buses.iter().map(|b| b.p_load).collect(),
            q_load: grid.buses.iter().map(|b| b.q_load).collect(),
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<(), PowerFlowError> {
        if self.p_gen.len() != grid.n_gens()
            || self.p_load.len() != grid.n_buses()
            || self.q_load.len() != grid.n_buses()
        {
            return Err(PowerFlowError::ShapeMismatch(format!(
                "injections sized ({}, {}, {}) for a grid with {} gens and {} buses",
                self.p_gen.len(),
                self.p_load.len(),
                self.q_load.len(),
                grid.n_gens(),
                grid.n_buses()
            )));
        }
        if self
            .p_load
            .iter()
            .chain(&self.q_load)
            .chain(&self.p_gen)
            .any(|v| !v.is_finite())
        {
            return Err(PowerFlowError::ShapeMismatch("injections must be finite".into()));
        }
        let total_gen: f64 = self.p_gen.iter().sum();
        if total_gen < 0.0 {
            return Err(PowerFlowError::ShapeMismatch(format!(
                "total generation must be non-negative, got {total_gen} MW"
            )));
        }
        Ok(())
    }
}

/// Polar-voltage AC solution.
#[derive(Debug, Clone, PartialEq)]
pub struct AcSolution {
    /// Voltage magnitude per bus, pu.
    pub vm: Vec<f64>,
    /// Voltage angle per bus, radians.
    pub va: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Worst power-balance residual, pu.
    pub max_mismatch: f64,
}

/// Current magnitude per branch at the from end, Amperes. Disconnected
/// branches carry exactly 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowVector {
    pub amps: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Convergence tolerance on the worst mismatch, pu.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Return a copy of the grid with the topology's branches switched out.
/// The input grid is untouched.
pub fn apply_topology(grid: &Grid, topo: &Topology) -> Result<Grid, PowerFlowError> {
    topo.validate(grid.n_branches())?;
    let mut out = grid.clone();
    for i in topo.iter() {
        out.branches[i].status = false;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Connectivity {
    pub connected: bool,
    pub components: usize,
}

/// Union-find connectivity over in-service branches, with the topology's
/// branches additionally removed.
pub fn check_connectivity(grid: &Grid, topo: &Topology) -> Connectivity {
    let n = grid.n_buses();
    let index = grid.bus_index();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (b, br) in grid.branches.iter().enumerate() {
        if !br.status || topo.contains(b) {
            continue;
        }
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let (rf, rt) = (find(&mut parent, f), find(&mut parent, t));
        if rf != rt {
            parent[rf] = rt;
        }
    }
    let mut roots = BTreeSet::new();
    for i in 0..n {
        let r = find(&mut parent, i);
        roots.insert(r);
    }
    Connectivity {
        connected: roots.len() <= 1,
        components: roots.len(),
    }
}

/// Per-branch pi-model admittances (Matpower convention): with series
/// admittance `y = 1/(r+jx)`, charging `b`, and complex tap `t = tap *
/// exp(j*shift)`,
///
/// ```text
/// yff = (y + j*b/2) / |t|^2      yft = -y / conj(t)
/// ytf = -y / t                   ytt =  y + j*b/2
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

/// Dense complex bus-admittance matrix plus the per-branch stamps it was
/// assembled from.
#[derive(Debug, Clone)]
pub struct YBus {
    pub n: usize,
    matrix: Vec<Complex64>,
    /// `None` for out-of-service branches.
    pub branch: Vec<Option<BranchAdmittance>>,
}

impl YBus {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[i * self.n + j]
    }

    pub fn mul(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut out = vec![Complex64::ZERO; n];
        for i in 0..n {
            let row = &self.matrix[i * n..(i + 1) * n];
            let mut acc = Complex64::ZERO;
            for (y, x) in row.iter().zip(v) {
                acc += y * x;
            }
            out[i] = acc;
        }
        out
    }
}

/// Assemble the bus admittance matrix from in-service branches and bus
/// shunts (shunts scaled by 1/base_mva).
pub fn build_ybus(grid: &Grid) -> Result<YBus, PowerFlowError> {
    let n = grid.n_buses();
    let index = grid.bus_index();
    let mut m = vec![Complex64::ZERO; n * n];
    let mut stamps = Vec::with_capacity(grid.n_branches());
    for (b, br) in grid.branches.iter().enumerate() {
        if !br.status {
            stamps.push(None);
            continue;
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(PowerFlowError::ZeroImpedanceBranch { branch: b });
        }
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let ytt = ys + Complex64::new(0.0, br.b_charging / 2.0);
        let tap = Complex64::from_polar(br.tap, br.shift_deg.to_radians());
        let yff = ytt / (br.tap * br.tap);
        let yft = -ys / tap.conj();
        let ytf = -ys / tap;
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        m[f * n + f] += yff;
        m[f * n + t] += yft;
        m[t * n + f] += ytf;
        m[t * n + t] += ytt;
        stamps.push(Some(BranchAdmittance { yff, yft, ytf, ytt }));
    }
    for (i, bus) in grid.buses.iter().enumerate() {
        m[i * n + i] += Complex64::new(bus.g_shunt, bus.b_shunt) / grid.base_mva;
    }
    Ok(YBus {
        n,
        matrix: m,
        branch: stamps,
    })
}

/// Bus classification for the solve: PV buses with no in-service generator
/// are demoted to PQ.
pub(crate) fn bus_types(grid: &Grid) -> (usize, Vec<usize>, Vec<usize>) {
    let gens_by_bus = grid.gens_by_bus();
    let mut slack = usize::MAX;
    let mut pv = Vec::new();
    let mut pq = Vec::new();
    for (i, bus) in grid.buses.iter().enumerate() {
        match bus.kind {
            BusKind::Slack => slack = i,
            BusKind::Pv if gens_by_bus.contains_key(&i) => pv.push(i),
            _ => pq.push(i),
        }
    }
    (slack, pv, pq)
}

/// Net complex power injection targets per bus, pu. Slack entries carry the
/// (ignored) file dispatch.
fn injection_targets(grid: &Grid, inj: &InjectionSample) -> (Vec<f64>, Vec<f64>) {
    let n = grid.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        p[i] -= inj.p_load[i] / grid.base_mva;
        q[i] -= inj.q_load[i] / grid.base_mva;
    }
    let index = grid.bus_index();
    for (g, gen) in grid.gens.iter().enumerate() {
        if !gen.status {
            continue;
        }
        let i = index[&gen.bus];
        p[i] += inj.p_gen[g] / grid.base_mva;
        q[i] += gen.q_gen / grid.base_mva;
    }
    (p, q)
}

/// Voltage setpoint per bus: the first in-service generator's setpoint, or
/// 1.0 where no generator regulates.
fn voltage_setpoints(grid: &Grid) -> Vec<f64> {
    let gens_by_bus = grid.gens_by_bus();
    (0..grid.n_buses())
        .map(|i| match gens_by_bus.get(&i) {
            Some(gens) => grid.gens[gens[0]].v_setpoint,
            None => 1.0,
        })
        .collect()
}

/// Full Newton-Raphson AC load flow in polar coordinates, flat start.
/// Non-convergence within `opts.max_iter` returns `converged = false` with
/// the last iterate rather than an error.
pub fn solve_ac(grid: &Grid, inj: &InjectionSample, opts: SolveOptions) -> Result<AcSolution, PowerFlowError> {
    inj.validate(grid)?;
    if !check_connectivity(grid, &Topology::reference()).connected {
        return Err(PowerFlowError::DisconnectedGrid);
    }
    let ybus = build_ybus(grid)?;
    let n = grid.n_buses();
    let (slack, pv, pq) = bus_types(grid);
    debug_assert_ne!(slack, usize::MAX);
    let (p_spec, q_spec) = injection_targets(grid, inj);
    let vset = voltage_setpoints(grid);

    // Flat start: angles 0 everywhere, magnitude 1 at PQ, setpoint at PV/slack.
    let mut vm: Vec<f64> = (0..n)
        .map(|i| match grid.buses[i].kind {
            BusKind::Pq => 1.0,
            _ => vset[i],
        })
        .collect();
    // Demoted PV buses start at 1.0 like any PQ bus.
    for &i in &pq {
        vm[i] = 1.0;
    }
    let mut va = vec![0.0; n];

    let pvpq: Vec<usize> = pv.iter().chain(pq.iter()).copied().collect();
    let n_unknowns = pvpq.len() + pq.len();

    let mut p_calc = vec![0.0; n];
    let mut q_calc = vec![0.0; n];
    let calc = |vm: &[f64], va: &[f64], p_calc: &mut [f64], q_calc: &mut [f64]| {
        for i in 0..n {
            let mut pi = 0.0;
            let mut qi = 0.0;
            for j in 0..n {
                let y = ybus.at(i, j);
                if y == Complex64::ZERO {
                    continue;
                }
                let th = va[i] - va[j];
                let (sin, cos) = th.sin_cos();
                pi += vm[j] * (y.re * cos + y.im * sin);
                qi += vm[j] * (y.re * sin - y.im * cos);
            }
            p_calc[i] = vm[i] * pi;
            q_calc[i] = vm[i] * qi;
        }
    };
    let mismatch = |p_calc: &[f64], q_calc: &[f64], f: &mut [f64]| {
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = p_spec[i] - p_calc[i];
        }
        for (k, &i) in pq.iter().enumerate() {
            f[pvpq.len() + k] = q_spec[i] - q_calc[i];
        }
    };

    let mut f = vec![0.0; n_unknowns];
    calc(&vm, &va, &mut p_calc, &mut q_calc);
    mismatch(&p_calc, &q_calc, &mut f);
    let mut max_mismatch = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut iterations = 0;

    while max_mismatch > opts.tolerance && iterations < opts.max_iter {
        // Polar Jacobian, ordered [d theta (pv+pq) | d vm (pq)].
        let mut jac = vec![0.0; n_unknowns * n_unknowns];
        for (row, &i) in pvpq.iter().enumerate() {
            for (col, &j) in pvpq.iter().enumerate() {
                let v = if i == j {
                    -q_calc[i] - ybus.at(i, i).im * vm[i] * vm[i]
                } else {
                    let y = ybus.at(i, j);
                    let th = va[i] - va[j];
                    vm[i] * vm[j] * (y.re * th.sin() - y.im * th.cos())
                };
                jac[row * n_unknowns + col] = v;
            }
            for (col, &j) in pq.iter().enumerate() {
                let v = if i == j {
                    p_calc[i] / vm[i] + ybus.at(i, i).re * vm[i]
                } else {
                    let y = ybus.at(i, j);
                    let th = va[i] - va[j];
                    vm[i] * (y.re * th.cos() + y.im * th.sin())
                };
                jac[row * n_unknowns + pvpq.len() + col] = v;
            }
        }
        for (rr, &i) in pq.iter().enumerate() {
            let row = pvpq.len() + rr;
            for (col, &j) in pvpq.iter().enumerate() {
                let v = if i == j {
                    p_calc[i] - ybus.at(i, i).re * vm[i] * vm[i]
                } else {
                    let y = ybus.at(i, j);
                    let th = va[i] - va[j];
                    -vm[i] * vm[j] * (y.re * th.cos() + y.im * th.sin())
                };
                jac[row * n_unknowns + col] = v;
            }
            for (col, &j) in pq.iter().enumerate() {
                let v = if i == j {
                    q_calc[i] / vm[i] - ybus.at(i, i).im * vm[i]
                } else {
                    let y = ybus.at(i, j);
                    let th = va[i] - va[j];
                    vm[i] * (y.re * th.sin() - y.im * th.cos())
                };
                jac[row * n_unknowns + pvpq.len() + col] = v;
            }
        }

        let factors =
            LuFactors::factor(jac, n_unknowns).map_err(|_| PowerFlowError::SingularJacobian)?;
        let dx = factors.solve(&f);
        for (k, &i) in pvpq.iter().enumerate() {
            va[i] += dx[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            vm[i] += dx[pvpq.len() + k];
        }
        iterations += 1;

        calc(&vm, &va, &mut p_calc, &mut q_calc);
        mismatch(&p_calc, &q_calc, &mut f);
        max_mismatch = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !max_mismatch.is_finite() {
            break;
        }
    }

    Ok(AcSolution {
        vm,
        va,
        converged: max_mismatch.is_finite() && max_mismatch <= opts.tolerance,
        iterations,
        max_mismatch,
    })
}

/// DC load-flow result: bus angles and per-branch active flows at the from
/// end in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    /// Bus angles, radians; slack fixed at 0.
    pub theta: Vec<f64>,
    /// Active flow per branch, MW. Out-of-service branches carry 0.
    pub flows_mw: Vec<f64>,
}

/// Linear B-theta approximation: susceptance `1/(x*tap)` per in-service
/// branch, one linear solve for angles with the slack row and column
/// removed, flows `b*(theta_f - theta_t - shift)`. Reactive power is
/// ignored entirely.
pub fn solve_dc(grid: &Grid, inj: &InjectionSample) -> Result<DcSolution, PowerFlowError> {
    inj.validate(grid)?;
    if !check_connectivity(grid, &Topology::reference()).connected {
        return Err(PowerFlowError::DisconnectedGrid);
    }
    let n = grid.n_buses();
    let index = grid.bus_index();
    let slack = grid.slack_index();

    let (p_net, _) = injection_targets(grid, inj);
    let mut rhs = p_net;

    let mut b_full = vec![0.0; n * n];
    for br in grid.branches.iter().filter(|b| b.status) {
        let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
        let b = 1.0 / (br.x * br.tap);
        b_full[f * n + f] += b;
        b_full[t * n + t] += b;
        b_full[f * n + t] -= b;
        b_full[t * n + f] -= b;
        let shift = br.shift_deg.to_radians();
        if shift != 0.0 {
            rhs[f] += b * shift;
            rhs[t] -= b * shift;
        }
    }

    // Reduce out the slack bus (its angle is the 0 reference).
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = keep.len();
    let mut reduced = vec![0.0; m * m];
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            reduced[r * m + c] = b_full[i * n + j];
        }
    }
    let rhs_reduced: Vec<f64> = keep.iter().map(|&i| rhs[i]).collect();
    let angles =
        lu_solve(reduced, m, &rhs_reduced).map_err(|_| PowerFlowError::SingularMatrix)?;

    let mut theta = vec![0.0; n];
    for (k, &i) in keep.iter().enumerate() {
        theta[i] = angles[k];
    }

    let flows_mw = grid
        .branches
        .iter()
        .map(|br| {
            if !br.status {
                return 0.0;
            }
            let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
            let b = 1.0 / (br.x * br.tap);
            b * (theta[f] - theta[t] - br.shift_deg.to_radians()) * grid.base_mva
        })
        .collect();

    Ok(DcSolution { theta, flows_mw })
}

/// Base current in Amperes for a 1 pu current at the given kV level:
/// `base_mva * 1e6 / (sqrt(3) * base_kv * 1e3)`.
pub fn base_current_amps(base_mva: f64, base_kv: f64) -> f64 {
    base_mva * 1e6 / (3.0_f64.sqrt() * base_kv * 1e3)
}

/// From-end branch current magnitudes of a converged AC solution, in
/// Amperes on the from bus's voltage base.
pub fn branch_currents(grid: &Grid, sol: &AcSolution) -> Result<FlowVector, PowerFlowError> {
    if !sol.converged {
        return Err(PowerFlowError::NotConverged);
    }
    let ybus = build_ybus(grid)?;
    let index = grid.bus_index();
    let v: Vec<Complex64> = sol
        .vm
        .iter()
        .zip(&sol.va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let amps = grid
        .branches
        .iter()
        .zip(&ybus.branch)
        .map(|(br, stamp)| match stamp {
            None => 0.0,
            Some(s) => {
                let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
                let i_from = s.yff * v[f] + s.yft * v[t];
                let base_kv = grid.buses[f].base_kv;
                i_from.norm() * base_current_amps(grid.base_mva, base_kv)
            }
        })
        .collect();
    Ok(FlowVector { amps })
}

/// Complex power entering each branch at its two ends, pu. Out-of-service
/// branches report zero.
pub fn branch_powers(grid: &Grid, sol: &AcSolution) -> Result<Vec<(Complex64, Complex64)>, PowerFlowError> {
    let ybus = build_ybus(grid)?;
    let index = grid.bus_index();
    let v: Vec<Complex64> = sol
        .vm
        .iter()
        .zip(&sol.va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    Ok(grid
        .branches
        .iter()
        .zip(&ybus.branch)
        .map(|(br, stamp)| match stamp {
            None => (Complex64::ZERO, Complex64::ZERO),
            Some(s) => {
                let (f, t) = (index[&br.from_bus], index[&br.to_bus]);
                let s_from = v[f] * (s.yff * v[f] + s.yft * v[t]).conj();
                let s_to = v[t] * (s.ytf * v[f] + s.ytt * v[t]).conj();
                (s_from, s_to)
            }
        })
        .collect())
}

/// Net complex power injection at each bus implied by a voltage solution,
/// pu: `S = V .* conj(Y V)`.
pub fn bus_injections(grid: &Grid, sol: &AcSolution) -> Result<Vec<Complex64>, PowerFlowError> {
    let ybus = build_ybus(grid)?;
    let v: Vec<Complex64> = sol
        .vm
        .iter()
        .zip(&sol.va)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let iv = ybus.mul(&v);
    Ok(v.iter().zip(&iv).map(|(v, i)| v * i.conj()).collect())
}

/// Convert DC active flows to current magnitudes assuming 1 pu voltage
/// everywhere (the DC model has no magnitudes).
pub fn dc_currents(grid: &Grid, flows_mw: &[f64]) -> Result<FlowVector, PowerFlowError> {
    if flows_mw.len() != grid.n_branches() {
        return Err(PowerFlowError::ShapeMismatch(format!(
            "{} flows for {} branches",
            flows_mw.len(),
            grid.n_branches()
        )));
    }
    let index = grid.bus_index();
    let amps = grid
        .branches
        .iter()
        .zip(flows_mw)
        .map(|(br, &p)| {
            let f = index[&br.from_bus];
            p.abs() * 1e6 / (3.0_f64.sqrt() * grid.buses[f].base_kv * 1e3)
        })
        .collect();
    Ok(FlowVector { amps })
}
