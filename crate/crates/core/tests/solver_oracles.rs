//! Solver checks against independent oracles: a from-scratch dense Ybus
//! re-assembly, a branch-flow mismatch evaluator, a Gauss-Jordan DC solve,
//! BFS/union-find connectivity, conservation laws, and the small-signal
//! AC/DC consistency limit.

use gridflow::powerflow::{
    apply_topology, branch_currents, branch_powers, build_ybus, bus_injections,
    check_connectivity, dc_currents, solve_ac, solve_dc, InjectionSample, SolveOptions, Topology,
};
use gridflow::scenario::{InjectionSampler, ScenarioConfig};
use gridflow::{parse_case, BusKind, Grid};

fn load(name: &str) -> Grid {
    let path = format!("{}/../../data/{name}.m", env!("CARGO_MANIFEST_DIR"));
    parse_case(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Plain (re, im) pair arithmetic, kept separate from num-complex on
/// purpose: the oracle should not share the implementation's code path.
#[derive(Clone, Copy, Debug, Default)]
struct C(f64, f64);

impl C {
    fn add(self, o: C) -> C {
        C(self.0 + o.0, self.1 + o.1)
    }
    fn sub(self, o: C) -> C {
        C(self.0 - o.0, self.1 - o.1)
    }
    fn mul(self, o: C) -> C {
        C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: C) -> C {
        let d = o.0 * o.0 + o.1 * o.1;
        C(
            (self.0 * o.0 + self.1 * o.1) / d,
            (self.1 * o.0 - self.0 * o.1) / d,
        )
    }
    fn conj(self) -> C {
        C(self.0, -self.1)
    }
}

/// Oracle: dense Ybus assembled with independent arithmetic, looping over
/// branches and re-deriving each stamp from the pi model.
fn oracle_ybus(grid: &Grid) -> Vec<C> {
    let n = grid.n_buses();
    let idx = grid.bus_index();
    let mut y = vec![C::default(); n * n];
    for br in &grid.branches {
        if !br.status {
            continue;
        }
        let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
        let ys = C(1.0, 0.0).div(C(br.r, br.x));
        let ytt = ys.add(C(0.0, br.b_charging / 2.0));
        let tap = br.tap;
        let shift = br.shift_deg.to_radians();
        let tc = C(tap * shift.cos(), tap * shift.sin());
        let yff = C(ytt.0 / (tap * tap), ytt.1 / (tap * tap));
        let yft = C(0.0, 0.0).sub(ys.div(tc.conj()));
        let ytf = C(0.0, 0.0).sub(ys.div(tc));
        y[f * n + f] = y[f * n + f].add(yff);
        y[f * n + t] = y[f * n + t].add(yft);
        y[t * n + f] = y[t * n + f].add(ytf);
        y[t * n + t] = y[t * n + t].add(ytt);
    }
    for (i, b) in grid.buses.iter().enumerate() {
        y[i * n + i] = y[i * n + i].add(C(b.g_shunt / grid.base_mva, b.b_shunt / grid.base_mva));
    }
    y
}

#[test]
fn case14_ybus_matches_dense_reassembly() {
    let g = load("case14");
    let ybus = build_ybus(&g).unwrap();
    let oracle = oracle_ybus(&g);
    let n = g.n_buses();
    for i in 0..n {
        for j in 0..n {
            let got = ybus.at(i, j);
            let want = oracle[i * n + j];
            assert!(
                (got.re - want.0).abs() <= 1e-12 && (got.im - want.1).abs() <= 1e-12,
                "Y[{i},{j}] = {got} vs ({}, {})",
                want.0,
                want.1
            );
        }
    }
}

#[test]
fn ybus_is_symmetric_without_taps_or_shifts() {
    let mut g = load("case14");
    for br in &mut g.branches {
        br.tap = 1.0;
        br.shift_deg = 0.0;
    }
    let y = build_ybus(&g).unwrap();
    for i in 0..g.n_buses() {
        for j in 0..i {
            let a = y.at(i, j);
            let b = y.at(j, i);
            assert!((a - b).norm() <= 1e-14, "asymmetry at ({i},{j})");
        }
    }
}

/// Oracle: recompute per-bus power balance by summing branch flows (each
/// re-derived from the pi model with the independent arithmetic above) and
/// shunts, then compare with the scheduled injections.
fn oracle_worst_mismatch(grid: &Grid, vm: &[f64], va: &[f64], inj: &InjectionSample) -> f64 {
    let n = grid.n_buses();
    let idx = grid.bus_index();
    let v: Vec<C> = (0..n)
        .map(|i| C(vm[i] * va[i].cos(), vm[i] * va[i].sin()))
        .collect();
    let mut s_out = vec![C::default(); n];
    for br in &grid.branches {
        if !br.status {
            continue;
        }
        let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
        let ys = C(1.0, 0.0).div(C(br.r, br.x));
        let ytt = ys.add(C(0.0, br.b_charging / 2.0));
        let tap = br.tap;
        let shift = br.shift_deg.to_radians();
        let tc = C(tap * shift.cos(), tap * shift.sin());
        let yff = C(ytt.0 / (tap * tap), ytt.1 / (tap * tap));
        let yft = C(0.0, 0.0).sub(ys.div(tc.conj()));
        let ytf = C(0.0, 0.0).sub(ys.div(tc));
        let i_f = yff.mul(v[f]).add(yft.mul(v[t]));
        let i_t = ytf.mul(v[f]).add(ytt.mul(v[t]));
        s_out[f] = s_out[f].add(v[f].mul(i_f.conj()));
        s_out[t] = s_out[t].add(v[t].mul(i_t.conj()));
    }
    for (i, b) in grid.buses.iter().enumerate() {
        // S = V conj(Ysh V) = |V|^2 conj(Ysh)
        let m2 = v[i].0 * v[i].0 + v[i].1 * v[i].1;
        s_out[i] = s_out[i].add(C(
            m2 * b.g_shunt / grid.base_mva,
            -m2 * b.b_shunt / grid.base_mva,
        ));
    }
    let mut p_spec = vec![0.0; n];
    let mut q_spec = vec![0.0; n];
    for i in 0..n {
        p_spec[i] -= inj.p_load[i] / grid.base_mva;
        q_spec[i] -= inj.q_load[i] / grid.base_mva;
    }
    for (gi, gen) in grid.gens.iter().enumerate() {
        if gen.status {
            let i = idx[&gen.bus];
            p_spec[i] += inj.p_gen[gi] / grid.base_mva;
            q_spec[i] += gen.q_gen / grid.base_mva;
        }
    }
    let mut worst = 0.0f64;
    for (i, b) in grid.buses.iter().enumerate() {
        match b.kind {
            BusKind::Slack => {}
            BusKind::Pv => worst = worst.max((p_spec[i] - s_out[i].0).abs()),
            BusKind::Pq => {
                worst = worst.max((p_spec[i] - s_out[i].0).abs());
                worst = worst.max((q_spec[i] - s_out[i].1).abs());
            }
        }
    }
    worst
}

#[test]
fn reference_cases_converge_and_satisfy_raw_equations() {
    for name in ["case9", "case14", "case118"] {
        let g = load(name);
        let inj = InjectionSample::from_grid(&g);
        let sol = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
        assert!(sol.converged, "{name} converged");
        assert!(sol.iterations <= 10, "{name} iterations {}", sol.iterations);
        assert!(sol.max_mismatch <= 1e-8, "{name} mismatch {}", sol.max_mismatch);
        let worst = oracle_worst_mismatch(&g, &sol.vm, &sol.va, &inj);
        assert!(worst <= 1e-8, "{name} oracle residual {worst}");
    }
}

#[test]
fn ac_solution_is_bit_deterministic() {
    let g = load("case14");
    let inj = InjectionSample::from_grid(&g);
    let a = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
    let b = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
    for i in 0..g.n_buses() {
        assert_eq!(a.vm[i].to_bits(), b.vm[i].to_bits());
        assert_eq!(a.va[i].to_bits(), b.va[i].to_bits());
    }
}

/// Oracle: DC solve by explicit Gauss-Jordan inversion of the dense reduced
/// susceptance matrix, assembled in a separate pass.
fn oracle_dc_flows(grid: &Grid, inj: &InjectionSample) -> Vec<f64> {
    let n = grid.n_buses();
    let idx = grid.bus_index();
    let slack = grid.slack_index();
    let mut b_full = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        rhs[i] -= inj.p_load[i] / grid.base_mva;
    }
    for (gi, gen) in grid.gens.iter().enumerate() {
        if gen.status {
            rhs[idx[&gen.bus]] += inj.p_gen[gi] / grid.base_mva;
        }
    }
    for br in grid.branches.iter().filter(|b| b.status) {
        let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
        let b = 1.0 / (br.x * br.tap);
        b_full[f * n + f] += b;
        b_full[t * n + t] += b;
        b_full[f * n + t] -= b;
        b_full[t * n + f] -= b;
        let sh = br.shift_deg.to_radians();
        rhs[f] += b * sh;
        rhs[t] -= b * sh;
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = keep.len();
    // Gauss-Jordan inversion of the reduced matrix.
    let mut a = vec![0.0; m * 2 * m];
    for (r, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            a[r * 2 * m + c] = b_full[i * n + j];
        }
        a[r * 2 * m + m + r] = 1.0;
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&r1, &r2| {
                a[r1 * 2 * m + col]
                    .abs()
                    .partial_cmp(&a[r2 * 2 * m + col].abs())
                    .unwrap()
            })
            .unwrap();
        if piv != col {
            for c in 0..2 * m {
                a.swap(col * 2 * m + c, piv * 2 * m + c);
            }
        }
        let p = a[col * 2 * m + col];
        for c in 0..2 * m {
            a[col * 2 * m + c] /= p;
        }
        for r in 0..m {
            if r != col {
                let f = a[r * 2 * m + col];
                if f != 0.0 {
                    for c in 0..2 * m {
                        let v = a[col * 2 * m + c];
                        a[r * 2 * m + c] -= f * v;
                    }
                }
            }
        }
    }
    let mut theta = vec![0.0; n];
    for (r, &i) in keep.iter().enumerate() {
        let mut acc = 0.0;
        for (c, &j) in keep.iter().enumerate() {
            acc += a[r * 2 * m + m + c] * rhs[j];
        }
        theta[i] = acc;
    }
    grid.branches
        .iter()
        .map(|br| {
            if !br.status {
                return 0.0;
            }
            let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
            (theta[f] - theta[t] - br.shift_deg.to_radians()) / (br.x * br.tap) * grid.base_mva
        })
        .collect()
}

#[test]
fn case14_dc_matches_dense_inversion_oracle() {
    let g = load("case14");
    let inj = InjectionSample::from_grid(&g);
    let dc = solve_dc(&g, &inj).unwrap();
    let oracle = oracle_dc_flows(&g, &inj);
    for (i, (got, want)) in dc.flows_mw.iter().zip(&oracle).enumerate() {
        assert!((got - want).abs() <= 1e-9, "branch {i}: {got} vs {want}");
    }
}

#[test]
fn dc_satisfies_kirchhoff_on_random_samples() {
    let g = load("case14");
    let idx = g.bus_index();
    let slack = g.slack_index();
    let sampler = InjectionSampler::new(&g, &ScenarioConfig::default()).unwrap();
    for trial in 0..100u64 {
        let mut rng = gridflow::seeds::derive_rng(11, "kcl", &[trial]);
        let inj = sampler.sample(&mut rng).unwrap();
        let dc = solve_dc(&g, &inj).unwrap();
        // Net injection at each non-slack bus equals the sum of signed
        // branch flows leaving it.
        let mut net = vec![0.0; g.n_buses()];
        for (b, br) in g.branches.iter().enumerate() {
            if br.status {
                net[idx[&br.from_bus]] += dc.flows_mw[b];
                net[idx[&br.to_bus]] -= dc.flows_mw[b];
            }
        }
        for i in 0..g.n_buses() {
            if i == slack {
                continue;
            }
            let gen_mw: f64 = g
                .gens
                .iter()
                .enumerate()
                .filter(|(_, gen)| gen.status && idx[&gen.bus] == i)
                .map(|(gi, _)| inj.p_gen[gi])
                .sum();
            let expected = gen_mw - inj.p_load[i];
            assert!(
                (net[i] - expected).abs() <= 1e-9,
                "bus {i}: {} vs {expected}",
                net[i]
            );
        }
    }
}

#[test]
fn ac_slack_balances_losses() {
    let g = load("case14");
    let idx = g.bus_index();
    let slack = g.slack_index();
    let sampler = InjectionSampler::new(&g, &ScenarioConfig::default()).unwrap();
    for trial in 0..20u64 {
        let mut rng = gridflow::seeds::derive_rng(12, "slack", &[trial]);
        let inj = sampler.sample(&mut rng).unwrap();
        let sol = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
        assert!(sol.converged);
        let injections = bus_injections(&g, &sol).unwrap();
        let powers = branch_powers(&g, &sol).unwrap();
        let losses_mw: f64 = powers.iter().map(|(sf, st)| (sf + st).re).sum::<f64>() * g.base_mva;
        // Slack generator output implied by the solution.
        let slack_gen_mw = injections[slack].re * g.base_mva + inj.p_load[slack];
        let total_load: f64 = inj.p_load.iter().sum();
        let non_slack_gen: f64 = g
            .gens
            .iter()
            .enumerate()
            .filter(|(_, gen)| gen.status && idx[&gen.bus] != slack)
            .map(|(gi, _)| inj.p_gen[gi])
            .sum();
        let expected = total_load - non_slack_gen + losses_mw;
        assert!(
            (slack_gen_mw - expected).abs() <= 1e-6,
            "trial {trial}: slack {slack_gen_mw} vs {expected}"
        );
    }
}

#[test]
fn case14_currents_match_power_form_recomputation() {
    let g = load("case14");
    let inj = InjectionSample::from_grid(&g);
    let sol = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
    let amps = branch_currents(&g, &sol).unwrap();
    let powers = branch_powers(&g, &sol).unwrap();
    let idx = g.bus_index();
    for (b, br) in g.branches.iter().enumerate() {
        let f = idx[&br.from_bus];
        let s_f_mva = powers[b].0.norm() * g.base_mva;
        let v_kv = sol.vm[f] * g.buses[f].base_kv;
        let want = s_f_mva * 1e6 / (3.0_f64.sqrt() * v_kv * 1e3);
        assert!(
            (amps.amps[b] - want).abs() <= 1e-6,
            "branch {b}: {} vs {want}",
            amps.amps[b]
        );
    }
}

/// Flatten a grid to the DC model's assumptions: lossless lines, nominal
/// taps, no shifts, no charging, no shunts, all setpoints 1.0.
fn dc_idealized(mut g: Grid) -> Grid {
    for br in &mut g.branches {
        br.r = 0.0;
        br.tap = 1.0;
        br.shift_deg = 0.0;
        br.b_charging = 0.0;
    }
    for b in &mut g.buses {
        b.g_shunt = 0.0;
        b.b_shunt = 0.0;
    }
    for gen in &mut g.gens {
        gen.v_setpoint = 1.0;
    }
    g
}

fn scaled(inj: &InjectionSample, eps: f64) -> InjectionSample {
    InjectionSample {
        p_gen: inj.p_gen.iter().map(|v| v * eps).collect(),
        p_load: inj.p_load.iter().map(|v| v * eps).collect(),
        q_load: inj.q_load.iter().map(|v| v * eps).collect(),
    }
}

#[test]
fn dc_is_first_order_limit_of_ac() {
    let g = dc_idealized(load("case14"));
    let base = InjectionSample::from_grid(&g);
    let mut errs = Vec::new();
    for &eps in &[0.1, 0.05, 0.025] {
        let inj = scaled(&base, eps);
        let sol = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
        assert!(sol.converged);
        let ac_p = branch_powers(&g, &sol).unwrap();
        let dc = solve_dc(&g, &inj).unwrap();
        let worst = ac_p
            .iter()
            .zip(&dc.flows_mw)
            .map(|((sf, _), dcf)| (sf.re * g.base_mva - dcf).abs())
            .fold(0.0f64, f64::max);
        errs.push(worst);
    }
    // Successive halvings of eps must shrink the error at least
    // quadratically: log2(e1/e2) >= 1.9.
    for w in errs.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!(slope >= 1.9, "slope {slope} from errors {errs:?}");
    }

    // DC currents converge to AC currents with O(eps) relative error. The
    // limit is taken along active-only injections: a line's AC current
    // carries the reactive component the DC model has no notion of, so a
    // fixed power factor would leave a fixed relative gap.
    let active_only = |eps: f64| {
        let mut inj = scaled(&base, eps);
        inj.q_load.iter_mut().for_each(|q| *q = 0.0);
        inj
    };
    let rel_err = |eps: f64| {
        let inj = active_only(eps);
        let sol = solve_ac(&g, &inj, SolveOptions::default()).unwrap();
        assert!(sol.converged);
        let ac_amps = branch_currents(&g, &sol).unwrap();
        let dc = solve_dc(&g, &inj).unwrap();
        let dc_amps = dc_currents(&g, &dc.flows_mw).unwrap();
        ac_amps
            .amps
            .iter()
            .zip(&dc_amps.amps)
            .filter(|(a, _)| **a > 1.0)
            .map(|(a, d)| (a - d).abs() / a)
            .fold(0.0f64, f64::max)
    };
    let e1 = rel_err(0.1);
    let e2 = rel_err(0.05);
    let e3 = rel_err(0.025);
    assert!(e1 <= 0.05, "relative error {e1} at eps 0.1");
    assert!(e2 <= e1 / 1.5 && e3 <= e2 / 1.5, "not O(eps): {e1} {e2} {e3}");
}

/// BFS oracle, independent of the union-find implementation.
fn bfs_connected(grid: &Grid, removed: &[usize]) -> bool {
    let n = grid.n_buses();
    let idx = grid.bus_index();
    let mut adj = vec![Vec::new(); n];
    for (b, br) in grid.branches.iter().enumerate() {
        if br.status && !removed.contains(&b) {
            let (f, t) = (idx[&br.from_bus], idx[&br.to_bus]);
            adj[f].push(t);
            adj[t].push(f);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

#[test]
fn case118_n1_acceptance_set_matches_bfs_oracle() {
    let g = load("case118");
    let mut bridges = 0;
    for b in 0..g.n_branches() {
        let got = check_connectivity(&g, &Topology::single(b)).connected;
        let want = bfs_connected(&g, &[b]);
        assert_eq!(got, want, "branch {b}");
        if !want {
            bridges += 1;
        }
    }
    let n1 = gridflow::scenario::enumerate_n1(&g);
    assert_eq!(n1.len(), 1 + (g.n_branches() - bridges));
    assert!(n1[0].is_reference());
}

#[test]
fn case14_n1_acceptance_set_matches_bfs_oracle() {
    let g = load("case14");
    for b in 0..g.n_branches() {
        assert_eq!(
            check_connectivity(&g, &Topology::single(b)).connected,
            bfs_connected(&g, &[b]),
            "branch {b}"
        );
    }
}

#[test]
fn case118_double_outage_with_unionfind_oracle() {
    let g = load("case118");
    let topo = Topology::new([3, 7]);
    let applied = apply_topology(&g, &topo).unwrap();
    assert_eq!(
        applied.branches.iter().filter(|b| !b.status).count(),
        2,
        "exactly two branches out"
    );
    // Union-find oracle over the applied grid.
    let n = applied.n_buses();
    let idx = applied.bus_index();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for br in applied.branches.iter().filter(|b| b.status) {
        let (a, b) = (idx[&br.from_bus], idx[&br.to_bus]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    }
    let root = find(&mut parent, 0);
    let connected = (0..n).all(|i| find(&mut parent, i) == root);
    assert!(connected);
    assert!(check_connectivity(&g, &topo).connected);
}
