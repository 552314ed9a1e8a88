//! Network checks against independent oracles: a straight-line forward-pass
//! reimplementation, central finite differences for every parameter group of
//! every encoding, hand-evaluated Adam steps, and the mask-composition law.

use gridflow::neuralnet::{
    adam_step, loss_and_grads, model_from_json, model_to_json, topology_mask, train, AdamHyper,
    AdamState, Encoding, Example, Gradients, Hyper, Scaler, SurrogateModel, TrainConfig,
    TrainData,
};
use gridflow::powerflow::Topology;
use gridflow::seeds;
use proptest::prelude::*;
use rand::Rng;

fn tiny_hyper() -> Hyper {
    Hyper {
        d_enc: 4,
        d_shared: 3,
        k: 2,
        leaky_slope: 0.01,
    }
}

fn tiny_model(encoding: Encoding, seed: u64) -> SurrogateModel<f64> {
    SurrogateModel::new(encoding, tiny_hyper(), 2, 3, 3, seed)
}

fn rand_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

// ---------------------------------------------------------------------------
// Scaler
// ---------------------------------------------------------------------------

#[test]
fn scaler_two_point_case() {
    let s = Scaler::fit(&[vec![0.0], vec![2.0]]).unwrap();
    assert_eq!(s.mean, vec![1.0]);
    assert_eq!(s.std, vec![1.0]);
}

#[test]
fn scaler_constant_feature_maps_to_zero() {
    let s = Scaler::fit(&[vec![5.0], vec![5.0], vec![5.0]]).unwrap();
    assert_eq!(s.std, vec![1.0], "degenerate std forced to 1");
    let mut out = vec![f64::NAN];
    s.transform(&[5.0], &mut out);
    assert_eq!(out, vec![0.0]);
}

#[test]
fn scaler_standardizes_random_matrix() {
    let mut rng = seeds::derive_rng(3, "scaler", &[]);
    let rows: Vec<Vec<f64>> = (0..1000)
        .map(|_| (0..5).map(|c| rng.random::<f64>() * (c + 1) as f64 + c as f64).collect())
        .collect();
    let s = Scaler::fit(&rows).unwrap();
    let mut transformed = vec![vec![0.0; 5]; rows.len()];
    for (out, row) in transformed.iter_mut().zip(&rows) {
        s.transform(row, out);
    }
    for c in 0..5 {
        let mean: f64 = transformed.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
        let var: f64 = transformed.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>()
            / rows.len() as f64;
        assert!(mean.abs() < 1e-10, "column {c} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-10, "column {c} std {}", var.sqrt());
    }
    // Round trip.
    let mut back = vec![0.0; 5];
    s.inverse_transform(&transformed[0], &mut back);
    for (a, b) in back.iter().zip(&rows[0]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn scaler_needs_two_rows() {
    assert!(Scaler::<f64>::fit(&[vec![1.0]]).is_err());
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

#[test]
fn mask_reference_topology_is_all_zero() {
    let m = topology_mask(&Topology::reference(), 4, 3).unwrap();
    assert_eq!(m, vec![false; 12]);
}

#[test]
fn mask_block_placement() {
    let m = topology_mask(&Topology::single(2), 20, 5).unwrap();
    for (i, &v) in m.iter().enumerate() {
        assert_eq!(v, (10..15).contains(&i), "position {i}");
    }
}

#[test]
fn mask_rejects_out_of_range() {
    assert!(topology_mask(&Topology::single(4), 4, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    /// Union law over 1000 random disjoint line-set pairs.
    #[test]
    fn mask_union_is_or(sets in prop::collection::btree_set(0usize..40, 0..12), k in 1usize..6) {
        let all: Vec<usize> = sets.iter().copied().collect();
        let (a, b): (Vec<usize>, Vec<usize>) =
            all.iter().partition(|&&v| v % 2 == 0);
        let ta = Topology::new(a);
        let tb = Topology::new(b);
        let mask_a = topology_mask(&ta, 40, k).unwrap();
        let mask_b = topology_mask(&tb, 40, k).unwrap();
        let mask_union = topology_mask(&ta.union(&tb), 40, k).unwrap();
        let or: Vec<bool> = mask_a.iter().zip(&mask_b).map(|(x, y)| *x || *y).collect();
        prop_assert_eq!(mask_union, or);
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

/// Straight-line reimplementation of the forward pass: plain loops over the
/// public weight fields, no shared code with the library's version.
fn oracle_forward(m: &SurrogateModel<f64>, x: &[f64], topo: &Topology) -> Vec<f64> {
    let h = &m.hyper;
    let slope = h.leaky_slope;
    let x_prod = &x[..m.n_prod];
    let mut load_in: Vec<f64> = x[m.n_prod..].to_vec();
    match &m.encoding {
        Encoding::OneHot => {
            let mut extra = vec![0.0; m.n_lines];
            for l in topo.iter() {
                extra[l] = 1.0;
            }
            load_in.extend(extra);
        }
        Encoding::OneVar => {
            load_in.push(topo.iter().next().map_or(0.0, |l| (l + 1) as f64));
        }
        _ => {}
    }

    let dense = |layer: &gridflow::neuralnet::Dense<f64>, input: &[f64]| -> Vec<f64> {
        (0..layer.rows)
            .map(|r| {
                let mut acc = layer.b[r];
                for c in 0..layer.cols {
                    acc += layer.w[r * layer.cols + c] * input[c];
                }
                acc
            })
            .collect()
    };

    let mut e = Vec::with_capacity(2 * h.d_enc);
    for v in dense(&m.enc_prod, x_prod) {
        e.push(leaky(v, slope));
    }
    for v in dense(&m.enc_load, &load_in) {
        e.push(leaky(v, slope));
    }
    let h_shared: Vec<f64> = dense(&m.shared, &e).iter().map(|&v| leaky(v, slope)).collect();

    let mut h_cond = vec![0.0; m.cond.len() * h.k];
    if matches!(m.encoding, Encoding::GuidedDropout) {
        let mask = topology_mask(topo, m.n_lines, h.k).unwrap();
        for l in 0..m.n_lines {
            let block = dense(&m.cond[l], &e);
            for i in 0..h.k {
                if mask[l * h.k + i] {
                    h_cond[l * h.k + i] = leaky(block[i], slope);
                }
            }
        }
    }
    let mut full = h_shared;
    full.extend(h_cond);
    dense(&m.dec, &full[..m.dec.cols])
}

#[test]
fn forward_matches_straight_line_oracle_for_every_encoding() {
    let mut rng = seeds::derive_rng(7, "fwd", &[]);
    let cases = [
        (Encoding::GuidedDropout, Topology::reference()),
        (Encoding::GuidedDropout, Topology::single(1)),
        (Encoding::GuidedDropout, Topology::new([0, 2])),
        (Encoding::OneHot, Topology::new([0, 2])),
        (Encoding::OneVar, Topology::single(2)),
        (Encoding::OneModel { topology: Topology::single(1) }, Topology::single(1)),
    ];
    for (encoding, topo) in cases {
        let m = tiny_model(encoding, 0);
        let mut ws = m.workspace();
        for _ in 0..10 {
            let x = rand_vec(m.n_inputs(), &mut rng);
            m.forward(&x, &topo, &mut ws).unwrap();
            let want = oracle_forward(&m, &x, &topo);
            for (got, want) in ws.y.iter().zip(&want) {
                assert!(
                    (got - want).abs() <= 1e-12,
                    "{}: {got} vs {want}",
                    m.encoding.name()
                );
            }
        }
    }
}

#[test]
fn reference_forward_ignores_conditional_weights_bit_exactly() {
    let m = tiny_model(Encoding::GuidedDropout, 1);
    let mut ws = m.workspace();
    let x = vec![0.3, -0.5, 0.8, 0.1, -0.9];
    m.forward(&x, &Topology::reference(), &mut ws).unwrap();
    let before: Vec<u64> = ws.y.iter().map(|v| v.to_bits()).collect();

    let mut perturbed = m.clone();
    let mut rng = seeds::derive_rng(2, "perturb", &[]);
    for block in &mut perturbed.cond {
        for w in block.w.iter_mut().chain(block.b.iter_mut()) {
            *w += rng.random::<f64>() * 100.0 - 50.0;
        }
    }
    perturbed.forward(&x, &Topology::reference(), &mut ws).unwrap();
    let after: Vec<u64> = ws.y.iter().map(|v| v.to_bits()).collect();
    assert_eq!(before, after);
}

#[test]
fn zero_weights_give_zero_output() {
    let mut m = tiny_model(Encoding::GuidedDropout, 3);
    for layer in [&mut m.enc_prod, &mut m.enc_load, &mut m.shared, &mut m.dec] {
        layer.w.fill(0.0);
        layer.b.fill(0.0);
    }
    for block in &mut m.cond {
        block.w.fill(0.0);
        block.b.fill(0.0);
    }
    let mut ws = m.workspace();
    m.forward(&[1.0, 2.0, 3.0, 4.0, 5.0], &Topology::single(0), &mut ws)
        .unwrap();
    assert_eq!(ws.y, vec![0.0; 3]);
}

#[test]
fn one_model_rejects_other_topologies() {
    let m = tiny_model(
        Encoding::OneModel { topology: Topology::single(1) },
        4,
    );
    let mut ws = m.workspace();
    let x = vec![0.0; 5];
    assert!(m.forward(&x, &Topology::single(1), &mut ws).is_ok());
    assert!(m.forward(&x, &Topology::single(2), &mut ws).is_err());
}

#[test]
fn one_var_rejects_pairs() {
    let m = tiny_model(Encoding::OneVar, 5);
    let mut ws = m.workspace();
    assert!(m.forward(&[0.0; 5], &Topology::new([0, 1]), &mut ws).is_err());
}

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

fn batch_for(model: &SurrogateModel<f64>, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Topology>) {
    let mut rng = seeds::derive_rng(seed, "batch", &[]);
    let topos: Vec<Topology> = match &model.encoding {
        Encoding::OneModel { topology } => vec![topology.clone(); 5],
        Encoding::OneVar => vec![
            Topology::reference(),
            Topology::single(0),
            Topology::single(1),
            Topology::single(2),
            Topology::reference(),
        ],
        _ => vec![
            Topology::reference(),
            Topology::single(0),
            Topology::single(2),
            Topology::new([1, 2]),
            Topology::single(1),
        ],
    };
    let xs: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(model.n_inputs(), &mut rng)).collect();
    let ys: Vec<Vec<f64>> = (0..5).map(|_| rand_vec(model.n_lines, &mut rng)).collect();
    (xs, ys, topos)
}

fn batch_loss(model: &SurrogateModel<f64>, xs: &[Vec<f64>], ys: &[Vec<f64>], topos: &[Topology]) -> f64 {
    let mut ws = model.workspace();
    let mut sse = 0.0;
    for i in 0..xs.len() {
        model.forward(&xs[i], &topos[i], &mut ws).unwrap();
        for (p, t) in ws.y.iter().zip(&ys[i]) {
            sse += (p - t) * (p - t);
        }
    }
    sse / (xs.len() * model.n_lines) as f64
}

/// Central finite differences over every parameter of every group, compared
/// at 1e-4 relative tolerance (64-bit, step 1e-5).
fn check_gradients(encoding: Encoding, seed: u64) {
    let model = tiny_model(encoding, seed);
    let (xs, ys, topos) = batch_for(&model, seed);
    let batch: Vec<Example<'_, f64>> = (0..xs.len())
        .map(|i| Example { x: &xs[i], y: &ys[i], topo: &topos[i] })
        .collect();
    let mut ws = model.workspace();
    let mut grads = Gradients::zeros_like(&model);
    loss_and_grads(&model, &batch, &mut ws, &mut grads).unwrap();

    let names = model.layer_names();
    let h = 1e-5;
    for (li, name) in names.iter().enumerate() {
        let grad_layer = grads.layers[li].clone();
        for is_weight in [true, false] {
            let len = if is_weight { grad_layer.w.len() } else { grad_layer.b.len() };
            for i in 0..len {
                let bump = |delta: f64| -> f64 {
                    let mut m = model.clone();
                    {
                        let mut layers = m.layers_mut();
                        let t = if is_weight {
                            &mut layers[li].w[i]
                        } else {
                            &mut layers[li].b[i]
                        };
                        *t += delta;
                    }
                    batch_loss(&m, &xs, &ys, &topos)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = if is_weight { grad_layer.w[i] } else { grad_layer.b[i] };
                let denom = an.abs().max(fd.abs());
                if denom < 1e-10 {
                    assert!(
                        an.abs() < 1e-10 && fd.abs() < 1e-8,
                        "{name}[{i}]: analytic {an} fd {fd}"
                    );
                } else {
                    let rel = (an - fd).abs() / denom;
                    assert!(rel <= 1e-4, "{name}[{i}]: analytic {an} fd {fd} rel {rel}");
                }
            }
        }
    }
}

#[test]
fn gradient_check_guided_dropout() {
    check_gradients(Encoding::GuidedDropout, 11);
}

#[test]
fn gradient_check_one_hot() {
    check_gradients(Encoding::OneHot, 12);
}

#[test]
fn gradient_check_one_var() {
    check_gradients(Encoding::OneVar, 13);
}

#[test]
fn gradient_check_one_model() {
    check_gradients(Encoding::OneModel { topology: Topology::single(1) }, 14);
}

#[test]
fn perfect_fit_has_zero_loss_and_gradients() {
    let model = tiny_model(Encoding::GuidedDropout, 21);
    let mut ws = model.workspace();
    let x = rand_vec(model.n_inputs(), &mut seeds::derive_rng(21, "x", &[]));
    let topo = Topology::single(1);
    model.forward(&x, &topo, &mut ws).unwrap();
    let y = ws.y.clone();
    let batch = [Example { x: &x, y: &y, topo: &topo }];
    let mut grads = Gradients::zeros_like(&model);
    let loss = loss_and_grads(&model, &batch, &mut ws, &mut grads).unwrap();
    assert_eq!(loss, 0.0);
    for layer in &grads.layers {
        assert!(layer.w.iter().chain(&layer.b).all(|&g| g == 0.0));
    }
}

#[test]
fn inactive_blocks_get_exactly_zero_gradient() {
    let model = tiny_model(Encoding::GuidedDropout, 22);
    let (xs, ys, _) = batch_for(&model, 22);
    // No sample disconnects line 0.
    let topos = vec![
        Topology::reference(),
        Topology::single(1),
        Topology::single(2),
        Topology::new([1, 2]),
        Topology::single(1),
    ];
    let batch: Vec<Example<'_, f64>> = (0..xs.len())
        .map(|i| Example { x: &xs[i], y: &ys[i], topo: &topos[i] })
        .collect();
    let mut ws = model.workspace();
    let mut grads = Gradients::zeros_like(&model);
    loss_and_grads(&model, &batch, &mut ws, &mut grads).unwrap();
    let dead = &grads.layers[3]; // cond[0]
    assert!(dead.w.iter().chain(&dead.b).all(|&g| g == 0.0));
    let alive = &grads.layers[4]; // cond[1]
    assert!(alive.w.iter().any(|&g| g != 0.0));
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut model = tiny_model(Encoding::OneHot, 31);
    let before = model.clone();
    let grads = Gradients::zeros_like(&model);
    let mut state = AdamState::new(&model, AdamHyper::with_lr(0.001));
    adam_step(&mut state, &mut model, &grads).unwrap();
    assert_eq!(state.t, 1);
    assert_eq!(model, before);
}

#[test]
fn adam_first_step_matches_hand_evaluation() {
    // Scalar case: g = 1, lr = 1e-3. After bias correction m_hat = 1 and
    // v_hat = 1, so the step is -lr / (1 + eps).
    let mut model = tiny_model(Encoding::OneHot, 32);
    let w0 = model.enc_prod.w[0];
    let mut grads = Gradients::zeros_like(&model);
    grads.layers[0].w[0] = 1.0;
    let mut state = AdamState::new(&model, AdamHyper::with_lr(0.001));
    adam_step(&mut state, &mut model, &grads).unwrap();
    let delta = model.enc_prod.w[0] - w0;
    let expected = -0.001 / (1.0 + 1e-8);
    assert!((delta - expected).abs() < 1e-15, "delta {delta} vs {expected}");
    // Untouched parameters stay put on the first step.
    assert_eq!(model.enc_prod.w[1], tiny_model(Encoding::OneHot, 32).enc_prod.w[1]);
}

#[test]
fn adam_trajectories_are_bit_identical() {
    let run = || {
        let mut model = tiny_model(Encoding::GuidedDropout, 33);
        let (xs, ys, topos) = batch_for(&model, 33);
        let batch: Vec<Example<'_, f64>> = (0..xs.len())
            .map(|i| Example { x: &xs[i], y: &ys[i], topo: &topos[i] })
            .collect();
        let mut ws = model.workspace();
        let mut grads = Gradients::zeros_like(&model);
        let mut state = AdamState::new(&model, AdamHyper::with_lr(0.01));
        for _ in 0..25 {
            loss_and_grads(&model, &batch, &mut ws, &mut grads).unwrap();
            adam_step(&mut state, &mut model, &grads).unwrap();
        }
        model
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let bits_equal = a
        .dec
        .w
        .iter()
        .zip(&b.dec.w)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    assert!(bits_equal);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[test]
fn one_record_epoch_reduces_loss() {
    let model = tiny_model(Encoding::GuidedDropout, 41);
    let mut rng = seeds::derive_rng(41, "toy", &[]);
    let data = TrainData {
        features: vec![rand_vec(model.n_inputs(), &mut rng), rand_vec(model.n_inputs(), &mut rng)],
        labels: vec![rand_vec(model.n_lines, &mut rng), rand_vec(model.n_lines, &mut rng)],
        topos: vec![Topology::reference(), Topology::reference()],
    };
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        lr: 1e-2,
        seed: 0,
        patience: 10,
    };
    let (_, curve) = train(model, &data, &data, &cfg, |_, _| {}).unwrap();
    assert_eq!(curve.epochs.len(), 1);
    // After one epoch the validation loss must sit below the loss of the
    // untrained network on the same (identical) data.
    let fresh = tiny_model(Encoding::GuidedDropout, 41);
    let mut scaled = data.clone();
    let sx = Scaler::fit(&data.features).unwrap();
    let sy = Scaler::fit(&data.labels).unwrap();
    for row in &mut scaled.features {
        let src = row.clone();
        sx.transform(&src, row);
    }
    for row in &mut scaled.labels {
        let src = row.clone();
        sy.transform(&src, row);
    }
    let mut ws = fresh.workspace();
    let initial = gridflow::neuralnet::mse(&fresh, &scaled, &mut ws).unwrap();
    assert!(
        curve.epochs[0].val_loss < initial,
        "{} !< {initial}",
        curve.epochs[0].val_loss
    );
}

#[test]
fn linear_task_is_learned() {
    // y = A x on the reference topology.
    let n_in = 5;
    let n_out = 3;
    let mut rng = seeds::derive_rng(42, "linear", &[]);
    let a: Vec<f64> = (0..n_in * n_out).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let make = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> TrainData<f64> {
        let mut data = TrainData::default();
        for _ in 0..n {
            let x = rand_vec(n_in, rng);
            let y: Vec<f64> = (0..n_out)
                .map(|r| (0..n_in).map(|c| a[r * n_in + c] * x[c]).sum())
                .collect();
            data.features.push(x);
            data.labels.push(y);
            data.topos.push(Topology::reference());
        }
        data
    };
    let train_data = make(&mut rng, 512);
    let val_data = make(&mut rng, 128);
    let model = SurrogateModel::new(
        Encoding::GuidedDropout,
        Hyper { d_enc: 16, d_shared: 32, k: 2, leaky_slope: 0.01 },
        2,
        3,
        n_out,
        7,
    );
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        lr: 1e-2,
        seed: 1,
        patience: 200,
    };
    let (_, curve) = train(model, &train_data, &val_data, &cfg, |_, _| {}).unwrap();
    let rmse = curve.best_val_loss.sqrt();
    assert!(rmse < 1e-2, "standardized val RMSE {rmse}");
    assert!(curve.epochs.len() <= 200);
}

#[test]
fn training_is_bit_deterministic() {
    let run = || {
        let model = tiny_model(Encoding::OneHot, 51);
        let mut rng = seeds::derive_rng(51, "det", &[]);
        let mut data = TrainData::default();
        for i in 0..24 {
            data.features.push(rand_vec(model.n_inputs(), &mut rng));
            data.labels.push(rand_vec(model.n_lines, &mut rng));
            data.topos.push(if i % 3 == 0 {
                Topology::reference()
            } else {
                Topology::single(i % 3)
            });
        }
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 5,
            lr: 1e-3,
            seed: 9,
            patience: 8,
        };
        train(model, &data, &data, &cfg, |_, _| {}).unwrap()
    };
    let (m1, c1) = run();
    let (m2, c2) = run();
    assert_eq!(c1, c2);
    assert!(m1
        .dec
        .w
        .iter()
        .zip(&m2.dec.w)
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

// ---------------------------------------------------------------------------
// Prediction and persistence
// ---------------------------------------------------------------------------

#[test]
fn predict_forces_disconnected_to_zero_and_roundtrips_scaler() {
    let mut model = tiny_model(Encoding::GuidedDropout, 61);
    model.scaler_x = Scaler {
        mean: vec![1.0; 5],
        std: vec![2.0; 5],
    };
    model.scaler_y = Scaler {
        mean: vec![100.0; 3],
        std: vec![50.0; 3],
    };
    // Scaler round trip at the label scale.
    let y = vec![120.0, 80.0, 310.0];
    let mut z = vec![0.0; 3];
    let mut back = vec![0.0; 3];
    model.scaler_y.transform(&y, &mut z);
    model.scaler_y.inverse_transform(&z, &mut back);
    for (a, b) in y.iter().zip(&back) {
        assert!((a - b).abs() < 1e-9);
    }

    let mut ws = model.workspace();
    let out = model
        .predict_amps(&[0.5, 1.5, -0.5, 2.0, 1.0], &Topology::single(1), &mut ws)
        .unwrap();
    assert_eq!(out.amps[1], 0.0);
    assert!(out.amps.iter().all(|&v| v >= 0.0));
}

#[test]
fn batch_prediction_equals_one_by_one() {
    let model = tiny_model(Encoding::GuidedDropout, 62);
    let mut rng = seeds::derive_rng(62, "batch-eq", &[]);
    let xs: Vec<Vec<f64>> = (0..16).map(|_| rand_vec(model.n_inputs(), &mut rng)).collect();
    let topo = Topology::single(2);
    // Shared workspace across the batch...
    let mut ws = model.workspace();
    let batch: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| model.predict_amps(x, &topo, &mut ws).unwrap().amps)
        .collect();
    // ...versus a fresh workspace per sample.
    for (x, want) in xs.iter().zip(&batch) {
        let mut fresh = model.workspace();
        let got = model.predict_amps(x, &topo, &mut fresh).unwrap().amps;
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 1e-12);
        }
    }
}

#[test]
fn model_json_roundtrip_preserves_predictions() {
    let mut model = tiny_model(Encoding::GuidedDropout, 63);
    model.scaler_x = Scaler {
        mean: vec![0.1; 5],
        std: vec![1.5; 5],
    };
    let text = model_to_json(&model);
    let loaded = model_from_json(&text).unwrap();
    assert_eq!(loaded.encoding.name(), "guided_dropout");
    assert_eq!(loaded.hyper, model.hyper);

    let mut ws1 = model.workspace();
    let mut ws2 = loaded.workspace();
    let x = vec![0.3; 5];
    let topo = Topology::single(0);
    let a = model.predict_amps(&x, &topo, &mut ws1).unwrap();
    let b = loaded.predict_amps(&x, &topo, &mut ws2).unwrap();
    for (p, q) in a.amps.iter().zip(&b.amps) {
        // Weights are stored at 9 significant digits.
        assert!((p - q).abs() < 1e-6, "{p} vs {q}");
    }
    // Loading twice from the same text is exact.
    let again = model_from_json(&text).unwrap();
    assert_eq!(loaded, again);
}

#[test]
fn f32_cast_tracks_f64_model() {
    let model = tiny_model(Encoding::GuidedDropout, 64);
    let model32 = model.cast::<f32>();
    let mut ws64 = model.workspace();
    let mut ws32 = model32.workspace();
    let x64 = vec![0.25, -0.75, 0.5, 1.25, -0.125];
    let x32: Vec<f32> = x64.iter().map(|&v| v as f32).collect();
    let topo = Topology::single(1);
    let a = model.predict_amps(&x64, &topo, &mut ws64).unwrap();
    let b = model32.predict_amps(&x32, &topo, &mut ws32).unwrap();
    for (p, q) in a.amps.iter().zip(&b.amps) {
        assert!((p - q).abs() < 1e-4, "{p} vs {q}");
    }
}

#[test]
fn learning_curve_tracks_the_best_validation_loss() {
    let model = tiny_model(Encoding::OneHot, 71);
    let mut rng = seeds::derive_rng(71, "curve", &[]);
    let mut data = TrainData::default();
    for i in 0..30 {
        data.features.push(rand_vec(model.n_inputs(), &mut rng));
        data.labels.push(rand_vec(model.n_lines, &mut rng));
        data.topos.push(Topology::single(i % 3));
    }
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 8,
        lr: 3e-3,
        seed: 4,
        patience: 12,
    };
    let (_, curve) = train(model, &data, &data, &cfg, |_, _| {}).unwrap();
    assert_eq!(curve.epochs.len(), 12);
    let min_val = curve
        .epochs
        .iter()
        .map(|e| e.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(curve.best_val_loss, min_val);
    assert_eq!(curve.epochs[curve.best_epoch].val_loss, min_val);

    // Patience cuts the curve short once validation stops improving.
    let model = tiny_model(Encoding::OneHot, 71);
    let impatient = TrainConfig { patience: 1, ..cfg };
    let (_, short) = train(model, &data, &data, &impatient, |_, _| {}).unwrap();
    assert!(short.epochs.len() <= 12);
}
