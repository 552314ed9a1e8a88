//! The learning core: a dense feed-forward surrogate whose hidden layer is
//! partly made of per-line conditional blocks, gated by which lines are
//! disconnected. Includes the alternative topology encodings it is compared
//! against, standardization, hand-derived backpropagation, and Adam.
//!
//! Architecture (all encodings share the trunk):
//!
//! ```text
//! productions -> enc_prod \
//!                           e -> shared ------> h_shared \
//! loads[+topo] -> enc_load /                               concat -> dec -> flows
//!                           e -> cond[line] --> h_cond   /
//!                                  (gated per line)
//! ```
//!
//! The conditional block of line `l` is active only when `l` is
//! disconnected; with no line out the network reduces to the shared path.
//! Disconnecting a pair of lines activates both blocks, which is what lets a
//! network trained on single-line outages answer two-line cases. The other
//! encodings instead append topology information to the input: a 0/1 vector
//! per line (`OneHot`), a single line-id scalar (`OneVar`), or nothing at
//! all (`OneModel`, one network bound to one fixed topology).

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::powerflow::{FlowVector, Topology};
use crate::scalar::Real;
use crate::seeds;
use crate::util::round_sig9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetError {
    #[error("need at least 2 rows to fit a scaler, got {0}")]
    TooFewRows(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("a OneModel network only answers the topology it was trained for")]
    WrongTopologyForOneModel,
    #[error("encoding `{encoding}` cannot represent this topology: {reason}")]
    UnsupportedTopology {
        encoding: &'static str,
        reason: String,
    },
    #[error("line index {index} out of range for {len} lines")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("model file error: {0}")]
    ModelFile(String),
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

/// Per-feature standardizer. Features with population std below 1e-9 get
/// their std forced to 1 so constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Real> Scaler<T> {
    pub fn identity(n: usize) -> Self {
        Self {
            mean: vec![T::zero(); n],
            std: vec![T::one(); n],
        }
    }

    pub fn fit(rows: &[Vec<T>]) -> Result<Self, NetError> {
        if rows.len() < 2 {
            return Err(NetError::TooFewRows(rows.len()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(NetError::ShapeMismatch("ragged feature matrix".into()));
        }
        let count = T::cast_usize(rows.len());
        let mut mean = vec![T::zero(); n];
        for row in rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m = *m / count;
        }
        let mut var = vec![T::zero(); n];
        for row in rows {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let floor = T::cast_from(1e-9);
        let std = var
            .iter()
            .map(|&s| {
                let sd = (s / count).sqrt();
                if sd < floor {
                    T::one()
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform(&self, x: &[T], out: &mut [T]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }

    pub fn inverse_transform(&self, z: &[T], out: &mut [T]) {
        for i in 0..z.len() {
            out[i] = z[i] * self.std[i] + self.mean[i];
        }
    }

    pub fn cast<U: Real>(&self) -> Scaler<U> {
        Scaler {
            mean: self.mean.iter().map(|&v| U::cast_from(v.cast_to())).collect(),
            std: self.std.iter().map(|&v| U::cast_from(v.cast_to())).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Topology encodings and masks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// Per-line conditional hidden blocks, activated by disconnection.
    GuidedDropout,
    /// One extra 0/1 input per line.
    OneHot,
    /// One extra scalar input: 0 for none, `line + 1` for a disconnection.
    OneVar,
    /// A dedicated network for one fixed topology; no topology input.
    OneModel { topology: Topology },
}

impl Encoding {
    pub fn name(&self) -> &'static str {
        match self {
            Encoding::GuidedDropout => "guided_dropout",
            Encoding::OneHot => "one_hot",
            Encoding::OneVar => "one_var",
            Encoding::OneModel { .. } => "one_model",
        }
    }

    /// Whether the encoding can answer topologies with several disconnected
    /// lines after training on single-line cases only.
    pub fn supports_multi_line(&self) -> bool {
        matches!(self, Encoding::GuidedDropout | Encoding::OneHot)
    }

    fn topo_feature_width(&self, n_lines: usize) -> usize {
        match self {
            Encoding::GuidedDropout | Encoding::OneModel { .. } => 0,
            Encoding::OneHot => n_lines,
            Encoding::OneVar => 1,
        }
    }
}

/// Binary gate over the `n_lines * k` conditional units: block `l` is
/// all-ones iff line `l` is disconnected. Unions of disjoint topologies OR
/// their masks, which is what makes multi-line inference well-defined.
pub fn topology_mask(topo: &Topology, n_lines: usize, k: usize) -> Result<Vec<bool>, NetError> {
    if let Some(index) = topo.iter().find(|&i| i >= n_lines) {
        return Err(NetError::IndexOutOfRange { index, len: n_lines });
    }
    let mut mask = vec![false; n_lines * k];
    for line in topo.iter() {
        mask[line * k..(line + 1) * k].fill(true);
    }
    Ok(mask)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// One linear layer, row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Dense<T> {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            w: vec![T::zero(); rows * cols],
            b: vec![T::zero(); rows],
        }
    }

    fn init(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        // Fan-based uniform init, biases zero.
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let w = (0..rows * cols)
            .map(|_| T::cast_from((rng.random::<f64>() * 2.0 - 1.0) * a))
            .collect();
        Self {
            rows,
            cols,
            w,
            b: vec![T::zero(); rows],
        }
    }

    #[inline]
    fn forward(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = self.b[r];
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            out[r] = acc;
        }
    }

    fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            rows: self.rows,
            cols: self.cols,
            w: self.w.iter().map(|&v| U::cast_from(v.cast_to())).collect(),
            b: self.b.iter().map(|&v| U::cast_from(v.cast_to())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    /// Width of each input sub-encoder.
    pub d_enc: usize,
    /// Width of the shared latent layer.
    pub d_shared: usize,
    /// Conditional units per line (guided dropout only).
    pub k: usize,
    /// Leaky-ReLU negative slope; the output head is linear.
    pub leaky_slope: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            d_enc: 64,
            d_shared: 64,
            k: 5,
            leaky_slope: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel<T> {
    pub encoding: Encoding,
    pub hyper: Hyper,
    /// Number of production features (one per generator).
    pub n_prod: usize,
    /// Number of load features (one per bus).
    pub n_load: usize,
    /// Number of lines = number of outputs.
    pub n_lines: usize,
    pub scaler_x: Scaler<T>,
    pub scaler_y: Scaler<T>,
    pub enc_prod: Dense<T>,
    pub enc_load: Dense<T>,
    pub shared: Dense<T>,
    /// Per-line conditional blocks; empty unless guided dropout.
    pub cond: Vec<Dense<T>>,
    pub dec: Dense<T>,
}

impl<T: Real> SurrogateModel<T> {
    pub fn new(
        encoding: Encoding,
        hyper: Hyper,
        n_prod: usize,
        n_load: usize,
        n_lines: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeds::derive_rng(seed, "model-init", &[]);
        let e_width = 2 * hyper.d_enc;
        let load_in = n_load + encoding.topo_feature_width(n_lines);
        let gd = matches!(encoding, Encoding::GuidedDropout);
        let enc_prod = Dense::init(hyper.d_enc, n_prod, &mut rng);
        let enc_load = Dense::init(hyper.d_enc, load_in, &mut rng);
        let shared = Dense::init(hyper.d_shared, e_width, &mut rng);
        let cond: Vec<Dense<T>> = if gd {
            (0..n_lines)
                .map(|_| Dense::init(hyper.k, e_width, &mut rng))
                .collect()
        } else {
            Vec::new()
        };
        let dec_in = hyper.d_shared + if gd { n_lines * hyper.k } else { 0 };
        Self {
            enc_prod,
            enc_load,
            shared,
            cond,
            dec: Dense::init(n_lines, dec_in, &mut rng),
            scaler_x: Scaler::identity(n_prod + n_load),
            scaler_y: Scaler::identity(n_lines),
            encoding,
            hyper,
            n_prod,
            n_load,
            n_lines,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_prod + self.n_load
    }

    /// Deterministic parameter-group order shared by gradients and Adam.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["enc_prod".into(), "enc_load".into(), "shared".into()];
        names.extend((0..self.cond.len()).map(|i| format!("cond[{i}]")));
        names.push("dec".into());
        names
    }

    /// Parameter groups in a fixed order (used by gradients, Adam, and
    /// finite-difference checks).
    pub fn layers(&self) -> Vec<&Dense<T>> {
        let mut v = vec![&self.enc_prod, &self.enc_load, &self.shared];
        v.extend(self.cond.iter());
        v.push(&self.dec);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense<T>> {
        let mut v = vec![&mut self.enc_prod, &mut self.enc_load, &mut self.shared];
        v.extend(self.cond.iter_mut());
        v.push(&mut self.dec);
        v
    }

    pub fn n_parameters(&self) -> usize {
        self.layers().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn workspace(&self) -> Workspace<T> {
        let e_width = 2 * self.hyper.d_enc;
        Workspace {
            load_in: vec![T::zero(); self.enc_load.cols],
            u_prod: vec![T::zero(); self.hyper.d_enc],
            u_load: vec![T::zero(); self.hyper.d_enc],
            e: vec![T::zero(); e_width],
            u_shared: vec![T::zero(); self.hyper.d_shared],
            h_shared: vec![T::zero(); self.hyper.d_shared],
            u_cond: vec![T::zero(); self.cond.len() * self.hyper.k],
            h_cond: vec![T::zero(); self.cond.len() * self.hyper.k],
            active: Vec::new(),
            scaled: vec![T::zero(); self.n_inputs()],
            y: vec![T::zero(); self.n_lines],
        }
    }

    fn check_topology(&self, topo: &Topology) -> Result<(), NetError> {
        if let Some(index) = topo.iter().find(|&i| i >= self.n_lines) {
            return Err(NetError::IndexOutOfRange {
                index,
                len: self.n_lines,
            });
        }
        match &self.encoding {
            Encoding::OneModel { topology } if topology != topo => {
                Err(NetError::WrongTopologyForOneModel)
            }
            Encoding::OneVar if topo.len() > 1 => Err(NetError::UnsupportedTopology {
                encoding: "one_var",
                reason: format!("{} lines disconnected, the line-id input holds one", topo.len()),
            }),
            _ => Ok(()),
        }
    }

    /// Forward pass on standardized inputs; `ws.y` receives the standardized
    /// prediction. Only active conditional blocks are evaluated: masked
    /// blocks contribute exact zeros, so with no line disconnected the
    /// output is independent of every conditional weight.
    pub fn forward(&self, x: &[T], topo: &Topology, ws: &mut Workspace<T>) -> Result<(), NetError> {
        if x.len() != self.n_inputs() {
            return Err(NetError::ShapeMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.n_inputs()
            )));
        }
        self.check_topology(topo)?;
        let slope = T::cast_from(self.hyper.leaky_slope);
        let d_enc = self.hyper.d_enc;
        let k = self.hyper.k;

        let (x_prod, x_load) = x.split_at(self.n_prod);

        // Load-side input, with the encoding's topology features appended.
        ws.load_in[..self.n_load].copy_from_slice(x_load);
        match &self.encoding {
            Encoding::OneHot => {
                ws.load_in[self.n_load..].fill(T::zero());
                for line in topo.iter() {
                    ws.load_in[self.n_load + line] = T::one();
                }
            }
            Encoding::OneVar => {
                ws.load_in[self.n_load] = match topo.iter().next() {
                    Some(line) => T::cast_usize(line + 1),
                    None => T::zero(),
                };
            }
            Encoding::GuidedDropout | Encoding::OneModel { .. } => {}
        }

        self.enc_prod.forward(x_prod, &mut ws.u_prod);
        self.enc_load.forward(&ws.load_in, &mut ws.u_load);
        for i in 0..d_enc {
            ws.e[i] = leaky(ws.u_prod[i], slope);
            ws.e[d_enc + i] = leaky(ws.u_load[i], slope);
        }

        self.shared.forward(&ws.e, &mut ws.u_shared);
        for i in 0..self.hyper.d_shared {
            ws.h_shared[i] = leaky(ws.u_shared[i], slope);
        }

        ws.active.clear();
        if matches!(self.encoding, Encoding::GuidedDropout) {
            ws.active.extend(topo.iter());
        }
        ws.h_cond.fill(T::zero());
        for &line in &ws.active {
            let block = &self.cond[line];
            block.forward(&ws.e, &mut ws.u_cond[line * k..(line + 1) * k]);
            for i in line * k..(line + 1) * k {
                ws.h_cond[i] = leaky(ws.u_cond[i], slope);
            }
        }

        // Decoder over [h_shared ++ h_cond], skipping inactive blocks.
        let ds = self.hyper.d_shared;
        for r in 0..self.n_lines {
            let row = &self.dec.w[r * self.dec.cols..(r + 1) * self.dec.cols];
            let mut acc = self.dec.b[r];
            for c in 0..ds {
                acc += row[c] * ws.h_shared[c];
            }
            for &line in &ws.active {
                let off = ds + line * k;
                for i in 0..k {
                    acc += row[off + i] * ws.h_cond[line * k + i];
                }
            }
            ws.y[r] = acc;
        }
        Ok(())
    }

    /// Predict line currents in Amperes from raw (unscaled) injection
    /// features. Entries for branches disconnected in `topo` are forced to
    /// exactly 0, and magnitudes are clamped at zero.
    pub fn predict_amps(
        &self,
        x_raw: &[T],
        topo: &Topology,
        ws: &mut Workspace<T>,
    ) -> Result<FlowVector, NetError> {
        let mut out = vec![0.0; self.n_lines];
        self.predict_amps_into(x_raw, topo, ws, &mut out)?;
        Ok(FlowVector { amps: out })
    }

    /// Allocation-free variant of [`predict_amps`](Self::predict_amps) for
    /// batched inference.
    pub fn predict_amps_into(
        &self,
        x_raw: &[T],
        topo: &Topology,
        ws: &mut Workspace<T>,
        out: &mut [f64],
    ) -> Result<(), NetError> {
        if x_raw.len() != self.scaler_x.len() {
            return Err(NetError::ShapeMismatch(format!(
                "input has {} features, scaler expects {}",
                x_raw.len(),
                self.scaler_x.len()
            )));
        }
        if out.len() != self.n_lines {
            return Err(NetError::ShapeMismatch(format!(
                "output buffer has {} slots, model predicts {}",
                out.len(),
                self.n_lines
            )));
        }
        let mut scaled = std::mem::take(&mut ws.scaled);
        self.scaler_x.transform(x_raw, &mut scaled);
        let res = self.forward(&scaled, topo, ws);
        ws.scaled = scaled;
        res?;
        for i in 0..self.n_lines {
            let v = ws.y[i] * self.scaler_y.std[i] + self.scaler_y.mean[i];
            out[i] = v.cast_to().max(0.0);
        }
        for line in topo.iter() {
            out[line] = 0.0;
        }
        Ok(())
    }

    /// Cast all parameters and scalers to another precision.
    pub fn cast<U: Real>(&self) -> SurrogateModel<U> {
        SurrogateModel {
            encoding: self.encoding.clone(),
            hyper: self.hyper.clone(),
            n_prod: self.n_prod,
            n_load: self.n_load,
            n_lines: self.n_lines,
            scaler_x: self.scaler_x.cast(),
            scaler_y: self.scaler_y.cast(),
            enc_prod: self.enc_prod.cast(),
            enc_load: self.enc_load.cast(),
            shared: self.shared.cast(),
            cond: self.cond.iter().map(Dense::cast).collect(),
            dec: self.dec.cast(),
        }
    }
}

#[inline]
fn leaky<T: Real>(v: T, slope: T) -> T {
    if v >= T::zero() {
        v
    } else {
        v * slope
    }
}

#[inline]
fn leaky_grad<T: Real>(v: T, slope: T) -> T {
    if v >= T::zero() {
        T::one()
    } else {
        slope
    }
}

/// Reusable forward/backward buffers.
#[derive(Debug, Clone)]
pub struct Workspace<T> {
    load_in: Vec<T>,
    u_prod: Vec<T>,
    u_load: Vec<T>,
    e: Vec<T>,
    u_shared: Vec<T>,
    h_shared: Vec<T>,
    u_cond: Vec<T>,
    h_cond: Vec<T>,
    active: Vec<usize>,
    scaled: Vec<T>,
    pub y: Vec<T>,
}

// ---------------------------------------------------------------------------
// Loss and gradients
// ---------------------------------------------------------------------------

/// Gradients shaped exactly like the model's parameter groups, in
/// `layer_names()` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &SurrogateModel<T>) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.rows, l.cols))
                .collect(),
        }
    }
}

/// One training example, in standardized space.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, T> {
    pub x: &'a [T],
    pub y: &'a [T],
    pub topo: &'a Topology,
}

/// Mean-square error over the batch and all outputs, with reverse-mode
/// gradients for every parameter group. Conditional blocks never active in
/// the batch receive exactly zero gradient.
pub fn loss_and_grads<T: Real>(
    model: &SurrogateModel<T>,
    batch: &[Example<'_, T>],
    ws: &mut Workspace<T>,
    grads: &mut Gradients<T>,
) -> Result<T, NetError> {
    if batch.is_empty() {
        return Err(NetError::ShapeMismatch("empty batch".into()));
    }
    for g in &mut grads.layers {
        g.w.fill(T::zero());
        g.b.fill(T::zero());
    }
    let slope = T::cast_from(model.hyper.leaky_slope);
    let d_enc = model.hyper.d_enc;
    let ds = model.hyper.d_shared;
    let k = model.hyper.k;
    let e_width = 2 * d_enc;
    let dec_cols = model.dec.cols;
    let norm = T::cast_usize(batch.len()) * T::cast_usize(model.n_lines);
    let two = T::cast_from(2.0);
    let n_layers = grads.layers.len();

    let mut g_y = vec![T::zero(); model.n_lines];
    let mut g_e = vec![T::zero(); e_width];

    let mut loss = T::zero();
    for ex in batch {
        if ex.y.len() != model.n_lines {
            return Err(NetError::ShapeMismatch(format!(
                "label has {} entries, model predicts {}",
                ex.y.len(),
                model.n_lines
            )));
        }
        model.forward(ex.x, ex.topo, ws)?;

        for i in 0..model.n_lines {
            let d = ws.y[i] - ex.y[i];
            loss += d * d / norm;
            g_y[i] = two * d / norm;
        }

        // Decoder: y = b + W [h_shared ++ h_cond].
        {
            let gdec = &mut grads.layers[n_layers - 1];
            for r in 0..model.n_lines {
                let gy = g_y[r];
                gdec.b[r] += gy;
                let row = &mut gdec.w[r * dec_cols..(r + 1) * dec_cols];
                for c in 0..ds {
                    row[c] += gy * ws.h_shared[c];
                }
                for &line in &ws.active {
                    let off = ds + line * k;
                    for i in 0..k {
                        row[off + i] += gy * ws.h_cond[line * k + i];
                    }
                }
            }
        }

        // Shared path: g_h_shared = W_dec[:, :ds]^T g_y, then through the
        // activation and the shared layer into g_e.
        g_e.fill(T::zero());
        {
            let gshared = &mut grads.layers[2];
            for i in 0..ds {
                let mut gh = T::zero();
                for r in 0..model.n_lines {
                    gh += model.dec.w[r * dec_cols + i] * g_y[r];
                }
                let gu = gh * leaky_grad(ws.u_shared[i], slope);
                gshared.b[i] += gu;
                let row = &mut gshared.w[i * e_width..(i + 1) * e_width];
                for c in 0..e_width {
                    row[c] += gu * ws.e[c];
                    g_e[c] += model.shared.w[i * e_width + c] * gu;
                }
            }
        }

        // Active conditional blocks only.
        for &line in &ws.active {
            let gcond = &mut grads.layers[3 + line];
            let block = &model.cond[line];
            for i in 0..k {
                let col = ds + line * k + i;
                let mut gh = T::zero();
                for r in 0..model.n_lines {
                    gh += model.dec.w[r * dec_cols + col] * g_y[r];
                }
                let gu = gh * leaky_grad(ws.u_cond[line * k + i], slope);
                gcond.b[i] += gu;
                let row = &mut gcond.w[i * e_width..(i + 1) * e_width];
                for c in 0..e_width {
                    row[c] += gu * ws.e[c];
                    g_e[c] += block.w[i * e_width + c] * gu;
                }
            }
        }

        // Sub-encoders.
        let (x_prod, _) = ex.x.split_at(model.n_prod);
        {
            let gp = &mut grads.layers[0];
            for i in 0..d_enc {
                let gu = g_e[i] * leaky_grad(ws.u_prod[i], slope);
                gp.b[i] += gu;
                let row = &mut gp.w[i * model.n_prod..(i + 1) * model.n_prod];
                for c in 0..model.n_prod {
                    row[c] += gu * x_prod[c];
                }
            }
        }
        {
            let gl = &mut grads.layers[1];
            let liw = model.enc_load.cols;
            for i in 0..d_enc {
                let gu = g_e[d_enc + i] * leaky_grad(ws.u_load[i], slope);
                gl.b[i] += gu;
                let row = &mut gl.w[i * liw..(i + 1) * liw];
                for c in 0..liw {
                    row[c] += gu * ws.load_in[c];
                }
            }
        }
    }
    Ok(loss)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per parameter plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Dense<T>>,
    v: Vec<Dense<T>>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &SurrogateModel<T>, hyper: AdamHyper) -> Self {
        let zeros: Vec<Dense<T>> = model
            .layers()
            .iter()
            .map(|l| Dense::zeros(l.rows, l.cols))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    model: &mut SurrogateModel<T>,
    grads: &Gradients<T>,
) -> Result<(), NetError> {
    let n_layers = grads.layers.len();
    if state.m.len() != n_layers {
        return Err(NetError::ShapeMismatch(format!(
            "adam state has {} groups, gradients {}",
            state.m.len(),
            n_layers
        )));
    }
    state.t += 1;
    let b1 = T::cast_from(state.hyper.beta1);
    let b2 = T::cast_from(state.hyper.beta2);
    let lr = T::cast_from(state.hyper.lr);
    let eps = T::cast_from(state.hyper.eps);
    let one = T::one();
    let bc1 = one - T::cast_from(state.hyper.beta1.powi(state.t as i32));
    let bc2 = one - T::cast_from(state.hyper.beta2.powi(state.t as i32));

    let mut params = model.layers_mut();
    for (idx, layer) in params.iter_mut().enumerate() {
        let g = &grads.layers[idx];
        if g.rows != layer.rows || g.cols != layer.cols {
            return Err(NetError::ShapeMismatch(format!(
                "gradient group {idx} is {}x{}, parameters are {}x{}",
                g.rows, g.cols, layer.rows, layer.cols
            )));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for (slot, (grad, (mi, vi))) in [
            (&mut layer.w, (&g.w, (&mut m.w, &mut v.w))),
            (&mut layer.b, (&g.b, (&mut m.b, &mut v.b))),
        ] {
            for i in 0..slot.len() {
                let gi = grad[i];
                mi[i] = b1 * mi[i] + (one - b1) * gi;
                vi[i] = b2 * vi[i] + (one - b2) * gi * gi;
                let m_hat = mi[i] / bc1;
                let v_hat = vi[i] / bc2;
                slot[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Standardized training data: parallel feature/label/topology arrays.
#[derive(Debug, Clone, Default)]
pub struct TrainData<T> {
    pub features: Vec<Vec<T>>,
    pub labels: Vec<Vec<T>>,
    pub topos: Vec<Topology>,
}

impl<T: Real> TrainData<T> {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            lr: 3e-4,
            seed: 0,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights the returned model carries.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mini-batch Adam on raw (unstandardized) data. Scalers are fitted on the
/// train split only, then both splits are standardized with them. The
/// returned model carries the weights of the best validation epoch.
/// Deterministic for a fixed config.
pub fn train<T: Real>(
    mut model: SurrogateModel<T>,
    train_split: &TrainData<T>,
    val_split: &TrainData<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&SurrogateModel<T>, &EpochStats),
) -> Result<(SurrogateModel<T>, LearningCurve), NetError> {
    if train_split.is_empty() || val_split.is_empty() {
        return Err(NetError::ShapeMismatch("empty train or validation split".into()));
    }
    model.scaler_x = Scaler::fit(&train_split.features)?;
    model.scaler_y = Scaler::fit(&train_split.labels)?;
    let scale = |split: &TrainData<T>| -> TrainData<T> {
        let mut out = TrainData {
            features: split.features.clone(),
            labels: split.labels.clone(),
            topos: split.topos.clone(),
        };
        for row in &mut out.features {
            let src = row.clone();
            model.scaler_x.transform(&src, row);
        }
        for row in &mut out.labels {
            let src = row.clone();
            model.scaler_y.transform(&src, row);
        }
        out
    };
    let train_scaled = scale(train_split);
    let val_scaled = scale(val_split);

    let mut ws = model.workspace();
    let mut grads = Gradients::zeros_like(&model);
    let mut adam = AdamState::new(&model, AdamHyper::with_lr(cfg.lr));

    let mut order: Vec<usize> = (0..train_scaled.len()).collect();
    let mut curve = LearningCurve::default();
    let mut best_val = f64::INFINITY;
    let mut best_weights = model.clone();
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;

    for epoch in 0..cfg.epochs {
        let mut rng = seeds::derive_rng(cfg.seed, "epoch-shuffle", &[epoch as u64]);
        order.shuffle(&mut rng);

        let mut sse = T::zero();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<Example<'_, T>> = chunk
                .iter()
                .map(|&i| Example {
                    x: &train_scaled.features[i],
                    y: &train_scaled.labels[i],
                    topo: &train_scaled.topos[i],
                })
                .collect();
            let loss = loss_and_grads(&model, &batch, &mut ws, &mut grads)?;
            adam_step(&mut adam, &mut model, &grads)?;
            sse += loss * T::cast_usize(chunk.len());
            seen += chunk.len();
        }
        let train_loss = (sse / T::cast_usize(seen)).cast_to();
        let val_loss = mse(&model, &val_scaled, &mut ws)?.cast_to();

        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
        };
        on_epoch(&model, &stats);
        curve.epochs.push(stats);

        if val_loss < best_val {
            best_val = val_loss;
            best_weights = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    curve.best_epoch = best_epoch;
    curve.best_val_loss = best_val;
    Ok((best_weights, curve))
}

/// Mean-square error of a model on standardized data.
pub fn mse<T: Real>(
    model: &SurrogateModel<T>,
    data: &TrainData<T>,
    ws: &mut Workspace<T>,
) -> Result<T, NetError> {
    if data.is_empty() {
        return Err(NetError::ShapeMismatch("empty split".into()));
    }
    let mut sse = T::zero();
    for i in 0..data.len() {
        model.forward(&data.features[i], &data.topos[i], ws)?;
        for (p, t) in ws.y.iter().zip(&data.labels[i]) {
            let d = *p - *t;
            sse += d * d;
        }
    }
    Ok(sse / (T::cast_usize(data.len()) * T::cast_usize(model.n_lines)))
}

// ---------------------------------------------------------------------------
// Model file
// ---------------------------------------------------------------------------

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: SurrogateModel<f64>,
}

/// Serialize a model to the single-document JSON format, weights rounded to
/// 9 significant digits.
pub fn model_to_json(model: &SurrogateModel<f64>) -> String {
    let mut quantized = model.clone();
    for layer in quantized.layers_mut() {
        for v in layer.w.iter_mut().chain(layer.b.iter_mut()) {
            *v = round_sig9(*v);
        }
    }
    for v in quantized
        .scaler_x
        .mean
        .iter_mut()
        .chain(quantized.scaler_x.std.iter_mut())
        .chain(quantized.scaler_y.mean.iter_mut())
        .chain(quantized.scaler_y.std.iter_mut())
    {
        *v = round_sig9(*v);
    }
    serde_json::to_string(&ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        model: quantized,
    })
    .expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<SurrogateModel<f64>, NetError> {
    let file: ModelFile =
        serde_json::from_str(text).map_err(|e| NetError::ModelFile(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(NetError::ModelFile(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    Ok(file.model)
}

/// Injection features in model order: active generation per gen, then
/// active load per bus. Reactive quantities are not inputs.
pub fn injection_features(p_gen: &[f64], p_load: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(p_gen.len() + p_load.len());
    x.extend_from_slice(p_gen);
    x.extend_from_slice(p_load);
    x
}
