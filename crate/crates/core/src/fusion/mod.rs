//! GRU time-series encoder, text fusion, bidirectional multi-head
//! cross-attention, prediction head and loss, with exact gradients.

mod params;
pub mod tape;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use params::{
    FusionConfig, FusionKind, FusionParams, Modalities, RunningStats, NORM_LAYERS, NORM_MOMENTUM,
};
use tape::{BatchMoments, Graph, Var, BCE_CLAMP};

/// Additive score for padded keys; exp underflows to exactly zero.
const MASKED: f64 = -1e9;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// One patient's model inputs: a `T x F` matrix of standardized values
/// (missing cells already filled) and the two text embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub ts: Array2<f64>,
    pub note: Array1<f64>,
    pub rag: Array1<f64>,
    pub label: f64,
}

/// Samples packed into padded visit-major matrices.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `T_max` matrices of shape `B x F`.
    pub steps: Vec<Array2<f64>>,
    pub lengths: Vec<usize>,
    pub note: Array2<f64>,
    pub rag: Array2<f64>,
    pub labels: Array2<f64>,
}

impl Batch {
    pub fn new(samples: &[&Sample]) -> Result<Self, FusionError> {
        let first = samples.first().ok_or(FusionError::EmptyBatch)?;
        let (f, dt) = (first.ts.ncols(), first.note.len());
        let b = samples.len();
        let t_max = samples.iter().map(|s| s.ts.nrows()).max().unwrap_or(0);
        let mut steps = vec![Array2::zeros((b, f)); t_max];
        let mut note = Array2::zeros((b, dt));
        let mut rag = Array2::zeros((b, dt));
        let mut labels = Array2::zeros((b, 1));
        for (i, s) in samples.iter().enumerate() {
            if s.ts.nrows() == 0 || s.ts.ncols() != f || s.note.len() != dt || s.rag.len() != dt {
                return Err(FusionError::Dimension(format!(
                    "sample {} does not match the batch shape",
                    s.id
                )));
            }
            for (t, row) in s.ts.rows().into_iter().enumerate() {
                steps[t].row_mut(i).assign(&row);
            }
            note.row_mut(i).assign(&s.note);
            rag.row_mut(i).assign(&s.rag);
            labels[[i, 0]] = s.label;
        }
        let all = steps.iter().chain([&note, &rag, &labels]);
        if all.flat_map(|m| m.iter()).any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite("batch input".into()));
        }
        Ok(Self {
            steps,
            lengths: samples.iter().map(|s| s.ts.nrows()).collect(),
            note,
            rag,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    fn step_mask(&self, t: usize) -> Array2<f64> {
        Array2::from_shape_fn(
            (self.len(), 1),
            |(i, _)| if t < self.lengths[i] { 1.0 } else { 0.0 },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for normalization and dropout drawn from `seed`.
    Train { seed: u64 },
    /// Running statistics, no dropout.
    Eval,
}

/// Builds the computation for one batch on a [`Graph`].
struct Ctx<'a> {
    g: Graph,
    p: &'a FusionParams,
    vars: Vec<Option<Var>>,
    mode: Mode,
    moments: Vec<(usize, BatchMoments)>,
    heads: Array2<f64>,
}

/// Outputs of a batch forward pass as graph variables.
struct Forward {
    y_hat: Var,
    pooled_ts: Option<Var>,
    states: Vec<Var>,
    h_text: Option<Var>,
    text_seq: Vec<Var>,
    z_ts: Var,
    z_text: Var,
    z: Var,
    attn_ts: Option<Var>,
    attn_text: Option<Var>,
}

impl<'a> Ctx<'a> {
    fn new(p: &'a FusionParams, mode: Mode) -> Self {
        let c = &p.config;
        let dk = c.d_k();
        let heads = Array2::from_shape_fn(
            (c.d, c.n_heads),
            |(j, h)| if j / dk == h { 1.0 } else { 0.0 },
        );
        Self {
            g: Graph::new(),
            p,
            vars: vec![None; p.tensors.len()],
            mode,
            moments: Vec::new(),
            heads,
        }
    }

    fn w(&mut self, name: &str) -> Var {
        let i = self.p.index(name);
        match self.vars[i] {
            Some(v) => v,
            None => {
                let v = self.g.param(i, self.p.tensors[i].clone());
                self.vars[i] = Some(v);
                v
            }
        }
    }

    fn linear(&mut self, x: Var, w: &str, b: Option<&str>) -> Var {
        let wv = self.w(w);
        let y = self.g.matmul(x, wv);
        match b {
            Some(b) => {
                let bv = self.w(b);
                self.g.add_row(y, bv)
            }
            None => y,
        }
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.g.constant(Array2::zeros((rows, cols)))
    }

    fn gate(&mut self, x: Var, h: Var, g: &str) -> Var {
        let a = self.linear(x, &format!("gru.w_i{g}"), Some(&format!("gru.b_i{g}")));
        let b = self.linear(h, &format!("gru.w_h{g}"), Some(&format!("gru.b_h{g}")));
        let s = self.g.add(a, b);
        self.g.sigmoid(s)
    }

    /// GRU from a zero state; padded steps carry the previous state forward
    /// so the final state is each sample's last real visit.
    fn gru(&mut self, batch: &Batch) -> (Vec<Var>, Var) {
        let mut h = self.zeros(batch.len(), self.p.config.d);
        let mut states = Vec::with_capacity(batch.steps.len());
        for (t, x) in batch.steps.iter().enumerate() {
            let x = self.g.constant(x.clone());
            let r = self.gate(x, h, "r");
            let z = self.gate(x, h, "z");
            let xn = self.linear(x, "gru.w_in", Some("gru.b_in"));
            let hn = self.linear(h, "gru.w_hn", Some("gru.b_hn"));
            let rh = self.g.mul(r, hn);
            let pre = self.g.add(xn, rh);
            let n = self.g.tanh(pre);
            // h' = n + z * (h - n)
            let diff = self.g.sub(h, n);
            let zd = self.g.mul(z, diff);
            let next = self.g.add(n, zd);
            h = self.g.blend(next, h, batch.step_mask(t));
            states.push(h);
        }
        (states, h)
    }

    /// `h_Text` and the projected text key/value sequence.
    fn text(&mut self, batch: &Batch) -> (Var, Vec<Var>) {
        let m = self.p.config.modalities;
        let b = self.w("text_proj.b");
        let mut seq = Vec::new();
        let mut sum = None;
        for (on, name, data) in [
            (m.note, "text_proj.w_note", &batch.note),
            (m.rag, "text_proj.w_rag", &batch.rag),
        ] {
            if !on {
                continue;
            }
            let x = self.g.constant(data.clone());
            let wv = self.w(name);
            let xw = self.g.matmul(x, wv);
            seq.push(self.g.add_row(xw, b));
            sum = Some(match sum {
                None => xw,
                Some(s) => self.g.add(s, xw),
            });
        }
        let h_text = self.g.add_row(sum.expect("text modality present"), b);
        (h_text, seq)
    }

    fn norm(&mut self, x: Var, layer: &str) -> Var {
        let gamma = self.w(&format!("{layer}.gamma"));
        let beta = self.w(&format!("{layer}.beta"));
        let li = FusionParams::norm_index(layer);
        match self.mode {
            Mode::Train { .. } => {
                let (v, m) = self.g.norm(x, gamma, beta, None);
                self.moments.push((li, m.expect("batch moments")));
                v
            }
            Mode::Eval => {
                let rs = &self.p.running[li];
                self.g.norm(x, gamma, beta, Some((&rs.mean, &rs.var))).0
            }
        }
    }

    /// Multi-head attention of `query` over `keys`, then residual with the
    /// query, normalization, feed-forward with residual, normalization.
    /// Returns the branch output and the `B x (L * n_heads)` weights.
    fn branch(
        &mut self,
        prefix: &str,
        query: Var,
        keys: &[Var],
        valid: &Array2<bool>,
    ) -> (Var, Var) {
        let c = self.p.config;
        let q = self.linear(query, &format!("{prefix}.w_q"), None);
        let heads = self.g.constant(self.heads.clone());
        let scale = 1.0 / (c.d_k() as f64).sqrt();
        let mut scores = Vec::with_capacity(keys.len());
        let mut values = Vec::with_capacity(keys.len());
        for &key in keys {
            let k = self.linear(key, &format!("{prefix}.w_k"), None);
            values.push(self.linear(key, &format!("{prefix}.w_v"), None));
            let qk = self.g.mul(q, k);
            let s = self.g.matmul(qk, heads);
            scores.push(self.g.affine(s, scale, 0.0));
        }
        let s = self.g.hcat(&scores);
        let mask = Array2::from_shape_fn((valid.nrows(), keys.len() * c.n_heads), |(i, j)| {
            if valid[[i, j / c.n_heads]] {
                0.0
            } else {
                MASKED
            }
        });
        let mask = self.g.constant(mask);
        let s = self.g.add(s, mask);
        let attn = self.g.seg_softmax(s, c.n_heads);
        let heads_t = self.g.constant(self.heads.t().to_owned());
        let mut out = None;
        for (t, &v) in values.iter().enumerate() {
            let a = self.g.col_slice(attn, t * c.n_heads, c.n_heads);
            let wide = self.g.matmul(a, heads_t);
            let term = self.g.mul(wide, v);
            out = Some(match out {
                None => term,
                Some(o) => self.g.add(o, term),
            });
        }
        let res = self.g.add(out.expect("at least one key"), query);
        let u = self.norm(res, &format!("{prefix}.norm1"));
        let f1 = self.linear(
            u,
            &format!("{prefix}.ff.w1"),
            Some(&format!("{prefix}.ff.b1")),
        );
        let f1 = self.g.relu(f1);
        let f2 = self.linear(
            f1,
            &format!("{prefix}.ff.w2"),
            Some(&format!("{prefix}.ff.b2")),
        );
        let res2 = self.g.add(u, f2);
        (self.norm(res2, &format!("{prefix}.norm2")), attn)
    }

    fn head(&mut self, z_ts: Var, z_text: Var) -> (Var, Var) {
        let a = self.linear(z_ts, "fuse.w_ts", None);
        let b = self.linear(z_text, "fuse.w_text", Some("fuse.b"));
        let s = self.g.add(a, b);
        let z = self.g.relu(s);
        let h = self.linear(z, "head.w1", Some("head.b1"));
        let mut h = self.g.relu(h);
        if let Mode::Train { seed } = self.mode {
            let p = self.p.config.dropout;
            if p > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let shape = self.g.value(h).raw_dim();
                let mask = Array2::from_shape_simple_fn(shape, || {
                    if rng.gen_bool(1.0 - p) {
                        1.0 / (1.0 - p)
                    } else {
                        0.0
                    }
                });
                h = self.g.mul_const(h, mask);
            }
        }
        let logit = self.linear(h, "head.w2", Some("head.b2"));
        (self.g.sigmoid(logit), z)
    }

    fn forward(&mut self, batch: &Batch) -> Forward {
        let c = self.p.config;
        let m = c.modalities;
        let n = batch.len();
        let t_max = batch.steps.len();
        let (states, pooled_ts) = if m.ts {
            let (s, p) = self.gru(batch);
            (s, Some(p))
        } else {
            (Vec::new(), None)
        };
        let (h_text, text_seq) = if m.text() {
            let (h, s) = self.text(batch);
            (Some(h), s)
        } else {
            (None, Vec::new())
        };
        let ts_valid = Array2::from_shape_fn((n, t_max), |(i, t)| t < batch.lengths[i]);
        let text_valid = Array2::from_elem((n, text_seq.len()), true);

        let (mut attn_ts, mut attn_text) = (None, None);
        let (z_ts, z_text) = match (pooled_ts, h_text) {
            (Some(pt), Some(ht)) => {
                let (ts_query, text_query) = match c.fusion {
                    FusionKind::Cross => (Some(ht), Some(pt)),
                    FusionKind::TsQueryOnly => (None, Some(pt)),
                    FusionKind::TextQueryOnly => (Some(ht), None),
                    FusionKind::SelfAttention => (Some(pt), Some(ht)),
                    FusionKind::Concat => (None, None),
                };
                let z_ts = match ts_query {
                    Some(q) => {
                        let (z, a) = self.branch("ts", q, &states, &ts_valid);
                        attn_ts = Some(a);
                        z
                    }
                    None => pt,
                };
                let z_text = match text_query {
                    Some(q) => {
                        let (z, a) = self.branch("text", q, &text_seq, &text_valid);
                        attn_text = Some(a);
                        z
                    }
                    None => ht,
                };
                (z_ts, z_text)
            }
            (Some(pt), None) => (pt, self.zeros(n, c.d)),
            (None, Some(ht)) => (self.zeros(n, c.d), ht),
            (None, None) => unreachable!("config validation requires a modality"),
        };
        let (y_hat, z) = self.head(z_ts, z_text);
        Forward {
            y_hat,
            pooled_ts,
            states,
            h_text,
            text_seq,
            z_ts,
            z_text,
            z,
            attn_ts,
            attn_text,
        }
    }
}

fn check_batch(p: &FusionParams, batch: &Batch) -> Result<(), FusionError> {
    let c = &p.config;
    if batch.is_empty() {
        return Err(FusionError::EmptyBatch);
    }
    if c.modalities.ts && batch.steps.first().map_or(0, |s| s.ncols()) != c.n_features {
        return Err(FusionError::Dimension(format!(
            "expected {} time-series features",
            c.n_features
        )));
    }
    if c.modalities.text() && batch.note.ncols() != c.d_text {
        return Err(FusionError::Dimension(format!(
            "expected text embeddings of dimension {}",
            c.d_text
        )));
    }
    Ok(())
}

/// Predicted probabilities for a batch, with per-branch attention weights
/// (`B x (keys * n_heads)`, key-major) when the branch attends.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub y_hat: Vec<f64>,
    pub attn_ts: Option<Array2<f64>>,
    pub attn_text: Option<Array2<f64>>,
}

pub fn forward_batch(
    p: &FusionParams,
    batch: &Batch,
    mode: Mode,
) -> Result<BatchOutput, FusionError> {
    check_batch(p, batch)?;
    let mut ctx = Ctx::new(p, mode);
    let f = ctx.forward(batch);
    let y_hat: Vec<f64> = ctx.g.value(f.y_hat).iter().copied().collect();
    if y_hat.iter().any(|v| !v.is_finite()) {
        return Err(FusionError::NonFinite("prediction".into()));
    }
    Ok(BatchOutput {
        y_hat,
        attn_ts: f.attn_ts.map(|a| ctx.g.value(a).clone()),
        attn_text: f.attn_text.map(|a| ctx.g.value(a).clone()),
    })
}

/// Loss, gradients in parameter order, and the normalization moments seen
/// in train mode.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    pub tensors: Vec<Array2<f64>>,
    pub moments: Vec<(usize, BatchMoments)>,
}

/// Exact gradients of the mean clamped BCE over `batch`.
pub fn gradients(p: &FusionParams, batch: &Batch, mode: Mode) -> Result<Gradients, FusionError> {
    check_batch(p, batch)?;
    let mut ctx = Ctx::new(p, mode);
    let f = ctx.forward(batch);
    let loss = ctx.g.bce(f.y_hat, batch.labels.clone());
    let loss_value = ctx.g.value(loss)[[0, 0]];
    let mut tensors: Vec<Array2<f64>> = p
        .tensors
        .iter()
        .map(|t| Array2::zeros(t.raw_dim()))
        .collect();
    for (i, g) in ctx.g.backward(loss) {
        tensors[i] += &g;
    }
    for (name, t) in p.names.iter().zip(&tensors) {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NonFinite(format!("gradient of {name}")));
        }
    }
    if !loss_value.is_finite() {
        return Err(FusionError::NonFinite("loss".into()));
    }
    Ok(Gradients {
        loss: loss_value,
        tensors,
        moments: ctx.moments,
    })
}

/// Mean binary cross-entropy with predictions clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss(y_hat: &[f64], y: &[f64]) -> f64 {
    assert_eq!(y_hat.len(), y.len(), "prediction and label counts differ");
    assert!(!y.is_empty(), "bce over an empty batch");
    let sum: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    sum / y.len() as f64
}

fn row(a: &Array2<f64>) -> Array1<f64> {
    a.row(0).to_owned()
}

fn single(p: &FusionParams) -> Ctx<'_> {
    Ctx::new(p, Mode::Eval)
}

fn finite(name: &str, a: &Array2<f64>) -> Result<(), FusionError> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FusionError::NonFinite(name.into()))
    }
}

/// Runs the GRU over one `T x F` series. Returns the per-visit states
/// (`T x d`) and the final state.
pub fn encode_timeseries(
    ts: &Array2<f64>,
    p: &FusionParams,
) -> Result<(Array2<f64>, Array1<f64>), FusionError> {
    finite("time series", ts)?;
    if ts.nrows() == 0 || ts.ncols() != p.config.n_features {
        return Err(FusionError::Dimension(format!(
            "time series shape {:?}",
            ts.dim()
        )));
    }
    let batch = Batch {
        steps: ts
            .rows()
            .into_iter()
            .map(|r| r.to_owned().insert_axis(Axis(0)))
            .collect(),
        lengths: vec![ts.nrows()],
        note: Array2::zeros((1, 0)),
        rag: Array2::zeros((1, 0)),
        labels: Array2::zeros((1, 1)),
    };
    let mut ctx = single(p);
    let (states, pooled) = ctx.gru(&batch);
    let rows: Vec<_> = states
        .iter()
        .map(|&s| ctx.g.value(s).row(0).to_owned())
        .collect();
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).expect("equal state widths");
    Ok((stacked, row(ctx.g.value(pooled))))
}

/// `h_Text = W [h_Note; h_RAG] + b`.
pub fn fuse_text(
    h_note: &Array1<f64>,
    h_rag: &Array1<f64>,
    p: &FusionParams,
) -> Result<Array1<f64>, FusionError> {
    let dt = p.config.d_text;
    if h_note.len() != dt || h_rag.len() != dt {
        return Err(FusionError::Dimension(format!(
            "text embeddings of length {} and {}, expected {dt}",
            h_note.len(),
            h_rag.len()
        )));
    }
    Ok(h_note.dot(p.get("text_proj.w_note"))
        + h_rag.dot(p.get("text_proj.w_rag"))
        + row(p.get("text_proj.b")))
}

/// The two text key/value rows `[W_note h_Note + b, W_rag h_RAG + b]`.
pub fn text_sequence(h_note: &Array1<f64>, h_rag: &Array1<f64>, p: &FusionParams) -> Array2<f64> {
    let b = row(p.get("text_proj.b"));
    let a = h_note.dot(p.get("text_proj.w_note")) + &b;
    let r = h_rag.dot(p.get("text_proj.w_rag")) + &b;
    ndarray::stack(Axis(0), &[a.view(), r.view()]).expect("equal widths")
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossOutput {
    pub z_ts: Array1<f64>,
    pub z_text: Array1<f64>,
    /// `T x n_heads` weights of the text query over visit states.
    pub attn_ts: Array2<f64>,
    /// `L x n_heads` weights of the time-series query over text rows.
    pub attn_text: Array2<f64>,
}

fn per_key(a: &Array2<f64>, keys: usize, heads: usize) -> Array2<f64> {
    Array2::from_shape_fn((keys, heads), |(t, h)| a[[0, t * heads + h]])
}

/// Bidirectional cross-attention for one patient, using running
/// normalization statistics.
pub fn cross_attend(
    ts_states: &Array2<f64>,
    ts_pooled: &Array1<f64>,
    text_seq: &Array2<f64>,
    text_pooled: &Array1<f64>,
    p: &FusionParams,
) -> Result<CrossOutput, FusionError> {
    let d = p.config.d;
    if ts_states.nrows() == 0 || text_seq.nrows() == 0 {
        return Err(FusionError::Dimension(
            "attention needs at least one key per branch".into(),
        ));
    }
    if ts_states.ncols() != d
        || text_seq.ncols() != d
        || ts_pooled.len() != d
        || text_pooled.len() != d
    {
        return Err(FusionError::Dimension(format!(
            "attention inputs must have width {d}"
        )));
    }
    for (n, a) in [("visit states", ts_states), ("text sequence", text_seq)] {
        finite(n, a)?;
    }
    let mut ctx = single(p);
    let one = |v: &Array1<f64>| v.clone().insert_axis(Axis(0));
    let keys = |ctx: &mut Ctx, m: &Array2<f64>| -> Vec<Var> {
        m.rows()
            .into_iter()
            .map(|r| ctx.g.constant(r.to_owned().insert_axis(Axis(0))))
            .collect()
    };
    let ts_keys = keys(&mut ctx, ts_states);
    let text_keys = keys(&mut ctx, text_seq);
    let q_text = ctx.g.constant(one(text_pooled));
    let q_ts = ctx.g.constant(one(ts_pooled));
    let (z_ts, a_ts) = ctx.branch(
        "ts",
        q_text,
        &ts_keys,
        &Array2::from_elem((1, ts_keys.len()), true),
    );
    let (z_text, a_text) = ctx.branch(
        "text",
        q_ts,
        &text_keys,
        &Array2::from_elem((1, text_keys.len()), true),
    );
    let h = p.config.n_heads;
    for v in [z_ts, z_text] {
        finite("attention output", ctx.g.value(v))?;
    }
    Ok(CrossOutput {
        z_ts: row(ctx.g.value(z_ts)),
        z_text: row(ctx.g.value(z_text)),
        attn_ts: per_key(ctx.g.value(a_ts), ts_keys.len(), h),
        attn_text: per_key(ctx.g.value(a_text), text_keys.len(), h),
    })
}

/// Fusion MLP and prediction head. `Mode::Train { seed }` applies seeded
/// dropout; `Mode::Eval` is deterministic.
pub fn fuse_and_predict(
    z_ts: &Array1<f64>,
    z_text: &Array1<f64>,
    p: &FusionParams,
    mode: Mode,
) -> Result<f64, FusionError> {
    let d = p.config.d;
    if z_ts.len() != d || z_text.len() != d {
        return Err(FusionError::Dimension(format!(
            "fusion inputs must have width {d}"
        )));
    }
    let mut ctx = Ctx::new(p, mode);
    let a = ctx.g.constant(z_ts.clone().insert_axis(Axis(0)));
    let b = ctx.g.constant(z_text.clone().insert_axis(Axis(0)));
    let (y, _) = ctx.head(a, b);
    Ok(ctx.g.value(y)[[0, 0]])
}

/// Every intermediate representation for one patient in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub states: Option<Array2<f64>>,
    pub h_ts: Option<Array1<f64>>,
    pub h_note: Array1<f64>,
    pub h_rag: Array1<f64>,
    pub h_text: Option<Array1<f64>>,
    pub text_seq: Option<Array2<f64>>,
    pub z_ts: Array1<f64>,
    pub z_text: Array1<f64>,
    pub z: Array1<f64>,
    pub y_hat: f64,
}

pub fn forward_one(sample: &Sample, p: &FusionParams) -> Result<ForwardOutput, FusionError> {
    let batch = Batch::new(&[sample])?;
    check_batch(p, &batch)?;
    let mut ctx = single(p);
    let f = ctx.forward(&batch);
    let val = |v: Var| row(ctx.g.value(v));
    let states = (!f.states.is_empty()).then(|| {
        let rows: Vec<Array1<f64>> = f.states.iter().map(|&s| val(s)).collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::stack(Axis(0), &views).expect("equal widths")
    });
    let text_seq = (!f.text_seq.is_empty()).then(|| {
        let rows: Vec<Array1<f64>> = f.text_seq.iter().map(|&s| val(s)).collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        ndarray::stack(Axis(0), &views).expect("equal widths")
    });
    Ok(ForwardOutput {
        states,
        h_ts: f.pooled_ts.map(val),
        h_note: sample.note.clone(),
        h_rag: sample.rag.clone(),
        h_text: f.h_text.map(val),
        text_seq,
        z_ts: val(f.z_ts),
        z_text: val(f.z_text),
        z: val(f.z),
        y_hat: ctx.g.value(f.y_hat)[[0, 0]],
    })
}

/// Eval-mode probabilities in chunks of `batch_size`.
pub fn predict(
    p: &FusionParams,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<f64>, FusionError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        out.extend(forward_batch(p, &Batch::new(&refs)?, Mode::Eval)?.y_hat);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
