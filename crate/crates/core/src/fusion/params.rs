use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FusionError;

/// Which inputs the model sees. Absent inputs are never read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Modalities {
    pub ts: bool,
    pub note: bool,
    pub rag: bool,
}

impl Modalities {
    pub const ALL: Self = Self {
        ts: true,
        note: true,
        rag: true,
    };
    pub const TS_ONLY: Self = Self {
        ts: true,
        note: false,
        rag: false,
    };
    pub const NOTE_ONLY: Self = Self {
        ts: false,
        note: true,
        rag: false,
    };
    pub const RAG_ONLY: Self = Self {
        ts: false,
        note: false,
        rag: true,
    };
    pub const TS_NOTE: Self = Self {
        ts: true,
        note: true,
        rag: false,
    };
    pub const TS_RAG: Self = Self {
        ts: true,
        note: false,
        rag: true,
    };
    pub const NOTE_RAG: Self = Self {
        ts: false,
        note: true,
        rag: true,
    };

    pub fn text(&self) -> bool {
        self.note || self.rag
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.ts, "TS"), (self.note, "Note"), (self.rag, "RAG")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        parts.join("+")
    }
}

/// How the two modality representations interact before the final MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    /// Each modality attends over the other.
    #[default]
    Cross,
    /// Only the time-series query attends over the text sequence.
    TsQueryOnly,
    /// Only the text query attends over the visit states.
    TextQueryOnly,
    /// Each modality attends over itself.
    SelfAttention,
    /// Pooled vectors are concatenated with no attention.
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub n_features: usize,
    pub d: usize,
    pub d_text: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_h: usize,
    pub dropout: f64,
    pub modalities: Modalities,
    pub fusion: FusionKind,
}

impl FusionConfig {
    pub fn new(n_features: usize, d: usize, d_text: usize) -> Self {
        let n_heads = if d.is_multiple_of(4) { 4 } else { 1 };
        Self {
            n_features,
            d,
            d_text,
            n_heads,
            d_ff: 4 * d,
            d_h: d,
            dropout: 0.25,
            modalities: Modalities::ALL,
            fusion: FusionKind::Cross,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d / self.n_heads
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let bad = |m: &str| Err(FusionError::Config(m.to_string()));
        if self.n_features == 0
            || self.d == 0
            || self.d_text == 0
            || self.d_ff == 0
            || self.d_h == 0
        {
            return bad("all dimensions must be positive");
        }
        if self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return bad("d must be divisible by n_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.modalities.ts || self.modalities.text()) {
            return bad("at least one modality is required");
        }
        Ok(())
    }
}

pub const NORM_LAYERS: [&str; 4] = ["ts.norm1", "ts.norm2", "text.norm1", "text.norm2"];
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

/// All learnable tensors, stored by name in a fixed order, plus the
/// normalization running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub config: FusionConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Array2<f64>>,
    pub running: Vec<RunningStats>,
}

/// `(name, rows, cols, init bound or None for constant init)`.
fn layout(c: &FusionConfig) -> Vec<(String, usize, usize, Init)> {
    let (f, d, dt) = (c.n_features, c.d, c.d_text);
    let gru = 1.0 / (d as f64).sqrt();
    let fan = |n: usize| Init::Uniform(1.0 / (n as f64).sqrt());
    let mut out = Vec::new();
    let mut push =
        |name: &str, r: usize, cols: usize, init: Init| out.push((name.to_string(), r, cols, init));
    for g in ["r", "z", "n"] {
        push(&format!("gru.w_i{g}"), f, d, Init::Uniform(gru));
    }
    for g in ["r", "z", "n"] {
        push(&format!("gru.w_h{g}"), d, d, Init::Uniform(gru));
    }
    for g in ["r", "z", "n"] {
        push(&format!("gru.b_i{g}"), 1, d, Init::Uniform(gru));
        push(&format!("gru.b_h{g}"), 1, d, Init::Uniform(gru));
    }
    // the two row blocks of the (2 d_text x d) text projection
    push("text_proj.w_note", dt, d, fan(2 * dt));
    push("text_proj.w_rag", dt, d, fan(2 * dt));
    push("text_proj.b", 1, d, fan(2 * dt));
    for branch in ["ts", "text"] {
        for w in ["w_q", "w_k", "w_v"] {
            push(&format!("{branch}.{w}"), d, d, fan(d));
        }
        push(&format!("{branch}.ff.w1"), d, c.d_ff, fan(d));
        push(&format!("{branch}.ff.b1"), 1, c.d_ff, fan(d));
        push(&format!("{branch}.ff.w2"), c.d_ff, d, fan(c.d_ff));
        push(&format!("{branch}.ff.b2"), 1, d, fan(c.d_ff));
        for n in ["norm1", "norm2"] {
            push(&format!("{branch}.{n}.gamma"), 1, d, Init::Const(1.0));
            push(&format!("{branch}.{n}.beta"), 1, d, Init::Const(0.0));
        }
    }
    push("fuse.w_ts", d, d, fan(2 * d));
    push("fuse.w_text", d, d, fan(2 * d));
    push("fuse.b", 1, d, fan(2 * d));
    push("head.w1", d, c.d_h, fan(d));
    push("head.b1", 1, c.d_h, fan(d));
    push("head.w2", c.d_h, 1, fan(c.d_h));
    push("head.b2", 1, 1, fan(c.d_h));
    out
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Const(f64),
}

impl FusionParams {
    /// Fan-in uniform initialization, deterministic in `seed`.
    pub fn init(config: FusionConfig, seed: u64) -> Result<Self, FusionError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, r, c, init) in layout(&config) {
            let t = match init {
                Init::Uniform(k) => Array2::from_shape_simple_fn((r, c), || rng.gen_range(-k..k)),
                Init::Const(v) => Array2::from_elem((r, c), v),
            };
            names.push(name);
            tensors.push(t);
        }
        let running = NORM_LAYERS
            .iter()
            .map(|_| RunningStats {
                mean: Array1::zeros(config.d),
                var: Array1::ones(config.d),
            })
            .collect();
        Ok(Self {
            config,
            names,
            tensors,
            running,
        })
    }

    pub fn index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> &Array2<f64> {
        &self.tensors[self.index(name)]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Array2<f64> {
        let i = self.index(name);
        &mut self.tensors[i]
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Checks shapes against the config and that every value is finite.
    pub fn validate(&self) -> Result<(), FusionError> {
        self.config.validate()?;
        let expected = layout(&self.config);
        if expected.len() != self.tensors.len() || self.names.len() != self.tensors.len() {
            return Err(FusionError::Config(
                "parameter list does not match the config".into(),
            ));
        }
        for ((name, r, c, _), (n, t)) in expected.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != n || t.dim() != (*r, *c) {
                return Err(FusionError::Config(format!(
                    "parameter {n} has shape {:?}, expected {name} {:?}",
                    t.dim(),
                    (r, c)
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(FusionError::NonFinite(n.clone()));
            }
        }
        if self.running.len() != NORM_LAYERS.len() {
            return Err(FusionError::Config(
                "missing normalization statistics".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn norm_index(layer: &str) -> usize {
        NORM_LAYERS
            .iter()
            .position(|n| *n == layer)
            .expect("known norm layer")
    }

    /// Folds batch moments into the running statistics (unbiased variance).
    pub fn update_running(
        &mut self,
        layer: usize,
        mean: &Array1<f64>,
        var: &Array1<f64>,
        n: usize,
    ) {
        let unbiased = if n > 1 {
            var * (n as f64 / (n - 1) as f64)
        } else {
            var.clone()
        };
        let rs = &mut self.running[layer];
        rs.mean = &rs.mean * (1.0 - NORM_MOMENTUM) + mean * NORM_MOMENTUM;
        rs.var = &rs.var * (1.0 - NORM_MOMENTUM) + unbiased * NORM_MOMENTUM;
    }
}
