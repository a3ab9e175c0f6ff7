//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Forward ops append nodes to a [`Graph`]; [`Graph::backward`] walks them
//! in reverse and accumulates adjoints. Only the ops the fusion model needs
//! are provided.

use ndarray::{s, Array1, Array2, Axis};

pub type Var = usize;

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Array2<f64>),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    /// `a * m + b * (1 - m)` with a constant `n x 1` mask.
    Blend(Var, Var, Array2<f64>),
    HCat(Vec<Var>),
    ColSlice(Var, usize),
    /// Softmax over columns sharing the same index modulo `groups`.
    SegSoftmax(Var, usize),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        batch_stats: bool,
    },
    /// Mean clamped binary cross-entropy against constant labels.
    Bce(Var, Array2<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Per-feature statistics observed by a batch-statistics normalization.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Array1<f64>,
    /// Biased variance used for normalization.
    pub var: Array1<f64>,
    pub n: usize,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const BCE_CLAMP: f64 = 1e-7;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v].value
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, index: usize, value: Array2<f64>) -> Var {
        self.push(value, Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    /// `a (n x m) + b (1 x m)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(a).mapv(|x| scale * x + shift);
        self.push(v, Op::Affine(a, scale))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn blend(&mut self, a: Var, b: Var, mask: Array2<f64>) -> Var {
        let v = self.value(a) * &mask + self.value(b) * &mask.mapv(|m| 1.0 - m);
        self.push(v, Op::Blend(a, b, mask))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("hcat needs equal row counts");
        self.push(v, Op::HCat(parts.to_vec()))
    }

    pub fn col_slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::ColSlice(a, start))
    }

    pub fn seg_softmax(&mut self, a: Var, groups: usize) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for g in 0..groups {
                let mut max = f64::NEG_INFINITY;
                for j in (g..row.len()).step_by(groups) {
                    max = max.max(row[j]);
                }
                let mut sum = 0.0;
                for j in (g..row.len()).step_by(groups) {
                    row[j] = (row[j] - max).exp();
                    sum += row[j];
                }
                for j in (g..row.len()).step_by(groups) {
                    row[j] /= sum;
                }
            }
        }
        self.push(out, Op::SegSoftmax(a, groups))
    }

    /// Per-column normalization followed by `gamma * xhat + beta`. With
    /// `stats = None` the batch moments are used and returned; otherwise the
    /// given `(mean, var)` are applied.
    pub fn norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> (Var, Option<BatchMoments>) {
        let xv = self.value(x);
        let n = xv.nrows();
        let (mean, var, moments) = match stats {
            Some((m, v)) => (m.clone(), v.clone(), None),
            None => {
                let mean = xv.mean_axis(Axis(0)).expect("non-empty batch");
                let var = xv.var_axis(Axis(0), 0.0);
                (
                    mean.clone(),
                    var.clone(),
                    Some(BatchMoments { mean, var, n }),
                )
            }
        };
        let inv_std = var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt());
        let xhat = (xv - &mean) * &inv_std;
        let out = &xhat * self.value(gamma) + self.value(beta);
        let id = self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: stats.is_none(),
            },
        );
        (id, moments)
    }

    pub fn bce(&mut self, p: Var, y: Array2<f64>) -> Var {
        let n = y.len() as f64;
        let loss: f64 = self
            .value(p)
            .iter()
            .zip(y.iter())
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / n;
        self.push(Array2::from_elem((1, 1), loss), Op::Bce(p, y))
    }

    /// Adjoints of every node with respect to the scalar `root`, returned as
    /// `(param index, gradient)` pairs for parameter leaves.
    pub fn backward(&self, root: Var) -> Vec<(usize, Array2<f64>)> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root + 1];
        grads[root] = Some(Array2::ones(self.value(root).raw_dim()));
        let mut out = Vec::new();

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(i) => out.push((*i, g)),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g);
                    acc(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c),
                Op::Affine(a, scale) => acc(&mut grads, *a, g * *scale),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        &g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                    );
                }
                Op::Blend(a, b, m) => {
                    acc(&mut grads, *a, &g * m);
                    acc(&mut grads, *b, &g * &m.mapv(|v| 1.0 - v));
                }
                Op::HCat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ColSlice(a, start) => {
                    let mut full = Array2::zeros(self.value(*a).raw_dim());
                    full.slice_mut(s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    acc(&mut grads, *a, full);
                }
                Op::SegSoftmax(a, groups) => {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.raw_dim());
                    for ((yr, gr), mut out) in y.rows().into_iter().zip(g.rows()).zip(gx.rows_mut())
                    {
                        for grp in 0..*groups {
                            let dot: f64 = (grp..yr.len())
                                .step_by(*groups)
                                .map(|j| yr[j] * gr[j])
                                .sum();
                            for j in (grp..yr.len()).step_by(*groups) {
                                out[j] = yr[j] * (gr[j] - dot);
                            }
                        }
                    }
                    acc(&mut grads, *a, gx);
                }
                Op::Norm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    let gv = self.value(*gamma);
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut grads,
                        *gamma,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &g * gv;
                    let gx = if *batch_stats {
                        let n = g.nrows() as f64;
                        let sum = dxhat.sum_axis(Axis(0));
                        let sum_x = (&dxhat * xhat).sum_axis(Axis(0));
                        (dxhat * n - &sum - xhat * &sum_x) * inv_std / n
                    } else {
                        dxhat * inv_std
                    };
                    acc(&mut grads, *x, gx);
                }
                Op::Bce(p, y) => {
                    let n = y.len() as f64;
                    let scale = g[[0, 0]];
                    let pv = self.value(*p);
                    let mut gp = Array2::zeros(pv.raw_dim());
                    ndarray::Zip::from(&mut gp)
                        .and(pv)
                        .and(y)
                        .for_each(|o, &p, &y| {
                            if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                                *o = scale * (-(y / p) + (1.0 - y) / (1.0 - p)) / n;
                            }
                        });
                    acc(&mut grads, *p, gp);
                }
            }
        }
        out
    }
}
