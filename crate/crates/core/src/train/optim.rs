use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, shapes: &[Array2<f64>]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: shapes.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: shapes.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(
            params.len(),
            self.m.len(),
            "optimizer built for a different parameter list"
        );
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (lr, b1, b2, eps, wd) = (self.lr, self.beta1, self.beta2, self.eps, self.weight_decay);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *p -= lr * wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![array![[1.0, -2.0]]];
        let mut opt = AdamW::new(0.1, 0.0, &p);
        opt.step(&mut p, &[array![[0.5, -3.0]]]);
        // the bias-corrected first step is lr * sign(g)
        assert!((p[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[0][[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = vec![array![[2.0]]];
        let mut opt = AdamW::new(0.1, 0.5, &p);
        opt.step(&mut p, &[array![[0.0]]]);
        assert!((p[0][[0, 0]] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut p = vec![array![[2.0, 3.0]]];
        let mut opt = AdamW::new(0.0, 0.01, &p);
        for _ in 0..5 {
            opt.step(&mut p, &[array![[1.0, -1.0]]]);
        }
        assert_eq!(p[0], array![[2.0, 3.0]]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![array![[5.0]]];
        let mut opt = AdamW::new(0.1, 0.0, &p);
        for _ in 0..500 {
            let g = &p[0] * 2.0;
            opt.step(&mut p, &[g]);
        }
        assert!(p[0][[0, 0]].abs() < 1e-2);
    }
}
