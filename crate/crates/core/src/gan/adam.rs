//! Adam optimizer over a fixed list of parameter tensors.

use alloc::vec;
use alloc::vec::Vec;

use super::layers::Param;
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. `params` must list
    /// the same tensors in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter list changed between steps");
        self.step += 1;
        let t = self.step as i32;
        let c = &self.cfg;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let step_size = T::lit(c.lr * libm::sqrt(bc2) / bc1);
        let eps = T::lit(c.eps * libm::sqrt(bc2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                *w -= step_size * *mi / (vi.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use approx::assert_relative_eq;

    fn param(v: f64, g: f64) -> Param<f64> {
        Param { name: String::from("p"), shape: vec![1], value: vec![v], grad: vec![g] }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = param(1.0, 3.0);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        opt.step(&mut [&mut p]);
        assert_relative_eq!(p.value[0], 0.9, epsilon = 1e-7);
    }

    #[test]
    fn matches_textbook_recursion() {
        let cfg = AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.99, eps: 1e-8 };
        let mut p = param(0.5, 0.0);
        let mut opt = Adam::new(cfg);
        let (mut w, mut m, mut v) = (0.5_f64, 0.0, 0.0);
        for t in 1..=5 {
            let g = 2.0 * w;
            p.grad[0] = g;
            opt.step(&mut [&mut p]);
            m = 0.9 * m + 0.1 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mh = m / (1.0 - 0.9_f64.powi(t));
            let vh = v / (1.0 - 0.99_f64.powi(t));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert_relative_eq!(p.value[0], w, epsilon = 1e-12);
        }
    }
}
