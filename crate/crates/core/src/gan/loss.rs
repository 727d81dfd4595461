//! Adversarial cross-entropy losses with probability clamping.

use super::layers::sigmoid;
use super::real::Real;

pub const PROB_CLAMP: f64 = 1e-7;

/// Generator objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeneratorLoss {
    /// `−ln D(G(z, y), y)`.
    #[default]
    NonSaturating,
    /// `ln(1 − D(G(z, y), y))`, the literal minimax term.
    Saturating,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLoss {
    pub d: f64,
    pub g: f64,
}

fn clamp(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Scalar losses for one pair of discriminator outputs.
pub fn gan_loss(d_real: f64, d_fake: f64, kind: GeneratorLoss) -> GanLoss {
    let (r, f) = (clamp(d_real), clamp(d_fake));
    let d = -libm::log(r) - libm::log(1.0 - f);
    let g = match kind {
        GeneratorLoss::NonSaturating => -libm::log(f),
        GeneratorLoss::Saturating => libm::log(1.0 - f),
    };
    GanLoss { d, g }
}

fn clamped<T: Real>(logit: T) -> (T, bool) {
    let p = sigmoid(logit);
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// Batch-mean `−ln p` and its gradient with respect to the logits, where the
/// target label is `real`. Clamped outputs carry no gradient.
pub fn bce_logits<T: Real>(logits: &[T], real: bool) -> (f64, alloc::vec::Vec<T>) {
    let n = T::lit(logits.len() as f64);
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .map(|&a| {
            let (p, hit) = clamped(a);
            let pf = p.to_f64().unwrap_or(f64::NAN);
            if real {
                loss -= libm::log(pf);
                if hit { T::zero() } else { (p - T::one()) / n }
            } else {
                loss -= libm::log(1.0 - pf);
                if hit { T::zero() } else { p / n }
            }
        })
        .collect();
    (loss / logits.len() as f64, grad)
}

/// Batch generator loss on fake logits and its logit gradient.
pub fn generator_logits<T: Real>(logits: &[T], kind: GeneratorLoss) -> (f64, alloc::vec::Vec<T>) {
    match kind {
        GeneratorLoss::NonSaturating => bce_logits(logits, true),
        GeneratorLoss::Saturating => {
            let (l, g) = bce_logits(logits, false);
            (-l, g.into_iter().map(|v| -v).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn limit_and_symmetric_cases() {
        let eps = 1e-9;
        assert!(gan_loss(1.0 - eps, eps, GeneratorLoss::NonSaturating).d < 1e-6);
        let l = gan_loss(0.5, 0.5, GeneratorLoss::NonSaturating);
        assert_relative_eq!(l.d, 2.0 * core::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(l.g, core::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn hand_computed_values() {
        let l = gan_loss(0.9, 0.2, GeneratorLoss::NonSaturating);
        assert_relative_eq!(l.d, 0.328_504_066_972_036, epsilon = 1e-12);
        assert_relative_eq!(l.g, -libm::log(0.2), epsilon = 1e-15);
        let s = gan_loss(0.9, 0.2, GeneratorLoss::Saturating);
        assert_relative_eq!(s.g, libm::log(0.8), epsilon = 1e-15);
    }

    #[test]
    fn clamps_extremes() {
        let l = gan_loss(0.0, 1.0, GeneratorLoss::NonSaturating);
        assert!(l.d.is_finite() && l.g.is_finite());
        assert_relative_eq!(l.d, -2.0 * libm::log(PROB_CLAMP), epsilon = 1e-6);
    }

    #[test]
    fn logit_form_matches_scalar_cross_entropy() {
        let (a, b) = (0.7_f64, -1.3_f64);
        let sig = |x: f64| 1.0 / (1.0 + libm::exp(-x));
        let l = gan_loss(sig(a), sig(b), GeneratorLoss::NonSaturating);
        // Binary cross-entropy written out with softplus.
        let softplus = |x: f64| libm::log1p(libm::exp(x));
        assert_relative_eq!(l.d, softplus(-a) + softplus(b), epsilon = 1e-12);
        assert_relative_eq!(l.g, softplus(-b), epsilon = 1e-12);
        let (lr, _) = bce_logits(&[a], true);
        let (lf, _) = bce_logits(&[b], false);
        assert_relative_eq!(lr + lf, l.d, epsilon = 1e-12);
    }

    #[test]
    fn logit_gradients_match_differences() {
        let h = 1e-6;
        for &a in &[-2.0_f64, 0.0, 0.4, 3.0] {
            for real in [true, false] {
                let (_, g) = bce_logits(&[a], real);
                let num = (bce_logits(&[a + h], real).0 - bce_logits(&[a - h], real).0) / (2.0 * h);
                assert_relative_eq!(g[0], num, epsilon = 1e-8);
            }
            let (_, g) = generator_logits(&[a], GeneratorLoss::Saturating);
            let f = |x| generator_logits(&[x], GeneratorLoss::Saturating).0;
            assert_relative_eq!(g[0], (f(a + h) - f(a - h)) / (2.0 * h), epsilon = 1e-8);
        }
        let (_, g) = bce_logits(&[40.0_f64], true);
        assert_eq!(g[0], 0.0);
    }
}
