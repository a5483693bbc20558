/// Clamp applied to predictions before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bce {
    pub loss: f64,
    /// Derivative with respect to the input (prediction or logit).
    pub grad: f64,
}

/// Binary cross-entropy of a probability against a target in `[0, 1]`.
pub fn bce_loss(prediction: f64, target: f64) -> Bce {
    let p = prediction.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    Bce {
        loss: -(target * p.ln() + (1.0 - target) * (1.0 - p).ln()),
        grad: -target / p + (1.0 - target) / (1.0 - p),
    }
}

/// The same loss taken on the pre-sigmoid logit, stable for any `z`.
pub fn bce_with_logit(logit: f64, target: f64) -> Bce {
    let loss = logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p();
    let p = 1.0 / (1.0 + (-logit).exp());
    Bce { loss, grad: p - target }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_values() {
        assert!((bce_loss(0.5, 1.0).loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0 - 1e-12, 1.0).loss < 1e-6);
        assert!(bce_loss(1.0, 1.0).loss.is_finite());
        assert!(bce_loss(0.0, 1.0).loss.is_finite());
    }

    #[test]
    fn grad_matches_finite_difference() {
        let h = 1e-6;
        for &(p, t) in &[(0.3, 1.0), (0.7, 0.0), (0.5, 0.9), (0.05, 0.0), (0.91, 1.0)] {
            let fd = (bce_loss(p + h, t).loss - bce_loss(p - h, t).loss) / (2.0 * h);
            let an = bce_loss(p, t).grad;
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "p={p} t={t} fd={fd} an={an}");
        }
    }

    #[test]
    fn logit_form_agrees() {
        for &(z, t) in &[(-3.0, 1.0), (0.0, 0.0), (2.5, 0.9), (7.0, 0.0)] {
            let p = 1.0 / (1.0 + f64::exp(-z));
            let a = bce_loss(p, t);
            let b = bce_with_logit(z, t);
            assert!((a.loss - b.loss).abs() < 1e-9);
            assert!((a.grad * p * (1.0 - p) - b.grad).abs() < 1e-9);
        }
        assert!(bce_with_logit(-800.0, 1.0).loss.is_finite());
    }
}
