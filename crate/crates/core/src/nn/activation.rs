use ndarray::{Array2, ArrayView2, Zip};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative at pre-activation `z` with output `y = apply(z)`.
    pub fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }

    pub fn forward<T: Scalar>(self, pre: &Array2<T>) -> Array2<T> {
        pre.mapv(|z| self.apply(z))
    }

    /// Upstream gradient times the activation derivative.
    pub fn backward<T: Scalar>(self, pre: ArrayView2<T>, out: ArrayView2<T>, grad: ArrayView2<T>) -> Array2<T> {
        let mut d = grad.to_owned();
        if self != Activation::Identity {
            Zip::from(&mut d).and(pre).and(out).for_each(|g, &z, &y| *g = *g * self.derivative(z, y));
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::Relu.apply(-2.0f64), 0.0);
        assert_eq!(Activation::Relu.derivative(-2.0f64, 0.0), 0.0);
        assert!((Activation::Tanh.derivative(0.3f64, 0.3f64.tanh()) - 1.0 / 0.3f64.cosh().powi(2)).abs() < 1e-12);
        assert_eq!(Activation::Sigmoid.apply(-200.0f32), 0.0);
        assert_eq!(Activation::Sigmoid.apply(200.0f32), 1.0);
    }
}
