use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::real::Real;
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|x| if x > T::zero() { x } else { T::zero() })
}

/// Passes `grad` where `input > 0`; the derivative at exactly zero is zero.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
    if input.shape() != grad.shape() {
        return Err(Error::shape(format!(
            "relu grad {:?} vs input {:?}",
            grad.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Inverted dropout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        Ok(Self { rate })
    }

    /// Returns the output and the per-element multiplier (0 or `1/(1-rate)`),
    /// which is all backward needs. Inference, or rate 0, is the identity.
    pub fn forward<T: Real>(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> (Tensor<T>, Option<Vec<T>>) {
        if mode == Mode::Infer || self.rate == 0.0 {
            return (input.clone(), None);
        }
        let keep = T::of(1.0 / (1.0 - self.rate));
        let mask: Vec<T> = (0..input.len())
            .map(|_| {
                if rng.uniform() < self.rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let mut out = input.clone();
        for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        (out, Some(mask))
    }

    pub fn backward<T: Real>(mask: Option<&[T]>, grad: &Tensor<T>) -> Tensor<T> {
        match mask {
            None => grad.clone(),
            Some(mask) => {
                let mut g = grad.clone();
                for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                    *v *= m;
                }
                g
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let pos = t(&[0.1, 3.0, 7.0]);
        assert_eq!(relu(&pos), pos);
        let g = relu_backward(&t(&[-1.0, 2.0]), &t(&[5.0, 7.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 7.0]);
        let g0 = relu_backward(&t(&[0.0]), &t(&[1.0])).unwrap();
        assert_eq!(g0.data(), &[0.0]);
    }

    #[test]
    fn dropout_identities() {
        let mut rng = RngStream::new(1, 1);
        let x = Tensor::<f64>::random_normal(&[50], 0.0, 1.0, &mut rng).unwrap();
        let zero = Dropout::new(0.0).unwrap();
        assert_eq!(zero.forward(&x, Mode::Train, &mut rng).0, x);
        assert_eq!(zero.forward(&x, Mode::Infer, &mut rng).0, x);
        let half = Dropout::new(0.7).unwrap();
        assert_eq!(half.forward(&x, Mode::Infer, &mut rng).0, x);
        assert!(matches!(Dropout::new(1.0), Err(Error::InvalidArgument(_))));
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        // 10^5 Bernoulli(0.5) x 2: stddev of the mean is 1/sqrt(10^5) ~ 0.0032
        let d = Dropout::new(0.5).unwrap();
        let x = Tensor::<f64>::new_filled(&[100_000], 1.0).unwrap();
        let (y, mask) = d.forward(&x, Mode::Train, &mut RngStream::new(77, 0));
        assert!((y.mean() - 1.0).abs() < 0.02, "mean {}", y.mean());
        let g = Dropout::backward(mask.as_deref(), &x);
        assert_eq!(g, y);
    }
}
