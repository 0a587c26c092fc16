use crate::error::{Error, Result};
use crate::layers::ParamGrads;
use crate::real::Real;
use crate::rng::RngStream;
use crate::tensor::{dot, Tensor};

/// Fully connected layer `y = W x + b`; inputs of any shape are flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `[units, inputs]`
    pub weights: Tensor<T>,
    /// `[units]`
    pub biases: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    input: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new(weights: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        match (weights.shape(), biases.shape()) {
            ([k, _], [kb]) if k == kb => Ok(Self { weights, biases }),
            (ws, bs) => Err(Error::shape(format!(
                "dense weights {ws:?} / biases {bs:?} mismatch"
            ))),
        }
    }

    pub fn init(inputs: usize, units: usize, rng: &mut RngStream) -> Result<Self> {
        let weights = Tensor::random_normal(&[units, inputs], 0.0, (2.0 / inputs as f64).sqrt(), rng)?;
        Self::new(weights, Tensor::zeros(&[units])?)
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn units(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        let n = self.inputs();
        if input.len() != n {
            return Err(Error::shape(format!(
                "dense layer expects {n} inputs, got {} ({:?})",
                input.len(),
                input.shape()
            )));
        }
        let x = input.data();
        let w = self.weights.data();
        let out: Vec<T> = self
            .biases
            .data()
            .iter()
            .enumerate()
            .map(|(k, &b)| b + dot(&w[k * n..(k + 1) * n], x))
            .collect();
        Ok((
            Tensor::from_vec(&[self.units()], out)?,
            DenseCache { input: input.clone() },
        ))
    }

    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, ParamGrads<T>)> {
        let (k, n) = (self.units(), self.inputs());
        if grad_out.len() != k {
            return Err(Error::shape(format!(
                "dense grad_out has {} values, expected {k}",
                grad_out.len()
            )));
        }
        let x = cache.input.data();
        let g = grad_out.data();
        let w = self.weights.data();
        let mut gw = vec![T::zero(); k * n];
        let mut gx = vec![T::zero(); n];
        for (row, &gk) in g.iter().enumerate() {
            if gk == T::zero() {
                continue;
            }
            let wr = &w[row * n..(row + 1) * n];
            let gwr = &mut gw[row * n..(row + 1) * n];
            for i in 0..n {
                gwr[i] = gk * x[i];
                gx[i] += gk * wr[i];
            }
        }
        Ok((
            Tensor::from_vec(cache.input.shape(), gx)?,
            ParamGrads {
                weights: Tensor::from_vec(&[k, n], gw)?,
                biases: grad_out.clone().reshape(&[k])?,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights() {
        let d = Dense::new(
            Tensor::<f64>::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
            Tensor::zeros(&[3]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_vec(&[3], vec![4., -2., 0.5]).unwrap();
        assert_eq!(d.forward(&x).unwrap().0, x);
    }

    #[test]
    fn hand_matvec() {
        let d = Dense::new(
            Tensor::<f64>::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap(),
            Tensor::from_vec(&[2], vec![1., 1.]).unwrap(),
        )
        .unwrap();
        let (y, _) = d.forward(&Tensor::from_vec(&[2], vec![1., 1.]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0, 8.0]);
    }

    #[test]
    fn flattens_and_restores_shape() {
        let mut rng = RngStream::new(0, 0);
        let d = Dense::<f64>::init(12, 3, &mut rng).unwrap();
        let x = Tensor::random_normal(&[3, 2, 2], 0.0, 1.0, &mut rng).unwrap();
        let (y, cache) = d.forward(&x).unwrap();
        let (gx, _) = d
            .backward(&cache, &Tensor::new_filled(y.shape(), 1.0).unwrap())
            .unwrap();
        assert_eq!(gx.shape(), &[3, 2, 2]);
    }

    #[test]
    fn length_mismatch() {
        let d = Dense::<f64>::init(4, 2, &mut RngStream::new(0, 0)).unwrap();
        assert!(matches!(
            d.forward(&Tensor::zeros(&[5]).unwrap()),
            Err(Error::Shape(_))
        ));
    }
}
