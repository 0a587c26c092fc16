//! Layer forward/backward kernels.
//!
//! Each kernel is a plain value (`Conv2d`, `MaxPool`, ...) whose `forward`
//! returns the output together with whatever the matching `backward` needs.
//! [`Layer`] wraps them for use inside a network, and [`LayerState`] is the
//! stateful single-worker form that keeps the cache between the two passes.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod pool;
pub mod softmax;

pub use activation::{relu, relu_backward, Dropout};
pub use conv::{output_extent, Conv2d, ConvCache, ConvParams};
pub use dense::{Dense, DenseCache};
pub use pool::{MaxPool, PoolCache};
pub use softmax::{softmax, softmax_cross_entropy};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    Pool(MaxPool),
    Dense(Dense<T>),
    Relu,
    Dropout(Dropout),
}

#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv(ConvCache<T>),
    Pool(PoolCache),
    Dense(DenseCache<T>),
    Relu(Tensor<T>),
    Dropout(Option<Vec<T>>),
}

impl<T: Real> Layer<T> {
    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Conv(_) | Layer::Dense(_))
    }

    pub fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv(c) => Some((&c.weights, &c.biases)),
            Layer::Dense(d) => Some((&d.weights, &d.biases)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weights, &mut c.biases)),
            Layer::Dense(d) => Some((&mut d.weights, &mut d.biases)),
            _ => None,
        }
    }

    pub fn forward(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        Ok(match self {
            Layer::Conv(c) => {
                let (y, cache) = c.forward(input)?;
                (y, Cache::Conv(cache))
            }
            Layer::Pool(p) => {
                let (y, cache) = p.forward(input)?;
                (y, Cache::Pool(cache))
            }
            Layer::Dense(d) => {
                let (y, cache) = d.forward(input)?;
                (y, Cache::Dense(cache))
            }
            Layer::Relu => (relu(input), Cache::Relu(input.clone())),
            Layer::Dropout(d) => {
                let (y, mask) = d.forward(input, mode, rng);
                (y, Cache::Dropout(mask))
            }
        })
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(match self {
            Layer::Conv(c) => c.forward(input)?.0,
            Layer::Pool(p) => p.forward(input)?.0,
            Layer::Dense(d) => d.forward(input)?.0,
            Layer::Relu => relu(input),
            Layer::Dropout(_) => input.clone(),
        })
    }

    pub fn backward(
        &self,
        cache: &Cache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<ParamGrads<T>>)> {
        Ok(match (self, cache) {
            (Layer::Conv(c), Cache::Conv(cache)) => {
                let (g, p) = c.backward(cache, grad_out)?;
                (g, Some(p))
            }
            (Layer::Pool(p), Cache::Pool(cache)) => (p.backward(cache, grad_out)?, None),
            (Layer::Dense(d), Cache::Dense(cache)) => {
                let (g, p) = d.backward(cache, grad_out)?;
                (g, Some(p))
            }
            (Layer::Relu, Cache::Relu(input)) => (relu_backward(input, grad_out)?, None),
            (Layer::Dropout(_), Cache::Dropout(mask)) => (Dropout::backward(mask.as_deref(), grad_out), None),
            _ => return Err(Error::State("cache does not belong to this layer kind".into())),
        })
    }
}

/// A layer plus the cache of its most recent forward pass.
#[derive(Debug, Clone)]
pub struct LayerState<T> {
    pub layer: Layer<T>,
    cache: Option<Cache<T>>,
}

impl<T: Real> LayerState<T> {
    pub fn new(layer: Layer<T>) -> Self {
        Self { layer, cache: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode, rng: &mut RngStream) -> Result<Tensor<T>> {
        let (y, cache) = self.layer.forward(input, mode, rng)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Option<ParamGrads<T>>)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        self.layer.backward(cache, grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut rng = RngStream::new(0, 0);
        let conv = Conv2d::<f64>::init(1, ConvParams::new(3, 2, 1, 0, 1), &mut rng).unwrap();
        let mut state = LayerState::new(Layer::Conv(conv));
        let g = Tensor::zeros(&[2, 3, 3]).unwrap();
        assert!(matches!(state.backward(&g), Err(Error::State(_))));
        state
            .forward(&Tensor::zeros(&[1, 5, 5]).unwrap(), Mode::Train, &mut rng)
            .unwrap();
        assert!(state.backward(&g).is_ok());
    }

    #[test]
    fn mismatched_cache_rejected() {
        let layer = Layer::<f64>::Relu;
        let cache = Cache::Dropout(None);
        assert!(matches!(
            layer.backward(&cache, &Tensor::zeros(&[1]).unwrap()),
            Err(Error::State(_))
        ));
    }
}
