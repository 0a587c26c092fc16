//! A network instantiated from a [`NetworkTopology`].

use crate::error::{Error, Result};
use crate::layers::{softmax, softmax_cross_entropy, Cache, Conv2d, Dense, Dropout, Layer, Mode};
use crate::real::Real;
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::topology::{fit_image, Activation, LayerKind, NetworkTopology};

/// Parameter gradients in [`Network::params`] order (weights, biases per
/// parametric layer).
pub type Gradients<T> = Vec<Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    topology: NetworkTopology,
    layers: Vec<Layer<T>>,
}

/// Grey levels are mapped to roughly unit range before the first layer.
pub const INPUT_SCALE: f64 = 1.0 / 255.0;

/// Samples per gradient-accumulation chunk. Fixed so the summation order, and
/// therefore the result, is independent of the worker count.
const CHUNK: usize = 8;

impl<T: Real> Network<T> {
    /// He-initialised network.
    pub fn new(topology: NetworkTopology, rng: &mut RngStream) -> Result<Self> {
        Self::build(topology, |i, in_shape, kind| {
            let mut r = rng.derive(i as u64);
            match kind {
                LayerKind::Conv(p) => Ok(Layer::Conv(Conv2d::init(in_shape[0], p, &mut r)?)),
                LayerKind::FullyConnected { units } => Ok(Layer::Dense(Dense::init(
                    in_shape.iter().product(),
                    units,
                    &mut r,
                )?)),
                LayerKind::Pool(p) => Ok(Layer::Pool(p)),
            }
        })
    }

    /// Network with the given parameters, one `(weights, biases)` pair per
    /// conv/fc layer in topology order.
    pub fn from_params(topology: NetworkTopology, params: Vec<(Tensor<T>, Tensor<T>)>) -> Result<Self> {
        let expected = topology
            .layers
            .iter()
            .filter(|l| !matches!(l.kind, LayerKind::Pool(_)))
            .count();
        if params.len() != expected {
            return Err(Error::shape(format!(
                "topology has {expected} parametric layers, got {} parameter pairs",
                params.len()
            )));
        }
        let mut it = params.into_iter();
        Self::build(topology, |_, in_shape, kind| match kind {
            LayerKind::Conv(p) => {
                let (w, b) = it.next().expect("counted above");
                Ok(Layer::Conv(Conv2d::new(in_shape[0], p, w, b)?))
            }
            LayerKind::FullyConnected { units } => {
                let (w, b) = it.next().expect("counted above");
                if w.shape() != [units, in_shape.iter().product()] {
                    return Err(Error::shape(format!(
                        "fc weights {:?} do not match topology",
                        w.shape()
                    )));
                }
                Ok(Layer::Dense(Dense::new(w, b)?))
            }
            LayerKind::Pool(p) => Ok(Layer::Pool(p)),
        })
    }

    fn build(
        topology: NetworkTopology,
        mut make: impl FnMut(usize, &[usize], LayerKind) -> Result<Layer<T>>,
    ) -> Result<Self> {
        let shapes = topology.infer_shapes()?;
        let mut layers = Vec::new();
        for (i, spec) in topology.layers.iter().enumerate() {
            let in_shape = if i == 0 {
                topology.input.to_vec()
            } else {
                shapes[i - 1].clone()
            };
            layers.push(make(i, &in_shape, spec.kind)?);
            match spec.activation {
                Activation::None | Activation::Softmax => {}
                Activation::Relu => layers.push(Layer::Relu),
                Activation::ReluDropout(rate) => {
                    layers.push(Layer::Relu);
                    layers.push(Layer::Dropout(Dropout::new(rate)?));
                }
            }
        }
        Ok(Self { topology, layers })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn set_mean_offset(&mut self, mean: f64) -> Result<()> {
        if !mean.is_finite() {
            return Err(Error::invalid("mean offset must be finite"));
        }
        self.topology.mean_offset = mean;
        Ok(())
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.params_mut())
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Fits a raw image to the input size, subtracts the mean offset and
    /// scales grey levels by [`INPUT_SCALE`].
    pub fn prepare<U: Real>(&self, image: &Tensor<U>) -> Result<Tensor<T>> {
        let [c, h, w] = self.topology.input;
        if image.rank() != 3 || image.shape()[0] != c {
            return Err(Error::shape(format!(
                "network expects [{c}, H, W] images, got {:?}",
                image.shape()
            )));
        }
        let fitted = fit_image(image, h, w)?;
        let mean = self.topology.mean_offset;
        let data = fitted
            .data()
            .iter()
            .map(|&v| T::of((v.as_f64() - mean) * INPUT_SCALE))
            .collect();
        Tensor::from_vec(&[c, h, w], data)
    }

    /// Logits for an already prepared input, inference mode.
    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input.clone();
        for l in &self.layers {
            x = l.infer(&x)?;
        }
        Ok(x)
    }

    pub fn probabilities<U: Real>(&self, image: &Tensor<U>) -> Result<Vec<T>> {
        softmax(self.logits(&self.prepare(image)?)?.data())
    }

    /// Index of the most probable class (first one on ties).
    pub fn predict<U: Real>(&self, image: &Tensor<U>) -> Result<usize> {
        let logits = self.logits(&self.prepare(image)?)?;
        Ok(argmax(logits.data()))
    }

    pub fn forward_train(
        &self,
        input: &Tensor<T>,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for l in &self.layers {
            let (y, cache) = l.forward(&x, mode, rng)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Back-propagates `grad_logits`; returns the input gradient and the
    /// parameter gradients.
    pub fn backward(
        &self,
        caches: &[Cache<T>],
        grad_logits: &Tensor<T>,
    ) -> Result<(Tensor<T>, Gradients<T>)> {
        if caches.len() != self.layers.len() {
            return Err(Error::State("backward needs one cache per layer".into()));
        }
        let mut grads = Vec::new();
        let mut g = grad_logits.clone();
        for (l, cache) in self.layers.iter().zip(caches).rev() {
            let (gin, pg) = l.backward(cache, &g)?;
            if let Some(pg) = pg {
                grads.push(pg.biases);
                grads.push(pg.weights);
            }
            g = gin;
        }
        grads.reverse();
        Ok((g, grads))
    }

    /// Cross-entropy loss and parameter gradients for one prepared sample.
    pub fn loss_and_grads(
        &self,
        input: &Tensor<T>,
        class: usize,
        mode: Mode,
        rng: &mut RngStream,
    ) -> Result<(T, Gradients<T>)> {
        let (logits, caches) = self.forward_train(input, mode, rng)?;
        let (loss, grad) = softmax_cross_entropy(logits.data(), class)?;
        let grad = Tensor::from_vec(logits.shape(), grad)?;
        let (_, grads) = self.backward(&caches, &grad)?;
        Ok((loss, grads))
    }

    /// Batch-averaged loss and gradients. `rngs[i]` drives dropout for
    /// sample `i`.
    pub fn batch_loss_and_grads(
        &self,
        samples: &[(&Tensor<T>, usize)],
        rngs: &[RngStream],
    ) -> Result<(T, Gradients<T>)> {
        if samples.is_empty() || samples.len() != rngs.len() {
            return Err(Error::invalid(
                "batch needs one rng per sample and at least one sample",
            ));
        }
        let idx: Vec<usize> = (0..samples.len()).collect();
        let chunks: Vec<&[usize]> = idx.chunks(CHUNK).collect();
        let partials = crate::par_map(&chunks, |chunk| -> Result<(T, Gradients<T>)> {
            let mut acc: Option<(T, Gradients<T>)> = None;
            for &i in chunk.iter() {
                let mut rng = rngs[i].clone();
                let (loss, grads) = self.loss_and_grads(samples[i].0, samples[i].1, Mode::Train, &mut rng)?;
                acc = Some(match acc {
                    None => (loss, grads),
                    Some((l, mut g)) => {
                        for (a, b) in g.iter_mut().zip(&grads) {
                            a.axpy(T::one(), b)?;
                        }
                        (l + loss, g)
                    }
                });
            }
            Ok(acc.expect("chunks are non-empty"))
        });
        let mut total: Option<(T, Gradients<T>)> = None;
        for p in partials {
            let (loss, grads) = p?;
            total = Some(match total {
                None => (loss, grads),
                Some((l, mut g)) => {
                    for (a, b) in g.iter_mut().zip(&grads) {
                        a.axpy(T::one(), b)?;
                    }
                    (l + loss, g)
                }
            });
        }
        let (loss, mut grads) = total.expect("non-empty batch");
        let inv = T::one() / T::of(samples.len() as f64);
        for g in &mut grads {
            g.scale(inv);
        }
        Ok((loss * inv, grads))
    }
}

pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_proposed, LayerSpec};

    fn tiny() -> NetworkTopology {
        NetworkTopology::new(
            vec![
                LayerSpec::conv(3, 4, 1, 1),
                LayerSpec::pool(2, 2),
                LayerSpec::conv(3, 4, 1, 2),
                LayerSpec::fc(6, Activation::ReluDropout(0.5)),
                LayerSpec::fc(5, Activation::Softmax),
            ],
            [1, 8, 8],
        )
        .unwrap()
    }

    #[test]
    fn activations_expand_into_layers() {
        let net = Network::<f64>::new(tiny(), &mut RngStream::new(0, 0)).unwrap();
        let kinds: Vec<&str> = net
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv(_) => "conv",
                Layer::Pool(_) => "pool",
                Layer::Dense(_) => "fc",
                Layer::Relu => "relu",
                Layer::Dropout(_) => "drop",
            })
            .collect();
        assert_eq!(
            kinds,
            ["conv", "relu", "pool", "conv", "relu", "fc", "relu", "drop", "fc"]
        );
        assert_eq!(net.params().len(), 8);
    }

    #[test]
    fn from_params_round_trip() {
        let net = Network::<f32>::new(tiny(), &mut RngStream::new(1, 0)).unwrap();
        let params: Vec<(Tensor<f32>, Tensor<f32>)> = net
            .layers()
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| (w.clone(), b.clone()))
            .collect();
        let back = Network::from_params(tiny(), params.clone()).unwrap();
        assert_eq!(back, net);
        assert!(Network::from_params(tiny(), params[..2].to_vec()).is_err());
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let net = Network::<f64>::new(tiny(), &mut RngStream::new(2, 0)).unwrap();
        let mut rng = RngStream::new(3, 0);
        let xs: Vec<Tensor<f64>> = (0..11)
            .map(|_| Tensor::random_normal(&[1, 8, 8], 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let samples: Vec<(&Tensor<f64>, usize)> = xs.iter().enumerate().map(|(i, x)| (x, i % 5)).collect();
        let rngs: Vec<RngStream> = (0..11).map(|i| RngStream::new(4, i)).collect();
        let (loss, grads) = net.batch_loss_and_grads(&samples, &rngs).unwrap();
        let mut want_loss = 0.0;
        let mut want: Option<Gradients<f64>> = None;
        for (i, (x, c)) in samples.iter().enumerate() {
            let (l, g) = net
                .loss_and_grads(x, *c, Mode::Train, &mut rngs[i].clone())
                .unwrap();
            want_loss += l / 11.0;
            match &mut want {
                None => {
                    want = Some(
                        g.into_iter()
                            .map(|mut t| {
                                t.scale(1.0 / 11.0);
                                t
                            })
                            .collect(),
                    )
                }
                Some(w) => {
                    for (a, b) in w.iter_mut().zip(&g) {
                        a.axpy(1.0 / 11.0, b).unwrap();
                    }
                }
            }
        }
        assert!((loss - want_loss).abs() < 1e-12);
        for (a, b) in grads.iter().zip(want.unwrap().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn prepare_fits_and_centres() {
        let mut topo = build_proposed(0.25).unwrap();
        topo.mean_offset = 100.0;
        let net = Network::<f32>::new(topo, &mut RngStream::new(0, 0)).unwrap();
        let img = Tensor::<f32>::new_filled(&[1, 128, 96], 100.0).unwrap();
        let x = net.prepare(&img).unwrap();
        assert_eq!(x.shape(), &[1, 227, 227]);
        assert!(x.data().iter().all(|&v| v == 0.0));
        assert!(net.prepare(&Tensor::<f32>::zeros(&[2, 10, 10]).unwrap()).is_err());
    }
}
