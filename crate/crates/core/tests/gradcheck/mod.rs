//! Central finite-difference checks of every layer's backward pass at f64,
//! shared by the `gradients` and `acceptance` targets. Each check returns the
//! largest relative error seen or a description of the first failure.

use fpclass_core::layers::{softmax_cross_entropy, Conv2d, ConvParams, Dense, Dropout, Layer, MaxPool, Mode};
use fpclass_core::network::Network;
use fpclass_core::topology::{Activation, LayerSpec, NetworkTopology};
use fpclass_core::{RngStream, Tensor};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 50;

type Check = Result<f64, String>;

fn within(e: f64, what: impl FnOnce() -> String) -> Check {
    if e < TOLERANCE {
        Ok(e)
    } else {
        Err(format!("{}: relative error {e:.3e}", what()))
    }
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vanish.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = norm(analytic) + norm(numeric);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

fn numeric_gradient(values: &mut [f64], mut loss: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let orig = values[i];
            values[i] = orig + STEP;
            let up = loss(values);
            values[i] = orig - STEP;
            let down = loss(values);
            values[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Checks input and parameter gradients of `layer` under `L = sum(r * y)`.
/// The layer sees the same rng state on every evaluation, so dropout masks
/// stay fixed.
fn check_layer(mut layer: Layer<f64>, input: Tensor<f64>, rng: &mut RngStream, what: &str) -> Check {
    let seed = RngStream::new(rng.below(1 << 30) as u64, 9);
    let out_shape = layer
        .forward(&input, Mode::Train, &mut seed.clone())
        .unwrap()
        .0
        .shape()
        .to_vec();
    let r = Tensor::<f64>::random_normal(&out_shape, 0.0, 1.0, rng).unwrap();
    let loss = |layer: &Layer<f64>, x: &Tensor<f64>| -> f64 {
        let y = layer.forward(x, Mode::Train, &mut seed.clone()).unwrap().0;
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };

    let (_, cache) = layer.forward(&input, Mode::Train, &mut seed.clone()).unwrap();
    let (gin, pgrads) = layer.backward(&cache, &r).unwrap();

    let mut x = input.data().to_vec();
    let numeric = numeric_gradient(&mut x, |v| {
        loss(&layer, &Tensor::from_vec(input.shape(), v.to_vec()).unwrap())
    });
    let mut worst = within(relative_error(gin.data(), &numeric), || {
        format!("{what}: input gradient")
    })?;

    if let Some(pg) = pgrads {
        for (which, analytic) in [(0, pg.weights), (1, pg.biases)] {
            let mut values = {
                let (w, b) = layer.params().unwrap();
                if which == 0 { w } else { b }.data().to_vec()
            };
            let numeric = numeric_gradient(&mut values, |v| {
                let (w, b) = layer.params_mut().unwrap();
                let t = if which == 0 { w } else { b };
                t.data_mut().copy_from_slice(v);
                loss(&layer, &input)
            });
            let e = relative_error(analytic.data(), &numeric);
            worst = worst.max(within(e, || format!("{what}: parameter {which} gradient"))?);
        }
    }
    Ok(worst)
}

fn conv_instance(rng: &mut RngStream, groups: usize) -> (Layer<f64>, Tensor<f64>) {
    let per_group_in = 1 + rng.below(3);
    let per_group_out = 1 + rng.below(3);
    let kernel = 1 + rng.below(4);
    let stride = 1 + rng.below(3);
    let padding = rng.below(3);
    let h = kernel + rng.below(6);
    let w = kernel + rng.below(6);
    let params = ConvParams::new(kernel, groups * per_group_out, stride, padding, groups);
    let conv = Conv2d::init(groups * per_group_in, params, rng).unwrap();
    let mut layer = Layer::Conv(conv);
    // Non-zero biases so their gradient path is exercised away from zero.
    for b in layer.params_mut().unwrap().1.data_mut() {
        *b = rng.symmetric(0.5);
    }
    let x = Tensor::random_normal(&[groups * per_group_in, h, w], 0.0, 1.0, rng).unwrap();
    (layer, x)
}

fn over_instances(seed: u64, instances: usize, mut one: impl FnMut(usize, &mut RngStream) -> Check) -> Check {
    let mut rng = RngStream::new(seed, 0);
    (0..instances).try_fold(0.0f64, |worst, i| Ok(worst.max(one(i, &mut rng)?)))
}

pub fn conv_ungrouped(instances: usize) -> Check {
    over_instances(1, instances, |i, rng| {
        let (layer, x) = conv_instance(rng, 1);
        check_layer(layer, x, rng, &format!("conv instance {i}"))
    })
}

pub fn conv_grouped(instances: usize) -> Check {
    over_instances(2, instances, |i, rng| {
        let groups = 2 + rng.below(2);
        let (layer, x) = conv_instance(rng, groups);
        check_layer(layer, x, rng, &format!("grouped conv instance {i}"))
    })
}

pub fn max_pool(instances: usize) -> Check {
    over_instances(3, instances, |i, rng| {
        let window = 2 + rng.below(2);
        let stride = 1 + rng.below(3);
        let (c, h, w) = (1 + rng.below(3), window + rng.below(6), window + rng.below(6));
        // Distinct values 0.01 apart: no finite-difference step changes a winner.
        let mut vals: Vec<f64> = (0..c * h * w).map(|k| k as f64 * 0.01).collect();
        rng.shuffle(&mut vals);
        let x = Tensor::from_vec(&[c, h, w], vals).unwrap();
        check_layer(
            Layer::Pool(MaxPool::new(window, stride)),
            x,
            rng,
            &format!("pool instance {i}"),
        )
    })
}

pub fn fully_connected(instances: usize) -> Check {
    over_instances(4, instances, |i, rng| {
        let shape = [1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4)];
        let units = 1 + rng.below(6);
        let mut layer = Layer::Dense(Dense::init(shape.iter().product(), units, rng).unwrap());
        for b in layer.params_mut().unwrap().1.data_mut() {
            *b = rng.symmetric(0.5);
        }
        let x = Tensor::random_normal(&shape, 0.0, 1.0, rng).unwrap();
        check_layer(layer, x, rng, &format!("fc instance {i}"))
    })
}

pub fn relu(instances: usize) -> Check {
    over_instances(5, instances, |i, rng| {
        let n = 1 + rng.below(40);
        // Keep inputs away from the kink at 0.
        let vals = (0..n)
            .map(|_| {
                let v = rng.symmetric(2.0);
                if v.abs() < 1e-3 {
                    0.5
                } else {
                    v
                }
            })
            .collect();
        check_layer(
            Layer::Relu,
            Tensor::from_vec(&[n], vals).unwrap(),
            rng,
            &format!("relu instance {i}"),
        )
    })
}

pub fn dropout_with_fixed_mask(instances: usize) -> Check {
    over_instances(6, instances, |i, rng| {
        let n = 1 + rng.below(40);
        let rate = rng.uniform_range(0.0, 0.9);
        let x = Tensor::random_normal(&[n], 0.0, 1.0, rng).unwrap();
        check_layer(
            Layer::Dropout(Dropout::new(rate).unwrap()),
            x,
            rng,
            &format!("dropout instance {i}"),
        )
    })
}

pub fn softmax_cross_entropy_loss(instances: usize) -> Check {
    over_instances(7, instances, |i, rng| {
        let n = 2 + rng.below(8);
        let class = rng.below(n);
        let mut logits: Vec<f64> = (0..n).map(|_| rng.symmetric(5.0)).collect();
        let (_, analytic) = softmax_cross_entropy(&logits, class).unwrap();
        let numeric = numeric_gradient(&mut logits, |v| softmax_cross_entropy(v, class).unwrap().0);
        within(relative_error(&analytic, &numeric), || {
            format!("softmax instance {i}")
        })
    })
}

/// Parameter gradients of a small conv/pool/fc network, end to end.
pub fn whole_network(instances: usize) -> Check {
    let topology = NetworkTopology {
        layers: vec![
            LayerSpec::conv(3, 4, 1, 1),
            LayerSpec::pool(2, 2),
            LayerSpec::conv(3, 4, 1, 2),
            LayerSpec::fc(6, Activation::Relu),
            LayerSpec::fc(5, Activation::Softmax),
        ],
        input: [1, 9, 7],
        mean_offset: 0.0,
    };
    over_instances(8, instances, |i, rng| {
        let mut net = Network::<f64>::new(topology.clone(), &mut rng.derive(i as u64)).unwrap();
        let x = Tensor::random_normal(&[1, 9, 7], 0.0, 1.0, rng).unwrap();
        let class = rng.below(5);
        let (_, grads) = net
            .loss_and_grads(&x, class, Mode::Infer, &mut RngStream::new(0, 0))
            .unwrap();
        let mut worst = 0.0f64;
        for (p, analytic) in grads.iter().enumerate() {
            let mut values = net.params()[p].data().to_vec();
            let mut loss = |v: &[f64]| {
                net.params_mut()[p].data_mut().copy_from_slice(v);
                net.loss_and_grads(&x, class, Mode::Infer, &mut RngStream::new(0, 0))
                    .unwrap()
                    .0
            };
            let coarse = numeric_gradient(&mut values, &mut loss);
            let fine: Vec<f64> = (0..values.len())
                .map(|k| {
                    let orig = values[k];
                    values[k] = orig + STEP / 10.0;
                    let up = loss(&values);
                    values[k] = orig - STEP / 10.0;
                    let down = loss(&values);
                    values[k] = orig;
                    (up - down) / (0.2 * STEP)
                })
                .collect();
            // A ReLU or pooling switch inside the stencil makes the two
            // step sizes disagree; such elements are not differentiable there.
            let smooth: Vec<usize> = (0..values.len())
                .filter(|&k| (coarse[k] - fine[k]).abs() <= 1e-7 * coarse[k].abs().max(1.0))
                .collect();
            if smooth.len() * 10 < values.len() * 9 {
                return Err(format!("network instance {i}: too many kinks in parameter {p}"));
            }
            let a: Vec<f64> = smooth.iter().map(|&k| analytic.data()[k]).collect();
            let n: Vec<f64> = smooth.iter().map(|&k| coarse[k]).collect();
            worst = worst.max(within(relative_error(&a, &n), || {
                format!("network instance {i}, parameter {p}")
            })?);
        }
        Ok(worst)
    })
}
