//! Declarative network descriptions.
//!
//! A [`NetworkTopology`] is a linear stack of [`LayerSpec`]s plus the input
//! shape and the scalar training-set mean that is subtracted from every
//! input. Two builders reproduce the CaffeNet variant and the smaller proposed
//! network; both accept a uniform width `scale` for CPU-sized experiments.
//!
//! # Canonical text form
//!
//! ```text
//! input;1x227x227
//! mean;0.0
//! conv;11x11x96p0;4;1;relu
//! pool;3x3;2;-;none
//! fc;4096;-;-;relu+dropout(0.5)
//! fc;5;-;-;softmax
//! ```
//!
//! Layer lines are `kind;geometry;stride;groups;activation`. Conv geometry is
//! `KHxKWxOUTpPAD`; pool geometry is `KHxKW`; fc geometry is the unit count.
//! `-` marks fields that do not apply.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::layers::{ConvParams, MaxPool};
use crate::real::Real;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 5;
pub const DEFAULT_DROPOUT: f64 = 0.5;
/// Images are fitted to this square before entering the full-size networks.
pub const FULL_INPUT: usize = 227;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Conv(ConvParams),
    Pool(MaxPool),
    FullyConnected { units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    None,
    Relu,
    ReluDropout(f64),
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub layers: Vec<LayerSpec>,
    /// (channels, height, width)
    pub input: [usize; 3],
    pub mean_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_layer: Vec<usize>,
    pub total: usize,
}

impl LayerSpec {
    pub fn conv(kernel: usize, out: usize, stride: usize, groups: usize) -> Self {
        Self {
            kind: LayerKind::Conv(ConvParams::new(
                kernel,
                out,
                stride,
                conventional_padding(kernel),
                groups,
            )),
            activation: Activation::Relu,
        }
    }

    pub fn pool(window: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Pool(MaxPool::new(window, stride)),
            activation: Activation::None,
        }
    }

    pub fn fc(units: usize, activation: Activation) -> Self {
        Self {
            kind: LayerKind::FullyConnected { units },
            activation,
        }
    }
}

/// 0 for 11x11 kernels, 2 for 5x5, 1 for 3x3: the values that make the
/// 227x227 chains end at 6x6.
pub fn conventional_padding(kernel: usize) -> usize {
    match kernel {
        5 => 2,
        3 => 1,
        _ => 0,
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn scaled(count: usize, scale: f64, multiple: usize, what: &str) -> Result<usize> {
    let m = multiple as f64;
    let n = ((count as f64 * scale) / m).round() as usize * multiple;
    if n == 0 {
        return Err(Error::invalid(format!(
            "scale {scale} reduces {what} ({count}) to zero"
        )));
    }
    Ok(n)
}

/// Applies a width scale to a full-size layer list: every conv channel count
/// and hidden fc width is multiplied and rounded to the nearest multiple of
/// the group counts that must divide it (its own and its consumer's).
fn scale_layers(layers: Vec<LayerSpec>, scale: f64) -> Result<Vec<LayerSpec>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::invalid(format!("scale must be in (0, 1], got {scale}")));
    }
    let last = layers.len() - 1;
    let mut out = layers.clone();
    for (i, spec) in layers.iter().enumerate() {
        match spec.kind {
            LayerKind::Conv(p) => {
                let consumer_groups = layers[i + 1..]
                    .iter()
                    .find_map(|l| match l.kind {
                        LayerKind::Conv(q) => Some(q.groups),
                        LayerKind::FullyConnected { .. } => Some(1),
                        LayerKind::Pool(_) => None,
                    })
                    .unwrap_or(1);
                let multiple = p.groups / gcd(p.groups, consumer_groups) * consumer_groups;
                let mut q = p;
                q.out_channels = scaled(p.out_channels, scale, multiple, &format!("layer {i} channels"))?;
                out[i].kind = LayerKind::Conv(q);
            }
            LayerKind::FullyConnected { units } if i != last => {
                out[i].kind = LayerKind::FullyConnected {
                    units: scaled(units, scale, 1, &format!("layer {i} units"))?,
                };
            }
            _ => {}
        }
    }
    Ok(out)
}

/// The CaffeNet variant: 5 conv, 3 pool, 3 fully connected layers.
pub fn build_caffenet_variant(scale: f64) -> Result<NetworkTopology> {
    let d = Activation::ReluDropout(DEFAULT_DROPOUT);
    let layers = vec![
        LayerSpec::conv(11, 96, 4, 1),
        LayerSpec::pool(3, 2),
        LayerSpec::conv(5, 256, 1, 2),
        LayerSpec::pool(3, 2),
        LayerSpec::conv(3, 384, 1, 1),
        LayerSpec::conv(3, 384, 1, 2),
        LayerSpec::conv(3, 256, 1, 2),
        LayerSpec::pool(3, 2),
        LayerSpec::fc(4096, d),
        LayerSpec::fc(512, d),
        LayerSpec::fc(NUM_CLASSES, Activation::Softmax),
    ];
    NetworkTopology::new(scale_layers(layers, scale)?, [1, FULL_INPUT, FULL_INPUT])
}

/// The proposed, narrower network: 4 conv, 3 pool, 3 fully connected layers.
pub fn build_proposed(scale: f64) -> Result<NetworkTopology> {
    let d = Activation::ReluDropout(DEFAULT_DROPOUT);
    let layers = vec![
        LayerSpec::conv(11, 48, 4, 1),
        LayerSpec::pool(3, 2),
        LayerSpec::conv(5, 128, 1, 2),
        LayerSpec::pool(3, 2),
        LayerSpec::conv(3, 192, 1, 1),
        LayerSpec::conv(3, 128, 1, 2),
        LayerSpec::pool(3, 2),
        LayerSpec::fc(2096, d),
        LayerSpec::fc(256, d),
        LayerSpec::fc(NUM_CLASSES, Activation::Softmax),
    ];
    NetworkTopology::new(scale_layers(layers, scale)?, [1, FULL_INPUT, FULL_INPUT])
}

impl NetworkTopology {
    /// Validates the structural invariants: ends in a softmax layer with one
    /// unit per class, no softmax elsewhere, shapes infer end-to-end.
    pub fn new(layers: Vec<LayerSpec>, input: [usize; 3]) -> Result<Self> {
        let topo = Self {
            layers,
            input,
            mean_offset: 0.0,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn with_input(mut self, channels: usize, height: usize, width: usize) -> Result<Self> {
        self.input = [channels, height, width];
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layers.len();
        if n == 0 {
            return Err(Error::Topology {
                layer: 0,
                message: "empty topology".into(),
            });
        }
        for (i, l) in self.layers.iter().enumerate() {
            let is_last = i + 1 == n;
            match (l.kind, l.activation, is_last) {
                (LayerKind::FullyConnected { units }, Activation::Softmax, true) if units == NUM_CLASSES => {}
                (_, _, true) => {
                    return Err(Error::Topology {
                        layer: i,
                        message: format!("final layer must be fc {NUM_CLASSES} with softmax"),
                    })
                }
                (_, Activation::Softmax, false) => {
                    return Err(Error::Topology {
                        layer: i,
                        message: "softmax only allowed on the final layer".into(),
                    })
                }
                (_, Activation::ReluDropout(r), _) if !(0.0..1.0).contains(&r) => {
                    return Err(Error::Topology {
                        layer: i,
                        message: format!("dropout rate {r} outside [0, 1)"),
                    })
                }
                _ => {}
            }
        }
        if !self.mean_offset.is_finite() {
            return Err(Error::invalid("mean offset must be finite"));
        }
        self.infer_shapes().map(|_| ())
    }

    /// Number of input neurons (`C*H*W`).
    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    /// Output shape of every layer, in order.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input.to_vec();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let err = |message: String| Error::Topology { layer: i, message };
            shape = match l.kind {
                LayerKind::Conv(p) => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(format!("convolution needs a [C,H,W] input, got {shape:?}")));
                    };
                    p.validate(c).map_err(|e| err(e.to_string()))?;
                    let (oh, ow) = p.output_hw(h, w).map_err(|e| err(e.to_string()))?;
                    vec![p.out_channels, oh, ow]
                }
                LayerKind::Pool(p) => {
                    let [c, h, w] = shape[..] else {
                        return Err(err(format!("pooling needs a [C,H,W] input, got {shape:?}")));
                    };
                    let (oh, ow) = p.output_hw(h, w).map_err(|e| err(e.to_string()))?;
                    vec![c, oh, ow]
                }
                LayerKind::FullyConnected { units } => {
                    if units == 0 {
                        return Err(err("fully connected layer with 0 units".into()));
                    }
                    vec![units]
                }
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> Result<ParamCount> {
        let shapes = self.infer_shapes()?;
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let in_shape = if i == 0 {
                self.input.to_vec()
            } else {
                shapes[i - 1].clone()
            };
            let n_in: usize = in_shape.iter().product();
            per_layer.push(match l.kind {
                LayerKind::Conv(p) => p.weight_count(in_shape[0]) + p.out_channels,
                LayerKind::Pool(_) => 0,
                LayerKind::FullyConnected { units } => n_in * units + units,
            });
        }
        let total = per_layer.iter().sum();
        Ok(ParamCount { per_layer, total })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [c, h, w] = self.input;
        let _ = writeln!(s, "input;{c}x{h}x{w}");
        let _ = writeln!(s, "mean;{:?}", self.mean_offset);
        for l in &self.layers {
            let act = match l.activation {
                Activation::None => "none".to_string(),
                Activation::Relu => "relu".to_string(),
                Activation::ReluDropout(r) => format!("relu+dropout({r:?})"),
                Activation::Softmax => "softmax".to_string(),
            };
            let _ = match l.kind {
                LayerKind::Conv(p) => writeln!(
                    s,
                    "conv;{}x{}x{}p{};{};{};{act}",
                    p.kernel.0, p.kernel.1, p.out_channels, p.padding, p.stride, p.groups
                ),
                LayerKind::Pool(p) => writeln!(s, "pool;{}x{};{};-;{act}", p.window.0, p.window.1, p.stride),
                LayerKind::FullyConnected { units } => writeln!(s, "fc;{units};-;-;{act}"),
            };
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut input = None;
        let mut mean = 0.0;
        let mut layers = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::invalid(format!("topology line {}: {msg}: {line:?}", lineno + 1));
            let fields: Vec<&str> = line.split(';').collect();
            match fields[0] {
                "input" if fields.len() == 2 => {
                    let dims = parse_dims(fields[1]).ok_or_else(|| bad("bad input shape"))?;
                    let [c, h, w] = dims[..] else {
                        return Err(bad("input must be CxHxW"));
                    };
                    input = Some([c, h, w]);
                }
                "mean" if fields.len() == 2 => {
                    mean = fields[1].parse().map_err(|_| bad("bad mean offset"))?;
                }
                kind if fields.len() == 5 => {
                    let activation = parse_activation(fields[4]).ok_or_else(|| bad("bad activation"))?;
                    let num = |f: &str| f.parse::<usize>().map_err(|_| bad("bad number"));
                    let kind = match kind {
                        "conv" => {
                            let (dims, pad) = fields[1]
                                .split_once('p')
                                .ok_or_else(|| bad("conv geometry needs pPAD"))?;
                            let dims = parse_dims(dims).ok_or_else(|| bad("bad conv geometry"))?;
                            let [kh, kw, out] = dims[..] else {
                                return Err(bad("conv geometry must be KHxKWxOUT"));
                            };
                            LayerKind::Conv(ConvParams {
                                kernel: (kh, kw),
                                out_channels: out,
                                stride: num(fields[2])?,
                                padding: num(pad)?,
                                groups: num(fields[3])?,
                            })
                        }
                        "pool" => {
                            let dims = parse_dims(fields[1]).ok_or_else(|| bad("bad pool geometry"))?;
                            let [kh, kw] = dims[..] else {
                                return Err(bad("pool geometry must be KHxKW"));
                            };
                            LayerKind::Pool(MaxPool {
                                window: (kh, kw),
                                stride: num(fields[2])?,
                            })
                        }
                        "fc" => LayerKind::FullyConnected {
                            units: num(fields[1])?,
                        },
                        _ => return Err(bad("unknown layer kind")),
                    };
                    layers.push(LayerSpec { kind, activation });
                }
                _ => return Err(bad("unrecognised line")),
            }
        }
        let input = input.ok_or_else(|| Error::invalid("topology text has no input line"))?;
        let mut topo = Self {
            layers,
            input,
            mean_offset: mean,
        };
        topo.validate()?;
        topo.mean_offset = mean;
        Ok(topo)
    }
}

fn parse_dims(s: &str) -> Option<Vec<usize>> {
    s.split('x').map(|d| d.parse().ok()).collect()
}

fn parse_activation(s: &str) -> Option<Activation> {
    Some(match s {
        "none" => Activation::None,
        "relu" => Activation::Relu,
        "softmax" => Activation::Softmax,
        _ => {
            let rate = s.strip_prefix("relu+dropout(")?.strip_suffix(')')?;
            Activation::ReluDropout(rate.parse().ok()?)
        }
    })
}

/// Scalar mean over all pixels of all training images.
pub fn compute_mean_offset<'a, T: Real>(images: impl IntoIterator<Item = &'a Tensor<T>>) -> Result<f64> {
    let (mut sum, mut n) = (0.0f64, 0usize);
    for img in images {
        sum += img.data().iter().map(|x| x.as_f64()).sum::<f64>();
        n += img.len();
    }
    if n == 0 {
        return Err(Error::invalid("mean offset of an empty image set"));
    }
    Ok(sum / n as f64)
}

/// Bilinear resize of a `[C,H,W]` image to `[C,height,width]` (pixel-centre
/// aligned, aspect ratio not preserved). Same-size input is returned as is.
pub fn fit_image<T: Real>(image: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let [c, h, w] = match *image.shape() {
        [c, h, w] => [c, h, w],
        _ => {
            return Err(Error::shape(format!(
                "fit_image expects [C,H,W], got {:?}",
                image.shape()
            )))
        }
    };
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape(vec![c, height, width]));
    }
    if (h, w) == (height, width) {
        return Ok(image.clone());
    }
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let src = image.data();
    let mut out = Vec::with_capacity(c * height * width);
    let coord = |dst: usize, scale: f64, n: usize| {
        let p = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..height {
            let (y0, y1, fy) = coord(y, sy, h);
            for x in 0..width {
                let (x0, x1, fx) = coord(x, sx, w);
                let v = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push(T::of(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Tensor::from_vec(&[c, height, width], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn caffenet_layers_match_table() {
        let t = build_caffenet_variant(1.0).unwrap();
        assert_eq!(t.layers.len(), 11);
        let convs: Vec<(usize, usize, usize, usize)> = t
            .layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::Conv(p) => Some((p.kernel.0, p.out_channels, p.stride, p.groups)),
                _ => None,
            })
            .collect();
        assert_eq!(
            convs,
            vec![
                (11, 96, 4, 1),
                (5, 256, 1, 2),
                (3, 384, 1, 1),
                (3, 384, 1, 2),
                (3, 256, 1, 2)
            ]
        );
        assert_eq!(t.layers[8].activation, Activation::ReluDropout(0.5));
        assert_eq!(t.layers[10].activation, Activation::Softmax);
    }

    #[test]
    fn scale_half() {
        let t = build_caffenet_variant(0.5).unwrap();
        match t.layers[0].kind {
            LayerKind::Conv(p) => assert_eq!(p.out_channels, 48),
            _ => unreachable!(),
        }
        assert!(build_proposed(0.0).is_err());
        assert!(build_proposed(1.5).is_err());
        assert!(build_proposed(f64::NAN).is_err());
    }

    #[test]
    fn underflow_names_layer() {
        let t = build_caffenet_variant(1.0).unwrap();
        match t.with_input(1, 8, 8) {
            Err(Error::Topology { layer: 0, .. }) => {}
            other => panic!("expected topology error at conv1, got {other:?}"),
        }
    }

    #[test]
    fn mean_offset() {
        let z = Tensor::<f32>::zeros(&[1, 4, 4]).unwrap();
        assert_eq!(compute_mean_offset([&z, &z]).unwrap(), 0.0);
        let a = Tensor::<f64>::new_filled(&[1, 3, 3], 10.0).unwrap();
        let b = Tensor::<f64>::new_filled(&[1, 3, 3], 20.0).unwrap();
        assert_eq!(compute_mean_offset([&a, &b]).unwrap(), 15.0);
        assert!(compute_mean_offset(std::iter::empty::<&Tensor<f64>>()).is_err());
    }

    #[test]
    fn text_rejects_garbage() {
        assert!(NetworkTopology::parse("input;1x8x8\nwat;1;2;3;4\n").is_err());
        assert!(NetworkTopology::parse("conv;3x3x4p1;1;1;relu\n").is_err());
    }

    #[test]
    fn fit_image_identity_and_constant() {
        let img = Tensor::<f64>::from_vec(&[1, 2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(fit_image(&img, 2, 3).unwrap(), img);
        let c = Tensor::<f64>::new_filled(&[1, 10, 7], 42.0).unwrap();
        let r = fit_image(&c, 227, 227).unwrap();
        assert_eq!(r.shape(), &[1, 227, 227]);
        assert!(r.data().iter().all(|&v| (v - 42.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn grouped_counts_divisible_at_any_scale(scale in 0.05f64..=1.0, which in 0usize..2) {
            let t = if which == 0 { build_caffenet_variant(scale) } else { build_proposed(scale) };
            let t = t.unwrap();
            let shapes = t.infer_shapes().unwrap();
            for (i, l) in t.layers.iter().enumerate() {
                if let LayerKind::Conv(p) = l.kind {
                    let cin = if i == 0 { 1 } else { shapes[i - 1][0] };
                    prop_assert_eq!(p.out_channels % p.groups, 0);
                    prop_assert_eq!(cin % p.groups, 0);
                }
            }
        }

        #[test]
        fn text_round_trip(scale in 0.1f64..=1.0, which in 0usize..2, mean in -300.0f64..300.0) {
            let mut t = if which == 0 { build_caffenet_variant(scale) } else { build_proposed(scale) }.unwrap();
            t.mean_offset = mean;
            let back = NetworkTopology::parse(&t.to_text()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.infer_shapes().unwrap(), t.infer_shapes().unwrap());
            prop_assert_eq!(back.param_count().unwrap(), t.param_count().unwrap());
        }
    }
}
