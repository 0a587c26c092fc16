//! Grouped 2-D convolution via im2col + GEMM.

use crate::error::{Error, Result};
use crate::layers::ParamGrads;
use crate::real::Real;
use crate::rng::RngStream;
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    /// (height, width)
    pub kernel: (usize, usize),
    pub out_channels: usize,
    pub stride: usize,
    /// Zero padding applied to every side.
    pub padding: usize,
    pub groups: usize,
}

/// `floor((input + 2*padding - kernel) / stride) + 1`, or `None` if the kernel
/// does not fit in the padded input.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ConvParams {
    pub fn new(kernel: usize, out_channels: usize, stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            out_channels,
            stride,
            padding,
            groups,
        }
    }

    pub fn validate(&self, in_channels: usize) -> Result<()> {
        if self.stride == 0 || self.kernel.0 == 0 || self.kernel.1 == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("degenerate convolution {self:?}")));
        }
        if self.groups == 0
            || !in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::Config(format!(
                "groups {} must divide input channels {in_channels} and output channels {}",
                self.groups, self.out_channels
            )));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            output_extent(h, self.kernel.0, self.stride, self.padding),
            output_extent(w, self.kernel.1, self.stride, self.padding),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "kernel {:?} (padding {}) larger than input {h}x{w}",
                self.kernel, self.padding
            ))),
        }
    }

    pub fn weight_count(&self, in_channels: usize) -> usize {
        self.out_channels * (in_channels / self.groups) * self.kernel.0 * self.kernel.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub params: ConvParams,
    pub in_channels: usize,
    /// `[out, in/groups, kh, kw]`
    pub weights: Tensor<T>,
    /// `[out]`
    pub biases: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input_shape: [usize; 3],
    out_hw: (usize, usize),
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        params: ConvParams,
        weights: Tensor<T>,
        biases: Tensor<T>,
    ) -> Result<Self> {
        params.validate(in_channels)?;
        let (kh, kw) = params.kernel;
        let wshape = [params.out_channels, in_channels / params.groups, kh, kw];
        if weights.shape() != wshape || biases.shape() != [params.out_channels] {
            return Err(Error::shape(format!(
                "conv weights {:?} / biases {:?} do not match {wshape:?} / [{}]",
                weights.shape(),
                biases.shape(),
                params.out_channels
            )));
        }
        Ok(Self {
            params,
            in_channels,
            weights,
            biases,
        })
    }

    /// He-normal weights (`sqrt(2 / fan_in)`), zero biases.
    pub fn init(in_channels: usize, params: ConvParams, rng: &mut RngStream) -> Result<Self> {
        params.validate(in_channels)?;
        let (kh, kw) = params.kernel;
        let fan_in = (in_channels / params.groups) * kh * kw;
        let weights = Tensor::random_normal(
            &[params.out_channels, in_channels / params.groups, kh, kw],
            0.0,
            (2.0 / fan_in as f64).sqrt(),
            rng,
        )?;
        let biases = Tensor::zeros(&[params.out_channels])?;
        Self::new(in_channels, params, weights, biases)
    }

    fn input_dims(&self, input: &Tensor<T>) -> Result<[usize; 3]> {
        match *input.shape() {
            [c, h, w] if c == self.in_channels => Ok([c, h, w]),
            _ => Err(Error::shape(format!(
                "conv expects [{}, H, W], got {:?}",
                self.in_channels,
                input.shape()
            ))),
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let [c, h, w] = self.input_dims(input)?;
        let p = &self.params;
        let (oh, ow) = p.output_hw(h, w)?;
        let (kh, kw) = p.kernel;
        let cols = im2col(input.data(), c, h, w, kh, kw, p.stride, p.padding, oh, ow);

        let g = p.groups;
        let cig = c / g;
        let cog = p.out_channels / g;
        let krows = cig * kh * kw;
        let npos = oh * ow;
        let mut out = vec![T::zero(); p.out_channels * npos];
        let wdata = self.weights.data();
        for gi in 0..g {
            let wg = &wdata[gi * cog * krows..(gi + 1) * cog * krows];
            let cg = &cols[gi * krows * npos..(gi + 1) * krows * npos];
            let og = &mut out[gi * cog * npos..(gi + 1) * cog * npos];
            gemm_nn(cog, krows, npos, wg, cg, og);
        }
        for (o, &b) in self.biases.data().iter().enumerate() {
            for v in &mut out[o * npos..(o + 1) * npos] {
                *v += b;
            }
        }
        let output = Tensor::from_vec(&[p.out_channels, oh, ow], out)?;
        Ok((
            output,
            ConvCache {
                input_shape: [c, h, w],
                out_hw: (oh, ow),
                cols,
            },
        ))
    }

    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, ParamGrads<T>)> {
        let [c, h, w] = cache.input_shape;
        let (oh, ow) = cache.out_hw;
        let p = &self.params;
        if grad_out.shape() != [p.out_channels, oh, ow] {
            return Err(Error::shape(format!(
                "conv grad_out {:?} does not match forward output [{}, {oh}, {ow}]",
                grad_out.shape(),
                p.out_channels
            )));
        }
        let (kh, kw) = p.kernel;
        let g = p.groups;
        let cig = c / g;
        let cog = p.out_channels / g;
        let krows = cig * kh * kw;
        let npos = oh * ow;
        let go = grad_out.data();
        let wdata = self.weights.data();

        let mut gw = vec![T::zero(); self.weights.len()];
        let mut gcols = vec![T::zero(); cache.cols.len()];
        for gi in 0..g {
            let gog = &go[gi * cog * npos..(gi + 1) * cog * npos];
            let cg = &cache.cols[gi * krows * npos..(gi + 1) * krows * npos];
            gemm_nt(
                cog,
                npos,
                krows,
                gog,
                cg,
                &mut gw[gi * cog * krows..(gi + 1) * cog * krows],
            );
            let wg = &wdata[gi * cog * krows..(gi + 1) * cog * krows];
            gemm_tn(
                krows,
                cog,
                npos,
                wg,
                gog,
                &mut gcols[gi * krows * npos..(gi + 1) * krows * npos],
            );
        }
        let gb: Vec<T> = (0..p.out_channels)
            .map(|o| go[o * npos..(o + 1) * npos].iter().copied().sum())
            .collect();
        let gin = col2im(&gcols, c, h, w, kh, kw, p.stride, p.padding, oh, ow);
        Ok((
            Tensor::from_vec(&[c, h, w], gin)?,
            ParamGrads {
                weights: Tensor::from_vec(self.weights.shape(), gw)?,
                biases: Tensor::from_vec(&[p.out_channels], gb)?,
            },
        ))
    }
}

/// Unrolls patches into a `[c*kh*kw, oh*ow]` matrix; rows are ordered
/// channel-major so each group's rows are contiguous.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Real>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let npos = oh * ow;
    let mut cols = vec![T::zero(); c * kh * kw * npos];
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<T: Real>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let npos = oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &cols[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}
