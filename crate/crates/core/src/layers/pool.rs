use crate::error::{Error, Result};
use crate::layers::conv::output_extent;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool {
    /// (height, width)
    pub window: (usize, usize),
    pub stride: usize,
}

/// Winner positions from a forward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: [usize; 3],
    out_shape: [usize; 3],
    argmax: Vec<usize>,
}

impl PoolCache {
    /// Flat input offset of the maximum of each output element.
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl MaxPool {
    pub fn new(window: usize, stride: usize) -> Self {
        Self {
            window: (window, window),
            stride,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match (
            output_extent(h, self.window.0, self.stride, 0),
            output_extent(w, self.window.1, self.stride, 0),
        ) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::shape(format!(
                "pool window {:?} larger than input {h}x{w}",
                self.window
            ))),
        }
    }

    /// Ties go to the lowest flat index in the window.
    pub fn forward<T: Real>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
        let [c, h, w] = match *input.shape() {
            [c, h, w] => [c, h, w],
            _ => {
                return Err(Error::shape(format!(
                    "pool expects [C,H,W], got {:?}",
                    input.shape()
                )))
            }
        };
        let (oh, ow) = self.output_hw(h, w)?;
        let x = input.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            let base = ch * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y0, x0) = (oy * self.stride, ox * self.stride);
                    let mut best = base + y0 * w + x0;
                    let mut best_v = x[best];
                    for ky in 0..self.window.0 {
                        let row = base + (y0 + ky) * w + x0;
                        for kx in 0..self.window.1 {
                            let v = x[row + kx];
                            if v > best_v {
                                best_v = v;
                                best = row + kx;
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        Ok((
            Tensor::from_vec(&[c, oh, ow], out)?,
            PoolCache {
                input_shape: [c, h, w],
                out_shape: [c, oh, ow],
                argmax,
            },
        ))
    }

    pub fn backward<T: Real>(&self, cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.shape() != cache.out_shape {
            return Err(Error::shape(format!(
                "pool grad_out {:?} does not match forward output {:?}",
                grad_out.shape(),
                cache.out_shape
            )));
        }
        let mut gin = Tensor::zeros(&cache.input_shape)?;
        let g = gin.data_mut();
        for (&idx, &v) in cache.argmax.iter().zip(grad_out.data()) {
            g[idx] += v;
        }
        Ok(gin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let (y, _) = MaxPool::new(2, 2).forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn table_chain_shape() {
        let p = MaxPool::new(3, 2);
        assert_eq!(p.output_hw(55, 55).unwrap(), (27, 27));
        assert_eq!(p.output_hw(27, 27).unwrap(), (13, 13));
        assert_eq!(p.output_hw(13, 13).unwrap(), (6, 6));
        assert!(matches!(p.output_hw(2, 9), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_input_routes_to_one_winner_per_window() {
        let x = Tensor::<f64>::new_filled(&[1, 4, 4], 7.0).unwrap();
        let pool = MaxPool::new(2, 2);
        let (y, cache) = pool.forward(&x).unwrap();
        assert_eq!(cache.argmax(), &[0, 2, 8, 10]);
        let g = pool
            .backward(&cache, &Tensor::new_filled(y.shape(), 1.0).unwrap())
            .unwrap();
        assert_eq!(g.sum(), 4.0);
        assert_eq!(g.data().iter().filter(|&&v| v == 1.0).count(), 4);
    }

    #[test]
    fn overlapping_windows_accumulate() {
        // 3x3 windows with stride 2 overlap on the shared column.
        let mut x = Tensor::<f64>::zeros(&[1, 3, 5]).unwrap();
        x.data_mut()[7] = 9.0; // row 1, col 2
        let pool = MaxPool::new(3, 2);
        let (y, cache) = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[9.0, 9.0]);
        let g = pool
            .backward(&cache, &Tensor::from_vec(&[1, 1, 2], vec![1.0, 2.0]).unwrap())
            .unwrap();
        assert_eq!(g.data()[7], 3.0);
    }
}
