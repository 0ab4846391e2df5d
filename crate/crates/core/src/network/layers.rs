//! Layer primitives with explicit forward and backward passes.
//!
//! Convolutions lower to a column matrix ("im2col") and a single matrix
//! product; the backward pass reuses the cached column matrix for the weight
//! gradient and scatters the column gradient back onto the input. Everything
//! is `f64` and deterministic: accumulation order is fixed by the loops.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier-uniform fill: limit `sqrt(6 / (fan_in + fan_out))` where
/// `fan_in = cin * k * k` and `fan_out = cout * k * k` (same convention for
/// transposed convolutions).
fn xavier(rng: &mut ChaCha8Rng, shape: (usize, usize), fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn(shape, |_| rng.gen_range(-limit..limit))
}

/// 3x3 convolution, padding 1, stride 1 or 2. Weights are stored flattened
/// as `(cout, cin * 9)` to match the column matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
}

pub struct ConvCache {
    col: Array2<f64>,
    in_dim: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn init(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Conv2d {
            w: xavier(rng, (cout, cin * 9), cin * 9, cout * 9),
            b: Array1::zeros(cout),
            cin,
            cout,
            stride,
        }
    }

    pub fn zeros(cin: usize, cout: usize, stride: usize) -> Self {
        Conv2d { w: Array2::zeros((cout, cin * 9)), b: Array1::zeros(cout), cin, cout, stride }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let mut col = Array2::zeros((c * 9, oh * ow));
        for ci in 0..c {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ci * 9 + ky * 3 + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            col[(row, oy * ow + ox)] = x[(ci, iy as usize, ix as usize)];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvCache) {
        let in_dim = x.dim();
        assert_eq!(in_dim.0, self.cin, "conv input channels");
        let (oh, ow) = self.out_hw(in_dim.1, in_dim.2);
        let col = self.im2col(x);
        let mut flat = self.w.dot(&col);
        for (mut row, &bias) in flat.rows_mut().into_iter().zip(self.b.iter()) {
            row += bias;
        }
        let out = flat.into_shape_with_order((self.cout, oh, ow)).unwrap();
        (out, ConvCache { col, in_dim, out_hw: (oh, ow) })
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient.
    pub fn backward(&self, cache: &ConvCache, dout: &Array3<f64>, grad: &mut Conv2d) -> Array3<f64> {
        let (oh, ow) = cache.out_hw;
        let dflat = dout
            .to_owned()
            .into_shape_with_order((self.cout, oh * ow))
            .expect("contiguous output gradient");
        for (g, row) in grad.b.iter_mut().zip(dflat.rows()) {
            *g += row.sum();
        }
        grad.w += &dflat.dot(&cache.col.t());
        let dcol = self.w.t().dot(&dflat);

        let (c, h, w) = cache.in_dim;
        let mut dx = Array3::zeros((c, h, w));
        for ci in 0..c {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ci * 9 + ky * 3 + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            dx[(ci, iy as usize, ix as usize)] += dcol[(row, oy * ow + ox)];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// 2x2 transposed convolution with stride 2: exact 2x upsampling where each
/// output pixel is produced by exactly one input pixel and one kernel tap.
/// Weights are `(cin, cout * 4)`, the 4 indexing (dy, dx) in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2 {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub cin: usize,
    pub cout: usize,
}

pub struct ConvTCache {
    x_flat: Array2<f64>,
    in_hw: (usize, usize),
}

impl ConvTranspose2 {
    pub fn init(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        ConvTranspose2 {
            w: xavier(rng, (cin, cout * 4), cin * 4, cout * 4),
            b: Array1::zeros(cout),
            cin,
            cout,
        }
    }

    pub fn zeros(cin: usize, cout: usize) -> Self {
        ConvTranspose2 { w: Array2::zeros((cin, cout * 4)), b: Array1::zeros(cout), cin, cout }
    }

    pub fn forward(&self, x: &Array3<f64>) -> (Array3<f64>, ConvTCache) {
        let (c, h, w) = x.dim();
        assert_eq!(c, self.cin, "upconv input channels");
        let x_flat = x.to_owned().into_shape_with_order((c, h * w)).unwrap();
        let tmp = self.w.t().dot(&x_flat); // (cout*4, h*w)
        let mut out = Array3::zeros((self.cout, 2 * h, 2 * w));
        for co in 0..self.cout {
            for dy in 0..2 {
                for dx in 0..2 {
                    let row = co * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for x_ in 0..w {
                            out[(co, 2 * y + dy, 2 * x_ + dx)] = tmp[(row, y * w + x_)] + self.b[co];
                        }
                    }
                }
            }
        }
        (out, ConvTCache { x_flat, in_hw: (h, w) })
    }

    pub fn backward(
        &self,
        cache: &ConvTCache,
        dout: &Array3<f64>,
        grad: &mut ConvTranspose2,
    ) -> Array3<f64> {
        let (h, w) = cache.in_hw;
        let mut dtmp = Array2::zeros((self.cout * 4, h * w));
        for co in 0..self.cout {
            let mut bsum = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let row = co * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for x_ in 0..w {
                            let v = dout[(co, 2 * y + dy, 2 * x_ + dx)];
                            dtmp[(row, y * w + x_)] = v;
                            bsum += v;
                        }
                    }
                }
            }
            grad.b[co] += bsum;
        }
        grad.w += &cache.x_flat.dot(&dtmp.t());
        let dx_flat = self.w.dot(&dtmp);
        dx_flat.into_shape_with_order((self.cin, h, w)).unwrap()
    }
}

pub fn leaky_relu(x: &mut Array3<f64>, slope: f64) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
}

/// Scales the gradient by `slope` wherever the activation output was not
/// positive (the negative branch; `slope = 0` gives the plain ReLU gradient).
pub fn leaky_relu_backward(dout: &mut Array3<f64>, out: &Array3<f64>, slope: f64) {
    dout.zip_mut_with(out, |d, &o| {
        if o <= 0.0 {
            *d *= slope;
        }
    });
}

pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).expect("matching spatial dims")
}

pub fn split_channels(d: &Array3<f64>, c0: usize) -> (Array3<f64>, Array3<f64>) {
    let a = d.slice(ndarray::s![..c0, .., ..]).to_owned();
    let b = d.slice(ndarray::s![c0.., .., ..]).to_owned();
    (a, b)
}
