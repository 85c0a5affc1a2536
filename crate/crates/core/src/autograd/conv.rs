//! im2col + GEMM kernels for 2-D convolution and its two adjoints.
//!
//! `conv2d`, `conv2d_input_grad` and `conv2d_weight_grad` are the three
//! faces of one trilinear form `<g, conv(x, w)>`, which is what lets the
//! autograd layer differentiate each of them in terms of the others.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl ConvGeom {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), padding: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (ph, pw) = self.padding;
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 || h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::shape(format!(
                "kernel {:?} with padding {:?} does not fit input {h}x{w}",
                self.kernel, self.padding
            )));
        }
        Ok(((h + 2 * ph - kh) / sh + 1, (w + 2 * pw - kw) / sw + 1))
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(Error::shape(format!("{what} must be 4-D, got {s:?}"))),
    }
}

/// Fills `cols` ([Ci*kh*kw, B*P] row-major) from x [B, Ci, H, W].
fn im2col(x: &[f64], dims: [usize; 4], g: &ConvGeom, out_hw: (usize, usize), cols: &mut [f64]) {
    let [b, ci, h, w] = dims;
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let (ho, wo) = out_hw;
    let p = ho * wo;
    let bp = b * p;
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let dst = &mut cols[row * bp..(row + 1) * bp];
                for n in 0..b {
                    let src = &x[(n * ci + c) * h * w..(n * ci + c + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        let base = n * p + oy * wo;
                        if iy < 0 || iy >= h as isize {
                            dst[base..base + wo].fill(0.0);
                            continue;
                        }
                        let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            dst[base + ox] = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into x-shaped storage; adjoint of [`im2col`].
fn col2im(cols: &[f64], dims: [usize; 4], g: &ConvGeom, out_hw: (usize, usize), x: &mut [f64]) {
    let [b, ci, h, w] = dims;
    let (kh, kw) = g.kernel;
    let (sh, sw) = g.stride;
    let (ph, pw) = g.padding;
    let (ho, wo) = out_hw;
    let p = ho * wo;
    let bp = b * p;
    for c in 0..ci {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (c * kh + ky) * kw + kx;
                let src = &cols[row * bp..(row + 1) * bp];
                for n in 0..b {
                    let dst = &mut x[(n * ci + c) * h * w..(n * ci + c + 1) * h * w];
                    for oy in 0..ho {
                        let iy = (oy * sh + ky) as isize - ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = n * p + oy * wo;
                        let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += src[base + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// [B, C, P] -> [C, B*P]
fn batch_major_to_channel_major(t: &[f64], b: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * c * p];
    for n in 0..b {
        for ch in 0..c {
            let src = &t[(n * c + ch) * p..(n * c + ch + 1) * p];
            out[ch * b * p + n * p..ch * b * p + (n + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// [C, B*P] -> [B, C, P]
fn channel_major_to_batch_major(t: &[f64], b: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * c * p];
    for ch in 0..c {
        for n in 0..b {
            let src = &t[ch * b * p + n * p..ch * b * p + (n + 1) * p];
            out[(n * c + ch) * p..(n * c + ch + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// Cross-correlation of x [B, Ci, H, W] with w [Co, Ci, kh, kw].
pub fn conv2d(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let xd = dims4(x, "conv2d input")?;
    let [co, wci, kh, kw] = dims4(w, "conv2d weight")?;
    let [b, ci, h, wd] = xd;
    if wci != ci || (kh, kw) != g.kernel {
        return Err(Error::shape(format!(
            "conv2d weight {:?} incompatible with input {:?} / kernel {:?}",
            w.shape(),
            x.shape(),
            g.kernel
        )));
    }
    let (ho, wo) = g.output_hw(h, wd)?;
    let k = ci * kh * kw;
    let bp = b * ho * wo;
    let mut cols = vec![0.0; k * bp];
    im2col(x.data(), xd, g, (ho, wo), &mut cols);
    let mut out = vec![0.0; co * bp];
    gemm(
        co,
        k,
        bp,
        1.0,
        (w.data(), k as isize, 1),
        (&cols, bp as isize, 1),
        0.0,
        (&mut out, bp as isize, 1),
    );
    let data = channel_major_to_batch_major(&out, b, co, ho * wo);
    Tensor::new(vec![b, co, ho, wo], data)
}

/// Adjoint of [`conv2d`] with respect to its input: maps g [B, Co, Ho, Wo]
/// back to [B, Ci, H, W]. This is also a transposed convolution.
pub fn conv2d_input_grad(
    gout: &Tensor,
    w: &Tensor,
    g: &ConvGeom,
    in_hw: (usize, usize),
) -> Result<Tensor> {
    let [b, gco, ho, wo] = dims4(gout, "conv2d_input_grad upstream")?;
    let [co, ci, kh, kw] = dims4(w, "conv2d_input_grad weight")?;
    if gco != co || (kh, kw) != g.kernel || g.output_hw(in_hw.0, in_hw.1)? != (ho, wo) {
        return Err(Error::shape(format!(
            "conv2d_input_grad: upstream {:?}, weight {:?}, input {in_hw:?} disagree",
            gout.shape(),
            w.shape()
        )));
    }
    let k = ci * kh * kw;
    let p = ho * wo;
    let bp = b * p;
    let gcm = batch_major_to_channel_major(gout.data(), b, co, p);
    let mut cols = vec![0.0; k * bp];
    // cols = W^T g
    gemm(
        k,
        co,
        bp,
        1.0,
        (w.data(), 1, k as isize),
        (&gcm, bp as isize, 1),
        0.0,
        (&mut cols, bp as isize, 1),
    );
    let dims = [b, ci, in_hw.0, in_hw.1];
    let mut x = vec![0.0; b * ci * in_hw.0 * in_hw.1];
    col2im(&cols, dims, g, (ho, wo), &mut x);
    Tensor::new(dims.to_vec(), x)
}

/// Adjoint of [`conv2d`] with respect to its weight.
pub fn conv2d_weight_grad(x: &Tensor, gout: &Tensor, g: &ConvGeom) -> Result<Tensor> {
    let xd = dims4(x, "conv2d_weight_grad input")?;
    let [b, co, ho, wo] = dims4(gout, "conv2d_weight_grad upstream")?;
    let [xb, ci, h, w] = xd;
    if xb != b || g.output_hw(h, w)? != (ho, wo) {
        return Err(Error::shape(format!(
            "conv2d_weight_grad: input {:?} and upstream {:?} disagree",
            x.shape(),
            gout.shape()
        )));
    }
    let (kh, kw) = g.kernel;
    let k = ci * kh * kw;
    let p = ho * wo;
    let bp = b * p;
    let mut cols = vec![0.0; k * bp];
    im2col(x.data(), xd, g, (ho, wo), &mut cols);
    let gcm = batch_major_to_channel_major(gout.data(), b, co, p);
    let mut dw = vec![0.0; co * k];
    // dW = g cols^T
    gemm(
        co,
        bp,
        k,
        1.0,
        (&gcm, bp as isize, 1),
        (&cols, 1, bp as isize),
        0.0,
        (&mut dw, k as isize, 1),
    );
    Tensor::new(vec![co, ci, kh, kw], dw)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
        let [b, ci, h, wd] = dims4(x, "").unwrap();
        let [co, _, kh, kw] = dims4(w, "").unwrap();
        let (ho, wo) = g.output_hw(h, wd).unwrap();
        let mut out = vec![0.0; b * co * ho * wo];
        for n in 0..b {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = 0.0;
                        for c in 0..ci {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * g.stride.0 + ky) as isize - g.padding.0 as isize;
                                    let ix = (ox * g.stride.1 + kx) as isize - g.padding.1 as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    s += x.data()[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((o * ci + c) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((n * co + o) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        Tensor::new(vec![b, co, ho, wo], out).unwrap()
    }

    fn pseudo(shape: &[usize], salt: f64) -> Tensor {
        Tensor::from_fn(shape, |i| ((i as f64 * 0.731 + salt).sin() * 1.3).tanh())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_naive_loop() {
        let g = ConvGeom::new((5, 3), (2, 1), (2, 1));
        let x = pseudo(&[2, 3, 9, 6], 0.1);
        let w = pseudo(&[4, 3, 5, 3], 0.7);
        let fast = conv2d(&x, &w, &g).unwrap();
        let slow = naive_conv(&x, &w, &g);
        assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_identities() {
        // <g, conv(x,w)> = <input_grad(g,w), x> = <weight_grad(x,g), w>
        let g = ConvGeom::new((4, 4), (2, 2), (1, 1));
        let x = pseudo(&[3, 2, 8, 6], 0.3);
        let w = pseudo(&[5, 2, 4, 4], 1.1);
        let y = conv2d(&x, &w, &g).unwrap();
        let up = pseudo(y.shape(), 2.2);
        let lhs = dot(&up, &y);
        let gx = conv2d_input_grad(&up, &w, &g, (8, 6)).unwrap();
        let gw = conv2d_weight_grad(&x, &up, &g).unwrap();
        assert!((lhs - dot(&gx, &x)).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - dot(&gw, &w)).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn transposed_conv_doubles_resolution() {
        let g = ConvGeom::new((4, 4), (2, 2), (1, 1));
        let x = pseudo(&[1, 3, 5, 1], 0.0);
        let w = pseudo(&[3, 2, 4, 4], 0.5);
        let y = conv2d_input_grad(&x, &w, &g, (10, 2)).unwrap();
        assert_eq!(y.shape(), &[1, 2, 10, 2]);
        assert!(conv2d_input_grad(&x, &w, &g, (12, 2)).is_err());
    }
}
