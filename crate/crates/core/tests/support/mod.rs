//! Independent reference implementations shared by the test binaries.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stftsynth::models::gru::GruCell;
use stftsynth::Tensor;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One direction of a GRU by explicit loops over every weight index.
pub fn gru_scalar(cell: &GruCell, seq: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let (inp, hid) = (cell.input_size(), cell.hidden_size());
    let at = |t: &Tensor, r: usize, c: usize| t.data()[r * hid + c];
    let mut h = vec![0.0; hid];
    let mut out = vec![vec![0.0; hid]; seq.len()];
    let order: Vec<usize> = if reverse { (0..seq.len()).rev().collect() } else { (0..seq.len()).collect() };
    for t in order {
        let x = &seq[t];
        let mut z = vec![0.0; hid];
        let mut r = vec![0.0; hid];
        for j in 0..hid {
            let (mut az, mut ar) = (cell.b_z.data()[j], cell.b_r.data()[j]);
            for i in 0..inp {
                az += x[i] * at(&cell.w_z, i, j);
                ar += x[i] * at(&cell.w_r, i, j);
            }
            for k in 0..hid {
                az += h[k] * at(&cell.u_z, k, j);
                ar += h[k] * at(&cell.u_r, k, j);
            }
            z[j] = sigmoid(az);
            r[j] = sigmoid(ar);
        }
        let mut next = vec![0.0; hid];
        for j in 0..hid {
            let mut a = cell.b_h.data()[j];
            for i in 0..inp {
                a += x[i] * at(&cell.w_h, i, j);
            }
            for k in 0..hid {
                a += r[k] * h[k] * at(&cell.u_h, k, j);
            }
            next[j] = (1.0 - z[j]) * h[j] + z[j] * a.tanh();
        }
        h = next;
        out[t] = h.clone();
    }
    out
}

/// Random cell with non-zero biases drawn from `rng`.
pub fn random_cell(inp: usize, hid: usize, rng: &mut ChaCha8Rng) -> GruCell {
    let mut c = GruCell::random(inp, hid, rng);
    for b in [&mut c.b_z, &mut c.b_r, &mut c.b_h] {
        b.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    c
}

/// SSIM as the product of luminance, contrast and structure terms with a
/// 2-D Gaussian window built directly, averaged over valid placements.
pub fn ssim_reference(x: &Tensor, y: &Tensor) -> f64 {
    let (h, w) = (x.shape()[0], x.shape()[1]);
    let k = 7.min(h).min(w);
    let (c1, c2) = (1e-4, 9e-4);
    let c3 = c2 / 2.0;
    let centre = (k as f64 - 1.0) / 2.0;
    let mut win = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let d2 = (a as f64 - centre).powi(2) + (b as f64 - centre).powi(2);
            win[a * k + b] = (-d2 / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let px = |i: usize, j: usize| x.data()[i * w + j];
    let py = |i: usize, j: usize| y.data()[i * w + j];
    let mut acc = Vec::new();
    for i in 0..=h - k {
        for j in 0..=w - k {
            let wsum = |f: &dyn Fn(usize, usize) -> f64| {
                let mut s = 0.0;
                for a in 0..k {
                    for b in 0..k {
                        s += win[a * k + b] * f(i + a, j + b);
                    }
                }
                s
            };
            let mx = wsum(&|a, b| px(a, b));
            let my = wsum(&|a, b| py(a, b));
            let vx = wsum(&|a, b| (px(a, b) - mx).powi(2));
            let vy = wsum(&|a, b| (py(a, b) - my).powi(2));
            let cxy = wsum(&|a, b| (px(a, b) - mx) * (py(a, b) - my));
            let (sx, sy) = (vx.max(0.0).sqrt(), vy.max(0.0).sqrt());
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let c = (2.0 * sx * sy + c2) / (vx + vy + c2);
            let s = (cxy + c3) / (sx * sy + c3);
            acc.push(l * c * s);
        }
    }
    acc.iter().sum::<f64>() / acc.len() as f64
}

/// Principal square root by the Denman-Beavers iteration.
pub fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().expect("invertible iterate");
        let zi = z.clone().try_inverse().expect("invertible iterate");
        let ny = (&y + zi) * 0.5;
        let nz = (&z + yi) * 0.5;
        let delta = (&ny - &y).norm();
        y = ny;
        z = nz;
        if delta < 1e-15 * y.norm() {
            break;
        }
    }
    y
}

/// FID from raw feature rows with the square root taken by Denman-Beavers
/// on the (non-symmetric) covariance product.
pub fn fid_reference(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let stats = |v: &[Vec<f64>]| {
        let (n, d) = (v.len(), v[0].len());
        let mu: Vec<f64> = (0..d).map(|j| v.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let cov = DMatrix::from_fn(d, d, |p, q| {
            v.iter().map(|r| (r[p] - mu[p]) * (r[q] - mu[q])).sum::<f64>() / (n as f64 - 1.0)
        });
        (mu, cov)
    };
    let (m1, s1) = stats(a);
    let (m2, s2) = stats(b);
    let prod = &s1 * &s2;
    let root = sqrtm_denman_beavers(&prod);
    let dm: f64 = m1.iter().zip(&m2).map(|(p, q)| (p - q).powi(2)).sum();
    dm + s1.trace() + s2.trace() - 2.0 * root.trace()
}

pub fn random_image(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random::<f64>())
}
