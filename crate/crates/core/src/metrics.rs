//! Image-quality metrics for spectrograms: SSIM, PSNR and FID.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::conv::conv2d;
use crate::autograd::ConvGeom;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_MAX_WINDOW: usize = 7;
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_pair(x: &Tensor, y: &Tensor) -> Result<(usize, usize)> {
    match (x.shape(), y.shape()) {
        (&[h, w], s) if s == [h, w] && h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::input(format!("images must share a non-empty 2-D shape, got {:?} and {:?}", x.shape(), y.shape()))),
    }
}

fn gaussian_1d(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained Gaussian windows. Inputs are images
/// in `[0, 1]`; the window side is `min(7, min(h, w))`.
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let (h, w) = check_pair(x, y)?;
    let k = SSIM_MAX_WINDOW.min(h).min(w);
    let g = gaussian_1d(k, SSIM_SIGMA);
    let (xd, yd) = (x.data(), y.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    let wt = g[a] * g[b];
                    let (p, q) = (xd[(i + a) * w + j + b], yd[(i + a) * w + j + b]);
                    mx += wt * p;
                    my += wt * q;
                    sxx += wt * p * p;
                    syy += wt * q * q;
                    sxy += wt * p * q;
                }
            }
            let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: f64,
    /// The error was zero (or tiny) and `db` is the cap.
    pub capped: bool,
}

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at `cap` dB.
pub fn psnr_with_cap(r: &Tensor, g: &Tensor, cap: f64) -> Result<Psnr> {
    check_pair(r, g)?;
    let mse = r.data().iter().zip(g.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / r.len() as f64;
    let db = if mse > 0.0 { 10.0 * (1.0 / mse).log10() } else { f64::INFINITY };
    Ok(if db >= cap { Psnr { db: cap, capped: true } } else { Psnr { db, capped: false } })
}

pub fn psnr(r: &Tensor, g: &Tensor) -> Result<Psnr> {
    psnr_with_cap(r, g, PSNR_CAP_DB)
}

/// Mean vector and unbiased covariance of row vectors.
pub fn feature_stats(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if features.len() < 2 {
        return Err(Error::input(format!("FID needs at least 2 vectors per set, got {}", features.len())));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|f| f.len() != d) {
        return Err(Error::input("feature vectors must share a non-zero dimension"));
    }
    let n = features.len();
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mu = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mu, cov))
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let tol = 1e-8 * e.eigenvalues.amax().max(1.0);
    let mut vals = e.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -tol {
            return Err(Error::numerical(format!("matrix square root of an indefinite matrix (eigenvalue {v})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&vals) * e.eigenvectors.transpose())
}

/// Frechet distance between two Gaussians. The trace of `(S1 S2)^(1/2)` is
/// taken from the eigenvalues of the symmetric `S1^(1/2) S2 S1^(1/2)`.
pub fn fid_from_stats(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(Error::input("Gaussian statistics have mismatched dimensions"));
    }
    let a = sym_sqrt(s1)?;
    let m = &a * s2 * &a;
    let e = SymmetricEigen::new((&m + m.transpose()) * 0.5);
    let tol = 1e-8 * e.eigenvalues.amax().max(1.0);
    let mut tr_sqrt = 0.0;
    for &v in e.eigenvalues.iter() {
        if v < -tol {
            return Err(Error::numerical(format!("covariance product has eigenvalue {v}")));
        }
        tr_sqrt += v.max(0.0).sqrt();
    }
    let diff = mu1 - mu2;
    Ok(diff.dot(&diff) + s1.trace() + s2.trace() - 2.0 * tr_sqrt)
}

pub fn fid(real: &[Vec<f64>], generated: &[Vec<f64>]) -> Result<f64> {
    let (mu1, s1) = feature_stats(real)?;
    let (mu2, s2) = feature_stats(generated)?;
    if mu1.len() != mu2.len() {
        return Err(Error::input(format!("feature dimensions differ: {} vs {}", mu1.len(), mu2.len())));
    }
    fid_from_stats(&mu1, &s1, &mu2, &s2)
}

/// Maps spectrograms to fixed-length feature vectors.
pub trait FeatureExtractor {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// One vector per `[F, T]` input.
    fn extract(&self, images: &[Tensor]) -> Result<Vec<Vec<f64>>>;
}

pub const DEFAULT_EXTRACTOR: &str = "randconv64";
pub const RESIZED_EXTRACTOR: &str = "randconv64-rgb64";
pub const EXTRACTOR_SEED: u64 = 0x00f1_d5ee;

/// Two fixed random tanh convolutions (1 to 16 channels, then 16 to 32 with
/// stride 2); features are per-channel means and standard deviations of
/// the second layer.
#[derive(Clone, Debug)]
pub struct RandomConvEmbedder {
    id: String,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    adapter: Option<ImageAdapter>,
}

/// Replicates a single-channel image across channels and resizes it
/// bilinearly, as image backbones expect.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageAdapter {
    pub channels: usize,
    pub size: (usize, usize),
}

impl ImageAdapter {
    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        let &[h, w] = img.shape() else {
            return Err(Error::shape(format!("adapter expects [F, T], got {:?}", img.shape())));
        };
        let (oh, ow) = self.size;
        let src = |i: usize, n: usize, m: usize| -> (usize, usize, f64) {
            if m == 1 || n == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let lo = pos.floor() as usize;
            (lo, (lo + 1).min(n - 1), pos - lo as f64)
        };
        let d = img.data();
        let mut plane = vec![0.0; oh * ow];
        for i in 0..oh {
            let (r0, r1, fr) = src(i, h, oh);
            for j in 0..ow {
                let (c0, c1, fc) = src(j, w, ow);
                let top = d[r0 * w + c0] * (1.0 - fc) + d[r0 * w + c1] * fc;
                let bot = d[r1 * w + c0] * (1.0 - fc) + d[r1 * w + c1] * fc;
                plane[i * ow + j] = top * (1.0 - fr) + bot * fr;
            }
        }
        let data: Vec<f64> = (0..self.channels).flat_map(|_| plane.iter().copied()).collect();
        Tensor::new(vec![self.channels, oh, ow], data)
    }
}

impl RandomConvEmbedder {
    pub fn new(id: impl Into<String>, seed: u64, adapter: Option<ImageAdapter>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cin = adapter.map_or(1, |a| a.channels);
        let mut normal = |shape: &[usize], fan_in: usize| {
            let n = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            Tensor::from_fn(shape, |_| n.sample(&mut rng))
        };
        let w1 = normal(&[16, cin, 3, 3], cin * 9);
        let b1 = normal(&[16], 9);
        let w2 = normal(&[32, 16, 3, 3], 16 * 9);
        let b2 = normal(&[32], 16 * 9);
        Self { id: id.into(), w1, b1, w2, b2, adapter }
    }

    fn layer(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
        let y = conv2d(x, w, &ConvGeom::new((3, 3), (stride, stride), (1, 1)))?;
        let c = b.len();
        let bias = b.reshape(&[1, c, 1, 1])?;
        Ok(y.zip_with(&bias, |v, bb| (v + bb).tanh())?)
    }
}

impl FeatureExtractor for RandomConvEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        64
    }

    fn extract(&self, images: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let prepared: Vec<Tensor> = images
            .iter()
            .map(|img| match &self.adapter {
                Some(a) => a.apply(img),
                None => match img.shape() {
                    &[h, w] => img.reshape(&[1, h, w]),
                    s => Err(Error::shape(format!("extractor expects [F, T], got {s:?}"))),
                },
            })
            .collect::<Result<_>>()?;
        let shape = prepared[0].shape().to_vec();
        if prepared.iter().any(|p| p.shape() != shape.as_slice()) {
            return Err(Error::shape("extractor inputs must share one shape"));
        }
        let refs: Vec<&Tensor> = prepared.iter().collect();
        let x = Tensor::stack(&refs)?;
        let h1 = Self::layer(&x, &self.w1, &self.b1, 1)?;
        let h2 = Self::layer(&h1, &self.w2, &self.b2, 2)?;
        let (n, c) = (h2.shape()[0], h2.shape()[1]);
        let plane = h2.len() / (n * c);
        let d = h2.data();
        Ok((0..n)
            .map(|i| {
                let mut f = Vec::with_capacity(2 * c);
                let mut stds = Vec::with_capacity(c);
                for ch in 0..c {
                    let s = &d[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                    let m = s.iter().sum::<f64>() / plane as f64;
                    let v = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / plane as f64;
                    f.push(m);
                    stds.push(v.sqrt());
                }
                f.extend(stds);
                f
            })
            .collect())
    }
}

/// Looks up a registered extractor.
pub fn extractor_by_id(id: &str) -> Result<Box<dyn FeatureExtractor>> {
    match id {
        DEFAULT_EXTRACTOR => Ok(Box::new(RandomConvEmbedder::new(id, EXTRACTOR_SEED, None))),
        RESIZED_EXTRACTOR => Ok(Box::new(RandomConvEmbedder::new(
            id,
            EXTRACTOR_SEED,
            Some(ImageAdapter { channels: 3, size: (64, 64) }),
        ))),
        other => Err(Error::config(format!(
            "unknown feature extractor '{other}' (known: {DEFAULT_EXTRACTOR}, {RESIZED_EXTRACTOR})"
        ))),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingPolicy {
    /// Mean over every generated x real pair.
    #[default]
    AllPairs,
    /// Each generated sample against its best-scoring real sample.
    BestMatch,
}

impl PairingPolicy {
    pub fn name(self) -> &'static str {
        match self {
            PairingPolicy::AllPairs => "all_pairs",
            PairingPolicy::BestMatch => "best_match",
        }
    }
}

impl fmt::Display for PairingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PairingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "all_pairs" => Ok(PairingPolicy::AllPairs),
            "best_match" => Ok(PairingPolicy::BestMatch),
            _ => Err(Error::config(format!("unknown pairing policy '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Clamped to `[0, 1]`.
    pub ssim: f64,
    pub psnr: f64,
    pub psnr_capped: bool,
    pub fid: f64,
    pub n_real: usize,
    pub n_generated: usize,
    pub extractor_id: String,
    pub pairing_policy: PairingPolicy,
}

/// Maps unit-scale spectrogram values `[-1, 1]` to image range `[0, 1]`.
pub fn to_image(unit: &Tensor) -> Tensor {
    unit.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// SSIM and PSNR under `policy` plus FID over both full sets. Inputs are
/// `[F, T]` spectrograms on the unit scale.
pub fn evaluate(
    generated: &[Tensor],
    real: &[Tensor],
    policy: PairingPolicy,
    extractor: &dyn FeatureExtractor,
) -> Result<MetricReport> {
    if generated.is_empty() || real.is_empty() {
        return Err(Error::input("evaluation needs non-empty generated and real sets"));
    }
    let shape = real[0].shape();
    if shape.len() != 2 || generated.iter().chain(real).any(|t| t.shape() != shape) {
        return Err(Error::input("generated and real spectrograms must share one 2-D shape"));
    }
    let gi: Vec<Tensor> = generated.iter().map(to_image).collect();
    let ri: Vec<Tensor> = real.iter().map(to_image).collect();
    let (mut ssim_sum, mut psnr_sum, mut capped, mut count) = (0.0, 0.0, false, 0usize);
    for g in &gi {
        let mut best_s = f64::NEG_INFINITY;
        let mut best_p = Psnr { db: f64::NEG_INFINITY, capped: false };
        for r in &ri {
            let s = ssim(g, r)?;
            let p = psnr(r, g)?;
            match policy {
                PairingPolicy::AllPairs => {
                    ssim_sum += s;
                    psnr_sum += p.db;
                    capped |= p.capped;
                    count += 1;
                }
                PairingPolicy::BestMatch => {
                    best_s = best_s.max(s);
                    if p.db > best_p.db {
                        best_p = p;
                    }
                }
            }
        }
        if policy == PairingPolicy::BestMatch {
            ssim_sum += best_s;
            psnr_sum += best_p.db;
            capped |= best_p.capped;
            count += 1;
        }
    }
    let fid = fid(&extractor.extract(real)?, &extractor.extract(generated)?)?;
    Ok(MetricReport {
        ssim: (ssim_sum / count as f64).clamp(0.0, 1.0),
        psnr: psnr_sum / count as f64,
        psnr_capped: capped,
        fid,
        n_real: real.len(),
        n_generated: generated.len(),
        extractor_id: extractor.id().to_string(),
        pairing_policy: policy,
    })
}
