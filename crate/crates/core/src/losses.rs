//! Adversarial objectives. Critic losses are minimised by the
//! discriminator, generator losses by the generator.

use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Var};
use crate::error::{Error, Result};
use crate::models::LossFamily;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub lambda: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { lambda: 12.0 }
    }
}

fn clamped_ln(p: &Var) -> Var {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS).ln()
}

fn check_scores(real: &Var, fake: &Var) -> Result<()> {
    if real.shape().len() != 1 || fake.shape().len() != 1 || real.shape()[0] == 0 || fake.shape()[0] == 0 {
        return Err(Error::shape(format!(
            "scores must be non-empty vectors, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    Ok(())
}

pub fn bce_critic(real: &Var, fake: &Var) -> Result<Var> {
    check_scores(real, fake)?;
    let one_minus_fake = fake.neg().add_scalar(1.0);
    Ok(clamped_ln(real).mean_all().add(&clamped_ln(&one_minus_fake).mean_all())?.neg())
}

/// Non-saturating form `-log D(G(z))`.
pub fn bce_generator(fake: &Var) -> Result<Var> {
    check_scores(fake, fake)?;
    Ok(clamped_ln(fake).mean_all().neg())
}

pub fn lsgan_critic(real: &Var, fake: &Var) -> Result<Var> {
    check_scores(real, fake)?;
    let r = real.add_scalar(-1.0).square()?.mean_all();
    let f = fake.square()?.mean_all();
    Ok(r.add(&f)?.scale(0.5))
}

pub fn lsgan_generator(fake: &Var) -> Result<Var> {
    check_scores(fake, fake)?;
    Ok(fake.add_scalar(-1.0).square()?.mean_all().scale(0.5))
}

pub fn wasserstein_critic(real: &Var, fake: &Var) -> Result<Var> {
    check_scores(real, fake)?;
    fake.mean_all().sub(&real.mean_all())
}

pub fn wasserstein_generator(fake: &Var) -> Result<Var> {
    check_scores(fake, fake)?;
    Ok(fake.mean_all().neg())
}

/// Critic loss for a family, without any gradient penalty.
pub fn critic_loss(family: LossFamily, real: &Var, fake: &Var) -> Result<Var> {
    match family {
        LossFamily::Bce => bce_critic(real, fake),
        LossFamily::LeastSquares => lsgan_critic(real, fake),
        LossFamily::WassersteinGp => wasserstein_critic(real, fake),
    }
}

pub fn generator_loss(family: LossFamily, fake: &Var) -> Result<Var> {
    match family {
        LossFamily::Bce => bce_generator(fake),
        LossFamily::LeastSquares => lsgan_generator(fake),
        LossFamily::WassersteinGp => wasserstein_generator(fake),
    }
}

/// Penalty value plus the mean gradient norm it was computed from.
pub struct Penalty {
    pub loss: Var,
    pub mean_grad_norm: f64,
}

/// `lambda * mean((||grad_x critic(x_hat)|| - 1)^2)` on per-sample
/// interpolates `x_hat = eps*real + (1-eps)*fake`. The returned loss stays
/// differentiable with respect to the critic's parameters.
pub fn gradient_penalty(
    mut critic: impl FnMut(&Var) -> Result<Var>,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
    cfg: GpConfig,
) -> Result<Penalty> {
    if real.shape() != fake.shape() || real.ndim() < 2 {
        return Err(Error::shape(format!(
            "penalty needs matching batched inputs, got {:?} and {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let b = real.shape()[0];
    if eps.len() != b {
        return Err(Error::shape(format!("{} mixing weights for a batch of {b}", eps.len())));
    }
    let per = real.len() / b;
    let mixed: Vec<f64> = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let e = eps[i / per];
            e * r + (1.0 - e) * f
        })
        .collect();
    let x_hat = Var::leaf(Tensor::new(real.shape().to_vec(), mixed)?);
    let scores = critic(&x_hat)?;
    if !scores.requires_grad() {
        return Err(Error::config("critic output has no differentiable path to its input"));
    }
    let g = grad(&scores.sum_all(), &[&x_hat], true)?.remove(0);
    let axes: Vec<usize> = (1..real.ndim()).collect();
    let norms = g.square()?.sum_axes(&axes)?.sqrt();
    let mean_grad_norm = norms.value().mean();
    let loss = norms.add_scalar(-1.0).square()?.mean_all().scale(cfg.lambda);
    Ok(Penalty { loss, mean_grad_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_values;

    fn v(xs: &[f64]) -> Var {
        Var::constant(Tensor::from_vec(xs.to_vec()))
    }

    #[test]
    fn bce_matches_closed_form() {
        let (r, f) = ([0.9, 0.6], [0.2, 0.3]);
        let want = -((0.9f64.ln() + 0.6f64.ln()) / 2.0 + (0.8f64.ln() + 0.7f64.ln()) / 2.0);
        assert!((bce_critic(&v(&r), &v(&f)).unwrap().value().item() - want).abs() < 1e-12);
        let g = bce_generator(&v(&[0.0, 1.0])).unwrap().value().item();
        assert!(g.is_finite());
        assert!((g - (-(BCE_EPS.ln() + (1.0 - BCE_EPS).ln()) / 2.0)).abs() < 1e-9);
    }

    #[test]
    fn least_squares_targets() {
        assert_eq!(lsgan_critic(&v(&[1.0, 1.0]), &v(&[0.0, 0.0])).unwrap().value().item(), 0.0);
        assert!((lsgan_generator(&v(&[0.0, 2.0])).unwrap().value().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_pays_full_lambda() {
        let real = Tensor::ones(&[3, 1, 4, 2]);
        let fake = Tensor::zeros(&[3, 1, 4, 2]);
        let c = Var::leaf(Tensor::scalar(0.7));
        let p = gradient_penalty(
            |x| Var::constant(Tensor::zeros(&[x.shape()[0]])).add(&c),
            &real,
            &fake,
            &[0.1, 0.5, 0.9],
            GpConfig::default(),
        )
        .unwrap();
        assert_eq!(p.loss.value().item(), 12.0);
        assert_eq!(p.mean_grad_norm, 0.0);
    }

    #[test]
    fn linear_critic_penalty_and_its_weight_gradient() {
        let (b, n) = (2, 3);
        let real = Tensor::from_fn(&[b, n], |i| i as f64);
        let fake = Tensor::from_fn(&[b, n], |i| -(i as f64));
        let lambda = 2.0;
        let run = |w: &Tensor| {
            let wv = Var::leaf(w.clone());
            let p = gradient_penalty(
                |x| x.matmul(&wv.reshape(&[n, 1])?)?.reshape(&[b]),
                &real,
                &fake,
                &[0.3, 0.6],
                GpConfig { lambda },
            )
            .unwrap();
            let gw = grad_values(&p.loss, &[&wv]).unwrap().remove(0);
            (p.loss.value().item(), gw)
        };
        let w = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
        let (loss, gw) = run(&w);
        let norm = w.norm();
        assert!((loss - lambda * (norm - 1.0).powi(2)).abs() < 1e-12);
        for i in 0..n {
            let mut wp = w.clone();
            wp.data_mut()[i] += 1e-6;
            let mut wm = w.clone();
            wm.data_mut()[i] -= 1e-6;
            let fd = (run(&wp).0 - run(&wm).0) / 2e-6;
            assert!((fd - gw.data()[i]).abs() < 1e-6, "{fd} vs {}", gw.data()[i]);
        }
    }
}
