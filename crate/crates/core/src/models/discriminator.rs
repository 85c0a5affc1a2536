use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::nn::{dropout, Conv2d, Ctx, Mode, SpectralNorm, Store, LEAKY_SLOPE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub input_shape: (usize, usize),
    /// Channels after the first (multi-scale) stage; later stages double.
    pub width: usize,
    pub dropout: f64,
    pub spectral_norm: bool,
    /// Squash the score to a probability.
    pub sigmoid_output: bool,
}

#[derive(Clone, Debug)]
struct Arch {
    cfg: DiscriminatorConfig,
    convs: Vec<Conv2d>,
    norms: Vec<Option<SpectralNorm>>,
}

/// Spectrogram critic: a multi-scale first stage (parallel 3x3 and 5x5
/// branches), three strided 5x5 stages, and a final convolution spanning
/// whatever extent is left.
#[derive(Clone, Debug)]
pub struct Discriminator {
    arch: Arch,
    pub params: Store,
    pub buffers: Store,
}

/// Effective convolution weights for one optimisation step.
#[derive(Clone)]
pub struct CriticWeights {
    params: Vec<Var>,
    conv: Vec<Var>,
}

impl CriticWeights {
    pub fn params(&self) -> &[Var] {
        &self.params
    }
}

const BRANCH_SMALL: usize = 0;
const BRANCH_LARGE: usize = 1;
const FINAL: usize = 5;

impl Discriminator {
    pub fn new(cfg: &DiscriminatorConfig, seed: u64) -> Result<Self> {
        let (h, w) = cfg.input_shape;
        if h == 0 || w == 0 {
            return Err(Error::config(format!("critic input shape {:?} is empty", cfg.input_shape)));
        }
        if cfg.width < 2 {
            return Err(Error::config("critic width must be at least 2"));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut params, mut buffers) = (Store::default(), Store::default());
        let c = cfg.width;
        let small = c / 2;
        let mut convs = vec![
            Conv2d::new(&mut params, "stage1.k3", 1, small, ConvGeom::new((3, 3), (2, 2), (1, 1)), true, &mut rng),
            Conv2d::new(&mut params, "stage1.k5", 1, c - small, ConvGeom::new((5, 5), (2, 2), (2, 2)), true, &mut rng),
        ];
        let mut hw = convs[0].geom.output_hw(h, w)?;
        let mut ch = c;
        for s in 2..=4 {
            let g = ConvGeom::new((5, 5), (2, 2), (2, 2));
            convs.push(Conv2d::new(&mut params, &format!("stage{s}.conv"), ch, 2 * ch, g, true, &mut rng));
            hw = g.output_hw(hw.0, hw.1)?;
            ch *= 2;
        }
        convs.push(Conv2d::new(&mut params, "stage5.conv", ch, 1, ConvGeom::new(hw, (1, 1), (0, 0)), true, &mut rng));
        let norms = convs
            .iter()
            .map(|cv| {
                cfg.spectral_norm
                    .then(|| SpectralNorm::new(&mut buffers, params.name(cv.weight), params.get(cv.weight), &mut rng))
            })
            .collect();
        Ok(Self { arch: Arch { cfg: cfg.clone(), convs, norms }, params, buffers })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.arch.cfg
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Normalizes the convolution weights, refreshing the power-iteration
    /// vectors when training. Call once per step and reuse the result for
    /// every critic evaluation in that step.
    pub fn weights(&mut self, params: &[Var], mode: Mode, rng: &mut ChaCha8Rng) -> Result<CriticWeights> {
        let mut cx = Ctx { params, buffers: &mut self.buffers, mode, rng };
        let mut conv = Vec::with_capacity(self.arch.convs.len());
        for (cv, sn) in self.arch.convs.iter().zip(&self.arch.norms) {
            let w = cx.p(cv.weight).clone();
            conv.push(match sn {
                Some(sn) => sn.apply(&mut cx, &w)?,
                None => w,
            });
        }
        Ok(CriticWeights { params: params.to_vec(), conv })
    }

    /// Scores a `[B, 1, F, T]` batch, returning `[B]`.
    pub fn score(&mut self, w: &CriticWeights, x: &Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var> {
        let &[b, 1, f, t] = x.shape() else {
            return Err(Error::shape(format!("critic expects [B, 1, F, T], got {:?}", x.shape())));
        };
        if (f, t) != self.arch.cfg.input_shape {
            return Err(Error::shape(format!(
                "critic built for {:?}, got spectrogram {:?}",
                self.arch.cfg.input_shape,
                (f, t)
            )));
        }
        let mut cx = Ctx { params: &w.params, buffers: &mut self.buffers, mode, rng };
        let convs = &self.arch.convs;
        let p = self.arch.cfg.dropout;
        let a = convs[BRANCH_SMALL].forward_with(&cx, x, &w.conv[BRANCH_SMALL])?;
        let bb = convs[BRANCH_LARGE].forward_with(&cx, x, &w.conv[BRANCH_LARGE])?;
        let mut h = Var::concat(&[a, bb], 1)?.leaky_relu(LEAKY_SLOPE);
        h = dropout(&mut cx, &h, p)?;
        for i in 2..FINAL {
            h = convs[i].forward_with(&cx, &h, &w.conv[i])?.leaky_relu(LEAKY_SLOPE);
            h = dropout(&mut cx, &h, p)?;
        }
        let out = convs[FINAL].forward_with(&cx, &h, &w.conv[FINAL])?.reshape(&[b])?;
        Ok(if self.arch.cfg.sigmoid_output { out.sigmoid() } else { out })
    }

    pub fn forward(&mut self, params: &[Var], x: &Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var> {
        let w = self.weights(params, mode, rng)?;
        self.score(&w, x, mode, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::top_singular_value;
    use crate::tensor::Tensor;

    fn cfg(shape: (usize, usize)) -> DiscriminatorConfig {
        DiscriminatorConfig { input_shape: shape, width: 4, dropout: 0.2, spectral_norm: true, sigmoid_output: false }
    }

    #[test]
    fn scores_one_value_per_sample() {
        for shape in [(65, 15), (129, 7), (257, 3), (513, 1)] {
            let mut d = Discriminator::new(&cfg(shape), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let x = Var::constant(Tensor::from_fn(&[3, 1, shape.0, shape.1], |i| ((i % 17) as f64 / 8.0) - 1.0));
            let p = d.params.constants();
            let s = d.forward(&p, &x, Mode::Train, &mut rng).unwrap();
            assert_eq!(s.shape(), &[3]);
        }
    }

    #[test]
    fn normalized_weights_have_unit_spectral_norm() {
        let mut d = Discriminator::new(&cfg((65, 15)), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = d.params.constants();
        let w = d.weights(&p, Mode::Train, &mut rng).unwrap();
        for cw in &w.conv {
            let s = top_singular_value(cw.value(), 300);
            assert!((s - 1.0).abs() < 0.05, "sigma {s}");
        }
    }
}
