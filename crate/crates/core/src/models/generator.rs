use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, ConvTranspose2d, Ctx, Linear, Mode, Store, LEAKY_SLOPE};
use crate::tensor::Tensor;

use super::blocks::{DenseResidualBlock, TemporalContext};

pub const STAGES: usize = 4;
/// Largest spectrogram side the generator will build for.
pub const MAX_TARGET_SIDE: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub target_shape: (usize, usize),
    pub latent_dim: usize,
    /// Channel width of stage 3; other stages scale from it.
    pub width: usize,
    pub use_drb: bool,
    pub use_bigru: bool,
}

/// How the four upsampling stages reach a target `(F, T)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StridePlan {
    pub seed: (usize, usize),
    pub strides: [(usize, usize); STAGES],
    /// Size after the last stage, before cropping.
    pub full: (usize, usize),
    pub crop_offset: (usize, usize),
}

fn ceil_log2(n: usize) -> u32 {
    usize::BITS - (n - 1).leading_zeros()
}

impl StridePlan {
    pub fn for_target(target: (usize, usize)) -> Result<Self> {
        let (f, t) = target;
        if f == 0 || t == 0 || f > MAX_TARGET_SIDE || t > MAX_TARGET_SIDE {
            return Err(Error::config(format!(
                "target shape {target:?} must have sides in 1..={MAX_TARGET_SIDE}"
            )));
        }
        let axis = |n: usize| {
            let doublings = ceil_log2(n).min(STAGES as u32) as usize;
            (n.div_ceil(1 << doublings), doublings)
        };
        let (sf, df) = axis(f);
        let (st, dt) = axis(t);
        let mut strides = [(1, 1); STAGES];
        for (i, s) in strides.iter_mut().enumerate() {
            *s = (if i < df { 2 } else { 1 }, if i < dt { 2 } else { 1 });
        }
        let full = (sf << df, st << dt);
        Ok(Self {
            seed: (sf, st),
            strides,
            full,
            crop_offset: ((full.0 - f) / 2, (full.1 - t) / 2),
        })
    }

    /// Spatial size after each stage.
    pub fn stage_sizes(&self) -> [(usize, usize); STAGES] {
        let mut hw = self.seed;
        let mut out = [(0, 0); STAGES];
        for (o, s) in out.iter_mut().zip(&self.strides) {
            hw = (hw.0 * s.0, hw.1 * s.1);
            *o = hw;
        }
        out
    }
}

fn stage_geom(stride: (usize, usize)) -> ConvGeom {
    let k = |s: usize| if s == 2 { 4 } else { 3 };
    ConvGeom::new((k(stride.0), k(stride.1)), stride, (1, 1))
}

#[derive(Clone, Debug)]
struct UpStage {
    up: ConvTranspose2d,
    bn: Option<BatchNorm2d>,
    drb: Option<DenseResidualBlock>,
    context: Option<TemporalContext>,
    out_hw: (usize, usize),
}

#[derive(Clone, Debug)]
struct Arch {
    cfg: GeneratorConfig,
    plan: StridePlan,
    seed_channels: usize,
    project: Linear,
    project_bn: BatchNorm2d,
    stages: Vec<UpStage>,
}

/// Latent vector to single-channel spectrogram in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct Generator {
    arch: Arch,
    pub params: Store,
    pub buffers: Store,
}

impl Generator {
    pub fn new(cfg: &GeneratorConfig, seed: u64) -> Result<Self> {
        if cfg.width == 0 || cfg.latent_dim == 0 {
            return Err(Error::config("generator width and latent size must be positive"));
        }
        let plan = StridePlan::for_target(cfg.target_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut params, mut buffers) = (Store::default(), Store::default());
        let w = cfg.width;
        let channels = [8 * w, 4 * w, 2 * w, w, 1];
        let seed_channels = channels[0];
        let project = Linear::new(
            &mut params,
            "project",
            cfg.latent_dim,
            seed_channels * plan.seed.0 * plan.seed.1,
            &mut rng,
        );
        let project_bn = BatchNorm2d::new(&mut params, &mut buffers, "project.bn", seed_channels);
        let sizes = plan.stage_sizes();
        let mut stages = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let name = format!("stage{}", i + 1);
            let (cin, cout) = (channels[i], channels[i + 1]);
            let up = ConvTranspose2d::new(&mut params, &format!("{name}.up"), cin, cout, stage_geom(plan.strides[i]), &mut rng);
            let last = i + 1 == STAGES;
            let bn = (!last).then(|| BatchNorm2d::new(&mut params, &mut buffers, &format!("{name}.bn"), cout));
            let drb = cfg
                .use_drb
                .then(|| DenseResidualBlock::new(&mut params, &mut buffers, &format!("{name}.drb"), cout, &mut rng));
            let context = (cfg.use_bigru && (i == 1 || i == 3))
                .then(|| TemporalContext::new(&mut params, &format!("{name}.bigru"), cout, sizes[i].0, cout * sizes[i].0, &mut rng));
            stages.push(UpStage { up, bn, drb, context, out_hw: sizes[i] });
        }
        Ok(Self {
            arch: Arch { cfg: cfg.clone(), plan, seed_channels, project, project_bn, stages },
            params,
            buffers,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.arch.cfg
    }

    pub fn plan(&self) -> &StridePlan {
        &self.arch.plan
    }

    pub fn target_shape(&self) -> (usize, usize) {
        self.arch.cfg.target_shape
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.cfg.latent_dim
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// `z` is `[B, latent]`; output is `[B, 1, F, T]`.
    pub fn forward(&mut self, params: &[Var], z: &Var, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var> {
        let mut cx = Ctx { params, buffers: &mut self.buffers, mode, rng };
        self.arch.forward(&mut cx, z)
    }

    /// Generates `n` spectrograms with the current weights in inference mode.
    pub fn sample(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let z = Var::constant(sample_latent(n, self.latent_dim(), rng));
        let params = self.params.constants();
        Ok(self.forward(&params, &z, Mode::Eval, rng)?.value().clone())
    }
}

/// Standard-normal latent batch `[n, dim]`.
pub fn sample_latent(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn(&[n, dim], |_| StandardNormal.sample(rng))
}

impl Arch {
    fn forward(&self, cx: &mut Ctx, z: &Var) -> Result<Var> {
        let &[b, d] = z.shape() else {
            return Err(Error::shape(format!("latent batch must be [B, D], got {:?}", z.shape())));
        };
        if d != self.cfg.latent_dim {
            return Err(Error::shape(format!("latent size {d}, generator expects {}", self.cfg.latent_dim)));
        }
        let (sf, st) = self.plan.seed;
        let h = self.project.forward(cx, z)?.reshape(&[b, self.seed_channels, sf, st])?;
        let mut h = self.project_bn.forward(cx, &h)?.leaky_relu(LEAKY_SLOPE);
        for s in &self.stages {
            h = s.up.forward(cx, &h, s.out_hw)?;
            if let Some(bn) = &s.bn {
                h = bn.forward(cx, &h)?.leaky_relu(LEAKY_SLOPE);
            }
            if let Some(drb) = &s.drb {
                h = drb.forward(cx, &h)?;
            }
            if let Some(ctx) = &s.context {
                h = ctx.forward(cx, &h)?;
            }
        }
        let (f, t) = self.cfg.target_shape;
        let (of, ot) = self.plan.crop_offset;
        Ok(h.narrow(2, of, f)?.narrow(3, ot, t)?.tanh())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_plans_for_published_shapes() {
        let p = StridePlan::for_target((65, 15)).unwrap();
        assert_eq!(p.seed, (5, 1));
        assert_eq!(p.full, (80, 16));
        assert_eq!(p.crop_offset, (7, 0));
        let p = StridePlan::for_target((129, 7)).unwrap();
        assert_eq!(p.seed, (9, 1));
        assert_eq!(p.strides, [(2, 2), (2, 2), (2, 2), (2, 1)]);
        assert_eq!(p.full, (144, 8));
        assert!(StridePlan::for_target((0, 7)).is_err());
        assert!(StridePlan::for_target((1, 1)).unwrap().full == (1, 1));
    }

    #[test]
    fn output_shape_and_range() {
        for (drb, gru) in [(false, false), (true, true)] {
            let cfg = GeneratorConfig { target_shape: (65, 15), latent_dim: 100, width: 2, use_drb: drb, use_bigru: gru };
            let mut g = Generator::new(&cfg, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let x = g.sample(3, &mut rng).unwrap();
            assert_eq!(x.shape(), &[3, 1, 65, 15]);
            assert!(x.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
