//! Generator refinement blocks.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Ctx, Store, LEAKY_SLOPE};
use crate::tensor::Tensor;

use super::gru::{bigru, GruParams};

fn same3() -> ConvGeom {
    ConvGeom::new((3, 3), (1, 1), (1, 1))
}

fn pointwise() -> ConvGeom {
    ConvGeom::new((1, 1), (1, 1), (0, 0))
}

/// Dense residual block: two densely connected 3x3 convolutions and a 1x1
/// projection of all features back to the input width, added to the input.
#[derive(Clone, Debug)]
pub struct DenseResidualBlock {
    pub channels: usize,
    pub growth: usize,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    project: Conv2d,
}

impl DenseResidualBlock {
    pub fn new(params: &mut Store, buffers: &mut Store, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let g = channels.max(4);
        Self {
            channels,
            growth: g,
            conv1: Conv2d::new(params, &format!("{name}.conv1"), channels, g, same3(), false, rng),
            bn1: BatchNorm2d::new(params, buffers, &format!("{name}.bn1"), g),
            conv2: Conv2d::new(params, &format!("{name}.conv2"), channels + g, g, same3(), false, rng),
            bn2: BatchNorm2d::new(params, buffers, &format!("{name}.bn2"), g),
            project: Conv2d::new(params, &format!("{name}.project"), channels + 2 * g, channels, pointwise(), true, rng),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: &Var) -> Result<Var> {
        if x.shape().get(1) != Some(&self.channels) {
            return Err(Error::shape(format!("block expects {} channels, got {:?}", self.channels, x.shape())));
        }
        let a1 = self.bn1.forward(cx, &self.conv1.forward(cx, x)?)?.leaky_relu(LEAKY_SLOPE);
        let x1 = Var::concat(&[x.clone(), a1.clone()], 1)?;
        let a2 = self.bn2.forward(cx, &self.conv2.forward(cx, &x1)?)?.leaky_relu(LEAKY_SLOPE);
        let all = Var::concat(&[x.clone(), a1, a2], 1)?;
        x.add(&self.project.forward(cx, &all)?)
    }

    /// Zeroes the projection so the block starts as the identity.
    pub fn zero_projection(&self, params: &mut Store) {
        let w = params.get(self.project.weight).shape().to_vec();
        params.set(self.project.weight, Tensor::zeros(&w));
        if let Some(b) = self.project.bias {
            let s = params.get(b).shape().to_vec();
            params.set(b, Tensor::zeros(&s));
        }
    }
}

/// Bidirectional GRU over the time axis of a `[B, C, F, T]` map. Each frame
/// is the flattened `C*F` column; the `[B, T, 2H]` output is broadcast over
/// frequency, concatenated with the input and projected back residually.
#[derive(Clone, Debug)]
pub struct TemporalContext {
    pub channels: usize,
    pub freq: usize,
    pub hidden: usize,
    fwd: GruParams,
    bwd: GruParams,
    project: Conv2d,
}

impl TemporalContext {
    pub fn new(
        params: &mut Store,
        name: &str,
        channels: usize,
        freq: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let inp = channels * freq;
        Self {
            channels,
            freq,
            hidden,
            fwd: GruParams::new(params, &format!("{name}.gru_fwd"), inp, hidden, rng),
            bwd: GruParams::new(params, &format!("{name}.gru_bwd"), inp, hidden, rng),
            project: Conv2d::new(params, &format!("{name}.project"), channels + 2 * hidden, channels, pointwise(), true, rng),
        }
    }

    pub fn forward(&self, cx: &mut Ctx, x: &Var) -> Result<Var> {
        let &[b, c, f, t] = x.shape() else {
            return Err(Error::shape(format!("expected [B, C, F, T], got {:?}", x.shape())));
        };
        if c != self.channels || f != self.freq {
            return Err(Error::shape(format!(
                "temporal block built for C={}, F={}, got {:?}",
                self.channels,
                self.freq,
                x.shape()
            )));
        }
        let seq = x.permute(&[0, 3, 1, 2])?.reshape(&[b, t, c * f])?;
        let ctx = bigru(&self.fwd.bind(cx), &self.bwd.bind(cx), &seq)?;
        let h2 = 2 * self.hidden;
        let ctx = ctx.permute(&[0, 2, 1])?.reshape(&[b, h2, 1, t])?.broadcast_to(&[b, h2, f, t])?;
        let joined = Var::concat(&[x.clone(), ctx], 1)?;
        x.add(&self.project.forward(cx, &joined)?)
    }
}
