//! Generator and discriminator architectures for every compared variant.

mod blocks;
mod discriminator;
mod generator;
pub mod gru;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::mix_seed;

pub use blocks::{DenseResidualBlock, TemporalContext};
pub use discriminator::{CriticWeights, Discriminator, DiscriminatorConfig};
pub use generator::{sample_latent, Generator, GeneratorConfig, StridePlan, MAX_TARGET_SIDE, STAGES};

pub const LATENT_DIM: usize = 100;
pub const DROPOUT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dcgan,
    Lsgan,
    WganGp,
    Stftsynth,
    StftsynthNoDrb,
    StftsynthNoBigru,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    Bce,
    LeastSquares,
    WassersteinGp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Dcgan,
        Variant::Lsgan,
        Variant::WganGp,
        Variant::Stftsynth,
        Variant::StftsynthNoDrb,
        Variant::StftsynthNoBigru,
    ];

    /// The four models of the main comparison.
    pub const BENCHMARK: [Variant; 4] = [Variant::Dcgan, Variant::Lsgan, Variant::WganGp, Variant::Stftsynth];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dcgan => "dcgan",
            Variant::Lsgan => "lsgan",
            Variant::WganGp => "wgan_gp",
            Variant::Stftsynth => "stftsynth",
            Variant::StftsynthNoDrb => "stftsynth_no_drb",
            Variant::StftsynthNoBigru => "stftsynth_no_bigru",
        }
    }

    pub fn loss_family(self) -> LossFamily {
        match self {
            Variant::Dcgan => LossFamily::Bce,
            Variant::Lsgan => LossFamily::LeastSquares,
            _ => LossFamily::WassersteinGp,
        }
    }

    pub fn uses_drb(self) -> bool {
        matches!(self, Variant::Stftsynth | Variant::StftsynthNoBigru)
    }

    pub fn uses_bigru(self) -> bool {
        matches!(self, Variant::Stftsynth | Variant::StftsynthNoDrb)
    }

    /// The WGAN-GP family member with the given refinement blocks.
    pub fn from_blocks(drb: bool, bigru: bool) -> Variant {
        match (drb, bigru) {
            (true, true) => Variant::Stftsynth,
            (false, true) => Variant::StftsynthNoDrb,
            (true, false) => Variant::StftsynthNoBigru,
            (false, false) => Variant::WganGp,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown variant '{s}'")))
    }
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Bce => "bce",
            LossFamily::LeastSquares => "least_squares",
            LossFamily::WassersteinGp => "wasserstein_gp",
        }
    }

    /// Critic updates per generator update.
    pub fn default_n_critic(self) -> usize {
        match self {
            LossFamily::WassersteinGp => 5,
            _ => 1,
        }
    }
}

/// Everything needed to build one generator/discriminator pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanSpec {
    pub variant: Variant,
    pub target_shape: (usize, usize),
    pub latent_dim: usize,
    pub g_width: usize,
    pub d_width: usize,
    pub dropout: f64,
    pub use_drb: bool,
    pub use_bigru: bool,
    pub spectral_norm: bool,
}

impl GanSpec {
    pub const DEFAULT_G_WIDTH: usize = 16;
    pub const DEFAULT_D_WIDTH: usize = 16;

    pub fn new(variant: Variant, target_shape: (usize, usize)) -> Self {
        Self {
            variant,
            target_shape,
            latent_dim: LATENT_DIM,
            g_width: Self::DEFAULT_G_WIDTH,
            d_width: Self::DEFAULT_D_WIDTH,
            dropout: DROPOUT,
            use_drb: variant.uses_drb(),
            use_bigru: variant.uses_bigru(),
            spectral_norm: true,
        }
    }

    pub fn with_widths(mut self, g: usize, d: usize) -> Self {
        self.g_width = g;
        self.d_width = d;
        self
    }

    pub fn loss_family(&self) -> LossFamily {
        self.variant.loss_family()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.use_drb, self.use_bigru) != (self.variant.uses_drb(), self.variant.uses_bigru()) {
            return Err(Error::config(format!(
                "variant {} requires drb={} bigru={}",
                self.variant,
                self.variant.uses_drb(),
                self.variant.uses_bigru()
            )));
        }
        if self.latent_dim == 0 || self.g_width == 0 || self.d_width < 2 {
            return Err(Error::config("latent size and widths must be positive (critic width >= 2)"));
        }
        StridePlan::for_target(self.target_shape)?;
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            target_shape: self.target_shape,
            latent_dim: self.latent_dim,
            width: self.g_width,
            use_drb: self.use_drb,
            use_bigru: self.use_bigru,
        }
    }

    pub fn discriminator_config(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            input_shape: self.target_shape,
            width: self.d_width,
            dropout: self.dropout,
            spectral_norm: self.spectral_norm,
            sigmoid_output: self.loss_family() == LossFamily::Bce,
        }
    }

    pub fn build(&self, seed: u64) -> Result<(Generator, Discriminator)> {
        self.validate()?;
        let g = Generator::new(&self.generator_config(), mix_seed(seed, 0x6e))?;
        let d = Discriminator::new(&self.discriminator_config(), mix_seed(seed, 0xd1))?;
        Ok((g, d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_blocks(v.uses_drb(), v.uses_bigru()).loss_family(), LossFamily::WassersteinGp);
        }
        assert!("wgan".parse::<Variant>().is_err());
    }

    #[test]
    fn inconsistent_block_flags_are_rejected() {
        let mut s = GanSpec::new(Variant::Stftsynth, (65, 15));
        s.use_drb = false;
        assert!(s.validate().is_err());
        assert!(GanSpec::new(Variant::Dcgan, (0, 15)).validate().is_err());
    }
}
