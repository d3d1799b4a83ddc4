use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::datapipe::fnv1a64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    LvadNet3d,
    UNet3d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downsample {
    MaxPool,
    Strided,
    None,
}

/// How the inflow speed enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Broadcast and fused into the bottleneck features.
    Latent,
    /// Broadcast as an extra input channel.
    Input,
    Off,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Encoder levels.
    pub depth: usize,
    /// Output channels of the first block before dividing by
    /// `scale_divisor`.
    pub base_channels: usize,
    /// Downsampling applied after each encoder level; `depth` entries.
    pub downsample: Vec<Downsample>,
    pub skips: bool,
    pub conditioning: Conditioning,
    pub scale_divisor: usize,
    /// Data channels (sparse component, plus RDF when used).
    pub in_channels: usize,
}

impl ModelConfig {
    pub fn lvadnet3d() -> Self {
        ModelConfig {
            architecture: Architecture::LvadNet3d,
            depth: 5,
            base_channels: 16,
            downsample: vec![Downsample::MaxPool, Downsample::MaxPool, Downsample::Strided, Downsample::Strided, Downsample::None],
            skips: true,
            conditioning: Conditioning::Latent,
            scale_divisor: 1,
            in_channels: 2,
        }
    }

    pub fn unet3d() -> Self {
        ModelConfig {
            architecture: Architecture::UNet3d,
            depth: 4,
            base_channels: 16,
            downsample: vec![Downsample::MaxPool, Downsample::MaxPool, Downsample::MaxPool, Downsample::None],
            skips: true,
            conditioning: Conditioning::Latent,
            scale_divisor: 1,
            in_channels: 2,
        }
    }

    /// Same topology with every channel count divided by `divisor`.
    pub fn desk(mut self, divisor: usize) -> Self {
        self.scale_divisor = divisor;
        self
    }

    pub fn with_skips(mut self, skips: bool) -> Self {
        self.skips = skips;
        self
    }

    pub fn with_conditioning(mut self, c: Conditioning) -> Self {
        self.conditioning = c;
        self
    }

    pub fn with_in_channels(mut self, c: usize) -> Self {
        self.in_channels = c;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.downsample.len() != self.depth {
            return bad(format!("{} downsample entries for depth {}", self.downsample.len(), self.depth));
        }
        if self.downsample[self.depth - 1] != Downsample::None {
            return bad("the deepest level cannot downsample".into());
        }
        if self.scale_divisor == 0 || self.base_channels % self.scale_divisor != 0 || self.base_channels < self.scale_divisor {
            return bad(format!(
                "base channels {} are not divisible by scale divisor {}",
                self.base_channels, self.scale_divisor
            ));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be at least 1".into());
        }
        Ok(())
    }

    /// Output channels of encoder level `l` (1-based).
    pub fn channels(&self, l: usize) -> usize {
        self.base_channels / self.scale_divisor << (l - 1)
    }

    /// Channels entering the first convolution.
    pub fn input_channels(&self) -> usize {
        self.in_channels + usize::from(self.conditioning == Conditioning::Input)
    }

    /// Spatial extents must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.downsample.iter().filter(|d| **d != Downsample::None).count()
    }

    /// Canonical text form; two configs are interchangeable exactly when
    /// these agree.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// FNV-1a of [`ModelConfig::canonical`].
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical().as_bytes())
    }

    /// Short identifier used in reports.
    pub fn model_id(&self) -> String {
        let base = match self.architecture {
            Architecture::LvadNet3d => "lvadnet3d",
            Architecture::UNet3d => "unet3d",
        };
        if self.skips {
            base.to_string()
        } else {
            format!("{base}_no_sc")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_ladder() {
        let c = ModelConfig::lvadnet3d();
        c.validate().unwrap();
        assert_eq!((1..=5).map(|l| c.channels(l)).collect::<Vec<_>>(), vec![16, 32, 64, 128, 256]);
        assert_eq!(c.spatial_divisor(), 16);
        let d = c.clone().desk(4);
        assert_eq!((1..=5).map(|l| d.channels(l)).collect::<Vec<_>>(), vec![4, 8, 16, 32, 64]);
        assert_eq!(ModelConfig::unet3d().spatial_divisor(), 8);
    }

    #[test]
    fn fingerprint_separates_skip_variants() {
        let a = ModelConfig::lvadnet3d();
        assert_ne!(a.fingerprint(), a.clone().with_skips(false).fingerprint());
        assert_eq!(a.fingerprint(), ModelConfig::lvadnet3d().fingerprint());
    }
}
