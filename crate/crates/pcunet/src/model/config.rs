use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which network to build. The `vol2d` variants treat the volume as a stack
/// of depth channels over an (x, y) grid; `single_slice` sees only the middle
/// z slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "pcunet_3d")]
    Pcunet3d,
    #[serde(rename = "pcunet_2d")]
    Pcunet2d,
    #[serde(rename = "pcunet_no_skip")]
    PcunetNoSkip,
    #[serde(rename = "pc_mask_decoder")]
    PcMaskDecoder,
    #[serde(rename = "pointoutnet_single_slice")]
    PointoutnetSingleSlice,
    #[serde(rename = "pointoutnet_vol2d")]
    PointoutnetVol2d,
    #[serde(rename = "pointoutnet_vol3d")]
    PointoutnetVol3d,
    #[serde(rename = "unet_vol2d")]
    UnetVol2d,
    #[serde(rename = "unet_vol3d")]
    UnetVol3d,
}

pub const ALL_VARIANTS: [Variant; 9] = [
    Variant::Pcunet3d,
    Variant::Pcunet2d,
    Variant::PcunetNoSkip,
    Variant::PcMaskDecoder,
    Variant::PointoutnetSingleSlice,
    Variant::PointoutnetVol2d,
    Variant::PointoutnetVol3d,
    Variant::UnetVol2d,
    Variant::UnetVol3d,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pcunet3d => "pcunet_3d",
            Variant::Pcunet2d => "pcunet_2d",
            Variant::PcunetNoSkip => "pcunet_no_skip",
            Variant::PcMaskDecoder => "pc_mask_decoder",
            Variant::PointoutnetSingleSlice => "pointoutnet_single_slice",
            Variant::PointoutnetVol2d => "pointoutnet_vol2d",
            Variant::PointoutnetVol3d => "pointoutnet_vol3d",
            Variant::UnetVol2d => "unet_vol2d",
            Variant::UnetVol3d => "unet_vol3d",
        }
    }

    /// True for networks whose convolutions also stride and mix along z.
    pub fn is_3d(self) -> bool {
        matches!(
            self,
            Variant::Pcunet3d
                | Variant::PcunetNoSkip
                | Variant::PcMaskDecoder
                | Variant::PointoutnetVol3d
                | Variant::UnetVol3d
        )
    }

    pub fn has_point_head(self) -> bool {
        !matches!(
            self,
            Variant::UnetVol2d | Variant::UnetVol3d | Variant::PcMaskDecoder
        )
    }

    pub fn has_mask_head(self) -> bool {
        !matches!(
            self,
            Variant::PointoutnetSingleSlice
                | Variant::PointoutnetVol2d
                | Variant::PointoutnetVol3d
        )
    }

    /// Whether a PointNet + feature injection sits between encoder and
    /// decoder. True exactly when both a point cloud and a mask are in play.
    pub fn has_pointnet(self) -> bool {
        matches!(
            self,
            Variant::Pcunet3d | Variant::Pcunet2d | Variant::PcunetNoSkip | Variant::PcMaskDecoder
        )
    }

    /// The point-cloud-only ablation has no image encoder at all; its
    /// decoder runs from injected point features over a zero image grid.
    pub fn has_encoder(self) -> bool {
        self != Variant::PcMaskDecoder
    }

    pub fn skip_mode(self) -> SkipMode {
        match self {
            Variant::Pcunet3d | Variant::Pcunet2d => SkipMode::Multiply,
            Variant::UnetVol2d | Variant::UnetVol3d => SkipMode::Concat,
            _ => SkipMode::None,
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
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant '{s}' (expected one of: {})",
                    ALL_VARIANTS.map(Variant::name).join(", ")
                ))
            })
    }
}

/// How decoder stages combine upsampled features with encoder features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    /// Voxel-wise gating: `d * (1 + proj(e))` (or `d * proj(e)` without the
    /// unit offset).
    Multiply,
    /// Channel concatenation, the classic U-Net wiring.
    Concat,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Preprocessed volume shape (x, y, z).
    pub input_shape: [usize; 3],
    /// Points in the predicted cloud.
    pub n_points: usize,
    /// Encoder stage widths, strictly increasing, one per downsampling.
    #[serde(default = "default_encoder_channels")]
    pub encoder_channels: Vec<usize>,
    /// Shared-MLP widths of the PointNet.
    #[serde(default = "default_pointnet_channels")]
    pub pointnet_channels: [usize; 3],
    /// Use `d * (1 + s)` instead of `d * s` in multiplicative skips so an
    /// all-zero projection passes features through unchanged.
    #[serde(default = "default_true")]
    pub unit_offset_skips: bool,
    /// Feed the ground-truth cloud (instead of the predicted one) to the
    /// PointNet. Forced on for variants without a point head.
    #[serde(default)]
    pub feed_gt_cloud: bool,
    /// Weight initialization seed.
    pub seed: u64,
}

fn default_encoder_channels() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

fn default_pointnet_channels() -> [usize; 3] {
    [32, 128, 512]
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    pub fn new(variant: Variant, input_shape: [usize; 3], n_points: usize, seed: u64) -> Self {
        ModelConfig {
            variant,
            input_shape,
            n_points,
            encoder_channels: default_encoder_channels(),
            pointnet_channels: default_pointnet_channels(),
            unit_offset_skips: true,
            feed_gt_cloud: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.encoder_channels.len();
        if n < 2 {
            return Err(Error::Config("need at least 2 encoder stages".into()));
        }
        if !self.encoder_channels.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "encoder channels must be strictly increasing, got {:?}",
                self.encoder_channels
            )));
        }
        let f = 1usize << n;
        let [x, y, z] = self.input_shape;
        if x % f != 0 || y % f != 0 {
            return Err(Error::Config(format!(
                "input x/y ({x}, {y}) must be divisible by the total downsampling factor {f}"
            )));
        }
        if self.variant.is_3d() && z % f != 0 {
            return Err(Error::Config(format!(
                "input z ({z}) must be divisible by {f} for 3d variants"
            )));
        }
        if self.variant.has_point_head() && self.n_points == 0 {
            return Err(Error::Config("n_points must be positive".into()));
        }
        Ok(())
    }

    /// Channels of the grid the convolutions actually see.
    pub fn conv_in_channels(&self) -> usize {
        match self.variant {
            Variant::PointoutnetSingleSlice => 1,
            v if v.is_3d() => 1,
            _ => self.input_shape[2],
        }
    }

    /// Spatial shape of the grid the convolutions actually see.
    pub fn conv_grid(&self) -> (usize, usize, usize) {
        let [x, y, z] = self.input_shape;
        if self.variant.is_3d() {
            (x, y, z)
        } else {
            (x, y, 1)
        }
    }

    /// Channels of the mask output grid (depth for the 2d variants).
    pub fn mask_out_channels(&self) -> usize {
        if self.variant.is_3d() {
            1
        } else {
            self.input_shape[2]
        }
    }

    pub fn kernel(&self) -> [usize; 3] {
        if self.variant.is_3d() {
            [3, 3, 3]
        } else {
            [3, 3, 1]
        }
    }

    pub fn down_stride(&self) -> [usize; 3] {
        if self.variant.is_3d() {
            [2, 2, 2]
        } else {
            [2, 2, 1]
        }
    }

    /// Spatial shape at the bottleneck.
    pub fn bottleneck_grid(&self) -> (usize, usize, usize) {
        let (x, y, z) = self.conv_grid();
        let f = 1usize << self.encoder_channels.len();
        if self.variant.is_3d() {
            (x / f, y / f, z / f)
        } else {
            (x / f, y / f, 1)
        }
    }

    pub fn pointnet_feeds_gt(&self) -> bool {
        self.feed_gt_cloud || !self.variant.has_point_head()
    }
}
