use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;
use crate::backbone::BackboneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Video branch only.
    SingleSt,
    /// One backbone over RGB and flow stacked as channels.
    Union,
    SfBidirectional,
    SfSpatialTemporal,
    SfOpticalFlow,
    /// Final fusion plus pooled intermediate stage features.
    Sc,
    /// Final fusion of the two pooled branch features.
    Ff,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::SingleSt,
        Variant::Union,
        Variant::SfBidirectional,
        Variant::SfSpatialTemporal,
        Variant::SfOpticalFlow,
        Variant::Sc,
        Variant::Ff,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::SingleSt => "single_st",
            Variant::Union => "union",
            Variant::SfBidirectional => "sf_bidirectional",
            Variant::SfSpatialTemporal => "sf_spatial_temporal",
            Variant::SfOpticalFlow => "sf_optical_flow",
            Variant::Sc => "sc",
            Variant::Ff => "ff",
        }
    }

    pub fn uses_flow(self) -> bool {
        self != Variant::SingleSt
    }

    pub fn is_dual_branch(self) -> bool {
        !matches!(self, Variant::SingleSt | Variant::Union)
    }

    pub fn swap_direction(self) -> Option<SwapDirection> {
        match self {
            Variant::SfBidirectional => Some(SwapDirection::Bidirectional),
            Variant::SfSpatialTemporal => Some(SwapDirection::SpatialTemporal),
            Variant::SfOpticalFlow => Some(SwapDirection::OpticalFlow),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which backbone(s) receive the swapped stage-2 feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwapDirection {
    Bidirectional,
    SpatialTemporal,
    OpticalFlow,
}

impl SwapDirection {
    pub fn feeds_video(self) -> bool {
        matches!(self, SwapDirection::Bidirectional | SwapDirection::SpatialTemporal)
    }

    pub fn feeds_flow(self) -> bool {
        matches!(self, SwapDirection::Bidirectional | SwapDirection::OpticalFlow)
    }
}

/// Preset names accepted wherever a variant is named.
pub const PRESET_NAMES: [&str; 10] = [
    "single_st",
    "union",
    "sf_bidirectional",
    "sf_spatial_temporal",
    "sf_optical_flow",
    "sc_l2",
    "sc_l123",
    "ff_fi1",
    "ff_fi4",
    "ff_fi8",
];

pub const DEFAULT_INTERVAL: usize = 8;

/// Architecture selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Frame interval `K` between flow pairs.
    pub frame_interval: usize,
    /// Frames `N` per clip.
    pub frame_count: usize,
    /// 1-based stages routed into the fusion head; non-empty only for `sc`.
    pub skip_sites: Vec<usize>,
    /// Backbone preset name, `swin-t` or `desk`.
    pub backbone: String,
    /// Output widths of the three fusion layers for the dual-branch head.
    /// Single-branch heads halve the two hidden widths.
    pub fusion_dims: [usize; 3],
}

impl ModelConfig {
    /// Builds a config from a variant or preset name (`ff_fi8`, `sc_l2`, …).
    pub fn from_name(name: &str, backbone: &str, frame_count: usize) -> Result<Self, ModelError> {
        let (variant, interval, sites) = parse_name(name)?;
        let cfg = ModelConfig {
            variant,
            frame_interval: interval.unwrap_or(DEFAULT_INTERVAL),
            frame_count,
            skip_sites: sites,
            backbone: backbone.to_string(),
            fusion_dims: default_fusion_dims(backbone)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical name recorded in checkpoint headers.
    pub fn name(&self) -> String {
        match self.variant {
            Variant::Sc => {
                let sites: String = self.skip_sites.iter().map(|s| s.to_string()).collect();
                format!("sc_l{sites}")
            }
            Variant::Ff => format!("ff_fi{}", self.frame_interval),
            v => v.as_str().to_string(),
        }
    }

    pub fn backbone_config(&self, input_channels: usize) -> Result<BackboneConfig, ModelError> {
        Ok(BackboneConfig::preset(&self.backbone, input_channels)?)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.variant == Variant::Sc {
            if self.skip_sites.is_empty() {
                return bad("variant sc needs at least one skip site; use ff for no skip connections".into());
            }
        } else if !self.skip_sites.is_empty() {
            return bad(format!("skip_sites are only valid for variant sc, not {}", self.variant));
        }
        if self.skip_sites.iter().any(|s| !(1..=3).contains(s)) || self.skip_sites.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("skip_sites {:?} must be increasing values from 1..=3", self.skip_sites));
        }
        if self.frame_interval == 0 || self.frame_interval >= self.frame_count {
            return bad(format!(
                "frame_interval {} must be at least 1 and below frame_count {}",
                self.frame_interval, self.frame_count
            ));
        }
        if self.fusion_dims.contains(&0) || self.fusion_dims[2] != 2 {
            return bad(format!("fusion_dims {:?} must be positive and end in 2", self.fusion_dims));
        }
        let bb = self.backbone_config(3)?;
        if self.frame_count < bb.patch_size[0] {
            return bad(format!(
                "frame_count {} is below the temporal patch size {}",
                self.frame_count, bb.patch_size[0]
            ));
        }
        Ok(())
    }
}

fn parse_name(name: &str) -> Result<(Variant, Option<usize>, Vec<usize>), ModelError> {
    let fixed = Variant::ALL.iter().find(|v| v.as_str() == name).copied();
    if let Some(v) = fixed {
        return Ok((v, None, Vec::new()));
    }
    if let Some(k) = name.strip_prefix("ff_fi") {
        let k = k.parse().map_err(|_| ModelError::Config(format!("bad frame interval in `{name}`")))?;
        return Ok((Variant::Ff, Some(k), Vec::new()));
    }
    if let Some(sites) = name.strip_prefix("sc_l") {
        let sites: Option<Vec<usize>> = sites.chars().map(|c| c.to_digit(10).map(|d| d as usize)).collect();
        return match sites {
            Some(s) if !s.is_empty() => Ok((Variant::Sc, None, s)),
            _ => Err(ModelError::Config(format!("bad skip sites in `{name}`"))),
        };
    }
    Err(ModelError::Config(format!(
        "unknown variant `{name}` (expected one of {})",
        PRESET_NAMES.join(", ")
    )))
}

pub fn default_fusion_dims(backbone: &str) -> Result<[usize; 3], ModelError> {
    match backbone {
        "swin-t" => Ok([512, 128, 2]),
        "desk" => Ok([170, 64, 2]),
        other => Err(ModelError::Config(format!("unknown backbone preset `{other}`"))),
    }
}

/// On-disk form: `variant` may be a preset name that also fixes the
/// interval or skip sites.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelConfigFile {
    variant: String,
    #[serde(default)]
    frame_interval: Option<usize>,
    frame_count: usize,
    #[serde(default)]
    skip_sites: Option<Vec<usize>>,
    backbone: String,
    #[serde(default)]
    fusion_dims: Option<[usize; 3]>,
}

impl Serialize for ModelConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ModelConfigFile {
            variant: self.name(),
            frame_interval: Some(self.frame_interval),
            frame_count: self.frame_count,
            skip_sites: Some(self.skip_sites.clone()),
            backbone: self.backbone.clone(),
            fusion_dims: Some(self.fusion_dims),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = ModelConfigFile::deserialize(d)?;
        ModelConfig::try_from(file).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<ModelConfigFile> for ModelConfig {
    type Error = ModelError;

    fn try_from(f: ModelConfigFile) -> Result<Self, ModelError> {
        let (variant, interval, sites) = parse_name(&f.variant)?;
        if let (Some(a), Some(b)) = (interval, f.frame_interval) {
            if a != b {
                return Err(ModelError::Config(format!(
                    "variant `{}` fixes frame_interval {a} but {b} was given",
                    f.variant
                )));
            }
        }
        let skip_sites = match (sites.is_empty(), f.skip_sites) {
            (false, Some(given)) if given != sites => {
                return Err(ModelError::Config(format!(
                    "variant `{}` fixes skip_sites {sites:?} but {given:?} was given",
                    f.variant
                )))
            }
            (false, _) => sites,
            (true, given) => given.unwrap_or_default(),
        };
        let cfg = ModelConfig {
            variant,
            frame_interval: interval.or(f.frame_interval).unwrap_or(DEFAULT_INTERVAL),
            frame_count: f.frame_count,
            skip_sites,
            fusion_dims: match f.fusion_dims {
                Some(d) => d,
                None => default_fusion_dims(&f.backbone)?,
            },
            backbone: f.backbone,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        parse_name(s).map(|(v, _, _)| v)
    }
}
