use std::fmt;
use std::str::FromStr;

use crate::error::{DsmError, Result};

/// How a block builds its spectrum mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskMode {
    /// Input-adaptive mask from the weights generator.
    Dynamic,
    /// All-ones mask: the mixer reduces to an exact DCT/IDCT round trip.
    AllPass,
    /// Uniform(0, 1] grid drawn once at initialization and frozen.
    Random,
}

impl MaskMode {
    pub const ALL: [MaskMode; 3] = [MaskMode::Dynamic, MaskMode::AllPass, MaskMode::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Dynamic => "dynamic",
            MaskMode::AllPass => "allpass",
            MaskMode::Random => "random",
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMode {
    type Err = DsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dynamic" => Ok(MaskMode::Dynamic),
            "allpass" | "all-pass" => Ok(MaskMode::AllPass),
            "random" => Ok(MaskMode::Random),
            other => Err(DsmError::Config(format!("unknown mask mode `{other}`"))),
        }
    }
}

/// Number of pooled spectrum bands fed to the weights generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectrumLength {
    Bands(usize),
    /// One band per spectrum position at every stage.
    All,
}

impl SpectrumLength {
    /// Bands used at a stage with `positions = H * W`. A fixed count is capped
    /// at the stage size, since later stages have fewer positions.
    pub fn at(self, positions: usize) -> usize {
        match self {
            SpectrumLength::Bands(l) => l.min(positions),
            SpectrumLength::All => positions,
        }
    }
}

impl fmt::Display for SpectrumLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumLength::Bands(l) => write!(f, "{l}"),
            SpectrumLength::All => f.write_str("all"),
        }
    }
}

impl FromStr for SpectrumLength {
    type Err = DsmError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(SpectrumLength::All);
        }
        s.parse::<usize>()
            .map(SpectrumLength::Bands)
            .map_err(|_| DsmError::Config(format!("`{s}` is neither a band count nor `all`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: String,
    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub spectrum_length: SpectrumLength,
    /// Hidden width `K` of the weights generator.
    pub dswg_hidden: usize,
    pub mask_gain: f64,
    pub truncate_to: Option<usize>,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub mask_mode: MaskMode,
    /// Fixed input standardization `(x - input_mean) / input_std`.
    pub input_mean: f64,
    pub input_std: f64,
}

/// Shape of one stage after patch embedding / merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub depth: usize,
    pub bands: usize,
}

impl StageShape {
    pub fn positions(&self) -> usize {
        self.height * self.width
    }
}

pub const VARIANTS: [&str; 3] = ["dsm-s-desk", "dsm-m-desk", "dsm-l-desk"];

impl ModelConfig {
    /// Desk-scale four-stage presets; `m` and `l` scale the widths by 1.5 and 2.
    pub fn preset(variant: &str) -> Result<Self> {
        let base = [32usize, 64, 128, 256];
        let widths: Vec<usize> = match variant {
            "dsm-s-desk" => base.to_vec(),
            "dsm-m-desk" => base.iter().map(|w| w * 3 / 2).collect(),
            "dsm-l-desk" => base.iter().map(|w| w * 2).collect(),
            other => return Err(DsmError::Config(format!("unknown variant `{other}`"))),
        };
        Ok(ModelConfig {
            variant: variant.to_string(),
            image_height: 32,
            image_width: 32,
            in_channels: 1,
            patch_size: 4,
            depths: vec![2, 2, 4, 2],
            widths,
            spectrum_length: SpectrumLength::Bands(16),
            dswg_hidden: 32,
            mask_gain: 1.0,
            truncate_to: None,
            mlp_ratio: 4,
            num_classes: 10,
            mask_mode: MaskMode::Dynamic,
            input_mean: 0.5,
            input_std: 0.25,
        })
    }

    /// Two stages, depths [1, 1], widths [8, 16] on 16x16 single-channel input.
    pub fn tiny() -> Self {
        ModelConfig {
            variant: "tiny".to_string(),
            image_height: 16,
            image_width: 16,
            in_channels: 1,
            patch_size: 2,
            depths: vec![1, 1],
            widths: vec![8, 16],
            spectrum_length: SpectrumLength::Bands(8),
            dswg_hidden: 16,
            mask_gain: 1.0,
            truncate_to: None,
            mlp_ratio: 2,
            num_classes: 4,
            mask_mode: MaskMode::Dynamic,
            input_mean: 0.5,
            input_std: 0.25,
        }
    }

    /// Validates the configuration and returns per-stage shapes.
    pub fn stages(&self) -> Result<Vec<StageShape>> {
        let err = |msg: String| Err(DsmError::Config(msg));
        if self.patch_size == 0 || self.in_channels == 0 || self.num_classes == 0 {
            return err("patch_size, in_channels and num_classes must be positive".into());
        }
        if self.image_height == 0 || self.image_width == 0 {
            return err("image dimensions must be positive".into());
        }
        if !self.image_height.is_multiple_of(self.patch_size) || !self.image_width.is_multiple_of(self.patch_size) {
            return err(format!(
                "image {}x{} is not divisible by patch size {}",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        if self.depths.is_empty() || self.depths.len() != self.widths.len() {
            return err("depths and widths must be non-empty and of equal length".into());
        }
        if self.widths.contains(&0) || self.widths.windows(2).any(|p| p[1] < p[0]) {
            return err("stage widths must be positive and non-decreasing".into());
        }
        if self.mlp_ratio == 0 || self.dswg_hidden == 0 {
            return err("mlp_ratio and dswg_hidden must be positive".into());
        }
        if !(self.mask_gain.is_finite() && self.mask_gain > 0.0) {
            return err("mask_gain must be a positive finite number".into());
        }
        if !(self.input_mean.is_finite() && self.input_std.is_finite() && self.input_std > 0.0) {
            return err("input_std must be positive and input_mean finite".into());
        }
        let (mut h, mut w) = (
            self.image_height / self.patch_size,
            self.image_width / self.patch_size,
        );
        let mut out = Vec::with_capacity(self.depths.len());
        for (s, (&depth, &channels)) in self.depths.iter().zip(&self.widths).enumerate() {
            if s > 0 {
                if h % 2 != 0 || w % 2 != 0 {
                    return err(format!(
                        "stage {s} cannot halve a {h}x{w} token grid; use a larger image"
                    ));
                }
                h /= 2;
                w /= 2;
            }
            out.push(StageShape {
                height: h,
                width: w,
                channels,
                depth,
                bands: self.spectrum_length.at(h * w),
            });
        }
        let first = out[0].positions();
        match self.spectrum_length {
            SpectrumLength::Bands(0) => return err("spectrum_length must be >= 1".into()),
            SpectrumLength::Bands(l) if l > first => {
                return err(format!(
                    "spectrum_length {l} exceeds the {first} spectrum positions of stage 0"
                ))
            }
            _ => {}
        }
        if let Some(0) = self.truncate_to {
            return err("truncate_to must be >= 1 when set".into());
        }
        Ok(out)
    }

    pub fn tokens_per_side(&self) -> (usize, usize) {
        (
            self.image_height / self.patch_size,
            self.image_width / self.patch_size,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_preset_shapes() {
        let cfg = ModelConfig::preset("dsm-s-desk").unwrap();
        let stages = cfg.stages().unwrap();
        let dims: Vec<_> = stages.iter().map(|s| (s.height, s.width, s.channels)).collect();
        assert_eq!(dims, vec![(8, 8, 32), (4, 4, 64), (2, 2, 128), (1, 1, 256)]);
        let bands: Vec<_> = stages.iter().map(|s| s.bands).collect();
        assert_eq!(bands, vec![16, 16, 4, 1]);
    }

    #[test]
    fn wider_presets() {
        assert_eq!(ModelConfig::preset("dsm-m-desk").unwrap().widths, vec![48, 96, 192, 384]);
        assert_eq!(ModelConfig::preset("dsm-l-desk").unwrap().widths, vec![64, 128, 256, 512]);
        assert!(ModelConfig::preset("dsm-xl").is_err());
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut cfg = ModelConfig::tiny();
        cfg.image_height = 15;
        assert!(cfg.stages().is_err());

        let mut cfg = ModelConfig::tiny();
        cfg.depths = vec![1, 1, 1, 1];
        cfg.widths = vec![8, 8, 8, 8];
        // 8 -> 4 -> 2 -> 1 is fine, one more halving is not
        assert!(cfg.stages().is_ok());
        cfg.depths.push(1);
        cfg.widths.push(8);
        assert!(cfg.stages().is_err());

        let mut cfg = ModelConfig::tiny();
        cfg.widths = vec![16, 8];
        assert!(cfg.stages().is_err());
    }

    #[test]
    fn spectrum_length_limits() {
        let mut cfg = ModelConfig::tiny();
        cfg.spectrum_length = SpectrumLength::Bands(64);
        assert!(cfg.stages().is_ok());
        cfg.spectrum_length = SpectrumLength::Bands(65);
        assert!(cfg.stages().is_err());
        cfg.spectrum_length = SpectrumLength::Bands(0);
        assert!(cfg.stages().is_err());
        cfg.spectrum_length = SpectrumLength::All;
        let stages = cfg.stages().unwrap();
        assert_eq!(stages[0].bands, 64);
        assert_eq!(stages[1].bands, 16);
    }

    #[test]
    fn parses_modes_and_lengths() {
        assert_eq!("allpass".parse::<MaskMode>().unwrap(), MaskMode::AllPass);
        assert!("lowpass".parse::<MaskMode>().is_err());
        assert_eq!("all".parse::<SpectrumLength>().unwrap(), SpectrumLength::All);
        assert_eq!("16".parse::<SpectrumLength>().unwrap(), SpectrumLength::Bands(16));
    }
}
