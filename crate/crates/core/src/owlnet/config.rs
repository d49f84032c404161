use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OwlNetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    /// Full-size network on 768x448 inputs.
    Paper,
    /// Narrow network on 192x128 inputs for CPU experiments.
    Desk,
}

impl FromStr for ScalePreset {
    type Err = OwlNetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(ScalePreset::Paper),
            "desk" => Ok(ScalePreset::Desk),
            other => Err(OwlNetError::Config(format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for ScalePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalePreset::Paper => "paper",
            ScalePreset::Desk => "desk",
        })
    }
}

pub const CONV_LAYERS: usize = 12;
pub const POOL_LAYERS: usize = 6;
pub const FC_LAYERS: usize = 4;
pub const CLASSES: usize = 2;
pub const CAM_MIN_ROWS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Output channels of conv 1..=12.
    pub conv_channels: Vec<usize>,
    /// 1-based conv indices followed by a 2x2 max pool.
    pub pool_after: Vec<usize>,
    pub fc_sizes: Vec<usize>,
    pub bn_momentum: f64,
    pub scale_preset: ScalePreset,
}

impl NetworkConfig {
    pub fn paper() -> Self {
        NetworkConfig {
            input_h: 768,
            input_w: 448,
            conv_channels: vec![16, 16, 16, 16, 32, 32, 64, 64, 128, 128, 128, 128],
            pool_after: vec![2, 4, 6, 8, 10, 12],
            fc_sizes: vec![4096, 1024, 128, 2],
            bn_momentum: 0.1,
            scale_preset: ScalePreset::Paper,
        }
    }

    pub fn desk() -> Self {
        NetworkConfig {
            input_h: 192,
            input_w: 128,
            conv_channels: vec![4, 4, 4, 4, 8, 8, 16, 16, 32, 32, 32, 32],
            pool_after: vec![2, 4, 6, 8, 10, 12],
            fc_sizes: vec![256, 64, 32, 2],
            bn_momentum: 0.1,
            scale_preset: ScalePreset::Desk,
        }
    }

    /// Deepest conv layer (1-based) whose output still has at least
    /// `CAM_MIN_ROWS` rows. Coarser maps cannot separate neighbouring widgets
    /// on a phone screen, so the explained layer tracks map resolution rather
    /// than depth.
    pub fn cam_layer(&self) -> usize {
        let mut rows = self.input_h;
        let mut best = 1;
        for conv in 1..=CONV_LAYERS {
            if rows >= CAM_MIN_ROWS {
                best = conv;
            }
            if self.pool_after.contains(&conv) {
                rows /= 2;
            }
        }
        best
    }

    pub fn for_preset(preset: ScalePreset) -> Self {
        match preset {
            ScalePreset::Paper => Self::paper(),
            ScalePreset::Desk => Self::desk(),
        }
    }

    /// Check layer counts, pool placement and that every pool sees even
    /// spatial extents.
    pub fn validate(&self) -> Result<(), OwlNetError> {
        let bad = |m: String| Err(OwlNetError::Config(m));
        if self.input_h == 0 || self.input_w == 0 {
            return bad(format!("input {}x{} has a zero extent", self.input_h, self.input_w));
        }
        if self.conv_channels.len() != CONV_LAYERS || self.conv_channels.contains(&0) {
            return bad(format!("need {CONV_LAYERS} non-zero conv widths, got {:?}", self.conv_channels));
        }
        if self.fc_sizes.len() != FC_LAYERS || self.fc_sizes.contains(&0) {
            return bad(format!("need {FC_LAYERS} non-zero fc widths, got {:?}", self.fc_sizes));
        }
        if self.fc_sizes[FC_LAYERS - 1] != CLASSES {
            return bad(format!("last fc layer must have {CLASSES} outputs"));
        }
        let mut pools = self.pool_after.clone();
        pools.sort_unstable();
        pools.dedup();
        if pools.len() != POOL_LAYERS || self.pool_after.len() != POOL_LAYERS {
            return bad(format!("need {POOL_LAYERS} distinct pool positions, got {:?}", self.pool_after));
        }
        if pools.iter().any(|&p| p == 0 || p > CONV_LAYERS) {
            return bad(format!("pool positions must lie in 1..={CONV_LAYERS}: {:?}", self.pool_after));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad(format!("bn_momentum {} must lie in (0, 1]", self.bn_momentum));
        }
        let (mut h, mut w) = (self.input_h, self.input_w);
        for conv in 1..=CONV_LAYERS {
            if self.pools_after(conv) {
                if h % 2 != 0 || w % 2 != 0 {
                    return bad(format!(
                        "pool after conv {conv} sees odd map {h}x{w} (input {}x{} is not divisible by 2^{POOL_LAYERS})",
                        self.input_h, self.input_w
                    ));
                }
                h /= 2;
                w /= 2;
            }
        }
        Ok(())
    }

    pub fn pools_after(&self, conv: usize) -> bool {
        self.pool_after.contains(&conv)
    }

    /// Map size before flattening: (channels, h, w).
    pub fn final_map(&self) -> (usize, usize, usize) {
        let p = 1 << self.pool_after.len();
        (self.conv_channels[CONV_LAYERS - 1], self.input_h / p, self.input_w / p)
    }

    pub fn flat_features(&self) -> usize {
        let (c, h, w) = self.final_map();
        c * h * w
    }

    /// Per-sample shape after every stage, computed without allocating
    /// any weights.
    pub fn shape_chain(&self) -> Result<Vec<ShapeStep>, OwlNetError> {
        self.validate()?;
        let mut steps = vec![ShapeStep::new("input", vec![3, self.input_h, self.input_w])];
        let (mut h, mut w) = (self.input_h, self.input_w);
        for (i, &c) in self.conv_channels.iter().enumerate() {
            let conv = i + 1;
            steps.push(ShapeStep::new(format!("conv{conv}"), vec![c, h, w]));
            if self.pools_after(conv) {
                h /= 2;
                w /= 2;
                steps.push(ShapeStep::new(format!("pool{conv}"), vec![c, h, w]));
            }
        }
        steps.push(ShapeStep::new("flatten", vec![self.flat_features()]));
        for (i, &m) in self.fc_sizes.iter().enumerate() {
            steps.push(ShapeStep::new(format!("fc{}", i + 1), vec![m]));
        }
        Ok(steps)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeStep {
    pub stage: String,
    pub shape: Vec<usize>,
}

impl ShapeStep {
    fn new(stage: impl Into<String>, shape: Vec<usize>) -> Self {
        ShapeStep {
            stage: stage.into(),
            shape,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cam_layer_keeps_24_rows() {
        assert_eq!(NetworkConfig::paper().cam_layer(), 12);
        assert_eq!(NetworkConfig::desk().cam_layer(), 8);
        let mut tall = NetworkConfig::desk();
        tall.input_h = 384;
        assert_eq!(tall.cam_layer(), 10);
    }

    #[test]
    fn paper_chain_ends_in_10752() {
        let chain = NetworkConfig::paper().shape_chain().unwrap();
        let pre = chain.iter().find(|s| s.stage == "pool12").unwrap();
        assert_eq!(pre.shape, vec![128, 12, 7]);
        let flat: Vec<_> = chain.iter().skip_while(|s| s.stage != "flatten").map(|s| s.shape[0]).collect();
        assert_eq!(flat, vec![10752, 4096, 1024, 128, 2]);
        assert_eq!(chain.len(), 1 + 12 + 6 + 1 + 4);
    }

    #[test]
    fn desk_chain_is_integral() {
        let cfg = NetworkConfig::desk();
        assert_eq!(cfg.final_map(), (32, 3, 2));
        assert_eq!(cfg.flat_features(), 192);
        cfg.validate().unwrap();
    }

    #[test]
    fn non_divisible_input_rejected() {
        let cfg = NetworkConfig {
            input_w: 112,
            ..NetworkConfig::desk()
        };
        assert!(matches!(cfg.validate(), Err(OwlNetError::Config(m)) if m.contains("odd")));
    }

    #[test]
    fn bad_layer_counts_rejected() {
        let mut cfg = NetworkConfig::desk();
        cfg.pool_after = vec![2, 4, 6, 8, 10, 10];
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::desk();
        cfg.fc_sizes = vec![256, 64, 32, 3];
        assert!(cfg.validate().is_err());
        let mut cfg = NetworkConfig::desk();
        cfg.conv_channels.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn preset_names_round_trip() {
        for p in [ScalePreset::Paper, ScalePreset::Desk] {
            assert_eq!(p.to_string().parse::<ScalePreset>().unwrap(), p);
        }
        assert!("huge".parse::<ScalePreset>().is_err());
    }
}
