//! Declarative description of the encoder-decoder and its presets.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{conv_axis, Padding};
use crate::error::{Error, Result};

/// Name of the network input tap.
pub const INPUT_TAP: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// Batch normalization alone (the leading input normalizer).
    BN,
    Conv,
    /// Batch normalization followed by PReLU.
    BNAct,
    /// Residual block, resolution preserving.
    RBLK,
    /// Residual block downsampling by 2.
    DRBLK,
    /// Residual block upsampling by 2 through pixel shuffle.
    URBLK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub kind: BlockKind,
    /// Ignored for BN/BNAct, which keep their input width.
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    /// One tap, or two taps concatenated along channels.
    pub inputs: Vec<String>,
}

impl BlockSpec {
    fn new(name: &str, kind: BlockKind, out_channels: usize, inputs: &[&str]) -> Self {
        let stride = if kind == BlockKind::DRBLK { 2 } else { 1 };
        Self {
            name: name.to_string(),
            kind,
            out_channels,
            kernel: 3,
            stride,
            padding: Padding::Same,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn conv(name: &str, out_channels: usize, kernel: usize, stride: usize, padding: Padding, input: &str) -> Self {
        Self {
            kernel,
            stride,
            padding,
            ..Self::new(name, BlockKind::Conv, out_channels, &[input])
        }
    }

    /// Upsampling factor of a URBLK.
    pub const UPSCALE: usize = 2;
}

/// Spatial size and width of a tap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    pub input_size: usize,
    pub input_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub output_size: usize,
}

/// Named architecture presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Manchester,
    Dfc,
    Reduced,
    Micro,
}

impl Preset {
    pub fn spec(self, use_shadow: bool) -> ArchitectureSpec {
        match self {
            Preset::Manchester => ArchitectureSpec::manchester(use_shadow),
            Preset::Dfc => ArchitectureSpec::dfc(use_shadow),
            Preset::Reduced => ArchitectureSpec::reduced(use_shadow),
            Preset::Micro => ArchitectureSpec::micro(use_shadow),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Manchester => "manchester",
            Preset::Dfc => "dfc",
            Preset::Reduced => "reduced",
            Preset::Micro => "micro",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manchester" => Ok(Preset::Manchester),
            "dfc" => Ok(Preset::Dfc),
            "reduced" => Ok(Preset::Reduced),
            "micro" => Ok(Preset::Micro),
            other => Err(Error::invalid(format!("unknown preset `{other}`"))),
        }
    }
}

fn input_channels(use_shadow: bool) -> usize {
    if use_shadow {
        4
    } else {
        3
    }
}

impl ArchitectureSpec {
    /// 256 → 64 network; the 4-level residual U-Net with 64..1024 channels.
    pub fn manchester(use_shadow: bool) -> Self {
        Self::ratio4_unet("manchester", 256, 1, use_shadow)
    }

    /// Same topology as `manchester` at 1/4 width on 64-pixel inputs.
    pub fn reduced(use_shadow: bool) -> Self {
        Self::ratio4_unet("reduced", 64, 4, use_shadow)
    }

    /// Same topology as `manchester` at 1/8 width on 64-pixel inputs.
    pub fn micro(use_shadow: bool) -> Self {
        Self::ratio4_unet("micro", 64, 8, use_shadow)
    }

    fn ratio4_unet(name: &str, input_size: usize, width_div: usize, use_shadow: bool) -> Self {
        use BlockKind::*;
        let c = |n: usize| (n / width_div).max(1);
        let b = BlockSpec::new;
        let blocks = vec![
            b("BN1", BN, 0, &[INPUT_TAP]),
            BlockSpec::conv("Conv1", c(64), 3, 1, Padding::Same, "BN1"),
            b("BN2_PReLU1", BNAct, 0, &["Conv1"]),
            b("RBLK1", RBLK, c(64), &["BN2_PReLU1"]),
            b("DRBLK1", DRBLK, c(64), &["RBLK1"]),
            b("RBLK2", RBLK, c(64), &["DRBLK1"]),
            b("DRBLK2", DRBLK, c(128), &["RBLK2"]),
            b("RBLK3", RBLK, c(128), &["DRBLK2"]),
            b("DRBLK3", DRBLK, c(256), &["RBLK3"]),
            b("RBLK4", RBLK, c(256), &["DRBLK3"]),
            b("DRBLK4", DRBLK, c(512), &["RBLK4"]),
            b("RBLK5", RBLK, c(512), &["DRBLK4"]),
            b("RBLK6", RBLK, c(1024), &["RBLK5"]),
            b("RBLK7", RBLK, c(1024), &["RBLK6"]),
            b("URBLK1", URBLK, c(512), &["RBLK7", "RBLK5"]),
            b("RBLK8", RBLK, c(512), &["URBLK1"]),
            b("URBLK2", URBLK, c(256), &["RBLK8", "RBLK4"]),
            b("RBLK9", RBLK, c(256), &["URBLK2"]),
            b("RBLK10", RBLK, c(128), &["RBLK9", "RBLK3"]),
            b("RBLK11", RBLK, c(128), &["RBLK10"]),
            b("RBLK12", RBLK, c(64), &["RBLK11"]),
            BlockSpec::conv("Conv2", c(64), 3, 1, Padding::Same, "RBLK12"),
            b("BN3_PReLU2", BNAct, 0, &["Conv2"]),
            BlockSpec::conv("Conv3", 1, 3, 1, Padding::Same, "BN3_PReLU2"),
        ];
        Self {
            name: name.to_string(),
            input_size,
            input_channels: input_channels(use_shadow),
            blocks,
            output_size: input_size / 4,
        }
    }

    /// 520 → 52 network with a strided valid stem and a valid-padded tail.
    pub fn dfc(use_shadow: bool) -> Self {
        use BlockKind::*;
        let b = BlockSpec::new;
        let v = Padding::Valid;
        let blocks = vec![
            b("BN1", BN, 0, &[INPUT_TAP]),
            // 10x10 stride-2 valid: (520 - 10) / 2 + 1 = 256
            BlockSpec::conv("Conv1", 64, 10, 2, v, "BN1"),
            b("BN2_PReLU1", BNAct, 0, &["Conv1"]),
            b("RBLK1", RBLK, 64, &["BN2_PReLU1"]),
            b("DRBLK1", DRBLK, 64, &["RBLK1"]),
            b("RBLK2", RBLK, 64, &["DRBLK1"]),
            b("DRBLK2", DRBLK, 128, &["RBLK2"]),
            b("RBLK3", RBLK, 128, &["DRBLK2"]),
            b("DRBLK3", DRBLK, 192, &["RBLK3"]),
            b("RBLK4", RBLK, 192, &["DRBLK3"]),
            b("DRBLK4", DRBLK, 256, &["RBLK4"]),
            b("RBLK5", RBLK, 256, &["DRBLK4"]),
            b("RBLK6", RBLK, 256, &["RBLK5"]),
            b("RBLK7", RBLK, 512, &["RBLK6"]),
            b("URBLK1", URBLK, 256, &["RBLK7", "RBLK5"]),
            b("RBLK8", RBLK, 256, &["URBLK1"]),
            b("URBLK2", URBLK, 192, &["RBLK8", "RBLK4"]),
            b("RBLK9", RBLK, 128, &["URBLK2"]),
            b("RBLK10", RBLK, 64, &["RBLK9", "RBLK3"]),
            b("RBLK11", RBLK, 64, &["RBLK10"]),
            BlockSpec::conv("Conv2", 64, 5, 1, v, "RBLK11"),
            b("BN3_PReLU2", BNAct, 0, &["Conv2"]),
            BlockSpec::conv("Conv3", 64, 5, 1, v, "BN3_PReLU2"),
            b("BN4_PReLU3", BNAct, 0, &["Conv3"]),
            BlockSpec::conv("Conv4", 32, 3, 1, v, "BN4_PReLU3"),
            b("BN5_PReLU4", BNAct, 0, &["Conv4"]),
            BlockSpec::conv("Conv5", 1, 3, 1, v, "BN5_PReLU4"),
        ];
        Self {
            name: "dfc".to_string(),
            input_size: 520,
            input_channels: input_channels(use_shadow),
            blocks,
            output_size: 52,
        }
    }

    pub fn uses_shadow_channel(&self) -> bool {
        self.input_channels == 4
    }

    /// Spatial reduction between input and output (4 or 10 for the presets).
    pub fn ratio(&self) -> usize {
        self.input_size / self.output_size.max(1)
    }

    /// Output shape of every block, validating the whole graph.
    pub fn infer_shapes(&self) -> Result<Vec<TapShape>> {
        if !matches!(self.input_channels, 3 | 4) {
            return Err(Error::Spec {
                block: INPUT_TAP.into(),
                message: format!("input must have 3 or 4 channels, got {}", self.input_channels),
            });
        }
        let mut taps: HashMap<&str, TapShape> = HashMap::new();
        taps.insert(
            INPUT_TAP,
            TapShape {
                height: self.input_size,
                width: self.input_size,
                channels: self.input_channels,
            },
        );
        let mut shapes = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let err = |message: String| Error::Spec {
                block: block.name.clone(),
                message,
            };
            if taps.contains_key(block.name.as_str()) {
                return Err(err("duplicate block name".into()));
            }
            let inputs: Vec<TapShape> = block
                .inputs
                .iter()
                .map(|name| {
                    taps.get(name.as_str())
                        .copied()
                        .ok_or_else(|| err(format!("unknown input tap `{name}`")))
                })
                .collect::<Result<_>>()?;
            let input = match inputs.as_slice() {
                [one] => *one,
                [a, b] => {
                    if (a.height, a.width) != (b.height, b.width) {
                        return Err(err(format!(
                            "concatenated taps differ spatially: {}x{} vs {}x{}",
                            a.height, a.width, b.height, b.width
                        )));
                    }
                    TapShape {
                        channels: a.channels + b.channels,
                        ..*a
                    }
                }
                _ => return Err(err(format!("expected 1 or 2 inputs, got {}", inputs.len()))),
            };
            if block.kind != BlockKind::BN && block.kind != BlockKind::BNAct {
                if block.out_channels == 0 || block.kernel == 0 || block.stride == 0 {
                    return Err(err("channels, kernel and stride must be positive".into()));
                }
            }
            let out = match block.kind {
                BlockKind::BN | BlockKind::BNAct => input,
                BlockKind::Conv => {
                    let h = conv_axis(input.height, block.kernel, block.stride, block.padding);
                    let w = conv_axis(input.width, block.kernel, block.stride, block.padding);
                    match (h, w) {
                        (Some((h, _)), Some((w, _))) => TapShape {
                            height: h,
                            width: w,
                            channels: block.out_channels,
                        },
                        _ => return Err(err("kernel larger than its valid-padded input".into())),
                    }
                }
                BlockKind::RBLK => {
                    if block.stride != 1 {
                        return Err(err("RBLK requires stride 1".into()));
                    }
                    TapShape {
                        channels: block.out_channels,
                        ..input
                    }
                }
                BlockKind::DRBLK => {
                    if block.stride != 2 {
                        return Err(err("DRBLK requires stride 2".into()));
                    }
                    TapShape {
                        height: input.height.div_ceil(2),
                        width: input.width.div_ceil(2),
                        channels: block.out_channels,
                    }
                }
                BlockKind::URBLK => {
                    if block.stride != 1 {
                        return Err(err("URBLK requires stride 1".into()));
                    }
                    TapShape {
                        height: input.height * BlockSpec::UPSCALE,
                        width: input.width * BlockSpec::UPSCALE,
                        channels: block.out_channels,
                    }
                }
            };
            if matches!(block.kind, BlockKind::RBLK | BlockKind::DRBLK | BlockKind::URBLK)
                && (block.kernel % 2 == 0 || block.padding != Padding::Same)
            {
                return Err(err("residual blocks need an odd kernel with same padding".into()));
            }
            taps.insert(block.name.as_str(), out);
            shapes.push(out);
        }
        let last = shapes.last().ok_or_else(|| Error::Spec {
            block: self.name.clone(),
            message: "architecture has no blocks".into(),
        })?;
        if (last.height, last.width, last.channels) != (self.output_size, self.output_size, 1) {
            return Err(Error::Spec {
                block: self.blocks.last().unwrap().name.clone(),
                message: format!(
                    "final output {}x{}x{} does not match declared {}x{}x1",
                    last.height, last.width, last.channels, self.output_size, self.output_size
                ),
            });
        }
        Ok(shapes)
    }
}
