use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which stages of the network are built.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockMode {
    /// Dilated inverted-residual stage followed by detail recovery.
    #[default]
    Full,
    /// Dilated inverted-residual stage only; the final output is `J′`.
    Ddirb,
    /// Detail-recovery stage only, applied directly to the hazy input.
    Attdrn,
}

impl BlockMode {
    pub const ALL: [BlockMode; 3] = [BlockMode::Full, BlockMode::Ddirb, BlockMode::Attdrn];

    pub fn has_ddirb(self) -> bool {
        matches!(self, BlockMode::Full | BlockMode::Ddirb)
    }

    pub fn has_attdrn(self) -> bool {
        matches!(self, BlockMode::Full | BlockMode::Attdrn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BlockMode::Full => "full",
            BlockMode::Ddirb => "ddirb",
            BlockMode::Attdrn => "attdrn",
        }
    }
}

impl fmt::Display for BlockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(BlockMode::Full),
            "ddirb" => Ok(BlockMode::Ddirb),
            "attdrn" => Ok(BlockMode::Attdrn),
            other => Err(Error::config(format!(
                "unknown block mode {other:?} (expected full | ddirb | attdrn)"
            ))),
        }
    }
}

/// Architecture hyper-parameters. Every parameter shape is a pure function of
/// this struct.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub base_channels: usize,
    /// Width after concatenating the three parallel dilated branches.
    pub attention_channels: usize,
    pub n_ddirb: usize,
    pub n_attdrn: usize,
    pub ddirb_dilations: [usize; 3],
    pub attdrn_dilations: [usize; 3],
    pub se_reduction: usize,
    /// Kernel of the channel- and pixel-attention convolutions (1 or 3).
    pub attention_kernel: usize,
    pub extractor_channels: [usize; 2],
    /// Kernel of the RGB convolutions around the inverted-residual stage
    /// (`head`, `mid_out`).
    pub ddirb_io_kernel: usize,
    /// Kernel of the RGB convolutions around the attention stage
    /// (`mid_in`, `tail`).
    pub attdrn_io_kernel: usize,
    pub blocks: BlockMode,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            base_channels: 32,
            attention_channels: 96,
            n_ddirb: 3,
            n_attdrn: 3,
            ddirb_dilations: [1, 2, 5],
            attdrn_dilations: [1, 3, 5],
            se_reduction: 4,
            attention_kernel: 1,
            extractor_channels: [16, 32],
            ddirb_io_kernel: 1,
            attdrn_io_kernel: 5,
            blocks: BlockMode::Full,
        }
    }
}

impl ArchConfig {
    pub fn with_blocks(mut self, blocks: BlockMode) -> Self {
        self.blocks = blocks;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |d: &[usize; 3]| d[0] >= 1 && d[0] < d[1] && d[1] < d[2];
        if !increasing(&self.ddirb_dilations) || !increasing(&self.attdrn_dilations) {
            return Err(Error::config(format!(
                "dilation schedules must be strictly increasing, got {:?} and {:?}",
                self.ddirb_dilations, self.attdrn_dilations
            )));
        }
        if self.base_channels == 0 || self.attention_channels != 3 * self.base_channels {
            return Err(Error::config(format!(
                "attention_channels ({}) must be 3 × base_channels ({})",
                self.attention_channels, self.base_channels
            )));
        }
        if self.se_reduction == 0 || self.base_channels % self.se_reduction != 0 {
            return Err(Error::config(format!(
                "base_channels {} not divisible by SE reduction {}",
                self.base_channels, self.se_reduction
            )));
        }
        if !matches!(self.attention_kernel, 1 | 3) {
            return Err(Error::config(format!(
                "attention_kernel must be 1 or 3, got {}",
                self.attention_kernel
            )));
        }
        if self.ddirb_io_kernel % 2 == 0 || self.attdrn_io_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "io kernels must be odd, got {} and {}",
                self.ddirb_io_kernel, self.attdrn_io_kernel
            )));
        }
        if self.extractor_channels.contains(&0) {
            return Err(Error::config("extractor channels must be positive"));
        }
        if self.n_ddirb == 0 || self.n_attdrn == 0 {
            return Err(Error::config("block counts must be at least 1"));
        }
        Ok(())
    }

    /// Short stable fingerprint (FNV-1a over the JSON form).
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
