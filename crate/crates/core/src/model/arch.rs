use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{Context, SHEET_HEIGHT, SHEET_WIDTH};

pub const EMBEDDING_DIM: usize = 32;

/// Final stage of each pathway before the joint projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Global average pooling over the last feature map.
    Pooled,
    /// Flatten plus a fully connected layer.
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub embedding_dim: usize,
    pub base_channels: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub head: HeadKind,
    pub hidden: usize,
    /// Fixed average-pooling factor applied to sheet snippets on input.
    pub sheet_downsample: usize,
    pub n_bins: usize,
    pub context: Context,
    pub attention: bool,
    pub attention_channels: usize,
    pub attention_hidden: usize,
    pub attention_kernel: usize,
    /// Fixed multiplier on attention scores before the softmax.
    pub attention_gain: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            embedding_dim: EMBEDDING_DIM,
            base_channels: 8,
            blocks: 4,
            kernel: 3,
            head: HeadKind::Dense,
            hidden: 128,
            sheet_downsample: 4,
            n_bins: 64,
            context: Context::Short,
            attention: false,
            attention_channels: 4,
            attention_hidden: 8,
            attention_kernel: 5,
            attention_gain: 10.0,
        }
    }
}

impl ArchConfig {
    pub fn for_variant(v: Variant) -> Self {
        Self { head: v.head, context: v.context, attention: v.attention, ..Self::default() }
    }

    pub fn variant(&self) -> Variant {
        Variant { head: self.head, context: self.context, attention: self.attention }
    }

    pub fn sheet_input_hw(&self) -> (usize, usize) {
        (SHEET_HEIGHT / self.sheet_downsample, SHEET_WIDTH / self.sheet_downsample)
    }

    pub fn audio_input_hw(&self) -> (usize, usize) {
        (self.n_bins, self.context.frames())
    }

    pub fn channels(&self, block: usize) -> usize {
        self.base_channels << block
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(Error::config(format!("embedding_dim must be {EMBEDDING_DIM}")));
        }
        if self.blocks == 0 || self.base_channels == 0 || self.hidden == 0 {
            return Err(Error::config("blocks, base_channels and hidden must be positive"));
        }
        if self.kernel % 2 == 0 || self.attention_kernel % 2 == 0 {
            return Err(Error::config("kernel sizes must be odd"));
        }
        if self.sheet_downsample == 0
            || SHEET_HEIGHT % self.sheet_downsample != 0
            || SHEET_WIDTH % self.sheet_downsample != 0
        {
            return Err(Error::config("sheet_downsample must divide the snippet size"));
        }
        if self.n_bins == 0 {
            return Err(Error::config("n_bins must be positive"));
        }
        if self.attention && (self.attention_channels == 0 || self.attention_hidden == 0) {
            return Err(Error::config("attention widths must be positive"));
        }
        if !(self.attention_gain > 0.0 && self.attention_gain.is_finite()) {
            return Err(Error::config("attention_gain must be positive"));
        }
        Ok(())
    }
}

/// Model variant as used in study tables: head kind, audio context and the
/// attention switch. Rendered as `<bl1|bl2>-<short|long>[-at]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Variant {
    pub head: HeadKind,
    pub context: Context,
    pub attention: bool,
}

impl Variant {
    pub const fn new(head: HeadKind, context: Context, attention: bool) -> Self {
        Self { head, context, attention }
    }

    pub fn tag(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.head {
            HeadKind::Pooled => "bl1",
            HeadKind::Dense => "bl2",
        };
        let ctx = match self.context {
            Context::Short => "short",
            Context::Long => "long",
        };
        write!(f, "{head}-{ctx}{}", if self.attention { "-at" } else { "" })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let head = match parts.first().copied() {
            Some("bl1") => HeadKind::Pooled,
            Some("bl2") => HeadKind::Dense,
            _ => return Err(Error::arg(format!("unknown variant '{s}'"))),
        };
        let context = match parts.get(1).copied() {
            Some("short") => Context::Short,
            Some("long") => Context::Long,
            _ => return Err(Error::arg(format!("unknown variant '{s}'"))),
        };
        let attention = match parts.get(2).copied() {
            None => false,
            Some("at") if parts.len() == 3 => true,
            _ => return Err(Error::arg(format!("unknown variant '{s}'"))),
        };
        Ok(Self { head, context, attention })
    }
}
