use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::conv_output_len;
use crate::pixcon::PartitionStrategy;

/// The three compared architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Single CNN head, no pixel weights, no target-day input.
    Singlehead,
    /// Single head plus the target day's precipitation in the final layers.
    SingleheadPlusP,
    /// Pixel weights, `H` parallel heads, target-day precipitation.
    MultiheadPlusP,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Singlehead, Variant::SingleheadPlusP, Variant::MultiheadPlusP];

    pub fn uses_target_precip(self) -> bool {
        !matches!(self, Variant::Singlehead)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Singlehead => "singlehead",
            Variant::SingleheadPlusP => "singlehead_plus_p",
            Variant::MultiheadPlusP => "multihead_plus_p",
        }
    }

    /// Display label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Singlehead => "Singlehead",
            Variant::SingleheadPlusP => "Singlehead(+P)",
            Variant::MultiheadPlusP => "Distributed-Multihead(+P)",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "singlehead" => Ok(Variant::Singlehead),
            "singlehead_plus_p" => Ok(Variant::SingleheadPlusP),
            "multihead_plus_p" => Ok(Variant::MultiheadPlusP),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerConfig {
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
}

fn one() -> usize {
    1
}

impl ConvLayerConfig {
    pub fn new(out_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            kernel,
            stride: 1,
        }
    }
}

pub const DEFAULT_MULTIHEAD_HEADS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub heads: usize,
    pub conv_layers: Vec<ConvLayerConfig>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Hidden widths of the dense stack; a final width-1 layer is always appended.
    pub dense_hidden: Vec<usize>,
    pub lookback: usize,
    pub use_pixcon: bool,
    /// Distance scale for the Pix-Con prior; `None` uses the median distance.
    pub pixcon_tau: Option<f64>,
    pub partition_strategy: PartitionStrategy,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Variant::MultiheadPlusP)
    }
}

impl ModelConfig {
    /// Default architecture for `variant`: two conv layers per head (8 then 16
    /// channels, kernel 5), LSTM 32 × 1, dense 32 → 1, 30-day lookback.
    pub fn new(variant: Variant) -> Self {
        let multi = variant == Variant::MultiheadPlusP;
        Self {
            variant,
            heads: if multi { DEFAULT_MULTIHEAD_HEADS } else { 1 },
            conv_layers: vec![ConvLayerConfig::new(8, 5), ConvLayerConfig::new(16, 5)],
            lstm_hidden: 32,
            lstm_layers: 1,
            dense_hidden: vec![32],
            lookback: 30,
            use_pixcon: multi,
            pixcon_tau: None,
            partition_strategy: PartitionStrategy::DistanceQuantile,
            seed: 0,
        }
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lookback(mut self, lookback: usize) -> Self {
        self.lookback = lookback;
        self
    }

    /// Re-targets an architecture template at another variant, fixing the
    /// head count and Pix-Con flag the variant requires.
    pub fn for_variant(&self, variant: Variant) -> Self {
        let mut c = self.clone();
        c.variant = variant;
        match variant {
            Variant::Singlehead | Variant::SingleheadPlusP => {
                c.heads = 1;
                c.use_pixcon = false;
            }
            Variant::MultiheadPlusP => c.use_pixcon = true,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.variant {
            Variant::Singlehead | Variant::SingleheadPlusP if self.heads != 1 || self.use_pixcon => {
                return bad(format!("{} requires heads = 1 and no Pix-Con block", self.variant));
            }
            Variant::MultiheadPlusP if !self.use_pixcon => return bad("multihead_plus_p requires the Pix-Con block".into()),
            _ => {}
        }
        if self.heads == 0 {
            return bad("heads must be >= 1".into());
        }
        if self.conv_layers.is_empty() {
            return bad("at least one conv layer per head".into());
        }
        if self.conv_layers.iter().any(|c| c.out_channels == 0 || c.kernel == 0 || c.stride == 0) {
            return bad("conv layers need out_channels, kernel, stride >= 1".into());
        }
        if self.lstm_hidden == 0 || self.lstm_layers == 0 || self.dense_hidden.contains(&0) {
            return bad("lstm and dense sizes must be >= 1".into());
        }
        if let Some(tau) = self.pixcon_tau {
            if !(tau > 0.0) {
                return bad(format!("pixcon_tau must be > 0, got {tau}"));
            }
        }
        self.temporal_len().map(|_| ())
    }

    /// Sequence length reaching the LSTM after all conv layers.
    pub fn temporal_len(&self) -> Result<usize> {
        let mut len = self.lookback;
        for (i, c) in self.conv_layers.iter().enumerate() {
            len = conv_output_len(len, c.kernel, c.stride).ok_or_else(|| Error::WindowTooLong {
                context: format!("conv layer {i} (lookback {})", self.lookback),
                kernel: c.kernel,
                len,
            })?;
        }
        Ok(len)
    }

    /// Channels fed to the LSTM (head outputs concatenated).
    pub fn lstm_input(&self) -> usize {
        self.heads * self.conv_layers.last().map_or(0, |c| c.out_channels)
    }
}
