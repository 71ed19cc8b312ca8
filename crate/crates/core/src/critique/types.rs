use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelVariant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[serde(alias = "+")]
    Positive,
    #[serde(alias = "-")]
    Negative,
}

impl Polarity {
    pub fn symbol(self) -> &'static str {
        match self {
            Polarity::Positive => "+",
            Polarity::Negative => "-",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "pos" | "+" => Ok(Polarity::Positive),
            "negative" | "neg" | "-" => Ok(Polarity::Negative),
            other => Err(Error::Config(format!(
                "unknown polarity `{other}` (expected positive or negative)"
            ))),
        }
    }
}

/// A single keyphrase critiqued at turn `step` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub keyphrase: usize,
    pub polarity: Polarity,
    pub step: usize,
}

/// Which inference network embeds a critique.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CritiqueMode {
    /// Both polarities through the k⁺ encoder.
    Shared,
    /// Positive through k⁺, negative through k⁻.
    Split,
}

impl CritiqueMode {
    pub fn for_variant(variant: ModelVariant) -> Self {
        match variant {
            ModelVariant::Mms => CritiqueMode::Shared,
            ModelVariant::Mms3 | ModelVariant::MmsPlus => CritiqueMode::Split,
        }
    }
}

impl FromStr for CritiqueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(CritiqueMode::Shared),
            "split" => Ok(CritiqueMode::Split),
            other => Err(Error::Config(format!("unknown critique mode `{other}`"))),
        }
    }
}
