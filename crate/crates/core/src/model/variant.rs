use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed user signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// Interaction row `r_u`.
    R,
    /// Keyphrases the user mentioned.
    KPlus,
    /// Keyphrases the user never mentioned.
    KMinus,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::R, Modality::KPlus, Modality::KMinus];

    pub fn slot(self) -> usize {
        match self {
            Modality::R => 0,
            Modality::KPlus => 1,
            Modality::KMinus => 2,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Modality::R => "r",
            Modality::KPlus => "kplus",
            Modality::KMinus => "kminus",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::R => "r",
            Modality::KPlus => "k_plus",
            Modality::KMinus => "k_minus",
        })
    }
}

/// Which model of the family is trained.
///
/// | variant   | experts        | decoders       |
/// |-----------|----------------|----------------|
/// | `Mms`     | r, k⁺          | r, k⁺          |
/// | `Mms3`    | r, k⁺, k⁻      | r, k⁺, k⁻      |
/// | `MmsPlus` | r, k⁺, k⁻      | r, k⁺          |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    Mms,
    Mms3,
    MmsPlus,
}

use Modality::{KMinus, KPlus, R};

const MMS_TERMS: &[&[Modality]] = &[&[R, KPlus], &[R], &[KPlus]];
const MMS3_TERMS: &[&[Modality]] = &[&[R, KPlus, KMinus], &[R], &[KPlus], &[KMinus]];
const MMS_PLUS_TERMS: &[&[Modality]] = &[
    &[R, KPlus, KMinus],
    &[R],
    &[KPlus],
    &[R, KMinus],
    &[KPlus, KMinus],
];

impl ModelVariant {
    pub const ALL: [ModelVariant; 3] = [ModelVariant::Mms, ModelVariant::Mms3, ModelVariant::MmsPlus];

    pub fn experts(self) -> &'static [Modality] {
        match self {
            ModelVariant::Mms => &[R, KPlus],
            ModelVariant::Mms3 | ModelVariant::MmsPlus => &[R, KPlus, KMinus],
        }
    }

    pub fn decoders(self) -> &'static [Modality] {
        match self {
            ModelVariant::Mms | ModelVariant::MmsPlus => &[R, KPlus],
            ModelVariant::Mms3 => &[R, KPlus, KMinus],
        }
    }

    /// Observed-modality subsets whose ELBOs are summed per user in training.
    pub fn training_terms(self) -> &'static [&'static [Modality]] {
        match self {
            ModelVariant::Mms => MMS_TERMS,
            ModelVariant::Mms3 => MMS3_TERMS,
            ModelVariant::MmsPlus => MMS_PLUS_TERMS,
        }
    }

    pub fn has_expert(self, m: Modality) -> bool {
        self.experts().contains(&m)
    }

    pub fn has_decoder(self, m: Modality) -> bool {
        self.decoders().contains(&m)
    }

    pub fn check_expert(self, m: Modality) -> Result<()> {
        if self.has_expert(m) {
            Ok(())
        } else {
            Err(Error::UnsupportedModality {
                modality: m.to_string(),
                variant: self.to_string(),
            })
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Mms => "mms",
            ModelVariant::Mms3 => "mms3",
            ModelVariant::MmsPlus => "mmsplus",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mms" => Ok(ModelVariant::Mms),
            "mms3" => Ok(ModelVariant::Mms3),
            "mmsplus" | "mms+" | "mms_plus" => Ok(ModelVariant::MmsPlus),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}
