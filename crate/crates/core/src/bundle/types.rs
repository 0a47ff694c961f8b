use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Audio,
    Vision,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Vision];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Audio => "audio",
            Modality::Vision => "vision",
        }
    }

    pub fn short(self) -> char {
        match self {
            Modality::Text => 't',
            Modality::Audio => 'a',
            Modality::Vision => 'v',
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "text" | "t" => Ok(Modality::Text),
            "audio" | "acoustic" | "a" => Ok(Modality::Audio),
            "vision" | "visual" | "v" => Ok(Modality::Vision),
            other => Err(Error::Validation(format!(
                "unknown modality '{other}' (expected text, audio or vision)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "valid" | "val" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!(
                "unknown split '{other}' (expected train, valid or test)"
            ))),
        }
    }
}

/// Difficulty / condition tag used by the generalization test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceType {
    Easy,
    Common,
    Difficult,
    Noise,
    Missing,
}

impl InstanceType {
    pub const ALL: [InstanceType; 5] = [
        InstanceType::Easy,
        InstanceType::Common,
        InstanceType::Difficult,
        InstanceType::Noise,
        InstanceType::Missing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstanceType::Easy => "easy",
            InstanceType::Common => "common",
            InstanceType::Difficult => "difficult",
            InstanceType::Noise => "noise",
            InstanceType::Missing => "missing",
        }
    }

    /// Capitalized row label.
    pub fn title(self) -> &'static str {
        match self {
            InstanceType::Easy => "Easy",
            InstanceType::Common => "Common",
            InstanceType::Difficult => "Difficult",
            InstanceType::Noise => "Noise",
            InstanceType::Missing => "Missing",
        }
    }
}

impl fmt::Display for InstanceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstanceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        InstanceType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown instance_type '{s}' (expected easy, common, difficult, noise or missing)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "Films(TV)")]
    FilmsTv,
    #[serde(rename = "Variety Show")]
    VarietyShow,
    #[serde(rename = "Life(Vlog)")]
    LifeVlog,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::FilmsTv, Scenario::VarietyShow, Scenario::LifeVlog];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::FilmsTv => "Films(TV)",
            Scenario::VarietyShow => "Variety Show",
            Scenario::LifeVlog => "Life(Vlog)",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "filmstv" | "films" | "tv" => Ok(Scenario::FilmsTv),
            "varietyshow" | "variety" => Ok(Scenario::VarietyShow),
            "lifevlog" | "life" | "vlog" => Ok(Scenario::LifeVlog),
            _ => Err(Error::Validation(format!(
                "unknown scenario '{s}' (expected Films(TV), Variety Show or Life(Vlog))"
            ))),
        }
    }
}
