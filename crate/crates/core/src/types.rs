use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Dense 0-based ordinal of a user or a product within one graph.
pub type VertexId = u32;

/// One weighted, timestamped user -> product edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Recommendation {
    pub user: VertexId,
    pub product: VertexId,
    /// Seconds since the epoch.
    pub timestamp: u64,
    /// Rating; 0 is reserved as invalid.
    pub weight: u8,
}

impl Recommendation {
    pub fn new(user: VertexId, product: VertexId, timestamp: u64, weight: u8) -> Self {
        Self {
            user,
            product,
            timestamp,
            weight,
        }
    }
}

/// Which side of the rating threshold a lockstep lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Ratings at or below the threshold.
    Defamation,
    /// Ratings at or above the threshold.
    Promotion,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Defamation, Mode::Promotion];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Defamation => "defamation",
            Mode::Promotion => "promotion",
        }
    }

    /// Threshold used when none is given, for a 1-5 star scale.
    pub fn default_kappa(self) -> u8 {
        match self {
            Mode::Defamation => 2,
            Mode::Promotion => 4,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "defamation" => Ok(Mode::Defamation),
            "promotion" => Ok(Mode::Promotion),
            other => Err(format!(
                "unknown mode `{other}` (expected defamation or promotion)"
            )),
        }
    }
}
