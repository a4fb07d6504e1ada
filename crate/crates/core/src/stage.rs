use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use url::Url;

/// The six pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Refine,
    Decompose,
    Retrieve,
    Enhance,
    Synthesize,
    Cite,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Refine,
        Stage::Decompose,
        Stage::Retrieve,
        Stage::Enhance,
        Stage::Synthesize,
        Stage::Cite,
    ];

    /// 1-based position in the pipeline.
    pub fn number(self) -> u8 {
        match self {
            Stage::Refine => 1,
            Stage::Decompose => 2,
            Stage::Retrieve => 3,
            Stage::Enhance => 4,
            Stage::Synthesize => 5,
            Stage::Cite => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Refine => "refine",
            Stage::Decompose => "decompose",
            Stage::Retrieve => "retrieve",
            Stage::Enhance => "enhance",
            Stage::Synthesize => "synthesize",
            Stage::Cite => "cite",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a provider lives: the built-in deterministic backend or an HTTP URL.
///
/// Serialized as the literal string `"mock"` or the URL text.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Mock,
    Http(Url),
}

impl Endpoint {
    pub fn is_mock(&self) -> bool {
        matches!(self, Endpoint::Mock)
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Mock => f.write_str("mock"),
            Endpoint::Http(url) => f.write_str(url.as_str()),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("mock") {
            return Ok(Endpoint::Mock);
        }
        let url = Url::parse(s).map_err(|e| format!("invalid endpoint `{s}`: {e}"))?;
        match url.scheme() {
            "http" | "https" => Ok(Endpoint::Http(url)),
            other => Err(format!("endpoint `{s}` has unsupported scheme `{other}`")),
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_parses_mock_and_urls() {
        assert_eq!("mock".parse::<Endpoint>().unwrap(), Endpoint::Mock);
        let ep: Endpoint = "http://localhost:11434/api/generate".parse().unwrap();
        assert_eq!(ep.to_string(), "http://localhost:11434/api/generate");
        assert!("ftp://x".parse::<Endpoint>().is_err());
        assert!("not a url".parse::<Endpoint>().is_err());
    }

    #[test]
    fn stage_numbers_follow_pipeline_order() {
        let numbers: Vec<u8> = Stage::ALL.iter().map(|s| s.number()).collect();
        assert_eq!(numbers, vec![1, 2, 3, 4, 5, 6]);
    }
}
