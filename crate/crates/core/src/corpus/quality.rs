use serde::{Deserialize, Serialize};

use crate::text::count_matches;
use crate::web::ContentKind;

pub const LENGTH_WEIGHT: f64 = 0.20;
pub const RELEVANCE_WEIGHT: f64 = 0.30;
pub const REGIONAL_WEIGHT: f64 = 0.20;
pub const RICHNESS_WEIGHT: f64 = 0.20;
pub const PDF_WEIGHT: f64 = 0.10;

/// Five components in [0, 1] and their fixed weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    #[serde(rename = "length")]
    pub length_component: f64,
    #[serde(rename = "relevance")]
    pub relevance_component: f64,
    #[serde(rename = "regional")]
    pub regional_component: f64,
    #[serde(rename = "richness")]
    pub richness_component: f64,
    #[serde(rename = "pdf")]
    pub pdf_component: f64,
    pub total: f64,
}

impl QualityScore {
    /// Components are clamped to [0, 1] before weighting.
    pub fn from_components(length: f64, relevance: f64, regional: f64, richness: f64, pdf: f64) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        let (length, relevance, regional, richness, pdf) = (c(length), c(relevance), c(regional), c(richness), c(pdf));
        let total = LENGTH_WEIGHT * length
            + RELEVANCE_WEIGHT * relevance
            + REGIONAL_WEIGHT * regional
            + RICHNESS_WEIGHT * richness
            + PDF_WEIGHT * pdf;
        Self {
            length_component: length,
            relevance_component: relevance,
            regional_component: regional,
            richness_component: richness,
            pdf_component: pdf,
            total: total.clamp(0.0, 1.0),
        }
    }
}

/// Keyword lists and saturation points behind the component heuristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityHeuristics {
    pub length_saturation_chars: usize,
    pub agriculture_keywords: Vec<String>,
    pub relevance_cap: usize,
    pub regional_keywords: Vec<String>,
    pub regional_cap: usize,
    pub richness_saturation: usize,
}

impl Default for QualityHeuristics {
    fn default() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Self {
            length_saturation_chars: 5000,
            agriculture_keywords: list(&[
                "agriculture", "agricultural", "crop", "crops", "farmer", "farmers", "farming",
                "soil", "irrigation", "fertilizer", "yield", "harvest", "seed", "seeds",
                "pesticide", "rice", "wheat", "paddy", "livestock", "horticulture", "msp",
                "procurement", "kharif", "rabi", "organic", "agronomy", "drought", "monsoon",
                "sowing", "cultivation", "extension", "agri",
            ]),
            relevance_cap: 20,
            regional_keywords: list(&[
                "india", "indian", "punjab", "haryana", "maharashtra", "kerala", "bihar",
                "odisha", "west bengal", "tamil nadu", "uttar pradesh", "icar", "nabard",
                "krishi", "kisan", "rupee", "lakh", "crore", "district", "mandi",
                "gram panchayat", "state government",
            ]),
            regional_cap: 10,
            richness_saturation: 50,
        }
    }
}

impl QualityHeuristics {
    pub fn validate(&self) -> Result<(), String> {
        if self.length_saturation_chars == 0 || self.relevance_cap == 0 || self.regional_cap == 0 {
            return Err("saturation points and caps must be positive".into());
        }
        if self.richness_saturation == 0 {
            return Err("richness_saturation must be positive".into());
        }
        Ok(())
    }
}

/// Whitespace tokens containing a digit plus lines that look like table rows
/// (two or more `|` or tab separators).
fn richness_count(content: &str) -> usize {
    let numeric = content
        .split_whitespace()
        .filter(|t| t.chars().any(|c| c.is_ascii_digit()))
        .count();
    let table_rows = content
        .lines()
        .filter(|l| l.matches('|').count() >= 2 || l.matches('\t').count() >= 2)
        .count();
    numeric + table_rows
}

pub fn score_quality(content: &str, kind: ContentKind, h: &QualityHeuristics) -> QualityScore {
    let chars = content.chars().count() as f64;
    let length = (chars / h.length_saturation_chars as f64).min(1.0);
    let relevance = count_matches(content, &h.agriculture_keywords).min(h.relevance_cap) as f64
        / h.relevance_cap as f64;
    let regional =
        count_matches(content, &h.regional_keywords).min(h.regional_cap) as f64 / h.regional_cap as f64;
    let richness = (richness_count(content) as f64 / h.richness_saturation as f64).min(1.0);
    let pdf = match kind {
        ContentKind::PdfText | ContentKind::PdfOcr => 1.0,
        ContentKind::Html => 0.0,
    };
    QualityScore::from_components(length, relevance, regional, richness, pdf)
}
