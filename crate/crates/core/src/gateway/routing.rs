use super::{ModelDescriptor, ScaleTag};
use crate::stage::Stage;
use crate::text::count_matches;

/// Chooses the synthesis model from the query's register.
///
/// Policy-register hits strictly above technical-register hits route to the
/// first large model; everything else, ties included, goes to the first
/// small model. Models able to serve synthesis are preferred; with a single
/// model that model is returned.
///
/// # Panics
///
/// If `models` is empty.
pub fn select_model<'a>(
    refined_query: &str,
    models: &'a [ModelDescriptor],
    technical_keywords: &[String],
    policy_keywords: &[String],
) -> &'a ModelDescriptor {
    assert!(!models.is_empty(), "select_model needs at least one model");
    let capable: Vec<&ModelDescriptor> = models.iter().filter(|m| m.serves(Stage::Synthesize)).collect();
    let pool: Vec<&ModelDescriptor> = if capable.is_empty() { models.iter().collect() } else { capable };
    let first = |tag: ScaleTag| pool.iter().copied().find(|m| m.scale_tag == tag);

    let technical = count_matches(refined_query, technical_keywords);
    let policy = count_matches(refined_query, policy_keywords);
    let preferred = if policy > technical { ScaleTag::Large } else { ScaleTag::Small };
    first(preferred)
        .or_else(|| first(ScaleTag::Small))
        .unwrap_or(pool[0])
}
