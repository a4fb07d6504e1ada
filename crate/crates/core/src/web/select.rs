use super::SearchCandidate;
use crate::gateway::Invocation;

/// Outcome of model-based candidate selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub chosen: Vec<SearchCandidate>,
    /// The model's answer was unusable and rank order was used instead.
    pub fallback: bool,
    pub reprompted: bool,
}

/// Parses a comma-separated list of 1-based candidate numbers, e.g. `2, 1`.
/// Repeated numbers keep their first position. Anything else, including an
/// out-of-range number, makes the whole reply unparseable.
pub fn parse_index_list(reply: &str, count: usize) -> Option<Vec<usize>> {
    let trimmed = reply.trim().trim_end_matches('.').trim();
    if trimmed.is_empty() {
        return None;
    }
    let mut out = Vec::new();
    for token in trimmed.split(',') {
        let token = token.trim();
        if token.is_empty() || !token.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let n: usize = token.parse().ok()?;
        if n == 0 || n > count {
            return None;
        }
        if !out.contains(&n) {
            out.push(n);
        }
    }
    Some(out)
}

fn prompt(candidates: &[SearchCandidate], sub_query: &str, top_n: usize, corrective: bool) -> String {
    let mut p = format!(
        "Select up to {top_n} of {} candidates for: {sub_query}\n",
        candidates.len()
    );
    p.push_str("Rank them by relevance, credibility and contextual fit. Reply only with candidate numbers, comma-separated, best first.\n");
    if corrective {
        p.push_str("Your previous reply could not be parsed. Reply in the form 2,1,3 and nothing else.\n");
    }
    for (i, c) in candidates.iter().enumerate() {
        let snippet: String = c.snippet.split_whitespace().collect::<Vec<_>>().join(" ");
        p.push_str(&format!("{}. {} | {} | {}\n", i + 1, c.title.trim(), c.url, snippet));
    }
    p
}

/// Picks at most `top_n` candidates with the model's ranking. The result is
/// always a subset of the input. When there are no more candidates than
/// slots, all are returned in provider order without a model call. An
/// unusable reply gets one corrective re-prompt, then provider rank order.
pub fn select_articles(
    candidates: &[SearchCandidate],
    sub_query: &str,
    top_n: usize,
    llm: &Invocation<'_>,
) -> Selection {
    let mut by_rank = candidates.to_vec();
    by_rank.sort_by_key(|c| c.source_rank);
    let top_n = top_n.max(1);
    if candidates.len() <= top_n {
        return Selection {
            chosen: by_rank,
            fallback: false,
            reprompted: false,
        };
    }
    for attempt in 0..2 {
        let reply = match llm.call(&prompt(candidates, sub_query, top_n, attempt > 0)) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("article selection failed: {e}; using rank order");
                break;
            }
        };
        if let Some(indices) = parse_index_list(&reply, candidates.len()) {
            return Selection {
                chosen: indices.into_iter().take(top_n).map(|i| candidates[i - 1].clone()).collect(),
                fallback: false,
                reprompted: attempt > 0,
            };
        }
    }
    by_rank.truncate(top_n);
    Selection {
        chosen: by_rank,
        fallback: true,
        reprompted: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::testing::scripted_gateway;
    use crate::stage::Stage;

    fn cands(n: usize) -> Vec<SearchCandidate> {
        (1..=n)
            .map(|i| SearchCandidate {
                url: format!("https://a{i}.gov.in"),
                title: format!("T{i}"),
                snippet: String::new(),
                source_rank: i,
            })
            .collect()
    }

    #[test]
    fn parser_contract() {
        assert_eq!(parse_index_list("2,1", 4), Some(vec![2, 1]));
        assert_eq!(parse_index_list(" 3, 1, 3. ", 4), Some(vec![3, 1]));
        assert_eq!(parse_index_list("5", 4), None);
        assert_eq!(parse_index_list("the best are 1 and 2", 4), None);
        assert_eq!(parse_index_list("", 4), None);
    }

    #[test]
    fn fewer_candidates_than_slots_returns_all() {
        let (gw, model) = scripted_gateway(vec![]);
        let llm = gw.invocation(&model, Stage::Retrieve, 0.1, 64);
        let s = select_articles(&cands(3), "q", 5, &llm);
        assert_eq!(s.chosen, cands(3));
        assert!(gw.calls().is_empty());
    }

    #[test]
    fn model_order_is_followed() {
        let (gw, model) = scripted_gateway(vec![Ok("2,1".into())]);
        let llm = gw.invocation(&model, Stage::Retrieve, 0.1, 64);
        let s = select_articles(&cands(4), "q", 2, &llm);
        let urls: Vec<&str> = s.chosen.iter().map(|c| c.url.as_str()).collect();
        assert_eq!(urls, ["https://a2.gov.in", "https://a1.gov.in"]);
        assert!(!s.fallback);
    }

    #[test]
    fn garbage_falls_back_to_rank_order_after_one_reprompt() {
        let (gw, model) = scripted_gateway(vec![Ok("no idea".into()), Ok("still no idea".into())]);
        let llm = gw.invocation(&model, Stage::Retrieve, 0.1, 64);
        let s = select_articles(&cands(7), "q", 5, &llm);
        assert_eq!(s.chosen, cands(5));
        assert!(s.fallback);
        assert_eq!(gw.calls().len(), 2);
    }

    #[test]
    fn reprompt_can_recover() {
        let (gw, model) = scripted_gateway(vec![Ok("hmm".into()), Ok("3".into())]);
        let llm = gw.invocation(&model, Stage::Retrieve, 0.1, 64);
        let s = select_articles(&cands(4), "q", 2, &llm);
        assert_eq!(s.chosen[0].source_rank, 3);
        assert!(s.reprompted && !s.fallback);
    }
}
