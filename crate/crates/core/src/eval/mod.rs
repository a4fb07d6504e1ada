//! Evaluation harness: composite scores, two-sample tests, effect sizes and
//! rater agreement over human-annotated score files.

pub mod special;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use special::{normal_two_sided_p, t_two_sided_p};

pub const ANSWER_SCALE_MAX: f64 = 4.0;
pub const CITATION_SCALE_MAX: f64 = 2.0;

/// Above this total sample size Mann-Whitney uses the normal approximation.
pub const MANN_WHITNEY_EXACT_MAX_N: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{what} = {value} is outside [{lo}, {hi}]")]
    OutOfRange { what: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("{0} needs at least {1} observations per group")]
    TooFewSamples(&'static str, usize),
    #[error("rating vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("effect size undefined: pooled standard deviation is zero")]
    UndefinedEffect,
    #[error("{path}:{line}: {message}")]
    ScoreFile { path: PathBuf, line: usize, message: String },
}

fn check_range(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), EvalError> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(EvalError::OutOfRange { what, value, lo, hi })
    }
}

/// λ·answer/4 + (1−λ)·citation/2; systems without citations score answer/4.
pub fn composite_score(answer: f64, citation: Option<f64>, lambda: f64) -> Result<f64, EvalError> {
    check_range("lambda", lambda, 0.0, 1.0)?;
    check_range("answer", answer, 0.0, ANSWER_SCALE_MAX)?;
    let a = answer / ANSWER_SCALE_MAX;
    match citation {
        None => Ok(a),
        Some(c) => {
            check_range("citation", c, 0.0, CITATION_SCALE_MAX)?;
            Ok(lambda * a + (1.0 - lambda) * c / CITATION_SCALE_MAX)
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn mean_delta(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::TooFewSamples("mean_delta", 1));
    }
    Ok(mean(a) - mean(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Zero standard error: equal means give t = 0, p = 1; otherwise t is
/// infinite with the sign of the difference and p = 0.
fn t_result(diff: f64, se: f64, df: f64) -> TTest {
    if se == 0.0 || !se.is_finite() {
        return if diff == 0.0 {
            TTest { t: 0.0, df, p: 1.0 }
        } else {
            TTest {
                t: f64::INFINITY.copysign(diff),
                df,
                p: 0.0,
            }
        };
    }
    let t = diff / se;
    TTest {
        t,
        df,
        p: t_two_sided_p(t, df),
    }
}

/// Pooled-variance two-sample t-test.
pub fn students_t(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples("students_t", 2));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(t_result(mean(a) - mean(b), se, df))
}

/// Unequal-variance t-test with Welch-Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples("welch_t", 2));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (variance(a) / na, variance(b) / nb);
    let se2 = qa + qb;
    let df = if se2 == 0.0 {
        na + nb - 2.0
    } else {
        se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
    };
    Ok(t_result(mean(a) - mean(b), se2.sqrt(), df))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MannWhitneyMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U for the first group.
    pub u: f64,
    /// Two-sided.
    pub p: f64,
    pub method: MannWhitneyMethod,
}

/// Midranks (1-based) of `values`, plus the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// Mann-Whitney U with midranks for ties.
///
/// With at most [`MANN_WHITNEY_EXACT_MAX_N`] observations in total the p-value
/// is exact, from the permutation distribution of the first group's rank sum
/// (ties included). Larger samples use the normal approximation with
/// tie-corrected variance and a 0.5 continuity correction. Fully tied data
/// gives p = 1.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::TooFewSamples("mann_whitney_u", 1));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&all);
    let ra: f64 = ranks[..na].iter().sum();
    let u = ra - (na * (na + 1)) as f64 / 2.0;
    let mu = (na * nb) as f64 / 2.0;
    if ties.len() == 1 {
        return Ok(MannWhitney {
            u,
            p: 1.0,
            method: if n <= MANN_WHITNEY_EXACT_MAX_N {
                MannWhitneyMethod::Exact
            } else {
                MannWhitneyMethod::NormalApprox
            },
        });
    }
    if n <= MANN_WHITNEY_EXACT_MAX_N {
        return Ok(MannWhitney {
            u,
            p: exact_p(&ranks, na, u - mu),
            method: MannWhitneyMethod::Exact,
        });
    }
    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let sigma = (naf * nbf / 12.0 * ((nf + 1.0) - tie_term)).sqrt();
    let dev = ((u - mu).abs() - 0.5).max(0.0);
    Ok(MannWhitney {
        u,
        p: normal_two_sided_p(dev / sigma),
        method: MannWhitneyMethod::NormalApprox,
    })
}

/// P(|U − μ| ≥ |observed|) over all C(n, na) group assignments. Ranks are
/// doubled so midranks stay integral.
fn exact_p(ranks: &[f64], na: usize, observed_dev: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0f64; max_sum + 1]; na + 1];
    counts[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=na).rev() {
            for s in (r..=max_sum).rev() {
                let add = counts[k - 1][s - r];
                if add != 0.0 {
                    counts[k][s] += add;
                }
            }
        }
    }
    let offset = (na * (na + 1)) as f64 / 2.0;
    let mu = (na * (ranks.len() - na)) as f64 / 2.0;
    let target = observed_dev.abs() - 1e-9;
    let (mut hit, mut total) = (0.0, 0.0);
    for (s, &c) in counts[na].iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        total += c;
        let u = s as f64 / 2.0 - offset;
        if (u - mu).abs() >= target {
            hit += c;
        }
    }
    (hit / total).min(1.0)
}

/// Standardized mean difference with the pooled standard deviation.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewSamples("cohens_d", 2));
    }
    cohens_d_from_summary(
        mean(a),
        variance(a).sqrt(),
        a.len(),
        mean(b),
        variance(b).sqrt(),
        b.len(),
    )
}

/// [`cohens_d`] from per-group mean, sample standard deviation and size.
pub fn cohens_d_from_summary(
    mean_a: f64,
    sd_a: f64,
    n_a: usize,
    mean_b: f64,
    sd_b: f64,
    n_b: usize,
) -> Result<f64, EvalError> {
    if n_a < 2 || n_b < 2 {
        return Err(EvalError::TooFewSamples("cohens_d", 2));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pooled = (((na - 1.0) * sd_a * sd_a + (nb - 1.0) * sd_b * sd_b) / (na + nb - 2.0)).sqrt();
    if pooled == 0.0 || !pooled.is_finite() {
        return Err(EvalError::UndefinedEffect);
    }
    Ok((mean_a - mean_b) / pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectClass {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectClass {
    pub fn name(self) -> &'static str {
        match self {
            EffectClass::Negligible => "negligible",
            EffectClass::Small => "small",
            EffectClass::Medium => "medium",
            EffectClass::Large => "large",
        }
    }
}

/// |d| < 0.2 negligible, < 0.5 small, < 0.8 medium, otherwise large.
pub fn classify_effect(d: f64) -> EffectClass {
    let d = d.abs();
    if d < 0.2 {
        EffectClass::Negligible
    } else if d < 0.5 {
        EffectClass::Small
    } else if d < 0.8 {
        EffectClass::Medium
    } else {
        EffectClass::Large
    }
}

/// Chance-corrected agreement between two raters. When chance agreement is
/// 1 (both raters constant and identical) kappa is defined as 1.
pub fn cohens_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::TooFewSamples("cohens_kappa", 1));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut ca: BTreeMap<&T, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&T, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let labels: BTreeSet<&T> = ca.keys().chain(cb.keys()).copied().collect();
    let expected: f64 = labels
        .iter()
        .map(|l| {
            let pa = *ca.get(l).unwrap_or(&0) as f64 / n;
            let pb = *cb.get(l).unwrap_or(&0) as f64 / n;
            pa * pb
        })
        .sum();
    if (1.0 - expected).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}

/// One annotated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSample {
    pub query_id: String,
    pub system: String,
    pub answer_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub citation_score: Option<f64>,
}

impl ScoreSample {
    pub fn validate(&self) -> Result<(), EvalError> {
        check_range("answer_score", self.answer_score, 0.0, ANSWER_SCALE_MAX)?;
        if let Some(c) = self.citation_score {
            check_range("citation_score", c, 0.0, CITATION_SCALE_MAX)?;
        }
        Ok(())
    }

    pub fn composite(&self, lambda: f64) -> Result<f64, EvalError> {
        composite_score(self.answer_score, self.citation_score, lambda)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSummary {
    pub name: String,
    pub n: usize,
    pub answer_mean: f64,
    pub answer_std: f64,
    /// Over the samples that carry a citation score; absent if none do.
    pub citation_mean: Option<f64>,
    pub citation_std: Option<f64>,
    pub composite_mean: f64,
    pub composite_std: f64,
    /// False when n < 2, in which case the standard deviations read 0.
    pub std_defined: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let std = if xs.len() >= 2 { variance(xs).sqrt() } else { 0.0 };
    (mean(xs), std)
}

/// Per-sample composites, then means and sample standard deviations.
pub fn summarize_run(name: &str, samples: &[ScoreSample], lambda: f64) -> Result<SystemSummary, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::TooFewSamples("summarize_run", 1));
    }
    let composites = samples
        .iter()
        .map(|s| s.composite(lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let answers: Vec<f64> = samples.iter().map(|s| s.answer_score).collect();
    let citations: Vec<f64> = samples.iter().filter_map(|s| s.citation_score).collect();
    let (answer_mean, answer_std) = mean_std(&answers);
    let (composite_mean, composite_std) = mean_std(&composites);
    let (citation_mean, citation_std) = if citations.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&citations);
        (Some(m), Some(s))
    };
    Ok(SystemSummary {
        name: name.to_string(),
        n: samples.len(),
        answer_mean,
        answer_std,
        citation_mean,
        citation_std,
        composite_mean,
        composite_std,
        std_defined: samples.len() >= 2,
    })
}

/// Samples grouped by system, systems in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub systems: Vec<(String, Vec<ScoreSample>)>,
}

impl ScoreSet {
    pub fn get(&self, system: &str) -> Option<&[ScoreSample]> {
        self.systems.iter().find(|(s, _)| s == system).map(|(_, v)| v.as_slice())
    }

    pub fn from_jsonl(text: &str, path: &Path) -> Result<Self, EvalError> {
        let mut set = ScoreSet::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| EvalError::ScoreFile {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let sample: ScoreSample = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            sample.validate().map_err(|e| err(e.to_string()))?;
            match set.systems.iter_mut().find(|(s, _)| *s == sample.system) {
                Some((_, v)) => v.push(sample),
                None => set.systems.push((sample.system.clone(), vec![sample])),
            }
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path).map_err(|e| EvalError::ScoreFile {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        Self::from_jsonl(&text, path)
    }
}

/// Two systems compared on per-query composite scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub delta_mean: f64,
    pub students: TTest,
    pub welch: TTest,
    pub mann_whitney: MannWhitney,
    /// Absent when the pooled standard deviation is zero.
    pub cohens_d: Option<f64>,
    pub effect: Option<EffectClass>,
}

pub fn compare(a_name: &str, a: &[f64], b_name: &str, b: &[f64]) -> Result<Comparison, EvalError> {
    let d = match cohens_d(a, b) {
        Ok(d) => Some(d),
        Err(EvalError::UndefinedEffect) => None,
        Err(e) => return Err(e),
    };
    Ok(Comparison {
        a: a_name.to_string(),
        b: b_name.to_string(),
        delta_mean: mean_delta(a, b)?,
        students: students_t(a, b)?,
        welch: welch_t(a, b)?,
        mann_whitney: mann_whitney_u(a, b)?,
        cohens_d: d,
        effect: d.map(classify_effect),
    })
}
