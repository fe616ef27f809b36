//! Subtopic-aware diversity metrics: α-NDCG, ERR-IA and S-recall.
//!
//! Conventions shared by all metrics:
//! - positions are 1-based (`r = 1` is the top of the list);
//! - the novelty count `c` of subtopic `l` at position `r` counts the
//!   documents covering `l` at positions strictly above `r`;
//! - a cutoff `k` truncates the sum after position `k`.

use serde::{Deserialize, Serialize};

use crate::datamodel::Judgments;
use crate::error::{invalid, Result};

/// Largest document count accepted by the exhaustive evaluators.
pub const MAX_BRUTE_FORCE_DOCS: usize = 8;

/// Novelty parameter and cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    alpha: f64,
    k: usize,
}

impl MetricConfig {
    pub const DEFAULT_ALPHA: f64 = 0.5;

    pub fn new(alpha: f64, k: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {alpha}"));
        }
        if k == 0 {
            return invalid("cutoff k must be at least 1");
        }
        Ok(Self { alpha, k })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        Self::new(self.alpha, k)
    }

    fn check(&self, j: &Judgments) -> Result<()> {
        if self.k > j.docs() {
            return invalid(format!("cutoff k={} exceeds document count n={}", self.k, j.docs()));
        }
        Ok(())
    }
}

/// A permutation of document indices, best first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RankedList(Vec<usize>);

impl RankedList {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &d in &order {
            if d >= order.len() || seen[d] {
                return invalid(format!("{order:?} is not a permutation of 0..{}", order.len()));
            }
            seen[d] = true;
        }
        Ok(Self(order))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based rank of every document.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.0.len()];
        for (pos, &d) in self.0.iter().enumerate() {
            r[d] = pos + 1;
        }
        r
    }

    fn check(&self, j: &Judgments) -> Result<()> {
        if self.0.len() != j.docs() {
            return invalid(format!(
                "ranking has {} documents, judgments have {}",
                self.0.len(),
                j.docs()
            ));
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for RankedList {
    type Error = crate::error::Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<RankedList> for Vec<usize> {
    fn from(r: RankedList) -> Self {
        r.0
    }
}

/// Which metric an exhaustive search maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AlphaNdcg,
    ErrIa,
    SRecall,
}

fn discount(rank: usize) -> f64 {
    1.0 / (1.0 + rank as f64).log2()
}

/// Running α-DCG state: per-subtopic coverage counts so far.
#[derive(Debug, Clone)]
pub struct AlphaGain {
    decay: f64,
    counts: Vec<u32>,
    position: usize,
    total: f64,
}

impl AlphaGain {
    pub fn new(subtopics: usize, alpha: f64) -> Self {
        Self {
            decay: 1.0 - alpha,
            counts: vec![0; subtopics],
            position: 0,
            total: 0.0,
        }
    }

    /// Undiscounted novelty gain of appending `doc` next.
    pub fn marginal(&self, j: &Judgments, doc: usize) -> f64 {
        j.row(doc)
            .iter()
            .zip(&self.counts)
            .filter(|(&y, _)| y == 1)
            .map(|(_, &c)| self.decay.powi(c as i32))
            .sum()
    }

    pub fn push(&mut self, j: &Judgments, doc: usize) {
        self.position += 1;
        self.total += self.marginal(j, doc) * discount(self.position);
        for (c, &y) in self.counts.iter_mut().zip(j.row(doc)) {
            *c += u32::from(y);
        }
    }

    pub fn value(&self) -> f64 {
        self.total
    }
}

/// α-DCG of the top `k` positions of `ranking`.
pub fn alpha_dcg(ranking: &RankedList, j: &Judgments, config: &MetricConfig) -> Result<f64> {
    ranking.check(j)?;
    config.check(j)?;
    let mut acc = AlphaGain::new(j.subtopics(), config.alpha);
    for &d in &ranking.order()[..config.k] {
        acc.push(j, d);
    }
    Ok(acc.value())
}

/// Ranking built by repeatedly appending the document with the largest
/// marginal α-gain (ties go to the lowest document index).
pub fn greedy_ideal_ranking(j: &Judgments, alpha: f64) -> RankedList {
    let n = j.docs();
    let mut acc = AlphaGain::new(j.subtopics(), alpha);
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut order = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let mut best = 0;
        let mut best_gain = f64::NEG_INFINITY;
        for (slot, &d) in remaining.iter().enumerate() {
            let g = acc.marginal(j, d);
            if g > best_gain {
                best_gain = g;
                best = slot;
            }
        }
        let d = remaining.remove(best);
        acc.push(j, d);
        order.push(d);
    }
    RankedList(order)
}

/// Normalizer for α-NDCG: α-DCG@k of the greedy ideal ranking.
pub fn ideal_alpha_dcg(j: &Judgments, config: &MetricConfig) -> Result<f64> {
    config.check(j)?;
    alpha_dcg(&greedy_ideal_ranking(j, config.alpha), j, config)
}

/// True maximum of α-DCG@k over all permutations (`n <= 8`).
pub fn exhaustive_ideal_alpha_dcg(j: &Judgments, config: &MetricConfig) -> Result<f64> {
    let (_, dcg) = best_permutation(j, |r| alpha_dcg(r, j, config))?;
    Ok(dcg)
}

/// α-DCG@k normalized by the greedy ideal.
///
/// Queries without any covered subtopic score 0. A ranking can beat the
/// greedy normalizer on rare instances; the ratio is then clamped to 1.
pub fn alpha_ndcg(ranking: &RankedList, j: &Judgments, config: &MetricConfig) -> Result<f64> {
    let dcg = alpha_dcg(ranking, j, config)?;
    let ideal = ideal_alpha_dcg(j, config)?;
    if ideal <= 0.0 {
        log::warn!("alpha-NDCG on a query without covered subtopics; scoring 0");
        return Ok(0.0);
    }
    let v = dcg / ideal;
    if v > 1.0 {
        log::debug!("alpha-NDCG {v} exceeds the greedy ideal; clamped to 1");
        return Ok(1.0);
    }
    Ok(v)
}

/// Intent-aware expected reciprocal rank over binary judgments.
pub fn err_ia(ranking: &RankedList, j: &Judgments, config: &MetricConfig) -> Result<f64> {
    ranking.check(j)?;
    config.check(j)?;
    let m = j.subtopics();
    let mut counts = vec![0i32; m];
    let mut total = 0.0;
    for (pos, &d) in ranking.order()[..config.k].iter().enumerate() {
        let mut gain = 0.0;
        for (c, &y) in counts.iter_mut().zip(j.row(d)) {
            if y == 1 {
                gain += 0.5f64.powi(*c + 1);
                *c += 1;
            }
        }
        total += gain / (m as f64 * (pos + 1) as f64);
    }
    Ok(total)
}

/// Fraction of the query's covered subtopics that appear in the top `k`.
pub fn s_recall(ranking: &RankedList, j: &Judgments, k: usize) -> Result<f64> {
    ranking.check(j)?;
    if k == 0 || k > j.docs() {
        return invalid(format!("cutoff k={k} must lie in 1..={}", j.docs()));
    }
    let denom = j.covered_subtopics();
    if denom == 0 {
        log::warn!("S-recall on a query without covered subtopics; scoring 0");
        return Ok(0.0);
    }
    let top = &ranking.order()[..k];
    let hit = (0..j.subtopics())
        .filter(|&l| top.iter().any(|&d| j.covers(d, l)))
        .count();
    Ok(hit as f64 / denom as f64)
}

/// Evaluates `metric` for one ranking.
pub fn evaluate(metric: Metric, ranking: &RankedList, j: &Judgments, config: &MetricConfig) -> Result<f64> {
    match metric {
        Metric::AlphaNdcg => alpha_ndcg(ranking, j, config),
        Metric::ErrIa => err_ia(ranking, j, config),
        Metric::SRecall => s_recall(ranking, j, config.k),
    }
}

/// Exact maximizer of `metric` by enumerating all `n!` permutations.
///
/// Permutations are visited in lexicographic order and only a strictly
/// larger value (by more than 1e-12) replaces the incumbent, so the
/// lexicographically smallest maximizer is returned.
pub fn brute_force_best(j: &Judgments, config: &MetricConfig, metric: Metric) -> Result<(RankedList, f64)> {
    config.check(j)?;
    best_permutation(j, |r| evaluate(metric, r, j, config))
}

fn best_permutation(j: &Judgments, mut f: impl FnMut(&RankedList) -> Result<f64>) -> Result<(RankedList, f64)> {
    let n = j.docs();
    if n > MAX_BRUTE_FORCE_DOCS {
        return invalid(format!(
            "exhaustive search over {n}! permutations refused (limit n <= {MAX_BRUTE_FORCE_DOCS})"
        ));
    }
    let mut perm = RankedList::identity(n);
    let mut best = (perm.clone(), f(&perm)?);
    while next_permutation(&mut perm.0) {
        let v = f(&perm)?;
        if v > best.1 + 1e-12 {
            best = (perm.clone(), v);
        }
    }
    Ok(best)
}

/// Advances `v` to the next permutation in lexicographic order; returns
/// false (leaving `v` sorted descending) after the last one.
pub fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut k = n - 1;
    while v[k] <= v[i - 1] {
        k -= 1;
    }
    v.swap(i - 1, k);
    v[i..].reverse();
    true
}
