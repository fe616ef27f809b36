//! Non-learned ranking policies: MMR, xQuAD, uniform random and the
//! judgment-aware greedy oracle.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, QueryDocSet};
use crate::error::{invalid, Result};
use crate::metrics::{greedy_ideal_ranking, MetricConfig, RankedList};
use crate::ranker::mean_alpha_ndcg;

/// Relevance/diversity trade-off of the greedy rerankers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    lambda: f64,
}

impl GreedyConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return invalid(format!("lambda must lie in [0, 1], got {lambda}"));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Repeatedly moves the best-scoring remaining document to the output.
/// `score(candidate, selected)`; ties go to the lowest document index.
fn greedy_select(n: usize, mut score: impl FnMut(usize, &[usize]) -> f64) -> RankedList {
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut selected = Vec::with_capacity(n);
    while !remaining.is_empty() {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (pos, &d) in remaining.iter().enumerate() {
            let s = score(d, &selected);
            if s > best_score {
                best = pos;
                best_score = s;
            }
        }
        selected.push(remaining.remove(best));
    }
    RankedList::new(selected).expect("greedy selection yields a permutation")
}

/// Maximal marginal relevance: `λ·cos(q,d) − (1−λ)·max_{s∈S} cos(d,s)`.
/// The first document is chosen by relevance alone.
pub fn mmr_rank(qds: &QueryDocSet, config: &GreedyConfig) -> RankedList {
    let docs = qds.docs();
    let rel: Vec<f64> = docs.iter().map(|d| cosine(qds.query(), d)).collect();
    let lambda = config.lambda;
    greedy_select(docs.len(), |d, selected| {
        if selected.is_empty() {
            return rel[d];
        }
        let redundancy = selected
            .iter()
            .map(|&s| cosine(&docs[d], &docs[s]))
            .fold(f64::NEG_INFINITY, f64::max);
        lambda * rel[d] - (1.0 - lambda) * redundancy
    })
}

/// xQuAD with uniform subtopic weights and binary coverage:
/// `(1−λ)·cos(q,d) + λ·Σ_l (1/m)·J(d,l)·Π_{s∈S}(1 − J(s,l))`.
pub fn xquad_rank(qds: &QueryDocSet, config: &GreedyConfig) -> RankedList {
    let j = qds.judgments();
    let m = j.subtopics();
    let rel: Vec<f64> = qds.docs().iter().map(|d| cosine(qds.query(), d)).collect();
    let lambda = config.lambda;
    greedy_select(qds.num_docs(), |d, selected| {
        let mut div = 0.0;
        for l in 0..m {
            if j.covers(d, l) && !selected.iter().any(|&s| j.covers(s, l)) {
                div += 1.0 / m as f64;
            }
        }
        (1.0 - lambda) * rel[d] + lambda * div
    })
}

/// Uniform random permutation of `n` documents.
pub fn random_rank<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RankedList {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    RankedList::new(order).expect("shuffle yields a permutation")
}

/// Greedy marginal α-gain ranking from the gold judgments.
pub fn oracle_greedy_rank(qds: &QueryDocSet, config: &MetricConfig) -> RankedList {
    greedy_ideal_ranking(qds.judgments(), config.alpha())
}

/// The λ grid searched when tuning MMR and xQuAD.
pub const LAMBDA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// λ from [`LAMBDA_GRID`] maximizing mean α-NDCG at `config.k` on `dataset`
/// (ties to the smaller λ), with its score.
pub fn tune_lambda(
    dataset: &Dataset,
    config: &MetricConfig,
    rank: impl Fn(&QueryDocSet, &GreedyConfig) -> RankedList,
) -> Result<(GreedyConfig, f64)> {
    let mut best: Option<(GreedyConfig, f64)> = None;
    for &lambda in &LAMBDA_GRID {
        let g = GreedyConfig::new(lambda)?;
        let rankings: Vec<RankedList> = dataset.items().iter().map(|q| rank(q, &g)).collect();
        let score = mean_alpha_ndcg(dataset, &rankings, config)?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((g, score));
        }
    }
    best.ok_or_else(|| crate::Error::Invalid("empty lambda grid".into()))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::datamodel::Judgments;

    fn qds(query: Vec<f64>, docs: Vec<Vec<f64>>, rows: &[Vec<u8>]) -> QueryDocSet {
        QueryDocSet::new("q", query, docs, Judgments::new(rows).unwrap()).unwrap()
    }

    #[test]
    fn mmr_lambda_one_is_relevance_order() {
        let q = qds(
            vec![1.0, 0.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.1], vec![1.0, 1.0]],
            &[vec![0], vec![0], vec![0]],
        );
        assert_eq!(mmr_rank(&q, &GreedyConfig::new(1.0).unwrap()).order(), &[1, 2, 0]);
    }

    #[test]
    fn mmr_puts_duplicate_last() {
        // d0 and d1 identical and most relevant; d2 slightly less relevant.
        let q = qds(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.2], vec![1.0, 0.2], vec![1.0, -0.3]],
            &[vec![1], vec![1], vec![1]],
        );
        let r = mmr_rank(&q, &GreedyConfig::new(0.5).unwrap());
        assert_eq!(r.order(), &[0, 2, 1]);
        let single = qds(vec![1.0], vec![vec![2.0]], &[vec![1]]);
        assert_eq!(mmr_rank(&single, &GreedyConfig::default()).order(), &[0]);
    }

    #[test]
    fn xquad_without_judgments_is_relevance_order() {
        let q = qds(
            vec![1.0, 0.0],
            vec![vec![0.0, 1.0], vec![1.0, 0.1], vec![1.0, 1.0]],
            &[vec![0, 0], vec![0, 0], vec![0, 0]],
        );
        assert_eq!(xquad_rank(&q, &GreedyConfig::new(0.5).unwrap()).order(), &[1, 2, 0]);
    }

    #[test]
    fn xquad_hand_trace() {
        // A covers {1}, B covers {1,2}, C covers {2}; λ = 1 ignores relevance.
        let q = qds(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            &[vec![1, 0], vec![1, 1], vec![0, 1]],
        );
        assert_eq!(xquad_rank(&q, &GreedyConfig::new(1.0).unwrap()).order(), &[1, 0, 2]);
    }

    #[test]
    fn random_rank_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            *counts.entry(random_rank(3, &mut rng).order().to_vec()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / draws as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn oracle_small_case() {
        let q = qds(vec![1.0], vec![vec![1.0], vec![1.0]], &[vec![1], vec![0]]);
        let cfg = MetricConfig::new(0.5, 2).unwrap();
        assert_eq!(oracle_greedy_rank(&q, &cfg).order(), &[0, 1]);
    }

    #[test]
    fn lambda_bounds() {
        assert!(GreedyConfig::new(-0.1).is_err());
        assert!(GreedyConfig::new(1.1).is_err());
    }
}
