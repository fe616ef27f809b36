//! Turning joint actions into rankings, and scoring ranking policies.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentnet::{select_actions, AgentNet, Observation};
use crate::datamodel::{Dataset, QueryDocSet};
use crate::error::{invalid, Result};
use crate::metrics::{self, Metric, MetricConfig, RankedList};

/// Per-document integer scores, each in `1..=|A|`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreVector(Vec<usize>);

impl ScoreVector {
    pub fn new(scores: Vec<usize>, actions: usize) -> Result<Self> {
        if let Some(s) = scores.iter().find(|&&s| s == 0 || s > actions) {
            return invalid(format!("score {s} outside the action space 1..={actions}"));
        }
        Ok(Self(scores))
    }

    pub fn scores(&self) -> &[usize] {
        &self.0
    }
}

/// Stable descending sort by score; equal scores keep ascending document order.
pub fn order_by_scores<S: PartialOrd + Copy>(scores: &[S]) -> RankedList {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    RankedList::new(idx).expect("sorted indices form a permutation")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub list: RankedList,
    pub scores: ScoreVector,
}

/// Ranks one query: per-document ε-greedy score choice, then sort.
pub fn rank<R: Rng + ?Sized>(qds: &QueryDocSet, net: &AgentNet, epsilon: f64, rng: &mut R) -> Result<Ranking> {
    let q = net.q_values(qds.query(), qds.docs())?;
    let actions = select_actions(&q, epsilon, rng)?;
    let list = order_by_scores(&actions);
    Ok(Ranking {
        list,
        scores: ScoreVector::new(actions, net.config().actions)?,
    })
}

/// Greedy (ε = 0) rankings for every query, computed in one batched pass.
pub fn greedy_rankings(net: &AgentNet, items: &[QueryDocSet]) -> Result<Vec<RankedList>> {
    let mut out = Vec::with_capacity(items.len());
    // Chunk to keep the tape small on large datasets.
    for chunk in items.chunks(64) {
        let obs: Vec<Observation<'_>> = chunk.iter().map(Observation::from).collect();
        for q in net.q_values_batch(&obs)? {
            let actions: Vec<usize> = (0..q.rows()).map(|i| crate::agentnet::greedy_action(q.row_slice(i))).collect();
            out.push(order_by_scores(&actions));
        }
    }
    Ok(out)
}

/// The six reported columns, in table order.
pub const COLUMNS: [(Metric, usize); 6] = [
    (Metric::AlphaNdcg, 5),
    (Metric::AlphaNdcg, 10),
    (Metric::ErrIa, 5),
    (Metric::ErrIa, 10),
    (Metric::SRecall, 5),
    (Metric::SRecall, 10),
];

pub fn column_name(metric: Metric, k: usize) -> String {
    let base = match metric {
        Metric::AlphaNdcg => "alpha_ndcg",
        Metric::ErrIa => "err_ia",
        Metric::SRecall => "s_recall",
    };
    format!("{base}@{k}")
}

/// Mean metrics of one ranking method over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub alpha_ndcg_5: f64,
    pub alpha_ndcg_10: f64,
    pub err_ia_5: f64,
    pub err_ia_10: f64,
    pub s_recall_5: f64,
    pub s_recall_10: f64,
    pub queries: usize,
    /// Queries whose judgments cover no subtopic; they count as 0.
    pub degenerate: usize,
}

impl MetricsRow {
    pub fn values(&self) -> [f64; 6] {
        [
            self.alpha_ndcg_5,
            self.alpha_ndcg_10,
            self.err_ia_5,
            self.err_ia_10,
            self.s_recall_5,
            self.s_recall_10,
        ]
    }
}

/// Scores precomputed rankings (one per dataset item). Cutoffs larger than
/// the list length are clamped to it.
pub fn score_rankings(
    method: &str,
    dataset: &Dataset,
    rankings: &[RankedList],
    config: &MetricConfig,
) -> Result<MetricsRow> {
    if dataset.is_empty() {
        return invalid("cannot evaluate on an empty dataset");
    }
    if rankings.len() != dataset.len() {
        return invalid(format!("{} rankings for {} queries", rankings.len(), dataset.len()));
    }
    let mut sums = [0.0; 6];
    let mut degenerate = 0;
    for (qds, r) in dataset.items().iter().zip(rankings) {
        let j = qds.judgments();
        if j.covered_subtopics() == 0 {
            degenerate += 1;
            continue;
        }
        for (slot, &(metric, k)) in sums.iter_mut().zip(COLUMNS.iter()) {
            let cfg = config.with_k(k.min(qds.num_docs()))?;
            *slot += metrics::evaluate(metric, r, j, &cfg)?;
        }
    }
    let n = dataset.len() as f64;
    let [a5, a10, e5, e10, s5, s10] = sums.map(|s| s / n);
    Ok(MetricsRow {
        method: method.to_string(),
        alpha_ndcg_5: a5,
        alpha_ndcg_10: a10,
        err_ia_5: e5,
        err_ia_10: e10,
        s_recall_5: s5,
        s_recall_10: s10,
        queries: dataset.len(),
        degenerate,
    })
}

/// Greedy policy evaluation over a dataset.
pub fn evaluate_policy(method: &str, dataset: &Dataset, net: &AgentNet, config: &MetricConfig) -> Result<MetricsRow> {
    let rankings = greedy_rankings(net, dataset.items())?;
    score_rankings(method, dataset, &rankings, config)
}

/// Mean α-NDCG at `config.k` of precomputed rankings.
pub fn mean_alpha_ndcg(dataset: &Dataset, rankings: &[RankedList], config: &MetricConfig) -> Result<f64> {
    if dataset.is_empty() || rankings.len() != dataset.len() {
        return invalid("mean_alpha_ndcg: rankings do not match dataset");
    }
    let mut total = 0.0;
    for (qds, r) in dataset.items().iter().zip(rankings) {
        let cfg = config.with_k(config.k().min(qds.num_docs()))?;
        total += metrics::alpha_ndcg(r, qds.judgments(), &cfg)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Rows of a comparison table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// One JSON object per row.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Column-aligned text with four decimals.
    pub fn to_text(&self) -> String {
        let headers: Vec<String> = COLUMNS.iter().map(|&(m, k)| column_name(m, k)).collect();
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max("method".len());
        let mut s = format!("{:<width$}", "method");
        for h in &headers {
            let _ = write!(s, "  {h:>13}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{:<width$}", r.method);
            for v in r.values() {
                let _ = write!(s, "  {v:>13.4}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::agentnet::AgentConfig;
    use crate::datamodel::Judgments;

    #[test]
    fn sort_examples() {
        assert_eq!(order_by_scores(&[3, 1, 2]).order(), &[0, 2, 1]);
        assert_eq!(order_by_scores(&[2, 2, 1]).order(), &[0, 1, 2]);
        assert_eq!(order_by_scores(&[1, 1, 1, 5]).order(), &[3, 0, 1, 2]);
    }

    #[test]
    fn score_vector_bounds() {
        assert!(ScoreVector::new(vec![1, 10], 10).is_ok());
        assert!(ScoreVector::new(vec![0, 3], 10).is_err());
        assert!(ScoreVector::new(vec![11], 10).is_err());
    }

    fn one_query() -> QueryDocSet {
        let j = Judgments::new(&[vec![1, 0], vec![1, 0], vec![0, 1]]).unwrap();
        QueryDocSet::new(
            "q1",
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]],
            j,
        )
        .unwrap()
    }

    #[test]
    fn greedy_rank_is_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = AgentNet::new(
            AgentConfig {
                embed_dim: 2,
                attn_dim: 4,
                heads: 2,
                hidden: vec![8],
                actions: 4,
                residual: false,
            },
            &mut rng,
        )
        .unwrap();
        let qds = one_query();
        let first = rank(&qds, &net, 0.0, &mut rng).unwrap();
        for _ in 0..100 {
            assert_eq!(rank(&qds, &net, 0.0, &mut rng).unwrap(), first);
        }
        assert_eq!(greedy_rankings(&net, &[qds]).unwrap()[0], first.list);
    }

    #[test]
    fn ideal_ranking_scores_one() {
        let ds = Dataset::new(vec![one_query()]).unwrap();
        let cfg = MetricConfig::new(0.5, 10).unwrap();
        let r = RankedList::new(vec![0, 2, 1]).unwrap();
        let row = score_rankings("ideal", &ds, &[r], &cfg).unwrap();
        assert_eq!(row.alpha_ndcg_5, 1.0);
        assert_eq!(row.alpha_ndcg_10, 1.0);
        assert_eq!(row.s_recall_10, 1.0);
        assert_eq!(row.degenerate, 0);
    }

    #[test]
    fn degenerate_queries_count_as_zero() {
        let zero = QueryDocSet::new(
            "q0",
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.5, 0.5]],
            Judgments::new(&[vec![0, 0], vec![0, 0], vec![0, 0]]).unwrap(),
        )
        .unwrap();
        let ds = Dataset::new(vec![one_query(), zero]).unwrap();
        let cfg = MetricConfig::new(0.5, 10).unwrap();
        let r = RankedList::new(vec![0, 2, 1]).unwrap();
        let row = score_rankings("x", &ds, &[r.clone(), r], &cfg).unwrap();
        assert_eq!(row.degenerate, 1);
        assert_eq!(row.alpha_ndcg_10, 0.5);
    }

    #[test]
    fn table_formats() {
        let row = MetricsRow {
            method: "random".into(),
            alpha_ndcg_5: 0.5,
            alpha_ndcg_10: 0.6,
            err_ia_5: 0.1,
            err_ia_10: 0.2,
            s_recall_5: 0.7,
            s_recall_10: 0.8,
            queries: 3,
            degenerate: 0,
        };
        let t = MetricsTable { rows: vec![row.clone()] };
        let back: MetricsRow = serde_json::from_str(t.to_jsonl().unwrap().trim()).unwrap();
        assert_eq!(back, row);
        let text = t.to_text();
        assert!(text.starts_with("method"));
        assert!(text.contains("alpha_ndcg@10"));
        assert!(text.lines().nth(1).unwrap().contains("0.6000"));
    }
}
