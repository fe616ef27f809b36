//! Sequential policy-gradient baseline.
//!
//! A ranking is built one position at a time: an MLP scores every remaining
//! document from `[q, d, mean of already selected documents]`, a softmax
//! over those scores gives the selection probabilities, and the whole
//! episode is reinforced with the α-NDCG of the finished list. Per-position
//! α-DCG increments with no discount telescope to that same return.

use std::time::Instant;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ranking_reward, LOG_CUTOFF};
use crate::agentnet::Dense;
use crate::datamodel::{Dataset, QueryDocSet};
use crate::diffcore::{Checkpoint, Graph, Optimizer, OptimizerConfig, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::metrics::{MetricConfig, RankedList};
use crate::ranker::mean_alpha_ndcg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReinforceConfig {
    /// Passes over the training queries, one episode per query each.
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub reward_k: usize,
    pub alpha: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub stop_at: Option<f64>,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            hidden: vec![128, 128],
            optimizer: OptimizerConfig::default(),
            reward_k: 10,
            alpha: MetricConfig::DEFAULT_ALPHA,
            eval_every: 1,
            seed: 0,
            stop_at: None,
        }
    }
}

impl ReinforceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.eval_every == 0 {
            return invalid("reinforce: epochs and eval_every must be positive");
        }
        if self.hidden.contains(&0) {
            return invalid("reinforce: hidden widths must be positive");
        }
        MetricConfig::new(self.alpha, self.reward_k)?;
        Ok(())
    }
}

/// Scores candidate documents given what has been selected so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialPolicy {
    embed_dim: usize,
    layers: Vec<Dense>,
}

impl SequentialPolicy {
    pub fn new<R: Rng + ?Sized>(embed_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if embed_dim == 0 {
            return invalid("policy embedding dimension must be positive");
        }
        let mut widths = vec![3 * embed_dim];
        widths.extend(hidden);
        widths.push(1);
        let layers = widths.windows(2).map(|w| Dense::init(rng, w[0], w[1])).collect();
        Ok(Self { embed_dim, layers })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("policy.mlp{i}.weight"), format!("policy.mlp{i}.bias")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tensors = self
            .names()
            .into_iter()
            .zip(self.layers.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]))
            .collect();
        Checkpoint {
            meta: serde_json::json!({ "policy": "sequential", "embed_dim": self.embed_dim }).to_string(),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Checkpoint(format!("unreadable policy metadata: {e}")))?;
        if meta["policy"] != "sequential" {
            return Err(Error::Checkpoint("not a sequential policy checkpoint".into()));
        }
        let embed_dim = meta["embed_dim"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("policy metadata lacks embed_dim".into()))? as usize;
        if ckpt.tensors.is_empty() || !ckpt.tensors.len().is_multiple_of(2) {
            return Err(Error::Checkpoint("policy checkpoint needs weight/bias pairs".into()));
        }
        let mut layers = Vec::with_capacity(ckpt.tensors.len() / 2);
        let mut width = 3 * embed_dim;
        for (i, pair) in ckpt.tensors.chunks(2).enumerate() {
            let (w, b) = (&pair[0], &pair[1]);
            if w.0 != format!("policy.mlp{i}.weight") || b.0 != format!("policy.mlp{i}.bias") {
                return Err(Error::Checkpoint(format!("unexpected tensors `{}`, `{}`", w.0, b.0)));
            }
            let out = w.1.cols();
            if w.1.shape() != [width, out] || b.1.shape() != [1, out] {
                return Err(Error::Checkpoint(format!("layer {i} has inconsistent shapes")));
            }
            width = out;
            layers.push(Dense {
                weight: w.1.clone(),
                bias: b.1.clone(),
            });
        }
        if width != 1 {
            return Err(Error::Checkpoint("policy must output one score per document".into()));
        }
        Ok(Self { embed_dim, layers })
    }

    fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.layers
            .iter()
            .flat_map(|l| [g.param(l.weight.clone()), g.param(l.bias.clone())])
            .collect()
    }

    /// Feature rows `[q, d, mean(selected)]` for the remaining documents.
    fn features(qds: &QueryDocSet, selected: &[usize], remaining: &[usize]) -> Result<Tensor> {
        let l = qds.embed_dim();
        let mut context = vec![0.0; l];
        if !selected.is_empty() {
            for &s in selected {
                for (c, v) in context.iter_mut().zip(&qds.docs()[s]) {
                    *c += v;
                }
            }
            let inv = 1.0 / selected.len() as f64;
            context.iter_mut().for_each(|c| *c *= inv);
        }
        let mut data = Vec::with_capacity(remaining.len() * 3 * l);
        for &d in remaining {
            data.extend_from_slice(qds.query());
            data.extend_from_slice(&qds.docs()[d]);
            data.extend_from_slice(&context);
        }
        Tensor::new(vec![remaining.len(), 3 * l], data)
    }

    /// Candidate scores as a `[1, remaining]` row.
    fn scores(&self, g: &mut Graph, vars: &[Var], features: Tensor) -> Result<Var> {
        let mut h = g.input(features);
        for i in 0..self.layers.len() {
            h = g.matmul(h, vars[2 * i])?;
            h = g.add(h, vars[2 * i + 1])?;
            if i + 1 < self.layers.len() {
                h = g.relu(h)?;
            }
        }
        g.transpose(h)
    }

    fn check(&self, qds: &QueryDocSet) -> Result<()> {
        if qds.embed_dim() != self.embed_dim {
            return Err(Error::Shape {
                op: "policy input",
                lhs: vec![qds.embed_dim()],
                rhs: vec![self.embed_dim],
            });
        }
        Ok(())
    }

    /// Deterministic ranking: highest-scoring remaining document at each step
    /// (ties to the lowest index).
    pub fn greedy_rank(&self, qds: &QueryDocSet) -> Result<RankedList> {
        self.check(qds)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let mut remaining: Vec<usize> = (0..qds.num_docs()).collect();
        let mut selected = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let s = self.scores(&mut g, &vars, Self::features(qds, &selected, &remaining)?)?;
            let row = g.value(s).data();
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            selected.push(remaining.remove(best));
        }
        RankedList::new(selected)
    }

    /// Samples one episode and returns the sampled ranking together with the
    /// graph holding `Σ_t log π(a_t | s_t)`.
    fn sample_episode<R: Rng + ?Sized>(&self, qds: &QueryDocSet, rng: &mut R) -> Result<(RankedList, Graph, Var, Vec<Var>)> {
        self.check(qds)?;
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let mut remaining: Vec<usize> = (0..qds.num_docs()).collect();
        let mut selected = Vec::with_capacity(remaining.len());
        let mut log_probs = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let s = self.scores(&mut g, &vars, Self::features(qds, &selected, &remaining)?)?;
            let lp = g.log_softmax(s)?;
            let probs: Vec<f64> = g.value(lp).data().iter().map(|x| x.exp()).collect();
            let pick = WeightedIndex::new(&probs)
                .map_err(|e| Error::NonFinite(format!("selection probabilities: {e}")))?
                .sample(rng);
            log_probs.push(g.gather(lp, &[pick])?);
            selected.push(remaining.remove(pick));
        }
        let stacked = if log_probs.len() == 1 { log_probs[0] } else { g.concat(&log_probs, 0)? };
        let total = g.sum(stacked)?;
        Ok((RankedList::new(selected)?, g, total, vars))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforceRecord {
    pub epoch: usize,
    pub episodes: u64,
    /// Policy decisions taken (one per selected position).
    pub decisions: u64,
    pub wall_seconds: f64,
    pub mean_return: Option<f64>,
    pub train_alpha_ndcg: f64,
}

#[derive(Debug, Clone)]
pub struct ReinforceOutcome {
    pub policy: SequentialPolicy,
    pub log: Vec<ReinforceRecord>,
    pub episodes_to_threshold: Option<u64>,
}

/// Greedy mean α-NDCG@10 of a sequential policy.
pub fn policy_mean_alpha_ndcg(policy: &SequentialPolicy, dataset: &Dataset, alpha: f64) -> Result<f64> {
    let rankings = dataset
        .items()
        .iter()
        .map(|q| policy.greedy_rank(q))
        .collect::<Result<Vec<_>>>()?;
    mean_alpha_ndcg(dataset, &rankings, &MetricConfig::new(alpha, LOG_CUTOFF)?)
}

/// One update per episode with loss `-G Σ_t log π(a_t | s_t)`.
pub fn reinforce_train(train: &Dataset, config: &ReinforceConfig) -> Result<ReinforceOutcome> {
    config.validate()?;
    if train.is_empty() {
        return invalid("reinforce: empty training set");
    }
    let start = Instant::now();
    let metric = MetricConfig::new(config.alpha, config.reward_k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = SequentialPolicy::new(train.embed_dim(), &config.hidden, &mut rng)?;
    let mut optimizer = Optimizer::new(config.optimizer)?;
    let names = policy.names();

    let initial = policy_mean_alpha_ndcg(&policy, train, config.alpha)?;
    let mut log = vec![ReinforceRecord {
        epoch: 0,
        episodes: 0,
        decisions: 0,
        wall_seconds: start.elapsed().as_secs_f64(),
        mean_return: None,
        train_alpha_ndcg: initial,
    }];
    let mut threshold_at = config.stop_at.filter(|&s| initial >= s).map(|_| 0);
    let (mut episodes, mut decisions) = (0u64, 0u64);

    let mut epoch = 0;
    while threshold_at.is_none() && epoch < config.epochs {
        epoch += 1;
        let mut total_return = 0.0;
        for qds in train.items() {
            let (ranking, mut g, log_prob, vars) = policy.sample_episode(qds, &mut rng)?;
            let ret = ranking_reward(qds, &ranking, &metric)?;
            total_return += ret;
            episodes += 1;
            decisions += qds.num_docs() as u64;
            if ret == 0.0 {
                continue;
            }
            let loss = g.scale(log_prob, -ret)?;
            g.backward(loss).map_err(|e| Error::Diverged {
                epoch,
                cause: e.to_string(),
            })?;
            let grads: Vec<Tensor> = vars
                .iter()
                .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
                .collect();
            optimizer.step(&mut policy.tensors_mut(), &grads, &names)?;
        }
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let value = policy_mean_alpha_ndcg(&policy, train, config.alpha)?;
        log::info!("reinforce epoch {epoch}: train {value:.4}");
        log.push(ReinforceRecord {
            epoch,
            episodes,
            decisions,
            wall_seconds: start.elapsed().as_secs_f64(),
            mean_return: Some(total_return / train.len() as f64),
            train_alpha_ndcg: value,
        });
        if config.stop_at.is_some_and(|s| value >= s) {
            threshold_at = Some(episodes);
        }
    }
    Ok(ReinforceOutcome {
        policy,
        log,
        episodes_to_threshold: threshold_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{generate, GeneratorConfig};

    fn data() -> Dataset {
        generate(&GeneratorConfig {
            seed: 1,
            queries: 4,
            docs: 5,
            subtopics: 3,
            embed_dim: 4,
            coverage_rate: 0.4,
            signal_strength: 0.9,
        })
        .unwrap()
    }

    #[test]
    fn episode_takes_one_decision_per_document() {
        let d = data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = SequentialPolicy::new(4, &[8], &mut rng).unwrap();
        let (r, g, lp, _) = p.sample_episode(&d.items()[0], &mut rng).unwrap();
        assert_eq!(r.len(), 5);
        assert!(g.value(lp).item().unwrap() <= 0.0);
        assert_eq!(p.greedy_rank(&d.items()[0]).unwrap().len(), 5);
        let back = SequentialPolicy::from_checkpoint(&p.to_checkpoint()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn training_counts_episodes_and_decisions() {
        let d = data();
        let config = ReinforceConfig {
            epochs: 2,
            hidden: vec![8],
            reward_k: 5,
            ..ReinforceConfig::default()
        };
        let out = reinforce_train(&d, &config).unwrap();
        let last = out.log.last().unwrap();
        assert_eq!(last.episodes, 8);
        assert_eq!(last.decisions, 40);
        assert_eq!(out.log.len(), 3);
    }
}
