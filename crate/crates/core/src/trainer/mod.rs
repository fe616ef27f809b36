//! Off-policy training of the agent and mixing networks.
//!
//! Each epoch first rolls out one single-step episode per training query
//! with ε-greedy scores, stores the tuples, then runs a fixed number of
//! minibatch updates on the squared error between the team value and the
//! stored reward. Episodes have one step, so the regression target is the
//! reward itself.

mod buffer;
mod model;
pub mod reinforce;

pub use buffer::ReplayBuffer;
pub use model::{ModelSpec, QmixModel};

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agentnet::{select_actions, ExplorationSchedule, Observation};
use crate::datamodel::{Dataset, QueryDocSet};
use crate::diffcore::{Graph, Optimizer, OptimizerConfig, Reduction, Tensor};
use crate::error::{invalid, Error, Result};
use crate::metrics::{self, MetricConfig, RankedList};
use crate::mixer::state_vector;
use crate::ranker::{greedy_rankings, mean_alpha_ndcg, order_by_scores};

/// Cutoff of the α-NDCG tracked in training logs.
pub const LOG_CUTOFF: usize = 10;

/// Learning rate shared by both methods in the exploration-efficiency comparison.
pub const COMPARISON_LR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub epochs: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Discount factor. Kept for completeness; single-step episodes never use it.
    pub gamma: f64,
    /// Cutoff of the α-NDCG reward.
    pub reward_k: usize,
    pub alpha: f64,
    pub exploration: ExplorationSchedule,
    pub optimizer: OptimizerConfig,
    /// Evaluate every this many epochs.
    pub eval_every: usize,
    pub seed: u64,
    pub model: ModelSpec,
    /// Stop once the greedy training α-NDCG@10 reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            updates_per_epoch: 8,
            batch_size: 32,
            buffer_capacity: 5000,
            gamma: 0.99,
            reward_k: 10,
            alpha: MetricConfig::DEFAULT_ALPHA,
            exploration: ExplorationSchedule {
                start: 1.0,
                floor: 0.05,
                horizon: 5_000,
            },
            optimizer: OptimizerConfig::default(),
            eval_every: 1,
            seed: 0,
            model: ModelSpec::default(),
            stop_at: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.updates_per_epoch == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return invalid("trainer: epochs, updates_per_epoch, batch_size and eval_every must be positive");
        }
        if self.batch_size > self.buffer_capacity {
            return invalid(format!(
                "trainer: batch size {} exceeds buffer capacity {}",
                self.batch_size, self.buffer_capacity
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return invalid(format!("trainer: gamma must lie in [0, 1], got {}", self.gamma));
        }
        self.exploration.validate()?;
        MetricConfig::new(self.alpha, self.reward_k)?;
        Ok(())
    }
}

/// One single-step episode. The observation and state are those of
/// training query `query`, so they are not copied.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTuple {
    pub query: usize,
    /// Chosen scores, 1-based.
    pub actions: Vec<usize>,
    pub reward: f64,
    /// The query has no covered subtopic; the reward is 0 by convention.
    pub degenerate: bool,
}

/// α-NDCG reward of a joint action (cutoff clamped to the list length).
pub fn episode_reward(qds: &QueryDocSet, actions: &[usize], metric: &MetricConfig) -> Result<f64> {
    ranking_reward(qds, &order_by_scores(actions), metric)
}

/// α-NDCG of a ranking with the cutoff clamped to the list length; 0 for
/// queries without covered subtopics.
pub fn ranking_reward(qds: &QueryDocSet, ranking: &RankedList, metric: &MetricConfig) -> Result<f64> {
    if qds.judgments().covered_subtopics() == 0 {
        return Ok(0.0);
    }
    let cfg = metric.with_k(metric.k().min(qds.num_docs()))?;
    metrics::alpha_ndcg(ranking, qds.judgments(), &cfg)
}

/// Regression target of a stored tuple. There is no next state to
/// bootstrap from, so this is the reward.
pub fn td_target(tuple: &EpisodeTuple) -> f64 {
    tuple.reward
}

/// TD loss `Σ (y - Q_tot)²` over a minibatch and, optionally, its gradient
/// for every model tensor (in [`QmixModel::tensors`] order).
pub fn td_loss(
    model: &QmixModel,
    dataset: &Dataset,
    batch: &[&EpisodeTuple],
    with_grads: bool,
) -> Result<(f64, Option<Vec<Tensor>>)> {
    if batch.is_empty() {
        return invalid("td_loss: empty batch");
    }
    let items = dataset.items();
    let mut obs = Vec::with_capacity(batch.len());
    let mut states = Vec::new();
    let mut chosen = Vec::new();
    let mut targets = Vec::with_capacity(batch.len());
    for t in batch {
        let qds = items
            .get(t.query)
            .ok_or_else(|| Error::Invalid(format!("episode refers to missing query {}", t.query)))?;
        if t.actions.len() != qds.num_docs() {
            return invalid("episode action count does not match its query");
        }
        let o = Observation::from(qds);
        states.extend(state_vector(&o));
        obs.push(o);
        chosen.extend(t.actions.iter().map(|&a| a - 1));
        targets.push(td_target(t));
    }

    let mut g = Graph::new();
    let agent_vars = model.agent.bind(&mut g);
    let mixer_vars = model.mixer.bind(&mut g);
    let out = model.agent.forward(&mut g, &agent_vars, &obs)?;
    let q_chosen = g.gather(out.q_values, &chosen)?;
    let s = g.input(Tensor::new(vec![batch.len(), model.mixer.config().state_dim()], states)?);
    let q_tot = model.mixer.forward(&mut g, &mixer_vars, s, q_chosen)?;
    let y = g.input(Tensor::column(&targets)?);
    let loss = g.squared_error(q_tot, y, Reduction::Sum)?;
    let value = g.value(loss).item()?;
    if !with_grads {
        return Ok((value, None));
    }
    g.backward(loss)?;
    let grads = agent_vars
        .all
        .iter()
        .chain(&mixer_vars.all)
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();
    Ok((value, Some(grads)))
}

/// Summary of one rollout sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutStats {
    pub episodes: usize,
    pub mean_reward: f64,
    pub degenerate: usize,
    /// ε at the first episode of the sweep.
    pub epsilon: f64,
}

/// Mutable training state over one training split.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    config: TrainerConfig,
    data: &'a Dataset,
    metric: MetricConfig,
    model: QmixModel,
    optimizer: Optimizer,
    buffer: ReplayBuffer<EpisodeTuple>,
    rng: ChaCha8Rng,
    episodes: u64,
    updates: u64,
    targets_checked: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return invalid("trainer: empty training set");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = QmixModel::new(&config.model, data.embed_dim(), data.docs_per_query(), &mut rng)?;
        Self::with_model(data, config, model, rng)
    }

    /// Starts from existing parameters; `rng` drives exploration and sampling.
    pub fn with_model(data: &'a Dataset, config: TrainerConfig, model: QmixModel, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if model.mixer.config().agents != data.docs_per_query() || model.agent.config().embed_dim != data.embed_dim() {
            return invalid("trainer: model shape does not match the dataset");
        }
        Ok(Self {
            metric: MetricConfig::new(config.alpha, config.reward_k)?,
            optimizer: Optimizer::new(config.optimizer)?,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            data,
            model,
            rng,
            episodes: 0,
            updates: 0,
            targets_checked: 0,
        })
    }

    pub fn model(&self) -> &QmixModel {
        &self.model
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn buffer(&self) -> &ReplayBuffer<EpisodeTuple> {
        &self.buffer
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Sampled tuples whose regression target was checked against the stored reward.
    pub fn targets_checked(&self) -> u64 {
        self.targets_checked
    }

    pub fn epsilon(&self) -> f64 {
        self.config.exploration.epsilon(self.episodes)
    }

    /// One episode per training query, appended to the buffer in query order.
    pub fn rollout_epoch(&mut self) -> Result<RolloutStats> {
        let items = self.data.items();
        let first_epsilon = self.epsilon();
        let mut total = 0.0;
        let mut degenerate = 0;
        let mut index = 0;
        for chunk in items.chunks(64) {
            let obs: Vec<Observation<'_>> = chunk.iter().map(Observation::from).collect();
            for q in self.model.agent.q_values_batch(&obs)? {
                let eps = self.config.exploration.epsilon(self.episodes);
                let actions = select_actions(&q, eps, &mut self.rng)?;
                let qds = &items[index];
                let is_degenerate = qds.judgments().covered_subtopics() == 0;
                let reward = episode_reward(qds, &actions, &self.metric)?;
                degenerate += usize::from(is_degenerate);
                total += reward;
                self.buffer.push(EpisodeTuple {
                    query: index,
                    actions,
                    reward,
                    degenerate: is_degenerate,
                });
                self.episodes += 1;
                index += 1;
            }
        }
        Ok(RolloutStats {
            episodes: items.len(),
            mean_reward: total / items.len() as f64,
            degenerate,
            epsilon: first_epsilon,
        })
    }

    /// One minibatch gradient step; returns the loss before the step.
    pub fn td_update(&mut self) -> Result<f64> {
        let b = self.config.batch_size;
        if self.buffer.len() < b {
            return invalid(format!(
                "td_update needs {b} stored episodes, buffer holds {}",
                self.buffer.len()
            ));
        }
        let batch = self.buffer.sample(b, &mut self.rng)?;
        for t in &batch {
            let y = td_target(t);
            assert_eq!(y.to_bits(), t.reward.to_bits(), "regression target differs from stored reward");
        }
        let (loss, grads) = td_loss(&self.model, self.data, &batch, true)?;
        self.targets_checked += b as u64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("TD loss".into()));
        }
        let grads = grads.expect("gradients requested");
        let names = self.model.names();
        let mut params = self.model.tensors_mut();
        self.optimizer.step(&mut params, &grads, &names)?;
        self.updates += 1;
        Ok(loss)
    }

    /// Greedy mean α-NDCG@10 on `dataset`.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<f64> {
        greedy_mean_alpha_ndcg(&self.model, dataset, self.config.alpha)
    }
}

/// Greedy-policy mean α-NDCG at the logging cutoff.
pub fn greedy_mean_alpha_ndcg(model: &QmixModel, dataset: &Dataset, alpha: f64) -> Result<f64> {
    let rankings = greedy_rankings(&model.agent, dataset.items())?;
    mean_alpha_ndcg(dataset, &rankings, &MetricConfig::new(alpha, LOG_CUTOFF)?)
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub episodes: u64,
    pub updates: u64,
    pub wall_seconds: f64,
    pub epsilon: f64,
    /// Mean TD loss over this epoch's updates.
    pub loss: Option<f64>,
    /// Mean reward of this epoch's exploratory rollouts.
    pub rollout_reward: Option<f64>,
    pub train_alpha_ndcg: f64,
    pub test_alpha_ndcg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best evaluation score (test split when given).
    pub best: QmixModel,
    pub best_score: f64,
    pub last: QmixModel,
    pub log: Vec<TrainRecord>,
    /// Episodes consumed when the `stop_at` threshold was first met.
    pub episodes_to_threshold: Option<u64>,
    pub targets_checked: u64,
}

/// File name of the best checkpoint inside the output directory.
pub const BEST_CHECKPOINT: &str = "checkpoint.bin";
/// Written when training diverges.
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.bin";

/// Full training loop. When `out_dir` is given, the best parameters are
/// saved there after every improvement and the last good parameters on
/// divergence.
pub fn train(
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainerConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = Trainer::new(train_set, config.clone())?;
    let mut log = Vec::new();

    let evaluate = |t: &Trainer<'_>| -> Result<(f64, Option<f64>)> {
        let tr = t.evaluate(train_set)?;
        let te = test_set.map(|d| t.evaluate(d)).transpose()?;
        Ok((tr, te))
    };

    let (tr, te) = evaluate(&trainer)?;
    log.push(TrainRecord {
        epoch: 0,
        episodes: 0,
        updates: 0,
        wall_seconds: start.elapsed().as_secs_f64(),
        epsilon: trainer.epsilon(),
        loss: None,
        rollout_reward: None,
        train_alpha_ndcg: tr,
        test_alpha_ndcg: te,
    });
    let mut best = trainer.model().clone();
    let mut best_score = te.unwrap_or(tr);
    let save_best = |m: &QmixModel, epoch: usize, score: f64| -> Result<()> {
        if let Some(dir) = out_dir {
            m.to_checkpoint(serde_json::json!({ "epoch": epoch, "score": score }))?
                .save(dir.join(BEST_CHECKPOINT))?;
        }
        Ok(())
    };
    save_best(&best, 0, best_score)?;
    let mut threshold_at = config.stop_at.filter(|&s| tr >= s).map(|_| 0);

    let mut epoch = 0;
    while threshold_at.is_none() && epoch < config.epochs {
        epoch += 1;
        let last_good = trainer.model().clone();
        let stats = trainer.rollout_epoch()?;
        let mut losses = Vec::new();
        if trainer.buffer().len() >= config.batch_size {
            for _ in 0..config.updates_per_epoch {
                match trainer.td_update() {
                    Ok(l) => losses.push(l),
                    Err(e @ Error::NonFinite(_)) => {
                        if let Some(dir) = out_dir {
                            last_good
                                .to_checkpoint(serde_json::json!({ "epoch": epoch - 1 }))?
                                .save(dir.join(LAST_GOOD_CHECKPOINT))?;
                        }
                        return Err(Error::Diverged {
                            epoch,
                            cause: e.to_string(),
                        });
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if epoch % config.eval_every != 0 && epoch != config.epochs {
            continue;
        }
        let (tr, te) = evaluate(&trainer)?;
        let record = TrainRecord {
            epoch,
            episodes: trainer.episodes(),
            updates: trainer.updates(),
            wall_seconds: start.elapsed().as_secs_f64(),
            epsilon: stats.epsilon,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            rollout_reward: Some(stats.mean_reward),
            train_alpha_ndcg: tr,
            test_alpha_ndcg: te,
        };
        log::info!(
            "epoch {epoch}: train {tr:.4} test {} loss {} eps {:.3}",
            te.map_or("-".to_string(), |v| format!("{v:.4}")),
            record.loss.map_or("-".to_string(), |v| format!("{v:.4}")),
            stats.epsilon
        );
        log.push(record);
        let score = te.unwrap_or(tr);
        if score > best_score {
            best_score = score;
            best = trainer.model().clone();
            save_best(&best, epoch, score)?;
        }
        if config.stop_at.is_some_and(|s| tr >= s) {
            threshold_at = Some(trainer.episodes());
        }
    }

    Ok(TrainOutcome {
        best,
        best_score,
        last: trainer.model().clone(),
        log,
        episodes_to_threshold: threshold_at,
        targets_checked: trainer.targets_checked(),
    })
}
