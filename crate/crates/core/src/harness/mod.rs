//! Command implementations behind the `ma4div` binary: data generation,
//! training, evaluation and timing benchmarks. Every command writes its
//! artifacts, including the effective configuration, under one output
//! directory.

pub mod bench;
pub mod cli;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{mmr_rank, oracle_greedy_rank, random_rank, tune_lambda, xquad_rank};
use crate::datamodel::{self, split, Dataset, GeneratorConfig};
use crate::diffcore::Checkpoint;
use crate::error::{invalid, Error, Result};
use crate::metrics::{MetricConfig, RankedList};
use crate::ranker::{greedy_rankings, score_rankings, MetricsRow, MetricsTable};
use crate::trainer::reinforce::{reinforce_train, ReinforceConfig, SequentialPolicy};
use crate::trainer::{self, QmixModel, TrainerConfig};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CURVE_FILE: &str = "curve.tsv";
pub const EVAL_JSONL_FILE: &str = "eval.jsonl";
pub const EVAL_TEXT_FILE: &str = "eval.txt";
pub const POLICY_CHECKPOINT: &str = "policy.bin";

/// Ranking methods known to the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    /// Multi-agent scorer (needs a trained checkpoint).
    Ma4div,
    /// Sequential REINFORCE policy (needs a trained checkpoint).
    Mdpdiv,
    Mmr,
    Xquad,
    Random,
    /// Greedy marginal-gain ranking from the gold judgments.
    Oracle,
}

impl MethodName {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Ma4div => "ma4div",
            MethodName::Mdpdiv => "mdpdiv",
            MethodName::Mmr => "mmr",
            MethodName::Xquad => "xquad",
            MethodName::Random => "random",
            MethodName::Oracle => "oracle",
        }
    }
}

/// Recursively overlays `overlay` onto `base`; objects merge key by key,
/// anything else is replaced.
pub fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies an optional JSON config file on top of flag-derived settings.
/// Values in the file take precedence.
pub fn apply_config_file<T>(from_flags: T, file: Option<&Path>) -> Result<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    let Some(path) = file else {
        return Ok(from_flags);
    };
    let text = fs::read_to_string(path)?;
    let overlay: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut base = serde_json::to_value(from_flags)?;
    merge_json(&mut base, overlay);
    serde_json::from_value(base).map_err(|e| Error::Invalid(format!("config file {}: {e}", path.display())))
}

fn write_config<T: Serialize>(out: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(out.join(CONFIG_FILE), text)?;
    Ok(())
}

fn write_table(out: &Path, table: &MetricsTable) -> Result<()> {
    fs::write(out.join(EVAL_JSONL_FILE), table.to_jsonl()?)?;
    fs::write(out.join(EVAL_TEXT_FILE), table.to_text())?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRun {
    pub out: PathBuf,
    pub generator: GeneratorConfig,
}

/// Writes `dataset.jsonl`; returns its path.
pub fn run_generate(run: &GenerateRun) -> Result<PathBuf> {
    run.generator.validate()?;
    let data = datamodel::generate(&run.generator)?;
    write_config(&run.out, run)?;
    let path = run.out.join(DATASET_FILE);
    datamodel::save(&data, &path)?;
    Ok(path)
}

/// Splits by query; a fraction of 1 keeps everything for training and
/// evaluates on the same queries.
fn split_dataset(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if fraction == 1.0 {
        return Ok((data.clone(), data.clone()));
    }
    split(data, fraction, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub method: MethodName,
    /// Fraction of queries used for training; the rest form the test split.
    pub train_fraction: f64,
    pub split_seed: u64,
    pub trainer: TrainerConfig,
    pub reinforce: ReinforceConfig,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub table: MetricsTable,
    pub episodes_to_threshold: Option<u64>,
}

/// Trains one learned method and evaluates it on the test split.
pub fn run_train(run: &TrainRun) -> Result<TrainSummary> {
    let data = datamodel::load(&run.dataset)?;
    let (train_set, test_set) = split_dataset(&data, run.train_fraction, run.split_seed)?;
    write_config(&run.out, run)?;
    match run.method {
        MethodName::Ma4div => {
            let outcome = trainer::train(&train_set, Some(&test_set), &run.trainer, Some(&run.out))?;
            write_jsonl(&run.out.join(TRAIN_LOG_FILE), &outcome.log)?;
            let mut curve = String::from("epoch\tepisodes\tupdates\ttrain_alpha_ndcg@10\ttest_alpha_ndcg@10\n");
            for r in &outcome.log {
                curve.push_str(&format!(
                    "{}\t{}\t{}\t{:.6}\t{:.6}\n",
                    r.epoch,
                    r.episodes,
                    r.updates,
                    r.train_alpha_ndcg,
                    r.test_alpha_ndcg.unwrap_or(f64::NAN)
                ));
            }
            fs::write(run.out.join(CURVE_FILE), curve)?;
            let metric = MetricConfig::new(run.trainer.alpha, trainer::LOG_CUTOFF)?;
            let rankings = greedy_rankings(&outcome.best.agent, test_set.items())?;
            let table = MetricsTable {
                rows: vec![score_rankings("ma4div", &test_set, &rankings, &metric)?],
            };
            write_table(&run.out, &table)?;
            Ok(TrainSummary {
                checkpoint: run.out.join(trainer::BEST_CHECKPOINT),
                table,
                episodes_to_threshold: outcome.episodes_to_threshold,
            })
        }
        MethodName::Mdpdiv => {
            let outcome = reinforce_train(&train_set, &run.reinforce)?;
            write_jsonl(&run.out.join(TRAIN_LOG_FILE), &outcome.log)?;
            let mut curve = String::from("epoch\tepisodes\tdecisions\ttrain_alpha_ndcg@10\n");
            for r in &outcome.log {
                curve.push_str(&format!(
                    "{}\t{}\t{}\t{:.6}\n",
                    r.epoch, r.episodes, r.decisions, r.train_alpha_ndcg
                ));
            }
            fs::write(run.out.join(CURVE_FILE), curve)?;
            let path = run.out.join(POLICY_CHECKPOINT);
            outcome.policy.to_checkpoint().save(&path)?;
            let metric = MetricConfig::new(run.reinforce.alpha, trainer::LOG_CUTOFF)?;
            let rankings = test_set
                .items()
                .iter()
                .map(|q| outcome.policy.greedy_rank(q))
                .collect::<Result<Vec<_>>>()?;
            let table = MetricsTable {
                rows: vec![score_rankings("mdpdiv", &test_set, &rankings, &metric)?],
            };
            write_table(&run.out, &table)?;
            Ok(TrainSummary {
                checkpoint: path,
                table,
                episodes_to_threshold: outcome.episodes_to_threshold,
            })
        }
        other => invalid(format!("method `{}` is not trainable", other.as_str())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRun {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Empty means every method available without a checkpoint, plus the
    /// checkpoint's own method when one is given.
    pub methods: Vec<MethodName>,
    pub alpha: f64,
    /// Cutoff used when tuning λ for MMR and xQuAD.
    pub k: usize,
    /// Evaluate on the held-out split of this fraction (λ is tuned on the
    /// training part); `None` uses all queries for both.
    pub train_fraction: Option<f64>,
    pub split_seed: u64,
    /// Seed of the random-ranking baseline.
    pub seed: u64,
}

enum Learned {
    Qmix(Box<QmixModel>),
    Sequential(SequentialPolicy),
}

fn load_learned(path: &Path) -> Result<Learned> {
    let ckpt = Checkpoint::load(path)?;
    match SequentialPolicy::from_checkpoint(&ckpt) {
        Ok(p) => Ok(Learned::Sequential(p)),
        Err(_) => Ok(Learned::Qmix(Box::new(QmixModel::from_checkpoint(&ckpt)?))),
    }
}

/// Six-column comparison table, one row per method.
pub fn run_evaluate(run: &EvaluateRun) -> Result<MetricsTable> {
    let data = datamodel::load(&run.dataset)?;
    let (tune_set, eval_set) = match run.train_fraction {
        Some(f) => split_dataset(&data, f, run.split_seed)?,
        None => (data.clone(), data),
    };
    let learned = run.checkpoint.as_deref().map(load_learned).transpose()?;
    let mut methods = run.methods.clone();
    if methods.is_empty() {
        methods = vec![MethodName::Oracle, MethodName::Xquad, MethodName::Mmr, MethodName::Random];
        match learned {
            Some(Learned::Qmix(_)) => methods.insert(0, MethodName::Ma4div),
            Some(Learned::Sequential(_)) => methods.insert(0, MethodName::Mdpdiv),
            None => {}
        }
    }
    let tune_metric = MetricConfig::new(run.alpha, run.k)?;
    let metric = MetricConfig::new(run.alpha, trainer::LOG_CUTOFF)?;
    let mut rows = Vec::with_capacity(methods.len());
    for &m in &methods {
        let rankings = method_rankings(m, learned.as_ref(), &tune_set, &eval_set, &tune_metric, run.seed)?;
        rows.push(score_rankings(m.as_str(), &eval_set, &rankings, &metric)?);
    }
    let table = MetricsTable { rows };
    write_config(&run.out, run)?;
    write_table(&run.out, &table)?;
    Ok(table)
}

fn method_rankings(
    method: MethodName,
    learned: Option<&Learned>,
    tune_set: &Dataset,
    eval_set: &Dataset,
    metric: &MetricConfig,
    seed: u64,
) -> Result<Vec<RankedList>> {
    let items = eval_set.items();
    let tune_metric = metric.with_k(metric.k().min(tune_set.docs_per_query()))?;
    Ok(match method {
        MethodName::Ma4div => match learned {
            Some(Learned::Qmix(m)) => greedy_rankings(&m.agent, items)?,
            _ => return invalid("method ma4div needs --checkpoint with a trained multi-agent model"),
        },
        MethodName::Mdpdiv => match learned {
            Some(Learned::Sequential(p)) => items.iter().map(|q| p.greedy_rank(q)).collect::<Result<_>>()?,
            _ => return invalid("method mdpdiv needs --checkpoint with a trained sequential policy"),
        },
        MethodName::Mmr => {
            let (cfg, _) = tune_lambda(tune_set, &tune_metric, mmr_rank)?;
            log::info!("mmr: lambda {}", cfg.lambda());
            items.iter().map(|q| mmr_rank(q, &cfg)).collect()
        }
        MethodName::Xquad => {
            let (cfg, _) = tune_lambda(tune_set, &tune_metric, xquad_rank)?;
            log::info!("xquad: lambda {}", cfg.lambda());
            items.iter().map(|q| xquad_rank(q, &cfg)).collect()
        }
        MethodName::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            items.iter().map(|q| random_rank(q.num_docs(), &mut rng)).collect()
        }
        MethodName::Oracle => items.iter().map(|q| oracle_greedy_rank(q, metric)).collect(),
    })
}

/// Mean oracle-greedy α-NDCG@10 on a dataset.
pub fn oracle_mean_alpha_ndcg(data: &Dataset, alpha: f64) -> Result<f64> {
    let metric = MetricConfig::new(alpha, trainer::LOG_CUTOFF)?;
    let rankings: Vec<RankedList> = data.items().iter().map(|q| oracle_greedy_rank(q, &metric)).collect();
    Ok(score_rankings("oracle", data, &rankings, &metric)?.alpha_ndcg_10)
}

/// The row of `table` for `method`, if present.
pub fn find_row(table: &MetricsTable, method: MethodName) -> Option<&MetricsRow> {
    table.rows.iter().find(|r| r.method == method.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_values_win() {
        let mut base = json!({"a": 1, "nested": {"x": 1, "y": 2}, "list": [1, 2]});
        merge_json(&mut base, json!({"nested": {"y": 5}, "list": [9], "new": true}));
        assert_eq!(base, json!({"a": 1, "nested": {"x": 1, "y": 5}, "list": [9], "new": true}));
    }

    #[test]
    fn config_file_overrides_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"generator": {"queries": 7}}"#).unwrap();
        let run = GenerateRun {
            out: dir.path().to_path_buf(),
            generator: GeneratorConfig {
                queries: 3,
                docs: 4,
                ..GeneratorConfig::default()
            },
        };
        let merged = apply_config_file(run, Some(&path)).unwrap();
        assert_eq!(merged.generator.queries, 7);
        assert_eq!(merged.generator.docs, 4);

        fs::write(&path, r#"{"generator": {"bogus": 1}}"#).unwrap();
        let run = GenerateRun {
            out: dir.path().to_path_buf(),
            generator: GeneratorConfig::default(),
        };
        assert!(apply_config_file(run, Some(&path)).is_err());
    }
}
