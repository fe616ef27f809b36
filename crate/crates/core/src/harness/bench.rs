//! Episodes-to-threshold comparison of the two learned methods and
//! per-query inference latency as a function of the candidate count.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{oracle_mean_alpha_ndcg, write_config, write_jsonl, MethodName};
use crate::agentnet::{AgentConfig, AgentNet};
use crate::baselines::{mmr_rank, oracle_greedy_rank, random_rank, xquad_rank, GreedyConfig};
use crate::datamodel::{self, Dataset, GeneratorConfig, Judgments, QueryDocSet};
use crate::error::{invalid, Result};
use crate::metrics::MetricConfig;
use crate::ranker::rank;
use crate::trainer::reinforce::{reinforce_train, ReinforceConfig, SequentialPolicy};
use crate::trainer::{self, TrainerConfig, COMPARISON_LR};

pub const BENCH_JSONL_FILE: &str = "bench.jsonl";
pub const BENCH_TEXT_FILE: &str = "bench.txt";

/// The synthetic benchmark dataset: 100 queries, 10 documents, 5 subtopics.
pub fn default_bench_generator() -> GeneratorConfig {
    GeneratorConfig {
        seed: 7,
        queries: 100,
        docs: 10,
        subtopics: 5,
        embed_dim: 32,
        coverage_rate: 0.3,
        signal_strength: 0.9,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRun {
    /// Dataset file; when absent, `generator` builds one.
    pub dataset: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub out: PathBuf,
    pub methods: Vec<MethodName>,
    pub seed: u64,
    pub alpha: f64,
    /// Threshold as a fraction of the oracle-greedy mean α-NDCG@10.
    pub threshold_fraction: f64,
    /// Learning rate shared by both learned methods.
    pub lr: f64,
    /// Rollout sweeps (one episode per query each) before giving up.
    pub max_epochs: usize,
    /// Minibatch updates per sweep for the multi-agent trainer.
    pub updates_per_epoch: usize,
    pub latency_sizes: Vec<usize>,
    pub latency_repeats: usize,
}

impl Default for BenchRun {
    fn default() -> Self {
        Self {
            dataset: None,
            generator: default_bench_generator(),
            out: PathBuf::from("bench-out"),
            methods: vec![MethodName::Ma4div, MethodName::Mdpdiv],
            seed: 0,
            alpha: MetricConfig::DEFAULT_ALPHA,
            threshold_fraction: 0.9,
            lr: COMPARISON_LR,
            max_epochs: 300,
            updates_per_epoch: 100,
            latency_sizes: vec![5, 10, 15, 30],
            latency_repeats: 20,
        }
    }
}

/// Settings of one episodes-to-threshold run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceSettings {
    pub seed: u64,
    pub alpha: f64,
    pub threshold: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub updates_per_epoch: usize,
}

/// Outcome of training one method until a threshold is met.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub method: String,
    pub threshold: f64,
    /// `None` means the threshold was not reached within the budget.
    pub episodes_to_threshold: Option<u64>,
    pub epochs: usize,
    /// Policy decisions taken: one per episode for the multi-agent scorer,
    /// one per ranked position for the sequential policy.
    pub decisions: u64,
    pub final_alpha_ndcg: f64,
    pub wall_seconds: f64,
}

impl Convergence {
    pub fn status(&self) -> &'static str {
        if self.episodes_to_threshold.is_some() {
            "reached"
        } else {
            "DNF"
        }
    }
}

/// Multi-agent trainer with default architecture, evaluated after every sweep.
pub fn converge_ma4div(data: &Dataset, s: &ConvergenceSettings) -> Result<Convergence> {
    let mut config = TrainerConfig {
        epochs: s.max_epochs,
        updates_per_epoch: s.updates_per_epoch,
        alpha: s.alpha,
        seed: s.seed,
        stop_at: Some(s.threshold),
        ..TrainerConfig::default()
    };
    config.optimizer.lr = s.lr;
    let start = Instant::now();
    let out = trainer::train(data, None, &config, None)?;
    let last = out.log.last().expect("log has the initial record");
    Ok(Convergence {
        method: MethodName::Ma4div.as_str().into(),
        threshold: s.threshold,
        episodes_to_threshold: out.episodes_to_threshold,
        epochs: last.epoch,
        decisions: last.episodes,
        final_alpha_ndcg: last.train_alpha_ndcg,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Sequential REINFORCE policy, evaluated after every sweep.
pub fn converge_mdpdiv(data: &Dataset, s: &ConvergenceSettings) -> Result<Convergence> {
    let mut config = ReinforceConfig {
        epochs: s.max_epochs,
        alpha: s.alpha,
        seed: s.seed,
        stop_at: Some(s.threshold),
        ..ReinforceConfig::default()
    };
    config.optimizer.lr = s.lr;
    let start = Instant::now();
    let out = reinforce_train(data, &config)?;
    let last = out.log.last().expect("log has the initial record");
    Ok(Convergence {
        method: MethodName::Mdpdiv.as_str().into(),
        threshold: s.threshold,
        episodes_to_threshold: out.episodes_to_threshold,
        epochs: last.epoch,
        decisions: last.decisions,
        final_alpha_ndcg: last.train_alpha_ndcg,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Mean seconds per ranked query at one candidate count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub method: String,
    pub docs: usize,
    pub seconds_per_query: f64,
}

/// Least-squares line `seconds = intercept + slope * docs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyFit {
    pub method: String,
    pub slope_seconds_per_doc: f64,
    pub intercept_seconds: f64,
    /// Slope relative to the mean latency, per document.
    pub relative_slope: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

fn random_query<R: Rng>(rng: &mut R, docs: usize, dim: usize, subtopics: usize) -> Result<QueryDocSet> {
    let vec = |rng: &mut R| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let q = vec(rng);
    let d = (0..docs).map(|_| vec(rng)).collect();
    let j = Judgments::from_fn(docs, subtopics, |i, l| (i + l) % 3 == 0)?;
    QueryDocSet::new("latency", q, d, j)
}

/// Per-query ranking latency for each method and candidate count. The
/// attention block of the multi-agent scorer is also timed on its own
/// (`ma4div_attention`), since its cost grows quadratically with the count.
pub fn measure_latency(
    methods: &[MethodName],
    sizes: &[usize],
    repeats: usize,
    embed_dim: usize,
    seed: u64,
) -> Result<Vec<LatencyPoint>> {
    if repeats == 0 || sizes.is_empty() {
        return invalid("latency benchmark needs sizes and repeats");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agent = AgentNet::new(AgentConfig::small_profile(embed_dim), &mut rng)?;
    let policy = SequentialPolicy::new(embed_dim, &[128, 128], &mut rng)?;
    let greedy = GreedyConfig::default();
    let metric = MetricConfig::new(MetricConfig::DEFAULT_ALPHA, 1)?;
    let mut points = Vec::new();
    for &n in sizes {
        let queries = (0..repeats)
            .map(|_| random_query(&mut rng, n, embed_dim, 5))
            .collect::<Result<Vec<_>>>()?;
        let mut time = |name: &str, f: &mut dyn FnMut(&QueryDocSet) -> Result<()>| -> Result<()> {
            let start = Instant::now();
            for q in &queries {
                f(q)?;
            }
            points.push(LatencyPoint {
                method: name.to_string(),
                docs: n,
                seconds_per_query: start.elapsed().as_secs_f64() / repeats as f64,
            });
            Ok(())
        };
        for &m in methods {
            match m {
                MethodName::Ma4div => {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    time("ma4div", &mut |q| {
                        std::hint::black_box(rank(q, &agent, 0.0, &mut r)?);
                        Ok(())
                    })?;
                    time("ma4div_attention", &mut |q| {
                        std::hint::black_box(agent.cross_features(q.docs())?);
                        Ok(())
                    })?;
                }
                MethodName::Mdpdiv => time("mdpdiv", &mut |q| {
                    std::hint::black_box(policy.greedy_rank(q)?);
                    Ok(())
                })?,
                MethodName::Mmr => time("mmr", &mut |q| {
                    std::hint::black_box(mmr_rank(q, &greedy));
                    Ok(())
                })?,
                MethodName::Xquad => time("xquad", &mut |q| {
                    std::hint::black_box(xquad_rank(q, &greedy));
                    Ok(())
                })?,
                MethodName::Random => {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    time("random", &mut |q| {
                        std::hint::black_box(random_rank(q.num_docs(), &mut r));
                        Ok(())
                    })?
                }
                MethodName::Oracle => time("oracle", &mut |q| {
                    std::hint::black_box(oracle_greedy_rank(q, &metric));
                    Ok(())
                })?,
            }
        }
    }
    Ok(points)
}

/// One least-squares fit per method in `points`.
pub fn fit_latency(points: &[LatencyPoint]) -> Vec<LatencyFit> {
    let mut names: Vec<&str> = Vec::new();
    for p in points {
        if !names.contains(&p.method.as_str()) {
            names.push(&p.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let xy: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| p.method == name)
                .map(|p| (p.docs as f64, p.seconds_per_query))
                .collect();
            let (slope, intercept) = fit_line(&xy);
            let mean = xy.iter().map(|p| p.1).sum::<f64>() / xy.len() as f64;
            LatencyFit {
                method: name.to_string(),
                slope_seconds_per_doc: slope,
                intercept_seconds: intercept,
                relative_slope: if mean > 0.0 { slope / mean } else { 0.0 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchRecord {
    Convergence(Convergence),
    Latency(LatencyPoint),
    LatencyFit(LatencyFit),
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub oracle_alpha_ndcg: f64,
    pub records: Vec<BenchRecord>,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = format!("oracle-greedy alpha_ndcg@10: {:.4}\n\n", self.oracle_alpha_ndcg);
        s.push_str(&format!(
            "{:<10}  {:>9}  {:>8}  {:>12}  {:>10}  {:>10}  {:>8}\n",
            "method", "threshold", "status", "episodes", "decisions", "final", "seconds"
        ));
        for r in &self.records {
            if let BenchRecord::Convergence(c) = r {
                let episodes = c.episodes_to_threshold.map_or("-".to_string(), |e| e.to_string());
                s.push_str(&format!(
                    "{:<10}  {:>9.4}  {:>8}  {:>12}  {:>10}  {:>10.4}  {:>8.1}\n",
                    c.method,
                    c.threshold,
                    c.status(),
                    episodes,
                    c.decisions,
                    c.final_alpha_ndcg,
                    c.wall_seconds
                ));
            }
        }
        s.push_str(&format!("\n{:<18}  {:>6}  {:>16}\n", "method", "docs", "us_per_query"));
        for r in &self.records {
            if let BenchRecord::Latency(p) = r {
                s.push_str(&format!(
                    "{:<18}  {:>6}  {:>16.2}\n",
                    p.method,
                    p.docs,
                    p.seconds_per_query * 1e6
                ));
            }
        }
        s.push_str(&format!("\n{:<18}  {:>14}  {:>14}\n", "method", "us_per_doc", "relative_slope"));
        for r in &self.records {
            if let BenchRecord::LatencyFit(f) = r {
                s.push_str(&format!(
                    "{:<18}  {:>14.3}  {:>14.4}\n",
                    f.method,
                    f.slope_seconds_per_doc * 1e6,
                    f.relative_slope
                ));
            }
        }
        s
    }
}

pub fn run_bench(run: &BenchRun) -> Result<BenchReport> {
    if run.methods.is_empty() {
        return invalid("bench needs at least one method");
    }
    if !(run.threshold_fraction > 0.0 && run.threshold_fraction <= 1.0) {
        return invalid("threshold_fraction must lie in (0, 1]");
    }
    let data = match &run.dataset {
        Some(path) => datamodel::load(path)?,
        None => datamodel::generate(&run.generator)?,
    };
    write_config(&run.out, run)?;
    let oracle = oracle_mean_alpha_ndcg(&data, run.alpha)?;
    let settings = ConvergenceSettings {
        seed: run.seed,
        alpha: run.alpha,
        threshold: run.threshold_fraction * oracle,
        lr: run.lr,
        max_epochs: run.max_epochs,
        updates_per_epoch: run.updates_per_epoch,
    };
    let mut records = Vec::new();
    for &m in &run.methods {
        let c = match m {
            MethodName::Ma4div => converge_ma4div(&data, &settings)?,
            MethodName::Mdpdiv => converge_mdpdiv(&data, &settings)?,
            _ => continue,
        };
        log::info!("{}: {} after {} epochs", c.method, c.status(), c.epochs);
        records.push(BenchRecord::Convergence(c));
    }
    let points = measure_latency(
        &run.methods,
        &run.latency_sizes,
        run.latency_repeats,
        data.embed_dim(),
        run.seed,
    )?;
    let fits = fit_latency(&points);
    records.extend(points.into_iter().map(BenchRecord::Latency));
    records.extend(fits.into_iter().map(BenchRecord::LatencyFit));
    let report = BenchReport {
        oracle_alpha_ndcg: oracle,
        records,
    };
    write_jsonl(&run.out.join(BENCH_JSONL_FILE), &report.records)?;
    fs::write(run.out.join(BENCH_TEXT_FILE), report.to_text())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_fit_recovers_slope() {
        let (s, i) = fit_line(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]);
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12);
        assert_eq!(fit_line(&[(1.0, 2.0), (1.0, 4.0)]).0, 0.0);
    }

    #[test]
    fn latency_rows_per_method_and_size() {
        let pts = measure_latency(&[MethodName::Mmr, MethodName::Ma4div], &[3, 6], 2, 4, 0).unwrap();
        assert_eq!(pts.len(), 2 * 3);
        let fits = fit_latency(&pts);
        let names: Vec<&str> = fits.iter().map(|f| f.method.as_str()).collect();
        assert_eq!(names, vec!["mmr", "ma4div", "ma4div_attention"]);
    }
}
