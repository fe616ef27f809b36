use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Judgments, QueryDocSet};
use crate::error::{invalid, Result};

const MAX_RESAMPLES: usize = 1000;

/// Parameters of the synthetic dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub queries: usize,
    pub docs: usize,
    pub subtopics: usize,
    pub embed_dim: usize,
    /// Probability that a (document, subtopic) pair is relevant.
    pub coverage_rate: f64,
    /// Share of a document embedding that encodes its subtopic row.
    pub signal_strength: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            queries: 100,
            docs: 15,
            subtopics: 50,
            embed_dim: 32,
            coverage_rate: 0.3,
            signal_strength: 0.9,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.docs == 0 || self.subtopics == 0 || self.embed_dim == 0 {
            return invalid("generator: queries, docs, subtopics and embed_dim must be positive");
        }
        if !(self.coverage_rate > 0.0 && self.coverage_rate < 1.0) {
            return invalid(format!(
                "generator: coverage_rate must lie in (0, 1), got {}",
                self.coverage_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return invalid(format!(
                "generator: signal_strength must lie in [0, 1], got {}",
                self.signal_strength
            ));
        }
        Ok(())
    }
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Maps a subtopic weight vector through the projection (`m x L`, row-major).
fn project(weights: impl Iterator<Item = f64>, projection: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (l, w) in weights.enumerate() {
        if w != 0.0 {
            for (o, p) in out.iter_mut().zip(&projection[l * dim..(l + 1) * dim]) {
                *o += w * p;
            }
        }
    }
    out
}

/// Generates a dataset whose embeddings carry the subtopic structure.
///
/// Every document embedding is `s * unit(J_i P) + (1 - s) * unit(noise)`,
/// renormalized, where `P` is one Gaussian projection shared by the whole
/// dataset. The query embedding is `unit(mean_i(J_i) P)`. Each query covers
/// at least one subtopic; its judgments are redrawn until that holds.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, m, dim) = (config.docs, config.subtopics, config.embed_dim);
    let s = config.signal_strength;

    let projection: Vec<f64> = (0..m * dim).map(|_| rng.sample(StandardNormal)).collect();

    let mut items = Vec::with_capacity(config.queries);
    for k in 0..config.queries {
        let mut attempts = 0;
        let judgments = loop {
            let rows: Vec<Vec<u8>> = (0..n)
                .map(|_| (0..m).map(|_| u8::from(rng.gen_bool(config.coverage_rate))).collect())
                .collect();
            let j = Judgments::new(&rows)?;
            if !j.is_empty() {
                break j;
            }
            attempts += 1;
            if attempts >= MAX_RESAMPLES {
                return invalid(format!(
                    "generator: query {k} still has no covered subtopic after {MAX_RESAMPLES} draws \
                     (coverage_rate {} too low)",
                    config.coverage_rate
                ));
            }
        };

        let docs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut signal = project(judgments.row(i).iter().map(|&c| f64::from(c)), &projection, dim);
                normalize(&mut signal);
                let mut noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                normalize(&mut noise);
                let mut d: Vec<f64> = signal
                    .iter()
                    .zip(&noise)
                    .map(|(a, b)| s * a + (1.0 - s) * b)
                    .collect();
                normalize(&mut d);
                d
            })
            .collect();

        let mean = (0..m).map(|l| (0..n).filter(|&i| judgments.covers(i, l)).count() as f64 / n as f64);
        let mut query = project(mean, &projection, dim);
        normalize(&mut query);

        items.push(QueryDocSet::new(format!("q{k:05}"), query, docs, judgments)?);
    }
    Dataset::new(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            seed,
            queries: 100,
            docs: 10,
            subtopics: 5,
            embed_dim: 16,
            coverage_rate: 0.3,
            signal_strength: 0.9,
        }
    }

    #[test]
    fn default_shape_matches_large_profile() {
        let c = GeneratorConfig::default();
        assert_eq!((c.docs, c.subtopics), (15, 50));
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(generate(&small(3)).unwrap(), generate(&small(3)).unwrap());
        assert_ne!(generate(&small(3)).unwrap(), generate(&small(4)).unwrap());
    }

    #[test]
    fn empirical_coverage_near_rate() {
        let ds = generate(&small(11)).unwrap();
        let (mut ones, mut cells) = (0usize, 0usize);
        for it in ds.items() {
            let j = it.judgments();
            assert!(!j.is_empty());
            for i in 0..j.docs() {
                ones += j.row(i).iter().map(|&c| c as usize).sum::<usize>();
                cells += j.subtopics();
            }
        }
        let rate = ones as f64 / cells as f64;
        assert!((rate - 0.3).abs() < 0.05, "rate {rate}");
    }

    #[test]
    fn full_signal_makes_identical_rows_collinear() {
        let mut c = small(5);
        c.signal_strength = 1.0;
        let ds = generate(&c).unwrap();
        let mut pairs = 0;
        for it in ds.items() {
            let j = it.judgments();
            for a in 0..j.docs() {
                for b in a + 1..j.docs() {
                    if j.row(a) == j.row(b) && j.row(a).contains(&1) {
                        pairs += 1;
                        let c = cosine(&it.docs()[a], &it.docs()[b]);
                        assert!((c - 1.0).abs() < 1e-9, "cosine {c}");
                    }
                }
            }
        }
        assert!(pairs > 0);
    }

    #[test]
    fn impossible_coverage_rejected() {
        let mut c = small(1);
        c.coverage_rate = 1e-9;
        c.docs = 1;
        c.subtopics = 1;
        assert!(generate(&c).is_err());
        c.coverage_rate = 0.0;
        assert!(generate(&c).is_err());
        c.coverage_rate = 0.5;
        c.signal_strength = 1.5;
        assert!(generate(&c).is_err());
    }
}
