//! Reference implementations shared by the integration tests. They are
//! written directly from the metric and derivative definitions and do not
//! call into the library's own evaluators.

#![allow(dead_code, clippy::needless_range_loop)]

use ma4div::datamodel::Judgments;
use ma4div::diffcore::{Graph, Tensor, Var};
use rand::Rng;

/// α-DCG@k evaluated position by position, recounting earlier coverage
/// from the prefix each time.
pub fn alpha_dcg(order: &[usize], rows: &[Vec<u8>], alpha: f64, k: usize) -> f64 {
    let m = rows[0].len();
    let mut total = 0.0;
    for r in 0..k {
        let d = order[r];
        let mut gain = 0.0;
        for l in 0..m {
            if rows[d][l] == 1 {
                let seen = order[..r].iter().filter(|&&s| rows[s][l] == 1).count();
                gain += (1.0 - alpha).powi(seen as i32);
            }
        }
        total += gain / ((r + 2) as f64).log2();
    }
    total
}

/// Greedy ideal ordering: repeatedly the document with the largest
/// marginal gain, lowest index on ties.
pub fn greedy_ideal(rows: &[Vec<u8>], alpha: f64) -> Vec<usize> {
    let n = rows.len();
    let m = rows[0].len();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut left: Vec<usize> = (0..n).collect();
    while !left.is_empty() {
        let gain = |d: usize, order: &[usize]| -> f64 {
            (0..m)
                .filter(|&l| rows[d][l] == 1)
                .map(|l| (1.0 - alpha).powi(order.iter().filter(|&&s| rows[s][l] == 1).count() as i32))
                .sum()
        };
        let mut best = 0;
        for i in 1..left.len() {
            if gain(left[i], &order) > gain(left[best], &order) {
                best = i;
            }
        }
        order.push(left.remove(best));
    }
    order
}

pub fn alpha_ndcg(order: &[usize], rows: &[Vec<u8>], alpha: f64, k: usize) -> f64 {
    let ideal = alpha_dcg(&greedy_ideal(rows, alpha), rows, alpha, k);
    if ideal == 0.0 {
        return 0.0;
    }
    (alpha_dcg(order, rows, alpha, k) / ideal).min(1.0)
}

/// ERR-IA@k with uniform intents and stop probability 1/2 for a relevant
/// document, written as the product of earlier continuation probabilities.
pub fn err_ia(order: &[usize], rows: &[Vec<u8>], k: usize) -> f64 {
    let m = rows[0].len();
    let mut total = 0.0;
    for l in 0..m {
        let mut reach = 1.0;
        let mut err = 0.0;
        for (r, &d) in order[..k].iter().enumerate() {
            let stop = 0.5 * f64::from(rows[d][l]);
            err += reach * stop / (r + 1) as f64;
            reach *= 1.0 - stop;
        }
        total += err / m as f64;
    }
    total
}

pub fn s_recall(order: &[usize], rows: &[Vec<u8>], k: usize) -> f64 {
    let m = rows[0].len();
    let covered = (0..m).filter(|&l| rows.iter().any(|r| r[l] == 1)).count();
    if covered == 0 {
        return 0.0;
    }
    let hit = (0..m).filter(|&l| order[..k].iter().any(|&d| rows[d][l] == 1)).count();
    hit as f64 / covered as f64
}

pub fn random_rows<R: Rng>(rng: &mut R, n: usize, m: usize, p: f64) -> Vec<Vec<u8>> {
    (0..n)
        .map(|_| (0..m).map(|_| u8::from(rng.gen_bool(p))).collect())
        .collect()
}

pub fn judgments(rows: &[Vec<u8>]) -> Judgments {
    Judgments::new(rows).unwrap()
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, v: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(v.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, v, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            v.swap(j, k - 1);
        }
    }
    let mut v: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut v, &mut out);
    out
}

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Like [`random_tensor`] but keeps entries at least `gap` away from 0.
pub fn random_tensor_off_zero<R: Rng>(rng: &mut R, rows: usize, cols: usize, gap: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let mag = rng.gen_range(gap..2.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

/// Relative error with an absolute floor for near-zero derivatives.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

pub const FD_STEP: f64 = 1e-5;

/// Outcome of comparing backward-pass gradients against central differences.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    /// Entries where the two one-sided differences disagree, i.e. the step
    /// straddles a kink of a piecewise-linear op.
    pub kinks: usize,
    pub worst: f64,
}

impl FdReport {
    pub fn merge(&mut self, other: FdReport) {
        self.checked += other.checked;
        self.kinks += other.kinks;
        self.worst = self.worst.max(other.worst);
    }
}

/// Compares analytic gradients `grads` of `loss(params)` with central
/// differences over every entry of every tensor.
pub fn fd_check(params: &[Tensor], grads: &[Tensor], mut loss: impl FnMut(&[Tensor]) -> f64) -> FdReport {
    let mut report = FdReport::default();
    let mut probe = params.to_vec();
    let base = loss(&probe);
    for t in 0..params.len() {
        for i in 0..params[t].numel() {
            let x = params[t].data()[i];
            probe[t] = with_entry(&params[t], i, x + FD_STEP);
            let up = loss(&probe);
            probe[t] = with_entry(&params[t], i, x - FD_STEP);
            let down = loss(&probe);
            probe[t] = params[t].clone();
            let forward = (up - base) / FD_STEP;
            let backward = (base - down) / FD_STEP;
            if (forward - backward).abs() > 1e-3 * forward.abs().max(backward.abs()).max(1.0) {
                report.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * FD_STEP);
            report.checked += 1;
            report.worst = report.worst.max(rel_error(grads[t].data()[i], numeric));
        }
    }
    report
}

fn with_entry(t: &Tensor, i: usize, v: f64) -> Tensor {
    let mut data = t.data().to_vec();
    data[i] = v;
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Builds `op` on trainable leaves, reduces it to a scalar (directly when it
/// already is one, otherwise via a squared error against `target`), and
/// returns the loss value and the leaf gradients.
pub fn graph_loss(
    params: &[Tensor],
    target: Option<&Tensor>,
    op: &dyn Fn(&mut Graph, &[Var]) -> ma4div::Result<Var>,
    with_grads: bool,
) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = op(&mut g, &vars).unwrap();
    let loss = match target {
        Some(t) => {
            let y = g.input(t.clone());
            g.squared_error(out, y, ma4div::diffcore::Reduction::Sum).unwrap()
        }
        None => out,
    };
    let value = g.value(loss).item().unwrap();
    if !with_grads {
        return (value, Vec::new());
    }
    g.backward(loss).unwrap();
    let grads = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
        .collect();
    (value, grads)
}
