//! Shared per-document Q-network.
//!
//! Every document is an agent. All agents share one set of parameters:
//! a multi-head self-attention block over the document embeddings gives
//! each document a cross feature `e_i`, and an MLP maps
//! `[q, d_i, e_i]` to one value per integer score.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::QueryDocSet;
use crate::diffcore::{glorot, Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// Architecture of the agent network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Embedding dimension `L` of queries and documents.
    pub embed_dim: usize,
    /// Total attention width `z`; each head uses `z / heads`.
    pub attn_dim: usize,
    pub heads: usize,
    /// Hidden widths of the MLP head.
    pub hidden: Vec<usize>,
    /// Size of the action space `|A|`; action `a` scores a document `a`.
    pub actions: usize,
    /// Adds the input embeddings to the attention output (needs `attn_dim == embed_dim`).
    #[serde(default)]
    pub residual: bool,
}

impl AgentConfig {
    /// `z = 64`, 4 heads, 30 actions.
    pub fn small_profile(embed_dim: usize) -> Self {
        Self {
            embed_dim,
            attn_dim: 64,
            heads: 4,
            hidden: vec![128, 128],
            actions: 30,
            residual: false,
        }
    }

    /// `z = 256`, 4 heads, 15 actions.
    pub fn large_profile(embed_dim: usize) -> Self {
        Self {
            attn_dim: 256,
            actions: 15,
            ..Self::small_profile(embed_dim)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.attn_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.attn_dim == 0 || self.heads == 0 {
            return invalid("agent: embed_dim, attn_dim and heads must be positive");
        }
        if !self.attn_dim.is_multiple_of(self.heads) {
            return invalid(format!(
                "agent: attn_dim {} is not divisible by {} heads",
                self.attn_dim, self.heads
            ));
        }
        if self.actions < 2 {
            return invalid(format!("agent: action space needs at least 2 scores, got {}", self.actions));
        }
        if self.hidden.contains(&0) {
            return invalid("agent: hidden widths must be positive");
        }
        if self.residual && self.attn_dim != self.embed_dim {
            return invalid("agent: residual attention needs attn_dim == embed_dim");
        }
        Ok(())
    }

    fn mlp_widths(&self) -> Vec<usize> {
        let mut w = vec![2 * self.embed_dim + self.attn_dim];
        w.extend(&self.hidden);
        w.push(self.actions);
        w
    }
}

/// An affine layer `x W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: glorot(rng, fan_in, fan_out),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

/// Learnable parameters of the agent network.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub mlp: Vec<Dense>,
}

impl AgentParams {
    pub fn names(&self) -> Vec<String> {
        let mut n: Vec<String> = ["w_q", "w_k", "w_v", "w_o"].iter().map(|s| format!("agent.{s}")).collect();
        for i in 0..self.mlp.len() {
            n.push(format!("agent.mlp{i}.weight"));
            n.push(format!("agent.mlp{i}.bias"));
        }
        n
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = vec![&self.w_q, &self.w_k, &self.w_v, &self.w_o];
        for l in &self.mlp {
            t.push(&l.weight);
            t.push(&l.bias);
        }
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = vec![&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_o];
        for l in &mut self.mlp {
            t.push(&mut l.weight);
            t.push(&mut l.bias);
        }
        t
    }
}

/// Query embedding plus candidate document embeddings.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub query: &'a [f64],
    pub docs: &'a [Vec<f64>],
}

impl<'a> From<&'a QueryDocSet> for Observation<'a> {
    fn from(q: &'a QueryDocSet) -> Self {
        Self {
            query: q.query(),
            docs: q.docs(),
        }
    }
}

/// Graph handles for bound agent parameters, in [`AgentParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct AgentVars {
    pub all: Vec<Var>,
}

/// Outputs of a batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AgentForward {
    /// Cross features, `[sum n, z]`.
    pub cross: Var,
    /// Action values, `[sum n, |A|]`.
    pub q_values: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    config: AgentConfig,
    params: AgentParams,
}

impl AgentNet {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (l, z) = (config.embed_dim, config.attn_dim);
        let w_q = glorot(rng, l, z);
        let w_k = glorot(rng, l, z);
        let w_v = glorot(rng, l, z);
        let w_o = glorot(rng, z, z);
        let widths = config.mlp_widths();
        let mlp = widths.windows(2).map(|w| Dense::init(rng, w[0], w[1])).collect();
        Ok(Self {
            config,
            params: AgentParams { w_q, w_k, w_v, w_o, mlp },
        })
    }

    pub fn from_params(config: AgentConfig, params: AgentParams) -> Result<Self> {
        config.validate()?;
        let (l, z) = (config.embed_dim, config.attn_dim);
        let mut expected: Vec<Vec<usize>> = vec![vec![l, z], vec![l, z], vec![l, z], vec![z, z]];
        for w in config.mlp_widths().windows(2) {
            expected.push(vec![w[0], w[1]]);
            expected.push(vec![1, w[1]]);
        }
        let got: Vec<&Tensor> = params.tensors();
        if got.len() != expected.len() {
            return invalid(format!(
                "agent: expected {} parameter tensors, got {}",
                expected.len(),
                got.len()
            ));
        }
        for ((t, e), name) in got.iter().zip(&expected).zip(params.names()) {
            if t.shape() != e.as_slice() {
                return invalid(format!("agent: `{name}` has shape {:?}, expected {e:?}", t.shape()));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut AgentParams {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph) -> AgentVars {
        AgentVars {
            all: self.params.tensors().into_iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    fn check_obs(&self, obs: &Observation<'_>) -> Result<()> {
        let l = self.config.embed_dim;
        if obs.docs.is_empty() {
            return invalid("agent: observation has no documents");
        }
        if obs.query.len() != l {
            return Err(Error::Shape {
                op: "agent query",
                lhs: vec![obs.query.len()],
                rhs: vec![l],
            });
        }
        if let Some(d) = obs.docs.iter().find(|d| d.len() != l) {
            return Err(Error::Shape {
                op: "agent document",
                lhs: vec![d.len()],
                rhs: vec![l],
            });
        }
        Ok(())
    }

    /// Batched forward pass; rows of the outputs follow the batch order,
    /// documents within each observation contiguous.
    pub fn forward(&self, g: &mut Graph, vars: &AgentVars, batch: &[Observation<'_>]) -> Result<AgentForward> {
        if batch.is_empty() {
            return invalid("agent: empty batch");
        }
        for obs in batch {
            self.check_obs(obs)?;
        }
        let l = self.config.embed_dim;
        let total: usize = batch.iter().map(|o| o.docs.len()).sum();

        let mut x = Vec::with_capacity(total * l);
        let mut qrep = Vec::with_capacity(total * l);
        for obs in batch {
            for d in obs.docs {
                x.extend_from_slice(d);
                qrep.extend_from_slice(obs.query);
            }
        }
        let x = g.input(Tensor::new(vec![total, l], x)?);
        let qrep = g.input(Tensor::new(vec![total, l], qrep)?);

        let [w_q, w_k, w_v, w_o] = [vars.all[0], vars.all[1], vars.all[2], vars.all[3]];
        let q_all = g.matmul(x, w_q)?;
        let k_all = g.matmul(x, w_k)?;
        let v_all = g.matmul(x, w_v)?;

        let dk = self.config.head_dim();
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut per_obs = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for obs in batch {
            let rows = offset..offset + obs.docs.len();
            let mut heads = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let cols = h * dk..(h + 1) * dk;
                let qh = g.slice(q_all, rows.clone(), cols.clone())?;
                let kh = g.slice(k_all, rows.clone(), cols.clone())?;
                let vh = g.slice(v_all, rows.clone(), cols)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scores = g.scale(scores, inv_sqrt)?;
                let attn = g.softmax(scores)?;
                heads.push(g.matmul(attn, vh)?);
            }
            per_obs.push(if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? });
            offset = rows.end;
        }
        let concat = if per_obs.len() == 1 { per_obs[0] } else { g.concat(&per_obs, 0)? };
        let mut cross = g.matmul(concat, w_o)?;
        if self.config.residual {
            cross = g.add(cross, x)?;
        }

        let mut h = g.concat(&[qrep, x, cross], 1)?;
        let layers = self.params.mlp.len();
        for i in 0..layers {
            let (w, b) = (vars.all[4 + 2 * i], vars.all[5 + 2 * i]);
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            if i + 1 < layers {
                h = g.relu(h)?;
            }
        }
        Ok(AgentForward { cross, q_values: h })
    }

    /// Cross features `e_1..e_n` (`[n, z]`) of one document set.
    pub fn cross_features(&self, docs: &[Vec<f64>]) -> Result<Tensor> {
        let dummy = vec![0.0; self.config.embed_dim];
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let out = self.forward(&mut g, &vars, &[Observation { query: &dummy, docs }])?;
        Ok(g.value(out.cross).clone())
    }

    /// Action values (`[n, |A|]`) of every document for one query.
    pub fn q_values(&self, query: &[f64], docs: &[Vec<f64>]) -> Result<Tensor> {
        let mut out = self.q_values_batch(&[Observation { query, docs }])?;
        Ok(out.remove(0))
    }

    /// Action values for several observations in one pass.
    pub fn q_values_batch(&self, batch: &[Observation<'_>]) -> Result<Vec<Tensor>> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let out = self.forward(&mut g, &vars, batch)?;
        let all = g.value(out.q_values);
        let a = self.config.actions;
        let mut res = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for obs in batch {
            let n = obs.docs.len();
            let data = all.data()[offset * a..(offset + n) * a].to_vec();
            res.push(Tensor::new(vec![n, a], data)?);
            offset += n;
        }
        Ok(res)
    }
}

/// Index (1-based) of the largest entry; ties go to the lowest index.
pub fn greedy_action(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best + 1
}

/// ε-greedy joint action: each agent independently explores uniformly
/// with probability `epsilon`, otherwise takes its greedy action.
/// Actions are 1-based scores in `1..=|A|`.
pub fn select_actions<R: Rng + ?Sized>(q_values: &Tensor, epsilon: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return invalid(format!("epsilon must lie in [0, 1], got {epsilon}"));
    }
    if !q_values.is_matrix() {
        return invalid("select_actions expects an [n, |A|] matrix");
    }
    let a = q_values.cols();
    Ok((0..q_values.rows())
        .map(|i| {
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                rng.gen_range(1..=a)
            } else {
                greedy_action(q_values.row_slice(i))
            }
        })
        .collect())
}

/// Linear decay `ε(t) = max(floor, start - t / horizon)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSchedule {
    pub start: f64,
    pub floor: f64,
    /// Steps over which ε falls by one unit.
    pub horizon: u64,
}

impl ExplorationSchedule {
    pub fn new(horizon: u64) -> Result<Self> {
        let s = Self {
            start: 1.0,
            floor: 0.05,
            horizon,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return invalid("exploration horizon must be positive");
        }
        if !(0.0..=1.0).contains(&self.floor) || !(self.floor..=1.0).contains(&self.start) {
            return invalid("exploration schedule needs 0 <= floor <= start <= 1");
        }
        Ok(())
    }

    pub fn epsilon(&self, step: u64) -> f64 {
        (self.start - step as f64 / self.horizon as f64).max(self.floor)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny_config() -> AgentConfig {
        AgentConfig {
            embed_dim: 4,
            attn_dim: 8,
            heads: 2,
            hidden: vec![6],
            actions: 5,
            residual: false,
        }
    }

    fn random_docs(rng: &mut ChaCha8Rng, n: usize, l: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..l).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn greedy_ties_go_low() {
        assert_eq!(greedy_action(&[0.1, 0.9, 0.3]), 2);
        assert_eq!(greedy_action(&[0.5, 0.5, 0.1]), 1);
        let q = Tensor::from_rows(&[vec![0.1, 0.9, 0.3], vec![0.5, 0.5, 0.1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_actions(&q, 0.0, &mut rng).unwrap(), vec![2, 1]);
        assert!(select_actions(&q, 1.5, &mut rng).is_err());
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let q = Tensor::zeros(&[1, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 5];
        for _ in 0..10_000 {
            counts[select_actions(&q, 1.0, &mut rng).unwrap()[0] - 1] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.2).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn schedule_endpoints() {
        let s = ExplorationSchedule::new(1000).unwrap();
        assert_eq!(s.epsilon(0), 1.0);
        assert!((s.epsilon(950) - 0.05).abs() < 1e-12);
        assert_eq!(s.epsilon(1000), 0.05);
        assert_eq!(s.epsilon(5000), 0.05);
        let mut prev = 1.0;
        for t in 0..1200 {
            let e = s.epsilon(t);
            assert!(e <= prev);
            prev = e;
        }
        assert!(ExplorationSchedule::new(0).is_err());
    }

    #[test]
    fn single_document_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = AgentNet::new(tiny_config(), &mut rng).unwrap();
        let docs = random_docs(&mut rng, 1, 4);
        let e = net.cross_features(&docs).unwrap();
        // e = (x W_V) W_O when the only attention weight is 1
        let p = net.params();
        let mut v = [0.0; 8];
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = (0..4).map(|i| docs[0][i] * p.w_v.at(i, j)).sum();
        }
        for c in 0..8 {
            let expect: f64 = (0..8).map(|j| v[j] * p.w_o.at(j, c)).sum();
            assert!((e.at(0, c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_documents_get_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = AgentNet::new(tiny_config(), &mut rng).unwrap();
        let mut docs = random_docs(&mut rng, 3, 4);
        docs[2] = docs[0].clone();
        let q: Vec<f64> = vec![0.3, -0.2, 0.1, 0.5];
        let qv = net.q_values(&q, &docs).unwrap();
        assert_eq!(qv.shape(), &[3, 5]);
        assert_eq!(qv.row_slice(0), qv.row_slice(2));
    }

    #[test]
    fn batch_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = AgentNet::new(tiny_config(), &mut rng).unwrap();
        let d1 = random_docs(&mut rng, 3, 4);
        let d2 = random_docs(&mut rng, 2, 4);
        let q = vec![0.1; 4];
        let batch = net
            .q_values_batch(&[Observation { query: &q, docs: &d1 }, Observation { query: &q, docs: &d2 }])
            .unwrap();
        let single = net.q_values(&q, &d2).unwrap();
        for (a, b) in batch[1].data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny_config();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.actions = 1;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.residual = true;
        assert!(c.validate().is_err());
        c.attn_dim = 4;
        assert!(c.validate().is_ok());
        let p = AgentConfig::small_profile(32);
        assert_eq!((p.heads, p.attn_dim, p.actions), (4, 64, 30));
        assert_eq!(AgentConfig::large_profile(32).attn_dim, 256);
    }

    #[test]
    fn mismatched_query_dimension_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = AgentNet::new(tiny_config(), &mut rng).unwrap();
        let docs = random_docs(&mut rng, 2, 4);
        assert!(net.q_values(&[0.0; 3], &docs).is_err());
        assert!(net.q_values(&[0.0; 4], &[]).is_err());
    }
}
