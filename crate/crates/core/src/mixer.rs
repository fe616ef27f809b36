//! Monotonic mixing network.
//!
//! Hypernetworks read the global state (query plus every document
//! embedding) and emit the weights of a one-hidden-layer network that maps
//! the per-agent values to a team value. Taking the absolute value of the
//! generated weights keeps the team value non-decreasing in every agent value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentnet::{Dense, Observation};
use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};

/// How generated mixing weights are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConstraint {
    /// Absolute value; guarantees monotonic mixing.
    #[default]
    Abs,
    /// Raw affine output. Only useful to show what breaks without the constraint.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixerConfig {
    /// Number of agents (documents per query).
    pub agents: usize,
    pub embed_dim: usize,
    /// Width of the mixing hidden layer.
    pub hidden: usize,
    #[serde(default)]
    pub constraint: WeightConstraint,
}

impl MixerConfig {
    pub fn new(agents: usize, embed_dim: usize) -> Self {
        Self {
            agents,
            embed_dim,
            hidden: 32,
            constraint: WeightConstraint::Abs,
        }
    }

    pub fn state_dim(&self) -> usize {
        (self.agents + 1) * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return invalid("mixer: agents, embed_dim and hidden must be positive");
        }
        Ok(())
    }
}

/// Global state `[q, d_1, ..., d_n]` as one flat vector.
pub fn state_vector(obs: &Observation<'_>) -> Vec<f64> {
    let mut s = Vec::with_capacity((obs.docs.len() + 1) * obs.query.len());
    s.extend_from_slice(obs.query);
    for d in obs.docs {
        s.extend_from_slice(d);
    }
    s
}

/// The four hypernetworks.
#[derive(Debug, Clone, PartialEq)]
pub struct MixerParams {
    /// State to first-layer weights (`hidden * agents` outputs, row-major `[hidden, agents]`).
    pub hyper_w1: Dense,
    pub hyper_b1: Dense,
    pub hyper_w2: Dense,
    pub hyper_b2: Dense,
}

impl MixerParams {
    pub fn names(&self) -> Vec<String> {
        ["hyper_w1", "hyper_b1", "hyper_w2", "hyper_b2"]
            .iter()
            .flat_map(|h| [format!("mixer.{h}.weight"), format!("mixer.{h}.bias")])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        [&self.hyper_w1, &self.hyper_b1, &self.hyper_w2, &self.hyper_b2]
            .into_iter()
            .flat_map(|d| [&d.weight, &d.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        [&mut self.hyper_w1, &mut self.hyper_b1, &mut self.hyper_w2, &mut self.hyper_b2]
            .into_iter()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MixerVars {
    pub all: Vec<Var>,
}

/// Concrete mixing network for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingWeights {
    /// `[hidden, agents]`.
    pub w1: Tensor,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MixingWeights {
    pub fn apply(&self, agent_values: &[f64]) -> Result<f64> {
        let n = self.w1.cols();
        if agent_values.len() != n {
            return Err(Error::Shape {
                op: "mix",
                lhs: vec![agent_values.len()],
                rhs: vec![n],
            });
        }
        let mut total = self.b2;
        for h in 0..self.w1.rows() {
            let pre: f64 = self.b1[h]
                + self
                    .w1
                    .row_slice(h)
                    .iter()
                    .zip(agent_values)
                    .map(|(w, q)| w * q)
                    .sum::<f64>();
            let act = if pre > 0.0 { pre } else { pre.exp_m1() };
            total += self.w2[h] * act;
        }
        Ok(total)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    config: MixerConfig,
    params: MixerParams,
}

impl Mixer {
    pub fn new<R: Rng + ?Sized>(config: MixerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (s, h, n) = (config.state_dim(), config.hidden, config.agents);
        let params = MixerParams {
            hyper_w1: Dense::init(rng, s, h * n),
            hyper_b1: Dense::init(rng, s, h),
            hyper_w2: Dense::init(rng, s, h),
            hyper_b2: Dense::init(rng, s, 1),
        };
        Ok(Self { config, params })
    }

    pub fn from_params(config: MixerConfig, params: MixerParams) -> Result<Self> {
        config.validate()?;
        let (s, h, n) = (config.state_dim(), config.hidden, config.agents);
        let expected = [
            [s, h * n],
            [1, h * n],
            [s, h],
            [1, h],
            [s, h],
            [1, h],
            [s, 1],
            [1, 1],
        ];
        for ((t, e), name) in params.tensors().iter().zip(&expected).zip(params.names()) {
            if t.shape() != e.as_slice() {
                return invalid(format!("mixer: `{name}` has shape {:?}, expected {e:?}", t.shape()));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MixerConfig {
        &self.config
    }

    pub fn params(&self) -> &MixerParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MixerParams {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph) -> MixerVars {
        MixerVars {
            all: self.params.tensors().into_iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    fn constrain(&self, g: &mut Graph, v: Var) -> Result<Var> {
        match self.config.constraint {
            WeightConstraint::Abs => g.abs(v),
            WeightConstraint::None => Ok(v),
        }
    }

    /// Batched team values.
    ///
    /// `states` is `[b, state_dim]`; `agent_values` is `[b * agents, 1]`
    /// with each sample's agents contiguous. Returns `[b, 1]`.
    pub fn forward(&self, g: &mut Graph, vars: &MixerVars, states: Var, agent_values: Var) -> Result<Var> {
        let (n, h) = (self.config.agents, self.config.hidden);
        let sv = g.value(states);
        if !sv.is_matrix() || sv.cols() != self.config.state_dim() {
            return Err(Error::Shape {
                op: "mixer state",
                lhs: sv.shape().to_vec(),
                rhs: vec![sv.rows(), self.config.state_dim()],
            });
        }
        let b = sv.rows();
        let qv = g.value(agent_values);
        if qv.shape() != [b * n, 1] {
            return Err(Error::Shape {
                op: "mixer agent values",
                lhs: qv.shape().to_vec(),
                rhs: vec![b * n, 1],
            });
        }

        let hyper = |g: &mut Graph, i: usize| -> Result<Var> {
            let x = g.matmul(states, vars.all[2 * i])?;
            g.add(x, vars.all[2 * i + 1])
        };
        let w1 = hyper(g, 0)?;
        let w1 = self.constrain(g, w1)?;
        let b1 = hyper(g, 1)?;
        let w2 = hyper(g, 2)?;
        let w2 = self.constrain(g, w2)?;
        let b2 = hyper(g, 3)?;

        let mut totals = Vec::with_capacity(b);
        for s in 0..b {
            let w1s = g.slice(w1, s..s + 1, 0..h * n)?;
            let w1s = g.reshape(w1s, &[h, n])?;
            let qs = g.slice(agent_values, s * n..(s + 1) * n, 0..1)?;
            let hidden = g.matmul(w1s, qs)?;
            let b1s = g.slice(b1, s..s + 1, 0..h)?;
            let b1s = g.reshape(b1s, &[h, 1])?;
            let hidden = g.add(hidden, b1s)?;
            let hidden = g.elu(hidden)?;
            let w2s = g.slice(w2, s..s + 1, 0..h)?;
            let out = g.matmul(w2s, hidden)?;
            let b2s = g.slice(b2, s..s + 1, 0..1)?;
            totals.push(g.add(out, b2s)?);
        }
        if totals.len() == 1 {
            Ok(totals[0])
        } else {
            g.concat(&totals, 0)
        }
    }

    /// Generated mixing weights for one state, computed directly.
    pub fn mixing_weights(&self, state: &[f64]) -> Result<MixingWeights> {
        let (n, h) = (self.config.agents, self.config.hidden);
        if state.len() != self.config.state_dim() {
            return Err(Error::Shape {
                op: "mixer state",
                lhs: vec![state.len()],
                rhs: vec![self.config.state_dim()],
            });
        }
        let affine = |d: &Dense| -> Vec<f64> {
            let out = d.weight.cols();
            let mut y = d.bias.data().to_vec();
            for (i, &x) in state.iter().enumerate() {
                if x != 0.0 {
                    for (yj, w) in y.iter_mut().zip(d.weight.row_slice(i)) {
                        *yj += x * w;
                    }
                }
            }
            debug_assert_eq!(y.len(), out);
            y
        };
        let fix = |v: Vec<f64>| match self.config.constraint {
            WeightConstraint::Abs => v.into_iter().map(f64::abs).collect(),
            WeightConstraint::None => v,
        };
        let w1 = Tensor::new(vec![h, n], fix(affine(&self.params.hyper_w1)))?;
        Ok(MixingWeights {
            w1,
            b1: affine(&self.params.hyper_b1),
            w2: fix(affine(&self.params.hyper_w2)),
            b2: affine(&self.params.hyper_b2)[0],
        })
    }

    /// Team value of one state and one vector of agent values.
    pub fn mix(&self, state: &[f64], agent_values: &[f64]) -> Result<f64> {
        self.mixing_weights(state)?.apply(agent_values)
    }
}

/// Smallest central finite-difference slope `dQ_tot / dQ_i` found at `agent_values`.
pub fn min_partial_slope(weights: &MixingWeights, agent_values: &[f64], step: f64) -> Result<f64> {
    let mut min = f64::INFINITY;
    let mut probe = agent_values.to_vec();
    for i in 0..agent_values.len() {
        probe[i] = agent_values[i] + step;
        let up = weights.apply(&probe)?;
        probe[i] = agent_values[i] - step;
        let down = weights.apply(&probe)?;
        probe[i] = agent_values[i];
        min = min.min((up - down) / (2.0 * step));
    }
    Ok(min)
}

/// Outcome of comparing the decentralized greedy joint action with the
/// best joint action under the team value.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxCheck {
    pub greedy_joint: Vec<usize>,
    pub greedy_value: f64,
    pub best_joint: Vec<usize>,
    pub best_value: f64,
}

impl ArgmaxCheck {
    /// The greedy joint action attains the maximum team value within `tol`.
    pub fn consistent(&self, tol: f64) -> bool {
        self.greedy_value >= self.best_value - tol
    }
}

/// Enumerates every joint action (`|A|^n`, capped at 10^6) and compares the
/// team-value maximizer with the per-agent argmax. `q_values` is `[n, |A|]`.
pub fn argmax_consistency(weights: &MixingWeights, q_values: &Tensor) -> Result<ArgmaxCheck> {
    let (n, a) = (q_values.rows(), q_values.cols());
    if n != weights.w1.cols() {
        return Err(Error::Shape {
            op: "argmax check",
            lhs: q_values.shape().to_vec(),
            rhs: vec![weights.w1.cols(), a],
        });
    }
    let combos = (a as f64).powi(n as i32);
    if combos > 1e6 {
        return invalid(format!("argmax check would enumerate {combos} joint actions"));
    }
    let value_of = |joint: &[usize]| -> Result<f64> {
        let qs: Vec<f64> = joint.iter().enumerate().map(|(i, &c)| q_values.at(i, c)).collect();
        weights.apply(&qs)
    };
    let greedy: Vec<usize> = (0..n).map(|i| crate::agentnet::greedy_action(q_values.row_slice(i)) - 1).collect();
    let greedy_value = value_of(&greedy)?;

    let mut joint = vec![0usize; n];
    let mut best = joint.clone();
    let mut best_value = value_of(&joint)?;
    loop {
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(ArgmaxCheck {
                    greedy_joint: greedy.iter().map(|c| c + 1).collect(),
                    greedy_value,
                    best_joint: best.iter().map(|c| c + 1).collect(),
                    best_value,
                });
            }
            i -= 1;
            joint[i] += 1;
            if joint[i] < a {
                break;
            }
            joint[i] = 0;
        }
        let v = value_of(&joint)?;
        if v > best_value {
            best_value = v;
            best = joint.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn mixer(constraint: WeightConstraint, seed: u64) -> Mixer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = MixerConfig {
            agents: 3,
            embed_dim: 2,
            hidden: 4,
            constraint,
        };
        Mixer::new(config, &mut rng).unwrap()
    }

    #[test]
    fn hand_built_weights() {
        let w = MixingWeights {
            w1: Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, 0.0]]).unwrap(),
            b1: vec![0.0, -1.0],
            w2: vec![1.0, 2.0],
            b2: 0.25,
        };
        // hidden = [1*1 + 2*1, 0.5 - 1] = [3, -0.5]; elu(-0.5) = e^-0.5 - 1
        let expect = 3.0 + 2.0 * ((-0.5f64).exp() - 1.0) + 0.25;
        assert!((w.apply(&[1.0, 1.0]).unwrap() - expect).abs() < 1e-12);
        assert!(w.apply(&[1.0]).is_err());
    }

    #[test]
    fn graph_matches_direct() {
        let m = mixer(WeightConstraint::Abs, 5);
        let states = [vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8], vec![0.5; 8]];
        let qs = [vec![0.2, -1.0, 0.3], vec![1.0, 2.0, -0.5]];
        let mut g = Graph::new();
        let vars = m.bind(&mut g);
        let s = g.input(Tensor::from_rows(&states).unwrap());
        let q = g.input(Tensor::column(&qs.concat()).unwrap());
        let out = m.forward(&mut g, &vars, s, q).unwrap();
        for i in 0..2 {
            let direct = m.mix(&states[i], &qs[i]).unwrap();
            assert!((g.value(out).at(i, 0) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn abs_weights_are_non_negative() {
        let m = mixer(WeightConstraint::Abs, 6);
        let w = m.mixing_weights(&[0.3; 8]).unwrap();
        assert!(w.w1.data().iter().all(|&x| x >= 0.0));
        assert!(w.w2.iter().all(|&x| x >= 0.0));
        assert!(min_partial_slope(&w, &[0.1, -0.4, 2.0], 1e-5).unwrap() >= -1e-9);
    }

    #[test]
    fn unconstrained_weights_can_go_negative() {
        let found = (0..20u64).any(|seed| {
            let w = mixer(WeightConstraint::None, seed).mixing_weights(&[0.3; 8]).unwrap();
            w.w1.data().iter().any(|&x| x < 0.0)
        });
        assert!(found);
    }

    #[test]
    fn enumeration_finds_planted_maximum() {
        let w = MixingWeights {
            w1: Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            b1: vec![0.0],
            w2: vec![1.0],
            b2: 0.0,
        };
        // Agent 2 has a negative weight, so its smallest value wins.
        let q = Tensor::from_rows(&[vec![0.0, 1.0, 0.5], vec![0.0, 1.0, 0.5]]).unwrap();
        let c = argmax_consistency(&w, &q).unwrap();
        assert_eq!(c.greedy_joint, vec![2, 2]);
        assert_eq!(c.best_joint, vec![2, 1]);
        assert!(!c.consistent(1e-9));
    }

    #[test]
    fn rejects_wrong_state_length() {
        let m = mixer(WeightConstraint::Abs, 1);
        assert!(m.mix(&[0.0; 7], &[0.0; 3]).is_err());
    }
}
