use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentnet::{AgentConfig, AgentNet, AgentParams, Dense};
use crate::diffcore::{Checkpoint, Tensor};
use crate::error::{Error, Result};
use crate::mixer::{Mixer, MixerConfig, MixerParams, WeightConstraint};

/// Architecture choices that do not depend on the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub attn_dim: usize,
    pub heads: usize,
    pub hidden: Vec<usize>,
    /// Action space size; `None` uses the number of documents per query.
    pub actions: Option<usize>,
    pub mixer_hidden: usize,
    pub residual: bool,
    pub constraint: WeightConstraint,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            attn_dim: 64,
            heads: 4,
            hidden: vec![128, 128],
            actions: None,
            mixer_hidden: 32,
            residual: false,
            constraint: WeightConstraint::Abs,
        }
    }
}

impl ModelSpec {
    pub fn agent_config(&self, embed_dim: usize, docs: usize) -> AgentConfig {
        AgentConfig {
            embed_dim,
            attn_dim: self.attn_dim,
            heads: self.heads,
            hidden: self.hidden.clone(),
            actions: self.actions.unwrap_or(docs),
            residual: self.residual,
        }
    }

    pub fn mixer_config(&self, embed_dim: usize, docs: usize) -> MixerConfig {
        MixerConfig {
            agents: docs,
            embed_dim,
            hidden: self.mixer_hidden,
            constraint: self.constraint,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    agent: AgentConfig,
    mixer: MixerConfig,
    #[serde(default)]
    info: serde_json::Value,
}

/// Agent network plus mixing network, trained jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct QmixModel {
    pub agent: AgentNet,
    pub mixer: Mixer,
}

impl QmixModel {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, embed_dim: usize, docs: usize, rng: &mut R) -> Result<Self> {
        let agent = AgentNet::new(spec.agent_config(embed_dim, docs), rng)?;
        let mixer = Mixer::new(spec.mixer_config(embed_dim, docs), rng)?;
        Ok(Self { agent, mixer })
    }

    pub fn names(&self) -> Vec<String> {
        let mut n = self.agent.params().names();
        n.extend(self.mixer.params().names());
        n
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.agent.params().tensors();
        t.extend(self.mixer.params().tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.agent.params_mut().tensors_mut();
        t.extend(self.mixer.params_mut().tensors_mut());
        t
    }

    /// Number of agent tensors; the rest belong to the mixer.
    pub fn agent_tensor_count(&self) -> usize {
        self.agent.params().tensors().len()
    }

    /// Serializes parameters; `info` is stored alongside the architecture.
    pub fn to_checkpoint(&self, info: serde_json::Value) -> Result<Checkpoint> {
        let meta = Meta {
            agent: self.agent.config().clone(),
            mixer: self.mixer.config().clone(),
            info,
        };
        Ok(Checkpoint {
            meta: serde_json::to_string(&meta)?,
            tensors: self.names().into_iter().zip(self.tensors().into_iter().cloned()).collect(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: Meta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Checkpoint(format!("unreadable model metadata: {e}")))?;
        let take = |name: &str| -> Result<Tensor> {
            ckpt.get(name)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let dense = |prefix: &str| -> Result<Dense> {
            Ok(Dense {
                weight: take(&format!("{prefix}.weight"))?,
                bias: take(&format!("{prefix}.bias"))?,
            })
        };
        let layers = meta.agent.hidden.len() + 1;
        let agent_params = AgentParams {
            w_q: take("agent.w_q")?,
            w_k: take("agent.w_k")?,
            w_v: take("agent.w_v")?,
            w_o: take("agent.w_o")?,
            mlp: (0..layers).map(|i| dense(&format!("agent.mlp{i}"))).collect::<Result<_>>()?,
        };
        let mixer_params = MixerParams {
            hyper_w1: dense("mixer.hyper_w1")?,
            hyper_b1: dense("mixer.hyper_b1")?,
            hyper_w2: dense("mixer.hyper_w2")?,
            hyper_b2: dense("mixer.hyper_b2")?,
        };
        let model = Self {
            agent: AgentNet::from_params(meta.agent, agent_params)?,
            mixer: Mixer::from_params(meta.mixer, mixer_params)?,
        };
        if model.names().len() != ckpt.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, file has {}",
                model.names().len(),
                ckpt.tensors.len()
            )));
        }
        Ok(model)
    }

    /// The `info` value stored by [`QmixModel::to_checkpoint`].
    pub fn checkpoint_info(ckpt: &Checkpoint) -> Result<serde_json::Value> {
        let meta: Meta = serde_json::from_str(&ckpt.meta)
            .map_err(|e| Error::Checkpoint(format!("unreadable model metadata: {e}")))?;
        Ok(meta.info)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let spec = ModelSpec {
            attn_dim: 8,
            heads: 2,
            hidden: vec![6, 5],
            ..ModelSpec::default()
        };
        let model = QmixModel::new(&spec, 4, 3, &mut rng).unwrap();
        assert_eq!(model.agent.config().actions, 3);
        let ckpt = model.to_checkpoint(serde_json::json!({"epoch": 2})).unwrap();
        let back = QmixModel::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(QmixModel::checkpoint_info(&ckpt).unwrap()["epoch"], 2);

        let mut broken = ckpt.clone();
        broken.tensors.retain(|(n, _)| n != "agent.w_o");
        assert!(QmixModel::from_checkpoint(&broken).is_err());
    }
}
