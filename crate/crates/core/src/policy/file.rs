//! Policy checkpoint container.
//!
//! JSON document:
//!
//! ```json
//! {
//!   "format": "comm-rl.policy",
//!   "version": 1,
//!   "feature_dim": 14,
//!   "hidden": null,
//!   "audio_vocab": ["drum", ..., "none"],
//!   "visual_vocab": ["drum", ...],
//!   "answer_vocab": ["yes", "no", "drum", ..., "<null>"],
//!   "tensors": [
//!     {"name": "audio.weight", "shape": [7, 14], "data": [...]},
//!     {"name": "audio.bias", "shape": [7], "data": [...]},
//!     ...
//!     {"name": "malform.logit", "shape": [], "data": [0.0]}
//!   ]
//! }
//! ```
//!
//! Weights are row-major 64-bit floats; rows index the output vocabulary
//! (or trunk unit) and columns the input. With a hidden trunk the first two
//! tensors are `trunk.weight` and `trunk.bias`.

use serde::{Deserialize, Serialize};

use super::{Params, PolicyError, PolicyShape, ToyPolicy, Vocab};

pub const POLICY_FORMAT: &str = "comm-rl.policy";
pub const POLICY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub hidden: Option<usize>,
    pub audio_vocab: Vec<String>,
    pub visual_vocab: Vec<String>,
    pub answer_vocab: Vec<String>,
    pub tensors: Vec<NamedTensor>,
}

fn tensor_plan(shape: &PolicyShape) -> Vec<(String, Vec<usize>, usize)> {
    let l = shape.layout();
    let mut plan = Vec::new();
    let mut dense = |name: &str, slot: super::DenseSlot| {
        plan.push((format!("{name}.weight"), vec![slot.rows, slot.cols], slot.rows * slot.cols));
        plan.push((format!("{name}.bias"), vec![slot.rows], slot.rows));
    };
    if let Some(t) = l.trunk {
        dense("trunk", t);
    }
    dense("audio", l.audio);
    dense("visual", l.visual);
    dense("answer", l.answer);
    plan.push(("malform.logit".to_string(), vec![], 1));
    plan
}

impl From<&ToyPolicy> for PolicyFile {
    fn from(p: &ToyPolicy) -> Self {
        let mut rest = p.params().as_slice();
        let tensors = tensor_plan(p.shape())
            .into_iter()
            .map(|(name, shape, n)| {
                let (head, tail) = rest.split_at(n);
                rest = tail;
                NamedTensor { name, shape, data: head.to_vec() }
            })
            .collect();
        PolicyFile {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            feature_dim: p.shape().feature_dim,
            hidden: p.shape().hidden,
            audio_vocab: p.vocab().audio.clone(),
            visual_vocab: p.vocab().visual.clone(),
            answer_vocab: p.vocab().answer.clone(),
            tensors,
        }
    }
}

impl TryFrom<PolicyFile> for ToyPolicy {
    type Error = PolicyError;

    fn try_from(f: PolicyFile) -> Result<Self, PolicyError> {
        if f.format != POLICY_FORMAT || f.version != POLICY_VERSION {
            return Err(PolicyError::InvalidFile(format!(
                "unsupported format {} v{}",
                f.format, f.version
            )));
        }
        let shape = PolicyShape {
            feature_dim: f.feature_dim,
            hidden: f.hidden,
            audio: f.audio_vocab.len(),
            visual: f.visual_vocab.len(),
            answer: f.answer_vocab.len(),
        };
        let plan = tensor_plan(&shape);
        if plan.len() != f.tensors.len() {
            return Err(PolicyError::InvalidFile(format!(
                "expected {} tensors, found {}",
                plan.len(),
                f.tensors.len()
            )));
        }
        let mut data = Vec::with_capacity(shape.layout().len);
        for ((name, dims, n), t) in plan.iter().zip(&f.tensors) {
            if &t.name != name || &t.shape != dims || t.data.len() != *n {
                return Err(PolicyError::InvalidFile(format!("tensor {} does not match expected {name} {dims:?}", t.name)));
            }
            data.extend_from_slice(&t.data);
        }
        let vocab = Vocab {
            audio: f.audio_vocab,
            visual: f.visual_vocab,
            answer: f.answer_vocab,
        };
        ToyPolicy::from_parts(shape, vocab, Params::from_vec(data))
    }
}
