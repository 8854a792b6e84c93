//! Structured-response toy policy.
//!
//! The policy factorizes a response into four independent choices given a
//! feature vector: an audio claim, a visual claim, an answer (categorical
//! heads) and a Bernoulli "malformed output" flag driven by one scalar logit.
//! Each head is a linear layer, optionally on top of a shared tanh trunk.
//! Every quantity the trainer needs (joint log-probability, per-head
//! log-probabilities, answer entropy, KL to a snapshot) has an exact
//! analytic gradient.

mod file;
mod params;
pub mod render;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{PolicyFile, NamedTensor, POLICY_FORMAT, POLICY_VERSION};
pub use params::{DenseSlot, Layout, Params, PolicyShape};

use crate::response_format::{serialize_response, StructuredResponse, ANSWER_CLOSE};

/// Number of sampled choices per response; the NLL is averaged over them.
pub const RESPONSE_POSITIONS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("feature vector has {got} entries, policy expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{head} index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { head: Head, index: usize, size: usize },
    #[error("no demonstrations to fit")]
    EmptyDataset,
    #[error("invalid policy file: {0}")]
    InvalidFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Audio,
    Visual,
    Answer,
    Malform,
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Head::Audio => "audio",
            Head::Visual => "visual",
            Head::Answer => "answer",
            Head::Malform => "malform",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub audio: Vec<String>,
    pub visual: Vec<String>,
    /// Must contain [`render::NULL_ANSWER`].
    pub answer: Vec<String>,
}

impl Vocab {
    pub fn answer_index(&self, token: &str) -> Option<usize> {
        self.answer.iter().position(|t| t == token)
    }

    pub fn audio_index(&self, token: &str) -> Option<usize> {
        self.audio.iter().position(|t| t == token)
    }

    pub fn visual_index(&self, token: &str) -> Option<usize> {
        self.visual.iter().position(|t| t == token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Choices {
    pub audio: usize,
    pub visual: usize,
    pub answer: usize,
    pub malformed: bool,
}

/// A categorical distribution kept in both probability and log space.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { probs, log_probs }
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, l)| p * l)
            .sum::<f64>()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF draw from one uniform variate.
    fn draw(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last_positive
    }

    /// `d KL(self || other) / d logits(self)`, together with the KL.
    fn kl_logit_grad(&self, other: &Categorical) -> (f64, Vec<f64>) {
        let kl: f64 = self
            .probs
            .iter()
            .zip(self.log_probs.iter().zip(&other.log_probs))
            .map(|(p, (lp, lq))| p * (lp - lq))
            .sum();
        let grad = self
            .probs
            .iter()
            .zip(self.log_probs.iter().zip(&other.log_probs))
            .map(|(p, (lp, lq))| p * (lp - lq - kl))
            .collect();
        (kl, grad)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// All head distributions for one feature vector, plus the trunk
/// activations needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    pub trunk: Option<Vec<f64>>,
    pub audio: Categorical,
    pub visual: Categorical,
    pub answer: Categorical,
    pub malform_logit: f64,
    pub malform_prob: f64,
}

impl Forward {
    pub fn head_log_probs(&self, c: &Choices) -> [f64; 4] {
        let m = self.malform_logit;
        let lm = if c.malformed { -softplus(-m) } else { -softplus(m) };
        [
            self.audio.log_probs[c.audio],
            self.visual.log_probs[c.visual],
            self.answer.log_probs[c.answer],
            lm,
        ]
    }
}

/// Gradient of some scalar with respect to every head's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrads {
    pub audio: Vec<f64>,
    pub visual: Vec<f64>,
    pub answer: Vec<f64>,
    pub malform: f64,
}

impl LogitGrads {
    pub fn zeros(shape: &PolicyShape) -> Self {
        Self {
            audio: vec![0.0; shape.audio],
            visual: vec![0.0; shape.visual],
            answer: vec![0.0; shape.answer],
            malform: 0.0,
        }
    }

    /// Gradient of `sum_h weights[h] * log p_h(choice_h)`, heads ordered
    /// audio, visual, answer, malform.
    pub fn log_prob(fwd: &Forward, c: &Choices, weights: [f64; 4]) -> Self {
        let onehot_minus = |dist: &Categorical, k: usize, w: f64| -> Vec<f64> {
            dist.probs
                .iter()
                .enumerate()
                .map(|(i, p)| w * (if i == k { 1.0 } else { 0.0 } - p))
                .collect()
        };
        let flag = if c.malformed { 1.0 } else { 0.0 };
        Self {
            audio: onehot_minus(&fwd.audio, c.audio, weights[0]),
            visual: onehot_minus(&fwd.visual, c.visual, weights[1]),
            answer: onehot_minus(&fwd.answer, c.answer, weights[2]),
            malform: weights[3] * (flag - fwd.malform_prob),
        }
    }

    /// Gradient of the answer-head entropy, scaled by `weight`.
    pub fn answer_entropy(fwd: &Forward, weight: f64) -> Self {
        let h = fwd.answer.entropy();
        let mut g = Self {
            audio: vec![0.0; fwd.audio.probs.len()],
            visual: vec![0.0; fwd.visual.probs.len()],
            answer: Vec::with_capacity(fwd.answer.probs.len()),
            malform: 0.0,
        };
        for (p, l) in fwd.answer.probs.iter().zip(&fwd.answer.log_probs) {
            g.answer.push(if *p > 0.0 { -weight * p * (l + h) } else { 0.0 });
        }
        g
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &LogitGrads) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
        add(&mut self.audio, &other.audio);
        add(&mut self.visual, &other.visual);
        add(&mut self.answer, &other.answer);
        self.malform += alpha * other.malform;
    }
}

/// Exact KL between two policies' factorized response distributions at
/// fixed features, `KL(current || snapshot)`, with its logit gradient.
pub fn response_kl(current: &Forward, snapshot: &Forward) -> (f64, LogitGrads) {
    let (ka, ga) = current.audio.kl_logit_grad(&snapshot.audio);
    let (kv, gv) = current.visual.kl_logit_grad(&snapshot.visual);
    let (kn, gn) = current.answer.kl_logit_grad(&snapshot.answer);
    let p = current.malform_prob;
    let (lp1, lp0) = (-softplus(-current.malform_logit), -softplus(current.malform_logit));
    let (lq1, lq0) = (-softplus(-snapshot.malform_logit), -softplus(snapshot.malform_logit));
    let km = p * (lp1 - lq1) + (1.0 - p) * (lp0 - lq0);
    // dKL/dm = p(1-p) * (m - m_snapshot)
    let gm = p * (1.0 - p) * (current.malform_logit - snapshot.malform_logit);
    (
        ka + kv + kn + km,
        LogitGrads {
            audio: ga,
            visual: gv,
            answer: gn,
            malform: gm,
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledResponse {
    pub response_text: String,
    pub choices: Choices,
    /// Joint log-probability of the four choices.
    pub log_prob: f64,
    /// Per-choice log-probabilities (audio, visual, answer, malform).
    pub head_log_probs: [f64; 4],
    pub answer_distribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupReport {
    pub initial_nll: f64,
    pub final_nll: f64,
    pub nll_curve: Vec<f64>,
}

/// A demonstration for supervised fitting: features and the gold choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub features: Vec<f64>,
    pub choices: Choices,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    shape: PolicyShape,
    vocab: Vocab,
    params: Params,
}

impl ToyPolicy {
    /// Zero-initialized heads (uniform distributions, malform probability
    /// 0.5). With a hidden trunk, the trunk weights are drawn from
    /// `N(0, 1/feature_dim)` using `init_seed`.
    pub fn new(vocab: Vocab, feature_dim: usize, hidden: Option<usize>, init_seed: u64) -> Self {
        let shape = PolicyShape {
            feature_dim,
            hidden,
            audio: vocab.audio.len(),
            visual: vocab.visual.len(),
            answer: vocab.answer.len(),
        };
        let layout = shape.layout();
        let mut params = Params::zeros(layout.len);
        if let Some(t) = layout.trunk {
            let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
            let normal = Normal::new(0.0, (1.0 / feature_dim.max(1) as f64).sqrt()).expect("valid std");
            for w in &mut params.as_mut_slice()[t.weight..t.bias] {
                *w = normal.sample(&mut rng);
            }
        }
        Self { shape, vocab, params }
    }

    pub fn from_parts(shape: PolicyShape, vocab: Vocab, params: Params) -> Result<Self, PolicyError> {
        if shape.audio != vocab.audio.len() || shape.visual != vocab.visual.len() || shape.answer != vocab.answer.len() {
            return Err(PolicyError::InvalidFile("vocabulary sizes disagree with shape".into()));
        }
        if params.len() != shape.layout().len {
            return Err(PolicyError::InvalidFile(format!(
                "expected {} parameters, found {}",
                shape.layout().len,
                params.len()
            )));
        }
        Ok(Self { shape, vocab, params })
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn layout(&self) -> Layout {
        self.shape.layout()
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn zero_grad(&self) -> Params {
        Params::zeros(self.params.len())
    }

    fn check_features(&self, features: &[f64]) -> Result<(), PolicyError> {
        if features.len() != self.shape.feature_dim {
            return Err(PolicyError::DimensionMismatch {
                expected: self.shape.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn check_choices(&self, c: &Choices) -> Result<(), PolicyError> {
        for (head, index, size) in [
            (Head::Audio, c.audio, self.shape.audio),
            (Head::Visual, c.visual, self.shape.visual),
            (Head::Answer, c.answer, self.shape.answer),
        ] {
            if index >= size {
                return Err(PolicyError::IndexOutOfRange { head, index, size });
            }
        }
        Ok(())
    }

    fn dense(&self, slot: &DenseSlot, input: &[f64]) -> Vec<f64> {
        let p = self.params.as_slice();
        (0..slot.rows)
            .map(|r| {
                let row = &p[slot.weight + r * slot.cols..slot.weight + (r + 1) * slot.cols];
                p[slot.bias + r] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, features: &[f64]) -> Result<Forward, PolicyError> {
        self.check_features(features)?;
        let layout = self.layout();
        let trunk = layout
            .trunk
            .map(|t| self.dense(&t, features).into_iter().map(f64::tanh).collect::<Vec<_>>());
        let input = trunk.as_deref().unwrap_or(features);
        let m = self.params[layout.malform];
        Ok(Forward {
            audio: Categorical::from_logits(&self.dense(&layout.audio, input)),
            visual: Categorical::from_logits(&self.dense(&layout.visual, input)),
            answer: Categorical::from_logits(&self.dense(&layout.answer, input)),
            malform_logit: m,
            malform_prob: sigmoid(m),
            trunk,
        })
    }

    /// Backpropagates logit gradients into `out`, scaled by `scale`.
    pub fn backward(&self, features: &[f64], fwd: &Forward, g: &LogitGrads, scale: f64, out: &mut Params) {
        let layout = self.layout();
        let p = self.params.as_slice();
        let input = fwd.trunk.as_deref().unwrap_or(features);
        let d = input.len();
        let mut d_input = fwd.trunk.as_ref().map(|_| vec![0.0; d]);
        let o = out.as_mut_slice();
        for (slot, grads) in [(&layout.audio, &g.audio), (&layout.visual, &g.visual), (&layout.answer, &g.answer)] {
            for (r, &gr) in grads.iter().enumerate() {
                if gr == 0.0 {
                    continue;
                }
                let gs = scale * gr;
                let row = slot.weight + r * slot.cols;
                for (j, x) in input.iter().enumerate() {
                    o[row + j] += gs * x;
                }
                o[slot.bias + r] += gs;
                if let Some(di) = d_input.as_mut() {
                    for (j, acc) in di.iter_mut().enumerate() {
                        *acc += gr * p[row + j];
                    }
                }
            }
        }
        o[layout.malform] += scale * g.malform;

        if let (Some(t), Some(h), Some(dh)) = (layout.trunk, fwd.trunk.as_ref(), d_input) {
            for (r, (hr, dhr)) in h.iter().zip(&dh).enumerate() {
                let dz = scale * dhr * (1.0 - hr * hr);
                if dz == 0.0 {
                    continue;
                }
                let row = t.weight + r * t.cols;
                for (j, x) in features.iter().enumerate() {
                    o[row + j] += dz * x;
                }
                o[t.bias + r] += dz;
            }
        }
    }

    pub fn log_prob(&self, features: &[f64], choices: &Choices) -> Result<f64, PolicyError> {
        Ok(self.head_log_probs(features, choices)?.iter().sum())
    }

    pub fn head_log_probs(&self, features: &[f64], choices: &Choices) -> Result<[f64; 4], PolicyError> {
        self.check_choices(choices)?;
        Ok(self.forward(features)?.head_log_probs(choices))
    }

    /// Analytic gradient of the joint log-probability.
    pub fn grad_log_prob(&self, features: &[f64], choices: &Choices) -> Result<Params, PolicyError> {
        self.check_choices(choices)?;
        let fwd = self.forward(features)?;
        let mut out = self.zero_grad();
        self.backward(features, &fwd, &LogitGrads::log_prob(&fwd, choices, [1.0; 4]), 1.0, &mut out);
        Ok(out)
    }

    pub fn answer_entropy(&self, features: &[f64]) -> Result<f64, PolicyError> {
        Ok(self.forward(features)?.answer.entropy())
    }

    /// Renders choices into response text. A malformed flag drops the
    /// closing answer tag.
    pub fn render(&self, choices: &Choices) -> String {
        let response = StructuredResponse::new(
            render::audio_claim(&self.vocab.audio[choices.audio]),
            render::visual_claim(&self.vocab.visual[choices.visual]),
            render::answer_payload(&self.vocab.answer[choices.answer]),
        );
        let text = serialize_response(&response);
        if choices.malformed {
            text.strip_suffix(ANSWER_CLOSE).unwrap_or(&text).to_string()
        } else {
            text
        }
    }

    /// Draws the four choices in the order audio, visual, answer, malform,
    /// one uniform variate each.
    pub fn sample<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> Result<SampledResponse, PolicyError> {
        let fwd = self.forward(features)?;
        let audio = fwd.audio.draw(rng.random::<f64>());
        let visual = fwd.visual.draw(rng.random::<f64>());
        let answer = fwd.answer.draw(rng.random::<f64>());
        let malformed = rng.random::<f64>() < fwd.malform_prob;
        let choices = Choices { audio, visual, answer, malformed };
        let head_log_probs = fwd.head_log_probs(&choices);
        Ok(SampledResponse {
            response_text: self.render(&choices),
            choices,
            log_prob: head_log_probs.iter().sum(),
            head_log_probs,
            answer_distribution: fwd.answer.probs.clone(),
        })
    }

    /// Argmax on every head; malformed only when its probability exceeds 1/2.
    pub fn greedy(&self, features: &[f64]) -> Result<Choices, PolicyError> {
        let fwd = self.forward(features)?;
        Ok(Choices {
            audio: fwd.audio.argmax(),
            visual: fwd.visual.argmax(),
            answer: fwd.answer.argmax(),
            malformed: fwd.malform_prob > 0.5,
        })
    }

    /// Mean per-position NLL over demonstrations and its gradient.
    pub fn nll(&self, demos: &[Demonstration]) -> Result<(f64, Params), PolicyError> {
        if demos.is_empty() {
            return Err(PolicyError::EmptyDataset);
        }
        let n = demos.len() as f64;
        let w = 1.0 / RESPONSE_POSITIONS as f64;
        let mut grad = self.zero_grad();
        let mut total = 0.0;
        for d in demos {
            self.check_choices(&d.choices)?;
            let fwd = self.forward(&d.features)?;
            total -= w * fwd.head_log_probs(&d.choices).iter().sum::<f64>();
            // d(-w log p)/dθ = -w ∇log p
            self.backward(&d.features, &fwd, &LogitGrads::log_prob(&fwd, &d.choices, [w; 4]), -1.0 / n, &mut grad);
        }
        Ok((total / n, grad))
    }

    /// Full-batch gradient descent on the mean NLL, one step per epoch.
    pub fn warmup_fit(&mut self, demos: &[Demonstration], epochs: usize, lr: f64) -> Result<WarmupReport, PolicyError> {
        let (initial, _) = self.nll(demos)?;
        let mut curve = Vec::with_capacity(epochs + 1);
        curve.push(initial);
        for _ in 0..epochs {
            let (_, grad) = self.nll(demos)?;
            self.params.axpy(-lr, &grad);
            curve.push(self.nll(demos)?.0);
        }
        Ok(WarmupReport {
            initial_nll: initial,
            final_nll: *curve.last().expect("nonempty"),
            nll_curve: curve,
        })
    }
}
