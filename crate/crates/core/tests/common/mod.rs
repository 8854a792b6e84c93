#![allow(dead_code)]

use comm_rl::optim::{RatioMode, RolloutGroup, TrainConfig};
use comm_rl::policy::{render::NULL_ANSWER, Choices, Demonstration, Params, ToyPolicy, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-5;

pub fn small_vocab() -> Vocab {
    let names = |p: &str, k: usize| (0..k).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let mut answer = names("ans", 4);
    answer.push(NULL_ANSWER.to_string());
    Vocab {
        audio: names("aud", 4),
        visual: names("vis", 3),
        answer,
    }
}

pub const FEATURES: usize = 5;

/// Random policy; odd seeds get a hidden layer.
pub fn random_policy(seed: u64, scale: f64) -> ToyPolicy {
    let hidden = (seed % 2 == 1).then_some(4);
    let mut pol = ToyPolicy::new(small_vocab(), FEATURES, hidden, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for w in pol.params_mut().as_mut_slice() {
        *w += rng.random_range(-scale..scale);
    }
    pol
}

pub fn random_features(rng: &mut impl Rng) -> Vec<f64> {
    (0..FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_choices(rng: &mut impl Rng, vocab: &Vocab) -> Choices {
    Choices {
        audio: rng.random_range(0..vocab.audio.len()),
        visual: rng.random_range(0..vocab.visual.len()),
        answer: rng.random_range(0..vocab.answer.len()),
        malformed: rng.random::<f64>() < 0.3,
    }
}

/// Central finite-difference gradient of `f` at the policy's parameters.
pub fn fd_grad(policy: &ToyPolicy, f: impl Fn(&ToyPolicy) -> f64) -> Params {
    let mut p = policy.clone();
    let mut out = vec![0.0; policy.params().len()];
    for (i, o) in out.iter_mut().enumerate() {
        let orig = p.params()[i];
        p.params_mut()[i] = orig + FD_STEP;
        let up = f(&p);
        p.params_mut()[i] = orig - FD_STEP;
        let down = f(&p);
        p.params_mut()[i] = orig;
        *o = (up - down) / (2.0 * FD_STEP);
    }
    Params::from_vec(out)
}

/// `|a - b| / max(|a|, |b|)` over whole gradient vectors.
pub fn relative_error(a: &Params, b: &Params) -> f64 {
    let diff: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.norm().max(b.norm()).max(1e-12);
    diff / scale
}

/// A surrogate test case: `current` differs from the sampling policy by a
/// random perturbation, so ratios spread on both sides of the clip range.
/// No ratio lies within 1e-3 of a clip boundary.
pub struct SurrogateCase {
    pub current: ToyPolicy,
    pub snapshot: ToyPolicy,
    pub group: RolloutGroup,
    pub cfg: TrainConfig,
}

pub fn surrogate_case(seed: u64, mode: RatioMode, kl_beta: f64) -> SurrogateCase {
    let cfg = TrainConfig { ratio_mode: mode, kl_beta, ..TrainConfig::default() };
    let eps = cfg.clip_epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old = random_policy(seed, 1.0);
    let features = random_features(&mut rng);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let responses: Vec<_> = (0..8).map(|_| old.sample(&features, &mut rng).unwrap()).collect();
    let advantages: Vec<f64> = (0..8).map(|_| normal.sample(&mut rng)).collect();
    let group = RolloutGroup {
        task_id: format!("case-{seed}"),
        features: features.clone(),
        rewards: vec![Default::default(); 8],
        responses,
        advantages: Some(advantages),
    };
    let noise = Normal::new(0.0, 0.15).unwrap();
    loop {
        let mut current = old.clone();
        for w in current.params_mut().as_mut_slice() {
            *w += noise.sample(&mut rng);
        }
        let near_kink = group.responses.iter().any(|r| {
            let new = current.head_log_probs(&features, &r.choices).unwrap();
            let ratios: Vec<f64> = match mode {
                RatioMode::Sequence => vec![(new.iter().sum::<f64>() - r.log_prob).exp()],
                RatioMode::PerHead => (0..4).map(|k| (new[k] - r.head_log_probs[k]).exp()).collect(),
            };
            ratios.iter().any(|x| (x - (1.0 - eps)).abs() < 1e-3 || (x - (1.0 + eps)).abs() < 1e-3)
        });
        if !near_kink {
            let snapshot = random_policy(seed + 1000, 0.5);
            // The snapshot must share the current policy's shape.
            let snapshot = if snapshot.shape() == current.shape() { snapshot } else { old.clone() };
            return SurrogateCase { current, snapshot, group, cfg };
        }
    }
}

/// Labeled batch whose examples mix confident and uncertain answer heads.
/// No example's uncertainty lies within 1e-4 of the gate.
pub fn ans_co_case(seed: u64) -> (ToyPolicy, Vec<Demonstration>, TrainConfig) {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = random_policy(seed, 1.5);
    let vocab = small_vocab();
    let mut batch = Vec::new();
    while batch.len() < 6 {
        let scale = if batch.len() % 2 == 0 { 0.2 } else { 3.0 };
        let features: Vec<f64> = random_features(&mut rng).into_iter().map(|x| x * scale).collect();
        let u = comm_rl::optim::uncertainty(&policy, &features).unwrap().u;
        if (u - cfg.uncertainty_gate).abs() < 1e-4 {
            continue;
        }
        batch.push(Demonstration { features, choices: random_choices(&mut rng, &vocab) });
    }
    (policy, batch, cfg)
}
