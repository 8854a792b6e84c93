//! Synthetic audio-visual confusion tasks.
//!
//! Each task shows one instrument and plays at most one sound. The label is
//! always determined by the audio side: in a *confused* task the visible
//! instrument is muted (existence questions, answer "no") or its sound is
//! replaced by another instrument's (choice questions, answer is the
//! sounding instrument). A policy that answers from the visual evidence is
//! therefore wrong on every confused task.
//!
//! The policy observes `[visual one-hot | audio one-hot | question kind]`
//! with Gaussian noise added to every entry; the audio block is all zero
//! when the instrument is muted.

use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::render::{self, NULL_ANSWER, SILENT_TOKEN};
use crate::policy::{Choices, Demonstration, PolicyError, ToyPolicy, Vocab};
use crate::response_format::parse_response;
use crate::reward::judge_answer;

pub const DATASET_SCHEMA: &str = "comm-rl.dataset";
pub const DATASET_VERSION: u32 = 1;

pub const YES: &str = "yes";
pub const NO: &str = "no";

/// Words that only the visual templates use. Reference reasoning must not
/// contain any of them.
pub const VISUAL_ONLY_WORDS: [&str; 4] = ["see", "being", "played", "video"];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("split {0} is empty")]
    EmptySplit(Split),
    #[error("token {0:?} is not in the policy vocabulary")]
    UnknownToken(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Warmup,
    Train,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Warmup, Split::Train, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Warmup => "warmup",
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Warmup => 1,
            Split::Train => 2,
            Split::Eval => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "warmup" => Ok(Split::Warmup),
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(EnvError::InvalidSpec(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    /// "Is there a/an {object} sound?", answered yes/no.
    Existence,
    /// "Which instrument is sounding?", answered with an instrument.
    Choice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSpec {
    pub warmup_size: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub confusion_rate: f64,
    /// Fraction of choice questions; the rest are existence questions.
    pub choice_fraction: f64,
    pub objects: Vec<String>,
    /// Standard deviation of the feature noise.
    pub noise: f64,
    /// Fraction of warm-up demonstrations that answer from the visual
    /// evidence instead of the audio evidence.
    pub visual_bias: f64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            warmup_size: 100,
            train_size: 256,
            eval_size: 400,
            confusion_rate: 0.5,
            choice_fraction: 0.3,
            objects: ["drum", "piano", "guitar", "violin", "cello", "flute"]
                .into_iter()
                .map(String::from)
                .collect(),
            noise: 0.1,
            visual_bias: 0.8,
        }
    }
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(EnvError::InvalidSpec(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("confusion_rate", self.confusion_rate)?;
        unit("choice_fraction", self.choice_fraction)?;
        unit("visual_bias", self.visual_bias)?;
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(EnvError::InvalidSpec(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if self.objects.len() < 2 {
            return Err(EnvError::InvalidSpec("need at least two objects".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for o in &self.objects {
            let reserved = [YES, NO, SILENT_TOKEN, NULL_ANSWER].contains(&o.as_str());
            let plain = !o.is_empty() && o.chars().all(|c| c.is_ascii_lowercase());
            if reserved || !plain || !seen.insert(o) {
                return Err(EnvError::InvalidSpec(format!("bad or duplicate object name {o:?}")));
            }
        }
        Ok(())
    }

    pub fn feature_layout(&self) -> FeatureLayout {
        FeatureLayout { objects: self.objects.len() }
    }

    /// Policy vocabulary: audio claims are the objects plus silence, answers
    /// are yes/no, the objects, and the null answer.
    pub fn vocab(&self) -> Vocab {
        let mut audio = self.objects.clone();
        audio.push(SILENT_TOKEN.to_string());
        let mut answer = vec![YES.to_string(), NO.to_string()];
        answer.extend(self.objects.iter().cloned());
        answer.push(NULL_ANSWER.to_string());
        Vocab {
            audio,
            visual: self.objects.clone(),
            answer,
        }
    }

    pub fn size(&self, split: Split) -> usize {
        match split {
            Split::Warmup => self.warmup_size,
            Split::Train => self.train_size,
            Split::Eval => self.eval_size,
        }
    }
}

/// Index map of the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    objects: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        2 * self.objects + 2
    }
    pub fn visual(&self, object: usize) -> usize {
        object
    }
    pub fn audio(&self, object: usize) -> usize {
        self.objects + object
    }
    pub fn kind(&self, kind: QuestionKind) -> usize {
        2 * self.objects
            + match kind {
                QuestionKind::Existence => 0,
                QuestionKind::Choice => 1,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub question: String,
    pub question_kind: QuestionKind,
    pub visual_evidence: String,
    /// The sounding object; `None` when muted.
    pub audio_evidence: Option<String>,
    pub confused: bool,
    pub ground_truth: String,
    pub features: Vec<f64>,
    pub reference_reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub seed: u64,
    pub spec: EnvSpec,
    pub warmup: Vec<TaskInstance>,
    pub train: Vec<TaskInstance>,
    pub eval: Vec<TaskInstance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[TaskInstance] {
        match split {
            Split::Warmup => &self.warmup,
            Split::Train => &self.train,
            Split::Eval => &self.eval,
        }
    }
}

pub fn existence_question(object: &str) -> String {
    format!("Is there {} {object} sound?", render::indefinite_article(object))
}

pub const CHOICE_QUESTION: &str = "Which instrument is sounding?";

/// Reference reasoning built from the audio evidence and the label only.
pub fn simulate_reference(instance: &TaskInstance) -> String {
    match (&instance.audio_evidence, instance.question_kind) {
        (Some(sound), _) => format!("{sound} sound: the {sound} is clearly audible"),
        (None, QuestionKind::Existence) => {
            // The queried object comes from the question, not the video.
            format!("I listen carefully and hear no {} sound in the recording", instance.visual_evidence)
        }
        (None, QuestionKind::Choice) => "I listen carefully and hear no sound in the recording".to_string(),
    }
}

fn generate_split<R: Rng>(spec: &EnvSpec, split: Split, rng: &mut R) -> Vec<TaskInstance> {
    let layout = spec.feature_layout();
    let normal = (spec.noise > 0.0).then(|| Normal::new(0.0, spec.noise).expect("validated noise"));
    (0..spec.size(split))
        .map(|i| {
            let kind = if rng.random::<f64>() < spec.choice_fraction {
                QuestionKind::Choice
            } else {
                QuestionKind::Existence
            };
            let visual_idx = rng.random_range(0..spec.objects.len());
            let confused = rng.random::<f64>() < spec.confusion_rate;
            let audio_idx = match (kind, confused) {
                (_, false) => Some(visual_idx),
                (QuestionKind::Existence, true) => None,
                (QuestionKind::Choice, true) => {
                    let others: Vec<usize> = (0..spec.objects.len()).filter(|&o| o != visual_idx).collect();
                    Some(*others.choose(rng).expect("at least two objects"))
                }
            };
            let visual = spec.objects[visual_idx].clone();
            let audio = audio_idx.map(|a| spec.objects[a].clone());
            let (question, ground_truth) = match kind {
                QuestionKind::Existence => {
                    let y = if audio.as_deref() == Some(visual.as_str()) { YES } else { NO };
                    (existence_question(&visual), y.to_string())
                }
                QuestionKind::Choice => (CHOICE_QUESTION.to_string(), audio.clone().expect("choice tasks sound")),
            };

            let mut features = vec![0.0; layout.dim()];
            features[layout.visual(visual_idx)] = 1.0;
            if let Some(a) = audio_idx {
                features[layout.audio(a)] = 1.0;
            }
            features[layout.kind(kind)] = 1.0;
            if let Some(n) = &normal {
                for f in &mut features {
                    *f += n.sample(rng);
                }
            }

            let mut inst = TaskInstance {
                id: format!("{split}-{i:05}"),
                question,
                question_kind: kind,
                visual_evidence: visual,
                audio_evidence: audio,
                confused,
                ground_truth,
                features,
                reference_reasoning: String::new(),
            };
            inst.reference_reasoning = simulate_reference(&inst);
            inst
        })
        .collect()
}

/// Generates all three splits. Each split draws from its own ChaCha stream
/// of `seed`, so resizing one split leaves the others unchanged.
pub fn generate_dataset(spec: &EnvSpec, seed: u64) -> Result<Dataset, EnvError> {
    spec.validate()?;
    let gen = |split: Split| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(split.stream());
        generate_split(spec, split, &mut rng)
    };
    Ok(Dataset {
        seed,
        spec: spec.clone(),
        warmup: gen(Split::Warmup),
        train: gen(Split::Train),
        eval: gen(Split::Eval),
    })
}

fn token_index(tokens: &[String], token: &str) -> Result<usize, EnvError> {
    tokens
        .iter()
        .position(|t| t == token)
        .ok_or_else(|| EnvError::UnknownToken(token.to_string()))
}

/// Gold structured choices for a task.
pub fn gold_choices(vocab: &Vocab, inst: &TaskInstance) -> Result<Choices, EnvError> {
    Ok(Choices {
        audio: token_index(&vocab.audio, inst.audio_evidence.as_deref().unwrap_or(SILENT_TOKEN))?,
        visual: token_index(&vocab.visual, &inst.visual_evidence)?,
        answer: token_index(&vocab.answer, &inst.ground_truth)?,
        malformed: false,
    })
}

/// Choices of a visually dominated reasoner: it "hears" the visible object
/// and answers accordingly.
pub fn visually_biased_choices(vocab: &Vocab, inst: &TaskInstance) -> Result<Choices, EnvError> {
    let answer = match inst.question_kind {
        QuestionKind::Existence => YES,
        QuestionKind::Choice => inst.visual_evidence.as_str(),
    };
    Ok(Choices {
        audio: token_index(&vocab.audio, &inst.visual_evidence)?,
        visual: token_index(&vocab.visual, &inst.visual_evidence)?,
        answer: token_index(&vocab.answer, answer)?,
        malformed: false,
    })
}

/// Warm-up demonstrations from the warm-up split. A `visual_bias` fraction
/// (drawn per instance from `seed`) follows the visual evidence; the rest
/// are gold. No demonstration is malformed.
pub fn make_warmup_demonstrations(dataset: &Dataset, visual_bias: f64, seed: u64) -> Result<Vec<Demonstration>, EnvError> {
    if dataset.warmup.is_empty() {
        return Err(EnvError::EmptySplit(Split::Warmup));
    }
    let vocab = dataset.spec.vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(Split::Warmup.stream() + 16);
    dataset
        .warmup
        .iter()
        .map(|inst| {
            let biased = rng.random::<f64>() < visual_bias;
            let choices = if biased {
                visually_biased_choices(&vocab, inst)?
            } else {
                gold_choices(&vocab, inst)?
            };
            Ok(Demonstration {
                features: inst.features.clone(),
                choices,
            })
        })
        .collect()
}

/// Supervised targets for answer-confidence optimization: gold choices for
/// every instance of `instances`.
pub fn labeled_examples(vocab: &Vocab, instances: &[TaskInstance]) -> Result<Vec<Demonstration>, EnvError> {
    instances
        .iter()
        .map(|inst| {
            Ok(Demonstration {
                features: inst.features.clone(),
                choices: gold_choices(vocab, inst)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub n: usize,
    pub accuracy: f64,
    /// Fraction of existence questions answered "yes"; `None` without
    /// existence questions.
    pub yes_rate: Option<f64>,
    pub confused_accuracy: Option<f64>,
    pub n_existence: usize,
    pub n_confused: usize,
    pub seed: u64,
}

/// Greedy decoding on every instance. A response counts as correct when
/// it parses and its answer matches the label.
pub fn evaluate(policy: &ToyPolicy, split: Split, instances: &[TaskInstance], seed: u64) -> Result<MetricReport, EnvError> {
    if instances.is_empty() {
        return Err(EnvError::EmptySplit(split));
    }
    let (mut correct, mut existence, mut yes, mut confused, mut confused_correct) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for inst in instances {
        let choices = policy.greedy(&inst.features)?;
        let parsed = parse_response(&policy.render(&choices));
        let answer = parsed.response.as_ref().and_then(|r| r.answer.as_deref());
        let ok = judge_answer(answer, &inst.ground_truth).correct;
        correct += ok as usize;
        if inst.question_kind == QuestionKind::Existence {
            existence += 1;
            yes += (answer.map(|a| a.trim().eq_ignore_ascii_case(YES)) == Some(true)) as usize;
        }
        if inst.confused {
            confused += 1;
            confused_correct += ok as usize;
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(MetricReport {
        split,
        n: instances.len(),
        accuracy: correct as f64 / instances.len() as f64,
        yes_rate: ratio(yes, existence),
        confused_accuracy: ratio(confused_correct, confused),
        n_existence: existence,
        n_confused: confused,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SplitHeader {
    schema: String,
    version: u32,
    split: Split,
    seed: u64,
    count: usize,
    env: EnvSpec,
}

/// Writes one split as JSONL: a header line, then one instance per line.
pub fn write_split<W: Write>(mut w: W, dataset: &Dataset, split: Split) -> Result<(), EnvError> {
    let instances = dataset.split(split);
    let header = SplitHeader {
        schema: DATASET_SCHEMA.to_string(),
        version: DATASET_VERSION,
        split,
        seed: dataset.seed,
        count: instances.len(),
        env: dataset.spec.clone(),
    };
    let json = |e: serde_json::Error| EnvError::Format(e.to_string());
    writeln!(w, "{}", serde_json::to_string(&header).map_err(json)?)?;
    for inst in instances {
        writeln!(w, "{}", serde_json::to_string(inst).map_err(json)?)?;
    }
    Ok(())
}

/// Reads a split file written by [`write_split`]. Returns the split tag,
/// seed, environment spec and instances.
pub fn read_split<R: BufRead>(r: R) -> Result<(Split, u64, EnvSpec, Vec<TaskInstance>), EnvError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| EnvError::Format("empty file".into()))??;
    let header: SplitHeader =
        serde_json::from_str(&first).map_err(|e| EnvError::Format(format!("line 1: {e}")))?;
    if header.schema != DATASET_SCHEMA || header.version != DATASET_VERSION {
        return Err(EnvError::Format(format!("unsupported schema {} v{}", header.schema, header.version)));
    }
    let mut instances = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        instances.push(serde_json::from_str(&line).map_err(|e| EnvError::Format(format!("line {}: {e}", i + 2)))?);
    }
    if instances.len() != header.count {
        return Err(EnvError::Format(format!(
            "header announces {} instances, found {}",
            header.count,
            instances.len()
        )));
    }
    Ok((header.split, header.seed, header.env, instances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::{HashedBagScorer, Scorer, ScorerTask};
    use std::collections::HashSet;

    fn spec_with(confusion_rate: f64, choice_fraction: f64) -> EnvSpec {
        EnvSpec { confusion_rate, choice_fraction, ..EnvSpec::default() }
    }

    /// Answer-head biases/weights that make the policy read the audio block
    /// (`oracle`) or always say yes on existence questions.
    fn scripted_policy(spec: &EnvSpec, oracle: bool) -> ToyPolicy {
        let layout = spec.feature_layout();
        let vocab = spec.vocab();
        let mut pol = ToyPolicy::new(vocab.clone(), layout.dim(), None, 0);
        let l = pol.layout();
        let d = layout.dim();
        let p = pol.params_mut();
        let w = |row: usize, col: usize| l.answer.weight + row * d + col;
        let yes = vocab.answer_index(YES).unwrap();
        let no = vocab.answer_index(NO).unwrap();
        p[w(yes, layout.kind(QuestionKind::Existence))] = 10.0;
        p[w(no, layout.kind(QuestionKind::Existence))] = if oracle { 15.0 } else { 0.0 };
        for o in 0..spec.objects.len() {
            let obj = vocab.answer_index(&spec.objects[o]).unwrap();
            p[w(obj, layout.kind(QuestionKind::Choice))] = 10.0;
            if oracle {
                p[w(yes, layout.audio(o))] = 10.0;
                p[w(obj, layout.audio(o))] = 10.0;
            }
        }
        p[l.malform] = -20.0;
        pol
    }

    #[test]
    fn no_confusion_means_consistent_evidence() {
        let ds = generate_dataset(&spec_with(0.0, 0.5), 1).unwrap();
        for inst in ds.eval.iter().chain(&ds.train) {
            assert!(!inst.confused);
            assert_eq!(inst.audio_evidence.as_deref(), Some(inst.visual_evidence.as_str()));
            match inst.question_kind {
                QuestionKind::Existence => assert_eq!(inst.ground_truth, YES),
                QuestionKind::Choice => assert_eq!(inst.ground_truth, inst.visual_evidence),
            }
        }
    }

    #[test]
    fn full_confusion_existence_answers_no() {
        let ds = generate_dataset(&spec_with(1.0, 0.0), 2).unwrap();
        assert!(ds.eval.iter().all(|i| i.confused && i.ground_truth == NO && i.audio_evidence.is_none()));
    }

    #[test]
    fn labels_follow_audio_only() {
        let ds = generate_dataset(&EnvSpec::default(), 3).unwrap();
        for inst in ds.eval.iter().chain(&ds.warmup).chain(&ds.train) {
            let expected = match inst.question_kind {
                QuestionKind::Existence => {
                    let queried = inst.question.split_whitespace().nth(3).unwrap();
                    if inst.audio_evidence.as_deref() == Some(queried) { YES } else { NO }.to_string()
                }
                QuestionKind::Choice => inst.audio_evidence.clone().unwrap(),
            };
            assert_eq!(inst.ground_truth, expected);
            if inst.confused {
                assert_ne!(inst.audio_evidence.as_deref(), Some(inst.visual_evidence.as_str()));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = EnvSpec::default();
        let a = generate_dataset(&spec, 11).unwrap();
        let b = generate_dataset(&spec, 11).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        for s in Split::ALL {
            write_split(&mut ba, &a, s).unwrap();
            write_split(&mut bb, &b, s).unwrap();
        }
        assert_eq!(ba, bb);
        assert_ne!(a.eval, generate_dataset(&spec, 12).unwrap().eval);
    }

    #[test]
    fn split_ids_are_disjoint() {
        let ds = generate_dataset(&EnvSpec::default(), 4).unwrap();
        let ids = |s: Split| ds.split(s).iter().map(|i| i.id.clone()).collect::<HashSet<_>>();
        let (w, t, e) = (ids(Split::Warmup), ids(Split::Train), ids(Split::Eval));
        assert!(w.is_disjoint(&t) && w.is_disjoint(&e) && t.is_disjoint(&e));
        assert_eq!(e.len(), ds.spec.eval_size);
    }

    #[test]
    fn reference_templates() {
        let mut inst = TaskInstance {
            id: "x".into(),
            question: existence_question("drum"),
            question_kind: QuestionKind::Existence,
            visual_evidence: "drum".into(),
            audio_evidence: None,
            confused: true,
            ground_truth: NO.into(),
            features: vec![],
            reference_reasoning: String::new(),
        };
        assert_eq!(simulate_reference(&inst), "I listen carefully and hear no drum sound in the recording");
        inst.audio_evidence = Some("piano".into());
        inst.visual_evidence = "piano".into();
        let r = simulate_reference(&inst);
        assert!(r.contains("piano"));
        let s = HashedBagScorer::default();
        assert_eq!(s.score(ScorerTask::Consistency, &r, &r).unwrap().value(), 1.0);
    }

    #[test]
    fn references_contain_no_visual_words() {
        let ds = generate_dataset(&EnvSpec::default(), 5).unwrap();
        for inst in ds.eval.iter().chain(&ds.warmup) {
            let toks = crate::similarity::tokenize(&inst.reference_reasoning);
            assert!(toks.iter().all(|t| !VISUAL_ONLY_WORDS.contains(&t.as_str())), "{}", inst.reference_reasoning);
        }
    }

    #[test]
    fn gold_claims_pass_consistency_and_wrong_claims_fail() {
        let ds = generate_dataset(&EnvSpec::default(), 6).unwrap();
        let vocab = ds.spec.vocab();
        let s = HashedBagScorer::default();
        for inst in &ds.eval {
            let gold = gold_choices(&vocab, inst).unwrap();
            for (k, token) in vocab.audio.iter().enumerate() {
                let claim = render::audio_claim(token);
                let score = s.score(ScorerTask::Consistency, &claim, &inst.reference_reasoning).unwrap().value();
                assert_eq!(score > 0.8, k == gold.audio, "{claim} vs {}: {score}", inst.reference_reasoning);
            }
        }
    }

    #[test]
    fn confused_demonstration_is_gold_no() {
        let ds = generate_dataset(&spec_with(1.0, 0.0), 7).unwrap();
        let vocab = ds.spec.vocab();
        let demos = make_warmup_demonstrations(&ds, 0.0, 0).unwrap();
        for d in &demos {
            assert_eq!(vocab.answer[d.choices.answer], NO);
            assert_eq!(vocab.audio[d.choices.audio], SILENT_TOKEN);
            assert!(!d.choices.malformed);
        }
        let pol = ToyPolicy::new(vocab, ds.spec.feature_layout().dim(), None, 0);
        for d in &demos {
            let outcome = parse_response(&pol.render(&d.choices));
            assert_eq!(crate::response_format::format_reward(&outcome), 1.0);
        }
    }

    #[test]
    fn visual_bias_fraction_is_respected() {
        let spec = EnvSpec { warmup_size: 2000, ..spec_with(1.0, 0.0) };
        let ds = generate_dataset(&spec, 8).unwrap();
        let vocab = spec.vocab();
        let demos = make_warmup_demonstrations(&ds, 0.8, 3).unwrap();
        let yes = demos.iter().filter(|d| vocab.answer[d.choices.answer] == YES).count() as f64 / 2000.0;
        assert!((yes - 0.8).abs() < 3.0 * (0.8f64 * 0.2 / 2000.0).sqrt());
    }

    #[test]
    fn warmup_beats_chance_on_unconfused_items() {
        let spec = spec_with(0.5, 0.3);
        let ds = generate_dataset(&spec, 9).unwrap();
        let mut pol = ToyPolicy::new(spec.vocab(), spec.feature_layout().dim(), None, 0);
        let demos = make_warmup_demonstrations(&ds, 0.0, 1).unwrap();
        pol.warmup_fit(&demos, 200, 1.0).unwrap();
        let clean: Vec<TaskInstance> = ds.eval.iter().filter(|i| !i.confused).cloned().collect();
        let report = evaluate(&pol, Split::Eval, &clean, 9).unwrap();
        assert!(report.accuracy > 0.5, "{report:?}");
    }

    #[test]
    fn always_yes_policy_on_muted_split() {
        let spec = spec_with(1.0, 0.0);
        let ds = generate_dataset(&spec, 10).unwrap();
        let report = evaluate(&scripted_policy(&spec, false), Split::Eval, &ds.eval, 10).unwrap();
        assert_eq!(report.accuracy, 0.0);
        assert_eq!(report.yes_rate, Some(1.0));
        assert_eq!(report.confused_accuracy, Some(0.0));
    }

    #[test]
    fn audio_reading_policy_is_perfect() {
        let spec = EnvSpec { noise: 0.0, ..EnvSpec::default() };
        let ds = generate_dataset(&spec, 11).unwrap();
        let report = evaluate(&scripted_policy(&spec, true), Split::Eval, &ds.eval, 11).unwrap();
        assert_eq!(report.accuracy, 1.0, "{report:?}");
    }

    #[test]
    fn uniform_policy_is_at_chance_on_yes_no() {
        // Greedy decoding of a uniform policy is constant, so draw answers
        // from the uniform yes/no distribution instead.
        let spec = EnvSpec { eval_size: 10_000, ..spec_with(0.5, 0.0) };
        let ds = generate_dataset(&spec, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let correct = ds
            .eval
            .iter()
            .filter(|i| (if rng.random::<bool>() { YES } else { NO }) == i.ground_truth)
            .count() as f64;
        let n = 10_000.0;
        assert!((correct / n - 0.5).abs() <= 3.0 * (0.25f64 / n).sqrt());
    }

    #[test]
    fn empty_split_errors() {
        let spec = EnvSpec { warmup_size: 0, ..EnvSpec::default() };
        let ds = generate_dataset(&spec, 0).unwrap();
        assert!(matches!(make_warmup_demonstrations(&ds, 0.8, 0), Err(EnvError::EmptySplit(Split::Warmup))));
        let pol = ToyPolicy::new(spec.vocab(), spec.feature_layout().dim(), None, 0);
        assert!(matches!(evaluate(&pol, Split::Warmup, &ds.warmup, 0), Err(EnvError::EmptySplit(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            spec_with(1.5, 0.0),
            EnvSpec { objects: vec!["drum".into()], ..EnvSpec::default() },
            EnvSpec { objects: vec!["drum".into(), "drum".into()], ..EnvSpec::default() },
            EnvSpec { objects: vec!["yes".into(), "drum".into()], ..EnvSpec::default() },
            EnvSpec { noise: -1.0, ..EnvSpec::default() },
        ] {
            assert!(matches!(generate_dataset(&spec, 0), Err(EnvError::InvalidSpec(_))));
        }
    }

    #[test]
    fn split_file_round_trip() {
        let ds = generate_dataset(&EnvSpec::default(), 13).unwrap();
        let mut buf = Vec::new();
        write_split(&mut buf, &ds, Split::Train).unwrap();
        let (split, seed, spec, inst) = read_split(buf.as_slice()).unwrap();
        assert_eq!((split, seed, &spec), (Split::Train, 13, &ds.spec));
        assert_eq!(inst, ds.train);
        let truncated = &buf[..buf.len() / 2];
        assert!(read_split(truncated).is_err());
    }
}
