//! Step-wise reasoning reward.
//!
//! Per response the total reward is `r_format + r_arr + r_avc`:
//!
//! - `r_format` is 1 for a well-formed three-tag response, else 0.
//! - `r_arr` (audio reasoning rationality) is 1 when the audio reasoning is
//!   consistent with the reference reasoning (`S > ω`, strict) *and* the
//!   answer is correct, else 0.
//! - `r_avc` (audio-visual correlation) is `1 + I` for a correct answer, `I`
//!   for a wrong non-null answer and 0 for a null answer, where `I` is the
//!   coherence between the audio and visual reasoning.
//!
//! Malformed responses score zero on every component.

use serde::{Deserialize, Serialize};

use crate::response_format::{format_reward, ParseOutcome};
use crate::similarity::{Scorer, ScorerError, ScorerTask};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_format: f64,
    pub r_arr: f64,
    pub r_avc: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(r_format: f64, r_arr: f64, r_avc: f64) -> Self {
        Self {
            r_format,
            r_arr,
            r_avc,
            total: r_format + r_arr + r_avc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerJudgment {
    pub predicted: Option<String>,
    pub ground_truth: String,
    pub correct: bool,
    pub is_null: bool,
}

/// Case-insensitive comparison of trimmed strings. A blank prediction
/// counts as null, the same as a missing one.
pub fn judge_answer(predicted: Option<&str>, ground_truth: &str) -> AnswerJudgment {
    let predicted = predicted.map(str::trim).filter(|p| !p.is_empty());
    let correct = predicted.is_some_and(|p| p.to_lowercase() == ground_truth.trim().to_lowercase());
    AnswerJudgment {
        predicted: predicted.map(str::to_string),
        ground_truth: ground_truth.to_string(),
        correct,
        is_null: predicted.is_none(),
    }
}

/// Audio reasoning rationality. The scorer is only consulted for a correct
/// answer, since the reward is 0 otherwise.
pub fn arr_reward(
    audio_think: &str,
    reference: &str,
    judgment: &AnswerJudgment,
    omega: f64,
    scorer: &dyn Scorer,
) -> Result<f64, ScorerError> {
    if !judgment.correct {
        return Ok(0.0);
    }
    let s = scorer.score(ScorerTask::Consistency, audio_think, reference)?.value();
    Ok(if s > omega { 1.0 } else { 0.0 })
}

/// Audio-visual correlation with soft matching on the coherence score.
pub fn avc_reward(
    audio_think: &str,
    visual_think: &str,
    judgment: &AnswerJudgment,
    scorer: &dyn Scorer,
) -> Result<f64, ScorerError> {
    if judgment.is_null {
        return Ok(0.0);
    }
    let coherence = scorer.score(ScorerTask::Coherence, audio_think, visual_think)?.value();
    Ok(if judgment.correct { 1.0 + coherence } else { coherence })
}

pub fn total_reward(
    parse: &ParseOutcome,
    reference: &str,
    ground_truth: &str,
    omega: f64,
    scorer: &dyn Scorer,
) -> Result<RewardBreakdown, ScorerError> {
    let Some(response) = parse.response.as_ref().filter(|_| parse.format_ok) else {
        return Ok(RewardBreakdown::default());
    };
    let judgment = judge_answer(response.answer.as_deref(), ground_truth);
    let r_arr = arr_reward(&response.a_think, reference, &judgment, omega, scorer)?;
    let r_avc = avc_reward(&response.a_think, &response.v_think, &judgment, scorer)?;
    Ok(RewardBreakdown::new(format_reward(parse), r_arr, r_avc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response_format::{parse_response, serialize_response, StructuredResponse};
    use crate::similarity::SimilarityScore;

    /// Returns fixed S and I regardless of the texts.
    struct Fixed {
        s: f64,
        i: f64,
    }

    impl Scorer for Fixed {
        fn score(&self, task: ScorerTask, _: &str, _: &str) -> Result<SimilarityScore, ScorerError> {
            Ok(SimilarityScore::clamped(match task {
                ScorerTask::Consistency => self.s,
                ScorerTask::Coherence => self.i,
            }))
        }
    }

    struct Down;

    impl Scorer for Down {
        fn score(&self, _: ScorerTask, _: &str, _: &str) -> Result<SimilarityScore, ScorerError> {
            Err(ScorerError::BackendUnavailable { attempts: 3, reason: "down".into() })
        }
    }

    fn parsed(answer: Option<&str>) -> ParseOutcome {
        parse_response(&serialize_response(&StructuredResponse::new("a", "v", answer.map(String::from))))
    }

    #[test]
    fn judge_examples() {
        let j = judge_answer(Some("Yes"), "yes");
        assert!(j.correct && !j.is_null);
        let j = judge_answer(None, "no");
        assert!(j.is_null && !j.correct);
        let j = judge_answer(Some("left"), "right");
        assert!(!j.correct && !j.is_null);
        let j = judge_answer(Some("  "), "no");
        assert!(j.is_null && !j.correct);
        assert!(judge_answer(Some(" NO "), "no").correct);
    }

    #[test]
    fn arr_branches() {
        let ok = judge_answer(Some("yes"), "yes");
        let bad = judge_answer(Some("no"), "yes");
        assert_eq!(arr_reward("a", "r", &ok, 0.8, &Fixed { s: 0.9, i: 0.0 }).unwrap(), 1.0);
        assert_eq!(arr_reward("a", "r", &bad, 0.8, &Fixed { s: 0.9, i: 0.0 }).unwrap(), 0.0);
        assert_eq!(arr_reward("a", "r", &ok, 0.8, &Fixed { s: 0.8, i: 0.0 }).unwrap(), 0.0);
    }

    #[test]
    fn avc_branches() {
        let sc = Fixed { s: 0.0, i: 0.6 };
        assert_eq!(avc_reward("a", "v", &judge_answer(Some("yes"), "yes"), &sc).unwrap(), 1.6);
        assert_eq!(avc_reward("a", "v", &judge_answer(Some("no"), "yes"), &sc).unwrap(), 0.6);
        assert_eq!(avc_reward("a", "v", &judge_answer(None, "yes"), &sc).unwrap(), 0.0);
    }

    #[test]
    fn total_examples() {
        let r = total_reward(&parsed(Some("yes")), "ref", "yes", 0.8, &Fixed { s: 0.9, i: 0.5 }).unwrap();
        assert_eq!(r, RewardBreakdown { r_format: 1.0, r_arr: 1.0, r_avc: 1.5, total: 3.5 });

        let r = total_reward(&parse_response("garbage"), "ref", "yes", 0.8, &Fixed { s: 0.9, i: 0.5 }).unwrap();
        assert_eq!(r, RewardBreakdown::default());

        let r = total_reward(&parsed(Some("no")), "ref", "yes", 0.8, &Fixed { s: 0.1, i: 0.0 }).unwrap();
        assert_eq!(r, RewardBreakdown { r_format: 1.0, r_arr: 0.0, r_avc: 0.0, total: 1.0 });
    }

    #[test]
    fn scorer_errors_propagate() {
        assert!(total_reward(&parsed(Some("yes")), "ref", "yes", 0.8, &Down).is_err());
        // A malformed response never reaches the scorer.
        assert!(total_reward(&parse_response(""), "ref", "yes", 0.8, &Down).is_ok());
    }

    #[test]
    fn increasing_coherence_never_lowers_total() {
        for answer in [Some("yes"), Some("no"), None] {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=10 {
                let i = k as f64 / 10.0;
                let t = total_reward(&parsed(answer), "r", "yes", 0.8, &Fixed { s: 0.9, i }).unwrap().total;
                assert!(t >= prev);
                assert!((0.0..=4.0).contains(&t));
                prev = t;
            }
        }
    }

    #[test]
    fn flipping_wrong_to_correct_adds_one_plus_arr() {
        for s in [0.5, 0.9] {
            let sc = Fixed { s, i: 0.37 };
            let wrong = total_reward(&parsed(Some("no")), "r", "yes", 0.8, &sc).unwrap();
            let right = total_reward(&parsed(Some("yes")), "r", "yes", 0.8, &sc).unwrap();
            let arr_delta = right.r_arr - wrong.r_arr;
            assert!((right.total - wrong.total - (1.0 + arr_delta)).abs() < 1e-15);
        }
    }
}
