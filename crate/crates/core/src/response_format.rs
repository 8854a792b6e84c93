//! Three-tag response grammar.
//!
//! A well-formed response is exactly
//!
//! ```text
//! <a-think>…</a-think><v-think>…</v-think><answer>…</answer>
//! ```
//!
//! with each block present once, in that order, and nothing but whitespace
//! between or around the blocks. Tags are matched case-sensitively. An empty
//! `<answer></answer>` payload encodes the null answer.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const A_THINK_OPEN: &str = "<a-think>";
pub const A_THINK_CLOSE: &str = "</a-think>";
pub const V_THINK_OPEN: &str = "<v-think>";
pub const V_THINK_CLOSE: &str = "</v-think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// All six markers, in canonical order.
pub const MARKERS: [&str; 6] = [
    A_THINK_OPEN,
    A_THINK_CLOSE,
    V_THINK_OPEN,
    V_THINK_CLOSE,
    ANSWER_OPEN,
    ANSWER_CLOSE,
];

/// The parsed triple of one rollout sample: audio reasoning, visual
/// reasoning and the predicted answer (`None` is the null answer).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StructuredResponse {
    pub a_think: String,
    pub v_think: String,
    pub answer: Option<String>,
}

impl StructuredResponse {
    pub fn new(a_think: impl Into<String>, v_think: impl Into<String>, answer: Option<String>) -> Self {
        Self {
            a_think: a_think.into(),
            v_think: v_think.into(),
            answer,
        }
    }

    /// True when the value survives a serialize/parse round trip unchanged:
    /// payloads are trimmed, carry no tag markers, and a present answer is
    /// nonempty.
    pub fn is_canonical(&self) -> bool {
        let payload_ok = |s: &str| s.trim() == s && !contains_marker(s);
        payload_ok(&self.a_think)
            && payload_ok(&self.v_think)
            && match &self.answer {
                Some(a) => !a.is_empty() && payload_ok(a),
                None => true,
            }
    }
}

impl fmt::Display for StructuredResponse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_response(self))
    }
}

/// Reasons a raw generation fails the format check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Violation {
    /// A block's opening or closing tag is absent. Reported once per block.
    MissingTag,
    /// Blocks (or a block's open/close pair) appear out of canonical order.
    WrongOrder,
    /// A tag appears more than once. Reported once per offending block.
    DuplicateTag,
    /// Non-whitespace text outside the three blocks.
    TrailingContent,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Violation::MissingTag => "missing-tag",
            Violation::WrongOrder => "wrong-order",
            Violation::DuplicateTag => "duplicate-tag",
            Violation::TrailingContent => "trailing-content",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub response: Option<StructuredResponse>,
    pub format_ok: bool,
    pub diagnostics: Vec<Violation>,
}

impl ParseOutcome {
    fn failed(diagnostics: Vec<Violation>) -> Self {
        debug_assert!(!diagnostics.is_empty());
        Self {
            response: None,
            format_ok: false,
            diagnostics,
        }
    }
}

fn contains_marker(s: &str) -> bool {
    MARKERS.iter().any(|m| s.contains(m))
}

/// Every marker occurrence as `(byte offset, marker index)`, in text order.
fn scan_markers(raw: &str) -> Vec<(usize, usize)> {
    let mut found = Vec::new();
    for (pos, _) in raw.match_indices('<') {
        let rest = &raw[pos..];
        // Markers contain a single '<', so occurrences never overlap.
        if let Some(idx) = MARKERS.iter().position(|m| rest.starts_with(m)) {
            found.push((pos, idx));
        }
    }
    found
}

/// Parses raw generated text. Never fails: malformed input yields
/// `format_ok == false` with diagnostics explaining why.
pub fn parse_response(raw: &str) -> ParseOutcome {
    let found = scan_markers(raw);

    let mut counts = [0usize; 6];
    for &(_, idx) in &found {
        counts[idx] += 1;
    }

    let mut diagnostics = Vec::new();
    for block in 0..3 {
        let (open, close) = (counts[2 * block], counts[2 * block + 1]);
        if open == 0 || close == 0 {
            diagnostics.push(Violation::MissingTag);
        }
    }
    for block in 0..3 {
        let (open, close) = (counts[2 * block], counts[2 * block + 1]);
        if open > 1 || close > 1 {
            diagnostics.push(Violation::DuplicateTag);
        }
    }
    if !diagnostics.is_empty() {
        return ParseOutcome::failed(diagnostics);
    }

    // Exactly six markers remain; they must appear in canonical order.
    if found.iter().enumerate().any(|(i, &(_, idx))| idx != i) {
        return ParseOutcome::failed(vec![Violation::WrongOrder]);
    }

    let start = |i: usize| found[i].0;
    let end = |i: usize| found[i].0 + MARKERS[i].len();
    let gaps = [
        &raw[..start(0)],
        &raw[end(1)..start(2)],
        &raw[end(3)..start(4)],
        &raw[end(5)..],
    ];
    if gaps.iter().any(|g| !g.trim().is_empty()) {
        return ParseOutcome::failed(vec![Violation::TrailingContent]);
    }

    let a_think = raw[end(0)..start(1)].trim();
    let v_think = raw[end(2)..start(3)].trim();
    let answer = raw[end(4)..start(5)].trim();
    ParseOutcome {
        response: Some(StructuredResponse {
            a_think: a_think.to_string(),
            v_think: v_think.to_string(),
            answer: (!answer.is_empty()).then(|| answer.to_string()),
        }),
        format_ok: true,
        diagnostics: Vec::new(),
    }
}

/// Canonical tag sequence for `r`. A null answer becomes an empty payload.
pub fn serialize_response(r: &StructuredResponse) -> String {
    let answer = r.answer.as_deref().unwrap_or("");
    let mut out = String::with_capacity(
        r.a_think.len() + r.v_think.len() + answer.len() + MARKERS.iter().map(|m| m.len()).sum::<usize>(),
    );
    out.push_str(A_THINK_OPEN);
    out.push_str(&r.a_think);
    out.push_str(A_THINK_CLOSE);
    out.push_str(V_THINK_OPEN);
    out.push_str(&r.v_think);
    out.push_str(V_THINK_CLOSE);
    out.push_str(ANSWER_OPEN);
    out.push_str(answer);
    out.push_str(ANSWER_CLOSE);
    out
}

/// Binary format reward: 1 for a well-formed response, 0 otherwise.
pub fn format_reward(outcome: &ParseOutcome) -> f64 {
    if outcome.format_ok {
        1.0
    } else {
        0.0
    }
}
