//! Sentence templates that turn sampled tokens into reasoning text.
//!
//! The templates are chosen so that the bag-of-tokens scorer separates
//! correct from incorrect audio claims around the 0.8 consistency threshold.

/// Audio token meaning "no instrument is sounding".
pub const SILENT_TOKEN: &str = "none";
/// Answer token rendered as an empty `<answer></answer>` payload.
pub const NULL_ANSWER: &str = "<null>";

pub fn indefinite_article(noun: &str) -> &'static str {
    match noun.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

pub fn audio_claim(token: &str) -> String {
    if token == SILENT_TOKEN {
        "I listen carefully and hear no sound in the recording".to_string()
    } else {
        format!("{token} sound: the {token} is clearly audible")
    }
}

pub fn visual_claim(token: &str) -> String {
    format!("I see {} {token} being played in the video", indefinite_article(token))
}

/// Answer payload; the null token maps to `None`.
pub fn answer_payload(token: &str) -> Option<String> {
    (token != NULL_ANSWER).then(|| token.to_string())
}
