//! Deterministic synthetic corpus generation.
//!
//! Each session is a series of spoken sentences ("utterances") separated by
//! silence. Words are unique synthetic tokens `a1, a2, ...`; the last word of
//! a sentence carries an attached terminator (`a8.`). Frames carry the token
//! labels the mock speech models read, plus the per-frame speech flag the VAD
//! consumes. References are exact by construction: the transcript is the
//! label stream, the translation its un-perturbed mock MT mapping.

use crate::backend::mock_mt_translate;
use crate::types::{AudioFrame, Token, FRAME_SECONDS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusParams {
    /// Spoken sentences per session.
    pub utterances: usize,
    /// Mean words per sentence (jittered by up to +-2).
    pub tokens_per_sentence: usize,
    /// Nominal seconds of audio per word.
    pub token_seconds: f64,
    /// Max +- jitter applied to each word's duration.
    pub token_jitter_s: f64,
    /// Silence frames between utterances (and after the last one).
    pub gap_frames: usize,
    /// Silence frames before the first utterance.
    pub lead_in_frames: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            utterances: 5,
            tokens_per_sentence: 8,
            token_seconds: 0.45,
            token_jitter_s: 0.1,
            gap_frames: 25,
            lead_in_frames: 10,
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.utterances < 1 || self.tokens_per_sentence < 1 {
            return Err("corpus.utterances and corpus.tokens_per_sentence must be at least 1".into());
        }
        if self.token_seconds <= 0.0 {
            return Err("corpus.token_seconds must be positive".into());
        }
        Ok(())
    }
}

/// One session's input audio and references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionScript {
    pub frames: Vec<AudioFrame>,
    pub transcript: Vec<Vec<Token>>,
    pub translation: Vec<Vec<Token>>,
    /// Nominal spoken seconds (token count times the nominal rate).
    pub speech_seconds: f64,
}

impl SessionScript {
    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 * FRAME_SECONDS
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub seed: u64,
    pub params: CorpusParams,
    pub sessions: Vec<SessionScript>,
}

/// Generates `sessions` deterministic session scripts. The same (seed,
/// params, sessions) triple always yields a byte-identical corpus.
pub fn generate_corpus(seed: u64, sessions: usize, params: &CorpusParams) -> Corpus {
    let scripts = (0..sessions).map(|i| generate_session(seed, i as u64, params)).collect();
    Corpus { seed, params: params.clone(), sessions: scripts }
}

fn generate_session(seed: u64, session_index: u64, params: &CorpusParams) -> SessionScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(session_index + 1)));
    let mut frames: Vec<AudioFrame> = Vec::new();
    let mut transcript: Vec<Vec<Token>> = Vec::new();
    let mut token_counter = 0usize;
    let mut nominal_words = 0usize;

    frames.extend(std::iter::repeat(AudioFrame::silence()).take(params.lead_in_frames));
    for _ in 0..params.utterances {
        let jitter = rng.gen_range(0..=4) as i64 - 2;
        let words = (params.tokens_per_sentence as i64 + jitter).max(1) as usize;
        let mut sentence: Vec<Token> = Vec::with_capacity(words);
        // Cumulative frame boundaries keep the total speech length close to
        // the nominal rate even when word durations are not frame-aligned.
        let mut elapsed = 0.0f64;
        let mut frame_cursor = 0usize;
        for w in 0..words {
            token_counter += 1;
            nominal_words += 1;
            let mut token = format!("a{token_counter}");
            if w == words - 1 {
                token.push('.');
            }
            let jitter = rng.gen_range(-params.token_jitter_s..=params.token_jitter_s);
            elapsed += (params.token_seconds + jitter).max(2.0 * FRAME_SECONDS);
            let boundary = (elapsed / FRAME_SECONDS).round() as usize;
            let len = boundary.saturating_sub(frame_cursor).max(1);
            frames.extend(std::iter::repeat(AudioFrame::speech(token.clone())).take(len));
            frame_cursor += len;
            sentence.push(token);
        }
        transcript.push(sentence);
        frames.extend(std::iter::repeat(AudioFrame::silence()).take(params.gap_frames));
    }

    let translation = transcript
        .iter()
        .map(|sentence| mock_mt_translate(sentence, &[]).expect("reference translation"))
        .collect();
    SessionScript {
        frames,
        transcript,
        translation,
        speech_seconds: nominal_words as f64 * params.token_seconds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_byte_identical_corpora() {
        let params = CorpusParams::default();
        let a = generate_corpus(1, 3, &params);
        let b = generate_corpus(1, 3, &params);
        assert_eq!(a, b);
        let c = generate_corpus(2, 3, &params);
        assert_ne!(a, c);
    }

    #[test]
    fn nominal_speech_duration_is_token_count_times_rate() {
        // 10 utterances x 8 words at 0.4 s/word: 32 s of nominal speech plus
        // the configured gaps.
        let params = CorpusParams {
            utterances: 10,
            tokens_per_sentence: 8,
            token_seconds: 0.4,
            token_jitter_s: 0.0,
            gap_frames: 20,
            lead_in_frames: 10,
        };
        let corpus = generate_corpus(7, 1, &params);
        let script = &corpus.sessions[0];
        let words: usize = script.transcript.iter().map(|s| s.len()).sum();
        // Sentence lengths jitter by up to +-2 words around the mean.
        assert!((words as i64 - 80).abs() <= 20);
        assert!((script.speech_seconds - words as f64 * 0.4).abs() < 1e-9);
        // Frame quantization stays within one frame of nominal.
        let speech_frames = script.frames.iter().filter(|f| f.is_speech).count();
        assert!((speech_frames as f64 * FRAME_SECONDS - script.speech_seconds).abs() < 10.0 * FRAME_SECONDS);
        // Gaps: lead-in plus one gap per utterance.
        let silence = script.frames.len() - speech_frames;
        assert_eq!(silence, 10 + 10 * 20);
    }

    #[test]
    fn references_are_exact_mock_translations() {
        let corpus = generate_corpus(3, 1, &CorpusParams::default());
        let script = &corpus.sessions[0];
        for (source, target) in script.transcript.iter().zip(&script.translation) {
            assert_eq!(target, &mock_mt_translate(source, &[]).unwrap());
            // Attached terminator on the last word of every sentence.
            assert!(source.last().unwrap().ends_with('.'));
            assert!(target.last().unwrap().ends_with('.'));
        }
        // Tokens are unique across the whole session.
        let mut seen = std::collections::BTreeSet::new();
        for token in script.transcript.iter().flatten() {
            assert!(seen.insert(token.clone()), "duplicate token {token}");
        }
    }
}
