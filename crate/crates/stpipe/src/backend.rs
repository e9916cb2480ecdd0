//! Stateless shared backend layer: deterministic mock ASR/MT/ST models with
//! forced-prefix decoding, a simulated compute cost model and request
//! batching arithmetic.
//!
//! The mocks replace real neural models. Audio models read token labels off
//! the frames; the MT mock applies a fixed pair-swap word reordering with an
//! `aN -> bN` lexicon. A noise model perturbs tokens that still lack right
//! context, which is exactly the hypothesis instability the middleware's
//! stability detection has to absorb.

use crate::types::{frames_duration_s, AudioFrame, BackendKind, SessionId, Token};
use serde::{Deserialize, Serialize};

/// Reserved marker appended to perturbed tokens. Guarantees a perturbed token
/// never equals its clean form, which keeps WER and flicker counts
/// attributable to the noise model.
pub const PERTURB_MARK: char = '*';

/// Simulated compute cost of one backend invocation.
///
/// A batch of one costs `base_s + per_unit_s * units`; a batch of n >= 2
/// costs `base_s + batch_discount * sum(per_unit_s * units_i)`. Units are
/// seconds of audio for speech models and input tokens for text models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub base_s: f64,
    pub per_unit_s: f64,
    pub batch_discount: f64,
}

impl CostModel {
    pub fn speech_default() -> Self {
        CostModel { base_s: 0.1, per_unit_s: 0.05, batch_discount: 0.5 }
    }

    pub fn mt_default() -> Self {
        CostModel { base_s: 0.05, per_unit_s: 0.01, batch_discount: 0.5 }
    }

    pub fn batch_delay(&self, units: &[f64]) -> f64 {
        if units.is_empty() {
            return 0.0;
        }
        let scale = if units.len() == 1 { 1.0 } else { self.batch_discount };
        self.base_s + scale * units.iter().map(|u| self.per_unit_s * u).sum::<f64>()
    }
}

/// Deterministic perturbation of tokens that still lack right context.
///
/// A token whose remaining right context (input end minus token start) is at
/// least `horizon_s` is never perturbed. Below the horizon, the token is
/// perturbed iff `hash(seed, token, discretized context) % perturb_period ==
/// 0`, so the same (seed, input) always produces the same hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub horizon_s: f64,
    pub perturb_period: u64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { horizon_s: 0.6, perturb_period: 3, seed: 7 }
    }
}

impl NoiseModel {
    pub fn disabled() -> Self {
        NoiseModel { horizon_s: 0.0, perturb_period: 1, seed: 0 }
    }

    fn perturbs(&self, token: &str, remaining_s: f64) -> bool {
        if remaining_s >= self.horizon_s || self.perturb_period == 0 {
            return false;
        }
        // Remaining context is discretized at horizon granularity, so the
        // decision for a token is stable for as long as it stays inside the
        // horizon and snaps clean the moment it leaves. Hypotheses decoded
        // more than a horizon apart therefore never agree on a perturbed
        // token, which is what lets larger chunk sizes commit cleaner text.
        let bucket = (remaining_s / self.horizon_s).floor() as u64;
        let mut h = self.seed ^ 0xcbf2_9ce4_8422_2325;
        for b in token.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h ^= bucket;
        h = h.wrapping_mul(0x1000_0000_01b3);
        h ^= h >> 33;
        h % self.perturb_period == 0
    }

    fn apply(&self, token: &Token, remaining_s: f64) -> Token {
        if self.perturbs(token, remaining_s) {
            format!("{token}{PERTURB_MARK}")
        } else {
            token.clone()
        }
    }
}

/// Token sequence with per-token audio end times, relative to the start of
/// the audio the model was given. `token_end_s` is nondecreasing and has one
/// entry per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedHypothesis {
    pub tokens: Vec<Token>,
    pub token_end_s: Vec<f64>,
}

impl TimedHypothesis {
    pub fn empty() -> Self {
        TimedHypothesis { tokens: Vec::new(), token_end_s: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Start time of token `i`: end of the previous token, or `0.0`.
    pub fn token_start_s(&self, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else {
            self.token_end_s[i - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RequestInput {
    Audio { frames: Vec<AudioFrame>, segment_ended: bool },
    Text { tokens: Vec<Token> },
}

/// One stateless backend invocation. The forced prefix must be reproduced
/// verbatim at the start of the response.
#[derive(Clone, Debug, PartialEq)]
pub struct BackendRequest {
    pub kind: BackendKind,
    pub input: RequestInput,
    pub forced_prefix: Vec<Token>,
    pub session: SessionId,
}

impl BackendRequest {
    /// Cost units: audio seconds for speech inputs, token count for text.
    pub fn units(&self) -> f64 {
        match &self.input {
            RequestInput::Audio { frames, .. } => frames_duration_s(frames.len()),
            RequestInput::Text { tokens } => tokens.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BackendResponse {
    Timed(TimedHypothesis),
    Plain(Vec<Token>),
}

impl BackendResponse {
    pub fn tokens(&self) -> &[Token] {
        match self {
            BackendResponse::Timed(h) => &h.tokens,
            BackendResponse::Plain(t) => t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("forced prefix token {index} (`{forced}`) does not match the input (`{expected}`)")]
    ForcedPrefixMismatch { index: usize, forced: String, expected: String },
    #[error("forced prefix of {forced} tokens is longer than the decodable input ({available})")]
    ForcedPrefixTooLong { forced: usize, available: usize },
    #[error("batch mixes request kinds")]
    MixedKinds,
    #[error("{kind:?} request carries the wrong input payload")]
    KindInputMismatch { kind: BackendKind },
}

fn strip_marks(token: &str) -> &str {
    token.trim_end_matches(PERTURB_MARK)
}

/// Reads the synthetic token stream off labeled frames: each maximal run of
/// one label is a token ending at its last frame. Unlabeled frames are
/// silence and only separate runs.
pub fn read_labels(frames: &[AudioFrame]) -> TimedHypothesis {
    let mut tokens = Vec::new();
    let mut ends = Vec::new();
    let mut current: Option<&Token> = None;
    for (i, frame) in frames.iter().enumerate() {
        match (&frame.label, current) {
            (Some(label), Some(open)) if label == open => {
                *ends.last_mut().unwrap() = frames_duration_s(i + 1);
            }
            (Some(label), _) => {
                tokens.push(label.clone());
                ends.push(frames_duration_s(i + 1));
                current = Some(label);
            }
            (None, _) => current = None,
        }
    }
    TimedHypothesis { tokens, token_end_s: ends }
}

fn check_forced_prefix(forced: &[Token], clean: &TimedHypothesis) -> Result<(), BackendError> {
    if forced.len() > clean.len() {
        return Err(BackendError::ForcedPrefixTooLong { forced: forced.len(), available: clean.len() });
    }
    for (i, f) in forced.iter().enumerate() {
        if strip_marks(f) != strip_marks(&clean.tokens[i]) {
            return Err(BackendError::ForcedPrefixMismatch {
                index: i,
                forced: f.clone(),
                expected: clean.tokens[i].clone(),
            });
        }
    }
    Ok(())
}

fn decode_timed(clean: TimedHypothesis, forced: &[Token], noise: &NoiseModel, audio_s: f64, ended: bool) -> Result<TimedHypothesis, BackendError> {
    check_forced_prefix(forced, &clean)?;
    let mut tokens = Vec::with_capacity(clean.len());
    tokens.extend_from_slice(forced);
    for i in forced.len()..clean.len() {
        let remaining = audio_s - clean.token_start_s(i);
        if ended {
            tokens.push(clean.tokens[i].clone());
        } else {
            tokens.push(noise.apply(&clean.tokens[i], remaining));
        }
    }
    Ok(TimedHypothesis { tokens, token_end_s: clean.token_end_s })
}

/// Mock transcription: forced prefix, then the labels after its alignment
/// point, with sub-horizon tokens perturbed unless the segment has ended.
pub fn mock_asr_decode(frames: &[AudioFrame], forced_prefix: &[Token], noise: &NoiseModel, segment_ended: bool) -> Result<TimedHypothesis, BackendError> {
    let clean = read_labels(frames);
    let audio_s = frames_duration_s(frames.len());
    decode_timed(clean, forced_prefix, noise, audio_s, segment_ended)
}

fn is_terminator(token: &str) -> bool {
    matches!(token, "." | "!" | "?")
}

fn ends_sentence(token: &str) -> bool {
    strip_marks(token).ends_with(['.', '!', '?'])
}

/// Target-language image of one source token: `aN -> bN` (keeping any
/// attached terminator and perturbation marks), terminators map to
/// themselves, anything else is copied verbatim.
fn mt_image(token: &Token) -> Token {
    let core = strip_marks(token);
    let marks = &token[core.len()..];
    let (word, term) = match core.char_indices().last() {
        Some((i, c)) if matches!(c, '.' | '!' | '?') && i > 0 => (&core[..i], &core[i..]),
        _ => (core, ""),
    };
    let image = match word.strip_prefix('a') {
        Some(rest) if !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()) => format!("b{rest}"),
        _ => word.to_string(),
    };
    format!("{image}{term}{marks}")
}

fn pair_swap(source: &[Token]) -> Vec<Token> {
    pair_swap_aligned(source, None).0
}

/// Pair-swap mapping, optionally tracking target-side end times. Both tokens
/// of a swapped pair get the pair's end time: the pair is the reordering
/// unit, so it is also the alignment unit, and any committed-token boundary
/// is then a safe truncation point.
fn pair_swap_aligned(source: &[Token], ends: Option<&[f64]>) -> (Vec<Token>, Vec<f64>) {
    let mut out = Vec::with_capacity(source.len());
    let mut out_ends = Vec::with_capacity(source.len());
    let mut held: Option<usize> = None;
    let end_of = |i: usize| ends.map(|e| e[i]).unwrap_or(0.0);
    for (i, token) in source.iter().enumerate() {
        if is_terminator(strip_marks(token)) {
            if let Some(h) = held.take() {
                out.push(mt_image(&source[h]));
                out_ends.push(end_of(h));
            }
            out.push(token.clone());
            out_ends.push(end_of(i));
        } else if ends_sentence(token) {
            // Terminator attached to the word: closes the pair group, and the
            // terminator-carrying word stays sentence-final.
            if let Some(h) = held.take() {
                out.push(mt_image(&source[h]));
                out_ends.push(end_of(h));
            }
            out.push(mt_image(token));
            out_ends.push(end_of(i));
        } else if let Some(h) = held.take() {
            out.push(mt_image(token));
            out.push(mt_image(&source[h]));
            out_ends.push(end_of(i));
            out_ends.push(end_of(i));
        } else {
            held = Some(i);
        }
    }
    if let Some(h) = held {
        out.push(mt_image(&source[h]));
        out_ends.push(end_of(h));
    }
    (out, out_ends)
}

/// Mock translation: source pairs (a1, a2) come out swapped as (b2, b1), a
/// trailing unpaired token keeps its place, terminators map to themselves.
/// The forced prefix must positionally match the recomputed mapping; decoding
/// then simply continues from there.
pub fn mock_mt_translate(source: &[Token], forced_prefix: &[Token]) -> Result<Vec<Token>, BackendError> {
    let out = pair_swap(source);
    if forced_prefix.len() > out.len() {
        return Err(BackendError::ForcedPrefixTooLong { forced: forced_prefix.len(), available: out.len() });
    }
    for (i, f) in forced_prefix.iter().enumerate() {
        if f != &out[i] {
            return Err(BackendError::ForcedPrefixMismatch {
                index: i,
                forced: f.clone(),
                expected: out[i].clone(),
            });
        }
    }
    Ok(out)
}

/// Mock end-to-end speech translation: the pair-swap mapping of the frame
/// labels, with perturbation applied on the target side. Target token i
/// keeps the end time of source position i (the swap happens inside pairs,
/// so end times stay nondecreasing).
///
/// The forced prefix consumes one source position per token. Normally it
/// positionally matches the mapping of the visible labels and decoding just
/// continues; after context truncation cut the window mid-pair, the prefix
/// is kept as opaque forced context and the remaining source is mapped with
/// a fresh pair grouping.
pub fn mock_st_decode(frames: &[AudioFrame], forced_prefix: &[Token], noise: &NoiseModel, segment_ended: bool) -> Result<TimedHypothesis, BackendError> {
    let labels = read_labels(frames);
    if forced_prefix.len() > labels.len() {
        return Err(BackendError::ForcedPrefixTooLong { forced: forced_prefix.len(), available: labels.len() });
    }
    let (natural, natural_ends) = pair_swap_aligned(&labels.tokens, Some(&labels.token_end_s));
    let aligned = forced_prefix.iter().zip(&natural).all(|(f, n)| strip_marks(f) == strip_marks(n));
    let clean = if aligned {
        TimedHypothesis { tokens: natural, token_end_s: natural_ends }
    } else {
        // Truncation cut the window out of step with the committed prefix:
        // keep the prefix as opaque forced context and map the remaining
        // source with a fresh pair grouping.
        let k = forced_prefix.len();
        let (cont, cont_ends) = pair_swap_aligned(&labels.tokens[k..], Some(&labels.token_end_s[k..]));
        let mut tokens = forced_prefix.to_vec();
        tokens.extend(cont);
        let mut ends = labels.token_end_s[..k].to_vec();
        ends.extend(cont_ends);
        TimedHypothesis { tokens, token_end_s: ends }
    };
    let audio_s = frames_duration_s(frames.len());
    decode_timed(clean, forced_prefix, noise, audio_s, segment_ended)
}

/// The shared backend: one cost model per model family, a noise model, and
/// the batching limits. Requests are stateless; responses depend only on the
/// request content.
#[derive(Clone, Debug)]
pub struct Backend {
    pub speech_cost: CostModel,
    pub mt_cost: CostModel,
    pub noise: NoiseModel,
    /// Optional harsher noise for the end-to-end model, a labeled modeling
    /// knob for quality-gap experiments; defaults to `noise`.
    pub st_noise: Option<NoiseModel>,
    pub max_batch: usize,
    pub replicas: usize,
}

impl Default for Backend {
    fn default() -> Self {
        Backend {
            speech_cost: CostModel::speech_default(),
            mt_cost: CostModel::mt_default(),
            noise: NoiseModel::default(),
            st_noise: None,
            max_batch: 8,
            replicas: 1,
        }
    }
}

impl Backend {
    pub fn cost_for(&self, kind: BackendKind) -> &CostModel {
        match kind {
            BackendKind::Asr | BackendKind::St => &self.speech_cost,
            BackendKind::Mt => &self.mt_cost,
        }
    }

    fn noise_for(&self, kind: BackendKind) -> &NoiseModel {
        match kind {
            BackendKind::St => self.st_noise.as_ref().unwrap_or(&self.noise),
            _ => &self.noise,
        }
    }

    pub fn process_one(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        match (&request.kind, &request.input) {
            (BackendKind::Asr, RequestInput::Audio { frames, segment_ended }) => Ok(BackendResponse::Timed(
                mock_asr_decode(frames, &request.forced_prefix, self.noise_for(BackendKind::Asr), *segment_ended)?,
            )),
            (BackendKind::St, RequestInput::Audio { frames, segment_ended }) => Ok(BackendResponse::Timed(
                mock_st_decode(frames, &request.forced_prefix, self.noise_for(BackendKind::St), *segment_ended)?,
            )),
            (BackendKind::Mt, RequestInput::Text { tokens }) => {
                Ok(BackendResponse::Plain(mock_mt_translate(tokens, &request.forced_prefix)?))
            }
            (kind, _) => Err(BackendError::KindInputMismatch { kind: *kind }),
        }
    }

    /// Decodes a homogeneous batch and returns positionally matched responses
    /// plus the simulated delay the whole batch takes.
    pub fn process_batch(&self, requests: &[BackendRequest]) -> Result<(Vec<BackendResponse>, f64), BackendError> {
        if requests.is_empty() {
            return Ok((Vec::new(), 0.0));
        }
        let kind = requests[0].kind;
        if requests.iter().any(|r| r.kind != kind) {
            return Err(BackendError::MixedKinds);
        }
        let responses: Result<Vec<_>, _> = requests.iter().map(|r| self.process_one(r)).collect();
        let units: Vec<f64> = requests.iter().map(|r| r.units()).collect();
        Ok((responses?, self.cost_for(kind).batch_delay(&units)))
    }
}
