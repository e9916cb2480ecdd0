//! Stateful streaming speech middleware.
//!
//! Three cooperating pieces:
//!
//! * [`Vad`] turns per-frame speech flags into segments via a moving average
//!   with separate start/end thresholds.
//! * [`LocalAgreement`] is the per-segment stability detector: it decodes the
//!   buffered audio every time another chunk of `chunk_size_s` seconds has
//!   arrived and commits the common prefix of consecutive hypotheses. In
//!   fixed mode only those commits are emitted (always stable); in revision
//!   mode the uncommitted remainder and interim decodes also go out as
//!   unstable messages. Old audio and its committed prefix are cut away once
//!   the buffer exceeds the model's maximum input size.
//! * [`SpeechSession`] owns the VAD, the open/closed segments of one session
//!   and the input sequence bookkeeping. It never calls the backend itself:
//!   it yields [`DecodePlan`]s and consumes hypotheses, so the same logic
//!   runs under the virtual-clock engine, a synchronous driver, or a test.
//!
//! One session's state is owned by exactly one worker at a time; the broker's
//! sticky partitioning guarantees it.

use crate::backend::TimedHypothesis;
use crate::types::{
    common_token_prefix, frames_duration_s, AudioFrame, Message, Payload, StabilityMode, Token,
    FRAME_SECONDS,
};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MiddlewareError {
    #[error("sequence gap in pending input: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("pending input mixes sessions")]
    MixedSessions,
    #[error("expected an audio payload")]
    ExpectedAudio,
    #[error("expected a text payload")]
    ExpectedText,
    #[error("backend contract violation: {0}")]
    Contract(String),
}

/// Moving-average voice activity detection over per-frame classifications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub window_frames: usize,
    pub start_threshold: f64,
    pub end_threshold: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        VadConfig { window_frames: 10, start_threshold: 0.9, end_threshold: 0.1 }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window_frames < 1 {
            return Err("vad.window_frames must be at least 1".into());
        }
        if self.end_threshold > self.start_threshold {
            return Err("vad.end_threshold must not exceed vad.start_threshold".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VadEvent {
    None,
    SegmentStart,
    SegmentContinue,
    SegmentEnd,
}

/// The average is taken over a fixed-size window that starts out all-silence,
/// so a fresh detector needs a run of speech frames before it opens a
/// segment.
#[derive(Clone, Debug)]
pub struct Vad {
    cfg: VadConfig,
    window: VecDeque<bool>,
    speech_in_window: usize,
    open: bool,
}

impl Vad {
    pub fn new(cfg: VadConfig) -> Self {
        let window = std::iter::repeat(false).take(cfg.window_frames).collect();
        Vad { cfg, window, speech_in_window: 0, open: false }
    }

    pub fn is_open(&self) -> bool {
        self.open
    }

    pub fn step(&mut self, is_speech: bool) -> VadEvent {
        if self.window.pop_front() == Some(true) {
            self.speech_in_window -= 1;
        }
        self.window.push_back(is_speech);
        if is_speech {
            self.speech_in_window += 1;
        }
        let average = self.speech_in_window as f64 / self.cfg.window_frames as f64;
        if !self.open {
            if average > self.cfg.start_threshold {
                self.open = true;
                return VadEvent::SegmentStart;
            }
            VadEvent::None
        } else if average < self.cfg.end_threshold {
            self.open = false;
            VadEvent::SegmentEnd
        } else {
            VadEvent::SegmentContinue
        }
    }
}

/// Chunk-size and truncation parameters of the stability detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct La2Config {
    pub chunk_size_s: f64,
    pub mode: StabilityMode,
    pub max_input_s: f64,
}

impl Default for La2Config {
    fn default() -> Self {
        La2Config { chunk_size_s: 1.0, mode: StabilityMode::Fixed, max_input_s: 8.0 }
    }
}

impl La2Config {
    pub fn validate(&self) -> Result<(), String> {
        if self.chunk_size_s <= 0.0 {
            return Err("la2.chunk_size_s must be positive".into());
        }
        if self.max_input_s < 2.0 * self.chunk_size_s {
            return Err("la2.max_input_s must be at least twice la2.chunk_size_s".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodePurpose {
    /// A chunk boundary was reached: decode and move the agreement forward.
    Chunk,
    /// Revision-mode decode between chunk boundaries, output only unstable.
    Interim,
    /// The segment ended: decode once more and commit everything.
    Final,
}

/// A backend invocation the middleware wants to make.
#[derive(Clone, Debug)]
pub struct DecodePlan {
    pub purpose: DecodePurpose,
    pub frames: Vec<AudioFrame>,
    pub forced_prefix: Vec<Token>,
    pub segment_ended: bool,
    /// Seconds of segment audio cut away in front of `frames` by truncation;
    /// hypothesis times are shifted by this to stay segment-absolute.
    pub audio_offset_s: f64,
}

/// Tokens emitted by one decode step, with their aligned audio span
/// (segment-relative inside [`LocalAgreement`], session-absolute once
/// [`SpeechSession`] re-bases them).
#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub tokens: Vec<Token>,
    pub stable: bool,
    pub start_s: f64,
    pub end_s: f64,
}

/// Per-segment stability detection state.
#[derive(Clone, Debug)]
pub struct LocalAgreement {
    buffer: Vec<AudioFrame>,
    truncation_offset_s: f64,
    consumed_chunks: u32,
    committed: Vec<Token>,
    committed_end_s: Vec<f64>,
    /// Previous hypothesis continuation beyond everything committed so far.
    prev_continuation: Option<Vec<Token>>,
    ended: bool,
    finalized: bool,
    new_audio: bool,
    truncation_warnings: u64,
}

impl Default for LocalAgreement {
    fn default() -> Self {
        Self::new()
    }
}

impl LocalAgreement {
    pub fn new() -> Self {
        LocalAgreement {
            buffer: Vec::new(),
            truncation_offset_s: 0.0,
            consumed_chunks: 0,
            committed: Vec::new(),
            committed_end_s: Vec::new(),
            prev_continuation: None,
            ended: false,
            finalized: false,
            new_audio: false,
            truncation_warnings: 0,
        }
    }

    pub fn ingest(&mut self, frames: &[AudioFrame]) {
        debug_assert!(!self.ended, "audio after segment end");
        if !frames.is_empty() {
            self.buffer.extend(frames.iter().cloned());
            self.new_audio = true;
        }
    }

    pub fn end_segment(&mut self) {
        self.ended = true;
    }

    pub fn is_ended(&self) -> bool {
        self.ended
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn committed_tokens(&self) -> &[Token] {
        &self.committed
    }

    pub fn truncation_warnings(&self) -> u64 {
        self.truncation_warnings
    }

    /// Total audio seen for this segment, including what truncation removed.
    pub fn total_audio_s(&self) -> f64 {
        self.truncation_offset_s + frames_duration_s(self.buffer.len())
    }

    /// Committed tokens still aligned inside the buffered audio; these are
    /// what gets forced into the next decode.
    fn forced_prefix(&self) -> Vec<Token> {
        self.committed
            .iter()
            .zip(&self.committed_end_s)
            .filter(|(_, end)| **end > self.truncation_offset_s + 1e-9)
            .map(|(t, _)| t.clone())
            .collect()
    }

    /// Drops leading audio until the buffer fits `max_input_s`, cutting only
    /// at committed-token boundaries. If no boundary reaches far enough the
    /// cut stops at the last one (or nowhere) and a warning is counted.
    pub fn truncate_context(&mut self, cfg: &La2Config) {
        let buffered = frames_duration_s(self.buffer.len());
        if buffered <= cfg.max_input_s {
            return;
        }
        let needed = buffered - cfg.max_input_s;
        // Committed token ends, as positions inside the current buffer.
        let boundaries: Vec<f64> = self
            .committed_end_s
            .iter()
            .map(|e| e - self.truncation_offset_s)
            .filter(|p| *p > 1e-9)
            .collect();
        let cut = match boundaries.iter().find(|p| **p >= needed - 1e-9) {
            Some(p) => *p,
            None => match boundaries.last() {
                Some(p) => {
                    self.truncation_warnings += 1;
                    *p
                }
                None => {
                    self.truncation_warnings += 1;
                    return;
                }
            },
        };
        let cut_frames = ((cut + 1e-9) / FRAME_SECONDS).floor() as usize;
        if cut_frames == 0 {
            return;
        }
        let cut_frames = cut_frames.min(self.buffer.len());
        self.buffer.drain(..cut_frames);
        self.truncation_offset_s += frames_duration_s(cut_frames);
    }

    /// Next backend call this segment needs, if any. At most one `Interim`
    /// plan is produced per `ingest`, so load shedding drops those first.
    pub fn next_plan(&mut self, cfg: &La2Config) -> Option<DecodePlan> {
        if self.finalized {
            return None;
        }
        if self.ended {
            self.truncate_context(cfg);
            self.new_audio = false;
            if self.buffer.is_empty() {
                self.finalized = true;
                return None;
            }
            return Some(DecodePlan {
                purpose: DecodePurpose::Final,
                frames: self.buffer.clone(),
                forced_prefix: self.forced_prefix(),
                segment_ended: true,
                audio_offset_s: self.truncation_offset_s,
            });
        }
        let due = cfg.chunk_size_s * (self.consumed_chunks + 1) as f64;
        if self.total_audio_s() >= due {
            self.truncate_context(cfg);
            self.new_audio = false;
            return Some(DecodePlan {
                purpose: DecodePurpose::Chunk,
                frames: self.buffer.clone(),
                forced_prefix: self.forced_prefix(),
                segment_ended: false,
                audio_offset_s: self.truncation_offset_s,
            });
        }
        if cfg.mode == StabilityMode::Revision && self.new_audio && !self.buffer.is_empty() {
            self.new_audio = false;
            return Some(DecodePlan {
                purpose: DecodePurpose::Interim,
                frames: self.buffer.clone(),
                forced_prefix: self.forced_prefix(),
                segment_ended: false,
                audio_offset_s: self.truncation_offset_s,
            });
        }
        None
    }

    /// Applies the hypothesis produced for `plan` and returns what to emit.
    pub fn apply_decode(
        &mut self,
        cfg: &La2Config,
        plan: &DecodePlan,
        hypothesis: &TimedHypothesis,
    ) -> Result<Vec<Emission>, MiddlewareError> {
        let forced = plan.forced_prefix.len();
        if hypothesis.len() < forced || hypothesis.tokens[..forced] != plan.forced_prefix[..] {
            return Err(MiddlewareError::Contract(format!(
                "backend did not reproduce the forced prefix (got {:?}, forced {:?})",
                hypothesis.tokens, plan.forced_prefix
            )));
        }
        // Continuation beyond everything already committed, in
        // segment-absolute time.
        let cont_tokens = &hypothesis.tokens[forced..];
        let cont_ends: Vec<f64> =
            hypothesis.token_end_s[forced..].iter().map(|e| e + plan.audio_offset_s).collect();
        let cont_start = |i: usize| -> f64 {
            if i == 0 {
                if forced > 0 {
                    hypothesis.token_end_s[forced - 1] + plan.audio_offset_s
                } else {
                    plan.audio_offset_s
                }
            } else {
                cont_ends[i - 1]
            }
        };

        let mut emissions = Vec::new();
        match plan.purpose {
            DecodePurpose::Final => {
                if !cont_tokens.is_empty() {
                    emissions.push(Emission {
                        tokens: cont_tokens.to_vec(),
                        stable: true,
                        start_s: cont_start(0),
                        end_s: *cont_ends.last().unwrap(),
                    });
                    self.committed.extend_from_slice(cont_tokens);
                    self.committed_end_s.extend_from_slice(&cont_ends);
                }
                self.prev_continuation = None;
                self.finalized = true;
            }
            DecodePurpose::Chunk => {
                // Chunks are consumed up to the audio this decode covered;
                // anything that arrived while the call was in flight triggers
                // the next plan immediately.
                let decoded_s = plan.audio_offset_s + frames_duration_s(plan.frames.len());
                self.consumed_chunks = (decoded_s / cfg.chunk_size_s).floor() as u32;
                match self.prev_continuation.take() {
                    None => {
                        // First chunk: remember the hypothesis, emit nothing
                        // stable yet.
                        self.prev_continuation = Some(cont_tokens.to_vec());
                        if cfg.mode == StabilityMode::Revision && !cont_tokens.is_empty() {
                            emissions.push(Emission {
                                tokens: cont_tokens.to_vec(),
                                stable: false,
                                start_s: cont_start(0),
                                end_s: *cont_ends.last().unwrap(),
                            });
                        }
                    }
                    Some(prev) => {
                        let agreed = common_token_prefix(&prev, cont_tokens).len();
                        if agreed > 0 {
                            emissions.push(Emission {
                                tokens: cont_tokens[..agreed].to_vec(),
                                stable: true,
                                start_s: cont_start(0),
                                end_s: cont_ends[agreed - 1],
                            });
                            self.committed.extend_from_slice(&cont_tokens[..agreed]);
                            self.committed_end_s.extend_from_slice(&cont_ends[..agreed]);
                        }
                        self.prev_continuation = Some(cont_tokens[agreed..].to_vec());
                        if cfg.mode == StabilityMode::Revision && agreed < cont_tokens.len() {
                            emissions.push(Emission {
                                tokens: cont_tokens[agreed..].to_vec(),
                                stable: false,
                                start_s: cont_start(agreed),
                                end_s: *cont_ends.last().unwrap(),
                            });
                        }
                    }
                }
            }
            DecodePurpose::Interim => {
                // Pure revision-mode output; the agreement state is untouched.
                if !cont_tokens.is_empty() {
                    emissions.push(Emission {
                        tokens: cont_tokens.to_vec(),
                        stable: false,
                        start_s: cont_start(0),
                        end_s: *cont_ends.last().unwrap(),
                    });
                }
            }
        }
        Ok(emissions)
    }

    /// Synchronous convenience: runs every pending decode through `decode`
    /// and collects the emissions. The engine uses `next_plan`/`apply_decode`
    /// directly so calls can be batched and charged to the virtual clock.
    pub fn la2_step<F>(&mut self, cfg: &La2Config, decode: &mut F) -> Result<Vec<Emission>, MiddlewareError>
    where
        F: FnMut(&DecodePlan) -> Result<TimedHypothesis, MiddlewareError>,
    {
        let mut out = Vec::new();
        while let Some(plan) = self.next_plan(cfg) {
            let hypothesis = decode(&plan)?;
            out.extend(self.apply_decode(cfg, &plan, &hypothesis)?);
            if plan.purpose == DecodePurpose::Interim {
                break;
            }
        }
        Ok(out)
    }
}

/// Concatenates seq-ordered pending audio messages of one session into one
/// contiguous frame sequence. Returns the frames and the number of
/// intermediate processing steps skipped by combining.
pub fn combine_pending_audio(messages: &[Message]) -> Result<(Vec<AudioFrame>, usize), MiddlewareError> {
    let mut frames = Vec::new();
    let mut expected: Option<u64> = None;
    let mut session = None;
    for message in messages {
        match session {
            None => session = Some(message.session),
            Some(s) if s != message.session => return Err(MiddlewareError::MixedSessions),
            _ => {}
        }
        if let Some(expected) = expected {
            if message.seq != expected {
                return Err(MiddlewareError::SequenceGap { expected, got: message.seq });
            }
        }
        expected = Some(message.seq + 1);
        match &message.payload {
            Payload::Audio(f) => frames.extend_from_slice(f),
            _ => return Err(MiddlewareError::ExpectedAudio),
        }
    }
    Ok((frames, messages.len().saturating_sub(1)))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeechConfig {
    pub vad: VadConfig,
    pub la2: La2Config,
}

struct Segment {
    start_s: f64,
    la: LocalAgreement,
}

/// A decode plan tagged with the segment it belongs to.
pub struct SessionPlan {
    segment: usize,
    pub plan: DecodePlan,
}

/// Emission re-based to the session clock.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionEmission {
    pub tokens: Vec<Token>,
    pub stable: bool,
    pub t_start: f64,
    pub t_end: f64,
}

/// All streaming state of one session inside the speech component.
pub struct SpeechSession {
    cfg: SpeechConfig,
    vad: Vad,
    /// Rolling pre-buffer of recent non-segment frames; when a segment opens,
    /// the trailing run of speech frames is pulled back in so the segment
    /// covers the whole burst that warmed the moving average up.
    recent: VecDeque<AudioFrame>,
    frames_seen: u64,
    segments: VecDeque<Segment>,
    first_segment_id: usize,
    expected_seq: Option<u64>,
    eos_seen: bool,
    eos_forwarded: bool,
    skipped_inputs: u64,
}

impl SpeechSession {
    pub fn new(cfg: SpeechConfig) -> Self {
        let vad = Vad::new(cfg.vad.clone());
        SpeechSession {
            cfg,
            vad,
            recent: VecDeque::new(),
            frames_seen: 0,
            segments: VecDeque::new(),
            first_segment_id: 0,
            eos_seen: false,
            eos_forwarded: false,
            expected_seq: None,
            skipped_inputs: 0,
        }
    }

    pub fn skipped_inputs(&self) -> u64 {
        self.skipped_inputs
    }

    pub fn truncation_warnings(&self) -> u64 {
        self.segments.iter().map(|s| s.la.truncation_warnings()).sum()
    }

    /// Ingests one drained batch of pending messages (audio and possibly the
    /// end-of-stream marker), running the VAD over every frame.
    pub fn ingest_pending(&mut self, messages: &[Message]) -> Result<(), MiddlewareError> {
        if messages.is_empty() {
            return Ok(());
        }
        if let Some(expected) = self.expected_seq {
            if messages[0].seq != expected {
                return Err(MiddlewareError::SequenceGap { expected, got: messages[0].seq });
            }
        }
        let has_end = messages.iter().any(|m| m.payload == Payload::End);
        let mut audio: Vec<Message> =
            messages.iter().filter(|m| m.payload != Payload::End).cloned().collect();
        // Re-number around the marker so combining still sees a gap-free run.
        let frames = if audio.is_empty() {
            Vec::new()
        } else {
            let base = audio[0].seq;
            for (i, m) in audio.iter_mut().enumerate() {
                m.seq = base + i as u64;
            }
            let (frames, skipped) = combine_pending_audio(&audio)?;
            self.skipped_inputs += skipped as u64;
            frames
        };
        self.expected_seq = Some(messages.last().unwrap().seq + 1);
        self.ingest_frames(&frames);
        if has_end {
            self.end_of_stream();
        }
        Ok(())
    }

    pub fn ingest_frames(&mut self, frames: &[AudioFrame]) {
        for frame in frames {
            let event = self.vad.step(frame.is_speech);
            self.frames_seen += 1;
            match event {
                VadEvent::SegmentStart => {
                    // Pull the warm-up run back out of the pre-buffer.
                    let mut run: Vec<AudioFrame> = Vec::new();
                    while matches!(self.recent.back(), Some(f) if f.is_speech) {
                        run.push(self.recent.pop_back().unwrap());
                    }
                    run.reverse();
                    run.push(frame.clone());
                    let start_s = frames_duration_s(self.frames_seen as usize - run.len());
                    let mut la = LocalAgreement::new();
                    la.ingest(&run);
                    self.segments.push_back(Segment { start_s, la });
                    self.recent.clear();
                }
                VadEvent::SegmentContinue | VadEvent::SegmentEnd => {
                    let segment = self.segments.back_mut().expect("open segment");
                    segment.la.ingest(std::slice::from_ref(frame));
                    if event == VadEvent::SegmentEnd {
                        segment.la.end_segment();
                    }
                }
                VadEvent::None => {
                    self.recent.push_back(frame.clone());
                    while self.recent.len() > self.cfg.vad.window_frames {
                        self.recent.pop_front();
                    }
                }
            }
        }
    }

    /// Force-closes any open segment; subsequent decode plans finalize it.
    pub fn end_of_stream(&mut self) {
        self.eos_seen = true;
        if let Some(segment) = self.segments.back_mut() {
            if !segment.la.is_ended() {
                segment.la.end_segment();
            }
        }
    }

    fn drop_finalized_front(&mut self) {
        while matches!(self.segments.front(), Some(s) if s.la.is_finalized()) {
            self.segments.pop_front();
            self.first_segment_id += 1;
        }
    }

    /// Oldest segment work first, so ended segments flush before newer ones
    /// make chunk calls.
    pub fn next_plan(&mut self) -> Option<SessionPlan> {
        loop {
            self.drop_finalized_front();
            let front_id = self.first_segment_id;
            let segment = self.segments.front_mut()?;
            match segment.la.next_plan(&self.cfg.la2) {
                Some(plan) => return Some(SessionPlan { segment: front_id, plan }),
                None => {
                    if segment.la.is_finalized() {
                        continue;
                    }
                    // The front segment is idle. Only an ended-but-unfinalized
                    // front can block younger segments, and next_plan always
                    // plans for those, so anything behind it can wait.
                    return None;
                }
            }
        }
    }

    pub fn apply_decode(
        &mut self,
        plan: &SessionPlan,
        hypothesis: &TimedHypothesis,
    ) -> Result<Vec<SessionEmission>, MiddlewareError> {
        let index = plan.segment.checked_sub(self.first_segment_id).expect("segment already dropped");
        let segment = &mut self.segments[index];
        let start = segment.start_s;
        let emissions = segment.la.apply_decode(&self.cfg.la2, &plan.plan, hypothesis)?;
        Ok(emissions
            .into_iter()
            .map(|e| SessionEmission {
                tokens: e.tokens,
                stable: e.stable,
                t_start: start + e.start_s,
                t_end: start + e.end_s,
            })
            .collect())
    }

    /// True once the end-of-stream marker arrived and every segment has been
    /// finalized, i.e. the worker should forward the marker downstream.
    pub fn ready_to_forward_end(&mut self) -> bool {
        self.drop_finalized_front();
        self.eos_seen && !self.eos_forwarded && self.segments.is_empty()
    }

    pub fn mark_end_forwarded(&mut self) {
        self.eos_forwarded = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{mock_asr_decode, NoiseModel};
    use crate::types::SessionId;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    fn speech_frames(label: &str, n: usize) -> Vec<AudioFrame> {
        (0..n).map(|_| AudioFrame::speech(label)).collect()
    }

    fn silence_frames(n: usize) -> Vec<AudioFrame> {
        (0..n).map(|_| AudioFrame::silence()).collect()
    }

    // ---- VAD ----

    #[test]
    fn vad_start_fires_when_average_first_exceeds_threshold() {
        let mut vad = Vad::new(VadConfig { window_frames: 10, start_threshold: 0.8, end_threshold: 0.2 });
        let mut events = Vec::new();
        for _ in 0..10 {
            events.push(vad.step(true));
        }
        // Average after k speech frames is k/10; first strictly above 0.8 is
        // at the 9th frame.
        assert_eq!(events[7], VadEvent::None);
        assert_eq!(events[8], VadEvent::SegmentStart);
        assert_eq!(events[9], VadEvent::SegmentContinue);
    }

    #[test]
    fn vad_never_starts_on_silence() {
        let mut vad = Vad::new(VadConfig::default());
        for _ in 0..500 {
            assert_eq!(vad.step(false), VadEvent::None);
        }
    }

    #[test]
    fn vad_end_fires_in_the_silence_and_segment_covers_burst_plus_hangover() {
        // 3 s of speech (100 frames) then 1 s silence (33 frames), window 10,
        // end threshold 0.2: the average drops below 0.2 once 9 of the last
        // 10 frames are silence, so the segment carries 9 hangover frames.
        let cfg = SpeechConfig {
            vad: VadConfig { window_frames: 10, start_threshold: 0.8, end_threshold: 0.2 },
            la2: La2Config::default(),
        };
        let mut session = SpeechSession::new(cfg);
        let mut frames = speech_frames("w", 100);
        frames.extend(silence_frames(33));
        session.ingest_frames(&frames);
        let segment = session.segments.front().unwrap();
        assert!(segment.la.is_ended());
        assert_eq!(segment.start_s, 0.0);
        assert_eq!(segment.la.buffer.len(), 100 + 9);
    }

    // ---- Local agreement ----

    /// Decoder closure over the mock ASR.
    fn asr(noise: NoiseModel) -> impl FnMut(&DecodePlan) -> Result<TimedHypothesis, MiddlewareError> {
        move |plan: &DecodePlan| {
            mock_asr_decode(&plan.frames, &plan.forced_prefix, &noise, plan.segment_ended)
                .map_err(|e| MiddlewareError::Contract(e.to_string()))
        }
    }

    /// Six tokens of 17 frames (0.51 s) each; every frame arrival is a drain.
    fn drive(mode: StabilityMode) -> Vec<Emission> {
        let cfg = La2Config { chunk_size_s: 1.0, mode, max_input_s: 8.0 };
        let noise = NoiseModel { horizon_s: 0.6, perturb_period: 1, seed: 0 };
        let mut la = LocalAgreement::new();
        let mut all = Vec::new();
        for i in 1..=6 {
            for frame in speech_frames(&format!("t{i}"), 17) {
                la.ingest(std::slice::from_ref(&frame));
                all.extend(la.la2_step(&cfg, &mut asr(noise)).unwrap());
            }
        }
        la.end_segment();
        all.extend(la.la2_step(&cfg, &mut asr(noise)).unwrap());
        all
    }

    #[test]
    fn fixed_mode_first_chunk_emits_nothing_then_commits_the_agreed_prefix() {
        let all = drive(StabilityMode::Fixed);
        // First chunk (1.02 s) decodes to "t1 t2*" and emits nothing; the
        // second (2.01 s) decodes to "t1 t2 t3 t4*", so only "t1" agrees.
        assert!(all.iter().all(|e| e.stable));
        assert_eq!(all[0].tokens, toks("t1"));
        assert!((all[0].start_s - 0.0).abs() < 1e-9);
        assert!((all[0].end_s - 0.51).abs() < 1e-9);
        // Everything ends up committed, cleanly, once the segment ends.
        let committed: Vec<Token> = all.iter().flat_map(|e| e.tokens.clone()).collect();
        assert_eq!(committed, toks("t1 t2 t3 t4 t5 t6"));
    }

    #[test]
    fn revision_mode_also_reveals_the_unstable_remainder() {
        let all = drive(StabilityMode::Revision);
        let unstable: Vec<&Emission> = all.iter().filter(|e| !e.stable).collect();
        assert!(!unstable.is_empty());
        // The first chunk's whole hypothesis goes out unstable.
        assert!(unstable.iter().any(|e| e.tokens == toks("t1 t2*")));
        // Right after the "t1" commit at the second chunk, the remainder of
        // the newest hypothesis is the unstable part.
        let commit_pos = all.iter().position(|e| e.stable).unwrap();
        assert_eq!(all[commit_pos].tokens, toks("t1"));
        assert_eq!(all[commit_pos + 1].tokens, toks("t2 t3 t4*"));
        assert!(!all[commit_pos + 1].stable);
        // Stable commits match fixed mode exactly.
        let stable: Vec<Token> = all.iter().filter(|e| e.stable).flat_map(|e| e.tokens.clone()).collect();
        assert_eq!(stable, toks("t1 t2 t3 t4 t5 t6"));
    }

    #[test]
    fn segment_shorter_than_chunk_commits_whole_hypothesis_on_end() {
        let cfg = La2Config { chunk_size_s: 2.0, mode: StabilityMode::Fixed, max_input_s: 8.0 };
        let mut la = LocalAgreement::new();
        la.ingest(&speech_frames("t1", 12));
        la.end_segment();
        let out = la.la2_step(&cfg, &mut asr(NoiseModel::disabled())).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].stable);
        assert_eq!(out[0].tokens, toks("t1"));
        assert!(la.is_finalized());
    }

    #[test]
    fn truncation_cuts_at_stable_boundaries_only() {
        let cfg = La2Config { chunk_size_s: 1.0, mode: StabilityMode::Fixed, max_input_s: 10.0 };
        let mut la = LocalAgreement::new();
        // 12 s buffered, committed tokens aligned at 1.5 s and 3.0 s.
        la.ingest(&speech_frames("x", 400));
        la.committed = toks("a b");
        la.committed_end_s = vec![1.5, 3.0];
        la.truncate_context(&cfg);
        // Needed 2 s; the first boundary at or past that is 3.0 s.
        assert!((la.truncation_offset_s - 3.0).abs() < 1e-9);
        assert_eq!(la.buffer.len(), 300);
        assert_eq!(la.forced_prefix(), Vec::<Token>::new());
        assert_eq!(la.truncation_warnings(), 0);

        // Below the limit: no-op.
        let mut la = LocalAgreement::new();
        la.ingest(&speech_frames("x", 100));
        la.truncate_context(&cfg);
        assert_eq!(la.truncation_offset_s, 0.0);

        // Over the limit with no stable tokens yet: warning, no cut.
        let mut la = LocalAgreement::new();
        la.ingest(&speech_frames("x", 400));
        la.truncate_context(&cfg);
        assert_eq!(la.truncation_offset_s, 0.0);
        assert_eq!(la.truncation_warnings(), 1);
    }

    #[test]
    fn truncation_with_insufficient_boundary_cuts_what_it_can_and_warns() {
        let cfg = La2Config { chunk_size_s: 1.0, mode: StabilityMode::Fixed, max_input_s: 10.0 };
        let mut la = LocalAgreement::new();
        la.ingest(&speech_frames("x", 400)); // 12 s
        la.committed = toks("a");
        la.committed_end_s = vec![0.9]; // largest boundary below the 2 s target
        la.truncate_context(&cfg);
        assert!((la.truncation_offset_s - 0.9).abs() < 1e-7);
        assert_eq!(la.truncation_warnings(), 1);
    }

    #[test]
    fn combine_concatenates_and_counts_skips() {
        let msg = |seq: u64, frames: Vec<AudioFrame>| Message {
            session: SessionId(1),
            origin: "in".into(),
            seq,
            stable: true,
            t_start: 0.0,
            t_end: 0.0,
            t_recv: 0.0,
            payload: Payload::Audio(frames),
        };
        let one = [msg(0, speech_frames("a", 5))];
        let (frames, skips) = combine_pending_audio(&one).unwrap();
        assert_eq!((frames.len(), skips), (5, 0));

        let three = [msg(0, speech_frames("a", 17)), msg(1, speech_frames("b", 17)), msg(2, speech_frames("c", 16))];
        let (frames, skips) = combine_pending_audio(&three).unwrap();
        assert_eq!((frames.len(), skips), (50, 2));
        assert_eq!(frames[0].label.as_deref(), Some("a"));
        assert_eq!(frames[49].label.as_deref(), Some("c"));

        let gap = [msg(0, vec![]), msg(2, vec![])];
        assert_eq!(
            combine_pending_audio(&gap).unwrap_err(),
            MiddlewareError::SequenceGap { expected: 1, got: 2 }
        );
    }

    #[test]
    fn stable_commitment_is_append_only_over_random_segments() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..60u64 {
            let cfg = La2Config {
                chunk_size_s: [0.5, 1.0, 2.0][(trial % 3) as usize],
                mode: StabilityMode::Revision,
                max_input_s: 8.0,
            };
            let noise = NoiseModel { horizon_s: 0.6, perturb_period: 2, seed: trial };
            let mut la = LocalAgreement::new();
            let n_tokens = rng.gen_range(3..12);
            let mut frames = Vec::new();
            for t in 0..n_tokens {
                frames.extend(speech_frames(&format!("a{t}"), rng.gen_range(10..22)));
            }
            let mut committed: Vec<Token> = Vec::new();
            let mut i = 0;
            while i < frames.len() {
                let step = rng.gen_range(1..30).min(frames.len() - i);
                la.ingest(&frames[i..i + step]);
                i += step;
                let out = la.la2_step(&cfg, &mut asr(noise)).unwrap();
                let before = committed.clone();
                committed.extend(out.iter().filter(|e| e.stable).flat_map(|e| e.tokens.clone()));
                assert_eq!(&committed[..before.len()], &before[..]);
            }
            la.end_segment();
            let out = la.la2_step(&cfg, &mut asr(noise)).unwrap();
            assert!(out.iter().all(|e| e.start_s <= e.end_s + 1e-9));
        }
    }

    // ---- SpeechSession ----

    #[test]
    fn session_finalizes_open_segment_on_end_of_stream() {
        let cfg = SpeechConfig { vad: VadConfig::default(), la2: La2Config::default() };
        let mut session = SpeechSession::new(cfg);
        session.ingest_frames(&speech_frames("t1", 17));
        session.end_of_stream();
        let plan = session.next_plan().expect("final decode");
        assert_eq!(plan.plan.purpose, DecodePurpose::Final);
        let hyp = mock_asr_decode(&plan.plan.frames, &[], &NoiseModel::disabled(), true).unwrap();
        let out = session.apply_decode(&plan, &hyp).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].stable);
        assert_eq!(out[0].tokens, toks("t1"));
        assert!(session.next_plan().is_none());
        assert!(session.ready_to_forward_end());
    }

    #[test]
    fn session_emission_times_are_session_absolute() {
        let cfg = SpeechConfig { vad: VadConfig::default(), la2: La2Config::default() };
        let mut session = SpeechSession::new(cfg);
        // 2 s of leading silence, then one labeled burst.
        let mut frames = silence_frames(67);
        frames.extend(speech_frames("t1", 17));
        frames.extend(silence_frames(20));
        session.ingest_frames(&frames);
        session.end_of_stream();
        let plan = session.next_plan().unwrap();
        let hyp = mock_asr_decode(&plan.plan.frames, &[], &NoiseModel::disabled(), true).unwrap();
        let out = session.apply_decode(&plan, &hyp).unwrap();
        // The segment starts where the burst starts, 67 frames in.
        assert!((out[0].t_start - frames_duration_s(67)).abs() < 1e-9);
        assert!((out[0].t_end - frames_duration_s(67 + 17)).abs() < 1e-9);
    }
}
