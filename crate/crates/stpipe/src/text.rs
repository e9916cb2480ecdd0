//! Stateful streaming text middleware.
//!
//! Incoming text is split into sentences by punctuation. Sentences made
//! entirely of stable text are translated exactly once and emitted stable.
//! For the sentence still growing, fixed mode runs local agreement over the
//! stable source words (commit the common prefix of consecutive
//! translations, force the committed target prefix); revision mode instead
//! re-translates stable-plus-unstable text on every drain and emits the full
//! hypothesis unstable. Unstable input replaces, never extends, the previous
//! unstable region.

use crate::speech::MiddlewareError;
use crate::types::{common_token_prefix, fractional_span, Message, Payload, StabilityMode, Token};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextConfig {
    pub mode: StabilityMode,
    /// Minimum count of new stable source words before another fixed-mode
    /// agreement step runs.
    pub trigger_words: usize,
    /// Characters that terminate a sentence when they end a token.
    pub terminators: String,
}

impl Default for TextConfig {
    fn default() -> Self {
        TextConfig { mode: StabilityMode::Fixed, trigger_words: 1, terminators: ".!?".into() }
    }
}

impl TextConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.trigger_words < 1 {
            return Err("text.trigger_words must be at least 1".into());
        }
        if self.terminators.is_empty() {
            return Err("text.terminators must not be empty".into());
        }
        Ok(())
    }
}

/// A source token with the audio span it aligns to.
#[derive(Clone, Debug, PartialEq)]
pub struct TimedToken {
    pub token: Token,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TranslatePurpose {
    /// A complete, fully stable sentence translated in one call.
    WholeSentence,
    /// Fixed-mode agreement step on the stable words seen so far.
    AgreementStep,
    /// Final call once a sentence completes after agreement steps ran.
    FinalizeSentence,
    /// Revision-mode re-translation of stable prefix plus unstable region.
    Revision,
}

/// One MT invocation the middleware wants to make.
#[derive(Clone, Debug)]
pub struct TranslatePlan {
    sentence: u64,
    pub purpose: TranslatePurpose,
    pub source: Vec<Token>,
    pub forced_prefix: Vec<Token>,
}

/// Tokens to emit, with target timestamps inherited from the covered source
/// span by proportional token interpolation.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmission {
    pub tokens: Vec<Token>,
    pub stable: bool,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Clone, Debug)]
struct Sentence {
    id: u64,
    source: Vec<TimedToken>,
    complete: bool,
    committed_target: Vec<Token>,
    prev_continuation: Option<Vec<Token>>,
    words_at_last_call: usize,
    /// End of the last emitted committed span, so progressive commits tile
    /// the sentence span.
    emitted_until_s: Option<f64>,
    done: bool,
}

impl Sentence {
    fn new(id: u64) -> Self {
        Sentence {
            id,
            source: Vec::new(),
            complete: false,
            committed_target: Vec::new(),
            prev_continuation: None,
            words_at_last_call: 0,
            emitted_until_s: None,
            done: false,
        }
    }

    fn start_s(&self) -> f64 {
        self.source.first().map(|t| t.start_s).unwrap_or(0.0)
    }

    fn end_s(&self) -> f64 {
        self.source.last().map(|t| t.end_s).unwrap_or(0.0)
    }

    fn tokens(&self) -> Vec<Token> {
        self.source.iter().map(|t| t.token.clone()).collect()
    }
}

/// All streaming state of one session inside the text component.
pub struct TextSession {
    cfg: TextConfig,
    sentences: VecDeque<Sentence>,
    next_sentence_id: u64,
    unstable: Vec<TimedToken>,
    unstable_dirty: bool,
    expected_seq: Option<u64>,
    eos_seen: bool,
    eos_forwarded: bool,
    skipped_inputs: u64,
}

impl TextSession {
    pub fn new(cfg: TextConfig) -> Self {
        TextSession {
            cfg,
            sentences: VecDeque::new(),
            next_sentence_id: 0,
            unstable: Vec::new(),
            unstable_dirty: false,
            expected_seq: None,
            eos_seen: false,
            eos_forwarded: false,
            skipped_inputs: 0,
        }
    }

    pub fn skipped_inputs(&self) -> u64 {
        self.skipped_inputs
    }

    fn ends_sentence(&self, token: &str) -> bool {
        token.chars().last().map(|c| self.cfg.terminators.contains(c)).unwrap_or(false)
    }

    fn open_sentence(&mut self) -> &mut Sentence {
        let needs_new = match self.sentences.back() {
            Some(s) => s.complete,
            None => true,
        };
        if needs_new {
            let s = Sentence::new(self.next_sentence_id);
            self.next_sentence_id += 1;
            self.sentences.push_back(s);
        }
        self.sentences.back_mut().unwrap()
    }

    /// Ingests one drained batch of pending messages in seq order. Stable
    /// tokens extend the sentence buffer (and clear the now-superseded
    /// unstable region); an unstable message replaces the unstable region.
    pub fn ingest_pending(&mut self, messages: &[Message]) -> Result<(), MiddlewareError> {
        if messages.is_empty() {
            return Ok(());
        }
        if let Some(expected) = self.expected_seq {
            if messages[0].seq != expected {
                return Err(MiddlewareError::SequenceGap { expected, got: messages[0].seq });
            }
        }
        for (i, message) in messages.iter().enumerate() {
            if i > 0 && message.seq != messages[i - 1].seq + 1 {
                return Err(MiddlewareError::SequenceGap { expected: messages[i - 1].seq + 1, got: message.seq });
            }
            match &message.payload {
                Payload::End => {
                    self.eos_seen = true;
                    // Whatever stable text is pending becomes a final
                    // (unterminated) sentence.
                    if let Some(s) = self.sentences.back_mut() {
                        if !s.complete && !s.source.is_empty() {
                            s.complete = true;
                        }
                    }
                    self.unstable.clear();
                    self.unstable_dirty = false;
                }
                Payload::Text(tokens) => {
                    let timed: Vec<TimedToken> = tokens
                        .iter()
                        .enumerate()
                        .map(|(j, token)| {
                            let (start_s, end_s) =
                                fractional_span(message.t_start, message.t_end, tokens.len(), j, j + 1);
                            TimedToken { token: token.clone(), start_s, end_s }
                        })
                        .collect();
                    if message.stable {
                        for t in timed {
                            let ends = self.ends_sentence(&t.token);
                            let sentence = self.open_sentence();
                            sentence.source.push(t);
                            if ends {
                                sentence.complete = true;
                            }
                        }
                        if !self.unstable.is_empty() {
                            self.unstable.clear();
                            self.unstable_dirty = true;
                        }
                    } else {
                        self.unstable = timed;
                        self.unstable_dirty = true;
                    }
                }
                Payload::Audio(_) => return Err(MiddlewareError::ExpectedText),
            }
            self.skipped_inputs += u64::from(i > 0);
            self.expected_seq = Some(message.seq + 1);
        }
        Ok(())
    }

    /// Next MT call this session needs, if any. Completed sentences flush in
    /// order before the growing one; at most one revision re-translation is
    /// produced per drain.
    pub fn next_plan(&mut self) -> Option<TranslatePlan> {
        while matches!(self.sentences.front(), Some(s) if s.done) {
            self.sentences.pop_front();
        }
        for sentence in &mut self.sentences {
            if sentence.done {
                continue;
            }
            if sentence.complete {
                if sentence.source.is_empty() {
                    sentence.done = true;
                    continue;
                }
                if sentence.prev_continuation.is_none() && sentence.committed_target.is_empty() {
                    // Never touched by agreement: translate once, stable.
                    return Some(TranslatePlan {
                        sentence: sentence.id,
                        purpose: TranslatePurpose::WholeSentence,
                        source: sentence.tokens(),
                        forced_prefix: Vec::new(),
                    });
                }
                return Some(TranslatePlan {
                    sentence: sentence.id,
                    purpose: TranslatePurpose::FinalizeSentence,
                    source: sentence.tokens(),
                    forced_prefix: sentence.committed_target.clone(),
                });
            }
            // The growing sentence.
            if self.cfg.mode == StabilityMode::Fixed {
                let new_words = sentence.source.len().saturating_sub(sentence.words_at_last_call);
                if !sentence.source.is_empty() && new_words >= self.cfg.trigger_words {
                    return Some(TranslatePlan {
                        sentence: sentence.id,
                        purpose: TranslatePurpose::AgreementStep,
                        source: sentence.tokens(),
                        forced_prefix: sentence.committed_target.clone(),
                    });
                }
            }
        }
        if self.cfg.mode == StabilityMode::Revision && self.unstable_dirty && !self.unstable.is_empty() {
            self.unstable_dirty = false;
            let mut source: Vec<Token> = self
                .sentences
                .back()
                .filter(|s| !s.complete)
                .map(|s| s.tokens())
                .unwrap_or_default();
            source.extend(self.unstable.iter().map(|t| t.token.clone()));
            return Some(TranslatePlan {
                sentence: u64::MAX,
                purpose: TranslatePurpose::Revision,
                source,
                forced_prefix: Vec::new(),
            });
        }
        None
    }

    /// Applies the translation produced for `plan`.
    pub fn apply_translation(
        &mut self,
        plan: &TranslatePlan,
        target: &[Token],
    ) -> Result<Vec<TextEmission>, MiddlewareError> {
        if target.len() < plan.forced_prefix.len() || target[..plan.forced_prefix.len()] != plan.forced_prefix[..] {
            return Err(MiddlewareError::Contract(format!(
                "backend did not reproduce the forced target prefix (got {target:?}, forced {:?})",
                plan.forced_prefix
            )));
        }
        if plan.purpose == TranslatePurpose::Revision {
            if target.is_empty() {
                return Ok(Vec::new());
            }
            let start = self
                .sentences
                .back()
                .filter(|s| !s.complete && !s.source.is_empty())
                .map(|s| s.start_s())
                .or_else(|| self.unstable.first().map(|t| t.start_s))
                .unwrap_or(0.0);
            let end = self.unstable.last().map(|t| t.end_s).unwrap_or(start);
            return Ok(vec![TextEmission {
                tokens: target.to_vec(),
                stable: false,
                t_start: start,
                t_end: end.max(start),
            }]);
        }

        let sentence = self
            .sentences
            .iter_mut()
            .find(|s| s.id == plan.sentence)
            .ok_or_else(|| MiddlewareError::Contract("translation for a dropped sentence".into()))?;
        let mut emissions = Vec::new();
        match plan.purpose {
            TranslatePurpose::WholeSentence => {
                if !target.is_empty() {
                    emissions.push(TextEmission {
                        tokens: target.to_vec(),
                        stable: true,
                        t_start: sentence.start_s(),
                        t_end: sentence.end_s(),
                    });
                }
                sentence.committed_target = target.to_vec();
                sentence.done = true;
            }
            TranslatePurpose::FinalizeSentence => {
                let already = sentence.committed_target.len();
                let remainder = &target[already..];
                if !remainder.is_empty() {
                    let t_start = sentence.emitted_until_s.unwrap_or_else(|| sentence.start_s());
                    emissions.push(TextEmission {
                        tokens: remainder.to_vec(),
                        stable: true,
                        t_start,
                        t_end: sentence.end_s(),
                    });
                }
                sentence.committed_target = target.to_vec();
                sentence.done = true;
            }
            TranslatePurpose::AgreementStep => {
                sentence.words_at_last_call = plan.source.len();
                let continuation = &target[plan.forced_prefix.len()..];
                match sentence.prev_continuation.take() {
                    None => {
                        sentence.prev_continuation = Some(continuation.to_vec());
                    }
                    Some(prev) => {
                        let agreed = common_token_prefix(&prev, continuation).len();
                        if agreed > 0 {
                            let before = sentence.committed_target.len();
                            sentence.committed_target.extend_from_slice(&continuation[..agreed]);
                            let (span_start, span_end) = fractional_span(
                                sentence.start_s(),
                                sentence.end_s(),
                                target.len(),
                                before,
                                before + agreed,
                            );
                            let t_start = sentence.emitted_until_s.unwrap_or(span_start).min(span_start);
                            emissions.push(TextEmission {
                                tokens: continuation[..agreed].to_vec(),
                                stable: true,
                                t_start,
                                t_end: span_end,
                            });
                            sentence.emitted_until_s = Some(span_end);
                        }
                        sentence.prev_continuation = Some(continuation[agreed..].to_vec());
                    }
                }
            }
            TranslatePurpose::Revision => unreachable!("handled above"),
        }
        Ok(emissions)
    }

    /// Synchronous convenience mirroring the speech side: drains every
    /// pending plan through `translate`.
    pub fn translate_step<F>(&mut self, translate: &mut F) -> Result<Vec<TextEmission>, MiddlewareError>
    where
        F: FnMut(&TranslatePlan) -> Result<Vec<Token>, MiddlewareError>,
    {
        let mut out = Vec::new();
        while let Some(plan) = self.next_plan() {
            let target = translate(&plan)?;
            out.extend(self.apply_translation(&plan, &target)?);
            if plan.purpose == TranslatePurpose::Revision {
                break;
            }
        }
        Ok(out)
    }

    /// True once end-of-stream arrived and nothing remains to translate.
    pub fn ready_to_forward_end(&mut self) -> bool {
        while matches!(self.sentences.front(), Some(s) if s.done) {
            self.sentences.pop_front();
        }
        self.eos_seen
            && !self.eos_forwarded
            && self.sentences.iter().all(|s| s.done || s.source.is_empty())
    }

    pub fn mark_end_forwarded(&mut self) {
        self.eos_forwarded = true;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock_mt_translate;
    use crate::types::SessionId;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    fn text_msg(seq: u64, stable: bool, span: (f64, f64), text: &str) -> Message {
        Message {
            session: SessionId(1),
            origin: "speech".into(),
            seq,
            stable,
            t_start: span.0,
            t_end: span.1,
            t_recv: span.1,
            payload: Payload::Text(toks(text)),
        }
    }

    fn mt() -> impl FnMut(&TranslatePlan) -> Result<Vec<Token>, MiddlewareError> {
        |plan: &TranslatePlan| {
            mock_mt_translate(&plan.source, &plan.forced_prefix)
                .map_err(|e| MiddlewareError::Contract(e.to_string()))
        }
    }

    #[test]
    fn splits_on_terminator_and_keeps_remainder() {
        let mut session = TextSession::new(TextConfig::default());
        session.ingest_pending(&[text_msg(0, true, (0.0, 2.5), "hello world . how are")]).unwrap();
        assert_eq!(session.sentences.len(), 2);
        assert!(session.sentences[0].complete);
        assert_eq!(session.sentences[0].tokens(), toks("hello world ."));
        assert!(!session.sentences[1].complete);
        assert_eq!(session.sentences[1].tokens(), toks("how are"));
        // Sentence span aggregates its tokens' interpolated spans.
        assert!((session.sentences[0].start_s() - 0.0).abs() < 1e-9);
        assert!((session.sentences[0].end_s() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn empty_input_is_a_no_op() {
        let mut session = TextSession::new(TextConfig::default());
        session.ingest_pending(&[]).unwrap();
        assert!(session.sentences.is_empty());
        assert!(session.next_plan().is_none());
    }

    #[test]
    fn unstable_region_is_replaced_not_appended() {
        let cfg = TextConfig { mode: StabilityMode::Revision, ..TextConfig::default() };
        let mut session = TextSession::new(cfg);
        session.ingest_pending(&[text_msg(0, false, (0.0, 1.0), "how are")]).unwrap();
        session.ingest_pending(&[text_msg(1, false, (0.0, 1.5), "how is it")]).unwrap();
        let region: Vec<Token> = session.unstable.iter().map(|t| t.token.clone()).collect();
        assert_eq!(region, toks("how is it"));
    }

    #[test]
    fn stable_complete_sentence_is_translated_once() {
        let mut session = TextSession::new(TextConfig::default());
        session.ingest_pending(&[text_msg(0, true, (0.0, 1.5), "a1 a2 .")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].stable);
        assert_eq!(out[0].tokens, toks("b2 b1 ."));
        assert!((out[0].t_start - 0.0).abs() < 1e-9);
        assert!((out[0].t_end - 1.5).abs() < 1e-9);
        // Idempotency: no second call for the same sentence.
        assert!(session.next_plan().is_none());
    }

    #[test]
    fn fixed_mode_agreement_commits_pair_aligned_prefixes() {
        let mut session = TextSession::new(TextConfig::default());
        // Stable source grows one word per drain.
        session.ingest_pending(&[text_msg(0, true, (0.0, 0.5), "a1")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert!(out.is_empty(), "first hypothesis commits nothing");
        session.ingest_pending(&[text_msg(1, true, (0.5, 1.0), "a2")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert!(out.is_empty(), "b2 b1 vs b1 share no prefix");
        session.ingest_pending(&[text_msg(2, true, (1.0, 1.5), "a3")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, toks("b2 b1"));
        assert!(out[0].stable);
        // Completion commits the rest.
        session.ingest_pending(&[text_msg(3, true, (1.5, 2.0), "a4 .")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, toks("b4 b3 ."));
        assert!(out[0].stable);
        assert!((out[0].t_end - 2.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_mode_without_new_words_makes_no_call() {
        let mut session = TextSession::new(TextConfig::default());
        session.ingest_pending(&[text_msg(0, true, (0.0, 0.5), "a1")]).unwrap();
        session.translate_step(&mut mt()).unwrap();
        // No new stable words: no plan.
        assert!(session.next_plan().is_none());
    }

    #[test]
    fn revision_mode_retranslates_the_unstable_region() {
        let cfg = TextConfig { mode: StabilityMode::Revision, ..TextConfig::default() };
        let mut session = TextSession::new(cfg);
        session.ingest_pending(&[text_msg(0, false, (0.0, 1.0), "a1 a2")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].stable);
        assert_eq!(out[0].tokens, toks("b2 b1"));
        // Upstream replacement produces a replacing emission downstream.
        session.ingest_pending(&[text_msg(1, false, (0.0, 1.5), "a1 a2 a3")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert_eq!(out[0].tokens, toks("b2 b1 b3"));
        // An empty unstable region emits nothing.
        session.ingest_pending(&[text_msg(2, false, (0.0, 0.0), "")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn revision_mode_translates_stable_sentences_once_and_stable() {
        let cfg = TextConfig { mode: StabilityMode::Revision, ..TextConfig::default() };
        let mut session = TextSession::new(cfg);
        session.ingest_pending(&[text_msg(0, false, (0.0, 1.0), "a1 a2*")]).unwrap();
        session.ingest_pending(&[text_msg(1, true, (0.0, 1.5), "a1 a2 a3 .")]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].stable);
        assert_eq!(out[0].tokens, toks("b2 b1 b3 ."));
    }

    #[test]
    fn eos_flushes_the_unterminated_tail_as_stable() {
        let mut session = TextSession::new(TextConfig::default());
        session.ingest_pending(&[text_msg(0, true, (0.0, 1.0), "a1 a2")]).unwrap();
        let end = Message {
            session: SessionId(1),
            origin: "speech".into(),
            seq: 1,
            stable: true,
            t_start: 1.0,
            t_end: 1.0,
            t_recv: 1.0,
            payload: Payload::End,
        };
        session.ingest_pending(&[end]).unwrap();
        let out = session.translate_step(&mut mt()).unwrap();
        let committed: Vec<Token> = out.iter().flat_map(|e| e.tokens.clone()).collect();
        assert_eq!(committed, toks("b2 b1"));
        assert!(out.iter().all(|e| e.stable));
        assert!(session.ready_to_forward_end());
    }

    #[test]
    fn consistent_backend_yields_offline_translation_per_sentence() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.gen_range(1..10);
            let source: Vec<Token> = (0..n).map(|i| format!("a{i}")).collect();
            let mut full = source.clone();
            full.push(".".into());

            let mut session = TextSession::new(TextConfig::default());
            let mut committed = Vec::new();
            // Feed one word at a time, in stable messages.
            for (i, tok) in full.iter().enumerate() {
                let t = i as f64 * 0.5;
                session.ingest_pending(&[text_msg(i as u64, true, (t, t + 0.5), tok)]).unwrap();
                committed.extend(
                    session.translate_step(&mut mt()).unwrap().into_iter().flat_map(|e| e.tokens),
                );
            }
            let offline = mock_mt_translate(&full, &[]).unwrap();
            assert_eq!(committed, offline);
        }
    }
}
