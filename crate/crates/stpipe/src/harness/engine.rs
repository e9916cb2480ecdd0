//! Deterministic discrete-event simulation of the whole pipeline.
//!
//! Audio is paced at real time on the virtual clock (one 30 ms frame per
//! 30 ms of virtual time). Middleware workers are single-threaded: a worker
//! drains everything pending on its partitions, updates per-session state,
//! and blocks on one backend call at a time, which is how input combining
//! and load shedding arise under load. The shared backend batches requests
//! that are waiting at the same instant (up to `max_batch`, one batch per
//! free replica) and charges the cost model's delay to the clock.

use crate::backend::{Backend, BackendError, BackendRequest, BackendResponse, RequestInput};
use crate::broker::{Broker, BrokerError};
use crate::gateway::Gateway;
use crate::harness::clock::VirtualClock;
use crate::harness::config::ExperimentConfig;
use crate::harness::corpus::{Corpus, SessionScript};
use crate::mediator::{input_topic, Mediator, MediatorError, RouteTarget};
use crate::speech::{MiddlewareError, SpeechSession, SessionPlan};
use crate::text::{TextSession, TranslatePlan};
use crate::types::{
    BackendKind, Message, NodeKind, Payload, SessionId, FRAME_SECONDS,
};
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("mediator: {0}")]
    Mediator(#[from] MediatorError),
    #[error("middleware ({session}): {source}")]
    Middleware { session: SessionId, source: MiddlewareError },
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("gateway: {0}")]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error("simulation did not quiesce within {0} events")]
    EventBudget(u64),
    #[error("session {0} never closed")]
    SessionStuck(SessionId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Comp {
    Speech,
    Text,
}

#[derive(Clone, Debug)]
enum Event {
    Frame { session_index: usize },
    Eos { session_index: usize },
    Wake { comp: Comp, worker: usize },
    Collect,
    Done { replica: usize },
}

enum WorkPlan {
    Speech(SessionPlan),
    Text(TranslatePlan),
}

struct PendingEntry {
    comp: Comp,
    worker: usize,
    session: SessionId,
    plan: WorkPlan,
    request: BackendRequest,
}

struct InFlightBatch {
    entries: Vec<PendingEntry>,
    responses: Vec<BackendResponse>,
}

struct SpeechWorkerSession {
    state: SpeechSession,
    node: String,
    kind: BackendKind,
    out_seq: u64,
}

struct TextWorkerSession {
    state: TextSession,
    node: String,
    out_seq: u64,
}

struct Worker<S> {
    busy: bool,
    wake_scheduled: bool,
    queue: VecDeque<SessionId>,
    sessions: BTreeMap<SessionId, S>,
}

impl<S> Default for Worker<S> {
    fn default() -> Self {
        Worker { busy: false, wake_scheduled: false, queue: VecDeque::new(), sessions: BTreeMap::new() }
    }
}

/// Counters accumulated over one run.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunCounters {
    /// Intermediate processing steps skipped by input combining.
    pub skipped_inputs: u64,
    pub backend_requests: u64,
    pub batches: u64,
    pub truncation_warnings: u64,
    /// Deepest any component-topic partition ever got.
    pub queue_high_watermark: usize,
}

/// Everything one simulated run produced: per-session output streams by
/// producing node, plus counters.
pub struct RunOutcome {
    pub sessions: Vec<(SessionId, BTreeMap<String, Vec<Message>>)>,
    pub counters: RunCounters,
    pub finished_at: f64,
}

pub struct Engine {
    cfg: ExperimentConfig,
    clock: VirtualClock<Event>,
    broker: Arc<Broker>,
    mediator: Arc<Mediator>,
    gateway: Gateway,
    backend: Backend,
    speech_workers: Vec<Worker<SpeechWorkerSession>>,
    text_workers: Vec<Worker<TextWorkerSession>>,
    pending: VecDeque<PendingEntry>,
    in_flight: Vec<Option<InFlightBatch>>,
    collect_scheduled: bool,
    scripts: Vec<SessionScript>,
    session_ids: Vec<SessionId>,
    frame_cursor: Vec<usize>,
    counters: RunCounters,
}

impl Engine {
    pub fn new(cfg: ExperimentConfig, corpus: &Corpus) -> Result<Self, EngineError> {
        let broker = Arc::new(Broker::new());
        let mut component_workers = BTreeMap::new();
        for node in &cfg.graph().nodes {
            if matches!(node.kind, NodeKind::Speech { .. } | NodeKind::Text { .. }) {
                component_workers.insert(node.name.clone(), cfg.workers);
            }
        }
        let mediator = Arc::new(Mediator::new(Arc::clone(&broker), component_workers));
        let gateway = Gateway::new(Arc::clone(&mediator));
        let backend = cfg.backend_instance();
        let replicas = backend.replicas;

        let mut engine = Engine {
            clock: VirtualClock::new(),
            broker,
            mediator,
            gateway,
            backend,
            speech_workers: (0..cfg.workers).map(|_| Worker::default()).collect(),
            text_workers: (0..cfg.workers).map(|_| Worker::default()).collect(),
            pending: VecDeque::new(),
            in_flight: (0..replicas).map(|_| None).collect(),
            collect_scheduled: false,
            scripts: corpus.sessions.iter().take(cfg.parallel_sessions).cloned().collect(),
            session_ids: Vec::new(),
            frame_cursor: Vec::new(),
            counters: RunCounters::default(),
            cfg,
        };

        for index in 0..engine.scripts.len() {
            let id = engine.gateway.create(engine.cfg.graph(), 0.0)?;
            engine.session_ids.push(id);
            engine.frame_cursor.push(0);
            engine.clock.schedule(0.0, Event::Frame { session_index: index });
        }
        Ok(engine)
    }

    /// Runs to quiescence and collects the output logs.
    pub fn run(mut self) -> Result<RunOutcome, EngineError> {
        let budget = 50_000_000u64;
        let mut spent = 0u64;
        while let Some((_, event)) = self.clock.pop() {
            spent += 1;
            if spent > budget {
                return Err(EngineError::EventBudget(budget));
            }
            self.handle(event)?;
        }
        for &id in &self.session_ids {
            if !self.mediator.is_closed(id) {
                return Err(EngineError::SessionStuck(id));
            }
        }
        for worker in &self.speech_workers {
            for s in worker.sessions.values() {
                self.counters.skipped_inputs += s.state.skipped_inputs();
                self.counters.truncation_warnings += s.state.truncation_warnings();
            }
        }
        for worker in &self.text_workers {
            for s in worker.sessions.values() {
                self.counters.skipped_inputs += s.state.skipped_inputs();
            }
        }
        for topic in ["speech-in", "text-in"] {
            if let Ok(depth) = self.broker.high_watermark(topic) {
                self.counters.queue_high_watermark = self.counters.queue_high_watermark.max(depth);
            }
        }
        let sessions = self
            .session_ids
            .iter()
            .map(|&id| (id, self.gateway.take_outputs(id)))
            .collect();
        Ok(RunOutcome { sessions, counters: self.counters, finished_at: self.clock.now() })
    }

    fn handle(&mut self, event: Event) -> Result<(), EngineError> {
        match event {
            Event::Frame { session_index } => self.on_frame(session_index),
            Event::Eos { session_index } => self.on_eos(session_index),
            Event::Wake { comp, worker } => {
                match comp {
                    Comp::Speech => self.speech_workers[worker].wake_scheduled = false,
                    Comp::Text => self.text_workers[worker].wake_scheduled = false,
                }
                let busy = match comp {
                    Comp::Speech => self.speech_workers[worker].busy,
                    Comp::Text => self.text_workers[worker].busy,
                };
                if !busy {
                    self.advance(comp, worker)?;
                }
                Ok(())
            }
            Event::Collect => self.on_collect(),
            Event::Done { replica } => self.on_done(replica),
        }
    }

    fn on_frame(&mut self, session_index: usize) -> Result<(), EngineError> {
        let cursor = self.frame_cursor[session_index];
        let frame = self.scripts[session_index].frames[cursor].clone();
        let session = self.session_ids[session_index];
        let now = self.clock.now();
        let deliveries = self.gateway.audio(session, vec![frame], now)?;
        self.dispatch(deliveries)?;
        self.frame_cursor[session_index] = cursor + 1;
        let next = cursor + 1;
        if next < self.scripts[session_index].frames.len() {
            self.clock.schedule(next as f64 * FRAME_SECONDS, Event::Frame { session_index });
        } else {
            self.clock.schedule(next as f64 * FRAME_SECONDS, Event::Eos { session_index });
        }
        Ok(())
    }

    fn on_eos(&mut self, session_index: usize) -> Result<(), EngineError> {
        let session = self.session_ids[session_index];
        let deliveries = self.gateway.end_of_stream(session, self.clock.now())?;
        self.dispatch(deliveries)
    }

    /// Routes mediator deliveries onward: client messages to the gateway,
    /// topic publishes wake the owning worker when it is idle.
    fn dispatch(&mut self, deliveries: Vec<(RouteTarget, Message)>) -> Result<(), EngineError> {
        let now = self.clock.now();
        for (target, message) in deliveries {
            match target {
                RouteTarget::Client => self.gateway.deliver(message, now),
                RouteTarget::Topic(topic) => {
                    let worker = self.broker.worker_for(&topic, message.session)?;
                    let comp = if topic == input_topic("text") { Comp::Text } else { Comp::Speech };
                    let (busy, scheduled) = match comp {
                        Comp::Speech => {
                            let w = &mut self.speech_workers[worker];
                            let state = (w.busy, w.wake_scheduled);
                            if !w.busy && !w.wake_scheduled {
                                w.wake_scheduled = true;
                            }
                            state
                        }
                        Comp::Text => {
                            let w = &mut self.text_workers[worker];
                            let state = (w.busy, w.wake_scheduled);
                            if !w.busy && !w.wake_scheduled {
                                w.wake_scheduled = true;
                            }
                            state
                        }
                    };
                    if !busy && !scheduled {
                        self.clock.schedule(now, Event::Wake { comp, worker });
                    }
                }
            }
        }
        Ok(())
    }

    /// Core worker loop: plan work for queued sessions, forward end-of-stream
    /// markers, re-drain the topic, or go idle.
    fn advance(&mut self, comp: Comp, worker: usize) -> Result<(), EngineError> {
        loop {
            let session = match comp {
                Comp::Speech => self.speech_workers[worker].queue.front().copied(),
                Comp::Text => self.text_workers[worker].queue.front().copied(),
            };
            if let Some(session) = session {
                if let Some(entry) = self.plan_for(comp, worker, session)? {
                    self.submit(entry);
                    match comp {
                        Comp::Speech => self.speech_workers[worker].busy = true,
                        Comp::Text => self.text_workers[worker].busy = true,
                    }
                    return Ok(());
                }
                self.maybe_forward_end(comp, worker, session)?;
                match comp {
                    Comp::Speech => self.speech_workers[worker].queue.pop_front(),
                    Comp::Text => self.text_workers[worker].queue.pop_front(),
                };
                continue;
            }
            // Queue empty: drain the topic once more.
            let topic = match comp {
                Comp::Speech => input_topic("speech"),
                Comp::Text => input_topic("text"),
            };
            let drained = self.broker.poll_pending(&topic, worker)?;
            if drained.is_empty() {
                match comp {
                    Comp::Speech => self.speech_workers[worker].busy = false,
                    Comp::Text => self.text_workers[worker].busy = false,
                }
                return Ok(());
            }
            self.ingest_drained(comp, worker, drained)?;
        }
    }

    fn ingest_drained(&mut self, comp: Comp, worker: usize, drained: Vec<Message>) -> Result<(), EngineError> {
        // Group by session, preserving first-appearance order.
        let mut order: Vec<SessionId> = Vec::new();
        let mut groups: BTreeMap<SessionId, Vec<Message>> = BTreeMap::new();
        for message in drained {
            if !groups.contains_key(&message.session) {
                order.push(message.session);
            }
            groups.entry(message.session).or_default().push(message);
        }
        for session in order {
            let group = groups.remove(&session).unwrap();
            match comp {
                Comp::Speech => {
                    let w = &mut self.speech_workers[worker];
                    if !w.sessions.contains_key(&session) {
                        let (node, mode, kind) = self
                            .mediator
                            .speech_descriptor(session)
                            .expect("speech messages imply a speech node");
                        let mut cfg = self.cfg.speech_config();
                        cfg.la2.mode = mode;
                        w.sessions.insert(
                            session,
                            SpeechWorkerSession { state: SpeechSession::new(cfg), node, kind, out_seq: 0 },
                        );
                    }
                    let entry = w.sessions.get_mut(&session).unwrap();
                    entry
                        .state
                        .ingest_pending(&group)
                        .map_err(|source| EngineError::Middleware { session, source })?;
                    if !w.queue.contains(&session) {
                        w.queue.push_back(session);
                    }
                }
                Comp::Text => {
                    let w = &mut self.text_workers[worker];
                    if !w.sessions.contains_key(&session) {
                        let (node, mode) = self
                            .mediator
                            .text_descriptor(session)
                            .expect("text messages imply a text node");
                        let mut cfg = self.cfg.text_config();
                        cfg.mode = mode;
                        w.sessions.insert(
                            session,
                            TextWorkerSession { state: TextSession::new(cfg), node, out_seq: 0 },
                        );
                    }
                    let entry = w.sessions.get_mut(&session).unwrap();
                    entry
                        .state
                        .ingest_pending(&group)
                        .map_err(|source| EngineError::Middleware { session, source })?;
                    if !w.queue.contains(&session) {
                        w.queue.push_back(session);
                    }
                }
            }
        }
        Ok(())
    }

    fn plan_for(&mut self, comp: Comp, worker: usize, session: SessionId) -> Result<Option<PendingEntry>, EngineError> {
        match comp {
            Comp::Speech => {
                let entry = self.speech_workers[worker].sessions.get_mut(&session).unwrap();
                Ok(entry.state.next_plan().map(|plan| PendingEntry {
                    comp,
                    worker,
                    session,
                    request: BackendRequest {
                        kind: entry.kind,
                        input: RequestInput::Audio {
                            frames: plan.plan.frames.clone(),
                            segment_ended: plan.plan.segment_ended,
                        },
                        forced_prefix: plan.plan.forced_prefix.clone(),
                        session,
                    },
                    plan: WorkPlan::Speech(plan),
                }))
            }
            Comp::Text => {
                let entry = self.text_workers[worker].sessions.get_mut(&session).unwrap();
                Ok(entry.state.next_plan().map(|plan| PendingEntry {
                    comp,
                    worker,
                    session,
                    request: BackendRequest {
                        kind: BackendKind::Mt,
                        input: RequestInput::Text { tokens: plan.source.clone() },
                        forced_prefix: plan.forced_prefix.clone(),
                        session,
                    },
                    plan: WorkPlan::Text(plan),
                }))
            }
        }
    }

    fn maybe_forward_end(&mut self, comp: Comp, worker: usize, session: SessionId) -> Result<(), EngineError> {
        let now = self.clock.now();
        let end_message = match comp {
            Comp::Speech => {
                let entry = self.speech_workers[worker].sessions.get_mut(&session).unwrap();
                if entry.state.ready_to_forward_end() {
                    entry.state.mark_end_forwarded();
                    let seq = entry.out_seq;
                    entry.out_seq += 1;
                    Some((entry.node.clone(), seq))
                } else {
                    None
                }
            }
            Comp::Text => {
                let entry = self.text_workers[worker].sessions.get_mut(&session).unwrap();
                if entry.state.ready_to_forward_end() {
                    entry.state.mark_end_forwarded();
                    let seq = entry.out_seq;
                    entry.out_seq += 1;
                    Some((entry.node.clone(), seq))
                } else {
                    None
                }
            }
        };
        if let Some((node, seq)) = end_message {
            let message = Message {
                session,
                origin: node.clone(),
                seq,
                stable: true,
                t_start: now,
                t_end: now,
                t_recv: now,
                payload: Payload::End,
            };
            let deliveries = self.mediator.route(&node, message)?;
            self.dispatch(deliveries)?;
        }
        Ok(())
    }

    fn submit(&mut self, entry: PendingEntry) {
        self.counters.backend_requests += 1;
        self.pending.push_back(entry);
        if self.in_flight.iter().any(Option::is_none) && !self.collect_scheduled {
            self.collect_scheduled = true;
            self.clock.schedule(self.clock.now(), Event::Collect);
        }
    }

    fn on_collect(&mut self) -> Result<(), EngineError> {
        self.collect_scheduled = false;
        while !self.pending.is_empty() {
            let Some(replica) = self.in_flight.iter().position(Option::is_none) else {
                return Ok(());
            };
            // Homogeneous batch: take requests matching the oldest pending
            // kind, preserving order, up to max_batch.
            let kind = self.pending.front().unwrap().request.kind;
            let mut entries = Vec::new();
            let mut rest = VecDeque::new();
            while let Some(entry) = self.pending.pop_front() {
                if entry.request.kind == kind && entries.len() < self.backend.max_batch {
                    entries.push(entry);
                } else {
                    rest.push_back(entry);
                }
            }
            self.pending = rest;
            let requests: Vec<BackendRequest> = entries.iter().map(|e| e.request.clone()).collect();
            let (responses, delay) = self.backend.process_batch(&requests)?;
            self.counters.batches += 1;
            self.in_flight[replica] = Some(InFlightBatch { entries, responses });
            self.clock.schedule_in(delay, Event::Done { replica });
        }
        Ok(())
    }

    fn on_done(&mut self, replica: usize) -> Result<(), EngineError> {
        let batch = self.in_flight[replica].take().expect("done for an idle replica");
        let now = self.clock.now();
        let mut resume: Vec<(Comp, usize)> = Vec::new();
        for (entry, response) in batch.entries.into_iter().zip(batch.responses) {
            let emissions: Vec<(Vec<crate::types::Token>, bool, f64, f64)> = match (&entry.plan, &response) {
                (WorkPlan::Speech(plan), BackendResponse::Timed(hypothesis)) => {
                    let w = &mut self.speech_workers[entry.worker];
                    let s = w.sessions.get_mut(&entry.session).unwrap();
                    s.state
                        .apply_decode(plan, hypothesis)
                        .map_err(|source| EngineError::Middleware { session: entry.session, source })?
                        .into_iter()
                        .map(|e| (e.tokens, e.stable, e.t_start, e.t_end))
                        .collect()
                }
                (WorkPlan::Text(plan), BackendResponse::Plain(tokens)) => {
                    let w = &mut self.text_workers[entry.worker];
                    let s = w.sessions.get_mut(&entry.session).unwrap();
                    s.state
                        .apply_translation(plan, tokens)
                        .map_err(|source| EngineError::Middleware { session: entry.session, source })?
                        .into_iter()
                        .map(|e| (e.tokens, e.stable, e.t_start, e.t_end))
                        .collect()
                }
                _ => {
                    return Err(EngineError::Middleware {
                        session: entry.session,
                        source: MiddlewareError::Contract("response payload kind mismatch".into()),
                    })
                }
            };
            let node = match entry.comp {
                Comp::Speech => self.speech_workers[entry.worker].sessions[&entry.session].node.clone(),
                Comp::Text => self.text_workers[entry.worker].sessions[&entry.session].node.clone(),
            };
            for (tokens, stable, t_start, t_end) in emissions {
                let seq = match entry.comp {
                    Comp::Speech => {
                        let s = self.speech_workers[entry.worker].sessions.get_mut(&entry.session).unwrap();
                        let seq = s.out_seq;
                        s.out_seq += 1;
                        seq
                    }
                    Comp::Text => {
                        let s = self.text_workers[entry.worker].sessions.get_mut(&entry.session).unwrap();
                        let seq = s.out_seq;
                        s.out_seq += 1;
                        seq
                    }
                };
                let message = Message {
                    session: entry.session,
                    origin: node.clone(),
                    seq,
                    stable,
                    t_start,
                    t_end,
                    t_recv: now,
                    payload: Payload::Text(tokens),
                };
                let deliveries = self.mediator.route(&node, message)?;
                self.dispatch(deliveries)?;
            }
            match entry.comp {
                Comp::Speech => self.speech_workers[entry.worker].busy = false,
                Comp::Text => self.text_workers[entry.worker].busy = false,
            }
            if !resume.contains(&(entry.comp, entry.worker)) {
                resume.push((entry.comp, entry.worker));
            }
        }
        for (comp, worker) in resume {
            let busy = match comp {
                Comp::Speech => self.speech_workers[worker].busy,
                Comp::Text => self.text_workers[worker].busy,
            };
            if !busy {
                self.advance(comp, worker)?;
            }
        }
        if !self.pending.is_empty() && self.in_flight.iter().any(Option::is_none) && !self.collect_scheduled {
            self.collect_scheduled = true;
            self.clock.schedule(now, Event::Collect);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::corpus::{generate_corpus, CorpusParams};
    use crate::harness::config::PipelinePath;
    use crate::types::StabilityMode;

    fn small_corpus(seed: u64, sessions: usize) -> Corpus {
        let params = CorpusParams {
            utterances: 2,
            tokens_per_sentence: 5,
            token_seconds: 0.45,
            token_jitter_s: 0.05,
            gap_frames: 25,
            lead_in_frames: 10,
        };
        generate_corpus(seed, sessions, &params)
    }

    fn run(cfg: ExperimentConfig, corpus: &Corpus) -> RunOutcome {
        Engine::new(cfg, corpus).unwrap().run().unwrap()
    }

    #[test]
    fn end_to_end_session_drains_and_closes() {
        let cfg = ExperimentConfig {
            path: PipelinePath::E2e,
            mode: StabilityMode::Fixed,
            ..ExperimentConfig::default()
        };
        let corpus = small_corpus(5, 1);
        let outcome = run(cfg, &corpus);
        assert_eq!(outcome.sessions.len(), 1);
        let (_, streams) = &outcome.sessions[0];
        let speech_out = &streams["speech"];
        assert!(!speech_out.is_empty());
        // Fixed mode: stable only, t_start <= t_end <= t_recv.
        for m in speech_out {
            assert!(m.stable);
            assert!(m.t_start <= m.t_end + 1e-9);
            assert!(m.t_end <= m.t_recv + 1e-9);
        }
        // The run outlives the audio itself.
        assert!(outcome.finished_at >= corpus.sessions[0].duration_s());
    }

    #[test]
    fn cascaded_noise_free_run_reproduces_references_exactly() {
        let mut cfg = ExperimentConfig {
            path: PipelinePath::Cascaded,
            mode: StabilityMode::Fixed,
            ..ExperimentConfig::default()
        };
        cfg.noise.horizon_s = 0.0;
        cfg.noise.perturb_period = 1;
        let corpus = small_corpus(6, 1);
        let outcome = run(cfg, &corpus);
        let (_, streams) = &outcome.sessions[0];

        let transcript: Vec<String> = streams["speech"]
            .iter()
            .filter(|m| m.stable)
            .flat_map(|m| m.text_tokens().unwrap().to_vec())
            .collect();
        let want_transcript: Vec<String> =
            corpus.sessions[0].transcript.iter().flatten().cloned().collect();
        assert_eq!(transcript, want_transcript);

        let translation: Vec<String> = streams["text"]
            .iter()
            .filter(|m| m.stable)
            .flat_map(|m| m.text_tokens().unwrap().to_vec())
            .collect();
        let want_translation: Vec<String> =
            corpus.sessions[0].translation.iter().flatten().cloned().collect();
        assert_eq!(translation, want_translation);
    }

    #[test]
    fn revision_mode_emits_unstable_and_fixed_does_not() {
        let corpus = small_corpus(7, 1);
        let fixed = run(
            ExperimentConfig { path: PipelinePath::E2e, mode: StabilityMode::Fixed, ..ExperimentConfig::default() },
            &corpus,
        );
        let revision = run(
            ExperimentConfig { path: PipelinePath::E2e, mode: StabilityMode::Revision, ..ExperimentConfig::default() },
            &corpus,
        );
        let unstable = |o: &RunOutcome| {
            o.sessions[0].1["speech"].iter().filter(|m| !m.stable).count()
        };
        assert_eq!(unstable(&fixed), 0);
        assert!(unstable(&revision) > 0);
    }

    #[test]
    fn identical_configs_give_identical_outcomes() {
        let corpus = small_corpus(8, 2);
        let cfg = ExperimentConfig {
            path: PipelinePath::Cascaded,
            mode: StabilityMode::Revision,
            parallel_sessions: 2,
            ..ExperimentConfig::default()
        };
        let a = run(cfg.clone(), &corpus);
        let b = run(cfg, &corpus);
        assert_eq!(a.counters, b.counters);
        for ((_, sa), (_, sb)) in a.sessions.iter().zip(&b.sessions) {
            assert_eq!(sa, sb);
        }
    }

    #[test]
    fn per_session_per_origin_seq_is_strictly_increasing() {
        let corpus = small_corpus(9, 3);
        let cfg = ExperimentConfig {
            path: PipelinePath::Cascaded,
            mode: StabilityMode::Revision,
            parallel_sessions: 3,
            workers: 2,
            ..ExperimentConfig::default()
        };
        let outcome = run(cfg, &corpus);
        for (_, streams) in &outcome.sessions {
            for messages in streams.values() {
                let seqs: Vec<u64> = messages.iter().map(|m| m.seq).collect();
                assert!(seqs.windows(2).all(|w| w[0] < w[1]), "{seqs:?}");
            }
        }
    }
}
