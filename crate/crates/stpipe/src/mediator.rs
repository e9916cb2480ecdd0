//! Central coordinator: registers sessions with their routing graphs,
//! provisions component input topics, and forwards every message along the
//! graph edges. Session teardown routes an explicit end-of-stream marker
//! through the graph so middleware can flush deterministically; the session
//! closes once every path has delivered the marker to the gateway-out.

use crate::broker::Broker;
use crate::types::{
    GraphViolation, Message, NodeKind, Payload, PayloadKind, SessionGraph, SessionId,
    StabilityMode,
};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MediatorError {
    #[error("invalid session graph: {0}")]
    InvalidGraph(#[from] GraphViolation),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} is closed")]
    SessionClosed(SessionId),
    #[error("session {0} is already closing")]
    AlreadyClosing(SessionId),
    #[error("unknown node `{node}` in session {session}")]
    UnknownNode { session: SessionId, node: String },
    #[error("message kind {kind:?} incompatible with edge {from}->{to}")]
    EdgeKindMismatch { from: String, to: String, kind: Option<PayloadKind> },
}

/// Where a routed message goes: a component's input topic, or straight to the
/// session's client output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RouteTarget {
    Topic(String),
    Client,
}

/// Input topic of a middleware node.
pub fn input_topic(node_name: &str) -> String {
    format!("{node_name}-in")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SessionState {
    Open,
    /// Closing, with this many end-of-stream deliveries to the client still
    /// outstanding (one per gateway-out in-edge).
    Closing(usize),
    Closed,
}

struct SessionEntry {
    graph: SessionGraph,
    created_at: f64,
    state: SessionState,
}

/// Session registry plus routing. Concurrent create/route/close is safe;
/// per-session routing is serialized by the registry lock.
pub struct Mediator {
    broker: Arc<Broker>,
    sessions: RwLock<BTreeMap<SessionId, SessionEntry>>,
    next_id: AtomicU64,
    /// Worker counts per component node name; doubles as the partition count
    /// of the component's input topic.
    component_workers: BTreeMap<String, usize>,
}

impl Mediator {
    pub fn new(broker: Arc<Broker>, component_workers: BTreeMap<String, usize>) -> Self {
        Mediator { broker, sessions: RwLock::new(BTreeMap::new()), next_id: AtomicU64::new(1), component_workers }
    }

    pub fn with_defaults(broker: Arc<Broker>) -> Self {
        Mediator::new(broker, BTreeMap::new())
    }

    fn workers_for(&self, node_name: &str) -> usize {
        self.component_workers.get(node_name).copied().unwrap_or(1)
    }

    /// Validates the graph, registers a fresh open session and provisions
    /// one input topic per middleware node.
    pub fn create_session(&self, graph: SessionGraph, now: f64) -> Result<SessionId, MediatorError> {
        graph.validate()?;
        for node in &graph.nodes {
            if matches!(node.kind, NodeKind::Speech { .. } | NodeKind::Text { .. }) {
                let workers = self.workers_for(&node.name);
                self.broker.ensure_topic(&input_topic(&node.name), workers, workers);
            }
        }
        let id = SessionId(self.next_id.fetch_add(1, Ordering::Relaxed));
        self.sessions.write().unwrap().insert(
            id,
            SessionEntry { graph, created_at: now, state: SessionState::Open },
        );
        Ok(id)
    }

    pub fn is_open(&self, id: SessionId) -> bool {
        matches!(
            self.sessions.read().unwrap().get(&id).map(|e| e.state),
            Some(SessionState::Open)
        )
    }

    pub fn is_closed(&self, id: SessionId) -> bool {
        matches!(
            self.sessions.read().unwrap().get(&id).map(|e| e.state),
            Some(SessionState::Closed)
        )
    }

    pub fn created_at(&self, id: SessionId) -> Option<f64> {
        self.sessions.read().unwrap().get(&id).map(|e| e.created_at)
    }

    pub fn graph(&self, id: SessionId) -> Option<SessionGraph> {
        self.sessions.read().unwrap().get(&id).map(|e| e.graph.clone())
    }

    /// Speech-node descriptor of a session, when its graph has one.
    pub fn speech_descriptor(&self, id: SessionId) -> Option<(String, StabilityMode, crate::types::BackendKind)> {
        let sessions = self.sessions.read().unwrap();
        let graph = &sessions.get(&id)?.graph;
        graph.nodes.iter().find_map(|n| match n.kind {
            NodeKind::Speech { mode, backend } => Some((n.name.clone(), mode, backend)),
            _ => None,
        })
    }

    /// Text-node descriptor of a session, when its graph has one.
    pub fn text_descriptor(&self, id: SessionId) -> Option<(String, StabilityMode)> {
        let sessions = self.sessions.read().unwrap();
        let graph = &sessions.get(&id)?.graph;
        graph.nodes.iter().find_map(|n| match n.kind {
            NodeKind::Text { mode } => Some((n.name.clone(), mode)),
            _ => None,
        })
    }

    /// Forwards `message`, produced by node `from`, along every outgoing
    /// edge. The payload is duplicated per edge; fan-out is expected (e.g. a
    /// transcript goes to the user and to the text component). Returns the
    /// deliveries; topic targets are already published to the broker.
    pub fn route(&self, from: &str, message: Message) -> Result<Vec<(RouteTarget, Message)>, MediatorError> {
        let mut sessions = self.sessions.write().unwrap();
        let entry = sessions.get_mut(&message.session).ok_or(MediatorError::UnknownSession(message.session))?;
        let is_end = message.payload == Payload::End;
        let from_index = entry
            .graph
            .node_index(from)
            .ok_or_else(|| MediatorError::UnknownNode { session: message.session, node: from.to_string() })?;
        let from_gateway = matches!(entry.graph.nodes[from_index].kind, NodeKind::GatewayIn);
        match entry.state {
            SessionState::Open => {}
            // While closing, middleware keeps flushing; only fresh input from
            // the gateway (besides the marker itself) is refused.
            SessionState::Closing(_) if !from_gateway || is_end => {}
            SessionState::Closing(_) | SessionState::Closed => {
                return Err(MediatorError::SessionClosed(message.session));
            }
        }

        let mut deliveries = Vec::new();
        for to in entry.graph.outgoing(from_index).collect::<Vec<_>>() {
            let to_node = &entry.graph.nodes[to];
            if !is_end {
                // End-of-stream markers pass any port; everything else must
                // match the edge's input kind.
                let kind = message.payload.kind();
                if kind != to_node.kind.input_kind() {
                    return Err(MediatorError::EdgeKindMismatch {
                        from: from.to_string(),
                        to: to_node.name.clone(),
                        kind,
                    });
                }
            }
            let target = match to_node.kind {
                NodeKind::GatewayOut => RouteTarget::Client,
                _ => RouteTarget::Topic(input_topic(&to_node.name)),
            };
            if is_end && target == RouteTarget::Client {
                if let SessionState::Closing(ref mut pending) = entry.state {
                    *pending -= 1;
                    if *pending == 0 {
                        entry.state = SessionState::Closed;
                    }
                }
            }
            deliveries.push((target, message.clone()));
        }
        // Publish after the bookkeeping so a broker error cannot leave the
        // counter behind.
        for (target, msg) in &deliveries {
            if let RouteTarget::Topic(topic) = target {
                self.broker
                    .publish(topic, msg.clone())
                    .expect("component topics are provisioned at session creation");
            }
        }
        Ok(deliveries)
    }

    /// Starts teardown: marks the session closing and routes an end-of-stream
    /// marker from the gateway-in so middleware finalizes open segments. The
    /// session is closed once all markers reach the client.
    pub fn close_session(&self, id: SessionId, seq: u64, now: f64) -> Result<Vec<(RouteTarget, Message)>, MediatorError> {
        let (source_name, expected_ends) = {
            let mut sessions = self.sessions.write().unwrap();
            let entry = sessions.get_mut(&id).ok_or(MediatorError::UnknownSession(id))?;
            match entry.state {
                SessionState::Open => {}
                SessionState::Closing(_) => return Err(MediatorError::AlreadyClosing(id)),
                SessionState::Closed => return Err(MediatorError::SessionClosed(id)),
            }
            let out_indices: Vec<usize> = entry
                .graph
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n.kind, NodeKind::GatewayOut))
                .map(|(i, _)| i)
                .collect();
            let expected: usize =
                entry.graph.edges.iter().filter(|(_, to)| out_indices.contains(to)).count();
            let source = entry
                .graph
                .nodes
                .iter()
                .find(|n| matches!(n.kind, NodeKind::GatewayIn))
                .map(|n| n.name.clone())
                .expect("validated graph has a gateway-in");
            entry.state = SessionState::Closing(expected);
            (source, expected)
        };
        let marker = Message {
            session: id,
            origin: source_name.clone(),
            seq,
            stable: true,
            t_start: now,
            t_end: now,
            t_recv: now,
            payload: Payload::End,
        };
        let _ = expected_ends;
        self.route(&source_name, marker)
    }
}
