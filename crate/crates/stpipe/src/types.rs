//! Shared domain types: sessions, audio frames, pipeline messages and the
//! per-session routing graph.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Whitespace-delimited text token. Comparison is exact and case-sensitive
/// everywhere in the pipeline, including the evaluation metrics.
pub type Token = String;

/// Duration of one audio frame in seconds.
pub const FRAME_SECONDS: f64 = 0.030;
/// Sample rate of the PCM payload carried over the gateway protocol.
pub const SAMPLE_RATE_HZ: u32 = 16_000;
/// Samples per 30 ms frame at 16 kHz.
pub const SAMPLES_PER_FRAME: usize = 480;

/// Duration in seconds of `n` frames.
pub fn frames_duration_s(n: usize) -> f64 {
    n as f64 * FRAME_SECONDS
}

/// Opaque per-session identifier, unique for the lifetime of the process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u64);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One 30 ms audio frame.
///
/// `samples` may be empty for in-process synthetic corpora; the gateway wire
/// layer always carries concrete PCM. `is_speech` is the per-frame
/// speech/non-speech classification consumed by the VAD (provided by the
/// corpus or the client, there is no acoustic model in this crate). `label`
/// is the synthetic-corpus channel: the token this frame belongs to, absent
/// for silence or unlabeled real audio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioFrame {
    pub samples: Vec<i16>,
    pub is_speech: bool,
    pub label: Option<Token>,
}

impl AudioFrame {
    pub fn silence() -> Self {
        AudioFrame { samples: Vec::new(), is_speech: false, label: None }
    }

    pub fn speech(label: impl Into<Token>) -> Self {
        AudioFrame { samples: Vec::new(), is_speech: true, label: Some(label.into()) }
    }

    /// Frames have a fixed duration by construction.
    pub fn duration_s(&self) -> f64 {
        FRAME_SECONDS
    }
}

/// What a message carries: audio frames upstream, text tokens downstream, or
/// the end-of-stream marker that flushes middleware state on session close.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Audio(Vec<AudioFrame>),
    Text(Vec<Token>),
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Audio,
    Text,
}

impl Payload {
    pub fn kind(&self) -> Option<PayloadKind> {
        match self {
            Payload::Audio(_) => Some(PayloadKind::Audio),
            Payload::Text(_) => Some(PayloadKind::Text),
            Payload::End => None,
        }
    }
}

/// One unit of pipeline traffic.
///
/// `t_start`/`t_end` are the aligned start and end of the audio span the
/// message covers, `t_recv` is when it was received; all three are seconds on
/// the per-session clock starting at 0. `seq` is assigned by the producing
/// node and is strictly increasing per (session, origin).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub session: SessionId,
    /// Name of the graph node that produced the message.
    pub origin: String,
    pub seq: u64,
    pub stable: bool,
    pub t_start: f64,
    pub t_end: f64,
    pub t_recv: f64,
    pub payload: Payload,
}

impl Message {
    pub fn text_tokens(&self) -> Option<&[Token]> {
        match &self.payload {
            Payload::Text(tokens) => Some(tokens),
            _ => None,
        }
    }

    pub fn audio_frames(&self) -> Option<&[AudioFrame]> {
        match &self.payload {
            Payload::Audio(frames) => Some(frames),
            _ => None,
        }
    }
}

/// Output discipline of a streaming component: `Fixed` components only ever
/// emit stable (never retracted) messages, `Revision` components may emit
/// unstable messages that later emissions supersede.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityMode {
    Fixed,
    Revision,
}

/// Which hosted model a middleware node talks to. `St` is the end-to-end
/// speech translation model (audio in, target-language text out).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Asr,
    Mt,
    St,
}

/// A node in a session graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NodeKind {
    GatewayIn,
    Speech { mode: StabilityMode, backend: BackendKind },
    Text { mode: StabilityMode },
    GatewayOut,
}

impl NodeKind {
    /// Payload kind this node consumes, if any.
    pub fn input_kind(&self) -> Option<PayloadKind> {
        match self {
            NodeKind::GatewayIn => None,
            NodeKind::Speech { .. } => Some(PayloadKind::Audio),
            NodeKind::Text { .. } => Some(PayloadKind::Text),
            NodeKind::GatewayOut => Some(PayloadKind::Text),
        }
    }

    /// Payload kind this node produces, if any.
    pub fn output_kind(&self) -> Option<PayloadKind> {
        match self {
            NodeKind::GatewayIn => Some(PayloadKind::Audio),
            NodeKind::Speech { .. } => Some(PayloadKind::Text),
            NodeKind::Text { .. } => Some(PayloadKind::Text),
            NodeKind::GatewayOut => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub kind: NodeKind,
}

/// Directed acyclic routing graph for one session: exactly one gateway-in
/// source, at least one gateway-out sink, and only port-compatible edges
/// (audio feeds speech nodes, text feeds text nodes and the gateway-out).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionGraph {
    pub nodes: Vec<GraphNode>,
    /// Edges as (from, to) indices into `nodes`.
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphViolation {
    #[error("graph has no nodes")]
    Empty,
    #[error("edge {edge} references missing node {node}")]
    DanglingEdge { edge: usize, node: usize },
    #[error("expected exactly one gateway-in node, found {count}")]
    GatewayInCount { count: usize },
    #[error("gateway-in node {node} must not have incoming edges")]
    SourceHasInput { node: usize },
    #[error("node {node} ({name}) has no incoming edges but is not the gateway-in")]
    ExtraSource { node: usize, name: String },
    #[error("expected at least one gateway-out node")]
    NoGatewayOut,
    #[error("gateway-out node {node} must not have outgoing edges")]
    SinkHasOutput { node: usize },
    #[error("edge {from}->{to} connects incompatible ports ({from_kind:?} -> {to_kind:?})")]
    PortMismatch { from: usize, to: usize, from_kind: Option<PayloadKind>, to_kind: Option<PayloadKind> },
    #[error("graph contains a cycle through node {node} ({name})")]
    Cycle { node: usize, name: String },
}

impl SessionGraph {
    /// Audio -> speech(backend) -> text(MT) -> out, with the transcript also
    /// fanned out to the user.
    pub fn cascaded(mode: StabilityMode) -> Self {
        SessionGraph {
            nodes: vec![
                GraphNode { name: "in".into(), kind: NodeKind::GatewayIn },
                GraphNode { name: "speech".into(), kind: NodeKind::Speech { mode, backend: BackendKind::Asr } },
                GraphNode { name: "text".into(), kind: NodeKind::Text { mode } },
                GraphNode { name: "out".into(), kind: NodeKind::GatewayOut },
            ],
            edges: vec![(0, 1), (1, 3), (1, 2), (2, 3)],
        }
    }

    /// Audio -> speech(ST) -> out, one model end to end.
    pub fn end_to_end(mode: StabilityMode) -> Self {
        SessionGraph {
            nodes: vec![
                GraphNode { name: "in".into(), kind: NodeKind::GatewayIn },
                GraphNode { name: "speech".into(), kind: NodeKind::Speech { mode, backend: BackendKind::St } },
                GraphNode { name: "out".into(), kind: NodeKind::GatewayOut },
            ],
            edges: vec![(0, 1), (1, 2)],
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn outgoing(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(f, _)| *f == node).map(|(_, t)| *t)
    }

    /// Checks every structural invariant and names the first failing node or
    /// edge.
    pub fn validate(&self) -> Result<(), GraphViolation> {
        if self.nodes.is_empty() {
            return Err(GraphViolation::Empty);
        }
        for (i, &(from, to)) in self.edges.iter().enumerate() {
            for node in [from, to] {
                if node >= self.nodes.len() {
                    return Err(GraphViolation::DanglingEdge { edge: i, node });
                }
            }
        }

        let mut indeg = vec![0usize; self.nodes.len()];
        let mut outdeg = vec![0usize; self.nodes.len()];
        for &(from, to) in &self.edges {
            outdeg[from] += 1;
            indeg[to] += 1;
        }

        let gateway_ins: Vec<usize> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.kind, NodeKind::GatewayIn))
            .map(|(i, _)| i)
            .collect();
        if gateway_ins.len() != 1 {
            return Err(GraphViolation::GatewayInCount { count: gateway_ins.len() });
        }
        let source = gateway_ins[0];
        if indeg[source] > 0 {
            return Err(GraphViolation::SourceHasInput { node: source });
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if i != source && indeg[i] == 0 {
                return Err(GraphViolation::ExtraSource { node: i, name: node.name.clone() });
            }
        }

        let mut has_out = false;
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.kind, NodeKind::GatewayOut) {
                has_out = true;
                if outdeg[i] > 0 {
                    return Err(GraphViolation::SinkHasOutput { node: i });
                }
            }
        }
        if !has_out {
            return Err(GraphViolation::NoGatewayOut);
        }

        for &(from, to) in &self.edges {
            let from_kind = self.nodes[from].kind.output_kind();
            let to_kind = self.nodes[to].kind.input_kind();
            if from_kind.is_none() || from_kind != to_kind {
                return Err(GraphViolation::PortMismatch { from, to, from_kind, to_kind });
            }
        }

        // Kahn's algorithm; anything left over sits on a cycle.
        let mut indeg = indeg;
        let mut ready: Vec<usize> = (0..self.nodes.len()).filter(|&i| indeg[i] == 0).collect();
        let mut visited = 0usize;
        while let Some(n) = ready.pop() {
            visited += 1;
            for next in self.outgoing(n) {
                indeg[next] -= 1;
                if indeg[next] == 0 {
                    ready.push(next);
                }
            }
        }
        if visited != self.nodes.len() {
            let node = (0..self.nodes.len()).find(|&i| indeg[i] > 0).unwrap();
            return Err(GraphViolation::Cycle { node, name: self.nodes[node].name.clone() });
        }
        Ok(())
    }
}

/// Longest shared prefix of two token sequences, compared by exact equality.
pub fn common_token_prefix<'a>(a: &'a [Token], b: &[Token]) -> &'a [Token] {
    let n = a.iter().zip(b.iter()).take_while(|(x, y)| x == y).count();
    &a[..n]
}

/// Sub-span of `[start, end]` covering token positions `[from, to)` out of
/// `total`, by linear interpolation. Used wherever a committed part of a
/// message needs timestamps narrower than the whole message span.
pub fn fractional_span(start: f64, end: f64, total: usize, from: usize, to: usize) -> (f64, f64) {
    if total == 0 {
        return (start, start);
    }
    let width = end - start;
    let a = start + width * (from as f64 / total as f64);
    let b = start + width * (to as f64 / total as f64);
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<Token> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn common_prefix_examples() {
        assert_eq!(common_token_prefix(&toks("the cat sat"), &toks("the cat sits")), &toks("the cat")[..]);
        assert_eq!(common_token_prefix(&toks("a"), &toks("b")), &[] as &[Token]);
        let x = toks("x y z");
        assert_eq!(common_token_prefix(&x, &x), &x[..]);
        assert_eq!(common_token_prefix(&[], &toks("a")), &[] as &[Token]);
    }

    #[test]
    fn canonical_graphs_validate() {
        assert_eq!(SessionGraph::cascaded(StabilityMode::Fixed).validate(), Ok(()));
        assert_eq!(SessionGraph::end_to_end(StabilityMode::Revision).validate(), Ok(()));
    }

    #[test]
    fn text_to_speech_edge_is_port_mismatch() {
        let mut g = SessionGraph::cascaded(StabilityMode::Fixed);
        g.edges.push((2, 1)); // text -> speech
        match g.validate() {
            Err(GraphViolation::PortMismatch { from: 2, to: 1, .. }) => {}
            other => panic!("expected port mismatch, got {other:?}"),
        }
    }

    #[test]
    fn cycle_is_rejected() {
        let mut g = SessionGraph::cascaded(StabilityMode::Fixed);
        // A second text node receiving from and feeding back into the first.
        g.nodes.push(GraphNode { name: "text2".into(), kind: NodeKind::Text { mode: StabilityMode::Fixed } });
        g.edges.push((2, 4));
        g.edges.push((4, 2));
        match g.validate() {
            Err(GraphViolation::Cycle { .. }) => {}
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let mut g = SessionGraph::end_to_end(StabilityMode::Fixed);
        g.edges.push((1, 9));
        assert_eq!(g.validate(), Err(GraphViolation::DanglingEdge { edge: 2, node: 9 }));
    }

    #[test]
    fn missing_source_and_sink_are_rejected() {
        let g = SessionGraph { nodes: vec![], edges: vec![] };
        assert_eq!(g.validate(), Err(GraphViolation::Empty));

        let g = SessionGraph {
            nodes: vec![GraphNode { name: "out".into(), kind: NodeKind::GatewayOut }],
            edges: vec![],
        };
        assert_eq!(g.validate(), Err(GraphViolation::GatewayInCount { count: 0 }));
    }

    proptest! {
        #[test]
        fn common_prefix_laws(a in proptest::collection::vec("[a-c]{1,2}", 0..8),
                              b in proptest::collection::vec("[a-c]{1,2}", 0..8)) {
            let p = common_token_prefix(&a, &b).to_vec();
            let q = common_token_prefix(&b, &a).to_vec();
            prop_assert_eq!(&p, &q);
            prop_assert!(p.len() <= a.len().min(b.len()));
            // Idempotent: prefixing with the result changes nothing.
            prop_assert_eq!(common_token_prefix(&a, &p).to_vec(), p.clone());
            // The prefix equals `a` exactly when `a` prefixes `b`.
            let a_prefixes_b = a.len() <= b.len() && b[..a.len()] == a[..];
            prop_assert_eq!(p == a, a_prefixes_b);
        }

        #[test]
        fn random_dags_validate_and_back_edges_cycle(extra in proptest::collection::vec((1usize..6, 1usize..6), 0..8),
                                                     back in (1usize..6, 1usize..6)) {
            // Chain: in -> speech -> text1..text5 -> out, plus random forward
            // text->text edges. Node i (1-based text index) is node i + 1.
            let mode = StabilityMode::Fixed;
            let mut nodes = vec![
                GraphNode { name: "in".into(), kind: NodeKind::GatewayIn },
                GraphNode { name: "speech".into(), kind: NodeKind::Speech { mode, backend: BackendKind::Asr } },
            ];
            for i in 1..=5usize {
                nodes.push(GraphNode { name: format!("text{i}"), kind: NodeKind::Text { mode } });
            }
            nodes.push(GraphNode { name: "out".into(), kind: NodeKind::GatewayOut });
            let out = nodes.len() - 1;
            let mut edges = vec![(0, 1), (1, 2)];
            for i in 2..out - 1 {
                edges.push((i, i + 1));
            }
            edges.push((out - 1, out));
            for (a, b) in extra {
                let (a, b) = (a.min(b), a.max(b));
                if a != b {
                    edges.push((a + 1, b + 1)); // forward text -> text
                }
            }
            let g = SessionGraph { nodes: nodes.clone(), edges: edges.clone() };
            prop_assert_eq!(g.validate(), Ok(()));

            let (a, b) = back;
            let (a, b) = (a.min(b), a.max(b));
            prop_assume!(a != b);
            let mut edges = edges;
            edges.push((b + 1, a + 1)); // back edge between compatible text ports
            let g = SessionGraph { nodes, edges };
            let cyclic = matches!(g.validate(), Err(GraphViolation::Cycle { .. }));
            prop_assert!(cyclic);
        }
    }
}
