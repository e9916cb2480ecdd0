//! External session interface: a line-delimited JSON record protocol for
//! creating sessions, streaming audio and receiving output messages.
//!
//! One record per line, self-delimited, unknown fields ignored. Audio
//! payloads are base64 of little-endian 16-bit PCM at 16 kHz in whole 30 ms
//! frames, accompanied by per-frame speech flags (and, for synthetic
//! corpora, optional per-frame token labels). The same handler backs the
//! wire form and the in-process form the simulation harness drives.


use crate::mediator::{Mediator, MediatorError, RouteTarget};
use crate::types::{AudioFrame, Message, Payload, SessionGraph, SessionId, Token, SAMPLES_PER_FRAME};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("audio after end-of-stream on session {0}")]
    AudioAfterEos(u64),
    #[error("{0}")]
    Mediator(#[from] MediatorError),
}

/// Wire records, tagged by `op`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WireRecord {
    Create {
        graph: SessionGraph,
    },
    Created {
        session: u64,
    },
    Audio {
        session: u64,
        /// Base64 little-endian i16 PCM, whole 30 ms frames.
        pcm: String,
        /// One speech/non-speech flag per frame.
        speech: Vec<bool>,
        /// Optional synthetic token label per frame (mock-corpus channel).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<Vec<Option<Token>>>,
    },
    Eos {
        session: u64,
    },
    Output {
        session: u64,
        origin: String,
        seq: u64,
        stable: bool,
        t_s: f64,
        t_e: f64,
        t_r: f64,
        text: String,
    },
    Closed {
        session: u64,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<u64>,
        message: String,
    },
}

struct ClientSession {
    next_input_seq: u64,
    frames_sent: u64,
    eos_sent: bool,
    /// Output messages delivered by the mediator, per producing node.
    outputs: BTreeMap<String, Vec<Message>>,
    closed_notified: bool,
}

/// Session front door. `create`/`audio`/`end_of_stream` are the in-process
/// form; `handle_record` wraps them for the wire.
pub struct Gateway {
    mediator: Arc<Mediator>,
    sessions: Mutex<BTreeMap<SessionId, ClientSession>>,
}

impl Gateway {
    pub fn new(mediator: Arc<Mediator>) -> Self {
        Gateway { mediator, sessions: Mutex::new(BTreeMap::new()) }
    }

    pub fn mediator(&self) -> &Arc<Mediator> {
        &self.mediator
    }

    pub fn create(&self, graph: SessionGraph, now: f64) -> Result<SessionId, GatewayError> {
        let id = self.mediator.create_session(graph, now)?;
        self.sessions.lock().unwrap().insert(
            id,
            ClientSession {
                next_input_seq: 0,
                frames_sent: 0,
                eos_sent: false,
                outputs: BTreeMap::new(),
                closed_notified: false,
            },
        );
        Ok(id)
    }

    /// Publishes one batch of audio frames into the session's graph. The
    /// aligned span is derived from the session's running frame count.
    pub fn audio(
        &self,
        session: SessionId,
        frames: Vec<AudioFrame>,
        now: f64,
    ) -> Result<Vec<(RouteTarget, Message)>, GatewayError> {
        let (seq, start_frame) = {
            let mut sessions = self.sessions.lock().unwrap();
            let entry = sessions.get_mut(&session).ok_or(GatewayError::UnknownSession(session.0))?;
            if entry.eos_sent {
                return Err(GatewayError::AudioAfterEos(session.0));
            }
            let seq = entry.next_input_seq;
            entry.next_input_seq += 1;
            let start = entry.frames_sent;
            entry.frames_sent += frames.len() as u64;
            (seq, start)
        };
        let t_start = start_frame as f64 * crate::types::FRAME_SECONDS;
        let t_end = t_start + crate::types::frames_duration_s(frames.len());
        let message = Message {
            session,
            origin: "in".into(),
            seq,
            stable: true,
            t_start,
            t_end,
            t_recv: now,
            payload: Payload::Audio(frames),
        };
        Ok(self.mediator.route("in", message)?)
    }

    /// Starts session teardown; the marker flushes middleware state on its
    /// way to the client.
    pub fn end_of_stream(&self, session: SessionId, now: f64) -> Result<Vec<(RouteTarget, Message)>, GatewayError> {
        let seq = {
            let mut sessions = self.sessions.lock().unwrap();
            let entry = sessions.get_mut(&session).ok_or(GatewayError::UnknownSession(session.0))?;
            if entry.eos_sent {
                return Err(GatewayError::AudioAfterEos(session.0));
            }
            entry.eos_sent = true;
            let seq = entry.next_input_seq;
            entry.next_input_seq += 1;
            seq
        };
        Ok(self.mediator.close_session(session, seq, now)?)
    }

    /// Accepts a mediator delivery for the client, stamping the receive
    /// time. End markers are bookkeeping only, not output records.
    pub fn deliver(&self, mut message: Message, now: f64) {
        message.t_recv = now;
        let mut sessions = self.sessions.lock().unwrap();
        if let Some(entry) = sessions.get_mut(&message.session) {
            if message.payload != Payload::End {
                entry.outputs.entry(message.origin.clone()).or_default().push(message);
            }
        }
    }

    /// Output messages of one session grouped by producing node.
    pub fn take_outputs(&self, session: SessionId) -> BTreeMap<String, Vec<Message>> {
        let mut sessions = self.sessions.lock().unwrap();
        sessions.get_mut(&session).map(|e| std::mem::take(&mut e.outputs)).unwrap_or_default()
    }

    /// Wire entry point: parses one record line and returns the immediate
    /// responses. Output records are produced separately by `poll_wire`.
    pub fn handle_record(&self, line: &str, now: f64) -> Vec<WireRecord> {
        let record: WireRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return vec![WireRecord::Error { session: None, message: format!("malformed record: {e}") }],
        };
        match record {
            WireRecord::Create { graph } => match self.create(graph, now) {
                Ok(id) => vec![WireRecord::Created { session: id.0 }],
                Err(e) => vec![WireRecord::Error { session: None, message: e.to_string() }],
            },
            WireRecord::Audio { session, pcm, speech, labels } => {
                match decode_audio(&pcm, &speech, labels.as_deref()) {
                    Ok(frames) => match self.audio(SessionId(session), frames, now) {
                        Ok(_) => vec![],
                        Err(e) => vec![WireRecord::Error { session: Some(session), message: e.to_string() }],
                    },
                    Err(e) => vec![WireRecord::Error { session: Some(session), message: e.to_string() }],
                }
            }
            WireRecord::Eos { session } => match self.end_of_stream(SessionId(session), now) {
                Ok(_) => vec![],
                Err(e) => vec![WireRecord::Error { session: Some(session), message: e.to_string() }],
            },
            // Client-bound records arriving from a client are protocol errors.
            WireRecord::Created { .. } | WireRecord::Output { .. } | WireRecord::Closed { .. } | WireRecord::Error { .. } => {
                vec![WireRecord::Error { session: None, message: "unexpected client-bound record".into() }]
            }
        }
    }

    /// Drains queued outputs (and the close notification, once) as wire
    /// records, in per-origin delivery order.
    pub fn poll_wire(&self, session: SessionId) -> Vec<WireRecord> {
        let mut records = Vec::new();
        for (origin, messages) in self.take_outputs(session) {
            for message in messages {
                if let Some(tokens) = message.text_tokens() {
                    records.push(WireRecord::Output {
                        session: session.0,
                        origin: origin.clone(),
                        seq: message.seq,
                        stable: message.stable,
                        t_s: message.t_start,
                        t_e: message.t_end,
                        t_r: message.t_recv,
                        text: tokens.join(" "),
                    });
                }
            }
        }
        if self.mediator.is_closed(session) {
            let mut sessions = self.sessions.lock().unwrap();
            if let Some(entry) = sessions.get_mut(&session) {
                if !entry.closed_notified {
                    entry.closed_notified = true;
                    records.push(WireRecord::Closed { session: session.0 });
                }
            }
        }
        records
    }
}

/// Decodes base64 PCM plus per-frame flags into frames.
pub fn decode_audio(
    pcm: &str,
    speech: &[bool],
    labels: Option<&[Option<Token>]>,
) -> Result<Vec<AudioFrame>, GatewayError> {
    let bytes = BASE64.decode(pcm).map_err(|e| GatewayError::Malformed(format!("bad base64 audio: {e}")))?;
    if bytes.len() % (SAMPLES_PER_FRAME * 2) != 0 {
        return Err(GatewayError::Malformed(format!(
            "audio must be whole 30 ms frames ({} bytes each), got {} bytes",
            SAMPLES_PER_FRAME * 2,
            bytes.len()
        )));
    }
    let n_frames = bytes.len() / (SAMPLES_PER_FRAME * 2);
    if speech.len() != n_frames {
        return Err(GatewayError::Malformed(format!(
            "expected {n_frames} speech flags, got {}",
            speech.len()
        )));
    }
    if let Some(labels) = labels {
        if labels.len() != n_frames {
            return Err(GatewayError::Malformed(format!(
                "expected {n_frames} labels, got {}",
                labels.len()
            )));
        }
    }
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let mut samples = Vec::with_capacity(SAMPLES_PER_FRAME);
        for s in 0..SAMPLES_PER_FRAME {
            let at = (i * SAMPLES_PER_FRAME + s) * 2;
            samples.push(i16::from_le_bytes([bytes[at], bytes[at + 1]]));
        }
        frames.push(AudioFrame {
            samples,
            is_speech: speech[i],
            label: labels.and_then(|l| l[i].clone()),
        });
    }
    Ok(frames)
}

/// Encodes frames back into the wire representation. Frames without samples
/// (in-process synthetic corpora) are filled with silence or a small
/// deterministic tone so the payload is always whole frames.
pub fn encode_audio(frames: &[AudioFrame]) -> (String, Vec<bool>, Vec<Option<Token>>) {
    let mut bytes = Vec::with_capacity(frames.len() * SAMPLES_PER_FRAME * 2);
    for frame in frames {
        for s in 0..SAMPLES_PER_FRAME {
            let sample = frame.samples.get(s).copied().unwrap_or_else(|| synth_sample(frame, s));
            bytes.extend_from_slice(&sample.to_le_bytes());
        }
    }
    let speech = frames.iter().map(|f| f.is_speech).collect();
    let labels = frames.iter().map(|f| f.label.clone()).collect();
    (BASE64.encode(bytes), speech, labels)
}

fn synth_sample(frame: &AudioFrame, s: usize) -> i16 {
    if frame.is_speech {
        // Audible square wave; good enough for a demo client.
        if (s / 20) % 2 == 0 {
            6000
        } else {
            -6000
        }
    } else {
        0
    }
}
