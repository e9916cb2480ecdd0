//! End-to-end evaluation of session output logs: first-unchanged latency,
//! model-independent latency, flickering rate, WER and BLEU, with
//! resegmentation aligning the final stable output to the reference
//! sentences before scoring.

pub mod latency;
pub mod quality;

pub use latency::{
    count_flickers, delay, extract_first_unchanged, flicker_rate, latency, model_independent_latency,
    session_latency, split_blocks, Commitment, EvalMessage, MessageBlock,
};
pub use quality::{bleu, edit_distance, resegment, segmentation_cost, wer};

use crate::types::{Message, Token};
use serde::{Deserialize, Serialize};

/// One line of a session log file. Text is the space-joined token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub stable: bool,
    pub t_s: f64,
    pub t_e: f64,
    pub t_r: f64,
    pub text: String,
}

impl LogRecord {
    pub fn from_message(message: &Message) -> Option<LogRecord> {
        let tokens = message.text_tokens()?;
        Some(LogRecord {
            seq: message.seq,
            stable: message.stable,
            t_s: message.t_start,
            t_e: message.t_end,
            t_r: message.t_recv,
            text: tokens.join(" "),
        })
    }

    pub fn to_eval_message(&self) -> EvalMessage {
        EvalMessage {
            tokens: self.text.split_whitespace().map(|t| t.to_string()).collect(),
            stable: self.stable,
            t_start: self.t_s,
            t_end: self.t_e,
            t_recv: self.t_r,
        }
    }
}

/// Serializes records as JSON lines.
pub fn write_log(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("log records serialize"));
        out.push('\n');
    }
    out
}

/// Parses a JSON-lines session log; blank lines are skipped.
pub fn read_log(content: &str) -> Result<Vec<LogRecord>, serde_json::Error> {
    content
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Per-session evaluation output. Metrics that are undefined for the log
/// (empty reference, no commitments) are absent rather than zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: Option<f64>,
    pub wer: Option<f64>,
    pub latency_s: Option<f64>,
    pub model_independent_latency_s: Option<f64>,
    pub flicker_rate: Option<f64>,
    pub flickers: u64,
    pub output_words: usize,
    pub reference_words: usize,
    pub unclosed_blocks: usize,
}

/// Runs the whole evaluation pipeline for one output stream against its
/// reference sentences.
pub fn evaluate(messages: &[EvalMessage], reference: &[Vec<Token>], word_duration_s: f64) -> MetricsReport {
    let blocks = split_blocks(messages);
    let reference_words: usize = reference.iter().map(|s| s.len()).sum();

    // Final stable output is the concatenation of the stable messages
    // (stable emissions are append-only deltas by protocol contract).
    let final_words: Vec<Token> = messages
        .iter()
        .filter(|m| m.stable)
        .flat_map(|m| m.tokens.iter().cloned())
        .collect();

    let (bleu_score, wer_score) = if reference.is_empty() || reference_words == 0 {
        (None, None)
    } else {
        let segments = resegment(&final_words, reference);
        (bleu(&segments, reference), wer(&segments, reference))
    };

    let flickers: u64 = blocks.iter().map(count_flickers).sum();
    MetricsReport {
        bleu: bleu_score,
        wer: wer_score,
        latency_s: session_latency(&blocks),
        model_independent_latency_s: model_independent_latency(messages, word_duration_s),
        flicker_rate: flicker_rate(&blocks, reference_words),
        flickers,
        output_words: final_words.len(),
        reference_words,
        unclosed_blocks: blocks.iter().filter(|b| !b.closed).count(),
    }
}

/// Formats an optional metric for CSV output.
pub fn csv_opt(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.4}"),
        None => String::new(),
    }
}
