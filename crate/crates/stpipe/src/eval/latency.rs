//! First-unchanged latency and flickering rate over received message logs.
//!
//! Messages are grouped into unstable-to-stable blocks. Inside a block, the
//! earliest messages whose prefix overlap with the final stable message keeps
//! growing are the "first-unchanged" ones: each commits the span by which it
//! extends the best earlier overlap, at its own receive time. The latency is
//! the span-weighted mean of the per-commitment delays
//! `d = t_recv - (t_start + t_end) / 2`.

use crate::types::{common_token_prefix, fractional_span, Token};

/// A received message as the evaluator sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalMessage {
    pub tokens: Vec<Token>,
    pub stable: bool,
    pub t_start: f64,
    pub t_end: f64,
    pub t_recv: f64,
}

/// Messages from one unstable run up to and including its closing stable
/// message. A trailing run with no closing stable message forms an unclosed
/// block.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageBlock {
    pub messages: Vec<EvalMessage>,
    pub closed: bool,
}

/// Splits a t_recv-ordered message log into blocks. Consecutive stable
/// messages become singleton blocks; unstable messages attach to the next
/// stable one.
pub fn split_blocks(messages: &[EvalMessage]) -> Vec<MessageBlock> {
    let mut blocks = Vec::new();
    let mut current: Vec<EvalMessage> = Vec::new();
    for message in messages {
        let stable = message.stable;
        current.push(message.clone());
        if stable {
            blocks.push(MessageBlock { messages: std::mem::take(&mut current), closed: true });
        }
    }
    if !current.is_empty() {
        blocks.push(MessageBlock { messages: current, closed: false });
    }
    blocks
}

/// One first-unchanged commitment: the span of the final stable message this
/// message was the first to predict, at this message's receive time.
#[derive(Clone, Debug, PartialEq)]
pub struct Commitment {
    pub message_index: usize,
    /// Committed token positions within the final stable message.
    pub token_range: (usize, usize),
    pub t_start: f64,
    pub t_end: f64,
    pub t_recv: f64,
}

/// Scans the block in receive order; a message is first-unchanged iff its
/// common prefix with the final stable message strictly exceeds every earlier
/// one. The committed span gets timestamps interpolated inside the message's
/// own span. Unclosed blocks commit nothing.
pub fn extract_first_unchanged(block: &MessageBlock) -> Vec<Commitment> {
    if !block.closed || block.messages.is_empty() {
        return Vec::new();
    }
    let final_tokens = &block.messages.last().unwrap().tokens;
    let mut best = 0usize;
    let mut commitments = Vec::new();
    for (i, message) in block.messages.iter().enumerate() {
        let overlap = common_token_prefix(&message.tokens, final_tokens).len();
        if overlap > best {
            let (t_start, t_end) =
                fractional_span(message.t_start, message.t_end, message.tokens.len(), best, overlap);
            commitments.push(Commitment {
                message_index: i,
                token_range: (best, overlap),
                t_start,
                t_end,
                t_recv: message.t_recv,
            });
            best = overlap;
        }
    }
    commitments
}

/// Delay of one message: receive time minus the midpoint of its aligned span.
pub fn delay(t_start: f64, t_end: f64, t_recv: f64) -> f64 {
    t_recv - (t_start + t_end) / 2.0
}

/// Span-weighted mean delay over first-unchanged commitments. Absent when
/// there are no commitments or all spans have zero length.
pub fn latency(commitments: &[Commitment]) -> Option<f64> {
    let mut weighted = 0.0;
    let mut total = 0.0;
    for c in commitments {
        let weight = c.t_end - c.t_start;
        weighted += delay(c.t_start, c.t_end, c.t_recv) * weight;
        total += weight;
    }
    if total > 0.0 {
        Some(weighted / total)
    } else {
        None
    }
}

/// Latency over every block of a session log.
pub fn session_latency(blocks: &[MessageBlock]) -> Option<f64> {
    let commitments: Vec<Commitment> =
        blocks.iter().flat_map(|b| extract_first_unchanged(b)).collect();
    latency(&commitments)
}

/// Model-independent latency: ignores the reported spans and synthesizes
/// them by assuming every output word covers `word_duration_s` of audio.
/// All messages of a block share the block's committed-word base, then the
/// usual first-unchanged pipeline runs. Used to cross-check system rankings.
pub fn model_independent_latency(messages: &[EvalMessage], word_duration_s: f64) -> Option<f64> {
    let blocks = split_blocks(messages);
    let mut commitments = Vec::new();
    let mut base_words = 0usize;
    for block in &blocks {
        let synthetic: Vec<EvalMessage> = block
            .messages
            .iter()
            .map(|m| EvalMessage {
                tokens: m.tokens.clone(),
                stable: m.stable,
                t_start: base_words as f64 * word_duration_s,
                t_end: (base_words + m.tokens.len()) as f64 * word_duration_s,
                t_recv: m.t_recv,
            })
            .collect();
        let synthetic_block = MessageBlock { messages: synthetic, closed: block.closed };
        commitments.extend(extract_first_unchanged(&synthetic_block));
        if block.closed {
            base_words += block.messages.last().unwrap().tokens.len();
        }
    }
    latency(&commitments)
}

/// Flickers inside one block: for every consecutive message pair, the number
/// of shared positions whose tokens differ. Appended or truncated positions
/// beyond the shorter message do not count.
pub fn count_flickers(block: &MessageBlock) -> u64 {
    let mut flickers = 0u64;
    for pair in block.messages.windows(2) {
        let shared = pair[0].tokens.len().min(pair[1].tokens.len());
        flickers += (0..shared).filter(|&i| pair[0].tokens[i] != pair[1].tokens[i]).count() as u64;
    }
    flickers
}

/// Total flickers per reference word. Absent for an empty reference.
pub fn flicker_rate(blocks: &[MessageBlock], reference_words: usize) -> Option<f64> {
    if reference_words == 0 {
        return None;
    }
    let total: u64 = blocks.iter().map(count_flickers).sum();
    Some(total as f64 / reference_words as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(stable: bool, text: &str, span: (f64, f64), t_recv: f64) -> EvalMessage {
        EvalMessage {
            tokens: text.split_whitespace().map(|t| t.to_string()).collect(),
            stable,
            t_start: span.0,
            t_end: span.1,
            t_recv,
        }
    }

    #[test]
    fn block_splitting_examples() {
        let u = |t| msg(false, "x", (0.0, 1.0), t);
        let s = |t| msg(true, "x", (0.0, 1.0), t);

        let blocks = split_blocks(&[u(1.0), u(2.0), s(3.0)]);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].messages.len(), 3);
        assert!(blocks[0].closed);

        let blocks = split_blocks(&[s(1.0), s(2.0)]);
        assert_eq!(blocks.len(), 2);
        assert!(blocks.iter().all(|b| b.messages.len() == 1 && b.closed));

        let blocks = split_blocks(&[u(1.0), s(2.0), u(3.0), u(4.0), s(5.0)]);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].messages.len(), 2);
        assert_eq!(blocks[1].messages.len(), 3);

        // Trailing unstable messages form an unclosed block.
        let blocks = split_blocks(&[s(1.0), u(2.0)]);
        assert_eq!(blocks.len(), 2);
        assert!(!blocks[1].closed);

        // Losslessness: every message lands in exactly one block.
        let log = [u(1.0), u(2.0), s(3.0), s(4.0), u(5.0)];
        let blocks = split_blocks(&log);
        let total: usize = blocks.iter().map(|b| b.messages.len()).sum();
        assert_eq!(total, log.len());
    }

    #[test]
    fn first_unchanged_backtracking_example() {
        // Final stable "the cat sat": u1 commits "the", u2 extends to
        // "the cat", u3 completes the tiling.
        let block = MessageBlock {
            messages: vec![
                msg(false, "the dog", (0.0, 1.0), 1.0),
                msg(false, "the cat", (0.0, 2.0), 2.0),
                msg(true, "the cat sat", (0.0, 3.0), 3.0),
            ],
            closed: true,
        };
        let commitments = extract_first_unchanged(&block);
        assert_eq!(commitments.len(), 3);
        assert_eq!(commitments[0].token_range, (0, 1));
        assert_eq!(commitments[0].t_recv, 1.0);
        assert!((commitments[0].t_start, commitments[0].t_end) == (0.0, 0.5));
        assert_eq!(commitments[1].token_range, (1, 2));
        assert_eq!(commitments[2].token_range, (2, 3));
        // The spans tile the final message with no gap or overlap.
        assert_eq!(commitments[0].token_range.1, commitments[1].token_range.0);
        assert_eq!(commitments[1].token_range.1, commitments[2].token_range.0);
    }

    #[test]
    fn sole_stable_message_is_the_only_commitment() {
        let block = MessageBlock { messages: vec![msg(true, "a b", (0.0, 1.0), 2.0)], closed: true };
        let commitments = extract_first_unchanged(&block);
        assert_eq!(commitments.len(), 1);
        assert_eq!(commitments[0].token_range, (0, 2));
    }

    #[test]
    fn zero_overlap_messages_never_commit() {
        let block = MessageBlock {
            messages: vec![msg(false, "x y", (0.0, 1.0), 1.0), msg(true, "a b", (0.0, 2.0), 2.0)],
            closed: true,
        };
        let commitments = extract_first_unchanged(&block);
        assert_eq!(commitments.len(), 1);
        assert_eq!(commitments[0].message_index, 1);
    }

    #[test]
    fn delay_formula() {
        assert_eq!(delay(10.0, 12.0, 13.0), 2.0);
        assert_eq!(delay(0.0, 0.0, 0.0), 0.0);
        assert_eq!(delay(5.0, 7.0, 6.0), 0.0);
    }

    #[test]
    fn latency_weights_commitments_by_span_length() {
        let commitments = vec![
            Commitment { message_index: 0, token_range: (0, 2), t_start: 0.0, t_end: 2.0, t_recv: 3.0 },
            Commitment { message_index: 1, token_range: (2, 3), t_start: 2.0, t_end: 3.0, t_recv: 5.0 },
        ];
        // d = 2.0 and 2.5, weights 2 and 1.
        assert!((latency(&commitments).unwrap() - 6.5 / 3.0).abs() < 1e-12);

        let one = vec![Commitment { message_index: 0, token_range: (0, 1), t_start: 10.0, t_end: 12.0, t_recv: 13.0 }];
        assert_eq!(latency(&one), Some(2.0));

        assert_eq!(latency(&[]), None);
        let degenerate = vec![Commitment { message_index: 0, token_range: (0, 0), t_start: 1.0, t_end: 1.0, t_recv: 2.0 }];
        assert_eq!(latency(&degenerate), None);
    }

    #[test]
    fn delay_is_invariant_under_time_shifts() {
        for shift in [0.0, 1.5, -3.0, 100.0] {
            let base = delay(10.0, 12.0, 13.0);
            assert!((delay(10.0 + shift, 12.0 + shift, 13.0 + shift) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn model_independent_latency_substitution() {
        // Ten words received stable at t=4: span (0, 3.0), d = 4 - 1.5.
        let messages = [msg(true, "w w w w w w w w w w", (99.0, 99.0), 4.0)];
        let d = model_independent_latency(&messages, 0.3).unwrap();
        assert!((d - 2.5).abs() < 1e-12);
        assert_eq!(model_independent_latency(&[], 0.3), None);
    }

    #[test]
    fn flicker_counting_examples() {
        let block = MessageBlock {
            messages: vec![msg(false, "the cat", (0.0, 1.0), 1.0), msg(true, "the dog sat", (0.0, 1.0), 2.0)],
            closed: true,
        };
        assert_eq!(count_flickers(&block), 1);

        let block = MessageBlock {
            messages: vec![msg(false, "a b", (0.0, 1.0), 1.0), msg(true, "a b", (0.0, 1.0), 2.0)],
            closed: true,
        };
        assert_eq!(count_flickers(&block), 0);

        let block = MessageBlock {
            messages: vec![
                msg(false, "a b c", (0.0, 1.0), 1.0),
                msg(false, "a x y", (0.0, 1.0), 2.0),
                msg(true, "a x c", (0.0, 1.0), 3.0),
            ],
            closed: true,
        };
        assert_eq!(count_flickers(&block), 3);
    }

    #[test]
    fn flicker_rate_is_per_reference_word() {
        let blocks = vec![MessageBlock {
            messages: vec![
                msg(false, "a b c", (0.0, 1.0), 1.0),
                msg(false, "a x y", (0.0, 1.0), 2.0),
                msg(true, "a x c", (0.0, 1.0), 3.0),
            ],
            closed: true,
        }];
        // 3 flickers over a 3-word reference.
        assert_eq!(flicker_rate(&blocks, 3), Some(1.0));
        assert_eq!(flicker_rate(&blocks, 0), None);
        // A stable-only log has no consecutive pairs at all.
        let stable_only = split_blocks(&[msg(true, "a", (0.0, 1.0), 1.0), msg(true, "b", (1.0, 2.0), 2.0)]);
        assert_eq!(flicker_rate(&stable_only, 2), Some(0.0));
    }
}
