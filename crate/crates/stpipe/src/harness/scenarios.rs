//! Canned experiment scenarios behind the trend comparisons: the chunk-size
//! sweep, the fixed-vs-revision and cascaded-vs-end-to-end comparison suite,
//! and the worker/session load grid.

use crate::harness::config::{ExperimentConfig, PipelinePath};
use crate::harness::corpus::CorpusParams;
use crate::types::StabilityMode;

pub const STANDARD_SEED: u64 = 17;

fn standard_corpus() -> CorpusParams {
    CorpusParams {
        utterances: 5,
        tokens_per_sentence: 8,
        token_seconds: 0.45,
        token_jitter_s: 0.1,
        gap_frames: 25,
        lead_in_frames: 10,
    }
}

/// Quality-vs-latency trade-off: fixed mode, one session, one worker, chunk
/// sizes swept over both pipeline shapes. Utterances run long enough that
/// even the largest chunk size sees several boundaries per segment, and the
/// noise horizon sits between the smallest and the larger chunk sizes so
/// short chunks commit some perturbed tokens (worse WER) while longer chunks
/// do not.
pub fn chunk_size_suite() -> Vec<ExperimentConfig> {
    let mut configs = Vec::new();
    for path in [PipelinePath::Cascaded, PipelinePath::E2e] {
        for chunk in [0.5, 1.0, 2.0, 3.0] {
            let mut cfg = ExperimentConfig {
                mode: StabilityMode::Fixed,
                path,
                chunk_size_s: chunk,
                workers: 1,
                parallel_sessions: 1,
                seed: STANDARD_SEED,
                corpus: CorpusParams {
                    utterances: 4,
                    tokens_per_sentence: 20,
                    token_seconds: 0.45,
                    token_jitter_s: 0.05,
                    ..standard_corpus()
                },
                ..ExperimentConfig::default()
            };
            // Below C = 0.5 plus the longest word, above every larger chunk:
            // only the smallest chunk size can commit perturbed tokens.
            cfg.noise.horizon_s = 0.45;
            cfg.noise.perturb_period = 3;
            configs.push(cfg);
        }
    }
    configs
}

/// The standard comparison suite: mode x path x chunk size, eight
/// configurations under mild concurrent load (three sessions sharing one
/// middleware worker and one backend replica), which is where revision
/// mode's re-translation overhead shows up as latency.
pub fn comparison_suite() -> Vec<ExperimentConfig> {
    let mut configs = Vec::new();
    for mode in [StabilityMode::Fixed, StabilityMode::Revision] {
        for path in [PipelinePath::Cascaded, PipelinePath::E2e] {
            for chunk in [0.5, 1.0] {
                let mut cfg = ExperimentConfig {
                    mode,
                    path,
                    chunk_size_s: chunk,
                    workers: 1,
                    parallel_sessions: 3,
                    seed: STANDARD_SEED,
                    corpus: CorpusParams {
                        // Short words keep every chunk size comfortably above
                        // horizon-plus-word, so neither mode ever commits a
                        // perturbed token and the comparison isolates timing.
                        token_seconds: 0.24,
                        token_jitter_s: 0.0,
                        tokens_per_sentence: 12,
                        ..standard_corpus()
                    },
                    ..ExperimentConfig::default()
                };
                cfg.noise.horizon_s = 0.2;
                cfg.noise.perturb_period = 1;
                configs.push(cfg);
            }
        }
    }
    configs
}

/// Load grid: end-to-end path in revision mode at a fixed chunk size,
/// scaling middleware workers and parallel sessions against one shared
/// backend replica.
pub fn load_grid() -> Vec<ExperimentConfig> {
    let mut configs = Vec::new();
    for workers in [1usize, 5] {
        for sessions in [1usize, 2, 5] {
            let mut cfg = ExperimentConfig {
                mode: StabilityMode::Revision,
                path: PipelinePath::E2e,
                chunk_size_s: 2.0,
                workers,
                parallel_sessions: sessions,
                seed: STANDARD_SEED,
                corpus: standard_corpus(),
                ..ExperimentConfig::default()
            };
            cfg.noise.perturb_period = 2;
            // A moderate batching saving keeps per-request cost strictly
            // growing with batch size, so higher load always thins the
            // per-session interim cadence.
            cfg.backend.cost.batch_discount = 0.7;
            configs.push(cfg);
        }
    }
    configs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_have_the_documented_shapes() {
        assert_eq!(chunk_size_suite().len(), 8);
        assert_eq!(comparison_suite().len(), 8);
        assert_eq!(load_grid().len(), 6);
        for cfg in chunk_size_suite().iter().chain(&comparison_suite()).chain(&load_grid()) {
            cfg.validate().unwrap();
        }
    }
}
