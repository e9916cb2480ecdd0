// Temporary parameter scan for the comparison scenario. Run with
// `cargo test --test scan -- --ignored --nocapture`.

use stpipe::harness::config::{ExperimentConfig, PipelinePath};
use stpipe::harness::corpus::CorpusParams;
use stpipe::harness::report::run_experiment;
use stpipe::types::StabilityMode;

fn cfg(
    mode: StabilityMode,
    path: PipelinePath,
    c: f64,
    s: usize,
    per_unit: f64,
    max_input: f64,
    tok_s: f64,
    tps: usize,
    horizon: f64,
) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        mode,
        path,
        chunk_size_s: c,
        workers: 1,
        parallel_sessions: s,
        seed: 17,
        corpus: CorpusParams {
            utterances: 4,
            tokens_per_sentence: tps,
            token_seconds: tok_s,
            token_jitter_s: 0.0,
            gap_frames: 25,
            lead_in_frames: 10,
        },
        ..ExperimentConfig::default()
    };
    cfg.la2.max_input_s = max_input;
    cfg.backend.cost.per_unit_s = per_unit;
    cfg.noise.horizon_s = horizon;
    cfg.noise.perturb_period = 1;
    cfg
}

#[test]
#[ignore]
fn scan_comparison_params() {
    for &s in &[1usize, 2] {
        for &per_unit in &[0.05, 0.1, 0.15] {
            for &max_input in &[4.0, 6.0] {
                for &tok_s in &[0.24f64, 0.33, 0.45] {
                    for &tps in &[8usize, 12, 16] {
                        let horizon = (tok_s - 0.05).min(0.45);
                        let mut ok = true;
                        let mut detail = String::new();
                        for &c in &[0.5, 1.0] {
                            if max_input < 2.0 * c {
                                ok = false;
                                continue;
                            }
                            let mut lat = std::collections::BTreeMap::new();
                            for mode in [StabilityMode::Fixed, StabilityMode::Revision] {
                                for path in [PipelinePath::Cascaded, PipelinePath::E2e] {
                                    let e = cfg(mode, path, c, s, per_unit, max_input, tok_s, tps, horizon);
                                    match run_experiment(&e) {
                                        Ok(run) => {
                                            lat.insert(
                                                (format!("{mode}"), format!("{path}")),
                                                (
                                                    run.report.aggregate.latency_s.unwrap_or(f64::NAN),
                                                    run.report.aggregate.bleu.unwrap_or(f64::NAN),
                                                    run.report.aggregate.flicker_rate.unwrap_or(f64::NAN),
                                                ),
                                            );
                                        }
                                        Err(e) => {
                                            detail += &format!(" err:{e}");
                                            ok = false;
                                        }
                                    }
                                }
                            }
                            if !ok {
                                break;
                            }
                            let fr = lat[&("fixed".to_string(), "cascaded".to_string())];
                            let rr = lat[&("revision".to_string(), "cascaded".to_string())];
                            let fe = lat[&("fixed".to_string(), "e2e".to_string())];
                            let re = lat[&("revision".to_string(), "e2e".to_string())];
                            // criterion 7 on cascaded: rev latency >= fixed, rev bleu >= fixed, flickers
                            let c7 = rr.0 >= fr.0 && rr.1 >= fr.1 && rr.2 > 0.0 && fr.2 == 0.0;
                            // criterion 8: e2e < cascaded in revision mode
                            let c8 = re.0 < rr.0;
                            detail += &format!(
                                " C={c}: fixC={:.2} revC={:.2} fixE={:.2} revE={:.2} bleu(fc={:.0},rc={:.0}) c7={} c8={}",
                                fr.0, rr.0, fe.0, re.0, fr.1, rr.1, c7, c8
                            );
                            ok = ok && c7 && c8;
                        }
                        println!(
                            "s={s} pu={per_unit} max={max_input} tok={tok_s} tps={tps} => {} |{detail}",
                            if ok { "PASS" } else { "fail" }
                        );
                    }
                }
            }
        }
    }
}

#[test]
#[ignore]
fn reproduce_truncation_mismatch() {
    use stpipe::backend::{mock_asr_decode, NoiseModel};
    use stpipe::speech::{La2Config, LocalAgreement};
    use stpipe::types::{AudioFrame, StabilityMode};

    let cfg = La2Config { chunk_size_s: 0.5, mode: StabilityMode::Revision, max_input_s: 4.0 };
    let noise = NoiseModel { horizon_s: 0.4, perturb_period: 1, seed: 7 };
    let mut la = LocalAgreement::new();
    let mut frames = Vec::new();
    for t in 1..=16 {
        for _ in 0..15 {
            frames.push(AudioFrame::speech(format!("a{t}")));
        }
    }
    let mut i = 0usize;
    while i < frames.len() {
        let step = 11.min(frames.len() - i);
        la.ingest(&frames[i..i + step]);
        i += step;
        let res = la.la2_step(&cfg, &mut |plan| {
            mock_asr_decode(&plan.frames, &plan.forced_prefix, &noise, plan.segment_ended).map_err(|e| {
                eprintln!(
                    "frame {i}: purpose {:?}, offset {:.4}, forced {:?}, first labels {:?}",
                    plan.purpose,
                    plan.audio_offset_s,
                    plan.forced_prefix.iter().take(3).collect::<Vec<_>>(),
                    plan.frames.iter().filter_map(|f| f.label.clone()).take(3).collect::<Vec<_>>()
                );
                stpipe::speech::MiddlewareError::Contract(e.to_string())
            })
        });
        if let Err(e) = res {
            eprintln!("failed at frame {i}: {e}");
            return;
        }
    }
    eprintln!("no failure");
}
