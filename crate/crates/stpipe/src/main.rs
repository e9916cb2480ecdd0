//! Command-line front end: corpus generation, single experiments, sweeps,
//! log evaluation, and a line-protocol gateway on stdin/stdout.

use clap::{Args, Parser, Subcommand};
use stpipe::eval::{evaluate, read_log, write_log};
use stpipe::harness::config::{ExperimentConfig, PipelinePath};
use stpipe::harness::corpus::{generate_corpus, Corpus, CorpusParams};
use stpipe::harness::report::{csv_rows, run_experiment, sweep, CSV_HEADER};
use stpipe::harness::scenarios;
use stpipe::types::StabilityMode;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "stpipe", about = "Streaming speech-translation pipeline simulator and evaluator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum ModeArg {
    Fixed,
    Revision,
}

impl From<ModeArg> for StabilityMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => StabilityMode::Fixed,
            ModeArg::Revision => StabilityMode::Revision,
        }
    }
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
enum PathArg {
    Cascaded,
    E2e,
}

impl From<PathArg> for PipelinePath {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Cascaded => PipelinePath::Cascaded,
            PathArg::E2e => PipelinePath::E2e,
        }
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML config file; CLI flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    path: Option<PathArg>,
    #[arg(long)]
    chunk_size_s: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn build(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let content = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                ExperimentConfig::from_toml(&content)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(mode) = self.mode {
            cfg.mode = mode.into();
        }
        if let Some(path) = self.path {
            cfg.path = path.into();
        }
        if let Some(c) = self.chunk_size_s {
            cfg.chunk_size_s = c;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(s) = self.sessions {
            cfg.parallel_sessions = s;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it as JSON.
    GenCorpus {
        #[arg(long, default_value_t = 17)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        #[arg(long, default_value_t = 5)]
        utterances: usize,
        #[arg(long, default_value_t = 8)]
        tokens_per_sentence: usize,
        #[arg(long, default_value_t = 0.45)]
        token_seconds: f64,
        #[arg(long, default_value_t = 25)]
        gap_frames: usize,
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Run one experiment and write report, logs and CSV to a directory.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, short = 'o', default_value = "results")]
        out_dir: PathBuf,
    },
    /// Run a matrix of experiments and write one combined CSV.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Built-in scenario instead of a config grid: chunk-size,
        /// comparison, or load-grid.
        #[arg(long)]
        scenario: Option<String>,
        /// Grid axes as comma-separated lists.
        #[arg(long, value_delimiter = ',')]
        chunk_sizes: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        modes: Vec<ModeArg>,
        #[arg(long, value_delimiter = ',')]
        paths: Vec<PathArg>,
        #[arg(long, value_delimiter = ',')]
        workers_grid: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        sessions_grid: Vec<usize>,
        #[arg(long, short = 'o', default_value = "results")]
        out_dir: PathBuf,
    },
    /// Evaluate a session log file against corpus references.
    EvalLog {
        /// JSON-lines log (fields: seq, stable, t_s, t_e, t_r, text).
        #[arg(long)]
        log: PathBuf,
        /// Corpus JSON produced by gen-corpus.
        #[arg(long)]
        refs: PathBuf,
        #[arg(long, default_value_t = 0)]
        session: usize,
        /// Which reference to score against: translation or transcript.
        #[arg(long, default_value = "translation")]
        stream: String,
        #[arg(long, default_value_t = 0.3)]
        word_duration_s: f64,
    },
    /// Serve the line-delimited gateway protocol on stdin/stdout (real-time
    /// demonstration mode; simulation is the tested path).
    Serve {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() {
    if let Err(message) = run(Cli::parse()) {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::GenCorpus { seed, sessions, utterances, tokens_per_sentence, token_seconds, gap_frames, out } => {
            let params = CorpusParams {
                utterances,
                tokens_per_sentence,
                token_seconds,
                gap_frames,
                ..CorpusParams::default()
            };
            params.validate()?;
            let corpus = generate_corpus(seed, sessions, &params);
            write_json(&out, &corpus)?;
            println!("wrote {} sessions to {}", corpus.sessions.len(), out.display());
            Ok(())
        }
        Command::Run { config, out_dir } => {
            let cfg = config.build()?;
            let run = run_experiment(&cfg).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            write_json(&out_dir.join("run.json"), &run.report)?;
            write_json(&out_dir.join("corpus.json"), &run.corpus)?;
            let mut csv = String::from(CSV_HEADER);
            csv.push('\n');
            for row in csv_rows(&run.report) {
                csv.push_str(&row);
                csv.push('\n');
            }
            fs::write(out_dir.join("metrics.csv"), csv).map_err(|e| e.to_string())?;
            let logs_dir = out_dir.join("logs");
            fs::create_dir_all(&logs_dir).map_err(|e| e.to_string())?;
            for (session, streams) in &run.logs {
                for (origin, records) in streams {
                    let path = logs_dir.join(format!("session-{session}-{origin}.jsonl"));
                    fs::write(&path, write_log(records)).map_err(|e| e.to_string())?;
                }
            }
            for session in &run.report.sessions {
                println!(
                    "session {}: B={} W={} L={} F={}",
                    session.session,
                    fmt(session.primary.bleu),
                    fmt(session.primary.wer),
                    fmt(session.primary.latency_s),
                    fmt(session.primary.flicker_rate),
                );
            }
            println!("report written to {}", out_dir.display());
            Ok(())
        }
        Command::Sweep { config, scenario, chunk_sizes, modes, paths, workers_grid, sessions_grid, out_dir } => {
            let configs = if let Some(name) = scenario {
                match name.as_str() {
                    "chunk-size" => scenarios::chunk_size_suite(),
                    "comparison" => scenarios::comparison_suite(),
                    "load-grid" => scenarios::load_grid(),
                    other => return Err(format!("unknown scenario `{other}`")),
                }
            } else {
                let base = config.build()?;
                let chunk_sizes = if chunk_sizes.is_empty() { vec![base.chunk_size_s] } else { chunk_sizes };
                let modes: Vec<StabilityMode> = if modes.is_empty() {
                    vec![base.mode]
                } else {
                    modes.into_iter().map(Into::into).collect()
                };
                let paths: Vec<PipelinePath> = if paths.is_empty() {
                    vec![base.path]
                } else {
                    paths.into_iter().map(Into::into).collect()
                };
                let workers_grid = if workers_grid.is_empty() { vec![base.workers] } else { workers_grid };
                let sessions_grid = if sessions_grid.is_empty() { vec![base.parallel_sessions] } else { sessions_grid };
                let mut configs = Vec::new();
                for &mode in &modes {
                    for &path in &paths {
                        for &chunk in &chunk_sizes {
                            for &w in &workers_grid {
                                for &s in &sessions_grid {
                                    let mut cfg = base.clone();
                                    cfg.mode = mode;
                                    cfg.path = path;
                                    cfg.chunk_size_s = chunk;
                                    cfg.workers = w;
                                    cfg.parallel_sessions = s;
                                    configs.push(cfg);
                                }
                            }
                        }
                    }
                }
                configs
            };
            for cfg in &configs {
                cfg.validate()?;
            }
            let (reports, csv) = sweep(&configs).map_err(|e| e.to_string())?;
            fs::create_dir_all(&out_dir).map_err(|e| e.to_string())?;
            fs::write(out_dir.join("sweep.csv"), &csv).map_err(|e| e.to_string())?;
            write_json(&out_dir.join("sweep.json"), &reports)?;
            print!("{csv}");
            Ok(())
        }
        Command::EvalLog { log, refs, session, stream, word_duration_s } => {
            let content = fs::read_to_string(&log).map_err(|e| format!("{}: {e}", log.display()))?;
            let records = read_log(&content).map_err(|e| e.to_string())?;
            let messages: Vec<_> = records.iter().map(|r| r.to_eval_message()).collect();
            let corpus: Corpus = {
                let content = fs::read_to_string(&refs).map_err(|e| format!("{}: {e}", refs.display()))?;
                serde_json::from_str(&content).map_err(|e| e.to_string())?
            };
            let script = corpus.sessions.get(session).ok_or(format!("no session {session} in corpus"))?;
            let reference = match stream.as_str() {
                "translation" => &script.translation,
                "transcript" => &script.transcript,
                other => return Err(format!("unknown stream `{other}`")),
            };
            let report = evaluate(&messages, reference, word_duration_s);
            println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?);
            Ok(())
        }
        Command::Serve { config } => serve(config.build()?),
    }
}

fn fmt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let content = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    fs::write(path, content).map_err(|e| format!("{}: {e}", path.display()))
}

/// Wall-clock gateway loop: records in, records out, one line each. Backend
/// compute is simulated by sleeping for the cost model's delay, so outputs
/// pace like a live deployment. Processing is synchronous per record.
fn serve(cfg: ExperimentConfig) -> Result<(), String> {
    use std::sync::Arc;
    use std::time::Instant;
    use stpipe::backend::{BackendRequest, RequestInput};
    use stpipe::broker::Broker;
    use stpipe::gateway::{Gateway, WireRecord};
    use stpipe::mediator::{input_topic, Mediator, RouteTarget};
    use stpipe::speech::SpeechSession;
    use stpipe::text::TextSession;
    use stpipe::types::{BackendKind, Message, Payload, SessionId};

    let broker = Arc::new(Broker::new());
    let mut workers = std::collections::BTreeMap::new();
    workers.insert("speech".to_string(), 1usize);
    workers.insert("text".to_string(), 1usize);
    let mediator = Arc::new(Mediator::new(Arc::clone(&broker), workers));
    let gateway = Gateway::new(Arc::clone(&mediator));
    let backend = cfg.backend_instance();

    let mut speech_sessions: std::collections::BTreeMap<SessionId, (SpeechSession, String, BackendKind, u64)> =
        Default::default();
    let mut text_sessions: std::collections::BTreeMap<SessionId, (TextSession, String, u64)> = Default::default();
    let started = Instant::now();
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();

    let emit = |records: Vec<WireRecord>, stdout: &mut std::io::Stdout| {
        for record in records {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(stdout, "{line}").ok();
        }
        stdout.flush().ok();
    };

    for line in stdin.lock().lines() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let now = started.elapsed().as_secs_f64();
        let responses = gateway.handle_record(&line, now);
        emit(responses, &mut stdout);

        // Synchronous pump: drain middleware work until quiescent, sleeping
        // out each backend call's simulated cost.
        loop {
            let mut progressed = false;
            // Speech component.
            let drained = broker.poll_pending(&input_topic("speech"), 0).unwrap_or_default();
            if !drained.is_empty() {
                progressed = true;
                let mut by_session: Vec<(SessionId, Vec<Message>)> = Vec::new();
                for m in drained {
                    match by_session.iter_mut().find(|(s, _)| *s == m.session) {
                        Some((_, v)) => v.push(m),
                        None => by_session.push((m.session, vec![m])),
                    }
                }
                for (session, group) in by_session {
                    let entry = speech_sessions.entry(session).or_insert_with(|| {
                        let (node, mode, kind) = mediator.speech_descriptor(session).expect("speech node");
                        let mut sc = cfg.speech_config();
                        sc.la2.mode = mode;
                        (SpeechSession::new(sc), node, kind, 0)
                    });
                    entry.0.ingest_pending(&group).map_err(|e| e.to_string())?;
                    while let Some(plan) = entry.0.next_plan() {
                        let request = BackendRequest {
                            kind: entry.2,
                            input: RequestInput::Audio {
                                frames: plan.plan.frames.clone(),
                                segment_ended: plan.plan.segment_ended,
                            },
                            forced_prefix: plan.plan.forced_prefix.clone(),
                            session,
                        };
                        let (responses, delay) = backend.process_batch(&[request]).map_err(|e| e.to_string())?;
                        std::thread::sleep(std::time::Duration::from_secs_f64(delay));
                        let now = started.elapsed().as_secs_f64();
                        let hyp = match &responses[0] {
                            stpipe::backend::BackendResponse::Timed(h) => h.clone(),
                            _ => unreachable!("audio request"),
                        };
                        let emissions = entry.0.apply_decode(&plan, &hyp).map_err(|e| e.to_string())?;
                        for e in emissions {
                            let message = Message {
                                session,
                                origin: entry.1.clone(),
                                seq: entry.3,
                                stable: e.stable,
                                t_start: e.t_start,
                                t_end: e.t_end,
                                t_recv: now,
                                payload: Payload::Text(e.tokens),
                            };
                            entry.3 += 1;
                            for (target, m) in mediator.route(&entry.1, message).map_err(|e| e.to_string())? {
                                if target == RouteTarget::Client {
                                    gateway.deliver(m, now);
                                }
                            }
                        }
                    }
                    if entry.0.ready_to_forward_end() {
                        entry.0.mark_end_forwarded();
                        let message = Message {
                            session,
                            origin: entry.1.clone(),
                            seq: entry.3,
                            stable: true,
                            t_start: now,
                            t_end: now,
                            t_recv: now,
                            payload: Payload::End,
                        };
                        entry.3 += 1;
                        for (target, m) in mediator.route(&entry.1, message).map_err(|e| e.to_string())? {
                            if target == RouteTarget::Client {
                                gateway.deliver(m, now);
                            }
                        }
                    }
                }
            }
            // Text component, same shape.
            if broker.topic_exists(&input_topic("text")) {
                let drained = broker.poll_pending(&input_topic("text"), 0).unwrap_or_default();
                if !drained.is_empty() {
                    progressed = true;
                    let mut by_session: Vec<(SessionId, Vec<Message>)> = Vec::new();
                    for m in drained {
                        match by_session.iter_mut().find(|(s, _)| *s == m.session) {
                            Some((_, v)) => v.push(m),
                            None => by_session.push((m.session, vec![m])),
                        }
                    }
                    for (session, group) in by_session {
                        let entry = text_sessions.entry(session).or_insert_with(|| {
                            let (node, mode) = mediator.text_descriptor(session).expect("text node");
                            let mut tc = cfg.text_config();
                            tc.mode = mode;
                            (TextSession::new(tc), node, 0)
                        });
                        entry.0.ingest_pending(&group).map_err(|e| e.to_string())?;
                        while let Some(plan) = entry.0.next_plan() {
                            let request = BackendRequest {
                                kind: BackendKind::Mt,
                                input: RequestInput::Text { tokens: plan.source.clone() },
                                forced_prefix: plan.forced_prefix.clone(),
                                session,
                            };
                            let (responses, delay) = backend.process_batch(&[request]).map_err(|e| e.to_string())?;
                            std::thread::sleep(std::time::Duration::from_secs_f64(delay));
                            let now = started.elapsed().as_secs_f64();
                            let tokens = match &responses[0] {
                                stpipe::backend::BackendResponse::Plain(t) => t.clone(),
                                _ => unreachable!("text request"),
                            };
                            let emissions = entry.0.apply_translation(&plan, &tokens).map_err(|e| e.to_string())?;
                            for e in emissions {
                                let message = Message {
                                    session,
                                    origin: entry.1.clone(),
                                    seq: entry.2,
                                    stable: e.stable,
                                    t_start: e.t_start,
                                    t_end: e.t_end,
                                    t_recv: now,
                                    payload: Payload::Text(e.tokens),
                                };
                                entry.2 += 1;
                                for (target, m) in mediator.route(&entry.1, message).map_err(|e| e.to_string())? {
                                    if target == RouteTarget::Client {
                                        gateway.deliver(m, now);
                                    }
                                }
                            }
                        }
                        if entry.0.ready_to_forward_end() {
                            entry.0.mark_end_forwarded();
                            let message = Message {
                                session,
                                origin: entry.1.clone(),
                                seq: entry.2,
                                stable: true,
                                t_start: now,
                                t_end: now,
                                t_recv: now,
                                payload: Payload::End,
                            };
                            entry.2 += 1;
                            for (target, m) in mediator.route(&entry.1, message).map_err(|e| e.to_string())? {
                                if target == RouteTarget::Client {
                                    gateway.deliver(m, now);
                                }
                            }
                        }
                    }
                }
            }
            if !progressed {
                break;
            }
        }

        // Push whatever reached the client.
        let sessions: Vec<SessionId> = speech_sessions.keys().copied().collect();
        for session in sessions {
            emit(gateway.poll_wire(session), &mut stdout);
        }
    }
    Ok(())
}
