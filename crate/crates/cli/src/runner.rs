//! Single runs: priming, training, evaluation and artifact emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use p2s_core::grpo::{evaluate, prime_format, TrainEvent, Trainer};
use p2s_core::policy::NeuralPolicy;
use p2s_core::task::{generate_split, write_tasks, TaskSplit};
use p2s_core::vocab::Vocab;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::CliError;

/// Appends tagged JSON records to a metrics stream.
pub struct MetricsWriter {
    out: BufWriter<File>,
    run_id: String,
}

impl MetricsWriter {
    pub fn create(path: &Path, run_id: &str) -> Result<Self, CliError> {
        Ok(Self { out: BufWriter::new(File::create(path)?), run_id: run_id.to_string() })
    }

    /// Writes `payload` (an object) with `type` and `run_id` fields added.
    pub fn record<T: Serialize>(&mut self, kind: &str, payload: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(payload).map_err(|e| CliError::Runtime(e.to_string()))?;
        let obj = match v.as_object_mut() {
            Some(o) => o,
            None => return Err(CliError::Runtime(format!("{kind} record is not an object"))),
        };
        obj.insert("type".into(), json!(kind));
        obj.insert("run_id".into(), json!(self.run_id));
        serde_json::to_writer(&mut self.out, &v).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Exact match on the held-out split, sampled and greedy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    /// Mean over `eval.samples` sampled responses per question.
    pub exact_match: f64,
    pub exact_match_greedy: f64,
    pub mean_f1: f64,
    pub format_rate: f64,
}

pub fn held_out(policy: &NeuralPolicy, split: &TaskSplit, config: &RunConfig) -> Result<HeldOut, CliError> {
    let e = config.eval;
    let (mut em, mut f1, mut fmt) = (0.0, 0.0, 0.0);
    for i in 0..e.samples {
        let seed = 0x5eed_0000 + i as u64;
        let r = evaluate(policy, &split.test, e.temperature, e.max_len, seed)?;
        em += r.exact_match;
        f1 += r.mean_f1;
        fmt += r.format_rate;
    }
    let n = e.samples as f64;
    let greedy = evaluate(policy, &split.test, 0.0, e.max_len, 0)?;
    Ok(HeldOut { exact_match: em / n, exact_match_greedy: greedy.exact_match, mean_f1: f1 / n, format_rate: fmt / n })
}

/// Task split and primed starting policy shared by every run with one seed.
pub struct Prepared {
    pub vocab: Vocab,
    pub split: TaskSplit,
    pub policy: NeuralPolicy,
    pub priming_loss: f64,
    pub priming_secs: f64,
}

/// Generates the split and primes a fresh policy. `config` must be resolved.
pub fn prepare(config: &RunConfig) -> Result<Prepared, CliError> {
    let vocab = config.task.vocab()?;
    let split = generate_split(&config.task, config.test_count)?;
    let mut policy = NeuralPolicy::new(vocab.clone(), config.policy)?;
    let t = Instant::now();
    let report = prime_format(&mut policy, &split.train, &config.priming)?;
    Ok(Prepared { vocab, split, policy, priming_loss: report.final_loss, priming_secs: t.elapsed().as_secs_f64() })
}

pub fn write_split(dir: &Path, split: &TaskSplit, vocab: &Vocab) -> Result<(), CliError> {
    write_tasks(BufWriter::new(File::create(dir.join("tasks-train.jsonl"))?), &split.train, vocab)?;
    write_tasks(BufWriter::new(File::create(dir.join("tasks-test.jsonl"))?), &split.test, vocab)?;
    Ok(())
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub method: String,
    pub seed: u64,
    pub ablations: Vec<String>,
    /// `ok` or `aborted`.
    pub status: String,
    pub error: Option<String>,
    pub steps_completed: usize,
    pub initial: HeldOut,
    pub final_eval: Option<HeldOut>,
    pub priming_loss: f64,
    pub sampling_passes: u64,
    pub scoring_passes: u64,
    pub wall_secs: f64,
    pub metrics_path: PathBuf,
    /// The fully resolved configuration the run executed.
    pub config: Value,
}

/// Trains from `prepared` under `config` (resolved) and writes the run's
/// artifacts below `root/<run_id>`. Aborted runs still leave their metrics,
/// checkpoint and summary; the error is returned afterwards.
pub fn execute(config: &RunConfig, prepared: &Prepared, root: &Path) -> Result<RunSummary, CliError> {
    let start = Instant::now();
    let run_id = config.run_id();
    let dir = root.join(&run_id);
    std::fs::create_dir_all(&dir)?;
    let metrics_path = dir.join("metrics.jsonl");
    let mut w = MetricsWriter::create(&metrics_path, &run_id)?;
    let seed = config.train.seed;
    let ablations: Vec<String> = config.ablations.tags().into_iter().map(String::from).collect();
    w.record(
        "run",
        &json!({
            "method": config.mode.name(),
            "seed": seed,
            "ablations": ablations,
            "train_tasks": prepared.split.train.len(),
            "test_tasks": prepared.split.test.len(),
            "num_params": prepared.policy.num_params(),
            "priming_loss": prepared.priming_loss,
        }),
    )?;

    let initial = held_out(&prepared.policy, &prepared.split, config)?;
    w.record("eval", &json!({ "phase": "initial", "step": 0, "held_out": initial }))?;

    let mut summary = RunSummary {
        run_id: run_id.clone(),
        method: config.mode.name().to_string(),
        seed,
        ablations,
        status: "ok".into(),
        error: None,
        steps_completed: 0,
        initial,
        final_eval: None,
        priming_loss: prepared.priming_loss,
        sampling_passes: 0,
        scoring_passes: 0,
        wall_secs: 0.0,
        metrics_path: metrics_path.clone(),
        config: serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?,
    };

    let mut trainer = Trainer::new(prepared.policy.fork(), prepared.split.train.clone(), config.setup())?;
    let mut outcome: Result<(), CliError> = Ok(());
    while !trainer.is_done() {
        let mut write_err = None;
        let mut sink = |e: TrainEvent<'_>| -> p2s_core::Result<()> {
            let r = match e {
                TrainEvent::Step(m) => w.record("step", m),
                TrainEvent::Gold(g) => w.record("gold", g),
                TrainEvent::Group(b) if config.log_groups => w.record("trajectory", b),
                TrainEvent::Group(_) => Ok(()),
            };
            if let Err(e) = r {
                write_err = Some(e.to_string());
                return Err(p2s_core::P2sError::Io(std::io::Error::other("metrics stream write failed")));
            }
            Ok(())
        };
        match trainer.step(&mut sink) {
            Ok(m) => {
                summary.steps_completed = m.step + 1;
                summary.sampling_passes += m.sampling_passes;
                summary.scoring_passes += m.scoring_passes;
            }
            Err(e) => {
                let message = write_err.unwrap_or_else(|| e.to_string());
                outcome = Err(CliError::Runtime(message));
                break;
            }
        }
    }

    if let Err(CliError::Runtime(message)) = &outcome {
        summary.status = "aborted".into();
        summary.error = Some(message.clone());
        // The stream itself may be what failed; the summary still records the error.
        let _ = w.record("error", &json!({ "step": trainer.current_step(), "message": message }));
    } else {
        let fin = held_out(trainer.policy(), &prepared.split, config)?;
        w.record("eval", &json!({ "phase": "final", "step": summary.steps_completed, "held_out": fin }))?;
        summary.final_eval = Some(fin);
    }
    trainer.policy().save(&dir.join("checkpoint.json"))?;
    summary.wall_secs = start.elapsed().as_secs_f64();
    let _ = w.record("summary", &summary);
    let _ = w.flush();
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    outcome.map(|_| summary)
}
