//! The seeds x methods comparison matrix and its aggregate tables.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use p2s_core::grpo::{Ablations, Mode};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::runner::{execute, prepare, write_split, Prepared, RunSummary};

/// One cell of the run matrix before its seed is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub mode: Mode,
    pub ablations: Ablations,
}

impl Variant {
    pub fn label(&self) -> String {
        let mut s = self.mode.name().to_string();
        for t in self.ablations.tags() {
            s.push_str("-no-");
            s.push_str(t);
        }
        s
    }
}

/// Plain methods first, then the ablated P2S variants.
pub fn variants(config: &RunConfig) -> Result<Vec<Variant>, CliError> {
    let mut out: Vec<Variant> =
        config.compare.modes.iter().map(|&mode| Variant { mode, ablations: config.ablations }).collect();
    for tags in &config.compare.ablations {
        let mut ablations = config.ablations;
        for t in tags {
            ablations.disable(t).map_err(|e| CliError::Config(vec![format!("compare.ablations: {e}")]))?;
        }
        let v = Variant { mode: Mode::P2s, ablations };
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Mean and population standard deviation of a metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

fn aggregate(xs: &[f64]) -> Aggregate {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Aggregate { mean, std: var.sqrt() }
}

#[derive(Debug, Clone)]
pub struct MethodRow {
    pub label: String,
    pub runs: usize,
    pub initial: Aggregate,
    pub exact_match: Aggregate,
    pub exact_match_greedy: Aggregate,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunSummary>,
    pub rows: Vec<MethodRow>,
}

impl Comparison {
    pub fn row(&self, label: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

fn label_of(s: &RunSummary) -> String {
    let mut l = s.method.clone();
    for t in &s.ablations {
        l.push_str("-no-");
        l.push_str(t);
    }
    l
}

fn summarize(runs: Vec<RunSummary>, order: &[Variant]) -> Comparison {
    let rows = order
        .iter()
        .map(|v| {
            let label = v.label();
            let mine: Vec<&RunSummary> = runs.iter().filter(|s| label_of(s) == label).collect();
            let pick = |f: &dyn Fn(&RunSummary) -> f64| aggregate(&mine.iter().map(|s| f(s)).collect::<Vec<_>>());
            MethodRow {
                label,
                runs: mine.len(),
                initial: pick(&|s| s.initial.exact_match),
                exact_match: pick(&|s| s.final_eval.map_or(f64::NAN, |e| e.exact_match)),
                exact_match_greedy: pick(&|s| s.final_eval.map_or(f64::NAN, |e| e.exact_match_greedy)),
            }
        })
        .collect();
    Comparison { runs, rows }
}

pub fn write_tables(dir: &Path, cmp: &Comparison) -> Result<(), CliError> {
    let mut csv = String::from("run_id,method,seed,initial_exact_match,exact_match,exact_match_greedy,wall_secs\n");
    for s in &cmp.runs {
        let f = s.final_eval;
        writeln!(
            csv,
            "{},{},{},{},{},{},{:.3}",
            s.run_id,
            label_of(s),
            s.seed,
            s.initial.exact_match,
            f.map_or(String::new(), |e| e.exact_match.to_string()),
            f.map_or(String::new(), |e| e.exact_match_greedy.to_string()),
            s.wall_secs
        )
        .expect("write to string");
    }
    std::fs::write(dir.join("comparison.csv"), csv)?;

    let mut md = String::from(
        "| method | runs | initial EM | held-out EM (sampled) | held-out EM (greedy) |\n|---|---|---|---|---|\n",
    );
    for r in &cmp.rows {
        writeln!(
            md,
            "| {} | {} | {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} |",
            r.label, r.runs, r.initial.mean, r.exact_match.mean, r.exact_match.std, r.exact_match_greedy.mean,
            r.exact_match_greedy.std
        )
        .expect("write to string");
    }
    std::fs::write(dir.join("comparison.md"), md)?;
    Ok(())
}

/// Runs `jobs` on up to `workers` threads, preserving input order in the output.
fn parallel<T: Send, R: Send>(jobs: Vec<T>, workers: usize, f: impl Fn(T) -> R + Sync) -> Vec<R> {
    let n = jobs.len();
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>());
    let results = Mutex::new((0..n).map(|_| None).collect::<Vec<Option<R>>>());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop();
                let Some((i, job)) = next else { break };
                let r = f(job);
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("results lock").into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Primes once per seed, then trains every variant from that seed's primed
/// policy. All artifacts land below `out`.
pub fn run_matrix(config: &RunConfig, out: &Path, workers: usize) -> Result<Comparison, CliError> {
    let order = variants(config)?;
    std::fs::create_dir_all(out)?;
    let seeded: Vec<RunConfig> =
        config.compare.seeds.iter().map(|&s| RunConfig { seed: Some(s), ..config.clone() }.resolved()).collect();
    let prepared: Vec<Result<Prepared, CliError>> = parallel(seeded.iter().collect(), workers, prepare);
    let prepared: Vec<Prepared> = prepared.into_iter().collect::<Result<_, _>>()?;
    write_split(out, &prepared[0].split, &prepared[0].vocab)?;

    let mut jobs = Vec::new();
    for (cfg, prep) in seeded.iter().zip(&prepared) {
        for v in &order {
            let mut c = cfg.clone();
            c.mode = v.mode;
            c.ablations = v.ablations;
            jobs.push((c, prep));
        }
    }
    let results = parallel(jobs, workers, |(c, prep)| execute(&c, prep, out));
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => failures.push(e.to_string()),
        }
    }
    let cmp = summarize(runs, &order);
    write_tables(out, &cmp)?;
    if failures.is_empty() {
        Ok(cmp)
    } else {
        Err(CliError::Runtime(failures.join("; ")))
    }
}
