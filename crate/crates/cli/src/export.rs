//! Metrics streams to long-format CSV tables.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::CliError;

/// Exported quantities: output file stem and the step-record field it reads.
pub const CURVES: [(&str, &str); 4] = [
    ("reward", "mean_reward"),
    ("completion_length", "mean_completion_len"),
    ("pfr", "mean_pfr"),
    ("success_rate", "success_rate"),
];

pub const HEADER: &str = "run_id,method,seed,step,value";

/// One CSV body (without header) per entry of [`CURVES`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Tables {
    pub rows: HashMap<&'static str, Vec<String>>,
}

impl Tables {
    pub fn rows(&self, name: &str) -> &[String] {
        self.rows.get(name).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn bad(path: &Path, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}:{line}: {msg}", path.display()))
}

/// Appends the step rows of one stream to `tables`.
pub fn read_stream(path: &Path, tables: &mut Tables) -> Result<(), CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    // Method and seed come from each run's header record.
    let mut runs: HashMap<String, (String, String)> = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| bad(path, n, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value = serde_json::from_str(&line).map_err(|e| bad(path, n, e))?;
        let kind = rec.get("type").and_then(Value::as_str).ok_or_else(|| bad(path, n, "record has no type"))?;
        let run_id =
            rec.get("run_id").and_then(Value::as_str).ok_or_else(|| bad(path, n, "record has no run_id"))?.to_string();
        match kind {
            "run" => {
                let method = rec.get("method").and_then(Value::as_str).ok_or_else(|| bad(path, n, "run has no method"))?;
                let mut label = method.to_string();
                for t in rec.get("ablations").and_then(Value::as_array).into_iter().flatten() {
                    label.push_str("-no-");
                    label.push_str(t.as_str().ok_or_else(|| bad(path, n, "ablation tag is not a string"))?);
                }
                let seed = rec.get("seed").and_then(Value::as_u64).ok_or_else(|| bad(path, n, "run has no seed"))?;
                runs.insert(run_id, (label, seed.to_string()));
            }
            "step" => {
                let (method, seed) =
                    runs.get(&run_id).ok_or_else(|| bad(path, n, format!("step before run record for {run_id}")))?;
                let step = rec.get("step").and_then(Value::as_u64).ok_or_else(|| bad(path, n, "step has no step index"))?;
                for (name, field) in CURVES {
                    let value = match rec.get(field) {
                        Some(Value::Null) => String::new(),
                        Some(v) => v.as_f64().ok_or_else(|| bad(path, n, format!("{field} is not a number")))?.to_string(),
                        None => return Err(bad(path, n, format!("step record lacks {field}"))),
                    };
                    tables.rows.entry(name).or_default().push(format!("{run_id},{method},{seed},{step},{value}"));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Metrics streams under `path`: the file itself, or every `metrics.jsonl` below a directory.
pub fn find_streams(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let entries = std::fs::read_dir(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut entries: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(find_streams(&p)?);
        } else if p.file_name().is_some_and(|n| n == "metrics.jsonl") {
            out.push(p);
        }
    }
    Ok(out)
}

/// Reads every stream under `inputs` and writes one CSV per curve into `out`.
pub fn export(inputs: &[PathBuf], out: &Path) -> Result<Tables, CliError> {
    let mut tables = Tables::default();
    for input in inputs {
        for stream in find_streams(input)? {
            read_stream(&stream, &mut tables)?;
        }
    }
    std::fs::create_dir_all(out)?;
    for (name, _) in CURVES {
        let mut body = String::from(HEADER);
        body.push('\n');
        for row in tables.rows(name) {
            body.push_str(row);
            body.push('\n');
        }
        std::fs::write(out.join(format!("{name}.csv")), body)?;
    }
    Ok(tables)
}
