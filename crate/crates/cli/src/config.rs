//! Run configuration: one TOML file, layered over built-in defaults.

use std::path::{Path, PathBuf};

use p2s_core::goldcot::SynthesisConfig;
use p2s_core::grpo::{Ablations, Mode, PrimingConfig, TrainConfig, TrainSetup};
use p2s_core::policy::NeuralConfig;
use p2s_core::reward::PfrConfig;
use p2s_core::task::{Op, TaskGenConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Held-out evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Sampled responses per held-out question.
    pub samples: usize,
    pub temperature: f64,
    pub max_len: usize,
}

/// The run matrix of the `compare` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    pub modes: Vec<Mode>,
    /// Extra P2S variants, each a list of ablation tags.
    pub ablations: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Applied to the policy, priming, synthesis and trainer seeds when set.
    /// The task split keeps its own seed so every run sees the same problems.
    pub seed: Option<u64>,
    pub mode: Mode,
    pub out_dir: PathBuf,
    /// Held-out questions drawn on top of `task.count` training questions.
    pub test_count: usize,
    /// Record every rollout group in the metrics stream.
    pub log_groups: bool,
    pub task: TaskGenConfig,
    pub policy: NeuralConfig,
    pub priming: PrimingConfig,
    pub train: TrainConfig,
    pub pfr: PfrConfig,
    pub synthesis: SynthesisConfig,
    pub ablations: Ablations,
    pub eval: EvalConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    /// The sparse chained-addition setting used by the comparison runs.
    fn default() -> Self {
        Self {
            seed: None,
            mode: Mode::P2s,
            out_dir: PathBuf::from("runs"),
            test_count: 200,
            log_groups: false,
            task: TaskGenConfig {
                difficulty: (3, 3),
                operand: (1, 3),
                modulus: 24,
                ops: vec![Op::Add],
                count: 150,
                seed: 42,
            },
            policy: NeuralConfig { embed_dim: 16, window: 16, hidden: 128, init_scale: 0.1, seed: 1 },
            priming: PrimingConfig { steps: 4000, step_correct: 0.12, ..PrimingConfig::default() },
            train: TrainConfig::default(),
            pfr: PfrConfig::default(),
            synthesis: SynthesisConfig { max_len: 24, ..SynthesisConfig::default() },
            ablations: Ablations::default(),
            eval: EvalConfig { samples: 4, temperature: 1.0, max_len: 24 },
            compare: CompareConfig {
                seeds: vec![0, 1, 2],
                modes: Mode::ALL.to_vec(),
                ablations: vec![vec!["gcf".into()], vec!["rs".into()]],
            },
        }
    }
}

/// Recursively overlays `patch` onto `base`; tables merge, everything else replaces.
fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses TOML text; keys absent from the text keep their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let patch: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))?;
        let mut value = toml::Value::try_from(RunConfig::default()).expect("default config serializes");
        merge(&mut value, patch);
        value.try_into().map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Every violated invariant as a `section.field: message` string.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self.task.violations().into_iter().map(|v| format!("task.{v}")).collect();
        out.extend(self.policy.violations());
        out.extend(self.priming.violations());
        out.extend(self.setup().violations());
        if self.test_count == 0 {
            out.push("test_count: must be >= 1".into());
        }
        if self.eval.samples == 0 {
            out.push("eval.samples: must be >= 1".into());
        }
        if !(self.eval.temperature.is_finite() && self.eval.temperature >= 0.0) {
            out.push("eval.temperature: must be finite and >= 0".into());
        }
        if self.eval.max_len == 0 {
            out.push("eval.max_len: must be >= 1".into());
        }
        if self.compare.seeds.is_empty() {
            out.push("compare.seeds: must list at least one seed".into());
        }
        if self.compare.modes.is_empty() {
            out.push("compare.modes: must list at least one mode".into());
        }
        for tags in &self.compare.ablations {
            let mut a = Ablations::default();
            for t in tags {
                if let Err(e) = a.disable(t) {
                    out.push(format!("compare.ablations: {e}"));
                }
            }
        }
        if self.out_dir.as_os_str().is_empty() {
            out.push("out_dir: must be nonempty".into());
        }
        out
    }

    /// Copy with the seed override pushed into every seeded component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        if let Some(s) = c.seed {
            c.policy.seed = s;
            c.priming.seed = s;
            c.synthesis.seed = s;
            c.train.seed = s;
        }
        c
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            train: self.train,
            pfr: self.pfr,
            synthesis: self.synthesis,
            mode: p2s_core::grpo::ModeField(self.mode),
            ablations: self.ablations,
        }
    }

    /// Run identifier used for directory and stream names.
    pub fn run_id(&self) -> String {
        let mut id = self.mode.name().to_string();
        for tag in self.ablations.tags() {
            id.push_str("-no-");
            id.push_str(tag);
        }
        format!("{id}-s{}", self.resolved().train.seed)
    }
}

/// Checks that `dir` exists or can be created and accepts a file.
pub fn check_writable(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(vec![format!("out_dir: {}: {e}", dir.display())]))?;
    let probe = dir.join(".p2s-write-probe");
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| CliError::Config(vec![format!("out_dir: {} is not writable: {e}", dir.display())]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        assert!(RunConfig::default().violations().is_empty());
    }

    #[test]
    fn partial_sections_keep_sibling_defaults() {
        let c = RunConfig::from_toml_str("[train]\nsteps = 3\n[task]\ncount = 10\n").unwrap();
        assert_eq!(c.train.steps, 3);
        assert_eq!(c.train.group_size, 4);
        assert_eq!(c.task.count, 10);
        assert_eq!(c.task.difficulty, (3, 3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nstepz = 3\n").is_err());
    }

    #[test]
    fn violations_name_fields() {
        let c = RunConfig::from_toml_str("[train]\nclip_epsilon = 1.5\n[pfr]\nsuccess_threshold = 0.0\n").unwrap();
        let v = c.violations();
        assert!(v.iter().any(|s| s.contains("clip epsilon outside (0,1)")), "{v:?}");
        assert!(v.iter().any(|s| s.contains("success threshold outside (0,1]")), "{v:?}");
        let c = RunConfig::from_toml_str("[train]\ngroup_size = 0\n").unwrap();
        assert!(c.violations().iter().any(|s| s.starts_with("train.group_size")));
    }

    #[test]
    fn seed_override_reaches_components() {
        let c = RunConfig { seed: Some(9), ..RunConfig::default() }.resolved();
        assert_eq!((c.policy.seed, c.priming.seed, c.synthesis.seed, c.train.seed), (9, 9, 9, 9));
        assert_eq!(c.task.seed, 42);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn example_config_matches_defaults() {
        let text = include_str!("../../../docs/example-config.toml");
        assert_eq!(RunConfig::from_toml_str(text).unwrap(), RunConfig::default());
    }
}
