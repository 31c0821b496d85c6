use serde::{Deserialize, Serialize};

use crate::error::{P2sError, Result};
use crate::reward::PfrConfig;

/// Which branch of the hierarchical integration produced a reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewardCase {
    FormatPenalty,
    Outcome,
    WarmupZero,
    NoGoldZero,
    Pfr,
    /// Outcome plus PFR, used only when hierarchical integration is ablated.
    Additive,
    /// Answer-probability reward of the likelihood baseline.
    Rlpr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyInput {
    pub format_ok: bool,
    pub outcome: f64,
    pub group_success: bool,
    pub pfr_weighted: Option<f64>,
    pub gold_available: bool,
    pub step: usize,
}

/// S_G: whether any outcome in the group reaches the success threshold.
pub fn group_success(outcomes: &[f64], threshold: f64) -> bool {
    outcomes.iter().any(|o| *o >= threshold)
}

/// Selects the reward by strict precedence: format penalty, then group
/// success, then warmup, then missing gold, then the shaped PFR value.
pub fn hierarchical_reward(input: &HierarchyInput, config: &PfrConfig) -> Result<(f64, RewardCase)> {
    if !input.format_ok {
        return Ok((-config.c_penalty, RewardCase::FormatPenalty));
    }
    if input.group_success {
        return Ok((input.outcome, RewardCase::Outcome));
    }
    if input.step < config.warmup_steps {
        return Ok((0.0, RewardCase::WarmupZero));
    }
    if !input.gold_available {
        return Ok((0.0, RewardCase::NoGoldZero));
    }
    match input.pfr_weighted {
        Some(r) => Ok((r, RewardCase::Pfr)),
        None => Err(P2sError::Contract("PFR case selected but no shaped PFR value supplied".into())),
    }
}

/// Flat alternative to the hierarchy: format penalty, otherwise outcome plus
/// whatever PFR value is available after warmup.
pub fn additive_reward(input: &HierarchyInput, config: &PfrConfig) -> (f64, RewardCase) {
    if !input.format_ok {
        return (-config.c_penalty, RewardCase::FormatPenalty);
    }
    let pfr = if input.step >= config.warmup_steps && input.gold_available {
        input.pfr_weighted.unwrap_or(0.0)
    } else {
        0.0
    };
    (input.outcome + pfr, RewardCase::Additive)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(format_ok: bool, sg: bool, step: usize, gold: bool) -> HierarchyInput {
        HierarchyInput {
            format_ok,
            outcome: 0.8,
            group_success: sg,
            pfr_weighted: gold.then_some(0.45),
            gold_available: gold,
            step,
        }
    }

    #[test]
    fn documented_examples() {
        let c = PfrConfig::default();
        assert_eq!(hierarchical_reward(&input(false, true, 30, true), &c).unwrap(), (-1.0, RewardCase::FormatPenalty));
        assert_eq!(hierarchical_reward(&input(true, true, 5, false), &c).unwrap(), (0.8, RewardCase::Outcome));
        assert_eq!(hierarchical_reward(&input(true, false, 5, true), &c).unwrap(), (0.0, RewardCase::WarmupZero));
        assert_eq!(hierarchical_reward(&input(true, false, 30, false), &c).unwrap(), (0.0, RewardCase::NoGoldZero));
        assert_eq!(hierarchical_reward(&input(true, false, 30, true), &c).unwrap(), (0.45, RewardCase::Pfr));
    }

    #[test]
    fn missing_pfr_value_is_a_contract_error() {
        let c = PfrConfig::default();
        let mut i = input(true, false, 30, true);
        i.pfr_weighted = None;
        assert!(matches!(hierarchical_reward(&i, &c), Err(P2sError::Contract(_))));
    }

    #[test]
    fn truth_table_is_total_and_ordered() {
        let c = PfrConfig::default();
        for f in [false, true] {
            for sg in [false, true] {
                for step in [0, 19, 20, 30] {
                    for gold in [false, true] {
                        let (r, case) = hierarchical_reward(&input(f, sg, step, gold), &c).unwrap();
                        let expected = if !f {
                            (-1.0, RewardCase::FormatPenalty)
                        } else if sg {
                            (0.8, RewardCase::Outcome)
                        } else if step < 20 {
                            (0.0, RewardCase::WarmupZero)
                        } else if !gold {
                            (0.0, RewardCase::NoGoldZero)
                        } else {
                            (0.45, RewardCase::Pfr)
                        };
                        assert_eq!((r, case), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn success_flag_uses_threshold() {
        assert!(group_success(&[0.2, 0.99], 0.99));
        assert!(!group_success(&[0.2, 0.98], 0.99));
        assert!(!group_success(&[], 0.99));
    }

    #[test]
    fn additive_sums_outcome_and_pfr() {
        let c = PfrConfig::default();
        assert_eq!(additive_reward(&input(true, false, 30, true), &c), (0.8 + 0.45, RewardCase::Additive));
        assert_eq!(additive_reward(&input(true, false, 5, true), &c), (0.8, RewardCase::Additive));
        assert_eq!(additive_reward(&input(false, false, 30, true), &c).1, RewardCase::FormatPenalty);
    }
}
