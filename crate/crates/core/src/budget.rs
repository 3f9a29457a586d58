//! Per-episode resource ledger: output tokens, compute seconds, and turns.
//!
//! Charging never clamps; exhaustion is a query. Compute time is LM call
//! latency plus cell execution time. Rendering feedback is not charged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LimitsError {
    #[error("{0} must be strictly positive")]
    NotPositive(&'static str),
    #[error("per_call_tokens ({per_call}) exceeds max_output_tokens ({max})")]
    PerCallAboveTotal { per_call: u64, max: u64 },
    #[error("per_turn_timeout ({per_turn}s) exceeds max_time ({max}s)")]
    TurnTimeoutAboveTotal { per_turn: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetLimits {
    pub max_output_tokens: u64,
    /// Seconds.
    pub max_time: f64,
    pub max_turns: u32,
    pub per_call_tokens: u64,
    /// Seconds.
    pub per_turn_timeout: f64,
}

impl Default for BudgetLimits {
    fn default() -> Self {
        Self {
            max_output_tokens: 16_000,
            max_time: 240.0,
            max_turns: 10,
            per_call_tokens: 4096,
            per_turn_timeout: 60.0,
        }
    }
}

impl BudgetLimits {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), LimitsError> {
        if self.max_output_tokens == 0 {
            return Err(LimitsError::NotPositive("max_output_tokens"));
        }
        if !(self.max_time > 0.0) {
            return Err(LimitsError::NotPositive("max_time"));
        }
        if self.max_turns == 0 {
            return Err(LimitsError::NotPositive("max_turns"));
        }
        if self.per_call_tokens == 0 {
            return Err(LimitsError::NotPositive("per_call_tokens"));
        }
        if !(self.per_turn_timeout > 0.0) {
            return Err(LimitsError::NotPositive("per_turn_timeout"));
        }
        if self.per_call_tokens > self.max_output_tokens {
            return Err(LimitsError::PerCallAboveTotal {
                per_call: self.per_call_tokens,
                max: self.max_output_tokens,
            });
        }
        if self.per_turn_timeout > self.max_time {
            return Err(LimitsError::TurnTimeoutAboveTotal {
                per_turn: self.per_turn_timeout,
                max: self.max_time,
            });
        }
        Ok(())
    }

    pub fn with_max_turns(mut self, turns: u32) -> Self {
        self.max_turns = turns;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetState {
    pub tokens_used: u64,
    /// Seconds, fractional.
    pub time_used: f64,
    pub turns_used: u32,
}

impl BudgetState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Component-wise sum.
    #[must_use]
    pub fn charge(self, tokens: u64, time: f64, turns: u32) -> Self {
        debug_assert!(time >= 0.0);
        Self {
            tokens_used: self.tokens_used + tokens,
            time_used: self.time_used + time.max(0.0),
            turns_used: self.turns_used + turns,
        }
    }

    pub fn is_exhausted(&self, limits: &BudgetLimits) -> bool {
        self.tokens_used >= limits.max_output_tokens
            || self.time_used >= limits.max_time
            || self.turns_used >= limits.max_turns
    }

    /// Seconds left before the total compute cap, never negative.
    pub fn time_left(&self, limits: &BudgetLimits) -> f64 {
        (limits.max_time - self.time_used).max(0.0)
    }

    /// Time allowed for executing one message's cells.
    pub fn turn_deadline(&self, limits: &BudgetLimits) -> f64 {
        limits.per_turn_timeout.min(self.time_left(limits))
    }
}

/// The model-facing budget block. Seconds used and left are floored
/// independently, so they may sum to one less than the cap.
pub fn render_budget_report(state: &BudgetState, limits: &BudgetLimits) -> String {
    let secs_used = state.time_used.floor() as i64;
    let secs_left = (limits.max_time - state.time_used).floor() as i64;
    let tokens_left = limits.max_output_tokens as i64 - state.tokens_used as i64;
    let steps_left = i64::from(limits.max_turns) - i64::from(state.turns_used);
    format!(
        "Remaining budget:\n - {secs_used} secs used, {secs_left} secs left,\n \
         - {} output tokens used, {tokens_left} output tokens left,\n \
         - {} thinking steps performed, {steps_left} steps left.",
        state.tokens_used, state.turns_used
    )
}

/// Fires exactly when three turns remain.
pub fn low_turn_warning(state: &BudgetState, limits: &BudgetLimits) -> Option<String> {
    let left = i64::from(limits.max_turns) - i64::from(state.turns_used);
    (left == 3).then(|| {
        format!(
            "Only {left} left! Make sure you will be ready to answer within the next {left} turns! \
             Adapt your strategy if necessary.\nStart your next message by reasoning about how you \
             will solve the task in the next {left} turns."
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn charge_identity_and_associativity() {
        let s = BudgetState::new().charge(411, 3.2, 1);
        assert_eq!(s, BudgetState { tokens_used: 411, time_used: 3.2, turns_used: 1 });
        let twice = BudgetState::new().charge(200, 1.0, 0).charge(211, 2.2, 1);
        assert_eq!(twice.tokens_used, 411);
        assert_eq!(twice.turns_used, 1);
        assert!((twice.time_used - 3.2).abs() < 1e-12);
    }

    #[test]
    fn exhaustion_boundaries() {
        let l = BudgetLimits::default();
        let st = |t, s, n| BudgetState { tokens_used: t, time_used: s, turns_used: n };
        assert!(!st(15_999, 100.0, 5).is_exhausted(&l));
        assert!(st(16_000, 0.0, 0).is_exhausted(&l));
        assert!(st(0, 0.0, 10).is_exhausted(&l));
        assert!(st(0, 240.0, 0).is_exhausted(&l));
    }

    #[test]
    fn fresh_report() {
        let r = render_budget_report(&BudgetState::new(), &BudgetLimits::default());
        assert_eq!(
            r,
            "Remaining budget:\n - 0 secs used, 240 secs left,\n - 0 output tokens used, 16000 output tokens left,\n - 0 thinking steps performed, 10 steps left."
        );
    }

    #[test]
    fn report_after_first_collie_turn() {
        let s = BudgetState::new().charge(411, 3.4, 1);
        let r = render_budget_report(&s, &BudgetLimits::default());
        assert!(r.ends_with(
            "3 secs used, 236 secs left,\n - 411 output tokens used, 15589 output tokens left,\n - 1 thinking steps performed, 9 steps left."
        ));
    }

    #[test]
    fn warning_fires_once_over_sweep() {
        let l = BudgetLimits::default();
        let fired: Vec<u32> = (0..=10)
            .filter(|&n| {
                low_turn_warning(&BudgetState { turns_used: n, ..Default::default() }, &l).is_some()
            })
            .collect();
        assert_eq!(fired, vec![7]);
        let w = low_turn_warning(&BudgetState { turns_used: 7, ..Default::default() }, &l).unwrap();
        assert_eq!(
            w,
            "Only 3 left! Make sure you will be ready to answer within the next 3 turns! Adapt your strategy if necessary.\nStart your next message by reasoning about how you will solve the task in the next 3 turns."
        );
    }

    #[test]
    fn limits_validation() {
        assert!(BudgetLimits::default().validate().is_ok());
        let bad = BudgetLimits { per_call_tokens: 20_000, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BudgetLimits { per_turn_timeout: 300.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = BudgetLimits { max_turns: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn exhaustion_is_monotone(
            charges in proptest::collection::vec((0u64..3000, 0.0f64..60.0, 0u32..2), 1..30)
        ) {
            let l = BudgetLimits::default();
            let mut s = BudgetState::new();
            let mut seen = false;
            for (t, d, n) in charges {
                s = s.charge(t, d, n);
                let ex = s.is_exhausted(&l);
                prop_assert!(!seen || ex);
                seen |= ex;
            }
        }
    }
}
