//! Regret and variation accounting.
//!
//! External regret compares the learner's realized utility
//! `sum_t <u_t, pi_t>` against the best fixed action in hindsight; bandit
//! regret replaces the strategy's expected utility with the realized average
//! utility of the proposed multiset. Variation `P^(T)` totals consecutive
//! utility-vector differences. All sums are compensated so horizon-length
//! accumulations stay well inside the tolerances the identity checks use.

use crate::error::{Error, Result};
use crate::ranking::Proposal;
use crate::stats::KahanSum;

/// Which norm to apply to per-step utility differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    /// Euclidean norm — the default reading of an unadorned norm.
    #[default]
    L2,
    /// Max norm, used by several proof-side quantities.
    LInf,
}

fn norm_of(diff: impl Iterator<Item = f64>, norm: Norm) -> f64 {
    match norm {
        Norm::L2 => diff.map(|d| d * d).sum::<f64>().sqrt(),
        Norm::LInf => diff.map(f64::abs).fold(0.0, f64::max),
    }
}

fn check_lengths(utilities: &[Vec<f64>], other_len: usize) -> Result<()> {
    if utilities.len() != other_len {
        return Err(Error::SequenceLengthMismatch(utilities.len(), other_len));
    }
    Ok(())
}

/// External regret: `max_a sum_t u_t(a) - sum_t <u_t, pi_t>`. The maximum
/// over the simplex is attained at a vertex, so the comparator is an exact
/// argmax over actions.
pub fn external_regret(utilities: &[Vec<f64>], strategies: &[Vec<f64>]) -> Result<f64> {
    check_lengths(utilities, strategies.len())?;
    let Some(first) = utilities.first() else {
        return Ok(0.0);
    };
    let mut per_action = vec![KahanSum::new(); first.len()];
    let mut played = KahanSum::new();
    for (u, pi) in utilities.iter().zip(strategies) {
        if u.len() != per_action.len() || pi.len() != per_action.len() {
            return Err(Error::UtilityLengthMismatch {
                expected: per_action.len(),
                got: u.len().max(pi.len()),
            });
        }
        for (sum, &x) in per_action.iter_mut().zip(u) {
            sum.add(x);
        }
        played.add(u.iter().zip(pi).map(|(x, p)| x * p).sum());
    }
    let best = per_action
        .iter()
        .map(KahanSum::value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - played.value())
}

/// Bandit regret: `max_a sum_t u_t(a) - sum_t (1/K) sum_(a in o_t) u_t(a)`,
/// the external-regret analogue against the realized average utility of
/// each proposed multiset.
pub fn bandit_regret(utilities: &[Vec<f64>], proposals: &[Proposal]) -> Result<f64> {
    check_lengths(utilities, proposals.len())?;
    let Some(first) = utilities.first() else {
        return Ok(0.0);
    };
    let mut per_action = vec![KahanSum::new(); first.len()];
    let mut realized = KahanSum::new();
    for (u, proposal) in utilities.iter().zip(proposals) {
        if u.len() != per_action.len() {
            return Err(Error::UtilityLengthMismatch {
                expected: per_action.len(),
                got: u.len(),
            });
        }
        proposal.check_actions(u.len())?;
        for (sum, &x) in per_action.iter_mut().zip(u) {
            sum.add(x);
        }
        let avg = proposal.entries().iter().map(|&a| u[a]).sum::<f64>() / proposal.len() as f64;
        realized.add(avg);
    }
    let best = per_action
        .iter()
        .map(KahanSum::value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - realized.value())
}

/// Total variation of a utility sequence:
/// `sum_(t=2..T) ||u_t - u_(t-1)||`. A sequence of length at most one has
/// variation zero.
pub fn variation(utilities: &[Vec<f64>], norm: Norm) -> f64 {
    let mut total = KahanSum::new();
    for pair in utilities.windows(2) {
        total.add(norm_of(
            pair[1].iter().zip(&pair[0]).map(|(a, b)| a - b),
            norm,
        ));
    }
    total.value()
}

/// The checkpoint schedule for a horizon: the geometric points `ceil(T/2^k)`
/// (so sublinearity ratios can compare T to T/2 and T/4) plus every 1% of T,
/// deduplicated and ascending.
pub fn checkpoints(horizon: usize) -> Vec<usize> {
    let mut points = Vec::new();
    let mut value = horizon;
    while value >= 1 {
        points.push(value);
        if value == 1 {
            break;
        }
        value = value.div_ceil(2);
    }
    for i in 1..=100usize {
        // ceil(T*i/100) without overflow at desk-scale horizons.
        points.push((horizon * i).div_ceil(100));
    }
    points.retain(|&p| p >= 1 && p <= horizon);
    points.sort_unstable();
    points.dedup();
    points
}

/// Cumulative regret and variation prefix curves for one run.
///
/// The cumulative external value at step `t` is the regret of the prefix —
/// comparator re-maximized at every prefix — so intermediate values can dip
/// negative while the final value matches [`external_regret`] exactly.
#[derive(Debug, Clone)]
pub struct RegretTrace {
    cumulative_external: Vec<f64>,
    cumulative_bandit: Vec<f64>,
    cumulative_variation: Vec<f64>,
    checkpoints: Vec<usize>,
}

impl RegretTrace {
    pub fn compute(
        utilities: &[Vec<f64>],
        strategies: &[Vec<f64>],
        proposals: &[Proposal],
    ) -> Result<Self> {
        check_lengths(utilities, strategies.len())?;
        check_lengths(utilities, proposals.len())?;
        let horizon = utilities.len();
        let action_count = utilities.first().map_or(0, Vec::len);
        let mut per_action = vec![KahanSum::new(); action_count];
        let mut played = KahanSum::new();
        let mut realized = KahanSum::new();
        let mut drift = KahanSum::new();
        let mut cumulative_external = Vec::with_capacity(horizon);
        let mut cumulative_bandit = Vec::with_capacity(horizon);
        let mut cumulative_variation = Vec::with_capacity(horizon);
        for (t, ((u, pi), proposal)) in utilities.iter().zip(strategies).zip(proposals).enumerate()
        {
            if u.len() != action_count || pi.len() != action_count {
                return Err(Error::UtilityLengthMismatch {
                    expected: action_count,
                    got: u.len().max(pi.len()),
                });
            }
            proposal.check_actions(action_count)?;
            for (sum, &x) in per_action.iter_mut().zip(u) {
                sum.add(x);
            }
            played.add(u.iter().zip(pi).map(|(x, p)| x * p).sum());
            let avg = proposal.entries().iter().map(|&a| u[a]).sum::<f64>() / proposal.len() as f64;
            realized.add(avg);
            if t > 0 {
                drift.add(norm_of(
                    u.iter().zip(&utilities[t - 1]).map(|(a, b)| a - b),
                    Norm::L2,
                ));
            }
            let best = per_action
                .iter()
                .map(KahanSum::value)
                .fold(f64::NEG_INFINITY, f64::max);
            cumulative_external.push(best - played.value());
            cumulative_bandit.push(best - realized.value());
            cumulative_variation.push(drift.value());
        }
        Ok(Self {
            cumulative_external,
            cumulative_bandit,
            cumulative_variation,
            checkpoints: checkpoints(horizon),
        })
    }

    /// Prefix external regret after each step (1-indexed step `t` at `[t-1]`).
    pub fn cumulative_external(&self) -> &[f64] {
        &self.cumulative_external
    }

    pub fn cumulative_bandit(&self) -> &[f64] {
        &self.cumulative_bandit
    }

    /// Prefix variation `P^(t)`.
    pub fn cumulative_variation(&self) -> &[f64] {
        &self.cumulative_variation
    }

    pub fn checkpoints(&self) -> &[usize] {
        &self.checkpoints
    }

    /// Final external regret, equal to [`external_regret`] on the same data.
    pub fn final_external(&self) -> f64 {
        self.cumulative_external.last().copied().unwrap_or(0.0)
    }

    pub fn final_bandit(&self) -> f64 {
        self.cumulative_bandit.last().copied().unwrap_or(0.0)
    }

    pub fn final_variation(&self) -> f64 {
        self.cumulative_variation.last().copied().unwrap_or(0.0)
    }
}
