//! Utility estimation from a window of observed rankings.
//!
//! Every ranking of a proposal containing action `j` and the zero-utility
//! reference action contributes pairwise comparisons between them: out of
//! the `count(j) * count(ref)` position pairs, the fraction with `j` ahead
//! has expectation `sigmoid(u(j)/tau)`. The estimator averages that fraction
//! over the window steps where the pair co-occurs, clamps it into the
//! logistic's reachable range `[sigmoid(-1/tau), sigmoid(1/tau)]`, and
//! inverts: `u_hat(j) = tau * logit(f_j)`. Actions that never co-occur with
//! the reference get estimate zero, as does the reference itself.
//!
//! Two equivalent code paths are provided: a stateless [`estimate`] over an
//! explicit window, and a [`SlidingEstimator`] that maintains the window
//! incrementally in `O(K^2 + |A|)` per step. Both accumulate integer pair
//! counts grouped by denominator and replay the float arithmetic in the same
//! order, so their outputs are bitwise identical — the sliding path is what
//! makes large windows affordable inside learners.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::ranking::{logit, sigmoid, ActionSet, Ranking};

/// Estimator configuration: window length `m` and temperature `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    window_m: usize,
    tau: f64,
}

impl EstimatorConfig {
    /// Creates a configuration. The window must hold at least one ranking
    /// and the temperature must be positive and finite.
    pub fn new(window_m: usize, tau: f64) -> Result<Self> {
        if window_m == 0 {
            return Err(Error::InvalidWindowLength);
        }
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidTemperature(tau));
        }
        Ok(Self { window_m, tau })
    }

    /// Maximum number of rankings the window retains.
    pub fn window_m(&self) -> usize {
        self.window_m
    }

    /// The ranking temperature.
    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// Clamps a win fraction into the logistic's reachable range and inverts it:
/// `tau * logit(clamp(f))`, projected onto `[-1, 1]`.
///
/// Clamping first is equivalent to inverting first and projecting the result
/// onto `[-1, 1]` (the logistic is monotone), but keeps intermediates finite
/// for degenerate fractions in {0, 1} whenever the clamp bounds are
/// representable. Below `tau = 1e-3` the bounds themselves round to {0, 1},
/// so an additional clamp to `[1e-15, 1 - 1e-15]` bounds the logit
/// arguments away from the singularities.
pub fn invert_win_fraction(f: f64, tau: f64) -> f64 {
    let mut f = f.clamp(sigmoid(-1.0 / tau), sigmoid(1.0 / tau));
    if tau < 1e-3 {
        f = f.clamp(1e-15, 1.0 - 1e-15);
    }
    (tau * logit(f)).clamp(-1.0, 1.0)
}

/// Per-action pair-count table: for each action `j`, a map from denominator
/// `d = n1 + n2` to `(sum of n1 over window steps with that d, number of
/// such steps)`. All entries are integers, so sliding-window adds and
/// removes are exact.
type PairTable = Vec<BTreeMap<u64, (u64, u64)>>;

/// Sparse per-step pair counts: `(action j, n1, denominator)` for every
/// action that co-occurs with the reference in that ranking.
type StepCounts = Vec<(usize, u64, u64)>;

fn step_counts(perm: &Ranking, actions: ActionSet) -> Result<StepCounts> {
    let reference = actions.reference();
    let mut counts = vec![0u64; actions.size()];
    let mut behind = vec![0u64; actions.size()]; // n2: pairs with j after a reference copy
    let mut ref_seen = 0u64;
    for &a in perm.order() {
        if a >= actions.size() {
            return Err(Error::ActionOutOfRange {
                index: a,
                count: actions.size(),
            });
        }
        if a == reference {
            ref_seen += 1;
        } else {
            behind[a] += ref_seen;
        }
        counts[a] += 1;
    }
    let mut out = Vec::new();
    if ref_seen == 0 {
        return Ok(out);
    }
    for &a in perm.order() {
        if a != reference && counts[a] > 0 {
            let den = counts[a] * ref_seen;
            let n1 = den - behind[a];
            out.push((a, n1, den));
            counts[a] = 0; // emit each action once
        }
    }
    Ok(out)
}

fn add_step(table: &mut PairTable, step: &StepCounts) {
    for &(j, n1, den) in step {
        let entry = table[j].entry(den).or_insert((0, 0));
        entry.0 += n1;
        entry.1 += 1;
    }
}

fn remove_step(table: &mut PairTable, step: &StepCounts) {
    for &(j, n1, den) in step {
        let entry = table[j].get_mut(&den).expect("removal matches an insert");
        entry.0 -= n1;
        entry.1 -= 1;
        if entry.1 == 0 {
            table[j].remove(&den);
        }
    }
}

/// Turns accumulated pair counts into utility estimates. Float operations
/// run in a fixed order (denominators ascending), so any two tables with
/// equal integer contents produce bitwise-identical outputs.
fn finish(table: &PairTable, actions: ActionSet, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; actions.size()];
    for j in actions.indices() {
        if j == actions.reference() {
            continue;
        }
        let mut fraction_sum = 0.0f64;
        let mut steps = 0u64;
        for (&den, &(n1_sum, step_count)) in &table[j] {
            fraction_sum += n1_sum as f64 / den as f64;
            steps += step_count;
        }
        if steps > 0 {
            out[j] = invert_win_fraction(fraction_sum / steps as f64, tau);
        }
    }
    out
}

/// Estimates the utility vector from a window of rankings (the most recent
/// `config.window_m()` entries of `window` if it is longer). The reference
/// coordinate is exactly zero and every coordinate lies in `[-1, 1]`.
pub fn estimate(
    window: &[Ranking],
    actions: ActionSet,
    config: &EstimatorConfig,
) -> Result<Vec<f64>> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let start = window.len().saturating_sub(config.window_m());
    let mut table: PairTable = vec![BTreeMap::new(); actions.size()];
    for perm in &window[start..] {
        let step = step_counts(perm, actions)?;
        add_step(&mut table, &step);
    }
    Ok(finish(&table, actions, config.tau()))
}

/// Incrementally maintained estimation window. Pushing a ranking costs
/// `O(K^2 + |A|)` amortized; [`SlidingEstimator::estimate`] costs
/// `O(|A| * D)` where `D` is the number of distinct pair-count denominators
/// (one for full-information proposals). Output is bitwise identical to
/// calling [`estimate`] on the retained window.
#[derive(Debug, Clone)]
pub struct SlidingEstimator {
    actions: ActionSet,
    config: EstimatorConfig,
    steps: VecDeque<StepCounts>,
    table: PairTable,
}

impl SlidingEstimator {
    pub fn new(actions: ActionSet, config: EstimatorConfig) -> Self {
        Self {
            actions,
            config,
            steps: VecDeque::with_capacity(config.window_m().min(1 << 20) + 1),
            table: vec![BTreeMap::new(); actions.size()],
        }
    }

    /// Number of rankings currently in the window.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The configuration this window was built with.
    pub fn config(&self) -> EstimatorConfig {
        self.config
    }

    /// Appends a ranking, evicting the oldest one if the window is full.
    pub fn push(&mut self, perm: &Ranking) -> Result<()> {
        let step = step_counts(perm, self.actions)?;
        add_step(&mut self.table, &step);
        self.steps.push_back(step);
        if self.steps.len() > self.config.window_m() {
            let old = self.steps.pop_front().expect("window nonempty");
            remove_step(&mut self.table, &old);
        }
        Ok(())
    }

    /// Estimates utilities from the current window contents.
    pub fn estimate(&self) -> Result<Vec<f64>> {
        if self.steps.is_empty() {
            return Err(Error::EmptyWindow);
        }
        Ok(finish(&self.table, self.actions, self.config.tau()))
    }
}

/// Inputs to the estimation error bound.
#[derive(Debug, Clone, Copy)]
pub struct EstimationBoundInputs {
    /// Ranking temperature.
    pub tau: f64,
    /// Lower bound on the per-step probability that each action is proposed.
    pub p: f64,
    /// Window length `m'`.
    pub window_len: usize,
    /// Failure probability, in (0, 1).
    pub delta: f64,
    /// Total utility drift over the window: `sum_s max_a |u^(s+1)(a) - u^(s)(a)|`.
    pub window_variation: f64,
    /// Number of actions.
    pub action_count: usize,
}

/// A high-probability estimation error bound, plus whether the window is
/// long enough for the concentration argument behind it to apply.
#[derive(Debug, Clone, Copy)]
pub struct EstimationBound {
    /// With probability at least `1 - delta`,
    /// `max_a |u_hat(a) - u_avg-over-window(a)|` is at most this value:
    /// `tau * (e^(1/tau) + 1)^2 / p * sqrt(log(4|A|/delta) / m') +
    /// window_variation`.
    pub value: f64,
    /// Whether `m' * p^4 >= 2 log(2/delta)`. When false the bound formula is
    /// still evaluated but its guarantee does not apply.
    pub applicable: bool,
}

/// Evaluates the estimation error bound. Violations of the applicability
/// condition are flagged, not rejected.
pub fn estimation_error_bound(inputs: &EstimationBoundInputs) -> Result<EstimationBound> {
    if !inputs.tau.is_finite() || inputs.tau <= 0.0 {
        return Err(Error::InvalidTemperature(inputs.tau));
    }
    if !(inputs.p > 0.0 && inputs.p <= 1.0) {
        return Err(Error::InvalidProposalProbability(inputs.p));
    }
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::InvalidDelta(inputs.delta));
    }
    if !inputs.window_variation.is_finite() || inputs.window_variation < 0.0 {
        return Err(Error::InvalidWindowVariation(inputs.window_variation));
    }
    if inputs.window_len == 0 {
        return Err(Error::InvalidWindowLength);
    }
    if inputs.action_count < 2 {
        return Err(Error::ActionSetTooSmall(inputs.action_count));
    }
    let m = inputs.window_len as f64;
    let a = inputs.action_count as f64;
    let applicable = m * inputs.p.powi(4) >= 2.0 * (2.0 / inputs.delta).ln();
    let concentration = inputs.tau * ((1.0 / inputs.tau).exp() + 1.0).powi(2) / inputs.p
        * ((4.0 * a / inputs.delta).ln() / m).sqrt();
    Ok(EstimationBound {
        value: concentration + inputs.window_variation,
        applicable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{sample_ranking, Proposal, RankingParams};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn actions(n: usize) -> ActionSet {
        ActionSet::new(n).unwrap()
    }

    #[test]
    fn no_co_occurrence_gives_zero() {
        // Action 0 never appears together with the reference (index 2).
        let window = vec![
            Ranking::from_order_unchecked(vec![0, 1]),
            Ranking::from_order_unchecked(vec![2, 1]),
        ];
        let config = EstimatorConfig::new(10, 1.0).unwrap();
        let est = estimate(&window, actions(3), &config).unwrap();
        assert_eq!(est[0], 0.0);
        assert_eq!(est[2], 0.0);
        assert!(est[1] < 0.0); // reference always ahead of action 1
    }

    #[test]
    fn always_ahead_saturates_at_one() {
        let window: Vec<Ranking> = (0..5)
            .map(|_| Ranking::from_order_unchecked(vec![0, 1]))
            .collect();
        let config = EstimatorConfig::new(10, 1.0).unwrap();
        let est = estimate(&window, actions(2), &config).unwrap();
        assert!(est[0] <= 1.0);
        assert_abs_diff_eq!(est[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_coordinate_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = [0.3, -0.8, 0.1, 0.0];
        let acts = actions(4);
        let proposal = Proposal::full(acts);
        let params = RankingParams::new(0.7).unwrap();
        let window: Vec<Ranking> = (0..200)
            .map(|_| sample_ranking(&u, params, &proposal, &mut rng).unwrap())
            .collect();
        let config = EstimatorConfig::new(200, 0.7).unwrap();
        let est = estimate(&window, acts, &config).unwrap();
        assert_eq!(est[3], 0.0);
        for &v in &est {
            assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn stationary_estimate_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let u = [0.5, 0.0];
        let acts = actions(2);
        let proposal = Proposal::full(acts);
        let params = RankingParams::new(1.0).unwrap();
        let window: Vec<Ranking> = (0..100_000)
            .map(|_| sample_ranking(&u, params, &proposal, &mut rng).unwrap())
            .collect();
        let config = EstimatorConfig::new(window.len(), 1.0).unwrap();
        let est = estimate(&window, acts, &config).unwrap();
        assert!((est[0] - 0.5).abs() < 0.02, "estimate {}", est[0]);
    }

    #[test]
    fn clamp_then_invert_equals_invert_then_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &tau in &[1e-2, 0.3, 1.0, 4.0] {
            for _ in 0..2_000 {
                let f: f64 = rng.random();
                let clamped_path = invert_win_fraction(f, tau);
                let projected_path = (tau * logit(f)).clamp(-1.0, 1.0);
                assert!(
                    (clamped_path - projected_path).abs() <= 1e-12,
                    "tau={tau} f={f}: {clamped_path} vs {projected_path}"
                );
            }
            // Degenerate endpoints land on the interval ends (up to the
            // rounding of tau * logit at the clamp boundary).
            let lo = invert_win_fraction(0.0, tau);
            let hi = invert_win_fraction(1.0, tau);
            assert!((-1.0..=1.0).contains(&lo) && (-1.0..=1.0).contains(&hi));
            assert_abs_diff_eq!(lo, -1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn inversion_is_monotone() {
        for &tau in &[1e-4, 1e-2, 1.0, 10.0] {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=1_000 {
                let f = i as f64 / 1_000.0;
                let v = invert_win_fraction(f, tau);
                assert!(v >= prev, "tau={tau}: f={f} mapped below predecessor");
                prev = v;
            }
        }
    }

    #[test]
    fn sliding_window_matches_stateless_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let acts = actions(4);
        let config = EstimatorConfig::new(37, 0.6).unwrap();
        let mut sliding = SlidingEstimator::new(acts, config);
        let mut history: Vec<Ranking> = Vec::new();

        for step in 0..400 {
            // Random proposals with repeats; the reference may be absent.
            let k = 1 + (rng.random::<f64>() * 5.0) as usize;
            let entries: Vec<usize> = (0..k).map(|_| rng.random_range(0..4)).collect();
            let u = [0.4, -0.2, 0.9, 0.0];
            let params = RankingParams::new(0.6).unwrap();
            let proposal = Proposal::new(entries).unwrap();
            let perm = sample_ranking(&u, params, &proposal, &mut rng).unwrap();

            sliding.push(&perm).unwrap();
            history.push(perm);

            let incremental = sliding.estimate().unwrap();
            let stateless = estimate(&history, acts, &config).unwrap();
            for (a, (x, y)) in incremental.iter().zip(&stateless).enumerate() {
                assert_eq!(
                    x.to_bits(),
                    y.to_bits(),
                    "step {step}, action {a}: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn bound_matches_hand_computation() {
        let bound = estimation_error_bound(&EstimationBoundInputs {
            tau: 1.0,
            p: 1.0,
            window_len: 1_000_000,
            delta: 0.05,
            window_variation: 0.0,
            action_count: 2,
        })
        .unwrap();
        assert!(bound.applicable);
        let expected = (1.0f64.exp() + 1.0).powi(2) * (160.0f64.ln() / 1e6).sqrt();
        assert_abs_diff_eq!(bound.value, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(bound.value, 0.0311, epsilon = 5e-4);
    }

    #[test]
    fn bound_shrinks_with_window_and_diverges_in_temperature() {
        let base = EstimationBoundInputs {
            tau: 1.0,
            p: 1.0,
            window_len: 1_000,
            delta: 0.05,
            window_variation: 0.0,
            action_count: 3,
        };
        let b1 = estimation_error_bound(&base).unwrap().value;
        let b2 = estimation_error_bound(&EstimationBoundInputs {
            window_len: 1_000_000_000,
            ..base
        })
        .unwrap()
        .value;
        assert!(b2 < b1 / 100.0);

        let cold = estimation_error_bound(&EstimationBoundInputs { tau: 1e-2, ..base })
            .unwrap()
            .value;
        let hot = estimation_error_bound(&EstimationBoundInputs { tau: 1e2, ..base })
            .unwrap()
            .value;
        assert!(cold > b1 && hot > b1, "bound must diverge at both ends");
    }

    #[test]
    fn bound_flags_inapplicable_windows() {
        let bound = estimation_error_bound(&EstimationBoundInputs {
            tau: 1.0,
            p: 0.1,
            window_len: 100,
            delta: 0.05,
            window_variation: 0.0,
            action_count: 2,
        })
        .unwrap();
        // 100 * 0.1^4 = 0.01 < 2 log(40).
        assert!(!bound.applicable);
        assert!(bound.value.is_finite());
    }

    #[test]
    fn empty_window_is_an_error() {
        let config = EstimatorConfig::new(5, 1.0).unwrap();
        assert!(estimate(&[], actions(2), &config).is_err());
        let sliding = SlidingEstimator::new(actions(2), config);
        assert!(sliding.estimate().is_err());
    }

    #[test]
    fn out_of_range_action_is_an_error() {
        let config = EstimatorConfig::new(5, 1.0).unwrap();
        let window = vec![Ranking::from_order_unchecked(vec![0, 7])];
        assert!(estimate(&window, actions(3), &config).is_err());
    }
}
