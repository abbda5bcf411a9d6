//! No-regret oracles over the probability simplex.
//!
//! These are full-information algorithms fed numeric utility vectors; the
//! ranking learners wrap them as black boxes. Each oracle maps a history
//! summary (cumulative utilities, plus an iterate for projected gradient
//! ascent) to a mixed strategy:
//!
//! * `ftrl_entropy` — follow-the-regularized-leader with entropic
//!   regularizer: `softmax(lambda * cumulative)`.
//! * `hedge` — a named alias of `ftrl_entropy` (identical map).
//! * `ftrl_l2` — FTRL with quadratic regularizer: Euclidean projection of
//!   `lambda * cumulative` onto the simplex.
//! * `pgd` — projected gradient ascent: one ascent-and-project step per fed
//!   utility vector.
//!
//! Every config carries declared stability constants: `L` bounds the
//! strategy change per unit change in *cumulative* utilities, `eta` bounds
//! the per-step strategy drift. For the FTRL family both follow from
//! 1-strong convexity of the regularizer (`L = lambda`,
//! `eta = lambda * sqrt(|A|)`); PGD has no cumulative-sum Lipschitz form, so
//! its `L` is measured empirically and PGD is rejected by the learners that
//! rely on that form.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ranking::softmax;
use crate::stats::KahanSum;

/// Which oracle map to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    FtrlEntropy,
    /// Identical to [`OracleKind::FtrlEntropy`]; kept as a named alias.
    Hedge,
    FtrlL2,
    Pgd,
}

impl OracleKind {
    pub fn name(&self) -> &'static str {
        match self {
            OracleKind::FtrlEntropy => "ftrl_entropy",
            OracleKind::Hedge => "hedge",
            OracleKind::FtrlL2 => "ftrl_l2",
            OracleKind::Pgd => "pgd",
        }
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ftrl_entropy" => Ok(OracleKind::FtrlEntropy),
            "hedge" => Ok(OracleKind::Hedge),
            "ftrl_l2" => Ok(OracleKind::FtrlL2),
            "pgd" => Ok(OracleKind::Pgd),
            other => Err(Error::Parse(format!("unknown oracle kind `{other}`"))),
        }
    }
}

/// The default learning rate for a known horizon: `lambda = T^(-1/2)`.
pub fn default_lambda(horizon: usize) -> f64 {
    (horizon as f64).sqrt().recip()
}

/// Oracle configuration: the map, its learning rate, the action count, and
/// declared stability constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    kind: OracleKind,
    lambda: f64,
    action_count: usize,
    declared_l: f64,
    declared_eta: f64,
    stability_exponents: Option<(f64, f64)>,
}

impl OracleConfig {
    /// Creates a configuration with the kind's natural stability constants:
    /// `L = lambda`, `eta = lambda * sqrt(|A|)` for the FTRL family
    /// (1-strongly-convex regularizers); for PGD, `eta` keeps the same
    /// projection-contraction bound while `L` is measured empirically via
    /// [`measure_pgd_constants`].
    pub fn new(kind: OracleKind, lambda: f64, action_count: usize) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "oracle lambda must be positive and finite, got {lambda}"
            )));
        }
        if action_count < 2 {
            return Err(Error::ActionSetTooSmall(action_count));
        }
        let eta = lambda * (action_count as f64).sqrt();
        let declared_l = match kind {
            OracleKind::FtrlEntropy | OracleKind::Hedge | OracleKind::FtrlL2 => lambda,
            OracleKind::Pgd => measure_pgd_constants(lambda, action_count)?.0,
        };
        Ok(Self {
            kind,
            lambda,
            action_count,
            declared_l,
            declared_eta: eta,
            stability_exponents: None,
        })
    }

    /// Documents how the constants scale with the horizon:
    /// `L = Theta(T^-c)`, `eta = Theta(T^-w)`. Purely descriptive.
    pub fn with_stability_exponents(mut self, c: f64, w: f64) -> Self {
        self.stability_exponents = Some((c, w));
        self
    }

    pub fn kind(&self) -> OracleKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Declared cumulative-sum stability constant `L`.
    pub fn declared_l(&self) -> f64 {
        self.declared_l
    }

    /// Declared per-step drift bound `eta`.
    pub fn declared_eta(&self) -> f64 {
        self.declared_eta
    }

    pub fn stability_exponents(&self) -> Option<(f64, f64)> {
        self.stability_exponents
    }
}

/// History summary of an oracle run. A value type: feeding produces a new
/// state, so callers can branch or replay histories freely.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleState {
    cumulative: Vec<f64>,
    compensation: Vec<f64>,
    step_count: usize,
    pgd_iterate: Option<Vec<f64>>,
}

impl OracleState {
    /// The empty-history state (PGD starts at the uniform strategy).
    pub fn new(config: &OracleConfig) -> Self {
        let n = config.action_count();
        let pgd_iterate = match config.kind() {
            OracleKind::Pgd => Some(vec![1.0 / n as f64; n]),
            _ => None,
        };
        Self {
            cumulative: vec![0.0; n],
            compensation: vec![0.0; n],
            step_count: 0,
            pgd_iterate,
        }
    }

    /// Builds a state directly from a cumulative utility vector, as if
    /// `step_count` utility vectors summing to `cumulative` had been fed.
    /// Only meaningful for oracles whose strategy depends on the history
    /// through its sum, so PGD is rejected.
    pub fn from_cumulative(
        config: &OracleConfig,
        cumulative: Vec<f64>,
        step_count: usize,
    ) -> Result<Self> {
        if config.kind() == OracleKind::Pgd {
            return Err(Error::InvalidConfig(
                "pgd state depends on the full history, not its sum".into(),
            ));
        }
        if cumulative.len() != config.action_count() {
            return Err(Error::UtilityLengthMismatch {
                expected: config.action_count(),
                got: cumulative.len(),
            });
        }
        let n = cumulative.len();
        Ok(Self {
            cumulative,
            compensation: vec![0.0; n],
            step_count,
            pgd_iterate: None,
        })
    }

    /// The summed utility vector fed so far.
    pub fn cumulative_utility(&self) -> Vec<f64> {
        self.cumulative
            .iter()
            .zip(&self.compensation)
            .map(|(s, c)| s + c)
            .collect()
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }
}

/// Exact Euclidean projection onto the probability simplex, by the
/// sort-and-threshold method: with entries sorted descending, the largest
/// prefix whose running average of `(prefix sum - 1)` stays below its last
/// element is kept, shifted by that average, and the rest is zeroed.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (j, &x) in sorted.iter().enumerate() {
        prefix += x;
        let candidate = (prefix - 1.0) / (j + 1) as f64;
        if x - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn check_dimensions(state: &OracleState, config: &OracleConfig) -> Result<()> {
    if state.cumulative.len() != config.action_count() {
        return Err(Error::UtilityLengthMismatch {
            expected: config.action_count(),
            got: state.cumulative.len(),
        });
    }
    if config.kind() == OracleKind::Pgd && state.pgd_iterate.is_none() {
        return Err(Error::InvalidConfig(
            "state was not initialized for a pgd oracle".into(),
        ));
    }
    Ok(())
}

/// The oracle's strategy for the next step. Deterministic in the state.
pub fn oracle_next(state: &OracleState, config: &OracleConfig) -> Result<Vec<f64>> {
    check_dimensions(state, config)?;
    let strategy = match config.kind() {
        OracleKind::FtrlEntropy | OracleKind::Hedge => {
            let scaled: Vec<f64> = state
                .cumulative_utility()
                .iter()
                .map(|&s| config.lambda() * s)
                .collect();
            softmax(&scaled)
        }
        OracleKind::FtrlL2 => {
            let scaled: Vec<f64> = state
                .cumulative_utility()
                .iter()
                .map(|&s| config.lambda() * s)
                .collect();
            project_simplex(&scaled)
        }
        OracleKind::Pgd => state.pgd_iterate.clone().expect("checked above"),
    };
    Ok(strategy)
}

/// Feeds one utility vector, returning the successor state. For PGD the
/// iterate additionally takes one projected ascent step; the projection
/// output is renormalized so the iterate is exactly a distribution.
pub fn oracle_feed(state: &OracleState, u: &[f64], config: &OracleConfig) -> Result<OracleState> {
    check_dimensions(state, config)?;
    if u.len() != config.action_count() {
        return Err(Error::UtilityLengthMismatch {
            expected: config.action_count(),
            got: u.len(),
        });
    }
    for (a, &x) in u.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteUtility(a));
        }
    }
    let mut next = state.clone();
    for (a, &x) in u.iter().enumerate() {
        // Neumaier update so long horizons keep full precision.
        let sum = next.cumulative[a];
        let t = sum + x;
        next.compensation[a] += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        next.cumulative[a] = t;
    }
    next.step_count += 1;
    if let Some(iterate) = next.pgd_iterate.take() {
        let ascended: Vec<f64> = iterate
            .iter()
            .zip(u)
            .map(|(&x, &g)| x + config.lambda() * g)
            .collect();
        let projected = project_simplex(&ascended);
        let total: f64 = projected.iter().sum();
        debug_assert!((total - 1.0).abs() <= 1e-9 && projected.iter().all(|&x| x >= -1e-9));
        next.pgd_iterate = Some(projected.iter().map(|&x| x.max(0.0) / total).collect());
    }
    Ok(next)
}

/// External regret of running the oracle itself on a utility sequence:
/// `max_a sum_t u_t(a) - sum_t <u_t, pi_t>`, where `pi_t` is the oracle's
/// strategy after seeing `u_1..u_(t-1)`. The simplex maximum is attained at
/// a vertex, so the comparator is an exact argmax over actions. Both sides
/// are compensated sums.
pub fn oracle_regret(utilities: &[Vec<f64>], config: &OracleConfig) -> Result<f64> {
    let mut state = OracleState::new(config);
    let mut played = KahanSum::new();
    let mut per_action = vec![KahanSum::new(); config.action_count()];
    for u in utilities {
        let strategy = oracle_next(&state, config)?;
        let step_value: f64 = strategy.iter().zip(u).map(|(p, x)| p * x).sum();
        played.add(step_value);
        for (sum, &x) in per_action.iter_mut().zip(u) {
            sum.add(x);
        }
        state = oracle_feed(&state, u, config)?;
    }
    let best = per_action
        .iter()
        .map(KahanSum::value)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - played.value())
}

/// Empirically measures PGD's cumulative-sum stability constant: the
/// largest observed ratio `||next(U) - next(U')|| / ||sum U - sum U'||`
/// over seeded random history pairs, with 25% headroom. The per-step drift
/// bound `lambda * sqrt(|A|)` needs no measurement (projections are
/// nonexpansive) and is returned alongside for convenience.
pub fn measure_pgd_constants(lambda: f64, action_count: usize) -> Result<(f64, f64)> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "oracle lambda must be positive and finite, got {lambda}"
        )));
    }
    if action_count < 2 {
        return Err(Error::ActionSetTooSmall(action_count));
    }
    // A self-contained probe config: measurement must not recurse.
    let probe = OracleConfig {
        kind: OracleKind::Pgd,
        lambda,
        action_count,
        declared_l: f64::NAN,
        declared_eta: lambda * (action_count as f64).sqrt(),
        stability_exponents: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x9d2c_5680);
    let mut max_ratio = 0.0f64;
    for _ in 0..200 {
        let len = rng.random_range(1..=20);
        let mut state_a = OracleState::new(&probe);
        let mut state_b = OracleState::new(&probe);
        for _ in 0..len {
            let u_a: Vec<f64> = (0..action_count)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            let u_b: Vec<f64> = (0..action_count)
                .map(|_| rng.random_range(-1.0..=1.0))
                .collect();
            state_a = oracle_feed(&state_a, &u_a, &probe)?;
            state_b = oracle_feed(&state_b, &u_b, &probe)?;
        }
        let sum_a = state_a.cumulative_utility();
        let sum_b = state_b.cumulative_utility();
        let sum_gap: f64 = sum_a
            .iter()
            .zip(&sum_b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        if sum_gap < 1e-9 {
            continue;
        }
        let next_a = oracle_next(&state_a, &probe)?;
        let next_b = oracle_next(&state_b, &probe)?;
        let strategy_gap: f64 = next_a
            .iter()
            .zip(&next_b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        max_ratio = max_ratio.max(strategy_gap / sum_gap);
    }
    Ok((max_ratio * 1.25, probe.declared_eta))
}
