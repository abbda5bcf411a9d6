//! The Plackett-Luce ranking model over proposed action multisets.
//!
//! A proposal is a multiset `o` of `K` action indices. Given a utility vector
//! `u` and temperature `tau > 0`, a ranking `sigma` (a permutation of `o`) is
//! drawn by filling positions sequentially: each position is taken by one of
//! the remaining entries with probability proportional to `exp(u(a)/tau)`.
//! The probability of a full arrangement is therefore
//!
//! `P(sigma) = prod_k exp(u(sigma(k))/tau) / sum_{k' >= k} exp(u(sigma(k'))/tau)`
//!
//! multiplied by the number of ways indistinguishable equal entries can be
//! labeled (so probabilities over *distinct* arrangements sum to one).
//!
//! The model admits exact pairwise and first-place marginals, which the
//! estimator exploits: in any ranking of a multiset containing actions `a`
//! and `b`, the expected fraction of (a, b) pairs with `a` ahead of `b` is
//! the logistic function `sigmoid((u(a) - u(b))/tau)`.

use rand::Rng;

use crate::error::{Error, Result};

/// The set of actions `0..size`, with the last index serving as the
/// zero-utility reference action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSet {
    size: usize,
}

impl ActionSet {
    /// Creates an action set with `size >= 2` actions.
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::ActionSetTooSmall(size));
        }
        Ok(Self { size })
    }

    /// Number of actions.
    pub fn size(&self) -> usize {
        self.size
    }

    /// The designated zero-utility reference action (always the last index).
    pub fn reference(&self) -> usize {
        self.size - 1
    }

    /// Iterator over all action indices.
    pub fn indices(&self) -> std::ops::Range<usize> {
        0..self.size
    }

    /// Checks that a utility vector matches this action set: correct length
    /// and finite entries.
    pub fn check_utilities(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.size {
            return Err(Error::UtilityLengthMismatch {
                expected: self.size,
                got: u.len(),
            });
        }
        check_finite(u)
    }
}

/// Ranking model parameters: the temperature `tau > 0`.
///
/// Small `tau` makes rankings nearly deterministic in the utilities; large
/// `tau` makes them nearly uniform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankingParams {
    tau: f64,
}

impl RankingParams {
    /// Creates parameters with temperature `tau`, which must be positive and
    /// finite. Arbitrarily small positive values are allowed; the
    /// deterministic zero-temperature limit is not a sampler mode.
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::InvalidTemperature(tau));
        }
        Ok(Self { tau })
    }

    /// The temperature.
    pub fn tau(&self) -> f64 {
        self.tau
    }
}

/// A multiset of proposed action indices (repeats allowed), `K >= 1` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    entries: Vec<usize>,
}

impl Proposal {
    /// Creates a proposal from raw entries. Fails when empty.
    pub fn new(entries: Vec<usize>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyProposal);
        }
        Ok(Self { entries })
    }

    /// A full-information proposal: exactly one copy of every action.
    pub fn full(actions: ActionSet) -> Self {
        Self {
            entries: actions.indices().collect(),
        }
    }

    /// The proposed entries, in proposal order.
    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// Number of proposed actions `K` (counting repeats).
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of occurrences of `action` in the multiset.
    pub fn count(&self, action: usize) -> usize {
        self.entries.iter().filter(|&&a| a == action).count()
    }

    /// Checks every entry indexes into an action set of the given size.
    pub fn check_actions(&self, action_count: usize) -> Result<()> {
        for &a in &self.entries {
            if a >= action_count {
                return Err(Error::ActionOutOfRange {
                    index: a,
                    count: action_count,
                });
            }
        }
        Ok(())
    }
}

/// A ranking: a permutation of some proposal's multiset, best-ranked first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    order: Vec<usize>,
}

impl Ranking {
    /// Creates a ranking from an explicit order. The order must be a
    /// rearrangement of `proposal`'s multiset.
    pub fn new(order: Vec<usize>, proposal: &Proposal) -> Result<Self> {
        let mut a = order.clone();
        let mut b = proposal.entries().to_vec();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(Error::NotAPermutation);
        }
        Ok(Self { order })
    }

    /// Creates a ranking without checking it against a proposal. Intended
    /// for deserialization and internal use where the invariant is upheld by
    /// construction.
    pub fn from_order_unchecked(order: Vec<usize>) -> Self {
        Self { order }
    }

    /// The ranked actions, best first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Number of ranked entries.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

fn check_finite(u: &[f64]) -> Result<()> {
    for (i, &v) in u.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFiniteUtility(i));
        }
    }
    Ok(())
}

/// Numerically stable logistic function `1 / (1 + exp(-x))`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`]: `log(f) - log(1 - f)` for `f` in (0, 1).
pub fn logit(f: f64) -> f64 {
    f.ln() - (1.0 - f).ln()
}

/// Softmax with max-subtraction, safe for very small temperatures and
/// boundary utilities. `scores` are the already-scaled exponents.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Exact probability of observing the arrangement `perm` when ranking its
/// multiset under utilities `u` at temperature `params.tau()`.
///
/// For arrangements with repeated actions this is the total probability of
/// the arrangement (equal entries are indistinguishable), so probabilities
/// over all distinct arrangements of a multiset sum to one. Softmax weights
/// are formed with max-subtraction over each remaining suffix, so boundary
/// utilities and small temperatures do not overflow.
pub fn ranking_probability(perm: &Ranking, u: &[f64], params: RankingParams) -> Result<f64> {
    if perm.is_empty() {
        return Err(Error::EmptyProposal);
    }
    check_finite(u)?;
    let tau = params.tau();
    let order = perm.order();
    for &a in order {
        if a >= u.len() {
            return Err(Error::ActionOutOfRange {
                index: a,
                count: u.len(),
            });
        }
    }

    // Product of per-position pick probabilities, treating entries as
    // distinguishable items.
    let scores: Vec<f64> = order.iter().map(|&a| u[a] / tau).collect();
    let mut prob = 1.0;
    for k in 0..scores.len() {
        let suffix = &scores[k..];
        let max = suffix.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = suffix.iter().map(|&s| (s - max).exp()).sum();
        prob *= (scores[k] - max).exp() / denom;
    }

    // Collapse indistinguishable labelings of equal entries: every ordering
    // of the copies of an action yields the same arrangement and the same
    // per-position product, so the arrangement probability is the product
    // times `prod_a count(a)!`.
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    let mut multiplicity = 1.0;
    let mut run = 1usize;
    for i in 1..sorted.len() {
        if sorted[i] == sorted[i - 1] {
            run += 1;
            multiplicity *= run as f64;
        } else {
            run = 1;
        }
    }
    Ok(prob * multiplicity)
}

/// Samples a ranking of `proposal` from the Plackett-Luce model: positions
/// are filled sequentially, each chosen among the remaining entries with
/// probability proportional to `exp(u/tau)` (computed with max-subtraction).
/// Deterministic given the generator state.
pub fn sample_ranking<R: Rng + ?Sized>(
    u: &[f64],
    params: RankingParams,
    proposal: &Proposal,
    rng: &mut R,
) -> Result<Ranking> {
    if proposal.is_empty() {
        return Err(Error::EmptyProposal);
    }
    check_finite(u)?;
    let tau = params.tau();
    let mut remaining: Vec<usize> = proposal.entries().to_vec();
    for &a in &remaining {
        if a >= u.len() {
            return Err(Error::ActionOutOfRange {
                index: a,
                count: u.len(),
            });
        }
    }

    let mut order = Vec::with_capacity(remaining.len());
    let mut weights = Vec::with_capacity(remaining.len());
    while remaining.len() > 1 {
        let max = remaining
            .iter()
            .map(|&a| u[a] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        weights.clear();
        weights.extend(remaining.iter().map(|&a| (u[a] / tau - max).exp()));
        let total: f64 = weights.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut picked = remaining.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            r -= w;
            if r < 0.0 {
                picked = i;
                break;
            }
        }
        order.push(remaining.swap_remove(picked));
    }
    order.push(remaining[0]);
    Ok(Ranking { order })
}

/// Expected fraction of (a, b) pairs with `a` ranked ahead of `b`, for any
/// proposal multiset containing both: the logistic `sigmoid((u_a - u_b)/tau)`.
pub fn pairwise_marginal(u_a: f64, u_b: f64, tau: f64) -> Result<f64> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidTemperature(tau));
    }
    Ok(sigmoid((u_a - u_b) / tau))
}

/// Probability that `action` occupies the first position when ranking
/// `proposal`: `count(action) * exp(u(action)/tau) / sum over entries of
/// exp(u/tau)`, the multiplicity-weighted softmax over the multiset.
pub fn first_place_marginal(
    action: usize,
    u: &[f64],
    proposal: &Proposal,
    params: RankingParams,
) -> Result<f64> {
    check_finite(u)?;
    if action >= u.len() {
        return Err(Error::ActionOutOfRange {
            index: action,
            count: u.len(),
        });
    }
    let count = proposal.count(action);
    if count == 0 {
        return Err(Error::ActionNotProposed(action));
    }
    let tau = params.tau();
    let max = proposal
        .entries()
        .iter()
        .map(|&a| u[a] / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = proposal
        .entries()
        .iter()
        .map(|&a| (u[a] / tau - max).exp())
        .sum();
    Ok(count as f64 * (u[action] / tau - max).exp() / denom)
}

/// Counts ordered co-occurrences of action `j` with the reference action in
/// `perm`: `n1` is the number of position pairs (i, k) with `perm(i) = j`,
/// `perm(k) = reference`, and `i < k`; `n2` the same with `i > k`. Their sum
/// equals `count(j) * count(reference)` over the underlying proposal.
pub fn pair_counts(perm: &Ranking, j: usize, reference: usize) -> (u64, u64) {
    let mut j_seen = 0u64;
    let mut ref_seen = 0u64;
    let mut n1 = 0u64;
    let mut n2 = 0u64;
    for &a in perm.order() {
        if a == j {
            n2 += ref_seen;
            j_seen += 1;
        } else if a == reference {
            n1 += j_seen;
            ref_seen += 1;
        }
    }
    (n1, n2)
}
