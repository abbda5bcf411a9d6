//! Utility-sequence generators and the ranking-feedback environment.
//!
//! Generators produce adversarial or stochastic utility sequences:
//! bounded-variation random walks, base-plus-noise models, and three hand
//! constructed hard families (a pair of stochastic instances whose ranking
//! distributions coincide, a doubling family that defeats any fixed
//! learner on at least one member, and a three-phase drift pair). The
//! [`RankingEnvironment`] wraps a sequence and answers proposals with
//! rankings drawn from the configured basis: the instantaneous utilities,
//! their running time average, or the proposal-weighted empirical mean.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::metrics::{variation, Norm};
use crate::ranking::{sample_ranking, sigmoid, Proposal, Ranking, RankingParams};
use crate::stats::KahanSum;

/// A horizon-length sequence of utility vectors, entries in `[-1, 1]`.
///
/// The online-learning convention keeps the last (reference) coordinate at
/// zero; the hard-instance constructions use raw two-action utilities, so
/// that convention is a generator property, not a structural invariant here.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySequence {
    vectors: Vec<Vec<f64>>,
    action_count: usize,
}

impl UtilitySequence {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::InvalidConfig("empty utility sequence".into()));
        };
        let action_count = first.len();
        if action_count < 2 {
            return Err(Error::ActionSetTooSmall(action_count));
        }
        for vector in &vectors {
            if vector.len() != action_count {
                return Err(Error::UtilityLengthMismatch {
                    expected: action_count,
                    got: vector.len(),
                });
            }
            for (a, &x) in vector.iter().enumerate() {
                if !x.is_finite() {
                    return Err(Error::NonFiniteUtility(a));
                }
                if !(-1.0..=1.0).contains(&x) {
                    return Err(Error::UtilityOutOfRange { index: a, value: x });
                }
            }
        }
        Ok(Self {
            vectors,
            action_count,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// The utility vector of step `t` (0-indexed).
    pub fn get(&self, t: usize) -> &[f64] {
        &self.vectors[t]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

/// Variation accounting for a generated sequence: the target exponent and
/// the realized total `P^(T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationBudget {
    q: f64,
    scale: f64,
    realized: f64,
}

impl VariationBudget {
    /// Target exponent: the generator aims for `P^(T) <= scale * T^q`.
    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Measured `P^(T)` of the generated sequence (Euclidean step norms).
    pub fn realized(&self) -> f64 {
        self.realized
    }

    /// The budget ceiling `scale * T^q`.
    pub fn limit(&self, horizon: usize) -> f64 {
        self.scale * (horizon as f64).powf(self.q)
    }
}

/// What the environment ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingBasis {
    /// The current step's utility vector.
    Instantaneous,
    /// The running mean `(1/t) * sum_(s<=t) u^(s)`.
    TimeAverage,
    /// The proposal-weighted empirical mean: each step adds
    /// `u^(t)(a) * count_in_proposal(a)` to action `a`'s numerator and the
    /// count to its denominator, with never-proposed actions pinned at 0.
    EmpiricalMean,
}

impl std::str::FromStr for RankingBasis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instantaneous" => Ok(RankingBasis::Instantaneous),
            "time_average" => Ok(RankingBasis::TimeAverage),
            "empirical_mean" => Ok(RankingBasis::EmpiricalMean),
            other => Err(Error::Parse(format!("unknown ranking basis `{other}`"))),
        }
    }
}

impl RankingBasis {
    pub fn name(&self) -> &'static str {
        match self {
            RankingBasis::Instantaneous => "instantaneous",
            RankingBasis::TimeAverage => "time_average",
            RankingBasis::EmpiricalMean => "empirical_mean",
        }
    }
}

/// A stateful single-run environment: holds the utility sequence, samples
/// one ranking per proposal, and maintains whatever running state the
/// basis needs. Owned by exactly one run.
#[derive(Debug, Clone)]
pub struct RankingEnvironment {
    sequence: UtilitySequence,
    params: RankingParams,
    basis: RankingBasis,
    step: usize,
    avg_sums: Vec<KahanSum>,
    prev_average: Vec<f64>,
    empirical_sums: Vec<KahanSum>,
    empirical_counts: Vec<u64>,
    last_basis: Option<Vec<f64>>,
}

impl RankingEnvironment {
    pub fn new(sequence: UtilitySequence, params: RankingParams, basis: RankingBasis) -> Self {
        let n = sequence.action_count();
        Self {
            sequence,
            params,
            basis,
            step: 0,
            avg_sums: vec![KahanSum::new(); n],
            prev_average: vec![0.0; n],
            empirical_sums: vec![KahanSum::new(); n],
            empirical_counts: vec![0; n],
            last_basis: None,
        }
    }

    pub fn sequence(&self) -> &UtilitySequence {
        &self.sequence
    }

    pub fn params(&self) -> RankingParams {
        self.params
    }

    pub fn basis(&self) -> RankingBasis {
        self.basis
    }

    /// Steps taken so far.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn horizon(&self) -> usize {
        self.sequence.len()
    }

    pub fn action_count(&self) -> usize {
        self.sequence.action_count()
    }

    /// The basis vector the most recent ranking was drawn from.
    pub fn last_basis(&self) -> Option<&[f64]> {
        self.last_basis.as_deref()
    }

    /// Answers one proposal: advances to the next utility vector, updates
    /// the basis state (empirical means incorporate this proposal before
    /// ranking), samples the ranking, and returns it together with the true
    /// average utility of the proposed multiset, `(1/K) sum_(a in o) u^(t)(a)`.
    pub fn env_step<R: Rng + ?Sized>(
        &mut self,
        proposal: &Proposal,
        rng: &mut R,
    ) -> Result<(Ranking, f64)> {
        if self.step >= self.sequence.len() {
            return Err(Error::HorizonExhausted {
                horizon: self.sequence.len(),
                step: self.step + 1,
            });
        }
        proposal.check_actions(self.action_count())?;
        let u = self.sequence.get(self.step);
        self.step += 1;
        let t = self.step as f64;

        let basis_vector: Vec<f64> = match self.basis {
            RankingBasis::Instantaneous => u.to_vec(),
            RankingBasis::TimeAverage => {
                let mut average = Vec::with_capacity(u.len());
                for (sum, &x) in self.avg_sums.iter_mut().zip(u) {
                    sum.add(x);
                    average.push(sum.value() / t);
                }
                // Consecutive running means move by at most 2/t per
                // coordinate when utilities live in [-1, 1].
                debug_assert!(self
                    .prev_average
                    .iter()
                    .zip(&average)
                    .all(|(p, c)| self.step == 1 || (c - p).abs() <= 2.0 / t + 1e-12));
                self.prev_average.clone_from(&average);
                average
            }
            RankingBasis::EmpiricalMean => {
                for &a in proposal.entries() {
                    self.empirical_sums[a].add(u[a]);
                    self.empirical_counts[a] += 1;
                }
                self.empirical_sums
                    .iter()
                    .zip(&self.empirical_counts)
                    .map(|(sum, &count)| {
                        if count == 0 {
                            0.0
                        } else {
                            sum.value() / count as f64
                        }
                    })
                    .collect()
            }
        };

        let ranking = sample_ranking(&basis_vector, self.params, proposal, rng)?;
        let realized_avg =
            proposal.entries().iter().map(|&a| u[a]).sum::<f64>() / proposal.len() as f64;
        self.last_basis = Some(basis_vector);
        Ok((ranking, realized_avg))
    }
}

fn random_interior_point(rng: &mut ChaCha8Rng, action_count: usize) -> Vec<f64> {
    let mut point: Vec<f64> = (0..action_count - 1)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    point.push(0.0);
    point
}

fn clip_step(previous: &[f64], direction: &[f64], alpha: f64) -> Vec<f64> {
    previous
        .iter()
        .zip(direction)
        .map(|(&x, &d)| (x + alpha * d).clamp(-1.0, 1.0))
        .collect()
}

fn step_norm(previous: &[f64], candidate: &[f64]) -> f64 {
    candidate
        .iter()
        .zip(previous)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// A bounded-variation sequence plus its accounting: the per-step allocated
/// shares are kept so the allocation postcondition stays testable.
#[derive(Debug, Clone)]
pub struct BoundedVariation {
    pub sequence: UtilitySequence,
    pub budget: VariationBudget,
    /// Variation allocated to each step `t >= 2` (length `T - 1`).
    pub shares: Vec<f64>,
}

/// Generates a sequence whose total variation stays within `scale * T^q`:
/// the budget is split across steps proportionally to i.i.d. uniform draws,
/// and each step moves from its predecessor along a random direction (zero
/// reference coordinate), with the step size found by doubling plus
/// bisection so the realized move matches the allocated share within 1e-6 —
/// or the largest move the `[-1, 1]` box admits, whichever is smaller.
pub fn gen_bounded_variation_scaled(
    horizon: usize,
    q: f64,
    scale: f64,
    seed: u64,
    action_count: usize,
) -> Result<BoundedVariation> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidConfig(format!(
            "variation exponent must lie in [0, 1], got {q}"
        )));
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "variation scale must be positive, got {scale}"
        )));
    }
    if action_count < 2 {
        return Err(Error::ActionSetTooSmall(action_count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::with_capacity(horizon);
    vectors.push(random_interior_point(&mut rng, action_count));

    let total_budget = scale * (horizon as f64).powf(q);
    let weights: Vec<f64> = (0..horizon.saturating_sub(1))
        .map(|_| rng.random::<f64>())
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let shares: Vec<f64> = if weight_sum > 0.0 {
        weights
            .iter()
            .map(|w| total_budget * w / weight_sum)
            .collect()
    } else {
        weights
    };

    for &share in &shares {
        let previous = vectors.last().expect("nonempty").clone();
        let mut direction: Vec<f64>;
        loop {
            direction = (0..action_count - 1)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            direction.push(0.0);
            let norm: f64 = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm > 1e-12 {
                direction.iter_mut().for_each(|d| *d /= norm);
                break;
            }
        }

        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        let mut doublings = 0;
        while step_norm(&previous, &clip_step(&previous, &direction, hi)) < share {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings >= 60 {
                break; // the box caps the move; take the largest achievable
            }
        }
        if doublings < 60 {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if step_norm(&previous, &clip_step(&previous, &direction, mid)) < share {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        vectors.push(clip_step(&previous, &direction, hi));
    }

    let realized = variation(&vectors, Norm::L2);
    let sequence = UtilitySequence::new(vectors)?;
    Ok(BoundedVariation {
        sequence,
        budget: VariationBudget { q, scale, realized },
        shares,
    })
}

/// [`gen_bounded_variation_scaled`] with the default unit scale.
pub fn gen_bounded_variation(
    horizon: usize,
    q: f64,
    seed: u64,
    action_count: usize,
) -> Result<BoundedVariation> {
    gen_bounded_variation_scaled(horizon, q, 1.0, seed, action_count)
}

/// Distribution family for the additive noise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Uniform,
    Gaussian,
    Gamma,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(NoiseKind::Uniform),
            "gaussian" => Ok(NoiseKind::Gaussian),
            "gamma" => Ok(NoiseKind::Gamma),
            other => Err(Error::Parse(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Gamma => "gamma",
        }
    }
}

/// Draws one zero-mean shift: `Uniform(-sigma, sigma)`, `Normal(0, sigma^2)`,
/// or `Gamma(1/sigma^2, sigma^2) - 1` (that gamma has mean 1 and variance
/// `sigma^2`, so centering keeps the three kinds comparable).
pub fn sample_noise_shift<R: Rng + ?Sized>(kind: NoiseKind, sigma: f64, rng: &mut R) -> f64 {
    match kind {
        NoiseKind::Uniform => Uniform::new_inclusive(-sigma, sigma)
            .expect("valid bounds")
            .sample(rng),
        NoiseKind::Gaussian => Normal::new(0.0, sigma).expect("valid std dev").sample(rng),
        NoiseKind::Gamma => {
            let shape = 1.0 / (sigma * sigma);
            let scale = sigma * sigma;
            Gamma::new(shape, scale)
                .expect("valid parameters")
                .sample(rng)
                - 1.0
        }
    }
}

/// Generates `u^(t) = clip(u_base + xi^(t))` with i.i.d. zero-mean
/// coordinate shifts of the chosen kind; the base vector is drawn uniformly
/// from `[-1, 1]^(A-1) x {0}` and the reference coordinate stays 0.
pub fn gen_noise_shift(
    horizon: usize,
    base_seed: u64,
    kind: NoiseKind,
    sigma: f64,
    action_count: usize,
) -> Result<UtilitySequence> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise sigma must be positive, got {sigma}"
        )));
    }
    if action_count < 2 {
        return Err(Error::ActionSetTooSmall(action_count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    let base = random_interior_point(&mut rng, action_count);
    let vectors = (0..horizon)
        .map(|_| {
            let mut u: Vec<f64> = base[..action_count - 1]
                .iter()
                .map(|&b| (b + sample_noise_shift(kind, sigma, &mut rng)).clamp(-1.0, 1.0))
                .collect();
            u.push(0.0);
            u
        })
        .collect();
    UtilitySequence::new(vectors)
}

/// Temperature the indistinguishable pair is built for: the two instances'
/// ranking distributions coincide only at this value.
pub const INDISTINGUISHABLE_PAIR_TAU: f64 = 0.1;

/// Which member of the indistinguishable pair: the instances share their
/// per-step ranking distribution but differ in expected utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairInstance {
    /// Mixes (-0.5, 0) and (0.15, 0); expected first-action utility -0.05.
    LowMean,
    /// Mixes (-0.02, 0) and (0.1, 0); expected first-action utility +0.03.
    HighMean,
}

/// A two-point utility mixture over two actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointMixture {
    /// Probability of drawing `first`.
    pub p_first: f64,
    pub first: [f64; 2],
    pub second: [f64; 2],
}

impl TwoPointMixture {
    /// Expected utility vector of the mixture.
    pub fn mean(&self) -> [f64; 2] {
        [
            self.p_first * self.first[0] + (1.0 - self.p_first) * self.second[0],
            self.p_first * self.first[1] + (1.0 - self.p_first) * self.second[1],
        ]
    }

    /// Probability that the first action ranks ahead of the second under
    /// the mixture, at temperature `tau`.
    pub fn first_ahead_probability(&self, tau: f64) -> f64 {
        self.p_first * sigmoid((self.first[0] - self.first[1]) / tau)
            + (1.0 - self.p_first) * sigmoid((self.second[0] - self.second[1]) / tau)
    }
}

/// The mixing probability that makes the high-mean instance's ranking
/// distribution coincide with the low-mean one at the pair's temperature.
pub fn pair_matching_probability() -> f64 {
    let tau = INDISTINGUISHABLE_PAIR_TAU;
    let target = (4.0 / 13.0) * sigmoid(-0.5 / tau) + (9.0 / 13.0) * sigmoid(0.15 / tau);
    (target - sigmoid(0.1 / tau)) / (sigmoid(-0.02 / tau) - sigmoid(0.1 / tau))
}

/// The two-point mixture defining each pair instance.
pub fn indistinguishable_pair_mixture(instance: PairInstance) -> TwoPointMixture {
    match instance {
        PairInstance::LowMean => TwoPointMixture {
            p_first: 4.0 / 13.0,
            first: [-0.5, 0.0],
            second: [0.15, 0.0],
        },
        PairInstance::HighMean => TwoPointMixture {
            p_first: pair_matching_probability(),
            first: [-0.02, 0.0],
            second: [0.1, 0.0],
        },
    }
}

/// Samples a horizon-length i.i.d. sequence from one pair instance. Under
/// ranking feedback at [`INDISTINGUISHABLE_PAIR_TAU`] the two instances are
/// statistically identical, yet their expected utilities differ by 0.08 —
/// so no ranking-fed learner can be near-optimal on both.
pub fn gen_indistinguishable_pair(
    instance: PairInstance,
    horizon: usize,
    seed: u64,
) -> Result<UtilitySequence> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let mixture = indistinguishable_pair_mixture(instance);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vectors = (0..horizon)
        .map(|_| {
            let draw = if rng.random::<f64>() < mixture.p_first {
                mixture.first
            } else {
                mixture.second
            };
            draw.to_vec()
        })
        .collect();
    UtilitySequence::new(vectors)
}

/// The doubling family: `K + 1` deterministic two-action sequences (with
/// `K` the smallest integer such that `2^K >= T`), built so that any fixed
/// learner earns low average utility on at least one member. Comes in two
/// mirrored variants; every run starts from the common prefix `(0.5, 0)`.
#[derive(Debug, Clone)]
pub struct DoublingConstruction {
    doublings: usize,
    prefix: Vec<f64>,
    primary: Vec<UtilitySequence>,
    mirrored: Vec<UtilitySequence>,
}

impl DoublingConstruction {
    /// `K`: the number of doublings (there are `K + 1` sequences per variant).
    pub fn doublings(&self) -> usize {
        self.doublings
    }

    /// The shared first-step utility vector `(0.5, 0)`.
    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    /// Sequence bodies of the primary variant, index 0..=K.
    pub fn primary(&self) -> &[UtilitySequence] {
        &self.primary
    }

    /// Coordinate-swapped variant (terminal entries unswapped).
    pub fn mirrored(&self) -> &[UtilitySequence] {
        &self.mirrored
    }

    /// A full runnable sequence: the shared prefix followed by body `index`
    /// of the chosen variant.
    pub fn with_prefix(&self, mirrored: bool, index: usize) -> Result<UtilitySequence> {
        let family = if mirrored {
            &self.mirrored
        } else {
            &self.primary
        };
        let body = family
            .get(index)
            .ok_or_else(|| Error::InvalidConfig(format!("no sequence with index {index}")))?;
        let mut vectors = vec![self.prefix.clone()];
        vectors.extend(body.vectors().iter().cloned());
        UtilitySequence::new(vectors)
    }
}

fn doubling_body(index: usize, doublings: usize, high_first: bool) -> UtilitySequence {
    let run = if high_first { [1.0, 0.0] } else { [0.0, 1.0] };
    let flip = if high_first { [0.0, 1.0] } else { [1.0, 0.0] };
    let mut vectors = Vec::new();
    if index < doublings {
        vectors.extend(std::iter::repeat_n(run.to_vec(), (1 << index) - 1));
        vectors.extend(std::iter::repeat_n(flip.to_vec(), 1 << index));
    } else {
        vectors.extend(std::iter::repeat_n(run.to_vec(), (1 << doublings) - 1));
    }
    vectors.push(vec![0.0, 0.0]);
    UtilitySequence::new(vectors).expect("construction entries are valid")
}

/// Builds the doubling family for a horizon.
pub fn gen_doubling_sequences(horizon: usize) -> Result<DoublingConstruction> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let mut doublings = 0usize;
    while (1usize << doublings) < horizon {
        doublings += 1;
        if doublings > 40 {
            return Err(Error::InvalidConfig(format!(
                "horizon {horizon} is beyond the doubling construction's range"
            )));
        }
    }
    let primary = (0..=doublings)
        .map(|k| doubling_body(k, doublings, true))
        .collect();
    let mirrored = (0..=doublings)
        .map(|k| doubling_body(k, doublings, false))
        .collect();
    Ok(DoublingConstruction {
        doublings,
        prefix: vec![0.5, 0.0],
        primary,
        mirrored,
    })
}

/// Picks the first sequence on which a learner's measured average utility
/// falls below `1/2 - 1/(2(K+1))`; the construction guarantees at least one
/// such member exists for any fixed learner (averages from the appropriate
/// variant).
pub fn select_low_value_sequence(average_utilities: &[f64], doublings: usize) -> Option<usize> {
    let threshold = 0.5 - 1.0 / (2.0 * (doublings as f64 + 1.0));
    average_utilities.iter().position(|&v| v < threshold)
}

/// The two three-phase drift instances share phases `(0.1, 0) x T` and
/// `(0, 0.2) x T` and differ only in their final `2T` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreePhaseEnding {
    /// Tail `(0, 1)`: the second action surges.
    SecondHigh,
    /// Tail `(0.4, 0.2)`: the first action comes out ahead.
    FirstAhead,
}

/// Builds a three-phase instance of total length `4 * quarter`.
pub fn gen_three_phase_instance(
    ending: ThreePhaseEnding,
    quarter: usize,
) -> Result<UtilitySequence> {
    if quarter == 0 {
        return Err(Error::InvalidConfig(
            "phase length must be at least 1".into(),
        ));
    }
    let tail = match ending {
        ThreePhaseEnding::SecondHigh => [0.0, 1.0],
        ThreePhaseEnding::FirstAhead => [0.4, 0.2],
    };
    let mut vectors = Vec::with_capacity(4 * quarter);
    vectors.extend(std::iter::repeat_n(vec![0.1, 0.0], quarter));
    vectors.extend(std::iter::repeat_n(vec![0.0, 0.2], quarter));
    vectors.extend(std::iter::repeat_n(tail.to_vec(), 2 * quarter));
    UtilitySequence::new(vectors)
}

/// Writes a sequence as columnar text: header `t,u_0,...,u_{A-1}`, one row
/// per timestep (1-indexed), floats with 17 significant digits so parsing
/// reproduces every value bitwise.
pub fn write_sequence(path: &Path, sequence: &UtilitySequence) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "t")?;
    for a in 0..sequence.action_count() {
        write!(out, ",u_{a}")?;
    }
    writeln!(out)?;
    for (t, vector) in sequence.vectors().iter().enumerate() {
        write!(out, "{}", t + 1)?;
        for &x in vector {
            write!(out, ",{x:.16e}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a sequence file written by [`write_sequence`].
pub fn read_sequence(path: &Path) -> Result<UtilitySequence> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty sequence file".into()))??;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.first() != Some(&"t") || columns.len() < 3 {
        return Err(Error::Parse(format!(
            "malformed sequence header `{header}`"
        )));
    }
    for (a, column) in columns[1..].iter().enumerate() {
        if *column != format!("u_{a}") {
            return Err(Error::Parse(format!(
                "unexpected sequence column `{column}`"
            )));
        }
    }
    let action_count = columns.len() - 1;
    let mut vectors = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != action_count + 1 {
            return Err(Error::Parse(format!(
                "row {} has {} cells, expected {}",
                vectors.len() + 1,
                cells.len(),
                action_count + 1
            )));
        }
        let vector = cells[1..]
            .iter()
            .map(|cell| {
                cell.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad utility `{cell}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        vectors.push(vector);
    }
    UtilitySequence::new(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranking::{pairwise_marginal, ActionSet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn time_average_first_step_ranks_by_the_raw_utilities() {
        let sequence = UtilitySequence::new(vec![vec![0.7, 0.0], vec![0.1, 0.0]]).unwrap();
        let params = RankingParams::new(1.0).unwrap();
        let mut env = RankingEnvironment::new(sequence, params, RankingBasis::TimeAverage);
        let proposal = Proposal::full(ActionSet::new(2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        env.env_step(&proposal, &mut rng).unwrap();
        assert_eq!(env.last_basis().unwrap(), &[0.7, 0.0]);
    }

    #[test]
    fn time_average_matches_batch_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let horizon = 1_000;
        let vectors: Vec<Vec<f64>> = (0..horizon)
            .map(|_| {
                vec![
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    0.0,
                ]
            })
            .collect();
        let sequence = UtilitySequence::new(vectors.clone()).unwrap();
        let params = RankingParams::new(1.0).unwrap();
        let mut env = RankingEnvironment::new(sequence, params, RankingBasis::TimeAverage);
        let proposal = Proposal::full(ActionSet::new(3).unwrap());
        for t in 1..=horizon {
            env.env_step(&proposal, &mut rng).unwrap();
            if t % 97 == 0 || t == horizon {
                let basis = env.last_basis().unwrap();
                for a in 0..3 {
                    let batch: f64 = vectors[..t].iter().map(|u| u[a]).sum::<f64>() / t as f64;
                    assert_abs_diff_eq!(basis[a], batch, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn running_average_drift_is_bounded_by_two_over_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let horizon = 500;
        let vectors: Vec<Vec<f64>> = (0..horizon)
            .map(|_| vec![rng.random_range(-1.0..=1.0), 0.0])
            .collect();
        let mut previous: Option<Vec<f64>> = None;
        let sequence = UtilitySequence::new(vectors).unwrap();
        let params = RankingParams::new(1.0).unwrap();
        let mut env = RankingEnvironment::new(sequence, params, RankingBasis::TimeAverage);
        let proposal = Proposal::full(ActionSet::new(2).unwrap());
        for t in 1..=horizon {
            env.env_step(&proposal, &mut rng).unwrap();
            let basis = env.last_basis().unwrap().to_vec();
            if let Some(prev) = &previous {
                let drift = basis
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(drift <= 2.0 / t as f64 + 1e-12);
            }
            previous = Some(basis);
        }
    }

    #[test]
    fn empirical_mean_weights_by_proposal_counts() {
        // One copy at utility 1, then two copies at utility 0: mean 1/3.
        let sequence = UtilitySequence::new(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let params = RankingParams::new(1.0).unwrap();
        let mut env = RankingEnvironment::new(sequence, params, RankingBasis::EmpiricalMean);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.env_step(&Proposal::new(vec![0]).unwrap(), &mut rng)
            .unwrap();
        assert_abs_diff_eq!(env.last_basis().unwrap()[0], 1.0, epsilon = 1e-15);
        env.env_step(&Proposal::new(vec![0, 0]).unwrap(), &mut rng)
            .unwrap();
        let basis = env.last_basis().unwrap();
        assert_abs_diff_eq!(basis[0], 1.0 / 3.0, epsilon = 1e-15);
        // Action 1 was never proposed: its empirical mean stays 0.
        assert_eq!(basis[1], 0.0);
    }

    #[test]
    fn stepping_past_the_horizon_fails() {
        let sequence = UtilitySequence::new(vec![vec![0.0, 0.0]]).unwrap();
        let params = RankingParams::new(1.0).unwrap();
        let mut env = RankingEnvironment::new(sequence, params, RankingBasis::Instantaneous);
        let proposal = Proposal::full(ActionSet::new(2).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        env.env_step(&proposal, &mut rng).unwrap();
        assert!(env.env_step(&proposal, &mut rng).is_err());
    }

    #[test]
    fn realized_average_uses_true_utilities() {
        let sequence = UtilitySequence::new(vec![vec![0.8, -0.4, 0.0]]).unwrap();
        let params = RankingParams::new(1.0).unwrap();
        let mut env = RankingEnvironment::new(sequence, params, RankingBasis::TimeAverage);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, realized) = env
            .env_step(&Proposal::new(vec![0, 1, 0]).unwrap(), &mut rng)
            .unwrap();
        assert_abs_diff_eq!(realized, (0.8 - 0.4 + 0.8) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_exponent_keeps_total_variation_below_one() {
        let run = gen_bounded_variation(2_000, 0.0, 9, 3).unwrap();
        assert!(run.budget.realized() <= 1.0 + 1e-9);
        assert_abs_diff_eq!(
            run.budget.realized(),
            variation(run.sequence.vectors(), Norm::L2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn realized_variation_tracks_the_budget() {
        let horizon = 10_000;
        let run = gen_bounded_variation(horizon, 0.5, 123, 4).unwrap();
        let limit = run.budget.limit(horizon);
        assert!(run.budget.realized() <= limit + 1e-9);
        assert!(
            run.budget.realized() >= 0.9 * limit,
            "clipping lost too much: {} vs {}",
            run.budget.realized(),
            limit
        );
    }

    #[test]
    fn unclipped_steps_match_their_allocated_share() {
        let run = gen_bounded_variation(300, 0.4, 7, 3).unwrap();
        let vectors = run.sequence.vectors();
        for (t, share) in run.shares.iter().enumerate() {
            let norm = step_norm(&vectors[t], &vectors[t + 1]);
            assert!(norm <= share + 1e-6);
            let interior = vectors[t + 1].iter().all(|&x| x.abs() < 1.0 - 1e-12);
            if interior {
                assert_abs_diff_eq!(norm, *share, epsilon = 1e-6);
            }
        }
        // Reference coordinate pinned at zero throughout.
        assert!(vectors.iter().all(|u| u[2] == 0.0));
    }

    #[test]
    fn noise_shift_with_tiny_sigma_is_nearly_constant() {
        let sequence = gen_noise_shift(50, 4, NoiseKind::Gaussian, 1e-9, 3).unwrap();
        assert!(variation(sequence.vectors(), Norm::L2) < 1e-6);
    }

    #[test]
    fn uniform_shifts_stay_within_sigma_of_the_base() {
        let sigma = 0.3;
        let sequence = gen_noise_shift(200, 11, NoiseKind::Uniform, sigma, 2).unwrap();
        // All entries of one coordinate live in an interval of width 2*sigma
        // (up to clipping, which only shrinks it).
        let first: Vec<f64> = sequence.vectors().iter().map(|u| u[0]).collect();
        let spread = first.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
            - first.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        assert!(spread <= 2.0 * sigma + 1e-12);
        assert!(sequence.vectors().iter().all(|u| u[1] == 0.0));
    }

    #[test]
    fn shift_variances_match_their_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let sigma = 0.3f64;
        let samples = 100_000;
        for (kind, expected) in [
            (NoiseKind::Uniform, sigma * sigma / 3.0),
            (NoiseKind::Gaussian, sigma * sigma),
            (NoiseKind::Gamma, sigma * sigma),
        ] {
            let draws: Vec<f64> = (0..samples)
                .map(|_| sample_noise_shift(kind, sigma, &mut rng))
                .collect();
            let mean: f64 = draws.iter().sum::<f64>() / samples as f64;
            let var: f64 = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / samples as f64;
            assert!(
                (var - expected).abs() <= 0.05 * expected,
                "{kind:?}: variance {var} vs expected {expected}"
            );
            assert!(mean.abs() < 0.01, "{kind:?}: shifts should be centered");
        }
    }

    #[test]
    fn pair_instances_share_their_ranking_distribution() {
        let tau = INDISTINGUISHABLE_PAIR_TAU;
        let low = indistinguishable_pair_mixture(PairInstance::LowMean);
        let high = indistinguishable_pair_mixture(PairInstance::HighMean);
        assert_abs_diff_eq!(
            low.first_ahead_probability(tau),
            high.first_ahead_probability(tau),
            epsilon = 1e-12
        );
        // Cross-check against the ranking model's own pairwise marginal.
        let direct = low.p_first * pairwise_marginal(-0.5, 0.0, tau).unwrap()
            + (1.0 - low.p_first) * pairwise_marginal(0.15, 0.0, tau).unwrap();
        assert_abs_diff_eq!(direct, high.first_ahead_probability(tau), epsilon = 1e-12);
    }

    #[test]
    fn pair_instances_have_the_advertised_means() {
        let low = indistinguishable_pair_mixture(PairInstance::LowMean).mean();
        assert_abs_diff_eq!(low[0], -0.05, epsilon = 1e-12);
        assert_eq!(low[1], 0.0);
        let high = indistinguishable_pair_mixture(PairInstance::HighMean).mean();
        assert_abs_diff_eq!(high[0], 0.03, epsilon = 1e-3);
        let p = pair_matching_probability();
        assert!((0.0..=1.0).contains(&p));
        assert_abs_diff_eq!(high[0], 0.1 - 0.12 * p, epsilon = 1e-15);
    }

    #[test]
    fn pair_sequences_draw_only_support_points() {
        let sequence = gen_indistinguishable_pair(PairInstance::LowMean, 500, 3).unwrap();
        for u in sequence.vectors() {
            assert!(u == &[-0.5, 0.0] || u == &[0.15, 0.0]);
        }
        let again = gen_indistinguishable_pair(PairInstance::LowMean, 500, 3).unwrap();
        assert_eq!(sequence, again);
    }

    #[test]
    fn doubling_family_matches_the_construction() {
        let construction = gen_doubling_sequences(6).unwrap();
        assert_eq!(construction.doublings(), 3); // 2^3 = 8 >= 6
        assert_eq!(construction.primary().len(), 4);
        assert_eq!(
            construction.primary()[0].vectors(),
            &[vec![0.0, 1.0], vec![0.0, 0.0]]
        );
        assert_eq!(construction.primary()[1].len(), 4);
        assert_eq!(
            construction.primary()[1].vectors(),
            &[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
                vec![0.0, 0.0]
            ]
        );
        assert_eq!(
            construction.mirrored()[0].vectors(),
            &[vec![1.0, 0.0], vec![0.0, 0.0]]
        );
        // Last sequence: 2^K - 1 run entries plus the terminal step.
        assert_eq!(construction.primary()[3].len(), 8);
    }

    #[test]
    fn doubling_variants_are_coordinate_swaps_off_the_terminal_step() {
        let construction = gen_doubling_sequences(16).unwrap();
        for (a, b) in construction.primary().iter().zip(construction.mirrored()) {
            assert_eq!(a.len(), b.len());
            let last = a.len() - 1;
            for (t, (u, v)) in a.vectors().iter().zip(b.vectors()).enumerate() {
                if t == last {
                    assert_eq!(u, &[0.0, 0.0]);
                    assert_eq!(v, &[0.0, 0.0]);
                } else {
                    assert_eq!(u[0], v[1]);
                    assert_eq!(u[1], v[0]);
                }
            }
        }
    }

    #[test]
    fn doubling_prefix_is_attached_on_demand() {
        let construction = gen_doubling_sequences(4).unwrap();
        let full = construction.with_prefix(false, 1).unwrap();
        assert_eq!(full.get(0), &[0.5, 0.0]);
        assert_eq!(full.len(), construction.primary()[1].len() + 1);
        assert!(construction.with_prefix(false, 99).is_err());
    }

    #[test]
    fn low_value_selector_uses_the_family_threshold() {
        // K = 2: threshold 0.5 - 1/6 = 1/3.
        assert_eq!(select_low_value_sequence(&[0.5, 0.2, 0.4], 2), Some(1));
        assert_eq!(select_low_value_sequence(&[0.4, 0.5, 0.9], 2), None);
    }

    #[test]
    fn three_phase_instances_share_a_prefix_and_diverge_at_the_tail() {
        let quarter = 5;
        let surge = gen_three_phase_instance(ThreePhaseEnding::SecondHigh, quarter).unwrap();
        let rebound = gen_three_phase_instance(ThreePhaseEnding::FirstAhead, quarter).unwrap();
        assert_eq!(surge.len(), 4 * quarter);
        assert_eq!(rebound.len(), 4 * quarter);
        for t in 0..2 * quarter {
            assert_eq!(surge.get(t), rebound.get(t));
        }
        assert_eq!(surge.get(0), &[0.1, 0.0]);
        assert_eq!(surge.get(quarter), &[0.0, 0.2]);
        assert_eq!(surge.get(2 * quarter), &[0.0, 1.0]);
        assert_eq!(rebound.get(2 * quarter), &[0.4, 0.2]);
        assert_eq!(surge.get(4 * quarter - 1), &[0.0, 1.0]);
    }

    #[test]
    fn sequence_files_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sequence.csv");
        let run = gen_bounded_variation(64, 0.5, 17, 3).unwrap();
        write_sequence(&path, &run.sequence).unwrap();
        let parsed = read_sequence(&path).unwrap();
        assert_eq!(parsed.len(), run.sequence.len());
        for (u, v) in parsed.vectors().iter().zip(run.sequence.vectors()) {
            for (x, y) in u.iter().zip(v) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn malformed_sequence_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,u_0,u_1\n1,0.5\n").unwrap();
        assert!(read_sequence(&path).is_err());
        std::fs::write(&path, "step,u_0,u_1\n1,0.5,0.0\n").unwrap();
        assert!(read_sequence(&path).is_err());
    }

    #[test]
    fn utility_sequences_validate_their_entries() {
        assert!(UtilitySequence::new(vec![]).is_err());
        assert!(UtilitySequence::new(vec![vec![0.5]]).is_err());
        assert!(UtilitySequence::new(vec![vec![1.5, 0.0]]).is_err());
        assert!(UtilitySequence::new(vec![vec![f64::NAN, 0.0]]).is_err());
        assert!(UtilitySequence::new(vec![vec![0.1, 0.0], vec![0.1]]).is_err());
    }
}
