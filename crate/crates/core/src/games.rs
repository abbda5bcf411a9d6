//! Repeated normal-form games under ranking feedback.
//!
//! A mediator runs one ranking-feedback learner per player. Each round it
//! computes every player's utility basis from the current strategy profile
//! (exact expected utilities under full information; empirical averages
//! over sampled opponent joint actions under bandit feedback), samples each
//! player's ranking independently, and updates each learner. The
//! time-average joint strategy converges to a coarse correlated
//! equilibrium, whose exploitability equals the largest per-player average
//! external regret — an algebraic identity this module computes from both
//! sides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::learners::{learner_propose, learner_update, FeedbackMode, LearnerConfig, LearnerState};
use crate::metrics::{checkpoints, external_regret, variation, Norm};
use crate::ranking::sample_ranking;
use crate::stats::KahanSum;

/// Dense joint-action tensors keep every computation exact; this caps the
/// total joint-action count so they stay desk-sized.
pub const MAX_JOINT_ACTIONS: usize = 1_000_000;

/// A finite normal-form game: per-player utility tensors over joint
/// actions, stored flattened in row-major order (the last player's action
/// varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormGame {
    action_sizes: Vec<usize>,
    strides: Vec<usize>,
    utilities: Vec<Vec<f64>>,
}

fn joint_size(action_sizes: &[usize]) -> Result<usize> {
    let mut size = 1usize;
    for &n in action_sizes {
        size = size
            .checked_mul(n)
            .filter(|&s| s <= MAX_JOINT_ACTIONS)
            .ok_or_else(|| {
                Error::InvalidGame(format!(
                    "joint action space exceeds the {MAX_JOINT_ACTIONS} cap"
                ))
            })?;
    }
    Ok(size)
}

fn strides_of(action_sizes: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; action_sizes.len()];
    for i in (0..action_sizes.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * action_sizes[i + 1];
    }
    strides
}

impl NormalFormGame {
    /// `utilities[i]` is player `i`'s flattened tensor; every entry must
    /// lie in `[-1, 1]`.
    pub fn new(action_sizes: Vec<usize>, utilities: Vec<Vec<f64>>) -> Result<Self> {
        if action_sizes.is_empty() {
            return Err(Error::InvalidGame(
                "a game needs at least one player".into(),
            ));
        }
        if let Some(&n) = action_sizes.iter().find(|&&n| n < 2) {
            return Err(Error::ActionSetTooSmall(n));
        }
        let size = joint_size(&action_sizes)?;
        if utilities.len() != action_sizes.len() {
            return Err(Error::InvalidGame(format!(
                "{} players but {} utility tensors",
                action_sizes.len(),
                utilities.len()
            )));
        }
        for tensor in &utilities {
            if tensor.len() != size {
                return Err(Error::InvalidGame(format!(
                    "utility tensor has {} entries, expected {size}",
                    tensor.len()
                )));
            }
            for (index, &value) in tensor.iter().enumerate() {
                if !value.is_finite() {
                    return Err(Error::NonFiniteUtility(index));
                }
                if !(-1.0..=1.0).contains(&value) {
                    return Err(Error::UtilityOutOfRange { index, value });
                }
            }
        }
        let strides = strides_of(&action_sizes);
        Ok(Self {
            action_sizes,
            strides,
            utilities,
        })
    }

    /// Two players match or mismatch a coin: the first earns +1 on a match
    /// and -1 otherwise, the second the opposite. Uniform play is the
    /// unique Nash equilibrium.
    pub fn matching_pennies() -> Self {
        Self::new(
            vec![2, 2],
            vec![vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]],
        )
        .expect("constant construction")
    }

    /// A game with every utility entry drawn uniformly from `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(action_sizes: Vec<usize>, rng: &mut R) -> Result<Self> {
        let size = joint_size(&action_sizes)?;
        let utilities = (0..action_sizes.len())
            .map(|_| (0..size).map(|_| rng.random_range(-1.0..=1.0)).collect())
            .collect();
        Self::new(action_sizes, utilities)
    }

    pub fn player_count(&self) -> usize {
        self.action_sizes.len()
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    /// Total number of joint actions.
    pub fn joint_action_count(&self) -> usize {
        self.utilities[0].len()
    }

    /// Player `i`'s flattened utility tensor.
    pub fn utility_tensor(&self, player: usize) -> &[f64] {
        &self.utilities[player]
    }

    /// Flattened index of a joint action.
    pub fn joint_index(&self, joint: &[usize]) -> usize {
        joint.iter().zip(&self.strides).map(|(&a, &s)| a * s).sum()
    }

    /// Player `i`'s action inside a flattened joint index.
    fn coordinate(&self, index: usize, player: usize) -> usize {
        index / self.strides[player] % self.action_sizes[player]
    }

    fn check_player(&self, player: usize) -> Result<()> {
        if player >= self.player_count() {
            return Err(Error::InvalidGame(format!(
                "player {player} out of range for {} players",
                self.player_count()
            )));
        }
        Ok(())
    }

    fn check_profile(&self, profile: &[Vec<f64>]) -> Result<()> {
        if profile.len() != self.player_count() {
            return Err(Error::InvalidConfig(format!(
                "profile has {} strategies for {} players",
                profile.len(),
                self.player_count()
            )));
        }
        for (strategy, &n) in profile.iter().zip(&self.action_sizes) {
            if strategy.len() != n {
                return Err(Error::UtilityLengthMismatch {
                    expected: n,
                    got: strategy.len(),
                });
            }
        }
        Ok(())
    }
}

/// Player `i`'s expected utility per own action when the opponents play
/// their mixed strategies independently:
/// `u_i(a_i) = sum over opponent joints of U_i(a_i, a_-i) * prod_j pi_j(a_j)`.
///
/// Two-player games contract a single axis directly; larger games walk the
/// full joint space. Both accumulate compensated and in a fixed order, so
/// the result is deterministic.
pub fn expected_utility_vector(
    game: &NormalFormGame,
    player: usize,
    profile: &[Vec<f64>],
) -> Result<Vec<f64>> {
    game.check_player(player)?;
    game.check_profile(profile)?;
    let own = game.action_sizes[player];

    if game.player_count() == 2 {
        let other = 1 - player;
        let mut out = Vec::with_capacity(own);
        for a in 0..own {
            let mut sum = KahanSum::new();
            for (b, &p) in profile[other].iter().enumerate() {
                let joint = if player == 0 {
                    a * game.strides[0] + b
                } else {
                    b * game.strides[0] + a
                };
                sum.add(game.utilities[player][joint] * p);
            }
            out.push(sum.value());
        }
        return Ok(out);
    }

    let mut sums = vec![KahanSum::new(); own];
    for (index, &value) in game.utilities[player].iter().enumerate() {
        let mut weight = 1.0;
        for j in 0..game.player_count() {
            if j != player {
                weight *= profile[j][game.coordinate(index, j)];
            }
        }
        sums[game.coordinate(index, player)].add(value * weight);
    }
    Ok(sums.into_iter().map(|s| s.value()).collect())
}

/// Player `i`'s empirical utility per own action, averaged over sampled
/// opponent joint actions. Each draw is a full joint-action vector whose
/// `player` coordinate is ignored (it is overwritten by each candidate
/// action in turn).
pub fn bandit_game_feedback(
    game: &NormalFormGame,
    player: usize,
    opponent_draws: &[Vec<usize>],
) -> Result<Vec<f64>> {
    game.check_player(player)?;
    if opponent_draws.is_empty() {
        return Err(Error::InvalidConfig(
            "no opponent draws to average over".into(),
        ));
    }
    for draw in opponent_draws {
        if draw.len() != game.player_count() {
            return Err(Error::InvalidConfig(format!(
                "opponent draw has {} coordinates for {} players",
                draw.len(),
                game.player_count()
            )));
        }
        for (j, (&a, &n)) in draw.iter().zip(&game.action_sizes).enumerate() {
            if j != player && a >= n {
                return Err(Error::ActionOutOfRange { index: a, count: n });
            }
        }
    }

    let own = game.action_sizes[player];
    let stride = game.strides[player];
    let mut out = Vec::with_capacity(own);
    for a in 0..own {
        let mut sum = KahanSum::new();
        for draw in opponent_draws {
            let mut index = a * stride;
            for (j, &b) in draw.iter().enumerate() {
                if j != player {
                    index += b * game.strides[j];
                }
            }
            sum.add(game.utilities[player][index]);
        }
        out.push(sum.value() / opponent_draws.len() as f64);
    }
    Ok(out)
}

/// Running time-average of product strategy profiles as a dense
/// distribution over joint actions.
#[derive(Debug, Clone)]
pub struct JointStrategy {
    action_sizes: Vec<usize>,
    accumulator: Vec<KahanSum>,
    steps: usize,
}

impl JointStrategy {
    pub fn new(action_sizes: Vec<usize>) -> Result<Self> {
        if action_sizes.is_empty() {
            return Err(Error::InvalidGame(
                "a game needs at least one player".into(),
            ));
        }
        let size = joint_size(&action_sizes)?;
        Ok(Self {
            action_sizes,
            accumulator: vec![KahanSum::new(); size],
            steps: 0,
        })
    }

    /// Accumulates one product profile: adds `prod_i pi_i(a_i)` to every
    /// joint-action cell.
    pub fn push(&mut self, profile: &[Vec<f64>]) -> Result<()> {
        if profile.len() != self.action_sizes.len() {
            return Err(Error::InvalidConfig(format!(
                "profile has {} strategies for {} players",
                profile.len(),
                self.action_sizes.len()
            )));
        }
        for (strategy, &n) in profile.iter().zip(&self.action_sizes) {
            if strategy.len() != n {
                return Err(Error::UtilityLengthMismatch {
                    expected: n,
                    got: strategy.len(),
                });
            }
        }
        let strides = strides_of(&self.action_sizes);
        for (index, cell) in self.accumulator.iter_mut().enumerate() {
            let mut product = 1.0;
            for (j, strategy) in profile.iter().enumerate() {
                product *= strategy[index / strides[j] % self.action_sizes[j]];
            }
            cell.add(product);
        }
        self.steps += 1;
        Ok(())
    }

    /// Steps accumulated so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn action_sizes(&self) -> &[usize] {
        &self.action_sizes
    }

    /// The time-average joint distribution.
    pub fn average(&self) -> Result<Vec<f64>> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("no profiles accumulated yet".into()));
        }
        Ok(self
            .accumulator
            .iter()
            .map(|s| s.value() / self.steps as f64)
            .collect())
    }
}

/// Exploitability of a joint distribution: the largest gain any player can
/// secure by deviating to their best pure action while the mediator still
/// draws everyone else from the joint. Signed — a product distribution can
/// never make it negative, but an arbitrary correlated joint can.
pub fn cce_exploitability(game: &NormalFormGame, joint: &[f64]) -> Result<f64> {
    let size = game.joint_action_count();
    if joint.len() != size {
        return Err(Error::UtilityLengthMismatch {
            expected: size,
            got: joint.len(),
        });
    }
    let mut total = KahanSum::new();
    for &p in joint {
        if !p.is_finite() || p < -1e-12 {
            return Err(Error::InvalidProposalProbability(p));
        }
        total.add(p);
    }
    if (total.value() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "joint distribution sums to {}, not 1",
            total.value()
        )));
    }

    let mut best = f64::NEG_INFINITY;
    for player in 0..game.player_count() {
        let tensor = game.utility_tensor(player);
        let stride = game.strides[player];
        let mut baseline = KahanSum::new();
        for (index, &p) in joint.iter().enumerate() {
            baseline.add(tensor[index] * p);
        }
        for deviation in 0..game.action_sizes[player] {
            let mut value = KahanSum::new();
            for (index, &p) in joint.iter().enumerate() {
                // Replacing player `i`'s action in a flattened joint index
                // shifts it by (deviation - a_i) * stride.
                let own = game.coordinate(index, player);
                let target = (index as isize
                    + (deviation as isize - own as isize) * stride as isize)
                    as usize;
                value.add(tensor[target] * p);
            }
            best = best.max(value.value() - baseline.value());
        }
    }
    Ok(best)
}

/// Everything one repeated-game run produced. Step-aligned per player:
/// `strategies[i][t]` is the mixture player `i`'s proposal was drawn from
/// at step `t + 1` and `utilities[i][t]` their exact expected utility
/// vector under that round's profile.
#[derive(Debug, Clone)]
pub struct GameTrace {
    pub feedback: FeedbackMode,
    pub action_sizes: Vec<usize>,
    pub strategies: Vec<Vec<Vec<f64>>>,
    pub utilities: Vec<Vec<Vec<f64>>>,
    /// Final external regret per player against `utilities`.
    pub external_regrets: Vec<f64>,
    pub checkpoints: Vec<usize>,
    /// Exploitability of the running-average joint strategy at each
    /// checkpoint.
    pub checkpoint_exploitability: Vec<f64>,
    /// Exploitability of the final time-average joint strategy.
    pub final_exploitability: f64,
    /// `max_i external_regret_i / T` — algebraically equal to
    /// `final_exploitability` when both are computed from expected
    /// utilities, up to accumulation rounding.
    pub max_average_regret: f64,
    /// Per player: summed step-to-step drift of the expected utility
    /// vectors (Euclidean norm).
    pub utility_variation: Vec<f64>,
    /// Bound on each player's utility variation from the strategy drifts:
    /// `sqrt(max_j |A_j|) * prod_j |A_j| * sum over steps and players of
    /// the total-variation strategy drift`.
    pub profile_drift_bound: f64,
}

/// Samples one index from a mixed strategy by inverse transform.
fn sample_index<R: Rng + ?Sized>(strategy: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    for (a, &p) in strategy.iter().enumerate() {
        cumulative += p;
        if draw < cumulative {
            return a;
        }
    }
    strategy.len() - 1
}

/// Per-player empirical-average state for the `avg_bandit` ranking basis:
/// utility estimates weighted by how often each action was proposed.
struct EmpiricalBasis {
    weighted: Vec<KahanSum>,
    counts: Vec<u64>,
}

impl EmpiricalBasis {
    fn new(n: usize) -> Self {
        Self {
            weighted: vec![KahanSum::new(); n],
            counts: vec![0; n],
        }
    }

    fn absorb(&mut self, estimate: &[f64], proposal_entries: &[usize]) {
        for &a in proposal_entries {
            self.weighted[a].add(estimate[a]);
            self.counts[a] += 1;
        }
    }

    fn vector(&self) -> Vec<f64> {
        self.weighted
            .iter()
            .zip(&self.counts)
            .map(|(w, &c)| if c == 0 { 0.0 } else { w.value() / c as f64 })
            .collect()
    }
}

/// Runs one learner per player for `horizon` rounds. All learners must
/// share the feedback mode and temperature; each must be sized for its
/// player's action set.
///
/// Per round, the draw order is fixed for reproducibility: proposals for
/// players `0..N`, then (bandit only) each player's `K` opponent joint
/// draws with coordinates sampled in ascending player order, then the `N`
/// rankings.
pub fn run_game(
    game: &NormalFormGame,
    configs: &[LearnerConfig],
    horizon: usize,
    seed: u64,
) -> Result<GameTrace> {
    let n = game.player_count();
    if configs.len() != n {
        return Err(Error::InvalidConfig(format!(
            "{} learner configs for {n} players",
            configs.len()
        )));
    }
    let feedback = configs[0].feedback();
    let tau = configs[0].tau();
    for (i, config) in configs.iter().enumerate() {
        if config.feedback() != feedback {
            return Err(Error::InvalidConfig(format!(
                "player {i} runs {} while player 0 runs {}",
                config.feedback().name(),
                feedback.name()
            )));
        }
        if config.tau() != tau {
            return Err(Error::TemperatureMismatch {
                learner: config.tau(),
                environment: tau,
            });
        }
        if config.actions().size() != game.action_sizes()[i] {
            return Err(Error::UtilityLengthMismatch {
                expected: game.action_sizes()[i],
                got: config.actions().size(),
            });
        }
    }
    let params = crate::ranking::RankingParams::new(tau)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states: Vec<LearnerState> = configs
        .iter()
        .map(LearnerState::new)
        .collect::<Result<_>>()?;
    let mut joint = JointStrategy::new(game.action_sizes().to_vec())?;
    let mut average_basis: Vec<Vec<KahanSum>> = (0..n)
        .map(|i| vec![KahanSum::new(); game.action_sizes()[i]])
        .collect();
    let mut empirical_basis: Vec<EmpiricalBasis> = game
        .action_sizes()
        .iter()
        .map(|&a| EmpiricalBasis::new(a))
        .collect();

    let marks = checkpoints(horizon);
    let mut next_mark = 0usize;
    let mut trace = GameTrace {
        feedback,
        action_sizes: game.action_sizes().to_vec(),
        strategies: vec![Vec::with_capacity(horizon); n],
        utilities: vec![Vec::with_capacity(horizon); n],
        external_regrets: vec![0.0; n],
        checkpoints: marks.clone(),
        checkpoint_exploitability: Vec::with_capacity(marks.len()),
        final_exploitability: 0.0,
        max_average_regret: 0.0,
        utility_variation: vec![0.0; n],
        profile_drift_bound: 0.0,
    };

    for t in 1..=horizon {
        let profile: Vec<Vec<f64>> = states.iter().map(|s| s.strategy().to_vec()).collect();

        let proposals: Vec<_> = states
            .iter()
            .zip(configs)
            .map(|(state, config)| learner_propose(state, config, &mut rng))
            .collect();

        let expected: Vec<Vec<f64>> = (0..n)
            .map(|i| expected_utility_vector(game, i, &profile))
            .collect::<Result<_>>()?;

        // Ranking basis per player under the shared feedback mode.
        let mut bases: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let basis = match feedback {
                FeedbackMode::InstFull => expected[i].clone(),
                FeedbackMode::AvgFull => {
                    for (sum, &v) in average_basis[i].iter_mut().zip(&expected[i]) {
                        sum.add(v);
                    }
                    average_basis[i]
                        .iter()
                        .map(|s| s.value() / t as f64)
                        .collect()
                }
                FeedbackMode::InstBandit | FeedbackMode::AvgBandit => {
                    let draws: Vec<Vec<usize>> = (0..configs[i].k())
                        .map(|_| {
                            (0..n)
                                .map(|j| {
                                    if j == i {
                                        0
                                    } else {
                                        sample_index(&profile[j], &mut rng)
                                    }
                                })
                                .collect()
                        })
                        .collect();
                    let estimate = bandit_game_feedback(game, i, &draws)?;
                    if feedback == FeedbackMode::InstBandit {
                        estimate
                    } else {
                        empirical_basis[i].absorb(&estimate, proposals[i].entries());
                        empirical_basis[i].vector()
                    }
                }
            };
            bases.push(basis);
        }

        states = states
            .into_iter()
            .zip(bases.iter().zip(&proposals).zip(configs))
            .map(|(state, ((basis, proposal), config))| {
                let sigma = sample_ranking(basis, params, proposal, &mut rng)?;
                learner_update(state, config, &sigma)
            })
            .collect::<Result<_>>()?;

        joint.push(&profile)?;
        for i in 0..n {
            trace.strategies[i].push(profile[i].clone());
            trace.utilities[i].push(expected[i].clone());
        }

        if next_mark < marks.len() && marks[next_mark] == t {
            let average = joint.average()?;
            trace
                .checkpoint_exploitability
                .push(cce_exploitability(game, &average)?);
            next_mark += 1;
        }
    }

    if horizon > 0 {
        trace.final_exploitability = cce_exploitability(game, &joint.average()?)?;
        for i in 0..n {
            trace.external_regrets[i] = external_regret(&trace.utilities[i], &trace.strategies[i])?;
            trace.utility_variation[i] = variation(&trace.utilities[i], Norm::L2);
        }
        trace.max_average_regret = trace
            .external_regrets
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &r| acc.max(r / horizon as f64));

        let mut drift = KahanSum::new();
        for i in 0..n {
            for window in trace.strategies[i].windows(2) {
                for (a, b) in window[0].iter().zip(&window[1]) {
                    drift.add((a - b).abs());
                }
            }
        }
        let max_actions = *game.action_sizes().iter().max().expect("nonempty") as f64;
        let joint_count = game.joint_action_count() as f64;
        trace.profile_drift_bound = max_actions.sqrt() * joint_count * drift.value();
    }
    Ok(trace)
}

// --- Game files ------------------------------------------------------------

/// Writes a game as structured comma-separated text: a player-count line,
/// an action-sizes line, then one flattened row-major tensor line per
/// player. Floats use `{:.16e}` so a read-back is bitwise identical.
pub fn write_game<W: Write>(writer: &mut W, game: &NormalFormGame) -> Result<()> {
    writeln!(writer, "players,{}", game.player_count())?;
    let sizes: Vec<String> = game.action_sizes().iter().map(|n| n.to_string()).collect();
    writeln!(writer, "actions,{}", sizes.join(","))?;
    for (i, tensor) in game.utilities.iter().enumerate() {
        let cells: Vec<String> = tensor.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(writer, "payoffs,{i},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_game_file<P: AsRef<Path>>(path: P, game: &NormalFormGame) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_game(&mut file, game)
}

pub fn read_game<R: BufRead>(reader: R) -> Result<NormalFormGame> {
    let mut lines = reader.lines();
    let player_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing players line".into()))??;
    let players: usize = player_line
        .strip_prefix("players,")
        .ok_or_else(|| Error::Parse(format!("expected `players,N`, got `{player_line}`")))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad player count: {e}")))?;

    let action_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing actions line".into()))??;
    let action_sizes: Vec<usize> = action_line
        .strip_prefix("actions,")
        .ok_or_else(|| Error::Parse(format!("expected `actions,...`, got `{action_line}`")))?
        .split(',')
        .map(|c| {
            c.parse()
                .map_err(|e| Error::Parse(format!("bad action size: {e}")))
        })
        .collect::<Result<_>>()?;
    if action_sizes.len() != players {
        return Err(Error::Parse(format!(
            "{} action sizes for {players} players",
            action_sizes.len()
        )));
    }

    let mut utilities = Vec::with_capacity(players);
    for i in 0..players {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing payoffs line for player {i}")))??;
        let rest = line
            .strip_prefix(&format!("payoffs,{i},"))
            .ok_or_else(|| Error::Parse(format!("expected `payoffs,{i},...`, got `{line}`")))?;
        let tensor: Vec<f64> = rest
            .split(',')
            .map(|c| {
                c.parse()
                    .map_err(|e| Error::Parse(format!("bad payoff: {e}")))
            })
            .collect::<Result<_>>()?;
        utilities.push(tensor);
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Parse(format!(
            "unexpected trailing line `{}`",
            extra?
        )));
    }
    NormalFormGame::new(action_sizes, utilities)
}

pub fn read_game_file<P: AsRef<Path>>(path: P) -> Result<NormalFormGame> {
    read_game(BufReader::new(std::fs::File::open(path)?))
}
