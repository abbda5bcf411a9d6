//! Expands a config into (grid point x seed) runs, executes them in
//! parallel, and writes per-run traces plus `summary.csv` / `selected.csv`.
//!
//! Every run is deterministic given the config and seed. The environment
//! generator is seeded with the raw seed; the learner's sampling stream is
//! seeded with a bit-mixed copy so the two streams are decorrelated even
//! though they share the seed list.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ranklearn::environments::{
    gen_bounded_variation_scaled, gen_indistinguishable_pair, gen_noise_shift,
    gen_three_phase_instance, read_sequence, PairInstance, RankingEnvironment, UtilitySequence,
};
use ranklearn::estimation::{estimation_error_bound, EstimationBoundInputs};
use ranklearn::games::{read_game_file, run_game, GameTrace, NormalFormGame};
use ranklearn::learners::{
    avg_bandit_block, avg_bandit_gamma, avg_bandit_window, avg_full_window, inst_bandit_gamma,
    inst_bandit_window, inst_full_window, run_learner, FeedbackMode, LearnerConfig, Trace,
};
use ranklearn::metrics::{self, Norm, RegretTrace};
use ranklearn::oracles::{default_lambda, OracleConfig};
use ranklearn::ranking::{ActionSet, RankingParams};

use crate::config::{
    CountSetting, EnvSpec, ExperimentConfig, GameSpec, GridSpec, LearnerSpec, Scenario, Setting,
};
use crate::ingest::ingest_scores;

/// Decorrelates the learner's sampling stream from the environment
/// generator: both are keyed by the same user-facing seed, so the learner
/// gets a SplitMix64-mixed copy instead of the raw value.
pub fn learner_stream_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One point of the hyperparameter search: each field is either pinned by
/// the grid list or inherits the base learner setting.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub id: String,
    pub window_m: CountSetting,
    pub gamma: Setting,
    pub block_m: CountSetting,
    pub lambda: Setting,
}

/// The cartesian product of the grid lists, in deterministic order. Without
/// any lists this is the single base point `g0`.
pub fn grid_points(learner: &LearnerSpec, grid: &GridSpec) -> Vec<GridPoint> {
    let windows: Vec<CountSetting> = match &grid.window_m {
        Some(values) => values.iter().map(|&v| CountSetting::Value(v)).collect(),
        None => vec![learner.window_m],
    };
    let gammas: Vec<Setting> = match &grid.gamma {
        Some(values) => values.iter().map(|&v| Setting::Value(v)).collect(),
        None => vec![learner.gamma],
    };
    let blocks: Vec<CountSetting> = match &grid.block_m {
        Some(values) => values.iter().map(|&v| CountSetting::Value(v)).collect(),
        None => vec![learner.block_m],
    };
    let lambdas: Vec<Setting> = match &grid.lambda {
        Some(values) => values.iter().map(|&v| Setting::Value(v)).collect(),
        None => vec![learner.lambda],
    };
    let mut points = Vec::new();
    for &window_m in &windows {
        for &gamma in &gammas {
            for &block_m in &blocks {
                for &lambda in &lambdas {
                    points.push(GridPoint {
                        id: format!("g{}", points.len()),
                        window_m,
                        gamma,
                        block_m,
                        lambda,
                    });
                }
            }
        }
    }
    points
}

/// Concrete hyperparameters after `auto` resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedParams {
    pub lambda: f64,
    pub window_m: usize,
    pub gamma: f64,
    pub block_m: Option<usize>,
}

/// Resolves one grid point against a horizon, action count, and variation
/// budget. `auto` maps to the horizon-tuned scaling for the feedback mode;
/// full-information modes always use `gamma = 0`.
pub fn resolve_params(
    learner: &LearnerSpec,
    point: &GridPoint,
    horizon: usize,
    actions: usize,
    delta: f64,
    variation: f64,
) -> Result<ResolvedParams> {
    let lambda = match point.lambda {
        Setting::Value(v) => v,
        Setting::Auto => default_lambda(horizon),
    };
    let window_m = match point.window_m {
        CountSetting::Value(v) => v,
        CountSetting::Auto => match learner.feedback {
            FeedbackMode::InstFull => inst_full_window(horizon, variation, actions, delta),
            FeedbackMode::InstBandit => {
                let k = learner.k.ok_or_else(|| anyhow!("bandit modes need `k`"))?;
                inst_bandit_window(horizon, variation, actions, k, delta)
            }
            FeedbackMode::AvgFull => avg_full_window(horizon, actions, delta),
            FeedbackMode::AvgBandit => avg_bandit_window(horizon, actions, delta),
        },
    };
    let gamma = if learner.feedback.is_bandit() {
        match point.gamma {
            Setting::Value(v) => v,
            Setting::Auto => match learner.feedback {
                FeedbackMode::InstBandit => inst_bandit_gamma(horizon, variation),
                FeedbackMode::AvgBandit => {
                    let probe = OracleConfig::new(learner.oracle, lambda, actions.max(2))?;
                    avg_bandit_gamma(probe.declared_l(), horizon, variation)
                }
                _ => unreachable!(),
            },
        }
    } else {
        0.0
    };
    let block_m = match learner.feedback {
        FeedbackMode::AvgBandit => Some(match point.block_m {
            CountSetting::Value(v) => v,
            CountSetting::Auto => avg_bandit_block(horizon, variation, actions, delta, window_m),
        }),
        _ => None,
    };
    Ok(ResolvedParams {
        lambda,
        window_m,
        gamma,
        block_m,
    })
}

/// Builds the learner config for one resolved point.
pub fn build_learner_config(
    learner: &LearnerSpec,
    resolved: &ResolvedParams,
    actions: usize,
    tau: f64,
) -> Result<LearnerConfig> {
    let set = ActionSet::new(actions)?;
    let oracle = OracleConfig::new(learner.oracle, resolved.lambda, actions)?;
    let config = match learner.feedback {
        FeedbackMode::InstFull => LearnerConfig::inst_full(set, resolved.window_m, oracle, tau)?,
        FeedbackMode::InstBandit => LearnerConfig::inst_bandit(
            set,
            learner.k.ok_or_else(|| anyhow!("bandit modes need `k`"))?,
            resolved.gamma,
            resolved.window_m,
            oracle,
            tau,
        )?,
        FeedbackMode::AvgFull => LearnerConfig::avg_full(set, resolved.window_m, oracle, tau)?,
        FeedbackMode::AvgBandit => LearnerConfig::avg_bandit(
            set,
            learner.k.ok_or_else(|| anyhow!("bandit modes need `k`"))?,
            resolved.gamma,
            resolved.window_m,
            resolved.block_m.expect("avg_bandit resolves a block size"),
            oracle,
            tau,
        )?,
    };
    Ok(config)
}

/// A generated or loaded utility sequence plus its declared variation
/// budget, when the generator enforces one.
pub struct BuiltSequence {
    pub sequence: UtilitySequence,
    pub budget: Option<f64>,
}

/// Materializes the utility sequence for one seed.
pub fn build_sequence(
    env: &EnvSpec,
    horizon: usize,
    actions: Option<usize>,
    seed: u64,
) -> Result<BuiltSequence> {
    let built = match env {
        EnvSpec::BoundedVariation { q, scale } => {
            let a = actions.ok_or_else(|| anyhow!("generator environments need `actions`"))?;
            let generated = gen_bounded_variation_scaled(horizon, *q, *scale, seed, a)?;
            BuiltSequence {
                budget: Some(generated.budget.limit(horizon)),
                sequence: generated.sequence,
            }
        }
        EnvSpec::NoiseShift { sigma, kind } => {
            let a = actions.ok_or_else(|| anyhow!("generator environments need `actions`"))?;
            BuiltSequence {
                sequence: gen_noise_shift(horizon, seed, *kind, *sigma, a)?,
                budget: None,
            }
        }
        EnvSpec::PairLow => BuiltSequence {
            sequence: gen_indistinguishable_pair(PairInstance::LowMean, horizon, seed)?,
            budget: None,
        },
        EnvSpec::PairHigh => BuiltSequence {
            sequence: gen_indistinguishable_pair(PairInstance::HighMean, horizon, seed)?,
            budget: None,
        },
        EnvSpec::ThreePhase { ending } => BuiltSequence {
            sequence: gen_three_phase_instance(*ending, horizon.div_ceil(4))?,
            budget: None,
        },
        EnvSpec::SequenceFile(path) => BuiltSequence {
            sequence: read_sequence(path)?,
            budget: None,
        },
        EnvSpec::Scores(path) => BuiltSequence {
            sequence: ingest_scores(path)?.sequence,
            budget: None,
        },
    };
    if built.sequence.len() < horizon {
        bail!(
            "sequence has {} steps, horizon wants {horizon}",
            built.sequence.len()
        );
    }
    if let Some(a) = actions {
        if built.sequence.action_count() != a {
            bail!(
                "sequence has {} actions, config says {a}",
                built.sequence.action_count()
            );
        }
    }
    Ok(built)
}

fn join_floats(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn join_indices(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(";")
}

fn split_floats(cell: &str) -> Result<Vec<f64>> {
    cell.split(';')
        .map(|v| v.parse().map_err(|e| anyhow!("bad float `{v}`: {e}")))
        .collect()
}

fn split_indices(cell: &str) -> Result<Vec<usize>> {
    cell.split(';')
        .map(|v| v.parse().map_err(|e| anyhow!("bad index `{v}`: {e}")))
        .collect()
}

const TRACE_HEADER: &str = "t,proposal,ranking,strategy,estimate,true_utility,\
realized_avg_utility,cum_external_regret,cum_bandit_regret,cum_variation";

/// Writes one online trace. Floats are printed with 17 significant digits,
/// so reading the file back reproduces every value bit for bit.
pub fn write_trace(path: &Path, trace: &Trace, regrets: &RegretTrace) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating trace {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{TRACE_HEADER}")?;
    for t in 0..trace.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            t + 1,
            join_indices(trace.proposals[t].entries()),
            join_indices(trace.rankings[t].order()),
            join_floats(trace.strategies[t].iter().copied()),
            join_floats(trace.estimates[t].iter().copied()),
            join_floats(trace.true_utilities[t].iter().copied()),
            trace.realized_avg_utilities[t],
            regrets.cumulative_external()[t],
            regrets.cumulative_bandit()[t],
            regrets.cumulative_variation()[t],
        )?;
    }
    out.flush()?;
    Ok(())
}

/// An online trace read back from disk, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrace {
    pub steps: Vec<usize>,
    pub proposals: Vec<Vec<usize>>,
    pub rankings: Vec<Vec<usize>>,
    pub strategies: Vec<Vec<f64>>,
    pub estimates: Vec<Vec<f64>>,
    pub true_utilities: Vec<Vec<f64>>,
    pub realized_avg_utilities: Vec<f64>,
    pub cumulative_external: Vec<f64>,
    pub cumulative_bandit: Vec<f64>,
    pub cumulative_variation: Vec<f64>,
}

impl StoredTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Reads a trace written by [`write_trace`].
pub fn read_trace(path: &Path) -> Result<StoredTrace> {
    let file =
        std::fs::File::open(path).with_context(|| format!("opening trace {}", path.display()))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header = reader.headers().context("reading trace header")?;
    let expected: Vec<&str> = TRACE_HEADER.split(',').collect();
    if header.iter().collect::<Vec<_>>() != expected {
        bail!("unexpected trace header in {}", path.display());
    }
    let mut out = StoredTrace {
        steps: Vec::new(),
        proposals: Vec::new(),
        rankings: Vec::new(),
        strategies: Vec::new(),
        estimates: Vec::new(),
        true_utilities: Vec::new(),
        realized_avg_utilities: Vec::new(),
        cumulative_external: Vec::new(),
        cumulative_bandit: Vec::new(),
        cumulative_variation: Vec::new(),
    };
    for (index, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("reading trace row {}", index + 1))?;
        if record.len() != expected.len() {
            bail!("trace row {} has {} cells", index + 1, record.len());
        }
        let cell = |i: usize| record.get(i).unwrap();
        out.steps.push(cell(0).parse()?);
        out.proposals.push(split_indices(cell(1))?);
        out.rankings.push(split_indices(cell(2))?);
        out.strategies.push(split_floats(cell(3))?);
        out.estimates.push(split_floats(cell(4))?);
        out.true_utilities.push(split_floats(cell(5))?);
        out.realized_avg_utilities.push(cell(6).parse()?);
        out.cumulative_external.push(cell(7).parse()?);
        out.cumulative_bandit.push(cell(8).parse()?);
        out.cumulative_variation.push(cell(9).parse()?);
    }
    Ok(out)
}

/// Writes one game trace: per step, each player's mixed strategy and
/// expected utility vector.
pub fn write_game_trace(path: &Path, trace: &GameTrace) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating trace {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    write!(out, "t")?;
    for player in 0..trace.action_sizes.len() {
        write!(out, ",strategy_{player},utility_{player}")?;
    }
    writeln!(out)?;
    let horizon = trace.strategies.first().map_or(0, Vec::len);
    for t in 0..horizon {
        write!(out, "{}", t + 1)?;
        for player in 0..trace.action_sizes.len() {
            write!(
                out,
                ",{},{}",
                join_floats(trace.strategies[player][t].iter().copied()),
                join_floats(trace.utilities[player][t].iter().copied()),
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the exploitability-at-checkpoints curve of a game run.
pub fn write_exploitability(path: &Path, trace: &GameTrace) -> Result<()> {
    use std::io::Write;
    let file =
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "t,exploitability")?;
    for (t, value) in trace
        .checkpoints
        .iter()
        .zip(&trace.checkpoint_exploitability)
    {
        writeln!(out, "{t},{value:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

/// One finished online run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub grid_id: String,
    pub seed: u64,
    pub resolved: ResolvedParams,
    pub realized_variation: f64,
    pub final_external: f64,
    pub final_bandit: f64,
    /// `final_external / horizon` — the selection score.
    pub final_avg_regret: f64,
    pub bound_value: f64,
    pub bound_applicable: bool,
    pub trace_path: PathBuf,
}

/// One finished game run.
#[derive(Debug, Clone)]
pub struct GameRunRecord {
    pub grid_id: String,
    pub seed: u64,
    pub resolved: ResolvedParams,
    pub final_exploitability: f64,
    /// `max_i R_i / T` — the selection score for game runs.
    pub max_average_regret: f64,
    pub max_external_regret: f64,
    pub trace_path: PathBuf,
}

/// Everything `run` produced: records in deterministic (grid, seed) order
/// plus the winning grid point.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub grid: Vec<GridPoint>,
    pub online: Vec<RunRecord>,
    pub games: Vec<GameRunRecord>,
    pub best_grid: String,
    pub best_score: f64,
}

fn run_online_once(
    config: &ExperimentConfig,
    point: &GridPoint,
    seed: u64,
    out_dir: &Path,
) -> Result<RunRecord> {
    let env = config
        .env
        .as_ref()
        .ok_or_else(|| anyhow!("online runs need an environment"))?;
    let built = build_sequence(env, config.horizon, config.actions, seed)?;
    let actions = built.sequence.action_count();
    // Auto scalings want the variation budget; when the generator does not
    // declare one, fall back to the realized variation of this sequence.
    let variation = built.budget.unwrap_or_else(|| {
        metrics::variation(&built.sequence.vectors()[..config.horizon], Norm::L2)
    });
    let resolved = resolve_params(
        &config.learner,
        point,
        config.horizon,
        actions,
        config.delta,
        variation,
    )?;
    let learner = build_learner_config(&config.learner, &resolved, actions, config.tau)?;
    let ranking_env = RankingEnvironment::new(
        built.sequence,
        RankingParams::new(config.tau)?,
        config.learner.feedback.default_basis(),
    );
    let trace = run_learner(
        ranking_env,
        &learner,
        config.horizon,
        learner_stream_seed(seed),
    )?;
    let regrets = RegretTrace::compute(&trace.true_utilities, &trace.strategies, &trace.proposals)?;

    let trace_path = out_dir.join(format!(
        "trace_{}_{}_{}.csv",
        config.scenario.name(),
        point.id,
        seed
    ));
    write_trace(&trace_path, &trace, &regrets)?;

    // The estimation guarantee needs a positive per-action proposal floor:
    // 1 for full information, gamma/|A| under gamma-uniform exploration.
    let p = if config.learner.feedback.is_bandit() {
        resolved.gamma / actions as f64
    } else {
        1.0
    };
    let window_len = resolved.window_m.min(config.horizon);
    let (bound_value, bound_applicable) = if p > 0.0 {
        let start = trace.true_utilities.len().saturating_sub(window_len);
        let window_variation = metrics::variation(&trace.true_utilities[start..], Norm::LInf);
        let bound = estimation_error_bound(&EstimationBoundInputs {
            tau: config.tau,
            p,
            window_len,
            delta: config.delta,
            window_variation,
            action_count: actions,
        })?;
        (bound.value, bound.applicable)
    } else {
        (f64::INFINITY, false)
    };

    let final_external = regrets.final_external();
    Ok(RunRecord {
        grid_id: point.id.clone(),
        seed,
        resolved,
        realized_variation: regrets.final_variation(),
        final_external,
        final_bandit: regrets.final_bandit(),
        final_avg_regret: final_external / config.horizon as f64,
        bound_value,
        bound_applicable,
        trace_path,
    })
}

fn build_game(spec: &GameSpec) -> Result<NormalFormGame> {
    match spec {
        GameSpec::Random { action_sizes, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            Ok(NormalFormGame::random(action_sizes.clone(), &mut rng)?)
        }
        GameSpec::File(path) => Ok(read_game_file(path)?),
    }
}

fn run_game_once(
    config: &ExperimentConfig,
    game: &NormalFormGame,
    point: &GridPoint,
    seed: u64,
    out_dir: &Path,
) -> Result<GameRunRecord> {
    // No utility sequence exists before play, so auto scalings fall back to
    // the worst variation the model allows, `P = T`.
    let variation = config.horizon as f64;
    let configs: Vec<LearnerConfig> = game
        .action_sizes()
        .iter()
        .map(|&actions| {
            let resolved = resolve_params(
                &config.learner,
                point,
                config.horizon,
                actions,
                config.delta,
                variation,
            )?;
            build_learner_config(&config.learner, &resolved, actions, config.tau)
        })
        .collect::<Result<_>>()?;
    let resolved = resolve_params(
        &config.learner,
        point,
        config.horizon,
        game.action_sizes()[0],
        config.delta,
        variation,
    )?;
    let trace = run_game(game, &configs, config.horizon, learner_stream_seed(seed))?;

    let trace_path = out_dir.join(format!("trace_game_{}_{}.csv", point.id, seed));
    write_game_trace(&trace_path, &trace)?;
    write_exploitability(
        &out_dir.join(format!("exploitability_{}_{}.csv", point.id, seed)),
        &trace,
    )?;

    let max_external = trace
        .external_regrets
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GameRunRecord {
        grid_id: point.id.clone(),
        seed,
        resolved,
        final_exploitability: trace.final_exploitability,
        max_average_regret: trace.max_average_regret,
        max_external_regret: max_external,
        trace_path,
    })
}

fn optional_count(value: Option<usize>) -> String {
    value.map_or_else(String::new, |v| v.to_string())
}

fn write_online_summary(path: &Path, config: &ExperimentConfig, rows: &[RunRecord]) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "scenario,grid,seed,feedback,oracle,horizon,actions,k,tau,delta,lambda,window_m,gamma,\
         block_m,realized_variation,final_external_regret,final_bandit_regret,final_avg_regret,\
         bound_value,bound_applicable,trace"
    )?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{:.16e},{:.16e},\
             {:.16e},{:.16e},{:.16e},{},{}",
            config.scenario.name(),
            row.grid_id,
            row.seed,
            config.learner.feedback.name(),
            config.learner.oracle.name(),
            config.horizon,
            config.actions.map_or_else(String::new, |a| a.to_string()),
            optional_count(config.learner.k),
            config.tau,
            config.delta,
            row.resolved.lambda,
            row.resolved.window_m,
            row.resolved.gamma,
            optional_count(row.resolved.block_m),
            row.realized_variation,
            row.final_external,
            row.final_bandit,
            row.final_avg_regret,
            row.bound_value,
            row.bound_applicable,
            row.trace_path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy(),
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_game_summary(
    path: &Path,
    config: &ExperimentConfig,
    sizes: &[usize],
    rows: &[GameRunRecord],
) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "scenario,grid,seed,feedback,oracle,horizon,action_sizes,k,tau,delta,lambda,window_m,\
         gamma,block_m,final_exploitability,max_average_regret,max_external_regret,trace"
    )?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e},{},{:.16e},{:.16e},\
             {:.16e},{}",
            config.scenario.name(),
            row.grid_id,
            row.seed,
            config.learner.feedback.name(),
            config.learner.oracle.name(),
            config.horizon,
            join_indices(sizes),
            optional_count(config.learner.k),
            config.tau,
            config.delta,
            row.resolved.lambda,
            row.resolved.window_m,
            row.resolved.gamma,
            optional_count(row.resolved.block_m),
            row.final_exploitability,
            row.max_average_regret,
            row.max_external_regret,
            row.trace_path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy(),
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Picks the grid point with the smallest mean score and writes
/// `selected.csv`. Scores are final average regret for online runs and the
/// max-player average regret for games.
fn select_best(
    path: &Path,
    points: &[GridPoint],
    scores: impl Fn(&str) -> Vec<f64>,
) -> Result<(String, f64)> {
    use std::io::Write;
    let mut best: Option<(String, f64)> = None;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "grid,window_m,gamma,block_m,lambda,runs,mean_final_avg_regret"
    )?;
    for point in points {
        let values = scores(&point.id);
        if values.is_empty() {
            bail!("grid point {} produced no runs", point.id);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        writeln!(
            out,
            "{},{},{},{},{},{},{mean:.16e}",
            point.id,
            point.window_m,
            point.gamma,
            point.block_m,
            point.lambda,
            values.len()
        )?;
        if best.as_ref().is_none_or(|(_, score)| mean < *score) {
            best = Some((point.id.clone(), mean));
        }
    }
    let (best_grid, best_score) = best.ok_or_else(|| anyhow!("empty grid"))?;
    writeln!(out, "selected,{best_grid},,,,,{best_score:.16e}")?;
    out.flush()?;
    Ok((best_grid, best_score))
}

fn with_pool<T: Send>(workers: Option<usize>, body: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(body()),
        Some(count) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(count.max(1))
                .build()
                .context("building worker pool")?;
            Ok(pool.install(body))
        }
    }
}

/// Runs every (grid point, seed) pair of a config and writes all outputs
/// under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output dir {}", out_dir.display()))?;
    let points = grid_points(&config.learner, &config.grid);
    let tasks: Vec<(usize, u64)> = points
        .iter()
        .enumerate()
        .flat_map(|(i, _)| config.seeds.iter().map(move |&s| (i, s)))
        .collect();

    let mut outcome = ExperimentOutcome {
        output_dir: out_dir.to_path_buf(),
        grid: points.clone(),
        online: Vec::new(),
        games: Vec::new(),
        best_grid: String::new(),
        best_score: f64::NAN,
    };

    match config.scenario {
        Scenario::Online | Scenario::LlmRouting => {
            let rows: Vec<RunRecord> = with_pool(config.workers, || {
                tasks
                    .par_iter()
                    .map(|&(i, seed)| run_online_once(config, &points[i], seed, out_dir))
                    .collect::<Result<_>>()
            })??;
            write_online_summary(&out_dir.join("summary.csv"), config, &rows)?;
            let (best_grid, best_score) =
                select_best(&out_dir.join("selected.csv"), &points, |grid| {
                    rows.iter()
                        .filter(|r| r.grid_id == grid)
                        .map(|r| r.final_avg_regret)
                        .collect()
                })?;
            outcome.online = rows;
            outcome.best_grid = best_grid;
            outcome.best_score = best_score;
        }
        Scenario::Game => {
            let spec = config
                .game
                .as_ref()
                .ok_or_else(|| anyhow!("game runs need a game source"))?;
            let game = build_game(spec)?;
            ranklearn::games::write_game_file(out_dir.join("game.csv"), &game)?;
            let rows: Vec<GameRunRecord> = with_pool(config.workers, || {
                tasks
                    .par_iter()
                    .map(|&(i, seed)| run_game_once(config, &game, &points[i], seed, out_dir))
                    .collect::<Result<_>>()
            })??;
            write_game_summary(
                &out_dir.join("summary.csv"),
                config,
                game.action_sizes(),
                &rows,
            )?;
            let (best_grid, best_score) =
                select_best(&out_dir.join("selected.csv"), &points, |grid| {
                    rows.iter()
                        .filter(|r| r.grid_id == grid)
                        .map(|r| r.max_average_regret)
                        .collect()
                })?;
            outcome.games = rows;
            outcome.best_grid = best_grid;
            outcome.best_score = best_score;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn online_config(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            "scenario = online\nfeedback = inst_full\nactions = 3\ntau = 1.0\n\
             horizon = 200\nseeds = 1,2\nenv = bounded_variation\nenv.q = 0.3\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn grid_points_expand_the_cartesian_product() {
        let config = online_config("grid.window_m = 10,20\ngrid.lambda = 0.1,0.2,0.3\n");
        let points = grid_points(&config.learner, &config.grid);
        assert_eq!(points.len(), 6);
        assert_eq!(points[0].id, "g0");
        assert_eq!(points[0].window_m, CountSetting::Value(10));
        assert_eq!(points[0].lambda, Setting::Value(0.1));
        assert_eq!(points[5].window_m, CountSetting::Value(20));
        assert_eq!(points[5].lambda, Setting::Value(0.3));
    }

    #[test]
    fn auto_resolution_matches_the_horizon_scalings() {
        let config = online_config("");
        let points = grid_points(&config.learner, &config.grid);
        let resolved = resolve_params(&config.learner, &points[0], 200, 3, 0.05, 5.0).unwrap();
        assert_eq!(resolved.window_m, inst_full_window(200, 5.0, 3, 0.05));
        assert_eq!(resolved.gamma, 0.0);
        assert_eq!(resolved.lambda, default_lambda(200));
        assert_eq!(resolved.block_m, None);
    }

    #[test]
    fn learner_and_environment_streams_differ() {
        assert_ne!(learner_stream_seed(7), 7);
        assert_ne!(learner_stream_seed(7), learner_stream_seed(8));
    }

    #[test]
    fn traces_round_trip_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let config = online_config("");
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert_eq!(outcome.online.len(), 2);
        for row in &outcome.online {
            let stored = read_trace(&row.trace_path).unwrap();
            assert_eq!(stored.len(), 200);
            // Write a fresh copy from the parsed values and compare bytes.
            let copy_path = dir.path().join("copy.csv");
            {
                use std::io::Write;
                let mut out = std::io::BufWriter::new(std::fs::File::create(&copy_path).unwrap());
                writeln!(out, "{TRACE_HEADER}").unwrap();
                for t in 0..stored.len() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                        stored.steps[t],
                        join_indices(&stored.proposals[t]),
                        join_indices(&stored.rankings[t]),
                        join_floats(stored.strategies[t].iter().copied()),
                        join_floats(stored.estimates[t].iter().copied()),
                        join_floats(stored.true_utilities[t].iter().copied()),
                        stored.realized_avg_utilities[t],
                        stored.cumulative_external[t],
                        stored.cumulative_bandit[t],
                        stored.cumulative_variation[t],
                    )
                    .unwrap();
                }
            }
            let original = std::fs::read(&row.trace_path).unwrap();
            let copy = std::fs::read(&copy_path).unwrap();
            assert_eq!(original, copy);
        }
    }

    #[test]
    fn summary_and_selection_cover_every_grid_point() {
        let dir = tempfile::tempdir().unwrap();
        let config = online_config("grid.window_m = 5,50\n");
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert_eq!(outcome.online.len(), 4);
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 5);
        let selected = std::fs::read_to_string(dir.path().join("selected.csv")).unwrap();
        assert!(selected.lines().count() >= 4);
        assert!(outcome.best_grid == "g0" || outcome.best_grid == "g1");
        assert!(outcome.best_score.is_finite());
    }

    #[test]
    fn identical_seeds_reproduce_identical_trace_files() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = online_config("");
        run_experiment(&config, dir_a.path()).unwrap();
        run_experiment(&config, dir_b.path()).unwrap();
        let name = "trace_online_g0_1.csv";
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn game_experiments_emit_exploitability_curves() {
        let dir = tempfile::tempdir().unwrap();
        let config = parse_config(
            "scenario = game\nfeedback = avg_full\ntau = 1.0\nhorizon = 50\n\
             seeds = 0\ngame.actions = 2,3\nwindow_m = 5\nlambda = 0.1\n",
        )
        .unwrap();
        let outcome = run_experiment(&config, dir.path()).unwrap();
        assert_eq!(outcome.games.len(), 1);
        assert!(dir.path().join("game.csv").exists());
        assert!(dir.path().join("exploitability_g0_0.csv").exists());
        let trace = std::fs::read_to_string(&outcome.games[0].trace_path).unwrap();
        assert!(trace.starts_with("t,strategy_0,utility_0,strategy_1,utility_1"));
        // The loaded game matches the one that was played.
        let game = read_game_file(dir.path().join("game.csv")).unwrap();
        assert_eq!(game.action_sizes(), &[2, 3]);
    }

    #[test]
    fn file_environments_validate_length_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.csv");
        let seq = UtilitySequence::new(vec![vec![0.1, -0.2]; 10]).unwrap();
        ranklearn::environments::write_sequence(&path, &seq).unwrap();
        let spec = EnvSpec::SequenceFile(path.clone());
        assert!(build_sequence(&spec, 10, None, 0).is_ok());
        assert!(build_sequence(&spec, 11, None, 0).is_err());
        assert!(build_sequence(&spec, 10, Some(3), 0).is_err());
    }
}
