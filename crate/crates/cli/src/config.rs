//! Experiment configuration: a flat, human-editable `key = value` file.
//!
//! Blank lines and `#` comments are ignored. Every key is validated against
//! the scenario — unknown keys, duplicate keys, and keys that contradict the
//! chosen feedback mode are hard errors, because a silently ignored typo in
//! `gamma` or `window_m` would invalidate a whole study. Numeric learner
//! hyperparameters accept the literal `auto` to request the horizon-tuned
//! scaling for the mode.
//!
//! ```text
//! scenario = online
//! feedback = inst_full
//! actions  = 10
//! tau      = 1.0
//! horizon  = 100000
//! seeds    = 0,1,2,3,4
//! env      = bounded_variation
//! env.q    = 0.3
//! window_m = auto
//! grid.lambda = 0.01,0.003
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ranklearn::environments::{NoiseKind, ThreePhaseEnding};
use ranklearn::learners::{FeedbackMode, DEFAULT_DELTA};
use ranklearn::oracles::OracleKind;

/// What kind of experiment a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// One learner against a generated or loaded utility sequence.
    Online,
    /// One learner per player in a normal-form game.
    Game,
    /// One learner routing among scored models loaded from a file.
    LlmRouting,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Online => "online",
            Scenario::Game => "game",
            Scenario::LlmRouting => "llm_routing",
        }
    }
}

/// A learner hyperparameter: an explicit value or the horizon-tuned default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    Auto,
    Value(f64),
}

/// An integer hyperparameter: explicit or horizon-tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountSetting {
    Auto,
    Value(usize),
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Setting::Auto => write!(f, "auto"),
            Setting::Value(v) => write!(f, "{v}"),
        }
    }
}

impl std::fmt::Display for CountSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CountSetting::Auto => write!(f, "auto"),
            CountSetting::Value(v) => write!(f, "{v}"),
        }
    }
}

/// Utility-sequence source for online and routing runs.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    /// Sequence with total variation within `scale * T^q`.
    BoundedVariation { q: f64, scale: f64 },
    /// Fixed random base vector plus fresh per-step noise.
    NoiseShift { sigma: f64, kind: NoiseKind },
    /// The low-mean member of the indistinguishable two-action pair.
    PairLow,
    /// The high-mean member of the indistinguishable two-action pair.
    PairHigh,
    /// Piecewise-constant drift instance ending with the given tail.
    ThreePhase { ending: ThreePhaseEnding },
    /// A sequence file previously written by this harness.
    SequenceFile(PathBuf),
    /// A raw model-score CSV, rescaled at load time.
    Scores(PathBuf),
}

/// Game source for game runs.
#[derive(Debug, Clone, PartialEq)]
pub enum GameSpec {
    Random { action_sizes: Vec<usize>, seed: u64 },
    File(PathBuf),
}

/// The learner half of a config: shared by every player in game runs.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSpec {
    pub feedback: FeedbackMode,
    /// Proposal size; `None` for full-information modes (forced to `|A|`).
    pub k: Option<usize>,
    pub oracle: OracleKind,
    pub lambda: Setting,
    pub window_m: CountSetting,
    pub gamma: Setting,
    pub block_m: CountSetting,
}

/// Optional per-hyperparameter search lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSpec {
    pub window_m: Option<Vec<usize>>,
    pub gamma: Option<Vec<f64>>,
    pub block_m: Option<Vec<usize>>,
    pub lambda: Option<Vec<f64>>,
}

/// A fully parsed experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub tau: f64,
    pub delta: f64,
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Action count for generator environments; derived from the file for
    /// sequence/score sources and from the game for game runs.
    pub actions: Option<usize>,
    pub learner: LearnerSpec,
    pub env: Option<EnvSpec>,
    pub game: Option<GameSpec>,
    pub grid: GridSpec,
}

/// Raw `key = value` map with duplicate detection and typed take-out.
struct KeyMap {
    entries: BTreeMap<String, String>,
}

impl KeyMap {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("line {}: expected `key = value`, got `{line}`", number + 1)
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() || value.is_empty() {
                bail!("line {}: empty key or value in `{line}`", number + 1);
            }
            if entries.insert(key.clone(), value).is_some() {
                bail!("duplicate key `{key}`");
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("key `{key}`: cannot parse `{raw}`: {e}")),
        }
    }

    fn take_required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.take_parsed(key)?
            .ok_or_else(|| anyhow!("missing required key `{key}`"))
    }

    fn take_setting(&mut self, key: &str) -> Result<Option<Setting>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) if raw == "auto" => Ok(Some(Setting::Auto)),
            Some(raw) => raw
                .parse()
                .map(|v| Some(Setting::Value(v)))
                .map_err(|e| anyhow!("key `{key}`: cannot parse `{raw}`: {e}")),
        }
    }

    fn take_count_setting(&mut self, key: &str) -> Result<Option<CountSetting>> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) if raw == "auto" => Ok(Some(CountSetting::Auto)),
            Some(raw) => raw
                .parse()
                .map(|v| Some(CountSetting::Value(v)))
                .map_err(|e| anyhow!("key `{key}`: cannot parse `{raw}`: {e}")),
        }
    }

    fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => {
                let values: Vec<T> = raw
                    .split(',')
                    .map(|cell| {
                        cell.trim()
                            .parse()
                            .map_err(|e| anyhow!("key `{key}`: cannot parse `{cell}`: {e}"))
                    })
                    .collect::<Result<_>>()?;
                if values.is_empty() {
                    bail!("key `{key}`: list must be nonempty");
                }
                Ok(Some(values))
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            bail!("unknown key `{key}`");
        }
        Ok(())
    }
}

/// Parses a config from text. See the module docs for the format.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = KeyMap::parse(text)?;

    let scenario = match map.take("scenario").as_deref() {
        Some("online") => Scenario::Online,
        Some("game") => Scenario::Game,
        Some("llm_routing") => Scenario::LlmRouting,
        Some(other) => bail!("unknown scenario `{other}`"),
        None => bail!("missing required key `scenario`"),
    };

    let horizon: usize = map.take_required("horizon")?;
    if horizon == 0 {
        bail!("horizon must be at least 1");
    }
    let seeds: Vec<u64> = map
        .take_list("seeds")?
        .ok_or_else(|| anyhow!("missing required key `seeds`"))?;
    let tau: f64 = map.take_required("tau")?;
    let delta: f64 = map.take_parsed("delta")?.unwrap_or(DEFAULT_DELTA);
    let output: Option<PathBuf> = map.take("output").map(PathBuf::from);
    let workers: Option<usize> = map.take_parsed("workers")?;

    let feedback: FeedbackMode = map.take_required("feedback")?;
    let k: Option<usize> = map.take_parsed("k")?;
    let gamma = map.take_setting("gamma")?;
    if feedback.is_bandit() {
        match k {
            None => bail!("bandit modes need an explicit proposal size `k`"),
            Some(0) => bail!("proposal size `k` must be at least 1"),
            Some(_) => {}
        }
    } else {
        if k.is_some() {
            bail!(
                "`k` only applies to bandit modes; {} proposes every action",
                feedback.name()
            );
        }
        if gamma.is_some() {
            bail!(
                "`gamma` only applies to bandit modes; {} never explores",
                feedback.name()
            );
        }
    }
    let block_m = map.take_count_setting("block_m")?;
    if feedback != FeedbackMode::AvgBandit && block_m.is_some() {
        bail!("`block_m` only applies to avg_bandit");
    }
    let learner = LearnerSpec {
        feedback,
        k,
        oracle: map.take_parsed("oracle")?.unwrap_or(OracleKind::Hedge),
        lambda: map.take_setting("lambda")?.unwrap_or(Setting::Auto),
        window_m: map
            .take_count_setting("window_m")?
            .unwrap_or(CountSetting::Auto),
        gamma: gamma.unwrap_or(Setting::Auto),
        block_m: block_m.unwrap_or(CountSetting::Auto),
    };

    let grid = GridSpec {
        window_m: map.take_list("grid.window_m")?,
        gamma: map.take_list("grid.gamma")?,
        block_m: map.take_list("grid.block_m")?,
        lambda: map.take_list("grid.lambda")?,
    };
    if !feedback.is_bandit() && grid.gamma.is_some() {
        bail!("`grid.gamma` only applies to bandit modes");
    }
    if feedback != FeedbackMode::AvgBandit && grid.block_m.is_some() {
        bail!("`grid.block_m` only applies to avg_bandit");
    }

    let mut actions: Option<usize> = map.take_parsed("actions")?;
    let env_kind = map.take("env");
    let env_q: Option<f64> = map.take_parsed("env.q")?;
    let env_scale: Option<f64> = map.take_parsed("env.scale")?;
    let env_sigma: Option<f64> = map.take_parsed("env.sigma")?;
    let env_noise: Option<NoiseKind> = map.take_parsed("env.noise")?;
    let env_path: Option<PathBuf> = map.take("env.path").map(PathBuf::from);
    let game_actions: Option<Vec<usize>> = map.take_list("game.actions")?;
    let game_seed: Option<u64> = map.take_parsed("game.seed")?;
    let game_path: Option<PathBuf> = map.take("game.path").map(PathBuf::from);
    map.finish()?;

    let forbid_env_params = |used: &[(&str, bool)]| -> Result<()> {
        for (name, present) in used {
            if *present {
                bail!("`{name}` does not apply to this environment");
            }
        }
        Ok(())
    };

    let env = match scenario {
        Scenario::Game => {
            forbid_env_params(&[
                ("env", env_kind.is_some()),
                ("env.q", env_q.is_some()),
                ("env.scale", env_scale.is_some()),
                ("env.sigma", env_sigma.is_some()),
                ("env.noise", env_noise.is_some()),
                ("env.path", env_path.is_some()),
                ("actions", actions.is_some()),
            ])?;
            None
        }
        Scenario::LlmRouting => {
            forbid_env_params(&[
                ("env", env_kind.is_some()),
                ("env.q", env_q.is_some()),
                ("env.scale", env_scale.is_some()),
                ("env.sigma", env_sigma.is_some()),
                ("env.noise", env_noise.is_some()),
                ("actions", actions.is_some()),
            ])?;
            let path = env_path.ok_or_else(|| anyhow!("llm_routing needs `env.path`"))?;
            Some(EnvSpec::Scores(path))
        }
        Scenario::Online => {
            let kind = env_kind.ok_or_else(|| anyhow!("online runs need `env`"))?;
            let spec = match kind.as_str() {
                "bounded_variation" => {
                    forbid_env_params(&[
                        ("env.sigma", env_sigma.is_some()),
                        ("env.noise", env_noise.is_some()),
                        ("env.path", env_path.is_some()),
                    ])?;
                    EnvSpec::BoundedVariation {
                        q: env_q.ok_or_else(|| anyhow!("bounded_variation needs `env.q`"))?,
                        scale: env_scale.unwrap_or(1.0),
                    }
                }
                "noise_shift" => {
                    forbid_env_params(&[
                        ("env.q", env_q.is_some()),
                        ("env.scale", env_scale.is_some()),
                        ("env.path", env_path.is_some()),
                    ])?;
                    EnvSpec::NoiseShift {
                        sigma: env_sigma.ok_or_else(|| anyhow!("noise_shift needs `env.sigma`"))?,
                        kind: env_noise.unwrap_or(NoiseKind::Gaussian),
                    }
                }
                "pair_low"
                | "pair_high"
                | "three_phase_second_high"
                | "three_phase_first_ahead" => {
                    forbid_env_params(&[
                        ("env.q", env_q.is_some()),
                        ("env.scale", env_scale.is_some()),
                        ("env.sigma", env_sigma.is_some()),
                        ("env.noise", env_noise.is_some()),
                        ("env.path", env_path.is_some()),
                    ])?;
                    match kind.as_str() {
                        "pair_low" => EnvSpec::PairLow,
                        "pair_high" => EnvSpec::PairHigh,
                        "three_phase_second_high" => EnvSpec::ThreePhase {
                            ending: ThreePhaseEnding::SecondHigh,
                        },
                        _ => EnvSpec::ThreePhase {
                            ending: ThreePhaseEnding::FirstAhead,
                        },
                    }
                }
                "file" => {
                    forbid_env_params(&[
                        ("env.q", env_q.is_some()),
                        ("env.scale", env_scale.is_some()),
                        ("env.sigma", env_sigma.is_some()),
                        ("env.noise", env_noise.is_some()),
                    ])?;
                    EnvSpec::SequenceFile(
                        env_path.ok_or_else(|| anyhow!("env `file` needs `env.path`"))?,
                    )
                }
                other => bail!("unknown env `{other}`"),
            };
            // Two-action constructions fix the action count themselves.
            let fixed = match &spec {
                EnvSpec::PairLow | EnvSpec::PairHigh | EnvSpec::ThreePhase { .. } => Some(2),
                _ => None,
            };
            if let Some(fixed) = fixed {
                match actions {
                    Some(a) if a != fixed => {
                        bail!("this environment has exactly {fixed} actions, config says {a}")
                    }
                    _ => actions = Some(fixed),
                }
            } else if matches!(
                spec,
                EnvSpec::BoundedVariation { .. } | EnvSpec::NoiseShift { .. }
            ) && actions.is_none()
            {
                bail!("generator environments need `actions`");
            }
            Some(spec)
        }
    };

    let game = match scenario {
        Scenario::Game => Some(match (game_actions, game_path) {
            (Some(_), Some(_)) => bail!("give either `game.actions` or `game.path`, not both"),
            (Some(action_sizes), None) => GameSpec::Random {
                action_sizes,
                seed: game_seed.unwrap_or(0),
            },
            (None, Some(path)) => {
                if game_seed.is_some() {
                    bail!("`game.seed` only applies to random games");
                }
                GameSpec::File(path)
            }
            (None, None) => bail!("game runs need `game.actions` or `game.path`"),
        }),
        _ => {
            if game_actions.is_some() || game_seed.is_some() || game_path.is_some() {
                bail!("`game.*` keys only apply to the game scenario");
            }
            None
        }
    };

    Ok(ExperimentConfig {
        scenario,
        horizon,
        seeds,
        tau,
        delta,
        output,
        workers,
        actions,
        learner,
        env,
        game,
        grid,
    })
}

/// Loads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "\
scenario = online
feedback = inst_full
actions = 10
tau = 1.0
horizon = 1000
seeds = 0,1,2
env = bounded_variation
env.q = 0.3
";

    #[test]
    fn minimal_online_config_parses_with_defaults() {
        let config = parse_config(BASE).unwrap();
        assert_eq!(config.scenario, Scenario::Online);
        assert_eq!(config.horizon, 1000);
        assert_eq!(config.seeds, vec![0, 1, 2]);
        assert_eq!(config.actions, Some(10));
        assert_eq!(config.learner.oracle, OracleKind::Hedge);
        assert_eq!(config.learner.lambda, Setting::Auto);
        assert_eq!(config.learner.window_m, CountSetting::Auto);
        assert_eq!(config.delta, DEFAULT_DELTA);
        assert_eq!(
            config.env,
            Some(EnvSpec::BoundedVariation { q: 0.3, scale: 1.0 })
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{BASE}windw_m = 100\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("unknown key `windw_m`"));
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let text = format!("{BASE}tau = 2.0\n");
        assert!(parse_config(&text)
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
    }

    #[test]
    fn mode_specific_keys_are_policed() {
        // gamma on a full-information mode.
        let text = format!("{BASE}gamma = 0.1\n");
        assert!(parse_config(&text).is_err());
        // k on a full-information mode.
        let text = format!("{BASE}k = 2\n");
        assert!(parse_config(&text).is_err());
        // bandit mode without k.
        let text = BASE.replace("feedback = inst_full", "feedback = inst_bandit");
        assert!(parse_config(&text).unwrap_err().to_string().contains("`k`"));
        // block_m outside avg_bandit.
        let text = format!("{BASE}block_m = 100\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn auto_and_grid_values_parse() {
        let text = format!(
            "{}window_m = auto\nlambda = 0.01\ngrid.gamma = 0.1,0.05,0.01\nk = 2\n",
            BASE.replace("feedback = inst_full", "feedback = inst_bandit")
        );
        let config = parse_config(&text).unwrap();
        assert_eq!(config.learner.window_m, CountSetting::Auto);
        assert_eq!(config.learner.lambda, Setting::Value(0.01));
        assert_eq!(config.grid.gamma, Some(vec![0.1, 0.05, 0.01]));
    }

    #[test]
    fn pair_environments_pin_two_actions() {
        let text = BASE
            .replace("env = bounded_variation\nenv.q = 0.3\n", "env = pair_low\n")
            .replace("actions = 10", "actions = 2");
        assert_eq!(parse_config(&text).unwrap().actions, Some(2));
        let conflicting =
            BASE.replace("env = bounded_variation\nenv.q = 0.3\n", "env = pair_low\n");
        assert!(parse_config(&conflicting).is_err());
    }

    #[test]
    fn game_configs_need_a_game_source() {
        let text = "\
scenario = game
feedback = inst_full
tau = 1.0
horizon = 100
seeds = 0
game.actions = 3,3
";
        let config = parse_config(text).unwrap();
        assert_eq!(
            config.game,
            Some(GameSpec::Random {
                action_sizes: vec![3, 3],
                seed: 0
            })
        );
        let missing = text.replace("game.actions = 3,3\n", "");
        assert!(parse_config(&missing).is_err());
    }

    #[test]
    fn routing_configs_need_a_score_path() {
        let text = "\
scenario = llm_routing
feedback = avg_bandit
k = 2
tau = 1.0
horizon = 100
seeds = 0
env.path = scores.csv
";
        let config = parse_config(text).unwrap();
        assert_eq!(
            config.env,
            Some(EnvSpec::Scores(PathBuf::from("scores.csv")))
        );
        let missing = text.replace("env.path = scores.csv\n", "");
        assert!(parse_config(&missing).is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_config("scenario online\n").is_err());
        assert!(parse_config("= 3\n").is_err());
        let text = BASE.replace("horizon = 1000", "horizon = 0");
        assert!(parse_config(&text).is_err());
        let text = BASE.replace("seeds = 0,1,2", "seeds = ");
        assert!(parse_config(&text).is_err());
    }
}
