//! Domain types of the grouped public-goods game: configuration, actions,
//! histories of group contributions, samples and payoffs.
//!
//! Everything here is deterministic. Nature's random assignment of players to
//! groups lives in [`crate::simulator`].

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

/// The tuple `(N, b, n, m, r)` after validation.
///
/// * `N` total players, split into `b` groups of equal size `n`.
/// * `m` is how many immediately preceding groups a player observes.
/// * `r` is the rate of return on the common fund, with `1 < r < N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GameConfig {
    players: usize,
    groups: usize,
    group_size: usize,
    sample_size: usize,
    rate: f64,
}

impl GameConfig {
    /// Validates raw values. All violated constraints are reported together.
    pub fn new(
        players: i64,
        groups: i64,
        group_size: i64,
        sample_size: i64,
        rate: f64,
    ) -> Result<Self> {
        validate_config(players, groups, group_size, sample_size, rate)
    }

    /// Builds the symmetric config with `b` groups of size `n` and `m = 1`.
    pub fn symmetric(groups: usize, group_size: usize, rate: f64) -> Result<Self> {
        Self::new(
            (groups * group_size) as i64,
            groups as i64,
            group_size as i64,
            1,
            rate,
        )
    }

    /// `N`
    pub fn players(&self) -> usize {
        self.players
    }

    /// `b`
    pub fn groups(&self) -> usize {
        self.groups
    }

    /// `n`
    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// `m`
    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    /// `r`
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `r / N`, the marginal per-capita return of one contributed unit.
    pub fn mpcr(&self) -> f64 {
        self.rate / self.players as f64
    }

    /// Same game with a different rate of return.
    pub fn with_rate(&self, rate: f64) -> Result<Self> {
        Self::new(
            self.players as i64,
            self.groups as i64,
            self.group_size as i64,
            self.sample_size as i64,
            rate,
        )
    }

    /// Renders the flat `key = value` form read by [`GameConfig::parse`].
    pub fn to_kv_string(&self) -> String {
        format!(
            "N = {}\nb = {}\nn = {}\nm = {}\nr = {}\n",
            self.players, self.groups, self.group_size, self.sample_size, self.rate
        )
    }

    /// Parses a flat key-value file with keys `N`, `b`, `n`, `m`, `r`.
    /// Blank lines and `#` comments are ignored; `=` or `:` separate keys
    /// from values.
    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        raw.resolve()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for GameConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N={} b={} n={} m={} r={}",
            self.players, self.groups, self.group_size, self.sample_size, self.rate
        )
    }
}

/// A partially specified configuration, as read from a config file. Missing
/// keys can be filled from command-line flags before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    pub players: Option<i64>,
    pub groups: Option<i64>,
    pub group_size: Option<i64>,
    pub sample_size: Option<i64>,
    pub rate: Option<f64>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| {
                v.parse::<i64>()
                    .map_err(|e| Error::Parse(format!("line {}: {key}: {e}", lineno + 1)))
            };
            match key {
                "N" => raw.players = Some(int(value)?),
                "b" => raw.groups = Some(int(value)?),
                "n" => raw.group_size = Some(int(value)?),
                "m" => raw.sample_size = Some(int(value)?),
                "r" => {
                    raw.rate = Some(value.parse::<f64>().map_err(|e| {
                        Error::Parse(format!("line {}: r: {e}", lineno + 1))
                    })?)
                }
                other => {
                    return Err(Error::Parse(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(raw)
    }

    /// Fields present in `other` win.
    pub fn overridden_by(self, other: &RawConfig) -> RawConfig {
        RawConfig {
            players: other.players.or(self.players),
            groups: other.groups.or(self.groups),
            group_size: other.group_size.or(self.group_size),
            sample_size: other.sample_size.or(self.sample_size),
            rate: other.rate.or(self.rate),
        }
    }

    /// Derives a missing one of `N`, `b`, `n` from the other two, then
    /// validates.
    pub fn resolve(&self) -> Result<GameConfig> {
        let mut missing = Vec::new();
        let (mut players, mut groups, mut size) = (self.players, self.groups, self.group_size);
        match (players, groups, size) {
            (None, Some(b), Some(n)) => players = Some(b * n),
            (Some(big_n), None, Some(n)) if n > 0 && big_n % n == 0 => groups = Some(big_n / n),
            (Some(big_n), Some(b), None) if b > 0 && big_n % b == 0 => size = Some(big_n / b),
            _ => {}
        }
        for (name, v) in [("N", players), ("b", groups), ("n", size), ("m", self.sample_size)] {
            if v.is_none() {
                missing.push(Violation {
                    field: name,
                    message: "missing".into(),
                });
            }
        }
        if self.rate.is_none() {
            missing.push(Violation {
                field: "r",
                message: "missing".into(),
            });
        }
        if !missing.is_empty() {
            return Err(Error::InvalidConfig(missing));
        }
        validate_config(
            players.unwrap(),
            groups.unwrap(),
            size.unwrap(),
            self.sample_size.unwrap(),
            self.rate.unwrap(),
        )
    }
}

/// Checks every structural constraint and reports all of the violations.
/// Nothing is clamped.
pub fn validate_config(
    players: i64,
    groups: i64,
    group_size: i64,
    sample_size: i64,
    rate: f64,
) -> Result<GameConfig> {
    let mut v = Vec::new();
    let mut bad = |field, message: String| v.push(Violation { field, message });

    if players < 1 {
        bad("N", format!("must be a positive integer, got {players}"));
    }
    if groups < 2 {
        bad("b", format!("at least two groups are required, got {groups}"));
    }
    if group_size < 1 {
        bad("n", format!("must be a positive integer, got {group_size}"));
    }
    if sample_size < 1 {
        bad("m", format!("must be a positive integer, got {sample_size}"));
    }
    if players >= 1 && groups >= 1 && group_size >= 1 && players != groups * group_size {
        bad(
            "N",
            format!("N = {players} differs from n * b = {}", group_size * groups),
        );
    }
    if sample_size >= 1 && groups >= 2 && sample_size >= groups {
        bad(
            "m",
            format!("sample size {sample_size} must be smaller than b = {groups}"),
        );
    }
    if !rate.is_finite() {
        bad("r", format!("must be finite, got {rate}"));
    } else {
        if rate <= 1.0 {
            bad("r", format!("must exceed 1, got {rate}"));
        }
        if players >= 1 && rate >= players as f64 {
            bad("r", format!("must be below N = {players}, got {rate}"));
        }
    }

    if !v.is_empty() {
        return Err(Error::InvalidConfig(v));
    }
    Ok(GameConfig {
        players: players as usize,
        groups: groups as usize,
        group_size: group_size as usize,
        sample_size: sample_size as usize,
        rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Contribute,
    Defect,
}

impl Action {
    pub fn units(self) -> usize {
        match self {
            Action::Contribute => 1,
            Action::Defect => 0,
        }
    }
}

/// 1-based position of a group in the realized sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PositionIndex(usize);

impl PositionIndex {
    pub fn new(t: usize, config: &GameConfig) -> Result<Self> {
        if t == 0 || t > config.groups {
            return Err(Error::domain(format!(
                "position {t} outside 1..={}",
                config.groups
            )));
        }
        Ok(PositionIndex(t))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Observed pair `(ζ′, ζ″)`: how many predecessor groups were sampled and
/// how many of their members contributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Sample {
    pub observed_groups: usize,
    pub observed_contributions: usize,
}

impl Sample {
    pub const EMPTY: Sample = Sample {
        observed_groups: 0,
        observed_contributions: 0,
    };

    pub fn new(observed_groups: usize, observed_contributions: usize, config: &GameConfig) -> Result<Self> {
        if observed_groups > config.sample_size {
            return Err(Error::domain(format!(
                "sample covers {observed_groups} groups but m = {}",
                config.sample_size
            )));
        }
        if observed_contributions > observed_groups * config.group_size {
            return Err(Error::domain(format!(
                "{observed_contributions} contributions exceed the {} members sampled",
                observed_groups * config.group_size
            )));
        }
        Ok(Sample {
            observed_groups,
            observed_contributions,
        })
    }

    /// No defection is visible: every sampled member contributed. The empty
    /// sample of the first group is trivially clean.
    pub fn is_clean(&self, group_size: usize) -> bool {
        self.observed_contributions == self.observed_groups * group_size
    }
}

/// Contribution totals `g_1, g_2, ...` of the groups that have played so far.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GroupHistory {
    contributions: Vec<usize>,
}

impl GroupHistory {
    pub fn new(contributions: Vec<usize>, config: &GameConfig) -> Result<Self> {
        if contributions.len() > config.groups {
            return Err(Error::domain(format!(
                "history of {} groups exceeds b = {}",
                contributions.len(),
                config.groups
            )));
        }
        if let Some(g) = contributions.iter().find(|&&g| g > config.group_size) {
            return Err(Error::domain(format!(
                "group total {g} exceeds group size {}",
                config.group_size
            )));
        }
        Ok(GroupHistory { contributions })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.contributions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contributions.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.contributions
    }

    pub fn total(&self) -> usize {
        self.contributions.iter().sum()
    }

    pub(crate) fn push_unchecked(&mut self, g: usize) {
        self.contributions.push(g);
    }
}

/// Utility of a player choosing `action` while the others contribute
/// `others` units in total across the whole game.
pub fn payoff(action: Action, others: usize, config: &GameConfig) -> Result<f64> {
    if others >= config.players {
        return Err(Error::domain(format!(
            "others' contributions {others} exceed N - 1 = {}",
            config.players - 1
        )));
    }
    Ok(payoff_unchecked(action, others, config))
}

pub(crate) fn payoff_unchecked(action: Action, others: usize, config: &GameConfig) -> f64 {
    // One rounding: the numerator is exact for integer or short-decimal r.
    let big_n = config.players as f64;
    match action {
        Action::Contribute => (config.rate * (others + 1) as f64 - big_n) / big_n,
        Action::Defect => config.rate * others as f64 / big_n,
    }
}

/// The sample received by group `t`: the totals of the last `min(m, t-1)`
/// groups.
pub fn sample_of(history: &GroupHistory, t: PositionIndex, config: &GameConfig) -> Result<Sample> {
    let t = t.get();
    if history.len() != t - 1 {
        return Err(Error::domain(format!(
            "group {t} needs a history of {} groups, got {}",
            t - 1,
            history.len()
        )));
    }
    Ok(window_sample(history.as_slice(), config.sample_size))
}

/// Sample over the trailing window of `prefix`. `prefix` is the full
/// history before the observing group.
pub(crate) fn window_sample(prefix: &[usize], sample_size: usize) -> Sample {
    let width = sample_size.min(prefix.len());
    Sample {
        observed_groups: width,
        observed_contributions: prefix[prefix.len() - width..].iter().sum(),
    }
}
