//! Closed-form incentive functions for the single-observation (`m = 1`)
//! profile in which players contribute on clean samples and forgive
//! defections with probability `γ`.
//!
//! * [`phi_defection`] / [`phi_clean`]: expected extra contributions (own
//!   unit included) from contributing instead of defecting at position `t`,
//!   after a sample that shows a defection or a clean one.
//! * [`psi`]: posterior probability of sitting at position `t` given that a
//!   defection was witnessed.
//! * [`delta`]: utility gain from contributing after a witnessed defection.
//!
//! The textbook closed forms divide by `γ` or `γⁿ`. Every quantity below is
//! instead evaluated through the equivalent finite geometric sums in
//! `1 - γⁿ`, which are polynomials in `γ` and stay accurate down to `γ = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{GameConfig, PositionIndex, Sample};

/// Below this `γ` the analytic `γ = 0` limits are returned directly.
pub const ZERO_GAMMA_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SampleClass {
    /// `ζ = (0, 0)`: the player is in the first group.
    FirstGroup,
    /// Every sampled member contributed.
    CleanFull,
    /// At least one sampled member defected.
    ContainsDefection,
}

impl SampleClass {
    pub fn of(sample: &Sample, config: &GameConfig) -> Self {
        if sample.observed_groups == 0 {
            SampleClass::FirstGroup
        } else if sample.is_clean(config.group_size()) {
            SampleClass::CleanFull
        } else {
            SampleClass::ContainsDefection
        }
    }
}

/// Off-path probability `γ ∈ [0, 1]` of contributing after a defection.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct ForgivenessRate(f64);

impl ForgivenessRate {
    pub const ZERO: ForgivenessRate = ForgivenessRate(0.0);
    pub const ONE: ForgivenessRate = ForgivenessRate(1.0);

    pub fn new(gamma: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&gamma) {
            Ok(ForgivenessRate(gamma))
        } else {
            Err(Error::domain(format!("forgiveness rate {gamma} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ForgivenessRate {
    type Error = Error;

    fn try_from(gamma: f64) -> Result<Self> {
        Self::new(gamma)
    }
}

/// `1 + x + ... + x^(terms-1)`
fn geometric_sum(x: f64, terms: usize) -> f64 {
    let mut acc = 0.0;
    let mut pow = 1.0;
    for _ in 0..terms {
        acc += pow;
        pow *= x;
    }
    acc
}

fn check_position(t: PositionIndex, config: &GameConfig) -> Result<usize> {
    let t = t.get();
    if t > config.groups() {
        return Err(Error::domain(format!(
            "position {t} outside 1..={}",
            config.groups()
        )));
    }
    Ok(t)
}

pub(crate) fn phi_defection_raw(gamma: f64, n: usize, b: usize, t: usize) -> f64 {
    if gamma < ZERO_GAMMA_GUARD {
        return if n == 1 { (b - t + 1) as f64 } else { 1.0 };
    }
    let stay_dirty = 1.0 - gamma.powi(n as i32);
    n as f64 * (1.0 - gamma) * gamma.powi(n as i32 - 1) * geometric_sum(stay_dirty, b - t) + 1.0
}

pub(crate) fn phi_clean_raw(gamma: f64, n: usize, b: usize, t: usize) -> f64 {
    if gamma < ZERO_GAMMA_GUARD {
        return ((b - t) * n + 1) as f64;
    }
    let stay_dirty = 1.0 - gamma.powi(n as i32);
    n as f64 * (1.0 - gamma) * geometric_sum(stay_dirty, b - t) + 1.0
}

/// Position weights `ψ_2, ..., ψ_b` (index 0 holds `t = 2`).
pub(crate) fn psi_raw(gamma: f64, n: usize, b: usize) -> Vec<f64> {
    if gamma < ZERO_GAMMA_GUARD {
        let denom = (b * (b - 1)) as f64;
        return (2..=b).map(|t| (2 * (t - 1)) as f64 / denom).collect();
    }
    let stay_dirty = 1.0 - gamma.powi(n as i32);
    // Unnormalized weight of position t is 1 + x + ... + x^(t-2).
    let mut weights = Vec::with_capacity(b - 1);
    let mut partial = 0.0;
    let mut pow = 1.0;
    for _ in 2..=b {
        partial += pow;
        pow *= stay_dirty;
        weights.push(partial);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    weights
}

/// Expected extra contributions from contributing at position `t` after a
/// sample that contains a defection.
pub fn phi_defection(gamma: ForgivenessRate, t: PositionIndex, config: &GameConfig) -> Result<f64> {
    let t = check_position(t, config)?;
    Ok(phi_defection_raw(gamma.0, config.group_size(), config.groups(), t))
}

/// Expected extra contributions from contributing at position `t` after a
/// clean sample. At `t = 1` this is the first group's incentive: a deviation
/// there leaves the same sample `(1, n - 1)` downstream.
pub fn phi_clean(gamma: ForgivenessRate, t: PositionIndex, config: &GameConfig) -> Result<f64> {
    let t = check_position(t, config)?;
    Ok(phi_clean_raw(gamma.0, config.group_size(), config.groups(), t))
}

/// Probability of being at position `t` after witnessing a defection.
/// Position 1 never sees a defection.
pub fn psi(gamma: ForgivenessRate, t: PositionIndex, config: &GameConfig) -> Result<f64> {
    let t = check_position(t, config)?;
    if t == 1 {
        return Err(Error::domain(
            "the first group cannot witness a defection; psi is defined for t >= 2",
        ));
    }
    Ok(psi_raw(gamma.0, config.group_size(), config.groups())[t - 2])
}

/// All of `ψ_2, ..., ψ_b`; entry `k` is position `k + 2`.
pub fn psi_profile(gamma: ForgivenessRate, config: &GameConfig) -> Vec<f64> {
    psi_raw(gamma.0, config.group_size(), config.groups())
}

/// `S(γ) = Σ_{t=2..b} ψ_t(γ) φ_t(γ)` using the defection-sample `φ`. It does
/// not depend on `r`, so `Δ = (r/N) S - 1`.
pub fn incentive_sum(gamma: ForgivenessRate, config: &GameConfig) -> f64 {
    incentive_sum_raw(gamma.0, config.group_size(), config.groups())
}

pub(crate) fn incentive_sum_raw(gamma: f64, n: usize, b: usize) -> f64 {
    psi_raw(gamma, n, b)
        .iter()
        .zip(2..=b)
        .map(|(w, t)| w * phi_defection_raw(gamma, n, b, t))
        .sum()
}

/// Expected utility of contributing minus defecting after witnessing a
/// defection, everyone else forgiving with probability `γ`, at rate `rate`.
pub fn delta(gamma: ForgivenessRate, rate: f64, config: &GameConfig) -> f64 {
    rate / config.players() as f64 * incentive_sum(gamma, config) - 1.0
}

/// Outcome of a pure-equilibrium threshold formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Threshold {
    /// Any `r` in `[value, N)` satisfies the condition.
    Feasible { value: f64 },
    /// No admissible `r < N` satisfies the condition. `value` is absent when
    /// the denominator is not positive.
    Infeasible { value: Option<f64> },
}

impl Threshold {
    fn from_ratio(numer: f64, denom: f64, players: usize) -> Self {
        if denom <= 0.0 {
            return Threshold::Infeasible { value: None };
        }
        let value = numer / denom;
        if value >= players as f64 {
            Threshold::Infeasible { value: Some(value) }
        } else {
            Threshold::Feasible { value }
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            Threshold::Feasible { value } => Some(value),
            Threshold::Infeasible { value } => value,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Threshold::Feasible { .. })
    }

    /// Whether `rate` meets the bound. Infeasible thresholds are never met.
    pub fn is_met_by(&self, rate: f64) -> bool {
        match *self {
            Threshold::Feasible { value } => rate >= value,
            Threshold::Infeasible { .. } => false,
        }
    }
}

/// `2N / (N - n(m+1) + 2)` for arbitrary `(N, n, m)`.
pub fn sample_threshold_formula(players: usize, group_size: usize, sample_size: usize) -> Threshold {
    let big_n = players as f64;
    let denom = big_n - (group_size * (sample_size + 1)) as f64 + 2.0;
    Threshold::from_ratio(2.0 * big_n, denom, players)
}

/// `2N / (N - 2(n-1))` for arbitrary `(N, n)`.
pub fn single_observation_threshold_formula(players: usize, group_size: usize) -> Threshold {
    let big_n = players as f64;
    let denom = big_n - 2.0 * (group_size as f64 - 1.0);
    Threshold::from_ratio(2.0 * big_n, denom, players)
}

/// Lower bound on `r` for the conditional-cooperation equilibrium when
/// players observe more than one predecessor group.
pub fn threshold_m_gt_1(config: &GameConfig) -> Result<Threshold> {
    if config.sample_size() <= 1 {
        return Err(Error::domain(format!(
            "sample threshold applies to m > 1, got m = {}",
            config.sample_size()
        )));
    }
    Ok(sample_threshold_formula(
        config.players(),
        config.group_size(),
        config.sample_size(),
    ))
}

/// Lower bound on `r` for the pure equilibrium when only the immediate
/// predecessor is observed.
pub fn threshold_m_eq_1(config: &GameConfig) -> Result<Threshold> {
    if config.sample_size() != 1 {
        return Err(Error::domain(format!(
            "single-observation threshold applies to m = 1, got m = {}",
            config.sample_size()
        )));
    }
    Ok(single_observation_threshold_formula(
        config.players(),
        config.group_size(),
    ))
}

/// Gain from contributing on the equilibrium path, for the first group or
/// after a clean sample. Positive means contributing is strictly preferred.
pub fn onpath_deviation_gain(
    gamma: ForgivenessRate,
    rate: f64,
    config: &GameConfig,
    class: SampleClass,
) -> Result<f64> {
    let (n, b) = (config.group_size(), config.groups());
    let mpcr = rate / config.players() as f64;
    match class {
        SampleClass::FirstGroup => Ok(mpcr * phi_clean_raw(gamma.0, n, b, 1) - 1.0),
        SampleClass::CleanFull => {
            let mean = (2..=b).map(|t| phi_clean_raw(gamma.0, n, b, t)).sum::<f64>() / (b - 1) as f64;
            Ok(mpcr * mean - 1.0)
        }
        SampleClass::ContainsDefection => Err(Error::domain(
            "off-path samples are governed by delta, not the on-path gain",
        )),
    }
}
