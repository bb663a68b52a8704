//! Equilibrium verdicts built on the incentive functions: pure-strategy
//! conditions, the interior maximum of `Δ`, the critical return `r♯`, and the
//! two forgiveness rates at which players are indifferent after a defection.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::analytics::{
    self, incentive_sum_raw, phi_clean_raw, phi_defection_raw, psi_raw, ForgivenessRate, Threshold,
};
use crate::error::{Error, Result};
use crate::game::GameConfig;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    pub grid_points: usize,
    /// Required `|Δ|` at a returned root.
    pub root_tolerance: f64,
    pub max_iterations: usize,
    /// Distance kept from the endpoints 0 and 1 when bracketing.
    pub bracket_epsilon: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            grid_points: 2001,
            root_tolerance: 1e-10,
            max_iterations: 200,
            bracket_epsilon: 1e-9,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 3 {
            return Err(Error::domain("grid_points must be at least 3"));
        }
        if self.root_tolerance.is_nan() || self.root_tolerance <= 0.0 || self.max_iterations == 0 {
            return Err(Error::domain("tolerance and iteration budget must be positive"));
        }
        if !(self.bracket_epsilon > 0.0 && self.bracket_epsilon < 0.5) {
            return Err(Error::domain("bracket_epsilon must lie in (0, 0.5)"));
        }
        Ok(())
    }
}

fn require_groups_larger_than_one(config: &GameConfig) -> Result<()> {
    if config.group_size() == 1 {
        return Err(Error::domain(
            "with singleton groups Δ(0) ≠ Δ(1) and there is no forced interior maximum; \
             use delta-curve with root scanning instead",
        ));
    }
    Ok(())
}

/// `n` evenly spaced points from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect()
}

fn eval_grid(xs: &[f64], f: impl Fn(f64) -> f64 + Sync) -> Vec<f64> {
    // Indexed collect keeps output order independent of scheduling.
    xs.par_iter().map(|&x| f(x)).collect()
}

/// Location of the interior maximum of `Δ` for a fixed game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaMax {
    pub gamma: f64,
    /// `Δ(γ₀)` at the requested rate.
    pub delta: f64,
    /// `S(γ₀)`, the rate-free incentive sum.
    pub incentive_sum: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Golden-section maximization of `f` on `[lo, hi]`.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, max_iter: usize) -> (f64, f64, usize) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut iters = 0;
    while iters < max_iter && hi - lo > 1e-14 * (1.0 + lo.abs() + hi.abs()) {
        iters += 1;
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1, iters)
    } else {
        (x2, f2, iters)
    }
}

/// Finds `γ₀`, the global maximizer of `Δ(·)` over `(0, 1)`: a grid scan picks
/// the best cell and golden-section search refines it. The maximizer of the
/// rate-free sum `S` is used, so `γ₀` does not depend on `rate`.
pub fn find_delta_max(rate: f64, config: &GameConfig, settings: &SolverSettings) -> Result<DeltaMax> {
    settings.validate()?;
    require_groups_larger_than_one(config)?;
    let (n, b) = (config.group_size(), config.groups());
    let s = |x: f64| incentive_sum_raw(x, n, b);

    let eps = settings.bracket_epsilon;
    let xs = linspace(eps, 1.0 - eps, settings.grid_points);
    let ys = eval_grid(&xs, s);
    let best = ys
        .iter()
        .enumerate()
        .fold(0, |best, (k, y)| if *y > ys[best] { k } else { best });
    let lo = xs[best.saturating_sub(1)];
    let hi = xs[(best + 1).min(xs.len() - 1)];
    let (mut gamma, mut s_max, iterations) = golden_max(s, lo, hi, settings.max_iterations);
    if ys[best] > s_max {
        gamma = xs[best];
        s_max = ys[best];
    }
    if gamma - eps <= 0.0 || gamma >= 1.0 - eps || s_max <= 1.0 {
        return Err(Error::Internal(format!(
            "maximizer {gamma} of the incentive sum is not interior (S = {s_max})"
        )));
    }
    Ok(DeltaMax {
        gamma,
        delta: rate / config.players() as f64 * s_max - 1.0,
        incentive_sum: s_max,
        iterations,
        bracket: (lo, hi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RSharp {
    pub value: f64,
    pub gamma: f64,
    /// `Δ(r♯, γ₀)` by back-substitution.
    pub residual: f64,
}

/// The critical return `r♯ = N / S(γ₀)` above which `Δ` has a positive
/// interior maximum. `Δ` is linear in `r` at fixed `γ`.
pub fn find_r_sharp(config: &GameConfig, settings: &SolverSettings) -> Result<RSharp> {
    let max = find_delta_max(config.rate(), config, settings)?;
    let big_n = config.players() as f64;
    let value = big_n / max.incentive_sum;
    if value >= big_n {
        return Err(Error::Internal(format!("r♯ = {value} is not below N = {big_n}")));
    }
    let residual = value / big_n * incentive_sum_raw(max.gamma, config.group_size(), config.groups()) - 1.0;
    Ok(RSharp {
        value,
        gamma: max.gamma,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Root {
    pub gamma: f64,
    pub residual: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

/// Bisection on a sign-changing bracket, stopping once `|f| < tolerance`.
pub fn bisect(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    settings: &SolverSettings,
) -> Result<Root> {
    let bracket = (lo, hi);
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(Root { gamma: lo, residual: 0.0, iterations: 0, bracket });
    }
    if f_hi == 0.0 {
        return Ok(Root { gamma: hi, residual: 0.0, iterations: 0, bracket });
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Internal(format!(
            "bracket [{lo}, {hi}] does not change sign ({f_lo}, {f_hi})"
        )));
    }
    let mut best = if f_lo.abs() < f_hi.abs() { (lo, f_lo) } else { (hi, f_hi) };
    for iterations in 1..=settings.max_iterations {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid.abs() < best.1.abs() {
            best = (mid, f_mid);
        }
        if f_mid.abs() < settings.root_tolerance || mid <= lo || mid >= hi {
            return finish(best, iterations, bracket, settings);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    finish(best, settings.max_iterations, bracket, settings)
}

fn finish(best: (f64, f64), iterations: usize, bracket: (f64, f64), settings: &SolverSettings) -> Result<Root> {
    if best.1.abs() >= settings.root_tolerance {
        return Err(Error::Internal(format!(
            "bisection stalled at γ = {} with |Δ| = {:e}",
            best.0,
            best.1.abs()
        )));
    }
    Ok(Root {
        gamma: best.0,
        residual: best.1,
        iterations,
        bracket,
    })
}

/// Every sign change of `f` on a uniform grid over `[lo, hi]`, refined by
/// bisection. Roots come back in increasing order.
pub fn scan_roots(
    f: impl Fn(f64) -> f64 + Sync,
    lo: f64,
    hi: f64,
    points: usize,
    settings: &SolverSettings,
) -> Result<Vec<Root>> {
    let xs = linspace(lo, hi, points);
    let ys = eval_grid(&xs, &f);
    let mut roots = Vec::new();
    for k in 0..xs.len() - 1 {
        let (a, b) = (ys[k], ys[k + 1]);
        if a == 0.0 {
            roots.push(Root { gamma: xs[k], residual: 0.0, iterations: 0, bracket: (xs[k], xs[k]) });
        } else if a * b < 0.0 {
            roots.push(bisect(&f, xs[k], xs[k + 1], settings)?);
        }
    }
    if ys[ys.len() - 1] == 0.0 {
        let x = xs[xs.len() - 1];
        roots.push(Root { gamma: x, residual: 0.0, iterations: 0, bracket: (x, x) });
    }
    Ok(roots)
}

/// Mixed-equilibrium forgiveness rates at a given return.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixedRoots {
    /// `r < r♯`: `Δ` is negative everywhere.
    None,
    /// `r = r♯` within tolerance: `Δ` touches zero at `γ₀` only.
    Tangent { gamma: f64, residual: f64 },
    /// Outermost pair of roots around `γ₀`. `all` lists every root found,
    /// which is more than two only if `Δ` has several bumps.
    Pair { lower: Root, upper: Root, all: Vec<Root> },
}

impl MixedRoots {
    pub fn pair(&self) -> Option<(f64, f64)> {
        match self {
            MixedRoots::Pair { lower, upper, .. } => Some((lower.gamma, upper.gamma)),
            _ => None,
        }
    }
}

/// Solves `Δ(γ) = 0` at `rate` by splitting `(0, 1)` at `γ₀`, scanning
/// each side for sign changes and bisecting.
pub fn find_mixed_roots(rate: f64, config: &GameConfig, settings: &SolverSettings) -> Result<MixedRoots> {
    let max = find_delta_max(rate, config, settings)?;
    if max.delta.abs() <= settings.root_tolerance {
        return Ok(MixedRoots::Tangent { gamma: max.gamma, residual: max.delta });
    }
    if max.delta < 0.0 {
        return Ok(MixedRoots::None);
    }
    let (n, b) = (config.group_size(), config.groups());
    let mpcr = rate / config.players() as f64;
    let f = |x: f64| mpcr * incentive_sum_raw(x, n, b) - 1.0;
    let eps = settings.bracket_epsilon;
    if f(eps) >= 0.0 || f(1.0 - eps) >= 0.0 {
        return Err(Error::Internal(format!(
            "Δ is not negative at the bracket ends ({}, {})",
            f(eps),
            f(1.0 - eps)
        )));
    }
    let points = settings.grid_points / 2 + 1;
    let mut all = scan_roots(f, eps, max.gamma, points, settings)?;
    let right = scan_roots(f, max.gamma, 1.0 - eps, points, settings)?;
    if all.is_empty() || right.is_empty() {
        return Err(Error::Internal(
            "Δ(γ₀) > 0 but a side of γ₀ shows no sign change".into(),
        ));
    }
    all.extend(right);
    Ok(MixedRoots::Pair {
        lower: all[0],
        upper: all[all.len() - 1],
        all,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PureRegime {
    /// `m > 1`: contribute unless the sample shows a defection.
    MultiSample,
    /// `m = 1`, `n > 1`.
    SingleObservation,
    /// `m = 1`, `n = 1`: classified by the interval known from the
    /// single-player-group literature, not derived here.
    SingletonGroups,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PureVerdict {
    pub exists: bool,
    pub regime: PureRegime,
    pub threshold: Option<Threshold>,
    /// `r` sits exactly on the threshold.
    pub binding: bool,
    /// `Δ(0) = r/N - 1`, the off-path gain under zero forgiveness.
    pub delta_at_zero: Option<f64>,
    pub literature_interval: Option<(f64, f64)>,
    pub derived: bool,
    pub note: String,
}

/// Checks whether full conditional cooperation (no forgiveness) is an
/// equilibrium at the config's rate.
pub fn verify_pure(config: &GameConfig) -> PureVerdict {
    let r = config.rate();
    let (m, n) = (config.sample_size(), config.group_size());
    let binding_of = |th: &Threshold| {
        th.value()
            .map(|v| th.is_feasible() && (r - v).abs() <= 1e-12 * v.abs())
            .unwrap_or(false)
    };
    if m > 1 {
        let th = analytics::sample_threshold_formula(config.players(), n, m);
        PureVerdict {
            exists: th.is_met_by(r) || binding_of(&th),
            regime: PureRegime::MultiSample,
            threshold: Some(th),
            binding: binding_of(&th),
            delta_at_zero: None,
            literature_interval: None,
            derived: true,
            note: "defection after an observed defection is optimal for every r".into(),
        }
    } else if n > 1 {
        let th = analytics::single_observation_threshold_formula(config.players(), n);
        let d0 = analytics::delta(ForgivenessRate::ZERO, r, config);
        PureVerdict {
            exists: (th.is_met_by(r) || binding_of(&th)) && d0 < 0.0,
            regime: PureRegime::SingleObservation,
            threshold: Some(th),
            binding: binding_of(&th),
            delta_at_zero: Some(d0),
            literature_interval: None,
            derived: true,
            note: "on-path condition from the clean-sample incentive; off-path Δ(0) = r/N - 1 < 0".into(),
        }
    } else {
        let big_n = config.players() as f64;
        let hi = 3.0 - 3.0 / (big_n + 1.0);
        PureVerdict {
            exists: (2.0..=hi).contains(&r),
            regime: PureRegime::SingletonGroups,
            threshold: None,
            binding: r == 2.0 || r == hi,
            delta_at_zero: None,
            literature_interval: Some((2.0, hi)),
            derived: false,
            note: "interval taken from the single-player-group literature; not derived by this tool".into(),
        }
    }
}

/// The three incentive levels compared by the ordering lemma at one `γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma2Report {
    pub gamma: f64,
    /// First group's `φ₁(γ, (0,0))`.
    pub first_group: f64,
    /// Uniform average of clean-sample `φ_t` over `t = 2..b`.
    pub clean_average: f64,
    /// `Σ ψ_t φ_t` with the defection-sample `φ`.
    pub defection_weighted: f64,
    pub strict_first: bool,
    pub weak_second: bool,
    /// At `γ = 1` all three levels coincide; only equality is expected.
    pub boundary: bool,
    pub holds: bool,
}

const ORDERING_SLACK: f64 = 1e-12;

pub fn verify_lemma2(gamma: ForgivenessRate, config: &GameConfig) -> Lemma2Report {
    let x = gamma.value();
    let (n, b) = (config.group_size(), config.groups());
    let first_group = phi_clean_raw(x, n, b, 1);
    let clean_average = (2..=b).map(|t| phi_clean_raw(x, n, b, t)).sum::<f64>() / (b - 1) as f64;
    let defection_weighted: f64 = psi_raw(x, n, b)
        .iter()
        .zip(2..=b)
        .map(|(w, t)| w * phi_defection_raw(x, n, b, t))
        .sum();
    let strict_first = first_group > clean_average;
    let weak_second = clean_average >= defection_weighted - ORDERING_SLACK * clean_average.abs();
    let boundary = x == 1.0;
    let holds = if boundary {
        (first_group - clean_average).abs() <= ORDERING_SLACK
            && (clean_average - defection_weighted).abs() <= ORDERING_SLACK
    } else {
        strict_first && weak_second
    };
    Lemma2Report {
        gamma: x,
        first_group,
        clean_average,
        defection_weighted,
        strict_first,
        weak_second,
        boundary,
        holds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumReport {
    pub config: GameConfig,
    pub settings: SolverSettings,
    pub pure: PureVerdict,
    pub r_sharp: Option<RSharp>,
    pub delta_max: Option<DeltaMax>,
    pub mixed_roots: Option<MixedRoots>,
    /// Ordering lemma checked on `γ = k/101`, `k = 0..=100`, plus `γ = 1`.
    pub lemma2_ok: bool,
    pub notes: Vec<String>,
}

/// Full verdict at the config's own rate.
pub fn analyze(config: &GameConfig, settings: &SolverSettings) -> Result<EquilibriumReport> {
    settings.validate()?;
    let pure = verify_pure(config);
    let mut notes = Vec::new();
    let lemma2_ok = (0..=101)
        .map(|k| verify_lemma2(ForgivenessRate::new(k as f64 / 101.0).unwrap(), config))
        .all(|rep| rep.holds);

    let (r_sharp, delta_max, mixed_roots) = if config.group_size() > 1 {
        let rs = find_r_sharp(config, settings)?;
        let dm = find_delta_max(config.rate(), config, settings)?;
        let roots = find_mixed_roots(config.rate(), config, settings)?;
        (Some(rs), Some(dm), Some(roots))
    } else {
        notes.push("singleton groups: mixed-equilibrium analysis requires n > 1".into());
        (None, None, None)
    };
    if config.sample_size() > 1 {
        notes.push("mixed roots use the single-observation incentive functions".into());
    }
    Ok(EquilibriumReport {
        config: *config,
        settings: *settings,
        pure,
        r_sharp,
        delta_max,
        mixed_roots,
        lemma2_ok,
        notes,
    })
}

impl EquilibriumReport {
    /// JSON document with every real rounded to 15 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        round_reals(&mut v, 15);
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Rounds every non-integer JSON number in place.
pub fn round_reals(v: &mut Value, digits: usize) {
    match v {
        Value::Number(num) if num.is_f64() => {
            let x = num.as_f64().unwrap();
            let rounded: f64 = format!("{:.*e}", digits - 1, x).parse().unwrap();
            if let Some(r) = serde_json::Number::from_f64(rounded) {
                *num = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(|x| round_reals(x, digits)),
        Value::Object(map) => map.values_mut().for_each(|x| round_reals(x, digits)),
        _ => {}
    }
}
