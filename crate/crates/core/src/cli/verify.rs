use std::fmt;
use std::time::{Duration, Instant};

use clap::ValueEnum;
use serde::Serialize;

use crate::analytics::{
    phi_clean_raw, phi_defection_raw, psi_raw, ForgivenessRate, SampleClass, ZERO_GAMMA_GUARD,
};
use crate::equilibrium::linspace;
use crate::error::Result;
use crate::game::{GameConfig, PositionIndex};
use crate::simulator::{
    enumerate_exact, estimate_phi, estimate_psi, MAX_ENUM_GROUPS, MAX_ENUM_GROUP_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyLevel {
    Fast,
    Full,
}

/// The closed forms under test. Swapping one out is how the suite is checked
/// against a known-bad implementation.
#[derive(Clone, Copy)]
pub struct Formulas {
    /// `(γ, n, b, t)`
    pub phi_clean: fn(f64, usize, usize, usize) -> f64,
    pub phi_defection: fn(f64, usize, usize, usize) -> f64,
    /// `(γ, n, b)`, entry `k` is position `k + 2`.
    pub psi: fn(f64, usize, usize) -> Vec<f64>,
}

impl Default for Formulas {
    fn default() -> Self {
        Formulas {
            phi_clean: phi_clean_raw,
            phi_defection: phi_defection_raw,
            psi: psi_raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, failures: Vec<String>, ok_detail: String) -> Self {
        let passed = failures.is_empty();
        let detail = if passed {
            ok_detail
        } else {
            let more = if failures.len() > 3 { format!(" (+{} more)", failures.len() - 3) } else { String::new() };
            failures.into_iter().take(3).collect::<Vec<_>>().join("; ") + &more
        };
        CheckResult { name, passed, detail }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub config: GameConfig,
    pub level: VerifyLevel,
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub elapsed: Duration,
}

impl VerifyOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

impl fmt::Display for VerifyOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verify {:?} on {} (seed {})", self.level, self.config, self.seed)?;
        for c in &self.checks {
            writeln!(f, "{:<4} {:<28} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        writeln!(
            f,
            "{} passed, {} failed in {:.2} s",
            self.checks.len() - failed,
            failed,
            self.elapsed.as_secs_f64()
        )
    }
}

pub fn cmd_verify(config: &GameConfig, level: VerifyLevel, seed: u64) -> Result<VerifyOutcome> {
    verify_with(config, level, seed, &Formulas::default())
}

/// Runs the suite against arbitrary formulas.
#[doc(hidden)]
pub fn verify_with(config: &GameConfig, level: VerifyLevel, seed: u64, formulas: &Formulas) -> Result<VerifyOutcome> {
    let start = Instant::now();
    let gammas = linspace(0.0, 1.0, 101);
    let mut checks = vec![
        boundary_identity(config, formulas, &gammas),
        psi_normalization(config, formulas, &gammas),
        singleton_reduction(config, formulas, &gammas),
        monotonicity(config, formulas, &gammas),
        clean_dominates(config, formulas, &gammas),
        defection_incentive(config, formulas, &gammas),
        limit_consistency(config, formulas),
        ordering_chain(config, formulas, &gammas),
        enumeration_oracle(config, formulas)?,
    ];
    let (mc_gammas, reps): (&[f64], u64) = match level {
        VerifyLevel::Fast => (&[0.2, 0.5, 0.8], 20_000),
        VerifyLevel::Full => (&[0.1, 0.3, 0.5, 0.7, 0.9], 100_000),
    };
    checks.push(monte_carlo_phi(config, formulas, mc_gammas, reps, seed)?);
    if level == VerifyLevel::Full {
        checks.push(psi_trend(config, formulas, seed)?);
    }
    Ok(VerifyOutcome {
        config: *config,
        level,
        seed,
        checks,
        elapsed: start.elapsed(),
    })
}

fn sum_s(f: &Formulas, x: f64, n: usize, b: usize) -> f64 {
    (f.psi)(x, n, b)
        .iter()
        .zip(2..=b)
        .map(|(w, t)| w * (f.phi_defection)(x, n, b, t))
        .sum()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

fn boundary_identity(config: &GameConfig, f: &Formulas, _gammas: &[f64]) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let rho = config.mpcr();
    let mut bad = Vec::new();
    for t in 1..=b {
        for (name, v) in [("phi_clean", (f.phi_clean)(1.0, n, b, t)), ("phi_defection", (f.phi_defection)(1.0, n, b, t))] {
            if !close(v, 1.0, 1e-12) {
                bad.push(format!("{name}(1, t={t}) = {v}"));
            }
        }
    }
    if n > 1 {
        for x in [0.0, 1.0] {
            let d = rho * sum_s(f, x, n, b) - 1.0;
            if (d - (rho - 1.0)).abs() > 1e-9 {
                bad.push(format!("delta({x}) = {d}, expected {}", rho - 1.0));
            }
        }
    }
    CheckResult::new("boundary identity", bad, "delta(0) = delta(1) = r/N - 1".into())
}

fn psi_normalization(config: &GameConfig, f: &Formulas, gammas: &[f64]) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let mut bad = Vec::new();
    for &x in gammas {
        let w = (f.psi)(x, n, b);
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 || w.iter().any(|&p| p < 0.0) {
            bad.push(format!("gamma={x}: sum {total}"));
        }
    }
    let w = (f.psi)(0.0, n, b);
    for (k, &p) in w.iter().enumerate() {
        let t = k + 2;
        let expect = (2 * (t - 1)) as f64 / (b * (b - 1)) as f64;
        if p != expect {
            bad.push(format!("psi_{t}(0) = {p}, expected {expect}"));
        }
    }
    CheckResult::new("psi normalization", bad, format!("{} gammas", gammas.len()))
}

fn singleton_reduction(config: &GameConfig, f: &Formulas, gammas: &[f64]) -> CheckResult {
    let b = config.groups();
    let mut bad = Vec::new();
    for &x in gammas {
        for t in 1..=b {
            // A defection persists until some later singleton forgives.
            let expect = 1.0 + (1..=b - t).map(|k| (1.0 - x).powi(k as i32)).sum::<f64>();
            let got = (f.phi_defection)(x, 1, b, t);
            if (got - expect).abs() > 1e-12 * expect {
                bad.push(format!("gamma={x} t={t}: {got} vs {expect}"));
            }
        }
    }
    CheckResult::new("n=1 reduction", bad, format!("b={b}"))
}

fn monotonicity(config: &GameConfig, f: &Formulas, gammas: &[f64]) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let mut bad = Vec::new();
    for &x in gammas {
        for t in 1..b {
            for (name, phi) in [("phi_clean", f.phi_clean), ("phi_defection", f.phi_defection)] {
                let (a, c) = (phi(x, n, b, t), phi(x, n, b, t + 1));
                if c > a * (1.0 + 1e-12) {
                    bad.push(format!("{name} rises at gamma={x} t={t}: {a} -> {c}"));
                }
            }
        }
    }
    CheckResult::new("monotone in t", bad, "both phi weakly decreasing".into())
}

fn clean_dominates(config: &GameConfig, f: &Formulas, gammas: &[f64]) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let mut bad = Vec::new();
    for &x in gammas {
        for t in 1..=b {
            let (c, d) = ((f.phi_clean)(x, n, b, t), (f.phi_defection)(x, n, b, t));
            if c < d * (1.0 - 1e-12) {
                bad.push(format!("gamma={x} t={t}: clean {c} < defection {d}"));
            }
        }
    }
    CheckResult::new("clean >= defection", bad, String::new())
}

fn defection_incentive(config: &GameConfig, f: &Formulas, gammas: &[f64]) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let mut bad = Vec::new();
    for &x in gammas {
        for t in 1..=b {
            let d = (f.phi_defection)(x, n, b, t);
            let strict = x > 0.0 && x < 1.0 && t < b;
            if d < 1.0 - 1e-12 || (strict && d <= 1.0) {
                bad.push(format!("gamma={x} t={t}: {d}"));
            }
        }
    }
    CheckResult::new("phi_defection > 1", bad, "strict inside (0,1), t < b".into())
}

fn limit_consistency(config: &GameConfig, f: &Formulas) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let (tiny, small) = (ZERO_GAMMA_GUARD / 10.0, 1e-7);
    let mut bad = Vec::new();
    for t in 1..=b {
        for (name, phi) in [("phi_clean", f.phi_clean), ("phi_defection", f.phi_defection)] {
            let (a, c) = (phi(tiny, n, b, t), phi(small, n, b, t));
            if !close(c, a, 1e-4) {
                bad.push(format!("{name} t={t}: limit {a} vs {c} at 1e-7"));
            }
        }
    }
    for (a, c) in (f.psi)(tiny, n, b).iter().zip((f.psi)(small, n, b)) {
        if !close(c, *a, 1e-4) {
            bad.push(format!("psi limit {a} vs {c}"));
        }
    }
    CheckResult::new("gamma -> 0 limits", bad, String::new())
}

fn ordering_chain(config: &GameConfig, f: &Formulas, gammas: &[f64]) -> CheckResult {
    let (n, b) = (config.group_size(), config.groups());
    let slack = 1e-12;
    let mut bad = Vec::new();
    for &x in gammas {
        let first = (f.phi_clean)(x, n, b, 1);
        let clean_avg = (2..=b).map(|t| (f.phi_clean)(x, n, b, t)).sum::<f64>() / (b - 1) as f64;
        let weighted = sum_s(f, x, n, b);
        let ok = if x == 1.0 {
            (first - clean_avg).abs() <= slack && (clean_avg - weighted).abs() <= slack
        } else {
            first > clean_avg && clean_avg >= weighted - slack * clean_avg.abs()
        };
        if !ok {
            bad.push(format!("gamma={x}: {first} / {clean_avg} / {weighted}"));
        }
    }
    CheckResult::new("ordering chain", bad, "first > clean avg >= weighted".into())
}

fn enumeration_oracle(config: &GameConfig, f: &Formulas) -> Result<CheckResult> {
    let mut shapes: Vec<(usize, usize)> = (2..=4).flat_map(|b| (1..=3).map(move |n| (b, n))).collect();
    let (b0, n0) = (config.groups(), config.group_size());
    if b0 <= MAX_ENUM_GROUPS && n0 <= MAX_ENUM_GROUP_SIZE && !shapes.contains(&(b0, n0)) {
        shapes.push((b0, n0));
    }
    let mut bad = Vec::new();
    let mut compared = 0;
    for &(b, n) in &shapes {
        let cfg = GameConfig::symmetric(b, n, 1.5)?;
        for x in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let g = ForgivenessRate::new(x)?;
            for t in 1..=b {
                let pos = PositionIndex::new(t, &cfg)?;
                let mut cases = vec![(
                    if t == 1 { SampleClass::FirstGroup } else { SampleClass::CleanFull },
                    (f.phi_clean)(x, n, b, t),
                )];
                if t >= 2 {
                    cases.push((SampleClass::ContainsDefection, (f.phi_defection)(x, n, b, t)));
                }
                for (class, closed) in cases {
                    let exact = enumerate_exact(&cfg, g, class, pos)?.phi;
                    compared += 1;
                    if (exact - closed).abs() > 1e-10 {
                        bad.push(format!("b={b} n={n} t={t} gamma={x} {class:?}: {closed} vs {exact}"));
                    }
                }
            }
        }
    }
    Ok(CheckResult::new("enumeration oracle", bad, format!("{compared} comparisons")))
}

fn monte_carlo_phi(config: &GameConfig, f: &Formulas, gammas: &[f64], reps: u64, seed: u64) -> Result<CheckResult> {
    if config.sample_size() != 1 {
        return Ok(CheckResult::new("monte carlo phi", vec![], "skipped: closed forms assume m = 1".into()));
    }
    let (n, b) = (config.group_size(), config.groups());
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, &x) in gammas.iter().enumerate() {
        let g = ForgivenessRate::new(x)?;
        for t in 1..=b {
            let pos = PositionIndex::new(t, config)?;
            let mut cases = vec![(
                if t == 1 { SampleClass::FirstGroup } else { SampleClass::CleanFull },
                (f.phi_clean)(x, n, b, t),
            )];
            if t >= 2 {
                cases.push((SampleClass::ContainsDefection, (f.phi_defection)(x, n, b, t)));
            }
            for (k, (class, closed)) in cases.into_iter().enumerate() {
                let s = seed.wrapping_add((i * 1000 + t * 10 + k) as u64);
                let est = estimate_phi(config, g, pos, class, reps, s)?;
                let z = est.z_score(closed);
                worst = worst.max(z.abs());
                if z.abs() > 3.0 {
                    bad.push(format!("gamma={x} t={t} {class:?}: {:.5} +- {:.5} vs {closed:.5}", est.mean, est.std_error));
                }
            }
        }
    }
    Ok(CheckResult::new("monte carlo phi", bad, format!("{reps} reps, max |z| = {worst:.2}")))
}

/// Total-variation distance to the closed-form ψ should shrink as the
/// tremble goes from 1e-2 to 1e-3.
fn psi_trend(config: &GameConfig, f: &Formulas, seed: u64) -> Result<CheckResult> {
    let (n, b) = (config.group_size(), config.groups());
    let x = 0.5;
    let g = ForgivenessRate::new(x)?;
    let target = (f.psi)(x, n, b);
    let coarse = estimate_psi(config, g, 1e-2, 200_000, seed)?;
    let fine = estimate_psi(config, g, 1e-3, 1_000_000, seed.wrapping_add(1))?;
    let (d1, d2) = (coarse.tv_distance(&target), fine.tv_distance(&target));
    let bad = if d2 < d1 { vec![] } else { vec![format!("tv {d1:.5} at 1e-2, {d2:.5} at 1e-3")] };
    Ok(CheckResult::new("psi tremble trend", bad, format!("tv {d1:.5} -> {d2:.5}")))
}
