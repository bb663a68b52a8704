use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use super::{RunManifest, SimQuantity};
use crate::analytics::{
    self, delta, psi_profile, ForgivenessRate, SampleClass, Threshold,
};
use crate::equilibrium::{
    analyze, find_delta_max, find_mixed_roots, find_r_sharp, linspace, round_reals, scan_roots,
    verify_pure, MixedRoots, PureVerdict, SolverSettings,
};
use crate::error::{Error, Result};
use crate::game::{GameConfig, PositionIndex};
use crate::simulator::{
    estimate_phi, estimate_psi, tremble_payoff, write_estimates_csv, EstimateRecord, SimEstimate,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub name: &'static str,
    pub formula: &'static str,
    pub threshold: Threshold,
    /// Whether this bound governs the given `m`.
    pub applies: bool,
    pub met_by_rate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdTable {
    pub config: GameConfig,
    pub rows: Vec<ThresholdRow>,
    /// `[threshold, N)` for the applicable bound, when feasible.
    pub pure_interval: Option<(f64, f64)>,
    pub verdict: PureVerdict,
}

pub fn cmd_thresholds(config: &GameConfig) -> ThresholdTable {
    let (big_n, n, m) = (config.players(), config.group_size(), config.sample_size());
    let r = config.rate();
    let multi = analytics::sample_threshold_formula(big_n, n, m);
    let single = analytics::single_observation_threshold_formula(big_n, n);
    let rows = vec![
        ThresholdRow {
            name: "multi-sample",
            formula: "2N / (N - n(m+1) + 2)",
            threshold: multi,
            applies: m > 1,
            met_by_rate: multi.is_met_by(r),
        },
        ThresholdRow {
            name: "single-observation",
            formula: "2N / (N - 2(n-1))",
            threshold: single,
            applies: m == 1,
            met_by_rate: single.is_met_by(r),
        },
    ];
    let verdict = verify_pure(config);
    let pure_interval = if let Some(lit) = verdict.literature_interval {
        Some(lit)
    } else {
        rows.iter()
            .find(|row| row.applies)
            .and_then(|row| match row.threshold {
                Threshold::Feasible { value } => Some((value, big_n as f64)),
                Threshold::Infeasible { .. } => None,
            })
    };
    ThresholdTable {
        config: *config,
        rows,
        pure_interval,
        verdict,
    }
}

impl fmt::Display for ThresholdTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "config: {}", self.config)?;
        writeln!(f, "{:<20} {:<24} {:>20} {:>10} {:>8} {:>6}", "bound", "formula", "value", "feasible", "applies", "met")?;
        for row in &self.rows {
            let value = row
                .threshold
                .value()
                .map(|v| format!("{v:.12}"))
                .unwrap_or_else(|| "none".into());
            writeln!(
                f,
                "{:<20} {:<24} {:>20} {:>10} {:>8} {:>6}",
                row.name,
                row.formula,
                value,
                row.threshold.is_feasible(),
                row.applies,
                row.met_by_rate
            )?;
        }
        match self.pure_interval {
            Some((lo, hi)) if self.verdict.derived => writeln!(f, "pure equilibrium for r in [{lo:.12}, {hi})")?,
            Some((lo, hi)) => writeln!(f, "pure equilibrium for r in [{lo}, {hi:.12}] (literature, not derived)")?,
            None => writeln!(f, "pure equilibrium: infeasible given r < N")?,
        }
        writeln!(f, "at r = {}: pure equilibrium {}", self.config.rate(), if self.verdict.exists { "exists" } else { "does not exist" })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    /// Interior maximizer; for singleton groups the best grid point.
    pub gamma0: f64,
    pub delta_max: f64,
    pub delta_at_0: f64,
    pub delta_at_1: f64,
    pub roots: Vec<f64>,
}

impl fmt::Display for CurveSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "gamma0={:.12} delta_max={:.12} delta(0)={:.12} delta(1)={:.12} roots=[{}]",
            self.gamma0,
            self.delta_max,
            self.delta_at_0,
            self.delta_at_1,
            self.roots.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaCurve {
    pub manifest: RunManifest,
    pub rate: f64,
    pub points: Vec<(f64, f64)>,
    pub summary: CurveSummary,
}

impl DeltaCurve {
    /// Manifest and summary as `#` lines, then `gamma,delta` rows at 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = self.manifest.csv_header();
        s.push_str(&format!("# rate: {}\n# summary: {}\n", self.rate, self.summary));
        s.push_str("gamma,delta\n");
        for (x, y) in &self.points {
            s.push_str(&format!("{x:.16e},{y:.16e}\n"));
        }
        s
    }
}

/// Reads `gamma,delta` rows back, skipping `#` header lines.
pub fn parse_curve_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        let (x, y): (f64, f64) = rec?;
        out.push((x, y));
    }
    Ok(out)
}

/// `Δ(γ)` at `rate` on `grid` evenly spaced points of `[0, 1]`.
pub fn cmd_delta_curve(
    config: &GameConfig,
    rate: f64,
    grid: usize,
    settings: &SolverSettings,
    manifest: RunManifest,
) -> Result<DeltaCurve> {
    if grid < 2 {
        return Err(Error::domain("a curve needs at least two grid points"));
    }
    let eval = |x: f64| delta(ForgivenessRate::new(x).unwrap(), rate, config);
    let points: Vec<(f64, f64)> = linspace(0.0, 1.0, grid).into_iter().map(|x| (x, eval(x))).collect();

    let summary = if config.group_size() > 1 {
        let max = find_delta_max(rate, config, settings)?;
        let roots = match find_mixed_roots(rate, config, settings)? {
            MixedRoots::None => vec![],
            MixedRoots::Tangent { gamma, .. } => vec![gamma],
            MixedRoots::Pair { all, .. } => all.iter().map(|r| r.gamma).collect(),
        };
        CurveSummary {
            gamma0: max.gamma,
            delta_max: max.delta,
            delta_at_0: eval(0.0),
            delta_at_1: eval(1.0),
            roots,
        }
    } else {
        let eps = settings.bracket_epsilon;
        let roots = scan_roots(eval, eps, 1.0 - eps, settings.grid_points, settings)?;
        let (gamma0, delta_max) = points
            .iter()
            .copied()
            .fold((0.0, f64::MIN), |best, p| if p.1 > best.1 { p } else { best });
        CurveSummary {
            gamma0,
            delta_max,
            delta_at_0: eval(0.0),
            delta_at_1: eval(1.0),
            roots: roots.iter().map(|r| r.gamma).collect(),
        }
    };
    Ok(DeltaCurve {
        manifest,
        rate,
        points,
        summary,
    })
}

/// Equilibrium report wrapped with its manifest, reals at 15 significant
/// digits.
pub fn cmd_equilibria(config: &GameConfig, settings: &SolverSettings, manifest: &RunManifest) -> Result<String> {
    let report = analyze(config, settings)?;
    let mut doc = serde_json::json!({
        "manifest": manifest,
        "report": report,
    });
    round_reals(&mut doc, 15);
    Ok(serde_json::to_string_pretty(&doc)?)
}

#[derive(Debug, Clone)]
pub struct Figure1Options {
    /// Shared return; defaults to the smallest integer above `r♯` of the
    /// solid-line game.
    pub rate: Option<f64>,
    pub grid: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct Figure1 {
    pub rate: f64,
    pub r_sharp: f64,
    pub solid: DeltaCurve,
    pub dashed: DeltaCurve,
    pub solid_path: PathBuf,
    pub dashed_path: PathBuf,
}

impl fmt::Display for Figure1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "shared r = {} (r# of the n = 5 game = {:.12})", self.rate, self.r_sharp)?;
        writeln!(f, "solid  (n = 5): {} -> {}", self.solid.summary, self.solid_path.display())?;
        write!(f, "dashed (n = 1): {} -> {}", self.dashed.summary, self.dashed_path.display())
    }
}

/// The figure's exact parameters are not published. Both curves use N = 20:
/// four groups of five for the solid line, twenty singletons for the
/// dashed one.
pub const FIGURE1_NOTE: &str =
    "reconstructed parameters: N = 20 for both curves (b=4,n=5 solid; b=20,n=1 dashed)";

pub fn cmd_figure1(opts: &Figure1Options, settings: &SolverSettings, seed: u64) -> Result<Figure1> {
    let probe = GameConfig::symmetric(4, 5, 2.0)?;
    let r_sharp = find_r_sharp(&probe, settings)?.value;
    let rate = opts.rate.unwrap_or_else(|| r_sharp.floor() + 1.0);
    let solid_cfg = GameConfig::symmetric(4, 5, rate)?;
    let dashed_cfg = GameConfig::symmetric(20, 1, rate)?;

    std::fs::create_dir_all(&opts.out_dir)?;
    let solid_path = opts.out_dir.join("figure1_solid.csv");
    let dashed_path = opts.out_dir.join("figure1_dashed.csv");

    let mut curves = Vec::new();
    for (cfg, path) in [(&solid_cfg, &solid_path), (&dashed_cfg, &dashed_path)] {
        let mut manifest = RunManifest::new("figure1", cfg, settings, seed);
        manifest.outputs.push(path.display().to_string());
        let curve = cmd_delta_curve(cfg, rate, opts.grid, settings, manifest)?;
        let text = format!("# {FIGURE1_NOTE}\n{}", curve.to_csv());
        std::fs::write(path, text)?;
        curves.push(curve);
    }
    let dashed = curves.pop().unwrap();
    let solid = curves.pop().unwrap();
    Ok(Figure1 {
        rate,
        r_sharp,
        solid,
        dashed,
        solid_path,
        dashed_path,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub quantity: SimQuantity,
    pub gamma: f64,
    pub epsilon: f64,
    pub replications: u64,
    pub seed: u64,
}

/// CSV of Monte Carlo estimates, one row per quantity and position.
pub fn cmd_simulate(config: &GameConfig, opts: &SimulateOptions, manifest: &RunManifest) -> Result<String> {
    let gamma = ForgivenessRate::new(opts.gamma)?;
    let b = config.groups();
    let mut records = Vec::new();
    let want = |q: SimQuantity| opts.quantity == q || opts.quantity == SimQuantity::All;

    if want(SimQuantity::Phi) {
        for t in 1..=b {
            let pos = PositionIndex::new(t, config)?;
            let classes: &[(SampleClass, &str)] = if t == 1 {
                &[(SampleClass::FirstGroup, "phi_clean")]
            } else {
                &[
                    (SampleClass::CleanFull, "phi_clean"),
                    (SampleClass::ContainsDefection, "phi_defection"),
                ]
            };
            for &(class, name) in classes {
                let seed = opts.seed.wrapping_add(t as u64 * 2 + (class == SampleClass::ContainsDefection) as u64);
                let est = estimate_phi(config, gamma, pos, class, opts.replications, seed)?;
                records.push(EstimateRecord::new(config, opts.gamma, 0.0, Some(t), name, &est));
            }
        }
    }
    if want(SimQuantity::Psi) {
        let est = estimate_psi(config, gamma, opts.epsilon, opts.replications, opts.seed)?;
        let closed = psi_profile(gamma, config);
        for (k, (&freq, _)) in est.frequencies.iter().zip(&closed).enumerate() {
            // Binomial standard error; ignores clustering of observers.
            let se = (freq * (1.0 - freq) / est.events as f64).sqrt();
            let sim = SimEstimate {
                mean: freq,
                std_error: se,
                replications: est.replications,
                seed: est.seed,
                low_replications: est.replications < 100,
            };
            records.push(EstimateRecord::new(config, opts.gamma, opts.epsilon, Some(k + 2), "psi", &sim));
        }
    }
    if want(SimQuantity::Payoff) {
        let est = tremble_payoff(config, gamma, opts.epsilon, opts.replications, opts.seed)?;
        records.push(EstimateRecord::new(config, opts.gamma, opts.epsilon, None, "payoff", &est));
    }

    let mut buf = Vec::new();
    write_estimates_csv(&mut buf, &records)?;
    Ok(manifest.csv_header() + &String::from_utf8(buf).expect("csv output is utf-8"))
}
