//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its own PASS/FAIL line; exits nonzero if any criterion fails.

use std::time::{Duration, Instant};

use groupgoods::analytics::{
    delta, phi_clean, phi_defection, psi_profile, sample_threshold_formula, threshold_m_eq_1,
    threshold_m_gt_1, ForgivenessRate, SampleClass,
};
use groupgoods::cli::{cmd_figure1, Figure1Options};
use groupgoods::equilibrium::{
    find_delta_max, find_mixed_roots, find_r_sharp, linspace, verify_lemma2, MixedRoots,
    SolverSettings,
};
use groupgoods::game::{GameConfig, PositionIndex};
use groupgoods::simulator::{enumerate_exact, estimate_phi, estimate_psi, tremble_payoff};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn g(x: f64) -> ForgivenessRate {
    ForgivenessRate::new(x).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid101() -> Vec<f64> {
    linspace(0.0, 1.0, 101)
}

fn boundary_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let b = rng.gen_range(2..=8usize);
        let n = rng.gen_range(2..=6usize);
        let m = rng.gen_range(1..b);
        let big_n = b * n;
        let r = rng.gen_range(1.0..big_n as f64);
        let c = GameConfig::new(big_n as i64, b as i64, n as i64, m as i64, r).map_err(|e| e.to_string())?;
        let expect = r / big_n as f64 - 1.0;
        for x in [0.0, 1.0] {
            let err = (delta(g(x), r, &c) - expect).abs();
            worst = worst.max(err);
            ensure(err < 1e-9, || format!("{c}: delta({x}) off by {err:e}"))?;
        }
    }
    Ok(format!("20 configs, max error {worst:.1e}"))
}

fn psi_normalization() -> Outcome {
    let mut worst: f64 = 0.0;
    for b in 2..=8usize {
        for n in 1..=5usize {
            let c = GameConfig::symmetric(b, n, 1.5).unwrap();
            for x in grid101() {
                let err = (psi_profile(g(x), &c).iter().sum::<f64>() - 1.0).abs();
                worst = worst.max(err);
                ensure(err <= 1e-12, || format!("b={b} n={n} gamma={x}: sum off by {err:e}"))?;
            }
            for (k, &p) in psi_profile(g(0.0), &c).iter().enumerate() {
                let t = k + 2;
                let expect = (2 * (t - 1)) as f64 / (b * (b - 1)) as f64;
                ensure(p == expect, || format!("b={b} n={n}: psi_{t}(0) = {p}, expected {expect}"))?;
            }
        }
    }
    Ok(format!("35 shapes x 101 gammas, max error {worst:.1e}"))
}

fn singleton_reduction() -> Outcome {
    let mut worst: f64 = 0.0;
    for b in 2..=8usize {
        let c = GameConfig::symmetric(b, 1, 1.5).unwrap();
        for t in 1..=b {
            let pos = PositionIndex::new(t, &c).unwrap();
            for x in grid101() {
                let expect = if x == 0.0 {
                    (b - t + 1) as f64
                } else {
                    (1.0 - (1.0 - x).powi((b - t + 1) as i32)) / x
                };
                let err = (phi_defection(g(x), pos, &c).unwrap() - expect).abs();
                worst = worst.max(err);
                ensure(err < 1e-12, || format!("b={b} t={t} gamma={x}: off by {err:e}"))?;
            }
        }
    }
    Ok(format!("b in 2..=8, max error {worst:.1e}"))
}

fn oracle_equivalence() -> Outcome {
    let mut count = 0;
    let mut worst: f64 = 0.0;
    for b in 2..=4usize {
        for n in 1..=3usize {
            let c = GameConfig::symmetric(b, n, 1.5).unwrap();
            for x in [0.0, 0.25, 0.5, 0.75, 1.0] {
                for t in 1..=b {
                    let pos = PositionIndex::new(t, &c).unwrap();
                    let mut cases = vec![(
                        if t == 1 { SampleClass::FirstGroup } else { SampleClass::CleanFull },
                        phi_clean(g(x), pos, &c).unwrap(),
                    )];
                    if t >= 2 {
                        cases.push((SampleClass::ContainsDefection, phi_defection(g(x), pos, &c).unwrap()));
                    }
                    for (class, closed) in cases {
                        let exact = enumerate_exact(&c, g(x), class, pos).map_err(|e| e.to_string())?.phi;
                        let err = (exact - closed).abs();
                        worst = worst.max(err);
                        count += 1;
                        ensure(err <= 1e-10, || format!("b={b} n={n} t={t} gamma={x} {class:?}: {closed} vs {exact}"))?;
                    }
                }
            }
        }
    }
    Ok(format!("{count} comparisons, max error {worst:.1e}"))
}

fn monte_carlo_agreement() -> Outcome {
    let c = GameConfig::symmetric(4, 5, 16.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut seed = 100;
    for x in [0.2, 0.5, 0.8] {
        for t in 1..=4 {
            let pos = PositionIndex::new(t, &c).unwrap();
            let mut cases = vec![(
                if t == 1 { SampleClass::FirstGroup } else { SampleClass::CleanFull },
                phi_clean(g(x), pos, &c).unwrap(),
            )];
            if t >= 2 {
                cases.push((SampleClass::ContainsDefection, phi_defection(g(x), pos, &c).unwrap()));
            }
            for (class, closed) in cases {
                seed += 1;
                let est = estimate_phi(&c, g(x), pos, class, 100_000, seed).map_err(|e| e.to_string())?;
                let z = est.z_score(closed);
                worst = worst.max(z.abs());
                ensure(z.abs() <= 3.0, || {
                    format!("gamma={x} t={t} {class:?}: {} +- {} vs {closed}", est.mean, est.std_error)
                })?;
            }
        }
    }
    let target = psi_profile(g(0.5), &c);
    let coarse = estimate_psi(&c, g(0.5), 1e-2, 1_000_000, 7).map_err(|e| e.to_string())?;
    let fine = estimate_psi(&c, g(0.5), 1e-3, 4_000_000, 8).map_err(|e| e.to_string())?;
    let (d1, d2) = (coarse.tv_distance(&target), fine.tv_distance(&target));
    ensure(d2 < d1, || format!("psi TV did not shrink: {d1:.5} -> {d2:.5}"))?;
    Ok(format!("phi max |z| = {worst:.2}; psi TV {d1:.5} (eps 1e-2) -> {d2:.5} (eps 1e-3)"))
}

fn equilibrium_reproduction() -> Outcome {
    let s = SolverSettings::default();
    let c = GameConfig::symmetric(4, 5, 16.0).unwrap();
    let rs = find_r_sharp(&c, &s).map_err(|e| e.to_string())?;
    ensure(rs.value < 20.0, || format!("r# = {} not below N", rs.value))?;
    let back = delta(g(rs.gamma), rs.value, &c);
    ensure(back.abs() < 1e-9, || format!("delta(r#, gamma0) = {back:e}"))?;

    let r = rs.value + 1.0;
    let c1 = c.with_rate(r).unwrap();
    let gamma0 = find_delta_max(r, &c1, &s).map_err(|e| e.to_string())?.gamma;
    let roots = find_mixed_roots(r, &c1, &s).map_err(|e| e.to_string())?;
    let MixedRoots::Pair { lower, upper, .. } = roots else {
        return Err(format!("expected two roots at r# + 1, got {roots:?}"));
    };
    ensure(lower.gamma < gamma0 && gamma0 < upper.gamma, || {
        format!("ordering {} < {gamma0} < {} fails", lower.gamma, upper.gamma)
    })?;
    for root in [&lower, &upper] {
        let res = delta(g(root.gamma), r, &c1);
        ensure(res.abs() < 1e-10, || format!("residual {res:e} at {}", root.gamma))?;
    }
    let inner = linspace(lower.gamma, upper.gamma, 101);
    for &x in &inner[1..100] {
        let d = delta(g(x), r, &c1);
        ensure(d > 0.0, || format!("delta({x}) = {d} between roots"))?;
    }
    for below in [rs.value - 1.0, rs.value - 1e-3, 2.0] {
        let cb = c.with_rate(below).unwrap();
        let out = find_mixed_roots(below, &cb, &s).map_err(|e| e.to_string())?;
        ensure(out == MixedRoots::None, || format!("r = {below}: expected no roots, got {out:?}"))?;
    }
    Ok(format!("r# = {:.9}, roots at r# + 1: {:.6}, {:.6}", rs.value, lower.gamma, upper.gamma))
}

fn threshold_formulas() -> Outcome {
    let c = GameConfig::new(12, 6, 2, 2, 5.0).unwrap();
    let th = threshold_m_gt_1(&c).map_err(|e| e.to_string())?.value().unwrap();
    ensure((th - 3.0).abs() < 1e-12, || format!("N=12 n=2 m=2 gave {th}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let big_n = rng.gen_range(3..=60usize);
        let m = rng.gen_range(2..big_n);
        let expect = 2.0 * big_n as f64 / (big_n - m + 1) as f64;
        let via_formula = sample_threshold_formula(big_n, 1, m).value().unwrap();
        let cfg = GameConfig::new(big_n as i64, big_n as i64, 1, m as i64, 1.5).unwrap();
        let via_op = threshold_m_gt_1(&cfg).map_err(|e| e.to_string())?.value().unwrap();
        for v in [via_formula, via_op] {
            ensure((v - expect).abs() < 1e-12, || format!("N={big_n} m={m}: {v} vs {expect}"))?;
        }
    }
    let single = GameConfig::new(10, 10, 1, 1, 1.5).unwrap();
    let th1 = threshold_m_eq_1(&single).map_err(|e| e.to_string())?.value().unwrap();
    ensure((th1 - 2.0).abs() < 1e-12, || format!("n=1 single observation gave {th1}"))?;
    Ok("3 at (12,2,2); 10 singleton reductions; 2 at n=1".into())
}

fn ordering_chain() -> Outcome {
    let mut checked = 0;
    for b in [3usize, 4, 5] {
        for n in [2usize, 3, 5] {
            let c = GameConfig::symmetric(b, n, 1.5).unwrap();
            for k in 0..101 {
                let x = k as f64 / 101.0;
                let rep = verify_lemma2(g(x), &c);
                checked += 1;
                ensure(rep.strict_first && rep.weak_second && rep.holds, || {
                    format!("b={b} n={n} gamma={x}: {rep:?}")
                })?;
            }
        }
    }
    Ok(format!("{checked} points"))
}

fn group_size_shift() -> Outcome {
    let s = SolverSettings::default();
    let small = GameConfig::symmetric(10, 2, 2.0).unwrap();
    let large = GameConfig::symmetric(4, 5, 2.0).unwrap();
    let rs_small = find_r_sharp(&small, &s).map_err(|e| e.to_string())?.value;
    let rs_large = find_r_sharp(&large, &s).map_err(|e| e.to_string())?.value;
    let r = rs_small.max(rs_large) + 1.0;
    let small = small.with_rate(r).unwrap();
    let large = large.with_rate(r).unwrap();
    let pair = |c: &GameConfig| -> Result<(f64, f64), String> {
        find_mixed_roots(r, c, &s)
            .map_err(|e| e.to_string())?
            .pair()
            .ok_or_else(|| format!("{c}: no root pair at r = {r}"))
    };
    let (s1, s2) = pair(&small)?;
    let (l1, l2) = pair(&large)?;
    ensure(l1 > s1 && l2 > s2, || format!("n=5 roots ({l1}, {l2}) not right of n=2 roots ({s1}, {s2})"))?;
    // Sign form: the larger game is still deterring at the smaller game's lower
    // root, and the smaller game has stopped deterring at the larger's upper root.
    let d_low = delta(g(s1), r, &large);
    let d_high = delta(g(l2), r, &small);
    ensure(d_low < 0.0 && d_high < 0.0, || format!("sign test: {d_low}, {d_high}"))?;
    Ok(format!("r = {r:.4}: n=2 ({s1:.4}, {s2:.4}) -> n=5 ({l1:.4}, {l2:.4})"))
}

fn coalition_payoffs() -> Outcome {
    let s = SolverSettings::default();
    let base = GameConfig::symmetric(4, 5, 2.0).unwrap();
    let r = find_r_sharp(&base, &s).map_err(|e| e.to_string())?.value + 1.0;
    let c = base.with_rate(r).unwrap();
    let (g1, g2) = find_mixed_roots(r, &c, &s)
        .map_err(|e| e.to_string())?
        .pair()
        .ok_or("no root pair")?;
    let pay = |x: f64, seed: u64| tremble_payoff(&c, g(x), 0.01, 100_000, seed).map_err(|e| e.to_string());
    let (p2, p1, p0) = (pay(g2, 1)?, pay(g1, 2)?, pay(0.0, 3)?);
    for (label, other) in [("gamma1", &p1), ("gamma0=0", &p0)] {
        let pooled = (p2.std_error.powi(2) + other.std_error.powi(2)).sqrt();
        let gap = p2.mean - other.mean;
        ensure(gap > 3.0 * pooled, || format!("gap to {label} {gap} <= 3 x {pooled}"))?;
    }
    Ok(format!("payoff gamma2 {:.4} > gamma1 {:.4}, zero {:.4}", p2.mean, p1.mean, p0.mean))
}

fn figure_one() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let opts = Figure1Options { rate: None, grid: 201, out_dir: dir.path().to_path_buf() };
    let fig = cmd_figure1(&opts, &SolverSettings::default(), 1).map_err(|e| e.to_string())?;
    ensure(fig.solid_path.exists() && fig.dashed_path.exists(), || "output files missing".into())?;

    let solid = &fig.solid.points;
    let (first, last) = (solid[0].1, solid[solid.len() - 1].1);
    ensure(first < 0.0 && (first - last).abs() < 1e-12, || format!("solid endpoints {first}, {last}"))?;
    let changes = solid.windows(2).filter(|w| (w[0].1 < 0.0) != (w[1].1 < 0.0)).count();
    ensure(changes == 2, || format!("solid curve has {changes} sign changes"))?;

    let dashed = &fig.dashed.points;
    ensure(dashed[0].1 > 0.0 && dashed[1].1 > 0.0, || format!("dashed near 0: {}, {}", dashed[0].1, dashed[1].1))?;
    let cross = dashed
        .iter()
        .position(|p| p.1 < 0.0)
        .ok_or("dashed curve never crosses zero")?;
    ensure(dashed[..=cross].windows(2).all(|w| w[1].1 < w[0].1), || {
        "dashed curve not decreasing down to its root".into()
    })?;
    Ok(format!(
        "r = {}, solid roots {:?}, dashed root near {:.4}",
        fig.rate, fig.solid.summary.roots, dashed[cross].0
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("boundary identity", boundary_identity, Duration::from_secs(1)),
        ("psi normalization and limit", psi_normalization, Duration::from_secs(1)),
        ("n=1 reduction", singleton_reduction, Duration::from_secs(1)),
        ("enumeration oracle", oracle_equivalence, Duration::from_secs(10)),
        ("monte carlo agreement", monte_carlo_agreement, Duration::from_secs(60)),
        ("equilibrium reproduction", equilibrium_reproduction, Duration::from_secs(5)),
        ("threshold formulas", threshold_formulas, Duration::from_secs(1)),
        ("ordering chain", ordering_chain, Duration::from_secs(2)),
        ("group-size shift", group_size_shift, Duration::from_secs(5)),
        ("coalition payoffs", coalition_payoffs, Duration::from_secs(120)),
        ("figure 1 shape", figure_one, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget {budget:?}")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {:>2} {:<28} {} ({:.2} s) {}",
            k + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            detail
        );
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
