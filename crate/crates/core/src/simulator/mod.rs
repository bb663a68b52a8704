//! Independent checks on the closed forms: full Monte Carlo play of the
//! game, paired-branch estimates of `φ`, tremble-conditioned position
//! frequencies for `ψ`, exact enumeration of the group chain, and payoffs
//! under small mistake probabilities.
//!
//! Replication `k` of a run with seed `s` draws from ChaCha8 keyed by `s` on
//! stream `k`, so results do not depend on how replications are scheduled.
//! Replications are processed in fixed-size chunks and the chunk summaries
//! are merged in chunk order.

mod enumerate;
mod stats;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{ForgivenessRate, SampleClass};
use crate::error::{Error, Result};
use crate::game::{payoff_unchecked, window_sample, Action, GameConfig, GroupHistory, PositionIndex, Sample};

pub use enumerate::{enumerate_exact, ExactContinuation, MAX_ENUM_GROUPS, MAX_ENUM_GROUP_SIZE};
pub use stats::SimEstimate;
use stats::RunningStats;

const CHUNK: u64 = 1024;

/// RNG for replication `replication` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Behavior shared by every player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyProfile {
    /// Probability of contributing on the first group's empty sample or a
    /// clean sample.
    pub clean_response: f64,
    /// Probability of contributing after a sample that shows a defection.
    pub forgiveness: f64,
    /// Probability that an intended contribution turns into a defection.
    pub tremble: f64,
}

impl StrategyProfile {
    pub fn new(clean_response: f64, forgiveness: f64, tremble: f64) -> Result<Self> {
        let unit = 0.0..=1.0;
        if !unit.contains(&clean_response) || !unit.contains(&forgiveness) {
            return Err(Error::domain("profile probabilities must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&tremble) {
            return Err(Error::domain(format!("tremble {tremble} outside [0, 1)")));
        }
        Ok(StrategyProfile {
            clean_response,
            forgiveness,
            tremble,
        })
    }

    /// Contribute on clean samples, forgive defections with probability `γ`.
    pub fn conditional(gamma: ForgivenessRate) -> Self {
        StrategyProfile {
            clean_response: 1.0,
            forgiveness: gamma.value(),
            tremble: 0.0,
        }
    }

    pub fn with_tremble(self, tremble: f64) -> Result<Self> {
        Self::new(self.clean_response, self.forgiveness, tremble)
    }

    /// Probability that a player actually contributes after `class`.
    pub fn contribute_probability(&self, class: SampleClass) -> f64 {
        let intended = match class {
            SampleClass::FirstGroup | SampleClass::CleanFull => self.clean_response,
            SampleClass::ContainsDefection => self.forgiveness,
        };
        intended * (1.0 - self.tremble)
    }
}

/// Forces one player's action regardless of the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationSpec {
    /// `(position, member index within the group)`. `None` targets player 0
    /// wherever Nature places them.
    pub target: Option<(PositionIndex, usize)>,
    pub forced_action: Action,
}

impl DeviationSpec {
    pub fn at(t: PositionIndex, member: usize, forced_action: Action, config: &GameConfig) -> Result<Self> {
        if t.get() > config.groups() || member >= config.group_size() {
            return Err(Error::domain(format!(
                "deviation target ({}, {member}) outside the {}x{} game",
                t.get(),
                config.groups(),
                config.group_size()
            )));
        }
        Ok(DeviationSpec {
            target: Some((t, member)),
            forced_action,
        })
    }
}

/// One realized play of the game.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameOutcome {
    /// `order[t-1]` is the id of the group playing at position `t`.
    pub order: Vec<usize>,
    /// Player ids at each position.
    pub members: Vec<Vec<usize>>,
    pub samples: Vec<Sample>,
    pub history: GroupHistory,
    /// Indexed by player id.
    pub actions: Vec<Action>,
    /// Indexed by player id.
    pub payoffs: Vec<f64>,
}

/// Plays one game: Nature draws a uniform assignment of players to groups
/// and a uniform order of groups, then groups act in sequence.
pub fn simulate_game(
    config: &GameConfig,
    profile: &StrategyProfile,
    deviation: Option<&DeviationSpec>,
    seed: u64,
) -> GameOutcome {
    simulate_game_with(config, profile, deviation, &mut replication_rng(seed, 0))
}

pub fn simulate_game_with<R: Rng>(
    config: &GameConfig,
    profile: &StrategyProfile,
    deviation: Option<&DeviationSpec>,
    rng: &mut R,
) -> GameOutcome {
    let (big_n, b, n) = (config.players(), config.groups(), config.group_size());
    let mut players: Vec<usize> = (0..big_n).collect();
    players.shuffle(rng);
    let mut order: Vec<usize> = (0..b).collect();
    order.shuffle(rng);
    let members: Vec<Vec<usize>> = order
        .iter()
        .map(|&group| players[group * n..(group + 1) * n].to_vec())
        .collect();

    let mut actions = vec![Action::Defect; big_n];
    let mut samples = Vec::with_capacity(b);
    let mut history = GroupHistory::empty();
    for (pos, group) in members.iter().enumerate() {
        let sample = window_sample(history.as_slice(), config.sample_size());
        let p = profile.contribute_probability(SampleClass::of(&sample, config));
        let mut total = 0;
        for (member, &player) in group.iter().enumerate() {
            // A uniform is drawn for every player so forced actions do not
            // shift the random stream of the others.
            let u: f64 = rng.gen();
            let forced = deviation.and_then(|d| match d.target {
                Some((t, k)) if t.get() == pos + 1 && k == member => Some(d.forced_action),
                None if player == 0 => Some(d.forced_action),
                _ => None,
            });
            let action = forced.unwrap_or(if u < p { Action::Contribute } else { Action::Defect });
            actions[player] = action;
            total += action.units();
        }
        samples.push(sample);
        history.push_unchecked(total);
    }

    let grand_total = history.total();
    let payoffs = actions
        .iter()
        .map(|a| payoff_unchecked(*a, grand_total - a.units(), config))
        .collect();
    GameOutcome {
        order,
        members,
        samples,
        history,
        actions,
        payoffs,
    }
}

/// Runs `replications` independent draws of `f` in fixed chunks and merges
/// the per-chunk summaries in chunk order.
fn run_replications<T, F, M>(replications: u64, seed: u64, init: T, f: F, merge: M) -> T
where
    T: Clone + Send + Sync,
    F: Fn(&mut T, &mut ChaCha8Rng) + Sync,
    M: Fn(T, T) -> T,
{
    let chunks = replications.div_ceil(CHUNK);
    let partials: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init.clone();
            let end = ((c + 1) * CHUNK).min(replications);
            for rep in c * CHUNK..end {
                f(&mut acc, &mut replication_rng(seed, rep));
            }
            acc
        })
        .collect();
    partials.into_iter().fold(init, merge)
}

/// Paired-branch estimate of `φ_t`: each replication plays positions
/// `t..=b` twice on the same uniforms, once with member 0 of group `t`
/// contributing and once defecting, and records the difference in total
/// contributions (own unit included).
///
/// The conditioning sample is produced by fixing the earlier groups: all
/// full, except group `t-1` short by one for [`SampleClass::ContainsDefection`].
pub fn estimate_phi(
    config: &GameConfig,
    gamma: ForgivenessRate,
    t: PositionIndex,
    class: SampleClass,
    replications: u64,
    seed: u64,
) -> Result<SimEstimate> {
    let (b, n) = (config.groups(), config.group_size());
    let t = t.get();
    if t > b {
        return Err(Error::domain(format!("position {t} outside 1..={b}")));
    }
    match class {
        SampleClass::ContainsDefection if t < 2 => {
            return Err(Error::domain("a defection sample needs a predecessor group"))
        }
        SampleClass::FirstGroup if t != 1 => {
            return Err(Error::domain("the first-group sample only occurs at t = 1"))
        }
        SampleClass::CleanFull if t < 2 => {
            return Err(Error::domain("a clean sample needs a predecessor group; use FirstGroup"))
        }
        _ => {}
    }
    if replications == 0 {
        return Err(Error::domain("at least one replication is required"));
    }
    let profile = StrategyProfile::conditional(gamma);
    let mut prefix = vec![n; t - 1];
    if class == SampleClass::ContainsDefection {
        prefix[t - 2] = n - 1;
    }
    let remaining = b - t + 1;

    let stats = run_replications(
        replications,
        seed,
        RunningStats::default(),
        |acc, rng| {
            let uniforms: Vec<f64> = (0..remaining * n).map(|_| rng.gen()).collect();
            let with_c = play_from(config, &profile, &prefix, &uniforms, Action::Contribute);
            let with_d = play_from(config, &profile, &prefix, &uniforms, Action::Defect);
            acc.push(with_c as f64 - with_d as f64);
        },
        RunningStats::merge,
    );
    Ok(SimEstimate::from_stats(stats, seed))
}

/// Total contributions of positions after `prefix`, with member 0 of the
/// first of them forced to `forced`.
fn play_from(config: &GameConfig, profile: &StrategyProfile, prefix: &[usize], uniforms: &[f64], forced: Action) -> usize {
    let n = config.group_size();
    let mut history = prefix.to_vec();
    let mut total = 0;
    for (k, block) in uniforms.chunks(n).enumerate() {
        let sample = window_sample(&history, config.sample_size());
        let p = profile.contribute_probability(SampleClass::of(&sample, config));
        let g: usize = block
            .iter()
            .enumerate()
            .map(|(member, &u)| {
                if k == 0 && member == 0 {
                    forced.units()
                } else {
                    usize::from(u < p)
                }
            })
            .sum();
        history.push(g);
        total += g;
    }
    total
}

/// Empirical distribution of the position of players who witness a
/// defection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiEstimate {
    /// Entry `k` is position `k + 2`; sums to one.
    pub frequencies: Vec<f64>,
    /// Observing players per position, same indexing.
    pub counts: Vec<u64>,
    pub events: u64,
    pub replications: u64,
    pub seed: u64,
}

impl PsiEstimate {
    /// Total-variation distance to a reference distribution over `t = 2..b`.
    pub fn tv_distance(&self, reference: &[f64]) -> f64 {
        0.5 * self
            .frequencies
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

/// Plays full games with trembles and tallies, for every player whose sample
/// contains a defection, the position they were in.
pub fn estimate_psi(
    config: &GameConfig,
    gamma: ForgivenessRate,
    tremble: f64,
    replications: u64,
    seed: u64,
) -> Result<PsiEstimate> {
    if tremble.is_nan() || tremble <= 0.0 {
        return Err(Error::domain(
            "a positive tremble is required: without mistakes no defection is ever observed",
        ));
    }
    let profile = StrategyProfile::conditional(gamma).with_tremble(tremble)?;
    let b = config.groups();
    let n = config.group_size() as u64;
    let counts = run_replications(
        replications,
        seed,
        vec![0u64; b],
        |acc, rng| {
            let game = simulate_game_with(config, &profile, None, rng);
            for (pos, s) in game.samples.iter().enumerate() {
                if SampleClass::of(s, config) == SampleClass::ContainsDefection {
                    acc[pos] += n;
                }
            }
        },
        |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        },
    );
    debug_assert_eq!(counts[0], 0);
    let counts = counts[1..].to_vec();
    let events: u64 = counts.iter().sum();
    if events == 0 {
        return Err(Error::InsufficientData(format!(
            "no defection was observed in {replications} games at tremble {tremble}"
        )));
    }
    Ok(PsiEstimate {
        frequencies: counts.iter().map(|&c| c as f64 / events as f64).collect(),
        counts,
        events,
        replications,
        seed,
    })
}

/// Average realized payoff per player when everyone contributes on clean
/// samples, forgives with probability `γ`, and trembles with probability `ε`.
pub fn tremble_payoff(
    config: &GameConfig,
    gamma: ForgivenessRate,
    tremble: f64,
    replications: u64,
    seed: u64,
) -> Result<SimEstimate> {
    if !(0.0..=0.1).contains(&tremble) {
        return Err(Error::domain(format!("tremble {tremble} outside [0, 0.1]")));
    }
    if replications == 0 {
        return Err(Error::domain("at least one replication is required"));
    }
    let profile = StrategyProfile::conditional(gamma).with_tremble(tremble)?;
    let big_n = config.players() as f64;
    let stats = run_replications(
        replications,
        seed,
        RunningStats::default(),
        |acc, rng| {
            let game = simulate_game_with(config, &profile, None, rng);
            acc.push(game.payoffs.iter().sum::<f64>() / big_n);
        },
        RunningStats::merge,
    );
    Ok(SimEstimate::from_stats(stats, seed))
}

/// One CSV row of simulation output.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EstimateRecord {
    #[serde(rename = "N")]
    pub players: usize,
    pub b: usize,
    pub n: usize,
    pub m: usize,
    pub r: f64,
    pub gamma: f64,
    pub epsilon: f64,
    /// Empty for whole-game quantities.
    pub t: Option<usize>,
    pub quantity: String,
    pub mean: f64,
    pub std_error: f64,
    pub replications: u64,
    pub seed: u64,
}

impl EstimateRecord {
    pub fn new(
        config: &GameConfig,
        gamma: f64,
        epsilon: f64,
        t: Option<usize>,
        quantity: &str,
        est: &SimEstimate,
    ) -> Self {
        EstimateRecord {
            players: config.players(),
            b: config.groups(),
            n: config.group_size(),
            m: config.sample_size(),
            r: config.rate(),
            gamma,
            epsilon,
            t,
            quantity: quantity.to_string(),
            mean: est.mean,
            std_error: est.std_error,
            replications: est.replications,
            seed: est.seed,
        }
    }
}

pub fn write_estimates_csv<W: Write>(out: W, records: &[EstimateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{phi_clean, phi_defection};

    fn g(x: f64) -> ForgivenessRate {
        ForgivenessRate::new(x).unwrap()
    }

    fn cfg() -> GameConfig {
        GameConfig::symmetric(4, 5, 16.0).unwrap()
    }

    #[test]
    fn full_cooperation_on_path() {
        let c = cfg();
        for seed in 0..20 {
            let game = simulate_game(&c, &StrategyProfile::conditional(g(0.37)), None, seed);
            assert_eq!(game.history.as_slice(), &[5, 5, 5, 5]);
            for p in &game.payoffs {
                assert!((p - 15.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nature_draws_partitions() {
        let c = cfg();
        let game = simulate_game(&c, &StrategyProfile::conditional(g(0.0)), None, 9);
        let mut seen: Vec<usize> = game.members.concat();
        seen.sort();
        assert_eq!(seen, (0..20).collect::<Vec<_>>());
        let mut order = game.order.clone();
        order.sort();
        assert_eq!(order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn first_group_defection_unravels_without_forgiveness() {
        let c = cfg();
        let dev = DeviationSpec::at(PositionIndex::new(1, &c).unwrap(), 2, Action::Defect, &c).unwrap();
        let game = simulate_game(&c, &StrategyProfile::conditional(g(0.0)), Some(&dev), 3);
        assert_eq!(game.history.as_slice(), &[4, 0, 0, 0]);
        let game = simulate_game(&c, &StrategyProfile::conditional(g(1.0)), Some(&dev), 3);
        assert_eq!(game.history.as_slice(), &[4, 5, 5, 5]);
    }

    #[test]
    fn untargeted_deviation_follows_player_zero() {
        let c = cfg();
        let dev = DeviationSpec { target: None, forced_action: Action::Defect };
        let game = simulate_game(&c, &StrategyProfile::conditional(g(0.0)), Some(&dev), 11);
        assert_eq!(game.actions[0], Action::Defect);
        assert_eq!(game.history.total(), 20 - 1 - 5 * (4 - 1 - game.members.iter().position(|m| m.contains(&0)).unwrap()));
    }

    #[test]
    fn reproducible() {
        let c = cfg();
        let a = tremble_payoff(&c, g(0.6), 0.05, 3000, 42).unwrap();
        let b = tremble_payoff(&c, g(0.6), 0.05, 3000, 42).unwrap();
        assert_eq!(a, b);
        let p = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c2 = p.install(|| tremble_payoff(&c, g(0.6), 0.05, 3000, 42).unwrap());
        assert_eq!(a, c2);
    }

    #[test]
    fn phi_estimates_near_closed_forms() {
        let c = GameConfig::symmetric(3, 2, 2.0).unwrap();
        let t = PositionIndex::new(2, &c).unwrap();
        let clean = estimate_phi(&c, g(0.5), t, SampleClass::CleanFull, 100_000, 1).unwrap();
        assert!(clean.z_score(phi_clean(g(0.5), t, &c).unwrap()) < 3.0);
        let dirty = estimate_phi(&c, g(0.5), t, SampleClass::ContainsDefection, 100_000, 2).unwrap();
        assert!(dirty.z_score(phi_defection(g(0.5), t, &c).unwrap()) < 3.0);
    }

    #[test]
    fn phi_is_exactly_one_under_full_forgiveness() {
        let c = cfg();
        for class in [SampleClass::CleanFull, SampleClass::ContainsDefection] {
            let est = estimate_phi(&c, g(1.0), PositionIndex::new(2, &c).unwrap(), class, 500, 5).unwrap();
            assert_eq!((est.mean, est.std_error), (1.0, 0.0));
        }
        let est = estimate_phi(&c, g(1.0), PositionIndex::new(2, &c).unwrap(), SampleClass::CleanFull, 50, 5).unwrap();
        assert!(est.low_replications);
    }

    #[test]
    fn phi_class_preconditions() {
        let c = cfg();
        let t1 = PositionIndex::new(1, &c).unwrap();
        assert!(estimate_phi(&c, g(0.5), t1, SampleClass::ContainsDefection, 10, 0).is_err());
        assert!(estimate_phi(&c, g(0.5), t1, SampleClass::CleanFull, 10, 0).is_err());
        let est = estimate_phi(&c, g(0.0), t1, SampleClass::FirstGroup, 10, 0).unwrap();
        assert_eq!(est.mean, 16.0);
    }

    #[test]
    fn psi_needs_trembles() {
        let c = cfg();
        assert!(estimate_psi(&c, g(0.5), 0.0, 10, 0).is_err());
        assert!(matches!(
            estimate_psi(&c, g(0.5), 1e-9, 10, 0),
            Err(Error::InsufficientData(_))
        ));
        let est = estimate_psi(&c, g(0.5), 0.05, 2000, 0).unwrap();
        assert_eq!(est.frequencies.len(), 3);
        assert!((est.frequencies.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn payoffs_without_and_with_full_forgiveness() {
        let c = cfg();
        let est = tremble_payoff(&c, g(0.3), 0.0, 200, 0).unwrap();
        assert!((est.mean - 15.0).abs() < 1e-12);
        let est = tremble_payoff(&c, g(1.0), 0.05, 20_000, 0).unwrap();
        assert!(est.z_score(15.0 * 0.95) < 3.0);
        assert!(tremble_payoff(&c, g(1.0), 0.2, 10, 0).is_err());
    }

    #[test]
    fn csv_rows() {
        let c = cfg();
        let est = tremble_payoff(&c, g(1.0), 0.01, 100, 7).unwrap();
        let rec = EstimateRecord::new(&c, 1.0, 0.01, None, "payoff", &est);
        let mut buf = Vec::new();
        write_estimates_csv(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,b,n,m,r,gamma,epsilon,t,quantity,mean,std_error,replications,seed\n"));
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let back: EstimateRecord = rd.deserialize().next().unwrap().unwrap();
        assert_eq!(back, rec);
    }
}
