use serde::Serialize;

use crate::analytics::{ForgivenessRate, SampleClass};
use crate::error::{Error, Result};
use crate::game::{GameConfig, PositionIndex};

pub const MAX_ENUM_GROUPS: usize = 6;
pub const MAX_ENUM_GROUP_SIZE: usize = 4;

/// Exact continuation expectations from position `t` onwards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactContinuation {
    /// `Σ_i (E_C[G_i] - E_D[G_i])` over positions `t..=b`.
    pub phi: f64,
    /// `E[G_i]` for `i = t..=b` when the player contributes.
    pub contribute: Vec<f64>,
    /// Same, when the player defects.
    pub defect: Vec<f64>,
}

/// Distribution of the number of contributors among `members` players who
/// each contribute independently with probability `p`, by listing every
/// action profile.
fn enumerate_group(members: usize, p: f64) -> Vec<f64> {
    let mut dist = vec![0.0; members + 1];
    for mask in 0u32..(1u32 << members) {
        let mut prob = 1.0;
        for i in 0..members {
            prob *= if mask & (1 << i) != 0 { p } else { 1.0 - p };
        }
        dist[mask.count_ones() as usize] += prob;
    }
    dist
}

/// Exact dynamic programming over the single-observation group chain.
///
/// The state is the previous group's contribution total. A group that saw a
/// full predecessor contributes fully; otherwise each member contributes
/// with probability `γ`. Group `t` holds the deviating player, whose
/// teammates react to `initial`.
pub fn enumerate_exact(
    config: &GameConfig,
    gamma: ForgivenessRate,
    initial: SampleClass,
    t: PositionIndex,
) -> Result<ExactContinuation> {
    let (b, n) = (config.groups(), config.group_size());
    if b > MAX_ENUM_GROUPS || n > MAX_ENUM_GROUP_SIZE {
        return Err(Error::domain(format!(
            "enumeration limited to b <= {MAX_ENUM_GROUPS} and n <= {MAX_ENUM_GROUP_SIZE}, got b = {b}, n = {n}"
        )));
    }
    if config.sample_size() != 1 {
        return Err(Error::domain("enumeration models the m = 1 chain only"));
    }
    let t = t.get();
    if t > b {
        return Err(Error::domain(format!("position {t} outside 1..={b}")));
    }
    let teammate_p = match initial {
        SampleClass::FirstGroup if t == 1 => 1.0,
        SampleClass::CleanFull if t >= 2 => 1.0,
        SampleClass::ContainsDefection if t >= 2 => gamma.value(),
        _ => {
            return Err(Error::domain(format!(
                "sample class {initial:?} cannot occur at position {t}"
            )))
        }
    };
    let teammates = enumerate_group(n - 1, teammate_p);
    let full = enumerate_group(n, 1.0);
    let forgiving = enumerate_group(n, gamma.value());

    let branch = |own: usize| -> Vec<f64> {
        // dist[g] = P(current group total = g)
        let mut dist = vec![0.0; n + 1];
        for (k, p) in teammates.iter().enumerate() {
            dist[k + own] += p;
        }
        let mut expectations = Vec::with_capacity(b - t + 1);
        for _ in t..=b {
            expectations.push(dist.iter().enumerate().map(|(g, p)| g as f64 * p).sum());
            let mut next = vec![0.0; n + 1];
            for (g_prev, &p_prev) in dist.iter().enumerate() {
                let reaction = if g_prev == n { &full } else { &forgiving };
                for (g, &p) in reaction.iter().enumerate() {
                    next[g] += p_prev * p;
                }
            }
            dist = next;
        }
        expectations
    };

    let contribute = branch(1);
    let defect = branch(0);
    let phi = contribute.iter().zip(&defect).map(|(c, d)| c - d).sum();
    Ok(ExactContinuation {
        phi,
        contribute,
        defect,
    })
}
