//! Kendall's tau-b and the paired vectors it is computed on for replicated
//! scenarios.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::table::{ScoreRecord, ScoreTable};
use crate::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TauResult {
    pub tau_b: f64,
    /// Number of paired observations.
    pub n_pairs: usize,
}

/// Tie-corrected rank correlation `(C − D) / sqrt((n0 − n1)(n0 − n2))`,
/// counted in O(n log n) by sorting on `x` and merge-sorting `y`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<TauResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooShort);
    }
    if let Some(i) = (0..n).find(|&i| !x[i].is_finite() || !y[i].is_finite()) {
        return Err(StatsError::NonFinite(i));
    }

    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n * (n - 1) / 2) as i64;
    let tied_x = tied_pairs(pairs.iter().map(|p| p.0));
    let tied_xy = tied_pairs_by(&pairs, |a, b| a == b);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf) as i64;
    let tied_y = tied_pairs(ys.iter().copied());

    let denom = ((n0 - tied_x) as f64) * ((n0 - tied_y) as f64);
    if denom == 0.0 {
        return Err(StatsError::AllTied);
    }
    // Pairs untied in both: concordant + discordant = n0 − n1 − n2 + n3, and
    // discordant pairs are exactly the strict inversions of y.
    let numer = n0 - tied_x - tied_y + tied_xy - 2 * swaps;
    let tau_b = (numer as f64 / denom.sqrt()).clamp(-1.0, 1.0);
    Ok(TauResult { tau_b, n_pairs: n })
}

/// Pairs tied within runs of equal values of an already sorted sequence.
fn tied_pairs(sorted: impl Iterator<Item = f64>) -> i64 {
    let v: Vec<f64> = sorted.collect();
    tied_pairs_by(&v, |a, b| a == b)
}

fn tied_pairs_by<T>(sorted: &[T], eq: impl Fn(&T, &T) -> bool) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps =
        merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Per-category score vectors for the two actors of each replicated scenario.
///
/// Both vectors are ordered by scenario (alphabetically) and then by `arms`
/// in the order given. Within a scenario the alphabetically first actor fills
/// `first` and the other fills `second`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationPairs {
    /// (scenario, arm) of each position.
    pub cells: Vec<(String, String)>,
    pub categories: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

pub fn replication_pairs(
    table: &ScoreTable,
    scenarios: &[&str],
    arms: &[&str],
) -> Result<ReplicationPairs, StatsError> {
    let scenarios: BTreeSet<&str> = scenarios.iter().copied().collect();
    let mut cells = Vec::new();
    let mut actor_pairs = Vec::new();
    for scenario in &scenarios {
        for arm in arms {
            let actors: BTreeSet<&str> = table
                .rows()
                .iter()
                .filter(|r| r.scenario == *scenario && r.arm == *arm)
                .map(|r| r.actor.as_str())
                .collect();
            if actors.len() != 2 {
                return Err(StatsError::Replication {
                    scenario: (*scenario).to_owned(),
                    arm: (*arm).to_owned(),
                    actors: actors.len(),
                });
            }
            let mut it = actors.into_iter();
            actor_pairs.push([it.next().unwrap(), it.next().unwrap()]);
            cells.push(((*scenario).to_owned(), (*arm).to_owned()));
        }
    }

    let lookup: BTreeMap<(&str, &str, &str, &str), &ScoreRecord> = table
        .rows()
        .iter()
        .filter(|r| scenarios.contains(r.scenario.as_str()))
        .map(|r| {
            (
                (
                    r.scenario.as_str(),
                    r.arm.as_str(),
                    r.actor.as_str(),
                    r.category.as_str(),
                ),
                r,
            )
        })
        .collect();
    let categories: BTreeSet<&str> = lookup
        .keys()
        .filter(|k| arms.contains(&k.1))
        .map(|k| k.3)
        .collect();

    let mut out = BTreeMap::new();
    for category in categories {
        let mut first = Vec::with_capacity(cells.len());
        let mut second = Vec::with_capacity(cells.len());
        for ((scenario, arm), actors) in cells.iter().zip(&actor_pairs) {
            for (slot, actor) in [&mut first, &mut second].into_iter().zip(actors) {
                let row = lookup
                    .get(&(scenario.as_str(), arm.as_str(), *actor, category))
                    .ok_or_else(|| StatsError::MissingCell {
                        category: category.to_owned(),
                        scenario: scenario.clone(),
                        arm: arm.clone(),
                        actor: (*actor).to_owned(),
                    })?;
                slot.push(row.value);
            }
        }
        out.insert(category.to_owned(), (first, second));
    }
    Ok(ReplicationPairs {
        cells,
        categories: out,
    })
}
