//! Independent oracles and data generators for the statistics tests.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use telesim_stats::{ScoreRecord, ScoreTable};

/// Standard normal draw by Box–Muller.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Tau-b by visiting every pair.
pub fn brute_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                tx += 1;
            }
            if dy == 0.0 {
                ty += 1;
            }
            if dx * dy > 0.0 {
                c += 1;
            } else if dx * dy < 0.0 {
                d += 1;
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - tx) * (n0 - ty)) as f64;
    (denom > 0.0).then(|| (c - d) as f64 / denom.sqrt())
}

/// Solves (XᵀX)β = Xᵀy by Gauss–Jordan elimination with partial pivoting.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, yi) in x.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * yi;
        }
    }
    for col in 0..p {
        let pivot = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..p {
            if r != col {
                let f = a[r][col];
                for k in 0..=p {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    a.iter().map(|row| row[p]).collect()
}

pub const ARMS: [&str; 4] = ["a_ref", "b_plus10", "c_minus5", "d_plus3"];
pub const PLANTED: [f64; 4] = [0.0, 10.0, -5.0, 3.0];

/// Crossover table for one category: every (scenario, actor) pair sees every
/// arm once. `value = 50 + arm effect + scenario offset + actor offset + noise`.
pub fn crossover_table(
    rng: &mut impl Rng,
    scenarios: usize,
    actors: usize,
    effects: &[f64; 4],
    noise_sd: f64,
) -> ScoreTable {
    let s_off: Vec<f64> = (0..scenarios)
        .map(|_| rng.random_range(-20.0..20.0))
        .collect();
    let a_off: Vec<f64> = (0..actors).map(|_| rng.random_range(-10.0..10.0)).collect();
    let mut rows = Vec::new();
    for s in 0..scenarios {
        for a in 0..actors {
            for (k, arm) in ARMS.iter().enumerate() {
                let value = 50.0 + effects[k] + s_off[s] + a_off[a] + noise_sd * normal(rng);
                rows.push(ScoreRecord::new(
                    &format!("e{s}_{a}_{k}"),
                    arm,
                    &format!("scen_{s:02}"),
                    &format!("actor_{a:02}"),
                    "total",
                    value,
                ));
            }
        }
    }
    ScoreTable::new(rows).unwrap()
}
