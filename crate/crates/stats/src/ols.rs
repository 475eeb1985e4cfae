//! Ordinary least squares with arm indicators and scenario and actor fixed
//! effects, plus t-tests on arm contrasts.
//!
//! Each factor is dummy coded with one level dropped: the caller's reference
//! arm, and the alphabetically first scenario and actor. Contrasts between arms
//! do not depend on which levels are dropped.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::table::ScoreTable;
use crate::StatsError;

/// Columns whose diagonal in R falls below this fraction of the column norm
/// are treated as linear combinations of the preceding columns.
const RANK_TOL: f64 = 1e-9;
/// Relative size below which residuals and contrasts count as rounding noise.
const NOISE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub category: String,
    pub reference_arm: String,
    /// Every arm in the data, reference first.
    pub arms: Vec<String>,
    /// Regressor names: `intercept`, then `arm:<id>`, `scenario:<id>`, `actor:<id>`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub residual_variance: f64,
    pub n: usize,
    pub df: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contrast {
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Column of `arm`'s indicator, `None` for the reference arm.
    fn arm_column(&self, arm: &str) -> Result<Option<usize>, StatsError> {
        if !self.arms.iter().any(|a| a == arm) {
            return Err(StatsError::UnknownArm(arm.to_owned()));
        }
        let name = format!("arm:{arm}");
        Ok(self.names.iter().position(|n| *n == name))
    }
}

pub fn fit_ols_fixed_effects(
    table: &ScoreTable,
    category: &str,
    reference_arm: &str,
) -> Result<OlsFit, StatsError> {
    let rows: Vec<_> = table.category(category).collect();
    if rows.is_empty() {
        return Err(StatsError::EmptyCategory(category.to_owned()));
    }
    let arms: BTreeSet<&str> = rows.iter().map(|r| r.arm.as_str()).collect();
    if !arms.contains(reference_arm) {
        return Err(StatsError::UnknownArm(reference_arm.to_owned()));
    }
    let scenarios: BTreeSet<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    let actors: BTreeSet<&str> = rows.iter().map(|r| r.actor.as_str()).collect();

    let mut names = vec!["intercept".to_owned()];
    let arm_levels: Vec<&str> = arms
        .iter()
        .copied()
        .filter(|a| *a != reference_arm)
        .collect();
    names.extend(arm_levels.iter().map(|a| format!("arm:{a}")));
    let scenario_levels: Vec<&str> = scenarios.iter().copied().skip(1).collect();
    names.extend(scenario_levels.iter().map(|s| format!("scenario:{s}")));
    let actor_levels: Vec<&str> = actors.iter().copied().skip(1).collect();
    names.extend(actor_levels.iter().map(|a| format!("actor:{a}")));

    let n = rows.len();
    let p = names.len();
    if n <= p {
        return Err(StatsError::NoResidualDf { rows: n, params: p });
    }
    let x = DMatrix::<f64>::from_fn(n, p, |i, j| {
        let r = rows[i];
        let hit = match j {
            0 => true,
            j if j <= arm_levels.len() => r.arm == arm_levels[j - 1],
            j if j <= arm_levels.len() + scenario_levels.len() => {
                r.scenario == scenario_levels[j - 1 - arm_levels.len()]
            }
            j => r.actor == actor_levels[j - 1 - arm_levels.len() - scenario_levels.len()],
        };
        if hit {
            1.0
        } else {
            0.0
        }
    });
    let y = DVector::from_iterator(n, rows.iter().map(|r| r.value));

    let qr = x.clone().qr();
    let r = qr.r();
    for j in 0..p {
        if r[(j, j)].abs() <= RANK_TOL * x.column(j).norm() {
            return Err(StatsError::RankDeficient(names[j].clone()));
        }
    }
    let qty = qr.q().transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .expect("diagonal checked nonzero");
    let resid = &y - &x * &beta;
    let df = n - p;
    // Residuals at rounding level mean an exact fit.
    let exact = resid.norm() <= NOISE_TOL * (1.0 + y.amax()) * (n as f64).sqrt();
    let residual_variance = if exact {
        0.0
    } else {
        resid.norm_squared() / df as f64
    };
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .expect("diagonal checked nonzero");
    let covariance = (&r_inv * r_inv.transpose()) * residual_variance;

    let mut all_arms = vec![reference_arm.to_owned()];
    all_arms.extend(arm_levels.iter().map(|a| (*a).to_owned()));
    Ok(OlsFit {
        category: category.to_owned(),
        reference_arm: reference_arm.to_owned(),
        arms: all_arms,
        names,
        coefficients: beta.iter().copied().collect(),
        covariance,
        residual_variance,
        n,
        df,
    })
}

/// Difference of arm effects `a − b` with a two-sided t-test on the fit's
/// residual degrees of freedom.
pub fn pairwise_contrast(fit: &OlsFit, a: &str, b: &str) -> Result<Contrast, StatsError> {
    let ia = fit.arm_column(a)?;
    let ib = fit.arm_column(b)?;
    if ia == ib {
        return Ok(Contrast {
            estimate: 0.0,
            se: 0.0,
            t: 0.0,
            p: 1.0,
        });
    }
    let coef = |i: Option<usize>| i.map_or(0.0, |i| fit.coefficients[i]);
    let cov = |i: Option<usize>, j: Option<usize>| match (i, j) {
        (Some(i), Some(j)) => fit.covariance[(i, j)],
        _ => 0.0,
    };
    let estimate = coef(ia) - coef(ib);
    let var = cov(ia, ia) + cov(ib, ib) - 2.0 * cov(ia, ib);
    let se = var.max(0.0).sqrt();
    let (t, p) = if se > 0.0 {
        let t = estimate / se;
        let dist = StudentsT::new(0.0, 1.0, fit.df as f64).expect("df is positive");
        (t, (2.0 * dist.sf(t.abs())).min(1.0))
    } else if estimate.abs()
        <= NOISE_TOL * (1.0 + fit.coefficients.iter().fold(0.0, |m, c| c.abs().max(m)))
    {
        (0.0, 1.0)
    } else {
        (estimate.signum() * f64::INFINITY, 0.0)
    };
    Ok(Contrast { estimate, se, t, p })
}
