//! Bayesian Bradley–Terry aggregation of pairwise preference judgments.
//!
//! Model: log-skills `theta_i ~ Normal(0, sigma^2)`, and item `i` beats `j`
//! with probability `logistic(theta_i - theta_j)`. The posterior mode is
//! found by damped Newton ascent; uncertainties come from the Laplace
//! approximation at the mode.

mod io;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::domain::PreferenceJudgment;

pub use io::{parse_judgments_csv, ranking_csv, JudgmentRow};

pub const DEFAULT_SIGMA_PRIOR: f64 = 1.0;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PreferenceError {
    #[error("need at least two items, got {0}")]
    DegenerateInput(usize),
    #[error("prior standard deviation must be positive and finite, got {0}")]
    BadPrior(f64),
    #[error("judgment references unknown item {0}")]
    UnknownItem(String),
    #[error("wins matrix must be square")]
    NotSquare,
}

/// `wins[i][j]` = number of times item `i` beat item `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRecord {
    pub items: Vec<String>,
    pub wins: Vec<Vec<u32>>,
}

impl ComparisonRecord {
    pub fn from_wins(wins: Vec<Vec<u32>>) -> Result<Self, PreferenceError> {
        let m = wins.len();
        if wins.iter().any(|row| row.len() != m) {
            return Err(PreferenceError::NotSquare);
        }
        let mut wins = wins;
        for (i, row) in wins.iter_mut().enumerate() {
            row[i] = 0;
        }
        Ok(ComparisonRecord {
            items: (0..m).map(|i| i.to_string()).collect(),
            wins,
        })
    }

    pub fn len(&self) -> usize {
        self.wins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wins.is_empty()
    }
}

/// Tallies judgments over a declared item universe.
///
/// Item index order is the order of first appearance in `items`.
pub fn judgments_to_record(
    items: &[String],
    judgments: &[PreferenceJudgment],
) -> Result<ComparisonRecord, PreferenceError> {
    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for item in items {
        if !index.contains_key(item.as_str()) {
            index.insert(item, order.len());
            order.push(item.clone());
        }
    }
    let m = order.len();
    let mut wins = vec![vec![0u32; m]; m];
    for j in judgments {
        let (winner, loser) = j.winner_and_loser();
        let w = *index
            .get(winner)
            .ok_or_else(|| PreferenceError::UnknownItem(winner.to_string()))?;
        let l = *index
            .get(loser)
            .ok_or_else(|| PreferenceError::UnknownItem(loser.to_string()))?;
        if w != l {
            wins[w][l] += 1;
        }
    }
    Ok(ComparisonRecord { items: order, wins })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkillPosterior {
    pub theta: Vec<f64>,
    pub sigma_prior: f64,
    pub stddev: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(logistic(x))` without overflow.
fn log_logistic(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Log-posterior (up to a constant).
pub fn log_posterior(wins: &[Vec<u32>], theta: &[f64], sigma_prior: f64) -> f64 {
    let mut total = 0.0;
    for (i, row) in wins.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w > 0 {
                total += w as f64 * log_logistic(theta[i] - theta[j]);
            }
        }
    }
    let prior: f64 = theta.iter().map(|t| t * t).sum();
    total - prior / (2.0 * sigma_prior * sigma_prior)
}

/// Analytic gradient of [`log_posterior`].
pub fn gradient(wins: &[Vec<u32>], theta: &[f64], sigma_prior: f64) -> Vec<f64> {
    let m = theta.len();
    let precision = 1.0 / (sigma_prior * sigma_prior);
    let mut g: Vec<f64> = theta.iter().map(|t| -t * precision).collect();
    for i in 0..m {
        for j in 0..m {
            let w = wins[i][j];
            if w > 0 {
                let push = w as f64 * (1.0 - logistic(theta[i] - theta[j]));
                g[i] += push;
                g[j] -= push;
            }
        }
    }
    g
}

/// Negative Hessian of the log-posterior: a weighted graph Laplacian plus
/// the prior precision on the diagonal. Always positive definite.
fn precision_matrix(wins: &[Vec<u32>], theta: &[f64], sigma_prior: f64) -> DMatrix<f64> {
    let m = theta.len();
    let mut h = DMatrix::from_diagonal_element(m, m, 1.0 / (sigma_prior * sigma_prior));
    for i in 0..m {
        for j in (i + 1)..m {
            let games = (wins[i][j] + wins[j][i]) as f64;
            if games > 0.0 {
                let p = logistic(theta[i] - theta[j]);
                let c = games * p * (1.0 - p);
                h[(i, i)] += c;
                h[(j, j)] += c;
                h[(i, j)] -= c;
                h[(j, i)] -= c;
            }
        }
    }
    h
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// MAP log-skills with Laplace standard deviations.
pub fn fit_skills(
    record: &ComparisonRecord,
    sigma_prior: f64,
) -> Result<SkillPosterior, PreferenceError> {
    let m = record.len();
    if m < 2 {
        return Err(PreferenceError::DegenerateInput(m));
    }
    if !(sigma_prior.is_finite() && sigma_prior > 0.0) {
        return Err(PreferenceError::BadPrior(sigma_prior));
    }
    let wins = &record.wins;
    let mut theta = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let g = gradient(wins, &theta, sigma_prior);
        if inf_norm(&g) < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let h = precision_matrix(wins, &theta, sigma_prior);
        let step = match h.clone().cholesky() {
            Some(chol) => chol.solve(&DVector::from_vec(g.clone())),
            None => DVector::from_vec(g.clone()),
        };
        let current = log_posterior(wins, &theta, sigma_prior);
        // objective changes below this are rounding noise; there the
        // gradient norm decides
        let noise = 8.0 * f64::EPSILON * current.abs().max(1.0);
        let g_norm = inf_norm(&g);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(t, s)| t + scale * s)
                .collect();
            let value = log_posterior(wins, &candidate, sigma_prior);
            let ascends = value >= current
                || (value >= current - noise
                    && inf_norm(&gradient(wins, &candidate, sigma_prior)) < g_norm);
            if ascends {
                theta = candidate;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // no ascent possible at floating-point resolution
            converged = inf_norm(&gradient(wins, &theta, sigma_prior)) < GRADIENT_TOLERANCE;
            break;
        }
    }
    if !converged && iterations >= MAX_ITERATIONS {
        converged = inf_norm(&gradient(wins, &theta, sigma_prior)) < GRADIENT_TOLERANCE;
    }

    let h = precision_matrix(wins, &theta, sigma_prior);
    let covariance = h
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| h.try_inverse())
        .unwrap_or_else(|| DMatrix::from_diagonal_element(m, m, sigma_prior * sigma_prior));
    let stddev = (0..m).map(|i| covariance[(i, i)].max(0.0).sqrt()).collect();
    Ok(SkillPosterior {
        theta,
        sigma_prior,
        stddev,
        converged,
        iterations,
    })
}

/// Probability that item `i` is preferred to item `j`, plugging in the MAP.
pub fn predict_preference(posterior: &SkillPosterior, i: usize, j: usize) -> f64 {
    logistic(posterior.theta[i] - posterior.theta[j])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedItem {
    pub item_id: String,
    pub theta: f64,
    pub stddev: f64,
    pub rank: usize,
}

/// Descending theta; ties broken by item id ascending. Ranks start at 1.
pub fn rank_items(posterior: &SkillPosterior, item_ids: &[String]) -> Vec<RankedItem> {
    let mut order: Vec<usize> = (0..item_ids.len().min(posterior.theta.len())).collect();
    order.sort_by(|&a, &b| {
        posterior.theta[b]
            .total_cmp(&posterior.theta[a])
            .then_with(|| item_ids[a].cmp(&item_ids[b]))
    });
    order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| RankedItem {
            item_id: item_ids[i].clone(),
            theta: posterior.theta[i],
            stddev: posterior.stddev[i],
            rank: rank + 1,
        })
        .collect()
}

/// Ranking over `items`; fewer than two items gets the prior-only answer.
pub fn rank_judgments(
    items: &[String],
    judgments: &[PreferenceJudgment],
    sigma_prior: f64,
) -> Result<Vec<RankedItem>, PreferenceError> {
    let record = judgments_to_record(items, judgments)?;
    if record.len() < 2 {
        return Ok(record
            .items
            .iter()
            .map(|id| RankedItem {
                item_id: id.clone(),
                theta: 0.0,
                stddev: sigma_prior,
                rank: 1,
            })
            .collect());
    }
    let posterior = fit_skills(&record, sigma_prior)?;
    Ok(rank_items(&posterior, &record.items))
}
