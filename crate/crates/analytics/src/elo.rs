//! Maximum-likelihood Bradley-Terry ratings on the Elo scale.
//!
//! The win probability of `i` over `j` is `1 / (1 + base^((R_j - R_i) / scale))`.
//! Internally the fit works on natural-log strengths `θ = (R - offset) ·
//! ln(base) / scale`, where the model reduces to `σ(θ_i - θ_j)`, and maximizes
//!
//! ```text
//! ℓ(θ) = Σ_{i≠j} a_ij · ln σ(θ_i − θ_j)
//! ```
//!
//! with `a_ij` the weighted win count of `i` over `j`, ties split half/half.
//! The likelihood is concave and invariant to a common shift, so the ratings
//! of each connected component are anchored to mean `offset`.
//!
//! When the maximum does not exist (a model, or a group of models, never
//! loses to the rest of its component) an L2 ridge on the centered
//! strengths keeps the solution finite.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::outcomes::OutcomeTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloConfig {
    pub scale: f64,
    pub base: f64,
    pub offset: f64,
    /// Ridge strength applied when the unpenalized maximum does not exist.
    pub ridge: f64,
    pub max_iterations: usize,
    /// Stop when every gradient component is below this (natural units).
    pub gradient_tolerance: f64,
    /// Stop when no rating moves by more than this many Elo points.
    pub rating_tolerance: f64,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self {
            scale: 400.0,
            base: 10.0,
            offset: 1000.0,
            ridge: 1e-6,
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            rating_tolerance: 1e-8,
        }
    }
}

impl EloConfig {
    fn natural_per_elo(&self) -> f64 {
        self.base.ln() / self.scale
    }

    /// Win probability of a player rated `r_i` against one rated `r_j`.
    pub fn win_probability(&self, r_i: f64, r_j: f64) -> f64 {
        1.0 / (1.0 + self.base.powf((r_j - r_i) / self.scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloTable {
    pub ratings: BTreeMap<String, f64>,
    pub config: EloConfig,
    /// Connected components of the comparison graph, each anchored separately.
    pub components: Vec<Vec<String>>,
    /// True when at least one component needed the ridge.
    pub regularized: bool,
    pub converged: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl EloTable {
    pub fn get(&self, model: &str) -> Option<f64> {
        self.ratings.get(model).copied()
    }

    /// Ratings in descending order, ties broken by model id.
    pub fn ranked(&self) -> Vec<(&str, f64)> {
        let mut v: Vec<(&str, f64)> = self.ratings.iter().map(|(m, r)| (m.as_str(), *r)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
        v
    }
}

/// Fits Bradley-Terry ratings to the outcome table.
pub fn fit_elo(outcomes: &OutcomeTable, config: &EloConfig) -> EloTable {
    let wins = outcomes.effective_wins();
    let n = outcomes.models.len();
    let components = connected_components(&wins);

    let mut table = EloTable {
        ratings: BTreeMap::new(),
        config: config.clone(),
        components: components
            .iter()
            .map(|c| c.iter().map(|&i| outcomes.models[i].clone()).collect())
            .collect(),
        regularized: false,
        converged: true,
        iterations: 0,
        warnings: Vec::new(),
    };
    if components.len() > 1 {
        table.warnings.push(format!(
            "comparison graph has {} disconnected components; each is anchored to mean {} separately",
            components.len(),
            config.offset
        ));
    }

    let mut theta = vec![0.0; n];
    for comp in &components {
        if comp.len() < 2 {
            continue;
        }
        let sub: Vec<Vec<f64>> = comp
            .iter()
            .map(|&i| comp.iter().map(|&j| wins[i][j]).collect())
            .collect();
        let ridge = if strongly_connected(&sub) {
            0.0
        } else {
            table.regularized = true;
            let names: Vec<&str> = comp.iter().map(|&i| outcomes.models[i].as_str()).collect();
            table.warnings.push(format!(
                "no finite maximum-likelihood ratings for {{{}}}; applied ridge {}",
                names.join(", "),
                config.ridge
            ));
            config.ridge
        };
        let fit = newton(&sub, ridge, config);
        table.converged &= fit.converged;
        table.iterations = table.iterations.max(fit.iterations);
        for (k, &i) in comp.iter().enumerate() {
            theta[i] = fit.theta[k];
        }
    }

    let per_natural = 1.0 / config.natural_per_elo();
    for (i, model) in outcomes.models.iter().enumerate() {
        table
            .ratings
            .insert(model.clone(), config.offset + theta[i] * per_natural);
    }
    table
}

struct NewtonFit {
    theta: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn objective(wins: &[Vec<f64>], theta: &[f64], ridge: f64) -> f64 {
    let m = theta.len();
    let mut ll = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j && wins[i][j] > 0.0 {
                ll += wins[i][j] * log_sigmoid(theta[i] - theta[j]);
            }
        }
    }
    ll - 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
}

fn center(theta: &mut [f64]) {
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    theta.iter_mut().for_each(|t| *t -= mean);
}

fn newton(wins: &[Vec<f64>], ridge: f64, config: &EloConfig) -> NewtonFit {
    let m = wins.len();
    let per_natural = 1.0 / config.natural_per_elo();
    let mut theta = vec![0.0; m];
    let mut value = objective(wins, &theta, ridge);

    for iter in 1..=config.max_iterations {
        let mut grad = DVector::<f64>::zeros(m);
        // Negative Hessian plus a rank-one term that pins the free shift.
        let mut h = DMatrix::<f64>::from_element(m, m, 1.0 / m as f64);
        for i in 0..m {
            grad[i] -= ridge * theta[i];
            h[(i, i)] += ridge;
            for j in 0..m {
                if i == j {
                    continue;
                }
                let total = wins[i][j] + wins[j][i];
                if total == 0.0 {
                    continue;
                }
                let p = sigmoid(theta[i] - theta[j]);
                grad[i] += wins[i][j] - total * p;
                let w = total * p * (1.0 - p);
                h[(i, i)] += w;
                h[(i, j)] -= w;
            }
        }
        if grad.amax() < config.gradient_tolerance {
            return NewtonFit { theta, converged: true, iterations: iter - 1 };
        }

        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&grad),
            None => match h.lu().solve(&grad) {
                Some(s) => s,
                None => grad.clone(),
            },
        };

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            center(&mut cand);
            let v = objective(wins, &cand, ridge);
            if v >= value - 1e-12 * value.abs().max(1.0) {
                accepted = Some((cand, v));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, v)) = accepted else {
            return NewtonFit { theta, converged: false, iterations: iter };
        };

        let max_move = cand
            .iter()
            .zip(&theta)
            .map(|(a, b)| ((a - b) * per_natural).abs())
            .fold(0.0, f64::max);
        theta = cand;
        value = v;
        if max_move < config.rating_tolerance {
            return NewtonFit { theta, converged: true, iterations: iter };
        }
    }
    NewtonFit { theta, converged: false, iterations: config.max_iterations }
}

fn connected_components(wins: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = wins.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut k = 0;
        while k < comp.len() {
            let i = comp[k];
            for j in 0..n {
                if !seen[j] && (wins[i][j] > 0.0 || wins[j][i] > 0.0) {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Every node reaches every other along edges `i -> j` with `wins[i][j] > 0`.
fn strongly_connected(wins: &[Vec<f64>]) -> bool {
    let n = wins.len();
    let reach_all = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { wins[i][j] } else { wins[j][i] };
                if !seen[j] && edge > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    n == 0 || (reach_all(true) && reach_all(false))
}
