//! Independent Bradley-Terry oracle: exhaustive likelihood grid search on the
//! Elo scale. Shared by the analytics property tests and the acceptance suite.

#![allow(dead_code)]

use taskforge_analytics::OutcomeTable;

/// Log-likelihood evaluated directly on the Elo scale.
pub fn elo_log_likelihood(wins: &[Vec<f64>], ratings: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..ratings.len() {
        for j in 0..ratings.len() {
            if i != j && wins[i][j] > 0.0 {
                let p = 1.0 / (1.0 + 10f64.powf((ratings[j] - ratings[i]) / 400.0));
                ll += wins[i][j] * p.ln();
            }
        }
    }
    ll
}

pub fn effective_wins(n: usize, games: &[(usize, usize, u8)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, outcome) in games {
        match outcome {
            0 => a[i][j] += 1.0,
            1 => a[j][i] += 1.0,
            _ => {
                a[i][j] += 0.5;
                a[j][i] += 0.5;
            }
        }
    }
    a
}

pub fn strongly_connected(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    (0..n).all(|s| {
        let mut seen = vec![false; n];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if !seen[j] && a[i][j] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.iter().all(|&v| v)
    })
}

/// Grid search over rating offsets relative to model 0, refined three times
/// down to a 0.01 Elo step. Returns mean-1000 anchored ratings.
pub fn grid_search(wins: &[Vec<f64>]) -> Vec<f64> {
    let n = wins.len();
    let free = n - 1;
    let mut center = vec![0.0; free];
    for (half_width, step) in [(1500.0, 20.0), (25.0, 0.5), (1.0, 0.01)] {
        let cells = (2.0 * half_width / step) as i64;
        let mut best = (f64::NEG_INFINITY, center.clone());
        let mut idx = vec![0i64; free];
        loop {
            let offsets: Vec<f64> = idx
                .iter()
                .zip(&center)
                .map(|(&k, c)| c - half_width + k as f64 * step)
                .collect();
            let mut ratings = vec![0.0];
            ratings.extend(&offsets);
            let ll = elo_log_likelihood(wins, &ratings);
            if ll > best.0 {
                best = (ll, offsets);
            }
            let mut d = 0;
            loop {
                if d == free {
                    break;
                }
                idx[d] += 1;
                if idx[d] <= cells {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == free {
                break;
            }
        }
        center = best.1;
    }
    let mut ratings = vec![0.0];
    ratings.extend(&center);
    let mean = ratings.iter().sum::<f64>() / n as f64;
    ratings.iter().map(|r| r - mean + 1000.0).collect()
}

pub fn table_from(names: &[&str], games: &[(usize, usize, u8)]) -> OutcomeTable {
    let mut t = OutcomeTable::default();
    for name in names {
        t.add_model(*name);
    }
    for &(i, j, outcome) in games {
        let (wa, wb, tie) = match outcome {
            0 => (1, 0, 0),
            1 => (0, 1, 0),
            _ => (0, 0, 1),
        };
        t.record(names[i], names[j], wa, wb, tie);
    }
    t
}
