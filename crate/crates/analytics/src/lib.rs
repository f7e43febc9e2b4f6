//! Numeric core for evaluating agent runs on generated task suites.
//!
//! The crate is organized around the path a score takes from an execution
//! log to a published agreement table:
//!
//! - [`trajectory`]: direction-aware min-max normalization of per-step raw
//!   scores, best-so-far curves and pointwise averaging.
//! - [`outcomes`]: per-task pairwise win/tie/loss accounting and the
//!   win-loss matrix.
//! - [`elo`]: maximum-likelihood Bradley-Terry fit reported on the Elo scale.
//! - [`agreement`]: correlation, concordance, Bland-Altman and multi-rater
//!   reliability statistics between rating sets.
//!
//! Everything here is a pure function over immutable inputs.

pub mod agreement;
pub mod elo;
pub mod outcomes;
pub mod trajectory;

mod error;

pub use agreement::{
    agreement_report, bland_altman, corr_stats, reliability_stats, AgreementReport, AnovaTable,
    BlandAltman, CorrStats, PairAgreement, RatingSets, ReliabilityStats, TopKOverlap,
};
pub use elo::{fit_elo, EloConfig, EloTable};
pub use error::StatsError;
pub use outcomes::{pairwise_outcomes, win_loss_matrix, OutcomeTable, PairOutcome, TaskScores, WinLossMatrix};
pub use trajectory::{
    average_curves, best_so_far, normalize_trajectory, CurveSet, LabeledCurve, NormalizedTrajectory,
    RunTrajectory, DEFAULT_STEPS,
};

use serde::{Deserialize, Serialize};

/// Whether larger or smaller raw metric values are better for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    /// `+1` for higher-is-better, `-1` for lower-is-better.
    pub fn sign(self) -> i8 {
        match self {
            Direction::HigherIsBetter => 1,
            Direction::LowerIsBetter => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Direction::HigherIsBetter),
            -1 => Some(Direction::LowerIsBetter),
            _ => None,
        }
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Direction::HigherIsBetter => a > b,
            Direction::LowerIsBetter => a < b,
        }
    }

    /// The better of two scores under this direction.
    pub fn best(self, a: f64, b: f64) -> f64 {
        if self.better(b, a) {
            b
        } else {
            a
        }
    }
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/normalization.md")]
    mod normalization {}
    #[doc = include_str!("../../../book/src/elo.md")]
    mod elo {}
    #[doc = include_str!("../../../book/src/agreement.md")]
    mod agreement {}
}
