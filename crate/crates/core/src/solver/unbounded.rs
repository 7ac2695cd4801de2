//! Range-normalized variants for rewards without a natural `[0, 1]` bound.
//!
//! The fitted mean `g(u)` is replaced by `(g(u) − g_min)/(g_max − g_min)`
//! and both bonuses are divided by the same width, while `α_p` carries one
//! factor of the width.

use crate::data::TrajectoryDataset;
use crate::error::Result;

pub use crate::policy::RewardRange;

use super::{backward_induction, GpeviConfig, SolveReport};

pub fn solve_gpevi_unbounded(
    data: &TrajectoryDataset,
    config: &GpeviConfig,
    range: RewardRange,
) -> Result<SolveReport> {
    RewardRange::new(range.g_min, range.g_max)?;
    backward_induction(config, data, None, Some(range))
}

pub fn solve_ssgpevi_unbounded(
    labeled: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    config: &GpeviConfig,
    range: RewardRange,
) -> Result<SolveReport> {
    RewardRange::new(range.g_min, range.g_max)?;
    backward_induction(config, labeled, Some(unlabeled), Some(range))
}
