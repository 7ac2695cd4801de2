use crate::data::TrajectoryDataset;
use crate::error::Result;

use super::{backward_induction, GpeviConfig, SolveReport};

/// Semi-supervised variant: rewards are fit on `labeled`, while the transition
/// regression and its bonus pool `labeled` and `unlabeled`.
pub fn solve_ssgpevi(
    labeled: &TrajectoryDataset,
    unlabeled: &TrajectoryDataset,
    config: &GpeviConfig,
) -> Result<SolveReport> {
    backward_induction(config, labeled, Some(unlabeled), None)
}
