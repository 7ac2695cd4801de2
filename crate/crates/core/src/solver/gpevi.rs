use crate::data::TrajectoryDataset;
use crate::error::Result;

use super::{backward_induction, GpeviConfig, SolveReport};

/// Pessimistic value iteration on a fully labeled dataset.
pub fn solve_gpevi(data: &TrajectoryDataset, config: &GpeviConfig) -> Result<SolveReport> {
    backward_induction(config, data, None, None)
}
