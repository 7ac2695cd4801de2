//! Episodic offline datasets and their CSV representation.
//!
//! CSV layout, one row per step:
//!
//! ```text
//! episode,h,action,reward,reward_observed,state_0..state_{d-1},next_state_0..next_state_{d-1}
//! ```
//!
//! `h` is 1-based. Unlabeled steps leave `reward` empty and write
//! `reward_observed=false`. Floats are written with 17 significant digits so
//! a parse/serialize cycle reproduces the file byte for byte.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub state: Vec<f64>,
    pub action: usize,
    /// `None` when the reward was not observed.
    pub reward: Option<f64>,
    pub next_state: Vec<f64>,
}

impl TrajectoryStep {
    pub fn reward_observed(&self) -> bool {
        self.reward.is_some()
    }
}

pub type Episode = Vec<TrajectoryStep>;

/// A validated set of episodes, each exactly `horizon` steps long.
///
/// Every episode is either fully labeled or fully reward-free.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    horizon: usize,
    state_dim: usize,
    n_actions: usize,
    episodes: Vec<Episode>,
}

fn episode_labeled(ep: &Episode) -> Result<bool> {
    let observed = ep.iter().filter(|s| s.reward_observed()).count();
    if observed == ep.len() {
        Ok(true)
    } else if observed == 0 {
        Ok(false)
    } else {
        Err(Error::data(format!(
            "episode mixes labeled and unlabeled steps ({observed} of {} observed)",
            ep.len()
        )))
    }
}

impl TrajectoryDataset {
    pub fn new(
        horizon: usize,
        state_dim: usize,
        n_actions: usize,
        episodes: Vec<Episode>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::data("horizon must be positive"));
        }
        if n_actions == 0 {
            return Err(Error::data("action set must be nonempty"));
        }
        for (i, ep) in episodes.iter().enumerate() {
            if ep.len() != horizon {
                return Err(Error::data(format!(
                    "episode {i} has {} steps, expected {horizon}",
                    ep.len()
                )));
            }
            episode_labeled(ep).map_err(|e| Error::data(format!("episode {i}: {e}")))?;
            for (h, step) in ep.iter().enumerate() {
                if step.action >= n_actions {
                    return Err(Error::data(format!(
                        "episode {i} step {}: action {} outside [0, {n_actions})",
                        h + 1,
                        step.action
                    )));
                }
                if step.state.len() != state_dim || step.next_state.len() != state_dim {
                    return Err(Error::data(format!(
                        "episode {i} step {}: state dimension mismatch (expected {state_dim})",
                        h + 1
                    )));
                }
                let finite = step.state.iter().chain(&step.next_state).all(|v| v.is_finite())
                    && step.reward.is_none_or(f64::is_finite);
                if !finite {
                    return Err(Error::data(format!(
                        "episode {i} step {}: non-finite value",
                        h + 1
                    )));
                }
            }
        }
        Ok(Self { horizon, state_dim, n_actions, episodes })
    }

    pub fn empty(horizon: usize, state_dim: usize, n_actions: usize) -> Result<Self> {
        Self::new(horizon, state_dim, n_actions, Vec::new())
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn is_labeled(&self, episode: usize) -> bool {
        self.episodes[episode].first().is_some_and(TrajectoryStep::reward_observed)
    }

    pub fn n_labeled(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_labeled(i)).count()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.len() - self.n_labeled()
    }

    fn with_episodes(&self, episodes: Vec<Episode>) -> Self {
        Self { horizon: self.horizon, state_dim: self.state_dim, n_actions: self.n_actions, episodes }
    }

    /// Labeled episodes, in their original order.
    pub fn labeled(&self) -> Self {
        let eps = (0..self.len()).filter(|&i| self.is_labeled(i)).map(|i| self.episodes[i].clone());
        self.with_episodes(eps.collect())
    }

    /// Reward-free episodes, in their original order.
    pub fn unlabeled(&self) -> Self {
        let eps = (0..self.len()).filter(|&i| !self.is_labeled(i)).map(|i| self.episodes[i].clone());
        self.with_episodes(eps.collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.with_episodes(indices.iter().map(|&i| self.episodes[i].clone()).collect())
    }

    /// Copy with rewards removed from every episode at index `>= keep`.
    pub fn strip_rewards_from(&self, keep: usize) -> Self {
        let eps = self
            .episodes
            .iter()
            .enumerate()
            .map(|(i, ep)| {
                if i < keep {
                    ep.clone()
                } else {
                    ep.iter().map(|s| TrajectoryStep { reward: None, ..s.clone() }).collect()
                }
            })
            .collect();
        self.with_episodes(eps)
    }

    /// Concatenation of two datasets with identical shape.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut eps = self.episodes.clone();
        eps.extend(other.episodes.iter().cloned());
        Ok(self.with_episodes(eps))
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.horizon != other.horizon {
            return Err(Error::data(format!(
                "horizon mismatch: {} vs {}",
                self.horizon, other.horizon
            )));
        }
        if self.state_dim != other.state_dim || self.n_actions != other.n_actions {
            return Err(Error::data("state dimension or action count mismatch"));
        }
        Ok(())
    }

    pub fn all_labeled(&self) -> bool {
        (0..self.len()).all(|i| self.is_labeled(i))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(header(self.state_dim))?;
        let mut row: Vec<String> = Vec::with_capacity(5 + 2 * self.state_dim);
        for (i, ep) in self.episodes.iter().enumerate() {
            for (h, step) in ep.iter().enumerate() {
                row.clear();
                row.push(i.to_string());
                row.push((h + 1).to_string());
                row.push(step.action.to_string());
                row.push(step.reward.map(format_float).unwrap_or_default());
                row.push(step.reward_observed().to_string());
                row.extend(step.state.iter().copied().map(format_float));
                row.extend(step.next_state.iter().copied().map(format_float));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV layout. `state_dim` is taken from the header.
    pub fn read_csv<R: Read>(reader: R, horizon: usize, n_actions: usize) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let head = r.headers()?.clone();
        if head.len() < 5 || (head.len() - 5) % 2 != 0 {
            return Err(Error::data(format!("malformed header with {} columns", head.len())));
        }
        let state_dim = (head.len() - 5) / 2;
        let expected = header(state_dim);
        if head.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::data("unexpected column names in dataset header"));
        }

        let mut episodes: Vec<Episode> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let ctx = |what: &str| Error::data(format!("row {}: bad {what}", line + 1));
            let ep: usize = rec[0].parse().map_err(|_| ctx("episode"))?;
            let h: usize = rec[1].parse().map_err(|_| ctx("step index"))?;
            let action: usize = rec[2].parse().map_err(|_| ctx("action"))?;
            let observed: bool = rec[4].parse().map_err(|_| ctx("reward_observed"))?;
            let reward = match (observed, &rec[3]) {
                (true, s) if !s.is_empty() => Some(s.parse::<f64>().map_err(|_| ctx("reward"))?),
                (false, "") => None,
                _ => return Err(ctx("reward / reward_observed combination")),
            };
            let parse_vec = |range: std::ops::Range<usize>| -> Result<Vec<f64>> {
                range.map(|c| rec[c].parse::<f64>().map_err(|_| ctx("state value"))).collect()
            };
            let state = parse_vec(5..5 + state_dim)?;
            let next_state = parse_vec(5 + state_dim..5 + 2 * state_dim)?;

            if ep == episodes.len() {
                episodes.push(Vec::with_capacity(horizon));
            } else if ep + 1 != episodes.len() {
                return Err(Error::data(format!("row {}: episodes must be contiguous", line + 1)));
            }
            let current = episodes.last_mut().expect("pushed above");
            if h != current.len() + 1 {
                return Err(Error::data(format!("row {}: steps out of order", line + 1)));
            }
            current.push(TrajectoryStep { state, action, reward, next_state });
        }
        Self::new(horizon, state_dim, n_actions, episodes)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::data(e.to_string()))
    }
}

fn header(state_dim: usize) -> Vec<String> {
    let mut cols: Vec<String> =
        ["episode", "h", "action", "reward", "reward_observed"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..state_dim).map(|i| format!("state_{i}")));
    cols.extend((0..state_dim).map(|i| format!("next_state_{i}")));
    cols
}

/// 17 significant digits, scientific notation.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(s: f64, a: usize, r: Option<f64>) -> TrajectoryStep {
        TrajectoryStep { state: vec![s, -s], action: a, reward: r, next_state: vec![s + 0.1, 0.3] }
    }

    fn small() -> TrajectoryDataset {
        TrajectoryDataset::new(
            2,
            2,
            2,
            vec![
                vec![step(0.1, 0, Some(1.0)), step(0.2, 1, Some(0.25))],
                vec![step(0.3, 1, None), step(-0.4, 0, None)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn counts_labeled_and_unlabeled() {
        let d = small();
        assert_eq!(d.n_labeled(), 1);
        assert_eq!(d.n_unlabeled(), 1);
        assert_eq!(d.n_labeled() + d.n_unlabeled(), d.len());
        assert!(d.labeled().all_labeled());
        assert_eq!(d.unlabeled().n_labeled(), 0);
    }

    #[test]
    fn rejects_mixed_labeling() {
        let err = TrajectoryDataset::new(2, 2, 2, vec![vec![step(0.1, 0, Some(1.0)), step(0.2, 1, None)]]);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn rejects_wrong_length_and_bad_action() {
        assert!(TrajectoryDataset::new(3, 2, 2, vec![vec![step(0.1, 0, None)]]).is_err());
        assert!(TrajectoryDataset::new(1, 2, 2, vec![vec![step(0.1, 2, None)]]).is_err());
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let d = small();
        let text = d.to_csv_string().unwrap();
        let back = TrajectoryDataset::read_csv(text.as_bytes(), 2, 2).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_csv_string().unwrap(), text);
    }

    #[test]
    fn csv_unlabeled_rows_leave_reward_empty() {
        let text = small().to_csv_string().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("episode,h,action,reward,reward_observed,state_0,state_1,next_state_0"));
        assert!(lines[3].contains(",,false,"));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = TrajectoryDataset::empty(3, 4, 2).unwrap();
        let text = d.to_csv_string().unwrap();
        let back = TrajectoryDataset::read_csv(text.as_bytes(), 3, 2).unwrap();
        assert_eq!(back.state_dim(), 4);
        assert!(back.is_empty());
    }

    #[test]
    fn csv_rejects_observed_flag_without_reward() {
        let text = "episode,h,action,reward,reward_observed,state_0,next_state_0\n0,1,0,,true,0.1,0.2\n";
        assert!(TrajectoryDataset::read_csv(text.as_bytes(), 1, 2).is_err());
    }

    #[test]
    fn strip_rewards_keeps_prefix() {
        let d = small().labeled();
        let both = d.concat(&d).unwrap().strip_rewards_from(1);
        assert_eq!(both.n_labeled(), 1);
        assert_eq!(both.n_unlabeled(), 1);
    }
}
