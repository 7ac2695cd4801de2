//! State-action feature maps.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A map `(x, a) ↦ φ(x, a) ∈ ℝ^dim`.
///
/// Implementations are responsible for keeping `‖φ‖₂ ≤ 1` on every
/// state-action pair their environment can produce.
pub trait FeatureMap: Send + Sync {
    fn dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn eval(&self, x: &[f64], a: usize) -> DVector<f64>;
}

/// The simulation feature map: L2-normalize the state and place it in the
/// block belonging to the chosen action of a `d·|A|` zero vector.
pub fn action_block_features(x: &[f64], a: usize, d: usize, n_actions: usize) -> DVector<f64> {
    debug_assert!(a < n_actions);
    let mut out = DVector::zeros(d * n_actions);
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (i, v) in x.iter().enumerate() {
            out[a * d + i] = v / norm;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ActionBlockFeatures {
    pub state_dim: usize,
    pub n_actions: usize,
}

impl ActionBlockFeatures {
    pub fn new(state_dim: usize, n_actions: usize) -> Self {
        Self { state_dim, n_actions }
    }
}

impl FeatureMap for ActionBlockFeatures {
    fn dim(&self) -> usize {
        self.state_dim * self.n_actions
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn eval(&self, x: &[f64], a: usize) -> DVector<f64> {
        action_block_features(x, a, self.state_dim, self.n_actions)
    }
}

/// Features for finite state spaces. The state is a one-element vector
/// holding the state index; row `s·|A| + a` of the table is returned.
#[derive(Debug, Clone)]
pub struct TableFeatures {
    n_states: usize,
    n_actions: usize,
    rows: Vec<DVector<f64>>,
}

impl TableFeatures {
    pub fn new(n_states: usize, n_actions: usize, rows: Vec<DVector<f64>>) -> Result<Self> {
        if rows.len() != n_states * n_actions {
            return Err(Error::config(format!(
                "feature table has {} rows, expected {}",
                rows.len(),
                n_states * n_actions
            )));
        }
        let dim = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::config("feature table rows differ in length"));
        }
        Ok(Self { n_states, n_actions, rows })
    }

    /// Indicator features of dimension `S·|A|`.
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        let d = n_states * n_actions;
        let rows = (0..d)
            .map(|i| {
                let mut v = DVector::zeros(d);
                v[i] = 1.0;
                v
            })
            .collect();
        Self { n_states, n_actions, rows }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn row(&self, s: usize, a: usize) -> &DVector<f64> {
        &self.rows[s * self.n_actions + a]
    }
}

/// Decodes a tabular state vector into its index.
pub fn state_index(x: &[f64]) -> usize {
    x[0].round() as usize
}

impl FeatureMap for TableFeatures {
    fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn eval(&self, x: &[f64], a: usize) -> DVector<f64> {
        self.row(state_index(x), a).clone()
    }
}

/// The reward and transition feature maps used together by a solver.
#[derive(Clone)]
pub struct FeatureMapPair {
    pub reward: Arc<dyn FeatureMap>,
    pub transition: Arc<dyn FeatureMap>,
}

impl fmt::Debug for FeatureMapPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeatureMapPair")
            .field("d_r", &self.reward.dim())
            .field("d_p", &self.transition.dim())
            .finish()
    }
}

impl FeatureMapPair {
    pub fn new(reward: Arc<dyn FeatureMap>, transition: Arc<dyn FeatureMap>) -> Result<Self> {
        if reward.state_dim() != transition.state_dim() || reward.n_actions() != transition.n_actions() {
            return Err(Error::config("reward and transition feature maps disagree on state/action shape"));
        }
        Ok(Self { reward, transition })
    }

    /// The same map for rewards and transitions.
    pub fn shared(map: Arc<dyn FeatureMap>) -> Self {
        Self { reward: map.clone(), transition: map }
    }

    pub fn d_r(&self) -> usize {
        self.reward.dim()
    }

    pub fn d_p(&self) -> usize {
        self.transition.dim()
    }

    pub fn state_dim(&self) -> usize {
        self.reward.state_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.reward.n_actions()
    }

    /// Checks the unit-norm bound on a set of sampled states, over all actions.
    pub fn check_norms<'a>(&self, states: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        for x in states {
            for a in 0..self.n_actions() {
                for (name, map) in [("reward", &self.reward), ("transition", &self.transition)] {
                    let n = map.eval(x, a).norm();
                    if n > 1.0 + 1e-12 {
                        return Err(Error::config(format!(
                            "{name} feature norm {n} exceeds 1 at action {a}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_and_places_block() {
        let phi = action_block_features(&[3.0, 4.0], 1, 2, 2);
        assert_eq!(phi.as_slice(), &[0.0, 0.0, 0.6, 0.8]);
    }

    #[test]
    fn zero_state_maps_to_zero() {
        let phi = action_block_features(&[0.0, 0.0, 0.0], 2, 3, 3);
        assert_eq!(phi.norm(), 0.0);
    }

    #[test]
    fn one_hot_table() {
        let t = TableFeatures::one_hot(3, 2);
        let phi = t.eval(&[2.0], 1);
        assert_eq!(phi.len(), 6);
        assert_eq!(phi[5], 1.0);
        assert_eq!(phi.sum(), 1.0);
    }

    #[test]
    fn pair_checks_shapes_and_norms() {
        let a: Arc<dyn FeatureMap> = Arc::new(ActionBlockFeatures::new(2, 2));
        let b: Arc<dyn FeatureMap> = Arc::new(ActionBlockFeatures::new(3, 2));
        assert!(FeatureMapPair::new(a.clone(), b).is_err());
        let pair = FeatureMapPair::shared(a);
        let states = [vec![0.3, -0.2], vec![1e-9, 0.0]];
        pair.check_norms(states.iter().map(Vec::as_slice)).unwrap();
    }

    proptest! {
        #[test]
        fn action_zero_uses_first_block(x in prop::collection::vec(-1.0f64..1.0, 4), n_actions in 1usize..5) {
            let phi = action_block_features(&x, 0, 4, n_actions);
            prop_assert!(phi.iter().skip(4).all(|v| *v == 0.0));
        }

        #[test]
        fn nonzero_states_have_unit_norm(x in prop::collection::vec(-0.5f64..0.5, 6), a in 0usize..3) {
            prop_assume!(x.iter().any(|v| *v != 0.0));
            let phi = action_block_features(&x, a, 6, 3);
            prop_assert!((phi.norm() - 1.0).abs() < 1e-12);
        }
    }
}
