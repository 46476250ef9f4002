//! Lazy aggregation: which groups the parameter server refreshes each round.
//!
//! Group `g` is selected at iteration `i` when
//!
//! ```text
//! L_g² ‖θ_g^{i-1} - θ^i‖² ≥ (M_G² ξ / (α² M² D)) Σ_{d=1}^{D} ‖θ^{i+1-d} - θ^{i-d}‖²
//! ```
//!
//! Unselected groups contribute the gradient cached at their stale parameter.
//! With `M_G = 1` this is the per-worker LAG rule.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Parameters of the selection condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LazyRule {
    pub xi: f64,
    pub step_size: f64,
    pub workers: usize,
    pub group_size: usize,
    pub depth: usize,
}

/// Per-run server-side lazy state.
#[derive(Clone, Debug)]
pub struct LazyState {
    stale_params: Vec<DVector<f64>>,
    stale_gradients: Vec<Option<DVector<f64>>>,
    /// Most recent squared iterate moves, newest first.
    history: VecDeque<f64>,
    depth: usize,
}

impl LazyState {
    /// Every group starts holding `initial`; no gradient is cached yet.
    pub fn new(groups: usize, initial: &DVector<f64>, depth: usize) -> Self {
        Self {
            stale_params: vec![initial.clone(); groups],
            stale_gradients: vec![None; groups],
            history: VecDeque::with_capacity(depth),
            depth,
        }
    }

    pub fn groups(&self) -> usize {
        self.stale_params.len()
    }

    pub fn stale_param(&self, group: usize) -> &DVector<f64> {
        &self.stale_params[group]
    }

    pub fn stale_gradient(&self, group: usize) -> Option<&DVector<f64>> {
        self.stale_gradients[group].as_ref()
    }

    /// Squared iterate moves, newest first, at most `D` of them.
    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }
}

/// Right-hand side of the selection condition. Missing history entries count
/// as zero.
pub fn selection_threshold(
    history: impl IntoIterator<Item = f64>,
    xi: f64,
    step_size: f64,
    workers: usize,
    depth: usize,
    group_size: usize,
) -> f64 {
    if xi == 0.0 || depth == 0 {
        return 0.0;
    }
    let recent: f64 = history.into_iter().take(depth).sum();
    let mg = group_size as f64;
    let m = workers as f64;
    mg * mg * xi / (step_size * step_size * m * m * depth as f64) * recent
}

/// Groups satisfying the condition at the current iterate `theta`, ascending.
/// Ties select.
pub fn select_groups(state: &LazyState, theta: &DVector<f64>, group_smoothness: &[f64], rule: &LazyRule) -> Vec<usize> {
    let threshold = selection_threshold(state.history(), rule.xi, rule.step_size, rule.workers, rule.depth, rule.group_size);
    group_smoothness
        .iter()
        .enumerate()
        .filter(|(g, l)| {
            let drift = (&state.stale_params[*g] - theta).norm_squared();
            *l * *l * drift >= threshold
        })
        .map(|(g, _)| g)
        .collect()
}

/// Records the outcome of one iteration: groups in `selected` now hold
/// `theta_old` (the parameter they computed at) and the matching fresh
/// gradient; the move `‖θ_new - θ_old‖²` enters the history.
pub fn commit_iteration(
    state: &mut LazyState,
    theta_new: &DVector<f64>,
    theta_old: &DVector<f64>,
    selected: &[usize],
    fresh_gradients: Vec<DVector<f64>>,
) -> Result<()> {
    if fresh_gradients.len() != selected.len() {
        return Err(Error::MissingGradient(format!(
            "{} fresh gradients for {} selected groups",
            fresh_gradients.len(),
            selected.len()
        )));
    }
    for (&g, grad) in selected.iter().zip(fresh_gradients) {
        state.stale_params[g] = theta_old.clone();
        state.stale_gradients[g] = Some(grad);
    }
    if state.depth > 0 {
        if state.history.len() == state.depth {
            state.history.pop_back();
        }
        state.history.push_front((theta_new - theta_old).norm_squared());
    }
    Ok(())
}
