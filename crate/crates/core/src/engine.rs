//! The per-iteration parameter-server simulator.
//!
//! One iteration: select groups, let every worker of a selected group compute
//! its stored batch gradients, sample the workers' computing times, keep the
//! `F` fastest per group, decode each group gradient, combine with stale
//! gradients of unselected groups, and take the step `θ ← θ - α ĝ`.
//!
//! Wall-clock time counts computation only. An iteration lasts as long as the
//! slowest selected group's `F`-th fastest worker; an iteration with no
//! selected group takes no time and still applies the all-stale step.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coding::{build_encoding_matrix, EncodingMatrix};
use crate::dataset::{group_data, Assignment, Dataset, GroupData};
use crate::error::{Error, Result};
use crate::gradient::{optimality_gap, partial_gradient};
use crate::selection::{commit_iteration, select_groups, LazyRule, LazyState};
use crate::timing::TimingModel;

/// Codes are a fixed design choice per `(M_G, r_G)`, independent of run seeds.
const CODE_SEED: u64 = 0xC0DE_5EED;
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "gd", alias = "GD")]
    Gd,
    #[serde(rename = "gc", alias = "GC")]
    Gc,
    #[serde(rename = "lag", alias = "LAG")]
    Lag,
    #[serde(rename = "g-gd", alias = "G-GD")]
    GroupedGd,
    #[serde(rename = "lagc", alias = "LAGC")]
    Lagc,
    #[serde(rename = "g-lag", alias = "G-LAG")]
    GroupedLag,
    #[serde(rename = "custom")]
    Custom,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Gd => "GD",
            Preset::Gc => "GC",
            Preset::Lag => "LAG",
            Preset::GroupedGd => "G-GD",
            Preset::Lagc => "LAGC",
            Preset::GroupedLag => "G-LAG",
            Preset::Custom => "custom",
        })
    }
}

/// Unified scheme parameters. Named presets are particular settings of
/// `(M_G, r, F, ξ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchemeConfig {
    pub preset: Preset,
    /// `M`
    pub workers: usize,
    /// `M_G`
    pub group_size: usize,
    /// `r`
    pub redundancy: usize,
    /// `F`, uploads awaited per selected group.
    pub wait_for: usize,
    pub xi: f64,
    /// `D`
    pub history_depth: usize,
    /// `α`
    pub step_size: f64,
    pub timing: TimingModel,
}

impl SchemeConfig {
    pub fn gd(workers: usize, step_size: f64, timing: TimingModel) -> Self {
        Self {
            preset: Preset::Gd,
            workers,
            group_size: 1,
            redundancy: 1,
            wait_for: 1,
            xi: 0.0,
            history_depth: 1,
            step_size,
            timing,
        }
    }

    pub fn gc(workers: usize, redundancy: usize, wait_for: usize, step_size: f64, timing: TimingModel) -> Self {
        Self {
            preset: Preset::Gc,
            group_size: workers,
            redundancy,
            wait_for,
            ..Self::gd(workers, step_size, timing)
        }
    }

    pub fn lag(workers: usize, xi: f64, history_depth: usize, step_size: f64, timing: TimingModel) -> Self {
        Self {
            preset: Preset::Lag,
            xi,
            history_depth,
            ..Self::gd(workers, step_size, timing)
        }
    }

    /// Grouped GD waiting for the minimal `F = M_G - r_G + 1` per group.
    pub fn grouped_gd(workers: usize, group_size: usize, redundancy: usize, step_size: f64, timing: TimingModel) -> Self {
        let r_g = redundancy.min(group_size);
        Self {
            preset: Preset::GroupedGd,
            group_size,
            redundancy,
            wait_for: group_size + 1 - r_g,
            ..Self::gd(workers, step_size, timing)
        }
    }

    pub fn grouped_lag(
        workers: usize,
        group_size: usize,
        redundancy: usize,
        xi: f64,
        history_depth: usize,
        step_size: f64,
        timing: TimingModel,
    ) -> Self {
        Self {
            preset: Preset::GroupedLag,
            group_size,
            redundancy,
            wait_for: 1,
            xi,
            history_depth,
            ..Self::gd(workers, step_size, timing)
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn lagc(
        workers: usize,
        group_size: usize,
        redundancy: usize,
        wait_for: usize,
        xi: f64,
        history_depth: usize,
        step_size: f64,
        timing: TimingModel,
    ) -> Self {
        Self {
            preset: Preset::Lagc,
            group_size,
            redundancy,
            wait_for,
            xi,
            history_depth,
            ..Self::gd(workers, step_size, timing)
        }
    }

    /// `G = M / M_G`
    pub fn groups(&self) -> usize {
        self.workers / self.group_size
    }

    /// `r_G = min(r, M_G)`
    pub fn group_redundancy(&self) -> usize {
        self.redundancy.min(self.group_size)
    }

    /// `M_G - r_G + 1`
    pub fn min_wait(&self) -> usize {
        self.group_size + 1 - self.group_redundancy()
    }

    pub fn is_lazy(&self) -> bool {
        self.xi > 0.0
    }

    pub fn lazy_rule(&self) -> LazyRule {
        LazyRule {
            xi: self.xi,
            step_size: self.step_size,
            workers: self.workers,
            group_size: self.group_size,
            depth: self.history_depth,
        }
    }

    /// Human-readable name, e.g. `LAGC(M_G=5)`.
    pub fn label(&self) -> String {
        match self.preset {
            Preset::Gd | Preset::Gc | Preset::Lag => self.preset.to_string(),
            Preset::GroupedGd | Preset::Lagc | Preset::GroupedLag => {
                format!("{}(M_G={})", self.preset, self.group_size)
            }
            Preset::Custom => format!(
                "custom(M_G={},r={},F={},xi={})",
                self.group_size, self.redundancy, self.wait_for, self.xi
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, mg, r, f) = (self.workers, self.group_size, self.redundancy, self.wait_for);
        if m == 0 {
            return Err(Error::config("M must be positive"));
        }
        if mg == 0 || !m.is_multiple_of(mg) {
            return Err(Error::config(format!("M_G = {mg} must be an integer divisor of M = {m}")));
        }
        if r == 0 || r > m {
            return Err(Error::config(format!("r = {r} must satisfy 1 <= r <= M = {m}")));
        }
        if f < self.min_wait() {
            return Err(Error::config(format!(
                "F < M_G - r_G + 1: F = {f}, M_G = {mg}, r_G = {}",
                self.group_redundancy()
            )));
        }
        if f > mg {
            return Err(Error::config(format!("F = {f} exceeds M_G = {mg}")));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::config(format!("xi must be finite and >= 0, got {}", self.xi)));
        }
        if self.is_lazy() && self.history_depth == 0 {
            return Err(Error::config("D must be >= 1 when xi > 0"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config(format!("step size must be positive, got {}", self.step_size)));
        }
        self.timing.validate().map_err(|e| Error::config(e.to_string()))?;

        let lazy = self.is_lazy();
        let require = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{} preset requires {what}", self.preset)))
            }
        };
        match self.preset {
            Preset::Gd => require(mg == 1 && r == 1 && !lazy && f == 1, "M_G = 1, r = 1, xi = 0, F = 1"),
            Preset::Gc => require(mg == m && !lazy, "M_G = M and xi = 0"),
            Preset::Lag => require(mg == 1 && r == 1 && lazy && f == 1, "M_G = 1, r = 1, xi > 0, F = 1"),
            Preset::GroupedGd => require(!lazy, "xi = 0"),
            Preset::GroupedLag => require(mg <= r && lazy && f == 1, "M_G <= r, xi > 0, F = 1"),
            Preset::Lagc => require(lazy, "xi > 0"),
            Preset::Custom => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopRule {
    pub epsilon: f64,
    pub max_iters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    pub duration: f64,
    /// `|M_D|`
    pub downloads: usize,
    /// `|M_U|`
    pub uploads: usize,
    /// Gap after this iteration's update.
    pub loss_gap: f64,
    /// Selected groups, ascending.
    pub selected: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    ReachedEpsilon,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTrace {
    pub scheme: String,
    pub initial_gap: f64,
    /// `M`
    pub workers: usize,
    /// `r_G`
    pub group_redundancy: usize,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

/// `(I(t), C(t), P(t), L(t))` at one time point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceSnapshot {
    pub iterations: usize,
    pub communication: usize,
    pub computation: f64,
    pub loss_gap: f64,
}

/// One row of the trace CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub duration: f64,
    pub cum_time: f64,
    pub md: usize,
    pub mu: usize,
    pub comm_cum: usize,
    pub comp_cum: f64,
    pub loss_gap: f64,
}

impl MetricsTrace {
    /// Gradients per data point computed in an iteration with `downloads`
    /// downloading workers, each computing `r_G / M` of the data.
    pub fn computation(&self, downloads: usize) -> f64 {
        (downloads * self.group_redundancy) as f64 / self.workers as f64
    }

    pub fn reached_epsilon(&self) -> bool {
        self.termination == Termination::ReachedEpsilon
    }

    /// Cumulative durations after each iteration.
    pub fn cumulative_times(&self) -> Vec<f64> {
        self.records
            .iter()
            .scan(0.0, |acc, r| {
                *acc += r.duration;
                Some(*acc)
            })
            .collect()
    }

    /// Total wall-clock time of the run.
    pub fn total_time(&self) -> f64 {
        self.records.iter().map(|r| r.duration).sum()
    }

    pub fn total_communication(&self) -> usize {
        self.records.iter().map(|r| r.downloads + r.uploads).sum()
    }

    pub fn total_computation(&self) -> f64 {
        self.records.iter().map(|r| self.computation(r.downloads)).sum()
    }

    pub fn final_gap(&self) -> f64 {
        self.records.last().map_or(self.initial_gap, |r| r.loss_gap)
    }

    /// Iterations, communication, computation and gap accumulated by time `t`.
    pub fn trace_functions(&self, t: f64) -> TraceSnapshot {
        let mut snap = TraceSnapshot {
            iterations: 0,
            communication: 0,
            computation: 0.0,
            loss_gap: self.initial_gap,
        };
        let mut elapsed = 0.0;
        for r in &self.records {
            elapsed += r.duration;
            if elapsed > t {
                break;
            }
            snap.iterations += 1;
            snap.communication += r.downloads + r.uploads;
            snap.computation += self.computation(r.downloads);
            snap.loss_gap = r.loss_gap;
        }
        snap
    }

    /// CSV rows, starting with an `iter = 0` row holding the initial gap.
    pub fn rows(&self) -> Vec<TraceRow> {
        let mut rows = Vec::with_capacity(self.records.len() + 1);
        rows.push(TraceRow {
            iter: 0,
            duration: 0.0,
            cum_time: 0.0,
            md: 0,
            mu: 0,
            comm_cum: 0,
            comp_cum: 0.0,
            loss_gap: self.initial_gap,
        });
        let (mut time, mut comm, mut comp) = (0.0, 0, 0.0);
        for r in &self.records {
            time += r.duration;
            comm += r.downloads + r.uploads;
            comp += self.computation(r.downloads);
            rows.push(TraceRow {
                iter: r.iteration,
                duration: r.duration,
                cum_time: time,
                md: r.downloads,
                mu: r.uploads,
                comm_cum: comm,
                comp_cum: comp,
                loss_gap: r.loss_gap,
            });
        }
        rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

/// `ĝ = Σ_{g ∈ selected} fresh_g + Σ_{g ∉ selected} cached_g`, summed in group order.
pub fn estimate_gradient(state: &LazyState, selected: &[usize], fresh: &[DVector<f64>], dimension: usize) -> Result<DVector<f64>> {
    if selected.len() != fresh.len() {
        return Err(Error::MissingGradient(format!(
            "{} fresh gradients for {} selected groups",
            fresh.len(),
            selected.len()
        )));
    }
    let mut estimate = DVector::zeros(dimension);
    let mut next = selected.iter().zip(fresh).peekable();
    for g in 0..state.groups() {
        match next.peek() {
            Some((&s, grad)) if s == g => {
                estimate += *grad;
                next.next();
            }
            _ => {
                let cached = state
                    .stale_gradient(g)
                    .ok_or_else(|| Error::MissingGradient(format!("cached gradient of group {g}")))?;
                estimate += cached;
            }
        }
    }
    Ok(estimate)
}

/// State of one simulated run.
pub struct Simulation<'a> {
    cfg: SchemeConfig,
    dataset: &'a Dataset,
    assignment: &'a Assignment,
    groups: Vec<GroupData>,
    group_smoothness: Vec<f64>,
    code: EncodingMatrix,
    /// Decoding coefficients by sorted set of responding workers.
    decoders: HashMap<Vec<usize>, DVector<f64>>,
    state: LazyState,
    theta: DVector<f64>,
    rng: ChaCha8Rng,
    iteration: usize,
    initial_gap: f64,
    last_estimate: Option<DVector<f64>>,
}

impl<'a> Simulation<'a> {
    /// Starts at `θ⁰ = 0` with timing randomness drawn from `seed`.
    pub fn new(dataset: &'a Dataset, assignment: &'a Assignment, cfg: SchemeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if (assignment.workers, assignment.group_size, assignment.redundancy) != (cfg.workers, cfg.group_size, cfg.redundancy) {
            return Err(Error::config(format!(
                "assignment (M={}, M_G={}, r={}) does not match scheme (M={}, M_G={}, r={})",
                assignment.workers, assignment.group_size, assignment.redundancy, cfg.workers, cfg.group_size, cfg.redundancy
            )));
        }
        if cfg.step_size >= 1.0 / dataset.smoothness {
            log::warn!(
                "step size {:e} is not below 1/L = {:e}; convergence is not guaranteed",
                cfg.step_size,
                1.0 / dataset.smoothness
            );
        }
        let groups = group_data(dataset, cfg.groups(), cfg.group_size)?;
        let group_smoothness = groups.iter().map(|g| g.smoothness).collect();
        let code = build_encoding_matrix(cfg.group_size, cfg.group_redundancy(), CODE_SEED)?;
        let theta = DVector::zeros(dataset.dimension());
        let initial_gap = optimality_gap(dataset, &theta)?;
        Ok(Self {
            state: LazyState::new(cfg.groups(), &theta, cfg.history_depth),
            cfg,
            dataset,
            assignment,
            groups,
            group_smoothness,
            code,
            decoders: HashMap::new(),
            theta,
            rng: ChaCha8Rng::seed_from_u64(seed),
            iteration: 0,
            initial_gap,
            last_estimate: None,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn lazy_state(&self) -> &LazyState {
        &self.state
    }

    pub fn initial_gap(&self) -> f64 {
        self.initial_gap
    }

    pub fn group_smoothness(&self) -> &[f64] {
        &self.group_smoothness
    }

    pub fn code(&self) -> &EncodingMatrix {
        &self.code
    }

    /// `ĝ` used by the most recent step.
    pub fn last_estimate(&self) -> Option<&DVector<f64>> {
        self.last_estimate.as_ref()
    }

    /// Runs selected group `g` at the current iterate: returns the decoded
    /// group gradient and the group's completion time.
    fn run_group(&mut self, g: usize) -> Result<(DVector<f64>, f64)> {
        let batch_gradients = self.groups[g]
            .batches
            .iter()
            .map(|b| partial_gradient(b, &self.theta))
            .collect::<Result<Vec<_>>>()?;
        let mg = self.cfg.group_size;
        let times = self.cfg.timing.sample_times(self.cfg.group_redundancy(), mg, &mut self.rng);
        let mut order: Vec<usize> = (0..mg).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
        let finish = times[order[self.cfg.wait_for - 1]];
        let mut fastest = order[..self.cfg.wait_for].to_vec();
        fastest.sort_unstable();

        let first_worker = self.assignment.workers_in(g).start;
        let encoded = fastest
            .iter()
            .map(|&k| {
                let stored: Vec<DVector<f64>> = self
                    .assignment
                    .stored_batches(first_worker + k)
                    .iter()
                    .map(|&j| batch_gradients[j].clone())
                    .collect();
                self.code.encode(k, &stored)
            })
            .collect::<Result<Vec<_>>>()?;
        let decoded = if self.code.redundancy() == mg {
            // every worker holds the whole group partition
            encoded[0].clone()
        } else {
            if !self.decoders.contains_key(&fastest) {
                let a = self.code.decoding_coefficients(&fastest).map_err(|e| match e {
                    Error::Decode { workers } => Error::Decode {
                        workers: workers.iter().map(|k| first_worker + k).collect(),
                    },
                    other => other,
                })?;
                self.decoders.insert(fastest.clone(), a);
            }
            EncodingMatrix::combine(&self.decoders[&fastest], &encoded)
        };
        Ok((decoded, finish))
    }

    pub fn step(&mut self) -> Result<IterationRecord> {
        self.iteration += 1;
        let selected = select_groups(&self.state, &self.theta, &self.group_smoothness, &self.cfg.lazy_rule());

        let mut fresh = Vec::with_capacity(selected.len());
        let mut duration: f64 = 0.0;
        for &g in &selected {
            let (grad, finish) = self.run_group(g)?;
            fresh.push(grad);
            duration = duration.max(finish);
        }

        let estimate = estimate_gradient(&self.state, &selected, &fresh, self.theta.len())?;
        let theta_new = &self.theta - &estimate * self.cfg.step_size;
        if theta_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step_size: self.cfg.step_size,
                gap: f64::INFINITY,
                initial_gap: self.initial_gap,
            });
        }
        commit_iteration(&mut self.state, &theta_new, &self.theta, &selected, fresh)?;
        self.theta = theta_new;
        self.last_estimate = Some(estimate);

        let loss_gap = optimality_gap(self.dataset, &self.theta)?;
        if loss_gap > DIVERGENCE_FACTOR * self.initial_gap {
            return Err(Error::Divergence {
                step_size: self.cfg.step_size,
                gap: loss_gap,
                initial_gap: self.initial_gap,
            });
        }
        let n = selected.len();
        Ok(IterationRecord {
            iteration: self.iteration,
            duration,
            downloads: n * self.cfg.group_size,
            uploads: n * self.cfg.wait_for,
            loss_gap,
            selected,
        })
    }
}

/// Runs until the gap is at most `stop.epsilon` or `stop.max_iters`
/// iterations have been taken. Deterministic in `(cfg, seed)`.
pub fn run_until(dataset: &Dataset, assignment: &Assignment, cfg: &SchemeConfig, stop: StopRule, seed: u64) -> Result<MetricsTrace> {
    if !(stop.epsilon.is_finite() && stop.epsilon >= 0.0) {
        return Err(Error::config(format!("epsilon must be finite and >= 0, got {}", stop.epsilon)));
    }
    let mut sim = Simulation::new(dataset, assignment, *cfg, seed)?;
    let mut trace = MetricsTrace {
        scheme: cfg.label(),
        initial_gap: sim.initial_gap(),
        workers: cfg.workers,
        group_redundancy: cfg.group_redundancy(),
        records: Vec::new(),
        termination: Termination::MaxIterations,
    };
    if trace.initial_gap <= stop.epsilon {
        trace.termination = Termination::ReachedEpsilon;
        return Ok(trace);
    }
    for _ in 0..stop.max_iters {
        let record = sim.step()?;
        let done = record.loss_gap <= stop.epsilon;
        trace.records.push(record);
        if done {
            trace.termination = Termination::ReachedEpsilon;
            break;
        }
    }
    Ok(trace)
}
