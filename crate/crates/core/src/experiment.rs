//! Experiment files and the sweep pipeline behind the `lagc` binary.
//!
//! An experiment file is TOML:
//!
//! ```toml
//! [dataset]
//! dimension = 30
//! rows_per_partition = 60
//! partitions = 20
//! smoothness = "geometric"
//! seed = 1
//!
//! [timing]
//! law = "pareto"
//! eta = 0.05
//! shape = 1.1
//!
//! [run]
//! workers = 20
//! redundancy = 4
//! xi = 1.0
//! history_depth = 10
//! epsilon = 1e-8
//! max_iters = 200000
//! seeds = 100
//!
//! [[scheme]]
//! preset = "gc"
//! wait_for = 17
//!
//! [[scheme]]
//! preset = "lagc"
//! group_size = 5
//! ```
//!
//! `[run]` values are defaults that each `[[scheme]]` may override. The step
//! size is `step_scale / L` with `L` measured on the generated dataset.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{dataset_complexity_report, write_reports, ComplexityReport};
use crate::dataset::{build_assignment, Dataset, DatasetConfig};
use crate::engine::{run_until, MetricsTrace, Preset, SchemeConfig, StopRule};
use crate::error::{Error, Result};
use crate::timing::TimingModel;

/// Either a seed count (`seeds = 100` means seeds `0..100`) or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).collect(),
            SeedSpec::List(list) => list.clone(),
        }
    }

    /// Parses a `--seeds` value: a count (`"5"`) or a comma list (`"1,4,9"`).
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::config(format!("invalid seed list {text:?}"));
        if text.contains(',') {
            text.split(',')
                .map(|s| s.trim().parse().map_err(|_| bad()))
                .collect::<Result<Vec<u64>>>()
                .map(SeedSpec::List)
        } else {
            text.trim().parse().map(SeedSpec::Count).map_err(|_| bad())
        }
    }
}

fn default_step_scale() -> f64 {
    0.5
}

fn default_depth() -> usize {
    10
}

fn default_xi() -> f64 {
    1.0
}

fn default_grid_points() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub workers: usize,
    #[serde(default = "one")]
    pub redundancy: usize,
    /// `ξ` for lazy presets.
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_depth")]
    pub history_depth: usize,
    /// Step size as a multiple of `1/L`.
    #[serde(default = "default_step_scale")]
    pub step_scale: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub seeds: SeedSpec,
    /// Points of the shared time grid in `aggregate.csv`.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// One `[[scheme]]` table. Unset fields fall back to `[run]` or preset defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeEntry {
    pub preset: Preset,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub group_size: Option<usize>,
    #[serde(default)]
    pub redundancy: Option<usize>,
    #[serde(default)]
    pub wait_for: Option<usize>,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub history_depth: Option<usize>,
    #[serde(default)]
    pub step_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub dataset: DatasetConfig,
    pub timing: TimingModel,
    pub run: RunConfig,
    #[serde(rename = "scheme")]
    pub schemes: Vec<SchemeEntry>,
}

/// A scheme with its step size still relative to `1/L`.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedScheme {
    pub name: String,
    pub config: SchemeConfig,
    pub step_scale: f64,
}

impl NamedScheme {
    /// The configuration with `α = step_scale / L`.
    pub fn for_dataset(&self, dataset: &Dataset) -> SchemeConfig {
        SchemeConfig {
            step_size: self.step_scale / dataset.smoothness,
            ..self.config
        }
    }

    /// File-name stem, e.g. `lagc-m-g-5`.
    pub fn file_stem(&self) -> String {
        let mut stem = String::new();
        for c in self.name.chars() {
            if c.is_ascii_alphanumeric() {
                stem.push(c.to_ascii_lowercase());
            } else if !stem.ends_with('-') {
                stem.push('-');
            }
        }
        stem.trim_matches('-').to_string()
    }
}

impl SchemeEntry {
    fn resolve(&self, run: &RunConfig, timing: TimingModel) -> Result<NamedScheme> {
        let workers = self.workers.unwrap_or(run.workers);
        let redundancy = self.redundancy.unwrap_or(run.redundancy);
        let depth = self.history_depth.unwrap_or(run.history_depth);
        let step_scale = self.step_scale.unwrap_or(run.step_scale);
        if !(step_scale > 0.0 && step_scale.is_finite()) {
            return Err(Error::config(format!("step_scale must be positive, got {step_scale}")));
        }
        let need_group = || {
            self.group_size
                .ok_or_else(|| Error::config(format!("{} preset requires group_size", self.preset)))
        };
        let lazy_xi = self.xi.unwrap_or(run.xi);
        let exact_xi = self.xi.unwrap_or(0.0);
        let fixed = |name: &str, value: Option<usize>, required: usize| -> Result<usize> {
            match value {
                Some(v) if v != required => Err(Error::config(format!(
                    "{} preset requires {name} = {required}, got {v}",
                    self.preset
                ))),
                _ => Ok(required),
            }
        };

        let mut cfg = match self.preset {
            Preset::Gd => SchemeConfig::gd(workers, step_scale, timing),
            Preset::Lag => SchemeConfig::lag(workers, lazy_xi, depth, step_scale, timing),
            Preset::Gc => {
                let mut c = SchemeConfig::gc(workers, redundancy, 0, step_scale, timing);
                c.group_size = fixed("group_size", self.group_size, workers)?;
                c.wait_for = self.wait_for.unwrap_or_else(|| c.min_wait());
                c
            }
            Preset::GroupedGd => {
                let mut c = SchemeConfig::grouped_gd(workers, need_group()?, redundancy, step_scale, timing);
                c.wait_for = self.wait_for.unwrap_or(c.wait_for);
                c
            }
            Preset::GroupedLag => SchemeConfig::grouped_lag(workers, need_group()?, redundancy, lazy_xi, depth, step_scale, timing),
            Preset::Lagc => {
                let mut c = SchemeConfig::lagc(workers, need_group()?, redundancy, 0, lazy_xi, depth, step_scale, timing);
                c.wait_for = self.wait_for.unwrap_or_else(|| c.min_wait());
                c
            }
            Preset::Custom => SchemeConfig {
                preset: Preset::Custom,
                workers,
                group_size: need_group()?,
                redundancy,
                wait_for: self.wait_for.ok_or_else(|| Error::config("custom preset requires wait_for"))?,
                xi: exact_xi,
                history_depth: depth,
                step_size: step_scale,
                timing,
            },
        };
        match self.preset {
            Preset::Gd | Preset::Lag => {
                cfg.group_size = fixed("group_size", self.group_size, 1)?;
                cfg.redundancy = fixed("redundancy", self.redundancy, 1)?;
                cfg.wait_for = fixed("wait_for", self.wait_for, 1)?;
            }
            Preset::GroupedLag => cfg.wait_for = fixed("wait_for", self.wait_for, 1)?,
            _ => {}
        }
        if matches!(self.preset, Preset::Gd | Preset::Gc | Preset::GroupedGd) {
            cfg.xi = exact_xi;
        }
        cfg.validate()?;
        Ok(NamedScheme {
            name: self.name.clone().unwrap_or_else(|| cfg.label()),
            config: cfg,
            step_scale,
        })
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without generating data.
    pub fn validate(&self) -> Result<()> {
        if !(self.run.epsilon > 0.0 && self.run.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.run.epsilon)));
        }
        if self.run.seeds.seeds().is_empty() {
            return Err(Error::config("need at least one seed"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("need at least one [[scheme]]"));
        }
        if self.run.grid_points < 2 {
            return Err(Error::config("grid_points must be at least 2"));
        }
        self.timing.validate().map_err(|e| Error::config(e.to_string()))?;
        self.dataset.smoothness_targets()?;
        let schemes = self.resolve_schemes()?;
        let mut stems: Vec<String> = schemes.iter().map(NamedScheme::file_stem).collect();
        stems.sort();
        if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("duplicate scheme name {:?}; set `name`", w[0])));
        }
        Ok(())
    }

    pub fn resolve_schemes(&self) -> Result<Vec<NamedScheme>> {
        self.schemes.iter().map(|s| s.resolve(&self.run, self.timing)).collect()
    }
}

/// One row of `aggregate.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scheme: String,
    pub time: f64,
    pub loss_gap: f64,
    pub communication: f64,
    pub computation: f64,
    pub mean_termination_time: f64,
}

/// Seed-averaged `L(t)`, `C(t)`, `P(t)` on `grid`. Past its last iteration a
/// trace holds its terminal values.
pub fn emit_time_grid_aggregate(scheme: &str, traces: &[MetricsTrace], grid: &[f64]) -> Result<Vec<AggregateRow>> {
    if grid.is_empty() {
        return Err(Error::config("empty time grid"));
    }
    if traces.is_empty() {
        return Err(Error::config("no traces to aggregate"));
    }
    let n = traces.len() as f64;
    let mean_termination_time = traces.iter().map(MetricsTrace::total_time).sum::<f64>() / n;
    Ok(grid
        .iter()
        .map(|&t| {
            let (mut gap, mut comm, mut comp) = (0.0, 0.0, 0.0);
            for trace in traces {
                let s = trace.trace_functions(t);
                gap += s.loss_gap;
                comm += s.communication as f64;
                comp += s.computation;
            }
            AggregateRow {
                scheme: scheme.to_string(),
                time: t,
                loss_gap: gap / n,
                communication: comm / n,
                computation: comp / n,
                mean_termination_time,
            }
        })
        .collect())
}

/// `points` evenly spaced times from 0 to `end`.
pub fn time_grid(end: f64, points: usize) -> Vec<f64> {
    let step = end / (points.max(2) - 1) as f64;
    (0..points.max(2)).map(|i| i as f64 * step).collect()
}

/// Options of one `run` invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub table_only: bool,
}

/// What a run wrote.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub reports: Vec<ComplexityReport>,
    pub files: Vec<PathBuf>,
}

/// Removes the files it tracks unless disarmed.
struct Cleanup {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if self.armed {
            for f in &self.files {
                let _ = fs::remove_file(f);
            }
            for d in self.dirs.iter().rev() {
                let _ = fs::remove_dir(d);
            }
        }
    }
}

fn create_dir_tracked(dir: &Path, cleanup: &mut Cleanup) -> Result<()> {
    if !dir.exists() {
        if let Some(parent) = dir.parent() {
            if !parent.as_os_str().is_empty() {
                create_dir_tracked(parent, cleanup)?;
            }
        }
        fs::create_dir(dir)?;
        cleanup.dirs.push(dir.to_path_buf());
    }
    Ok(())
}

pub fn complexity_table(spec: &ExperimentSpec, dataset: &Dataset) -> Result<Vec<ComplexityReport>> {
    spec.resolve_schemes()?
        .iter()
        .map(|s| {
            let mut report = dataset_complexity_report(&s.for_dataset(dataset), dataset, spec.run.epsilon)?;
            report.scheme = s.name.clone();
            Ok(report)
        })
        .collect()
}

/// Generates the dataset, writes `complexity.csv`, and unless `table_only`
/// runs every (scheme, seed) pair, writing `traces/<scheme>_seed<n>.csv` and
/// `aggregate.csv`. On error, files written by this call are removed.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<RunSummary> {
    spec.validate()?;
    let mut cleanup = Cleanup {
        files: Vec::new(),
        dirs: Vec::new(),
        armed: true,
    };
    let dataset = spec.dataset.generate()?;
    create_dir_tracked(&opts.out, &mut cleanup)?;

    let reports = complexity_table(spec, &dataset)?;
    let table = opts.out.join("complexity.csv");
    cleanup.files.push(table.clone());
    write_reports(&table, &reports)?;

    if !opts.table_only {
        let schemes = spec.resolve_schemes()?;
        let seeds = spec.run.seeds.seeds();
        let stop = StopRule {
            epsilon: spec.run.epsilon,
            max_iters: spec.run.max_iters,
        };
        let jobs: Vec<(usize, u64)> = (0..schemes.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
        let run_one = |&(i, seed): &(usize, u64)| -> Result<MetricsTrace> {
            let cfg = schemes[i].for_dataset(&dataset);
            let assignment = build_assignment(cfg.workers, cfg.group_size, cfg.redundancy)?;
            let mut trace = run_until(&dataset, &assignment, &cfg, stop, seed)?;
            trace.scheme = schemes[i].name.clone();
            Ok(trace)
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs.unwrap_or(0))
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        let traces = pool.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;

        let trace_dir = opts.out.join("traces");
        create_dir_tracked(&trace_dir, &mut cleanup)?;
        for ((i, seed), trace) in jobs.iter().zip(&traces) {
            if !trace.reached_epsilon() {
                log::warn!(
                    "{} seed {seed}: stopped at max_iters with gap {:e}",
                    schemes[*i].name,
                    trace.final_gap()
                );
            }
            let path = trace_dir.join(format!("{}_seed{seed}.csv", schemes[*i].file_stem()));
            cleanup.files.push(path.clone());
            trace.write_csv(&path)?;
        }

        let end = traces.iter().map(MetricsTrace::total_time).fold(0.0, f64::max);
        let grid = time_grid(end, spec.run.grid_points);
        let aggregate = opts.out.join("aggregate.csv");
        cleanup.files.push(aggregate.clone());
        let mut w = csv::Writer::from_path(&aggregate)?;
        for (i, scheme) in schemes.iter().enumerate() {
            let own: Vec<MetricsTrace> = jobs
                .iter()
                .zip(&traces)
                .filter(|((j, _), _)| *j == i)
                .map(|(_, t)| t.clone())
                .collect();
            for row in emit_time_grid_aggregate(&scheme.name, &own, &grid)? {
                w.serialize(row)?;
            }
        }
        w.flush()?;
    }

    cleanup.armed = false;
    Ok(RunSummary {
        reports,
        files: std::mem::take(&mut cleanup.files),
    })
}

/// Monte Carlo check of one order-statistic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub a: usize,
    pub b: usize,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub relative_error: f64,
}

/// Estimates `E[T_{a:b}]` for all `a <= b <= max_b` from `samples`
/// replicates of `max_b` draws each; replicate `k` uses its first `b` draws
/// for sample size `b`.
pub fn order_stat_oracle(model: &TimingModel, r: usize, max_b: usize, samples: usize, seed: u64) -> Result<Vec<OracleRow>> {
    model.validate()?;
    if max_b == 0 || samples == 0 {
        return Err(Error::config("need max_b >= 1 and samples >= 1"));
    }
    const CHUNK: usize = 1 << 16;
    let chunks = samples.div_ceil(CHUNK);
    let tri = max_b * (max_b + 1) / 2;
    let index = |a: usize, b: usize| b * (b - 1) / 2 + (a - 1);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut acc = vec![0.0; tri];
            let mut sorted = Vec::with_capacity(max_b);
            for _ in 0..n {
                sorted.clear();
                for b in 1..=max_b {
                    let x = model.sample(r, &mut rng);
                    let pos = sorted.partition_point(|&v| v < x);
                    sorted.insert(pos, x);
                    for (a, v) in sorted.iter().enumerate() {
                        acc[index(a + 1, b)] += v;
                    }
                }
            }
            acc
        })
        .reduce(
            || vec![0.0; tri],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(u, v)| *u += v);
                x
            },
        );
    let mut rows = Vec::with_capacity(tri);
    for b in 1..=max_b {
        for a in 1..=b {
            let closed_form = model.expected_order_stat(a, b, r)?;
            let monte_carlo = sums[index(a, b)] / samples as f64;
            rows.push(OracleRow {
                a,
                b,
                closed_form,
                monte_carlo,
                relative_error: (monte_carlo - closed_form).abs() / closed_form,
            });
        }
    }
    Ok(rows)
}

/// Monte Carlo mean of the maximum of `a` group times.
pub fn group_time_monte_carlo(
    model: &TimingModel,
    r: usize,
    group_size: usize,
    wait_for: usize,
    a: usize,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times = vec![0.0; group_size];
    let mut total = 0.0;
    for _ in 0..samples {
        let mut worst: f64 = 0.0;
        for _ in 0..a {
            times.iter_mut().for_each(|t| *t = model.sample(r, &mut rng));
            let (_, kth, _) = times.select_nth_unstable_by(wait_for - 1, f64::total_cmp);
            worst = worst.max(*kth);
        }
        total += worst;
    }
    total / samples as f64
}
