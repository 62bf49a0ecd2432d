//! Single trajectories and seeded ensembles: the fixed per-step ordering,
//! termination, outcome statistics, and trace/stats export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{
    apply_ledger, step_currents, CurrentLedger, DynamicsError, DynamicsParams, EdgeKind,
    StepContext, StepGrid,
};
use crate::rules::{
    apply_branching, find_phantoms, prune_phantoms, reduce, sample_choice, BranchChange,
    Eligibility, HitEvent, RuleError,
};
use crate::scenario::{build_initial_state, EventKind, Scenario, ScheduledEvent};
use crate::state::{contains_ready, StateGraph, Time};

/// Sources lighter than this no longer count as feeding anything when
/// deciding whether a trajectory has settled.
const DRAINED: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error(transparent)]
    Params(#[from] DynamicsError),
    #[error("clock reached {time} past the termination bound {bound}")]
    NonTermination { time: Time, bound: Time },
    #[error("seed {seed}: {source}")]
    Seeded {
        seed: u64,
        source: Box<HarnessError>,
    },
    #[error("no hit-time samples to compare")]
    EmptySample,
    #[error("cannot start workers: {0}")]
    Workers(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub eligibility: Eligibility,
    /// When false no stochastic choice is ever made.
    pub sampling: bool,
    pub prune: bool,
    /// When false the detector is never shut off.
    pub cutoff: bool,
    /// Run exactly until this time instead of until the state settles.
    pub horizon: Option<Time>,
    pub dt: Option<Time>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            eligibility: Eligibility::ReadyOnly,
            sampling: true,
            prune: true,
            cutoff: true,
            horizon: None,
            dt: None,
        }
    }
}

/// A ChaCha stream that counts the 32-bit words it hands out.
#[derive(Debug, Clone)]
pub struct CountedRng {
    inner: ChaCha8Rng,
    words: u64,
}

impl CountedRng {
    pub fn new(seed: u64) -> Self {
        CountedRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
            words: 0,
        }
    }

    pub fn words(&self) -> u64 {
        self.words
    }
}

impl RngCore for CountedRng {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 2;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.words += dest.len().div_ceil(4) as u64;
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Start,
    Look,
    Observe,
    Ring,
    Cutoff,
    Promote,
    Resolve,
    Spawn,
    Hit,
    Discard,
    Prune,
    Terminal,
}

impl LogKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LogKind::Start => "start",
            LogKind::Look => "look",
            LogKind::Observe => "observe",
            LogKind::Ring => "ring",
            LogKind::Cutoff => "cutoff",
            LogKind::Promote => "promote",
            LogKind::Resolve => "resolve",
            LogKind::Spawn => "spawn",
            LogKind::Hit => "hit",
            LogKind::Discard => "discard",
            LogKind::Prune => "prune",
            LogKind::Terminal => "terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time: Time,
    pub kind: LogKind,
    pub label: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitRecord {
    pub time: Time,
    pub label: String,
    pub trigger_inflow: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub log: Vec<LogEntry>,
    pub hits: Vec<HitRecord>,
    /// Surviving components, in creation order, with their weights.
    pub terminal: Vec<(String, f64)>,
    pub terminal_label: String,
    pub terminal_weight: f64,
    pub steps: u64,
    pub end_time: Time,
}

impl TrajectoryRecord {
    pub fn first_hit(&self) -> Option<Time> {
        self.hits.first().map(|h| h.time)
    }
}

/// What one call to [`Trajectory::step`] did.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub start: Time,
    pub ledger: CurrentLedger,
    /// Total weight right after the step's transfers, before any reduction.
    pub weight_after_transfer: f64,
    pub hit: Option<HitEvent>,
    pub pruned: usize,
}

/// One trajectory, advanced step by step in the fixed order: branching
/// events, currents with gating, transfers, sampling, reduction, pruning.
#[derive(Debug, Clone)]
pub struct Trajectory {
    graph: StateGraph,
    params: DynamicsParams,
    grid: StepGrid,
    events: Vec<ScheduledEvent>,
    next_event: usize,
    step: u64,
    rng: CountedRng,
    opts: RunOptions,
    log: Vec<LogEntry>,
    hits: Vec<HitRecord>,
    bound: Time,
    seed: u64,
    finished: bool,
}

impl Trajectory {
    pub fn new(sc: &Scenario, seed: u64, opts: &RunOptions) -> Result<Self, HarnessError> {
        let mut params = sc.params.clone();
        if opts.dt.is_some() {
            params.dt = opts.dt;
        }
        params.validate()?;
        let with_physiology = sc.version.has_observer() || sc.version.has_clock();
        let grid = params.grid(with_physiology);
        let (mut graph, _) = build_initial_state(sc);
        let events: Vec<ScheduledEvent> = sc
            .events
            .events()
            .iter()
            .filter(|e| opts.cutoff || e.kind != EventKind::Cutoff)
            .cloned()
            .collect();
        if !opts.cutoff {
            graph.set_cutoff(None);
            crate::dynamics::refresh(&mut graph);
        }
        let last_event = events
            .iter()
            .map(|e| e.time)
            .fold(params.half_life, f64::max);
        let bound = match opts.horizon {
            Some(h) => h + grid.dt,
            None => last_event + 3.0 * params.transit_time,
        };
        let log = graph
            .components()
            .iter()
            .filter(|c| c.weight() > 0.0)
            .map(|c| LogEntry {
                time: 0.0,
                kind: LogKind::Start,
                label: c.label(),
                weight: c.weight(),
            })
            .collect();
        Ok(Trajectory {
            graph,
            params,
            grid,
            events,
            next_event: 0,
            step: 0,
            rng: CountedRng::new(seed),
            opts: opts.clone(),
            log,
            hits: Vec::new(),
            bound,
            seed,
            finished: false,
        })
    }

    pub fn graph(&self) -> &StateGraph {
        &self.graph
    }

    pub fn grid(&self) -> StepGrid {
        self.grid
    }

    pub fn time(&self) -> Time {
        self.grid.time_of(self.step)
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn rng_words(&self) -> u64 {
        self.rng.words()
    }

    fn record(&mut self, time: Time, kind: LogKind, label: String, weight: f64) {
        self.log.push(LogEntry {
            time,
            kind,
            label,
            weight,
        });
    }

    /// Applies the branching events due at the start of the next step.
    /// [`Trajectory::step`] does this itself; calling it first lets a caller
    /// inspect the graph the step's currents will act on.
    pub fn apply_due_events(&mut self) -> Result<(), HarnessError> {
        let t = self.time();
        self.graph.time = t;
        while let Some(e) = self.events.get(self.next_event).cloned() {
            if e.time > t + 1e-9 {
                break;
            }
            self.next_event += 1;
            let kind = match e.kind {
                EventKind::Look(_) => LogKind::Look,
                EventKind::Observe(_) => LogKind::Observe,
                EventKind::Ring => LogKind::Ring,
                EventKind::Cutoff => LogKind::Cutoff,
            };
            let who = match &e.kind {
                EventKind::Look(a) | EventKind::Observe(a) => a.to_string(),
                _ => String::new(),
            };
            self.record(t, kind, who, 0.0);
            for change in apply_branching(&mut self.graph, &e)? {
                let (kind, id) = match change {
                    BranchChange::Promoted(id) => (LogKind::Promote, id),
                    BranchChange::Resolved(id) => (LogKind::Resolve, id),
                    BranchChange::Spawned(id) => (LogKind::Spawn, id),
                    BranchChange::Rang(_) => continue,
                };
                if let Some(c) = self.graph.get(id) {
                    let (label, weight) = (c.label(), c.weight());
                    self.record(t, kind, label, weight);
                }
            }
        }
        Ok(())
    }

    /// Advances one time step.
    pub fn step(&mut self) -> Result<StepReport, HarnessError> {
        let start = self.time();
        self.apply_due_events()?;

        let dt = self.grid.dt;
        let ctx = StepContext {
            params: &self.params,
            dt,
            shift: self.grid.shifts_after(self.step),
        };
        let ledger = step_currents(&self.graph, &ctx);
        apply_ledger(&mut self.graph, &ledger, &ctx);
        self.step += 1;
        let end = self.time();
        self.graph.time = end;
        let weight_after_transfer = self.graph.total_weight();

        let mut hit = None;
        if self.opts.sampling {
            let choice = sample_choice(
                &ledger,
                ledger.emitting_weight,
                dt,
                &mut self.rng,
                self.opts.eligibility,
            )?;
            if let Some(choice) = choice {
                let time = start + dt * choice.offset;
                let c = self.graph.get(choice.id).expect("chosen component is live");
                let label = c.label();
                if contains_ready(c) {
                    hit = Some(HitEvent {
                        time,
                        chosen: choice.id,
                        trigger_inflow: ledger.current_into(choice.id),
                    });
                } else {
                    let w = c.weight();
                    self.record(time, LogKind::Discard, label, w);
                }
            }
        }
        if let Some(h) = hit {
            let c = self.graph.get(h.chosen).expect("chosen component is live");
            let (label, weight) = (c.label(), c.weight());
            reduce(&mut self.graph, &h)?;
            self.record(h.time, LogKind::Hit, label.clone(), weight);
            self.hits.push(HitRecord {
                time: h.time,
                label,
                trigger_inflow: h.trigger_inflow,
            });
        }

        let mut pruned = 0;
        if self.opts.prune {
            for (_, label, weight) in prune_phantoms(&mut self.graph, &ledger) {
                pruned += 1;
                self.record(end, LogKind::Prune, label, weight);
            }
        }

        self.finished = match self.opts.horizon {
            Some(h) => end >= h - 1e-12,
            None => self.next_event >= self.events.len() && self.settled(),
        };
        if !self.finished && end > self.bound {
            return Err(HarnessError::NonTermination {
                time: end,
                bound: self.bound,
            });
        }
        Ok(StepReport {
            start,
            ledger,
            weight_after_transfer,
            hit,
            pruned,
        })
    }

    /// No route can move any more weight.
    fn settled(&self) -> bool {
        let g = &self.graph;
        g.routes.edges().iter().all(|r| {
            let Some(src) = g.get(r.from) else {
                return true;
            };
            match r.kind {
                EdgeKind::Primary => {
                    g.cutoff().is_some_and(|cut| g.time() >= cut) || src.weight() == 0.0
                }
                EdgeKind::Advect => src.weight() == 0.0,
                EdgeKind::Vertical => src.weight() <= DRAINED,
            }
        })
    }

    /// Steps until the trajectory settles (or reaches the horizon).
    pub fn run(mut self) -> Result<TrajectoryRecord, HarnessError> {
        while !self.finished {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Stops the trajectory where it stands and reports its outcome.
    pub fn finish(mut self) -> TrajectoryRecord {
        let phantoms = find_phantoms(&self.graph);
        let terminal: Vec<(String, f64)> = self
            .graph
            .components()
            .iter()
            .filter(|c| c.weight() > DRAINED && !phantoms.contains(&c.id()))
            .map(|c| (c.label(), c.weight()))
            .collect();
        let end = self.time();
        for (label, weight) in &terminal {
            self.record(end, LogKind::Terminal, label.clone(), *weight);
        }
        let terminal_label = terminal
            .iter()
            .map(|(l, _)| l.as_str())
            .collect::<Vec<_>>()
            .join(" + ");
        let terminal_weight = terminal.iter().map(|(_, w)| w).sum();
        TrajectoryRecord {
            seed: self.seed,
            log: self.log,
            hits: self.hits,
            terminal,
            terminal_label,
            terminal_weight,
            steps: self.step,
            end_time: end,
        }
    }
}

pub fn run_trajectory(sc: &Scenario, seed: u64) -> Result<TrajectoryRecord, HarnessError> {
    run_trajectory_with(sc, seed, &RunOptions::default())
}

pub fn run_trajectory_with(
    sc: &Scenario,
    seed: u64,
    opts: &RunOptions,
) -> Result<TrajectoryRecord, HarnessError> {
    Trajectory::new(sc, seed, opts)?.run()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub n_runs: usize,
    /// Terminal label to number of trajectories ending there.
    pub outcomes: BTreeMap<String, usize>,
    /// Trajectories with at least one stochastic hit.
    pub hits: usize,
    /// First hit time of each trajectory that had one, in seed order.
    #[serde(skip)]
    pub hit_times: Vec<Time>,
    /// KS distance between the hit times and the decay-law hit CDF.
    pub ks: Option<f64>,
}

impl EnsembleStats {
    pub fn from_records(records: &[TrajectoryRecord], half_life: Time) -> Self {
        let mut outcomes = BTreeMap::new();
        for r in records {
            *outcomes.entry(r.terminal_label.clone()).or_insert(0) += 1;
        }
        let hit_times: Vec<Time> = records.iter().filter_map(|r| r.first_hit()).collect();
        EnsembleStats {
            n_runs: records.len(),
            outcomes,
            hits: hit_times.len(),
            ks: compare_hit_cdf(&hit_times, half_life).ok(),
            hit_times,
        }
    }

    pub fn count(&self, label: &str) -> usize {
        self.outcomes.get(label).copied().unwrap_or(0)
    }

    pub fn fraction(&self, label: &str) -> f64 {
        self.count(label) as f64 / self.n_runs as f64
    }

    /// Fraction of runs whose terminal label satisfies `pred`.
    pub fn fraction_where(&self, pred: impl Fn(&str) -> bool) -> f64 {
        let n: usize = self
            .outcomes
            .iter()
            .filter(|(l, _)| pred(l))
            .map(|(_, c)| c)
            .sum();
        n as f64 / self.n_runs as f64
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub stats: EnsembleStats,
    pub records: Vec<TrajectoryRecord>,
}

pub fn run_ensemble(
    sc: &Scenario,
    n: usize,
    base_seed: u64,
) -> Result<EnsembleStats, HarnessError> {
    Ok(run_ensemble_with(sc, n, base_seed, &RunOptions::default(), None)?.stats)
}

/// Runs seeds `base_seed..base_seed + n` on `workers` threads (the rayon
/// default when `None`). Results are collected in seed order, so they do
/// not depend on the worker count.
pub fn run_ensemble_with(
    sc: &Scenario,
    n: usize,
    base_seed: u64,
    opts: &RunOptions,
    workers: Option<usize>,
) -> Result<Ensemble, HarnessError> {
    let run = || -> Vec<Result<TrajectoryRecord, HarnessError>> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let seed = base_seed.wrapping_add(i);
                run_trajectory_with(sc, seed, opts).map_err(|e| HarnessError::Seeded {
                    seed,
                    source: Box::new(e),
                })
            })
            .collect()
    };
    let results = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| HarnessError::Workers(e.to_string()))?
            .install(run),
        None => run(),
    };
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let stats = EnsembleStats::from_records(&records, sc.params.half_life);
    Ok(Ensemble { stats, records })
}

/// Hit-time CDF implied by the decay law: the hit rate follows the
/// captured weight, which saturates at one half by the cutoff.
pub fn hit_cdf(t: Time, half_life: Time) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= half_life {
        1.0
    } else {
        (1.0 - (-t / half_life).exp2()) / 0.5
    }
}

/// Two-sided Kolmogorov-Smirnov distance between the samples and
/// [`hit_cdf`].
pub fn compare_hit_cdf(samples: &[Time], half_life: Time) -> Result<f64, HarnessError> {
    if samples.is_empty() {
        return Err(HarnessError::EmptySample);
    }
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = hit_cdf(x, half_life);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    });
    Ok(d)
}

pub const TRACE_HEADER: &str = "time,event_kind,component_label,weight";

fn trace_lines(out: &mut String, r: &TrajectoryRecord) {
    for e in &r.log {
        let _ = writeln!(
            out,
            "{:.6},{},{},{:.9}",
            e.time,
            e.kind.as_str(),
            e.label,
            e.weight
        );
    }
}

/// Trace of one trajectory: a header, then one line per log entry.
pub fn export_trace(r: &TrajectoryRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRACE_HEADER}");
    trace_lines(&mut out, r);
    out
}

/// Traces of several trajectories, each introduced by a `seed` line.
pub fn export_traces(records: &[TrajectoryRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{TRACE_HEADER}");
    for r in records {
        let _ = writeln!(out, "{:.6},seed,{},{:.9}", 0.0, r.seed, 1.0);
        trace_lines(&mut out, r);
    }
    out
}

#[derive(Serialize)]
struct StatsDocument<'a> {
    scenario: &'a str,
    version: &'a str,
    base_seed: u64,
    #[serde(flatten)]
    stats: &'a EnsembleStats,
}

/// Stats as a JSON document with `n_runs`, `outcomes`, `hits` and `ks`.
pub fn export_stats(sc: &Scenario, base_seed: u64, stats: &EnsembleStats) -> String {
    let doc = StatsDocument {
        scenario: &sc.name,
        version: sc.version.as_str(),
        base_seed,
        stats,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("stats serialize");
    s.push('\n');
    s
}
