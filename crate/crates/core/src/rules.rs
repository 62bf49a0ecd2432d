//! The four oRules as executable steps: stochastic choice, ready-state
//! assignment on branching, reduction, and gating (the latter applied in
//! [`crate::dynamics::step_currents`]), plus phantom pruning.

use rand::Rng;
use thiserror::Error;

use crate::dynamics::{observer_awareness, refresh, CurrentLedger, EdgeKind};
use crate::scenario::{EventKind, ScheduledEvent};
use crate::state::{
    contains_ready, AgentId, AgentRole, BrainStatus, ComponentId, Lineage, Resolution,
    ResolutionKind, StateGraph, SubsystemFactor, Time,
};

/// Largest hit probability a single step may carry before the first-order
/// hazard stops being trustworthy.
pub const MAX_STEP_HAZARD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("step hazard {hazard:.4} exceeds {MAX_STEP_HAZARD}; reduce dt")]
    StepTooCoarse { hazard: f64 },
    #[error("component {0} has no ready brain state and cannot be reduced onto")]
    NotReady(ComponentId),
    #[error("no live component {0}")]
    UnknownComponent(ComponentId),
    #[error("event cannot apply to this state: {0}")]
    UnknownEvent(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitEvent {
    pub time: Time,
    pub chosen: ComponentId,
    /// Current J into the chosen component on the step of the hit.
    pub trigger_inflow: f64,
}

/// Which components oRule 1 may choose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Eligibility {
    /// Only components containing ready brain states.
    #[default]
    ReadyOnly,
    /// Every component with positive net inflow; the caller discards
    /// choices that land on a component without ready states.
    All,
}

/// A stochastic choice made during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Choice {
    pub id: ComponentId,
    /// Where in the step the choice fell, uniform on `[0, 1)`.
    pub offset: f64,
}

/// oRule 1 over one step: a choice happens with probability
/// `dt·ΣJ_n / s`, and lands on component n with probability proportional
/// to `J_n`. Always consumes exactly two uniforms, hit test first.
pub fn sample_stochastic_choice<R: Rng + ?Sized>(
    ledger: &CurrentLedger,
    s: f64,
    dt: Time,
    rng: &mut R,
    eligibility: Eligibility,
) -> Result<Option<ComponentId>, RuleError> {
    Ok(sample_choice(ledger, s, dt, rng, eligibility)?.map(|c| c.id))
}

/// [`sample_stochastic_choice`], also reporting where in the step the
/// choice fell. Conditioned on a hit, the hit draw is uniform below the
/// hazard, so rescaling it gives the offset without a third draw.
pub fn sample_choice<R: Rng + ?Sized>(
    ledger: &CurrentLedger,
    s: f64,
    dt: Time,
    rng: &mut R,
    eligibility: Eligibility,
) -> Result<Option<Choice>, RuleError> {
    let hit_draw: f64 = rng.gen();
    let pick_draw: f64 = rng.gen();
    let eligible = |ready: bool| eligibility == Eligibility::All || ready;
    let total: f64 = ledger
        .inflow
        .iter()
        .filter(|i| eligible(i.ready))
        .map(|i| i.current)
        .sum();
    if total <= 0.0 || s <= 0.0 {
        return Ok(None);
    }
    let hazard = dt * total / s;
    if hazard > MAX_STEP_HAZARD {
        return Err(RuleError::StepTooCoarse { hazard });
    }
    if hit_draw >= hazard {
        return Ok(None);
    }
    let offset = hit_draw / hazard;
    let target = pick_draw * total;
    let mut acc = 0.0;
    let mut last = None;
    for i in ledger.inflow.iter().filter(|i| eligible(i.ready)) {
        acc += i.current;
        last = Some(i.id);
        if target < acc {
            break;
        }
    }
    Ok(last.map(|id| Choice { id, offset }))
}

/// What a branching event did to the graph.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchChange {
    /// Look: `i → I`, `⊗X → B^b`.
    Promoted(ComponentId),
    /// A pending brain state resolved inside an existing component.
    Resolved(ComponentId),
    /// A parallel ready row was created.
    Spawned(ComponentId),
    Rang(ComponentId),
}

const EVENT_SLACK: f64 = 1e-9;

/// Applies a scheduled event that is due at the graph's current time. An
/// event still in the future leaves the graph untouched.
pub fn apply_branching(
    g: &mut StateGraph,
    e: &ScheduledEvent,
) -> Result<Vec<BranchChange>, RuleError> {
    if e.time > g.time + EVENT_SLACK {
        return Ok(Vec::new());
    }
    match &e.kind {
        EventKind::Cutoff => Ok(Vec::new()),
        EventKind::Look(agent) => look(g, agent),
        EventKind::Observe(agent) => {
            if !g.components.iter().any(|c| c.brain(agent).is_some()) {
                return Err(RuleError::UnknownEvent(format!(
                    "no brain state for `{agent}`"
                )));
            }
            Ok(resolve(g, agent, ResolutionKind::Observe))
        }
        EventKind::Ring => ring(g, e.time),
    }
}

fn look(g: &mut StateGraph, agent: &AgentId) -> Result<Vec<BranchChange>, RuleError> {
    if !g.components.iter().any(|c| c.brain(agent).is_some()) {
        return Err(RuleError::UnknownEvent(format!(
            "no brain state for `{agent}`"
        )));
    }
    let mut changes = Vec::new();
    for c in g.components.iter_mut() {
        let mut touched = false;
        for f in c.factors.iter_mut() {
            match f {
                SubsystemFactor::Indicator(i) if !i.engaged => {
                    i.engaged = true;
                    touched = true;
                }
                SubsystemFactor::Brain(b)
                    if &b.agent == agent && b.status == BrainStatus::External =>
                {
                    b.status = BrainStatus::Brink;
                    b.awareness = "b".into();
                    touched = true;
                }
                _ => {}
            }
        }
        if touched {
            changes.push(BranchChange::Promoted(c.id()));
        }
    }
    refresh(g);
    Ok(changes)
}

fn ring(g: &mut StateGraph, at: Time) -> Result<Vec<BranchChange>, RuleError> {
    let mut changes = Vec::new();
    for c in g.components.iter_mut() {
        let id = c.id();
        for f in c.factors.iter_mut() {
            if let SubsystemFactor::InternalClock(clock) = f {
                if clock.rung_at.is_none() {
                    clock.rung_at = Some(at);
                    changes.push(BranchChange::Rang(id));
                }
            }
        }
    }
    if changes.is_empty() && !g.components.iter().any(|c| c.clock().is_some()) {
        return Err(RuleError::UnknownEvent(
            "ring without an internal clock".into(),
        ));
    }
    let mut cats: Vec<AgentId> = g
        .components
        .iter()
        .flat_map(|c| c.brains())
        .filter(|b| b.role == AgentRole::Cat)
        .map(|b| b.agent.clone())
        .collect();
    cats.sort();
    cats.dedup();
    for cat in cats {
        changes.extend(resolve(g, &cat, ResolutionKind::Wake));
    }
    refresh(g);
    Ok(changes)
}

/// Components able to hold or receive emitting weight: non-ready with
/// positive weight, or fed along an active route by such a component.
pub(crate) fn supplied(g: &StateGraph) -> Vec<bool> {
    let n = g.components.len();
    let ready: Vec<bool> = g.components.iter().map(contains_ready).collect();
    let mut supply: Vec<bool> = g
        .components
        .iter()
        .zip(&ready)
        .map(|(c, &r)| !r && c.weight() > 0.0)
        .collect();
    let edges: Vec<(usize, usize)> = g
        .routes
        .edges
        .iter()
        .filter(|r| route_active(g, r.kind))
        .filter_map(|r| Some((g.index_of(r.from)?, g.index_of(r.to)?)))
        .collect();
    loop {
        let mut changed = false;
        for &(a, b) in &edges {
            if supply[a] && !ready[b] && !supply[b] {
                supply[b] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    debug_assert_eq!(supply.len(), n);
    supply
}

fn route_active(g: &StateGraph, kind: EdgeKind) -> bool {
    kind != EdgeKind::Primary || g.cutoff.is_none_or(|cut| g.time < cut)
}

/// Resolves an agent's pending brain state (brink on observation,
/// unconscious on a natural wake). When every emitting component carrying
/// it belongs to one lineage the resolution is a continuous progression in
/// place. Otherwise it produces components that are discontinuous with each
/// other, and each emitting row gets a ready twin fed by vertical current.
fn resolve(g: &mut StateGraph, agent: &AgentId, kind: ResolutionKind) -> Vec<BranchChange> {
    if !g
        .resolved_agents
        .iter()
        .any(|(a, k)| a == agent && *k == kind)
    {
        g.resolved_agents.push((agent.clone(), kind));
    }
    let supply = supplied(g);
    let mut lineages: Vec<Lineage> = g
        .components
        .iter()
        .zip(&supply)
        .filter(|(c, &s)| s && !contains_ready(c) && has_pending(c, agent, kind))
        .map(|(c, _)| c.lineage())
        .collect();
    lineages.sort();
    lineages.dedup();

    let mut changes = Vec::new();
    if lineages.len() <= 1 {
        let reference = g.reference;
        for c in g.components.iter_mut() {
            if !has_pending(c, agent, kind) {
                continue;
            }
            let gated = contains_ready(c);
            let status = if c.lineage() == reference {
                BrainStatus::Conscious
            } else {
                BrainStatus::Ready
            };
            let awareness = match kind {
                ResolutionKind::Observe => observer_awareness(c.factors(), gated),
                ResolutionKind::Wake => "C".to_string(),
            };
            for b in c.brains_mut() {
                if &b.agent == agent && kind.pending(b) {
                    b.status = status;
                    b.awareness = awareness.clone();
                }
            }
            changes.push(BranchChange::Resolved(c.id()));
        }
        refresh(g);
    } else {
        g.resolutions.push(Resolution {
            agent: agent.clone(),
            kind,
        });
        let created = refresh(g);
        changes.extend(created.into_iter().map(BranchChange::Spawned));
    }
    changes
}

fn has_pending(c: &crate::state::Component, agent: &AgentId, kind: ResolutionKind) -> bool {
    c.brain(agent).is_some_and(|b| kind.pending(b))
}

/// oRule 3: the chosen component's ready states become conscious and every
/// other component is dropped. The survivor is renormalized to weight 1
/// and becomes the reference state for later readiness decisions.
pub fn reduce(g: &mut StateGraph, hit: &HitEvent) -> Result<(), RuleError> {
    let idx = g
        .index_of(hit.chosen)
        .ok_or(RuleError::UnknownComponent(hit.chosen))?;
    if !contains_ready(&g.components[idx]) {
        return Err(RuleError::NotReady(hit.chosen));
    }
    let mut survivor = g.components.swap_remove(idx);
    for b in survivor.brains_mut() {
        if b.status == BrainStatus::Ready {
            b.status = BrainStatus::Conscious;
        }
    }
    // Pending states whose resolution is already due join the survivor
    // continuously.
    let resolved = g.resolved_agents.clone();
    let snapshot = survivor.factors.clone();
    for b in survivor.brains_mut() {
        for (agent, kind) in &resolved {
            if &b.agent == agent && kind.pending(b) {
                b.status = BrainStatus::Conscious;
                b.awareness = match kind {
                    ResolutionKind::Observe => observer_awareness(&snapshot, false),
                    ResolutionKind::Wake => "C".to_string(),
                };
            }
        }
    }
    let w = survivor.weight();
    if w > 0.0 {
        survivor.scale_weight(1.0 / w);
    }
    g.reference = survivor.lineage();
    g.components.clear();
    g.components.push(survivor);
    g.resolutions.clear();
    refresh(g);
    Ok(())
}

/// Ready-containing components that receive no current now and cannot
/// receive any later.
pub fn find_phantoms(g: &StateGraph) -> Vec<ComponentId> {
    let supply = supplied(g);
    g.components
        .iter()
        .filter(|c| contains_ready(c))
        .filter(|c| {
            !g.routes
                .feeding(c.id())
                .any(|r| route_active(g, r.kind) && g.index_of(r.from).is_some_and(|i| supply[i]))
        })
        .map(|c| c.id())
        .collect()
}

/// Removes phantoms, and emitting rows that are empty for good. Returns
/// the removed ids with their labels and weights.
pub fn prune_phantoms(
    g: &mut StateGraph,
    ledger: &CurrentLedger,
) -> Vec<(ComponentId, String, f64)> {
    let mut doomed: Vec<ComponentId> = find_phantoms(g)
        .into_iter()
        .filter(|id| ledger.current_into(*id) == 0.0)
        .collect();
    let supply = supplied(g);
    doomed.extend(
        g.components
            .iter()
            .zip(&supply)
            .filter(|(c, &s)| !s && !contains_ready(c) && c.weight() == 0.0)
            .map(|(c, _)| c.id()),
    );
    if doomed.is_empty() {
        return Vec::new();
    }
    doomed.sort();
    let removed: Vec<(ComponentId, String, f64)> = g
        .components
        .iter()
        .filter(|c| doomed.binary_search(&c.id()).is_ok())
        .map(|c| (c.id(), c.label(), c.weight()))
        .collect();
    g.components
        .retain(|c| doomed.binary_search(&c.id()).is_err());
    refresh(g);
    removed
}
