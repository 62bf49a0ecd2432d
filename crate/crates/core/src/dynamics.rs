//! Probability currents: primary decay with the half-life cutoff, classical
//! transport of the device pulse along α, and the physiological (vertical)
//! current that follows an observation. Every edge out of a component that
//! is entangled with a ready brain state is blocked before any weight moves.

use std::f64::consts::LN_2;

use thiserror::Error;

use crate::state::{
    contains_ready, factors_discontinuous, AgentRole, BrainStatus, CatCompletion, Component,
    ComponentId, Device, DevicePulse, DeviceStage, IndicatorLevel, Lineage, ResolutionKind,
    StateGraph, SubsystemFactor, Time,
};

/// Largest per-step hazard the automatic step picker aims for.
const TARGET_STEP_HAZARD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("component {0} is entangled with a ready brain state and cannot emit current")]
    GatedComponent(ComponentId),
    #[error("component {0} has no device pulse")]
    NoPulse(ComponentId),
    #[error("invalid dynamics parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    pub half_life: Time,
    /// Time for the device to run from α₀ to α_f.
    pub transit_time: Time,
    /// Relaxation rate κ of the physiological current.
    pub phys_rate: f64,
    /// Width of the initial pulse, in bins.
    pub pulse_width: usize,
    /// Number of α bins.
    pub bins: usize,
    /// Requested time step; snapped down to a whole fraction of one bin.
    pub dt: Option<Time>,
}

impl DynamicsParams {
    pub const DEFAULT_BINS: usize = 100;

    /// Defaults for a given half-life and transit time: 100 bins, an
    /// impulse pulse and κ = 50 / t½.
    pub fn new(half_life: Time, transit_time: Time) -> Self {
        DynamicsParams {
            half_life,
            transit_time,
            phys_rate: 50.0 / half_life,
            pulse_width: 1,
            bins: Self::DEFAULT_BINS,
            dt: None,
        }
    }

    pub fn decay_rate(&self) -> f64 {
        LN_2 / self.half_life
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(DynamicsError::InvalidParam(format!(
                    "{name} must be positive and finite, got {v}"
                )))
            }
        };
        positive("half_life", self.half_life)?;
        positive("transit_time", self.transit_time)?;
        positive("phys_rate", self.phys_rate)?;
        if let Some(dt) = self.dt {
            positive("dt", dt)?;
        }
        if self.bins == 0 {
            return Err(DynamicsError::InvalidParam(
                "bins must be at least 1".into(),
            ));
        }
        if self.pulse_width == 0 || self.pulse_width > self.bins {
            return Err(DynamicsError::InvalidParam(format!(
                "pulse_width must be in 1..={}, got {}",
                self.bins, self.pulse_width
            )));
        }
        Ok(())
    }

    /// Time one bin of the pulse takes to advance.
    pub fn bin_time(&self) -> Time {
        self.transit_time / self.bins as f64
    }

    /// Locks the time step to a whole fraction of the bin time so the pulse
    /// advances exactly one bin every `steps_per_bin` steps. Without an
    /// explicit `dt`, the step is chosen so the fastest rate in play moves
    /// at most about 5% of a component's weight per step.
    pub fn grid(&self, with_physiology: bool) -> StepGrid {
        let bin_time = self.bin_time();
        let steps_per_bin = match self.dt {
            Some(dt) => (bin_time / dt * (1.0 - 1e-12)).ceil().max(1.0) as usize,
            None => {
                let mut rate = self.decay_rate();
                if with_physiology {
                    rate = rate.max(self.phys_rate);
                }
                (rate * bin_time / TARGET_STEP_HAZARD).ceil().max(1.0) as usize
            }
        };
        StepGrid {
            dt: bin_time / steps_per_bin as f64,
            steps_per_bin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGrid {
    pub dt: Time,
    pub steps_per_bin: usize,
}

impl StepGrid {
    pub fn time_of(&self, step: u64) -> Time {
        step as f64 * self.dt
    }

    /// Whether the pulse shifts at the end of `step`.
    pub fn shifts_after(&self, step: u64) -> bool {
        (step + 1) % self.steps_per_bin as u64 == 0
    }
}

/// Primary current out of the undecayed component: λ·w₀ until the clock
/// shuts the detector off at t½, zero afterwards.
pub fn decay_current(t: Time, w0: f64, p: &DynamicsParams) -> f64 {
    if t < p.half_life {
        p.decay_rate() * w0
    } else {
        0.0
    }
}

/// Vertical current into the ready row: κ·w from the moment of observation.
pub fn physiological_current(t: Time, t_ob: Time, w_src: f64, p: &DynamicsParams) -> f64 {
    if t < t_ob {
        0.0
    } else {
        p.phys_rate * w_src
    }
}

/// Moves a pulse one bin toward α_f; whatever leaves the last bin lands in
/// `done`. Returns the transferred mass.
pub fn advance_device_pulse(c: &mut Component, done: &mut Component) -> Result<f64, DynamicsError> {
    if contains_ready(c) {
        return Err(DynamicsError::GatedComponent(c.id()));
    }
    let id = c.id();
    let pulse = c.pulse_mut().ok_or(DynamicsError::NoPulse(id))?;
    let exit = pulse.shift();
    if exit != 0.0 {
        add_mass(done, exit);
    }
    Ok(exit)
}

fn add_mass(c: &mut Component, amount: f64) {
    match c.pulse_mut() {
        Some(p) => *p.bin_mut(0) += amount,
        None => c.add_weight(amount),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    /// Radioactive decay into the captured branch (a plus sign).
    Primary,
    /// Classical run of the device to α_f (an arrow).
    Advect,
    /// Physiological current into a ready row.
    Vertical,
}

impl EdgeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::Primary => "primary",
            EdgeKind::Advect => "advect",
            EdgeKind::Vertical => "vertical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub from: ComponentId,
    pub to: ComponentId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockedEdge {
    pub from: ComponentId,
    pub kind: EdgeKind,
}

/// Every edge the current graph could carry, plus those gating removes.
#[derive(Debug, Clone, Default)]
pub struct Routes {
    pub(crate) edges: Vec<Route>,
    pub(crate) blocked: Vec<BlockedEdge>,
}

impl Routes {
    pub fn edges(&self) -> &[Route] {
        &self.edges
    }

    pub fn blocked(&self) -> &[BlockedEdge] {
        &self.blocked
    }

    pub fn feeding(&self, id: ComponentId) -> impl Iterator<Item = &Route> {
        self.edges.iter().filter(move |r| r.to == id)
    }

    pub fn out_of(&self, id: ComponentId) -> impl Iterator<Item = &Route> {
        self.edges.iter().filter(move |r| r.from == id)
    }
}

/// One weight movement planned for the current step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    pub from: ComponentId,
    pub to: ComponentId,
    pub kind: EdgeKind,
    pub amount: f64,
    /// Per-bin amounts when a pulse feeds a pulse bin by bin.
    pub bins: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inflow {
    pub id: ComponentId,
    /// Net positive current J_n, probability per unit time.
    pub current: f64,
    pub ready: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CurrentLedger {
    pub dt: Time,
    /// Net positive inflows, ordered by component id.
    pub inflow: Vec<Inflow>,
    pub blocked: Vec<BlockedEdge>,
    pub transfers: Vec<Transfer>,
    /// Weight of the components able to emit current, at step start.
    pub emitting_weight: f64,
}

impl CurrentLedger {
    pub fn is_empty(&self) -> bool {
        self.inflow.is_empty() && self.transfers.is_empty()
    }

    pub fn current_into(&self, id: ComponentId) -> f64 {
        self.inflow
            .iter()
            .find(|i| i.id == id)
            .map_or(0.0, |i| i.current)
    }

    pub fn moved(&self, kind: EdgeKind) -> f64 {
        self.transfers
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.amount)
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub params: &'a DynamicsParams,
    pub dt: Time,
    pub shift: bool,
}

/// Awareness an observer acquires in a component: the indicator level when
/// there is an indicator, otherwise the device stage plus the cat's state.
pub(crate) fn observer_awareness(factors: &[SubsystemFactor], gated: bool) -> String {
    let mut stage = None;
    let mut cat = None;
    for f in factors {
        match f {
            SubsystemFactor::Indicator(i) => return i.digit().to_string(),
            SubsystemFactor::Device(d) => stage = Some(d.stage()),
            SubsystemFactor::Brain(b) if b.role == AgentRole::Cat => {
                cat = b.awareness.chars().next();
            }
            _ => {}
        }
    }
    let mut s = String::new();
    match stage {
        Some(DeviceStage::Start) => s.push('0'),
        Some(DeviceStage::Transit) if gated => s.push('0'),
        Some(DeviceStage::Transit) => s.push('a'),
        Some(DeviceStage::End) => s.push('f'),
        None => {}
    }
    if let Some(c) = cat {
        s.push(c);
    }
    if s.is_empty() {
        s.push('?');
    }
    s
}

/// The captured branch fed by `c`'s primary current: d₀ becomes d₁, the
/// device is triggered, and since the new component is discontinuous with
/// its source every active brain state in it is ready.
pub(crate) fn decay_target(c: &Component, bins: usize) -> Vec<SubsystemFactor> {
    let mut factors: Vec<SubsystemFactor> = c
        .factors()
        .iter()
        .map(|f| match f {
            SubsystemFactor::Detector(_) => SubsystemFactor::Detector(true),
            SubsystemFactor::Device(Device::Idle) => {
                SubsystemFactor::Device(Device::Pulse(DevicePulse::empty(bins)))
            }
            other => other.clone(),
        })
        .collect();
    if factors_discontinuous(c.factors(), &factors) {
        for f in factors.iter_mut() {
            if let SubsystemFactor::Brain(b) = f {
                if b.status.is_active() {
                    b.status = BrainStatus::Ready;
                }
            }
        }
    }
    factors
}

/// The α_f form of a triggered component under the scenario's completion
/// map. Active brain states are conscious when the source continues the
/// reference state and ready otherwise.
pub(crate) fn completion_target(
    c: &Component,
    cat: CatCompletion,
    continues_reference: bool,
) -> Vec<SubsystemFactor> {
    let active = if continues_reference {
        BrainStatus::Conscious
    } else {
        BrainStatus::Ready
    };
    let mut factors: Vec<SubsystemFactor> = c
        .factors()
        .iter()
        .map(|f| match f {
            SubsystemFactor::Device(_) => SubsystemFactor::Device(Device::Done),
            SubsystemFactor::Indicator(i) => {
                let mut i = *i;
                i.level = IndicatorLevel::Complete;
                SubsystemFactor::Indicator(i)
            }
            other => other.clone(),
        })
        .collect();
    for f in factors.iter_mut() {
        if let SubsystemFactor::Brain(b) = f {
            if b.role != AgentRole::Cat {
                continue;
            }
            match cat {
                CatCompletion::Keep => {}
                CatCompletion::PutToSleep => {
                    b.awareness = "U".into();
                    b.status = BrainStatus::Unconscious;
                }
                CatCompletion::Wake => {
                    b.awareness = "C".into();
                    if b.status != BrainStatus::Conscious {
                        b.status = active;
                    }
                }
            }
        }
    }
    let snapshot = factors.clone();
    for f in factors.iter_mut() {
        if let SubsystemFactor::Brain(b) = f {
            if b.role == AgentRole::Observer && b.status.is_active() {
                b.awareness = observer_awareness(&snapshot, false);
            }
        }
    }
    factors
}

/// A parallel ready row for `c`: the agent's pending state becomes a ready
/// brain state, at zero weight.
pub(crate) fn twin_target(
    c: &Component,
    agent: &crate::state::AgentId,
    kind: ResolutionKind,
) -> Vec<SubsystemFactor> {
    let gated = contains_ready(c);
    let awareness = match kind {
        ResolutionKind::Observe => observer_awareness(c.factors(), gated),
        ResolutionKind::Wake => "C".to_string(),
    };
    c.factors()
        .iter()
        .map(|f| match f {
            SubsystemFactor::Device(Device::Pulse(p)) => {
                SubsystemFactor::Device(Device::Pulse(DevicePulse::empty(p.len())))
            }
            SubsystemFactor::Brain(b) if &b.agent == agent && kind.pending(b) => {
                let mut b = b.clone();
                b.status = BrainStatus::Ready;
                b.awareness = awareness.clone();
                SubsystemFactor::Brain(b)
            }
            other => other.clone(),
        })
        .collect()
}

fn has_pending(c: &Component, agent: &crate::state::AgentId, kind: ResolutionKind) -> bool {
    c.brain(agent).is_some_and(|b| kind.pending(b))
}

fn decays(c: &Component, g: &StateGraph) -> bool {
    c.detector() == Some(false)
        && matches!(c.device(), Some(Device::Idle))
        && g.cutoff.is_none_or(|cut| g.time < cut)
}

fn find_or_create(
    g: &mut StateGraph,
    factors: Vec<SubsystemFactor>,
    lineage: Option<Lineage>,
) -> (ComponentId, bool) {
    if let Some(c) = g.components.iter().find(|c| c.same_labels(&factors)) {
        return (c.id(), false);
    }
    let c = crate::state::make_component(factors, 0.0)
        .expect("target factors derive from a valid component");
    let lineage = lineage.unwrap_or_else(|| g.fresh_lineage());
    let mut c = c;
    c.lineage = lineage;
    (g.insert_with_lineage(c), true)
}

/// Creates any missing zero-weight targets and rebuilds the route table.
/// Must run after every structural change to the graph.
pub(crate) fn refresh(g: &mut StateGraph) -> Vec<ComponentId> {
    let mut created = Vec::new();
    let mut edges = Vec::new();
    let mut blocked = Vec::new();
    let mut i = 0;
    while i < g.components.len() {
        let c = g.components[i].clone();
        i += 1;
        let from = c.id();
        if contains_ready(&c) {
            if decays(&c, g) {
                blocked.push(BlockedEdge {
                    from,
                    kind: EdgeKind::Primary,
                });
            }
            if c.pulse().is_some() {
                blocked.push(BlockedEdge {
                    from,
                    kind: EdgeKind::Advect,
                });
            }
            for r in &g.resolutions {
                if has_pending(&c, &r.agent, r.kind) {
                    blocked.push(BlockedEdge {
                        from,
                        kind: EdgeKind::Vertical,
                    });
                }
            }
            continue;
        }
        if decays(&c, g) {
            let target = decay_target(&c, g.bins);
            let discontinuous = factors_discontinuous(c.factors(), &target);
            let lineage = if discontinuous {
                None
            } else {
                Some(c.lineage())
            };
            let (to, new) = find_or_create(g, target, lineage);
            if new {
                created.push(to);
            }
            edges.push(Route {
                from,
                to,
                kind: EdgeKind::Primary,
            });
        }
        if c.pulse().is_some() {
            let target = completion_target(&c, g.completion.cat, c.lineage() == g.reference);
            let (to, new) = find_or_create(g, target, Some(c.lineage()));
            if new {
                created.push(to);
            }
            edges.push(Route {
                from,
                to,
                kind: EdgeKind::Advect,
            });
        }
        let resolutions = g.resolutions.clone();
        for r in &resolutions {
            if has_pending(&c, &r.agent, r.kind) {
                let target = twin_target(&c, &r.agent, r.kind);
                let (to, new) = find_or_create(g, target, None);
                if new {
                    created.push(to);
                }
                edges.push(Route {
                    from,
                    to,
                    kind: EdgeKind::Vertical,
                });
            }
        }
    }
    g.routes = Routes { edges, blocked };
    created
}

/// Assembles every current for the step starting at `g.time()`, with
/// gating already applied: no edge leaves a ready-containing component.
pub fn step_currents(g: &StateGraph, ctx: &StepContext<'_>) -> CurrentLedger {
    let dt = ctx.dt;
    let t = g.time;
    let lambda = ctx.params.decay_rate();
    let kappa = ctx.params.phys_rate;
    let decay_span = match g.cutoff {
        Some(cut) => (cut - t).clamp(0.0, dt),
        None => dt,
    };

    let mut ledger = CurrentLedger {
        dt,
        emitting_weight: g.emitting_weight(),
        ..Default::default()
    };
    ledger.blocked = g
        .routes
        .blocked
        .iter()
        .filter(|b| b.kind != EdgeKind::Primary || decay_span > 0.0)
        .copied()
        .collect();

    for c in g.components.iter() {
        let from = c.id();
        let mut primary = None;
        let mut vertical: Vec<ComponentId> = Vec::new();
        for r in g.routes.out_of(from) {
            match r.kind {
                EdgeKind::Primary => primary = Some(r.to),
                EdgeKind::Advect => {}
                EdgeKind::Vertical => vertical.push(r.to),
            }
        }
        if primary.is_none() && vertical.is_empty() {
            continue;
        }
        debug_assert!(!contains_ready(c));
        let vertical_rate = kappa * vertical.len() as f64;

        match c.pulse() {
            None => {
                let w = c.weight();
                if w <= 0.0 {
                    continue;
                }
                let decay_rate = if primary.is_some() { lambda } else { 0.0 };
                let (decayed, vert) =
                    competing_outflow(w, decay_rate, decay_span, vertical_rate, dt);
                if let Some(to) = primary {
                    if decayed > 0.0 {
                        ledger.transfers.push(Transfer {
                            from,
                            to,
                            kind: EdgeKind::Primary,
                            amount: decayed,
                            bins: None,
                        });
                    }
                }
                if vert > 0.0 {
                    let share = vert / vertical.len() as f64;
                    for &to in &vertical {
                        ledger.transfers.push(Transfer {
                            from,
                            to,
                            kind: EdgeKind::Vertical,
                            amount: share,
                            bins: None,
                        });
                    }
                }
            }
            Some(pulse) => {
                if !vertical.is_empty() && pulse.mass() > 0.0 {
                    let lost = -(-vertical_rate * dt).exp_m1();
                    let per_route = 1.0 / vertical.len() as f64;
                    let bins: Vec<f64> = pulse.bins().map(|m| m * lost * per_route).collect();
                    let amount: f64 = bins.iter().sum();
                    for &to in &vertical {
                        ledger.transfers.push(Transfer {
                            from,
                            to,
                            kind: EdgeKind::Vertical,
                            amount,
                            bins: Some(bins.clone()),
                        });
                    }
                }
            }
        }
    }

    // Whatever sits in the last bin after this step's rate transfers
    // leaves the pulse when it shifts.
    if ctx.shift {
        for r in g.routes.edges.iter().filter(|r| r.kind == EdgeKind::Advect) {
            let src = g.get(r.from).expect("route source is live");
            let pulse = src.pulse().expect("advect routes start at a pulse");
            let last = pulse.len() - 1;
            let mut exit = pulse.bin(last);
            for tr in ledger.transfers.iter() {
                if tr.from == r.from {
                    if let Some(bins) = &tr.bins {
                        exit -= bins[last];
                    }
                }
                if tr.to == r.from && tr.kind == EdgeKind::Primary && g.pulse_width > last {
                    exit += tr.amount / g.pulse_width.min(pulse.len()) as f64;
                }
            }
            let exit = exit.max(0.0);
            if exit > 0.0 {
                ledger.transfers.push(Transfer {
                    from: r.from,
                    to: r.to,
                    kind: EdgeKind::Advect,
                    amount: exit,
                    bins: None,
                });
            }
        }
    }

    let mut net: Vec<(ComponentId, f64)> = Vec::new();
    let mut bump = |id: ComponentId, v: f64| match net.iter_mut().find(|(k, _)| *k == id) {
        Some((_, x)) => *x += v,
        None => net.push((id, v)),
    };
    for tr in &ledger.transfers {
        bump(tr.to, tr.amount);
        bump(tr.from, -tr.amount);
    }
    net.sort_by_key(|(id, _)| *id);
    ledger.inflow = net
        .into_iter()
        .filter(|(_, v)| *v > 0.0)
        .map(|(id, v)| Inflow {
            id,
            current: v / dt,
            ready: g.get(id).is_some_and(contains_ready),
        })
        .collect();
    ledger
}

/// Exact outflow of weight `w` under a decay channel active for the first
/// `decay_span` of the step and a vertical channel active throughout.
/// Returns `(decayed, vertical)`.
fn competing_outflow(
    w: f64,
    decay_rate: f64,
    decay_span: Time,
    vertical_rate: f64,
    dt: Time,
) -> (f64, f64) {
    let r1 = decay_rate + vertical_rate;
    let (mut decayed, mut vert, mut w1) = (0.0, 0.0, w);
    if decay_span > 0.0 && r1 > 0.0 {
        let out = -w * (-r1 * decay_span).exp_m1();
        decayed = out * decay_rate / r1;
        vert = out - decayed;
        w1 = w - out;
    }
    let rest = if decay_span > 0.0 && r1 > 0.0 {
        dt - decay_span
    } else {
        dt
    };
    if vertical_rate > 0.0 && rest > 0.0 {
        vert += -w1 * (-vertical_rate * rest).exp_m1();
    }
    (decayed, vert)
}

/// Moves the planned weight and, on shift steps, advances every ungated
/// pulse one bin.
pub(crate) fn apply_ledger(g: &mut StateGraph, ledger: &CurrentLedger, ctx: &StepContext<'_>) {
    let width = g.pulse_width;
    for tr in &ledger.transfers {
        if tr.kind == EdgeKind::Advect {
            continue;
        }
        let fi = g.index_of(tr.from).expect("transfer source is live");
        let ti = g.index_of(tr.to).expect("transfer target is live");
        {
            let src = &mut g.components[fi];
            match (src.pulse_mut(), &tr.bins) {
                (Some(p), Some(bins)) => {
                    for (i, m) in bins.iter().enumerate() {
                        let b = p.bin_mut(i);
                        *b = (*b - m).max(0.0);
                    }
                }
                (Some(_), None) => unreachable!("pulse sources move mass bin by bin"),
                (None, _) => {
                    src.add_weight(-tr.amount);
                    if src.weight() < 0.0 {
                        src.add_weight(-src.weight());
                    }
                }
            }
        }
        let dst = &mut g.components[ti];
        match (dst.pulse_mut(), &tr.bins) {
            (Some(p), Some(bins)) => {
                for (i, m) in bins.iter().enumerate() {
                    *p.bin_mut(i) += m;
                }
            }
            (Some(p), None) => p.inject(width, tr.amount),
            (None, _) => dst.add_weight(tr.amount),
        }
    }
    if ctx.shift {
        let advects: Vec<(usize, usize)> = g
            .routes
            .edges
            .iter()
            .filter(|r| r.kind == EdgeKind::Advect)
            .map(|r| (g.index_of(r.from).unwrap(), g.index_of(r.to).unwrap()))
            .collect();
        for (fi, ti) in advects {
            let (src, dst) = pair_mut(&mut g.components, fi, ti);
            advance_device_pulse(src, dst).expect("routes never leave a gated component");
        }
    }
}

fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (l, r) = v.split_at_mut(b);
        (&mut l[a], &mut r[0])
    } else {
        let (l, r) = v.split_at_mut(a);
        (&mut r[0], &mut l[b])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{make_component, AgentId, BrainToken, CompletionMap};

    fn params() -> DynamicsParams {
        DynamicsParams::new(1.0, 0.3)
    }

    #[test]
    fn decay_current_at_origin_matches_finite_difference() {
        // Oracle: forward difference of w(t) = 2^-t at t = 0.
        let h = 1e-6;
        let fd = (1.0 - 2f64.powf(-h)) / h;
        let j = decay_current(0.0, 1.0, &params());
        assert!((j - fd).abs() < 1e-6, "{j} vs {fd}");
        assert!((j - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn decay_current_cut_off_and_massless() {
        let p = params();
        assert_eq!(decay_current(1.0, 0.5, &p), 0.0);
        assert_eq!(decay_current(3.0, 0.5, &p), 0.0);
        assert_eq!(decay_current(0.2, 0.0, &p), 0.0);
    }

    #[test]
    fn physiological_current_profile() {
        let mut p = params();
        p.phys_rate = 10.0;
        assert_eq!(physiological_current(0.1, 0.2, 0.5, &p), 0.0);
        assert_eq!(physiological_current(0.2, 0.2, 0.5, &p), 5.0);
        // Quadrature of the relaxation w' = -κw from w = 0.5 reaches 0.5.
        let (mut w, mut total, dt) = (0.5, 0.0, 1e-5);
        for _ in 0..300_000 {
            let j = physiological_current(1.0, 0.2, w, &p);
            total += j * dt;
            w -= j * dt;
        }
        assert!((total - 0.5).abs() < 1e-6, "{total}");
    }

    #[test]
    fn grid_locks_to_bins() {
        let p = params();
        let g = p.grid(false);
        assert_eq!(g.steps_per_bin, 1);
        assert!((g.dt - 0.003).abs() < 1e-15);
        let g = p.grid(true);
        assert_eq!(g.steps_per_bin, 3);
        let mut p2 = params();
        p2.dt = Some(0.0007);
        let g = p2.grid(false);
        assert_eq!(g.steps_per_bin, 5);
        assert!(g.dt <= 0.0007);
    }

    fn triggered(bins: Vec<f64>) -> Component {
        let w: f64 = bins.iter().sum();
        make_component(
            vec![
                SubsystemFactor::detector(true),
                SubsystemFactor::Device(Device::Pulse(DevicePulse::from_density(bins))),
                SubsystemFactor::indicator(IndicatorLevel::Pending),
            ],
            w,
        )
        .unwrap()
    }

    fn done() -> Component {
        make_component(
            vec![
                SubsystemFactor::detector(true),
                SubsystemFactor::Device(Device::Done),
                SubsystemFactor::indicator(IndicatorLevel::Complete),
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn last_bin_moves_to_completed_component() {
        let mut c = triggered(vec![0.0, 0.0, 0.5]);
        let mut d = done();
        let moved = advance_device_pulse(&mut c, &mut d).unwrap();
        assert_eq!(moved, 0.5);
        assert_eq!(d.weight(), 0.5);
        assert_eq!(c.weight(), 0.0);
    }

    #[test]
    fn empty_pulse_is_unchanged() {
        let mut c = triggered(vec![0.0; 4]);
        let before = c.clone();
        let mut d = done();
        advance_device_pulse(&mut c, &mut d).unwrap();
        assert_eq!(c, before);
        assert_eq!(d.weight(), 0.0);
    }

    #[test]
    fn gated_pulse_refuses_to_advance() {
        let mut c = make_component(
            vec![
                SubsystemFactor::detector(true),
                SubsystemFactor::Device(Device::Pulse(DevicePulse::impulse(4, 0.2))),
                SubsystemFactor::Brain(BrainToken::new(
                    AgentId::new("cat"),
                    AgentRole::Cat,
                    "C0",
                    BrainStatus::Ready,
                )),
            ],
            0.2,
        )
        .unwrap();
        let mut d = done();
        assert!(matches!(
            advance_device_pulse(&mut c, &mut d),
            Err(DynamicsError::GatedComponent(_))
        ));
    }

    #[test]
    fn completed_weight_waits_for_transit_time() {
        // Inject once at α₀, then step the apparatus: nothing reaches α_f
        // before K shifts, i.e. before T has elapsed.
        let k = 10;
        let mut g = StateGraph::new(
            k,
            1,
            CompletionMap {
                cat: CatCompletion::Keep,
            },
        );
        let mut c = triggered(vec![0.0; k]);
        c.pulse_mut().unwrap().inject(1, 0.25);
        g.insert(c);
        refresh(&mut g);
        let p = DynamicsParams {
            bins: k,
            ..DynamicsParams::new(1.0, 0.3)
        };
        let grid = p.grid(false);
        let done_id = g.routes.edges[0].to;
        for step in 0..(k as u64) {
            let ctx = StepContext {
                params: &p,
                dt: grid.dt,
                shift: grid.shifts_after(step),
            };
            assert_eq!(g.get(done_id).unwrap().weight(), 0.0, "step {step}");
            let l = step_currents(&g, &ctx);
            apply_ledger(&mut g, &l, &ctx);
            g.time = grid.time_of(step + 1);
        }
        assert!((g.time - 0.3).abs() < 1e-12);
        assert_eq!(g.get(done_id).unwrap().weight(), 0.25);
    }

    #[test]
    fn competing_outflow_is_exact() {
        let (d, v) = competing_outflow(1.0, 0.7, 0.01, 0.0, 0.01);
        assert!((d - (1.0 - (-0.007f64).exp())).abs() < 1e-15);
        assert_eq!(v, 0.0);
        let (d, v) = competing_outflow(0.6, 1.0, 0.004, 3.0, 0.01);
        let total = 0.6 * (1.0 - (-(4.0 * 0.004) - 3.0 * 0.006f64).exp());
        assert!((d + v - total).abs() < 1e-15);
    }
}
