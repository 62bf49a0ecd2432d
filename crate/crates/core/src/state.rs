//! Component-superposition data model.
//!
//! A [`StateGraph`] is a set of [`Component`]s, each an ordered product of
//! [`SubsystemFactor`]s carrying a square modulus (its weight). Nothing in
//! here knows about amplitudes or phases: every dynamical quantity in the
//! simulator is a weight or a rate of change of a weight.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Simulation time, in the same units as the half-life.
pub type Time = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId(pub u32);

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// History class of a component. A classical (arrow) progression keeps
/// the lineage of its source; a discontinuous (plus) change starts a new
/// one. Two records with the same lineage are one component seen at two
/// different times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lineage(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(name: impl Into<String>) -> Self {
        AgentId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentRole {
    Cat,
    Observer,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Cat => "cat",
            AgentRole::Observer => "observer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BrainStatus {
    /// Observer still in the wings, independent of the apparatus.
    External,
    /// Inactive, about to become active.
    Brink,
    /// Not conscious, but becomes conscious if its component is chosen.
    Ready,
    Conscious,
    Unconscious,
}

impl BrainStatus {
    pub fn is_active(self) -> bool {
        matches!(self, BrainStatus::Ready | BrainStatus::Conscious)
    }

    /// Whether a single token may move from `self` to `next`.
    pub fn may_become(self, next: BrainStatus) -> bool {
        use BrainStatus::*;
        self == next
            || matches!(
                (self, next),
                (External, Brink)
                    | (Brink, Ready)
                    | (Brink, Conscious)
                    | (Ready, Conscious)
                    | (Conscious, Unconscious)
                    | (Unconscious, Ready)
                    | (Unconscious, Conscious)
            )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainToken {
    pub agent: AgentId,
    pub role: AgentRole,
    pub awareness: String,
    pub status: BrainStatus,
}

impl BrainToken {
    pub fn new(
        agent: AgentId,
        role: AgentRole,
        awareness: impl Into<String>,
        status: BrainStatus,
    ) -> Self {
        BrainToken {
            agent,
            role,
            awareness: awareness.into(),
            status,
        }
    }

    /// The observer in the wings, `⊗X`.
    pub fn external(agent: AgentId) -> Self {
        BrainToken::new(agent, AgentRole::Observer, "X", BrainStatus::External)
    }

    fn body(&self) -> String {
        match (self.role, self.status) {
            (_, BrainStatus::External) => "(X)".to_string(),
            (_, BrainStatus::Brink) => "Bb".to_string(),
            (AgentRole::Observer, _) => format!("B{}", self.awareness),
            (AgentRole::Cat, _) => self.awareness.clone(),
        }
    }
}

impl fmt::Display for BrainToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.status == BrainStatus::Ready {
            write!(f, "_{}", self.body())
        } else {
            f.write_str(&self.body())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorLevel {
    /// Device has not completed its task.
    Pending,
    Complete,
}

/// Bare indicator `i0`/`i1`, or `I0`/`I1` once a look has coupled it to an
/// observer's low-level physiology.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Indicator {
    pub level: IndicatorLevel,
    pub engaged: bool,
}

impl Indicator {
    pub fn digit(self) -> char {
        match self.level {
            IndicatorLevel::Pending => '0',
            IndicatorLevel::Complete => '1',
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let letter = if self.engaged { 'I' } else { 'i' };
        write!(f, "{letter}{}", self.digit())
    }
}

/// Probability mass of a triggered device, binned over `[α₀, α_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePulse {
    bins: VecDeque<f64>,
}

impl DevicePulse {
    pub fn empty(bins: usize) -> Self {
        assert!(bins > 0, "a pulse needs at least one bin");
        DevicePulse {
            bins: VecDeque::from(vec![0.0; bins]),
        }
    }

    pub fn from_density(density: Vec<f64>) -> Self {
        assert!(!density.is_empty(), "a pulse needs at least one bin");
        DevicePulse {
            bins: VecDeque::from(density),
        }
    }

    /// All of `mass` sitting in bin 0, at α₀.
    pub fn impulse(bins: usize, mass: f64) -> Self {
        let mut p = DevicePulse::empty(bins);
        p.bins[0] = mass;
        p
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.iter().all(|&m| m == 0.0)
    }

    pub fn mass(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn bin(&self, i: usize) -> f64 {
        self.bins[i]
    }

    pub fn bins(&self) -> impl Iterator<Item = f64> + '_ {
        self.bins.iter().copied()
    }

    pub fn bin_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.bins[i]
    }

    /// Spread `amount` evenly over the first `width` bins.
    pub fn inject(&mut self, width: usize, amount: f64) {
        let width = width.clamp(1, self.bins.len());
        let share = amount / width as f64;
        for b in self.bins.iter_mut().take(width) {
            *b += share;
        }
    }

    /// Move every bin one step toward α_f and return the mass that left
    /// the last bin.
    pub fn shift(&mut self) -> f64 {
        let exit = self.bins.pop_back().unwrap_or(0.0);
        self.bins.push_front(0.0);
        exit
    }

    pub fn scale(&mut self, factor: f64) {
        for b in self.bins.iter_mut() {
            *b *= factor;
        }
    }

    fn is_nonnegative(&self) -> bool {
        self.bins.iter().all(|&m| m >= 0.0 && m.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Device {
    /// Not triggered: sharply at α₀.
    Idle,
    Pulse(DevicePulse),
    /// Task complete: at α_f.
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceStage {
    Start,
    Transit,
    End,
}

impl Device {
    pub fn stage(&self) -> DeviceStage {
        match self {
            Device::Idle => DeviceStage::Start,
            Device::Pulse(_) => DeviceStage::Transit,
            Device::Done => DeviceStage::End,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalClock {
    pub rung_at: Option<Time>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubsystemFactor {
    /// `d0` (no capture yet) or `d1` (captured).
    Detector(bool),
    Device(Device),
    Indicator(Indicator),
    Brain(BrainToken),
    InternalClock(InternalClock),
}

impl SubsystemFactor {
    pub fn detector(captured: bool) -> Self {
        SubsystemFactor::Detector(captured)
    }

    pub fn indicator(level: IndicatorLevel) -> Self {
        SubsystemFactor::Indicator(Indicator {
            level,
            engaged: false,
        })
    }

    /// Discrete-label equality: everything except the pulse density.
    pub fn same_label(&self, other: &SubsystemFactor) -> bool {
        use SubsystemFactor::*;
        match (self, other) {
            (Detector(a), Detector(b)) => a == b,
            (Device(a), Device(b)) => a.stage() == b.stage(),
            (Indicator(a), Indicator(b)) => a == b,
            (Brain(a), Brain(b)) => {
                a.agent == b.agent && a.awareness == b.awareness && a.status == b.status
            }
            (InternalClock(a), InternalClock(b)) => a.rung_at.is_some() == b.rung_at.is_some(),
            _ => false,
        }
    }
}

impl fmt::Display for SubsystemFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubsystemFactor::Detector(captured) => write!(f, "d{}", u8::from(*captured)),
            SubsystemFactor::Device(Device::Idle) => f.write_str("M(a0)"),
            SubsystemFactor::Device(Device::Pulse(_)) => f.write_str("M(a)"),
            SubsystemFactor::Device(Device::Done) => f.write_str("M(af)"),
            SubsystemFactor::Indicator(i) => write!(f, "{i}"),
            SubsystemFactor::Brain(b) => write!(f, "{b}"),
            SubsystemFactor::InternalClock(c) => match c.rung_at {
                None => f.write_str("N(t)"),
                Some(_) => f.write_str("N(tff)"),
            },
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("agent `{0}` has more than one brain factor in a component")]
    DuplicateAgent(AgentId),
    #[error("weight {0} is outside [0, 1]")]
    BadWeight(f64),
    #[error("a component needs at least one factor")]
    NoFactors,
    #[error("device pulse has a negative or non-finite bin")]
    NegativeDensity,
    #[error("a component carries at most one device pulse")]
    DuplicateDevice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub(crate) id: ComponentId,
    pub(crate) factors: Vec<SubsystemFactor>,
    /// Weight of components without a pulse; pulse components keep theirs
    /// in the bins.
    scalar_weight: f64,
    pub(crate) created_at: Time,
    pub(crate) lineage: Lineage,
}

/// Builds a validated component. The id is provisional until the
/// component is inserted into a [`StateGraph`].
///
/// A device pulse is rescaled so its bins sum to `weight`; an all-zero
/// pulse with positive weight becomes an impulse at α₀.
pub fn make_component(factors: Vec<SubsystemFactor>, weight: f64) -> Result<Component, StateError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(StateError::BadWeight(weight));
    }
    if factors.is_empty() {
        return Err(StateError::NoFactors);
    }
    let mut factors = factors;
    let mut seen: Vec<&AgentId> = Vec::new();
    let mut devices = 0;
    for f in &factors {
        match f {
            SubsystemFactor::Brain(b) => {
                if seen.contains(&&b.agent) {
                    return Err(StateError::DuplicateAgent(b.agent.clone()));
                }
                seen.push(&b.agent);
            }
            SubsystemFactor::Device(d) => {
                devices += 1;
                if let Device::Pulse(p) = d {
                    if !p.is_nonnegative() {
                        return Err(StateError::NegativeDensity);
                    }
                }
            }
            _ => {}
        }
    }
    if devices > 1 {
        return Err(StateError::DuplicateDevice);
    }
    let mut scalar_weight = weight;
    for f in factors.iter_mut() {
        if let SubsystemFactor::Device(Device::Pulse(p)) = f {
            let mass = p.mass();
            if mass > 0.0 {
                p.scale(weight / mass);
            } else if weight > 0.0 {
                *p = DevicePulse::impulse(p.len(), weight);
            }
            scalar_weight = 0.0;
        }
    }
    Ok(Component {
        id: ComponentId(0),
        factors,
        scalar_weight,
        created_at: 0.0,
        lineage: Lineage(0),
    })
}

impl Component {
    pub fn id(&self) -> ComponentId {
        self.id
    }

    pub fn factors(&self) -> &[SubsystemFactor] {
        &self.factors
    }

    pub fn created_at(&self) -> Time {
        self.created_at
    }

    pub fn lineage(&self) -> Lineage {
        self.lineage
    }

    pub fn weight(&self) -> f64 {
        match self.pulse() {
            Some(p) => p.mass(),
            None => self.scalar_weight,
        }
    }

    pub(crate) fn add_weight(&mut self, amount: f64) {
        debug_assert!(self.pulse().is_none(), "pulse weight lives in its bins");
        self.scalar_weight += amount;
    }

    pub(crate) fn scale_weight(&mut self, factor: f64) {
        match self.pulse_mut() {
            Some(p) => p.scale(factor),
            None => self.scalar_weight *= factor,
        }
    }

    pub fn pulse(&self) -> Option<&DevicePulse> {
        self.factors.iter().find_map(|f| match f {
            SubsystemFactor::Device(Device::Pulse(p)) => Some(p),
            _ => None,
        })
    }

    pub(crate) fn pulse_mut(&mut self) -> Option<&mut DevicePulse> {
        self.factors.iter_mut().find_map(|f| match f {
            SubsystemFactor::Device(Device::Pulse(p)) => Some(p),
            _ => None,
        })
    }

    pub fn device(&self) -> Option<&Device> {
        self.factors.iter().find_map(|f| match f {
            SubsystemFactor::Device(d) => Some(d),
            _ => None,
        })
    }

    /// `Some(true)` for d1, `Some(false)` for d0.
    pub fn detector(&self) -> Option<bool> {
        self.factors.iter().find_map(|f| match f {
            SubsystemFactor::Detector(d) => Some(*d),
            _ => None,
        })
    }

    pub fn indicator(&self) -> Option<Indicator> {
        self.factors.iter().find_map(|f| match f {
            SubsystemFactor::Indicator(i) => Some(*i),
            _ => None,
        })
    }

    pub fn brains(&self) -> impl Iterator<Item = &BrainToken> {
        self.factors.iter().filter_map(|f| match f {
            SubsystemFactor::Brain(b) => Some(b),
            _ => None,
        })
    }

    pub(crate) fn brains_mut(&mut self) -> impl Iterator<Item = &mut BrainToken> {
        self.factors.iter_mut().filter_map(|f| match f {
            SubsystemFactor::Brain(b) => Some(b),
            _ => None,
        })
    }

    pub fn brain(&self, agent: &AgentId) -> Option<&BrainToken> {
        self.brains().find(|b| &b.agent == agent)
    }

    pub fn brain_of_role(&self, role: AgentRole) -> Option<&BrainToken> {
        self.brains().find(|b| b.role == role)
    }

    pub fn clock(&self) -> Option<InternalClock> {
        self.factors.iter().find_map(|f| match f {
            SubsystemFactor::InternalClock(c) => Some(*c),
            _ => None,
        })
    }

    pub fn same_labels(&self, factors: &[SubsystemFactor]) -> bool {
        self.factors.len() == factors.len()
            && self
                .factors
                .iter()
                .zip(factors)
                .all(|(a, b)| a.same_label(b))
    }

    pub fn label(&self) -> String {
        label_of(&self.factors)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn label_of(factors: &[SubsystemFactor]) -> String {
    factors
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// True iff any brain factor is ready.
pub fn contains_ready(c: &Component) -> bool {
    c.brains().any(|b| b.status == BrainStatus::Ready)
}

/// True iff the two components differ in a discrete label: detector value,
/// indicator level, an agent's awareness, or the internal-clock ring.
/// Where α sits inside a device pulse never matters.
pub fn is_discontinuous(a: &Component, b: &Component) -> bool {
    factors_discontinuous(&a.factors, &b.factors)
}

pub(crate) fn factors_discontinuous(a: &[SubsystemFactor], b: &[SubsystemFactor]) -> bool {
    let detector = |fs: &[SubsystemFactor]| {
        fs.iter().find_map(|f| match f {
            SubsystemFactor::Detector(d) => Some(*d),
            _ => None,
        })
    };
    let indicator = |fs: &[SubsystemFactor]| {
        fs.iter().find_map(|f| match f {
            SubsystemFactor::Indicator(i) => Some(*i),
            _ => None,
        })
    };
    let rung = |fs: &[SubsystemFactor]| {
        fs.iter().find_map(|f| match f {
            SubsystemFactor::InternalClock(c) => Some(c.rung_at.is_some()),
            _ => None,
        })
    };
    if detector(a) != detector(b) || indicator(a) != indicator(b) || rung(a) != rung(b) {
        return true;
    }
    let brains = |fs: &[SubsystemFactor]| -> Vec<(AgentId, String)> {
        let mut v: Vec<_> = fs
            .iter()
            .filter_map(|f| match f {
                SubsystemFactor::Brain(t) => Some((t.agent.clone(), t.awareness.clone())),
                _ => None,
            })
            .collect();
        v.sort();
        v
    };
    brains(a) != brains(b)
}

/// Advance of an agent's pending brain state that is still being resolved
/// by branching into ready twins.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub agent: AgentId,
    pub kind: ResolutionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolutionKind {
    /// The observer's brink state is resolving (`B^b`).
    Observe,
    /// The cat's internal clock has rung and it is waking (`U → C`).
    Wake,
}

impl ResolutionKind {
    pub fn pending(self, token: &BrainToken) -> bool {
        match self {
            ResolutionKind::Observe => token.status == BrainStatus::Brink,
            ResolutionKind::Wake => token.status == BrainStatus::Unconscious,
        }
    }
}

/// What a finished device does to the rest of a component when mass
/// reaches α_f.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatCompletion {
    /// No cat, or the cat is untouched.
    Keep,
    /// The anesthetic reaches the cat: `C_α → U`.
    PutToSleep,
    /// The alarm rings: `U → C`.
    Wake,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompletionMap {
    pub cat: CatCompletion,
}

/// The live superposition of one trajectory.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub(crate) components: Vec<Component>,
    pub(crate) time: Time,
    pub(crate) next_id: u32,
    pub(crate) next_lineage: u32,
    /// Lineage of the state every other component is compared with to
    /// decide readiness: the initial state, then each reduction survivor.
    pub(crate) reference: Lineage,
    pub(crate) bins: usize,
    pub(crate) pulse_width: usize,
    pub(crate) cutoff: Option<Time>,
    pub(crate) completion: CompletionMap,
    pub(crate) resolutions: Vec<Resolution>,
    /// Agents whose pending state has been due for resolution.
    pub(crate) resolved_agents: Vec<(AgentId, ResolutionKind)>,
    pub(crate) routes: crate::dynamics::Routes,
}

impl StateGraph {
    pub fn new(bins: usize, pulse_width: usize, completion: CompletionMap) -> Self {
        StateGraph {
            components: Vec::new(),
            time: 0.0,
            next_id: 0,
            next_lineage: 1,
            reference: Lineage(0),
            bins,
            pulse_width,
            cutoff: None,
            completion,
            resolutions: Vec::new(),
            resolved_agents: Vec::new(),
            routes: Default::default(),
        }
    }

    /// Adds a component with the reference lineage and a fresh id.
    pub fn insert(&mut self, mut c: Component) -> ComponentId {
        c.lineage = self.reference;
        self.insert_with_lineage(c)
    }

    pub(crate) fn insert_with_lineage(&mut self, mut c: Component) -> ComponentId {
        let id = ComponentId(self.next_id);
        self.next_id += 1;
        c.id = id;
        c.created_at = self.time;
        self.components.push(c);
        id
    }

    pub(crate) fn fresh_lineage(&mut self) -> Lineage {
        let l = Lineage(self.next_lineage);
        self.next_lineage += 1;
        l
    }

    pub fn time(&self) -> Time {
        self.time
    }

    pub fn set_cutoff(&mut self, cutoff: Option<Time>) {
        self.cutoff = cutoff;
    }

    pub fn cutoff(&self) -> Option<Time> {
        self.cutoff
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn pulse_width(&self) -> usize {
        self.pulse_width
    }

    pub fn completion(&self) -> CompletionMap {
        self.completion
    }

    pub fn reference(&self) -> Lineage {
        self.reference
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn get(&self, id: ComponentId) -> Option<&Component> {
        self.index_of(id).map(|i| &self.components[i])
    }

    pub(crate) fn index_of(&self, id: ComponentId) -> Option<usize> {
        self.components.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn find_label(&self, label: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.label() == label)
    }

    /// Total square modulus `s` of all live components.
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(Component::weight).sum()
    }

    /// Weight of the components that can still emit current, i.e. those
    /// not entangled with a ready brain state.
    pub fn emitting_weight(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| !contains_ready(c))
            .map(Component::weight)
            .sum()
    }

    /// Edges the current graph can carry, and those gating removes.
    pub fn routes(&self) -> &crate::dynamics::Routes {
        &self.routes
    }

    pub fn resolutions(&self) -> &[Resolution] {
        &self.resolutions
    }
}
