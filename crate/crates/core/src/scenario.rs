//! The `.scn` scenario format: parsing with line/column diagnostics,
//! canonical serialization, and construction of the initial state for each
//! of the seven experiment templates.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::{refresh, DynamicsParams};
use crate::state::{
    make_component, AgentId, AgentRole, BrainStatus, BrainToken, CatCompletion, CompletionMap,
    Device, IndicatorLevel, InternalClock, StateGraph, SubsystemFactor, Time,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Version {
    ApparatusOnly,
    ApparatusObserver,
    CatV1,
    CatV1Observer,
    CatV2,
    CatV2Observer,
    CatV2NaturalWake,
}

impl Version {
    pub const ALL: [Version; 7] = [
        Version::ApparatusOnly,
        Version::ApparatusObserver,
        Version::CatV1,
        Version::CatV1Observer,
        Version::CatV2,
        Version::CatV2Observer,
        Version::CatV2NaturalWake,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Version::ApparatusOnly => "ApparatusOnly",
            Version::ApparatusObserver => "ApparatusObserver",
            Version::CatV1 => "CatV1",
            Version::CatV1Observer => "CatV1Observer",
            Version::CatV2 => "CatV2",
            Version::CatV2Observer => "CatV2Observer",
            Version::CatV2NaturalWake => "CatV2NaturalWake",
        }
    }

    pub fn has_cat(self) -> bool {
        !matches!(self, Version::ApparatusOnly | Version::ApparatusObserver)
    }

    pub fn has_observer(self) -> bool {
        matches!(
            self,
            Version::ApparatusObserver | Version::CatV1Observer | Version::CatV2Observer
        )
    }

    pub fn has_clock(self) -> bool {
        self == Version::CatV2NaturalWake
    }

    pub fn completion(self) -> CompletionMap {
        let cat = match self {
            Version::ApparatusOnly | Version::ApparatusObserver => CatCompletion::Keep,
            Version::CatV1 | Version::CatV1Observer => CatCompletion::PutToSleep,
            Version::CatV2 | Version::CatV2Observer | Version::CatV2NaturalWake => {
                CatCompletion::Wake
            }
        };
        CompletionMap { cat }
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Version {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Version::ALL.into_iter().find(|v| v.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    /// The observer looks at the detector: `i → I`, `⊗X → B^b`.
    Look(AgentId),
    /// The observer's brink state resolves.
    Observe(AgentId),
    /// The clock shuts the detector off.
    Cutoff,
    /// The cat's internal alarm clock rings.
    Ring,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Look(_) => "look",
            EventKind::Observe(_) => "observe",
            EventKind::Cutoff => "cutoff",
            EventKind::Ring => "ring",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledEvent {
    pub time: Time,
    pub kind: EventKind,
}

/// Events in time order; ties keep insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventSchedule {
    events: Vec<ScheduledEvent>,
}

impl EventSchedule {
    pub fn new(mut events: Vec<ScheduledEvent>) -> Self {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        EventSchedule { events }
    }

    pub fn events(&self) -> &[ScheduledEvent] {
        &self.events
    }

    pub fn time_of(&self, pred: impl Fn(&EventKind) -> bool) -> Option<Time> {
        self.events.iter().find(|e| pred(&e.kind)).map(|e| e.time)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Agent {
    pub id: AgentId,
    pub role: AgentRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub version: Version,
    pub params: DynamicsParams,
    pub events: EventSchedule,
    pub agents: Vec<Agent>,
}

impl Scenario {
    /// A scenario with default parameters and the event times given in
    /// absolute units.
    pub fn template(
        name: &str,
        version: Version,
        params: DynamicsParams,
        t_look: Option<Time>,
        t_ob: Option<Time>,
        t_ff: Option<Time>,
    ) -> Scenario {
        let mut agents = Vec::new();
        if version.has_cat() {
            agents.push(Agent {
                id: AgentId::new("cat"),
                role: AgentRole::Cat,
            });
        }
        if version.has_observer() {
            agents.push(Agent {
                id: AgentId::new("observer"),
                role: AgentRole::Observer,
            });
        }
        let events = schedule(&params, &agents, t_look, t_ob, t_ff);
        Scenario {
            name: name.to_string(),
            version,
            params,
            events,
            agents,
        }
    }

    pub fn observer(&self) -> Option<&Agent> {
        self.agents.iter().find(|a| a.role == AgentRole::Observer)
    }

    pub fn cat(&self) -> Option<&Agent> {
        self.agents.iter().find(|a| a.role == AgentRole::Cat)
    }

    pub fn t_look(&self) -> Option<Time> {
        self.events.time_of(|k| matches!(k, EventKind::Look(_)))
    }

    pub fn t_ob(&self) -> Option<Time> {
        self.events.time_of(|k| matches!(k, EventKind::Observe(_)))
    }

    pub fn t_ff(&self) -> Option<Time> {
        self.events.time_of(|k| matches!(k, EventKind::Ring))
    }

    /// The same scenario with every dynamics parameter kept and the ring
    /// moved to `t_ff`.
    pub fn with_ring_at(&self, t_ff: Time) -> Scenario {
        let mut sc = self.clone();
        sc.events = schedule(
            &sc.params,
            &sc.agents,
            self.t_look(),
            self.t_ob(),
            Some(t_ff),
        );
        sc
    }
}

fn schedule(
    params: &DynamicsParams,
    agents: &[Agent],
    t_look: Option<Time>,
    t_ob: Option<Time>,
    t_ff: Option<Time>,
) -> EventSchedule {
    let mut events = Vec::new();
    if let Some(obs) = agents.iter().find(|a| a.role == AgentRole::Observer) {
        if let Some(t) = t_look {
            events.push(ScheduledEvent {
                time: t,
                kind: EventKind::Look(obs.id.clone()),
            });
        }
        if let Some(t) = t_ob {
            events.push(ScheduledEvent {
                time: t,
                kind: EventKind::Observe(obs.id.clone()),
            });
        }
    }
    if let Some(t) = t_ff {
        events.push(ScheduledEvent {
            time: t,
            kind: EventKind::Ring,
        });
    }
    events.push(ScheduledEvent {
        time: params.half_life,
        kind: EventKind::Cutoff,
    });
    EventSchedule::new(events)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    Syntax,
    UnknownKey,
    DuplicateKey,
    MissingRequired,
    InvalidValue,
    OrderViolation,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::Syntax => "syntax error",
            DiagnosticKind::UnknownKey => "unknown key",
            DiagnosticKind::DuplicateKey => "duplicate key",
            DiagnosticKind::MissingRequired => "missing required",
            DiagnosticKind::InvalidValue => "invalid value",
            DiagnosticKind::OrderViolation => "order violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {}: {}",
            self.line,
            self.column,
            self.kind.as_str(),
            self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", render(.diagnostics))]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

fn render(d: &[Diagnostic]) -> String {
    d.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

impl ParseError {
    /// Kind of the first diagnostic.
    pub fn kind(&self) -> DiagnosticKind {
        self.diagnostics[0].kind
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Top,
    Params,
    Events,
    Agents,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Top => "top level",
            Section::Params => "[params]",
            Section::Events => "[events]",
            Section::Agents => "[agents]",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Section::Top => &["name", "version"],
            Section::Params => &[
                "time_unit",
                "half_life",
                "transit_time",
                "phys_rate",
                "bins",
                "pulse_width",
                "dt",
            ],
            Section::Events => &["t_look", "t_ob", "t_ff"],
            Section::Agents => &[],
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    section: Section,
    key: String,
    value: String,
    line: usize,
    key_col: usize,
    value_col: usize,
}

struct Collector {
    diagnostics: Vec<Diagnostic>,
}

impl Collector {
    fn push(&mut self, kind: DiagnosticKind, line: usize, column: usize, message: String) {
        self.diagnostics.push(Diagnostic {
            kind,
            line,
            column,
            message,
        });
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn lex(text: &str, out: &mut Collector) -> (Vec<Entry>, Vec<(Section, usize)>, usize) {
    let mut entries: Vec<Entry> = Vec::new();
    let mut headers: Vec<(Section, usize)> = Vec::new();
    let mut section = Section::Top;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = content.len() - content.trim_start().len();
        let col = raw[..lead].chars().count() + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                out.push(
                    DiagnosticKind::Syntax,
                    line,
                    col,
                    "section header is missing its closing `]`".into(),
                );
                continue;
            };
            section = match name.trim() {
                "params" => Section::Params,
                "events" => Section::Events,
                "agents" => Section::Agents,
                other => {
                    out.push(
                        DiagnosticKind::UnknownKey,
                        line,
                        col,
                        format!("unknown section `[{other}]`"),
                    );
                    continue;
                }
            };
            if headers.iter().any(|(s, _)| *s == section) {
                out.push(
                    DiagnosticKind::DuplicateKey,
                    line,
                    col,
                    format!("section {} appears twice", section.name()),
                );
            }
            headers.push((section, line));
            continue;
        }
        let Some(eq) = content.find('=') else {
            out.push(
                DiagnosticKind::Syntax,
                line,
                col,
                "expected `key = value` or a `[section]` header".into(),
            );
            continue;
        };
        let key = content[..eq].trim();
        let value = content[eq + 1..].trim();
        let after_eq = &content[eq + 1..];
        let value_lead = after_eq.len() - after_eq.trim_start().len();
        let value_col = content[..eq + 1 + value_lead].chars().count() + 1;
        if !is_identifier(key) {
            out.push(
                DiagnosticKind::Syntax,
                line,
                col,
                format!("`{key}` is not a valid key"),
            );
            continue;
        }
        if value.is_empty() {
            out.push(
                DiagnosticKind::Syntax,
                line,
                value_col,
                format!("`{key}` has no value"),
            );
            continue;
        }
        if section != Section::Agents && !section.keys().contains(&key) {
            out.push(
                DiagnosticKind::UnknownKey,
                line,
                col,
                format!("`{key}` is not a key of {}", section.name()),
            );
            continue;
        }
        if let Some(prev) = entries
            .iter()
            .find(|e| e.section == section && e.key == key)
        {
            out.push(
                DiagnosticKind::DuplicateKey,
                line,
                col,
                format!("`{key}` already set on line {}", prev.line),
            );
            continue;
        }
        entries.push(Entry {
            section,
            key: key.to_string(),
            value: value.to_string(),
            line,
            key_col: col,
            value_col,
        });
    }
    (entries, headers, last_line)
}

/// Parses and validates a scenario. Every problem found is reported, each
/// with its 1-based line and column.
pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut out = Collector {
        diagnostics: Vec::new(),
    };
    let (entries, headers, last_line) = lex(text, &mut out);
    let get = |section: Section, key: &str| {
        entries
            .iter()
            .find(|e| e.section == section && e.key == key)
    };
    let missing_at = |section: Section| -> (usize, usize) {
        match section {
            Section::Top => (1, 1),
            s => headers
                .iter()
                .find(|(h, _)| *h == s)
                .map_or((last_line + 1, 1), |&(_, l)| (l, 1)),
        }
    };

    let name = get(Section::Top, "name").map(|e| e.value.clone());
    let version = match get(Section::Top, "version") {
        None => {
            let (l, c) = missing_at(Section::Top);
            out.push(
                DiagnosticKind::MissingRequired,
                l,
                c,
                "`version` is required".into(),
            );
            None
        }
        Some(e) => match e.value.parse::<Version>() {
            Ok(v) => Some(v),
            Err(()) => {
                let all: Vec<&str> = Version::ALL.iter().map(|v| v.as_str()).collect();
                out.push(
                    DiagnosticKind::InvalidValue,
                    e.line,
                    e.value_col,
                    format!(
                        "unknown version `{}`; expected one of {}",
                        e.value,
                        all.join(", ")
                    ),
                );
                None
            }
        },
    };

    let relative = match get(Section::Params, "time_unit") {
        None => true,
        Some(e) => match e.value.as_str() {
            "half_life" => true,
            "absolute" => false,
            other => {
                out.push(
                    DiagnosticKind::InvalidValue,
                    e.line,
                    e.value_col,
                    format!("time_unit must be `half_life` or `absolute`, got `{other}`"),
                );
                true
            }
        },
    };

    let number = |section: Section, key: &str, required: bool, out: &mut Collector| match get(
        section, key,
    ) {
        None => {
            if required {
                let (l, c) = missing_at(section);
                out.push(
                    DiagnosticKind::MissingRequired,
                    l,
                    c,
                    format!("`{key}` is required in {}", section.name()),
                );
            }
            None
        }
        Some(e) => match e.value.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => Some((v, e.clone())),
            _ => {
                out.push(
                    DiagnosticKind::InvalidValue,
                    e.line,
                    e.value_col,
                    format!(
                        "`{key}` must be a positive decimal number, got `{}`",
                        e.value
                    ),
                );
                None
            }
        },
    };
    let half_life = number(Section::Params, "half_life", true, &mut out);
    let transit = number(Section::Params, "transit_time", true, &mut out);
    let phys_rate = number(Section::Params, "phys_rate", false, &mut out);
    let dt = number(Section::Params, "dt", false, &mut out);
    let t_look = number(Section::Events, "t_look", false, &mut out);
    let t_ob = number(Section::Events, "t_ob", false, &mut out);
    let t_ff = number(Section::Events, "t_ff", false, &mut out);

    let count = |key: &str, out: &mut Collector| match get(Section::Params, key) {
        None => None,
        Some(e) => match e.value.parse::<usize>() {
            Ok(v) if v > 0 => Some((v, e.clone())),
            _ => {
                out.push(
                    DiagnosticKind::InvalidValue,
                    e.line,
                    e.value_col,
                    format!("`{key}` must be a positive integer, got `{}`", e.value),
                );
                None
            }
        },
    };
    let bins = count("bins", &mut out);
    let pulse_width = count("pulse_width", &mut out);

    let mut agents: Vec<Agent> = Vec::new();
    for e in entries.iter().filter(|e| e.section == Section::Agents) {
        let role = match e.value.as_str() {
            "cat" => AgentRole::Cat,
            "observer" => AgentRole::Observer,
            other => {
                out.push(
                    DiagnosticKind::InvalidValue,
                    e.line,
                    e.value_col,
                    format!("agent role must be `cat` or `observer`, got `{other}`"),
                );
                continue;
            }
        };
        agents.push(Agent {
            id: AgentId::new(e.key.clone()),
            role,
        });
    }

    if let Some(version) = version {
        check_template(
            version,
            &agents,
            &entries,
            &headers,
            last_line,
            t_look.as_ref(),
            t_ob.as_ref(),
            t_ff.as_ref(),
            &mut out,
        );
    }
    if let (Some((look, _)), Some((ob, e))) = (&t_look, &t_ob) {
        if ob < look {
            out.push(
                DiagnosticKind::OrderViolation,
                e.line,
                e.key_col,
                format!("t_ob = {ob} precedes t_look = {look}"),
            );
        }
    }

    let mut params = None;
    if let (Some((h, _)), Some((t, _))) = (&half_life, &transit) {
        let unit = if relative { *h } else { 1.0 };
        let mut p = DynamicsParams::new(*h, t * unit);
        if let Some((k, _)) = &phys_rate {
            p.phys_rate = k / unit;
        }
        if let Some((b, _)) = &bins {
            p.bins = *b;
        }
        if let Some((w, e)) = &pulse_width {
            if *w > p.bins {
                out.push(
                    DiagnosticKind::InvalidValue,
                    e.line,
                    e.value_col,
                    format!("pulse_width {w} exceeds bins {}", p.bins),
                );
            }
            p.pulse_width = *w;
        }
        p.dt = dt.as_ref().map(|(d, _)| d * unit);
        params = Some((p, unit));
    }

    if !out.diagnostics.is_empty() {
        out.diagnostics.sort_by_key(|d| (d.line, d.column));
        return Err(ParseError {
            diagnostics: out.diagnostics,
        });
    }
    let (params, unit) = params.expect("parameters validated");
    let version = version.expect("version validated");
    let events = schedule(
        &params,
        &agents,
        t_look.map(|(v, _)| v * unit),
        t_ob.map(|(v, _)| v * unit),
        t_ff.map(|(v, _)| v * unit),
    );
    Ok(Scenario {
        name: name.unwrap_or_else(|| version.as_str().to_string()),
        version,
        params,
        events,
        agents,
    })
}

#[allow(clippy::too_many_arguments)]
fn check_template(
    version: Version,
    agents: &[Agent],
    entries: &[Entry],
    headers: &[(Section, usize)],
    last_line: usize,
    t_look: Option<&(f64, Entry)>,
    t_ob: Option<&(f64, Entry)>,
    t_ff: Option<&(f64, Entry)>,
    out: &mut Collector,
) {
    let at_section = |s: Section| {
        headers
            .iter()
            .find(|(h, _)| *h == s)
            .map_or((last_line + 1, 1), |&(_, l)| (l, 1))
    };
    let roles = |role: AgentRole| agents.iter().filter(|a| a.role == role).count();
    let need = |present: bool, wanted: bool, what: &str, s: Section, out: &mut Collector| {
        if wanted && !present {
            let (l, c) = at_section(s);
            out.push(
                DiagnosticKind::MissingRequired,
                l,
                c,
                format!("version {version} requires {what}"),
            );
        }
    };
    need(
        roles(AgentRole::Cat) > 0,
        version.has_cat(),
        "a cat agent",
        Section::Agents,
        out,
    );
    need(
        roles(AgentRole::Observer) > 0,
        version.has_observer(),
        "an observer agent",
        Section::Agents,
        out,
    );
    need(
        t_look.is_some(),
        version.has_observer(),
        "`t_look`",
        Section::Events,
        out,
    );
    need(
        t_ob.is_some(),
        version.has_observer(),
        "`t_ob`",
        Section::Events,
        out,
    );
    need(
        t_ff.is_some(),
        version.has_clock(),
        "`t_ff`",
        Section::Events,
        out,
    );

    let unexpected = |e: &Entry, what: &str, out: &mut Collector| {
        out.push(
            DiagnosticKind::InvalidValue,
            e.line,
            e.key_col,
            format!("version {version} takes no {what}"),
        );
    };
    for e in entries.iter().filter(|e| e.section == Section::Agents) {
        let allowed = match e.value.as_str() {
            "cat" => version.has_cat() && roles(AgentRole::Cat) == 1,
            "observer" => version.has_observer() && roles(AgentRole::Observer) == 1,
            _ => true,
        };
        if !allowed {
            unexpected(e, &format!("additional `{}` agent", e.value), out);
        }
    }
    for (t, observer_event) in [(t_look, true), (t_ob, true), (t_ff, false)] {
        if let Some((_, e)) = t {
            let ok = if observer_event {
                version.has_observer()
            } else {
                version.has_clock()
            };
            if !ok {
                unexpected(e, &format!("`{}`", e.key), out);
            }
        }
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

/// Canonical text form. Times and rates are written in absolute units, so
/// parsing the result reproduces the scenario exactly.
pub fn serialize_scenario(sc: &Scenario) -> String {
    let p = &sc.params;
    let mut s = String::new();
    s.push_str(&format!("name = {}\nversion = {}\n\n", sc.name, sc.version));
    s.push_str("[params]\ntime_unit = absolute\n");
    s.push_str(&format!("half_life = {}\n", fmt_num(p.half_life)));
    s.push_str(&format!("transit_time = {}\n", fmt_num(p.transit_time)));
    s.push_str(&format!("phys_rate = {}\n", fmt_num(p.phys_rate)));
    s.push_str(&format!("bins = {}\n", p.bins));
    s.push_str(&format!("pulse_width = {}\n", p.pulse_width));
    if let Some(dt) = p.dt {
        s.push_str(&format!("dt = {}\n", fmt_num(dt)));
    }
    let times = [
        ("t_look", sc.t_look()),
        ("t_ob", sc.t_ob()),
        ("t_ff", sc.t_ff()),
    ];
    if times.iter().any(|(_, t)| t.is_some()) {
        s.push_str("\n[events]\n");
        for (k, t) in times {
            if let Some(t) = t {
                s.push_str(&format!("{k} = {}\n", fmt_num(t)));
            }
        }
    }
    if !sc.agents.is_empty() {
        s.push_str("\n[agents]\n");
        for a in &sc.agents {
            s.push_str(&format!("{} = {}\n", a.id, a.role.as_str()));
        }
    }
    s
}

/// The initial superposition: a single component of weight 1, plus the
/// zero-weight components its currents will feed.
pub fn build_initial_state(sc: &Scenario) -> (StateGraph, CompletionMap) {
    let completion = sc.version.completion();
    let mut factors = vec![
        SubsystemFactor::detector(false),
        SubsystemFactor::Device(Device::Idle),
    ];
    if sc.version.has_clock() {
        factors.push(SubsystemFactor::InternalClock(InternalClock {
            rung_at: None,
        }));
    }
    match sc.version {
        Version::ApparatusOnly | Version::ApparatusObserver => {
            factors.push(SubsystemFactor::indicator(IndicatorLevel::Pending));
        }
        Version::CatV1 | Version::CatV1Observer => {
            let cat = sc.cat().expect("validated cat scenario");
            factors.push(SubsystemFactor::Brain(BrainToken::new(
                cat.id.clone(),
                AgentRole::Cat,
                "C0",
                BrainStatus::Conscious,
            )));
        }
        Version::CatV2 | Version::CatV2Observer | Version::CatV2NaturalWake => {
            let cat = sc.cat().expect("validated cat scenario");
            factors.push(SubsystemFactor::Brain(BrainToken::new(
                cat.id.clone(),
                AgentRole::Cat,
                "U",
                BrainStatus::Unconscious,
            )));
        }
    }
    if let Some(obs) = sc.observer() {
        factors.push(SubsystemFactor::Brain(BrainToken::external(obs.id.clone())));
    }
    let mut g = StateGraph::new(sc.params.bins, sc.params.pulse_width, completion);
    g.set_cutoff(Some(sc.params.half_life));
    let c = make_component(factors, 1.0).expect("template factors are valid");
    g.insert(c);
    refresh(&mut g);
    (g, completion)
}

/// The seven shipped scenarios, by file stem.
pub const FIXTURES: [(&str, &str); 7] = [
    ("apparatus", include_str!("../scenarios/apparatus.scn")),
    (
        "apparatus_observer",
        include_str!("../scenarios/apparatus_observer.scn"),
    ),
    ("cat_v1", include_str!("../scenarios/cat_v1.scn")),
    (
        "cat_v1_observer",
        include_str!("../scenarios/cat_v1_observer.scn"),
    ),
    ("cat_v2", include_str!("../scenarios/cat_v2.scn")),
    (
        "cat_v2_observer",
        include_str!("../scenarios/cat_v2_observer.scn"),
    ),
    (
        "cat_v2_natural_wake",
        include_str!("../scenarios/cat_v2_natural_wake.scn"),
    ),
];

/// Parses a shipped fixture by file stem.
pub fn fixture(stem: &str) -> Option<Scenario> {
    FIXTURES
        .iter()
        .find(|(s, _)| *s == stem)
        .map(|(_, text)| parse_scenario(text).expect("shipped fixtures parse"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cat_v1_fixture_matches_hand_built() {
        let parsed = fixture("cat_v1").unwrap();
        let built = Scenario::template(
            "cat_v1",
            Version::CatV1,
            DynamicsParams::new(1.0, 0.3),
            None,
            None,
            None,
        );
        assert_eq!(parsed, built);
        assert_eq!(parsed.params.half_life, 1.0);
        assert_eq!(parsed.params.transit_time, 0.3);
    }

    #[test]
    fn order_violation() {
        let text = "version = ApparatusObserver\n[params]\nhalf_life = 1\ntransit_time = 0.3\n\
                    [events]\nt_ob = 0.1\nt_look = 0.2\n[agents]\nobs = observer\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.kind(), DiagnosticKind::OrderViolation);
        assert_eq!((err.diagnostics[0].line, err.diagnostics[0].column), (6, 1));
    }

    #[test]
    fn empty_text_is_missing_required() {
        let err = parse_scenario("").unwrap_err();
        assert_eq!(err.kind(), DiagnosticKind::MissingRequired);
        assert!(err
            .diagnostics
            .iter()
            .all(|d| d.kind == DiagnosticKind::MissingRequired));
    }

    #[test]
    fn diagnostics_carry_positions() {
        let text = "version = CatV1\n[params]\n  half_life = abc\ntransit_time = 0.3\nbogus = 1\noops\n[agents]\ncat = cat\n";
        let err = parse_scenario(text).unwrap_err();
        let got: Vec<_> = err
            .diagnostics
            .iter()
            .map(|d| (d.kind, d.line, d.column))
            .collect();
        assert_eq!(
            got,
            vec![
                (DiagnosticKind::InvalidValue, 3, 15),
                (DiagnosticKind::UnknownKey, 5, 1),
                (DiagnosticKind::Syntax, 6, 1),
            ]
        );
    }

    #[test]
    fn relative_time_unit_scales_times() {
        let text =
            "version = CatV1\n[params]\nhalf_life = 2\ntransit_time = 0.3\n[agents]\ncat = cat\n";
        let sc = parse_scenario(text).unwrap();
        assert!((sc.params.transit_time - 0.6).abs() < 1e-15);
        assert!((sc.params.phys_rate - 25.0).abs() < 1e-12);
        let cut = sc.events.events().last().unwrap();
        assert_eq!(cut.kind, EventKind::Cutoff);
        assert_eq!(cut.time, 2.0);
    }

    #[test]
    fn version_requirements_enforced() {
        let text = "version = CatV2NaturalWake\n[params]\nhalf_life = 1\ntransit_time = 0.3\n[agents]\ncat = cat\n";
        let err = parse_scenario(text).unwrap_err();
        assert_eq!(err.kind(), DiagnosticKind::MissingRequired);
        assert!(err.to_string().contains("t_ff"));
    }

    #[test]
    fn apparatus_only_initial_state() {
        let (g, _) = build_initial_state(&fixture("apparatus").unwrap());
        let heavy: Vec<_> = g.components().iter().filter(|c| c.weight() > 0.0).collect();
        assert_eq!(heavy.len(), 1);
        assert_eq!(heavy[0].label(), "d0 M(a0) i0");
        assert_eq!(g.total_weight(), 1.0);
    }

    #[test]
    fn cat_v2_completion_is_ready() {
        let (g, _) = build_initial_state(&fixture("cat_v2").unwrap());
        assert!(g.find_label("d1 M(af) _C").is_some());
    }

    #[test]
    fn natural_wake_initial_product() {
        let (g, _) = build_initial_state(&fixture("cat_v2_natural_wake").unwrap());
        assert_eq!(g.components()[0].label(), "d0 M(a0) N(t) U");
        assert_eq!(g.total_weight(), 1.0);
    }

    #[test]
    fn fixtures_round_trip() {
        for (stem, text) in FIXTURES {
            let a = parse_scenario(text).unwrap();
            let b = parse_scenario(&serialize_scenario(&a)).unwrap();
            assert_eq!(a, b, "{stem}");
        }
    }
}
