use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use orules::dynamics::{CurrentLedger, DynamicsParams, Inflow};
use orules::harness::{RunOptions, Trajectory};
use orules::rules::{sample_stochastic_choice, Eligibility};
use orules::scenario::{parse_scenario, serialize_scenario, Scenario, Version};
use orules::state::{
    contains_ready, is_discontinuous, make_component, AgentId, AgentRole, BrainStatus, BrainToken,
    Component, ComponentId, Device, DevicePulse, Indicator, IndicatorLevel, InternalClock,
    SubsystemFactor,
};

fn alphabet() -> Vec<Component> {
    let devices = [
        Device::Idle,
        Device::Pulse(DevicePulse::impulse(4, 1.0)),
        Device::Done,
    ];
    let indicators = [
        (IndicatorLevel::Pending, false),
        (IndicatorLevel::Complete, false),
        (IndicatorLevel::Pending, true),
        (IndicatorLevel::Complete, true),
    ];
    let cats = [
        ("C0", BrainStatus::Conscious),
        ("C0", BrainStatus::Ready),
        ("U", BrainStatus::Unconscious),
        ("C", BrainStatus::Ready),
        ("C", BrainStatus::Conscious),
    ];
    let mut out = Vec::new();
    for d in [false, true] {
        for dev in &devices {
            for &(level, engaged) in &indicators {
                let f = vec![
                    SubsystemFactor::Detector(d),
                    SubsystemFactor::Device(dev.clone()),
                    SubsystemFactor::Indicator(Indicator { level, engaged }),
                ];
                out.push(make_component(f, 0.0).unwrap());
            }
            for &(aw, status) in &cats {
                for rung in [None, Some(0.8)] {
                    let f = vec![
                        SubsystemFactor::Detector(d),
                        SubsystemFactor::Device(dev.clone()),
                        SubsystemFactor::InternalClock(InternalClock { rung_at: rung }),
                        SubsystemFactor::Brain(BrainToken::new(
                            AgentId::new("cat"),
                            AgentRole::Cat,
                            aw,
                            status,
                        )),
                    ];
                    out.push(make_component(f, 0.0).unwrap());
                }
            }
        }
    }
    out
}

/// Label with the device position and the readiness marks removed: what
/// is left is exactly the set of discrete labels.
fn discrete_label(c: &Component) -> String {
    c.label()
        .split(' ')
        .filter(|t| !t.starts_with("M("))
        .map(|t| t.trim_start_matches('_'))
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn discontinuity_over_the_whole_alphabet() {
    let all = alphabet();
    for a in &all {
        assert!(!is_discontinuous(a, a), "{a}");
        for b in &all {
            let d = is_discontinuous(a, b);
            assert_eq!(d, is_discontinuous(b, a), "{a} / {b}");
            assert_eq!(d, discrete_label(a) != discrete_label(b), "{a} / {b}");
        }
    }
}

#[test]
fn selection_frequencies_follow_inflow() {
    // Oracle: conditional on a hit, component 0 is chosen with frequency
    // 0.3 / (0.3 + 0.1).
    let ledger = CurrentLedger {
        dt: 0.01,
        inflow: vec![
            Inflow {
                id: ComponentId(0),
                current: 0.3,
                ready: true,
            },
            Inflow {
                id: ComponentId(1),
                current: 0.1,
                ready: true,
            },
        ],
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // s chosen so the step hazard is 0.1 and hits are frequent.
    let s = 0.01 * 0.4 / 0.1;
    let (mut first, mut hits) = (0u64, 0u64);
    for _ in 0..1_000_000 {
        if let Some(id) =
            sample_stochastic_choice(&ledger, s, 0.01, &mut rng, Eligibility::ReadyOnly).unwrap()
        {
            hits += 1;
            first += u64::from(id == ComponentId(0));
        }
    }
    let f = first as f64 / hits as f64;
    assert!((f - 0.75).abs() < 0.01, "{f} over {hits} hits");
    let p = hits as f64 / 1e6;
    assert!((p - 0.1).abs() < 0.002, "{p}");
}

fn version() -> impl Strategy<Value = Version> {
    prop::sample::select(Version::ALL.to_vec())
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        version(),
        0.5f64..2.0,
        0.1f64..0.5,
        1usize..4,
        20usize..120,
        0.05f64..0.3,
        0.1f64..0.4,
        0.2f64..1.4,
    )
        .prop_map(|(v, h, t_rel, width, bins, look, gap, ff)| {
            let mut p = DynamicsParams::new(h, t_rel * h);
            p.bins = bins;
            p.pulse_width = width.min(bins);
            let obs = v.has_observer();
            Scenario::template(
                "generated",
                v,
                p,
                obs.then_some(look * h),
                obs.then_some((look + gap) * h),
                v.has_clock().then_some(ff * h),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialization_round_trips(sc in scenario()) {
        let text = serialize_scenario(&sc);
        let back = parse_scenario(&text).unwrap();
        prop_assert_eq!(back, sc);
    }

    #[test]
    fn weight_is_conserved_and_gating_holds(sc in scenario(), seed in 0u64..1000) {
        let mut tr = Trajectory::new(&sc, seed, &RunOptions::default()).unwrap();
        let mut before = tr.graph().total_weight();
        prop_assert!((before - 1.0).abs() < 1e-12);
        while !tr.is_finished() {
            tr.apply_due_events().unwrap();
            let pre = tr.graph().clone();
            let rep = tr.step().unwrap();
            for b in &rep.ledger.blocked {
                prop_assert!(contains_ready(pre.get(b.from).unwrap()));
            }
            for t in &rep.ledger.transfers {
                prop_assert!(!contains_ready(pre.get(t.from).unwrap()));
                prop_assert!(t.amount >= 0.0);
            }
            for i in &rep.ledger.inflow {
                prop_assert!(i.current > 0.0);
            }
            prop_assert!((rep.weight_after_transfer - before).abs() <= 1e-9);
            let after = tr.graph().total_weight();
            if rep.hit.is_some() {
                prop_assert!((after - 1.0).abs() < 1e-12);
                let heavy: Vec<_> = tr
                    .graph()
                    .components()
                    .iter()
                    .filter(|c| c.weight() > 0.0)
                    .collect();
                prop_assert_eq!(heavy.len(), 1);
                prop_assert!(!contains_ready(heavy[0]));
            }
            before = after;
        }
        let r = tr.finish();
        prop_assert!(!r.terminal_label.contains('_'), "{}", r.terminal_label);
    }

    #[test]
    fn reduction_is_final(seed in 0u64..5000) {
        let sc = orules::scenario::fixture("cat_v2_observer").unwrap();
        let r = orules::harness::run_trajectory(&sc, seed).unwrap();
        prop_assert!(!r.hits.is_empty());
        prop_assert_eq!(r.terminal.len(), 1);
        prop_assert!(r.terminal_weight > 0.0 && r.terminal_weight <= 1.0 + 1e-12);
        prop_assert!(!r.terminal_label.contains('_'));
    }
}
