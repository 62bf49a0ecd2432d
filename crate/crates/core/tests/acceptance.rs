use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orules::dynamics::EdgeKind;
use orules::harness::{
    export_traces, run_ensemble_with, run_trajectory, Ensemble, RunOptions, Trajectory,
};
use orules::scenario::{fixture, Scenario};
use orules::state::contains_ready;

const FIXTURES: [&str; 7] = [
    "apparatus",
    "apparatus_observer",
    "cat_v1",
    "cat_v1_observer",
    "cat_v2",
    "cat_v2_observer",
    "cat_v2_natural_wake",
];

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ensemble(
    sc: &Scenario,
    n: usize,
    base_seed: u64,
    opts: &RunOptions,
) -> Result<Ensemble, String> {
    run_ensemble_with(sc, n, base_seed, opts, None).map_err(|e| e.to_string())
}

fn load(stem: &str) -> Result<Scenario, String> {
    fixture(stem).ok_or_else(|| format!("fixture {stem} missing"))
}

fn even_split(stem: &str, label: &str, budget: Option<Duration>) -> Outcome {
    let sc = load(stem)?;
    let start = Instant::now();
    let e = ensemble(&sc, 20_000, 0, &RunOptions::default())?;
    let elapsed = start.elapsed();
    let f = e.stats.fraction(label);
    let mut detail = format!(
        "{label}: {f:.4} of 20000 runs in {:.1} s",
        elapsed.as_secs_f64()
    );
    let mut ok = (f - 0.5).abs() <= 0.011;
    if let Some(b) = budget {
        ok &= elapsed <= b;
        detail.push_str(&format!(" (budget {} s)", b.as_secs()));
    }
    check(ok, detail)
}

fn apparatus_born_weights() -> Outcome {
    let sc = load("apparatus")?;
    let e = ensemble(&sc, 1000, 0, &RunOptions::default())?;
    let mut worst: f64 = 0.0;
    for r in &e.records {
        if !r.hits.is_empty() {
            return Err(format!("seed {} has a hit", r.seed));
        }
        if r.terminal.len() != 2 {
            return Err(format!("seed {} ends in {}", r.seed, r.terminal_label));
        }
        for (_, w) in &r.terminal {
            worst = worst.max((w - 0.5).abs());
        }
        if r.terminal.iter().any(|(l, _)| l.contains("M(a)")) {
            return Err(format!("seed {} keeps an in-flight row", r.seed));
        }
    }
    let settle = sc.params.half_life + sc.params.transit_time;
    let mut tr = Trajectory::new(&sc, 0, &RunOptions::default()).map_err(|e| e.to_string())?;
    let mut in_flight: f64 = 0.0;
    while !tr.is_finished() {
        tr.step().map_err(|e| e.to_string())?;
        if tr.time() >= settle {
            let w: f64 = tr
                .graph()
                .components()
                .iter()
                .filter(|c| c.label().contains("M(a)"))
                .map(|c| c.weight())
                .sum();
            in_flight = in_flight.max(w);
        }
    }
    check(
        worst <= 1e-6 && in_flight <= 1e-9,
        format!(
            "0 hits, max |w - 0.5| = {worst:.2e}, in-flight weight after settling {in_flight:.2e}"
        ),
    )
}

fn norm_preserved() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut steps = 0u64;
    for stem in FIXTURES {
        let sc = load(stem)?;
        for seed in 0..40 {
            let mut tr =
                Trajectory::new(&sc, seed, &RunOptions::default()).map_err(|e| e.to_string())?;
            while !tr.is_finished() {
                let rep = tr.step().map_err(|e| e.to_string())?;
                worst = worst.max((rep.weight_after_transfer - 1.0).abs());
                if rep.hit.is_some() || rep.pruned > 0 {
                    break;
                }
                worst = worst.max((tr.graph().total_weight() - 1.0).abs());
                steps += 1;
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("max |sum w - 1| = {worst:.2e} over {steps} steps"),
    )
}

fn gating_holds() -> Outcome {
    let mut checked = 0u64;
    for stem in FIXTURES {
        let sc = load(stem)?;
        for seed in 0..30 {
            let mut tr =
                Trajectory::new(&sc, seed, &RunOptions::default()).map_err(|e| e.to_string())?;
            while !tr.is_finished() {
                tr.apply_due_events().map_err(|e| e.to_string())?;
                let pre = tr.graph().clone();
                let rep = tr.step().map_err(|e| e.to_string())?;
                for t in &rep.ledger.transfers {
                    let from = pre.get(t.from).ok_or("unknown transfer source")?;
                    if contains_ready(from) {
                        return Err(format!("{stem} seed {seed}: transfer out of {from}"));
                    }
                }
                if rep.hit.is_some() {
                    continue;
                }
                for c in pre.components().iter().filter(|c| contains_ready(c)) {
                    let Some(now) = tr.graph().get(c.id()) else {
                        continue;
                    };
                    if now.weight() < c.weight() - 1e-15 {
                        return Err(format!("{stem} seed {seed}: {c} lost weight"));
                    }
                    if let (Some(a), Some(b)) = (c.pulse(), now.pulse()) {
                        if (0..a.len()).any(|i| b.bin(i) < a.bin(i) - 1e-15) {
                            return Err(format!("{stem} seed {seed}: pulse of {c} moved"));
                        }
                    }
                    checked += 1;
                }
            }
        }
    }
    let frozen = frozen_ready_row()?;
    Ok(format!(
        "{checked} ready component-steps without outflow; {frozen}"
    ))
}

/// A hit on the undecayed ready row of the observer configuration returns
/// the system to d0; the gated d1 row fed afterwards must keep all of its
/// mass in the first pulse bin.
fn frozen_ready_row() -> Result<String, String> {
    let sc = load("apparatus_observer")?;
    let seed = (0..5000)
        .find(|&s| {
            run_trajectory(&sc, s).is_ok_and(|r| {
                r.hits
                    .first()
                    .is_some_and(|h| h.label == "d0 M(a0) I0 _B0" && h.time < 0.9)
            })
        })
        .ok_or("no seed returns to d0")?;
    let mut tr = Trajectory::new(&sc, seed, &RunOptions::default()).map_err(|e| e.to_string())?;
    let mut after_hit = false;
    let mut gated = 0;
    while !tr.is_finished() {
        let rep = tr.step().map_err(|e| e.to_string())?;
        if rep.hit.is_some() {
            if after_hit {
                break;
            }
            after_hit = true;
            continue;
        }
        if !after_hit {
            continue;
        }
        if let Some(c) = tr.graph().find_label("d1 M(a) I0 _B0") {
            let p = c.pulse().ok_or("ready row has no pulse")?;
            if (p.mass() - p.bin(0)).abs() > 1e-15 {
                return Err(format!("seed {seed}: ready row left the first bin"));
            }
            if !rep
                .ledger
                .blocked
                .iter()
                .any(|b| b.from == c.id() && b.kind == EdgeKind::Advect)
            {
                return Err(format!(
                    "seed {seed}: advection of the ready row not blocked"
                ));
            }
            gated += 1;
        }
    }
    check(
        gated > 0,
        format!("ready row held at the first bin for {gated} steps"),
    )
}

/// Hit-time CDF: the ready-capture rate follows the decaying weight and
/// the detector is shut off at the half-life, where half has been captured.
fn oracle_cdf(t: f64, h: f64) -> f64 {
    (2.0 * (1.0 - (-t * std::f64::consts::LN_2 / h).exp())).clamp(0.0, 1.0)
}

fn oracle_inverse(u: f64, h: f64) -> f64 {
    -h * (1.0 - u / 2.0).ln() / std::f64::consts::LN_2
}

fn ks(samples: &[f64], h: f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = oracle_cdf(x, h);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

fn hit_times_follow_decay() -> Outcome {
    let sc = load("cat_v1")?;
    let h = sc.params.half_life;
    let mut times = Vec::new();
    let mut base = 0u64;
    while times.len() < 10_000 {
        let e = ensemble(&sc, 20_000, base, &RunOptions::default())?;
        times.extend(e.records.iter().filter_map(|r| r.first_hit()));
        base += 20_000;
    }
    times.truncate(10_000);
    let d = ks(&times, h);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let control: Vec<f64> = (0..10_000).map(|_| oracle_inverse(rng.gen(), h)).collect();
    let d_control = ks(&control, h);
    check(
        d < 0.02 && d_control < 0.02,
        format!("KS {d:.4} over 10000 hits (inverse-CDF control {d_control:.4})"),
    )
}

fn pruning_is_invisible() -> Outcome {
    let no_prune = RunOptions {
        prune: false,
        ..RunOptions::default()
    };
    let mut details = Vec::new();
    for stem in ["cat_v1", "cat_v2_observer"] {
        let sc = load(stem)?;
        let a = ensemble(&sc, 5000, 0, &RunOptions::default())?;
        let b = ensemble(&sc, 5000, 0, &no_prune)?;
        let differ = a
            .records
            .iter()
            .zip(&b.records)
            .filter(|(x, y)| x.terminal_label != y.terminal_label)
            .count();
        if differ > 0 {
            return Err(format!("{stem}: {differ} of 5000 terminal labels differ"));
        }
        details.push(format!("{stem} 5000/5000"));
    }
    Ok(format!("identical terminal labels: {}", details.join(", ")))
}

fn vertical_drains_everything() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for stem in ["apparatus_observer"] {
        let sc = load(stem)?;
        let t_ob = sc.t_ob().ok_or("no observation time")?;
        let opts = RunOptions {
            sampling: false,
            cutoff: false,
            horizon: Some(t_ob + 1.0),
            ..RunOptions::default()
        };
        let mut tr = Trajectory::new(&sc, 0, &opts).map_err(|e| e.to_string())?;
        let mut moved = 0.0;
        while !tr.is_finished() {
            moved += tr
                .step()
                .map_err(|e| e.to_string())?
                .ledger
                .moved(EdgeKind::Vertical);
        }
        ok &= (moved - 1.0).abs() <= 1e-6;
        details.push(format!("{stem} {moved:.9}"));
    }
    check(
        ok,
        format!("cumulative vertical transfer: {}", details.join(", ")),
    )
}

fn natural_wake_always_conscious() -> Outcome {
    let sc = load("cat_v2_natural_wake")?;
    // Ringing before any pulse can complete puts the natural wake-up ahead
    // of every alarm; the shipped ring time comes after most of them.
    let early = sc.clone().with_ring_at(0.5 * sc.params.transit_time);
    let mut sets = Vec::new();
    for (name, s) in [("ring at t_ff", &sc), ("ring before alarms", &early)] {
        let e = ensemble(s, 5000, 0, &RunOptions::default())?;
        let mut labels = BTreeSet::new();
        for r in &e.records {
            if !r.terminal_label.ends_with(" C") {
                return Err(format!(
                    "{name}, seed {} ends in {}",
                    r.seed, r.terminal_label
                ));
            }
            labels.insert(r.terminal_label.clone());
        }
        sets.push(labels);
    }
    check(
        sets[0] == sets[1],
        format!(
            "5000/5000 end conscious in both orderings; labels {:?} vs {:?}",
            sets[0], sets[1]
        ),
    )
}

fn traces_independent_of_workers() -> Outcome {
    let sc = load("cat_v2_observer")?;
    let opts = RunOptions::default();
    let one = run_ensemble_with(&sc, 200, 0, &opts, Some(1)).map_err(|e| e.to_string())?;
    let four = run_ensemble_with(&sc, 200, 0, &opts, Some(4)).map_err(|e| e.to_string())?;
    let (a, b) = (export_traces(&one.records), export_traces(&four.records));
    check(
        a == b,
        format!(
            "200 traces, {} bytes, identical at 1 and 4 workers",
            a.len()
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        (
            "cat_v1 even split",
            Box::new(|| even_split("cat_v1", "d1 M(af) U", Some(Duration::from_secs(60)))),
        ),
        (
            "cat_v2 even split",
            Box::new(|| even_split("cat_v2", "d1 M(af) C", None)),
        ),
        ("apparatus weights", Box::new(apparatus_born_weights)),
        ("norm preserved", Box::new(norm_preserved)),
        ("ready gating", Box::new(gating_holds)),
        ("hit-time distribution", Box::new(hit_times_follow_decay)),
        ("pruning invisible", Box::new(pruning_is_invisible)),
        ("vertical drain", Box::new(vertical_drains_everything)),
        ("natural wake", Box::new(natural_wake_always_conscious)),
        (
            "worker independence",
            Box::new(traces_independent_of_workers),
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
