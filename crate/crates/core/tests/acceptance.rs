//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use pitchfork_assist::certificates::{
    check_trajectory_with, compute_constants, BoundName, CertificateConstants, CertifyOptions, CheckOptions, POrder,
};
use pitchfork_assist::harness::{
    builtin, run_scenario, InitKind, ReferenceKnot, RunResult, ScenarioScript, Simulation,
};
use pitchfork_assist::humans::{HumanKind, HumanProgram};
use pitchfork_assist::schedule::{self, ScheduleParams};
use pitchfork_assist::{Mode, TickRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------- schedule

fn random_params(rng: &mut ChaCha8Rng) -> ScheduleParams {
    let pt_min = rng.random_range(20.0..150.0);
    ScheduleParams {
        eta: rng.random_range(0.05..0.5),
        gamma_decay: rng.random_range(0.001..0.1),
        kappa: rng.random_range(0.1..2.0),
        epsilon_t: rng.random_range(1.0..100.0),
        pt_min,
        pt_max: pt_min + rng.random_range(10.0..300.0),
    }
}

fn schedule_continuity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_gap: f64 = 0.0;
    let mut worst_slope: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_params(&mut rng);
        let m = rng.random_range(p.eta..1.0);
        let pt = schedule::threshold(m, &p).unwrap();
        worst_gap = worst_gap.max((schedule::cooperative_f(pt, m) - schedule::competitive_f(pt, m, &p)).abs());
        let r = (1.0 - m) / m;
        let expected = 2.0 * r * r * pt;
        for slope in [
            schedule::cooperative_df_dp(pt, m),
            schedule::competitive_df_dp(pt, m, &p),
        ] {
            worst_slope = worst_slope.max((slope - expected).abs() / expected);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_gap == 0.0 && worst_slope <= 1e-9 && within(elapsed, 1.0),
        format!("max value gap {worst_gap:e}, max slope rel err {worst_slope:.2e}, {elapsed:.2?}"),
    )
}

fn equilibrium_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let p = random_params(&mut rng);
        let m = rng.random_range(p.eta..1.0);
        let pt = schedule::threshold(m, &p).unwrap();
        let ph = rng.random_range(1e-3..=pt);
        let f = schedule::f_gain(ph, m, &p).unwrap();
        worst = worst.max((ph / (f.sqrt() + ph) - m).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && within(elapsed, 1.0),
        format!("max |m - m*| {worst:.2e}, {elapsed:.2?}"),
    )
}

fn derivative_oracle() -> Outcome {
    let p = ScheduleParams::default();
    let n = 200;
    let mut worst: f64 = 0.0;
    let mut branches = [0usize; 2];
    for i in 0..n {
        let m = p.eta + 1e-3 + (1.0 - 2e-3 - p.eta) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let ph = 1.0 + 399.0 * j as f64 / (n - 1) as f64;
            let d = schedule::f_partials(ph, m, &p).unwrap();
            let (hm, hp) = (1e-6, 1e-4);
            let fm =
                (schedule::f_gain(ph, m + hm, &p).unwrap() - schedule::f_gain(ph, m - hm, &p).unwrap()) / (2.0 * hm);
            let fp =
                (schedule::f_gain(ph + hp, m, &p).unwrap() - schedule::f_gain(ph - hp, m, &p).unwrap()) / (2.0 * hp);
            worst = worst.max((d.df_dm_star - fm).abs() / d.df_dm_star.abs().max(1.0));
            worst = worst.max((d.df_dp_human - fp).abs() / d.df_dp_human.abs().max(1.0));
            let pt = schedule::threshold(m, &p).unwrap();
            branches[usize::from(ph > pt)] += 1;
        }
    }
    outcome(
        worst <= 1e-5 && branches[0] > 0 && branches[1] > 0,
        format!(
            "max rel err {worst:.2e} over {n}x{n} (cooperative {}, competitive {})",
            branches[0], branches[1]
        ),
    )
}

// ---------------------------------------------------------------- randomized runs

fn random_reference(rng: &mut ChaCha8Rng, lo: f64, hi: f64, duration: f64, smooth_only: bool) -> Vec<ReferenceKnot> {
    let mut knots = vec![ReferenceKnot::hold(0.0, rng.random_range(lo..=hi))];
    let mut t = 0.0;
    for _ in 0..rng.random_range(1..5) {
        t += rng.random_range(10.0..duration / 2.0);
        let m = rng.random_range(lo..=hi);
        knots.push(if smooth_only || rng.random_bool(0.5) {
            ReferenceKnot::smooth(t, m)
        } else {
            ReferenceKnot::hold(t, m)
        });
    }
    knots
}

fn random_segments(rng: &mut ChaCha8Rng, lo: f64, hi: f64, duration: f64) -> Vec<(f64, f64)> {
    let mut segs = vec![(0.0, rng.random_range(lo..=hi))];
    let mut t = 0.0;
    for _ in 0..rng.random_range(1..6) {
        t += rng.random_range(5.0..duration / 2.0);
        segs.push((t, rng.random_range(lo..=hi)));
    }
    segs
}

fn explicit_start(script: &mut ScenarioScript, rng: &mut ChaCha8Rng, x0: f64, filt_human: f64) {
    script.initial.kind = InitKind::Explicit;
    script.initial.p_motor_target = x0;
    script.initial.y_control = rng.random_range(0.0..=script.plant.y_max);
    script.initial.p_human_filtered = filt_human;
    script.initial.p_motor_filtered = rng.random_range(0.0..300.0);
    script.initial.p_motor_actual = rng.random_range(0.0..300.0);
}

fn simulate(script: &ScenarioScript) -> (Vec<TickRecord>, usize) {
    let mut sim = Simulation::new(script).unwrap();
    let mut log = vec![];
    let mut faults = 0;
    for _ in 0..=script.n_periods() {
        let out = sim.step().unwrap();
        log.push(out.record);
        if out.fault.is_some() {
            faults += 1;
            break;
        }
    }
    (log, faults)
}

fn constants(lo: f64, hi: f64, m_upper: f64, p_order: POrder) -> CertificateConstants {
    compute_constants(
        &ScheduleParams::default(),
        lo,
        hi,
        CertifyOptions {
            p_order,
            grid_n: 128,
            m_upper,
            p_upper: None,
        },
    )
    .unwrap()
}

fn lemma1_ceiling() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = constants(80.0, 130.0, 0.9, POrder::P2);
    let ceiling = c.ceiling();
    let (mut violations, mut faults, mut ticks) = (0, 0, 0);
    let mut highest: f64 = 0.0;
    for run in 0..200 {
        let mut s = ScenarioScript::new(format!("ceiling-{run}"));
        s.duration = 200.0;
        s.seed = run;
        let eta = s.controller.schedule.eta;
        s.reference_program = random_reference(&mut rng, eta, 1.0, s.duration, false);
        let kind = [
            HumanKind::StepSequence,
            HumanKind::Ramp,
            HumanKind::BandNoise,
            HumanKind::Reactive,
            HumanKind::Cruise,
        ][rng.random_range(0..5)];
        s.human = HumanProgram {
            noise_std: rng.random_range(1.0..40.0),
            reactivity: rng.random_range(0.0..1.5),
            ..HumanProgram::with_kind(kind, random_segments(&mut rng, 0.0, 400.0, s.duration))
        };
        let x0 = rng.random_range(0.0..=ceiling);
        let filt = rng.random_range(0.0..380.0);
        explicit_start(&mut s, &mut rng, x0, filt);
        let tol = s.controller_config().integrator_tolerance();
        let (log, f) = simulate(&s);
        faults += f;
        for r in &log {
            ticks += 1;
            highest = highest.max(r.p_motor_target);
            if r.p_motor_target > ceiling + tol {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && faults == 0 && within(elapsed, 30.0),
        format!(
            "{violations} violations, {faults} faults over {ticks} ticks; max target {highest:.3} W vs sqrt(C_f) {ceiling:.3} W, {elapsed:.2?}"
        ),
    )
}

fn lemma2_floor() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (lo, hi, m_upper) = (80.0, 130.0, 0.9);
    let c = constants(lo, hi, m_upper, POrder::P2);
    let (floor, ceiling) = (c.floor(), c.ceiling());
    let (mut violations, mut faults, mut ticks) = (0, 0, 0);
    let mut lowest = f64::INFINITY;
    for run in 0..200 {
        let mut s = ScenarioScript::new(format!("floor-{run}"));
        s.duration = 200.0;
        let e_c = s.plant.e_crank;
        let eta = s.controller.schedule.eta;
        s.reference_program = random_reference(&mut rng, eta, m_upper, s.duration, false);
        let kind = if rng.random_bool(0.5) {
            HumanKind::StepSequence
        } else {
            HumanKind::Ramp
        };
        s.human = HumanProgram::with_kind(kind, random_segments(&mut rng, lo / e_c, hi / e_c, s.duration));
        let x0 = rng.random_range(floor..=ceiling);
        let filt = e_c * s.human.level(0.0);
        explicit_start(&mut s, &mut rng, x0, filt);
        let tol = s.controller_config().integrator_tolerance();
        let (log, f) = simulate(&s);
        faults += f;
        for r in &log {
            ticks += 1;
            assert!(r.sample.p_human_out >= lo - 1e-9 && r.sample.p_human_out <= hi + 1e-9);
            lowest = lowest.min(r.p_motor_target);
            if r.p_motor_target < floor - tol {
                violations += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && faults == 0 && within(elapsed, 30.0),
        format!(
            "{violations} violations, {faults} faults over {ticks} ticks; min target {lowest:.3} W vs sqrt(c_f) {floor:.3} W, {elapsed:.2?}"
        ),
    )
}

fn iss_bounds() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lo, hi, m_upper) = (80.0, 130.0, 0.9);
    let orders = [
        constants(lo, hi, m_upper, POrder::P1),
        constants(lo, hi, m_upper, POrder::P2),
    ];
    let (mut pm_violations, mut m_violations) = (0, 0);
    let (mut pm_checked, mut m_checked) = (0, 0);
    for run in 0..100 {
        let cooperative = run % 2 == 0;
        let mut s = ScenarioScript::new(format!("iss-{run}"));
        s.duration = 200.0;
        let e_c = s.plant.e_crank;
        // P_T(0.45) exceeds hi, so these runs stay cooperative
        let m_lo = if cooperative { 0.45 } else { s.controller.schedule.eta };
        s.reference_program = random_reference(&mut rng, m_lo, m_upper, s.duration, true);
        s.human = HumanProgram::with_kind(
            HumanKind::Ramp,
            random_segments(&mut rng, lo / e_c, hi / e_c, s.duration),
        );
        let x0 = rng.random_range(orders[0].floor()..=orders[0].ceiling());
        let filt = e_c * s.human.level(0.0);
        explicit_start(&mut s, &mut rng, x0, filt);
        let (log, _) = simulate(&s);
        let rates: Vec<f64> = log.iter().map(|r| s.m_star_rate(r.t()).unwrap()).collect();
        let tol = s.controller_config().integrator_tolerance();
        for c in &orders {
            let report = check_trajectory_with(
                &log,
                c,
                CheckOptions {
                    m_star_rate: Some(&rates),
                    abs_tolerance: tol,
                    ..CheckOptions::default()
                },
            );
            pm_violations += report.count(BoundName::IssPm);
            pm_checked += report.checked.iss_pm;
            if cooperative {
                m_violations += report.count(BoundName::IssM);
                m_checked += report.checked.iss_m;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        pm_violations == 0 && m_violations == 0 && pm_checked > 0 && m_checked > 0 && within(elapsed, 60.0),
        format!(
            "iss_pm {pm_violations} violations / {pm_checked} checks, iss_m {m_violations} / {m_checked} (p = 1 and 2), {elapsed:.2?}"
        ),
    )
}

// ---------------------------------------------------------------- figures

fn err(r: &TickRecord) -> f64 {
    (r.sample.ratio_m - r.m_star).abs()
}

fn window(log: &[TickRecord], t0: f64, t1: f64) -> impl Iterator<Item = &TickRecord> {
    log.iter().filter(move |r| r.t() >= t0 && r.t() < t1)
}

fn max_err(log: &[TickRecord], t0: f64, t1: f64) -> f64 {
    window(log, t0, t1).map(err).fold(0.0, f64::max)
}

fn run(name: &str) -> (ScenarioScript, RunResult) {
    let s = builtin(name).unwrap();
    let r = run_scenario(&s).unwrap();
    (s, r)
}

fn fig3() -> Outcome {
    let (s, r) = run("fig3_disturbance");
    let settle = 5.0 / s.controller.schedule.kappa;
    let steps = [80.0, 160.0];
    let steady = [
        max_err(&r.log, 40.0, 80.0),
        max_err(&r.log, 140.0, 160.0),
        max_err(&r.log, 220.0, 241.0),
    ];
    let excursions: Vec<f64> = steps.iter().map(|&t| max_err(&r.log, t, t + 30.0)).collect();
    let after: Vec<f64> = steps.iter().map(|&t| max_err(&r.log, t + settle, t + 80.0)).collect();
    let cooperative = r.log.iter().all(|x| x.mode == Mode::Cooperative);
    let pass = cooperative
        && r.is_clean()
        && steady.iter().all(|&e| e < 0.05)
        && excursions.iter().all(|&e| e >= 0.01)
        && after.iter().all(|&e| e < 0.05);
    outcome(
        pass,
        format!(
            "steady max |m-m*| {:.4}/{:.4}/{:.4}; step excursions {:.4}/{:.4}; after {settle} s {:.4}/{:.4}; cooperative {cooperative}",
            steady[0], steady[1], steady[2], excursions[0], excursions[1], after[0], after[1]
        ),
    )
}

fn competitive(name: &str) -> (bool, String) {
    let (s, r) = run(name);
    let settle = 5.0 / s.controller.schedule.kappa;
    let comp: Vec<&TickRecord> = r.log.iter().filter(|x| x.mode == Mode::Competitive).collect();
    let (Some(first), Some(last)) = (comp.first(), comp.last()) else {
        return (false, format!("{name}: never competitive"));
    };
    let equilibrium = r.log.iter().find(|x| x.t() == 50.0).unwrap().p_motor_target;
    let min_target = comp.iter().map(|x| x.p_motor_target).fold(f64::INFINITY, f64::min);
    let comp_err = comp.iter().map(|x| err(x)).fold(0.0, f64::max);
    let restored = max_err(&r.log, last.t() + settle, f64::INFINITY);
    let pass = r.fault.is_none() && min_target < equilibrium && comp_err > 0.05 && restored < 0.05;
    (
        pass,
        format!(
            "{name}: competitive {}..{} s, target {equilibrium:.1} -> min {min_target:.1} W, max |m-m*| {comp_err:.3}, after return+{settle} s {restored:.4}",
            first.t(),
            last.t()
        ),
    )
}

fn fig45() -> Outcome {
    let (a, da) = competitive("fig4_competitive");
    let (b, db) = competitive("fig5_competitive");
    outcome(a && b, format!("{da}; {db}"))
}

fn fig6() -> Outcome {
    let mut details = vec![];
    let mut pass = true;
    for order in [
        pitchfork_assist::harness::CertifyOrder::P1,
        pitchfork_assist::harness::CertifyOrder::P2,
    ] {
        let mut s = builtin("fig6_timevarying").unwrap();
        s.certify.order = order;
        let r = run_scenario(&s).unwrap();
        let report = r.report.as_ref().unwrap();
        let ok = report.count(BoundName::IssM) == 0 && report.checked.iss_m > 0 && r.fault.is_none();
        pass &= ok;
        details.push(format!(
            "{order:?}: iss_m {} violations / {} checks",
            report.count(BoundName::IssM),
            report.checked.iss_m
        ));
        let coop_max = r.summary.cooperative_max_abs_error;
        if order == pitchfork_assist::harness::CertifyOrder::P2 {
            // the target falls below its pre-excursion value although the
            // cyclist pushes harder, so m drifts above m*
            let before = r.log.iter().find(|x| x.t() == 150.0).unwrap().p_motor_target;
            let withdrew = window(&r.log, 160.0, 231.0).any(|x| x.mode == Mode::Competitive)
                && window(&r.log, 190.0, 230.0)
                    .all(|x| x.p_motor_target < before && x.sample.ratio_m > x.m_star + 0.05);
            pass &= withdrew;
            details.push(format!(
                "cooperative max |m-m*| {coop_max:.4}, assistance withdrawn {withdrew}"
            ));
        }
    }
    outcome(pass, details.join("; "))
}

fn fig7() -> Outcome {
    let (_, r) = run("fig7_ventilation");
    let mean = |t0, t1| {
        let v: Vec<f64> = window(&r.log, t0, t1).map(|x| x.ventilation_rate).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let vr_at = |t: f64| r.log.iter().find(|x| x.t() == t).unwrap().ventilation_rate;
    let high = mean(180.0, 220.0);
    let low = mean(480.0, 525.0);
    let cooperative_steady = window(&r.log, 180.0, 220.0)
        .chain(window(&r.log, 480.0, 525.0))
        .all(|x| x.mode == Mode::Cooperative);
    let competitive: Vec<&TickRecord> = window(&r.log, 525.0, 620.0)
        .filter(|x| x.mode == Mode::Competitive)
        .collect();
    let (c0, c1) = match (competitive.first(), competitive.last()) {
        (Some(a), Some(b)) => (a.t(), b.t()),
        _ => return outcome(false, "no competitive window"),
    };
    // reduction stalls: VR no longer falls across the competitive window
    let stalled = vr_at(c1) >= vr_at(c0);
    // and resumes afterwards, back to the cooperative steady state
    let resumed = vr_at(800.0) < vr_at(c1) && (vr_at(800.0) - low).abs() < 1.0;
    outcome(
        low < high && cooperative_steady && stalled && resumed,
        format!(
            "steady VR {high:.2} (m*=0.75) vs {low:.2} (m*=0.45); competitive {c0}..{c1} s VR {:.2} -> {:.2}; final {:.2}",
            vr_at(c0),
            vr_at(c1),
            vr_at(800.0)
        ),
    )
}

/// Amplitude growth of the deviation of the target from its settled value
/// after the disturbance at `t0`.
fn oscillation(log: &[TickRecord], t0: f64, t1: f64) -> (usize, f64, f64) {
    let xs: Vec<f64> = window(log, t0, t1).map(|r| r.p_motor_target).collect();
    let settled = *xs.last().unwrap();
    let d: Vec<f64> = xs.iter().map(|x| x - settled).collect();
    let sign_changes = d.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    let half = d.len() / 2;
    let early = d[5..half].iter().map(|v| v.abs()).fold(0.0, f64::max);
    let late = d[half..d.len() - 1].iter().map(|v| v.abs()).fold(0.0, f64::max);
    (sign_changes, early, late)
}

fn sampling_instability() -> Outcome {
    let coarse = builtin("sampling_limit").unwrap();
    let mut fine = coarse.clone();
    fine.controller.n_substeps = 10;
    let rc = run_scenario(&coarse).unwrap();
    let rf = run_scenario(&fine).unwrap();
    let (sc, ec, lc) = oscillation(&rc.log, 100.0, 200.0);
    let (sf, ef, lf) = oscillation(&rf.log, 100.0, 200.0);
    let coarse_grows = rc.fault.is_some() || (sc >= 4 && lc > ec);
    let fine_stable = rf.fault.is_none() && lf <= ef;
    outcome(
        coarse_grows && fine_stable,
        format!(
            "n=1: {sc} sign changes, amplitude {ec:.3e} -> {lc:.3e}, fault {}; n=10: {sf} sign changes, amplitude {ef:.3e} -> {lf:.3e}",
            rc.fault.is_some()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("schedule continuity", schedule_continuity),
        ("equilibrium identity", equilibrium_identity),
        ("ceiling bound", lemma1_ceiling),
        ("floor bound", lemma2_floor),
        ("ISS bounds", iss_bounds),
        ("disturbance rejection (fig3)", fig3),
        ("competitive excursion (fig4, fig5)", fig45),
        ("time-varying reference (fig6)", fig6),
        ("ventilation (fig7)", fig7),
        ("sampling instability", sampling_instability),
        ("derivative oracle", derivative_oracle),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
