use std::path::PathBuf;

use pitchfork_assist::harness::{
    builtin, emit_outputs, log_to_csv_string, read_log, read_log_file, replay, run_scenario, scatter_x_range, Command,
    RecordedCommand, ScenarioScript, BUILTIN_NAMES, LOG_HEADER,
};
use pitchfork_assist::humans::HumanKind;
use pitchfork_assist::Error;

fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn scenario_files_match_builtins() {
    for name in BUILTIN_NAMES {
        let file = ScenarioScript::load(scenario_dir().join(format!("{name}.toml"))).unwrap();
        assert_eq!(file, builtin(name).unwrap(), "{name}");
    }
}

#[test]
fn toml_round_trip() {
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        let back = ScenarioScript::from_toml_str(&s.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}

#[test]
fn builtins_run_to_completion() {
    for name in BUILTIN_NAMES {
        let s = builtin(name).unwrap();
        let r = run_scenario(&s).unwrap();
        assert!(r.fault.is_none(), "{name}: {:?}", r.fault);
        assert_eq!(r.log.len(), s.n_periods() + 1, "{name}");
        assert!(r.violations().is_empty(), "{name}: {:?}", r.violations().first());
    }
}

#[test]
fn one_period_run_has_two_ticks() {
    let mut s = builtin("fig3_disturbance").unwrap();
    s.duration = s.controller.dt_sample;
    assert_eq!(run_scenario(&s).unwrap().log.len(), 2);
}

#[test]
fn invalid_config_fails_before_first_tick() {
    let mut s = builtin("fig3_disturbance").unwrap();
    s.duration = 0.0;
    assert!(run_scenario(&s).is_err());
    let mut s = builtin("fig3_disturbance").unwrap();
    s.reference_program[0].m_star = 0.1;
    assert!(run_scenario(&s).is_err());
    let mut s = builtin("fig3_disturbance").unwrap();
    s.certify.m_upper = 1.0;
    assert!(run_scenario(&s).is_err());
    assert!(ScenarioScript::from_toml_str("name = 3").is_err());
}

#[test]
fn emitted_files_and_csv_schema() {
    let r = run_scenario(&builtin("fig7_ventilation").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_outputs(&r, dir.path()).unwrap();
    for f in [
        "ticks.csv",
        "summary.json",
        "ratio.svg",
        "powers.svg",
        "scatter.svg",
        "ventilation.svg",
    ] {
        assert!(written.contains(&dir.path().join(f)), "{f}");
        assert!(dir.path().join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("ticks.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), LOG_HEADER.join(","));
    assert_eq!(lines.count(), r.log.len());
    let back = read_log_file(dir.path().join("ticks.csv")).unwrap();
    assert_eq!(back.len(), r.log.len());
    for (a, b) in back.iter().zip(&r.log) {
        assert_eq!(a.t(), b.t());
        assert_eq!(a.p_motor_target, b.p_motor_target);
        assert_eq!(a.mode, b.mode);
        assert!((a.sample.p_motor_out - b.sample.p_motor_out).abs() <= 1e-9 * (1.0 + b.sample.p_motor_out));
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ticks"], r.log.len());
}

#[test]
fn certificate_files_written_when_certifying() {
    let r = run_scenario(&builtin("fig3_disturbance").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_outputs(&r, dir.path()).unwrap();
    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["violations"], 0);
    assert!(cert["constants"]["c_f_sup"].as_f64().unwrap() > 0.0);
    let v = std::fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert_eq!(v.lines().count(), 1);
}

#[test]
fn same_seed_gives_identical_csv() {
    let mut s = builtin("reactive_cyclist").unwrap();
    s.human.kind = HumanKind::BandNoise;
    s.human.noise_std = 10.0;
    let a = log_to_csv_string(&run_scenario(&s).unwrap().log).unwrap();
    let b = log_to_csv_string(&run_scenario(&s).unwrap().log).unwrap();
    assert_eq!(a, b);
    let mut other = s.clone();
    other.human.seed = Some(99);
    assert_ne!(a, log_to_csv_string(&run_scenario(&other).unwrap().log).unwrap());
}

#[test]
fn scatter_range_covers_human_power() {
    let r = run_scenario(&builtin("fig4_competitive").unwrap()).unwrap();
    let (x0, x1) = scatter_x_range(&r.log);
    let max_ph = r
        .log
        .iter()
        .map(|x| x.sample.p_human_raw.max(x.sample.p_human_out))
        .fold(0.0, f64::max);
    assert_eq!(x0, 0.0);
    assert!(x1 >= max_ph);
}

#[test]
fn read_log_rejects_wrong_header() {
    let bad = "t,m_star,m\n0,0.5,0.5\n";
    assert!(matches!(
        read_log(bad.as_bytes()),
        Err(Error::Csv(_)) | Err(Error::Config(_))
    ));
}

#[test]
fn unwritable_output_is_io_error() {
    let r = run_scenario(&builtin("fig3_disturbance").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    assert!(matches!(emit_outputs(&r, blocker.join("sub")), Err(Error::Io { .. })));
}

#[test]
fn replay_applies_commands_at_recorded_ticks() {
    let s = builtin("fig3_disturbance").unwrap();
    let cmds = [
        RecordedCommand {
            tick: 0,
            command: Command::SetHumanPower { watts: 120.0 },
        },
        RecordedCommand {
            tick: 20,
            command: Command::SetMStar { m_star: 0.5 },
        },
        RecordedCommand {
            tick: 40,
            command: Command::SetHumanPower { watts: 0.0 },
        },
    ];
    let log = replay(&s, &cmds, 60).unwrap();
    assert_eq!(log.len(), 60);
    assert_eq!(log[0].sample.p_human_raw, 120.0);
    assert_eq!(log[19].m_star, 0.7);
    assert_eq!(log[20].m_star, 0.5);
    assert_eq!(log[40].sample.p_human_raw, 0.0);
    assert_eq!(log, replay(&s, &cmds, 60).unwrap());
}
