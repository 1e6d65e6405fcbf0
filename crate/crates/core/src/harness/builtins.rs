//! Built-in scenarios: the four published experiments plus a few extra probes.

use super::scenario::{CertifyOrder, ReferenceKnot, ScenarioScript};
use crate::humans::{HumanKind, HumanProgram, VentilationModel};

pub const BUILTIN_NAMES: [&str; 8] = [
    "fig3_disturbance",
    "fig4_competitive",
    "fig5_competitive",
    "fig6_timevarying",
    "fig7_ventilation",
    "pure_competitive",
    "reactive_cyclist",
    "sampling_limit",
];

fn base(name: &str, duration: f64, m_star: f64, human: HumanProgram) -> ScenarioScript {
    let mut s = ScenarioScript::new(name);
    s.duration = duration;
    s.reference_program = vec![ReferenceKnot::hold(0.0, m_star)];
    s.human = human;
    s
}

fn competitive_ramp(name: &str, m_star: f64) -> ScenarioScript {
    let ramp = HumanProgram::with_kind(
        HumanKind::Ramp,
        vec![
            (0.0, 90.0),
            (60.0, 90.0),
            (120.0, 260.0),
            (150.0, 260.0),
            (210.0, 90.0),
            (300.0, 90.0),
        ],
    );
    base(name, 300.0, m_star, ramp)
}

/// Look up a built-in scenario by name.
pub fn builtin(name: &str) -> Option<ScenarioScript> {
    let s = match name {
        // human output steps 100 -> 150 -> 100 W at a fixed reference
        "fig3_disturbance" => {
            let mut s = base(
                name,
                240.0,
                0.7,
                HumanProgram::with_kind(
                    HumanKind::StepSequence,
                    vec![(0.0, 100.0), (80.0, 150.0), (160.0, 100.0)],
                ),
            );
            s.certify.order = CertifyOrder::P2;
            s.certify.p_h_min = 90.0;
            s.certify.p_h_max = 145.0;
            s
        }
        "fig4_competitive" => competitive_ramp(name, 0.45),
        "fig5_competitive" => competitive_ramp(name, 0.6),
        // reference eased from 0.75 to 0.45, then a competitive burst
        "fig6_timevarying" => {
            let mut s = base(
                name,
                300.0,
                0.75,
                HumanProgram::with_kind(
                    HumanKind::StepSequence,
                    vec![(0.0, 110.0), (160.0, 200.0), (230.0, 110.0)],
                ),
            );
            s.reference_program = vec![
                ReferenceKnot::hold(0.0, 0.75),
                ReferenceKnot::hold(70.0, 0.75),
                ReferenceKnot::smooth(100.0, 0.45),
            ];
            s.certify.order = CertifyOrder::P2;
            s.certify.p_h_min = 80.0;
            s.certify.p_h_max = 130.0;
            s.certify.m_upper = 0.75;
            s
        }
        // a cyclist holding a total power demand; the pollution signal lowers m*
        "fig7_ventilation" => {
            let mut s = base(
                name,
                800.0,
                0.75,
                HumanProgram::with_kind(HumanKind::Cruise, vec![(0.0, 200.0), (525.0, 320.0), (580.0, 200.0)]),
            );
            s.reference_program = vec![ReferenceKnot::hold(0.0, 0.75), ReferenceKnot::hold(220.0, 0.45)];
            s.ventilation = Some(VentilationModel::default());
            s
        }
        "pure_competitive" => base(name, 200.0, 0.5, HumanProgram::constant(250.0)),
        "reactive_cyclist" => {
            let mut s = base(
                name,
                300.0,
                0.4,
                HumanProgram {
                    reactivity: 0.5,
                    ..HumanProgram::with_kind(HumanKind::Reactive, vec![(0.0, 100.0)])
                },
            );
            s.ventilation = Some(VentilationModel::default());
            s
        }
        // one explicit RK4 step per second at heavy assistance, with a demand disturbance
        "sampling_limit" => {
            let mut s = base(
                name,
                300.0,
                0.3,
                HumanProgram::with_kind(HumanKind::Cruise, vec![(0.0, 200.0), (100.0, 240.0), (200.0, 200.0)]),
            );
            s.controller.n_substeps = 1;
            s
        }
        _ => return None,
    };
    Some(s)
}
