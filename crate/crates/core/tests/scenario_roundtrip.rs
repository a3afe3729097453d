use proptest::prelude::*;

use epds::scenario::{builtin, ControllerSpec, PlantSpec, Scenario, SectorSpec, BUILTIN_NAMES};
use epds::sim::{InputSignal, Scheme, Segment, SegmentKind};

fn segment_kind() -> impl Strategy<Value = SegmentKind> {
    prop_oneof![
        (-5.0..5.0f64).prop_map(|value| SegmentKind::Constant { value }),
        (-5.0..5.0f64, -2.0..2.0f64).prop_map(|(offset, slope)| SegmentKind::Ramp { offset, slope }),
        (0.0..3.0f64, 0.1..10.0f64, -3.0..3.0f64, -1.0..1.0f64).prop_map(
            |(amplitude, omega, phase, offset)| SegmentKind::Sinusoid { amplitude, omega, phase, offset }
        ),
        prop::collection::vec(-2.0..2.0f64, 1..4).prop_map(|coeffs| SegmentKind::Polynomial { coeffs }),
    ]
}

fn scenario() -> impl Strategy<Value = Scenario> {
    (
        "[a-z_]{1,12}",
        prop::collection::vec(segment_kind(), 1..4),
        0.5..20.0f64,
        prop::option::of(1e-4..1e-1f64),
        prop::option::of(any::<u64>()),
        any::<bool>(),
        0.1..4.0f64,
        0.1..3.0f64,
    )
        .prop_map(|(name, kinds, horizon, step, seed, linear, kh, omega)| {
            let segments = kinds
                .into_iter()
                .enumerate()
                .map(|(i, kind)| Segment { start: i as f64 * horizon / 4.0, kind })
                .collect();
            let (plant, controller, sector) = if linear {
                (
                    PlantSpec::Linear {
                        a: vec![vec![0.0, 1.0], vec![-kh, -omega]],
                        b: vec![0.0, 1.0],
                        b_w: Some(vec![0.0, 1.0]),
                        c: None,
                        g_p: vec![-1.0, 0.0],
                    },
                    ControllerSpec::Linear { a: vec![vec![0.0]], b: vec![omega], c: Some(vec![0.1]) },
                    Some(SectorSpec { k1: -kh, k2: kh }),
                )
            } else {
                (
                    PlantSpec::MassSpringDamper { mass: 1.0, damping: omega, stiffness: kh },
                    ControllerSpec::Higs { k_h: kh, omega_h: omega },
                    None,
                )
            };
            Scenario {
                name,
                plant,
                controller,
                sector,
                initial_state: vec![-1.0, 0.0, 0.0],
                input: InputSignal::new(segments, Some(horizon)).unwrap(),
                horizon,
                step,
                scheme: if linear { Some(Scheme::Midpoint) } else { None },
                seed,
            }
        })
}

proptest! {
    #[test]
    fn json_round_trip_is_value_identical(sc in scenario()) {
        let text = sc.to_json();
        let back = Scenario::from_json(&text).unwrap().scenario;
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn builtins_round_trip() {
    for name in BUILTIN_NAMES {
        let sc = builtin(name).unwrap();
        let back = Scenario::from_json(&sc.to_json()).unwrap().scenario;
        assert_eq!(back, sc, "{name}");
    }
}
