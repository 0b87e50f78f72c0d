use powertalk_core::grid::{solve_steady_state, two_vsc_bus_voltage};
use powertalk_core::{BusLoad, Constraints, Converter, ConverterMode, GridSpec, Line};
use proptest::prelude::*;

fn converter(bus: usize, mode: ConverterMode, x: f64, r_d: f64, capacity: f64) -> Converter {
    Converter {
        bus,
        mode,
        reference_voltage: x,
        virtual_resistance: r_d,
        capacity,
        incremental_cost: 1.0,
        setpoint: None,
        constraints: Constraints {
            x_min: 43.0,
            x_max: 53.0,
            r_d_min: 0.01,
            r_d_max: 2.0,
        },
    }
}

prop_compose! {
    fn load()(p in 0.0..35.0f64, c in 0.0..35.0f64, r in 0.0..35.0f64) -> BusLoad {
        BusLoad { constant_power: p, constant_current: c, resistive: r }
    }
}

prop_compose! {
    /// Connected multi-bus grid: a random tree plus a few chords.
    fn grid()(n in 1usize..6)(
        loads in prop::collection::vec(load(), n),
        parents in prop::collection::vec(0usize..100, n),
        chords in prop::collection::vec((0usize..100, 0usize..100, 0.02..0.1f64), 0..3),
        resist in prop::collection::vec(0.02..0.1f64, n),
        vscs in prop::collection::vec((0usize..100, 47.0..49.0f64, 0.1..0.4f64), 1..4),
        cscs in prop::collection::vec((0usize..100, 0.0..100.0f64), 0..3),
        n in Just(n),
    ) -> GridSpec {
        let mut lines: Vec<Line> = (1..n)
            .map(|b| Line { bus_a: parents[b] % b, bus_b: b, resistance: resist[b] })
            .collect();
        for (a, b, r) in chords {
            let (a, b) = (a % n, b % n);
            if a != b {
                lines.push(Line { bus_a: a, bus_b: b, resistance: r });
            }
        }
        let mut converters: Vec<Converter> = vscs
            .into_iter()
            .map(|(b, x, r)| converter(b % n, ConverterMode::Vsc, x, r, 1000.0))
            .collect();
        converters.extend(cscs.into_iter().map(|(b, p)| converter(b % n, ConverterMode::Csc, 48.0, 0.2, p)));
        GridSpec { rated_voltage: 48.0, buses: loads, lines, converters }
    }
}

#[test]
fn random_two_vsc_instances_match_closed_form() {
    use rand::Rng;
    let mut rng = powertalk_core::derive_substream(11, "eq1-instances");
    for _ in 0..1000 {
        let r = rng.random_range(1.0..20.0);
        let (x1, x2) = (rng.random_range(46.0..50.0), rng.random_range(46.0..50.0));
        let (r1, r2) = (rng.random_range(0.05..1.0), rng.random_range(0.05..1.0));
        let grid = GridSpec {
            rated_voltage: 48.0,
            buses: vec![BusLoad::resistive(48.0 * 48.0 / r)],
            lines: vec![],
            converters: vec![
                converter(0, ConverterMode::Vsc, x1, r1, 1000.0),
                converter(0, ConverterMode::Vsc, x2, r2, 1000.0),
            ],
        };
        let v = solve_steady_state(&grid).unwrap().v[0];
        let expected = two_vsc_bus_voltage(r, x1, r1, x2, r2).unwrap();
        assert!((v - expected).abs() <= 1e-9 * 48.0, "{v} vs {expected}");
    }
}

proptest! {
    #[test]
    fn raising_a_reference_never_lowers_a_voltage(g in grid(), which in 0usize..100, dx in 0.01..0.5f64) {
        let before = solve_steady_state(&g).unwrap();
        let vscs = g.vsc_indices();
        let mut raised = g.clone();
        raised.converters[vscs[which % vscs.len()]].reference_voltage += dx;
        let after = solve_steady_state(&raised).unwrap();
        for (a, b) in after.v.iter().zip(&before.v) {
            prop_assert!(a >= &(b - 1e-9), "{a} < {b}");
        }
    }

    #[test]
    fn generation_covers_loads_and_losses(g in grid()) {
        let s = solve_steady_state(&g).unwrap();
        let scale = 1.0 + s.p_conv.iter().map(|p| p.abs()).sum::<f64>();
        prop_assert!(s.power_balance_error(&g).abs() <= 1e-6 * scale);
    }

    #[test]
    fn identical_grids_give_identical_states(g in grid()) {
        let a = solve_steady_state(&g).unwrap();
        let b = solve_steady_state(&g.clone()).unwrap();
        prop_assert!(a.v.iter().zip(&b.v).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.i_conv.iter().zip(&b.i_conv).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
