//! Fixtures shared by the benchmarks.

use powertalk_core::{BusLoad, Constraints, Converter, ConverterMode, GridSpec, Line, PowerTalkParams, Signaling};

pub fn converter(bus: usize, x: f64, r_d: f64) -> Converter {
    Converter {
        bus,
        mode: ConverterMode::Vsc,
        reference_voltage: x,
        virtual_resistance: r_d,
        capacity: 1000.0,
        incremental_cost: 1.0,
        setpoint: None,
        constraints: Constraints {
            x_min: 45.6,
            x_max: 50.4,
            r_d_min: 0.01,
            r_d_max: 2.0,
        },
    }
}

/// `n` buses on a ring with one chord per four buses and a VSC on every other bus.
pub fn ring_grid(n: usize) -> GridSpec {
    let buses = (0..n)
        .map(|b| BusLoad {
            constant_power: 40.0 + (b % 5) as f64 * 10.0,
            constant_current: 20.0,
            resistive: 30.0,
        })
        .collect();
    let mut lines: Vec<Line> = (0..n)
        .map(|b| Line {
            bus_a: b,
            bus_b: (b + 1) % n,
            resistance: 0.02 + 0.01 * (b % 3) as f64,
        })
        .collect();
    lines.extend((0..n).step_by(4).filter(|&b| n > 4 && (b + n / 2) % n != b).map(|b| Line {
        bus_a: b,
        bus_b: (b + n / 2) % n,
        resistance: 0.1,
    }));
    let converters = (0..n).step_by(2).map(|b| converter(b, 48.0 + 0.05 * (b % 3) as f64, 0.2)).collect();
    GridSpec {
        rated_voltage: 48.0,
        buses,
        lines,
        converters,
    }
}

/// Six VSCs on one bus, as in the dispatch study.
pub fn dispatch_grid() -> GridSpec {
    GridSpec {
        rated_voltage: 48.0,
        buses: vec![BusLoad::constant_power(1800.0)],
        lines: vec![],
        converters: (0..6)
            .map(|u| Converter {
                incremental_cost: 1.0 + 0.02 * u as f64,
                ..converter(0, 48.0, 0.2)
            })
            .collect(),
    }
}

pub fn params(bits: usize, crc: bool) -> PowerTalkParams {
    PowerTalkParams {
        gamma: 0.25,
        slot_duration: 5e-3,
        sampling_frequency: 50e3,
        noise_sigma: 0.05,
        bits_per_payload: bits,
        crc_enabled: crc,
        max_retries: 3,
        signaling: Signaling::ReferenceVoltage,
    }
}
