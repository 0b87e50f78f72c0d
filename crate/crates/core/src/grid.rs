//! Multibus DC microgrid model and its steady-state solver.
//!
//! Every bus carries an aggregate ZIP load (constant power, constant current,
//! constant resistance, each specified by its demand at the rated voltage).
//! Converters attach to buses either as droop-controlled voltage sources
//! (an ideal source `x` behind a virtual resistance `r_d`) or as constant
//! power injections. The solved bus voltages are simultaneously the power
//! flow and the channel output seen by every converter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Newton tolerance, per-unit on the rated voltage.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Solutions with any bus below this fraction of the rated voltage are rejected.
pub const DEFAULT_COLLAPSE_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConverterMode {
    Vsc,
    Csc,
}

impl std::fmt::Display for ConverterMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConverterMode::Vsc => f.write_str("VSC"),
            ConverterMode::Csc => f.write_str("CSC"),
        }
    }
}

/// Aggregate load at one bus; all three demands are quoted at the rated voltage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusLoad {
    #[serde(rename = "constant_power_watts", default)]
    pub constant_power: f64,
    /// Draws a fixed current of `constant_current / x_R`.
    #[serde(rename = "constant_current_watts", default)]
    pub constant_current: f64,
    /// Resistor of `x_R^2 / resistive`; zero means no resistor.
    #[serde(rename = "resistive_watts", default)]
    pub resistive: f64,
}

impl BusLoad {
    pub fn resistive(watts: f64) -> Self {
        BusLoad {
            resistive: watts,
            ..Default::default()
        }
    }

    pub fn constant_power(watts: f64) -> Self {
        BusLoad {
            constant_power: watts,
            ..Default::default()
        }
    }

    /// Equivalent resistance of the resistive component, if any.
    pub fn resistance(&self, rated_voltage: f64) -> Option<f64> {
        (self.resistive > 0.0).then(|| rated_voltage * rated_voltage / self.resistive)
    }

    /// Power actually drawn at bus voltage `v`.
    pub fn consumed_power(&self, v: f64, rated_voltage: f64) -> f64 {
        self.constant_power
            + v * self.constant_current / rated_voltage
            + v * v * self.resistive / (rated_voltage * rated_voltage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub bus_a: usize,
    pub bus_b: usize,
    #[serde(rename = "resistance_ohms")]
    pub resistance: f64,
}

/// Admissible range of the droop parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    #[serde(rename = "x_min_volts")]
    pub x_min: f64,
    #[serde(rename = "x_max_volts")]
    pub x_max: f64,
    #[serde(rename = "r_d_min_ohms")]
    pub r_d_min: f64,
    #[serde(rename = "r_d_max_ohms")]
    pub r_d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Converter {
    pub bus: usize,
    pub mode: ConverterMode,
    #[serde(rename = "reference_voltage_volts")]
    pub reference_voltage: f64,
    #[serde(rename = "virtual_resistance_ohms")]
    pub virtual_resistance: f64,
    #[serde(rename = "capacity_watts")]
    pub capacity: f64,
    #[serde(rename = "incremental_cost_per_wh")]
    pub incremental_cost: f64,
    /// Constant output in CSC mode. Defaults to the full capacity.
    #[serde(
        rename = "setpoint_watts",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub setpoint: Option<f64>,
    pub constraints: Constraints,
}

impl Converter {
    /// Power injected while in CSC mode.
    pub fn csc_output(&self) -> f64 {
        self.setpoint.unwrap_or(self.capacity)
    }

    pub fn is_vsc(&self) -> bool {
        self.mode == ConverterMode::Vsc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "rated_voltage_volts")]
    pub rated_voltage: f64,
    pub buses: Vec<BusLoad>,
    #[serde(default)]
    pub lines: Vec<Line>,
    pub converters: Vec<Converter>,
}

impl GridSpec {
    /// Checks every structural invariant; `prefix` qualifies error paths.
    pub fn validate_at(&self, prefix: &str) -> Result<()> {
        let path = |rest: &str| format!("{prefix}.{rest}");
        if !(self.rated_voltage > 0.0 && self.rated_voltage.is_finite()) {
            return Err(Error::validation(
                path("rated_voltage_volts"),
                "must be positive",
            ));
        }
        if self.buses.is_empty() {
            return Err(Error::validation(path("buses"), "at least one bus required"));
        }
        for (n, load) in self.buses.iter().enumerate() {
            for (key, value) in [
                ("constant_power_watts", load.constant_power),
                ("constant_current_watts", load.constant_current),
                ("resistive_watts", load.resistive),
            ] {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(Error::validation(
                        path(&format!("buses[{n}].{key}")),
                        "demand must be finite and non-negative",
                    ));
                }
            }
        }
        for (l, line) in self.lines.iter().enumerate() {
            for (key, bus) in [("bus_a", line.bus_a), ("bus_b", line.bus_b)] {
                if bus >= self.buses.len() {
                    return Err(Error::validation(
                        path(&format!("lines[{l}].{key}")),
                        format!("bus index {bus} out of range"),
                    ));
                }
            }
            if line.bus_a == line.bus_b {
                return Err(Error::validation(
                    path(&format!("lines[{l}]")),
                    "line endpoints must differ",
                ));
            }
            if !(line.resistance > 0.0 && line.resistance.is_finite()) {
                return Err(Error::validation(
                    path(&format!("lines[{l}].resistance_ohms")),
                    "must be positive",
                ));
            }
        }
        if !self.is_connected() {
            return Err(Error::validation(path("lines"), "bus graph is not connected"));
        }
        if !self.converters.iter().any(Converter::is_vsc) {
            return Err(Error::validation(
                path("converters"),
                "at least one converter must be in VSC mode",
            ));
        }
        for (u, c) in self.converters.iter().enumerate() {
            let cpath = |rest: &str| path(&format!("converters[{u}].{rest}"));
            if c.bus >= self.buses.len() {
                return Err(Error::validation(
                    cpath("bus"),
                    format!("bus index {} out of range", c.bus),
                ));
            }
            if !(c.capacity >= 0.0 && c.capacity.is_finite()) {
                return Err(Error::validation(cpath("capacity_watts"), "must be non-negative"));
            }
            if !(c.incremental_cost > 0.0 && c.incremental_cost.is_finite()) {
                return Err(Error::validation(
                    cpath("incremental_cost_per_wh"),
                    "must be positive",
                ));
            }
            if let Some(p) = c.setpoint {
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(Error::validation(cpath("setpoint_watts"), "must be non-negative"));
                }
            }
            let k = &c.constraints;
            if !(k.x_min < k.x_max && k.r_d_min > 0.0 && k.r_d_min <= k.r_d_max) {
                return Err(Error::validation(
                    cpath("constraints"),
                    "need x_min < x_max and 0 < r_d_min <= r_d_max",
                ));
            }
            if c.is_vsc() {
                if !(k.x_min..=k.x_max).contains(&c.reference_voltage) {
                    return Err(Error::validation(
                        cpath("reference_voltage_volts"),
                        format!(
                            "{} V outside [{}, {}]",
                            c.reference_voltage, k.x_min, k.x_max
                        ),
                    ));
                }
                if !(k.r_d_min..=k.r_d_max).contains(&c.virtual_resistance) {
                    return Err(Error::validation(
                        cpath("virtual_resistance_ohms"),
                        format!(
                            "{} ohm outside [{}, {}]",
                            c.virtual_resistance, k.r_d_min, k.r_d_max
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("grid")
    }

    fn is_connected(&self) -> bool {
        let n = self.buses.len();
        let mut adjacency = vec![Vec::new(); n];
        for line in &self.lines {
            if line.bus_a < n && line.bus_b < n {
                adjacency[line.bus_a].push(line.bus_b);
                adjacency[line.bus_b].push(line.bus_a);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for &m in &adjacency[b] {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn converter_bus(&self, converter: usize) -> usize {
        self.converters[converter].bus
    }

    pub fn vsc_indices(&self) -> Vec<usize> {
        (0..self.converters.len())
            .filter(|&u| self.converters[u].is_vsc())
            .collect()
    }

    /// Nodal current mismatch in amps: net injection minus net withdrawal.
    fn mismatch(&self, v: &[f64]) -> Vec<f64> {
        let x_r = self.rated_voltage;
        let mut f: Vec<f64> = self
            .buses
            .iter()
            .zip(v)
            .map(|(load, &vn)| {
                -(vn * load.resistive / (x_r * x_r)
                    + load.constant_current / x_r
                    + load.constant_power / vn)
            })
            .collect();
        for c in &self.converters {
            let vn = v[c.bus];
            f[c.bus] += match c.mode {
                ConverterMode::Vsc => (c.reference_voltage - vn) / c.virtual_resistance,
                ConverterMode::Csc => c.csc_output() / vn,
            };
        }
        for line in &self.lines {
            let i = (v[line.bus_a] - v[line.bus_b]) / line.resistance;
            f[line.bus_a] -= i;
            f[line.bus_b] += i;
        }
        f
    }

    fn jacobian(&self, v: &[f64]) -> DMatrix<f64> {
        let n = self.buses.len();
        let x_r = self.rated_voltage;
        let mut j = DMatrix::zeros(n, n);
        for (b, load) in self.buses.iter().enumerate() {
            j[(b, b)] += -load.resistive / (x_r * x_r) + load.constant_power / (v[b] * v[b]);
        }
        for c in &self.converters {
            let vn = v[c.bus];
            j[(c.bus, c.bus)] += match c.mode {
                ConverterMode::Vsc => -1.0 / c.virtual_resistance,
                ConverterMode::Csc => -c.csc_output() / (vn * vn),
            };
        }
        for line in &self.lines {
            let g = 1.0 / line.resistance;
            let (a, b) = (line.bus_a, line.bus_b);
            j[(a, a)] -= g;
            j[(b, b)] -= g;
            j[(a, b)] += g;
            j[(b, a)] += g;
        }
        j
    }

    /// Linear (voltage-independent) self-conductance per bus, for residual scaling.
    fn self_conductance(&self) -> Vec<f64> {
        let x_r = self.rated_voltage;
        let mut g: Vec<f64> = self
            .buses
            .iter()
            .map(|l| l.resistive / (x_r * x_r))
            .collect();
        for c in self.converters.iter().filter(|c| c.is_vsc()) {
            g[c.bus] += 1.0 / c.virtual_resistance;
        }
        for line in &self.lines {
            g[line.bus_a] += 1.0 / line.resistance;
            g[line.bus_b] += 1.0 / line.resistance;
        }
        g
    }
}

/// Solved operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    /// Bus voltages in volts.
    pub v: Vec<f64>,
    /// Converter output currents in amps.
    pub i_conv: Vec<f64>,
    /// Converter output powers in watts.
    pub p_conv: Vec<f64>,
    /// Largest nodal mismatch, expressed as a voltage correction per-unit on `x_R`.
    pub residual_norm: f64,
}

impl SteadyState {
    /// Generated minus consumed power (loads plus line losses), in watts.
    pub fn power_balance_error(&self, grid: &GridSpec) -> f64 {
        let generated: f64 = self.p_conv.iter().sum();
        let consumed: f64 = grid
            .buses
            .iter()
            .zip(&self.v)
            .map(|(load, &v)| load.consumed_power(v, grid.rated_voltage))
            .sum();
        let losses: f64 = grid
            .lines
            .iter()
            .map(|l| (self.v[l.bus_a] - self.v[l.bus_b]).powi(2) / l.resistance)
            .sum();
        generated - consumed - losses
    }

    /// Kirchhoff current mismatch per bus, in amps.
    pub fn kcl_residuals(&self, grid: &GridSpec) -> Vec<f64> {
        grid.mismatch(&self.v)
    }
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub collapse_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            collapse_floor: DEFAULT_COLLAPSE_FLOOR,
        }
    }
}

/// Bus voltage of a single bus fed by two droop-controlled sources into a resistor.
pub fn two_vsc_bus_voltage(r: f64, x1: f64, r_d1: f64, x2: f64, r_d2: f64) -> Result<f64> {
    for (name, value) in [("R", r), ("x1", x1), ("r_d1", r_d1), ("x2", x2), ("r_d2", r_d2)] {
        if !(value > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive, got {value}"
            )));
        }
    }
    Ok(r * (r_d1 * x2 + r_d2 * x1) / (r * (r_d1 + r_d2) + r_d1 * r_d2))
}

pub fn solve_steady_state(grid: &GridSpec) -> Result<SteadyState> {
    solve_steady_state_with(grid, &SolverOptions::default())
}

/// Damped Newton iteration on the nodal current balance, started from `x_R`
/// on every bus so constant-power loads settle on the high-voltage root.
pub fn solve_steady_state_with(grid: &GridSpec, opts: &SolverOptions) -> Result<SteadyState> {
    let x_r = grid.rated_voltage;
    let n = grid.buses.len();
    let g_self = grid.self_conductance();
    let scaled_norm = |f: &[f64]| {
        f.iter()
            .zip(&g_self)
            .map(|(fi, gi)| (fi / gi).abs())
            .fold(0.0, f64::max)
            / x_r
    };

    let mut v = vec![x_r; n];
    let mut f = grid.mismatch(&v);
    let mut residual = scaled_norm(&f);
    let mut converged = residual <= opts.tolerance;
    let mut iterations = 0;
    // One extra step after reaching the tolerance squeezes the residual to
    // round-off; it is only kept if it does not make things worse.
    let mut polish = true;

    while iterations < opts.max_iterations && (!converged || polish) {
        if converged {
            polish = false;
        }
        iterations += 1;
        let jac = grid.jacobian(&v);
        let rhs = DVector::from_iterator(n, f.iter().map(|x| -x));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(Error::NoSolution {
                iterations,
                residual,
            });
        };

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = v.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if trial.iter().all(|&x| x > 0.0 && x.is_finite()) {
                let f_trial = grid.mismatch(&trial);
                let r_trial = scaled_norm(&f_trial);
                if r_trial <= residual {
                    accepted = Some((trial, f_trial, r_trial));
                    break;
                }
            }
            if converged {
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, f_trial, r_trial)) => {
                v = trial;
                f = f_trial;
                residual = r_trial;
            }
            None if converged => break,
            None => {
                return Err(Error::NoSolution {
                    iterations,
                    residual,
                })
            }
        }
        converged = converged || residual <= opts.tolerance;
    }

    if !converged {
        return Err(Error::NoSolution {
            iterations,
            residual,
        });
    }
    if let Some((bus, &voltage)) = v
        .iter()
        .enumerate()
        .find(|(_, &vn)| vn < opts.collapse_floor * x_r)
    {
        return Err(Error::VoltageCollapse { bus, voltage });
    }

    let (i_conv, p_conv) = injections(grid, &v);
    Ok(SteadyState {
        v,
        i_conv,
        p_conv,
        residual_norm: residual,
    })
}

fn injections(grid: &GridSpec, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    grid.converters
        .iter()
        .map(|c| {
            let vn = v[c.bus];
            match c.mode {
                ConverterMode::Vsc => {
                    let i = (c.reference_voltage - vn) / c.virtual_resistance;
                    (i, vn * i)
                }
                ConverterMode::Csc => (c.csc_output() / vn, c.csc_output()),
            }
        })
        .unzip()
}

/// Per-converter output current and power for the bus voltages in `state`.
pub fn converter_injections(grid: &GridSpec, state: &SteadyState) -> Result<(Vec<f64>, Vec<f64>)> {
    if state.v.len() != grid.buses.len() {
        return Err(Error::InvalidArgument(format!(
            "state has {} bus voltages, grid has {} buses",
            state.v.len(),
            grid.buses.len()
        )));
    }
    if let Some(c) = grid.converters.iter().find(|c| c.bus >= state.v.len()) {
        return Err(Error::InvalidArgument(format!(
            "converter references bus {} outside the state",
            c.bus
        )));
    }
    Ok(injections(grid, &state.v))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn constraints() -> Constraints {
        Constraints {
            x_min: 45.6,
            x_max: 50.4,
            r_d_min: 0.01,
            r_d_max: 2.0,
        }
    }

    pub(crate) fn vsc(bus: usize, x: f64, r_d: f64) -> Converter {
        Converter {
            bus,
            mode: ConverterMode::Vsc,
            reference_voltage: x,
            virtual_resistance: r_d,
            capacity: 1000.0,
            incremental_cost: 1.0,
            setpoint: None,
            constraints: constraints(),
        }
    }

    pub(crate) fn single_bus(load: BusLoad, converters: Vec<Converter>) -> GridSpec {
        GridSpec {
            rated_voltage: 48.0,
            buses: vec![load],
            lines: vec![],
            converters,
        }
    }

    #[test]
    fn eq1_golden_value() {
        let v = two_vsc_bus_voltage(4.8, 48.0, 0.2, 48.0, 0.2).unwrap();
        // 48 * 4.8 * 0.4 / (4.8 * 0.4 + 0.04), evaluated once and frozen.
        assert!((v - 47.020_408_163_265_31).abs() < 1e-12);
    }

    #[test]
    fn eq1_no_load_limit() {
        let v = two_vsc_bus_voltage(1e12, 48.0, 0.1, 48.0, 0.1).unwrap();
        assert!((v - 48.0).abs() < 1e-9);
    }

    #[test]
    fn eq1_positive_shift_with_gamma() {
        let base = two_vsc_bus_voltage(4.8, 48.0, 0.2, 48.0, 0.2).unwrap();
        let up = two_vsc_bus_voltage(4.8, 48.25, 0.2, 48.0, 0.2).unwrap();
        assert!(up > base);
    }

    #[test]
    fn eq1_rejects_non_positive() {
        assert!(matches!(
            two_vsc_bus_voltage(0.0, 48.0, 0.2, 48.0, 0.2),
            Err(Error::InvalidParameter(_))
        ));
        assert!(two_vsc_bus_voltage(4.8, 48.0, -0.2, 48.0, 0.2).is_err());
    }

    #[test]
    fn solver_matches_closed_form_single_bus() {
        let grid = single_bus(BusLoad::resistive(480.0), vec![vsc(0, 48.3, 0.2), vsc(0, 47.9, 0.35)]);
        let r = grid.buses[0].resistance(48.0).unwrap();
        let expected = two_vsc_bus_voltage(r, 48.3, 0.2, 47.9, 0.35).unwrap();
        let state = solve_steady_state(&grid).unwrap();
        assert!((state.v[0] - expected).abs() <= 1e-9 * 48.0);
    }

    #[test]
    fn constant_power_high_root() {
        let d_cp = 2000.0;
        let grid = single_bus(BusLoad::constant_power(d_cp), vec![vsc(0, 48.0, 0.1)]);
        let state = solve_steady_state(&grid).unwrap();
        // v^2 - 48 v + 0.1 d_cp = 0, high root
        let disc: f64 = 48.0 * 48.0 - 4.0 * 0.1 * d_cp;
        let high = (48.0 + disc.sqrt()) / 2.0;
        assert!((state.v[0] - high).abs() < 1e-9);
    }

    #[test]
    fn zero_load_equal_references_is_fixed_point() {
        let grid = GridSpec {
            rated_voltage: 48.0,
            buses: vec![BusLoad::default(); 3],
            lines: vec![
                Line { bus_a: 0, bus_b: 1, resistance: 0.1 },
                Line { bus_a: 1, bus_b: 2, resistance: 0.2 },
            ],
            converters: vec![vsc(0, 48.0, 0.2), vsc(2, 48.0, 0.4)],
        };
        let state = solve_steady_state(&grid).unwrap();
        assert!(state.v.iter().all(|&v| v == 48.0));
        assert!(state.i_conv.iter().all(|&i| i == 0.0));
    }

    #[test]
    fn infeasible_constant_power_is_reported() {
        // 48^2 / (4 * 0.1) = 5760 W is the nose of the PV curve.
        let grid = single_bus(BusLoad::constant_power(8000.0), vec![vsc(0, 48.0, 0.1)]);
        assert!(matches!(
            solve_steady_state(&grid),
            Err(Error::NoSolution { .. })
        ));
    }

    #[test]
    fn collapse_floor_is_enforced() {
        // Feasible but deep: high root of v^2 - 48 v + 0.1 * 5600 = 0 is 28 V.
        let grid = single_bus(BusLoad::constant_power(5600.0), vec![vsc(0, 48.0, 0.1)]);
        let opts = SolverOptions {
            collapse_floor: 0.7,
            ..Default::default()
        };
        assert!(matches!(
            solve_steady_state_with(&grid, &opts),
            Err(Error::VoltageCollapse { bus: 0, .. })
        ));
    }

    #[test]
    fn csc_injection_definition() {
        let mut csc = vsc(0, 48.0, 0.2);
        csc.mode = ConverterMode::Csc;
        csc.setpoint = Some(100.0);
        let grid = single_bus(BusLoad::resistive(480.0), vec![vsc(0, 48.0, 0.2), csc]);
        let state = SteadyState {
            v: vec![48.0],
            i_conv: vec![],
            p_conv: vec![],
            residual_norm: 0.0,
        };
        let (i, p) = converter_injections(&grid, &state).unwrap();
        assert_eq!(i[1], 100.0 / 48.0);
        assert_eq!(p[1], 100.0);
        assert_eq!(i[0], 0.0);
    }

    #[test]
    fn injections_from_golden_voltage() {
        let grid = single_bus(BusLoad::resistive(480.0), vec![vsc(0, 48.0, 0.2), vsc(0, 48.0, 0.2)]);
        let state = solve_steady_state(&grid).unwrap();
        let (i, _) = converter_injections(&grid, &state).unwrap();
        assert!((i[0] - (48.0 - state.v[0]) / 0.2).abs() < 1e-12);
        let again = converter_injections(&grid, &state).unwrap();
        assert_eq!((i, state.p_conv.clone()), (again.0, again.1));
    }

    #[test]
    fn injections_dimension_mismatch() {
        let grid = single_bus(BusLoad::default(), vec![vsc(0, 48.0, 0.2)]);
        let state = SteadyState {
            v: vec![48.0, 48.0],
            i_conv: vec![],
            p_conv: vec![],
            residual_norm: 0.0,
        };
        assert!(matches!(
            converter_injections(&grid, &state),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn validation_paths() {
        let mut grid = single_bus(BusLoad::default(), vec![vsc(0, 48.0, 0.2)]);
        grid.converters[0].mode = ConverterMode::Csc;
        let err = grid.validate().unwrap_err();
        assert!(err.to_string().contains("grid.converters"));

        let mut grid = single_bus(BusLoad::default(), vec![vsc(0, 52.0, 0.2)]);
        let err = grid.validate().unwrap_err();
        assert!(err.to_string().contains("converters[0].reference_voltage_volts"));

        grid.converters[0].reference_voltage = 48.0;
        grid.buses.push(BusLoad::default());
        let err = grid.validate().unwrap_err();
        assert!(err.to_string().contains("not connected"));

        grid.lines.push(Line { bus_a: 1, bus_b: 1, resistance: 0.1 });
        assert!(grid.validate().is_err());
        grid.lines[0] = Line { bus_a: 0, bus_b: 1, resistance: 0.0 };
        assert!(grid.validate().is_err());
        grid.lines[0].resistance = 0.1;
        grid.validate().unwrap();
        grid.buses[1].resistive = -1.0;
        assert!(grid.validate().is_err());
    }
}
