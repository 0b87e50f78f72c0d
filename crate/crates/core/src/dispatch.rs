//! Distributed economic dispatch over power talk.
//!
//! Every unit broadcasts its quantized generation capacity. Units are dispatched
//! in merit order, each one using its own decoded view of the cheaper units'
//! capacities. The relative cost increase δ compares this against dispatch with
//! exact, free knowledge, charging the signaling energy to the transmitters.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::mac::{csv_error, from_bits, run_session, to_bits, SessionOptions};
use crate::phy::PowerTalkParams;
use crate::rng::Substreams;

pub const MAX_BITS: usize = 32;

/// Dispatch study settings. Incremental costs are taken from the converters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchConfig {
    /// Demand to be served; defaults to `0.6 * U * p_cap / 2`.
    #[serde(rename = "demand_watts", default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<f64>,
    /// Quantizer full scale; true capacities are uniform on `[0, p_cap]`.
    #[serde(rename = "capacity_range_watts")]
    pub capacity_range: f64,
    #[serde(rename = "period_duration_seconds")]
    pub period_duration: f64,
    /// Price of unserved energy; defaults to ten times the largest cost.
    #[serde(rename = "penalty_cost_per_wh", default, skip_serializing_if = "Option::is_none")]
    pub penalty_cost: Option<f64>,
    pub monte_carlo_runs: usize,
    #[serde(default = "default_q_values")]
    pub q_values: Vec<usize>,
    #[serde(rename = "gamma_values_volts", default = "default_gammas")]
    pub gamma_values: Vec<f64>,
    /// Charge the signaling energy to the transmitters.
    #[serde(default = "default_true")]
    pub price_overhead: bool,
}

fn default_q_values() -> Vec<usize> {
    (1..=10).collect()
}

fn default_gammas() -> Vec<f64> {
    vec![0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
}

fn default_true() -> bool {
    true
}

impl DispatchConfig {
    pub fn demand(&self, units: usize) -> f64 {
        self.demand
            .unwrap_or(0.6 * units as f64 * self.capacity_range / 2.0)
    }

    pub fn penalty(&self, costs: &[f64]) -> f64 {
        self.penalty_cost
            .unwrap_or_else(|| 10.0 * costs.last().copied().unwrap_or(0.0))
    }

    pub fn validate_at(&self, grid: &GridSpec, prefix: &str) -> Result<()> {
        let path = |rest: &str| format!("{prefix}.{rest}");
        let costs = unit_costs(grid);
        if costs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::validation(
                "grid.converters",
                "incremental costs must be strictly increasing with converter index",
            ));
        }
        if let Some(d) = self.demand {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::validation(path("demand_watts"), "must be positive"));
            }
        }
        if !(self.capacity_range > 0.0 && self.capacity_range.is_finite()) {
            return Err(Error::validation(path("capacity_range_watts"), "must be positive"));
        }
        if !(self.period_duration > 0.0 && self.period_duration.is_finite()) {
            return Err(Error::validation(path("period_duration_seconds"), "must be positive"));
        }
        if let Some(p) = self.penalty_cost {
            if !(p > costs.last().copied().unwrap_or(0.0)) {
                return Err(Error::validation(
                    path("penalty_cost_per_wh"),
                    "must exceed the largest incremental cost",
                ));
            }
        }
        if self.monte_carlo_runs == 0 {
            return Err(Error::validation(path("monte_carlo_runs"), "must be at least 1"));
        }
        if self.q_values.is_empty() || self.q_values.iter().any(|&q| q == 0 || q > MAX_BITS) {
            return Err(Error::validation(path("q_values"), format!("need values in 1..={MAX_BITS}")));
        }
        if self.gamma_values.is_empty() || self.gamma_values.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::validation(path("gamma_values_volts"), "need positive values"));
        }
        Ok(())
    }
}

pub fn unit_costs(grid: &GridSpec) -> Vec<f64> {
    grid.converters.iter().map(|c| c.incremental_cost).collect()
}

/// Floor quantizer, `floor(p * 2^Q / p_cap)` clamped to `[0, 2^Q - 1]`.
pub fn quantize_capacity(p: f64, q: usize, p_cap: f64) -> u64 {
    assert!((1..=MAX_BITS).contains(&q), "Q = {q} out of range");
    let top = (1u64 << q) - 1;
    if !(0.0..=p_cap).contains(&p) {
        log::warn!("capacity {p} W outside [0, {p_cap}] W, clamped");
    }
    let code = (p * (1u64 << q) as f64 / p_cap).floor();
    if code.is_nan() || code <= 0.0 {
        0
    } else {
        (code as u64).min(top)
    }
}

pub fn dequantize(code: u64, q: usize, p_cap: f64) -> f64 {
    code as f64 * p_cap / (1u64 << q) as f64
}

/// Per-unit economic and droop data, in converter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Units {
    /// Incremental costs, cost units per Wh.
    pub costs: Vec<f64>,
    /// `1 / r_d`; a unit's share of any output correction.
    pub droop_conductances: Vec<f64>,
}

impl Units {
    pub fn from_grid(grid: &GridSpec) -> Self {
        Units {
            costs: unit_costs(grid),
            droop_conductances: grid.converters.iter().map(|c| 1.0 / c.virtual_resistance).collect(),
        }
    }

    /// Equal droop shares.
    pub fn uniform(costs: &[f64]) -> Self {
        Units {
            costs: costs.to_vec(),
            droop_conductances: vec![1.0; costs.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub setpoints: Vec<f64>,
    /// Settled outputs: setpoints, minus any over-commitment shared out by droop.
    pub outputs: Vec<f64>,
    /// `min(sum of setpoints, d)`.
    pub served: f64,
    pub unserved: f64,
    /// Over-commitment `sum of setpoints - d` absorbed by droop, if positive.
    pub surplus: f64,
    /// Sum of `c_u * output_u`, cost units per hour.
    pub generation_cost_rate: f64,
}

impl DispatchResult {
    fn settle(setpoints: Vec<f64>, costs: &[f64], conductances: &[f64], demand: f64) -> Self {
        let total: f64 = setpoints.iter().sum();
        let surplus = (total - demand).max(0.0);
        let outputs = if surplus > 0.0 {
            absorb_surplus(&setpoints, conductances, surplus)
        } else {
            setpoints.clone()
        };
        DispatchResult {
            generation_cost_rate: outputs.iter().zip(costs).map(|(p, c)| p * c).sum(),
            served: total.min(demand),
            unserved: (demand - total).max(0.0),
            surplus,
            outputs,
            setpoints,
        }
    }

    /// Generation cost plus unserved demand priced at `penalty`.
    pub fn total_cost_rate(&self, penalty: f64) -> f64 {
        self.generation_cost_rate + penalty * self.unserved
    }
}

/// Lowers the producing units by `lambda * g_u`, never below zero, with
/// `lambda` chosen so the reductions add up to `surplus`. This is how a
/// common bus-voltage rise redistributes output among droop-controlled units.
pub fn absorb_surplus(setpoints: &[f64], conductances: &[f64], surplus: f64) -> Vec<f64> {
    let mut out = setpoints.to_vec();
    let mut active: Vec<usize> = (0..setpoints.len())
        .filter(|&u| setpoints[u] > 0.0 && conductances[u] > 0.0)
        .collect();
    active.sort_by(|&a, &b| {
        (setpoints[a] / conductances[a]).total_cmp(&(setpoints[b] / conductances[b]))
    });
    let mut remaining = surplus;
    let mut weight: f64 = active.iter().map(|&u| conductances[u]).sum();
    for (i, &u) in active.iter().enumerate() {
        let lambda = remaining / weight;
        if setpoints[u] / conductances[u] <= lambda {
            remaining -= setpoints[u];
            weight -= conductances[u];
            out[u] = 0.0;
        } else {
            for &v in &active[i..] {
                out[v] -= lambda * conductances[v];
            }
            break;
        }
    }
    out
}

/// Greedy dispatch in increasing cost order.
pub fn merit_order(capacities: &[f64], costs: &[f64], demand: f64) -> DispatchResult {
    let mut cheaper = 0.0;
    let setpoints = capacities
        .iter()
        .map(|&cap| {
            let p = cap.min((demand - cheaper).max(0.0));
            cheaper += cap;
            p
        })
        .collect();
    DispatchResult::settle(setpoints, costs, &[], demand)
}

/// Unit `u` sets `min(true capacity, d - sum of the capacities it decoded
/// for cheaper units)`. Views that failed their check count as zero.
pub fn distributed_dispatch(
    views: &[Vec<Option<Vec<bool>>>],
    true_capacities: &[f64],
    units: &Units,
    demand: f64,
    p_cap: f64,
) -> DispatchResult {
    let setpoints = true_capacities
        .iter()
        .enumerate()
        .map(|(u, &cap)| {
            let reported: f64 = views[u][..u]
                .iter()
                .map(|v| {
                    v.as_ref()
                        .map_or(0.0, |bits| dequantize(from_bits(bits), bits.len(), p_cap))
                })
                .sum();
            cap.min((demand - reported).max(0.0))
        })
        .collect();
    DispatchResult::settle(setpoints, &units.costs, &units.droop_conductances, demand)
}

/// Monte Carlo summary of one (Q, γ) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaStats {
    pub q: usize,
    pub gamma: f64,
    pub delta_mean: f64,
    pub delta_stderr: f64,
    pub ber_estimate: f64,
    pub overhead_wh_mean: f64,
    pub runs: usize,
    pub aborted_sessions: usize,
}

fn draw_capacities(streams: &Substreams, run: usize, units: usize, p_cap: f64) -> Vec<f64> {
    let mut rng = streams.stream(&format!("run:{run}/capacities"));
    (0..units).map(|_| rng.random::<f64>() * p_cap).collect()
}

fn summarize(q: usize, gamma: f64, deltas: &[f64], errors: usize, bits: usize, overhead: f64, aborted: usize) -> DeltaStats {
    let n = deltas.len();
    let mean = deltas.iter().sum::<f64>() / n.max(1) as f64;
    let stderr = if n > 1 {
        (deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    DeltaStats {
        q,
        gamma,
        delta_mean: mean,
        delta_stderr: stderr,
        ber_estimate: if bits > 0 { errors as f64 / bits as f64 } else { 0.0 },
        overhead_wh_mean: overhead / n.max(1) as f64,
        runs: n,
        aborted_sessions: aborted,
    }
}

/// δ over `monte_carlo_runs` runs with `params.bits_per_payload` bits per unit.
///
/// Run `m` draws capacities from `run:{m}/capacities` and channel noise from
/// `run:{m}/...`, so cells of a sweep share their random inputs.
pub fn delta_metric(
    grid: &GridSpec,
    params: &PowerTalkParams,
    config: &DispatchConfig,
    streams: &Substreams,
) -> Result<DeltaStats> {
    let units = grid.converters.len();
    let q = params.bits_per_payload;
    if !(1..=MAX_BITS).contains(&q) {
        return Err(Error::InvalidParameter(format!("Q = {q} out of 1..={MAX_BITS}")));
    }
    let economics = Units::from_grid(grid);
    let costs = &economics.costs;
    let demand = config.demand(units);
    let penalty = config.penalty(costs);
    let hours = config.period_duration / 3600.0;
    let p_cap = config.capacity_range;

    let mut deltas = Vec::with_capacity(config.monte_carlo_runs);
    let (mut errors, mut bits, mut overhead, mut aborted) = (0, 0, 0.0, 0);
    for run in 0..config.monte_carlo_runs {
        let caps = draw_capacities(streams, run, units, p_cap);
        let payloads: Vec<Vec<bool>> = caps
            .iter()
            .map(|&c| to_bits(quantize_capacity(c, q, p_cap), q))
            .collect();
        let report = run_session(
            grid,
            params,
            &payloads,
            &[],
            &streams.child(&format!("run:{run}")),
            &SessionOptions::default(),
        )?;
        errors += report.bit_errors;
        bits += report.bits_detected;
        overhead += report.energy_overhead_wh;
        aborted += report.aborted as usize;

        let ideal = merit_order(&caps, costs, demand).total_cost_rate(penalty) * hours;
        if ideal == 0.0 {
            log::warn!("run {run}: zero ideal cost, excluded");
            continue;
        }
        let realized = distributed_dispatch(&report.views, &caps, &economics, demand, p_cap);
        let mut cost = realized.total_cost_rate(penalty) * hours;
        if config.price_overhead {
            cost += report
                .energy_by_transmitter_wh
                .iter()
                .zip(costs)
                .map(|(e, c)| e * c)
                .sum::<f64>();
        }
        deltas.push((cost - ideal) / ideal);
    }
    Ok(summarize(q, params.gamma, &deltas, errors, bits, overhead, aborted))
}

/// δ with error-free views and no signaling cost: the pure quantization loss.
pub fn quantization_delta(economics: &Units, config: &DispatchConfig, q: usize, streams: &Substreams) -> DeltaStats {
    let units = economics.len();
    let costs = &economics.costs;
    let demand = config.demand(units);
    let penalty = config.penalty(costs);
    let p_cap = config.capacity_range;
    let deltas: Vec<f64> = (0..config.monte_carlo_runs)
        .filter_map(|run| {
            let caps = draw_capacities(streams, run, units, p_cap);
            let view: Vec<Option<Vec<bool>>> = caps
                .iter()
                .map(|&c| Some(to_bits(quantize_capacity(c, q, p_cap), q)))
                .collect();
            let views = vec![view; units];
            let ideal = merit_order(&caps, costs, demand).total_cost_rate(penalty);
            let real = distributed_dispatch(&views, &caps, economics, demand, p_cap).total_cost_rate(penalty);
            (ideal > 0.0).then(|| (real - ideal) / ideal)
        })
        .collect();
    summarize(q, 0.0, &deltas, 0, 0, 0.0, 0)
}

/// δ for every `(Q, γ)` pair, rows ordered by Q then γ.
pub fn sweep(
    q_values: &[usize],
    gamma_values: &[f64],
    grid: &GridSpec,
    params: &PowerTalkParams,
    config: &DispatchConfig,
    streams: &Substreams,
) -> Result<Vec<DeltaStats>> {
    let cells: Vec<(usize, f64)> = q_values
        .iter()
        .flat_map(|&q| gamma_values.iter().map(move |&g| (q, g)))
        .collect();
    cells
        .par_iter()
        .map(|&(q, gamma)| {
            let p = PowerTalkParams {
                bits_per_payload: q,
                gamma,
                ..params.clone()
            };
            p.check_deviation_all(grid)?;
            delta_metric(grid, &p, config, streams)
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[DeltaStats]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Q", "gamma_volts", "delta_mean", "delta_stderr", "ber_estimate", "overhead_wh_mean"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.q.to_string(),
            r.gamma.to_string(),
            r.delta_mean.to_string(),
            r.delta_stderr.to_string(),
            r.ber_estimate.to_string(),
            r.overhead_wh_mean.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::grid::tests::{single_bus, vsc};
    use crate::grid::BusLoad;
    use crate::phy::tests::paper_params;
    use proptest::prelude::*;
    use rand::Rng;

    /// Exhaustive search over integer allocations.
    fn brute_force_cost(caps: &[u32], costs: &[f64], demand: u32, penalty: f64) -> f64 {
        fn go(u: usize, caps: &[u32], costs: &[f64], left: u32, acc: f64, penalty: f64, best: &mut f64) {
            if u == caps.len() {
                *best = best.min(acc + penalty * left as f64);
                return;
            }
            for p in 0..=caps[u].min(left) {
                go(u + 1, caps, costs, left - p, acc + costs[u] * p as f64, penalty, best);
            }
        }
        let mut best = f64::INFINITY;
        go(0, caps, costs, demand, 0.0, penalty, &mut best);
        best
    }

    pub(crate) fn six_unit_dispatch_grid() -> GridSpec {
        let mut g = single_bus(
            BusLoad::constant_power(1800.0),
            (0..6).map(|_| vsc(0, 48.0, 0.2)).collect(),
        );
        for (u, c) in g.converters.iter_mut().enumerate() {
            c.incremental_cost = 1.0 + 0.02 * u as f64;
        }
        g
    }

    pub(crate) fn config(runs: usize) -> DispatchConfig {
        DispatchConfig {
            demand: None,
            capacity_range: 1000.0,
            period_duration: 0.8,
            penalty_cost: None,
            monte_carlo_runs: runs,
            q_values: default_q_values(),
            gamma_values: default_gammas(),
            price_overhead: true,
        }
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(quantize_capacity(1000.0, 4, 1000.0), 15);
        assert_eq!(dequantize(15, 4, 1000.0), 1000.0 * 15.0 / 16.0);
        assert_eq!(quantize_capacity(0.0, 4, 1000.0), 0);
        assert_eq!(quantize_capacity(300.0, 4, 1000.0), 4);
        assert_eq!(dequantize(4, 4, 1000.0), 250.0);
        assert_eq!(quantize_capacity(-5.0, 4, 1000.0), 0);
        assert_eq!(quantize_capacity(1e6, 4, 1000.0), 15);
    }

    #[test]
    fn quantizer_never_over_reports() {
        let mut rng = crate::rng::derive_substream(0, "quantizer");
        for _ in 0..100_000 {
            let p_cap = 1.0 + rng.random::<f64>() * 5000.0;
            let p = rng.random::<f64>() * p_cap;
            let q = rng.random_range(1..=20);
            let r = dequantize(quantize_capacity(p, q, p_cap), q, p_cap);
            assert!(r <= p);
            if p < p_cap * (1.0 - 1.0 / (1u64 << q) as f64) {
                assert!(p < r + p_cap / (1u64 << q) as f64);
            }
        }
    }

    #[test]
    fn merit_order_examples() {
        let r = merit_order(&[6.0, 6.0], &[1.0, 2.0], 10.0);
        assert_eq!(r.setpoints, vec![6.0, 4.0]);
        assert_eq!(r.generation_cost_rate, 14.0);
        assert_eq!(brute_force_cost(&[6, 6], &[1.0, 2.0], 10, 20.0), 14.0);
        let zero = merit_order(&[3.0, 4.0], &[1.0, 2.0], 0.0);
        assert_eq!(zero.setpoints, vec![0.0, 0.0]);
        let short = merit_order(&[3.0, 4.0], &[1.0, 2.0], 10.0);
        assert_eq!(short.setpoints, vec![3.0, 4.0]);
        assert_eq!(short.unserved, 3.0);
        assert_eq!(short.served + short.unserved, 10.0);
    }

    #[test]
    fn surplus_shared_by_droop_conductance() {
        let out = absorb_surplus(&[10.0, 1.0, 5.0], &[1.0, 1.0, 1.0], 6.0);
        assert_eq!(out, vec![7.5, 0.0, 2.5]);
        let weighted = absorb_surplus(&[10.0, 10.0], &[1.0, 3.0], 4.0);
        assert_eq!(weighted, vec![9.0, 7.0]);
        let all = absorb_surplus(&[2.0, 3.0], &[1.0, 1.0], 5.0);
        assert_eq!(all, vec![0.0, 0.0]);

        let r = distributed_dispatch(
            &[vec![None, None], vec![None, None]],
            &[300.0, 900.0],
            &Units::uniform(&[1.0, 2.0]),
            500.0,
            1000.0,
        );
        // Unit 1 decoded nothing and commits 500 W on top of unit 0's 300 W.
        assert_eq!(r.setpoints, vec![300.0, 500.0]);
        assert_eq!(r.surplus, 300.0);
        assert_eq!(r.outputs, vec![150.0, 350.0]);
        assert_eq!(r.generation_cost_rate, 150.0 + 700.0);
    }

    #[test]
    fn merit_order_matches_brute_force_small() {
        let costs = [1.0, 1.5, 2.25];
        for a in 0..=8u32 {
            for b in 0..=8u32 {
                for d in 0..=18u32 {
                    let got = merit_order(&[a as f64, b as f64], &costs[..2], d as f64).total_cost_rate(20.0);
                    assert_eq!(got, brute_force_cost(&[a, b], &costs[..2], d, 20.0));
                }
            }
        }
    }

    #[test]
    fn bit_error_inflating_cheap_unit_causes_shortfall() {
        let costs = [1.0, 2.0];
        let caps = [300.0, 900.0];
        let q = 4;
        let p_cap = 1000.0;
        let code0 = quantize_capacity(caps[0], q, p_cap);
        let mut inflated = to_bits(code0, q);
        inflated[0] = true; // MSB flip: 4 -> 12, 250 W -> 750 W
        let views = vec![
            vec![Some(to_bits(code0, q)), Some(to_bits(quantize_capacity(caps[1], q, p_cap), q))],
            vec![Some(inflated), Some(to_bits(quantize_capacity(caps[1], q, p_cap), q))],
        ];
        let r = distributed_dispatch(&views, &caps, &Units::uniform(&costs), 1000.0, p_cap);
        // Unit 0: min(300, 1000) = 300. Unit 1 believes 750 W is cheaper: min(900, 250) = 250.
        assert_eq!(r.setpoints, vec![300.0, 250.0]);
        assert_eq!(r.unserved, 450.0);
        assert_eq!(r.total_cost_rate(20.0), 300.0 + 500.0 + 450.0 * 20.0);
    }

    #[test]
    fn single_unit_needs_no_communication() {
        for d in [0.0, 100.0, 700.0, 2000.0] {
            let views = vec![vec![None]];
            assert_eq!(
                distributed_dispatch(&views, &[700.0], &Units::uniform(&[1.0]), d, 1000.0),
                merit_order(&[700.0], &[1.0], d)
            );
        }
    }

    #[test]
    fn fine_quantization_approaches_ideal() {
        let costs = [1.0, 1.1, 1.2, 1.3];
        let q = 20;
        let p_cap = 1000.0;
        let mut rng = crate::rng::derive_substream(1, "fine");
        for _ in 0..200 {
            let caps: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * p_cap).collect();
            let view: Vec<_> = caps.iter().map(|&c| Some(to_bits(quantize_capacity(c, q, p_cap), q))).collect();
            let views = vec![view; 4];
            let d = 1200.0;
            let ideal = merit_order(&caps, &costs, d).total_cost_rate(13.0);
            let real = distributed_dispatch(&views, &caps, &Units::uniform(&costs), d, p_cap).total_cost_rate(13.0);
            assert!((real - ideal).abs() <= p_cap / (1u64 << q) as f64 * 1.3 * 4.0);
        }
    }

    #[test]
    fn near_perfect_channel_gives_tiny_delta() {
        let grid = six_unit_dispatch_grid();
        let params = PowerTalkParams {
            gamma: 1e-6,
            noise_sigma: 0.0,
            bits_per_payload: 20,
            ..paper_params()
        };
        let cfg = DispatchConfig {
            price_overhead: false,
            ..config(50)
        };
        let s = delta_metric(&grid, &params, &cfg, &Substreams::new(3)).unwrap();
        assert!(s.delta_mean.abs() <= 1e-4, "{s:?}");
        assert_eq!(s.ber_estimate, 0.0);
    }

    #[test]
    fn pure_quantization_loss_decreases_with_q() {
        let units = Units::from_grid(&six_unit_dispatch_grid());
        let streams = Substreams::new(8);
        let cfg = config(400);
        let d: Vec<f64> = (1..=10).map(|q| quantization_delta(&units, &cfg, q, &streams).delta_mean).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
        assert!(d.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn sweep_cells_match_single_calls_and_are_deterministic() {
        let grid = six_unit_dispatch_grid();
        let params = paper_params();
        let cfg = config(20);
        let streams = Substreams::new(5);
        let rows = sweep(&[3], &[0.1], &grid, &params, &cfg, &streams).unwrap();
        let single = delta_metric(
            &grid,
            &PowerTalkParams {
                bits_per_payload: 3,
                gamma: 0.1,
                ..params.clone()
            },
            &cfg,
            &streams,
        )
        .unwrap();
        assert_eq!(rows, vec![single]);

        let csv = |rows: &[DeltaStats]| {
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, rows).unwrap();
            buf
        };
        let a = sweep(&[1, 4], &[0.05, 0.5], &grid, &params, &cfg, &streams).unwrap();
        let b = sweep(&[1, 4], &[0.05, 0.5], &grid, &params, &cfg, &streams).unwrap();
        assert_eq!(csv(&a), csv(&b));
        assert_eq!(
            String::from_utf8(csv(&a)).unwrap().lines().next().unwrap(),
            "Q,gamma_volts,delta_mean,delta_stderr,ber_estimate,overhead_wh_mean"
        );
    }

    #[test]
    fn config_validation() {
        let grid = six_unit_dispatch_grid();
        assert!(config(10).validate_at(&grid, "application.dispatch").is_ok());
        let mut bad = config(10);
        bad.penalty_cost = Some(1.0);
        assert!(bad
            .validate_at(&grid, "application.dispatch")
            .unwrap_err()
            .to_string()
            .starts_with("application.dispatch.penalty_cost_per_wh"));
        let mut unordered = grid.clone();
        unordered.converters[3].incremental_cost = 0.5;
        assert!(config(10).validate_at(&unordered, "application.dispatch").is_err());
        assert!(DispatchConfig { q_values: vec![0], ..config(10) }
            .validate_at(&grid, "application.dispatch")
            .is_err());
    }

    proptest! {
        #[test]
        fn delta_non_negative_on_average(seed in any::<u64>()) {
            let grid = six_unit_dispatch_grid();
            let params = PowerTalkParams { bits_per_payload: 4, gamma: 0.2, ..paper_params() };
            let s = delta_metric(&grid, &params, &config(40), &Substreams::new(seed)).unwrap();
            prop_assert!(s.delta_mean > -3.0 * s.delta_stderr);
        }

        #[test]
        fn dispatch_respects_true_capacities(caps in proptest::collection::vec(0.0f64..1000.0, 1..6), d in 0.0f64..5000.0, flips in any::<u64>()) {
            let u = caps.len();
            let costs: Vec<f64> = (0..u).map(|k| 1.0 + k as f64).collect();
            let views: Vec<Vec<Option<Vec<bool>>>> = (0..u).map(|r| (0..u).map(|t| {
                let mut b = to_bits(quantize_capacity(caps[t], 6, 1000.0), 6);
                b[(r + t) % 6] ^= (flips >> (r * u + t)) & 1 == 1;
                Some(b)
            }).collect()).collect();
            let res = distributed_dispatch(&views, &caps, &Units::uniform(&costs), d, 1000.0);
            for ((p, o), c) in res.setpoints.iter().zip(&res.outputs).zip(&caps) {
                prop_assert!(*p >= 0.0 && p <= c);
                prop_assert!(*o >= 0.0 && o <= p);
            }
            let produced: f64 = res.outputs.iter().sum();
            prop_assert!((produced - res.served).abs() < 1e-9 * d.max(1.0));
            prop_assert!((res.served + res.unserved - d).abs() < 1e-9 * d.max(1.0));
        }
    }
}
