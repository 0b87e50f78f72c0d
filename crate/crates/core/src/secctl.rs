//! Wireless-networked secondary control and regulator-set reconfiguration.
//!
//! A subset of DERs (the regulators) runs in VSC mode and executes a consensus
//! law over the wireless graph; the rest inject their capacity as CSCs. When a
//! jammer partitions the graph the regulators can no longer share current, and
//! the next power-talk phase lets every DER learn the whole graph and pick a
//! new connected regulator set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dispatch::{dequantize, quantize_capacity};
use crate::error::{Error, Result};
use crate::events::Event;
use crate::grid::{solve_steady_state, ConverterMode, GridSpec, SteadyState};
use crate::mac::{csv_error, from_bits, run_session, to_bits, SessionOptions, SessionReport};
use crate::phy::PowerTalkParams;
use crate::rng::Substreams;

/// Largest network for exhaustive regulator selection.
pub const MAX_SELECTION_NODES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jammer {
    #[serde(rename = "position_meters")]
    pub position: [f64; 2],
    #[serde(rename = "radius_meters")]
    pub radius: f64,
    #[serde(rename = "active_from_seconds")]
    pub active_from: f64,
    #[serde(rename = "active_until_seconds", default, skip_serializing_if = "Option::is_none")]
    pub active_until: Option<f64>,
}

impl Jammer {
    pub fn is_active(&self, t: f64) -> bool {
        t >= self.active_from && self.active_until.is_none_or(|end| t < end)
    }

    fn covers(&self, p: [f64; 2]) -> bool {
        distance(self.position, p) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirelessSpec {
    /// One position per DER, in converter order.
    #[serde(rename = "positions_meters")]
    pub positions: Vec<[f64; 2]>,
    #[serde(rename = "comm_range_meters")]
    pub comm_range: f64,
    #[serde(default)]
    pub jammers: Vec<Jammer>,
}

impl WirelessSpec {
    pub fn validate_at(&self, ders: usize, prefix: &str) -> Result<()> {
        if self.positions.len() != ders {
            return Err(Error::validation(
                format!("{prefix}.positions_meters"),
                format!("{} positions for {ders} DERs", self.positions.len()),
            ));
        }
        if self.positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::validation(format!("{prefix}.positions_meters"), "coordinates must be finite"));
        }
        if !(self.comm_range > 0.0 && self.comm_range.is_finite()) {
            return Err(Error::validation(format!("{prefix}.comm_range_meters"), "must be positive"));
        }
        for (k, j) in self.jammers.iter().enumerate() {
            if !(j.radius >= 0.0 && j.radius.is_finite()) {
                return Err(Error::validation(
                    format!("{prefix}.jammers[{k}].radius_meters"),
                    "must be non-negative",
                ));
            }
            if j.active_until.is_some_and(|end| end < j.active_from) {
                return Err(Error::validation(
                    format!("{prefix}.jammers[{k}].active_until_seconds"),
                    "must not precede active_from_seconds",
                ));
            }
        }
        Ok(())
    }

    /// Nodes inside the disk of an active jammer at `t`.
    pub fn jammed(&self, t: f64) -> Vec<bool> {
        self.positions
            .iter()
            .map(|&p| self.jammers.iter().any(|j| j.is_active(t) && j.covers(p)))
            .collect()
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Undirected graph on DER indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    rows: Vec<Vec<bool>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Adjacency {
            rows: vec![vec![false; n]; n],
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut a = Adjacency::empty(n);
        for &(i, j) in edges {
            a.set(i, j, true);
        }
        a
    }

    pub fn complete(n: usize) -> Self {
        let mut a = Adjacency::empty(n);
        for i in 0..n {
            for j in i + 1..n {
                a.set(i, j, true);
            }
        }
        a
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.rows[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        if i != j {
            self.rows[i][j] = on;
            self.rows[j][i] = on;
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        self.rows[i].iter().filter(|&&b| b).count()
    }

    /// Row `i` as a bitmap, entry `j` at position `j`.
    pub fn row(&self, i: usize) -> &[bool] {
        &self.rows[i]
    }
}

/// Disk-graph links, minus every link of a node covered by an active jammer.
pub fn build_wireless_graph(spec: &WirelessSpec, t: f64) -> Adjacency {
    let n = spec.positions.len();
    let jammed = spec.jammed(t);
    let mut adj = Adjacency::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if !jammed[i] && !jammed[j] && distance(spec.positions[i], spec.positions[j]) <= spec.comm_range {
                adj.set(i, j, true);
            }
        }
    }
    adj
}

/// Whether `subset` induces a connected subgraph.
pub fn is_connected(adj: &Adjacency, subset: &[usize]) -> Result<bool> {
    let Some(&first) = subset.first() else {
        return Err(Error::InvalidArgument("connectivity of an empty set".into()));
    };
    if let Some(&bad) = subset.iter().find(|&&i| i >= adj.len()) {
        return Err(Error::InvalidArgument(format!("node {bad} not in graph")));
    }
    let mut inside = vec![false; adj.len()];
    subset.iter().for_each(|&i| inside[i] = true);
    let mut seen = vec![false; adj.len()];
    let mut queue = std::collections::VecDeque::from([first]);
    seen[first] = true;
    let mut reached = 1;
    while let Some(i) = queue.pop_front() {
        for j in 0..adj.len() {
            if inside[j] && !seen[j] && adj.has_edge(i, j) {
                seen[j] = true;
                reached += 1;
                queue.push_back(j);
            }
        }
    }
    let distinct = inside.iter().filter(|&&b| b).count();
    Ok(reached == distinct)
}

/// Connected `k`-subset of maximum total capacity, ties to the
/// lexicographically smallest. Isolated nodes are never chosen. Empty when no
/// connected `k`-subset exists.
pub fn select_regulators(adj: &Adjacency, capacities: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = adj.len();
    if n > MAX_SELECTION_NODES {
        return Err(Error::SizeLimit {
            what: format!("regulator selection over {n} nodes"),
            limit: MAX_SELECTION_NODES,
        });
    }
    if capacities.len() != n {
        return Err(Error::InvalidArgument(format!("{} capacities for {n} nodes", capacities.len())));
    }
    if k == 0 || k > n {
        return Ok(Vec::new());
    }
    let eligible: Vec<usize> = (0..n).filter(|&i| n == 1 || adj.degree(i) > 0).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut combo = Vec::with_capacity(k);
    fn visit(
        start: usize,
        k: usize,
        eligible: &[usize],
        combo: &mut Vec<usize>,
        adj: &Adjacency,
        caps: &[f64],
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if combo.len() == k {
            let total: f64 = combo.iter().map(|&i| caps[i]).sum();
            if best.as_ref().is_none_or(|(b, _)| total > *b) && is_connected(adj, combo).unwrap_or(false) {
                *best = Some((total, combo.clone()));
            }
            return;
        }
        for idx in start..eligible.len() {
            if eligible.len() - idx < k - combo.len() {
                break;
            }
            combo.push(eligible[idx]);
            visit(idx + 1, k, eligible, combo, adj, caps, best);
            combo.pop();
        }
    }
    visit(0, k, &eligible, &mut combo, adj, capacities, &mut best);
    Ok(best.map(|(_, set)| set).unwrap_or_default())
}

/// Keeps `incumbent` while it is still connected with no isolated member;
/// otherwise picks a new set of the same size.
pub fn decide_regulators(adj: &Adjacency, capacities: &[f64], incumbent: &[usize], k: usize) -> Result<Vec<usize>> {
    let usable = !incumbent.is_empty()
        && incumbent.len() == k
        && incumbent.iter().all(|&i| i < adj.len() && (incumbent.len() == 1 || adj.degree(i) > 0))
        && is_connected(adj, incumbent)?;
    if usable {
        let mut keep = incumbent.to_vec();
        keep.sort_unstable();
        return Ok(keep);
    }
    select_regulators(adj, capacities, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusGains {
    /// Voltage-observer coupling.
    pub epsilon: f64,
    /// Voltage restoration gain, volts per volt per step.
    pub k_v: f64,
    /// Current-sharing gain, volts per unit of per-unit current per step.
    pub k_c: f64,
}

impl Default for ConsensusGains {
    fn default() -> Self {
        ConsensusGains {
            epsilon: 0.3,
            k_v: 0.05,
            k_c: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorState {
    /// Correction added to the nominal reference.
    pub correction: f64,
    /// Observer estimate of the mean regulator voltage.
    pub estimate: f64,
    pub last_voltage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecCtlState {
    /// Per DER; `None` for CSCs.
    pub regulators: Vec<Option<RegulatorState>>,
    /// Uncorrected references, per DER.
    pub nominal_references: Vec<f64>,
    pub gains: ConsensusGains,
    /// Distance kept from the reference limits so a later power-talk symbol still fits.
    pub headroom: f64,
}

/// Output current as a fraction of rated current `p_max / x_R`.
pub fn per_unit_current(grid: &GridSpec, state: &SteadyState, der: usize) -> f64 {
    state.i_conv[der] * grid.rated_voltage / grid.converters[der].capacity
}

impl SecCtlState {
    /// Fresh state for `regulators`, with observers started at the measured voltages.
    pub fn new(grid: &GridSpec, regulators: &[usize], measured: &SteadyState, gains: ConsensusGains) -> Self {
        let mut s = SecCtlState {
            regulators: vec![None; grid.converters.len()],
            nominal_references: grid.converters.iter().map(|c| c.reference_voltage).collect(),
            gains,
            headroom: 0.0,
        };
        s.reassign(grid, regulators, measured);
        s
    }

    pub fn regulator_set(&self) -> Vec<usize> {
        (0..self.regulators.len()).filter(|&i| self.regulators[i].is_some()).collect()
    }

    /// Newcomers start with zero correction and members that stay keep theirs.
    /// Every observer restarts from the measured voltage.
    pub fn reassign(&mut self, grid: &GridSpec, regulators: &[usize], measured: &SteadyState) {
        let next: Vec<Option<RegulatorState>> = (0..self.regulators.len())
            .map(|i| {
                regulators.contains(&i).then(|| {
                    let v = measured.v[grid.converters[i].bus];
                    RegulatorState {
                        correction: self.regulators[i].map_or(0.0, |r| r.correction),
                        estimate: v,
                        last_voltage: v,
                    }
                })
            })
            .collect();
        self.regulators = next;
    }

    /// Writes modes and references into `grid`: regulators as corrected VSCs,
    /// everyone else as CSCs at their nominal reference.
    pub fn apply_to(&self, grid: &mut GridSpec) {
        for (i, c) in grid.converters.iter_mut().enumerate() {
            match self.regulators[i] {
                Some(r) => {
                    c.mode = ConverterMode::Vsc;
                    c.reference_voltage = self.nominal_references[i] + r.correction;
                }
                None => {
                    c.mode = ConverterMode::Csc;
                    c.reference_voltage = self.nominal_references[i];
                }
            }
        }
    }
}

/// One synchronous round among the regulators over `adj`, then re-solves `grid`.
pub fn consensus_step(
    state: &mut SecCtlState,
    adj: &Adjacency,
    grid: &mut GridSpec,
    measured: &SteadyState,
) -> Result<SteadyState> {
    let regs = state.regulator_set();
    let x_r = grid.rated_voltage;
    let g = state.gains;
    let voltage = |i: usize| measured.v[grid.converters[i].bus];
    let ibar: Vec<f64> = (0..grid.converters.len())
        .map(|i| per_unit_current(grid, measured, i))
        .collect();
    let old: Vec<Option<RegulatorState>> = state.regulators.clone();
    for &i in &regs {
        let r = old[i].unwrap();
        let neighbors = regs.iter().copied().filter(|&j| adj.has_edge(i, j));
        let mut observer = 0.0;
        let mut sharing = 0.0;
        for j in neighbors {
            observer += old[j].unwrap().estimate - r.estimate;
            sharing += ibar[j] - ibar[i];
        }
        let v = voltage(i);
        let estimate = r.estimate + g.epsilon * observer + (v - r.last_voltage);
        let mut correction = r.correction + g.k_v * (x_r - estimate) + g.k_c * sharing;
        let limits = &grid.converters[i].constraints;
        let (lo, hi) = (limits.x_min + state.headroom, limits.x_max - state.headroom);
        let x = state.nominal_references[i] + correction;
        if x < lo || x > hi {
            log::debug!("regulator {i}: reference {x:.4} V clamped");
            correction = x.clamp(lo, hi) - state.nominal_references[i];
        }
        state.regulators[i] = Some(RegulatorState {
            correction,
            estimate,
            last_voltage: v,
        });
    }
    state.apply_to(grid);
    solve_steady_state(grid)
}

fn default_time_step() -> f64 {
    0.01
}

/// Secondary-control study settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecCtlConfig {
    /// 0-based DER indices in VSC mode at `t = 0`.
    pub initial_regulators: Vec<usize>,
    /// Size of reselected sets; defaults to the incumbent's size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regulator_count: Option<usize>,
    #[serde(default)]
    pub gains: ConsensusGains,
    #[serde(rename = "time_step_seconds", default = "default_time_step")]
    pub time_step: f64,
    #[serde(rename = "duration_seconds")]
    pub duration: f64,
    #[serde(rename = "powertalk_offset_seconds")]
    pub powertalk_offset: f64,
    #[serde(rename = "powertalk_period_seconds")]
    pub powertalk_period: f64,
    /// Quantizer full scale for broadcast capacities.
    #[serde(rename = "capacity_range_watts")]
    pub capacity_range: f64,
    pub wireless: WirelessSpec,
}

impl SecCtlConfig {
    pub fn validate_at(&self, grid: &GridSpec, prefix: &str) -> Result<()> {
        let n = grid.converters.len();
        let path = |rest: &str| format!("{prefix}.{rest}");
        self.wireless.validate_at(n, &path("wireless"))?;
        if n > MAX_SELECTION_NODES {
            return Err(Error::SizeLimit {
                what: format!("{n} DERs"),
                limit: MAX_SELECTION_NODES,
            });
        }
        let mut seen = vec![false; n];
        for &i in &self.initial_regulators {
            if i >= n || seen[i] {
                return Err(Error::validation(
                    path("initial_regulators"),
                    format!("index {i} is out of range or repeated"),
                ));
            }
            seen[i] = true;
        }
        if self.initial_regulators.is_empty() {
            return Err(Error::validation(path("initial_regulators"), "need at least one regulator"));
        }
        if let Some(k) = self.regulator_count {
            if k == 0 || k > n {
                return Err(Error::validation(path("regulator_count"), format!("must be in 1..={n}")));
            }
        }
        for (name, v) in [
            ("time_step_seconds", self.time_step),
            ("duration_seconds", self.duration),
            ("powertalk_period_seconds", self.powertalk_period),
            ("capacity_range_watts", self.capacity_range),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(path(name), "must be positive"));
            }
        }
        if !(self.powertalk_offset >= 0.0) {
            return Err(Error::validation(path("powertalk_offset_seconds"), "must be non-negative"));
        }
        let g = self.gains;
        if [g.epsilon, g.k_v, g.k_c].iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::validation(path("gains"), "gains must be non-negative"));
        }
        for (i, c) in grid.converters.iter().enumerate() {
            if !(c.capacity > 0.0) {
                return Err(Error::validation(
                    format!("grid.converters[{i}].capacity_watts"),
                    "DERs need a positive capacity",
                ));
            }
        }
        Ok(())
    }

    pub fn regulator_count(&self, incumbent: &[usize]) -> usize {
        self.regulator_count.unwrap_or(incumbent.len())
    }
}

/// What one power-talk reconfiguration phase decided.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconfigurationOutcome {
    pub time: f64,
    pub previous: Vec<usize>,
    /// Decision of each DER from its own decoded view.
    pub decisions: Vec<Vec<usize>>,
    pub unanimous: bool,
    /// The set in force afterwards: the common decision, or `previous` when
    /// the session aborted, the decisions disagree, or no connected set exists.
    pub selected: Vec<usize>,
    pub no_connected_set: bool,
    pub session: SessionReport,
}

/// Payload of one DER: its neighbor bitmap followed by its quantized capacity.
pub fn reconfiguration_payload(adj: &Adjacency, der: usize, capacity: f64, q: usize, p_cap: f64) -> Vec<bool> {
    let mut bits = adj.row(der).to_vec();
    bits.extend(to_bits(quantize_capacity(capacity.min(p_cap), q, p_cap), q));
    bits
}

/// Graph and capacities as DER `r` reconstructs them from the session.
/// A link is kept when both ends list each other; missing frames contribute
/// nothing.
pub fn decoded_view(views: &[Option<Vec<bool>>], n: usize, q: usize, p_cap: f64) -> (Adjacency, Vec<f64>) {
    let mut adj = Adjacency::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            let listed = |a: usize, b: usize| views[a].as_ref().is_some_and(|bits| bits[b]);
            if listed(i, j) && listed(j, i) {
                adj.set(i, j, true);
            }
        }
    }
    let caps = views
        .iter()
        .map(|v| v.as_ref().map_or(0.0, |bits| dequantize(from_bits(&bits[n..n + q]), q, p_cap)))
        .collect();
    (adj, caps)
}

/// Steps (i)-(iii) of a reconfiguration: neighbor discovery, a power-talk
/// broadcast of (neighbor bitmap, capacity), and a local decision at every DER.
///
/// CSCs switch to VSC mode for the session. `params.bits_per_payload` is the
/// capacity width; the frame carries `N` more bits for the bitmap.
#[allow(clippy::too_many_arguments)]
pub fn reconfiguration_round(
    grid: &GridSpec,
    wireless: &WirelessSpec,
    t: f64,
    incumbent: &[usize],
    k: usize,
    params: &PowerTalkParams,
    p_cap: f64,
    load_events: &[crate::events::LoadChange],
    streams: &Substreams,
) -> Result<ReconfigurationOutcome> {
    let n = grid.converters.len();
    let q = params.bits_per_payload;
    let adj = build_wireless_graph(wireless, t);
    let payloads: Vec<Vec<bool>> = (0..n)
        .map(|i| reconfiguration_payload(&adj, i, grid.converters[i].capacity, q, p_cap))
        .collect();
    let mut signaling = grid.clone();
    signaling.converters.iter_mut().for_each(|c| c.mode = ConverterMode::Vsc);
    let session_params = PowerTalkParams {
        bits_per_payload: n + q,
        ..params.clone()
    };
    let session = run_session(
        &signaling,
        &session_params,
        &payloads,
        load_events,
        streams,
        &SessionOptions {
            start_time: t,
            record_slots: true,
        },
    )?;

    let mut previous = incumbent.to_vec();
    previous.sort_unstable();
    if session.aborted {
        log::warn!("t = {t:.3} s: power-talk session aborted, keeping regulators {previous:?}");
        return Ok(ReconfigurationOutcome {
            time: t,
            decisions: vec![previous.clone(); n],
            selected: previous.clone(),
            previous,
            unanimous: true,
            no_connected_set: false,
            session,
        });
    }
    let decisions = (0..n)
        .map(|r| {
            let (view_adj, caps) = decoded_view(&session.views[r], n, q, p_cap);
            decide_regulators(&view_adj, &caps, &previous, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let unanimous = decisions.windows(2).all(|w| w[0] == w[1]);
    let no_connected_set = unanimous && decisions[0].is_empty();
    let selected = if !unanimous {
        log::warn!("t = {t:.3} s: DERs disagree on the regulator set, keeping {previous:?}");
        previous.clone()
    } else if no_connected_set {
        log::warn!("t = {t:.3} s: no connected set of {k} regulators exists");
        previous.clone()
    } else {
        decisions[0].clone()
    };
    Ok(ReconfigurationOutcome {
        time: t,
        previous,
        decisions,
        unanimous,
        selected,
        no_connected_set,
        session,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Secondary,
    Powertalk,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Secondary => "secondary",
            Phase::Powertalk => "powertalk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub time: f64,
    pub phase: Phase,
    pub regulators: Vec<usize>,
    pub modes: Vec<ConverterMode>,
    pub currents: Vec<f64>,
    pub per_unit_currents: Vec<f64>,
    /// Voltage at each DER's bus.
    pub der_voltages: Vec<f64>,
    pub bus_voltages: Vec<f64>,
    pub events: Vec<String>,
}

impl TraceStep {
    /// Max minus min per-unit current over `ders`.
    pub fn spread(&self, ders: &[usize]) -> f64 {
        let vals = ders.iter().map(|&i| self.per_unit_currents[i]);
        let hi = vals.clone().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.fold(f64::INFINITY, f64::min);
        if ders.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn regulator_spread(&self) -> f64 {
        self.spread(&self.regulators)
    }

    pub fn mean_regulator_voltage(&self) -> f64 {
        self.regulators.iter().map(|&i| self.der_voltages[i]).sum::<f64>() / self.regulators.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimelineTrace {
    pub steps: Vec<TraceStep>,
    pub reconfigurations: Vec<ReconfigurationOutcome>,
}

impl TimelineTrace {
    /// Last step at or before `t`.
    pub fn at(&self, t: f64) -> Option<&TraceStep> {
        self.steps.iter().take_while(|s| s.time <= t + 1e-12).last()
    }

    /// One row per (step, DER); DER ids are 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_seconds", "der_id", "mode", "i_out_amps", "v_bus_volts", "regulator_flag", "phase", "event"])
            .map_err(csv_error)?;
        for s in &self.steps {
            let event = s.events.join("; ");
            for i in 0..s.currents.len() {
                w.write_record([
                    format!("{:.2}", s.time),
                    (i + 1).to_string(),
                    s.modes[i].to_string(),
                    s.currents[i].to_string(),
                    s.der_voltages[i].to_string(),
                    (s.regulators.contains(&i) as u8).to_string(),
                    s.phase.to_string(),
                    event.clone(),
                ])
                .map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn labels(set: &[usize]) -> String {
    let ids: Vec<String> = set.iter().map(|i| (i + 1).to_string()).collect();
    format!("{{{}}}", ids.join(","))
}

fn record(
    time: f64,
    phase: Phase,
    regulators: &[usize],
    grid: &GridSpec,
    state: &SteadyState,
    events: Vec<String>,
) -> TraceStep {
    let n = grid.converters.len();
    TraceStep {
        time,
        phase,
        regulators: regulators.to_vec(),
        modes: grid.converters.iter().map(|c| c.mode).collect(),
        currents: state.i_conv.clone(),
        per_unit_currents: (0..n).map(|i| per_unit_current(grid, state, i)).collect(),
        der_voltages: grid.converters.iter().map(|c| state.v[c.bus]).collect(),
        bus_voltages: state.v.clone(),
        events,
    }
}

/// Simulates secondary control at a fixed step, interleaving periodic
/// power-talk phases (corrections frozen) and timed events.
///
/// Session `p` draws its noise from `streams.child("powertalk:{p}")`.
pub fn run_timeline(
    base: &GridSpec,
    params: &PowerTalkParams,
    config: &SecCtlConfig,
    events: &[Event],
    streams: &Substreams,
) -> Result<TimelineTrace> {
    let dt = config.time_step;
    let steps = (config.duration / dt).round() as usize;
    let mut wireless = config.wireless.clone();
    let mut grid = base.clone();
    let load_events = crate::events::load_changes(events);
    let mut next_event = 0;

    let mut regs = config.initial_regulators.clone();
    regs.sort_unstable();
    let k = config.regulator_count(&regs);
    let mut state = SecCtlState::new(&grid, &regs, &solve_steady_state(base)?, config.gains);
    state.headroom = params.gamma * (1.0 + 1e-6);
    state.apply_to(&mut grid);
    let mut measured = solve_steady_state(&grid)?;
    state.reassign(&grid, &regs, &measured);

    let mut trace = TimelineTrace {
        steps: Vec::with_capacity(steps),
        reconfigurations: Vec::new(),
    };
    let mut next_powertalk = config.powertalk_offset;
    let mut sessions = 0;
    // Active power-talk window: end time, slot log, decided set.
    let mut window: Option<(f64, Vec<crate::mac::SlotRecord>, Vec<usize>)> = None;

    for step in 0..steps {
        let t = step as f64 * dt;
        let mut notes = Vec::new();
        let mut changed = false;
        while next_event < events.len() && events[next_event].time() <= t + 1e-9 {
            let e = &events[next_event];
            match e {
                Event::LoadChange(c) => {
                    c.apply(&mut grid)?;
                    changed = true;
                }
                Event::JammerOn(s) => {
                    let j = &mut wireless.jammers[s.jammer];
                    j.active_from = s.time;
                    j.active_until = None;
                }
                Event::JammerOff(s) => wireless.jammers[s.jammer].active_until = Some(s.time),
            }
            notes.push(e.describe());
            next_event += 1;
        }
        for (j, jam) in wireless.jammers.iter().enumerate() {
            if (jam.active_from - t).abs() < dt / 2.0 && !notes.iter().any(|n| n.starts_with(&format!("jammer {j}"))) {
                notes.push(format!("jammer {j} on"));
            }
        }
        if changed {
            measured = solve_steady_state(&grid)?;
        }

        if window.is_none() && t + 1e-9 >= next_powertalk {
            let outcome = reconfiguration_round(
                &grid,
                &wireless,
                t,
                &regs,
                k,
                params,
                config.capacity_range,
                &load_events[load_events.partition_point(|e| e.time <= t)..],
                &streams.child(&format!("powertalk:{sessions}")),
            )?;
            sessions += 1;
            next_powertalk += config.powertalk_period;
            notes.push(format!("powertalk start, regulators {}", labels(&regs)));
            if !outcome.unanimous {
                notes.push("protocol failure: decisions differ".into());
            }
            if outcome.no_connected_set {
                notes.push(format!("no connected set of {k} regulators"));
            }
            if outcome.session.aborted {
                notes.push("session aborted".into());
            }
            let end = outcome.session.end_time;
            let log = outcome.session.slot_log.clone().unwrap_or_default();
            window = Some((end, log, outcome.selected.clone()));
            trace.reconfigurations.push(outcome);
        }

        if let Some((end, log, selected)) = window.take() {
            if t < end - 1e-9 {
                let mut signaling = grid.clone();
                signaling.converters.iter_mut().for_each(|c| c.mode = ConverterMode::Vsc);
                let slot = log.iter().take_while(|r| r.time <= t + 1e-9).last();
                let shown = match slot {
                    Some(r) => SteadyState {
                        v: r.bus_voltages.clone(),
                        i_conv: r.converter_currents.clone(),
                        p_conv: Vec::new(),
                        residual_norm: 0.0,
                    },
                    None => solve_steady_state(&signaling)?,
                };
                trace
                    .steps
                    .push(record(t, Phase::Powertalk, &regs, &signaling, &shown, notes));
                window = Some((end, log, selected));
                continue;
            }
            if selected != regs {
                notes.push(format!("reselection {} -> {}", labels(&regs), labels(&selected)));
                regs = selected;
                state.reassign(&grid, &regs, &measured);
                state.apply_to(&mut grid);
                measured = solve_steady_state(&grid)?;
                state.reassign(&grid, &regs, &measured);
            }
        }

        let adj = build_wireless_graph(&wireless, t);
        measured = consensus_step(&mut state, &adj, &mut grid, &measured)?;
        trace
            .steps
            .push(record(t, Phase::Secondary, &regs, &grid, &measured, notes));
    }
    Ok(trace)
}
