//! Link layer: TDMA schedule, CRC-8 framing and session execution.
//!
//! A session measures one silent baseline slot, then lets every unit send its
//! frame in its own contiguous sub-phase while all other units listen. With
//! CRC enabled a failed check anywhere restarts the whole session with a fresh
//! baseline, up to `max_retries` times.

use std::io::Write;

use crc::{Crc, CRC_8_I_432_1};

use crate::error::{Error, Result};
use crate::events::LoadChange;
use crate::grid::{solve_steady_state, GridSpec, SteadyState};
use crate::phy::{apply_symbol, detect_bit, observe_slot, PowerTalkParams};
use crate::rng::Substreams;

pub const CRC_BITS: usize = 8;

// Polynomial 0x07, init 0, no reflection, final xor 0x55 (CRC-8/I-432-1).
const CRC8: Crc<u8> = Crc::<u8>::new(&CRC_8_I_432_1);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotAssignment {
    pub transmitter: usize,
    /// Position within the transmitter's frame (payload first, then CRC).
    pub bit_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TdmaSchedule {
    pub num_units: usize,
    pub bits_per_unit: usize,
    pub crc: bool,
    pub slots: Vec<SlotAssignment>,
}

impl TdmaSchedule {
    pub fn total_slots(&self) -> usize {
        self.slots.len()
    }

    /// Slots per sub-phase.
    pub fn frame_len(&self) -> usize {
        self.bits_per_unit + if self.crc { CRC_BITS } else { 0 }
    }

    pub fn sub_phase(&self, unit: usize) -> std::ops::Range<usize> {
        let l = self.frame_len();
        unit * l..(unit + 1) * l
    }
}

pub fn build_schedule(units: usize, bits_per_unit: usize, crc: bool) -> Result<TdmaSchedule> {
    if units == 0 || bits_per_unit == 0 {
        return Err(Error::InvalidParameter(format!(
            "schedule needs at least one unit and one bit (U = {units}, Q = {bits_per_unit})"
        )));
    }
    let l = bits_per_unit + if crc { CRC_BITS } else { 0 };
    let slots = (0..units)
        .flat_map(|transmitter| {
            (0..l).map(move |bit_position| SlotAssignment {
                transmitter,
                bit_position,
            })
        })
        .collect();
    Ok(TdmaSchedule {
        num_units: units,
        bits_per_unit,
        crc,
        slots,
    })
}

/// MSB-first bits of the low `width` bits of `value`.
pub fn to_bits(value: u64, width: usize) -> Vec<bool> {
    (0..width).rev().map(|k| k < 64 && (value >> k) & 1 == 1).collect()
}

pub fn from_bits(bits: &[bool]) -> u64 {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as u64)
}

/// Packs bits MSB-first into bytes, left-padding with zeros to a multiple of 8.
fn pack(bits: &[bool]) -> Vec<u8> {
    let pad = (8 - bits.len() % 8) % 8;
    let padded: Vec<bool> = std::iter::repeat_n(false, pad).chain(bits.iter().copied()).collect();
    padded.chunks(8).map(|c| from_bits(c) as u8).collect()
}

pub fn crc8(payload: &[bool]) -> u8 {
    CRC8.checksum(&pack(payload))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub payload_bits: Vec<bool>,
    pub crc: Option<u8>,
}

impl Frame {
    /// Bits in transmission order.
    pub fn bits(&self) -> Vec<bool> {
        let mut out = self.payload_bits.clone();
        if let Some(c) = self.crc {
            out.extend(to_bits(c as u64, CRC_BITS));
        }
        out
    }
}

pub fn encode_frame(payload: &[bool], crc: bool) -> Frame {
    Frame {
        payload_bits: payload.to_vec(),
        crc: crc.then(|| crc8(payload)),
    }
}

/// Verifies and strips the check bits.
pub fn decode_frame(bits: &[bool], crc: bool) -> Result<Vec<bool>> {
    if !crc {
        return Ok(bits.to_vec());
    }
    if bits.len() <= CRC_BITS {
        return Err(Error::InvalidArgument(format!(
            "frame of {} bits is too short to carry a CRC",
            bits.len()
        )));
    }
    let (payload, check) = bits.split_at(bits.len() - CRC_BITS);
    let expected = crc8(payload);
    let received = from_bits(check) as u8;
    if expected != received {
        return Err(Error::CrcFailure { expected, received });
    }
    Ok(payload.to_vec())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionOptions {
    /// Absolute time at which the baseline slot begins.
    pub start_time: f64,
    pub record_slots: bool,
}

/// Everything observable in one slot of one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub attempt: usize,
    pub slot: usize,
    pub time: f64,
    pub transmitter: usize,
    pub bit: bool,
    pub bus_voltages: Vec<f64>,
    pub converter_currents: Vec<f64>,
    /// Per unit; `None` for the transmitter itself.
    pub observations: Vec<Option<f64>>,
    pub decisions: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionReport {
    /// `views[r][t]`: payload of unit `t` as decoded by unit `r`, `None` on CRC failure.
    /// The diagonal holds each unit's own payload.
    pub views: Vec<Vec<Option<Vec<bool>>>>,
    pub energy_overhead_wh: f64,
    /// Overhead attributed to the unit whose sub-phase caused it.
    pub energy_by_transmitter_wh: Vec<f64>,
    pub retries: usize,
    pub aborted: bool,
    /// Detected bits differing from what was sent, over all attempts.
    pub bit_errors: usize,
    pub bits_detected: usize,
    /// Slots elapsed including baselines and retries.
    pub slots_elapsed: usize,
    pub end_time: f64,
    /// Grid with every load change up to `end_time` applied.
    pub final_grid: GridSpec,
    pub slot_log: Option<Vec<SlotRecord>>,
}

struct Channel {
    grid: GridSpec,
    nominal: SteadyState,
    symbols: Vec<[Option<SteadyState>; 2]>,
}

impl Channel {
    fn new(grid: GridSpec) -> Result<Self> {
        let nominal = solve_steady_state(&grid)?;
        let symbols = vec![[None, None]; grid.converters.len()];
        Ok(Channel {
            grid,
            nominal,
            symbols,
        })
    }

    fn apply_due(&mut self, events: &[LoadChange], next: &mut usize, t: f64) -> Result<()> {
        let mut changed = false;
        while *next < events.len() && events[*next].time <= t {
            events[*next].apply(&mut self.grid)?;
            log::debug!("load change on bus {} at t = {:.4} s", events[*next].bus, events[*next].time);
            *next += 1;
            changed = true;
        }
        if changed {
            self.nominal = solve_steady_state(&self.grid)?;
            self.symbols.iter_mut().for_each(|s| *s = [None, None]);
        }
        Ok(())
    }

    fn symbol(&mut self, transmitter: usize, bit: bool, params: &PowerTalkParams) -> Result<&SteadyState> {
        let cell = &mut self.symbols[transmitter][bit as usize];
        if cell.is_none() {
            *cell = Some(solve_steady_state(&apply_symbol(&self.grid, transmitter, bit, params)?)?);
        }
        Ok(cell.as_ref().unwrap())
    }
}

/// Runs one power-talk phase in which every converter broadcasts its payload.
///
/// Receiver `r` draws all of its noise from `streams.stream("attempt:{a}/node:{r}")`.
/// `events` must be sorted by time; those at or before `start_time` are applied
/// before the baseline.
pub fn run_session(
    grid: &GridSpec,
    params: &PowerTalkParams,
    payloads: &[Vec<bool>],
    events: &[LoadChange],
    streams: &Substreams,
    opts: &SessionOptions,
) -> Result<SessionReport> {
    let units = grid.converters.len();
    if payloads.len() != units {
        return Err(Error::InvalidArgument(format!(
            "{} payloads for {units} units",
            payloads.len()
        )));
    }
    let q = params.bits_per_payload;
    if let Some(u) = payloads.iter().position(|p| p.len() != q) {
        return Err(Error::InvalidArgument(format!(
            "payload of unit {u} has {} bits, expected {q}",
            payloads[u].len()
        )));
    }
    let schedule = build_schedule(units, q, params.crc_enabled)?;
    let frames: Vec<Vec<bool>> = payloads
        .iter()
        .map(|p| encode_frame(p, params.crc_enabled).bits())
        .collect();
    let buses: Vec<usize> = grid.converters.iter().map(|c| c.bus).collect();
    let ts = params.slot_duration;

    let mut next_event = 0;
    let mut t = opts.start_time;
    let mut channel = Channel::new(grid.clone())?;
    channel.apply_due(events, &mut next_event, t)?;

    let mut energy = vec![0.0; units];
    let mut log = opts.record_slots.then(Vec::new);
    let mut retries = 0;
    let mut bit_errors = 0;
    let mut bits_detected = 0;
    let mut slots_elapsed = 0;

    loop {
        let attempt = retries;
        let mut rngs: Vec<_> = (0..units)
            .map(|r| streams.stream(&format!("attempt:{attempt}/node:{r}")))
            .collect();

        channel.apply_due(events, &mut next_event, t)?;
        let baseline: Vec<f64> = (0..units)
            .map(|r| observe_slot(channel.nominal.v[buses[r]], params, &mut rngs[r]))
            .collect();
        t += ts;
        slots_elapsed += 1;

        let mut decided = vec![vec![false; schedule.total_slots()]; units];
        for (s, slot) in schedule.slots.iter().enumerate() {
            channel.apply_due(events, &mut next_event, t)?;
            let tx = slot.transmitter;
            let bit = frames[tx][slot.bit_position];
            let nominal_p = channel.nominal.p_conv.clone();
            let state = channel.symbol(tx, bit, params)?;
            energy[tx] += state
                .p_conv
                .iter()
                .zip(&nominal_p)
                .map(|(p, p0)| (p - p0).abs())
                .sum::<f64>()
                * ts
                / 3600.0;

            let mut observations = vec![None; units];
            let mut decisions = vec![None; units];
            for r in (0..units).filter(|&r| r != tx) {
                let obs = observe_slot(state.v[buses[r]], params, &mut rngs[r]);
                let d = detect_bit(obs, baseline[r]);
                decided[r][s] = d;
                bits_detected += 1;
                if d != bit {
                    bit_errors += 1;
                }
                observations[r] = Some(obs);
                decisions[r] = Some(d);
            }
            if let Some(log) = log.as_mut() {
                log.push(SlotRecord {
                    attempt,
                    slot: s,
                    time: t,
                    transmitter: tx,
                    bit,
                    bus_voltages: state.v.clone(),
                    converter_currents: state.i_conv.clone(),
                    observations,
                    decisions,
                });
            }
            t += ts;
            slots_elapsed += 1;
        }

        let mut failures = 0;
        let views: Vec<Vec<Option<Vec<bool>>>> = (0..units)
            .map(|r| {
                (0..units)
                    .map(|tx| {
                        if tx == r {
                            return Some(payloads[r].clone());
                        }
                        match decode_frame(&decided[r][schedule.sub_phase(tx)], params.crc_enabled) {
                            Ok(p) => Some(p),
                            Err(_) => {
                                failures += 1;
                                None
                            }
                        }
                    })
                    .collect()
            })
            .collect();

        if failures > 0 && retries < params.max_retries {
            log::debug!("attempt {attempt}: {failures} CRC failures, restarting session");
            retries += 1;
            continue;
        }
        let aborted = failures > 0;
        if aborted {
            log::warn!("session aborted after {retries} retries ({failures} CRC failures)");
        }
        return Ok(SessionReport {
            views,
            energy_overhead_wh: energy.iter().sum(),
            energy_by_transmitter_wh: energy,
            retries,
            aborted,
            bit_errors,
            bits_detected,
            slots_elapsed,
            end_time: t,
            final_grid: channel.grid,
            slot_log: log,
        });
    }
}

/// Writes a slot log as CSV: one row per slot with per-bus voltages and
/// per-unit observations and decisions.
pub fn write_slot_trace<W: Write>(out: W, log: &[SlotRecord]) -> Result<()> {
    let Some(first) = log.first() else {
        return Ok(());
    };
    let buses = first.bus_voltages.len();
    let units = first.observations.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["attempt", "slot", "time_seconds", "transmitter", "bit"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..buses).map(|b| format!("v_bus{b}_volts")));
    header.extend((0..units).map(|u| format!("obs_unit{u}_volts")));
    header.extend((0..units).map(|u| format!("decision_unit{u}")));
    w.write_record(&header).map_err(csv_error)?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for rec in log {
        let mut row = vec![
            rec.attempt.to_string(),
            rec.slot.to_string(),
            rec.time.to_string(),
            rec.transmitter.to_string(),
            (rec.bit as u8).to_string(),
        ];
        row.extend(rec.bus_voltages.iter().map(|v| v.to_string()));
        row.extend(rec.observations.iter().map(|o| opt(o.map(|v| v.to_string()))));
        row.extend(rec.decisions.iter().map(|d| opt(d.map(|b| (b as u8).to_string()))));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
