//! Scenario files, command pipelines and run artifacts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dispatch::{sweep, write_sweep_csv, DispatchConfig, MAX_BITS};
use crate::error::{Error, Result};
use crate::events::{validate_events, Event};
use crate::grid::{converter_injections, solve_steady_state, GridSpec};
use crate::mac::{csv_error, run_session, to_bits, write_slot_trace, SessionOptions};
use crate::phy::{monte_carlo_ber, PowerTalkParams};
use crate::rng::Substreams;
use crate::secctl::{run_timeline, SecCtlConfig, TimelineTrace};

const EQ1: &str = include_str!("../scenarios/eq1.toml");
const FIG5B: &str = include_str!("../scenarios/fig5b.toml");
const FIG6: &str = include_str!("../scenarios/fig6.toml");

/// Names of the scenarios compiled into the library.
pub const SHIPPED: [&str; 3] = ["eq1", "fig5b", "fig6"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Application {
    Dispatch(DispatchConfig),
    Secctl(SecCtlConfig),
}

fn default_ber_trials() -> usize {
    100_000
}

fn default_ber_gammas() -> Vec<f64> {
    vec![0.02, 0.05, 1.0]
}

/// Settings of the `ber` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BerConfig {
    pub transmitter: usize,
    pub receiver_bus: usize,
    #[serde(default = "default_ber_trials")]
    pub trials: usize,
    #[serde(rename = "gamma_values_volts", default = "default_ber_gammas")]
    pub gamma_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    pub powertalk: PowerTalkParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ber: Option<BerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub application: Option<Application>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

impl Scenario {
    /// Parses and validates scenario text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string().trim_end().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    /// One of [`SHIPPED`].
    pub fn shipped(name: &str) -> Result<Self> {
        let text = match name {
            "eq1" => EQ1,
            "fig5b" => FIG5B,
            "fig6" => FIG6,
            other => return Err(Error::InvalidArgument(format!("no shipped scenario named '{other}'"))),
        };
        Self::from_toml_str(text)
    }

    /// Canonical TOML form; parsing it yields an equal scenario.
    pub fn to_canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Checks every invariant, returning soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.grid.validate_at("grid")?;
        let mut warnings = self.powertalk.validate_at(&self.grid, "powertalk")?;
        let mut jammers = 0;
        match &self.application {
            Some(Application::Dispatch(d)) => d.validate_at(&self.grid, "application.dispatch")?,
            Some(Application::Secctl(s)) => {
                s.validate_at(&self.grid, "application.secctl")?;
                jammers = s.wireless.jammers.len();
                if self.powertalk.bits_per_payload > MAX_BITS {
                    return Err(Error::validation(
                        "powertalk.bits_per_payload",
                        format!("capacity width must be at most {MAX_BITS}"),
                    ));
                }
                if !self.powertalk.crc_enabled {
                    warnings.push("powertalk.crc_enabled: reconfiguration without CRC can disagree".into());
                }
            }
            None => {}
        }
        validate_events(&self.events, &self.grid, jammers, "events")?;
        if let Some(b) = &self.ber {
            if b.transmitter >= self.grid.converters.len() {
                return Err(Error::validation("ber.transmitter", "converter index out of range"));
            }
            if !self.grid.converters[b.transmitter].is_vsc() {
                return Err(Error::validation("ber.transmitter", "transmitter must be a VSC"));
            }
            if b.receiver_bus >= self.grid.buses.len() {
                return Err(Error::validation("ber.receiver_bus", "bus index out of range"));
            }
            if b.trials == 0 {
                return Err(Error::validation("ber.trials", "must be at least 1"));
            }
            for (k, &g) in b.gamma_values.iter().enumerate() {
                let p = PowerTalkParams {
                    gamma: g,
                    ..self.powertalk.clone()
                };
                if !(g > 0.0) {
                    return Err(Error::validation(format!("ber.gamma_values_volts[{k}]"), "must be positive"));
                }
                p.check_deviation(&self.grid, b.transmitter).map_err(|e| {
                    Error::validation(format!("ber.gamma_values_volts[{k}]"), e.to_string())
                })?;
            }
        }
        Ok(warnings)
    }

    fn dispatch(&self) -> Result<&DispatchConfig> {
        match &self.application {
            Some(Application::Dispatch(d)) => Ok(d),
            _ => Err(Error::validation("application.dispatch", "required by dispatch-sweep")),
        }
    }

    fn secctl(&self) -> Result<&SecCtlConfig> {
        match &self.application {
            Some(Application::Secctl(s)) => Ok(s),
            _ => Err(Error::validation("application.secctl", "required by jam-demo")),
        }
    }
}

/// Reads `path`, or a shipped scenario when `path` names one and no such file exists.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    if !path.exists() {
        if let Some(name) = path.to_str().filter(|n| SHIPPED.contains(n)) {
            return Scenario::shipped(name);
        }
    }
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_toml_str(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Ber,
    DispatchSweep,
    JamDemo,
}

impl Command {
    pub const ALL: [Command; 4] = [Command::Solve, Command::Ber, Command::DispatchSweep, Command::JamDemo];

    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Ber => "ber",
            Command::DispatchSweep => "dispatch-sweep",
            Command::JamDemo => "jam-demo",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown command '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub manifest: Manifest,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn file(&mut self, name: &str) -> Result<fs::File> {
        let path = self.dir.join(name);
        let f = fs::File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.files.push(path);
        Ok(f)
    }
}

/// Runs `command` on `scenario` and writes its artifacts to `out_dir`.
///
/// Every CSV depends only on the scenario and `seed`. With `trace`, slot-level
/// power-talk traces are written as well.
pub fn run(command: Command, scenario: &Scenario, seed: u64, out_dir: &Path, trace: bool) -> Result<RunArtifacts> {
    let start = Instant::now();
    let warnings = scenario.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let mut out = Writer {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let echo = Scenario {
        seed,
        ..scenario.clone()
    };
    std::io::Write::write_all(&mut out.file("scenario.toml")?, echo.to_canonical_toml()?.as_bytes())?;

    let streams = Substreams::new(seed);
    match command {
        Command::Solve => solve(scenario, &mut out)?,
        Command::Ber => ber(scenario, &streams.child("ber"), &mut out)?,
        Command::DispatchSweep => dispatch_sweep(scenario, &streams.child("dispatch"), &mut out, trace)?,
        Command::JamDemo => jam_demo(scenario, &streams.child("secctl"), &mut out, trace)?,
    }

    let manifest = Manifest {
        command: command.name().into(),
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files: out
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .chain(["manifest.json".to_string()])
            .collect(),
        warnings,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), json + "\n")?;
    out.files.push(out_dir.join("manifest.json"));
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        files: out.files,
        manifest,
    })
}

fn solve(scenario: &Scenario, out: &mut Writer) -> Result<()> {
    let grid = &scenario.grid;
    let state = solve_steady_state(grid)?;
    let mut w = csv::Writer::from_writer(out.file("solve.csv")?);
    w.write_record(["bus", "v_volts"]).map_err(csv_error)?;
    for (b, v) in state.v.iter().enumerate() {
        w.write_record([b.to_string(), v.to_string()]).map_err(csv_error)?;
    }
    w.flush()?;
    let (currents, powers) = converter_injections(grid, &state)?;
    let mut w = csv::Writer::from_writer(out.file("converters.csv")?);
    w.write_record(["converter", "bus", "mode", "i_out_amps", "p_out_watts"])
        .map_err(csv_error)?;
    for (u, c) in grid.converters.iter().enumerate() {
        w.write_record([
            u.to_string(),
            c.bus.to_string(),
            c.mode.to_string(),
            currents[u].to_string(),
            powers[u].to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn ber(scenario: &Scenario, streams: &Substreams, out: &mut Writer) -> Result<()> {
    let cfg = scenario
        .ber
        .as_ref()
        .ok_or_else(|| Error::validation("ber", "required by the ber command"))?;
    let mut w = csv::Writer::from_writer(out.file("ber.csv")?);
    w.write_record([
        "gamma_volts",
        "swing_volts",
        "trials",
        "errors",
        "empirical_ber",
        "analytic_ber",
        "bound_3sigma",
        "within_bound",
    ])
    .map_err(csv_error)?;
    for (k, &gamma) in cfg.gamma_values.iter().enumerate() {
        let params = PowerTalkParams {
            gamma,
            ..scenario.powertalk.clone()
        };
        let mut rng = streams.stream(&format!("gamma:{k}"));
        let e = monte_carlo_ber(&scenario.grid, cfg.transmitter, cfg.receiver_bus, &params, cfg.trials, &mut rng)?;
        w.write_record([
            gamma.to_string(),
            e.swing.to_string(),
            e.trials.to_string(),
            e.errors.to_string(),
            e.empirical.to_string(),
            e.analytic.to_string(),
            e.bound_3sigma.to_string(),
            e.within_bound().to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn dispatch_sweep(scenario: &Scenario, streams: &Substreams, out: &mut Writer, trace: bool) -> Result<()> {
    let cfg = scenario.dispatch()?;
    let rows = sweep(&cfg.q_values, &cfg.gamma_values, &scenario.grid, &scenario.powertalk, cfg, streams)?;
    write_sweep_csv(out.file("sweep.csv")?, &rows)?;
    if trace {
        // Run 0 of the first cell, replayed with its own streams.
        let params = PowerTalkParams {
            bits_per_payload: cfg.q_values[0],
            gamma: cfg.gamma_values[0],
            ..scenario.powertalk.clone()
        };
        let units = scenario.grid.converters.len();
        let mut rng = streams.stream("run:0/capacities");
        let payloads: Vec<Vec<bool>> = (0..units)
            .map(|_| {
                let c = rand::Rng::random::<f64>(&mut rng) * cfg.capacity_range;
                to_bits(crate::dispatch::quantize_capacity(c, params.bits_per_payload, cfg.capacity_range), params.bits_per_payload)
            })
            .collect();
        let report = run_session(
            &scenario.grid,
            &params,
            &payloads,
            &[],
            &streams.child("run:0"),
            &SessionOptions {
                start_time: 0.0,
                record_slots: true,
            },
        )?;
        write_slot_trace(out.file("session_trace.csv")?, report.slot_log.as_deref().unwrap_or_default())?;
    }
    Ok(())
}

/// Runs the secondary-control timeline of a scenario.
pub fn timeline(scenario: &Scenario, seed: u64) -> Result<TimelineTrace> {
    run_timeline(
        &scenario.grid,
        &scenario.powertalk,
        scenario.secctl()?,
        &scenario.events,
        &Substreams::new(seed).child("secctl"),
    )
}

fn jam_demo(scenario: &Scenario, streams: &Substreams, out: &mut Writer, trace: bool) -> Result<()> {
    let tl = run_timeline(&scenario.grid, &scenario.powertalk, scenario.secctl()?, &scenario.events, streams)?;
    tl.write_csv(out.file("timeline.csv")?)?;
    let ids = |set: &[usize]| set.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ");
    let mut w = csv::Writer::from_writer(out.file("reconfigurations.csv")?);
    w.write_record([
        "t_seconds",
        "previous",
        "selected",
        "unanimous",
        "no_connected_set",
        "retries",
        "aborted",
        "end_seconds",
        "overhead_wh",
    ])
    .map_err(csv_error)?;
    for r in &tl.reconfigurations {
        w.write_record([
            format!("{:.2}", r.time),
            ids(&r.previous),
            ids(&r.selected),
            r.unanimous.to_string(),
            r.no_connected_set.to_string(),
            r.session.retries.to_string(),
            r.session.aborted.to_string(),
            r.session.end_time.to_string(),
            r.session.energy_overhead_wh.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    if trace {
        for (p, r) in tl.reconfigurations.iter().enumerate() {
            write_slot_trace(
                out.file(&format!("powertalk_{p}.csv"))?,
                r.session.slot_log.as_deref().unwrap_or_default(),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenarios_load_and_echo() {
        for name in SHIPPED {
            let s = Scenario::shipped(name).unwrap();
            let echo = s.to_canonical_toml().unwrap();
            assert_eq!(Scenario::from_toml_str(&echo).unwrap(), s, "{name}");
            assert_eq!(Scenario::from_toml_str(&echo).unwrap().to_canonical_toml().unwrap(), echo);
        }
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("plot".parse::<Command>().is_err());
    }

    #[test]
    fn fig5b_parameters() {
        let s = Scenario::shipped("fig5b").unwrap();
        assert_eq!(s.grid.converters.len(), 6);
        assert_eq!(s.grid.rated_voltage, 48.0);
        assert_eq!(s.powertalk.noise_sigma, 0.05);
        assert_eq!(s.powertalk.samples_per_slot(), 250);
    }
}
