//! Timed scenario events: load changes and jammer switching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BusLoad, GridSpec};

/// Replaces the load of `bus` at `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadChange {
    #[serde(rename = "time_seconds")]
    pub time: f64,
    pub bus: usize,
    #[serde(rename = "constant_power_watts", default)]
    pub constant_power: f64,
    #[serde(rename = "constant_current_watts", default)]
    pub constant_current: f64,
    #[serde(rename = "resistive_watts", default)]
    pub resistive: f64,
}

impl LoadChange {
    pub fn new(time: f64, bus: usize, load: BusLoad) -> Self {
        LoadChange {
            time,
            bus,
            constant_power: load.constant_power,
            constant_current: load.constant_current,
            resistive: load.resistive,
        }
    }

    pub fn load(&self) -> BusLoad {
        BusLoad {
            constant_power: self.constant_power,
            constant_current: self.constant_current,
            resistive: self.resistive,
        }
    }

    pub fn apply(&self, grid: &mut GridSpec) -> Result<()> {
        let n = grid.buses.len();
        let slot = grid.buses.get_mut(self.bus).ok_or_else(|| {
            Error::InvalidArgument(format!("load change on bus {} of {n}", self.bus))
        })?;
        *slot = self.load();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JammerSwitch {
    #[serde(rename = "time_seconds")]
    pub time: f64,
    pub jammer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    LoadChange(LoadChange),
    JammerOn(JammerSwitch),
    JammerOff(JammerSwitch),
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::LoadChange(e) => e.time,
            Event::JammerOn(e) | Event::JammerOff(e) => e.time,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Event::LoadChange(e) => format!(
                "load_change bus {} -> {} W",
                e.bus,
                e.constant_power + e.constant_current + e.resistive
            ),
            Event::JammerOn(e) => format!("jammer {} on", e.jammer),
            Event::JammerOff(e) => format!("jammer {} off", e.jammer),
        }
    }
}

/// The load changes among `events`, in order.
pub fn load_changes(events: &[Event]) -> Vec<LoadChange> {
    events
        .iter()
        .filter_map(|e| match e {
            Event::LoadChange(c) => Some(c.clone()),
            _ => None,
        })
        .collect()
}

/// Events must be time-sorted and reference existing buses and jammers.
pub fn validate_events(events: &[Event], grid: &GridSpec, jammers: usize, prefix: &str) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (k, e) in events.iter().enumerate() {
        let path = format!("{prefix}[{k}]");
        let t = e.time();
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::validation(format!("{path}.time_seconds"), "must be finite and non-negative"));
        }
        if t < last {
            return Err(Error::validation(format!("{path}.time_seconds"), "events must be sorted by time"));
        }
        last = t;
        match e {
            Event::LoadChange(c) => {
                if c.bus >= grid.buses.len() {
                    return Err(Error::validation(
                        format!("{path}.bus"),
                        format!("bus {} does not exist ({} buses)", c.bus, grid.buses.len()),
                    ));
                }
                let l = c.load();
                if [l.constant_power, l.constant_current, l.resistive]
                    .iter()
                    .any(|w| !(w.is_finite() && *w >= 0.0))
                {
                    return Err(Error::validation(path, "load components must be non-negative"));
                }
            }
            Event::JammerOn(s) | Event::JammerOff(s) => {
                if s.jammer >= jammers {
                    return Err(Error::validation(
                        format!("{path}.jammer"),
                        format!("jammer {} does not exist ({jammers} jammers)", s.jammer),
                    ));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests::{single_bus, vsc};

    #[test]
    fn toml_round_trip() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct Wrap {
            events: Vec<Event>,
        }
        let text = r#"
[[events]]
kind = "load_change"
time_seconds = 7.0
bus = 0
resistive_watts = 1500.0

[[events]]
kind = "jammer_on"
time_seconds = 8.0
jammer = 0
"#;
        let w: Wrap = toml::from_str(text).unwrap();
        assert_eq!(w.events[0].time(), 7.0);
        assert_eq!(
            w.events[0],
            Event::LoadChange(LoadChange::new(7.0, 0, BusLoad::resistive(1500.0)))
        );
        let again: Wrap = toml::from_str(&toml::to_string(&w).unwrap()).unwrap();
        assert_eq!(again, w);
        assert!(toml::from_str::<Wrap>("[[events]]\nkind = \"jammer_on\"\ntime_seconds = 1.0\njammer = 0\nbogus = 1\n").is_err());
    }

    #[test]
    fn validation_checks_order_and_indices() {
        let grid = single_bus(BusLoad::resistive(100.0), vec![vsc(0, 48.0, 0.2)]);
        let on = |t| Event::JammerOn(JammerSwitch { time: t, jammer: 0 });
        assert!(validate_events(&[on(1.0), on(2.0)], &grid, 1, "events").is_ok());
        let err = validate_events(&[on(2.0), on(1.0)], &grid, 1, "events").unwrap_err();
        assert!(err.to_string().starts_with("events[1].time_seconds"));
        assert!(validate_events(&[on(1.0)], &grid, 0, "events").is_err());
        let bad_bus = Event::LoadChange(LoadChange::new(0.0, 3, BusLoad::resistive(1.0)));
        assert!(validate_events(&[bad_bus], &grid, 0, "events").is_err());
    }

    #[test]
    fn apply_replaces_load() {
        let mut grid = single_bus(BusLoad::resistive(100.0), vec![vsc(0, 48.0, 0.2)]);
        LoadChange::new(0.0, 0, BusLoad::constant_power(250.0)).apply(&mut grid).unwrap();
        assert_eq!(grid.buses[0], BusLoad::constant_power(250.0));
    }
}
