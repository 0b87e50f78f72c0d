//! Co-simulation of power talk in DC microgrids.
//!
//! Converters signal bits by deviating their droop references; every other
//! converter reads the steady-state bus voltage. On top of that channel sit a
//! TDMA/CRC framing layer, a distributed economic dispatch study, and a
//! jamming-resilient secondary control study.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dispatch;
pub mod error;
pub mod events;
pub mod grid;
pub mod mac;
pub mod phy;
pub mod rng;
pub mod secctl;
pub mod sim;

pub use dispatch::{DeltaStats, DispatchConfig, DispatchResult};
pub use error::{Error, Result};
pub use events::{Event, LoadChange};
pub use grid::{BusLoad, Constraints, Converter, ConverterMode, GridSpec, Line, SteadyState};
pub use mac::{SessionReport, TdmaSchedule};
pub use phy::{PowerTalkParams, Signaling};
pub use rng::{derive_substream, Substreams};
pub use secctl::{Adjacency, SecCtlConfig, TimelineTrace, WirelessSpec};
pub use sim::{load_scenario, run, Command, RunArtifacts, Scenario};
