//! Physical layer: antipodal reference-voltage signaling, noisy averaged
//! bus-voltage observation, threshold detection and the error-rate model.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{solve_steady_state, GridSpec};

/// Which droop parameter carries the symbols.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signaling {
    #[default]
    ReferenceVoltage,
    /// Accepted by the parser, rejected when a symbol is applied.
    VirtualResistance,
}

fn default_max_retries() -> usize {
    3
}

fn is_default_signaling(s: &Signaling) -> bool {
    *s == Signaling::ReferenceVoltage
}

/// Signaling configuration shared by every participant of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerTalkParams {
    /// Deviation amplitude applied to the reference voltage.
    #[serde(rename = "gamma_volts")]
    pub gamma: f64,
    #[serde(rename = "slot_duration_seconds")]
    pub slot_duration: f64,
    #[serde(rename = "sampling_frequency_hertz")]
    pub sampling_frequency: f64,
    /// Per-sample measurement noise standard deviation.
    #[serde(rename = "noise_sigma_volts")]
    pub noise_sigma: f64,
    pub bits_per_payload: usize,
    #[serde(default)]
    pub crc_enabled: bool,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    #[serde(default, skip_serializing_if = "is_default_signaling")]
    pub signaling: Signaling,
}

impl PowerTalkParams {
    /// Samples averaged per slot, `round(T_S * f_s)`.
    pub fn samples_per_slot(&self) -> usize {
        (self.slot_duration * self.sampling_frequency).round() as usize
    }

    /// Standard deviation of one slot average.
    pub fn averaged_noise_sigma(&self) -> f64 {
        self.noise_sigma / (self.samples_per_slot() as f64).sqrt()
    }

    /// Checks the invariants against `grid` and returns soft warnings.
    pub fn validate_at(&self, grid: &GridSpec, prefix: &str) -> Result<Vec<String>> {
        let path = |rest: &str| format!("{prefix}.{rest}");
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::validation(path("gamma_volts"), "must be positive"));
        }
        if !(self.slot_duration > 0.0 && self.sampling_frequency > 0.0) {
            return Err(Error::validation(
                path("slot_duration_seconds"),
                "slot duration and sampling frequency must be positive",
            ));
        }
        if self.samples_per_slot() < 1 {
            return Err(Error::validation(
                path("sampling_frequency_hertz"),
                "need at least one sample per slot",
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::validation(path("noise_sigma_volts"), "must be non-negative"));
        }
        if self.bits_per_payload < 1 {
            return Err(Error::validation(path("bits_per_payload"), "must be at least 1"));
        }
        for u in 0..grid.converters.len() {
            self.check_deviation(grid, u).map_err(|e| match e {
                Error::Constraint { converter, message } => Error::validation(
                    path("gamma_volts"),
                    format!("converter {converter}: {message}"),
                ),
                other => other,
            })?;
        }

        let mut warnings = Vec::new();
        let per_unit = self.noise_sigma / grid.rated_voltage;
        if !(1e-4..=1e-3).contains(&per_unit) {
            warnings.push(format!(
                "{}: noise {:.4}% of rated voltage is outside the typical 0.01-0.1% range",
                path("noise_sigma_volts"),
                per_unit * 100.0
            ));
        }
        if 1.0 / self.slot_duration > 1000.0 {
            warnings.push(format!(
                "{}: {:.0} Bd exceeds 1 kBd; buses need 1-10 ms to settle",
                path("slot_duration_seconds"),
                1.0 / self.slot_duration
            ));
        }
        Ok(warnings)
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<Vec<String>> {
        self.validate_at(grid, "powertalk")
    }

    /// [`check_deviation`](Self::check_deviation) for every converter.
    pub fn check_deviation_all(&self, grid: &GridSpec) -> Result<()> {
        (0..grid.converters.len()).try_for_each(|u| self.check_deviation(grid, u))
    }

    /// Both deviated references of `converter` must stay strictly inside its limits.
    pub fn check_deviation(&self, grid: &GridSpec, converter: usize) -> Result<()> {
        let c = grid.converters.get(converter).ok_or_else(|| {
            Error::InvalidArgument(format!("no converter with index {converter}"))
        })?;
        let k = &c.constraints;
        let (lo, hi) = (c.reference_voltage - self.gamma, c.reference_voltage + self.gamma);
        if !(lo > k.x_min && hi < k.x_max) {
            return Err(Error::Constraint {
                converter,
                message: format!(
                    "x +/- gamma = [{lo}, {hi}] V leaves the admissible range ({}, {})",
                    k.x_min, k.x_max
                ),
            });
        }
        Ok(())
    }
}

/// Returns a copy of `grid` with the transmitter's reference deviated by
/// `-gamma` (bit 0) or `+gamma` (bit 1).
pub fn apply_symbol(
    grid: &GridSpec,
    transmitter: usize,
    bit: bool,
    params: &PowerTalkParams,
) -> Result<GridSpec> {
    if params.signaling == Signaling::VirtualResistance {
        return Err(Error::Unimplemented(
            "virtual-resistance signaling".to_string(),
        ));
    }
    let converter = grid.converters.get(transmitter).ok_or_else(|| {
        Error::InvalidArgument(format!("no converter with index {transmitter}"))
    })?;
    if !converter.is_vsc() {
        return Err(Error::InvalidMode {
            converter: transmitter,
        });
    }
    let mut out = grid.clone();
    if params.gamma == 0.0 {
        return Ok(out);
    }
    params.check_deviation(grid, transmitter)?;
    let delta = if bit { params.gamma } else { -params.gamma };
    out.converters[transmitter].reference_voltage += delta;
    Ok(out)
}

/// Average of `K` noisy samples of `true_voltage`.
///
/// The mean of `K` i.i.d. `N(v, sigma^2)` samples is `N(v, sigma^2 / K)`, so a
/// single normal draw is scaled instead of summing `K` of them.
pub fn observe_slot<R: Rng + ?Sized>(true_voltage: f64, params: &PowerTalkParams, rng: &mut R) -> f64 {
    if params.noise_sigma == 0.0 {
        return true_voltage;
    }
    let z: f64 = rng.sample(StandardNormal);
    true_voltage + params.averaged_noise_sigma() * z
}

/// Sample-by-sample version of [`observe_slot`], kept as a reference.
pub fn observe_slot_per_sample<R: Rng + ?Sized>(
    true_voltage: f64,
    params: &PowerTalkParams,
    rng: &mut R,
) -> f64 {
    let k = params.samples_per_slot();
    let sum: f64 = (0..k)
        .map(|_| true_voltage + params.noise_sigma * rng.sample::<f64, _>(StandardNormal))
        .sum();
    sum / k as f64
}

/// One receiver's slot average, as kept in session logs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotObservation {
    pub averaged_voltage: f64,
    pub receiver_bus: usize,
    pub slot_index: usize,
}

/// Sign detector against the pre-phase level; ties decide 0.
pub fn detect_bit(averaged_voltage: f64, baseline: f64) -> bool {
    averaged_voltage > baseline
}

/// Slot average of the undisturbed operating point at `receiver_bus`.
pub fn measure_baseline<R: Rng + ?Sized>(
    grid: &GridSpec,
    receiver_bus: usize,
    params: &PowerTalkParams,
    rng: &mut R,
) -> Result<f64> {
    if receiver_bus >= grid.buses.len() {
        return Err(Error::InvalidArgument(format!(
            "receiver bus {receiver_bus} out of range"
        )));
    }
    let state = solve_steady_state(grid)?;
    Ok(observe_slot(state.v[receiver_bus], params, rng))
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Bit error probability of the sign detector against an exactly known
/// reference level: `Phi(-swing / (sigma / sqrt(K)))`.
pub fn analytic_ber(swing: f64, params: &PowerTalkParams) -> Result<f64> {
    if !(swing > 0.0) {
        return Err(Error::InvalidSwing(swing));
    }
    let sigma = params.averaged_noise_sigma();
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(standard_normal_cdf(-swing / sigma))
}

/// Error probability when the reference is itself a single noisy slot
/// average, as in a session with a one-slot baseline: the decision
/// statistic then has twice the variance.
pub fn analytic_ber_noisy_reference(swing: f64, params: &PowerTalkParams) -> Result<f64> {
    if !(swing > 0.0) {
        return Err(Error::InvalidSwing(swing));
    }
    let sigma = params.averaged_noise_sigma() * std::f64::consts::SQRT_2;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    Ok(standard_normal_cdf(-swing / sigma))
}

/// Steady-state voltages at `receiver_bus`: (nominal, bit 0, bit 1).
pub fn receiver_levels(
    grid: &GridSpec,
    transmitter: usize,
    receiver_bus: usize,
    params: &PowerTalkParams,
) -> Result<(f64, f64, f64)> {
    if receiver_bus >= grid.buses.len() {
        return Err(Error::InvalidArgument(format!(
            "receiver bus {receiver_bus} out of range"
        )));
    }
    let nominal = solve_steady_state(grid)?.v[receiver_bus];
    let zero = solve_steady_state(&apply_symbol(grid, transmitter, false, params)?)?.v[receiver_bus];
    let one = solve_steady_state(&apply_symbol(grid, transmitter, true, params)?)?.v[receiver_bus];
    Ok((nominal, zero, one))
}

/// One-sided swing `|v(bit 1) - v(nominal)|` seen at `receiver_bus`.
pub fn receiver_swing(
    grid: &GridSpec,
    transmitter: usize,
    receiver_bus: usize,
    params: &PowerTalkParams,
) -> Result<f64> {
    let (nominal, _, one) = receiver_levels(grid, transmitter, receiver_bus, params)?;
    Ok((one - nominal).abs())
}

/// Monte Carlo estimate of the detector error rate next to its analytic value.
#[derive(Debug, Clone, PartialEq)]
pub struct BerEstimate {
    pub gamma: f64,
    pub swing: f64,
    pub trials: usize,
    pub errors: usize,
    pub empirical: f64,
    pub analytic: f64,
    /// Three binomial standard deviations around the analytic value.
    pub bound_3sigma: f64,
}

impl BerEstimate {
    pub fn within_bound(&self) -> bool {
        (self.empirical - self.analytic).abs() <= self.bound_3sigma
    }
}

/// Sends `trials` uniformly random bits from `transmitter` and detects them
/// at `receiver_bus` against the exact pre-phase level (a fully trained
/// receiver), which is the situation [`analytic_ber`] describes.
pub fn monte_carlo_ber<R: Rng + ?Sized>(
    grid: &GridSpec,
    transmitter: usize,
    receiver_bus: usize,
    params: &PowerTalkParams,
    trials: usize,
    rng: &mut R,
) -> Result<BerEstimate> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let (nominal, zero, one) = receiver_levels(grid, transmitter, receiver_bus, params)?;
    let mut errors = 0;
    for _ in 0..trials {
        let bit: bool = rng.random();
        let level = if bit { one } else { zero };
        if detect_bit(observe_slot(level, params, rng), nominal) != bit {
            errors += 1;
        }
    }
    let swing = (one - nominal).abs();
    let analytic = analytic_ber(swing, params)?;
    Ok(BerEstimate {
        gamma: params.gamma,
        swing,
        trials,
        errors,
        empirical: errors as f64 / trials as f64,
        analytic,
        bound_3sigma: 3.0 * (analytic * (1.0 - analytic) / trials as f64).sqrt(),
    })
}
