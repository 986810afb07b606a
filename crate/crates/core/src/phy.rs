//! Propagation, carrier sensing and reception.
//!
//! All powers are in dBm, gains and losses in dB. Aggregation of several
//! signals (CCA energy detection, interference) is always done in the linear
//! domain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("degenerate geometry: link distance {distance_m} m must be > 0")]
    DegenerateGeometry { distance_m: f64 },
    #[error("MCS table is empty")]
    EmptyMcsTable,
    #[error("MCS table not sorted ascending by min_snr_db at entry {index}")]
    UnsortedMcsTable { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub antenna_gain_tx_dbi: f64,
    pub antenna_gain_rx_dbi: f64,
    pub noise_dbm: f64,
    pub cca_dbm: f64,
    pub capture_threshold_db: f64,
    pub bandwidth_mhz: f64,
    pub carrier_ghz: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 20.0,
            antenna_gain_tx_dbi: 0.0,
            antenna_gain_rx_dbi: 0.0,
            noise_dbm: -95.0,
            cca_dbm: -82.0,
            capture_threshold_db: 10.0,
            bandwidth_mhz: 20.0,
            carrier_ghz: 6.0,
        }
    }
}

/// How the shadowing and obstacle terms enter the path loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shadowing {
    /// Expected value: `σ/2` plus `ω/2` per 10 m.
    #[default]
    Expected,
    /// `σ·U[0,1]` and `ω·U[0,1]` per 10 m, drawn once per link at deployment time.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathLossParams {
    /// Loss at the 1 m reference distance.
    pub pl0_db: f64,
    pub exponent: f64,
    pub shadow_db: f64,
    pub obstacle_db: f64,
    pub shadowing: Shadowing,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self {
            pl0_db: 5.0,
            exponent: 4.4,
            shadow_db: 9.5,
            obstacle_db: 30.0,
            shadowing: Shadowing::Expected,
        }
    }
}

/// Received power, SNR and SINR of one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub rx_power_dbm: f64,
    pub snr_db: f64,
    pub sinr_db: f64,
}

impl LinkBudget {
    pub fn new(rx_power_dbm: f64, interferers_dbm: &[f64], noise_dbm: f64) -> Self {
        Self {
            rx_power_dbm,
            snr_db: rx_power_dbm - noise_dbm,
            sinr_db: sinr(rx_power_dbm, interferers_dbm, noise_dbm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McsEntry {
    pub min_snr_db: f64,
    pub rate_bps: f64,
}

/// 20 MHz, one spatial stream, 0.8 µs guard interval (HE MCS 0-7).
///
/// SNR thresholds are approximate; the table is configuration data and is
/// overridden from the run config when present.
pub fn default_mcs_table() -> Vec<McsEntry> {
    [
        (5.0, 8.6e6),
        (8.0, 17.2e6),
        (11.0, 25.8e6),
        (14.0, 34.4e6),
        (18.0, 51.6e6),
        (22.0, 68.8e6),
        (24.0, 77.4e6),
        (26.0, 86.0e6),
    ]
    .into_iter()
    .map(|(min_snr_db, rate_bps)| McsEntry {
        min_snr_db,
        rate_bps,
    })
    .collect()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Path loss with explicit shadowing/obstacle draws in `[0, 1]`.
pub fn path_loss_with_draws(
    distance_m: f64,
    params: &PathLossParams,
    shadow_draw: f64,
    obstacle_draw: f64,
) -> Result<f64, PhyError> {
    if !(distance_m > 0.0) {
        return Err(PhyError::DegenerateGeometry { distance_m });
    }
    Ok(params.pl0_db
        + 10.0 * params.exponent * distance_m.log10()
        + params.shadow_db * shadow_draw
        + params.obstacle_db * obstacle_draw * (distance_m / 10.0))
}

/// Deterministic log-distance path loss with expected-value shadowing:
/// `PL0 + 10·ν·log10(d) + σ/2 + (ω/2)·(d/10)`.
pub fn path_loss(distance_m: f64, params: &PathLossParams) -> Result<f64, PhyError> {
    path_loss_with_draws(distance_m, params, 0.5, 0.5)
}

pub fn rx_power(tx: &RadioConfig, distance_m: f64, params: &PathLossParams) -> Result<f64, PhyError> {
    Ok(tx.tx_power_dbm + tx.antenna_gain_tx_dbi + tx.antenna_gain_rx_dbi
        - path_loss(distance_m, params)?)
}

/// Energy detection: busy iff the linear sum of the detected powers reaches
/// the CCA threshold.
pub fn cca_busy(detected_powers_dbm: &[f64], cca_dbm: f64) -> bool {
    if detected_powers_dbm.is_empty() {
        return false;
    }
    let total: f64 = detected_powers_dbm.iter().copied().map(dbm_to_mw).sum();
    mw_to_dbm(total) >= cca_dbm
}

pub fn sinr(signal_dbm: f64, interferers_dbm: &[f64], noise_dbm: f64) -> f64 {
    if interferers_dbm.is_empty() {
        return signal_dbm - noise_dbm;
    }
    let interference: f64 = interferers_dbm.iter().copied().map(dbm_to_mw).sum();
    mw_to_dbm(dbm_to_mw(signal_dbm) / (dbm_to_mw(noise_dbm) + interference))
}

/// SINR from linear-domain quantities, used by the simulator's frame tracker.
pub fn sinr_linear(signal_mw: f64, interference_mw: f64, noise_mw: f64) -> f64 {
    mw_to_dbm(signal_mw / (noise_mw + interference_mw))
}

/// Capture check. Equality decodes.
pub fn decodable(sinr_db: f64, capture_threshold_db: f64) -> bool {
    sinr_db >= capture_threshold_db
}

pub fn validate_mcs_table(table: &[McsEntry]) -> Result<(), PhyError> {
    if table.is_empty() {
        return Err(PhyError::EmptyMcsTable);
    }
    for (index, pair) in table.windows(2).enumerate() {
        if !(pair[0].min_snr_db < pair[1].min_snr_db) {
            return Err(PhyError::UnsortedMcsTable { index: index + 1 });
        }
    }
    Ok(())
}

/// Rate of the highest entry whose threshold is met; `0.0` when the link is
/// below the first entry.
pub fn snr_to_rate(snr_db: f64, mcs_table: &[McsEntry]) -> Result<f64, PhyError> {
    validate_mcs_table(mcs_table)?;
    Ok(mcs_table
        .iter()
        .rev()
        .find(|e| e.min_snr_db <= snr_db)
        .map_or(0.0, |e| e.rate_bps))
}
