//! DCF state machine of one contending AP: backoff countdown with freezing,
//! the RTS/CTS + A-MPDU + Block Ack exchange timeline, and attempt records.
//!
//! The countdown is event-driven. When the medium becomes idle at `t` with
//! `k` slots left, the expiry is scheduled at `t + DIFS + k·slot`. A busy
//! transition before that cancels the expiry and keeps only the whole slots
//! that elapsed after DIFS.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backoff::{compute_backoff, BackoffDraw, BssId, ContentionState, PolicyKind, PolicyParams};
use crate::engine::{EventHandle, EventQueue, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MacError {
    #[error("link unusable: data rate {rate_bps} b/s")]
    LinkUnusable { rate_bps: f64 },
}

/// Interframe spaces and control-frame airtimes, in microseconds.
///
/// Control frames are sized for the 6 Mb/s legacy rate including the 20 µs
/// legacy preamble (RTS 20 B, CTS 14 B, Block Ack 32 B). These are
/// approximations, not values taken from any standard timing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacTimings {
    pub slot_us: f64,
    pub sifs_us: f64,
    pub difs_us: f64,
    pub rts_us: f64,
    pub cts_us: f64,
    pub back_us: f64,
    pub phy_header_us: f64,
}

impl Default for MacTimings {
    fn default() -> Self {
        Self {
            slot_us: 9.0,
            sifs_us: 16.0,
            difs_us: 34.0,
            rts_us: 52.0,
            cts_us: 44.0,
            back_us: 68.0,
            phy_header_us: 40.0,
        }
    }
}

impl MacTimings {
    pub fn slot(&self) -> SimTime {
        SimTime::from_micros_f64(self.slot_us)
    }
    pub fn sifs(&self) -> SimTime {
        SimTime::from_micros_f64(self.sifs_us)
    }
    pub fn difs(&self) -> SimTime {
        SimTime::from_micros_f64(self.difs_us)
    }
    pub fn rts(&self) -> SimTime {
        SimTime::from_micros_f64(self.rts_us)
    }
    pub fn cts(&self) -> SimTime {
        SimTime::from_micros_f64(self.cts_us)
    }
    pub fn back(&self) -> SimTime {
        SimTime::from_micros_f64(self.back_us)
    }
    pub fn phy_header(&self) -> SimTime {
        SimTime::from_micros_f64(self.phy_header_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TxopLimits {
    pub txop_max_us: f64,
    pub ampdu_max: u32,
    /// Payload of one MPDU in bytes.
    pub mpdu_bytes: u32,
}

impl Default for TxopLimits {
    fn default() -> Self {
        Self {
            txop_max_us: 5484.0,
            ampdu_max: 64,
            mpdu_bytes: 1500,
        }
    }
}

/// Data part of one TXOP: PHY header, the A-MPDU, SIFS and the Block Ack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxopPlan {
    pub mpdu_count: u32,
    pub mpdu_bytes: u32,
    pub data_rate_bps: f64,
    /// PHY header + A-MPDU airtime.
    pub data_duration: SimTime,
    /// `data_duration + SIFS + BAck`, the quantity bounded by TXOP_max.
    pub total_duration: SimTime,
}

impl TxopPlan {
    pub fn payload_bits(&self) -> u64 {
        u64::from(self.mpdu_count) * u64::from(self.mpdu_bytes) * 8
    }

    /// Whole exchange: RTS, SIFS, CTS, SIFS, data, SIFS, BAck.
    pub fn exchange_duration(&self, t: &MacTimings) -> SimTime {
        t.rts() + t.sifs() + t.cts() + t.sifs() + self.total_duration
    }
}

/// Airtime of `bits` at `rate_bps`, rounded up to the nanosecond.
pub fn airtime(bits: u64, rate_bps: f64) -> SimTime {
    SimTime::from_nanos((bits as f64 * 1e9 / rate_bps).ceil() as u64)
}

/// Largest A-MPDU (at most `ampdu_max`, at least one MPDU) whose data part
/// fits in TXOP_max.
pub fn plan_txop(
    link_rate_bps: f64,
    timings: &MacTimings,
    limits: &TxopLimits,
) -> Result<TxopPlan, MacError> {
    if !(link_rate_bps > 0.0) {
        return Err(MacError::LinkUnusable {
            rate_bps: link_rate_bps,
        });
    }
    let txop_max = SimTime::from_micros_f64(limits.txop_max_us);
    let overhead = timings.phy_header() + timings.sifs() + timings.back();
    let mpdu_bits = u64::from(limits.mpdu_bytes) * 8;
    let fits = |k: u32| overhead + airtime(u64::from(k) * mpdu_bits, link_rate_bps) <= txop_max;
    let mpdu_count = (1..=limits.ampdu_max.max(1))
        .rev()
        .find(|&k| fits(k))
        .unwrap_or(1);
    let data_duration =
        timings.phy_header() + airtime(u64::from(mpdu_count) * mpdu_bits, link_rate_bps);
    Ok(TxopPlan {
        mpdu_count,
        mpdu_bytes: limits.mpdu_bytes,
        data_rate_bps: link_rate_bps,
        data_duration,
        total_duration: data_duration + timings.sifs() + timings.back(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MacPhase {
    IdleWaitDifs,
    CountingDown,
    Frozen,
    TxRts,
    WaitCts,
    TxData,
    WaitBack,
}

impl MacPhase {
    pub fn is_transmitting(self) -> bool {
        matches!(
            self,
            MacPhase::TxRts | MacPhase::WaitCts | MacPhase::TxData | MacPhase::WaitBack
        )
    }
}

/// Steps of the exchange timeline, each scheduled as a `TxPhaseEnd` event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPhase {
    RtsEnd,
    CtsStart,
    CtsEnd,
    DataStart,
    DataEnd,
    BackStart,
    BackEnd,
    /// The exchange is over; the medium is released.
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SimEvent {
    BackoffExpiry(usize),
    TxPhaseEnd(usize, TxPhase),
    IntervalBoundary(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxOutcome {
    Success,
    RtsLoss,
    DataLoss,
}

/// One RTS-initiated TXOP attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxAttempt {
    pub device: usize,
    pub bss_id: BssId,
    pub rts_start: SimTime,
    pub end: SimTime,
    pub outcome: TxOutcome,
    pub mpdu_count: u32,
    /// Payload acknowledged by the Block Ack (0 unless successful).
    pub delivered_bits: u64,
    /// Start of the contention that led to this access, counted from the
    /// last successful TXOP (failed cycles in between are included).
    pub contention_origin: SimTime,
}

/// Channel access delay of a successful attempt; `None` otherwise.
pub fn access_delay(attempt: &TxAttempt) -> Option<SimTime> {
    (attempt.outcome == TxOutcome::Success).then(|| attempt.rts_start - attempt.contention_origin)
}

/// Countdown and handshake state of one AP.
#[derive(Debug, Clone)]
pub struct DeviceMacState {
    pub phase: MacPhase,
    pub remaining_slots: u32,
    pub contention: ContentionState,
    /// Origin of the access-delay measurement.
    pub backoff_started_at: SimTime,
    pub last_draw: Option<BackoffDraw>,
    resumed_at: SimTime,
    expiry: Option<(EventHandle, SimTime)>,
}

impl DeviceMacState {
    pub fn new(bss_id: BssId) -> Self {
        Self {
            phase: MacPhase::Frozen,
            remaining_slots: 0,
            contention: ContentionState::new(bss_id),
            backoff_started_at: SimTime::ZERO,
            last_draw: None,
            resumed_at: SimTime::ZERO,
            expiry: None,
        }
    }

    /// Time of the pending backoff expiry, if counting down.
    pub fn expiry_time(&self) -> Option<SimTime> {
        self.expiry.map(|(_, t)| t)
    }

    /// The backoff expires exactly now: the device transmits in this slot
    /// and no longer reacts to the medium.
    pub fn is_committed(&self, now: SimTime) -> bool {
        self.expiry_time() == Some(now)
    }

    /// Phase with the DIFS wait resolved against `now`.
    pub fn phase_at(&self, now: SimTime, timings: &MacTimings) -> MacPhase {
        match self.phase {
            MacPhase::IdleWaitDifs if now >= self.resumed_at + timings.difs() => MacPhase::CountingDown,
            p => p,
        }
    }

    fn is_contending(&self) -> bool {
        matches!(self.phase, MacPhase::IdleWaitDifs | MacPhase::CountingDown)
    }

    /// Records the result of the attempt that just ended and draws the next
    /// backoff. The draw uses the interruption count of the countdown that
    /// led to this attempt; the count is reset afterwards.
    pub fn conclude_attempt<R: Rng + ?Sized>(
        &mut self,
        success: bool,
        kind: PolicyKind,
        params: &PolicyParams,
        rng: &mut R,
    ) -> BackoffDraw {
        let ipt = self.contention.ipt;
        self.contention.on_transmission_outcome(success);
        compute_backoff(kind, &self.contention, ipt, params, rng)
    }

    /// Starts a countdown of `draw.slots`. Schedules the expiry if the
    /// medium is idle, otherwise waits frozen.
    #[allow(clippy::too_many_arguments)]
    pub fn begin_contention(
        &mut self,
        device: usize,
        draw: BackoffDraw,
        now: SimTime,
        channel_busy: bool,
        reset_delay_origin: bool,
        timings: &MacTimings,
        queue: &mut EventQueue<SimEvent>,
    ) {
        if reset_delay_origin {
            self.backoff_started_at = now;
        }
        self.last_draw = Some(draw);
        self.remaining_slots = draw.slots;
        self.expiry = None;
        if channel_busy {
            self.phase = MacPhase::Frozen;
        } else {
            self.resume(device, now, timings, queue);
        }
    }

    fn resume(
        &mut self,
        device: usize,
        now: SimTime,
        timings: &MacTimings,
        queue: &mut EventQueue<SimEvent>,
    ) {
        let at = now + timings.difs() + timings.slot().times(u64::from(self.remaining_slots));
        let handle = queue.schedule(at, SimEvent::BackoffExpiry(device));
        self.phase = MacPhase::IdleWaitDifs;
        self.resumed_at = now;
        self.expiry = Some((handle, at));
    }

    /// Medium went busy. Returns `true` if a running countdown (or DIFS
    /// wait) was interrupted; the caller then applies the policy's
    /// interruption bookkeeping.
    pub fn on_channel_busy(
        &mut self,
        now: SimTime,
        timings: &MacTimings,
        queue: &mut EventQueue<SimEvent>,
    ) -> bool {
        if !self.is_contending() || self.is_committed(now) {
            return false;
        }
        let (handle, _) = self.expiry.take().expect("contending device has an expiry");
        queue.cancel(handle);
        let countdown_start = self.resumed_at + timings.difs();
        if now > countdown_start {
            let elapsed = (now - countdown_start).as_nanos() / timings.slot().as_nanos();
            self.remaining_slots -= elapsed as u32;
        }
        self.phase = MacPhase::Frozen;
        true
    }

    /// Medium went idle; a frozen countdown resumes after DIFS.
    pub fn on_channel_idle(
        &mut self,
        device: usize,
        now: SimTime,
        timings: &MacTimings,
        queue: &mut EventQueue<SimEvent>,
    ) {
        if self.phase == MacPhase::Frozen {
            self.resume(device, now, timings, queue);
        }
    }

    /// Replaces the pending backoff with `slots` (token-driven recomputation).
    pub fn replace_backoff(
        &mut self,
        device: usize,
        draw: BackoffDraw,
        now: SimTime,
        timings: &MacTimings,
        queue: &mut EventQueue<SimEvent>,
    ) {
        self.last_draw = Some(draw);
        match self.phase {
            MacPhase::Frozen => self.remaining_slots = draw.slots,
            MacPhase::IdleWaitDifs | MacPhase::CountingDown => {
                if let Some((handle, _)) = self.expiry.take() {
                    queue.cancel(handle);
                }
                let countdown_start = self.resumed_at + timings.difs();
                let elapsed = if now > countdown_start {
                    (now - countdown_start).as_nanos() / timings.slot().as_nanos()
                } else {
                    0
                };
                let at = (countdown_start + timings.slot().times(elapsed + u64::from(draw.slots))).max(now);
                self.remaining_slots = draw.slots;
                let handle = queue.schedule(at, SimEvent::BackoffExpiry(device));
                self.expiry = Some((handle, at));
            }
            _ => {}
        }
    }

    /// Backoff expired: the device leaves contention and sends its RTS.
    pub fn start_exchange(&mut self) {
        self.expiry = None;
        self.remaining_slots = 0;
        self.phase = MacPhase::TxRts;
    }
}
