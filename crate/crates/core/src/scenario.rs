//! Deployment generators for the four experiment families and config
//! validation.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backoff::{BssId, PolicyKind, PolicyParams};
use crate::config::RunConfig;
use crate::phy::{self, PathLossParams, RadioConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssSpec {
    pub bss_id: BssId,
    pub ap: Point,
    pub sta: Point,
    pub channel: u32,
    pub policy: PolicyKind,
    pub params: PolicyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub bsss: Vec<BssSpec>,
    /// Width and height of the area in metres.
    pub area_m: (f64, f64),
    pub seed: u64,
}

impl Deployment {
    pub fn n_bss(&self) -> usize {
        self.bsss.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ToyA,
    ToyB,
    Overlap,
    Grid,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ToyA => "toy_a",
            ExperimentKind::ToyB => "toy_b",
            ExperimentKind::Overlap => "overlap",
            ExperimentKind::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n_bss: usize,
    /// Number of independent deployments.
    pub n_sim: usize,
    pub horizon_s: f64,
    /// Metric interval Δ.
    pub interval_s: f64,
    /// Explicit per-deployment seeds; `master_seed + i` when absent.
    pub seeds: Option<Vec<u64>>,
    /// AP-to-AP distance of the two-BSS toy scenarios.
    pub toy_ap_separation_m: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Overlap,
            n_bss: 9,
            n_sim: 100,
            horizon_s: 100.0,
            interval_s: 1.0,
            seeds: None,
            toy_ap_separation_m: 10.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("no toy geometry satisfies: {0}")]
    NoToyGeometry(String),
    #[error(transparent)]
    Phy(#[from] phy::PhyError),
}

/// Required distance from the capture threshold when solving toy geometry.
pub const TOY_MARGIN_DB: f64 = 3.0;
const TOY_SEARCH_STEP_M: f64 = 0.25;

fn rx(radio: &RadioConfig, pl: &PathLossParams, a: &Point, b: &Point) -> Result<f64, phy::PhyError> {
    phy::rx_power(radio, a.distance(b), pl)
}

/// SINR at each STA when both APs transmit at once, and at each AP when
/// both STAs answer at once.
pub fn toy_simultaneous_sinr(
    aps: [Point; 2],
    stas: [Point; 2],
    radio: &RadioConfig,
    pl: &PathLossParams,
) -> Result<[f64; 4], phy::PhyError> {
    let mut out = [0.0; 4];
    for i in 0..2 {
        let j = 1 - i;
        let at_sta = phy::sinr(
            rx(radio, pl, &aps[i], &stas[i])?,
            &[rx(radio, pl, &aps[j], &stas[i])?],
            radio.noise_dbm,
        );
        let at_ap = phy::sinr(
            rx(radio, pl, &stas[i], &aps[i])?,
            &[rx(radio, pl, &stas[j], &aps[i])?],
            radio.noise_dbm,
        );
        out[i] = at_sta;
        out[2 + i] = at_ap;
    }
    Ok(out)
}

/// Two overlapping BSSs. In variant A each STA sits on the far side of its
/// AP, as far out as the capture constraints allow with [`TOY_MARGIN_DB`]
/// to spare, so simultaneous exchanges all decode. In variant B each STA
/// sits between the APs, at the smallest offset where simultaneous RTSs
/// fail at both STAs by the same margin while a lone RTS still decodes.
pub fn gen_toy(
    variant_a: bool,
    separation_m: f64,
    radio: &RadioConfig,
    pl: &PathLossParams,
) -> Result<Deployment, ScenarioError> {
    let gamma = radio.capture_threshold_db;
    let half = separation_m / 2.0;
    let y = half;
    let ap1 = Point::new(half, y);
    let ap2 = Point::new(half + separation_m, y);
    let area = (2.0 * separation_m, separation_m);

    let ap_link = rx(radio, pl, &ap1, &ap2)?;
    if ap_link < radio.cca_dbm + TOY_MARGIN_DB {
        return Err(ScenarioError::NoToyGeometry(format!(
            "AP-AP power {ap_link:.2} dBm >= CCA {} dBm + {TOY_MARGIN_DB} dB",
            radio.cca_dbm
        )));
    }

    let steps = (half / TOY_SEARCH_STEP_M).floor() as usize;
    let offsets: Vec<f64> = (1..=steps).map(|k| k as f64 * TOY_SEARCH_STEP_M).collect();
    let place = |s: f64| -> [Point; 2] {
        if variant_a {
            [Point::new(ap1.x - s, y), Point::new(ap2.x + s, y)]
        } else {
            [Point::new(ap1.x + s, y), Point::new(ap2.x - s, y)]
        }
    };

    let chosen = if variant_a {
        let mut best = None;
        for &s in &offsets {
            let stas = place(s);
            let sinrs = toy_simultaneous_sinr([ap1, ap2], stas, radio, pl)?;
            if sinrs.iter().all(|&v| v >= gamma + TOY_MARGIN_DB) {
                best = Some(s);
            }
        }
        best.ok_or_else(|| {
            ScenarioError::NoToyGeometry(format!(
                "simultaneous SINR >= {} dB at all four receivers",
                gamma + TOY_MARGIN_DB
            ))
        })?
    } else {
        let mut found = None;
        for &s in &offsets {
            let stas = place(s);
            let sinrs = toy_simultaneous_sinr([ap1, ap2], stas, radio, pl)?;
            let alone = [
                rx(radio, pl, &ap1, &stas[0])? - radio.noise_dbm,
                rx(radio, pl, &ap2, &stas[1])? - radio.noise_dbm,
            ];
            if sinrs[..2].iter().all(|&v| v <= gamma - TOY_MARGIN_DB)
                && alone.iter().all(|&v| v >= gamma + TOY_MARGIN_DB)
            {
                found = Some(s);
                break;
            }
        }
        found.ok_or_else(|| {
            ScenarioError::NoToyGeometry(format!(
                "simultaneous SINR <= {} dB at both STAs with lone SNR >= {} dB",
                gamma - TOY_MARGIN_DB,
                gamma + TOY_MARGIN_DB
            ))
        })?
    };

    let stas = place(chosen);
    let policy = PolicyKind::Beb;
    Ok(Deployment {
        bsss: vec![
            BssSpec {
                bss_id: 1,
                ap: ap1,
                sta: stas[0],
                channel: 0,
                policy,
                params: PolicyParams::default(),
            },
            BssSpec {
                bss_id: 2,
                ap: ap2,
                sta: stas[1],
                channel: 0,
                policy,
                params: PolicyParams::default(),
            },
        ],
        area_m: area,
        seed: 0,
    })
}

pub const OVERLAP_AREA_M: f64 = 20.0;
pub const OVERLAP_AP_DISC_M: f64 = 2.0;
pub const OVERLAP_STA_MIN_M: f64 = 3.0;
pub const OVERLAP_STA_MAX_M: f64 = 4.0;

/// `n_bss` APs uniformly inside a 2 m disc at the centre of a 20×20 m area,
/// each STA 3-4 m from its AP at a uniform angle. One channel.
///
/// Draw order per BSS: AP radius, AP angle, STA angle, STA radius.
pub fn gen_overlap<R: Rng + ?Sized>(n_bss: usize, seed: u64, rng: &mut R) -> Deployment {
    let c = OVERLAP_AREA_M / 2.0;
    let bsss = (0..n_bss)
        .map(|i| {
            let r = OVERLAP_AP_DISC_M * rng.gen::<f64>().sqrt();
            let theta = TAU * rng.gen::<f64>();
            let ap = Point::new(c + r * theta.cos(), c + r * theta.sin());
            let phi = TAU * rng.gen::<f64>();
            let d = rng.gen_range(OVERLAP_STA_MIN_M..=OVERLAP_STA_MAX_M);
            let sta = Point::new(ap.x + d * phi.cos(), ap.y + d * phi.sin());
            BssSpec {
                bss_id: i as BssId + 1,
                ap,
                sta,
                channel: 0,
                policy: PolicyKind::Beb,
                params: PolicyParams::default(),
            }
        })
        .collect();
    Deployment {
        bsss,
        area_m: (OVERLAP_AREA_M, OVERLAP_AREA_M),
        seed,
    }
}

pub const GRID_CELL_M: f64 = 5.0;
pub const GRID_SIDE: usize = 3;
pub const GRID_REUSE: u32 = 3;
/// STAs closer than this to their AP are redrawn.
const GRID_MIN_LINK_M: f64 = 0.1;

/// Channel of the cell at (`row`, `col`): diagonal stripes over `GRID_REUSE` channels.
pub fn grid_channel(row: usize, col: usize) -> u32 {
    ((row + col) % GRID_REUSE as usize) as u32
}

/// 3×3 grid of 5×5 m cells, AP at each cell centre, STA uniform inside the
/// cell. The first `n_bss` cells in row-major order are populated.
pub fn gen_grid<R: Rng + ?Sized>(n_bss: usize, seed: u64, rng: &mut R) -> Deployment {
    let half = GRID_CELL_M / 2.0;
    let mut bsss = Vec::with_capacity(n_bss);
    for cell in 0..n_bss.min(GRID_SIDE * GRID_SIDE) {
        let (row, col) = (cell / GRID_SIDE, cell % GRID_SIDE);
        let ap = Point::new(col as f64 * GRID_CELL_M + half, row as f64 * GRID_CELL_M + half);
        let sta = loop {
            let p = Point::new(
                ap.x + rng.gen_range(-half..=half),
                ap.y + rng.gen_range(-half..=half),
            );
            if p.distance(&ap) >= GRID_MIN_LINK_M {
                break p;
            }
        };
        bsss.push(BssSpec {
            bss_id: cell as BssId + 1,
            ap,
            sta,
            channel: grid_channel(row, col),
            policy: PolicyKind::Beb,
            params: PolicyParams::default(),
        });
    }
    let side = GRID_SIDE as f64 * GRID_CELL_M;
    Deployment {
        bsss,
        area_m: (side, side),
        seed,
    }
}

/// Builds the deployment for `config` and applies the policy assignment.
pub fn generate<R: Rng + ?Sized>(
    config: &RunConfig,
    seed: u64,
    rng: &mut R,
) -> Result<Deployment, ScenarioError> {
    let exp = &config.experiment;
    let mut deployment = match exp.kind {
        ExperimentKind::ToyA | ExperimentKind::ToyB => {
            let mut d = gen_toy(
                exp.kind == ExperimentKind::ToyA,
                exp.toy_ap_separation_m,
                &config.radio,
                &config.path_loss,
            )?;
            d.seed = seed;
            d
        }
        ExperimentKind::Overlap => gen_overlap(exp.n_bss, seed, rng),
        ExperimentKind::Grid => gen_grid(exp.n_bss, seed, rng),
    };
    for bss in &mut deployment.bsss {
        let (policy, params) = config.policy_for(bss.bss_id);
        bss.policy = policy;
        bss.params = params;
    }
    Ok(deployment)
}

/// One violated configuration constraint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every constraint and returns all violations.
pub fn validate(config: &RunConfig) -> Result<(), Vec<ValidationError>> {
    let mut errs = Vec::new();
    let mut fail = |field: &str, message: String| {
        errs.push(ValidationError {
            field: field.to_string(),
            message,
        })
    };

    if config.schema_version != crate::config::SCHEMA_VERSION {
        fail(
            "schema_version",
            format!(
                "unsupported schema version {} (expected {})",
                config.schema_version,
                crate::config::SCHEMA_VERSION
            ),
        );
    }

    let exp = &config.experiment;
    match exp.kind {
        ExperimentKind::Overlap | ExperimentKind::Grid => {
            if !(1..=9).contains(&exp.n_bss) {
                fail("experiment.n_bss", format!("n_bss out of [1,9]: {}", exp.n_bss));
            }
        }
        ExperimentKind::ToyA | ExperimentKind::ToyB => {
            if exp.n_bss != 2 {
                fail("experiment.n_bss", format!("toy scenarios have exactly 2 BSSs, got {}", exp.n_bss));
            }
            if !(exp.toy_ap_separation_m > 0.0) {
                fail("experiment.toy_ap_separation_m", "must be > 0".into());
            }
        }
    }
    if exp.n_sim < 1 {
        fail("experiment.n_sim", "n_sim must be >= 1".into());
    }
    if !(exp.horizon_s > 0.0 && exp.horizon_s.is_finite()) {
        fail("experiment.horizon_s", format!("horizon must be positive, got {}", exp.horizon_s));
    }
    if !(exp.interval_s > 0.0 && exp.interval_s <= exp.horizon_s) {
        fail(
            "experiment.interval_s",
            format!("interval must be in (0, horizon], got {}", exp.interval_s),
        );
    }
    if let Some(seeds) = &exp.seeds {
        if seeds.len() != exp.n_sim {
            fail(
                "experiment.seeds",
                format!("{} seeds given for n_sim = {}", seeds.len(), exp.n_sim),
            );
        }
    }

    let r = &config.radio;
    if !(r.cca_dbm > r.noise_dbm) {
        fail("radio.cca_dbm", format!("CCA {} dBm must exceed noise {} dBm", r.cca_dbm, r.noise_dbm));
    }
    if !(r.capture_threshold_db >= 0.0) {
        fail("radio.capture_threshold_db", "must be >= 0".into());
    }

    let pl = &config.path_loss;
    if !(pl.exponent > 0.0) {
        fail("path_loss.exponent", "must be > 0".into());
    }
    if !(pl.pl0_db >= 0.0) {
        fail("path_loss.pl0_db", "must be >= 0".into());
    }

    let t = &config.mac;
    for (name, v) in [
        ("mac.slot_us", t.slot_us),
        ("mac.sifs_us", t.sifs_us),
        ("mac.difs_us", t.difs_us),
        ("mac.rts_us", t.rts_us),
        ("mac.cts_us", t.cts_us),
        ("mac.back_us", t.back_us),
        ("mac.phy_header_us", t.phy_header_us),
    ] {
        if !(v > 0.0) {
            fail(name, format!("duration must be > 0, got {v}"));
        }
    }
    if (t.difs_us - (t.sifs_us + 2.0 * t.slot_us)).abs() > 1e-9 {
        fail(
            "mac.difs_us",
            format!(
                "difs = sifs + 2*slot violated: {} != {} + 2*{}",
                t.difs_us, t.sifs_us, t.slot_us
            ),
        );
    }

    let l = &config.txop;
    if !(l.txop_max_us > 0.0) {
        fail("txop.txop_max_us", "must be > 0".into());
    }
    if !(1..=64).contains(&l.ampdu_max) {
        fail("txop.ampdu_max", format!("A-MPDU size out of [1,64]: {}", l.ampdu_max));
    }
    if l.mpdu_bytes == 0 {
        fail("txop.mpdu_bytes", "must be >= 1".into());
    }

    if let Err(e) = phy::validate_mcs_table(&config.mcs_table) {
        fail("mcs_table", e.to_string());
    }
    if config.mcs_table.iter().any(|e| !(e.rate_bps > 0.0)) {
        fail("mcs_table", "every rate_bps must be > 0".into());
    }

    let check_params = |field: &str, p: &PolicyParams, fail: &mut dyn FnMut(&str, String)| {
        if p.cw0 < 1 {
            fail(field, "cw0 must be >= 1".into());
        }
        if u64::from(p.cw0) << p.n_max.min(40) > u64::from(u32::MAX / 2) {
            fail(field, format!("cw0 * 2^n_max overflows: cw0 {} n_max {}", p.cw0, p.n_max));
        }
    };
    check_params("policy", &config.policy.params(), &mut fail);

    let mut seen = std::collections::BTreeSet::new();
    for (i, o) in config.bss_overrides.iter().enumerate() {
        let field = format!("bss_overrides[{i}]");
        if o.bss_id < 1 || o.bss_id as usize > exp.n_bss {
            fail(&field, format!("bss_id {} not in [1,{}]", o.bss_id, exp.n_bss));
        }
        if !seen.insert(o.bss_id) {
            fail(&field, format!("duplicate override for bss_id {}", o.bss_id));
        }
        let (_, p) = config.policy_for(o.bss_id);
        check_params(&field, &p, &mut fail);
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
