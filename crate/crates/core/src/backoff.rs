//! Backoff computation for the three contention policies.
//!
//! * **BEB**: `CW = CW0 · 2^min(n, Nmax)`, `BO ~ U[0, CW-1]`.
//! * **DB**: `BO = b + IPT` while no collision is pending (`n == 0`); BEB
//!   otherwise. `IPT` counts how often the previous countdown was interrupted.
//! * **IYT**: every device keeps an ordered list of the BSSs it has heard
//!   (itself included) and a token naming the BSS whose turn it is. The
//!   circular distance `d` from the token to the device selects the window
//!   `U[d·CW0 - 1, (d+1)·CW0 - 1]`, so devices further from their turn draw
//!   strictly longer backoffs.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// BSS identifier as carried (abstractly) in frame headers. Always ≥ 1.
pub type BssId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Beb,
    Db,
    Iyt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Beb, PolicyKind::Db, PolicyKind::Iyt];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Beb => "beb",
            PolicyKind::Db => "db",
            PolicyKind::Iyt => "iyt",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beb" => Ok(PolicyKind::Beb),
            "db" => Ok(PolicyKind::Db),
            "iyt" => Ok(PolicyKind::Iyt),
            other => Err(format!("unknown policy '{other}' (expected beb, db or iyt)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    /// Initial contention window.
    pub cw0: u32,
    /// Maximum contention window stage.
    pub n_max: u32,
    /// DB base backoff.
    pub db_base: u32,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            cw0: 16,
            n_max: 5,
            db_base: 5,
        }
    }
}

/// A backoff value in idle slots plus the window it was drawn from.
///
/// `cw_used` is the BEB window, `0` for a deterministic DB draw, and the
/// upper window bound `(d+1)·CW0` for IYT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackoffDraw {
    pub slots: u32,
    pub cw_used: u32,
}

pub fn beb_window(n: u32, params: &PolicyParams) -> u32 {
    params.cw0 << n.min(params.n_max)
}

pub fn beb_backoff<R: Rng + ?Sized>(n: u32, params: &PolicyParams, rng: &mut R) -> BackoffDraw {
    let cw = beb_window(n, params);
    BackoffDraw {
        slots: rng.gen_range(0..cw),
        cw_used: cw,
    }
}

pub fn db_backoff<R: Rng + ?Sized>(
    n: u32,
    ipt: u32,
    params: &PolicyParams,
    rng: &mut R,
) -> BackoffDraw {
    if n == 0 {
        BackoffDraw {
            slots: params.db_base + ipt,
            cw_used: 0,
        }
    } else {
        beb_backoff(n, params, rng)
    }
}

/// Inclusive slot range `[max(0, d·CW0 - 1), (d+1)·CW0 - 1]` for token distance `d`.
pub fn iyt_window(token_distance: u32, params: &PolicyParams) -> (u32, u32) {
    let lo = (token_distance * params.cw0).saturating_sub(1);
    let hi = (token_distance + 1) * params.cw0 - 1;
    (lo, hi)
}

/// IYT ignores the collision counter: the window depends only on the
/// distance to the token.
pub fn iyt_backoff<R: Rng + ?Sized>(
    state: &ContentionState,
    params: &PolicyParams,
    rng: &mut R,
) -> BackoffDraw {
    let d = if state.token.is_some() {
        state.token_distance
    } else {
        0
    };
    let (lo, hi) = iyt_window(d, params);
    BackoffDraw {
        slots: rng.gen_range(lo..=hi),
        cw_used: hi + 1,
    }
}

/// Order in which neighbouring BSSs take turns.
pub trait OrderingPolicy {
    /// Inserts `id` at its position; returns `false` if already present.
    fn insert(&self, list: &mut Vec<BssId>, id: BssId) -> bool;

    /// Index of the BSS whose turn follows the one at `index`.
    fn successor(&self, list: &[BssId], index: usize) -> usize;

    fn position(&self, list: &[BssId], id: BssId) -> Option<usize>;
}

/// Ascending BSS identifier, round robin.
#[derive(Debug, Clone, Copy, Default)]
pub struct AscendingRoundRobin;

impl OrderingPolicy for AscendingRoundRobin {
    fn insert(&self, list: &mut Vec<BssId>, id: BssId) -> bool {
        match list.binary_search(&id) {
            Ok(_) => false,
            Err(at) => {
                list.insert(at, id);
                true
            }
        }
    }

    fn successor(&self, list: &[BssId], index: usize) -> usize {
        (index + 1) % list.len()
    }

    fn position(&self, list: &[BssId], id: BssId) -> Option<usize> {
        list.binary_search(&id).ok()
    }
}

/// Per-device contention bookkeeping shared by all policies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentionState {
    pub self_id: BssId,
    /// Consecutive failed attempts.
    pub n: u32,
    /// Interruptions during the current countdown.
    pub ipt: u32,
    /// Ordered neighbour list, always containing `self_id`.
    pub neighbor_list: Vec<BssId>,
    pub token: Option<BssId>,
    pub token_distance: u32,
}

impl ContentionState {
    pub fn new(self_id: BssId) -> Self {
        Self {
            self_id,
            n: 0,
            ipt: 0,
            neighbor_list: vec![self_id],
            token: None,
            token_distance: 0,
        }
    }

    /// A frame from `source` started. Above CCA it counts as an interruption
    /// and registers the source as a neighbour.
    pub fn iyt_on_tx_start(&mut self, source: BssId, rx_power_dbm: f64, cca_dbm: f64) {
        self.iyt_on_tx_start_with(&AscendingRoundRobin, source, rx_power_dbm, cca_dbm)
    }

    pub fn iyt_on_tx_start_with<O: OrderingPolicy>(
        &mut self,
        ordering: &O,
        source: BssId,
        rx_power_dbm: f64,
        cca_dbm: f64,
    ) {
        if rx_power_dbm < cca_dbm {
            return;
        }
        self.ipt += 1;
        if source != self.self_id {
            ordering.insert(&mut self.neighbor_list, source);
        }
    }

    /// A transmission by `source` ended; the token moves to its successor.
    /// Returns whether the token was updated.
    pub fn iyt_on_tx_end(&mut self, source: BssId) -> bool {
        self.iyt_on_tx_end_with(&AscendingRoundRobin, source)
    }

    pub fn iyt_on_tx_end_with<O: OrderingPolicy>(&mut self, ordering: &O, source: BssId) -> bool {
        let Some(at) = ordering.position(&self.neighbor_list, source) else {
            return false;
        };
        let len = self.neighbor_list.len();
        let holder = ordering.successor(&self.neighbor_list, at);
        let me = ordering
            .position(&self.neighbor_list, self.self_id)
            .expect("neighbour list always contains self");
        self.token = Some(self.neighbor_list[holder]);
        self.token_distance = ((me + len - holder) % len) as u32;
        true
    }

    /// The channel went busy while this device was counting down.
    pub fn on_backoff_decrement_interrupted(&mut self, kind: PolicyKind) {
        if kind == PolicyKind::Db {
            self.ipt += 1;
        }
    }

    pub fn on_transmission_outcome(&mut self, success: bool) {
        self.n = if success { 0 } else { self.n + 1 };
        self.ipt = 0;
    }
}

/// Draws the next backoff for `kind`. `ipt` is the interruption count of the
/// countdown that just finished (DB only).
pub fn compute_backoff<R: Rng + ?Sized>(
    kind: PolicyKind,
    state: &ContentionState,
    ipt: u32,
    params: &PolicyParams,
    rng: &mut R,
) -> BackoffDraw {
    match kind {
        PolicyKind::Beb => beb_backoff(state.n, params, rng),
        PolicyKind::Db => db_backoff(state.n, ipt, params, rng),
        PolicyKind::Iyt => iyt_backoff(state, params, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    /// Steps walked from the token to self going forward around the list.
    fn walk_distance(list: &[BssId], token: BssId, me: BssId) -> u32 {
        let mut at = list.iter().position(|&b| b == token).unwrap();
        let mut steps = 0;
        while list[at] != me {
            at = (at + 1) % list.len();
            steps += 1;
        }
        steps
    }

    fn state_with(self_id: BssId, list: &[BssId]) -> ContentionState {
        let mut s = ContentionState::new(self_id);
        for &b in list {
            s.iyt_on_tx_start(b, -50.0, -82.0);
        }
        s.ipt = 0;
        s
    }

    #[test]
    fn beb_window_doubles_and_caps() {
        let p = PolicyParams::default();
        let mut r = rng();
        let d = beb_backoff(0, &p, &mut r);
        assert_eq!(d.cw_used, 16);
        assert!(d.slots < 16);
        assert_eq!(beb_backoff(3, &p, &mut r).cw_used, 128);
        assert_eq!(beb_backoff(7, &p, &mut r).cw_used, 512);
    }

    #[test]
    fn db_is_deterministic_until_a_collision() {
        let p = PolicyParams::default();
        let mut r = rng();
        assert_eq!(db_backoff(0, 3, &p, &mut r), BackoffDraw { slots: 8, cw_used: 0 });
        assert_eq!(db_backoff(0, 0, &p, &mut r).slots, 5);
        for _ in 0..200 {
            let d = db_backoff(2, 9, &p, &mut r);
            assert_eq!(d.cw_used, 64);
            assert!(d.slots <= 63);
        }
    }

    #[test]
    fn iyt_window_examples() {
        let p = PolicyParams::default();
        assert_eq!(iyt_window(2, &p), (31, 47));
        assert_eq!(iyt_window(0, &p), (0, 15));
    }

    #[test]
    fn iyt_draw_without_token_matches_distance_zero() {
        let p = PolicyParams::default();
        let fresh = ContentionState::new(4);
        let mut r = rng();
        let mut seen = [false; 16];
        for _ in 0..5_000 {
            let d = iyt_backoff(&fresh, &p, &mut r);
            assert!(d.slots <= 15);
            seen[d.slots as usize] = true;
        }
        assert!(seen.iter().all(|&s| s), "every slot in [0, 15] reachable");
    }

    #[test]
    fn iyt_draw_spans_the_whole_window() {
        let p = PolicyParams::default();
        let mut s = state_with(3, &[1, 2]);
        s.iyt_on_tx_end(3); // token -> 1, self at distance 2
        assert_eq!(s.token_distance, 2);
        let mut r = rng();
        let (mut lo, mut hi) = (u32::MAX, 0);
        for _ in 0..5_000 {
            let d = iyt_backoff(&s, &p, &mut r);
            lo = lo.min(d.slots);
            hi = hi.max(d.slots);
        }
        assert_eq!((lo, hi), (31, 47));
    }

    #[test]
    fn tx_start_learns_neighbours_in_order() {
        let mut s = ContentionState::new(3);
        s.iyt_on_tx_start(7, -48.0, -82.0);
        assert_eq!(s.neighbor_list, vec![3, 7]);
        assert_eq!(s.ipt, 1);
        s.iyt_on_tx_start(7, -48.0, -82.0);
        assert_eq!(s.neighbor_list, vec![3, 7]);
        assert_eq!(s.ipt, 2);
        s.iyt_on_tx_start(9, -90.0, -82.0);
        assert_eq!(s.neighbor_list, vec![3, 7]);
        assert_eq!(s.ipt, 2);
        s.iyt_on_tx_start(1, -82.0, -82.0);
        assert_eq!(s.neighbor_list, vec![1, 3, 7]);
    }

    #[test]
    fn tx_end_passes_the_token() {
        let mut s = state_with(3, &[1, 2]);
        assert!(s.iyt_on_tx_end(2));
        assert_eq!(s.token, Some(3));
        assert_eq!(s.token_distance, 0);

        let mut s = state_with(3, &[1, 2]);
        s.iyt_on_tx_end(3);
        assert_eq!(s.token, Some(1));
        assert_eq!(s.token_distance, 2);

        let mut s = state_with(1, &[2, 3]);
        s.iyt_on_tx_end(3);
        assert_eq!(s.token, Some(1));
        assert_eq!(s.token_distance, 0);
    }

    #[test]
    fn tx_end_from_unknown_source_is_ignored() {
        let mut s = state_with(1, &[2]);
        let before = s.clone();
        assert!(!s.iyt_on_tx_end(5));
        assert_eq!(s, before);
    }

    #[test]
    fn token_distance_matches_enumeration_on_three_element_list() {
        let list = [1, 2, 3];
        for &me in &list {
            for &ender in &list {
                let mut s = state_with(me, &list);
                s.iyt_on_tx_end(ender);
                let token = s.token.unwrap();
                assert_eq!(s.token_distance, walk_distance(&list, token, me), "me={me} ender={ender}");
            }
        }
    }

    #[test]
    fn interruptions_only_count_for_db() {
        let mut s = ContentionState::new(1);
        s.ipt = 2;
        s.on_backoff_decrement_interrupted(PolicyKind::Db);
        assert_eq!(s.ipt, 3);
        s.on_backoff_decrement_interrupted(PolicyKind::Db);
        assert_eq!(s.ipt, 4);
        let mut b = ContentionState::new(1);
        b.on_backoff_decrement_interrupted(PolicyKind::Beb);
        assert_eq!(b, ContentionState::new(1));
    }

    #[test]
    fn outcome_updates_collision_counter() {
        let mut s = ContentionState::new(1);
        s.n = 4;
        s.ipt = 6;
        s.on_transmission_outcome(true);
        assert_eq!((s.n, s.ipt), (0, 0));
        s.n = 4;
        s.on_transmission_outcome(false);
        assert_eq!(s.n, 5);
        s.n = 0;
        s.on_transmission_outcome(false);
        assert_eq!(s.n, 1);
    }

    #[test]
    fn policy_names_round_trip() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert!("edca".parse::<PolicyKind>().is_err());
    }

    proptest! {
        #[test]
        fn neighbour_list_stays_sorted_and_unique(
            me in 1u32..20,
            calls in proptest::collection::vec((1u32..20, -100.0f64..-30.0), 0..60),
        ) {
            let mut s = ContentionState::new(me);
            for (src, p) in calls {
                s.iyt_on_tx_start(src, p, -82.0);
                prop_assert!(s.neighbor_list.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(s.neighbor_list.contains(&me));
            }
        }

        #[test]
        fn token_visits_every_member_cyclically(
            me in 1u32..12,
            others in proptest::collection::btree_set(1u32..12, 0..8),
            start in 0usize..12,
        ) {
            let mut s = state_with(me, &others.iter().copied().collect::<Vec<_>>());
            let list = s.neighbor_list.clone();
            let mut ender = list[start % list.len()];
            let mut visited = Vec::new();
            for _ in 0..list.len() {
                s.iyt_on_tx_end(ender);
                let t = s.token.unwrap();
                prop_assert!(list.contains(&t));
                prop_assert!((s.token_distance as usize) < list.len());
                prop_assert_eq!(s.token_distance, walk_distance(&list, t, me));
                visited.push(t);
                ender = t;
            }
            visited.sort_unstable();
            prop_assert_eq!(visited, list);
        }

        #[test]
        fn iyt_windows_are_ordered_by_distance(
            cw0 in 1u32..64, d1 in 0u32..20, gap in 1u32..20,
        ) {
            let d2 = d1 + gap;
            let p = PolicyParams { cw0, ..PolicyParams::default() };
            let (lo1, hi1) = iyt_window(d1, &p);
            let (lo2, hi2) = iyt_window(d2, &p);
            // consecutive windows share one boundary slot, others are disjoint
            prop_assert!(lo1 <= lo2 && hi1 < hi2);
            if gap == 1 {
                prop_assert!(hi1 <= lo2);
            } else {
                prop_assert!(hi1 < lo2);
            }
        }

        #[test]
        fn db_first_attempt_has_no_variance(b in 0u32..40, ipt in 0u32..40, seed in any::<u64>()) {
            let p = PolicyParams { db_base: b, ..PolicyParams::default() };
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let first = db_backoff(0, ipt, &p, &mut r);
            for _ in 0..8 {
                prop_assert_eq!(db_backoff(0, ipt, &p, &mut r), first);
            }
            prop_assert_eq!(first.slots, b + ipt);
        }
    }
}
