//! Stream-tier allocation across the student feeds on the tutor dashboard.
//!
//! Only the enlarged feed may run above the thumbnail tier. When the declared
//! bandwidth budget is exceeded, the allocator degrades in a fixed order:
//! zoomed feed High→Mid first, then thumbnails Low→Frozen in ascending
//! `PeerId` order.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::PeerId;

/// Tier names, declared lowest first so the derived order is by bitrate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierName {
    Frozen,
    Low,
    Mid,
    High,
}

impl TierName {
    pub const ALL: [TierName; 4] = [TierName::High, TierName::Mid, TierName::Low, TierName::Frozen];
}

impl fmt::Display for TierName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TierName::High => "high",
            TierName::Mid => "mid",
            TierName::Low => "low",
            TierName::Frozen => "frozen",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityTier {
    pub width: u32,
    pub height: u32,
    pub kbps: u64,
    /// Snapshot cadence; only meaningful for the frozen tier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_interval_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierTable {
    pub high: QualityTier,
    pub mid: QualityTier,
    pub low: QualityTier,
    pub frozen: QualityTier,
}

impl Default for TierTable {
    fn default() -> Self {
        TierTable {
            high: QualityTier { width: 1280, height: 720, kbps: 1500, frame_interval_ms: None },
            mid: QualityTier { width: 640, height: 360, kbps: 400, frame_interval_ms: None },
            low: QualityTier { width: 320, height: 180, kbps: 150, frame_interval_ms: None },
            frozen: QualityTier { width: 320, height: 180, kbps: 10, frame_interval_ms: Some(5000) },
        }
    }
}

impl TierTable {
    pub fn get(&self, name: TierName) -> &QualityTier {
        match name {
            TierName::High => &self.high,
            TierName::Mid => &self.mid,
            TierName::Low => &self.low,
            TierName::Frozen => &self.frozen,
        }
    }

    pub fn kbps(&self, name: TierName) -> u64 {
        self.get(name).kbps
    }

    /// Bitrates must strictly decrease High > Mid > Low > Frozen.
    pub fn validate(&self) -> Result<(), String> {
        let rates = TierName::ALL.map(|t| self.kbps(t));
        if rates.windows(2).all(|w| w[0] > w[1]) {
            Ok(())
        } else {
            Err(format!("tier bitrates must strictly decrease high > mid > low > frozen, got {rates:?}"))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamAllocation {
    /// One entry per feed, in the order the feeds were given.
    pub assignments: Vec<(PeerId, TierName)>,
    pub total_kbps: u64,
    pub over_budget: bool,
}

impl StreamAllocation {
    pub fn tier_of(&self, peer: &PeerId) -> Option<TierName> {
        self.assignments
            .iter()
            .find(|(p, _)| p == peer)
            .map(|(_, t)| *t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QualityError {
    #[error("zoom target {0} is not among the feeds")]
    ZoomTargetNotInFeeds(PeerId),
}

/// Assigns a tier to every feed under the degradation policy described in the
/// module docs. Duplicate feed ids are collapsed to their first occurrence.
pub fn allocate(
    feeds: &[PeerId],
    zoomed: Option<&PeerId>,
    budget_kbps: u64,
    tiers: &TierTable,
) -> Result<StreamAllocation, QualityError> {
    let mut seen = HashSet::new();
    let feeds: Vec<&PeerId> = feeds.iter().filter(|p| seen.insert(*p)).collect();
    if let Some(z) = zoomed {
        if !seen.contains(z) {
            return Err(QualityError::ZoomTargetNotInFeeds(z.clone()));
        }
    }

    let mut tiers_by_feed: Vec<TierName> = feeds
        .iter()
        .map(|p| if Some(*p) == zoomed { TierName::High } else { TierName::Low })
        .collect();
    let total = |assigned: &[TierName]| assigned.iter().map(|t| tiers.kbps(*t)).sum::<u64>();
    let mut sum = total(&tiers_by_feed);

    if sum > budget_kbps {
        if let Some(i) = feeds.iter().position(|p| Some(*p) == zoomed) {
            tiers_by_feed[i] = TierName::Mid;
            sum = total(&tiers_by_feed);
        }
    }
    if sum > budget_kbps {
        let mut order: Vec<usize> = (0..feeds.len()).filter(|&i| Some(feeds[i]) != zoomed).collect();
        order.sort_by(|&a, &b| feeds[a].cmp(feeds[b]));
        for i in order {
            if sum <= budget_kbps {
                break;
            }
            sum = sum - tiers.kbps(TierName::Low) + tiers.kbps(TierName::Frozen);
            tiers_by_feed[i] = TierName::Frozen;
        }
    }

    Ok(StreamAllocation {
        assignments: feeds.into_iter().cloned().zip(tiers_by_feed).collect(),
        total_kbps: sum,
        over_budget: sum > budget_kbps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feeds(names: &[&str]) -> Vec<PeerId> {
        names.iter().map(|n| PeerId::from(*n)).collect()
    }

    #[test]
    fn empty_feed_list() {
        let a = allocate(&[], None, 10_000, &TierTable::default()).unwrap();
        assert!(a.assignments.is_empty());
        assert_eq!(a.total_kbps, 0);
        assert!(!a.over_budget);
    }

    #[test]
    fn four_feeds_no_zoom() {
        let f = feeds(&["A", "B", "C", "D"]);
        let a = allocate(&f, None, 10_000, &TierTable::default()).unwrap();
        assert!(a.assignments.iter().all(|(_, t)| *t == TierName::Low));
        assert_eq!(a.total_kbps, 600);
    }

    #[test]
    fn zoomed_feed_gets_high_when_budget_allows() {
        let f = feeds(&["A", "B", "C", "D"]);
        let b = PeerId::from("B");
        let a = allocate(&f, Some(&b), 2000, &TierTable::default()).unwrap();
        assert_eq!(a.tier_of(&b), Some(TierName::High));
        assert_eq!(a.total_kbps, 1950);
        assert!(!a.over_budget);
    }

    #[test]
    fn zoomed_feed_drops_to_mid_first() {
        let f = feeds(&["A", "B", "C", "D"]);
        let b = PeerId::from("B");
        let a = allocate(&f, Some(&b), 1000, &TierTable::default()).unwrap();
        assert_eq!(a.tier_of(&b), Some(TierName::Mid));
        assert_eq!(a.total_kbps, 850);
        for p in ["A", "C", "D"] {
            assert_eq!(a.tier_of(&PeerId::from(p)), Some(TierName::Low));
        }
    }

    #[test]
    fn thumbnails_freeze_in_ascending_id_order() {
        // Listed out of order on purpose: degradation follows id order.
        let f = feeds(&["D", "A", "C", "B"]);
        let a = allocate(&f, None, 450, &TierTable::default()).unwrap();
        // 600 -> freeze A (460) -> freeze B (320)
        assert_eq!(a.tier_of(&"A".into()), Some(TierName::Frozen));
        assert_eq!(a.tier_of(&"B".into()), Some(TierName::Frozen));
        assert_eq!(a.tier_of(&"C".into()), Some(TierName::Low));
        assert_eq!(a.total_kbps, 320);
        let order: Vec<_> = a.assignments.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(order, ["D", "A", "C", "B"]);
    }

    #[test]
    fn minimal_allocation_flags_over_budget() {
        let f = feeds(&["A", "B"]);
        let a = allocate(&f, Some(&"B".into()), 0, &TierTable::default()).unwrap();
        assert_eq!(a.tier_of(&"B".into()), Some(TierName::Mid));
        assert_eq!(a.tier_of(&"A".into()), Some(TierName::Frozen));
        assert_eq!(a.total_kbps, 410);
        assert!(a.over_budget);
    }

    #[test]
    fn zoom_target_must_be_a_feed() {
        let err = allocate(&feeds(&["A"]), Some(&"Z".into()), 100, &TierTable::default()).unwrap_err();
        assert_eq!(err, QualityError::ZoomTargetNotInFeeds("Z".into()));
    }

    #[test]
    fn default_table_is_strictly_ordered() {
        TierTable::default().validate().unwrap();
        let mut bad = TierTable::default();
        bad.low.kbps = 500;
        assert!(bad.validate().is_err());
    }
}
