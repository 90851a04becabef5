//! Exhaustive reference for the stream allocator.
//!
//! Enumerates every tier vector in which at most one feed sits above Low,
//! keeps the policy-shaped ones (non-zoomed feeds in {Low, Frozen}, the zoomed
//! feed at Mid or High) and picks the best under the documented preference:
//! within budget first, then as many Low feeds as possible, then freezing the
//! lowest ids first, then the higher zoom tier. With nothing inside the budget
//! the answer is the minimal vector: zoom at Mid, everything else Frozen.

use tutorlink_core::protocol::PeerId;
use tutorlink_core::quality::{TierName, TierTable};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub assignments: Vec<(PeerId, TierName)>,
    pub total_kbps: u64,
    pub over_budget: bool,
}

fn rank(t: TierName) -> u8 {
    match t {
        TierName::Frozen => 0,
        TierName::Low => 1,
        TierName::Mid => 2,
        TierName::High => 3,
    }
}

fn all_vectors(n: usize) -> Vec<Vec<TierName>> {
    let tiers = [TierName::Frozen, TierName::Low, TierName::Mid, TierName::High];
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                tiers.iter().map(move |t| {
                    let mut w = v.clone();
                    w.push(*t);
                    w
                })
            })
            .collect();
    }
    out.retain(|v| v.iter().filter(|t| rank(**t) > rank(TierName::Low)).count() <= 1);
    out
}

pub fn allocate(feeds: &[PeerId], zoomed: Option<&PeerId>, budget_kbps: u64, tiers: &TierTable) -> Expected {
    let mut unique: Vec<PeerId> = Vec::new();
    for f in feeds {
        if !unique.contains(f) {
            unique.push(f.clone());
        }
    }
    let zi = zoomed.and_then(|z| unique.iter().position(|f| f == z));
    let total = |v: &[TierName]| v.iter().map(|t| tiers.kbps(*t)).sum::<u64>();

    // non-zoomed indices by ascending id, for the freeze-order preference
    let mut by_id: Vec<usize> = (0..unique.len()).filter(|i| Some(*i) != zi).collect();
    by_id.sort_by(|a, b| unique[*a].cmp(&unique[*b]));

    let shaped = |v: &Vec<TierName>| {
        (0..v.len()).all(|i| {
            if Some(i) == zi {
                matches!(v[i], TierName::Mid | TierName::High)
            } else {
                matches!(v[i], TierName::Low | TierName::Frozen)
            }
        })
    };
    let key = |v: &Vec<TierName>| {
        let lows = by_id.iter().filter(|i| v[**i] == TierName::Low).count();
        // later ids stay Low longer: compare the Low pattern read from the
        // highest id down
        let pattern: Vec<bool> = by_id.iter().rev().map(|i| v[*i] == TierName::Low).collect();
        let zoom = zi.map(|i| rank(v[i])).unwrap_or(0);
        (lows, pattern, zoom)
    };

    let best = all_vectors(unique.len())
        .into_iter()
        .filter(shaped)
        .filter(|v| total(v) <= budget_kbps)
        .max_by(|a, b| key(a).cmp(&key(b)));

    let (vector, over_budget) = match best {
        Some(v) => (v, false),
        None => {
            let v = (0..unique.len())
                .map(|i| if Some(i) == zi { TierName::Mid } else { TierName::Frozen })
                .collect::<Vec<_>>();
            (v, true)
        }
    };
    Expected {
        total_kbps: total(&vector),
        assignments: unique.into_iter().zip(vector).collect(),
        over_budget,
    }
}
