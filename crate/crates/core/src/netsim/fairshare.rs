//! Max-min fair bandwidth allocation by progressive water-filling.

use std::collections::BTreeMap;

use super::topology::LinkId;

/// Relative slack used when deciding that a link is saturated.
const EPS: f64 = 1e-9;

/// Allocates a rate (bits/s) to every flow.
///
/// `flows` pairs each key with the links its path crosses; `capacity` gives
/// the capacity of a link in bits/s. Every flow is limited by at least one
/// saturated link on which it has the largest rate.
pub fn allocate_bandwidth<K, F>(flows: &[(K, &[LinkId])], capacity: F) -> BTreeMap<K, f64>
where
    K: Ord + Copy,
    F: Fn(LinkId) -> f64,
{
    let mut rates = BTreeMap::new();
    if flows.is_empty() {
        return rates;
    }

    // Per link: remaining capacity and indices of unfrozen flows.
    let mut links: BTreeMap<LinkId, (f64, Vec<usize>)> = BTreeMap::new();
    for (i, (_, path)) in flows.iter().enumerate() {
        for &l in path.iter() {
            links
                .entry(l)
                .or_insert_with(|| (capacity(l), Vec::new()))
                .1
                .push(i);
        }
    }
    let mut frozen = vec![false; flows.len()];
    let mut rate = vec![0.0f64; flows.len()];
    let mut left = flows.iter().filter(|(_, p)| !p.is_empty()).count();
    for (i, (_, p)) in flows.iter().enumerate() {
        if p.is_empty() {
            frozen[i] = true;
            rate[i] = f64::INFINITY;
        }
    }

    while left > 0 {
        let mut fair = f64::INFINITY;
        for (cap, members) in links.values() {
            let n = members.iter().filter(|&&i| !frozen[i]).count();
            if n > 0 {
                fair = fair.min(cap.max(0.0) / n as f64);
            }
        }
        debug_assert!(fair.is_finite());

        let mut newly = Vec::new();
        for (cap, members) in links.values() {
            let n = members.iter().filter(|&&i| !frozen[i]).count();
            if n > 0 && cap.max(0.0) / n as f64 <= fair * (1.0 + EPS) {
                newly.extend(members.iter().copied().filter(|&i| !frozen[i]));
            }
        }
        newly.sort_unstable();
        newly.dedup();
        for &i in &newly {
            frozen[i] = true;
            rate[i] = fair;
            left -= 1;
            for l in flows[i].1.iter() {
                if let Some((cap, _)) = links.get_mut(l) {
                    *cap -= fair;
                }
            }
        }
    }

    for (i, (k, _)) in flows.iter().enumerate() {
        rates.insert(*k, rate[i]);
    }
    rates
}
