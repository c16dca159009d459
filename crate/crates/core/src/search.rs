//! Top-m search over K-subsets of sub-actions scored additively.
//!
//! A subset is a sorted list of candidate positions. Its value is the sum of
//! the member values, added largest first. Results are ordered by value
//! (descending), ties by the lexicographic order of the position tuples.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSubset {
    pub members: Vec<usize>,
    pub value: f64,
}

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Sum of `q` over `members`.
///
/// Values are added largest first, starting from the
/// first term, so the result does not depend on member order and a
/// singleton's value is exactly its sub-action value.
pub fn subset_value(q: &[f64], members: &[usize]) -> f64 {
    let mut buf = [0.0f64; 16];
    let mut heap;
    let vals: &mut [f64] = if members.len() <= buf.len() {
        &mut buf[..members.len()]
    } else {
        heap = alloc::vec![0.0; members.len()];
        &mut heap
    };
    for (v, &i) in vals.iter_mut().zip(members) {
        *v = q[i];
    }
    vals.sort_unstable_by(|a, b| b.total_cmp(a));
    sum_ordered(vals)
}

/// Left fold from the first element.
pub fn sum_ordered(vals: &[f64]) -> f64 {
    let mut it = vals.iter();
    let first = it.next().copied().unwrap_or(0.0);
    it.fold(first, |acc, v| acc + v)
}

fn order(a: &ScoredSubset, b: &ScoredSubset) -> Ordering {
    b.value.total_cmp(&a.value).then_with(|| a.members.cmp(&b.members))
}

fn check(n: usize, k: usize, q: &[f64]) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("K={k} must lie in 1..=N={n}")));
    }
    if !crate::math::all_finite(q) {
        return Err(Error::InvalidConfig("sub-action values must be finite".into()));
    }
    Ok(())
}

/// Calls `f` on every K-subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 || k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] < n - k + i {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Every K-subset with its value, in lexicographic order.
pub fn enumerate_all(q: &[f64], k: usize) -> Result<Vec<ScoredSubset>> {
    check(q.len(), k, q)?;
    let mut out = Vec::with_capacity(binomial(q.len(), k).min(1 << 20) as usize);
    for_each_subset(q.len(), k, |s| {
        out.push(ScoredSubset {
            members: s.to_vec(),
            value: subset_value(q, s),
        })
    });
    Ok(out)
}

/// Subsets enumerated exhaustively up to this many; larger spaces use the
/// best-first frontier.
pub const ENUMERATION_LIMIT: u64 = 20_000;

/// The `m` highest-valued K-subsets of the values `q`.
///
/// Returns every subset when `m >= C(N, K)`.
pub fn top_m_actions(q: &[f64], k: usize, m: usize) -> Result<Vec<ScoredSubset>> {
    check(q.len(), k, q)?;
    if binomial(q.len(), k) <= ENUMERATION_LIMIT {
        top_m_enumerate(q, k, m)
    } else {
        top_m_best_first(q, k, m)
    }
}

/// Exhaustive enumeration followed by a partial sort.
pub fn top_m_enumerate(q: &[f64], k: usize, m: usize) -> Result<Vec<ScoredSubset>> {
    check(q.len(), k, q)?;
    if m == 0 {
        return Ok(Vec::new());
    }
    // Members live in one flat buffer; only the survivors get their own Vec.
    let total = binomial(q.len(), k) as usize;
    let mut flat = Vec::with_capacity(total * k);
    let mut values = Vec::with_capacity(total);
    for_each_subset(q.len(), k, |s| {
        flat.extend_from_slice(s);
        values.push(subset_value(q, s));
    });
    let members = |i: usize| &flat[i * k..(i + 1) * k];
    let cmp = |a: &usize, b: &usize| {
        values[*b]
            .total_cmp(&values[*a])
            .then_with(|| members(*a).cmp(members(*b)))
    };
    let mut idx: Vec<usize> = (0..total).collect();
    if m < total {
        idx.select_nth_unstable_by(m - 1, cmp);
        idx.truncate(m);
    }
    idx.sort_by(cmp);
    Ok(idx
        .into_iter()
        .map(|i| ScoredSubset {
            members: members(i).to_vec(),
            value: values[i],
        })
        .collect())
}

#[derive(Debug, PartialEq)]
struct Frontier {
    value: f64,
    ranks: Vec<usize>,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.ranks.cmp(&self.ranks))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy best-first search over subsets of value-sorted positions.
///
/// Positions are ranked by value; a frontier entry is a set of ranks and its
/// successors move one rank down by one. Popping continues past the m-th
/// result while values stay within rounding distance of it, so the final
/// exact tie order matches [`top_m_enumerate`].
pub fn top_m_best_first(q: &[f64], k: usize, m: usize) -> Result<Vec<ScoredSubset>> {
    check(q.len(), k, q)?;
    let n = q.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let rank_value = |ranks: &[usize]| sum_ordered(&ranks.iter().map(|&r| q[by_rank[r]]).collect::<Vec<_>>());
    let scale: f64 = by_rank.iter().take(k).map(|&i| q[i].abs()).sum::<f64>()
        + by_rank.iter().rev().take(k).map(|&i| q[i].abs()).sum::<f64>();
    let slack = 64.0 * f64::EPSILON * (scale + 1.0);

    let start: Vec<usize> = (0..k).collect();
    let mut heap = BinaryHeap::new();
    let mut seen = BTreeSet::new();
    heap.push(Frontier {
        value: rank_value(&start),
        ranks: start.clone(),
    });
    seen.insert(start);
    let mut popped: Vec<ScoredSubset> = Vec::new();
    let mut cutoff = f64::NEG_INFINITY;
    while let Some(top) = heap.pop() {
        if popped.len() >= m && top.value < cutoff - slack {
            break;
        }
        let mut members: Vec<usize> = top.ranks.iter().map(|&r| by_rank[r]).collect();
        members.sort_unstable();
        let value = subset_value(q, &members);
        popped.push(ScoredSubset { members, value });
        if popped.len() == m {
            cutoff = top.value;
        }
        for i in 0..k {
            let next = top.ranks[i] + 1;
            let free = if i + 1 < k { next < top.ranks[i + 1] } else { next < n };
            if free {
                let mut succ = top.ranks.clone();
                succ[i] = next;
                if seen.insert(succ.clone()) {
                    heap.push(Frontier {
                        value: rank_value(&succ),
                        ranks: succ,
                    });
                }
            }
        }
    }
    popped.sort_by(order);
    popped.truncate(m);
    Ok(popped)
}

/// Position tuple of the `rank`-th K-subset of `0..n` in lexicographic order.
pub fn unrank_subset(n: usize, k: usize, mut rank: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut next = 0;
    for slot in 0..k {
        let left = k - slot - 1;
        loop {
            let block = binomial(n - next - 1, left);
            if rank < block {
                break;
            }
            rank -= block;
            next += 1;
        }
        out.push(next);
        next += 1;
    }
    out
}

/// `m` distinct K-subsets drawn uniformly without replacement, in draw
/// order; all subsets in lexicographic order when `m >= C(N, K)`.
pub fn random_subsample(n: usize, k: usize, m: usize, rng: &mut crate::Rng) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("K={k} must lie in 1..=N={n}")));
    }
    let total = binomial(n, k);
    if m as u64 >= total {
        let mut all = Vec::new();
        for_each_subset(n, k, |s| all.push(s.to_vec()));
        return Ok(all);
    }
    if total > usize::MAX as u64 || total > (1 << 40) {
        return Err(Error::TooLarge {
            what: "action space",
            size: total as usize,
            limit: 1 << 40,
        });
    }
    let picks = rand::seq::index::sample(rng, total as usize, m);
    Ok(picks.into_iter().map(|r| unrank_subset(n, k, r as u64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute(q: &[f64], k: usize, m: usize) -> Vec<ScoredSubset> {
        let mut all = enumerate_all(q, k).unwrap();
        all.sort_by(order);
        all.truncate(m);
        all
    }

    #[test]
    fn small_example() {
        let top = top_m_actions(&[3.0, 2.0, 1.0], 2, 2).unwrap();
        assert_eq!(top[0].members, vec![0, 1]);
        assert_eq!(top[0].value, 5.0);
        assert_eq!(top[1].members, vec![0, 2]);
        assert_eq!(top[1].value, 4.0);
    }

    #[test]
    fn full_set_and_ties() {
        let top = top_m_actions(&[1.0, -2.0, 0.5], 3, 10).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].members, vec![0, 1, 2]);

        let top = top_m_actions(&[1.0; 5], 2, 4).unwrap();
        let members: Vec<_> = top.iter().map(|s| s.members.clone()).collect();
        assert_eq!(members, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![0, 4]]);
        assert!(top.iter().all(|s| s.value == 2.0));
    }

    #[test]
    fn singleton_value_is_exact() {
        let q = [0.1, 0.7, -0.3];
        let top = top_m_actions(&q, 1, 3).unwrap();
        let order: Vec<_> = top.iter().map(|s| (s.members[0], s.value)).collect();
        assert_eq!(order, vec![(1, 0.7), (0, 0.1), (2, -0.3)]);
    }

    #[test]
    fn rejects_bad_k() {
        assert!(top_m_actions(&[1.0, 2.0], 3, 1).is_err());
        assert!(top_m_actions(&[1.0, 2.0], 0, 1).is_err());
        assert!(top_m_actions(&[f64::NAN, 2.0], 1, 1).is_err());
    }

    #[test]
    fn unrank_matches_enumeration() {
        let mut all = Vec::new();
        for_each_subset(7, 3, |s| all.push(s.to_vec()));
        assert_eq!(all.len() as u64, binomial(7, 3));
        for (r, s) in all.iter().enumerate() {
            assert_eq!(&unrank_subset(7, 3, r as u64), s);
        }
    }

    #[test]
    fn best_first_on_integer_values_with_ties() {
        let mut rng = crate::rng_from_seed(3);
        for _ in 0..200 {
            let n = rng.gen_range(3..=12);
            let k = rng.gen_range(1..=n);
            let m = rng.gen_range(1..=30);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..=3) as f64).collect();
            assert_eq!(top_m_best_first(&q, k, m).unwrap(), brute(&q, k, m));
        }
    }

    #[test]
    fn best_first_handles_large_spaces() {
        let mut rng = crate::rng_from_seed(4);
        let q: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let top = top_m_actions(&q, 6, 10).unwrap();
        let mut sorted = q.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let best: f64 = sorted[..6].iter().sum();
        assert!((top[0].value - best).abs() < 1e-12);
        assert!(top.windows(2).all(|w| w[0].value >= w[1].value));
    }

    #[test]
    fn random_subsample_cases() {
        let mut rng = crate::rng_from_seed(5);
        assert_eq!(random_subsample(4, 2, 10, &mut rng).unwrap().len(), 6);
        let a = random_subsample(10, 3, 10, &mut crate::rng_from_seed(9)).unwrap();
        let b = random_subsample(10, 3, 10, &mut crate::rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        let mut dedup = a.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 10);
    }

    #[test]
    fn random_subsample_is_uniform() {
        let (n, k, m, draws) = (6, 2, 3, 10_000);
        let space = binomial(n, k) as usize;
        let mut counts = alloc::collections::BTreeMap::new();
        let mut rng = crate::rng_from_seed(11);
        for _ in 0..draws {
            for s in random_subsample(n, k, m, &mut rng).unwrap() {
                *counts.entry(s).or_insert(0usize) += 1;
            }
        }
        assert_eq!(counts.len(), space);
        let p = m as f64 / space as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (s, c) in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{s:?}: {c}");
        }
    }

    proptest! {
        #[test]
        fn enumeration_and_best_first_agree(
            q in prop::collection::vec(-5.0f64..5.0, 1..=12),
            k_raw in 1usize..12,
            m in 1usize..40,
        ) {
            let k = 1 + k_raw % q.len();
            let expected = brute(&q, k, m);
            prop_assert_eq!(top_m_actions(&q, k, m).unwrap(), expected.clone());
            prop_assert_eq!(top_m_best_first(&q, k, m).unwrap(), expected);
        }

        #[test]
        fn positive_scaling_keeps_argmax(
            q in prop::collection::vec(-5.0f64..5.0, 2..=10),
            k_raw in 1usize..10,
            lambda in 0.01f64..100.0,
        ) {
            let k = 1 + k_raw % q.len();
            let scaled: Vec<f64> = q.iter().map(|v| v * lambda).collect();
            let a = top_m_actions(&q, k, 1).unwrap();
            let b = top_m_actions(&scaled, k, 1).unwrap();
            // Rounding may reorder exact ties; the winner's value must agree.
            let best_scaled = subset_value(&scaled, &a[0].members);
            prop_assert!((best_scaled - b[0].value).abs() <= 1e-9 * (1.0 + b[0].value.abs()));
        }
    }
}
