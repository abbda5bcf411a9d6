//! Exhaustive enumeration of multiset arrangements.
//!
//! Used as an independent oracle in tests and goodness-of-fit checks: the
//! exact ranking distribution over all distinct arrangements of a proposal
//! can be compared against closed-form marginals and sampled frequencies.
//! Intended for small proposals (the factorial growth caps practical use
//! around eight entries).

use crate::error::Result;
use crate::ranking::{ranking_probability, Ranking, RankingParams};

/// All distinct arrangements of `multiset`, treating equal entries as
/// indistinguishable. Output order is deterministic (lexicographic).
pub fn distinct_permutations(multiset: &[usize]) -> Vec<Vec<usize>> {
    let mut pool = multiset.to_vec();
    pool.sort_unstable();
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(pool.len());
    let mut used = vec![false; pool.len()];
    backtrack(&pool, &mut used, &mut current, &mut out);
    out
}

fn backtrack(
    pool: &[usize],
    used: &mut [bool],
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == pool.len() {
        out.push(current.clone());
        return;
    }
    for i in 0..pool.len() {
        if used[i] {
            continue;
        }
        // Skip duplicate branches: only take the first unused copy of a run.
        if i > 0 && pool[i] == pool[i - 1] && !used[i - 1] {
            continue;
        }
        used[i] = true;
        current.push(pool[i]);
        backtrack(pool, used, current, out);
        current.pop();
        used[i] = false;
    }
}

/// The exact ranking distribution over all distinct arrangements of
/// `multiset` under utilities `u` at temperature `params.tau()`. Pairs of
/// (arrangement, probability); probabilities sum to one.
pub fn exact_distribution(
    multiset: &[usize],
    u: &[f64],
    params: RankingParams,
) -> Result<Vec<(Vec<usize>, f64)>> {
    distinct_permutations(multiset)
        .into_iter()
        .map(|perm| {
            let p = ranking_probability(&Ranking::from_order_unchecked(perm.clone()), u, params)?;
            Ok((perm, p))
        })
        .collect()
}
