//! Lexicographic ranking of K-subsets of `{0, .., M-1}`.

use crate::error::{Error, Result};

/// Binomial coefficient, `0` when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Index of a K-subset in lexicographic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ActionIndex(pub usize);

/// Size of the action space for choosing `k` of `m` devices.
pub fn action_count(m: usize, k: usize) -> usize {
    binomial(m, k)
}

pub fn action_encode(subset: &[usize], m: usize, k: usize) -> Result<ActionIndex> {
    if subset.len() != k {
        return Err(Error::Validation(format!("subset has {} ids, expected {k}", subset.len())));
    }
    let mut sorted = subset.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Validation(format!("subset {subset:?} repeats an id")));
    }
    if let Some(&bad) = sorted.last().filter(|&&v| v >= m) {
        return Err(Error::Validation(format!("id {bad} not below {m}")));
    }
    let mut rank = 0;
    let mut next = 0;
    for (i, &c) in sorted.iter().enumerate() {
        for v in next..c {
            rank += binomial(m - 1 - v, k - 1 - i);
        }
        next = c + 1;
    }
    Ok(ActionIndex(rank))
}

/// Sorted subset for `index`.
pub fn action_decode(index: ActionIndex, m: usize, k: usize) -> Result<Vec<usize>> {
    let total = action_count(m, k);
    if index.0 >= total {
        return Err(Error::Validation(format!("action {} outside [0, {total})", index.0)));
    }
    let mut rest = index.0;
    let mut out = Vec::with_capacity(k);
    let mut v = 0;
    for i in 0..k {
        loop {
            let block = binomial(m - 1 - v, k - 1 - i);
            if rest < block {
                break;
            }
            rest -= block;
            v += 1;
        }
        out.push(v);
        v += 1;
    }
    Ok(out)
}
