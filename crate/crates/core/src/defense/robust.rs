//! Byzantine-robust aggregation rules. Each returns the increment to add to
//! the global model.

use crate::error::{Error, Result};
use crate::federation::ModelUpdate;
use crate::nn::ParamVector;

fn check_updates(updates: &[ModelUpdate], what: &str) -> Result<()> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Config(format!("{what} needs at least one update")))?;
    for u in &updates[1..] {
        first.delta.check_shape(&u.delta, what)?;
    }
    Ok(())
}

/// Applies `f` to each coordinate's column of values across updates.
fn per_coordinate(updates: &[ModelUpdate], mut f: impl FnMut(&mut [f64]) -> f64) -> ParamVector {
    let mut out = updates[0].delta.zeros_like();
    let mut column = vec![0.0; updates.len()];
    for (j, slot) in out.values_mut().iter_mut().enumerate() {
        for (c, u) in column.iter_mut().zip(updates) {
            *c = u.delta.values()[j];
        }
        *slot = f(&mut column);
    }
    out
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Coordinate-wise median; even counts average the two central values.
pub fn agg_comed(updates: &[ModelUpdate]) -> Result<ParamVector> {
    check_updates(updates, "comed")?;
    Ok(per_coordinate(updates, median_of))
}

/// Default trim per side for `m` updates: `ceil(m / 4)`.
pub fn default_trim(m: usize) -> usize {
    m.div_ceil(4)
}

/// Coordinate-wise trimmed mean: drop `trim_count` values from each end.
pub fn agg_cotmed(updates: &[ModelUpdate], trim_count: usize) -> Result<ParamVector> {
    check_updates(updates, "cotmed")?;
    if 2 * trim_count >= updates.len() {
        return Err(Error::Config(format!(
            "cotmed needs more than 2 * trim_count = {} updates, got {}",
            2 * trim_count,
            updates.len()
        )));
    }
    Ok(per_coordinate(updates, |col| {
        col.sort_by(f64::total_cmp);
        let kept = &col[trim_count..col.len() - trim_count];
        kept.iter().sum::<f64>() / kept.len() as f64
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeomedResult {
    pub median: ParamVector,
    pub iterations: usize,
    /// False when `max_iter` was reached before the step fell below `tol`.
    pub converged: bool,
}

const WEISZFELD_EPS: f64 = 1e-12;

/// Geometric median by Weiszfeld iteration, started from the mean.
pub fn agg_geomed(updates: &[ModelUpdate], tol: f64, max_iter: usize) -> Result<GeomedResult> {
    check_updates(updates, "geomed")?;
    let inv_n = 1.0 / updates.len() as f64;
    let mut current = updates[0].delta.zeros_like();
    for u in updates {
        current.add_scaled(&u.delta, inv_n)?;
    }
    for it in 1..=max_iter {
        let mut next = current.zeros_like();
        let mut total_weight = 0.0;
        for u in updates {
            let w = 1.0 / current.distance(&u.delta)?.max(WEISZFELD_EPS);
            next.add_scaled(&u.delta, w)?;
            total_weight += w;
        }
        next.scale(1.0 / total_weight);
        let step = next.distance(&current)?;
        current = next;
        if step < tol {
            return Ok(GeomedResult {
                median: current,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(GeomedResult {
        median: current,
        iterations: max_iter,
        converged: false,
    })
}

/// Krum: the update with the smallest summed squared distance to its
/// `m - f - 2` nearest peers; ties go to the lowest `ed_id`.
pub fn agg_krum(updates: &[ModelUpdate], f: usize) -> Result<ParamVector> {
    check_updates(updates, "krum")?;
    let m = updates.len();
    if m < f + 3 {
        return Err(Error::Config(format!("krum needs at least f + 3 = {} updates, got {m}", f + 3)));
    }
    let mut sq = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let d = updates[i].delta.distance(&updates[j].delta)?;
            sq[i][j] = d * d;
            sq[j][i] = d * d;
        }
    }
    let neighbours = m - f - 2;
    let mut best: Option<(f64, usize, usize)> = None;
    for (i, row) in sq.iter().enumerate() {
        let mut peers: Vec<f64> = row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &d)| d).collect();
        peers.sort_by(f64::total_cmp);
        let score: f64 = peers[..neighbours].iter().sum();
        let id = updates[i].ed_id;
        let better = match best {
            None => true,
            Some((s, bid, _)) => score < s || (score == s && id < bid),
        };
        if better {
            best = Some((score, id, i));
        }
    }
    let (_, _, idx) = best.expect("m >= 3");
    Ok(updates[idx].delta.clone())
}

/// Rescales every update above the cap to norm `cap`, then averages.
pub fn agg_normbound(updates: &[ModelUpdate], rule: super::NormCapRule) -> Result<ParamVector> {
    check_updates(updates, "norm bound")?;
    let norms: Vec<f64> = updates.iter().map(|u| u.delta.norm()).collect();
    let cap = match rule {
        super::NormCapRule::Fixed(c) if c > 0.0 => c,
        super::NormCapRule::Fixed(c) => return Err(Error::Config(format!("norm cap {c} must be positive"))),
        super::NormCapRule::MedianOfNorms => median_of(&mut norms.clone()),
    };
    let factors: Vec<f64> = norms.iter().map(|&n| if n > cap { cap / n } else { 1.0 }).collect();
    let m = updates.len() as f64;
    Ok(per_coordinate(updates, |col| {
        col.iter().zip(&factors).map(|(v, f)| v * f).sum::<f64>() / m
    }))
}

/// Sign-binarised mean scaled by `step`; `sign(0) = 0`.
pub fn agg_rsa(updates: &[ModelUpdate], step: f64) -> Result<ParamVector> {
    check_updates(updates, "rsa")?;
    if !(step > 0.0) {
        return Err(Error::Config(format!("rsa step {step} must be positive")));
    }
    let m = updates.len() as f64;
    Ok(per_coordinate(updates, |col| {
        let s: f64 = col
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
            .sum();
        step * (s / m)
    }))
}
