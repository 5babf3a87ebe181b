//! Shared oracles for the acceptance suite: a dense explicit-inverse GP
//! reference and an exhaustive cell-level path enumerator. Both are kept
//! independent of the library's solver paths — the GP oracle inverts with
//! LU instead of Cholesky solves, and the path oracle walks raw grid cells
//! instead of the junction graph.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use fieldscout_core::field::{Dir, FieldGrid, Pos};
use fieldscout_core::gp::{combined_cov_matrix, FeatureVector, KernelParams};

// ----------------------------------------------------------------------
// dense GP oracle
// ----------------------------------------------------------------------

/// Train-train covariance with the model's base jitter, inverted with LU.
fn dense_inverse(
    train: &[FeatureVector],
    noise: &[f64],
    params: &KernelParams,
) -> DMatrix<f64> {
    let n = train.len();
    let mut sigma = combined_cov_matrix(train, train, params, Some(noise)).unwrap();
    let jitter = 1e-8 * sigma.trace() / n as f64;
    for i in 0..n {
        sigma[(i, i)] += jitter;
    }
    sigma.try_inverse().expect("oracle covariance is invertible")
}

pub fn dense_posterior(
    train: &[FeatureVector],
    noise: &[f64],
    targets: &[f64],
    params: &KernelParams,
    query: &[FeatureVector],
) -> (DVector<f64>, DMatrix<f64>) {
    let inv = dense_inverse(train, noise, params);
    let k_da = combined_cov_matrix(train, query, params, None).unwrap();
    let k_aa = combined_cov_matrix(query, query, params, None).unwrap();
    let y = DVector::from_column_slice(targets);
    let mean = k_da.transpose() * &inv * y;
    let cov = k_aa - k_da.transpose() * &inv * &k_da;
    (mean, cov)
}

pub fn dense_lml(
    train: &[FeatureVector],
    noise: &[f64],
    targets: &[f64],
    params: &KernelParams,
) -> f64 {
    let n = train.len();
    let mut sigma = combined_cov_matrix(train, train, params, Some(noise)).unwrap();
    let jitter = 1e-8 * sigma.trace() / n as f64;
    for i in 0..n {
        sigma[(i, i)] += jitter;
    }
    let inv = sigma.clone().try_inverse().unwrap();
    let y = DVector::from_column_slice(targets);
    -0.5 * y.dot(&(&inv * &y))
        - 0.5 * sigma.determinant().ln()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

/// Gaussian entropy from a covariance via the LU determinant.
pub fn dense_entropy(cov: &DMatrix<f64>, added_noise: Option<f64>) -> f64 {
    let mut s = cov.clone();
    if let Some(v) = added_noise {
        for i in 0..s.nrows() {
            s[(i, i)] += v;
        }
    }
    let m = s.nrows() as f64;
    0.5 * (m * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln() + s.determinant().ln())
}

/// Single-point posterior variance by explicit inversion, for the greedy
/// selection oracle.
pub fn dense_posterior_var(
    conditioning: &[(FeatureVector, f64)],
    params: &KernelParams,
    query: &FeatureVector,
) -> f64 {
    let prior = combined_cov_matrix(&[*query], &[*query], params, None).unwrap()[(0, 0)];
    if conditioning.is_empty() {
        return prior;
    }
    let pts: Vec<FeatureVector> = conditioning.iter().map(|c| c.0).collect();
    let noise: Vec<f64> = conditioning.iter().map(|c| c.1).collect();
    let inv = dense_inverse(&pts, &noise, params);
    let k = combined_cov_matrix(&pts, &[*query], params, None).unwrap();
    let kv = DVector::from_iterator(pts.len(), k.column(0).iter().copied());
    prior - (kv.transpose() * inv * kv)[(0, 0)]
}

// ----------------------------------------------------------------------
// exhaustive cell-level path oracle
// ----------------------------------------------------------------------

fn oracle_node_cells(grid: &FieldGrid, start: Pos, waypoints: &[Pos]) -> BTreeSet<Pos> {
    let mut nodes = BTreeSet::new();
    for p in grid.free_cells() {
        let dirs: Vec<Dir> = Dir::ALL
            .into_iter()
            .filter(|d| grid.free_neighbor(p, *d).is_some())
            .collect();
        let junction = match dirs.len() {
            2 => dirs[0] != dirs[1].opposite(),
            _ => true,
        };
        if junction {
            nodes.insert(p);
        }
    }
    nodes.insert(start);
    nodes.extend(waypoints.iter().copied());
    nodes
}

/// Every no-U-turn cell walk from `start` of cost <= `budget` that covers
/// all waypoint cells and ends on a node cell, as sorted (node sequence,
/// cost) pairs.
pub fn oracle_enumerate(
    grid: &FieldGrid,
    start: Pos,
    waypoints: &[Pos],
    budget: u32,
) -> Vec<(Vec<Pos>, u32)> {
    let nodes = oracle_node_cells(grid, start, waypoints);
    let wset: BTreeSet<Pos> = waypoints.iter().copied().collect();
    let mut out = Vec::new();
    let mut covered: BTreeSet<Pos> = BTreeSet::new();
    if wset.contains(&start) {
        covered.insert(start);
    }
    let mut seq = vec![start];
    walk(
        grid, &nodes, &wset, budget, start, None, 0, &mut covered, &mut seq, &mut out,
    );
    out.sort();
    out
}

#[allow(clippy::too_many_arguments)]
fn walk(
    grid: &FieldGrid,
    nodes: &BTreeSet<Pos>,
    wset: &BTreeSet<Pos>,
    budget: u32,
    pos: Pos,
    heading: Option<Dir>,
    cost: u32,
    covered: &mut BTreeSet<Pos>,
    seq: &mut Vec<Pos>,
    out: &mut Vec<(Vec<Pos>, u32)>,
) {
    if covered.len() == wset.len() && nodes.contains(&pos) {
        out.push((seq.clone(), cost));
    }
    for dir in Dir::ALL {
        if heading.is_some_and(|h| dir == h.opposite()) {
            continue;
        }
        let Some(next) = grid.free_neighbor(pos, dir) else {
            continue;
        };
        if cost + 1 > budget {
            continue;
        }
        let newly_covered = wset.contains(&next) && covered.insert(next);
        let pushed = nodes.contains(&next);
        if pushed {
            seq.push(next);
        }
        walk(
            grid, nodes, wset, budget, next, Some(dir), cost + 1, covered, seq, out,
        );
        if pushed {
            seq.pop();
        }
        if newly_covered {
            covered.remove(&next);
        }
    }
}

/// Exhaustive minimum covering cost, by deepening the budget.
pub fn oracle_min_cover(grid: &FieldGrid, start: Pos, waypoints: &[Pos]) -> Option<u32> {
    for budget in 0..500 {
        let found = oracle_enumerate(grid, start, waypoints, budget);
        if let Some(min) = found.iter().map(|(_, c)| *c).min() {
            return Some(min);
        }
    }
    None
}
