//! Euclidean projection of probability vectors onto the constrained simplex.
//!
//! Every constraint acts on a single state, so the batch problem separates
//! into three-variable problems. Each is solved exactly by enumerating
//! candidate active sets (at most two inequalities alongside the sum
//! constraint) and keeping the first one whose KKT conditions hold.

use super::constraints::{Constraint, ConstraintSet};
use crate::error::{Error, Result};

const FEAS_TOL: f64 = 1e-12;
const DUAL_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-10;

/// Projected batch plus what the backward pass needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub probs: Vec<[f64; 3]>,
    /// Active inequality rows (positive multiplier) per state.
    pub active: Vec<Vec<[f64; 3]>>,
    /// States with a tight constraint whose multiplier is zero.
    pub degenerate: usize,
}

/// One state's projection result: point, active rows, degenerate flag.
#[derive(Debug, Clone, PartialEq)]
pub struct StateProjection {
    pub point: [f64; 3],
    pub active: Vec<[f64; 3]>,
    pub degenerate: bool,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Solves the small dense system `a x = b` by Gaussian elimination with
/// partial pivoting; `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < RANK_TOL {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Projects `x` onto `{p : sum p = 1, g . p >= h for every (g, h) in rows}`.
/// The rows must include the non-negativity constraints if wanted.
pub fn project_point(x: [f64; 3], rows: &[([f64; 3], f64)]) -> Option<StateProjection> {
    let m = rows.len();
    let mut subsets: Vec<Vec<usize>> = vec![vec![]];
    subsets.extend((0..m).map(|a| vec![a]));
    for a in 0..m {
        for b in a + 1..m {
            subsets.push(vec![a, b]);
        }
    }
    let ones = [1.0; 3];
    for subset in subsets {
        let mut e: Vec<[f64; 3]> = vec![ones];
        let mut h = vec![1.0];
        for &a in &subset {
            e.push(rows[a].0);
            h.push(rows[a].1);
        }
        let k = e.len();
        let gram: Vec<Vec<f64>> = (0..k).map(|r| (0..k).map(|c| dot(&e[r], &e[c])).collect()).collect();
        let rhs: Vec<f64> = (0..k).map(|r| dot(&e[r], &x) - h[r]).collect();
        let Some(lambda) = solve(gram, rhs) else { continue };
        let mut p = x;
        for r in 0..k {
            for i in 0..3 {
                p[i] -= lambda[r] * e[r][i];
            }
        }
        let primal = rows.iter().all(|(g, hv)| dot(g, &p) >= hv - FEAS_TOL);
        let dual = lambda[1..].iter().all(|&l| -l >= -DUAL_TOL);
        if primal && dual {
            let active: Vec<[f64; 3]> =
                subset.iter().zip(&lambda[1..]).filter(|(_, &l)| -l > DUAL_TOL).map(|(&a, _)| rows[a].0).collect();
            let tight = rows.iter().filter(|(g, hv)| (dot(g, &p) - hv).abs() <= 1e-10).count();
            return Some(StateProjection { degenerate: tight > active.len(), point: p, active });
        }
    }
    None
}

fn rows_for(constraints: &[Constraint], margin: f64) -> Vec<([f64; 3], f64)> {
    let mut rows = vec![([1.0, 0.0, 0.0], 0.0), ([0.0, 1.0, 0.0], 0.0), ([0.0, 0.0, 1.0], 0.0)];
    rows.extend(constraints.iter().map(|c| (c.row(), margin)));
    rows
}

/// Projects one probability vector under its own constraints.
pub fn project_state(x: [f64; 3], constraints: &[Constraint], margin: f64) -> Result<StateProjection> {
    project_point(x, &rows_for(constraints, margin)).ok_or_else(|| Error::Infeasible {
        state: constraints.first().map_or(0, |c| c.state),
        detail: constraints
            .iter()
            .map(|c| format!("{:?}: p[{}] - p[{}] >= {margin}", c.property, c.winner.name(), c.loser.name()))
            .collect::<Vec<_>>()
            .join("; "),
    })
}

/// Solves `min sum_s |p_s - x_s|^2` over probability vectors satisfying the
/// constraint set.
pub fn project_policy(probs: &[[f64; 3]], set: &ConstraintSet) -> Result<Projection> {
    if let Some(max) = set.max_state() {
        if max >= probs.len() {
            return Err(Error::Dimension { expected: probs.len(), found: max + 1 });
        }
    }
    let per_state = set.by_state(probs.len());
    let mut out = Projection { probs: Vec::with_capacity(probs.len()), active: Vec::new(), degenerate: 0 };
    for (k, (x, cons)) in probs.iter().zip(&per_state).enumerate() {
        if cons.is_empty() && x.iter().all(|&v| v >= 0.0) && (x.iter().sum::<f64>() - 1.0).abs() <= 1e-12 {
            out.probs.push(*x);
            out.active.push(Vec::new());
            continue;
        }
        let sp = project_state(*x, cons, set.margin).map_err(|e| match e {
            Error::Infeasible { detail, .. } => Error::Infeasible { state: k, detail },
            other => other,
        })?;
        out.degenerate += sp.degenerate as usize;
        out.probs.push(sp.point);
        out.active.push(sp.active);
    }
    Ok(out)
}

/// Gradient with respect to the projection input: the upstream gradient
/// projected onto the null space of the sum constraint and the active rows.
pub fn project_policy_backward(projection: &Projection, upstream: &[[f64; 3]]) -> Vec<[f64; 3]> {
    upstream
        .iter()
        .zip(&projection.active)
        .map(|(u, active)| tangent_component(u, active))
        .collect()
}

fn tangent_component(u: &[f64; 3], active: &[[f64; 3]]) -> [f64; 3] {
    let mut basis: Vec<[f64; 3]> = Vec::with_capacity(3);
    let norm = 3f64.sqrt();
    basis.push([1.0 / norm; 3]);
    for g in active {
        let mut v = *g;
        for q in &basis {
            let c = dot(&v, q);
            for i in 0..3 {
                v[i] -= c * q[i];
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > RANK_TOL {
            basis.push([v[0] / n, v[1] / n, v[2] / n]);
        }
    }
    let mut out = *u;
    for q in &basis {
        let c = dot(u, q);
        for i in 0..3 {
            out[i] -= c * q[i];
        }
    }
    out
}
