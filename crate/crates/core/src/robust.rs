//! Worst-case constraint values over the uncertainty set, active sets, and
//! convexified worst-case subdifferentials.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Compiled, EvalError, Point, Wrt};
use crate::geometry::{Polytope, SubdiffSet};
use crate::problem::{Problem, UncertaintySet};
use crate::subdiff::{limiting_subdiff, SubdiffError};

/// Default tolerance for membership in `U_i(z)` and `I(z)`.
pub const ACTIVITY_TOL: f64 = 1e-6;
/// Maximizers closer than this are merged into one cluster.
pub const CLUSTER_RADIUS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RobustError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Subdiff(#[from] SubdiffError),
    #[error("constraint index {0} out of range")]
    BadIndex(usize),
}

/// Discretization of the uncertainty box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustOptions {
    /// Grid points per axis; `None` picks 1001 for one axis, 101 for two and
    /// 21 beyond.
    pub ugrid: Option<usize>,
    /// Final bracket width of the golden-section refinement.
    pub refine_tol: f64,
    /// Number of grid local maxima that are refined.
    pub refine_count: usize,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            ugrid: None,
            refine_tol: 1e-10,
            refine_count: 8,
        }
    }
}

impl RobustOptions {
    pub fn with_ugrid(n: usize) -> Self {
        RobustOptions {
            ugrid: Some(n),
            ..Default::default()
        }
    }

    pub fn per_axis(&self, p: usize) -> usize {
        self.ugrid.unwrap_or(match p {
            0 | 1 => 1001,
            2 => 101,
            _ => 21,
        })
    }

    /// Human-readable description of the discretization.
    pub fn describe(&self, u: &UncertaintySet) -> String {
        match u {
            UncertaintySet::Finite { points } => format!("finite set of {} points", points.len()),
            UncertaintySet::Box { lower, .. } => format!(
                "uniform grid {} per axis ({} axes) + golden-section refinement to {:e}",
                self.per_axis(lower.len()),
                lower.len(),
                self.refine_tol
            ),
        }
    }
}

/// All evaluations behind one worst-case value.
#[derive(Debug, Clone)]
struct Scan {
    /// Sample points in scan order (lexicographic for boxes).
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    /// Refined points with their values.
    refined: Vec<(Vec<f64>, f64)>,
    per_axis: usize,
    spacing: Vec<f64>,
    is_box: bool,
}

impl Scan {
    fn best(&self) -> (Vec<f64>, f64) {
        let mut bi = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[bi] || (*v == self.values[bi] && lex_less(&self.points[i], &self.points[bi])) {
                bi = i;
            }
        }
        let mut best = (self.points[bi].clone(), self.values[bi]);
        for (u, v) in &self.refined {
            if *v > best.1 {
                best = (u.clone(), *v);
            }
        }
        best
    }
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn box_point(lower: &[f64], upper: &[f64], n: usize, mut idx: usize) -> Vec<f64> {
    let p = lower.len();
    let mut ks = vec![0; p];
    for a in (0..p).rev() {
        ks[a] = idx % n;
        idx /= n;
    }
    (0..p)
        .map(|a| {
            let (lo, hi) = (lower[a], upper[a]);
            if n <= 1 {
                0.5 * (lo + hi)
            } else if ks[a] + 1 == n {
                hi
            } else {
                lo + (hi - lo) * ks[a] as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Sample points of the discretized uncertainty set, in scan order.
pub fn uncertainty_grid(u: &UncertaintySet, opts: &RobustOptions) -> Vec<Vec<f64>> {
    match u {
        UncertaintySet::Finite { points } => points.clone(),
        UncertaintySet::Box { lower, upper } => {
            let n = opts.per_axis(lower.len()).max(1);
            (0..n.pow(lower.len() as u32)).map(|k| box_point(lower, upper, n, k)).collect()
        }
    }
}

/// Compiled `g_i(z, ·)`: the constraint with `z` substituted and folded.
struct Slice {
    c: Compiled,
    z: Vec<f64>,
}

impl Slice {
    fn new(problem: &Problem, i: usize, z: &[f64]) -> Result<Self, RobustError> {
        let g = problem.constraints.get(i).ok_or(RobustError::BadIndex(i))?;
        Ok(Slice {
            c: Compiled::new(&g.fold_decision(z)),
            z: z.to_vec(),
        })
    }

    fn at(&self, u: &[f64]) -> Result<f64, EvalError> {
        self.c.eval(&self.z, Some(u))
    }
}

fn eval_all(slice: &Slice, points: &[Vec<f64>]) -> Result<Vec<f64>, EvalError> {
    if points.len() >= 4096 {
        points.par_iter().map(|u| slice.at(u)).collect()
    } else {
        points.iter().map(|u| slice.at(u)).collect()
    }
}

fn golden_max(
    f: &dyn Fn(f64) -> Result<f64, EvalError>,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64), EvalError> {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    while (b - a) > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    Ok(best)
}

fn scan(problem: &Problem, i: usize, z: &[f64], opts: &RobustOptions) -> Result<Scan, RobustError> {
    let slice = Slice::new(problem, i, z)?;
    match &problem.uncertainty {
        UncertaintySet::Finite { points } => {
            let values = eval_all(&slice, points)?;
            Ok(Scan {
                points: points.clone(),
                values,
                refined: Vec::new(),
                per_axis: 0,
                spacing: Vec::new(),
                is_box: false,
            })
        }
        UncertaintySet::Box { lower, upper } => {
            let p = lower.len();
            let n = opts.per_axis(p).max(1);
            let total = n.pow(p as u32);
            let points: Vec<Vec<f64>> = (0..total).map(|k| box_point(lower, upper, n, k)).collect();
            let values = eval_all(&slice, &points)?;
            let spacing: Vec<f64> = (0..p)
                .map(|a| if n > 1 { (upper[a] - lower[a]) / (n - 1) as f64 } else { 0.0 })
                .collect();
            let refined = refine(&slice, lower, upper, n, &points, &values, &spacing, opts)?;
            Ok(Scan {
                points,
                values,
                refined,
                per_axis: n,
                spacing,
                is_box: true,
            })
        }
    }
}

fn neighbors(idx: usize, n: usize, p: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * p);
    let mut stride = 1;
    for _ in 0..p {
        let k = (idx / stride) % n;
        if k > 0 {
            out.push(idx - stride);
        }
        if k + 1 < n {
            out.push(idx + stride);
        }
        stride *= n;
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn refine(
    slice: &Slice,
    lower: &[f64],
    upper: &[f64],
    n: usize,
    points: &[Vec<f64>],
    values: &[f64],
    spacing: &[f64],
    opts: &RobustOptions,
) -> Result<Vec<(Vec<f64>, f64)>, RobustError> {
    let p = lower.len();
    if n < 2 || p == 0 || opts.refine_count == 0 {
        return Ok(Vec::new());
    }
    let mut maxima: Vec<usize> = (0..values.len())
        .filter(|&k| neighbors(k, n, p).iter().all(|&j| values[k] >= values[j]))
        .collect();
    maxima.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    maxima.truncate(opts.refine_count);
    let sweeps = if p == 1 { 1 } else { 3 };
    let mut out = Vec::with_capacity(maxima.len());
    for k in maxima {
        let mut u = points[k].clone();
        let mut val = values[k];
        for _ in 0..sweeps {
            for a in 0..p {
                let lo = (u[a] - spacing[a]).max(lower[a]);
                let hi = (u[a] + spacing[a]).min(upper[a]);
                if hi <= lo {
                    continue;
                }
                let base = u.clone();
                let f = |t: f64| {
                    let mut w = base.clone();
                    w[a] = t;
                    slice.at(&w)
                };
                let (t, v) = golden_max(&f, lo, hi, opts.refine_tol)?;
                if v > val {
                    val = v;
                    u[a] = t;
                }
            }
        }
        out.push((u, val));
    }
    Ok(out)
}

/// Worst-case value `ψ_i(z) = max_u g_i(z, u)` and a maximizer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    pub value: f64,
    pub argmax: Vec<f64>,
}

pub fn worst_case(problem: &Problem, i: usize, z: &[f64], opts: &RobustOptions) -> Result<WorstCase, RobustError> {
    let (argmax, value) = scan(problem, i, z, opts)?.best();
    Ok(WorstCase { value, argmax })
}

/// `ψ_i(z)`.
pub fn psi(problem: &Problem, i: usize, z: &[f64], opts: &RobustOptions) -> Result<f64, RobustError> {
    Ok(worst_case(problem, i, z, opts)?.value)
}

/// `ψ_i(z)` for every constraint.
pub fn psi_all(problem: &Problem, z: &[f64], opts: &RobustOptions) -> Result<Vec<f64>, RobustError> {
    (0..problem.n).map(|i| psi(problem, i, z, opts)).collect()
}

/// A connected group of (near) maximizers of `g_i(z, ·)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintyCluster {
    pub representative: Vec<f64>,
    pub value: f64,
    /// Componentwise extent of the cluster's members.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Number of grid samples in the cluster.
    pub members: usize,
    /// Representative plus evenly spaced members, including the extremes.
    pub samples: Vec<Vec<f64>>,
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Clusters of maximizers `u` with `g_i(z, u) ≥ ψ_i(z) − tol`.
pub fn active_uncertainty(
    problem: &Problem,
    i: usize,
    z: &[f64],
    tol: f64,
    opts: &RobustOptions,
) -> Result<Vec<UncertaintyCluster>, RobustError> {
    let sc = scan(problem, i, z, opts)?;
    let (_, psi) = sc.best();
    // candidate list: grid members first, then refined points
    let mut cand: Vec<(Vec<f64>, f64, Option<usize>)> = Vec::new();
    for (k, v) in sc.values.iter().enumerate() {
        if *v >= psi - tol {
            cand.push((sc.points[k].clone(), *v, Some(k)));
        }
    }
    for (u, v) in &sc.refined {
        if *v >= psi - tol {
            cand.push((u.clone(), *v, None));
        }
    }
    let nc = cand.len();
    let mut parent: Vec<usize> = (0..nc).collect();
    let p = problem.p;
    if sc.is_box {
        let pos: std::collections::HashMap<usize, usize> = cand
            .iter()
            .enumerate()
            .filter_map(|(c, (_, _, k))| k.map(|k| (k, c)))
            .collect();
        for (c, (_, _, k)) in cand.iter().enumerate() {
            if let Some(k) = k {
                for j in neighbors(*k, sc.per_axis, p) {
                    if let Some(&cj) = pos.get(&j) {
                        union(&mut parent, c, cj);
                    }
                }
            }
        }
        // refined points join the grid cluster they were refined from
        let reach: f64 = sc.spacing.iter().map(|h| h * h).sum::<f64>().sqrt() * 1.01;
        for c in 0..nc {
            if cand[c].2.is_some() {
                continue;
            }
            let near = (0..nc)
                .filter(|&j| cand[j].2.is_some())
                .min_by(|&a, &b| dist(&cand[c].0, &cand[a].0).total_cmp(&dist(&cand[c].0, &cand[b].0)));
            if let Some(j) = near {
                if dist(&cand[c].0, &cand[j].0) <= reach {
                    union(&mut parent, c, j);
                }
            }
        }
    }
    for a in 0..nc {
        for b in (a + 1)..nc {
            if dist(&cand[a].0, &cand[b].0) <= CLUSTER_RADIUS {
                union(&mut parent, a, b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for c in 0..nc {
        let r = find(&mut parent, c);
        groups.entry(r).or_default().push(c);
    }
    let mut out: Vec<UncertaintyCluster> = groups
        .values()
        .map(|members| {
            let mut rep = members[0];
            for &c in members {
                let better = cand[c].1 > cand[rep].1
                    || (cand[c].1 == cand[rep].1 && lex_less(&cand[c].0, &cand[rep].0));
                if better {
                    rep = c;
                }
            }
            let dim = cand[rep].0.len();
            let mut lower = vec![f64::INFINITY; dim];
            let mut upper = vec![f64::NEG_INFINITY; dim];
            for &c in members {
                for a in 0..dim {
                    lower[a] = lower[a].min(cand[c].0[a]);
                    upper[a] = upper[a].max(cand[c].0[a]);
                }
            }
            let mut ordered: Vec<usize> = members.clone();
            ordered.sort_by(|&a, &b| {
                if lex_less(&cand[a].0, &cand[b].0) {
                    std::cmp::Ordering::Less
                } else if lex_less(&cand[b].0, &cand[a].0) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            });
            let mut samples = vec![cand[rep].0.clone()];
            let k = ordered.len();
            let picks = 9.min(k);
            for s in 0..picks {
                let idx = if picks == 1 { 0 } else { s * (k - 1) / (picks - 1) };
                samples.push(cand[ordered[idx]].0.clone());
            }
            // componentwise extremes
            for a in 0..dim {
                for target in [lower[a], upper[a]] {
                    if let Some(&c) = members.iter().find(|&&c| cand[c].0[a] == target) {
                        samples.push(cand[c].0.clone());
                    }
                }
            }
            samples.dedup();
            let mut seen: Vec<Vec<f64>> = Vec::new();
            for s in samples {
                if !seen.contains(&s) {
                    seen.push(s);
                }
            }
            UncertaintyCluster {
                representative: cand[rep].0.clone(),
                value: cand[rep].1,
                lower,
                upper,
                members: members.iter().filter(|&&c| cand[c].2.is_some()).count().max(1),
                samples: seen,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        if lex_less(&a.representative, &b.representative) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    Ok(out)
}

/// `max_i ψ_i(z) ≤ tol`. Stops at the first sample exceeding `tol`.
pub fn is_robust_feasible(problem: &Problem, z: &[f64], tol: f64, opts: &RobustOptions) -> Result<bool, RobustError> {
    for i in 0..problem.n {
        let slice = Slice::new(problem, i, z)?;
        match &problem.uncertainty {
            UncertaintySet::Finite { points } => {
                for u in points {
                    if slice.at(u)? > tol {
                        return Ok(false);
                    }
                }
            }
            UncertaintySet::Box { lower, upper } => {
                let p = lower.len();
                let n = opts.per_axis(p).max(1);
                let total = n.pow(p as u32);
                let mut points = Vec::with_capacity(total);
                let mut values = Vec::with_capacity(total);
                for k in 0..total {
                    let u = box_point(lower, upper, n, k);
                    let v = slice.at(&u)?;
                    if v > tol {
                        return Ok(false);
                    }
                    points.push(u);
                    values.push(v);
                }
                let spacing: Vec<f64> = (0..p)
                    .map(|a| if n > 1 { (upper[a] - lower[a]) / (n - 1) as f64 } else { 0.0 })
                    .collect();
                let refined = refine(&slice, lower, upper, n, &points, &values, &spacing, opts)?;
                if refined.iter().any(|(_, v)| *v > tol) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Indices with `ψ_i(z) ≥ max_j ψ_j(z) − tol`.
pub fn active_index_set(problem: &Problem, z: &[f64], tol: f64, opts: &RobustOptions) -> Result<Vec<usize>, RobustError> {
    let vals = psi_all(problem, z, opts)?;
    let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok((0..vals.len()).filter(|&i| vals[i] >= top - tol).collect())
}

/// Union of `∂_z g_i(z, u)` over the sampled members of every active cluster.
pub fn worst_case_union(
    problem: &Problem,
    i: usize,
    z: &[f64],
    tol: f64,
    opts: &RobustOptions,
) -> Result<SubdiffSet, RobustError> {
    let clusters = active_uncertainty(problem, i, z, tol, opts)?;
    let g = &problem.constraints[i];
    let mut pieces: Vec<Polytope> = Vec::new();
    for c in &clusters {
        for u in &c.samples {
            let s = limiting_subdiff(g, &Point::with_uncertainty(z, u), Wrt::Decision)?;
            pieces.extend(s.pieces().iter().cloned());
        }
    }
    Ok(SubdiffSet::new(pieces).expect("at least one active cluster"))
}

/// Closed convex hull of the worst-case constraint subdifferentials.
pub fn worst_case_subdiff(
    problem: &Problem,
    i: usize,
    z: &[f64],
    tol: f64,
    opts: &RobustOptions,
) -> Result<Polytope, RobustError> {
    Ok(worst_case_union(problem, i, z, tol, opts)?.closed_convex_hull())
}
