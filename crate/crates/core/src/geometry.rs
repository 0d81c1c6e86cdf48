//! Polytopes in V-representation, unions of polytopes, and the set algebra
//! used by the optimality checks.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{Cmp, LinearProgram, LpOutcome};

/// Default Euclidean membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty vertex list")]
    Empty,
    #[error("non-finite vertex coordinate")]
    NonFinite,
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Convex hull of a finite vertex list. Vertices are kept sorted
/// lexicographically without exact duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct Polytope {
    vertices: Vec<Vec<f64>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    vertices: Vec<Vec<f64>>,
}

impl TryFrom<PolytopeRepr> for Polytope {
    type Error = GeometryError;
    fn try_from(r: PolytopeRepr) -> Result<Self, GeometryError> {
        Polytope::new(r.vertices)
    }
}

impl From<Polytope> for PolytopeRepr {
    fn from(p: Polytope) -> Self {
        PolytopeRepr {
            vertices: p.vertices,
        }
    }
}

impl Polytope {
    pub fn new(mut vertices: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let dim = vertices.first().ok_or(GeometryError::Empty)?.len();
        for v in &vertices {
            if v.len() != dim {
                return Err(GeometryError::DimensionMismatch(dim, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(GeometryError::NonFinite);
            }
        }
        for v in vertices.iter_mut() {
            for x in v.iter_mut() {
                // normalize -0.0 so ordering and printing are stable
                if *x == 0.0 {
                    *x = 0.0;
                }
            }
        }
        vertices.sort_by(|a, b| lex(a, b));
        vertices.dedup();
        Ok(Polytope { vertices, dim })
    }

    pub fn point(v: Vec<f64>) -> Self {
        Polytope::new(vec![v]).expect("finite point")
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self, c: f64) -> Polytope {
        let vs = self
            .vertices
            .iter()
            .map(|v| v.iter().map(|x| c * x).collect())
            .collect();
        Polytope::new(vs).expect("scaled vertices stay finite")
    }

    pub fn translate(&self, t: &[f64]) -> Polytope {
        let vs = self
            .vertices
            .iter()
            .map(|v| v.iter().zip(t).map(|(x, y)| x + y).collect())
            .collect();
        Polytope::new(vs).expect("translated vertices stay finite")
    }

    /// Convex hull of all pairwise vertex sums, reduced to extreme points.
    pub fn minkowski(&self, other: &Polytope) -> Result<Polytope, GeometryError> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch(self.dim, other.dim));
        }
        let mut vs = Vec::with_capacity(self.vertices.len() * other.vertices.len());
        for a in &self.vertices {
            for b in &other.vertices {
                vs.push(a.iter().zip(b).map(|(x, y)| x + y).collect());
            }
        }
        Ok(Polytope::new(vs)?.reduced())
    }

    /// Euclidean distance from `x` to the polytope together with the nearest
    /// point.
    pub fn nearest(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let shifted: Vec<Vec<f64>> = self
            .vertices
            .iter()
            .map(|v| v.iter().zip(x).map(|(a, b)| a - b).collect())
            .collect();
        let (p, _) = min_norm_point(&shifted);
        let dist = norm(&p);
        (dist, p.iter().zip(x).map(|(a, b)| a + b).collect())
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.nearest(x).0
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.distance(x) <= tol
    }

    /// Membership by linear feasibility: `x = Σ λ_k v_k` with `λ` in the
    /// simplex, each coordinate matched to within `tol`.
    pub fn contains_lp(&self, x: &[f64], tol: f64) -> bool {
        let mut lp = LinearProgram::minimize();
        let lam: Vec<usize> = self.vertices.iter().map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
        lp.row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        for (t, xt) in x.iter().enumerate() {
            let row: Vec<(usize, f64)> = lam.iter().zip(&self.vertices).map(|(&v, p)| (v, p[t])).collect();
            lp.row(row.clone(), Cmp::Le, xt + tol);
            lp.row(row, Cmp::Ge, xt - tol);
        }
        matches!(lp.solve(), LpOutcome::Optimal { .. })
    }

    /// Drop vertices lying in the hull of the others.
    pub fn reduced(&self) -> Polytope {
        let n = self.vertices.len();
        if n <= 2 {
            return self.clone();
        }
        if self.dim == 1 {
            let lo = self.vertices.first().unwrap().clone();
            let hi = self.vertices.last().unwrap().clone();
            return Polytope::new(vec![lo, hi]).unwrap();
        }
        let scale = self
            .vertices
            .iter()
            .map(|v| norm(v))
            .fold(1.0_f64, f64::max);
        let mut keep: Vec<Vec<f64>> = self.vertices.clone();
        let mut i = 0;
        while i < keep.len() && keep.len() > 1 {
            let v = keep[i].clone();
            let others: Vec<Vec<f64>> = keep
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, w)| w.iter().zip(&v).map(|(a, b)| a - b).collect())
                .collect();
            let (p, _) = min_norm_point(&others);
            if norm(&p) <= 1e-12 * scale {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        Polytope::new(keep).unwrap()
    }

    /// True if both polytopes have the same vertex lists within `tol`
    /// (after reduction).
    pub fn approx_eq(&self, other: &Polytope, tol: f64) -> bool {
        let a = self.reduced();
        let b = other.reduced();
        a.vertices.len() == b.vertices.len()
            && a
                .vertices
                .iter()
                .zip(&b.vertices)
                .all(|(x, y)| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol))
    }
}

/// Minimum-norm point in the convex hull of `points` (Wolfe's algorithm).
/// Returns the point and the convex weights on the input points.
pub fn min_norm_point(points: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = points.len();
    assert!(n > 0, "min_norm_point needs at least one point");
    let dim = points[0].len();
    let scale = points.iter().map(|p| dot(p, p)).fold(0.0_f64, f64::max).max(1e-300);
    let z1 = 1e-14 * scale;
    let z3 = 1e-12;

    let start = (0..n)
        .min_by(|&a, &b| dot(&points[a], &points[a]).total_cmp(&dot(&points[b], &points[b])))
        .unwrap();
    let mut set = vec![start];
    let mut lam = vec![1.0];
    let mut x = points[start].clone();

    let combine = |set: &[usize], w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&i, &wi) in set.iter().zip(w) {
            for (o, p) in out.iter_mut().zip(&points[i]) {
                *o += wi * p;
            }
        }
        out
    };

    for _ in 0..(50 * (n + dim) + 100) {
        let xx = dot(&x, &x);
        if xx <= z1 * 1e-4 {
            break;
        }
        let j = (0..n)
            .min_by(|&a, &b| dot(&x, &points[a]).total_cmp(&dot(&x, &points[b])))
            .unwrap();
        if xx - dot(&x, &points[j]) <= z1 || set.contains(&j) {
            break;
        }
        set.push(j);
        lam.push(0.0);
        loop {
            let Some(alpha) = affine_minimizer(points, &set) else {
                // numerically dependent: discard the newcomer
                let k = set.len() - 1;
                set.remove(k);
                lam.remove(k);
                return finish(n, &set, &lam, x);
            };
            if alpha.iter().all(|&a| a > z3) {
                lam = alpha;
                x = combine(&set, &lam);
                break;
            }
            let mut theta = 1.0_f64;
            for (a, l) in alpha.iter().zip(&lam) {
                if *a <= z3 && l - a > 0.0 {
                    theta = theta.min(l / (l - a));
                }
            }
            for (l, a) in lam.iter_mut().zip(&alpha) {
                *l = theta * a + (1.0 - theta) * *l;
            }
            let mut k = 0;
            let mut removed = false;
            while k < set.len() {
                if lam[k] <= z3 {
                    set.remove(k);
                    lam.remove(k);
                    removed = true;
                } else {
                    k += 1;
                }
            }
            if !removed {
                // guard against stalling on round-off
                let (k, _) = lam
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap();
                set.remove(k);
                lam.remove(k);
            }
            let s: f64 = lam.iter().sum();
            for l in lam.iter_mut() {
                *l /= s;
            }
            x = combine(&set, &lam);
        }
    }
    finish(n, &set, &lam, x)
}

fn finish(n: usize, set: &[usize], lam: &[f64], x: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut w = vec![0.0; n];
    for (&i, &l) in set.iter().zip(lam) {
        w[i] = l;
    }
    (x, w)
}

/// Weights `a` with `Σ a = 1` minimizing `‖Σ a_i p_i‖` over the affine hull
/// of the selected points, or `None` if they are affinely dependent.
fn affine_minimizer(points: &[Vec<f64>], set: &[usize]) -> Option<Vec<f64>> {
    let k = set.len();
    if k == 1 {
        return Some(vec![1.0]);
    }
    let p0 = &points[set[0]];
    let b: Vec<Vec<f64>> = set[1..]
        .iter()
        .map(|&i| points[i].iter().zip(p0).map(|(a, c)| a - c).collect())
        .collect();
    let m = k - 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    let mut scale = 0.0_f64;
    for r in 0..m {
        for c in 0..m {
            a[r][c] = dot(&b[r], &b[c]);
        }
        a[r][m] = -dot(&b[r], p0);
        scale = scale.max(a[r][r]);
    }
    let beta = solve_dense(a, 1e-12 * scale.max(1e-300))?;
    let mut alpha = Vec::with_capacity(k);
    alpha.push(1.0 - beta.iter().sum::<f64>());
    alpha.extend(beta);
    Some(alpha)
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>, pivot_tol: f64) -> Option<Vec<f64>> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() <= pivot_tol {
            return None;
        }
        a.swap(col, piv);
        for r in (col + 1)..m {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let mut s = a[r][m];
        for c in (r + 1)..m {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

/// Finite union of polytopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SubdiffRepr", into = "SubdiffRepr")]
pub struct SubdiffSet {
    pieces: Vec<Polytope>,
    dim: usize,
    /// Set when the union is only known to contain the true set (sum rule
    /// applied to terms that are not separable).
    pub outer_estimate: bool,
}

#[derive(Serialize, Deserialize)]
struct SubdiffRepr {
    pieces: Vec<Polytope>,
}

impl TryFrom<SubdiffRepr> for SubdiffSet {
    type Error = GeometryError;
    fn try_from(r: SubdiffRepr) -> Result<Self, GeometryError> {
        SubdiffSet::new(r.pieces)
    }
}

impl From<SubdiffSet> for SubdiffRepr {
    fn from(s: SubdiffSet) -> Self {
        SubdiffRepr { pieces: s.pieces }
    }
}

impl SubdiffSet {
    pub fn new(mut pieces: Vec<Polytope>) -> Result<Self, GeometryError> {
        let dim = pieces.first().ok_or(GeometryError::Empty)?.dim();
        if let Some(p) = pieces.iter().find(|p| p.dim() != dim) {
            return Err(GeometryError::DimensionMismatch(dim, p.dim()));
        }
        pieces.sort_by(|a, b| {
            for (x, y) in a.vertices().iter().zip(b.vertices()) {
                match lex(x, y) {
                    Ordering::Equal => continue,
                    o => return o,
                }
            }
            a.vertices().len().cmp(&b.vertices().len())
        });
        pieces.dedup();
        Ok(SubdiffSet {
            pieces,
            dim,
            outer_estimate: false,
        })
    }

    pub fn singleton(v: Vec<f64>) -> Self {
        SubdiffSet::new(vec![Polytope::point(v)]).unwrap()
    }

    pub fn from_polytope(p: Polytope) -> Self {
        SubdiffSet::new(vec![p]).unwrap()
    }

    pub fn pieces(&self) -> &[Polytope] {
        &self.pieces
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub(crate) fn with_outer_flag(mut self, flag: bool) -> Self {
        self.outer_estimate = flag;
        self
    }

    /// Multiply every vertex by `c`. For `c < 0` this is the set image
    /// `c·S`, which need not be the limiting subdifferential of `c·f`.
    pub fn scale(&self, c: f64) -> SubdiffSet {
        SubdiffSet::new(self.pieces.iter().map(|p| p.scale(c)).collect())
            .unwrap()
            .with_outer_flag(self.outer_estimate)
    }

    pub fn translate(&self, t: &[f64]) -> SubdiffSet {
        SubdiffSet::new(self.pieces.iter().map(|p| p.translate(t)).collect())
            .unwrap()
            .with_outer_flag(self.outer_estimate)
    }

    /// Pairwise piece sums.
    pub fn minkowski_sum(&self, other: &SubdiffSet) -> Result<SubdiffSet, GeometryError> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch(self.dim, other.dim));
        }
        let mut pieces = Vec::with_capacity(self.pieces.len() * other.pieces.len());
        for a in &self.pieces {
            for b in &other.pieces {
                pieces.push(a.minkowski(b)?);
            }
        }
        Ok(SubdiffSet::new(pieces)?.with_outer_flag(self.outer_estimate || other.outer_estimate))
    }

    /// Convex hull of the union.
    pub fn closed_convex_hull(&self) -> Polytope {
        let vs = self
            .pieces
            .iter()
            .flat_map(|p| p.vertices().iter().cloned())
            .collect();
        Polytope::new(vs).unwrap().reduced()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.pieces.iter().any(|p| p.contains(x, tol))
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// All vertices of all pieces.
    pub fn vertices(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.pieces.iter().flat_map(|p| p.vertices().iter())
    }

    /// Every vertex of `self` lies in some piece of `other`, and conversely.
    pub fn approx_eq(&self, other: &SubdiffSet, tol: f64) -> bool {
        self.vertices().all(|v| other.contains(v, tol))
            && other.vertices().all(|v| self.contains(v, tol))
            && self.pieces.len() == other.pieces.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(vs: &[&[f64]]) -> Polytope {
        Polytope::new(vs.iter().map(|v| v.to_vec()).collect()).unwrap()
    }

    #[test]
    fn scale_examples() {
        let s = SubdiffSet::from_polytope(poly(&[&[-1.0], &[1.0]]));
        assert_eq!(s.scale(0.0), SubdiffSet::singleton(vec![0.0]));
        let c = 2f64.sqrt() / 4.0;
        let t = SubdiffSet::from_polytope(poly(&[&[-2.0, -1.0], &[-2.0, 1.0]])).scale(c);
        let want = poly(&[&[-2.0 * c, -c], &[-2.0 * c, c]]);
        assert!(t.pieces()[0].approx_eq(&want, 1e-15));
        assert_eq!(SubdiffSet::singleton(vec![1.0]).scale(-3.0), SubdiffSet::singleton(vec![-3.0]));
    }

    #[test]
    fn minkowski_examples() {
        let a = SubdiffSet::from_polytope(poly(&[&[-1.0, 0.0], &[1.0, 0.0]]));
        let b = SubdiffSet::from_polytope(poly(&[&[0.0, -1.0], &[0.0, 1.0]]));
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(s.pieces().len(), 1);
        assert_eq!(s.pieces()[0].vertices().len(), 4);

        let p = SubdiffSet::singleton(vec![-2.0, 1.0]);
        let q = SubdiffSet::singleton(vec![2.0, -1.0]);
        assert_eq!(p.minkowski_sum(&q).unwrap(), SubdiffSet::singleton(vec![0.0, 0.0]));

        let pair = SubdiffSet::new(vec![poly(&[&[-1.0]]), poly(&[&[1.0]])]).unwrap();
        let unit = SubdiffSet::from_polytope(poly(&[&[0.0], &[1.0]]));
        let s = pair.minkowski_sum(&unit).unwrap();
        let want = SubdiffSet::new(vec![poly(&[&[-1.0], &[0.0]]), poly(&[&[1.0], &[2.0]])]).unwrap();
        assert_eq!(s, want);

        assert!(a.minkowski_sum(&unit).is_err());
    }

    #[test]
    fn hull_examples() {
        let pair = SubdiffSet::new(vec![poly(&[&[-1.0]]), poly(&[&[1.0]])]).unwrap();
        assert_eq!(pair.closed_convex_hull(), poly(&[&[-1.0], &[1.0]]));
        let seg = poly(&[&[1.0, 0.0], &[2.0, 0.0]]);
        assert_eq!(SubdiffSet::from_polytope(seg.clone()).closed_convex_hull(), seg);
    }

    #[test]
    fn membership_examples() {
        let seg = poly(&[&[1.0, 0.0], &[2.0, 0.0]]);
        assert!(seg.contains(&[1.5, 0.0], MEMBERSHIP_TOL));
        assert!(!seg.contains(&[0.0, 0.0], MEMBERSHIP_TOL));
        assert!((seg.distance(&[0.0, 0.0]) - 1.0).abs() < 1e-15);
        let tri = poly(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert!(tri.contains(&[0.25, 0.25], MEMBERSHIP_TOL));
        assert!(!tri.contains(&[0.6, 0.6], MEMBERSHIP_TOL));
        assert!((tri.distance(&[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reduction_drops_interior_points() {
        let p = poly(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 2.0], &[0.5, 0.5], &[1.0, 0.0]]);
        assert_eq!(p.reduced(), poly(&[&[0.0, 0.0], &[2.0, 0.0], &[0.0, 2.0]]));
        let collinear = poly(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(collinear.reduced(), poly(&[&[0.0, 0.0], &[2.0, 2.0]]));
    }

    #[test]
    fn min_norm_point_square() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![3.0, 1.0], vec![3.0, -1.0]];
        let (x, w) = min_norm_point(&pts);
        assert!((x[0] - 1.0).abs() < 1e-14 && x[1].abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn serde_shape() {
        let s = SubdiffSet::from_polytope(poly(&[&[1.0, 0.0], &[-1.0, 0.0]]));
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"pieces":[{"vertices":[[-1.0,0.0],[1.0,0.0]]}]}"#);
        let back: SubdiffSet = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
