//! Problem data: objectives, semi-infinite constraints, uncertainty set,
//! ordering cone, and sampling box.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::expr::{parse_expr, Expr, ParseError};
use crate::geometry::{norm, SubdiffSet};
use crate::lp::{Cmp, LinearProgram, LpOutcome};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("schema violation at `{pointer}`: {message}")]
    Schema { pointer: String, message: String },
    #[error("expression at `{pointer}`: {source}")]
    Parse {
        pointer: String,
        #[source]
        source: ParseError,
    },
    #[error("ordering cone is not pointed: {0}")]
    NotPointed(String),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> ProblemError {
    ProblemError::Schema {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// Compact uncertainty set shared by all constraints.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UncertaintySet {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Finite { points: Vec<Vec<f64>> },
}

impl UncertaintySet {
    pub fn dim(&self) -> usize {
        match self {
            UncertaintySet::Box { lower, .. } => lower.len(),
            UncertaintySet::Finite { points } => points[0].len(),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        match self {
            UncertaintySet::Box { lower, upper } => u
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol),
            UncertaintySet::Finite { points } => points
                .iter()
                .any(|p| p.iter().zip(u).all(|(a, b)| (a - b).abs() <= tol)),
        }
    }
}

/// Axis-aligned box in decision space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, h))| x >= l && x <= h)
    }

    /// Uniform grid coordinate `k` of `n` along axis `axis`.
    pub fn coord(&self, axis: usize, k: usize, n: usize) -> f64 {
        let (lo, hi) = (self.lower[axis], self.upper[axis]);
        if n <= 1 {
            return 0.5 * (lo + hi);
        }
        if k + 1 == n {
            return hi;
        }
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

/// Polyhedral ordering cone.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ConeSpec {
    Orthant { dim: usize },
    Generators { rays: Vec<Vec<f64>> },
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        match self {
            ConeSpec::Orthant { dim } => *dim,
            ConeSpec::Generators { rays } => rays[0].len(),
        }
    }

    fn unit_rays(&self) -> Vec<Vec<f64>> {
        match self {
            ConeSpec::Orthant { dim } => (0..*dim)
                .map(|j| {
                    let mut e = vec![0.0; *dim];
                    e[j] = 1.0;
                    e
                })
                .collect(),
            ConeSpec::Generators { rays } => rays
                .iter()
                .map(|r| {
                    let n = norm(r);
                    r.iter().map(|x| x / n).collect()
                })
                .collect(),
        }
    }

    /// Pointedness: zero is not a nontrivial convex combination of the rays.
    pub fn check_pointed(&self) -> Result<(), ProblemError> {
        let ConeSpec::Generators { rays } = self else {
            return Ok(());
        };
        if rays.iter().any(|r| norm(r) == 0.0) {
            return Err(ProblemError::NotPointed("zero generator".into()));
        }
        let units = self.unit_rays();
        let m = self.dim();
        let mut lp = LinearProgram::minimize();
        let lam: Vec<usize> = units.iter().map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
        lp.row(lam.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        for t in 0..m {
            let row = lam.iter().zip(&units).map(|(&v, r)| (v, r[t])).collect();
            // slack by a small tolerance so near-degenerate cones are caught
            lp.row(row, Cmp::Le, 1e-9);
            let row = lam.iter().zip(&units).map(|(&v, r)| (v, r[t])).collect();
            lp.row(row, Cmp::Ge, -1e-9);
        }
        match lp.solve() {
            LpOutcome::Optimal { .. } => Err(ProblemError::NotPointed(
                "a convex combination of generators vanishes".into(),
            )),
            _ => Ok(()),
        }
    }

    /// `y ∈ K⁺` up to `tol`.
    pub fn in_dual(&self, y: &[f64], tol: f64) -> bool {
        match self {
            ConeSpec::Orthant { .. } => y.iter().all(|v| *v >= -tol),
            ConeSpec::Generators { rays } => rays
                .iter()
                .all(|r| r.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() >= -tol),
        }
    }

    /// Smallest `⟨y/‖y‖, r/‖r‖⟩` over generators; positive iff `y ∈ int K⁺`.
    pub fn dual_margin(&self, y: &[f64]) -> f64 {
        let n = norm(y);
        if n == 0.0 {
            return 0.0;
        }
        self.unit_rays()
            .iter()
            .map(|r| r.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n)
            .fold(f64::INFINITY, f64::min)
    }

    fn rank_full(&self) -> bool {
        let mut rows = self.unit_rays();
        let m = self.dim();
        let mut rank = 0;
        for col in 0..m {
            let Some(piv) = (rank..rows.len()).max_by(|&a, &b| rows[a][col].abs().total_cmp(&rows[b][col].abs())) else {
                break;
            };
            if rows[piv][col].abs() < 1e-10 {
                continue;
            }
            rows.swap(rank, piv);
            for r in 0..rows.len() {
                if r != rank {
                    let f = rows[r][col] / rows[rank][col];
                    for c in 0..m {
                        rows[r][c] -= f * rows[rank][c];
                    }
                }
            }
            rank += 1;
        }
        rank == m
    }

    /// Largest `t` with `v = Σ λ_k r̂_k`, `λ_k ≥ t`, `t ≤ 1`, or `None` if
    /// `v` is not in the cone (residual above `tol`).
    fn generator_depth(&self, v: &[f64], tol: f64) -> Option<f64> {
        let units = self.unit_rays();
        let mut lp = LinearProgram::maximize();
        let t = lp.var(1.0, f64::NEG_INFINITY, 1.0);
        let lam: Vec<usize> = units.iter().map(|_| lp.var(0.0, 0.0, f64::INFINITY)).collect();
        for &l in &lam {
            lp.row(vec![(l, 1.0), (t, -1.0)], Cmp::Ge, 0.0);
        }
        for (c, vc) in v.iter().enumerate() {
            let row: Vec<(usize, f64)> = lam.iter().zip(&units).map(|(&l, r)| (l, r[c])).collect();
            lp.row(row.clone(), Cmp::Le, vc + tol);
            lp.row(row, Cmp::Ge, vc - tol);
        }
        match lp.solve() {
            LpOutcome::Optimal { objective, .. } => Some(objective),
            _ => None,
        }
    }

    /// `d ∈ -K` up to `tol`.
    pub fn in_neg_cone(&self, d: &[f64], tol: f64) -> bool {
        match self {
            ConeSpec::Orthant { .. } => d.iter().all(|x| *x <= tol),
            ConeSpec::Generators { .. } => {
                let v: Vec<f64> = d.iter().map(|x| -x).collect();
                self.generator_depth(&v, tol).is_some()
            }
        }
    }

    /// `d ∈ -int K`, with strictness margin `tol`.
    pub fn in_neg_interior(&self, d: &[f64], tol: f64) -> bool {
        match self {
            ConeSpec::Orthant { .. } => d.iter().all(|x| *x < -tol),
            ConeSpec::Generators { .. } => {
                let n = norm(d);
                if n <= tol || !self.rank_full() {
                    return false;
                }
                let v: Vec<f64> = d.iter().map(|x| -x / n).collect();
                matches!(self.generator_depth(&v, 1e-12), Some(t) if t > tol)
            }
        }
    }

    /// Integer grid of directions in `K⁺` with weights summing (in absolute
    /// value) to `steps`, scaled by `1/steps`, in lexicographic order of the
    /// integer weights. For the orthant this is the simplex grid.
    pub fn dual_grid(&self, steps: usize) -> Vec<Vec<f64>> {
        let m = self.dim();
        let s = steps.max(1);
        let mut out = Vec::new();
        let mut cur = vec![0i64; m];
        let signed = matches!(self, ConeSpec::Generators { .. });
        fill(&mut cur, 0, s as i64, signed, &mut out);
        out.into_iter()
            .map(|w| w.iter().map(|&x| x as f64 / s as f64).collect::<Vec<f64>>())
            .filter(|y| self.in_dual(y, 1e-12))
            .collect()
    }
}

fn fill(cur: &mut Vec<i64>, pos: usize, left: i64, signed: bool, out: &mut Vec<Vec<i64>>) {
    let m = cur.len();
    if pos + 1 == m {
        if signed && left > 0 {
            cur[pos] = -left;
            out.push(cur.clone());
        }
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    let lo = if signed { -left } else { 0 };
    for k in lo..=left {
        cur[pos] = k;
        fill(cur, pos + 1, left - k.abs(), signed, out);
    }
}

/// Values transcribed alongside a fixture for cross-checking.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct StatedData {
    pub point: Option<Vec<f64>>,
    pub psi: Option<Vec<f64>>,
    pub objective_subdifferentials: Option<Vec<SubdiffSet>>,
    pub y_star: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
}

/// An uncertain multiobjective program with semi-infinite constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub label: String,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub p: usize,
    pub objectives: Vec<Expr>,
    pub constraints: Vec<Expr>,
    pub uncertainty: UncertaintySet,
    pub cone: ConeSpec,
    pub domain: BoxDomain,
    pub reference_point: Option<Vec<f64>>,
    pub stated: StatedData,
    /// Source strings as they appeared in the file.
    pub objective_sources: Vec<String>,
    pub constraint_sources: Vec<String>,
}

fn get<'a>(v: &'a Value, key: &str, ptr: &str) -> Result<&'a Value, ProblemError> {
    v.get(key)
        .ok_or_else(|| schema(format!("{ptr}/{key}"), "missing field"))
}

fn as_usize(v: &Value, ptr: &str) -> Result<usize, ProblemError> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| schema(ptr, "expected a nonnegative integer"))
}

fn as_str<'a>(v: &'a Value, ptr: &str) -> Result<&'a str, ProblemError> {
    v.as_str().ok_or_else(|| schema(ptr, "expected a string"))
}

fn as_array<'a>(v: &'a Value, ptr: &str) -> Result<&'a Vec<Value>, ProblemError> {
    v.as_array().ok_or_else(|| schema(ptr, "expected an array"))
}

fn as_vec(v: &Value, ptr: &str, len: Option<usize>) -> Result<Vec<f64>, ProblemError> {
    let arr = as_array(v, ptr)?;
    let out = arr
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| schema(format!("{ptr}/{i}"), "expected a finite number"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(n) = len {
        if out.len() != n {
            return Err(schema(ptr, format!("expected {n} entries, got {}", out.len())));
        }
    }
    Ok(out)
}

fn as_matrix(v: &Value, ptr: &str, cols: usize) -> Result<Vec<Vec<f64>>, ProblemError> {
    let arr = as_array(v, ptr)?;
    if arr.is_empty() {
        return Err(schema(ptr, "expected a nonempty array"));
    }
    arr.iter()
        .enumerate()
        .map(|(i, row)| as_vec(row, &format!("{ptr}/{i}"), Some(cols)))
        .collect()
}

fn parse_list(v: &Value, ptr: &str, d: usize, p: usize) -> Result<(Vec<Expr>, Vec<String>), ProblemError> {
    let arr = as_array(v, ptr)?;
    let mut exprs = Vec::with_capacity(arr.len());
    let mut sources = Vec::with_capacity(arr.len());
    for (i, item) in arr.iter().enumerate() {
        let path = format!("{ptr}/{i}");
        let text = as_str(item, &path)?;
        let e = parse_expr(text, d, p).map_err(|source| ProblemError::Parse {
            pointer: path.clone(),
            source,
        })?;
        exprs.push(e);
        sources.push(text.to_string());
    }
    Ok((exprs, sources))
}

impl Problem {
    /// Build and validate a problem from its JSON form.
    pub fn from_json(v: &Value) -> Result<Problem, ProblemError> {
        if !v.is_object() {
            return Err(schema("", "expected a JSON object"));
        }
        let d = as_usize(get(v, "decision_dim", "")?, "/decision_dim")?;
        if d == 0 {
            return Err(schema("/decision_dim", "must be positive"));
        }
        let p = as_usize(get(v, "uncertainty_dim", "")?, "/uncertainty_dim")?;
        let (objectives, objective_sources) = parse_list(get(v, "objectives", "")?, "/objectives", d, 0)?;
        if objectives.is_empty() {
            return Err(schema("/objectives", "at least one objective is required"));
        }
        let (constraints, constraint_sources) =
            parse_list(get(v, "constraints", "")?, "/constraints", d, p)?;
        let m = objectives.len();
        let n = constraints.len();

        let uv = get(v, "uncertainty", "")?;
        let kind = as_str(get(uv, "type", "/uncertainty")?, "/uncertainty/type")?;
        let uncertainty = match kind {
            "box" => {
                let lower = as_vec(get(uv, "lower", "/uncertainty")?, "/uncertainty/lower", Some(p))?;
                let upper = as_vec(get(uv, "upper", "/uncertainty")?, "/uncertainty/upper", Some(p))?;
                if let Some(i) = (0..p).find(|&i| lower[i] > upper[i]) {
                    return Err(schema(format!("/uncertainty/lower/{i}"), "lower bound exceeds upper bound"));
                }
                UncertaintySet::Box { lower, upper }
            }
            "finite" => UncertaintySet::Finite {
                points: as_matrix(get(uv, "points", "/uncertainty")?, "/uncertainty/points", p)?,
            },
            other => return Err(schema("/uncertainty/type", format!("unknown uncertainty type `{other}`"))),
        };

        let cv = get(v, "cone", "")?;
        let cone = match as_str(get(cv, "type", "/cone")?, "/cone/type")? {
            "orthant" => ConeSpec::Orthant { dim: m },
            "generators" => ConeSpec::Generators {
                rays: as_matrix(get(cv, "rays", "/cone")?, "/cone/rays", m)?,
            },
            other => return Err(schema("/cone/type", format!("unknown cone type `{other}`"))),
        };
        cone.check_pointed()?;

        let bv = get(v, "box", "")?;
        let lower = as_vec(get(bv, "lower", "/box")?, "/box/lower", Some(d))?;
        let upper = as_vec(get(bv, "upper", "/box")?, "/box/upper", Some(d))?;
        if let Some(i) = (0..d).find(|&i| lower[i] > upper[i]) {
            return Err(schema(format!("/box/lower/{i}"), "lower bound exceeds upper bound"));
        }
        let label = match v.get("label") {
            Some(l) => as_str(l, "/label")?.to_string(),
            None => String::new(),
        };
        let reference_point = match v.get("reference_point") {
            Some(r) => Some(as_vec(r, "/reference_point", Some(d))?),
            None => None,
        };
        let stated = match v.get("stated") {
            Some(s) => parse_stated(s, d, m, n)?,
            None => StatedData::default(),
        };
        Ok(Problem {
            label,
            d,
            m,
            n,
            p,
            objectives,
            constraints,
            uncertainty,
            cone,
            domain: BoxDomain { lower, upper },
            reference_point,
            stated,
            objective_sources,
            constraint_sources,
        })
    }

    /// Objective values `f(z)`.
    pub fn objective_values(&self, z: &[f64]) -> Result<Vec<f64>, crate::expr::EvalError> {
        let pt = crate::expr::Point::decision(z);
        self.objectives.iter().map(|f| crate::expr::eval(f, &pt)).collect()
    }

    /// Copy with every objective multiplied by `lambda`.
    pub fn with_scaled_objectives(&self, lambda: f64) -> Problem {
        let mut q = self.clone();
        q.objectives = self
            .objectives
            .iter()
            .map(|f| Expr::Mul(Box::new(Expr::Const(lambda)), Box::new(f.clone())))
            .collect();
        q.objective_sources = q.objectives.iter().map(|f| f.to_string()).collect();
        q
    }
}

impl std::str::FromStr for Problem {
    type Err = ProblemError;
    fn from_str(text: &str) -> Result<Problem, ProblemError> {
        let v: Value = serde_json::from_str(text)?;
        Problem::from_json(&v)
    }
}

fn parse_stated(s: &Value, d: usize, m: usize, n: usize) -> Result<StatedData, ProblemError> {
    let mut out = StatedData::default();
    if let Some(x) = s.get("point") {
        out.point = Some(as_vec(x, "/stated/point", Some(d))?);
    }
    if let Some(x) = s.get("psi") {
        out.psi = Some(as_vec(x, "/stated/psi", Some(n))?);
    }
    if let Some(x) = s.get("y_star") {
        out.y_star = Some(as_vec(x, "/stated/y_star", Some(m))?);
    }
    if let Some(x) = s.get("mu") {
        out.mu = Some(as_vec(x, "/stated/mu", Some(n))?);
    }
    if let Some(x) = s.get("objective_subdifferentials") {
        let sets: Vec<SubdiffSet> = serde_json::from_value(x.clone())
            .map_err(|e| schema("/stated/objective_subdifferentials", e.to_string()))?;
        if sets.len() != m || sets.iter().any(|s| s.dim() != d) {
            return Err(schema("/stated/objective_subdifferentials", "one set per objective in decision dimension"));
        }
        out.objective_subdifferentials = Some(sets);
    }
    Ok(out)
}

/// Read and validate a problem file.
pub fn load_problem(path: impl AsRef<Path>) -> Result<Problem, ProblemError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.parse()
}
