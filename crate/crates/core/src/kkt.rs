//! Constraint qualification, robust KKT certificate search and independent
//! verification.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efficiency::FeasibleGrid;
use crate::expr::{eval, Point, Wrt};
use crate::geometry::{norm, Polytope, SubdiffSet};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::problem::Problem;
use crate::robust::{
    active_index_set, active_uncertainty, psi_all, worst_case, worst_case_subdiff, RobustError, RobustOptions,
    ACTIVITY_TOL,
};
use crate::subdiff::{limiting_subdiff, outer_scalarization, scalarized_subdiff, SubdiffError};

/// Default stationarity and complementarity tolerance.
pub const KKT_TOL: f64 = 1e-8;
/// Default `int K⁺` margin after normalization.
pub const INTERIOR_MARGIN: f64 = 1e-3;
const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KktError {
    #[error("point is not robust feasible (max psi = {max_psi:e})")]
    Infeasible { max_psi: f64 },
    #[error("no certificate at resolution {directions} directions (smallest residual {min_residual:e})")]
    NotFoundAtResolution { min_residual: f64, directions: usize },
    #[error("{count} subdifferential piece selections exceed the limit {limit}")]
    TooManySelections { count: usize, limit: usize },
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Subdiff(#[from] SubdiffError),
}

/// Which objective set enters the stationarity condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Sum-rule set `Σ y_j ∂f_j`.
    #[default]
    Outer,
    /// `∂⟨y, f⟩` of the combined expression.
    Exact,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Outer => "outer",
            Mode::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktOptions {
    /// Resolution of the `K⁺` direction grid (weights are multiples of 1/ygrid).
    pub ygrid: usize,
    pub tol: f64,
    pub mode: Mode,
    /// Restrict directions to `int K⁺` with this margin.
    pub interior_margin: Option<f64>,
    /// Also search for a certificate with `y* = 0`.
    pub fritz_john: bool,
    pub activity_tol: f64,
    pub robust: RobustOptions,
    pub max_selections: usize,
}

impl Default for KktOptions {
    fn default() -> Self {
        KktOptions {
            ygrid: 40,
            tol: KKT_TOL,
            mode: Mode::Outer,
            interior_margin: None,
            fritz_john: true,
            activity_tol: ACTIVITY_TOL,
            robust: RobustOptions::default(),
            max_selections: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ChosenSubgradients {
    /// One subgradient per objective (outer mode only).
    #[serde(default)]
    pub objectives: Vec<Vec<f64>>,
    /// The point of the scalarized objective set used in the sum.
    #[serde(default)]
    pub scalarized: Vec<f64>,
    /// One point of each convexified worst-case constraint set.
    #[serde(default)]
    pub constraints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    pub y_star: Vec<f64>,
    pub mu: Vec<f64>,
    pub witnesses: Vec<Vec<f64>>,
    #[serde(default)]
    pub chosen_subgradients: ChosenSubgradients,
    #[serde(default)]
    pub residual: f64,
    #[serde(default)]
    pub normalization: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub fritz_john: bool,
}

impl KktCertificate {
    /// Certificate from given multipliers: witnesses are the worst-case
    /// maximizers and the residual is the distance of the stationarity set
    /// from zero. The multipliers are used as given.
    pub fn from_multipliers(
        problem: &Problem,
        z: &[f64],
        y_star: &[f64],
        mu: &[f64],
        mode: Mode,
        robust: &RobustOptions,
    ) -> Result<Self, KktError> {
        let witnesses = (0..problem.n)
            .map(|i| worst_case(problem, i, z, robust).map(|w| w.argmax))
            .collect::<Result<Vec<_>, _>>()?;
        let mut c = KktCertificate {
            y_star: y_star.to_vec(),
            mu: mu.to_vec(),
            witnesses,
            chosen_subgradients: ChosenSubgradients::default(),
            residual: 0.0,
            normalization: norm(y_star) + norm(mu),
            mode,
            fritz_john: norm(y_star) == 0.0,
        };
        c.residual = stationarity_set(problem, z, &c, ACTIVITY_TOL, robust)?.distance(&vec![0.0; problem.d]);
        Ok(c)
    }
}

/// One certificate search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktSearch {
    /// Preferred certificate: `y* ≠ 0` when one exists at resolution.
    pub certificate: KktCertificate,
    /// A certificate with `y* = 0`, when one exists.
    pub fritz_john: Option<KktCertificate>,
    pub directions: usize,
    pub direction_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CqEntry {
    pub index: usize,
    pub distance: f64,
    pub hull: Polytope,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CqReport {
    pub holds: bool,
    pub active: Vec<usize>,
    pub entries: Vec<CqEntry>,
    pub tol: f64,
}

/// `0 ∉ cl co ⋃_u ∂_z g_i(z, u)` for every index in `I(z)`.
pub fn check_cq(problem: &Problem, z: &[f64], tol: f64, robust: &RobustOptions) -> Result<CqReport, KktError> {
    let active = active_index_set(problem, z, ACTIVITY_TOL, robust)?;
    let mut entries = Vec::new();
    for &i in &active {
        let hull = worst_case_subdiff(problem, i, z, ACTIVITY_TOL, robust)?;
        let distance = hull.distance(&vec![0.0; problem.d]);
        entries.push(CqEntry { index: i, distance, hull });
    }
    Ok(CqReport {
        holds: entries.iter().all(|e| e.distance > tol),
        active,
        entries,
        tol,
    })
}

/// Alternatives for one summand: `weight · (one of the polytopes)`.
struct Block {
    weight: f64,
    pieces: Vec<Vec<Vec<f64>>>,
}

struct Selection {
    residual: f64,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

/// Minimizes the L1 norm of `Σ_b w_b Σ_k α_bk v_bk + Σ_i Σ_k β_ik h_ik`
/// over simplex weights `α` and `β ≥ 0`; ties are broken towards the
/// smallest `Σ β`. With `fj`, there are no blocks and `Σ β = 1`.
fn solve_selection(d: usize, chosen: &[(f64, &Vec<Vec<f64>>)], hulls: &[Vec<Vec<f64>>], fj: bool) -> Option<Selection> {
    let build = |cap: Option<f64>| {
        let mut lp = LinearProgram::minimize();
        let second = cap.is_some();
        let alpha: Vec<Vec<usize>> = chosen
            .iter()
            .map(|(_, vs)| vs.iter().map(|_| lp.var(0.0, 0.0, 1.0)).collect())
            .collect();
        let beta: Vec<Vec<usize>> = hulls
            .iter()
            .map(|vs| {
                vs.iter()
                    .map(|_| lp.var(if second { 1.0 } else { 0.0 }, 0.0, f64::INFINITY))
                    .collect()
            })
            .collect();
        let rp: Vec<usize> = (0..d).map(|_| lp.var(if second { 0.0 } else { 1.0 }, 0.0, f64::INFINITY)).collect();
        let rm: Vec<usize> = (0..d).map(|_| lp.var(if second { 0.0 } else { 1.0 }, 0.0, f64::INFINITY)).collect();
        for a in &alpha {
            lp.row(a.iter().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        }
        if fj {
            lp.row(beta.iter().flatten().map(|&v| (v, 1.0)).collect(), Cmp::Eq, 1.0);
        }
        for t in 0..d {
            let mut row = Vec::new();
            for ((w, vs), a) in chosen.iter().zip(&alpha) {
                for (v, &var) in vs.iter().zip(a) {
                    row.push((var, w * v[t]));
                }
            }
            for (vs, b) in hulls.iter().zip(&beta) {
                for (v, &var) in vs.iter().zip(b) {
                    row.push((var, v[t]));
                }
            }
            row.push((rp[t], -1.0));
            row.push((rm[t], 1.0));
            lp.row(row, Cmp::Eq, 0.0);
        }
        if let Some(c) = cap {
            let row = rp.iter().chain(&rm).map(|&v| (v, 1.0)).collect();
            lp.row(row, Cmp::Le, c);
        }
        (lp, alpha, beta)
    };
    let (lp, _, _) = build(None);
    let LpOutcome::Optimal { objective: r1, .. } = lp.solve() else {
        return None;
    };
    let cap = r1 + 1e-12 * (1.0 + r1);
    let (lp, alpha, beta) = build(Some(cap));
    let values = match lp.solve() {
        LpOutcome::Optimal { values, .. } => values,
        _ => {
            let (lp, alpha, beta) = build(None);
            let LpOutcome::Optimal { values, .. } = lp.solve() else {
                return None;
            };
            return Some(extract(r1, &values, &alpha, &beta));
        }
    };
    Some(extract(r1, &values, &alpha, &beta))
}

fn extract(r1: f64, values: &[f64], alpha: &[Vec<usize>], beta: &[Vec<usize>]) -> Selection {
    Selection {
        residual: r1,
        alpha: alpha.iter().map(|a| a.iter().map(|&v| values[v].max(0.0)).collect()).collect(),
        beta: beta.iter().map(|b| b.iter().map(|&v| values[v].max(0.0)).collect()).collect(),
    }
}

fn selection_count(blocks: &[Block]) -> usize {
    blocks.iter().map(|b| b.pieces.len().max(1)).product()
}

/// Best selection over the product of block pieces, scanned in order; stops
/// at the first exact hit.
fn best_selection(d: usize, blocks: &[Block], hulls: &[Vec<Vec<f64>>]) -> Option<(Vec<usize>, Selection)> {
    let total = selection_count(blocks);
    let mut best: Option<(Vec<usize>, Selection)> = None;
    for mut idx in 0..total {
        let mut choice = vec![0; blocks.len()];
        for (b, blk) in blocks.iter().enumerate().rev() {
            let k = blk.pieces.len();
            choice[b] = idx % k;
            idx /= k;
        }
        let chosen: Vec<(f64, &Vec<Vec<f64>>)> =
            blocks.iter().zip(&choice).map(|(b, &c)| (b.weight, &b.pieces[c])).collect();
        if let Some(sel) = solve_selection(d, &chosen, hulls, false) {
            let better = best.as_ref().map_or(true, |(_, s)| sel.residual < s.residual);
            let exact = sel.residual <= 1e-13;
            if better {
                best = Some((choice, sel));
            }
            if exact {
                break;
            }
        }
    }
    best
}

fn piece_vertices(s: &SubdiffSet) -> Vec<Vec<Vec<f64>>> {
    s.pieces().iter().map(|p| p.vertices().to_vec()).collect()
}

fn combine(points: &[(f64, &[f64])], d: usize) -> Vec<f64> {
    let mut acc = vec![0.0; d];
    for (w, p) in points {
        for t in 0..d {
            acc[t] += w * p[t];
        }
    }
    acc
}

fn weighted_point(weights: &[f64], vs: &[Vec<f64>]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let d = vs.first().map_or(0, |v| v.len());
    if total <= 0.0 {
        return vs.first().cloned().unwrap_or_default();
    }
    let mut acc = vec![0.0; d];
    for (w, v) in weights.iter().zip(vs) {
        for t in 0..d {
            acc[t] += w / total * v[t];
        }
    }
    acc
}

struct Context {
    d: usize,
    parts: Vec<SubdiffSet>,
    included: Vec<usize>,
    hulls: Vec<Vec<Vec<f64>>>,
    witnesses: Vec<Vec<f64>>,
}

fn context(problem: &Problem, z: &[f64], opts: &KktOptions) -> Result<Context, KktError> {
    let psi = psi_all(problem, z, &opts.robust)?;
    let max_psi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_psi > opts.tol {
        return Err(KktError::Infeasible { max_psi });
    }
    let pt = Point::decision(z);
    let parts = problem
        .objectives
        .iter()
        .map(|f| limiting_subdiff(f, &pt, Wrt::Decision))
        .collect::<Result<Vec<_>, _>>()?;
    let mut included = Vec::new();
    let mut hulls = Vec::new();
    let mut witnesses = Vec::new();
    for i in 0..problem.n {
        let clusters = active_uncertainty(problem, i, z, opts.activity_tol, &opts.robust)?;
        witnesses.push(clusters[0].representative.clone());
        if psi[i] >= -opts.tol {
            included.push(i);
            hulls.push(worst_case_subdiff(problem, i, z, opts.activity_tol, &opts.robust)?.vertices().to_vec());
        }
    }
    Ok(Context {
        d: problem.d,
        parts,
        included,
        hulls,
        witnesses,
    })
}

fn assemble(
    problem: &Problem,
    ctx: &Context,
    y: &[f64],
    blocks: &[Block],
    choice: &[usize],
    sel: &Selection,
    mode: Mode,
    outer_blocks: bool,
) -> KktCertificate {
    let d = ctx.d;
    let mut mu = vec![0.0; problem.n];
    for (k, &i) in ctx.included.iter().enumerate() {
        mu[i] = sel.beta[k].iter().sum();
    }
    let s = norm(y) + norm(&mu);
    let chosen_points: Vec<Vec<f64>> = blocks
        .iter()
        .zip(choice)
        .zip(&sel.alpha)
        .map(|((b, &c), a)| weighted_point(a, &b.pieces[c]))
        .collect();
    let scalar_raw = combine(
        &blocks.iter().zip(&chosen_points).map(|(b, p)| (b.weight, p.as_slice())).collect::<Vec<_>>(),
        d,
    );
    let mut constraint_points: Vec<Vec<f64>> = vec![Vec::new(); problem.n];
    for (k, &i) in ctx.included.iter().enumerate() {
        constraint_points[i] = weighted_point(&sel.beta[k], &ctx.hulls[k]);
    }
    let mut total = scalar_raw.clone();
    for &i in &ctx.included {
        for t in 0..d {
            total[t] += mu[i] * constraint_points[i][t];
        }
    }
    let mut objectives = Vec::new();
    if outer_blocks {
        // blocks are the objectives with nonzero weight, in order
        let mut it = chosen_points.iter();
        for yj in y {
            if *yj != 0.0 {
                objectives.push(it.next().cloned().unwrap_or_default());
            } else {
                objectives.push(ctx.parts[objectives.len()].vertices().next().cloned().unwrap_or_default());
            }
        }
    }
    KktCertificate {
        y_star: y.iter().map(|v| v / s).collect(),
        mu: mu.iter().map(|v| v / s).collect(),
        witnesses: ctx.witnesses.clone(),
        chosen_subgradients: ChosenSubgradients {
            objectives,
            scalarized: scalar_raw.iter().map(|v| v / s).collect(),
            constraints: constraint_points,
        },
        residual: norm(&total) / s,
        normalization: 1.0,
        mode,
        fritz_john: false,
    }
}

fn outer_blocks(parts: &[SubdiffSet], y: &[f64]) -> Vec<Block> {
    y.iter()
        .zip(parts)
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, s)| Block {
            weight: *w,
            pieces: piece_vertices(s),
        })
        .collect()
}

fn fritz_john_certificate(problem: &Problem, ctx: &Context, tol: f64) -> Option<KktCertificate> {
    if ctx.hulls.is_empty() {
        return None;
    }
    let sel = solve_selection(ctx.d, &[], &ctx.hulls, true)?;
    let y = vec![0.0; problem.m];
    let mut c = assemble(problem, ctx, &y, &[], &[], &sel, Mode::Outer, false);
    c.fritz_john = true;
    c.chosen_subgradients.objectives = Vec::new();
    (c.residual <= tol).then_some(c)
}

/// Searches the `K⁺` direction grid for a certificate; the first grid index
/// (ascending) whose normalized residual is within `tol` wins.
pub fn find_kkt_certificate(problem: &Problem, z: &[f64], opts: &KktOptions) -> Result<KktSearch, KktError> {
    let ctx = context(problem, z, opts)?;
    let mut dirs = problem.cone.dual_grid(opts.ygrid);
    if let Some(eps) = opts.interior_margin {
        dirs.retain(|y| problem.cone.dual_margin(y) >= eps);
    }
    if opts.mode == Mode::Outer {
        let count = selection_count(&outer_blocks(&ctx.parts, &vec![1.0; problem.m]));
        if count > opts.max_selections {
            return Err(KktError::TooManySelections {
                count,
                limit: opts.max_selections,
            });
        }
    }
    let pt = Point::decision(z);
    let per_dir = |y: &Vec<f64>| -> Result<Option<KktCertificate>, KktError> {
        let (blocks, mode, outer) = match opts.mode {
            Mode::Outer => (outer_blocks(&ctx.parts, y), Mode::Outer, true),
            Mode::Exact => match scalarized_subdiff(y, &problem.objectives, &pt)?.exact {
                Some(s) => (
                    vec![Block {
                        weight: 1.0,
                        pieces: piece_vertices(&s),
                    }],
                    Mode::Exact,
                    false,
                ),
                None => (outer_blocks(&ctx.parts, y), Mode::Outer, true),
            },
        };
        if selection_count(&blocks) > opts.max_selections {
            return Err(KktError::TooManySelections {
                count: selection_count(&blocks),
                limit: opts.max_selections,
            });
        }
        Ok(best_selection(ctx.d, &blocks, &ctx.hulls)
            .map(|(choice, sel)| assemble(problem, &ctx, y, &blocks, &choice, &sel, mode, outer)))
    };
    let results: Vec<Result<Option<KktCertificate>, KktError>> = dirs.par_iter().map(per_dir).collect();
    let mut min_residual = f64::INFINITY;
    let mut found: Option<(usize, KktCertificate)> = None;
    for (k, r) in results.into_iter().enumerate() {
        if let Some(c) = r? {
            min_residual = min_residual.min(c.residual);
            if found.is_none() && c.residual <= opts.tol {
                found = Some((k, c));
            }
        }
    }
    let fj = if opts.fritz_john {
        fritz_john_certificate(problem, &ctx, opts.tol)
    } else {
        None
    };
    match (found, fj) {
        (Some((k, c)), fj) => Ok(KktSearch {
            certificate: c,
            fritz_john: fj,
            directions: dirs.len(),
            direction_index: Some(k),
        }),
        (None, Some(c)) => Ok(KktSearch {
            certificate: c.clone(),
            fritz_john: Some(c),
            directions: dirs.len(),
            direction_index: None,
        }),
        (None, None) => Err(KktError::NotFoundAtResolution {
            min_residual,
            directions: dirs.len(),
        }),
    }
}

/// `S(y*) + Σ μ_i H_i` with `S` the objective set of the certificate's mode.
fn stationarity_set(
    problem: &Problem,
    z: &[f64],
    c: &KktCertificate,
    activity_tol: f64,
    robust: &RobustOptions,
) -> Result<SubdiffSet, KktError> {
    multiplier_set(problem, z, &c.y_star, &c.mu, c.mode, activity_tol, robust)
}

fn multiplier_set(
    problem: &Problem,
    z: &[f64],
    y_star: &[f64],
    mu: &[f64],
    mode: Mode,
    activity_tol: f64,
    robust: &RobustOptions,
) -> Result<SubdiffSet, KktError> {
    let pt = Point::decision(z);
    let obj = match mode {
        Mode::Outer => {
            let parts = problem
                .objectives
                .iter()
                .map(|f| limiting_subdiff(f, &pt, Wrt::Decision))
                .collect::<Result<Vec<_>, _>>()?;
            outer_scalarization(y_star, &parts, problem.d)
        }
        Mode::Exact => {
            let s = scalarized_subdiff(y_star, &problem.objectives, &pt)?;
            s.exact.unwrap_or(s.outer)
        }
    };
    let mut acc = obj;
    for (i, &mi) in mu.iter().enumerate() {
        if mi > 0.0 {
            let h = worst_case_subdiff(problem, i, z, activity_tol, robust)?;
            acc = acc
                .minkowski_sum(&SubdiffSet::from_polytope(h.scale(mi)))
                .expect("matching dimensions");
        }
    }
    Ok(acc)
}

/// Distance from 0 to `S(y*) + Σ μ_i cl co ⋃_{u ∈ U_i(z)} ∂_z g_i(z, u)`.
pub fn stationarity_distance(
    problem: &Problem,
    z: &[f64],
    y_star: &[f64],
    mu: &[f64],
    mode: Mode,
    robust: &RobustOptions,
) -> Result<f64, KktError> {
    Ok(multiplier_set(problem, z, y_star, mu, mode, ACTIVITY_TOL, robust)?.distance(&vec![0.0; problem.d]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tol: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub clauses: Vec<Clause>,
}

impl VerifyReport {
    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

/// Re-checks every clause of a certificate from raw evaluations.
pub fn verify_certificate(
    problem: &Problem,
    z: &[f64],
    c: &KktCertificate,
    tol: f64,
    robust: &RobustOptions,
) -> Result<VerifyReport, KktError> {
    let mut clauses = Vec::new();
    let mut push = |name: &str, passed: bool, value: f64, tol: f64, detail: String| {
        clauses.push(Clause {
            name: name.into(),
            passed,
            value,
            tol,
            detail,
        })
    };
    let dims_ok = c.y_star.len() == problem.m && c.mu.len() == problem.n && c.witnesses.len() == problem.n;
    push(
        "dimensions",
        dims_ok,
        0.0,
        0.0,
        format!("y* {} / mu {} / witnesses {}", c.y_star.len(), c.mu.len(), c.witnesses.len()),
    );
    if !dims_ok {
        return Ok(VerifyReport { passed: false, clauses });
    }
    let psi = psi_all(problem, z, robust)?;
    let max_psi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    push("feasibility", max_psi <= tol, max_psi, tol, "max_i psi_i(z)".into());

    let min_mu = c.mu.iter().cloned().fold(f64::INFINITY, f64::min);
    push("mu_nonnegative", min_mu >= 0.0, min_mu, 0.0, "min_i mu_i".into());

    let dual = problem.cone.in_dual(&c.y_star, 1e-12);
    let margin = problem.cone.dual_margin(&c.y_star);
    push("dual_cone", dual, margin, 1e-12, "y* in K+".into());

    let ny = norm(&c.y_star);
    let nm = norm(&c.mu);
    let form = if ny > tol {
        "kkt"
    } else if nm > tol {
        "fritz_john"
    } else {
        "trivial"
    };
    push("multiplier_form", form != "trivial", ny, tol, form.into());

    let normalization = ny + nm;
    push(
        "normalization",
        (normalization - 1.0).abs() <= NORMALIZATION_TOL,
        normalization,
        NORMALIZATION_TOL,
        "|y*|_2 + |mu|_2".into(),
    );

    let comp = c.mu.iter().zip(&psi).map(|(m, p)| (m * p).abs()).fold(0.0, f64::max);
    push("complementarity", comp <= tol, comp, tol, "max_i |mu_i psi_i(z)|".into());

    let mut worst_gap: f64 = 0.0;
    let mut all_in = true;
    for (i, u) in c.witnesses.iter().enumerate() {
        if u.len() != problem.p || !problem.uncertainty.contains(u, 1e-12) {
            all_in = false;
            continue;
        }
        let g = eval(&problem.constraints[i], &Point::with_uncertainty(z, u)).map_err(RobustError::from)?;
        worst_gap = worst_gap.max(psi[i] - g);
        if c.mu[i] > 0.0 {
            worst_gap = worst_gap.max((c.mu[i] * g).abs());
        }
    }
    push(
        "witness_activity",
        all_in && worst_gap <= ACTIVITY_TOL,
        worst_gap,
        ACTIVITY_TOL,
        "psi_i(z) - g_i(z, u_i), and |mu_i g_i(z, u_i)|".into(),
    );

    let set = stationarity_set(problem, z, c, ACTIVITY_TOL, robust)?;
    let dist = set.distance(&vec![0.0; problem.d]);
    push(
        "stationarity",
        dist <= tol,
        dist,
        tol,
        format!("distance from 0 to the {} stationarity set", c.mode.as_str()),
    );

    let passed = clauses.iter().all(|c| c.passed);
    Ok(VerifyReport { passed, clauses })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProperNecessary {
    pub holds: bool,
    /// Smallest `⟨y*, f(z') − f(z)⟩` on the grid and where it occurs.
    pub min_gap: f64,
    pub argmin: Option<Vec<f64>>,
    pub tol: f64,
}

/// `⟨y*, f(z)⟩ ≤ ⟨y*, f(z')⟩ + tol` for every feasible grid point `z'`.
pub fn check_proper_necessary(
    problem: &Problem,
    z: &[f64],
    c: &KktCertificate,
    grid: &FeasibleGrid,
    tol: f64,
) -> Result<ProperNecessary, KktError> {
    let fz = problem.objective_values(z).map_err(RobustError::from)?;
    let base: f64 = c.y_star.iter().zip(&fz).map(|(a, b)| a * b).sum();
    let mut min_gap = f64::INFINITY;
    let mut argmin = None;
    for (p, v) in grid.points.iter().zip(&grid.values) {
        let s: f64 = c.y_star.iter().zip(v).map(|(a, b)| a * b).sum();
        if s - base < min_gap {
            min_gap = s - base;
            argmin = Some(p.clone());
        }
    }
    Ok(ProperNecessary {
        holds: min_gap >= -tol,
        min_gap,
        argmin,
        tol,
    })
}
