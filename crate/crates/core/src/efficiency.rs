//! Grid certification of robust efficiency and the sufficient-condition
//! pipeline built on KKT certificates and the convexity checks.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::convexity::{classify_type, ConvexityError, Sampler, Status, TypeReport};
use crate::expr::EvalError;
use crate::geometry::norm;
use crate::kkt::{find_kkt_certificate, verify_certificate, KktCertificate, KktError, KktOptions, KktSearch, INTERIOR_MARGIN};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::problem::{BoxDomain, ConeSpec, Problem};
use crate::robust::{is_robust_feasible, RobustError, RobustOptions};

/// Differences below this are treated as exact zeros.
pub const DOMINANCE_TOL: f64 = 1e-9;
/// Robust feasibility tolerance on `max ψ`.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EfficiencyError {
    #[error("point is not robust feasible")]
    Infeasible,
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl From<EfficiencyError> for KktError {
    fn from(e: EfficiencyError) -> Self {
        match e {
            EfficiencyError::Infeasible => KktError::Infeasible { max_psi: f64::NAN },
            EfficiencyError::Robust(r) => KktError::Robust(r),
            EfficiencyError::Eval(r) => KktError::Robust(RobustError::Eval(r)),
        }
    }
}

/// Robust-feasible points of a box grid with their objective values, in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibleGrid {
    pub per_axis: usize,
    pub domain: BoxDomain,
    pub total: usize,
    #[serde(skip)]
    pub points: Vec<Vec<f64>>,
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
    pub tol: f64,
    pub robust: RobustOptions,
}

impl FeasibleGrid {
    pub fn build(problem: &Problem, per_axis: usize, robust: &RobustOptions) -> Result<Self, EfficiencyError> {
        let d = problem.d;
        let n = per_axis.max(1);
        let total = n.pow(d as u32);
        let all: Vec<Vec<f64>> = (0..total)
            .map(|mut idx| {
                let mut z = vec![0.0; d];
                for a in (0..d).rev() {
                    z[a] = problem.domain.coord(a, idx % n, n);
                    idx /= n;
                }
                z
            })
            .collect();
        Self::from_points(problem, all, n, robust)
    }

    /// Same filtering for an explicit point list.
    pub fn from_points(
        problem: &Problem,
        candidates: Vec<Vec<f64>>,
        per_axis: usize,
        robust: &RobustOptions,
    ) -> Result<Self, EfficiencyError> {
        let total = candidates.len();
        let kept: Vec<Result<Option<(Vec<f64>, Vec<f64>)>, EfficiencyError>> = candidates
            .into_par_iter()
            .map(|z| {
                if is_robust_feasible(problem, &z, FEASIBILITY_TOL, robust)? {
                    let v = problem.objective_values(&z)?;
                    Ok(Some((z, v)))
                } else {
                    Ok(None)
                }
            })
            .collect();
        let mut points = Vec::new();
        let mut values = Vec::new();
        for k in kept {
            if let Some((z, v)) = k? {
                points.push(z);
                values.push(v);
            }
        }
        Ok(FeasibleGrid {
            per_axis,
            domain: problem.domain.clone(),
            total,
            points,
            values,
            tol: FEASIBILITY_TOL,
            robust: robust.clone(),
        })
    }

    pub fn feasible(&self) -> usize {
        self.points.len()
    }

    pub fn describe(&self) -> String {
        let axes: Vec<String> = self
            .domain
            .lower
            .iter()
            .zip(&self.domain.upper)
            .map(|(a, b)| format!("[{a}, {b}]"))
            .collect();
        format!(
            "{} per axis over {}: {} of {} points robust feasible (max psi <= {:e})",
            self.per_axis,
            axes.join(" x "),
            self.points.len(),
            self.total,
            self.tol
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    Weak,
    Efficient,
    Proper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GridStatus {
    HoldsOnGrid,
    Refuted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub concept: Concept,
    pub status: GridStatus,
    pub dominating_point: Option<Vec<f64>>,
    /// `f(z) − f(z̄)` at the dominating point, after zero snapping.
    pub difference: Option<Vec<f64>>,
    pub proper_multiplier: Option<Vec<f64>>,
    /// Largest interior margin the multiplier LP achieved.
    pub margin: Option<f64>,
    pub reason: Option<String>,
    pub grid: String,
    pub tol: f64,
}

impl EfficiencyReport {
    pub fn holds(&self) -> bool {
        self.status == GridStatus::HoldsOnGrid
    }

    fn holds_with(concept: Concept, grid: &FeasibleGrid) -> Self {
        EfficiencyReport {
            concept,
            status: GridStatus::HoldsOnGrid,
            dominating_point: None,
            difference: None,
            proper_multiplier: None,
            margin: None,
            reason: None,
            grid: grid.describe(),
            tol: DOMINANCE_TOL,
        }
    }
}

/// `a − b` with entries of magnitude at most `DOMINANCE_TOL` set to zero.
pub fn snapped_difference(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            if d.abs() <= DOMINANCE_TOL {
                0.0
            } else {
                d
            }
        })
        .collect()
}

/// `d ∈ −int K`.
pub fn strictly_dominates(cone: &ConeSpec, d: &[f64]) -> bool {
    cone.in_neg_interior(d, DOMINANCE_TOL)
}

/// `d ∈ −K \ {0}`.
pub fn dominates(cone: &ConeSpec, d: &[f64]) -> bool {
    norm(d) > 0.0 && cone.in_neg_cone(d, DOMINANCE_TOL)
}

fn check_point(problem: &Problem, zbar: &[f64], robust: &RobustOptions) -> Result<Vec<f64>, EfficiencyError> {
    if !is_robust_feasible(problem, zbar, FEASIBILITY_TOL, robust)? {
        return Err(EfficiencyError::Infeasible);
    }
    Ok(problem.objective_values(zbar)?)
}

fn scan(
    problem: &Problem,
    zbar: &[f64],
    grid: &FeasibleGrid,
    concept: Concept,
    test: impl Fn(&ConeSpec, &[f64]) -> bool + Sync,
) -> Result<EfficiencyReport, EfficiencyError> {
    let fbar = check_point(problem, zbar, &grid.robust)?;
    let hit = grid.values.par_iter().position_first(|v| test(&problem.cone, &snapped_difference(v, &fbar)));
    Ok(match hit {
        None => EfficiencyReport::holds_with(concept, grid),
        Some(k) => EfficiencyReport {
            status: GridStatus::Refuted,
            dominating_point: Some(grid.points[k].clone()),
            difference: Some(snapped_difference(&grid.values[k], &fbar)),
            reason: Some("dominated by a feasible grid point".into()),
            ..EfficiencyReport::holds_with(concept, grid)
        },
    })
}

/// No feasible grid point with `f(z) − f(z̄) ∈ −int K`.
pub fn certify_weak(problem: &Problem, zbar: &[f64], grid: &FeasibleGrid) -> Result<EfficiencyReport, EfficiencyError> {
    scan(problem, zbar, grid, Concept::Weak, strictly_dominates)
}

/// No feasible grid point with `f(z) − f(z̄) ∈ −K \ {0}`.
pub fn certify_efficient(problem: &Problem, zbar: &[f64], grid: &FeasibleGrid) -> Result<EfficiencyReport, EfficiencyError> {
    scan(problem, zbar, grid, Concept::Efficient, dominates)
}

/// Looks for `y* ∈ int K⁺` with `⟨y*, f(z) − f(z̄)⟩ ≥ 0` on the grid. The
/// LP maximizes the smallest normalized generator margin; the claim holds
/// when that margin reaches `eps`.
pub fn certify_proper(
    problem: &Problem,
    zbar: &[f64],
    grid: &FeasibleGrid,
    eps: f64,
) -> Result<EfficiencyReport, EfficiencyError> {
    let eff = certify_efficient(problem, zbar, grid)?;
    if !eff.holds() {
        return Ok(EfficiencyReport {
            concept: Concept::Proper,
            reason: Some("not efficient on the grid".into()),
            ..eff
        });
    }
    let fbar = problem.objective_values(zbar)?;
    let m = problem.m;
    let rays: Vec<Vec<f64>> = match &problem.cone {
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
    };
    let orthant = matches!(problem.cone, ConeSpec::Orthant { .. });
    let diffs: Vec<Vec<f64>> = grid
        .values
        .iter()
        .map(|v| snapped_difference(v, &fbar))
        .filter(|d| !(orthant && d.iter().all(|x| *x >= 0.0)))
        .collect();
    let mut lp = LinearProgram::maximize();
    let t = lp.var(1.0, f64::NEG_INFINITY, 1.0);
    let y: Vec<usize> = (0..m).map(|_| lp.var(0.0, f64::NEG_INFINITY, f64::INFINITY)).collect();
    let mut total = vec![0.0; m];
    for r in &rays {
        let mut row: Vec<(usize, f64)> = y.iter().zip(r).map(|(&v, c)| (v, *c)).collect();
        row.push((t, -1.0));
        lp.row(row, Cmp::Ge, 0.0);
        for j in 0..m {
            total[j] += r[j];
        }
    }
    lp.row(y.iter().zip(&total).map(|(&v, c)| (v, *c)).collect(), Cmp::Eq, 1.0);
    for d in &diffs {
        lp.row(y.iter().zip(d).map(|(&v, c)| (v, *c)).collect(), Cmp::Ge, 0.0);
    }
    let base = EfficiencyReport::holds_with(Concept::Proper, grid);
    let (objective, values) = match lp.solve() {
        LpOutcome::Optimal { objective, values } => (objective, values),
        _ => {
            return Ok(EfficiencyReport {
                status: GridStatus::Refuted,
                reason: Some("no multiplier in K+ separates the grid differences".into()),
                ..base
            })
        }
    };
    let ys: Vec<f64> = y.iter().map(|&v| values[v]).collect();
    let ny = norm(&ys);
    let unit: Vec<f64> = ys.iter().map(|v| v / ny).collect();
    let margin = problem.cone.dual_margin(&unit);
    let worst = diffs
        .iter()
        .map(|d| d.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    if objective > 0.0 && margin >= eps && (diffs.is_empty() || worst >= -DOMINANCE_TOL) {
        Ok(EfficiencyReport {
            proper_multiplier: Some(unit),
            margin: Some(margin),
            ..base
        })
    } else {
        Ok(EfficiencyReport {
            status: GridStatus::Refuted,
            margin: Some(margin),
            reason: Some(format!("best interior margin {margin:e} is below {eps:e}")),
            ..base
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientOptions {
    pub kkt: KktOptions,
    pub sampler: Sampler,
    pub grid_per_axis: usize,
    pub interior_margin: f64,
}

impl Default for SufficientOptions {
    fn default() -> Self {
        SufficientOptions {
            kkt: KktOptions::default(),
            sampler: Sampler::default(),
            grid_per_axis: 101,
            interior_margin: INTERIOR_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Conclusion {
    pub concept: Concept,
    pub rule: String,
    /// False when the grid oracle refutes the conclusion.
    pub oracle_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleVerdicts {
    pub weak: EfficiencyReport,
    pub efficient: EfficiencyReport,
    pub proper: EfficiencyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SufficientReport {
    pub kkt: Option<KktSearch>,
    pub kkt_error: Option<String>,
    pub kkt_verified: bool,
    pub interior_certificate: Option<KktCertificate>,
    pub convexity: TypeReport,
    pub conclusions: Vec<Conclusion>,
    pub strongest: Option<Concept>,
    pub oracle: OracleVerdicts,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SufficientError {
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error(transparent)]
    Convexity(#[from] ConvexityError),
    #[error(transparent)]
    Kkt(#[from] KktError),
}

/// Oracle verdicts for all three concepts on one grid.
pub fn oracle_verdicts(problem: &Problem, zbar: &[f64], grid: &FeasibleGrid, eps: f64) -> Result<OracleVerdicts, EfficiencyError> {
    Ok(OracleVerdicts {
        weak: certify_weak(problem, zbar, grid)?,
        efficient: certify_efficient(problem, zbar, grid)?,
        proper: certify_proper(problem, zbar, grid, eps)?,
    })
}

/// Runs KKT search and the convexity checks, then reports every conclusion
/// they license next to the grid oracle.
pub fn sufficient_conditions(
    problem: &Problem,
    zbar: &[f64],
    opts: &SufficientOptions,
    grid: &FeasibleGrid,
) -> Result<SufficientReport, SufficientError> {
    let oracle = oracle_verdicts(problem, zbar, grid, opts.interior_margin)?;
    let convexity = classify_type(problem, zbar, &opts.sampler)?;
    let (kkt, kkt_error) = match find_kkt_certificate(problem, zbar, &opts.kkt) {
        Ok(s) => (Some(s), None),
        Err(KktError::NotFoundAtResolution { min_residual, directions }) => (
            None,
            Some(format!(
                "no certificate at resolution {directions} directions (smallest residual {min_residual:e})"
            )),
        ),
        Err(KktError::Infeasible { max_psi }) => (None, Some(format!("point is not robust feasible (max psi = {max_psi:e})"))),
        Err(e) => return Err(e.into()),
    };
    let mut kkt_verified = false;
    let mut interior_certificate = None;
    if let Some(s) = &kkt {
        if !s.certificate.fritz_john {
            kkt_verified = verify_certificate(problem, zbar, &s.certificate, opts.kkt.tol, &opts.kkt.robust)?.passed;
            let interior = KktOptions {
                interior_margin: Some(opts.interior_margin),
                fritz_john: false,
                ..opts.kkt.clone()
            };
            if let Ok(si) = find_kkt_certificate(problem, zbar, &interior) {
                if verify_certificate(problem, zbar, &si.certificate, opts.kkt.tol, &opts.kkt.robust)?.passed {
                    interior_certificate = Some(si.certificate);
                }
            }
        }
    }
    let mut conclusions = Vec::new();
    let t1 = convexity.type_i == Status::NotRefuted;
    let t2 = convexity.type_ii == Status::NotRefuted;
    let mut push = |concept, rule: &str, report: &EfficiencyReport| {
        conclusions.push(Conclusion {
            concept,
            rule: rule.into(),
            oracle_agrees: report.holds(),
        })
    };
    if kkt_verified && t1 {
        push(Concept::Weak, "robust KKT + type I pseudo convexity => weakly robust efficient", &oracle.weak);
    }
    if kkt_verified && t2 {
        push(Concept::Efficient, "robust KKT + type II pseudo convexity => robust efficient", &oracle.efficient);
    }
    if interior_certificate.is_some() && t1 {
        push(
            Concept::Proper,
            "robust KKT with y* in int K+ + type I pseudo convexity => properly robust efficient",
            &oracle.proper,
        );
    }
    let strongest = conclusions.iter().map(|c| c.concept).max_by_key(|c| match c {
        Concept::Weak => 0,
        Concept::Efficient => 1,
        Concept::Proper => 2,
    });
    Ok(SufficientReport {
        kkt,
        kkt_error,
        kkt_verified,
        interior_certificate,
        convexity,
        conclusions,
        strongest,
        oracle,
    })
}
