//! Mond-Weir dual feasibility and the weak, strong and converse duality
//! relations, checked on grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convexity::{classify_type, ConvexityError, Sampler, Status, TypeReport};
use crate::efficiency::{
    certify_efficient, certify_weak, dominates, snapped_difference, strictly_dominates, EfficiencyError,
    EfficiencyReport, FeasibleGrid, FEASIBILITY_TOL,
};
use crate::expr::{eval, Point};
use crate::geometry::norm;
use crate::kkt::{check_cq, find_kkt_certificate, stationarity_distance, Clause, CqReport, KktCertificate, KktError, KktOptions, Mode};
use crate::problem::Problem;
use crate::robust::{active_uncertainty, is_robust_feasible, uncertainty_grid, RobustError, RobustOptions, ACTIVITY_TOL};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DualError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Kkt(#[from] KktError),
    #[error(transparent)]
    Robust(#[from] RobustError),
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error(transparent)]
    Convexity(#[from] ConvexityError),
}

/// A candidate `(y, y*, μ)` of the dual feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualTriple {
    pub y: Vec<f64>,
    pub y_star: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity_witnesses: Option<KktCertificate>,
}

impl DualTriple {
    pub fn new(y: &[f64], y_star: &[f64], mu: &[f64]) -> Self {
        DualTriple {
            y: y.to_vec(),
            y_star: y_star.to_vec(),
            mu: mu.to_vec(),
            stationarity_witnesses: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualOptions {
    pub tol: f64,
    /// Quantify the sign condition over the whole uncertainty grid instead of
    /// the active representatives.
    pub strict: bool,
    pub mode: Mode,
    pub robust: RobustOptions,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            tol: 1e-8,
            strict: false,
            mode: Mode::Outer,
            robust: RobustOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualFeasibility {
    pub feasible: bool,
    pub clauses: Vec<Clause>,
    /// Which `u` the sign condition ranged over.
    pub reading: String,
}

/// Dual feasibility. Multipliers are normalized to `‖y*‖ + ‖μ‖ = 1` first,
/// so the verdict does not depend on their scale.
pub fn is_dual_feasible(problem: &Problem, t: &DualTriple, opts: &DualOptions) -> Result<DualFeasibility, DualError> {
    let mut clauses = Vec::new();
    let dims = t.y.len() == problem.d && t.y_star.len() == problem.m && t.mu.len() == problem.n;
    clauses.push(Clause {
        name: "dimensions".into(),
        passed: dims,
        value: 0.0,
        tol: 0.0,
        detail: format!("y {} / y* {} / mu {}", t.y.len(), t.y_star.len(), t.mu.len()),
    });
    let reading = if opts.strict {
        "all uncertainty grid points".to_string()
    } else {
        "active uncertainty representatives".to_string()
    };
    if !dims {
        return Ok(DualFeasibility {
            feasible: false,
            clauses,
            reading,
        });
    }
    let s = norm(&t.y_star) + norm(&t.mu);
    let ys: Vec<f64> = t.y_star.iter().map(|v| if s > 0.0 { v / s } else { *v }).collect();
    let mu: Vec<f64> = t.mu.iter().map(|v| if s > 0.0 { v / s } else { *v }).collect();
    let ny = norm(&ys);
    clauses.push(Clause {
        name: "dual_cone".into(),
        passed: problem.cone.in_dual(&ys, 1e-12) && ny > opts.tol,
        value: ny,
        tol: opts.tol,
        detail: "y* in K+ \\ {0}".into(),
    });
    let min_mu = mu.iter().cloned().fold(f64::INFINITY, f64::min);
    clauses.push(Clause {
        name: "mu_nonnegative".into(),
        passed: mu.iter().all(|m| *m >= 0.0),
        value: if min_mu.is_finite() { min_mu } else { 0.0 },
        tol: 0.0,
        detail: "min_i mu_i".into(),
    });
    let dist = stationarity_distance(problem, &t.y, &ys, &mu, opts.mode, &opts.robust)?;
    clauses.push(Clause {
        name: "stationarity".into(),
        passed: dist <= opts.tol,
        value: dist,
        tol: opts.tol,
        detail: format!("distance from 0 to the {} stationarity set at y", opts.mode.as_str()),
    });
    let grid = uncertainty_grid(&problem.uncertainty, &opts.robust);
    let mut worst = f64::INFINITY;
    for (i, &mi) in mu.iter().enumerate() {
        if mi == 0.0 {
            continue;
        }
        let us: Vec<Vec<f64>> = if opts.strict {
            grid.clone()
        } else {
            active_uncertainty(problem, i, &t.y, ACTIVITY_TOL, &opts.robust)?
                .into_iter()
                .map(|c| c.representative)
                .collect()
        };
        for u in &us {
            let g = eval(&problem.constraints[i], &Point::with_uncertainty(&t.y, u)).map_err(RobustError::from)?;
            worst = worst.min(mi * g);
        }
    }
    let worst = if worst.is_finite() { worst } else { 0.0 };
    clauses.push(Clause {
        name: "sign".into(),
        passed: worst >= -opts.tol,
        value: worst,
        tol: opts.tol,
        detail: format!("min mu_i g_i(y, u) over {reading}"),
    });
    Ok(DualFeasibility {
        feasible: clauses.iter().all(|c| c.passed),
        clauses,
        reading,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeMode {
    /// `f(z) ⊀ f(y)`: no feasible `z` with `f(z) − f(y) ∈ −int K`.
    TypeI,
    /// `f(z) ⋠ f(y)`: no feasible `z` with `f(z) − f(y) ∈ −K \ {0}`.
    TypeII,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakDualityVerdict {
    pub mode: TypeMode,
    pub violations: usize,
    pub first_violation: Option<Vec<f64>>,
    pub checked: usize,
    pub grid: String,
}

impl WeakDualityVerdict {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// Compares every feasible grid point against the dual objective `f(t.y)`.
pub fn weak_duality_test(
    problem: &Problem,
    t: &DualTriple,
    grid: &FeasibleGrid,
    mode: TypeMode,
) -> Result<WeakDualityVerdict, DualError> {
    let fy = problem.objective_values(&t.y).map_err(RobustError::from)?;
    let mut violations = 0;
    let mut first = None;
    for (z, v) in grid.points.iter().zip(&grid.values) {
        let d = snapped_difference(v, &fy);
        let bad = match mode {
            TypeMode::TypeI => strictly_dominates(&problem.cone, &d),
            TypeMode::TypeII => dominates(&problem.cone, &d),
        };
        if bad {
            violations += 1;
            if first.is_none() {
                first = Some(z.clone());
            }
        }
    }
    Ok(WeakDualityVerdict {
        mode,
        violations,
        first_violation: first,
        checked: grid.points.len(),
        grid: grid.describe(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongDuality {
    pub triple: DualTriple,
    pub cq: CqReport,
    pub dual_feasibility: DualFeasibility,
    pub claim: String,
}

/// Dual triple `(z̄, y*, μ)` from a KKT certificate at a point where the
/// constraint qualification holds.
pub fn strong_duality_construct(
    problem: &Problem,
    zbar: &[f64],
    kkt: &KktOptions,
    dual: &DualOptions,
) -> Result<StrongDuality, DualError> {
    let cq = check_cq(problem, zbar, kkt.tol, &kkt.robust)?;
    if !cq.holds {
        return Err(DualError::Precondition("constraint qualification fails at the point".into()));
    }
    let search = find_kkt_certificate(
        problem,
        zbar,
        &KktOptions {
            fritz_john: false,
            ..kkt.clone()
        },
    )?;
    let c = search.certificate;
    let triple = DualTriple {
        y: zbar.to_vec(),
        y_star: c.y_star.clone(),
        mu: c.mu.clone(),
        stationarity_witnesses: Some(c),
    };
    let dual_feasibility = is_dual_feasible(problem, &triple, dual)?;
    Ok(StrongDuality {
        triple,
        cq,
        dual_feasibility,
        claim: "under type I pseudo convexity the triple is weakly efficient for the dual; under type II it is efficient"
            .into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    pub mode: TypeMode,
    pub hypothesis: TypeReport,
    /// Whether the convexity hypothesis of the chosen mode was not refuted.
    pub hypothesis_not_refuted: bool,
    pub oracle: EfficiencyReport,
    pub corroborated: bool,
}

/// For a dual-feasible triple with `t.y ∈ F`, checks the primal efficiency of
/// `t.y` on the grid.
pub fn converse_duality_check(
    problem: &Problem,
    t: &DualTriple,
    grid: &FeasibleGrid,
    mode: TypeMode,
    dual: &DualOptions,
    sampler: &Sampler,
) -> Result<ConverseReport, DualError> {
    if !is_robust_feasible(problem, &t.y, FEASIBILITY_TOL, &dual.robust)? {
        return Err(DualError::Precondition("t.y is not robust feasible".into()));
    }
    let feas = is_dual_feasible(problem, t, dual)?;
    if !feas.feasible {
        let failed: Vec<&str> = feas.clauses.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        return Err(DualError::Precondition(format!("triple is not dual feasible ({})", failed.join(", "))));
    }
    let hypothesis = classify_type(problem, &t.y, sampler)?;
    let hypothesis_not_refuted = match mode {
        TypeMode::TypeI => hypothesis.type_i == Status::NotRefuted,
        TypeMode::TypeII => hypothesis.type_ii == Status::NotRefuted,
    };
    let oracle = match mode {
        TypeMode::TypeI => certify_weak(problem, &t.y, grid)?,
        TypeMode::TypeII => certify_efficient(problem, &t.y, grid)?,
    };
    Ok(ConverseReport {
        mode,
        corroborated: oracle.holds(),
        hypothesis,
        hypothesis_not_refuted,
        oracle,
    })
}
