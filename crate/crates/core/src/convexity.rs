//! Sampling-based refutation of pseudo convexity of the objectives and
//! generalized quasi convexity of the constraints at a point.
//!
//! A check either finds a counterexample (with a witness that can be
//! re-validated by direct evaluation) or reports that none was found at the
//! sampling resolution. Nothing here proves convexity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{eval, Compiled, EvalError, Point, Wrt};
use crate::geometry::SubdiffSet;
use crate::kkt::Mode;
use crate::problem::{Problem, UncertaintySet};
use crate::subdiff::{limiting_subdiff, scalarized_subdiff, SubdiffError};

/// Conclusion `< 0` counts as violated once the value reaches this.
pub const STRICT_MARGIN: f64 = -1e-12;
/// Conclusion `≤ 0` counts as violated above this.
pub const QUASI_MARGIN: f64 = 1e-9;
const PREMISE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvexityError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Subdiff(#[from] SubdiffError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sampler {
    /// Number of decision-space samples.
    pub count: usize,
    pub seed: u64,
    /// Resolution of the `K⁺` direction grid (weights in multiples of 1/steps).
    pub ygrid: usize,
    /// Points per axis of the uncertainty grid used by the constraint check.
    pub ugrid: Option<usize>,
    pub mode: Mode,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler {
            count: 10_000,
            seed: 42,
            ygrid: 24,
            ugrid: None,
            mode: Mode::Outer,
        }
    }
}

impl Sampler {
    pub fn new(count: usize, seed: u64) -> Self {
        Sampler {
            count,
            seed,
            ..Default::default()
        }
    }

    fn lattice_per_axis(d: usize) -> usize {
        match d {
            0..=2 => 41,
            3 => 11,
            _ => 5,
        }
    }

    fn ugrid_per_axis(&self, p: usize) -> usize {
        self.ugrid.unwrap_or(match p {
            0 | 1 => 101,
            2 => 21,
            _ => 5,
        })
    }

    /// Decision samples: even indices walk a lattice of the box (while it
    /// lasts), the rest are uniform draws from a seeded stream. Any prefix
    /// of a longer run equals the shorter run.
    pub fn points(&self, problem: &Problem) -> Vec<Vec<f64>> {
        let d = problem.d;
        let per = Self::lattice_per_axis(d);
        let lattice = per.saturating_pow(d as u32);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let dom = &problem.domain;
        (0..self.count)
            .map(|k| {
                if k % 2 == 0 && k / 2 < lattice {
                    let mut idx = k / 2;
                    let mut z = vec![0.0; d];
                    for a in (0..d).rev() {
                        z[a] = dom.coord(a, idx % per, per);
                        idx /= per;
                    }
                    z
                } else {
                    (0..d)
                        .map(|a| {
                            let (lo, hi) = (dom.lower[a], dom.upper[a]);
                            if hi > lo {
                                rng.gen_range(lo..=hi)
                            } else {
                                lo
                            }
                        })
                        .collect()
                }
            })
            .collect()
    }

    fn uncertainty_points(&self, u: &UncertaintySet) -> Vec<Vec<f64>> {
        match u {
            UncertaintySet::Finite { points } => points.clone(),
            UncertaintySet::Box { lower, upper } => {
                let p = lower.len();
                let n = self.ugrid_per_axis(p).max(1);
                (0..n.pow(p as u32))
                    .map(|mut idx| {
                        let mut u = vec![0.0; p];
                        for a in (0..p).rev() {
                            let k = idx % n;
                            idx /= n;
                            u[a] = if n == 1 {
                                0.5 * (lower[a] + upper[a])
                            } else if k + 1 == n {
                                upper[a]
                            } else {
                                lower[a] + (upper[a] - lower[a]) * k as f64 / (n - 1) as f64
                            };
                        }
                        u
                    })
                    .collect()
            }
        }
    }

    pub fn describe(&self, problem: &Problem) -> String {
        format!(
            "{} decision samples (seed {}, lattice {} per axis interleaved with uniform draws), K+ grid step 1/{}, {} uncertainty points, {} objective set",
            self.count,
            self.seed,
            Self::lattice_per_axis(problem.d),
            self.ygrid,
            self.uncertainty_points(&problem.uncertainty).len(),
            self.mode.as_str()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Refuted,
    NotRefuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub sample: usize,
    pub z: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub y_star: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constraint: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub u: Option<Vec<f64>>,
    pub subgradient: Vec<f64>,
    pub inner_product: f64,
    pub premise_lhs: f64,
    pub premise_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub status: Status,
    pub witness: Option<Witness>,
    pub samples_used: usize,
    pub premises_met: usize,
    pub resolution: String,
}

impl Verdict {
    pub fn refuted(&self) -> bool {
        self.status == Status::Refuted
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Vertex of `s` maximizing `⟨v, dz⟩` (first in vertex order on ties).
fn support(s: &SubdiffSet, dz: &[f64]) -> (f64, Vec<f64>) {
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for v in s.vertices() {
        let h = dot(v, dz);
        if h > best.0 {
            best = (h, v.clone());
        }
    }
    best
}

/// Objective sets at `z̄`: per objective (outer) or per direction (exact).
enum ObjectiveSets {
    Outer(Vec<SubdiffSet>),
    Exact(Vec<SubdiffSet>),
}

impl ObjectiveSets {
    fn build(problem: &Problem, zbar: &[f64], dirs: &[Vec<f64>], mode: Mode) -> Result<Self, ConvexityError> {
        let pt = Point::decision(zbar);
        Ok(match mode {
            Mode::Outer => ObjectiveSets::Outer(
                problem
                    .objectives
                    .iter()
                    .map(|f| limiting_subdiff(f, &pt, Wrt::Decision))
                    .collect::<Result<_, _>>()?,
            ),
            Mode::Exact => ObjectiveSets::Exact(
                dirs.iter()
                    .map(|y| {
                        scalarized_subdiff(y, &problem.objectives, &pt).map(|s| s.exact.unwrap_or(s.outer))
                    })
                    .collect::<Result<_, _>>()?,
            ),
        })
    }
}

fn objective_check(problem: &Problem, zbar: &[f64], sampler: &Sampler, strict: bool) -> Result<Verdict, ConvexityError> {
    let dirs = problem.cone.dual_grid(sampler.ygrid);
    let sets = ObjectiveSets::build(problem, zbar, &dirs, sampler.mode)?;
    let fbar = problem.objective_values(zbar)?;
    let points = sampler.points(problem);
    let outcomes: Vec<Result<(usize, Option<Witness>), ConvexityError>> = points
        .par_iter()
        .enumerate()
        .map(|(k, z)| {
            let fz = problem.objective_values(z)?;
            let dz = sub(z, zbar);
            if strict && dz.iter().all(|x| *x == 0.0) {
                return Ok((0, None));
            }
            let per_obj: Vec<(f64, Vec<f64>)> = match &sets {
                ObjectiveSets::Outer(parts) => parts.iter().map(|s| support(s, &dz)).collect(),
                ObjectiveSets::Exact(_) => Vec::new(),
            };
            let mut met = 0;
            for (di, y) in dirs.iter().enumerate() {
                let lhs = dot(y, &fz);
                let rhs = dot(y, &fbar);
                let slack = PREMISE_SLACK * (1.0 + rhs.abs());
                let premise = if strict { lhs <= rhs + slack } else { lhs < rhs - slack };
                if !premise {
                    continue;
                }
                met += 1;
                let (h, v) = match &sets {
                    ObjectiveSets::Outer(_) => {
                        let mut v = vec![0.0; problem.d];
                        let mut h = 0.0;
                        for (yj, (hj, vj)) in y.iter().zip(&per_obj) {
                            if *yj == 0.0 {
                                continue;
                            }
                            h += yj * hj;
                            for t in 0..problem.d {
                                v[t] += yj * vj[t];
                            }
                        }
                        (h, v)
                    }
                    ObjectiveSets::Exact(per_dir) => support(&per_dir[di], &dz),
                };
                if h >= STRICT_MARGIN {
                    let inner = dot(&v, &dz);
                    return Ok((
                        met,
                        Some(Witness {
                            sample: k,
                            z: z.clone(),
                            y_star: Some(y.clone()),
                            constraint: None,
                            u: None,
                            subgradient: v,
                            inner_product: inner,
                            premise_lhs: lhs,
                            premise_rhs: rhs,
                        }),
                    ));
                }
            }
            Ok((met, None))
        })
        .collect();
    finish(outcomes, sampler.describe(problem))
}

fn finish(
    outcomes: Vec<Result<(usize, Option<Witness>), ConvexityError>>,
    resolution: String,
) -> Result<Verdict, ConvexityError> {
    let count = outcomes.len();
    let mut premises_met = 0;
    for (k, o) in outcomes.into_iter().enumerate() {
        let (met, w) = o?;
        premises_met += met;
        if let Some(w) = w {
            return Ok(Verdict {
                status: Status::Refuted,
                witness: Some(w),
                samples_used: k + 1,
                premises_met,
                resolution,
            });
        }
    }
    Ok(Verdict {
        status: Status::NotRefuted,
        witness: None,
        samples_used: count,
        premises_met,
        resolution,
    })
}

/// `⟨y*, f⟩(z) < ⟨y*, f⟩(z̄) ⟹ ⟨v*, z − z̄⟩ < 0` for all `v*` in the
/// scalarized objective set, over sampled `z` and the `K⁺` grid.
pub fn check_pseudo_convex(problem: &Problem, zbar: &[f64], sampler: &Sampler) -> Result<Verdict, ConvexityError> {
    objective_check(problem, zbar, sampler, false)
}

/// Non-strict premise, `z ≠ z̄`, `y* ≠ 0`.
pub fn check_strictly_pseudo_convex(problem: &Problem, zbar: &[f64], sampler: &Sampler) -> Result<Verdict, ConvexityError> {
    objective_check(problem, zbar, sampler, true)
}

/// `g_i(z, u) ≤ g_i(z̄, u) ⟹ ⟨u*, z − z̄⟩ ≤ 0` for all `u* ∈ ∂_z g_i(z̄, u)`.
pub fn check_generalized_quasi_convex(problem: &Problem, zbar: &[f64], sampler: &Sampler) -> Result<Verdict, ConvexityError> {
    let us = sampler.uncertainty_points(&problem.uncertainty);
    let compiled: Vec<Compiled> = problem.constraints.iter().map(Compiled::new).collect();
    // per (constraint, u): value and subdifferential at z̄
    let mut base = Vec::with_capacity(problem.n);
    for g in &problem.constraints {
        let mut row = Vec::with_capacity(us.len());
        for u in &us {
            let pt = Point::with_uncertainty(zbar, u);
            row.push((eval(g, &pt)?, limiting_subdiff(g, &pt, Wrt::Decision)?));
        }
        base.push(row);
    }
    let points = sampler.points(problem);
    let outcomes: Vec<Result<(usize, Option<Witness>), ConvexityError>> = points
        .par_iter()
        .enumerate()
        .map(|(k, z)| {
            let dz = sub(z, zbar);
            let mut met = 0;
            for (i, c) in compiled.iter().enumerate() {
                for (ui, u) in us.iter().enumerate() {
                    let lhs = c.eval(z, Some(u))?;
                    let (rhs, set) = &base[i][ui];
                    if lhs > rhs + PREMISE_SLACK * (1.0 + rhs.abs()) {
                        continue;
                    }
                    met += 1;
                    let (h, v) = support(set, &dz);
                    if h > QUASI_MARGIN {
                        return Ok((
                            met,
                            Some(Witness {
                                sample: k,
                                z: z.clone(),
                                y_star: None,
                                constraint: Some(i),
                                u: Some(u.clone()),
                                subgradient: v,
                                inner_product: h,
                                premise_lhs: lhs,
                                premise_rhs: *rhs,
                            }),
                        ));
                    }
                }
            }
            Ok((met, None))
        })
        .collect();
    finish(outcomes, sampler.describe(problem))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    PseudoConvex,
    StrictlyPseudoConvex,
    GeneralizedQuasiConvex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeReport {
    pub type_i: Status,
    pub type_ii: Status,
    /// First failing clause for each type.
    pub type_i_refuted_by: Option<Clause>,
    pub type_ii_refuted_by: Option<Clause>,
    pub pseudo_convex: Verdict,
    pub strictly_pseudo_convex: Verdict,
    pub generalized_quasi_convex: Verdict,
}

impl TypeReport {
    pub fn summary(&self) -> &'static str {
        match (self.type_i, self.type_ii) {
            (_, Status::NotRefuted) => "type II not refuted",
            (Status::NotRefuted, _) => "type I not refuted",
            _ => "refuted",
        }
    }
}

/// Both joint types from the three sub-checks.
pub fn classify_type(problem: &Problem, zbar: &[f64], sampler: &Sampler) -> Result<TypeReport, ConvexityError> {
    let pc = check_pseudo_convex(problem, zbar, sampler)?;
    let spc = check_strictly_pseudo_convex(problem, zbar, sampler)?;
    let gqc = check_generalized_quasi_convex(problem, zbar, sampler)?;
    let first = |obj: &Verdict, which: Clause| {
        if obj.refuted() {
            Some(which)
        } else if gqc.refuted() {
            Some(Clause::GeneralizedQuasiConvex)
        } else {
            None
        }
    };
    let t1 = first(&pc, Clause::PseudoConvex);
    let t2 = first(&spc, Clause::StrictlyPseudoConvex);
    let st = |r: &Option<Clause>| if r.is_some() { Status::Refuted } else { Status::NotRefuted };
    Ok(TypeReport {
        type_i: st(&t1),
        type_ii: st(&t2),
        type_i_refuted_by: t1,
        type_ii_refuted_by: t2,
        pseudo_convex: pc,
        strictly_pseudo_convex: spc,
        generalized_quasi_convex: gqc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Revalidation {
    pub premise_holds: bool,
    pub subgradient_in_set: bool,
    pub conclusion_violated: bool,
    pub inner_product: f64,
    pub premise_lhs: f64,
    pub premise_rhs: f64,
}

impl Revalidation {
    pub fn confirmed(&self) -> bool {
        self.premise_holds && self.subgradient_in_set && self.conclusion_violated
    }
}

/// Re-checks an objective witness from raw evaluation and subdifferential
/// calls. `strict` selects the non-strict premise of strict pseudo convexity.
pub fn revalidate_objective_witness(
    problem: &Problem,
    zbar: &[f64],
    w: &Witness,
    strict: bool,
    mode: Mode,
) -> Result<Revalidation, ConvexityError> {
    let y = w.y_star.clone().unwrap_or_default();
    let fz = problem.objective_values(&w.z)?;
    let fbar = problem.objective_values(zbar)?;
    let (lhs, rhs) = (dot(&y, &fz), dot(&y, &fbar));
    let slack = PREMISE_SLACK * (1.0 + rhs.abs());
    let nonzero = y.iter().any(|v| *v != 0.0) && w.z.iter().zip(zbar).any(|(a, b)| a != b);
    let premise_holds = if strict {
        nonzero && lhs <= rhs + slack
    } else {
        lhs < rhs - slack
    };
    let pt = Point::decision(zbar);
    let s = scalarized_subdiff(&y, &problem.objectives, &pt)?;
    let set = match mode {
        Mode::Outer => s.outer,
        Mode::Exact => s.exact.unwrap_or(s.outer),
    };
    let inner = dot(&w.subgradient, &sub(&w.z, zbar));
    Ok(Revalidation {
        premise_holds,
        subgradient_in_set: set.contains(&w.subgradient, 1e-9),
        conclusion_violated: inner >= STRICT_MARGIN,
        inner_product: inner,
        premise_lhs: lhs,
        premise_rhs: rhs,
    })
}

/// Re-checks a constraint witness.
pub fn revalidate_constraint_witness(problem: &Problem, zbar: &[f64], w: &Witness) -> Result<Revalidation, ConvexityError> {
    let i = w.constraint.unwrap_or(0);
    let u = w.u.clone().unwrap_or_default();
    let g = &problem.constraints[i];
    let lhs = eval(g, &Point::with_uncertainty(&w.z, &u))?;
    let rhs = eval(g, &Point::with_uncertainty(zbar, &u))?;
    let set = limiting_subdiff(g, &Point::with_uncertainty(zbar, &u), Wrt::Decision)?;
    let inner = dot(&w.subgradient, &sub(&w.z, zbar));
    Ok(Revalidation {
        premise_holds: lhs <= rhs + PREMISE_SLACK * (1.0 + rhs.abs()),
        subgradient_in_set: set.contains(&w.subgradient, 1e-9),
        conclusion_violated: inner > QUASI_MARGIN,
        inner_product: inner,
        premise_lhs: lhs,
        premise_rhs: rhs,
    })
}
