//! Certification toolkit for robust nonsmooth multiobjective programs.
pub mod convexity;
pub mod dual;
pub mod efficiency;
pub mod expr;
pub mod fixtures;
pub mod geometry;
pub mod kkt;
mod lp;
pub mod problem;
pub mod robust;
pub mod subdiff;

pub use convexity::{
    check_generalized_quasi_convex, check_pseudo_convex, check_strictly_pseudo_convex, classify_type, Sampler, Status,
    TypeReport, Verdict, Witness,
};
pub use dual::{
    converse_duality_check, is_dual_feasible, strong_duality_construct, weak_duality_test, DualOptions, DualTriple,
    TypeMode,
};
pub use efficiency::{
    certify_efficient, certify_proper, certify_weak, sufficient_conditions, Concept, EfficiencyReport, FeasibleGrid,
    GridStatus, SufficientOptions,
};
pub use expr::{eval, grad_smooth, kink_atoms, parse_expr, Compiled, EvalError, Expr, KinkAtom, ParseError, Point, Wrt};
pub use geometry::{Polytope, SubdiffSet};
pub use kkt::{
    check_cq, check_proper_necessary, find_kkt_certificate, verify_certificate, KktCertificate, KktError, KktOptions,
    Mode,
};
pub use problem::{load_problem, BoxDomain, ConeSpec, Problem, ProblemError, UncertaintySet};
pub use robust::{
    active_index_set, active_uncertainty, is_robust_feasible, psi, psi_all, worst_case_subdiff, RobustOptions,
};
pub use subdiff::{limiting_subdiff, scalarized_subdiff, SubdiffError};
