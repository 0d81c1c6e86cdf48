//! Limiting subdifferentials of expressions at a point.
//!
//! An expression is reduced to a local model: a smooth gradient plus a list
//! of active kink terms, each an abs or max atom with a scalar coefficient.
//! The subdifferential is the gradient translated by the Minkowski sum of the
//! per-term sets.

use thiserror::Error;

use crate::expr::{eval, pow_value, sqrt_value, EvalError, Expr, Point, Wrt, KINK_TOL};
use crate::geometry::{GeometryError, Polytope, SubdiffSet};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubdiffError {
    #[error("unsupported composition ({reason}): `{}`", .subtrees.join("`, `"))]
    UnsupportedComposition {
        reason: String,
        subtrees: Vec<String>,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn unsupported(reason: &str, subtrees: &[&Expr]) -> SubdiffError {
    SubdiffError::UnsupportedComposition {
        reason: reason.to_string(),
        subtrees: subtrees.iter().map(|e| e.to_string()).collect(),
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// `|a|` at a zero of `a`, storing `∇a`.
    Abs(Vec<f64>),
    /// `max(a_1, ..)` with several active branches, storing their gradients.
    Max(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
struct Term {
    key: String,
    kind: Kind,
    coef: f64,
    vars: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Local {
    value: f64,
    grad: Vec<f64>,
    terms: Vec<Term>,
}

impl Local {
    fn constant(value: f64, n: usize) -> Self {
        Local {
            value,
            grad: vec![0.0; n],
            terms: Vec::new(),
        }
    }

    fn smooth(&self) -> bool {
        self.terms.is_empty()
    }

    /// Multiply gradient and kink coefficients by `c`; the value is set by the
    /// caller.
    fn scaled(mut self, c: f64, value: f64) -> Self {
        for g in self.grad.iter_mut() {
            *g *= c;
        }
        for t in self.terms.iter_mut() {
            t.coef *= c;
        }
        self.value = value;
        self
    }

    fn plus(mut self, other: Local, sign: f64) -> Self {
        for (g, h) in self.grad.iter_mut().zip(&other.grad) {
            *g += sign * h;
        }
        for mut t in other.terms {
            t.coef *= sign;
            merge_term(&mut self.terms, t);
        }
        self.value += sign * other.value;
        self
    }
}

fn merge_term(terms: &mut Vec<Term>, t: Term) {
    if let Some(pos) = terms.iter().position(|s| s.key == t.key) {
        let old = terms[pos].coef;
        let sum = old + t.coef;
        if sum == 0.0 || sum.abs() <= 1e-14 * (old.abs() + t.coef.abs()) {
            terms.remove(pos);
        } else {
            terms[pos].coef = sum;
        }
    } else if t.coef != 0.0 {
        terms.push(t);
    }
}

fn block_len(pt: &Point, wrt: Wrt) -> usize {
    match wrt {
        Wrt::Decision => pt.z.len(),
        Wrt::Uncertainty => pt.u.as_ref().map_or(0, |u| u.len()),
    }
}

fn local(e: &Expr, pt: &Point, wrt: Wrt, n: usize) -> Result<Local, SubdiffError> {
    if !e.depends_on(wrt) {
        return Ok(Local::constant(eval(e, pt)?, n));
    }
    Ok(match e {
        Expr::Const(_) => unreachable!("constants do not depend on variables"),
        Expr::Z(k) | Expr::U(k) => {
            let mut l = Local::constant(eval(e, pt)?, n);
            l.grad[*k] = 1.0;
            l
        }
        Expr::Add(a, b) => local(a, pt, wrt, n)?.plus(local(b, pt, wrt, n)?, 1.0),
        Expr::Sub(a, b) => local(a, pt, wrt, n)?.plus(local(b, pt, wrt, n)?, -1.0),
        Expr::Neg(a) => {
            let la = local(a, pt, wrt, n)?;
            let v = -la.value;
            la.scaled(-1.0, v)
        }
        Expr::Mul(a, b) => {
            let (la, lb) = (local(a, pt, wrt, n)?, local(b, pt, wrt, n)?);
            if !la.smooth() && !lb.smooth() {
                return Err(unsupported("product of two nonsmooth factors", &[a, b]));
            }
            let (va, vb) = (la.value, lb.value);
            let v = va * vb;
            la.scaled(vb, 0.0).plus(lb.scaled(va, 0.0), 1.0).with_value(v)
        }
        Expr::Div(a, b) => {
            let (la, lb) = (local(a, pt, wrt, n)?, local(b, pt, wrt, n)?);
            let v = crate::expr::div_value(e, la.value, lb.value)?;
            if !la.smooth() && !lb.smooth() {
                return Err(unsupported("quotient of two nonsmooth factors", &[a, b]));
            }
            let (va, vb) = (la.value, lb.value);
            la.scaled(1.0 / vb, 0.0)
                .plus(lb.scaled(-va / (vb * vb), 0.0), 1.0)
                .with_value(v)
        }
        Expr::Pow(a, k) => {
            let la = local(a, pt, wrt, n)?;
            let v = pow_value(e, la.value, *k)?;
            let d = if *k == 0 { 0.0 } else { *k as f64 * la.value.powi(k - 1) };
            la.scaled(d, v)
        }
        Expr::Sqrt(a) => {
            let la = local(a, pt, wrt, n)?;
            let v = sqrt_value(e, la.value)?;
            if v == 0.0 {
                return Err(unsupported("square root of a vanishing argument", &[e]));
            }
            la.scaled(0.5 / v, v)
        }
        Expr::Abs(a) => {
            let la = local(a, pt, wrt, n)?;
            let va = la.value;
            if va.abs() > KINK_TOL {
                let s = if va < 0.0 { -1.0 } else { 1.0 };
                la.scaled(s, va.abs())
            } else if !la.smooth() {
                return Err(unsupported("abs of a nonsmooth argument at its kink", &[e]));
            } else {
                Local {
                    value: va.abs(),
                    grad: vec![0.0; n],
                    terms: vec![Term {
                        key: e.to_string(),
                        kind: Kind::Abs(la.grad),
                        coef: 1.0,
                        vars: a.variables(wrt),
                    }],
                }
            }
        }
        Expr::Max(args) | Expr::Min(args) => {
            let is_max = matches!(e, Expr::Max(_));
            let vals = args.iter().map(|a| eval(a, pt)).collect::<Result<Vec<_>, _>>()?;
            let best = eval(e, pt)?;
            let active: Vec<usize> = (0..args.len())
                .filter(|&i| (vals[i] - best).abs() <= KINK_TOL)
                .collect();
            if active.len() == 1 {
                return local(&args[active[0]], pt, wrt, n);
            }
            let locals = active
                .iter()
                .map(|&i| local(&args[i], pt, wrt, n))
                .collect::<Result<Vec<_>, _>>()?;
            if locals.iter().any(|l| !l.smooth()) {
                let culprits: Vec<&Expr> = active
                    .iter()
                    .zip(&locals)
                    .filter(|(_, l)| !l.smooth())
                    .map(|(&i, _)| &args[i])
                    .collect();
                return Err(unsupported("max/min with a nonsmooth active branch", &culprits));
            }
            let first = &locals[0].grad;
            if locals.iter().all(|l| l.grad == *first) {
                return Ok(Local {
                    value: best,
                    grad: first.clone(),
                    terms: Vec::new(),
                });
            }
            let sign = if is_max { 1.0 } else { -1.0 };
            let grads = locals
                .iter()
                .map(|l| l.grad.iter().map(|g| sign * g).collect())
                .collect();
            let vars = {
                let mut v: Vec<usize> = active.iter().flat_map(|&i| args[i].variables(wrt)).collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            Local {
                value: best,
                grad: vec![0.0; n],
                terms: vec![Term {
                    key: e.to_string(),
                    kind: Kind::Max(grads),
                    coef: sign,
                    vars,
                }],
            }
        }
    })
}

impl Local {
    fn with_value(mut self, v: f64) -> Self {
        self.value = v;
        self
    }
}

fn term_set(t: &Term) -> SubdiffSet {
    let c = t.coef;
    match &t.kind {
        Kind::Abs(g) => {
            let a: Vec<f64> = g.iter().map(|x| c * x).collect();
            let neg: Vec<f64> = a.iter().map(|x| -x).collect();
            if c >= 0.0 {
                SubdiffSet::from_polytope(Polytope::new(vec![neg, a]).unwrap())
            } else {
                SubdiffSet::new(vec![Polytope::point(a), Polytope::point(neg)]).unwrap()
            }
        }
        Kind::Max(grads) => {
            let scaled: Vec<Vec<f64>> = grads
                .iter()
                .map(|g| g.iter().map(|x| c * x).collect())
                .collect();
            let hull = Polytope::new(scaled).unwrap().reduced();
            if c >= 0.0 {
                SubdiffSet::from_polytope(hull)
            } else {
                // extreme points of the hull are exactly the essentially
                // active branches
                let pieces = hull.vertices().iter().cloned().map(Polytope::point).collect();
                SubdiffSet::new(pieces).unwrap()
            }
        }
    }
}

fn model_to_set(l: &Local) -> Result<SubdiffSet, SubdiffError> {
    let mut set = SubdiffSet::singleton(l.grad.clone());
    for t in &l.terms {
        set = set.minkowski_sum(&term_set(t))?;
    }
    let mut outer = false;
    for (i, t) in l.terms.iter().enumerate() {
        for s in &l.terms[i + 1..] {
            let shared = t.vars.iter().any(|v| s.vars.contains(v));
            if shared && (t.coef < 0.0 || s.coef < 0.0) {
                outer = true;
            }
        }
    }
    Ok(set.with_outer_flag(outer))
}

/// Limiting subdifferential of `e` at `pt` with respect to one block of
/// variables, the other block held fixed at its value in `pt`.
pub fn limiting_subdiff(e: &Expr, pt: &Point, wrt: Wrt) -> Result<SubdiffSet, SubdiffError> {
    let n = block_len(pt, wrt);
    let l = local(e, pt, wrt, n)?;
    model_to_set(&l)
}

/// Subdifferential of a weighted sum of objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalarized {
    /// Subdifferential of the combined expression, when supported.
    pub exact: Option<SubdiffSet>,
    /// Sum-rule outer set `Σ y_j ∂f_j`.
    pub outer: SubdiffSet,
}

/// Sum-rule outer set from precomputed per-objective subdifferentials.
pub fn outer_scalarization(y: &[f64], parts: &[SubdiffSet], dim: usize) -> SubdiffSet {
    let mut acc = SubdiffSet::singleton(vec![0.0; dim]);
    for (yj, s) in y.iter().zip(parts) {
        if *yj == 0.0 {
            continue;
        }
        acc = acc.minkowski_sum(&s.scale(*yj)).expect("matching dimensions");
    }
    acc
}

pub fn scalarized_subdiff(y: &[f64], f: &[Expr], pt: &Point) -> Result<Scalarized, SubdiffError> {
    let dim = pt.z.len();
    let parts = f
        .iter()
        .map(|fj| limiting_subdiff(fj, pt, Wrt::Decision))
        .collect::<Result<Vec<_>, _>>()?;
    let outer = outer_scalarization(y, &parts, dim);
    let combined = Expr::linear_combination(y, f);
    let exact = match limiting_subdiff(&combined, pt, Wrt::Decision) {
        Ok(s) => Some(s),
        Err(SubdiffError::UnsupportedComposition { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Scalarized { exact, outer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn sd(s: &str, z: &[f64]) -> SubdiffSet {
        let e = parse_expr(s, z.len(), 1).unwrap();
        limiting_subdiff(&e, &Point::decision(z), Wrt::Decision).unwrap()
    }

    fn poly(vs: &[&[f64]]) -> Polytope {
        Polytope::new(vs.iter().map(|v| v.to_vec()).collect()).unwrap()
    }

    #[test]
    fn convex_and_concave_kinks() {
        assert_eq!(sd("abs(z1)", &[0.0]), SubdiffSet::from_polytope(poly(&[&[-1.0], &[1.0]])));
        let neg = sd("-abs(z1)", &[0.0]);
        assert_eq!(
            neg,
            SubdiffSet::new(vec![poly(&[&[-1.0]]), poly(&[&[1.0]])]).unwrap()
        );
        assert!(!neg.outer_estimate);
    }

    #[test]
    fn first_objective_example() {
        let s = sd("-2*z1 + abs(z2 - 1)", &[0.0, 1.0]);
        assert_eq!(s, SubdiffSet::from_polytope(poly(&[&[-2.0, -1.0], &[-2.0, 1.0]])));
    }

    #[test]
    fn kink_in_scaled_abs() {
        let s = sd("1/2*abs(z1) + 3*z2 + 6", &[0.0, -2.0]);
        assert_eq!(s, SubdiffSet::from_polytope(poly(&[&[-0.5, 3.0], &[0.5, 3.0]])));
    }

    #[test]
    fn smooth_functions_of_kinks() {
        // reciprocal of a convex kink turns it concave
        let s = sd("1/(abs(z1) + 1) - 3*z2 + 2", &[0.0, 1.0]);
        assert_eq!(
            s,
            SubdiffSet::new(vec![poly(&[&[-1.0, -3.0]]), poly(&[&[1.0, -3.0]])]).unwrap()
        );
        let s = sd("1/sqrt(abs(z1) + 1) - abs(z2 - 1) - 1", &[0.0, 1.0]);
        assert_eq!(s.pieces().len(), 4);
        for v in s.vertices() {
            assert_eq!(v[0].abs(), 0.5);
            assert_eq!(v[1].abs(), 1.0);
        }
        // squaring removes the kink
        assert_eq!(sd("abs(z1)^2", &[0.0]), SubdiffSet::singleton(vec![0.0]));
    }

    #[test]
    fn max_and_min_rules() {
        let g = parse_expr("u1^2*abs(z2) + max(z1, 2*z1) - 3*abs(u1)", 2, 1).unwrap();
        let pt = Point::with_uncertainty(&[0.0, 1.0], &[0.0]);
        let s = limiting_subdiff(&g, &pt, Wrt::Decision).unwrap();
        assert_eq!(s, SubdiffSet::from_polytope(poly(&[&[1.0, 0.0], &[2.0, 0.0]])));

        let m = sd("min(z1, 2*z1, 3*z1)", &[0.0]);
        assert_eq!(
            m,
            SubdiffSet::new(vec![poly(&[&[1.0]]), poly(&[&[3.0]])]).unwrap()
        );
        // a branch in the interior of the hull is not essentially active
        let m2 = sd("min(z1, -z1, 0*z1 + z2)", &[0.0, 0.0]);
        assert_eq!(m2.pieces().len(), 3);
        let m3 = sd("min(z1, -z1, 0*z1)", &[0.0]);
        assert_eq!(m3.pieces().len(), 2);
    }

    #[test]
    fn cancellation_and_flags() {
        let s = sd("abs(z1) - abs(z1) + z2", &[0.0, 0.0]);
        assert_eq!(s, SubdiffSet::singleton(vec![0.0, 1.0]));
        let shared = sd("abs(z1) - abs(2*z1)", &[0.0]);
        assert!(shared.outer_estimate);
        let convex = sd("abs(z1 + z2) + abs(z1 - z2)", &[0.0, 0.0]);
        assert!(!convex.outer_estimate);
        let separable = sd("-abs(z1) - abs(z2)", &[0.0, 0.0]);
        assert!(!separable.outer_estimate);
        assert_eq!(separable.pieces().len(), 4);
    }

    #[test]
    fn unsupported_compositions() {
        let e = parse_expr("abs(z1)*abs(z2)", 2, 0).unwrap();
        let r = limiting_subdiff(&e, &Point::decision(&[0.0, 0.0]), Wrt::Decision);
        match r {
            Err(SubdiffError::UnsupportedComposition { subtrees, .. }) => {
                assert_eq!(subtrees, vec!["abs(z1)", "abs(z2)"]);
            }
            other => panic!("{other:?}"),
        }
        let e = parse_expr("abs(abs(z1))", 1, 0).unwrap();
        assert!(limiting_subdiff(&e, &Point::decision(&[0.0]), Wrt::Decision).is_err());
        // away from the kink the same product is fine
        let e = parse_expr("abs(z1)*abs(z2)", 2, 0).unwrap();
        let s = limiting_subdiff(&e, &Point::decision(&[1.0, 0.0]), Wrt::Decision).unwrap();
        assert_eq!(s, SubdiffSet::from_polytope(poly(&[&[0.0, -1.0], &[0.0, 1.0]])));
    }

    #[test]
    fn scalarization_cancels_shared_kinks() {
        let f: Vec<Expr> = [
            "-2*z1 + abs(z2 - 1)",
            "1/(abs(z1) + 1) - 3*z2 + 2",
            "1/sqrt(abs(z1) + 1) - abs(z2 - 1) - 1",
        ]
        .iter()
        .map(|s| parse_expr(s, 2, 0).unwrap())
        .collect();
        let c = 2f64.sqrt() / 4.0;
        let r = scalarized_subdiff(&[c, 0.0, c], &f, &Point::decision(&[0.0, 1.0])).unwrap();
        let exact = r.exact.unwrap();
        let r2 = 2f64.sqrt();
        let want = SubdiffSet::new(vec![
            poly(&[&[-5.0 * r2 / 8.0, 0.0]]),
            poly(&[&[-3.0 * r2 / 8.0, 0.0]]),
        ])
        .unwrap();
        assert!(exact.approx_eq(&want, 1e-12));
        for v in exact.vertices() {
            assert!(r.outer.contains(v, 1e-8));
        }
        let zero = scalarized_subdiff(&[0.0, 0.0, 0.0], &f, &Point::decision(&[0.0, 1.0])).unwrap();
        assert_eq!(zero.exact.unwrap(), SubdiffSet::singleton(vec![0.0, 0.0]));
        assert_eq!(zero.outer, SubdiffSet::singleton(vec![0.0, 0.0]));
    }
}
