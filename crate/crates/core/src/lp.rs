//! Thin wrapper over the `minilp` simplex solver.

use minilp::{ComparisonOp, OptimizationDirection, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { objective: f64, values: Vec<f64> },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LinearProgram {
    maximize: bool,
    vars: Vec<(f64, f64, f64)>,
    rows: Vec<(Vec<(usize, f64)>, Cmp, f64)>,
}

impl LinearProgram {
    pub fn minimize() -> Self {
        LinearProgram::default()
    }

    pub fn maximize() -> Self {
        LinearProgram {
            maximize: true,
            ..Default::default()
        }
    }

    /// Add a variable with objective coefficient `obj` and bounds.
    pub fn var(&mut self, obj: f64, lo: f64, hi: f64) -> usize {
        self.vars.push((obj, lo, hi));
        self.vars.len() - 1
    }

    pub fn row(&mut self, coefs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.rows.push((coefs, cmp, rhs));
    }

    pub fn solve(&self) -> LpOutcome {
        let dir = if self.maximize {
            OptimizationDirection::Maximize
        } else {
            OptimizationDirection::Minimize
        };
        let mut p = Problem::new(dir);
        let handles: Vec<_> = self
            .vars
            .iter()
            .map(|&(obj, lo, hi)| p.add_var(obj, (lo, hi)))
            .collect();
        for (coefs, cmp, rhs) in &self.rows {
            let expr: Vec<_> = coefs
                .iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|&(i, c)| (handles[i], c))
                .collect();
            let op = match cmp {
                Cmp::Le => ComparisonOp::Le,
                Cmp::Ge => ComparisonOp::Ge,
                Cmp::Eq => ComparisonOp::Eq,
            };
            p.add_constraint(expr.as_slice(), op, *rhs);
        }
        match p.solve() {
            Ok(sol) => LpOutcome::Optimal {
                objective: sol.objective(),
                values: handles.iter().map(|h| sol[*h]).collect(),
            },
            Err(minilp::Error::Infeasible) => LpOutcome::Infeasible,
            Err(minilp::Error::Unbounded) => LpOutcome::Unbounded,
        }
    }
}
