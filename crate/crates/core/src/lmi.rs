//! Dense linear matrix inequality feasibility.
//!
//! A system is a set of affine symmetric constraints
//! `F_j(X) = F_j0 + Σ terms(X) ⪰ 0` over matrix-valued decision variables.
//! The solver maximizes a common margin `t` with `F_j(X) ⪰ t I` using a
//! log-determinant barrier and damped Newton steps. The decision vector is
//! kept inside a ball of configurable radius so that the margin stays
//! bounded for homogeneous systems.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct MatrixVariable {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
}

impl MatrixVariable {
    fn scalar_count(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    /// Basis matrices for the scalar parametrization, in storage order.
    fn basis(&self) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.scalar_count());
        if self.symmetric {
            for i in 0..self.rows {
                for j in i..self.rows {
                    let mut e = DMatrix::zeros(self.rows, self.rows);
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                    out.push(e);
                }
            }
        } else {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    let mut e = DMatrix::zeros(self.rows, self.cols);
                    e[(i, j)] = 1.0;
                    out.push(e);
                }
            }
        }
        out
    }

    fn unpack(&self, scalars: &[f64]) -> DMatrix<f64> {
        self.basis()
            .iter()
            .zip(scalars)
            .fold(DMatrix::zeros(self.rows, self.cols), |acc, (e, &s)| acc + e * s)
    }
}

/// `left · X · right`, plus its transpose when `mirrored`.
///
/// Diagonal blocks use an unmirrored congruence with a symmetric variable;
/// off-diagonal blocks are mirrored so the assembled matrix stays symmetric.
#[derive(Debug, Clone)]
pub struct Term {
    pub var: VarId,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub mirrored: bool,
}

impl Term {
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let core = &self.left * x * &self.right;
        if self.mirrored {
            core.transpose() + core
        } else {
            core
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiConstraint {
    pub name: String,
    pub base: DMatrix<f64>,
    pub terms: Vec<Term>,
}

impl LmiConstraint {
    pub fn new(name: impl Into<String>, base: DMatrix<f64>) -> Self {
        Self { name: name.into(), base, terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn term(mut self, var: VarId, left: DMatrix<f64>, right: DMatrix<f64>, mirrored: bool) -> Self {
        self.terms.push(Term { var, left, right, mirrored });
        self
    }
}

/// Matrix decision variables plus the constraints over them.
#[derive(Debug, Clone, Default)]
pub struct LmiSystem {
    variables: Vec<MatrixVariable>,
    constraints: Vec<LmiConstraint>,
}

impl LmiSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn symmetric(&mut self, name: impl Into<String>, n: usize) -> VarId {
        self.variables.push(MatrixVariable { name: name.into(), rows: n, cols: n, symmetric: true });
        VarId(self.variables.len() - 1)
    }

    pub fn general(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> VarId {
        self.variables.push(MatrixVariable { name: name.into(), rows, cols, symmetric: false });
        VarId(self.variables.len() - 1)
    }

    pub fn add_constraint(&mut self, constraint: LmiConstraint) -> usize {
        self.constraints.push(constraint);
        self.constraints.len() - 1
    }

    pub fn variables(&self) -> &[MatrixVariable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[LmiConstraint] {
        &self.constraints
    }

    pub fn scalar_count(&self) -> usize {
        self.variables.iter().map(MatrixVariable::scalar_count).sum()
    }

    /// Evaluates constraint `idx` at the given variable values.
    pub fn assemble(&self, idx: usize, values: &[DMatrix<f64>]) -> DMatrix<f64> {
        let c = &self.constraints[idx];
        c.terms
            .iter()
            .fold(c.base.clone(), |acc, t| acc + t.apply(&values[t.var.0]))
    }

    /// Smallest eigenvalue over all assembled constraints.
    pub fn margin(&self, values: &[DMatrix<f64>]) -> f64 {
        (0..self.constraints.len())
            .map(|i| min_eigenvalue(&self.assemble(i, values)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Result<()> {
        if self.constraints.is_empty() {
            return Err(Error::Config("LMI system has no constraints".into()));
        }
        for c in &self.constraints {
            let d = c.base.nrows();
            if c.base.ncols() != d {
                return Err(Error::Config(format!("constraint {} is not square", c.name)));
            }
            if !is_symmetric(&c.base) {
                return Err(Error::Config(format!("constraint {} has a non-symmetric base", c.name)));
            }
            for t in &c.terms {
                let var = self.variables.get(t.var.0).ok_or_else(|| {
                    Error::Config(format!("constraint {} references unknown variable", c.name))
                })?;
                let shape_ok = t.left.nrows() == d
                    && t.left.ncols() == var.rows
                    && t.right.nrows() == var.cols
                    && t.right.ncols() == d;
                if !shape_ok {
                    return Err(Error::Config(format!(
                        "term on {} in constraint {} has inconsistent shape",
                        var.name, c.name
                    )));
                }
                for e in var.basis() {
                    if !is_symmetric(&t.apply(&e)) {
                        return Err(Error::Config(format!(
                            "term on {} in constraint {} breaks symmetry",
                            var.name, c.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Per-constraint `(F_j0, [F_ji])` in the scalar parametrization.
    fn affine_data(&self) -> Vec<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let bases: Vec<Vec<DMatrix<f64>>> = self.variables.iter().map(MatrixVariable::basis).collect();
        self.constraints
            .iter()
            .map(|c| {
                let d = c.dim();
                let mut coeffs = Vec::with_capacity(self.scalar_count());
                for (v, basis) in bases.iter().enumerate() {
                    for e in basis {
                        let mut f = DMatrix::zeros(d, d);
                        for t in c.terms.iter().filter(|t| t.var.0 == v) {
                            f += t.apply(e);
                        }
                        coeffs.push(f);
                    }
                }
                (c.base.clone(), coeffs)
            })
            .collect()
    }

    fn unpack(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut offset = 0;
        self.variables
            .iter()
            .map(|v| {
                let k = v.scalar_count();
                let m = v.unpack(&y.as_slice()[offset..offset + k]);
                offset += k;
                m
            })
            .collect()
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    /// Variable values indexed by [`VarId::index`].
    pub assignments: Vec<DMatrix<f64>>,
    /// Smallest eigenvalue over all assembled constraints.
    pub margin: f64,
    pub newton_steps: usize,
}

impl LmiSolution {
    pub fn value(&self, id: VarId) -> &DMatrix<f64> {
        &self.assignments[id.0]
    }
}

#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible(LmiSolution),
    /// The maximized margin is provably below the tolerance.
    Infeasible { margin_upper_bound: f64 },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolver {
    /// Minimum eigenvalue required of every constraint.
    pub tol: f64,
    pub max_newton_steps: usize,
    /// Radius of the ball confining the scalar decision vector.
    pub radius: f64,
    /// Barrier weight multiplier per outer iteration.
    pub growth: f64,
    /// Duality-gap target on the margin, relative to `max(1, |t|)`.
    pub gap_tol: f64,
    pub max_centering_steps: usize,
}

impl Default for LmiSolver {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_newton_steps: 200,
            radius: 1e2,
            growth: 30.0,
            gap_tol: 1e-7,
            max_centering_steps: 40,
        }
    }
}

struct BarrierState {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

impl LmiSolver {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn solve(&self, sys: &LmiSystem) -> Result<Feasibility> {
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(Error::Config("LMI tolerance must be positive".into()));
        }
        sys.validate()?;
        let data = sys.affine_data();
        let p = sys.scalar_count();
        // barrier complexity: one per constraint row plus the ball
        let nu = data.iter().map(|(b, _)| b.nrows()).sum::<usize>() as f64 + 1.0;

        let mut y = DVector::zeros(p);
        let mut t = data
            .iter()
            .map(|(b, _)| min_eigenvalue(b))
            .fold(f64::INFINITY, f64::min)
            - 1.0;
        let mut weight = 1.0;
        let mut steps = 0;

        loop {
            // centering
            for _ in 0..self.max_centering_steps {
                let state = self
                    .barrier(&data, &y, t, weight, true)
                    .expect("iterate stays strictly feasible");
                let step = match state.hess.clone().cholesky() {
                    Some(ch) => ch.solve(&(-&state.grad)),
                    None => break,
                };
                let decrement = -state.grad.dot(&step);
                if decrement / 2.0 < 1e-9 {
                    break;
                }
                if steps >= self.max_newton_steps {
                    return self.finish(sys, &y, t, None, steps);
                }
                steps += 1;
                let mut s = 1.0;
                let mut stalled = false;
                loop {
                    let y_new = &y + step.rows(0, p) * s;
                    let t_new = t + step[p] * s;
                    if let Some(v) = self.barrier(&data, &y_new, t_new, weight, false) {
                        if v.value <= state.value - 0.25 * s * decrement {
                            y = y_new;
                            t = t_new;
                            stalled = state.value - v.value <= 1e-13 * state.value.abs().max(1.0);
                            break;
                        }
                    }
                    s *= 0.5;
                    if s < 1e-12 {
                        break;
                    }
                }
                if s < 1e-12 || stalled {
                    break;
                }
            }
            let gap = nu / weight;
            if t + gap < self.tol {
                return Ok(Feasibility::Infeasible { margin_upper_bound: t + gap });
            }
            if gap <= self.gap_tol * t.abs().max(1.0) {
                return self.finish(sys, &y, t, Some(gap), steps);
            }
            weight *= self.growth;
        }
    }

    /// `gap` is the duality-gap bound, available only at a centered point.
    fn finish(
        &self,
        sys: &LmiSystem,
        y: &DVector<f64>,
        t: f64,
        gap: Option<f64>,
        steps: usize,
    ) -> Result<Feasibility> {
        let assignments = sys.unpack(y);
        let margin = sys.margin(&assignments);
        match gap {
            _ if margin >= self.tol => {
                Ok(Feasibility::Feasible(LmiSolution { assignments, margin, newton_steps: steps }))
            }
            Some(gap) => Ok(Feasibility::Infeasible { margin_upper_bound: t + gap }),
            None => Err(Error::NoConvergence { iterations: steps, margin, gap: f64::NAN }),
        }
    }

    /// Barrier `-w t - Σ log det(F_j(y) - tI) - log(r² - |y|²)` with
    /// derivatives; `None` outside the domain.
    fn barrier(
        &self,
        data: &[(DMatrix<f64>, Vec<DMatrix<f64>>)],
        y: &DVector<f64>,
        t: f64,
        weight: f64,
        derivatives: bool,
    ) -> Option<BarrierState> {
        let p = y.len();
        let slack = self.radius * self.radius - y.norm_squared();
        if slack <= 0.0 {
            return None;
        }
        let mut value = -weight * t - slack.ln();
        let mut grad = DVector::zeros(p + 1);
        let mut hess = DMatrix::zeros(p + 1, p + 1);
        if derivatives {
            grad[p] = -weight;
            grad.rows_mut(0, p).axpy(2.0 / slack, y, 1.0);
            let mut ball = DMatrix::identity(p, p) * (2.0 / slack);
            ball.ger(4.0 / (slack * slack), y, y, 1.0);
            hess.view_mut((0, 0), (p, p)).copy_from(&ball);
        }
        for (base, coeffs) in data {
            let d = base.nrows();
            let mut s = base - DMatrix::identity(d, d) * t;
            for (c, &yi) in coeffs.iter().zip(y.iter()) {
                if yi != 0.0 {
                    s += c * yi;
                }
            }
            let chol = s.cholesky()?;
            let logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
            value -= logdet;
            if !derivatives {
                continue;
            }
            let s_inv = chol.inverse();
            // rows: vec(S⁻¹ D_a) and vec((S⁻¹ D_a)ᵀ) for each direction a
            let mut fwd = DMatrix::zeros(p + 1, d * d);
            let mut bwd = DMatrix::zeros(p + 1, d * d);
            for a in 0..=p {
                let m = if a < p { &s_inv * &coeffs[a] } else { -&s_inv };
                grad[a] -= m.trace();
                let mt = m.transpose();
                fwd.row_mut(a).copy_from_slice(m.as_slice());
                bwd.row_mut(a).copy_from_slice(mt.as_slice());
            }
            hess.gemm(1.0, &fwd, &bwd.transpose(), 1.0);
        }
        Some(BarrierState { value, grad, hess })
    }
}

/// Convenience wrapper around [`LmiSolver::solve`] with a given tolerance.
pub fn solve_feasibility(sys: &LmiSystem, tol: f64) -> Result<Feasibility> {
    LmiSolver::with_tol(tol).solve(sys)
}
