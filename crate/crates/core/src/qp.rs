//! Dense strictly convex QP solver
//!
//! ```text
//! minimize   ½ zᵀ Q z + cᵀ z
//! subject to G z ≥ b
//! ```
//!
//! A dual active-set method in the style of Goldfarb and Idnani: starting from
//! the unconstrained minimizer, the most violated row is added to the active
//! set, dropping rows whose multipliers would turn negative on the way. Every
//! iterate is dual feasible and the objective never decreases, so the method
//! needs no feasible starting point and detects infeasibility directly.
//!
//! Warm starts re-solve the equality-constrained problem on a previous active
//! set, drop rows with negative multipliers and continue from there.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("problem data contains non-finite values")]
    NonFinite,
    #[error("Hessian is not symmetric")]
    NotSymmetric,
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// One row per inequality `G_j z ≥ b_j`.
    pub constraints: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            constraints: DMatrix::zeros(0, n),
            bounds: DVector::zeros(0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.bounds.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        let m = self.num_constraints();
        let dims = [
            ("hessian rows", n, self.hessian.nrows()),
            ("hessian cols", n, self.hessian.ncols()),
            ("constraint cols", n, self.constraints.ncols()),
            ("constraint rows", m, self.constraints.nrows()),
        ];
        for (what, expected, got) in dims {
            if expected != got {
                return Err(QpError::DimensionMismatch {
                    what,
                    expected,
                    got,
                });
            }
        }
        let finite = self.hessian.iter().all(|v| v.is_finite())
            && self.linear.iter().all(|v| v.is_finite())
            && self.constraints.iter().all(|v| v.is_finite())
            && self.bounds.iter().all(|v| v.is_finite());
        if !finite {
            return Err(QpError::NonFinite);
        }
        let scale = self.hessian.amax().max(1.0);
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-12 * scale {
            return Err(QpError::NotSymmetric);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
    /// Terminated with no violated row but KKT residuals above tolerance.
    Inaccurate,
}

/// Absolute KKT residuals of a primal-dual pair, plus a scale-relative
/// summary used to certify optimality on badly scaled problems.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖Qz + c − Gᵀλ‖∞`
    pub stationarity: f64,
    /// `max(0, max_j (b_j − G_j z))`
    pub primal: f64,
    /// `max(0, −min_j λ_j)`
    pub dual: f64,
    /// `max_j |λ_j (G_j z − b_j)|`
    pub complementarity: f64,
    /// Largest residual after dividing each by the magnitude of the terms
    /// it is made of (never by less than one).
    pub relative: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }

    pub fn compute(problem: &QpProblem, z: &DVector<f64>, duals: &DVector<f64>) -> Self {
        let qz = &problem.hessian * z;
        let gl = problem.constraints.tr_mul(duals);
        let gz = &problem.constraints * z;
        let grad = &qz + &problem.linear - &gl;
        let stationarity = grad.amax();
        let stat_scale = 1f64
            .max(qz.amax())
            .max(problem.linear.amax())
            .max(gl.amax());

        let (mut primal, mut primal_rel) = (0.0_f64, 0.0_f64);
        let (mut comp, mut comp_rel) = (0.0_f64, 0.0_f64);
        for j in 0..duals.len() {
            let slack = gz[j] - problem.bounds[j];
            let row_scale = 1f64.max(gz[j].abs()).max(problem.bounds[j].abs());
            primal = primal.max(-slack);
            primal_rel = primal_rel.max(-slack / row_scale);
            let c = (duals[j] * slack).abs();
            comp = comp.max(c);
            comp_rel = comp_rel.max(c / (row_scale * 1f64.max(duals[j].abs())));
        }
        let dual = duals.iter().fold(0.0_f64, |acc, l| acc.max(-l));
        let dual_rel = dual / 1f64.max(duals.amax());
        Self {
            stationarity,
            primal,
            dual,
            complementarity: comp,
            relative: (stationarity / stat_scale)
                .max(primal_rel)
                .max(dual_rel)
                .max(comp_rel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multiplier per constraint row, zero for inactive rows.
    pub duals: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub objective: f64,
    /// Active-set changes (additions and removals).
    pub iterations: usize,
    /// Active rows in the order they entered.
    pub active_set: Vec<usize>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    solve_warm(problem, settings, &[])
}

/// Solves starting from the active set of a previous solution. Hints that no
/// longer index a row of `problem` cause a cold start.
pub fn solve_warm(
    problem: &QpProblem,
    settings: &QpSettings,
    active_hint: &[usize],
) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let chol = problem
        .hessian
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite)?;
    let mut solver = ActiveSet::new(problem, &chol, settings);
    if active_hint.iter().all(|&j| j < problem.num_constraints()) {
        solver.seed(active_hint);
    }
    Ok(solver.run())
}

struct ActiveSet<'a> {
    problem: &'a QpProblem,
    chol: &'a Cholesky<f64, Dyn>,
    settings: &'a QpSettings,
    z: DVector<f64>,
    active: Vec<usize>,
    lambda: Vec<f64>,
    iterations: usize,
}

enum Step {
    Added,
    Infeasible,
    Exhausted,
}

impl<'a> ActiveSet<'a> {
    fn new(problem: &'a QpProblem, chol: &'a Cholesky<f64, Dyn>, settings: &'a QpSettings) -> Self {
        let z = -chol.solve(&problem.linear);
        Self {
            problem,
            chol,
            settings,
            z,
            active: Vec::new(),
            lambda: Vec::new(),
            iterations: 0,
        }
    }

    fn row(&self, j: usize) -> DVector<f64> {
        self.problem.constraints.row(j).transpose()
    }

    fn slack(&self, j: usize) -> f64 {
        self.problem.constraints.row(j).dot(&self.z.transpose()) - self.problem.bounds[j]
    }

    /// Normals of the active rows as columns.
    fn active_normals(&self, active: &[usize]) -> DMatrix<f64> {
        let n = self.problem.num_vars();
        let mut normals = DMatrix::zeros(n, active.len());
        for (k, &j) in active.iter().enumerate() {
            normals.set_column(k, &self.problem.constraints.row(j).transpose());
        }
        normals
    }

    /// Primal step direction `H n` and the multiplier change `N* n` for adding
    /// `normal` to the current active set.
    fn direction(&self, normal: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let v = self.chol.solve(normal);
        if self.active.is_empty() {
            return (v, DVector::zeros(0));
        }
        let normals = self.active_normals(&self.active);
        let qinv_n = self.chol.solve(&normals);
        let schur = normals.tr_mul(&qinv_n);
        let rhs = normals.tr_mul(&v);
        let r = solve_spd(schur, &rhs);
        let dz = v - qinv_n * &r;
        (dz, r)
    }

    /// True when `normal` is (numerically) in the span of the active normals.
    fn is_dependent(&self, normal: &DVector<f64>, dz: &DVector<f64>) -> bool {
        let reference = normal.dot(&self.chol.solve(normal));
        normal.dot(dz) <= 1e-10 * reference
    }

    /// Re-solves the equality-constrained problem on the current active set,
    /// dropping rows with negative multipliers until the point is dual feasible.
    fn refine(&mut self) {
        loop {
            if self.active.is_empty() {
                self.z = -self.chol.solve(&self.problem.linear);
                return;
            }
            let normals = self.active_normals(&self.active);
            let qinv_n = self.chol.solve(&normals);
            let qinv_c = self.chol.solve(&self.problem.linear);
            let schur = normals.tr_mul(&qinv_n);
            let rhs = DVector::from_iterator(
                self.active.len(),
                self.active.iter().map(|&j| self.problem.bounds[j]),
            ) + normals.tr_mul(&qinv_c);
            let lambda = solve_spd(schur, &rhs);
            let (worst, min) =
                lambda
                    .iter()
                    .enumerate()
                    .fold(
                        (0, f64::INFINITY),
                        |acc, (k, &l)| if l < acc.1 { (k, l) } else { acc },
                    );
            let scale = lambda.amax().max(1.0);
            if min < -1e-13 * scale {
                self.active.remove(worst);
                self.lambda.remove(worst);
                continue;
            }
            self.z = qinv_n * &lambda - qinv_c;
            self.lambda = lambda.iter().map(|l| l.max(0.0)).collect();
            return;
        }
    }

    fn seed(&mut self, hint: &[usize]) {
        for &j in hint {
            if self.active.contains(&j) {
                continue;
            }
            let normal = self.row(j);
            let (dz, _) = self.direction(&normal);
            if !self.is_dependent(&normal, &dz) {
                self.active.push(j);
                self.lambda.push(0.0);
            }
        }
        self.refine();
    }

    fn most_violated(&self) -> Option<usize> {
        let threshold = 0.1 * self.settings.tolerance;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.problem.num_constraints() {
            if self.active.contains(&j) {
                continue;
            }
            let s = self.slack(j);
            if s < -threshold && best.is_none_or(|(_, b)| s < b) {
                best = Some((j, s));
            }
        }
        best.map(|(j, _)| j)
    }

    fn drop_active(&mut self, k: usize) {
        self.active.remove(k);
        self.lambda.remove(k);
        self.iterations += 1;
    }

    /// Moves to the minimizer with row `p` added, dropping blocking rows.
    fn add_constraint(&mut self, p: usize) -> Step {
        let normal = self.row(p);
        let mut lambda_p = 0.0;
        loop {
            if self.iterations >= self.settings.max_iterations {
                return Step::Exhausted;
            }
            let (dz, r) = self.direction(&normal);

            // Largest step keeping the active multipliers non-negative.
            let mut partial = f64::INFINITY;
            let mut blocking = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let ratio = self.lambda[k] / rk;
                    if ratio < partial {
                        partial = ratio;
                        blocking = Some(k);
                    }
                }
            }
            let full = if self.is_dependent(&normal, &dz) {
                f64::INFINITY
            } else {
                -self.slack(p) / normal.dot(&dz)
            };

            if full.is_infinite() && partial.is_infinite() {
                return Step::Infeasible;
            }
            let step = full.min(partial);
            let before = if cfg!(debug_assertions) {
                self.problem.objective(&self.z)
            } else {
                0.0
            };
            if full.is_finite() {
                self.z += &dz * step;
            }
            for (l, rk) in self.lambda.iter_mut().zip(r.iter()) {
                *l -= step * rk;
            }
            lambda_p += step;
            debug_assert!({
                let after = self.problem.objective(&self.z);
                after >= before - 1e-9 * (1.0 + before.abs())
            });

            if full <= partial {
                self.active.push(p);
                self.lambda.push(lambda_p);
                self.iterations += 1;
                return Step::Added;
            }
            let k = blocking.expect("finite partial step has a blocking row");
            self.drop_active(k);
        }
    }

    fn run(mut self) -> QpSolution {
        let status = loop {
            let Some(p) = self.most_violated() else {
                break QpStatus::Optimal;
            };
            if self.iterations >= self.settings.max_iterations {
                break QpStatus::MaxIterations;
            }
            match self.add_constraint(p) {
                Step::Added => {}
                Step::Infeasible => break QpStatus::Infeasible,
                Step::Exhausted => break QpStatus::MaxIterations,
            }
        };
        if status == QpStatus::Optimal {
            // Removes drift accumulated along the step sequence.
            self.refine();
        }
        self.finish(status)
    }

    fn finish(self, status: QpStatus) -> QpSolution {
        let mut duals = DVector::zeros(self.problem.num_constraints());
        for (&j, &l) in self.active.iter().zip(&self.lambda) {
            duals[j] = l;
        }
        let kkt = KktResiduals::compute(self.problem, &self.z, &duals);
        let status = match status {
            QpStatus::Optimal if kkt.relative > self.settings.tolerance => QpStatus::Inaccurate,
            s => s,
        };
        QpSolution {
            objective: self.problem.objective(&self.z),
            z: self.z,
            duals,
            status,
            kkt,
            iterations: self.iterations,
            active_set: self.active,
        }
    }
}

fn solve_spd(matrix: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match matrix.clone().cholesky() {
        Some(chol) => chol.solve(rhs),
        None => matrix
            .lu()
            .solve(rhs)
            .unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN)),
    }
}
