//! Discretization of the first-order optimality system.
//!
//! On each mesh interval `[t_{k-1}, t_k]` with half-width `h_k` and a
//! Radau scheme of degree `N`, the discrete unknowns are state values
//! `X_{k0}…X_{kN}` (with `X_{k0}` shared with the previous interval),
//! control values `U_{k1}…U_{kN}`, transformed costate samples
//! `Λ_{k1}…Λ_{kN}`, mesh multipliers `Λ_{k0}`, and a terminal
//! multiplier `Λ_{K+1,0}`.  The residual blocks are
//!
//! ```text
//! T1_ki = Σ_j D_ij X_kj − h f(X_ki, U_ki)
//! T2_k  = X_k0 − X_{k-1,N}
//! T3_ki = Σ_j D‡_ij Λ_kj + h ∇ₓH(X_ki, U_ki, Λ_ki)   (+ Λ_{k+1,0}/ω_N at i = N)
//! T4_k  = Λ_k0 − Λ_{k+1,0} − h Σ_i ω_i ∇ₓH(X_ki, U_ki, Λ_ki)
//! T5    = ∇C(X_KN) − Λ_{K+1,0}
//! T6_ki = U_ki − Π_U(U_ki − h ∇ᵤH(X_ki, U_ki, Λ_ki))
//! ```
//!
//! `T6` is the projected (natural-map) form of the control minimum
//! principle; it vanishes exactly when the normal-cone inclusion holds
//! for box sets.  When the problem carries state bounds, the `T3` rows
//! are wrapped in the same projection with respect to the state box, so
//! a bound-active collocation state satisfies the inclusion instead of
//! the equality.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::ocp::{hamiltonian_derivatives, AnalyticReference, ControlProblem};
use crate::radau::{barycentric_eval, RadauScheme};
use crate::{Error, Result};

/// Mesh breakpoints spanning the horizon plus a polynomial degree per
/// interval.
#[derive(Debug, Clone)]
pub struct HpMesh {
    pub breakpoints: Vec<f64>,
    pub degrees: Vec<usize>,
}

impl HpMesh {
    /// Uniform mesh of `k` intervals with the same degree everywhere;
    /// every half-width equals `(t_end - t_start) / (2K)`.
    pub fn uniform(horizon: (f64, f64), k: usize, degree: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidMesh("need at least one interval".into()));
        }
        let (t0, t1) = horizon;
        let breakpoints = (0..=k)
            .map(|i| t0 + (t1 - t0) * i as f64 / k as f64)
            .collect();
        HpMesh::from_breakpoints(breakpoints, vec![degree; k])
    }

    pub fn from_breakpoints(breakpoints: Vec<f64>, degrees: Vec<usize>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidMesh("need at least two breakpoints".into()));
        }
        if degrees.len() != breakpoints.len() - 1 {
            return Err(Error::InvalidMesh("one degree per interval required".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMesh("breakpoints must be strictly increasing".into()));
        }
        if degrees.iter().any(|&n| n < 1) {
            return Err(Error::InvalidMesh("degrees must be at least 1".into()));
        }
        Ok(HpMesh { breakpoints, degrees })
    }

    pub fn interval_count(&self) -> usize {
        self.degrees.len()
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    /// Half-width `h_k = (t_k − t_{k-1}) / 2`.
    pub fn half_width(&self, k: usize) -> f64 {
        (self.breakpoints[k + 1] - self.breakpoints[k]) / 2.0
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (self.breakpoints[k + 1] + self.breakpoints[k]) / 2.0
    }

    /// Physical time of reference coordinate `τ ∈ [-1, 1]` in interval `k`.
    pub fn time_of(&self, k: usize, tau: f64) -> f64 {
        self.midpoint(k) + self.half_width(k) * tau
    }

    /// Interval owning `t`; interior mesh points belong to the left
    /// interval.
    pub fn locate(&self, t: f64) -> Result<usize> {
        let (t0, t1) = self.horizon();
        let tol = 1e-12 * (1.0 + t1.abs().max(t0.abs()));
        if t < t0 - tol || t > t1 + tol {
            return Err(Error::OutOfHorizon(t));
        }
        if t <= self.breakpoints[0] {
            return Ok(0);
        }
        let k = self
            .breakpoints
            .partition_point(|&b| b < t)
            .saturating_sub(1);
        Ok(k.min(self.interval_count() - 1))
    }
}

/// Fetches the per-interval schemes from the process-wide cache.
pub fn schemes_for_mesh(mesh: &HpMesh) -> Result<Vec<Arc<RadauScheme>>> {
    mesh.degrees.iter().map(|&n| crate::radau::scheme(n)).collect()
}

/// Collocation-point values of state, control and transformed costate,
/// plus mesh-point values.
///
/// `states[k]` holds `X_{k0}…X_{kN}`; the solver writes the shared mesh
/// value into both `states[k][0]` and `states[k-1][N]`, so continuity
/// holds exactly as stored.  `costates[k][0]` is the mesh multiplier
/// `Λ_{k0}`; no continuity is imposed on the costate across mesh
/// points.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub states: Vec<Vec<DVector<f64>>>,
    pub controls: Vec<Vec<DVector<f64>>>,
    pub costates: Vec<Vec<DVector<f64>>>,
    /// `Λ_{K+1,0}`.
    pub costate_terminal: DVector<f64>,
}

impl DiscreteSolution {
    pub fn zeros(mesh: &HpMesh, state_dim: usize, control_dim: usize) -> Self {
        let states = mesh
            .degrees
            .iter()
            .map(|&n| vec![DVector::zeros(state_dim); n + 1])
            .collect();
        let controls = mesh
            .degrees
            .iter()
            .map(|&n| vec![DVector::zeros(control_dim); n])
            .collect();
        let costates = mesh
            .degrees
            .iter()
            .map(|&n| vec![DVector::zeros(state_dim); n + 1])
            .collect();
        DiscreteSolution {
            states,
            controls,
            costates,
            costate_terminal: DVector::zeros(state_dim),
        }
    }

    /// `U_{ki}` for `i ∈ 1..=N`.
    pub fn control(&self, k: usize, i: usize) -> &DVector<f64> {
        &self.controls[k][i - 1]
    }
}

/// Whether a box component is held at one of its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundFlag {
    Inactive,
    Lower,
    Upper,
}

/// Frozen activity pattern of the box bounds at one iterate, indexed
/// `[k][i-1][component]`.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    pub control: Vec<Vec<Vec<BoundFlag>>>,
    pub state: Vec<Vec<Vec<BoundFlag>>>,
}

impl ActiveSet {
    pub fn active_count(&self) -> usize {
        let count = |side: &Vec<Vec<Vec<BoundFlag>>>| {
            side.iter()
                .flatten()
                .flatten()
                .filter(|f| **f != BoundFlag::Inactive)
                .count()
        };
        count(&self.control) + count(&self.state)
    }
}

/// Residual blocks of the discrete optimality system.
#[derive(Debug, Clone)]
pub struct KktResidual {
    pub dynamics: Vec<Vec<DVector<f64>>>,
    pub continuity: Vec<DVector<f64>>,
    pub costate: Vec<Vec<DVector<f64>>>,
    pub costate_mesh: Vec<DVector<f64>>,
    pub transversality: DVector<f64>,
    pub stationarity: Vec<Vec<DVector<f64>>>,
}

fn omega_norm(blocks: &[Vec<DVector<f64>>], schemes: &[Arc<RadauScheme>]) -> f64 {
    let mut acc = 0.0;
    for (k, rows) in blocks.iter().enumerate() {
        for (idx, v) in rows.iter().enumerate() {
            acc += schemes[k].weights[idx] * v.norm_squared();
        }
    }
    acc.sqrt()
}

fn stacked_norm(blocks: &[DVector<f64>]) -> f64 {
    blocks.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

impl KktResidual {
    /// Largest absolute entry across all blocks.
    pub fn sup_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for rows in [&self.dynamics, &self.costate, &self.stationarity] {
            for row in rows.iter().flatten() {
                m = m.max(row.amax());
            }
        }
        for row in self.continuity.iter().chain(self.costate_mesh.iter()) {
            m = m.max(row.amax());
        }
        m.max(self.transversality.amax())
    }

    /// Weighted composite norm:
    /// `‖T1‖_ω + |T2| + ‖T3‖_ω + |T4| + h^{1/2}|T5| + max_k h_k^{-1/2}‖T6_k‖_∞`,
    /// with the last interval's half-width scaling the terminal block.
    pub fn composite_norm(&self, mesh: &HpMesh, schemes: &[Arc<RadauScheme>]) -> f64 {
        let k_count = mesh.interval_count();
        let mut t6 = 0.0f64;
        for k in 0..k_count {
            let scale = mesh.half_width(k).powf(-0.5);
            for row in &self.stationarity[k] {
                t6 = t6.max(scale * row.amax());
            }
        }
        omega_norm(&self.dynamics, schemes)
            + stacked_norm(&self.continuity)
            + omega_norm(&self.costate, schemes)
            + stacked_norm(&self.costate_mesh)
            + mesh.half_width(k_count - 1).sqrt() * self.transversality.norm()
            + t6
    }
}

/// Maps the reduced unknown vector (mesh states eliminated) to flat
/// indices.  Per interval the order is `X_{k1..kN} | U_{k1..kN} |
/// Λ_{k1..kN}`, followed by the mesh multipliers `Λ_{k0}` and the
/// terminal multiplier.
#[derive(Debug, Clone)]
pub struct Layout {
    pub degrees: Vec<usize>,
    pub state_dim: usize,
    pub control_dim: usize,
    interval_offsets: Vec<usize>,
    mesh_offset: usize,
}

impl Layout {
    pub fn new(mesh: &HpMesh, state_dim: usize, control_dim: usize) -> Self {
        let mut interval_offsets = Vec::with_capacity(mesh.interval_count());
        let mut off = 0;
        for &n in &mesh.degrees {
            interval_offsets.push(off);
            off += n * (2 * state_dim + control_dim);
        }
        Layout {
            degrees: mesh.degrees.clone(),
            state_dim,
            control_dim,
            interval_offsets,
            mesh_offset: off,
        }
    }

    pub fn dim(&self) -> usize {
        self.mesh_offset + (self.degrees.len() + 1) * self.state_dim
    }

    /// First index of `X_{ki}`, `i ∈ 1..=N`.
    pub fn x(&self, k: usize, i: usize) -> usize {
        self.interval_offsets[k] + (i - 1) * self.state_dim
    }

    /// First index of `U_{ki}`, `i ∈ 1..=N`.
    pub fn u(&self, k: usize, i: usize) -> usize {
        self.interval_offsets[k] + self.degrees[k] * self.state_dim + (i - 1) * self.control_dim
    }

    /// First index of `Λ_{ki}`, `i ∈ 1..=N`.
    pub fn lam(&self, k: usize, i: usize) -> usize {
        self.interval_offsets[k]
            + self.degrees[k] * (self.state_dim + self.control_dim)
            + (i - 1) * self.state_dim
    }

    /// First index of the mesh multiplier `Λ_{k0}`.
    pub fn lam_mesh(&self, k: usize) -> usize {
        self.mesh_offset + k * self.state_dim
    }

    /// First index of `Λ_{K+1,0}`.
    pub fn lam_terminal(&self) -> usize {
        self.mesh_offset + self.degrees.len() * self.state_dim
    }

    /// Row offsets mirror the column offsets: per interval
    /// `T1 | T6 | T3`, then `T4_1..T4_K | T5`.
    pub fn row_t1(&self, k: usize, i: usize) -> usize {
        self.x(k, i)
    }

    pub fn row_t6(&self, k: usize, i: usize) -> usize {
        self.u(k, i)
    }

    pub fn row_t3(&self, k: usize, i: usize) -> usize {
        self.lam(k, i)
    }

    pub fn row_t4(&self, k: usize) -> usize {
        self.lam_mesh(k)
    }

    pub fn row_t5(&self) -> usize {
        self.lam_terminal()
    }

    /// Flattens a solution into the reduced unknown vector.
    pub fn pack(&self, sol: &DiscreteSolution) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim());
        for k in 0..self.degrees.len() {
            for i in 1..=self.degrees[k] {
                theta
                    .rows_mut(self.x(k, i), self.state_dim)
                    .copy_from(&sol.states[k][i]);
                theta
                    .rows_mut(self.u(k, i), self.control_dim)
                    .copy_from(&sol.controls[k][i - 1]);
                theta
                    .rows_mut(self.lam(k, i), self.state_dim)
                    .copy_from(&sol.costates[k][i]);
            }
            theta
                .rows_mut(self.lam_mesh(k), self.state_dim)
                .copy_from(&sol.costates[k][0]);
        }
        theta
            .rows_mut(self.lam_terminal(), self.state_dim)
            .copy_from(&sol.costate_terminal);
        theta
    }

    /// Rebuilds a solution; mesh-point states are written from the
    /// single shared unknown so continuity holds bit-exactly, and
    /// `X_{10}` is pinned to the initial condition.
    pub fn unpack(&self, theta: &DVector<f64>, initial_state: &DVector<f64>) -> DiscreteSolution {
        let k_count = self.degrees.len();
        let mut states = Vec::with_capacity(k_count);
        let mut controls = Vec::with_capacity(k_count);
        let mut costates = Vec::with_capacity(k_count);
        for k in 0..k_count {
            let n = self.degrees[k];
            let mut xs = Vec::with_capacity(n + 1);
            let x0 = if k == 0 {
                initial_state.clone()
            } else {
                theta
                    .rows(self.x(k - 1, self.degrees[k - 1]), self.state_dim)
                    .into_owned()
            };
            xs.push(x0);
            let mut us = Vec::with_capacity(n);
            let mut ls = Vec::with_capacity(n + 1);
            ls.push(theta.rows(self.lam_mesh(k), self.state_dim).into_owned());
            for i in 1..=n {
                xs.push(theta.rows(self.x(k, i), self.state_dim).into_owned());
                us.push(theta.rows(self.u(k, i), self.control_dim).into_owned());
                ls.push(theta.rows(self.lam(k, i), self.state_dim).into_owned());
            }
            states.push(xs);
            controls.push(us);
            costates.push(ls);
        }
        DiscreteSolution {
            states,
            controls,
            costates,
            costate_terminal: theta.rows(self.lam_terminal(), self.state_dim).into_owned(),
        }
    }

    /// Flattens residual blocks in row order for the Newton system.
    pub fn flatten_residual(&self, res: &KktResidual) -> DVector<f64> {
        let mut r = DVector::zeros(self.dim());
        for k in 0..self.degrees.len() {
            for i in 1..=self.degrees[k] {
                r.rows_mut(self.row_t1(k, i), self.state_dim)
                    .copy_from(&res.dynamics[k][i - 1]);
                r.rows_mut(self.row_t6(k, i), self.control_dim)
                    .copy_from(&res.stationarity[k][i - 1]);
                r.rows_mut(self.row_t3(k, i), self.state_dim)
                    .copy_from(&res.costate[k][i - 1]);
            }
            r.rows_mut(self.row_t4(k), self.state_dim)
                .copy_from(&res.costate_mesh[k]);
        }
        r.rows_mut(self.row_t5(), self.state_dim)
            .copy_from(&res.transversality);
        r
    }
}

fn bound_flag(value: f64, projected_arg: f64, lower: f64, upper: f64) -> BoundFlag {
    // Active when the projection clamps, or at an exact tie where the
    // variable already sits on the bound.
    let tie_l = 1e-12 * (1.0 + lower.abs());
    let tie_u = 1e-12 * (1.0 + upper.abs());
    if projected_arg > upper || (upper.is_finite() && (value - upper).abs() <= tie_u && projected_arg >= upper - tie_u)
    {
        BoundFlag::Upper
    } else if projected_arg < lower
        || (lower.is_finite() && (value - lower).abs() <= tie_l && projected_arg <= lower + tie_l)
    {
        BoundFlag::Lower
    } else {
        BoundFlag::Inactive
    }
}

/// Assembles the residual together with the bound-activity pattern used
/// to freeze the semismooth Newton system.
pub fn assemble_kkt_system(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    problem: &ControlProblem,
    sol: &DiscreteSolution,
) -> Result<(KktResidual, ActiveSet)> {
    let k_count = mesh.interval_count();
    if schemes.len() != k_count || sol.states.len() != k_count {
        return Err(Error::DimensionMismatch("mesh/schemes/solution".into()));
    }
    let n_dim = problem.state_dim;
    let m_dim = problem.control_dim;
    let mut dynamics = Vec::with_capacity(k_count);
    let mut continuity = Vec::with_capacity(k_count);
    let mut costate = Vec::with_capacity(k_count);
    let mut costate_mesh = Vec::with_capacity(k_count);
    let mut stationarity = Vec::with_capacity(k_count);
    let mut active_u = Vec::with_capacity(k_count);
    let mut active_x = Vec::with_capacity(k_count);

    for k in 0..k_count {
        let scheme = &schemes[k];
        let n = scheme.degree;
        if sol.states[k].len() != n + 1 || sol.controls[k].len() != n || sol.costates[k].len() != n + 1
        {
            return Err(Error::DimensionMismatch(format!("interval {k}")));
        }
        let h = mesh.half_width(k);
        let d = &scheme.diff;
        let ddag = &scheme.dddag;
        let w = &scheme.weights;

        let prev_end = if k == 0 {
            problem.initial_state.clone()
        } else {
            sol.states[k - 1][mesh.degrees[k - 1]].clone()
        };
        continuity.push(&sol.states[k][0] - &prev_end);

        let lam_next = if k + 1 < k_count {
            &sol.costates[k + 1][0]
        } else {
            &sol.costate_terminal
        };

        let mut t1_rows = Vec::with_capacity(n);
        let mut t3_rows = Vec::with_capacity(n);
        let mut t6_rows = Vec::with_capacity(n);
        let mut a_u = Vec::with_capacity(n);
        let mut a_x = Vec::with_capacity(n);
        let mut t4 = &sol.costates[k][0] - lam_next;

        for i in 1..=n {
            let x = &sol.states[k][i];
            let u = &sol.controls[k][i - 1];
            let lam = &sol.costates[k][i];
            let derivs = hamiltonian_derivatives(problem, x, u, lam);

            let mut t1 = -h * problem.dynamics(x, u);
            for j in 0..=n {
                t1 += d[(i - 1, j)] * &sol.states[k][j];
            }
            t1_rows.push(t1);

            let mut r3 = h * &derivs.grad_x;
            for j in 1..=n {
                r3 += ddag[(i - 1, j - 1)] * &sol.costates[k][j];
            }
            if i == n {
                r3 += lam_next / w[n - 1];
            }
            // state rows become projected residuals when bounds exist;
            // on bound-active components the smooth residual is the
            // (negated) bound multiplier and reenters the mesh-point
            // aggregation T4 below
            let mut t3 = DVector::zeros(n_dim);
            let mut flags_x = Vec::with_capacity(n_dim);
            for c in 0..n_dim {
                let flag = bound_flag(
                    x[c],
                    x[c] - r3[c],
                    problem.state_bounds.lower[c],
                    problem.state_bounds.upper[c],
                );
                t3[c] = match flag {
                    BoundFlag::Inactive => r3[c],
                    BoundFlag::Lower => x[c] - problem.state_bounds.lower[c],
                    BoundFlag::Upper => x[c] - problem.state_bounds.upper[c],
                };
                if flag != BoundFlag::Inactive {
                    t4[c] += w[i - 1] * r3[c];
                }
                flags_x.push(flag);
            }
            t3_rows.push(t3);
            a_x.push(flags_x);

            let g = h * &derivs.grad_u;
            let mut t6 = DVector::zeros(m_dim);
            let mut flags_u = Vec::with_capacity(m_dim);
            for c in 0..m_dim {
                let flag = bound_flag(
                    u[c],
                    u[c] - g[c],
                    problem.control_bounds.lower[c],
                    problem.control_bounds.upper[c],
                );
                t6[c] = match flag {
                    BoundFlag::Inactive => g[c],
                    BoundFlag::Lower => u[c] - problem.control_bounds.lower[c],
                    BoundFlag::Upper => u[c] - problem.control_bounds.upper[c],
                };
                flags_u.push(flag);
            }
            t6_rows.push(t6);
            a_u.push(flags_u);

            t4 -= (h * w[i - 1]) * &derivs.grad_x;
        }
        dynamics.push(t1_rows);
        costate.push(t3_rows);
        stationarity.push(t6_rows);
        costate_mesh.push(t4);
        active_u.push(a_u);
        active_x.push(a_x);
    }

    let x_final = &sol.states[k_count - 1][mesh.degrees[k_count - 1]];
    let transversality = problem.terminal_grad(x_final) - &sol.costate_terminal;

    Ok((
        KktResidual {
            dynamics,
            continuity,
            costate,
            costate_mesh,
            transversality,
            stationarity,
        },
        ActiveSet {
            control: active_u,
            state: active_x,
        },
    ))
}

/// Residual of the discrete optimality system at `sol`.
pub fn assemble_kkt_residual(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    problem: &ControlProblem,
    sol: &DiscreteSolution,
) -> Result<KktResidual> {
    assemble_kkt_system(mesh, schemes, problem, sol).map(|(r, _)| r)
}

/// Derivative of the residual at `sol` as a dense matrix over the
/// reduced unknowns, with bound-active rows frozen to the identity on
/// the corresponding variable (semismooth-Newton convention).
pub fn assemble_kkt_jacobian(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    problem: &ControlProblem,
    sol: &DiscreteSolution,
) -> Result<DMatrix<f64>> {
    let (_, active) = assemble_kkt_system(mesh, schemes, problem, sol)?;
    assemble_kkt_jacobian_with(mesh, schemes, problem, sol, &active)
}

/// Jacobian with a caller-supplied frozen active set.
pub fn assemble_kkt_jacobian_with(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    problem: &ControlProblem,
    sol: &DiscreteSolution,
    active: &ActiveSet,
) -> Result<DMatrix<f64>> {
    let k_count = mesh.interval_count();
    let n_dim = problem.state_dim;
    let m_dim = problem.control_dim;
    let layout = Layout::new(mesh, n_dim, m_dim);
    let dim = layout.dim();
    let mut jac = DMatrix::<f64>::zeros(dim, dim);

    let add_block = |jac: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>| {
        for r in 0..block.nrows() {
            for c in 0..block.ncols() {
                jac[(row + r, col + c)] += block[(r, c)];
            }
        }
    };
    let add_scaled_identity = |jac: &mut DMatrix<f64>, row: usize, col: usize, dim: usize, s: f64| {
        for r in 0..dim {
            jac[(row + r, col + r)] += s;
        }
    };

    for k in 0..k_count {
        let scheme = &schemes[k];
        let n = scheme.degree;
        let h = mesh.half_width(k);
        let d = &scheme.diff;
        let ddag = &scheme.dddag;
        let w = &scheme.weights;
        let lam_next_col = if k + 1 < k_count {
            layout.lam_mesh(k + 1)
        } else {
            layout.lam_terminal()
        };

        let t4_row = layout.row_t4(k);
        add_scaled_identity(&mut jac, t4_row, layout.lam_mesh(k), n_dim, 1.0);
        add_scaled_identity(&mut jac, t4_row, lam_next_col, n_dim, -1.0);

        for i in 1..=n {
            let x = &sol.states[k][i];
            let u = &sol.controls[k][i - 1];
            let lam = &sol.costates[k][i];
            let derivs = hamiltonian_derivatives(problem, x, u, lam);
            let a = problem.dynamics_jac_x(x, u);
            let b = problem.dynamics_jac_u(x, u);
            let at = a.transpose();

            // T1 rows
            let t1_row = layout.row_t1(k, i);
            for j in 1..=n {
                add_scaled_identity(&mut jac, t1_row, layout.x(k, j), n_dim, d[(i - 1, j)]);
            }
            if k > 0 {
                add_scaled_identity(
                    &mut jac,
                    t1_row,
                    layout.x(k - 1, mesh.degrees[k - 1]),
                    n_dim,
                    d[(i - 1, 0)],
                );
            }
            add_block(&mut jac, t1_row, layout.x(k, i), &(-h * &a));
            add_block(&mut jac, t1_row, layout.u(k, i), &(-h * &b));

            // T6 rows: smooth branch h(SᵀdX + RdU + BᵀdΛ), active rows dU = 0 target
            let t6_row = layout.row_t6(k, i);
            let st = derivs.s.transpose();
            let bt = b.transpose();
            for c in 0..m_dim {
                if active.control[k][i - 1][c] == BoundFlag::Inactive {
                    for cc in 0..n_dim {
                        jac[(t6_row + c, layout.x(k, i) + cc)] += h * st[(c, cc)];
                        jac[(t6_row + c, layout.lam(k, i) + cc)] += h * bt[(c, cc)];
                    }
                    for cc in 0..m_dim {
                        jac[(t6_row + c, layout.u(k, i) + cc)] += h * derivs.r[(c, cc)];
                    }
                } else {
                    jac[(t6_row + c, layout.u(k, i) + c)] = 1.0;
                }
            }

            // T3 rows: smooth branch D‡ + h(AᵀdΛ + QdX + SdU), active rows dX = 0 target
            let t3_row = layout.row_t3(k, i);
            for c in 0..n_dim {
                if active.state[k][i - 1][c] == BoundFlag::Inactive {
                    for j in 1..=n {
                        jac[(t3_row + c, layout.lam(k, j) + c)] += ddag[(i - 1, j - 1)];
                    }
                    for cc in 0..n_dim {
                        jac[(t3_row + c, layout.lam(k, i) + cc)] += h * at[(c, cc)];
                        jac[(t3_row + c, layout.x(k, i) + cc)] += h * derivs.q[(c, cc)];
                    }
                    for cc in 0..m_dim {
                        jac[(t3_row + c, layout.u(k, i) + cc)] += h * derivs.s[(c, cc)];
                    }
                    if i == n {
                        jac[(t3_row + c, lam_next_col + c)] += 1.0 / w[n - 1];
                    }
                } else {
                    jac[(t3_row + c, layout.x(k, i) + c)] = 1.0;
                }
            }

            // T4 row accumulations
            let hw = h * w[i - 1];
            add_block(&mut jac, t4_row, layout.lam(k, i), &(-hw * &at));
            add_block(&mut jac, t4_row, layout.x(k, i), &(-hw * &derivs.q));
            add_block(&mut jac, t4_row, layout.u(k, i), &(-hw * &derivs.s));
            // bound-active states feed their smooth residual back into
            // the mesh-point aggregation
            for c in 0..n_dim {
                if active.state[k][i - 1][c] != BoundFlag::Inactive {
                    let wi = w[i - 1];
                    for j in 1..=n {
                        jac[(t4_row + c, layout.lam(k, j) + c)] += wi * ddag[(i - 1, j - 1)];
                    }
                    for cc in 0..n_dim {
                        jac[(t4_row + c, layout.lam(k, i) + cc)] += hw * at[(c, cc)];
                        jac[(t4_row + c, layout.x(k, i) + cc)] += hw * derivs.q[(c, cc)];
                    }
                    for cc in 0..m_dim {
                        jac[(t4_row + c, layout.u(k, i) + cc)] += hw * derivs.s[(c, cc)];
                    }
                    if i == n {
                        jac[(t4_row + c, lam_next_col + c)] += wi / w[n - 1];
                    }
                }
            }
        }
    }

    // T5 rows
    let x_final = &sol.states[k_count - 1][mesh.degrees[k_count - 1]];
    let t5_row = layout.row_t5();
    add_block(
        &mut jac,
        t5_row,
        layout.x(k_count - 1, mesh.degrees[k_count - 1]),
        &problem.terminal_hess(x_final),
    );
    add_scaled_identity(&mut jac, t5_row, layout.lam_terminal(), n_dim, -1.0);

    Ok(jac)
}

/// Multipliers of the discrete problem: collocation-point values per
/// interval, mesh-point values, and the terminal value.
#[derive(Debug, Clone)]
pub struct MultiplierSet {
    pub colloc: Vec<Vec<DVector<f64>>>,
    pub mesh: Vec<DVector<f64>>,
    pub terminal: DVector<f64>,
}

/// Scales raw KKT multipliers into costate-polynomial samples:
/// `Λ_{ki} = λ_{ki}/ω_i` for `i ≥ 1`; mesh and terminal values are
/// unchanged.
pub fn transform_multipliers(raw: &MultiplierSet, schemes: &[Arc<RadauScheme>]) -> MultiplierSet {
    let colloc = raw
        .colloc
        .iter()
        .zip(schemes)
        .map(|(rows, s)| {
            rows.iter()
                .enumerate()
                .map(|(idx, v)| v / s.weights[idx])
                .collect()
        })
        .collect();
    MultiplierSet {
        colloc,
        mesh: raw.mesh.clone(),
        terminal: raw.terminal.clone(),
    }
}

/// Inverse of [`transform_multipliers`].
pub fn untransform_multipliers(
    transformed: &MultiplierSet,
    schemes: &[Arc<RadauScheme>],
) -> MultiplierSet {
    let colloc = transformed
        .colloc
        .iter()
        .zip(schemes)
        .map(|(rows, s)| {
            rows.iter()
                .enumerate()
                .map(|(idx, v)| v * s.weights[idx])
                .collect()
        })
        .collect();
    MultiplierSet {
        colloc,
        mesh: transformed.mesh.clone(),
        terminal: transformed.terminal.clone(),
    }
}

/// Extracts the multiplier content of a solution (transformed form).
pub fn multipliers_of(sol: &DiscreteSolution) -> MultiplierSet {
    MultiplierSet {
        colloc: sol
            .costates
            .iter()
            .map(|rows| rows[1..].to_vec())
            .collect(),
        mesh: sol.costates.iter().map(|rows| rows[0].clone()).collect(),
        terminal: sol.costate_terminal.clone(),
    }
}

/// Evaluates the degree-`N-1` costate polynomial through the samples
/// `Λ_{k1}…Λ_{kN}` at reference coordinate `τ`.
pub fn costate_polynomial_at(
    scheme: &RadauScheme,
    samples: &[DVector<f64>],
    tau: f64,
) -> DVector<f64> {
    let nodes: Vec<f64> = scheme.nodes.iter().skip(1).copied().collect();
    barycentric_eval(&nodes, &scheme.bary_colloc, samples, tau)
}

/// Barycentric evaluation of the discrete solution at time `t`.
///
/// The state uses all `N+1` nodes; the costate polynomial and the
/// degree-`N-1` control interpolant use the collocation subset.  At an
/// interior mesh point the left interval supplies the costate and
/// control.  The control interpolant is a convenience with no claimed
/// convergence rate.
pub fn interpolate_solution(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    sol: &DiscreteSolution,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let k = mesh.locate(t)?;
    let scheme = &schemes[k];
    let tau = (t - mesh.midpoint(k)) / mesh.half_width(k);
    let full_nodes: Vec<f64> = scheme.nodes.iter().copied().collect();
    let x = barycentric_eval(&full_nodes, &scheme.bary_full, &sol.states[k], tau);
    let u = barycentric_eval(&full_nodes[1..], &scheme.bary_colloc, &sol.controls[k], tau);
    let lam = costate_polynomial_at(scheme, &sol.costates[k][1..], tau);
    Ok((x, u, lam))
}

/// Forward marching solve of the linearized state dynamics
/// `Σ_j D_ij X_kj = h A_ki X_ki + p_ki`, `X_k0 = X_{k-1,N} + q_k`,
/// `X_0N = 0`.
///
/// Per interval the `Nn × Nn` system
/// `(I − h D_{1:N}⁻¹ ⊗ blockdiag(A)) X̄ = D_{1:N}⁻¹ p + 1 ⊗ X_k0`
/// is solved by dense LU; `D_{1:N}⁻¹ D₀ = -1` collapses the mesh-point
/// coupling to the constant term.  Returns per-interval values with the
/// mesh point in slot 0.
pub fn solve_linearized_state(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    a_blocks: &[Vec<DMatrix<f64>>],
    p: &[Vec<DVector<f64>>],
    q: &[DVector<f64>],
) -> Result<Vec<Vec<DVector<f64>>>> {
    let k_count = mesh.interval_count();
    let n_dim = q[0].len();
    let mut out = Vec::with_capacity(k_count);
    let mut prev_end = DVector::zeros(n_dim);
    for k in 0..k_count {
        let scheme = &schemes[k];
        let n = scheme.degree;
        let h = mesh.half_width(k);
        let dinv = &scheme.diff_sub_inv;
        let x0 = &prev_end + &q[k];

        let mut m = DMatrix::<f64>::identity(n * n_dim, n * n_dim);
        let mut rhs = DVector::<f64>::zeros(n * n_dim);
        for i in 0..n {
            let mut acc = x0.clone();
            for j in 0..n {
                let s = dinv[(i, j)];
                acc += s * &p[k][j];
                let block = -h * s * &a_blocks[k][j];
                for r in 0..n_dim {
                    for c in 0..n_dim {
                        m[(i * n_dim + r, j * n_dim + c)] += block[(r, c)];
                    }
                }
            }
            rhs.rows_mut(i * n_dim, n_dim).copy_from(&acc);
        }
        let sol = m.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
        let mut rows = Vec::with_capacity(n + 1);
        rows.push(x0);
        for i in 0..n {
            rows.push(sol.rows(i * n_dim, n_dim).into_owned());
        }
        prev_end = rows[n].clone();
        out.push(rows);
    }
    Ok(out)
}

/// Backward marching solve of the linearized costate dynamics
/// `Σ_j D‡_ij Λ_kj = p_ki − h A_kiᵀ Λ_ki` (with the terminal coupling
/// `−Λ_{k+1,0}/ω_N` in row `N`) and
/// `Λ_k0 = Λ_{k+1,0} + q_k + h Σ_i ω_i A_kiᵀ Λ_ki`.
///
/// Per interval `(I + h (D‡)⁻¹ ⊗ blockdiag(Aᵀ)) Λ̄ = (D‡)⁻¹ p + 1 ⊗ Λ_{k+1,0}`.
/// Returns per-interval values with `Λ_k0` in slot 0.
pub fn solve_linearized_costate(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    a_blocks: &[Vec<DMatrix<f64>>],
    p: &[Vec<DVector<f64>>],
    q: &[DVector<f64>],
    lam_terminal: &DVector<f64>,
) -> Result<Vec<Vec<DVector<f64>>>> {
    let k_count = mesh.interval_count();
    let n_dim = lam_terminal.len();
    let mut out = vec![Vec::new(); k_count];
    let mut lam_next = lam_terminal.clone();
    for k in (0..k_count).rev() {
        let scheme = &schemes[k];
        let n = scheme.degree;
        let h = mesh.half_width(k);
        let dinv = &scheme.dddag_inv;

        let mut m = DMatrix::<f64>::identity(n * n_dim, n * n_dim);
        let mut rhs = DVector::<f64>::zeros(n * n_dim);
        for i in 0..n {
            let mut acc = lam_next.clone();
            for j in 0..n {
                let s = dinv[(i, j)];
                acc += s * &p[k][j];
                let block = h * s * a_blocks[k][j].transpose();
                for r in 0..n_dim {
                    for c in 0..n_dim {
                        m[(i * n_dim + r, j * n_dim + c)] += block[(r, c)];
                    }
                }
            }
            rhs.rows_mut(i * n_dim, n_dim).copy_from(&acc);
        }
        let sol = m.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
        let mut rows = Vec::with_capacity(n + 1);
        let mut lam0 = &lam_next + &q[k];
        for i in 0..n {
            let lam_i = sol.rows(i * n_dim, n_dim).into_owned();
            lam0 += (h * scheme.weights[i]) * (a_blocks[k][i].transpose() * &lam_i);
            rows.push(lam_i);
        }
        rows.insert(0, lam0.clone());
        lam_next = lam0;
        out[k] = rows;
    }
    Ok(out)
}

/// Stability and convexity diagnostics along a trajectory.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AssumptionReport {
    /// `sup_t ‖∇ₓf‖_∞` over the sample grid.
    pub d1: f64,
    /// Same for the transpose.
    pub d2: f64,
    /// Whether `2 h max(d₁, d₂) < 1` for the largest half-width.
    pub a2_ok: bool,
    /// Smallest eigenvalue over the grid of the Hamiltonian Hessian
    /// `[[Q, S], [Sᵀ, R]]` and of `∇²C` at the final state.
    pub min_hessian_eig: f64,
}

/// Samples the reference trajectory on a dense grid and evaluates the
/// stability constants `d₁`, `d₂` and the convexity floor.  A missing
/// reference costate is treated as zero, which leaves problems whose
/// Hamiltonian Hessian does not depend on `λ` unaffected.
pub fn assumption_diagnostics(
    problem: &ControlProblem,
    reference: &AnalyticReference,
    mesh: &HpMesh,
) -> AssumptionReport {
    const GRID: usize = 10_000;
    let (t0, t1) = problem.horizon;
    let mut d1: f64 = 0.0;
    let mut d2: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let n = problem.state_dim;
    let m = problem.control_dim;
    for g in 0..=GRID {
        let t = t0 + (t1 - t0) * g as f64 / GRID as f64;
        let x = reference.state_at(t);
        let u = reference.control_at(t);
        let lam = reference
            .costate_at(t)
            .unwrap_or_else(|| DVector::zeros(n));
        let a = problem.dynamics_jac_x(&x, &u);
        let row_sum = (0..n)
            .map(|i| (0..n).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let col_sum = (0..n)
            .map(|j| (0..n).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        d1 = d1.max(row_sum);
        d2 = d2.max(col_sum);

        let derivs = hamiltonian_derivatives(problem, &x, &u, &lam);
        let mut hess = DMatrix::<f64>::zeros(n + m, n + m);
        hess.view_mut((0, 0), (n, n)).copy_from(&derivs.q);
        hess.view_mut((0, n), (n, m)).copy_from(&derivs.s);
        hess.view_mut((n, 0), (m, n)).copy_from(&derivs.s.transpose());
        hess.view_mut((n, n), (m, m)).copy_from(&derivs.r);
        if let Some(eig) = nalgebra::SymmetricEigen::try_new(hess, 1e2 * f64::EPSILON, 0) {
            min_eig = min_eig.min(eig.eigenvalues.min());
        }
    }
    let x_end = reference.state_at(t1);
    let c_hess = problem.terminal_hess(&x_end);
    if let Some(eig) = nalgebra::SymmetricEigen::try_new(c_hess, 1e2 * f64::EPSILON, 0) {
        min_eig = min_eig.min(eig.eigenvalues.min());
    }
    let h_max = (0..mesh.interval_count())
        .map(|k| mesh.half_width(k))
        .fold(0.0, f64::max);
    AssumptionReport {
        d1,
        d2,
        a2_ok: 2.0 * h_max * d1.max(d2) < 1.0,
        min_hessian_eig: min_eig,
    }
}
