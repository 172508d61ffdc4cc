//! Semismooth Newton solver for the discrete optimality system.
//!
//! Each outer iteration freezes the bound-activity pattern of the
//! projected residual, solves the resulting linear system by dense LU,
//! and backtracks on the sup-norm of the KKT residual.  Iterates are
//! projected onto the boxes after every step, so bounds hold exactly
//! throughout.  Active-set changes happen implicitly when the natural
//! map flips a component between iterations; the monotone merit
//! requirement prevents cycling.
//!
//! A transiently degenerate active set (for example every state of an
//! interval frozen while a control freezes too) can make the frozen
//! system singular; the step then falls back to an SVD least-squares
//! direction, which keeps the iteration deterministic and lets the
//! pattern settle.

use nalgebra::{DMatrix, DVector};

use crate::ocp::{hamiltonian_derivatives, ControlProblem};
use crate::transcription::{
    assemble_kkt_jacobian_with, assemble_kkt_system, schemes_for_mesh, DiscreteSolution, HpMesh,
    Layout,
};
use crate::{Error, Result};
use std::sync::Arc;

/// Starting point for the Newton iteration.
#[derive(Debug, Clone, Default)]
pub enum InitStrategy {
    /// Everything zero (projected onto the boxes).
    Zeros,
    /// State constant at the initial condition, controls at the
    /// projection of zero, costate at `∇C` of the state guess.
    LinearState,
    /// State from marching the dynamics with the projected-zero
    /// control, costate from the exact solve of the (linear) costate
    /// rows at that trajectory.  Default; markedly more robust than
    /// the constant guess on nonlinear problems.
    #[default]
    Simulate,
    /// Start from a supplied solution.
    WarmStart(DiscreteSolution),
}

/// Solver options.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Composite KKT residual target.
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitStrategy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 200,
            init: InitStrategy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Converged,
    MaxIterExceeded,
    LineSearchStall,
    SingularSystem,
}

/// Iteration record returned alongside the solution.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub status: SolveStatus,
    pub iterations: usize,
    /// Sup-norm of the final KKT residual.
    pub residual_sup: f64,
    /// Weighted composite norm of the final KKT residual.
    pub residual_composite: f64,
    /// Number of bound-active components per iteration.
    pub active_set_sizes: Vec<usize>,
    /// Accepted line-search step length per iteration.
    pub step_lengths: Vec<f64>,
    /// Smallest eigenvalue over the block-diagonal Lagrangian Hessian
    /// blocks `ω_i ∇²H` (plus `∇²C` on the final block).
    pub min_hessian_block_eig: f64,
    /// Whether that eigenvalue is strictly positive (tolerance 1e-12).
    pub second_order_ok: bool,
    /// `2 h max(d₁, d₂) < 1` sampled along the returned solution.
    pub a2_ok: bool,
}

impl SolveStats {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

// 2^-30
const MIN_STEP: f64 = 1.0 / 1_073_741_824.0;

/// Solves the frozen Newton system `J d = -r` to relative accuracy
/// 1e-11, with one round of iterative refinement before giving up.
pub fn newton_step(jacobian: &DMatrix<f64>, residual: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = -residual;
    let lu = jacobian.clone().lu();
    let mut d = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
    let scale = 1.0 + rhs.amax();
    let check = |d: &DVector<f64>| (jacobian * d - &rhs).amax();
    if check(&d) > 1e-11 * scale {
        let correction = lu
            .solve(&(&rhs - jacobian * &d))
            .ok_or(Error::SingularSystem)?;
        d += correction;
        if check(&d) > 1e-11 * scale || !d.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularSystem);
        }
    }
    Ok(d)
}

fn least_squares_step(jacobian: &DMatrix<f64>, residual: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = jacobian.clone().svd(true, true);
    svd.solve(&(-residual), 1e-12)
        .map_err(|_| Error::SingularSystem)
}

// Clamp onto the box; values within the tie tolerance of a bound are
// snapped onto it so frozen active rows land on the bound exactly.
fn clamp_snap(v: f64, lower: f64, upper: f64) -> f64 {
    let v = v.clamp(lower, upper);
    if upper.is_finite() && (v - upper).abs() <= 1e-12 * (1.0 + upper.abs()) {
        upper
    } else if lower.is_finite() && (v - lower).abs() <= 1e-12 * (1.0 + lower.abs()) {
        lower
    } else {
        v
    }
}

fn project_theta(layout: &Layout, problem: &ControlProblem, theta: &mut DVector<f64>) {
    for k in 0..layout.degrees.len() {
        for i in 1..=layout.degrees[k] {
            for c in 0..layout.control_dim {
                let idx = layout.u(k, i) + c;
                theta[idx] = clamp_snap(
                    theta[idx],
                    problem.control_bounds.lower[c],
                    problem.control_bounds.upper[c],
                );
            }
            for c in 0..layout.state_dim {
                let idx = layout.x(k, i) + c;
                theta[idx] = clamp_snap(
                    theta[idx],
                    problem.state_bounds.lower[c],
                    problem.state_bounds.upper[c],
                );
            }
        }
    }
}

/// Marches the collocated dynamics forward with a fixed control,
/// solving each interval's nonlinear system by a damped Newton
/// iteration.  Used to build the default initial state guess.
fn simulate_states(
    mesh: &HpMesh,
    schemes: &[Arc<crate::radau::RadauScheme>],
    problem: &ControlProblem,
    control: &DVector<f64>,
) -> Vec<Vec<DVector<f64>>> {
    let n_dim = problem.state_dim;
    let mut out = Vec::with_capacity(mesh.interval_count());
    let mut prev = problem.initial_state.clone();
    for k in 0..mesh.interval_count() {
        let scheme = &schemes[k];
        let n = scheme.degree;
        let h = mesh.half_width(k);
        let mut vals = vec![prev.clone(); n];
        for _ in 0..40 {
            let mut residual = DVector::<f64>::zeros(n * n_dim);
            let mut jac = DMatrix::<f64>::zeros(n * n_dim, n * n_dim);
            for i in 1..=n {
                let mut r = scheme.diff[(i - 1, 0)] * &prev - h * problem.dynamics(&vals[i - 1], control);
                for j in 1..=n {
                    r += scheme.diff[(i - 1, j)] * &vals[j - 1];
                }
                residual.rows_mut((i - 1) * n_dim, n_dim).copy_from(&r);
                let a = problem.dynamics_jac_x(&vals[i - 1], control);
                for rr in 0..n_dim {
                    for cc in 0..n_dim {
                        jac[((i - 1) * n_dim + rr, (i - 1) * n_dim + cc)] -= h * a[(rr, cc)];
                    }
                }
                for j in 1..=n {
                    for rr in 0..n_dim {
                        jac[((i - 1) * n_dim + rr, (j - 1) * n_dim + rr)] += scheme.diff[(i - 1, j)];
                    }
                }
            }
            if residual.amax() <= 1e-12 {
                break;
            }
            match jac.lu().solve(&(-&residual)) {
                Some(step) => {
                    let mut damping = 1.0;
                    // crude safeguard against blow-up in the guess
                    if step.amax() > 10.0 * (1.0 + prev.amax()) {
                        damping = 10.0 * (1.0 + prev.amax()) / step.amax();
                    }
                    for i in 0..n {
                        let s = step.rows(i * n_dim, n_dim) * damping;
                        vals[i] += s;
                    }
                }
                None => break,
            }
        }
        let mut rows = Vec::with_capacity(n + 1);
        rows.push(prev.clone());
        rows.extend(vals.iter().cloned());
        prev = rows[n].clone();
        out.push(rows);
    }
    out
}

fn initial_guess(
    mesh: &HpMesh,
    schemes: &[Arc<crate::radau::RadauScheme>],
    problem: &ControlProblem,
    layout: &Layout,
    init: &InitStrategy,
) -> DVector<f64> {
    let n_dim = problem.state_dim;
    let mut sol = DiscreteSolution::zeros(mesh, n_dim, problem.control_dim);
    let u0 = problem.control_bounds.project(&DVector::zeros(problem.control_dim));
    match init {
        InitStrategy::WarmStart(warm) => return layout.pack(warm),
        InitStrategy::Zeros => {
            for k in 0..mesh.interval_count() {
                for i in 0..mesh.degrees[k] {
                    sol.controls[k][i] = u0.clone();
                }
            }
        }
        InitStrategy::LinearState => {
            let grad = problem.terminal_grad(&problem.initial_state);
            for k in 0..mesh.interval_count() {
                for i in 0..=mesh.degrees[k] {
                    sol.states[k][i] = problem.initial_state.clone();
                    sol.costates[k][i] = grad.clone();
                }
                for i in 0..mesh.degrees[k] {
                    sol.controls[k][i] = u0.clone();
                }
            }
            sol.costate_terminal = grad;
        }
        InitStrategy::Simulate => {
            sol.states = simulate_states(mesh, schemes, problem, &u0);
            for k in 0..mesh.interval_count() {
                for i in 0..mesh.degrees[k] {
                    sol.controls[k][i] = u0.clone();
                }
            }
            // costate rows are linear in Λ for fixed (X, U); solve them
            // exactly from the smooth branch as the costate guess
            if let Some(lam) = consistent_costate(mesh, schemes, problem, &sol, layout) {
                return lam;
            }
            let grad = problem.terminal_grad(&problem.initial_state);
            for k in 0..mesh.interval_count() {
                for i in 0..=mesh.degrees[k] {
                    sol.costates[k][i] = grad.clone();
                }
            }
            sol.costate_terminal = grad;
        }
    }
    layout.pack(&sol)
}

/// Solves the smooth costate rows (T3, T4, T5) for Λ at fixed (X, U),
/// returning the packed full vector with the costate entries filled in.
fn consistent_costate(
    mesh: &HpMesh,
    schemes: &[Arc<crate::radau::RadauScheme>],
    problem: &ControlProblem,
    sol: &DiscreteSolution,
    layout: &Layout,
) -> Option<DVector<f64>> {
    let zero_lam = {
        let mut s = sol.clone();
        for k in 0..mesh.interval_count() {
            for i in 0..=mesh.degrees[k] {
                s.costates[k][i] = DVector::zeros(problem.state_dim);
            }
        }
        s.costate_terminal = DVector::zeros(problem.state_dim);
        s
    };
    let (res, active) = assemble_kkt_system(mesh, schemes, problem, &zero_lam).ok()?;
    // force the smooth branch: the guess must see the unprojected rows
    let smooth = crate::transcription::ActiveSet {
        control: active
            .control
            .iter()
            .map(|rows| rows.iter().map(|r| vec![crate::transcription::BoundFlag::Inactive; r.len()]).collect())
            .collect(),
        state: active
            .state
            .iter()
            .map(|rows| rows.iter().map(|r| vec![crate::transcription::BoundFlag::Inactive; r.len()]).collect())
            .collect(),
    };
    let jac = assemble_kkt_jacobian_with(mesh, schemes, problem, &zero_lam, &smooth).ok()?;
    // indices of costate unknowns and of their defining rows
    let mut idx = Vec::new();
    for k in 0..mesh.interval_count() {
        for i in 1..=mesh.degrees[k] {
            for c in 0..problem.state_dim {
                idx.push(layout.lam(k, i) + c);
            }
        }
    }
    for k in 0..mesh.interval_count() {
        for c in 0..problem.state_dim {
            idx.push(layout.lam_mesh(k) + c);
        }
    }
    for c in 0..problem.state_dim {
        idx.push(layout.lam_terminal() + c);
    }
    let m = idx.len();
    let mut sub = DMatrix::<f64>::zeros(m, m);
    let mut rhs = DVector::<f64>::zeros(m);
    // smooth residual at Λ = 0, with T3 rows unprojected
    let flat = {
        let mut s = res.clone();
        // recompute the unprojected T3 rows directly
        for k in 0..mesh.interval_count() {
            let h = mesh.half_width(k);
            for i in 1..=mesh.degrees[k] {
                let x = &zero_lam.states[k][i];
                let u = &zero_lam.controls[k][i - 1];
                let lam = &zero_lam.costates[k][i];
                let derivs = hamiltonian_derivatives(problem, x, u, lam);
                s.costate[k][i - 1] = h * derivs.grad_x;
                s.stationarity[k][i - 1] = h * derivs.grad_u;
            }
        }
        layout.flatten_residual(&s)
    };
    for (r, &ri) in idx.iter().enumerate() {
        rhs[r] = -flat[ri];
        for (c, &ci) in idx.iter().enumerate() {
            sub[(r, c)] = jac[(ri, ci)];
        }
    }
    let lam = sub.lu().solve(&rhs)?;
    let mut theta = layout.pack(&zero_lam);
    for (c, &ci) in idx.iter().enumerate() {
        theta[ci] = lam[c];
    }
    Some(theta)
}

/// Smallest eigenvalue of the block-diagonal Lagrangian Hessian, blocks
/// `ω_i ∇²_{(x,u)}H(X_ki, U_ki, Λ_ki)` with `∇²C` added to the final
/// block.
fn min_hessian_block_eig(
    mesh: &HpMesh,
    schemes: &[Arc<crate::radau::RadauScheme>],
    problem: &ControlProblem,
    sol: &DiscreteSolution,
) -> f64 {
    let n = problem.state_dim;
    let m = problem.control_dim;
    let k_count = mesh.interval_count();
    let mut min_eig = f64::INFINITY;
    for k in 0..k_count {
        let scheme = &schemes[k];
        for i in 1..=scheme.degree {
            let derivs = hamiltonian_derivatives(
                problem,
                &sol.states[k][i],
                &sol.controls[k][i - 1],
                &sol.costates[k][i],
            );
            let w = scheme.weights[i - 1];
            let mut block = DMatrix::<f64>::zeros(n + m, n + m);
            block.view_mut((0, 0), (n, n)).copy_from(&(w * &derivs.q));
            block.view_mut((0, n), (n, m)).copy_from(&(w * &derivs.s));
            block
                .view_mut((n, 0), (m, n))
                .copy_from(&(w * derivs.s.transpose()));
            block.view_mut((n, n), (m, m)).copy_from(&(w * &derivs.r));
            if k == k_count - 1 && i == scheme.degree {
                let ch = problem.terminal_hess(&sol.states[k][i]);
                for r in 0..n {
                    for c in 0..n {
                        block[(r, c)] += ch[(r, c)];
                    }
                }
            }
            if let Some(eig) = nalgebra::SymmetricEigen::try_new(block, 1e2 * f64::EPSILON, 0) {
                min_eig = min_eig.min(eig.eigenvalues.min());
            }
        }
    }
    min_eig
}

fn a2_along_solution(mesh: &HpMesh, problem: &ControlProblem, sol: &DiscreteSolution) -> bool {
    let n = problem.state_dim;
    let mut d = 0.0f64;
    for k in 0..mesh.interval_count() {
        for i in 1..=mesh.degrees[k] {
            let a = problem.dynamics_jac_x(&sol.states[k][i], &sol.controls[k][i - 1]);
            let row = (0..n)
                .map(|r| (0..n).map(|c| a[(r, c)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let col = (0..n)
                .map(|c| (0..n).map(|r| a[(r, c)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            d = d.max(row.max(col));
        }
    }
    let h_max = (0..mesh.interval_count())
        .map(|k| mesh.half_width(k))
        .fold(0.0, f64::max);
    2.0 * h_max * d < 1.0
}

/// Solves the discretized problem to a KKT point.
///
/// Always returns the best iterate found; `stats.status` reports
/// convergence or the failure mode.
pub fn solve(
    problem: &ControlProblem,
    mesh: &HpMesh,
    schemes: &[Arc<crate::radau::RadauScheme>],
    options: &SolveOptions,
) -> Result<(DiscreteSolution, SolveStats)> {
    if schemes.len() != mesh.interval_count() {
        return Err(Error::DimensionMismatch("schemes/mesh".into()));
    }
    let layout = Layout::new(mesh, problem.state_dim, problem.control_dim);
    let mut theta = initial_guess(mesh, schemes, problem, &layout, &options.init);
    project_theta(&layout, problem, &mut theta);

    let mut active_sizes = Vec::new();
    let mut step_lengths = Vec::new();
    let status;
    let mut iterations = 0;
    let mut sup;
    let mut composite;

    let mut sol = layout.unpack(&theta, &problem.initial_state);
    loop {
        let (res, active) = assemble_kkt_system(mesh, schemes, problem, &sol)?;
        sup = res.sup_norm();
        composite = res.composite_norm(mesh, schemes);
        active_sizes.push(active.active_count());
        if sup <= options.tol && composite <= options.tol {
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= options.max_iter {
            status = SolveStatus::MaxIterExceeded;
            break;
        }
        iterations += 1;

        let jac = assemble_kkt_jacobian_with(mesh, schemes, problem, &sol, &active)?;
        let flat = layout.flatten_residual(&res);
        let direction = match newton_step(&jac, &flat) {
            Ok(d) => d,
            Err(Error::SingularSystem) => match least_squares_step(&jac, &flat) {
                Ok(d) => d,
                Err(_) => {
                    status = SolveStatus::SingularSystem;
                    break;
                }
            },
            Err(e) => return Err(e),
        };

        // backtracking on the sup-norm merit, projecting each trial
        let mut step = 1.0;
        let mut accepted = false;
        while step >= MIN_STEP {
            let mut trial = &theta + step * &direction;
            project_theta(&layout, problem, &mut trial);
            let trial_sol = layout.unpack(&trial, &problem.initial_state);
            let (trial_res, _) = assemble_kkt_system(mesh, schemes, problem, &trial_sol)?;
            if trial_res.sup_norm() < sup {
                theta = trial;
                sol = trial_sol;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            status = SolveStatus::LineSearchStall;
            break;
        }
        step_lengths.push(step);
    }

    let min_eig = min_hessian_block_eig(mesh, schemes, problem, &sol);
    let stats = SolveStats {
        status,
        iterations,
        residual_sup: sup,
        residual_composite: composite,
        active_set_sizes: active_sizes,
        step_lengths,
        min_hessian_block_eig: min_eig,
        second_order_ok: min_eig > 1e-12,
        a2_ok: a2_along_solution(mesh, problem, &sol),
    };
    Ok((sol, stats))
}

/// Convenience wrapper building the schemes from the process cache.
pub fn solve_with_default_schemes(
    problem: &ControlProblem,
    mesh: &HpMesh,
    options: &SolveOptions,
) -> Result<(DiscreteSolution, SolveStats)> {
    let schemes = schemes_for_mesh(mesh)?;
    solve(problem, mesh, &schemes, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ocp::builtin_problem;
    use crate::transcription::{assemble_kkt_residual, BoundFlag};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn newton_step_zero_residual_gives_zero_step() {
        let jac = DMatrix::<f64>::identity(4, 4);
        let r = DVector::zeros(4);
        let d = newton_step(&jac, &r).unwrap();
        assert_eq!(d.amax(), 0.0);
    }

    #[test]
    fn newton_step_rejects_singular_systems() {
        let jac = DMatrix::<f64>::zeros(3, 3);
        let r = DVector::from_element(3, 1.0);
        assert!(matches!(newton_step(&jac, &r), Err(Error::SingularSystem)));
    }

    #[test]
    fn example1_converges_with_accurate_solution() {
        let (problem, reference) = builtin_problem("example1").unwrap();
        let mesh = HpMesh::uniform((0.0, 2.0), 10, 2).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let (sol, stats) = solve(&problem, &mesh, &schemes, &SolveOptions::default()).unwrap();
        assert!(stats.converged(), "{stats:?}");
        assert!(stats.residual_sup <= 1e-10);
        let mut err_x = 0.0f64;
        let mut err_u = 0.0f64;
        for k in 0..10 {
            for i in 1..=2 {
                let t = mesh.time_of(k, schemes[k].nodes[i]);
                err_x = err_x.max((sol.states[k][i][0] - reference.state_at(t)[0]).abs());
                err_u = err_u.max((sol.controls[k][i - 1][0] - reference.control_at(t)[0]).abs());
            }
        }
        // N = 2 converges at h^{N+1}: ~3e-4 at K = 10
        assert!(err_x <= 1e-3, "state error {err_x:e}");
        assert!(err_u <= 1e-3, "control error {err_u:e}");
        // independent assembly confirms the KKT point
        let res = assemble_kkt_residual(&mesh, &schemes, &problem, &sol).unwrap();
        assert!(res.sup_norm() <= 1e-10);
        assert!(res.composite_norm(&mesh, &schemes) <= 1e-10);
        assert!(stats.a2_ok);
        // the Hamiltonian Hessian of this problem is indefinite along
        // the solution (zero xx block with a nonzero cross term), so
        // the block-diagonal second-order check reports negative
        assert!(!stats.second_order_ok);
        assert!(stats.min_hessian_block_eig < 0.0);
    }

    #[test]
    fn example2_three_interval_mesh_active_sets() {
        let (problem, _) = builtin_problem("example2").unwrap();
        let mesh =
            HpMesh::from_breakpoints(vec![0.0, 0.25, 0.75, 1.0], vec![10, 10, 10]).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let opts = SolveOptions {
            tol: 1e-11,
            ..Default::default()
        };
        let (sol, stats) = solve(&problem, &mesh, &schemes, &opts).unwrap();
        assert!(stats.converged(), "{stats:?}");
        let (_, active) = assemble_kkt_system(&mesh, &schemes, &problem, &sol).unwrap();
        // control at its bound on every collocation point of [0, 1/4]
        for i in 0..10 {
            assert_eq!(active.control[0][i][0], BoundFlag::Upper, "i={i}");
            assert_eq!(sol.controls[0][i][0], 1.0);
        }
        // state at its bound on every collocation point of [3/4, 1]
        let e = std::f64::consts::E;
        let bound = 2.0 * e.sqrt() / (1.0 - e);
        for i in 0..10 {
            assert_eq!(active.state[2][i][0], BoundFlag::Upper, "i={i}");
            assert_eq!(sol.states[2][i + 1][0], bound);
        }
        // interior of the middle interval stays inactive
        for i in 1..9 {
            assert_eq!(active.control[1][i][0], BoundFlag::Inactive);
        }
        // LQ structure: few iterations per active-set change
        assert!(stats.iterations <= 30, "{}", stats.iterations);
        assert!(stats.second_order_ok);
        assert!(stats.min_hessian_block_eig > 0.0);
    }

    #[test]
    fn lq_problem_with_fixed_active_set_converges_in_one_step() {
        // unconstrained LQ: affine residual, exact Newton step
        let problem = crate::ocp::ControlProblem::builder(1, 1)
            .horizon(0.0, 1.0)
            .initial_state(scalar(1.0))
            .dynamics(
                |x, u| scalar(-x[0] + u[0]),
                |_x, _u| DMatrix::from_element(1, 1, -1.0),
                |_x, _u| DMatrix::from_element(1, 1, 1.0),
            )
            .terminal_cost(
                |x| 0.5 * x[0] * x[0],
                |x| x.clone(),
                |_x| DMatrix::identity(1, 1),
            )
            .running_cost(
                |x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]),
                |x, _u| scalar(x[0]),
                |_x, u| scalar(u[0]),
            )
            .hamiltonian_hessians(
                |_x, _u, _l| DMatrix::identity(1, 1),
                |_x, _u, _l| DMatrix::zeros(1, 1),
                |_x, _u, _l| DMatrix::identity(1, 1),
            )
            .build()
            .unwrap();
        let mesh = HpMesh::uniform((0.0, 1.0), 3, 4).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let opts = SolveOptions {
            init: InitStrategy::Zeros,
            ..Default::default()
        };
        let (_, stats) = solve(&problem, &mesh, &schemes, &opts).unwrap();
        assert!(stats.converged());
        assert!(
            stats.iterations <= 2,
            "affine residual should need one full Newton step, took {}",
            stats.iterations
        );
        assert_abs_diff_eq!(stats.step_lengths[0], 1.0, epsilon = 0.0);
    }

    #[test]
    fn degenerate_problem_flags_second_order() {
        // f ≡ 0, C = ½|x(1)|², no running cost: U is free with a zero
        // Hessian block, so the second-order flag must come back false.
        let problem = crate::ocp::ControlProblem::builder(1, 1)
            .horizon(0.0, 1.0)
            .initial_state(scalar(0.0))
            .dynamics(
                |_x, _u| scalar(0.0),
                |_x, _u| DMatrix::zeros(1, 1),
                |_x, _u| DMatrix::zeros(1, 1),
            )
            .terminal_cost(
                |x| 0.5 * x[0] * x[0],
                |x| x.clone(),
                |_x| DMatrix::identity(1, 1),
            )
            .hamiltonian_hessians(
                |_x, _u, _l| DMatrix::zeros(1, 1),
                |_x, _u, _l| DMatrix::zeros(1, 1),
                |_x, _u, _l| DMatrix::zeros(1, 1),
            )
            .build()
            .unwrap();
        let mesh = HpMesh::uniform((0.0, 1.0), 2, 3).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let (sol, stats) = solve(&problem, &mesh, &schemes, &SolveOptions::default()).unwrap();
        assert!(stats.converged());
        assert!(!stats.second_order_ok);
        for rows in &sol.states {
            for v in rows {
                assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn descent_direction_on_example1_probe() {
        let (problem, _) = builtin_problem("example1").unwrap();
        let mesh = HpMesh::uniform((0.0, 2.0), 4, 2).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let layout = Layout::new(&mesh, 1, 1);
        // a deterministic non-degenerate probe
        let guess = initial_guess(&mesh, &schemes, &problem, &layout, &InitStrategy::Simulate);
        let sol = layout.unpack(&guess, &problem.initial_state);
        let (res, active) = assemble_kkt_system(&mesh, &schemes, &problem, &sol).unwrap();
        let merit0 = res.sup_norm();
        let jac = assemble_kkt_jacobian_with(&mesh, &schemes, &problem, &sol, &active).unwrap();
        let d = newton_step(&jac, &layout.flatten_residual(&res)).unwrap();
        let trial = layout.unpack(&(&guess + 1e-6 * &d), &problem.initial_state);
        let merit1 = assemble_kkt_residual(&mesh, &schemes, &problem, &trial)
            .unwrap()
            .sup_norm();
        assert!(merit1 < merit0, "{merit1} !< {merit0}");
    }

    #[test]
    fn degree_one_intervals_solve() {
        // N = 1 collocates only at the right endpoint (backward-Euler
        // flavor); the whole pipeline must still hold together
        let (problem, reference) = builtin_problem("example1").unwrap();
        let mesh = HpMesh::uniform((0.0, 2.0), 40, 1).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let (sol, stats) = solve(&problem, &mesh, &schemes, &SolveOptions::default()).unwrap();
        assert!(stats.converged(), "{stats:?}");
        let mut err = 0.0f64;
        for k in 0..40 {
            let t = mesh.time_of(k, 1.0);
            err = err.max((sol.states[k][1][0] - reference.state_at(t)[0]).abs());
        }
        // first-order-accurate stages: coarse but convergent
        assert!(err <= 0.1, "state error {err:e}");
    }

    #[test]
    fn deterministic_iterates() {
        let (problem, _) = builtin_problem("example2").unwrap();
        let mesh = HpMesh::from_breakpoints(vec![0.0, 0.25, 0.75, 1.0], vec![6, 6, 6]).unwrap();
        let schemes = schemes_for_mesh(&mesh).unwrap();
        let run = || {
            let (sol, stats) = solve(&problem, &mesh, &schemes, &SolveOptions::default()).unwrap();
            (sol, stats)
        };
        let (s1, st1) = run();
        let (s2, st2) = run();
        assert_eq!(st1.iterations, st2.iterations);
        assert_eq!(st1.step_lengths, st2.step_lengths);
        for k in 0..3 {
            for i in 0..=6 {
                assert_eq!(s1.states[k][i][0].to_bits(), s2.states[k][i][0].to_bits());
                assert_eq!(s1.costates[k][i][0].to_bits(), s2.costates[k][i][0].to_bits());
            }
        }
    }
}
