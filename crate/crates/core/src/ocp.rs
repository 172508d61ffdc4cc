//! Control problem definitions.
//!
//! A problem bundles dynamics `f(x, u)`, a terminal cost `C(x)`, an
//! optional running cost `L(x, u)`, derivative oracles through second
//! order, and componentwise box bounds on the control and (optionally)
//! the state.  The Hamiltonian is `H(x, u, λ) = λᵀ f(x, u) + L(x, u)`,
//! with the running cost folded in so that its gradients appear in
//! `∇ₓH`/`∇ᵤH` and its Hessian in the `Q`, `S`, `R` blocks.
//!
//! Everything is immutable and the oracles are pure, so problems can be
//! shared across concurrent sweep tasks.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

type VecFn2 = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn2 = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type MatFn3 =
    Box<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ScalarFn1 = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VecFn1 = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatFn1 = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type ScalarFn2 = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
type TimeFn = Box<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Componentwise box, entries may be `±∞`.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(dim: usize) -> Self {
        Bounds {
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::DimensionMismatch("bounds".into()));
        }
        for i in 0..self.lower.len() {
            if self.lower[i] > self.upper[i] {
                return Err(Error::InvalidArgument(format!(
                    "lower bound {} exceeds upper bound {} in component {i}",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn is_unbounded(&self) -> bool {
        self.lower.iter().all(|v| v.is_infinite()) && self.upper.iter().all(|v| v.is_infinite())
    }

    /// Componentwise clamp onto the box; idempotent.
    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| v[i].clamp(self.lower[i], self.upper[i]))
    }

    /// `‖v − Π(v − g)‖_∞`: zero iff `-g` lies in the normal cone at `v`.
    pub fn natural_residual(&self, v: &DVector<f64>, g: &DVector<f64>) -> f64 {
        let proj = self.project(&(v - g));
        (v - proj).amax()
    }
}

/// Gradients and Hessian blocks of the Hamiltonian at one point.
pub struct HamiltonianDerivatives {
    /// `∇ₓH`, length `n`.
    pub grad_x: DVector<f64>,
    /// `∇ᵤH`, length `m`.
    pub grad_u: DVector<f64>,
    /// `∇²ₓₓH`, `n × n`.
    pub q: DMatrix<f64>,
    /// `∇²ₓᵤH`, `n × m`.
    pub s: DMatrix<f64>,
    /// `∇²ᵤᵤH`, `m × m`.
    pub r: DMatrix<f64>,
}

/// Optional integral cost `L(x, u)` with first derivatives.
///
/// Its Hessian contributions belong in the Hamiltonian Hessian oracles.
pub struct RunningCost {
    pub value: ScalarFn2,
    pub grad_x: VecFn2,
    pub grad_u: VecFn2,
}

/// A constrained optimal control problem on a fixed horizon.
pub struct ControlProblem {
    pub state_dim: usize,
    pub control_dim: usize,
    /// `(t_start, t_end)` with `t_start < t_end`.
    pub horizon: (f64, f64),
    pub initial_state: DVector<f64>,
    pub control_bounds: Bounds,
    /// Bounds applied to the state at collocation points.  This is an
    /// extension beyond the control-constrained setting of the
    /// convergence theory; reports flag it accordingly.
    pub state_bounds: Bounds,
    dynamics: VecFn2,
    jac_x: MatFn2,
    jac_u: MatFn2,
    terminal_cost: ScalarFn1,
    terminal_grad: VecFn1,
    terminal_hess: MatFn1,
    running: Option<RunningCost>,
    hess_xx: MatFn3,
    hess_xu: MatFn3,
    hess_uu: MatFn3,
}

impl ControlProblem {
    pub fn builder(state_dim: usize, control_dim: usize) -> ControlProblemBuilder {
        ControlProblemBuilder::new(state_dim, control_dim)
    }

    pub fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.dynamics)(x, u)
    }

    /// `∇ₓf`, `n × n`.
    pub fn dynamics_jac_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (self.jac_x)(x, u)
    }

    /// `∇ᵤf`, `n × m`.
    pub fn dynamics_jac_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        (self.jac_u)(x, u)
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        (self.terminal_cost)(x)
    }

    pub fn terminal_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.terminal_grad)(x)
    }

    pub fn terminal_hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.terminal_hess)(x)
    }

    pub fn running_cost(&self) -> Option<&RunningCost> {
        self.running.as_ref()
    }

    pub fn has_state_bounds(&self) -> bool {
        !self.state_bounds.is_unbounded()
    }
}

/// Step-by-step construction of a [`ControlProblem`].
pub struct ControlProblemBuilder {
    state_dim: usize,
    control_dim: usize,
    horizon: (f64, f64),
    initial_state: Option<DVector<f64>>,
    control_bounds: Option<Bounds>,
    state_bounds: Option<Bounds>,
    dynamics: Option<VecFn2>,
    jac_x: Option<MatFn2>,
    jac_u: Option<MatFn2>,
    terminal_cost: Option<ScalarFn1>,
    terminal_grad: Option<VecFn1>,
    terminal_hess: Option<MatFn1>,
    running: Option<RunningCost>,
    hess_xx: Option<MatFn3>,
    hess_xu: Option<MatFn3>,
    hess_uu: Option<MatFn3>,
}

impl ControlProblemBuilder {
    pub fn new(state_dim: usize, control_dim: usize) -> Self {
        ControlProblemBuilder {
            state_dim,
            control_dim,
            horizon: (0.0, 1.0),
            initial_state: None,
            control_bounds: None,
            state_bounds: None,
            dynamics: None,
            jac_x: None,
            jac_u: None,
            terminal_cost: None,
            terminal_grad: None,
            terminal_hess: None,
            running: None,
            hess_xx: None,
            hess_xu: None,
            hess_uu: None,
        }
    }

    pub fn horizon(mut self, t_start: f64, t_end: f64) -> Self {
        self.horizon = (t_start, t_end);
        self
    }

    pub fn initial_state(mut self, a: DVector<f64>) -> Self {
        self.initial_state = Some(a);
        self
    }

    pub fn dynamics(
        mut self,
        f: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac_x: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        jac_u: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.dynamics = Some(Box::new(f));
        self.jac_x = Some(Box::new(jac_x));
        self.jac_u = Some(Box::new(jac_u));
        self
    }

    pub fn terminal_cost(
        mut self,
        c: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.terminal_cost = Some(Box::new(c));
        self.terminal_grad = Some(Box::new(grad));
        self.terminal_hess = Some(Box::new(hess));
        self
    }

    pub fn running_cost(
        mut self,
        l: impl Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        grad_x: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad_u: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.running = Some(RunningCost {
            value: Box::new(l),
            grad_x: Box::new(grad_x),
            grad_u: Box::new(grad_u),
        });
        self
    }

    /// Second-derivative oracles for the Hamiltonian blocks
    /// `∇²ₓₓH`, `∇²ₓᵤH`, `∇²ᵤᵤH` given `(x, u, λ)`, running-cost
    /// contributions included.
    pub fn hamiltonian_hessians(
        mut self,
        xx: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        xu: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        uu: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.hess_xx = Some(Box::new(xx));
        self.hess_xu = Some(Box::new(xu));
        self.hess_uu = Some(Box::new(uu));
        self
    }

    pub fn control_bounds(mut self, bounds: Bounds) -> Self {
        self.control_bounds = Some(bounds);
        self
    }

    pub fn state_bounds(mut self, bounds: Bounds) -> Self {
        self.state_bounds = Some(bounds);
        self
    }

    pub fn build(self) -> Result<ControlProblem> {
        let (t0, t1) = self.horizon;
        if !(t0 < t1) {
            return Err(Error::InvalidArgument("horizon must satisfy t_start < t_end".into()));
        }
        let initial_state = self
            .initial_state
            .ok_or_else(|| Error::InvalidArgument("initial state required".into()))?;
        if initial_state.len() != self.state_dim {
            return Err(Error::DimensionMismatch("initial state".into()));
        }
        let control_bounds = self
            .control_bounds
            .unwrap_or_else(|| Bounds::unbounded(self.control_dim));
        let state_bounds = self
            .state_bounds
            .unwrap_or_else(|| Bounds::unbounded(self.state_dim));
        control_bounds.validate()?;
        state_bounds.validate()?;
        let missing = |what: &str| Error::InvalidArgument(format!("{what} required"));
        Ok(ControlProblem {
            state_dim: self.state_dim,
            control_dim: self.control_dim,
            horizon: self.horizon,
            initial_state,
            control_bounds,
            state_bounds,
            dynamics: self.dynamics.ok_or_else(|| missing("dynamics"))?,
            jac_x: self.jac_x.ok_or_else(|| missing("dynamics Jacobians"))?,
            jac_u: self.jac_u.ok_or_else(|| missing("dynamics Jacobians"))?,
            terminal_cost: self.terminal_cost.ok_or_else(|| missing("terminal cost"))?,
            terminal_grad: self.terminal_grad.ok_or_else(|| missing("terminal gradient"))?,
            terminal_hess: self.terminal_hess.ok_or_else(|| missing("terminal Hessian"))?,
            running: self.running,
            hess_xx: self.hess_xx.ok_or_else(|| missing("Hamiltonian Hessians"))?,
            hess_xu: self.hess_xu.ok_or_else(|| missing("Hamiltonian Hessians"))?,
            hess_uu: self.hess_uu.ok_or_else(|| missing("Hamiltonian Hessians"))?,
        })
    }
}

/// Gradients and Hessian blocks of `H = λᵀf + L` at `(x, u, λ)`.
pub fn hamiltonian_derivatives(
    problem: &ControlProblem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    lambda: &DVector<f64>,
) -> HamiltonianDerivatives {
    let mut grad_x = problem.dynamics_jac_x(x, u).transpose() * lambda;
    let mut grad_u = problem.dynamics_jac_u(x, u).transpose() * lambda;
    if let Some(l) = problem.running_cost() {
        grad_x += (l.grad_x)(x, u);
        grad_u += (l.grad_u)(x, u);
    }
    HamiltonianDerivatives {
        grad_x,
        grad_u,
        q: (problem.hess_xx)(x, u, lambda),
        s: (problem.hess_xu)(x, u, lambda),
        r: (problem.hess_uu)(x, u, lambda),
    }
}

/// Componentwise clamp of `u` onto the control box.
pub fn project_control(problem: &ControlProblem, u: &DVector<f64>) -> DVector<f64> {
    problem.control_bounds.project(u)
}

/// `‖u − Π(u − g)‖_∞` over the control box; zero iff `-g ∈ N(u)`.
pub fn normal_cone_residual(problem: &ControlProblem, u: &DVector<f64>, g: &DVector<f64>) -> f64 {
    problem.control_bounds.natural_residual(u, g)
}

/// Recovers a control from the minimum principle at a given state and
/// costate: finds `u` with `u = Π(u − ∇ᵤH(x, u, λ))` by a projected
/// Newton iteration on the natural map.  Intended for evaluating the
/// control at noncollocated times such as `t = 0`.
pub fn control_from_minimum_principle(
    problem: &ControlProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    u_start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut u = problem.control_bounds.project(u_start);
    for _ in 0..50 {
        let d = hamiltonian_derivatives(problem, x, &u, lambda);
        if problem.control_bounds.natural_residual(&u, &d.grad_u) <= 1e-12 {
            return Ok(u);
        }
        let step = d
            .r
            .clone()
            .lu()
            .solve(&d.grad_u)
            .ok_or(Error::SingularSystem)?;
        u = problem.control_bounds.project(&(&u - step));
    }
    let d = hamiltonian_derivatives(problem, x, &u, lambda);
    if problem.control_bounds.natural_residual(&u, &d.grad_u) <= 1e-9 {
        Ok(u)
    } else {
        Err(Error::SingularSystem)
    }
}

/// Closed-form solution of a problem, defined piecewise on the horizon.
pub struct AnalyticReference {
    pub state: TimeFn,
    pub control: TimeFn,
    /// Not every reference has a printed costate.
    pub costate: Option<TimeFn>,
    /// Times where derivatives of the solution are discontinuous.
    pub breakpoints: Vec<f64>,
    /// Sobolev smoothness index of the global solution, `None` when
    /// infinitely smooth.  Metadata for the rate reports.
    pub smoothness_eta: Option<f64>,
}

impl AnalyticReference {
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        (self.state)(t)
    }

    pub fn control_at(&self, t: f64) -> DVector<f64> {
        (self.control)(t)
    }

    pub fn costate_at(&self, t: f64) -> Option<DVector<f64>> {
        self.costate.as_ref().map(|f| f(t))
    }
}

fn scalar(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn example1() -> Result<(ControlProblem, AnalyticReference)> {
    let problem = ControlProblem::builder(1, 1)
        .horizon(0.0, 2.0)
        .initial_state(scalar(1.0))
        .dynamics(
            |x, u| scalar(2.5 * (-x[0] + x[0] * u[0] - u[0] * u[0])),
            |_x, u| DMatrix::from_element(1, 1, 2.5 * (u[0] - 1.0)),
            |x, u| DMatrix::from_element(1, 1, 2.5 * (x[0] - 2.0 * u[0])),
        )
        .terminal_cost(
            |x| -x[0],
            |_x| scalar(-1.0),
            |_x| DMatrix::zeros(1, 1),
        )
        .hamiltonian_hessians(
            |_x, _u, _l| DMatrix::zeros(1, 1),
            |_x, _u, l| DMatrix::from_element(1, 1, 2.5 * l[0]),
            |_x, _u, l| DMatrix::from_element(1, 1, -5.0 * l[0]),
        )
        .build()?;

    let a = |t: f64| 1.0 + 3.0 * (2.5 * t).exp();
    let denom = (-5.0f64).exp() + 9.0 * (5.0f64).exp() + 6.0;
    let reference = AnalyticReference {
        state: Box::new(move |t| scalar(4.0 / a(t))),
        control: Box::new(move |t| scalar(2.0 / a(t))),
        costate: Some(Box::new(move |t| {
            scalar(-a(t) * a(t) * (-2.5 * t).exp() / denom)
        })),
        breakpoints: vec![],
        smoothness_eta: None,
    };
    Ok((problem, reference))
}

fn example2() -> Result<(ControlProblem, AnalyticReference)> {
    let e = std::f64::consts::E;
    let x_bound = 2.0 * e.sqrt() / (1.0 - e);
    let x0 = (5.0 * e + 3.0) / (4.0 * (1.0 - e));
    let problem = ControlProblem::builder(1, 1)
        .horizon(0.0, 1.0)
        .initial_state(scalar(x0))
        .dynamics(
            |_x, u| scalar(u[0]),
            |_x, _u| DMatrix::zeros(1, 1),
            |_x, _u| DMatrix::from_element(1, 1, 1.0),
        )
        .terminal_cost(|_x| 0.0, |_x| scalar(0.0), |_x| DMatrix::zeros(1, 1))
        .running_cost(
            |x, u| 0.5 * (x[0] * x[0] + u[0] * u[0]),
            |x, _u| scalar(x[0]),
            |_x, u| scalar(u[0]),
        )
        .hamiltonian_hessians(
            |_x, _u, _l| DMatrix::from_element(1, 1, 1.0),
            |_x, _u, _l| DMatrix::zeros(1, 1),
            |_x, _u, _l| DMatrix::from_element(1, 1, 1.0),
        )
        .control_bounds(Bounds {
            lower: scalar(f64::NEG_INFINITY),
            upper: scalar(1.0),
        })
        .state_bounds(Bounds {
            lower: scalar(f64::NEG_INFINITY),
            upper: scalar(x_bound),
        })
        .build()?;

    let reference = AnalyticReference {
        state: Box::new(move |t| {
            scalar(if t <= 0.25 {
                t - 0.25 + (1.0 + e) / (1.0 - e)
            } else if t <= 0.75 {
                (t - 0.25).exp() / (1.0 - e) * (1.0 + (1.5 - 2.0 * t).exp())
            } else {
                x_bound
            })
        }),
        control: Box::new(move |t| {
            scalar(if t <= 0.25 {
                1.0
            } else if t <= 0.75 {
                (t - 0.25).exp() / (1.0 - e) * (1.0 - (1.5 - 2.0 * t).exp())
            } else {
                0.0
            })
        }),
        costate: None,
        breakpoints: vec![0.25, 0.75],
        smoothness_eta: Some(2.0),
    };
    Ok((problem, reference))
}

/// Builds one of the builtin problems together with its closed-form
/// solution.  Recognized names: `example1`, `example2`.
pub fn builtin_problem(name: &str) -> Result<(ControlProblem, AnalyticReference)> {
    match name {
        "example1" => example1(),
        "example2" => example2(),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

/// Maximum relative disagreement between the supplied derivative
/// oracles and central finite differences at the given probe points.
///
/// Covers `∇ₓf`, `∇ᵤf`, `∇C`, `∇²C`, the running-cost gradients, and
/// the Hamiltonian Hessian blocks against differences of `∇H`.
pub fn derivative_check(
    problem: &ControlProblem,
    probes: &[(DVector<f64>, DVector<f64>, DVector<f64>)],
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut record = |approx: f64, exact: f64| {
        let denom = 1.0 + exact.abs();
        worst = worst.max((approx - exact).abs() / denom);
    };
    for (x, u, lam) in probes {
        let hstep = 1e-5;
        let fx = problem.dynamics_jac_x(x, u);
        let fu = problem.dynamics_jac_u(x, u);
        for j in 0..problem.state_dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            let dx = hstep * (1.0 + x[j].abs());
            xp[j] += dx;
            xm[j] -= dx;
            let col = (problem.dynamics(&xp, u) - problem.dynamics(&xm, u)) / (2.0 * dx);
            for i in 0..problem.state_dim {
                record(col[i], fx[(i, j)]);
            }
            record(
                (problem.terminal_cost(&xp) - problem.terminal_cost(&xm)) / (2.0 * dx),
                problem.terminal_grad(x)[j],
            );
            let gcol = (problem.terminal_grad(&xp) - problem.terminal_grad(&xm)) / (2.0 * dx);
            let hess = problem.terminal_hess(x);
            for i in 0..problem.state_dim {
                record(gcol[i], hess[(i, j)]);
            }
            if let Some(l) = problem.running_cost() {
                record(
                    ((l.value)(&xp, u) - (l.value)(&xm, u)) / (2.0 * dx),
                    (l.grad_x)(x, u)[j],
                );
            }
            // column j of ∇²ₓₓH and ∇²ₓᵤH via differences of ∇H
            let dp = hamiltonian_derivatives(problem, &xp, u, lam);
            let dm = hamiltonian_derivatives(problem, &xm, u, lam);
            let here = hamiltonian_derivatives(problem, x, u, lam);
            for i in 0..problem.state_dim {
                record((dp.grad_x[i] - dm.grad_x[i]) / (2.0 * dx), here.q[(i, j)]);
            }
            for i in 0..problem.control_dim {
                record((dp.grad_u[i] - dm.grad_u[i]) / (2.0 * dx), here.s[(j, i)]);
            }
        }
        for j in 0..problem.control_dim {
            let mut up = u.clone();
            let mut um = u.clone();
            let du = hstep * (1.0 + u[j].abs());
            up[j] += du;
            um[j] -= du;
            let col = (problem.dynamics(x, &up) - problem.dynamics(x, &um)) / (2.0 * du);
            for i in 0..problem.state_dim {
                record(col[i], fu[(i, j)]);
            }
            if let Some(l) = problem.running_cost() {
                record(
                    ((l.value)(x, &up) - (l.value)(x, &um)) / (2.0 * du),
                    (l.grad_u)(x, u)[j],
                );
            }
            let dp = hamiltonian_derivatives(problem, x, &up, lam);
            let dm = hamiltonian_derivatives(problem, x, &um, lam);
            let here = hamiltonian_derivatives(problem, x, u, lam);
            for i in 0..problem.control_dim {
                record((dp.grad_u[i] - dm.grad_u[i]) / (2.0 * du), here.r[(i, j)]);
            }
        }
    }
    worst
}
