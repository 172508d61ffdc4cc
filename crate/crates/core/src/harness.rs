//! Convergence experiments, rate fitting and report emission.
//!
//! Sweeps solve the discrete problem across a family of meshes or
//! degrees, measure sup-norm errors against the analytic reference at
//! the collocation points (and mesh points for the state and the mesh
//! multipliers), and fit `log₁₀(error)` against the sweep abscissa by
//! ordinary least squares.  Samples at or below the accuracy floor —
//! where the solver tolerance rather than the discretization dominates
//! — are excluded from fits.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;

use crate::ocp::{AnalyticReference, ControlProblem};
use crate::radau::{barycentric_eval, gauss_legendre, RadauScheme};
use crate::solver::{solve, SolveOptions, SolveStats};
use crate::transcription::{schemes_for_mesh, DiscreteSolution, HpMesh};
use crate::{Error, Result};

/// Sup-norm errors against the analytic reference, per variable class.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ErrorSample {
    pub state: f64,
    pub control: Option<f64>,
    pub costate: Option<f64>,
}

/// One sweep point.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SampleRecord {
    /// `K` for mesh sweeps, `N` for degree sweeps.
    pub axis_value: f64,
    /// Largest mesh half-width.
    pub h: f64,
    pub errors: ErrorSample,
    pub solver_iterations: usize,
    pub converged: bool,
}

/// Least-squares line through `(abscissa, log₁₀ error)`.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct FitSet {
    pub state: Option<Fit>,
    pub control: Option<Fit>,
    pub costate: Option<Fit>,
}

/// Exponents the convergence theory and the reference study associate
/// with the sweep, recorded as report metadata.
#[derive(Debug, Clone, Default, serde::Serialize, serde::Deserialize)]
pub struct TheoryExpected {
    /// Sobolev smoothness of the reference solution (`None` = smooth).
    pub eta: Option<f64>,
    /// `p = min(η, N+1)`.
    pub p: Option<f64>,
    /// `q = min(η, N)`.
    pub q: Option<f64>,
    /// State/control exponent reported by the reference convergence
    /// study for this degree.
    pub context_state_exponent: Option<f64>,
    /// Costate exponent reported by the reference study.
    pub context_costate_exponent: Option<f64>,
}

/// Error-versus-parameter samples with fitted slopes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RateReport {
    /// `"h-sweep"`, `"p-sweep"` or `"interp"`.
    pub axis: String,
    pub problem: Option<String>,
    /// Fixed degree for h-sweeps.
    pub degree: Option<usize>,
    pub samples: Vec<SampleRecord>,
    /// Primary fits: abscissa `log₁₀ h` for h-sweeps, `N` for p-sweeps
    /// (semi-log), `log₁₀ N` or `N` for interpolation depending on the
    /// test function.
    pub fits: FitSet,
    /// For p-sweeps: the same errors fitted against `log₁₀ N`, for
    /// comparing algebraic against exponential convergence models.
    pub algebraic_fits: Option<FitSet>,
    pub theory: TheoryExpected,
    /// Errors at or below this level are excluded from fits.
    pub accuracy_floor: f64,
}

/// Sweep execution options.
#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// The accuracy floor is this factor times the solver tolerance.
    pub floor_factor: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            tol: 1e-10,
            max_iter: 200,
            floor_factor: 10.0,
        }
    }
}

/// Ordinary least squares of `log₁₀(error)` on the abscissa, restricted
/// to samples with `error > floor`.  Needs at least two usable samples;
/// report-level fits additionally require three.
pub fn fit_rate(samples: &[(f64, f64)], floor: f64) -> Result<Fit> {
    let used: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(_, e)| *e > floor && e.is_finite())
        .map(|&(a, e)| (a, e.log10()))
        .collect();
    if used.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: used.len(),
        });
    }
    let n = used.len() as f64;
    let sx: f64 = used.iter().map(|(a, _)| a).sum();
    let sy: f64 = used.iter().map(|(_, y)| y).sum();
    let sxx: f64 = used.iter().map(|(a, _)| a * a).sum();
    let sxy: f64 = used.iter().map(|(a, y)| a * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() <= f64::EPSILON * n * sxx.abs().max(1.0) {
        return Err(Error::InvalidArgument("degenerate abscissa".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = used.iter().map(|(_, y)| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = used
        .iter()
        .map(|(a, y)| {
            let d = y - (slope * a + intercept);
            d * d
        })
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(Fit {
        slope,
        intercept,
        r2,
        n_used: used.len(),
    })
}

/// Sup-norm errors of a discrete solution against the reference,
/// maximized over all collocation points, mesh-point states, the mesh
/// multipliers `Λ_k0` and the terminal multiplier.
pub fn measure_errors(
    mesh: &HpMesh,
    schemes: &[Arc<RadauScheme>],
    sol: &DiscreteSolution,
    reference: &AnalyticReference,
) -> ErrorSample {
    let mut err_x: f64 = 0.0;
    let mut err_u: f64 = 0.0;
    let mut err_l: f64 = 0.0;
    let has_costate = reference.costate.is_some();
    for k in 0..mesh.interval_count() {
        let scheme = &schemes[k];
        for i in 0..=scheme.degree {
            let t = mesh.time_of(k, scheme.nodes[i]);
            err_x = err_x.max((&sol.states[k][i] - reference.state_at(t)).amax());
            if i >= 1 {
                err_u = err_u.max((&sol.controls[k][i - 1] - reference.control_at(t)).amax());
                if has_costate {
                    let truth = reference.costate_at(t).unwrap();
                    err_l = err_l.max((&sol.costates[k][i] - truth).amax());
                }
            }
        }
        if has_costate {
            let truth = reference.costate_at(mesh.breakpoints[k]).unwrap();
            err_l = err_l.max((&sol.costates[k][0] - truth).amax());
        }
    }
    if has_costate {
        let truth = reference.costate_at(mesh.horizon().1).unwrap();
        err_l = err_l.max((&sol.costate_terminal - truth).amax());
    }
    ErrorSample {
        state: err_x,
        control: Some(err_u),
        costate: has_costate.then_some(err_l),
    }
}

fn run_samples<F>(configs: &[F]) -> Result<Vec<(SampleRecord, Option<(DiscreteSolution, SolveStats)>)>>
where
    F: Fn() -> Result<(SampleRecord, Option<(DiscreteSolution, SolveStats)>)> + Sync,
{
    // sweep points are independent pure solves; results are collected
    // in axis order regardless of completion order
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|job| scope.spawn(move || job()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

fn sweep_fits(samples: &[SampleRecord], abscissa: impl Fn(&SampleRecord) -> f64, floor: f64) -> FitSet {
    let gather = |pick: &dyn Fn(&SampleRecord) -> Option<f64>| -> Option<Fit> {
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| s.converged)
            .filter_map(|s| pick(s).map(|e| (abscissa(s), e)))
            .collect();
        let usable = pts.iter().filter(|(_, e)| *e > floor).count();
        if usable < 3 {
            return None;
        }
        fit_rate(&pts, floor).ok()
    };
    FitSet {
        state: gather(&|s| Some(s.errors.state)),
        control: gather(&|s| s.errors.control),
        costate: gather(&|s| s.errors.costate),
    }
}

/// Solves on uniform meshes of `k_list` intervals at fixed degree and
/// fits `log₁₀(error)` against `log₁₀(h)`.
///
/// Non-converged samples are recorded, flagged, and excluded from fits.
pub fn run_h_sweep(
    problem: &ControlProblem,
    reference: &AnalyticReference,
    degree: usize,
    k_list: &[usize],
    opts: &SweepOptions,
) -> Result<RateReport> {
    let jobs: Vec<_> = k_list
        .iter()
        .map(|&k| {
            move || -> Result<(SampleRecord, Option<(DiscreteSolution, SolveStats)>)> {
                let mesh = HpMesh::uniform(problem.horizon, k, degree)?;
                let schemes = schemes_for_mesh(&mesh)?;
                let options = SolveOptions {
                    tol: opts.tol,
                    max_iter: opts.max_iter,
                    ..Default::default()
                };
                let (sol, stats) = solve(problem, &mesh, &schemes, &options)?;
                let errors = measure_errors(&mesh, &schemes, &sol, reference);
                let record = SampleRecord {
                    axis_value: k as f64,
                    h: (0..k).map(|j| mesh.half_width(j)).fold(0.0, f64::max),
                    errors,
                    solver_iterations: stats.iterations,
                    converged: stats.converged(),
                };
                Ok((record, Some((sol, stats))))
            }
        })
        .collect();
    let results = run_samples(&jobs)?;
    let samples: Vec<SampleRecord> = results.into_iter().map(|(r, _)| r).collect();
    let floor = opts.floor_factor * opts.tol;
    let fits = sweep_fits(&samples, |s| s.h.log10(), floor);
    let eta = reference.smoothness_eta;
    let n = degree as f64;
    Ok(RateReport {
        axis: "h-sweep".into(),
        problem: None,
        degree: Some(degree),
        samples,
        fits,
        algebraic_fits: None,
        theory: TheoryExpected {
            eta,
            p: Some(eta.map_or(n + 1.0, |e| e.min(n + 1.0))),
            q: Some(eta.map_or(n, |e| e.min(n))),
            context_state_exponent: Some(n + 2.0),
            context_costate_exponent: Some(n + 1.0),
        },
        accuracy_floor: floor,
    })
}

/// Solves on a fixed mesh geometry for each degree in `n_list` and fits
/// `log₁₀(error)` against `N` (semi-log).  The same errors fitted
/// against `log₁₀ N` land in `algebraic_fits` for model comparison.
pub fn run_p_sweep(
    problem: &ControlProblem,
    reference: &AnalyticReference,
    breakpoints: &[f64],
    n_list: &[usize],
    opts: &SweepOptions,
) -> Result<RateReport> {
    let jobs: Vec<_> = n_list
        .iter()
        .map(|&n| {
            move || -> Result<(SampleRecord, Option<(DiscreteSolution, SolveStats)>)> {
                let mesh = HpMesh::from_breakpoints(
                    breakpoints.to_vec(),
                    vec![n; breakpoints.len() - 1],
                )?;
                let schemes = schemes_for_mesh(&mesh)?;
                let options = SolveOptions {
                    tol: opts.tol,
                    max_iter: opts.max_iter,
                    ..Default::default()
                };
                let (sol, stats) = solve(problem, &mesh, &schemes, &options)?;
                let errors = measure_errors(&mesh, &schemes, &sol, reference);
                let record = SampleRecord {
                    axis_value: n as f64,
                    h: (0..mesh.interval_count())
                        .map(|j| mesh.half_width(j))
                        .fold(0.0, f64::max),
                    errors,
                    solver_iterations: stats.iterations,
                    converged: stats.converged(),
                };
                Ok((record, Some((sol, stats))))
            }
        })
        .collect();
    let results = run_samples(&jobs)?;
    let samples: Vec<SampleRecord> = results.into_iter().map(|(r, _)| r).collect();
    let floor = opts.floor_factor * opts.tol;
    let fits = sweep_fits(&samples, |s| s.axis_value, floor);
    let algebraic = sweep_fits(&samples, |s| s.axis_value.log10(), floor);
    Ok(RateReport {
        axis: "p-sweep".into(),
        problem: None,
        degree: None,
        samples,
        fits,
        algebraic_fits: Some(algebraic),
        theory: TheoryExpected {
            eta: reference.smoothness_eta,
            ..Default::default()
        },
        accuracy_floor: floor,
    })
}

/// Test functions for the interpolation-error experiment.
#[derive(Debug, Clone)]
pub enum TestFunction {
    /// `exp(τ)`: analytic, super-algebraic decay.
    Exp,
    /// Polynomial of degree `N` (coefficients `1/(j+1)`): reproduced
    /// exactly, errors at rounding level.
    Poly,
    /// `|τ|^(η-1/2)`: finite Sobolev smoothness `η`.
    Sobolev { eta: f64 },
}

impl TestFunction {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "exp" => Ok(TestFunction::Exp),
            "poly" => Ok(TestFunction::Poly),
            other => {
                if let Some(eta) = other.strip_prefix("sobolev:") {
                    let eta: f64 = eta
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad eta in `{other}`")))?;
                    if eta <= 1.5 {
                        return Err(Error::InvalidArgument(
                            "sobolev eta must exceed 3/2 for a bounded derivative".into(),
                        ));
                    }
                    Ok(TestFunction::Sobolev { eta })
                } else {
                    Err(Error::InvalidArgument(format!("unknown test function `{other}`")))
                }
            }
        }
    }

    fn value(&self, degree: usize, tau: f64) -> f64 {
        match self {
            TestFunction::Exp => tau.exp(),
            TestFunction::Poly => {
                let mut acc = 0.0;
                for j in (0..=degree).rev() {
                    acc = acc * tau + 1.0 / (j as f64 + 1.0);
                }
                acc
            }
            TestFunction::Sobolev { eta } => tau.abs().powf(eta - 0.5),
        }
    }

    fn derivative(&self, degree: usize, tau: f64) -> f64 {
        match self {
            TestFunction::Exp => tau.exp(),
            TestFunction::Poly => {
                let mut acc = 0.0;
                for j in (1..=degree).rev() {
                    acc = acc * tau + j as f64 / (j as f64 + 1.0);
                }
                acc
            }
            TestFunction::Sobolev { eta } => {
                if tau == 0.0 {
                    0.0
                } else {
                    (eta - 0.5) * tau.abs().powf(eta - 1.5) * tau.signum()
                }
            }
        }
    }

    fn is_algebraic(&self) -> bool {
        matches!(self, TestFunction::Sobolev { .. })
    }

    fn smoothness_eta(&self) -> Option<f64> {
        match self {
            TestFunction::Sobolev { eta } => Some(*eta),
            _ => None,
        }
    }
}

/// H¹-seminorm error of interpolation at `{-1, τ₁, …, τ_N}`, measured
/// by Gauss–Legendre quadrature with `4N + 8` points.
pub fn interp_h1_error(scheme: &RadauScheme, func: &TestFunction) -> Result<f64> {
    let n = scheme.degree;
    let nodes: Vec<f64> = scheme.nodes.iter().copied().collect();
    let values: Vec<DVector<f64>> = nodes
        .iter()
        .map(|&t| DVector::from_element(1, func.value(n, t)))
        .collect();
    // nodal derivative values of the interpolant; the derivative has
    // degree N-1, so interpolating it on the same N+1 nodes is exact
    let dfull = scheme.full_differentiation_matrix();
    let mut dvals = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let mut acc = 0.0;
        for j in 0..=n {
            acc += dfull[(i, j)] * values[j][0];
        }
        dvals.push(DVector::from_element(1, acc));
    }
    let (gx, gw) = gauss_legendre(4 * n + 8)?;
    let mut acc = 0.0;
    for (x, w) in gx.iter().zip(&gw) {
        let p_deriv = barycentric_eval(&nodes, &scheme.bary_full, &dvals, *x)[0];
        let e = func.derivative(n, *x) - p_deriv;
        acc += w * e * e;
    }
    Ok(acc.sqrt())
}

/// Interpolation-error experiment over a list of degrees.
///
/// Algebraically-smooth test functions are fitted against `log₁₀ N`,
/// analytic ones against `N`.
pub fn interp_error_experiment(n_list: &[usize], func: &TestFunction) -> Result<RateReport> {
    let mut samples = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let scheme = crate::radau::scheme(n)?;
        let err = interp_h1_error(&scheme, func)?;
        samples.push(SampleRecord {
            axis_value: n as f64,
            h: 1.0,
            errors: ErrorSample {
                state: err,
                control: None,
                costate: None,
            },
            solver_iterations: 0,
            converged: true,
        });
    }
    let floor = 1e-13;
    let fits = if func.is_algebraic() {
        sweep_fits(&samples, |s| s.axis_value.log10(), floor)
    } else {
        sweep_fits(&samples, |s| s.axis_value, floor)
    };
    let eta = func.smoothness_eta();
    Ok(RateReport {
        axis: "interp".into(),
        problem: None,
        degree: None,
        samples,
        fits,
        algebraic_fits: None,
        theory: TheoryExpected {
            eta,
            ..Default::default()
        },
        accuracy_floor: floor,
    })
}

/// Output format for reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

/// CSV rendering: one data row per sample, then fitted-summary comment
/// lines.  An empty sample list renders as the bare header.
pub fn render_csv(report: &RateReport) -> String {
    let mut out = String::new();
    out.push_str("axis_value,h,err_state,err_control,err_costate,solver_iters,converged\n");
    for s in &report.samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.axis_value,
            fmt17(s.h),
            fmt17(s.errors.state),
            fmt_opt(s.errors.control),
            fmt_opt(s.errors.costate),
            s.solver_iterations,
            s.converged
        ));
    }
    if report.samples.is_empty() {
        return out;
    }
    let fit_line = |name: &str, fit: &Option<Fit>| -> String {
        match fit {
            Some(f) => format!(
                "# fit,{},{},{},{},{}\n",
                name,
                fmt17(f.slope),
                fmt17(f.intercept),
                fmt17(f.r2),
                f.n_used
            ),
            None => format!("# fit,{name},null\n"),
        }
    };
    out.push_str(&fit_line("state", &report.fits.state));
    out.push_str(&fit_line("control", &report.fits.control));
    out.push_str(&fit_line("costate", &report.fits.costate));
    if let Some(alg) = &report.algebraic_fits {
        out.push_str(&fit_line("state_algebraic", &alg.state));
        out.push_str(&fit_line("control_algebraic", &alg.control));
        out.push_str(&fit_line("costate_algebraic", &alg.costate));
    }
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_else(|| "inf".into());
    out.push_str(&format!(
        "# theory,eta={},p={},q={},context_state={},context_costate={}\n",
        opt(report.theory.eta),
        report.theory.p.map(fmt17).unwrap_or_else(|| "-".into()),
        report.theory.q.map(fmt17).unwrap_or_else(|| "-".into()),
        report
            .theory
            .context_state_exponent
            .map(fmt17)
            .unwrap_or_else(|| "-".into()),
        report
            .theory
            .context_costate_exponent
            .map(fmt17)
            .unwrap_or_else(|| "-".into()),
    ));
    out.push_str(&format!("# accuracy_floor,{}\n", fmt17(report.accuracy_floor)));
    out
}

pub fn render_json(report: &RateReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(report)?)
}

/// Writes a report to `path`.
pub fn emit_report(report: &RateReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Json => render_json(report)?,
    };
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Parses degree/interval lists: comma-separated values, inclusive
/// ranges `a..b`, and arithmetic continuations `a,b,...,z` that extend
/// the step `b - a` up to `z`.
pub fn parse_index_list(text: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::new();
    let mut pending_ellipsis = false;
    for token in text.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        if token == "..." {
            if out.len() < 2 {
                return Err(Error::InvalidArgument(
                    "`...` needs two preceding values to set the step".into(),
                ));
            }
            pending_ellipsis = true;
            continue;
        }
        if let Some((a, b)) = token.split_once("..") {
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad range start `{token}`")))?;
            let b: usize = b
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad range end `{token}`")))?;
            if b < a {
                return Err(Error::InvalidArgument(format!("empty range `{token}`")));
            }
            out.extend(a..=b);
            continue;
        }
        let v: usize = token
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad integer `{token}`")))?;
        if pending_ellipsis {
            let step = out[out.len() - 1] - out[out.len() - 2];
            if step == 0 || v <= out[out.len() - 1] {
                return Err(Error::InvalidArgument("non-increasing `...` continuation".into()));
            }
            let mut next = out[out.len() - 1] + step;
            while next < v {
                out.push(next);
                next += step;
            }
            pending_ellipsis = false;
        }
        out.push(v);
    }
    if pending_ellipsis {
        return Err(Error::InvalidArgument("dangling `...`".into()));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty list".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fit_rate_exact_line_and_floor() {
        let pts = [(1.0, 1e-4), (2.0, 1e-8), (3.0, 1e-12)];
        let fit = fit_rate(&pts, 0.0).unwrap();
        assert_abs_diff_eq!(fit.slope, -4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);
        assert_eq!(fit.n_used, 3);
        // floor excludes the last point; the first two still give -4
        let fit = fit_rate(&pts, 1e-10).unwrap();
        assert_abs_diff_eq!(fit.slope, -4.0, epsilon = 1e-12);
        assert_eq!(fit.n_used, 2);
        assert!(fit_rate(&pts, 1e-6).is_err());
    }

    #[test]
    fn fit_rate_tolerates_noise() {
        // slope -3 with ±0.01 decade perturbation stays within ±0.05
        let pts: Vec<(f64, f64)> = (1..=8)
            .map(|i| {
                let a = i as f64;
                let wiggle = if i % 2 == 0 { 0.01 } else { -0.01 };
                (a, 10f64.powf(-3.0 * a + wiggle))
            })
            .collect();
        let fit = fit_rate(&pts, 0.0).unwrap();
        assert!((fit.slope + 3.0).abs() <= 0.05, "{}", fit.slope);
    }

    #[test]
    fn interp_poly_exact_and_exp_spectral() {
        let scheme = crate::radau::scheme(9).unwrap();
        let err = interp_h1_error(&scheme, &TestFunction::Poly).unwrap();
        assert!(err <= 1e-12, "polynomial reproduction broke: {err:e}");
        let scheme16 = crate::radau::scheme(16).unwrap();
        let err = interp_h1_error(&scheme16, &TestFunction::Exp).unwrap();
        assert!(err <= 1e-12, "exp at N=16: {err:e}");
    }

    #[test]
    fn interp_sobolev_rate() {
        // |τ|^{7/2} has η = 4, so the H¹ error decays like N^{-(p-1)} = N^{-3}
        let ns: Vec<usize> = (4..=32).step_by(2).collect();
        let report =
            interp_error_experiment(&ns, &TestFunction::Sobolev { eta: 4.0 }).unwrap();
        let slope = report.fits.state.as_ref().unwrap().slope;
        assert!((slope + 3.0).abs() <= 0.5, "slope {slope}");
    }

    #[test]
    fn interp_poly_fit_skipped() {
        let ns = [4usize, 6, 8, 10];
        let report = interp_error_experiment(&ns, &TestFunction::Poly).unwrap();
        assert!(report.fits.state.is_none());
        for s in &report.samples {
            assert!(s.errors.state <= 1e-12);
        }
    }

    #[test]
    fn polynomial_solution_saturates_and_skips_fit() {
        // f = u with a quadratic tracking cost pulls u to 1 and x to a
        // straight line, which the collocation space reproduces exactly;
        // all errors sit at rounding level and the fit is skipped
        use nalgebra::{DMatrix, DVector};
        fn scalar(v: f64) -> DVector<f64> {
            DVector::from_element(1, v)
        }
        let problem = crate::ocp::ControlProblem::builder(1, 1)
            .horizon(0.0, 1.0)
            .initial_state(scalar(0.0))
            .dynamics(
                |_x, u| u.clone(),
                |_x, _u| DMatrix::zeros(1, 1),
                |_x, _u| DMatrix::identity(1, 1),
            )
            .terminal_cost(|_x| 0.0, |_x| scalar(0.0), |_x| DMatrix::zeros(1, 1))
            .running_cost(
                |_x, u| 0.5 * (u[0] - 1.0) * (u[0] - 1.0),
                |_x, _u| scalar(0.0),
                |_x, u| scalar(u[0] - 1.0),
            )
            .hamiltonian_hessians(
                |_x, _u, _l| DMatrix::zeros(1, 1),
                |_x, _u, _l| DMatrix::zeros(1, 1),
                |_x, _u, _l| DMatrix::identity(1, 1),
            )
            .build()
            .unwrap();
        let reference = crate::ocp::AnalyticReference {
            state: Box::new(|t| DVector::from_element(1, t)),
            control: Box::new(|_t| DVector::from_element(1, 1.0)),
            costate: Some(Box::new(|_t| DVector::from_element(1, 0.0))),
            breakpoints: vec![],
            smoothness_eta: None,
        };
        let report =
            run_h_sweep(&problem, &reference, 2, &[2, 4, 8], &SweepOptions::default()).unwrap();
        for s in &report.samples {
            assert!(s.converged);
            assert!(s.errors.state <= 1e-12, "exact case error {:e}", s.errors.state);
        }
        assert!(report.fits.state.is_none(), "fit should be skipped at saturation");
    }

    #[test]
    fn emit_report_writes_files() {
        let report = RateReport {
            axis: "interp".into(),
            problem: None,
            degree: None,
            samples: vec![SampleRecord {
                axis_value: 4.0,
                h: 1.0,
                errors: ErrorSample {
                    state: 1e-3,
                    control: None,
                    costate: None,
                },
                solver_iterations: 0,
                converged: true,
            }],
            fits: FitSet::default(),
            algebraic_fits: None,
            theory: TheoryExpected::default(),
            accuracy_floor: 1e-13,
        };
        let dir = std::env::temp_dir();
        let csv_path = dir.join("radau_hp_emit_test.csv");
        let json_path = dir.join("radau_hp_emit_test.json");
        emit_report(&report, ReportFormat::Csv, &csv_path).unwrap();
        emit_report(&report, ReportFormat::Json, &json_path).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv, render_csv(&report));
        let parsed: RateReport =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(parsed.samples.len(), 1);
        let _ = std::fs::remove_file(csv_path);
        let _ = std::fs::remove_file(json_path);
    }

    #[test]
    fn csv_rendering() {
        let empty = RateReport {
            axis: "h-sweep".into(),
            problem: None,
            degree: Some(2),
            samples: vec![],
            fits: FitSet::default(),
            algebraic_fits: None,
            theory: TheoryExpected::default(),
            accuracy_floor: 1e-9,
        };
        assert_eq!(
            render_csv(&empty),
            "axis_value,h,err_state,err_control,err_costate,solver_iters,converged\n"
        );
        let mut report = empty.clone();
        report.samples.push(SampleRecord {
            axis_value: 4.0,
            h: 0.25,
            errors: ErrorSample {
                state: 1e-3,
                control: Some(2e-3),
                costate: None,
            },
            solver_iterations: 7,
            converged: true,
        });
        let text = render_csv(&report);
        assert!(text.contains("4,2.5000000000000000e-1,1.0000000000000000e-3"));
        assert!(text.contains("# fit,state,null"));
        assert!(text.contains("# accuracy_floor"));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let report = RateReport {
            axis: "p-sweep".into(),
            problem: Some("example2".into()),
            degree: None,
            samples: vec![SampleRecord {
                axis_value: 5.0,
                h: 0.5,
                errors: ErrorSample {
                    state: 0.1 + 0.2,
                    control: Some(1.0 / 3.0),
                    costate: None,
                },
                solver_iterations: 3,
                converged: true,
            }],
            fits: FitSet {
                state: Some(Fit {
                    slope: -0.123456789012345678,
                    intercept: 2.0f64.sqrt(),
                    r2: 0.99999,
                    n_used: 4,
                }),
                control: None,
                costate: None,
            },
            algebraic_fits: None,
            theory: TheoryExpected {
                eta: Some(2.0),
                ..Default::default()
            },
            accuracy_floor: 1e-9,
        };
        let text = render_json(&report).unwrap();
        let parsed: RateReport = serde_json::from_str(&text).unwrap();
        let text2 = render_json(&parsed).unwrap();
        assert_eq!(text, text2);
        assert_eq!(
            parsed.fits.state.as_ref().unwrap().intercept.to_bits(),
            2.0f64.sqrt().to_bits()
        );
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_index_list("4,8,16").unwrap(), vec![4, 8, 16]);
        assert_eq!(parse_index_list("4..7").unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(
            parse_index_list("25,50,...,150").unwrap(),
            vec![25, 50, 75, 100, 125, 150]
        );
        assert_eq!(parse_index_list("1,2..4,10").unwrap(), vec![1, 2, 3, 4, 10]);
        assert!(parse_index_list("...,10").is_err());
        assert!(parse_index_list("").is_err());
    }

    #[test]
    fn test_function_parsing() {
        assert!(matches!(TestFunction::parse("exp").unwrap(), TestFunction::Exp));
        assert!(matches!(
            TestFunction::parse("sobolev:4").unwrap(),
            TestFunction::Sobolev { .. }
        ));
        assert!(TestFunction::parse("sobolev:1.0").is_err());
        assert!(TestFunction::parse("spline").is_err());
    }
}
