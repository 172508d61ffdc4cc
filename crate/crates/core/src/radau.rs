//! Flipped Radau quadrature and differentiation matrices.
//!
//! The rule of degree `N` collocates at the abscissae
//! `-1 < τ₁ < … < τ_N = 1`, where the interior points are the zeros of
//! the Jacobi polynomial `P^(1,0)_{N-1}` (weight `1 - τ`), together with
//! the noncollocated point `τ₀ = -1`.  The differentiation matrix `D`
//! maps nodal values of a degree-`N` polynomial on `{τ₀,…,τ_N}` to
//! derivative values at the collocation points, and
//!
//! ```text
//! D‡_ij = -(ω_j/ω_i) D_ji
//! ```
//!
//! governs the discrete costate dynamics.  Both `D_{1:N}` (the trailing
//! `N` columns of `D`) and `D‡` are invertible; the inverses are stored
//! explicitly because downstream linearized solves reuse them on every
//! mesh interval.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Per-degree bundle of nodes, weights, differentiation matrices and
/// their inverses.
///
/// Immutable after construction; share via [`scheme`] or `Arc`.
#[derive(Debug, Clone)]
pub struct RadauScheme {
    /// Number of collocation points `N`.
    pub degree: usize,
    /// `N + 1` nodes `τ₀ = -1 < τ₁ < … < τ_N = 1`; `τ₀` is noncollocated.
    pub nodes: DVector<f64>,
    /// `N` positive quadrature weights `ω₁…ω_N`.
    pub weights: DVector<f64>,
    /// Differentiation matrix `D`, `N × (N+1)`.
    pub diff: DMatrix<f64>,
    /// Inverse of `D_{1:N}` (the trailing `N` columns of `D`).
    pub diff_sub_inv: DMatrix<f64>,
    /// The matrix `D‡`, `N × N`.
    pub dddag: DMatrix<f64>,
    /// Inverse of `D‡`.
    pub dddag_inv: DMatrix<f64>,
    /// Barycentric weights for `{τ₀,…,τ_N}`, normalized to unit max
    /// magnitude.  Cached for interpolation.
    pub bary_full: DVector<f64>,
    /// Barycentric weights for the collocation subset `{τ₁,…,τ_N}`.
    pub bary_colloc: DVector<f64>,
}

/// Norm diagnostics of the inverse matrices, one row of the appendix
/// tables.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PropertyReport {
    pub degree: usize,
    /// `‖D_{1:N}⁻¹‖_∞` (max absolute row sum); equals 2.
    pub p1_norm: f64,
    /// Max Euclidean row norm of `[W^{1/2} D_{1:N}]⁻¹`; observed `≤ √2`.
    pub p2_max_row_norm: f64,
    /// `‖(D‡)⁻¹‖_∞`; observed `≤ 2`.
    pub p3_norm: f64,
    /// Max Euclidean row norm of `[W^{1/2} D‡]⁻¹`; observed `≤ √2`.
    pub p4_max_row_norm: f64,
}

/// Evaluates `P^(1,0)_n(τ)` and its derivative.
///
/// Uses the three-term recurrence for Jacobi polynomials with
/// parameters `(1,0)`, specialized to
/// `(n+1)(2n-1) P_n = [(4n²-1)τ + 1] P_{n-1} - (n-1)(2n+1) P_{n-2}`;
/// the derivative comes from differentiating the same recurrence.
pub fn jacobi10_eval(n: usize, tau: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut pm1, mut dm1) = (1.0, 0.0);
    let (mut p, mut d) = ((3.0 * tau + 1.0) / 2.0, 1.5);
    for k in 2..=n {
        let kf = k as f64;
        let a = 4.0 * kf * kf - 1.0;
        let c0 = (kf + 1.0) * (2.0 * kf - 1.0);
        let c2 = (kf - 1.0) * (2.0 * kf + 1.0);
        let pn = ((a * tau + 1.0) * p - c2 * pm1) / c0;
        let dn = (a * p + (a * tau + 1.0) * d - c2 * dm1) / c0;
        pm1 = p;
        dm1 = d;
        p = pn;
        d = dn;
    }
    (p, d)
}

/// Evaluates the Legendre polynomial `P_n(τ)` and its derivative.
fn legendre_eval(n: usize, tau: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut pm1, mut dm1) = (1.0, 0.0);
    let (mut p, mut d) = (tau, 1.0);
    for k in 2..=n {
        let kf = k as f64;
        let pn = ((2.0 * kf - 1.0) * tau * p - (kf - 1.0) * pm1) / kf;
        let dn = ((2.0 * kf - 1.0) * (p + tau * d) - (kf - 1.0) * dm1) / kf;
        pm1 = p;
        dm1 = d;
        p = pn;
        d = dn;
    }
    (p, d)
}

/// Interior flipped-Radau nodes: the zeros of `P^(1,0)_{N-1}`.
///
/// Golub–Welsch on the Jacobi(1,0) three-term recurrence, followed by
/// Newton polish.  Direct root finding from coefficient representations
/// is ill-conditioned past `N ≈ 30`.
fn interior_nodes(n: usize) -> Result<Vec<f64>> {
    let m = n - 1;
    if m == 0 {
        return Ok(Vec::new());
    }
    // Monic recurrence coefficients for weight (1 - τ) on [-1, 1]:
    //   a_k = -1/((2k+1)(2k+3)),  b_k = k(k+1)/(2k+1)².
    let mut jac = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        jac[(k, k)] = -1.0 / ((2.0 * kf + 1.0) * (2.0 * kf + 3.0));
        if k > 0 {
            let b = kf * (kf + 1.0) / ((2.0 * kf + 1.0) * (2.0 * kf + 1.0));
            let off = b.sqrt();
            jac[(k, k - 1)] = off;
            jac[(k - 1, k)] = off;
        }
    }
    let eig = nalgebra::SymmetricEigen::try_new(jac, 1e2 * f64::EPSILON, 0)
        .ok_or(Error::EigenFailed(m))?;
    let mut tau: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    tau.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for t in tau.iter_mut() {
        for _ in 0..5 {
            let (p, dp) = jacobi10_eval(m, *t);
            let step = p / dp;
            *t -= step;
            if step.abs() <= 1e-15 * (1.0 + t.abs()) {
                break;
            }
        }
    }
    Ok(tau)
}

/// Barycentric weights for a node set, normalized to unit max magnitude.
pub(crate) fn barycentric_weights(nodes: &[f64]) -> DVector<f64> {
    let n = nodes.len();
    let mut w = DVector::zeros(n);
    for j in 0..n {
        let mut prod = 1.0;
        for l in 0..n {
            if l != j {
                prod *= nodes[j] - nodes[l];
            }
        }
        w[j] = 1.0 / prod;
    }
    let scale = w.amax();
    w / scale
}

/// Evaluates the interpolating polynomial through `(nodes[j], values[j])`
/// at `x` via the second barycentric formula.  Exact node hits return
/// the stored value.
pub(crate) fn barycentric_eval(
    nodes: &[f64],
    bary: &DVector<f64>,
    values: &[DVector<f64>],
    x: f64,
) -> DVector<f64> {
    let dim = values[0].len();
    for (j, &t) in nodes.iter().enumerate() {
        if (x - t).abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            return values[j].clone();
        }
    }
    let mut num = DVector::zeros(dim);
    let mut den = 0.0;
    for j in 0..nodes.len() {
        let c = bary[j] / (x - nodes[j]);
        num += &values[j] * c;
        den += c;
    }
    num / den
}

/// Builds the Radau scheme of degree `N ≥ 1`.
///
/// Interior nodes come from the Golub–Welsch eigenproblem polished by
/// Newton iteration on `P^(1,0)_{N-1}`; interior weights use the closed
/// form `ω_i = 4(1+τ_i)/[(1-τ_i²) Ṗ^(1,0)_{N-1}(τ_i)]²` and the endpoint
/// weight is `ω_N = 2/N²`.  `D` is assembled from barycentric weights
/// with the negative-sum diagonal; inverses use dense LU with partial
/// pivoting.
pub fn build_scheme(n: usize) -> Result<RadauScheme> {
    if n < 1 {
        return Err(Error::DegreeTooSmall);
    }
    let interior = interior_nodes(n)?;
    let mut nodes = DVector::zeros(n + 1);
    nodes[0] = -1.0;
    for (i, &t) in interior.iter().enumerate() {
        nodes[i + 1] = t;
    }
    nodes[n] = 1.0;

    let mut weights = DVector::zeros(n);
    for (i, &t) in interior.iter().enumerate() {
        let (_, dp) = jacobi10_eval(n - 1, t);
        let denom = (1.0 - t * t) * dp;
        weights[i] = 4.0 * (1.0 + t) / (denom * denom);
    }
    weights[n - 1] = 2.0 / (n as f64 * n as f64);

    let node_slice: Vec<f64> = nodes.iter().copied().collect();
    let bary_full = barycentric_weights(&node_slice);
    let bary_colloc = barycentric_weights(&node_slice[1..]);

    // Off-diagonal entries from barycentric weight ratios, diagonal by
    // negative row sum; rows 1..N of the full matrix.
    let mut diff = DMatrix::zeros(n, n + 1);
    for i in 1..=n {
        let mut row_sum = 0.0;
        for j in 0..=n {
            if j != i {
                let v = (bary_full[j] / bary_full[i]) / (nodes[i] - nodes[j]);
                diff[(i - 1, j)] = v;
                row_sum += v;
            }
        }
        diff[(i - 1, i)] = -row_sum;
    }

    let diff_sub = diff.columns(1, n).into_owned();
    let diff_sub_inv = diff_sub
        .lu()
        .try_inverse()
        .ok_or(Error::SingularSystem)?;

    let mut dddag = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            dddag[(i, j)] = -(weights[j] / weights[i]) * diff[(j, i + 1)];
        }
    }
    let dddag_inv = dddag
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::SingularSystem)?;

    Ok(RadauScheme {
        degree: n,
        nodes,
        weights,
        diff,
        diff_sub_inv,
        dddag,
        dddag_inv,
        bary_full,
        bary_colloc,
    })
}

/// Process-wide memoized scheme lookup, safe under concurrent access.
pub fn scheme(n: usize) -> Result<Arc<RadauScheme>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<RadauScheme>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().unwrap().get(&n) {
        return Ok(s.clone());
    }
    let built = Arc::new(build_scheme(n)?);
    cache.lock().unwrap().entry(n).or_insert_with(|| built.clone());
    Ok(built)
}

/// Gauss–Legendre rule with `q` points on `[-1, 1]`, exact for
/// polynomials of degree `2q - 1`.
pub fn gauss_legendre(q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if q == 0 {
        return Err(Error::DegreeTooSmall);
    }
    if q == 1 {
        return Ok((vec![0.0], vec![2.0]));
    }
    let mut jac = DMatrix::<f64>::zeros(q, q);
    for k in 1..q {
        let kf = k as f64;
        let off = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k, k - 1)] = off;
        jac[(k - 1, k)] = off;
    }
    let eig = nalgebra::SymmetricEigen::try_new(jac, 1e2 * f64::EPSILON, 0)
        .ok_or(Error::EigenFailed(q))?;
    let mut x: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut w = vec![0.0; q];
    for (i, xi) in x.iter_mut().enumerate() {
        for _ in 0..3 {
            let (p, dp) = legendre_eval(q, *xi);
            *xi -= p / dp;
        }
        let (_, dp) = legendre_eval(q, *xi);
        w[i] = 2.0 / ((1.0 - *xi * *xi) * dp * dp);
    }
    Ok((x, w))
}

/// Assembles `(D‡)⁻¹` from its closed form instead of a factorization.
///
/// Entries are `ω_N M_j(1) + ∫_1^{τ_i} M_j(τ) dτ` for `i, j < N`,
/// `-ω_N` throughout column `N`, and `ω_N M_j(1)` in row `N`, where
/// `M_j` is the Lagrange basis on the interior nodes `τ₁…τ_{N-1}`.
/// The integrals are evaluated exactly by a Gauss–Legendre rule of
/// degree `≥ N - 2` mapped to `[τ_i, 1]`, with `M_j` evaluated in
/// barycentric form.
///
/// For `N = 1` no interior basis functions exist and only the `-ω_N`
/// column survives, giving the 1×1 matrix `(-ω₁)`.
pub fn dddag_inverse_explicit(scheme: &RadauScheme) -> DMatrix<f64> {
    let n = scheme.degree;
    let wn = scheme.weights[n - 1];
    if n == 1 {
        return DMatrix::from_element(1, 1, -wn);
    }
    let interior: Vec<f64> = (1..n).map(|i| scheme.nodes[i]).collect();
    let bary = barycentric_weights(&interior);
    // Evaluate all M_j(x) at once via the barycentric formula.
    let basis_values = |x: f64| -> Vec<f64> {
        let mut out = vec![0.0; n - 1];
        for (j, &t) in interior.iter().enumerate() {
            if (x - t).abs() <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
                out[j] = 1.0;
                return out;
            }
        }
        let mut den = 0.0;
        let mut terms = vec![0.0; n - 1];
        for j in 0..n - 1 {
            let c = bary[j] / (x - interior[j]);
            terms[j] = c;
            den += c;
        }
        for j in 0..n - 1 {
            out[j] = terms[j] / den;
        }
        out
    };
    let m_at_one = basis_values(1.0);

    // M_j has degree N-2; q points integrate degree 2q-1.
    let q = (n - 2) / 2 + 1;
    let (gx, gw) = gauss_legendre(q).expect("Gauss-Legendre rule");

    let mut inv = DMatrix::zeros(n, n);
    for i in 0..n {
        inv[(i, n - 1)] = -wn;
    }
    for j in 0..n - 1 {
        inv[(n - 1, j)] = wn * m_at_one[j];
    }
    for i in 0..n - 1 {
        let ti = scheme.nodes[i + 1];
        // ∫_1^{τ_i} M_j = -( (1-τ_i)/2 ) Σ g_w M_j(mapped)
        let half = (1.0 - ti) / 2.0;
        let mid = (1.0 + ti) / 2.0;
        let mut acc = vec![0.0; n - 1];
        for (p, &xq) in gx.iter().enumerate() {
            let x = mid + half * xq;
            let vals = basis_values(x);
            for j in 0..n - 1 {
                acc[j] += gw[p] * vals[j];
            }
        }
        for j in 0..n - 1 {
            inv[(i, j)] = wn * m_at_one[j] - half * acc[j];
        }
    }
    inv
}

/// Computes the four norms of [`PropertyReport`] from the stored
/// inverses and weights.
pub fn scheme_property_report(scheme: &RadauScheme) -> PropertyReport {
    let n = scheme.degree;
    let inv_sqrt_w: Vec<f64> = scheme.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let inf_norm = |m: &DMatrix<f64>| -> f64 {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let max_scaled_row_norm = |m: &DMatrix<f64>| -> f64 {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let v = m[(i, j)] * inv_sqrt_w[j];
                        v * v
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    };
    PropertyReport {
        degree: n,
        p1_norm: inf_norm(&scheme.diff_sub_inv),
        p2_max_row_norm: max_scaled_row_norm(&scheme.diff_sub_inv),
        p3_norm: inf_norm(&scheme.dddag_inv),
        p4_max_row_norm: max_scaled_row_norm(&scheme.dddag_inv),
    }
}

impl RadauScheme {
    /// Full `(N+1) × (N+1)` differentiation matrix over `{τ₀,…,τ_N}`
    /// (row 0 differentiates at the noncollocated point).
    pub fn full_differentiation_matrix(&self) -> DMatrix<f64> {
        let n = self.degree;
        let mut d = DMatrix::zeros(n + 1, n + 1);
        for i in 0..=n {
            let mut row_sum = 0.0;
            for j in 0..=n {
                if j != i {
                    let v = (self.bary_full[j] / self.bary_full[i]) / (self.nodes[i] - self.nodes[j]);
                    d[(i, j)] = v;
                    row_sum += v;
                }
            }
            d[(i, i)] = -row_sum;
        }
        d
    }

    /// Quadrature approximation of `∫_{-1}^{1} f`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.degree)
            .map(|i| self.weights[i] * f(self.nodes[i + 1]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn jacobi_low_degrees() {
        let (p, d) = jacobi10_eval(0, 0.37);
        assert_eq!((p, d), (1.0, 0.0));
        // P_1 = (3τ+1)/2: root at -1/3, slope 3/2
        let (p, d) = jacobi10_eval(1, -1.0 / 3.0);
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d, 1.5, epsilon = 1e-15);
        // Jacobi normalization P^(1,0)_n(1) = binom(n+1, n)
        let (p, _) = jacobi10_eval(2, 1.0);
        assert_abs_diff_eq!(p, 3.0, epsilon = 1e-14);
        let (p, _) = jacobi10_eval(7, 1.0);
        assert_abs_diff_eq!(p, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn jacobi_derivative_matches_difference_quotient() {
        for n in [1usize, 3, 8, 15] {
            for &t in &[-0.9, -0.3, 0.1, 0.77] {
                let eps = 1e-6;
                let (_, d) = jacobi10_eval(n, t);
                let (pp, _) = jacobi10_eval(n, t + eps);
                let (pm, _) = jacobi10_eval(n, t - eps);
                let fd = (pp - pm) / (2.0 * eps);
                assert_abs_diff_eq!(d, fd, epsilon = 1e-6 * (1.0 + d.abs()));
            }
        }
    }

    #[test]
    fn degree_one_scheme() {
        let s = build_scheme(1).unwrap();
        assert_eq!(s.nodes.as_slice(), &[-1.0, 1.0]);
        assert_eq!(s.weights.as_slice(), &[2.0]);
        // D from the two linear Lagrange bases
        assert_abs_diff_eq!(s.diff[(0, 0)], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.diff[(0, 1)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.diff_sub_inv[(0, 0)], 2.0, epsilon = 1e-15);
        let report = scheme_property_report(&s);
        assert_abs_diff_eq!(report.p1_norm, 2.0, epsilon = 1e-15);
        // explicit inverse degenerates to (-ω₁) = (-2)
        let inv = dddag_inverse_explicit(&s);
        assert_abs_diff_eq!(inv[(0, 0)], -2.0, epsilon = 1e-15);
    }

    #[test]
    fn degree_two_scheme() {
        let s = build_scheme(2).unwrap();
        assert_abs_diff_eq!(s.nodes[1], -1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.weights[0], 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(s.weights[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn weight_invariants() {
        for n in [1usize, 2, 3, 5, 12, 40] {
            let s = build_scheme(n).unwrap();
            let sum: f64 = s.weights.iter().sum();
            assert_abs_diff_eq!(sum, 2.0, epsilon = 1e-13);
            assert_eq!(s.weights[n - 1], 2.0 / (n as f64 * n as f64));
            assert_abs_diff_eq!(s.integrate(|_| 1.0), 2.0, epsilon = 1e-13);
            if n >= 2 {
                assert_abs_diff_eq!(s.integrate(|t| t * t), 2.0 / 3.0, epsilon = 1e-13);
            }
            assert!(s.weights.iter().all(|&w| w > 0.0));
            // interior nodes are roots of P^(1,0)_{N-1}
            for i in 1..n {
                let (p, _) = jacobi10_eval(n - 1, s.nodes[i]);
                assert!(p.abs() <= 1e-13, "N={n} node {i}: residual {p:e}");
            }
        }
    }

    #[test]
    fn differentiation_annihilates_constants() {
        for n in [1usize, 4, 17] {
            let s = build_scheme(n).unwrap();
            for i in 0..n {
                let row_sum: f64 = (0..=n).map(|j| s.diff[(i, j)]).sum();
                assert!(row_sum.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dddag_matches_definition_exactly() {
        let s = build_scheme(6).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expect = -(s.weights[j] / s.weights[i]) * s.diff[(j, i + 1)];
                assert_eq!(s.dddag[(i, j)], expect);
            }
        }
    }

    #[test]
    fn inverse_residuals() {
        for n in [2usize, 7, 25] {
            let s = build_scheme(n).unwrap();
            let id = DMatrix::<f64>::identity(n, n);
            let r1 = &s.diff_sub_inv * s.diff.columns(1, n) - &id;
            assert!(r1.amax() <= 1e-11, "N={n}: {}", r1.amax());
            let r2 = &s.dddag_inv * &s.dddag - &id;
            assert!(r2.amax() <= 1e-11, "N={n}: {}", r2.amax());
            // last row of D_{1:N}⁻¹ is the weight vector
            for j in 0..n {
                assert_abs_diff_eq!(s.diff_sub_inv[(n - 1, j)], s.weights[j], epsilon = 1e-12);
            }
            // (D‡)⁻¹ e_N = -ω_N 1
            for i in 0..n {
                assert_abs_diff_eq!(s.dddag_inv[(i, n - 1)], -s.weights[n - 1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gauss_legendre_exactness() {
        let (x, w) = gauss_legendre(6).unwrap();
        for deg in 0..=11usize {
            let q: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(deg as i32)).sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert_abs_diff_eq!(q, exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn explicit_inverse_matches_lu() {
        for n in [1usize, 2, 3, 9, 20] {
            let s = build_scheme(n).unwrap();
            let explicit = dddag_inverse_explicit(&s);
            let diff = (&explicit - &s.dddag_inv).amax();
            assert!(diff <= 1e-10, "N={n}: {diff:e}");
        }
    }

    #[test]
    fn property_report_reference_values() {
        // Frozen from a 50-digit computation of the same quantities.
        let s = build_scheme(25).unwrap();
        let r = scheme_property_report(&s);
        assert_abs_diff_eq!(r.p3_norm, 1.99537578476, epsilon = 1e-8);
        assert_abs_diff_eq!(r.p4_max_row_norm, 1.41210923962, epsilon = 1e-8);
        let inv = dddag_inverse_explicit(&s);
        let sup = (0..25)
            .map(|i| (0..25).map(|j| inv[(i, j)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        assert_abs_diff_eq!(sup, 1.995376, epsilon = 1e-5);
    }

    #[test]
    fn scheme_cache_returns_shared_instances() {
        let a = scheme(11).unwrap();
        let b = scheme(11).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
    }
}
