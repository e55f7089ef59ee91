//! Deterministic integration primitives.
//!
//! Two rule families are built here:
//!
//! * [`LineRule`]: Gauss–Jacobi rules on (-1, 1) against the weight
//!   `(1-z)^a (1+z)^b`. Singular angular factors are folded into the
//!   exponents so the integrand handed to the rule is smooth.
//! * [`VelocityRule`]: tensor-product Gaussian rules on R^n (n = 2, 3)
//!   adapted to a given Gaussian width.
//!
//! [`adaptive_integrate`] is a bisection-based open Newton–Cotes scheme kept
//! deliberately independent of the Gauss rules; it serves as the in-crate
//! cross-check oracle for derived values.

use crate::error::CoreError;
use crate::special::beta_fn;
use crate::vec3::Velocity;

/// Gauss rule on (-1, 1) against the Jacobi weight `(1-z)^a (1+z)^b`.
#[derive(Debug, Clone)]
pub struct LineRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    exponent_a: f64,
    exponent_b: f64,
}

impl LineRule {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exponents(&self) -> (f64, f64) {
        (self.exponent_a, self.exponent_b)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Polynomial degree integrated exactly against the weight.
    pub fn exact_degree(&self) -> usize {
        2 * self.nodes.len() - 1
    }

    /// Approximates `int_{-1}^{1} f(z) (1-z)^a (1+z)^b dz`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Tensor Gaussian rule on R^n approximating `int f(xi) dxi` for integrands
/// that decay like `exp(-|xi/scale|^2)`.
#[derive(Debug, Clone)]
pub struct VelocityRule {
    dimension: usize,
    nodes: Vec<Velocity>,
    weights: Vec<f64>,
    scale: f64,
    points_per_axis: usize,
}

impl VelocityRule {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nodes(&self) -> &[Velocity] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Total polynomial degree integrated exactly against
    /// `exp(-|xi/scale|^2)`.
    pub fn exact_degree(&self) -> usize {
        2 * self.points_per_axis - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Approximates `int_{R^n} f(xi) dxi`.
    pub fn integrate<F: Fn(&Velocity) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(xi, &w)| w * f(xi))
            .sum()
    }
}

/// Builds an `order`-point Gauss–Jacobi rule for the weight
/// `(1-z)^a (1+z)^b` on (-1, 1); exact for polynomials of degree
/// `2*order - 1`.
pub fn build_jacobi_rule(order: usize, a: f64, b: f64) -> Result<LineRule, CoreError> {
    if order == 0 {
        return Err(CoreError::InvalidQuadrature("order must be >= 1".into()));
    }
    if a <= -1.0 || b <= -1.0 {
        return Err(CoreError::InvalidQuadrature(format!(
            "Jacobi exponents must exceed -1 for an integrable weight (a = {a}, b = {b})"
        )));
    }
    let (mut diag, mut off, mu0) = jacobi_recurrence(order, a, b);
    let first = tridiag_eigen_first_components(&mut diag, &mut off)?;
    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(&first)
        .map(|(&x, &z)| (x, mu0 * z * z))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(LineRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
        exponent_a: a,
        exponent_b: b,
    })
}

/// Builds a tensor Gaussian velocity rule with `order` points per axis,
/// adapted to integrands decaying like `exp(-|xi/scale|^2)`.
pub fn build_velocity_rule(
    dimension: usize,
    order: usize,
    scale: f64,
) -> Result<VelocityRule, CoreError> {
    if !(2..=3).contains(&dimension) {
        return Err(CoreError::InvalidQuadrature(format!(
            "unsupported velocity dimension {dimension} (expected 2 or 3)"
        )));
    }
    if order == 0 {
        return Err(CoreError::InvalidQuadrature("order must be >= 1".into()));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(CoreError::InvalidQuadrature(format!(
            "scale must be positive and finite (got {scale})"
        )));
    }
    let (h_nodes, h_weights) = hermite_rule(order)?;
    // Per-axis weights absorbing the Gaussian factor: the rule then
    // approximates a plain Lebesgue integral of Gaussian-decay integrands.
    let axis_w: Vec<f64> = h_nodes
        .iter()
        .zip(&h_weights)
        .map(|(&x, &w)| scale * w * (x * x).exp())
        .collect();

    let mut nodes = Vec::with_capacity(order.pow(dimension as u32));
    let mut weights = Vec::with_capacity(order.pow(dimension as u32));
    match dimension {
        2 => {
            for i in 0..order {
                for j in 0..order {
                    nodes.push([scale * h_nodes[i], scale * h_nodes[j], 0.0]);
                    weights.push(axis_w[i] * axis_w[j]);
                }
            }
        }
        3 => {
            for i in 0..order {
                for j in 0..order {
                    for k in 0..order {
                        nodes.push([
                            scale * h_nodes[i],
                            scale * h_nodes[j],
                            scale * h_nodes[k],
                        ]);
                        weights.push(axis_w[i] * axis_w[j] * axis_w[k]);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(VelocityRule {
        dimension,
        nodes,
        weights,
        scale,
        points_per_axis: order,
    })
}

/// Value and diagnostics returned by [`adaptive_integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

/// Default evaluation budget for the adaptive integrator.
pub const ADAPTIVE_BUDGET: usize = 4_000_000;

/// Adaptive bisection integration of `f` on `[a, b]` to absolute tolerance
/// `tol`.
///
/// Each panel is estimated with the open three-point Newton–Cotes (Milne)
/// rule and accepted by Richardson comparison against its two halves.
/// Endpoints are never evaluated, so integrable endpoint singularities are
/// handled by refinement alone. The scheme shares no machinery with the
/// Gauss rules above.
pub fn adaptive_integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<QuadResult, CoreError> {
    adaptive_integrate_with_budget(f, a, b, tol, ADAPTIVE_BUDGET)
}

pub fn adaptive_integrate_with_budget<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    budget: usize,
) -> Result<QuadResult, CoreError> {
    adaptive_integrate_opts(f, a, b, tol, budget, 3)
}

/// Fully parameterized adaptive integration. `min_depth` forces that many
/// levels of subdivision before a panel may be accepted; inner loops with
/// well-scaled tolerances can lower it to trade robustness for speed.
pub fn adaptive_integrate_opts<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    budget: usize,
    min_depth: u32,
) -> Result<QuadResult, CoreError> {
    if !(tol > 0.0) {
        return Err(CoreError::InvalidQuadrature(
            "tolerance must be positive".into(),
        ));
    }
    if !(b > a) {
        return Err(CoreError::InvalidQuadrature(
            "interval must satisfy a < b".into(),
        ));
    }
    const MAX_DEPTH: u32 = 70;
    let evals = std::cell::Cell::new(0usize);
    let milne = |lo: f64, hi: f64| -> f64 {
        evals.set(evals.get() + 3);
        let h = (hi - lo) / 4.0;
        let f1 = f(lo + h);
        let f2 = f(lo + 2.0 * h);
        let f3 = f(lo + 3.0 * h);
        (hi - lo) / 3.0 * (2.0 * f1 - f2 + 2.0 * f3)
    };

    struct Panel {
        lo: f64,
        hi: f64,
        coarse: f64,
        tol: f64,
        depth: u32,
    }
    let coarse0 = milne(a, b);
    let mut stack = vec![Panel {
        lo: a,
        hi: b,
        coarse: coarse0,
        tol,
        depth: 0,
    }];
    let mut value = 0.0;
    let mut err_acc = 0.0;
    let mut exhausted = false;

    while let Some(p) = stack.pop() {
        let mid = 0.5 * (p.lo + p.hi);
        let left = milne(p.lo, mid);
        let right = milne(mid, p.hi);
        let fine = left + right;
        let all_finite = fine.is_finite() && p.coarse.is_finite();
        let diff = fine - p.coarse;
        let est = diff.abs() / 15.0;
        // Depth gate: symmetric or oscillatory integrands can fool the
        // Richardson estimate on coarse panels.
        let converged = all_finite && est <= p.tol && p.depth >= min_depth;
        // A panel narrower than the local float spacing cannot be split.
        let width_floor = 8.0 * f64::EPSILON * p.lo.abs().max(p.hi.abs());
        let unresolvable = p.depth >= MAX_DEPTH || (p.hi - p.lo) <= width_floor;
        if converged {
            value += fine + diff / 15.0;
            err_acc += est;
            continue;
        }
        if unresolvable {
            // An integrable endpoint singularity pinches down to a sliver
            // whose mass is below the tolerance allotted to it; drop it and
            // account for it in the error estimate.
            if all_finite {
                value += fine;
                err_acc += est.max(p.tol);
                if est > p.tol {
                    exhausted = true;
                }
            } else {
                err_acc += p.tol;
            }
            continue;
        }
        if evals.get() + 6 > budget {
            // Close out the remaining panels with their current estimates.
            if all_finite {
                value += fine + diff / 15.0;
                err_acc += est.max(p.tol);
            } else {
                err_acc += p.tol;
            }
            for q in stack.drain(..) {
                if q.coarse.is_finite() {
                    value += q.coarse;
                    // Unconverged leftovers: no Richardson pair, so charge
                    // them conservatively.
                    err_acc += q.tol.max(q.coarse.abs() * 0.5);
                } else {
                    err_acc += q.tol;
                }
            }
            exhausted = true;
            break;
        }
        let child_tol = 0.5 * p.tol;
        stack.push(Panel {
            lo: p.lo,
            hi: mid,
            coarse: left,
            tol: child_tol,
            depth: p.depth + 1,
        });
        stack.push(Panel {
            lo: mid,
            hi: p.hi,
            coarse: right,
            tol: child_tol,
            depth: p.depth + 1,
        });
    }

    if exhausted && err_acc > tol * 8.0 {
        return Err(CoreError::NonConvergent {
            partial: value,
            error_estimate: err_acc,
            tolerance: tol,
        });
    }
    Ok(QuadResult {
        value,
        error_estimate: err_acc,
        evaluations: evals.get(),
    })
}

/// Adaptive integration with 16-point Gauss–Legendre panels.
///
/// Panels are split until the parent value agrees with the sum of its
/// halves; convergence is spectral on analytic stretches, so this is the
/// workhorse for piecewise-smooth integrands with isolated kinks (absolute
/// moments, polar slices). Returns the value and an error estimate; on
/// budget exhaustion the best available estimate is returned rather than an
/// error, since callers here always treat the result as one sample inside a
/// larger tolerance-managed computation.
pub fn adaptive_gauss_panels<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    budget: usize,
) -> QuadResult {
    let rule = legendre_panel_rule();
    let evals = std::cell::Cell::new(0usize);
    let panel = |lo: f64, hi: f64| -> f64 {
        evals.set(evals.get() + rule.len());
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let mut acc = 0.0;
        for &(x, w) in rule {
            acc += w * f(c + h * x);
        }
        acc * h
    };
    struct P {
        lo: f64,
        hi: f64,
        val: f64,
        tol: f64,
        depth: u32,
    }
    let v0 = panel(a, b);
    let mut stack = vec![P {
        lo: a,
        hi: b,
        val: v0,
        tol,
        depth: 0,
    }];
    let mut value = 0.0;
    let mut err = 0.0;
    while let Some(p) = stack.pop() {
        let mid = 0.5 * (p.lo + p.hi);
        let left = panel(p.lo, mid);
        let right = panel(mid, p.hi);
        let fine = left + right;
        let est = (fine - p.val).abs();
        let width_floor = 8.0 * f64::EPSILON * p.lo.abs().max(p.hi.abs());
        // Root panels face a slightly stricter gate; one split-compare is
        // already a genuine error estimate for Gauss panels.
        let gate = if p.depth == 0 { 0.25 * p.tol } else { p.tol };
        let done = (est <= gate && fine.is_finite())
            || p.depth >= 60
            || (p.hi - p.lo) <= width_floor
            || evals.get() + 2 * rule.len() > budget;
        if done {
            if fine.is_finite() {
                value += fine;
                err += est;
            } else if p.val.is_finite() {
                value += p.val;
                err += p.tol;
            }
            if evals.get() + 2 * rule.len() > budget {
                for q in stack.drain(..) {
                    if q.val.is_finite() {
                        value += q.val;
                        err += q.tol.max(est);
                    }
                }
                break;
            }
            continue;
        }
        stack.push(P {
            lo: p.lo,
            hi: mid,
            val: left,
            tol: 0.5 * p.tol,
            depth: p.depth + 1,
        });
        stack.push(P {
            lo: mid,
            hi: p.hi,
            val: right,
            tol: 0.5 * p.tol,
            depth: p.depth + 1,
        });
    }
    QuadResult {
        value,
        error_estimate: err,
        evaluations: evals.get(),
    }
}

fn legendre_panel_rule() -> &'static [(f64, f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let r = build_jacobi_rule(16, 0.0, 0.0).expect("static Legendre rule");
        r.nodes()
            .iter()
            .copied()
            .zip(r.weights().iter().copied())
            .collect()
    })
}

/// Integrates `f(z) (1-z)^a (1+z)^b` over (-1, 1) with the endpoint weight
/// handled analytically.
///
/// A tanh–sinh substitution maps the interval to the line; the factors
/// `1 -/+ z` are produced in cancellation-free form, so weight exponents
/// arbitrarily close to -1 are integrated to full precision. The transformed
/// integrand is then handled by the same bisection scheme as
/// [`adaptive_integrate`], keeping this oracle independent of the Gauss
/// rules.
pub fn adaptive_weighted_integrate<F: Fn(f64) -> f64>(
    f: F,
    a_exp: f64,
    b_exp: f64,
    tol: f64,
) -> Result<QuadResult, CoreError> {
    if a_exp <= -1.0 || b_exp <= -1.0 {
        return Err(CoreError::InvalidQuadrature(format!(
            "weight exponents must exceed -1 (a = {a_exp}, b = {b_exp})"
        )));
    }
    const T_MAX: f64 = 6.5;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let g = move |t: f64| -> f64 {
        let w = half_pi * t.sinh();
        // Stable 1 -/+ tanh(w): no cancellation at either endpoint.
        let (one_minus_z, one_plus_z) = if w >= 0.0 {
            let q = (-2.0 * w).exp();
            (2.0 * q / (1.0 + q), 2.0 / (1.0 + q))
        } else {
            let q = (2.0 * w).exp();
            (2.0 / (1.0 + q), 2.0 * q / (1.0 + q))
        };
        let z = 0.5 * (one_plus_z - one_minus_z);
        // dz/dt = (pi/2) cosh t * sech^2(w) = (pi/2) cosh t (1-z)(1+z), so
        // the weight exponents shift by one and stay positive.
        let jac = half_pi * t.cosh();
        let wgt = one_minus_z.powf(a_exp + 1.0) * one_plus_z.powf(b_exp + 1.0);
        if wgt == 0.0 {
            return 0.0;
        }
        f(z) * wgt * jac
    };
    adaptive_integrate_with_budget(g, -T_MAX, T_MAX, tol, ADAPTIVE_BUDGET)
}

/// Recurrence coefficients of the orthonormal Jacobi polynomials: diagonal,
/// off-diagonal (squared entries still unrooted), and the weight mass mu0.
fn jacobi_recurrence(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let mu0 = 2f64.powf(a + b + 1.0) * beta_fn(a + 1.0, b + 1.0);
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    diag[0] = (b - a) / (a + b + 2.0);
    for k in 1..n {
        let nu = 2.0 * k as f64 + a + b;
        diag[k] = (b * b - a * a) / (nu * (nu + 2.0));
        let beta_k = if k == 1 {
            4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0).powi(2) * (a + b + 3.0))
        } else {
            let kf = k as f64;
            4.0 * kf * (kf + a) * (kf + b) * (kf + a + b)
                / (nu * nu * (nu + 1.0) * (nu - 1.0))
        };
        off[k - 1] = beta_k.sqrt();
    }
    (diag, off, mu0)
}

/// Hermite rule for the weight `exp(-x^2)` on the whole line.
fn hermite_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>), CoreError> {
    let mu0 = std::f64::consts::PI.sqrt();
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    let first = tridiag_eigen_first_components(&mut diag, &mut off)?;
    let mut pairs: Vec<(f64, f64)> = diag
        .iter()
        .zip(&first)
        .map(|(&x, &z)| (x, mu0 * z * z))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok((
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
    ))
}

/// QL iteration with implicit shifts on a symmetric tridiagonal matrix.
///
/// On return `diag` holds the eigenvalues (unsorted) and the result holds the
/// first component of each orthonormal eigenvector, which is all
/// Golub–Welsch needs for the weights.
fn tridiag_eigen_first_components(
    diag: &mut [f64],
    off: &mut [f64],
) -> Result<Vec<f64>, CoreError> {
    let n = diag.len();
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    if n == 1 {
        return Ok(z);
    }
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(CoreError::InvalidQuadrature(
                    "tridiagonal eigensolver failed to converge".into(),
                ));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            let sign_r = if g >= 0.0 { r } else { -r };
            g = diag[m] - diag[l] + e[l] / (g + sign_r);
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let bb = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * bb;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - bb;
                f = z[i + 1];
                z[i + 1] = s * z[i] + c * f;
                z[i] = c * z[i] - s * f;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(z)
}
