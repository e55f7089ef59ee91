//! The manufactured analytic family: finite sums of polynomial-times-Gaussian
//! terms, closed under partial differentiation of any order.
//!
//! This family carries every test density and its exact derivatives. Signed
//! integrals against polynomials are exact by construction; absolute moments
//! `int |d| |xi|^{2p}` are computed by a radial-shell decomposition with
//! per-shell adaptive refinement, since `|d|` has codimension-one kinks on
//! the nodal set of the polynomial factor.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::CoreError;
use crate::quadrature::{adaptive_gauss_panels, VelocityRule};
use crate::special::{gamma_fn, sphere_measure};
use crate::vec3::Velocity;

/// A tuple of partial-derivative orders, one per velocity coordinate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(i: usize, n: usize) -> Self {
        let mut v = vec![0; n];
        v[i] = 1;
        MultiIndex(v)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    /// Total order |eta|.
    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Componentwise partial order `self <= other`.
    pub fn leq(&self, other: &MultiIndex) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Strict comparison: componentwise <= and not equal.
    pub fn lt(&self, other: &MultiIndex) -> bool {
        self.leq(other) && self != other
    }

    pub fn sub(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Multi-index binomial coefficient: the product of the componentwise
    /// binomials.
    pub fn binomial(&self, nu: &MultiIndex) -> f64 {
        self.0
            .iter()
            .zip(&nu.0)
            .map(|(&e, &v)| binom_u32(e, v) as f64)
            .product()
    }

    /// All nu with nu <= self, in lexicographic order.
    pub fn submultiindices(&self) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex(Vec::new())];
        for &e in &self.0 {
            let mut next = Vec::with_capacity(out.len() * (e as usize + 1));
            for prefix in &out {
                for k in 0..=e {
                    let mut v = prefix.0.clone();
                    v.push(k);
                    next.push(MultiIndex(v));
                }
            }
            out = next;
        }
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "{}", parts.join(":"))
    }
}

fn binom_u32(n: u32, k: u32) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Sparse multivariate polynomial with deterministic term order.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoly {
    n: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl MultiPoly {
    pub fn zero(n: usize) -> Self {
        MultiPoly {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = MultiPoly::zero(n);
        if c != 0.0 {
            p.terms.insert(vec![0; n], c);
        }
        p
    }

    /// The coordinate monomial `xi_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut expo = vec![0; n];
        expo[i] = 1;
        let mut p = MultiPoly::zero(n);
        p.terms.insert(expo, 1.0);
        p
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coeff: f64) {
        assert_eq!(exponents.len(), self.n);
        let e = self.terms.entry(exponents).or_insert(0.0);
        *e += coeff;
        if *e == 0.0 {
            // keep the map minimal
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|&c| c == 0.0)
    }

    pub fn eval(&self, xi: &Velocity) -> f64 {
        let mut acc = 0.0;
        for (expo, &c) in &self.terms {
            let mut t = c;
            for (i, &e) in expo.iter().enumerate() {
                if e > 0 {
                    t *= xi[i].powi(e as i32);
                }
            }
            acc += t;
        }
        acc
    }

    pub fn scale(&self, s: f64) -> MultiPoly {
        MultiPoly {
            n: self.n,
            terms: self.terms.iter().map(|(e, &c)| (e.clone(), c * s)).collect(),
        }
    }

    pub fn add(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = self.clone();
        for (e, &c) in &other.terms {
            *out.terms.entry(e.clone()).or_insert(0.0) += c;
        }
        out.prune();
        out
    }

    pub fn mul(&self, other: &MultiPoly) -> MultiPoly {
        let mut out = MultiPoly::zero(self.n);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out.prune();
        out
    }

    /// Partial derivative in coordinate `i`.
    pub fn diff(&self, i: usize) -> MultiPoly {
        let mut out = MultiPoly::zero(self.n);
        for (e, &c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut d = e.clone();
            d[i] -= 1;
            *out.terms.entry(d).or_insert(0.0) += c * e[i] as f64;
        }
        out
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(_, &c)| c != 0.0)
            .map(|(e, _)| e.iter().sum())
            .max()
            .unwrap_or(0)
    }

    /// Largest coefficient magnitude, for envelope bounds.
    pub fn coeff_norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs()).fold(0.0, f64::max)
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| *c != 0.0);
    }
}

/// One `coeff * P(xi) * exp(-|xi - center|^2 / (2 width))` term.
#[derive(Debug, Clone)]
pub struct GaussTerm {
    pub coeff: f64,
    pub poly: MultiPoly,
    pub center: Velocity,
    pub width: f64,
}

/// Flattened term representation for fast evaluation in hot loops.
#[derive(Debug, Clone)]
struct FlatTerm {
    coeff: f64,
    center: Velocity,
    inv_two_width: f64,
    monomials: Vec<(f64, [u32; 3])>,
}

/// A finite sum of polynomial-times-Gaussian terms in dimension 2 or 3.
#[derive(Debug, Clone)]
pub struct PolyGaussianDensity {
    n: usize,
    terms: Vec<GaussTerm>,
    flat: Vec<FlatTerm>,
}

impl PolyGaussianDensity {
    pub fn new(n: usize, terms: Vec<GaussTerm>) -> Result<Self, CoreError> {
        if !(2..=3).contains(&n) {
            return Err(CoreError::InvalidDensity(format!(
                "unsupported dimension {n}"
            )));
        }
        for t in &terms {
            if !(t.width > 0.0) || !t.width.is_finite() {
                return Err(CoreError::InvalidDensity(format!(
                    "term width must be positive and finite (got {})",
                    t.width
                )));
            }
            if n == 2 && t.center[2] != 0.0 {
                return Err(CoreError::InvalidDensity(
                    "2-d density with nonzero third center component".into(),
                ));
            }
        }
        Ok(Self::from_parts(n, terms))
    }

    fn from_parts(n: usize, terms: Vec<GaussTerm>) -> Self {
        let flat = terms
            .iter()
            .map(|t| FlatTerm {
                coeff: t.coeff,
                center: t.center,
                inv_two_width: 1.0 / (2.0 * t.width),
                monomials: t
                    .poly
                    .terms
                    .iter()
                    .filter(|(_, &c)| c != 0.0)
                    .map(|(e, &c)| {
                        let mut expo = [0u32; 3];
                        for (i, &ei) in e.iter().enumerate() {
                            expo[i] = ei;
                        }
                        (c, expo)
                    })
                    .collect(),
            })
            .collect();
        PolyGaussianDensity { n, terms, flat }
    }

    /// Normalized Maxwellian with temperature `t` and total mass `mass`.
    pub fn maxwellian(n: usize, t: f64, mass: f64) -> Result<Self, CoreError> {
        Self::gaussian_at(n, [0.0, 0.0, 0.0], t, mass)
    }

    /// Normalized Gaussian bump at `center` with variance `t` per axis.
    pub fn gaussian_at(
        n: usize,
        center: Velocity,
        t: f64,
        mass: f64,
    ) -> Result<Self, CoreError> {
        if !(t > 0.0) {
            return Err(CoreError::InvalidDensity("width must be positive".into()));
        }
        let norm = mass / (2.0 * std::f64::consts::PI * t).powf(n as f64 / 2.0);
        PolyGaussianDensity::new(
            n,
            vec![GaussTerm {
                coeff: norm,
                poly: MultiPoly::constant(n, 1.0),
                center,
                width: t,
            }],
        )
    }

    /// The Maxwellian-type weight `exp(-r |xi|^2)` times `(1 + |xi|^2)^s`
    /// for a nonnegative integer `s`; the reference profile for pointwise
    /// tail comparisons.
    pub fn polynomial_weighted_maxwellian(
        n: usize,
        r: f64,
        s: u32,
    ) -> Result<Self, CoreError> {
        if !(r > 0.0) {
            return Err(CoreError::InvalidDensity("rate must be positive".into()));
        }
        // (1 + |xi|^2)^s expanded as a polynomial.
        let mut radial = MultiPoly::constant(n, 1.0);
        let mut r2 = MultiPoly::constant(n, 1.0);
        for i in 0..n {
            let c = MultiPoly::coordinate(n, i);
            r2 = r2.add(&c.mul(&c));
        }
        r2.add_term(vec![0; n], 0.0);
        let one_plus_r2 = MultiPoly::constant(n, 1.0).add(&{
            let mut sq = MultiPoly::zero(n);
            for i in 0..n {
                let c = MultiPoly::coordinate(n, i);
                sq = sq.add(&c.mul(&c));
            }
            sq
        });
        for _ in 0..s {
            radial = radial.mul(&one_plus_r2);
        }
        PolyGaussianDensity::new(
            n,
            vec![GaussTerm {
                coeff: 1.0,
                poly: radial,
                center: [0.0, 0.0, 0.0],
                width: 1.0 / (2.0 * r),
            }],
        )
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[GaussTerm] {
        &self.terms
    }

    #[inline]
    pub fn eval(&self, xi: &Velocity) -> f64 {
        let mut acc = 0.0;
        for t in &self.flat {
            let dx = xi[0] - t.center[0];
            let dy = xi[1] - t.center[1];
            let dz = xi[2] - t.center[2];
            let q = dx * dx + dy * dy + dz * dz;
            let mut poly = 0.0;
            for &(c, e) in &t.monomials {
                let mut m = c;
                if e[0] > 0 {
                    m *= xi[0].powi(e[0] as i32);
                }
                if e[1] > 0 {
                    m *= xi[1].powi(e[1] as i32);
                }
                if e[2] > 0 {
                    m *= xi[2].powi(e[2] as i32);
                }
                poly += m;
            }
            acc += t.coeff * poly * (-q * t.inv_two_width).exp();
        }
        acc
    }

    /// Upper bound of |density| on the radial shell `lo <= |xi| <= hi`;
    /// used to skip far-field shells wholesale.
    pub fn shell_bound(&self, lo: f64, hi: f64) -> f64 {
        let mut bound = 0.0;
        for t in &self.terms {
            let c_norm = crate::vec3::norm(&t.center);
            let dist = if c_norm < lo {
                lo - c_norm
            } else if c_norm > hi {
                c_norm - hi
            } else {
                0.0
            };
            let poly_bound: f64 = t
                .poly
                .terms
                .iter()
                .map(|(e, &c)| c.abs() * hi.powi(e.iter().sum::<u32>() as i32))
                .sum();
            bound += t.coeff.abs() * poly_bound * (-dist * dist / (2.0 * t.width)).exp();
        }
        bound
    }

    /// Exact symbolic partial derivative of any order; stays in the family.
    pub fn differentiate(&self, eta: &MultiIndex) -> PolyGaussianDensity {
        assert_eq!(eta.dimension(), self.n, "multi-index dimension mismatch");
        let mut out = self.clone();
        for (axis, &k) in eta.0.iter().enumerate() {
            for _ in 0..k {
                out = out.partial(axis);
            }
        }
        out
    }

    fn partial(&self, axis: usize) -> PolyGaussianDensity {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                // d/dxi [P e^{-|xi-m|^2/2T}] = (dP - P (xi - m)/T) e^{...}
                let dp = t.poly.diff(axis);
                let mut shift = MultiPoly::coordinate(self.n, axis);
                shift.add_term(vec![0; self.n], -t.center[axis]);
                let drift = t.poly.mul(&shift).scale(-1.0 / t.width);
                GaussTerm {
                    coeff: t.coeff,
                    poly: dp.add(&drift),
                    center: t.center,
                    width: t.width,
                }
            })
            .collect();
        PolyGaussianDensity::from_parts(self.n, terms)
    }

    /// Sum of two densities (term concatenation).
    pub fn add(&self, other: &PolyGaussianDensity) -> PolyGaussianDensity {
        assert_eq!(self.n, other.n);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        PolyGaussianDensity::from_parts(self.n, terms)
    }

    pub fn scale(&self, s: f64) -> PolyGaussianDensity {
        let terms = self
            .terms
            .iter()
            .map(|t| GaussTerm {
                coeff: t.coeff * s,
                ..t.clone()
            })
            .collect();
        PolyGaussianDensity::from_parts(self.n, terms)
    }

    /// The quotient `d(xi) exp(+r |xi|^2)`, which stays in the family as
    /// long as every term decays faster than the weight.
    pub fn divide_by_maxwellian_weight(&self, r: f64) -> Result<PolyGaussianDensity, CoreError> {
        let mut terms = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let a = 1.0 / (2.0 * t.width) - r;
            if a <= 0.0 {
                return Err(CoreError::InvalidDensity(format!(
                    "term with width {} does not decay faster than exp(-{r}|xi|^2)",
                    t.width
                )));
            }
            // -|xi-m|^2/(2T) + r|xi|^2 = -a|xi - m/(2Ta)|^2 + |m|^2 (1/(2Ta) - 1)/(2T)
            let new_width = 1.0 / (2.0 * a);
            let scale_c = 1.0 / (2.0 * t.width * a);
            let new_center = crate::vec3::scale(&t.center, scale_c);
            let m2 = crate::vec3::norm_sq(&t.center);
            let log_gain = m2 / (2.0 * t.width) * (scale_c - 1.0);
            terms.push(GaussTerm {
                coeff: t.coeff * log_gain.exp(),
                poly: t.poly.clone(),
                center: new_center,
                width: new_width,
            });
        }
        Ok(PolyGaussianDensity::from_parts(self.n, terms))
    }

    /// Largest per-term Gaussian width.
    pub fn max_width(&self) -> f64 {
        self.terms.iter().map(|t| t.width).fold(0.0, f64::max)
    }

    /// Largest center offset from the origin.
    pub fn max_center_norm(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| crate::vec3::norm(&t.center))
            .fold(0.0, f64::max)
    }

    /// Radius beyond which `|density| * |xi|^{2p}` is below 1e-16 of its
    /// peak scale, padded for polynomial growth.
    pub fn envelope_radius(&self, two_p: f64) -> f64 {
        let t = self.max_width().max(1e-6);
        let c = self.max_center_norm();
        let deg = self
            .terms
            .iter()
            .map(|t| t.poly.total_degree())
            .max()
            .unwrap_or(0) as f64;
        // Solve r^2/(2T) ~ 40 + (2p + deg + n) ln r by fixed point.
        let power = two_p + deg + self.n as f64;
        let mut r = (2.0 * t * 40.0).sqrt().max(2.0);
        for _ in 0..20 {
            r = (2.0 * t * (40.0 + power * r.max(1.0).ln())).sqrt();
        }
        r + c
    }

    /// Exact signed integral of `density * P(xi)` for a polynomial `P`,
    /// via per-term Gaussian moment formulas. Used for mass/energy checks
    /// where no absolute value is involved.
    pub fn polynomial_integral(&self, p: &MultiPoly) -> f64 {
        let mut acc = 0.0;
        for t in &self.terms {
            let prod = t.poly.mul(p);
            for (expo, &c) in &prod.terms {
                if c == 0.0 {
                    continue;
                }
                let mut term = c * t.coeff;
                for i in 0..self.n {
                    term *= gaussian_moment_1d(expo[i], t.center[i], t.width);
                }
                if self.n == 2 && expo[2] != 0 {
                    term = 0.0;
                }
                acc += term;
            }
        }
        acc
    }

    /// Total mass (signed).
    pub fn mass(&self) -> f64 {
        self.polynomial_integral(&MultiPoly::constant(self.n, 1.0))
    }

    /// Signed second moment `int d |xi|^2`.
    pub fn energy(&self) -> f64 {
        let mut p = MultiPoly::zero(self.n);
        for i in 0..self.n {
            let c = MultiPoly::coordinate(self.n, i);
            p = p.add(&c.mul(&c));
        }
        self.polynomial_integral(&p)
    }
}

/// 1-d Gaussian moment `int x^k exp(-(x-m)^2/(2T)) dx`.
fn gaussian_moment_1d(k: u32, m: f64, t: f64) -> f64 {
    // Binomial expansion around the center; central odd moments vanish.
    let root = (2.0 * std::f64::consts::PI * t).sqrt();
    let mut acc = 0.0;
    for j in (0..=k).step_by(2) {
        // central moment E[(x-m)^j] = (j-1)!! T^{j/2}
        let mut dfact = 1.0;
        let mut i = j as i64 - 1;
        while i > 1 {
            dfact *= i as f64;
            i -= 2;
        }
        if j > 0 {
            dfact *= 1.0; // (1)!! = 1 handled by loop
        }
        let central = dfact * t.powi(j as i32 / 2);
        acc += binom_u32(k, j) as f64 * central * m.powi((k - j) as i32);
    }
    root * acc
}

/// Options for the absolute-moment integrator.
#[derive(Debug, Clone, Copy)]
pub struct AbsMomentOpts {
    pub shells: usize,
    pub rel_tol: f64,
}

impl Default for AbsMomentOpts {
    fn default() -> Self {
        AbsMomentOpts {
            shells: 64,
            rel_tol: 1e-8,
        }
    }
}

/// Absolute moment `int |d(xi)| |xi|^{2p} dxi` of order `p >= 0`.
///
/// The radial cutoff comes from the density envelope; the supplied rule only
/// contributes its scale as a plausibility cross-check (a warning-level
/// mismatch is reported through the error if the rule cannot see the
/// envelope at all). Integration is shell-by-shell adaptive in the radius
/// with adaptive spherical sections, so polynomial nodal sets cost accuracy
/// only locally.
pub fn abs_moment(
    d: &PolyGaussianDensity,
    p: f64,
    rule: &VelocityRule,
) -> Result<f64, CoreError> {
    abs_moment_with_opts(d, p, Some(rule), AbsMomentOpts::default())
}

/// Absolute moment with explicit options and no rule cross-check.
pub fn abs_moment_auto(d: &PolyGaussianDensity, p: f64) -> Result<f64, CoreError> {
    abs_moment_with_opts(d, p, None, AbsMomentOpts::default())
}

pub fn abs_moment_with_opts(
    d: &PolyGaussianDensity,
    p: f64,
    rule: Option<&VelocityRule>,
    opts: AbsMomentOpts,
) -> Result<f64, CoreError> {
    if p < 0.0 {
        return Err(CoreError::InvalidMoment(format!(
            "moment order must be nonnegative, got {p}"
        )));
    }
    let r_max = d.envelope_radius(2.0 * p);
    if let Some(rule) = rule {
        // The rule's reach is roughly scale * sqrt(degree); a rule far too
        // narrow for this density signals a configuration slip.
        let reach = rule.scale() * (rule.exact_degree() as f64).sqrt();
        if reach < 0.3 * r_max {
            return Err(CoreError::InvalidMoment(format!(
                "velocity rule reach {reach:.2} cannot resolve density envelope radius {r_max:.2}"
            )));
        }
    }
    let n = d.dimension();
    let radial_power = 2.0 * p + (n as f64 - 1.0);

    // Crude global pre-scan: fixed radii, fixed angular samples. Only sets
    // the absolute-tolerance scale; never contributes to the value.
    let pre_radii = 48usize;
    let mut pre_total = 0.0f64;
    for k in 0..pre_radii {
        let r = r_max * (k as f64 + 0.5) / pre_radii as f64;
        let mut ang = 0.0;
        let samples = 32;
        for dir in direction_grid(n, samples) {
            ang += d.eval(&[r * dir[0], r * dir[1], r * dir[2]]).abs();
        }
        let sphere_est = ang / samples as f64 * sphere_measure(n - 1);
        pre_total += r.powf(radial_power) * sphere_est * (r_max / pre_radii as f64);
    }
    let scale = pre_total.abs().max(f64::MIN_POSITIVE);
    let shell_tol = opts.rel_tol * scale / opts.shells as f64;

    let shell_values: Vec<f64> = (0..opts.shells)
        .into_par_iter()
        .map(|k| {
            let lo = r_max * k as f64 / opts.shells as f64;
            let hi = r_max * (k + 1) as f64 / opts.shells as f64;
            // Far-field shells are skipped when an envelope bound puts their
            // whole contribution below the shell budget.
            let skip_bound = d.shell_bound(lo, hi)
                * sphere_measure(n - 1)
                * hi.powf(radial_power)
                * (hi - lo);
            if skip_bound < 0.02 * shell_tol {
                return 0.0;
            }
            // Tolerance for the polar layer inside each radial evaluation;
            // the ring integrals below it are spectral.
            let sphere_tol = (1e-2 * shell_tol / (hi - lo)).max(1e-16 * scale);
            adaptive_gauss_panels(
                |r: f64| {
                    if r == 0.0 {
                        return 0.0;
                    }
                    r.powf(radial_power) * sphere_abs_integral(d, r, sphere_tol)
                },
                lo,
                hi,
                shell_tol,
                2_000,
            )
            .value
        })
        .collect();
    let total: f64 = shell_values.iter().sum();
    if !total.is_finite() {
        return Err(CoreError::InvalidMoment(
            "absolute-moment integration produced a non-finite value".into(),
        ));
    }
    Ok(total.max(0.0))
}

/// Integral of |d| over the sphere of radius `r` with respect to the
/// solid-angle measure.
///
/// Circles are integrated by sign-arc splitting: the restriction of the
/// density to a circle is analytic, so its zeros are bracketed by sampling,
/// refined by bisection, and each sign-definite arc is integrated by
/// Gauss–Legendre panels at spectral accuracy. In 3-d an adaptive layer over
/// the polar cosine sits on top, since arc creation/annihilation leaves
/// isolated kinks there.
fn sphere_abs_integral(d: &PolyGaussianDensity, r: f64, abs_tol: f64) -> f64 {
    match d.dimension() {
        2 => circle_abs_integral(|theta| d.eval(&[r * theta.cos(), r * theta.sin(), 0.0])),
        3 => {
            // Polar angle with the sin(theta) Jacobian kept explicit: the
            // integrand is then piecewise analytic in theta with kinks only
            // where the nodal set grazes a ring.
            let slice = |theta: f64| {
                let s = theta.sin();
                let c = theta.cos();
                s * circle_abs_integral(|phi| {
                    d.eval(&[r * s * phi.cos(), r * s * phi.sin(), r * c])
                })
            };
            adaptive_gauss_panels(slice, 0.0, std::f64::consts::PI, abs_tol, 4_000).value
        }
        _ => f64::NAN,
    }
}

/// `int_0^{2 pi} |g(theta)| d theta` for analytic `g`, by sign-arc
/// decomposition.
fn circle_abs_integral<G: Fn(f64) -> f64>(g: G) -> f64 {
    const SAMPLES: usize = 48;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut theta = [0.0f64; SAMPLES + 1];
    let mut val = [0.0f64; SAMPLES + 1];
    for k in 0..=SAMPLES {
        theta[k] = two_pi * k as f64 / SAMPLES as f64;
        val[k] = g(theta[k]);
    }
    // Bracket and bisect the sign changes.
    let mut cuts: Vec<f64> = Vec::new();
    for k in 0..SAMPLES {
        if val[k] == 0.0 {
            cuts.push(theta[k]);
            continue;
        }
        if val[k] * val[k + 1] < 0.0 {
            let (mut lo, mut hi) = (theta[k], theta[k + 1]);
            let mut flo = val[k];
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = g(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if flo * fm < 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

    let mut boundaries = vec![0.0];
    boundaries.extend(cuts.iter().copied().filter(|&c| c > 1e-13 && c < two_pi - 1e-13));
    boundaries.push(two_pi);

    let mut total = 0.0;
    for w in boundaries.windows(2) {
        total += smooth_panel_integral(&g, w[0], w[1]).abs();
    }
    total
}

/// Composite 16-point Gauss–Legendre over panels no wider than pi/4;
/// machine-precision on analytic integrands.
fn smooth_panel_integral<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64) -> f64 {
    let rule = legendre_16();
    let panels = (((b - a) / (std::f64::consts::PI / 4.0)).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    let mut acc = 0.0;
    for k in 0..panels {
        let lo = a + h * k as f64;
        let c = lo + 0.5 * h;
        for &(x, w) in rule {
            acc += w * g(c + 0.5 * h * x);
        }
    }
    acc * 0.5 * h
}

fn legendre_16() -> &'static [(f64, f64)] {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let r = crate::quadrature::build_jacobi_rule(16, 0.0, 0.0).expect("static rule");
        r.nodes().iter().copied().zip(r.weights().iter().copied()).collect()
    })
}

/// Result of the weighted tail-supremum scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailSup {
    /// Grid supremum of the weighted ratio.
    Finite(f64),
    /// The ratio keeps growing at the outer edge of the grid.
    Divergent,
}

impl TailSup {
    pub fn is_divergent(&self) -> bool {
        matches!(self, TailSup::Divergent)
    }

    pub fn value(&self) -> f64 {
        match self {
            TailSup::Finite(v) => *v,
            TailSup::Divergent => f64::INFINITY,
        }
    }
}

/// Supremum over a radial-by-direction grid of
/// `|d(xi)| / ((1 + |xi|^2)^{w/2} exp(-r |xi|^2))`.
///
/// Divergence (a tail growing at the edge of the grid) is a valid report,
/// not an error: the log-ratio slope against `|xi|^2` over the outer
/// quarter of the grid decides.
pub fn tail_ratio_sup(d: &PolyGaussianDensity, r: f64, weight_power: u32) -> TailSup {
    tail_ratio_sup_with_radius(d, r, weight_power, d.envelope_radius(0.0).max(12.0))
}

pub fn tail_ratio_sup_with_radius(
    d: &PolyGaussianDensity,
    r: f64,
    weight_power: u32,
    r_max: f64,
) -> TailSup {
    let n = d.dimension();
    let n_dirs = if n == 2 { 64 } else { 98 };
    let dirs = direction_grid(n, n_dirs);
    let radii: Vec<f64> = (0..=512).map(|k| r_max * k as f64 / 512.0).collect();

    let mut sup: f64 = 0.0;
    let mut radial_max = vec![0.0f64; radii.len()];
    for (ri, &rad) in radii.iter().enumerate() {
        let weight = (1.0 + rad * rad).powf(weight_power as f64 / 2.0) * (-r * rad * rad).exp();
        let mut m: f64 = 0.0;
        for dir in &dirs {
            let xi = [rad * dir[0], rad * dir[1], rad * dir[2]];
            m = m.max(d.eval(&xi).abs());
        }
        let ratio = m / weight;
        radial_max[ri] = ratio;
        sup = sup.max(ratio);
    }
    // Slope of log(ratio) against |xi|^2 over the two outer quarters. A
    // genuinely divergent ratio (rate mismatch) has a constant positive
    // slope; a bounded ratio with a polynomial prefactor has a positive but
    // ~1/|xi|^2-decaying one.
    let quarter = |lo: usize, hi: usize| -> Option<f64> {
        let pts: Vec<(f64, f64)> = (lo..hi)
            .filter(|&i| radial_max[i] > 0.0 && radial_max[i].is_finite())
            .map(|i| (radii[i] * radii[i], radial_max[i].ln()))
            .collect();
        (pts.len() >= 4).then(|| least_squares_slope(&pts))
    };
    let q3 = quarter(radii.len() / 2, 3 * radii.len() / 4);
    let q4 = quarter(3 * radii.len() / 4, radii.len());
    if let (Some(s3), Some(s4)) = (q3, q4) {
        if s4 > 1e-6 && s4 > 0.7 * s3 {
            return TailSup::Divergent;
        }
    }
    if !sup.is_finite() {
        return TailSup::Divergent;
    }
    TailSup::Finite(sup)
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

pub(crate) fn direction_grid(n: usize, count: usize) -> Vec<Velocity> {
    let mut dirs = Vec::with_capacity(count);
    if n == 2 {
        for k in 0..count {
            let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            dirs.push([th.cos(), th.sin(), 0.0]);
        }
    } else {
        // Fibonacci sphere: near-uniform deterministic coverage.
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        for k in 0..count {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (k as f64 / golden).fract();
            dirs.push([rho * phi.cos(), rho * phi.sin(), z]);
        }
    }
    dirs
}

/// Key wrapper making f64 usable in ordered maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrdF64(pub f64);

impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Metadata attached to a [`MomentTable`].
#[derive(Debug, Clone, Serialize)]
pub struct MomentTableMeta {
    pub b: f64,
    pub alpha: f64,
    pub dimension: usize,
    pub description: String,
}

/// Values `int |d^nu f| |xi|^{2p}` indexed by (derivative index, order,
/// time), plus the normalization parameter `b` used for the scaled entries.
#[derive(Debug, Clone)]
pub struct MomentTable {
    entries: BTreeMap<(MultiIndex, OrdF64, OrdF64), f64>,
    meta: MomentTableMeta,
}

impl MomentTable {
    pub fn new(b: f64, alpha: f64, dimension: usize, description: &str) -> Self {
        MomentTable {
            entries: BTreeMap::new(),
            meta: MomentTableMeta {
                b,
                alpha,
                dimension,
                description: description.to_string(),
            },
        }
    }

    pub fn meta(&self) -> &MomentTableMeta {
        &self.meta
    }

    pub fn b(&self) -> f64 {
        self.meta.b
    }

    pub fn alpha(&self) -> f64 {
        self.meta.alpha
    }

    pub fn insert(&mut self, nu: MultiIndex, p: f64, t: f64, value: f64) {
        self.entries.insert((nu, OrdF64(p), OrdF64(t)), value);
    }

    /// Raw moment lookup with a tolerance window on `p` and `t` so keys
    /// produced by different arithmetic paths still match.
    pub fn get(&self, nu: &MultiIndex, p: f64, t: f64) -> Option<f64> {
        let lo = (nu.clone(), OrdF64(p - 1e-9), OrdF64(t - 1e-9));
        let hi = (nu.clone(), OrdF64(p + 1e-9), OrdF64(t + 1e-9));
        self.entries
            .range(lo..=hi)
            .find(|((_, _, kt), _)| (kt.0 - t).abs() <= 1e-9)
            .map(|(_, &v)| v)
    }

    /// Normalized moment `m / Gamma(p + b)`.
    pub fn get_normalized(&self, nu: &MultiIndex, p: f64, t: f64) -> Option<f64> {
        self.get(nu, p, t).map(|m| m / gamma_fn(p + self.meta.b))
    }

    /// Moment with log-linear interpolation in `p` when the exact order is
    /// absent. Returns the value and whether interpolation was used.
    pub fn get_interpolated(
        &self,
        nu: &MultiIndex,
        p: f64,
        t: f64,
    ) -> Result<(f64, bool), CoreError> {
        if let Some(v) = self.get(nu, p, t) {
            return Ok((v, false));
        }
        let ps = self.orders_for(nu, t);
        let below = ps.iter().copied().filter(|&q| q < p).fold(f64::NEG_INFINITY, f64::max);
        let above = ps.iter().copied().filter(|&q| q > p).fold(f64::INFINITY, f64::min);
        if !below.is_finite() || !above.is_finite() {
            return Err(CoreError::MissingEntries(format!(
                "order {p} for nu = {nu} at t = {t} cannot be bracketed"
            )));
        }
        let mlo = self.get(nu, below, t).unwrap();
        let mhi = self.get(nu, above, t).unwrap();
        if mlo <= 0.0 || mhi <= 0.0 {
            // Fall back to linear interpolation when logs are unavailable.
            let w = (p - below) / (above - below);
            return Ok((mlo + w * (mhi - mlo), true));
        }
        let w = (p - below) / (above - below);
        Ok(((mlo.ln() * (1.0 - w) + mhi.ln() * w).exp(), true))
    }

    /// All derivative indices present in the table.
    pub fn indices(&self) -> Vec<MultiIndex> {
        let mut out: Vec<MultiIndex> = self.entries.keys().map(|(nu, _, _)| nu.clone()).collect();
        out.dedup();
        out
    }

    /// All orders stored for a given index and time.
    pub fn orders_for(&self, nu: &MultiIndex, t: f64) -> Vec<f64> {
        self.entries
            .keys()
            .filter(|(knu, _, kt)| knu == nu && (kt.0 - t).abs() <= 1e-9)
            .map(|(_, kp, _)| kp.0)
            .collect()
    }

    /// All observation times in the table.
    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.entries.keys().map(|(_, _, t)| t.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        ts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64, f64, f64)> {
        self.entries
            .iter()
            .map(|((nu, p, t), &m)| (nu, p.0, t.0, m))
    }

    /// CSV rows `nu,p,t,m,z,b` with `\n` endings.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "nu,p,t,m,z,b")?;
        for ((nu, p, t), &m) in &self.entries {
            let z = m / gamma_fn(p.0 + self.meta.b);
            writeln!(w, "{},{},{},{},{},{}", nu, p.0, t.0, m, z, self.meta.b)?;
        }
        Ok(())
    }

    /// JSON report with metadata and all entries.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .entries
            .iter()
            .map(|((nu, p, t), &m)| {
                serde_json::json!({
                    "nu": nu.to_string(),
                    "p": p.0,
                    "t": t.0,
                    "m": m,
                    "z": m / gamma_fn(p.0 + self.meta.b),
                })
            })
            .collect();
        serde_json::json!({
            "meta": serde_json::to_value(&self.meta).unwrap(),
            "entries": rows,
        })
    }

    /// Builds a table from a density by differentiating symbolically and
    /// integrating absolutely, at time label `t`.
    pub fn from_density(
        d: &PolyGaussianDensity,
        nus: &[MultiIndex],
        orders: &[f64],
        t: f64,
        b: f64,
        alpha: f64,
    ) -> Result<Self, CoreError> {
        let mut table = MomentTable::new(b, alpha, d.dimension(), "density-derived");
        let derivs: Vec<(MultiIndex, Arc<PolyGaussianDensity>)> = nus
            .iter()
            .map(|nu| (nu.clone(), Arc::new(d.differentiate(nu))))
            .collect();
        let jobs: Vec<(MultiIndex, f64)> = derivs
            .iter()
            .flat_map(|(nu, _)| orders.iter().map(move |&p| (nu.clone(), p)))
            .collect();
        let values: Vec<Result<f64, CoreError>> = jobs
            .par_iter()
            .map(|(nu, p)| {
                let dd = &derivs.iter().find(|(knu, _)| knu == nu).unwrap().1;
                abs_moment_auto(dd, *p)
            })
            .collect();
        for ((nu, p), v) in jobs.into_iter().zip(values) {
            table.insert(nu, p, t, v?);
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::build_velocity_rule;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    /// Closed-form oracle: absolute moment of the unit-mass Maxwellian with
    /// temperature T in dimension n is `(2T)^p Gamma(p + n/2) / Gamma(n/2)`.
    fn maxwellian_moment_oracle(n: usize, t: f64, p: f64) -> f64 {
        (2.0 * t).powf(p) * gamma_fn(p + n as f64 / 2.0) / gamma_fn(n as f64 / 2.0)
    }

    #[test]
    fn multiindex_partial_order_and_binomials() {
        let eta = MultiIndex(vec![2, 1, 0]);
        let nu = MultiIndex(vec![1, 1, 0]);
        assert!(nu.leq(&eta));
        assert!(nu.lt(&eta));
        assert!(!eta.leq(&nu));
        assert_eq!(eta.binomial(&nu), 2.0);
        assert_eq!(eta.order(), 3);
        let subs = eta.submultiindices();
        assert_eq!(subs.len(), 3 * 2 * 1);
        // Sum of binomials equals 2^{|eta|}.
        let total: f64 = subs.iter().map(|v| eta.binomial(v)).sum();
        assert_eq!(total, 8.0);
    }

    #[test]
    fn differentiate_zero_index_is_identity() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let d0 = d.differentiate(&MultiIndex::zero(3));
        let xi = [0.3, -0.7, 1.1];
        assert_eq!(d.eval(&xi), d0.eval(&xi));
    }

    #[test]
    fn gaussian_first_derivative_closed_form() {
        // d/dxi1 exp(-|xi|^2/2) = -xi1 exp(-|xi|^2/2)
        let d = PolyGaussianDensity::new(
            3,
            vec![GaussTerm {
                coeff: 1.0,
                poly: MultiPoly::constant(3, 1.0),
                center: [0.0; 3],
                width: 1.0,
            }],
        )
        .unwrap();
        let dd = d.differentiate(&MultiIndex::unit(0, 3));
        for xi in [[0.5, 0.2, -0.3], [1.5, -2.0, 0.1]] {
            let expect = -xi[0] * (-crate::vec3::norm_sq(&xi) / 2.0).exp();
            assert_relative_eq!(dd.eval(&xi), expect, max_relative = 1e-14);
        }
    }

    #[test]
    fn differentiate_matches_finite_differences() {
        // Central finite differences with step 1e-5 as an oracle.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut poly = MultiPoly::constant(3, rng.gen_range(0.5..1.5));
        poly.add_term(vec![1, 0, 0], rng.gen_range(-1.0..1.0));
        poly.add_term(vec![0, 2, 0], rng.gen_range(-1.0..1.0));
        poly.add_term(vec![1, 1, 1], rng.gen_range(-0.5..0.5));
        let d = PolyGaussianDensity::new(
            3,
            vec![
                GaussTerm {
                    coeff: 0.8,
                    poly,
                    center: [0.4, -0.2, 0.0],
                    width: 0.9,
                },
                GaussTerm {
                    coeff: -0.3,
                    poly: MultiPoly::constant(3, 1.0),
                    center: [-0.5, 0.1, 0.3],
                    width: 1.4,
                },
            ],
        )
        .unwrap();
        let dd = d.differentiate(&MultiIndex::unit(0, 3));
        let h = 1e-5;
        for _ in 0..50 {
            let xi = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let fd = (d.eval(&[xi[0] + h, xi[1], xi[2]]) - d.eval(&[xi[0] - h, xi[1], xi[2]]))
                / (2.0 * h);
            assert_relative_eq!(dd.eval(&xi), fd, epsilon = 1e-8, max_relative = 1e-6);
        }
    }

    #[test]
    fn second_derivatives_commute() {
        let d = PolyGaussianDensity::gaussian_at(3, [0.3, 0.0, -0.2], 1.2, 1.0).unwrap();
        let dxy = d
            .differentiate(&MultiIndex::unit(0, 3))
            .differentiate(&MultiIndex::unit(1, 3));
        let dyx = d
            .differentiate(&MultiIndex::unit(1, 3))
            .differentiate(&MultiIndex::unit(0, 3));
        let direct = d.differentiate(&MultiIndex(vec![1, 1, 0]));
        for xi in [[0.1, 0.2, 0.3], [-1.0, 0.5, 0.0], [2.0, -1.5, 0.7]] {
            assert_relative_eq!(dxy.eval(&xi), dyx.eval(&xi), epsilon = 1e-12);
            assert_relative_eq!(dxy.eval(&xi), direct.eval(&xi), epsilon = 1e-12);
        }
    }

    #[test]
    fn maxwellian_mass_and_energy_moments() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let rule = build_velocity_rule(3, 16, 2.0).unwrap();
        let m0 = abs_moment(&d, 0.0, &rule).unwrap();
        assert_relative_eq!(m0, 1.0, max_relative = 1e-9);
        let m1 = abs_moment(&d, 1.0, &rule).unwrap();
        assert_relative_eq!(m1, 3.0, max_relative = 1e-8);
    }

    #[test]
    fn abs_moment_matches_gamma_oracle_half_orders() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        for k in 0..=10 {
            let p = k as f64 / 2.0;
            let m = abs_moment_auto(&d, p).unwrap();
            let oracle = maxwellian_moment_oracle(3, 1.0, p);
            assert_relative_eq!(m, oracle, max_relative = 1e-8);
        }
        // A couple of high orders at slightly relaxed tolerance.
        for p in [5.0, 10.0] {
            let m = abs_moment_auto(&d, p).unwrap();
            let oracle = maxwellian_moment_oracle(3, 1.0, p);
            assert_relative_eq!(m, oracle, max_relative = 1e-7);
        }
    }

    #[test]
    fn abs_moment_of_signed_derivative() {
        // |d/dxi1 M| integrates to a 1-d closed form times marginals:
        // int |xi1| e^{-xi1^2/2}/sqrt(2 pi) dxi1 = sqrt(2/pi).
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let dd = d.differentiate(&MultiIndex::unit(0, 3));
        let m0 = abs_moment_auto(&dd, 0.0).unwrap();
        assert_relative_eq!(m0, (2.0 / PI).sqrt(), max_relative = 1e-7);
    }

    #[test]
    fn abs_moment_2d_oracle() {
        let d = PolyGaussianDensity::maxwellian(2, 0.7, 1.0).unwrap();
        for k in 0..=6 {
            let p = k as f64 / 2.0;
            let m = abs_moment_auto(&d, p).unwrap();
            assert_relative_eq!(m, maxwellian_moment_oracle(2, 0.7, p), max_relative = 1e-8);
        }
    }

    #[test]
    fn moment_log_convexity_on_maxwellian() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let ms: Vec<f64> = (0..=8)
            .map(|k| abs_moment_auto(&d, k as f64 / 2.0).unwrap())
            .collect();
        for w in ms.windows(3) {
            // log-convex: m_{p}^2 <= m_{p-1/2} m_{p+1/2}
            assert!(w[1] * w[1] <= w[0] * w[2] * (1.0 + 1e-7));
        }
    }

    #[test]
    fn tail_ratio_exact_on_matching_rate() {
        // d = exp(-r0 |xi|^2), compared against its own rate: ratio 1.
        let r0 = 0.5;
        let d = PolyGaussianDensity::new(
            3,
            vec![GaussTerm {
                coeff: 1.0,
                poly: MultiPoly::constant(3, 1.0),
                center: [0.0; 3],
                width: 1.0 / (2.0 * r0),
            }],
        )
        .unwrap();
        match tail_ratio_sup(&d, r0, 0) {
            TailSup::Finite(v) => assert_relative_eq!(v, 1.0, max_relative = 1e-12),
            TailSup::Divergent => panic!("matching rate must not diverge"),
        }
        // Sharper reference rate: divergence flag.
        assert!(tail_ratio_sup(&d, r0 * 1.2, 0).is_divergent());
    }

    #[test]
    fn tail_ratio_weighted_stationary_point_oracle() {
        // d = xi1 exp(-|xi|^2), weight power 1, rate 1: the weighted ratio is
        // |xi1| / sqrt(1 + |xi|^2), increasing toward 1 along the xi1 axis;
        // the grid sup equals R/sqrt(1 + R^2) at the grid edge.
        let mut poly = MultiPoly::zero(3);
        poly.add_term(vec![1, 0, 0], 1.0);
        let d = PolyGaussianDensity::new(
            3,
            vec![GaussTerm {
                coeff: 1.0,
                poly,
                center: [0.0; 3],
                width: 0.5,
            }],
        )
        .unwrap();
        let r_max = 12.0;
        match tail_ratio_sup_with_radius(&d, 1.0, 1, r_max) {
            TailSup::Finite(v) => {
                let oracle = r_max / (1.0 + r_max * r_max).sqrt();
                // Direction grid does not contain the exact axis; allow the
                // angular resolution into the tolerance.
                assert_relative_eq!(v, oracle, max_relative = 2e-2);
                assert!(v <= 1.0);
            }
            TailSup::Divergent => panic!("bounded ratio flagged divergent"),
        }
    }

    #[test]
    fn moment_table_roundtrip_and_csv() {
        let mut table = MomentTable::new(0.5, 1.0, 3, "test");
        let nu = MultiIndex::zero(3);
        table.insert(nu.clone(), 1.0, 0.0, 3.0);
        table.insert(nu.clone(), 1.5, 0.0, 7.5);
        table.insert(MultiIndex::unit(0, 3), 1.0, 0.0, 0.9);
        assert_eq!(table.get(&nu, 1.0, 0.0), Some(3.0));
        assert_eq!(table.get(&nu, 2.0, 0.0), None);
        let z = table.get_normalized(&nu, 1.0, 0.0).unwrap();
        assert_relative_eq!(z, 3.0 / gamma_fn(1.5), max_relative = 1e-14);

        let mut csv = Vec::new();
        table.to_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("nu,p,t,m,z,b\n"));
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("1:0:0"));

        let json = table.to_json();
        assert_eq!(json["entries"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn interpolation_is_log_linear_and_flagged() {
        let mut table = MomentTable::new(0.5, 1.0, 3, "test");
        let nu = MultiIndex::zero(3);
        table.insert(nu.clone(), 1.0, 0.0, 10.0);
        table.insert(nu.clone(), 2.0, 0.0, 1000.0);
        let (v, interp) = table.get_interpolated(&nu, 1.5, 0.0).unwrap();
        assert!(interp);
        assert_relative_eq!(v, 100.0, max_relative = 1e-12);
        let (v1, i1) = table.get_interpolated(&nu, 1.0, 0.0).unwrap();
        assert!(!i1);
        assert_eq!(v1, 10.0);
        assert!(table.get_interpolated(&nu, 3.0, 0.0).is_err());
    }

    #[test]
    fn envelope_radius_grows_with_order() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let r0 = d.envelope_radius(0.0);
        let r10 = d.envelope_radius(20.0);
        assert!(r10 > r0);
        assert!(r0 > 5.0 && r0 < 40.0);
    }
}
