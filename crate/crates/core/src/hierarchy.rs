//! The differential-inequality hierarchy for normalized derivative moments.
//!
//! Each order p obeys `y' + a_p y^{1 + alpha/2p} <= b_p (+ d y at the lowest
//! order)`, so a comparison bound caps `y` by the larger of its initial
//! value and the fixed point. Sweeping p upward and feeding each bound into
//! the gain aggregates of the next order yields concrete per-order bounds; a
//! geometric envelope `K Q^p` is then fitted and inflated to dominate them.
//!
//! Interpolation between processed orders happens in the raw-moment scale,
//! where log-linear interpolation is a genuine bound (Hoelder), never in the
//! normalized scale.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::density::{MomentTable, MultiIndex, OrdF64};
use crate::error::CoreError;
use crate::povzner::GammaTable;
use crate::special::{gamma_fn, ln_gamma_fn};

/// Comparison-bound coefficients for one order.
#[derive(Debug, Clone, Serialize)]
pub struct OdeCoefficients {
    pub p: f64,
    pub a_star: f64,
    pub b_star: f64,
    /// Exponent increment: `alpha / (2 p)`.
    pub c: f64,
    /// Linear forcing, nonzero only at the lowest grid order 3/2.
    pub d_star: f64,
    pub provenance: CoefficientProvenance,
}

/// Inputs that produced a set of coefficients, kept for audit.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientProvenance {
    pub gamma_p: f64,
    pub k_alpha: f64,
    pub k0: f64,
    pub k1: f64,
    pub b: f64,
    pub m0_sup: f64,
    pub lower: LowerOrderData,
}

/// Bounds on every ingredient below the current order or derivative level.
/// The `m`-scale and `z`-scale quantities are recorded separately.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LowerOrderData {
    /// Bound on the gain aggregate `Z_p` of the current level.
    pub z_cap_bound: f64,
    /// Bound on the strict-split sum `(m_0 z_{p+alpha/2})` over lower levels.
    pub eta_minus_m0_z: f64,
    /// Bound on the strict-split sum `(m_{alpha/2} z_p)` over lower levels.
    pub eta_minus_malpha_z: f64,
    /// Plain (underived) normalized half-moment sup, for the affine term.
    pub z_half_sup: f64,
    /// Bound on the full-split product `(z_1 z_{(1+alpha)/2})`.
    pub prod_z1_z_half_alpha: f64,
    /// Bound on the strict-split product `(z_{1+alpha/2} z_{1/2})`.
    pub eta_minus_z1alpha_zhalf: f64,
}

/// Assembles the comparison coefficients for one order from the gain
/// constant, the loss lower bound and the lower-order data.
pub fn assemble_coefficients(
    p: f64,
    alpha: f64,
    b: f64,
    gamma: &GammaTable,
    k_alpha: f64,
    m0_sup: f64,
    lower: &LowerOrderData,
    k0: f64,
    k1: f64,
) -> Result<OdeCoefficients, CoreError> {
    if !(p >= 1.5) {
        return Err(CoreError::InvalidHierarchy(format!(
            "hierarchy orders start at 3/2, got {p}"
        )));
    }
    if !(k_alpha > 0.0) || !(m0_sup > 0.0) {
        return Err(CoreError::InvalidHierarchy(
            "loss constant and zeroth-moment sup must be positive".into(),
        ));
    }
    let gamma_p = gamma.get(p).ok_or_else(|| {
        CoreError::InvalidHierarchy(format!("gamma table has no entry at p = {p}"))
    })?;
    if gamma_p >= 1.0 {
        return Err(CoreError::InvalidHierarchy(format!(
            "gain constant at p = {p} is {gamma_p} >= 1; the dissipative term vanishes"
        )));
    }
    let c = alpha / (2.0 * p);
    let a_star =
        (1.0 - gamma_p) * k_alpha * (ln_gamma_fn(p + b) * c).exp() * m0_sup.powf(-c);
    let polynomial_rate = p.powf(alpha / 2.0 + b);
    let (b_star, d_star) = if (p - 1.5).abs() < 1e-9 {
        let d = gamma_p * k0 * polynomial_rate * lower.z_half_sup;
        let bs = gamma_p
            * k0
            * polynomial_rate
            * (lower.prod_z1_z_half_alpha + lower.eta_minus_z1alpha_zhalf + lower.z_half_sup)
            + k1 * p.powf(alpha / 2.0) * lower.eta_minus_m0_z
            + lower.eta_minus_malpha_z;
        (bs, d)
    } else {
        let bs = gamma_p * k0 * polynomial_rate * lower.z_cap_bound
            + k1 * p.powf(alpha / 2.0) * lower.eta_minus_m0_z
            + lower.eta_minus_malpha_z;
        (bs, 0.0)
    };
    Ok(OdeCoefficients {
        p,
        a_star,
        b_star,
        c,
        d_star,
        provenance: CoefficientProvenance {
            gamma_p,
            k_alpha,
            k0,
            k1,
            b,
            m0_sup,
            lower: lower.clone(),
        },
    })
}

/// Comparison bound for `y' + a y^{1+c} <= b`: the solution never exceeds
/// `max(y0, (b/a)^{1/(1+c)})`.
pub fn comparison_bound(a_star: f64, b_star: f64, c: f64, y0: f64) -> f64 {
    debug_assert!(a_star > 0.0 && c > 0.0 && y0 >= 0.0);
    y0.max((b_star / a_star).powf(1.0 / (1.0 + c)))
}

/// Affine variant for `y' + a y^{1+c} <= d y + b`: the cap is the positive
/// root of `a ybar^{1+c} = d ybar + b`.
pub fn comparison_bound_affine(
    a_star: f64,
    b_star: f64,
    d_star: f64,
    c: f64,
    y0: f64,
) -> Result<f64, CoreError> {
    if !(a_star > 0.0 && c > 0.0 && y0 >= 0.0 && d_star >= 0.0 && b_star >= 0.0) {
        return Err(CoreError::InvalidHierarchy(format!(
            "affine comparison needs a > 0, c > 0, d >= 0, b >= 0, y0 >= 0 \
             (got a = {a_star}, b = {b_star}, d = {d_star}, c = {c}, y0 = {y0})"
        )));
    }
    if d_star == 0.0 {
        return Ok(comparison_bound(a_star, b_star, c, y0));
    }
    // g(y) = a y^{1+c} - d y - b is negative at 0+ (or has the root 0 when
    // b = 0) and convex increasing eventually; bracket and bisect.
    let g = |y: f64| a_star * y.powf(1.0 + c) - d_star * y - b_star;
    let mut hi = ((d_star / a_star).powf(1.0 / c) + (b_star / a_star).powf(1.0 / (1.0 + c)))
        .max(1e-12)
        * 2.0;
    let mut grow = 0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        grow += 1;
        if grow > 200 {
            return Err(CoreError::InvalidHierarchy(
                "affine root bracketing failed".into(),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(y0.max(0.5 * (lo + hi)))
}

/// Which mechanism produced a per-order bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundBranch {
    InitialDatum,
    FixedPoint,
    AffineFixedPoint,
}

/// Result of the bound-propagation pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct BoundPipelineResult {
    pub k: f64,
    pub q: f64,
    /// First grid order at which the gain-side sequence has decayed enough
    /// for the tail regime.
    pub p0: f64,
    pub per_p_bounds: Vec<PerOrderBound>,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerOrderBound {
    pub nu: String,
    pub p: f64,
    pub bound: f64,
    pub branch: BoundBranch,
}

impl BoundPipelineResult {
    pub fn envelope(&self, p: f64) -> f64 {
        self.k * self.q.powf(p)
    }
}

/// Pipeline configuration: the non-constructive constants are explicit
/// inputs with unit defaults.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub b: f64,
    pub k0: f64,
    pub k1: f64,
    pub k_alpha: f64,
    /// Sup over time of the zeroth absolute moment, per derivative level
    /// (uniform bound accepted).
    pub m0_sup: f64,
    /// Sup over time of the second moment bound entering low-order
    /// interpolation.
    pub m1_sup: f64,
    /// Uniform bound on the lower-derivative moment sups (the norm input
    /// that the theory does not construct).
    pub f_norm: f64,
    pub p_max: f64,
    pub epsilon: f64,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(CoreError::InvalidHierarchy("alpha must lie in (0, 1]".into()));
        }
        if !(self.b > 0.0) {
            return Err(CoreError::InvalidHierarchy("b must be positive".into()));
        }
        if self.b >= self.epsilon / 2.0 {
            return Err(CoreError::InvalidHierarchy(format!(
                "b = {} must be below epsilon/2 = {} or the gain sequence cannot decay",
                self.b,
                self.epsilon / 2.0
            )));
        }
        if !(self.p_max >= 3.0) {
            return Err(CoreError::InvalidHierarchy("p_max must be at least 3".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut p = 1.5;
        while p <= self.p_max + 1e-9 {
            out.push(p);
            p += 0.5;
        }
        out
    }
}

/// Per-level bound store with valid raw-scale interpolation.
struct LevelBounds {
    b: f64,
    /// m-scale bounds at fixed orders (0, 1/2, 1 seeded from config).
    points: BTreeMap<OrdF64, f64>,
}

impl LevelBounds {
    fn new(b: f64, m0: f64, m1: f64) -> Self {
        let mut points = BTreeMap::new();
        points.insert(OrdF64(0.0), m0);
        // Hoelder: m_{1/2} <= sqrt(m_0 m_1); storing the bound keeps later
        // interpolation conservative.
        points.insert(OrdF64(0.5), (m0 * m1).sqrt().min(m0 + m1));
        points.insert(OrdF64(1.0), m1);
        LevelBounds { b, points }
    }

    fn insert_z(&mut self, p: f64, z_bound: f64) {
        self.points
            .insert(OrdF64(p), z_bound * gamma_fn(p + self.b));
    }

    fn max_order(&self) -> f64 {
        self.points.keys().last().map(|k| k.0).unwrap_or(0.0)
    }

    /// m-scale bound at an arbitrary order up to the processed maximum;
    /// log-linear between stored points (a true bound by interpolation).
    fn m_bound(&self, p: f64) -> Option<f64> {
        if p < 0.0 || p > self.max_order() + 1e-9 {
            return None;
        }
        if let Some(v) = self.points.get(&OrdF64(p)) {
            return Some(*v);
        }
        let below = self.points.range(..OrdF64(p)).next_back()?;
        let above = self.points.range(OrdF64(p)..).next()?;
        let (p0, m0) = (below.0 .0, *below.1);
        let (p1, m1) = (above.0 .0, *above.1);
        let w = (p - p0) / (p1 - p0);
        Some((m0.ln() * (1.0 - w) + m1.ln() * w).exp())
    }

    fn z_bound(&self, p: f64) -> Option<f64> {
        self.m_bound(p).map(|m| m / gamma_fn(p + self.b))
    }
}

/// Runs the upward induction over orders (and derivative levels, in order of
/// total derivative degree) and fits the geometric envelope.
///
/// `initial_z` maps `(nu, p)` to the normalized moment at time zero; the
/// grid orders 3/2, 2, ..., p_max must be present for every level. The
/// hypothesis `z_p(0) <= k q^p` is verified before anything runs.
pub fn propagate_bounds(
    initial_z: &[(MultiIndex, f64, f64)],
    k: f64,
    q: f64,
    gamma: &GammaTable,
    config: &PipelineConfig,
) -> Result<BoundPipelineResult, CoreError> {
    config.validate()?;
    if !(k > 0.0 && q >= 1.0) {
        return Err(CoreError::InvalidHierarchy(
            "hypothesis constants need k > 0 and q >= 1".into(),
        ));
    }
    let mut trace = Vec::new();
    for (nu, p, z0) in initial_z {
        if *z0 > k * q.powf(*p) * (1.0 + 1e-9) {
            return Err(CoreError::InvalidHierarchy(format!(
                "initial data violates the growth hypothesis at (nu = {nu}, p = {p}): \
                 {z0} > {k} * {q}^{p}"
            )));
        }
    }

    // Group levels by derivative index, processed in order of |nu|.
    let mut levels: Vec<MultiIndex> = initial_z.iter().map(|(nu, _, _)| nu.clone()).collect();
    levels.sort();
    levels.dedup();
    levels.sort_by_key(|nu| nu.order());

    let grid = config.grid();
    let initial: BTreeMap<(MultiIndex, OrdF64), f64> = initial_z
        .iter()
        .map(|(nu, p, z)| ((nu.clone(), OrdF64(*p)), *z))
        .collect();

    // Gain-side decay sequence and threshold order.
    let a_star_of = |p: f64, gamma_p: f64| -> f64 {
        (1.0 - gamma_p)
            * config.k_alpha
            * (ln_gamma_fn(p + config.b) * config.alpha / (2.0 * p)).exp()
            * config.m0_sup.powf(-config.alpha / (2.0 * p))
    };
    let a1_seq: Vec<(f64, f64)> = grid
        .iter()
        .map(|&p| {
            let g = gamma.get(p).ok_or_else(|| {
                CoreError::InvalidHierarchy(format!("gamma table missing order {p}"))
            })?;
            Ok((p, config.k0 * g * p.powf(config.alpha / 2.0 + config.b) / a_star_of(p, g)))
        })
        .collect::<Result<_, CoreError>>()?;
    let max_level_order = levels.iter().map(|nu| nu.order()).max().unwrap_or(0);
    let two_pow = 2f64.powi(max_level_order as i32);
    let p0 = a1_seq
        .iter()
        .find(|(_, a1)| two_pow * q.powf(config.alpha / 2.0) * a1 <= 0.5)
        .map(|(p, _)| *p)
        .unwrap_or(config.p_max);
    trace.push(format!(
        "threshold order p0 = {p0} (gain sequence decayed below 1/2 criterion)"
    ));

    let mut processed: BTreeMap<MultiIndex, LevelBounds> = BTreeMap::new();
    let mut per_p_bounds: Vec<PerOrderBound> = Vec::new();
    let mut level_envelopes: BTreeMap<MultiIndex, (f64, f64)> = BTreeMap::new();

    for nu in &levels {
        let mut lb = LevelBounds::new(config.b, config.m0_sup, config.m1_sup);
        if nu.order() > 0 {
            // Lower-derivative levels feed the strict splits; a uniform norm
            // bound covers their low moments.
            lb.points.insert(OrdF64(0.0), config.f_norm);
            lb.points
                .insert(OrdF64(0.5), config.f_norm);
            lb.points.insert(OrdF64(1.0), config.f_norm);
        }
        for &p in &grid {
            let z0 = *initial
                .get(&(nu.clone(), OrdF64(p)))
                .ok_or_else(|| {
                    CoreError::MissingEntries(format!("initial data lacks (nu = {nu}, p = {p})"))
                })?;
            // Gain aggregate bound from already-processed material.
            let zc = z_cap_bound(nu, p, config, &lb, &processed)?;
            let lower = lower_order_data(nu, p, config, &lb, &processed, zc)?;
            let coeffs = assemble_coefficients(
                p,
                config.alpha,
                config.b,
                gamma,
                config.k_alpha,
                config.m0_sup,
                &lower,
                config.k0,
                config.k1,
            )?;
            let (bound, branch) = if (p - 1.5).abs() < 1e-9 {
                let b = comparison_bound_affine(
                    coeffs.a_star,
                    coeffs.b_star,
                    coeffs.d_star,
                    coeffs.c,
                    z0,
                )?;
                let br = if b <= z0 * (1.0 + 1e-12) {
                    BoundBranch::InitialDatum
                } else {
                    BoundBranch::AffineFixedPoint
                };
                (b, br)
            } else {
                let b = comparison_bound(coeffs.a_star, coeffs.b_star, coeffs.c, z0);
                let br = if b <= z0 * (1.0 + 1e-12) {
                    BoundBranch::InitialDatum
                } else {
                    BoundBranch::FixedPoint
                };
                (b, br)
            };
            lb.insert_z(p, bound);
            per_p_bounds.push(PerOrderBound {
                nu: nu.to_string(),
                p,
                bound,
                branch,
            });
        }
        // Geometric envelope for this level.
        let (lk, lq) = fit_envelope(&grid, &lb, k, q);
        trace.push(format!("level {nu}: envelope K = {lk:.6e}, Q = {lq:.6}"));
        level_envelopes.insert(nu.clone(), (lk, lq));
        processed.insert(nu.clone(), lb);
    }

    // Verify the gain-sequence decay that makes the tail self-consistent.
    let decay_ok = a1_seq
        .windows(2)
        .filter(|w| w[0].0 >= p0)
        .all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-9));
    trace.push(format!(
        "gain sequence decay beyond p0: {}",
        if decay_ok { "verified" } else { "NOT monotone" }
    ));

    let q_out = level_envelopes
        .values()
        .map(|(_, lq)| *lq)
        .fold(q, f64::max);
    let mut k_out = level_envelopes
        .values()
        .map(|(lk, _)| *lk)
        .fold(k.max(1.0), f64::max);
    // Inflate K so the final envelope dominates every concrete bound.
    for pb in &per_p_bounds {
        let needed = pb.bound / q_out.powf(pb.p);
        k_out = k_out.max(needed);
    }
    trace.push(format!("final envelope K = {k_out:.6e}, Q = {q_out:.6}"));
    Ok(BoundPipelineResult {
        k: k_out,
        q: q_out,
        p0,
        per_p_bounds,
        trace,
    })
}

/// Bound on the gain aggregate at `(nu, p)` using the current level's
/// processed orders and lower levels' full envelopes.
fn z_cap_bound(
    nu: &MultiIndex,
    p: f64,
    config: &PipelineConfig,
    current: &LevelBounds,
    processed: &BTreeMap<MultiIndex, LevelBounds>,
    // placeholder to keep the call symmetrical with lower_order_data
) -> Result<f64, CoreError> {
    let alpha = config.alpha;
    let k_p = ((p + 1.0) / 2.0).floor() as u32;
    let mut best: f64 = 0.0;
    for k in 1..=k_p {
        let kf = k as f64;
        for (a, b) in [
            (kf, p - kf + alpha / 2.0),
            (kf + alpha / 2.0, p - kf),
        ] {
            let mut sum = 0.0;
            for sub in nu.submultiindices() {
                let co = nu.sub(&sub);
                let za = level_z_bound(&sub, a, nu, current, processed)?;
                let zb = level_z_bound(&co, b, nu, current, processed)?;
                sum += nu.binomial(&sub) * za * zb;
            }
            best = best.max(sum);
        }
    }
    Ok(best)
}

/// z-scale bound for level `which` at order `p`, drawing from the level
/// currently being processed or from finished lower levels.
fn level_z_bound(
    which: &MultiIndex,
    p: f64,
    current_level: &MultiIndex,
    current: &LevelBounds,
    processed: &BTreeMap<MultiIndex, LevelBounds>,
) -> Result<f64, CoreError> {
    let store = if which == current_level {
        current
    } else {
        processed.get(which).ok_or_else(|| {
            CoreError::InvalidHierarchy(format!(
                "level {which} required before it was processed"
            ))
        })?
    };
    store.z_bound(p).ok_or_else(|| {
        CoreError::InvalidHierarchy(format!(
            "no bound available for level {which} at order {p}"
        ))
    })
}

fn lower_order_data(
    nu: &MultiIndex,
    p: f64,
    config: &PipelineConfig,
    current: &LevelBounds,
    processed: &BTreeMap<MultiIndex, LevelBounds>,
    z_cap: f64,
) -> Result<LowerOrderData, CoreError> {
    let alpha = config.alpha;
    let mut eta_minus_m0_z = 0.0;
    let mut eta_minus_malpha_z = 0.0;
    for sub in nu.submultiindices() {
        if &sub == nu {
            continue;
        }
        let co = nu.sub(&sub);
        // Strict splits pair a lower-level z at a shifted order with a
        // low-moment bound of the complementary index.
        let z_hi = level_z_bound_extrapolated(&sub, p + alpha / 2.0, processed, config)?;
        let z_p = level_z_bound_extrapolated(&sub, p, processed, config)?;
        let m0_co = if co.order() == 0 {
            config.m0_sup
        } else {
            config.f_norm
        };
        let malpha_co = if co.order() == 0 {
            config.m0_sup + config.m1_sup
        } else {
            2.0 * config.f_norm
        };
        eta_minus_m0_z += nu.binomial(&sub) * m0_co * z_hi;
        eta_minus_malpha_z += nu.binomial(&sub) * malpha_co * z_p;
    }
    let z_half_sup = current
        .z_bound(0.5)
        .ok_or_else(|| CoreError::InvalidHierarchy("half-moment bound unavailable".into()))?;
    let (prod, strict) = if (p - 1.5).abs() < 1e-9 {
        let mut prod = 0.0;
        let mut strict = 0.0;
        for sub in nu.submultiindices() {
            let co = nu.sub(&sub);
            let z1 = level_z_bound(&sub, 1.0, nu, current, processed)?;
            let zha = level_z_bound(&co, (1.0 + alpha) / 2.0, nu, current, processed)?;
            prod += nu.binomial(&sub) * z1 * zha;
            if &sub != nu {
                let z1a = level_z_bound_extrapolated(&sub, 1.0 + alpha / 2.0, processed, config)?;
                let zh = level_z_bound(&co, 0.5, nu, current, processed)?;
                strict += nu.binomial(&sub) * z1a * zh;
            }
        }
        (prod, strict)
    } else {
        (0.0, 0.0)
    };
    Ok(LowerOrderData {
        z_cap_bound: z_cap,
        eta_minus_m0_z,
        eta_minus_malpha_z,
        z_half_sup,
        prod_z1_z_half_alpha: prod,
        eta_minus_z1alpha_zhalf: strict,
    })
}

/// Lower levels are fully processed, so orders beyond their stored grid use
/// the fitted envelope.
fn level_z_bound_extrapolated(
    which: &MultiIndex,
    p: f64,
    processed: &BTreeMap<MultiIndex, LevelBounds>,
    config: &PipelineConfig,
) -> Result<f64, CoreError> {
    let store = processed.get(which).ok_or_else(|| {
        CoreError::InvalidHierarchy(format!("level {which} required before it was processed"))
    })?;
    if let Some(z) = store.z_bound(p) {
        return Ok(z);
    }
    // Envelope continuation from the last two stored orders.
    let pmax = store.max_order();
    let z1 = store.z_bound(pmax).unwrap();
    let z0 = store.z_bound(pmax - 0.5).unwrap_or(z1);
    let ratio = (z1 / z0).max(1.0).powf((p - pmax) / 0.5);
    let _ = config;
    Ok(z1 * ratio)
}

fn fit_envelope(grid: &[f64], lb: &LevelBounds, k_hyp: f64, q_hyp: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = grid
        .iter()
        .filter_map(|&p| lb.z_bound(p).map(|z| (p, z.max(1e-300).ln())))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|q| q.0).sum();
    let sy: f64 = pts.iter().map(|q| q.1).sum();
    let sxx: f64 = pts.iter().map(|q| q.0 * q.0).sum();
    let sxy: f64 = pts.iter().map(|q| q.0 * q.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let q = slope.exp().max(q_hyp).max(1.0);
    let mut k = k_hyp.max(1.0);
    for &(p, ly) in &pts {
        k = k.max((ly - p * q.ln()).exp());
    }
    (k, q)
}

/// Worst-case equality dynamics of the truncated hierarchy: integrates
/// `z_p' = -a_p z_p^{1+c_p} + b_p(z)` for all grid orders simultaneously,
/// with the gain aggregate read off the evolving state. Closure above the
/// truncation order uses the supplied envelope.
#[allow(clippy::too_many_arguments)]
pub fn integrate_truncated_hierarchy(
    initial_z: &[(f64, f64)],
    gamma: &GammaTable,
    config: &PipelineConfig,
    envelope: (f64, f64),
    t_end: f64,
    save_every: f64,
) -> Result<MomentTable, CoreError> {
    config.validate()?;
    let grid = config.grid();
    if initial_z.len() != grid.len() {
        return Err(CoreError::InvalidHierarchy(format!(
            "initial data has {} orders; the grid has {}",
            initial_z.len(),
            grid.len()
        )));
    }
    let gammas: Vec<f64> = grid
        .iter()
        .map(|&p| {
            gamma
                .get(p)
                .ok_or_else(|| CoreError::InvalidHierarchy(format!("gamma missing at {p}")))
        })
        .collect::<Result<_, _>>()?;
    let a_coef: Vec<f64> = grid
        .iter()
        .zip(&gammas)
        .map(|(&p, &g)| {
            (1.0 - g)
                * config.k_alpha
                * (ln_gamma_fn(p + config.b) * config.alpha / (2.0 * p)).exp()
                * config.m0_sup.powf(-config.alpha / (2.0 * p))
        })
        .collect();

    // z-scale lookup over the state, with low-order seeds and envelope
    // closure past the truncation.
    let low = LevelBounds::new(config.b, config.m0_sup, config.m1_sup);
    let z_at = |state: &[f64], p: f64| -> f64 {
        if p <= 1.0 + 1e-12 {
            return low.z_bound(p).unwrap_or(config.m0_sup);
        }
        if p > config.p_max {
            return envelope.0 * envelope.1.powf(p);
        }
        // Hoelder interpolation in m-scale between bracketing grid points
        // (and the order-one seed below the grid).
        let idx_above = grid.iter().position(|&g| g >= p - 1e-12);
        match idx_above {
            Some(i) if (grid[i] - p).abs() < 1e-9 => state[i],
            Some(i) => {
                let (p1, z1) = (grid[i], state[i]);
                let (p0, z0) = if i == 0 {
                    (1.0, low.z_bound(1.0).unwrap())
                } else {
                    (grid[i - 1], state[i - 1])
                };
                let m0 = z0.max(1e-300) * gamma_fn(p0 + config.b);
                let m1 = z1.max(1e-300) * gamma_fn(p1 + config.b);
                let w = (p - p0) / (p1 - p0);
                ((m0.ln() * (1.0 - w) + m1.ln() * w).exp()) / gamma_fn(p + config.b)
            }
            None => envelope.0 * envelope.1.powf(p),
        }
    };

    let rhs = |state: &[f64], out: &mut [f64]| {
        for (i, &p) in grid.iter().enumerate() {
            let k_p = ((p + 1.0) / 2.0).floor() as u32;
            let mut zcap: f64 = 0.0;
            for k in 1..=k_p {
                let kf = k as f64;
                zcap = zcap
                    .max(z_at(state, kf) * z_at(state, p - kf + config.alpha / 2.0))
                    .max(z_at(state, kf + config.alpha / 2.0) * z_at(state, p - kf));
            }
            let b_p = gammas[i] * config.k0 * p.powf(config.alpha / 2.0 + config.b) * zcap;
            out[i] = -a_coef[i] * state[i].max(0.0).powf(1.0 + config.alpha / (2.0 * p)) + b_p;
        }
    };

    let mut state: Vec<f64> = initial_z.iter().map(|&(_, z)| z).collect();
    let mut table = MomentTable::new(config.b, config.alpha, 3, "truncated-hierarchy");
    let nu0 = MultiIndex::zero(3);
    let save = |t: f64, state: &[f64], table: &mut MomentTable| {
        for (i, &p) in grid.iter().enumerate() {
            table.insert(nu0.clone(), p, t, state[i] * gamma_fn(p + config.b));
        }
    };
    save(0.0, &state, &mut table);

    let mut t = 0.0;
    let mut dt = 1e-4f64;
    let mut next_save = save_every;
    let mut k1 = vec![0.0; state.len()];
    let mut k2 = vec![0.0; state.len()];
    let mut k3 = vec![0.0; state.len()];
    let mut k4 = vec![0.0; state.len()];
    let mut tmp = vec![0.0; state.len()];
    let mut steps = 0usize;
    while t < t_end {
        if steps > 4_000_000 {
            return Err(CoreError::OdeFailure(format!(
                "step budget exhausted at t = {t} of {t_end} (stiffness)"
            )));
        }
        steps += 1;
        let h = dt.min(t_end - t).min(next_save - t + 1e-12);
        // Classic step-doubling RK4 with embedded error control.
        let full = rk4_step(&rhs, &state, h, &mut k1, &mut k2, &mut k3, &mut k4, &mut tmp);
        let half1 = rk4_step(&rhs, &state, h / 2.0, &mut k1, &mut k2, &mut k3, &mut k4, &mut tmp);
        let half2 = rk4_step(&rhs, &half1, h / 2.0, &mut k1, &mut k2, &mut k3, &mut k4, &mut tmp);
        let err: f64 = full
            .iter()
            .zip(&half2)
            .map(|(a, b)| ((a - b) / b.abs().max(1e-8)).abs())
            .fold(0.0, f64::max);
        let negative = half2.iter().any(|&v| v < 0.0);
        if (err < 1e-7 && !negative) || h < 1e-12 {
            state = half2;
            for v in &mut state {
                *v = v.max(0.0);
            }
            t += h;
            if t + 1e-12 >= next_save {
                save(t, &state, &mut table);
                next_save += save_every;
            }
            if err < 1e-9 {
                dt = (h * 2.0).min(0.05);
            }
        } else {
            dt = h / 2.0;
        }
    }
    save(t_end, &state, &mut table);
    Ok(table)
}

#[allow(clippy::too_many_arguments)]
fn rk4_step<F: Fn(&[f64], &mut [f64])>(
    rhs: &F,
    y: &[f64],
    h: f64,
    k1: &mut [f64],
    k2: &mut [f64],
    k3: &mut [f64],
    k4: &mut [f64],
    tmp: &mut [f64],
) -> Vec<f64> {
    rhs(y, k1);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    rhs(tmp, k2);
    for i in 0..y.len() {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    rhs(tmp, k3);
    for i in 0..y.len() {
        tmp[i] = y[i] + h * k3[i];
    }
    rhs(tmp, k4);
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::hard_sphere;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn hs_gamma(grid: &[f64]) -> GammaTable {
        GammaTable::build(&hard_sphere(3).unwrap(), grid).unwrap()
    }

    fn default_config() -> PipelineConfig {
        PipelineConfig {
            alpha: 1.0,
            b: 0.5,
            k0: 1.0,
            k1: 1.0,
            k_alpha: 1.0,
            m0_sup: 1.0,
            m1_sup: 3.0,
            f_norm: 4.0,
            p_max: 8.0,
            epsilon: 2.0,
        }
    }

    /// Fixed-step RK4 oracle for the scalar comparison ODE, independent of
    /// the integrator in this module.
    fn ode_oracle<A: Fn(f64) -> f64, B: Fn(f64) -> f64>(
        a: A,
        b: B,
        d: f64,
        c: f64,
        y0: f64,
        t_end: f64,
        steps: usize,
    ) -> f64 {
        let h = t_end / steps as f64;
        let mut y = y0;
        let mut max_y = y0;
        let f = |t: f64, y: f64| -> f64 { b(t) + d * y - a(t) * y.max(0.0).powf(1.0 + c) };
        let mut t = 0.0;
        for _ in 0..steps {
            let k1 = f(t, y);
            let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
            let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
            let k4 = f(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            y = y.max(0.0);
            t += h;
            max_y = max_y.max(y);
        }
        max_y
    }

    #[test]
    fn comparison_bound_hand_values() {
        assert_eq!(comparison_bound(1.0, 1.0, 1.0, 2.0), 2.0);
        assert_relative_eq!(comparison_bound(4.0, 1.0, 1.0, 0.0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn affine_bound_hand_values_and_reduction() {
        // d = 0 reduces to the plain bound.
        let plain = comparison_bound(2.0, 3.0, 0.5, 0.1);
        let affine = comparison_bound_affine(2.0, 3.0, 0.0, 0.5, 0.1).unwrap();
        assert_relative_eq!(plain, affine, epsilon = 1e-14);
        // a = d = 1, b = 0, c = 1: ybar = 1.
        let y = comparison_bound_affine(1.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(y, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn ode_solutions_never_exceed_bounds() {
        // Random time-dependent coefficients against the worst-case bound.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let a_lo = rng.gen_range(0.2..2.0);
            let a_amp = rng.gen_range(0.0..1.0);
            let b_hi = rng.gen_range(0.1..3.0);
            let c = rng.gen_range(0.05..1.5);
            let y0 = rng.gen_range(0.0..4.0);
            let omega = rng.gen_range(0.5..5.0);
            let a = move |t: f64| a_lo + a_amp * (1.0 + (omega * t).sin()) / 2.0 * a_lo;
            let b = move |t: f64| b_hi * (0.5 + 0.5 * (1.3 * omega * t).cos().abs());
            let bound = comparison_bound(a_lo, b_hi, c, y0);
            let reached = ode_oracle(a, b, 0.0, c, y0, 8.0, 4000);
            assert!(
                reached <= bound + 1e-9,
                "reached {reached} > bound {bound}"
            );
        }
    }

    #[test]
    fn affine_ode_solutions_never_exceed_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let a_lo = rng.gen_range(0.3..2.0);
            let b_hi = rng.gen_range(0.0..2.0);
            let d = rng.gen_range(0.0..1.5);
            let c = rng.gen_range(0.1..1.2);
            let y0 = rng.gen_range(0.0..3.0);
            let bound = comparison_bound_affine(a_lo, b_hi, d, c, y0).unwrap();
            let reached = ode_oracle(|_| a_lo, |_| b_hi, d, c, y0, 10.0, 5000);
            assert!(
                reached <= bound + 1e-9,
                "reached {reached} > bound {bound} (a {a_lo} b {b_hi} d {d} c {c} y0 {y0})"
            );
        }
    }

    #[test]
    fn coefficient_assembly_hand_values() {
        let grid: Vec<f64> = vec![1.5, 2.0];
        let gamma = hs_gamma(&grid);
        let lower = LowerOrderData {
            z_cap_bound: 1.0,
            z_half_sup: 0.5,
            ..Default::default()
        };
        // c = alpha / (2p) at p = 2, alpha = 1.
        let co = assemble_coefficients(2.0, 1.0, 0.5, &gamma, 1.0, 1.0, &lower, 1.0, 1.0).unwrap();
        assert_relative_eq!(co.c, 0.25, epsilon = 1e-14);
        // a* = (1 - 1/3) Gamma(2.5)^{1/4} with unit loss constant and m0.
        let expect = (2.0 / 3.0) * gamma_fn(2.5).powf(0.25);
        assert_relative_eq!(co.a_star, expect, max_relative = 1e-12);
        assert_eq!(co.d_star, 0.0);
        // The affine forcing appears only at p = 3/2.
        let co32 =
            assemble_coefficients(1.5, 1.0, 0.5, &gamma, 1.0, 1.0, &lower, 1.0, 1.0).unwrap();
        assert!(co32.d_star > 0.0);
    }

    #[test]
    fn pipeline_single_order_reduces_to_comparison_bound() {
        // With constant gain data and one level, each order's bound is just
        // max(z0, fixed point); check one order explicitly.
        let config = default_config();
        let grid = config.grid();
        let gamma = hs_gamma(&grid);
        let nu = MultiIndex::zero(3);
        // Maxwellian normalized moments at t = 0.
        let initial: Vec<(MultiIndex, f64, f64)> = grid
            .iter()
            .map(|&p| {
                let m = 2f64.powf(p) * gamma_fn(p + 1.5) / gamma_fn(1.5);
                (nu.clone(), p, m / gamma_fn(p + config.b))
            })
            .collect();
        let k = 60.0;
        let q = 2.3;
        let res = propagate_bounds(&initial, k, q, &gamma, &config).unwrap();
        assert!(res.k.is_finite() && res.q.is_finite());
        assert!(res.q >= q);
        assert!(res.k >= k);
        assert!(res.p0 >= 1.5);
        // The envelope dominates the concrete per-order bounds and the
        // initial data.
        for pb in &res.per_p_bounds {
            assert!(pb.bound <= res.envelope(pb.p) * (1.0 + 1e-9));
        }
        for (_, p, z0) in &initial {
            assert!(*z0 <= res.envelope(*p) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn pipeline_rejects_bad_config_and_hypothesis() {
        let mut config = default_config();
        config.b = 1.5; // >= epsilon/2
        let grid = default_config().grid();
        let gamma = hs_gamma(&grid);
        let nu = MultiIndex::zero(3);
        let initial = vec![(nu.clone(), 1.5, 1.0)];
        assert!(propagate_bounds(&initial, 1.0, 1.0, &gamma, &config).is_err());

        let config = default_config();
        // Initial data violating z <= k q^p.
        let bad = vec![(nu, 1.5, 100.0)];
        assert!(propagate_bounds(&bad, 1.0, 1.0, &gamma, &config).is_err());
    }

    #[test]
    fn pipeline_monotone_in_hypothesis_constants() {
        let config = default_config();
        let grid = config.grid();
        let gamma = hs_gamma(&grid);
        let nu = MultiIndex::zero(3);
        let initial: Vec<(MultiIndex, f64, f64)> = grid
            .iter()
            .map(|&p| (nu.clone(), p, 0.5 * 1.8f64.powf(p)))
            .collect();
        let r1 = propagate_bounds(&initial, 1.0, 1.8, &gamma, &config).unwrap();
        let r2 = propagate_bounds(&initial, 2.0, 1.8, &gamma, &config).unwrap();
        let r3 = propagate_bounds(&initial, 1.0, 2.4, &gamma, &config).unwrap();
        assert!(r2.k >= r1.k);
        assert!(r2.q >= r1.q - 1e-12);
        assert!(r3.q >= r1.q);
    }

    #[test]
    fn threshold_sequence_decays_for_catalog_sections() {
        // A1_p ~ p^{b - eps/2} must decay whenever b < eps/2.
        for (xs, eps) in [
            (hard_sphere(3).unwrap(), 2.0),
            (crate::kernel::singular_family(0.5, 3).unwrap(), 1.5),
        ] {
            let b = eps / 4.0;
            let ps: Vec<f64> = vec![50.0, 100.0, 200.0, 400.0, 800.0];
            let gamma = GammaTable::build(&xs, &ps).unwrap();
            let a1 = |p: f64| {
                let g = gamma.get(p).unwrap();
                let a_star = (1.0 - g) * (ln_gamma_fn(p + b) * 0.5 / p).exp();
                g * p.powf(0.5 + b) / a_star
            };
            for w in ps.windows(2) {
                assert!(
                    a1(w[1]) < a1(w[0]),
                    "{}: A1 not decaying between {} and {}",
                    xs.name(),
                    w[0],
                    w[1]
                );
            }
        }
    }

    #[test]
    fn truncated_hierarchy_stays_below_propagated_envelope() {
        let config = default_config();
        let grid = config.grid();
        let gamma = hs_gamma(&grid);
        let nu = MultiIndex::zero(3);
        let initial: Vec<(MultiIndex, f64, f64)> = grid
            .iter()
            .map(|&p| {
                let m = 2f64.powf(p) * gamma_fn(p + 1.5) / gamma_fn(1.5);
                (nu.clone(), p, m / gamma_fn(p + config.b))
            })
            .collect();
        let res = propagate_bounds(&initial, 60.0, 2.3, &gamma, &config).unwrap();

        let series_init: Vec<(f64, f64)> =
            initial.iter().map(|(_, p, z)| (*p, *z)).collect();
        let table = integrate_truncated_hierarchy(
            &series_init,
            &gamma,
            &config,
            (res.k, res.q),
            2.0,
            0.5,
        )
        .unwrap();
        for (_, p, _, m) in table.iter() {
            let z = m / gamma_fn(p + config.b);
            assert!(
                z <= res.envelope(p) + 1e-6 * res.envelope(p),
                "order {p}: series {z} exceeds envelope {}",
                res.envelope(p)
            );
        }
    }

    #[test]
    fn truncated_hierarchy_zero_start_stays_bounded() {
        let config = default_config();
        let grid = config.grid();
        let gamma = hs_gamma(&grid);
        let initial: Vec<(f64, f64)> = grid.iter().map(|&p| (p, 0.0)).collect();
        let table =
            integrate_truncated_hierarchy(&initial, &gamma, &config, (10.0, 2.0), 1.0, 0.25)
                .unwrap();
        // Fixed points cap the growth from zero data.
        for (_, p, _, m) in table.iter() {
            let z = m / gamma_fn(p + config.b);
            assert!(z.is_finite() && z >= 0.0 && z < 1e6, "order {p}: z = {z}");
        }
    }
}
