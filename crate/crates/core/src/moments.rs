//! Moment-table algebra: normalized moments, binomial product sums over
//! derivative indices, the gain-side aggregates, geometric bound fitting and
//! tail-order estimation.

use serde::Serialize;

use crate::density::{MomentTable, MultiIndex};
use crate::error::CoreError;
use crate::special::{binomial_general, gamma_fn, ln_gamma_fn};

/// Geometric envelope `z_p <= K Q^p` fitted over a grid of orders.
#[derive(Debug, Clone, Serialize)]
pub struct GeometricBound {
    pub k: f64,
    pub q: f64,
    pub p_grid: Vec<f64>,
    /// `log z_p - (log K + p log Q)`: all <= 0 after envelope inflation.
    pub residuals: Vec<f64>,
    /// Set when the data grows faster than geometrically over the grid.
    pub non_geometric: bool,
}

/// Estimated exponential-tail order and rate.
#[derive(Debug, Clone, Serialize)]
pub struct TailEstimate {
    pub s: f64,
    /// Estimated supremal rate; infinite when every rate is admissible.
    pub r_bar: f64,
    pub method: String,
    pub horizon: (f64, f64),
}

/// Rescales table values into normalized moments with parameter `b`; the
/// table keeps raw values, so this produces a new table with `b` replaced.
pub fn normalize(table: &MomentTable, b: f64) -> Result<MomentTable, CoreError> {
    if !(b > 0.0) {
        return Err(CoreError::InvalidMoment("b must be positive".into()));
    }
    let mut out = MomentTable::new(b, table.alpha(), table.meta().dimension, &table.meta().description);
    for (nu, p, t, m) in table.iter() {
        out.insert(nu.clone(), p, t, m);
    }
    Ok(out)
}

/// Binomial product sum over derivative splittings:
/// `sum_{nu <= eta} binom(eta, nu) m_p[nu] m_q[eta - nu]`, with
/// `strict = true` restricting to `nu < eta`.
pub fn product_sum(
    table: &MomentTable,
    eta: &MultiIndex,
    p: f64,
    q: f64,
    t: f64,
    strict: bool,
) -> Result<f64, CoreError> {
    product_sum_impl(table, eta, p, q, t, strict, false)
}

/// Same as [`product_sum`] on normalized entries `z = m / Gamma(p + b)`.
pub fn product_sum_normalized(
    table: &MomentTable,
    eta: &MultiIndex,
    p: f64,
    q: f64,
    t: f64,
    strict: bool,
) -> Result<f64, CoreError> {
    product_sum_impl(table, eta, p, q, t, strict, true)
}

fn product_sum_impl(
    table: &MomentTable,
    eta: &MultiIndex,
    p: f64,
    q: f64,
    t: f64,
    strict: bool,
    normalized: bool,
) -> Result<f64, CoreError> {
    let mut total = 0.0;
    let mut missing: Vec<String> = Vec::new();
    for nu in eta.submultiindices() {
        if strict && &nu == eta {
            continue;
        }
        let co = eta.sub(&nu);
        let a = fetch(table, &nu, p, t, normalized, &mut missing);
        let b = fetch(table, &co, q, t, normalized, &mut missing);
        if let (Some(a), Some(b)) = (a, b) {
            total += eta.binomial(&nu) * a * b;
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(CoreError::MissingEntries(missing.join(", ")));
    }
    Ok(total)
}

fn fetch(
    table: &MomentTable,
    nu: &MultiIndex,
    p: f64,
    t: f64,
    normalized: bool,
    missing: &mut Vec<String>,
) -> Option<f64> {
    let raw = match table.get_interpolated(nu, p, t) {
        Ok((v, _)) => v,
        Err(_) => {
            missing.push(format!("(nu = {nu}, p = {p})"));
            return None;
        }
    };
    Some(if normalized {
        raw / gamma_fn(p + table.b())
    } else {
        raw
    })
}

/// Gain-side aggregate: the binomial-weighted sum over the half-order split,
/// `sum_{k=1}^{k_p} binom(p, k) [ d(m_k m_{p-k+alpha/2}) + d(m_{k+alpha/2} m_{p-k}) ]`.
pub fn s_p(
    table: &MomentTable,
    eta: &MultiIndex,
    p: f64,
    alpha: f64,
    t: f64,
) -> Result<f64, CoreError> {
    if !(p > 1.0) {
        return Err(CoreError::InvalidMoment(format!(
            "aggregate requires p > 1, got {p}"
        )));
    }
    let k_p = ((p + 1.0) / 2.0).floor() as u32;
    let mut total = 0.0;
    for k in 1..=k_p {
        let kf = k as f64;
        let a = product_sum(table, eta, kf, p - kf + alpha / 2.0, t, false)?;
        let b = product_sum(table, eta, kf + alpha / 2.0, p - kf, t, false)?;
        total += binomial_general(p, k) * (a + b);
    }
    Ok(total)
}

/// Normalized gain cap: the max over the half-order split of the normalized
/// product sums.
pub fn z_cap(
    table: &MomentTable,
    eta: &MultiIndex,
    p: f64,
    alpha: f64,
    t: f64,
) -> Result<f64, CoreError> {
    if !(p > 1.0) {
        return Err(CoreError::InvalidMoment(format!(
            "aggregate requires p > 1, got {p}"
        )));
    }
    let k_p = ((p + 1.0) / 2.0).floor() as u32;
    let mut best = f64::NEG_INFINITY;
    for k in 1..=k_p {
        let kf = k as f64;
        let a = product_sum_normalized(table, eta, kf, p - kf + alpha / 2.0, t, false)?;
        let b = product_sum_normalized(table, eta, kf + alpha / 2.0, p - kf, t, false)?;
        best = best.max(a).max(b);
    }
    Ok(best)
}

/// Report for the aggregate-vs-cap comparison: the smallest constant `A`
/// with `S_p <= A Gamma(p + alpha/2 + 2b) Z_p` across a grid.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateCapReport {
    pub p_grid: Vec<f64>,
    pub ratios: Vec<f64>,
    pub a_max: f64,
    pub degenerate: Vec<f64>,
}

pub fn aggregate_cap_check(
    table: &MomentTable,
    eta: &MultiIndex,
    p_grid: &[f64],
    alpha: f64,
    b: f64,
    t: f64,
) -> Result<AggregateCapReport, CoreError> {
    if (b - table.b()).abs() > 1e-12 {
        return Err(CoreError::InvalidMoment(format!(
            "normalization parameter mismatch: table carries b = {}, got {b}",
            table.b()
        )));
    }
    let mut ratios = Vec::with_capacity(p_grid.len());
    let mut degenerate = Vec::new();
    for &p in p_grid {
        let s = s_p(table, eta, p, alpha, t)?;
        let z = z_cap(table, eta, p, alpha, t)?;
        if z <= 0.0 {
            degenerate.push(p);
            ratios.push(f64::NAN);
            continue;
        }
        // Gamma ratio in log space to survive large p.
        let log_gamma = ln_gamma_fn(p + alpha / 2.0 + 2.0 * b);
        ratios.push((s.ln() - log_gamma - z.ln()).exp());
    }
    let a_max = ratios
        .iter()
        .copied()
        .filter(|r| r.is_finite())
        .fold(0.0, f64::max);
    Ok(AggregateCapReport {
        p_grid: p_grid.to_vec(),
        ratios,
        a_max,
        degenerate,
    })
}

/// Fits `log z_p <= log K + p log Q` by least squares, then inflates `K` so
/// every residual is nonpositive. Residual growth at the top of the grid
/// flags super-geometric data.
pub fn fit_geometric_bound(
    table: &MomentTable,
    nu: &MultiIndex,
    p_grid: &[f64],
    t: f64,
) -> Result<GeometricBound, CoreError> {
    if p_grid.len() < 4 {
        return Err(CoreError::InvalidMoment(
            "geometric fit needs at least 4 grid points".into(),
        ));
    }
    let mut pts = Vec::with_capacity(p_grid.len());
    for &p in p_grid {
        let z = table
            .get_normalized(nu, p, t)
            .ok_or_else(|| CoreError::MissingEntries(format!("(nu = {nu}, p = {p})")))?;
        if !(z > 0.0) {
            return Err(CoreError::InvalidMoment(format!(
                "normalized moment at p = {p} is not positive ({z})"
            )));
        }
        pts.push((p, z.ln()));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|q| q.0).sum();
    let sy: f64 = pts.iter().map(|q| q.1).sum();
    let sxx: f64 = pts.iter().map(|q| q.0 * q.0).sum();
    let sxy: f64 = pts.iter().map(|q| q.0 * q.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;

    let raw_residuals: Vec<f64> = pts
        .iter()
        .map(|&(p, ly)| ly - (intercept + slope * p))
        .collect();
    // Super-geometric growth: convex log-data leaves the line from below at
    // both ends; flag when the top-end residual is large and increasing.
    let tail = &raw_residuals[raw_residuals.len().saturating_sub(3)..];
    let non_geometric =
        tail.last().copied().unwrap_or(0.0) > 0.1 && tail.windows(2).all(|w| w[1] > w[0]);

    let shift = raw_residuals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k = (intercept + shift).exp();
    let q = slope.exp();
    let residuals: Vec<f64> = raw_residuals.iter().map(|r| r - shift).collect();
    Ok(GeometricBound {
        k,
        q,
        p_grid: p_grid.to_vec(),
        residuals,
        non_geometric,
    })
}

/// Estimates the supremal exponential rate of order `s` from the moment
/// series: the reciprocal root-test limit of `m_{s k / 2} / k!`.
///
/// The root test converges like `(log k)/k`, so the last available orders
/// are extrapolated against that variable; the correction absorbs the
/// polynomial factor `Gamma(k + b)/Gamma(k + 1)` exactly.
pub fn tail_order_estimate(
    table: &MomentTable,
    nu: &MultiIndex,
    s: f64,
    t: f64,
) -> Result<TailEstimate, CoreError> {
    if !(s > 0.0) {
        return Err(CoreError::InvalidMoment("tail order must be positive".into()));
    }
    // Collect k with available moments of order s k / 2.
    let mut rho: Vec<(f64, f64)> = Vec::new(); // (k, log m_{sk/2} - log k!)
    let mut k = 1u32;
    while k <= 64 {
        let p = s * k as f64 / 2.0;
        match table.get(nu, p, t) {
            Some(m) if m > 0.0 => {
                rho.push((k as f64, m.ln() - ln_gamma_fn(k as f64 + 1.0)));
            }
            Some(_) => {}
            None => {
                if k > 4 {
                    break;
                }
            }
        }
        k += 1;
    }
    if rho.len() < 10 {
        return Err(CoreError::MissingEntries(format!(
            "tail estimate needs moments at orders s*k/2 for at least 10 consecutive k (found {})",
            rho.len()
        )));
    }
    let window = &rho[rho.len().saturating_sub(10)..];
    // log rho_k = (log a_k)/k = c0 + c1 (log k)/k; c0 is the limit.
    let pts: Vec<(f64, f64)> = window
        .iter()
        .map(|&(kf, la)| (kf.ln() / kf, la / kf))
        .collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|q| q.0).sum();
    let sy: f64 = pts.iter().map(|q| q.1).sum();
    let sxx: f64 = pts.iter().map(|q| q.0 * q.0).sum();
    let sxy: f64 = pts.iter().map(|q| q.0 * q.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let c0 = (sy - slope * sx) / n;
    let limit = c0.exp(); // limsup a_k^{1/k}
    let r_bar = if limit < 1e-8 {
        f64::INFINITY
    } else if !limit.is_finite() || limit > 1e12 {
        0.0
    } else {
        1.0 / limit
    };
    Ok(TailEstimate {
        s,
        r_bar,
        method: "series-ratio".into(),
        horizon: (t, t),
    })
}

/// The interpolation inequality `z_{1+alpha/2} <= 1 + z_{3/2}` for directly
/// computed (non-interpolated) normalized moments of a density derivative.
pub fn interpolation_inequality_check(
    table: &MomentTable,
    eta: &MultiIndex,
    alpha: f64,
    t: f64,
) -> Result<Option<bool>, CoreError> {
    let p = 1.0 + alpha / 2.0;
    let (m, interpolated) = table.get_interpolated(eta, p, t)?;
    if interpolated {
        // The inequality is a statement about true moments; interpolated
        // entries do not qualify.
        return Ok(None);
    }
    let z = m / gamma_fn(p + table.b());
    let z32 = table
        .get_normalized(eta, 1.5, t)
        .ok_or_else(|| CoreError::MissingEntries(format!("(nu = {eta}, p = 1.5)")))?;
    Ok(Some(z <= 1.0 + z32 + 1e-12 * (1.0 + z32)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{MomentTable, MultiIndex};
    use approx::assert_relative_eq;

    /// Unit-mass Maxwellian moment table from the gamma-ratio closed form.
    fn maxwellian_table(n: usize, temp: f64, b: f64, orders: &[f64]) -> MomentTable {
        let mut t = MomentTable::new(b, 1.0, n, "maxwellian-closed-form");
        let nu = MultiIndex::zero(n);
        for &p in orders {
            let m = (2.0 * temp).powf(p) * gamma_fn(p + n as f64 / 2.0) / gamma_fn(n as f64 / 2.0);
            t.insert(nu.clone(), p, 0.0, m);
        }
        t
    }

    fn half_grid(max_halves: u32) -> Vec<f64> {
        (0..=max_halves).map(|k| k as f64 / 2.0).collect()
    }

    #[test]
    fn normalization_identities() {
        let table = maxwellian_table(3, 1.0, 1.0, &[1.0]);
        let nu = MultiIndex::zero(3);
        // b = 1: z_1 = m_1 / Gamma(2) = m_1.
        let z = table.get_normalized(&nu, 1.0, 0.0).unwrap();
        assert_relative_eq!(z, table.get(&nu, 1.0, 0.0).unwrap(), epsilon = 1e-14);

        // Round trip through a different b.
        let renorm = normalize(&table, 0.5).unwrap();
        let z2 = renorm.get_normalized(&nu, 1.0, 0.0).unwrap();
        assert_relative_eq!(z2 * gamma_fn(1.5), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn product_sum_order_zero() {
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(12));
        let nu = MultiIndex::zero(3);
        let v = product_sum(&table, &nu, 1.0, 2.0, 0.0, false).unwrap();
        let m1 = table.get(&nu, 1.0, 0.0).unwrap();
        let m2 = table.get(&nu, 2.0, 0.0).unwrap();
        assert_relative_eq!(v, m1 * m2, epsilon = 1e-12);
        // Strict sum at eta = 0 is empty.
        let v0 = product_sum(&table, &nu, 1.0, 2.0, 0.0, true).unwrap();
        assert_eq!(v0, 0.0);
        // Symmetry in (p, q).
        let vw = product_sum(&table, &nu, 2.0, 1.0, 0.0, false).unwrap();
        assert_relative_eq!(v, vw, epsilon = 1e-13);
    }

    #[test]
    fn product_sum_second_derivative_hand_expansion() {
        // |eta| = 2 diagonal: binomials (1, 2, 1) over three splits.
        let mut table = MomentTable::new(0.5, 1.0, 2, "hand");
        let e0 = MultiIndex(vec![0, 0]);
        let e1 = MultiIndex(vec![1, 0]);
        let e2 = MultiIndex(vec![2, 0]);
        for (nu, m1, m2) in [(&e0, 2.0, 3.0), (&e1, 5.0, 7.0), (&e2, 11.0, 13.0)] {
            table.insert((*nu).clone(), 1.0, 0.0, m1);
            table.insert((*nu).clone(), 2.0, 0.0, m2);
        }
        let v = product_sum(&table, &e2, 1.0, 2.0, 0.0, false).unwrap();
        // sum: m1[0]m2[2] + 2 m1[1]m2[1] + m1[2]m2[0]
        let expected = 2.0 * 13.0 + 2.0 * 5.0 * 7.0 + 11.0 * 3.0;
        assert_relative_eq!(v, expected, epsilon = 1e-13);
        let strict = product_sum(&table, &e2, 1.0, 2.0, 0.0, true).unwrap();
        assert_relative_eq!(v - strict, 11.0 * 3.0, epsilon = 1e-13);
        // Missing entries are reported, not fabricated.
        let err = product_sum(&table, &e2, 0.5, 2.0, 0.0, false);
        assert!(matches!(err, Err(CoreError::MissingEntries(_))));
    }

    #[test]
    fn aggregate_matches_hand_computation() {
        // p = 2, eta = 0, alpha = 1: k_p = 1, S_2 = 2 (m_1 m_{3/2} + m_{3/2} m_1).
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(12));
        let nu = MultiIndex::zero(3);
        let s = s_p(&table, &nu, 2.0, 1.0, 0.0).unwrap();
        let m1 = table.get(&nu, 1.0, 0.0).unwrap();
        let m32 = table.get(&nu, 1.5, 0.0).unwrap();
        assert_relative_eq!(s, 2.0 * 2.0 * m1 * m32, max_relative = 1e-12);

        // p = 3/2: two-term expression with binom(3/2, 1) = 3/2.
        let s32 = s_p(&table, &nu, 1.5, 1.0, 0.0).unwrap();
        let m05 = table.get(&nu, 0.5, 0.0).unwrap();
        assert_relative_eq!(
            s32,
            1.5 * (m1 * m1 + m32 * m05),
            max_relative = 1e-12
        );
    }

    #[test]
    fn aggregate_scales_quadratically() {
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(12));
        let mut scaled = MomentTable::new(0.5, 1.0, 3, "scaled");
        for (nu, p, t, m) in table.iter() {
            scaled.insert(nu.clone(), p, t, 3.0 * m);
        }
        let nu = MultiIndex::zero(3);
        let s1 = s_p(&table, &nu, 2.5, 1.0, 0.0).unwrap();
        let s9 = s_p(&scaled, &nu, 2.5, 1.0, 0.0).unwrap();
        assert_relative_eq!(s9, 9.0 * s1, max_relative = 1e-12);
    }

    #[test]
    fn z_cap_monotone_in_entries() {
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(12));
        let nu = MultiIndex::zero(3);
        let z1 = z_cap(&table, &nu, 2.0, 1.0, 0.0).unwrap();
        let mut bumped = MomentTable::new(0.5, 1.0, 3, "bumped");
        for (nu_i, p, t, m) in table.iter() {
            bumped.insert(nu_i.clone(), p, t, m * 1.1);
        }
        let z2 = z_cap(&bumped, &nu, 2.0, 1.0, 0.0).unwrap();
        assert!(z2 > z1);
        // p = 3/2 has exactly two candidates.
        let z32 = z_cap(&table, &nu, 1.5, 1.0, 0.0).unwrap();
        let a = product_sum_normalized(&table, &nu, 1.0, 1.0, 0.0, false).unwrap();
        let b = product_sum_normalized(&table, &nu, 1.5, 0.5, 0.0, false).unwrap();
        assert_relative_eq!(z32, a.max(b), epsilon = 1e-13);
    }

    #[test]
    fn aggregate_cap_ratio_is_bounded_over_grid() {
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(50));
        let nu = MultiIndex::zero(3);
        let grid: Vec<f64> = (4..=40).map(|k| k as f64 / 2.0).collect();
        let report = aggregate_cap_check(&table, &nu, &grid, 1.0, 0.5, 0.0).unwrap();
        assert!(report.degenerate.is_empty());
        assert!(report.a_max.is_finite() && report.a_max > 0.0);
        // Bounded constant: the late-grid ratios stay below twice the early max.
        let early: f64 = report.ratios[..8].iter().copied().fold(0.0, f64::max);
        let late: f64 = report.ratios[report.ratios.len() - 8..]
            .iter()
            .copied()
            .fold(0.0, f64::max);
        assert!(late <= 2.0 * early, "early {early} late {late}");
        // Mismatched b is rejected.
        assert!(aggregate_cap_check(&table, &nu, &grid, 1.0, 0.6, 0.0).is_err());
    }

    #[test]
    fn geometric_fit_recovers_exact_geometry() {
        let mut table = MomentTable::new(0.5, 1.0, 3, "geometric");
        let nu = MultiIndex::zero(3);
        let grid: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        for &p in &grid {
            // z_p = 3 * 2^p, stored as m_p = z_p Gamma(p + b).
            table.insert(nu.clone(), p, 0.0, 3.0 * 2f64.powf(p) * gamma_fn(p + 0.5));
        }
        let fit = fit_geometric_bound(&table, &nu, &grid, 0.0).unwrap();
        assert_relative_eq!(fit.k, 3.0, max_relative = 1e-9);
        assert_relative_eq!(fit.q, 2.0, max_relative = 1e-9);
        assert!(!fit.non_geometric);
        assert!(fit.residuals.iter().all(|&r| r <= 1e-9));
    }

    #[test]
    fn geometric_fit_envelope_dominates_maxwellian() {
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(40));
        let nu = MultiIndex::zero(3);
        let grid: Vec<f64> = (3..=40).map(|k| k as f64 / 2.0).collect();
        let fit = fit_geometric_bound(&table, &nu, &grid, 0.0).unwrap();
        assert!(!fit.non_geometric);
        assert!(fit.residuals.iter().all(|&r| r <= 1e-9));
        // The geometric ratio tracks twice the temperature within 15%.
        assert_relative_eq!(fit.q, 2.0, max_relative = 0.15);
        for &p in &grid {
            let z = table.get_normalized(&nu, p, 0.0).unwrap();
            assert!(z <= fit.k * fit.q.powf(p) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn factorial_data_is_flagged_non_geometric() {
        let mut table = MomentTable::new(0.5, 1.0, 3, "factorial");
        let nu = MultiIndex::zero(3);
        let grid: Vec<f64> = (1..=12).map(|k| k as f64).collect();
        for &p in &grid {
            table.insert(nu.clone(), p, 0.0, gamma_fn(p + 1.0) * gamma_fn(p + 0.5));
        }
        let fit = fit_geometric_bound(&table, &nu, &grid, 0.0).unwrap();
        assert!(fit.non_geometric);
    }

    #[test]
    fn tail_estimate_recovers_gaussian_rate() {
        for temp in [0.5, 1.0, 2.0] {
            let orders: Vec<f64> = (0..=25).map(|k| k as f64).collect();
            let table = maxwellian_table(3, temp, 0.5, &orders);
            let nu = MultiIndex::zero(3);
            let est = tail_order_estimate(&table, &nu, 2.0, 0.0).unwrap();
            let truth = 1.0 / (2.0 * temp);
            assert!(
                (est.r_bar - truth).abs() <= 0.1 * truth,
                "T = {temp}: estimated {} vs true {truth}",
                est.r_bar
            );
        }
    }

    #[test]
    fn tail_estimate_sub_order_is_infinite() {
        // s = 1 on a Maxwellian: every rate is admissible.
        let orders: Vec<f64> = (0..=50).map(|k| k as f64 / 2.0).collect();
        let table = maxwellian_table(3, 1.0, 0.5, &orders);
        let nu = MultiIndex::zero(3);
        let est = tail_order_estimate(&table, &nu, 1.0, 0.0).unwrap();
        assert!(est.r_bar.is_infinite());
    }

    #[test]
    fn tail_estimate_heavy_data_gives_zero() {
        // Moments growing like Gamma(2p + 1) defeat any Gaussian weight.
        let mut table = MomentTable::new(0.5, 1.0, 3, "heavy");
        let nu = MultiIndex::zero(3);
        for k in 0..=25 {
            let p = k as f64;
            table.insert(nu.clone(), p, 0.0, gamma_fn(2.0 * p + 1.0));
        }
        let est = tail_order_estimate(&table, &nu, 2.0, 0.0).unwrap();
        assert_eq!(est.r_bar, 0.0);
    }

    #[test]
    fn interpolation_inequality_on_maxwellian() {
        let table = maxwellian_table(3, 1.0, 0.5, &half_grid(12));
        let nu = MultiIndex::zero(3);
        // alpha = 1: p = 1.5 is on the grid (direct), inequality holds.
        let res = interpolation_inequality_check(&table, &nu, 1.0, 0.0).unwrap();
        assert_eq!(res, Some(true));
        // alpha = 0.5: p = 1.25 off-grid -> interpolated -> not asserted.
        let res2 = interpolation_inequality_check(&table, &nu, 0.5, 0.0).unwrap();
        assert_eq!(res2, None);
    }
}
