//! Stochastic particle solver for the space-homogeneous equation.
//!
//! Nanbu–Babovsky sweep: each step shuffles the ensemble into disjoint
//! pairs; a formed pair collides with probability `dt |u|^alpha (N-1)/N`,
//! drawing the scattering cosine from a precomputed inverse-CDF table of the
//! symmetrized angular density and the azimuth uniformly. Momentum is
//! conserved bit-for-bit per collision and energy to rounding.
//!
//! Reproducibility: `(seed, N, dt)` fully determine a run; replicas use
//! independent counter-based RNG streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::{MomentTable, MultiIndex, PolyGaussianDensity};
use crate::error::CoreError;
use crate::kernel::{post_collision_unchecked, AngularCrossSection, CollisionKernel};
use crate::quadrature::adaptive_integrate_opts;
use crate::special::{ball_volume, digamma, sphere_measure};
use crate::vec3::{self, Velocity};

/// Precomputed inverse-CDF sampler for the scattering cosine, with the
/// angular density `omega_{n-2} h_bar(z) (1-z^2)^{(n-3)/2}` resolved on a
/// fine grid.
#[derive(Debug, Clone)]
pub struct AngularSampler {
    grid: Vec<f64>,
    cdf: Vec<f64>,
    dimension: usize,
}

impl AngularSampler {
    pub fn build(h: &AngularCrossSection, cells: usize) -> Result<Self, CoreError> {
        let n = h.dimension();
        let omega = sphere_measure(n - 2);
        let density = |z: f64| {
            omega * h.eval_symmetrized(z) * (1.0 - z * z).powf((n as f64 - 3.0) / 2.0)
        };
        let mut grid = Vec::with_capacity(cells + 1);
        for k in 0..=cells {
            grid.push(-1.0 + 2.0 * k as f64 / cells as f64);
        }
        let mut cdf = vec![0.0; cells + 1];
        for k in 0..cells {
            let mass = adaptive_integrate_opts(density, grid[k], grid[k + 1], 1e-12, 4_000, 1)
                .map(|q| q.value)
                .unwrap_or_else(|e| match e {
                    CoreError::NonConvergent { partial, .. } => partial,
                    _ => f64::NAN,
                });
            if !mass.is_finite() || mass < 0.0 {
                return Err(CoreError::InvalidCrossSection(format!(
                    "angular density integration failed on cell {k}"
                )));
            }
            cdf[k + 1] = cdf[k] + mass;
        }
        let total = cdf[cells];
        if !(total > 0.0) {
            return Err(CoreError::InvalidCrossSection(
                "angular density has zero mass".into(),
            ));
        }
        for v in &mut cdf {
            *v /= total;
        }
        Ok(AngularSampler {
            grid,
            cdf,
            dimension: n,
        })
    }

    /// Maps a uniform variate to a scattering cosine.
    pub fn sample(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let mut lo = 0usize;
        let mut hi = self.cdf.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cdf[mid] <= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = self.cdf[hi] - self.cdf[lo];
        let w = if span > 0.0 { (u - self.cdf[lo]) / span } else { 0.5 };
        (self.grid[lo] + w * (self.grid[hi] - self.grid[lo])).clamp(-1.0, 1.0)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Probability mass of a cosine interval, for goodness-of-fit tests.
    pub fn interval_mass(&self, a: f64, b: f64) -> f64 {
        let locate = |x: f64| -> f64 {
            let x = x.clamp(-1.0, 1.0);
            let pos = (x + 1.0) / 2.0 * (self.grid.len() - 1) as f64;
            let i = (pos.floor() as usize).min(self.grid.len() - 2);
            let w = pos - i as f64;
            self.cdf[i] + w * (self.cdf[i + 1] - self.cdf[i])
        };
        locate(b) - locate(a)
    }
}

/// Diagnostics from ensemble initialization.
#[derive(Debug, Clone, Serialize)]
pub struct InitDiagnostics {
    pub acceptance: f64,
    pub energy_z_score: f64,
    pub target_energy: f64,
    pub empirical_energy: f64,
}

/// Per-step summary.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepReport {
    pub candidates: usize,
    pub accepted: usize,
    pub majorant: f64,
}

/// N equal-weight velocity samples evolving under the collision kernel.
pub struct ParticleEnsemble {
    dimension: usize,
    velocities: Vec<Velocity>,
    time: f64,
    kernel: CollisionKernel,
    sampler: AngularSampler,
    rng: ChaCha8Rng,
    initial_energy: f64,
    accepted_total: u64,
    /// Scattering cosines of accepted collisions, kept when enabled.
    pub record_cosines: bool,
    pub cosines: Vec<f64>,
    pub init_diagnostics: InitDiagnostics,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn velocities(&self) -> &[Velocity] {
        &self.velocities
    }

    pub fn kernel(&self) -> &CollisionKernel {
        &self.kernel
    }

    pub fn accepted_total(&self) -> u64 {
        self.accepted_total
    }

    /// Empirical moment `(1/N) sum |xi|^{2p}` with pairwise summation.
    pub fn moment(&self, p: f64) -> f64 {
        let vals: Vec<f64> = self
            .velocities
            .iter()
            .map(|v| vec3::norm_sq(v).powf(p))
            .collect();
        pairwise_sum(&vals) / self.len() as f64
    }

    /// Monte Carlo standard error of [`Self::moment`].
    pub fn moment_std_error(&self, p: f64) -> f64 {
        let n = self.len() as f64;
        let vals: Vec<f64> = self
            .velocities
            .iter()
            .map(|v| vec3::norm_sq(v).powf(p))
            .collect();
        let mean = pairwise_sum(&vals) / n;
        let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }

    pub fn total_momentum(&self) -> Velocity {
        let mut m = [0.0; 3];
        for v in &self.velocities {
            m = vec3::add(&m, v);
        }
        m
    }

    pub fn total_energy(&self) -> f64 {
        let vals: Vec<f64> = self.velocities.iter().map(vec3::norm_sq).collect();
        pairwise_sum(&vals)
    }

    /// Relative energy drift since initialization.
    pub fn energy_drift(&self) -> f64 {
        (self.total_energy() - self.initial_energy).abs() / self.initial_energy.abs().max(1e-300)
    }

    /// Mean collision rate estimate `<|u|^alpha>` over random pairs, whose
    /// reciprocal is the mean free time.
    pub fn mean_free_time(&mut self) -> f64 {
        let n = self.len();
        let samples = 4096.min(n / 2);
        let mut acc = 0.0;
        for _ in 0..samples {
            let i = self.rng.gen_range(0..n);
            let j = self.rng.gen_range(0..n);
            if i == j {
                continue;
            }
            let u = vec3::sub(&self.velocities[i], &self.velocities[j]);
            acc += vec3::norm(&u).powf(self.kernel.alpha());
        }
        let rate = acc / samples as f64;
        1.0 / rate.max(1e-12)
    }

    /// One Nanbu–Babovsky sweep of length `dt`.
    pub fn step(&mut self, dt: f64) -> Result<StepReport, CoreError> {
        let n = self.len();
        if n < 2 {
            return Err(CoreError::StepFailure("need at least two particles".into()));
        }
        // Disjoint pairing by shuffle.
        let mut idx: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = self.rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let pairs = n / 2;
        // Majorant from the exact max over formed pairs, with headroom; the
        // violation path then genuinely flags logic rot rather than tail luck.
        let mut max_rate = 0.0f64;
        let alpha = self.kernel.alpha();
        for k in 0..pairs {
            let a = idx[2 * k] as usize;
            let b = idx[2 * k + 1] as usize;
            let u = vec3::sub(&self.velocities[a], &self.velocities[b]);
            max_rate = max_rate.max(vec3::norm(&u).powf(alpha));
        }
        let majorant = 1.5 * max_rate;
        let scale = (n as f64 - 1.0) / n as f64;
        if dt * majorant * scale >= 0.5 {
            return Err(CoreError::StepFailure(format!(
                "dt = {dt} gives collision probability {:.3} >= 0.5 under the majorant",
                dt * majorant * scale
            )));
        }
        let mut accepted = 0usize;
        for k in 0..pairs {
            let a = idx[2 * k] as usize;
            let b = idx[2 * k + 1] as usize;
            let u = vec3::sub(&self.velocities[a], &self.velocities[b]);
            let speed = vec3::norm(&u);
            if speed == 0.0 {
                continue;
            }
            let rate = speed.powf(alpha);
            if rate > majorant {
                return Err(CoreError::StepFailure(
                    "majorant violation: stale rate bound".into(),
                ));
            }
            let p_collide = dt * rate * scale;
            if self.rng.gen::<f64>() >= p_collide {
                continue;
            }
            // Scattering direction in the relative-velocity frame.
            let z = self.sampler.sample(self.rng.gen::<f64>());
            let u_hat = vec3::scale(&u, 1.0 / speed);
            let (e1, e2) = vec3::orthonormal_frame(&u_hat, self.dimension);
            let s = (1.0 - z * z).max(0.0).sqrt();
            let sigma = if self.dimension == 3 {
                let psi = 2.0 * std::f64::consts::PI * self.rng.gen::<f64>();
                [
                    z * u_hat[0] + s * (psi.cos() * e1[0] + psi.sin() * e2[0]),
                    z * u_hat[1] + s * (psi.cos() * e1[1] + psi.sin() * e2[1]),
                    z * u_hat[2] + s * (psi.cos() * e1[2] + psi.sin() * e2[2]),
                ]
            } else {
                let side = if self.rng.gen::<bool>() { 1.0 } else { -1.0 };
                [
                    z * u_hat[0] + side * s * e1[0],
                    z * u_hat[1] + side * s * e1[1],
                    0.0,
                ]
            };
            let (va, vb) =
                post_collision_unchecked(&self.velocities[a], &self.velocities[b], &sigma);
            self.velocities[a] = va;
            self.velocities[b] = vb;
            accepted += 1;
            if self.record_cosines {
                self.cosines.push(z);
            }
        }
        self.accepted_total += accepted as u64;
        self.time += dt;
        Ok(StepReport {
            candidates: pairs,
            accepted,
            majorant,
        })
    }

    /// Time-marches to `t_end`, recording empirical moments every
    /// `observe_every` time units (plus the endpoints).
    pub fn run(
        &mut self,
        t_end: f64,
        observe_orders: &[f64],
        observe_every: f64,
        dt: f64,
    ) -> Result<MomentTable, CoreError> {
        if !(t_end >= 0.0) {
            return Err(CoreError::StepFailure("t_end must be nonnegative".into()));
        }
        let eps = self.kernel.cross_section().epsilon();
        let mut table = MomentTable::new(
            eps / 4.0,
            self.kernel.alpha(),
            self.dimension,
            "dsmc-empirical",
        );
        let nu0 = MultiIndex::zero(self.dimension);
        let record = |time: f64, s: &ParticleEnsemble, table: &mut MomentTable| {
            for &p in observe_orders {
                table.insert(nu0.clone(), p, time, s.moment(p));
            }
        };
        record(0.0, self, &mut table);
        if t_end == 0.0 {
            return Ok(table);
        }
        let mut next_obs = observe_every;
        while self.time < t_end - 1e-12 {
            let h = dt.min(t_end - self.time);
            self.step(h)?;
            if self.time + 1e-9 >= next_obs {
                record(self.time, self, &mut table);
                next_obs += observe_every;
            }
        }
        if table.get(&nu0, observe_orders[0], self.time).is_none() {
            record(self.time, self, &mut table);
        }
        Ok(table)
    }

    /// Kozachenko–Leonenko entropy estimate on a deterministic subsample;
    /// the H-theorem proxy for equilibration checks.
    pub fn entropy_estimate(&self, subsample: usize, k: usize) -> f64 {
        let n = self.dimension;
        let m = subsample.min(self.len());
        let stride = (self.len() / m).max(1);
        let subset: Vec<&Velocity> = self.velocities.iter().step_by(stride).take(m).collect();
        let mut acc = 0.0;
        for (i, vi) in subset.iter().enumerate() {
            let mut dists: Vec<f64> = subset
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, vj)| {
                    let d = vec3::sub(vi, vj);
                    vec3::norm(&d)
                })
                .collect();
            dists.sort_by(f64::total_cmp);
            let r = dists[k - 1].max(1e-12);
            acc += (r.powi(n as i32)).ln();
        }
        digamma(m as f64) - digamma(k as f64) + ball_volume(n).ln() + acc / m as f64
    }
}

/// Draws `n` i.i.d. samples from a nonnegative unit-mass density by
/// rejection from an inflated Gaussian-mixture proposal.
pub fn init_from_density(
    d: &PolyGaussianDensity,
    n: usize,
    seed: u64,
    kernel: CollisionKernel,
) -> Result<ParticleEnsemble, CoreError> {
    init_from_density_stream(d, n, seed, 0, kernel)
}

pub fn init_from_density_stream(
    d: &PolyGaussianDensity,
    n: usize,
    seed: u64,
    stream: u64,
    kernel: CollisionKernel,
) -> Result<ParticleEnsemble, CoreError> {
    let dim = d.dimension();
    if dim != kernel.dimension() {
        return Err(CoreError::InvalidDensity(
            "density and kernel dimensions differ".into(),
        ));
    }
    let mass = d.mass();
    if (mass - 1.0).abs() > 1e-8 {
        return Err(CoreError::InvalidDensity(format!(
            "density mass is {mass}, expected 1"
        )));
    }
    if n < 2 {
        return Err(CoreError::InvalidDensity("need at least two particles".into()));
    }
    let sampler = AngularSampler::build(kernel.cross_section(), 4096)?;

    // Proposal: per-term Gaussians inflated by 1.3 in standard deviation,
    // weighted by a crude term-mass estimate.
    let inflate = 1.69;
    let weights: Vec<f64> = d
        .terms()
        .iter()
        .map(|t| {
            let poly_scale = t.poly.coeff_norm().max(1e-12)
                * (1.0 + (3.0 * t.width).powf(t.poly.total_degree() as f64 / 2.0));
            t.coeff.abs()
                * (2.0 * std::f64::consts::PI * t.width).powf(dim as f64 / 2.0)
                * poly_scale
        })
        .collect();
    let w_total: f64 = weights.iter().sum();
    let proposal_pdf = |xi: &Velocity| -> f64 {
        d.terms()
            .iter()
            .zip(&weights)
            .map(|(t, w)| {
                let mut q = 0.0;
                for i in 0..dim {
                    let dx = xi[i] - t.center[i];
                    q += dx * dx;
                }
                let tt = t.width * inflate;
                (w / w_total) * (-q / (2.0 * tt)).exp()
                    / (2.0 * std::f64::consts::PI * tt).powf(dim as f64 / 2.0)
            })
            .sum()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut majorant = 0.0f64;
    // Majorant scan: proposal-guided probes plus a coarse deterministic grid.
    for _ in 0..8192 {
        let xi = sample_proposal(&mut rng, d, &weights, w_total, inflate, dim);
        let q = proposal_pdf(&xi);
        if q > 0.0 {
            majorant = majorant.max(d.eval(&xi).abs() / q);
        }
    }
    let r_env = d.envelope_radius(0.0);
    for dir in crate::density::direction_grid(dim, 26) {
        for k in 1..=16 {
            let r = r_env * k as f64 / 16.0;
            let xi = [r * dir[0], r * dir[1], r * dir[2]];
            let q = proposal_pdf(&xi);
            if q > 0.0 {
                majorant = majorant.max(d.eval(&xi).abs() / q);
            }
        }
    }
    majorant *= 1.5;

    let mut attempt = 0;
    'outer: loop {
        attempt += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream + 1_000_000 * attempt as u64);
        let mut velocities = Vec::with_capacity(n);
        let mut proposals = 0usize;
        while velocities.len() < n {
            proposals += 1;
            if proposals > 200_000 && (velocities.len() as f64 / proposals as f64) < 1e-4 {
                return Err(CoreError::SamplingFailure(format!(
                    "rejection efficiency {:.2e} below 1e-4 after {proposals} proposals",
                    velocities.len() as f64 / proposals as f64
                )));
            }
            let xi = sample_proposal(&mut rng, d, &weights, w_total, inflate, dim);
            let q = proposal_pdf(&xi);
            if q <= 0.0 {
                continue;
            }
            let target = d.eval(&xi);
            if target < 0.0 {
                return Err(CoreError::SamplingFailure(format!(
                    "density is negative at {xi:?}; rejection sampling requires d >= 0"
                )));
            }
            let ratio = target / (majorant * q);
            if ratio > 1.0 {
                // The estimated envelope was too small; restart with more
                // headroom rather than accept a biased stream.
                if attempt >= 4 {
                    return Err(CoreError::SamplingFailure(
                        "proposal envelope kept failing after refinement".into(),
                    ));
                }
                majorant *= 4.0;
                continue 'outer;
            }
            if rng.gen::<f64>() < ratio {
                velocities.push(xi);
            }
        }
        let acceptance = velocities.len() as f64 / proposals as f64;

        let target_energy = d.energy();
        let vals: Vec<f64> = velocities.iter().map(vec3::norm_sq).collect();
        let emp = pairwise_sum(&vals) / n as f64;
        let mean2: f64 = vals.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let sigma = ((mean2 - emp * emp).max(0.0) / n as f64).sqrt();
        let z = if sigma > 0.0 {
            (emp - target_energy) / sigma
        } else {
            0.0
        };
        let initial_energy = pairwise_sum(&vals);
        return Ok(ParticleEnsemble {
            dimension: dim,
            velocities,
            time: 0.0,
            kernel,
            sampler,
            rng,
            initial_energy,
            accepted_total: 0,
            record_cosines: false,
            cosines: Vec::new(),
            init_diagnostics: InitDiagnostics {
                acceptance,
                energy_z_score: z,
                target_energy,
                empirical_energy: emp,
            },
        });
    }
}

fn sample_proposal(
    rng: &mut ChaCha8Rng,
    d: &PolyGaussianDensity,
    weights: &[f64],
    w_total: f64,
    inflate: f64,
    dim: usize,
) -> Velocity {
    use rand_distr::StandardNormal;
    let mut pick = rng.gen::<f64>() * w_total;
    let mut term = &d.terms()[0];
    for (t, &w) in d.terms().iter().zip(weights) {
        if pick <= w {
            term = t;
            break;
        }
        pick -= w;
    }
    let s = (term.width * inflate).sqrt();
    let mut xi = [0.0; 3];
    for (i, x) in xi.iter_mut().enumerate().take(dim) {
        let g: f64 = rng.sample(StandardNormal);
        *x = term.center[i] + s * g;
    }
    xi
}

fn pairwise_sum(vals: &[f64]) -> f64 {
    match vals.len() {
        0 => 0.0,
        1 => vals[0],
        n => {
            let (a, b) = vals.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::hard_sphere;
    use crate::special::chi_squared_sf;
    use approx::assert_relative_eq;

    fn hs_kernel() -> CollisionKernel {
        CollisionKernel::new(1.0, hard_sphere(3).unwrap()).unwrap()
    }

    #[test]
    fn init_reproduces_maxwellian_energy() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let e = init_from_density(&d, 100_000, 42, hs_kernel()).unwrap();
        // Unit-temperature Maxwellian energy is 3; the z-score contract.
        assert!(
            e.init_diagnostics.energy_z_score.abs() < 3.0,
            "z = {}",
            e.init_diagnostics.energy_z_score
        );
        assert_relative_eq!(e.moment(1.0), 3.0, max_relative = 0.02);
        assert!(e.init_diagnostics.acceptance > 0.05);
    }

    #[test]
    fn init_is_deterministic_in_the_seed() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let a = init_from_density(&d, 1000, 7, hs_kernel()).unwrap();
        let b = init_from_density(&d, 1000, 7, hs_kernel()).unwrap();
        assert_eq!(a.velocities(), b.velocities());
        let c = init_from_density(&d, 1000, 8, hs_kernel()).unwrap();
        assert_ne!(a.velocities(), c.velocities());
    }

    #[test]
    fn bimodal_density_has_zero_mean_velocity() {
        let bump = PolyGaussianDensity::gaussian_at(3, [1.5, 0.0, 0.0], 0.4, 0.5)
            .unwrap()
            .add(&PolyGaussianDensity::gaussian_at(3, [-1.5, 0.0, 0.0], 0.4, 0.5).unwrap());
        let e = init_from_density(&bump, 50_000, 11, hs_kernel()).unwrap();
        let p = e.total_momentum();
        let per = vec3::norm(&p) / e.len() as f64;
        assert!(per < 0.02, "mean velocity {per}");
    }

    #[test]
    fn forced_collision_lands_on_energy_sphere() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let mut e = init_from_density(&d, 64, 3, hs_kernel()).unwrap();
        let e0 = e.total_energy();
        let p0 = e.total_momentum();
        // Large dt is rejected; a legal dt conserves exactly.
        let mft = e.mean_free_time();
        assert!(e.step(mft * 10.0).is_err());
        for _ in 0..50 {
            e.step(0.05 * mft).unwrap();
        }
        let p1 = e.total_momentum();
        for i in 0..3 {
            assert!((p1[i] - p0[i]).abs() < 1e-12, "momentum drift {:?}", p1);
        }
        assert_relative_eq!(e.total_energy(), e0, max_relative = 1e-12);
    }

    #[test]
    fn equilibrium_moments_are_stationary() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let mut e = init_from_density(&d, 40_000, 123, hs_kernel()).unwrap();
        let mft = e.mean_free_time();
        let m2_initial = e.moment(2.0);
        let m3_initial = e.moment(3.0);
        let s2 = e.moment_std_error(2.0);
        let s3 = e.moment_std_error(3.0);
        let table = e.run(2.0 * mft, &[2.0, 3.0], 0.5 * mft, 0.1 * mft).unwrap();
        let nu = MultiIndex::zero(3);
        for t in table.times() {
            let m2 = table.get(&nu, 2.0, t).unwrap();
            let m3 = table.get(&nu, 3.0, t).unwrap();
            assert!(
                (m2 - m2_initial).abs() < 3.0 * s2 * 2f64.sqrt(),
                "t = {t}: m2 {m2} vs {m2_initial} (se {s2})"
            );
            assert!(
                (m3 - m3_initial).abs() < 3.0 * s3 * 2f64.sqrt(),
                "t = {t}: m3 {m3} vs {m3_initial} (se {s3})"
            );
        }
        assert!(e.energy_drift() < 1e-10);
    }

    #[test]
    fn angular_law_histogram_matches_cross_section() {
        // chi-squared test of accepted cosines against the sampled law, for
        // both a flat and a singular cross section.
        for xs in [hard_sphere(3).unwrap(), crate::kernel::singular_family(0.5, 3).unwrap()] {
            let kernel = CollisionKernel::new(1.0, xs).unwrap();
            let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
            let mut e = init_from_density(&d, 20_000, 9, kernel).unwrap();
            e.record_cosines = true;
            let mft = e.mean_free_time();
            while e.cosines.len() < 200_000 {
                e.step(0.2 * mft).unwrap();
            }
            let sampler = AngularSampler::build(e.kernel().cross_section(), 4096).unwrap();
            let bins = 40usize;
            let mut counts = vec![0usize; bins];
            for &z in &e.cosines {
                let k = (((z + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
                counts[k] += 1;
            }
            let total = e.cosines.len() as f64;
            let mut chi2 = 0.0;
            for (k, &c) in counts.iter().enumerate() {
                let a = -1.0 + 2.0 * k as f64 / bins as f64;
                let b = -1.0 + 2.0 * (k + 1) as f64 / bins as f64;
                let expected = sampler.interval_mass(a, b) * total;
                if expected > 5.0 {
                    chi2 += (c as f64 - expected).powi(2) / expected;
                }
            }
            let p_value = chi_squared_sf(chi2, (bins - 1) as f64);
            assert!(
                p_value > 0.01,
                "{}: chi2 {chi2} p {p_value}",
                e.kernel().cross_section().name()
            );
        }
    }

    #[test]
    fn two_temperature_mixture_relaxes_toward_equilibrium() {
        // Third moment of a two-temperature mixture relaxes toward the
        // equilibrium Maxwellian value fixed by mass and energy.
        let mix = PolyGaussianDensity::maxwellian(3, 0.4, 0.5)
            .unwrap()
            .add(&PolyGaussianDensity::maxwellian(3, 1.6, 0.5).unwrap());
        let mut e = init_from_density(&mix, 60_000, 21, hs_kernel()).unwrap();
        let mft = e.mean_free_time();
        let m3_start = e.moment(3.0);
        // Equilibrium temperature from conserved energy: T = m_1 / 3.
        let t_eq = e.moment(1.0) / 3.0;
        let m3_eq = (2.0 * t_eq).powf(3.0) * crate::special::gamma_fn(4.5)
            / crate::special::gamma_fn(1.5);
        let _ = e.run(6.0 * mft, &[3.0], 2.0 * mft, 0.1 * mft).unwrap();
        let m3_end = e.moment(3.0);
        let gap_start = (m3_start - m3_eq).abs();
        let gap_end = (m3_end - m3_eq).abs();
        assert!(
            gap_end < 0.35 * gap_start,
            "m3 {m3_start} -> {m3_end}, equilibrium {m3_eq}"
        );
    }

    #[test]
    fn entropy_proxy_does_not_decrease_toward_equilibrium() {
        let mix = PolyGaussianDensity::gaussian_at(3, [1.2, 0.0, 0.0], 0.3, 0.5)
            .unwrap()
            .add(&PolyGaussianDensity::gaussian_at(3, [-1.2, 0.0, 0.0], 0.3, 0.5).unwrap());
        let mut e = init_from_density(&mix, 30_000, 5, hs_kernel()).unwrap();
        let mft = e.mean_free_time();
        let h0 = e.entropy_estimate(1500, 4);
        for _ in 0..30 {
            e.step(0.2 * mft).unwrap();
        }
        let h1 = e.entropy_estimate(1500, 4);
        // Physical entropy increases; the estimator carries noise, so allow
        // a small tolerance band.
        assert!(h1 > h0 - 0.05, "entropy went {h0} -> {h1}");
    }

    #[test]
    fn run_with_zero_horizon_returns_initial_moments() {
        let d = PolyGaussianDensity::maxwellian(3, 1.0, 1.0).unwrap();
        let mut e = init_from_density(&d, 1000, 2, hs_kernel()).unwrap();
        let table = e.run(0.0, &[1.0], 1.0, 0.1).unwrap();
        let nu = MultiIndex::zero(3);
        assert!(table.get(&nu, 1.0, 0.0).is_some());
        assert_eq!(table.times().len(), 1);
    }
}
