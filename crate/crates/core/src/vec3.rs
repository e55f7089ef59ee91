//! Small fixed-size velocity vectors.
//!
//! Velocities live in dimension 2 or 3 but are stored as `[f64; 3]` with the
//! unused component kept at zero. This keeps the collision kinematics
//! branch-free over the dimension.

/// A velocity in R^n, n <= 3, embedded in the first `n` components.
pub type Velocity = [f64; 3];

#[inline]
pub fn dot(a: &Velocity, b: &Velocity) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm_sq(a: &Velocity) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &Velocity) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn sub(a: &Velocity, b: &Velocity) -> Velocity {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: &Velocity, b: &Velocity) -> Velocity {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: &Velocity, s: f64) -> Velocity {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Midpoint of two velocities (the center-of-mass velocity of a pair).
#[inline]
pub fn midpoint(a: &Velocity, b: &Velocity) -> Velocity {
    [
        0.5 * (a[0] + b[0]),
        0.5 * (a[1] + b[1]),
        0.5 * (a[2] + b[2]),
    ]
}

/// Two unit vectors orthogonal to `u_hat` and to each other.
///
/// For dimension 2 the first returned vector is the in-plane normal and the
/// second is the out-of-plane axis (unused by 2-d callers).
pub fn orthonormal_frame(u_hat: &Velocity, dimension: usize) -> (Velocity, Velocity) {
    if dimension == 2 {
        return ([-u_hat[1], u_hat[0], 0.0], [0.0, 0.0, 1.0]);
    }
    // Pick the axis least aligned with u_hat to avoid degeneracy.
    let ax = if u_hat[0].abs() <= u_hat[1].abs() && u_hat[0].abs() <= u_hat[2].abs() {
        [1.0, 0.0, 0.0]
    } else if u_hat[1].abs() <= u_hat[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let proj = dot(&ax, u_hat);
    let mut e1 = sub(&ax, &scale(u_hat, proj));
    let n1 = norm(&e1);
    e1 = scale(&e1, 1.0 / n1);
    let e2 = [
        u_hat[1] * e1[2] - u_hat[2] * e1[1],
        u_hat[2] * e1[0] - u_hat[0] * e1[2],
        u_hat[0] * e1[1] - u_hat[1] * e1[0],
    ];
    (e1, e2)
}
