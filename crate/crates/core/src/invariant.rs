//! Invariant boxes for forward propagation and the step-size control that
//! keeps trajectories inside them.
//!
//! For coefficients with `l = min(0, all alpha)` and `r = max(1, all alpha)`,
//! `dt_u <= 1 / (sqrt(3) (r - l)^2)` keeps every feature inside
//! `[l - dt_u m, r + dt_u m]` with `m = (|l| + |r|)^3`, whatever the
//! diffusion strength or boundary condition. Same for the phase with beta.

use crate::basis::BasisMatrix;
use crate::propagation::Trajectory;

/// Absolute slack when testing box membership.
pub const INVARIANT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantBox {
    pub l_alpha: f64,
    pub r_alpha: f64,
    pub m_alpha: f64,
    pub l_beta: f64,
    pub r_beta: f64,
    pub m_beta: f64,
}

/// Smallest interval containing `{0, 1}` and every value.
pub fn hull<'a>(values: impl IntoIterator<Item = &'a f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((0.0, 1.0), |(l, r), &v| (l.min(v), r.max(v)))
}

pub fn diameter<'a>(values: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (l, r) = hull(values);
    r - l
}

impl InvariantBox {
    pub fn from_coefficients(alpha: &[Vec<f64>], beta: &[Vec<f64>]) -> Self {
        let (l_alpha, r_alpha) = hull(alpha.iter().flatten());
        let (l_beta, r_beta) = hull(beta.iter().flatten());
        InvariantBox {
            l_alpha,
            r_alpha,
            m_alpha: (l_alpha.abs() + r_alpha.abs()).powi(3),
            l_beta,
            r_beta,
            m_beta: (l_beta.abs() + r_beta.abs()).powi(3),
        }
    }

    pub fn u_bounds(&self, dt_u: f64) -> (f64, f64) {
        (
            self.l_alpha - dt_u * self.m_alpha - INVARIANT_TOL,
            self.r_alpha + dt_u * self.m_alpha + INVARIANT_TOL,
        )
    }

    pub fn p_bounds(&self, dt_p: f64) -> (f64, f64) {
        (
            self.l_beta - dt_p * self.m_beta - INVARIANT_TOL,
            self.r_beta + dt_p * self.m_beta + INVARIANT_TOL,
        )
    }
}

/// True iff every recorded state lies in the box.
pub fn check_invariant(traj: &Trajectory, bx: &InvariantBox, dt_u: f64, dt_p: f64) -> bool {
    let (ul, ur) = bx.u_bounds(dt_u);
    let (pl, pr) = bx.p_bounds(dt_p);
    traj.u_layers.iter().flatten().all(|&v| v >= ul && v <= ur)
        && traj.p_layers.iter().flatten().all(|&v| v >= pl && v <= pr)
}

/// `min(dt_star, 1 / (sqrt(3) diam^2))`.
pub fn irec_step(diam: f64, dt_star: f64) -> f64 {
    dt_star.min(1.0 / (3f64.sqrt() * diam * diam))
}

/// Step sizes for both equations from the current coefficients.
pub fn irec_dt(
    alpha: &[Vec<f64>],
    beta: &[Vec<f64>],
    dt_star_u: f64,
    dt_star_p: f64,
) -> (f64, f64) {
    (
        irec_step(diameter(alpha.iter().flatten()), dt_star_u),
        irec_step(diameter(beta.iter().flatten()), dt_star_p),
    )
}

/// Diameter of `conv({0, 1} U all entries of B w)` over the given weight groups.
///
/// For block-structured bases the entries of `B w` are exactly the entries of
/// `w`, so the product is skipped.
pub fn alpha_diameter(basis: &BasisMatrix, groups: &[Vec<f64>]) -> f64 {
    if basis.block_of(0).is_some() {
        return diameter(groups.iter().flatten());
    }
    let mut alpha = vec![0.0; basis.n_rows()];
    let (mut l, mut r) = (0.0f64, 1.0f64);
    for w in groups {
        basis.apply_into(w, &mut alpha);
        let (gl, gr) = hull(&alpha);
        l = l.min(gl);
        r = r.max(gr);
    }
    r - l
}
