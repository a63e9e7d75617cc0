//! Forward propagation, the flip-map head, cost and discriminant.
//!
//! One layer maps `(U, P)` to
//! `(L^{-1}(U + dt_u f(U; alpha)), P + dt_p f(P; beta))`.

use rayon::prelude::*;

use crate::basis::BasisMatrix;
use crate::error::{PsbcError, Result};
use crate::model::{Coefficients, PsbcModel};
use crate::nonlinearity::reaction;

/// A labelled feature vector.
pub type Sample<'a> = (&'a [f64], u8);

/// States `U^[0..=n_t]` and `P^[0..=n_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u_layers: Vec<Vec<f64>>,
    pub p_layers: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_u(&self) -> &[f64] {
        self.u_layers
            .last()
            .expect("trajectory holds the input layer")
    }

    pub fn final_p(&self) -> &[f64] {
        self.p_layers
            .last()
            .expect("trajectory holds the input layer")
    }
}

pub(crate) fn check_input(x: &[f64], n_u: usize) -> Result<()> {
    if x.len() != n_u {
        return Err(PsbcError::dim("input features", n_u, x.len()));
    }
    if let Some((i, v)) = x
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(PsbcError::Domain(format!(
            "input coordinate {i} is {v}, outside [0, 1]"
        )));
    }
    Ok(())
}

/// Runs all layers from `x`. Inputs must lie in `[0, 1]^n_u`.
pub fn forward(model: &PsbcModel, x: &[f64]) -> Result<Trajectory> {
    check_input(x, model.hp().n_u)?;
    forward_with(model, &model.coefficients(), x)
}

/// Forward pass with precomputed coefficients; skips the input domain check.
pub(crate) fn forward_with(
    model: &PsbcModel,
    coef: &Coefficients,
    x: &[f64],
) -> Result<Trajectory> {
    let hp = model.hp();
    let mut u_layers = Vec::with_capacity(hp.n_t + 1);
    let mut p_layers = Vec::with_capacity(hp.n_t + 1);
    u_layers.push(x.to_vec());
    p_layers.push(vec![0.5; hp.n_p()]);
    for n in 0..hp.n_t {
        let g = hp.group_of(n);
        let alpha = &coef.alpha[g];
        let beta = &coef.beta[g];
        let u = &u_layers[n];
        let mut next: Vec<f64> = u
            .iter()
            .zip(alpha)
            .map(|(&ui, &ai)| ui + hp.dt_u * reaction(ui, ai))
            .collect();
        model.diffusion().solve_in_place(&mut next);
        let p = &p_layers[n];
        let next_p: Vec<f64> = p
            .iter()
            .zip(beta)
            .map(|(&pi, &bi)| pi + hp.dt_p * reaction(pi, bi))
            .collect();
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(PsbcError::Propagation {
                layer: n + 1,
                index: i,
            });
        }
        if let Some(i) = next_p.iter().position(|v| !v.is_finite()) {
            return Err(PsbcError::Propagation {
                layer: n + 1,
                index: hp.n_u + i,
            });
        }
        u_layers.push(next);
        p_layers.push(next_p);
    }
    Ok(Trajectory { u_layers, p_layers })
}

/// Lifts the phase to feature space: `B_sub * p`.
pub fn phase_lift(p: &[f64], basis_sub: &BasisMatrix) -> Result<Vec<f64>> {
    basis_sub.apply(p)
}

/// Homotopy between identity and flip: `(1 - p) u + p (1 - u)`.
pub fn flip_map(u: &[f64], p_tilde: &[f64]) -> Result<Vec<f64>> {
    if u.len() != p_tilde.len() {
        return Err(PsbcError::dim("flip map", u.len(), p_tilde.len()));
    }
    Ok(u.iter()
        .zip(p_tilde)
        .map(|(&ui, &pi)| (1.0 - pi) * ui + pi * (1.0 - ui))
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean of the flipped final state, the scalar score of one trajectory.
pub fn score(model: &PsbcModel, traj: &Trajectory) -> Result<f64> {
    let p_tilde = phase_lift(traj.final_p(), model.basis_sub())?;
    Ok(mean(&flip_map(traj.final_u(), &p_tilde)?))
}

/// Label 1 when the score is at least as close to 1 as to 0.
pub fn discriminant(score: f64) -> u8 {
    u8::from((score - 1.0).abs() <= score.abs())
}

pub fn predict(model: &PsbcModel, x: &[f64]) -> Result<u8> {
    let traj = forward(model, x)?;
    Ok(discriminant(score(model, &traj)?))
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        return Err(PsbcError::Domain(format!("binary label expected, got {y}")));
    }
    Ok(())
}

/// Scores for a batch, evaluated in parallel and returned in input order.
pub fn scores(model: &PsbcModel, xs: &[&[f64]]) -> Result<Vec<f64>> {
    let coef = model.coefficients();
    xs.par_iter()
        .map(|x| {
            check_input(x, model.hp().n_u)?;
            let traj = forward_with(model, &coef, x)?;
            score(model, &traj)
        })
        .collect()
}

/// `1 / (2 N_d) * sum_i (score_i - y_i)^2`, summed in batch order.
pub fn cost(model: &PsbcModel, batch: &[Sample<'_>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(PsbcError::Domain("cost of an empty batch".into()));
    }
    for &(_, y) in batch {
        check_label(y)?;
    }
    let xs: Vec<&[f64]> = batch.iter().map(|s| s.0).collect();
    let s = scores(model, &xs)?;
    let total: f64 = s
        .iter()
        .zip(batch)
        .map(|(si, &(_, y))| (si - f64::from(y)).powi(2))
        .sum();
    Ok(total / (2.0 * batch.len() as f64))
}

/// Fraction of samples whose discriminant matches the label.
pub fn accuracy(model: &PsbcModel, batch: &[Sample<'_>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(PsbcError::Domain("accuracy of an empty batch".into()));
    }
    let xs: Vec<&[f64]> = batch.iter().map(|s| s.0).collect();
    let s = scores(model, &xs)?;
    let hits = s
        .iter()
        .zip(batch)
        .filter(|(si, &(_, y))| discriminant(**si) == y)
        .count();
    Ok(hits as f64 / batch.len() as f64)
}
