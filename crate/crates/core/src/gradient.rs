//! Reverse-mode gradient of the cost with respect to the stored weight groups.
//!
//! Time steps are constants here; the step-size control runs between batches.

use rayon::prelude::*;

use crate::error::{PsbcError, Result};
use crate::model::{Coefficients, PsbcModel};
use crate::nonlinearity::{reaction_du, reaction_dw};
use crate::propagation::{self, check_input, forward_with, Sample, Trajectory};

/// Gradient with the same shape as [`crate::WeightStack`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStack {
    pub g_w_u: Vec<Vec<f64>>,
    pub g_w_p: Vec<Vec<f64>>,
}

impl GradientStack {
    pub fn to_flat(&self) -> Vec<f64> {
        self.g_w_u
            .iter()
            .chain(&self.g_w_p)
            .flatten()
            .copied()
            .collect()
    }
}

/// Gradient accumulated in feature space, before the pullback through `B_u`.
struct FeatureGradient {
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

impl FeatureGradient {
    fn zeros(model: &PsbcModel) -> Self {
        let hp = model.hp();
        FeatureGradient {
            alpha: vec![vec![0.0; hp.n_u]; hp.n_groups()],
            beta: vec![vec![0.0; hp.n_p()]; hp.n_groups()],
        }
    }

    fn add(&mut self, other: &FeatureGradient) {
        for (a, b) in self
            .alpha
            .iter_mut()
            .chain(self.beta.iter_mut())
            .zip(other.alpha.iter().chain(&other.beta))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    fn into_stack(self, model: &PsbcModel, scale: f64) -> GradientStack {
        let g_w_u = self
            .alpha
            .iter()
            .map(|g| {
                let mut out = vec![0.0; model.hp().n_pt];
                model.basis_u().pullback_add(g, &mut out);
                out.iter_mut().for_each(|v| *v *= scale);
                out
            })
            .collect();
        let g_w_p = self
            .beta
            .into_iter()
            .map(|mut g| {
                g.iter_mut().for_each(|v| *v *= scale);
                g
            })
            .collect();
        GradientStack { g_w_u, g_w_p }
    }
}

fn check_trajectory(model: &PsbcModel, traj: &Trajectory) -> Result<()> {
    let hp = model.hp();
    if traj.u_layers.len() != hp.n_t + 1 {
        return Err(PsbcError::dim(
            "trajectory u layers",
            hp.n_t + 1,
            traj.u_layers.len(),
        ));
    }
    if traj.p_layers.len() != hp.n_t + 1 {
        return Err(PsbcError::dim(
            "trajectory p layers",
            hp.n_t + 1,
            traj.p_layers.len(),
        ));
    }
    if let Some(u) = traj.u_layers.iter().find(|u| u.len() != hp.n_u) {
        return Err(PsbcError::dim("trajectory u width", hp.n_u, u.len()));
    }
    if let Some(p) = traj.p_layers.iter().find(|p| p.len() != hp.n_p()) {
        return Err(PsbcError::dim("trajectory p width", hp.n_p(), p.len()));
    }
    Ok(())
}

/// Adjoints of the final `U` and `P` for the per-sample loss `(score - y)^2 / 2`.
pub fn head_seed(model: &PsbcModel, traj: &Trajectory, y: u8) -> Result<(Vec<f64>, Vec<f64>)> {
    check_trajectory(model, traj)?;
    let n_u = model.hp().n_u as f64;
    let residual = propagation::score(model, traj)? - f64::from(y);
    let u = traj.final_u();
    let p_tilde = propagation::phase_lift(traj.final_p(), model.basis_sub())?;
    let seed_u = p_tilde
        .iter()
        .map(|pt| residual * (1.0 - 2.0 * pt) / n_u)
        .collect();
    let d_ptilde: Vec<f64> = u
        .iter()
        .map(|ui| residual * (1.0 - 2.0 * ui) / n_u)
        .collect();
    let seed_p = model.basis_sub().pullback(&d_ptilde)?;
    Ok((seed_u, seed_p))
}

fn backprop(
    model: &PsbcModel,
    coef: &Coefficients,
    traj: &Trajectory,
    seed_u: &[f64],
    seed_p: &[f64],
) -> FeatureGradient {
    let hp = model.hp();
    let mut acc = FeatureGradient::zeros(model);
    let mut lam_u = seed_u.to_vec();
    let mut lam_p = seed_p.to_vec();
    for n in (0..hp.n_t).rev() {
        let g = hp.group_of(n);
        // lam_u becomes L^{-T} lam_u, then the adjoint of U^[n]
        model.diffusion().solve_transpose_in_place(&mut lam_u);
        let u = &traj.u_layers[n];
        let alpha = &coef.alpha[g];
        for m in 0..hp.n_u {
            acc.alpha[g][m] += hp.dt_u * reaction_dw(u[m], alpha[m]) * lam_u[m];
            lam_u[m] *= 1.0 + hp.dt_u * reaction_du(u[m], alpha[m]);
        }
        let p = &traj.p_layers[n];
        let beta = &coef.beta[g];
        for q in 0..hp.n_p() {
            acc.beta[g][q] += hp.dt_p * reaction_dw(p[q], beta[q]) * lam_p[q];
            lam_p[q] *= 1.0 + hp.dt_p * reaction_du(p[q], beta[q]);
        }
    }
    acc
}

/// Gradient of the loss of one sample, `(score - y)^2 / 2`.
pub fn backward(model: &PsbcModel, traj: &Trajectory, y: u8) -> Result<GradientStack> {
    let (seed_u, seed_p) = head_seed(model, traj, y)?;
    backward_with_seed(model, traj, &seed_u, &seed_p)
}

/// Propagates given adjoints of the final state back to the weight groups.
pub fn backward_with_seed(
    model: &PsbcModel,
    traj: &Trajectory,
    seed_u: &[f64],
    seed_p: &[f64],
) -> Result<GradientStack> {
    check_trajectory(model, traj)?;
    if seed_u.len() != model.hp().n_u {
        return Err(PsbcError::dim("u seed", model.hp().n_u, seed_u.len()));
    }
    if seed_p.len() != model.hp().n_p() {
        return Err(PsbcError::dim("p seed", model.hp().n_p(), seed_p.len()));
    }
    let coef = model.coefficients();
    Ok(backprop(model, &coef, traj, seed_u, seed_p).into_stack(model, 1.0))
}

/// Gradient of the batch cost `1 / (2 N_d) sum (score - y)^2`, plus that cost.
pub fn batch_gradient_and_cost(
    model: &PsbcModel,
    batch: &[Sample<'_>],
) -> Result<(GradientStack, f64)> {
    if batch.is_empty() {
        return Err(PsbcError::Domain("gradient of an empty batch".into()));
    }
    let coef = model.coefficients();
    let per_sample: Vec<(FeatureGradient, f64)> = batch
        .par_iter()
        .map(|&(x, y)| {
            if y > 1 {
                return Err(PsbcError::Domain(format!("binary label expected, got {y}")));
            }
            check_input(x, model.hp().n_u)?;
            let traj = forward_with(model, &coef, x)?;
            let (seed_u, seed_p) = head_seed(model, &traj, y)?;
            let residual = propagation::score(model, &traj)? - f64::from(y);
            Ok((
                backprop(model, &coef, &traj, &seed_u, &seed_p),
                residual * residual,
            ))
        })
        .collect::<Result<_>>()?;
    let mut acc = FeatureGradient::zeros(model);
    let mut total = 0.0;
    for (g, sq) in &per_sample {
        acc.add(g);
        total += sq;
    }
    let n = batch.len() as f64;
    Ok((acc.into_stack(model, 1.0 / n), total / (2.0 * n)))
}

pub fn batch_gradient(model: &PsbcModel, batch: &[Sample<'_>]) -> Result<GradientStack> {
    batch_gradient_and_cost(model, batch).map(|(g, _)| g)
}

/// Central differences of [`propagation::cost`] in every stored weight.
pub fn finite_difference_gradient(
    model: &PsbcModel,
    batch: &[Sample<'_>],
    h: f64,
) -> Result<GradientStack> {
    if h.is_nan() || h <= 0.0 {
        return Err(PsbcError::Domain(format!("step must be positive, got {h}")));
    }
    let base = model.weights().clone();
    let flat = base.to_flat();
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut w = flat.clone();
        w[i] = flat[i] + h;
        probe.set_weights(base.with_flat(&w))?;
        let plus = propagation::cost(&probe, batch)?;
        w[i] = flat[i] - h;
        probe.set_weights(base.with_flat(&w))?;
        let minus = propagation::cost(&probe, batch)?;
        grad.push((plus - minus) / (2.0 * h));
    }
    let shaped = base.with_flat(&grad);
    Ok(GradientStack {
        g_w_u: shaped.w_u,
        g_w_p: shaped.w_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::reaction;
    use crate::params::{BoundaryCondition, Hyperparameters, Subordination, WeightStack};
    use crate::propagation::forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff = a
            .iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        diff / scale
    }

    #[allow(clippy::too_many_arguments)]
    fn random_model(
        rng: &mut ChaCha8Rng,
        n_u: usize,
        n_pt: usize,
        n_t: usize,
        k: usize,
        eps: f64,
        bc: BoundaryCondition,
        sub: Subordination,
    ) -> PsbcModel {
        let hp = Hyperparameters::new(n_t, n_u, n_pt, eps, 0.2, k, bc, sub).unwrap();
        let mut w = WeightStack::zeros(&hp);
        for v in w.w_u.iter_mut().chain(w.w_p.iter_mut()).flatten() {
            *v = rng.random_range(-0.5..1.5);
        }
        PsbcModel::canonical(hp, w).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        let (x, a, b, dt, y) = (0.35, 0.6, 0.2, 0.3, 1u8);
        let hp = Hyperparameters::new(
            1,
            1,
            1,
            0.0,
            dt,
            1,
            BoundaryCondition::Neumann,
            Subordination::NonSubordinate,
        )
        .unwrap();
        let m = PsbcModel::canonical(
            hp,
            WeightStack {
                w_u: vec![vec![a]],
                w_p: vec![vec![b]],
            },
        )
        .unwrap();
        let u1 = x + dt * reaction(x, a);
        let p1 = 0.5 + dt * reaction(0.5, b);
        let s = u1 + p1 - 2.0 * p1 * u1;
        let r = s - f64::from(y);
        let d_a = r * (1.0 - 2.0 * p1) * dt * (-x * (1.0 - x));
        let d_b = r * (1.0 - 2.0 * u1) * dt * (-0.25);
        let g = backward(&m, &forward(&m, &[x]).unwrap(), y).unwrap();
        assert!((g.g_w_u[0][0] - d_a).abs() < 1e-15);
        assert!((g.g_w_p[0][0] - d_b).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let hp = Hyperparameters::new(
            2,
            3,
            3,
            0.5,
            0.1,
            1,
            BoundaryCondition::Neumann,
            Subordination::NonSubordinate,
        )
        .unwrap();
        // final U = 1 and P = 0 give a score of exactly 1
        let m = PsbcModel::canonical(hp.clone(), WeightStack::zeros(&hp)).unwrap();
        let traj = Trajectory {
            u_layers: vec![vec![1.0; 3]; 3],
            p_layers: vec![vec![0.5], vec![0.2], vec![0.0]],
        };
        let g = backward(&m, &traj, 1).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for bc in [BoundaryCondition::Neumann, BoundaryCondition::Periodic] {
            for sub in [Subordination::Subordinate, Subordination::NonSubordinate] {
                for k in [1, 3] {
                    let m = random_model(&mut rng, 8, 4, 3, k, 0.25, bc, sub);
                    let xs: Vec<Vec<f64>> = (0..5)
                        .map(|_| (0..8).map(|_| rng.random_range(0.0..1.0)).collect())
                        .collect();
                    let batch: Vec<Sample<'_>> = xs
                        .iter()
                        .enumerate()
                        .map(|(i, x)| (x.as_slice(), (i % 2) as u8))
                        .collect();
                    let g = batch_gradient(&m, &batch).unwrap().to_flat();
                    let fd = finite_difference_gradient(&m, &batch, 1e-6)
                        .unwrap()
                        .to_flat();
                    assert!(rel_err(&g, &fd) <= 1e-5, "{bc:?} {sub:?} k={k}");
                }
            }
        }
    }

    #[test]
    fn batch_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(
            &mut rng,
            6,
            3,
            2,
            1,
            0.5,
            BoundaryCondition::Neumann,
            Subordination::Subordinate,
        );
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let single = backward(&m, &forward(&m, &x).unwrap(), 1).unwrap();
        assert_eq!(batch_gradient(&m, &[(&x, 1)]).unwrap(), single);
        assert_eq!(batch_gradient(&m, &[(&x, 1), (&x, 1)]).unwrap(), single);
        assert!(batch_gradient(&m, &[]).is_err());
    }

    #[test]
    fn shared_equals_sum_of_unshared() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n_t = 4;
        let shared = random_model(
            &mut rng,
            8,
            4,
            n_t,
            n_t,
            0.25,
            BoundaryCondition::Periodic,
            Subordination::Subordinate,
        );
        let mut hp = shared.hp().clone();
        hp.shared_k = 1;
        let replicated = WeightStack {
            w_u: vec![shared.weights().w_u[0].clone(); n_t],
            w_p: vec![shared.weights().w_p[0].clone(); n_t],
        };
        let unshared = PsbcModel::canonical(hp, replicated).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let gs = backward(&shared, &forward(&shared, &x).unwrap(), 0).unwrap();
        let gu = backward(&unshared, &forward(&unshared, &x).unwrap(), 0).unwrap();
        for q in 0..4 {
            let sum: f64 = gu.g_w_u.iter().map(|g| g[q]).sum();
            assert!((gs.g_w_u[0][q] - sum).abs() <= 1e-14);
            let sum_p: f64 = gu.g_w_p.iter().map(|g| g[q]).sum();
            assert!((gs.g_w_p[0][q] - sum_p).abs() <= 1e-14);
        }
    }

    #[test]
    fn inviscid_blocks_decouple() {
        // the gradient of block j only sees the features in block j
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(
            &mut rng,
            8,
            4,
            2,
            1,
            0.0,
            BoundaryCondition::Neumann,
            Subordination::Subordinate,
        );
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut x2 = x.clone();
        x2[0] = 1.0 - x2[0];
        x2[1] *= 0.5;
        // residual couples blocks, so compare with a fixed seed
        let seed_u = vec![0.01; 8];
        let seed_p = vec![0.02; 4];
        let g1 = backward_with_seed(&m, &forward(&m, &x).unwrap(), &seed_u, &seed_p).unwrap();
        let g2 = backward_with_seed(&m, &forward(&m, &x2).unwrap(), &seed_u, &seed_p).unwrap();
        for l in 0..2 {
            assert_ne!(g1.g_w_u[l][0], g2.g_w_u[l][0]);
            assert_eq!(g1.g_w_u[l][1..], g2.g_w_u[l][1..]);
            assert_eq!(g1.g_w_p[l], g2.g_w_p[l]);
        }
    }

    #[test]
    fn finite_difference_is_exact_on_quadratics() {
        // one layer: the score is affine in alpha, the cost quadratic
        let hp = Hyperparameters::new(
            1,
            2,
            1,
            0.0,
            0.1,
            1,
            BoundaryCondition::Neumann,
            Subordination::NonSubordinate,
        )
        .unwrap();
        let m = PsbcModel::canonical(
            hp,
            WeightStack {
                w_u: vec![vec![0.3]],
                w_p: vec![vec![0.9]],
            },
        )
        .unwrap();
        let x = [0.2, 0.7];
        let batch = [(&x[..], 1u8)];
        let exact = batch_gradient(&m, &batch).unwrap();
        let fd = finite_difference_gradient(&m, &batch, 1e-3).unwrap();
        assert!((exact.g_w_u[0][0] - fd.g_w_u[0][0]).abs() < 1e-12);
        assert!(finite_difference_gradient(&m, &batch, 0.0).is_err());
    }
}
