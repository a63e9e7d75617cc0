//! The classifier instance: hyperparameters, bases, weights and the implicit operator.

use crate::basis::BasisMatrix;
use crate::data::NormalizationMap;
use crate::diffusion::DiffusionOperator;
use crate::error::{PsbcError, Result};
use crate::params::{Hyperparameters, Subordination, WeightStack};

#[derive(Debug, Clone)]
pub struct PsbcModel {
    hp: Hyperparameters,
    basis_u: BasisMatrix,
    basis_sub: BasisMatrix,
    weights: WeightStack,
    diffusion: DiffusionOperator,
    normalization: Option<NormalizationMap>,
}

/// Per-group coefficients `alpha = B_u W_u` and `beta = W_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
}

impl PsbcModel {
    /// Model with a canonical feature basis.
    pub fn canonical(hp: Hyperparameters, weights: WeightStack) -> Result<Self> {
        let basis_u = BasisMatrix::canonical(hp.n_u, hp.n_pt)?;
        Self::new(hp, basis_u, weights)
    }

    pub fn new(hp: Hyperparameters, basis_u: BasisMatrix, weights: WeightStack) -> Result<Self> {
        hp.validate()?;
        if basis_u.n_rows() != hp.n_u {
            return Err(PsbcError::dim("basis_u rows", hp.n_u, basis_u.n_rows()));
        }
        if basis_u.n_cols() != hp.n_pt {
            return Err(PsbcError::dim("basis_u columns", hp.n_pt, basis_u.n_cols()));
        }
        weights.check(&hp)?;
        // the phase lift stays canonical whatever basis_u is
        let basis_sub = match hp.subordination {
            Subordination::Subordinate => BasisMatrix::canonical(hp.n_u, hp.n_pt)?,
            Subordination::NonSubordinate => BasisMatrix::canonical(hp.n_u, 1)?,
        };
        let diffusion = DiffusionOperator::build(hp.n_u, hp.bc, hp.eps)?;
        Ok(PsbcModel {
            hp,
            basis_u,
            basis_sub,
            weights,
            diffusion,
            normalization: None,
        })
    }

    pub fn hp(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn basis_u(&self) -> &BasisMatrix {
        &self.basis_u
    }

    pub fn basis_sub(&self) -> &BasisMatrix {
        &self.basis_sub
    }

    pub fn weights(&self) -> &WeightStack {
        &self.weights
    }

    pub fn diffusion(&self) -> &DiffusionOperator {
        &self.diffusion
    }

    pub fn normalization(&self) -> Option<&NormalizationMap> {
        self.normalization.as_ref()
    }

    pub fn set_normalization(&mut self, map: Option<NormalizationMap>) -> Result<()> {
        if let Some(m) = &map {
            if m.mu.len() != self.hp.n_u {
                return Err(PsbcError::dim(
                    "normalization mean",
                    self.hp.n_u,
                    m.mu.len(),
                ));
            }
        }
        self.normalization = map;
        Ok(())
    }

    pub fn set_weights(&mut self, weights: WeightStack) -> Result<()> {
        weights.check(&self.hp)?;
        self.weights = weights;
        Ok(())
    }

    /// Updates the time steps; each must stay in `(0, ceiling]`.
    pub fn set_dt(&mut self, dt_u: f64, dt_p: f64) -> Result<()> {
        let mut hp = self.hp.clone();
        hp.dt_u = dt_u;
        hp.dt_p = dt_p;
        hp.validate()?;
        self.hp = hp;
        Ok(())
    }

    pub fn coefficients(&self) -> Coefficients {
        let alpha = self
            .weights
            .w_u
            .iter()
            .map(|w| {
                let mut a = vec![0.0; self.hp.n_u];
                self.basis_u.apply_into(w, &mut a);
                a
            })
            .collect();
        Coefficients {
            alpha,
            beta: self.weights.w_p.clone(),
        }
    }
}
