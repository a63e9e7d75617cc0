//! Hyperparameters and the stored (shared) trainable weights.

use crate::error::{PsbcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Neumann,
    Periodic,
}

impl BoundaryCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryCondition::Neumann => "neumann",
            BoundaryCondition::Periodic => "periodic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neumann" => Some(BoundaryCondition::Neumann),
            "periodic" => Some(BoundaryCondition::Periodic),
            _ => None,
        }
    }
}

/// Whether the phase has one scalar component or one component per basis block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subordination {
    Subordinate,
    NonSubordinate,
}

impl Subordination {
    pub fn as_str(self) -> &'static str {
        match self {
            Subordination::Subordinate => "subordinate",
            Subordination::NonSubordinate => "non-subordinate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "subordinate" => Some(Subordination::Subordinate),
            "non-subordinate" => Some(Subordination::NonSubordinate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Number of layers (time steps).
    pub n_t: usize,
    /// Feature dimension.
    pub n_u: usize,
    /// Trainable coordinates per layer group.
    pub n_pt: usize,
    /// Diffusion strength.
    pub eps: f64,
    pub dt_u: f64,
    pub dt_p: f64,
    /// Ceilings for the step-size control; the steps start at these values.
    pub dt_star_u: f64,
    pub dt_star_p: f64,
    /// Number of consecutive layers reusing one weight group.
    pub shared_k: usize,
    pub bc: BoundaryCondition,
    pub subordination: Subordination,
}

impl Hyperparameters {
    /// Hyperparameters with both step sizes started at `dt`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_t: usize,
        n_u: usize,
        n_pt: usize,
        eps: f64,
        dt: f64,
        shared_k: usize,
        bc: BoundaryCondition,
        subordination: Subordination,
    ) -> Result<Self> {
        let hp = Hyperparameters {
            n_t,
            n_u,
            n_pt,
            eps,
            dt_u: dt,
            dt_p: dt,
            dt_star_u: dt,
            dt_star_p: dt,
            shared_k,
            bc,
            subordination,
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(PsbcError::Config(m));
        if self.n_t == 0 {
            return fail("n_t must be positive".into());
        }
        if self.n_u == 0 {
            return fail("n_u must be positive".into());
        }
        if self.n_pt == 0 || self.n_pt > self.n_u {
            return fail(format!("need 1 <= n_pt <= n_u, got n_pt={}", self.n_pt));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return fail(format!(
                "eps must be finite and non-negative, got {}",
                self.eps
            ));
        }
        for (name, dt, star) in [
            ("dt_u", self.dt_u, self.dt_star_u),
            ("dt_p", self.dt_p, self.dt_star_p),
        ] {
            if !(dt > 0.0 && dt.is_finite() && star.is_finite()) {
                return fail(format!("{name} must be positive and finite, got {dt}"));
            }
            if dt > star {
                return fail(format!("{name}={dt} exceeds its ceiling {star}"));
            }
        }
        if self.shared_k == 0 || self.shared_k > self.n_t {
            return fail(format!(
                "shared_k must lie in 1..={}, got {}",
                self.n_t, self.shared_k
            ));
        }
        if self.bc == BoundaryCondition::Periodic && self.n_u < 3 {
            return fail(format!(
                "periodic boundary condition needs n_u >= 3, got {}",
                self.n_u
            ));
        }
        Ok(())
    }

    /// Phase dimension.
    pub fn n_p(&self) -> usize {
        match self.subordination {
            Subordination::Subordinate => self.n_pt,
            Subordination::NonSubordinate => 1,
        }
    }

    /// Number of stored weight groups, `ceil(n_t / shared_k)`.
    pub fn n_groups(&self) -> usize {
        self.n_t.div_ceil(self.shared_k)
    }

    pub fn group_of(&self, layer: usize) -> usize {
        layer / self.shared_k
    }
}

/// Trainable weights, one entry per stored group.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStack {
    pub w_u: Vec<Vec<f64>>,
    pub w_p: Vec<Vec<f64>>,
}

impl WeightStack {
    pub fn zeros(hp: &Hyperparameters) -> Self {
        WeightStack {
            w_u: vec![vec![0.0; hp.n_pt]; hp.n_groups()],
            w_p: vec![vec![0.0; hp.n_p()]; hp.n_groups()],
        }
    }

    pub fn check(&self, hp: &Hyperparameters) -> Result<()> {
        let groups = hp.n_groups();
        if self.w_u.len() != groups {
            return Err(PsbcError::dim("w_u groups", groups, self.w_u.len()));
        }
        if self.w_p.len() != groups {
            return Err(PsbcError::dim("w_p groups", groups, self.w_p.len()));
        }
        for g in &self.w_u {
            if g.len() != hp.n_pt {
                return Err(PsbcError::dim("w_u group length", hp.n_pt, g.len()));
            }
        }
        for g in &self.w_p {
            if g.len() != hp.n_p() {
                return Err(PsbcError::dim("w_p group length", hp.n_p(), g.len()));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.w_u
            .iter()
            .chain(&self.w_p)
            .flatten()
            .all(|v| v.is_finite())
    }

    /// Flattened view, `w_u` groups first then `w_p` groups.
    pub fn to_flat(&self) -> Vec<f64> {
        self.w_u
            .iter()
            .chain(&self.w_p)
            .flatten()
            .copied()
            .collect()
    }

    /// Inverse of [`WeightStack::to_flat`] for a stack of this shape.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for v in out.w_u.iter_mut().chain(out.w_p.iter_mut()).flatten() {
            *v = it.next().expect("flat vector matches stack shape");
        }
        out
    }

    pub fn len(&self) -> usize {
        self.w_u.iter().chain(&self.w_p).map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-layer view of a group list: layer `n` gets group `n / shared_k`.
pub fn expand_shared<'a, T>(groups: &'a [T], hp: &Hyperparameters) -> Vec<&'a T> {
    (0..hp.n_t).map(|n| &groups[hp.group_of(n)]).collect()
}

/// Adjoint of [`expand_shared`]: sums per-layer vectors into their group slot.
pub fn contract_shared(per_layer: &[Vec<f64>], hp: &Hyperparameters) -> Vec<Vec<f64>> {
    let width = per_layer.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; width]; hp.n_groups()];
    for (n, layer) in per_layer.iter().enumerate() {
        for (o, v) in out[hp.group_of(n)].iter_mut().zip(layer) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hp(n_t: usize, k: usize) -> Hyperparameters {
        Hyperparameters::new(
            n_t,
            4,
            2,
            0.0,
            0.1,
            k,
            BoundaryCondition::Neumann,
            Subordination::Subordinate,
        )
        .unwrap()
    }

    #[test]
    fn expansion_examples() {
        let groups = vec!['a', 'b', 'c'];
        let e: Vec<char> = expand_shared(&groups, &hp(3, 1))
            .into_iter()
            .copied()
            .collect();
        assert_eq!(e, vec!['a', 'b', 'c']);
        let e: Vec<char> = expand_shared(&groups[..1], &hp(3, 3))
            .into_iter()
            .copied()
            .collect();
        assert_eq!(e, vec!['a', 'a', 'a']);
        let e: Vec<char> = expand_shared(&groups[..2], &hp(4, 2))
            .into_iter()
            .copied()
            .collect();
        assert_eq!(e, vec!['a', 'a', 'b', 'b']);
        assert_eq!(hp(5, 2).n_groups(), 3);
    }

    #[test]
    fn validation() {
        let mut h = hp(2, 1);
        h.bc = BoundaryCondition::Periodic;
        h.n_u = 2;
        h.n_pt = 1;
        assert!(h.validate().is_err());
        let mut h = hp(2, 1);
        h.dt_u = 0.2;
        assert!(h.validate().is_err());
        let mut h = hp(2, 1);
        h.shared_k = 3;
        assert!(h.validate().is_err());
        let mut h = hp(2, 1);
        h.n_pt = 5;
        assert!(h.validate().is_err());
    }

    proptest! {
        #[test]
        fn contraction_is_adjoint_of_expansion(
            n_t in 1usize..8,
            k_seed in 0usize..8,
            seed in proptest::collection::vec(-3.0f64..3.0, 64),
        ) {
            let k = 1 + k_seed % n_t;
            let h = hp(n_t, k);
            let width = 2;
            let groups: Vec<Vec<f64>> = (0..h.n_groups())
                .map(|g| seed[2 * g..2 * g + width].to_vec())
                .collect();
            let per_layer: Vec<Vec<f64>> = (0..n_t)
                .map(|n| seed[32 + 2 * n..32 + 2 * n + width].to_vec())
                .collect();
            let expanded = expand_shared(&groups, &h);
            let lhs: f64 = expanded.iter().zip(&per_layer)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            let contracted = contract_shared(&per_layer, &h);
            let rhs: f64 = groups.iter().zip(&contracted)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
