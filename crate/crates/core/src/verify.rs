//! Randomized property suites, runnable outside the test harness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::BasisMatrix;
use crate::diffusion::DiffusionOperator;
use crate::error::Result;
use crate::gradient::{backward_with_seed, batch_gradient, finite_difference_gradient};
use crate::invariant::{check_invariant, irec_dt, InvariantBox};
use crate::model::PsbcModel;
use crate::params::{BoundaryCondition, Hyperparameters, Subordination, WeightStack};
use crate::propagation::{discriminant, forward, Sample};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed error measure (suite specific).
    pub worst: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

struct Tally {
    cases: usize,
    failures: usize,
    worst: f64,
}

impl Tally {
    fn new() -> Self {
        Tally {
            cases: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, ok: bool, err: f64) {
        self.cases += 1;
        self.failures += usize::from(!ok);
        self.worst = self.worst.max(err);
    }

    fn finish(self, name: &'static str) -> SuiteReport {
        SuiteReport {
            name,
            cases: self.cases,
            failures: self.failures,
            worst: self.worst,
        }
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn bc_of(rng: &mut ChaCha8Rng) -> BoundaryCondition {
    pick(
        rng,
        &[BoundaryCondition::Neumann, BoundaryCondition::Periodic],
    )
}

/// Gaussian elimination with partial pivoting on a dense row-major system.
fn dense_solve(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Vec<f64> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row * n + row];
    }
    x
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Implicit solves against dense elimination.
pub fn solver_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let bc = bc_of(&mut rng);
        let n = rng.random_range(3..=128);
        let eps = rng.random_range(0.0..4.0);
        let op = DiffusionOperator::build(n, bc, eps)?;
        let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = op.solve_l(&rhs)?;
        let e = rel_err(&x, &dense_solve(n, op.dense_l(), rhs));
        t.record(e <= 1e-10, e);
    }
    Ok(t.finish("solver"))
}

/// Norm, positivity and extremum-sign properties of the diffusion operator.
pub fn maximum_principle_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let bc = bc_of(&mut rng);
        let n = rng.random_range(3..=64);
        let eps = pick(&mut rng, &[0.0, 0.0625, 0.25, 1.0, 4.0]);
        let op = DiffusionOperator::build(n, bc, eps)?;
        let norm = op.inverse_norm_inf();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let positive = op.solve_l(&v)?.iter().all(|&x| x >= 0.0);
        let constant_kernel = op.apply_d(&vec![1.0; n])?.iter().all(|&x| x == 0.0);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dw = op.apply_d(&w)?;
        let (lo, hi) = extrema(&w);
        let signs = dw[lo] >= 0.0 && dw[hi] <= 0.0;
        t.record(
            norm <= 1.0 + 1e-12 && positive && constant_kernel && signs,
            (norm - 1.0).max(0.0),
        );
    }
    Ok(t.finish("maximum-principle"))
}

fn extrema(v: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[lo] {
            lo = i;
        }
        if x > v[hi] {
            hi = i;
        }
    }
    (lo, hi)
}

/// Shape of a random model drawn by [`random_model`].
#[derive(Debug, Clone, Copy)]
pub struct ModelShape {
    pub n_u: usize,
    pub n_pt: usize,
    pub n_t: usize,
    pub shared_k: usize,
    pub eps: f64,
    pub bc: BoundaryCondition,
    pub subordination: Subordination,
}

/// Model with weights uniform on `[lo, hi)` and the given step size.
pub fn random_model(
    rng: &mut impl Rng,
    s: ModelShape,
    dt: f64,
    lo: f64,
    hi: f64,
) -> Result<PsbcModel> {
    let hp = Hyperparameters::new(
        s.n_t,
        s.n_u,
        s.n_pt,
        s.eps,
        dt,
        s.shared_k,
        s.bc,
        s.subordination,
    )?;
    let mut w = WeightStack::zeros(&hp);
    for v in w.w_u.iter_mut().chain(w.w_p.iter_mut()).flatten() {
        *v = rng.random_range(lo..hi);
    }
    PsbcModel::canonical(hp, w)
}

fn random_shape(rng: &mut ChaCha8Rng) -> ModelShape {
    let n_u = pick(rng, &[4, 8, 16]);
    let n_t = pick(rng, &[1, 2, 4]);
    ModelShape {
        n_u,
        n_pt: pick(rng, &[1, n_u / 2, n_u]),
        n_t,
        shared_k: pick(rng, &[1, n_t]),
        eps: pick(rng, &[0.0, 0.25]),
        bc: bc_of(rng),
        subordination: pick(
            rng,
            &[Subordination::Subordinate, Subordination::NonSubordinate],
        ),
    }
}

fn unit_vectors(rng: &mut ChaCha8Rng, count: usize, n: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect()
}

/// Reverse-mode gradients against central differences.
pub fn gradient_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let shape = random_shape(&mut rng);
        let model = random_model(&mut rng, shape, 0.2, -0.5, 1.5)?;
        let xs = unit_vectors(&mut rng, 4, shape.n_u);
        let batch: Vec<Sample<'_>> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.as_slice(), (i % 2) as u8))
            .collect();
        let g = batch_gradient(&model, &batch)?.to_flat();
        let fd = finite_difference_gradient(&model, &batch, 1e-6)?.to_flat();
        let e = rel_err(&g, &fd);
        t.record(e <= 1e-5, e);
    }
    Ok(t.finish("gradient"))
}

/// Forward passes with IREC step sizes stay in the invariant box.
pub fn invariant_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let mut shape = random_shape(&mut rng);
        shape.eps = rng.random_range(0.0..2.0);
        shape.n_t = rng.random_range(1..=20);
        shape.shared_k = 1;
        let spread = rng.random_range(0.0..4.0);
        let mut model = random_model(&mut rng, shape, 1.0, 0.5 - spread, 0.5 + spread)?;
        let coef = model.coefficients();
        let (dt_u, dt_p) = irec_dt(&coef.alpha, &coef.beta, 1.0, 1.0);
        model.set_dt(dt_u, dt_p)?;
        let x: Vec<f64> = (0..shape.n_u).map(|_| rng.random_range(0.0..1.0)).collect();
        let ok = check_invariant(
            &forward(&model, &x)?,
            &InvariantBox::from_coefficients(&coef.alpha, &coef.beta),
            dt_u,
            dt_p,
        );
        t.record(ok, 0.0);
    }
    Ok(t.finish("invariant"))
}

/// `-z^4 + z^3 + 2z - 1 >= 0` on `[1, 1 + 1/sqrt(3)]`.
pub fn polynomial_suite(seed: u64, cases: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    let hi = 1.0 + 1.0 / 3f64.sqrt();
    for _ in 0..cases {
        let z: f64 = rng.random_range(1.0..=hi);
        let p = -z.powi(4) + z.powi(3) + 2.0 * z - 1.0;
        t.record(p >= -1e-12, (-p).max(0.0));
    }
    t.finish("polynomial")
}

/// One-feature trajectories keep their initial order for `dt < 1/10`.
pub fn monotonicity_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let n_t = rng.random_range(1..=50);
        let hp = Hyperparameters::new(
            n_t,
            1,
            1,
            0.0,
            0.099,
            1,
            BoundaryCondition::Neumann,
            Subordination::NonSubordinate,
        )?;
        let mut w = WeightStack::zeros(&hp);
        for a in w.w_u.iter_mut().flatten() {
            *a = rng.random_range(0.0..=1.0);
        }
        let model = PsbcModel::canonical(hp, w)?;
        let a: f64 = rng.random_range(0.0..=1.0);
        let b: f64 = rng.random_range(0.0..=1.0);
        let (lo, hi) = (a.min(b), a.max(b));
        let tl = forward(&model, &[lo])?;
        let th = forward(&model, &[hi])?;
        let ok = tl
            .u_layers
            .iter()
            .zip(&th.u_layers)
            .all(|(l, h)| l[0] <= h[0]);
        t.record(ok, 0.0);
    }
    Ok(t.finish("monotonicity"))
}

/// Nearest-constant-vector and mean forms of the discriminant agree.
pub fn discriminant_suite(seed: u64, cases: usize) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let n = rng.random_range(1..=32);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
        let to_one: f64 = s.iter().map(|v| (v - 1.0).powi(2)).sum();
        let to_zero: f64 = s.iter().map(|v| v * v).sum();
        let l2 = u8::from(to_one <= to_zero);
        let mean = s.iter().sum::<f64>() / n as f64;
        // both forms reduce to comparing the mean with 1/2; skip exact ties
        // where the two roundings may land on opposite sides
        if (mean - 0.5).abs() < 1e-12 {
            continue;
        }
        t.record(l2 == discriminant(mean), 0.0);
    }
    t.finish("discriminant")
}

/// Inviscid canonical models split into independent per-block models.
pub fn parallel_suite(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::new();
    for _ in 0..cases {
        let n_u = rng.random_range(2..=24);
        let n_pt = rng.random_range(1..=n_u);
        let n_t = rng.random_range(1..=5);
        let shape = ModelShape {
            n_u,
            n_pt,
            n_t,
            shared_k: pick(&mut rng, &[1, n_t]),
            eps: 0.0,
            bc: BoundaryCondition::Neumann,
            subordination: Subordination::Subordinate,
        };
        let model = random_model(&mut rng, shape, 0.1, -0.5, 1.5)?;
        let x: Vec<f64> = (0..n_u).map(|_| rng.random_range(0.0..1.0)).collect();
        let seed_u: Vec<f64> = (0..n_u).map(|_| rng.random_range(-1.0..1.0)).collect();
        let seed_p: Vec<f64> = (0..n_pt).map(|_| rng.random_range(-1.0..1.0)).collect();
        let whole = forward(&model, &x)?;
        let g = backward_with_seed(&model, &whole, &seed_u, &seed_p)?;
        let mut ok = true;
        for j in 0..n_pt {
            let rows = model.basis_u().block_rows(j).expect("canonical basis");
            let part = block_model(&model, j, rows.len())?;
            let xj: Vec<f64> = rows.iter().map(|&r| x[r]).collect();
            let tj = forward(&part, &xj)?;
            for (wl, pl) in whole.u_layers.iter().zip(&tj.u_layers) {
                ok &= rows
                    .iter()
                    .zip(pl)
                    .all(|(&r, v)| wl[r].to_bits() == v.to_bits());
            }
            for (wl, pl) in whole.p_layers.iter().zip(&tj.p_layers) {
                ok &= wl[j].to_bits() == pl[0].to_bits();
            }
            let su: Vec<f64> = rows.iter().map(|&r| seed_u[r]).collect();
            let gj = backward_with_seed(&part, &tj, &su, &[seed_p[j]])?;
            for (gw, pw) in g.g_w_u.iter().zip(&gj.g_w_u) {
                ok &= gw[j].to_bits() == pw[0].to_bits();
            }
            for (gw, pw) in g.g_w_p.iter().zip(&gj.g_w_p) {
                ok &= gw[j].to_bits() == pw[0].to_bits();
            }
        }
        t.record(ok, 0.0);
    }
    Ok(t.finish("parallel"))
}

/// The single-column model that evolves block `j` of `model`.
fn block_model(model: &PsbcModel, j: usize, rows: usize) -> Result<PsbcModel> {
    let src = model.hp();
    let mut hp = src.clone();
    hp.n_u = rows;
    hp.n_pt = 1;
    let w = WeightStack {
        w_u: model.weights().w_u.iter().map(|g| vec![g[j]]).collect(),
        w_p: model.weights().w_p.iter().map(|g| vec![g[j]]).collect(),
    };
    PsbcModel::new(hp, BasisMatrix::canonical(rows, 1)?, w)
}

/// Every suite, with case counts multiplied by `scale`.
pub fn run_all(seed: u64, scale: usize) -> Result<Vec<SuiteReport>> {
    let s = scale.max(1);
    Ok(vec![
        solver_suite(seed, 50 * s)?,
        maximum_principle_suite(seed, 50 * s)?,
        gradient_suite(seed, 20 * s)?,
        invariant_suite(seed, 100 * s)?,
        polynomial_suite(seed, 10_000 * s),
        monotonicity_suite(seed, 1_000 * s)?,
        discriminant_suite(seed, 1_000 * s),
        parallel_suite(seed, 20 * s)?,
    ])
}
