//! Minibatch SGD with step-size control, early stopping, cross-validation
//! and grid search.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::basis::BasisMatrix;
use crate::data::Dataset;
use crate::error::{PsbcError, Result};
use crate::gradient::batch_gradient_and_cost;
use crate::invariant::{alpha_diameter, check_invariant, diameter, irec_step, InvariantBox};
use crate::model::PsbcModel;
use crate::params::{Hyperparameters, WeightStack};
use crate::propagation::{self, Sample};

/// Independent seed for stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Every weight drawn i.i.d. from Normal(0.5, 0.1^2).
pub fn init_weights(hp: &Hyperparameters, seed: u64) -> WeightStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.5, 0.1).expect("valid normal parameters");
    let mut w = WeightStack::zeros(hp);
    for v in w.w_u.iter_mut().chain(w.w_p.iter_mut()).flatten() {
        *v = normal.sample(&mut rng);
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Monitor {
    #[default]
    Accuracy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_u: f64,
    pub lr_p: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub monitor: Monitor,
}

impl TrainConfig {
    pub fn new(lr_u: f64, lr_p: f64, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            lr_u,
            lr_p,
            lr_decay: 0.5,
            decay_every: 5,
            epochs,
            batch_size: 32,
            patience: 10,
            seed,
            monitor: Monitor::Accuracy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(PsbcError::Config(m.into()));
        if !(self.lr_u >= 0.0 && self.lr_u.is_finite() && self.lr_p >= 0.0 && self.lr_p.is_finite())
        {
            return fail("learning rates must be finite and non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if self.decay_every == 0 || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return fail("decay_every, epochs, batch_size and patience must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Cost on the monitored set.
    pub cost: f64,
    /// Accuracy on the monitored set.
    pub accuracy: f64,
    pub dt_u: f64,
    pub dt_p: f64,
    pub diam_alpha: f64,
    pub diam_beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub best_weights: WeightStack,
    pub best_epoch: usize,
    /// Step sizes in force when the best weights were recorded.
    pub best_dt: (f64, f64),
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,cost,accuracy,dt_u,dt_p,diam_alpha,diam_beta\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epoch, r.cost, r.accuracy, r.dt_u, r.dt_p, r.diam_alpha, r.diam_beta
        );
    }
    out
}

fn diameters(model: &PsbcModel) -> (f64, f64) {
    (
        alpha_diameter(model.basis_u(), &model.weights().w_u),
        diameter(model.weights().w_p.iter().flatten()),
    )
}

/// Resets both time steps to `min(dt_star, 1 / (sqrt(3) diam^2))`.
pub fn apply_irec(model: &mut PsbcModel) -> Result<()> {
    let (da, db) = diameters(model);
    let hp = model.hp();
    let (dt_u, dt_p) = (irec_step(da, hp.dt_star_u), irec_step(db, hp.dt_star_p));
    model.set_dt(dt_u, dt_p)
}

fn check_binary(ds: &Dataset, name: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(PsbcError::Domain(format!("{name} set is empty")));
    }
    if ds.labels().iter().any(|&y| y > 1) {
        return Err(PsbcError::Domain(format!(
            "{name} set has non-binary labels"
        )));
    }
    Ok(())
}

fn sgd_step(model: &mut PsbcModel, batch: &[Sample<'_>], lr_u: f64, lr_p: f64) -> Result<f64> {
    let (g, cost) = batch_gradient_and_cost(model, batch)?;
    let mut w = model.weights().clone();
    for (wg, gg) in w.w_u.iter_mut().zip(&g.g_w_u) {
        wg.iter_mut().zip(gg).for_each(|(a, b)| *a -= lr_u * b);
    }
    for (wg, gg) in w.w_p.iter_mut().zip(&g.g_w_p) {
        wg.iter_mut().zip(gg).for_each(|(a, b)| *a -= lr_p * b);
    }
    model.set_weights(w)?;
    Ok(cost)
}

/// Trains `model` in place and leaves it at the best weights seen.
pub fn fit(
    model: &mut PsbcModel,
    train: &Dataset,
    eval: &Dataset,
    config: &TrainConfig,
) -> Result<FitReport> {
    config.validate()?;
    check_binary(train, "training")?;
    check_binary(eval, "evaluation")?;
    for ds in [train, eval] {
        if ds.n_u() != model.hp().n_u {
            return Err(PsbcError::dim("dataset features", model.hp().n_u, ds.n_u()));
        }
    }
    let train_samples = train.samples();
    let eval_samples = eval.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (mut lr_u, mut lr_p) = (config.lr_u, config.lr_p);

    apply_irec(model)?;
    let mut best = (
        f64::NEG_INFINITY,
        0,
        model.weights().clone(),
        (model.hp().dt_u, model.hp().dt_p),
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut stale = 0;
    let mut stopped_early = false;
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_samples[i]));
            let diverged = || PsbcError::Diverged { epoch, batch: b };
            let cost = match sgd_step(model, &batch, lr_u, lr_p) {
                Ok(c) => c,
                Err(PsbcError::Propagation { .. }) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !cost.is_finite() || !model.weights().is_finite() {
                return Err(diverged());
            }
            // the step underflows to zero once weights are astronomically large
            apply_irec(model).map_err(|_| diverged())?;
            if cfg!(debug_assertions) {
                let coef = model.coefficients();
                let bx = InvariantBox::from_coefficients(&coef.alpha, &coef.beta);
                let traj = propagation::forward(model, batch[0].0)?;
                debug_assert!(check_invariant(
                    &traj,
                    &bx,
                    model.hp().dt_u,
                    model.hp().dt_p
                ));
            }
        }
        let cost = propagation::cost(model, &eval_samples).map_err(|e| match e {
            PsbcError::Propagation { .. } => PsbcError::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            },
            e => e,
        })?;
        let accuracy = propagation::accuracy(model, &eval_samples)?;
        let (diam_alpha, diam_beta) = diameters(model);
        history.push(EpochRecord {
            epoch,
            cost,
            accuracy,
            dt_u: model.hp().dt_u,
            dt_p: model.hp().dt_p,
            diam_alpha,
            diam_beta,
        });
        if accuracy > best.0 {
            best = (
                accuracy,
                epoch,
                model.weights().clone(),
                (model.hp().dt_u, model.hp().dt_p),
            );
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                stopped_early = epoch < config.epochs;
                break;
            }
        }
        if epoch % config.decay_every == 0 {
            lr_u *= config.lr_decay;
            lr_p *= config.lr_decay;
        }
    }

    let (_, best_epoch, best_weights, best_dt) = best;
    model.set_weights(best_weights.clone())?;
    model.set_dt(best_dt.0, best_dt.1)?;
    Ok(FitReport {
        best_weights,
        best_epoch,
        best_dt,
        history,
        stopped_early,
    })
}

/// Seeded shuffle cut into `k` folds whose sizes differ by at most one.
/// Returns `(train, validation)` index lists, one pair per fold.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 {
        return Err(PsbcError::Config(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(PsbcError::Config(format!(
            "{k} folds requested for {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = n / k + usize::from(f < n % k);
        let val = idx[start..start + len].to_vec();
        let train = idx[..start]
            .iter()
            .chain(&idx[start + len..])
            .copied()
            .collect();
        folds.push((train, val));
        start += len;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub lr_u: f64,
    pub lr_p: f64,
    pub dt_star_u: f64,
    pub dt_star_p: f64,
}

/// Cartesian product, learning rates varying slowest.
pub fn candidate_grid(lr_u: &[f64], lr_p: &[f64], dt_star: &[f64]) -> Vec<Candidate> {
    let mut out = Vec::new();
    for &lu in lr_u {
        for &lp in lr_p {
            for &dt in dt_star {
                out.push(Candidate {
                    lr_u: lu,
                    lr_p: lp,
                    dt_star_u: dt,
                    dt_star_p: dt,
                });
            }
        }
    }
    out
}

pub const DEFAULT_LEARNING_RATES: [f64; 4] = [0.1, 0.3, 1.0, 3.0];
pub const DEFAULT_DT_STAR: [f64; 2] = [0.1, 0.2];
pub const GRID_EPOCHS: usize = 10;
pub const FINAL_EPOCHS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub candidate: Candidate,
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: Candidate,
    pub table: Vec<CvRow>,
}

pub fn cv_table_csv(table: &[CvRow]) -> String {
    let mut out = String::from("lr_u,lr_p,dt_star_u,dt_star_p,mean_accuracy\n");
    for r in table {
        let c = r.candidate;
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            c.lr_u, c.lr_p, c.dt_star_u, c.dt_star_p, r.mean_accuracy
        );
    }
    out
}

fn with_candidate(hp: &Hyperparameters, c: &Candidate) -> Result<Hyperparameters> {
    let mut hp = hp.clone();
    hp.dt_star_u = c.dt_star_u;
    hp.dt_star_p = c.dt_star_p;
    hp.dt_u = c.dt_star_u;
    hp.dt_p = c.dt_star_p;
    hp.validate()?;
    Ok(hp)
}

fn train_fresh(
    hp: &Hyperparameters,
    basis: &BasisMatrix,
    c: &Candidate,
    train: &Dataset,
    eval: &Dataset,
    base: &TrainConfig,
    seed: u64,
) -> Result<PsbcModel> {
    let hp = with_candidate(hp, c)?;
    let weights = init_weights(&hp, derive_seed(seed, 0));
    let mut model = PsbcModel::new(hp, basis.clone(), weights)?;
    let config = TrainConfig {
        lr_u: c.lr_u,
        lr_p: c.lr_p,
        seed: derive_seed(seed, 1),
        ..base.clone()
    };
    fit(&mut model, train, eval, &config)?;
    Ok(model)
}

/// k-fold cross-validated accuracy for every candidate; the best is the first
/// maximizer in grid order. Each fold is trained with `base` (its learning
/// rates are replaced by the candidate's) and monitored on its validation fold.
/// A fold whose training diverges scores zero.
pub fn grid_search(
    grid: &[Candidate],
    dataset: &Dataset,
    hp: &Hyperparameters,
    basis: &BasisMatrix,
    k: usize,
    base: &TrainConfig,
    seed: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(PsbcError::Config("empty grid".into()));
    }
    let folds = kfold_split(dataset.len(), k, derive_seed(seed, u64::MAX))?;
    let folds: Vec<(Dataset, Dataset)> = folds
        .iter()
        .map(|(t, v)| (dataset.subset(t), dataset.subset(v)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (train, val) = &folds[f];
            let s = derive_seed(seed, ((c as u64) << 32) | f as u64);
            match train_fresh(hp, basis, &grid[c], train, val, base, s) {
                Ok(model) => propagation::accuracy(&model, &val.samples()),
                Err(PsbcError::Diverged { .. }) => Ok(0.0),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let table: Vec<CvRow> = grid
        .iter()
        .enumerate()
        .map(|(c, cand)| {
            let fold_accuracies = scores[c * folds.len()..(c + 1) * folds.len()].to_vec();
            let mean_accuracy = fold_accuracies.iter().sum::<f64>() / folds.len() as f64;
            CvRow {
                candidate: *cand,
                fold_accuracies,
                mean_accuracy,
            }
        })
        .collect();
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_accuracy > table[best].mean_accuracy {
            best = i;
        }
    }
    Ok(GridResult {
        best: table[best].candidate,
        table,
    })
}

#[derive(Debug, Clone)]
pub struct Assessment {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single repeat.
    pub sd: f64,
    /// Model of the first repeat.
    pub model: PsbcModel,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Retrains from fresh initializations on all of `train_dev` (also the
/// monitored set) and measures test accuracy for each repeat.
#[allow(clippy::too_many_arguments)]
pub fn assess(
    hp: &Hyperparameters,
    basis: &BasisMatrix,
    best: &Candidate,
    train_dev: &Dataset,
    test: &Dataset,
    repeats: usize,
    base: &TrainConfig,
    seed: u64,
) -> Result<Assessment> {
    if repeats == 0 {
        return Err(PsbcError::Config("repeats must be at least 1".into()));
    }
    check_binary(test, "test")?;
    let models: Vec<PsbcModel> = (0..repeats as u64)
        .into_par_iter()
        .map(|r| {
            train_fresh(
                hp,
                basis,
                best,
                train_dev,
                train_dev,
                base,
                derive_seed(seed, r),
            )
        })
        .collect::<Result<_>>()?;
    let test_samples = test.samples();
    let accuracies = models
        .iter()
        .map(|m| propagation::accuracy(m, &test_samples))
        .collect::<Result<Vec<_>>>()?;
    let (mean, sd) = mean_sd(&accuracies);
    Ok(Assessment {
        accuracies,
        mean,
        sd,
        model: models.into_iter().next().expect("at least one repeat"),
    })
}

/// Key/value schedule and grid file (TOML). Every key is optional.
///
/// ```toml
/// [training]
/// lr_decay = 0.5
/// decay_every = 5
/// grid_epochs = 10
/// final_epochs = 20
/// batch_size = 32
/// patience = 10
/// folds = 5
///
/// [grid]
/// lr_u = [0.1, 0.3, 1.0, 3.0]
/// lr_p = [0.1, 0.3, 1.0, 3.0]
/// dt_star = [0.1, 0.2]
/// # or an explicit list, which replaces the product above:
/// # candidates = [{ lr_u = 1.0, lr_p = 1.0, dt_star_u = 0.1, dt_star_p = 0.2 }]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub lr_decay: f64,
    pub decay_every: usize,
    pub grid_epochs: usize,
    pub final_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub folds: usize,
    pub grid: Vec<Candidate>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            lr_decay: 0.5,
            decay_every: 5,
            grid_epochs: GRID_EPOCHS,
            final_epochs: FINAL_EPOCHS,
            batch_size: 32,
            patience: 10,
            folds: 5,
            grid: candidate_grid(
                &DEFAULT_LEARNING_RATES,
                &DEFAULT_LEARNING_RATES,
                &DEFAULT_DT_STAR,
            ),
        }
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    #[serde(default)]
    training: TrainingSection,
    #[serde(default)]
    grid: GridSection,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainingSection {
    lr_decay: Option<f64>,
    decay_every: Option<usize>,
    grid_epochs: Option<usize>,
    final_epochs: Option<usize>,
    batch_size: Option<usize>,
    patience: Option<usize>,
    folds: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct GridSection {
    lr_u: Option<Vec<f64>>,
    lr_p: Option<Vec<f64>>,
    dt_star: Option<Vec<f64>>,
    candidates: Option<Vec<Candidate>>,
}

impl ScheduleConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ScheduleFile =
            toml::from_str(text).map_err(|e| PsbcError::Config(e.message().to_string()))?;
        let d = ScheduleConfig::default();
        let t = file.training;
        let g = file.grid;
        let grid = match g.candidates {
            Some(c) => c,
            None => candidate_grid(
                g.lr_u.as_deref().unwrap_or(&DEFAULT_LEARNING_RATES),
                g.lr_p.as_deref().unwrap_or(&DEFAULT_LEARNING_RATES),
                g.dt_star.as_deref().unwrap_or(&DEFAULT_DT_STAR),
            ),
        };
        let cfg = ScheduleConfig {
            lr_decay: t.lr_decay.unwrap_or(d.lr_decay),
            decay_every: t.decay_every.unwrap_or(d.decay_every),
            grid_epochs: t.grid_epochs.unwrap_or(d.grid_epochs),
            final_epochs: t.final_epochs.unwrap_or(d.final_epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            patience: t.patience.unwrap_or(d.patience),
            folds: t.folds.unwrap_or(d.folds),
            grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(PsbcError::Config("empty grid".into()));
        }
        if self.folds < 2 {
            return Err(PsbcError::Config("folds must be at least 2".into()));
        }
        for c in &self.grid {
            if !(c.dt_star_u > 0.0 && c.dt_star_p > 0.0) {
                return Err(PsbcError::Config("dt_star values must be positive".into()));
            }
            self.train_config(c, self.grid_epochs, 0).validate()?;
        }
        self.train_config(&self.grid[0], self.final_epochs, 0)
            .validate()
    }

    pub fn train_config(&self, c: &Candidate, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lr_u: c.lr_u,
            lr_p: c.lr_p,
            lr_decay: self.lr_decay,
            decay_every: self.decay_every,
            epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed,
            monitor: Monitor::Accuracy,
        }
    }
}
