//! Hard-voting committees and one-vs-one multiclass prediction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::BasisMatrix;
use crate::data::{fit_normalization, Dataset, DigitSet};
use crate::error::{PsbcError, Result};
use crate::model::PsbcModel;
use crate::params::Hyperparameters;
use crate::propagation::predict;
use crate::training::{derive_seed, fit, init_weights, Candidate, TrainConfig};

/// Binary classifiers for digits `a < b`; label 0 means `a`.
#[derive(Debug, Clone)]
pub struct Committee {
    pair: (u8, u8),
    members: Vec<PsbcModel>,
}

impl Committee {
    pub fn new(pair: (u8, u8), members: Vec<PsbcModel>) -> Result<Self> {
        if pair.0 >= pair.1 || pair.1 > 9 {
            return Err(PsbcError::Config(format!(
                "committee pair must satisfy a < b <= 9, got {pair:?}"
            )));
        }
        if let Some(first) = members.first() {
            let n_u = first.hp().n_u;
            if members
                .iter()
                .any(|m| m.hp().n_u != n_u || m.normalization() != first.normalization())
            {
                return Err(PsbcError::Config(format!(
                    "committee {pair:?} mixes feature sizes or normalization maps"
                )));
            }
        }
        Ok(Committee { pair, members })
    }

    pub fn pair(&self) -> (u8, u8) {
        self.pair
    }

    pub fn members(&self) -> &[PsbcModel] {
        &self.members
    }

    /// Applies the members' normalization map, if any.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.members.first().and_then(PsbcModel::normalization) {
            Some(map) => map.apply(x),
            None => Ok(x.to_vec()),
        }
    }
}

/// Majority of member predictions on an already normalized input; ties give 1.
pub fn hard_vote(c: &Committee, x: &[f64]) -> Result<u8> {
    if c.members.is_empty() {
        return Err(PsbcError::Config(format!(
            "committee {:?} has no members",
            c.pair
        )));
    }
    let mut ones = 0;
    for m in &c.members {
        ones += usize::from(predict(m, x)?);
    }
    Ok(u8::from(2 * ones >= c.members.len()))
}

/// Committees keyed by pair; every one of the 45 pairs must be present once.
pub fn index_committees(committees: &[Committee]) -> Result<BTreeMap<(u8, u8), &Committee>> {
    let mut map = BTreeMap::new();
    for c in committees {
        if map.insert(c.pair, c).is_some() {
            return Err(PsbcError::Config(format!(
                "duplicate committee for pair {:?}",
                c.pair
            )));
        }
    }
    for a in 0..10u8 {
        for b in a + 1..10 {
            if !map.contains_key(&(a, b)) {
                return Err(PsbcError::Config(format!(
                    "missing committee for pair ({a}, {b})"
                )));
            }
        }
    }
    Ok(map)
}

/// Vote counts `C_a`: committee `(a, b)` gives its vote `P` to `b` and `1 - P` to `a`.
pub fn vote_counts(committees: &BTreeMap<(u8, u8), &Committee>, x: &[f64]) -> Result<[u32; 10]> {
    let mut counts = [0u32; 10];
    for (&(a, b), c) in committees {
        let p = hard_vote(c, &c.normalize(x)?)?;
        counts[usize::from(a)] += u32::from(1 - p);
        counts[usize::from(b)] += u32::from(p);
    }
    Ok(counts)
}

/// Uniform draw among the digits with the most votes.
pub fn pick_winner(counts: &[u32; 10], rng: &mut impl Rng) -> u8 {
    let top = *counts.iter().max().expect("ten counts");
    let winners: Vec<u8> = (0..10u8)
        .filter(|&d| counts[usize::from(d)] == top)
        .collect();
    winners[rng.random_range(0..winners.len())]
}

/// One-vs-one prediction of a min-max scaled input.
pub fn ovo_predict(committees: &[Committee], x: &[f64], rng: &mut impl Rng) -> Result<u8> {
    let map = index_committees(committees)?;
    Ok(pick_winner(&vote_counts(&map, x)?, rng))
}

/// Predictions for many inputs; sample `i` breaks ties with stream `i` of `seed`.
pub fn ovo_predict_batch(committees: &[Committee], xs: &[&[f64]], seed: u64) -> Result<Vec<u8>> {
    let map = index_committees(committees)?;
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            Ok(pick_winner(&vote_counts(&map, x)?, &mut rng))
        })
        .collect()
}

/// Rows are true labels, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for c in 0..self.n_classes {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
        for t in 0..self.n_classes {
            let _ = write!(out, "{t}");
            for p in 0..self.n_classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion(preds: &[u8], labels: &[u8], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(PsbcError::dim("predictions", labels.len(), preds.len()));
    }
    let mut counts = vec![0u64; n_classes * n_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        let (p, t) = (usize::from(p), usize::from(t));
        if p >= n_classes || t >= n_classes {
            return Err(PsbcError::Domain(format!(
                "label {} outside 0..{n_classes}",
                p.max(t)
            )));
        }
        counts[t * n_classes + p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// Accuracy and F1. With two classes F1 takes label 1 as positive; otherwise
/// it is the unweighted mean of per-class F1. A class never predicted nor
/// present scores 0.
pub fn metrics(cm: &ConfusionMatrix) -> (f64, f64) {
    let n = cm.n_classes;
    let total = cm.total();
    let trace: u64 = (0..n).map(|i| cm.get(i, i)).sum();
    let accuracy = if total == 0 {
        0.0
    } else {
        trace as f64 / total as f64
    };
    let f1_of = |c: usize| {
        let tp = cm.get(c, c);
        let fp: u64 = (0..n).filter(|&t| t != c).map(|t| cm.get(t, c)).sum();
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let f1 = if n == 2 {
        f1_of(1)
    } else {
        (0..n).map(f1_of).sum::<f64>() / n as f64
    };
    (accuracy, f1)
}

/// Settings shared by every pair of a one-vs-one run.
#[derive(Debug, Clone)]
pub struct OvoSettings {
    pub hp: Hyperparameters,
    pub candidate: Candidate,
    pub train: TrainConfig,
    pub members: usize,
    /// Train on at most this many leading records of each pair.
    pub per_pair: Option<usize>,
}

/// Trains the committee for `pair` on its own normalized subset of `digits`.
pub fn train_committee(
    digits: &DigitSet,
    pair: (u8, u8),
    s: &OvoSettings,
    seed: u64,
) -> Result<Committee> {
    let mut ds = digits.select_pair(pair.0, pair.1)?;
    if let Some(n) = s.per_pair {
        ds = ds.head(n);
    }
    let map = fit_normalization(&ds)?;
    let normalized = map.apply_dataset(&ds)?;
    let mut hp = s.hp.clone();
    hp.dt_star_u = s.candidate.dt_star_u;
    hp.dt_star_p = s.candidate.dt_star_p;
    hp.dt_u = hp.dt_star_u;
    hp.dt_p = hp.dt_star_p;
    let members = (0..s.members as u64)
        .map(|m| {
            let member_seed = derive_seed(seed, m);
            let weights = init_weights(&hp, derive_seed(member_seed, 0));
            let basis = BasisMatrix::canonical(hp.n_u, hp.n_pt)?;
            let mut model = PsbcModel::new(hp.clone(), basis, weights)?;
            let config = TrainConfig {
                lr_u: s.candidate.lr_u,
                lr_p: s.candidate.lr_p,
                seed: derive_seed(member_seed, 1),
                ..s.train.clone()
            };
            fit(&mut model, &normalized, &normalized, &config)?;
            model.set_normalization(Some(map.clone()))?;
            Ok(model)
        })
        .collect::<Result<Vec<_>>>()?;
    Committee::new(pair, members)
}

/// All 45 committees, trained in parallel, in pair order.
pub fn train_all_committees(
    digits: &DigitSet,
    s: &OvoSettings,
    seed: u64,
) -> Result<Vec<Committee>> {
    let pairs: Vec<(u8, u8)> = (0..10u8)
        .flat_map(|a| (a + 1..10).map(move |b| (a, b)))
        .collect();
    pairs
        .par_iter()
        .map(|&p| {
            train_committee(
                digits,
                p,
                s,
                derive_seed(seed, u64::from(p.0) * 10 + u64::from(p.1)),
            )
        })
        .collect()
}

/// Accuracy of one committee on the records of its own pair.
pub fn pair_accuracy(c: &Committee, digits: &Dataset) -> Result<f64> {
    let (a, b) = c.pair;
    let ds = crate::data::select_pair(digits, a, b)?;
    if ds.is_empty() {
        return Ok(f64::NAN);
    }
    let preds = ds
        .features()
        .map(|x| hard_vote(c, &c.normalize(x)?))
        .collect::<Result<Vec<_>>>()?;
    let hits = preds
        .iter()
        .zip(ds.labels())
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / ds.len() as f64)
}

/// Plain-text report: overall metrics, per-pair accuracies and the confusion matrix.
pub fn multiclass_report(cm: &ConfusionMatrix, pair_accuracies: &[((u8, u8), f64)]) -> String {
    let (accuracy, f1) = metrics(cm);
    let mut out = String::new();
    let _ = writeln!(out, "samples = {}", cm.total());
    let _ = writeln!(out, "accuracy = {accuracy:.6}");
    let _ = writeln!(out, "macro_f1 = {f1:.6}");
    out.push_str("\n[pair_accuracy]\n");
    for ((a, b), acc) in pair_accuracies {
        let _ = writeln!(out, "\"{a},{b}\" = {acc:.6}");
    }
    out.push_str("\n[confusion]\n");
    out.push_str(&cm.to_csv());
    out
}
