//! Model files: a TOML document with fixed key order and 17 significant digits.
//!
//! ```toml
//! format_version = 1
//!
//! [hyperparameters]
//! n_t = 2
//! ...
//!
//! [basis]
//! kind = "canonical"      # "pca" also carries `matrix`, one row per feature
//!
//! [weights]
//! w_u = [[...], ...]      # one array per stored group
//! w_p = [[...], ...]
//!
//! [normalization]         # present only when the model carries a map
//! mu = [...]
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::basis::{BasisKind, BasisMatrix};
use crate::data::NormalizationMap;
use crate::error::{PsbcError, Result};
use crate::model::PsbcModel;
use crate::params::{BoundaryCondition, Hyperparameters, Subordination, WeightStack};

pub const FORMAT_VERSION: i64 = 1;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn array(out: &mut String, values: &[f64]) {
    out.push('[');
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&num(*v));
    }
    out.push(']');
}

fn nested(out: &mut String, key: &str, rows: &[Vec<f64>]) {
    let _ = writeln!(out, "{key} = [");
    for r in rows {
        out.push_str("    ");
        array(out, r);
        out.push_str(",\n");
    }
    out.push_str("]\n");
}

pub fn model_to_string(model: &PsbcModel) -> Result<String> {
    if !model.weights().is_finite() {
        return Err(PsbcError::Domain(
            "refusing to save non-finite weights".into(),
        ));
    }
    let hp = model.hp();
    let mut out = String::new();
    let _ = writeln!(out, "format_version = {FORMAT_VERSION}\n");
    out.push_str("[hyperparameters]\n");
    let _ = writeln!(out, "n_t = {}", hp.n_t);
    let _ = writeln!(out, "n_u = {}", hp.n_u);
    let _ = writeln!(out, "n_pt = {}", hp.n_pt);
    let _ = writeln!(out, "eps = {}", num(hp.eps));
    let _ = writeln!(out, "dt_u = {}", num(hp.dt_u));
    let _ = writeln!(out, "dt_p = {}", num(hp.dt_p));
    let _ = writeln!(out, "dt_star_u = {}", num(hp.dt_star_u));
    let _ = writeln!(out, "dt_star_p = {}", num(hp.dt_star_p));
    let _ = writeln!(out, "shared_k = {}", hp.shared_k);
    let _ = writeln!(out, "bc = \"{}\"", hp.bc.as_str());
    let _ = writeln!(out, "subordination = \"{}\"\n", hp.subordination.as_str());
    out.push_str("[basis]\n");
    let basis = model.basis_u();
    let _ = writeln!(out, "kind = \"{}\"", basis.kind().as_str());
    if basis.kind() == BasisKind::Pca {
        let dense = basis.to_dense();
        let rows: Vec<Vec<f64>> = dense.chunks(basis.n_cols()).map(<[f64]>::to_vec).collect();
        nested(&mut out, "matrix", &rows);
    }
    out.push_str("\n[weights]\n");
    nested(&mut out, "w_u", &model.weights().w_u);
    nested(&mut out, "w_p", &model.weights().w_p);
    if let Some(map) = model.normalization() {
        out.push_str("\n[normalization]\nmu = ");
        array(&mut out, &map.mu);
        out.push('\n');
    }
    Ok(out)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| PsbcError::Domain(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn save_model(model: &PsbcModel, path: &Path) -> Result<()> {
    atomic_write(path, model_to_string(model)?.as_bytes())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    #[allow(dead_code)]
    format_version: i64,
    hyperparameters: HpDoc,
    basis: BasisDoc,
    weights: WeightsDoc,
    normalization: Option<NormDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HpDoc {
    n_t: usize,
    n_u: usize,
    n_pt: usize,
    eps: f64,
    dt_u: f64,
    dt_p: f64,
    dt_star_u: f64,
    dt_star_p: f64,
    shared_k: usize,
    bc: String,
    subordination: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisDoc {
    kind: String,
    matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsDoc {
    w_u: Vec<Vec<f64>>,
    w_p: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NormDoc {
    mu: Vec<f64>,
}

fn check_groups(
    field: &str,
    groups: &[Vec<f64>],
    n_groups: usize,
    width: usize,
    width_name: &str,
) -> Result<()> {
    if groups.len() != n_groups {
        return Err(PsbcError::load(
            field,
            format!(
                "{} groups present, hyperparameters.n_t and hyperparameters.shared_k require {n_groups}",
                groups.len()
            ),
        ));
    }
    for (g, w) in groups.iter().enumerate() {
        if w.len() != width {
            return Err(PsbcError::load(
                format!("{field}[{g}]"),
                format!("{} entries, {width_name} = {width}", w.len()),
            ));
        }
    }
    Ok(())
}

pub fn model_from_str(text: &str) -> Result<PsbcModel> {
    let value: toml::Table =
        toml::from_str(text).map_err(|e| PsbcError::load("document", e.message().to_string()))?;
    match value
        .get("format_version")
        .and_then(toml::Value::as_integer)
    {
        Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(PsbcError::load(
                "format_version",
                format!("version {v} is not supported, expected {FORMAT_VERSION}"),
            ))
        }
        None => {
            return Err(PsbcError::load(
                "format_version",
                "missing or not an integer",
            ))
        }
    }
    let doc: Doc = value
        .try_into()
        .map_err(|e: toml::de::Error| PsbcError::load("document", e.message().to_string()))?;

    let h = doc.hyperparameters;
    let bc = BoundaryCondition::parse(&h.bc).ok_or_else(|| {
        PsbcError::load("hyperparameters.bc", format!("unknown value {:?}", h.bc))
    })?;
    let subordination = Subordination::parse(&h.subordination).ok_or_else(|| {
        PsbcError::load(
            "hyperparameters.subordination",
            format!("unknown value {:?}", h.subordination),
        )
    })?;
    let hp = Hyperparameters {
        n_t: h.n_t,
        n_u: h.n_u,
        n_pt: h.n_pt,
        eps: h.eps,
        dt_u: h.dt_u,
        dt_p: h.dt_p,
        dt_star_u: h.dt_star_u,
        dt_star_p: h.dt_star_p,
        shared_k: h.shared_k,
        bc,
        subordination,
    };
    hp.validate()
        .map_err(|e| PsbcError::load("hyperparameters", e.to_string()))?;

    let kind = BasisKind::parse(&doc.basis.kind).ok_or_else(|| {
        PsbcError::load("basis.kind", format!("unknown value {:?}", doc.basis.kind))
    })?;
    let basis = match (kind, doc.basis.matrix) {
        (BasisKind::Pca, Some(rows)) => {
            if rows.len() != hp.n_u {
                return Err(PsbcError::load(
                    "basis.matrix",
                    format!("{} rows, hyperparameters.n_u = {}", rows.len(), hp.n_u),
                ));
            }
            if let Some(i) = rows.iter().position(|r| r.len() != hp.n_pt) {
                return Err(PsbcError::load(
                    format!("basis.matrix[{i}]"),
                    format!(
                        "{} entries, hyperparameters.n_pt = {}",
                        rows[i].len(),
                        hp.n_pt
                    ),
                ));
            }
            BasisMatrix::dense(hp.n_u, hp.n_pt, rows.concat())
                .map_err(|e| PsbcError::load("basis.matrix", e.to_string()))?
        }
        (BasisKind::Pca, None) => {
            return Err(PsbcError::load("basis.matrix", "required for kind \"pca\""))
        }
        (_, Some(_)) => {
            return Err(PsbcError::load(
                "basis.matrix",
                "only allowed for kind \"pca\"",
            ))
        }
        (BasisKind::Canonical, None) => BasisMatrix::canonical(hp.n_u, hp.n_pt)
            .map_err(|e| PsbcError::load("basis.kind", e.to_string()))?,
        (BasisKind::Identity, None) => {
            if hp.n_pt != hp.n_u {
                return Err(PsbcError::load(
                    "basis.kind",
                    "identity basis needs hyperparameters.n_pt = hyperparameters.n_u",
                ));
            }
            BasisMatrix::identity(hp.n_u)
        }
    };

    check_groups(
        "weights.w_u",
        &doc.weights.w_u,
        hp.n_groups(),
        hp.n_pt,
        "hyperparameters.n_pt",
    )?;
    check_groups(
        "weights.w_p",
        &doc.weights.w_p,
        hp.n_groups(),
        hp.n_p(),
        "phase width",
    )?;
    let weights = WeightStack {
        w_u: doc.weights.w_u,
        w_p: doc.weights.w_p,
    };
    let mut model = PsbcModel::new(hp, basis, weights)
        .map_err(|e| PsbcError::load("document", e.to_string()))?;
    if let Some(n) = doc.normalization {
        if n.mu.len() != model.hp().n_u {
            return Err(PsbcError::load(
                "normalization.mu",
                format!(
                    "{} entries, hyperparameters.n_u = {}",
                    n.mu.len(),
                    model.hp().n_u
                ),
            ));
        }
        if n.mu.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(PsbcError::load(
                "normalization.mu",
                "entries must lie in [0, 1]",
            ));
        }
        model.set_normalization(Some(NormalizationMap { mu: n.mu }))?;
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<PsbcModel> {
    let text = fs::read_to_string(path)?;
    model_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagation::scores;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_model(rng: &mut ChaCha8Rng, pca: bool) -> PsbcModel {
        let hp = Hyperparameters::new(
            3,
            6,
            3,
            0.25,
            0.1,
            2,
            BoundaryCondition::Periodic,
            Subordination::Subordinate,
        )
        .unwrap();
        let mut w = WeightStack::zeros(&hp);
        for v in w.w_u.iter_mut().chain(w.w_p.iter_mut()).flatten() {
            *v = rng.random_range(-1.0..2.0);
        }
        let basis = if pca {
            let e: Vec<f64> = (0..18)
                .map(|i| {
                    if i % 4 == 0 {
                        1.0
                    } else {
                        rng.random_range(-0.1..0.1)
                    }
                })
                .collect();
            BasisMatrix::dense(6, 3, e).unwrap()
        } else {
            BasisMatrix::canonical(6, 3).unwrap()
        };
        let mut m = PsbcModel::new(hp, basis, w).unwrap();
        let mu = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        m.set_normalization(Some(NormalizationMap { mu })).unwrap();
        m
    }

    #[test]
    fn canonical_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for pca in [false, true] {
            let m = sample_model(&mut rng, pca);
            let text = model_to_string(&m).unwrap();
            let back = model_from_str(&text).unwrap();
            assert_eq!(model_to_string(&back).unwrap(), text);
            assert_eq!(back.weights(), m.weights());
            assert_eq!(back.normalization(), m.normalization());
            let xs: Vec<Vec<f64>> = (0..100)
                .map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect();
            let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
            assert_eq!(scores(&back, &refs).unwrap(), scores(&m, &refs).unwrap());
        }
    }

    fn field_of(text: &str) -> String {
        match model_from_str(text).unwrap_err() {
            PsbcError::Load { field, message } => format!("{field}: {message}"),
            other => panic!("expected a load error, got {other}"),
        }
    }

    #[test]
    fn tampering_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let text = model_to_string(&sample_model(&mut rng, false)).unwrap();
        let e = field_of(&text.replace("n_u = 6", "n_u = 8"));
        assert!(
            e.starts_with("normalization.mu") && e.contains("n_u"),
            "{e}"
        );
        let e = field_of(&text.replace("n_pt = 3", "n_pt = 2"));
        assert!(e.contains("n_pt"), "{e}");
        assert!(field_of(&text.replace("n_t = 3", "n_t = 5")).starts_with("weights.w_u"));
        assert!(
            field_of(&text.replace("format_version = 1", "format_version = 2"))
                .starts_with("format_version")
        );
        assert!(
            field_of(&text.replace("bc = \"periodic\"", "bc = \"dirichlet\""))
                .starts_with("hyperparameters.bc")
        );
        assert!(
            field_of(&text.replace("kind = \"canonical\"", "kind = \"pca\""))
                .starts_with("basis.matrix")
        );
        assert!(field_of(&text.replace("[weights]", "[weights]\nextra = 1")).contains("extra"));
    }

    #[test]
    fn saves_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.psbc");
        let m = sample_model(&mut ChaCha8Rng::seed_from_u64(3), true);
        save_model(&m, &path).unwrap();
        save_model(&m, &path).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert_eq!(load_model(&path).unwrap().weights(), m.weights());
    }
}
