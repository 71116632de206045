//! Dataset plumbing: synthetic Gaussian blob generation, CSV ingestion and
//! export, and group-disjoint train/val/test splitting (groups simulate
//! patients; no group ever straddles two parts).

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub id: u64,
    pub group: u64,
    pub label: usize,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub rows: Vec<Row>,
    pub classes: usize,
    pub dim: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.id) {
                return Err(Error::Dataset(format!("duplicate id {}", r.id)));
            }
            if r.label >= self.classes {
                return Err(Error::Dataset(format!("label {} outside [0,{})", r.label, self.classes)));
            }
            if r.features.len() != self.dim {
                return Err(Error::Dataset(format!(
                    "row {} has dimension {}, expected {}",
                    r.id,
                    r.features.len(),
                    self.dim
                )));
            }
        }
        Ok(())
    }

    /// Pooled per-coordinate standard deviation, used to scale relative
    /// perturbation sigmas.
    pub fn feature_std(&self) -> f64 {
        let n = (self.rows.len() * self.dim) as f64;
        let mean: f64 = self.rows.iter().flat_map(|r| &r.features).sum::<f64>() / n;
        let var: f64 =
            self.rows.iter().flat_map(|r| &r.features).map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                / n;
        var.sqrt()
    }
}

/// Gaussian class clusters with centres evenly spaced on a circle of radius
/// `separation` in the first two feature dimensions; unit noise per
/// coordinate. Group ids are assigned in contiguous blocks.
pub fn generate_blobs(
    classes: usize,
    per_class: usize,
    separation: f64,
    dim: usize,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    if classes < 2 || dim < 2 {
        return Err(Error::Config("blobs need classes >= 2 and dim >= 2".into()));
    }
    if per_class == 0 || group_size == 0 {
        return Err(Error::Config("per_class and group_size must be >= 1".into()));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(classes * per_class);
    let mut id = 0u64;
    for c in 0..classes {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
        let (cx, cy) = (separation * angle.cos(), separation * angle.sin());
        for _ in 0..per_class {
            let mut f: Vec<f64> = (0..dim).map(|_| noise.sample(rng)).collect();
            f[0] += cx;
            f[1] += cy;
            rows.push(Row { id, group: id / group_size as u64, label: c, features: f });
            id += 1;
        }
    }
    let ds = Dataset {
        rows,
        classes,
        dim,
        provenance: format!("blobs(classes={classes},per_class={per_class},separation={separation})"),
    };
    ds.validate()?;
    Ok(ds)
}

/// Group-disjoint split: ids for the labelled and unlabelled training
/// parts, validation, and test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labelled: Vec<u64>,
    pub unlabelled: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// 60/20/20 train/val/test by group; the train part is further split by
/// group into a labelled fraction `beta` and its unlabelled complement.
pub fn split(ds: &Dataset, beta: f64, rng: &mut ChaCha8Rng) -> Result<Split> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Config(format!("labelled fraction {beta} outside (0,1)")));
    }
    let mut groups: Vec<u64> = {
        let mut g: Vec<u64> = ds.rows.iter().map(|r| r.group).collect();
        g.sort_unstable();
        g.dedup();
        g
    };
    groups.shuffle(rng);
    let n = groups.len();
    let n_train = (0.6 * n as f64).round() as usize;
    let n_val = (0.2 * n as f64).round() as usize;
    let train_groups = &groups[..n_train];
    let val_groups = &groups[n_train..n_train + n_val];
    let test_groups = &groups[n_train + n_val..];
    let n_lab = ((beta * n_train as f64).round() as usize).max(1);
    let lab_groups = &train_groups[..n_lab.min(n_train)];
    let unl_groups = &train_groups[n_lab.min(n_train)..];

    let pick = |gs: &[u64]| -> Vec<u64> {
        let set: std::collections::HashSet<u64> = gs.iter().copied().collect();
        ds.rows.iter().filter(|r| set.contains(&r.group)).map(|r| r.id).collect()
    };
    let s = Split {
        labelled: pick(lab_groups),
        unlabelled: pick(unl_groups),
        val: pick(val_groups),
        test: pick(test_groups),
    };
    if s.labelled.is_empty() || s.unlabelled.is_empty() || s.val.is_empty() || s.test.is_empty() {
        return Err(Error::Dataset(format!(
            "too few groups ({n}) for four non-empty group-disjoint parts"
        )));
    }
    Ok(s)
}

/// CSV schema: header `id,group,label,f0..f{m-1}`, UTF-8, decimal-point
/// floats at 17 significant digits on export.
pub fn write_csv(ds: &Dataset, mut w: impl Write) -> Result<()> {
    let header: Vec<String> = ["id", "group", "label"]
        .into_iter()
        .map(String::from)
        .chain((0..ds.dim).map(|i| format!("f{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for r in &ds.rows {
        let feats: Vec<String> = r.features.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(w, "{},{},{},{}", r.id, r.group, r.label, feats.join(","))?;
    }
    Ok(())
}

pub fn read_csv(r: impl Read, provenance: &str) -> Result<Dataset> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty CSV".into()))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[0] != "id" || cols[1] != "group" || cols[2] != "label" {
        return Err(Error::Dataset(format!("bad CSV header: {header}")));
    }
    let dim = cols.len() - 3;
    let mut rows = Vec::new();
    let mut classes = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != cols.len() {
            return Err(Error::Dataset(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                cols.len(),
                parts.len()
            )));
        }
        let parse_err = |what: &str| Error::Dataset(format!("line {}: bad {what}", lineno + 2));
        let id: u64 = parts[0].parse().map_err(|_| parse_err("id"))?;
        let group: u64 = parts[1].parse().map_err(|_| parse_err("group"))?;
        let label: usize = parts[2].parse().map_err(|_| parse_err("label"))?;
        let features: Vec<f64> = parts[3..]
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<_>>()?;
        classes = classes.max(label + 1);
        rows.push(Row { id, group, label, features });
    }
    let ds = Dataset { rows, classes, dim, provenance: provenance.to_string() };
    ds.validate()?;
    Ok(ds)
}

pub fn read_csv_path(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    read_csv(f, &path.display().to_string())
}
