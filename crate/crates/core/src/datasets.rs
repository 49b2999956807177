//! Synthetic classification data, Dirichlet partitioning and CSV I/O.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::Shape(format!("samples must be (N, d), got {:?}", samples.shape())));
        }
        if samples.rows() != labels.len() {
            return Err(Error::Shape(format!("{} samples, {} labels", samples.rows(), labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Self { samples, labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        self.labels.iter().for_each(|&y| counts[y] += 1);
        counts
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.is_empty() {
            return Err(Error::InvalidArgument("empty subset".into()));
        }
        Ok(Dataset {
            samples: self.samples.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        })
    }
}

/// Class mean on a cyclic lattice: coordinate j of class c is
/// ((c + j) mod C) / (C - 1) rescaled into [-0.5, 0.5].
fn lattice_mean(class: usize, classes: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| ((class + j) % classes) as f64 / (classes - 1) as f64 - 0.5)
        .collect()
}

/// Gaussian clusters around lattice means with noise std `spread`, clamped to
/// [-1, 1]. Samples are ordered class by class, `per_class` each.
pub fn make_synthetic(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || dim < 2 || per_class == 0 || !(spread >= 0.0) || !spread.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "make_synthetic needs C>=2, d>=2, n>=1, spread>=0; got C={classes} d={dim} n={per_class} spread={spread}"
        )));
    }
    let mut r = rng::stream(seed, "synthetic-data", 0);
    let noise = Tensor::randn(&[classes * per_class, dim], &mut r);
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mean = lattice_mean(c, classes, dim);
        for i in 0..per_class {
            let n = noise.row(c * per_class + i);
            data.extend(mean.iter().zip(n).map(|(m, e)| (m + spread * e).clamp(-1.0, 1.0)));
            labels.push(c);
        }
    }
    Dataset::new(Tensor::matrix(classes * per_class, dim, data)?, labels, classes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    pub clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

fn dirichlet<R: Rng + ?Sized>(k: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        // every draw underflowed; collapse onto one client
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        p
    }
}

/// Largest-remainder split of `total` items by `proportions`; ties on the
/// remainder go to the lowest index.
pub fn apportion(total: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Per-class Dirichlet split across clients. Every sample lands in exactly one
/// shard and every shard holds at least one sample.
pub fn dirichlet_partition(ds: &Dataset, spec: &PartitionSpec) -> Result<Vec<Dataset>> {
    if spec.clients == 0 || !(spec.alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("partition needs K>=1 and alpha>0, got {spec:?}")));
    }
    if ds.len() < spec.clients {
        return Err(Error::InvalidArgument(format!("{} samples cannot cover {} clients", ds.len(), spec.clients)));
    }
    let mut r = rng::stream(spec.seed, "dirichlet-partition", 0);
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); spec.clients];
    for c in 0..ds.classes {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        idx.shuffle(&mut r);
        let p = dirichlet(spec.clients, spec.alpha, &mut r);
        let mut start = 0;
        for (k, n) in apportion(idx.len(), &p).into_iter().enumerate() {
            shards[k].extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    for k in 0..spec.clients {
        if shards[k].is_empty() {
            let donor = (0..spec.clients)
                .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
                .expect("at least one client");
            let moved = shards[donor].pop().expect("donor holds samples");
            log::info!("client {k} received no samples; moved sample {moved} from client {donor}");
            shards[k].push(moved);
        }
    }
    shards.iter().map(|s| ds.subset(s)).collect()
}

pub fn to_csv_string(ds: &Dataset) -> String {
    let mut out = String::from("label");
    for j in 0..ds.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for (row, y) in ds.samples.rows_iter().zip(&ds.labels) {
        let _ = write!(out, "{y}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parse the `label,f0,...,f{d-1}` format. With `classes = None` the class
/// count is inferred as the largest label plus one.
pub fn from_csv_str(text: &str, classes: Option<usize>) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("no rows".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let dim = cols.len().saturating_sub(1);
    let header_ok = cols.first() == Some(&"label")
        && dim >= 1
        && cols[1..].iter().enumerate().all(|(j, c)| *c == format!("f{j}"));
    if !header_ok {
        return Err(Error::Parse(format!("line 1: malformed header {header:?}")));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected {} features, found {}",
                dim,
                fields.len() - 1
            )));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("line {lineno}: unknown label {:?}", fields[0])))?;
        if let Some(c) = classes {
            if label >= c {
                return Err(Error::Parse(format!("line {lineno}: unknown label {label} for {c} classes")));
            }
        }
        labels.push(label);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: malformed value {f:?}")))?;
            if !v.is_finite() {
                return Err(Error::Parse(format!("line {lineno}: non-finite value {f:?}")));
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse("no rows".into()));
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let n = labels.len();
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, classes)
}

pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_csv_string(ds))?;
    Ok(())
}

pub fn load_csv(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_csv_str(&text, classes)
}
