use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Blob spread used by the bundled scenarios for `generate_dataset(4, 8, 250, ..)`.
pub const DEFAULT_SPREAD: f64 = 0.5;

/// Dense labelled dataset. Features are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

/// Deterministic 80/20 train/test partition of sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, dim: usize, classes: usize) -> Result<Self> {
        if dim == 0 || classes < 2 {
            return Err(Error::config("dataset needs dim >= 1 and at least 2 classes"));
        }
        if labels.is_empty() {
            return Err(Error::config("dataset needs at least one sample"));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::config(format!(
                "feature buffer has {} values, expected {} x {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::config(format!("label {bad} outside [0, {classes})")));
        }
        let mut seen = vec![false; classes];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::config(format!("class {c} has no samples")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Length of a softmax parameter vector for this dataset.
    pub fn param_len(&self) -> usize {
        self.classes * self.dim + self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn train_test_split(&self, seed: u64) -> Split {
        let mut idx = self.all_indices();
        idx.shuffle(&mut rng_from(seed));
        let n_train = ((self.len() as f64) * 0.8).floor() as usize;
        let n_train = n_train.clamp(1.min(self.len()), self.len());
        let test = idx.split_off(n_train);
        Split { train: idx, test }
    }

    /// Writes `f0..f{dim-1},label` CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| Error::parse(path, e))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`Dataset::write_csv`]. The class count is
    /// `max(label) + 1` unless `classes` is given.
    pub fn read_csv(path: impl AsRef<Path>, classes: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
        let header = r.headers().map_err(|e| Error::parse(path, e))?.clone();
        let dim = header.len().saturating_sub(1);
        if dim == 0 || header.get(dim) != Some("label") {
            return Err(Error::parse(path, "expected header f0..f{dim-1},label"));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(path, e))?;
            for j in 0..dim {
                let v: f64 = rec[j]
                    .parse()
                    .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?;
                features.push(v);
            }
            let l: usize = rec[dim]
                .parse()
                .map_err(|e| Error::parse(path, format!("row {}: {e}", line + 2)))?;
            labels.push(l);
        }
        let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(features, labels, dim, classes)
    }
}

/// Gaussian class blobs: each class mean has standard-normal coordinates drawn
/// from `seed`, and every sample is `mean + spread * N(0, I)`. Samples are
/// stored class by class.
pub fn generate_dataset(
    classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || dim == 0 || per_class == 0 {
        return Err(Error::config(format!(
            "generate_dataset needs classes >= 2, dim >= 1, per_class >= 1 (got {classes}, {dim}, {per_class})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::config(format!("spread must be finite and >= 0, got {spread}")));
    }
    let mut rng = rng_from(seed);
    let means: Vec<f64> = (0..classes * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut features = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let mean = &means[c * dim..(c + 1) * dim];
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    Dataset::new(features, labels, dim, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_puts_samples_on_means() {
        let d = generate_dataset(2, 2, 1, 0.0, 11).unwrap();
        assert_eq!(d.len(), 2);
        // regenerate the means independently from the same stream
        let mut rng = rng_from(11);
        let means: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(d.row(0), &means[0..2]);
        assert_eq!(d.row(1), &means[2..4]);
        assert_eq!(d.labels(), &[0, 1]);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_dataset(10, 32, 500, 1.0, 7).unwrap();
        let b = generate_dataset(10, 32, 500, 1.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(matches!(generate_dataset(1, 2, 5, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(generate_dataset(3, 2, 0, 1.0, 0), Err(Error::Config(_))));
        assert!(matches!(generate_dataset(3, 2, 5, -1.0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let d = generate_dataset(4, 3, 25, 1.0, 1).unwrap();
        let s = d.train_test_split(9);
        assert_eq!(s.train.len(), 80);
        assert_eq!(s.test.len(), 20);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, d.all_indices());
    }

    #[test]
    fn csv_round_trip() {
        let d = generate_dataset(3, 4, 5, 0.5, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        d.write_csv(&p).unwrap();
        let back = Dataset::read_csv(&p, Some(3)).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn empty_class_is_rejected() {
        let err = Dataset::new(vec![0.0, 1.0], vec![0, 0], 1, 2).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }
}
