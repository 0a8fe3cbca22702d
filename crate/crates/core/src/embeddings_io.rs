//! Embedding datasets: text-file I/O, validation, synthetic blobs,
//! feature-space augmentation and mini-batching.
//!
//! Matrix files start with a one-line header `AECL-EMB v1 <rows> <cols>`
//! followed by one whitespace-separated row per line. Label files hold one
//! non-negative integer per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{AeclError, Result};

pub const EMBEDDING_MAGIC: &str = "AECL-EMB";
pub const EMBEDDING_VERSION: &str = "v1";

/// Per-sample embeddings for the original view and (optionally) an
/// augmented view, with optional ground truth used only for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub ids: Vec<String>,
    pub view0: Array2<f64>,
    pub view1: Option<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
    pub num_classes_hint: Option<usize>,
}

impl EmbeddingDataset {
    /// Builds a dataset and checks every invariant. Sample ids default to
    /// the row index.
    pub fn new(
        view0: Array2<f64>,
        view1: Option<Array2<f64>>,
        labels: Option<Vec<usize>>,
        num_classes_hint: Option<usize>,
    ) -> Result<Self> {
        validate_matrix(&view0)?;
        if let Some(v1) = &view1 {
            if v1.dim() != view0.dim() {
                return Err(AeclError::ViewShapeMismatch {
                    view0: view0.dim(),
                    view1: v1.dim(),
                });
            }
            validate_matrix(v1)?;
        }
        if let Some(labels) = &labels {
            if labels.len() != view0.nrows() {
                return Err(AeclError::LabelCountMismatch {
                    labels: labels.len(),
                    samples: view0.nrows(),
                });
            }
            if let Some(classes) = num_classes_hint {
                if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
                    return Err(AeclError::LabelOutOfRange { label, classes });
                }
            }
        }
        let ids = (0..view0.nrows()).map(|i| i.to_string()).collect();
        Ok(Self {
            ids,
            view0,
            view1,
            labels,
            num_classes_hint,
        })
    }

    pub fn len(&self) -> usize {
        self.view0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.view0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.view0.ncols()
    }

    /// The augmented view, falling back to the original view when absent.
    pub fn view1_or_view0(&self) -> &Array2<f64> {
        self.view1.as_ref().unwrap_or(&self.view0)
    }
}

/// Rejects non-finite entries and all-zero rows.
pub fn validate_matrix(m: &Array2<f64>) -> Result<()> {
    for (row, values) in m.axis_iter(Axis(0)).enumerate() {
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(AeclError::InvalidEmbeddingValue { row, col });
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(AeclError::DegenerateRow(row));
        }
    }
    Ok(())
}

/// Reads an `AECL-EMB v1` matrix file. Only the format is checked here;
/// value validation happens in [`EmbeddingDataset::new`].
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, &path.display().to_string())
}

pub fn parse_matrix(text: &str, context: &str) -> Result<Array2<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AeclError::parse(context, "empty file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != EMBEDDING_MAGIC || fields[1] != EMBEDDING_VERSION {
        return Err(AeclError::parse(
            context,
            format!("expected header `{EMBEDDING_MAGIC} {EMBEDDING_VERSION} <rows> <cols>`"),
        ));
    }
    let rows: usize = fields[2]
        .parse()
        .map_err(|_| AeclError::parse(context, "bad row count in header"))?;
    let cols: usize = fields[3]
        .parse()
        .map_err(|_| AeclError::parse(context, "bad column count in header"))?;

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if seen == rows {
            return Err(AeclError::parse(context, "more rows than declared"));
        }
        let before = data.len();
        for token in line.split_whitespace() {
            let value: f64 = token.parse().map_err(|_| {
                AeclError::parse(context, format!("line {}: bad number `{token}`", lineno + 2))
            })?;
            data.push(value);
        }
        if data.len() - before != cols {
            return Err(AeclError::parse(
                context,
                format!(
                    "line {}: expected {cols} values, found {}",
                    lineno + 2,
                    data.len() - before
                ),
            ));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(AeclError::parse(
            context,
            format!("expected {rows} rows, found {seen}"),
        ));
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| AeclError::parse(context, e.to_string()))
}

pub fn format_matrix(m: &Array2<f64>) -> String {
    let mut out = format!(
        "{EMBEDDING_MAGIC} {EMBEDDING_VERSION} {} {}\n",
        m.nrows(),
        m.ncols()
    );
    for row in m.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(format_matrix(m).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let context = path.display().to_string();
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|_| {
                AeclError::parse(&context, format!("line {}: bad label `{}`", i + 1, l.trim()))
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Loads a dataset from disk. When labels are present, the class-count
/// hint is set to one past the largest label.
pub fn load_dataset(
    path_view0: &Path,
    path_view1: Option<&Path>,
    path_labels: Option<&Path>,
) -> Result<EmbeddingDataset> {
    let view0 = read_matrix(path_view0)?;
    let view1 = path_view1.map(read_matrix).transpose()?;
    let labels = path_labels.map(read_labels).transpose()?;
    let hint = labels
        .as_ref()
        .and_then(|l| l.iter().max().map(|&m| m + 1));
    EmbeddingDataset::new(view0, view1, labels, hint)
}

/// Gaussian blobs around well-separated centers.
///
/// Centers are placed so that every pair is at least `separation` apart:
/// when `num_clusters <= dim` they are scaled orthonormal vectors (pairwise
/// distance exactly `separation`), otherwise they are rejection-sampled on a
/// sphere. Sample order is shuffled; `view1` is a copy of `view0`.
pub fn generate_synthetic(
    num_clusters: usize,
    per_cluster: usize,
    dim: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<EmbeddingDataset> {
    if num_clusters < 2 || per_cluster < 2 || dim < 2 {
        return Err(AeclError::Config(format!(
            "synthetic data needs at least 2 clusters, 2 samples per cluster and 2 dimensions \
             (got {num_clusters}x{per_cluster}x{dim})"
        )));
    }
    if !(separation > 0.0 && separation.is_finite() && noise_sigma > 0.0 && noise_sigma.is_finite())
    {
        return Err(AeclError::Config(
            "separation and noise sigma must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = place_centers(num_clusters, dim, separation, &mut rng);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma validated above");

    let n = num_clusters * per_cluster;
    let mut labels: Vec<usize> = (0..n).map(|i| i / per_cluster).collect();
    labels.shuffle(&mut rng);
    let mut view0 = Array2::zeros((n, dim));
    for (mut row, &label) in view0.axis_iter_mut(Axis(0)).zip(&labels) {
        for (x, c) in row.iter_mut().zip(centers.row(label)) {
            *x = c + noise.sample(&mut rng);
        }
    }
    EmbeddingDataset::new(view0.clone(), Some(view0), Some(labels), Some(num_clusters))
}

fn place_centers(k: usize, dim: usize, separation: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let radius = separation / std::f64::consts::SQRT_2;
    let mut centers = Array2::<f64>::zeros((k, dim));
    if k <= dim {
        // Gram-Schmidt on Gaussian draws.
        for c in 0..k {
            loop {
                let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                for prev in 0..c {
                    let dot: f64 = v.iter().zip(centers.row(prev)).map(|(a, b)| a * b).sum();
                    for (x, p) in v.iter_mut().zip(centers.row(prev)) {
                        *x -= dot * p;
                    }
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-6 {
                    for (dst, x) in centers.row_mut(c).iter_mut().zip(&v) {
                        *dst = x / norm;
                    }
                    break;
                }
            }
        }
        centers.mapv_inplace(|x| x * radius);
    } else {
        let mut r = radius;
        let mut placed = 0;
        let mut failures = 0;
        while placed < k {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let cand: Vec<f64> = v.iter().map(|x| x / norm * r).collect();
            let ok = (0..placed).all(|p| {
                let d2: f64 = cand
                    .iter()
                    .zip(centers.row(p))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2 >= separation * separation
            });
            if ok {
                centers.row_mut(placed).assign(&ndarray::ArrayView1::from(&cand));
                placed += 1;
                failures = 0;
            } else {
                failures += 1;
                if failures > 1000 {
                    r *= 1.1;
                    for p in 0..placed {
                        centers.row_mut(p).mapv_inplace(|x| x * 1.1);
                    }
                    failures = 0;
                }
            }
        }
    }
    centers
}

/// Feature-space stand-in for text augmentation: additive Gaussian noise
/// plus independent coordinate masking.
pub fn augment_features(
    view0: &Array2<f64>,
    noise_sigma: f64,
    mask_prob: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if !(0.0..1.0).contains(&mask_prob) {
        return Err(AeclError::DegenerateAugmentation(mask_prob));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(AeclError::Config(format!(
            "augmentation noise sigma must be non-negative, got {noise_sigma}"
        )));
    }
    if noise_sigma == 0.0 && mask_prob == 0.0 {
        return Ok(view0.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = view0.clone();
    let dim = view0.ncols();
    let mut mask = vec![false; dim];
    for (mut row, src) in out.axis_iter_mut(Axis(0)).zip(view0.axis_iter(Axis(0))) {
        loop {
            for m in mask.iter_mut() {
                *m = mask_prob > 0.0 && rng.random::<f64>() < mask_prob;
            }
            // Without noise a row whose surviving coordinates are all zero
            // would be degenerate; redraw its mask.
            let survives = noise_sigma > 0.0
                || src.iter().zip(&mask).any(|(&x, &masked)| !masked && x != 0.0);
            if survives {
                break;
            }
        }
        for ((x, &s), &masked) in row.iter_mut().zip(src.iter()).zip(&mask) {
            let noisy = if noise_sigma > 0.0 {
                s + noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                s
            };
            *x = if masked { 0.0 } else { noisy };
        }
    }
    Ok(out)
}

/// A mini-batch of paired rows from both views.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub v0: Array2<f64>,
    pub v1: Array2<f64>,
}

impl Batch {
    /// Gathers the given rows; the augmented view falls back to view0 when
    /// the dataset has none.
    pub fn gather(dataset: &EmbeddingDataset, indices: &[usize]) -> Self {
        let v0 = dataset.view0.select(Axis(0), indices);
        let v1 = dataset.view1_or_view0().select(Axis(0), indices);
        Self {
            indices: indices.to_vec(),
            v0,
            v1,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Index permutation for one epoch, a pure function of `(seed, epoch)`.
pub fn epoch_permutation(n: usize, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Training batches for one epoch: `floor(S / N)` full batches over a
/// seeded permutation; the trailing partial batch is dropped.
pub fn batch_iterator(
    dataset: &EmbeddingDataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size < 2 {
        return Err(AeclError::Config(format!(
            "batch size must be at least 2, got {batch_size}"
        )));
    }
    if dataset.len() < batch_size {
        return Err(AeclError::DatasetTooSmall {
            samples: dataset.len(),
            batch_size,
        });
    }
    let perm = epoch_permutation(dataset.len(), shuffle_seed, epoch);
    Ok(perm
        .chunks_exact(batch_size)
        .map(|idx| Batch::gather(dataset, idx))
        .collect())
}

/// Contiguous row ranges for inference; the final partial batch is kept.
pub fn inference_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let step = batch_size.max(1);
    (0..n)
        .step_by(step)
        .map(|start| start..(start + step).min(n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_matching_views_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = "AECL-EMB v1 3 4\n1 2 3 4\n0 0 1 0\n-1 0.5 2 3\n";
        let v0 = write_tmp(&dir, "v0.emb", m);
        let v1 = write_tmp(&dir, "v1.emb", m);
        let l = write_tmp(&dir, "labels.txt", "0\n1\n0\n");
        let ds = load_dataset(&v0, Some(&v1), Some(&l)).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 4);
        assert_eq!(ds.labels.as_deref(), Some(&[0, 1, 0][..]));
        assert_eq!(ds.num_classes_hint, Some(2));
    }

    #[test]
    fn rejects_view_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let v0 = write_tmp(&dir, "v0", "AECL-EMB v1 3 4\n1 2 3 4\n1 1 1 1\n2 2 2 2\n");
        let v1 = write_tmp(&dir, "v1", "AECL-EMB v1 2 4\n1 2 3 4\n1 1 1 1\n");
        let err = load_dataset(&v0, Some(&v1), None).unwrap_err();
        assert!(err.to_string().contains("view shape mismatch"), "{err}");
    }

    #[test]
    fn rejects_nan_and_zero_rows() {
        let dir = tempfile::tempdir().unwrap();
        let v0 = write_tmp(&dir, "v0", "AECL-EMB v1 2 2\n1 NaN\n1 1\n");
        let err = load_dataset(&v0, None, None).unwrap_err();
        assert!(err.to_string().contains("invalid embedding value"), "{err}");

        let v0 = write_tmp(&dir, "v0b", "AECL-EMB v1 2 2\n1 2\n0 0\n");
        let err = load_dataset(&v0, None, None).unwrap_err();
        assert!(err.to_string().contains("degenerate embedding row"), "{err}");
    }

    #[test]
    fn rejects_label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let v0 = write_tmp(&dir, "v0", "AECL-EMB v1 2 2\n1 2\n3 4\n");
        let l = write_tmp(&dir, "l", "0\n1\n1\n");
        let err = load_dataset(&v0, None, Some(&l)).unwrap_err();
        assert!(err.to_string().contains("label count mismatch"), "{err}");
    }

    #[test]
    fn malformed_files_are_parse_errors() {
        assert!(parse_matrix("AECL-EMB v2 1 1\n1\n", "x").is_err());
        assert!(parse_matrix("AECL-EMB v1 2 2\n1 2\n", "x").is_err());
        assert!(parse_matrix("AECL-EMB v1 1 2\n1 2 3\n", "x").is_err());
        assert!(parse_matrix("AECL-EMB v1 1 2\n1 x\n", "x").is_err());
    }

    #[test]
    fn matrix_text_round_trips_exactly() {
        let m = array![[0.1, -1e-300, 1.0 / 3.0], [f64::MAX, 5e-324, 2.5]];
        let back = parse_matrix(&format_matrix(&m), "rt").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn synthetic_shape_balance_and_determinism() {
        let a = generate_synthetic(4, 200, 32, 10.0, 1.0, 7).unwrap();
        assert_eq!(a.len(), 800);
        let mut counts = [0usize; 4];
        for &l in a.labels.as_ref().unwrap() {
            counts[l] += 1;
        }
        assert_eq!(counts, [200; 4]);
        let b = generate_synthetic(4, 200, 32, 10.0, 1.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_centers_respect_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, dim) in [(4, 32), (6, 2), (3, 3)] {
            let c = place_centers(k, dim, 5.0, &mut rng);
            for i in 0..k {
                for j in (i + 1)..k {
                    let d = (&c.row(i) - &c.row(j)).mapv(|x| x * x).sum().sqrt();
                    assert!(d >= 5.0 - 1e-9, "k={k} dim={dim} d={d}");
                }
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_shapes() {
        assert!(generate_synthetic(1, 10, 4, 1.0, 1.0, 0).is_err());
        assert!(generate_synthetic(2, 0, 4, 1.0, 1.0, 0).is_err());
        assert!(generate_synthetic(2, 2, 1, 1.0, 1.0, 0).is_err());
    }

    #[test]
    fn augmentation_identity_and_determinism() {
        let ds = generate_synthetic(2, 10, 5, 3.0, 1.0, 1).unwrap();
        let same = augment_features(&ds.view0, 0.0, 0.0, 9).unwrap();
        assert_eq!(same, ds.view0);
        let a = augment_features(&ds.view0, 0.1, 0.0, 3).unwrap();
        let b = augment_features(&ds.view0, 0.1, 0.0, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ds.view0);
        assert!(augment_features(&ds.view0, 0.1, 1.0, 3).is_err());
    }

    #[test]
    fn mask_frequency_matches_probability() {
        // Binomial oracle: 1000 x 32 trials at p = 0.3 has sd ~ 0.0026.
        let ds = generate_synthetic(2, 500, 32, 3.0, 1.0, 2).unwrap();
        let out = augment_features(&ds.view0, 0.0, 0.3, 5).unwrap();
        let zeros = out.iter().filter(|&&x| x == 0.0).count() as f64;
        let frac = zeros / out.len() as f64;
        assert!((frac - 0.3).abs() <= 0.02, "masked fraction {frac}");
    }

    #[test]
    fn masking_never_produces_zero_rows() {
        let v = array![[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]];
        let out = augment_features(&v, 0.0, 0.9, 11).unwrap();
        validate_matrix(&out).unwrap();
    }

    #[test]
    fn batches_drop_partial_and_are_deterministic() {
        let ds = generate_synthetic(3, 300, 4, 3.0, 1.0, 0).unwrap();
        let batches = batch_iterator(&ds, 400, 11, 2).unwrap();
        assert_eq!(batches.len(), 2);
        let mut all: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        assert_eq!(all.len(), 800);
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 800);
        assert_eq!(batches, batch_iterator(&ds, 400, 11, 2).unwrap());
        assert_ne!(
            batches[0].indices,
            batch_iterator(&ds, 400, 11, 3).unwrap()[0].indices
        );
        for b in &batches {
            for (r, &i) in b.indices.iter().enumerate() {
                assert_eq!(b.v0.row(r), ds.view0.row(i));
                assert_eq!(b.v1.row(r), ds.view1.as_ref().unwrap().row(i));
            }
        }
    }

    #[test]
    fn batch_larger_than_dataset_fails() {
        let ds = generate_synthetic(2, 5, 4, 3.0, 1.0, 0).unwrap();
        let err = batch_iterator(&ds, 400, 0, 0).unwrap_err();
        assert!(err.to_string().contains("dataset smaller than batch size"));
    }

    #[test]
    fn inference_ranges_keep_partial() {
        assert_eq!(inference_ranges(5, 2), vec![0..2, 2..4, 4..5]);
        assert_eq!(inference_ranges(4, 4), vec![0..4]);
    }
}
