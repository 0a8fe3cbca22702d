//! Clustering metrics, attention diagnostics and batched inference.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};

use crate::embeddings_io::inference_ranges;
use crate::error::{AeclError, Result};
use crate::model::{argmax_rows, forward_view, ParameterSet};
use crate::training::{csv_float, TrainHistory};

/// Maximum-weight perfect matching on a square matrix (Hungarian method,
/// shortest augmenting paths with potentials). Returns the column assigned
/// to each row.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let max = weights.iter().flatten().copied().max().unwrap_or(0);
    // Minimise cost = max - weight; 1-based arrays, index 0 is a sentinel.
    let cost = |i: usize, j: usize| max - weights[i - 1][j - 1];
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Confusion counts keyed by dense indices of each label alphabet.
fn contingency(y_true: &[usize], y_pred: &[usize]) -> (Vec<Vec<i64>>, usize, usize) {
    let index = |labels: &[usize]| -> BTreeMap<usize, usize> {
        let mut map = BTreeMap::new();
        for &l in labels {
            let next = map.len();
            map.entry(l).or_insert(next);
        }
        map
    };
    let ti = index(y_true);
    let pi = index(y_pred);
    let mut table = vec![vec![0i64; ti.len()]; pi.len()];
    for (t, p) in y_true.iter().zip(y_pred) {
        table[pi[p]][ti[t]] += 1;
    }
    (table, pi.len(), ti.len())
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(AeclError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AeclError::Config("metrics need at least one sample".into()));
    }
    Ok(())
}

/// Clustering accuracy under the best one-to-one mapping of predicted to
/// true clusters. Rectangular confusion matrices are zero-padded.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let (table, rows, cols) = contingency(y_true, y_pred);
    let n = rows.max(cols);
    let mut square = vec![vec![0i64; n]; n];
    for (r, row) in table.iter().enumerate() {
        square[r][..cols].copy_from_slice(row);
    }
    let assignment = max_weight_assignment(&square);
    let matched: i64 = assignment
        .iter()
        .enumerate()
        .map(|(r, &c)| square[r][c])
        .sum();
    Ok(matched as f64 / y_true.len() as f64)
}

/// Normalized mutual information `I / sqrt(H_true H_pred)` with natural
/// logs. Two single-cluster partitions score 1; a single-cluster partition
/// against a non-trivial one scores 0.
pub fn nmi(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true, y_pred)?;
    let (table, rows, cols) = contingency(y_true, y_pred);
    let n = y_true.len() as f64;
    let pred_marg: Vec<f64> = table.iter().map(|r| r.iter().sum::<i64>() as f64 / n).collect();
    let true_marg: Vec<f64> = (0..cols)
        .map(|c| table.iter().map(|r| r[c]).sum::<i64>() as f64 / n)
        .collect();
    let entropy = |p: &[f64]| -> f64 { -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>() };
    let (h_pred, h_true) = (entropy(&pred_marg), entropy(&true_marg));
    if rows == 1 && cols == 1 {
        return Ok(1.0);
    }
    if rows == 1 || cols == 1 || h_pred == 0.0 || h_true == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count > 0 {
                let pij = count as f64 / n;
                mi += pij * (pij / (pred_marg[r] * true_marg[c])).ln();
            }
        }
    }
    Ok((mi / (h_true * h_pred).sqrt()).clamp(0.0, 1.0))
}

/// Attention mass placed on samples of a different true class, averaged
/// over rows, and its complement.
pub fn negative_similarity(s0: &Array2<f64>, y: &[usize]) -> Result<(f64, f64)> {
    let n = s0.nrows();
    if y.len() != n || s0.ncols() != n {
        return Err(AeclError::LengthMismatch(y.len(), n));
    }
    if n == 0 {
        return Err(AeclError::Config("empty similarity matrix".into()));
    }
    let mut total = 0.0;
    for (i, row) in s0.axis_iter(Axis(0)).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if y[i] != y[j] {
                total += v;
            }
        }
    }
    let ns = total / n as f64;
    Ok((ns, 1.0 - ns))
}

/// Predictions and per-batch diagnostics over a whole matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub predictions: Vec<usize>,
    /// `(NS, PS)` per inference batch; empty without labels.
    pub batch_similarity: Vec<(f64, f64)>,
}

/// Runs the model over contiguous batches of `view0` (last partial batch
/// kept). Attention is batch-dependent, so results depend on `batch_size`.
pub fn infer(
    params: &ParameterSet,
    view0: &Array2<f64>,
    labels: Option<&[usize]>,
    batch_size: usize,
) -> Result<Inference> {
    if let Some(l) = labels {
        if l.len() != view0.nrows() {
            return Err(AeclError::LabelCountMismatch {
                labels: l.len(),
                samples: view0.nrows(),
            });
        }
    }
    let mut predictions = Vec::with_capacity(view0.nrows());
    let mut batch_similarity = Vec::new();
    for range in inference_ranges(view0.nrows(), batch_size) {
        let rows = view0.slice(s![range.clone(), ..]).to_owned();
        let cache = forward_view(params, &rows)?;
        predictions.extend(argmax_rows(&cache.out.p));
        if let Some(l) = labels {
            batch_similarity.push(negative_similarity(&cache.out.s, &l[range])?);
        }
    }
    Ok(Inference {
        predictions,
        batch_similarity,
    })
}

/// Cluster assignment for every row of `view0`.
pub fn predict(params: &ParameterSet, view0: &Array2<f64>, batch_size: usize) -> Result<Vec<usize>> {
    Ok(infer(params, view0, None, batch_size)?.predictions)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ns: Option<f64>,
    pub ps: Option<f64>,
    pub cluster_sizes: Vec<usize>,
    pub n_samples: usize,
    pub m: usize,
}

impl EvaluationReport {
    pub fn from_predictions(
        predictions: &[usize],
        labels: Option<&[usize]>,
        batch_similarity: &[(f64, f64)],
        m: usize,
    ) -> Result<Self> {
        let mut cluster_sizes = vec![0; m];
        for &p in predictions {
            if p >= m {
                return Err(AeclError::ShapeMismatch(format!(
                    "prediction {p} outside {m} clusters"
                )));
            }
            cluster_sizes[p] += 1;
        }
        let (acc, nmi_value) = match labels {
            Some(l) => (Some(accuracy(l, predictions)?), Some(nmi(l, predictions)?)),
            None => (None, None),
        };
        let (ns, ps) = if batch_similarity.is_empty() {
            (None, None)
        } else {
            let ns = batch_similarity.iter().map(|b| b.0).sum::<f64>() / batch_similarity.len() as f64;
            (Some(ns), Some(1.0 - ns))
        };
        Ok(Self {
            acc,
            nmi: nmi_value,
            ns,
            ps,
            cluster_sizes,
            n_samples: predictions.len(),
            m,
        })
    }

    /// Share of predictions held by the largest cluster.
    pub fn max_cluster_fraction(&self) -> f64 {
        let max = self.cluster_sizes.iter().copied().max().unwrap_or(0);
        max as f64 / self.n_samples.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let sizes: Vec<String> = self.cluster_sizes.iter().map(|c| c.to_string()).collect();
        format!(
            "{REPORT_HEADER}\n{},{},{},{},{},{},{}\n",
            csv_float(self.acc),
            csv_float(self.nmi),
            csv_float(self.ns),
            csv_float(self.ps),
            self.n_samples,
            self.m,
            sizes.join(" "),
        )
    }
}

pub const REPORT_HEADER: &str = "acc,nmi,ns,ps,n_samples,m,cluster_sizes";

/// Full-dataset evaluation in inference mode. NS is the unweighted mean of
/// per-batch values.
pub fn evaluate_dataset(
    params: &ParameterSet,
    view0: &Array2<f64>,
    labels: Option<&[usize]>,
    batch_size: usize,
) -> Result<EvaluationReport> {
    let inf = infer(params, view0, labels, batch_size)?;
    EvaluationReport::from_predictions(&inf.predictions, labels, &inf.batch_similarity, params.dims.m)
}

/// Writes `report.csv` and `curves.csv` into `out_dir`.
pub fn emit_report(report: &EvaluationReport, history: &TrainHistory, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.csv"), report.to_csv())?;
    fs::write(out_dir.join("curves.csv"), history.to_csv())?;
    Ok(())
}

/// Per-batch NS/PS as CSV rows.
pub fn ns_curve_csv(batch_similarity: &[(f64, f64)]) -> String {
    let mut out = String::from("batch,ns,ps\n");
    for (i, (ns, ps)) in batch_similarity.iter().enumerate() {
        let _ = writeln!(out, "{i},{ns:?},{ps:?}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[2, 0, 1, 1, 5], &[2, 0, 1, 1, 5]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn accuracy_rectangular() {
        // Three predicted clusters against two true ones.
        assert_eq!(accuracy(&[0, 0, 0, 1, 1, 1], &[0, 0, 2, 1, 1, 1]).unwrap(), 5.0 / 6.0);
        // One predicted cluster against three true ones.
        assert_eq!(accuracy(&[0, 1, 2, 2], &[7, 7, 7, 7]).unwrap(), 0.5);
    }

    #[test]
    fn nmi_examples() {
        assert!((nmi(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(nmi(&[0, 1, 0, 1], &[3, 3, 3, 3]).unwrap(), 0.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&[4, 4, 4], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ns_examples() {
        let s = array![[0.5, 0.5], [0.5, 0.5]];
        assert_eq!(negative_similarity(&s, &[0, 1]).unwrap(), (0.5, 0.5));
        assert_eq!(negative_similarity(&s, &[1, 1]).unwrap(), (0.0, 1.0));
        let block = array![[0.6, 0.4, 0.0], [0.3, 0.7, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(negative_similarity(&block, &[0, 0, 1]).unwrap().0, 0.0);
        assert!(negative_similarity(&s, &[0]).is_err());
    }

    #[test]
    fn hungarian_small_cases() {
        let w = vec![vec![1, 2, 3], vec![2, 4, 6], vec![3, 6, 9]];
        let a = max_weight_assignment(&w);
        let total: i64 = a.iter().enumerate().map(|(r, &c)| w[r][c]).sum();
        assert_eq!(total, 14);
        assert!(max_weight_assignment(&[]).is_empty());
    }

    #[test]
    fn report_csv_layout() {
        let r = EvaluationReport::from_predictions(&[0, 0, 1], Some(&[1, 1, 0]), &[], 2).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        let row = lines.next().unwrap();
        assert!(row.starts_with("1.0,1.0,,,3,2,"), "{row}");
        assert!(row.ends_with(",2 1"));

        let unlabeled = EvaluationReport::from_predictions(&[0, 0, 1], None, &[], 2).unwrap();
        assert!(unlabeled.to_csv().lines().nth(1).unwrap().starts_with(",,,,3,2,"));
    }

    #[test]
    fn emit_report_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let r = EvaluationReport::from_predictions(&[0, 1], Some(&[0, 1]), &[(0.25, 0.75)], 2).unwrap();
        let h = TrainHistory::default();
        emit_report(&r, &h, dir.path()).unwrap();
        let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(curves, format!("{}\n", crate::training::CURVES_HEADER));
        let first = fs::read(dir.path().join("report.csv")).unwrap();
        emit_report(&r, &h, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join("report.csv")).unwrap());
    }
}
