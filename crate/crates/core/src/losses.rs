//! Loss functions with hand-derived gradients.
//!
//! Every loss takes forward outputs and returns its scalar value together
//! with the gradient of that scalar with respect to each matrix input.
//! Exponentiated similarities are shifted by the upper bound of the cosine
//! (`exp((c - 1) / tau)`); the shift cancels in every ratio.

use ndarray::{Array1, Array2, Axis};

use crate::error::{AeclError, Result};
use crate::model::argmax_rows;
use crate::training::PseudoLabelSet;

/// Floor applied to the argument of every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
/// Added to the product of norms in the cosine denominator.
pub const COSINE_EPS: f64 = 1e-12;

fn floored_ln(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// `<a, b> / (|a| |b| + eps)`.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb + COSINE_EPS)
}

/// Pairwise cosine similarities between the rows of two matrices.
struct CosineMatrix {
    x_norm: Array1<f64>,
    y_norm: Array1<f64>,
    dots: Array2<f64>,
    value: Array2<f64>,
}

fn row_norms(x: &Array2<f64>) -> Array1<f64> {
    x.map_axis(Axis(1), |r| r.dot(&r).sqrt())
}

impl CosineMatrix {
    fn new(x: &Array2<f64>, y: &Array2<f64>) -> Self {
        let x_norm = row_norms(x);
        let y_norm = row_norms(y);
        let dots = x.dot(&y.t());
        let mut value = dots.clone();
        for ((i, j), v) in value.indexed_iter_mut() {
            *v /= x_norm[i] * y_norm[j] + COSINE_EPS;
        }
        Self {
            x_norm,
            y_norm,
            dots,
            value,
        }
    }

    /// Returns `(dX, dY)` given `dC`.
    fn backward(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        d_c: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>) {
        let (n, m) = d_c.dim();
        let mut g = Array2::zeros((n, m));
        let mut x_coef = Array1::<f64>::zeros(n);
        let mut y_coef = Array1::<f64>::zeros(m);
        for i in 0..n {
            let nx = self.x_norm[i];
            for j in 0..m {
                let dc = d_c[[i, j]];
                if dc == 0.0 {
                    continue;
                }
                let ny = self.y_norm[j];
                let den = nx * ny + COSINE_EPS;
                g[[i, j]] = dc / den;
                let common = dc * self.dots[[i, j]] / (den * den);
                if nx > 0.0 {
                    x_coef[i] += common * ny / nx;
                }
                if ny > 0.0 {
                    y_coef[j] += common * nx / ny;
                }
            }
        }
        let dx = g.dot(y) - &(x * &x_coef.insert_axis(Axis(1)));
        let dy = g.t().dot(x) - &(y * &y_coef.insert_axis(Axis(1)));
        (dx, dy)
    }
}

fn shifted_exp(c: &CosineMatrix, tau: f64) -> Array2<f64> {
    c.value.mapv(|v| ((v - 1.0) / tau).exp())
}

/// `dC = dE * E / tau` for `E = exp((C - 1) / tau)`.
fn exp_backward(e: &Array2<f64>, d_e: &Array2<f64>, tau: f64) -> Array2<f64> {
    d_e * e / tau
}

/// Two-view ratios sharing a positive pair on the diagonal of `e01`:
///
/// ```text
/// a_i = e01[i,i] / sum_{k != i} (e00[i,k] + e01[i,k])
/// b_i = e01[i,i] / sum_{k != i} (e11[i,k] + e01[k,i])
/// ```
struct PairRatios {
    num: Vec<f64>,
    den_a: Vec<f64>,
    den_b: Vec<f64>,
}

impl PairRatios {
    fn new(e00: &Array2<f64>, e01: &Array2<f64>, e11: &Array2<f64>) -> Self {
        let n = e01.nrows();
        let mut num = vec![0.0; n];
        let mut den_a = vec![0.0; n];
        let mut den_b = vec![0.0; n];
        for i in 0..n {
            num[i] = e01[[i, i]];
            for k in (0..n).filter(|&k| k != i) {
                den_a[i] += e00[[i, k]] + e01[[i, k]];
                den_b[i] += e11[[i, k]] + e01[[k, i]];
            }
        }
        Self { num, den_a, den_b }
    }

    fn a(&self, i: usize) -> f64 {
        self.num[i] / self.den_a[i]
    }

    fn b(&self, i: usize) -> f64 {
        self.num[i] / self.den_b[i]
    }

    fn backward(
        &self,
        g_a: &[f64],
        g_b: &[f64],
        d_e00: &mut Array2<f64>,
        d_e01: &mut Array2<f64>,
        d_e11: &mut Array2<f64>,
    ) {
        let n = self.num.len();
        for i in 0..n {
            let (ga, gb) = (g_a[i], g_b[i]);
            d_e01[[i, i]] += ga / self.den_a[i] + gb / self.den_b[i];
            let ca = -ga * self.num[i] / (self.den_a[i] * self.den_a[i]);
            let cb = -gb * self.num[i] / (self.den_b[i] * self.den_b[i]);
            for k in (0..n).filter(|&k| k != i) {
                d_e00[[i, k]] += ca;
                d_e01[[i, k]] += ca;
                d_e11[[i, k]] += cb;
                d_e01[[k, i]] += cb;
            }
        }
    }
}

/// Per-sample positive index sets: samples sharing the same predicted
/// cluster (argmax of the original-view probabilities).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveIndexSets {
    pub sets: Vec<Vec<usize>>,
}

impl PositiveIndexSets {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }
}

pub fn positive_sets(p0: &Array2<f64>) -> PositiveIndexSets {
    positive_sets_from_assignments(&argmax_rows(p0))
}

pub fn positive_sets_from_assignments(assign: &[usize]) -> PositiveIndexSets {
    let groups_len = assign.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); groups_len];
    for (j, &c) in assign.iter().enumerate() {
        groups[c].push(j);
    }
    PositiveIndexSets {
        sets: assign.iter().map(|&c| groups[c].clone()).collect(),
    }
}

/// Which parts of the similarity-guided loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InstanceTerms {
    /// Cross-view pair term plus the similarity-weighted neighbour term.
    #[default]
    Full,
    /// Ablation: the neighbour term is fixed to zero.
    PairOnly,
}

/// Borrowed forward outputs consumed by [`instance_loss`].
#[derive(Debug, Clone, Copy)]
pub struct InstanceInputs<'a> {
    pub z0: &'a Array2<f64>,
    pub z1: &'a Array2<f64>,
    pub h0: &'a Array2<f64>,
    pub h1: &'a Array2<f64>,
    pub s0: &'a Array2<f64>,
    pub s1: &'a Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceGrads {
    pub z0: Array2<f64>,
    pub z1: Array2<f64>,
    pub h0: Array2<f64>,
    pub h1: Array2<f64>,
    pub s0: Array2<f64>,
    pub s1: Array2<f64>,
}

/// Similarity-guided contrastive loss.
///
/// For each sample `i` and view `v`, the loss term is
/// `-ln(l1_i + l2_i^v)` where `l1_i` is the sum of the two directional
/// z0/z1 ratios and `l2_i^v` is the sum of the z-to-h and h-to-z ratios
/// whose numerators sum `S[i,j] exp(sim / tau)` over the positive set of
/// `i`. Every denominator has `2N - 2` terms. The result is averaged over
/// `2N`.
pub fn instance_loss(
    inp: InstanceInputs<'_>,
    lam: &PositiveIndexSets,
    tau: f64,
    terms: InstanceTerms,
) -> Result<(f64, InstanceGrads)> {
    let n = inp.z0.nrows();
    if n < 2 {
        return Err(AeclError::ContrastiveUndefined);
    }
    if lam.len() != n || [inp.z1, inp.h0, inp.h1].iter().any(|m| m.dim() != inp.z0.dim()) {
        return Err(AeclError::ShapeMismatch(
            "instance loss inputs disagree in shape".into(),
        ));
    }
    if [inp.s0, inp.s1].iter().any(|s| s.dim() != (n, n)) {
        return Err(AeclError::ShapeMismatch(
            "similarity matrices must be N x N".into(),
        ));
    }

    // Cross-view pair term.
    let c00 = CosineMatrix::new(inp.z0, inp.z0);
    let c01 = CosineMatrix::new(inp.z0, inp.z1);
    let c11 = CosineMatrix::new(inp.z1, inp.z1);
    let (e00, e01, e11) = (
        shifted_exp(&c00, tau),
        shifted_exp(&c01, tau),
        shifted_exp(&c11, tau),
    );
    let pair = PairRatios::new(&e00, &e01, &e11);
    let l1: Vec<f64> = (0..n).map(|i| pair.a(i) + pair.b(i)).collect();

    // Neighbour term per view.
    let views = [(inp.z0, inp.h0, inp.s0), (inp.z1, inp.h1, inp.s1)];
    let neighbour: Vec<Option<NeighbourTerm>> = views
        .iter()
        .map(|&(z, h, s)| match terms {
            InstanceTerms::Full => Some(NeighbourTerm::new(z, h, s, lam, tau)),
            InstanceTerms::PairOnly => None,
        })
        .collect();

    let scale = 1.0 / (2 * n) as f64;
    let mut loss = 0.0;
    let mut g_l1 = vec![0.0; n];
    let mut g_l2 = [vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        for v in 0..2 {
            let l2 = neighbour[v].as_ref().map_or(0.0, |t| t.value(i));
            let u = l1[i] + l2;
            loss -= scale * floored_ln(u);
            if u > LOG_FLOOR {
                let g = -scale / u;
                g_l1[i] += g;
                g_l2[v][i] = g;
            }
        }
    }

    let mut d_e00 = Array2::zeros((n, n));
    let mut d_e01 = Array2::zeros((n, n));
    let mut d_e11 = Array2::zeros((n, n));
    pair.backward(&g_l1, &g_l1, &mut d_e00, &mut d_e01, &mut d_e11);
    let (dz0_a, dz0_b) = c00.backward(inp.z0, inp.z0, &exp_backward(&e00, &d_e00, tau));
    let (dz0_c, dz1_a) = c01.backward(inp.z0, inp.z1, &exp_backward(&e01, &d_e01, tau));
    let (dz1_b, dz1_c) = c11.backward(inp.z1, inp.z1, &exp_backward(&e11, &d_e11, tau));
    let mut grads = InstanceGrads {
        z0: dz0_a + dz0_b + dz0_c,
        z1: dz1_a + dz1_b + dz1_c,
        h0: Array2::zeros(inp.h0.dim()),
        h1: Array2::zeros(inp.h1.dim()),
        s0: Array2::zeros((n, n)),
        s1: Array2::zeros((n, n)),
    };

    for (v, term) in neighbour.iter().enumerate() {
        let Some(term) = term else { continue };
        let (z, h, s) = views[v];
        let (dz, dh, ds) = term.backward(z, h, s, lam, &g_l2[v], tau);
        if v == 0 {
            grads.z0 += &dz;
            grads.h0 += &dh;
            grads.s0 += &ds;
        } else {
            grads.z1 += &dz;
            grads.h1 += &dh;
            grads.s1 += &ds;
        }
    }
    Ok((loss, grads))
}

/// `l2_i = num_c / den_c + num_d / den_d` for one view.
struct NeighbourTerm {
    czz: CosineMatrix,
    czh: CosineMatrix,
    chh: CosineMatrix,
    ezz: Array2<f64>,
    ezh: Array2<f64>,
    ehh: Array2<f64>,
    num_c: Vec<f64>,
    den_c: Vec<f64>,
    num_d: Vec<f64>,
    den_d: Vec<f64>,
}

impl NeighbourTerm {
    fn new(
        z: &Array2<f64>,
        h: &Array2<f64>,
        s: &Array2<f64>,
        lam: &PositiveIndexSets,
        tau: f64,
    ) -> Self {
        let n = z.nrows();
        let czz = CosineMatrix::new(z, z);
        let czh = CosineMatrix::new(z, h);
        let chh = CosineMatrix::new(h, h);
        let (ezz, ezh, ehh) = (
            shifted_exp(&czz, tau),
            shifted_exp(&czh, tau),
            shifted_exp(&chh, tau),
        );
        let mut num_c = vec![0.0; n];
        let mut den_c = vec![0.0; n];
        let mut num_d = vec![0.0; n];
        let mut den_d = vec![0.0; n];
        for i in 0..n {
            for &j in &lam.sets[i] {
                num_c[i] += s[[i, j]] * ezh[[i, j]];
                // sim(h_i, z_j) is the (j, i) entry of the z-h matrix.
                num_d[i] += s[[i, j]] * ezh[[j, i]];
            }
            for k in (0..n).filter(|&k| k != i) {
                den_c[i] += ezz[[i, k]] + ezh[[i, k]];
                den_d[i] += ehh[[i, k]] + ezh[[k, i]];
            }
        }
        Self {
            czz,
            czh,
            chh,
            ezz,
            ezh,
            ehh,
            num_c,
            den_c,
            num_d,
            den_d,
        }
    }

    fn value(&self, i: usize) -> f64 {
        self.num_c[i] / self.den_c[i] + self.num_d[i] / self.den_d[i]
    }

    fn backward(
        &self,
        z: &Array2<f64>,
        h: &Array2<f64>,
        s: &Array2<f64>,
        lam: &PositiveIndexSets,
        g: &[f64],
        tau: f64,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let n = z.nrows();
        let mut d_s = Array2::zeros((n, n));
        let mut d_ezz = Array2::zeros((n, n));
        let mut d_ezh = Array2::zeros((n, n));
        let mut d_ehh = Array2::zeros((n, n));
        for i in 0..n {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            let (dc, dd) = (self.den_c[i], self.den_d[i]);
            for &j in &lam.sets[i] {
                d_s[[i, j]] += gi * (self.ezh[[i, j]] / dc + self.ezh[[j, i]] / dd);
                d_ezh[[i, j]] += gi * s[[i, j]] / dc;
                d_ezh[[j, i]] += gi * s[[i, j]] / dd;
            }
            let cc = -gi * self.num_c[i] / (dc * dc);
            let cd = -gi * self.num_d[i] / (dd * dd);
            for k in (0..n).filter(|&k| k != i) {
                d_ezz[[i, k]] += cc;
                d_ezh[[i, k]] += cc;
                d_ehh[[i, k]] += cd;
                d_ezh[[k, i]] += cd;
            }
        }
        let (dz_a, dz_b) = self
            .czz
            .backward(z, z, &exp_backward(&self.ezz, &d_ezz, tau));
        let (dz_c, dh_a) = self
            .czh
            .backward(z, h, &exp_backward(&self.ezh, &d_ezh, tau));
        let (dh_b, dh_c) = self
            .chh
            .backward(h, h, &exp_backward(&self.ehh, &d_ehh, tau));
        (dz_a + dz_b + dz_c, dh_a + dh_b + dh_c, d_s)
    }
}

/// Cluster-level contrastive loss over the columns of the two probability
/// matrices. Column `i` of each view forms the positive pair; the other
/// `2M - 2` columns are negatives. Returns `(value, dP0, dP1)`.
pub fn cluster_loss(
    p0: &Array2<f64>,
    p1: &Array2<f64>,
    tau: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if p0.dim() != p1.dim() {
        return Err(AeclError::ShapeMismatch(
            "cluster loss views differ in shape".into(),
        ));
    }
    let m = p0.ncols();
    if m < 2 {
        return Err(AeclError::ClusterLossUndefined);
    }
    let x0 = p0.t().to_owned();
    let x1 = p1.t().to_owned();
    let c00 = CosineMatrix::new(&x0, &x0);
    let c01 = CosineMatrix::new(&x0, &x1);
    let c11 = CosineMatrix::new(&x1, &x1);
    let (e00, e01, e11) = (
        shifted_exp(&c00, tau),
        shifted_exp(&c01, tau),
        shifted_exp(&c11, tau),
    );
    let ratios = PairRatios::new(&e00, &e01, &e11);
    let scale = 1.0 / (2 * m) as f64;
    let mut loss = 0.0;
    let mut g_a = vec![0.0; m];
    let mut g_b = vec![0.0; m];
    for i in 0..m {
        let (a, b) = (ratios.a(i), ratios.b(i));
        loss -= scale * (floored_ln(a) + floored_ln(b));
        if a > LOG_FLOOR {
            g_a[i] = -scale / a;
        }
        if b > LOG_FLOOR {
            g_b[i] = -scale / b;
        }
    }
    let mut d_e00 = Array2::zeros((m, m));
    let mut d_e01 = Array2::zeros((m, m));
    let mut d_e11 = Array2::zeros((m, m));
    ratios.backward(&g_a, &g_b, &mut d_e00, &mut d_e01, &mut d_e11);
    let (dx0_a, dx0_b) = c00.backward(&x0, &x0, &exp_backward(&e00, &d_e00, tau));
    let (dx0_c, dx1_a) = c01.backward(&x0, &x1, &exp_backward(&e01, &d_e01, tau));
    let (dx1_b, dx1_c) = c11.backward(&x1, &x1, &exp_backward(&e11, &d_e11, tau));
    let dp0 = (dx0_a + dx0_b + dx0_c).reversed_axes();
    let dp1 = (dx1_a + dx1_b + dx1_c).reversed_axes();
    Ok((loss, dp0.as_standard_layout().to_owned(), dp1.as_standard_layout().to_owned()))
}

/// Cross-entropy of the augmented-view probabilities against hard
/// pseudo-labels, averaged over the labelled samples only. Zero when no
/// sample is labelled.
pub fn pseudo_label_loss(pseudo: &PseudoLabelSet, p1: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    let (n, m) = p1.dim();
    let mut grad = Array2::zeros((n, m));
    for (&i, &label) in &pseudo.labeled {
        if label >= m {
            return Err(AeclError::InvalidPseudoLabel { label, clusters: m });
        }
        if i >= n {
            return Err(AeclError::ShapeMismatch(format!(
                "pseudo-label index {i} outside batch of {n}"
            )));
        }
    }
    if pseudo.labeled.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / pseudo.labeled.len() as f64;
    let mut loss = 0.0;
    for (&i, &label) in &pseudo.labeled {
        let p = p1[[i, label]];
        loss -= scale * floored_ln(p);
        if p > LOG_FLOOR {
            grad[[i, label]] = -scale / p;
        }
    }
    Ok((loss, grad))
}

/// `x ln x` with the logarithm floored, and its derivative.
fn xlogx(x: f64) -> (f64, f64) {
    if x > LOG_FLOOR {
        (x * x.ln(), x.ln() + 1.0)
    } else {
        (x * LOG_FLOOR.ln(), LOG_FLOOR.ln())
    }
}

/// Negative mean row entropy of `P0`: `(1/N) sum_ij P_ij ln P_ij`.
/// Lies in `[-ln M, 0]`; minimizing it spreads each row's mass.
pub fn entropy_sharpness_loss(p0: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = p0.nrows().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Array2::zeros(p0.dim());
    for (g, &p) in grad.iter_mut().zip(p0.iter()) {
        let (f, df) = xlogx(p);
        value += f / n;
        *g = df / n;
    }
    (value, grad)
}

/// Negative entropy of the mean cluster assignment, averaged over both
/// views: `(1/2) sum_j (q0_j ln q0_j + q1_j ln q1_j)` with `q = colmean(P)`.
/// Minimizing it pushes cluster sizes toward uniform.
pub fn entropy_balance_loss(
    p0: &Array2<f64>,
    p1: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if p0.dim() != p1.dim() {
        return Err(AeclError::ShapeMismatch(
            "entropy balance views differ in shape".into(),
        ));
    }
    let n = p0.nrows().max(1) as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(2);
    for p in [p0, p1] {
        let q = p.sum_axis(Axis(0)) / n;
        let mut dq = Array1::zeros(q.len());
        for (d, &qj) in dq.iter_mut().zip(q.iter()) {
            let (f, df) = xlogx(qj);
            value += 0.5 * f;
            *d = 0.5 * df / n;
        }
        let grad = Array2::from_shape_fn(p.dim(), |(_, j)| dq[j]);
        grads.push(grad);
    }
    let g1 = grads.pop().expect("two views");
    let g0 = grads.pop().expect("two views");
    Ok((value, g0, g1))
}

/// Sign convention for the two entropy regularizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropySign {
    /// Losses are negative entropies; positive weights raise entropy.
    #[default]
    Intent,
    /// Losses are the entropies themselves, as literally typeset.
    Paper,
}

impl EntropySign {
    pub fn factor(self) -> f64 {
        match self {
            EntropySign::Intent => 1.0,
            EntropySign::Paper => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub tau_i: f64,
    pub tau_c: f64,
    pub entropy_sign: EntropySign,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 5.0,
            lambda3: 0.01,
            lambda4: 10.0,
            tau_i: 1.0,
            tau_c: 0.5,
            entropy_sign: EntropySign::Intent,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_i > 0.0 && self.tau_c > 0.0) {
            return Err(AeclError::Config("temperatures must be positive".into()));
        }
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(AeclError::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Multipliers of `[L_I, L_C, L_P, L_E1, L_E2]` in the stage objective.
    pub fn coefficients(&self, stage: Stage) -> [f64; 5] {
        let sign = self.entropy_sign.factor();
        match stage {
            Stage::InstanceOnly => [1.0, 0.0, 0.0, 0.0, 0.0],
            Stage::KMeansBootstrap => [self.lambda1, 0.0, self.lambda2, 0.0, 0.0],
            Stage::Joint => [
                self.lambda1,
                1.0,
                self.lambda2,
                sign * self.lambda3,
                sign * self.lambda4,
            ],
        }
    }
}

/// The three phases of the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    /// Instance loss only; the clustering head is frozen.
    InstanceOnly,
    /// Instance loss plus k-means pseudo-label supervision.
    KMeansBootstrap,
    /// Full objective with confidence-filtered pseudo-labels.
    Joint,
}

impl Stage {
    pub fn id(self) -> u8 {
        match self {
            Stage::InstanceOnly => 1,
            Stage::KMeansBootstrap => 2,
            Stage::Joint => 3,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Stage::InstanceOnly),
            2 => Some(Stage::KMeansBootstrap),
            3 => Some(Stage::Joint),
            _ => None,
        }
    }
}

/// Scalar loss components of one batch. Absent components were not
/// computed for the stage.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub l_i: Option<f64>,
    pub l_c: Option<f64>,
    pub l_p: Option<f64>,
    pub l_e1: Option<f64>,
    pub l_e2: Option<f64>,
}

impl LossComponents {
    fn as_array(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("L_I", self.l_i),
            ("L_C", self.l_c),
            ("L_P", self.l_p),
            ("L_E1", self.l_e1),
            ("L_E2", self.l_e2),
        ]
    }
}

/// Weighted stage objective:
/// stage 1 `L_I`; stage 2 `l1 L_I + l2 L_P`;
/// stage 3 `L_C + l1 L_I + l2 L_P + l3 L_E1 + l4 L_E2`.
pub fn composite_loss(stage: Stage, components: &LossComponents, weights: &LossWeights) -> Result<f64> {
    let coefs = weights.coefficients(stage);
    let needed: &[usize] = match stage {
        Stage::InstanceOnly => &[0],
        Stage::KMeansBootstrap => &[0, 2],
        Stage::Joint => &[0, 1, 2, 3, 4],
    };
    let values = components.as_array();
    let mut total = 0.0;
    for &k in needed {
        let (name, value) = values[k];
        let value = value.ok_or(AeclError::MissingComponent {
            component: name,
            stage: stage.id(),
        })?;
        total += coefs[k] * value;
    }
    Ok(total)
}
