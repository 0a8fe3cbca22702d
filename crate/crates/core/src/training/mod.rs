//! The three-stage training schedule.
//!
//! 1. Instance loss only; the clustering head is not updated.
//! 2. k-means labels on the original-view embeddings supervise the
//!    clustering head alongside the instance loss.
//! 3. Per-batch confidence-filtered pseudo-labels and the full objective.

pub mod adam;
pub mod config;
pub mod kmeans;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, Axis};

use crate::embeddings_io::{augment_features, batch_iterator, Batch, EmbeddingDataset};
use crate::error::{AeclError, Result};
use crate::evaluation::evaluate_dataset;
use crate::losses::{
    cluster_loss, entropy_balance_loss, entropy_sharpness_loss, instance_loss,
    positive_sets, pseudo_label_loss, InstanceInputs, InstanceTerms, LossComponents,
    LossWeights, Stage,
};
use crate::model::{
    backward_view, forward_batch, init_params, OutputGrads, ParameterSet, ViewCache,
};

pub use adam::{adam_step, AdamConfig, AdamState, ParamScope};
pub use config::{BalancePreset, PseudoMode, TrainConfig};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit};

/// Hard labels for a subset of batch rows (batch-local indices).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PseudoLabelSet {
    pub labeled: BTreeMap<usize, usize>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty()
    }

    /// Labels every row.
    pub fn from_labels(labels: &[usize]) -> Self {
        Self {
            labeled: labels.iter().copied().enumerate().collect(),
        }
    }
}

/// Labels the rows whose maximum probability strictly exceeds `threshold`
/// with their argmax (lowest index on ties).
pub fn generate_pseudo_labels(p0: &Array2<f64>, threshold: f64) -> PseudoLabelSet {
    let mut labeled = BTreeMap::new();
    for (i, row) in p0.axis_iter(Axis(0)).enumerate() {
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if row[best] > threshold {
            labeled.insert(i, best);
        }
    }
    PseudoLabelSet { labeled }
}

fn stage_pseudo_labels(p0: &Array2<f64>, config: &TrainConfig) -> PseudoLabelSet {
    match config.pseudo_mode {
        PseudoMode::Threshold => generate_pseudo_labels(p0, config.confidence_threshold),
        PseudoMode::Argmax => generate_pseudo_labels(p0, f64::NEG_INFINITY),
    }
}

/// Loss components and exact parameter gradients of the stage objective
/// for one batch. The positive sets and pseudo-labels are constants.
/// Stage 1 leaves the clustering-head gradients at zero.
pub fn compute_gradients(
    params: &ParameterSet,
    batch: &Batch,
    stage: Stage,
    pseudo: &PseudoLabelSet,
    weights: &LossWeights,
    terms: InstanceTerms,
) -> Result<(LossComponents, ParameterSet)> {
    let (c0, c1) = forward_batch(params, batch)?;
    gradients_from_cache(params, &c0, &c1, stage, pseudo, weights, terms)
}

pub(crate) fn gradients_from_cache(
    params: &ParameterSet,
    c0: &ViewCache,
    c1: &ViewCache,
    stage: Stage,
    pseudo: &PseudoLabelSet,
    weights: &LossWeights,
    terms: InstanceTerms,
) -> Result<(LossComponents, ParameterSet)> {
    let (o0, o1) = (&c0.out, &c1.out);
    let n = o0.z.nrows();
    let [k_i, k_c, k_p, k_e1, k_e2] = weights.coefficients(stage);
    let mut up0 = OutputGrads::zeros(n, params.dims);
    let mut up1 = OutputGrads::zeros(n, params.dims);
    let mut comps = LossComponents::default();

    let lam = positive_sets(&o0.p);
    let inputs = InstanceInputs {
        z0: &o0.z,
        z1: &o1.z,
        h0: &o0.h,
        h1: &o1.h,
        s0: &o0.s,
        s1: &o1.s,
    };
    let (l_i, g) = instance_loss(inputs, &lam, weights.tau_i, terms)?;
    comps.l_i = Some(l_i);
    up0.z.scaled_add(k_i, &g.z0);
    up1.z.scaled_add(k_i, &g.z1);
    up0.h.scaled_add(k_i, &g.h0);
    up1.h.scaled_add(k_i, &g.h1);
    up0.s.scaled_add(k_i, &g.s0);
    up1.s.scaled_add(k_i, &g.s1);

    if stage != Stage::InstanceOnly {
        let (l_p, g_p1) = pseudo_label_loss(pseudo, &o1.p)?;
        comps.l_p = Some(l_p);
        up1.p.scaled_add(k_p, &g_p1);
    }
    if stage == Stage::Joint {
        let (l_c, g0, g1) = cluster_loss(&o0.p, &o1.p, weights.tau_c)?;
        comps.l_c = Some(l_c);
        up0.p.scaled_add(k_c, &g0);
        up1.p.scaled_add(k_c, &g1);

        let (l_e1, g0) = entropy_sharpness_loss(&o0.p);
        comps.l_e1 = Some(l_e1);
        up0.p.scaled_add(k_e1, &g0);

        let (l_e2, g0, g1) = entropy_balance_loss(&o0.p, &o1.p)?;
        comps.l_e2 = Some(l_e2);
        up0.p.scaled_add(k_e2, &g0);
        up1.p.scaled_add(k_e2, &g1);
    }

    let mut grads = ParameterSet::zeros(params.dims);
    backward_view(params, c0, &up0, &mut grads);
    backward_view(params, c1, &up1, &mut grads);
    if stage == Stage::InstanceOnly {
        grads.zero_cluster_head();
    }
    Ok((comps, grads))
}

/// Metrics and mean loss components of one completed epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: Stage,
    pub l_i: Option<f64>,
    pub l_c: Option<f64>,
    pub l_p: Option<f64>,
    pub l_e1: Option<f64>,
    pub l_e2: Option<f64>,
    /// Mean stage objective over the epoch's batches.
    pub objective: f64,
    pub n_pseudo: usize,
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub ns: Option<f64>,
    pub ps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const CURVES_HEADER: &str = "epoch,stage,l_i,l_c,l_p,l_e1,l_e2,n_pseudo,acc,nmi,ns,ps";

/// Shortest round-trip decimal, or an empty field.
pub fn csv_float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVES_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.stage.id(),
                csv_float(r.l_i),
                csv_float(r.l_c),
                csv_float(r.l_p),
                csv_float(r.l_e1),
                csv_float(r.l_e2),
                r.n_pseudo,
                csv_float(r.acc),
                csv_float(r.nmi),
                csv_float(r.ns),
                csv_float(r.ps),
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Hooks into the training loop, for diagnostics and tests.
pub trait TrainObserver {
    /// Called after pseudo-labels are produced for a stage-2 or stage-3
    /// batch, with the original-view probabilities they came from.
    fn on_pseudo_labels(
        &mut self,
        _epoch: usize,
        _stage: Stage,
        _batch: &Batch,
        _p0: &Array2<f64>,
        _pseudo: &PseudoLabelSet,
    ) {
    }

    fn on_epoch_end(&mut self, _record: &EpochRecord, _params: &ParameterSet) {}
}

pub struct NoopObserver;

impl TrainObserver for NoopObserver {}

pub fn stage_for_epoch(epoch: usize, config: &TrainConfig) -> Stage {
    if epoch <= config.epochs_stage1 {
        Stage::InstanceOnly
    } else if epoch <= config.epochs_stage1 + config.epochs_stage2 {
        Stage::KMeansBootstrap
    } else {
        Stage::Joint
    }
}

/// Seed offset for the augmentation stream so that it differs from the
/// initialisation and shuffling streams.
const AUGMENT_SEED_SALT: u64 = 0x5eed_a46d;

/// Resolves the augmented view: the dataset's own when present, otherwise
/// feature-space augmentation of view0 with the configured settings.
pub fn prepare_views(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<EmbeddingDataset> {
    if dataset.view1.is_some() {
        return Ok(dataset.clone());
    }
    let view1 = augment_features(
        &dataset.view0,
        config.augment_noise,
        config.augment_mask,
        config.seed ^ AUGMENT_SEED_SALT,
    )?;
    let mut out = dataset.clone();
    out.view1 = Some(view1);
    Ok(out)
}

pub fn train(dataset: &EmbeddingDataset, config: &TrainConfig) -> Result<(ParameterSet, TrainHistory)> {
    train_with_observer(dataset, config, &mut NoopObserver)
}

pub fn train_with_observer(
    dataset: &EmbeddingDataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(ParameterSet, TrainHistory)> {
    config.validate()?;
    if config.dims.d1 != dataset.dim() {
        return Err(AeclError::ShapeMismatch(format!(
            "config expects {}-dimensional embeddings, dataset has {}",
            config.dims.d1,
            dataset.dim()
        )));
    }
    if dataset.len() < config.batch_size {
        return Err(AeclError::DatasetTooSmall {
            samples: dataset.len(),
            batch_size: config.batch_size,
        });
    }
    let data = prepare_views(dataset, config)?;
    let mut params = init_params(config.dims, config.seed)?;
    let mut adam = AdamState::new(&params);
    let mut history = TrainHistory::default();
    let mut kmeans_labels: Option<Vec<usize>> = None;

    for epoch in 1..=config.epochs_total {
        let stage = stage_for_epoch(epoch, config);
        if stage == Stage::KMeansBootstrap && kmeans_labels.is_none() {
            kmeans_labels = Some(kmeans(&data.view0, config.dims.m, config.seed)?);
        }
        let scope = match stage {
            Stage::InstanceOnly => ParamScope::EncoderSide,
            _ => ParamScope::All,
        };
        let batches = batch_iterator(&data, config.batch_size, config.seed, epoch as u64)?;
        let mut sums = [0.0f64; 5];
        let mut objective = 0.0;
        let mut n_pseudo = 0;
        for batch in &batches {
            let (c0, c1) = forward_batch(&params, batch)?;
            let pseudo = match stage {
                Stage::InstanceOnly => PseudoLabelSet::default(),
                Stage::KMeansBootstrap => {
                    let all = kmeans_labels.as_ref().expect("computed at stage entry");
                    let local: Vec<usize> = batch.indices.iter().map(|&i| all[i]).collect();
                    PseudoLabelSet::from_labels(&local)
                }
                Stage::Joint => stage_pseudo_labels(&c0.out.p, config),
            };
            if stage != Stage::InstanceOnly {
                observer.on_pseudo_labels(epoch, stage, batch, &c0.out.p, &pseudo);
            }
            n_pseudo += pseudo.len();
            let (comps, grads) = gradients_from_cache(
                &params,
                &c0,
                &c1,
                stage,
                &pseudo,
                &config.weights,
                config.instance_terms,
            )?;
            objective += crate::losses::composite_loss(stage, &comps, &config.weights)?;
            for (s, v) in sums.iter_mut().zip([
                comps.l_i, comps.l_c, comps.l_p, comps.l_e1, comps.l_e2,
            ]) {
                *s += v.unwrap_or(0.0);
            }
            adam_step(&mut params, &grads, &mut adam, config.lr_heads, &config.adam, scope)?;
        }
        if !params.is_finite() {
            return Err(AeclError::Diverged(epoch));
        }

        let nb = batches.len() as f64;
        let mean = |k: usize, present: bool| present.then(|| sums[k] / nb);
        let joint = stage == Stage::Joint;
        let mut record = EpochRecord {
            epoch,
            stage,
            l_i: mean(0, true),
            l_c: mean(1, joint),
            l_p: mean(2, stage != Stage::InstanceOnly),
            l_e1: mean(3, joint),
            l_e2: mean(4, joint),
            objective: objective / nb,
            n_pseudo,
            acc: None,
            nmi: None,
            ns: None,
            ps: None,
        };
        if let Some(labels) = &data.labels {
            let report = evaluate_dataset(&params, &data.view0, Some(labels), config.batch_size)?;
            record.acc = report.acc;
            record.nmi = report.nmi;
            record.ns = report.ns;
            record.ps = report.ps;
        }
        observer.on_epoch_end(&record, &params);
        history.records.push(record);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings_io::generate_synthetic;
    use crate::model::ModelDims;
    use ndarray::array;

    #[test]
    fn pseudo_label_threshold_examples() {
        let p = array![[0.97, 0.02, 0.01], [0.50, 0.30, 0.20]];
        let set = generate_pseudo_labels(&p, 0.95);
        assert_eq!(set.labeled, BTreeMap::from([(0, 0)]));

        let all = generate_pseudo_labels(&p, 0.0);
        assert_eq!(all.labeled, BTreeMap::from([(0, 0), (1, 0)]));

        let uniform = Array2::from_elem((5, 3), 1.0 / 3.0);
        assert!(generate_pseudo_labels(&uniform, 0.95).is_empty());
    }

    #[test]
    fn stage_boundaries() {
        let mut c = TrainConfig::new(ModelDims::new(2, 2, 2).unwrap());
        c.epochs_stage1 = 2;
        c.epochs_stage2 = 1;
        c.epochs_total = 5;
        let stages: Vec<u8> = (1..=5).map(|e| stage_for_epoch(e, &c).id()).collect();
        assert_eq!(stages, vec![1, 1, 2, 3, 3]);
    }

    fn tiny_setup() -> (EmbeddingDataset, TrainConfig) {
        let mut ds = generate_synthetic(2, 8, 4, 6.0, 0.5, 3).unwrap();
        ds.view1 = None;
        let mut c = TrainConfig::new(ModelDims::new(4, 3, 2).unwrap());
        c.batch_size = 8;
        c.epochs_total = 3;
        c.epochs_stage1 = 1;
        c.epochs_stage2 = 1;
        c.seed = 5;
        (ds, c)
    }

    #[test]
    fn stage_one_only_keeps_cluster_head() {
        let (ds, mut c) = tiny_setup();
        c.epochs_stage1 = 3;
        c.epochs_stage2 = 0;
        let init = init_params(c.dims, c.seed).unwrap();
        let (params, history) = train(&ds, &c).unwrap();
        assert_eq!(params.clu1, init.clu1);
        assert_eq!(params.clu2, init.clu2);
        assert_ne!(params.w_k1, init.w_k1);
        assert_eq!(history.records.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, c) = tiny_setup();
        let a = train(&ds, &c).unwrap();
        let b = train(&ds, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.to_csv(), b.1.to_csv());
    }

    #[test]
    fn history_records_every_epoch() {
        let (ds, c) = tiny_setup();
        let (_, h) = train(&ds, &c).unwrap();
        let epochs: Vec<usize> = h.records.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![1, 2, 3]);
        assert!(h.records.iter().all(|r| r.objective.is_finite()));
        assert_eq!(h.records[1].n_pseudo, 16);
        assert!(h.records[0].l_c.is_none());
        assert!(h.records[2].l_c.is_some());
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with(CURVES_HEADER));
    }

    #[test]
    fn budget_and_size_errors() {
        let (ds, mut c) = tiny_setup();
        c.epochs_stage1 = 3;
        let err = train(&ds, &c).unwrap_err();
        assert!(err.to_string().contains("stage budget exceeds total epochs"));

        let (ds, mut c) = tiny_setup();
        c.batch_size = 100;
        assert!(train(&ds, &c).is_err());
    }
}
