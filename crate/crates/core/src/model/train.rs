//! Training data, the binary cross-entropy objective and mini-batch Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{cast, sigmoid, Architecture, ModelMeta, ProbingModel, Scalar, Standardizer};
use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::oracle::{knn_count_distribution, scan_knn, ProbingLabel};
use crate::partition::{centroid_distances, LayoutKind, PartitionLayout};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the loss.
pub const PROB_EPS: f64 = 1e-7;

/// Rows per gradient work unit; partial gradients are summed in unit order.
const GRAD_CHUNK: usize = 64;

/// Training examples: each row is a query (a sampled data point), its
/// centroid distances, and the kNN counts per partition that define its
/// label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    queries: Dataset,
    dists: Vec<f32>,
    counts: Vec<u32>,
    partitions: usize,
    k: usize,
}

impl TrainingSet {
    pub fn new(queries: Dataset, dists: Vec<f32>, counts: Vec<u32>, partitions: usize, k: usize) -> Result<Self> {
        let n = queries.len();
        if partitions == 0 || dists.len() != n * partitions || counts.len() != n * partitions {
            return Err(invalid("training set matrices disagree in shape"));
        }
        if let Some(row) = counts.chunks_exact(partitions).position(|c| c.iter().all(|&v| v == 0)) {
            return Err(invalid(format!("training example {row} has an empty label")));
        }
        if let Some(pos) = dists.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self {
            queries,
            dists,
            counts,
            partitions,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn queries(&self) -> &Dataset {
        &self.queries
    }

    pub fn dists(&self, i: usize) -> &[f32] {
        &self.dists[i * self.partitions..(i + 1) * self.partitions]
    }

    pub fn counts(&self, i: usize) -> &[u32] {
        &self.counts[i * self.partitions..(i + 1) * self.partitions]
    }

    pub fn label(&self, i: usize) -> ProbingLabel {
        ProbingLabel {
            mask: self.counts(i).iter().map(|&c| c > 0).collect(),
        }
    }

    /// Mean number of kNN partitions over the examples.
    pub fn mean_optimal_nprobe(&self) -> f64 {
        let total: usize = self.counts.iter().filter(|&&c| c > 0).count();
        total as f64 / self.len() as f64
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let d = self.queries.dim();
        let mut q = Vec::with_capacity(idx.len() * d);
        let mut i = Vec::with_capacity(idx.len() * self.partitions);
        for &r in idx {
            q.extend_from_slice(self.queries.row(r));
            i.extend_from_slice(self.dists(r));
        }
        (q, i)
    }
}

/// Labels each sampled point by the partitions of its kNN among the other
/// sampled points. `layout` must be a hard layout over `dataset`.
pub fn build_training_set(
    dataset: &Dataset,
    train_ids: &[u32],
    layout: &PartitionLayout,
    k: usize,
) -> Result<TrainingSet> {
    if layout.kind() != LayoutKind::Hard {
        return Err(invalid("training labels need a hard layout"));
    }
    if layout.num_points() != dataset.len() {
        return Err(invalid("layout does not index this dataset"));
    }
    if k == 0 || k >= train_ids.len() {
        return Err(invalid(format!(
            "k={k} must be in 1..{} (training sample size)",
            train_ids.len()
        )));
    }
    let mut sorted = train_ids.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("training ids must be distinct"));
    }
    let subset = dataset.select(train_ids)?;
    let b = layout.partitions();
    let rows: Vec<Result<(Vec<f32>, Vec<u32>)>> = (0..subset.len())
        .into_par_iter()
        .map(|local| {
            let row = subset.row(local);
            let knn = scan_knn(&subset, row, k, Some(local as u32));
            let global: Vec<u32> = knn.ids.iter().map(|&l| train_ids[l as usize]).collect();
            let dist = knn_count_distribution(layout, &global)?;
            Ok((centroid_distances(row, layout.centroids())?, dist.counts))
        })
        .collect();
    let mut dists = Vec::with_capacity(subset.len() * b);
    let mut counts = Vec::with_capacity(subset.len() * b);
    for r in rows {
        let (d, c) = r?;
        dists.extend(d);
        counts.extend(c);
    }
    TrainingSet::new(subset, dists, counts, b, k)
}

/// Summed binary cross-entropy over partitions for one example.
pub fn bce_loss(label: &ProbingLabel, probs: &[f32]) -> Result<f64> {
    if label.mask.len() != probs.len() {
        return Err(Error::DimensionMismatch {
            expected: label.mask.len(),
            actual: probs.len(),
        });
    }
    Ok(label
        .mask
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = f64::from(p).clamp(PROB_EPS, 1.0 - PROB_EPS);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// Number of partitions with probability at least `sigma`.
pub fn predicted_nprobe(probs: &[f32], sigma: f32) -> usize {
    probs.iter().filter(|&&p| p >= sigma).count()
}

/// Loss sum and unnormalized logit gradients for a block of examples.
fn block_loss_and_dlogits<T: Scalar>(logits: &[T], counts: &[u32]) -> (f64, Vec<T>) {
    let (eps, one) = (cast::<T>(PROB_EPS), T::one());
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &c) in logits.iter().zip(counts) {
        let p = sigmoid(z);
        let y = if c > 0 { one } else { T::zero() };
        let clamped = p.max(eps).min(one - eps);
        let term = if c > 0 { -clamped.ln() } else { -(one - clamped).ln() };
        loss += term.to_f64().unwrap_or(f64::NAN);
        grad.push(if clamped != p { T::zero() } else { p - y });
    }
    (loss, grad)
}

/// Mean loss and exact gradients of the mean loss over the examples `idx`.
pub fn loss_gradients<T: Scalar>(model: &ProbingModel<T>, ts: &TrainingSet, idx: &[usize]) -> Result<(f64, Vec<T>)> {
    if idx.is_empty() {
        return Err(invalid("empty batch"));
    }
    if ts.partitions() != model.partitions() || ts.queries().dim() != model.dim() {
        return Err(invalid("training set does not match the model shape"));
    }
    let b = ts.partitions();
    let partials: Vec<(f64, Vec<T>)> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|block| {
            let (q, i) = ts.gather(block);
            let fwd = model.forward_batch(&q, &i, block.len());
            let mut counts = Vec::with_capacity(block.len() * b);
            for &r in block {
                counts.extend_from_slice(ts.counts(r));
            }
            let (loss, dlogits) = block_loss_and_dlogits(fwd.logits(), &counts);
            (loss, model.backward(&fwd, dlogits).params)
        })
        .collect();
    let scale = T::one() / cast::<T>(idx.len() as f64);
    let mut grads = vec![T::zero(); model.num_params()];
    let mut loss = 0.0;
    for (l, g) in partials {
        loss += l;
        grads.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b);
    }
    grads.iter_mut().for_each(|g| *g = *g * scale);
    Ok((loss / idx.len() as f64, grads))
}

impl ProbingModel<f32> {
    /// A new model sized for `ts`, with input standardization fitted on it.
    pub fn for_training_set(ts: &TrainingSet, arch: Architecture, sigma_train: f32, seed: u64) -> Result<Self> {
        let mut model = Self::new(
            ModelMeta {
                dim: ts.queries().dim(),
                partitions: ts.partitions(),
                arch,
                sigma_train,
            },
            seed,
        )?;
        model.set_normalizers(
            Standardizer::fit(ts.queries().as_slice(), ts.queries().dim()),
            Standardizer::fit(&ts.dists, ts.partitions()),
        )?;
        Ok(model)
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f32,
    pub seed: u64,
    pub sigma_train: f32,
    /// Log a row every this many batches.
    pub log_every: usize,
    /// Examples used to compute the logged metrics.
    pub log_sample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 512,
            epochs: 10,
            lr: 1e-3,
            seed: 0,
            sigma_train: 0.5,
            log_every: 10,
            log_sample: 1000,
        }
    }
}

/// Probing quality of a model on labelled examples at threshold `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeMetrics {
    /// Mean summed BCE.
    pub loss: f64,
    /// Fraction of each example's kNN lying in predicted partitions
    /// (Recall@k of probing those partitions on the labelling layout).
    pub recall: f64,
    /// Mean number of predicted partitions.
    pub mean_nprobe: f64,
    /// Fraction of each example's kNN partitions that were predicted.
    pub hit_rate: f64,
}

pub fn evaluate(model: &ProbingModel<f32>, ts: &TrainingSet, idx: &[usize], sigma: f32) -> Result<ProbeMetrics> {
    if idx.is_empty() {
        return Err(invalid("no examples to evaluate"));
    }
    let (q, i) = ts.gather(idx);
    let probs = model.predict_batch(&q, &i)?;
    let b = ts.partitions();
    let mut m = ProbeMetrics::default();
    for (row, &r) in probs.chunks_exact(b).zip(idx) {
        let counts = ts.counts(r);
        m.loss += bce_loss(&ts.label(r), row)?;
        let (mut covered, mut hits, mut predicted) = (0u32, 0usize, 0usize);
        for (&p, &c) in row.iter().zip(counts) {
            if p >= sigma {
                predicted += 1;
                covered += c;
                hits += usize::from(c > 0);
            }
        }
        let positives = counts.iter().filter(|&&c| c > 0).count();
        let total: u32 = counts.iter().sum();
        m.recall += f64::from(covered) / f64::from(total);
        m.mean_nprobe += predicted as f64;
        m.hit_rate += hits as f64 / positives as f64;
    }
    let n = idx.len() as f64;
    m.loss /= n;
    m.recall /= n;
    m.mean_nprobe /= n;
    m.hit_rate /= n;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub epoch: usize,
    /// Mean training batch loss since the previous row.
    pub loss: f64,
    pub recall: f64,
    pub mean_nprobe: f64,
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
    /// Mean loss of each epoch's batches.
    pub epoch_loss: Vec<f64>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mini-batch Adam on the mean BCE. Batch order comes from `cfg.seed`, so a
/// run is reproducible bit-for-bit.
pub fn train(model: &mut ProbingModel<f32>, ts: &TrainingSet, cfg: &TrainConfig) -> Result<TrainLog> {
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.log_every == 0 {
        return Err(invalid("batch_size, epochs and log_every must be positive"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(invalid(format!("learning rate {} must be positive", cfg.lr)));
    }
    if !(cfg.sigma_train > 0.0 && cfg.sigma_train < 1.0) {
        return Err(invalid(format!("sigma_train {} not in (0, 1)", cfg.sigma_train)));
    }
    if ts.is_empty() {
        return Err(invalid("empty training set"));
    }
    model.meta.sigma_train = cfg.sigma_train;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ts.len()).collect();
    let mut eval_idx = order.clone();
    eval_idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_1095));
    eval_idx.truncate(cfg.log_sample.clamp(1, ts.len()));

    let mut adam = Adam::new(model.num_params());
    let mut log = TrainLog::default();
    let (mut step, mut pending, mut pending_loss) = (0usize, 0usize, 0.0f64);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let batches = order.chunks(cfg.batch_size);
        let nbatches = batches.len();
        for (bi, batch) in batches.enumerate() {
            let (loss, grads) = loss_gradients(model, ts, batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            adam.step(&mut model.params, &grads, cfg.lr);
            epoch_loss += loss;
            pending_loss += loss;
            pending += 1;
            step += 1;
            let last = epoch + 1 == cfg.epochs && bi + 1 == nbatches;
            if step % cfg.log_every == 0 || last {
                let m = evaluate(model, ts, &eval_idx, cfg.sigma_train)?;
                log.rows.push(TrainLogRow {
                    step,
                    epoch,
                    loss: pending_loss / pending as f64,
                    recall: m.recall,
                    mean_nprobe: m.mean_nprobe,
                    hit_rate: m.hit_rate,
                });
                pending = 0;
                pending_loss = 0.0;
            }
        }
        log.epoch_loss.push(epoch_loss / nbatches as f64);
    }
    Ok(log)
}
