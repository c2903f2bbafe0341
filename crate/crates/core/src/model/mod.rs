//! The probing model: three MLP towers mapping a query vector and its
//! centroid-distance vector to one probing probability per partition.
//!
//! ```text
//! x_q = query_tower(norm(q))        d -> 128 -> 64  (ReLU)
//! x_I = dist_tower(norm(I))         B -> 64  -> 64  (ReLU)
//! p   = sigmoid(head(x_q ++ x_I))   128 -> 128 (ReLU) -> B
//! ```
//!
//! The model is generic over the float type so the same code runs in `f32`
//! for training and inference and in `f64` for gradient checking.

mod io;
mod train;

use std::fmt::Debug;
use std::ops::Range;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    bce_loss, build_training_set, evaluate, loss_gradients, predicted_nprobe, train, ProbeMetrics, TrainConfig, TrainLog,
    TrainLogRow, TrainingSet, PROB_EPS,
};

pub trait Scalar: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + Default + 'static {}

impl<T> Scalar for T where T: Float + FromPrimitive + ToPrimitive + Send + Sync + Debug + Default + 'static {}

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite f64 converts to any float")
}

/// Hidden and output widths of the three towers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Widths of the query tower layers; the last is the query feature size.
    pub query_widths: Vec<usize>,
    /// Widths of the centroid-distance tower layers.
    pub dist_widths: Vec<usize>,
    /// Hidden widths of the head; its output width is always `B`.
    pub head_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            query_widths: vec![128, 64],
            dist_widths: vec![64, 64],
            head_hidden: vec![128],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub dim: usize,
    pub partitions: usize,
    pub arch: Architecture,
    /// Threshold used while training (predicted nprobe, logged metrics).
    pub sigma_train: f32,
}

/// Per-feature standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> Standardizer<T> {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![T::zero(); width],
            std: vec![T::one(); width],
        }
    }

    /// Column statistics of a row-major `rows x width` matrix. Constant
    /// columns get a unit scale.
    pub fn fit(data: &[f32], width: usize) -> Self {
        let rows = (data.len() / width).max(1) as f64;
        let mut mean = vec![0.0f64; width];
        for row in data.chunks_exact(width) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += f64::from(v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0f64; width];
        for row in data.chunks_exact(width) {
            for ((s, &v), m) in var.iter_mut().zip(row).zip(&mean) {
                let t = f64::from(v) - m;
                *s += t * t;
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = (s / rows).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect::<Vec<_>>();
        Self {
            mean: mean.into_iter().map(cast).collect(),
            std: std.into_iter().map(cast).collect(),
        }
    }

    #[inline]
    fn apply_into(&self, raw: &[f32], out: &mut Vec<T>) {
        out.extend(
            raw.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(&x, (&m, &s))| (cast::<T>(f64::from(x)) - m) / s),
        );
    }

    fn cast<U: Scalar>(&self) -> Standardizer<U> {
        Standardizer {
            mean: self.mean.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
            std: self.std.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
        }
    }
}

/// A dense layer whose weights (`outputs x inputs`, row-major) and bias live
/// in the model's flat parameter vector starting at `offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Dense {
    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.inputs * self.outputs
    }

    fn bias(&self) -> Range<usize> {
        let w = self.weights().end;
        w..w + self.outputs
    }

    fn end(&self) -> usize {
        self.bias().end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Tower {
    layers: Vec<Dense>,
    relu_output: bool,
}

impl Tower {
    fn build(inputs: usize, widths: &[usize], relu_output: bool, offset: &mut usize) -> Self {
        let mut prev = inputs;
        let layers = widths
            .iter()
            .map(|&w| {
                let layer = Dense {
                    inputs: prev,
                    outputs: w,
                    offset: *offset,
                };
                *offset = layer.end();
                prev = w;
                layer
            })
            .collect();
        Self { layers, relu_output }
    }

    fn relu_at(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_output
    }

    fn params(&self) -> Range<usize> {
        self.layers.first().map_or(0, |l| l.offset)..self.layers.last().map_or(0, Dense::end)
    }

    fn out_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Returns each layer's post-activation output for a `batch x inputs`
    /// input.
    fn forward<T: Scalar>(&self, params: &[T], input: &[T], batch: usize) -> Vec<Vec<T>> {
        let mut outs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = if l == 0 { input } else { &outs[l - 1] };
            let w = &params[layer.weights()];
            let b = &params[layer.bias()];
            let mut y = Vec::with_capacity(batch * layer.outputs);
            for row in x.chunks_exact(layer.inputs) {
                for (wr, &bo) in w.chunks_exact(layer.inputs).zip(b) {
                    y.push(bo + dot(wr, row));
                }
            }
            if self.relu_at(l) {
                y.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            outs.push(y);
        }
        outs
    }

    /// Backpropagates `grad` (w.r.t. the tower output) into `grads` and
    /// returns the gradient w.r.t. the tower input.
    fn backward<T: Scalar>(
        &self,
        params: &[T],
        input: &[T],
        outs: &[Vec<T>],
        mut grad: Vec<T>,
        grads: &mut [T],
    ) -> Vec<T> {
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if self.relu_at(l) {
                for (g, &o) in grad.iter_mut().zip(&outs[l]) {
                    if o <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            let x = if l == 0 { input } else { &outs[l - 1] };
            let (ni, no) = (layer.inputs, layer.outputs);
            {
                let (gw, gb) = grads[layer.offset..layer.end()].split_at_mut(ni * no);
                for (grow, xrow) in grad.chunks_exact(no).zip(x.chunks_exact(ni)) {
                    for (o, &g) in grow.iter().enumerate() {
                        if g == T::zero() {
                            continue;
                        }
                        gb[o] = gb[o] + g;
                        axpy(g, xrow, &mut gw[o * ni..(o + 1) * ni]);
                    }
                }
            }
            let w = &params[layer.weights()];
            let mut gin = vec![T::zero(); x.len()];
            for (grow, girow) in grad.chunks_exact(no).zip(gin.chunks_exact_mut(ni)) {
                for (o, &g) in grow.iter().enumerate() {
                    if g != T::zero() {
                        axpy(g, &w[o * ni..(o + 1) * ni], girow);
                    }
                }
            }
            grad = gin;
        }
        grad
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Identifies one of the three towers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerKind {
    Query,
    Distance,
    Head,
}

/// Intermediate values of a batched forward pass, kept for backprop.
pub(crate) struct Forward<T> {
    batch: usize,
    q_in: Vec<T>,
    i_in: Vec<T>,
    q_outs: Vec<Vec<T>>,
    i_outs: Vec<Vec<T>>,
    joined: Vec<T>,
    head_outs: Vec<Vec<T>>,
}

impl<T: Scalar> Forward<T> {
    pub(crate) fn logits(&self) -> &[T] {
        self.head_outs.last().expect("head has layers")
    }
}

/// Gradients of a backward pass: parameters plus both raw inputs.
pub struct Backward<T> {
    pub params: Vec<T>,
    pub query: Vec<T>,
    pub dists: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbingModel<T = f32> {
    meta: ModelMeta,
    query_norm: Standardizer<T>,
    dist_norm: Standardizer<T>,
    query_tower: Tower,
    dist_tower: Tower,
    head: Tower,
    params: Vec<T>,
}

impl<T: Scalar> ProbingModel<T> {
    /// A freshly initialized model (He-uniform weights, zero biases, identity
    /// input normalization).
    pub fn new(meta: ModelMeta, seed: u64) -> Result<Self> {
        let mut model = Self::zeroed(meta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for tower in [&model.query_tower, &model.dist_tower, &model.head] {
            for layer in &tower.layers {
                let bound = (6.0 / layer.inputs as f64).sqrt();
                for w in &mut model.params[layer.weights()] {
                    *w = cast(rng.gen_range(-bound..bound));
                }
            }
        }
        Ok(model)
    }

    /// All parameters zero; used as the target of deserialization.
    pub(crate) fn zeroed(meta: ModelMeta) -> Result<Self> {
        let arch = &meta.arch;
        if meta.dim == 0 || meta.partitions == 0 {
            return Err(invalid("model needs d >= 1 and B >= 1"));
        }
        if arch.query_widths.is_empty()
            || arch.dist_widths.is_empty()
            || arch.query_widths.iter().chain(&arch.dist_widths).chain(&arch.head_hidden).any(|&w| w == 0)
        {
            return Err(invalid("tower widths must be non-empty and positive"));
        }
        if !(meta.sigma_train > 0.0 && meta.sigma_train < 1.0) {
            return Err(invalid(format!("sigma_train {} not in (0, 1)", meta.sigma_train)));
        }
        let mut offset = 0;
        let query_tower = Tower::build(meta.dim, &arch.query_widths, true, &mut offset);
        let dist_tower = Tower::build(meta.partitions, &arch.dist_widths, true, &mut offset);
        let mut head_widths = arch.head_hidden.clone();
        head_widths.push(meta.partitions);
        let head = Tower::build(
            query_tower.out_width() + dist_tower.out_width(),
            &head_widths,
            false,
            &mut offset,
        );
        Ok(Self {
            query_norm: Standardizer::identity(meta.dim),
            dist_norm: Standardizer::identity(meta.partitions),
            meta,
            query_tower,
            dist_tower,
            head,
            params: vec![T::zero(); offset],
        })
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn partitions(&self) -> usize {
        self.meta.partitions
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tower_params(&self, tower: TowerKind) -> Range<usize> {
        match tower {
            TowerKind::Query => self.query_tower.params(),
            TowerKind::Distance => self.dist_tower.params(),
            TowerKind::Head => self.head.params(),
        }
    }

    /// Parameter range of the head's final (output) layer.
    pub fn output_layer_params(&self) -> Range<usize> {
        let last = self.head.layers.last().expect("head has layers");
        last.offset..last.end()
    }

    pub fn normalizers(&self) -> (&Standardizer<T>, &Standardizer<T>) {
        (&self.query_norm, &self.dist_norm)
    }

    pub fn set_normalizers(&mut self, query: Standardizer<T>, dists: Standardizer<T>) -> Result<()> {
        let ok = |s: &Standardizer<T>, w: usize| {
            s.mean.len() == w && s.std.len() == w && s.std.iter().all(|v| *v > T::zero() && v.is_finite())
        };
        if !ok(&query, self.meta.dim) || !ok(&dists, self.meta.partitions) {
            return Err(invalid("normalizer widths or scales do not fit the model"));
        }
        self.query_norm = query;
        self.dist_norm = dists;
        Ok(())
    }

    /// The same model in another float type.
    pub fn cast<U: Scalar>(&self) -> ProbingModel<U> {
        ProbingModel {
            meta: self.meta.clone(),
            query_norm: self.query_norm.cast(),
            dist_norm: self.dist_norm.cast(),
            query_tower: self.query_tower.clone(),
            dist_tower: self.dist_tower.clone(),
            head: self.head.clone(),
            params: self.params.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
        }
    }

    fn check_inputs(&self, query: &[f32], dists: &[f32]) -> Result<()> {
        if query.len() != self.meta.dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.dim,
                actual: query.len(),
            });
        }
        if dists.len() != self.meta.partitions {
            return Err(Error::DimensionMismatch {
                expected: self.meta.partitions,
                actual: dists.len(),
            });
        }
        if let Some(pos) = query.iter().chain(dists).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(())
    }

    /// Batched forward pass over row-major `batch x d` queries and
    /// `batch x B` centroid distances (both un-normalized).
    pub(crate) fn forward_batch(&self, queries: &[f32], dists: &[f32], batch: usize) -> Forward<T> {
        let mut q_in = Vec::with_capacity(queries.len());
        for row in queries.chunks_exact(self.meta.dim) {
            self.query_norm.apply_into(row, &mut q_in);
        }
        let mut i_in = Vec::with_capacity(dists.len());
        for row in dists.chunks_exact(self.meta.partitions) {
            self.dist_norm.apply_into(row, &mut i_in);
        }
        let q_outs = self.query_tower.forward(&self.params, &q_in, batch);
        let i_outs = self.dist_tower.forward(&self.params, &i_in, batch);
        let (xq, xi) = (q_outs.last().unwrap(), i_outs.last().unwrap());
        let (wq, wi) = (self.query_tower.out_width(), self.dist_tower.out_width());
        let mut joined = Vec::with_capacity(batch * (wq + wi));
        for (a, b) in xq.chunks_exact(wq).zip(xi.chunks_exact(wi)) {
            joined.extend_from_slice(a);
            joined.extend_from_slice(b);
        }
        let head_outs = self.head.forward(&self.params, &joined, batch);
        Forward {
            batch,
            q_in,
            i_in,
            q_outs,
            i_outs,
            joined,
            head_outs,
        }
    }

    /// Backpropagates gradients w.r.t. the logits through all three towers.
    pub(crate) fn backward(&self, fwd: &Forward<T>, dlogits: Vec<T>) -> Backward<T> {
        let mut grads = vec![T::zero(); self.params.len()];
        let gjoined = self
            .head
            .backward(&self.params, &fwd.joined, &fwd.head_outs, dlogits, &mut grads);
        let (wq, wi) = (self.query_tower.out_width(), self.dist_tower.out_width());
        let mut gq = Vec::with_capacity(fwd.batch * wq);
        let mut gi = Vec::with_capacity(fwd.batch * wi);
        for row in gjoined.chunks_exact(wq + wi) {
            gq.extend_from_slice(&row[..wq]);
            gi.extend_from_slice(&row[wq..]);
        }
        let mut dq = self
            .query_tower
            .backward(&self.params, &fwd.q_in, &fwd.q_outs, gq, &mut grads);
        let mut di = self
            .dist_tower
            .backward(&self.params, &fwd.i_in, &fwd.i_outs, gi, &mut grads);
        for row in dq.chunks_exact_mut(self.meta.dim) {
            row.iter_mut().zip(&self.query_norm.std).for_each(|(g, &s)| *g = *g / s);
        }
        for row in di.chunks_exact_mut(self.meta.partitions) {
            row.iter_mut().zip(&self.dist_norm.std).for_each(|(g, &s)| *g = *g / s);
        }
        Backward {
            params: grads,
            query: dq,
            dists: di,
        }
    }

    /// Probing probabilities for one query and its centroid distances.
    pub fn forward(&self, query: &[f32], dists: &[f32]) -> Result<Vec<T>> {
        self.check_inputs(query, dists)?;
        let fwd = self.forward_batch(query, dists, 1);
        Ok(fwd.logits().iter().map(|&z| sigmoid(z)).collect())
    }

    /// Jacobian of the probabilities w.r.t. the raw inputs, as
    /// `(B x d, B x B)` row-major matrices.
    pub fn input_jacobian(&self, query: &[f32], dists: &[f32]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_inputs(query, dists)?;
        let fwd = self.forward_batch(query, dists, 1);
        let b = self.meta.partitions;
        let mut jq = Vec::with_capacity(b * self.meta.dim);
        let mut ji = Vec::with_capacity(b * b);
        for out in 0..b {
            let p = sigmoid(fwd.logits()[out]);
            let mut seed = vec![T::zero(); b];
            seed[out] = p * (T::one() - p);
            let back = self.backward(&fwd, seed);
            jq.extend(back.query);
            ji.extend(back.dists);
        }
        Ok((jq, ji))
    }
}

impl ProbingModel<f32> {
    /// Probabilities for many rows at once: returns a row-major `n x B`
    /// matrix. Rows are processed in fixed-size blocks in parallel.
    pub fn predict_batch(&self, queries: &[f32], dists: &[f32]) -> Result<Vec<f32>> {
        let (d, b) = (self.meta.dim, self.meta.partitions);
        if !queries.len().is_multiple_of(d) || !dists.len().is_multiple_of(b) || queries.len() / d != dists.len() / b {
            return Err(invalid("query and distance matrices disagree in shape"));
        }
        if let Some(pos) = queries.iter().chain(dists).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        const BLOCK: usize = 256;
        Ok(queries
            .par_chunks(BLOCK * d)
            .zip(dists.par_chunks(BLOCK * b))
            .flat_map_iter(|(q, i)| {
                let fwd = self.forward_batch(q, i, q.len() / d);
                fwd.logits().iter().map(|&z| sigmoid(z)).collect::<Vec<_>>()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(dim: usize, partitions: usize) -> ModelMeta {
        ModelMeta {
            dim,
            partitions,
            arch: Architecture {
                query_widths: vec![6, 4],
                dist_widths: vec![5, 3],
                head_hidden: vec![7],
            },
            sigma_train: 0.5,
        }
    }

    #[test]
    fn zero_output_layer_gives_one_half() {
        let mut m = ProbingModel::<f32>::new(meta(3, 4), 1).unwrap();
        let range = m.output_layer_params();
        m.params_mut()[range].fill(0.0);
        let p = m.forward(&[0.1, -2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(p, vec![0.5; 4]);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let m = ProbingModel::<f32>::new(meta(3, 4), 9).unwrap();
        let a = m.forward(&[0.1, 0.2, 0.3], &[1.0, 0.5, 0.2, 9.0]).unwrap();
        let b = m.forward(&[0.1, 0.2, 0.3], &[1.0, 0.5, 0.2, 9.0]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        let batch = m
            .predict_batch(&[0.1, 0.2, 0.3, 0.1, 0.2, 0.3], &[1.0, 0.5, 0.2, 9.0, 1.0, 0.5, 0.2, 9.0])
            .unwrap();
        assert_eq!(&batch[..4], a.as_slice());
        assert_eq!(&batch[4..], a.as_slice());
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = ProbingModel::<f32>::new(meta(3, 4), 9).unwrap();
        assert!(m.forward(&[0.1, 0.2], &[1.0; 4]).is_err());
        assert!(m.forward(&[0.1, 0.2, 0.3], &[1.0; 3]).is_err());
        assert!(matches!(
            m.forward(&[0.1, f32::NAN, 0.3], &[1.0; 4]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn param_layout_covers_all_towers() {
        let m = ProbingModel::<f32>::new(meta(3, 4), 9).unwrap();
        let q = m.tower_params(TowerKind::Query);
        let i = m.tower_params(TowerKind::Distance);
        let h = m.tower_params(TowerKind::Head);
        assert_eq!(q, 0..(3 * 6 + 6 + 6 * 4 + 4));
        assert_eq!(i.start, q.end);
        assert_eq!(h.start, i.end);
        assert_eq!(h.end, m.num_params());
        // Head: (4 + 3) -> 7 -> 4.
        assert_eq!(h.len(), 7 * 7 + 7 + 7 * 4 + 4);
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let m32 = ProbingModel::<f32>::new(meta(3, 4), 5).unwrap();
        let m = m32.cast::<f64>();
        let q = [0.3f32, -0.7, 1.1];
        let i = [0.5f32, 1.5, 2.5, 0.25];
        let (jq, ji) = m.input_jacobian(&q, &i).unwrap();
        // Central differences in f64 around f32-representable points.
        let eps = 1e-3f64;
        for j in 0..3 {
            let (mut qp, mut qm) = (q.map(f64::from), q.map(f64::from));
            qp[j] += eps;
            qm[j] -= eps;
            let pp = forward_f64(&m, &qp, &i.map(f64::from));
            let pm = forward_f64(&m, &qm, &i.map(f64::from));
            for b in 0..4 {
                let fd = (pp[b] - pm[b]) / (2.0 * eps);
                assert!((fd - jq[b * 3 + j]).abs() < 1e-6, "dq[{b},{j}] {fd} vs {}", jq[b * 3 + j]);
            }
        }
        for j in 0..4 {
            let (mut ip, mut im) = (i.map(f64::from), i.map(f64::from));
            ip[j] += eps;
            im[j] -= eps;
            let pp = forward_f64(&m, &q.map(f64::from), &ip);
            let pm = forward_f64(&m, &q.map(f64::from), &im);
            for b in 0..4 {
                let fd = (pp[b] - pm[b]) / (2.0 * eps);
                assert!((fd - ji[b * 4 + j]).abs() < 1e-6);
            }
        }
    }

    /// Forward pass on f64 inputs, bypassing the f32 input interface.
    fn forward_f64(m: &ProbingModel<f64>, q: &[f64], i: &[f64]) -> Vec<f64> {
        let norm = |x: &[f64], s: &Standardizer<f64>| -> Vec<f64> {
            x.iter().zip(s.mean.iter().zip(&s.std)).map(|(v, (mu, sd))| (v - mu) / sd).collect()
        };
        let qn = norm(q, &m.query_norm);
        let inn = norm(i, &m.dist_norm);
        let xq = m.query_tower.forward(&m.params, &qn, 1).pop().unwrap();
        let xi = m.dist_tower.forward(&m.params, &inn, 1).pop().unwrap();
        let joined: Vec<f64> = xq.into_iter().chain(xi).collect();
        m.head
            .forward(&m.params, &joined, 1)
            .pop()
            .unwrap()
            .into_iter()
            .map(sigmoid)
            .collect()
    }
}
