//! Frozen-backbone feature tables and training of the dense classification
//! head (softmax regression with mini-batch SGD and momentum).
//!
//! Training math runs in `f64`. Weights are stored row-major `D×K`, the same
//! layout as the model's `head/W` slot.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_image, preprocess, Partition, SplitManifest};
use crate::error::{Error, Result};
use crate::metrics::{macro_average, per_class_metrics, ConfusionMatrix};
use crate::model::{ModelGraph, Tap};
use crate::tensor::Tensor;
use crate::weights::{read_archive, WeightArchive};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub embedding: Vec<f32>,
    pub class_index: usize,
    pub partition: Partition,
}

/// Backbone embeddings for a manifest, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub tap: Tap,
    pub dim: usize,
    pub class_names: Vec<String>,
    rows: Vec<FeatureRow>,
    index: HashMap<String, usize>,
    /// Manifest paths that failed to decode.
    pub skipped: Vec<String>,
}

impl FeatureTable {
    pub fn new(tap: Tap, dim: usize, class_names: Vec<String>) -> Self {
        Self {
            tap,
            dim,
            class_names,
            rows: Vec::new(),
            index: HashMap::new(),
            skipped: Vec::new(),
        }
    }

    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn push(&mut self, row: FeatureRow) -> Result<()> {
        if row.embedding.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "feature row",
                left: vec![row.embedding.len()],
                right: vec![self.dim],
            });
        }
        if row.class_index >= self.num_classes() {
            return Err(Error::ClassOutOfRange {
                index: row.class_index,
                classes: self.num_classes(),
            });
        }
        if !row.embedding.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature row"));
        }
        if self.index.contains_key(&row.id) {
            return Err(Error::invalid(format!("duplicate feature id `{}`", row.id)));
        }
        self.index.insert(row.id.clone(), self.rows.len());
        self.rows.push(row);
        Ok(())
    }

    pub fn partition(&self, partition: Partition) -> impl Iterator<Item = &FeatureRow> {
        self.rows.iter().filter(move |r| r.partition == partition)
    }

    pub fn get(&self, id: &str) -> Option<&FeatureRow> {
        self.index.get(id).map(|&i| &self.rows[i])
    }

    /// Archive layout: `tap/<name>`, `class/<NN>/<name>`, then per row
    /// `features/<id>` (`[D]`) and `meta/<id>` (`[class_index, partition]`,
    /// partition 0 = train, 1 = val).
    pub fn to_archive(&self) -> WeightArchive {
        let mut a = WeightArchive::new();
        let one = |v: f32| Tensor::new(vec![1], vec![v]).expect("scalar tensor");
        a.insert(format!("tap/{}", self.tap), one(self.dim as f32)).expect("fresh archive");
        for (i, name) in self.class_names.iter().enumerate() {
            a.insert(format!("class/{i:02}/{name}"), one(i as f32)).expect("unique class");
        }
        for r in &self.rows {
            let emb = Tensor::new(vec![self.dim], r.embedding.clone()).expect("row length checked");
            let part = match r.partition {
                Partition::Train => 0.0,
                Partition::Val => 1.0,
            };
            let meta = Tensor::new(vec![2], vec![r.class_index as f32, part]).expect("meta tensor");
            a.insert(format!("features/{}", r.id), emb).expect("unique ids");
            a.insert(format!("meta/{}", r.id), meta).expect("unique ids");
        }
        a
    }

    pub fn from_archive(archive: &WeightArchive) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            context: "feature table".into(),
            message: m,
        };
        let mut tap = None;
        let mut classes = Vec::new();
        let mut rows = Vec::new();
        for e in archive.entries() {
            if let Some(name) = e.name.strip_prefix("tap/") {
                tap = Some((name.parse::<Tap>()?, e.tensor.data()[0] as usize));
            } else if let Some(rest) = e.name.strip_prefix("class/") {
                let (_, name) = rest.split_once('/').ok_or_else(|| bad(format!("bad class entry `{}`", e.name)))?;
                classes.push(name.to_owned());
            } else if let Some(id) = e.name.strip_prefix("features/") {
                let meta = archive
                    .get(&format!("meta/{id}"))
                    .ok_or_else(|| bad(format!("row `{id}` has no meta entry")))?;
                let [class, part] = meta.data() else {
                    return Err(bad(format!("meta for `{id}` must have 2 values")));
                };
                rows.push(FeatureRow {
                    id: id.to_owned(),
                    embedding: e.tensor.data().to_vec(),
                    class_index: *class as usize,
                    partition: if *part == 0.0 { Partition::Train } else { Partition::Val },
                });
            }
        }
        let (tap, dim) = tap.ok_or_else(|| bad("missing `tap/<name>` entry".into()))?;
        let mut table = FeatureTable::new(tap, dim, classes);
        for r in rows {
            table.push(r)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_archive().write(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&read_archive(path)?)
    }
}

/// Embeds every manifest image at `tap`. Row ids are manifest paths; a
/// repeated path gets a `#<n>` suffix. Undecodable images are logged and
/// listed in [`FeatureTable::skipped`].
pub fn extract_features(
    model: &ModelGraph,
    manifest: &SplitManifest,
    root: impl AsRef<Path>,
    tap: Tap,
) -> Result<FeatureTable> {
    let root = root.as_ref();
    let mut table = FeatureTable::new(tap, tap.embedding_dim(), manifest.classes.clone());
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for entry in &manifest.entries {
        let input = match load_image(root.join(&entry.path)).and_then(|img| preprocess(&img)) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.path);
                table.skipped.push(entry.path.clone());
                continue;
            }
        };
        let embedding = model.embed(&input.unsqueeze(), tap)?.into_data();
        let n = seen.entry(&entry.path).or_insert(0);
        *n += 1;
        let id = if *n == 1 { entry.path.clone() } else { format!("{}#{n}", entry.path) };
        table.push(FeatureRow {
            id,
            embedding,
            class_index: entry.class_index,
            partition: entry.partition,
        })?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub dim: usize,
    pub classes: usize,
    /// Row-major `dim × classes`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights these are (0 = initial weights).
    pub best_epoch: usize,
}

impl HeadWeights {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            w: vec![0.0; dim * classes],
            b: vec![0.0; classes],
            history: Vec::new(),
            best_epoch: 0,
        }
    }

    pub fn from_model(model: &ModelGraph) -> Self {
        let k = model.num_classes();
        let mut h = Self::zeros(model.head_weights().len() / k, k);
        h.w = model.head_weights().data().iter().map(|&v| f64::from(v)).collect();
        h.b = model.head_bias().data().iter().map(|&v| f64::from(v)).collect();
        h
    }

    pub fn tensors(&self) -> (Tensor, Tensor) {
        let w = Tensor::new(vec![self.dim, self.classes], self.w.iter().map(|&v| v as f32).collect());
        let b = Tensor::new(vec![self.classes], self.b.iter().map(|&v| v as f32).collect());
        (w.expect("head shape"), b.expect("head shape"))
    }

    /// Installs this head into `model`; the backbone is untouched.
    pub fn apply_to(&self, model: ModelGraph) -> Result<ModelGraph> {
        let (w, b) = self.tensors();
        model.with_head(w, b)
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        let mut z = self.b.clone();
        for (d, &xd) in x.iter().enumerate() {
            let xd = f64::from(xd);
            let row = &self.w[d * self.classes..(d + 1) * self.classes];
            for (zk, wk) in z.iter_mut().zip(row) {
                *zk += xd * wk;
            }
        }
        z
    }

    /// Argmax of the logits, lowest index on ties.
    pub fn predict(&self, x: &[f32]) -> usize {
        argmax(&self.logits(x))
    }

    /// `head/W`, `head/b`, `head/history` (`[E, 4]`: epoch, learning rate,
    /// train loss, val macro-F1) and `head/best_epoch`.
    pub fn to_archive(&self) -> WeightArchive {
        let (w, b) = self.tensors();
        let mut a = WeightArchive::new();
        a.insert("head/W", w).expect("fresh archive");
        a.insert("head/b", b).expect("fresh archive");
        if !self.history.is_empty() {
            let data = self
                .history
                .iter()
                .flat_map(|r| [r.epoch as f64, r.learning_rate, r.train_loss, r.val_macro_f1])
                .map(|v| v as f32)
                .collect();
            a.insert("head/history", Tensor::new(vec![self.history.len(), 4], data).expect("history"))
                .expect("fresh archive");
        }
        a.insert("head/best_epoch", Tensor::new(vec![1], vec![self.best_epoch as f32]).expect("scalar"))
            .expect("fresh archive");
        a
    }

    pub fn from_archive(archive: &WeightArchive) -> Result<Self> {
        let w = archive.get("head/W").ok_or_else(|| Error::MissingSlot("head/W".into()))?;
        let b = archive.get("head/b").ok_or_else(|| Error::MissingSlot("head/b".into()))?;
        if w.rank() != 2 || b.shape() != [w.shape()[1]] {
            return Err(Error::SlotShape {
                slot: "head/b".into(),
                expected: vec![w.shape().get(1).copied().unwrap_or(0)],
                actual: b.shape().to_vec(),
            });
        }
        let mut h = Self::zeros(w.shape()[0], w.shape()[1]);
        h.w = w.data().iter().map(|&v| f64::from(v)).collect();
        h.b = b.data().iter().map(|&v| f64::from(v)).collect();
        if let Some(hist) = archive.get("head/history") {
            h.history = hist
                .data()
                .chunks(4)
                .map(|r| EpochRecord {
                    epoch: r[0] as usize,
                    learning_rate: f64::from(r[1]),
                    train_loss: f64::from(r[2]),
                    val_macro_f1: f64::from(r[3]),
                })
                .collect();
        }
        if let Some(best) = archive.get("head/best_epoch") {
            h.best_epoch = best.data()[0] as usize;
        }
        Ok(h)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_archive().write(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&read_archive(path)?)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// 1-based epoch from which the rate is multiplied by `decay_factor`.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement (0 = never).
    pub patience: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            decay_epoch: 15,
            decay_factor: 0.1,
            seed: 0,
            patience: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::invalid("decay factor must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.decay_epoch > 0 && epoch >= self.decay_epoch {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

/// Mean softmax cross-entropy over a batch and its gradients.
///
/// `x` holds `B` rows of `head.dim` features, `y` their labels.
pub fn loss_and_grad(head: &HeadWeights, x: &[f32], y: &[usize]) -> Result<LossGrad> {
    let (d, k) = (head.dim, head.classes);
    if y.is_empty() {
        return Err(Error::invalid("loss_and_grad needs a non-empty batch"));
    }
    if x.len() != y.len() * d {
        return Err(Error::ShapeMismatch {
            op: "loss_and_grad",
            left: vec![x.len()],
            right: vec![y.len(), d],
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= k) {
        return Err(Error::ClassOutOfRange { index: bad, classes: k });
    }
    let n = y.len() as f64;
    let mut out = LossGrad {
        loss: 0.0,
        dw: vec![0.0; d * k],
        db: vec![0.0; k],
    };
    for (row, &label) in x.chunks(d).zip(y) {
        let z = head.logits(row);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        out.loss += log_norm - z[label];
        let g: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(c, v)| ((v - log_norm).exp() - if c == label { 1.0 } else { 0.0 }) / n)
            .collect();
        for (db, gc) in out.db.iter_mut().zip(&g) {
            *db += gc;
        }
        for (j, &xj) in row.iter().enumerate() {
            let xj = f64::from(xj);
            for (dw, gc) in out.dw[j * k..(j + 1) * k].iter_mut().zip(&g) {
                *dw += xj * gc;
            }
        }
    }
    out.loss /= n;
    Ok(out)
}

fn gather<'a>(rows: impl Iterator<Item = &'a FeatureRow>) -> (Vec<f32>, Vec<usize>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in rows {
        x.extend_from_slice(&r.embedding);
        y.push(r.class_index);
    }
    (x, y)
}

/// Macro-F1 of `head` on the given rows.
pub fn macro_f1(head: &HeadWeights, x: &[f32], y: &[usize], class_names: &[String]) -> f64 {
    let mut m = ConfusionMatrix::new(class_names.to_vec());
    for (row, &label) in x.chunks(head.dim).zip(y) {
        m.add(label, head.predict(row)).expect("labels validated");
    }
    macro_average(&per_class_metrics(&m)).f1
}

/// Fraction of rows classified correctly.
pub fn accuracy<'a>(head: &HeadWeights, rows: impl IntoIterator<Item = &'a FeatureRow>) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for r in rows {
        hit += usize::from(head.predict(&r.embedding) == r.class_index);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Trains a zero-initialised head on the train partition and returns the
/// weights with the best validation macro-F1 (earliest epoch on ties),
/// carrying the full per-epoch history.
pub fn train_head(features: &FeatureTable, hp: &Hyperparams) -> Result<HeadWeights> {
    train_head_from(features, hp, HeadWeights::zeros(features.dim, features.num_classes()))
}

/// [`train_head`] from explicit initial weights.
pub fn train_head_from(features: &FeatureTable, hp: &Hyperparams, init: HeadWeights) -> Result<HeadWeights> {
    hp.validate()?;
    if init.dim != features.dim || init.classes != features.num_classes() {
        return Err(Error::ShapeMismatch {
            op: "train_head",
            left: vec![init.dim, init.classes],
            right: vec![features.dim, features.num_classes()],
        });
    }
    let (train_x, train_y) = gather(features.partition(Partition::Train));
    let (val_x, val_y) = gather(features.partition(Partition::Val));
    if train_y.is_empty() || val_y.is_empty() {
        return Err(Error::Dataset(format!(
            "training needs both partitions: {} train rows, {} val rows",
            train_y.len(),
            val_y.len()
        )));
    }
    let d = features.dim;
    let mut head = HeadWeights { history: Vec::new(), best_epoch: 0, ..init };
    let mut best = (macro_f1(&head, &val_x, &val_y, &features.class_names), head.w.clone(), head.b.clone(), 0);
    let mut vw = vec![0.0; head.w.len()];
    let mut vb = vec![0.0; head.b.len()];
    let mut order: Vec<usize> = (0..train_y.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut bx = Vec::with_capacity(hp.batch_size * d);
    let mut by = Vec::with_capacity(hp.batch_size);
    let mut stale = 0;

    for epoch in 1..=hp.epochs {
        let lr = hp.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hp.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.extend_from_slice(&train_x[i * d..(i + 1) * d]);
                by.push(train_y[i]);
            }
            let g = loss_and_grad(&head, &bx, &by)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged { epoch, loss: g.loss });
            }
            loss_sum += g.loss * batch.len() as f64;
            for ((w, v), dw) in head.w.iter_mut().zip(&mut vw).zip(&g.dw) {
                *v = hp.momentum * *v - lr * dw;
                *w += *v;
            }
            for ((b, v), db) in head.b.iter_mut().zip(&mut vb).zip(&g.db) {
                *v = hp.momentum * *v - lr * db;
                *b += *v;
            }
        }
        let train_loss = loss_sum / train_y.len() as f64;
        if !train_loss.is_finite() || !head.w.iter().chain(&head.b).all(|v| v.is_finite()) {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let val_f1 = macro_f1(&head, &val_x, &val_y, &features.class_names);
        log::info!("epoch {epoch}: lr {lr:.2e} train loss {train_loss:.6} val macro-F1 {val_f1:.4}");
        head.history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            val_macro_f1: val_f1,
        });
        if val_f1 > best.0 {
            best = (val_f1, head.w.clone(), head.b.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if hp.patience > 0 && stale >= hp.patience {
                log::info!("no validation improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (_, w, b, best_epoch) = best;
    Ok(HeadWeights { w, b, best_epoch, ..head })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(Vec<f32>, usize, Partition)], k: usize) -> FeatureTable {
        let mut t = FeatureTable::new(Tap::Pooled, rows[0].0.len(), (0..k).map(|i| format!("c{i}")).collect());
        for (i, (e, c, p)) in rows.iter().enumerate() {
            t.push(FeatureRow {
                id: format!("r{i}"),
                embedding: e.clone(),
                class_index: *c,
                partition: *p,
            })
            .unwrap();
        }
        t
    }

    #[test]
    fn zero_head_loss_is_log_k() {
        let head = HeadWeights::zeros(5, 19);
        let x = vec![0.3f32; 10];
        let g = loss_and_grad(&head, &x, &[4, 18]).unwrap();
        assert!((g.loss - 19f64.ln()).abs() < 1e-12);
        assert!((g.loss - 2.944_438_979_166_440_3).abs() < 1e-12);
    }

    #[test]
    fn one_hot_softmax_is_stationary() {
        // Huge margin: p equals the one-hot target to double precision.
        let mut head = HeadWeights::zeros(1, 3);
        head.b = vec![0.0, 1000.0, 0.0];
        let g = loss_and_grad(&head, &[1.0], &[1]).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.dw.iter().chain(&g.db).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_batches() {
        let head = HeadWeights::zeros(2, 3);
        assert!(matches!(
            loss_and_grad(&head, &[0.0, 0.0], &[3]),
            Err(Error::ClassOutOfRange { index: 3, classes: 3 })
        ));
        assert!(loss_and_grad(&head, &[], &[]).is_err());
        assert!(loss_and_grad(&head, &[0.0], &[0]).is_err());
    }

    #[test]
    fn feature_table_round_trips_through_archive() {
        let rows = vec![
            (vec![1.0, 2.0], 0, Partition::Train),
            (vec![-1.0, 0.5], 1, Partition::Val),
        ];
        let t = table(&rows, 2);
        let back = FeatureTable::from_archive(&WeightArchive::from_bytes(&t.to_archive().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn table_rejects_bad_rows() {
        let mut t = FeatureTable::new(Tap::Pooled, 2, vec!["a".into()]);
        let row = |id: &str, e: Vec<f32>, c| FeatureRow {
            id: id.into(),
            embedding: e,
            class_index: c,
            partition: Partition::Train,
        };
        assert!(t.push(row("x", vec![1.0], 0)).is_err());
        assert!(t.push(row("x", vec![1.0, 2.0], 1)).is_err());
        assert!(t.push(row("x", vec![f32::NAN, 2.0], 0)).is_err());
        t.push(row("x", vec![1.0, 2.0], 0)).unwrap();
        assert!(t.push(row("x", vec![1.0, 2.0], 0)).is_err());
    }

    #[test]
    fn head_archive_round_trip() {
        let mut h = HeadWeights::zeros(3, 2);
        h.w = vec![0.5, -0.25, 1.0, 2.0, 0.0, -1.0];
        h.b = vec![0.125, -0.5];
        h.best_epoch = 2;
        h.history = vec![
            EpochRecord { epoch: 1, learning_rate: 0.5, train_loss: 0.75, val_macro_f1: 0.5 },
            EpochRecord { epoch: 2, learning_rate: 0.5, train_loss: 0.25, val_macro_f1: 1.0 },
        ];
        assert_eq!(HeadWeights::from_archive(&h.to_archive()).unwrap(), h);
    }

    #[test]
    fn requires_both_partitions() {
        let t = table(&[(vec![1.0], 0, Partition::Train)], 2);
        assert!(matches!(train_head(&t, &Hyperparams::default()), Err(Error::Dataset(_))));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let rows = vec![
            (vec![3e38, -3e38], 0, Partition::Train),
            (vec![-3e38, 3e38], 1, Partition::Train),
            (vec![1.0, 0.0], 0, Partition::Val),
        ];
        let hp = Hyperparams { learning_rate: 1e300, ..Default::default() };
        assert!(matches!(train_head(&table(&rows, 2), &hp), Err(Error::Diverged { .. })));
    }

    #[test]
    fn decay_schedule() {
        let hp = Hyperparams::default();
        assert_eq!(hp.learning_rate_at(14), 0.01);
        assert!((hp.learning_rate_at(15) - 0.001).abs() < 1e-15);
        assert!(Hyperparams { batch_size: 0, ..hp }.validate().is_err());
        assert!(Hyperparams { learning_rate: -1.0, ..hp }.validate().is_err());
    }
}
