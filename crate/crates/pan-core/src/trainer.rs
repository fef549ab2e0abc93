//! Optimization and evaluation loops over a sample source.

use alloc::vec::Vec;

use crate::error::CoreError;
use crate::graph::Graph;
use crate::metrics::{argmax, Confusion};
use crate::model::{assemble_batch, build, BuiltModel, ModelConfig};
use crate::optim::{apply_bn_updates, lr_at, scaled_milestones, Sgd};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::synth::{Sample, Split};

/// Anything that can hand out samples by index (in-memory set, disk loader).
pub trait SampleSource<T: Scalar> {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Sample<T>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<T: Scalar> SampleSource<T> for [Sample<T>] {
    fn len(&self) -> usize {
        <[Sample<T>]>::len(self)
    }
    fn load(&self, index: usize) -> Sample<T> {
        self[index].clone()
    }
}

impl<T: Scalar> SampleSource<T> for Vec<Sample<T>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }
    fn load(&self, index: usize) -> Sample<T> {
        self[index].clone()
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Explicit decay epochs; `None` scales the 35/55-of-65 recipe.
    pub milestones: Option<Vec<usize>>,
    pub batch_size: usize,
    pub seed: u64,
    pub w_classification: f64,
    pub w_alignment: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 4e-4,
            epochs: 65,
            milestones: None,
            batch_size: 16,
            seed: 1,
            w_classification: 1.0,
            w_alignment: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn resolved_milestones(&self) -> Result<Vec<usize>, CoreError> {
        let ms = match &self.milestones {
            Some(ms) => {
                for w in ms.windows(2) {
                    if w[1] <= w[0] {
                        return Err(CoreError::invalid(format_args!(
                            "milestones must be strictly increasing, got {ms:?}"
                        )));
                    }
                }
                if let Some(&last) = ms.last() {
                    if last >= self.epochs {
                        return Err(CoreError::invalid(format_args!(
                            "milestone {last} must precede total epochs {}",
                            self.epochs
                        )));
                    }
                }
                ms.clone()
            }
            None => {
                // proportional scaling can collide or overshoot at tiny epoch
                // counts; out-of-range milestones simply never fire
                let mut ms = scaled_milestones(self.epochs);
                ms.dedup();
                ms.retain(|&m| m < self.epochs);
                ms
            }
        };
        Ok(ms)
    }
}

#[derive(Debug, Clone)]
pub struct EpochRow {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub top1: f64,
    pub mca: f64,
}

pub struct FitResult<T: Scalar> {
    pub model: BuiltModel<T>,
    /// Parameter snapshot of the best validation epoch.
    pub best: ParamStore<T>,
    pub best_epoch: usize,
    pub best_val_top1: f64,
    pub history: Vec<EpochRow>,
}

/// Trains a freshly built model. Deterministic given the two seeds; aborts
/// with the offending batch id if the loss turns NaN.
pub fn fit<T: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_data: &dyn SampleSource<T>,
    val_data: &dyn SampleSource<T>,
    mut on_epoch: impl FnMut(&EpochRow),
) -> Result<FitResult<T>, CoreError> {
    if train_data.is_empty() || train_cfg.epochs == 0 {
        return Err(CoreError::invalid("nothing to train on"));
    }
    let milestones = train_cfg.resolved_milestones()?;
    let mut model = build::<T>(model_cfg)?;
    let mut sgd = Sgd::new(train_cfg.momentum, train_cfg.weight_decay);
    let order_rng = Rng::new(train_cfg.seed).fork(0x0EDE);

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<T>)> = None;

    for epoch in 0..train_cfg.epochs {
        let lr = lr_at(train_cfg.lr, &milestones, epoch);
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order_rng.fork(epoch as u64).shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut confusion = Confusion::new(model_cfg.num_classes);
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let samples: Vec<Sample<T>> = chunk.iter().map(|&i| train_data.load(i)).collect();
            let refs: Vec<&Sample<T>> = samples.iter().collect();
            let batch = assemble_batch(&refs, model_cfg)?;

            let mut g = Graph::train();
            let out = model.forward(&mut g, &batch)?;
            let ce = g.cross_entropy_mean(out.logits, &batch.labels);
            let loss = match out.align_penalty {
                Some(pen) if train_cfg.w_alignment != 0.0 => {
                    let wc = g.scale(ce, train_cfg.w_classification);
                    let wa = g.scale(pen, train_cfg.w_alignment);
                    g.add(wc, wa)
                }
                _ => {
                    if train_cfg.w_classification != 1.0 {
                        g.scale(ce, train_cfg.w_classification)
                    } else {
                        ce
                    }
                }
            };
            let loss_val = g.value(loss).item().to_f64();
            if !loss_val.is_finite() {
                return Err(CoreError::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            // training-time predictions (before the update)
            let logits = g.value(out.logits).clone();
            let k = model_cfg.num_classes;
            for (bi, &truth) in batch.labels.iter().enumerate() {
                confusion.record(truth, argmax(&logits.data()[bi * k..(bi + 1) * k]));
            }
            loss_sum += loss_val * batch.labels.len() as f64;
            seen += batch.labels.len();

            let grads = g.backward(loss, &model.store)?;
            let updates = g.take_bn_updates();
            apply_bn_updates(&mut model.store, &updates);
            sgd.step(&mut model.store, &grads, lr);
        }

        let train_row = EpochRow {
            epoch,
            split: Split::Train,
            loss: loss_sum / seen.max(1) as f64,
            top1: confusion.top1(),
            mca: confusion.mean_class_accuracy(),
        };
        on_epoch(&train_row);
        history.push(train_row);

        if !val_data.is_empty() {
            let outcome = evaluate(&model, val_data, train_cfg.batch_size)?;
            let val_row = EpochRow {
                epoch,
                split: Split::Val,
                loss: outcome.loss,
                top1: outcome.confusion.top1(),
                mca: outcome.confusion.mean_class_accuracy(),
            };
            let better = best
                .as_ref()
                .map_or(true, |(_, top1, _)| val_row.top1 > *top1);
            if better {
                best = Some((epoch, val_row.top1, model.store.clone()));
            }
            on_epoch(&val_row);
            history.push(val_row);
        }
    }

    let (best_epoch, best_val_top1, best_store) =
        best.unwrap_or((train_cfg.epochs - 1, 0.0, model.store.clone()));
    Ok(FitResult {
        model,
        best: best_store,
        best_epoch,
        best_val_top1,
        history,
    })
}

pub struct EvalOutcome {
    pub loss: f64,
    pub confusion: Confusion,
    /// Per-pathway confusions when the model is an ensemble.
    pub rgb_confusion: Option<Confusion>,
    pub skel_confusion: Option<Confusion>,
}

/// Deterministic evaluation with per-class confusion counts.
pub fn evaluate<T: Scalar>(
    model: &BuiltModel<T>,
    data: &dyn SampleSource<T>,
    batch_size: usize,
) -> Result<EvalOutcome, CoreError> {
    let k = model.cfg.num_classes;
    let mut confusion = Confusion::new(k);
    let mut rgb_confusion: Option<Confusion> = None;
    let mut skel_confusion: Option<Confusion> = None;
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let samples: Vec<Sample<T>> = chunk.iter().map(|&i| data.load(i)).collect();
        let refs: Vec<&Sample<T>> = samples.iter().collect();
        let batch = assemble_batch(&refs, &model.cfg)?;
        let mut g = Graph::eval();
        let out = model.forward(&mut g, &batch)?;
        let ce = g.cross_entropy_mean(out.logits, &batch.labels);
        loss_sum += g.value(ce).item().to_f64() * batch.labels.len() as f64;
        seen += batch.labels.len();
        let logits = g.value(out.logits).clone();
        for (bi, &truth) in batch.labels.iter().enumerate() {
            confusion.record(truth, argmax(&logits.data()[bi * k..(bi + 1) * k]));
        }
        for (node, slot) in [
            (out.rgb_logits, &mut rgb_confusion),
            (out.skel_logits, &mut skel_confusion),
        ] {
            if let Some(n) = node {
                let v = g.value(n).clone();
                let c = slot.get_or_insert_with(|| Confusion::new(k));
                for (bi, &truth) in batch.labels.iter().enumerate() {
                    c.record(truth, argmax(&v.data()[bi * k..(bi + 1) * k]));
                }
            }
        }
    }
    Ok(EvalOutcome {
        loss: loss_sum / seen.max(1) as f64,
        confusion,
        rgb_confusion,
        skel_confusion,
    })
}
