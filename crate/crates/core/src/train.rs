//! Mini-batch training with cross-entropy loss and adaptive moment
//! estimation, plus evaluation with confusion matrices.
//!
//! Everything is deterministic for a fixed seed and independent of the
//! worker-thread count: per-sample gradients are computed in isolation and
//! reduced in sample order, so `threads = 1` and `threads = 8` produce
//! byte-identical models.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compress::PruneMask;
use crate::data::Sample;
use crate::engine::ParamId;
use crate::error::{ensure_arg, Result};
use crate::grad::{backward, forward_recorded, GradientSet};
use crate::l2mu::{forward, predict, Dims, Model, PopulationSet, Variant};
use crate::real::Real;

/// Everything a training run needs: architecture, neuron constants and
/// optimizer hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub variant: Variant,
    pub dims: Dims,
    pub pops: PopulationSet<f32>,
    pub surrogate_slope: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global-norm gradient clip; 0 disables (the default).
    pub grad_clip: f64,
    /// Decoupled weight decay; 0 disables (the default).
    pub weight_decay: f64,
    pub seed: u64,
    /// Worker cap for batch-parallel gradient evaluation.
    pub threads: usize,
}

impl TrainConfig {
    pub fn defaults(variant: Variant) -> Self {
        let dims = match variant {
            Variant::Leaky => Dims::full_leaky(),
            Variant::Synaptic => Dims::full_synaptic(),
        };
        TrainConfig {
            variant,
            dims,
            pops: PopulationSet::defaults(variant),
            surrogate_slope: crate::l2mu::DEFAULT_SURROGATE_SLOPE,
            epochs: 300,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            weight_decay: 0.0,
            seed: 42,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.pops.validate()?;
        ensure_arg!(self.epochs >= 1, "epochs must be >= 1");
        ensure_arg!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure_arg!(self.learning_rate > 0.0, "learning_rate must be positive");
        ensure_arg!(
            self.adam_beta1 >= 0.0 && self.adam_beta1 < 1.0,
            "adam_beta1 must lie in [0, 1)"
        );
        ensure_arg!(
            self.adam_beta2 >= 0.0 && self.adam_beta2 < 1.0,
            "adam_beta2 must lie in [0, 1)"
        );
        ensure_arg!(self.adam_eps > 0.0, "adam_eps must be positive");
        ensure_arg!(self.grad_clip >= 0.0, "grad_clip must be >= 0");
        ensure_arg!(self.weight_decay >= 0.0, "weight_decay must be >= 0");
        ensure_arg!(self.surrogate_slope > 0.0, "surrogate_slope must be positive");
        ensure_arg!(self.threads >= 1, "threads must be >= 1");
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model<f32>> {
        let mut model = Model::new(self.variant, self.dims, &self.pops, self.seed)?;
        model.surrogate_slope = self.surrogate_slope as f32;
        Ok(model)
    }
}

/// Per-epoch training metrics plus the final test evaluation.
#[derive(Clone, Debug, Default)]
pub struct Metrics {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub test_accuracy: f64,
    pub confusion: Confusion,
}

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn at(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn row_sum(&self, true_class: usize) -> u64 {
        (0..self.classes).map(|p| self.at(true_class, p)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.classes).map(|c| self.at(c, c)).sum();
        if self.total() == 0 {
            0.0
        } else {
            trace as f64 / self.total() as f64
        }
    }
}

/// Numerically stable cross-entropy via log-sum-exp. Returns the loss and
/// ∂loss/∂logits = softmax(logits) − one_hot(label); internals run in f64
/// regardless of the logit width.
pub fn cross_entropy<F: Real>(logits: &[F], label: usize) -> Result<(f64, Vec<F>)> {
    ensure_arg!(
        label < logits.len(),
        "label {label} out of range for {} classes",
        logits.len()
    );
    ensure_arg!(logits.iter().all(|v| v.is_finite()), "logits must be finite");
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64()).collect();
    let z_max = z.iter().cloned().fold(f64::MIN, f64::max);
    let exp_sum: f64 = z.iter().map(|v| (v - z_max).exp()).sum();
    let lse = z_max + exp_sum.ln();
    let loss = lse - z[label];
    let grad = z
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let softmax = (v - lse).exp();
            F::from_f64(softmax - if k == label { 1.0 } else { 0.0 })
        })
        .collect();
    Ok((loss, grad))
}

/// Loss and gradients of one sample (isolated; safe to run in parallel).
fn sample_gradients(model: &Model<f32>, sample: &Sample) -> Result<(f64, GradientSet<f32>)> {
    let (logits, tape) = forward_recorded(model, &sample.window)?;
    let (loss, dlogits) = cross_entropy(&logits, sample.label as usize)?;
    let grads = backward(&tape, &dlogits)?;
    Ok((loss, grads))
}

/// Adaptive moment estimation over the trainable tensors.
struct Adam {
    m: GradientSet<f32>,
    v: GradientSet<f32>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f32,
    lr: f64,
}

impl Adam {
    fn new(model: &Model<f32>, config: &TrainConfig) -> Self {
        Adam {
            m: GradientSet::zeros_for(model),
            v: GradientSet::zeros_for(model),
            t: 0,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps as f32,
            lr: config.learning_rate,
        }
    }

    fn step(&mut self, model: &mut Model<f32>, grads: &GradientSet<f32>) {
        self.t += 1;
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let correction1 = (1.0 - self.beta1.powi(self.t as i32)) as f32;
        let correction2 = (1.0 - self.beta2.powi(self.t as i32)) as f32;
        let lr = self.lr as f32;
        for &id in &ParamId::TRAINABLE {
            let g = grads.get(id).expect("trainable gradient");
            let m = self.m.get_mut(id).expect("moment");
            for (mv, gv) in m.data_mut().iter_mut().zip(g.data()) {
                *mv = b1 * *mv + (1.0 - b1) * *gv;
            }
            let v = self.v.get_mut(id).expect("moment");
            for (vv, gv) in v.data_mut().iter_mut().zip(g.data()) {
                *vv = b2 * *vv + (1.0 - b2) * *gv * *gv;
            }
            let weights = model.param_mut(id).data_mut();
            let m = self.m.get(id).unwrap().data();
            let v = self.v.get(id).unwrap().data();
            for ((w, mv), vv) in weights.iter_mut().zip(m).zip(v) {
                let m_hat = *mv / correction1;
                let v_hat = *vv / correction2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Incremental trainer: owns the model and optimizer state, runs one epoch
/// at a time. An optional prune mask is re-applied after every optimizer
/// step so pruned weights stay exactly zero.
pub struct Trainer<'d> {
    config: TrainConfig,
    model: Model<f32>,
    adam: Adam,
    mask: Option<PruneMask>,
    train: &'d [Sample],
    val: &'d [Sample],
    shuffle_rng: ChaCha8Rng,
    epoch: usize,
}

/// One line of training progress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

impl EpochStats {
    /// The line-oriented progress record format.
    pub fn record_line(&self) -> String {
        format!(
            "epoch={} train_loss={} val_acc={}",
            self.epoch, self.train_loss, self.val_accuracy
        )
    }
}

impl<'d> Trainer<'d> {
    pub fn new(
        config: TrainConfig,
        model: Model<f32>,
        train: &'d [Sample],
        val: &'d [Sample],
    ) -> Result<Self> {
        config.validate()?;
        ensure_arg!(!train.is_empty(), "training split is empty");
        ensure_arg!(!val.is_empty(), "validation split is empty");
        let adam = Adam::new(&model, &config);
        // Shuffle stream decoupled from the weight-init stream.
        let shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Trainer { config, model, adam, mask: None, train, val, shuffle_rng, epoch: 0 })
    }

    /// Installs a prune mask: masked gradients, and weights re-zeroed after
    /// every step. The mask must fit the model.
    pub fn set_mask(&mut self, mask: PruneMask) -> Result<()> {
        mask.validate_for(&self.model)?;
        mask.apply(&mut self.model);
        self.mask = Some(mask);
        Ok(())
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One full pass over the training split followed by a validation pass.
    pub fn run_epoch(&mut self) -> Result<EpochStats> {
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        for i in (1..order.len()).rev() {
            let j = self.shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let mut batch_grads = GradientSet::zeros_for(&self.model);
            let mut batch_loss = 0.0;
            let samples: Vec<&Sample> = batch.iter().map(|&i| &self.train[i]).collect();
            let results = map_ordered(&samples, self.config.threads, |s| {
                sample_gradients(&self.model, s)
            })?;
            for (loss, grads) in &results {
                batch_loss += loss;
                batch_grads.add_scaled(grads, 1.0);
            }
            let mean_loss = batch_loss / batch.len() as f64;
            assert!(
                mean_loss.is_finite(),
                "training loss diverged at epoch {} (batch loss {mean_loss})",
                self.epoch
            );
            loss_sum += batch_loss;
            batch_grads.scale(1.0 / batch.len() as f32);

            if self.config.grad_clip > 0.0 {
                let norm: f64 = batch_grads
                    .iter()
                    .flat_map(|(_, t)| t.data())
                    .map(|&g| (g as f64) * (g as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > self.config.grad_clip {
                    batch_grads.scale((self.config.grad_clip / norm) as f32);
                }
            }
            if let Some(mask) = &self.mask {
                mask.apply_to_gradients(&mut batch_grads);
            }
            self.adam.step(&mut self.model, &batch_grads);
            if self.config.weight_decay > 0.0 {
                let decay = 1.0 - (self.config.learning_rate * self.config.weight_decay) as f32;
                for &id in &ParamId::TRAINABLE {
                    for w in self.model.param_mut(id).data_mut() {
                        *w *= decay;
                    }
                }
            }
            if let Some(mask) = &self.mask {
                mask.apply(&mut self.model);
            }
        }

        let val = evaluate(&self.model, self.val, self.config.threads)?;
        Ok(EpochStats {
            epoch: self.epoch,
            train_loss: loss_sum / self.train.len() as f64,
            val_accuracy: val.accuracy,
        })
    }
}

/// Accuracy and confusion matrix of a model over one split.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub accuracy: f64,
    pub confusion: Confusion,
}

pub fn evaluate(model: &Model<f32>, split: &[Sample], threads: usize) -> Result<EvalResult> {
    ensure_arg!(!split.is_empty(), "evaluation split is empty");
    let refs: Vec<&Sample> = split.iter().collect();
    let predictions = map_ordered(&refs, threads.max(1), |s| {
        forward(model, &s.window).map(|logits| predict(&logits))
    })?;
    let mut confusion = Confusion::new(model.dims.n_classes);
    for (sample, &pred) in split.iter().zip(&predictions) {
        confusion.record(sample.label as usize, pred);
    }
    Ok(EvalResult { accuracy: confusion.accuracy(), confusion })
}

/// Full training run: builds the model from the config, trains for the
/// configured epochs writing one progress line per epoch to `log`, then
/// evaluates the test split.
pub fn train_model(
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    log: &mut dyn Write,
) -> Result<(Model<f32>, Metrics)> {
    config.validate()?;
    ensure_arg!(!test.is_empty(), "test split is empty");
    let model = config.build_model()?;
    let mut trainer = Trainer::new(config.clone(), model, train, val)?;
    let mut metrics = Metrics::default();
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch()?;
        writeln!(log, "{}", stats.record_line())?;
        metrics.train_loss.push(stats.train_loss);
        metrics.val_accuracy.push(stats.val_accuracy);
    }
    let model = trainer.into_model();
    let result = evaluate(&model, test, config.threads)?;
    metrics.test_accuracy = result.accuracy;
    metrics.confusion = result.confusion;
    writeln!(log, "test_acc={}", metrics.test_accuracy)?;
    Ok((model, metrics))
}

/// Applies `f` to every element and returns results in input order. With
/// `threads > 1` elements are processed in parallel chunks, but each call is
/// independent and the returned order is fixed, so results are identical to
/// the sequential run.
fn map_ordered<T: Sync, R: Send>(
    items: &[&T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = threads.max(1);
    if threads == 1 || items.len() <= 1 {
        return items.iter().map(|x| f(x)).collect();
    }
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(threads) {
        let results: Vec<Result<R>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                chunk.iter().map(|item| scope.spawn(|| f(item))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_dataset;

    #[test]
    fn cross_entropy_uniform_logits() {
        let (loss, grad) = cross_entropy(&[0.5_f64; 7], 3).unwrap();
        assert!((loss - (7.0_f64).ln()).abs() < 1e-12);
        let sum: f64 = grad.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_saturates_to_zero() {
        let mut logits = [0.0_f32; 7];
        logits[2] = 1e9;
        let (loss, _) = cross_entropy(&logits, 2).unwrap();
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero_and_checks_args() {
        let logits = [1.0_f32, -2.0, 0.3, 4.0];
        let (_, grad) = cross_entropy(&logits, 1).unwrap();
        let sum: f64 = grad.iter().map(|&g| g as f64).sum();
        assert!(sum.abs() < 1e-6);
        assert!(cross_entropy(&logits, 4).is_err());
        assert!(cross_entropy(&[f32::NAN, 0.0], 0).is_err());
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            dims: Dims::synth_default(),
            epochs: 2,
            batch_size: 16,
            seed,
            ..TrainConfig::defaults(Variant::Leaky)
        }
    }

    #[test]
    fn same_seed_same_results() {
        let samples = synth_dataset(3, 20, 5).unwrap();
        let (train, val, test) = crate::data::split(&samples, (0.6, 0.2, 0.2), 1).unwrap();
        let run = || {
            let mut log = Vec::new();
            let (model, metrics) =
                train_model(&quick_config(7), &train, &val, &test, &mut log).unwrap();
            (model, metrics.test_accuracy, metrics.confusion, log)
        };
        let (m1, acc1, conf1, log1) = run();
        let (m2, acc2, conf2, log2) = run();
        assert_eq!(acc1, acc2);
        assert_eq!(conf1, conf2);
        assert_eq!(log1, log2);
        for &id in &ParamId::TRAINABLE {
            assert_eq!(m1.param(id).data(), m2.param(id).data());
        }
    }

    #[test]
    fn thread_count_does_not_change_the_model() {
        let samples = synth_dataset(3, 12, 9).unwrap();
        let (train, val, test) = crate::data::split(&samples, (0.6, 0.2, 0.2), 2).unwrap();
        let run = |threads: usize| {
            let config = TrainConfig { threads, ..quick_config(11) };
            let (model, _) =
                train_model(&config, &train, &val, &test, &mut std::io::sink()).unwrap();
            model
        };
        let seq = run(1);
        let par = run(8);
        for &id in &ParamId::TRAINABLE {
            assert_eq!(seq.param(id).data(), par.param(id).data(), "{id:?}");
        }
    }

    #[test]
    fn constant_predictor_metrics() {
        // A model with silent spikes predicts class 0 everywhere: accuracy is
        // the class-0 frequency and the confusion matrix fills column 0.
        let mut config = quick_config(3);
        config.pops = PopulationSet {
            enc_expand: crate::l2mu::PopParams { alpha: 0.7, beta: 0.9, theta_v: 1e30 },
            ..config.pops
        };
        let model = config.build_model().unwrap();
        let samples = synth_dataset(3, 5, 8).unwrap();
        let result = evaluate(&model, &samples, 1).unwrap();
        assert!((result.accuracy - 1.0 / 3.0).abs() < 1e-12);
        for c in 0..3 {
            assert_eq!(result.confusion.at(c, 0), 5);
            assert_eq!(result.confusion.row_sum(c), 5);
        }
    }

    #[test]
    fn evaluation_is_order_invariant() {
        let config = quick_config(4);
        let model = config.build_model().unwrap();
        let mut samples = synth_dataset(3, 8, 10).unwrap();
        let forward_order = evaluate(&model, &samples, 2).unwrap();
        samples.reverse();
        let reverse_order = evaluate(&model, &samples, 2).unwrap();
        assert_eq!(forward_order.accuracy, reverse_order.accuracy);
        assert_eq!(forward_order.confusion, reverse_order.confusion);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let samples = synth_dataset(3, 4, 6).unwrap();
        let config = quick_config(5);
        let model = config.build_model().unwrap();
        assert!(Trainer::new(config.clone(), model.clone(), &[], &samples).is_err());
        assert!(Trainer::new(config.clone(), model.clone(), &samples, &[]).is_err());
        assert!(evaluate(&model, &[], 1).is_err());
        assert!(train_model(&config, &samples, &samples, &[], &mut std::io::sink()).is_err());
    }
}
