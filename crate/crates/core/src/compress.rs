//! Global magnitude pruning with mask-preserving fine-tuning, parameter
//! footprint accounting, and effective-synaptic-operation counting.
//!
//! Pruning ranks all trainable weights jointly by magnitude; the frozen
//! memory matrices are never ranked or pruned. Synaptic operations follow
//! the event-driven convention: a presynaptic spike costs one operation per
//! non-zero outgoing weight, the dense real-valued input path and the
//! readout are charged their non-zero weight count every step.

use std::io::Write;

use crate::data::Sample;
use crate::engine::{Evaluator, ParamId, SpikeMode};
use crate::error::{ensure_arg, Result};
use crate::grad::GradientSet;
use crate::l2mu::{network_forward_engine, Model, Window};
use crate::train::{evaluate, Metrics, TrainConfig, Trainer};

/// One keep/prune flag per trainable weight, tensor by tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    pub target_sparsity: f64,
    masks: Vec<Option<Vec<bool>>>,
}

impl PruneMask {
    pub fn get(&self, id: ParamId) -> Option<&[bool]> {
        self.masks[id.index()].as_deref()
    }

    /// Kept-weight count across all trainable tensors.
    pub fn kept(&self) -> usize {
        self.masks.iter().flatten().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().flatten().map(|m| m.len()).sum()
    }

    pub fn validate_for(&self, model: &Model<f32>) -> Result<()> {
        for &id in &ParamId::TRAINABLE {
            let mask = self
                .get(id)
                .ok_or_else(|| crate::Error::arg(format!("mask missing tensor {}", id.name())))?;
            ensure_arg!(
                mask.len() == model.param(id).len(),
                "mask for {} has {} entries, tensor has {}",
                id.name(),
                mask.len(),
                model.param(id).len()
            );
        }
        Ok(())
    }

    /// Zeroes every pruned weight in place.
    pub fn apply(&self, model: &mut Model<f32>) {
        for &id in &ParamId::TRAINABLE {
            let mask = self.get(id).expect("trainable mask");
            for (w, &keep) in model.param_mut(id).data_mut().iter_mut().zip(mask) {
                if !keep {
                    *w = 0.0;
                }
            }
        }
    }

    /// Zeroes gradients of pruned weights so optimizer state never drifts.
    pub fn apply_to_gradients(&self, grads: &mut GradientSet<f32>) {
        for &id in &ParamId::TRAINABLE {
            let mask = self.get(id).expect("trainable mask");
            if let Some(g) = grads.get_mut(id) {
                for (gv, &keep) in g.data_mut().iter_mut().zip(mask) {
                    if !keep {
                        *gv = 0.0;
                    }
                }
            }
        }
    }

    /// Number of weights that a masked model must keep at exactly zero but
    /// does not (mask-permanence check).
    pub fn violations(&self, model: &Model<f32>) -> usize {
        let mut count = 0;
        for &id in &ParamId::TRAINABLE {
            let mask = self.get(id).expect("trainable mask");
            for (w, &keep) in model.param(id).data().iter().zip(mask) {
                if !keep && *w != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    pub(crate) fn from_parts(target_sparsity: f64, masks: Vec<Option<Vec<bool>>>) -> Self {
        PruneMask { target_sparsity, masks }
    }
}

/// Ranks all trainable weights jointly by |w| and prunes the smallest
/// floor(target_sparsity · total). Ties at the cut are broken by flat index
/// (earlier tensors in checkpoint order, then row-major position, survive).
pub fn global_magnitude_prune(model: &Model<f32>, target_sparsity: f64) -> Result<PruneMask> {
    ensure_arg!(
        (0.0..1.0).contains(&target_sparsity),
        "target sparsity must lie in [0, 1), got {target_sparsity}"
    );
    let total: usize = ParamId::TRAINABLE.iter().map(|&id| model.param(id).len()).sum();
    let n_prune = (target_sparsity * total as f64).floor() as usize;

    let mut ranked: Vec<(f32, usize)> = Vec::with_capacity(total);
    let mut flat = 0usize;
    for &id in &ParamId::TRAINABLE {
        for w in model.param(id).data() {
            ranked.push((w.abs(), flat));
            flat += 1;
        }
    }
    // Smallest magnitude first; among equals the later flat index goes first,
    // so the earlier one survives.
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut keep = vec![true; total];
    for &(_, idx) in ranked.iter().take(n_prune) {
        keep[idx] = false;
    }

    let mut masks = vec![None; ParamId::ALL.len()];
    let mut offset = 0usize;
    for &id in &ParamId::TRAINABLE {
        let len = model.param(id).len();
        masks[id.index()] = Some(keep[offset..offset + len].to_vec());
        offset += len;
    }
    Ok(PruneMask { target_sparsity, masks })
}

/// Retrains a pruned model with the mask pinned: gradients of pruned weights
/// are zeroed and the weights re-zeroed after every optimizer step. Writes
/// the same line-oriented progress records as training.
pub fn fine_tune(
    model: Model<f32>,
    mask: &PruneMask,
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
    log: &mut dyn Write,
) -> Result<(Model<f32>, Metrics)> {
    config.validate()?;
    ensure_arg!(!test.is_empty(), "test split is empty");
    let mut trainer = Trainer::new(config.clone(), model, train, val)?;
    trainer.set_mask(mask.clone())?;
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

/// Count of exactly-nonzero trainable parameters and the resulting 32-bit
/// storage footprint in bytes. A mask, when given, hides pruned positions
/// whether or not it has been applied to the weights yet.
pub fn count_nonzero_params(model: &Model<f32>, mask: Option<&PruneMask>) -> (usize, usize) {
    let mut count = 0usize;
    for &id in &ParamId::TRAINABLE {
        let data = model.param(id).data();
        match mask.and_then(|m| m.get(id)) {
            Some(bits) => {
                count += data.iter().zip(bits).filter(|(w, &keep)| keep && **w != 0.0).count()
            }
            None => count += data.iter().filter(|&&w| w != 0.0).count(),
        }
    }
    (count, count * 4)
}

/// Spike vectors emitted by one forward pass, six per step in emission
/// order: encoder expand/fuse/harm, then u, m, h.
pub struct SpikeTrace {
    pub steps: usize,
    spikes: Vec<Vec<f32>>,
}

const TRACE_LANES: usize = 6;

impl SpikeTrace {
    fn lane(&self, t: usize, lane: usize) -> &[f32] {
        &self.spikes[t * TRACE_LANES + lane]
    }

    fn enc_expand(&self, t: usize) -> &[f32] {
        self.lane(t, 0)
    }
    fn enc_fuse(&self, t: usize) -> &[f32] {
        self.lane(t, 1)
    }
    fn x_spk(&self, t: usize) -> &[f32] {
        self.lane(t, 2)
    }
    fn u_spk(&self, t: usize) -> &[f32] {
        self.lane(t, 3)
    }
    fn m_spk(&self, t: usize) -> &[f32] {
        self.lane(t, 4)
    }
    fn h_spk(&self, t: usize) -> &[f32] {
        self.lane(t, 5)
    }
}

/// Runs a forward pass and captures the spike raster (logits discarded).
pub fn capture_spike_trace(model: &Model<f32>, window: &Window<f32>) -> Result<SpikeTrace> {
    ensure_arg!(
        window.channels() == model.dims.n_channels,
        "window has {} channels, model expects {}",
        window.channels(),
        model.dims.n_channels
    );
    let mut spikes = Vec::with_capacity(window.steps() * TRACE_LANES);
    let mut eng = Evaluator {
        mode: SpikeMode::Hard,
        slope: model.surrogate_slope,
        spike_trace: Some(&mut spikes),
    };
    network_forward_engine(&mut eng, model, window);
    Ok(SpikeTrace { steps: window.steps(), spikes })
}

/// Effective synaptic operations of one inference.
pub fn count_effective_synops(model: &Model<f32>, sample: &Sample) -> Result<u64> {
    let trace = capture_spike_trace(model, &sample.window)?;
    Ok(count_synops_on_raster(model, &trace))
}

/// Event count for a fixed spike raster — exposed so pruning monotonicity
/// can be checked without the raster shifting underneath.
pub fn count_synops_on_raster(model: &Model<f32>, trace: &SpikeTrace) -> u64 {
    let col_nnz = |id: ParamId| -> Vec<u64> {
        let t = model.param(id);
        let (rows, cols) = (t.rows(), t.cols());
        let mut counts = vec![0u64; cols];
        for i in 0..rows {
            for (j, count) in counts.iter_mut().enumerate() {
                if t.data()[i * cols + j] != 0.0 {
                    *count += 1;
                }
            }
        }
        counts
    };
    let fuse_cols = col_nnz(ParamId::EncFuse);
    let harm_cols = col_nnz(ParamId::EncHarm);
    let ex_cols = col_nnz(ParamId::Ex);
    let eh_cols = col_nnz(ParamId::Eh);
    let em_cols = col_nnz(ParamId::Em);
    let wx_cols = col_nnz(ParamId::Wx);
    let wh_cols = col_nnz(ParamId::Wh);
    let wm_cols = col_nnz(ParamId::Wm);
    let a_bar_cols = col_nnz(ParamId::ABar);
    let b_bar_nnz = model.param(ParamId::BBar).count_nonzero() as u64;
    let dense_per_step = (model.param(ParamId::EncExpand).count_nonzero()
        + model.param(ParamId::WOut).count_nonzero()) as u64;

    let spike_cost = |spikes: &[f32], cols: &[u64]| -> u64 {
        spikes.iter().zip(cols).filter(|(s, _)| **s != 0.0).map(|(_, &c)| c).sum()
    };

    let d = model.dims.d;
    let mut total = 0u64;
    for t in 0..trace.steps {
        total += dense_per_step;
        total += spike_cost(trace.enc_expand(t), &fuse_cols);
        total += spike_cost(trace.enc_fuse(t), &harm_cols);
        let x = trace.x_spk(t);
        total += spike_cost(x, &ex_cols) + spike_cost(x, &wx_cols);
        // u consumes h
        // and m spikes from the previous step; h consumes fresh m spikes.
        if t > 0 {
            let h_prev = trace.h_spk(t - 1);
            total += spike_cost(h_prev, &eh_cols) + spike_cost(h_prev, &wh_cols);
            let m_prev = trace.m_spk(t - 1);
            total += spike_cost(m_prev, &em_cols);
            for (idx, s) in m_prev.iter().enumerate() {
                if *s != 0.0 {
                    total += a_bar_cols[idx % d];
                }
            }
        }
        for s in trace.u_spk(t) {
            if *s != 0.0 {
                total += b_bar_nnz;
            }
        }
        total += spike_cost(trace.m_spk(t), &wm_cols);
    }
    total
}
