//! Reverse-mode gradients over the unrolled network: a tape of the
//! primitive operations each forward step executes, walked backward with
//! surrogate derivatives at the spike thresholds.
//!
//! Recording is transparent — the recorder runs the exact kernels the plain
//! evaluator runs, in the same order, so recorded logits bit-match
//! [`crate::l2mu::forward`]. Gradients flow through the subtractive reset
//! term (not detached) and through the whole window (no truncation); Ā, B̄
//! and the neuron constants receive no gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{spike_values, Engine, Evaluator, ParamId, SpikeMode};
use crate::error::{ensure_arg, Result};
use crate::l2mu::{network_forward_engine, Model, Window};
use crate::neuron::surrogate_derivative_unchecked;
use crate::real::Real;
use crate::tensor::Tensor;

type NodeId = usize;

#[derive(Clone, Debug)]
enum Op<F> {
    Input,
    Zeros,
    Matvec { w: ParamId, x: NodeId },
    BlockMatvec { w: ParamId, x: NodeId, blocks: usize },
    ExpandScale { w: ParamId, x: NodeId },
    ChannelExpand { w: ParamId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    Membrane { beta: F, theta_v: F, u: NodeId, s_prev: NodeId, current: NodeId },
    Current { alpha: F, i_prev: NodeId, current: NodeId },
    Spike { theta_v: F, u: NodeId },
}

struct Node<F> {
    op: Op<F>,
    out: Vec<F>,
}

/// Recorded forward pass: every primitive with its cached output, replayable
/// and differentiable. Borrows the model it was recorded against.
pub struct Tape<'m, F: Real> {
    model: &'m Model<F>,
    nodes: Vec<Node<F>>,
    logits: NodeId,
    mode: SpikeMode,
}

struct Recorder<'m, F: Real> {
    model: &'m Model<F>,
    nodes: Vec<Node<F>>,
    mode: SpikeMode,
}

impl<F: Real> Recorder<'_, F> {
    fn push(&mut self, op: Op<F>, out: Vec<F>) -> NodeId {
        self.nodes.push(Node { op, out });
        self.nodes.len() - 1
    }

    fn out(&self, id: NodeId) -> &[F] {
        &self.nodes[id].out
    }
}

impl<F: Real> Engine<F> for Recorder<'_, F> {
    type Val = NodeId;

    fn input(&mut self, values: Vec<F>) -> NodeId {
        self.push(Op::Input, values)
    }

    fn zeros(&mut self, n: usize) -> NodeId {
        self.push(Op::Zeros, vec![F::ZERO; n])
    }

    fn matvec(&mut self, id: ParamId, w: &Tensor<F>, x: &NodeId) -> NodeId {
        let out = w.matvec(self.out(*x));
        self.push(Op::Matvec { w: id, x: *x }, out)
    }

    fn block_matvec(&mut self, id: ParamId, w: &Tensor<F>, x: &NodeId, blocks: usize) -> NodeId {
        let out = w.block_matvec(self.out(*x), blocks);
        self.push(Op::BlockMatvec { w: id, x: *x, blocks }, out)
    }

    fn expand_scale(&mut self, id: ParamId, w: &Tensor<F>, x: &NodeId) -> NodeId {
        let out = w.expand_scale(self.out(*x));
        self.push(Op::ExpandScale { w: id, x: *x }, out)
    }

    fn channel_expand(&mut self, id: ParamId, w: &Tensor<F>, x: &NodeId) -> NodeId {
        let out = w.channel_expand(self.out(*x));
        self.push(Op::ChannelExpand { w: id, x: *x }, out)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> NodeId {
        let out = crate::tensor::add(self.out(*a), self.out(*b));
        self.push(Op::Add { a: *a, b: *b }, out)
    }

    fn membrane_update(
        &mut self,
        beta: F,
        theta_v: F,
        u: &NodeId,
        s_prev: &NodeId,
        current: &NodeId,
    ) -> NodeId {
        let out = crate::neuron::membrane_update(
            beta,
            theta_v,
            self.out(*u),
            self.out(*s_prev),
            self.out(*current),
        );
        self.push(Op::Membrane { beta, theta_v, u: *u, s_prev: *s_prev, current: *current }, out)
    }

    fn current_update(&mut self, alpha: F, i_prev: &NodeId, current: &NodeId) -> NodeId {
        let out = crate::neuron::current_update(alpha, self.out(*i_prev), self.out(*current));
        self.push(Op::Current { alpha, i_prev: *i_prev, current: *current }, out)
    }

    fn spike(&mut self, theta_v: F, u: &NodeId) -> NodeId {
        let out = spike_values(self.mode, self.model.surrogate_slope, theta_v, self.out(*u));
        self.push(Op::Spike { theta_v, u: *u }, out)
    }
}

/// Records a forward pass with the hard spike threshold (the training mode).
/// The returned logits bit-match [`crate::l2mu::forward`].
pub fn forward_recorded<'m, F: Real>(
    model: &'m Model<F>,
    window: &Window<F>,
) -> Result<(Vec<F>, Tape<'m, F>)> {
    forward_recorded_mode(model, window, SpikeMode::Hard)
}

pub(crate) fn forward_recorded_mode<'m, F: Real>(
    model: &'m Model<F>,
    window: &Window<F>,
    mode: SpikeMode,
) -> Result<(Vec<F>, Tape<'m, F>)> {
    ensure_arg!(
        window.channels() == model.dims.n_channels,
        "window has {} channels, model expects {}",
        window.channels(),
        model.dims.n_channels
    );
    let mut rec = Recorder { model, nodes: Vec::new(), mode };
    let logits = network_forward_engine(&mut rec, model, window);
    let out = rec.nodes[logits].out.clone();
    Ok((out, Tape { model, nodes: rec.nodes, logits, mode }))
}

impl<F: Real> Tape<'_, F> {
    /// Number of recorded primitives.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn logits(&self) -> &[F] {
        &self.nodes[self.logits].out
    }

    /// Re-executes every primitive from its recorded inputs and checks the
    /// cached outputs reproduce bitwise.
    pub fn replay_matches(&self) -> bool {
        let slope = self.model.surrogate_slope;
        for node in &self.nodes {
            let recomputed = match &node.op {
                Op::Input | Op::Zeros => continue,
                Op::Matvec { w, x } => self.model.param(*w).matvec(&self.nodes[*x].out),
                Op::BlockMatvec { w, x, blocks } => {
                    self.model.param(*w).block_matvec(&self.nodes[*x].out, *blocks)
                }
                Op::ExpandScale { w, x } => self.model.param(*w).expand_scale(&self.nodes[*x].out),
                Op::ChannelExpand { w, x } => {
                    self.model.param(*w).channel_expand(&self.nodes[*x].out)
                }
                Op::Add { a, b } => crate::tensor::add(&self.nodes[*a].out, &self.nodes[*b].out),
                Op::Membrane { beta, theta_v, u, s_prev, current } => {
                    crate::neuron::membrane_update(
                        *beta,
                        *theta_v,
                        &self.nodes[*u].out,
                        &self.nodes[*s_prev].out,
                        &self.nodes[*current].out,
                    )
                }
                Op::Current { alpha, i_prev, current } => crate::neuron::current_update(
                    *alpha,
                    &self.nodes[*i_prev].out,
                    &self.nodes[*current].out,
                ),
                Op::Spike { theta_v, u } => {
                    spike_values(self.mode, slope, *theta_v, &self.nodes[*u].out)
                }
            };
            if recomputed != node.out {
                return false;
            }
        }
        true
    }
}

/// One gradient tensor per trainable parameter; frozen tensors have none.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<F> {
    slots: Vec<Option<Tensor<F>>>,
}

impl<F: Real> GradientSet<F> {
    pub fn zeros_for(model: &Model<F>) -> Self {
        let slots = ParamId::ALL
            .iter()
            .map(|&id| id.is_trainable().then(|| model.param(id).zeros_like()))
            .collect();
        GradientSet { slots }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.slots[id.index()].as_ref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor<F>> {
        self.slots[id.index()].as_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> {
        ParamId::TRAINABLE.iter().filter_map(|&id| self.get(id).map(|t| (id, t)))
    }

    /// self += scale · other, tensor by tensor.
    pub fn add_scaled(&mut self, other: &GradientSet<F>, scale: F) {
        for &id in &ParamId::TRAINABLE {
            let src = other.get(id).expect("gradient sets share layout");
            let dst = self.get_mut(id).expect("gradient sets share layout");
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * *s;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for slot in self.slots.iter_mut().flatten() {
            for v in slot.data_mut() {
                *v = *v * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().flatten().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Walks the tape in reverse from `loss_grad` (∂loss/∂logits) and returns
/// gradients for every trainable tensor.
pub fn backward<F: Real>(tape: &Tape<'_, F>, loss_grad: &[F]) -> Result<GradientSet<F>> {
    ensure_arg!(
        loss_grad.len() == tape.logits().len(),
        "loss gradient has {} entries, logits have {}",
        loss_grad.len(),
        tape.logits().len()
    );
    let model = tape.model;
    let slope = model.surrogate_slope;
    let mut grads = GradientSet::zeros_for(model);
    let mut adjoint: Vec<Option<Vec<F>>> = (0..tape.nodes.len()).map(|_| None).collect();
    adjoint[tape.logits] = Some(loss_grad.to_vec());

    for id in (0..tape.nodes.len()).rev() {
        let Some(g) = adjoint[id].take() else { continue };
        match &tape.nodes[id].op {
            Op::Input | Op::Zeros => {}
            Op::Matvec { w, x } => {
                let x_vals = &tape.nodes[*x].out;
                let w_tensor = model.param(*w);
                w_tensor.matvec_t_accum(&g, accum(&mut adjoint, *x, x_vals.len()));
                if let Some(gw) = grads.get_mut(*w) {
                    gw.add_outer(&g, x_vals);
                }
            }
            Op::BlockMatvec { w, x, blocks } => {
                let x_vals = &tape.nodes[*x].out;
                let w_tensor = model.param(*w);
                w_tensor.block_matvec_t_accum(&g, accum(&mut adjoint, *x, x_vals.len()), *blocks);
                if let Some(gw) = grads.get_mut(*w) {
                    let d = w_tensor.cols();
                    for b in 0..*blocks {
                        gw.add_outer(&g[b * d..(b + 1) * d], &x_vals[b * d..(b + 1) * d]);
                    }
                }
            }
            Op::ExpandScale { w, x } => {
                let x_vals = &tape.nodes[*x].out;
                let w_tensor = model.param(*w);
                w_tensor.expand_scale_t_accum(&g, accum(&mut adjoint, *x, x_vals.len()));
                if let Some(gw) = grads.get_mut(*w) {
                    let d = gw.len();
                    for (c, xv) in x_vals.iter().enumerate() {
                        for k in 0..d {
                            gw.data_mut()[k] += g[c * d + k] * *xv;
                        }
                    }
                }
            }
            Op::ChannelExpand { w, x } => {
                let x_vals = &tape.nodes[*x].out;
                let w_tensor = model.param(*w);
                let e = w_tensor.cols();
                {
                    let gx = accum(&mut adjoint, *x, x_vals.len());
                    for (c, gxv) in gx.iter_mut().enumerate() {
                        let row = &w_tensor.data()[c * e..(c + 1) * e];
                        let mut acc = F::ZERO;
                        for (wv, gv) in row.iter().zip(&g[c * e..(c + 1) * e]) {
                            acc += *wv * *gv;
                        }
                        *gxv += acc;
                    }
                }
                if let Some(gw) = grads.get_mut(*w) {
                    for (c, xv) in x_vals.iter().enumerate() {
                        let grow = &g[c * e..(c + 1) * e];
                        let wrow = &mut gw.data_mut()[c * e..(c + 1) * e];
                        for (wg, gv) in wrow.iter_mut().zip(grow) {
                            *wg += *gv * *xv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                let n = g.len();
                for (dst, src) in accum(&mut adjoint, *a, n).iter_mut().zip(&g) {
                    *dst += *src;
                }
                for (dst, src) in accum(&mut adjoint, *b, n).iter_mut().zip(&g) {
                    *dst += *src;
                }
            }
            Op::Membrane { beta, theta_v, u, s_prev, current } => {
                let n = g.len();
                for (dst, src) in accum(&mut adjoint, *u, n).iter_mut().zip(&g) {
                    *dst += *beta * *src;
                }
                for (dst, src) in accum(&mut adjoint, *current, n).iter_mut().zip(&g) {
                    *dst += *src;
                }
                // Reset term −S_{t−1}·Θ: gradients flow, not detached.
                for (dst, src) in accum(&mut adjoint, *s_prev, n).iter_mut().zip(&g) {
                    *dst -= *theta_v * *src;
                }
            }
            Op::Current { alpha, i_prev, current } => {
                let n = g.len();
                for (dst, src) in accum(&mut adjoint, *i_prev, n).iter_mut().zip(&g) {
                    *dst += *alpha * *src;
                }
                for (dst, src) in accum(&mut adjoint, *current, n).iter_mut().zip(&g) {
                    *dst += *src;
                }
            }
            Op::Spike { theta_v, u } => {
                let u_vals = &tape.nodes[*u].out;
                let gu = accum(&mut adjoint, *u, u_vals.len());
                for ((dst, src), uv) in gu.iter_mut().zip(&g).zip(u_vals) {
                    *dst += *src * surrogate_derivative_unchecked(*uv - *theta_v, slope);
                }
            }
        }
    }
    Ok(grads)
}

fn accum<F: Real>(adjoint: &mut [Option<Vec<F>>], node: NodeId, n: usize) -> &mut Vec<F> {
    adjoint[node].get_or_insert_with(|| vec![F::ZERO; n])
}

/// Cross-entropy loss of a smoothed-mode forward pass (the function the
/// finite-difference oracle probes).
fn smoothed_loss(model: &Model<f64>, window: &Window<f64>, label: usize) -> Result<f64> {
    let mut eng =
        Evaluator { mode: SpikeMode::Smoothed, slope: model.surrogate_slope, spike_trace: None };
    let logits = network_forward_engine(&mut eng, model, window);
    let (loss, _) = crate::train::cross_entropy(&logits, label)?;
    Ok(loss)
}

/// Central-difference check of [`backward`] on the smoothed 64-bit network.
///
/// Perturbs `sample_count` randomly chosen trainable coordinates by ±ε and
/// returns the worst relative error between (L(+ε)−L(−ε))/2ε and the
/// recorded gradient. Coordinates where both values sit below 1e-6 are
/// compared on that absolute scale instead.
pub fn finite_difference_check(
    model: &Model<f64>,
    window: &Window<f64>,
    label: usize,
    epsilon: f64,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    ensure_arg!(epsilon > 0.0, "epsilon must be positive, got {epsilon}");
    ensure_arg!(sample_count >= 1, "sample_count must be >= 1");
    ensure_arg!(
        label < model.dims.n_classes,
        "label {label} out of range for {} classes",
        model.dims.n_classes
    );

    let (logits, tape) = forward_recorded_mode(model, window, SpikeMode::Smoothed)?;
    let (_, dlogits) = crate::train::cross_entropy(&logits, label)?;
    let grads = backward(&tape, &dlogits)?;

    // Flat coordinate space across the trainable tensors.
    let sizes: Vec<(ParamId, usize)> =
        ParamId::TRAINABLE.iter().map(|&id| (id, model.param(id).len())).collect();
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = std::collections::BTreeSet::new();
    while picked.len() < sample_count.min(total) {
        picked.insert(rng.gen_range(0..total));
    }

    let mut worst = 0.0_f64;
    for flat in picked {
        let (id, idx) = locate(&sizes, flat);
        let mut perturbed = model.clone();
        perturbed.param_mut(id).data_mut()[idx] += epsilon;
        let plus = smoothed_loss(&perturbed, window, label)?;
        perturbed.param_mut(id).data_mut()[idx] -= 2.0 * epsilon;
        let minus = smoothed_loss(&perturbed, window, label)?;
        let fd = (plus - minus) / (2.0 * epsilon);
        let g = grads.get(id).expect("trainable gradient").data()[idx];
        let denom = fd.abs().max(g.abs()).max(1e-6);
        let rel = (fd - g).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

fn locate(sizes: &[(ParamId, usize)], mut flat: usize) -> (ParamId, usize) {
    for &(id, n) in sizes {
        if flat < n {
            return (id, flat);
        }
        flat -= n;
    }
    unreachable!("flat index out of range")
}
