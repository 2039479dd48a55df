//! Execution engine behind every forward pass.
//!
//! The network semantics are written once, generically over [`Engine`]; the
//! plain evaluator, the gradient-tape recorder and the spike-trace probe are
//! just different engines. Because all of them run the same kernels in the
//! same order, a recorded or probed forward is bitwise identical to the
//! plain one by construction.

use crate::neuron::{
    current_update, membrane_update, spike_hard, surrogate_primitive,
};
use crate::real::Real;
use crate::tensor::{add, Tensor};

/// Identity of one parameter tensor in the network, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    EncExpand,
    EncFuse,
    EncHarm,
    Ex,
    Eh,
    Em,
    Wx,
    Wh,
    Wm,
    WOut,
    ABar,
    BBar,
}

impl ParamId {
    pub const ALL: [ParamId; 12] = [
        ParamId::EncExpand,
        ParamId::EncFuse,
        ParamId::EncHarm,
        ParamId::Ex,
        ParamId::Eh,
        ParamId::Em,
        ParamId::Wx,
        ParamId::Wh,
        ParamId::Wm,
        ParamId::WOut,
        ParamId::ABar,
        ParamId::BBar,
    ];

    /// The tensors touched by training and pruning; Ā and B̄ stay frozen.
    pub const TRAINABLE: [ParamId; 10] = [
        ParamId::EncExpand,
        ParamId::EncFuse,
        ParamId::EncHarm,
        ParamId::Ex,
        ParamId::Eh,
        ParamId::Em,
        ParamId::Wx,
        ParamId::Wh,
        ParamId::Wm,
        ParamId::WOut,
    ];

    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamId::ABar | ParamId::BBar)
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&p| p == self).unwrap()
    }

    /// Stable tensor name used by the checkpoint format.
    pub fn name(self) -> &'static str {
        match self {
            ParamId::EncExpand => "enc_expand",
            ParamId::EncFuse => "enc_fuse",
            ParamId::EncHarm => "enc_harm",
            ParamId::Ex => "e_x",
            ParamId::Eh => "e_h",
            ParamId::Em => "e_m",
            ParamId::Wx => "w_x",
            ParamId::Wh => "w_h",
            ParamId::Wm => "w_m",
            ParamId::WOut => "w_out",
            ParamId::ABar => "a_bar",
            ParamId::BBar => "b_bar",
        }
    }

    pub fn from_name(name: &str) -> Option<ParamId> {
        Self::ALL.iter().copied().find(|p| p.name() == name)
    }
}

/// How the spike nonlinearity runs: hard threshold (training and inference)
/// or the fast-sigmoid primitive (finite-difference oracle only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpikeMode {
    Hard,
    Smoothed,
}

pub(crate) trait Engine<F: Real> {
    type Val: Clone;

    fn input(&mut self, values: Vec<F>) -> Self::Val;
    fn zeros(&mut self, n: usize) -> Self::Val;
    fn matvec(&mut self, id: ParamId, w: &Tensor<F>, x: &Self::Val) -> Self::Val;
    fn block_matvec(&mut self, id: ParamId, w: &Tensor<F>, x: &Self::Val, blocks: usize)
        -> Self::Val;
    fn expand_scale(&mut self, id: ParamId, w: &Tensor<F>, x: &Self::Val) -> Self::Val;
    fn channel_expand(&mut self, id: ParamId, w: &Tensor<F>, x: &Self::Val) -> Self::Val;
    fn add(&mut self, a: &Self::Val, b: &Self::Val) -> Self::Val;
    fn membrane_update(
        &mut self,
        beta: F,
        theta_v: F,
        u: &Self::Val,
        s_prev: &Self::Val,
        current: &Self::Val,
    ) -> Self::Val;
    fn current_update(&mut self, alpha: F, i_prev: &Self::Val, current: &Self::Val) -> Self::Val;
    fn spike(&mut self, theta_v: F, u: &Self::Val) -> Self::Val;
}

pub(crate) fn spike_values<F: Real>(mode: SpikeMode, slope: F, theta_v: F, u: &[F]) -> Vec<F> {
    match mode {
        SpikeMode::Hard => spike_hard(u, theta_v),
        SpikeMode::Smoothed => {
            u.iter().map(|&u| surrogate_primitive(u - theta_v, slope)).collect()
        }
    }
}

/// Plain evaluating engine; optionally logs every spike vector it emits
/// (the synaptic-operation counter feeds on that trace).
pub(crate) struct Evaluator<'t, F> {
    pub mode: SpikeMode,
    pub slope: F,
    pub spike_trace: Option<&'t mut Vec<Vec<F>>>,
}

impl<F: Real> Evaluator<'_, F> {
    /// Plain hard-threshold evaluation; the slope never enters this mode.
    pub fn hard() -> Evaluator<'static, F> {
        Evaluator { mode: SpikeMode::Hard, slope: F::ONE, spike_trace: None }
    }
}

impl<F: Real> Engine<F> for Evaluator<'_, F> {
    type Val = Vec<F>;

    fn input(&mut self, values: Vec<F>) -> Vec<F> {
        values
    }

    fn zeros(&mut self, n: usize) -> Vec<F> {
        vec![F::ZERO; n]
    }

    fn matvec(&mut self, _id: ParamId, w: &Tensor<F>, x: &Vec<F>) -> Vec<F> {
        w.matvec(x)
    }

    fn block_matvec(&mut self, _id: ParamId, w: &Tensor<F>, x: &Vec<F>, blocks: usize) -> Vec<F> {
        w.block_matvec(x, blocks)
    }

    fn expand_scale(&mut self, _id: ParamId, w: &Tensor<F>, x: &Vec<F>) -> Vec<F> {
        w.expand_scale(x)
    }

    fn channel_expand(&mut self, _id: ParamId, w: &Tensor<F>, x: &Vec<F>) -> Vec<F> {
        w.channel_expand(x)
    }

    fn add(&mut self, a: &Vec<F>, b: &Vec<F>) -> Vec<F> {
        add(a, b)
    }

    fn membrane_update(
        &mut self,
        beta: F,
        theta_v: F,
        u: &Vec<F>,
        s_prev: &Vec<F>,
        current: &Vec<F>,
    ) -> Vec<F> {
        membrane_update(beta, theta_v, u, s_prev, current)
    }

    fn current_update(&mut self, alpha: F, i_prev: &Vec<F>, current: &Vec<F>) -> Vec<F> {
        current_update(alpha, i_prev, current)
    }

    fn spike(&mut self, theta_v: F, u: &Vec<F>) -> Vec<F> {
        let s = spike_values(self.mode, self.slope, theta_v, u);
        if let Some(trace) = self.spike_trace.as_deref_mut() {
            trace.push(s.clone());
        }
        s
    }
}
