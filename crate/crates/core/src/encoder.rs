//! Three-layer real-to-spike encoding front end: per-channel expansion
//! populations, a fusion layer and a harmonization layer, all of the
//! network's neuron variant.
//!
//! Layer 1 gives each input channel its own population driven by one weight
//! per neuron; layers 2 and 3 are fully connected, no biases anywhere. Raw
//! sensor values go in, binary spikes come out.

use crate::engine::{Engine, Evaluator, ParamId};
use crate::error::{ensure_arg, Result};
use crate::l2mu::{PopParams, Variant};
use crate::neuron::PopulationState;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F> {
    pub variant: Variant,
    /// One weight per (channel, neuron) pair: n_channels × n_expand.
    pub w_expand: Tensor<F>,
    /// Fusion layer: n_fuse × (n_channels · n_expand).
    pub w_fuse: Tensor<F>,
    /// Harmonization layer: n_harm × n_fuse.
    pub w_harm: Tensor<F>,
    pub expand_pop: PopParams<F>,
    pub fuse_pop: PopParams<F>,
    pub harm_pop: PopParams<F>,
}

impl<F: Real> EncoderParams<F> {
    pub fn n_channels(&self) -> usize {
        self.w_expand.dims()[0]
    }

    pub fn n_expand(&self) -> usize {
        self.w_expand.dims()[1]
    }

    pub fn n_fuse(&self) -> usize {
        self.w_fuse.dims()[0]
    }

    pub fn n_harm(&self) -> usize {
        self.w_harm.dims()[0]
    }

    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.w_fuse.dims()[1] == self.n_channels() * self.n_expand(),
            "fusion weights expect {} inputs, expansion emits {}",
            self.w_fuse.dims()[1],
            self.n_channels() * self.n_expand()
        );
        ensure_arg!(
            self.w_harm.dims()[1] == self.n_fuse(),
            "harmonization weights expect {} inputs, fusion emits {}",
            self.w_harm.dims()[1],
            self.n_fuse()
        );
        Ok(())
    }
}

/// States of the three encoder populations.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState<F> {
    pub expand: PopulationState<F>,
    pub fuse: PopulationState<F>,
    pub harm: PopulationState<F>,
}

impl<F: Real> EncoderState<F> {
    pub fn zeros(params: &EncoderParams<F>) -> Self {
        let pop = |n| match params.variant {
            Variant::Leaky => PopulationState::zeros_leaky(n),
            Variant::Synaptic => PopulationState::zeros_synaptic(n),
        };
        EncoderState {
            expand: pop(params.n_channels() * params.n_expand()),
            fuse: pop(params.n_fuse()),
            harm: pop(params.n_harm()),
        }
    }
}

/// Advances all three layers by one timestep on a raw sensor frame and
/// returns the harmonization-layer spikes.
pub fn encoder_step<F: Real>(
    params: &EncoderParams<F>,
    state: &EncoderState<F>,
    x_t: &[F],
) -> Result<(EncoderState<F>, Vec<F>)> {
    ensure_arg!(
        x_t.len() == params.n_channels(),
        "encoder_step expects {} channels, got {}",
        params.n_channels(),
        x_t.len()
    );
    let mut eng = Evaluator::hard();
    let state_ref =
        crate::l2mu::pop_refs_from_states([&state.expand, &state.fuse, &state.harm]);
    let x = eng.input(x_t.to_vec());
    let (next, spikes) = step_engine(&mut eng, params, &state_ref, &x);
    let [expand, fuse, harm] = crate::l2mu::pop_refs_into_states(next);
    Ok((EncoderState { expand, fuse, harm }, spikes))
}

/// Zeroes every layer (between samples).
pub fn encoder_reset<F: Real>(params: &EncoderParams<F>, _state: &EncoderState<F>) -> EncoderState<F> {
    EncoderState::zeros(params)
}

pub(crate) type EncRef<V> = [crate::l2mu::PopRef<V>; 3];

pub(crate) fn step_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    params: &EncoderParams<F>,
    state: &EncRef<E::Val>,
    x_t: &E::Val,
) -> (EncRef<E::Val>, E::Val) {
    let cur1 = eng.channel_expand(ParamId::EncExpand, &params.w_expand, x_t);
    let (expand, s1) =
        crate::l2mu::pop_step_engine(eng, params.variant, &params.expand_pop, &state[0], &cur1);
    let cur2 = eng.matvec(ParamId::EncFuse, &params.w_fuse, &s1);
    let (fuse, s2) =
        crate::l2mu::pop_step_engine(eng, params.variant, &params.fuse_pop, &state[1], &cur2);
    let cur3 = eng.matvec(ParamId::EncHarm, &params.w_harm, &s2);
    let (harm, s3) =
        crate::l2mu::pop_step_engine(eng, params.variant, &params.harm_pop, &state[2], &cur3);
    ([expand, fuse, harm], s3)
}
