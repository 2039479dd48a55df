//! Leaky (LIF) and Synaptic (CuBa-LIF) population dynamics with subtractive
//! reset, plus the surrogate spike derivative used during training.
//!
//! Update order per step: decay and input are applied first (with the reset
//! term driven by the *previous* step's spikes), then the spike condition is
//! evaluated on the fresh membrane. Threshold crossings are strict
//! (U > Θ fires, U == Θ does not).

use crate::error::{ensure_arg, Result};
use crate::real::Real;
use crate::tensor::check_len;

/// Leaky membrane parameters: decay β ∈ (0,1], threshold Θ > 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeakyParams<F> {
    pub beta: F,
    pub theta_v: F,
}

impl<F: Real> LeakyParams<F> {
    pub fn new(beta: F, theta_v: F) -> Result<Self> {
        ensure_arg!(
            beta > F::ZERO && beta <= F::ONE,
            "membrane decay beta must lie in (0, 1], got {beta}"
        );
        ensure_arg!(theta_v > F::ZERO, "threshold must be positive, got {theta_v}");
        Ok(LeakyParams { beta, theta_v })
    }
}

/// Synaptic-conductance parameters: current decay α, membrane decay β,
/// threshold Θ.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynapticParams<F> {
    pub alpha: F,
    pub beta: F,
    pub theta_v: F,
}

impl<F: Real> SynapticParams<F> {
    pub fn new(alpha: F, beta: F, theta_v: F) -> Result<Self> {
        ensure_arg!(
            alpha >= F::ZERO && alpha <= F::ONE,
            "synaptic decay alpha must lie in [0, 1], got {alpha}"
        );
        ensure_arg!(
            beta > F::ZERO && beta <= F::ONE,
            "membrane decay beta must lie in (0, 1], got {beta}"
        );
        ensure_arg!(theta_v > F::ZERO, "threshold must be positive, got {theta_v}");
        Ok(SynapticParams { alpha, beta, theta_v })
    }
}

/// Mutable state of one neuron population: membrane potentials, optional
/// synaptic currents (Synaptic model only), and the previous step's spikes
/// stored as 0.0/1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationState<F> {
    pub u: Vec<F>,
    pub i_syn: Option<Vec<F>>,
    pub s: Vec<F>,
}

impl<F: Real> PopulationState<F> {
    pub fn zeros_leaky(n: usize) -> Self {
        PopulationState { u: vec![F::ZERO; n], i_syn: None, s: vec![F::ZERO; n] }
    }

    pub fn zeros_synaptic(n: usize) -> Self {
        PopulationState {
            u: vec![F::ZERO; n],
            i_syn: Some(vec![F::ZERO; n]),
            s: vec![F::ZERO; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// One Leaky step: U' = β·U + current − S_prev·Θ, then S' = 1 where U' > Θ.
///
/// `current` is the already weight-multiplied input drive; weight application
/// belongs to the owning layer.
pub fn leaky_step<F: Real>(
    params: &LeakyParams<F>,
    state: &PopulationState<F>,
    current: &[F],
) -> Result<(PopulationState<F>, Vec<F>)> {
    check_len("leaky_step current", current, state.len())?;
    let u = membrane_update(params.beta, params.theta_v, &state.u, &state.s, current);
    let s = spike_hard(&u, params.theta_v);
    Ok((PopulationState { u, i_syn: None, s: s.clone() }, s))
}

/// One Synaptic step: I' = α·I + current, U' = β·U + I' − S_prev·Θ, then the
/// spike condition as in [`leaky_step`].
pub fn synaptic_step<F: Real>(
    params: &SynapticParams<F>,
    state: &PopulationState<F>,
    current: &[F],
) -> Result<(PopulationState<F>, Vec<F>)> {
    check_len("synaptic_step current", current, state.len())?;
    let i_prev = state
        .i_syn
        .as_ref()
        .ok_or_else(|| crate::Error::arg("synaptic_step needs a state with I_syn"))?;
    let i = current_update(params.alpha, i_prev, current);
    let u = membrane_update(params.beta, params.theta_v, &state.u, &state.s, &i);
    let s = spike_hard(&u, params.theta_v);
    Ok((PopulationState { u, i_syn: Some(i), s: s.clone() }, s))
}

/// Zeroes U, I_syn and S while keeping the population size.
pub fn reset_population<F: Real>(state: &PopulationState<F>) -> PopulationState<F> {
    let n = state.len();
    PopulationState {
        u: vec![F::ZERO; n],
        i_syn: state.i_syn.as_ref().map(|_| vec![F::ZERO; n]),
        s: vec![F::ZERO; n],
    }
}

/// Derivative of the fast-sigmoid spike relaxation, normalized to 1 at the
/// threshold: 1 / (1 + slope·|U − Θ|)².
pub fn surrogate_derivative<F: Real>(u_minus_theta: F, slope: F) -> Result<F> {
    ensure_arg!(slope > F::ZERO, "surrogate slope must be positive, got {slope}");
    Ok(surrogate_derivative_unchecked(u_minus_theta, slope))
}

pub(crate) fn surrogate_derivative_unchecked<F: Real>(u_minus_theta: F, slope: F) -> F {
    let denom = F::ONE + slope * u_minus_theta.abs();
    F::ONE / (denom * denom)
}

/// Fast-sigmoid primitive x / (1 + slope·|x|) whose exact derivative is
/// [`surrogate_derivative`]; stands in for the Heaviside when the smoothed
/// forward mode runs (finite-difference oracle only).
pub(crate) fn surrogate_primitive<F: Real>(u_minus_theta: F, slope: F) -> F {
    u_minus_theta / (F::ONE + slope * u_minus_theta.abs())
}

pub(crate) fn membrane_update<F: Real>(
    beta: F,
    theta_v: F,
    u: &[F],
    s_prev: &[F],
    current: &[F],
) -> Vec<F> {
    u.iter()
        .zip(s_prev)
        .zip(current)
        .map(|((u, s), c)| beta * *u + *c - *s * theta_v)
        .collect()
}

pub(crate) fn current_update<F: Real>(alpha: F, i_prev: &[F], current: &[F]) -> Vec<F> {
    i_prev.iter().zip(current).map(|(i, c)| alpha * *i + *c).collect()
}

pub(crate) fn spike_hard<F: Real>(u: &[F], theta_v: F) -> Vec<F> {
    u.iter().map(|&u| if u > theta_v { F::ONE } else { F::ZERO }).collect()
}
