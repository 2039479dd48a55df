//! The spiking memory cell — u (input projection), m (memory) and h (hidden)
//! populations exchanging binary spikes — plus the assembled network:
//! encoder front end, cell, and an integrator readout summed over the window.
//!
//! Step ordering inside one cell step follows the state indices of the
//! recurrence: u consumes h and m spikes from the previous step, m consumes
//! fresh u spikes (and its own previous spikes through Ā), h consumes fresh
//! m spikes. Ā and B̄ are fixed; only the encoding/weight matrices and the
//! readout train.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::{self, EncoderParams};
use crate::engine::{Engine, Evaluator, ParamId};
use crate::error::{ensure_arg, Result};
use crate::lmu_math::StateSpace;
use crate::neuron::PopulationState;
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_SURROGATE_SLOPE: f64 = 25.0;

/// Which neuron model every population in the network uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Leaky,
    Synaptic,
}

impl Variant {
    pub fn tag(self) -> u8 {
        match self {
            Variant::Leaky => 0,
            Variant::Synaptic => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Variant> {
        match tag {
            0 => Some(Variant::Leaky),
            1 => Some(Variant::Synaptic),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "leaky" => Ok(Variant::Leaky),
            "synaptic" => Ok(Variant::Synaptic),
            other => Err(crate::Error::arg(format!(
                "unknown variant '{other}' (expected 'leaky' or 'synaptic')"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Leaky => "leaky",
            Variant::Synaptic => "synaptic",
        }
    }
}

/// Per-population neuron constants. `alpha` only drives the Synaptic model
/// but is carried (and checkpointed) for both variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopParams<F> {
    pub alpha: F,
    pub beta: F,
    pub theta_v: F,
}

impl<F: Real> PopParams<F> {
    pub fn validate(&self) -> Result<()> {
        ensure_arg!(
            self.alpha >= F::ZERO && self.alpha <= F::ONE,
            "alpha must lie in [0, 1], got {}",
            self.alpha
        );
        ensure_arg!(
            self.beta > F::ZERO && self.beta <= F::ONE,
            "beta must lie in (0, 1], got {}",
            self.beta
        );
        ensure_arg!(self.theta_v > F::ZERO, "threshold must be positive, got {}", self.theta_v);
        Ok(())
    }
}

/// Neuron constants for all six populations of the assembled network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopulationSet<F> {
    pub enc_expand: PopParams<F>,
    pub enc_fuse: PopParams<F>,
    pub enc_harm: PopParams<F>,
    pub u: PopParams<F>,
    pub m: PopParams<F>,
    pub h: PopParams<F>,
}

impl<F: Real> PopulationSet<F> {
    /// Config defaults; reachable thresholds and moderate decay everywhere.
    pub fn defaults(_variant: Variant) -> Self {
        let p = PopParams {
            alpha: F::from_f64(0.7),
            beta: F::from_f64(0.9),
            theta_v: F::from_f64(0.5),
        };
        PopulationSet { enc_expand: p, enc_fuse: p, enc_harm: p, u: p, m: p, h: p }
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.iter() {
            p.validate()?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &PopParams<F>> {
        [&self.enc_expand, &self.enc_fuse, &self.enc_harm, &self.u, &self.m, &self.h].into_iter()
    }
}

/// Architecture dimensions of the assembled network. The cell's input width
/// n_x equals the encoder's harmonization size, and the memory population
/// holds d units per u neuron (n_m = n_u·d).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dims {
    pub n_channels: usize,
    pub n_expand: usize,
    pub n_fuse: usize,
    pub n_harm: usize,
    pub n_u: usize,
    pub n_h: usize,
    pub d: usize,
    pub theta: f64,
    pub dt: f64,
    pub n_classes: usize,
}

impl Dims {
    pub fn n_x(&self) -> usize {
        self.n_harm
    }

    pub fn n_m(&self) -> usize {
        self.n_u * self.d
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_channels", self.n_channels),
            ("n_expand", self.n_expand),
            ("n_fuse", self.n_fuse),
            ("n_harm", self.n_harm),
            ("n_u", self.n_u),
            ("n_h", self.n_h),
            ("d", self.d),
            ("n_classes", self.n_classes),
        ] {
            ensure_arg!(v >= 1, "dimension {name} must be >= 1");
        }
        ensure_arg!(self.theta > 0.0, "theta must be positive, got {}", self.theta);
        ensure_arg!(
            self.dt > 0.0 && self.dt <= self.theta,
            "dt must satisfy 0 < dt <= theta, got dt={} theta={}",
            self.dt,
            self.theta
        );
        Ok(())
    }

    /// Full-scale Leaky-variant dimensions (the memory order follows from
    /// 1050 = 150·7).
    pub fn full_leaky() -> Dims {
        Dims {
            n_channels: 6,
            n_expand: 30,
            n_fuse: 170,
            n_harm: 10,
            n_u: 150,
            n_h: 60,
            d: 7,
            theta: 40.0,
            dt: 1.0,
            n_classes: 7,
        }
    }

    /// Full-scale Synaptic-variant dimensions (1840 = 230·8).
    pub fn full_synaptic() -> Dims {
        Dims {
            n_channels: 6,
            n_expand: 30,
            n_fuse: 180,
            n_harm: 10,
            n_u: 230,
            n_h: 180,
            d: 8,
            theta: 40.0,
            dt: 1.0,
            n_classes: 7,
        }
    }

    /// Small configuration sized for the synthetic three-class task.
    pub fn synth_default() -> Dims {
        Dims {
            n_channels: 6,
            n_expand: 8,
            n_fuse: 32,
            n_harm: 12,
            n_u: 20,
            n_h: 16,
            d: 4,
            theta: 40.0,
            dt: 1.0,
            n_classes: 3,
        }
    }

    #[cfg(test)]
    pub(crate) fn tiny_test() -> Dims {
        Dims {
            n_channels: 6,
            n_expand: 3,
            n_fuse: 5,
            n_harm: 4,
            n_u: 4,
            n_h: 4,
            d: 2,
            theta: 40.0,
            dt: 1.0,
            n_classes: 3,
        }
    }
}

/// Parameters of the spiking memory cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams<F> {
    pub variant: Variant,
    pub n_x: usize,
    pub n_u: usize,
    pub n_h: usize,
    pub d: usize,
    /// Encoding matrices feeding the u population: n_u × n_x / n_h / n_m.
    pub e_x: Tensor<F>,
    pub e_h: Tensor<F>,
    pub e_m: Tensor<F>,
    /// Hidden-state matrices: n_h × n_x / n_h / n_m.
    pub w_x: Tensor<F>,
    pub w_h: Tensor<F>,
    pub w_m: Tensor<F>,
    /// Frozen discretized memory matrices (d × d and d).
    pub a_bar: Tensor<F>,
    pub b_bar: Tensor<F>,
    pub u_pop: PopParams<F>,
    pub m_pop: PopParams<F>,
    pub h_pop: PopParams<F>,
}

impl<F: Real> CellParams<F> {
    pub fn n_m(&self) -> usize {
        self.n_u * self.d
    }
}

/// Mutable population states of one cell instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<F> {
    pub u: PopulationState<F>,
    pub m: PopulationState<F>,
    pub h: PopulationState<F>,
}

impl<F: Real> CellState<F> {
    pub fn zeros(params: &CellParams<F>) -> Self {
        let pop = |n| match params.variant {
            Variant::Leaky => PopulationState::zeros_leaky(n),
            Variant::Synaptic => PopulationState::zeros_synaptic(n),
        };
        CellState { u: pop(params.n_u), m: pop(params.n_m()), h: pop(params.n_h) }
    }
}

/// The full trainable network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<F> {
    pub variant: Variant,
    pub dims: Dims,
    pub encoder: EncoderParams<F>,
    pub cell: CellParams<F>,
    /// Readout map n_classes × n_h, applied to h spikes and summed over the
    /// window into logits.
    pub w_out: Tensor<F>,
    pub surrogate_slope: F,
}

impl<F: Real> Model<F> {
    /// Builds a model with seeded uniform ±1/√fan_in weights and the frozen
    /// memory matrices for (d, θ, dt).
    pub fn new(variant: Variant, dims: Dims, pops: &PopulationSet<F>, seed: u64) -> Result<Self> {
        dims.validate()?;
        pops.validate()?;
        let ss = StateSpace::new(dims.d, dims.theta, dims.dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut init = |rows: usize, cols: usize, fan_in: usize| -> Tensor<F> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| F::from_f64((2.0 * rng.gen::<f64>() - 1.0) * bound))
                .collect();
            Tensor::matrix(rows, cols, data)
        };

        let n_x = dims.n_x();
        let n_m = dims.n_m();
        let encoder = EncoderParams {
            variant,
            w_expand: init(dims.n_channels, dims.n_expand, 1),
            w_fuse: init(dims.n_fuse, dims.n_channels * dims.n_expand, dims.n_channels * dims.n_expand),
            w_harm: init(dims.n_harm, dims.n_fuse, dims.n_fuse),
            expand_pop: pops.enc_expand,
            fuse_pop: pops.enc_fuse,
            harm_pop: pops.enc_harm,
        };
        let cell = CellParams {
            variant,
            n_x,
            n_u: dims.n_u,
            n_h: dims.n_h,
            d: dims.d,
            e_x: init(dims.n_u, n_x, n_x),
            e_h: init(dims.n_u, dims.n_h, dims.n_h),
            e_m: init(dims.n_u, n_m, n_m),
            w_x: init(dims.n_h, n_x, n_x),
            w_h: init(dims.n_h, dims.n_h, dims.n_h),
            w_m: init(dims.n_h, n_m, n_m),
            a_bar: Tensor::matrix(dims.d, dims.d, ss.a_bar.iter().map(|&v| F::from_f64(v)).collect()),
            b_bar: Tensor::vector(ss.b_bar.iter().map(|&v| F::from_f64(v)).collect()),
            u_pop: pops.u,
            m_pop: pops.m,
            h_pop: pops.h,
        };
        let w_out = init(dims.n_classes, dims.n_h, dims.n_h);

        let model = Model {
            variant,
            dims,
            encoder,
            cell,
            w_out,
            surrogate_slope: F::from_f64(DEFAULT_SURROGATE_SLOPE),
        };
        model.encoder.validate()?;
        Ok(model)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<F> {
        match id {
            ParamId::EncExpand => &self.encoder.w_expand,
            ParamId::EncFuse => &self.encoder.w_fuse,
            ParamId::EncHarm => &self.encoder.w_harm,
            ParamId::Ex => &self.cell.e_x,
            ParamId::Eh => &self.cell.e_h,
            ParamId::Em => &self.cell.e_m,
            ParamId::Wx => &self.cell.w_x,
            ParamId::Wh => &self.cell.w_h,
            ParamId::Wm => &self.cell.w_m,
            ParamId::WOut => &self.w_out,
            ParamId::ABar => &self.cell.a_bar,
            ParamId::BBar => &self.cell.b_bar,
        }
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        match id {
            ParamId::EncExpand => &mut self.encoder.w_expand,
            ParamId::EncFuse => &mut self.encoder.w_fuse,
            ParamId::EncHarm => &mut self.encoder.w_harm,
            ParamId::Ex => &mut self.cell.e_x,
            ParamId::Eh => &mut self.cell.e_h,
            ParamId::Em => &mut self.cell.e_m,
            ParamId::Wx => &mut self.cell.w_x,
            ParamId::Wh => &mut self.cell.w_h,
            ParamId::Wm => &mut self.cell.w_m,
            ParamId::WOut => &mut self.w_out,
            ParamId::ABar => &mut self.cell.a_bar,
            ParamId::BBar => &mut self.cell.b_bar,
        }
    }

    /// Neuron constants of the six populations in checkpoint order.
    pub fn population_set(&self) -> PopulationSet<F> {
        PopulationSet {
            enc_expand: self.encoder.expand_pop,
            enc_fuse: self.encoder.fuse_pop,
            enc_harm: self.encoder.harm_pop,
            u: self.cell.u_pop,
            m: self.cell.m_pop,
            h: self.cell.h_pop,
        }
    }

    pub fn trainable_param_count(&self) -> usize {
        ParamId::TRAINABLE.iter().map(|&id| self.param(id).len()).sum()
    }

    /// Same model at a different float width (used by the gradient oracle).
    pub fn convert<G: Real>(&self) -> Model<G> {
        let conv_pop = |p: &PopParams<F>| PopParams {
            alpha: G::from_f64(p.alpha.to_f64()),
            beta: G::from_f64(p.beta.to_f64()),
            theta_v: G::from_f64(p.theta_v.to_f64()),
        };
        Model {
            variant: self.variant,
            dims: self.dims,
            encoder: EncoderParams {
                variant: self.variant,
                w_expand: self.encoder.w_expand.map_to(),
                w_fuse: self.encoder.w_fuse.map_to(),
                w_harm: self.encoder.w_harm.map_to(),
                expand_pop: conv_pop(&self.encoder.expand_pop),
                fuse_pop: conv_pop(&self.encoder.fuse_pop),
                harm_pop: conv_pop(&self.encoder.harm_pop),
            },
            cell: CellParams {
                variant: self.variant,
                n_x: self.cell.n_x,
                n_u: self.cell.n_u,
                n_h: self.cell.n_h,
                d: self.cell.d,
                e_x: self.cell.e_x.map_to(),
                e_h: self.cell.e_h.map_to(),
                e_m: self.cell.e_m.map_to(),
                w_x: self.cell.w_x.map_to(),
                w_h: self.cell.w_h.map_to(),
                w_m: self.cell.w_m.map_to(),
                a_bar: self.cell.a_bar.map_to(),
                b_bar: self.cell.b_bar.map_to(),
                u_pop: conv_pop(&self.cell.u_pop),
                m_pop: conv_pop(&self.cell.m_pop),
                h_pop: conv_pop(&self.cell.h_pop),
            },
            w_out: self.w_out.map_to(),
            surrogate_slope: G::from_f64(self.surrogate_slope.to_f64()),
        }
    }
}

/// One input window: `steps` rows of `channels` raw sensor values.
#[derive(Clone, Debug, PartialEq)]
pub struct Window<F> {
    steps: usize,
    channels: usize,
    data: Vec<F>,
}

impl<F: Real> Window<F> {
    pub fn new(steps: usize, channels: usize, data: Vec<F>) -> Result<Self> {
        ensure_arg!(steps >= 1 && channels >= 1, "window must be at least 1×1");
        ensure_arg!(
            data.len() == steps * channels,
            "window data has {} values, expected {}×{}",
            data.len(),
            steps,
            channels
        );
        Ok(Window { steps, channels, data })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn row(&self, t: usize) -> &[F] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn convert<G: Real>(&self) -> Window<G> {
        Window {
            steps: self.steps,
            channels: self.channels,
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Engine-generic step implementations. Every forward path (plain, recorded,
// probed) and the standalone step operations below run through these.
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub(crate) struct PopRef<V> {
    pub u: V,
    pub s: V,
    pub i: Option<V>,
}

pub(crate) fn zero_pop_ref<F: Real, E: Engine<F>>(
    eng: &mut E,
    variant: Variant,
    n: usize,
) -> PopRef<E::Val> {
    PopRef {
        u: eng.zeros(n),
        s: eng.zeros(n),
        i: match variant {
            Variant::Leaky => None,
            Variant::Synaptic => Some(eng.zeros(n)),
        },
    }
}

pub(crate) fn pop_step_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    variant: Variant,
    p: &PopParams<F>,
    state: &PopRef<E::Val>,
    current: &E::Val,
) -> (PopRef<E::Val>, E::Val) {
    let (i_new, u_new) = match variant {
        Variant::Leaky => {
            (None, eng.membrane_update(p.beta, p.theta_v, &state.u, &state.s, current))
        }
        Variant::Synaptic => {
            let i_prev = state.i.as_ref().expect("synaptic state carries I_syn");
            let i = eng.current_update(p.alpha, i_prev, current);
            let u = eng.membrane_update(p.beta, p.theta_v, &state.u, &state.s, &i);
            (Some(i), u)
        }
    };
    let s = eng.spike(p.theta_v, &u_new);
    (PopRef { u: u_new, s: s.clone(), i: i_new }, s)
}

pub(crate) fn u_step_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    cell: &CellParams<F>,
    x_spk: &E::Val,
    h_prev_spk: &E::Val,
    m_prev_spk: &E::Val,
    u_state: &PopRef<E::Val>,
) -> (PopRef<E::Val>, E::Val) {
    let from_x = eng.matvec(ParamId::Ex, &cell.e_x, x_spk);
    let from_h = eng.matvec(ParamId::Eh, &cell.e_h, h_prev_spk);
    let from_m = eng.matvec(ParamId::Em, &cell.e_m, m_prev_spk);
    let partial = eng.add(&from_x, &from_h);
    let current = eng.add(&partial, &from_m);
    pop_step_engine(eng, cell.variant, &cell.u_pop, u_state, &current)
}

pub(crate) fn m_step_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    cell: &CellParams<F>,
    u_spk: &E::Val,
    m_state: &PopRef<E::Val>,
) -> (PopRef<E::Val>, E::Val) {
    let recur = eng.block_matvec(ParamId::ABar, &cell.a_bar, &m_state.s, cell.n_u);
    let drive = eng.expand_scale(ParamId::BBar, &cell.b_bar, u_spk);
    let current = eng.add(&recur, &drive);
    pop_step_engine(eng, cell.variant, &cell.m_pop, m_state, &current)
}

pub(crate) fn h_step_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    cell: &CellParams<F>,
    x_spk: &E::Val,
    h_prev_spk: &E::Val,
    m_spk: &E::Val,
    h_state: &PopRef<E::Val>,
) -> (PopRef<E::Val>, E::Val) {
    let from_x = eng.matvec(ParamId::Wx, &cell.w_x, x_spk);
    let from_h = eng.matvec(ParamId::Wh, &cell.w_h, h_prev_spk);
    let from_m = eng.matvec(ParamId::Wm, &cell.w_m, m_spk);
    let partial = eng.add(&from_x, &from_h);
    let current = eng.add(&partial, &from_m);
    pop_step_engine(eng, cell.variant, &cell.h_pop, h_state, &current)
}

pub(crate) struct CellRef<V> {
    pub u: PopRef<V>,
    pub m: PopRef<V>,
    pub h: PopRef<V>,
}

pub(crate) fn cell_step_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    cell: &CellParams<F>,
    x_spk: &E::Val,
    state: &CellRef<E::Val>,
) -> (CellRef<E::Val>, E::Val) {
    let (u_new, u_spk) = u_step_engine(eng, cell, x_spk, &state.h.s, &state.m.s, &state.u);
    let (m_new, m_spk) = m_step_engine(eng, cell, &u_spk, &state.m);
    let (h_new, h_spk) = h_step_engine(eng, cell, x_spk, &state.h.s, &m_spk, &state.h);
    (CellRef { u: u_new, m: m_new, h: h_new }, h_spk)
}

pub(crate) fn network_forward_engine<F: Real, E: Engine<F>>(
    eng: &mut E,
    model: &Model<F>,
    window: &Window<F>,
) -> E::Val {
    let dims = &model.dims;
    let mut enc = [
        zero_pop_ref(eng, model.variant, dims.n_channels * dims.n_expand),
        zero_pop_ref(eng, model.variant, dims.n_fuse),
        zero_pop_ref(eng, model.variant, dims.n_harm),
    ];
    let mut cell = CellRef {
        u: zero_pop_ref(eng, model.variant, dims.n_u),
        m: zero_pop_ref(eng, model.variant, dims.n_m()),
        h: zero_pop_ref(eng, model.variant, dims.n_h),
    };
    let mut logits = eng.zeros(dims.n_classes);

    for t in 0..window.steps() {
        let x = eng.input(window.row(t).to_vec());
        let (enc_next, x_spk) = encoder::step_engine(eng, &model.encoder, &enc, &x);
        enc = enc_next;
        let (cell_next, h_spk) = cell_step_engine(eng, &model.cell, &x_spk, &cell);
        cell = cell_next;
        let contribution = eng.matvec(ParamId::WOut, &model.w_out, &h_spk);
        logits = eng.add(&logits, &contribution);
    }
    logits
}

pub(crate) fn pop_ref_from_state<F: Real>(state: &PopulationState<F>) -> PopRef<Vec<F>> {
    PopRef { u: state.u.clone(), s: state.s.clone(), i: state.i_syn.clone() }
}

pub(crate) fn pop_ref_into_state<F: Real>(r: PopRef<Vec<F>>) -> PopulationState<F> {
    PopulationState { u: r.u, i_syn: r.i, s: r.s }
}

pub(crate) fn pop_refs_from_states<F: Real>(
    states: [&PopulationState<F>; 3],
) -> [PopRef<Vec<F>>; 3] {
    [
        pop_ref_from_state(states[0]),
        pop_ref_from_state(states[1]),
        pop_ref_from_state(states[2]),
    ]
}

pub(crate) fn pop_refs_into_states<F: Real>(refs: [PopRef<Vec<F>>; 3]) -> [PopulationState<F>; 3] {
    let [a, b, c] = refs;
    [pop_ref_into_state(a), pop_ref_into_state(b), pop_ref_into_state(c)]
}

// ---------------------------------------------------------------------------
// Standalone step operations (thin evaluator instantiations of the above).
// ---------------------------------------------------------------------------

fn binary_input<F: Real>(name: &str, v: &[F], want: usize) -> Result<()> {
    ensure_arg!(v.len() == want, "{name}: expected width {want}, got {}", v.len());
    ensure_arg!(
        v.iter().all(|&s| s == F::ZERO || s == F::ONE),
        "{name}: spike vector must be binary"
    );
    Ok(())
}

/// u population update: current = e_x·x + e_h·h_{t−1} + e_m·m_{t−1}.
pub fn u_step<F: Real>(
    cell: &CellParams<F>,
    x_spk: &[F],
    h_prev_spk: &[F],
    m_prev_spk: &[F],
    u_state: &PopulationState<F>,
) -> Result<(PopulationState<F>, Vec<F>)> {
    binary_input("u_step x_spk", x_spk, cell.n_x)?;
    binary_input("u_step h_prev_spk", h_prev_spk, cell.n_h)?;
    binary_input("u_step m_prev_spk", m_prev_spk, cell.n_m())?;
    let mut eng = Evaluator::hard();
    let (state, spikes) = u_step_engine(
        &mut eng,
        cell,
        &x_spk.to_vec(),
        &h_prev_spk.to_vec(),
        &m_prev_spk.to_vec(),
        &pop_ref_from_state(u_state),
    );
    Ok((pop_ref_into_state(state), spikes))
}

/// m population update: per u channel, current = Ā·m_{t−1,spk} + B̄·u_spk.
pub fn m_step<F: Real>(
    cell: &CellParams<F>,
    u_spk: &[F],
    m_state: &PopulationState<F>,
) -> Result<(PopulationState<F>, Vec<F>)> {
    binary_input("m_step u_spk", u_spk, cell.n_u)?;
    let mut eng = Evaluator::hard();
    let (state, spikes) =
        m_step_engine(&mut eng, cell, &u_spk.to_vec(), &pop_ref_from_state(m_state));
    Ok((pop_ref_into_state(state), spikes))
}

/// h population update: current = W_x·x + W_h·h_{t−1} + W_m·m_t.
pub fn h_step<F: Real>(
    cell: &CellParams<F>,
    x_spk: &[F],
    h_prev_spk: &[F],
    m_spk: &[F],
    h_state: &PopulationState<F>,
) -> Result<(PopulationState<F>, Vec<F>)> {
    binary_input("h_step x_spk", x_spk, cell.n_x)?;
    binary_input("h_step h_prev_spk", h_prev_spk, cell.n_h)?;
    binary_input("h_step m_spk", m_spk, cell.n_m())?;
    let mut eng = Evaluator::hard();
    let (state, spikes) = h_step_engine(
        &mut eng,
        cell,
        &x_spk.to_vec(),
        &h_prev_spk.to_vec(),
        &m_spk.to_vec(),
        &pop_ref_from_state(h_state),
    );
    Ok((pop_ref_into_state(state), spikes))
}

/// Full cell step: u (on h_{t−1}, m_{t−1}), then m (on fresh u_t), then h
/// (on fresh m_t). Returns the h spikes.
pub fn cell_step<F: Real>(
    cell: &CellParams<F>,
    x_spk: &[F],
    state: &CellState<F>,
) -> Result<(CellState<F>, Vec<F>)> {
    binary_input("cell_step x_spk", x_spk, cell.n_x)?;
    let mut eng = Evaluator::hard();
    let state_ref = CellRef {
        u: pop_ref_from_state(&state.u),
        m: pop_ref_from_state(&state.m),
        h: pop_ref_from_state(&state.h),
    };
    let (next, h_spk) = cell_step_engine(&mut eng, cell, &x_spk.to_vec(), &state_ref);
    Ok((
        CellState {
            u: pop_ref_into_state(next.u),
            m: pop_ref_into_state(next.m),
            h: pop_ref_into_state(next.h),
        },
        h_spk,
    ))
}

/// Runs a whole window from reset state and returns class logits.
pub fn forward<F: Real>(model: &Model<F>, window: &Window<F>) -> Result<Vec<F>> {
    ensure_arg!(
        window.channels() == model.dims.n_channels,
        "window has {} channels, model expects {}",
        window.channels(),
        model.dims.n_channels
    );
    let mut eng = Evaluator::hard();
    Ok(network_forward_engine(&mut eng, model, window))
}

/// Argmax with ties broken toward the lowest class index.
pub fn predict<F: Real>(logits: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
