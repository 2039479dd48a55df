//! Versioned binary checkpoint: bit-exact serialization of the model
//! parameters, architecture metadata, neuron constants and (optionally) the
//! prune mask.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic           4 bytes  "L2MU"
//! version         u16      currently 1
//! variant         u8       0 = Leaky, 1 = Synaptic
//! dims            u32 × 9  n_channels n_expand n_fuse n_harm n_x n_u n_h n_m d
//! theta, dt       f64 × 2
//! n_classes       u32
//! neuron params   6 × (alpha f32, beta f32, theta f32)
//!                 populations in order enc_expand enc_fuse enc_harm u m h
//! tensors         12 × (name_len u16, name, rank u8, dims u32 × rank, f32 data)
//!                 in checkpoint order (see ParamId::ALL), row-major
//! mask (optional) packed bits per trainable tensor, LSB-first,
//!                 each padded to a whole byte
//! ```
//!
//! Loading validates magic, version, variant, dimensional consistency
//! (n_x = n_harm, n_m = n_u·d), tensor names and shapes, and that the
//! stored frozen matrices equal the ones rebuilt from (d, θ, dt) bitwise.
//! Saves go through a temp file and an atomic rename.

use std::fs;
use std::path::Path;

use crate::compress::PruneMask;
use crate::encoder::EncoderParams;
use crate::engine::ParamId;
use crate::error::{Error, Result};
use crate::l2mu::{CellParams, Dims, Model, PopParams, PopulationSet, Variant};
use crate::lmu_math::StateSpace;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"L2MU";
const VERSION: u16 = 1;

pub fn save_checkpoint(model: &Model<f32>, mask: Option<&PruneMask>, path: &Path) -> Result<()> {
    if let Some(mask) = mask {
        mask.validate_for(model)?;
    }
    let bytes = checkpoint_to_bytes(model, mask);
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, Option<PruneMask>)> {
    let bytes = fs::read(path)?;
    checkpoint_from_bytes(&bytes)
}

pub fn checkpoint_to_bytes(model: &Model<f32>, mask: Option<&PruneMask>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.variant.tag());

    let dims = &model.dims;
    for v in [
        dims.n_channels,
        dims.n_expand,
        dims.n_fuse,
        dims.n_harm,
        dims.n_x(),
        dims.n_u,
        dims.n_h,
        dims.n_m(),
        dims.d,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&dims.theta.to_le_bytes());
    out.extend_from_slice(&dims.dt.to_le_bytes());
    out.extend_from_slice(&(dims.n_classes as u32).to_le_bytes());

    let pops = model.population_set();
    for p in pops.iter() {
        out.extend_from_slice(&p.alpha.to_le_bytes());
        out.extend_from_slice(&p.beta.to_le_bytes());
        out.extend_from_slice(&p.theta_v.to_le_bytes());
    }

    for &id in &ParamId::ALL {
        let tensor = model.param(id);
        let name = id.name().as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(tensor.rank() as u8);
        for &d in tensor.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    if let Some(mask) = mask {
        for &id in &ParamId::TRAINABLE {
            let bits = mask.get(id).expect("validated mask");
            let mut byte = 0u8;
            for (i, &keep) in bits.iter().enumerate() {
                if keep {
                    byte |= 1 << (i % 8);
                }
                if i % 8 == 7 {
                    out.push(byte);
                    byte = 0;
                }
            }
            if bits.len() % 8 != 0 {
                out.push(byte);
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!("checkpoint truncated while reading {what}")));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(Model<f32>, Option<PruneMask>)> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!("bad checkpoint magic {magic:?}, expected L2MU")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let variant_tag = r.u8("variant tag")?;
    let variant = Variant::from_tag(variant_tag)
        .ok_or_else(|| Error::format(format!("unknown variant tag {variant_tag}")))?;

    let n_channels = r.u32("n_channels")? as usize;
    let n_expand = r.u32("n_expand")? as usize;
    let n_fuse = r.u32("n_fuse")? as usize;
    let n_harm = r.u32("n_harm")? as usize;
    let n_x = r.u32("n_x")? as usize;
    let n_u = r.u32("n_u")? as usize;
    let n_h = r.u32("n_h")? as usize;
    let n_m = r.u32("n_m")? as usize;
    let d = r.u32("d")? as usize;
    let theta = r.f64("theta")?;
    let dt = r.f64("dt")?;
    let n_classes = r.u32("n_classes")? as usize;

    if n_x != n_harm {
        return Err(Error::format(format!("n_x {n_x} does not match n_harm {n_harm}")));
    }
    if n_m != n_u * d {
        return Err(Error::format(format!("n_m {n_m} does not equal n_u·d = {}", n_u * d)));
    }
    let dims = Dims { n_channels, n_expand, n_fuse, n_harm, n_u, n_h, d, theta, dt, n_classes };
    dims.validate().map_err(|e| Error::format(format!("checkpoint dims invalid: {e}")))?;

    let mut pop = |name: &str| -> Result<PopParams<f32>> {
        let alpha = r.f32(&format!("{name} alpha"))?;
        let beta = r.f32(&format!("{name} beta"))?;
        let theta_v = r.f32(&format!("{name} theta"))?;
        let p = PopParams { alpha, beta, theta_v };
        p.validate().map_err(|e| Error::format(format!("{name} params invalid: {e}")))?;
        Ok(p)
    };
    let pops = PopulationSet {
        enc_expand: pop("enc_expand population")?,
        enc_fuse: pop("enc_fuse population")?,
        enc_harm: pop("enc_harm population")?,
        u: pop("u population")?,
        m: pop("m population")?,
        h: pop("h population")?,
    };

    let expected_shape = |id: ParamId| -> Vec<usize> {
        match id {
            ParamId::EncExpand => vec![n_channels, n_expand],
            ParamId::EncFuse => vec![n_fuse, n_channels * n_expand],
            ParamId::EncHarm => vec![n_harm, n_fuse],
            ParamId::Ex => vec![n_u, n_x],
            ParamId::Eh => vec![n_u, n_h],
            ParamId::Em => vec![n_u, n_m],
            ParamId::Wx => vec![n_h, n_x],
            ParamId::Wh => vec![n_h, n_h],
            ParamId::Wm => vec![n_h, n_m],
            ParamId::WOut => vec![n_classes, n_h],
            ParamId::ABar => vec![d, d],
            ParamId::BBar => vec![d],
        }
    };

    let mut tensors: Vec<Tensor<f32>> = Vec::with_capacity(ParamId::ALL.len());
    for &id in &ParamId::ALL {
        let name_len = r.u16("tensor name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::format("tensor name is not UTF-8".to_string()))?;
        if name != id.name() {
            return Err(Error::format(format!(
                "tensor {} out of order: found '{name}', expected '{}'",
                id.index(),
                id.name()
            )));
        }
        let rank = r.u8("tensor rank")? as usize;
        let expected = expected_shape(id);
        if rank != expected.len() {
            return Err(Error::format(format!(
                "tensor {name}: rank {rank}, expected {}",
                expected.len()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("tensor dims")? as usize);
        }
        if shape != expected {
            return Err(Error::format(format!(
                "tensor {name}: shape {shape:?}, expected {expected:?}"
            )));
        }
        let len: usize = shape.iter().product();
        // Guard the allocation before trusting the length.
        if r.remaining() < len * 4 {
            return Err(Error::format(format!("checkpoint truncated while reading tensor {name} data")));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f32(&format!("tensor {name} data"))?);
        }
        tensors.push(if rank == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(shape[0], shape[1], data)
        });
    }

    // The frozen matrices must be exactly what (d, θ, dt) generates.
    let ss = StateSpace::new(d, theta, dt)?;
    let rebuilt_a: Vec<f32> = ss.a_bar.iter().map(|&v| v as f32).collect();
    let rebuilt_b: Vec<f32> = ss.b_bar.iter().map(|&v| v as f32).collect();
    if tensors[ParamId::ABar.index()].data() != rebuilt_a.as_slice() {
        return Err(Error::format(
            "tensor a_bar does not match the discretization of (d, theta, dt)".to_string(),
        ));
    }
    if tensors[ParamId::BBar.index()].data() != rebuilt_b.as_slice() {
        return Err(Error::format(
            "tensor b_bar does not match the discretization of (d, theta, dt)".to_string(),
        ));
    }

    // Optional mask section: exactly zero bytes or the packed-bit size.
    let mask_bytes: usize = ParamId::TRAINABLE
        .iter()
        .map(|&id| {
            let len: usize = expected_shape(id).iter().product();
            len.div_ceil(8)
        })
        .sum();
    let mask = match r.remaining() {
        0 => None,
        n if n == mask_bytes => {
            let mut masks = vec![None; ParamId::ALL.len()];
            let mut kept = 0usize;
            let mut total = 0usize;
            for &id in &ParamId::TRAINABLE {
                let len: usize = expected_shape(id).iter().product();
                let packed = r.take(len.div_ceil(8), "mask bits")?;
                let mut bits = Vec::with_capacity(len);
                for i in 0..len {
                    let keep = packed[i / 8] & (1 << (i % 8)) != 0;
                    kept += keep as usize;
                    bits.push(keep);
                }
                total += len;
                masks[id.index()] = Some(bits);
            }
            let sparsity = 1.0 - kept as f64 / total as f64;
            Some(PruneMask::from_parts(sparsity, masks))
        }
        n => {
            return Err(Error::format(format!(
                "checkpoint has {n} trailing bytes; a mask section would be {mask_bytes}"
            )))
        }
    };

    let take = |id: ParamId, tensors: &mut Vec<Tensor<f32>>| -> Tensor<f32> {
        std::mem::replace(&mut tensors[id.index()], Tensor::vector(Vec::new()))
    };
    let encoder = EncoderParams {
        variant,
        w_expand: take(ParamId::EncExpand, &mut tensors),
        w_fuse: take(ParamId::EncFuse, &mut tensors),
        w_harm: take(ParamId::EncHarm, &mut tensors),
        expand_pop: pops.enc_expand,
        fuse_pop: pops.enc_fuse,
        harm_pop: pops.enc_harm,
    };
    let cell = CellParams {
        variant,
        n_x,
        n_u,
        n_h,
        d,
        e_x: take(ParamId::Ex, &mut tensors),
        e_h: take(ParamId::Eh, &mut tensors),
        e_m: take(ParamId::Em, &mut tensors),
        w_x: take(ParamId::Wx, &mut tensors),
        w_h: take(ParamId::Wh, &mut tensors),
        w_m: take(ParamId::Wm, &mut tensors),
        a_bar: take(ParamId::ABar, &mut tensors),
        b_bar: take(ParamId::BBar, &mut tensors),
        u_pop: pops.u,
        m_pop: pops.m,
        h_pop: pops.h,
    };
    let model = Model {
        variant,
        dims,
        encoder,
        cell,
        w_out: take(ParamId::WOut, &mut tensors),
        surrogate_slope: crate::l2mu::DEFAULT_SURROGATE_SLOPE as f32,
    };
    if let Some(mask) = &mask {
        mask.validate_for(&model)
            .map_err(|e| Error::format(format!("checkpoint mask inconsistent: {e}")))?;
    }
    Ok((model, mask))
}
