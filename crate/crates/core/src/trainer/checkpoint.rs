//! Lossless checkpoints as a GCMR bundle of named `f64` tensors.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::diffnet::ParamSet;
use crate::error::{Error, Result};
use crate::gcmr::{decode_bundle, encode_bundle, Tensor};
use crate::losses::FeatureBank;
use crate::numerics::{Rng, RngState};
use crate::trainer::cov::{CovHistory, LossWeights};
use crate::trainer::TrainState;
use crate::unroll::{Discriminator, Generator, GeneratorConfig};

fn vec_tensor(v: Vec<f64>) -> Tensor {
    let n = v.len();
    Tensor::F64(ArrayD::from_shape_vec(IxDyn(&[n]), v).expect("1-d"))
}

/// Splits into 32-bit pieces so every piece is exact in an `f64`.
fn u128_pieces(v: u128) -> [f64; 4] {
    std::array::from_fn(|i| ((v >> (32 * i)) & 0xffff_ffff) as f64)
}

fn from_pieces(p: &[f64]) -> u128 {
    p.iter().enumerate().fold(0u128, |acc, (i, &v)| acc | ((v as u128) << (32 * i)))
}

fn push_params(out: &mut Vec<(String, Tensor)>, prefix: &str, ps: &ParamSet) {
    out.push((format!("{prefix}.step"), vec_tensor(vec![ps.step as f64])));
    for p in ps.iter() {
        out.push((format!("{prefix}.{}.value", p.name), Tensor::F64(p.value.clone())));
        out.push((format!("{prefix}.{}.m", p.name), Tensor::F64(p.m.clone())));
        out.push((format!("{prefix}.{}.v", p.name), Tensor::F64(p.v.clone())));
    }
}

/// Encodes the complete training state.
pub fn encode_state(state: &TrainState) -> Vec<u8> {
    let g = &state.generator.config;
    let mut out: Vec<(String, Tensor)> = vec![
        (
            "meta.generator".into(),
            vec_tensor(vec![
                g.unrolls as f64,
                g.base_channels as f64,
                g.prompt_channels as f64,
                g.adjacent as f64,
                g.acs_lines as f64,
                g.coils as f64,
                g.residual as u8 as f64,
                g.sme_refiner as u8 as f64,
            ]),
        ),
        ("meta.disc_channels".into(), vec_tensor(vec![state.discriminator.base_channels() as f64])),
        (
            "meta.counters".into(),
            vec_tensor(vec![
                state.iteration as f64,
                state.epoch as f64,
                state.cursor as f64,
                state.disc_updates as f64,
            ]),
        ),
    ];
    let rs = state.rng.state();
    let mut rng = vec![(rs.seed >> 32) as f64, (rs.seed & 0xffff_ffff) as f64];
    rng.extend(u128_pieces(rs.word_pos));
    out.push(("rng".into(), vec_tensor(rng)));
    out.push(("weights".into(), vec_tensor(state.weights.as_array().to_vec())));
    out.push(("cov.window".into(), vec_tensor(vec![state.cov.window as f64])));
    for (i, s) in state.cov.series.iter().enumerate() {
        out.push((format!("cov.{i}"), vec_tensor(s.iter().copied().collect())));
    }
    let b = &state.banks;
    out.push((
        "bank.shape".into(),
        vec_tensor(vec![b.steps() as f64, b.domains() as f64, b.capacity as f64]),
    ));
    for t in 0..b.steps() {
        for d in 0..b.domains() {
            let buf = b.get(t, d);
            let dim = buf.front().map_or(0, Vec::len);
            let flat: Vec<f64> = buf.iter().flatten().copied().collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&[buf.len(), dim]), flat).expect("rectangular bank");
            out.push((format!("bank.{t}.{d}"), Tensor::F64(arr)));
        }
    }
    push_params(&mut out, "gen", &state.generator.params);
    push_params(&mut out, "disc", &state.discriminator.params);
    encode_bundle(&out)
}

struct Entries(Vec<(String, Tensor)>);

impl Entries {
    fn get(&self, name: &str) -> Result<ArrayD<f64>> {
        let t = self
            .0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
        match t {
            Tensor::F64(a) => Ok(a.clone()),
            _ => Err(Error::Format(format!("checkpoint entry {name} is not f64"))),
        }
    }

    fn vec(&self, name: &str, len: Option<usize>) -> Result<Vec<f64>> {
        let v = self.get(name)?.iter().copied().collect::<Vec<_>>();
        if let Some(n) = len {
            if v.len() != n {
                return Err(Error::Format(format!("{name}: expected {n} values, found {}", v.len())));
            }
        }
        Ok(v)
    }
}

fn restore_params(e: &Entries, prefix: &str, ps: &mut ParamSet) -> Result<()> {
    ps.step = e.vec(&format!("{prefix}.step"), Some(1))?[0] as u64;
    for p in ps.iter_mut() {
        for (field, target) in [("value", &mut p.value), ("m", &mut p.m), ("v", &mut p.v)] {
            let name = format!("{prefix}.{}.{field}", p.name);
            let a = e.get(&name)?;
            if a.shape() != target.shape() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?} does not match {:?}",
                    a.shape(),
                    target.shape()
                )));
            }
            *target = a;
        }
        p.grad.fill(0.0);
    }
    Ok(())
}

pub fn decode_state(bytes: &[u8]) -> Result<TrainState> {
    let e = Entries(decode_bundle(bytes)?);
    let g = e.vec("meta.generator", Some(8))?;
    let config = GeneratorConfig {
        unrolls: g[0] as usize,
        base_channels: g[1] as usize,
        prompt_channels: g[2] as usize,
        adjacent: g[3] as usize,
        acs_lines: g[4] as usize,
        coils: g[5] as usize,
        residual: g[6] != 0.0,
        sme_refiner: g[7] != 0.0,
    };
    let mut generator = Generator::new(config, &mut Rng::new(0))?;
    restore_params(&e, "gen", &mut generator.params)?;
    let disc_channels = e.vec("meta.disc_channels", Some(1))?[0] as usize;
    let mut discriminator = Discriminator::new(&mut Rng::new(0), disc_channels);
    restore_params(&e, "disc", &mut discriminator.params)?;

    let c = e.vec("meta.counters", Some(4))?;
    let r = e.vec("rng", Some(6))?;
    let rng = Rng::from_state(RngState {
        seed: ((r[0] as u64) << 32) | r[1] as u64,
        word_pos: from_pieces(&r[2..]),
    });
    let w = e.vec("weights", Some(3))?;
    let mut cov = CovHistory::new(e.vec("cov.window", Some(1))?[0] as usize);
    for (i, s) in cov.series.iter_mut().enumerate() {
        s.extend(e.vec(&format!("cov.{i}"), None)?);
    }
    let shape = e.vec("bank.shape", Some(3))?;
    let (steps, domains) = (shape[0] as usize, shape[1] as usize);
    let mut banks = FeatureBank::new(steps, domains, shape[2] as usize);
    for t in 0..steps {
        for d in 0..domains {
            let a = e.get(&format!("bank.{t}.{d}"))?;
            if a.ndim() != 2 {
                return Err(Error::Format(format!("bank.{t}.{d} must be 2-d")));
            }
            for row in a.outer_iter() {
                banks.push(t, d, row.iter().copied().collect());
            }
        }
    }
    Ok(TrainState {
        generator,
        discriminator,
        weights: LossWeights::from_array([w[0], w[1], w[2]]),
        cov,
        banks,
        rng,
        iteration: c[0] as u64,
        epoch: c[1] as u64,
        cursor: c[2] as u64,
        disc_updates: c[3] as u64,
    })
}

pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    std::fs::write(path, encode_state(state))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    decode_state(&std::fs::read(path)?)
}
