//! Binary container for trained models (`model.bin`).
//!
//! All integers are little-endian `u64` unless noted, all reals little-endian
//! IEEE-754 `f64`.
//!
//! ```text
//! magic        8 bytes  "DKGPMODL"
//! version      u32      = 1
//! env          gravity, dt, substeps (u64), reward_x, reward_xdot,
//!              reward_sigma, discount
//! n_forces     u64
//! target       u8       0 = full, 1 = continuation
//! rmse         2 x f64  held-out (x', xdot') RMSE of the dynamics
//! gp_x         GP record
//! gp_xdot      GP record
//! value        kernel record, noise_var, n (u64), n x (x, xdot, F), n values
//! checksum     32 bytes SHA-256 of everything above
//!
//! kernel record  tag u8 (0 rbf, 1 ck, 2 ntk), then
//!                rbf: lengthscale
//!                ck/ntk: sigma_w, sigma_b, depth (u64), input_dim (u64)
//! GP record      kernel record, noise_var, n (u64), dim (u64),
//!                n*dim inputs (row-major), n targets
//! ```
//!
//! Loading refactorises each GP from its stored data, which reproduces the
//! trained models exactly.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use dkgp::mountaincar::{EnvConfig, FullState};
use dkgp::policy_iteration::{DynamicsModel, ValueModel, ValueTarget};
use dkgp::{DualParams, GpModel, KernelSpec, PointSet};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"DKGPMODL";
pub const VERSION: u32 = 1;
pub const FILE_NAME: &str = "model.bin";

/// Everything `rollout` needs from a training run.
#[derive(Clone, Debug)]
pub struct TrainedModels {
    pub dynamics: DynamicsModel,
    pub value: ValueModel,
    pub n_forces: usize,
}

fn put_spec(buf: &mut Vec<u8>, spec: &KernelSpec) {
    let dual = |buf: &mut Vec<u8>, tag: u8, p: &DualParams| {
        buf.push(tag);
        buf.write_f64::<LE>(p.sigma_w).unwrap();
        buf.write_f64::<LE>(p.sigma_b).unwrap();
        buf.write_u64::<LE>(p.depth as u64).unwrap();
        buf.write_u64::<LE>(p.input_dim as u64).unwrap();
    };
    match spec {
        KernelSpec::Rbf { lengthscale } => {
            buf.push(0);
            buf.write_f64::<LE>(*lengthscale).unwrap();
        }
        KernelSpec::Ck(p) => dual(buf, 1, p),
        KernelSpec::Ntk(p) => dual(buf, 2, p),
    }
}

fn put_reals(buf: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        buf.write_f64::<LE>(*x).unwrap();
    }
}

fn put_gp(buf: &mut Vec<u8>, gp: &GpModel) {
    put_spec(buf, gp.spec());
    buf.write_f64::<LE>(gp.noise_var()).unwrap();
    buf.write_u64::<LE>(gp.inputs().len() as u64).unwrap();
    buf.write_u64::<LE>(gp.inputs().dim() as u64).unwrap();
    put_reals(buf, gp.inputs().as_flat());
    put_reals(buf, gp.targets());
}

pub fn encode(m: &TrainedModels) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LE>(VERSION).unwrap();
    let env = m.value.env();
    put_reals(&mut buf, &[env.gravity, env.dt]);
    buf.write_u64::<LE>(env.substeps as u64).unwrap();
    put_reals(
        &mut buf,
        &[
            env.reward_center.0,
            env.reward_center.1,
            env.reward_sigma,
            env.discount,
        ],
    );
    buf.write_u64::<LE>(m.n_forces as u64).unwrap();
    buf.push(match m.value.target() {
        ValueTarget::Full => 0,
        ValueTarget::Continuation => 1,
    });
    put_reals(
        &mut buf,
        &[m.dynamics.heldout_rmse.0, m.dynamics.heldout_rmse.1],
    );
    put_gp(&mut buf, &m.dynamics.gp_x);
    put_gp(&mut buf, &m.dynamics.gp_xdot);
    put_spec(&mut buf, m.value.gp.spec());
    buf.write_f64::<LE>(m.value.gp.noise_var()).unwrap();
    buf.write_u64::<LE>(m.value.support().len() as u64).unwrap();
    for s in m.value.support() {
        put_reals(&mut buf, &s.to_array());
    }
    put_reals(&mut buf, m.value.values());
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

type ReadResult<T> = Result<T, String>;

impl Reader<'_> {
    fn f64(&mut self) -> ReadResult<f64> {
        self.cur
            .read_f64::<LE>()
            .map_err(|_| "truncated".to_string())
    }

    fn u64(&mut self) -> ReadResult<u64> {
        self.cur
            .read_u64::<LE>()
            .map_err(|_| "truncated".to_string())
    }

    fn u8(&mut self) -> ReadResult<u8> {
        self.cur.read_u8().map_err(|_| "truncated".to_string())
    }

    /// A length field, bounded by what is left in the buffer.
    fn count(&mut self, elem_bytes: u64) -> ReadResult<usize> {
        let n = self.u64()?;
        let left = self.cur.get_ref().len() as u64 - self.cur.position();
        if n.checked_mul(elem_bytes).is_none_or(|b| b > left) {
            return Err(format!("length {n} exceeds file size"));
        }
        Ok(n as usize)
    }

    fn reals(&mut self, n: usize) -> ReadResult<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn spec(&mut self) -> ReadResult<KernelSpec> {
        let tag = self.u8()?;
        let spec = match tag {
            0 => KernelSpec::rbf(self.f64()?),
            1 | 2 => {
                let (w, b) = (self.f64()?, self.f64()?);
                let (depth, dim) = (self.u64()? as usize, self.u64()? as usize);
                if tag == 1 {
                    KernelSpec::ck(w, b, depth, dim)
                } else {
                    KernelSpec::ntk(w, b, depth, dim)
                }
            }
            t => return Err(format!("unknown kernel tag {t}")),
        };
        spec.map_err(|e| e.to_string())
    }

    fn gp(&mut self) -> ReadResult<GpModel> {
        let spec = self.spec()?;
        let noise = self.f64()?;
        let n = self.count(8)?;
        let dim = self.u64()? as usize;
        if dim == 0 || n.checked_mul(dim).is_none() {
            return Err("bad GP shape".into());
        }
        let x = PointSet::new(dim, self.reals(n * dim)?).map_err(|e| e.to_string())?;
        let y = self.reals(n)?;
        GpModel::fit(x, y, spec, noise).map_err(|e| e.to_string())
    }
}

pub fn decode(bytes: &[u8]) -> Result<TrainedModels, String> {
    if bytes.len() < MAGIC.len() + 4 + 32 {
        return Err("file too short".into());
    }
    if &bytes[..8] != MAGIC {
        return Err("not a model container (bad magic)".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader {
        cur: Cursor::new(&body[8..]),
    };
    let version = r.cur.read_u32::<LE>().map_err(|_| "truncated")?;
    if version != VERSION {
        return Err(format!("unsupported container version {version}"));
    }
    let (gravity, dt) = (r.f64()?, r.f64()?);
    let substeps = r.u64()? as usize;
    let (rx, rv, sigma, discount) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let env = EnvConfig {
        gravity,
        dt,
        substeps,
        reward_center: (rx, rv),
        reward_sigma: sigma,
        discount,
    };
    env.validate().map_err(|e| e.to_string())?;
    let n_forces = r.u64()? as usize;
    let target = match r.u8()? {
        0 => ValueTarget::Full,
        1 => ValueTarget::Continuation,
        t => return Err(format!("unknown value target {t}")),
    };
    let rmse = (r.f64()?, r.f64()?);
    let gp_x = r.gp()?;
    let gp_xdot = r.gp()?;
    let mut dynamics = DynamicsModel::from_models(gp_x, gp_xdot).map_err(|e| e.to_string())?;
    dynamics.heldout_rmse = rmse;

    let spec = r.spec()?;
    let noise = r.f64()?;
    let n = r.count(32)?;
    let support: Vec<FullState> = (0..n)
        .map(|_| {
            Ok(FullState {
                x: r.f64()?,
                xdot: r.f64()?,
                force: r.f64()?,
            })
        })
        .collect::<ReadResult<_>>()?;
    let values = r.reals(n)?;
    let mut rest = Vec::new();
    r.cur.read_to_end(&mut rest).unwrap();
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes", rest.len()));
    }
    let value =
        ValueModel::fit(support, values, spec, noise, target, env).map_err(|e| e.to_string())?;
    Ok(TrainedModels {
        dynamics,
        value,
        n_forces,
    })
}

pub fn load(dir: &Path) -> Result<TrainedModels, CliError> {
    let path = dir.join(FILE_NAME);
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    decode(&bytes).map_err(|m| CliError::corrupt(&path, m))
}
