//! Flat binary model files.
//!
//! Layout: magic `CDIM`, version `u32`, kind `u8`, dimension `u32`, then a
//! little-endian `f64` payload.
//!
//! * GMM payload: `K, weights[K], means[K*n], variances[K*n]`
//! * MLP payload: `H1, H2, emb_dim, params[..]`

use std::io::{Read, Write};
use std::path::Path;

use super::{GmmPrior, MlpDenoiser, ScoreModel, Timestep};
use crate::error::{CdimError, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CDIM";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Gmm = 0,
    Mlp = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Gmm(GmmPrior),
    Mlp(MlpDenoiser),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Gmm(_) => ModelKind::Gmm,
            AnyModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    fn inner(&self) -> &dyn ScoreModel {
        match self {
            AnyModel::Gmm(g) => g,
            AnyModel::Mlp(m) => m,
        }
    }
}

impl From<GmmPrior> for AnyModel {
    fn from(g: GmmPrior) -> Self {
        AnyModel::Gmm(g)
    }
}

impl From<MlpDenoiser> for AnyModel {
    fn from(m: MlpDenoiser) -> Self {
        AnyModel::Mlp(m)
    }
}

impl ScoreModel for AnyModel {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn predict_eps(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        self.inner().predict_eps(x_t, at)
    }
    fn predict_xhat0(&self, x_t: &[f64], at: Timestep) -> Result<Vec<f64>> {
        self.inner().predict_xhat0(x_t, at)
    }
    fn xhat0_vjp(&self, x_t: &[f64], at: Timestep, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.inner().xhat0_vjp(x_t, at, cotangent)
    }
    fn xhat0_pullback(
        &self,
        x_t: &[f64],
        at: Timestep,
        cotangent_fn: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.inner().xhat0_pullback(x_t, at, cotangent_fn)
    }
}

pub fn write_model<W: Write>(mut w: W, model: &AnyModel) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[model.kind() as u8])?;
    w.write_all(&(model.dim() as u32).to_le_bytes())?;
    let mut payload: Vec<f64> = Vec::new();
    match model {
        AnyModel::Gmm(g) => {
            payload.push(g.n_components() as f64);
            payload.extend_from_slice(g.weights());
            g.means().iter().for_each(|m| payload.extend_from_slice(m));
            g.variances().iter().for_each(|v| payload.extend_from_slice(v));
        }
        AnyModel::Mlp(m) => {
            let [h1, h2] = m.hidden();
            payload.extend([h1 as f64, h2 as f64, m.emb_dim() as f64]);
            payload.extend_from_slice(m.params());
        }
    }
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<AnyModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(CdimError::Format("not a CDIM model file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(CdimError::Format(format!("unsupported model version {version}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() % 8 != 0 {
        return Err(CdimError::Format("payload is not a whole number of f64 values".into()));
    }
    let payload: Vec<f64> = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let as_count = |v: f64, what: &str| -> Result<usize> {
        if v.fract() != 0.0 || !(v >= 1.0) {
            return Err(CdimError::Format(format!("bad {what} field {v}")));
        }
        Ok(v as usize)
    };
    match kind[0] {
        0 => {
            let k = as_count(*payload.first().ok_or_else(|| CdimError::Format("empty payload".into()))?, "K")?;
            if payload.len() != 1 + k + 2 * k * n {
                return Err(CdimError::Format(format!(
                    "GMM payload has {} values, expected {}",
                    payload.len(),
                    1 + k + 2 * k * n
                )));
            }
            let weights = payload[1..1 + k].to_vec();
            let means = payload[1 + k..1 + k + k * n].chunks(n).map(|c| c.to_vec()).collect();
            let vars = payload[1 + k + k * n..].chunks(n).map(|c| c.to_vec()).collect();
            Ok(AnyModel::Gmm(GmmPrior::new(weights, means, vars)?))
        }
        1 => {
            if payload.len() < 3 {
                return Err(CdimError::Format("MLP payload too short".into()));
            }
            let h1 = as_count(payload[0], "H1")?;
            let h2 = as_count(payload[1], "H2")?;
            let e = as_count(payload[2], "emb_dim")?;
            Ok(AnyModel::Mlp(MlpDenoiser::from_parts(n, [h1, h2], e, payload[3..].to_vec())?))
        }
        other => Err(CdimError::Format(format!("unknown model kind {other}"))),
    }
}

pub fn save_model(path: impl AsRef<Path>, model: &AnyModel) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let f = std::fs::File::open(path)?;
    read_model(std::io::BufReader::new(f))
}
