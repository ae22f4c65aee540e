//! Named parameter storage, initialisers and the binary checkpoint format.
//!
//! Checkpoint layout (little endian):
//!
//! ```text
//! b"MISSCKPT" | u32 version | u64 count
//! per parameter: u64 name_len | name (utf-8) | u8 frozen_row0
//!                | u64 ndim | ndim × u64 dims | numel × f64
//! ```

use std::path::Path;

use miss_autodiff::{Gradients, Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MissError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Row 0 is the padding embedding and must stay zero.
    pub frozen_row0: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

const MAGIC: &[u8; 8] = b"MISSCKPT";
const VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, frozen_row0: bool) -> ParamId {
        let mut p = Param {
            name: name.into(),
            value,
            frozen_row0,
        };
        if frozen_row0 {
            zero_row0(&mut p.value);
        }
        self.params.push(p);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total scalar count of parameters whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Registers every parameter on `g`; as trainable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Gradient per parameter, zeros where the graph produced none.
    /// Padding rows of frozen tables are zeroed.
    pub fn collect_grads(&self, grads: &Gradients, vars: &[Var]) -> Vec<Tensor> {
        self.params
            .iter()
            .zip(vars)
            .map(|(p, &v)| {
                let mut t = grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                if p.frozen_row0 {
                    zero_row0(&mut t);
                }
                t
            })
            .collect()
    }

    pub fn rezero_padding(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.frozen_row0) {
            zero_row0(&mut p.value);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(u8::from(p.frozen_row0));
            out.extend_from_slice(&(p.value.ndim() as u64).to_le_bytes());
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.bad("not a parameter checkpoint"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(r.bad(&format!("unsupported checkpoint version {version}")));
        }
        let count = r.u64()?;
        let mut store = Self::new();
        for _ in 0..count {
            let len = r.u64()?;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.bad("parameter name is not utf-8"))?;
            let frozen = r.take(1)?[0] != 0;
            let ndim = r.u64()?;
            let shape = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let data = (0..numel)
                .map(|_| Ok(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"))))
                .collect::<Result<Vec<_>>>()?;
            store.params.push(Param {
                name,
                value: Tensor::new(shape, data)?,
                frozen_row0: frozen,
            });
        }
        if r.at != bytes.len() {
            return Err(r.bad("trailing bytes after last parameter"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| MissError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| MissError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    /// Copies values from `other` for every parameter present in both with
    /// the same shape. Returns the number of parameters copied.
    pub fn load_matching(&mut self, other: &ParamStore) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(src) = other.params.iter().find(|q| q.name == p.name && q.value.shape() == p.value.shape()) {
                p.value = src.value.clone();
                copied += 1;
            }
        }
        copied
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| self.bad("truncated checkpoint"))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.bad("length overflows usize"))
    }

    fn bad(&self, msg: &str) -> MissError {
        MissError::Format {
            line: self.at,
            message: msg.to_string(),
        }
    }
}

fn zero_row0(t: &mut Tensor) {
    if t.ndim() == 2 && t.shape()[0] > 0 {
        let d = t.shape()[1];
        t.data_mut()[..d].fill(0.0);
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Glorot-uniform `fan_in × fan_out` weight matrix.
pub fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, &[fan_in, fan_out], bound)
}
