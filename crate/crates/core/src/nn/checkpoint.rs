//! Model checkpoints.
//!
//! Two encodings of the same [`Checkpoint`] value:
//!
//! * JSON: `{"kind": {...}, "layers": [{"weight": {"rows", "cols", "data"}, "bias", "activation"}]}`.
//!   Floats are written in shortest round-trip form, so values reload exactly.
//! * Binary (little-endian):
//!
//!   ```text
//!   magic  b"SPCK"   u32 version (=1)
//!   u8 kind (0 teacher, 1 student, 2 dense)   u32 kind_arg (blocks | depth | 0)
//!   u32 n_layers
//!   per layer: u32 rows, u32 cols, u8 activation (0 tanh, 1 identity),
//!              rows·cols f64 weights (row-major), rows f64 bias
//!   ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Activation, DenseLayer, Matrix, NnError, Parameterized, ResidualBlock, StudentModel,
    TeacherModel,
};

const MAGIC: &[u8; 4] = b"SPCK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelKind {
    Teacher { blocks: usize },
    Student { depth: usize },
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub layers: Vec<DenseLayer>,
}

impl Checkpoint {
    pub fn from_teacher(t: &TeacherModel) -> Self {
        Self {
            kind: ModelKind::Teacher {
                blocks: t.depth(),
            },
            layers: t.layers().into_iter().cloned().collect(),
        }
    }

    pub fn from_student(s: &StudentModel) -> Self {
        Self {
            kind: ModelKind::Student { depth: s.depth() },
            layers: s.layers().into_iter().cloned().collect(),
        }
    }

    pub fn from_dense(l: &DenseLayer) -> Self {
        Self {
            kind: ModelKind::Dense,
            layers: vec![l.clone()],
        }
    }

    pub fn into_teacher(self) -> Result<TeacherModel, NnError> {
        let ModelKind::Teacher { blocks } = self.kind else {
            return Err(NnError::Checkpoint("not a teacher checkpoint".into()));
        };
        if self.layers.len() != 2 * blocks + 2 {
            return Err(NnError::Checkpoint("teacher layer count".into()));
        }
        let mut it = self.layers.into_iter();
        let input_proj = it.next().unwrap();
        let blocks = (0..blocks)
            .map(|_| ResidualBlock {
                expand: it.next().unwrap(),
                project: it.next().unwrap(),
            })
            .collect();
        let head = it.next().unwrap();
        let t = TeacherModel {
            input_proj,
            blocks,
            head,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn into_student(self) -> Result<StudentModel, NnError> {
        let ModelKind::Student { depth } = self.kind else {
            return Err(NnError::Checkpoint("not a student checkpoint".into()));
        };
        if self.layers.len() != depth + 1 {
            return Err(NnError::Checkpoint("student layer count".into()));
        }
        let mut it = self.layers.into_iter();
        let input_proj = it.next().unwrap();
        StudentModel::from_parts(input_proj, it.collect())
    }

    pub fn into_dense(self) -> Result<DenseLayer, NnError> {
        match (self.kind, self.layers.len()) {
            (ModelKind::Dense, 1) => Ok(self.layers.into_iter().next().unwrap()),
            _ => Err(NnError::Checkpoint("not a dense-layer checkpoint".into())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        c.validate_layers()?;
        Ok(c)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let (tag, arg) = match self.kind {
            ModelKind::Teacher { blocks } => (0u8, blocks as u32),
            ModelKind::Student { depth } => (1, depth as u32),
            ModelKind::Dense => (2, 0),
        };
        out.push(tag);
        out.extend_from_slice(&arg.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.weight.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(l.weight.cols() as u32).to_le_bytes());
            out.push(l.activation.tag());
            for v in l.weight.data().iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.u8()?;
        let arg = r.u32()? as usize;
        let kind = match tag {
            0 => ModelKind::Teacher { blocks: arg },
            1 => ModelKind::Student { depth: arg },
            2 => ModelKind::Dense,
            t => return Err(NnError::Checkpoint(format!("unknown model kind {t}"))),
        };
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let act = Activation::from_tag(r.u8()?)
                .ok_or_else(|| NnError::Checkpoint("unknown activation".into()))?;
            let weight = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)?;
            let bias = r.f64s(rows)?;
            layers.push(DenseLayer::new(weight, bias, act)?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { kind, layers })
    }

    fn validate_layers(&self) -> Result<(), NnError> {
        for l in &self.layers {
            DenseLayer::new(l.weight.clone(), l.bias.clone(), l.activation)?;
            if l.weight.data().len() != l.weight.rows() * l.weight.cols() {
                return Err(NnError::Checkpoint("weight length".into()));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_json()).map_err(|e| NnError::Io(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self, NnError> {
        let text = fs::read_to_string(path).map_err(|e| NnError::Io(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn save_binary(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.to_bytes()).map_err(|e| NnError::Io(e.to_string()))
    }

    pub fn load_binary(path: &Path) -> Result<Self, NnError> {
        let bytes = fs::read(path).map_err(|e| NnError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NnError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("size".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
