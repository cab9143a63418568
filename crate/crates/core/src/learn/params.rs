//! Named parameter tensors, their gradient buffers, and the binary checkpoint
//! format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic "PNCK" | u32 version | u64 header_len | header (UTF-8 JSON)
//! u32 tensor_count
//! repeated: u32 name_len | name | u32 rows | u32 cols | rows*cols f64
//! ```
//!
//! Values are stored as raw IEEE-754 bits, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PNCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        id
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Ids whose name starts with any of `prefixes`.
    pub fn ids_with_prefix<'a>(&'a self, prefixes: &'a [&'a str]) -> Vec<ParamId> {
        self.ids()
            .filter(|id| prefixes.iter().any(|p| self.name(*id).starts_with(p)))
            .collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn write_checkpoint<W: Write>(&self, header: &str, mut out: W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(header.as_bytes())?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, tensor) in self.names.iter().zip(&self.tensors) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(tensor.rows() as u32).to_le_bytes())?;
            out.write_all(&(tensor.cols() as u32).to_le_bytes())?;
            for v in tensor.data() {
                out.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Returns the store and the header string.
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(Self, String)> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let header_len = read_u64(&mut input)? as usize;
        let mut header = vec![0u8; header_len];
        input.read_exact(&mut header)?;
        let header =
            String::from_utf8(header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let count = read_u32(&mut input)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name =
                String::from_utf8(name).map_err(|e| Error::Checkpoint(format!("name: {e}")))?;
            let rows = read_u32(&mut input)? as usize;
            let cols = read_u32(&mut input)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_bits(read_u64(&mut input)?));
            }
            if store.index.contains_key(&name) {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            store.add(name, Tensor::from_vec(rows, cols, data));
        }
        Ok((store, header))
    }

    /// Copies values for every name present in both stores, checking shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, id) in &self.index {
            let src = other.get(other.id(name)?);
            let dst = &mut self.tensors[id.0];
            if src.shape() != dst.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Gradient buffers mirroring a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, shape: (usize, usize), f: impl FnOnce(&mut Tensor)) {
        let slot = &mut self.grads[id.0];
        let g = slot.get_or_insert_with(|| Tensor::zeros(shape.0, shape.1));
        f(g);
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(b) = b {
                match a {
                    Some(a) => a.add_assign(b),
                    None => *a = Some(b.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::from_vec(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]));
        store.add("b.w", Tensor::vector(vec![std::f64::consts::PI]));
        let mut buf = Vec::new();
        store.write_checkpoint("{\"x\":1}", &mut buf).unwrap();
        let (back, header) = ParamStore::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(header, "{\"x\":1}");
        assert_eq!(back.len(), 2);
        for id in store.ids() {
            let a = store.get(id).data();
            let b = back.get(back.id(store.name(id)).unwrap()).data();
            let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let err = ParamStore::read_checkpoint(&b"NOPE\x01\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn clip_global_norm_rescales() {
        let mut g = Gradients::new(1);
        g.accumulate(ParamId(0), (2, 1), |t| t.data_mut().copy_from_slice(&[3.0, 4.0]));
        let before = g.clip_global_norm(1.0);
        assert_eq!(before, 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
    }
}
