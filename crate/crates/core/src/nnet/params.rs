use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Shape record of one tensor, as written to the weights manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeRecord {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Named flat tensors. Shapes are fixed once added.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let name = name.into();
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape/value mismatch for {name}"
        );
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry {
            name,
            shape,
            values,
        });
        ParamId(id)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    /// Uniform(−√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out))) for an
    /// `rows × cols` matrix.
    pub fn add_xavier<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect();
        self.add(name, vec![rows, cols], values)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    /// Two distinct tensors mutably at once.
    pub fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a.0, b.0, "pair_mut needs distinct tensors");
        if a.0 < b.0 {
            let (lo, hi) = self.entries.split_at_mut(b.0);
            (&mut lo[a.0].values, &mut hi[0].values)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a.0);
            (&mut hi[0].values, &mut lo[b.0].values)
        }
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&[f64]> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.id(name).map(move |id| self.get_mut(id))
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    /// Same layout, all values zero.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    values: vec![0.0; e.values.len()],
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn fill_zero(&mut self) {
        for e in &mut self.entries {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += scale · other`; layouts must match.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        debug_assert_eq!(self.entries.len(), other.entries.len());
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for e in &mut self.entries {
            e.values.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.values.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.values.iter().all(|v| v.is_finite()))
    }

    /// Entry indices whose name equals `prefix` or starts with `prefix.`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.name == prefix
                    || (e.name.starts_with(prefix) && e.name[prefix.len()..].starts_with('.'))
            })
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    pub fn manifest(&self) -> Vec<ShapeRecord> {
        self.entries
            .iter()
            .map(|e| ShapeRecord {
                name: e.name.clone(),
                shape: e.shape.clone(),
            })
            .collect()
    }

    /// Flat little-endian f64 array in entry order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scalar_count() * 8);
        for v in self.entries.iter().flat_map(|e| e.values.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Overwrites values from a flat array produced by [`Self::to_le_bytes`]
    /// after checking the manifest against this layout.
    pub fn load_le_bytes(&mut self, manifest: &[ShapeRecord], bytes: &[u8]) -> Result<()> {
        if manifest != self.manifest().as_slice() {
            let first = manifest
                .iter()
                .zip(self.manifest())
                .find(|(a, b)| *a != b)
                .map(|(a, b)| format!("{} {:?} vs expected {} {:?}", a.name, a.shape, b.name, b.shape))
                .unwrap_or_else(|| {
                    format!("{} tensors vs expected {}", manifest.len(), self.entries.len())
                });
            return Err(Error::Integrity(format!("weights manifest mismatch: {first}")));
        }
        if bytes.len() != self.scalar_count() * 8 {
            return Err(Error::Integrity(format!(
                "weights hold {} bytes, expected {}",
                bytes.len(),
                self.scalar_count() * 8
            )));
        }
        let mut chunks = bytes.chunks_exact(8);
        for e in &mut self.entries {
            for v in &mut e.values {
                let b: [u8; 8] = chunks.next().expect("length checked").try_into().expect("8 bytes");
                *v = f64::from_le_bytes(b);
            }
        }
        Ok(())
    }
}
