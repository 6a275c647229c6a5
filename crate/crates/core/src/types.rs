//! Domain types shared by every module: raw observations, action chunks,
//! dataset statistics, embodiment tags and loss records.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of the shared action vector used for cross-embodiment training.
pub const UNIFIED_ACTION_DIM: usize = 32;

/// Row-major 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    #[serde(with = "serde_bytes")]
    pub pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        let img = ImageBuffer {
            height,
            width,
            pixels,
        };
        let mut v = Vec::new();
        img.check("image", &mut v);
        match v.first() {
            None => Ok(img),
            Some(first) => Err(Error::Validation(first.to_string())),
        }
    }

    pub fn black(height: usize, width: usize) -> Self {
        ImageBuffer {
            height,
            width,
            pixels: vec![0; height * width * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Nearest-neighbour resampling.
    pub fn resize(&self, height: usize, width: usize) -> ImageBuffer {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            let sr = (r * self.height) / height;
            for c in 0..width {
                let sc = (c * self.width) / width;
                out.extend_from_slice(&self.pixel(sr, sc));
            }
        }
        ImageBuffer {
            height,
            width,
            pixels: out,
        }
    }

    fn check(&self, name: &str, out: &mut Vec<Violation>) {
        if self.height == 0 || self.width == 0 {
            out.push(Violation::new(
                format!("views.{name}"),
                format!("non-positive size {}x{}", self.height, self.width),
            ));
        } else if self.pixels.len() != self.height * self.width * 3 {
            out.push(Violation::new(
                format!("views.{name}"),
                format!(
                    "pixel count {} != {}x{}x3",
                    self.pixels.len(),
                    self.height,
                    self.width
                ),
            ));
        }
    }
}

/// One raw sample as delivered to the robot at deployment time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub views: BTreeMap<String, ImageBuffer>,
    pub instruction: String,
    pub state: Option<Vec<f64>>,
    pub time_index: u64,
    pub episode_meta: Option<BTreeMap<String, String>>,
}

impl Observation {
    pub fn single_view(name: &str, image: ImageBuffer, instruction: impl Into<String>) -> Self {
        let mut views = BTreeMap::new();
        views.insert(name.to_string(), image);
        Observation {
            views,
            instruction: instruction.into(),
            state: None,
            time_index: 0,
            episode_meta: None,
        }
    }

    pub fn with_state(mut self, state: Vec<f64>) -> Self {
        self.state = Some(state);
        self
    }

    pub fn resized(&self, height: usize, width: usize) -> Observation {
        let mut out = self.clone();
        for img in out.views.values_mut() {
            *img = img.resize(height, width);
        }
        out
    }
}

/// A k×D block of actions. Values are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    pub horizon: usize,
    pub dims: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
    pub dof_mask: Vec<bool>,
}

impl ActionChunk {
    pub fn zeros(horizon: usize, dims: usize, normalized: bool) -> Self {
        ActionChunk {
            horizon,
            dims,
            values: vec![0.0; horizon * dims],
            normalized,
            dof_mask: vec![true; dims],
        }
    }

    /// Builds an unnormalized chunk from rows; every dimension is live.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let horizon = rows.len();
        if horizon == 0 {
            return Err(Error::shape("chunk needs at least one row"));
        }
        let dims = rows[0].len();
        if dims == 0 || dims > UNIFIED_ACTION_DIM {
            return Err(Error::shape(format!("chunk width {dims} not in 1..=32")));
        }
        let mut values = Vec::with_capacity(horizon * dims);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dims {
                return Err(Error::shape(format!(
                    "row {i} has {} values, expected {dims}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Ok(ActionChunk {
            horizon,
            dims,
            values,
            normalized: false,
            dof_mask: vec![true; dims],
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.dims + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.dims + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.dims..(row + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dims)
    }

    pub fn live_dims(&self) -> usize {
        self.dof_mask.iter().filter(|m| **m).count()
    }

    fn check(&self, out: &mut Vec<Violation>) {
        if self.horizon == 0 {
            out.push(Violation::new("horizon", "must be positive"));
        }
        if self.dims == 0 || self.dims > UNIFIED_ACTION_DIM {
            out.push(Violation::new(
                "dims",
                format!("{} not in 1..={UNIFIED_ACTION_DIM}", self.dims),
            ));
        }
        if self.values.len() != self.horizon * self.dims {
            out.push(Violation::new(
                "values",
                format!(
                    "length {} != horizon {} x dims {}",
                    self.values.len(),
                    self.horizon,
                    self.dims
                ),
            ));
            return;
        }
        if self.dof_mask.len() != self.dims {
            out.push(Violation::new(
                "dof_mask",
                format!("length {} != dims {}", self.dof_mask.len(), self.dims),
            ));
            return;
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new("values", "non-finite entry"));
        }
        let mut out_of_range = false;
        let mut masked_nonzero = false;
        for row in self.rows() {
            for (v, live) in row.iter().zip(&self.dof_mask) {
                if *live {
                    if self.normalized && !(-1.0..=1.0).contains(v) {
                        out_of_range = true;
                    }
                } else if *v != 0.0 {
                    masked_nonzero = true;
                }
            }
        }
        if out_of_range {
            out.push(Violation::new("values", "out of [−1,1]"));
        }
        if masked_nonzero {
            out.push(Violation::new("values", "masked dimension is non-zero"));
        }
    }
}

/// Summary of one action dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimStats {
    pub q01: f64,
    pub q99: f64,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-dimension statistics persisted as `dataset_statistics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetStatistics {
    pub dims: usize,
    pub sample_count: u64,
    pub per_dim: Vec<DimStats>,
}

impl DatasetStatistics {
    pub fn check(&self) -> Result<()> {
        if self.dims == 0 || self.dims != self.per_dim.len() {
            return Err(Error::Integrity(format!(
                "statistics dims {} vs {} records",
                self.dims,
                self.per_dim.len()
            )));
        }
        for (i, d) in self.per_dim.iter().enumerate() {
            let ok = d.min <= d.q01 && d.q01 <= d.q99 && d.q99 <= d.max && d.std >= 0.0;
            if !ok {
                return Err(Error::Integrity(format!(
                    "statistics dim {i} violates min ≤ q01 ≤ q99 ≤ max, std ≥ 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Delta,
    Absolute,
}

/// Robot type metadata: native action width and control convention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbodimentTag {
    pub name: String,
    pub native_dof: usize,
    pub control_mode: ControlMode,
}

impl EmbodimentTag {
    pub fn new(name: impl Into<String>, native_dof: usize, control_mode: ControlMode) -> Result<Self> {
        if native_dof == 0 || native_dof > UNIFIED_ACTION_DIM {
            return Err(Error::shape(format!(
                "native_dof {native_dof} not in 1..={UNIFIED_ACTION_DIM}"
            )));
        }
        Ok(EmbodimentTag {
            name: name.into(),
            native_dof,
            control_mode,
        })
    }
}

/// Named loss values; always carries `action_loss`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub entries: BTreeMap<String, f64>,
}

impl LossReport {
    pub const ACTION: &'static str = "action_loss";
    pub const AUX: &'static str = "aux_loss";
    pub const TOTAL: &'static str = "total_loss";

    /// `total_loss = action_loss + scale·aux_loss`; the aux entry is only
    /// recorded when the scale is positive.
    pub fn new(action_loss: f64, aux_loss: Option<f64>, scale: f64) -> Self {
        let mut entries = BTreeMap::new();
        entries.insert(Self::ACTION.to_string(), action_loss);
        let mut total = action_loss;
        if scale > 0.0 {
            if let Some(aux) = aux_loss {
                entries.insert(Self::AUX.to_string(), aux);
                total = action_loss + scale * aux;
            }
        }
        entries.insert(Self::TOTAL.to_string(), total);
        LossReport { entries }
    }

    pub fn action_loss(&self) -> f64 {
        self.entries[Self::ACTION]
    }

    pub fn aux_loss(&self) -> Option<f64> {
        self.entries.get(Self::AUX).copied()
    }

    pub fn total_loss(&self) -> f64 {
        self.entries
            .get(Self::TOTAL)
            .copied()
            .unwrap_or_else(|| self.action_loss())
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|v| v.is_finite())
    }

    /// Entry-wise mean; every report must share the same keys.
    pub fn mean(reports: &[LossReport]) -> Result<LossReport> {
        let first = reports.first().ok_or(Error::EmptyDataset)?;
        let mut entries = BTreeMap::new();
        for key in first.entries.keys() {
            let mut acc = 0.0;
            for r in reports {
                acc += *r
                    .entries
                    .get(key)
                    .ok_or_else(|| Error::Integrity(format!("missing loss entry {key}")))?;
            }
            entries.insert(key.clone(), acc / reports.len() as f64);
        }
        Ok(LossReport { entries })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    LanguageLogits,
    FutureFeatures,
    None,
}

/// Optional backbone side output: language logits or predicted future features.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxPrediction {
    pub kind: AuxKind,
    pub shape: Vec<usize>,
    pub payload: Vec<f64>,
}

impl AuxPrediction {
    pub fn none() -> Self {
        AuxPrediction {
            kind: AuxKind::None,
            shape: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        match self.kind {
            AuxKind::None => self.payload.is_empty(),
            _ => self.shape.iter().product::<usize>() == self.payload.len(),
        }
    }
}

/// A single failed invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Checks every observation and chunk invariant. An empty list means the
/// example is valid.
pub fn validate_example(obs: &Observation, chunk: Option<&ActionChunk>) -> Vec<Violation> {
    let mut out = Vec::new();
    if obs.views.is_empty() {
        out.push(Violation::new("views", "empty"));
    }
    for (name, img) in &obs.views {
        img.check(name, &mut out);
    }
    if let Some(state) = &obs.state {
        if state.iter().any(|v| !v.is_finite()) {
            out.push(Violation::new("state", "non-finite entry"));
        }
    }
    if let Some(c) = chunk {
        c.check(&mut out);
    }
    out
}

/// `validate_example` as a `Result`, joining violations into one message.
pub fn ensure_valid(obs: &Observation, chunk: Option<&ActionChunk>) -> Result<()> {
    let v = validate_example(obs, chunk);
    if v.is_empty() {
        Ok(())
    } else {
        let msg = v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        Err(Error::Validation(msg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal() -> Observation {
        Observation::single_view("front", ImageBuffer::black(64, 64), "reach red")
    }

    #[test]
    fn minimal_sample_is_valid() {
        assert!(validate_example(&minimal(), None).is_empty());
    }

    #[test]
    fn zero_views_is_flagged() {
        let mut obs = minimal();
        obs.views.clear();
        let v = validate_example(&obs, None);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "views: empty");
    }

    #[test]
    fn normalized_value_out_of_range() {
        let mut c = ActionChunk::zeros(2, 3, true);
        c.set(1, 0, 1.2);
        let v = validate_example(&minimal(), Some(&c));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "values: out of [−1,1]");
    }

    #[test]
    fn masked_dims_must_be_zero() {
        let mut c = ActionChunk::zeros(1, 4, true);
        c.dof_mask[3] = false;
        c.set(0, 3, 0.5);
        let v = validate_example(&minimal(), Some(&c));
        assert!(v.iter().any(|v| v.message.contains("masked")));
    }

    #[test]
    fn image_constructor_rejects_bad_pixel_count() {
        assert!(ImageBuffer::new(2, 2, vec![0; 11]).is_err());
        assert!(ImageBuffer::new(0, 2, vec![]).is_err());
        assert!(ImageBuffer::new(2, 2, vec![0; 12]).is_ok());
    }

    #[test]
    fn loss_report_additivity() {
        let r = LossReport::new(0.3, Some(0.7), 0.5);
        assert!((r.total_loss() - (0.3 + 0.5 * 0.7)).abs() < 1e-12);
        let r0 = LossReport::new(0.3, Some(0.7), 0.0);
        assert_eq!(r0.total_loss(), r0.action_loss());
        assert!(r0.aux_loss().is_none());
    }

    #[test]
    fn resize_is_nearest_neighbour() {
        let mut img = ImageBuffer::black(2, 2);
        img.pixels[0] = 255;
        let big = img.resize(4, 4);
        assert_eq!(big.pixel(0, 0), [255, 0, 0]);
        assert_eq!(big.pixel(1, 1), [255, 0, 0]);
        assert_eq!(big.pixel(2, 2), [0, 0, 0]);
    }

    #[derive(Debug, Clone)]
    enum Mutation {
        DropViews,
        ZeroHeight,
        TruncatePixels(usize),
        NanState,
        ValueOutOfRange(f64),
        MaskedNonZero(f64),
        WrongMaskLen,
        None,
    }

    fn mutation() -> impl Strategy<Value = Mutation> {
        prop_oneof![
            Just(Mutation::DropViews),
            Just(Mutation::ZeroHeight),
            (1usize..20).prop_map(Mutation::TruncatePixels),
            Just(Mutation::NanState),
            (1.0001f64..5.0).prop_map(Mutation::ValueOutOfRange),
            (0.001f64..1.0).prop_map(Mutation::MaskedNonZero),
            Just(Mutation::WrongMaskLen),
            Just(Mutation::None),
        ]
    }

    proptest! {
        #[test]
        fn every_mutation_is_detected(m in mutation(), sign in prop::bool::ANY) {
            let mut obs = minimal().with_state(vec![0.0, 1.0]);
            let mut chunk = ActionChunk::zeros(4, 8, true);
            chunk.dof_mask[7] = false;
            let s = if sign { 1.0 } else { -1.0 };
            match &m {
                Mutation::DropViews => obs.views.clear(),
                Mutation::ZeroHeight => obs.views.get_mut("front").unwrap().height = 0,
                Mutation::TruncatePixels(n) => {
                    let p = &mut obs.views.get_mut("front").unwrap().pixels;
                    p.truncate(p.len() - n);
                }
                Mutation::NanState => obs.state = Some(vec![f64::NAN]),
                Mutation::ValueOutOfRange(v) => chunk.set(2, 1, s * v),
                Mutation::MaskedNonZero(v) => chunk.set(0, 7, s * v),
                Mutation::WrongMaskLen => chunk.dof_mask.push(true),
                Mutation::None => {}
            }
            let v = validate_example(&obs, Some(&chunk));
            prop_assert_eq!(v.is_empty(), matches!(m, Mutation::None));
        }
    }
}
