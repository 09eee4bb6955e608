//! On-disk dataset container: a JSON manifest plus a flat blob of
//! little-endian `f32` vectors addressed by explicit byte offsets.
//!
//! Layout written by [`write_dataset`]: records in manifest order; within a
//! record, `trace_last_token` vectors before `step_end` vectors, then by
//! position index, then by layer. Entries are contiguous with no padding.

mod canonical;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use canonical::canonicalize_answer;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "activations.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    TraceLastToken,
    StepEnd,
}

impl PositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionKind::TraceLastToken => "trace_last_token",
            PositionKind::StepEnd => "step_end",
        }
    }
}

/// One chain-of-thought trace and its grading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub record_id: String,
    pub problem_id: String,
    pub problem_text: String,
    pub trace_text: String,
    /// Character (not byte) spans of each numbered step.
    pub step_spans: Vec<(usize, usize)>,
    pub final_answer: String,
    pub reference_answer: String,
    /// 1 when the final answer is wrong.
    pub label: u8,
    #[serde(default)]
    pub verbalized_confidence: Option<u8>,
    #[serde(default)]
    pub sequence_logprob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_true: Option<f64>,
    pub sample_index: u32,
    pub temperature: f64,
}

impl TraceRecord {
    pub fn is_error(&self) -> bool {
        self.label == 1
    }

    pub fn num_steps(&self) -> usize {
        self.step_spans.len()
    }

    pub fn step_text(&self, i: usize) -> Option<String> {
        let (start, end) = *self.step_spans.get(i)?;
        Some(
            self.trace_text
                .chars()
                .skip(start)
                .take(end - start)
                .collect(),
        )
    }

    /// Label implied by comparing canonical answers.
    pub fn expected_label(&self) -> u8 {
        u8::from(
            canonicalize_answer(&self.final_answer) != canonicalize_answer(&self.reference_answer),
        )
    }

    fn validate(&self) -> Result<()> {
        let id = &self.record_id;
        if id.is_empty() {
            return Err(Error::record(id, "record_id", "empty"));
        }
        if self.label > 1 {
            return Err(Error::record(
                id,
                "label",
                format!("{} is not 0 or 1", self.label),
            ));
        }
        if self.label != self.expected_label() {
            return Err(Error::record(
                id,
                "label",
                format!(
                    "label {} disagrees with answers {:?} vs reference {:?}",
                    self.label, self.final_answer, self.reference_answer
                ),
            ));
        }
        if let Some(c) = self.verbalized_confidence {
            if !(1..=5).contains(&c) {
                return Err(Error::record(
                    id,
                    "verbalized_confidence",
                    format!("{c} not in 1..=5"),
                ));
            }
        }
        let text_len = self.trace_text.chars().count();
        let mut prev_end = 0;
        for (i, &(s, e)) in self.step_spans.iter().enumerate() {
            if s > e || e > text_len || (i > 0 && s < prev_end) {
                return Err(Error::record(
                    id,
                    "step_spans",
                    format!(
                        "span {i} ({s}, {e}) is out of order, overlapping or past the text end"
                    ),
                ));
            }
            prev_end = e;
        }
        for (field, v) in [
            ("sequence_logprob", self.sequence_logprob),
            ("p_true", self.p_true),
        ] {
            if v.is_some_and(|v| !v.is_finite()) {
                return Err(Error::record(id, field, "not finite"));
            }
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::record(
                id,
                "temperature",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Location of one vector in the blob.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub record_id: String,
    pub layer: usize,
    pub position_kind: PositionKind,
    pub position_index: usize,
    pub byte_offset: u64,
    pub length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Free-form notes from the producer (e.g. whether "last token" includes EOS).
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub extraction_notes: String,
    pub records: Vec<TraceRecord>,
    pub blob_index: Vec<BlobEntry>,
}

/// Header fields of a dataset, without records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub extraction_notes: String,
}

/// Slot of a vector within one record; ordering matches the blob layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VectorSlot {
    pub kind: PositionKind,
    pub index: usize,
    pub layer: usize,
}

impl VectorSlot {
    pub fn trace_last(layer: usize) -> Self {
        Self {
            kind: PositionKind::TraceLastToken,
            index: 0,
            layer,
        }
    }

    pub fn step_end(index: usize, layer: usize) -> Self {
        Self {
            kind: PositionKind::StepEnd,
            index,
            layer,
        }
    }
}

/// All vectors captured for one record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivationSet {
    pub record_id: String,
    pub vectors: BTreeMap<VectorSlot, Vec<f32>>,
}

impl ActivationSet {
    pub fn new(record_id: impl Into<String>) -> Self {
        Self {
            record_id: record_id.into(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, slot: VectorSlot, v: Vec<f32>) {
        self.vectors.insert(slot, v);
    }
}

/// A validated, immutable dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    manifest: DatasetManifest,
    data: Vec<f32>,
    lookup: HashMap<(usize, VectorSlot), usize>,
}

impl Dataset {
    /// Assembles a dataset, assigning blob offsets in canonical order.
    pub fn from_parts(
        header: DatasetHeader,
        parts: Vec<(TraceRecord, ActivationSet)>,
    ) -> Result<Self> {
        let dim = header.hidden_dim;
        let mut records = Vec::with_capacity(parts.len());
        let mut blob_index = Vec::new();
        let mut data = Vec::new();
        for (record, set) in parts {
            if set.record_id != record.record_id {
                return Err(Error::record(
                    &record.record_id,
                    "activations",
                    format!("activation set belongs to {:?}", set.record_id),
                ));
            }
            for (slot, v) in set.vectors {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
                blob_index.push(BlobEntry {
                    record_id: record.record_id.clone(),
                    layer: slot.layer,
                    position_kind: slot.kind,
                    position_index: slot.index,
                    byte_offset: (data.len() * 4) as u64,
                    length: (dim * 4) as u64,
                });
                data.extend_from_slice(&v);
            }
            records.push(record);
        }
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            model_name: header.model_name,
            num_layers: header.num_layers,
            hidden_dim: header.hidden_dim,
            extraction_notes: header.extraction_notes,
            records,
            blob_index,
        };
        Self::from_manifest_and_floats(manifest, data)
    }

    fn from_manifest_and_floats(manifest: DatasetManifest, data: Vec<f32>) -> Result<Self> {
        let lookup = validate(&manifest, data.len() as u64 * 4)?;
        for ((rec, slot), off) in &lookup {
            let v = &data[*off..*off + manifest.hidden_dim];
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::record(
                    &manifest.records[*rec].record_id,
                    "activations",
                    format!(
                        "non-finite value at layer {} {} {}",
                        slot.layer,
                        slot.kind.as_str(),
                        slot.index
                    ),
                ));
            }
        }
        Ok(Self {
            manifest,
            data,
            lookup,
        })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.manifest.records
    }

    pub fn len(&self) -> usize {
        self.manifest.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.records.is_empty()
    }

    pub fn num_layers(&self) -> usize {
        self.manifest.num_layers
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            model_name: self.manifest.model_name.clone(),
            num_layers: self.manifest.num_layers,
            hidden_dim: self.manifest.hidden_dim,
            extraction_notes: self.manifest.extraction_notes.clone(),
        }
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records().iter().map(TraceRecord::is_error).collect()
    }

    pub fn vector(&self, record: usize, slot: VectorSlot) -> Option<&[f32]> {
        let off = *self.lookup.get(&(record, slot))?;
        Some(&self.data[off..off + self.hidden_dim()])
    }

    /// Vector widened to `f64`, or a [`Error::MissingVector`] naming the record.
    pub fn vector_f64(&self, record: usize, slot: VectorSlot) -> Result<Vec<f64>> {
        self.vector(record, slot)
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .ok_or_else(|| Error::MissingVector {
                record_id: self.manifest.records[record].record_id.clone(),
                layer: slot.layer,
                position: format!("{} {}", slot.kind.as_str(), slot.index),
            })
    }

    pub fn activation_set(&self, record: usize) -> ActivationSet {
        let mut set = ActivationSet::new(self.manifest.records[record].record_id.clone());
        for ((r, slot), off) in &self.lookup {
            if *r == record {
                set.insert(*slot, self.data[*off..*off + self.hidden_dim()].to_vec());
            }
        }
        set
    }

    /// New dataset holding the given records (in the given order).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let parts = indices
            .iter()
            .map(|&i| (self.manifest.records[i].clone(), self.activation_set(i)))
            .collect();
        Dataset::from_parts(self.header(), parts)
    }

    pub fn manifest_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(&self.manifest)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn blob_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// SHA-256 over the manifest and blob bytes, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest_bytes().unwrap_or_default());
        h.update(self.blob_bytes());
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks manifest invariants against a blob of `blob_len` bytes and returns
/// the `(record index, slot) -> float offset` lookup.
fn validate(m: &DatasetManifest, blob_len: u64) -> Result<HashMap<(usize, VectorSlot), usize>> {
    if m.format_version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: m.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if m.num_layers == 0 || m.hidden_dim == 0 {
        return Err(Error::MalformedManifest(
            "num_layers and hidden_dim must be positive".into(),
        ));
    }
    let mut ids = HashMap::with_capacity(m.records.len());
    for (i, r) in m.records.iter().enumerate() {
        r.validate()?;
        if ids.insert(r.record_id.as_str(), i).is_some() {
            return Err(Error::record(&r.record_id, "record_id", "duplicate"));
        }
    }

    let expected_len = (m.hidden_dim * 4) as u64;
    let mut lookup = HashMap::with_capacity(m.blob_index.len());
    let mut spans = Vec::with_capacity(m.blob_index.len());
    for e in &m.blob_index {
        let rec = *ids.get(e.record_id.as_str()).ok_or_else(|| {
            Error::record(
                &e.record_id,
                "blob_index",
                "entry references an unknown record",
            )
        })?;
        let bad = |reason: String| Error::record(&e.record_id, "blob_index", reason);
        if e.length != expected_len {
            return Err(bad(format!(
                "entry length {} != hidden_dim x 4 = {expected_len}",
                e.length
            )));
        }
        if e.layer >= m.num_layers {
            return Err(bad(format!(
                "layer {} >= num_layers {}",
                e.layer, m.num_layers
            )));
        }
        match e.position_kind {
            PositionKind::TraceLastToken if e.position_index != 0 => {
                return Err(bad(format!(
                    "trace_last_token position_index must be 0, got {}",
                    e.position_index
                )))
            }
            PositionKind::StepEnd if e.position_index >= m.records[rec].num_steps() => {
                return Err(bad(format!(
                    "step_end index {} but record has {} steps",
                    e.position_index,
                    m.records[rec].num_steps()
                )))
            }
            _ => {}
        }
        if e.byte_offset % 4 != 0 {
            return Err(bad(format!(
                "byte_offset {} is not 4-byte aligned",
                e.byte_offset
            )));
        }
        let end = e
            .byte_offset
            .checked_add(e.length)
            .ok_or_else(|| bad("offset overflow".into()))?;
        if end > blob_len {
            return Err(bad(format!(
                "entry [{}, {end}) runs past blob end {blob_len}",
                e.byte_offset
            )));
        }
        let slot = VectorSlot {
            kind: e.position_kind,
            index: e.position_index,
            layer: e.layer,
        };
        if lookup
            .insert((rec, slot), (e.byte_offset / 4) as usize)
            .is_some()
        {
            return Err(bad(format!(
                "duplicate entry for layer {} {} {}",
                e.layer,
                e.position_kind.as_str(),
                e.position_index
            )));
        }
        spans.push((e.byte_offset, end, e.record_id.as_str()));
    }
    spans.sort_unstable();
    let mut covered = 0u64;
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::record(
                w[1].2,
                "blob_index",
                format!(
                    "entry at {} overlaps entry of {} ending at {}",
                    w[1].0, w[0].2, w[0].1
                ),
            ));
        }
    }
    for s in &spans {
        covered += s.1 - s.0;
    }
    if covered != blob_len {
        return Err(Error::BlobSize(format!(
            "blob has {blob_len} bytes but the index covers {covered}"
        )));
    }
    Ok(lookup)
}

fn resolve_paths(path: &Path) -> (PathBuf, PathBuf) {
    if path.is_dir() {
        (path.join(MANIFEST_FILE), path.join(BLOB_FILE))
    } else {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        (path.to_path_buf(), dir.join(BLOB_FILE))
    }
}

/// Loads and fully validates a dataset. `path` is either the dataset
/// directory or its `manifest.json`; the blob is read from the same directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let (manifest_path, blob_path) = resolve_paths(path.as_ref());
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_slice(&text)
        .map_err(|e| Error::MalformedManifest(format!("{}: {e}", manifest_path.display())))?;
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() % 4 != 0 {
        return Err(Error::BlobSize(format!(
            "{} bytes is not a whole number of f32 values",
            blob.len()
        )));
    }
    let data = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Dataset::from_manifest_and_floats(manifest, data)
}

/// Writes `manifest.json` and `activations.bin` into `dir` (created if needed).
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, dataset.manifest_bytes()?)
        .map_err(|e| Error::io(&manifest_path, e))?;
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, dataset.blob_bytes()).map_err(|e| Error::io(&blob_path, e))?;
    Ok(())
}

/// Indices of records grouped by `problem_id`, groups in first-seen order.
pub fn group_by_problem(records: &[TraceRecord]) -> Vec<(String, Vec<usize>)> {
    let mut order: Vec<(String, Vec<usize>)> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        match pos.get(r.problem_id.as_str()) {
            Some(&g) => order[g].1.push(i),
            None => {
                pos.insert(&r.problem_id, order.len());
                order.push((r.problem_id.clone(), vec![i]));
            }
        }
    }
    order
}
