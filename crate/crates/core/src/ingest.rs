//! Activation dumps, concept labels and the layer manifest.
//!
//! ACTV layout (little-endian throughout):
//!
//! | bytes        | content                         |
//! |--------------|---------------------------------|
//! | 0..4         | magic `ACTV`                    |
//! | 4..8         | `u32` version, always 1         |
//! | 8..12        | `u32` rank `r >= 1`             |
//! | 12..12+4r    | `r` x `u32` shape, `shape[0]` = number of examples |
//! | ...          | `product(shape)` x `f32`, row-major |

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACTV_MAGIC: &[u8; 4] = b"ACTV";
pub const ACTV_VERSION: u32 = 1;

/// A batch of activations for one layer, one example per leading index.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub layer_name: String,
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl ActivationSet {
    pub fn new(layer_name: impl Into<String>, shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidHeader("rank must be at least 1".into()));
        }
        if shape[0] == 0 {
            return Err(Error::InvalidHeader(
                "activation set has no examples".into(),
            ));
        }
        let len = checked_product(&shape)
            .ok_or_else(|| Error::InvalidHeader(format!("shape {shape:?} overflows")))?;
        if len != values.len() {
            return Err(Error::Shape {
                expected: len,
                actual: values.len(),
            });
        }
        Ok(Self {
            layer_name: layer_name.into(),
            shape,
            values,
        })
    }

    /// Builds a rank-2 set from equally sized rows.
    pub fn from_rows<R: AsRef<[f32]>>(layer_name: impl Into<String>, rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(layer_name, vec![rows.len(), dim], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn n_examples(&self) -> usize {
        self.shape[0]
    }

    /// Flattened per-example length, `product(shape[1..])`.
    pub fn dim(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        let dim = self.dim();
        &self.values[index * dim..(index + 1) * dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact panics on 0; a zero-dim set still has n_examples rows.
        let dim = self.dim();
        (0..self.n_examples()).map(move |i| &self.values[i * dim..(i + 1) * dim])
    }

    /// Rows at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<ActivationSet> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("selection is empty"));
        }
        let n = self.n_examples();
        let mut values = Vec::with_capacity(indices.len() * self.dim());
        for &index in indices {
            if index >= n {
                return Err(Error::Index {
                    index,
                    n_examples: n,
                });
            }
            values.extend_from_slice(self.row(index));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        ActivationSet::new(self.layer_name.clone(), shape, values)
    }
}

fn checked_product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn decode_actv(layer_name: impl Into<String>, bytes: &[u8]) -> Result<ActivationSet> {
    if bytes.len() < 4 || &bytes[..4] != ACTV_MAGIC {
        return Err(Error::Format("missing ACTV magic".into()));
    }
    let mut cursor = 4;
    let mut next_u32 = |what: &str| -> Result<u32> {
        let chunk = bytes
            .get(cursor..cursor + 4)
            .ok_or_else(|| Error::Corruption(format!("file ends inside the header ({what})")))?;
        cursor += 4;
        Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
    };
    let version = next_u32("version")?;
    if version != ACTV_VERSION {
        return Err(Error::Format(format!("unsupported ACTV version {version}")));
    }
    let rank = next_u32("rank")? as usize;
    if rank == 0 {
        return Err(Error::InvalidHeader("rank must be at least 1".into()));
    }
    let shape = (0..rank)
        .map(|_| next_u32("shape").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if shape[0] == 0 {
        return Err(Error::InvalidHeader(
            "activation set has no examples".into(),
        ));
    }
    let header_len = 12 + 4 * rank;
    let count = checked_product(&shape)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::InvalidHeader(format!("shape {shape:?} overflows")))?;
    let payload = &bytes[header_len..];
    if payload.len() != count {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, header requires {count}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ActivationSet::new(layer_name, shape, values)
}

pub fn encode_actv(set: &ActivationSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * set.rank() + 4 * set.values.len());
    out.extend_from_slice(ACTV_MAGIC);
    out.extend_from_slice(&ACTV_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.rank() as u32).to_le_bytes());
    for &d in &set.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &set.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads an ACTV file; the layer name defaults to the file stem.
pub fn read_actv(path: impl AsRef<Path>) -> Result<ActivationSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_actv(name, &bytes)
}

pub fn write_actv(path: impl AsRef<Path>, set: &ActivationSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_actv(set)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    Mean,
    Flatten,
}

/// How a rank > 2 activation tensor becomes one vector per example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationSpec {
    pub kind: AggregationKind,
    #[serde(default)]
    pub axes: Vec<usize>,
}

impl AggregationSpec {
    pub fn flatten() -> Self {
        Self {
            kind: AggregationKind::Flatten,
            axes: Vec::new(),
        }
    }

    pub fn mean(axes: Vec<usize>) -> Self {
        Self {
            kind: AggregationKind::Mean,
            axes,
        }
    }

    /// Mean over the sequence axis of an `example x time x hidden` tensor.
    pub fn sequence_mean() -> Self {
        Self::mean(vec![1])
    }

    pub fn validate(&self, rank: usize) -> Result<()> {
        if self.kind == AggregationKind::Mean {
            if self.axes.is_empty() {
                return Err(Error::Spec(
                    "mean aggregation needs at least one axis".into(),
                ));
            }
            for &axis in &self.axes {
                if axis == 0 {
                    return Err(Error::Spec(
                        "axis 0 indexes examples and cannot be aggregated".into(),
                    ));
                }
                if axis >= rank {
                    return Err(Error::Spec(format!(
                        "axis {axis} out of range for rank {rank}"
                    )));
                }
            }
        }
        Ok(())
    }
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self::flatten()
    }
}

/// Reduces `set` to rank 2 according to `spec`.
pub fn aggregate(set: &ActivationSet, spec: &AggregationSpec) -> Result<ActivationSet> {
    spec.validate(set.rank())?;
    let n = set.n_examples();
    match spec.kind {
        AggregationKind::Flatten => ActivationSet::new(
            set.layer_name.clone(),
            vec![n, set.dim()],
            set.values.clone(),
        ),
        AggregationKind::Mean => {
            let shape = &set.shape;
            let rank = shape.len();
            let reduced: BTreeSet<usize> = spec.axes.iter().copied().collect();
            let kept: Vec<usize> = (1..rank).filter(|a| !reduced.contains(a)).collect();
            let out_dim: usize = kept.iter().map(|&a| shape[a]).product();
            let group: usize = reduced.iter().map(|&a| shape[a]).product();

            // Output stride for each input axis (0 for reduced axes).
            let mut out_stride = vec![0usize; rank];
            let mut s = 1;
            for &a in kept.iter().rev() {
                out_stride[a] = s;
                s *= shape[a];
            }

            let in_dim = set.dim();
            let mut sums = vec![0f64; n * out_dim];
            let mut idx = vec![0usize; rank];
            for ex in 0..n {
                let row = set.row(ex);
                let acc = &mut sums[ex * out_dim..(ex + 1) * out_dim];
                idx[1..].iter_mut().for_each(|i| *i = 0);
                for &v in row.iter().take(in_dim) {
                    let o: usize = (1..rank).map(|a| idx[a] * out_stride[a]).sum();
                    acc[o] += v as f64;
                    for a in (1..rank).rev() {
                        idx[a] += 1;
                        if idx[a] < shape[a] {
                            break;
                        }
                        idx[a] = 0;
                    }
                }
            }
            let values = sums.iter().map(|&s| (s / group as f64) as f32).collect();
            ActivationSet::new(set.layer_name.clone(), vec![n, out_dim], values)
        }
    }
}

/// Many-to-many assignment of examples to named concepts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptLabeling {
    membership: BTreeMap<String, BTreeSet<usize>>,
}

impl ConceptLabeling {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, example: usize, concept: impl Into<String>) {
        self.membership
            .entry(concept.into())
            .or_default()
            .insert(example);
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> + '_ {
        self.membership.keys().map(String::as_str)
    }

    pub fn members(&self, concept: &str) -> Option<&BTreeSet<usize>> {
        self.membership.get(concept)
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    /// Adds every membership of `other`; same-named concepts are merged.
    pub fn merge(&mut self, other: ConceptLabeling) {
        for (concept, members) in other.membership {
            self.membership.entry(concept).or_default().extend(members);
        }
    }

    /// Fails on the first member index that does not address an example.
    pub fn check_range(&self, n_examples: usize) -> Result<()> {
        for (concept, members) in &self.membership {
            if let Some(&index) = members.iter().next_back().filter(|&&i| i >= n_examples) {
                return Err(
                    Error::Index { index, n_examples }.context(format!("concept `{concept}`"))
                );
            }
        }
        Ok(())
    }
}

/// Parses a `example_id,concept` CSV document.
pub fn parse_labels(text: &str) -> Result<ConceptLabeling> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "example_id" || &headers[1] != "concept" {
        if headers.is_empty() {
            return Ok(ConceptLabeling::new());
        }
        return Err(Error::Parse {
            line: 1,
            message: "expected header `example_id,concept`".into(),
        });
    }
    let mut labeling = ConceptLabeling::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let example = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse {
                line,
                message: format!("bad example_id `{}`: {e}", &record[0]),
            })?;
        let concept = record[1].trim();
        if concept.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty concept".into(),
            });
        }
        labeling.insert(example, concept);
    }
    Ok(labeling)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<ConceptLabeling> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text).map_err(|e| e.context(path.display().to_string()))
}

/// Reads one float per line; a non-numeric first line is treated as a header.
pub fn read_targets(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut targets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => targets.push(v),
            Ok(_) => {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("non-finite target `{line}`"),
                })
            }
            Err(_) if i == 0 => {}
            Err(e) => {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    message: format!("bad target `{line}`: {e}"),
                })
            }
        }
    }
    Ok(targets)
}

const KMEANS_MAX_ITERATIONS: usize = 300;

/// Groups continuous targets into `k` concepts with 1-D Lloyd iterations.
///
/// Centers start at the `(i + 0.5) / k` quantiles of the sorted targets, so
/// the result is deterministic. Concepts are named `cluster_0..cluster_{k-1}`
/// in ascending center order; equidistant points go to the lower center.
pub fn kmeans_discretize(targets: &[f64], k: usize) -> Result<ConceptLabeling> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if targets.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} targets cannot form {k} clusters",
            targets.len()
        )));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("targets must be finite".into()));
    }
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::DegenerateClustering(format!(
            "k = {k} exceeds the {} distinct target values",
            distinct.len()
        )));
    }

    let quantiles = |values: &[f64]| -> Vec<f64> {
        (0..k)
            .map(|i| {
                let q = (i as f64 + 0.5) / k as f64;
                values[((q * values.len() as f64) as usize).min(values.len() - 1)]
            })
            .collect()
    };
    let mut centers = quantiles(&sorted);
    if centers.windows(2).any(|w| w[0] == w[1]) {
        // Heavy ties collapse quantiles; fall back to quantiles of distinct values.
        centers = quantiles(&distinct);
    }

    let nearest = |t: f64, centers: &[f64]| -> usize {
        let mut best = 0;
        for (j, c) in centers.iter().enumerate().skip(1) {
            if (t - c).abs() < (t - centers[best]).abs() {
                best = j;
            }
        }
        best
    };

    let mut assignment: Vec<usize> = targets.iter().map(|&t| nearest(t, &centers)).collect();
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut sums = vec![0f64; k];
        let mut counts = vec![0usize; k];
        for (&t, &a) in targets.iter().zip(&assignment) {
            sums[a] += t;
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j] / counts[j] as f64;
            }
        }
        let next: Vec<usize> = targets.iter().map(|&t| nearest(t, &centers)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let mut rank = vec![0; k];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    let mut labeling = ConceptLabeling::new();
    for (example, &a) in assignment.iter().enumerate() {
        labeling.insert(example, format!("cluster_{}", rank[a]));
    }
    if labeling.len() != k {
        return Err(Error::DegenerateClustering(format!(
            "only {} of {k} clusters received members",
            labeling.len()
        )));
    }
    Ok(labeling)
}

/// One entry of the manifest's ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub file: PathBuf,
    #[serde(default)]
    pub aggregation: AggregationSpec,
}

/// Layers in network order (input to output) plus the label sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub layers: Vec<LayerEntry>,
    pub labels_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_file: Option<PathBuf>,
}

impl LayerManifest {
    /// Loads the manifest and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: LayerManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for layer in &mut manifest.layers {
            layer.file = base.join(&layer.file);
        }
        manifest.labels_file = base.join(&manifest.labels_file);
        manifest.target_file = manifest.target_file.map(|t| base.join(t));
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("manifest lists no layers".into()));
        }
        let mut seen = BTreeSet::new();
        for layer in &self.layers {
            if layer.name.is_empty() {
                return Err(Error::InvalidInput("layer with empty name".into()));
            }
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate layer `{}`",
                    layer.name
                )));
            }
        }
        Ok(())
    }

    /// Reads and aggregates one layer's dump.
    pub fn load_layer(&self, entry: &LayerEntry) -> Result<ActivationSet> {
        let raw = read_actv(&entry.file)?;
        let mut set = aggregate(&raw, &entry.aggregation)?;
        set.layer_name = entry.name.clone();
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counting(shape: &[usize]) -> ActivationSet {
        let n: usize = shape.iter().product();
        ActivationSet::new("t", shape.to_vec(), (0..n).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn actv_reads_hand_built_bytes() {
        let mut bytes = b"ACTV".to_vec();
        for w in [1u32, 2, 3, 4] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for v in 0..12 {
            bytes.extend_from_slice(&(v as f32 * 0.5).to_le_bytes());
        }
        let set = decode_actv("l", &bytes).unwrap();
        assert_eq!(set.n_examples(), 3);
        assert_eq!(set.dim(), 4);
        assert_eq!(set.row(2)[3], 5.5);
        assert_eq!(encode_actv(&set), bytes);
    }

    #[test]
    fn actv_rejects_bad_headers() {
        let good = encode_actv(&counting(&[3, 4]));
        let mut bad_magic = good.clone();
        bad_magic[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode_actv("l", &bad_magic),
            Err(Error::Format(_))
        ));

        assert!(matches!(
            decode_actv("l", &good[..good.len() - 2]),
            Err(Error::Corruption(_))
        ));
        assert!(matches!(
            decode_actv("l", &good[..10]),
            Err(Error::Corruption(_))
        ));

        let mut rank0 = b"ACTV".to_vec();
        rank0.extend_from_slice(&1u32.to_le_bytes());
        rank0.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode_actv("l", &rank0),
            Err(Error::InvalidHeader(_))
        ));

        let mut empty = b"ACTV".to_vec();
        for w in [1u32, 2, 0, 4] {
            empty.extend_from_slice(&w.to_le_bytes());
        }
        assert!(matches!(
            decode_actv("l", &empty),
            Err(Error::InvalidHeader(_))
        ));

        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(matches!(decode_actv("l", &v2), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn actv_round_trips_payload_bits(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            // Arbitrary bit patterns, NaNs included.
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let values: Vec<f32> = (0..n).map(|_| f32::from_bits(rand::RngCore::next_u32(&mut rng))).collect();
            let set = ActivationSet::new("p", shape, values.clone()).unwrap();
            let back = decode_actv("p", &encode_actv(&set)).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.values()), bits(&values));
            prop_assert_eq!(back.shape(), set.shape());
        }

        #[test]
        fn flatten_preserves_sum(shape in prop::collection::vec(1usize..5, 2..5)) {
            let set = counting(&shape);
            let flat = aggregate(&set, &AggregationSpec::flatten()).unwrap();
            let sum = |s: &ActivationSet| s.values().iter().map(|&v| v as f64).sum::<f64>();
            prop_assert_eq!(sum(&flat), sum(&set));
            prop_assert_eq!(flat.rank(), 2);
        }

        #[test]
        fn mean_stays_within_slice_bounds(
            values in prop::collection::vec(-100f32..100.0, 24),
        ) {
            let set = ActivationSet::new("m", vec![2, 3, 4], values).unwrap();
            let mean = aggregate(&set, &AggregationSpec::mean(vec![1])).unwrap();
            for ex in 0..2 {
                for h in 0..4 {
                    let slice: Vec<f32> = (0..3).map(|t| set.row(ex)[t * 4 + h]).collect();
                    let lo = slice.iter().cloned().fold(f32::INFINITY, f32::min);
                    let hi = slice.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let m = mean.row(ex)[h];
                    prop_assert!(m >= lo - 1e-4 && m <= hi + 1e-4);
                }
            }
        }
    }

    #[test]
    fn mean_over_sequence_axis() {
        // counting tensor: example e, time t, hidden h holds 12e + 4t + h
        let set = counting(&[2, 3, 4]);
        let mean = aggregate(&set, &AggregationSpec::sequence_mean()).unwrap();
        assert_eq!(mean.shape(), &[2, 4]);
        // mean over t of (12e + 4t + h) = 12e + 4 + h
        assert_eq!(mean.row(0), &[4.0, 5.0, 6.0, 7.0]);
        assert_eq!(mean.row(1), &[16.0, 17.0, 18.0, 19.0]);
    }

    #[test]
    fn mean_over_inner_axis_and_all_axes() {
        let set = counting(&[2, 3, 4]);
        let inner = aggregate(&set, &AggregationSpec::mean(vec![2])).unwrap();
        assert_eq!(inner.shape(), &[2, 3]);
        assert_eq!(inner.row(0), &[1.5, 5.5, 9.5]);
        let all = aggregate(&set, &AggregationSpec::mean(vec![1, 2])).unwrap();
        assert_eq!(all.shape(), &[2, 1]);
        assert_eq!(all.row(1), &[17.5]);
    }

    #[test]
    fn mean_of_rank2_matches_loop() {
        let values: Vec<f32> = (0..35).map(|i| ((i * 37) % 11) as f32 - 3.25).collect();
        let set = ActivationSet::new("r", vec![5, 7], values.clone()).unwrap();
        let mean = aggregate(&set, &AggregationSpec::mean(vec![1])).unwrap();
        assert_eq!(mean.shape(), &[5, 1]);
        for r in 0..5 {
            let mut s = 0f64;
            for c in 0..7 {
                s += values[r * 7 + c] as f64;
            }
            assert_eq!(mean.row(r)[0], (s / 7.0) as f32);
        }
    }

    #[test]
    fn flatten_keeps_row_major_order() {
        let set = counting(&[2, 3, 4]);
        let flat = aggregate(&set, &AggregationSpec::flatten()).unwrap();
        assert_eq!(flat.shape(), &[2, 12]);
        assert_eq!(flat.values(), set.values());
    }

    #[test]
    fn aggregation_spec_errors() {
        let set = counting(&[2, 3, 4]);
        for axes in [vec![3], vec![0], vec![]] {
            assert!(matches!(
                aggregate(&set, &AggregationSpec::mean(axes)),
                Err(Error::Spec(_))
            ));
        }
    }

    #[test]
    fn labels_collapse_duplicates() {
        let l = parse_labels("example_id,concept\n0,A\n1,A\n1,B\n0,A\n").unwrap();
        assert_eq!(l.concepts().collect::<Vec<_>>(), ["A", "B"]);
        assert_eq!(
            l.members("A").unwrap().iter().copied().collect::<Vec<_>>(),
            [0, 1]
        );
        assert_eq!(
            l.members("B").unwrap().iter().copied().collect::<Vec<_>>(),
            [1]
        );
    }

    #[test]
    fn labels_empty_body_is_valid() {
        assert!(parse_labels("example_id,concept\n").unwrap().is_empty());
        assert!(parse_labels("").unwrap().is_empty());
    }

    #[test]
    fn labels_report_line_numbers() {
        let err = parse_labels("example_id,concept\n0,A\nx,B\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_labels("example_id,concept\n0,A\n1,B,C\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(
            parse_labels("id,label\n0,A\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn labels_range_check() {
        let l = parse_labels("example_id,concept\n0,A\n7,A\n").unwrap();
        assert!(l.check_range(8).is_ok());
        assert!(matches!(
            l.check_range(5).unwrap_err().root(),
            Error::Index { index: 7, .. }
        ));
    }

    fn cluster_sets(l: &ConceptLabeling) -> Vec<Vec<usize>> {
        l.concepts()
            .map(|c| l.members(c).unwrap().iter().copied().collect())
            .collect()
    }

    /// Minimum within-cluster sum of squares over all contiguous k-partitions.
    fn brute_force_partition(sorted: &[f64], k: usize) -> Vec<Vec<f64>> {
        fn sse(xs: &[f64]) -> f64 {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m).powi(2)).sum()
        }
        fn go(xs: &[f64], k: usize) -> (f64, Vec<Vec<f64>>) {
            if k == 1 {
                return (sse(xs), vec![xs.to_vec()]);
            }
            let mut best = (f64::INFINITY, Vec::new());
            for cut in 1..=xs.len() - (k - 1) {
                let (rest, mut parts) = go(&xs[cut..], k - 1);
                let total = sse(&xs[..cut]) + rest;
                if total < best.0 {
                    parts.insert(0, xs[..cut].to_vec());
                    best = (total, parts);
                }
            }
            best
        }
        go(sorted, k).1
    }

    #[test]
    fn kmeans_three_groups_match_brute_force() {
        let targets = [1.0, 2.0, 10.0, 11.0, 20.0, 21.0];
        let expected = brute_force_partition(&targets, 3);
        assert_eq!(
            expected,
            vec![vec![1.0, 2.0], vec![10.0, 11.0], vec![20.0, 21.0]]
        );
        let l = kmeans_discretize(&targets, 3).unwrap();
        assert_eq!(cluster_sets(&l), vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(
            l.concepts().collect::<Vec<_>>(),
            ["cluster_0", "cluster_1", "cluster_2"]
        );
    }

    #[test]
    fn kmeans_single_and_saturated() {
        let l = kmeans_discretize(&[4.0; 5], 1).unwrap();
        assert_eq!(cluster_sets(&l), vec![vec![0, 1, 2, 3, 4]]);

        let targets = [5.0, -1.0, 3.0, 9.0];
        let l = kmeans_discretize(&targets, 4).unwrap();
        // ascending center order: -1, 3, 5, 9
        assert_eq!(cluster_sets(&l), vec![vec![1], vec![2], vec![0], vec![3]]);
    }

    #[test]
    fn kmeans_errors() {
        assert!(matches!(
            kmeans_discretize(&[1.0, 1.0, 2.0], 3),
            Err(Error::DegenerateClustering(_))
        ));
        assert!(kmeans_discretize(&[1.0], 2).is_err());
        assert!(kmeans_discretize(&[1.0], 0).is_err());
    }

    #[test]
    fn kmeans_handles_heavy_ties() {
        let targets = [1.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        let l = kmeans_discretize(&targets, 2).unwrap();
        assert_eq!(cluster_sets(&l), vec![vec![0, 1, 2, 3, 4], vec![5]]);
    }

    proptest! {
        #[test]
        fn kmeans_clusters_are_contiguous_and_order_free(
            targets in prop::collection::vec(-50i32..50, 6..40),
            k in 1usize..5,
            rot in 0usize..40,
        ) {
            let targets: Vec<f64> = targets.into_iter().map(f64::from).collect();
            let Ok(l) = kmeans_discretize(&targets, k) else { return Ok(()); };
            // contiguity: cluster ranges in value space do not interleave
            let ranges: Vec<(f64, f64)> = l.concepts().map(|c| {
                let vals: Vec<f64> = l.members(c).unwrap().iter().map(|&i| targets[i]).collect();
                (vals.iter().cloned().fold(f64::INFINITY, f64::min),
                 vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            }).collect();
            for w in ranges.windows(2) {
                prop_assert!(w[0].1 < w[1].0);
            }
            // permuting the input permutes the example indices only
            let n = targets.len();
            let shift = rot % n;
            let rotated: Vec<f64> = (0..n).map(|i| targets[(i + shift) % n]).collect();
            let lr = kmeans_discretize(&rotated, k).unwrap();
            for c in l.concepts() {
                let orig: BTreeSet<usize> = l.members(c).unwrap().clone();
                let mapped: BTreeSet<usize> = lr.members(c).unwrap().iter().map(|&i| (i + shift) % n).collect();
                prop_assert_eq!(orig, mapped);
            }
        }
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("manifest.json");
        fs::write(
            &manifest,
            r#"{"layers": [{"name": "lstm", "file": "lstm.actv", "aggregation": {"kind": "mean", "axes": [1]}},
                           {"name": "fc", "file": "fc.actv", "aggregation": {"kind": "flatten"}}],
                "labels_file": "labels.csv"}"#,
        )
        .unwrap();
        let m = LayerManifest::load(&manifest).unwrap();
        assert_eq!(m.layers[0].file, dir.path().join("lstm.actv"));
        assert_eq!(m.layers[0].aggregation, AggregationSpec::sequence_mean());
        assert_eq!(m.layers[1].aggregation.kind, AggregationKind::Flatten);
        assert!(m.target_file.is_none());

        let set = counting(&[2, 3, 4]);
        write_actv(dir.path().join("lstm.actv"), &set).unwrap();
        let loaded = m.load_layer(&m.layers[0]).unwrap();
        assert_eq!(loaded.layer_name, "lstm");
        assert_eq!(loaded.shape(), &[2, 4]);
    }

    #[test]
    fn manifest_rejects_duplicate_layers() {
        let m = LayerManifest {
            layers: vec![
                LayerEntry {
                    name: "a".into(),
                    file: "a".into(),
                    aggregation: AggregationSpec::flatten(),
                },
                LayerEntry {
                    name: "a".into(),
                    file: "b".into(),
                    aggregation: AggregationSpec::flatten(),
                },
            ],
            labels_file: "l.csv".into(),
            target_file: None,
        };
        assert!(m.validate().is_err());
    }
}
