//! Frequency maps: how often each SOM unit wins for a population of examples.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ActivationSet, ConceptLabeling};
use crate::som::SomGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Base,
    Concept,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyMap {
    pub layer_name: String,
    pub kind: MapKind,
    pub concept: Option<String>,
    width: usize,
    height: usize,
    counts: Vec<u64>,
    total: u64,
}

impl FrequencyMap {
    /// Wraps row-major counts of a `height x width` grid.
    pub fn from_counts(
        layer_name: impl Into<String>,
        kind: MapKind,
        concept: Option<String>,
        width: usize,
        height: usize,
        counts: Vec<u64>,
    ) -> Result<Self> {
        if counts.len() != width * height {
            return Err(Error::Shape {
                expected: width * height,
                actual: counts.len(),
            });
        }
        if (kind == MapKind::Concept) != concept.is_some() {
            return Err(Error::Consistency(
                "concept maps carry a concept id and base maps do not".into(),
            ));
        }
        let total = counts.iter().sum();
        Ok(Self {
            layer_name: layer_name.into(),
            kind,
            concept,
            width,
            height,
            counts,
            total,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Counts divided by the total, row-major.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        if self.total == 0 {
            return Err(Error::EmptyMap);
        }
        let total = self.total as f64;
        Ok(self.counts.iter().map(|&c| c as f64 / total).collect())
    }

    pub fn same_grid(&self, other: &FrequencyMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_json(&self) -> String {
        let file = MapFile {
            format: "fmap".into(),
            version: 1,
            layer: self.layer_name.clone(),
            kind: self.kind,
            concept: self.concept.clone(),
            width: self.width,
            height: self.height,
            counts: self
                .counts
                .chunks(self.width.max(1))
                .map(<[u64]>::to_vec)
                .collect(),
            total: self.total,
        };
        serde_json::to_string(&file).expect("map serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MapFile = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("invalid frequency map document: {e}")))?;
        if file.format != "fmap" || file.version != 1 {
            return Err(Error::Format(format!(
                "expected format `fmap` version 1, got `{}` version {}",
                file.format, file.version
            )));
        }
        if file.counts.len() != file.height || file.counts.iter().any(|r| r.len() != file.width) {
            return Err(Error::Format(
                "counts do not match the declared grid".into(),
            ));
        }
        let map = FrequencyMap::from_counts(
            file.layer,
            file.kind,
            file.concept,
            file.width,
            file.height,
            file.counts.into_iter().flatten().collect(),
        )?;
        if map.total != file.total {
            return Err(Error::Consistency(format!(
                "declared total {} but counts sum to {}",
                file.total, map.total
            )));
        }
        Ok(map)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct MapFile {
    format: String,
    version: u32,
    layer: String,
    kind: MapKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concept: Option<String>,
    width: usize,
    height: usize,
    counts: Vec<Vec<u64>>,
    total: u64,
}

/// Tallies best matching units of `data` on a fixed (untrained-further) grid.
pub fn populate(
    grid: &SomGrid,
    data: &ActivationSet,
    kind: MapKind,
    concept: Option<String>,
) -> Result<FrequencyMap> {
    let mut counts = vec![0u64; grid.n_units()];
    for unit in grid.bmu_all(data)? {
        counts[unit] += 1;
    }
    FrequencyMap::from_counts(
        data.layer_name.clone(),
        kind,
        concept,
        grid.width(),
        grid.height(),
        counts,
    )
}

pub fn populate_base(grid: &SomGrid, data: &ActivationSet) -> Result<FrequencyMap> {
    populate(grid, data, MapKind::Base, None)
}

pub fn populate_concept(
    grid: &SomGrid,
    data: &ActivationSet,
    concept: &str,
) -> Result<FrequencyMap> {
    populate(grid, data, MapKind::Concept, Some(concept.to_owned()))
}

/// Rows of `data` belonging to `concept`, in example order.
pub fn subset(
    data: &ActivationSet,
    labeling: &ConceptLabeling,
    concept: &str,
) -> Result<ActivationSet> {
    let members = labeling
        .members(concept)
        .ok_or_else(|| Error::UnknownConcept(concept.to_owned()))?;
    let indices: Vec<usize> = members.iter().copied().collect();
    data.select(&indices)
}
