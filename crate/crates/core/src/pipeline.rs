//! The three pipeline stages: train base SOMs, populate maps, report.
//!
//! Output directory layout:
//!
//! ```text
//! <out>/som/<layer>.json          trained base SOM per layer
//! <out>/maps/<layer>__BASE.json   base frequency map
//! <out>/maps/<layer>__<c>.json    concept frequency map
//! <out>/maps/index.json           layers and concepts written by `populate`
//! <out>/heatmaps/<stem>.png       one heatmap per map file
//! <out>/report.json, report.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    kmeans_discretize, read_labels, read_targets, ActivationSet, ConceptLabeling, LayerManifest,
};
use crate::maps::{populate_base, populate_concept, subset, FrequencyMap};
use crate::measures::{score_all, DEFAULT_EPSILON};
use crate::report::{
    emit_report, encode_component, map_stem, map_stem_of, render_heatmap, write_atomic,
    MeasureReport,
};
use crate::som::{SomConfig, SomGrid};

/// Settings shared by all stages. Paths are not part of the echoed config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing)]
    pub manifest: PathBuf,
    #[serde(skip_serializing)]
    pub out_dir: PathBuf,
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    /// Training steps per layer; defaults to ten times the dataset size.
    pub iterations: Option<usize>,
    pub freeze_sigma: bool,
    pub seed: u64,
    /// Concepts with fewer members are skipped.
    pub min_members: usize,
    pub epsilon: f64,
    #[serde(skip_serializing)]
    pub jobs: Option<usize>,
    /// Cluster count when the manifest names a continuous target file.
    pub target_clusters: usize,
    /// Standardize targets before clustering them.
    pub normalize_targets: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let som = SomConfig::default();
        Self {
            manifest: PathBuf::new(),
            out_dir: PathBuf::new(),
            width: som.width,
            height: som.height,
            sigma: som.sigma0,
            learning_rate: som.learning_rate0,
            iterations: None,
            freeze_sigma: false,
            seed: 0,
            min_members: 20,
            epsilon: DEFAULT_EPSILON,
            jobs: None,
            target_clusters: 3,
            normalize_targets: false,
        }
    }
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            out_dir: out_dir.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_members == 0 {
            return Err(Error::InvalidConfig(
                "min_members must be at least 1".into(),
            ));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::InvalidConfig("jobs must be at least 1".into()));
        }
        if self.target_clusters == 0 {
            return Err(Error::InvalidConfig(
                "target_clusters must be at least 1".into(),
            ));
        }
        self.som_config(0, 1).validate()
    }

    /// SOM settings for the layer at `index` trained on `n_examples` rows.
    pub fn som_config(&self, index: usize, n_examples: usize) -> SomConfig {
        SomConfig {
            width: self.width,
            height: self.height,
            sigma0: self.sigma,
            learning_rate0: self.learning_rate,
            n_iterations: self.iterations.unwrap_or(10 * n_examples),
            seed: self.layer_seed(index),
            decay_sigma: !self.freeze_sigma,
            ..SomConfig::default()
        }
    }

    pub fn layer_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn som_dir(&self) -> PathBuf {
        self.out_dir.join("som")
    }

    pub fn maps_dir(&self) -> PathBuf {
        self.out_dir.join("maps")
    }

    pub fn heatmap_dir(&self) -> PathBuf {
        self.out_dir.join("heatmaps")
    }

    pub fn som_path(&self, layer: &str) -> PathBuf {
        self.som_dir()
            .join(format!("{}.json", encode_component(layer)))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = self.jobs {
            builder = builder.num_threads(jobs);
        }
        builder
            .build()
            .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub layer: String,
    pub n_examples: usize,
    pub dim: usize,
    pub initial_quantization_error: f64,
    pub quantization_error: f64,
    pub path: PathBuf,
}

/// Trains and saves one base SOM per manifest layer.
pub fn run_train(config: &RunConfig) -> Result<Vec<TrainSummary>> {
    config.validate()?;
    let manifest = LayerManifest::load(&config.manifest)?;
    create_dir(&config.som_dir())?;
    config.pool()?.install(|| {
        manifest
            .layers
            .par_iter()
            .enumerate()
            .map(|(index, entry)| {
                let layer_ctx = |e: Error| e.context(format!("layer `{}`", entry.name));
                let data = manifest.load_layer(entry).map_err(layer_ctx)?;
                let mut grid =
                    SomGrid::new(config.som_config(index, data.n_examples()), data.dim())
                        .map_err(layer_ctx)?;
                let initial = grid.quantization_error(&data).map_err(layer_ctx)?;
                grid.train(&data).map_err(layer_ctx)?;
                let qe = grid.quantization_error(&data).map_err(layer_ctx)?;
                let path = config.som_path(&entry.name);
                grid.save(&path)?;
                info!(
                    "trained `{}`: quantization error {initial:.4} -> {qe:.4}",
                    entry.name
                );
                Ok(TrainSummary {
                    layer: entry.name.clone(),
                    n_examples: data.n_examples(),
                    dim: data.dim(),
                    initial_quantization_error: initial,
                    quantization_error: qe,
                    path,
                })
            })
            .collect()
    })
}

/// Which layers and concepts the populate stage wrote maps for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapIndex {
    pub layers: Vec<String>,
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulateSummary {
    pub index: MapIndex,
    /// Concepts left out by the member-count filter, with their sizes.
    pub skipped: Vec<(String, usize)>,
    pub files: Vec<PathBuf>,
}

/// Reads the labels file plus any discretized continuous targets.
pub fn load_labeling(
    manifest: &LayerManifest,
    config: &RunConfig,
    n_examples: usize,
) -> Result<ConceptLabeling> {
    let mut labeling = read_labels(&manifest.labels_file)?;
    if let Some(target_file) = &manifest.target_file {
        let mut targets = read_targets(target_file)?;
        if targets.len() != n_examples {
            return Err(Error::Consistency(format!(
                "{} has {} targets for {n_examples} examples",
                target_file.display(),
                targets.len()
            )));
        }
        if config.normalize_targets {
            targets = crate::measures::standardize(&targets)?;
        }
        labeling.merge(kmeans_discretize(&targets, config.target_clusters)?);
    }
    labeling.check_range(n_examples)?;
    Ok(labeling)
}

/// Populates each layer's base SOM with the whole dataset and with every
/// concept that has at least `min_members` examples.
pub fn run_populate(config: &RunConfig) -> Result<PopulateSummary> {
    config.validate()?;
    let manifest = LayerManifest::load(&config.manifest)?;

    let layers: Vec<(String, ActivationSet, SomGrid)> = config.pool()?.install(|| {
        manifest
            .layers
            .par_iter()
            .map(|entry| {
                let som_path = config.som_path(&entry.name);
                if !som_path.exists() {
                    return Err(Error::InvalidInput(format!(
                        "no SOM at {}; run `actsom train` first",
                        som_path.display()
                    ))
                    .context(format!("layer `{}`", entry.name)));
                }
                let grid = SomGrid::load(&som_path)?;
                let data = manifest
                    .load_layer(entry)
                    .map_err(|e| e.context(format!("layer `{}`", entry.name)))?;
                if data.dim() != grid.dim() {
                    return Err(Error::Shape {
                        expected: grid.dim(),
                        actual: data.dim(),
                    }
                    .context(format!("layer `{}` activations vs SOM", entry.name)));
                }
                Ok((entry.name.clone(), data, grid))
            })
            .collect::<Result<_>>()
    })?;

    let n_examples = layers[0].1.n_examples();
    if let Some((name, data, _)) = layers.iter().find(|(_, d, _)| d.n_examples() != n_examples) {
        return Err(Error::Consistency(format!(
            "layer `{name}` has {} examples, layer `{}` has {n_examples}",
            data.n_examples(),
            layers[0].0
        )));
    }
    let labeling = load_labeling(&manifest, config, n_examples)?;

    let mut concepts = Vec::new();
    let mut skipped = Vec::new();
    for concept in labeling.concepts() {
        let size = labeling.members(concept).map_or(0, |m| m.len());
        if size >= config.min_members {
            concepts.push(concept.to_string());
        } else {
            info!(
                "skipping concept `{concept}`: {size} members < {}",
                config.min_members
            );
            skipped.push((concept.to_string(), size));
        }
    }
    if concepts.is_empty() {
        warn!("no concept passes the member filter; only base maps will be written");
    }

    let maps_dir = config.maps_dir();
    create_dir(&maps_dir)?;
    let files: Vec<Vec<PathBuf>> = config.pool()?.install(|| {
        layers
            .par_iter()
            .map(|(name, data, grid)| {
                let ctx = |e: Error| e.context(format!("layer `{name}`"));
                let mut written = Vec::with_capacity(concepts.len() + 1);
                let base = populate_base(grid, data).map_err(ctx)?;
                let path = maps_dir.join(format!("{}.json", map_stem_of(&base)));
                base.save(&path)?;
                written.push(path);
                for concept in &concepts {
                    let rows = subset(data, &labeling, concept).map_err(ctx)?;
                    let map = populate_concept(grid, &rows, concept).map_err(ctx)?;
                    let path = maps_dir.join(format!("{}.json", map_stem_of(&map)));
                    map.save(&path)?;
                    written.push(path);
                }
                Ok(written)
            })
            .collect::<Result<_>>()
    })?;

    let index = MapIndex {
        layers: layers.iter().map(|(n, _, _)| n.clone()).collect(),
        concepts,
    };
    let index_path = maps_dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serialization is infallible");
    write_atomic(&index_path, text.as_bytes())?;
    Ok(PopulateSummary {
        index,
        skipped,
        files: files.into_iter().flatten().collect(),
    })
}

/// Scores the populated maps, renders heatmaps and writes the report.
pub fn run_report(config: &RunConfig) -> Result<MeasureReport> {
    config.validate()?;
    let manifest = LayerManifest::load(&config.manifest)?;
    let index_path = config.maps_dir().join("index.json");
    if !index_path.exists() {
        return Err(Error::InvalidInput(format!(
            "no map index at {}; run `actsom populate` first",
            index_path.display()
        )));
    }
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: MapIndex = serde_json::from_str(&text).map_err(|e| Error::json(&index_path, e))?;
    let layers: Vec<String> = manifest.layers.iter().map(|l| l.name.clone()).collect();
    if index.layers != layers {
        return Err(Error::Consistency(
            "maps were populated for a different layer list; rerun `actsom populate`".into(),
        ));
    }

    let mut grids = Vec::with_capacity(layers.len());
    let mut bases = Vec::with_capacity(layers.len());
    let mut concept_maps = Vec::with_capacity(layers.len() * index.concepts.len());
    for layer in &layers {
        let grid = SomGrid::load(config.som_path(layer))?;
        let base = FrequencyMap::load(
            config
                .maps_dir()
                .join(format!("{}.json", map_stem(layer, None))),
        )?;
        check_grid(&grid, &base)?;
        for concept in &index.concepts {
            let path = config
                .maps_dir()
                .join(format!("{}.json", map_stem(layer, Some(concept))));
            let map = FrequencyMap::load(&path)?;
            check_grid(&grid, &map)?;
            if map.layer_name != *layer || map.concept.as_deref() != Some(concept) {
                return Err(Error::Consistency(format!(
                    "{} does not hold the map for `{concept}` at `{layer}`",
                    path.display()
                )));
            }
            concept_maps.push(map);
        }
        grids.push(grid);
        bases.push(base);
    }

    let values = score_all(&layers, &bases, &concept_maps, config.epsilon)?;
    let echo = serde_json::json!({
        "run": config,
        "som": grids.iter().zip(&layers).map(|(g, l)| serde_json::json!({
            "layer": l,
            "dim": g.dim(),
            "config": g.config(),
        })).collect::<Vec<_>>(),
    });
    let seeds = grids.iter().map(|g| g.config().seed).collect();
    let report = MeasureReport::build(layers, values, echo, seeds)?;

    let heatmaps = config.heatmap_dir();
    create_dir(&heatmaps)?;
    let all_maps: Vec<&FrequencyMap> = bases.iter().chain(&concept_maps).collect();
    config.pool()?.install(|| {
        all_maps.par_iter().try_for_each(|map| {
            render_heatmap(map, heatmaps.join(format!("{}.png", map_stem_of(map))))
        })
    })?;
    if !report.values.is_empty() {
        emit_report(&report, &config.out_dir)?;
    } else {
        warn!("no concept maps to score; report.json not written");
    }
    Ok(report)
}

fn check_grid(grid: &SomGrid, map: &FrequencyMap) -> Result<()> {
    if map.width() != grid.width() || map.height() != grid.height() {
        return Err(Error::Consistency(format!(
            "map for `{}` is {}x{} but its SOM is {}x{}",
            map.layer_name,
            map.width(),
            map.height(),
            grid.width(),
            grid.height()
        )));
    }
    Ok(())
}
