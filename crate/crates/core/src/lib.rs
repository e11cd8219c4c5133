//! Locate concept representations in network layers with self-organizing maps.
//!
//! A base SOM is trained per layer on the activation vectors of a whole
//! dataset. Each SOM is then populated with the examples of one concept, and
//! the concept's frequency map is scored against the base map.

pub mod error;
pub mod ingest;
pub mod maps;
pub mod measures;
pub mod pipeline;
pub mod report;
pub mod som;

pub use error::{Error, Result};
pub use ingest::{
    aggregate, kmeans_discretize, read_actv, read_labels, write_actv, ActivationSet,
    AggregationKind, AggregationSpec, ConceptLabeling, LayerEntry, LayerManifest,
};
pub use maps::{populate, populate_base, populate_concept, subset, FrequencyMap, MapKind};
pub use measures::{
    cosine_distance_measure, inverse_entropy, max_fmeasure, relative_entropy, score_all,
    score_pair, standardize, Measure, MeasureValue, DEFAULT_EPSILON,
};
pub use pipeline::{run_populate, run_report, run_train, RunConfig};
pub use report::{
    emit_report, monotonicity_check, rank_concepts, render_heatmap, MeasureReport, Monotonicity,
    Verdict,
};
pub use som::{cosine_dist, neighborhood_mexican_hat, SomConfig, SomGrid};
