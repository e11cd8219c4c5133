//! Heatmaps, layer-trend verdicts, concept rankings and report files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{FrequencyMap, MapKind};
use crate::measures::{Measure, MeasureValue};

/// Side length, in pixels, of one unit in a rendered heatmap.
pub const CELL_PIXELS: usize = 32;

/// Suffix used for base-map files in place of a concept id.
pub const BASE_TAG: &str = "BASE";

const FILENAME_SAFE: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.');

/// Percent-encodes an identifier for use in a file name.
pub fn encode_component(id: &str) -> String {
    let encoded = utf8_percent_encode(id, FILENAME_SAFE).to_string();
    match encoded.as_str() {
        // keep concepts from colliding with the base-map tag or dot entries
        BASE_TAG => "%42ASE".to_string(),
        "." => "%2E".to_string(),
        ".." => "%2E%2E".to_string(),
        _ => encoded,
    }
}

/// `<layer>__<concept>` or `<layer>__BASE`, without extension.
pub fn map_stem(layer: &str, concept: Option<&str>) -> String {
    let tail = concept
        .map(encode_component)
        .unwrap_or_else(|| BASE_TAG.to_string());
    format!("{}__{}", encode_component(layer), tail)
}

pub fn map_stem_of(map: &FrequencyMap) -> String {
    match map.kind {
        MapKind::Base => map_stem(&map.layer_name, None),
        MapKind::Concept => map_stem(&map.layer_name, map.concept.as_deref()),
    }
}

/// Grayscale pixels (row-major, one byte each) of a frequency map; the most
/// frequent unit is black and unvisited units are white.
pub fn heatmap_pixels(map: &FrequencyMap) -> Result<(u32, u32, Vec<u8>)> {
    if map.total() == 0 {
        return Err(Error::EmptyMap);
    }
    let max = map.max_count() as f64;
    let width = map.width() * CELL_PIXELS;
    let height = map.height() * CELL_PIXELS;
    let shades: Vec<u8> = map
        .counts()
        .iter()
        .map(|&c| (255.0 * (1.0 - c as f64 / max)).round() as u8)
        .collect();
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = y / CELL_PIXELS;
        for x in 0..width {
            pixels.push(shades[row * map.width() + x / CELL_PIXELS]);
        }
    }
    Ok((width as u32, height as u32, pixels))
}

/// Writes the map as an 8-bit grayscale PNG.
pub fn render_heatmap(map: &FrequencyMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (width, height, pixels) = heatmap_pixels(map)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&pixels)?;
    writer.finish()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Values never decrease from input to output.
    Supports,
    /// Values never increase and are not all equal.
    Violates,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub verdict: Verdict,
    /// Spearman correlation between values and layer position.
    pub spearman: f64,
}

/// Checks whether a per-layer series (input to output) grows toward the output.
///
/// Spearman's rho uses average ranks for ties and is 0 for a constant series.
pub fn monotonicity_check(series: &[f64]) -> Result<Monotonicity> {
    if series.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 layers, got {}",
            series.len()
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("series has non-finite values".into()));
    }
    let nondecreasing = series.windows(2).all(|w| w[0] <= w[1]);
    let nonincreasing = series.windows(2).all(|w| w[0] >= w[1]);
    let verdict = if nondecreasing {
        Verdict::Supports
    } else if nonincreasing {
        Verdict::Violates
    } else {
        Verdict::Mixed
    };
    let positions: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    let spearman = pearson(&average_ranks(series), &positions);
    Ok(Monotonicity { verdict, spearman })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Concepts at `layer` ordered by descending `measure`, ties by concept id.
pub fn rank_concepts(
    values: &[MeasureValue],
    layer: &str,
    measure: Measure,
) -> Result<Vec<String>> {
    let mut selected: Vec<&MeasureValue> = values
        .iter()
        .filter(|v| v.layer == layer && v.measure == measure)
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no {measure} values for layer `{layer}`"
        )));
    }
    selected.sort_by(|a, b| {
        b.value
            .total_cmp(&a.value)
            .then_with(|| a.concept.cmp(&b.concept))
    });
    Ok(selected.into_iter().map(|v| v.concept.clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    pub measure: Measure,
    pub concept: String,
    pub verdict: Verdict,
    pub spearman: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub layer: String,
    pub measure: Measure,
    pub concepts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub tool_version: String,
    pub log_base: String,
    pub layers: Vec<String>,
    pub concepts: Vec<String>,
    pub values: Vec<MeasureValue>,
    pub hypothesis_results: Vec<HypothesisResult>,
    pub rankings: Vec<Ranking>,
    /// Echo of the run configuration.
    pub config: serde_json::Value,
    /// Seed used for each layer's SOM, in layer order.
    pub seeds: Vec<u64>,
}

impl MeasureReport {
    /// Derives verdicts and rankings from scored values.
    ///
    /// Monotonicity is evaluated for every (measure, concept) series that has
    /// a finite value at each of at least two layers.
    pub fn build(
        layers: Vec<String>,
        values: Vec<MeasureValue>,
        config: serde_json::Value,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        let mut concepts: Vec<String> = values.iter().map(|v| v.concept.clone()).collect();
        concepts.sort();
        concepts.dedup();

        let mut seen = std::collections::BTreeSet::new();
        for v in &values {
            if !layers.contains(&v.layer) {
                return Err(Error::Consistency(format!(
                    "value for unknown layer `{}`",
                    v.layer
                )));
            }
            if !seen.insert((v.layer.as_str(), v.concept.as_str(), v.measure)) {
                return Err(Error::Consistency(format!(
                    "duplicate {} value for `{}` at layer `{}`",
                    v.measure, v.concept, v.layer
                )));
            }
        }

        let mut hypothesis_results = Vec::new();
        for measure in Measure::ALL {
            for concept in &concepts {
                let series: Vec<f64> = layers
                    .iter()
                    .filter_map(|l| {
                        values
                            .iter()
                            .find(|v| {
                                &v.layer == l && &v.concept == concept && v.measure == measure
                            })
                            .map(|v| v.value)
                    })
                    .collect();
                if series.len() < 2
                    || series.len() != layers.len()
                    || series.iter().any(|v| !v.is_finite())
                {
                    continue;
                }
                let m = monotonicity_check(&series)?;
                hypothesis_results.push(HypothesisResult {
                    measure,
                    concept: concept.clone(),
                    verdict: m.verdict,
                    spearman: m.spearman,
                });
            }
        }

        let mut rankings = Vec::new();
        for layer in &layers {
            for measure in Measure::ALL {
                if let Ok(order) = rank_concepts(&values, layer, measure) {
                    rankings.push(Ranking {
                        layer: layer.clone(),
                        measure,
                        concepts: order,
                    });
                }
            }
        }

        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            log_base: "e".to_string(),
            layers,
            concepts,
            values,
            hypothesis_results,
            rankings,
            config,
            seeds,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidInput(format!("report cannot be serialized: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("invalid report: {e}")))
    }

    /// Flat `layer,concept,measure,value,z_value` table.
    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("CSV encoding failed: {e}"));
        writer
            .write_record(["layer", "concept", "measure", "value", "z_value"])
            .map_err(csv_err)?;
        for v in &self.values {
            let value = if v.value == f64::INFINITY {
                "inf".to_string()
            } else {
                v.value.to_string()
            };
            let z = v.z_value.map(|z| z.to_string()).unwrap_or_default();
            writer
                .write_record([
                    v.layer.as_str(),
                    v.concept.as_str(),
                    v.measure.as_str(),
                    &value,
                    &z,
                ])
                .map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("CSV encoding failed: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
    }
}

/// Writes `report.json` and `report.csv` under `dir`.
///
/// Both documents are rendered before anything touches the disk, and each file
/// is written to a temporary name and renamed into place.
pub fn emit_report(report: &MeasureReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if report.values.is_empty() {
        return Err(Error::EmptySelection("report has no values".into()));
    }
    let json = report.to_json()?;
    let csv = report.to_csv()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
    write_atomic(&dir.join("report.json"), json.as_bytes())
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(file);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
