//! Scores for how distinctly a concept occupies a layer's map.
//!
//! Entropies and divergences use the natural logarithm.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::maps::{FrequencyMap, MapKind};

/// Default additive smoothing applied before the KL divergence.
pub const DEFAULT_EPSILON: f64 = 1e-9;

const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    InverseEntropy,
    MaxFm,
    CosineDistance,
    RelativeEntropy,
}

impl Measure {
    pub const ALL: [Measure; 4] = [
        Measure::InverseEntropy,
        Measure::MaxFm,
        Measure::CosineDistance,
        Measure::RelativeEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::InverseEntropy => "inverse_entropy",
            Measure::MaxFm => "max_fm",
            Measure::CosineDistance => "cosine_distance",
            Measure::RelativeEntropy => "relative_entropy",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One score for a (layer, concept, measure) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    pub measure: Measure,
    pub layer: String,
    pub concept: String,
    /// `+inf` only for the inverse entropy of a point mass.
    #[serde(with = "extended_float")]
    pub value: f64,
    pub z_value: Option<f64>,
}

impl MeasureValue {
    /// The concept fell entirely on one unit (infinite inverse entropy).
    pub fn is_point_mass(&self) -> bool {
        self.measure == Measure::InverseEntropy && self.value == f64::INFINITY
    }
}

/// JSON has no infinity; `+inf` travels as the string `"inf"`.
mod extended_float {
    use super::*;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom(format!(
                "unrepresentable value {v}"
            )))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected value `{t}`"))),
        }
    }
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain(format!("{name} is empty")));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Domain(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Domain(format!("{name} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            expected: q.len(),
            actual: p.len(),
        });
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")
}

/// `1 / H(s)`; a point mass has zero entropy and scores `+inf`.
pub fn inverse_entropy(s: &[f64]) -> Result<f64> {
    check_distribution(s, "distribution")?;
    let entropy: f64 = -s
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    if entropy <= 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(1.0 / entropy)
    }
}

/// Best per-unit F-measure, treating each unit as a retriever of the concept.
pub fn max_fmeasure(concept: &FrequencyMap, base: &FrequencyMap) -> Result<f64> {
    if !concept.same_grid(base) {
        return Err(Error::Shape {
            expected: base.counts().len(),
            actual: concept.counts().len(),
        });
    }
    if concept.total() > base.total() {
        return Err(Error::Consistency(format!(
            "concept total {} exceeds base total {}",
            concept.total(),
            base.total()
        )));
    }
    let concept_total = concept.total() as f64;
    let mut best = 0.0f64;
    for (unit, (&c, &b)) in concept.counts().iter().zip(base.counts()).enumerate() {
        if c > b {
            return Err(Error::Consistency(format!(
                "unit {unit}: concept count {c} exceeds base count {b}"
            )));
        }
        if c == 0 {
            continue;
        }
        let precision = c as f64 / b as f64;
        let recall = c as f64 / concept_total;
        let f = 2.0 * precision * recall / (precision + recall);
        best = best.max(f);
    }
    Ok(best)
}

/// `1 - cos(p, q)` between two distributions over the same units.
pub fn cosine_distance_measure(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nq = q.iter().map(|b| b * b).sum::<f64>().sqrt();
    if np == 0.0 || nq == 0.0 {
        return Err(Error::Domain("zero vector".into()));
    }
    Ok((1.0 - dot / (np * nq)).max(0.0))
}

/// KL divergence `D(p || q)` after smoothing both sides with `epsilon`.
pub fn relative_entropy(p: &[f64], q: &[f64], epsilon: f64) -> Result<f64> {
    check_pair(p, q)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let norm = 1.0 + p.len() as f64 * epsilon;
    let kl: f64 = p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let ps = (pi + epsilon) / norm;
            let qs = (qi + epsilon) / norm;
            ps * (ps / qs).ln()
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Z-scores under the population standard deviation; all zeros if constant.
pub fn standardize(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 values to standardize, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot standardize non-finite values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - mean) / std).collect())
}

/// All four measures for one concept map against its layer's base map.
pub fn score_pair(concept: &FrequencyMap, base: &FrequencyMap, epsilon: f64) -> Result<[f64; 4]> {
    let p = concept.probabilities()?;
    let q = base.probabilities()?;
    if p.len() != q.len() {
        return Err(Error::Shape {
            expected: q.len(),
            actual: p.len(),
        });
    }
    Ok([
        inverse_entropy(&p)?,
        max_fmeasure(concept, base)?,
        cosine_distance_measure(&p, &q)?,
        relative_entropy(&p, &q, epsilon)?,
    ])
}

/// Scores every concept map and attaches z-scores per (measure, concept)
/// across `layers`, which must be in network order.
///
/// Point-mass inverse entropies are left out of the standardization and keep
/// `z_value = None`; so do series with fewer than two finite values.
pub fn score_all(
    layers: &[String],
    base_maps: &[FrequencyMap],
    concept_maps: &[FrequencyMap],
    epsilon: f64,
) -> Result<Vec<MeasureValue>> {
    let mut bases = BTreeMap::new();
    for base in base_maps {
        if base.kind != MapKind::Base {
            return Err(Error::Consistency(format!(
                "map for layer `{}` passed as base is a concept map",
                base.layer_name
            )));
        }
        bases.insert(base.layer_name.as_str(), base);
    }
    let layer_pos: BTreeMap<&str, usize> = layers
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut values = Vec::with_capacity(concept_maps.len() * 4);
    let mut ordered: Vec<&FrequencyMap> = concept_maps.iter().collect();
    for map in &ordered {
        if !layer_pos.contains_key(map.layer_name.as_str()) {
            return Err(Error::Consistency(format!(
                "unknown layer `{}`",
                map.layer_name
            )));
        }
    }
    ordered.sort_by_key(|m| (layer_pos[m.layer_name.as_str()], m.concept.clone()));

    for map in ordered {
        let concept = map.concept.clone().ok_or_else(|| {
            Error::Consistency(format!(
                "base map for `{}` passed as concept map",
                map.layer_name
            ))
        })?;
        let base = bases.get(map.layer_name.as_str()).ok_or_else(|| {
            Error::Consistency(format!("no base map for layer `{}`", map.layer_name))
        })?;
        let scores = score_pair(map, base, epsilon)
            .map_err(|e| e.context(format!("layer `{}`, concept `{concept}`", map.layer_name)))?;
        for (measure, value) in Measure::ALL.into_iter().zip(scores) {
            values.push(MeasureValue {
                measure,
                layer: map.layer_name.clone(),
                concept: concept.clone(),
                value,
                z_value: None,
            });
        }
    }

    let mut series: BTreeMap<(Measure, &str), Vec<usize>> = BTreeMap::new();
    for (i, v) in values.iter().enumerate() {
        if v.value.is_finite() {
            series
                .entry((v.measure, v.concept.as_str()))
                .or_default()
                .push(i);
        }
    }
    let mut z_updates = Vec::new();
    for indices in series.values() {
        if indices.len() < 2 {
            continue;
        }
        let raw: Vec<f64> = indices.iter().map(|&i| values[i].value).collect();
        for (&i, z) in indices.iter().zip(standardize(&raw)?) {
            z_updates.push((i, z));
        }
    }
    for (i, z) in z_updates {
        values[i].z_value = Some(z);
    }
    Ok(values)
}
