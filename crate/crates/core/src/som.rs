//! Self-organizing maps with a cosine metric and Mexican-hat neighborhood.
//!
//! Units are addressed as `(row, col)` with `row < height`, `col < width`;
//! the linear index `row * width + col` is used for storage and tie-breaks.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ActivationSet;

/// Weights whose norm falls below this are rescaled to unit length.
pub const NORM_FLOOR: f64 = 1e-12;
/// Weights whose norm grows past this are rescaled to unit length.
pub const NORM_CEILING: f64 = 1e12;

const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    #[default]
    MexicanHat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub width: usize,
    pub height: usize,
    pub sigma0: f64,
    pub learning_rate0: f64,
    pub n_iterations: usize,
    pub seed: u64,
    pub metric: Metric,
    pub neighborhood: Neighborhood,
    /// When false, the neighborhood radius stays at `sigma0` for the whole run.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub decay_sigma: bool,
}

fn yes() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

impl Default for SomConfig {
    fn default() -> Self {
        Self {
            width: 15,
            height: 15,
            sigma0: 8.0,
            learning_rate0: 0.5,
            n_iterations: 10_000,
            seed: 0,
            metric: Metric::Cosine,
            neighborhood: Neighborhood::MexicanHat,
            decay_sigma: true,
        }
    }
}

impl SomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid must be at least 1x1, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma0 must be > 0, got {}",
                self.sigma0
            )));
        }
        if !(self.learning_rate0 > 0.0 && self.learning_rate0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate0 must be > 0, got {}",
                self.learning_rate0
            )));
        }
        if self.n_iterations == 0 {
            return Err(Error::InvalidConfig(
                "n_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.width * self.height
    }

    fn decay(&self, initial: f64, t: usize) -> f64 {
        initial / (1.0 + 2.0 * t as f64 / self.n_iterations as f64)
    }

    /// Learning rate at step `t`.
    pub fn learning_rate(&self, t: usize) -> f64 {
        self.decay(self.learning_rate0, t)
    }

    /// Neighborhood radius at step `t`.
    pub fn sigma(&self, t: usize) -> f64 {
        if self.decay_sigma {
            self.decay(self.sigma0, t)
        } else {
            self.sigma0
        }
    }
}

/// `1 - cos(x, w)`, with 1 returned when either vector has zero norm.
pub fn cosine_dist(x: &[f64], w: &[f64]) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::Shape {
            expected: w.len(),
            actual: x.len(),
        });
    }
    Ok(cosine_dist_unchecked(x, w))
}

fn cosine_dist_unchecked(x: &[f64], w: &[f64]) -> f64 {
    let (mut dot, mut xx, mut ww) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(w) {
        dot += a * b;
        xx += a * a;
        ww += b * b;
    }
    if xx == 0.0 || ww == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (xx.sqrt() * ww.sqrt())).clamp(0.0, 2.0)
}

/// Mexican-hat weights over a `height x width` grid, flattened row-major.
///
/// A unit at squared grid distance `p` from `center` gets
/// `exp(-p / 2σ²) * (1 - p / σ²)`: 1 at the center, 0 at `p = σ²`,
/// negative beyond.
pub fn neighborhood_mexican_hat(
    width: usize,
    height: usize,
    center: (usize, usize),
    sigma: f64,
) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    let s2 = sigma * sigma;
    let mut h = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            let dr = row as f64 - center.0 as f64;
            let dc = col as f64 - center.1 as f64;
            let p = dr * dr + dc * dc;
            h.push((-p / (2.0 * s2)).exp() * (1.0 - p / s2));
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomGrid {
    config: SomConfig,
    dim: usize,
    weights: Vec<f64>,
}

impl SomGrid {
    /// Uniform `[-1, 1)` weights, each scaled to unit norm.
    pub fn new(config: SomConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidDimension(
                "input dimension must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = Vec::with_capacity(config.n_units() * dim);
        for _ in 0..config.n_units() {
            loop {
                let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = l2(&w);
                if norm >= NORM_FLOOR {
                    weights.extend(w.iter().map(|v| v / norm));
                    break;
                }
            }
        }
        Ok(Self {
            config,
            dim,
            weights,
        })
    }

    /// Builds a grid from explicit weights (row-major, `dim` values per unit).
    pub fn from_weights(config: SomConfig, dim: usize, weights: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidDimension(
                "input dimension must be at least 1".into(),
            ));
        }
        let expected = config.n_units() * dim;
        if weights.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: weights.len(),
            });
        }
        let grid = Self {
            config,
            dim,
            weights,
        };
        for unit in 0..grid.n_units() {
            let w = grid.weight(unit);
            if w.iter().any(|v| !v.is_finite()) || l2(w) < NORM_FLOOR {
                return Err(Error::InvalidInput(format!(
                    "unit {unit} has a non-finite or zero-norm weight"
                )));
            }
        }
        Ok(grid)
    }

    pub fn config(&self) -> &SomConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn n_units(&self) -> usize {
        self.config.n_units()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight vector of the unit at linear index `unit`.
    pub fn weight(&self, unit: usize) -> &[f64] {
        &self.weights[unit * self.dim..(unit + 1) * self.dim]
    }

    pub fn coord(&self, unit: usize) -> (usize, usize) {
        (unit / self.config.width, unit % self.config.width)
    }

    pub fn linear(&self, (row, col): (usize, usize)) -> usize {
        row * self.config.width + col
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "input vector has non-finite entries".into(),
            ));
        }
        Ok(())
    }

    /// Linear index of the best matching unit; the lowest index wins ties.
    pub fn bmu_index(&self, x: &[f64]) -> Result<usize> {
        self.check_input(x)?;
        Ok(self.bmu_unchecked(x))
    }

    fn bmu_unchecked(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (unit, w) in self.weights.chunks_exact(self.dim).enumerate() {
            let d = cosine_dist_unchecked(x, w);
            if d < best_dist {
                best = unit;
                best_dist = d;
            }
        }
        best
    }

    /// Grid coordinate `(row, col)` of the best matching unit.
    pub fn bmu(&self, x: &[f64]) -> Result<(usize, usize)> {
        self.bmu_index(x).map(|u| self.coord(u))
    }

    /// One competitive-learning update with input `x` at step `t`.
    pub fn train_step(&mut self, x: &[f64], t: usize) -> Result<()> {
        self.check_input(x)?;
        if t >= self.config.n_iterations {
            return Err(Error::InvalidInput(format!(
                "step {t} beyond n_iterations = {}",
                self.config.n_iterations
            )));
        }
        self.step_unchecked(x, t);
        Ok(())
    }

    fn step_unchecked(&mut self, x: &[f64], t: usize) {
        let eta = self.config.learning_rate(t);
        let sigma = self.config.sigma(t);
        let winner = self.coord(self.bmu_unchecked(x));
        let h = neighborhood_mexican_hat(self.config.width, self.config.height, winner, sigma)
            .expect("sigma stays positive under decay");
        let dim = self.dim;
        for (w, &hu) in self.weights.chunks_exact_mut(dim).zip(&h) {
            let rate = eta * hu;
            if rate == 0.0 {
                continue;
            }
            for (wi, xi) in w.iter_mut().zip(x) {
                *wi += rate * (xi - *wi);
            }
            let norm = l2(w);
            if !(NORM_FLOOR..=NORM_CEILING).contains(&norm) {
                renormalize(w, norm);
            }
        }
    }

    /// Runs `n_iterations` steps on examples drawn uniformly with the grid's seed.
    pub fn train(&mut self, data: &ActivationSet) -> Result<()> {
        let rows = self.checked_rows(data)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(TRAIN_STREAM);
        for t in 0..self.config.n_iterations {
            let i = rng.gen_range(0..rows.len());
            self.step_unchecked(&rows[i], t);
        }
        Ok(())
    }

    /// Mean cosine distance from each example to its best matching unit.
    pub fn quantization_error(&self, data: &ActivationSet) -> Result<f64> {
        let rows = self.checked_rows(data)?;
        let total: f64 = rows
            .par_iter()
            .map(|x| cosine_dist_unchecked(x, self.weight(self.bmu_unchecked(x))))
            .collect::<Vec<_>>()
            .iter()
            .sum();
        Ok(total / rows.len() as f64)
    }

    /// Best matching unit of every example, in example order.
    pub fn bmu_all(&self, data: &ActivationSet) -> Result<Vec<usize>> {
        let rows = self.checked_rows(data)?;
        Ok(rows.par_iter().map(|x| self.bmu_unchecked(x)).collect())
    }

    fn checked_rows(&self, data: &ActivationSet) -> Result<Vec<Vec<f64>>> {
        if data.rank() != 2 {
            return Err(Error::InvalidInput(format!(
                "expected aggregated rank-2 activations, got rank {}",
                data.rank()
            )));
        }
        if data.dim() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: data.dim(),
            });
        }
        data.rows()
            .map(|r| {
                let x: Vec<f64> = r.iter().map(|&v| v as f64).collect();
                self.check_input(&x).map(|_| x)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = SomFile {
            format: "som".into(),
            version: 1,
            width: self.config.width,
            height: self.config.height,
            dim: self.dim,
            sigma0: self.config.sigma0,
            learning_rate0: self.config.learning_rate0,
            n_iterations: self.config.n_iterations,
            seed: self.config.seed,
            metric: self.config.metric,
            neighborhood: self.config.neighborhood,
            decay_sigma: self.config.decay_sigma,
            weights: self
                .weights
                .chunks_exact(self.config.width * self.dim)
                .map(|row| row.chunks_exact(self.dim).map(<[f64]>::to_vec).collect())
                .collect(),
        };
        serde_json::to_string(&file).expect("SOM serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SomFile = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("invalid SOM document: {e}")))?;
        if file.format != "som" || file.version != 1 {
            return Err(Error::Format(format!(
                "expected format `som` version 1, got `{}` version {}",
                file.format, file.version
            )));
        }
        let config = SomConfig {
            width: file.width,
            height: file.height,
            sigma0: file.sigma0,
            learning_rate0: file.learning_rate0,
            n_iterations: file.n_iterations,
            seed: file.seed,
            metric: file.metric,
            neighborhood: file.neighborhood,
            decay_sigma: file.decay_sigma,
        };
        if file.weights.len() != file.height || file.weights.iter().any(|r| r.len() != file.width) {
            return Err(Error::Format(
                "weights do not match the declared grid".into(),
            ));
        }
        let mut weights = Vec::with_capacity(config.n_units() * file.dim);
        for unit in file.weights.into_iter().flatten() {
            if unit.len() != file.dim {
                return Err(Error::Format(
                    "weight vector length differs from dim".into(),
                ));
            }
            weights.extend(unit);
        }
        SomGrid::from_weights(config, file.dim, weights)
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
struct SomFile {
    format: String,
    version: u32,
    width: usize,
    height: usize,
    dim: usize,
    sigma0: f64,
    learning_rate0: f64,
    n_iterations: usize,
    seed: u64,
    metric: Metric,
    neighborhood: Neighborhood,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    decay_sigma: bool,
    weights: Vec<Vec<Vec<f64>>>,
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn renormalize(w: &mut [f64], norm: f64) {
    if norm.is_finite() && norm > 0.0 {
        w.iter_mut().for_each(|v| *v /= norm);
    } else {
        // Collapsed to zero or overflowed: fall back to the all-ones direction.
        let u = 1.0 / (w.len() as f64).sqrt();
        w.iter_mut().for_each(|v| *v = u);
    }
}
