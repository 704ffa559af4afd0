//! Dense `C×W×H` arrays: explained images and saliency maps.
//!
//! Storage is row-major over `(c, w, h)`: the flat index of `(c, w, h)` is
//! `c·W·H + w·H + h`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 3]", try_from = "[usize; 3]")]
pub struct Shape {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl Shape {
    pub fn new(channels: usize, width: usize, height: usize) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "shape ({channels}, {width}, {height}) has a zero extent"
            )));
        }
        Ok(Shape {
            channels,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.channels * self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: usize, w: usize, h: usize) -> usize {
        (c * self.width + w) * self.height + h
    }

    /// Inverse of [`Shape::index`].
    pub fn coords(&self, flat: usize) -> (usize, usize, usize) {
        let h = flat % self.height;
        let w = (flat / self.height) % self.width;
        let c = flat / (self.height * self.width);
        (c, w, h)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.width, self.height)
    }
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.channels, s.width, s.height]
    }
}

impl TryFrom<[usize; 3]> for Shape {
    type Error = Error;

    fn try_from(v: [usize; 3]) -> Result<Self> {
        Shape::new(v[0], v[1], v[2])
    }
}

/// The sample being explained.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f64>,
}

impl Image {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Image { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Image {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, w: usize, h: usize) -> f64 {
        self.data[self.shape.index(c, w, h)]
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, self.shape));
        }
        Ok(())
    }

    /// Entrywise (Hadamard) product with `mask`.
    pub fn hadamard(&self, mask: &[f64]) -> Result<Image> {
        if mask.len() != self.data.len() {
            return Err(Error::shape(self.data.len(), mask.len()));
        }
        let data = self.data.iter().zip(mask).map(|(a, m)| a * m).collect();
        Ok(Image {
            shape: self.shape,
            data,
        })
    }
}

/// Which procedure produced a saliency map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapSource {
    Traditional,
    Manifold,
    Fused,
    BaselineMethod,
}

/// Attribution scores shaped like the explained image.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    shape: Shape,
    values: Vec<f64>,
    source: MapSource,
    total: f64,
}

impl SaliencyMap {
    pub fn new(shape: Shape, values: Vec<f64>, source: MapSource) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", values.len()),
            ));
        }
        let total = values.iter().sum();
        Ok(SaliencyMap {
            shape,
            values,
            source,
            total,
        })
    }

    pub fn zeros(shape: Shape, source: MapSource) -> Self {
        SaliencyMap {
            shape,
            values: vec![0.0; shape.len()],
            source,
            total: 0.0,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn source(&self) -> MapSource {
        self.source
    }

    pub fn with_source(mut self, source: MapSource) -> Self {
        self.source = source;
        self
    }

    /// Sum of all entries, recorded at construction.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Euclidean distance between two maps of the same shape.
    pub fn l2_distance(&self, other: &SaliencyMap) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(self.shape, other.shape));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}
