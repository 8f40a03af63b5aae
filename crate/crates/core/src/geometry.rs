//! Embedding vectors, basin centroids, and the alignment metrics the rest of
//! the crate is built on.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used when checking a stored centroid against the mean
/// of its phrase embeddings.
pub const CENTROID_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: left operand has {left} components, right operand has {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding must have at least one component")]
    EmptyVector,
    #[error("embedding component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("cannot take the centroid of an empty list of embeddings")]
    EmptyCentroid,
    #[error("invalid basin label {0:?}: expected [A-Z][A-Za-z0-9_]* with an optional trailing '+' or '-'")]
    InvalidLabel(String),
    #[error("basin {0} is missing")]
    MissingBasin(Label),
    #[error("basin {label}: {what} has dimension {found}, expected {expected}")]
    BasinDimension {
        label: Label,
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("basin {label}: stored centroid differs from the mean of its phrases (relative error {relative_error:e})")]
    CentroidMismatch { label: Label, relative_error: f64 },
    #[error("basin set dimension must be at least 1")]
    ZeroDimension,
}

/// A real embedding vector with finite components.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(components: Vec<f64>) -> Result<Self, GeometryError> {
        if components.is_empty() {
            return Err(GeometryError::EmptyVector);
        }
        if let Some((index, &value)) = components.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            return Err(GeometryError::NonFinite { index, value });
        }
        Ok(Self(components))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self(alloc::vec![0.0; dim])
    }

    /// Builds an embedding from a fixed-size array. Panics on non-finite input.
    pub fn from_array<const N: usize>(components: [f64; N]) -> Self {
        Self::new(components.to_vec()).expect("finite, non-empty components")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64, GeometryError> {
        dot(self, other)
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot_unchecked(&self.0, &self.0))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding(self.0.iter().map(|x| x * factor).collect())
    }

    pub fn sub(&self, other: &Embedding) -> Result<Embedding, GeometryError> {
        check_dims(self.dim(), other.dim())?;
        Ok(Embedding(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn add(&self, other: &Embedding) -> Result<Embedding, GeometryError> {
        check_dims(self.dim(), other.dim())?;
        Ok(Embedding(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect()))
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = GeometryError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::new(v)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

fn check_dims(left: usize, right: usize) -> Result<(), GeometryError> {
    if left != right {
        Err(GeometryError::DimensionMismatch { left, right })
    } else {
        Ok(())
    }
}

/// Sequential left-to-right sum of products. Callers guarantee equal length.
pub(crate) fn dot_unchecked(u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in u.iter().zip(v) {
        acc += a * b;
    }
    acc
}

/// Standard inner product, summed sequentially from the first component.
pub fn dot(u: &Embedding, v: &Embedding) -> Result<f64, GeometryError> {
    check_dims(u.dim(), v.dim())?;
    Ok(dot_unchecked(&u.0, &v.0))
}

/// Cosine similarity, or `None` when either vector has zero norm.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<Option<f64>, GeometryError> {
    let uv = dot(u, v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Ok(None);
    }
    Ok(Some(uv / (nu * nv)))
}

/// Componentwise arithmetic mean.
pub fn centroid(embeddings: &[Embedding]) -> Result<Embedding, GeometryError> {
    let first = embeddings.first().ok_or(GeometryError::EmptyCentroid)?;
    let dim = first.dim();
    let mut sum = alloc::vec![0.0; dim];
    for e in embeddings {
        check_dims(dim, e.dim())?;
        for (s, x) in sum.iter_mut().zip(&e.0) {
            *s += x;
        }
    }
    let n = embeddings.len() as f64;
    Ok(Embedding(sum.into_iter().map(|s| s / n).collect()))
}

/// Basin label such as `A`, `B`, `D`, `C+` or `Flat_earth`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(s: &str) -> Result<Self, GeometryError> {
        if is_valid_label(s) {
            Ok(Label(s.to_string()))
        } else {
            Err(GeometryError::InvalidLabel(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn b() -> Self {
        Label("B".to_string())
    }

    pub fn d() -> Self {
        Label("D".to_string())
    }

    pub fn is_d(&self) -> bool {
        self.0 == "D"
    }
}

fn is_valid_label(s: &str) -> bool {
    let body = s.strip_suffix(['+', '-']).unwrap_or(s);
    let mut chars = body.chars();
    match chars.next() {
        Some(c) if c.is_ascii_uppercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Label {
    type Error = GeometryError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if is_valid_label(&s) {
            Ok(Label(s))
        } else {
            Err(GeometryError::InvalidLabel(s))
        }
    }
}

impl From<Label> for String {
    fn from(l: Label) -> Self {
        l.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phrase {
    pub text: String,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basin {
    pub centroid: Embedding,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phrases: Vec<Phrase>,
}

impl Basin {
    pub fn from_centroid(centroid: Embedding) -> Self {
        Basin {
            centroid,
            phrases: Vec::new(),
        }
    }

    pub fn from_phrases(phrases: Vec<Phrase>) -> Result<Self, GeometryError> {
        let embeddings: Vec<Embedding> = phrases.iter().map(|p| p.embedding.clone()).collect();
        let centroid = centroid(&embeddings)?;
        Ok(Basin { centroid, phrases })
    }

    pub fn phrase_embeddings(&self) -> Vec<Embedding> {
        self.phrases.iter().map(|p| p.embedding.clone()).collect()
    }
}

/// Named basin centroids sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinSet {
    pub dimension: usize,
    pub basins: BTreeMap<Label, Basin>,
}

impl BasinSet {
    pub fn new(dimension: usize) -> Self {
        BasinSet {
            dimension,
            basins: BTreeMap::new(),
        }
    }

    /// Convenience constructor from `(label, centroid)` pairs.
    pub fn from_centroids<'a, I>(centroids: I) -> Result<Self, GeometryError>
    where
        I: IntoIterator<Item = (&'a str, Embedding)>,
    {
        let mut iter = centroids.into_iter().peekable();
        let dimension = iter.peek().map(|(_, e)| e.dim()).ok_or(GeometryError::ZeroDimension)?;
        let mut set = BasinSet::new(dimension);
        for (label, c) in iter {
            set.insert(Label::new(label)?, Basin::from_centroid(c))?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, label: Label, basin: Basin) -> Result<(), GeometryError> {
        self.check_basin(&label, &basin)?;
        self.basins.insert(label, basin);
        Ok(())
    }

    pub fn get(&self, label: &Label) -> Option<&Basin> {
        self.basins.get(label)
    }

    pub fn centroid(&self, label: &Label) -> Result<&Embedding, GeometryError> {
        self.basins
            .get(label)
            .map(|b| &b.centroid)
            .ok_or_else(|| GeometryError::MissingBasin(label.clone()))
    }

    pub fn lookup(&self, label: &str) -> Result<&Embedding, GeometryError> {
        self.centroid(&Label::new(label)?)
    }

    /// The `(B, D)` centroid pair required by every tipping analysis.
    pub fn tipping_pair(&self) -> Result<(&Embedding, &Embedding), GeometryError> {
        Ok((self.centroid(&Label::b())?, self.centroid(&Label::d())?))
    }

    pub fn labels(&self) -> impl Iterator<Item = &Label> {
        self.basins.keys()
    }

    fn check_basin(&self, label: &Label, basin: &Basin) -> Result<(), GeometryError> {
        let expected = self.dimension;
        if basin.centroid.dim() != expected {
            return Err(GeometryError::BasinDimension {
                label: label.clone(),
                what: "centroid",
                found: basin.centroid.dim(),
                expected,
            });
        }
        for p in &basin.phrases {
            if p.embedding.dim() != expected {
                return Err(GeometryError::BasinDimension {
                    label: label.clone(),
                    what: "phrase embedding",
                    found: p.embedding.dim(),
                    expected,
                });
            }
        }
        if !basin.phrases.is_empty() {
            let mean = centroid(&basin.phrase_embeddings())?;
            let diff = mean.sub(&basin.centroid)?.norm();
            let scale = mean.norm().max(basin.centroid.norm()).max(f64::MIN_POSITIVE);
            let relative_error = diff / scale;
            if relative_error > CENTROID_TOLERANCE && diff > CENTROID_TOLERANCE * 1e-3 {
                return Err(GeometryError::CentroidMismatch {
                    label: label.clone(),
                    relative_error,
                });
            }
        }
        Ok(())
    }

    /// Full consistency check: positive dimension, per-basin dimensions,
    /// centroid/phrase agreement, and presence of `B` and `D`.
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.dimension == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        for (label, basin) in &self.basins {
            self.check_basin(label, basin)?;
        }
        self.tipping_pair()?;
        Ok(())
    }
}

/// Scalar alignment metrics of a reference vector against a basin set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `A·D − A·B`.
    pub delta_raw: f64,
    /// `delta_raw` divided by the largest-magnitude pairwise dot product.
    pub delta_hat: f64,
    /// `cos(A, D) − cos(A, B)`, absent when a zero vector is involved.
    pub delta_cos: Option<f64>,
    pub max_pairwise_dot: f64,
}

/// Alignment of `reference` against the `B`/`D` pair of `basins`.
///
/// The normaliser is the maximum of `|u·v|` over every ordered pair
/// (self-pairs included) drawn from the reference and all basin centroids.
pub fn alignment(reference: &Embedding, basins: &BasinSet) -> Result<AlignmentReport, GeometryError> {
    let (b, d) = basins.tipping_pair()?;
    let a_d = dot(reference, d)?;
    let a_b = dot(reference, b)?;
    let delta_raw = a_d - a_b;

    let mut vectors: Vec<&Embedding> = Vec::with_capacity(basins.basins.len() + 1);
    vectors.push(reference);
    vectors.extend(basins.basins.values().map(|basin| &basin.centroid));
    let mut max_pairwise_dot = 0.0f64;
    for (i, u) in vectors.iter().enumerate() {
        for v in &vectors[i..] {
            max_pairwise_dot = max_pairwise_dot.max(libm::fabs(dot(u, v)?));
        }
    }

    let delta_hat = if max_pairwise_dot > 0.0 {
        delta_raw / max_pairwise_dot
    } else {
        0.0
    };
    let delta_cos = match (cosine(reference, d)?, cosine(reference, b)?) {
        (Some(cd), Some(cb)) => Some(cd - cb),
        _ => None,
    };
    Ok(AlignmentReport {
        delta_raw,
        delta_hat,
        delta_cos,
        max_pairwise_dot,
    })
}
