//! Toy residual-stream transformer.
//!
//! Each layer updates every position `n` as
//!
//! ```text
//! r_n ← r_n + Σ_h Attn_h(LN(r_1), …, LN(r_n)) + MLP(LN(r_n))
//! ```
//!
//! with causal softmax attention (query·key scaled by `1/T_eff`) and a
//! single-hidden-layer MLP `out · φ(gain · in · x)`. With one identity head,
//! a zero MLP and no layer norm, the update at the last position is exactly
//! the effective-head context vector of [`crate::dynamics`].

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{softmax, Conversation, DynamicsError, RolloutStep, RolloutTrace};
use crate::geometry::{dot_unchecked, BasinSet, Embedding, GeometryError, Label};
use crate::rng;

/// Variance floor inside layer norm.
pub const LN_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MultilayerError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("matrix {name} is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    Shape {
        name: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("row-major data has {found} values, expected {expected}")]
    DataLength { found: usize, expected: usize },
    #[error("layer norm {name} has length {found}, expected {expected}")]
    LnLength {
        name: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("invalid model: {0}")]
    Invalid(&'static str),
    #[error("token list is empty")]
    NoTokens,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, MultilayerError> {
        if data.len() != rows * cols {
            return Err(MultilayerError::DataLength {
                found: data.len(),
                expected: rows * cols,
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Entries drawn from `N(0, scale²)`.
    pub fn random<R: rand_core::RngCore>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| scale * rng::normal(rng)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn plus(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot_unchecked(row, x))
            .collect()
    }

    fn check(&self, name: &'static str, expected_rows: usize, expected_cols: usize) -> Result<(), MultilayerError> {
        if self.rows != expected_rows || self.cols != expected_cols || self.data.len() != self.rows * self.cols {
            return Err(MultilayerError::Shape {
                name,
                rows: self.rows,
                cols: self.cols,
                expected_rows,
                expected_cols,
            });
        }
        Ok(())
    }
}

/// Smooth saturating MLP nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Tanh,
    /// `x / (1 + |x|)`
    Softsign,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => libm::tanh(x),
            Nonlinearity::Softsign => x / (1.0 + libm::fabs(x)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

impl HeadParams {
    pub fn identity(d: usize) -> Self {
        HeadParams {
            query: Matrix::identity(d),
            key: Matrix::identity(d),
            value: Matrix::identity(d),
        }
    }

    pub fn zeros(d: usize) -> Self {
        HeadParams {
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden_width: usize,
    /// `hidden_width × d`
    pub in_map: Matrix,
    /// `d × hidden_width`
    pub out_map: Matrix,
    pub gain: f64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
}

impl Mlp {
    pub fn zeros(d: usize, hidden_width: usize) -> Self {
        Mlp {
            hidden_width,
            in_map: Matrix::zeros(hidden_width, d),
            out_map: Matrix::zeros(d, hidden_width),
            gain: 1.0,
            nonlinearity: Nonlinearity::Tanh,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = self
            .in_map
            .apply(x)
            .into_iter()
            .map(|h| self.nonlinearity.apply(self.gain * h))
            .collect();
        self.out_map.apply(&hidden)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub heads: Vec<HeadParams>,
    pub mlp: Mlp,
    pub ln_enabled: bool,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
}

impl LayerParams {
    /// One identity head, zero MLP, layer norm off.
    pub fn effective_head(d: usize) -> Self {
        LayerParams {
            heads: alloc::vec![HeadParams::identity(d)],
            mlp: Mlp::zeros(d, d),
            ln_enabled: false,
            ln_gain: alloc::vec![1.0; d],
            ln_bias: alloc::vec![0.0; d],
        }
    }

    /// Every map zero; the layer is the identity on the residual stream.
    pub fn zeros(d: usize) -> Self {
        LayerParams {
            heads: alloc::vec![HeadParams::zeros(d)],
            ..LayerParams::effective_head(d)
        }
    }

    pub fn validate(&self, d: usize) -> Result<(), MultilayerError> {
        if self.heads.is_empty() {
            return Err(MultilayerError::Invalid("layer has no attention heads"));
        }
        for h in &self.heads {
            h.query.check("query", d, d)?;
            h.key.check("key", d, d)?;
            h.value.check("value", d, d)?;
        }
        let w = self.mlp.hidden_width;
        self.mlp.in_map.check("mlp.in_map", w, d)?;
        self.mlp.out_map.check("mlp.out_map", d, w)?;
        if !(self.mlp.gain >= 0.0 && self.mlp.gain.is_finite()) {
            return Err(MultilayerError::Invalid("mlp gain must be finite and non-negative"));
        }
        for (name, v) in [("ln_gain", &self.ln_gain), ("ln_bias", &self.ln_bias)] {
            if v.len() != d {
                return Err(MultilayerError::LnLength {
                    name,
                    found: v.len(),
                    expected: d,
                });
            }
        }
        Ok(())
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if !self.ln_enabled {
            return x.to_vec();
        }
        layer_norm(x)
            .into_iter()
            .zip(self.ln_gain.iter().zip(&self.ln_bias))
            .map(|(z, (g, b))| g * z + b)
            .collect()
    }
}

/// Mean subtraction and variance normalisation, without gain or bias.
pub fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / libm::sqrt(var + LN_EPSILON);
    x.iter().map(|v| (v - mean) * inv).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTransformer {
    pub dimension: usize,
    pub t_eff: f64,
    pub layers: Vec<LayerParams>,
}

impl ToyTransformer {
    pub fn new(dimension: usize, t_eff: f64, layers: Vec<LayerParams>) -> Result<Self, MultilayerError> {
        let model = ToyTransformer {
            dimension,
            t_eff,
            layers,
        };
        model.validate()?;
        Ok(model)
    }

    /// A single identity head with nothing else: reduces to the effective head.
    pub fn effective_head(dimension: usize, t_eff: f64) -> Self {
        ToyTransformer {
            dimension,
            t_eff,
            layers: alloc::vec![LayerParams::effective_head(dimension)],
        }
    }

    pub fn zeros(dimension: usize, n_layers: usize, t_eff: f64) -> Self {
        ToyTransformer {
            dimension,
            t_eff,
            layers: (0..n_layers).map(|_| LayerParams::zeros(dimension)).collect(),
        }
    }

    /// Seeded random parameters: `n_heads` heads with `N(0, scale²)` maps,
    /// a tanh MLP of width `hidden`, and layer norm enabled.
    pub fn random(dimension: usize, n_layers: usize, n_heads: usize, hidden: usize, scale: f64, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let d = dimension;
        let layers = (0..n_layers)
            .map(|_| LayerParams {
                heads: (0..n_heads)
                    .map(|_| HeadParams {
                        query: Matrix::random(d, d, scale, &mut r),
                        key: Matrix::random(d, d, scale, &mut r),
                        value: Matrix::random(d, d, scale, &mut r),
                    })
                    .collect(),
                mlp: Mlp {
                    hidden_width: hidden,
                    in_map: Matrix::random(hidden, d, scale, &mut r),
                    out_map: Matrix::random(d, hidden, scale, &mut r),
                    gain: 1.0,
                    nonlinearity: Nonlinearity::Tanh,
                },
                ln_enabled: true,
                ln_gain: (0..d).map(|_| 1.0 + 0.1 * rng::normal(&mut r)).collect(),
                ln_bias: (0..d).map(|_| 0.1 * rng::normal(&mut r)).collect(),
            })
            .collect();
        ToyTransformer {
            dimension,
            t_eff: 1.0,
            layers,
        }
    }

    pub fn validate(&self) -> Result<(), MultilayerError> {
        if self.dimension == 0 {
            return Err(MultilayerError::Invalid("dimension must be positive"));
        }
        if self.layers.is_empty() {
            return Err(MultilayerError::Invalid("model needs at least one layer"));
        }
        if !(self.t_eff > 0.0 && self.t_eff.is_finite()) {
            return Err(MultilayerError::Invalid("t_eff must be positive and finite"));
        }
        for l in &self.layers {
            l.validate(self.dimension)?;
        }
        Ok(())
    }
}

/// Summed block outputs (attention heads plus MLP) of one layer at position
/// `n`, given the layer inputs at `0..=n`.
fn position_update(inputs: &[Vec<f64>], n: usize, params: &LayerParams, t_eff: f64) -> Vec<f64> {
    let d = inputs[n].len();
    let normed: Vec<Vec<f64>> = inputs[..=n].iter().map(|r| params.normalize(r)).collect();
    let mut out = alloc::vec![0.0; d];
    for head in &params.heads {
        let q = head.query.apply(&normed[n]);
        let logits: Vec<f64> = normed
            .iter()
            .map(|x| dot_unchecked(&q, &head.key.apply(x)) / t_eff)
            .collect();
        let weights = softmax(&logits);
        let mut attn = alloc::vec![0.0; d];
        for (w, x) in weights.iter().zip(&normed) {
            let v = head.value.apply(x);
            for (a, vi) in attn.iter_mut().zip(&v) {
                *a += w * vi;
            }
        }
        for (o, a) in out.iter_mut().zip(&attn) {
            *o += a;
        }
    }
    let m = params.mlp.apply(&normed[n]);
    for (o, mi) in out.iter_mut().zip(&m) {
        *o += mi;
    }
    out
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn layer_output(inputs: &[Vec<f64>], n: usize, params: &LayerParams, t_eff: f64) -> Vec<f64> {
    add(&inputs[n], &position_update(inputs, n, params, t_eff))
}

fn check_tokens(tokens: &[Embedding], d: usize) -> Result<(), MultilayerError> {
    if tokens.is_empty() {
        return Err(MultilayerError::NoTokens);
    }
    for t in tokens {
        if t.dim() != d {
            return Err(GeometryError::DimensionMismatch {
                left: d,
                right: t.dim(),
            }
            .into());
        }
    }
    Ok(())
}

fn to_embeddings(rows: Vec<Vec<f64>>) -> Result<Vec<Embedding>, MultilayerError> {
    rows.into_iter()
        .map(|r| Embedding::new(r).map_err(MultilayerError::from))
        .collect()
}

/// One residual-stream layer applied to every position.
pub fn layer_step(
    residuals: &[Embedding],
    params: &LayerParams,
    t_eff: f64,
) -> Result<Vec<Embedding>, MultilayerError> {
    let d = residuals.first().ok_or(MultilayerError::NoTokens)?.dim();
    check_tokens(residuals, d)?;
    params.validate(d)?;
    let inputs: Vec<Vec<f64>> = residuals.iter().map(|e| e.as_slice().to_vec()).collect();
    let out = (0..inputs.len())
        .map(|n| layer_output(&inputs, n, params, t_eff))
        .collect();
    to_embeddings(out)
}

/// All layers in order; returns the final residual stream.
pub fn forward(tokens: &[Embedding], model: &ToyTransformer) -> Result<Vec<Embedding>, MultilayerError> {
    model.validate()?;
    check_tokens(tokens, model.dimension)?;
    let mut stream: Vec<Vec<f64>> = tokens.iter().map(|e| e.as_slice().to_vec()).collect();
    for layer in &model.layers {
        stream = (0..stream.len())
            .map(|n| layer_output(&stream, n, layer, model.t_eff))
            .collect();
    }
    to_embeddings(stream)
}

/// Causal forward pass that appends one token at a time, caching the input
/// of every layer at every earlier position.
struct IncrementalForward<'a> {
    model: &'a ToyTransformer,
    layer_inputs: Vec<Vec<Vec<f64>>>,
}

impl<'a> IncrementalForward<'a> {
    fn new(model: &'a ToyTransformer) -> Self {
        IncrementalForward {
            model,
            layer_inputs: alloc::vec![Vec::new(); model.layers.len()],
        }
    }

    /// Appends `token`; returns its final residual and the sum of all
    /// block outputs added along the way.
    fn push(&mut self, token: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut r = token.to_vec();
        let mut total = alloc::vec![0.0; token.len()];
        for (inputs, layer) in self.layer_inputs.iter_mut().zip(&self.model.layers) {
            inputs.push(r.clone());
            let n = inputs.len() - 1;
            let u = position_update(inputs, n, layer, self.model.t_eff);
            r = add(&r, &u);
            total = add(&total, &u);
        }
        (r, total)
    }
}

/// What `generate_symbols` reads from the last position as its context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Final residual minus the input token: the summed block outputs.
    #[default]
    Update,
    /// The final residual itself.
    Residual,
}

/// Greedy `{B, D}` generation driven by the toy transformer.
pub fn generate_symbols(
    prompt: &Conversation,
    model: &ToyTransformer,
    basins: &BasinSet,
    steps: usize,
    readout: Readout,
) -> Result<RolloutTrace, MultilayerError> {
    model.validate()?;
    if prompt.is_empty() {
        return Err(MultilayerError::NoTokens);
    }
    let tokens: Vec<Embedding> = prompt.vectors().cloned().collect();
    check_tokens(&tokens, model.dimension)?;
    let (b, d) = basins.tipping_pair()?;
    let candidates = [Label::b(), Label::d()];

    let mut fwd = IncrementalForward::new(model);
    for t in &tokens[..tokens.len() - 1] {
        fwd.push(t.as_slice());
    }
    let mut last_token = tokens[tokens.len() - 1].as_slice().to_vec();

    let mut trace = Vec::with_capacity(steps);
    let mut hit = None;
    for t in 0..steps {
        let (residual, update) = fwd.push(&last_token);
        let ctx = match readout {
            Readout::Update => update,
            Readout::Residual => residual,
        };
        let context = Embedding::new(ctx)?;
        let sb = dot_unchecked(context.as_slice(), b.as_slice());
        let sd = dot_unchecked(context.as_slice(), d.as_slice());
        if hit.is_none() && sd >= sb {
            hit = Some(t);
        }
        let chosen = if sd >= sb { Label::d() } else { Label::b() };
        let centroid = if chosen.is_d() { d } else { b };
        last_token = centroid.as_slice().to_vec();
        trace.push(RolloutStep {
            context,
            scores: candidates.iter().cloned().zip([sb, sd]).collect(),
            chosen,
        });
    }
    Ok(RolloutTrace {
        steps: trace,
        first_hit: hit,
    })
}
