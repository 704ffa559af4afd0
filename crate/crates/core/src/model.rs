//! Feedforward runtime for the classifier under explanation.
//!
//! A model is a stack of affine layers, each followed by an activation. The
//! same [`LayerStack`] also backs layered codecs, so both share one JSON
//! layer layout:
//!
//! ```json
//! { "weights": [[w00, w01, ...], ...], "bias": [b0, ...], "activation": "relu" }
//! ```
//!
//! `weights` has one row per output unit; a layer computes `W·x + b`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, MapSource, SaliencyMap, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    /// Normalizing output layer; allowed only last.
    #[serde(alias = "softmax-final", alias = "softmax_final")]
    Softmax,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    weights: DMatrix<f64>,
    bias: DVector<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::shape(
                format!("bias of length {}", weights.nrows()),
                format!("length {}", bias.len()),
            ));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Dimension("layer with an empty weight matrix".into()));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Contract("layer parameters must be finite".into()));
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let max = z.max();
    let exp = z.map(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn activate(act: Activation, z: &DVector<f64>) -> DVector<f64> {
    match act {
        Activation::Identity => z.clone(),
        Activation::Relu => z.map(|v| v.max(0.0)),
        Activation::Tanh => z.map(f64::tanh),
        Activation::Softmax => softmax(z),
    }
}

/// Pulls a cotangent on a layer's output back to its pre-activation.
/// `out` is the activation output; relu uses subgradient 0 at exactly 0.
fn activation_vjp(act: Activation, pre: &DVector<f64>, out: &DVector<f64>, cot: &DVector<f64>) -> DVector<f64> {
    match act {
        Activation::Identity => cot.clone(),
        Activation::Relu => cot.zip_map(pre, |g, z| if z > 0.0 { g } else { 0.0 }),
        Activation::Tanh => cot.zip_map(out, |g, y| g * (1.0 - y * y)),
        Activation::Softmax => {
            let dot = cot.dot(out);
            out.zip_map(cot, |s, g| s * (g - dot))
        }
    }
}

/// Jacobian of the activation as a matrix, `out × out`.
fn activation_jacobian(act: Activation, pre: &DVector<f64>, out: &DVector<f64>) -> DMatrix<f64> {
    match act {
        Activation::Identity => DMatrix::identity(out.len(), out.len()),
        Activation::Relu => DMatrix::from_diagonal(&pre.map(|z| if z > 0.0 { 1.0 } else { 0.0 })),
        Activation::Tanh => DMatrix::from_diagonal(&out.map(|y| 1.0 - y * y)),
        Activation::Softmax => DMatrix::from_diagonal(out) - out * out.transpose(),
    }
}

/// Ordered affine+activation layers with chained dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    layers: Vec<Layer>,
}

struct Trace {
    pre: Vec<DVector<f64>>,
    post: Vec<DVector<f64>>,
}

impl LayerStack {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("a layer stack needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    format!("layer {} input size {}", k + 1, pair[0].output_dim()),
                    pair[1].input_dim(),
                ));
            }
        }
        let last = layers.len() - 1;
        if let Some(k) = layers[..last]
            .iter()
            .position(|l| l.activation == Activation::Softmax)
        {
            return Err(Error::Config(format!(
                "softmax activation on layer {k}; it is only allowed on the last layer"
            )));
        }
        Ok(LayerStack { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn ends_in_softmax(&self) -> bool {
        self.layers[self.layers.len() - 1].activation == Activation::Softmax
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!("input of length {}", self.input_dim()), x.len()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = DVector::from_column_slice(x);
        for layer in &self.layers {
            let z = &layer.weights * &h + &layer.bias;
            h = activate(layer.activation, &z);
        }
        Ok(h.data.into())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(DVector::from_column_slice(x));
        for layer in &self.layers {
            let z = &layer.weights * post.last().unwrap() + &layer.bias;
            post.push(activate(layer.activation, &z));
            pre.push(z);
        }
        Trace { pre, post }
    }

    /// Reverse-mode product `cotᵀ·∂out/∂x`. With `skip_final_activation`, the
    /// cotangent applies to the last layer's pre-activation (logits).
    pub fn vjp(&self, x: &[f64], cotangent: &[f64], skip_final_activation: bool) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if cotangent.len() != self.output_dim() {
            return Err(Error::shape(self.output_dim(), cotangent.len()));
        }
        let trace = self.trace(x);
        let mut g = DVector::from_column_slice(cotangent);
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let last = k + 1 == self.layers.len();
            if !(last && skip_final_activation) {
                g = activation_vjp(layer.activation, &trace.pre[k], &trace.post[k + 1], &g);
            }
            g = layer.weights.tr_mul(&g);
        }
        Ok(g.data.into())
    }

    /// Full Jacobian `∂out/∂x`, shape `output_dim × input_dim`.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let mut jac = DMatrix::identity(self.input_dim(), self.input_dim());
        for (k, layer) in self.layers.iter().enumerate() {
            let affine = &layer.weights * jac;
            jac = activation_jacobian(layer.activation, &trace.pre[k], &trace.post[k + 1]) * affine;
        }
        Ok(jac)
    }
}

/// Per-class output of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceVector(pub Vec<f64>);

impl ConfidenceVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// What an input gradient differentiates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientTarget {
    /// The model output, i.e. softmax confidences when the model ends in softmax.
    #[default]
    Confidence,
    /// The last layer's pre-activation.
    Logit,
}

/// The classifier `f` being explained.
#[derive(Clone, Debug, PartialEq)]
pub struct BlackBoxModel {
    input_shape: Shape,
    stack: LayerStack,
}

impl BlackBoxModel {
    pub fn new(input_shape: Shape, layers: Vec<Layer>) -> Result<Self> {
        let stack = LayerStack::new(layers)?;
        if stack.input_dim() != input_shape.len() {
            return Err(Error::shape(
                format!("first layer input size {} (= C·W·H of {input_shape})", input_shape.len()),
                stack.input_dim(),
            ));
        }
        Ok(BlackBoxModel { input_shape, stack })
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.stack.output_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        self.stack.layers()
    }

    pub fn forward(&self, image: &Image) -> Result<ConfidenceVector> {
        image.ensure_shape(self.input_shape)?;
        self.stack.forward(image.as_slice()).map(ConfidenceVector)
    }

    /// Confidence of one class.
    pub fn score(&self, image: &Image, class_index: usize) -> Result<f64> {
        self.check_class(class_index)?;
        Ok(self.forward(image)?.get(class_index))
    }

    fn check_class(&self, class_index: usize) -> Result<()> {
        if class_index >= self.num_classes() {
            return Err(Error::IndexOutOfRange {
                what: "class",
                index: class_index,
                len: self.num_classes(),
            });
        }
        Ok(())
    }

    pub fn input_gradient(
        &self,
        image: &Image,
        class_index: usize,
        target: GradientTarget,
    ) -> Result<SaliencyMap> {
        image.ensure_shape(self.input_shape)?;
        self.check_class(class_index)?;
        let mut cot = vec![0.0; self.num_classes()];
        cot[class_index] = 1.0;
        let skip = target == GradientTarget::Logit && self.stack.ends_in_softmax();
        let grad = self.stack.vjp(image.as_slice(), &cot, skip)?;
        SaliencyMap::new(self.input_shape, grad, MapSource::BaselineMethod)
    }

    /// Input pixels the model cannot see: every first-layer weight reading
    /// them is zero.
    pub fn null_inputs(&self) -> Vec<bool> {
        let w = self.stack.layers()[0].weights();
        (0..w.ncols())
            .map(|j| w.column(j).iter().all(|&v| v == 0.0))
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::format("model", e))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct LayerFile {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl LayerFile {
    pub(crate) fn into_layer(self, position: usize) -> Result<Layer> {
        let rows = self.weights.len();
        let cols = self.weights.first().map_or(0, Vec::len);
        if let Some(r) = self.weights.iter().position(|row| row.len() != cols) {
            return Err(Error::format(
                format!("layers[{position}].weights[{r}]"),
                format!("expected {cols} columns"),
            ));
        }
        let weights = DMatrix::from_row_iterator(rows, cols, self.weights.into_iter().flatten());
        Layer::new(weights, DVector::from_vec(self.bias), self.activation).map_err(|e| match e {
            Error::ShapeMismatch { expected, actual } => Error::format(
                format!("layers[{position}].bias"),
                format!("expected {expected}, got {actual}"),
            ),
            other => other,
        })
    }
}

impl From<&Layer> for LayerFile {
    fn from(l: &Layer) -> Self {
        LayerFile {
            weights: l.weights.row_iter().map(|r| r.iter().copied().collect()).collect(),
            bias: l.bias.iter().copied().collect(),
            activation: l.activation,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelFile {
    input_shape: Shape,
    layers: Vec<LayerFile>,
}

impl TryFrom<ModelFile> for BlackBoxModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        let layers = file
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| l.into_layer(k))
            .collect::<Result<Vec<_>>>()?;
        BlackBoxModel::new(file.input_shape, layers)
    }
}

impl From<&BlackBoxModel> for ModelFile {
    fn from(m: &BlackBoxModel) -> Self {
        ModelFile {
            input_shape: m.input_shape,
            layers: m.layers().iter().map(LayerFile::from).collect(),
        }
    }
}
