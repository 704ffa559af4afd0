//! Decoder/encoder pair between images and low-dimensional manifold codes.
//!
//! Codes are centered: `decode(u) = mean_image + D(u)` and
//! `encode(x) = E(x − mean_image)`, so the zero code decodes to the mean
//! image of the data the codec was fit on.
//!
//! Two kinds exist. A *linear* codec has a single identity layer in each
//! direction whose decoder columns are orthonormal (the principal subspace
//! of a dataset, see [`fit_linear_codec`]); its encoder is the transpose. A
//! *layered* codec is any pair of affine+activation stacks loaded from file.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Shape};
use crate::model::{Activation, Layer, LayerFile, LayerStack};

pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Linear,
    Layered,
}

/// Latent coordinates `U`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldCode(pub Vec<f64>);

impl ManifoldCode {
    pub fn zeros(len: usize) -> Self {
        ManifoldCode(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `∂I_i/∂U_p`, one row per pixel and one column per code coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Jacobian {
    entries: DMatrix<f64>,
}

impl Jacobian {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("Jacobian has non-finite entries".into()));
        }
        Ok(Jacobian { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn num_pixels(&self) -> usize {
        self.entries.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.entries.ncols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldCodec {
    kind: CodecKind,
    shape: Shape,
    mean_image: Vec<f64>,
    decoder: LayerStack,
    encoder: LayerStack,
    round_trip_tolerance: Option<f64>,
}

impl ManifoldCodec {
    /// Linear codec from an orthonormal `pixels × latent` basis.
    pub fn linear(shape: Shape, mean_image: Vec<f64>, basis: DMatrix<f64>) -> Result<Self> {
        if basis.nrows() != shape.len() {
            return Err(Error::shape(format!("{} basis rows", shape.len()), basis.nrows()));
        }
        let latent = basis.ncols();
        let encoder = Layer::new(basis.transpose(), DVector::zeros(latent), Activation::Identity)?;
        let decoder = Layer::new(basis, DVector::zeros(shape.len()), Activation::Identity)?;
        let codec = ManifoldCodec {
            kind: CodecKind::Linear,
            shape,
            mean_image,
            decoder: LayerStack::new(vec![decoder])?,
            encoder: LayerStack::new(vec![encoder])?,
            round_trip_tolerance: None,
        };
        codec.validate()?;
        Ok(codec)
    }

    pub fn layered(
        shape: Shape,
        mean_image: Vec<f64>,
        decoder: Vec<Layer>,
        encoder: Vec<Layer>,
    ) -> Result<Self> {
        let codec = ManifoldCodec {
            kind: CodecKind::Layered,
            shape,
            mean_image,
            decoder: LayerStack::new(decoder)?,
            encoder: LayerStack::new(encoder)?,
            round_trip_tolerance: None,
        };
        codec.validate()?;
        Ok(codec)
    }

    fn validate(&self) -> Result<()> {
        let pixels = self.shape.len();
        let latent = self.decoder.input_dim();
        if self.mean_image.len() != pixels {
            return Err(Error::format(
                "mean_image",
                format!("expected {pixels} values, got {}", self.mean_image.len()),
            ));
        }
        if self.decoder.output_dim() != pixels {
            return Err(Error::format(
                "decoder",
                format!("output size {} does not match {pixels} pixels", self.decoder.output_dim()),
            ));
        }
        if self.encoder.input_dim() != pixels || self.encoder.output_dim() != latent {
            return Err(Error::format(
                "encoder",
                format!(
                    "maps {} -> {}, expected {pixels} -> {latent}",
                    self.encoder.input_dim(),
                    self.encoder.output_dim()
                ),
            ));
        }
        let softmax = self
            .decoder
            .layers()
            .iter()
            .chain(self.encoder.layers())
            .any(|l| l.activation() == Activation::Softmax);
        if softmax {
            return Err(Error::Config("codec layers may not use softmax".into()));
        }
        if self.kind == CodecKind::Linear {
            self.validate_linear()?;
        }
        Ok(())
    }

    fn validate_linear(&self) -> Result<()> {
        let (dec, enc) = match (self.decoder.layers(), self.encoder.layers()) {
            ([d], [e]) => (d, e),
            _ => return Err(Error::format("decoder", "a linear codec has exactly one layer per direction")),
        };
        let plain = |l: &Layer| l.activation() == Activation::Identity && l.bias().iter().all(|&b| b == 0.0);
        if !plain(dec) || !plain(enc) {
            return Err(Error::format("decoder", "linear codec layers must be identity with zero bias"));
        }
        let basis = dec.weights();
        let gram = basis.tr_mul(basis);
        let off = (&gram - DMatrix::identity(gram.nrows(), gram.ncols())).abs().max();
        if off > ORTHONORMAL_TOL {
            return Err(Error::Contract(format!(
                "linear decoder columns are not orthonormal (Gram deviation {off:e})"
            )));
        }
        if (enc.weights() - basis.transpose()).abs().max() > ORTHONORMAL_TOL {
            return Err(Error::format("encoder", "linear encoder must be the decoder transpose"));
        }
        Ok(())
    }

    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn mean_image(&self) -> Image {
        Image::new(self.shape, self.mean_image.clone()).expect("validated length")
    }

    /// Reconstruction RMSE declared for the data the codec was fit on.
    pub fn round_trip_tolerance(&self) -> Option<f64> {
        self.round_trip_tolerance
    }

    pub fn with_round_trip_tolerance(mut self, tol: f64) -> Self {
        self.round_trip_tolerance = Some(tol);
        self
    }

    /// The linear decoder matrix (`pixels × latent`); `None` for layered codecs.
    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        match self.kind {
            CodecKind::Linear => Some(self.decoder.layers()[0].weights()),
            CodecKind::Layered => None,
        }
    }

    fn check_code(&self, code: &ManifoldCode) -> Result<()> {
        if code.len() != self.latent_dim() {
            return Err(Error::shape(format!("code of length {}", self.latent_dim()), code.len()));
        }
        Ok(())
    }

    /// `G(U)`. Values are not clamped.
    pub fn decode(&self, code: &ManifoldCode) -> Result<Image> {
        self.check_code(code)?;
        let mut out = self.decoder.forward(code.as_slice())?;
        for (o, m) in out.iter_mut().zip(&self.mean_image) {
            *o += m;
        }
        Image::new(self.shape, out)
    }

    /// `R(I)`.
    pub fn encode(&self, image: &Image) -> Result<ManifoldCode> {
        image.ensure_shape(self.shape)?;
        let centered: Vec<f64> = image
            .as_slice()
            .iter()
            .zip(&self.mean_image)
            .map(|(x, m)| x - m)
            .collect();
        self.encoder.forward(&centered).map(ManifoldCode)
    }

    /// `G(R(I))`.
    pub fn reconstruct(&self, image: &Image) -> Result<Image> {
        self.decode(&self.encode(image)?)
    }

    pub fn jacobian(&self, code: &ManifoldCode) -> Result<Jacobian> {
        self.check_code(code)?;
        match self.kind {
            CodecKind::Linear => Jacobian::new(self.decoder.layers()[0].weights().clone()),
            CodecKind::Layered => Jacobian::new(self.decoder.jacobian(code.as_slice())?),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodecFile = serde_json::from_str(text).map_err(|e| Error::format("codec", e))?;
        file.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CodecFile::from(self)).expect("codec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|e| Error::io(path.as_ref(), e))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CodecFile {
    kind: CodecKind,
    input_shape: Shape,
    latent_dim: usize,
    mean_image: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    round_trip_tolerance: Option<f64>,
    decoder: Vec<LayerFile>,
    encoder: Vec<LayerFile>,
}

impl TryFrom<CodecFile> for ManifoldCodec {
    type Error = Error;

    fn try_from(file: CodecFile) -> Result<Self> {
        let stack = |layers: Vec<LayerFile>, field: &str| -> Result<LayerStack> {
            let layers = layers
                .into_iter()
                .enumerate()
                .map(|(k, l)| l.into_layer(k))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::Format { field: f, message } => Error::format(format!("{field}.{f}"), message),
                    other => other,
                })?;
            LayerStack::new(layers)
        };
        let decoder = stack(file.decoder, "decoder")?;
        let encoder = stack(file.encoder, "encoder")?;
        if decoder.input_dim() != file.latent_dim {
            return Err(Error::format(
                "latent_dim",
                format!("{} but the decoder reads {} inputs", file.latent_dim, decoder.input_dim()),
            ));
        }
        let codec = ManifoldCodec {
            kind: file.kind,
            shape: file.input_shape,
            mean_image: file.mean_image,
            decoder,
            encoder,
            round_trip_tolerance: file.round_trip_tolerance,
        };
        codec.validate()?;
        Ok(codec)
    }
}

impl From<&ManifoldCodec> for CodecFile {
    fn from(c: &ManifoldCodec) -> Self {
        CodecFile {
            kind: c.kind,
            input_shape: c.shape,
            latent_dim: c.latent_dim(),
            mean_image: c.mean_image.clone(),
            round_trip_tolerance: c.round_trip_tolerance,
            decoder: c.decoder.layers().iter().map(LayerFile::from).collect(),
            encoder: c.encoder.layers().iter().map(LayerFile::from).collect(),
        }
    }
}

/// Root-mean-square of `x − G(R(x))` over every pixel of every image.
pub fn round_trip_rmse(codec: &ManifoldCodec, dataset: &[Image]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for image in dataset {
        let rec = codec.reconstruct(image)?;
        for (a, b) in image.as_slice().iter().zip(rec.as_slice()) {
            sum += (a - b) * (a - b);
        }
        count += image.as_slice().len();
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

/// Numerical rank of the centered data matrix.
fn numerical_rank(singular: &[f64], rows: usize, cols: usize) -> usize {
    let max = singular.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    let tol = max * rows.max(cols) as f64 * f64::EPSILON * 16.0;
    singular.iter().filter(|&&s| s > tol).count()
}

/// Fits the rank-`latent_dim` principal subspace of the centered dataset.
///
/// Basis columns are sign-normalized so their largest-magnitude entry is
/// positive, which makes the fit reproducible across runs.
pub fn fit_linear_codec(dataset: &[Image], latent_dim: usize) -> Result<ManifoldCodec> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::Dimension("cannot fit a codec on an empty dataset".into()))?;
    let shape = first.shape();
    for image in dataset {
        image.ensure_shape(shape)?;
    }
    let n = dataset.len();
    let pixels = shape.len();
    if latent_dim == 0 || latent_dim > n.min(pixels) {
        return Err(Error::Dimension(format!(
            "latent_dim {latent_dim} must lie in 1..={} (dataset size {n}, {pixels} pixels)",
            n.min(pixels)
        )));
    }

    let mut mean = vec![0.0; pixels];
    for image in dataset {
        for (m, v) in mean.iter_mut().zip(image.as_slice()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, pixels, |r, c| dataset[r].as_slice()[c] - mean[c]);

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();

    let rank = numerical_rank(&singular, n, pixels);
    if latent_dim > rank {
        return Err(Error::RankDeficient {
            requested: latent_dim,
            achievable: rank,
        });
    }

    let mut basis = DMatrix::zeros(pixels, latent_dim);
    for (col, &i) in order.iter().take(latent_dim).enumerate() {
        let mut v: DVector<f64> = v_t.row(i).transpose();
        let pivot = v.iter().cloned().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        v /= v.norm();
        basis.set_column(col, &v);
    }
    // Re-orthonormalize against SVD round-off, keeping each column's sign.
    let mut q = nalgebra::linalg::QR::new(basis.clone()).q().columns(0, latent_dim).into_owned();
    for col in 0..latent_dim {
        if q.column(col).dot(&basis.column(col)) < 0.0 {
            q.column_mut(col).neg_mut();
        }
    }
    let basis = q;

    let codec = ManifoldCodec::linear(shape, mean, basis)?;
    let rmse = round_trip_rmse(&codec, dataset)?;
    Ok(codec.with_round_trip_tolerance(rmse))
}
