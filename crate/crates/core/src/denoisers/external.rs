//! External denoiser networks stored as ONNX files.
//!
//! Contract: one rank-4 `f32` input `(1, bands + 1, H, W)` holding the bands
//! followed by a constant noise-map channel, one output `(1, bands, H, W)`.
//! `H` and `W` must be divisible by the declared divisibility (8). Optional
//! model metadata: `bands`, `noise_map`, `divisibility`.
//!
//! A network trained at a single noise level may ignore the noise map; its
//! output at strength 0 is then whatever the network does to a clean input,
//! not an exact identity.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use tract_onnx::pb;
use tract_onnx::pb::tensor_shape_proto::dimension::Value as DimValue;
use tract_onnx::pb::type_proto::Value as TypeValue;
use tract_onnx::prelude::*;

use crate::raster::{BandPlane, MultispectralImage};
use crate::{Error, Result};

pub const BANDS_KEY: &str = "bands";
pub const NOISE_MAP_KEY: &str = "noise_map";
pub const DIVISIBILITY_KEY: &str = "divisibility";

const SUPPORTED_BANDS: usize = 4;
const DEFAULT_DIVISIBILITY: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalMetadata {
    pub band_count: usize,
    pub divisibility: usize,
    /// Spatial size when the graph input is fully static.
    pub fixed_dims: Option<(usize, usize)>,
}

/// A loaded network plus per-shape execution plans.
pub struct ExternalDenoiser {
    path: PathBuf,
    meta: ExternalMetadata,
    model: InferenceModel,
    plans: Mutex<HashMap<(usize, usize), Arc<TypedRunnableModel>>>,
}

impl fmt::Debug for ExternalDenoiser {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExternalDenoiser").field("path", &self.path).field("meta", &self.meta).finish()
    }
}

fn resource_err(path: &Path, reason: impl fmt::Display) -> Error {
    Error::Resource { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Concrete dims of a value's tensor type; `None` for symbolic axes.
fn tensor_dims(info: &pb::ValueInfoProto) -> Result<Vec<Option<i64>>> {
    let ty = info
        .r#type
        .as_ref()
        .and_then(|t| t.value.as_ref())
        .ok_or_else(|| Error::Signature(format!("`{}` has no tensor type", info.name)))?;
    let TypeValue::TensorType(t) = ty;
    let shape = t
        .shape
        .as_ref()
        .ok_or_else(|| Error::Signature(format!("`{}` has no declared shape", info.name)))?;
    Ok(shape
        .dim
        .iter()
        .map(|d| match &d.value {
            Some(DimValue::DimValue(v)) => Some(*v),
            _ => None,
        })
        .collect())
}

/// Validates the graph signature against the denoiser contract.
pub(crate) fn check_signature(proto: &pb::ModelProto) -> Result<ExternalMetadata> {
    let graph = proto.graph.as_ref().ok_or_else(|| Error::Signature("model has no graph".into()))?;
    let initializers: Vec<&str> = graph.initializer.iter().map(|t| t.name.as_str()).collect();
    let inputs: Vec<&pb::ValueInfoProto> =
        graph.input.iter().filter(|i| !initializers.contains(&i.name.as_str())).collect();
    if inputs.len() != 1 {
        return Err(Error::Signature(format!("expected one graph input, found {}", inputs.len())));
    }
    if graph.output.len() != 1 {
        return Err(Error::Signature(format!("expected one graph output, found {}", graph.output.len())));
    }
    let dims = tensor_dims(inputs[0])?;
    if dims.len() != 4 {
        return Err(Error::Signature(format!("input must be rank 4 (N, C, H, W), got rank {}", dims.len())));
    }
    if matches!(dims[0], Some(n) if n != 1) {
        return Err(Error::Signature(format!("batch dimension must be 1, got {:?}", dims[0])));
    }
    let channels = dims[1].ok_or_else(|| Error::Signature("channel dimension must be static".into()))?;
    let band_count = usize::try_from(channels - 1)
        .map_err(|_| Error::Signature(format!("invalid channel count {channels}")))?;

    let meta: HashMap<&str, &str> =
        proto.metadata_props.iter().map(|e| (e.key.as_str(), e.value.trim())).collect();
    if let Some(b) = meta.get(BANDS_KEY) {
        let declared: usize = b.parse().map_err(|_| Error::Signature(format!("bad `{BANDS_KEY}` metadata `{b}`")))?;
        if declared != band_count {
            return Err(Error::Signature(format!(
                "metadata declares {declared} bands but the input has {channels} channels"
            )));
        }
    }
    if let Some(nm) = meta.get(NOISE_MAP_KEY) {
        if *nm != "true" {
            return Err(Error::Signature(format!("models without a noise-map channel are not supported ({NOISE_MAP_KEY}={nm})")));
        }
    }
    if band_count != SUPPORTED_BANDS {
        return Err(Error::Signature(format!(
            "input has {channels} channels; expected {} ({SUPPORTED_BANDS} bands + noise map)",
            SUPPORTED_BANDS + 1
        )));
    }
    let divisibility = match meta.get(DIVISIBILITY_KEY) {
        Some(d) => d
            .parse::<usize>()
            .ok()
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::Signature(format!("bad `{DIVISIBILITY_KEY}` metadata `{d}`")))?,
        None => DEFAULT_DIVISIBILITY,
    };

    let out_dims = tensor_dims(&graph.output[0]).ok();
    if let Some(od) = &out_dims {
        if od.len() != 4 {
            return Err(Error::Signature(format!("output must be rank 4, got rank {}", od.len())));
        }
        if matches!(od[1], Some(c) if c as usize != band_count) {
            return Err(Error::Signature(format!("output has {:?} channels, expected {band_count}", od[1])));
        }
    }

    let fixed_dims = match (dims[2], dims[3]) {
        (Some(h), Some(w)) if h > 0 && w > 0 => Some((h as usize, w as usize)),
        _ => None,
    };
    if let Some((h, w)) = fixed_dims {
        if h % divisibility != 0 || w % divisibility != 0 {
            return Err(Error::Signature(format!("static input {h}x{w} is not divisible by {divisibility}")));
        }
    }
    Ok(ExternalMetadata { band_count, divisibility, fixed_dims })
}

impl ExternalDenoiser {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(resource_err(path, "file not found"));
        }
        let onnx = tract_onnx::onnx();
        let proto = onnx.proto_model_for_path(path).map_err(|e| resource_err(path, format!("not a readable ONNX model: {e}")))?;
        let meta = check_signature(&proto)?;
        let model = onnx
            .model_for_proto_model(&proto)
            .map_err(|e| resource_err(path, format!("unsupported graph: {e:#}")))?;
        Ok(ExternalDenoiser { path: path.to_path_buf(), meta, model, plans: Mutex::new(HashMap::new()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn metadata(&self) -> &ExternalMetadata {
        &self.meta
    }

    pub fn band_count(&self) -> usize {
        self.meta.band_count
    }

    fn plan(&self, dims: (usize, usize)) -> Result<Arc<TypedRunnableModel>> {
        let mut plans = self.plans.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = plans.get(&dims) {
            return Ok(p.clone());
        }
        let shape = tvec![1, self.meta.band_count + 1, dims.0, dims.1];
        let plan = self
            .model
            .clone()
            .with_input_fact(0, InferenceFact::dt_shape(f32::datum_type(), shape))
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| Error::Inference(format!("{e:#}")))?;
        plans.insert(dims, plan.clone());
        Ok(plan)
    }

    pub fn check_input(&self, x: &MultispectralImage) -> Result<()> {
        let (h, w) = x.dims();
        if x.band_count() != self.meta.band_count {
            return Err(Error::dims(format!(
                "network expects {} bands, image has {}",
                self.meta.band_count,
                x.band_count()
            )));
        }
        let d = self.meta.divisibility;
        if h % d != 0 || w % d != 0 {
            return Err(Error::dims(format!("image {h}x{w} is not divisible by {d}")));
        }
        if let Some(fixed) = self.meta.fixed_dims {
            if fixed != (h, w) {
                return Err(Error::dims(format!("network is fixed to {fixed:?}, image is {:?}", (h, w))));
            }
        }
        Ok(())
    }

    /// Runs the network on the stacked bands plus a noise map of `strength`.
    pub fn denoise(&self, x: &MultispectralImage, strength: f64) -> Result<MultispectralImage> {
        self.check_input(x)?;
        let (h, w) = x.dims();
        let plane = h * w;
        let mut data = Vec::with_capacity((x.band_count() + 1) * plane);
        for b in x.bands() {
            data.extend(b.values().iter().map(|v| *v as f32));
        }
        data.extend(std::iter::repeat_n(strength as f32, plane));
        let input = Tensor::from_shape(&[1, x.band_count() + 1, h, w], &data)
            .map_err(|e| Error::Inference(format!("{e:#}")))?;
        let outputs = self.plan((h, w))?.run(tvec!(input.into())).map_err(|e| Error::Inference(format!("{e:#}")))?;
        let out = outputs.first().ok_or_else(|| Error::Inference("network produced no output".into()))?;
        if out.shape() != [1, x.band_count(), h, w] {
            return Err(Error::Inference(format!("unexpected output shape {:?}", out.shape())));
        }
        let view = out.to_plain_array_view::<f32>().map_err(|e| Error::Inference(format!("{e:#}")))?;
        let flat: Vec<f32> = view.iter().copied().collect();
        let planes = flat
            .chunks_exact(plane)
            .map(|c| {
                BandPlane::new_unchecked(
                    Array2::from_shape_vec((h, w), c.iter().map(|v| *v as f64).collect()).expect("chunk is h*w"),
                )
            })
            .collect();
        x.with_bands(planes)
    }
}
