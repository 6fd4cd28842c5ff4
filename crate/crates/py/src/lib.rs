//! Python bindings. Images cross the boundary as raw `bytes` in row-major
//! HxWx3 uint8 order (what `numpy.ndarray.tobytes()` gives for such an array).

use std::path::PathBuf;

use crossview::data::{make_synthetic_dataset_split, DatasetManifest, Image, RangeTag, Split};
use crossview::metrics;
use crossview::retrieval;
use crossview::trainer::{train_with, TrainConfig};
use crossview::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Shape(_)
        | Error::DimensionTooSmall { .. }
        | Error::Range(_)
        | Error::InvalidSpec(_)
        | Error::InvalidSize(_)
        | Error::InvalidArgument(_)
        | Error::Empty(_)
        | Error::Manifest(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Image { .. } => PyOSError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn image_from_bytes(data: &[u8], height: usize, width: usize) -> crossview::Result<Image> {
    Image::new(height, width, data.iter().map(|&v| v as f32).collect(), RangeTag::Byte)
}

fn image_to_bytes(img: &Image) -> Vec<u8> {
    img.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

fn json_to_py<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// Pair of images given as bytes sharing one shape.
fn pair(a: &[u8], b: &[u8], height: usize, width: usize) -> PyResult<(Image, Image)> {
    Ok((image_from_bytes(a, height, width).map_err(py_err)?, image_from_bytes(b, height, width).map_err(py_err)?))
}

/// Render a synthetic paired dataset and return the directory holding its manifest.
#[pyfunction]
#[pyo3(signature = (n, out, seed = 0, size = 64, split = "train"))]
fn synth_data(py: Python<'_>, n: usize, out: PathBuf, seed: u64, size: usize, split: &str) -> PyResult<String> {
    let split: Split = split.parse().map_err(py_err)?;
    let m = py.detach(|| make_synthetic_dataset_split(n, seed, size, &out, split)).map_err(py_err)?;
    Ok(m.root.display().to_string())
}

/// Train from a JSON config string; returns the run summary as a dict.
#[pyfunction]
fn train<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyAny>> {
    let config = TrainConfig::from_json(config_json).map_err(py_err)?;
    let dir = config
        .train_manifest
        .clone()
        .ok_or_else(|| PyValueError::new_err("config has no train_manifest"))?;
    let summary = py
        .detach(|| {
            let manifest = DatasetManifest::load(&dir)?;
            train_with(&config, &manifest, &mut |_| {})
        })
        .map_err(py_err)?;
    let epochs = serde_json::to_value(&summary.epochs).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let value = serde_json::json!({
        "out_dir": summary.out_dir,
        "final_checkpoint": summary.final_checkpoint,
        "checksum": summary.checksum,
        "initial_heldout_l1": summary.initial_heldout_l1,
        "epochs": epochs,
    });
    json_to_py(py, &value)
}

/// Load a PNG as `(bytes, height, width)`.
#[pyfunction]
fn load_png<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(Bound<'py, PyBytes>, usize, usize)> {
    let img = Image::load(&path).map_err(py_err)?;
    Ok((PyBytes::new(py, &image_to_bytes(&img)), img.height, img.width))
}

#[pyfunction]
#[pyo3(signature = (a, b, height, width, windowed = true))]
fn ssim(a: &[u8], b: &[u8], height: usize, width: usize, windowed: bool) -> PyResult<f64> {
    let (a, b) = pair(a, b, height, width)?;
    let mode = if windowed { metrics::SsimMode::Windowed } else { metrics::SsimMode::Global };
    metrics::ssim_with(&a, &b, mode).map_err(py_err)
}

#[pyfunction]
fn psnr(a: &[u8], b: &[u8], height: usize, width: usize) -> PyResult<f64> {
    let (a, b) = pair(a, b, height, width)?;
    metrics::psnr(&a, &b).map_err(py_err)
}

#[pyfunction]
fn sharpness_difference(a: &[u8], b: &[u8], height: usize, width: usize) -> PyResult<f64> {
    let (a, b) = pair(a, b, height, width)?;
    metrics::sharpness_difference(&a, &b).map_err(py_err)
}

#[pyfunction]
fn mean_abs_diff(a: &[u8], b: &[u8], height: usize, width: usize) -> PyResult<f64> {
    let (a, b) = pair(a, b, height, width)?;
    metrics::mean_abs_diff(&a, &b).map_err(py_err)
}

#[pyfunction]
fn inception_score(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::inception_score(&rows).map_err(py_err)
}

/// `(mean, std)` of the per-row divergence from the real marginal.
#[pyfunction]
fn kl_model_data(generated: Vec<Vec<f64>>, real: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    metrics::kl_model_data(&generated, &real).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (real, generated, k, confidence_filter = false))]
fn topk_accuracy(real: Vec<Vec<f64>>, generated: Vec<Vec<f64>>, k: usize, confidence_filter: bool) -> PyResult<f64> {
    metrics::topk_accuracy(&real, &generated, k, confidence_filter).map_err(py_err)
}

#[pyfunction]
fn topk_smooth(p: Vec<f64>, k: usize) -> PyResult<Vec<f64>> {
    metrics::topk_smooth(&p, k).map_err(py_err)
}

/// Nearest training images by mean absolute difference, as `(id, distance)` pairs.
#[pyfunction]
#[pyo3(signature = (query, training, height, width, k, downsample = 1))]
fn knn(
    query: &[u8],
    training: Vec<(String, Vec<u8>)>,
    height: usize,
    width: usize,
    k: usize,
    downsample: usize,
) -> PyResult<Vec<(String, f64)>> {
    let q = image_from_bytes(query, height, width).map_err(py_err)?;
    let train = training
        .into_iter()
        .map(|(id, px)| Ok((id, image_from_bytes(&px, height, width)?)))
        .collect::<crossview::Result<Vec<_>>>()
        .map_err(py_err)?;
    let found = retrieval::knn_l1_downsampled(&q, &train, k, downsample).map_err(py_err)?;
    Ok(found.into_iter().map(|n| (n.id, n.distance)).collect())
}

#[pymodule]
fn crossview_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(load_png, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(sharpness_difference, m)?)?;
    m.add_function(wrap_pyfunction!(mean_abs_diff, m)?)?;
    m.add_function(wrap_pyfunction!(inception_score, m)?)?;
    m.add_function(wrap_pyfunction!(kl_model_data, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(topk_smooth, m)?)?;
    m.add_function(wrap_pyfunction!(knn, m)?)?;
    Ok(())
}
