//! Python bindings for the fieldscout core: fields, the GP model, the
//! fusion rules and full sampling missions.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fieldscout_core::error::Error;
use fieldscout_core::field::{
    self, generate_synthetic, load_dataset, serialize_grid, FeatureNormalizer, PlotId,
};
use fieldscout_core::fusion::{self, MobileAvgVariance};
use fieldscout_core::gp::{self, FeatureVector, KernelParams, NoiseModel, TrainingSet};
use fieldscout_core::harness;
use fieldscout_core::planner::{self, MissionConfig, Strategy};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::Resource(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn feature_from_vec(v: &[f64]) -> PyResult<FeatureVector> {
    if v.len() != gp::FEATURE_DIM {
        return Err(PyValueError::new_err(format!(
            "feature vectors have {} components, got {}",
            gp::FEATURE_DIM,
            v.len()
        )));
    }
    FeatureVector::new([v[0], v[1]], v[2], v[3]).map_err(to_py_err)
}

/// A grid field with per-plot features and ground truth.
#[pyclass(name = "Field")]
struct PyField {
    inner: field::Field,
}

#[pymethods]
impl PyField {
    /// Synthesize a field on the standard corridor layout.
    #[staticmethod]
    #[pyo3(signature = (width=15, height=25, seed=0, band_low=20.0, band_high=85.0))]
    fn synthetic(
        width: usize,
        height: usize,
        seed: u64,
        band_low: f64,
        band_high: f64,
    ) -> PyResult<Self> {
        let inner = generate_synthetic(
            width,
            height,
            seed,
            &field::default_synthetic_params(),
            (band_low, band_high),
        )
        .map_err(to_py_err)?;
        Ok(PyField { inner })
    }

    /// Load a dataset CSV (row,col,vegetation_index,leaf_angle_density,
    /// stalk_height).
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PyValueError::new_err(format!("cannot read {path}: {e}")))?;
        Ok(PyField {
            inner: load_dataset(&text).map_err(to_py_err)?,
        })
    }

    /// Write the per-plot table as a dataset CSV.
    fn to_csv(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_dataset_csv())
            .map_err(|e| PyValueError::new_err(format!("cannot write {path}: {e}")))
    }

    #[getter]
    fn n_plots(&self) -> usize {
        self.inner.n_plots()
    }

    /// (rows, cols) of the cell grid.
    #[getter]
    fn grid_shape(&self) -> (usize, usize) {
        (self.inner.grid.height(), self.inner.grid.width())
    }

    /// ASCII rendering of the layout (P plot, . free, # obstacle).
    fn grid_ascii(&self) -> String {
        serialize_grid(&self.inner.grid)
    }

    /// Ground-truth target of one plot.
    fn truth(&self, plot: usize) -> PyResult<f64> {
        if plot >= self.inner.n_plots() {
            return Err(PyValueError::new_err(format!("unknown plot {plot}")));
        }
        Ok(self.inner.truth.value(PlotId(plot)))
    }

    /// The normalized GP input of one plot.
    fn feature_vector(&self, plot: usize) -> PyResult<[f64; 4]> {
        if plot >= self.inner.n_plots() {
            return Err(PyValueError::new_err(format!("unknown plot {plot}")));
        }
        let normalizer = FeatureNormalizer::from_field(&self.inner);
        Ok(normalizer
            .feature_vector(&self.inner, PlotId(plot))
            .as_array())
    }

    fn __repr__(&self) -> String {
        let (h, w) = (self.inner.grid.height(), self.inner.grid.width());
        format!("Field({} plots, {h}x{w} cells)", self.inner.n_plots())
    }
}

/// A fitted Gaussian-process model over 4-dimensional feature vectors.
#[pyclass(name = "GpModel")]
struct PyGpModel {
    inner: gp::GpModel,
}

#[pymethods]
impl PyGpModel {
    /// Fit a model to points (lists of 4 floats), targets and per-sample
    /// noise variances. With `optimize` the kernel hyperparameters are
    /// tuned by likelihood ascent from the given initial values.
    #[staticmethod]
    #[pyo3(signature = (points, targets, noise_variances, sigma_s=0.5, sigma_m=2.5,
                        output_scale=1.0, length_scales=[1.0, 1.0, 1.0, 1.0],
                        optimize=false, target_shift=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        points: Vec<Vec<f64>>,
        targets: Vec<f64>,
        noise_variances: Vec<f64>,
        sigma_s: f64,
        sigma_m: f64,
        output_scale: f64,
        length_scales: [f64; 4],
        optimize: bool,
        target_shift: f64,
    ) -> PyResult<Self> {
        let noise = NoiseModel::new(sigma_s, sigma_m).map_err(to_py_err)?;
        let pts: Vec<FeatureVector> = points
            .iter()
            .map(|p| feature_from_vec(p))
            .collect::<PyResult<_>>()?;
        let train = TrainingSet::new(pts, targets, noise_variances, &noise).map_err(to_py_err)?;
        let mut params = KernelParams::new(output_scale, length_scales).map_err(to_py_err)?;
        if optimize {
            let outcome = gp::fit_hyperparameters(&train, &params, &gp::FitConfig::default())
                .map_err(to_py_err)?;
            params = outcome.params;
        }
        Ok(PyGpModel {
            inner: gp::GpModel::fit(train, params, target_shift).map_err(to_py_err)?,
        })
    }

    /// Posterior means and variances at the query points.
    fn predict(&self, points: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let pts: Vec<FeatureVector> = points
            .iter()
            .map(|p| feature_from_vec(p))
            .collect::<PyResult<_>>()?;
        let post = self.inner.posterior(&pts).map_err(to_py_err)?;
        Ok((post.mean.iter().copied().collect(), post.variances()))
    }

    fn log_marginal_likelihood(&self) -> PyResult<f64> {
        self.inner.log_marginal_likelihood().map_err(to_py_err)
    }

    /// Differential entropy of the posterior at the points, optionally
    /// with a measurement-noise variance added to the diagonal.
    #[pyo3(signature = (points, added_noise=None))]
    fn entropy(&self, points: Vec<Vec<f64>>, added_noise: Option<f64>) -> PyResult<f64> {
        let pts: Vec<FeatureVector> = points
            .iter()
            .map(|p| feature_from_vec(p))
            .collect::<PyResult<_>>()?;
        self.inner.entropy(&pts, added_noise).map_err(to_py_err)
    }

    #[getter]
    fn output_scale(&self) -> f64 {
        self.inner.params().output_scale()
    }

    #[getter]
    fn length_scales(&self) -> [f64; 4] {
        *self.inner.params().length_scales()
    }

    fn __repr__(&self) -> String {
        format!(
            "GpModel({} training points, output_scale={:.4})",
            self.inner.train().len(),
            self.inner.params().output_scale()
        )
    }
}

/// Matérn-3/2 covariance between two 4-dimensional feature vectors.
#[pyfunction]
#[pyo3(signature = (a, b, output_scale=1.0, length_scales=[1.0, 1.0, 1.0, 1.0]))]
fn matern_cov(
    a: Vec<f64>,
    b: Vec<f64>,
    output_scale: f64,
    length_scales: [f64; 4],
) -> PyResult<f64> {
    let params = KernelParams::new(output_scale, length_scales).map_err(to_py_err)?;
    gp::matern_cov(&feature_from_vec(&a)?, &feature_from_vec(&b)?, &params).map_err(to_py_err)
}

/// Precision-weighted fusion of a static and a mobile reading:
/// returns (value, variance).
#[pyfunction]
fn fuse(static_value: f64, mobile_value: f64, sigma_s: f64, sigma_m: f64) -> PyResult<(f64, f64)> {
    let noise = NoiseModel::new(sigma_s, sigma_m).map_err(to_py_err)?;
    fusion::fuse(static_value, mobile_value, &noise).map_err(to_py_err)
}

/// Mean of repeated mobile readings with its bookkeeping variance.
#[pyfunction]
#[pyo3(signature = (readings, sigma_s=0.5, sigma_m=2.5, scaled=false))]
fn average_mobile(
    readings: Vec<f64>,
    sigma_s: f64,
    sigma_m: f64,
    scaled: bool,
) -> PyResult<(f64, f64)> {
    let noise = NoiseModel::new(sigma_s, sigma_m).map_err(to_py_err)?;
    let mode = if scaled {
        MobileAvgVariance::Scaled
    } else {
        MobileAvgVariance::Fixed
    };
    fusion::average_mobile(&readings, &noise, mode).map_err(to_py_err)
}

/// Run one sampling mission on a field; returns a dict with the prior MAE,
/// the per-iteration records and mission status.
#[pyfunction]
#[pyo3(signature = (field, strategy="maxent", seed=0, p=4, xi=0, sigma_s=0.5, sigma_m=2.5,
                    iterations=8, distance_cap=250, n_test=40, scaled_mobile_avg=false,
                    refit_each_iteration=false))]
#[allow(clippy::too_many_arguments)]
fn run_mission(
    py: Python<'_>,
    field: &PyField,
    strategy: &str,
    seed: u64,
    p: usize,
    xi: u32,
    sigma_s: f64,
    sigma_m: f64,
    iterations: u32,
    distance_cap: u32,
    n_test: usize,
    scaled_mobile_avg: bool,
    refit_each_iteration: bool,
) -> PyResult<Py<PyDict>> {
    let strategy: Strategy = strategy.parse().map_err(to_py_err)?;
    let config = MissionConfig {
        strategy,
        seed,
        p,
        xi,
        noise: NoiseModel::new(sigma_s, sigma_m).map_err(to_py_err)?,
        iterations,
        distance_cap,
        n_test,
        mobile_avg: if scaled_mobile_avg {
            MobileAvgVariance::Scaled
        } else {
            MobileAvgVariance::Fixed
        },
        refit_each_iteration,
        fit: Default::default(),
    };
    let log = planner::run_mission(&field.inner, &config).map_err(to_py_err)?;

    let out = PyDict::new(py);
    out.set_item("strategy", log.strategy.to_string())?;
    out.set_item("seed", log.seed)?;
    out.set_item("prior_mae", log.prior_mae)?;
    out.set_item(
        "test_plots",
        log.test_plots.iter().map(|p| p.0).collect::<Vec<_>>(),
    )?;
    out.set_item("completed", log.completed)?;
    out.set_item("aborted", log.aborted.clone())?;
    let records: Vec<Py<PyDict>> = log
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("iteration", r.iteration)?;
            d.set_item(
                "static_sites",
                r.static_sites.iter().map(|p| p.0).collect::<Vec<_>>(),
            )?;
            d.set_item("cost", r.cost)?;
            d.set_item("c_min", r.c_min)?;
            d.set_item("score", r.score)?;
            d.set_item("distance", r.distance)?;
            d.set_item("n_static", r.n_static)?;
            d.set_item("n_mobile", r.n_mobile)?;
            d.set_item("n_train", r.n_train)?;
            d.set_item("mae", r.mae)?;
            Ok(d.unbind())
        })
        .collect::<PyResult<_>>()?;
    out.set_item("records", records)?;
    Ok(out.unbind())
}

/// Disjoint train/test plot split, deterministic per seed.
#[pyfunction]
#[pyo3(signature = (field, n_test=40, seed=0))]
fn test_split(field: &PyField, n_test: usize, seed: u64) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let (train, test) = field::test_split(&field.inner.grid, n_test, seed).map_err(to_py_err)?;
    Ok((
        train.into_iter().map(|p| p.0).collect(),
        test.into_iter().map(|p| p.0).collect(),
    ))
}

/// MAE of a model's posterior means against a field's ground truth on the
/// given plots.
#[pyfunction]
fn compute_mae(field: &PyField, model: &PyGpModel, plots: Vec<usize>) -> PyResult<f64> {
    let normalizer = FeatureNormalizer::from_field(&field.inner);
    let test: Vec<(PlotId, FeatureVector)> = plots
        .iter()
        .map(|p| {
            if *p >= field.inner.n_plots() {
                return Err(PyValueError::new_err(format!("unknown plot {p}")));
            }
            Ok((
                PlotId(*p),
                normalizer.feature_vector(&field.inner, PlotId(*p)),
            ))
        })
        .collect::<PyResult<_>>()?;
    harness::compute_mae(&model.inner, &test, &field.inner.truth).map_err(to_py_err)
}

#[pymodule]
fn fieldscout_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyGpModel>()?;
    m.add_function(wrap_pyfunction!(matern_cov, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(average_mobile, m)?)?;
    m.add_function(wrap_pyfunction!(run_mission, m)?)?;
    m.add_function(wrap_pyfunction!(test_split, m)?)?;
    m.add_function(wrap_pyfunction!(compute_mae, m)?)?;
    Ok(())
}
