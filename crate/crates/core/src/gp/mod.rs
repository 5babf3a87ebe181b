//! Gaussian-process regression over plot feature vectors with a
//! per-sample white-noise term.
//!
//! The covariance between two plots is a Matérn kernel (smoothness fixed
//! at 3/2) over a 4-dimensional feature vector — two location coordinates
//! plus two leaf phenotype features — with one length scale per dimension.
//! Measurement noise enters as a white-noise kernel whose variance is
//! sample-dependent: fused observations carry their own effective variance
//! on the diagonal of the train-train block.
//!
//! A fitted [`GpModel`] is immutable; queries never mutate it, so models
//! can be shared freely across threads.

mod fit;

pub use fit::{fit_hyperparameters, FitConfig, FitOutcome};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Number of input dimensions of the GP: row, column, vegetation index,
/// leaf angle density.
pub const FEATURE_DIM: usize = 4;

/// Matérn smoothness, fixed for this model family.
pub const MATERN_SMOOTHNESS: f64 = 1.5;

const SQRT3: f64 = 1.732_050_807_568_877_2;
/// ln(2·π·e)
const LN_TWO_PI_E: f64 = 2.837_877_066_409_345_4;
/// Base jitter applied to the train-train covariance before factorization,
/// as a fraction of the mean diagonal.
const BASE_JITTER_FRACTION: f64 = 1e-8;
/// Failed factorizations retry with the jitter multiplied by 10, this many
/// times, before giving up.
const MAX_JITTER_RETRIES: usize = 4;

/// A plot's GP input: grid location plus two leaf phenotype features.
///
/// All components must be finite; construction through [`FeatureVector::new`]
/// enforces this.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// (row, col) grid coordinates, in cell units (possibly rescaled).
    pub location: [f64; 2],
    /// Ratio of dry to green leaf area, dimensionless.
    pub vegetation_index: f64,
    /// Mean leaf angle density, dimensionless.
    pub leaf_angle_density: f64,
}

impl FeatureVector {
    pub fn new(location: [f64; 2], vegetation_index: f64, leaf_angle_density: f64) -> Result<Self> {
        let v = FeatureVector {
            location,
            vegetation_index,
            leaf_angle_density,
        };
        if !v.is_finite() {
            return Err(Error::invalid("feature vector has non-finite component"));
        }
        Ok(v)
    }

    pub fn as_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.location[0],
            self.location[1],
            self.vegetation_index,
            self.leaf_angle_density,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|x| x.is_finite())
    }
}

/// Matérn-3/2 kernel hyperparameters with one length scale per input
/// dimension (automatic relevance determination).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    output_scale: f64,
    length_scales: [f64; FEATURE_DIM],
}

impl KernelParams {
    pub fn new(output_scale: f64, length_scales: [f64; FEATURE_DIM]) -> Result<Self> {
        if !(output_scale.is_finite() && output_scale > 0.0) {
            return Err(Error::invalid(format!(
                "output_scale must be positive and finite, got {output_scale}"
            )));
        }
        if length_scales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::invalid(format!(
                "length_scales must be positive and finite, got {length_scales:?}"
            )));
        }
        Ok(KernelParams {
            output_scale,
            length_scales,
        })
    }

    /// Shared length scale across all dimensions.
    pub fn isotropic(output_scale: f64, length_scale: f64) -> Result<Self> {
        KernelParams::new(output_scale, [length_scale; FEATURE_DIM])
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn length_scales(&self) -> &[f64; FEATURE_DIM] {
        &self.length_scales
    }
}

/// Measurement-noise standard deviations of the two sampling modes.
///
/// Mobile measurements are never more accurate than static ones:
/// `0 < static_std <= mobile_std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    static_std: f64,
    mobile_std: f64,
}

impl NoiseModel {
    pub fn new(static_std: f64, mobile_std: f64) -> Result<Self> {
        if !(static_std.is_finite() && mobile_std.is_finite()) {
            return Err(Error::invalid("noise stds must be finite"));
        }
        if static_std <= 0.0 {
            return Err(Error::invalid(format!(
                "static_std must be positive, got {static_std}"
            )));
        }
        if mobile_std < static_std {
            return Err(Error::invalid(format!(
                "mobile_std ({mobile_std}) must be >= static_std ({static_std})"
            )));
        }
        Ok(NoiseModel {
            static_std,
            mobile_std,
        })
    }

    pub fn static_std(&self) -> f64 {
        self.static_std
    }

    pub fn mobile_std(&self) -> f64 {
        self.mobile_std
    }

    pub fn static_var(&self) -> f64 {
        self.static_std * self.static_std
    }

    pub fn mobile_var(&self) -> f64 {
        self.mobile_std * self.mobile_std
    }

    /// Upper bound on any fused per-sample variance.
    pub fn max_var(&self) -> f64 {
        self.static_var().max(self.mobile_var())
    }
}

/// Fused observations feeding the GP: one point per plot, with the
/// effective measurement variance of each target value.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    points: Vec<FeatureVector>,
    targets: Vec<f64>,
    noise_variances: Vec<f64>,
}

impl TrainingSet {
    pub fn new(
        points: Vec<FeatureVector>,
        targets: Vec<f64>,
        noise_variances: Vec<f64>,
        noise: &NoiseModel,
    ) -> Result<Self> {
        if points.len() != targets.len() || points.len() != noise_variances.len() {
            return Err(Error::invalid(format!(
                "training set length mismatch: {} points, {} targets, {} variances",
                points.len(),
                targets.len(),
                noise_variances.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite training point {p:?}")));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("non-finite training target"));
        }
        let max_var = noise.max_var();
        for (i, &v) in noise_variances.iter().enumerate() {
            if !(v.is_finite() && v > 0.0 && v <= max_var) {
                return Err(Error::invalid(format!(
                    "noise variance {v} at index {i} outside (0, {max_var}]"
                )));
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if points[i].as_array() == points[j].as_array() {
                    return Err(Error::invalid(format!(
                        "duplicate feature vectors at indices {i} and {j}; \
                         fuse repeated measurements upstream"
                    )));
                }
            }
        }
        Ok(TrainingSet {
            points,
            targets,
            noise_variances,
        })
    }

    pub fn empty() -> Self {
        TrainingSet::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[FeatureVector] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }
}

/// Posterior of the latent field at a query set: mean vector and a
/// symmetric positive semi-definite covariance matrix.
#[derive(Debug, Clone)]
pub struct PosteriorDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl PosteriorDistribution {
    pub fn variances(&self) -> Vec<f64> {
        (0..self.covariance.nrows())
            .map(|i| self.covariance[(i, i)])
            .collect()
    }
}

fn scaled_sq_dist(a: &FeatureVector, b: &FeatureVector, params: &KernelParams) -> f64 {
    let (a, b) = (a.as_array(), b.as_array());
    let mut s = 0.0;
    for d in 0..FEATURE_DIM {
        let z = (a[d] - b[d]) / params.length_scales[d];
        s += z * z;
    }
    s
}

fn matern_unchecked(a: &FeatureVector, b: &FeatureVector, params: &KernelParams) -> f64 {
    let r = scaled_sq_dist(a, b, params).sqrt();
    let s2 = params.output_scale * params.output_scale;
    s2 * (1.0 + SQRT3 * r) * (-SQRT3 * r).exp()
}

/// Matérn-3/2 covariance between two feature vectors:
/// `σ²·(1 + √3·r)·exp(−√3·r)` with `r` the length-scale-weighted
/// Euclidean distance. Symmetric, with value in `(0, σ²]`.
pub fn matern_cov(a: &FeatureVector, b: &FeatureVector, params: &KernelParams) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("non-finite input to matern_cov"));
    }
    Ok(matern_unchecked(a, b, params))
}

/// White-noise kernel over training sample indices:
/// the sample's noise variance on the diagonal, zero elsewhere.
pub fn white_noise_cov(i: usize, j: usize, train: &TrainingSet) -> Result<f64> {
    let n = train.len();
    if i >= n || j >= n {
        return Err(Error::invalid(format!(
            "white_noise_cov index ({i}, {j}) out of range for {n} samples"
        )));
    }
    Ok(if i == j { train.noise_variances[i] } else { 0.0 })
}

/// Dense covariance matrix between two point lists: Matérn everywhere,
/// plus the white-noise variances on the diagonal when `train_noise` is
/// given. `train_noise` must only be supplied when `rows` and `cols` are
/// the same training sample list.
pub fn combined_cov_matrix(
    rows: &[FeatureVector],
    cols: &[FeatureVector],
    params: &KernelParams,
    train_noise: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    if rows.iter().chain(cols.iter()).any(|p| !p.is_finite()) {
        return Err(Error::invalid("non-finite point in covariance input"));
    }
    if let Some(noise) = train_noise {
        if rows.len() != cols.len() || noise.len() != rows.len() {
            return Err(Error::invalid(format!(
                "train_noise requires square covariance: {} rows, {} cols, {} variances",
                rows.len(),
                cols.len(),
                noise.len()
            )));
        }
    }
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            m[(i, j)] = matern_unchecked(&rows[i], &cols[j], params);
        }
    }
    if let Some(noise) = train_noise {
        for (i, &v) in noise.iter().enumerate() {
            m[(i, i)] += v;
        }
    }
    Ok(m)
}

/// Symmetric kernel matrix over one point list, built mirrored so the
/// result is bitwise symmetric.
fn symmetric_cov_matrix(points: &[FeatureVector], params: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let k = matern_unchecked(&points[i], &points[j], params);
            m[(i, j)] = k;
            m[(j, i)] = k;
        }
    }
    m
}

/// Cholesky factorization with the jitter ladder.
///
/// With `pre_jitter`, the base jitter (1e-8 of the mean diagonal) is added
/// before the first attempt — the policy for train-train covariances. On
/// failure the jitter grows tenfold, up to [`MAX_JITTER_RETRIES`] times;
/// the error reports every level tried. Returns the factorization and the
/// jitter that was actually applied.
pub(crate) fn cholesky_with_jitter(
    base: &DMatrix<f64>,
    pre_jitter: bool,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = base.nrows();
    assert!(n > 0, "cannot factorize an empty matrix");
    let mean_diag = base.trace() / n as f64;
    let unit = BASE_JITTER_FRACTION * mean_diag.abs().max(f64::MIN_POSITIVE);
    let mut levels: Vec<f64> = Vec::new();
    if !pre_jitter {
        levels.push(0.0);
    }
    let mut j = unit;
    for _ in 0..=MAX_JITTER_RETRIES {
        levels.push(j);
        j *= 10.0;
    }
    for &jitter in &levels {
        let mut m = base.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
    }
    Err(Error::Numerical(format!(
        "cholesky factorization of {n}x{n} covariance failed; attempted jitter levels {levels:?}"
    )))
}

fn ln_det_from_cholesky(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let mut s = 0.0;
    for i in 0..l.nrows() {
        s += l[(i, i)].ln();
    }
    2.0 * s
}

/// Log marginal likelihood of the targets under the kernel + white-noise
/// covariance: `−½·yᵀΣ⁻¹y − ½·log det Σ − (n/2)·log 2π`.
pub fn log_marginal_likelihood(train: &TrainingSet, params: &KernelParams) -> Result<f64> {
    let y = DVector::from_column_slice(train.targets());
    log_marginal_likelihood_with(train, params, &y)
}

pub(crate) fn log_marginal_likelihood_with(
    train: &TrainingSet,
    params: &KernelParams,
    y: &DVector<f64>,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::invalid(
            "log marginal likelihood of an empty training set",
        ));
    }
    let sigma = combined_cov_matrix(
        train.points(),
        train.points(),
        params,
        Some(train.noise_variances()),
    )?;
    let (chol, _) = cholesky_with_jitter(&sigma, true)?;
    let alpha = chol.solve(y);
    let n = train.len() as f64;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * ln_det_from_cholesky(&chol) - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// A fitted Gaussian-process model: hyperparameters, training data, and
/// the factorized train-train covariance, answering posterior and entropy
/// queries.
///
/// Targets are regressed after subtracting `target_shift` (the running
/// mean of observed targets, in mission use); predictions add it back.
#[derive(Debug, Clone)]
pub struct GpModel {
    params: KernelParams,
    train: TrainingSet,
    target_shift: f64,
    factor: Option<Factorized>,
}

#[derive(Debug, Clone)]
struct Factorized {
    chol: Cholesky<f64, Dyn>,
    /// Lower-triangular factor, kept for half-solves.
    l: DMatrix<f64>,
    /// Σ⁻¹·(y − shift)
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Model with no observations: posterior equals the prior.
    pub fn prior(params: KernelParams) -> Self {
        GpModel {
            params,
            train: TrainingSet::empty(),
            target_shift: 0.0,
            factor: None,
        }
    }

    /// Factorizes the train-train covariance (with the jitter ladder) and
    /// precomputes the regression weights.
    pub fn fit(train: TrainingSet, params: KernelParams, target_shift: f64) -> Result<Self> {
        if !target_shift.is_finite() {
            return Err(Error::invalid("target_shift must be finite"));
        }
        if train.is_empty() {
            let mut m = GpModel::prior(params);
            m.target_shift = target_shift;
            return Ok(m);
        }
        let sigma = combined_cov_matrix(
            train.points(),
            train.points(),
            &params,
            Some(train.noise_variances()),
        )?;
        let (chol, jitter) = cholesky_with_jitter(&sigma, true)?;
        let centered = DVector::from_iterator(
            train.len(),
            train.targets().iter().map(|y| y - target_shift),
        );
        let alpha = chol.solve(&centered);
        let l = chol.l();
        Ok(GpModel {
            params,
            train,
            target_shift,
            factor: Some(Factorized {
                chol,
                l,
                alpha,
                jitter,
            }),
        })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn train(&self) -> &TrainingSet {
        &self.train
    }

    pub fn target_shift(&self) -> f64 {
        self.target_shift
    }

    /// Jitter applied to the train-train covariance, if fitted.
    pub fn jitter(&self) -> Option<f64> {
        self.factor.as_ref().map(|f| f.jitter)
    }

    /// Log marginal likelihood of the centered targets under this model's
    /// hyperparameters.
    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        let f = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::invalid("log marginal likelihood of an empty model"))?;
        let centered = DVector::from_iterator(
            self.train.len(),
            self.train.targets().iter().map(|y| y - self.target_shift),
        );
        let n = self.train.len() as f64;
        Ok(-0.5 * centered.dot(&f.alpha)
            - 0.5 * ln_det_from_cholesky(&f.chol)
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// Posterior of the latent field at the query points.
    ///
    /// The train-train covariance includes the white-noise diagonal; the
    /// query-query block does not (predictions are of the latent function,
    /// not of noisy re-measurements). With no training data this returns
    /// the prior.
    pub fn posterior(&self, query: &[FeatureVector]) -> Result<PosteriorDistribution> {
        if query.is_empty() {
            return Err(Error::invalid("posterior of an empty query set"));
        }
        if query.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite query point"));
        }
        let m = query.len();
        let k_aa = symmetric_cov_matrix(query, &self.params);
        let Some(f) = self.factor.as_ref() else {
            return Ok(PosteriorDistribution {
                mean: DVector::from_element(m, self.target_shift),
                covariance: k_aa,
            });
        };
        let k_da = combined_cov_matrix(self.train.points(), query, &self.params, None)?;
        let v = f
            .l
            .solve_lower_triangular(&k_da)
            .ok_or_else(|| Error::Numerical("singular cholesky factor in posterior".into()))?;
        let mean = k_da.tr_mul(&f.alpha).add_scalar(self.target_shift);
        let mut cov = k_aa - v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok(PosteriorDistribution {
            mean,
            covariance: cov,
        })
    }

    /// Posterior covariance of `query` after conditioning on the training
    /// set *plus* a set of planned measurement sites that have no target
    /// value yet — only their features and the noise variance their future
    /// measurement will carry. Covariances need no targets, so planned
    /// sites can be conditioned on before being measured.
    pub fn conditional_covariance(
        &self,
        query: &[FeatureVector],
        planned: &[(FeatureVector, f64)],
    ) -> Result<DMatrix<f64>> {
        if query.is_empty() {
            return Err(Error::invalid("conditional covariance of an empty query"));
        }
        if planned.is_empty() {
            return Ok(self.posterior(query)?.covariance);
        }
        let mut points: Vec<FeatureVector> = self.train.points().to_vec();
        let mut noise: Vec<f64> = self.train.noise_variances().to_vec();
        for (p, v) in planned {
            points.push(*p);
            noise.push(*v);
        }
        let sigma = combined_cov_matrix(&points, &points, &self.params, Some(&noise))?;
        let (chol, _) = cholesky_with_jitter(&sigma, true)?;
        let k_da = combined_cov_matrix(&points, query, &self.params, None)?;
        let v = chol
            .l()
            .solve_lower_triangular(&k_da)
            .ok_or_else(|| Error::Numerical("singular cholesky factor in conditioning".into()))?;
        let mut cov = symmetric_cov_matrix(query, &self.params) - v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok(cov)
    }

    /// Differential entropy of the posterior at `set_a`:
    /// `½·log((2πe)^|A|·det Σ_{A|D})`, with `added_noise` (the variance of
    /// the planned measurement type) added to the diagonal first when the
    /// entropy is over noisy observables rather than the latent field.
    pub fn entropy(&self, set_a: &[FeatureVector], added_noise: Option<f64>) -> Result<f64> {
        let cov = self.posterior(set_a)?.covariance;
        entropy_of_covariance(cov, added_noise)
    }

    /// [`GpModel::entropy`] with additional planned sites in the
    /// conditioning set; see [`GpModel::conditional_covariance`].
    pub fn entropy_with_planned(
        &self,
        set_a: &[FeatureVector],
        planned: &[(FeatureVector, f64)],
        added_noise: Option<f64>,
    ) -> Result<f64> {
        let cov = self.conditional_covariance(set_a, planned)?;
        entropy_of_covariance(cov, added_noise)
    }
}

/// Entropy of a Gaussian with the given covariance, optionally with a
/// constant noise variance added to the diagonal.
pub fn entropy_of_covariance(mut cov: DMatrix<f64>, added_noise: Option<f64>) -> Result<f64> {
    let m = cov.nrows();
    if m == 0 {
        return Err(Error::invalid("entropy of an empty set"));
    }
    if let Some(v) = added_noise {
        for i in 0..m {
            cov[(i, i)] += v;
        }
    }
    let (chol, _) = cholesky_with_jitter(&cov, false)?;
    Ok(0.5 * (m as f64 * LN_TWO_PI_E + ln_det_from_cholesky(&chol)))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Draws one sample from the GP prior at `points` given pre-drawn standard
/// normal variates `z`: returns `L·z` for the jittered kernel Cholesky.
pub fn sample_prior(points: &[FeatureVector], params: &KernelParams, z: &[f64]) -> Result<Vec<f64>> {
    if points.len() != z.len() {
        return Err(Error::invalid("sample_prior: points/z length mismatch"));
    }
    if points.is_empty() {
        return Ok(Vec::new());
    }
    let k = symmetric_cov_matrix(points, params);
    let (chol, _) = cholesky_with_jitter(&k, true)?;
    let zv = DVector::from_column_slice(z);
    Ok((chol.l() * zv).iter().copied().collect())
}
