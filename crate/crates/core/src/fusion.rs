//! Measurement fusion: collapses repeated static and mobile readings of a
//! plot into a single observation with an effective variance.
//!
//! Mobile readings of a plot are averaged into one equivalent measurement;
//! when a static reading also exists the two are merged as the product of
//! their Gaussian densities, i.e. a precision-weighted mean whose variance
//! drops below both source variances. Everything here is a pure function
//! over the measurement log, so fusion is recomputed from scratch each
//! iteration rather than updated incrementally.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::PlotId;
use crate::gp::NoiseModel;

/// Variance bookkeeping for the mobile average.
///
/// `Fixed` keeps the averaged measurement at the single-reading variance
/// σ_m²; `Scaled` uses σ_m²/n. Fixed is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MobileAvgVariance {
    #[default]
    Fixed,
    Scaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    Static,
    Mobile,
}

/// One sensor reading of a plot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub plot: PlotId,
    pub value: f64,
    pub kind: MeasurementKind,
}

/// A plot's merged target value with its effective variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedObservation {
    pub plot: PlotId,
    pub value: f64,
    pub variance: f64,
    pub n_mobile: usize,
    pub has_static: bool,
}

/// Mean of the mobile readings with the variance rule selected by `mode`.
pub fn average_mobile(
    readings: &[f64],
    noise: &NoiseModel,
    mode: MobileAvgVariance,
) -> Result<(f64, f64)> {
    if readings.is_empty() {
        return Err(Error::invalid("average_mobile on an empty reading list"));
    }
    if readings.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("non-finite mobile reading"));
    }
    let n = readings.len() as f64;
    // summation over a sorted copy makes the result independent of log order
    let mut sorted = readings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let variance = match mode {
        MobileAvgVariance::Fixed => noise.mobile_var(),
        MobileAvgVariance::Scaled => noise.mobile_var() / n,
    };
    Ok((mean, variance))
}

fn precision_fuse(a: f64, var_a: f64, b: f64, var_b: f64) -> (f64, f64) {
    let value = (a / var_a + b / var_b) / (1.0 / var_a + 1.0 / var_b);
    let variance = var_a * var_b / (var_a + var_b);
    (value, variance)
}

/// Product-of-densities merge of one static and one (averaged) mobile
/// reading: the precision-weighted mean, with variance
/// σ_s²·σ_m²/(σ_s²+σ_m²).
pub fn fuse(static_value: f64, mobile_value: f64, noise: &NoiseModel) -> Result<(f64, f64)> {
    if !static_value.is_finite() || !mobile_value.is_finite() {
        return Err(Error::invalid("non-finite value passed to fuse"));
    }
    Ok(precision_fuse(
        static_value,
        noise.static_var(),
        mobile_value,
        noise.mobile_var(),
    ))
}

/// Folds a measurement log into one fused observation per plot.
///
/// Per plot: mobile readings are averaged first; repeated static readings
/// (a site re-selected across iterations) are averaged at variance σ_s²;
/// if both kinds exist the two averages are precision-fused. The output is
/// independent of log order.
pub fn ingest(
    log: &[Measurement],
    noise: &NoiseModel,
    n_plots: usize,
    mode: MobileAvgVariance,
) -> Result<BTreeMap<PlotId, FusedObservation>> {
    let mut statics: BTreeMap<PlotId, Vec<f64>> = BTreeMap::new();
    let mut mobiles: BTreeMap<PlotId, Vec<f64>> = BTreeMap::new();
    for m in log {
        if m.plot.0 >= n_plots {
            return Err(Error::invalid(format!(
                "measurement references unknown plot {} (field has {n_plots} plots)",
                m.plot
            )));
        }
        match m.kind {
            MeasurementKind::Static => statics.entry(m.plot).or_default().push(m.value),
            MeasurementKind::Mobile => mobiles.entry(m.plot).or_default().push(m.value),
        }
    }

    let mut fused = BTreeMap::new();
    let plots: std::collections::BTreeSet<PlotId> =
        statics.keys().chain(mobiles.keys()).copied().collect();
    for plot in plots {
        let static_avg = statics.get(&plot).map(|vals| {
            let mut sorted = vals.clone();
            sorted.sort_by(f64::total_cmp);
            sorted.iter().sum::<f64>() / sorted.len() as f64
        });
        let mobile = mobiles
            .get(&plot)
            .map(|vals| average_mobile(vals, noise, mode))
            .transpose()?;
        let n_mobile = mobiles.get(&plot).map_or(0, Vec::len);
        let (value, variance, has_static) = match (static_avg, mobile) {
            (Some(s), Some((m, m_var))) => {
                let (v, var) = precision_fuse(s, noise.static_var(), m, m_var);
                (v, var, true)
            }
            (Some(s), None) => (s, noise.static_var(), true),
            (None, Some((m, m_var))) => (m, m_var, false),
            (None, None) => unreachable!("plot key came from one of the maps"),
        };
        fused.insert(
            plot,
            FusedObservation {
                plot,
                value,
                variance,
                n_mobile,
                has_static,
            },
        );
    }
    Ok(fused)
}
