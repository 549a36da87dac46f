//! Per-region accuracy metrics, marginal effects, stratified breakdowns,
//! jackknife leave-one-out analysis, and the paired statistical tests built
//! on [`crate::stats`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{RegionId, Scenario, LANDUSE_CLASSES};
use crate::scalar::Scalar;
use crate::stats::{mean, pearson, sample_std};

/// RMSE, MAE and Pearson correlation of one region's substation predictions.
/// Correlation is missing when either vector has zero variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMetrics<F> {
    pub region_id: RegionId,
    pub rmse: F,
    pub mae: F,
    pub corr: Option<F>,
}

/// Computes the three substation-level metrics for one region.
pub fn region_metrics<F: Scalar>(
    region_id: RegionId,
    predicted: &[F],
    actual: &[F],
) -> Result<RegionMetrics<F>> {
    if predicted.is_empty() {
        return Err(Error::Stats(format!("region {region_id} has no substations")));
    }
    if predicted.len() != actual.len() {
        return Err(Error::Stats(format!(
            "region {region_id}: predicted {} vs actual {} substations",
            predicted.len(),
            actual.len()
        )));
    }
    let n = F::from_usize(predicted.len()).unwrap();
    let mut sq = F::zero();
    let mut abs = F::zero();
    for (&p, &a) in predicted.iter().zip(actual) {
        let e = p - a;
        sq += e * e;
        abs += e.abs();
    }
    let corr = if predicted.len() >= 2 {
        pearson(predicted, actual)?
    } else {
        None
    };
    Ok(RegionMetrics {
        region_id,
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        corr,
    })
}

/// Change in aggregate RMSE when an information layer is added to a base.
#[derive(Clone, Copy, Debug)]
pub struct MarginalEffect {
    pub delta: f64,
    pub percent: f64,
}

/// `Δ = RMSE(base + layer) − RMSE(base)`, with the percent change relative
/// to the base. Negative values are improvements.
pub fn marginal_effect(base_rmse: f64, augmented_rmse: f64) -> MarginalEffect {
    let delta = augmented_rmse - base_rmse;
    MarginalEffect {
        delta,
        percent: 100.0 * delta / base_rmse,
    }
}

/// Mean and inter-region sample standard deviation of one metric, with the
/// count of regions whose value was missing.
#[derive(Clone, Copy, Debug, Default)]
pub struct AggregateStat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub n_missing: usize,
}

pub fn aggregate_stat(values: &[Option<f64>]) -> AggregateStat {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    AggregateStat {
        mean: mean(&present).unwrap_or(f64::NAN),
        std: sample_std(&present).unwrap_or(0.0),
        n: present.len(),
        n_missing: values.len() - present.len(),
    }
}

/// Configurable breakpoints for the density × diversity stratification.
#[derive(Clone, Copy, Debug)]
pub struct StratifyBreaks {
    /// Density ρ = D_r / area in MVA/km²: low ≤ first, high ≥ second.
    pub density: (f64, f64),
    /// Shannon-entropy split: low ≤ break, high otherwise.
    pub entropy: f64,
}

impl Default for StratifyBreaks {
    fn default() -> Self {
        // density terciles at 0.27 / 0.41 MVA·km⁻², diversity split at H ≈ 1.0
        Self {
            density: (0.27, 0.41),
            entropy: 1.02,
        }
    }
}

impl StratifyBreaks {
    /// Data-driven breaks: density terciles and entropy median of the
    /// scenario's regions.
    pub fn from_scenario<F: Scalar>(scenario: &Scenario<F>) -> Self {
        let mut densities: Vec<f64> = scenario
            .regions
            .iter()
            .map(|r| (r.demand_total / r.area).to_f64_lossy())
            .collect();
        densities.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let n = densities.len();
        let lo = densities[(n.saturating_sub(1)) / 3];
        let hi = densities[(2 * n.saturating_sub(1)).div_euclid(3).min(n - 1)];
        let mut entropies: Vec<f64> = scenario
            .regions
            .iter()
            .map(|r| region_landuse_entropy(scenario, r.id).to_f64_lossy())
            .collect();
        entropies.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Self {
            density: (lo, hi),
            entropy: entropies[(n - 1) / 2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DensityLevel {
    Low,
    Mid,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DiversityLevel {
    Low,
    High,
}

/// One cell of the stratified RMSE table.
#[derive(Clone, Debug)]
pub struct StratumCell {
    pub density: DensityLevel,
    pub diversity: DiversityLevel,
    pub n: usize,
    pub mean_rmse: f64,
    pub region_ids: Vec<RegionId>,
}

/// Shannon entropy (natural log) of the region-mean land-use vector.
pub fn region_landuse_entropy<F: Scalar>(scenario: &Scenario<F>, region: RegionId) -> F {
    let mut sums = [F::zero(); LANDUSE_CLASSES];
    let mut count = 0usize;
    for agent in scenario.agents_in(region) {
        for (k, &v) in agent.landuse.iter().enumerate() {
            sums[k] += v;
        }
        count += 1;
    }
    if count == 0 {
        return F::zero();
    }
    let n = F::from_usize(count).unwrap();
    let mut h = F::zero();
    for &s in &sums {
        let p = s / n;
        if p > F::zero() {
            h -= p * p.ln();
        }
    }
    h
}

/// Cross-stratifies per-region RMSE by load density and land-use diversity.
pub fn stratify<F: Scalar>(
    region_rmse: &BTreeMap<RegionId, F>,
    scenario: &Scenario<F>,
    breaks: &StratifyBreaks,
) -> Result<Vec<StratumCell>> {
    let mut cells: BTreeMap<(DensityLevel, DiversityLevel), (Vec<f64>, Vec<RegionId>)> =
        BTreeMap::new();
    for region in &scenario.regions {
        let rmse = region_rmse
            .get(&region.id)
            .ok_or_else(|| Error::Stats(format!("no RMSE for region {}", region.id)))?
            .to_f64_lossy();
        let rho = (region.demand_total / region.area).to_f64_lossy();
        let density = if rho <= breaks.density.0 {
            DensityLevel::Low
        } else if rho >= breaks.density.1 {
            DensityLevel::High
        } else {
            DensityLevel::Mid
        };
        let h = region_landuse_entropy(scenario, region.id).to_f64_lossy();
        let diversity = if h <= breaks.entropy {
            DiversityLevel::Low
        } else {
            DiversityLevel::High
        };
        let entry = cells.entry((density, diversity)).or_default();
        entry.0.push(rmse);
        entry.1.push(region.id);
    }
    Ok(cells
        .into_iter()
        .map(|((density, diversity), (rmses, region_ids))| StratumCell {
            density,
            diversity,
            n: rmses.len(),
            mean_rmse: mean(&rmses).unwrap_or(f64::NAN),
            region_ids,
        })
        .collect())
}

/// Leave-one-out Pearson correlations plus their min and spread.
#[derive(Clone, Debug)]
pub struct JackknifeSummary<F> {
    /// One estimate per left-out index; missing when the subset degenerates.
    pub estimates: Vec<Option<F>>,
    pub min: Option<F>,
    pub std: Option<F>,
}

/// Recomputes the correlation after deleting each point in turn.
pub fn jackknife_loo_corr<F: Scalar>(predicted: &[F], actual: &[F]) -> Result<JackknifeSummary<F>> {
    if predicted.len() != actual.len() {
        return Err(Error::Stats("length mismatch".into()));
    }
    if predicted.len() < 4 {
        return Err(Error::Stats(format!(
            "jackknife needs at least 4 points, got {}",
            predicted.len()
        )));
    }
    let mut estimates = Vec::with_capacity(predicted.len());
    for skip in 0..predicted.len() {
        let p: Vec<F> = predicted
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, &v)| v)
            .collect();
        let a: Vec<F> = actual
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, &v)| v)
            .collect();
        estimates.push(pearson(&p, &a)?);
    }
    let present: Vec<F> = estimates.iter().flatten().copied().collect();
    let min = present
        .iter()
        .copied()
        .fold(None, |acc: Option<F>, v| Some(acc.map_or(v, |m| m.min(v))));
    Ok(JackknifeSummary {
        std: sample_std(&present),
        estimates,
        min,
    })
}
