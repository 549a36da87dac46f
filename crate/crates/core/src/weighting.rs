//! Base demand-weighting methods: Uniform, the land-use consumption-share
//! rule (GPM), and application of externally supplied per-source weights.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{dominant_class, AgentId, RegionId, Scenario, CONSERVATION_REL_TOL};
use crate::scalar::Scalar;

/// Per-agent allocation weights grouped by source. One source per region.
pub type SourceWeights<F> = BTreeMap<RegionId, BTreeMap<AgentId, F>>;

/// Agent-level demands produced by one weighting method.
#[derive(Clone, Debug)]
pub struct AgentDemandField<F> {
    pub demand: BTreeMap<AgentId, F>,
    pub method_label: String,
    /// False only for corrections that intentionally break per-region
    /// conservation, in which case [`validate_conservation`] is skipped.
    pub conserves: bool,
    /// Non-fatal anomalies recorded while producing the field.
    pub warnings: Vec<String>,
}

impl<F: Scalar> AgentDemandField<F> {
    pub fn new(demand: BTreeMap<AgentId, F>, method_label: impl Into<String>) -> Self {
        Self {
            demand,
            method_label: method_label.into(),
            conserves: true,
            warnings: Vec::new(),
        }
    }

    /// Checks that per-region sums match each region's aggregate demand
    /// within [`CONSERVATION_REL_TOL`] relative (floored by the scalar's
    /// resolution over the summed terms). Fields tagged non-conserving fail
    /// by construction and are rejected here.
    pub fn validate_conservation(&self, scenario: &Scenario<F>) -> Result<()> {
        if !self.conserves {
            return Err(Error::InvalidScenario(format!(
                "field `{}` is tagged non-conserving",
                self.method_label
            )));
        }
        for region in &scenario.regions {
            let mut sum = F::zero();
            let mut terms = 0;
            for agent in scenario.agents_in(region.id) {
                sum += *self
                    .demand
                    .get(&agent.id)
                    .ok_or(Error::MissingAgent(agent.id.0))?;
                terms += 1;
            }
            let tol = crate::model::sum_tolerance::<F>(CONSERVATION_REL_TOL, terms);
            if ((sum - region.demand_total) / region.demand_total).abs() > tol {
                return Err(Error::InvalidScenario(format!(
                    "field `{}` sums to {sum} in region {}, expected {}",
                    self.method_label, region.id, region.demand_total
                )));
            }
        }
        Ok(())
    }
}

/// Splits each region's demand equally among its agents.
pub fn weight_uniform<F: Scalar>(scenario: &Scenario<F>) -> AgentDemandField<F> {
    let mut counts: BTreeMap<RegionId, usize> = BTreeMap::new();
    for agent in &scenario.agents {
        *counts.entry(agent.region_id).or_insert(0) += 1;
    }
    let shares: BTreeMap<RegionId, F> = scenario
        .regions
        .iter()
        .map(|r| {
            let n = F::from_usize(counts.get(&r.id).copied().unwrap_or(0).max(1)).unwrap();
            (r.id, r.demand_total / n)
        })
        .collect();
    let demand = scenario
        .agents
        .iter()
        .map(|a| (a.id, shares[&a.region_id]))
        .collect();
    AgentDemandField::new(demand, "uniform")
}

/// Weights each agent by the regional consumption share of its dominant
/// land-use class, normalized per region to conserve the aggregate. If every
/// raw weight in a region is zero the region falls back to a uniform split.
pub fn weight_gpm<F: Scalar>(scenario: &Scenario<F>) -> AgentDemandField<F> {
    let mut demand = BTreeMap::new();
    let mut warnings = Vec::new();
    for region in &scenario.regions {
        let agents: Vec<_> = scenario.agents_in(region.id).collect();
        let raw: Vec<F> = agents
            .iter()
            .map(|a| region.consumption_shares[dominant_class(&a.landuse)])
            .collect();
        let total: F = raw.iter().copied().sum();
        if total > F::zero() {
            for (agent, w) in agents.iter().zip(&raw) {
                demand.insert(agent.id, region.demand_total * *w / total);
            }
        } else {
            warnings.push(format!(
                "region {}: all consumption-share weights are zero, using uniform split",
                region.id
            ));
            let share = region.demand_total / F::from_usize(agents.len()).unwrap();
            for agent in &agents {
                demand.insert(agent.id, share);
            }
        }
    }
    let mut field = AgentDemandField::new(demand, "gpm");
    field.warnings = warnings;
    field
}

/// Turns per-source allocation weights into agent demands,
/// `d_a = w_{s(a),a} · D_{r(a)}`. Each source's weights must be nonnegative
/// and sum to one within 1e-9.
pub fn apply_weights<F: Scalar>(
    weights: &SourceWeights<F>,
    scenario: &Scenario<F>,
    label: impl Into<String>,
) -> Result<AgentDemandField<F>> {
    let mut demand = BTreeMap::new();
    for region in &scenario.regions {
        let source = weights
            .get(&region.id)
            .ok_or(Error::MissingAgent(region.id.0))?;
        let mut sum = F::zero();
        for (&agent_id, &w) in source {
            if !w.is_finite() || w < F::zero() {
                return Err(Error::WeightsNotNormalized {
                    source_id: region.id.0,
                    sum: w.to_f64_lossy(),
                });
            }
            sum += w;
            demand.insert(agent_id, w * region.demand_total);
        }
        let tol = crate::model::sum_tolerance::<F>(1e-9, source.len());
        if (sum - F::one()).abs() > tol {
            return Err(Error::WeightsNotNormalized {
                source_id: region.id.0,
                sum: sum.to_f64_lossy(),
            });
        }
    }
    Ok(AgentDemandField::new(demand, label))
}
