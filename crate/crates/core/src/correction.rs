//! Post-correction mechanisms applied to a base agent-demand field:
//! multiplicative with renormalization, multiplicative without (which
//! intentionally breaks conservation), a conservation-preserving additive
//! blend, and a random-noise control.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use crate::auxiliary::{
    combine_factors, ntl_factor, prox_factor, CorrectionFactorField, FactorKind, FactorParams,
};
use crate::error::Result;
use crate::model::{AgentId, Scenario};
use crate::scalar::Scalar;
use crate::weighting::AgentDemandField;

/// Post-correction mechanism selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorrectionMode {
    MultiplicativeRenorm,
    MultiplicativeRaw,
    AdditiveRenorm,
    NoiseRenorm,
}

/// Knobs of the correction step.
#[derive(Clone, Copy, Debug)]
pub struct CorrectionConfig {
    pub mode: CorrectionMode,
    pub noise_repeats: usize,
    pub noise_seed: u64,
    pub additive_gain: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            mode: CorrectionMode::MultiplicativeRenorm,
            noise_repeats: 10,
            noise_seed: 0,
            additive_gain: 1.0,
        }
    }
}

/// Multiplies each agent's demand by its factor, then renormalizes within
/// each region so the aggregate demand is conserved. Regions whose base
/// demand is entirely zero keep their zeros and emit a warning.
///
/// An all-ones factor field short-circuits to a clone of the base, so
/// zero-intensity corrections are bit-identical to no correction.
pub fn correct_multiplicative_renorm<F: Scalar>(
    base: &AgentDemandField<F>,
    factors: &CorrectionFactorField<F>,
    scenario: &Scenario<F>,
) -> Result<AgentDemandField<F>> {
    if factors.is_identity() {
        return Ok(base.clone());
    }
    let mut demand = BTreeMap::new();
    let mut warnings = Vec::new();
    for region in &scenario.regions {
        let agents: Vec<_> = scenario.agents_in(region.id).collect();
        let mut weighted = Vec::with_capacity(agents.len());
        let mut denom = F::zero();
        for agent in &agents {
            let d = *base
                .demand
                .get(&agent.id)
                .ok_or(crate::error::Error::MissingAgent(agent.id.0))?;
            let f = *factors
                .factor
                .get(&agent.id)
                .ok_or(crate::error::Error::MissingAgent(agent.id.0))?;
            let w = d * f;
            weighted.push((agent.id, w));
            denom += w;
        }
        if denom > F::zero() {
            for (id, w) in weighted {
                demand.insert(id, region.demand_total * w / denom);
            }
        } else {
            warnings.push(format!(
                "region {}: base demand is all zero, nothing to redistribute",
                region.id
            ));
            for (id, _) in weighted {
                demand.insert(id, F::zero());
            }
        }
    }
    let mut field = AgentDemandField::new(demand, format!("{}+mult", base.method_label));
    field.warnings = warnings;
    Ok(field)
}

/// Raw multiplicative scaling without renormalization. The result is tagged
/// non-conserving; downstream conservation checks reject it by design.
pub fn correct_multiplicative_raw<F: Scalar>(
    base: &AgentDemandField<F>,
    factors: &CorrectionFactorField<F>,
    _scenario: &Scenario<F>,
) -> Result<AgentDemandField<F>> {
    let mut demand = BTreeMap::new();
    for (&id, &d) in &base.demand {
        let f = *factors
            .factor
            .get(&id)
            .ok_or(crate::error::Error::MissingAgent(id.0))?;
        demand.insert(id, d * f);
    }
    let mut field = AgentDemandField::new(demand, format!("{}+mult_raw", base.method_label));
    field.conserves = false;
    Ok(field)
}

/// Additive correction: a convex blend of the base demand shares and the
/// factor shares. With `kappa = gain / (1 + gain)` the corrected share is
/// `(1 - kappa)·d/D + kappa·f/Σf`, which conserves the regional total and
/// stays nonnegative for any gain. Gain zero returns the base; infinite gain
/// reduces to pure factor shares.
pub fn correct_additive_renorm<F: Scalar>(
    base: &AgentDemandField<F>,
    factors: &CorrectionFactorField<F>,
    scenario: &Scenario<F>,
    gain: f64,
) -> Result<AgentDemandField<F>> {
    if gain == 0.0 {
        return Ok(base.clone());
    }
    let kappa = if gain.is_infinite() {
        1.0
    } else {
        (gain / (1.0 + gain)).clamp(0.0, 1.0)
    };
    let kappa = F::from_f64_lossy(kappa);
    let one_minus = F::one() - kappa;

    let mut demand = BTreeMap::new();
    for region in &scenario.regions {
        let agents: Vec<_> = scenario.agents_in(region.id).collect();
        let mut factor_sum = F::zero();
        for agent in &agents {
            factor_sum += *factors
                .factor
                .get(&agent.id)
                .ok_or(crate::error::Error::MissingAgent(agent.id.0))?;
        }
        for agent in &agents {
            let d = *base
                .demand
                .get(&agent.id)
                .ok_or(crate::error::Error::MissingAgent(agent.id.0))?;
            let f = factors.factor[&agent.id];
            let share = one_minus * d / region.demand_total + kappa * f / factor_sum;
            demand.insert(agent.id, region.demand_total * share);
        }
    }
    Ok(AgentDemandField::new(
        demand,
        format!("{}+add", base.method_label),
    ))
}

/// Log-normal factor fields whose log-mean and log-variance match an
/// empirical reference field, sampled independently per agent. The agent
/// order of the scenario fixes the sampling order, so repeats are
/// reproducible given the seed.
pub fn noise_factor_fields<F: Scalar>(
    scenario: &Scenario<F>,
    reference: &CorrectionFactorField<F>,
    repeats: usize,
    seed: u64,
) -> Result<Vec<CorrectionFactorField<F>>> {
    let logs: Vec<f64> = scenario
        .agents
        .iter()
        .map(|a| {
            reference
                .factor
                .get(&a.id)
                .map(|f| f.to_f64_lossy().ln())
                .ok_or(crate::error::Error::MissingAgent(a.id.0))
        })
        .collect::<Result<_>>()?;
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();

    let mut rng = StdRng::seed_from_u64(seed);
    let mut fields = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let factor: BTreeMap<AgentId, F> = if sigma > 0.0 {
            let normal = Normal::new(mu, sigma).expect("finite moments");
            scenario
                .agents
                .iter()
                .map(|a| (a.id, F::from_f64_lossy(normal.sample(&mut rng).exp())))
                .collect()
        } else {
            scenario
                .agents
                .iter()
                .map(|a| (a.id, F::from_f64_lossy(mu.exp())))
                .collect()
        };
        fields.push(CorrectionFactorField {
            factor,
            kind: FactorKind::Noise,
            params: FactorParams {
                noise_seed: Some(seed),
                ..FactorParams::default()
            },
        });
    }
    Ok(fields)
}

/// Random-noise control: draws i.i.d. log-normal factors moment-matched to
/// the combined NTL×Proximity field of the same scenario and applies the
/// renormalized multiplicative correction once per repeat.
pub fn correct_noise_renorm<F: Scalar>(
    base: &AgentDemandField<F>,
    scenario: &Scenario<F>,
    config: &CorrectionConfig,
) -> Result<Vec<AgentDemandField<F>>> {
    let ntl = ntl_factor(scenario, 1.0)?;
    let prox = prox_factor(scenario, 2.0)?;
    let combined = combine_factors(&ntl, &prox, 1.0)?;
    correct_noise_renorm_against(base, scenario, &combined, config)
}

/// Same as [`correct_noise_renorm`] but moment-matching a caller-supplied
/// reference field.
pub fn correct_noise_renorm_against<F: Scalar>(
    base: &AgentDemandField<F>,
    scenario: &Scenario<F>,
    reference: &CorrectionFactorField<F>,
    config: &CorrectionConfig,
) -> Result<Vec<AgentDemandField<F>>> {
    let fields = noise_factor_fields(scenario, reference, config.noise_repeats, config.noise_seed)?;
    fields
        .iter()
        .map(|f| correct_multiplicative_renorm(base, f, scenario))
        .collect()
}
