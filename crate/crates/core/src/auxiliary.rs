//! Auxiliary correction factors (nighttime-light and substation proximity)
//! and prior target distributions derived from them.
//!
//! Both factors share a log-ratio form: the log of the raw signal is scaled
//! by the log of its median over RCI agents, so an agent sitting at the
//! reference median receives a factor of one. Intensity sweeps raise the
//! factor to a power, which is a no-op at exponent zero and the default
//! behavior at exponent one.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{is_rci, Agent, AgentId, Scenario, Substation};
use crate::scalar::Scalar;
use crate::stats::{lower_median, percentile_nearest_rank};
use crate::weighting::SourceWeights;

/// Minimum agent–substation distance entering the proximity score, km.
pub const PROX_DISTANCE_FLOOR_KM: f64 = 0.01;

/// Epsilon used when no RCI agent carries a nonzero radiance.
pub const NTL_FALLBACK_EPSILON: f64 = 0.01;

/// What a factor field encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Ntl,
    Proximity,
    Combined,
    Noise,
}

/// Constants a factor field was built with, kept for provenance.
#[derive(Clone, Debug, Default)]
pub struct FactorParams {
    pub epsilon: Option<f64>,
    pub median: Option<f64>,
    pub gamma: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub noise_seed: Option<u64>,
    /// Set when the degenerate-radiance fallback constants were used.
    pub fallback: bool,
}

/// Strictly positive multiplicative factor per agent.
#[derive(Clone, Debug)]
pub struct CorrectionFactorField<F> {
    pub factor: BTreeMap<AgentId, F>,
    pub kind: FactorKind,
    pub params: FactorParams,
}

impl<F: Scalar> CorrectionFactorField<F> {
    /// True when every factor equals exactly one, i.e. applying the field is
    /// the identity. Zero-intensity sweep levels hit this path.
    pub fn is_identity(&self) -> bool {
        self.factor.values().all(|f| *f == F::one())
    }
}

/// Nighttime-light factor, `log(1 + ntl + ε) / log(1 + median)`, raised to
/// `alpha`. ε is the 5th percentile of nonzero radiance over RCI agents and
/// the median is taken over RCI agents. When no RCI agent is lit, ε falls
/// back to 0.01 and the median widens to all agents, flagged in the params.
pub fn ntl_factor<F: Scalar>(
    scenario: &Scenario<F>,
    alpha: f64,
) -> Result<CorrectionFactorField<F>> {
    let rci_ntl: Vec<F> = scenario
        .agents
        .iter()
        .filter(|a| is_rci(a))
        .map(|a| a.ntl)
        .collect();
    let nonzero: Vec<F> = rci_ntl
        .iter()
        .copied()
        .filter(|v| *v > F::zero())
        .collect();

    let (epsilon, median, fallback) = if nonzero.is_empty() {
        let all: Vec<F> = scenario.agents.iter().map(|a| a.ntl).collect();
        (
            F::from_f64_lossy(NTL_FALLBACK_EPSILON),
            lower_median(&all).unwrap_or(F::zero()),
            true,
        )
    } else {
        (
            percentile_nearest_rank(&nonzero, 0.05).expect("nonzero list is nonempty"),
            lower_median(&rci_ntl).expect("rci list is nonempty"),
            false,
        )
    };
    if median <= F::zero() {
        return Err(Error::DegenerateFactor("ntl"));
    }

    let denom = median.ln_1p();
    let alpha_f = F::from_f64_lossy(alpha);
    let factor = scenario
        .agents
        .iter()
        .map(|a| {
            let base = (a.ntl + epsilon).ln_1p() / denom;
            (a.id, base.powf(alpha_f))
        })
        .collect();
    Ok(CorrectionFactorField {
        factor,
        kind: FactorKind::Ntl,
        params: FactorParams {
            epsilon: Some(epsilon.to_f64_lossy()),
            median: Some(median.to_f64_lossy()),
            alpha: Some(alpha),
            fallback,
            ..FactorParams::default()
        },
    })
}

/// Inverse-distance-power sum over all substations, with the distance
/// clamped at 10 m. Encodes substation-siting density around the agent.
pub fn prox_score<F: Scalar>(agent: &Agent<F>, substations: &[Substation<F>], gamma: f64) -> F {
    let floor = F::from_f64_lossy(PROX_DISTANCE_FLOOR_KM);
    let gamma_f = F::from_f64_lossy(gamma);
    let mut score = F::zero();
    for substation in substations {
        let dx = agent.x - substation.x;
        let dy = agent.y - substation.y;
        let d = (dx * dx + dy * dy).sqrt().max(floor);
        score += d.powf(-gamma_f);
    }
    score
}

/// Proximity scores for every agent of the scenario.
pub fn prox_scores<F: Scalar>(scenario: &Scenario<F>, gamma: f64) -> BTreeMap<AgentId, F> {
    scenario
        .agents
        .iter()
        .map(|a| (a.id, prox_score(a, &scenario.substations, gamma)))
        .collect()
}

/// Proximity factor, `log(1 + prox) / log(1 + median)` with the median over
/// RCI agents.
pub fn prox_factor<F: Scalar>(
    scenario: &Scenario<F>,
    gamma: f64,
) -> Result<CorrectionFactorField<F>> {
    if gamma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "proximity decay exponent must be >= 0, got {gamma}"
        )));
    }
    let scores = prox_scores(scenario, gamma);
    prox_factor_from_scores(scenario, &scores, gamma)
}

/// [`prox_factor`] over precomputed proximity scores, so callers holding a
/// score cache avoid the all-pairs distance pass.
pub fn prox_factor_from_scores<F: Scalar>(
    scenario: &Scenario<F>,
    scores: &BTreeMap<AgentId, F>,
    gamma: f64,
) -> Result<CorrectionFactorField<F>> {
    let rci_scores: Vec<F> = scenario
        .agents
        .iter()
        .filter(|a| is_rci(a))
        .map(|a| scores[&a.id])
        .collect();
    let median = lower_median(&rci_scores).ok_or(Error::DegenerateFactor("proximity"))?;
    if median <= F::zero() {
        return Err(Error::DegenerateFactor("proximity"));
    }
    let denom = median.ln_1p();
    let factor = scenario
        .agents
        .iter()
        .map(|a| (a.id, scores[&a.id].ln_1p() / denom))
        .collect();
    Ok(CorrectionFactorField {
        factor,
        kind: FactorKind::Proximity,
        params: FactorParams {
            median: Some(median.to_f64_lossy()),
            gamma: Some(gamma),
            ..FactorParams::default()
        },
    })
}

/// Joint factor `(f1 · f2)^beta` over a shared agent set.
pub fn combine_factors<F: Scalar>(
    f1: &CorrectionFactorField<F>,
    f2: &CorrectionFactorField<F>,
    beta: f64,
) -> Result<CorrectionFactorField<F>> {
    if f1.factor.len() != f2.factor.len() {
        return Err(Error::FactorKeyMismatch);
    }
    let beta_f = F::from_f64_lossy(beta);
    let mut factor = BTreeMap::new();
    for (&id, &a) in &f1.factor {
        let b = *f2.factor.get(&id).ok_or(Error::FactorKeyMismatch)?;
        factor.insert(id, (a * b).powf(beta_f));
    }
    Ok(CorrectionFactorField {
        factor,
        kind: FactorKind::Combined,
        params: FactorParams {
            beta: Some(beta),
            gamma: f2.params.gamma.or(f1.params.gamma),
            alpha: f1.params.alpha.or(f2.params.alpha),
            ..FactorParams::default()
        },
    })
}

/// Target distribution over each source's RCI agents,
/// `q = log(1 + v) / Σ log(1 + v')`. Sources where every log term is zero
/// fall back to a uniform distribution over their RCI agents. Errors when a
/// source has no RCI agent at all.
pub fn prior_target<F: Scalar>(
    scenario: &Scenario<F>,
    values: &BTreeMap<AgentId, F>,
) -> Result<SourceWeights<F>> {
    let mut targets: SourceWeights<F> = BTreeMap::new();
    for region in &scenario.regions {
        let rci: Vec<&Agent<F>> = scenario.agents_in(region.id).filter(|a| is_rci(a)).collect();
        if rci.is_empty() {
            return Err(Error::InvalidScenario(format!(
                "region {} has no RCI agents for prior targets",
                region.id
            )));
        }
        let mut logs = BTreeMap::new();
        let mut sum = F::zero();
        for agent in &rci {
            let v = *values.get(&agent.id).ok_or(Error::MissingAgent(agent.id.0))?;
            if !v.is_finite() || v < F::zero() {
                return Err(Error::InvalidConfig(format!(
                    "prior value for agent {} must be >= 0",
                    agent.id
                )));
            }
            let term = v.ln_1p();
            logs.insert(agent.id, term);
            sum += term;
        }
        let distribution = if sum > F::zero() {
            logs.into_iter().map(|(id, t)| (id, t / sum)).collect()
        } else {
            let uniform = F::one() / F::from_usize(rci.len()).unwrap();
            rci.iter().map(|a| (a.id, uniform)).collect()
        };
        targets.insert(region.id, distribution);
    }
    Ok(targets)
}
