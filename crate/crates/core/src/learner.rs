//! Trainable allocation model: an affine edge-cost function over agent
//! features, a temperature-scaled per-source softmax, and gradient-descent
//! training on a land-use reconstruction loss plus optional auxiliary prior
//! losses (both forward KL divergences).
//!
//! The feature vector per agent is
//! `[landuse(5), log1p(ntl), log1p(prox), x_std, y_std]` with coordinates
//! standardized per region. Gradients are computed analytically through the
//! softmax–KL chain rule and verified against finite differences in tests.

use std::collections::BTreeMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::auxiliary::{prior_target, prox_scores, CorrectionFactorField};
use crate::error::{Error, Result};
use crate::model::{AgentId, RegionId, Scenario, LANDUSE_CLASSES};
use crate::scalar::Scalar;
use crate::stats::{mean, sample_std, spearman};
use crate::weighting::SourceWeights;

/// Dimension of the agent feature vector.
pub const FEATURE_DIM: usize = 9;

/// Parameter count: one weight per feature plus a bias.
pub const PARAM_DIM: usize = FEATURE_DIM + 1;

/// Floor applied inside logarithms to keep both KL losses finite.
pub const KL_CLAMP: f64 = 1e-12;

/// Proximity decay exponent used for the proximity feature and prior values.
pub const FEATURE_PROX_GAMMA: f64 = 2.0;

/// Parameters of the edge-cost function `c(s,a) = w·φ(a) + b`.
#[derive(Clone, Debug)]
pub struct CostModelParams<F> {
    /// `PARAM_DIM` entries; the last one is the bias.
    pub weights: Vec<F>,
    /// Softmax temperature, fixed (not trained).
    pub temperature: F,
    pub init_seed: u64,
}

impl<F: Scalar> CostModelParams<F> {
    /// Seeded small-random initialization, uniform in (-0.01, 0.01).
    pub fn init(seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let weights = (0..PARAM_DIM)
            .map(|_| F::from_f64_lossy(rng.random_range(-0.01..0.01)))
            .collect();
        Self {
            weights,
            temperature: F::one(),
            init_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != PARAM_DIM {
            return Err(Error::InvalidConfig(format!(
                "expected {PARAM_DIM} parameters, got {}",
                self.weights.len()
            )));
        }
        if !self.temperature.is_finite() || self.temperature <= F::zero() {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_ntl: f64,
    pub lambda_prox: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub convergence_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_ntl: 0.05,
            lambda_prox: 0.05,
            learning_rate: 1.0,
            max_epochs: 300,
            convergence_tol: 1e-7,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_ntl < 0.0 || self.lambda_prox < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !self.convergence_tol.is_finite() || self.convergence_tol < 0.0 {
            return Err(Error::InvalidConfig("convergence_tol must be >= 0".into()));
        }
        Ok(())
    }
}

/// Loss components recorded once per epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord<F> {
    pub landuse: F,
    pub ntl_prior: F,
    pub prox_prior: F,
    pub total: F,
}

/// A trained allocator: final parameters plus the loss trajectory.
#[derive(Clone, Debug)]
pub struct TrainedAllocator<F> {
    pub params: CostModelParams<F>,
    pub loss_trace: Vec<LossRecord<F>>,
    pub converged: bool,
}

/// Agent features grouped by source (region), in deterministic order.
#[derive(Clone, Debug)]
pub struct FeatureSet<F> {
    pub regions: Vec<RegionFeatures<F>>,
}

#[derive(Clone, Debug)]
pub struct RegionFeatures<F> {
    pub region_id: RegionId,
    pub agent_ids: Vec<AgentId>,
    pub features: Vec<[F; FEATURE_DIM]>,
    pub landuse: Vec<[F; LANDUSE_CLASSES]>,
    /// Observed consumption-share vector of the region.
    pub q_true: [F; LANDUSE_CLASSES],
}

/// Builds the feature set from a scenario and precomputed proximity scores.
pub fn build_features<F: Scalar>(
    scenario: &Scenario<F>,
    prox: &BTreeMap<AgentId, F>,
) -> Result<FeatureSet<F>> {
    let by_region = scenario.agents_by_region();
    let mut regions = Vec::with_capacity(scenario.regions.len());
    for region in &scenario.regions {
        let agents = by_region
            .get(&region.id)
            .ok_or_else(|| Error::InvalidScenario(format!("region {} has no agents", region.id)))?;
        let xs: Vec<F> = agents.iter().map(|a| a.x).collect();
        let ys: Vec<F> = agents.iter().map(|a| a.y).collect();
        let (mx, sx) = mean_std_or_unit(&xs);
        let (my, sy) = mean_std_or_unit(&ys);

        let mut agent_ids = Vec::with_capacity(agents.len());
        let mut features = Vec::with_capacity(agents.len());
        let mut landuse = Vec::with_capacity(agents.len());
        for agent in agents {
            let p = *prox.get(&agent.id).ok_or(Error::MissingAgent(agent.id.0))?;
            let mut phi = [F::zero(); FEATURE_DIM];
            phi[..LANDUSE_CLASSES].copy_from_slice(&agent.landuse);
            phi[5] = agent.ntl.ln_1p();
            phi[6] = p.ln_1p();
            phi[7] = (agent.x - mx) / sx;
            phi[8] = (agent.y - my) / sy;
            agent_ids.push(agent.id);
            features.push(phi);
            landuse.push(agent.landuse);
        }
        regions.push(RegionFeatures {
            region_id: region.id,
            agent_ids,
            features,
            landuse,
            q_true: region.consumption_shares,
        });
    }
    Ok(FeatureSet { regions })
}

fn mean_std_or_unit<F: Scalar>(values: &[F]) -> (F, F) {
    let m = mean(values).unwrap_or(F::zero());
    match sample_std(values) {
        Some(s) if s > F::zero() => (m, s),
        _ => (m, F::one()),
    }
}

/// Per-source softmax weights over edge costs, `exp(-c/τ)` normalized within
/// each source, computed with max-subtraction.
pub fn weights_from_features<F: Scalar>(
    params: &CostModelParams<F>,
    features: &FeatureSet<F>,
) -> Vec<Vec<F>> {
    features
        .regions
        .iter()
        .map(|region| {
            let z: Vec<F> = region
                .features
                .iter()
                .map(|phi| -cost(params, phi) / params.temperature)
                .collect();
            softmax(&z)
        })
        .collect()
}

fn cost<F: Scalar>(params: &CostModelParams<F>, phi: &[F; FEATURE_DIM]) -> F {
    let mut c = params.weights[FEATURE_DIM]; // bias
    for (w, x) in params.weights[..FEATURE_DIM].iter().zip(phi) {
        c += *w * *x;
    }
    c
}

fn softmax<F: Scalar>(z: &[F]) -> Vec<F> {
    let zmax = z
        .iter()
        .copied()
        .fold(F::neg_infinity(), |acc, v| acc.max(v));
    let exps: Vec<F> = z.iter().map(|&v| (v - zmax).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Allocation weights keyed by source and agent id.
pub fn allocation_weights<F: Scalar>(
    params: &CostModelParams<F>,
    scenario: &Scenario<F>,
) -> Result<SourceWeights<F>> {
    let prox = prox_scores(scenario, FEATURE_PROX_GAMMA);
    let features = build_features(scenario, &prox)?;
    Ok(allocation_weights_from_features(params, &features))
}

/// Same as [`allocation_weights`] but reusing precomputed features.
pub fn allocation_weights_from_features<F: Scalar>(
    params: &CostModelParams<F>,
    features: &FeatureSet<F>,
) -> SourceWeights<F> {
    let weights = weights_from_features(params, features);
    features
        .regions
        .iter()
        .zip(weights)
        .map(|(region, w)| {
            (
                region.region_id,
                region.agent_ids.iter().copied().zip(w).collect(),
            )
        })
        .collect()
}

/// Land-use reconstruction loss: mean over sources of
/// `KL(q_true ‖ normalize(Σ_a w_a · M_a))`, with the reconstruction clamped
/// below at [`KL_CLAMP`] before normalizing.
pub fn landuse_loss<F: Scalar>(weights: &SourceWeights<F>, scenario: &Scenario<F>) -> Result<F> {
    let prox = prox_scores(scenario, FEATURE_PROX_GAMMA);
    let features = build_features(scenario, &prox)?;
    let per_region = region_weight_vectors(weights, &features)?;
    let mut total = F::zero();
    for (region, w) in features.regions.iter().zip(&per_region) {
        total += landuse_loss_region(region, w).0;
    }
    Ok(total / F::from_usize(features.regions.len()).unwrap())
}

/// Prior loss: mean over sources of `Σ_a q_a · log(q_a / w_a)` with the
/// weights clamped below at [`KL_CLAMP`]. Terms with zero target mass
/// contribute nothing.
pub fn prior_loss<F: Scalar>(
    weights: &SourceWeights<F>,
    targets: &SourceWeights<F>,
) -> Result<F> {
    let clamp = F::from_f64_lossy(KL_CLAMP);
    let mut total = F::zero();
    let mut n = 0usize;
    for (region_id, target) in targets {
        let w = weights
            .get(region_id)
            .ok_or(Error::MissingAgent(region_id.0))?;
        let mut loss = F::zero();
        for (agent_id, &q) in target {
            if q == F::zero() {
                continue;
            }
            let wa = w
                .get(agent_id)
                .copied()
                .ok_or(Error::MissingAgent(agent_id.0))?
                .max(clamp);
            loss += q * (q / wa).ln();
        }
        total += loss;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Stats("prior targets cover no source".into()));
    }
    Ok(total / F::from_usize(n).unwrap())
}

fn region_weight_vectors<F: Scalar>(
    weights: &SourceWeights<F>,
    features: &FeatureSet<F>,
) -> Result<Vec<Vec<F>>> {
    features
        .regions
        .iter()
        .map(|region| {
            let source = weights
                .get(&region.region_id)
                .ok_or(Error::MissingAgent(region.region_id.0))?;
            region
                .agent_ids
                .iter()
                .map(|id| source.get(id).copied().ok_or(Error::MissingAgent(id.0)))
                .collect()
        })
        .collect()
}

/// Returns the per-source loss and dL/dw for one region's land-use term.
fn landuse_loss_region<F: Scalar>(region: &RegionFeatures<F>, w: &[F]) -> (F, Vec<F>) {
    let clamp = F::from_f64_lossy(KL_CLAMP);
    let mut recon = [F::zero(); LANDUSE_CLASSES];
    for (wa, m) in w.iter().zip(&region.landuse) {
        for k in 0..LANDUSE_CLASSES {
            recon[k] += *wa * m[k];
        }
    }
    let clamped: Vec<F> = recon.iter().map(|&u| u.max(clamp)).collect();
    let s: F = clamped.iter().copied().sum();

    let mut loss = F::zero();
    let mut dl_dc = [F::zero(); LANDUSE_CLASSES];
    for k in 0..LANDUSE_CLASSES {
        let q = region.q_true[k];
        let r = clamped[k] / s;
        if q > F::zero() {
            loss += q * (q / r).ln();
        }
        // dL/dc_k = -q_k/c_k + 1/S, gated by whether the clamp is active
        let grad = -q / clamped[k] + F::one() / s;
        dl_dc[k] = if recon[k] > clamp { grad } else { F::zero() };
    }

    let dl_dw = region
        .landuse
        .iter()
        .map(|m| {
            let mut g = F::zero();
            for k in 0..LANDUSE_CLASSES {
                g += dl_dc[k] * m[k];
            }
            g
        })
        .collect();
    (loss, dl_dw)
}

/// Per-region prior loss and dL/dw for one region.
fn prior_loss_region<F: Scalar>(
    region: &RegionFeatures<F>,
    w: &[F],
    target: Option<&BTreeMap<AgentId, F>>,
) -> (F, Vec<F>) {
    let clamp = F::from_f64_lossy(KL_CLAMP);
    let mut loss = F::zero();
    let mut dl_dw = vec![F::zero(); w.len()];
    let Some(target) = target else {
        return (loss, dl_dw);
    };
    for (idx, agent_id) in region.agent_ids.iter().enumerate() {
        let Some(&q) = target.get(agent_id) else {
            continue;
        };
        if q == F::zero() {
            continue;
        }
        let wa = w[idx].max(clamp);
        loss += q * (q / wa).ln();
        if w[idx] > clamp {
            dl_dw[idx] = -q / wa;
        }
    }
    (loss, dl_dw)
}

/// Total loss `L_landuse + λ_ntl·L_ntl + λ_prox·L_prox` and its analytic
/// gradient with respect to the cost-model parameters.
pub fn total_loss_and_grad<F: Scalar>(
    params: &CostModelParams<F>,
    features: &FeatureSet<F>,
    targets_ntl: Option<&SourceWeights<F>>,
    targets_prox: Option<&SourceWeights<F>>,
    lambda_ntl: f64,
    lambda_prox: f64,
) -> Result<(LossRecord<F>, Vec<F>)> {
    let l_ntl = F::from_f64_lossy(lambda_ntl);
    let l_prox = F::from_f64_lossy(lambda_prox);
    let n_regions = F::from_usize(features.regions.len()).unwrap();

    let mut landuse_total = F::zero();
    let mut ntl_total = F::zero();
    let mut prox_total = F::zero();
    let mut grad = vec![F::zero(); PARAM_DIM];

    for region in &features.regions {
        let z: Vec<F> = region
            .features
            .iter()
            .map(|phi| -cost(params, phi) / params.temperature)
            .collect();
        let w = softmax(&z);

        let (land_loss, land_grad) = landuse_loss_region(region, &w);
        let (ntl_loss, ntl_grad) =
            prior_loss_region(region, &w, targets_ntl.and_then(|t| t.get(&region.region_id)));
        let (prox_loss, prox_grad) =
            prior_loss_region(region, &w, targets_prox.and_then(|t| t.get(&region.region_id)));

        landuse_total += land_loss;
        ntl_total += ntl_loss;
        prox_total += prox_loss;

        // dL/dw per agent, combined across loss terms
        let dl_dw: Vec<F> = (0..w.len())
            .map(|i| land_grad[i] + l_ntl * ntl_grad[i] + l_prox * prox_grad[i])
            .collect();

        // softmax chain: dL/dz_a = w_a (g_a - Σ_b w_b g_b); z = -c/τ
        let dot: F = w.iter().zip(&dl_dw).map(|(&wa, &ga)| wa * ga).sum();
        for (i, phi) in region.features.iter().enumerate() {
            let dl_dz = w[i] * (dl_dw[i] - dot);
            let dl_dc = -dl_dz / params.temperature;
            for j in 0..FEATURE_DIM {
                grad[j] += dl_dc * phi[j] / n_regions;
            }
            grad[FEATURE_DIM] += dl_dc / n_regions;
        }
    }

    let record = LossRecord {
        landuse: landuse_total / n_regions,
        ntl_prior: ntl_total / n_regions,
        prox_prior: prox_total / n_regions,
        total: (landuse_total + l_ntl * ntl_total + l_prox * prox_total) / n_regions,
    };
    if !record.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training("non-finite loss or gradient".into()));
    }
    Ok((record, grad))
}

/// Trains the allocator by gradient descent with a step-halving line search.
/// The loss trace is monotone nonincreasing; training stops when the total
/// loss change drops below the tolerance, the line search stalls, or the
/// epoch budget runs out. A zero epoch budget returns the initialization.
pub fn train<F: Scalar>(scenario: &Scenario<F>, config: &TrainConfig) -> Result<TrainedAllocator<F>> {
    let prox = prox_scores(scenario, FEATURE_PROX_GAMMA);
    train_with_prox(scenario, &prox, config)
}

/// [`train`] with caller-supplied proximity scores, so cross-validation can
/// keep features consistent between training and inference scopes.
pub fn train_with_prox<F: Scalar>(
    scenario: &Scenario<F>,
    prox: &BTreeMap<AgentId, F>,
    config: &TrainConfig,
) -> Result<TrainedAllocator<F>> {
    config.validate()?;
    let features = build_features(scenario, prox)?;
    let targets_ntl = if config.lambda_ntl > 0.0 {
        let values: BTreeMap<AgentId, F> = scenario.agents.iter().map(|a| (a.id, a.ntl)).collect();
        Some(prior_target(scenario, &values)?)
    } else {
        None
    };
    let targets_prox = if config.lambda_prox > 0.0 {
        Some(prior_target(scenario, prox)?)
    } else {
        None
    };

    let mut params = CostModelParams::<F>::init(config.seed);
    let evaluate = |p: &CostModelParams<F>| {
        total_loss_and_grad(
            p,
            &features,
            targets_ntl.as_ref(),
            targets_prox.as_ref(),
            config.lambda_ntl,
            config.lambda_prox,
        )
    };

    let (mut record, mut grad) = evaluate(&params)?;
    let init_total = record.total;
    let mut trace = vec![record];
    let mut converged = false;

    for _ in 0..config.max_epochs {
        let mut step = F::from_f64_lossy(config.learning_rate);
        let mut accepted: Option<(CostModelParams<F>, LossRecord<F>, Vec<F>)> = None;
        for _ in 0..40 {
            let candidate = CostModelParams {
                weights: params
                    .weights
                    .iter()
                    .zip(&grad)
                    .map(|(&w, &g)| w - step * g)
                    .collect(),
                temperature: params.temperature,
                init_seed: params.init_seed,
            };
            let (cand_record, cand_grad) = evaluate(&candidate)?;
            if cand_record.total < record.total {
                accepted = Some((candidate, cand_record, cand_grad));
                break;
            }
            step *= F::from_f64_lossy(0.5);
        }
        match accepted {
            Some((new_params, new_record, new_grad)) => {
                if new_record.total > init_total * F::from_f64_lossy(10.0) {
                    return Err(Error::Training(format!(
                        "diverged: loss {} exceeds 10x initial {}",
                        new_record.total, init_total
                    )));
                }
                let delta = (record.total - new_record.total).abs();
                params = new_params;
                record = new_record;
                grad = new_grad;
                trace.push(record);
                if delta < F::from_f64_lossy(config.convergence_tol) {
                    converged = true;
                    break;
                }
            }
            None => {
                // line search exhausted: no descent direction at f64 resolution
                converged = true;
                break;
            }
        }
    }

    Ok(TrainedAllocator {
        params,
        loss_trace: trace,
        converged,
    })
}

/// Spearman correlation between allocation weights and a factor field,
/// within each source. Sources with constant weights or factors report a
/// missing value and are excluded from the mean and standard deviation.
#[derive(Clone, Debug)]
pub struct ProbeSummary {
    pub per_source: BTreeMap<RegionId, Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_missing: usize,
}

pub fn probe_weight_factor_correlation<F: Scalar>(
    weights: &SourceWeights<F>,
    factors: &CorrectionFactorField<F>,
) -> Result<ProbeSummary> {
    let mut per_source = BTreeMap::new();
    let mut observed = Vec::new();
    for (region_id, source) in weights {
        let mut w = Vec::with_capacity(source.len());
        let mut f = Vec::with_capacity(source.len());
        for (agent_id, &wa) in source {
            w.push(wa);
            f.push(
                *factors
                    .factor
                    .get(agent_id)
                    .ok_or(Error::MissingAgent(agent_id.0))?,
            );
        }
        let rho = if w.len() < 2 {
            None
        } else {
            spearman(&w, &f)?.map(|r| r.to_f64_lossy())
        };
        if let Some(r) = rho {
            observed.push(r);
        }
        per_source.insert(*region_id, rho);
    }
    let n_missing = per_source.values().filter(|v| v.is_none()).count();
    Ok(ProbeSummary {
        mean: mean(&observed),
        std: sample_std(&observed),
        per_source,
        n_missing,
    })
}

#[derive(Serialize, Deserialize)]
struct ParamsDocument {
    version: u32,
    seed: u64,
    tau: f64,
    weights: Vec<f64>,
    loss_trace: Vec<[f64; 4]>,
    converged: bool,
}

const PARAMS_DOC_VERSION: u32 = 1;

/// Writes trained parameters as a versioned JSON document.
pub fn save_trained<F: Scalar>(trained: &TrainedAllocator<F>, path: &Path) -> Result<()> {
    let doc = ParamsDocument {
        version: PARAMS_DOC_VERSION,
        seed: trained.params.init_seed,
        tau: trained.params.temperature.to_f64_lossy(),
        weights: trained.params.weights.iter().map(|w| w.to_f64_lossy()).collect(),
        loss_trace: trained
            .loss_trace
            .iter()
            .map(|r| {
                [
                    r.landuse.to_f64_lossy(),
                    r.ntl_prior.to_f64_lossy(),
                    r.prox_prior.to_f64_lossy(),
                    r.total.to_f64_lossy(),
                ]
            })
            .collect(),
        converged: trained.converged,
    };
    let json = serde_json::to_string_pretty(&doc).expect("document serializes");
    std::fs::write(path, json).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads trained parameters written by [`save_trained`].
pub fn load_trained<F: Scalar>(path: &Path) -> Result<TrainedAllocator<F>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: ParamsDocument = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if doc.version != PARAMS_DOC_VERSION {
        return Err(Error::Json {
            path: path.display().to_string(),
            message: format!("unsupported version {}", doc.version),
        });
    }
    let params = CostModelParams {
        weights: doc.weights.into_iter().map(F::from_f64_lossy).collect(),
        temperature: F::from_f64_lossy(doc.tau),
        init_seed: doc.seed,
    };
    params.validate()?;
    Ok(TrainedAllocator {
        params,
        loss_trace: doc
            .loss_trace
            .into_iter()
            .map(|[l, n, p, t]| LossRecord {
                landuse: F::from_f64_lossy(l),
                ntl_prior: F::from_f64_lossy(n),
                prox_prior: F::from_f64_lossy(p),
                total: F::from_f64_lossy(t),
            })
            .collect(),
        converged: doc.converged,
    })
}
