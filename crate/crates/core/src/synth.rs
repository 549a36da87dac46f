//! Synthetic ground-truth scenario generation.
//!
//! Each region is a square tile holding a latent urbanization field (a
//! mixture of Gaussian bumps). True agent demand follows urbanization with
//! multiplicative log-noise; land use, radiance and substation siting all
//! derive from the same field under independent fidelity knobs, so the
//! informativeness of every signal is controlled separately. Region
//! aggregates and substation ground truth are computed from the true agent
//! demands, which makes the Voronoi partition itself error-free by
//! construction.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    aggregate_to_substations, assign_voronoi, dominant_class, Agent, AgentId, Region, RegionId,
    Scenario, Substation, SubstationId, LANDUSE_CLASSES,
};
use crate::scalar::Scalar;
use crate::weighting::AgentDemandField;

/// Side length of each square region tile, km.
pub const TILE_KM: f64 = 30.0;

/// Radiance ceiling of the synthetic nighttime-light channel.
pub const NTL_MAX: f64 = 267.0;

/// Per-agent demand unit applied to the urbanization field, MVA.
const DEMAND_UNIT_MVA: f64 = 0.1;

/// Scenario generator configuration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_regions: usize,
    pub agents_per_region: usize,
    pub substations_per_region: usize,
    pub urbanization_clusters: usize,
    /// How faithfully radiance tracks true demand, in [0, 1].
    pub ntl_fidelity: f64,
    /// How strongly substation siting follows demand, in [0, 1].
    pub prox_fidelity: f64,
    /// How much spatial demand signal the land-use channel carries, in [0, 1].
    pub base_signal: f64,
    /// Log-scale multiplicative noise on true agent demand.
    pub demand_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_regions: 16,
            agents_per_region: 2000,
            substations_per_region: 120,
            urbanization_clusters: 5,
            ntl_fidelity: 0.7,
            prox_fidelity: 0.7,
            base_signal: 0.8,
            demand_noise: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0
            || self.agents_per_region == 0
            || self.substations_per_region == 0
            || self.urbanization_clusters == 0
        {
            return Err(Error::InvalidConfig("all counts must be >= 1".into()));
        }
        for (name, knob) in [
            ("ntl_fidelity", self.ntl_fidelity),
            ("prox_fidelity", self.prox_fidelity),
            ("base_signal", self.base_signal),
        ] {
            if !(0.0..=1.0).contains(&knob) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if self.demand_noise < 0.0 {
            return Err(Error::InvalidConfig("demand_noise must be >= 0".into()));
        }
        Ok(())
    }
}

struct Bump {
    cx: f64,
    cy: f64,
    scale: f64,
    amplitude: f64,
}

/// Generates a scenario plus the per-agent TRUE demand field it was built
/// from. Deterministic per seed.
pub fn generate<F: Scalar>(config: &SynthConfig) -> Result<(Scenario<F>, BTreeMap<AgentId, F>)> {
    config.validate()?;
    let mut rng = StdRng::seed_from_u64(config.seed);
    let grid_cols = (config.n_regions as f64).sqrt().ceil() as usize;

    // pass 1: urbanization fields and agent positions per region
    let mut positions: Vec<Vec<(f64, f64)>> = Vec::with_capacity(config.n_regions);
    let mut urbanization: Vec<Vec<f64>> = Vec::with_capacity(config.n_regions);
    for r in 0..config.n_regions {
        let origin = (
            (r % grid_cols) as f64 * TILE_KM,
            (r / grid_cols) as f64 * TILE_KM,
        );
        let bumps: Vec<Bump> = (0..config.urbanization_clusters)
            .map(|_| Bump {
                cx: origin.0 + rng.random_range(0.1..0.9) * TILE_KM,
                cy: origin.1 + rng.random_range(0.1..0.9) * TILE_KM,
                scale: rng.random_range(2.0..6.0),
                amplitude: rng.random_range(0.5..1.5),
            })
            .collect();

        let side = (config.agents_per_region as f64).sqrt().ceil() as usize;
        let spacing = TILE_KM / side as f64;
        let mut pos = Vec::with_capacity(config.agents_per_region);
        let mut urb = Vec::with_capacity(config.agents_per_region);
        'grid: for row in 0..side {
            for col in 0..side {
                if pos.len() == config.agents_per_region {
                    break 'grid;
                }
                let x = origin.0 + (col as f64 + 0.5) * spacing;
                let y = origin.1 + (row as f64 + 0.5) * spacing;
                let mut u = 0.05;
                for bump in &bumps {
                    let dx = x - bump.cx;
                    let dy = y - bump.cy;
                    u += bump.amplitude * (-(dx * dx + dy * dy) / (2.0 * bump.scale * bump.scale)).exp();
                }
                pos.push((x, y));
                urb.push(u);
            }
        }
        positions.push(pos);
        urbanization.push(urb);
    }

    let global_max_urb = urbanization
        .iter()
        .flatten()
        .fold(f64::MIN, |acc, &u| acc.max(u));

    // pass 2: demands, land use, radiance, substations
    let mut regions = Vec::with_capacity(config.n_regions);
    let mut agents = Vec::with_capacity(config.n_regions * config.agents_per_region);
    let mut substations = Vec::with_capacity(config.n_regions * config.substations_per_region);
    let mut truth_f64: Vec<(AgentId, f64)> = Vec::with_capacity(agents.capacity());
    let mut next_agent_id = 0u64;
    let mut next_substation_id = 0u64;

    for r in 0..config.n_regions {
        let origin = (
            (r % grid_cols) as f64 * TILE_KM,
            (r / grid_cols) as f64 * TILE_KM,
        );
        let urb = &urbanization[r];
        let pos = &positions[r];
        let region_max_urb = urb.iter().fold(f64::MIN, |acc, &u| acc.max(u));

        let mut demands = Vec::with_capacity(urb.len());
        for &u in urb {
            let noise = if config.demand_noise > 0.0 {
                (config.demand_noise * standard_normal(&mut rng)).exp()
            } else {
                1.0
            };
            demands.push(u * noise * DEMAND_UNIT_MVA);
        }

        let mut landuses: Vec<[f64; LANDUSE_CLASSES]> = Vec::with_capacity(urb.len());
        for &u in urb {
            let u_region = u / region_max_urb;
            let s_eff = config.base_signal * u_region
                + (1.0 - config.base_signal) * rng.random_range(0.0..1.0);
            landuses.push(sample_landuse(s_eff, &mut rng));
        }
        // every region must keep at least one RCI agent for prior targets
        if !landuses.iter().any(|l| dominant_class(l) < 3) {
            let peak = urb
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            landuses[peak] = [0.7, 0.1, 0.1, 0.05, 0.05];
        }

        let mut ntl_values = Vec::with_capacity(urb.len());
        for &u in urb {
            let u_global = u / global_max_urb;
            let mixed = config.ntl_fidelity * u_global
                + (1.0 - config.ntl_fidelity) * rng.random_range(0.0..1.0);
            ntl_values.push(NTL_MAX * mixed.clamp(0.0, 1.0).powi(2));
        }

        let region_id = RegionId(r as u64);
        let mut region_demand = 0.0;
        let mut shares = [0.0; LANDUSE_CLASSES];
        for i in 0..urb.len() {
            let id = AgentId(next_agent_id);
            next_agent_id += 1;
            agents.push(Agent {
                id,
                x: F::from_f64_lossy(pos[i].0),
                y: F::from_f64_lossy(pos[i].1),
                landuse: landuses[i].map(F::from_f64_lossy),
                ntl: F::from_f64_lossy(ntl_values[i]),
                region_id,
            });
            truth_f64.push((id, demands[i]));
            region_demand += demands[i];
            shares[dominant_class(&landuses[i])] += demands[i];
        }
        for share in shares.iter_mut() {
            *share /= region_demand;
        }

        // cumulative demand weights for preferential substation siting
        let mut cumulative = Vec::with_capacity(demands.len());
        let mut acc = 0.0;
        for &d in &demands {
            acc += d;
            cumulative.push(acc);
        }
        let mut used: Vec<(f64, f64)> = Vec::new();
        for _ in 0..config.substations_per_region {
            let (mut x, mut y) = if rng.random_range(0.0..1.0) < config.prox_fidelity {
                let pick = rng.random_range(0.0..acc);
                let idx = cumulative.partition_point(|&c| c < pick);
                let base = pos[idx.min(pos.len() - 1)];
                (
                    base.0 + 0.6 * standard_normal(&mut rng),
                    base.1 + 0.6 * standard_normal(&mut rng),
                )
            } else {
                (
                    origin.0 + rng.random_range(0.0..1.0) * TILE_KM,
                    origin.1 + rng.random_range(0.0..1.0) * TILE_KM,
                )
            };
            while used.iter().any(|&(ux, uy)| ux == x && uy == y) {
                x += 1e-6;
                y += 1e-6;
            }
            used.push((x, y));
            substations.push(Substation {
                id: SubstationId(next_substation_id),
                x: F::from_f64_lossy(x),
                y: F::from_f64_lossy(y),
                demand_actual: F::zero(), // filled from the Voronoi aggregate below
                region_id,
            });
            next_substation_id += 1;
        }

        regions.push(Region {
            id: region_id,
            demand_total: F::from_f64_lossy(region_demand),
            consumption_shares: shares.map(F::from_f64_lossy),
            area: F::from_f64_lossy(TILE_KM * TILE_KM),
        });
    }

    let truth: BTreeMap<AgentId, F> = truth_f64
        .iter()
        .map(|&(id, demand)| (id, F::from_f64_lossy(demand)))
        .collect();

    let mut scenario = Scenario {
        regions,
        agents,
        substations,
    };
    // regional totals must equal the sum of the converted truth values exactly
    for region in scenario.regions.iter_mut() {
        let mut sum = F::zero();
        for agent in scenario.agents.iter().filter(|a| a.region_id == region.id) {
            sum += truth[&agent.id];
        }
        region.demand_total = sum;
    }

    let assignment = assign_voronoi(&scenario)?;
    let totals = aggregate_to_substations(&truth, &assignment, &scenario)?;
    for substation in scenario.substations.iter_mut() {
        substation.demand_actual = totals[&substation.id];
    }
    scenario.validate()?;
    Ok((scenario, truth))
}

fn sample_landuse(s_eff: f64, rng: &mut StdRng) -> [f64; LANDUSE_CLASSES] {
    let weights = [
        0.25 + 0.9 * s_eff,
        0.05 + 0.55 * s_eff * s_eff,
        0.05 + 0.35 * s_eff * s_eff,
        0.9 * (1.0 - s_eff),
        0.15,
    ];
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random_range(0.0..total);
    let mut dominant = LANDUSE_CLASSES - 1;
    for (k, &w) in weights.iter().enumerate() {
        if pick < w {
            dominant = k;
            break;
        }
        pick -= w;
    }
    let dominant_share = rng.random_range(0.45..0.85);
    let rest: f64 = weights
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != dominant)
        .map(|(_, w)| w)
        .sum();
    let mut landuse = [0.0; LANDUSE_CLASSES];
    for k in 0..LANDUSE_CLASSES {
        landuse[k] = if k == dominant {
            dominant_share
        } else {
            (1.0 - dominant_share) * weights[k] / rest
        };
    }
    landuse
}

fn standard_normal(rng: &mut StdRng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Spatial correlation length of the synthetic base's residual field, km.
const BASE_ERROR_BLOCK_KM: f64 = 6.0;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// A stand-in for a trained base allocation: true demand perturbed by
/// multiplicative log-noise whose scale shrinks as `base_signal` grows,
/// renormalized per region. The noise is dominated by a block-correlated
/// component, because a model sharing features over space makes spatially
/// coherent errors that do not average out inside Voronoi cells.
pub fn synthetic_learned_base<F: Scalar>(
    scenario: &Scenario<F>,
    truth: &BTreeMap<AgentId, F>,
    base_signal: f64,
    seed: u64,
) -> Result<AgentDemandField<F>> {
    if !(0.0..=1.0).contains(&base_signal) {
        return Err(Error::InvalidConfig("base_signal must be in [0, 1]".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let sigma = 0.15 + 2.6 * (1.0 - base_signal);
    let block_noise = |x: f64, y: f64| -> f64 {
        let bx = (x / BASE_ERROR_BLOCK_KM).floor() as i64 as u64;
        let by = (y / BASE_ERROR_BLOCK_KM).floor() as i64 as u64;
        let h = splitmix64(seed ^ splitmix64(bx) ^ splitmix64(by.rotate_left(17)));
        let mut block_rng = StdRng::seed_from_u64(h);
        standard_normal(&mut block_rng)
    };
    let mut raw: BTreeMap<AgentId, f64> = BTreeMap::new();
    for agent in &scenario.agents {
        let t = truth
            .get(&agent.id)
            .ok_or(Error::MissingAgent(agent.id.0))?
            .to_f64_lossy();
        let z = 0.8 * block_noise(agent.x.to_f64_lossy(), agent.y.to_f64_lossy())
            + 0.6 * standard_normal(&mut rng);
        raw.insert(agent.id, t * (sigma * z).exp());
    }
    let mut demand = BTreeMap::new();
    for region in &scenario.regions {
        let sum: f64 = scenario.agents_in(region.id).map(|a| raw[&a.id]).sum();
        for agent in scenario.agents_in(region.id) {
            demand.insert(
                agent.id,
                F::from_f64_lossy(raw[&agent.id] / sum) * region.demand_total,
            );
        }
    }
    Ok(AgentDemandField::new(demand, "synthetic_learned"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::spearman;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            n_regions: 3,
            agents_per_region: 60,
            substations_per_region: 4,
            urbanization_clusters: 3,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generated_scenarios_are_valid_and_conserve_exactly() {
        for seed in 0..5 {
            let (scenario, truth) = generate::<f64>(&small(seed)).unwrap();
            scenario.validate().unwrap();
            for region in &scenario.regions {
                let sum: f64 = scenario.agents_in(region.id).map(|a| truth[&a.id]).sum();
                assert_eq!(sum, region.demand_total);
                let substation_sum: f64 = scenario
                    .substations_in(region.id)
                    .map(|s| s.demand_actual)
                    .sum();
                assert!((substation_sum - region.demand_total).abs() / region.demand_total < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_reproduces_identical_scenarios() {
        let (a, ta) = generate::<f64>(&small(7)).unwrap();
        let (b, tb) = generate::<f64>(&small(7)).unwrap();
        assert_eq!(ta, tb);
        for (x, y) in a.agents.iter().zip(&b.agents) {
            assert_eq!(x.x, y.x);
            assert_eq!(x.ntl, y.ntl);
            assert_eq!(x.landuse, y.landuse);
        }
        for (x, y) in a.substations.iter().zip(&b.substations) {
            assert_eq!((x.x, x.y), (y.x, y.y));
            assert_eq!(x.demand_actual, y.demand_actual);
        }
    }

    #[test]
    fn perfect_fidelity_without_noise_gives_rank_one() {
        let config = SynthConfig {
            ntl_fidelity: 1.0,
            demand_noise: 0.0,
            ..small(11)
        };
        let (scenario, truth) = generate::<f64>(&config).unwrap();
        let ntl: Vec<f64> = scenario.agents.iter().map(|a| a.ntl).collect();
        let demand: Vec<f64> = scenario.agents.iter().map(|a| truth[&a.id]).collect();
        let rho = spearman(&ntl, &demand).unwrap().unwrap();
        assert!(rho > 1.0 - 1e-9, "rank correlation {rho}");
    }

    #[test]
    fn higher_ntl_fidelity_raises_rank_correlation() {
        let mut lows = Vec::new();
        let mut highs = Vec::new();
        for seed in 0..8 {
            for (fid, out) in [(0.3, &mut lows), (0.9, &mut highs)] {
                let config = SynthConfig {
                    ntl_fidelity: fid,
                    ..small(100 + seed)
                };
                let (scenario, truth) = generate::<f64>(&config).unwrap();
                let ntl: Vec<f64> = scenario.agents.iter().map(|a| a.ntl).collect();
                let demand: Vec<f64> =
                    scenario.agents.iter().map(|a| truth[&a.id]).collect();
                out.push(spearman(&ntl, &demand).unwrap().unwrap());
            }
        }
        let mean_low: f64 = lows.iter().sum::<f64>() / lows.len() as f64;
        let mean_high: f64 = highs.iter().sum::<f64>() / highs.len() as f64;
        assert!(
            mean_high > mean_low,
            "fidelity 0.9 gives {mean_high}, 0.3 gives {mean_low}"
        );
    }

    #[test]
    fn every_region_keeps_an_rci_agent() {
        for seed in 0..6 {
            let config = SynthConfig {
                base_signal: 0.0,
                agents_per_region: 8,
                ..small(200 + seed)
            };
            let (scenario, _) = generate::<f64>(&config).unwrap();
            for region in &scenario.regions {
                assert!(scenario
                    .agents_in(region.id)
                    .any(crate::model::is_rci));
            }
        }
    }

    #[test]
    fn learned_base_conserves_and_tracks_signal() {
        let (scenario, truth) = generate::<f64>(&small(31)).unwrap();
        let strong = synthetic_learned_base(&scenario, &truth, 1.0, 5).unwrap();
        strong.validate_conservation(&scenario).unwrap();
        let weak = synthetic_learned_base(&scenario, &truth, 0.0, 5).unwrap();
        weak.validate_conservation(&scenario).unwrap();

        let t: Vec<f64> = scenario.agents.iter().map(|a| truth[&a.id]).collect();
        let s: Vec<f64> = scenario.agents.iter().map(|a| strong.demand[&a.id]).collect();
        let w: Vec<f64> = scenario.agents.iter().map(|a| weak.demand[&a.id]).collect();
        let rho_strong = spearman(&s, &t).unwrap().unwrap();
        let rho_weak = spearman(&w, &t).unwrap().unwrap();
        assert!(rho_strong > 0.9);
        assert!(rho_strong > rho_weak + 0.2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = small(1);
        config.ntl_fidelity = 1.5;
        assert!(generate::<f64>(&config).is_err());
        let mut config = small(1);
        config.n_regions = 0;
        assert!(generate::<f64>(&config).is_err());
    }
}
