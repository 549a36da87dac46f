//! Domain types and planar geometry shared by the whole pipeline.
//!
//! Coordinates are pre-projected planar kilometres; no geodetic handling
//! happens anywhere in this crate. Demand units are MVA throughout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of land-use classes carried per agent.
pub const LANDUSE_CLASSES: usize = 5;

/// Class order used by every land-use vector in the crate.
pub const LANDUSE_NAMES: [&str; LANDUSE_CLASSES] =
    ["residential", "commercial", "industrial", "agricultural", "other"];

/// Tolerance for "sums to one" invariants on proportion vectors.
pub const SUM_TO_ONE_TOL: f64 = 1e-9;

/// Relative tolerance for per-region demand conservation.
pub const CONSERVATION_REL_TOL: f64 = 1e-9;

macro_rules! id_newtype {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }
    };
}

id_newtype!(AgentId, "Identifier of a spatial sample point (agent).");
id_newtype!(SubstationId, "Identifier of a primary substation.");
id_newtype!(RegionId, "Identifier of an administrative region.");

/// A spatial sample point carrying land-use, radiance and coordinates.
#[derive(Clone, Debug)]
pub struct Agent<F> {
    pub id: AgentId,
    /// Projected planar coordinates, km.
    pub x: F,
    pub y: F,
    /// Land-use proportions in [`LANDUSE_NAMES`] order; nonnegative, sums to 1.
    pub landuse: [F; LANDUSE_CLASSES],
    /// Nighttime radiance, nanoWatts/cm²/sr, nonnegative.
    pub ntl: F,
    pub region_id: RegionId,
}

/// A primary substation with metered peak demand.
#[derive(Clone, Debug)]
pub struct Substation<F> {
    pub id: SubstationId,
    pub x: F,
    pub y: F,
    /// Metered peak demand, MVA, nonnegative.
    pub demand_actual: F,
    pub region_id: RegionId,
}

/// An administrative region with a known aggregate demand.
#[derive(Clone, Debug)]
pub struct Region<F> {
    pub id: RegionId,
    /// Aggregate demand to disaggregate, MVA, positive.
    pub demand_total: F,
    /// Consumption share per land-use class; nonnegative, sums to 1.
    pub consumption_shares: [F; LANDUSE_CLASSES],
    /// Region area, km², positive.
    pub area: F,
}

/// The immutable world every operation runs against.
#[derive(Clone, Debug)]
pub struct Scenario<F> {
    pub regions: Vec<Region<F>>,
    pub agents: Vec<Agent<F>>,
    pub substations: Vec<Substation<F>>,
}

/// Hard assignment of each agent to its nearest same-region substation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoronoiAssignment {
    pub agent_to_substation: BTreeMap<AgentId, SubstationId>,
}

/// Index of the dominant land-use class; ties break toward the lowest index.
pub fn dominant_class<F: Scalar>(landuse: &[F; LANDUSE_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..LANDUSE_CLASSES {
        if landuse[k] > landuse[best] {
            best = k;
        }
    }
    best
}

/// True iff the agent's dominant land-use class is residential, commercial
/// or industrial. These agents are the reference population for factor
/// medians and prior targets.
pub fn is_rci<F: Scalar>(agent: &Agent<F>) -> bool {
    dominant_class(&agent.landuse) < 3
}

fn squared_distance<F: Scalar>(ax: F, ay: F, bx: F, by: F) -> F {
    let dx = ax - bx;
    let dy = ay - by;
    dx * dx + dy * dy
}

/// Euclidean distance between an agent and a substation, km.
pub fn distance<F: Scalar>(agent: &Agent<F>, substation: &Substation<F>) -> F {
    squared_distance(agent.x, agent.y, substation.x, substation.y).sqrt()
}

impl<F: Scalar> Scenario<F> {
    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::InvalidScenario("no regions".into()));
        }
        let mut region_ids = BTreeSet::new();
        for region in &self.regions {
            if !region_ids.insert(region.id) {
                return Err(Error::InvalidScenario(format!(
                    "duplicate region id {}",
                    region.id
                )));
            }
            if !region.demand_total.is_finite() || region.demand_total <= F::zero() {
                return Err(Error::InvalidScenario(format!(
                    "region {} demand_total must be > 0",
                    region.id
                )));
            }
            if !region.area.is_finite() || region.area <= F::zero() {
                return Err(Error::InvalidScenario(format!(
                    "region {} area must be > 0",
                    region.id
                )));
            }
            check_proportions(&region.consumption_shares, || {
                format!("region {} consumption_shares", region.id)
            })?;
        }

        let mut agent_ids = BTreeSet::new();
        for agent in &self.agents {
            if !agent_ids.insert(agent.id) {
                return Err(Error::InvalidScenario(format!(
                    "duplicate agent id {}",
                    agent.id
                )));
            }
            if !region_ids.contains(&agent.region_id) {
                return Err(Error::InvalidScenario(format!(
                    "agent {} references unknown region {}",
                    agent.id, agent.region_id
                )));
            }
            if !agent.ntl.is_finite() || agent.ntl < F::zero() {
                return Err(Error::InvalidScenario(format!(
                    "agent {} ntl must be finite and >= 0",
                    agent.id
                )));
            }
            if !agent.x.is_finite() || !agent.y.is_finite() {
                return Err(Error::InvalidScenario(format!(
                    "agent {} coordinates must be finite",
                    agent.id
                )));
            }
            check_proportions(&agent.landuse, || format!("agent {} landuse", agent.id))?;
        }

        let mut substation_ids = BTreeSet::new();
        for substation in &self.substations {
            if !substation_ids.insert(substation.id) {
                return Err(Error::InvalidScenario(format!(
                    "duplicate substation id {}",
                    substation.id
                )));
            }
            if !region_ids.contains(&substation.region_id) {
                return Err(Error::InvalidScenario(format!(
                    "substation {} references unknown region {}",
                    substation.id, substation.region_id
                )));
            }
            if !substation.demand_actual.is_finite() || substation.demand_actual < F::zero() {
                return Err(Error::InvalidScenario(format!(
                    "substation {} demand_actual must be finite and >= 0",
                    substation.id
                )));
            }
        }

        for region in &self.regions {
            if !self.agents.iter().any(|a| a.region_id == region.id) {
                return Err(Error::InvalidScenario(format!(
                    "region {} has no agents",
                    region.id
                )));
            }
            if !self.substations.iter().any(|s| s.region_id == region.id) {
                return Err(Error::InvalidScenario(format!(
                    "region {} has no substations",
                    region.id
                )));
            }
        }
        Ok(())
    }

    pub fn region(&self, id: RegionId) -> Option<&Region<F>> {
        self.regions.iter().find(|r| r.id == id)
    }

    pub fn agents_in(&self, region: RegionId) -> impl Iterator<Item = &Agent<F>> {
        self.agents.iter().filter(move |a| a.region_id == region)
    }

    pub fn substations_in(&self, region: RegionId) -> impl Iterator<Item = &Substation<F>> {
        self.substations
            .iter()
            .filter(move |s| s.region_id == region)
    }

    /// Agents of each region, in scenario order.
    pub fn agents_by_region(&self) -> BTreeMap<RegionId, Vec<&Agent<F>>> {
        let mut map: BTreeMap<RegionId, Vec<&Agent<F>>> = BTreeMap::new();
        for agent in &self.agents {
            map.entry(agent.region_id).or_default().push(agent);
        }
        map
    }
}

/// Tolerance for an n-term sum check: the documented f64 value, floored by
/// the scalar's own resolution so `f32` scenarios stay representable.
pub fn sum_tolerance<F: Scalar>(documented: f64, terms: usize) -> F {
    let floor = F::epsilon() * F::from_usize(16 * terms.max(1)).unwrap();
    F::from_f64_lossy(documented).max(floor)
}

fn check_proportions<F: Scalar>(
    vector: &[F; LANDUSE_CLASSES],
    what: impl Fn() -> String,
) -> Result<()> {
    let mut sum = F::zero();
    for &v in vector {
        if !v.is_finite() || v < F::zero() {
            return Err(Error::InvalidScenario(format!(
                "{} has a negative or non-finite component",
                what()
            )));
        }
        sum += v;
    }
    let tol = sum_tolerance::<F>(SUM_TO_ONE_TOL, LANDUSE_CLASSES);
    if (sum - F::one()).abs() > tol {
        return Err(Error::InvalidScenario(format!(
            "{} sums to {sum}, expected 1 within {SUM_TO_ONE_TOL}",
            what()
        )));
    }
    Ok(())
}

/// Assigns every agent to the geographically closest substation among the
/// substations of its own region. Distance ties break toward the lowest
/// substation id, which keeps the assignment reproducible across platforms.
pub fn assign_voronoi<F: Scalar>(scenario: &Scenario<F>) -> Result<VoronoiAssignment> {
    let mut by_region: BTreeMap<RegionId, Vec<&Substation<F>>> = BTreeMap::new();
    for substation in &scenario.substations {
        by_region
            .entry(substation.region_id)
            .or_default()
            .push(substation);
    }

    let mut agent_to_substation = BTreeMap::new();
    for agent in &scenario.agents {
        let candidates = by_region.get(&agent.region_id).ok_or_else(|| {
            Error::InvalidScenario(format!("region {} has no substations", agent.region_id))
        })?;
        let mut best: Option<(F, SubstationId)> = None;
        for substation in candidates {
            let d2 = squared_distance(agent.x, agent.y, substation.x, substation.y);
            let closer = match best {
                None => true,
                Some((bd, bid)) => d2 < bd || (d2 == bd && substation.id < bid),
            };
            if closer {
                best = Some((d2, substation.id));
            }
        }
        let (_, id) = best.expect("region substation list is nonempty");
        agent_to_substation.insert(agent.id, id);
    }
    Ok(VoronoiAssignment {
        agent_to_substation,
    })
}

/// Sums agent demands within each Voronoi cell. Substations whose cell is
/// empty receive exactly zero. Every agent of the scenario must carry a
/// finite, nonnegative demand.
pub fn aggregate_to_substations<F: Scalar>(
    agent_demands: &BTreeMap<AgentId, F>,
    assignment: &VoronoiAssignment,
    scenario: &Scenario<F>,
) -> Result<BTreeMap<SubstationId, F>> {
    let mut totals: BTreeMap<SubstationId, F> = scenario
        .substations
        .iter()
        .map(|s| (s.id, F::zero()))
        .collect();
    for agent in &scenario.agents {
        let demand = *agent_demands
            .get(&agent.id)
            .ok_or(Error::MissingAgent(agent.id.0))?;
        if !demand.is_finite() || demand < F::zero() {
            return Err(Error::InvalidScenario(format!(
                "agent {} demand must be finite and >= 0",
                agent.id
            )));
        }
        let substation = assignment
            .agent_to_substation
            .get(&agent.id)
            .ok_or(Error::MissingAgent(agent.id.0))?;
        *totals.get_mut(substation).expect("all substations seeded") += demand;
    }
    Ok(totals)
}
