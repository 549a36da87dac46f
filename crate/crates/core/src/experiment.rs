//! Experiment orchestration: the method matrix, seed×fold cross-validation,
//! mechanism-isolation runs, intensity sweeps, statistical comparisons, and
//! deterministic report serialization.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auxiliary::{
    combine_factors, ntl_factor, prox_factor, prox_factor_from_scores, CorrectionFactorField,
};
use crate::correction::{
    correct_additive_renorm, correct_multiplicative_raw, correct_multiplicative_renorm,
    correct_noise_renorm_against, CorrectionConfig, CorrectionMode,
};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_stat, region_metrics, AggregateStat, RegionMetrics};
use crate::auxiliary::prox_scores;
use crate::learner::{
    allocation_weights_from_features, build_features, train_with_prox, FeatureSet, TrainConfig,
    TrainedAllocator, FEATURE_PROX_GAMMA,
};
use crate::model::{
    aggregate_to_substations, assign_voronoi, AgentId, RegionId, Scenario, SubstationId,
    VoronoiAssignment,
};
use crate::scalar::Scalar;
use crate::stats::{holm_bonferroni, lower_median, wilcoxon_signed_rank, Alternative};
use crate::weighting::{apply_weights, weight_gpm, weight_uniform, AgentDemandField};

/// Demand-weighting base of a method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMethod {
    Uniform,
    Gpm,
    Learned,
}

/// How auxiliary information enters the allocation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integration {
    None,
    PostMultiplicative,
    PostMultiplicativeRaw,
    PostAdditive,
    PostNoise,
    PriorLoss,
}

/// Which auxiliary signals participate.
///
/// Serializes as a list of signal names, e.g. `["ntl", "prox"]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AuxSet {
    pub ntl: bool,
    pub prox: bool,
}

impl Serialize for AuxSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut names = Vec::new();
        if self.ntl {
            names.push("ntl");
        }
        if self.prox {
            names.push("prox");
        }
        names.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AuxSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let names: Vec<String> = Vec::deserialize(deserializer)?;
        let mut aux = AuxSet::default();
        for name in names {
            match name.as_str() {
                "ntl" => aux.ntl = true,
                "prox" => aux.prox = true,
                other => {
                    return Err(serde::de::Error::custom(format!(
                        "unknown auxiliary signal `{other}` (expected `ntl` or `prox`)"
                    )))
                }
            }
        }
        Ok(aux)
    }
}

impl AuxSet {
    pub const NONE: AuxSet = AuxSet { ntl: false, prox: false };
    pub const NTL: AuxSet = AuxSet { ntl: true, prox: false };
    pub const PROX: AuxSet = AuxSet { ntl: false, prox: true };
    pub const BOTH: AuxSet = AuxSet { ntl: true, prox: true };

    pub fn is_empty(&self) -> bool {
        !self.ntl && !self.prox
    }

    fn letters(&self) -> &'static str {
        match (self.ntl, self.prox) {
            (true, true) => "NP",
            (true, false) => "N",
            (false, true) => "P",
            (false, false) => "",
        }
    }
}

/// Intensity and training knobs of one method configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodParams {
    /// Radiance factor intensity exponent.
    pub alpha: f64,
    /// Proximity decay exponent.
    pub gamma: f64,
    /// Joint scaling exponent of the combined factor.
    pub beta: f64,
    /// Additive correction gain.
    pub additive_gain: f64,
    /// Prior-loss weights used when the integration is `PriorLoss`.
    pub lambda_ntl: f64,
    pub lambda_prox: f64,
    pub noise_repeats: usize,
    pub noise_seed: u64,
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 2.0,
            beta: 1.0,
            additive_gain: 1.0,
            lambda_ntl: 0.05,
            lambda_prox: 0.05,
            noise_repeats: 10,
            noise_seed: 0,
        }
    }
}

/// One point of the method space: base × integration × auxiliary signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub base: BaseMethod,
    pub integration: Integration,
    #[serde(default)]
    pub aux: AuxSet,
    #[serde(default)]
    pub params: MethodParams,
}

impl MethodSpec {
    pub fn new(base: BaseMethod, integration: Integration, aux: AuxSet) -> Self {
        Self {
            base,
            integration,
            aux,
            params: MethodParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.integration == Integration::PriorLoss && self.base != BaseMethod::Learned {
            return Err(Error::InvalidMethodSpec(
                "prior-loss integration requires the learned base".into(),
            ));
        }
        if self.integration != Integration::None && self.aux.is_empty() {
            return Err(Error::InvalidMethodSpec(
                "auxiliary set must be nonempty unless integration is none".into(),
            ));
        }
        if self.integration == Integration::None && !self.aux.is_empty() {
            return Err(Error::InvalidMethodSpec(
                "integration none cannot carry auxiliary signals".into(),
            ));
        }
        if self.params.noise_repeats == 0 {
            return Err(Error::InvalidMethodSpec("noise_repeats must be >= 1".into()));
        }
        if self.params.gamma < 0.0 || self.params.alpha < 0.0 || self.params.beta < 0.0 {
            return Err(Error::InvalidMethodSpec(
                "intensity exponents must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Canonical label, stable across runs; used as the report key.
    pub fn label(&self) -> String {
        let base = match self.base {
            BaseMethod::Uniform => "uni",
            BaseMethod::Gpm => "gpm",
            BaseMethod::Learned => "lrn",
        };
        let letters = self.aux.letters();
        match self.integration {
            Integration::None => base.to_string(),
            Integration::PostMultiplicative if self.base == BaseMethod::Uniform => {
                format!("{base}{letters}")
            }
            Integration::PostMultiplicative => format!("{base}Post{letters}"),
            Integration::PostMultiplicativeRaw => format!("{base}Post{letters}_raw"),
            Integration::PostAdditive => format!("{base}Add{letters}"),
            Integration::PostNoise => format!("{base}Noise{letters}"),
            Integration::PriorLoss => format!("{base}Prior{letters}"),
        }
    }

    /// Training configuration key: which prior weights the learned base
    /// needs. Static bases and post-corrections train without priors.
    pub fn train_key(&self) -> Option<TrainKey> {
        if self.base != BaseMethod::Learned {
            return None;
        }
        let (lambda_ntl, lambda_prox) = if self.integration == Integration::PriorLoss {
            (
                if self.aux.ntl { self.params.lambda_ntl } else { 0.0 },
                if self.aux.prox { self.params.lambda_prox } else { 0.0 },
            )
        } else {
            (0.0, 0.0)
        };
        Some(TrainKey {
            lambda_ntl_bits: lambda_ntl.to_bits(),
            lambda_prox_bits: lambda_prox.to_bits(),
        })
    }

    /// The fifteen-method matrix: four uniform-base variants, four GPM-base
    /// variants and seven learned-base variants.
    pub fn method_matrix() -> Vec<MethodSpec> {
        let mut specs = Vec::with_capacity(15);
        for base in [BaseMethod::Uniform, BaseMethod::Gpm] {
            specs.push(MethodSpec::new(base, Integration::None, AuxSet::NONE));
            for aux in [AuxSet::PROX, AuxSet::NTL, AuxSet::BOTH] {
                specs.push(MethodSpec::new(base, Integration::PostMultiplicative, aux));
            }
        }
        specs.push(MethodSpec::new(BaseMethod::Learned, Integration::None, AuxSet::NONE));
        for aux in [AuxSet::PROX, AuxSet::NTL, AuxSet::BOTH] {
            specs.push(MethodSpec::new(
                BaseMethod::Learned,
                Integration::PostMultiplicative,
                aux,
            ));
        }
        for aux in [AuxSet::PROX, AuxSet::NTL, AuxSet::BOTH] {
            specs.push(MethodSpec::new(BaseMethod::Learned, Integration::PriorLoss, aux));
        }
        specs
    }

    /// Diagnostic variants isolating the correction mechanism on the
    /// learned base: raw multiplication, a random-noise control, and the
    /// additive form.
    pub fn mechanism_isolation() -> Vec<MethodSpec> {
        let mut specs = Vec::new();
        for aux in [AuxSet::BOTH, AuxSet::NTL, AuxSet::PROX] {
            specs.push(MethodSpec::new(
                BaseMethod::Learned,
                Integration::PostMultiplicativeRaw,
                aux,
            ));
        }
        specs.push(MethodSpec::new(BaseMethod::Learned, Integration::PostNoise, AuxSet::BOTH));
        for aux in [AuxSet::BOTH, AuxSet::NTL, AuxSet::PROX] {
            specs.push(MethodSpec::new(
                BaseMethod::Learned,
                Integration::PostAdditive,
                aux,
            ));
        }
        specs
    }
}

/// Identifies a distinct training run within one seed×fold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrainKey {
    pub lambda_ntl_bits: u64,
    pub lambda_prox_bits: u64,
}

impl TrainKey {
    pub fn lambda_ntl(&self) -> f64 {
        f64::from_bits(self.lambda_ntl_bits)
    }
    pub fn lambda_prox(&self) -> f64 {
        f64::from_bits(self.lambda_prox_bits)
    }
}

/// Seed–fold cross-validation plan. Fold assignment is seeded together with
/// parameter initialization.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CVPlan {
    pub seeds: Vec<u64>,
    pub n_folds: usize,
    /// Train and evaluate on the full scenario in a single pass instead of
    /// holding out folds.
    pub single_pass: bool,
}

impl Default for CVPlan {
    fn default() -> Self {
        Self {
            seeds: vec![42, 123, 456],
            n_folds: 4,
            single_pass: false,
        }
    }
}

impl CVPlan {
    pub fn validate(&self, n_regions: usize) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("need at least one seed".into()));
        }
        if !self.single_pass {
            if self.n_folds == 0 {
                return Err(Error::InvalidConfig("n_folds must be >= 1".into()));
            }
            if n_regions < self.n_folds {
                return Err(Error::InvalidConfig(format!(
                    "{n_regions} regions cannot fill {} folds",
                    self.n_folds
                )));
            }
        }
        Ok(())
    }

    /// Region-to-fold partition for one seed. Every region lands in exactly
    /// one fold; folds differ in size by at most one region.
    pub fn fold_assignment(&self, regions: &[RegionId], seed: u64) -> Vec<Vec<RegionId>> {
        let mut shuffled: Vec<RegionId> = regions.to_vec();
        let mut rng = StdRng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        let mut folds: Vec<Vec<RegionId>> = vec![Vec::new(); self.n_folds];
        for (idx, region) in shuffled.into_iter().enumerate() {
            folds[idx % self.n_folds].push(region);
        }
        for fold in folds.iter_mut() {
            fold.sort();
        }
        folds
    }
}

/// Precomputed per-scenario structures shared across methods.
pub struct ScenarioCache<F> {
    pub assignment: VoronoiAssignment,
    /// Proximity scores at the feature decay exponent.
    pub prox: BTreeMap<AgentId, F>,
    pub features: FeatureSet<F>,
}

impl<F: Scalar> ScenarioCache<F> {
    pub fn new(scenario: &Scenario<F>) -> Result<Self> {
        let assignment = assign_voronoi(scenario)?;
        let prox = prox_scores(scenario, FEATURE_PROX_GAMMA);
        let features = build_features(scenario, &prox)?;
        Ok(Self {
            assignment,
            prox,
            features,
        })
    }
}

/// Per-substation predictions of one executed method; one entry per repeat
/// (a single entry unless the method is the noise control).
pub struct MethodOutput<F> {
    pub label: String,
    pub runs: Vec<BTreeMap<SubstationId, F>>,
    pub conserving: bool,
}

fn factor_field<F: Scalar>(
    spec: &MethodSpec,
    scenario: &Scenario<F>,
    cache: &ScenarioCache<F>,
) -> Result<CorrectionFactorField<F>> {
    let prox = |gamma: f64| {
        if gamma == FEATURE_PROX_GAMMA {
            prox_factor_from_scores(scenario, &cache.prox, gamma)
        } else {
            prox_factor(scenario, gamma)
        }
    };
    match (spec.aux.ntl, spec.aux.prox) {
        (true, false) => ntl_factor(scenario, spec.params.alpha),
        (false, true) => prox(spec.params.gamma),
        (true, true) => {
            let ntl = ntl_factor(scenario, spec.params.alpha)?;
            let prox = prox(spec.params.gamma)?;
            combine_factors(&ntl, &prox, spec.params.beta)
        }
        (false, false) => Err(Error::InvalidMethodSpec(
            "correction requires at least one auxiliary signal".into(),
        )),
    }
}

/// Executes one method: base weighting, optional correction, Voronoi
/// aggregation. `trained` is required for the learned base and carries the
/// prior-loss configuration matching the spec's train key.
pub fn run_method<F: Scalar>(
    spec: &MethodSpec,
    scenario: &Scenario<F>,
    trained: Option<&TrainedAllocator<F>>,
    cache: &ScenarioCache<F>,
) -> Result<MethodOutput<F>> {
    spec.validate()?;
    let label = spec.label();
    let base: AgentDemandField<F> = match spec.base {
        BaseMethod::Uniform => weight_uniform(scenario),
        BaseMethod::Gpm => weight_gpm(scenario),
        BaseMethod::Learned => {
            let trained = trained.ok_or_else(|| {
                Error::InvalidMethodSpec(format!("method `{label}` needs a trained allocator"))
            })?;
            let weights = allocation_weights_from_features(&trained.params, &cache.features);
            apply_weights(&weights, scenario, label.clone())?
        }
    };

    let corrected: Vec<AgentDemandField<F>> = match spec.integration {
        Integration::None | Integration::PriorLoss => vec![base],
        Integration::PostMultiplicative => {
            let factors = factor_field(spec, scenario, cache)?;
            vec![correct_multiplicative_renorm(&base, &factors, scenario)?]
        }
        Integration::PostMultiplicativeRaw => {
            let factors = factor_field(spec, scenario, cache)?;
            vec![correct_multiplicative_raw(&base, &factors, scenario)?]
        }
        Integration::PostAdditive => {
            let factors = factor_field(spec, scenario, cache)?;
            vec![correct_additive_renorm(
                &base,
                &factors,
                scenario,
                spec.params.additive_gain,
            )?]
        }
        Integration::PostNoise => {
            let reference = factor_field(spec, scenario, cache)?;
            let config = CorrectionConfig {
                mode: CorrectionMode::NoiseRenorm,
                noise_repeats: spec.params.noise_repeats,
                noise_seed: spec.params.noise_seed,
                additive_gain: spec.params.additive_gain,
            };
            correct_noise_renorm_against(&base, scenario, &reference, &config)?
        }
    };

    let conserving = corrected.iter().all(|f| f.conserves);
    let runs = corrected
        .iter()
        .map(|field| aggregate_to_substations(&field.demand, &cache.assignment, scenario))
        .collect::<Result<Vec<_>>>()?;
    Ok(MethodOutput {
        label,
        runs,
        conserving,
    })
}

/// Restricts a scenario to a set of regions (training scope).
pub fn restrict_to_regions<F: Scalar>(
    scenario: &Scenario<F>,
    regions: &BTreeSet<RegionId>,
) -> Scenario<F> {
    Scenario {
        regions: scenario
            .regions
            .iter()
            .filter(|r| regions.contains(&r.id))
            .cloned()
            .collect(),
        agents: scenario
            .agents
            .iter()
            .filter(|a| regions.contains(&a.region_id))
            .cloned()
            .collect(),
        substations: scenario
            .substations
            .iter()
            .filter(|s| regions.contains(&s.region_id))
            .cloned()
            .collect(),
    }
}

/// One audit entry per training run: proof of train/test region isolation.
#[derive(Clone, Debug, Serialize)]
pub struct AuditRecord {
    pub seed: u64,
    pub fold: usize,
    pub lambda_ntl: f64,
    pub lambda_prox: f64,
    pub train_regions: Vec<u64>,
    pub test_regions: Vec<u64>,
    pub single_pass: bool,
}

impl AuditRecord {
    pub fn leakage_free(&self) -> bool {
        if self.single_pass {
            return true;
        }
        let train: BTreeSet<u64> = self.train_regions.iter().copied().collect();
        self.test_regions.iter().all(|r| !train.contains(r))
    }

    pub fn render(&self) -> String {
        format!(
            "seed={} fold={} lambda_ntl={} lambda_prox={} single_pass={} train_regions={:?} test_regions={:?}",
            self.seed,
            self.fold,
            self.lambda_ntl,
            self.lambda_prox,
            self.single_pass,
            self.train_regions,
            self.test_regions
        )
    }
}

/// Seed-averaged metrics of one method in one region.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeedAveraged {
    pub rmse: f64,
    pub mae: f64,
    pub corr: Option<f64>,
    /// Seeds contributing a defined correlation.
    pub corr_n: usize,
}

/// Everything recorded for one method across the whole protocol.
#[derive(Clone, Debug)]
pub struct MethodReport {
    pub label: String,
    pub conserving: bool,
    /// region → seed → metrics (already averaged over noise repeats).
    pub per_region_seed: BTreeMap<RegionId, BTreeMap<u64, RegionMetrics<f64>>>,
    pub per_region: BTreeMap<RegionId, SeedAveraged>,
    pub rmse: AggregateStat,
    pub mae: AggregateStat,
    pub corr: AggregateStat,
    /// Seed-averaged predictions per substation, for downstream use.
    pub predictions: BTreeMap<SubstationId, f64>,
}

/// Full evaluation report over a method set.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub methods: BTreeMap<String, MethodReport>,
}

impl EvalReport {
    pub fn method(&self, label: &str) -> Result<&MethodReport> {
        self.methods
            .get(label)
            .ok_or_else(|| Error::Stats(format!("report has no method `{label}`")))
    }

    /// Per-region seed-averaged RMSE of one method.
    pub fn region_rmse(&self, label: &str) -> Result<BTreeMap<RegionId, f64>> {
        Ok(self
            .method(label)?
            .per_region
            .iter()
            .map(|(r, m)| (*r, m.rmse))
            .collect())
    }
}

/// Paired statistical comparison between two methods on per-region RMSE.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonResult {
    pub a: String,
    pub b: String,
    /// Aggregate RMSE difference a − b.
    pub delta_rmse: f64,
    /// Raw two-sided p-value per seed.
    pub p_per_seed: Vec<f64>,
    /// Lower median of the per-seed p-values.
    pub p_median: f64,
    /// Holm–Bonferroni adjusted median p (within the comparison family).
    pub p_holm: f64,
    pub significant: bool,
}

/// The default planned comparisons over the method matrix.
pub fn planned_comparisons() -> Vec<(String, String)> {
    [
        ("lrn", "gpm"),
        ("lrnPostP", "lrn"),
        ("lrnPostN", "lrn"),
        ("lrnPostNP", "lrnPostP"),
        ("gpmPostNP", "gpmPostN"),
        ("gpmPostP", "gpm"),
        ("gpmPostNP", "gpmPostP"),
        ("lrnPriorN", "lrn"),
        ("lrnPostP", "gpmPostNP"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect()
}

/// Runs the comparison family: per-seed Wilcoxon tests on paired per-region
/// RMSE, a median p per comparison, and a Holm adjustment across the family.
pub fn run_comparisons(
    report: &EvalReport,
    pairs: &[(String, String)],
    seeds: &[u64],
) -> Result<Vec<ComparisonResult>> {
    let mut raw = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let ma = report.method(a)?;
        let mb = report.method(b)?;
        let regions: Vec<RegionId> = ma
            .per_region_seed
            .keys()
            .filter(|r| mb.per_region_seed.contains_key(r))
            .copied()
            .collect();
        if regions.len() != ma.per_region_seed.len() || regions.len() != mb.per_region_seed.len() {
            return Err(Error::Stats(format!(
                "methods `{a}` and `{b}` cover different regions"
            )));
        }
        let mut p_per_seed = Vec::with_capacity(seeds.len());
        for seed in seeds {
            let va: Vec<f64> = regions
                .iter()
                .map(|r| ma.per_region_seed[r][seed].rmse)
                .collect();
            let vb: Vec<f64> = regions
                .iter()
                .map(|r| mb.per_region_seed[r][seed].rmse)
                .collect();
            let result = wilcoxon_signed_rank(&va, &vb, Alternative::TwoSided)?;
            p_per_seed.push(result.p_value);
        }
        let p_median = lower_median(&p_per_seed).expect("at least one seed");
        raw.push((a.clone(), b.clone(), p_per_seed, p_median, ma.rmse.mean - mb.rmse.mean));
    }

    let medians: Vec<f64> = raw.iter().map(|r| r.3).collect();
    let adjusted = holm_bonferroni(&medians);
    Ok(raw
        .into_iter()
        .zip(adjusted)
        .map(|((a, b, p_per_seed, p_median, delta_rmse), p_holm)| ComparisonResult {
            a,
            b,
            delta_rmse,
            p_per_seed,
            p_median,
            p_holm,
            significant: p_holm < 0.05,
        })
        .collect())
}

struct TrainedSet<F> {
    /// (seed, fold) → train-key → allocator.
    by_seed_fold: BTreeMap<(u64, usize), BTreeMap<TrainKey, TrainedAllocator<F>>>,
}

/// Runs the full protocol: trains learned variants per seed×fold on the
/// training regions only, evaluates every spec on held-out regions (static
/// specs once), and aggregates seed-first as required.
pub fn run_cv<F: Scalar>(
    plan: &CVPlan,
    scenario: &Scenario<F>,
    specs: &[MethodSpec],
    train_config: &TrainConfig,
) -> Result<(EvalReport, Vec<AuditRecord>)> {
    scenario.validate()?;
    plan.validate(scenario.regions.len())?;
    if specs.is_empty() {
        return Err(Error::InvalidConfig("no methods to evaluate".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    let mut labels = BTreeSet::new();
    for spec in specs {
        if !labels.insert(spec.label()) {
            return Err(Error::InvalidMethodSpec(format!(
                "duplicate method label `{}`",
                spec.label()
            )));
        }
    }

    let cache = ScenarioCache::new(scenario)?;
    let region_ids: Vec<RegionId> = scenario.regions.iter().map(|r| r.id).collect();
    let actual_by_region = actuals_by_region(scenario);

    // fold layout per seed
    let folds_per_seed: BTreeMap<u64, Vec<Vec<RegionId>>> = plan
        .seeds
        .iter()
        .map(|&seed| {
            let folds = if plan.single_pass {
                vec![region_ids.clone()]
            } else {
                plan.fold_assignment(&region_ids, seed)
            };
            (seed, folds)
        })
        .collect();
    for folds in folds_per_seed.values() {
        if folds.iter().any(|f| f.is_empty()) {
            return Err(Error::InvalidConfig("a fold has zero regions".into()));
        }
    }

    // distinct trainings needed
    let train_keys: BTreeSet<TrainKey> = specs.iter().filter_map(|s| s.train_key()).collect();
    let mut audit = Vec::new();
    let trained = if train_keys.is_empty() {
        TrainedSet {
            by_seed_fold: BTreeMap::new(),
        }
    } else {
        type TrainOutcome<F> = ((u64, usize), TrainKey, TrainedAllocator<F>, AuditRecord);
        let mut jobs = Vec::new();
        for (&seed, folds) in &folds_per_seed {
            for (fold_idx, test_regions) in folds.iter().enumerate() {
                let train_regions: BTreeSet<RegionId> = if plan.single_pass {
                    region_ids.iter().copied().collect()
                } else {
                    region_ids
                        .iter()
                        .filter(|r| !test_regions.contains(r))
                        .copied()
                        .collect()
                };
                for &key in &train_keys {
                    jobs.push((seed, fold_idx, test_regions.clone(), train_regions.clone(), key));
                }
            }
        }
        let results: Vec<Result<TrainOutcome<F>>> = jobs
            .par_iter()
            .map(|(seed, fold_idx, test_regions, train_regions, key)| {
                let restricted = restrict_to_regions(scenario, train_regions);
                let config = TrainConfig {
                    lambda_ntl: key.lambda_ntl(),
                    lambda_prox: key.lambda_prox(),
                    seed: *seed,
                    ..*train_config
                };
                let allocator = train_with_prox(&restricted, &cache.prox, &config)?;
                let record = AuditRecord {
                    seed: *seed,
                    fold: *fold_idx,
                    lambda_ntl: key.lambda_ntl(),
                    lambda_prox: key.lambda_prox(),
                    train_regions: train_regions.iter().map(|r| r.0).collect(),
                    test_regions: test_regions.iter().map(|r| r.0).collect(),
                    single_pass: plan.single_pass,
                };
                Ok(((*seed, *fold_idx), *key, allocator, record))
            })
            .collect();
        let mut by_seed_fold: BTreeMap<(u64, usize), BTreeMap<TrainKey, TrainedAllocator<F>>> =
            BTreeMap::new();
        let mut seen_audit = BTreeSet::new();
        for result in results {
            let (slot, key, allocator, record) = result?;
            if seen_audit.insert((slot, key)) {
                audit.push(record);
            }
            by_seed_fold.entry(slot).or_default().insert(key, allocator);
        }
        TrainedSet { by_seed_fold }
    };

    // per-method metric collection: region → seed → metrics
    let mut collected: BTreeMap<String, BTreeMap<RegionId, BTreeMap<u64, RegionMetrics<f64>>>> =
        BTreeMap::new();
    let mut conserving: BTreeMap<String, bool> = BTreeMap::new();
    let mut prediction_sums: BTreeMap<String, BTreeMap<SubstationId, f64>> = BTreeMap::new();
    let mut prediction_counts: BTreeMap<String, usize> = BTreeMap::new();

    // static methods: deterministic, one evaluation covers every seed
    for spec in specs.iter().filter(|s| s.train_key().is_none()) {
        let output = run_method(spec, scenario, None, &cache)?;
        let metrics = metrics_per_region(&output, &actual_by_region, scenario)?;
        let entry = collected.entry(output.label.clone()).or_default();
        for (region, m) in metrics {
            let seeds_map = entry.entry(region).or_default();
            for &seed in &plan.seeds {
                seeds_map.insert(seed, m);
            }
        }
        conserving.insert(output.label.clone(), output.conserving);
        accumulate_predictions(
            &mut prediction_sums,
            &mut prediction_counts,
            &output,
        );
    }

    // learned methods: per seed × fold, metrics recorded on test regions
    let learned_specs: Vec<&MethodSpec> = specs.iter().filter(|s| s.train_key().is_some()).collect();
    for (&seed, folds) in &folds_per_seed {
        for (fold_idx, test_regions) in folds.iter().enumerate() {
            for spec in &learned_specs {
                let key = spec.train_key().expect("learned spec");
                let allocator = trained
                    .by_seed_fold
                    .get(&(seed, fold_idx))
                    .and_then(|m| m.get(&key))
                    .expect("training ran for every (seed, fold, key)");
                let output = run_method(spec, scenario, Some(allocator), &cache)?;
                let metrics = metrics_per_region(&output, &actual_by_region, scenario)?;
                let entry = collected.entry(output.label.clone()).or_default();
                for region in test_regions {
                    let m = metrics
                        .get(region)
                        .ok_or_else(|| Error::Stats(format!("no metrics for region {region}")))?;
                    entry.entry(*region).or_default().insert(seed, *m);
                }
                conserving.insert(output.label.clone(), output.conserving);
                accumulate_predictions(&mut prediction_sums, &mut prediction_counts, &output);
            }
        }
    }

    // assemble: seed-average per region first, then aggregate across regions
    let mut methods = BTreeMap::new();
    for (label, per_region_seed) in collected {
        let mut per_region = BTreeMap::new();
        for (region, seeds_map) in &per_region_seed {
            let rmse: Vec<f64> = seeds_map.values().map(|m| m.rmse).collect();
            let mae: Vec<f64> = seeds_map.values().map(|m| m.mae).collect();
            let corrs: Vec<f64> = seeds_map.values().filter_map(|m| m.corr).collect();
            per_region.insert(
                *region,
                SeedAveraged {
                    rmse: rmse.iter().sum::<f64>() / rmse.len() as f64,
                    mae: mae.iter().sum::<f64>() / mae.len() as f64,
                    corr: if corrs.is_empty() {
                        None
                    } else {
                        Some(corrs.iter().sum::<f64>() / corrs.len() as f64)
                    },
                    corr_n: corrs.len(),
                },
            );
        }
        let rmse = aggregate_stat(
            &per_region
                .values()
                .map(|m| Some(m.rmse))
                .collect::<Vec<_>>(),
        );
        let mae = aggregate_stat(&per_region.values().map(|m| Some(m.mae)).collect::<Vec<_>>());
        let corr = aggregate_stat(&per_region.values().map(|m| m.corr).collect::<Vec<_>>());
        let predictions = prediction_sums
            .remove(&label)
            .map(|sums| {
                let count = prediction_counts[&label] as f64;
                sums.into_iter().map(|(s, v)| (s, v / count)).collect()
            })
            .unwrap_or_default();
        methods.insert(
            label.clone(),
            MethodReport {
                conserving: conserving[&label],
                label,
                per_region_seed,
                per_region,
                rmse,
                mae,
                corr,
                predictions,
            },
        );
    }
    Ok((EvalReport { methods }, audit))
}

fn actuals_by_region<F: Scalar>(scenario: &Scenario<F>) -> BTreeMap<RegionId, Vec<(SubstationId, f64)>> {
    let mut map: BTreeMap<RegionId, Vec<(SubstationId, f64)>> = BTreeMap::new();
    for substation in &scenario.substations {
        map.entry(substation.region_id)
            .or_default()
            .push((substation.id, substation.demand_actual.to_f64_lossy()));
    }
    for list in map.values_mut() {
        list.sort_by_key(|(id, _)| *id);
    }
    map
}

/// Region metrics of one method output, averaged over its repeats.
fn metrics_per_region<F: Scalar>(
    output: &MethodOutput<F>,
    actual_by_region: &BTreeMap<RegionId, Vec<(SubstationId, f64)>>,
    _scenario: &Scenario<F>,
) -> Result<BTreeMap<RegionId, RegionMetrics<f64>>> {
    let mut result = BTreeMap::new();
    for (&region, substations) in actual_by_region {
        let actual: Vec<f64> = substations.iter().map(|(_, d)| *d).collect();
        let mut rmse_sum = 0.0;
        let mut mae_sum = 0.0;
        let mut corr_vals = Vec::new();
        for run in &output.runs {
            let predicted: Vec<f64> = substations
                .iter()
                .map(|(id, _)| {
                    run.get(id)
                        .map(|v| v.to_f64_lossy())
                        .ok_or(Error::MissingAgent(id.0))
                })
                .collect::<Result<_>>()?;
            let m = region_metrics(region, &predicted, &actual)?;
            rmse_sum += m.rmse;
            mae_sum += m.mae;
            if let Some(c) = m.corr {
                corr_vals.push(c);
            }
        }
        let n = output.runs.len() as f64;
        result.insert(
            region,
            RegionMetrics {
                region_id: region,
                rmse: rmse_sum / n,
                mae: mae_sum / n,
                corr: if corr_vals.is_empty() {
                    None
                } else {
                    Some(corr_vals.iter().sum::<f64>() / corr_vals.len() as f64)
                },
            },
        );
    }
    Ok(result)
}

fn accumulate_predictions<F: Scalar>(
    sums: &mut BTreeMap<String, BTreeMap<SubstationId, f64>>,
    counts: &mut BTreeMap<String, usize>,
    output: &MethodOutput<F>,
) {
    let entry = sums.entry(output.label.clone()).or_default();
    for run in &output.runs {
        for (&substation, &value) in run {
            *entry.entry(substation).or_insert(0.0) += value.to_f64_lossy();
        }
        *counts.entry(output.label.clone()).or_insert(0) += 1;
    }
}

/// Swept intensity axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Alpha,
    Gamma,
    Beta,
    Lambda,
}

impl SweepAxis {
    /// The default level grid per axis.
    pub fn default_levels(&self) -> Vec<f64> {
        match self {
            SweepAxis::Alpha => vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            SweepAxis::Gamma => vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
            SweepAxis::Beta => vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
            SweepAxis::Lambda => vec![0.01, 0.05, 0.1, 0.2, 0.5],
        }
    }
}

/// One sweep level: aggregate RMSE per output column.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub level: f64,
    pub rmse: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

/// Intensity sweeps on the learned base. The α/γ/β axes reuse one trained
/// allocator and re-apply the correction per level; the λ axis retrains at
/// every level (one column per prior signal).
pub fn run_sweep<F: Scalar>(
    axis: SweepAxis,
    levels: &[f64],
    scenario: &Scenario<F>,
    train_config: &TrainConfig,
) -> Result<SweepTable> {
    if levels.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one level".into()));
    }
    scenario.validate()?;
    let cache = ScenarioCache::new(scenario)?;
    let actual_by_region = actuals_by_region(scenario);

    let aggregate_rmse = |output: &MethodOutput<F>| -> Result<f64> {
        let metrics = metrics_per_region(output, &actual_by_region, scenario)?;
        let values: Vec<f64> = metrics.values().map(|m| m.rmse).collect();
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    };

    let mut rows = Vec::with_capacity(levels.len());
    match axis {
        SweepAxis::Alpha | SweepAxis::Gamma | SweepAxis::Beta => {
            let base_config = TrainConfig {
                lambda_ntl: 0.0,
                lambda_prox: 0.0,
                ..*train_config
            };
            let allocator = train_with_prox(scenario, &cache.prox, &base_config)?;
            for &level in levels {
                let mut spec = match axis {
                    SweepAxis::Alpha => {
                        let mut s = MethodSpec::new(
                            BaseMethod::Learned,
                            Integration::PostMultiplicative,
                            AuxSet::NTL,
                        );
                        s.params.alpha = level;
                        s
                    }
                    SweepAxis::Gamma => {
                        let mut s = MethodSpec::new(
                            BaseMethod::Learned,
                            Integration::PostMultiplicative,
                            AuxSet::PROX,
                        );
                        s.params.gamma = level;
                        s
                    }
                    _ => {
                        let mut s = MethodSpec::new(
                            BaseMethod::Learned,
                            Integration::PostMultiplicative,
                            AuxSet::BOTH,
                        );
                        s.params.beta = level;
                        s
                    }
                };
                spec.params.noise_seed = 0;
                let output = run_method(&spec, scenario, Some(&allocator), &cache)?;
                rows.push(SweepRow {
                    level,
                    rmse: BTreeMap::from([("corrected".to_string(), aggregate_rmse(&output)?)]),
                });
            }
        }
        SweepAxis::Lambda => {
            for &level in levels {
                let mut columns = BTreeMap::new();
                for (column, lambda_ntl, lambda_prox) in
                    [("ntl_prior", level, 0.0), ("prox_prior", 0.0, level)]
                {
                    let config = TrainConfig {
                        lambda_ntl,
                        lambda_prox,
                        ..*train_config
                    };
                    let allocator = train_with_prox(scenario, &cache.prox, &config)?;
                    let spec = if column == "ntl_prior" {
                        MethodSpec::new(BaseMethod::Learned, Integration::PriorLoss, AuxSet::NTL)
                    } else {
                        MethodSpec::new(BaseMethod::Learned, Integration::PriorLoss, AuxSet::PROX)
                    };
                    let output = run_method(&spec, scenario, Some(&allocator), &cache)?;
                    columns.insert(column.to_string(), aggregate_rmse(&output)?);
                }
                rows.push(SweepRow { level, rmse: columns });
            }
        }
    }
    Ok(SweepTable { axis, rows })
}

// ---------------------------------------------------------------------------
// Serialization of reports
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct MethodSummary {
    pub label: String,
    pub conserving: bool,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub corr_mean: Option<f64>,
    pub corr_std: Option<f64>,
    pub corr_missing_regions: usize,
    /// Density × diversity stratification of the per-region RMSE.
    pub strata: Vec<StratumSummary>,
    /// Leave-one-out correlation over all substations (seed-averaged
    /// predictions); absent when fewer than four substations exist.
    pub jackknife: Option<JackknifeDoc>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct StratumSummary {
    pub density: String,
    pub diversity: String,
    pub n: usize,
    pub mean_rmse: f64,
    pub region_ids: Vec<u64>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct JackknifeDoc {
    pub min_corr: Option<f64>,
    pub std_corr: Option<f64>,
    pub n_estimates: usize,
    pub n_missing: usize,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ComparisonSummary {
    pub a: String,
    pub b: String,
    pub delta_rmse: f64,
    pub p_per_seed: Vec<f64>,
    pub p_median: f64,
    pub p_holm: f64,
    pub significant: bool,
}

/// Machine-readable evaluation summary, written as JSON.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct SummaryDocument {
    pub version: u32,
    pub seeds: Vec<u64>,
    pub n_folds: usize,
    pub single_pass: bool,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<ComparisonSummary>,
}

pub fn summary_document<F: Scalar>(
    report: &EvalReport,
    comparisons: &[ComparisonResult],
    plan: &CVPlan,
    scenario: &Scenario<F>,
) -> SummaryDocument {
    use crate::evaluation::{jackknife_loo_corr, stratify, StratifyBreaks};
    let breaks = StratifyBreaks::from_scenario(scenario);
    let actual: BTreeMap<SubstationId, f64> = scenario
        .substations
        .iter()
        .map(|s| (s.id, s.demand_actual.to_f64_lossy()))
        .collect();

    SummaryDocument {
        version: 1,
        seeds: plan.seeds.clone(),
        n_folds: plan.n_folds,
        single_pass: plan.single_pass,
        methods: report
            .methods
            .values()
            .map(|m| {
                let region_rmse: BTreeMap<RegionId, F> = m
                    .per_region
                    .iter()
                    .map(|(r, v)| (*r, F::from_f64_lossy(v.rmse)))
                    .collect();
                let strata = stratify(&region_rmse, scenario, &breaks)
                    .map(|cells| {
                        cells
                            .into_iter()
                            .map(|c| StratumSummary {
                                density: format!("{:?}", c.density).to_lowercase(),
                                diversity: format!("{:?}", c.diversity).to_lowercase(),
                                n: c.n,
                                mean_rmse: c.mean_rmse,
                                region_ids: c.region_ids.iter().map(|r| r.0).collect(),
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                let jackknife = if m.predictions.len() >= 4 {
                    let predicted: Vec<f64> = m.predictions.values().copied().collect();
                    let observed: Vec<f64> =
                        m.predictions.keys().map(|s| actual[s]).collect();
                    jackknife_loo_corr(&predicted, &observed).ok().map(|j| JackknifeDoc {
                        min_corr: j.min,
                        std_corr: j.std,
                        n_missing: j.estimates.iter().filter(|e| e.is_none()).count(),
                        n_estimates: j.estimates.len(),
                    })
                } else {
                    None
                };
                MethodSummary {
                    label: m.label.clone(),
                    conserving: m.conserving,
                    rmse_mean: m.rmse.mean,
                    rmse_std: m.rmse.std,
                    mae_mean: m.mae.mean,
                    mae_std: m.mae.std,
                    corr_mean: if m.corr.n > 0 { Some(m.corr.mean) } else { None },
                    corr_std: if m.corr.n > 1 { Some(m.corr.std) } else { None },
                    corr_missing_regions: m.corr.n_missing,
                    strata,
                    jackknife,
                }
            })
            .collect(),
        comparisons: comparisons
            .iter()
            .map(|c| ComparisonSummary {
                a: c.a.clone(),
                b: c.b.clone(),
                delta_rmse: c.delta_rmse,
                p_per_seed: c.p_per_seed.clone(),
                p_median: c.p_median,
                p_holm: c.p_holm,
                significant: c.significant,
            })
            .collect(),
    }
}

/// Marginal RMSE effect of an augmented method relative to a base method,
/// validated over a shared region set.
pub fn marginal_effect_between(
    report: &EvalReport,
    base_label: &str,
    augmented_label: &str,
) -> Result<crate::evaluation::MarginalEffect> {
    let base = report.method(base_label)?;
    let augmented = report.method(augmented_label)?;
    let base_regions: Vec<&RegionId> = base.per_region.keys().collect();
    let augmented_regions: Vec<&RegionId> = augmented.per_region.keys().collect();
    if base_regions != augmented_regions {
        return Err(Error::Stats(format!(
            "methods `{base_label}` and `{augmented_label}` cover different regions"
        )));
    }
    Ok(crate::evaluation::marginal_effect(
        base.rmse.mean,
        augmented.rmse.mean,
    ))
}

/// Writes `metrics.csv`: one row per method × region, seed-averaged.
pub fn write_metrics_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("method,region_id,rmse,mae,corr,corr_seeds\n");
    for method in report.methods.values() {
        for (region, m) in &method.per_region {
            let corr = m.corr.map(|c| c.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                method.label, region, m.rmse, m.mae, corr, m.corr_n
            ));
        }
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `predictions.csv`: seed-averaged per-substation predictions.
pub fn write_predictions_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut out = String::from("method,substation_id,demand_pred\n");
    for method in report.methods.values() {
        for (substation, value) in &method.predictions {
            out.push_str(&format!("{},{},{}\n", method.label, substation, value));
        }
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_summary_json(document: &SummaryDocument, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(document).expect("summary serializes");
    std::fs::write(path, json).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_audit_log(audit: &[AuditRecord], path: &Path) -> Result<()> {
    let mut lines: Vec<String> = audit.iter().map(|r| r.render()).collect();
    lines.sort();
    std::fs::write(path, lines.join("\n") + "\n").map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Renders the method-matrix table (RMSE/MAE/Corr per method).
pub fn render_method_matrix(document: &SummaryDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>5}\n",
        "method", "rmse", "±", "mae", "±", "corr", "miss"
    ));
    out.push_str(&"-".repeat(68));
    out.push('\n');
    let order = canonical_order();
    let mut rows: Vec<&MethodSummary> = document.methods.iter().collect();
    rows.sort_by_key(|m| {
        order
            .iter()
            .position(|l| *l == m.label)
            .unwrap_or(usize::MAX)
    });
    for m in rows {
        let corr = m
            .corr_mean
            .map(|c| format!("{c:.3}"))
            .unwrap_or_else(|| "---".into());
        out.push_str(&format!(
            "{:<16} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8} {:>5}\n",
            m.label, m.rmse_mean, m.rmse_std, m.mae_mean, m.mae_std, corr, m.corr_missing_regions
        ));
    }
    out
}

fn canonical_order() -> Vec<String> {
    let mut order: Vec<String> = MethodSpec::method_matrix()
        .iter()
        .map(|s| s.label())
        .collect();
    order.extend(MethodSpec::mechanism_isolation().iter().map(|s| s.label()));
    order
}

/// Renders the mechanism-isolation table: every corrected learned-base
/// variant against the uncorrected learned baseline.
pub fn render_mechanism_table(document: &SummaryDocument) -> String {
    let mut out = String::new();
    let baseline = document.methods.iter().find(|m| m.label == "lrn");
    let Some(baseline) = baseline else {
        return "mechanism-isolation table requires the `lrn` baseline\n".into();
    };
    out.push_str(&format!(
        "{:<16} {:<14} {:>8} {:>16} {:>8} {:>8}\n",
        "method", "form", "rmse", "delta_rmse", "mae", "corr"
    ));
    out.push_str(&"-".repeat(76));
    out.push('\n');
    let form = |label: &str| -> Option<&'static str> {
        if label == "lrn" {
            Some("baseline")
        } else if label.ends_with("_raw") {
            Some("mult")
        } else if label.starts_with("lrnPost") {
            Some("mult+renorm")
        } else if label.starts_with("lrnAdd") {
            Some("add+renorm")
        } else if label.starts_with("lrnNoise") {
            Some("noise+renorm")
        } else {
            None
        }
    };
    let order = canonical_order();
    let mut rows: Vec<&MethodSummary> = document
        .methods
        .iter()
        .filter(|m| form(&m.label).is_some())
        .collect();
    rows.sort_by_key(|m| {
        order
            .iter()
            .position(|l| *l == m.label)
            .unwrap_or(usize::MAX)
    });
    for m in rows {
        let corr = m
            .corr_mean
            .map(|c| format!("{c:.3}"))
            .unwrap_or_else(|| "---".into());
        let delta = if m.label == "lrn" {
            "---".to_string()
        } else {
            let effect = crate::evaluation::marginal_effect(baseline.rmse_mean, m.rmse_mean);
            format!("{:+.3} ({:+.1}%)", effect.delta, effect.percent)
        };
        out.push_str(&format!(
            "{:<16} {:<14} {:>8.3} {:>16} {:>8.3} {:>8}\n",
            m.label,
            form(&m.label).unwrap(),
            m.rmse_mean,
            delta,
            m.mae_mean,
            corr
        ));
    }
    out
}

/// Renders a sweep table.
pub fn render_sweep_table(table: &SweepTable) -> String {
    let mut columns: BTreeSet<String> = BTreeSet::new();
    for row in &table.rows {
        columns.extend(row.rmse.keys().cloned());
    }
    let mut out = format!("{:<8}", "level");
    for column in &columns {
        out.push_str(&format!(" {column:>12}"));
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!("{:<8}", row.level));
        for column in &columns {
            match row.rmse.get(column) {
                Some(v) => out.push_str(&format!(" {v:>12.4}")),
                None => out.push_str(&format!(" {:>12}", "---")),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sweep_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let mut columns: BTreeSet<String> = BTreeSet::new();
    for row in &table.rows {
        columns.extend(row.rmse.keys().cloned());
    }
    let mut out = String::from("level");
    for column in &columns {
        out.push_str(&format!(",rmse_{column}"));
    }
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.level.to_string());
        for column in &columns {
            out.push(',');
            if let Some(v) = row.rmse.get(column) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Experiment manifest
// ---------------------------------------------------------------------------

/// Named method presets usable in a manifest alongside explicit specs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodPreset {
    /// The fifteen-method matrix.
    Matrix,
    /// The raw/noise/additive diagnostic variants on the learned base.
    MechanismIsolation,
}

/// Sweep section of a manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestSweep {
    pub axis: SweepAxis,
    /// Default grid of the axis when omitted.
    #[serde(default)]
    pub levels: Option<Vec<f64>>,
}

/// Declarative experiment description: scenario path, protocol, methods and
/// outputs. Enables exact reruns.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Manifest {
    pub version: u32,
    pub scenario: String,
    pub output_dir: String,
    pub plan: CVPlan,
    pub train: TrainConfig,
    pub method_sets: Vec<MethodPreset>,
    pub methods: Vec<MethodSpec>,
    /// Comparison pairs by label; defaults to the planned comparisons that
    /// are present in the method set.
    pub comparisons: Option<Vec<(String, String)>>,
    pub sweep: Option<ManifestSweep>,
    pub workers: Option<usize>,
}

impl Default for Manifest {
    fn default() -> Self {
        Self {
            version: 1,
            scenario: String::new(),
            output_dir: String::new(),
            plan: CVPlan::default(),
            train: TrainConfig::default(),
            method_sets: vec![MethodPreset::Matrix],
            methods: Vec::new(),
            comparisons: None,
            sweep: None,
            workers: None,
        }
    }
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if manifest.version != 1 {
            return Err(Error::Json {
                path: path.display().to_string(),
                message: format!("unsupported manifest version {}", manifest.version),
            });
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Expands presets plus explicit specs, deduplicated by label, and
    /// validates each.
    pub fn specs(&self) -> Result<Vec<MethodSpec>> {
        let mut specs = Vec::new();
        for preset in &self.method_sets {
            match preset {
                MethodPreset::Matrix => specs.extend(MethodSpec::method_matrix()),
                MethodPreset::MechanismIsolation => {
                    specs.extend(MethodSpec::mechanism_isolation())
                }
            }
        }
        specs.extend(self.methods.iter().cloned());
        let mut seen = BTreeSet::new();
        let mut unique = Vec::new();
        for spec in specs {
            spec.validate()?;
            if seen.insert(spec.label()) {
                unique.push(spec);
            }
        }
        if unique.is_empty() {
            return Err(Error::InvalidConfig("manifest lists no methods".into()));
        }
        Ok(unique)
    }

    /// Comparison pairs restricted to labels the method set provides.
    pub fn comparison_pairs(&self, labels: &BTreeSet<String>) -> Vec<(String, String)> {
        let candidates = self
            .comparisons
            .clone()
            .unwrap_or_else(planned_comparisons);
        candidates
            .into_iter()
            .filter(|(a, b)| labels.contains(a) && labels.contains(b))
            .collect()
    }
}
