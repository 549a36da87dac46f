//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (visible with `--nocapture`).
//!
//! Run with `cargo test -p disagg-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use disagg_core::auxiliary::{combine_factors, ntl_factor, prox_factor, FactorKind, FactorParams};
use disagg_core::correction::{
    correct_additive_renorm, correct_multiplicative_renorm, correct_noise_renorm_against,
    CorrectionConfig,
};
use disagg_core::auxiliary::prior_target;
use disagg_core::auxiliary::prox_scores;
use disagg_core::evaluation::{marginal_effect, region_metrics};
use disagg_core::experiment::{
    run_method, BaseMethod, Integration, MethodSpec, ScenarioCache,
};
use disagg_core::learner::{
    build_features, total_loss_and_grad, CostModelParams, TrainConfig, PARAM_DIM,
};
use disagg_core::model::{
    aggregate_to_substations, assign_voronoi, Agent, AgentId, Region, RegionId, Substation,
    SubstationId,
};
use disagg_core::powerflow::{
    build_mst, build_network, loading_deviation, loads_from_mva, solve_ac, LineParams,
    NetworkEdge, NetworkModel, BASE_KV, BASE_MVA, MISMATCH_TOL_PU, SLACK_VOLTAGE_PU,
};
use disagg_core::stats::{
    average_ranks, holm_bonferroni, wilcoxon_signed_rank, Alternative,
};
use disagg_core::synth::{generate, synthetic_learned_base, SynthConfig};
use disagg_core::weighting::{weight_uniform, AgentDemandField};
use disagg_core::{CorrectionFactorField64, Scenario64};

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

fn aggregate_region_rmse(field: &AgentDemandField<f64>, scenario: &Scenario64) -> f64 {
    let assignment = assign_voronoi(scenario).unwrap();
    let totals = aggregate_to_substations(&field.demand, &assignment, scenario).unwrap();
    let mut by_region: BTreeMap<RegionId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for s in &scenario.substations {
        let entry = by_region.entry(s.region_id).or_default();
        entry.0.push(totals[&s.id]);
        entry.1.push(s.demand_actual);
    }
    let mut rmses = Vec::new();
    for (region, (p, a)) in by_region {
        rmses.push(region_metrics(region, &p, &a).unwrap().rmse);
    }
    rmses.iter().sum::<f64>() / rmses.len() as f64
}

/// Ensemble over 24 seeded scenarios used by criteria 5 and 6: an
/// informative learned-like base and a uniform base, each corrected by the
/// same combined factors, plus the additive form and the noise control.
struct EnsembleStats {
    delta_info_mult: Vec<f64>,
    delta_uni_mult: Vec<f64>,
    delta_info_add: Vec<f64>,
    delta_info_noise: Vec<f64>,
    elapsed_s: f64,
}

static ENSEMBLE: OnceLock<EnsembleStats> = OnceLock::new();

fn ensemble() -> &'static EnsembleStats {
    ENSEMBLE.get_or_init(|| {
        let started = Instant::now();
        let mut delta_info_mult = Vec::new();
        let mut delta_uni_mult = Vec::new();
        let mut delta_info_add = Vec::new();
        let mut delta_info_noise = Vec::new();
        for seed in 0..24u64 {
            let config = SynthConfig {
                seed: 9000 + seed,
                n_regions: 4,
                agents_per_region: 600,
                substations_per_region: 6,
                urbanization_clusters: 3,
                ntl_fidelity: 0.7,
                prox_fidelity: 0.7,
                base_signal: 0.75,
                demand_noise: 0.15,
            };
            let (scenario, truth) = generate::<f64>(&config).unwrap();
            let base = synthetic_learned_base(&scenario, &truth, 0.75, 777 + seed).unwrap();
            let uniform = weight_uniform(&scenario);

            let ntl = ntl_factor(&scenario, 1.0).unwrap();
            let prox = prox_factor(&scenario, 2.0).unwrap();
            let joint = combine_factors(&ntl, &prox, 1.0).unwrap();

            let rmse_base = aggregate_region_rmse(&base, &scenario);
            let rmse_uniform = aggregate_region_rmse(&uniform, &scenario);

            let mult_info = correct_multiplicative_renorm(&base, &joint, &scenario).unwrap();
            delta_info_mult.push(aggregate_region_rmse(&mult_info, &scenario) - rmse_base);

            let mult_uni = correct_multiplicative_renorm(&uniform, &joint, &scenario).unwrap();
            delta_uni_mult.push(aggregate_region_rmse(&mult_uni, &scenario) - rmse_uniform);

            let add_info = correct_additive_renorm(&base, &joint, &scenario, 1.0).unwrap();
            delta_info_add.push(aggregate_region_rmse(&add_info, &scenario) - rmse_base);

            let noise_fields = correct_noise_renorm_against(
                &base,
                &scenario,
                &joint,
                &CorrectionConfig {
                    noise_repeats: 10,
                    noise_seed: 1234 + seed,
                    ..CorrectionConfig::default()
                },
            )
            .unwrap();
            let rmse_noise = noise_fields
                .iter()
                .map(|f| aggregate_region_rmse(f, &scenario))
                .sum::<f64>()
                / noise_fields.len() as f64;
            delta_info_noise.push(rmse_noise - rmse_base);
        }
        EnsembleStats {
            delta_info_mult,
            delta_uni_mult,
            delta_info_add,
            delta_info_noise,
            elapsed_s: started.elapsed().as_secs_f64(),
        }
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

// ---------------------------------------------------------------------------
// criterion 1: conservation across the method matrix
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_conservation_suite() {
    let started = Instant::now();
    let specs = MethodSpec::method_matrix();
    let raw_spec = MethodSpec::new(
        BaseMethod::Learned,
        Integration::PostMultiplicativeRaw,
        disagg_core::experiment::AuxSet::BOTH,
    );
    let train_config = TrainConfig {
        max_epochs: 25,
        ..TrainConfig::default()
    };

    let mut max_violation_conserving = 0.0_f64;
    let mut max_violation_raw = 0.0_f64;
    for seed in 0..20u64 {
        let config = SynthConfig {
            seed: 4000 + seed,
            n_regions: 3,
            agents_per_region: 60,
            substations_per_region: 4,
            urbanization_clusters: 2,
            ..SynthConfig::default()
        };
        let (scenario, _) = generate::<f64>(&config).unwrap();
        let cache = ScenarioCache::new(&scenario).unwrap();

        // one training per distinct prior configuration
        let mut trained = BTreeMap::new();
        for spec in specs.iter().chain([&raw_spec]) {
            if let Some(key) = spec.train_key() {
                trained.entry(key).or_insert_with(|| {
                    let config = TrainConfig {
                        lambda_ntl: key.lambda_ntl(),
                        lambda_prox: key.lambda_prox(),
                        seed: 42,
                        ..train_config
                    };
                    disagg_core::learner::train_with_prox(&scenario, &cache.prox, &config)
                        .unwrap()
                });
            }
        }

        let violation = |spec: &MethodSpec| -> f64 {
            let allocator = spec.train_key().map(|k| &trained[&k]);
            let output = run_method(spec, &scenario, allocator, &cache).unwrap();
            let mut worst = 0.0_f64;
            for run in &output.runs {
                for region in &scenario.regions {
                    let sum: f64 = scenario
                        .substations_in(region.id)
                        .map(|s| run[&s.id])
                        .sum();
                    let rel = ((sum - region.demand_total) / region.demand_total).abs();
                    worst = worst.max(rel);
                }
            }
            worst
        };

        for spec in &specs {
            max_violation_conserving = max_violation_conserving.max(violation(spec));
        }
        max_violation_raw = max_violation_raw.max(violation(&raw_spec));
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        max_violation_conserving <= 1e-9,
        "conserving configs must stay within 1e-9 relative, worst {max_violation_conserving:.3e}"
    );
    assert!(
        max_violation_raw > 1e-3,
        "the raw multiplicative variant must measurably violate conservation, worst {max_violation_raw:.3e}"
    );
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1 minute");
    println!(
        "[criterion 1] PASS conservation: 15 configs x 20 scenarios, worst rel dev {max_violation_conserving:.2e}; raw variant dev {max_violation_raw:.2e}; {elapsed:.1}s"
    );
}

// ---------------------------------------------------------------------------
// criterion 2: analytic gradient vs finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_gradient_check() {
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for seed in 0..50u64 {
        let config = SynthConfig {
            seed: 70_000 + seed,
            n_regions: 2,
            agents_per_region: 8,
            substations_per_region: 2,
            urbanization_clusters: 2,
            ..SynthConfig::default()
        };
        let (scenario, _) = generate::<f64>(&config).unwrap();
        let prox = prox_scores(&scenario, 2.0);
        let features = build_features(&scenario, &prox).unwrap();
        let ntl_values: BTreeMap<AgentId, f64> =
            scenario.agents.iter().map(|a| (a.id, a.ntl)).collect();
        let targets_ntl = prior_target(&scenario, &ntl_values).unwrap();
        let targets_prox = prior_target(&scenario, &prox).unwrap();
        let params = CostModelParams::<f64>::init(seed);

        let eval = |p: &CostModelParams<f64>| {
            total_loss_and_grad(
                p,
                &features,
                Some(&targets_ntl),
                Some(&targets_prox),
                0.05,
                0.05,
            )
            .unwrap()
        };
        let (_, grad) = eval(&params);
        let mut fd = [0.0; PARAM_DIM];
        for j in 0..PARAM_DIM {
            let mut plus = params.clone();
            plus.weights[j] += h;
            let mut minus = params.clone();
            minus.weights[j] -= h;
            fd[j] = (eval(&plus).0.total - eval(&minus).0.total) / (2.0 * h);
        }
        let scale = fd.iter().map(|g| g.abs()).fold(1e-8_f64, f64::max);
        for j in 0..PARAM_DIM {
            worst = worst.max((grad[j] - fd[j]).abs() / scale);
        }
    }
    assert!(
        worst <= 1e-4,
        "gradient mismatch {worst:.3e} exceeds 1e-4 relative"
    );
    println!("[criterion 2] PASS gradient check: 50 instances, worst relative error {worst:.2e}");
}

// ---------------------------------------------------------------------------
// criterion 3: Wilcoxon exact oracle and Holm hand case
// ---------------------------------------------------------------------------

/// Full 2^n enumeration of the signed-rank null, independent of the
/// implementation's dynamic program.
fn wilcoxon_enumeration_p(a: &[f64], b: &[f64]) -> f64 {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let observed: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| *r)
        .sum();
    let n = diffs.len();
    let mut le = 0usize;
    let mut ge = 0usize;
    for mask in 0..(1usize << n) {
        let t: f64 = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| ranks[i])
            .sum();
        if t <= observed + 1e-12 {
            le += 1;
        }
        if t >= observed - 1e-12 {
            ge += 1;
        }
    }
    let denom = (1usize << n) as f64;
    (2.0 * (le as f64 / denom).min(ge as f64 / denom)).min(1.0)
}

#[test]
fn criterion_03_wilcoxon_oracle() {
    let mut state = 0x243F_6A88_85A3_08D3_u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut samples = 0;
    for n in 5..=12usize {
        for _ in 0..13 {
            let a: Vec<f64> = (0..n).map(|_| 10.0 * next()).collect();
            // ties included deliberately: quantized second sample
            let b: Vec<f64> = (0..n).map(|_| (10.0 * next() * 4.0).round() / 4.0).collect();
            let ours = wilcoxon_signed_rank(&a, &b, Alternative::TwoSided)
                .unwrap()
                .p_value;
            let oracle = wilcoxon_enumeration_p(&a, &b);
            assert!(
                (ours - oracle).abs() < 1e-12,
                "n={n}: exact {ours} vs enumeration {oracle}"
            );
            samples += 1;
        }
    }
    assert!(samples >= 100);

    let adjusted = holm_bonferroni(&[0.01, 0.04, 0.03]);
    assert!((adjusted[0] - 0.03).abs() < 1e-12);
    assert!((adjusted[1] - 0.06).abs() < 1e-12);
    assert!((adjusted[2] - 0.06).abs() < 1e-12);
    println!(
        "[criterion 3] PASS Wilcoxon oracle: {samples} samples (n = 5..=12) match 2^n enumeration; Holm case (0.01,0.04,0.03)->(0.03,0.06,0.06)"
    );
}

// ---------------------------------------------------------------------------
// criterion 4: marginal-effect arithmetic on reported values
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_marginal_effect_arithmetic() {
    let round2 = |v: f64| (v * 100.0).round() / 100.0;
    let round1 = |v: f64| (v * 10.0).round() / 10.0;

    let up = marginal_effect(9.27, 11.20);
    assert_eq!(round2(up.delta), 1.93);
    assert_eq!(round1(up.percent), 20.8);

    let down = marginal_effect(12.39, 7.31);
    assert_eq!(round2(down.delta), -5.08);
    assert_eq!(round1(down.percent), -41.0);

    let slight = marginal_effect(9.27, 9.03);
    assert_eq!(round2(slight.delta), -0.24);
    assert_eq!(round1(slight.percent), -2.6);

    println!(
        "[criterion 4] PASS marginal effects: +1.93 (+20.8%), -5.08 (-41.0%), -0.24 (-2.6%) reproduced"
    );
}

// ---------------------------------------------------------------------------
// criterion 5: directional antagonism on the synthetic ensemble
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_directional_antagonism() {
    let stats = ensemble();
    let zeros = vec![0.0; stats.delta_info_mult.len()];

    let mean_info = mean(&stats.delta_info_mult);
    let mean_uni = mean(&stats.delta_uni_mult);
    let mean_add = mean(&stats.delta_info_add);
    assert!(
        mean_info > 0.0,
        "multiplicative NP on the informative base must raise RMSE, got {mean_info:+.4}"
    );
    assert!(
        mean_uni < 0.0,
        "multiplicative NP on the uniform base must lower RMSE, got {mean_uni:+.4}"
    );
    assert!(
        mean_add <= 0.0,
        "additive NP on the informative base must not raise RMSE, got {mean_add:+.4}"
    );

    let p_antagonism = wilcoxon_signed_rank(&stats.delta_info_mult, &zeros, Alternative::Greater)
        .unwrap()
        .p_value;
    let p_synergy = wilcoxon_signed_rank(&stats.delta_uni_mult, &zeros, Alternative::Less)
        .unwrap()
        .p_value;
    assert!(
        p_antagonism < 0.05,
        "one-sided antagonism p {p_antagonism:.4} not below 0.05"
    );
    assert!(
        p_synergy < 0.05,
        "one-sided synergy p {p_synergy:.4} not below 0.05"
    );
    assert!(
        stats.elapsed_s < 600.0,
        "ensemble took {:.0}s, budget 10 min",
        stats.elapsed_s
    );
    println!(
        "[criterion 5] PASS antagonism over 24 seeds: informative+multNP {mean_info:+.3} (p={p_antagonism:.2e}), uniform+multNP {mean_uni:+.3} (p={p_synergy:.2e}), informative+addNP {mean_add:+.3}; {:.1}s",
        stats.elapsed_s
    );
}

// ---------------------------------------------------------------------------
// criterion 6: random-noise control
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_random_noise_control() {
    let stats = ensemble();
    let real = mean(&stats.delta_info_mult);
    let noise = mean(&stats.delta_info_noise);
    assert!(real > 0.0, "real-factor inflation must be positive");
    assert!(
        noise < 0.25 * real,
        "noise inflation {noise:+.4} is not below 25% of the real inflation {real:+.4}"
    );
    println!(
        "[criterion 6] PASS noise control: noise inflation {noise:+.3} vs real {real:+.3} (ratio {:.2})",
        noise / real
    );
}

// ---------------------------------------------------------------------------
// criterion 7: RMSE–Corr decoupling on a constructed instance
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_rmse_corr_decoupling() {
    // one region, four substations with one colocated agent each
    let positions = [0.0, 10.0, 20.0, 30.0];
    let actual = [10.0, 20.0, 30.0, 40.0];
    let base_demands = [30.0, 20.0, 30.0, 20.0];
    let factors = [0.5 / 30.0, 2.0 / 20.0, 5.0 / 30.0, 92.5 / 20.0];

    let scenario = Scenario64 {
        regions: vec![Region {
            id: RegionId(0),
            demand_total: 100.0,
            consumption_shares: [0.2; 5],
            area: 900.0,
        }],
        agents: positions
            .iter()
            .enumerate()
            .map(|(i, &x)| Agent {
                id: AgentId(i as u64),
                x,
                y: 0.0,
                landuse: [1.0, 0.0, 0.0, 0.0, 0.0],
                ntl: 1.0,
                region_id: RegionId(0),
            })
            .collect(),
        substations: positions
            .iter()
            .enumerate()
            .map(|(i, &x)| Substation {
                id: SubstationId(i as u64),
                x,
                y: 0.0,
                demand_actual: actual[i],
                region_id: RegionId(0),
            })
            .collect(),
    };
    scenario.validate().unwrap();

    let base = AgentDemandField::new(
        base_demands
            .iter()
            .enumerate()
            .map(|(i, &d)| (AgentId(i as u64), d))
            .collect(),
        "constructed",
    );
    let field = CorrectionFactorField64 {
        factor: factors
            .iter()
            .enumerate()
            .map(|(i, &f)| (AgentId(i as u64), f))
            .collect(),
        kind: FactorKind::Combined,
        params: FactorParams::default(),
    };
    let corrected = correct_multiplicative_renorm(&base, &field, &scenario).unwrap();

    let assignment = assign_voronoi(&scenario).unwrap();
    let metrics = |f: &AgentDemandField<f64>| {
        let totals = aggregate_to_substations(&f.demand, &assignment, &scenario).unwrap();
        let predicted: Vec<f64> = (0..4).map(|i| totals[&SubstationId(i)]).collect();
        region_metrics(RegionId(0), &predicted, &actual).unwrap()
    };
    let before = metrics(&base);
    let after = metrics(&corrected);

    // hand-derived oracle values for the constructed numbers
    let rmse_before = (200.0_f64).sqrt();
    let corr_before = -100.0 / 50_000.0_f64.sqrt();
    let rmse_after = (3795.5_f64 / 4.0).sqrt();
    let corr_after = 1395.0 / (6085.5_f64 * 500.0).sqrt();
    assert!((before.rmse - rmse_before).abs() < 1e-9);
    assert!((before.corr.unwrap() - corr_before).abs() < 1e-9);
    assert!((after.rmse - rmse_after).abs() < 1e-9);
    assert!((after.corr.unwrap() - corr_after).abs() < 1e-9);

    // both directions, strictly
    assert!(after.corr.unwrap() > before.corr.unwrap());
    assert!(after.rmse > before.rmse);
    println!(
        "[criterion 7] PASS decoupling: corr {:.3} -> {:.3} improves while rmse {:.2} -> {:.2} worsens",
        before.corr.unwrap(),
        after.corr.unwrap(),
        before.rmse,
        after.rmse
    );
}

// ---------------------------------------------------------------------------
// criterion 8: scale-invariance identities
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_scale_invariance_identities() {
    let config = SynthConfig {
        seed: 31_337,
        n_regions: 3,
        agents_per_region: 80,
        substations_per_region: 5,
        urbanization_clusters: 2,
        ..SynthConfig::default()
    };
    let (scenario, truth) = generate::<f64>(&config).unwrap();
    let base = synthetic_learned_base(&scenario, &truth, 0.75, 99).unwrap();
    let ntl = ntl_factor(&scenario, 1.0).unwrap();
    let prox = prox_factor(&scenario, 2.0).unwrap();

    // (a) renormalized multiplicative correction is invariant to a positive
    // rescaling of the factor field
    let corrected = correct_multiplicative_renorm(&base, &ntl, &scenario).unwrap();
    let mut scaled = ntl.clone();
    for f in scaled.factor.values_mut() {
        *f *= 7.3;
    }
    let corrected_scaled = correct_multiplicative_renorm(&base, &scaled, &scenario).unwrap();
    let mut worst_rescale = 0.0_f64;
    for (id, v) in &corrected.demand {
        let rel = (v - corrected_scaled.demand[id]).abs() / v.abs().max(1e-300);
        worst_rescale = worst_rescale.max(rel);
    }
    assert!(worst_rescale <= 1e-12, "rescale deviation {worst_rescale:.2e}");

    // (b) sequential application equals a single product-factor application
    let sequential = correct_multiplicative_renorm(
        &correct_multiplicative_renorm(&base, &ntl, &scenario).unwrap(),
        &prox,
        &scenario,
    )
    .unwrap();
    let product = combine_factors(&ntl, &prox, 1.0).unwrap();
    let single = correct_multiplicative_renorm(&base, &product, &scenario).unwrap();
    let mut worst_seq = 0.0_f64;
    for (id, v) in &sequential.demand {
        let rel = (v - single.demand[id]).abs() / v.abs().max(1e-300);
        worst_seq = worst_seq.max(rel);
    }
    assert!(worst_seq <= 1e-12, "sequential-vs-product deviation {worst_seq:.2e}");

    // (c) zero-intensity sweep levels equal the uncorrected base bitwise
    let alpha_zero = ntl_factor(&scenario, 0.0).unwrap();
    assert!(alpha_zero.is_identity());
    let through_alpha = correct_multiplicative_renorm(&base, &alpha_zero, &scenario).unwrap();
    assert_eq!(through_alpha.demand, base.demand);

    let beta_zero = combine_factors(&ntl, &prox, 0.0).unwrap();
    assert!(beta_zero.is_identity());
    let through_beta = correct_multiplicative_renorm(&base, &beta_zero, &scenario).unwrap();
    assert_eq!(through_beta.demand, base.demand);

    // the same identity through the method runner: alpha = 0 equals the
    // uncorrected base method prediction for prediction
    let cache = ScenarioCache::new(&scenario).unwrap();
    let mut zero_spec = MethodSpec::new(
        BaseMethod::Gpm,
        Integration::PostMultiplicative,
        disagg_core::experiment::AuxSet::NTL,
    );
    zero_spec.params.alpha = 0.0;
    let none_spec = MethodSpec::new(BaseMethod::Gpm, Integration::None, disagg_core::experiment::AuxSet::NONE);
    let zero_out = run_method(&zero_spec, &scenario, None, &cache).unwrap();
    let none_out = run_method(&none_spec, &scenario, None, &cache).unwrap();
    assert_eq!(zero_out.runs[0], none_out.runs[0]);

    println!(
        "[criterion 8] PASS scale invariance: rescale dev {worst_rescale:.1e}, sequential-vs-product dev {worst_seq:.1e}, zero-intensity corrections bitwise-equal to the base"
    );
}

// ---------------------------------------------------------------------------
// criterion 9: power flow
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_power_flow() {
    // (a) two-bus closed form
    let no_shunt = LineParams {
        shunt_capacitance_nf_per_km: 0.0,
        ..LineParams::default()
    };
    let network = NetworkModel {
        bus_coords: vec![(0.0, 0.0), (25.0, 0.0)],
        substation_ids: vec![SubstationId(0)],
        slack_bus: 1,
        edges: vec![NetworkEdge {
            from: 0,
            to: 1,
            length_km: 25.0,
        }],
        line_params: no_shunt,
    };
    let solution = solve_ac(&network, &[40.0], &[12.0]).unwrap();
    assert!(solution.converged);
    let z_base = BASE_KV * BASE_KV / BASE_MVA;
    let (r_pu, x_pu) = (0.194 * 25.0 / z_base, 0.41 * 25.0 / z_base);
    let (p_pu, q_pu) = (0.40, 0.12);
    let v1 = SLACK_VOLTAGE_PU;
    let a = 2.0 * (p_pu * r_pu + q_pu * x_pu) - v1 * v1;
    let b = (p_pu * p_pu + q_pu * q_pu) * (r_pu * r_pu + x_pu * x_pu);
    let v2 = ((-a + (a * a - 4.0 * b).sqrt()) / 2.0).sqrt();
    assert!(
        (solution.v_mag[0] - v2).abs() <= 1e-8,
        "two-bus voltage {} vs closed form {}",
        solution.v_mag[0],
        v2
    );

    // (b) converged solves satisfy the mismatch bound
    let subs: Vec<Substation<f64>> = (0..9)
        .map(|i| Substation {
            id: SubstationId(i),
            x: (i as f64) * 9.0,
            y: ((i * i) % 7) as f64,
            demand_actual: 8.0 + (i as f64) * 2.0,
            region_id: RegionId(0),
        })
        .collect();
    let network = build_network(&subs, LineParams::default()).unwrap();
    let demands: Vec<f64> = subs.iter().map(|s| s.demand_actual).collect();
    let (p, q) = loads_from_mva(&demands, 0.95);
    let solution = solve_ac(&network, &p, &q).unwrap();
    assert!(solution.converged);
    assert!(solution.max_mismatch_pu <= MISMATCH_TOL_PU);

    // (c) zero-load network stays flat at the slack voltage (no shunts)
    let network = build_network(
        &subs,
        LineParams {
            shunt_capacitance_nf_per_km: 0.0,
            ..LineParams::default()
        },
    )
    .unwrap();
    let flat = solve_ac(&network, &[0.0; 9], &[0.0; 9]).unwrap();
    assert!(flat.converged);
    for v in &flat.v_mag {
        assert!((v - SLACK_VOLTAGE_PU).abs() < 1e-8);
    }
    for i in &flat.line_current_ka {
        assert!(i.abs() < 1e-8);
    }

    // (d) MST equals exhaustive enumeration for n <= 7
    let mut state = 0xB7E1_5162_8AED_2A6A_u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for trial in 0..6 {
        let n = 4 + trial % 4; // 4..=7
        let points: Vec<(f64, f64)> = (0..n).map(|_| (10.0 * next(), 10.0 * next())).collect();
        let tree = build_mst(&points).unwrap();
        let length = |i: usize, j: usize| {
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            (dx * dx + dy * dy).sqrt()
        };
        let tree_len: f64 = tree.iter().map(|&(i, j)| length(i, j)).sum();
        let best = prufer_min_spanning_length(&points);
        assert!(
            tree_len <= best + 1e-9,
            "MST {tree_len} vs exhaustive {best}"
        );
    }

    // (e) flat allocation under-reports the maximum line loading on a
    // radial net with one remote heavy node
    let mut subs: Vec<Substation<f64>> = (0..6)
        .map(|i| Substation {
            id: SubstationId(i),
            x: ((i % 3) as f64) * 2.0,
            y: ((i / 3) as f64) * 2.0,
            demand_actual: 2.5,
            region_id: RegionId(0),
        })
        .collect();
    subs.push(Substation {
        id: SubstationId(6),
        x: 60.0,
        y: 1.0,
        demand_actual: 90.0,
        region_id: RegionId(0),
    });
    let network = build_network(&subs, LineParams::default()).unwrap();
    let truth: Vec<f64> = subs.iter().map(|s| s.demand_actual).collect();
    let total: f64 = truth.iter().sum();
    let flat = vec![total / truth.len() as f64; truth.len()];

    let solve = |demands: &[f64]| {
        let (p, q) = loads_from_mva(demands, 0.95);
        solve_ac(&network, &p, &q).unwrap()
    };
    let truth_solution = solve(&truth);
    let flat_solution = solve(&flat);
    assert!(truth_solution.converged && flat_solution.converged);
    let reference = loading_deviation(&truth_solution, &truth_solution).unwrap();
    let deviation = loading_deviation(&flat_solution, &truth_solution).unwrap();
    assert!(
        deviation.max_loading_pct < reference.max_loading_pct,
        "flat lmax {:.1}% must under-report truth lmax {:.1}%",
        deviation.max_loading_pct,
        reference.max_loading_pct
    );
    assert!(deviation.delta_mae_pp > 0.0);
    assert_eq!(reference.delta_mae_pp, 0.0);

    println!(
        "[criterion 9] PASS power flow: two-bus closed form, mismatch <= 1e-8, flat zero-load, MST oracle, lmax under-reporting ({:.1}% < {:.1}%)",
        deviation.max_loading_pct, reference.max_loading_pct
    );
}

/// Exhaustive spanning-tree minimum via Prüfer sequences (n <= 7).
fn prufer_min_spanning_length(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    let dist = |i: usize, j: usize| {
        let dx = points[i].0 - points[j].0;
        let dy = points[i].1 - points[j].1;
        (dx * dx + dy * dy).sqrt()
    };
    if n == 2 {
        return dist(0, 1);
    }
    let seq_len = n - 2;
    let mut best = f64::INFINITY;
    for code in 0..n.pow(seq_len as u32) {
        let mut seq = Vec::with_capacity(seq_len);
        let mut c = code;
        for _ in 0..seq_len {
            seq.push(c % n);
            c /= n;
        }
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut total = 0.0;
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            total += dist(leaf, s);
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let ends: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        total += dist(ends[0], ends[1]);
        best = best.min(total);
    }
    best
}

// ---------------------------------------------------------------------------
// criterion 10: byte-identical reruns
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_disagg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_dirs_byte_identical(a: &Path, b: &Path) {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let left = std::fs::read(a.join(&name)).unwrap();
        let right = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(left, right, "{name} differs between reruns");
    }
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();

    let config_path = root.join("synth.json");
    std::fs::write(
        &config_path,
        r#"{ "seed": 11, "n_regions": 6, "agents_per_region": 100, "substations_per_region": 6, "urbanization_clusters": 2 }"#,
    )
    .unwrap();
    for gen in ["g1", "g2"] {
        let out = run_cli(&[
            "generate",
            "--out",
            root.join(gen).to_str().unwrap(),
            "--config",
            config_path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_dirs_byte_identical(&root.join("g1"), &root.join("g2"));

    for (manifest, out_dir) in [("m1.json", "e1"), ("m2.json", "e2")] {
        let manifest_path = root.join(manifest);
        std::fs::write(
            &manifest_path,
            format!(
                r#"{{
  "version": 1,
  "scenario": "{}",
  "output_dir": "{}",
  "plan": {{ "seeds": [42, 123], "n_folds": 2, "single_pass": false }},
  "train": {{ "lambda_ntl": 0.05, "lambda_prox": 0.05, "learning_rate": 1.0, "max_epochs": 40, "convergence_tol": 1e-7, "seed": 42 }},
  "method_sets": [],
  "methods": [
    {{ "base": "uniform", "integration": "none" }},
    {{ "base": "gpm", "integration": "post_multiplicative", "aux": ["ntl", "prox"] }},
    {{ "base": "learned", "integration": "none" }},
    {{ "base": "learned", "integration": "prior_loss", "aux": ["ntl", "prox"] }},
    {{ "base": "learned", "integration": "post_noise", "aux": ["ntl", "prox"] }}
  ]
}}"#,
                root.join("g1").display(),
                root.join(out_dir).display()
            ),
        )
        .unwrap();
        let out = run_cli(&["evaluate", "--manifest", manifest_path.to_str().unwrap()]);
        assert!(
            out.status.success(),
            "evaluate failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_dirs_byte_identical(&root.join("e1"), &root.join("e2"));
    println!("[criterion 10] PASS determinism: generate and evaluate reruns are byte-identical");
}

// ---------------------------------------------------------------------------
// criterion 11: end-to-end smoke on the default desk-scale configuration
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_end_to_end_smoke() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let scenario_dir = root.join("scenario");
    let out_dir = root.join("out");

    let generate = run_cli(&[
        "generate",
        "--out",
        scenario_dir.to_str().unwrap(),
        "--seed",
        "42",
    ]);
    assert!(
        generate.status.success(),
        "generate failed: {}",
        String::from_utf8_lossy(&generate.stderr)
    );

    let trainfile = root.join("params.json");
    let train = run_cli(&[
        "train",
        "--scenario",
        scenario_dir.to_str().unwrap(),
        "--out",
        trainfile.to_str().unwrap(),
    ]);
    assert!(
        train.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&train.stderr)
    );
    assert!(trainfile.exists());

    let manifest_path = root.join("manifest.json");
    std::fs::write(
        &manifest_path,
        format!(
            r#"{{
  "version": 1,
  "scenario": "{}",
  "output_dir": "{}",
  "plan": {{ "seeds": [42, 123, 456], "n_folds": 4, "single_pass": false }},
  "train": {{ "lambda_ntl": 0.05, "lambda_prox": 0.05, "learning_rate": 1.0, "max_epochs": 300, "convergence_tol": 1e-7, "seed": 42 }},
  "method_sets": ["matrix"]
}}"#,
            scenario_dir.display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let evaluate = run_cli(&["evaluate", "--manifest", manifest_path.to_str().unwrap()]);
    assert!(
        evaluate.status.success(),
        "evaluate failed: {}",
        String::from_utf8_lossy(&evaluate.stderr)
    );
    for file in ["metrics.csv", "summary.json", "predictions.csv", "audit.log"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }

    let report = run_cli(&["report", "--in", out_dir.to_str().unwrap()]);
    assert!(
        report.status.success(),
        "report failed: {}",
        String::from_utf8_lossy(&report.stderr)
    );
    assert!(out_dir.join("report.txt").exists());

    let elapsed = started.elapsed().as_secs_f64();
    assert!(
        elapsed < 1800.0,
        "end-to-end pipeline took {elapsed:.0}s, budget 30 min"
    );
    println!(
        "[criterion 11] PASS end-to-end smoke: default 16-region pipeline (generate, train, evaluate 15 methods over 3 seeds x 4 folds, report) in {elapsed:.0}s"
    );
}
