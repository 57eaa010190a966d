use misobf_core::apb::DecisionThresholds;
use misobf_core::model::compute_rates;
use misobf_core::oracle::{grid_feasible_m2k1, DEFAULT_POWER_GRID};
use misobf_core::pareto::{bisect_rsum, default_hi, BisectionConfig, Solver};
use misobf_core::projop::ProjectionConfig;
use misobf_core::transform::make_betas;
use misobf_core::{LogBase, RateProfile, Scenario};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scenario(seed: u64, m: usize, k: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Scenario::random_cscg(m, k, vec![10.0; m], vec![1.0; m], &mut rng).unwrap()
}

fn profile(a: f64) -> RateProfile {
    RateProfile::new(vec![a, 1.0 - a]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn betas_grow_with_the_sum_rate(a in 0.0f64..1.0, r in 0.0f64..20.0, dr in 0.0f64..5.0) {
        let p = profile(a);
        let lo = make_betas(&p, r, LogBase::Two).unwrap().betas;
        let hi = make_betas(&p, r + dr, LogBase::Two).unwrap().betas;
        for (x, y) in lo.iter().zip(&hi) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn raising_a_target_never_makes_it_feasible(seed in 0u64..500, b1 in 0.0f64..5.0, b2 in 0.0f64..5.0, up in 1.0f64..3.0) {
        let s = scenario(seed, 2, 1);
        let before = grid_feasible_m2k1(&s, &[b1, b2], 60).unwrap();
        let after = grid_feasible_m2k1(&s, &[b1 * up, b2], 60).unwrap();
        prop_assert!(before || !after);
    }

    #[test]
    fn default_upper_bound_is_not_feasible(seed in 0u64..500, a in 0.05f64..0.95) {
        let s = scenario(seed, 2, 1);
        let p = profile(a);
        let hi = default_hi(&s, &p, LogBase::Two);
        let betas = make_betas(&p, hi * (1.0 + 1e-9), LogBase::Two).unwrap().betas;
        prop_assert!(!grid_feasible_m2k1(&s, &betas, DEFAULT_POWER_GRID).unwrap());
    }
}

#[test]
fn boundary_beamformers_reach_their_rates() {
    let th = DecisionThresholds::default();
    let pcfg = ProjectionConfig::default();
    let s = scenario(3, 2, 2);
    for solver in [Solver::Apb, Solver::Cpb] {
        let cfg = BisectionConfig {
            solver,
            ..Default::default()
        };
        for a in [0.2, 0.5, 0.8] {
            let p = bisect_rsum(&s, &profile(a), &cfg, &th, &pcfg).unwrap();
            let rates = compute_rates(&s, &p.beamformers).unwrap();
            for (r, al) in rates.as_slice().iter().zip(p.alpha.as_slice()) {
                assert!(*r >= al * p.r_sum - 0.01, "{solver}: rate {r} below {}", al * p.r_sum);
            }
        }
    }
}

#[test]
fn projection_and_grid_solvers_find_the_same_boundary() {
    let th = DecisionThresholds::default();
    let pcfg = ProjectionConfig::default();
    for seed in 0..3 {
        let s = scenario(seed, 2, 1);
        for a in [0.3, 0.6] {
            let run = |solver| {
                let cfg = BisectionConfig {
                    solver,
                    ..Default::default()
                };
                bisect_rsum(&s, &profile(a), &cfg, &th, &pcfg).unwrap().r_sum
            };
            let (grid, cpb) = (run(Solver::Oracle), run(Solver::Cpb));
            assert!(
                (grid - cpb).abs() <= 0.02 * grid.max(0.1),
                "seed {seed}: oracle {grid} vs cpb {cpb}"
            );
        }
    }
}
