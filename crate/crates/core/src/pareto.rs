//! Sum-rate bisection along rate profiles and boundary sweeps.
//!
//! For a profile alpha the largest sum rate `r` for which the targets
//! `beta_i = 2^(alpha_i r) - 1` are jointly achievable is found by bisection
//! on `r`, with one feasibility run per step.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::apb::{DecisionThresholds, Verdict};
use crate::error::{Error, Result};
use crate::model::{compute_rates_with, is_pareto_dominated, BeamformerSet, LogBase, RateTuple, Scenario};
use crate::oracle;
use crate::projop::ProjectionConfig;
use crate::sim::{self, Algorithm};
use crate::transform::{make_betas, LiftedInstance, RateProfile};

/// Decides each bisection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Apb,
    Cpb,
    /// Power-grid search, two cells with one antenna each.
    Oracle,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Apb => "apb",
            Solver::Cpb => "cpb",
            Solver::Oracle => "oracle",
        })
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apb" => Ok(Solver::Apb),
            "cpb" => Ok(Solver::Cpb),
            "oracle" => Ok(Solver::Oracle),
            other => Err(Error::InvalidInput(format!(
                "unknown solver '{other}', expected apb, cpb or oracle"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BisectionConfig {
    pub lo: f64,
    /// Upper end of the bracket; `None` picks [`default_hi`].
    pub hi: Option<f64>,
    pub tol: f64,
    pub solver: Solver,
    pub base: LogBase,
    /// Feasibility re-checks below the result, to catch non-monotone answers.
    pub spot_checks: usize,
    /// Power-grid size of [`Solver::Oracle`].
    pub oracle_grid: usize,
    /// Round limit of each feasibility run, capped by the thresholds' own.
    pub max_rounds: usize,
}

impl Default for BisectionConfig {
    fn default() -> Self {
        BisectionConfig {
            lo: 0.0,
            hi: None,
            tol: 1e-3,
            solver: Solver::Cpb,
            base: LogBase::Two,
            spot_checks: 3,
            oracle_grid: oracle::DEFAULT_POWER_GRID,
            max_rounds: 300,
        }
    }
}

impl BisectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo >= 0.0 && self.tol > 0.0 && self.max_rounds > 0) {
            return Err(Error::InvalidInput(
                "bisection needs lo >= 0, tol > 0 and max_rounds > 0".into(),
            ));
        }
        if let Some(hi) = self.hi {
            if !(hi > self.lo) {
                return Err(Error::InvalidInput(format!("bracket [{}, {hi}] is empty", self.lo)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoPoint {
    pub alpha: RateProfile,
    pub r_sum: f64,
    /// Rates of `beamformers`, recomputed from the scenario.
    pub rates: RateTuple,
    pub beamformers: BeamformerSet,
    /// Feasibility runs spent, spot checks included.
    pub evaluations: usize,
    /// Steps that ended in a timeout and were counted as infeasible.
    pub timeouts: usize,
    /// A spot check below `r_sum` came out infeasible.
    pub non_monotone: bool,
    /// Some other point of the same sweep dominates this one.
    pub dominated: bool,
}

/// Outcome of a bisection over a generic monotone predicate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bisection<T> {
    pub lo: f64,
    pub hi: f64,
    /// Witness of the last feasible evaluation, at `lo`.
    pub witness: T,
    pub evaluations: usize,
}

/// Bisection of a predicate that is true at `lo` and false at `hi`.
///
/// `feasible(r)` returns a witness when `r` is feasible. Stops once
/// `hi - lo < tol`.
pub fn bisect<T, F>(lo: f64, hi: f64, tol: f64, mut feasible: F) -> Result<Bisection<T>>
where
    F: FnMut(f64) -> Result<Option<T>>,
{
    if !(lo < hi && tol > 0.0) {
        return Err(Error::InvalidInput(format!("bad bracket [{lo}, {hi}] or tol {tol}")));
    }
    if feasible(hi)?.is_some() {
        return Err(Error::Bracket(format!("upper end {hi} is already feasible; raise hi")));
    }
    let mut witness = feasible(lo)?.ok_or_else(|| Error::Bracket(format!("lower end {lo} is not feasible")))?;
    let (mut lo, mut hi) = (lo, hi);
    let mut evaluations = 2;
    while hi - lo >= tol {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        match feasible(mid)? {
            Some(w) => {
                lo = mid;
                witness = w;
            }
            None => hi = mid,
        }
    }
    Ok(Bisection {
        lo,
        hi,
        witness,
        evaluations,
    })
}

/// Sum-rate bound from the interference-free rates, `min(sum_i c_i, min_i c_i / alpha_i)`.
pub fn default_hi(s: &Scenario, alpha: &RateProfile, base: LogBase) -> f64 {
    let caps: Vec<f64> = (0..s.cells()).map(|i| base.log(1.0 + s.single_user_snr(i))).collect();
    let per_user = alpha
        .as_slice()
        .iter()
        .zip(&caps)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, c)| c / a)
        .fold(f64::INFINITY, f64::min);
    caps.iter().sum::<f64>().min(per_user)
}

struct Step {
    point: DVector<f64>,
    beamformers: BeamformerSet,
}

/// Feasibility at one sum rate, warm-started from the last feasible point.
struct Evaluator<'a> {
    s: &'a Scenario,
    alpha: &'a RateProfile,
    cfg: &'a BisectionConfig,
    th: &'a DecisionThresholds,
    pcfg: &'a ProjectionConfig,
    warm: Option<DVector<f64>>,
    timeouts: usize,
}

impl Evaluator<'_> {
    fn check(&mut self, r0: f64) -> Result<Option<Step>> {
        let target = make_betas(self.alpha, r0, self.cfg.base)?;
        let algorithm = match self.cfg.solver {
            Solver::Apb => Algorithm::Apb,
            Solver::Cpb => Algorithm::Cpb,
            Solver::Oracle => return self.oracle_check(&target.betas),
        };
        let instance = LiftedInstance::build(self.s, &target)?;
        let start = self.warm.clone().unwrap_or_else(|| DVector::zeros(instance.dim()));
        let th = DecisionThresholds {
            max_rounds: self.th.max_rounds.min(self.cfg.max_rounds),
            ..*self.th
        };
        let report = sim::run(&instance, algorithm, start, &th, self.pcfg)?;
        Ok(match report.verdict {
            Verdict::Feasible { point, beamformers } => {
                self.warm = Some(point.clone());
                Some(Step { point, beamformers })
            }
            Verdict::Timeout { .. } => {
                self.timeouts += 1;
                None
            }
            Verdict::Infeasible { .. } => None,
        })
    }

    fn oracle_check(&self, betas: &[f64]) -> Result<Option<Step>> {
        let (ratio, p) = oracle::grid_best_point_m2k1(self.s, betas, self.cfg.oracle_grid)?;
        if ratio < 1.0 {
            return Ok(None);
        }
        let omegas = p.iter().map(|&pi| vec![Complex64::new(pi.sqrt(), 0.0)]).collect();
        Ok(Some(Step {
            point: DVector::zeros(0),
            beamformers: BeamformerSet::new(omegas),
        }))
    }
}

/// Largest feasible sum rate along `alpha`, within `cfg.tol`.
pub fn bisect_rsum(
    s: &Scenario,
    alpha: &RateProfile,
    cfg: &BisectionConfig,
    th: &DecisionThresholds,
    pcfg: &ProjectionConfig,
) -> Result<ParetoPoint> {
    cfg.validate()?;
    if alpha.len() != s.cells() {
        return Err(Error::Dimension(format!(
            "rate profile has {} entries, scenario has M = {}",
            alpha.len(),
            s.cells()
        )));
    }
    let hi = cfg.hi.unwrap_or_else(|| default_hi(s, alpha, cfg.base) + cfg.tol);
    if !(hi > cfg.lo) {
        return Err(Error::InvalidInput(format!("bracket [{}, {hi}] is empty", cfg.lo)));
    }
    let mut ev = Evaluator {
        s,
        alpha,
        cfg,
        th,
        pcfg,
        warm: None,
        timeouts: 0,
    };
    let b = bisect(cfg.lo, hi, cfg.tol, |r| ev.check(r))?;
    let mut evaluations = b.evaluations;
    let mut non_monotone = false;
    let last = b.witness;
    for k in 1..=cfg.spot_checks {
        let r = cfg.lo + (b.lo - cfg.lo) * k as f64 / (cfg.spot_checks + 1) as f64;
        evaluations += 1;
        ev.warm = Some(last.point.clone()).filter(|p| !p.is_empty());
        if ev.check(r)?.is_none() {
            non_monotone = true;
        }
    }
    let rates = compute_rates_with(s, &last.beamformers, cfg.base)?;
    Ok(ParetoPoint {
        alpha: alpha.clone(),
        r_sum: b.lo,
        rates,
        beamformers: last.beamformers,
        evaluations,
        timeouts: ev.timeouts,
        non_monotone,
        dominated: false,
    })
}

/// One bisection per profile, run concurrently; dominated results are flagged.
pub fn sweep_boundary(
    s: &Scenario,
    alphas: &[RateProfile],
    cfg: &BisectionConfig,
    th: &DecisionThresholds,
    pcfg: &ProjectionConfig,
) -> Result<Vec<ParetoPoint>> {
    let mut points = alphas
        .par_iter()
        .map(|a| bisect_rsum(s, a, cfg, th, pcfg))
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<RateTuple> = points.iter().map(|p| p.rates.clone()).collect();
    for (k, p) in points.iter_mut().enumerate() {
        p.dominated = rates
            .iter()
            .enumerate()
            .any(|(j, r)| j != k && is_pareto_dominated(&rates[k], r).unwrap_or(false));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bisection_arithmetic() {
        let b = bisect(0.0, 8.0, 1e-3, |r| Ok((r <= 3.7).then_some(r))).unwrap();
        assert!(b.lo >= 3.699 && b.lo <= 3.701, "{}", b.lo);
        assert!(b.hi - b.lo < 1e-3);
        assert_eq!(b.witness, b.lo);
        assert!(matches!(
            bisect(0.0, 3.0, 1e-3, |r| Ok((r <= 3.7).then_some(r))),
            Err(Error::Bracket(_))
        ));
        assert!(matches!(
            bisect(4.0, 8.0, 1e-3, |r| Ok((r <= 3.7).then_some(r))),
            Err(Error::Bracket(_))
        ));
    }

    #[test]
    fn single_user_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = Scenario::random_cscg(1, 3, vec![5.0], vec![1.0], &mut rng).unwrap();
        let exact = (1.0 + s.single_user_snr(0)).log2();
        let cfg = BisectionConfig::default();
        let p = bisect_rsum(
            &s,
            &RateProfile::uniform(1),
            &cfg,
            &DecisionThresholds::default(),
            &ProjectionConfig::default(),
        )
        .unwrap();
        assert!((p.r_sum - exact).abs() <= 2.0 * cfg.tol, "{} vs {exact}", p.r_sum);
        assert!(p.rates.as_slice()[0] >= p.r_sum - 0.01);
        assert!(!p.non_monotone);
    }

    #[test]
    fn oracle_solver_on_k1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = Scenario::random_cscg(2, 1, vec![10.0, 10.0], vec![1.0, 1.0], &mut rng).unwrap();
        let cfg = BisectionConfig {
            solver: Solver::Oracle,
            ..Default::default()
        };
        let th = DecisionThresholds::default();
        let pcfg = ProjectionConfig::default();
        let alpha = RateProfile::uniform(2);
        let o = bisect_rsum(&s, &alpha, &cfg, &th, &pcfg).unwrap();
        for solver in [Solver::Apb, Solver::Cpb] {
            let p = bisect_rsum(&s, &alpha, &BisectionConfig { solver, ..cfg.clone() }, &th, &pcfg).unwrap();
            assert!(
                (p.r_sum - o.r_sum).abs() < 0.02,
                "{solver}: {} vs oracle {}",
                p.r_sum,
                o.r_sum
            );
            for (r, a) in p.rates.as_slice().iter().zip(alpha.as_slice()) {
                assert!(*r >= a * p.r_sum - 0.01);
            }
        }
    }

    #[test]
    fn corner_profile_gives_single_user_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Scenario::random_cscg(2, 2, vec![4.0, 4.0], vec![1.0, 1.0], &mut rng).unwrap();
        let cfg = BisectionConfig::default();
        let p = bisect_rsum(
            &s,
            &RateProfile::new(vec![1.0, 0.0]).unwrap(),
            &cfg,
            &DecisionThresholds::default(),
            &ProjectionConfig::default(),
        )
        .unwrap();
        let exact = (1.0 + s.single_user_snr(0)).log2();
        assert!((p.r_sum - exact).abs() < 0.01, "{} vs {exact}", p.r_sum);
    }

    #[test]
    fn explicit_feasible_hi_is_a_bracket_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Scenario::random_cscg(2, 2, vec![4.0, 4.0], vec![1.0, 1.0], &mut rng).unwrap();
        let cfg = BisectionConfig {
            hi: Some(0.05),
            ..Default::default()
        };
        let r = bisect_rsum(
            &s,
            &RateProfile::uniform(2),
            &cfg,
            &DecisionThresholds::default(),
            &ProjectionConfig::default(),
        );
        assert!(matches!(r, Err(Error::Bracket(_))));
    }
}
