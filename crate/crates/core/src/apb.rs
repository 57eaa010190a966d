//! Alternating-projection beamforming with a central averaging unit.
//!
//! Every round the central unit broadcasts the average `x~_{n-1}`, each BS
//! projects it onto its own family F_i in parallel, and the central unit
//! averages the M answers. In the product space this alternates between the
//! projection onto `T = F_1 x ... x F_M` and onto the diagonal
//! `U = {(a, ..., a)}`.
//!
//! Feasibility is decided from the per-cell distances `v_i = ||x_n^(i) - x~_{n-1}||`
//! with the (eps, xi) rule implemented by [`StoppingRule`].

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{compute_sinrs, BeamformerSet};
use crate::projop::{FamilyProjector, ProjectionConfig};
use crate::transform::LiftedInstance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionThresholds {
    /// Convergence threshold on successive values of `v_i`.
    pub eps: f64,
    /// Boundary between a zero and a non-zero limit of `v_i`.
    pub xi: f64,
    pub max_rounds: usize,
    /// Relative SINR shortfall tolerated when certifying a feasible point.
    pub accept_tol: f64,
}

impl Default for DecisionThresholds {
    fn default() -> Self {
        DecisionThresholds {
            eps: 0.002,
            xi: 0.1,
            max_rounds: 2000,
            accept_tol: 1e-3,
        }
    }
}

impl DecisionThresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < self.xi) {
            return Err(Error::InvalidInput(format!(
                "thresholds need 0 < eps < xi, got eps = {}, xi = {}",
                self.eps, self.xi
            )));
        }
        if self.max_rounds == 0 || !(self.accept_tol >= 0.0) {
            return Err(Error::InvalidInput(
                "max_rounds >= 1 and accept_tol >= 0 required".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell bookkeeping of the (eps, xi) rule.
///
/// `v*` holds the last value of `v_i` that moved by at least eps. A cell whose
/// value settles (`|v_i - v*_i| < eps`) is declared non-zero (problem
/// infeasible) if `v*_i > xi` and flagged otherwise. A non-zero claim also
/// needs the candidate point itself to have settled, since a single value
/// can repeat by chance while the iterates still move. The very first round
/// only primes `v*`.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRule {
    v_star: Vec<f64>,
    flags: Vec<bool>,
    primed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleOutcome {
    Continue,
    AllFlagged,
    Infeasible { residuals: Vec<f64> },
}

impl StoppingRule {
    pub fn new(cells: usize) -> Self {
        StoppingRule {
            v_star: vec![0.0; cells],
            flags: vec![false; cells],
            primed: false,
        }
    }

    pub fn v_star(&self) -> &[f64] {
        &self.v_star
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// `settled` tells whether the candidate moved by less than eps this round.
    pub fn update(&mut self, v: &[f64], settled: bool, th: &DecisionThresholds) -> RuleOutcome {
        if !self.primed {
            self.primed = true;
            self.v_star.copy_from_slice(v);
            return RuleOutcome::Continue;
        }
        for (i, &vi) in v.iter().enumerate() {
            if (vi - self.v_star[i]).abs() >= th.eps {
                self.v_star[i] = vi;
                self.flags[i] = false;
            } else if self.v_star[i] > th.xi {
                if settled {
                    return RuleOutcome::Infeasible {
                        residuals: self.v_star.clone(),
                    };
                }
                self.flags[i] = false;
            } else {
                self.flags[i] = true;
            }
        }
        if self.flags.iter().all(|&f| f) {
            RuleOutcome::AllFlagged
        } else {
            RuleOutcome::Continue
        }
    }

    /// Drops every flag after a candidate failed certification.
    pub fn reset_flags(&mut self) {
        self.flags.iter_mut().for_each(|f| *f = false);
    }
}

/// One row of the per-round history.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    pub v: Vec<f64>,
    /// Movement of the candidate point over the round.
    pub x_delta: f64,
    /// SINRs achieved by the current candidate.
    pub snr: Vec<f64>,
    /// `sqrt(sum_i v_i^2)`: distance between consecutive product-space iterates.
    pub product_distance: f64,
    pub inner_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfeasibleCause {
    /// Some `v_i` settled above xi.
    Threshold,
    /// The family of this cell is empty on its own.
    EmptyCell(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Feasible {
        point: DVector<f64>,
        beamformers: BeamformerSet,
    },
    Infeasible {
        cause: InfeasibleCause,
        residuals: Vec<f64>,
    },
    /// `max_rounds` elapsed without a decision.
    Timeout { residuals: Vec<f64> },
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible { .. })
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self, Verdict::Timeout { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Feasible { .. } => "feasible",
            Verdict::Infeasible { .. } => "infeasible",
            Verdict::Timeout { .. } => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub verdict: Verdict,
    pub rounds: usize,
    pub trace: Vec<RoundTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Continue,
    Feasible(DVector<f64>),
    Infeasible(Vec<f64>),
    Timeout(Vec<f64>),
}

/// Beamformers of a lifted point, each pulled back onto its power ball.
pub fn extract_beamformers(instance: &LiftedInstance, xbar: &DVector<f64>) -> BeamformerSet {
    let mut w = instance.beamformers(xbar);
    for (j, o) in w.omegas.iter_mut().enumerate() {
        let p: f64 = o.iter().map(|c| c.norm_sqr()).sum();
        let cap = instance.scenario().powers()[j];
        if p > cap {
            let s = (cap / p).sqrt();
            o.iter_mut().for_each(|c| *c *= s);
        }
    }
    w
}

pub fn candidate_snrs(instance: &LiftedInstance, xbar: &DVector<f64>) -> Vec<f64> {
    compute_sinrs(instance.scenario(), &extract_beamformers(instance, xbar))
        .expect("lifted instance dimensions are consistent")
}

/// A candidate is certified when every SINR meets its target up to
/// `accept_tol` (relative) and the round moved it by less than eps.
pub fn certify(instance: &LiftedInstance, snr: &[f64], x_delta: f64, th: &DecisionThresholds) -> bool {
    x_delta < th.eps
        && snr
            .iter()
            .zip(instance.betas())
            .all(|(g, b)| *g >= b * (1.0 - th.accept_tol))
}

/// Shared by the direct run and the message-passing simulation.
pub(crate) fn decide(
    rule: &mut StoppingRule,
    instance: &LiftedInstance,
    candidate: &DVector<f64>,
    last: &RoundTrace,
    th: &DecisionThresholds,
) -> Decision {
    match rule.update(&last.v, last.x_delta < th.eps, th) {
        RuleOutcome::Infeasible { residuals } => return Decision::Infeasible(residuals),
        RuleOutcome::AllFlagged => {
            if certify(instance, &last.snr, last.x_delta, th) {
                return Decision::Feasible(candidate.clone());
            }
            rule.reset_flags();
        }
        RuleOutcome::Continue => {}
    }
    if last.round >= th.max_rounds {
        Decision::Timeout(last.v.clone())
    } else {
        Decision::Continue
    }
}

pub(crate) fn finish(instance: &LiftedInstance, decision: Decision) -> Option<Verdict> {
    match decision {
        Decision::Continue => None,
        Decision::Feasible(point) => {
            let beamformers = extract_beamformers(instance, &point);
            Some(Verdict::Feasible { point, beamformers })
        }
        Decision::Infeasible(residuals) => Some(Verdict::Infeasible {
            cause: InfeasibleCause::Threshold,
            residuals,
        }),
        Decision::Timeout(residuals) => Some(Verdict::Timeout { residuals }),
    }
}

pub(crate) fn structural_verdict(instance: &LiftedInstance) -> Option<Verdict> {
    instance.empty_cells().first().map(|&i| Verdict::Infeasible {
        cause: InfeasibleCause::EmptyCell(i),
        residuals: vec![f64::INFINITY; instance.cells()],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApbState {
    pub round: usize,
    pub x_tilde: DVector<f64>,
    pub per_bs: Vec<DVector<f64>>,
    pub v: Vec<f64>,
    pub rule: StoppingRule,
    pub trace: Vec<RoundTrace>,
}

impl ApbState {
    pub fn new(start: DVector<f64>, cells: usize) -> Self {
        ApbState {
            round: 0,
            per_bs: vec![start.clone(); cells],
            x_tilde: start,
            v: vec![0.0; cells],
            rule: StoppingRule::new(cells),
            trace: Vec::new(),
        }
    }
}

/// Work done at BS `i` in one round: project the broadcast point onto F_i.
pub(crate) fn bs_solve(projector: &FamilyProjector, broadcast: &DVector<f64>) -> (DVector<f64>, f64, bool) {
    let r = projector.project(broadcast);
    (r.point, r.distance, !r.converged)
}

/// Work done at the central unit: average in fixed cell order.
pub(crate) fn average(points: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::<f64>::zeros(points[0].len());
    for p in points {
        acc += p;
    }
    acc / points.len() as f64
}

pub(crate) fn apply_round(state: &mut ApbState, instance: &LiftedInstance, results: Vec<(DVector<f64>, f64, bool)>) {
    let failures = results.iter().filter(|r| r.2).count();
    let (per_bs, v): (Vec<_>, Vec<_>) = results.into_iter().map(|(p, d, _)| (p, d)).unzip();
    let x_new = average(&per_bs);
    let x_delta = (&x_new - &state.x_tilde).norm();
    state.round += 1;
    let snr = candidate_snrs(instance, &x_new);
    state.trace.push(RoundTrace {
        round: state.round,
        product_distance: v.iter().map(|d| d * d).sum::<f64>().sqrt(),
        v: v.clone(),
        x_delta,
        snr,
        inner_failures: failures,
    });
    state.per_bs = per_bs;
    state.v = v;
    state.x_tilde = x_new;
}

/// APB with its per-cell projectors compiled once.
pub struct Apb<'a> {
    instance: &'a LiftedInstance,
    projectors: Vec<FamilyProjector>,
}

impl<'a> Apb<'a> {
    pub fn new(instance: &'a LiftedInstance, cfg: &ProjectionConfig) -> Result<Self> {
        let projectors = (0..instance.cells())
            .map(|i| FamilyProjector::new(instance.family(i), *cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Apb { instance, projectors })
    }

    pub fn instance(&self) -> &LiftedInstance {
        self.instance
    }

    /// Parallel projections, barrier, then the fixed-order average.
    pub fn round(&self, state: &mut ApbState) {
        let results: Vec<_> = self
            .projectors
            .par_iter()
            .map(|p| bs_solve(p, &state.x_tilde))
            .collect();
        apply_round(state, self.instance, results);
    }

    pub fn decide(&self, state: &mut ApbState, th: &DecisionThresholds) -> Decision {
        let last = match state.trace.last() {
            Some(t) => t.clone(),
            None => return Decision::Continue,
        };
        decide(&mut state.rule, self.instance, &state.x_tilde, &last, th)
    }

    pub fn run(&self, start: DVector<f64>, th: &DecisionThresholds) -> Result<RunReport> {
        th.validate()?;
        check_start(self.instance, &start)?;
        if let Some(verdict) = structural_verdict(self.instance) {
            return Ok(RunReport {
                verdict,
                rounds: 0,
                trace: Vec::new(),
            });
        }
        let mut state = ApbState::new(start, self.instance.cells());
        loop {
            self.round(&mut state);
            if let Some(verdict) = finish(self.instance, self.decide(&mut state, th)) {
                return Ok(RunReport {
                    verdict,
                    rounds: state.round,
                    trace: state.trace,
                });
            }
        }
    }
}

pub(crate) fn check_start(instance: &LiftedInstance, start: &DVector<f64>) -> Result<()> {
    if start.len() != instance.dim() {
        return Err(Error::Dimension(format!(
            "start point has dimension {}, instance has {}",
            start.len(),
            instance.dim()
        )));
    }
    Ok(())
}

/// One APB round on `state`.
pub fn apb_round(state: &mut ApbState, instance: &LiftedInstance, cfg: &ProjectionConfig) -> Result<()> {
    Apb::new(instance, cfg)?.round(state);
    Ok(())
}

/// Applies the stopping rule to the latest round of `state`.
pub fn apb_decide(state: &mut ApbState, instance: &LiftedInstance, th: &DecisionThresholds) -> Decision {
    let last = match state.trace.last() {
        Some(t) => t.clone(),
        None => return Decision::Continue,
    };
    decide(&mut state.rule, instance, &state.x_tilde, &last, th)
}

pub fn run_apb(
    instance: &LiftedInstance,
    start: DVector<f64>,
    th: &DecisionThresholds,
    cfg: &ProjectionConfig,
) -> Result<RunReport> {
    Apb::new(instance, cfg)?.run(start, th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scenario;
    use crate::transform::{ConvexSetDescriptor, FeasibilityTarget};
    use num_complex::Complex64;

    fn th() -> DecisionThresholds {
        DecisionThresholds::default()
    }

    #[test]
    fn rule_first_round_only_primes() {
        let mut r = StoppingRule::new(2);
        assert_eq!(r.update(&[0.0, 0.0], true, &th()), RuleOutcome::Continue);
        assert_eq!(r.update(&[0.0, 0.0], true, &th()), RuleOutcome::AllFlagged);
    }

    #[test]
    fn rule_detects_settled_nonzero() {
        let mut r = StoppingRule::new(2);
        r.update(&[0.5, 0.0], true, &th());
        assert_eq!(
            r.update(&[0.5005, 0.0], true, &th()),
            RuleOutcome::Infeasible {
                residuals: vec![0.5, 0.0]
            }
        );
    }

    #[test]
    fn repeated_value_of_a_moving_point_is_not_a_verdict() {
        let mut r = StoppingRule::new(2);
        r.update(&[0.5, 0.0], false, &th());
        assert_eq!(r.update(&[0.5005, 0.0], false, &th()), RuleOutcome::Continue);
        assert_eq!(
            r.update(&[0.5005, 0.0], true, &th()),
            RuleOutcome::Infeasible {
                residuals: vec![0.5, 0.0]
            }
        );
    }

    #[test]
    fn rule_keeps_going_while_moving() {
        let mut r = StoppingRule::new(1);
        r.update(&[1.0], true, &th());
        assert_eq!(r.update(&[0.9], true, &th()), RuleOutcome::Continue);
        assert_eq!(r.update(&[0.8], true, &th()), RuleOutcome::Continue);
        assert_eq!(r.v_star(), &[0.8]);
    }

    #[test]
    fn thresholds_validation() {
        assert!(DecisionThresholds {
            eps: 0.2,
            xi: 0.1,
            ..th()
        }
        .validate()
        .is_err());
        assert!(th().validate().is_ok());
    }

    fn scalar_scenario() -> Scenario {
        Scenario::new(1, 1, vec![vec![Complex64::new(1.0, 0.0)]], vec![4.0], vec![1.0]).unwrap()
    }

    #[test]
    fn zero_targets_are_feasible_at_once() {
        let s = scalar_scenario();
        let li = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![0.0]).unwrap()).unwrap();
        let rep = run_apb(&li, DVector::zeros(li.dim()), &th(), &ProjectionConfig::default()).unwrap();
        assert!(rep.verdict.is_feasible());
        assert!(rep.trace.iter().all(|t| t.v == vec![0.0]));
    }

    #[test]
    fn single_cell_converges_in_one_projection() {
        let s = scalar_scenario();
        let li = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![1.0]).unwrap()).unwrap();
        let rep = run_apb(&li, DVector::zeros(li.dim()), &th(), &ProjectionConfig::default()).unwrap();
        assert!(rep.verdict.is_feasible());
        // round 1 moves, every later round is stationary
        assert!(rep.trace[0].v[0] > 0.9);
        assert!(rep.trace[1..].iter().all(|t| t.v[0] < 1e-7));
        if let Verdict::Feasible { beamformers, .. } = rep.verdict {
            let g = compute_sinrs(&s, &beamformers).unwrap()[0];
            assert!(g >= 1.0 - 1e-6);
        }
    }

    #[test]
    fn empty_cell_aborts() {
        let s = scalar_scenario();
        let li = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![5.0]).unwrap()).unwrap();
        let rep = run_apb(&li, DVector::zeros(li.dim()), &th(), &ProjectionConfig::default()).unwrap();
        assert_eq!(rep.rounds, 0);
        assert!(matches!(
            rep.verdict,
            Verdict::Infeasible {
                cause: InfeasibleCause::EmptyCell(0),
                ..
            }
        ));
    }

    #[test]
    fn fixed_point_when_start_is_feasible() {
        let s = scalar_scenario();
        let li = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![1.0]).unwrap()).unwrap();
        let mut start = DVector::zeros(li.dim());
        start[0] = 1.5;
        let rep = run_apb(&li, start.clone(), &th(), &ProjectionConfig::default()).unwrap();
        assert!(rep.trace.iter().all(|t| t.v[0] == 0.0 && t.x_delta == 0.0));
        match rep.verdict {
            Verdict::Feasible { point, .. } => assert_eq!(point, start),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_ball_toy_matches_hand_alternation() {
        // Two unit-radius disks centered at (+-0.5, 0) as SOC epigraphs with
        // constant right-hand side; start (0, 3). Product-space alternation:
        // project the common point onto each disk, then average.
        let disk = |cx: f64| {
            ConvexSetDescriptor::soc(
                nalgebra::DMatrix::identity(2, 2),
                DVector::from_vec(vec![-cx, 0.0]),
                DVector::zeros(2),
                1.0,
            )
            .unwrap()
        };
        let families = [vec![disk(0.5)], vec![disk(-0.5)]];
        let cfg = ProjectionConfig::default();
        let projectors: Vec<_> = families.iter().map(|f| FamilyProjector::new(f, cfg).unwrap()).collect();

        let mut hand = DVector::from_vec(vec![0.0, 3.0]);
        let mut x = hand.clone();
        for _ in 0..3 {
            // hand computation: nearest point of a disk is center + (p - c)/|p - c|
            let proj = |c: f64, p: &DVector<f64>| {
                let d = DVector::from_vec(vec![p[0] - c, p[1]]);
                let n = d.norm();
                if n <= 1.0 {
                    p.clone()
                } else {
                    DVector::from_vec(vec![c + d[0] / n, d[1] / n])
                }
            };
            hand = (proj(0.5, &hand) + proj(-0.5, &hand)) / 2.0;
            let outs: Vec<_> = projectors.iter().map(|p| bs_solve(p, &x).0).collect();
            x = average(&outs);
            assert!((&x - &hand).norm() < 1e-6, "{x} vs {hand}");
        }
    }
}
