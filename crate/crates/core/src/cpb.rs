//! Cyclic-projection beamforming: a token travels around a ring of BSs and
//! each BS replaces it by its projection onto its own family F_i.
//!
//! A round is one full lap of M steps. The stopping rule of [`crate::apb`] is
//! applied at round boundaries to the step distances
//! `v_i = ||x_n^(i) - x_n^(i-1)||`, with the token as the candidate point.

use nalgebra::DVector;

use crate::apb::{
    candidate_snrs, check_start, decide, finish, structural_verdict, Decision, DecisionThresholds, RoundTrace,
    RunReport, StoppingRule,
};
use crate::error::{Error, Result};
use crate::projop::{FamilyProjector, ProjectionConfig};
use crate::transform::LiftedInstance;

#[derive(Debug, Clone, PartialEq)]
pub struct CpbState {
    pub round: usize,
    pub token: DVector<f64>,
    /// Token at the start of the current round.
    pub round_start: DVector<f64>,
    pub last_per_bs: Vec<DVector<f64>>,
    pub v: Vec<f64>,
    pub order: Vec<usize>,
    pub rule: StoppingRule,
    pub trace: Vec<RoundTrace>,
    pub inner_failures: usize,
    pub messages: usize,
}

impl CpbState {
    pub fn new(start: DVector<f64>, order: Vec<usize>) -> Self {
        let m = order.len();
        CpbState {
            round: 0,
            round_start: start.clone(),
            last_per_bs: vec![start.clone(); m],
            token: start,
            v: vec![0.0; m],
            order,
            rule: StoppingRule::new(m),
            trace: Vec::new(),
            inner_failures: 0,
            messages: 0,
        }
    }
}

pub fn validate_order(order: &[usize], cells: usize) -> Result<()> {
    let mut seen = vec![false; cells];
    if order.len() != cells {
        return Err(Error::InvalidInput(format!(
            "ring order has {} entries for M = {cells}",
            order.len()
        )));
    }
    for &i in order {
        if i >= cells || seen[i] {
            return Err(Error::InvalidInput(format!(
                "ring order {order:?} is not a permutation"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// BS `cell` projects the incoming token and forwards it.
pub fn cpb_step(state: &mut CpbState, cell: usize, projector: &FamilyProjector) {
    let r = projector.project(&state.token);
    if !r.converged {
        state.inner_failures += 1;
    }
    state.v[cell] = r.distance;
    state.last_per_bs[cell] = r.point.clone();
    state.token = r.point;
    state.messages += 1;
}

pub(crate) fn close_round(state: &mut CpbState, instance: &LiftedInstance) {
    state.round += 1;
    let x_delta = (&state.token - &state.round_start).norm();
    state.trace.push(RoundTrace {
        round: state.round,
        v: state.v.clone(),
        x_delta,
        snr: candidate_snrs(instance, &state.token),
        product_distance: state.v.iter().map(|d| d * d).sum::<f64>().sqrt(),
        inner_failures: state.inner_failures,
    });
    state.inner_failures = 0;
    state.round_start = state.token.clone();
}

pub(crate) fn cpb_decide(state: &mut CpbState, instance: &LiftedInstance, th: &DecisionThresholds) -> Decision {
    let last = state.trace.last().expect("decide after a completed round").clone();
    decide(&mut state.rule, instance, &state.token, &last, th)
}

/// CPB with its per-cell projectors compiled once.
pub struct Cpb<'a> {
    instance: &'a LiftedInstance,
    projectors: Vec<FamilyProjector>,
}

impl<'a> Cpb<'a> {
    pub fn new(instance: &'a LiftedInstance, cfg: &ProjectionConfig) -> Result<Self> {
        let projectors = (0..instance.cells())
            .map(|i| FamilyProjector::new(instance.family(i), *cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Cpb { instance, projectors })
    }

    pub fn lap(&self, state: &mut CpbState) {
        for idx in 0..state.order.len() {
            let cell = state.order[idx];
            cpb_step(state, cell, &self.projectors[cell]);
        }
        close_round(state, self.instance);
    }

    pub fn run(&self, start: DVector<f64>, order: Vec<usize>, th: &DecisionThresholds) -> Result<RunReport> {
        th.validate()?;
        check_start(self.instance, &start)?;
        validate_order(&order, self.instance.cells())?;
        if let Some(verdict) = structural_verdict(self.instance) {
            return Ok(RunReport {
                verdict,
                rounds: 0,
                trace: Vec::new(),
            });
        }
        let mut state = CpbState::new(start, order);
        loop {
            self.lap(&mut state);
            let d = cpb_decide(&mut state, self.instance, th);
            if let Some(verdict) = finish(self.instance, d) {
                return Ok(RunReport {
                    verdict,
                    rounds: state.round,
                    trace: state.trace,
                });
            }
        }
    }
}

/// Default ring order `0, 1, ..., M-1`.
pub fn default_order(cells: usize) -> Vec<usize> {
    (0..cells).collect()
}

pub fn run_cpb(
    instance: &LiftedInstance,
    start: DVector<f64>,
    order: Vec<usize>,
    th: &DecisionThresholds,
    cfg: &ProjectionConfig,
) -> Result<RunReport> {
    Cpb::new(instance, cfg)?.run(start, order, th)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::ConvexSetDescriptor;

    fn disk(cx: f64, r: f64) -> Vec<ConvexSetDescriptor> {
        vec![ConvexSetDescriptor::soc(
            nalgebra::DMatrix::identity(2, 2),
            DVector::from_vec(vec![-cx, 0.0]),
            DVector::zeros(2),
            r,
        )
        .unwrap()]
    }

    fn run_toy(families: &[Vec<ConvexSetDescriptor>], start: DVector<f64>, laps: usize) -> CpbState {
        let cfg = ProjectionConfig::default();
        let projectors: Vec<_> = families.iter().map(|f| FamilyProjector::new(f, cfg).unwrap()).collect();
        let mut state = CpbState::new(start, default_order(families.len()));
        for _ in 0..laps {
            for (i, p) in projectors.iter().enumerate() {
                cpb_step(&mut state, i, p);
            }
        }
        state
    }

    #[test]
    fn token_inside_is_unchanged() {
        let s = run_toy(&[disk(0.0, 1.0)], DVector::from_vec(vec![0.2, 0.1]), 1);
        assert_eq!(s.token, DVector::from_vec(vec![0.2, 0.1]));
        assert_eq!(s.v, vec![0.0]);
    }

    #[test]
    fn overlapping_disks_settle_in_intersection() {
        let fams = [disk(0.5, 1.0), disk(-0.5, 1.0)];
        let s = run_toy(&fams, DVector::from_vec(vec![3.0, 2.0]), 50);
        for f in &fams {
            assert!(f[0].violation(&s.token) < 1e-7);
        }
        assert!(s.v.iter().all(|&v| v < 1e-7));
    }

    #[test]
    fn disjoint_disks_step_to_the_gap() {
        // disks of radius 1 centered at (+-2, 0): nearest points (+-1, 0), gap 2
        let fams = [disk(2.0, 1.0), disk(-2.0, 1.0)];
        let s = run_toy(&fams, DVector::from_vec(vec![0.3, 4.0]), 200);
        for &v in &s.v {
            assert!((v - 2.0).abs() < 1e-5, "step distance {v}");
        }
        assert!((s.last_per_bs[0][0] - 1.0).abs() < 1e-5 && s.last_per_bs[0][1].abs() < 1e-5);
        assert!((s.last_per_bs[1][0] + 1.0).abs() < 1e-5 && s.last_per_bs[1][1].abs() < 1e-5);
    }

    #[test]
    fn order_must_be_permutation() {
        assert!(validate_order(&[0, 1, 2], 3).is_ok());
        assert!(validate_order(&[0, 0, 2], 3).is_err());
        assert!(validate_order(&[0, 1], 3).is_err());
        assert!(validate_order(&[0, 3, 1], 3).is_err());
    }
}
