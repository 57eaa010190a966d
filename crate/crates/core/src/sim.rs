//! In-process message passing for the two topologies.
//!
//! APB runs on a star: the central unit broadcasts the average to every BS
//! and collects one answer per BS. CPB runs on a ring: the token visits the
//! BSs in ring order. Messages go through a single FIFO queue, so delivery
//! order is fixed and the numbers match [`crate::apb::run_apb`] and
//! [`crate::cpb::run_cpb`] bit for bit.
//!
//! Each BS agent is built from its own descriptor family only.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::Serialize;

use crate::apb::{
    apply_round, bs_solve, check_start, finish, run_apb, structural_verdict, ApbState, DecisionThresholds, RunReport,
};
use crate::cpb::{close_round, cpb_decide, cpb_step, default_order, run_cpb, validate_order, CpbState};
use crate::error::{Error, Result};
use crate::projop::{FamilyProjector, ProjectionConfig};
use crate::transform::LiftedInstance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Apb,
    Cpb,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Apb => "apb",
            Algorithm::Cpb => "cpb",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "apb" => Ok(Algorithm::Apb),
            "cpb" => Ok(Algorithm::Cpb),
            other => Err(Error::InvalidInput(format!(
                "unknown algorithm '{other}', expected apb or cpb"
            ))),
        }
    }
}

/// Runs `algorithm` directly, without the message layer.
pub fn run(
    instance: &LiftedInstance,
    algorithm: Algorithm,
    start: DVector<f64>,
    th: &DecisionThresholds,
    cfg: &ProjectionConfig,
) -> Result<RunReport> {
    match algorithm {
        Algorithm::Apb => run_apb(instance, start, th, cfg),
        Algorithm::Cpb => run_cpb(instance, start, default_order(instance.cells()), th, cfg),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Node {
    Central,
    Bs(usize),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Central => f.write_str("cu"),
            Node::Bs(i) => write!(f, "bs{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EdgeCount {
    pub from: Node,
    pub to: Node,
    pub messages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TopologyLog {
    pub algorithm: Algorithm,
    pub rounds: usize,
    pub messages: usize,
    /// Real vector entries carried by all messages together.
    pub payload_elements: usize,
    pub edges: Vec<EdgeCount>,
}

impl TopologyLog {
    fn new(algorithm: Algorithm) -> Self {
        TopologyLog {
            algorithm,
            rounds: 0,
            messages: 0,
            payload_elements: 0,
            edges: Vec::new(),
        }
    }

    fn record(&mut self, msg: &Message) {
        self.messages += 1;
        self.payload_elements += msg.payload.len();
        match self.edges.iter_mut().find(|e| e.from == msg.from && e.to == msg.to) {
            Some(e) => e.messages += 1,
            None => {
                self.edges.push(EdgeCount {
                    from: msg.from,
                    to: msg.to,
                    messages: 1,
                });
                self.edges.sort_by_key(|e| (e.from, e.to));
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Message {
    from: Node,
    to: Node,
    payload: DVector<f64>,
}

/// FIFO transport that logs every message it carries.
struct Network {
    queue: VecDeque<Message>,
    log: TopologyLog,
}

impl Network {
    fn send(&mut self, from: Node, to: Node, payload: DVector<f64>) {
        let msg = Message { from, to, payload };
        self.log.record(&msg);
        self.queue.push_back(msg);
    }

    fn deliver(&mut self) -> Option<Message> {
        self.queue.pop_front()
    }
}

/// A base station: knows only its own family.
struct BsAgent {
    projector: FamilyProjector,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: RunReport,
    pub log: TopologyLog,
}

/// Simulation from the zero start point with the default ring order.
pub fn simulate(
    instance: &LiftedInstance,
    algorithm: Algorithm,
    th: &DecisionThresholds,
    cfg: &ProjectionConfig,
) -> Result<SimOutcome> {
    simulate_with(
        instance,
        algorithm,
        DVector::zeros(instance.dim()),
        default_order(instance.cells()),
        th,
        cfg,
    )
}

/// Simulation from `start`; `order` is the ring order and is ignored by APB.
pub fn simulate_with(
    instance: &LiftedInstance,
    algorithm: Algorithm,
    start: DVector<f64>,
    order: Vec<usize>,
    th: &DecisionThresholds,
    cfg: &ProjectionConfig,
) -> Result<SimOutcome> {
    th.validate()?;
    check_start(instance, &start)?;
    let mut net = Network {
        queue: VecDeque::new(),
        log: TopologyLog::new(algorithm),
    };
    if let Some(verdict) = structural_verdict(instance) {
        return Ok(SimOutcome {
            report: RunReport {
                verdict,
                rounds: 0,
                trace: Vec::new(),
            },
            log: net.log,
        });
    }
    let agents = (0..instance.cells())
        .map(|i| {
            Ok(BsAgent {
                projector: FamilyProjector::new(instance.family(i), *cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = match algorithm {
        Algorithm::Apb => star(instance, &agents, &mut net, start, th),
        Algorithm::Cpb => {
            validate_order(&order, instance.cells())?;
            ring(instance, &agents, &mut net, start, order, th)
        }
    };
    net.log.rounds = report.rounds;
    Ok(SimOutcome { report, log: net.log })
}

fn star(
    instance: &LiftedInstance,
    agents: &[BsAgent],
    net: &mut Network,
    start: DVector<f64>,
    th: &DecisionThresholds,
) -> RunReport {
    let m = agents.len();
    let mut state = ApbState::new(start, m);
    loop {
        for i in 0..m {
            net.send(Node::Central, Node::Bs(i), state.x_tilde.clone());
        }
        let mut inbox: Vec<Option<(DVector<f64>, f64, bool)>> = vec![None; m];
        while let Some(msg) = net.deliver() {
            match msg.to {
                Node::Bs(i) => {
                    let (point, dist, failed) = bs_solve(&agents[i].projector, &msg.payload);
                    // distance and status ride along with the vector
                    inbox[i] = Some((point.clone(), dist, failed));
                    net.send(Node::Bs(i), Node::Central, point);
                }
                Node::Central => {}
            }
        }
        let results = inbox
            .into_iter()
            .map(|r| r.expect("every BS answers the broadcast"))
            .collect();
        apply_round(&mut state, instance, results);
        let last = state.trace.last().expect("round recorded").clone();
        let decision = crate::apb::decide(&mut state.rule, instance, &state.x_tilde, &last, th);
        if let Some(verdict) = finish(instance, decision) {
            return RunReport {
                verdict,
                rounds: state.round,
                trace: state.trace,
            };
        }
    }
}

fn ring(
    instance: &LiftedInstance,
    agents: &[BsAgent],
    net: &mut Network,
    start: DVector<f64>,
    order: Vec<usize>,
    th: &DecisionThresholds,
) -> RunReport {
    let m = order.len();
    let mut state = CpbState::new(start, order);
    // the start token is handed to the first BS from outside the ring
    let mut holder = state.order[0];
    loop {
        for step in 0..m {
            let cell = state.order[step];
            debug_assert_eq!(cell, holder);
            cpb_step(&mut state, cell, &agents[cell].projector);
            let next = state.order[(step + 1) % m];
            net.send(Node::Bs(cell), Node::Bs(next), state.token.clone());
            let msg = net.deliver().expect("token in flight");
            state.token = msg.payload;
            holder = next;
        }
        close_round(&mut state, instance);
        if let Some(verdict) = finish(instance, cpb_decide(&mut state, instance, th)) {
            return RunReport {
                verdict,
                rounds: state.round,
                trace: state.trace,
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scenario;
    use crate::transform::FeasibilityTarget;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64, betas: Vec<f64>) -> LiftedInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = betas.len();
        let s = Scenario::random_cscg(m, 2, vec![10.0; m], vec![1.0; m], &mut rng).unwrap();
        LiftedInstance::build(&s, &FeasibilityTarget::from_betas(betas).unwrap()).unwrap()
    }

    #[test]
    fn message_accounting() {
        let li = instance(1, vec![2.0, 2.0, 2.0]);
        let th = DecisionThresholds::default();
        let cfg = ProjectionConfig::default();
        let a = simulate(&li, Algorithm::Apb, &th, &cfg).unwrap();
        let n = a.report.rounds;
        assert!(n > 0);
        assert_eq!(a.log.messages, 2 * 3 * n);
        assert_eq!(a.log.payload_elements, a.log.messages * li.dim());
        assert_eq!(a.log.edges.len(), 6);
        assert!(a.log.edges.iter().all(|e| e.messages == n));

        let c = simulate(&li, Algorithm::Cpb, &th, &cfg).unwrap();
        assert_eq!(c.log.messages, 3 * c.report.rounds);
        let ring: Vec<_> = c.log.edges.iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(
            ring,
            vec![
                (Node::Bs(0), Node::Bs(1)),
                (Node::Bs(1), Node::Bs(2)),
                (Node::Bs(2), Node::Bs(0))
            ]
        );
    }

    #[test]
    fn transport_does_not_change_numbers() {
        let th = DecisionThresholds::default();
        let cfg = ProjectionConfig::default();
        for seed in 0..4 {
            let li = instance(seed, vec![3.0, 1.0]);
            for alg in [Algorithm::Apb, Algorithm::Cpb] {
                let direct = run(&li, alg, DVector::zeros(li.dim()), &th, &cfg).unwrap();
                let sim = simulate(&li, alg, &th, &cfg).unwrap();
                assert_eq!(direct, sim.report, "seed {seed} {alg}");
            }
        }
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("APB".parse::<Algorithm>().unwrap(), Algorithm::Apb);
        assert_eq!("cpb".parse::<Algorithm>().unwrap().to_string(), "cpb");
        assert!("pocs".parse::<Algorithm>().is_err());
    }
}
