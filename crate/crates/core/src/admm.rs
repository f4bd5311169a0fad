//! Decentralized clearing by consensus ADMM.
//!
//! Every actor (prosumer, TSO, DSO) owns a block of variables together with
//! the rows that touch only that block. Rows spanning several actors are the
//! coupling rows; the variables they mention form the shared set `S`. Each
//! round solves
//!
//! ```text
//! x_a <- argmin f_a(x_a) + rho/2 |x_a,S - y + u|^2   over the actor's own set
//! y   <- projection of x_S + u onto { C y = b }
//! u   <- u + x_S - y
//! ```
//!
//! with `C y = b` the coupling rows restricted to `S`. Residuals are RMS
//! norms: primal `|x_S - y|`, dual `rho |y - y_prev|`. Coupling prices are
//! recovered from `C' nu = rho u`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::clearing::{interpret, Actor, ClearingProblem, ClearingSolution};
use crate::error::{Error, Result};
use crate::grid::Operator;
use crate::solver::{ConicProgram, DiscConstraint, LinearRow, SolveResult, Status};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmmOptions {
    pub rho: f64,
    pub max_iter: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
    /// Residual balancing: rho is doubled or halved while one residual
    /// exceeds the other tenfold, during the first `adapt_until` rounds.
    pub adaptive: bool,
    pub adapt_until: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        AdmmOptions {
            rho: 1.0,
            max_iter: 5000,
            eps_primal: 1e-6,
            eps_dual: 1e-6,
            adaptive: true,
            adapt_until: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmmRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub objective: f64,
    pub rho: f64,
}

/// Iterate of the negotiation.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationState {
    /// Actors' local copies, stored at their global variable positions.
    pub x: Vec<f64>,
    /// Consensus values of the shared variables.
    pub y: Vec<f64>,
    pub y_prev: Vec<f64>,
    /// Scaled multipliers of `x_S = y`.
    pub u: Vec<f64>,
    pub rho: f64,
    pub iteration: usize,
    pub history: Vec<AdmmRecord>,
    /// Global index of each shared variable.
    pub shared: Vec<usize>,
}

/// `(primal, dual)` residuals of the current iterate.
pub fn residuals(state: &NegotiationState) -> (f64, f64) {
    let n = state.shared.len().max(1) as f64;
    let primal = state
        .shared
        .iter()
        .zip(&state.y)
        .map(|(&j, &y)| (state.x[j] - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let dual = state
        .y
        .iter()
        .zip(&state.y_prev)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
        * state.rho;
    (primal / n.sqrt(), dual / n.sqrt())
}

pub struct AdmmOutcome {
    pub solution: ClearingSolution,
    pub converged: bool,
    pub state: NegotiationState,
}

/// Local subproblem of one actor, in local variable numbering.
struct ActorBlock {
    actor: Actor,
    vars: Vec<usize>,
    template: ConicProgram,
    eq_rows: Vec<usize>,
    ineq_rows: Vec<usize>,
    discs: Vec<usize>,
    /// `(local variable, shared slot)` pairs.
    shared: Vec<(usize, usize)>,
}

struct Decomposition {
    blocks: Vec<ActorBlock>,
    shared: Vec<usize>,
    coupling_rows: Vec<usize>,
    c: DMatrix<f64>,
    b: DVector<f64>,
    /// `pinv(C C')`, reused for the projection and for price recovery.
    cct_pinv: DMatrix<f64>,
}

fn actor_name(problem: &ClearingProblem, actor: Actor) -> String {
    match actor {
        Actor::Prosumer(i) => problem.labels.agents[i].clone(),
        Actor::Operator(Operator::Tso) => "TSO".into(),
        Actor::Operator(Operator::Dso(d)) => format!("DSO {d}"),
    }
}

fn decompose(problem: &ClearingProblem) -> Result<Decomposition> {
    let program = &problem.program;
    let owner = &problem.owner;
    let single_owner = |row: &LinearRow| -> Option<Actor> {
        let first = owner[row.coeffs.first()?.0];
        row.coeffs.iter().all(|&(j, _)| owner[j] == first).then_some(first)
    };

    let mut actors: Vec<Actor> = owner.clone();
    actors.sort();
    actors.dedup();
    let mut local_index = vec![usize::MAX; program.n];
    let mut blocks: Vec<ActorBlock> = actors
        .iter()
        .map(|&actor| {
            let vars: Vec<usize> = (0..program.n).filter(|&j| owner[j] == actor).collect();
            for (l, &j) in vars.iter().enumerate() {
                local_index[j] = l;
            }
            let mut template = ConicProgram::new(vars.len());
            template.linear = vars.iter().map(|&j| program.linear[j]).collect();
            template.lower = vars.iter().map(|&j| program.lower[j]).collect();
            template.upper = vars.iter().map(|&j| program.upper[j]).collect();
            ActorBlock {
                actor,
                vars,
                template,
                eq_rows: Vec::new(),
                ineq_rows: Vec::new(),
                discs: Vec::new(),
                shared: Vec::new(),
            }
        })
        .collect();
    let block_of = |a: Actor| actors.binary_search(&a).expect("actor listed");
    let localize = |row: &LinearRow| LinearRow::new(row.coeffs.iter().map(|&(j, c)| (local_index[j], c)).collect(), row.rhs);

    for &(i, j, c) in &program.quadratic {
        if owner[i] != owner[j] {
            return Err(Error::Config("objective couples two actors".into()));
        }
        let blk = &mut blocks[block_of(owner[i])];
        blk.template.quadratic.push((local_index[i], local_index[j], c));
    }
    let mut coupling_rows = Vec::new();
    for (r, row) in program.equalities.iter().enumerate() {
        match single_owner(row) {
            Some(a) => {
                let blk = &mut blocks[block_of(a)];
                blk.template.equalities.push(localize(row));
                blk.eq_rows.push(r);
            }
            None => coupling_rows.push(r),
        }
    }
    for (r, row) in program.inequalities.iter().enumerate() {
        let a = single_owner(row).ok_or_else(|| {
            Error::Config(format!("inequality `{}` couples actors", problem.rows.ineq_names[r]))
        })?;
        let blk = &mut blocks[block_of(a)];
        blk.template.inequalities.push(localize(row));
        blk.ineq_rows.push(r);
    }
    for (d, disc) in program.discs.iter().enumerate() {
        if owner[disc.u] != owner[disc.v] {
            return Err(Error::Config("apparent-power limit couples actors".into()));
        }
        let blk = &mut blocks[block_of(owner[disc.u])];
        blk.template.discs.push(DiscConstraint {
            u: local_index[disc.u],
            v: local_index[disc.v],
            radius: disc.radius,
        });
        blk.discs.push(d);
    }

    let mut slot = vec![usize::MAX; program.n];
    let mut shared = Vec::new();
    for &r in &coupling_rows {
        for &(j, _) in &program.equalities[r].coeffs {
            if slot[j] == usize::MAX {
                slot[j] = shared.len();
                shared.push(j);
            }
        }
    }
    shared.sort_unstable();
    for (s, &j) in shared.iter().enumerate() {
        slot[j] = s;
    }
    for blk in &mut blocks {
        blk.shared = blk
            .vars
            .iter()
            .enumerate()
            .filter(|&(_, &j)| slot[j] != usize::MAX)
            .map(|(l, &j)| (l, slot[j]))
            .collect();
    }

    let mut c = DMatrix::<f64>::zeros(coupling_rows.len(), shared.len());
    let mut b = DVector::<f64>::zeros(coupling_rows.len());
    for (k, &r) in coupling_rows.iter().enumerate() {
        let row = &program.equalities[r];
        for &(j, v) in &row.coeffs {
            c[(k, slot[j])] += v;
        }
        b[k] = row.rhs;
    }
    let cct = &c * c.transpose();
    let cct_pinv = cct
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Solver(format!("coupling projection: {e}")))?;
    Ok(Decomposition {
        blocks,
        shared,
        coupling_rows,
        c,
        b,
        cct_pinv,
    })
}

impl Decomposition {
    /// Euclidean projection onto `{ C y = b }`.
    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let r = &self.c * v - &self.b;
        v - self.c.transpose() * (&self.cct_pinv * r)
    }

    fn solve_block(&self, problem: &ClearingProblem, blk: &ActorBlock, state: &NegotiationState) -> Result<SolveResult> {
        let mut local = blk.template.clone();
        for &(l, s) in &blk.shared {
            local.quadratic.push((l, l, 0.5 * state.rho));
            local.linear[l] -= state.rho * (state.y[s] - state.u[s]);
        }
        let result = problem.options.backend().solve(&local);
        if result.status != Status::Optimal {
            return Err(Error::Solver(format!(
                "subproblem of {} ended with status {}",
                actor_name(problem, blk.actor),
                result.status
            )));
        }
        Ok(result)
    }
}

/// Runs the negotiation from zero consensus and multipliers.
pub fn run(problem: &ClearingProblem, options: &AdmmOptions) -> Result<AdmmOutcome> {
    if !(options.rho > 0.0) {
        return Err(Error::Config(format!("rho must be positive, got {}", options.rho)));
    }
    let dec = decompose(problem)?;
    let n_shared = dec.shared.len();
    let mut state = NegotiationState {
        x: vec![0.0; problem.program.n],
        y: vec![0.0; n_shared],
        y_prev: vec![0.0; n_shared],
        u: vec![0.0; n_shared],
        rho: options.rho,
        iteration: 0,
        history: Vec::new(),
        shared: dec.shared.clone(),
    };
    let mut last: Vec<SolveResult> = Vec::new();
    let mut converged = false;
    while state.iteration < options.max_iter {
        last = dec
            .blocks
            .par_iter()
            .map(|blk| dec.solve_block(problem, blk, &state))
            .collect::<Result<Vec<_>>>()?;
        for (blk, res) in dec.blocks.iter().zip(&last) {
            for (l, &j) in blk.vars.iter().enumerate() {
                state.x[j] = res.x[l];
            }
        }
        let v = DVector::from_iterator(n_shared, dec.shared.iter().zip(&state.u).map(|(&j, &u)| state.x[j] + u));
        let y = dec.project(&v);
        state.y_prev = std::mem::replace(&mut state.y, y.iter().copied().collect());
        for (s, &j) in dec.shared.iter().enumerate() {
            state.u[s] += state.x[j] - state.y[s];
        }
        state.iteration += 1;
        let (primal, dual) = residuals(&state);
        state.history.push(AdmmRecord {
            iteration: state.iteration,
            primal,
            dual,
            objective: problem.program.objective(&state.x),
            rho: state.rho,
        });
        if primal <= options.eps_primal && dual <= options.eps_dual {
            converged = true;
            break;
        }
        if options.adaptive && state.iteration < options.adapt_until {
            let factor = if primal > 10.0 * dual {
                2.0
            } else if dual > 10.0 * primal {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                state.rho *= factor;
                state.u.iter_mut().for_each(|u| *u /= factor);
            }
        }
    }
    if !converged {
        log::warn!("negotiation stopped after {} rounds without consensus", state.iteration);
    }
    let result = assemble_result(problem, &dec, &state, &last, converged);
    Ok(AdmmOutcome {
        solution: interpret(problem, &result),
        converged,
        state,
    })
}

fn assemble_result(
    problem: &ClearingProblem,
    dec: &Decomposition,
    state: &NegotiationState,
    local: &[SolveResult],
    converged: bool,
) -> SolveResult {
    let program = &problem.program;
    let mut out = SolveResult {
        status: if converged { Status::Optimal } else { Status::IterationLimit },
        x: state.x.clone(),
        eq_duals: vec![0.0; program.equalities.len()],
        ineq_duals: vec![0.0; program.inequalities.len()],
        lower_duals: vec![0.0; program.n],
        upper_duals: vec![0.0; program.n],
        disc_duals: vec![[0.0; 2]; program.discs.len()],
        objective: program.objective(&state.x),
        dual_objective: f64::NAN,
        iterations: state.iteration,
        conflict: Vec::new(),
    };
    for (blk, res) in dec.blocks.iter().zip(local) {
        for (l, &j) in blk.vars.iter().enumerate() {
            out.lower_duals[j] = res.lower_duals[l];
            out.upper_duals[j] = res.upper_duals[l];
        }
        for (l, &r) in blk.eq_rows.iter().enumerate() {
            out.eq_duals[r] = res.eq_duals[l];
        }
        for (l, &r) in blk.ineq_rows.iter().enumerate() {
            out.ineq_duals[r] = res.ineq_duals[l];
        }
        for (l, &d) in blk.discs.iter().enumerate() {
            out.disc_duals[d] = res.disc_duals[l];
        }
    }
    let scaled = DVector::from_iterator(state.u.len(), state.u.iter().map(|u| state.rho * u));
    let nu = &dec.cct_pinv * (&dec.c * scaled);
    for (k, &r) in dec.coupling_rows.iter().enumerate() {
        out.eq_duals[r] = nu[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Agent, QuadraticCost, TradeGraph};
    use crate::clearing::{assemble, solve, ClearingOptions, Market};
    use crate::grid::fixtures::{ac, tso_bus};
    use crate::grid::{GridModel, GridSpec};

    fn two_agent_problem() -> ClearingProblem {
        let grid = GridModel::new(GridSpec {
            base_mva: 100.0,
            buses: vec![tso_bus("A"), tso_bus("B")],
            ac_lines: vec![ac("AB", 0, 1, 0.1, 0.01, 100.0)],
            hvdc_lines: vec![],
            dist_lines: vec![],
            connections: vec![],
            dsos: vec![],
            slack: 0,
            loss_segments: 1,
        })
        .unwrap();
        let cost = |a, b| QuadraticCost { quadratic: a, linear: b };
        let agents = vec![
            Agent {
                id: "g".into(),
                bus: 0,
                p_min: 0.0,
                p_max: 10.0,
                q_min: 0.0,
                q_max: 0.0,
                cost: cost(0.5, 10.0),
            },
            Agent {
                id: "l".into(),
                bus: 1,
                p_min: -8.0,
                p_max: 0.0,
                q_min: 0.0,
                q_max: 0.0,
                cost: cost(0.5, 20.0),
            },
        ];
        let graph = TradeGraph::full(2);
        let market = Market {
            grid: &grid,
            agents: &agents,
            graph: &graph,
            allocation: None,
        };
        assemble(
            &market,
            ClearingOptions {
                grid: false,
                losses: false,
                ..ClearingOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn two_agents_reach_the_central_optimum() {
        let problem = two_agent_problem();
        let central = solve(&problem, problem.options.backend().as_ref());
        let out = run(&problem, &AdmmOptions::default()).unwrap();
        assert!(out.converged);
        let gap = (out.solution.objective - central.objective).abs();
        assert!(gap <= 1e-4 * (1.0 + central.objective.abs()), "gap {gap}");
        let (a, b) = (out.solution.duals().unwrap(), central.duals().unwrap());
        for k in 0..2 {
            assert!((a.tau_t[k] - b.tau_t[k]).abs() < 1e-3, "{:?} {:?} {:?} {:?} {:?} {:?}", a.tau_t, b.tau_t, a.tau_z, b.tau_z, a.pi, b.pi);
        }
        assert_eq!(out.state.history.len(), out.state.iteration);
        assert!(out.state.history.iter().all(|h| h.primal.is_finite() && h.dual.is_finite()));
    }

    #[test]
    fn scaled_rho_reaches_the_same_point() {
        let problem = two_agent_problem();
        let base = run(&problem, &AdmmOptions::default()).unwrap();
        let scaled = run(
            &problem,
            &AdmmOptions {
                rho: 10.0,
                ..AdmmOptions::default()
            },
        )
        .unwrap();
        assert!(base.converged && scaled.converged);
        assert!((base.solution.objective - scaled.solution.objective).abs() < 1e-4);
        for (a, b) in base.solution.t.iter().zip(&scaled.solution.t) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn residuals_at_consensus_vanish() {
        let state = NegotiationState {
            x: vec![1.0, 2.0, 3.0],
            y: vec![1.0, 3.0],
            y_prev: vec![1.0, 3.0],
            u: vec![0.5, -0.5],
            rho: 1.0,
            iteration: 1,
            history: vec![],
            shared: vec![0, 2],
        };
        assert_eq!(residuals(&state), (0.0, 0.0));
    }

    #[test]
    fn rejects_nonpositive_rho() {
        let problem = two_agent_problem();
        let bad = AdmmOptions {
            rho: 0.0,
            ..AdmmOptions::default()
        };
        assert!(run(&problem, &bad).is_err());
    }
}
