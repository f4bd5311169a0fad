//! Joint clearing of energy, grid usage and losses.
//!
//! The equilibrium of prosumers, the TSO and the DSOs is computed as one
//! convex program; trade, grid, loss, exchange and reactive prices are its
//! multipliers.

mod assemble;
mod kkt;

use serde::{Deserialize, Serialize};

pub use assemble::{equality_matrix, Actor, Layout, RowMap};
pub use kkt::{extract_prices, verify_kkt, KktReport, PriceTables, TradePrice};

use crate::agents::{validate, Agent, TradeGraph};
use crate::error::{Error, Result};
use crate::grid::{build_ptdf, GridModel, Ptdf};
use crate::policy::AllocationMatrix;
use crate::solver::{backend_for, Backend, ConicProgram, ConstraintRef, SocMode, SolveResult, Status, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearingOptions {
    pub grid: bool,
    pub losses: bool,
    pub soc_mode: SocMode,
    pub cuts: usize,
    pub tolerances: Tolerances,
}

impl Default for ClearingOptions {
    fn default() -> Self {
        ClearingOptions {
            grid: true,
            losses: true,
            soc_mode: SocMode::Polygon,
            cuts: 16,
            tolerances: Tolerances { tol: 1e-9, max_iter: 300 },
        }
    }
}

impl ClearingOptions {
    /// Losses need line flows; without the grid they are switched off.
    pub fn normalized(mut self) -> Self {
        if !self.grid && self.losses {
            self.losses = false;
        }
        self
    }

    pub fn backend(&self) -> Box<dyn Backend> {
        backend_for(self.soc_mode, self.cuts, self.tolerances)
    }
}

/// Everything the clearing problem is built from.
#[derive(Debug, Clone, Copy)]
pub struct Market<'a> {
    pub grid: &'a GridModel,
    pub agents: &'a [Agent],
    pub graph: &'a TradeGraph,
    /// Required when losses are on.
    pub allocation: Option<&'a AllocationMatrix>,
}

/// Identifiers used to key output tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Labels {
    pub agents: Vec<String>,
    pub agent_bus: Vec<usize>,
    pub buses: Vec<String>,
    pub trades: Vec<(usize, usize)>,
    pub reverse: Vec<Option<usize>>,
    pub connections: Vec<String>,
    pub lines: Vec<String>,
    pub hvdc: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ClearingProblem {
    pub program: ConicProgram,
    pub layout: Layout,
    pub rows: RowMap,
    /// Owning actor of every variable.
    pub owner: Vec<Actor>,
    pub options: ClearingOptions,
    pub labels: Labels,
    pub ptdf: Option<Ptdf>,
    /// Transmission bus of every agent, `None` at distribution level.
    pub tso_bus: Vec<Option<usize>>,
}

pub fn assemble(market: &Market, options: ClearingOptions) -> Result<ClearingProblem> {
    let options = options.normalized();
    let Market {
        grid,
        agents,
        graph,
        allocation,
    } = *market;
    let errors: Vec<String> = validate(agents, graph)
        .into_iter()
        .filter(|d| d.is_error())
        .map(|d| d.to_string())
        .collect();
    if !errors.is_empty() {
        return Err(Error::InvalidCase(errors.join("; ")));
    }
    for a in agents {
        if a.bus >= grid.buses.len() {
            return Err(Error::UnknownBus(format!("#{} (agent `{}`)", a.bus, a.id)));
        }
    }
    if options.losses {
        let a = allocation.ok_or_else(|| Error::Config("losses are on but no allocation matrix was given".into()))?;
        a.check_conservation(grid, agents, graph, 1e-9)?;
    }
    let ptdf = if options.grid { Some(build_ptdf(grid)?) } else { None };
    let builder = assemble::Builder {
        grid,
        agents,
        graph,
        allocation,
        ptdf: ptdf.as_ref(),
        options: &options,
        program: ConicProgram::new(0),
        layout: Layout::default(),
        rows: RowMap::default(),
        owner: Vec::new(),
    };
    let (program, layout, rows, owner) = builder.build();
    program.check().map_err(Error::Dimension)?;
    let labels = Labels {
        agents: agents.iter().map(|a| a.id.clone()).collect(),
        agent_bus: agents.iter().map(|a| a.bus).collect(),
        buses: grid.buses.iter().map(|b| b.id.clone()).collect(),
        trades: graph.trades().to_vec(),
        reverse: (0..graph.trades().len()).map(|k| graph.reverse(k)).collect(),
        connections: grid.connections.iter().map(|c| c.id.clone()).collect(),
        lines: (0..grid.line_count()).map(|l| grid.line_id(l).to_string()).collect(),
        hvdc: grid.hvdc_lines.iter().map(|h| h.id.clone()).collect(),
    };
    let tso_bus = agents
        .iter()
        .map(|a| grid.buses[a.bus].operator.is_tso().then_some(a.bus))
        .collect();
    Ok(ClearingProblem {
        program,
        layout,
        rows,
        owner,
        options,
        labels,
        ptdf,
        tso_bus,
    })
}

/// Multipliers of the network rows; absent when the grid is off.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridDuals {
    /// Transmission flow definition, per AC line.
    pub phi: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub mu_upper: Vec<f64>,
    pub hvdc_lower: Vec<f64>,
    pub hvdc_upper: Vec<f64>,
    /// Distribution nodal balance, per bus (NaN at transmission buses).
    pub eta: Vec<f64>,
    pub eta_p: Vec<f64>,
    pub eta_q: Vec<f64>,
    /// Magnitude of the apparent-power limit multiplier, per distribution line.
    pub eta_ac: Vec<f64>,
    pub eta_theta: Vec<(f64, f64)>,
    pub eta_v: Vec<(f64, f64)>,
    /// Loss envelope multipliers, per line and segment, `(+f, -f)`.
    pub loss: Vec<Vec<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Duals {
    /// Perceived price per agent (NaN for isolated agents).
    pub pi: Vec<f64>,
    pub tau_t: Vec<f64>,
    pub tau_z: Vec<f64>,
    /// Empty when losses are off.
    pub tau_l: Vec<f64>,
    pub tau_e: Vec<f64>,
    /// Reactive price per bus (NaN where no reactive balance exists).
    pub lambda: Vec<f64>,
    pub gamma_lower: Vec<f64>,
    pub gamma_upper: Vec<f64>,
    pub grid: Option<GridDuals>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingSolution {
    pub status: Status,
    pub objective: f64,
    pub iterations: usize,
    pub options: ClearingOptions,
    pub labels: Labels,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub t: Vec<f64>,
    /// Allocated losses per trade (zeros when losses are off).
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub f_ac: Vec<f64>,
    pub f_hvdc: Vec<f64>,
    pub w_line: Vec<f64>,
    pub fp: Vec<f64>,
    pub fq: Vec<f64>,
    pub theta: Vec<f64>,
    pub v: Vec<f64>,
    pub e_t: Vec<f64>,
    pub e_d: Vec<f64>,
    /// Present iff the status is optimal.
    pub duals: Option<Duals>,
    /// Names of mutually unsatisfiable rows when infeasible.
    pub conflict: Vec<String>,
}

impl ClearingSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn duals(&self) -> Result<&Duals> {
        self.duals.as_ref().ok_or(Error::NotOptimal(self.status))
    }
}

fn pick(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&j| x[j]).collect()
}

fn pick_opt(x: &[f64], idx: &[Option<usize>]) -> Vec<f64> {
    idx.iter().map(|j| j.map_or(f64::NAN, |j| x[j])).collect()
}

/// Maps backend multipliers onto the named price families.
pub fn interpret(problem: &ClearingProblem, result: &SolveResult) -> ClearingSolution {
    let (l, r) = (&problem.layout, &problem.rows);
    let x = &result.x;
    let n_trades = problem.labels.trades.len();
    let mut sol = ClearingSolution {
        status: result.status,
        objective: result.objective,
        iterations: result.iterations,
        options: problem.options,
        labels: problem.labels.clone(),
        p: l.p.iter().map(|j| j.map_or(0.0, |j| x[j])).collect(),
        q: l.q.iter().map(|j| j.map_or(0.0, |j| x[j])).collect(),
        t: pick(x, &l.t),
        w: if l.w.is_empty() { vec![0.0; n_trades] } else { pick(x, &l.w) },
        z: pick(x, &l.z),
        f_ac: pick(x, &l.f_ac),
        f_hvdc: pick(x, &l.f_hvdc),
        w_line: pick(x, &l.w_line),
        fp: pick(x, &l.fp),
        fq: pick(x, &l.fq),
        theta: pick_opt(x, &l.theta),
        v: pick_opt(x, &l.v),
        e_t: pick(x, &l.e_t),
        e_d: pick(x, &l.e_d),
        duals: None,
        conflict: result
            .conflict
            .iter()
            .map(|c| match *c {
                ConstraintRef::Equality(i) => r.eq_names[i].clone(),
                ConstraintRef::Inequality(i) => r.ineq_names[i].clone(),
                ConstraintRef::Bounds(j) => format!("bounds of {}", l.names[j]),
                ConstraintRef::Disc(d) => format!("apparent-power limit of {}", problem.labels.lines[problem.labels.lines.len() - r.disc.len() + d]),
            })
            .collect(),
    };
    if !result.is_optimal() {
        return sol;
    }
    let y = &result.eq_duals;
    let eq = |rows: &[usize]| rows.iter().map(|&i| y[i]).collect::<Vec<f64>>();
    let eq_opt = |rows: &[Option<usize>]| rows.iter().map(|i| i.map_or(f64::NAN, |i| y[i])).collect::<Vec<f64>>();
    let bound = |vars: &[Option<usize>], duals: &[f64]| -> Vec<f64> {
        vars.iter().map(|j| j.map_or(0.0, |j| duals[j])).collect()
    };
    let grid = problem.options.grid.then(|| GridDuals {
        phi: eq(&r.tso_flow),
        mu_lower: l.f_ac.iter().map(|&j| result.lower_duals[j]).collect(),
        mu_upper: l.f_ac.iter().map(|&j| result.upper_duals[j]).collect(),
        hvdc_lower: l.f_hvdc.iter().map(|&j| result.lower_duals[j]).collect(),
        hvdc_upper: l.f_hvdc.iter().map(|&j| result.upper_duals[j]).collect(),
        eta: eq_opt(&r.dso_balance),
        eta_p: eq(&r.dist_p),
        eta_q: eq(&r.dist_q),
        eta_ac: r
            .disc
            .iter()
            .map(|&d| {
                let [a, b] = result.disc_duals[d];
                a.hypot(b)
            })
            .collect(),
        eta_theta: l
            .theta
            .iter()
            .map(|j| j.map_or((0.0, 0.0), |j| (result.lower_duals[j], result.upper_duals[j])))
            .collect(),
        eta_v: l
            .v
            .iter()
            .map(|j| j.map_or((0.0, 0.0), |j| (result.lower_duals[j], result.upper_duals[j])))
            .collect(),
        loss: r
            .loss
            .iter()
            .map(|segs| {
                segs.iter()
                    .map(|&(a, b)| (result.ineq_duals[a], result.ineq_duals[b]))
                    .collect()
            })
            .collect(),
    });
    sol.duals = Some(Duals {
        pi: eq_opt(&r.balance),
        tau_t: r
            .reciprocity
            .iter()
            .map(|&i| if i == usize::MAX { f64::NAN } else { y[i] })
            .collect(),
        tau_z: eq(&r.injection),
        tau_l: eq(&r.allocation),
        tau_e: eq(&r.exchange),
        lambda: if problem.options.grid {
            eq_opt(&r.reactive)
        } else {
            vec![f64::NAN; problem.labels.buses.len()]
        },
        gamma_lower: bound(&l.p, &result.lower_duals),
        gamma_upper: bound(&l.p, &result.upper_duals),
        grid,
    });
    sol
}

/// Solves an assembled problem with the given backend.
pub fn solve(problem: &ClearingProblem, backend: &dyn Backend) -> ClearingSolution {
    if !problem.program.discs.is_empty() && !backend.supports_discs() {
        log::error!("backend {} cannot handle apparent-power limits", backend.name());
        return interpret(problem, &SolveResult::failed(Status::NumericalFailure, &problem.program, 0));
    }
    let result = backend.solve(&problem.program);
    log::debug!(
        "{} finished with {} after {} iterations, objective {}",
        backend.name(),
        result.status,
        result.iterations,
        result.objective
    );
    interpret(problem, &result)
}

/// Assembles and solves with the backend selected by `options`.
pub fn clear(market: &Market, options: ClearingOptions) -> Result<ClearingSolution> {
    let problem = assemble(market, options)?;
    Ok(solve(&problem, options.backend().as_ref()))
}
