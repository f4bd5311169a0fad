//! Payments, policy-impact deltas, loss shares, electrical distances and line
//! loadings derived from a cleared market.
//!
//! Sign convention: `C_i > 0` is money paid by agent `i`, so sellers carry
//! negative payments. Operator revenues are money received, and conservation
//! reads `sum_i C_i = sum_s R_s`.

use serde::Serialize;

use crate::clearing::{ClearingSolution, Market};
use crate::error::{Error, Result};
use crate::grid::{build_modified_tf, build_ptdf, pair_distance_idx, GridModel, Operator};

/// Payments `C_i = -sum_j t_ij (tau_t + tau_z)` per agent.
pub fn payments(solution: &ClearingSolution) -> Result<Vec<f64>> {
    let d = solution.duals()?;
    let mut c = vec![0.0; solution.labels.agents.len()];
    for (k, &(i, _)) in solution.labels.trades.iter().enumerate() {
        c[i] -= solution.t[k] * (d.tau_t[k] + d.tau_z[k]);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PaymentDelta {
    pub delta: f64,
    /// `None` when the reference payment is zero.
    pub relative: Option<f64>,
}

/// Reference payments below this many EUR count as zero.
pub(crate) const ZERO_PAYMENT: f64 = 1e-6;
/// Agents trading less than this many MW have no distance.
const ZERO_ENERGY: f64 = 1e-9;

pub fn delta_from_payments(current: &[f64], reference: &[f64]) -> Result<Vec<PaymentDelta>> {
    if current.len() != reference.len() {
        return Err(Error::Dimension(format!(
            "{} payments against {} reference payments",
            current.len(),
            reference.len()
        )));
    }
    Ok(current
        .iter()
        .zip(reference)
        .map(|(&c, &c0)| PaymentDelta {
            delta: c - c0,
            relative: (c0.abs() >= ZERO_PAYMENT).then(|| (c - c0) / c0.abs()),
        })
        .collect())
}

/// `Delta C_i = C_i - C_i^0` and `(C_i - C_i^0) / |C_i^0|`.
pub fn delta_payments(solution: &ClearingSolution, reference: &ClearingSolution) -> Result<Vec<PaymentDelta>> {
    if solution.labels.agents != reference.labels.agents {
        return Err(Error::Dimension("solution and reference have different agents".into()));
    }
    delta_from_payments(&payments(solution)?, &payments(reference)?)
}

/// Traded-energy weighted electrical distance to each agent's partners.
/// Weights are `|t_ij|`; `None` for agents that trade nothing.
pub fn weighted_distance(solution: &ClearingSolution, grid: &GridModel) -> Result<Vec<Option<f64>>> {
    let tf = build_modified_tf(grid, &build_ptdf(grid)?)?;
    let lb = &solution.labels;
    let mut num = vec![0.0; lb.agents.len()];
    let mut den = vec![0.0; lb.agents.len()];
    for (k, &(i, j)) in lb.trades.iter().enumerate() {
        let weight = solution.t[k].abs();
        num[i] += weight * pair_distance_idx(grid, &tf, lb.agent_bus[i], lb.agent_bus[j]);
        den[i] += weight;
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(&n, &d)| (d > ZERO_ENERGY).then(|| n / d))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineLoading {
    pub line: String,
    /// Real power flow, MW.
    pub flow: f64,
    /// Reactive flow on distribution lines, MVAr.
    pub reactive: Option<f64>,
    pub limit: f64,
    pub loading: f64,
    pub loss: f64,
    /// Flows recomputed from the dispatch because the clearing ignored the grid.
    pub ex_post: bool,
}

/// Nodal net injections implied by the dispatch.
fn bus_injections(solution: &ClearingSolution, n_buses: usize) -> Vec<f64> {
    let mut inj = vec![0.0; n_buses];
    for (i, &p) in solution.p.iter().enumerate() {
        inj[solution.labels.agent_bus[i]] += p;
    }
    inj
}

/// Loading per line in global order: `|f| / F` on transmission and
/// `sqrt(fp^2 + fq^2) / S` on distribution lines.
///
/// Grid-off solutions carry no flows; their real flows are recomputed from
/// the nodal injections with the block transfer factors.
pub fn line_loading(solution: &ClearingSolution, grid: &GridModel) -> Result<Vec<LineLoading>> {
    let n_ac = grid.ac_lines.len();
    let mut out = Vec::with_capacity(grid.line_count() + grid.hvdc_lines.len());
    let ex_post = !solution.options.grid;
    let flows: Vec<f64> = if ex_post {
        let tf = build_modified_tf(grid, &build_ptdf(grid)?)?;
        let inj = nalgebra::DVector::from_vec(bus_injections(solution, grid.buses.len()));
        (&tf * inj).iter().copied().collect()
    } else {
        solution.f_ac.iter().chain(&solution.fp).copied().collect()
    };
    for l in 0..grid.line_count() {
        let limit = grid.line_capacity(l);
        let reactive = (!ex_post && l >= n_ac).then(|| solution.fq[l - n_ac]);
        let magnitude = flows[l].hypot(reactive.unwrap_or(0.0));
        out.push(LineLoading {
            line: grid.line_id(l).to_string(),
            flow: flows[l],
            reactive,
            limit,
            loading: magnitude / limit,
            loss: solution.w_line.get(l).copied().unwrap_or(0.0),
            ex_post,
        });
    }
    if !ex_post {
        for (h, line) in grid.hvdc_lines.iter().enumerate() {
            out.push(LineLoading {
                line: line.id.clone(),
                flow: solution.f_hvdc[h],
                reactive: None,
                limit: line.capacity,
                loading: solution.f_hvdc[h].abs() / line.capacity,
                loss: 0.0,
                ex_post,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorSettlement {
    pub operator: String,
    /// Physical losses on the operator's lines, MW.
    pub losses: f64,
    /// Value of the losses allocated to trades, at the seller's perceived price.
    pub loss_payments: f64,
    /// Scarcity value of the operator's binding limits and loss envelopes.
    pub congestion_rent: f64,
    /// Payments across TSO-DSO connections; they cancel in total.
    pub exchange: f64,
}

impl OperatorSettlement {
    pub fn revenue(&self) -> f64 {
        self.loss_payments + self.congestion_rent + self.exchange
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoneyLedger {
    pub agent_payments: f64,
    pub operator_revenue: f64,
    /// `|sum C - sum R| / max(1, sum |C|)`.
    pub relative_imbalance: f64,
}

/// Splits operator revenue into loss payments, congestion rent and exchange
/// settlements.
pub fn operator_ledger(market: &Market, solution: &ClearingSolution) -> Result<Vec<OperatorSettlement>> {
    let d = solution.duals()?;
    let grid = market.grid;
    let ops = grid.operators();
    let slot = |op: Operator| ops.iter().position(|&o| o == op).expect("known operator");
    let mut out: Vec<OperatorSettlement> = ops
        .iter()
        .map(|&op| OperatorSettlement {
            operator: grid.operator_name(op).to_string(),
            losses: 0.0,
            loss_payments: 0.0,
            congestion_rent: 0.0,
            exchange: 0.0,
        })
        .collect();
    let Some(g) = &d.grid else {
        return Ok(out);
    };
    let lb = &solution.labels;
    let n_ac = grid.ac_lines.len();

    if solution.options.losses {
        let a = &market
            .allocation
            .ok_or_else(|| Error::Config("loss settlement needs the allocation matrix".into()))?
            .values;
        for l in 0..grid.line_count() {
            let s = slot(grid.line_operator(l));
            let w = solution.w_line[l];
            out[s].losses += w;
            for (k, &(i, _)) in lb.trades.iter().enumerate() {
                out[s].loss_payments += d.pi[i] * a[(k, l)] * w;
            }
            let flow = if l < n_ac { solution.f_ac[l] } else { solution.fp[l - n_ac] };
            for (seg, &(up, down)) in grid.line_loss(l).iter().zip(&g.loss[l]) {
                out[s].congestion_rent += up * (seg.slope * flow - w) + down * (-seg.slope * flow - w);
            }
        }
    }

    let tso = slot(Operator::Tso);
    for (k, &f) in solution.f_ac.iter().enumerate() {
        out[tso].congestion_rent += (g.mu_upper[k] - g.mu_lower[k]) * f;
    }
    for (h, &f) in solution.f_hvdc.iter().enumerate() {
        out[tso].congestion_rent += (g.hvdc_upper[h] - g.hvdc_lower[h]) * f;
    }
    for (dl, line) in grid.dist_lines.iter().enumerate() {
        let s = slot(grid.line_operator(n_ac + dl));
        out[s].congestion_rent += g.eta_ac[dl] * line.capacity - g.eta_q[dl] * grid.base_mva * line.shunt;
    }
    for (b, bus) in grid.buses.iter().enumerate() {
        if bus.operator.is_tso() {
            continue;
        }
        let s = slot(bus.operator);
        let (tl, tu) = g.eta_theta[b];
        let (vl, vu) = g.eta_v[b];
        out[s].congestion_rent += (tu - tl) * solution.theta[b] + (vu - vl) * solution.v[b];
    }
    for (i, &q) in solution.q.iter().enumerate() {
        let lambda = d.lambda[lb.agent_bus[i]];
        if lambda.is_finite() {
            out[slot(grid.buses[lb.agent_bus[i]].operator)].congestion_rent += lambda * q;
        }
    }
    for (c, conn) in grid.connections.iter().enumerate() {
        out[tso].exchange += d.tau_e[c] * solution.e_t[c];
        out[slot(Operator::Dso(conn.dso))].exchange -= d.tau_e[c] * solution.e_d[c];
    }
    Ok(out)
}

pub fn money_ledger(payments: &[f64], operators: &[OperatorSettlement]) -> MoneyLedger {
    let agent_payments: f64 = payments.iter().sum();
    let operator_revenue: f64 = operators.iter().map(OperatorSettlement::revenue).sum();
    let scale = payments.iter().map(|c| c.abs()).sum::<f64>().max(1.0);
    MoneyLedger {
        agent_payments,
        operator_revenue,
        relative_imbalance: (agent_payments - operator_revenue).abs() / scale,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentSettlement {
    pub agent: String,
    pub bus: String,
    pub payment: f64,
    pub delta: Option<f64>,
    pub delta_pct: Option<f64>,
    /// Losses allocated to the agent's outgoing trades, MW.
    pub losses: f64,
    pub distance: Option<f64>,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlementReport {
    pub agents: Vec<AgentSettlement>,
    pub operators: Vec<OperatorSettlement>,
    pub lines: Vec<LineLoading>,
    pub ledger: MoneyLedger,
}

/// Full report; deltas are filled only when a reference clearing is given.
pub fn settle(
    market: &Market,
    solution: &ClearingSolution,
    reference: Option<&ClearingSolution>,
) -> Result<SettlementReport> {
    let d = solution.duals()?;
    let c = payments(solution)?;
    let deltas = reference.map(|r| delta_payments(solution, r)).transpose()?;
    let distance = weighted_distance(solution, market.grid)?;
    let lb = &solution.labels;
    let mut losses = vec![0.0; lb.agents.len()];
    for (k, &(i, _)) in lb.trades.iter().enumerate() {
        losses[i] += solution.w[k];
    }
    let agents = (0..lb.agents.len())
        .map(|i| AgentSettlement {
            agent: lb.agents[i].clone(),
            bus: lb.buses[lb.agent_bus[i]].clone(),
            payment: c[i],
            delta: deltas.as_ref().map(|v| v[i].delta),
            delta_pct: deltas.as_ref().and_then(|v| v[i].relative),
            losses: losses[i],
            distance: distance[i],
            pi: d.pi[i],
        })
        .collect();
    let operators = operator_ledger(market, solution)?;
    let ledger = money_ledger(&c, &operators);
    Ok(SettlementReport {
        agents,
        operators,
        lines: line_loading(solution, market.grid)?,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Agent, QuadraticCost, TradeGraph};
    use crate::clearing::{clear, ClearingOptions};
    use crate::grid::fixtures::triangle_with_feeder;
    use crate::policy::{build_policy, PolicyDescriptor, PolicyKind};

    fn agent(id: &str, bus: usize, p_min: f64, p_max: f64, b: f64) -> Agent {
        Agent {
            id: id.into(),
            bus,
            p_min,
            p_max,
            q_min: -1.0,
            q_max: 1.0,
            cost: QuadraticCost {
                quadratic: 0.01,
                linear: b,
            },
        }
    }

    fn market_parts() -> (GridModel, Vec<Agent>, TradeGraph) {
        let grid = triangle_with_feeder();
        let agents = vec![
            agent("g", 0, 0.0, 200.0, 20.0),
            agent("l2", 1, -30.0, -30.0, 0.0),
            agent("l3", 4, -5.0, -5.0, 0.0),
            agent("l4", 6, -4.0, -4.0, 0.0),
        ];
        let graph = TradeGraph::from_pairs(4, &[(0, 1), (0, 2), (0, 3)]);
        (grid, agents, graph)
    }

    #[test]
    fn delta_examples() {
        let d = delta_from_payments(&[110.0, 5.0, 0.0], &[100.0, 0.0, 0.0]).unwrap();
        assert!((d[0].delta - 10.0).abs() < 1e-12);
        assert!((d[0].relative.unwrap() - 0.10).abs() < 1e-12);
        assert_eq!(d[1].delta, 5.0);
        assert!(d[1].relative.is_none());
        assert_eq!(d[2].delta, 0.0);
        assert!(delta_from_payments(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn money_is_conserved_with_losses_and_grid() {
        let (grid, agents, graph) = market_parts();
        let tf = build_modified_tf(&grid, &build_ptdf(&grid).unwrap()).unwrap();
        for kind in [PolicyKind::Soc, PolicyKind::Ind, PolicyKind::Cap] {
            let a = build_policy(&grid, &agents, &graph, &tf, PolicyDescriptor::new(kind, None)).unwrap();
            let market = Market {
                grid: &grid,
                agents: &agents,
                graph: &graph,
                allocation: Some(&a),
            };
            let sol = clear(&market, ClearingOptions::default()).unwrap();
            let report = settle(&market, &sol, None).unwrap();
            assert!(
                report.ledger.relative_imbalance < 1e-6,
                "{kind:?}: {:?} {:?}",
                report.ledger,
                report.operators
            );
            let physical: f64 = report.operators.iter().map(|o| o.losses).sum();
            let allocated: f64 = report.agents.iter().map(|a| a.losses).sum();
            assert!((physical - allocated).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_off_loading_is_recomputed() {
        let (grid, agents, graph) = market_parts();
        let market = Market {
            grid: &grid,
            agents: &agents,
            graph: &graph,
            allocation: None,
        };
        let options = ClearingOptions {
            grid: false,
            ..ClearingOptions::default()
        };
        let sol = clear(&market, options).unwrap();
        let lines = line_loading(&sol, &grid).unwrap();
        assert!(lines.iter().all(|l| l.ex_post));
        // the feeder line carries both DSO loads
        let feeder = lines.iter().find(|l| l.line == "D34").unwrap();
        assert!((feeder.flow.abs() - 9.0).abs() < 1e-6);
        let report = settle(&market, &sol, None).unwrap();
        assert!(report.ledger.relative_imbalance < 1e-9);
    }

    #[test]
    fn distance_weights_follow_traded_energy() {
        let (grid, agents, graph) = market_parts();
        let market = Market {
            grid: &grid,
            agents: &agents,
            graph: &graph,
            allocation: None,
        };
        let options = ClearingOptions {
            losses: false,
            ..ClearingOptions::default()
        };
        let sol = clear(&market, options).unwrap();
        let tf = build_modified_tf(&grid, &build_ptdf(&grid).unwrap()).unwrap();
        let dist = |a: usize, b: usize| pair_distance_idx(&grid, &tf, a, b);
        let expected = (30.0 * dist(0, 1) + 5.0 * dist(0, 4) + 4.0 * dist(0, 6)) / 39.0;
        let got = weighted_distance(&sol, &grid).unwrap();
        assert!((got[0].unwrap() - expected).abs() < 1e-6);
        assert!((got[3].unwrap() - dist(6, 0)).abs() < 1e-9);
    }
}
