//! Variable and row layout of the joint clearing problem.
//!
//! Row orientations are chosen so the raw multipliers of the Lagrangian
//! `f + y'(Ax - b)` already satisfy the price identities
//! `pi = tau_t + tau_z`, `pi = tau_z + tau_l`, `tau_z = N' phi` (transmission)
//! and `tau_z = eta` (distribution):
//!
//! * balance: `sum_out (t + w) - p = 0`
//! * reciprocity (one row per pair): `-t_ij - t_ji = 0`
//! * injection: `z - t - w = 0`
//! * loss allocation: `sum_l A w_l - w_ij = 0`
//! * transmission flow: `f_k - sum_n N_kn inj_n = 0`
//! * distribution balance: `-sum z - e_d + out f_p - in f_p + D w = 0`
//! * exchange: `e_t - e_d = 0`, both meaning import into the DSO
//! * reactive balance: `out f_q - in f_q - sum q = 0`
//!
//! A transmission balance row is not added: it follows from the others
//! because every allocation column sums to one.

use nalgebra::DMatrix;

use crate::agents::{Agent, TradeGraph};
use crate::grid::{GridModel, LineRef, Operator, Ptdf};
use crate::policy::AllocationMatrix;
use crate::solver::{ConicProgram, DiscConstraint, LinearRow};

use super::ClearingOptions;

/// Variable indices. Absent blocks are empty vectors or `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Layout {
    pub p: Vec<Option<usize>>,
    pub q: Vec<Option<usize>>,
    pub t: Vec<usize>,
    pub z: Vec<usize>,
    pub w: Vec<usize>,
    pub f_ac: Vec<usize>,
    pub f_hvdc: Vec<usize>,
    /// Loss of every line in global order.
    pub w_line: Vec<usize>,
    pub fp: Vec<usize>,
    pub fq: Vec<usize>,
    pub theta: Vec<Option<usize>>,
    pub v: Vec<Option<usize>>,
    pub e_t: Vec<usize>,
    pub e_d: Vec<usize>,
    pub names: Vec<String>,
}

/// Row indices into the program's equality, inequality and disc lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowMap {
    pub balance: Vec<Option<usize>>,
    /// Shared reciprocity row of each directed trade.
    pub reciprocity: Vec<usize>,
    pub injection: Vec<usize>,
    pub allocation: Vec<usize>,
    pub tso_flow: Vec<usize>,
    pub dist_p: Vec<usize>,
    pub dist_q: Vec<usize>,
    pub dso_balance: Vec<Option<usize>>,
    pub exchange: Vec<usize>,
    pub reactive: Vec<Option<usize>>,
    /// Per line, per segment: `(+f row, -f row)` inequality indices.
    pub loss: Vec<Vec<(usize, usize)>>,
    /// Disc index per distribution line.
    pub disc: Vec<usize>,
    pub eq_names: Vec<String>,
    pub ineq_names: Vec<String>,
}

/// Market actor owning a variable in the decomposed view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Actor {
    Prosumer(usize),
    Operator(Operator),
}

pub(crate) struct Builder<'a> {
    pub grid: &'a GridModel,
    pub agents: &'a [Agent],
    pub graph: &'a TradeGraph,
    pub allocation: Option<&'a AllocationMatrix>,
    pub ptdf: Option<&'a Ptdf>,
    pub options: &'a ClearingOptions,
    pub program: ConicProgram,
    pub layout: Layout,
    pub rows: RowMap,
    pub owner: Vec<Actor>,
}

impl<'a> Builder<'a> {
    fn var(&mut self, name: String, lo: f64, hi: f64, owner: Actor) -> usize {
        let j = self.program.n;
        self.program.n += 1;
        self.program.linear.push(0.0);
        self.program.lower.push(lo);
        self.program.upper.push(hi);
        self.layout.names.push(name);
        self.owner.push(owner);
        j
    }

    fn eq(&mut self, name: String, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.program.equalities.push(LinearRow::new(coeffs, rhs));
        self.rows.eq_names.push(name);
        self.program.equalities.len() - 1
    }

    fn ineq(&mut self, name: String, coeffs: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.program.inequalities.push(LinearRow::new(coeffs, rhs));
        self.rows.ineq_names.push(name);
        self.program.inequalities.len() - 1
    }

    fn trade_name(&self, k: usize) -> String {
        let (i, j) = self.graph.trades()[k];
        format!("{}->{}", self.agents[i].id, self.agents[j].id)
    }

    fn trade_operator(&self, k: usize) -> Operator {
        let (i, _) = self.graph.trades()[k];
        self.grid.buses[self.agents[i].bus].operator
    }

    pub fn build(mut self) -> (ConicProgram, Layout, RowMap, Vec<Actor>) {
        self.variables();
        self.market_rows();
        if self.options.grid {
            self.transmission_rows();
            self.distribution_rows();
        }
        (self.program, self.layout, self.rows, self.owner)
    }

    fn variables(&mut self) {
        let grid = self.grid;
        let inf = f64::INFINITY;
        for (i, a) in self.agents.iter().enumerate() {
            if self.graph.is_isolated(i) {
                self.layout.p.push(None);
                self.layout.q.push(None);
                continue;
            }
            let p = self.var(format!("p[{}]", a.id), a.p_min, a.p_max, Actor::Prosumer(i));
            self.program.linear[p] = a.cost.linear;
            if a.cost.quadratic != 0.0 {
                self.program.quadratic.push((p, p, a.cost.quadratic));
            }
            let q = self.var(format!("q[{}]", a.id), a.q_min, a.q_max, Actor::Prosumer(i));
            self.layout.p.push(Some(p));
            self.layout.q.push(Some(q));
        }
        for k in 0..self.graph.trades().len() {
            let name = self.trade_name(k);
            let owner = Actor::Prosumer(self.graph.trades()[k].0);
            let t = self.var(format!("t[{name}]"), -inf, inf, owner);
            self.layout.t.push(t);
        }
        if self.options.losses {
            for k in 0..self.graph.trades().len() {
                let name = self.trade_name(k);
                let owner = Actor::Prosumer(self.graph.trades()[k].0);
                let w = self.var(format!("w[{name}]"), -inf, inf, owner);
                self.layout.w.push(w);
            }
        }
        for k in 0..self.graph.trades().len() {
            let name = self.trade_name(k);
            let op = Actor::Operator(self.trade_operator(k));
            let z = self.var(format!("z[{name}]"), -inf, inf, op);
            self.layout.z.push(z);
        }
        if !self.options.grid {
            return;
        }
        let tso = Actor::Operator(Operator::Tso);
        for l in &grid.ac_lines {
            let f = self.var(format!("f[{}]", l.id), -l.capacity, l.capacity, tso);
            self.layout.f_ac.push(f);
        }
        for h in &grid.hvdc_lines {
            let f = self.var(format!("f_dc[{}]", h.id), -h.capacity, h.capacity, tso);
            self.layout.f_hvdc.push(f);
        }
        if self.options.losses {
            for l in 0..grid.line_count() {
                let owner = Actor::Operator(grid.line_operator(l));
                let w = self.var(format!("w_line[{}]", grid.line_id(l)), 0.0, inf, owner);
                self.layout.w_line.push(w);
            }
        }
        for d in &grid.dist_lines {
            let owner = Actor::Operator(grid.buses[d.from].operator);
            let fp = self.var(format!("fp[{}]", d.id), -inf, inf, owner);
            let fq = self.var(format!("fq[{}]", d.id), -inf, inf, owner);
            self.layout.fp.push(fp);
            self.layout.fq.push(fq);
        }
        let roots: Vec<usize> = (0..grid.dsos.len()).map(|d| grid.dso_root(d)).collect();
        for (b, bus) in grid.buses.iter().enumerate() {
            if bus.operator.is_tso() {
                self.layout.theta.push(None);
                self.layout.v.push(None);
                continue;
            }
            let owner = Actor::Operator(bus.operator);
            let (tlo, thi) = if roots.contains(&b) {
                (0.0, 0.0)
            } else {
                bus.angle_bounds.unwrap_or((-inf, inf))
            };
            let th = self.var(format!("theta[{}]", bus.id), tlo, thi, owner);
            let (vlo, vhi) = bus.voltage_bounds.unwrap_or((-inf, inf));
            let v = self.var(format!("v[{}]", bus.id), vlo, vhi, owner);
            self.layout.theta.push(Some(th));
            self.layout.v.push(Some(v));
        }
        for c in &grid.connections {
            let et = self.var(format!("e_t[{}]", c.id), -inf, inf, tso);
            let ed = self.var(format!("e_d[{}]", c.id), -inf, inf, Actor::Operator(Operator::Dso(c.dso)));
            self.layout.e_t.push(et);
            self.layout.e_d.push(ed);
        }
    }

    fn market_rows(&mut self) {
        let trades = self.graph.trades().to_vec();
        for i in 0..self.agents.len() {
            let Some(p) = self.layout.p[i] else {
                self.rows.balance.push(None);
                continue;
            };
            let mut coeffs = vec![(p, -1.0)];
            for &k in self.graph.outgoing(i) {
                coeffs.push((self.layout.t[k], 1.0));
                if self.options.losses {
                    coeffs.push((self.layout.w[k], 1.0));
                }
            }
            let r = self.eq(format!("balance[{}]", self.agents[i].id), coeffs, 0.0);
            self.rows.balance.push(Some(r));
        }
        self.rows.reciprocity = vec![usize::MAX; trades.len()];
        for k in 0..trades.len() {
            let Some(rev) = self.graph.reverse(k) else {
                continue;
            };
            if trades[k].0 < trades[k].1 {
                let name = format!("reciprocity[{}]", self.trade_name(k));
                let r = self.eq(name, vec![(self.layout.t[k], -1.0), (self.layout.t[rev], -1.0)], 0.0);
                self.rows.reciprocity[k] = r;
                self.rows.reciprocity[rev] = r;
            }
        }
        for k in 0..trades.len() {
            let mut coeffs = vec![(self.layout.z[k], 1.0), (self.layout.t[k], -1.0)];
            if self.options.losses {
                coeffs.push((self.layout.w[k], -1.0));
            }
            let r = self.eq(format!("injection[{}]", self.trade_name(k)), coeffs, 0.0);
            self.rows.injection.push(r);
        }
        if self.options.losses {
            let a = &self.allocation.expect("checked by caller").values;
            for k in 0..trades.len() {
                let mut coeffs: Vec<(usize, f64)> = (0..self.grid.line_count())
                    .filter(|&l| a[(k, l)] != 0.0)
                    .map(|l| (self.layout.w_line[l], a[(k, l)]))
                    .collect();
                coeffs.push((self.layout.w[k], -1.0));
                let r = self.eq(format!("allocation[{}]", self.trade_name(k)), coeffs, 0.0);
                self.rows.allocation.push(r);
            }
        }
    }

    fn loss_rows(&mut self, l: usize, flow: usize) {
        let segments = self.grid.line_loss(l).to_vec();
        let w = self.layout.w_line[l];
        let name = self.grid.line_id(l).to_string();
        let mut rows = Vec::new();
        for (s, seg) in segments.iter().enumerate() {
            let plus = self.ineq(
                format!("loss+[{name}#{s}]"),
                vec![(w, -1.0), (flow, seg.slope)],
                -seg.intercept,
            );
            let minus = self.ineq(
                format!("loss-[{name}#{s}]"),
                vec![(w, -1.0), (flow, -seg.slope)],
                -seg.intercept,
            );
            rows.push((plus, minus));
        }
        self.rows.loss[l] = rows;
    }

    fn transmission_rows(&mut self) {
        let grid = self.grid;
        let ptdf = self.ptdf.expect("grid on requires a PTDF");
        let trades = self.graph.trades().to_vec();
        self.rows.loss = vec![Vec::new(); grid.line_count()];
        for (k, line) in grid.ac_lines.iter().enumerate() {
            let mut coeffs = vec![(self.layout.f_ac[k], 1.0)];
            for (t, &(i, _)) in trades.iter().enumerate() {
                let bus = self.agents[i].bus;
                if grid.buses[bus].operator.is_tso() {
                    let n = ptdf.get(k, bus);
                    if n != 0.0 {
                        coeffs.push((self.layout.z[t], -n));
                    }
                }
            }
            for (h, dc) in grid.hvdc_lines.iter().enumerate() {
                let c = ptdf.get(k, dc.from) - ptdf.get(k, dc.to);
                if c != 0.0 {
                    coeffs.push((self.layout.f_hvdc[h], c));
                }
            }
            for (c, conn) in grid.connections.iter().enumerate() {
                let n = ptdf.get(k, conn.tso_bus);
                if n != 0.0 {
                    coeffs.push((self.layout.e_t[c], n));
                }
            }
            if self.options.losses {
                for l in 0..grid.ac_lines.len() {
                    let (a, b) = grid.line_endpoints(l);
                    let c = 0.5 * (ptdf.get(k, a) + ptdf.get(k, b));
                    if c != 0.0 {
                        coeffs.push((self.layout.w_line[l], c));
                    }
                }
            }
            let r = self.eq(format!("flow[{}]", line.id), coeffs, 0.0);
            self.rows.tso_flow.push(r);
        }
        if self.options.losses {
            for l in 0..grid.line_count() {
                if let LineRef::Ac(k) = grid.line(l) {
                    self.loss_rows(l, self.layout.f_ac[k]);
                }
            }
        }
    }

    fn distribution_rows(&mut self) {
        let grid = self.grid;
        let base = grid.base_mva;
        let n_ac = grid.ac_lines.len();
        for (d, line) in grid.dist_lines.iter().enumerate() {
            let (r, s) = (line.from, line.to);
            let (th_r, th_s) = (self.layout.theta[r].unwrap(), self.layout.theta[s].unwrap());
            let (v_r, v_s) = (self.layout.v[r].unwrap(), self.layout.v[s].unwrap());
            let (b, g, bs) = (line.susceptance(), line.conductance(), line.susceptance_star());
            let rp = self.eq(
                format!("flow_p[{}]", line.id),
                vec![
                    (self.layout.fp[d], 1.0),
                    (th_r, -base * b),
                    (th_s, base * b),
                    (v_r, base * g),
                    (v_s, -base * g),
                ],
                0.0,
            );
            let rq = self.eq(
                format!("flow_q[{}]", line.id),
                vec![
                    (self.layout.fq[d], 1.0),
                    (v_r, -base * bs),
                    (v_s, base * bs),
                    (th_r, -base * g),
                    (th_s, base * g),
                ],
                -base * line.shunt,
            );
            self.rows.dist_p.push(rp);
            self.rows.dist_q.push(rq);
            self.program.discs.push(DiscConstraint {
                u: self.layout.fp[d],
                v: self.layout.fq[d],
                radius: line.capacity,
            });
            self.rows.disc.push(self.program.discs.len() - 1);
            if self.options.losses {
                self.loss_rows(n_ac + d, self.layout.fp[d]);
            }
        }
        let trades = self.graph.trades().to_vec();
        for (bus, info) in grid.buses.iter().enumerate() {
            if info.operator.is_tso() {
                self.rows.dso_balance.push(None);
                self.rows.reactive.push(None);
                continue;
            }
            let mut coeffs = Vec::new();
            for (k, &(i, _)) in trades.iter().enumerate() {
                if self.agents[i].bus == bus {
                    coeffs.push((self.layout.z[k], -1.0));
                }
            }
            for (c, conn) in grid.connections.iter().enumerate() {
                if conn.feeder == bus {
                    coeffs.push((self.layout.e_d[c], -1.0));
                }
            }
            let mut q_coeffs = Vec::new();
            for (d, line) in grid.dist_lines.iter().enumerate() {
                if line.from == bus {
                    coeffs.push((self.layout.fp[d], 1.0));
                    q_coeffs.push((self.layout.fq[d], 1.0));
                } else if line.to == bus {
                    coeffs.push((self.layout.fp[d], -1.0));
                    q_coeffs.push((self.layout.fq[d], -1.0));
                } else {
                    continue;
                }
                if self.options.losses {
                    coeffs.push((self.layout.w_line[n_ac + d], 0.5));
                }
            }
            let r = self.eq(format!("dso_balance[{}]", info.id), coeffs, 0.0);
            self.rows.dso_balance.push(Some(r));
            for (i, a) in self.agents.iter().enumerate() {
                if a.bus == bus {
                    if let Some(q) = self.layout.q[i] {
                        q_coeffs.push((q, -1.0));
                    }
                }
            }
            let r = self.eq(format!("reactive[{}]", info.id), q_coeffs, 0.0);
            self.rows.reactive.push(Some(r));
        }
        for (c, conn) in grid.connections.iter().enumerate() {
            let r = self.eq(
                format!("exchange[{}]", conn.id),
                vec![(self.layout.e_t[c], 1.0), (self.layout.e_d[c], -1.0)],
                0.0,
            );
            self.rows.exchange.push(r);
        }
    }
}

/// Dense equality matrix, for tests and diagnostics.
pub fn equality_matrix(program: &ConicProgram) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(program.equalities.len(), program.n);
    for (r, row) in program.equalities.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            m[(r, j)] += a;
        }
    }
    m
}
