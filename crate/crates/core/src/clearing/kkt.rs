//! Price tables and first-order consistency checks.

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};

use super::{ClearingProblem, ClearingSolution};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradePrice {
    pub from: String,
    pub to: String,
    pub tau_t: f64,
    pub tau_z: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceTables {
    pub pi: IndexMap<String, f64>,
    pub trades: Vec<TradePrice>,
    pub tau_e: IndexMap<String, f64>,
    pub lambda: IndexMap<String, f64>,
}

pub fn extract_prices(solution: &ClearingSolution) -> Result<PriceTables> {
    let d = solution.duals()?;
    let lb = &solution.labels;
    let pi = lb
        .agents
        .iter()
        .zip(&d.pi)
        .filter(|(_, v)| v.is_finite())
        .map(|(a, &v)| (a.clone(), v))
        .collect();
    let trades = lb
        .trades
        .iter()
        .enumerate()
        .map(|(k, &(i, j))| TradePrice {
            from: lb.agents[i].clone(),
            to: lb.agents[j].clone(),
            tau_t: d.tau_t[k],
            tau_z: d.tau_z[k],
            tau_l: d.tau_l.get(k).copied(),
        })
        .collect();
    let tau_e = lb.connections.iter().cloned().zip(d.tau_e.iter().copied()).collect();
    let lambda = lb
        .buses
        .iter()
        .zip(&d.lambda)
        .filter(|(_, v)| v.is_finite())
        .map(|(b, &v)| (b.clone(), v))
        .collect();
    Ok(PriceTables {
        pi,
        trades,
        tau_e,
        lambda,
    })
}

/// Largest residual of each identity, in EUR/MWh or MW.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    /// `pi_i - tau_t - tau_z`.
    pub energy_price: f64,
    /// `pi_i - tau_z - tau_l`; `None` when losses are off.
    pub loss_price: Option<f64>,
    /// `tau_z - N' phi` at transmission, `tau_z - eta` at distribution level.
    pub grid_price: Option<f64>,
    /// `f'(p) - pi` over agents strictly inside their bounds.
    pub stationarity: f64,
    pub reciprocity: f64,
    pub injection: f64,
    /// `|sum w_ij - sum w_l| / max(1, sum w_l)`.
    pub loss_conservation: Option<f64>,
    pub tolerance: f64,
    pub violations: Vec<String>,
}

impl KktReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_price_residual(&self) -> f64 {
        [Some(self.energy_price), self.loss_price, self.grid_price]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

pub fn verify_kkt(problem: &ClearingProblem, solution: &ClearingSolution, tol: f64) -> Result<KktReport> {
    if !solution.is_optimal() {
        return Err(Error::NotOptimal(solution.status));
    }
    let d = solution.duals()?;
    let lb = &solution.labels;
    let losses = problem.options.losses;
    let mut energy = 0.0f64;
    let mut loss = 0.0f64;
    let mut grid = 0.0f64;
    let mut reciprocity = 0.0f64;
    let mut injection = 0.0f64;
    for (k, &(i, _)) in lb.trades.iter().enumerate() {
        energy = energy.max((d.pi[i] - d.tau_t[k] - d.tau_z[k]).abs());
        if losses {
            loss = loss.max((d.pi[i] - d.tau_z[k] - d.tau_l[k]).abs());
        }
        if let Some(rev) = lb.reverse[k] {
            reciprocity = reciprocity.max((solution.t[k] + solution.t[rev]).abs());
        }
        injection = injection.max((solution.z[k] - solution.t[k] - solution.w[k]).abs());
        if let Some(g) = &d.grid {
            let expected = match problem.tso_bus[i] {
                Some(bus) => {
                    let ptdf = problem.ptdf.as_ref().expect("grid on");
                    (0..g.phi.len()).map(|l| ptdf.get(l, bus) * g.phi[l]).sum::<f64>()
                }
                None => g.eta[lb.agent_bus[i]],
            };
            grid = grid.max((d.tau_z[k] - expected).abs());
        }
    }
    let program = &problem.program;
    let mut stationarity = 0.0f64;
    for (i, pj) in problem.layout.p.iter().enumerate() {
        let Some(j) = *pj else { continue };
        let p = solution.p[i];
        let (lo, hi) = (program.lower[j], program.upper[j]);
        let margin = 1e-6 * (1.0 + lo.abs().max(hi.abs()));
        if p <= lo + margin || p >= hi - margin {
            continue;
        }
        let quad: f64 = program
            .quadratic
            .iter()
            .filter(|&&(a, b, _)| a == j && b == j)
            .map(|&(_, _, c)| 2.0 * c * p)
            .sum();
        stationarity = stationarity.max((program.linear[j] + quad - d.pi[i]).abs());
    }
    let loss_conservation = losses.then(|| {
        let allocated: f64 = solution.w.iter().sum();
        let physical: f64 = solution.w_line.iter().sum();
        (allocated - physical).abs() / physical.abs().max(1.0)
    });
    let mut violations = Vec::new();
    let mut check = |name: &str, v: f64| {
        if !(v <= tol) {
            violations.push(format!("{name}: {v:.3e}"));
        }
    };
    check("energy price identity", energy);
    if losses {
        check("loss price identity", loss);
    }
    if d.grid.is_some() {
        check("grid price identity", grid);
    }
    check("stationarity", stationarity);
    check("reciprocity", reciprocity);
    check("injection", injection);
    if let Some(c) = loss_conservation {
        check("loss conservation", c);
    }
    Ok(KktReport {
        energy_price: energy,
        loss_price: losses.then_some(loss),
        grid_price: d.grid.as_ref().map(|_| grid),
        stationarity,
        reciprocity,
        injection,
        loss_conservation,
        tolerance: tol,
        violations,
    })
}
