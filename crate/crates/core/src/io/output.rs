//! Result tables and run records.
//!
//! | file | columns |
//! |------|---------|
//! | `settlement.csv` | agent, bus, payment, delta, delta_pct, losses, delta_distance, pi |
//! | `lines.csv` | line, flow, limit, loading, loss |
//! | `trades.csv` | i, j, t, w, z, tau_t, tau_z, tau_l |
//! | `admm_log.csv` | iteration, primal, dual, objective, rho |
//!
//! Undefined values (relative deltas against a zero reference payment,
//! distances of agents that do not trade) are left empty.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::admm::AdmmRecord;
use crate::clearing::{ClearingOptions, ClearingSolution, PriceTables};
use crate::error::Result;
use crate::policy::PolicyDescriptor;
use crate::settlement::{LineLoading, SettlementReport};
use crate::solver::Status;

#[derive(Serialize)]
struct SettlementRow<'a> {
    agent: &'a str,
    bus: &'a str,
    payment: f64,
    delta: Option<f64>,
    delta_pct: Option<f64>,
    losses: f64,
    delta_distance: Option<f64>,
    pi: f64,
}

pub fn write_settlement(path: &Path, report: &SettlementReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for a in &report.agents {
        w.serialize(SettlementRow {
            agent: &a.agent,
            bus: &a.bus,
            payment: a.payment,
            delta: a.delta,
            delta_pct: a.delta_pct,
            losses: a.losses,
            delta_distance: a.distance,
            pi: a.pi,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct LineRow<'a> {
    line: &'a str,
    flow: f64,
    limit: f64,
    loading: f64,
    loss: f64,
}

pub fn write_lines(path: &Path, lines: &[LineLoading]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in lines {
        w.serialize(LineRow {
            line: &l.line,
            flow: l.flow,
            limit: l.limit,
            loading: l.loading,
            loss: l.loss,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TradeRow<'a> {
    i: &'a str,
    j: &'a str,
    t: f64,
    w: f64,
    z: f64,
    tau_t: f64,
    tau_z: f64,
    tau_l: Option<f64>,
}

pub fn write_trades(path: &Path, solution: &ClearingSolution) -> Result<()> {
    let d = solution.duals()?;
    let lb = &solution.labels;
    let mut w = csv::Writer::from_path(path)?;
    for (k, &(i, j)) in lb.trades.iter().enumerate() {
        w.serialize(TradeRow {
            i: &lb.agents[i],
            j: &lb.agents[j],
            t: solution.t[k],
            w: solution.w[k],
            z: solution.z[k],
            tau_t: d.tau_t[k],
            tau_z: d.tau_z[k],
            tau_l: d.tau_l.get(k).copied(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_admm_log(path: &Path, history: &[AdmmRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        w.serialize(h)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn write_prices(path: &Path, prices: &PriceTables) -> Result<()> {
    write_json(path, prices)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSummary {
    pub status: Status,
    pub objective: f64,
    pub iterations: usize,
    pub total_losses: f64,
    pub max_loading: f64,
}

impl SolutionSummary {
    pub fn new(solution: &ClearingSolution, lines: &[LineLoading]) -> Self {
        SolutionSummary {
            status: solution.status,
            objective: solution.objective,
            iterations: solution.iterations,
            total_losses: solution.w_line.iter().sum(),
            max_loading: lines.iter().map(|l| l.loading).fold(0.0, f64::max),
        }
    }
}

/// Everything needed to reproduce a run; only `elapsed_ms` varies between
/// identical invocations.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub case: String,
    pub case_hash: String,
    pub seed: u64,
    pub options: ClearingOptions,
    pub policy: PolicyDescriptor,
    pub summary: Option<SolutionSummary>,
    pub settlement: Option<SettlementReport>,
    pub extra: serde_json::Value,
    pub elapsed_ms: u128,
}

pub fn write_run_record(dir: &Path, record: &RunRecord) -> Result<()> {
    write_json(&dir.join("run_record.json"), record)
}
