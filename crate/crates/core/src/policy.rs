//! Loss allocation matrices.
//!
//! `A` has one row per directed trade and one column per loss-bearing line.
//! A directed trade `(i, j)` belongs to operator `s` when either endpoint
//! agent sits on a bus of `s`; a trade between a transmission agent and a
//! distribution agent therefore carries coefficients in both blocks. Every
//! column sums to one over the trades belonging to the line's operator, so
//! every MW of line loss is procured by exactly those trades.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, TradeGraph};
use crate::error::{Error, Result};
use crate::grid::{GridModel, Operator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Equal shares per operator.
    Soc,
    /// Grid-usage proportional shares.
    Ind,
    /// Grid-usage shares scaled by agent capacity.
    Cap,
}

impl PolicyKind {
    pub fn default_chi(self) -> f64 {
        match self {
            PolicyKind::Soc => 1.0,
            PolicyKind::Ind | PolicyKind::Cap => 0.0,
        }
    }
}

/// `A = chi * A_soc + (1 - chi) * A_ind`, where `A_ind` is capacity scaled for
/// [`PolicyKind::Cap`]. With `Soc` the individual part is the plain one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyDescriptor {
    pub kind: PolicyKind,
    pub chi: f64,
}

impl PolicyDescriptor {
    pub fn new(kind: PolicyKind, chi: Option<f64>) -> Self {
        PolicyDescriptor {
            kind,
            chi: chi.unwrap_or(kind.default_chi()),
        }
    }

    pub fn capacity_scaled(&self) -> bool {
        self.kind == PolicyKind::Cap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrix {
    /// 2T x L coefficients.
    pub values: DMatrix<f64>,
    pub descriptor: PolicyDescriptor,
}

impl AllocationMatrix {
    /// Checks nonnegativity, operator-block sparsity and unit column sums.
    pub fn check_conservation(&self, grid: &GridModel, agents: &[Agent], graph: &TradeGraph, tol: f64) -> Result<()> {
        let trades = graph.trades();
        if self.values.nrows() != trades.len() || self.values.ncols() != grid.line_count() {
            return Err(Error::Dimension(format!(
                "allocation matrix is {}x{}, expected {}x{}",
                self.values.nrows(),
                self.values.ncols(),
                trades.len(),
                grid.line_count()
            )));
        }
        for l in 0..grid.line_count() {
            let op = grid.line_operator(l);
            let mut sum = 0.0;
            for (k, &t) in trades.iter().enumerate() {
                let a = self.values[(k, l)];
                if a < 0.0 {
                    return Err(Error::Config(format!("negative allocation on line `{}`", grid.line_id(l))));
                }
                if a != 0.0 && !belongs(grid, agents, t, op) {
                    return Err(Error::Config(format!(
                        "trade {}->{} is charged for line `{}` of a foreign operator",
                        agents[t.0].id,
                        agents[t.1].id,
                        grid.line_id(l)
                    )));
                }
                sum += a;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::Config(format!(
                    "allocation column of line `{}` sums to {sum}",
                    grid.line_id(l)
                )));
            }
        }
        Ok(())
    }
}

fn belongs(grid: &GridModel, agents: &[Agent], (i, j): (usize, usize), op: Operator) -> bool {
    grid.buses[agents[i].bus].operator == op || grid.buses[agents[j].bus].operator == op
}

fn socialization_column(grid: &GridModel, agents: &[Agent], graph: &TradeGraph, l: usize) -> Result<Vec<f64>> {
    let op = grid.line_operator(l);
    let members: Vec<bool> = graph.trades().iter().map(|&t| belongs(grid, agents, t, op)).collect();
    let count = members.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::Config(format!(
            "operator {} owns line `{}` but has no trades to allocate its losses to",
            grid.operator_name(op),
            grid.line_id(l)
        )));
    }
    let share = 1.0 / count as f64;
    Ok(members.into_iter().map(|m| if m { share } else { 0.0 }).collect())
}

/// Equal share `1 / (2 T_so)` for every directed trade of the line's operator.
pub fn build_socialization(grid: &GridModel, agents: &[Agent], graph: &TradeGraph) -> Result<AllocationMatrix> {
    let mut values = DMatrix::zeros(graph.trades().len(), grid.line_count());
    for l in 0..grid.line_count() {
        let col = socialization_column(grid, agents, graph, l)?;
        values.set_column(l, &nalgebra::DVector::from_vec(col));
    }
    Ok(AllocationMatrix {
        values,
        descriptor: PolicyDescriptor {
            kind: PolicyKind::Soc,
            chi: 1.0,
        },
    })
}

fn usage_matrix(
    grid: &GridModel,
    agents: &[Agent],
    graph: &TradeGraph,
    tf: &DMatrix<f64>,
    weight: impl Fn(usize) -> f64,
) -> Result<DMatrix<f64>> {
    let trades = graph.trades();
    let mut values = DMatrix::zeros(trades.len(), grid.line_count());
    for l in 0..grid.line_count() {
        let op = grid.line_operator(l);
        let raw: Vec<f64> = trades
            .iter()
            .map(|&(i, j)| {
                if belongs(grid, agents, (i, j), op) {
                    (tf[(l, agents[i].bus)] - tf[(l, agents[j].bus)]).abs() * weight(i)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let col = if total > 0.0 {
            raw.into_iter().map(|v| v / total).collect()
        } else {
            // no trade loads the line: fall back to equal shares
            socialization_column(grid, agents, graph, l)?
        };
        values.set_column(l, &nalgebra::DVector::from_vec(col));
    }
    Ok(values)
}

/// Shares proportional to `|TF[l, bus(i)] - TF[l, bus(j)]|`.
pub fn build_individual(
    grid: &GridModel,
    agents: &[Agent],
    graph: &TradeGraph,
    tf: &DMatrix<f64>,
) -> Result<AllocationMatrix> {
    Ok(AllocationMatrix {
        values: usage_matrix(grid, agents, graph, tf, |_| 1.0)?,
        descriptor: PolicyDescriptor {
            kind: PolicyKind::Ind,
            chi: 0.0,
        },
    })
}

/// Individual shares weighted by the selling side's capacity `K_i / sum K`,
/// then renormalized per column.
pub fn build_capacity_scaled(
    grid: &GridModel,
    agents: &[Agent],
    graph: &TradeGraph,
    tf: &DMatrix<f64>,
) -> Result<AllocationMatrix> {
    let total: f64 = agents.iter().map(Agent::capacity).sum();
    if !(total > 0.0) {
        return Err(Error::Config("all agent capacities are zero".into()));
    }
    let values = usage_matrix(grid, agents, graph, tf, |i| agents[i].capacity() / total)?;
    Ok(AllocationMatrix {
        values,
        descriptor: PolicyDescriptor {
            kind: PolicyKind::Cap,
            chi: 0.0,
        },
    })
}

/// Convex combination `chi * soc + (1 - chi) * ind`.
pub fn mix(soc: &AllocationMatrix, ind: &AllocationMatrix, chi: f64) -> Result<AllocationMatrix> {
    if soc.values.shape() != ind.values.shape() {
        return Err(Error::Dimension(format!(
            "cannot mix {:?} with {:?}",
            soc.values.shape(),
            ind.values.shape()
        )));
    }
    if !(0.0..=1.0).contains(&chi) {
        return Err(Error::Config(format!("socialization factor {chi} outside [0, 1]")));
    }
    let values = if chi == 1.0 {
        soc.values.clone()
    } else if chi == 0.0 {
        ind.values.clone()
    } else {
        &soc.values * chi + &ind.values * (1.0 - chi)
    };
    Ok(AllocationMatrix {
        values,
        descriptor: PolicyDescriptor {
            kind: ind.descriptor.kind,
            chi,
        },
    })
}

/// Builds the matrix described by `descriptor`.
pub fn build_policy(
    grid: &GridModel,
    agents: &[Agent],
    graph: &TradeGraph,
    tf: &DMatrix<f64>,
    descriptor: PolicyDescriptor,
) -> Result<AllocationMatrix> {
    let soc = build_socialization(grid, agents, graph)?;
    let ind = match descriptor.kind {
        PolicyKind::Cap => build_capacity_scaled(grid, agents, graph, tf)?,
        PolicyKind::Soc | PolicyKind::Ind => build_individual(grid, agents, graph, tf)?,
    };
    let mut out = mix(&soc, &ind, descriptor.chi)?;
    out.descriptor = descriptor;
    Ok(out)
}
