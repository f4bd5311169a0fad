//! Case files, case generators, result tables and the command-line driver.
//!
//! A case is one JSON document. Powers are in MW/MVAr, impedances in per unit
//! on `base_mva` (100 MVA unless stated), angles in rad and voltages in p.u.
//! Unknown fields are rejected everywhere.

pub mod casegen;
pub mod cli;
pub mod output;

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::admm::AdmmOptions;
use crate::agents::{validate, Agent, QuadraticCost, TradeGraph};
use crate::clearing::ClearingOptions;
use crate::error::{Error, Result};
use crate::grid::{AcLine, Bus, ConnectionPoint, DistLine, GridModel, GridSpec, HvdcLine, Operator, DEFAULT_LOSS_SEGMENTS};
use crate::policy::{PolicyDescriptor, PolicyKind};
use crate::solver::{SocMode, Tolerances};

pub const SCHEMA_VERSION: u32 = 1;

/// Reserved operator name of transmission buses.
pub const TSO: &str = "tso";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    pub agents: Vec<AgentSpec>,
    pub trades: TradeSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub admm: AdmmSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_base")]
    pub base_mva: f64,
    pub slack: String,
    #[serde(default = "default_segments")]
    pub loss_segments: usize,
    #[serde(default)]
    pub dsos: Vec<String>,
    pub buses: Vec<BusSpec>,
    #[serde(default)]
    pub ac_lines: Vec<AcLineSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hvdc_lines: Vec<HvdcLineSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dist_lines: Vec<DistLineSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub connections: Vec<ConnectionSpec>,
}

fn default_base() -> f64 {
    100.0
}

fn default_segments() -> usize {
    DEFAULT_LOSS_SEGMENTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: String,
    /// `"tso"` or the name of a DSO listed in `dsos`.
    pub operator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle_bounds: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voltage_bounds: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcLineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub x: f64,
    pub r: f64,
    /// MW.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvdcLineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistLineSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b0: f64,
    /// MVA.
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionSpec {
    pub id: String,
    pub tso_bus: String,
    pub dso: String,
    pub feeder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub bus: String,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default)]
    pub q_min: f64,
    #[serde(default)]
    pub q_max: f64,
    #[serde(default)]
    pub quadratic: f64,
    pub linear: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "snake_case", deny_unknown_fields)]
pub enum TradeSection {
    /// Everyone trades with everyone.
    Full,
    /// Agents of one operator trade among themselves and with every
    /// transmission-level agent.
    Community,
    /// Directed partner lists; they must be symmetric.
    Partners { partners: IndexMap<String, Vec<String>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            kind: PolicyKind::Soc,
            chi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub grid: bool,
    pub losses: bool,
    pub soc_mode: SocMode,
    pub cuts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = ClearingOptions::default();
        SolverSection {
            grid: d.grid,
            losses: d.losses,
            soc_mode: d.soc_mode,
            cuts: d.cuts,
            tol: d.tolerances.tol,
            max_iter: d.tolerances.max_iter,
        }
    }
}

impl SolverSection {
    pub fn options(&self) -> ClearingOptions {
        ClearingOptions {
            grid: self.grid,
            losses: self.losses,
            soc_mode: self.soc_mode,
            cuts: self.cuts,
            tolerances: Tolerances {
                tol: self.tol,
                max_iter: self.max_iter,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdmmSection {
    pub rho: f64,
    pub max_iter: usize,
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub adaptive: bool,
}

impl Default for AdmmSection {
    fn default() -> Self {
        let d = AdmmOptions::default();
        AdmmSection {
            rho: d.rho,
            max_iter: d.max_iter,
            eps_primal: d.eps_primal,
            eps_dual: d.eps_dual,
            adaptive: d.adaptive,
        }
    }
}

impl AdmmSection {
    pub fn options(&self) -> AdmmOptions {
        AdmmOptions {
            rho: self.rho,
            max_iter: self.max_iter,
            eps_primal: self.eps_primal,
            eps_dual: self.eps_dual,
            adaptive: self.adaptive,
            ..AdmmOptions::default()
        }
    }
}

/// Validated model objects built from a case file.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub file: CaseFile,
    pub grid: GridModel,
    pub agents: Vec<Agent>,
    pub graph: TradeGraph,
    pub policy: PolicyDescriptor,
    pub options: ClearingOptions,
    pub admm: AdmmOptions,
    /// SHA-256 of the canonical serialization.
    pub hash: String,
}

impl CaseFile {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case files serialize") + "\n"
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("case files serialize");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Builds and validates the model objects.
    pub fn build(&self) -> Result<LoadedCase> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidCase(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let grid = self.build_grid()?;
        let agents = self
            .agents
            .iter()
            .map(|a| {
                Ok(Agent {
                    id: a.id.clone(),
                    bus: grid.bus(&a.bus)?,
                    p_min: a.p_min,
                    p_max: a.p_max,
                    q_min: a.q_min,
                    q_max: a.q_max,
                    cost: QuadraticCost {
                        quadratic: a.quadratic,
                        linear: a.linear,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = agents.iter().find(|a| !seen.insert(a.id.as_str())) {
            return Err(Error::InvalidCase(format!("duplicate agent id `{}`", dup.id)));
        }
        let graph = self.build_graph(&grid, &agents)?;
        let errors: Vec<String> = validate(&agents, &graph)
            .into_iter()
            .filter(|d| d.is_error())
            .map(|d| d.to_string())
            .collect();
        if !errors.is_empty() {
            return Err(Error::InvalidCase(errors.join("; ")));
        }
        if let Some(chi) = self.policy.chi {
            if !(0.0..=1.0).contains(&chi) {
                return Err(Error::InvalidCase(format!("chi must lie in [0, 1], got {chi}")));
            }
        }
        Ok(LoadedCase {
            file: self.clone(),
            grid,
            agents,
            graph,
            policy: PolicyDescriptor::new(self.policy.kind, self.policy.chi),
            options: self.solver.options(),
            admm: self.admm.options(),
            hash: self.hash(),
        })
    }

    fn build_grid(&self) -> Result<GridModel> {
        let g = &self.grid;
        let operator = |name: &str| -> Result<Operator> {
            if name == TSO {
                return Ok(Operator::Tso);
            }
            g.dsos
                .iter()
                .position(|d| d == name)
                .map(Operator::Dso)
                .ok_or_else(|| Error::InvalidCase(format!("unknown operator `{name}`")))
        };
        let buses = g
            .buses
            .iter()
            .map(|b| {
                Ok(Bus {
                    id: b.id.clone(),
                    operator: operator(&b.operator)?,
                    angle_bounds: b.angle_bounds,
                    voltage_bounds: b.voltage_bounds,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let index = |id: &str| {
            g.buses
                .iter()
                .position(|b| b.id == id)
                .ok_or_else(|| Error::UnknownBus(id.to_string()))
        };
        let ac_lines = g
            .ac_lines
            .iter()
            .map(|l| {
                Ok(AcLine {
                    id: l.id.clone(),
                    from: index(&l.from)?,
                    to: index(&l.to)?,
                    reactance: l.x,
                    resistance: l.r,
                    capacity: l.capacity,
                    loss: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let hvdc_lines = g
            .hvdc_lines
            .iter()
            .map(|l| {
                Ok(HvdcLine {
                    id: l.id.clone(),
                    from: index(&l.from)?,
                    to: index(&l.to)?,
                    capacity: l.capacity,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dist_lines = g
            .dist_lines
            .iter()
            .map(|l| {
                Ok(DistLine {
                    id: l.id.clone(),
                    from: index(&l.from)?,
                    to: index(&l.to)?,
                    resistance: l.r,
                    reactance: l.x,
                    shunt: l.b0,
                    capacity: l.capacity,
                    loss: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let connections = g
            .connections
            .iter()
            .map(|c| {
                let Operator::Dso(dso) = operator(&c.dso)? else {
                    return Err(Error::InvalidCase(format!("connection `{}` must name a DSO", c.id)));
                };
                Ok(ConnectionPoint {
                    id: c.id.clone(),
                    tso_bus: index(&c.tso_bus)?,
                    dso,
                    feeder: index(&c.feeder)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GridModel::new(GridSpec {
            base_mva: g.base_mva,
            buses,
            ac_lines,
            hvdc_lines,
            dist_lines,
            connections,
            dsos: g.dsos.clone(),
            slack: index(&g.slack)?,
            loss_segments: g.loss_segments,
        })
    }

    fn build_graph(&self, grid: &GridModel, agents: &[Agent]) -> Result<TradeGraph> {
        let n = agents.len();
        Ok(match &self.trades {
            TradeSection::Full => TradeGraph::full(n),
            TradeSection::Community => {
                let op = |i: usize| grid.buses[agents[i].bus].operator;
                TradeGraph::new(
                    (0..n)
                        .map(|i| {
                            (0..n)
                                .filter(|&j| j != i && (op(i) == op(j) || op(i).is_tso() || op(j).is_tso()))
                                .collect()
                        })
                        .collect(),
                )
            }
            TradeSection::Partners { partners } => {
                let index = |id: &str| {
                    agents
                        .iter()
                        .position(|a| a.id == id)
                        .ok_or_else(|| Error::UnknownAgent(id.to_string()))
                };
                let mut lists = vec![Vec::new(); n];
                for (agent, list) in partners {
                    let i = index(agent)?;
                    for p in list {
                        lists[i].push(index(p)?);
                    }
                }
                TradeGraph::new(lists)
            }
        })
    }
}

pub fn parse_case(text: &str) -> Result<CaseFile> {
    Ok(serde_json::from_str(text)?)
}

/// Reads, parses and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<LoadedCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let case = parse_case(&text).map_err(|e| Error::InvalidCase(format!("{}: {e}", path.display())))?;
    case.build()
}
