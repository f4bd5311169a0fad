//! Joint transmission/distribution network model and the matrices derived
//! from it.
//!
//! Lines are indexed in one global order: transmission AC lines first, then
//! distribution lines. HVDC links are lossless and sit outside that order.
//! All powers are in MW/MVAr; impedances are per unit on `base_mva`.

mod losses;
mod ptdf;

use std::collections::HashMap;

use nalgebra::DMatrix;

pub use losses::{envelope, fit_loss_linearization, LossSegment};

use crate::error::{Error, Result};

/// Default number of piecewise loss segments per line.
pub const DEFAULT_LOSS_SEGMENTS: usize = 2;

/// The system operator responsible for a bus or line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operator {
    Tso,
    /// Index into [`GridModel::dsos`].
    Dso(usize),
}

impl Operator {
    pub fn is_tso(self) -> bool {
        matches!(self, Operator::Tso)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Transmission,
    Distribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub operator: Operator,
    /// Voltage angle bounds in rad (distribution buses only).
    pub angle_bounds: Option<(f64, f64)>,
    /// Voltage magnitude bounds in p.u. (distribution buses only).
    pub voltage_bounds: Option<(f64, f64)>,
}

impl Bus {
    pub fn level(&self) -> Level {
        match self.operator {
            Operator::Tso => Level::Transmission,
            Operator::Dso(_) => Level::Distribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcLine {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub reactance: f64,
    pub resistance: f64,
    /// Active power limit in MW.
    pub capacity: f64,
    pub loss: Vec<LossSegment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvdcLine {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistLine {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub resistance: f64,
    pub reactance: f64,
    /// Shunt susceptance `b0` in p.u.
    pub shunt: f64,
    /// Apparent power limit in MVA.
    pub capacity: f64,
    pub loss: Vec<LossSegment>,
}

impl DistLine {
    /// Series susceptance magnitude `x / (r^2 + x^2)`.
    pub fn susceptance(&self) -> f64 {
        self.reactance / (self.resistance.powi(2) + self.reactance.powi(2))
    }

    /// Series conductance `r / (r^2 + x^2)`.
    pub fn conductance(&self) -> f64 {
        self.resistance / (self.resistance.powi(2) + self.reactance.powi(2))
    }

    /// `B + 2 b0`, the coefficient of the voltage difference in the reactive flow.
    pub fn susceptance_star(&self) -> f64 {
        self.susceptance() + 2.0 * self.shunt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionPoint {
    pub id: String,
    pub tso_bus: usize,
    pub dso: usize,
    /// Root bus of the distribution network.
    pub feeder: usize,
}

/// Reference to a line in the global loss-bearing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineRef {
    Ac(usize),
    Dist(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub ac_lines: Vec<AcLine>,
    pub hvdc_lines: Vec<HvdcLine>,
    pub dist_lines: Vec<DistLine>,
    pub connections: Vec<ConnectionPoint>,
    pub dsos: Vec<String>,
    pub slack: usize,
    bus_index: HashMap<String, usize>,
}

/// Line data before loss coefficients are attached.
#[derive(Debug, Clone)]
pub struct GridSpec {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub ac_lines: Vec<AcLine>,
    pub hvdc_lines: Vec<HvdcLine>,
    pub dist_lines: Vec<DistLine>,
    pub connections: Vec<ConnectionPoint>,
    pub dsos: Vec<String>,
    pub slack: usize,
    pub loss_segments: usize,
}

impl GridModel {
    /// Validates the network and fits loss segments for every line.
    pub fn new(spec: GridSpec) -> Result<Self> {
        let GridSpec {
            base_mva,
            buses,
            mut ac_lines,
            hvdc_lines,
            mut dist_lines,
            connections,
            dsos,
            slack,
            loss_segments,
        } = spec;
        if base_mva <= 0.0 {
            return Err(Error::Structure("base MVA must be positive".into()));
        }
        if loss_segments == 0 {
            return Err(Error::Config("loss segment count must be at least 1".into()));
        }
        let mut bus_index = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id.clone(), i).is_some() {
                return Err(Error::Structure(format!("duplicate bus id `{}`", b.id)));
            }
            if let Operator::Dso(d) = b.operator {
                if d >= dsos.len() {
                    return Err(Error::Structure(format!("bus `{}` references unknown DSO", b.id)));
                }
            }
            if let Some((lo, hi)) = b.angle_bounds {
                if !(lo < hi) {
                    return Err(Error::Structure(format!("bus `{}`: angle bounds must satisfy min < max", b.id)));
                }
            }
            if let Some((lo, hi)) = b.voltage_bounds {
                if !(lo < hi) {
                    return Err(Error::Structure(format!("bus `{}`: voltage bounds must satisfy min < max", b.id)));
                }
            }
        }
        if slack >= buses.len() || !buses[slack].operator.is_tso() {
            return Err(Error::Structure("slack must be a transmission bus".into()));
        }
        for l in &mut ac_lines {
            check_endpoints(&buses, l.from, l.to, &l.id)?;
            if !(buses[l.from].operator.is_tso() && buses[l.to].operator.is_tso()) {
                return Err(Error::Structure(format!("AC line `{}` must connect transmission buses", l.id)));
            }
            if !(l.reactance > 0.0) || !(l.capacity > 0.0) || !(l.resistance >= 0.0) {
                return Err(Error::Structure(format!("AC line `{}`: need x > 0, capacity > 0, r >= 0", l.id)));
            }
            l.loss = fit_loss_linearization(l.resistance / base_mva, l.capacity, loss_segments);
        }
        for h in &hvdc_lines {
            check_endpoints(&buses, h.from, h.to, &h.id)?;
            if !(buses[h.from].operator.is_tso() && buses[h.to].operator.is_tso()) {
                return Err(Error::Structure(format!("HVDC line `{}` must connect transmission buses", h.id)));
            }
            if !(h.capacity > 0.0) {
                return Err(Error::Structure(format!("HVDC line `{}`: capacity must be positive", h.id)));
            }
        }
        for d in &mut dist_lines {
            check_endpoints(&buses, d.from, d.to, &d.id)?;
            let (a, b) = (buses[d.from].operator, buses[d.to].operator);
            if a.is_tso() || a != b {
                return Err(Error::Structure(format!(
                    "distribution line `{}` must connect buses of one DSO",
                    d.id
                )));
            }
            if !(d.capacity > 0.0) || !(d.resistance >= 0.0) || !(d.reactance > 0.0) {
                return Err(Error::Structure(format!("distribution line `{}`: need capacity > 0, r >= 0, x > 0", d.id)));
            }
            d.loss = fit_loss_linearization(d.resistance / base_mva, d.capacity, loss_segments);
        }
        for (k, name) in dsos.iter().enumerate() {
            let conns: Vec<_> = connections.iter().filter(|c| c.dso == k).collect();
            if conns.is_empty() {
                return Err(Error::Structure(format!("DSO `{name}` has no connection point")));
            }
        }
        for c in &connections {
            if c.dso >= dsos.len() || c.tso_bus >= buses.len() || c.feeder >= buses.len() {
                return Err(Error::Structure(format!("connection `{}` has dangling references", c.id)));
            }
            if !buses[c.tso_bus].operator.is_tso() {
                return Err(Error::Structure(format!("connection `{}`: TSO side must be a transmission bus", c.id)));
            }
            if buses[c.feeder].operator != Operator::Dso(c.dso) {
                return Err(Error::Structure(format!("connection `{}`: feeder bus must belong to its DSO", c.id)));
            }
        }
        let grid = GridModel {
            base_mva,
            buses,
            ac_lines,
            hvdc_lines,
            dist_lines,
            connections,
            dsos,
            slack,
            bus_index,
        };
        for k in 0..grid.dsos.len() {
            let (local, branches) = grid.dso_branches(k);
            let root = local
                .iter()
                .position(|&b| b == grid.dso_root(k))
                .expect("feeder is a DSO bus");
            let isolated = ptdf::unreachable(local.len(), &branches, root);
            if !isolated.is_empty() {
                return Err(Error::Structure(format!(
                    "DSO `{}` is not connected; isolated buses: {}",
                    grid.dsos[k],
                    grid.names(isolated.iter().map(|&i| local[i]))
                )));
            }
        }
        Ok(grid)
    }

    pub fn bus(&self, id: &str) -> Result<usize> {
        self.bus_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownBus(id.to_string()))
    }

    fn names(&self, buses: impl Iterator<Item = usize>) -> String {
        buses
            .map(|b| self.buses[b].id.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    }

    pub fn transmission_buses(&self) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&b| self.buses[b].operator.is_tso())
            .collect()
    }

    pub fn dso_buses(&self, dso: usize) -> Vec<usize> {
        (0..self.buses.len())
            .filter(|&b| self.buses[b].operator == Operator::Dso(dso))
            .collect()
    }

    /// Feeder of the first connection point of `dso`; slack of its PTDF block
    /// and angle reference of its power flow.
    pub fn dso_root(&self, dso: usize) -> usize {
        self.connections
            .iter()
            .find(|c| c.dso == dso)
            .map(|c| c.feeder)
            .expect("validated: every DSO has a connection")
    }

    /// Transmission bus that the DSO's buses inherit transmission sensitivities from.
    pub fn dso_connection_bus(&self, dso: usize) -> usize {
        self.connections
            .iter()
            .find(|c| c.dso == dso)
            .map(|c| c.tso_bus)
            .expect("validated: every DSO has a connection")
    }

    /// Local bus list and `(from, to, 1/B)` branches of one DSO.
    fn dso_branches(&self, dso: usize) -> (Vec<usize>, Vec<(usize, usize, f64)>) {
        let local = self.dso_buses(dso);
        let pos: HashMap<usize, usize> = local.iter().enumerate().map(|(i, &b)| (b, i)).collect();
        let branches = self
            .dist_lines
            .iter()
            .filter(|d| self.buses[d.from].operator == Operator::Dso(dso))
            .map(|d| (pos[&d.from], pos[&d.to], 1.0 / d.susceptance()))
            .collect();
        (local, branches)
    }

    pub fn line_count(&self) -> usize {
        self.ac_lines.len() + self.dist_lines.len()
    }

    pub fn line(&self, l: usize) -> LineRef {
        if l < self.ac_lines.len() {
            LineRef::Ac(l)
        } else {
            LineRef::Dist(l - self.ac_lines.len())
        }
    }

    pub fn line_id(&self, l: usize) -> &str {
        match self.line(l) {
            LineRef::Ac(k) => &self.ac_lines[k].id,
            LineRef::Dist(d) => &self.dist_lines[d].id,
        }
    }

    pub fn line_endpoints(&self, l: usize) -> (usize, usize) {
        match self.line(l) {
            LineRef::Ac(k) => (self.ac_lines[k].from, self.ac_lines[k].to),
            LineRef::Dist(d) => (self.dist_lines[d].from, self.dist_lines[d].to),
        }
    }

    pub fn line_operator(&self, l: usize) -> Operator {
        self.buses[self.line_endpoints(l).0].operator
    }

    pub fn line_resistance(&self, l: usize) -> f64 {
        match self.line(l) {
            LineRef::Ac(k) => self.ac_lines[k].resistance,
            LineRef::Dist(d) => self.dist_lines[d].resistance,
        }
    }

    pub fn line_capacity(&self, l: usize) -> f64 {
        match self.line(l) {
            LineRef::Ac(k) => self.ac_lines[k].capacity,
            LineRef::Dist(d) => self.dist_lines[d].capacity,
        }
    }

    pub fn line_loss(&self, l: usize) -> &[LossSegment] {
        match self.line(l) {
            LineRef::Ac(k) => &self.ac_lines[k].loss,
            LineRef::Dist(d) => &self.dist_lines[d].loss,
        }
    }

    /// All operators: the TSO followed by every DSO.
    pub fn operators(&self) -> Vec<Operator> {
        std::iter::once(Operator::Tso)
            .chain((0..self.dsos.len()).map(Operator::Dso))
            .collect()
    }

    pub fn operator_name(&self, op: Operator) -> &str {
        match op {
            Operator::Tso => "TSO",
            Operator::Dso(d) => &self.dsos[d],
        }
    }
}

fn check_endpoints(buses: &[Bus], from: usize, to: usize, id: &str) -> Result<()> {
    if from >= buses.len() || to >= buses.len() || from == to {
        return Err(Error::Structure(format!("line `{id}` has invalid endpoints")));
    }
    Ok(())
}

/// PTDF matrix of the AC transmission network (AC lines x transmission buses).
#[derive(Debug, Clone, PartialEq)]
pub struct Ptdf {
    pub values: DMatrix<f64>,
    /// Global bus index of each column.
    pub columns: Vec<usize>,
    column_of: HashMap<usize, usize>,
}

impl Ptdf {
    pub fn column(&self, bus: usize) -> Option<usize> {
        self.column_of.get(&bus).copied()
    }

    /// Sensitivity of AC line `k` to an injection at global bus `bus`.
    pub fn get(&self, k: usize, bus: usize) -> f64 {
        self.column(bus).map_or(0.0, |c| self.values[(k, c)])
    }
}

pub fn build_ptdf(grid: &GridModel) -> Result<Ptdf> {
    let columns = grid.transmission_buses();
    let column_of: HashMap<usize, usize> = columns.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let branches: Vec<_> = grid
        .ac_lines
        .iter()
        .map(|l| (column_of[&l.from], column_of[&l.to], l.reactance))
        .collect();
    let values = ptdf::ptdf_block(columns.len(), &branches, column_of[&grid.slack]).map_err(|isolated| {
        Error::Structure(format!(
            "transmission network is not connected; isolated buses: {}",
            grid.names(isolated.iter().map(|&i| columns[i]))
        ))
    })?;
    Ok(Ptdf {
        values,
        columns,
        column_of,
    })
}

/// Block-per-operator transfer factors over all lines and all buses.
///
/// Transmission rows copy the PTDF; a distribution bus takes the column of its
/// DSO's connection bus. Distribution rows hold the DSO's own PTDF block, built
/// with `1/B` as the reactance analog and the feeder as slack.
pub fn build_modified_tf(grid: &GridModel, ptdf: &Ptdf) -> Result<DMatrix<f64>> {
    let n_ac = grid.ac_lines.len();
    let mut tf = DMatrix::zeros(grid.line_count(), grid.buses.len());
    for (b, bus) in grid.buses.iter().enumerate() {
        let source = match bus.operator {
            Operator::Tso => b,
            Operator::Dso(d) => grid.dso_connection_bus(d),
        };
        for k in 0..n_ac {
            tf[(k, b)] = ptdf.get(k, source);
        }
    }
    for d in 0..grid.dsos.len() {
        let (local, branches) = grid.dso_branches(d);
        let root = local.iter().position(|&b| b == grid.dso_root(d)).expect("feeder in DSO");
        let block = ptdf::ptdf_block(local.len(), &branches, root)
            .map_err(|_| Error::Structure(format!("DSO `{}` is not connected", grid.dsos[d])))?;
        let rows: Vec<usize> = (0..grid.dist_lines.len())
            .filter(|&i| grid.buses[grid.dist_lines[i].from].operator == Operator::Dso(d))
            .collect();
        for (r, &line) in rows.iter().enumerate() {
            for (c, &bus) in local.iter().enumerate() {
                tf[(n_ac + line, bus)] = block[(r, c)];
            }
        }
    }
    Ok(tf)
}

/// Loss distribution matrix (buses x lines): half of each line's losses are
/// withdrawn at each endpoint.
pub fn build_loss_distribution(grid: &GridModel) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(grid.buses.len(), grid.line_count());
    for l in 0..grid.line_count() {
        let (a, b) = grid.line_endpoints(l);
        d[(a, l)] = 0.5;
        d[(b, l)] = 0.5;
    }
    d
}

/// Resistance-weighted L1 distance between the columns of two buses in a
/// lines x buses sensitivity matrix.
pub fn pair_distance(grid: &GridModel, factors: &DMatrix<f64>, bus_a: &str, bus_b: &str) -> Result<f64> {
    let a = grid.bus(bus_a)?;
    let b = grid.bus(bus_b)?;
    Ok(pair_distance_idx(grid, factors, a, b))
}

pub(crate) fn pair_distance_idx(grid: &GridModel, factors: &DMatrix<f64>, a: usize, b: usize) -> f64 {
    (0..factors.nrows())
        .map(|l| (factors[(l, a)] - factors[(l, b)]).abs() * grid.line_resistance(l))
        .sum()
}
