//! Built-in and seeded case generators.
//!
//! Network and cost parameters of the fixed cases are chosen for this crate;
//! they are illustrative and not taken from any published dataset.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AcLineSpec, AdmmSection, AgentSpec, BusSpec, CaseFile, ConnectionSpec, DistLineSpec, GridSection, PolicySection,
    SolverSection, TradeSection, SCHEMA_VERSION, TSO,
};
use crate::error::{Error, Result};
use crate::policy::PolicyKind;

/// Seed of the bundled random case.
pub const RANDOM_CASE_SEED: u64 = 20_240_611;

const DSO_ANGLE: (f64, f64) = (-0.5, 0.5);
const DSO_VOLTAGE: (f64, f64) = (0.9, 1.1);

fn tso_bus(id: &str) -> BusSpec {
    BusSpec {
        id: id.into(),
        operator: TSO.into(),
        angle_bounds: None,
        voltage_bounds: None,
    }
}

fn dso_bus(id: &str, dso: &str) -> BusSpec {
    BusSpec {
        id: id.into(),
        operator: dso.into(),
        angle_bounds: Some(DSO_ANGLE),
        voltage_bounds: Some(DSO_VOLTAGE),
    }
}

fn ac(id: &str, from: &str, to: &str, x: f64, r: f64, capacity: f64) -> AcLineSpec {
    AcLineSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        x,
        r,
        capacity,
    }
}

fn dist(id: &str, from: &str, to: &str, r: f64, x: f64, capacity: f64) -> DistLineSpec {
    DistLineSpec {
        id: id.into(),
        from: from.into(),
        to: to.into(),
        r,
        x,
        b0: 0.0,
        capacity,
    }
}

fn connection(id: &str, tso_bus: &str, dso: &str, feeder: &str) -> ConnectionSpec {
    ConnectionSpec {
        id: id.into(),
        tso_bus: tso_bus.into(),
        dso: dso.into(),
        feeder: feeder.into(),
    }
}

fn generator(id: &str, bus: &str, p_max: f64, linear: f64) -> AgentSpec {
    AgentSpec {
        id: id.into(),
        bus: bus.into(),
        p_min: 0.0,
        p_max,
        q_min: -p_max / 2.0,
        q_max: p_max / 2.0,
        quadratic: 0.0,
        linear,
    }
}

/// Inflexible demand of `load` MW.
fn load(id: &str, bus: &str, load: f64) -> AgentSpec {
    AgentSpec {
        id: id.into(),
        bus: bus.into(),
        p_min: -load,
        p_max: -load,
        q_min: -2.0,
        q_max: 2.0,
        quadratic: 0.0,
        linear: 0.0,
    }
}

fn case(name: &str, description: &str, grid: GridSection, agents: Vec<AgentSpec>, trades: TradeSection) -> CaseFile {
    CaseFile {
        schema_version: SCHEMA_VERSION,
        name: name.into(),
        description: Some(description.into()),
        seed: 0,
        grid,
        agents,
        trades,
        policy: PolicySection::default(),
        solver: SolverSection::default(),
        admm: AdmmSection::default(),
    }
}

fn triangle_lines(capacity_12: f64) -> Vec<AcLineSpec> {
    vec![
        ac("L12", "T1", "T2", 0.1, 0.02, capacity_12),
        ac("L23", "T2", "T3", 0.1, 0.02, 100.0),
        ac("L13", "T1", "T3", 0.1, 0.02, 100.0),
    ]
}

/// Meshed three-bus transmission grid with a two-bus radial DSO under T3.
/// One generator (T1), a transmission load (T2), a load at the feeder (D4)
/// and a load one line further down (D5).
pub fn five_bus() -> CaseFile {
    let grid = GridSection {
        base_mva: 100.0,
        slack: "T1".into(),
        loss_segments: 2,
        dsos: vec!["dso1".into()],
        buses: vec![
            tso_bus("T1"),
            tso_bus("T2"),
            tso_bus("T3"),
            dso_bus("D4", "dso1"),
            dso_bus("D5", "dso1"),
        ],
        ac_lines: triangle_lines(100.0),
        hvdc_lines: vec![],
        dist_lines: vec![dist("D45", "D4", "D5", 0.08, 0.05, 30.0)],
        connections: vec![connection("C1", "T3", "dso1", "D4")],
    };
    let agents = vec![
        generator("g1", "T1", 100.0, 20.0),
        load("l2", "T2", 30.0),
        load("l3", "D4", 8.0),
        load("l4", "D5", 8.0),
    ];
    case(
        "five_bus",
        "one generator and three loads; meshed transmission and a radial distribution feeder",
        grid,
        agents,
        TradeSection::Full,
    )
}

/// Two buses, a cheap quadratic generator and a price-responsive load,
/// cleared without losses.
pub fn two_bus() -> CaseFile {
    let grid = GridSection {
        base_mva: 100.0,
        slack: "A".into(),
        loss_segments: 1,
        dsos: vec![],
        buses: vec![tso_bus("A"), tso_bus("B")],
        ac_lines: vec![ac("AB", "A", "B", 0.1, 0.01, 100.0)],
        hvdc_lines: vec![],
        dist_lines: vec![],
        connections: vec![],
    };
    let agents = vec![
        AgentSpec {
            id: "gen".into(),
            bus: "A".into(),
            p_min: 0.0,
            p_max: 20.0,
            q_min: 0.0,
            q_max: 0.0,
            quadratic: 0.5,
            linear: 10.0,
        },
        AgentSpec {
            id: "load".into(),
            bus: "B".into(),
            p_min: -15.0,
            p_max: 0.0,
            q_min: 0.0,
            q_max: 0.0,
            quadratic: 0.25,
            linear: 25.0,
        },
    ];
    let mut c = case("two_bus", "two agents on two buses, lossless", grid, agents, TradeSection::Full);
    c.solver.losses = false;
    c
}

/// Single-operator triangle with ample line capacity, cleared without losses.
pub fn uncongested() -> CaseFile {
    let grid = GridSection {
        base_mva: 100.0,
        slack: "T1".into(),
        loss_segments: 2,
        dsos: vec![],
        buses: vec![tso_bus("T1"), tso_bus("T2"), tso_bus("T3")],
        ac_lines: triangle_lines(500.0),
        hvdc_lines: vec![],
        dist_lines: vec![],
        connections: vec![],
    };
    let agents = vec![
        generator("cheap", "T1", 40.0, 15.0),
        generator("marginal", "T3", 100.0, 25.0),
        generator("idle", "T2", 100.0, 40.0),
        load("city", "T2", 60.0),
        load("town", "T3", 20.0),
    ];
    let mut c = case(
        "uncongested",
        "transmission only, no binding limits, lossless",
        grid,
        agents,
        TradeSection::Full,
    );
    c.solver.losses = false;
    c
}

/// Cheap generation behind a weak line: clearing without the grid overloads L12.
pub fn tight() -> CaseFile {
    let grid = GridSection {
        base_mva: 100.0,
        slack: "T1".into(),
        loss_segments: 2,
        dsos: vec!["dso1".into()],
        buses: vec![
            tso_bus("T1"),
            tso_bus("T2"),
            tso_bus("T3"),
            dso_bus("D4", "dso1"),
            dso_bus("D5", "dso1"),
        ],
        ac_lines: triangle_lines(30.0),
        hvdc_lines: vec![],
        dist_lines: vec![dist("D45", "D4", "D5", 0.08, 0.05, 10.0)],
        connections: vec![connection("C1", "T3", "dso1", "D4")],
    };
    let agents = vec![
        generator("cheap", "T1", 150.0, 15.0),
        generator("dear", "T3", 150.0, 40.0),
        load("city", "T2", 60.0),
        load("village", "D5", 6.0),
    ];
    case(
        "tight",
        "weak transmission corridor between cheap supply and demand",
        grid,
        agents,
        TradeSection::Full,
    )
}

/// Radial chain of six distribution buses under a two-bus transmission grid,
/// with identical loads along the chain.
pub fn six_bus_radial() -> CaseFile {
    let feeder: Vec<String> = (0..6).map(|k| format!("F{k}")).collect();
    let mut buses = vec![tso_bus("T1"), tso_bus("T2")];
    buses.extend(feeder.iter().map(|b| dso_bus(b, "dso1")));
    let dist_lines = feeder
        .windows(2)
        .map(|w| dist(&format!("{}-{}", w[0], w[1]), &w[0], &w[1], 0.05, 0.04, 40.0))
        .collect();
    let grid = GridSection {
        base_mva: 100.0,
        slack: "T1".into(),
        loss_segments: 2,
        dsos: vec!["dso1".into()],
        buses,
        ac_lines: vec![ac("L12", "T1", "T2", 0.1, 0.02, 200.0)],
        hvdc_lines: vec![],
        dist_lines,
        connections: vec![connection("C1", "T2", "dso1", "F0")],
    };
    let mut agents = vec![generator("gen", "T1", 100.0, 20.0)];
    agents.extend(feeder.iter().skip(1).map(|b| load(&format!("load{}", &b[1..]), b, 3.0)));
    let loads: Vec<String> = agents[1..].iter().map(|a| a.id.clone()).collect();
    let mut partners: IndexMap<String, Vec<String>> = IndexMap::from([("gen".to_string(), loads.clone())]);
    partners.extend(loads.into_iter().map(|l| (l, vec!["gen".to_string()])));
    let mut c = case(
        "six_bus_radial",
        "identical loads along a radial feeder buying from one generator, individual loss allocation",
        grid,
        agents,
        TradeSection::Partners { partners },
    );
    c.policy = PolicySection {
        kind: PolicyKind::Ind,
        chi: None,
    };
    c
}

/// Random transmission ring with radial distribution communities.
///
/// Transmission: `n_tso_bus` buses on a ring plus random chords, one bulk
/// generator per bus. Every DSO is a random four-bus tree with two or three
/// prosumers per non-feeder bus. Prosumer flexibility `P_max - P_min` is drawn
/// from U(0, 1) MW and every linear cost from U(10, 50) EUR/MWh.
pub fn random_case(n_tso_bus: usize, n_dso: usize, seed: u64) -> Result<CaseFile> {
    if n_tso_bus < 3 || n_dso < 1 {
        return Err(Error::Config("random cases need at least 3 transmission buses and 1 DSO".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tso: Vec<String> = (0..n_tso_bus).map(|b| format!("T{b}")).collect();
    let mut buses: Vec<BusSpec> = tso.iter().map(|b| tso_bus(b)).collect();
    let mut ac_lines = Vec::new();
    let mut add_ac = |rng: &mut ChaCha8Rng, a: usize, b: usize| {
        let x = rng.gen_range(0.05..0.2);
        ac_lines.push(ac(&format!("L{a}-{b}"), &tso[a], &tso[b], x, x / 8.0, 300.0));
    };
    for b in 0..n_tso_bus {
        add_ac(&mut rng, b, (b + 1) % n_tso_bus);
    }
    if n_tso_bus > 3 {
        for b in 0..n_tso_bus {
            if rng.gen_bool(0.3) {
                add_ac(&mut rng, b, (b + 2) % n_tso_bus);
            }
        }
    }
    let mut agents: Vec<AgentSpec> = tso
        .iter()
        .map(|b| generator(&format!("G{}", &b[1..]), b, 100.0, rng.gen_range(10.0..50.0)))
        .collect();
    let mut dsos = Vec::new();
    let mut dist_lines = Vec::new();
    let mut connections = Vec::new();
    for k in 0..n_dso {
        let name = format!("dso{k}");
        let local: Vec<String> = (0..4).map(|m| format!("D{k}.{m}")).collect();
        buses.extend(local.iter().map(|b| dso_bus(b, &name)));
        for m in 1..local.len() {
            let parent = rng.gen_range(0..m);
            let (r, x) = (rng.gen_range(0.02..0.08), rng.gen_range(0.02..0.06));
            dist_lines.push(dist(&format!("{}-{}", local[parent], local[m]), &local[parent], &local[m], r, x, 20.0));
        }
        for bus in &local[1..] {
            let members = rng.gen_range(2..=3);
            for n in 0..members {
                let demand: f64 = rng.gen_range(0.5..3.0);
                let span: f64 = rng.gen_range(0.0..1.0);
                agents.push(AgentSpec {
                    id: format!("P{}.{n}", &bus[1..]),
                    bus: bus.clone(),
                    p_min: -demand,
                    p_max: -demand + span,
                    q_min: -0.2,
                    q_max: 0.2,
                    quadratic: 0.0,
                    linear: rng.gen_range(10.0..50.0),
                });
            }
        }
        connections.push(connection(&format!("C{k}"), &tso[k % n_tso_bus], &name, &local[0]));
        dsos.push(name);
    }
    let grid = GridSection {
        base_mva: 100.0,
        slack: tso[0].clone(),
        loss_segments: 2,
        dsos,
        buses,
        ac_lines,
        hvdc_lines: vec![],
        dist_lines,
        connections,
    };
    let mut c = case(
        &format!("random_{n_tso_bus}x{n_dso}_{seed}"),
        "seeded transmission ring with distribution communities",
        grid,
        agents,
        TradeSection::Community,
    );
    c.seed = seed;
    c.policy = PolicySection {
        kind: PolicyKind::Ind,
        chi: None,
    };
    Ok(c)
}

/// The random case shipped with the crate.
pub fn bundled_random() -> CaseFile {
    random_case(4, 2, RANDOM_CASE_SEED).expect("valid sizes")
}

/// Every bundled case, keyed by file stem.
pub fn bundled() -> IndexMap<&'static str, CaseFile> {
    IndexMap::from([
        ("five_bus", five_bus()),
        ("two_bus", two_bus()),
        ("uncongested", uncongested()),
        ("tight", tight()),
        ("six_bus_radial", six_bus_radial()),
        ("random", bundled_random()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_modified_tf, build_ptdf, pair_distance};

    #[test]
    fn bundled_cases_build() {
        for (name, case) in bundled() {
            case.build().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn five_bus_topology() {
        let loaded = five_bus().build().unwrap();
        assert_eq!(loaded.agents.len(), 4);
        assert_eq!(loaded.grid.connections.len(), 1);
        let g = &loaded.grid;
        let tf = build_modified_tf(g, &build_ptdf(g).unwrap()).unwrap();
        let near = pair_distance(g, &tf, "D4", "D4").unwrap();
        let far = pair_distance(g, &tf, "D5", "D4").unwrap();
        assert!(far > near);
        let demand: f64 = loaded.agents.iter().map(|a| -a.p_min.min(0.0)).sum();
        let losses_bound: f64 = (0..g.line_count()).map(|l| g.line_resistance(l) / g.base_mva * g.line_capacity(l).powi(2)).sum();
        assert!(loaded.agents[0].p_max > demand + losses_bound);
    }

    #[test]
    fn random_case_is_deterministic_and_within_ranges() {
        let a = random_case(5, 3, 42).unwrap();
        let b = random_case(5, 3, 42).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a.to_json(), random_case(5, 3, 43).unwrap().to_json());
        for agent in &a.agents {
            assert!((10.0..=50.0).contains(&agent.linear));
            if agent.id.starts_with('P') {
                let span = agent.p_max - agent.p_min;
                assert!((0.0..=1.0).contains(&span));
            }
        }
        a.build().unwrap();
    }
}
