#![allow(dead_code)]

use p2p_clear::clearing::{assemble, solve, ClearingOptions, ClearingProblem, ClearingSolution, Market};
use p2p_clear::grid::{build_modified_tf, build_ptdf};
use p2p_clear::io::{casegen, LoadedCase};
use p2p_clear::policy::{build_policy, AllocationMatrix, PolicyDescriptor};
use p2p_clear::settlement::{settle, SettlementReport};

pub fn bundled(name: &str) -> LoadedCase {
    casegen::bundled()
        .get(name)
        .unwrap_or_else(|| panic!("no bundled case `{name}`"))
        .build()
        .expect("bundled case builds")
}

pub fn allocation(case: &LoadedCase, policy: PolicyDescriptor) -> AllocationMatrix {
    let tf = build_modified_tf(&case.grid, &build_ptdf(&case.grid).unwrap()).unwrap();
    build_policy(&case.grid, &case.agents, &case.graph, &tf, policy).unwrap()
}

pub fn market<'a>(case: &'a LoadedCase, allocation: Option<&'a AllocationMatrix>) -> Market<'a> {
    Market {
        grid: &case.grid,
        agents: &case.agents,
        graph: &case.graph,
        allocation,
    }
}

pub struct Cleared {
    pub allocation: Option<AllocationMatrix>,
    pub problem: ClearingProblem,
    pub solution: ClearingSolution,
}

/// Clears `case` under `options`, building the allocation for `policy` when
/// losses are on.
pub fn clear(case: &LoadedCase, options: ClearingOptions, policy: PolicyDescriptor) -> Cleared {
    let options = options.normalized();
    let allocation = options.losses.then(|| allocation(case, policy));
    let problem = assemble(&market(case, allocation.as_ref()), options).unwrap();
    let solution = solve(&problem, options.backend().as_ref());
    assert!(solution.is_optimal(), "clearing `{}` ended {}", case.file.name, solution.status);
    Cleared {
        allocation,
        problem,
        solution,
    }
}

pub fn clear_case(case: &LoadedCase) -> Cleared {
    clear(case, case.options, case.policy)
}

pub fn lossless(case: &LoadedCase) -> ClearingSolution {
    clear(
        case,
        ClearingOptions {
            losses: false,
            ..case.options
        },
        case.policy,
    )
    .solution
}

/// Settlement of `policy` against the lossless reference.
pub fn settle_policy(case: &LoadedCase, policy: PolicyDescriptor) -> SettlementReport {
    let reference = lossless(case);
    let run = clear(case, case.options, policy);
    settle(&market(case, run.allocation.as_ref()), &run.solution, Some(&reference)).unwrap()
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = y.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    cov / (sx * sy)
}
