//! Command-line driver.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use super::casegen;
use super::output::{
    write_admm_log, write_lines, write_prices, write_run_record, write_settlement, write_trades, RunRecord,
    SolutionSummary,
};
use super::{load_case, LoadedCase};
use crate::admm;
use crate::clearing::{assemble, extract_prices, solve, ClearingOptions, ClearingSolution, Market};
use crate::error::{Error, Result};
use crate::grid::{build_modified_tf, build_ptdf};
use crate::policy::{build_policy, AllocationMatrix, PolicyDescriptor, PolicyKind};
use crate::settlement::{line_loading, payments, settle, SettlementReport};
use crate::solver::{SocMode, Status};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NOT_SOLVED: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "p2p-clear", version, about = "Peer-to-peer electricity market clearing with grid operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Clear one case and write the solution and settlement.
    Clear(RunArgs),
    /// Clear with and without the grid and compare prices and loadings.
    CompareGrid(RunArgs),
    /// Compare socialized, individual and capacity-scaled loss allocation.
    ComparePolicies(RunArgs),
    /// Sweep the socialization factor.
    SweepChi {
        #[command(flatten)]
        run: RunArgs,
        /// Number of grid points on [0, 1].
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
    /// Negotiate the clearing by consensus ADMM.
    Admm(RunArgs),
    /// Write generated case files.
    Generate(GenerateArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Case file (JSON).
    #[arg(value_name = "CASE")]
    case_path: Option<PathBuf>,
    #[arg(long = "case", value_name = "CASE", conflicts_with = "case_path")]
    case_flag: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    no_grid: bool,
    #[arg(long)]
    no_losses: bool,
    #[arg(long, value_enum)]
    soc_mode: Option<SocArg>,
    #[arg(long)]
    cuts: Option<usize>,
    /// Recorded in the run record; generated cases use it as their seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(value_enum)]
    kind: CaseKind,
    /// Output file, or directory for `bundled`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    n_tso_bus: usize,
    #[arg(long, default_value_t = 2)]
    n_dso: usize,
    #[arg(long, default_value_t = casegen::RANDOM_CASE_SEED)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CaseKind {
    FiveBus,
    TwoBus,
    Uncongested,
    Tight,
    SixBusRadial,
    Random,
    /// Every bundled case into one directory.
    Bundled,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Soc,
    Ind,
    Cap,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Soc => PolicyKind::Soc,
            PolicyArg::Ind => PolicyKind::Ind,
            PolicyArg::Cap => PolicyKind::Cap,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SocArg {
    Native,
    Polygon,
}

/// Runs the CLI and returns the process exit code.
pub fn cli_run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Clear(a) => run_clear(&a),
        Command::CompareGrid(a) => run_compare_grid(&a),
        Command::ComparePolicies(a) => run_compare_policies(&a),
        Command::SweepChi { run, steps } => run_sweep_chi(&run, steps),
        Command::Admm(a) => run_admm(&a),
        Command::Generate(a) => run_generate(&a),
    }
}

/// A loaded case with command-line overrides applied.
struct Session {
    case: LoadedCase,
    options: ClearingOptions,
    policy: PolicyDescriptor,
    seed: u64,
    out_dir: PathBuf,
    started: Instant,
}

impl Session {
    fn open(a: &RunArgs) -> Result<Self> {
        let path = a
            .case_path
            .as_ref()
            .or(a.case_flag.as_ref())
            .ok_or_else(|| Error::Config("no case file given".into()))?;
        let case = load_case(path)?;
        let mut options = case.options;
        options.grid &= !a.no_grid;
        options.losses &= !a.no_losses;
        if let Some(m) = a.soc_mode {
            options.soc_mode = match m {
                SocArg::Native => SocMode::Native,
                SocArg::Polygon => SocMode::Polygon,
            };
        }
        if let Some(c) = a.cuts {
            options.cuts = c;
        }
        if let Some(t) = a.tol {
            options.tolerances.tol = t;
        }
        if let Some(m) = a.max_iter {
            options.tolerances.max_iter = m;
        }
        let policy = match (a.policy, a.chi) {
            (None, None) => case.policy,
            (kind, chi) => PolicyDescriptor::new(kind.map_or(case.policy.kind, PolicyKind::from), chi.or(case.file.policy.chi.filter(|_| kind.is_none()))),
        };
        if !(0.0..=1.0).contains(&policy.chi) {
            return Err(Error::Config(format!("chi must lie in [0, 1], got {}", policy.chi)));
        }
        std::fs::create_dir_all(&a.out_dir)?;
        Ok(Session {
            seed: a.seed.unwrap_or(case.file.seed),
            case,
            options: options.normalized(),
            policy,
            out_dir: a.out_dir.clone(),
            started: Instant::now(),
        })
    }

    fn allocation(&self, policy: PolicyDescriptor) -> Result<Option<AllocationMatrix>> {
        if !self.options.losses {
            return Ok(None);
        }
        let grid = &self.case.grid;
        let tf = build_modified_tf(grid, &build_ptdf(grid)?)?;
        Ok(Some(build_policy(grid, &self.case.agents, &self.case.graph, &tf, policy)?))
    }

    fn market<'a>(&'a self, allocation: Option<&'a AllocationMatrix>) -> Market<'a> {
        Market {
            grid: &self.case.grid,
            agents: &self.case.agents,
            graph: &self.case.graph,
            allocation,
        }
    }

    fn clear_with(&self, options: ClearingOptions, allocation: Option<&AllocationMatrix>) -> Result<ClearingSolution> {
        let problem = assemble(&self.market(allocation), options)?;
        Ok(solve(&problem, options.backend().as_ref()))
    }

    /// Losses-off clearing that defines the reference payments.
    fn reference(&self) -> Result<Option<ClearingSolution>> {
        if !self.options.losses {
            return Ok(None);
        }
        let options = ClearingOptions {
            losses: false,
            ..self.options
        };
        let sol = self.clear_with(options, None)?;
        Ok(sol.is_optimal().then_some(sol))
    }

    fn record(&self, command: &str, summary: Option<SolutionSummary>, settlement: Option<SettlementReport>, extra: serde_json::Value) -> Result<()> {
        write_run_record(
            &self.out_dir,
            &RunRecord {
                command: command.into(),
                case: self.case.file.name.clone(),
                case_hash: self.case.hash.clone(),
                seed: self.seed,
                options: self.options,
                policy: self.policy,
                summary,
                settlement,
                extra,
                elapsed_ms: self.started.elapsed().as_millis(),
            },
        )
    }

    fn out(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }
}

fn report_failure(session: &Session, command: &str, solution: &ClearingSolution) -> Result<i32> {
    eprintln!("clearing ended with status {}", solution.status);
    if !solution.conflict.is_empty() {
        eprintln!("conflicting constraints: {}", solution.conflict.join(", "));
    }
    let lines = line_loading(solution, &session.case.grid).unwrap_or_default();
    session.record(
        command,
        Some(SolutionSummary::new(solution, &lines)),
        None,
        serde_json::json!({ "conflict": solution.conflict }),
    )?;
    Ok(match solution.status {
        Status::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_NOT_SOLVED,
    })
}

fn write_solution(session: &Session, solution: &ClearingSolution, report: &SettlementReport) -> Result<()> {
    write_settlement(&session.out("settlement.csv"), report)?;
    write_lines(&session.out("lines.csv"), &report.lines)?;
    write_trades(&session.out("trades.csv"), solution)?;
    write_prices(&session.out("prices.json"), &extract_prices(solution)?)
}

fn run_clear(a: &RunArgs) -> Result<i32> {
    let s = Session::open(a)?;
    let allocation = s.allocation(s.policy)?;
    let solution = s.clear_with(s.options, allocation.as_ref())?;
    if !solution.is_optimal() {
        return report_failure(&s, "clear", &solution);
    }
    let reference = s.reference()?;
    let report = settle(&s.market(allocation.as_ref()), &solution, reference.as_ref())?;
    write_solution(&s, &solution, &report)?;
    let summary = SolutionSummary::new(&solution, &report.lines);
    println!(
        "{}: {} objective {:.6} losses {:.6} MW money imbalance {:.2e}",
        s.case.file.name, solution.status, solution.objective, summary.total_losses, report.ledger.relative_imbalance
    );
    s.record("clear", Some(summary), Some(report), serde_json::Value::Null)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct GridPriceRow<'a> {
    agent: &'a str,
    pi_grid: f64,
    pi_no_grid: f64,
    delta: f64,
}

#[derive(Serialize)]
struct GridLineRow<'a> {
    line: &'a str,
    loading_grid: f64,
    loading_no_grid: f64,
}

fn run_compare_grid(a: &RunArgs) -> Result<i32> {
    let s = Session::open(a)?;
    let allocation = s.allocation(s.policy)?;
    let with = s.clear_with(ClearingOptions { grid: true, ..s.options }.normalized(), allocation.as_ref())?;
    let without = s.clear_with(ClearingOptions { grid: false, ..s.options }.normalized(), None)?;
    for sol in [&with, &without] {
        if !sol.is_optimal() {
            return report_failure(&s, "compare-grid", sol);
        }
    }
    let (dw, dn) = (with.duals()?, without.duals()?);
    let mut w = csv::Writer::from_path(s.out("compare_grid_prices.csv"))?;
    for (i, agent) in with.labels.agents.iter().enumerate() {
        w.serialize(GridPriceRow {
            agent,
            pi_grid: dw.pi[i],
            pi_no_grid: dn.pi[i],
            delta: dw.pi[i] - dn.pi[i],
        })?;
    }
    w.flush()?;
    let (lw, ln) = (line_loading(&with, &s.case.grid)?, line_loading(&without, &s.case.grid)?);
    let mut w = csv::Writer::from_path(s.out("compare_grid_lines.csv"))?;
    for (x, y) in lw.iter().zip(&ln) {
        w.serialize(GridLineRow {
            line: &x.line,
            loading_grid: x.loading,
            loading_no_grid: y.loading,
        })?;
    }
    w.flush()?;
    let overloaded: Vec<&str> = ln.iter().filter(|l| l.loading > 1.0 + 1e-6).map(|l| l.line.as_str()).collect();
    println!("lines overloaded without the grid: {}", if overloaded.is_empty() { "none".to_string() } else { overloaded.join(", ") });
    s.record(
        "compare-grid",
        Some(SolutionSummary::new(&with, &lw)),
        None,
        serde_json::json!({ "overloaded_without_grid": overloaded, "objective_without_grid": without.objective }),
    )?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct PolicyRow<'a> {
    policy: &'a str,
    chi: Option<f64>,
    agent: &'a str,
    bus: &'a str,
    capacity: f64,
    energy: f64,
    payment: f64,
    delta: Option<f64>,
    delta_pct: Option<f64>,
    losses: f64,
    distance: Option<f64>,
}

/// Net traded energy |Σ_j t_ij| per agent.
fn traded_energy(solution: &ClearingSolution) -> Vec<f64> {
    let mut v = vec![0.0; solution.labels.agents.len()];
    for (k, &(i, _)) in solution.labels.trades.iter().enumerate() {
        v[i] += solution.t[k];
    }
    v.iter().map(|x| x.abs()).collect()
}

/// Clears under each descriptor and writes one long table.
fn policy_table(s: &Session, file: &str, runs: &[(&str, PolicyDescriptor)]) -> Result<Option<i32>> {
    if !s.options.losses {
        return Err(Error::Config("policy comparisons need losses enabled".into()));
    }
    let reference = s
        .reference()?
        .ok_or_else(|| Error::Solver("reference clearing without losses failed".into()))?;
    let mut w = csv::Writer::from_path(s.out(file))?;
    let ref_payments = payments(&reference)?;
    let ref_traded = traded_energy(&reference);
    for (i, agent) in s.case.agents.iter().enumerate() {
        w.serialize(PolicyRow {
            policy: "reference",
            chi: None,
            agent: &agent.id,
            bus: &s.case.grid.buses[agent.bus].id,
            capacity: agent.capacity(),
            energy: ref_traded[i],
            payment: ref_payments[i],
            delta: Some(0.0),
            delta_pct: Some(0.0),
            losses: 0.0,
            distance: None,
        })?;
    }
    for &(name, descriptor) in runs {
        let allocation = s.allocation(descriptor)?;
        let sol = s.clear_with(s.options, allocation.as_ref())?;
        if !sol.is_optimal() {
            return report_failure(s, name, &sol).map(Some);
        }
        let report = settle(&s.market(allocation.as_ref()), &sol, Some(&reference))?;
        let traded = traded_energy(&sol);
        for (i, a) in report.agents.iter().enumerate() {
            w.serialize(PolicyRow {
                policy: name,
                chi: Some(descriptor.chi),
                agent: &a.agent,
                bus: &a.bus,
                capacity: s.case.agents[i].capacity(),
                energy: traded[i],
                payment: a.payment,
                delta: a.delta,
                delta_pct: a.delta_pct,
                losses: a.losses,
                distance: a.distance,
            })?;
        }
    }
    w.flush()?;
    Ok(None)
}

fn run_compare_policies(a: &RunArgs) -> Result<i32> {
    let s = Session::open(a)?;
    let runs = [
        ("soc", PolicyDescriptor::new(PolicyKind::Soc, None)),
        ("ind", PolicyDescriptor::new(PolicyKind::Ind, None)),
        ("cap", PolicyDescriptor::new(PolicyKind::Cap, None)),
    ];
    if let Some(code) = policy_table(&s, "policies.csv", &runs)? {
        return Ok(code);
    }
    println!("wrote {}", s.out("policies.csv").display());
    s.record("compare-policies", None, None, serde_json::Value::Null)?;
    Ok(EXIT_OK)
}

fn run_sweep_chi(a: &RunArgs, steps: usize) -> Result<i32> {
    let s = Session::open(a)?;
    if steps < 2 {
        return Err(Error::Config("a chi sweep needs at least 2 steps".into()));
    }
    let kind = if s.policy.kind == PolicyKind::Soc { PolicyKind::Ind } else { s.policy.kind };
    let names: Vec<String> = (0..steps).map(|k| format!("chi={}", k as f64 / (steps - 1) as f64)).collect();
    let runs: Vec<(&str, PolicyDescriptor)> = names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.as_str(), PolicyDescriptor::new(kind, Some(k as f64 / (steps - 1) as f64))))
        .collect();
    if let Some(code) = policy_table(&s, "sweep_chi.csv", &runs)? {
        return Ok(code);
    }
    println!("wrote {}", s.out("sweep_chi.csv").display());
    s.record("sweep-chi", None, None, serde_json::json!({ "steps": steps }))?;
    Ok(EXIT_OK)
}

fn run_admm(a: &RunArgs) -> Result<i32> {
    let s = Session::open(a)?;
    let mut options = s.case.admm;
    if let Some(rho) = a.rho {
        options.rho = rho;
    }
    let allocation = s.allocation(s.policy)?;
    let problem = assemble(&s.market(allocation.as_ref()), s.options)?;
    let central = solve(&problem, s.options.backend().as_ref());
    let outcome = admm::run(&problem, &options)?;
    write_admm_log(&s.out("admm_log.csv"), &outcome.state.history)?;
    let sol = &outcome.solution;
    let last = outcome.state.history.last().copied();
    let mut extra = serde_json::json!({
        "admm": options,
        "converged": outcome.converged,
        "iterations": outcome.state.iteration,
        "final_primal": last.map(|h| h.primal),
        "final_dual": last.map(|h| h.dual),
    });
    if central.is_optimal() && sol.is_optimal() {
        let (dc, da) = (central.duals()?, sol.duals()?);
        let price_gap = dc
            .tau_t
            .iter()
            .zip(&da.tau_t)
            .chain(dc.tau_z.iter().zip(&da.tau_z))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        extra["objective_gap"] = serde_json::json!((sol.objective - central.objective).abs() / (1.0 + central.objective.abs()));
        extra["trade_price_gap"] = serde_json::json!(price_gap);
    }
    println!(
        "admm: {} after {} rounds{}",
        if outcome.converged { "converged" } else { "stopped" },
        outcome.state.iteration,
        last.map_or(String::new(), |h| format!(", residuals {:.2e}/{:.2e}", h.primal, h.dual))
    );
    let code = if !outcome.converged {
        EXIT_NOT_SOLVED
    } else {
        let report = settle(&s.market(allocation.as_ref()), sol, None)?;
        write_solution(&s, sol, &report)?;
        s.record("admm", Some(SolutionSummary::new(sol, &report.lines)), Some(report), extra.clone())?;
        return Ok(EXIT_OK);
    };
    s.record("admm", None, None, extra)?;
    Ok(code)
}

fn write_case(path: &Path, case: &crate::io::CaseFile) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, case.to_json())?;
    Ok(())
}

fn run_generate(a: &GenerateArgs) -> Result<i32> {
    let case = match a.kind {
        CaseKind::FiveBus => casegen::five_bus(),
        CaseKind::TwoBus => casegen::two_bus(),
        CaseKind::Uncongested => casegen::uncongested(),
        CaseKind::Tight => casegen::tight(),
        CaseKind::SixBusRadial => casegen::six_bus_radial(),
        CaseKind::Random => casegen::random_case(a.n_tso_bus, a.n_dso, a.seed)?,
        CaseKind::Bundled => {
            for (name, case) in casegen::bundled() {
                write_case(&a.out.join(format!("{name}.json")), &case)?;
            }
            println!("wrote bundled cases to {}", a.out.display());
            return Ok(EXIT_OK);
        }
    };
    write_case(&a.out, &case)?;
    println!("wrote {}", a.out.display());
    Ok(EXIT_OK)
}
