//! The `run`, `verify` and `clear` subcommands. Each returns its process
//! exit code; messages go to stderr, reports to stdout.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Deserialize;
use tdm_core::cases::{compare_cases, grid_search_oracle, run_cases, Case, CaseConfig, OracleGame};
use tdm_core::distribution::{build_lindistflow, clear_distribution, kkt_residuals_distribution, ConeMode};
use tdm_core::error::SolveError;
use tdm_core::mpec::{build_joint_mpec, price_taker_starts, solve_multistart, MpecInput};
use tdm_core::network::{Demand, DistributionNetwork, InterfaceLink, StrategicUnit, TransmissionNetwork};
use tdm_core::risk::CvarFormula;
use tdm_core::wholesale::{build_dcopf, clear_wholesale, kkt_residuals_wholesale};
use tdm_nlp::SolverOptions;

use crate::config::Experiment;
use crate::output::{fmt_num, run_artifacts, write_run, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Offers closer to zero than this are printed as zero by `clear`.
const DISPATCH_FLOOR: f64 = 1e-7;

fn input_error(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    EXIT_INPUT
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub case: String,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub cvar_formula: Option<CvarFormula>,
    pub jobs: usize,
}

pub fn parse_cases(s: &str) -> Result<Vec<Case>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(Case::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',') {
        let c: Case = part.parse()?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    let mut exp = match Experiment::load(&args.config) {
        Ok(e) => e,
        Err(e) => return input_error(format!("{e:#}")),
    };
    let cases = match parse_cases(&args.case) {
        Ok(c) => c,
        Err(e) => return input_error(e),
    };
    if let Some(seed) = args.seed {
        exp.seed = seed;
    }
    if let Some(eps) = args.epsilon {
        exp.template.epsilon = eps;
    }
    if let Some(f) = args.cvar_formula {
        exp.template.cvar_formula = f;
    }
    let cfgs: Vec<CaseConfig> = cases
        .iter()
        .map(|&case| CaseConfig {
            case,
            ..exp.template.clone()
        })
        .collect();
    for c in &cfgs {
        if let Err(e) = c.validate(&exp.data) {
            return input_error(e);
        }
    }
    info!("running cases {:?} on {} thread(s)", cases, args.jobs);
    let results = match run_cases(&exp.data, &cfgs, args.jobs) {
        Ok(r) => r,
        Err(e) => return input_error(e),
    };
    let comparison = if results.len() > 1 {
        match compare_cases(&results) {
            Ok(rows) => Some(rows),
            Err(e) => return input_error(e),
        }
    } else {
        None
    };
    let artifacts = run_artifacts(&results, comparison.as_deref(), &exp.data.sys);
    let manifest = match write_run(&args.out, &exp, &results, &artifacts) {
        Ok(p) => p,
        Err(e) => return input_error(format!("{e:#}")),
    };

    let mut partial = false;
    for r in &results {
        let t = r.totals();
        println!(
            "case {} ({}): revenue {} profit {} wholesale share {}",
            r.label,
            r.game.label(),
            fmt_num(t.revenue()),
            fmt_num(t.profit()),
            fmt_num(t.wm_share())
        );
        for s in r.failed_seasons() {
            partial = true;
            eprintln!(
                "warning: case {} season {} failed: {}",
                r.label,
                s.season,
                s.error.as_deref().unwrap_or("unknown error")
            );
        }
    }
    println!("manifest: {}", manifest.display());
    if partial {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

/// Outcome of comparing the MPEC with the grid oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub hours: Vec<usize>,
    pub oracle_profit: f64,
    pub mpec_profit: f64,
    pub lipschitz: f64,
    pub step: f64,
    pub complementarity: f64,
}

impl VerifyReport {
    /// Oracle optimum minus MPEC profit; negative when the MPEC does better.
    pub fn gap(&self) -> f64 {
        self.oracle_profit - self.mpec_profit
    }

    pub fn tolerance(&self) -> f64 {
        self.lipschitz * self.step
    }

    pub fn passed(&self) -> bool {
        self.mpec_profit >= self.oracle_profit - self.tolerance() - 1e-9 && self.complementarity <= 1e-8
    }
}

/// Solve the joint game of the first season of `instance` both ways.
pub fn verify(instance: &Path, step: f64) -> Result<VerifyReport> {
    if !(step > 0.0) || !step.is_finite() {
        bail!("grid step must be a positive number of MW, got {step}");
    }
    let exp = Experiment::load(instance)?;
    let season = match exp.template.seasons.first() {
        Some(name) => exp.data.season(name).with_context(|| format!("unknown season '{name}'"))?,
        None => &exp.data.seasons[0],
    };
    let hours: Vec<usize> = match &exp.template.hours {
        Some(h) => h.clone(),
        None => (0..season.demand.hours()).collect(),
    };
    let sys = &exp.data.sys;
    let opts = SolverOptions::default();
    let mode = ConeMode::Polyhedral(exp.template.sides);
    let oracle = grid_search_oracle(sys, &season.demand, &hours, OracleGame::Joint, step, mode, &opts)?;
    let input = MpecInput::new(sys, &season.demand, &hours, exp.template.sides);
    let m = build_joint_mpec(input, None)?;
    let starts = price_taker_starts(&m, input, None, None, &opts)?;
    let sol = solve_multistart(&m, &exp.template.schedule, &starts, &opts);
    Ok(VerifyReport {
        hours,
        oracle_profit: oracle.profit,
        mpec_profit: sol.objective,
        lipschitz: oracle.lipschitz,
        step,
        complementarity: sol.complementarity,
    })
}

pub fn cmd_verify(instance: &Path, step: f64) -> i32 {
    let rep = match verify(instance, step) {
        Ok(r) => r,
        Err(e) => return input_error(format!("{e:#}")),
    };
    println!("hours: {:?}", rep.hours);
    println!("oracle profit: {}", fmt_num(rep.oracle_profit));
    println!("mpec profit: {}", fmt_num(rep.mpec_profit));
    println!("lipschitz bound: {} per MW", fmt_num(rep.lipschitz));
    println!("gap: {} (allowed {})", fmt_num(rep.gap()), fmt_num(rep.tolerance()));
    println!("complementarity: {}", fmt_num(rep.complementarity));
    if rep.passed() {
        println!("verify: pass");
        EXIT_OK
    } else {
        println!("verify: fail");
        EXIT_PARTIAL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketKind {
    Wm,
    Dm,
}

#[derive(Debug, Clone)]
pub struct ClearArgs {
    pub market: MarketKind,
    pub network: PathBuf,
    pub demand: PathBuf,
    pub offer: Option<PathBuf>,
    pub out: PathBuf,
    /// Price paid at the feeder root; without it the feeder must balance
    /// on local generation.
    pub substation_price: Option<f64>,
    pub substation_capacity: f64,
    /// Polygon sides for the feeder limit; exact cone when absent.
    pub sides: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct OfferRow {
    unit: String,
    bus: usize,
    cost: f64,
    hour: usize,
    mw: f64,
}

/// Strategic units and their offers `[unit][hour]` from a CSV with the
/// columns `unit,bus,cost,hour,mw`.
fn read_offers(path: &Path, hours: usize, dist: bool) -> Result<(Vec<StrategicUnit>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read offers {}", path.display()))?;
    let mut units: BTreeMap<String, (usize, f64, Vec<f64>)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<OfferRow>().enumerate() {
        let row = row.with_context(|| format!("{}: bad offer row {}", path.display(), i + 2))?;
        if row.hour >= hours {
            bail!("{}: offer for hour {} beyond the demand horizon", path.display(), row.hour);
        }
        if !(row.mw >= 0.0) {
            bail!("{}: negative offer {} MW for unit {}", path.display(), row.mw, row.unit);
        }
        let entry = units
            .entry(row.unit.clone())
            .or_insert_with(|| (row.bus, row.cost, vec![0.0; hours]));
        if entry.0 != row.bus || entry.1 != row.cost {
            bail!("{}: unit {} changes bus or cost between rows", path.display(), row.unit);
        }
        entry.2[row.hour] = row.mw;
    }
    let mut out_units = Vec::new();
    let mut offers = Vec::new();
    for (name, (bus, cost, q)) in units {
        out_units.push(StrategicUnit {
            name,
            trans_bus: if dist { 0 } else { bus },
            dist_bus: if dist { bus } else { 0 },
            cost,
            g_min: 0.0,
            g_max: q.iter().cloned().fold(0.0, f64::max),
        });
        offers.push(q);
    }
    Ok((out_units, offers))
}

fn snap(x: f64) -> f64 {
    if x.abs() < DISPATCH_FLOOR {
        0.0
    } else {
        x
    }
}

fn infeasible(e: &SolveError) -> Option<i32> {
    match e {
        SolveError::Infeasible { rows } => {
            eprintln!("error: the market is infeasible");
            let shown: Vec<&str> = rows.iter().take(10).map(String::as_str).collect();
            eprintln!("violated rows: {}", shown.join(", "));
            if rows.len() > shown.len() {
                eprintln!("... and {} more", rows.len() - shown.len());
            }
            Some(EXIT_INFEASIBLE)
        }
        _ => None,
    }
}

fn write_table(dir: &Path, name: &str, t: &Table) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, t.to_bytes()).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

pub fn cmd_clear(args: &ClearArgs) -> i32 {
    match clear(args) {
        Ok(code) => code,
        Err(e) => input_error(format!("{e:#}")),
    }
}

fn clear(args: &ClearArgs) -> Result<i32> {
    let opts = SolverOptions::default();
    let mut prices = Table::new(&["hour", "bus", "price"]);
    let mut dispatch = Table::new(&["hour", "generator", "mw"]);
    let residual;
    match args.market {
        MarketKind::Wm => {
            let net = TransmissionNetwork::load(&args.network)?;
            let ids: Vec<usize> = net.buses.iter().map(|b| b.id).collect();
            let demand = Demand::from_csv(&args.demand, &ids)?;
            let nt = demand.hours();
            let (units, offers) = match &args.offer {
                Some(p) => read_offers(p, nt, false)?,
                None => (Vec::new(), Vec::new()),
            };
            let links = net.interfaces.clone();
            let flows = vec![vec![0.0; nt]; links.len()];
            let hours: Vec<usize> = (0..nt).collect();
            let prog = build_dcopf(&net, &demand, &units, &links, &offers, &flows, &hours)?;
            let res = match clear_wholesale(&prog, &opts) {
                Ok(r) => r,
                Err(e) => return infeasible(&e).map_or_else(|| Err(e.into()), Ok),
            };
            residual = kkt_residuals_wholesale(&prog, &res)?.max();
            for (pos, &t) in hours.iter().enumerate() {
                for (b, id) in ids.iter().enumerate() {
                    prices.push(vec![t.to_string(), id.to_string(), fmt_num(res.lmp[b][pos])]);
                }
                let names = net.generators.iter().map(|g| &g.name).chain(units.iter().map(|u| &u.name));
                let values = res.dispatch.iter().chain(&res.strategic).map(|row| row[pos]);
                for (name, v) in names.zip(values) {
                    dispatch.push(vec![t.to_string(), name.clone(), fmt_num(snap(v))]);
                }
            }
        }
        MarketKind::Dm => {
            let net = DistributionNetwork::load(&args.network)?;
            let ids: Vec<usize> = net.buses.iter().map(|b| b.id).collect();
            let demand = Demand::from_csv(&args.demand, &ids)?;
            let nt = demand.hours();
            let (units, offers) = match &args.offer {
                Some(p) => read_offers(p, nt, true)?,
                None => (Vec::new(), Vec::new()),
            };
            let (links, price) = match args.substation_price {
                Some(p) => (
                    vec![InterfaceLink {
                        trans_bus: 0,
                        dist_bus: net.root,
                        f_max: args.substation_capacity,
                    }],
                    vec![vec![p; nt]],
                ),
                None => (Vec::new(), Vec::new()),
            };
            let mode = args.sides.map_or(ConeMode::Exact, ConeMode::Polyhedral);
            let hours: Vec<usize> = (0..nt).collect();
            let prog = build_lindistflow(&net, &demand, &units, &links, &offers, &price, &hours, mode)?;
            let res = match clear_distribution(&prog, &opts) {
                Ok(r) => r,
                Err(e) => return infeasible(&e).map_or_else(|| Err(e.into()), Ok),
            };
            residual = kkt_residuals_distribution(&prog, &res)?.max();
            let mut volts = Table::new(&["hour", "bus", "voltage"]);
            for (pos, &t) in hours.iter().enumerate() {
                for (b, id) in ids.iter().enumerate() {
                    prices.push(vec![t.to_string(), id.to_string(), fmt_num(res.dlmp[b][pos])]);
                    volts.push(vec![t.to_string(), id.to_string(), fmt_num(res.voltage[b][pos])]);
                }
                let names = net.generators.iter().map(|g| &g.name).chain(units.iter().map(|u| &u.name));
                let values = res.dispatch_p.iter().chain(&res.strategic).map(|row| row[pos]);
                for (name, v) in names.zip(values) {
                    dispatch.push(vec![t.to_string(), name.clone(), fmt_num(snap(v))]);
                }
                for (k, row) in res.link_flow.iter().enumerate() {
                    dispatch.push(vec![t.to_string(), format!("substation_{k}"), fmt_num(snap(row[pos]))]);
                }
            }
            write_table(&args.out, "voltages.csv", &volts)?;
        }
    }
    let p = write_table(&args.out, "prices.csv", &prices)?;
    let d = write_table(&args.out, "dispatch.csv", &dispatch)?;
    println!("prices: {}", p.display());
    println!("dispatch: {}", d.display());
    println!("kkt residual: {}", fmt_num(residual));
    if residual > 1e-6 {
        warn!("KKT residual {residual:e} above 1e-6");
    }
    Ok(EXIT_OK)
}
