//! End-to-end market cases over seasonal representative days, revenue
//! accounting, cross-case comparison and the brute-force offer oracle.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use tdm_nlp::SolverOptions;

use crate::coupled::{clear_coupled, SystemDemand};
use crate::distribution::{build_lindistflow, clear_distribution, ConeMode};
use crate::error::{ModelError, SolveError};
use crate::mpec::{
    build_joint_mpec, build_sequential_phase1, build_sequential_phase2, phase1_price, price_taker_starts,
    solve_multistart, Mpec, MpecInput, MpecSolution, Phase1Revenue, Schedule, StationarityClass, TraceRow,
};
use crate::network::{CoupledSystem, TariffSchedule};
use crate::risk::{validate_epsilon, CvarFormula, PriceHistory, RiskMeasure, RiskSpec};
use crate::wholesale::{build_dcopf, clear_wholesale};

/// The four market designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Case {
    /// Joint clearing with market-priced distribution revenue.
    A,
    /// Joint clearing with distribution revenue at the regulated tariff.
    B,
    /// Sequential clearing with a chance-constrained revenue proxy.
    C,
    /// Sequential clearing with a CVaR revenue proxy.
    D,
}

impl Case {
    pub const ALL: [Case; 4] = [Case::A, Case::B, Case::C, Case::D];

    pub fn as_str(&self) -> &'static str {
        match self {
            Case::A => "A",
            Case::B => "B",
            Case::C => "C",
            Case::D => "D",
        }
    }

    pub fn game(&self) -> Game {
        match self {
            Case::A => Game::Joint,
            Case::B => Game::JointRegulated,
            Case::C => Game::Sequential(RiskMeasure::Cc),
            Case::D => Game::Sequential(RiskMeasure::Cvar),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Case::A),
            "B" => Ok(Case::B),
            "C" => Ok(Case::C),
            "D" => Ok(Case::D),
            other => Err(ModelError::invariant(format!("unknown case '{other}' (expected A, B, C or D)"))),
        }
    }
}

/// How the producer's offers are cleared and paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Game {
    Joint,
    JointRegulated,
    Sequential(RiskMeasure),
    SequentialRegulated,
}

impl Game {
    pub fn label(&self) -> &'static str {
        match self {
            Game::Joint => "joint",
            Game::JointRegulated => "joint-regulated",
            Game::Sequential(RiskMeasure::Cc) => "sequential-cc",
            Game::Sequential(RiskMeasure::Cvar) => "sequential-cvar",
            Game::SequentialRegulated => "sequential-regulated",
        }
    }

    fn needs_tariff(&self) -> bool {
        matches!(self, Game::JointRegulated | Game::SequentialRegulated)
    }
}

/// A representative day.
#[derive(Debug, Clone, PartialEq)]
pub struct Season {
    pub name: String,
    pub demand: SystemDemand,
}

/// Everything a case run reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sys: CoupledSystem,
    pub seasons: Vec<Season>,
    pub tariff: Option<TariffSchedule>,
    pub history: Option<PriceHistory>,
}

impl Dataset {
    pub fn horizon(&self) -> usize {
        self.seasons.iter().map(|s| s.demand.hours()).max().unwrap_or(0)
    }

    /// Gaussian price model of every distribution bus and hour, fitted to
    /// the price history.
    pub fn risk_spec(&self, epsilon: f64, measure: RiskMeasure, cvar_formula: CvarFormula) -> Result<RiskSpec, ModelError> {
        let hist = self
            .history
            .as_ref()
            .ok_or_else(|| ModelError::invariant("risk-aware cases need a distribution price history"))?;
        let ids: Vec<usize> = self.sys.dist.buses.iter().map(|b| b.id).collect();
        let (mean, sigma) = hist.fit(&ids, self.horizon())?;
        let spec = RiskSpec {
            mean,
            sigma,
            epsilon,
            measure,
            cvar_formula,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Hourly tariff equal to the mean historical price at the producer's
    /// distribution bus.
    pub fn mean_price_tariff(&self, spec: &RiskSpec) -> Result<TariffSchedule, ModelError> {
        let units = self.sys.units();
        let first = units.first().ok_or_else(|| ModelError::invariant("no strategic unit"))?;
        if units.iter().any(|u| u.dist_bus != first.dist_bus) {
            return Err(ModelError::invariant(
                "a single mean-price schedule needs every strategic unit on one distribution bus",
            ));
        }
        let b = self.sys.dist.bus_index(first.dist_bus).expect("validated unit");
        TariffSchedule::new(spec.mean[b].clone())
    }

    pub fn season(&self, name: &str) -> Option<&Season> {
        self.seasons.iter().find(|s| s.name == name)
    }
}

/// Settings of one case run.
#[derive(Debug, Clone)]
pub struct CaseConfig {
    pub case: Case,
    /// Seasons to run; empty means all.
    pub seasons: Vec<String>,
    /// Hours of each day to run; `None` means the whole day.
    pub hours: Option<Vec<usize>>,
    pub epsilon: f64,
    pub cvar_formula: CvarFormula,
    pub schedule: Schedule,
    /// Facets of the polyhedral feeder limit inside the MPECs.
    pub sides: usize,
    pub solver: SolverOptions,
}

impl CaseConfig {
    pub fn new(case: Case) -> Self {
        CaseConfig {
            case,
            seasons: Vec::new(),
            hours: None,
            epsilon: 0.05,
            cvar_formula: CvarFormula::default(),
            schedule: Schedule::default(),
            sides: 12,
            solver: SolverOptions::default(),
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<(), ModelError> {
        self.validate_game(data, self.case.game())
    }

    fn validate_game(&self, data: &Dataset, game: Game) -> Result<(), ModelError> {
        validate_epsilon(self.epsilon)?;
        self.schedule.validate()?;
        if self.sides < 4 {
            return Err(ModelError::invariant("the polyhedral feeder limit needs at least 4 sides"));
        }
        if game.needs_tariff() {
            let tar = data
                .tariff
                .as_ref()
                .ok_or_else(|| ModelError::invariant(format!("case {} needs a tariff file", self.case)))?;
            if tar.price.len() < data.horizon() {
                return Err(ModelError::invariant("tariff does not cover the whole day"));
            }
        }
        if matches!(game, Game::Sequential(_)) && data.history.is_none() {
            return Err(ModelError::invariant(format!("case {} needs a price history file", self.case)));
        }
        for s in &self.seasons {
            if data.season(s).is_none() {
                return Err(ModelError::invariant(format!("unknown season '{s}'")));
            }
        }
        if let Some(hours) = &self.hours {
            if let Some(&t) = hours.iter().find(|&&t| t >= data.horizon()) {
                return Err(ModelError::invariant(format!("hour {t} is beyond the day")));
            }
        }
        Ok(())
    }

    fn selected<'d>(&self, data: &'d Dataset) -> Vec<&'d Season> {
        if self.seasons.is_empty() {
            data.seasons.iter().collect()
        } else {
            self.seasons.iter().filter_map(|s| data.season(s)).collect()
        }
    }

    fn hours_of(&self, season: &Season) -> Vec<usize> {
        match &self.hours {
            Some(h) => h.iter().copied().filter(|&t| t < season.demand.hours()).collect(),
            None => (0..season.demand.hours()).collect(),
        }
    }
}

/// One MPEC solve, kept for the archives.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub phase: String,
    pub objective: f64,
    pub class: StationarityClass,
    pub complementarity: f64,
    pub feasibility: f64,
    pub start: String,
    pub trace: Vec<TraceRow>,
    pub nlp_log: String,
    pub kkt_max: f64,
    pub kkt_dump: String,
    pub seconds: f64,
}

/// Market outcome of one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct HourRecord {
    pub hour: usize,
    /// Per strategic unit.
    pub offer_t: Vec<f64>,
    pub offer_d: Vec<f64>,
    pub wm_price: Vec<f64>,
    pub dm_price: Vec<f64>,
    /// Mean historical price at each unit's distribution bus (sequential games).
    pub dm_mean_price: Option<Vec<f64>>,
    /// Per transmission bus.
    pub lmp: Vec<f64>,
    /// Per distribution bus.
    pub dlmp: Vec<f64>,
    pub voltage: Vec<f64>,
    /// Per conventional generator, then per strategic unit.
    pub dispatch_wm: Vec<f64>,
    pub strategic_wm: Vec<f64>,
    pub flows_wm: Vec<f64>,
    pub dispatch_dm: Vec<f64>,
    pub strategic_dm: Vec<f64>,
    pub link_flow: Vec<f64>,
    pub wm_revenue: f64,
    pub wm_profit: f64,
    pub dm_revenue: f64,
    pub dm_profit: f64,
    pub dm_revenue_mean: Option<f64>,
    pub dm_profit_mean: Option<f64>,
    /// Largest gap between reported profits and MPEC objectives.
    pub accounting_gap: f64,
    pub solves: Vec<SolveRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonResult {
    pub season: String,
    pub hours: Vec<HourRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseResult {
    pub label: String,
    pub game: Game,
    /// Identifies the data and hours the case ran on.
    pub data_key: String,
    pub seasons: Vec<SeasonResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Market {
    Wm,
    Dm,
}

impl Market {
    pub fn as_str(&self) -> &'static str {
        match self {
            Market::Wm => "WM",
            Market::Dm => "DM",
        }
    }
}

/// Revenue and profit of one market in one season.
#[derive(Debug, Clone, PartialEq)]
pub struct RevenueRow {
    pub case: String,
    pub season: String,
    pub market: Market,
    pub revenue: f64,
    pub profit: f64,
    /// Distribution revenue and profit at the mean historical price.
    pub revenue_at_mean: Option<f64>,
    pub profit_at_mean: Option<f64>,
}

impl CaseResult {
    pub fn failed_seasons(&self) -> Vec<&SeasonResult> {
        self.seasons.iter().filter(|s| s.error.is_some()).collect()
    }

    pub fn revenue_rows(&self) -> Vec<RevenueRow> {
        let mut rows = Vec::new();
        for s in &self.seasons {
            let sum = |f: &dyn Fn(&HourRecord) -> f64| s.hours.iter().map(f).sum::<f64>();
            let sum_opt = |f: &dyn Fn(&HourRecord) -> Option<f64>| -> Option<f64> {
                s.hours.iter().map(f).sum::<Option<f64>>()
            };
            rows.push(RevenueRow {
                case: self.label.clone(),
                season: s.season.clone(),
                market: Market::Wm,
                revenue: sum(&|h| h.wm_revenue),
                profit: sum(&|h| h.wm_profit),
                revenue_at_mean: None,
                profit_at_mean: None,
            });
            rows.push(RevenueRow {
                case: self.label.clone(),
                season: s.season.clone(),
                market: Market::Dm,
                revenue: sum(&|h| h.dm_revenue),
                profit: sum(&|h| h.dm_profit),
                revenue_at_mean: sum_opt(&|h| h.dm_revenue_mean),
                profit_at_mean: sum_opt(&|h| h.dm_profit_mean),
            });
        }
        rows
    }

    /// Totals over every season and hour.
    pub fn totals(&self) -> Totals {
        let mut t = Totals::default();
        for h in self.seasons.iter().flat_map(|s| &s.hours) {
            t.wm_revenue += h.wm_revenue;
            t.wm_profit += h.wm_profit;
            t.dm_revenue += h.dm_revenue;
            t.dm_profit += h.dm_profit;
            t.dm_profit_mean += h.dm_profit_mean.unwrap_or(h.dm_profit);
        }
        t
    }

    pub fn hours(&self) -> impl Iterator<Item = &HourRecord> {
        self.seasons.iter().flat_map(|s| &s.hours)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Totals {
    pub wm_revenue: f64,
    pub wm_profit: f64,
    pub dm_revenue: f64,
    pub dm_profit: f64,
    /// Distribution profit at the mean price where available, else realized.
    pub dm_profit_mean: f64,
}

impl Totals {
    pub fn revenue(&self) -> f64 {
        self.wm_revenue + self.dm_revenue
    }

    pub fn profit(&self) -> f64 {
        self.wm_profit + self.dm_profit
    }

    pub fn profit_at_mean(&self) -> f64 {
        self.wm_profit + self.dm_profit_mean
    }

    pub fn wm_share(&self) -> f64 {
        let r = self.revenue();
        if r.abs() > 0.0 {
            self.wm_revenue / r
        } else {
            0.0
        }
    }

    fn metric(&self, name: &str) -> f64 {
        match name {
            "revenue_total" => self.revenue(),
            "profit_total" => self.profit(),
            "revenue_wm" => self.wm_revenue,
            "revenue_dm" => self.dm_revenue,
            "profit_wm" => self.wm_profit,
            "profit_dm" => self.dm_profit,
            "wm_revenue_share" => self.wm_share(),
            _ => unreachable!("unknown metric"),
        }
    }
}

pub const COMPARISON_METRICS: [&str; 7] = [
    "revenue_total",
    "profit_total",
    "revenue_wm",
    "revenue_dm",
    "profit_wm",
    "profit_dm",
    "wm_revenue_share",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub base: String,
    pub other: String,
    pub metric: &'static str,
    pub base_value: f64,
    pub other_value: f64,
    /// `None` when the base value is zero and the other is not.
    pub delta_pct: Option<f64>,
}

/// Percentage deltas of every metric between every ordered pair of cases.
pub fn compare_cases(results: &[CaseResult]) -> Result<Vec<ComparisonRow>, ModelError> {
    if results.len() < 2 {
        return Err(ModelError::invariant("comparison needs at least two cases"));
    }
    if let Some(r) = results.iter().find(|r| r.data_key != results[0].data_key) {
        return Err(ModelError::invariant(format!(
            "cases {} and {} ran on different data",
            results[0].label, r.label
        )));
    }
    let totals: Vec<Totals> = results.iter().map(|r| r.totals()).collect();
    let mut rows = Vec::new();
    for i in 0..results.len() {
        for j in 0..results.len() {
            if i == j {
                continue;
            }
            for metric in COMPARISON_METRICS {
                let (a, b) = (totals[i].metric(metric), totals[j].metric(metric));
                let delta_pct = if a != 0.0 {
                    Some((b - a) / a.abs() * 100.0)
                } else if b == 0.0 {
                    Some(0.0)
                } else {
                    None
                };
                rows.push(ComparisonRow {
                    base: results[i].label.clone(),
                    other: results[j].label.clone(),
                    metric,
                    base_value: a,
                    other_value: b,
                    delta_pct,
                });
            }
        }
    }
    Ok(rows)
}

struct Ctx<'a> {
    data: &'a Dataset,
    cfg: &'a CaseConfig,
    risk: Option<RiskSpec>,
    t_bus: Vec<usize>,
    d_bus: Vec<usize>,
}

impl Ctx<'_> {
    fn tariff(&self) -> &TariffSchedule {
        self.data.tariff.as_ref().expect("validated tariff")
    }
}

fn solve_recorded(
    m: &Mpec,
    input: MpecInput<'_>,
    revenue: Option<Phase1Revenue<'_>>,
    lambda: Option<&[Vec<f64>]>,
    cfg: &CaseConfig,
    phase: &str,
) -> Result<(MpecSolution, SolveRecord), SolveError> {
    let t0 = Instant::now();
    let starts = price_taker_starts(m, input, revenue, lambda, &cfg.solver)?;
    let sol = solve_multistart(m, &cfg.schedule, &starts, &cfg.solver);
    if !sol.class.converged() {
        return Err(SolveError::NotConverged {
            status: format!("{phase} MPEC: no start reached a stationary point"),
        });
    }
    let rep = m.follower_residuals(&sol.x);
    let rec = SolveRecord {
        phase: phase.to_string(),
        objective: sol.objective,
        class: sol.class,
        complementarity: sol.complementarity,
        feasibility: sol.feasibility,
        start: sol.start.clone(),
        trace: sol.trace.clone(),
        nlp_log: sol.nlp_log.clone(),
        kkt_max: rep.max(),
        kkt_dump: rep.dump(),
        seconds: t0.elapsed().as_secs_f64(),
    };
    Ok((sol, rec))
}

fn column(tab: &[Vec<f64>]) -> Vec<f64> {
    tab.iter().map(|row| row[0]).collect()
}

fn joint_hour(ctx: &Ctx<'_>, demand: &SystemDemand, t: usize, regulated: bool) -> Result<HourRecord, SolveError> {
    let sys = &ctx.data.sys;
    let hours = [t];
    let input = MpecInput::new(sys, demand, &hours, ctx.cfg.sides);
    let tariff = regulated.then(|| ctx.tariff());
    let m = build_joint_mpec(input, tariff)?;
    let (sol, rec) = solve_recorded(&m, input, None, None, ctx.cfg, "joint")?;
    let (ot, od) = m.offers(&sol.x);
    let wm = m.wholesale_result(&sol.x).expect("wholesale block");
    let dm = m.distribution_result(&sol.x).expect("distribution block");
    let mut h = blank_hour(t, column(&ot), column(&od));
    for (r, u) in sys.units().iter().enumerate() {
        h.wm_price[r] = wm.lmp[ctx.t_bus[r]][0];
        h.dm_price[r] = match tariff {
            Some(tar) => tar.price[t],
            None => dm.dlmp[ctx.d_bus[r]][0],
        };
        h.wm_revenue += h.wm_price[r] * h.offer_t[r];
        h.wm_profit += (h.wm_price[r] - u.cost) * h.offer_t[r];
        h.dm_revenue += h.dm_price[r] * h.offer_d[r];
        h.dm_profit += (h.dm_price[r] - u.cost) * h.offer_d[r];
    }
    h.accounting_gap = (h.wm_profit + h.dm_profit - sol.objective).abs();
    fill_wm(&mut h, &wm);
    fill_dm(&mut h, &dm);
    h.solves.push(rec);
    Ok(h)
}

/// Interface flows of a competitive clearing in which the producer offers
/// everything to the wholesale market, `[link][hour]`.
pub fn forecast_link_flows(
    sys: &CoupledSystem,
    demand: &SystemDemand,
    hours: &[usize],
    mode: ConeMode,
    opts: &SolverOptions,
) -> Result<Vec<Vec<f64>>, SolveError> {
    let nt = demand.hours();
    let cap: Vec<Vec<f64>> = sys.units().iter().map(|u| vec![u.g_max; nt]).collect();
    let zero = vec![vec![0.0; nt]; sys.units().len()];
    let base = clear_coupled(sys, demand, &cap, &zero, hours, mode, opts)?;
    let mut out = vec![vec![0.0; nt]; sys.links.len()];
    for (k, row) in out.iter_mut().enumerate() {
        for (pos, &t) in hours.iter().enumerate() {
            row[t] = base.dm.link_flow[k][pos];
        }
    }
    Ok(out)
}

fn sequential_hour(
    ctx: &Ctx<'_>,
    demand: &SystemDemand,
    t: usize,
    revenue: Phase1Revenue<'_>,
    tariff: Option<&TariffSchedule>,
) -> Result<HourRecord, SolveError> {
    let sys = &ctx.data.sys;
    let nt = demand.hours();
    let hours = [t];
    let input = MpecInput::new(sys, demand, &hours, ctx.cfg.sides);
    let forecast = forecast_link_flows(sys, demand, &hours, input.cone, &ctx.cfg.solver)?;
    let p1 = build_sequential_phase1(input, revenue, &forecast)?;
    let (s1, rec1) = solve_recorded(&p1, input, Some(revenue), None, ctx.cfg, "phase1")?;
    let (ot, od1) = p1.offers(&s1.x);
    let wm = p1.wholesale_result(&s1.x).expect("wholesale block");

    let mut g_t_star = vec![vec![0.0; nt]; sys.units().len()];
    for (r, row) in g_t_star.iter_mut().enumerate() {
        row[t] = ot[r][0];
    }
    let mut lambda = vec![vec![0.0; nt]; sys.links.len()];
    for (k, row) in lambda.iter_mut().enumerate() {
        let b = sys.trans.bus_index(sys.links[k].trans_bus).expect("validated link");
        row[t] = wm.lmp[b][0];
    }
    let p2 = build_sequential_phase2(input, &g_t_star, &lambda, tariff)?;
    let (s2, rec2) = solve_recorded(&p2, input, None, Some(&lambda), ctx.cfg, "phase2")?;
    let (_, od) = p2.offers(&s2.x);
    let dm = p2.distribution_result(&s2.x).expect("distribution block");

    let mut h = blank_hour(t, column(&ot), column(&od));
    let mut mean_prices = Vec::new();
    let mut proxy = 0.0;
    let (mut rev_mean, mut prof_mean) = (0.0, 0.0);
    for (r, u) in sys.units().iter().enumerate() {
        h.wm_price[r] = wm.lmp[ctx.t_bus[r]][0];
        h.dm_price[r] = match tariff {
            Some(tar) => tar.price[t],
            None => dm.dlmp[ctx.d_bus[r]][0],
        };
        h.wm_revenue += h.wm_price[r] * h.offer_t[r];
        h.wm_profit += (h.wm_price[r] - u.cost) * h.offer_t[r];
        h.dm_revenue += h.dm_price[r] * h.offer_d[r];
        h.dm_profit += (h.dm_price[r] - u.cost) * h.offer_d[r];
        let z = s1.x[p1.leader.aux[r][0].expect("revenue auxiliary")];
        proxy += z - u.cost * od1[r][0];
        let mean = match revenue {
            Phase1Revenue::Risk(spec) => spec.mean[ctx.d_bus[r]][t],
            Phase1Revenue::Tariff(_) => phase1_price(sys, revenue, r, t)?,
        };
        mean_prices.push(mean);
        rev_mean += mean * h.offer_d[r];
        prof_mean += (mean - u.cost) * h.offer_d[r];
    }
    h.dm_mean_price = Some(mean_prices);
    h.dm_revenue_mean = Some(rev_mean);
    h.dm_profit_mean = Some(prof_mean);
    h.accounting_gap = (h.wm_profit - (s1.objective - proxy))
        .abs()
        .max((h.dm_profit - s2.objective).abs());
    fill_wm(&mut h, &wm);
    fill_dm(&mut h, &dm);
    h.solves.push(rec1);
    h.solves.push(rec2);
    Ok(h)
}

fn blank_hour(hour: usize, offer_t: Vec<f64>, offer_d: Vec<f64>) -> HourRecord {
    let n = offer_t.len();
    HourRecord {
        hour,
        offer_t,
        offer_d,
        wm_price: vec![0.0; n],
        dm_price: vec![0.0; n],
        dm_mean_price: None,
        lmp: Vec::new(),
        dlmp: Vec::new(),
        voltage: Vec::new(),
        dispatch_wm: Vec::new(),
        strategic_wm: Vec::new(),
        flows_wm: Vec::new(),
        dispatch_dm: Vec::new(),
        strategic_dm: Vec::new(),
        link_flow: Vec::new(),
        wm_revenue: 0.0,
        wm_profit: 0.0,
        dm_revenue: 0.0,
        dm_profit: 0.0,
        dm_revenue_mean: None,
        dm_profit_mean: None,
        accounting_gap: 0.0,
        solves: Vec::new(),
    }
}

fn fill_wm(h: &mut HourRecord, wm: &crate::wholesale::WholesaleResult) {
    h.lmp = column(&wm.lmp);
    h.dispatch_wm = column(&wm.dispatch);
    h.strategic_wm = column(&wm.strategic);
    h.flows_wm = column(&wm.flows);
}

fn fill_dm(h: &mut HourRecord, dm: &crate::distribution::DistributionResult) {
    h.dlmp = column(&dm.dlmp);
    h.voltage = column(&dm.voltage);
    h.dispatch_dm = column(&dm.dispatch_p);
    h.strategic_dm = column(&dm.strategic);
    h.link_flow = column(&dm.link_flow);
}

fn context<'a>(data: &'a Dataset, cfg: &'a CaseConfig, game: Game) -> Result<Ctx<'a>, ModelError> {
    cfg.validate_game(data, game)?;
    let risk = match game {
        Game::Sequential(measure) => Some(data.risk_spec(cfg.epsilon, measure, cfg.cvar_formula)?),
        _ => None,
    };
    let sys = &data.sys;
    let t_bus = sys.units().iter().map(|u| sys.trans.bus_index(u.trans_bus).expect("validated unit")).collect();
    let d_bus = sys.units().iter().map(|u| sys.dist.bus_index(u.dist_bus).expect("validated unit")).collect();
    Ok(Ctx {
        data,
        cfg,
        risk,
        t_bus,
        d_bus,
    })
}

fn run_season(ctx: &Ctx<'_>, game: Game, season: &Season) -> SeasonResult {
    let mut out = SeasonResult {
        season: season.name.clone(),
        hours: Vec::new(),
        error: None,
    };
    for t in ctx.cfg.hours_of(season) {
        let res = match game {
            Game::Joint => joint_hour(ctx, &season.demand, t, false),
            Game::JointRegulated => joint_hour(ctx, &season.demand, t, true),
            Game::Sequential(_) => {
                let spec = ctx.risk.as_ref().expect("risk spec");
                sequential_hour(ctx, &season.demand, t, Phase1Revenue::Risk(spec), None)
            }
            Game::SequentialRegulated => {
                let tar = ctx.tariff();
                sequential_hour(ctx, &season.demand, t, Phase1Revenue::Tariff(tar), Some(tar))
            }
        };
        match res {
            Ok(h) => {
                info!(
                    "{} {} hour {t}: profit WM {:.2} DM {:.2}",
                    game.label(),
                    season.name,
                    h.wm_profit,
                    h.dm_profit
                );
                out.hours.push(h);
            }
            Err(e) => {
                warn!("{} {} hour {t} failed: {e}", game.label(), season.name);
                out.error = Some(format!("hour {t}: {e}"));
                break;
            }
        }
    }
    out
}

fn data_key(data: &Dataset, cfg: &CaseConfig) -> String {
    cfg.selected(data)
        .iter()
        .map(|s| format!("{}:{:?}", s.name, cfg.hours_of(s)))
        .collect::<Vec<_>>()
        .join(";")
}

/// Run `game` with the settings of `cfg`; failed seasons carry their
/// diagnostic and the other seasons still run.
pub fn run_game(data: &Dataset, cfg: &CaseConfig, game: Game, jobs: usize) -> Result<CaseResult, ModelError> {
    let ctx = context(data, cfg, game)?;
    let seasons = cfg.selected(data);
    let results = parallel_map(&seasons, jobs, |s| run_season(&ctx, game, s));
    Ok(CaseResult {
        label: cfg.case.as_str().to_string(),
        game,
        data_key: data_key(data, cfg),
        seasons: results,
    })
}

pub fn run_case(data: &Dataset, cfg: &CaseConfig) -> Result<CaseResult, ModelError> {
    run_game(data, cfg, cfg.case.game(), 1)
}

/// Run several cases, spreading `(case, season)` work over `jobs` threads.
/// Results come back in input order whatever the thread count.
pub fn run_cases(data: &Dataset, cfgs: &[CaseConfig], jobs: usize) -> Result<Vec<CaseResult>, ModelError> {
    let ctxs = cfgs
        .iter()
        .map(|c| context(data, c, c.case.game()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut work = Vec::new();
    for (i, c) in cfgs.iter().enumerate() {
        for s in c.selected(data) {
            work.push((i, s));
        }
    }
    let done = parallel_map(&work, jobs, |&(i, s)| run_season(&ctxs[i], cfgs[i].case.game(), s));
    let mut out: Vec<CaseResult> = cfgs
        .iter()
        .map(|c| CaseResult {
            label: c.case.as_str().to_string(),
            game: c.case.game(),
            data_key: data_key(data, c),
            seasons: Vec::new(),
        })
        .collect();
    for ((i, _), res) in work.into_iter().zip(done) {
        out[i].seasons.push(res);
    }
    Ok(out)
}

/// Map `f` over `items` on up to `jobs` threads, keeping the input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.max(1).min(items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Game enumerated by the oracle.
#[derive(Debug, Clone, Copy)]
pub enum OracleGame<'a> {
    Joint,
    JointRegulated(&'a TariffSchedule),
    /// Wholesale offer against fixed interface flows `[link][hour]` plus a
    /// per-MWh distribution revenue.
    Phase1 {
        revenue: Phase1Revenue<'a>,
        forecast: &'a [Vec<f64>],
    },
    /// Distribution offer with the wholesale side fixed, `[unit][hour]` and
    /// `[link][hour]`.
    Phase2 {
        g_t_star: &'a [Vec<f64>],
        lambda_t_star: &'a [Vec<f64>],
        tariff: Option<&'a TariffSchedule>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// Best offers per hour position.
    pub offer_t: Vec<f64>,
    pub offer_d: Vec<f64>,
    pub profit_by_hour: Vec<f64>,
    pub profit: f64,
    pub points: usize,
    /// Largest total price margin `sum |price - cost|` seen on the grid,
    /// summed over hours: profit changes by at most this much per MW of
    /// offer change on price plateaus.
    pub lipschitz: f64,
}

pub const ORACLE_MAX_POINTS: usize = 10_000_000;
pub const ORACLE_MAX_HOURS: usize = 3;

/// Exhaustive search over a grid of offers, each point priced by convex
/// clearing. Hours are independent, so each hour is searched on its own.
pub fn grid_search_oracle(
    sys: &CoupledSystem,
    demand: &SystemDemand,
    hours: &[usize],
    game: OracleGame<'_>,
    step: f64,
    mode: ConeMode,
    opts: &SolverOptions,
) -> Result<OracleResult, SolveError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(ModelError::invariant("grid step must be positive").into());
    }
    if hours.is_empty() || hours.len() > ORACLE_MAX_HOURS {
        return Err(ModelError::invariant(format!("oracle horizon must be 1 to {ORACLE_MAX_HOURS} hours")).into());
    }
    if let Some(&t) = hours.iter().find(|&&t| t >= demand.hours()) {
        return Err(ModelError::invariant(format!("hour {t} beyond demand horizon")).into());
    }
    let units = sys.units();
    if units.len() != 1 {
        return Err(ModelError::invariant("the oracle handles exactly one strategic unit").into());
    }
    let u = &units[0];
    let n = (u.g_max / step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    let per_hour = match game {
        OracleGame::Phase2 { .. } => grid.len(),
        _ => grid.len() * (grid.len() + 1) / 2,
    };
    let points = per_hour.saturating_mul(hours.len());
    if points > ORACLE_MAX_POINTS {
        return Err(ModelError::invariant(format!(
            "grid too large: {points} points exceed the limit of {ORACLE_MAX_POINTS}"
        ))
        .into());
    }
    let tb = sys.trans.bus_index(u.trans_bus).expect("validated unit");
    let db = sys.dist.bus_index(u.dist_bus).expect("validated unit");
    let nt = demand.hours();
    let mut res = OracleResult {
        offer_t: Vec::new(),
        offer_d: Vec::new(),
        profit_by_hour: Vec::new(),
        profit: 0.0,
        points,
        lipschitz: 0.0,
    };
    for &t in hours {
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let mut margin: f64 = 0.0;
        let mut consider = |p: f64, gt: f64, gd: f64, m: f64| {
            margin = margin.max(m);
            if p > best.0 + 1e-9 {
                best = (p, gt, gd);
            }
        };
        match game {
            OracleGame::Joint | OracleGame::JointRegulated(_) => {
                for &gt in &grid {
                    for &gd in grid.iter().take_while(|&&gd| gt + gd <= u.g_max + 1e-9) {
                        let mut ot = vec![vec![0.0; nt]];
                        let mut od = vec![vec![0.0; nt]];
                        ot[0][t] = gt;
                        od[0][t] = gd;
                        let c = clear_coupled(sys, demand, &ot, &od, &[t], mode, opts)?;
                        let lt = c.wm.lmp[tb][0];
                        let ld = match game {
                            OracleGame::JointRegulated(tar) => tar.price[t],
                            _ => c.dm.dlmp[db][0],
                        };
                        let p = (lt - u.cost) * gt + (ld - u.cost) * gd;
                        consider(p, gt, gd, (lt - u.cost).abs() + (ld - u.cost).abs());
                    }
                }
            }
            OracleGame::Phase1 { revenue, forecast } => {
                let price = phase1_price(sys, revenue, 0, t)?;
                let zero = vec![vec![0.0; nt]];
                let mut wm = build_dcopf(&sys.trans, &demand.wm, units, &sys.links, &zero, forecast, &[t])?;
                for &gt in &grid {
                    wm.set_offer(0, 0, gt);
                    let c = clear_wholesale(&wm, opts)?;
                    let lt = c.lmp[tb][0];
                    for &gd in grid.iter().take_while(|&&gd| gt + gd <= u.g_max + 1e-9) {
                        let p = (lt - u.cost) * gt + (price - u.cost) * gd;
                        consider(p, gt, gd, (lt - u.cost).abs() + (price - u.cost).abs());
                    }
                }
            }
            OracleGame::Phase2 {
                g_t_star,
                lambda_t_star,
                tariff,
            } => {
                let zero = vec![vec![0.0; nt]];
                let mut dm = build_lindistflow(&sys.dist, &demand.dm, units, &sys.links, &zero, lambda_t_star, &[t], mode)?;
                let room = u.g_max - g_t_star[0][t];
                for &gd in grid.iter().take_while(|&&gd| gd <= room + 1e-9) {
                    dm.set_offer(0, 0, gd);
                    let c = clear_distribution(&dm, opts)?;
                    let ld = match tariff {
                        Some(tar) => tar.price[t],
                        None => c.dlmp[db][0],
                    };
                    consider((ld - u.cost) * gd, 0.0, gd, (ld - u.cost).abs());
                }
            }
        }
        res.profit += best.0;
        res.profit_by_hour.push(best.0);
        res.offer_t.push(best.1);
        res.offer_d.push(best.2);
        res.lipschitz += margin;
    }
    Ok(res)
}
