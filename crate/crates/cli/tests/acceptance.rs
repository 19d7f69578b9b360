//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs the full bundled study once, so it takes a few minutes.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tdm_cli::commands::verify;
use tdm_cli::config::Experiment;
use tdm_cli::output::run_artifacts;
use tdm_core::cases::{forecast_link_flows, run_cases, run_game, Case, CaseConfig, CaseResult, Game};
use tdm_core::coupled::clear_coupled;
use tdm_core::distribution::{build_lindistflow, clear_distribution, kkt_residuals_distribution, ConeMode};
use tdm_core::mpec::{
    build_joint_mpec, build_sequential_phase1, price_taker_starts, solve_multistart, stationarity_check,
    MpecInput, PairMultipliers, Phase1Revenue, Schedule, StationarityClass,
};
use tdm_core::network::{
    Demand, DistBus, DistGenerator, DistributionNetwork, Feeder, Generator, InterfaceLink, StrategicProducer,
    StrategicUnit, TransBus, TransLine, TransmissionNetwork,
};
use tdm_core::risk::{cc_adjusted_price, cvar_adjusted_price, std_normal_cdf, CvarFormula, RiskMeasure};
use tdm_core::wholesale::{build_dcopf, clear_wholesale, kkt_residuals_wholesale};
use tdm_nlp::SolverOptions;

type Outcome = Result<String, String>;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------- fuzzing

fn fuzz_wholesale(rng: &mut StdRng) -> (TransmissionNetwork, Demand, Vec<StrategicUnit>, Vec<Vec<f64>>, usize) {
    let nb = rng.gen_range(2..=6usize);
    let nh = rng.gen_range(1..=2usize);
    let mut lines = Vec::new();
    for b in 2..=nb {
        lines.push((rng.gen_range(1..b), b));
    }
    for _ in 0..rng.gen_range(0..=2) {
        let (a, b) = (rng.gen_range(1..=nb), rng.gen_range(1..=nb));
        if a != b && !lines.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a)) {
            lines.push((a, b));
        }
    }
    let mut demand = Demand::zeros(nb, nh);
    let mut generators = Vec::new();
    for b in 1..=nb {
        for t in 0..nh {
            if rng.gen_bool(0.7) {
                demand.p[b - 1][t] = rng.gen_range(0.0..60.0);
            }
        }
        if rng.gen_bool(0.6) {
            generators.push(Generator {
                name: format!("g{b}"),
                bus: b,
                fuel: None,
                cost: rng.gen_range(10.0..80.0),
                g_min: 0.0,
                g_max: rng.gen_range(20.0..120.0),
            });
        }
        // expensive local supply keeps every draw feasible
        generators.push(Generator {
            name: format!("peak{b}"),
            bus: b,
            fuel: None,
            cost: rng.gen_range(200.0..300.0),
            g_min: 0.0,
            g_max: 60.0,
        });
    }
    let net = TransmissionNetwork {
        name: "fuzz".into(),
        base_mva: 100.0,
        buses: (1..=nb).map(|id| TransBus { id, name: None }).collect(),
        lines: lines
            .into_iter()
            .map(|(from, to)| TransLine {
                from,
                to,
                x: rng.gen_range(0.05..0.3),
                f_max: rng.gen_range(20.0..150.0),
            })
            .collect(),
        generators,
        interfaces: Vec::new(),
    };
    let mut units = Vec::new();
    let mut offers = Vec::new();
    if rng.gen_bool(0.5) {
        let g_max = rng.gen_range(10.0..50.0);
        units.push(StrategicUnit {
            name: "s".into(),
            trans_bus: rng.gen_range(1..=nb),
            dist_bus: 0,
            cost: rng.gen_range(5.0..50.0),
            g_min: 0.0,
            g_max,
        });
        offers.push((0..nh).map(|_| rng.gen_range(0.0..g_max)).collect());
    }
    (net, demand, units, offers, nh)
}

struct FuzzFeeder {
    net: DistributionNetwork,
    demand: Demand,
    units: Vec<StrategicUnit>,
    offers: Vec<Vec<f64>>,
    links: Vec<InterfaceLink>,
    price: Vec<Vec<f64>>,
    nh: usize,
}

fn fuzz_feeder(rng: &mut StdRng) -> FuzzFeeder {
    let nb = rng.gen_range(2..=7usize);
    let nh = rng.gen_range(1..=2usize);
    let feeders: Vec<Feeder> = (2..=nb)
        .map(|b| Feeder {
            from: rng.gen_range(1..b),
            to: b,
            r: rng.gen_range(0.002..0.01),
            x: rng.gen_range(0.004..0.02),
            s_max: rng.gen_range(10.0..60.0),
        })
        .collect();
    let mut demand = Demand::zeros(nb, nh);
    let mut generators = Vec::new();
    for b in 2..=nb {
        for t in 0..nh {
            let p = rng.gen_range(0.0..8.0);
            demand.p[b - 1][t] = p;
            demand.q[b - 1][t] = 0.3 * p;
        }
        if rng.gen_bool(0.4) {
            generators.push(DistGenerator {
                name: format!("g{b}"),
                bus: b,
                cost: rng.gen_range(10.0..90.0),
                p_min: 0.0,
                p_max: rng.gen_range(2.0..20.0),
                q_min: -10.0,
                q_max: 10.0,
            });
        }
        generators.push(DistGenerator {
            name: format!("peak{b}"),
            bus: b,
            cost: rng.gen_range(300.0..400.0),
            p_min: 0.0,
            p_max: 10.0,
            q_min: -10.0,
            q_max: 10.0,
        });
    }
    let net = DistributionNetwork {
        name: "fuzz feeder".into(),
        base_mva: 100.0,
        root: 1,
        buses: (1..=nb)
            .map(|id| DistBus {
                id,
                u_min: 0.9025,
                u_max: 1.1025,
            })
            .collect(),
        feeders,
        generators,
        strategic: StrategicProducer::default(),
    };
    let mut units = Vec::new();
    let mut offers = Vec::new();
    if rng.gen_bool(0.5) {
        let g_max = rng.gen_range(5.0..20.0);
        units.push(StrategicUnit {
            name: "s".into(),
            trans_bus: 0,
            dist_bus: rng.gen_range(1..=nb),
            cost: rng.gen_range(5.0..50.0),
            g_min: 0.0,
            g_max,
        });
        offers.push((0..nh).map(|_| rng.gen_range(0.0..g_max)).collect());
    }
    let links = vec![InterfaceLink {
        trans_bus: 0,
        dist_bus: 1,
        f_max: rng.gen_range(10.0..80.0),
    }];
    let price = vec![(0..nh).map(|_| rng.gen_range(20.0..60.0)).collect()];
    FuzzFeeder {
        net,
        demand,
        units,
        offers,
        links,
        price,
        nh,
    }
}

fn feeder_program(f: &FuzzFeeder, mode: ConeMode) -> tdm_core::distribution::DistributionProgram {
    let hours: Vec<usize> = (0..f.nh).collect();
    build_lindistflow(&f.net, &f.demand, &f.units, &f.links, &f.offers, &f.price, &hours, mode).expect("valid draw")
}

const FUZZ_SEED: u64 = 20240601;
const FUZZ_COUNT: usize = 100;

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut rng = StdRng::seed_from_u64(FUZZ_SEED);
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for i in 0..FUZZ_COUNT {
        let (net, demand, units, offers, nh) = fuzz_wholesale(&mut rng);
        let hours: Vec<usize> = (0..nh).collect();
        let prog = build_dcopf(&net, &demand, &units, &[], &offers, &[], &hours).map_err(|e| format!("wm {i}: {e}"))?;
        let res = clear_wholesale(&prog, &opts).map_err(|e| format!("wm {i}: {e}"))?;
        let kkt = kkt_residuals_wholesale(&prog, &res).map_err(|e| e.to_string())?.max();
        worst_gap = worst_gap.max(rel_gap(res.objective, res.dual_objective));
        worst_kkt = worst_kkt.max(kkt);
    }
    let mut rng = StdRng::seed_from_u64(FUZZ_SEED + 1);
    for i in 0..FUZZ_COUNT {
        let f = fuzz_feeder(&mut rng);
        let prog = feeder_program(&f, ConeMode::Exact);
        let res = clear_distribution(&prog, &opts).map_err(|e| format!("dm {i}: {e}"))?;
        let kkt = kkt_residuals_distribution(&prog, &res).map_err(|e| e.to_string())?.max();
        worst_gap = worst_gap.max(rel_gap(res.objective, res.dual_objective));
        worst_kkt = worst_kkt.max(kkt);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst_gap <= 1e-6, || format!("duality gap {worst_gap:.2e}"))?;
    ensure(worst_kkt <= 1e-6, || format!("KKT residual {worst_kkt:.2e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{FUZZ_COUNT}+{FUZZ_COUNT} instances, max gap {worst_gap:.1e}, max KKT {worst_kkt:.1e}, {secs:.1} s"
    ))
}

fn criterion_2() -> Outcome {
    let opts = SolverOptions::default();
    let k = 24;
    let shrink = 1.0 - (PI / k as f64).cos();
    let mut rng = StdRng::seed_from_u64(FUZZ_SEED + 1);
    let mut worst = 0.0f64;
    for i in 0..FUZZ_COUNT {
        let f = fuzz_feeder(&mut rng);
        let pe = feeder_program(&f, ConeMode::Exact);
        let pp = feeder_program(&f, ConeMode::Polyhedral(k));
        let re = clear_distribution(&pe, &opts).map_err(|e| format!("dm {i}: {e}"))?;
        let rp = clear_distribution(&pp, &opts).map_err(|e| format!("dm {i}: {e}"))?;
        let eta = re.max_cone_dual(&pe).max((PI / k as f64).cos() * rp.max_cone_dual(&pp));
        let s_total: f64 = f.net.feeders.iter().map(|l| l.s_max).sum::<f64>() * f.nh as f64;
        let bound = s_total * shrink * eta;
        let gap = rp.objective - re.objective;
        // both objectives are accurate to the solver's relative tolerance
        let slack = 1e-6 * re.objective.abs().max(1.0);
        ensure(gap >= -slack && gap <= bound + slack, || {
            format!("instance {i}: gap {gap:.3e} outside [0, {bound:.3e}]")
        })?;
        if bound > 0.0 {
            worst = worst.max(gap / bound);
        }
    }

    let exp = Experiment::load(&data("bundled.toml")).map_err(|e| e.to_string())?;
    let sys = &exp.data.sys;
    let mut worst_dlmp = 0.0f64;
    for season in &exp.data.seasons {
        let nt = season.demand.hours();
        let g = sys.units()[0].g_max;
        let ot = vec![vec![0.5 * g; nt]];
        let od = vec![vec![0.25 * g; nt]];
        for t in 0..nt {
            let exact = clear_coupled(sys, &season.demand, &ot, &od, &[t], ConeMode::Exact, &opts)
                .map_err(|e| format!("{} hour {t} exact: {e}", season.name))?;
            let poly = clear_coupled(sys, &season.demand, &ot, &od, &[t], ConeMode::Polyhedral(k), &opts)
                .map_err(|e| format!("{} hour {t} polygon: {e}", season.name))?;
            for (a, b) in exact.dm.dlmp.iter().flatten().zip(poly.dm.dlmp.iter().flatten()) {
                worst_dlmp = worst_dlmp.max((a - b).abs() / a.abs().max(1e-9));
            }
        }
    }
    ensure(worst_dlmp <= 0.01, || format!("bundled DLMPs differ by {:.3}%", 100.0 * worst_dlmp))?;
    Ok(format!(
        "gap at most {:.2} of the bound on {FUZZ_COUNT} feeders, bundled DLMPs within {:.4}%",
        worst,
        100.0 * worst_dlmp
    ))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for inst in ["t2d2/t2d2_one_hour.toml", "t2d2/t2d2.toml"] {
        let rep = verify(&data(inst), 0.5).map_err(|e| format!("{inst}: {e:#}"))?;
        ensure(rep.passed(), || {
            format!(
                "{inst}: mpec {} oracle {} L {} compl {:.1e}",
                rep.mpec_profit, rep.oracle_profit, rep.lipschitz, rep.complementarity
            )
        })?;
        lines.push(format!(
            "{} h: mpec {:.2} vs oracle {:.2} (allowed {:.1})",
            rep.hours.len(),
            rep.mpec_profit,
            rep.oracle_profit,
            rep.tolerance()
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{}, {secs:.1} s", lines.join("; ")))
}

fn bisect_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn criterion_4() -> Outcome {
    let eps = 0.05;
    let (mean, sigma) = (52.0, 5.65);
    let q = bisect_quantile(eps);
    let cc = cc_adjusted_price(mean, sigma, eps).map_err(|e| e.to_string())?;
    let cc_ref = mean - 1.6449 * sigma;
    ensure((cc - (mean + q * sigma)).abs() <= 1e-3, || format!("cc {cc} vs bisection"))?;
    ensure((cc - cc_ref).abs() <= 1e-3, || format!("cc {cc} vs {cc_ref}"))?;

    let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let tail = simpson(|x| x * pdf(x), -12.0, q, 20_000) / eps;
    let mut rng = StdRng::seed_from_u64(7);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for _ in 0..4_000_000 {
        let z: f64 = rng.sample(normal);
        if z <= q {
            sum += z;
            count += 1;
        }
    }
    let mc = sum / count as f64;
    let std_tail = cvar_adjusted_price(0.0, 1.0, eps, CvarFormula::StandardTail).map_err(|e| e.to_string())?;
    ensure((std_tail - tail).abs() <= 1e-3, || format!("tail {std_tail} vs integral {tail}"))?;
    ensure((std_tail - mc).abs() <= 5e-3, || format!("tail {std_tail} vs sampled {mc}"))?;
    ensure((std_tail + 2.0627).abs() <= 1e-3, || format!("tail {std_tail}"))?;

    let literal = cvar_adjusted_price(0.0, 1.0, eps, CvarFormula::PaperLiteral).map_err(|e| e.to_string())?;
    let direct = -pdf(q) / (1.0 - eps);
    ensure((literal - direct).abs() <= 1e-3, || format!("literal {literal} vs {direct}"))?;
    ensure((literal + 0.1085).abs() <= 1e-3, || format!("literal {literal}"))?;
    Ok(format!("cc {cc:.4}, standard tail {std_tail:.4} (sampled {mc:.4}), literal {literal:.4}"))
}

fn criterion_5(exp: &Experiment) -> Outcome {
    let opts = SolverOptions::default();
    let data = &exp.data;
    let sys = &data.sys;
    let sides = exp.template.sides;
    let schedule = Schedule::default();
    let mut spec = data
        .risk_spec(exp.template.epsilon, RiskMeasure::Cc, exp.template.cvar_formula)
        .map_err(|e| e.to_string())?;
    for row in spec.sigma.iter_mut() {
        row.iter_mut().for_each(|s| *s = 0.0);
    }
    let tariff = data.mean_price_tariff(&spec).map_err(|e| e.to_string())?;
    let season = data.season("summer").ok_or("no summer season")?;
    let mut worst_a = 0.0f64;
    for t in 0..season.demand.hours() {
        let hours = [t];
        let forecast = forecast_link_flows(sys, &season.demand, &hours, ConeMode::Polyhedral(sides), &opts)
            .map_err(|e| e.to_string())?;
        let input = MpecInput::new(sys, &season.demand, &hours, sides);
        let mut obj = Vec::new();
        for revenue in [Phase1Revenue::Risk(&spec), Phase1Revenue::Tariff(&tariff)] {
            let m = build_sequential_phase1(input, revenue, &forecast).map_err(|e| e.to_string())?;
            let starts = price_taker_starts(&m, input, Some(revenue), None, &opts).map_err(|e| e.to_string())?;
            let sol = solve_multistart(&m, &schedule, &starts, &opts);
            ensure(sol.class.converged(), || format!("hour {t}: phase 1 did not converge"))?;
            obj.push(sol.objective);
        }
        worst_a = worst_a.max((obj[0] - obj[1]).abs());
    }
    ensure(worst_a <= 1e-6, || format!("zero-variance phase 1 differs by {worst_a:.2e}"))?;

    let mut cfg = CaseConfig {
        case: Case::B,
        ..exp.template.clone()
    };
    cfg.seasons = vec!["summer".into()];
    let joint = run_game(data, &cfg, Game::JointRegulated, 1).map_err(|e| e.to_string())?;
    let seq = run_game(data, &cfg, Game::SequentialRegulated, 1).map_err(|e| e.to_string())?;
    let mut worst_b = 0.0f64;
    for (a, b) in joint.hours().zip(seq.hours()) {
        let pa = a.wm_profit + a.dm_profit;
        let pb = b.wm_profit + b.dm_profit;
        worst_b = worst_b.max((pa - pb).abs());
    }
    ensure(
        joint.failed_seasons().is_empty() && seq.failed_seasons().is_empty(),
        || "a regulated season failed".into(),
    )?;
    ensure(worst_b <= 1e-6, || format!("regulated sequential differs from joint by {worst_b:.2e}"))?;
    Ok(format!(
        "zero-variance phase 1 max diff {worst_a:.1e}, regulated games max hourly diff {worst_b:.1e}"
    ))
}

fn find<'a>(results: &'a [CaseResult], label: &str) -> &'a CaseResult {
    results.iter().find(|r| r.label == label).expect("case present")
}

fn criterion_6(results: &[CaseResult]) -> Outcome {
    for r in results {
        ensure(r.failed_seasons().is_empty(), || format!("case {} has failed seasons", r.label))?;
    }
    let [a, b, c, d] = ["A", "B", "C", "D"].map(|l| find(results, l).totals());
    ensure(b.revenue() > a.revenue(), || format!("revenue B {} <= A {}", b.revenue(), a.revenue()))?;
    ensure(a.revenue() > d.revenue(), || format!("revenue A {} <= D {}", a.revenue(), d.revenue()))?;
    ensure(c.wm_share() > a.wm_share(), || {
        format!("WM share C {} <= A {}", c.wm_share(), a.wm_share())
    })?;
    for (label, s) in [("C", &c), ("D", &d)] {
        ensure(s.profit_at_mean() <= a.profit() + 1e-6, || {
            format!("case {label} profit at mean {} above joint {}", s.profit_at_mean(), a.profit())
        })?;
    }
    Ok(format!(
        "revenue B {:.0} > A {:.0} > D {:.0}; WM share A {:.3} -> C {:.3}; profit at mean C {:.0}, D {:.0} <= A {:.0}",
        b.revenue(),
        a.revenue(),
        d.revenue(),
        a.wm_share(),
        c.wm_share(),
        c.profit_at_mean(),
        d.profit_at_mean(),
        a.profit()
    ))
}

fn criterion_7(exp: &Experiment, results: &[CaseResult]) -> Outcome {
    let mut checked = 0;
    for r in results {
        for h in r.hours() {
            for s in &h.solves {
                if s.class.converged() {
                    ensure(
                        matches!(s.class, StationarityClass::Strong | StationarityClass::CStationary),
                        || format!("case {} hour {} {}: {}", r.label, h.hour, s.phase, s.class.as_str()),
                    )?;
                    checked += 1;
                }
            }
        }
    }
    ensure(checked > 0, || "no converged solve".into())?;

    // corrupt one pair of a converged joint solution
    let opts = SolverOptions::default();
    let season = exp.data.season("summer").ok_or("no summer season")?;
    let hours = [12];
    let input = MpecInput::new(&exp.data.sys, &season.demand, &hours, exp.template.sides);
    let m = build_joint_mpec(input, None).map_err(|e| e.to_string())?;
    let starts = price_taker_starts(&m, input, None, None, &opts).map_err(|e| e.to_string())?;
    let mut sol = solve_multistart(&m, &Schedule::default(), &starts, &opts);
    let honest = stationarity_check(&m, &sol).map_err(|e| e.to_string())?;
    ensure(matches!(honest, StationarityClass::Strong | StationarityClass::CStationary), || {
        format!("uncorrupted check gives {}", honest.as_str())
    })?;
    let i = sol.multipliers.len() / 2;
    sol.multipliers[i] = PairMultipliers {
        h: 0.0,
        k: 0.0,
        nu_h: 5.0,
        nu_k: -5.0,
    };
    let corrupted = stationarity_check(&m, &sol).map_err(|e| e.to_string())?;
    ensure(corrupted == StationarityClass::Weaker, || {
        format!("corrupted multipliers classed {}", corrupted.as_str())
    })?;
    Ok(format!("{checked} converged solves pass the sign test; corrupted set is rejected"))
}

fn criterion_8(exp: &Experiment, results: &[CaseResult]) -> Outcome {
    let mut worst = 0.0f64;
    for r in results {
        for h in r.hours() {
            worst = worst.max(h.accounting_gap);
        }
    }
    ensure(worst <= 1e-6, || format!("accounting gap {worst:.2e}"))?;

    let mut sub = exp.template.clone();
    sub.seasons = vec!["summer".into()];
    sub.hours = Some(vec![6, 7, 8, 9, 10]);
    let cfgs: Vec<CaseConfig> = Case::ALL
        .iter()
        .map(|&case| CaseConfig { case, ..sub.clone() })
        .collect();
    let mut bytes = Vec::new();
    for jobs in [1, 3] {
        let res = run_cases(&exp.data, &cfgs, jobs).map_err(|e| e.to_string())?;
        let art = run_artifacts(&res, None, &exp.data.sys);
        bytes.push(art.into_iter().map(|a| (a.path, a.bytes)).collect::<Vec<_>>());
    }
    ensure(bytes[0] == bytes[1], || "repeated runs differ".into())?;
    Ok(format!(
        "max accounting gap {worst:.1e}; {} artifacts byte-identical across repeated runs",
        bytes[0].len()
    ))
}

fn main() {
    let mut outcomes: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".into()));
        eprintln!("criterion {n} finished in {:.1} s", start.elapsed().as_secs_f64());
        outcomes.push((n, out));
    };
    record(1, &mut criterion_1);
    record(2, &mut criterion_2);
    record(3, &mut criterion_3);
    record(4, &mut criterion_4);

    let exp = Experiment::load(&data("bundled.toml"));
    let full = exp.as_ref().map_err(|e| format!("{e:#}")).and_then(|exp| {
        let cfgs: Vec<CaseConfig> = Case::ALL
            .iter()
            .map(|&case| CaseConfig {
                case,
                ..exp.template.clone()
            })
            .collect();
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        let start = Instant::now();
        let r = run_cases(&exp.data, &cfgs, jobs).map_err(|e| e.to_string());
        eprintln!("bundled study finished in {:.1} s", start.elapsed().as_secs_f64());
        r
    });
    match (&exp, &full) {
        (Ok(exp), Ok(results)) => {
            record(5, &mut || criterion_5(exp));
            record(6, &mut || criterion_6(results));
            record(7, &mut || criterion_7(exp, results));
            record(8, &mut || criterion_8(exp, results));
        }
        (_, Err(e)) => {
            for n in 5..=8 {
                outcomes.push((n, Err(format!("bundled study failed: {e}"))));
            }
        }
        (Err(_), Ok(_)) => unreachable!("results need the experiment"),
    }

    let mut failed = 0;
    for (n, out) in &outcomes {
        match out {
            Ok(detail) => println!("criterion {n}: PASS  {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
