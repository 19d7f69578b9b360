//! Deterministic CSV and text artifacts of a run, plus the manifest.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use tdm_core::cases::{CaseResult, ComparisonRow, HourRecord, RevenueRow};
use tdm_core::network::CoupledSystem;

use crate::config::{sha256_hex, Experiment, InputFile};

/// Six significant digits, ties to even, no trailing zeros. Plain decimal
/// notation for moderate magnitudes, `1.5e-7` style otherwise.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let neg = mant.starts_with('-');
    let digits: String = mant.chars().filter(char::is_ascii_digit).collect();
    let sign = if neg { "-" } else { "" };
    if (-5..15).contains(&exp) {
        let (int, frac) = if exp >= 0 {
            let point = exp as usize + 1;
            let padded = format!("{digits:0<point$}");
            (padded[..point].to_string(), padded[point..].to_string())
        } else {
            let zeros = "0".repeat((-exp - 1) as usize);
            ("0".to_string(), format!("{zeros}{digits}"))
        };
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{frac}")
        }
    } else {
        let (lead, rest) = digits.split_at(1);
        let rest = rest.trim_end_matches('0');
        if rest.is_empty() {
            format!("{sign}{lead}e{exp}")
        } else {
            format!("{sign}{lead}.{rest}e{exp}")
        }
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// In-memory CSV with a fixed header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// A file to be written, path relative to the output directory.
pub struct Artifact {
    pub path: String,
    pub bytes: Vec<u8>,
}

fn hour_rows<'a>(result: &'a CaseResult) -> impl Iterator<Item = (&'a str, &'a HourRecord)> {
    result
        .seasons
        .iter()
        .flat_map(|s| s.hours.iter().map(move |h| (s.season.as_str(), h)))
}

fn long_table(result: &CaseResult, col: &str, labels: &[String], pick: impl Fn(&HourRecord) -> &Vec<f64>) -> Table {
    let mut t = Table::new(&["season", "hour", col, "value"]);
    for (season, h) in hour_rows(result) {
        for (label, v) in labels.iter().zip(pick(h)) {
            t.push(vec![season.into(), h.hour.to_string(), label.clone(), fmt_num(*v)]);
        }
    }
    t
}

fn profile(result: &CaseResult, season: &str, buses: &[String], pick: impl Fn(&HourRecord) -> &Vec<f64>) -> Table {
    let mut header = vec!["hour".to_string()];
    header.extend(buses.iter().map(|b| format!("bus_{b}")));
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for s in result.seasons.iter().filter(|s| s.season == season) {
        for h in &s.hours {
            let mut row = vec![h.hour.to_string()];
            row.extend(pick(h).iter().map(|v| fmt_num(*v)));
            t.push(row);
        }
    }
    t
}

pub fn revenue_table(rows: &[RevenueRow]) -> Table {
    let mut t = Table::new(&["case", "season", "market", "revenue", "profit", "revenue_at_mean", "profit_at_mean"]);
    for r in rows {
        t.push(vec![
            r.case.clone(),
            r.season.clone(),
            r.market.as_str().into(),
            fmt_num(r.revenue),
            fmt_num(r.profit),
            opt_num(r.revenue_at_mean),
            opt_num(r.profit_at_mean),
        ]);
    }
    t
}

pub fn comparison_table(rows: &[ComparisonRow]) -> Table {
    let mut t = Table::new(&["base", "other", "metric", "base_value", "other_value", "delta_pct"]);
    for r in rows {
        t.push(vec![
            r.base.clone(),
            r.other.clone(),
            r.metric.into(),
            fmt_num(r.base_value),
            fmt_num(r.other_value),
            opt_num(r.delta_pct),
        ]);
    }
    t
}

/// Every file describing one case, in a fixed order.
pub fn case_artifacts(result: &CaseResult, sys: &CoupledSystem, dir: &str) -> Vec<Artifact> {
    let trans_buses: Vec<String> = sys.trans.buses.iter().map(|b| b.id.to_string()).collect();
    let dist_buses: Vec<String> = sys.dist.buses.iter().map(|b| b.id.to_string()).collect();
    let wm_gens: Vec<String> = sys.trans.generators.iter().map(|g| g.name.clone()).collect();
    let dm_gens: Vec<String> = sys.dist.generators.iter().map(|g| g.name.clone()).collect();
    let units: Vec<String> = sys.units().iter().map(|u| u.name.clone()).collect();
    let lines: Vec<String> = sys.trans.lines.iter().map(|l| format!("{}-{}", l.from, l.to)).collect();
    let links: Vec<String> = sys.links.iter().map(|l| format!("{}-{}", l.trans_bus, l.dist_bus)).collect();
    let case = result.label.as_str();

    let mut files: Vec<(String, Table)> = vec![
        ("lmps.csv".into(), long_table(result, "bus", &trans_buses, |h| &h.lmp)),
        ("dlmps.csv".into(), long_table(result, "bus", &dist_buses, |h| &h.dlmp)),
        ("voltages.csv".into(), long_table(result, "bus", &dist_buses, |h| &h.voltage)),
    ];

    let mut wm = Table::new(&["season", "hour", "generator", "mw"]);
    let mut dm = Table::new(&["season", "hour", "generator", "mw"]);
    let mut flows = Table::new(&["season", "hour", "kind", "element", "mw"]);
    let mut offers = Table::new(&[
        "season",
        "hour",
        "unit",
        "offer_wm",
        "offer_dm",
        "price_wm",
        "price_dm",
        "price_dm_mean",
    ]);
    let mut accounting = Table::new(&["season", "hour", "wm_profit", "dm_profit", "accounting_gap"]);
    let mut trace = Table::new(&[
        "season",
        "hour",
        "phase",
        "start",
        "outer",
        "rho",
        "objective",
        "complementarity",
        "inner_iterations",
        "status",
    ]);
    let mut kkt = String::new();
    let mut nlp = String::new();
    for (season, h) in hour_rows(result) {
        let key = |rest: Vec<String>| {
            let mut v = vec![season.to_string(), h.hour.to_string()];
            v.extend(rest);
            v
        };
        for (name, v) in wm_gens.iter().zip(&h.dispatch_wm).chain(units.iter().zip(&h.strategic_wm)) {
            wm.push(key(vec![name.clone(), fmt_num(*v)]));
        }
        for (name, v) in dm_gens.iter().zip(&h.dispatch_dm).chain(units.iter().zip(&h.strategic_dm)) {
            dm.push(key(vec![name.clone(), fmt_num(*v)]));
        }
        for (name, v) in lines.iter().zip(&h.flows_wm) {
            flows.push(key(vec!["line".into(), name.clone(), fmt_num(*v)]));
        }
        for (name, v) in links.iter().zip(&h.link_flow) {
            flows.push(key(vec!["interface".into(), name.clone(), fmt_num(*v)]));
        }
        for (r, name) in units.iter().enumerate() {
            offers.push(key(vec![
                name.clone(),
                fmt_num(h.offer_t[r]),
                fmt_num(h.offer_d[r]),
                fmt_num(h.wm_price[r]),
                fmt_num(h.dm_price[r]),
                opt_num(h.dm_mean_price.as_ref().map(|p| p[r])),
            ]));
        }
        accounting.push(key(vec![fmt_num(h.wm_profit), fmt_num(h.dm_profit), fmt_num(h.accounting_gap)]));
        for s in &h.solves {
            for row in &s.trace {
                trace.push(key(vec![
                    s.phase.clone(),
                    s.start.clone(),
                    row.outer.to_string(),
                    fmt_num(row.rho),
                    fmt_num(row.objective),
                    fmt_num(row.complementarity),
                    row.inner_iterations.to_string(),
                    row.status.clone(),
                ]));
            }
            kkt.push_str(&format!("## {case} {season} hour {} {}\n{}\n", h.hour, s.phase, s.kkt_dump));
            nlp.push_str(&format!("## {case} {season} hour {} {}\n{}\n", h.hour, s.phase, s.nlp_log));
        }
    }
    files.push(("dispatch_wm.csv".into(), wm));
    files.push(("dispatch_dm.csv".into(), dm));
    files.push(("flows_wm.csv".into(), flows));
    files.push(("offers.csv".into(), offers));
    files.push(("accounting.csv".into(), accounting));
    files.push(("mpec_trace.csv".into(), trace));
    files.push(("revenue.csv".into(), revenue_table(&result.revenue_rows())));
    for s in &result.seasons {
        files.push((
            format!("lmp_profile_{case}_{}.csv", s.season),
            profile(result, &s.season, &trans_buses, |h| &h.lmp),
        ));
        files.push((
            format!("dlmp_profile_{case}_{}.csv", s.season),
            profile(result, &s.season, &dist_buses, |h| &h.dlmp),
        ));
    }

    let mut out: Vec<Artifact> = files
        .into_iter()
        .map(|(name, t)| Artifact {
            path: format!("{dir}/{name}"),
            bytes: t.to_bytes(),
        })
        .collect();
    out.push(Artifact {
        path: format!("{dir}/kkt_dump.txt"),
        bytes: kkt.into_bytes(),
    });
    out.push(Artifact {
        path: format!("{dir}/nlp_log.txt"),
        bytes: nlp.into_bytes(),
    });
    out
}

/// Every artifact of a multi-case run.
pub fn run_artifacts(results: &[CaseResult], comparison: Option<&[ComparisonRow]>, sys: &CoupledSystem) -> Vec<Artifact> {
    let mut out = Vec::new();
    let mut all_rows = Vec::new();
    for r in results {
        out.extend(case_artifacts(r, sys, &format!("case_{}", r.label)));
        all_rows.extend(r.revenue_rows());
    }
    out.push(Artifact {
        path: "revenue.csv".into(),
        bytes: revenue_table(&all_rows).to_bytes(),
    });
    if let Some(rows) = comparison {
        out.push(Artifact {
            path: "comparison.csv".into(),
            bytes: comparison_table(rows).to_bytes(),
        });
    }
    out
}

#[derive(Debug, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct SeasonStatus {
    pub season: String,
    pub error: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SolveTiming {
    pub season: String,
    pub hour: usize,
    pub phase: String,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct CaseStatus {
    pub case: String,
    pub game: String,
    pub status: &'static str,
    pub seasons: Vec<SeasonStatus>,
    pub solves: Vec<SolveTiming>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub created_unix_seconds: u64,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<InputEntry>,
    pub cases: Vec<CaseStatus>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Serialize)]
pub struct InputEntry {
    pub path: String,
    pub sha256: String,
}

impl From<&InputFile> for InputEntry {
    fn from(f: &InputFile) -> Self {
        InputEntry {
            path: f.name.clone(),
            sha256: f.sha256.clone(),
        }
    }
}

pub fn case_status(r: &CaseResult) -> CaseStatus {
    let failed = !r.failed_seasons().is_empty();
    CaseStatus {
        case: r.label.clone(),
        game: r.game.label().to_string(),
        status: if failed { "partial" } else { "ok" },
        seasons: r
            .seasons
            .iter()
            .map(|s| SeasonStatus {
                season: s.season.clone(),
                error: s.error.clone(),
            })
            .collect(),
        solves: hour_rows(r)
            .flat_map(|(season, h)| {
                h.solves.iter().map(move |s| SolveTiming {
                    season: season.to_string(),
                    hour: h.hour,
                    phase: s.phase.clone(),
                    seconds: s.seconds,
                })
            })
            .collect(),
    }
}

/// Write the artifacts below `out` and the manifest listing them.
pub fn write_run(out: &Path, exp: &Experiment, results: &[CaseResult], artifacts: &[Artifact]) -> Result<PathBuf> {
    let mut entries = Vec::new();
    for a in artifacts {
        let path = out.join(&a.path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        }
        std::fs::write(&path, &a.bytes).with_context(|| format!("cannot write {}", path.display()))?;
        entries.push(ArtifactEntry {
            path: a.path.clone(),
            sha256: sha256_hex(&a.bytes),
        });
    }
    let manifest = RunManifest {
        tool: "tdm",
        version: env!("CARGO_PKG_VERSION"),
        created_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config_sha256: exp.config_sha256.clone(),
        seed: exp.seed,
        inputs: exp.inputs.iter().map(InputEntry::from).collect(),
        cases: results.iter().map(case_status).collect(),
        artifacts: entries,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
