//! Gaussian price-risk mathematics for the sequential participation
//! strategies: quantiles, chance-constraint and CVaR price adjustments,
//! VaR, and fitting of historical DLMP samples.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Standard normal CDF by quadrature of the density.
pub fn std_normal_cdf(z: f64) -> f64 {
    if z == 0.0 {
        return 0.5;
    }
    let half = integrate(&std_normal_pdf, 0.0, z.abs().min(40.0), 1e-15);
    if z > 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Inverse standard normal CDF by bisection.
pub fn std_normal_quantile(p: f64) -> Result<f64, ModelError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ModelError::invariant(format!("probability {p} must lie in (0, 1)")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // solve on the upper half and mirror, which keeps p and 1-p exactly symmetric
    let (target, sign) = if p > 0.5 { (p, 1.0) } else { (1.0 - p, -1.0) };
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if std_normal_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(sign * 0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMeasure {
    Cc,
    Cvar,
}

/// Which closed form is used for the CVaR-adjusted price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvarFormula {
    /// Deduction `pdf(q_eps) / (1 - eps) * sigma`.
    #[default]
    PaperLiteral,
    /// Lower-tail expectation, deduction `pdf(q_eps) / eps * sigma`.
    StandardTail,
}

impl std::str::FromStr for CvarFormula {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper-literal" => Ok(CvarFormula::PaperLiteral),
            "standard-tail" => Ok(CvarFormula::StandardTail),
            other => Err(format!("unknown cvar formula '{other}' (use paper-literal or standard-tail)")),
        }
    }
}

pub fn validate_epsilon(eps: f64) -> Result<(), ModelError> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(ModelError::invariant("epsilon must be in (0, 0.5)"))
    }
}

/// Revenue per MWh guaranteed with probability at least `1 - eps`.
pub fn cc_adjusted_price(mean: f64, sigma: f64, eps: f64) -> Result<f64, ModelError> {
    validate_epsilon(eps)?;
    if sigma < 0.0 {
        return Err(ModelError::invariant("sigma must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(mean);
    }
    Ok(mean - std_normal_quantile(1.0 - eps)? * sigma)
}

pub fn cvar_adjusted_price(mean: f64, sigma: f64, eps: f64, formula: CvarFormula) -> Result<f64, ModelError> {
    validate_epsilon(eps)?;
    if sigma < 0.0 {
        return Err(ModelError::invariant("sigma must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(mean);
    }
    let density = std_normal_pdf(std_normal_quantile(eps)?);
    let divisor = match formula {
        CvarFormula::PaperLiteral => 1.0 - eps,
        CvarFormula::StandardTail => eps,
    };
    Ok(mean - density / divisor * sigma)
}

/// Gaussian value-at-risk `mean + q_eps * sigma`.
pub fn var_gaussian(mean: f64, sigma: f64, eps: f64) -> Result<f64, ModelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::invariant("epsilon must be in (0, 1)"));
    }
    Ok(mean + std_normal_quantile(eps)? * sigma)
}

/// Empirical value-at-risk: the nearest-rank `eps`-quantile.
pub fn var_empirical(samples: &[f64], eps: f64) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::invariant("empty sample set"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ModelError::invariant("epsilon must be in (0, 1)"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (eps * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1) - 1])
}

/// Sample mean and Bessel-corrected standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> Result<(f64, f64), ModelError> {
    if samples.len() < 2 {
        return Err(ModelError::invariant("need at least two samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Gaussian DLMP model per distribution bus and hour.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSpec {
    /// `[bus index][hour]`, $/MWh
    pub mean: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub measure: RiskMeasure,
    pub cvar_formula: CvarFormula,
}

impl RiskSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        validate_epsilon(self.epsilon)?;
        if self.sigma.iter().flatten().any(|s| !(*s >= 0.0)) {
            return Err(ModelError::invariant("sigma must be non-negative"));
        }
        Ok(())
    }

    pub fn has_bus_hour(&self, bus: usize, hour: usize) -> bool {
        self.mean.get(bus).and_then(|r| r.get(hour)).is_some()
            && self.sigma.get(bus).and_then(|r| r.get(hour)).is_some()
    }

    /// Risk-adjusted revenue per MWh offered at `bus` in `hour`.
    pub fn adjusted_price(&self, bus: usize, hour: usize) -> Result<f64, ModelError> {
        if !self.has_bus_hour(bus, hour) {
            return Err(ModelError::invariant(format!(
                "missing risk data for distribution bus index {bus}, hour {hour}"
            )));
        }
        let (m, s) = (self.mean[bus][hour], self.sigma[bus][hour]);
        match self.measure {
            RiskMeasure::Cc => cc_adjusted_price(m, s, self.epsilon),
            RiskMeasure::Cvar => cvar_adjusted_price(m, s, self.epsilon, self.cvar_formula),
        }
    }

    /// Same spec with every sigma set to zero.
    pub fn deterministic(&self) -> RiskSpec {
        let mut r = self.clone();
        r.sigma.iter_mut().flatten().for_each(|s| *s = 0.0);
        r
    }
}

/// Historical DLMP samples keyed by (bus id, hour).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PriceHistory {
    pub samples: BTreeMap<(usize, usize), Vec<f64>>,
}

impl PriceHistory {
    /// Read `bus,hour,price` rows.
    pub fn from_csv(path: &Path) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| ModelError::schema(path, e.to_string()))?;
        let mut h = PriceHistory::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ModelError::schema(path, e.to_string()))?;
            let get = |i: usize| -> Result<f64, ModelError> {
                rec.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| ModelError::schema(path, format!("row {}: bad column {}", line + 2, i + 1)))
            };
            let key = (get(0)? as usize, get(1)? as usize);
            h.samples.entry(key).or_default().push(get(2)?);
        }
        Ok(h)
    }

    /// Fit a Gaussian per (bus, hour) for the given bus ids and horizon.
    pub fn fit(&self, bus_ids: &[usize], hours: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), ModelError> {
        let mut mean = vec![vec![0.0; hours]; bus_ids.len()];
        let mut sigma = vec![vec![0.0; hours]; bus_ids.len()];
        for (b, &id) in bus_ids.iter().enumerate() {
            for t in 0..hours {
                let s = self.samples.get(&(id, t)).ok_or_else(|| {
                    ModelError::invariant(format!("price history has no samples for bus {id}, hour {t}"))
                })?;
                let (m, sd) = fit_gaussian(s)?;
                mean[b][t] = m;
                sigma[b][t] = sd;
            }
        }
        Ok((mean, sigma))
    }

    pub fn all_samples(&self) -> Vec<f64> {
        self.samples.values().flatten().copied().collect()
    }
}
