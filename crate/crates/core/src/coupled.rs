//! Coupled convex clearing of both markets for fixed producer offers.
//!
//! The interface flows become shared variables, so the result is a joint
//! competitive equilibrium: the wholesale LMPs are the prices the feeder
//! pays at its interfaces and the feeder's imports are the wholesale
//! withdrawals.

use tdm_nlp::SolverOptions;

use crate::distribution::{build_lindistflow, ConeMode, DistributionProgram, DistributionResult};
use crate::error::{ModelError, SolveError};
use crate::network::{CoupledSystem, Demand};
use crate::program::{ConvexProgram, Lin};
use crate::wholesale::{build_dcopf, WholesaleProgram, WholesaleResult};

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledResult {
    /// Wholesale program with its link-flow parameters set to the cleared flows.
    pub wm_program: WholesaleProgram,
    pub wm: WholesaleResult,
    /// Distribution program with its interface prices set to the cleared LMPs.
    pub dm_program: DistributionProgram,
    pub dm: DistributionResult,
    /// Total production cost of both markets.
    pub objective: f64,
}

impl CoupledResult {
    /// Wholesale price seen by interface link `k` at hour position `pos`.
    pub fn link_price(&self, sys: &CoupledSystem, k: usize, pos: usize) -> f64 {
        let b = sys.trans.bus_index(sys.links[k].trans_bus).expect("validated link");
        self.wm.lmp[b][pos]
    }
}

/// Demands of both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDemand {
    pub wm: Demand,
    pub dm: Demand,
}

impl SystemDemand {
    pub fn hours(&self) -> usize {
        self.wm.hours().min(self.dm.hours())
    }
}

/// Assemble the joint welfare program for fixed offers.
pub fn build_coupled(
    sys: &CoupledSystem,
    demand: &SystemDemand,
    offer_t: &[Vec<f64>],
    offer_d: &[Vec<f64>],
    hours: &[usize],
    mode: ConeMode,
) -> Result<(ConvexProgram, WholesaleProgram, DistributionProgram, usize), ModelError> {
    let zeros = |n: usize| vec![vec![0.0; demand.hours()]; n];
    let wm = build_dcopf(&sys.trans, &demand.wm, sys.units(), &sys.links, offer_t, &zeros(sys.links.len()), hours)?;
    let dm = build_lindistflow(
        &sys.dist,
        &demand.dm,
        sys.units(),
        &sys.links,
        offer_d,
        &zeros(sys.links.len()),
        hours,
        mode,
    )?;
    for (r, u) in sys.units().iter().enumerate() {
        for &t in hours {
            let total = offer_t[r][t] + offer_d[r][t];
            if total > u.g_max + 1e-9 {
                return Err(ModelError::invariant(format!(
                    "offers of unit {} in hour {t} exceed its capacity",
                    u.name
                )));
            }
        }
    }
    let mut joint = ConvexProgram::new("td");
    joint.append(&wm.program, &[]);
    let wm_vars = wm.program.vars.len();
    // the feeder's interface cost cancels against the wholesale withdrawal
    let mut image: Vec<Option<Lin>> = vec![None; dm.program.params.len()];
    for h in &dm.hours {
        for &pp in &h.price_param {
            image[pp] = Some(Lin::constant(0.0));
        }
    }
    let emb = joint.append(&dm.program, &image);
    debug_assert_eq!(emb.var_offset, wm_vars);
    // substitute the wholesale link parameters by the feeder's import variables
    let mut subst = vec![None; joint.params.len()];
    for (pos, h) in wm.hours.iter().enumerate() {
        for (k, &pp) in h.link_param.iter().enumerate() {
            subst[pp] = Some(Lin::var(emb.var_offset + dm.hours[pos].link[k], 1.0));
        }
    }
    let mut merged = ConvexProgram::new("td");
    let emb2 = merged.append(&joint, &subst);
    debug_assert_eq!(emb2.var_offset, 0);
    Ok((merged, wm, dm, wm_vars))
}

/// Clear both markets jointly for fixed offers.
pub fn clear_coupled(
    sys: &CoupledSystem,
    demand: &SystemDemand,
    offer_t: &[Vec<f64>],
    offer_d: &[Vec<f64>],
    hours: &[usize],
    mode: ConeMode,
    opts: &SolverOptions,
) -> Result<CoupledResult, SolveError> {
    let (merged, mut wm, mut dm, wm_vars) = build_coupled(sys, demand, offer_t, offer_d, hours, mode)?;
    let sol = merged.solve(opts)?;
    let wm_rows = wm.program.rows.len();

    // wholesale rows come first in the merged program
    let lmp_of = |wm: &WholesaleProgram, k: usize, pos: usize| -> f64 {
        let b = sys.trans.bus_index(sys.links[k].trans_bus).expect("validated link");
        sol.duals[wm.hours[pos].balance[b]]
    };
    for pos in 0..dm.hours.len() {
        for k in 0..sys.links.len() {
            let price = lmp_of(&wm, k, pos);
            dm.set_price(k, pos, price);
            let flow = sol.x[wm_vars + dm.hours[pos].link[k]];
            wm.set_link_flow(k, pos, flow);
        }
    }
    let wm_emb = crate::program::Embedding {
        var_offset: 0,
        row_offset: 0,
        cone_offset: 0,
        param_map: Vec::new(),
    };
    let dm_emb = crate::program::Embedding {
        var_offset: wm_vars,
        row_offset: wm_rows,
        cone_offset: 0,
        param_map: Vec::new(),
    };
    let wm_sol = wm_emb.slice(&wm.program, &sol, &wm.program.param_values());
    let dm_sol = dm_emb.slice(&dm.program, &sol, &dm.program.param_values());
    Ok(CoupledResult {
        wm: WholesaleResult::from_solution(&wm, wm_sol),
        dm: DistributionResult::from_solution(&dm, dm_sol),
        wm_program: wm,
        dm_program: dm,
        objective: sol.objective,
    })
}
