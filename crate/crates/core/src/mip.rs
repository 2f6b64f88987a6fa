//! Best-bound branch-and-bound over the binary indicators of a
//! [`ConicProgramIR`].
//!
//! Each node fixes a subset of binaries and solves the continuous relaxation
//! of the rest. Rows made up only of binaries (the cardinality row) are
//! propagated before every solve, so a node whose budget is used up fixes
//! its remaining indicators to zero. Integral relaxations are rounded and
//! re-solved with every binary fixed, which is also how incumbents are
//! certified.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::{ConicProgramIR, Var};
use crate::solver::{ConicSolution, SocpSolver, SolveStatus, SolverSettings};

const PROPAGATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct BnBConfig {
    pub rel_gap: f64,
    pub abs_gap: f64,
    pub node_limit: usize,
    /// Distance from 0/1 below which a relaxed binary counts as integral.
    pub int_tol: f64,
    pub solver: SolverSettings,
    /// Keep the per-node log in the solution.
    pub trace: bool,
}

impl Default for BnBConfig {
    fn default() -> Self {
        Self {
            rel_gap: 1e-4,
            abs_gap: 1e-5,
            node_limit: 10_000,
            int_tol: 1e-6,
            solver: SolverSettings::default(),
            trace: false,
        }
    }
}

impl BnBConfig {
    /// Zero gaps request a fully proven optimum.
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_gap >= 0.0 && self.abs_gap >= 0.0) {
            return Err(Error::Validation(format!(
                "integer gaps must be nonnegative (rel {}, abs {})",
                self.rel_gap, self.abs_gap
            )));
        }
        if self.node_limit == 0 {
            return Err(Error::Validation("node limit must be positive".into()));
        }
        if !(self.int_tol > 0.0 && self.int_tol < 0.5) {
            return Err(Error::Validation(format!("integrality tolerance {} out of (0, 0.5)", self.int_tol)));
        }
        Ok(())
    }

    fn tolerance(&self, incumbent: f64) -> f64 {
        self.abs_gap.max(self.rel_gap * incumbent.abs())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MipStatus {
    Optimal,
    GapReached,
    Infeasible,
    NodeLimit,
    /// The root relaxation could not be solved reliably.
    NumericalFailure,
}

impl MipStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MipStatus::Optimal => "optimal",
            MipStatus::GapReached => "gap_reached",
            MipStatus::Infeasible => "infeasible",
            MipStatus::NodeLimit => "node_limit",
            MipStatus::NumericalFailure => "numerical_failure",
        }
    }

    pub fn has_solution(self) -> bool {
        matches!(self, MipStatus::Optimal | MipStatus::GapReached | MipStatus::NodeLimit)
    }
}

impl std::fmt::Display for MipStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeRecord {
    pub node: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub status: SolveStatus,
    pub relaxation: f64,
    pub incumbent: f64,
    pub action: &'static str,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MipSolution {
    pub status: MipStatus,
    /// Best integral solution found, solved with every binary fixed.
    pub incumbent: Option<ConicSolution>,
    pub objective: f64,
    /// Best proven lower bound.
    pub bound: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub nodes_explored: usize,
    pub log: Vec<NodeRecord>,
}

impl MipSolution {
    /// Binary values of the incumbent.
    pub fn z(&self) -> Option<&[f64]> {
        self.incumbent.as_ref().map(|s| s.binaries.as_slice())
    }

    pub fn write_log<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "parent", "depth", "status", "relaxation", "incumbent", "action"])?;
        for r in &self.log {
            w.write_record(&[
                r.node.to_string(),
                r.parent.map(|p| p.to_string()).unwrap_or_default(),
                r.depth.to_string(),
                r.status.to_string(),
                format!("{:e}", r.relaxation),
                format!("{:e}", r.incumbent),
                r.action.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A subproblem: binaries fixed so far and the parent's relaxation bound.
#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub fixings: Vec<Option<bool>>,
    pub bound: f64,
}

/// Most fractional unfixed binary (ties to the lowest index), or `None`
/// when every value is within `tol` of 0 or 1.
pub fn most_fractional(z: &[f64], fixings: &[Option<bool>], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (&v, f)) in z.iter().zip(fixings).enumerate() {
        if f.is_some() {
            continue;
        }
        let frac = v.min(1.0 - v);
        if frac <= tol {
            continue;
        }
        if !best.is_some_and(|(_, b)| frac <= b) {
            best = Some((j, frac));
        }
    }
    best.map(|(j, _)| j)
}

/// Children of `node` fixing the most fractional binary of its relaxation
/// `z` to 0 and to 1. `next_id` numbers the children.
pub fn branch(node: &Node, z: &[f64], tol: f64, bound: f64, next_id: &mut usize) -> Option<[Node; 2]> {
    let j = most_fractional(z, &node.fixings, tol)?;
    let mut child = |value: bool| {
        let mut fixings = node.fixings.clone();
        fixings[j] = Some(value);
        *next_id += 1;
        Node {
            id: *next_id - 1,
            parent: Some(node.id),
            depth: node.depth + 1,
            fixings,
            bound,
        }
    };
    Some([child(false), child(true)])
}

/// Propagates rows made only of nonnegatively weighted binaries.
/// Returns `false` when the fixings already violate such a row.
fn propagate(ir: &ConicProgramIR, fixings: &mut [Option<bool>]) -> bool {
    for row in &ir.inequalities {
        let binary_only = row
            .terms
            .iter()
            .all(|t| matches!(t.var, Var::Bin(_)) && t.coef >= 0.0);
        if !binary_only {
            continue;
        }
        let mut slack = row.rhs;
        for t in &row.terms {
            if let Var::Bin(j) = t.var {
                if fixings[j] == Some(true) {
                    slack -= t.coef;
                }
            }
        }
        if slack < -PROPAGATION_TOL {
            return false;
        }
        for t in &row.terms {
            if let Var::Bin(j) = t.var {
                if fixings[j].is_none() && t.coef > slack + PROPAGATION_TOL {
                    fixings[j] = Some(false);
                }
            }
        }
    }
    true
}

struct Open(Node);

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Open {}
impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Open {
    // BinaryHeap is a max-heap: the smallest bound, then the oldest node, wins.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .bound
            .total_cmp(&self.0.bound)
            .then_with(|| other.0.id.cmp(&self.0.id))
    }
}

/// Lower bound implied by a relaxation: the dual objective, capped by the
/// primal value it certifies.
fn relaxation_bound(sol: &ConicSolution) -> f64 {
    sol.dual_objective.min(sol.objective)
}

pub fn solve_misocp(ir: &ConicProgramIR, cfg: &BnBConfig) -> Result<MipSolution> {
    cfg.validate()?;
    ir.validate()?;
    let solver = SocpSolver::new(cfg.solver.clone());
    let nb = ir.n_binaries();
    let mut log = Vec::new();
    let mut record = |node: &Node, sol: Option<&ConicSolution>, incumbent: f64, action: &'static str| {
        if cfg.trace {
            log.push(NodeRecord {
                node: node.id,
                parent: node.parent,
                depth: node.depth,
                status: sol.map_or(SolveStatus::Infeasible, |s| s.status),
                relaxation: sol.map_or(f64::NAN, |s| s.objective),
                incumbent,
                action,
            });
        }
    };

    let mut incumbent: Option<ConicSolution> = None;
    let mut inc_obj = f64::INFINITY;
    let try_incumbent = |fixings: &[bool], incumbent: &mut Option<ConicSolution>, inc_obj: &mut f64| -> (bool, SolveStatus) {
        let sol = solver.solve_fixed(ir, fixings);
        let status = sol.status;
        if sol.is_optimal() && sol.objective < *inc_obj {
            *inc_obj = sol.objective;
            *incumbent = Some(sol);
            return (true, status);
        }
        (false, status)
    };

    let mut root = Node {
        id: 0,
        parent: None,
        depth: 0,
        fixings: vec![None; nb],
        bound: f64::NEG_INFINITY,
    };
    let mut next_id = 1;
    let mut heap = BinaryHeap::new();
    let mut explored = 0;
    let mut gap_pruned_bound = f64::INFINITY;
    let mut root_status = None;

    if propagate(ir, &mut root.fixings) {
        heap.push(Open(root));
    }

    while let Some(Open(mut node)) = heap.pop() {
        if node.bound >= inc_obj - cfg.tolerance(inc_obj) {
            // Best-bound order: every remaining node is at least as bad.
            for n in std::iter::once(&node).chain(heap.iter().map(|o| &o.0)) {
                if n.bound < inc_obj {
                    gap_pruned_bound = gap_pruned_bound.min(n.bound);
                }
            }
            heap.clear();
            break;
        }
        if explored >= cfg.node_limit {
            heap.push(Open(node));
            break;
        }
        explored += 1;
        if !propagate(ir, &mut node.fixings) {
            record(&node, None, inc_obj, "infeasible_fixings");
            continue;
        }

        if node.fixings.iter().all(Option::is_some) {
            let fixed: Vec<bool> = node.fixings.iter().map(|f| f.unwrap()).collect();
            let (improved, status) = try_incumbent(&fixed, &mut incumbent, &mut inc_obj);
            if node.id == 0 {
                root_status = Some(status);
            }
            record(&node, incumbent.as_ref(), inc_obj, if improved { "leaf_incumbent" } else { "leaf" });
            continue;
        }

        let sol = solver.solve_relaxation(ir, &node.fixings);
        if node.id == 0 {
            root_status = Some(sol.status);
        }
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => {
                record(&node, Some(&sol), inc_obj, "infeasible");
                continue;
            }
            SolveStatus::Unbounded | SolveStatus::NumericalFailure => {
                // No usable bound: split on the first free binary.
                record(&node, Some(&sol), inc_obj, "unreliable_split");
                let j = node.fixings.iter().position(Option::is_none).expect("free binary");
                for v in [false, true] {
                    let mut fixings = node.fixings.clone();
                    fixings[j] = Some(v);
                    heap.push(Open(Node {
                        id: next_id,
                        parent: Some(node.id),
                        depth: node.depth + 1,
                        fixings,
                        bound: node.bound,
                    }));
                    next_id += 1;
                }
                continue;
            }
        }
        let bound = relaxation_bound(&sol).max(node.bound);
        if bound >= inc_obj - cfg.tolerance(inc_obj) {
            if bound < inc_obj {
                gap_pruned_bound = gap_pruned_bound.min(bound);
            }
            record(&node, Some(&sol), inc_obj, "pruned");
            continue;
        }

        if node.id == 0 {
            // Rounding heuristic: switch legs on in order of decreasing
            // relaxed value while the binary-only rows allow it.
            let mut order: Vec<usize> = (0..nb).collect();
            order.sort_by(|&a, &b| sol.binaries[b].total_cmp(&sol.binaries[a]).then(a.cmp(&b)));
            let mut guess = node.fixings.clone();
            for &j in &order {
                if guess[j].is_none() {
                    let mut trial = guess.clone();
                    trial[j] = Some(sol.binaries[j] > cfg.int_tol);
                    if propagate(ir, &mut trial) {
                        guess = trial;
                    } else {
                        guess[j] = Some(false);
                    }
                }
            }
            let fixed: Vec<bool> = guess.iter().map(|f| f.unwrap_or(false)).collect();
            try_incumbent(&fixed, &mut incumbent, &mut inc_obj);
        }

        match branch(&node, &sol.binaries, cfg.int_tol, bound, &mut next_id) {
            Some(children) => {
                record(&node, Some(&sol), inc_obj, "branched");
                for c in children {
                    heap.push(Open(c));
                }
            }
            None => {
                let fixed: Vec<bool> = node
                    .fixings
                    .iter()
                    .zip(&sol.binaries)
                    .map(|(f, &v)| f.unwrap_or(v > 0.5))
                    .collect();
                let (improved, _) = try_incumbent(&fixed, &mut incumbent, &mut inc_obj);
                record(&node, Some(&sol), inc_obj, if improved { "integral_incumbent" } else { "integral" });
            }
        }
    }

    let hit_limit = !heap.is_empty();
    let open_bound = heap.iter().map(|o| o.0.bound).fold(f64::INFINITY, f64::min);
    let bound = inc_obj.min(gap_pruned_bound).min(open_bound);
    let status = match (&incumbent, hit_limit) {
        (_, true) => MipStatus::NodeLimit,
        (None, false) if root_status == Some(SolveStatus::NumericalFailure) => MipStatus::NumericalFailure,
        (None, false) => MipStatus::Infeasible,
        (Some(_), false) if bound < inc_obj => MipStatus::GapReached,
        (Some(_), false) => MipStatus::Optimal,
    };
    let (gap_abs, gap_rel) = if incumbent.is_some() {
        let g = inc_obj - bound;
        (g, g / inc_obj.abs().max(f64::MIN_POSITIVE))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(MipSolution {
        status,
        objective: inc_obj,
        incumbent,
        bound,
        gap_abs,
        gap_rel,
        nodes_explored: explored,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::grid::LinearizedGrid;
    use crate::program::{build_program, BuildOptions, CardinalityLimit, ConverterSpec, TimestepInput, TimestepModel};

    fn root(m: usize) -> Node {
        Node { id: 0, parent: None, depth: 0, fixings: vec![None; m], bound: f64::NEG_INFINITY }
    }

    #[test]
    fn branching_picks_the_most_fractional_binary() {
        let mut next = 1;
        let [lo, hi] = branch(&root(2), &[0.5, 0.9], 1e-6, 0.0, &mut next).unwrap();
        assert_eq!(lo.fixings, vec![Some(false), None]);
        assert_eq!(hi.fixings, vec![Some(true), None]);
        assert_eq!((lo.id, hi.id, next), (1, 2, 3));
        assert_eq!(most_fractional(&[0.5, 0.5], &[None, None], 1e-6), Some(0));
        assert_eq!(most_fractional(&[0.5, 0.5], &[Some(true), None], 1e-6), Some(1));
        assert_eq!(most_fractional(&[0.0, 1.0 - 1e-9], &[None, None], 1e-6), None);
        assert!(branch(&root(2), &[1.0, 0.0], 1e-6, 0.0, &mut next).is_none());
    }

    fn program(n: usize, p_der: f64, load: f64) -> ConicProgramIR {
        let net = fixtures::two_feeder_5bus();
        let pcc: Vec<String> = fixtures::FIVE_BUS_PCC.iter().map(|s| s.to_string()).collect();
        let grid = LinearizedGrid::build(&net, &pcc).unwrap();
        let mut conv = ConverterSpec::new(pcc, 1.0);
        conv.has_dc_der = p_der != 0.0;
        let mut ts = TimestepInput::unloaded(grid.bus_ids.len(), 0.9, 1.1, CardinalityLimit::AtMost(n));
        ts.background = net.peak_demand_injection().iter().map(|s| s * load).collect();
        ts.p_der = p_der;
        build_program(&TimestepModel::new(&grid, &conv, &ts).unwrap(), BuildOptions::default()).unwrap()
    }

    #[test]
    fn no_terminals_with_dc_generation_is_infeasible() {
        let sol = solve_misocp(&program(0, 0.1, 0.5), &BnBConfig::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
        assert!(sol.incumbent.is_none());
    }

    #[test]
    fn gaps_and_node_limits_are_honoured() {
        let ir = program(2, 0.0, 1.0);
        let exact = solve_misocp(&ir, &BnBConfig { rel_gap: 0.0, abs_gap: 0.0, ..Default::default() }).unwrap();
        assert_eq!(exact.status, MipStatus::Optimal);
        assert!(exact.gap_abs <= 1e-12);
        let loose = solve_misocp(&ir, &BnBConfig { rel_gap: 0.5, abs_gap: 1.0, ..Default::default() }).unwrap();
        assert!(loose.status.has_solution());
        assert!(loose.gap_abs <= 1.0 + 1e-12);
        assert!(loose.nodes_explored <= exact.nodes_explored);
        assert!(loose.objective >= exact.objective - 1e-9);
        let capped = solve_misocp(&ir, &BnBConfig { node_limit: 1, rel_gap: 0.0, abs_gap: 0.0, ..Default::default() }).unwrap();
        assert!(capped.nodes_explored <= 1);
        assert!(capped.bound <= exact.objective + 1e-9);
    }

    #[test]
    fn node_log_is_kept_on_request() {
        let ir = program(1, 0.0, 0.8);
        let sol = solve_misocp(&ir, &BnBConfig { trace: true, ..Default::default() }).unwrap();
        assert_eq!(sol.log.len(), sol.nodes_explored);
        let mut csv = Vec::new();
        sol.write_log(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), sol.log.len() + 1);
        assert!(solve_misocp(&ir, &BnBConfig::default()).unwrap().log.is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(BnBConfig { rel_gap: -1.0, ..Default::default() }.validate().is_err());
        assert!(BnBConfig { node_limit: 0, ..Default::default() }.validate().is_err());
        assert!(BnBConfig { int_tol: 0.5, ..Default::default() }.validate().is_err());
        assert!(BnBConfig::default().validate().is_ok());
    }
}
