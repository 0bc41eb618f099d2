//! Branch and bound over zonal quantities.
//!
//! Every node is a polytope over `y`. Upper bounds come from the quasi-LP
//! heuristic restricted to the node, lower bounds from McCormick envelope
//! LPs, and nodes are split by a hyperplane through their Chebyshev centre
//! orthogonal to the direction from the centre to the node's best point.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{mc_value, zonal_constraints, ActiveEstimate, McConstraints};
use super::ieqlp::{run_ieqlp_on, slice_center, IeqLpSettings};
use crate::error::{ClearError, Result};
use crate::kernel::{solve_lp, LinearProgram, LpStatus};
use crate::market::{ClearingOutcome, Diagnostics, MarketInstance, Polytope, SolveStatus};
use crate::settings::Tolerances;
use crate::swm::{clear_swm, SwmSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeStatus {
    ActiveLeaf,
    Branched,
    Pruned,
}

/// Per-zone bounds of a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeBounds {
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct BBNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub polytope: Polytope,
    pub f_ub: f64,
    pub x_sol: Vec<f64>,
    pub v_sol: Vec<f64>,
    pub y_sol: Vec<f64>,
    pub f_lb: f64,
    pub bounds: Option<NodeBounds>,
    pub y_c: Vec<f64>,
    pub r_c: f64,
    /// Unit branching direction.
    pub s_d: Vec<f64>,
    pub status: NodeStatus,
    /// Too small to branch (`r_c < r_delta`); its lower bound equals its upper bound.
    pub closed: bool,
}

impl BBNode {
    /// Constraint rows of the two children: `(-1)^l s_D' y <= (-1)^l s_D' y_c`.
    pub fn children_polytopes(&self) -> [Polytope; 2] {
        let rhs: f64 = self.s_d.iter().zip(&self.y_c).map(|(a, b)| a * b).sum();
        let neg: Vec<f64> = self.s_d.iter().map(|a| -a).collect();
        [self.polytope.with_row(&neg, -rhs), self.polytope.with_row(&self.s_d, rhs)]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BbSettings {
    /// Relative optimality gap.
    pub gap: f64,
    /// Nodes with Chebyshev radius below this are closed; `None` means
    /// `1e-4 ||d||`.
    pub r_delta: Option<f64>,
    pub max_nodes: usize,
    pub seed: u64,
    /// Heuristic used for node upper bounds.
    pub ub: IeqLpSettings,
    /// Offer the social-welfare dispatch as the first incumbent.
    pub swm_warm_start: bool,
    pub lp_tol: f64,
    pub small_nodes: SmallNodeBound,
}

/// Lower bound assigned to nodes too small to branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallNodeBound {
    /// The node's upper bound; fast, but not a certified bound.
    CopyUpper,
    /// The envelope LP bound, as for every other node.
    Envelope,
}

impl Default for BbSettings {
    fn default() -> Self {
        Self {
            gap: 1e-5,
            r_delta: None,
            max_nodes: 10_000,
            seed: 42,
            ub: IeqLpSettings {
                max_iters: 40,
                ..IeqLpSettings::default()
            },
            swm_warm_start: true,
            lp_tol: 1e-10,
            small_nodes: SmallNodeBound::Envelope,
        }
    }
}

/// One row per iteration of the main loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbTraceRow {
    pub iteration: usize,
    pub nodes: usize,
    pub f_ub: f64,
    pub f_lb: f64,
    pub gap: f64,
}

/// Node record for CSV output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub f_ub: f64,
    pub f_lb: f64,
    pub status: NodeStatus,
}

#[derive(Clone, Debug)]
pub struct BbResult {
    pub outcome: ClearingOutcome,
    pub gap: f64,
    pub f_ub: f64,
    pub f_lb: f64,
    pub trace: Vec<BbTraceRow>,
    pub nodes: Vec<NodeRecord>,
    pub seed: u64,
}

fn lp_value(lp: &LinearProgram, tol: f64) -> Result<Option<(f64, DVector<f64>)>> {
    let sol = solve_lp(lp, tol)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some((sol.objective, sol.x))),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(ClearError::Unbounded("bounding LP".into())),
        LpStatus::Stalled => Err(ClearError::Stalled("bounding LP".into())),
    }
}

/// Ranges of `v_z` and `y_z` over a node, or `None` for an empty node.
/// The `y` ranges use the zonal formulation; `v_max` is the price cap of
/// the estimate, which is what the bounded bilinear program attains.
pub fn lpvy(inst: &MarketInstance, est: &ActiveEstimate, polytope: &Polytope, tol: f64) -> Result<Option<NodeBounds>> {
    let nz = inst.num_zones();
    let (a, b, a_eq, b_eq) = zonal_constraints(inst, est, polytope);
    let mut y_min = vec![0.0; nz];
    let mut y_max = vec![0.0; nz];
    for z in 0..nz {
        for (sign, slot) in [(1.0, &mut y_min), (-1.0, &mut y_max)] {
            let mut c = DVector::zeros(nz);
            c[z] = sign;
            let lp = LinearProgram::new(c, a.clone(), b.clone(), a_eq.clone(), b_eq.clone())?;
            match lp_value(&lp, tol)? {
                Some((f, _)) => slot[z] = sign * f,
                None => return Ok(None),
            }
        }
    }
    let caps = est.price_caps(inst);
    let v_min = (0..nz).map(|z| price_floor(inst, &est.sets[z], y_min[z])).collect();
    let v_max = caps;
    Ok(Some(NodeBounds { v_min, v_max, y_min, y_max }))
}

/// Smallest `v` with `v >= m_i x_i + a_i` for every listed player and
/// `sum x_i = y`, `0 <= x_i <= Q_i`: the lowest price at which the zone can
/// produce `y`.
fn price_floor(inst: &MarketInstance, members: &[usize], y: f64) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let players: Vec<_> = members.iter().map(|&i| &inst.players[i]).collect();
    let a_max = players.iter().map(|p| p.a).fold(f64::NEG_INFINITY, f64::max);
    let supply = |level: f64| -> f64 {
        players
            .iter()
            .map(|p| {
                if p.m > 0.0 {
                    ((level - p.a) / p.m).clamp(0.0, p.q)
                } else if level >= p.a {
                    p.q
                } else {
                    0.0
                }
            })
            .sum()
    };
    if supply(a_max) >= y {
        return a_max;
    }
    let (mut lo, mut hi) = (a_max, players.iter().map(|p| p.max_price()).fold(a_max, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if supply(mid) >= y {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// McCormick underestimator of `v y` anchored at `(v_b, y_b)`.
pub fn envelope(v_b: f64, y_b: f64, v: f64, y: f64) -> f64 {
    v_b * y + y_b * v - v_b * y_b
}

/// Envelope LP lower bound `sum_z w_z` for anchor `l` (1: lower corner,
/// 2: upper corner), with the zonal `w` values at its minimiser.
pub fn mccormick_lb(
    inst: &MarketInstance,
    est: &ActiveEstimate,
    polytope: &Polytope,
    bounds: &NodeBounds,
    l: u8,
    tol: f64,
) -> Result<Option<(f64, Vec<f64>)>> {
    let (vb, yb) = match l {
        1 => (&bounds.v_min, &bounds.y_min),
        2 => (&bounds.v_max, &bounds.y_max),
        _ => return Err(ClearError::Invalid(format!("envelope index {l}"))),
    };
    let cons = McConstraints::new(inst, est, polytope);
    let lay = &cons.layout;
    let mut c = DVector::zeros(lay.nvars());
    let mut constant = 0.0;
    for &z in &lay.zones {
        c[lay.v_col(z).unwrap()] = yb[z];
        constant -= vb[z] * yb[z];
    }
    for &i in &lay.players {
        c[lay.x_col(i).unwrap()] = vb[inst.players[i].zone];
    }
    let Some((f, sol)) = lp_value(&cons.lp(c)?, tol)? else {
        return Ok(None);
    };
    let (x, v) = lay.split(inst, &sol);
    let y = inst.aggregate(&x);
    let w = (0..inst.num_zones())
        .map(|z| if lay.v_col(z).is_some() { envelope(vb[z], yb[z], v[z], y[z]) } else { 0.0 })
        .collect();
    Ok(Some((f + constant, w)))
}

/// Best point known before processing a node.
#[derive(Clone, Debug)]
pub struct Incumbent {
    pub f: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Computes all node quantities. Returns a pruned node when the polytope
/// has no feasible point.
#[allow(clippy::too_many_arguments)]
pub fn cnq(
    inst: &MarketInstance,
    est: &ActiveEstimate,
    id: usize,
    parent: Option<&BBNode>,
    polytope: Polytope,
    r_delta: f64,
    hint: Option<&Incumbent>,
    settings: &BbSettings,
) -> Result<BBNode> {
    let nz = inst.num_zones();
    let mut node = BBNode {
        id,
        parent: parent.map(|p| p.id),
        polytope,
        f_ub: f64::INFINITY,
        x_sol: Vec::new(),
        v_sol: Vec::new(),
        y_sol: Vec::new(),
        f_lb: f64::INFINITY,
        bounds: None,
        y_c: Vec::new(),
        r_c: 0.0,
        s_d: vec![0.0; nz],
        status: NodeStatus::Pruned,
        closed: true,
    };
    let (y_c, r_c) = match slice_center(inst, est, &node.polytope) {
        Ok(c) => c,
        Err(ClearError::Infeasible(_)) => return Ok(node),
        Err(e) => {
            return Err(e);
        }
    };
    node.y_c = y_c;
    node.r_c = r_c;
    match run_ieqlp_on(inst, est, &node.polytope, &node.y_c, &settings.ub) {
        Ok(res) => {
            node.f_ub = res.f_best;
            node.v_sol = super::common::tight_prices(inst, est, &res.x);
            node.x_sol = res.x;
        }
        Err(ClearError::Infeasible(_)) => return Ok(node),
        Err(e) => return Err(e),
    }
    let inherited = parent
        .map(|p| Incumbent {
            f: p.f_ub,
            x: p.x_sol.clone(),
            v: p.v_sol.clone(),
        })
        .into_iter()
        .chain(hint.cloned());
    for cand in inherited {
        let y = inst.aggregate(&cand.x);
        if cand.f < node.f_ub && node.polytope.contains(&y, 1e-9) {
            node.f_ub = cand.f;
            node.x_sol = cand.x;
            node.v_sol = cand.v;
        }
    }
    node.y_sol = inst.aggregate(&node.x_sol);
    node.status = NodeStatus::ActiveLeaf;

    let bounds = lpvy(inst, est, &node.polytope, settings.lp_tol)?;
    let Some(bounds) = bounds else {
        node.status = NodeStatus::Pruned;
        return Ok(node);
    };
    node.closed = r_c < r_delta;
    if node.closed && settings.small_nodes == SmallNodeBound::CopyUpper {
        node.f_lb = node.f_ub;
    } else {
        let mut lb = f64::NEG_INFINITY;
        for l in [1, 2] {
            if let Some((f, _)) = mccormick_lb(inst, est, &node.polytope, &bounds, l, settings.lp_tol)? {
                lb = lb.max(f);
            }
        }
        if let Some(p) = parent {
            lb = lb.max(p.f_lb);
        }
        node.f_lb = lb.min(node.f_ub);
    }
    node.s_d = branch_direction(&node.y_sol, &node.y_c, &bounds);
    node.bounds = Some(bounds);
    Ok(node)
}

/// `(y_sol - y_c)/||y_sol - y_c||`, or the widest zonal axis projected onto
/// the balance hyperplane when the two points coincide.
pub fn branch_direction(y_sol: &[f64], y_c: &[f64], bounds: &NodeBounds) -> Vec<f64> {
    let n = y_c.len();
    let diff: Vec<f64> = y_sol.iter().zip(y_c).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm >= 1e-12 {
        return diff.iter().map(|a| a / norm).collect();
    }
    let widest = (0..n)
        .max_by(|&a, &b| {
            let wa = bounds.y_max[a] - bounds.y_min[a];
            let wb = bounds.y_max[b] - bounds.y_min[b];
            wa.partial_cmp(&wb).unwrap()
        })
        .unwrap_or(0);
    let mut dir = vec![-1.0 / n as f64; n];
    dir[widest] += 1.0;
    let norm = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm < 1e-12 {
        let mut e = vec![0.0; n];
        e[widest] = 1.0;
        return e;
    }
    dir.iter().map(|a| a / norm).collect()
}

/// Node-selection categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RnsRule {
    Oldest,
    Incumbent,
    LowestBound,
    Random,
}

/// Summary of a branchable leaf for selection.
#[derive(Clone, Copy, Debug)]
pub struct LeafInfo {
    pub id: usize,
    pub f_lb: f64,
}

/// Draws the category (0.6 / 0.1 / 0.2 / 0.1), then the node. The
/// incumbent rule falls back to the oldest leaf when the incumbent is not a
/// branchable leaf.
pub fn rns_select(leaves: &[LeafInfo], incumbent: Option<usize>, rng: &mut impl Rng) -> Option<(usize, RnsRule)> {
    if leaves.is_empty() {
        return None;
    }
    let oldest = leaves.iter().min_by_key(|l| l.id).unwrap().id;
    let u: f64 = rng.gen();
    let pick = if u < 0.6 {
        (oldest, RnsRule::Oldest)
    } else if u < 0.7 {
        match incumbent.filter(|id| leaves.iter().any(|l| l.id == *id)) {
            Some(id) => (id, RnsRule::Incumbent),
            None => (oldest, RnsRule::Oldest),
        }
    } else if u < 0.9 {
        let best = leaves
            .iter()
            .min_by(|a, b| a.f_lb.partial_cmp(&b.f_lb).unwrap().then(a.id.cmp(&b.id)))
            .unwrap();
        (best.id, RnsRule::LowestBound)
    } else {
        (leaves[rng.gen_range(0..leaves.len())].id, RnsRule::Random)
    };
    Some(pick)
}

/// Relative gap `2 (ub - lb) / (ub + lb)`; absolute gap scaled by
/// `max(1, |ub|)` when the denominator is not positive.
pub fn relative_gap(ub: f64, lb: f64) -> f64 {
    if !ub.is_finite() || !lb.is_finite() {
        return f64::INFINITY;
    }
    let den = ub + lb;
    if den > 1e-12 {
        (2.0 * (ub - lb) / den).max(0.0)
    } else {
        (ub - lb).max(0.0) / ub.abs().max(1.0)
    }
}

/// Runs the tree search on the instance polytope.
pub fn run_bbtree(inst: &MarketInstance, est: &ActiveEstimate, settings: &BbSettings) -> Result<BbResult> {
    let start = Instant::now();
    let r_delta = settings
        .r_delta
        .unwrap_or_else(|| 1e-4 * inst.demand.iter().map(|d| d * d).sum::<f64>().sqrt());
    let hint = if settings.swm_warm_start {
        clear_swm(inst, &SwmSettings::default()).ok().map(|o| Incumbent {
            f: mc_value(inst, est, &o.x),
            v: super::common::tight_prices(inst, est, &o.x),
            x: o.x,
        })
    } else {
        None
    };
    let root = cnq(inst, est, 0, None, inst.polytope.clone(), r_delta, hint.as_ref(), settings)?;
    if root.status == NodeStatus::Pruned {
        return Err(ClearError::Infeasible("no zonal quantities satisfy the network".into()));
    }
    let mut nodes = vec![root];
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut trace = Vec::new();
    let mut incumbent = 0usize;
    let mut f_ub = nodes[0].f_ub;
    let mut f_lb = nodes[0].f_lb;
    let mut gap = relative_gap(f_ub, f_lb);
    trace.push(BbTraceRow {
        iteration: 0,
        nodes: 1,
        f_ub,
        f_lb,
        gap,
    });
    let mut status = SolveStatus::Converged;
    let mut iteration = 0;
    while gap > settings.gap {
        if nodes.len() + 2 > settings.max_nodes {
            status = SolveStatus::GapNotClosed;
            break;
        }
        let leaves: Vec<LeafInfo> = nodes
            .iter()
            .filter(|n| n.status == NodeStatus::ActiveLeaf && !n.closed)
            .map(|n| LeafInfo { id: n.id, f_lb: n.f_lb })
            .collect();
        let Some((p, _)) = rns_select(&leaves, Some(incumbent), &mut rng) else {
            status = SolveStatus::GapNotClosed;
            break;
        };
        iteration += 1;
        let [c1, c2] = nodes[p].children_polytopes();
        let (id1, id2) = (nodes.len(), nodes.len() + 1);
        let parent = &nodes[p];
        let (k1, k2) = rayon::join(
            || cnq(inst, est, id1, Some(parent), c1, r_delta, None, settings),
            || cnq(inst, est, id2, Some(parent), c2, r_delta, None, settings),
        );
        let (k1, k2) = (k1?, k2?);
        nodes[p].status = NodeStatus::Branched;
        nodes.push(k1);
        nodes.push(k2);

        for n in &nodes {
            if n.status != NodeStatus::Pruned && n.f_ub < f_ub {
                f_ub = n.f_ub;
                incumbent = n.id;
            }
        }
        for n in nodes.iter_mut() {
            if n.status == NodeStatus::ActiveLeaf && n.f_lb > f_ub {
                n.status = NodeStatus::Pruned;
            }
        }
        let lb_now = nodes
            .iter()
            .filter(|n| n.status == NodeStatus::ActiveLeaf)
            .map(|n| n.f_lb)
            .fold(f64::INFINITY, f64::min);
        f_lb = f_lb.max(lb_now.min(f_ub));
        gap = relative_gap(f_ub, f_lb);
        trace.push(BbTraceRow {
            iteration,
            nodes: nodes.len(),
            f_ub,
            f_lb,
            gap,
        });
    }
    let best = &nodes[incumbent];
    let mut diag = Diagnostics::new("bbtree");
    diag.iterations = iteration;
    diag.indicator = gap;
    diag.status = status;
    diag.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    let outcome = ClearingOutcome::from_allocation(inst, best.x_sol.clone(), best.f_ub, diag, &Tolerances::default());
    let records = nodes
        .iter()
        .map(|n| NodeRecord {
            id: n.id,
            parent: n.parent,
            f_ub: n.f_ub,
            f_lb: n.f_lb,
            status: n.status,
        })
        .collect();
    Ok(BbResult {
        outcome,
        gap,
        f_ub,
        f_lb,
        trace,
        nodes: records,
        seed: settings.seed,
    })
}

/// Writes the node records as CSV.
pub fn write_node_csv<W: std::io::Write>(nodes: &[NodeRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "parent", "f_ub", "f_lb", "status"])?;
    for n in nodes {
        let status = match n.status {
            NodeStatus::ActiveLeaf => "active-leaf",
            NodeStatus::Branched => "branched",
            NodeStatus::Pruned => "pruned",
        };
        w.write_record([
            n.id.to_string(),
            n.parent.map(|p| p.to_string()).unwrap_or_default(),
            n.f_ub.to_string(),
            n.f_lb.to_string(),
            status.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
