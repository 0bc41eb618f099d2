//! Zonal stack curves and the iteratively bounded convex QP method.
//!
//! For a fixed zonal price `v` the optimal dispatch inside a zone is known
//! in closed form, so the minimal price at which a zone produces `y` is a
//! piecewise linear, nondecreasing function. On each piece
//! `v = alpha (y - Q_s) + beta`, which makes `v y` a convex quadratic; the
//! method solves the resulting QP over one piece per zone and moves the
//! pieces until the optimum lies strictly inside them.

use std::collections::HashSet;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::common::ActiveEstimate;
use super::ieqlp::slice_center;
use crate::error::{ClearError, Result};
use crate::kernel::{solve_cqp_with, IpmSettings, QuadraticProgram};
use crate::market::{ClearingOutcome, Diagnostics, MarketInstance, SolveStatus};
use crate::settings::Tolerances;

/// One linear piece of a zonal stack curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackSegment {
    pub v_lo: f64,
    pub v_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    /// `(sum 1/m_j)^-1` over marginal players; 0 on vertical pieces.
    pub alpha: f64,
    /// `alpha * sum a_j/m_j` over marginal players.
    pub beta: f64,
    /// Capacity of players dispatched in full.
    pub q_s: f64,
    pub inactive: Vec<usize>,
    pub marginal: Vec<usize>,
    pub full: Vec<usize>,
    /// No marginal player: the quantity stays at `q_s` across the price range.
    pub vertical: bool,
}

impl StackSegment {
    /// Minimal clearing price for quantity `y` on this piece.
    pub fn price(&self, y: f64) -> f64 {
        if self.vertical {
            self.v_lo
        } else {
            self.alpha * (y - self.q_s) + self.beta
        }
    }

    /// `alpha y^2 + (beta - alpha Q_s) y`, equal to `price(y) * y`.
    pub fn cost(&self, y: f64) -> f64 {
        self.alpha * y * y + (self.beta - self.alpha * self.q_s) * y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZonalStackCurve {
    pub zone: usize,
    /// Sorted distinct price breakpoints.
    pub breakpoints: Vec<f64>,
    /// Zonal quantity dispatched at each breakpoint price.
    pub quantities: Vec<f64>,
    pub segments: Vec<StackSegment>,
}

/// Total zonal dispatch at price `v` with every player at its optimum.
fn dispatch_at(inst: &MarketInstance, members: &[usize], v: f64) -> f64 {
    members
        .iter()
        .map(|&i| {
            let p = &inst.players[i];
            ((v - p.a) / p.m).clamp(0.0, p.q)
        })
        .sum()
}

/// Builds the stack curve of `zone`.
pub fn build_stack_curve(inst: &MarketInstance, zone: usize) -> Result<ZonalStackCurve> {
    let members = inst.zone_members(zone);
    if members.is_empty() {
        return Err(ClearError::Invalid(format!("zone {zone} has no players")));
    }
    let mut pts = vec![0.0];
    for &i in &members {
        let p = &inst.players[i];
        pts.push(p.a);
        pts.push(p.max_price());
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = pts.last().copied().unwrap_or(1.0).abs().max(1.0);
    let mut breakpoints: Vec<f64> = Vec::with_capacity(pts.len());
    for v in pts {
        if breakpoints.last().map_or(true, |&last| v - last > 1e-12 * scale) {
            breakpoints.push(v);
        }
    }
    let quantities: Vec<f64> = breakpoints.iter().map(|&v| dispatch_at(inst, &members, v)).collect();
    let mut segments = Vec::with_capacity(breakpoints.len().saturating_sub(1));
    for k in 0..breakpoints.len().saturating_sub(1) {
        let (v_lo, v_hi) = (breakpoints[k], breakpoints[k + 1]);
        let mid = 0.5 * (v_lo + v_hi);
        let (mut inactive, mut marginal, mut full) = (Vec::new(), Vec::new(), Vec::new());
        for &i in &members {
            let p = &inst.players[i];
            if mid < p.a {
                inactive.push(i);
            } else if mid < p.max_price() {
                marginal.push(i);
            } else {
                full.push(i);
            }
        }
        let q_s: f64 = full.iter().map(|&i| inst.players[i].q).sum();
        let (alpha, beta) = alpha_beta(inst, &marginal);
        segments.push(StackSegment {
            v_lo,
            v_hi,
            y_lo: quantities[k],
            y_hi: quantities[k + 1],
            alpha,
            beta,
            q_s,
            vertical: marginal.is_empty(),
            inactive,
            marginal,
            full,
        });
    }
    Ok(ZonalStackCurve {
        zone,
        breakpoints,
        quantities,
        segments,
    })
}

/// `(alpha, beta)` of a marginal set; `(0, 0)` when empty.
pub fn alpha_beta(inst: &MarketInstance, marginal: &[usize]) -> (f64, f64) {
    if marginal.is_empty() {
        return (0.0, 0.0);
    }
    let inv: f64 = marginal.iter().map(|&i| 1.0 / inst.players[i].m).sum();
    let weighted: f64 = marginal.iter().map(|&i| inst.players[i].a / inst.players[i].m).sum();
    let alpha = 1.0 / inv;
    (alpha, alpha * weighted)
}

impl ZonalStackCurve {
    pub fn capacity(&self) -> f64 {
        self.quantities.last().copied().unwrap_or(0.0)
    }

    /// Index of the non-vertical piece containing `y`, using half-open
    /// intervals `[y_lo, y_hi)` with the last piece closed.
    pub fn segment_lookup(&self, y: f64) -> Result<usize> {
        let cap = self.capacity();
        let slack = 1e-9 * cap.max(1.0);
        if y < -slack || y > cap + slack {
            return Err(ClearError::Invalid(format!(
                "quantity {y} outside [0, {cap}] in zone {}",
                self.zone
            )));
        }
        let mut last = None;
        for (k, s) in self.segments.iter().enumerate() {
            if s.vertical || s.y_hi <= s.y_lo {
                continue;
            }
            if y >= s.y_lo && y < s.y_hi {
                return Ok(k);
            }
            last = Some(k);
        }
        match last {
            Some(k) if y >= self.segments[k].y_lo => Ok(k),
            // below the first piece only through rounding
            _ => self
                .segments
                .iter()
                .position(|s| !s.vertical && s.y_hi > s.y_lo)
                .ok_or_else(|| ClearError::Invalid("stack curve has no sloped piece".into())),
        }
    }

    /// Minimal price at which the zone produces `y`.
    pub fn price_at(&self, y: f64) -> Result<f64> {
        let k = self.segment_lookup(y)?;
        Ok(self.segments[k].price(y))
    }

    /// Neighbouring sloped piece in the given direction.
    fn neighbour(&self, k: usize, up: bool) -> Option<usize> {
        let ok = |j: &usize| !self.segments[*j].vertical && self.segments[*j].y_hi > self.segments[*j].y_lo;
        if up {
            (k + 1..self.segments.len()).find(ok)
        } else {
            (0..k).rev().find(ok)
        }
    }

    /// `(v, y)` pairs at every breakpoint, for plotting.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.breakpoints.iter().copied().zip(self.quantities.iter().copied()).collect()
    }
}

/// Stack curves of every zone.
pub fn build_stack_curves(inst: &MarketInstance) -> Result<Vec<ZonalStackCurve>> {
    (0..inst.num_zones()).map(|z| build_stack_curve(inst, z)).collect()
}

/// `sum_z v_z(y_z) y_z` with minimal stack prices.
pub fn stack_objective(curves: &[ZonalStackCurve], y: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (c, &yz) in curves.iter().zip(y) {
        total += c.price_at(yz)? * yz;
    }
    Ok(total)
}

/// Piecewise-quadratic objective evaluated on given pieces.
pub fn segment_objective(segments: &[&StackSegment], y: &[f64]) -> f64 {
    segments.iter().zip(y).map(|(s, &yz)| s.cost(yz)).sum()
}

/// Convex QP over `y` restricted to one piece per zone.
pub fn build_sub_cqp(inst: &MarketInstance, segments: &[&StackSegment]) -> Result<QuadraticProgram> {
    let nz = inst.num_zones();
    if segments.len() != nz {
        return Err(ClearError::Dimension("one piece per zone required".into()));
    }
    let k = inst.polytope.rows();
    let mut a = DMatrix::zeros(k + 2 * nz, nz);
    let mut b = DVector::zeros(k + 2 * nz);
    if k > 0 {
        a.view_mut((0, 0), (k, nz)).copy_from(&inst.polytope.m);
        b.rows_mut(0, k).copy_from(&inst.polytope.b);
    }
    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    for (z, s) in segments.iter().enumerate() {
        a[(k + z, z)] = -1.0;
        b[k + z] = -s.y_lo;
        a[(k + nz + z, z)] = 1.0;
        b[k + nz + z] = s.y_hi;
        h[(z, z)] = 2.0 * s.alpha;
        g[z] = s.beta - s.alpha * s.q_s;
    }
    QuadraticProgram::new(
        h,
        g,
        a,
        b,
        DMatrix::from_element(1, nz, 1.0),
        DVector::from_element(1, inst.total_demand()),
    )
}

/// Dispatch inside one zone for quantity `y` on piece `seg`.
///
/// Marginal players share the price `alpha (y - Q_s) + beta`:
/// `x_i = (y' + sum_j (a_j - a_i)/m_j) / (m_i sum_j 1/m_j)` with
/// `y' = y - Q_s`.
pub fn recover_zone(inst: &MarketInstance, seg: &StackSegment, y: f64, x: &mut [f64]) -> Result<()> {
    for &i in &seg.inactive {
        x[i] = 0.0;
    }
    for &i in &seg.full {
        x[i] = inst.players[i].q;
    }
    if seg.marginal.is_empty() {
        return Ok(());
    }
    let reduced = y - seg.q_s;
    let inv: f64 = seg.marginal.iter().map(|&j| 1.0 / inst.players[j].m).sum();
    for &i in &seg.marginal {
        let p = &inst.players[i];
        let shift: f64 = seg
            .marginal
            .iter()
            .map(|&j| (inst.players[j].a - p.a) / inst.players[j].m)
            .sum();
        let xi = (reduced + shift) / (p.m * inv);
        let slack = 1e-7 * p.q.max(1.0);
        if xi < -slack || xi > p.q + slack {
            return Err(ClearError::Invalid(format!(
                "player {i}: recovered dispatch {xi} outside [0, {}]",
                p.q
            )));
        }
        x[i] = xi.clamp(0.0, p.q);
    }
    Ok(())
}

/// Full dispatch for zonal quantities `y` on the given pieces.
pub fn recover_x(inst: &MarketInstance, y: &[f64], segments: &[&StackSegment]) -> Result<Vec<f64>> {
    let mut x = vec![0.0; inst.num_players()];
    for (s, &yz) in segments.iter().zip(y) {
        recover_zone(inst, s, yz, &mut x)?;
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IbCqpSettings {
    /// Optimality tolerance of each sub-QP, also used to decide whether a
    /// solution sits on a piece boundary.
    pub cqp_tol: f64,
    pub max_outer: usize,
}

impl Default for IbCqpSettings {
    fn default() -> Self {
        Self {
            cqp_tol: 1e-4,
            max_outer: 200,
        }
    }
}

/// Runs the iteratively bounded QP method from the Chebyshev centre.
pub fn run_ibcqp(inst: &MarketInstance, settings: &IbCqpSettings) -> Result<ClearingOutcome> {
    let (y0, _) = slice_center(inst, &ActiveEstimate::all(inst), &inst.polytope)?;
    run_ibcqp_from(inst, &y0, settings)
}

/// Runs the method from a feasible starting point `y0`.
pub fn run_ibcqp_from(inst: &MarketInstance, y0: &[f64], settings: &IbCqpSettings) -> Result<ClearingOutcome> {
    let start = Instant::now();
    let curves = build_stack_curves(inst)?;
    let nz = inst.num_zones();
    let mut boxes: Vec<usize> = curves
        .iter()
        .zip(y0)
        .map(|(c, &y)| c.segment_lookup(y.clamp(0.0, c.capacity())))
        .collect::<Result<_>>()?;
    let ipm = IpmSettings {
        tol: settings.cqp_tol,
        feas_tol: 1e-10,
        max_iters: 200,
    };
    let mut y = y0.to_vec();
    let mut best: Option<(f64, Vec<f64>, Vec<usize>)> = None;
    let mut visited = HashSet::new();
    let mut status = SolveStatus::IterationCap;
    let mut indicator = f64::INFINITY;
    let mut outer = 0;
    let edge_tol = |bound: f64| settings.cqp_tol.clamp(1e-7, 1e-3) * (1.0 + bound.abs());
    while outer < settings.max_outer {
        outer += 1;
        visited.insert(boxes.clone());
        let segs: Vec<&StackSegment> = (0..nz).map(|z| &curves[z].segments[boxes[z]]).collect();
        let qp = build_sub_cqp(inst, &segs)?;
        let sol = match solve_cqp_with(&qp, &ipm) {
            Ok(s) => s,
            Err(e) if best.is_some() => {
                let _ = e;
                status = SolveStatus::Stalled;
                break;
            }
            Err(e) => return Err(e),
        };
        let mut y_new: Vec<f64> = sol.x.iter().copied().collect();
        for (z, s) in segs.iter().enumerate() {
            y_new[z] = y_new[z].clamp(s.y_lo, s.y_hi);
        }
        let dy: f64 = y.iter().zip(&y_new).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let ny = y_new.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        indicator = dy / ny;
        y = y_new;
        let f = segment_objective(&segs, &y);
        if best.as_ref().map_or(true, |(fb, _, _)| f < *fb) {
            best = Some((f, y.clone(), boxes.clone()));
        }
        let mut next = boxes.clone();
        let mut moved = false;
        for z in 0..nz {
            let s = segs[z];
            if (s.y_hi - y[z]).abs() <= edge_tol(s.y_hi) {
                if let Some(j) = curves[z].neighbour(boxes[z], true) {
                    next[z] = j;
                    y[z] = s.y_hi;
                    moved = true;
                }
            } else if (y[z] - s.y_lo).abs() <= edge_tol(s.y_lo) {
                if let Some(j) = curves[z].neighbour(boxes[z], false) {
                    next[z] = j;
                    y[z] = s.y_lo;
                    moved = true;
                }
            }
        }
        if !moved {
            status = SolveStatus::Converged;
            break;
        }
        if visited.contains(&next) {
            status = SolveStatus::Cycling;
            break;
        }
        boxes = next;
    }
    if outer >= settings.max_outer && status == SolveStatus::IterationCap {
        status = SolveStatus::Cycling;
    }
    let (_, y_best, boxes_best) = best.expect("at least one sub-QP");
    let segs: Vec<&StackSegment> = (0..nz).map(|z| &curves[z].segments[boxes_best[z]]).collect();
    let mut x = recover_x(inst, &y_best, &segs)?;
    super::common::clean_allocation(inst, &mut x);
    let objective = stack_objective(&curves, &inst.aggregate(&x))?;
    let mut diag = Diagnostics::new("ibcqp");
    diag.iterations = outer;
    diag.indicator = indicator;
    diag.status = status;
    diag.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ClearingOutcome::from_allocation(inst, x, objective, diag, &Tolerances::default()))
}
