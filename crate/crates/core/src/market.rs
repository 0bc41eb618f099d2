//! Market domain model: orders, instances, outcomes, and the price and
//! feasibility rules every clearing mechanism shares.
//!
//! Zonal quantities `y` are the per-zone sums of player allocations `x`
//! (`y = E x`). The network is a polytope `M y <= b` over `y` whose
//! right-hand side already includes the demand adjustment, so every solver
//! works with a single canonical representation.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ClearError, Result};
use crate::kernel::{solve_lp, LinearProgram, LpStatus};
use crate::settings::Tolerances;

/// A producer's linear marginal ask `lambda(x) = m x + a` on `[0, Q]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerOrder {
    pub id: String,
    pub zone: usize,
    pub m: f64,
    pub a: f64,
    #[serde(rename = "Q")]
    pub q: f64,
}

impl PlayerOrder {
    pub fn new(id: impl Into<String>, zone: usize, m: f64, a: f64, q: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(ClearError::Invalid(format!("nonpositive slope m = {m}")));
        }
        if !(a >= 0.0) {
            return Err(ClearError::Invalid(format!("negative intercept a = {a}")));
        }
        if !(q > 0.0) {
            return Err(ClearError::Invalid(format!("nonpositive capacity Q = {q}")));
        }
        Ok(Self {
            id: id.into(),
            zone,
            m,
            a,
            q,
        })
    }

    /// Marginal ask at quantity `x`.
    #[inline]
    pub fn marginal_price(&self, x: f64) -> f64 {
        self.m * x + self.a
    }

    /// Ask at full capacity.
    #[inline]
    pub fn max_price(&self) -> f64 {
        self.m * self.q + self.a
    }
}

/// Linear inequality region `{y : M y <= b}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRepr", into = "PolytopeRepr")]
pub struct Polytope {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<PolytopeRepr> for Polytope {
    type Error = String;

    fn try_from(r: PolytopeRepr) -> std::result::Result<Self, String> {
        let cols = r.m.first().map_or(0, Vec::len);
        if r.m.iter().any(|row| row.len() != cols) {
            return Err("polytope rows have unequal lengths".into());
        }
        if r.m.len() != r.b.len() {
            return Err(format!(
                "polytope has {} rows but {} right-hand sides",
                r.m.len(),
                r.b.len()
            ));
        }
        let m = DMatrix::from_fn(r.m.len(), cols, |i, j| r.m[i][j]);
        Ok(Polytope {
            m,
            b: DVector::from_vec(r.b),
        })
    }
}

impl From<Polytope> for PolytopeRepr {
    fn from(p: Polytope) -> Self {
        PolytopeRepr {
            m: (0..p.m.nrows())
                .map(|i| p.m.row(i).iter().copied().collect())
                .collect(),
            b: p.b.iter().copied().collect(),
        }
    }
}

impl Polytope {
    pub fn new(m: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if m.nrows() != b.len() {
            return Err(ClearError::Dimension(format!(
                "polytope has {} rows but {} right-hand sides",
                m.nrows(),
                b.len()
            )));
        }
        Ok(Self { m, b })
    }

    /// The unconstrained region in `dim` dimensions (no rows).
    pub fn empty_rows(dim: usize) -> Self {
        Self {
            m: DMatrix::zeros(0, dim),
            b: DVector::zeros(0),
        }
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    /// Largest violation `max_k (M_k y - b_k)`, or `-inf` without rows.
    pub fn max_violation(&self, y: &[f64]) -> f64 {
        let yv = DVector::from_column_slice(y);
        let r = &self.m * yv - &self.b;
        r.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        let yv = DVector::from_column_slice(y);
        let r = &self.m * yv;
        (0..self.rows()).all(|k| r[k] <= self.b[k] + tol * (1.0 + self.b[k].abs()))
    }

    /// Returns a copy with `row . y <= rhs` appended.
    pub fn with_row(&self, row: &[f64], rhs: f64) -> Self {
        let n = self.dim();
        let k = self.rows();
        let mut m = self.m.clone().resize_vertically(k + 1, 0.0);
        for j in 0..n {
            m[(k, j)] = row[j];
        }
        let mut b = self.b.clone().resize_vertically(k + 1, 0.0);
        b[k] = rhs;
        Self { m, b }
    }
}

/// A zonal day-ahead auction with inflexible demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub zones: Vec<String>,
    pub demand: Vec<f64>,
    pub players: Vec<PlayerOrder>,
    pub polytope: Polytope,
}

impl MarketInstance {
    pub fn num_zones(&self) -> usize {
        self.zones.len()
    }

    pub fn num_players(&self) -> usize {
        self.players.len()
    }

    pub fn total_demand(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Player indices located in `zone`, in instance order.
    pub fn zone_members(&self, zone: usize) -> Vec<usize> {
        (0..self.players.len())
            .filter(|&i| self.players[i].zone == zone)
            .collect()
    }

    pub fn zone_capacity(&self, zone: usize) -> f64 {
        self.players
            .iter()
            .filter(|p| p.zone == zone)
            .map(|p| p.q)
            .sum()
    }

    /// Zonal aggregation `y = E x`.
    pub fn aggregate(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.num_zones()];
        for (p, &xi) in self.players.iter().zip(x) {
            y[p.zone] += xi;
        }
        y
    }

    /// Aggregation matrix `E` (zones x players).
    pub fn aggregation_matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.num_zones(), self.num_players());
        for (i, p) in self.players.iter().enumerate() {
            e[(p.zone, i)] = 1.0;
        }
        e
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Copy of the instance with a different network polytope.
    pub fn with_polytope(&self, polytope: Polytope) -> Self {
        Self {
            polytope,
            ..self.clone()
        }
    }
}

/// One problem found by [`validate_instance`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Dimension,
    NonpositiveSlope,
    NegativeIntercept,
    NonpositiveCapacity,
    ZoneIndex,
    Demand,
    SupplyShortfall,
    Infeasible,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn violation(kind: ViolationKind, message: impl Into<String>) -> Violation {
    Violation {
        kind,
        message: message.into(),
    }
}

/// Lists everything wrong with `inst`; an empty list means the instance is
/// valid and feasible.
pub fn validate_instance(inst: &MarketInstance) -> Vec<Violation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    let nz = inst.num_zones();
    if inst.demand.len() != nz {
        out.push(violation(
            Dimension,
            format!("demand has {} entries for {} zones", inst.demand.len(), nz),
        ));
    }
    if inst.polytope.dim() != nz && inst.polytope.rows() > 0 {
        out.push(violation(
            Dimension,
            format!(
                "polytope has {} columns for {} zones",
                inst.polytope.dim(),
                nz
            ),
        ));
    }
    for p in &inst.players {
        if !(p.m > 0.0) {
            out.push(violation(
                NonpositiveSlope,
                format!("player {}: nonpositive slope m = {}", p.id, p.m),
            ));
        }
        if !(p.a >= 0.0) {
            out.push(violation(
                NegativeIntercept,
                format!("player {}: negative intercept a = {}", p.id, p.a),
            ));
        }
        if !(p.q > 0.0) {
            out.push(violation(
                NonpositiveCapacity,
                format!("player {}: nonpositive capacity Q = {}", p.id, p.q),
            ));
        }
        if p.zone >= nz {
            out.push(violation(
                ZoneIndex,
                format!("player {}: zone index {} out of range", p.id, p.zone),
            ));
        }
    }
    if inst.demand.iter().any(|&d| !(d >= 0.0)) {
        out.push(violation(Demand, "negative zonal demand"));
    }
    let d = inst.total_demand();
    if !(d > 0.0) {
        out.push(violation(Demand, "total demand must be positive"));
    }
    if !out.is_empty() {
        return out;
    }
    let supply: f64 = inst.players.iter().map(|p| p.q).sum();
    if supply < d {
        out.push(violation(
            SupplyShortfall,
            format!("infeasible: supply < demand ({supply} < {d})"),
        ));
        return out;
    }
    if let Err(e) = feasible_zonal_point(inst, &inst.polytope) {
        out.push(violation(Infeasible, format!("infeasible: {e}")));
    }
    out
}

/// Linear constraints on `y` implied by balance, capacity and the given
/// polytope: returns `(A_in, b_in, A_eq, b_eq)`.
pub(crate) fn zonal_region(
    inst: &MarketInstance,
    polytope: &Polytope,
    capacity: &[f64],
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let nz = inst.num_zones();
    let k = polytope.rows();
    let mut a = DMatrix::zeros(k + 2 * nz, nz);
    let mut b = DVector::zeros(k + 2 * nz);
    if k > 0 {
        a.view_mut((0, 0), (k, nz)).copy_from(&polytope.m);
        b.rows_mut(0, k).copy_from(&polytope.b);
    }
    for z in 0..nz {
        a[(k + z, z)] = -1.0;
        a[(k + nz + z, z)] = 1.0;
        b[k + nz + z] = capacity[z];
    }
    let a_eq = DMatrix::from_element(1, nz, 1.0);
    let b_eq = DVector::from_element(1, inst.total_demand());
    (a, b, a_eq, b_eq)
}

/// Finds some `y` with `M y <= b`, `1'y = d` and `0 <= y_z <= cap_z`.
pub fn feasible_zonal_point(inst: &MarketInstance, polytope: &Polytope) -> Result<Vec<f64>> {
    let nz = inst.num_zones();
    let caps: Vec<f64> = (0..nz).map(|z| inst.zone_capacity(z)).collect();
    let (a, b, a_eq, b_eq) = zonal_region(inst, polytope, &caps);
    let lp = LinearProgram::new(DVector::zeros(nz), a, b, a_eq, b_eq)?;
    let sol = solve_lp(&lp, 1e-9)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.x.iter().copied().collect()),
        LpStatus::Infeasible => Err(ClearError::Infeasible(
            "network polytope, balance and capacities have no common point".into(),
        )),
        s => Err(ClearError::Stalled(format!("feasibility check ended with {s:?}"))),
    }
}

/// Zonal prices derived from an allocation, plus per-zone empty flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZonalPrices {
    pub v: Vec<f64>,
    /// `true` where no player of the zone is dispatched; such zones get price 0.
    pub empty: Vec<bool>,
}

/// `v_z = max { lambda_i(x_i) : i in zone z, x_i > 0 }`, the minimum price
/// that clears each zone's dispatched quantity.
pub fn zonal_price_from_allocation(inst: &MarketInstance, x: &[f64], tol: &Tolerances) -> ZonalPrices {
    let nz = inst.num_zones();
    let mut v = vec![0.0; nz];
    let mut empty = vec![true; nz];
    for (p, &xi) in inst.players.iter().zip(x) {
        if tol.is_active(xi, p.q) {
            let lam = p.marginal_price(xi);
            if empty[p.zone] || lam > v[p.zone] {
                v[p.zone] = lam;
            }
            empty[p.zone] = false;
        }
    }
    ZonalPrices { v, empty }
}

/// Procurement cost `sum_z v_z y_z`.
pub fn total_cost(v: &[f64], y: &[f64]) -> Result<f64> {
    if v.len() != y.len() {
        return Err(ClearError::Dimension(format!(
            "{} prices for {} zonal quantities",
            v.len(),
            y.len()
        )));
    }
    Ok(v.iter().zip(y).map(|(a, b)| a * b).sum())
}

/// Per-zone partition of players by dispatch state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZoneActivity {
    /// `x_i = 0`.
    pub inactive: Vec<usize>,
    /// `0 < x_i < Q_i`.
    pub marginal: Vec<usize>,
    /// `x_i = Q_i`.
    pub full: Vec<usize>,
    /// No dispatched player; the zone price is 0 by convention.
    pub empty: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    IterationCap,
    Stalled,
    GapNotClosed,
    Cycling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub algorithm: String,
    pub iterations: usize,
    pub solve_time_ms: f64,
    /// Algorithm-specific convergence measure (relative step, gap, ...).
    pub indicator: f64,
    pub status: SolveStatus,
}

impl Diagnostics {
    pub fn new(algorithm: &str) -> Self {
        Self {
            algorithm: algorithm.to_string(),
            iterations: 0,
            solve_time_ms: 0.0,
            indicator: f64::NAN,
            status: SolveStatus::Converged,
        }
    }
}

/// Result of clearing an instance under some mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClearingOutcome {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub v: Vec<f64>,
    pub total_cost: f64,
    pub active: Vec<ZoneActivity>,
    /// Objective of the mechanism that produced the outcome.
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

impl ClearingOutcome {
    /// Builds an outcome from an allocation, deriving zonal quantities,
    /// prices, activity sets and the total cost.
    pub fn from_allocation(
        inst: &MarketInstance,
        x: Vec<f64>,
        objective: f64,
        diagnostics: Diagnostics,
        tol: &Tolerances,
    ) -> Self {
        let y = inst.aggregate(&x);
        let prices = zonal_price_from_allocation(inst, &x, tol);
        let mut active = vec![ZoneActivity::default(); inst.num_zones()];
        for (i, p) in inst.players.iter().enumerate() {
            let slot = &mut active[p.zone];
            if !tol.is_active(x[i], p.q) {
                slot.inactive.push(i);
            } else if x[i] >= p.q * (1.0 - tol.activity) {
                slot.full.push(i);
            } else {
                slot.marginal.push(i);
            }
        }
        for (z, slot) in active.iter_mut().enumerate() {
            slot.empty = prices.empty[z];
        }
        let total_cost = prices.v.iter().zip(&y).map(|(a, b)| a * b).sum();
        Self {
            x,
            y,
            v: prices.v,
            total_cost,
            active,
            objective,
            diagnostics,
        }
    }
}

/// Clips `x` to `[0, Q]` and spreads any balance residual over players with
/// headroom so that `1'x = d` holds to rounding.
pub fn repair_allocation(inst: &MarketInstance, x: &mut [f64]) {
    for (xi, p) in x.iter_mut().zip(&inst.players) {
        *xi = xi.clamp(0.0, p.q);
    }
    let d = inst.total_demand();
    for _ in 0..4 {
        let gap = d - x.iter().sum::<f64>();
        if gap.abs() <= 1e-13 * d.max(1.0) {
            return;
        }
        let room: Vec<f64> = x
            .iter()
            .zip(&inst.players)
            .map(|(&xi, p)| if gap > 0.0 { p.q - xi } else { xi })
            .collect();
        let total: f64 = room.iter().sum();
        if total <= 0.0 {
            return;
        }
        for (xi, r) in x.iter_mut().zip(&room) {
            *xi += gap * r / total;
        }
        for (xi, p) in x.iter_mut().zip(&inst.players) {
            *xi = xi.clamp(0.0, p.q);
        }
    }
}

/// Checks the outcome invariants (capacity, balance, network, stored cost).
/// Returns human-readable descriptions of every violation.
pub fn check_outcome(inst: &MarketInstance, out: &ClearingOutcome, tol: &Tolerances) -> Vec<String> {
    let mut bad = Vec::new();
    if out.x.len() != inst.num_players() || out.y.len() != inst.num_zones() {
        bad.push("outcome dimensions do not match the instance".to_string());
        return bad;
    }
    for (i, (p, &xi)) in inst.players.iter().zip(&out.x).enumerate() {
        let slack = tol.feasibility * p.q.max(1.0);
        if xi < -slack || xi > p.q + slack {
            bad.push(format!("player {i}: x = {xi} outside [0, {}]", p.q));
        }
    }
    let y = inst.aggregate(&out.x);
    for z in 0..inst.num_zones() {
        if (y[z] - out.y[z]).abs() > tol.feasibility * inst.total_demand().max(1.0) {
            bad.push(format!("zone {z}: y does not equal E x"));
        }
    }
    let d = inst.total_demand();
    let sum: f64 = out.x.iter().sum();
    if (sum - d).abs() > tol.feasibility * d.max(1.0) {
        bad.push(format!("balance violated: 1'x = {sum}, d = {d}"));
    }
    if !inst.polytope.contains(&out.y, tol.feasibility) {
        bad.push(format!(
            "network violated by {:.3e}",
            inst.polytope.max_violation(&out.y)
        ));
    }
    let cost: f64 = out.v.iter().zip(&out.y).map(|(a, b)| a * b).sum();
    if (cost - out.total_cost).abs() > 1e-9 * cost.abs().max(1.0) {
        bad.push("total_cost differs from sum v_z y_z".to_string());
    }
    bad
}

/// Players dispatched at a marginal ask above their zone's clearing price.
pub fn check_paradoxical_orders(
    inst: &MarketInstance,
    out: &ClearingOutcome,
    tol: &Tolerances,
) -> Vec<usize> {
    inst.players
        .iter()
        .enumerate()
        .filter(|(i, p)| {
            let xi = out.x[*i];
            tol.is_active(xi, p.q) && p.marginal_price(xi) > out.v[p.zone] + tol.price
        })
        .map(|(i, _)| i)
        .collect()
}

/// Lower/upper fractions of zonal demand bounding each zone's quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandBox {
    pub lo_frac: f64,
    pub hi_frac: f64,
}

impl Default for DemandBox {
    fn default() -> Self {
        Self {
            lo_frac: 0.4,
            hi_frac: 1.6,
        }
    }
}

/// Builds the network polytope from flow-based parameters:
/// `r <= PTDF (y - d) <= R` plus the demand box `lo d_z <= y_z <= hi d_z`.
pub fn assemble_polytope(
    ptdf: &DMatrix<f64>,
    ram_lb: &[f64],
    ram_ub: &[f64],
    demand: &[f64],
    demand_box: DemandBox,
) -> Result<Polytope> {
    let lines = ptdf.nrows();
    let nz = demand.len();
    if lines > 0 && ptdf.ncols() != nz {
        return Err(ClearError::Dimension(format!(
            "PTDF has {} columns for {} zones",
            ptdf.ncols(),
            nz
        )));
    }
    if ram_lb.len() != lines || ram_ub.len() != lines {
        return Err(ClearError::Dimension(
            "RAM vectors must have one entry per PTDF row".into(),
        ));
    }
    if let Some(k) = (0..lines).find(|&k| ram_lb[k] > ram_ub[k]) {
        return Err(ClearError::Invalid(format!(
            "lower margin exceeds upper margin on row {k}: {} > {}",
            ram_lb[k], ram_ub[k]
        )));
    }
    let d = DVector::from_column_slice(demand);
    let flow_at_demand = if lines > 0 {
        ptdf * &d
    } else {
        DVector::zeros(0)
    };
    let rows = 2 * lines + 2 * nz;
    let mut m = DMatrix::zeros(rows, nz);
    let mut b = DVector::zeros(rows);
    for k in 0..lines {
        for z in 0..nz {
            m[(k, z)] = -ptdf[(k, z)];
            m[(lines + k, z)] = ptdf[(k, z)];
        }
        b[k] = -ram_lb[k] - flow_at_demand[k];
        b[lines + k] = ram_ub[k] + flow_at_demand[k];
    }
    let base = 2 * lines;
    for z in 0..nz {
        m[(base + z, z)] = 1.0;
        b[base + z] = demand_box.hi_frac * demand[z];
        m[(base + nz + z, z)] = -1.0;
        b[base + nz + z] = -demand_box.lo_frac * demand[z];
    }
    Polytope::new(m, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_instance;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn bundled_fixture_is_valid() {
        let inst = fixture_instance();
        assert!(validate_instance(&inst).is_empty());
        assert_eq!(inst.demand, vec![10.0, 6.0, 6.0]);
    }

    #[test]
    fn zero_slope_is_reported() {
        let mut inst = fixture_instance();
        inst.players[3].m = 0.0;
        let v = validate_instance(&inst);
        assert!(v.iter().any(|v| v.kind == ViolationKind::NonpositiveSlope));
        assert!(v[0].message.contains("nonpositive slope"));
    }

    #[test]
    fn supply_shortfall_is_reported() {
        let mut inst = fixture_instance();
        // capacities summing to 20 < 22 with a permissive polytope
        for p in inst.players.iter_mut() {
            p.q = 20.0 / 6.0;
        }
        inst.polytope = Polytope::empty_rows(3);
        let v = validate_instance(&inst);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("infeasible: supply < demand"));
    }

    #[test]
    fn constructor_rejects_bad_orders() {
        assert!(PlayerOrder::new("p", 0, 0.0, 1.0, 1.0).is_err());
        assert!(PlayerOrder::new("p", 0, 1.0, -1.0, 1.0).is_err());
        assert!(PlayerOrder::new("p", 0, 1.0, 1.0, 0.0).is_err());
        assert!(PlayerOrder::new("p", 0, 1.0, 0.0, 1.0).is_ok());
    }

    fn two_player_zone() -> MarketInstance {
        MarketInstance {
            zones: vec!["A".into()],
            demand: vec![5.0],
            players: vec![
                PlayerOrder::new("p0", 0, 0.5, 3.0, 10.0).unwrap(),
                PlayerOrder::new("p1", 0, 0.5, 2.6, 10.0).unwrap(),
            ],
            polytope: Polytope::empty_rows(1),
        }
    }

    #[test]
    fn price_is_max_active_marginal_ask() {
        let inst = two_player_zone();
        let p = zonal_price_from_allocation(&inst, &[2.0, 3.0], &tol());
        assert!((p.v[0] - 4.1).abs() < 1e-12);
        assert!(!p.empty[0]);
        let rev = zonal_price_from_allocation(&inst, &[3.0, 2.0], &tol());
        assert!((rev.v[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn idle_zone_gets_zero_price_and_flag() {
        let mut inst = two_player_zone();
        inst.players.truncate(1);
        let p = zonal_price_from_allocation(&inst, &[0.0], &tol());
        assert_eq!(p.v, vec![0.0]);
        assert!(p.empty[0]);
    }

    #[test]
    fn total_cost_arithmetic() {
        assert_eq!(total_cost(&[4.0, 3.0, 2.0], &[10.0, 6.0, 6.0]).unwrap(), 70.0);
        assert_eq!(total_cost(&[0.0; 3], &[10.0, 6.0, 6.0]).unwrap(), 0.0);
        assert!(total_cost(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn paradoxical_order_detected() {
        let inst = two_player_zone();
        let x = vec![2.0, 3.0];
        let mut out =
            ClearingOutcome::from_allocation(&inst, x, 0.0, Diagnostics::new("test"), &tol());
        assert!(check_paradoxical_orders(&inst, &out, &tol()).is_empty());
        out.v[0] = 4.05;
        assert_eq!(check_paradoxical_orders(&inst, &out, &tol()), vec![1]);
    }

    #[test]
    fn single_ptdf_row_substitution() {
        let ptdf = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let p = assemble_polytope(
            &ptdf,
            &[-5.0],
            &[5.0],
            &[10.0, 6.0, 6.0],
            DemandBox::default(),
        )
        .unwrap();
        assert_eq!(p.rows(), 2 + 6);
        assert_eq!(p.m.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0, 0.0]);
        assert!((p.b[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.m.row(1).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, 0.0]);
        assert!((p.b[1] - 9.0).abs() < 1e-12);
        assert!((p.b[2] - 16.0).abs() < 1e-12);
        assert!((p.b[5] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn empty_ptdf_gives_box_only() {
        let p = assemble_polytope(
            &DMatrix::zeros(0, 3),
            &[],
            &[],
            &[10.0, 6.0, 6.0],
            DemandBox::default(),
        )
        .unwrap();
        assert_eq!(p.rows(), 6);
    }

    #[test]
    fn identity_ptdf_is_symmetric_band() {
        let d = [10.0, 6.0, 6.0];
        let p = assemble_polytope(
            &DMatrix::identity(3, 3),
            &[-2.0; 3],
            &[2.0; 3],
            &d,
            DemandBox { lo_frac: 0.0, hi_frac: 10.0 },
        )
        .unwrap();
        for z in 0..3 {
            // -y_z <= 2 - d_z  and  y_z <= 2 + d_z
            assert!((p.b[z] - (2.0 - d[z])).abs() < 1e-12);
            assert!((p.b[3 + z] - (2.0 + d[z])).abs() < 1e-12);
        }
    }

    #[test]
    fn inverted_margins_rejected() {
        let r = assemble_polytope(
            &DMatrix::identity(1, 1),
            &[1.0],
            &[0.0],
            &[1.0],
            DemandBox::default(),
        );
        assert!(matches!(r, Err(ClearError::Invalid(_))));
    }

    #[test]
    fn json_field_names_roundtrip() {
        let inst = fixture_instance();
        let text = inst.to_json().unwrap();
        assert!(text.contains("\"Q\""));
        assert!(text.contains("\"M\""));
        let back = MarketInstance::from_json(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn repair_restores_balance() {
        let inst = fixture_instance();
        let mut x = vec![3.6, 4.4, 3.075, 3.925, 3.0 + 1e-9, 4.0];
        repair_allocation(&inst, &mut x);
        let s: f64 = x.iter().sum();
        assert!((s - 22.0).abs() < 1e-12);
        assert!(x[4] <= 3.0);
    }
}
