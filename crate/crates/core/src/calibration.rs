//! Fitting per-zone cost scales to observed price series, and the mapping
//! from fuel base costs to linear ask curves.
//!
//! Each zone `z` carries a slope scale `s_c[z]` and an intercept scale
//! `s_b[z]`; clearing uses `m -> s_c m` and `a -> s_b a` for every player of
//! the zone. The fit minimises
//! `F(s) = (1/N_T) sum_t sum_z (v_{z,t}(s) - P_{z,t})^2`.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cm::{run_ibcqp, IbCqpSettings};
use crate::error::{ClearError, Result};
use crate::market::{assemble_polytope, validate_instance, ClearingOutcome, DemandBox, MarketInstance};
use crate::settings::Tolerances;
use crate::swm::{clear_swm, SwmSettings};

/// Per-zone multipliers on order slopes and intercepts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostScales {
    pub s_c: Vec<f64>,
    pub s_b: Vec<f64>,
}

impl CostScales {
    pub fn ones(zones: usize) -> Self {
        Self {
            s_c: vec![1.0; zones],
            s_b: vec![1.0; zones],
        }
    }

    pub fn zones(&self) -> usize {
        self.s_c.len()
    }

    /// Copy of `inst` with every order of zone `z` scaled.
    pub fn apply(&self, inst: &MarketInstance) -> Result<MarketInstance> {
        if self.s_c.len() != inst.num_zones() || self.s_b.len() != inst.num_zones() {
            return Err(ClearError::Dimension(format!(
                "{} scale pairs for {} zones",
                self.s_c.len().min(self.s_b.len()),
                inst.num_zones()
            )));
        }
        if self.s_c.iter().chain(&self.s_b).any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(ClearError::Invalid("cost scales must be positive".into()));
        }
        let mut out = inst.clone();
        for p in &mut out.players {
            p.m *= self.s_c[p.zone];
            p.a *= self.s_b[p.zone];
        }
        Ok(out)
    }

    fn to_vec(&self) -> Vec<f64> {
        self.s_c.iter().chain(&self.s_b).copied().collect()
    }

    fn from_vec(v: &[f64]) -> Self {
        let n = v.len() / 2;
        Self {
            s_c: v[..n].to_vec(),
            s_b: v[n..].to_vec(),
        }
    }
}

/// Time-indexed instances and per-zone target prices. A `NaN` target is
/// treated as missing.
#[derive(Clone, Debug)]
pub struct CalibrationSeries {
    pub instances: Vec<MarketInstance>,
    pub targets: Vec<Vec<f64>>,
}

impl CalibrationSeries {
    pub fn new(instances: Vec<MarketInstance>, targets: Vec<Vec<f64>>) -> Result<Self> {
        if instances.is_empty() {
            return Err(ClearError::Invalid("calibration series is empty".into()));
        }
        if instances.len() != targets.len() {
            return Err(ClearError::Dimension(format!(
                "{} instances for {} target rows",
                instances.len(),
                targets.len()
            )));
        }
        let nz = instances[0].num_zones();
        for (t, (inst, p)) in instances.iter().zip(&targets).enumerate() {
            if inst.num_zones() != nz || p.len() != nz {
                return Err(ClearError::Dimension(format!("step {t} has a different zone count")));
            }
            if let Some(v) = validate_instance(inst).first() {
                return Err(ClearError::Invalid(format!("step {t}: {}", v.message)));
            }
        }
        Ok(Self { instances, targets })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn zones(&self) -> usize {
        self.instances[0].num_zones()
    }

    /// Instances from a directory of per-step JSON files (sorted by file
    /// name) or from a single file holding a JSON array.
    pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<MarketInstance>> {
        let path = path.as_ref();
        if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .collect();
            files.sort();
            files.iter().map(MarketInstance::load).collect()
        } else {
            let text = std::fs::read_to_string(path)?;
            Ok(serde_json::from_str(&text)?)
        }
    }

    /// Targets from CSV rows `t,zone,price`; `zone` is an index or a zone
    /// name. Steps or zones without a row stay missing.
    pub fn read_targets<R: Read>(reader: R, zones: &[String], steps: usize) -> Result<Vec<Vec<f64>>> {
        #[derive(Deserialize)]
        struct Row {
            t: usize,
            zone: String,
            price: f64,
        }
        let mut out = vec![vec![f64::NAN; zones.len()]; steps];
        let mut rdr = csv::Reader::from_reader(reader);
        for row in rdr.deserialize() {
            let row: Row = row?;
            let z = match row.zone.parse::<usize>() {
                Ok(z) => z,
                Err(_) => zones
                    .iter()
                    .position(|n| *n == row.zone)
                    .ok_or_else(|| ClearError::Invalid(format!("unknown zone '{}'", row.zone)))?,
            };
            if row.t >= steps || z >= zones.len() {
                return Err(ClearError::Dimension(format!("target ({}, {}) out of range", row.t, row.zone)));
            }
            out[row.t][z] = row.price;
        }
        Ok(out)
    }
}

/// Generation technologies with a documented cost-growth factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuelType {
    Gas,
    Coal,
    Nuclear,
    WindSolar,
    HydroRunOfRiver,
}

impl FuelType {
    /// Constant base cost, where the technology has one.
    pub fn base_cost(self) -> Option<f64> {
        match self {
            FuelType::Nuclear => Some(13.8),
            FuelType::WindSolar => Some(0.5),
            FuelType::HydroRunOfRiver => Some(8.45),
            FuelType::Gas | FuelType::Coal => None,
        }
    }

    pub fn growth(self) -> f64 {
        match self {
            FuelType::Gas => 0.2,
            FuelType::Coal => 0.4,
            FuelType::Nuclear => 0.8,
            FuelType::WindSolar => 0.05,
            FuelType::HydroRunOfRiver => 0.1,
        }
    }

    /// Spec with the tabulated factors; `k` is required for fuels whose base
    /// cost follows a market price.
    pub fn spec(self, k: Option<Vec<f64>>) -> Result<FuelCostSpec> {
        let k = match (k, self.base_cost()) {
            (Some(k), _) => k,
            (None, Some(c)) => vec![c],
            (None, None) => return Err(ClearError::Invalid(format!("{self:?} needs a base-cost series"))),
        };
        FuelCostSpec::new(k, 0.5, self.growth())
    }
}

/// Ask model `lambda(x) = k (1 + n (x/Q - f)/(1 - f))`: the ask equals the
/// base cost `k` at `x = f Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuelCostSpec {
    /// Base cost per step; a single entry is used for every step.
    pub k: Vec<f64>,
    pub f: f64,
    pub n: f64,
}

impl FuelCostSpec {
    pub fn new(k: Vec<f64>, f: f64, n: f64) -> Result<Self> {
        if k.is_empty() {
            return Err(ClearError::Invalid("base-cost series is empty".into()));
        }
        if !(f > 0.0 && f < 1.0) {
            return Err(ClearError::Invalid(format!("f must lie in (0, 1), got {f}")));
        }
        if !(0.0..=1.0).contains(&n) {
            return Err(ClearError::Invalid(format!("n must lie in [0, 1], got {n}")));
        }
        Ok(Self { k, f, n })
    }

    pub fn base_cost(&self, t: usize) -> f64 {
        if self.k.len() == 1 {
            self.k[0]
        } else {
            self.k[t.min(self.k.len() - 1)]
        }
    }
}

/// Intercept `b` and slope `c` of the ask curve at step `t`.
pub fn orders_from_fuel(spec: &FuelCostSpec, q: f64, t: usize) -> Result<(f64, f64)> {
    if !(spec.f > 0.0 && spec.f < 1.0) {
        return Err(ClearError::Invalid(format!("f must lie in (0, 1), got {}", spec.f)));
    }
    if !(q > 0.0) {
        return Err(ClearError::Invalid(format!("capacity must be positive, got {q}")));
    }
    let k = spec.base_cost(t);
    let f = spec.f;
    let b = k * (1.0 - spec.n * f / (1.0 - f));
    let c = spec.n * k / ((1.0 - f) * q);
    Ok((b, c))
}

/// Clearing mechanism behind the fitted prices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Swm,
    /// Cost minimisation through the stack-curve method.
    Cm,
}

/// How `dv_z/ds` is formed from the clearing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientForm {
    /// `(c_k x_k, b_k)` of the highest-priced active player `k`.
    MarginalPlayer,
    /// Pools every player strictly inside its bounds at the zone price:
    /// `(alpha sum x, alpha sum b/c)` with `alpha = 1/sum(1/c)`. Equal to
    /// the single-player form when one player sets the price.
    MarginalSet,
}

/// Clears `inst` under `mechanism`.
pub fn clear_with(inst: &MarketInstance, mechanism: Mechanism) -> Result<ClearingOutcome> {
    match mechanism {
        Mechanism::Swm => clear_swm(inst, &SwmSettings::default()),
        Mechanism::Cm => run_ibcqp(inst, &IbCqpSettings::default()),
    }
}

/// Price sensitivities of one zone with respect to `(s_c, s_b)`.
fn zone_jacobian(inst: &MarketInstance, out: &ClearingOutcome, scaled: &MarketInstance, z: usize, form: GradientForm) -> (f64, f64) {
    let tol = Tolerances::default();
    if out.active[z].empty {
        return (0.0, 0.0);
    }
    let v = out.v[z];
    if form == GradientForm::MarginalSet {
        let set: Vec<usize> = out.active[z]
            .marginal
            .iter()
            .copied()
            .filter(|&i| (scaled.players[i].marginal_price(out.x[i]) - v).abs() <= 1e-7 * (1.0 + v.abs()))
            .collect();
        if !set.is_empty() {
            let inv: f64 = set.iter().map(|&i| 1.0 / inst.players[i].m).sum();
            let alpha = 1.0 / inv;
            let xs: f64 = set.iter().map(|&i| out.x[i]).sum();
            let bs: f64 = set.iter().map(|&i| inst.players[i].a / inst.players[i].m).sum();
            return (alpha * xs, alpha * bs);
        }
    }
    let k = inst
        .zone_members(z)
        .into_iter()
        .filter(|&i| tol.is_active(out.x[i], inst.players[i].q))
        .max_by(|&i, &j| {
            scaled.players[i]
                .marginal_price(out.x[i])
                .total_cmp(&scaled.players[j].marginal_price(out.x[j]))
        });
    match k {
        Some(k) => (inst.players[k].m * out.x[k], inst.players[k].a),
        None => (0.0, 0.0),
    }
}

/// Objective, gradient and Gauss-Newton blocks at one scale vector.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub f: f64,
    /// `dF/ds_c` followed by `dF/ds_b`.
    pub grad: Vec<f64>,
    /// Per zone `[[cc, cb], [cb, bb]]`, scaled by `2/N_T`.
    pub blocks: Vec<[[f64; 2]; 2]>,
    /// Model prices per step; empty for skipped steps.
    pub prices: Vec<Vec<f64>>,
    /// Steps whose clearing failed.
    pub skipped: Vec<usize>,
}

/// Clears every step with scaled costs and accumulates `F`, its gradient
/// and the Gauss-Newton Hessian blocks. Failed steps are skipped and listed.
pub fn evaluate(series: &CalibrationSeries, scales: &CostScales, mechanism: Mechanism, form: GradientForm) -> Result<Evaluation> {
    let nz = series.zones();
    if scales.zones() != nz || scales.s_b.len() != nz {
        return Err(ClearError::Dimension(format!("{} scale pairs for {nz} zones", scales.zones())));
    }
    let per_step: Vec<Option<(Vec<f64>, Vec<(f64, f64)>)>> = series
        .instances
        .par_iter()
        .map(|inst| -> Result<Option<(Vec<f64>, Vec<(f64, f64)>)>> {
            let scaled = scales.apply(inst)?;
            let out = match clear_with(&scaled, mechanism) {
                Ok(out) => out,
                Err(_) => return Ok(None),
            };
            let jac = (0..nz).map(|z| zone_jacobian(inst, &out, &scaled, z, form)).collect();
            Ok(Some((out.v, jac)))
        })
        .collect::<Result<_>>()?;
    let used = per_step.iter().filter(|s| s.is_some()).count();
    if used == 0 {
        return Err(ClearError::Stalled("every step of the series failed to clear".into()));
    }
    let norm = 1.0 / used as f64;
    let mut f = 0.0;
    let mut grad = vec![0.0; 2 * nz];
    let mut blocks = vec![[[0.0; 2]; 2]; nz];
    let mut prices = Vec::with_capacity(series.len());
    let mut skipped = Vec::new();
    for (t, step) in per_step.into_iter().enumerate() {
        let Some((v, jac)) = step else {
            skipped.push(t);
            prices.push(Vec::new());
            continue;
        };
        for z in 0..nz {
            let p = series.targets[t][z];
            if p.is_nan() {
                continue;
            }
            let r = v[z] - p;
            let (jc, jb) = jac[z];
            f += norm * r * r;
            grad[z] += 2.0 * norm * r * jc;
            grad[nz + z] += 2.0 * norm * r * jb;
            let blk = &mut blocks[z];
            blk[0][0] += 2.0 * norm * jc * jc;
            blk[0][1] += 2.0 * norm * jc * jb;
            blk[1][0] += 2.0 * norm * jc * jb;
            blk[1][1] += 2.0 * norm * jb * jb;
        }
        prices.push(v);
    }
    Ok(Evaluation {
        f,
        grad,
        blocks,
        prices,
        skipped,
    })
}

/// `F(s)` and its gradient (`dF/ds_c` then `dF/ds_b`), using the
/// marginal-player derivative.
pub fn objective_and_gradient(series: &CalibrationSeries, scales: &CostScales, mechanism: Mechanism) -> Result<(f64, Vec<f64>)> {
    let e = evaluate(series, scales, mechanism, GradientForm::MarginalPlayer)?;
    Ok((e.f, e.grad))
}

/// Per-zone Gauss-Newton blocks `(2/N_T) sum_t J J'` with
/// `J = (c_k x_k, b_k)`.
pub fn hessian_blocks(series: &CalibrationSeries, scales: &CostScales, mechanism: Mechanism) -> Result<Vec<[[f64; 2]; 2]>> {
    Ok(evaluate(series, scales, mechanism, GradientForm::MarginalPlayer)?.blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMethod {
    GradientDescent,
    Newton,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FitSettings {
    pub max_iters: usize,
    pub method: FitMethod,
    pub mechanism: Mechanism,
    pub gradient: GradientForm,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo: f64,
    pub max_halvings: usize,
    /// Stop once the largest gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop once `F` drops below this.
    pub f_tol: f64,
    /// Scales are projected onto `[min_scale, inf)`.
    pub min_scale: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            max_iters: 500,
            method: FitMethod::Newton,
            mechanism: Mechanism::Swm,
            gradient: GradientForm::MarginalPlayer,
            armijo: 1e-4,
            max_halvings: 40,
            grad_tol: 1e-10,
            f_tol: 1e-20,
            min_scale: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Converged,
    IterationCap,
    /// No step length gave sufficient decrease.
    LineSearchFailed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub scales: CostScales,
    /// `F` at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub status: FitStatus,
    /// Mean absolute error per zone.
    pub mae: Vec<f64>,
    /// Mean absolute error over mean target per zone.
    pub rel_error: Vec<f64>,
    /// Steps that failed to clear at the final scales.
    pub skipped: Vec<usize>,
}

/// Per-zone `e_z = mean |v - P|` and `e_z / mean P` over steps with both a
/// model price and a target.
pub fn error_metrics(targets: &[Vec<f64>], prices: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let nz = targets.first().map_or(0, |t| t.len());
    let mut mae = vec![0.0; nz];
    let mut rel = vec![0.0; nz];
    for z in 0..nz {
        let pairs: Vec<(f64, f64)> = targets
            .iter()
            .zip(prices)
            .filter(|(p, v)| !v.is_empty() && !p[z].is_nan())
            .map(|(p, v)| (v[z], p[z]))
            .collect();
        if pairs.is_empty() {
            mae[z] = f64::NAN;
            rel[z] = f64::NAN;
            continue;
        }
        let n = pairs.len() as f64;
        mae[z] = pairs.iter().map(|(v, p)| (v - p).abs()).sum::<f64>() / n;
        let mean_p = pairs.iter().map(|(_, p)| p).sum::<f64>() / n;
        rel[z] = mae[z] / mean_p;
    }
    (mae, rel)
}

fn newton_direction(e: &Evaluation, nz: usize) -> Vec<f64> {
    let mut p: Vec<f64> = e.grad.iter().map(|g| -g).collect();
    for z in 0..nz {
        let [[h00, h01], [h10, h11]] = e.blocks[z];
        let shift = 1e-10 * (h00 + h11).max(1e-300);
        let (a, b, c, d) = (h00 + shift, h01, h10, h11 + shift);
        let det = a * d - b * c;
        if det > 1e-14 * (a * d).abs().max(1e-300) {
            let (g0, g1) = (e.grad[z], e.grad[nz + z]);
            p[z] = -(d * g0 - b * g1) / det;
            p[nz + z] = -(-c * g0 + a * g1) / det;
        }
    }
    p
}

/// Fits the scales from `s = 1` by gradient descent or Gauss-Newton steps,
/// both with Armijo backtracking (halving) and projection onto positive
/// scales.
pub fn fit_scales(series: &CalibrationSeries, settings: &FitSettings) -> Result<FitReport> {
    let nz = series.zones();
    let eval = |s: &[f64]| evaluate(series, &CostScales::from_vec(s), settings.mechanism, settings.gradient);
    let project = |s: &mut Vec<f64>| {
        for v in s.iter_mut() {
            *v = v.max(settings.min_scale);
        }
    };
    let mut s = CostScales::ones(nz).to_vec();
    let mut cur = eval(&s)?;
    let mut trace = vec![cur.f];
    let mut status = FitStatus::IterationCap;
    let mut iterations = 0;
    let mut step0 = 1.0;
    for _ in 0..settings.max_iters {
        let gmax = cur.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax <= settings.grad_tol || cur.f <= settings.f_tol {
            status = FitStatus::Converged;
            break;
        }
        let mut dir = match settings.method {
            FitMethod::GradientDescent => cur.grad.iter().map(|g| -g).collect(),
            FitMethod::Newton => newton_direction(&cur, nz),
        };
        let mut slope: f64 = dir.iter().zip(&cur.grad).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            dir = cur.grad.iter().map(|g| -g).collect();
            slope = -cur.grad.iter().map(|g| g * g).sum::<f64>();
        }
        let mut t = match settings.method {
            FitMethod::GradientDescent => step0,
            FitMethod::Newton => 1.0,
        };
        let mut accepted = None;
        for _ in 0..=settings.max_halvings {
            let mut trial: Vec<f64> = s.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            project(&mut trial);
            // projected steps are checked against the actual displacement
            let moved: f64 = trial.iter().zip(&s).zip(&cur.grad).map(|((a, b), g)| (a - b) * g).sum();
            let decrease = settings.armijo * moved.min(t * slope);
            if let Ok(next) = eval(&trial) {
                if next.f <= cur.f + decrease {
                    accepted = Some((trial, next));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            status = FitStatus::LineSearchFailed;
            break;
        };
        iterations += 1;
        step0 = (2.0 * t).min(1e6);
        let drop = cur.f - next.f;
        s = trial;
        cur = next;
        trace.push(cur.f);
        if drop <= 1e-15 * cur.f.max(1e-300) {
            status = FitStatus::Converged;
            break;
        }
    }
    let (mae, rel_error) = error_metrics(&series.targets, &cur.prices);
    Ok(FitReport {
        scales: CostScales::from_vec(&s),
        trace,
        iterations,
        status,
        mae,
        rel_error,
        skipped: cur.skipped,
    })
}

/// Series of `steps` perturbed copies of `base`: zonal demands are drawn
/// from `[0.7, 1.3]` times the base demand (capped at 90% of zonal
/// capacity), and each zone's net position is held within `+-band` of its
/// demand. Targets are the prices cleared at `truth`.
pub fn synthetic_series(
    base: &MarketInstance,
    steps: usize,
    truth: &CostScales,
    mechanism: Mechanism,
    band: f64,
    seed: u64,
) -> Result<CalibrationSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nz = base.num_zones();
    let empty = nalgebra::DMatrix::zeros(0, nz);
    let mut instances = Vec::with_capacity(steps);
    for _ in 0..steps {
        let demand: Vec<f64> = (0..nz)
            .map(|z| (base.demand[z] * rng.gen_range(0.7..1.3)).min(0.9 * base.zone_capacity(z)))
            .collect();
        let polytope = assemble_polytope(
            &empty,
            &[],
            &[],
            &demand,
            DemandBox {
                lo_frac: 1.0 - band,
                hi_frac: 1.0 + band,
            },
        )?;
        instances.push(MarketInstance {
            demand,
            polytope,
            ..base.clone()
        });
    }
    let targets = instances
        .par_iter()
        .map(|inst| Ok(clear_with(&truth.apply(inst)?, mechanism)?.v))
        .collect::<Result<Vec<_>>>()?;
    CalibrationSeries::new(instances, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::fixture_instance;
    use crate::market::{PlayerOrder, Polytope};

    #[test]
    fn fuel_mapping_example() {
        let spec = FuelCostSpec::new(vec![30.0], 0.5, 0.2).unwrap();
        let (b, c) = orders_from_fuel(&spec, 10.0, 0).unwrap();
        assert!((b - 24.0).abs() < 1e-12);
        assert!((c - 1.2).abs() < 1e-12);
        // ask at f Q equals the base cost
        assert!((b + c * 5.0 - 30.0).abs() < 1e-12);
    }

    #[test]
    fn flat_ask_without_growth() {
        let spec = FuelCostSpec::new(vec![17.0], 0.5, 0.0).unwrap();
        let (b, c) = orders_from_fuel(&spec, 3.0, 0).unwrap();
        assert_eq!((b, c), (17.0, 0.0));
    }

    #[test]
    fn fuel_table() {
        let nuclear = FuelType::Nuclear.spec(None).unwrap();
        assert_eq!((nuclear.k[0], nuclear.n), (13.8, 0.8));
        assert_eq!(FuelType::HydroRunOfRiver.spec(None).unwrap().k[0], 8.45);
        assert_eq!(FuelType::WindSolar.growth(), 0.05);
        assert!(FuelType::Gas.spec(None).is_err());
        assert_eq!(FuelType::Coal.spec(Some(vec![40.0])).unwrap().n, 0.4);
    }

    #[test]
    fn bad_fraction_rejected() {
        assert!(FuelCostSpec::new(vec![1.0], 1.0, 0.2).is_err());
        let spec = FuelCostSpec { k: vec![1.0], f: 1.0, n: 0.2 };
        assert!(orders_from_fuel(&spec, 1.0, 0).is_err());
    }

    #[test]
    fn base_cost_series_indexing() {
        let spec = FuelCostSpec::new(vec![10.0, 20.0], 0.5, 0.2).unwrap();
        assert_eq!(orders_from_fuel(&spec, 1.0, 1).unwrap().0, 16.0);
    }

    fn one_zone(demand: f64) -> MarketInstance {
        MarketInstance {
            zones: vec!["Z".into()],
            demand: vec![demand],
            players: vec![
                PlayerOrder::new("a", 0, 0.5, 1.0, 2.0).unwrap(),
                PlayerOrder::new("b", 0, 1.0, 3.0, 4.0).unwrap(),
            ],
            polytope: Polytope::empty_rows(1),
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let inst = fixture_instance();
        let v = clear_with(&inst, Mechanism::Swm).unwrap().v;
        let series = CalibrationSeries::new(vec![inst], vec![v]).unwrap();
        let (f, g) = objective_and_gradient(&series, &CostScales::ones(3), Mechanism::Swm).unwrap();
        assert!(f < 1e-20);
        assert!(g.iter().all(|g| g.abs() < 1e-9));
    }

    #[test]
    fn single_observation_block() {
        // player b marginal at x = 2: c x = 2, b = 3
        let inst = one_zone(4.0);
        let series = CalibrationSeries::new(vec![inst], vec![vec![0.0]]).unwrap();
        let blocks = hessian_blocks(&series, &CostScales::ones(1), Mechanism::Swm).unwrap();
        let raw: Vec<f64> = blocks[0].iter().flatten().map(|h| h / 2.0).collect();
        for (a, b) in raw.iter().zip([4.0, 6.0, 6.0, 9.0]) {
            assert!((a - b).abs() < 1e-6, "{raw:?}");
        }
        let det = blocks[0][0][0] * blocks[0][1][1] - blocks[0][0][1] * blocks[0][1][0];
        assert!(det.abs() < 1e-6);
    }

    #[test]
    fn doubling_targets_raises_objective() {
        let inst = one_zone(4.0);
        let v = clear_with(&inst, Mechanism::Swm).unwrap().v;
        let s = CostScales::ones(1);
        let fit = CalibrationSeries::new(vec![inst.clone()], vec![v.clone()]).unwrap();
        let off = CalibrationSeries::new(vec![inst], vec![vec![2.0 * v[0]]]).unwrap();
        let f0 = objective_and_gradient(&fit, &s, Mechanism::Swm).unwrap().0;
        let f1 = objective_and_gradient(&off, &s, Mechanism::Swm).unwrap().0;
        assert!(f1 > f0);
    }

    #[test]
    fn zero_iterations_keep_unit_scales() {
        let inst = one_zone(4.0);
        let series = CalibrationSeries::new(vec![inst], vec![vec![10.0]]).unwrap();
        let rep = fit_scales(
            &series,
            &FitSettings {
                max_iters: 0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.scales, CostScales::ones(1));
        assert_eq!(rep.trace.len(), 1);
    }

    #[test]
    fn marginal_set_matches_single_player_form() {
        let inst = one_zone(4.0);
        let series = CalibrationSeries::new(vec![inst], vec![vec![1.0]]).unwrap();
        let s = CostScales::ones(1);
        let a = evaluate(&series, &s, Mechanism::Swm, GradientForm::MarginalPlayer).unwrap();
        let b = evaluate(&series, &s, Mechanism::Swm, GradientForm::MarginalSet).unwrap();
        for (x, y) in a.grad.iter().zip(&b.grad) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn error_metric_definition() {
        let targets = vec![vec![10.0], vec![20.0], vec![f64::NAN]];
        let prices = vec![vec![11.0], vec![17.0], vec![5.0]];
        let (mae, rel) = error_metrics(&targets, &prices);
        assert!((mae[0] - 2.0).abs() < 1e-12);
        assert!((rel[0] - 2.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn target_csv_by_name_and_index() {
        let zones = vec!["A".to_string(), "B".to_string()];
        let text = "t,zone,price\n0,A,1.5\n0,1,2.5\n1,B,3.0\n";
        let t = CalibrationSeries::read_targets(text.as_bytes(), &zones, 2).unwrap();
        assert_eq!(t[0], vec![1.5, 2.5]);
        assert!(t[1][0].is_nan());
        assert!(CalibrationSeries::read_targets("t,zone,price\n0,C,1\n".as_bytes(), &zones, 2).is_err());
    }

    #[test]
    fn mismatched_series_rejected() {
        assert!(CalibrationSeries::new(vec![one_zone(4.0)], vec![]).is_err());
        assert!(CalibrationSeries::new(vec![], vec![]).is_err());
    }
}
