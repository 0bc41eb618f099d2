use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClearError, Result};
use crate::fixtures::fixture_instance;
use crate::market::{assemble_polytope, validate_instance, DemandBox, MarketInstance, PlayerOrder};
use crate::swm::ensure_feasible;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenMode {
    /// The bundled three-zone instance, ignoring every other field.
    #[serde(rename = "paper")]
    Fixture,
    Random,
}

/// Parameters of a random instance. Ranges are inclusive-exclusive pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GenSpec {
    pub mode: GenMode,
    pub zones: usize,
    pub players_per_zone: (usize, usize),
    pub slope: (f64, f64),
    pub intercept: (f64, f64),
    pub capacity: (f64, f64),
    /// Zonal demand range.
    pub demand: (f64, f64),
    /// Number of monitored lines per zone pair, in `[0, 1]`.
    pub network_density: f64,
    /// Range of the directional margins on each line.
    pub ram: (f64, f64),
    pub demand_box: DemandBox,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            mode: GenMode::Random,
            zones: 3,
            players_per_zone: (2, 4),
            slope: (0.2, 0.8),
            intercept: (0.2, 3.5),
            capacity: (2.0, 6.0),
            demand: (3.0, 9.0),
            network_density: 0.7,
            ram: (0.5, 3.0),
            demand_box: DemandBox::default(),
            seed: 1,
        }
    }
}

const MAX_REJECTIONS: usize = 100;

fn range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn draw(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Result<MarketInstance> {
    let nz = spec.zones;
    let mut players = Vec::new();
    for z in 0..nz {
        let (lo, hi) = spec.players_per_zone;
        let count = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        for _ in 0..count {
            let id = format!("P{}", players.len());
            let m = range(rng, spec.slope);
            let a = range(rng, spec.intercept);
            let q = range(rng, spec.capacity);
            players.push(PlayerOrder::new(id, z, m, a, q)?);
        }
    }
    let demand: Vec<f64> = (0..nz).map(|_| range(rng, spec.demand)).collect();
    let pairs = nz * nz.saturating_sub(1) / 2;
    let lines = (spec.network_density.clamp(0.0, 1.0) * pairs as f64).round() as usize;
    let mut ptdf = DMatrix::zeros(lines, nz);
    let mut ram_lb = Vec::with_capacity(lines);
    let mut ram_ub = Vec::with_capacity(lines);
    for k in 0..lines {
        for z in 0..nz {
            ptdf[(k, z)] = rng.gen_range(-0.5..0.5);
        }
        ram_lb.push(-range(rng, spec.ram));
        ram_ub.push(range(rng, spec.ram));
    }
    let polytope = assemble_polytope(&ptdf, &ram_lb, &ram_ub, &demand, spec.demand_box)?;
    Ok(MarketInstance {
        zones: (0..nz).map(|z| format!("Z{z}")).collect(),
        demand,
        players,
        polytope,
    })
}

/// Draws instances until one validates and admits a feasible dispatch.
/// Deterministic per seed.
pub fn generate_instance(spec: &GenSpec) -> Result<MarketInstance> {
    if spec.mode == GenMode::Fixture {
        return Ok(fixture_instance());
    }
    if spec.zones == 0 || spec.players_per_zone.0 == 0 || spec.players_per_zone.1 < spec.players_per_zone.0 {
        return Err(ClearError::Invalid("spec infeasible: empty zones or player range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..MAX_REJECTIONS {
        let Ok(inst) = draw(spec, &mut rng) else {
            continue;
        };
        if validate_instance(&inst).is_empty() && ensure_feasible(&inst).is_ok() {
            return Ok(inst);
        }
    }
    Err(ClearError::Infeasible(format!(
        "spec infeasible: {MAX_REJECTIONS} draws rejected"
    )))
}

/// `n` instances with 3 to 5 zones and 2 to 4 players per zone, seeded
/// `base_seed, base_seed + 1, ...`.
pub fn random_suite(n: usize, base_seed: u64) -> Result<Vec<MarketInstance>> {
    (0..n as u64)
        .map(|k| {
            let seed = base_seed + k;
            generate_instance(&GenSpec {
                zones: 3 + (seed % 3) as usize,
                seed,
                ..GenSpec::default()
            })
        })
        .collect()
}
