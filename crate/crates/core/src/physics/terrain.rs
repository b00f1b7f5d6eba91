//! Heightfield terrains on a uniform grid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RISER_HEIGHT: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerrainKind {
    Flat,
    Slope,
    Stairs,
    Discrete,
    FrictionPatch,
}

impl TerrainKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TerrainKind::Flat => "flat",
            TerrainKind::Slope => "slope",
            TerrainKind::Stairs => "stairs",
            TerrainKind::Discrete => "discrete",
            TerrainKind::FrictionPatch => "friction-patch",
        }
    }
}

impl fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "flat" => TerrainKind::Flat,
            "slope" => TerrainKind::Slope,
            "stairs" => TerrainKind::Stairs,
            "discrete" => TerrainKind::Discrete,
            "friction-patch" | "friction_patch" => TerrainKind::FrictionPatch,
            other => return Err(Error::Config(format!("unknown terrain kind '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainParams {
    /// Arena edge lengths; the arena is centered on the origin.
    pub size: [f64; 2],
    pub resolution: f64,
    /// Coulomb coefficient everywhere except friction patches.
    pub friction: f64,
    pub slope_deg: f64,
    /// x coordinate of the first riser.
    pub stairs_start: f64,
    pub riser_height: f64,
    pub tread_depth: f64,
    /// The first step is a landing of this depth.
    pub landing_depth: f64,
    pub num_steps: usize,
    pub block_size: f64,
    pub max_block_height: f64,
    /// Blocks are kept flat within this radius of the origin.
    pub clear_radius: f64,
    pub patch_size: f64,
    pub friction_range: [f64; 2],
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self {
            size: [30.0, 30.0],
            resolution: 0.05,
            friction: 1.0,
            slope_deg: 10.0,
            stairs_start: 1.0,
            riser_height: 0.12,
            tread_depth: 0.3,
            landing_depth: 0.5,
            num_steps: 8,
            block_size: 0.4,
            max_block_height: 0.06,
            clear_radius: 1.0,
            patch_size: 0.5,
            friction_range: [0.6, 2.0],
        }
    }
}

/// Heights and friction coefficients sampled on grid points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    pub kind: TerrainKind,
    pub seed: u64,
    pub origin: [f64; 2],
    pub resolution: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major in y: index `iy * nx + ix`.
    pub heights: Vec<f64>,
    pub friction: Vec<f64>,
}

/// Result of [`Terrain::height_at`]; `clamped` is set when the query fell
/// outside the arena and was moved to its boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightSample {
    pub height: f64,
    pub clamped: bool,
}

pub fn make_terrain(kind: TerrainKind, params: &TerrainParams, seed: u64) -> Result<Terrain> {
    if !(params.resolution > 0.0) || params.size.iter().any(|s| !(*s > params.resolution)) {
        return Err(Error::Terrain("arena size and resolution must be positive".into()));
    }
    if !(params.friction > 0.0) {
        return Err(Error::Terrain("friction must be positive".into()));
    }
    let nx = (params.size[0] / params.resolution).round() as usize + 1;
    let ny = (params.size[1] / params.resolution).round() as usize + 1;
    let origin = [-0.5 * params.size[0], -0.5 * params.size[1]];
    let res = params.resolution;
    let mut heights = vec![0.0; nx * ny];
    let mut friction = vec![params.friction; nx * ny];
    let xy = |ix: usize, iy: usize| (origin[0] + ix as f64 * res, origin[1] + iy as f64 * res);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    match kind {
        TerrainKind::Flat => {}
        TerrainKind::Slope => {
            if !(params.slope_deg.abs() < 60.0) {
                return Err(Error::Terrain(format!("slope {} deg is too steep", params.slope_deg)));
            }
            let t = params.slope_deg.to_radians().tan();
            for iy in 0..ny {
                for ix in 0..nx {
                    heights[iy * nx + ix] = xy(ix, iy).0 * t;
                }
            }
        }
        TerrainKind::Stairs => {
            if params.riser_height > MAX_RISER_HEIGHT {
                return Err(Error::Terrain(format!(
                    "riser height {} m exceeds {MAX_RISER_HEIGHT} m",
                    params.riser_height
                )));
            }
            if !(params.riser_height > 0.0) || !(params.tread_depth > 0.0) || params.num_steps == 0 {
                return Err(Error::Terrain("stairs need positive riser, tread and step count".into()));
            }
            let landing = params.landing_depth.max(params.tread_depth);
            for iy in 0..ny {
                for ix in 0..nx {
                    // Snap to the grid so risers land exactly on grid lines.
                    let d = ((xy(ix, iy).0 - params.stairs_start) / res).round() * res;
                    heights[iy * nx + ix] = stairs_height(d, landing, params);
                }
            }
        }
        TerrainKind::Discrete => {
            if !(params.max_block_height >= 0.0) || !(params.block_size > 0.0) {
                return Err(Error::Terrain("discrete blocks need non-negative height, positive size".into()));
            }
            let bx = (params.size[0] / params.block_size).ceil() as usize + 1;
            let by = (params.size[1] / params.block_size).ceil() as usize + 1;
            let blocks: Vec<f64> = (0..bx * by).map(|_| rng.random_range(0.0..=params.max_block_height)).collect();
            for iy in 0..ny {
                for ix in 0..nx {
                    let (x, y) = xy(ix, iy);
                    if x.hypot(y) < params.clear_radius {
                        continue;
                    }
                    let i = ((x - origin[0]) / params.block_size).floor() as usize;
                    let j = ((y - origin[1]) / params.block_size).floor() as usize;
                    heights[iy * nx + ix] = blocks[j.min(by - 1) * bx + i.min(bx - 1)];
                }
            }
        }
        TerrainKind::FrictionPatch => {
            let [lo, hi] = params.friction_range;
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::Terrain(format!("bad friction range [{lo}, {hi}]")));
            }
            let px = (params.size[0] / params.patch_size).ceil() as usize + 1;
            let py = (params.size[1] / params.patch_size).ceil() as usize + 1;
            let patches: Vec<f64> = (0..px * py).map(|_| rng.random_range(lo..=hi)).collect();
            for iy in 0..ny {
                for ix in 0..nx {
                    let (x, y) = xy(ix, iy);
                    let i = ((x - origin[0]) / params.patch_size).floor() as usize;
                    let j = ((y - origin[1]) / params.patch_size).floor() as usize;
                    friction[iy * nx + ix] = patches[j.min(py - 1) * px + i.min(px - 1)];
                }
            }
        }
    }

    Ok(Terrain { kind, seed, origin, resolution: res, nx, ny, heights, friction })
}

fn stairs_height(d: f64, landing: f64, p: &TerrainParams) -> f64 {
    if d < 0.0 {
        return 0.0;
    }
    let step = if d < landing { 1 } else { 2 + ((d - landing) / p.tread_depth).floor() as usize };
    step.min(p.num_steps) as f64 * p.riser_height
}

impl Terrain {
    pub fn flat() -> Self {
        make_terrain(TerrainKind::Flat, &TerrainParams::default(), 0).expect("default flat terrain")
    }

    fn cell(&self, x: f64, y: f64) -> (usize, usize, f64, f64, bool) {
        let fx = (x - self.origin[0]) / self.resolution;
        let fy = (y - self.origin[1]) / self.resolution;
        let max_x = (self.nx - 1) as f64;
        let max_y = (self.ny - 1) as f64;
        let clamped = !(0.0..=max_x).contains(&fx) || !(0.0..=max_y).contains(&fy);
        let fx = fx.clamp(0.0, max_x);
        let fy = fy.clamp(0.0, max_y);
        let ix = (fx.floor() as usize).min(self.nx - 2);
        let iy = (fy.floor() as usize).min(self.ny - 2);
        (ix, iy, fx - ix as f64, fy - iy as f64, clamped)
    }

    #[inline]
    fn h(&self, ix: usize, iy: usize) -> f64 {
        self.heights[iy * self.nx + ix]
    }

    /// Bilinear height; points outside the arena are clamped to its edge.
    pub fn height_at(&self, x: f64, y: f64) -> HeightSample {
        let (ix, iy, tx, ty, clamped) = self.cell(x, y);
        let h00 = self.h(ix, iy);
        let h10 = self.h(ix + 1, iy);
        let h01 = self.h(ix, iy + 1);
        let h11 = self.h(ix + 1, iy + 1);
        let height = h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty + h11 * tx * ty;
        HeightSample { height, clamped }
    }

    /// Upward unit normal of the bilinear surface.
    pub fn normal_at(&self, x: f64, y: f64) -> Vector3<f64> {
        let (ix, iy, tx, ty, _) = self.cell(x, y);
        let h00 = self.h(ix, iy);
        let h10 = self.h(ix + 1, iy);
        let h01 = self.h(ix, iy + 1);
        let h11 = self.h(ix + 1, iy + 1);
        let dx = ((h10 - h00) * (1.0 - ty) + (h11 - h01) * ty) / self.resolution;
        let dy = ((h01 - h00) * (1.0 - tx) + (h11 - h10) * tx) / self.resolution;
        Vector3::new(-dx, -dy, 1.0).normalize()
    }

    /// Coulomb coefficient of the nearest grid point.
    pub fn friction_at(&self, x: f64, y: f64) -> f64 {
        let fx = ((x - self.origin[0]) / self.resolution).round();
        let fy = ((y - self.origin[1]) / self.resolution).round();
        let ix = fx.clamp(0.0, (self.nx - 1) as f64) as usize;
        let iy = fy.clamp(0.0, (self.ny - 1) as f64) as usize;
        self.friction[iy * self.nx + ix]
    }

    /// Writes `x_index,y_index,height,friction` rows.
    pub fn export_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x_index", "y_index", "height", "friction"])?;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let k = iy * self.nx + ix;
                w.write_record(&[
                    ix.to_string(),
                    iy.to_string(),
                    self.heights[k].to_string(),
                    self.friction[k].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<terrain csv>", e))?;
        Ok(())
    }
}
