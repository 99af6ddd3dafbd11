//! 1-D heightfields built from octave-summed gradient noise.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TERRAIN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainParams {
    pub max_height: f64,
    /// Lattice spacing of the first octave, in metres.
    pub scale: f64,
    pub octaves: u32,
    pub persistence: f64,
    pub lacunarity: f64,
    pub seed: u64,
}

impl TerrainParams {
    pub fn flat() -> Self {
        TerrainParams {
            max_height: 0.0,
            scale: 1.0,
            octaves: 1,
            persistence: 1.0,
            lacunarity: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.max_height, self.scale, self.persistence, self.lacunarity]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("terrain parameters must be finite"));
        }
        if self.max_height < 0.0 {
            return Err(Error::config("terrain max_height must be non-negative"));
        }
        if !(self.scale > 0.0) {
            return Err(Error::config("terrain scale must be positive"));
        }
        if self.octaves < 1 {
            return Err(Error::config("terrain needs at least one octave"));
        }
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(Error::config("terrain persistence must lie in (0, 1]"));
        }
        if !(self.lacunarity >= 1.0) {
            return Err(Error::config("terrain lacunarity must be >= 1"));
        }
        Ok(())
    }
}

/// Sampling grid for generated heightfields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainGrid {
    pub x_min: f64,
    pub dx: f64,
    pub samples: usize,
}

impl Default for TerrainGrid {
    fn default() -> Self {
        // -10 m .. +30 m covers the longest clip at walking speed.
        TerrainGrid {
            x_min: -10.0,
            dx: 0.02,
            samples: 2001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Terrain {
    pub x_min: f64,
    pub grid_dx: f64,
    pub heights: Vec<f64>,
    pub friction: f64,
    pub params: TerrainParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerrainDocument {
    version: u32,
    terrain: Terrain,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice_gradient(seed: u64, cell: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(cell as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Classic gradient noise on the integer lattice, one dimension.
/// Zero at every lattice point; magnitude at most 0.5.
pub fn perlin1(x: f64, seed: u64) -> f64 {
    let cell = x.floor();
    let t = x - cell;
    let i = cell as i64;
    let g0 = lattice_gradient(seed, i);
    let g1 = lattice_gradient(seed, i + 1);
    let a = g0 * t;
    let b = g1 * (t - 1.0);
    a + fade(t) * (b - a)
}

fn fractal_value(params: &TerrainParams, x: f64) -> f64 {
    let mut amplitude = 1.0;
    let mut frequency = 1.0;
    let mut total = 0.0;
    let mut norm = 0.0;
    for octave in 0..params.octaves {
        let seed = splitmix64(params.seed.wrapping_add(u64::from(octave)));
        total += amplitude * perlin1(frequency * x / params.scale, seed);
        norm += amplitude;
        amplitude *= params.persistence;
        frequency *= params.lacunarity;
    }
    params.max_height * total / norm
}

pub fn fractal_terrain(params: &TerrainParams, seed: u64) -> Result<Terrain> {
    fractal_terrain_on(params, seed, TerrainGrid::default())
}

pub fn fractal_terrain_on(params: &TerrainParams, seed: u64, grid: TerrainGrid) -> Result<Terrain> {
    params.validate()?;
    if !(grid.dx > 0.0) || grid.samples < 2 || !grid.x_min.is_finite() {
        return Err(Error::config("terrain grid needs dx > 0 and at least 2 samples"));
    }
    let params = TerrainParams { seed, ..*params };
    let heights = (0..grid.samples)
        .map(|i| {
            if params.max_height == 0.0 {
                0.0
            } else {
                fractal_value(&params, grid.x_min + i as f64 * grid.dx)
            }
        })
        .collect();
    Ok(Terrain {
        x_min: grid.x_min,
        grid_dx: grid.dx,
        heights,
        friction: 1.0,
        params,
    })
}

impl Terrain {
    pub fn flat(friction: f64) -> Self {
        let grid = TerrainGrid::default();
        Terrain {
            x_min: grid.x_min,
            grid_dx: grid.dx,
            heights: vec![0.0; grid.samples],
            friction,
            params: TerrainParams::flat(),
        }
    }

    pub fn with_friction(mut self, friction: f64) -> Self {
        self.friction = friction;
        self
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + (self.heights.len() - 1) as f64 * self.grid_dx
    }

    /// Piecewise-linear height; queries outside the grid clamp to its ends.
    pub fn height(&self, x: f64) -> f64 {
        let n = self.heights.len();
        let u = ((x - self.x_min) / self.grid_dx).clamp(0.0, (n - 1) as f64);
        let nearest = u.round();
        if (u - nearest).abs() < 1e-9 {
            return self.heights[nearest as usize];
        }
        let i = (u.floor() as usize).min(n - 2);
        let t = u - i as f64;
        self.heights[i] + t * (self.heights[i + 1] - self.heights[i])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TerrainDocument {
            version: TERRAIN_FORMAT_VERSION,
            terrain: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: TerrainDocument = serde_json::from_str(text)?;
        if doc.version != TERRAIN_FORMAT_VERSION {
            return Err(Error::config(format!(
                "unsupported terrain version {}",
                doc.version
            )));
        }
        Ok(doc.terrain)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,z\n");
        for (i, h) in self.heights.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.x_min + i as f64 * self.grid_dx, h);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Free-function form of [`Terrain::height`].
pub fn terrain_height(terrain: &Terrain, x: f64) -> f64 {
    terrain.height(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn midpoint_params() -> TerrainParams {
        TerrainParams {
            max_height: 0.3,
            scale: 13.0,
            octaves: 7, // round(6.5)
            persistence: 0.4,
            lacunarity: 3.0,
            seed: 0,
        }
    }

    #[test]
    fn zero_height_is_flat() {
        let params = TerrainParams {
            max_height: 0.0,
            ..midpoint_params()
        };
        let t = fractal_terrain(&params, 3).unwrap();
        assert!(t.heights.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn noise_vanishes_on_lattice() {
        for seed in [0, 1, 99] {
            for k in -50..50 {
                assert_eq!(perlin1(k as f64, seed), 0.0);
            }
        }
    }

    fn autocorrelation(h: &[f64], lag: usize) -> f64 {
        let n = h.len();
        let mean = h.iter().sum::<f64>() / n as f64;
        let var: f64 = h.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = (0..n - lag).map(|i| (h[i] - mean) * (h[i + lag] - mean)).sum();
        cov / var
    }

    #[test]
    fn midpoint_terrain_bounded_and_correlated() {
        let params = midpoint_params();
        let t = fractal_terrain(&params, 7).unwrap();
        let max = t.heights.iter().fold(0.0f64, |m, h| m.max(h.abs()));
        assert!(max <= 0.3, "max |h| = {max}");
        assert!(max > 0.0);

        // Long field so the estimate reflects the noise, not one lattice cell.
        let grid = TerrainGrid {
            x_min: -10.0,
            dx: 0.02,
            samples: 200_001,
        };
        let long = fractal_terrain_on(&params, 7, grid).unwrap();
        let quarter = (params.scale / 4.0 / grid.dx).round() as usize;
        let half = (params.scale / 2.0 / grid.dx).round() as usize;
        let rho_quarter = autocorrelation(&long.heights, quarter);
        let rho_half = autocorrelation(&long.heights, half);
        assert!(rho_quarter > 0.2, "autocorrelation at scale/4 = {rho_quarter}");
        // Gradient noise crosses zero on every lattice point, which decorrelates
        // samples half a cell apart.
        assert!(rho_half.abs() < 0.2, "autocorrelation at scale/2 = {rho_half}");
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let a = fractal_terrain(&midpoint_params(), 11).unwrap();
        let b = fractal_terrain(&midpoint_params(), 11).unwrap();
        assert_eq!(a, b);
        let c = fractal_terrain(&midpoint_params(), 12).unwrap();
        assert_ne!(a.heights, c.heights);
    }

    #[test]
    fn interpolation() {
        let mut t = Terrain::flat(1.0);
        assert_eq!(t.height(3.3), 0.0);
        t.heights[10] = 0.1;
        t.heights[11] = 0.3;
        let x10 = t.x_min + 10.0 * t.grid_dx;
        assert_eq!(t.height(x10), 0.1);
        assert!((t.height(x10 + 0.5 * t.grid_dx) - 0.2).abs() < 1e-12);
        assert_eq!(t.height(-1e6), t.heights[0]);
        assert_eq!(t.height(1e6), *t.heights.last().unwrap());
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = midpoint_params();
        p.octaves = 0;
        assert!(fractal_terrain(&p, 0).is_err());
        let mut p = midpoint_params();
        p.persistence = 1.5;
        assert!(fractal_terrain(&p, 0).is_err());
        let mut p = midpoint_params();
        p.scale = f64::NAN;
        assert!(fractal_terrain(&p, 0).is_err());
    }

    #[test]
    fn csv_and_json() {
        let t = fractal_terrain(&midpoint_params(), 2).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("x,z\n"));
        assert_eq!(csv.lines().count(), t.heights.len() + 1);
        assert_eq!(Terrain::from_json(&t.to_json().unwrap()).unwrap(), t);
    }
}
