//! Foothold layouts for walking scenarios.
//!
//! A terrain is an ordered run of stepping stones, each giving the
//! horizontal gap and vertical rise from one foothold to the next. Layouts
//! are world-fixed: foothold `k + 1` sits at the cumulative sum of the
//! first `k` stone offsets, with foothold `0` at the origin. Past the end
//! of the list the last stone repeats, so a walker that outlives its
//! terrain keeps going on a periodic continuation.

use nalgebra::Vector2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hybrid::{HybridError, StoneConfig};

/// Errors from terrain construction.
#[derive(Debug, Error)]
pub enum TerrainError {
    /// A terrain needs at least one stone.
    #[error("terrain must contain at least one stone")]
    Empty,
    /// An empty or reversed sampling interval.
    #[error("invalid {what} range [{lo}, {hi}]")]
    InvalidRange {
        what: &'static str,
        lo: f64,
        hi: f64,
    },
    /// A stone with a non-positive gap or an over-steep rise.
    #[error(transparent)]
    Stone(#[from] HybridError),
}

/// Per-stone cap on |rise| as a fraction of the gap, so sampled stones
/// always satisfy the stone validity bound with margin.
const MAX_RISE_FRACTION: f64 = 0.9;

/// A world-fixed sequence of stepping stones.
#[derive(Debug, Clone)]
pub struct Terrain {
    stones: Vec<StoneConfig>,
}

impl Terrain {
    /// Builds a terrain from an explicit stone list.
    pub fn from_stones(stones: Vec<StoneConfig>) -> Result<Self, TerrainError> {
        if stones.is_empty() {
            return Err(TerrainError::Empty);
        }
        Ok(Self { stones })
    }

    /// `count` identical flat stones of the given gap.
    pub fn flat(count: usize, step_length: f64) -> Result<Self, TerrainError> {
        let stone = StoneConfig::new(step_length, 0.0)?;
        Self::from_stones(vec![stone; count.max(1)])
    }

    /// `count` identical stones with a constant rise (negative for a
    /// descending staircase).
    pub fn stairs(count: usize, step_length: f64, rise: f64) -> Result<Self, TerrainError> {
        let stone = StoneConfig::new(step_length, rise)?;
        Self::from_stones(vec![stone; count.max(1)])
    }

    /// `count` stones with gaps drawn uniformly from `length_range` and
    /// rises uniformly from `[-cap, cap]`, where the per-stone cap is
    /// `min(height_max, 0.9 * gap)`. Equal seeds reproduce the layout bit
    /// for bit.
    pub fn random(
        count: usize,
        length_range: (f64, f64),
        height_max: f64,
        seed: u64,
    ) -> Result<Self, TerrainError> {
        let (lo, hi) = length_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(TerrainError::InvalidRange {
                what: "step length",
                lo,
                hi,
            });
        }
        if !(height_max >= 0.0 && height_max.is_finite()) {
            return Err(TerrainError::InvalidRange {
                what: "step height",
                lo: -height_max,
                hi: height_max,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stones = Vec::with_capacity(count.max(1));
        for _ in 0..count.max(1) {
            let l = if lo < hi { rng.random_range(lo..hi) } else { lo };
            let cap = height_max.min(MAX_RISE_FRACTION * l);
            let h = if cap > 0.0 {
                rng.random_range(-cap..cap)
            } else {
                0.0
            };
            stones.push(StoneConfig::new(l, h)?);
        }
        Self::from_stones(stones)
    }

    /// Number of listed stones.
    pub fn len(&self) -> usize {
        self.stones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stones.is_empty()
    }

    pub fn stones(&self) -> &[StoneConfig] {
        &self.stones
    }

    /// Stone `k`, with the last stone repeating past the end of the list.
    pub fn stone(&self, k: usize) -> &StoneConfig {
        &self.stones[k.min(self.stones.len() - 1)]
    }

    /// World position of foothold `k` (foothold 0 is the origin),
    /// extrapolating with the last stone past the end of the list.
    pub fn foothold(&self, k: usize) -> Vector2<f64> {
        let listed = k.min(self.stones.len());
        let mut p = Vector2::zeros();
        for stone in &self.stones[..listed] {
            p += Vector2::new(stone.l_des(), stone.h_des());
        }
        if k > listed {
            let last = self.stones.last().expect("terrain is non-empty");
            p += (k - listed) as f64 * Vector2::new(last.l_des(), last.h_des());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_layout_accumulates_along_the_ground() {
        let t = Terrain::flat(5, 0.7).unwrap();
        assert_eq!(t.len(), 5);
        for k in 0..5 {
            assert_eq!(t.stone(k).l_des(), 0.7);
            assert_eq!(t.stone(k).h_des(), 0.0);
        }
        let p = t.foothold(3);
        assert_abs_diff_eq!(p.x, 2.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stairs_layout_accumulates_rise() {
        let up = Terrain::stairs(4, 0.5, 0.2).unwrap();
        let p = up.foothold(4);
        assert_abs_diff_eq!(p.x, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, 0.8, epsilon = 1e-12);

        let down = Terrain::stairs(4, 0.4, -0.1).unwrap();
        let p = down.foothold(2);
        assert_abs_diff_eq!(p.x, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(p.y, -0.2, epsilon = 1e-12);
    }

    #[test]
    fn indexing_past_the_end_repeats_the_last_stone() {
        let t = Terrain::stairs(3, 0.5, 0.1).unwrap();
        assert_eq!(t.stone(10).l_des(), 0.5);
        assert_eq!(t.stone(10).h_des(), 0.1);
        let inside = t.foothold(3);
        let beyond = t.foothold(5);
        assert_abs_diff_eq!(beyond.x, inside.x + 2.0 * 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(beyond.y, inside.y + 2.0 * 0.1, epsilon = 1e-12);
    }

    #[test]
    fn random_layout_is_deterministic_per_seed() {
        let a = Terrain::random(40, (0.2, 0.7), 0.25, 7).unwrap();
        let b = Terrain::random(40, (0.2, 0.7), 0.25, 7).unwrap();
        let c = Terrain::random(40, (0.2, 0.7), 0.25, 8).unwrap();
        for k in 0..40 {
            assert_eq!(a.stone(k).l_des(), b.stone(k).l_des());
            assert_eq!(a.stone(k).h_des(), b.stone(k).h_des());
        }
        let differs = (0..40).any(|k| a.stone(k).l_des() != c.stone(k).l_des());
        assert!(differs, "different seeds should give different layouts");
    }

    #[test]
    fn random_stones_respect_the_sampling_bounds() {
        let t = Terrain::random(200, (0.2, 0.7), 0.25, 3).unwrap();
        for stone in t.stones() {
            let l = stone.l_des();
            let h = stone.h_des();
            assert!((0.2..0.7).contains(&l));
            assert!(h.abs() <= 0.25_f64.min(0.9 * l));
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(matches!(
            Terrain::from_stones(vec![]),
            Err(TerrainError::Empty)
        ));
        assert!(matches!(
            Terrain::random(5, (0.7, 0.2), 0.25, 0),
            Err(TerrainError::InvalidRange { .. })
        ));
        assert!(matches!(
            Terrain::random(5, (0.5, 0.6), -0.1, 0),
            Err(TerrainError::InvalidRange { .. })
        ));
        assert!(matches!(
            Terrain::stairs(5, 0.3, 0.4),
            Err(TerrainError::Stone(_))
        ));
    }

    #[test]
    fn degenerate_ranges_collapse_to_points() {
        let t = Terrain::random(5, (0.5, 0.5), 0.0, 9).unwrap();
        for stone in t.stones() {
            assert_eq!(stone.l_des(), 0.5);
            assert_eq!(stone.h_des(), 0.0);
        }
    }
}
