//! Resolution pools and the variable batch-size rule.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIVISOR: u32 = 32;

/// A spatial resolution `(height, width)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resolution {
    pub height: u32,
    pub width: u32,
}

impl Resolution {
    pub const fn new(height: u32, width: u32) -> Self {
        Resolution { height, width }
    }

    pub const fn square(side: u32) -> Self {
        Resolution::new(side, side)
    }

    pub fn area(self) -> u64 {
        u64::from(self.height) * u64::from(self.width)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// The `(B, C, H, W)` anchor from which variable batch sizes are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReferenceBatchShape {
    pub batch: u32,
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl ReferenceBatchShape {
    pub fn new(batch: u32, channels: u32, height: u32, width: u32) -> Result<Self> {
        let shape = ReferenceBatchShape {
            batch,
            channels,
            height,
            width,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch", self.batch),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
        ] {
            if v == 0 {
                return Err(Error::config(format!("reference.{name}"), "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn resolution(&self) -> Resolution {
        Resolution::new(self.height, self.width)
    }

    /// Pixels processed by one reference batch, `B * H * W`.
    pub fn pixel_budget(&self) -> u64 {
        u64::from(self.batch) * self.resolution().area()
    }
}

/// Ordered, duplicate-free set of resolutions, strictly increasing by area.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ResolutionPool {
    resolutions: Vec<Resolution>,
    divisor: u32,
}

impl ResolutionPool {
    /// Builds a pool from an explicit list. The list is sorted by area; every
    /// side must be a positive multiple of `divisor`.
    pub fn from_resolutions(mut resolutions: Vec<Resolution>, divisor: u32) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::config("pool.divisor", "must be positive"));
        }
        if resolutions.is_empty() {
            return Err(Error::config("pool.resolutions", "pool is empty"));
        }
        for (i, r) in resolutions.iter().enumerate() {
            if r.height == 0 || r.width == 0 || r.height % divisor != 0 || r.width % divisor != 0 {
                return Err(Error::config(
                    format!("pool.resolutions[{i}]"),
                    format!("{r} is not a positive multiple of divisor {divisor}"),
                ));
            }
        }
        resolutions.sort_by_key(|r| (r.area(), r.height));
        resolutions.dedup();
        if let Some(w) = resolutions.windows(2).find(|w| w[0].area() == w[1].area()) {
            return Err(Error::config(
                "pool.resolutions",
                format!("{} and {} have equal area; pool areas must be distinct", w[0], w[1]),
            ));
        }
        Ok(ResolutionPool {
            resolutions,
            divisor,
        })
    }

    /// Single-resolution pool (used for single-scale sampling).
    pub fn singleton(res: Resolution, divisor: u32) -> Self {
        ResolutionPool {
            resolutions: vec![res],
            divisor: divisor.max(1),
        }
    }

    pub fn resolutions(&self) -> &[Resolution] {
        &self.resolutions
    }

    pub fn divisor(&self) -> u32 {
        self.divisor
    }

    pub fn len(&self) -> usize {
        self.resolutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resolutions.is_empty()
    }

    pub fn contains(&self, res: Resolution) -> bool {
        self.resolutions.contains(&res)
    }

    pub fn min(&self) -> Resolution {
        self.resolutions[0]
    }

    pub fn max(&self) -> Resolution {
        self.resolutions[self.resolutions.len() - 1]
    }
}

fn snap_up(v: u32, d: u32) -> u32 {
    v.div_ceil(d) * d
}

fn snap_down(v: u32, d: u32) -> u32 {
    v / d * d
}

/// Interpolates between `min` and `max`, keeping every side a multiple of
/// `divisor`. Square bounds give the square diagonal `min, min+d, .., max`.
/// Non-square bounds walk the rectangle diagonal, stepping the longer side by
/// `divisor` and rounding the other side to the nearest multiple.
pub fn build_pool(min: Resolution, max: Resolution, divisor: u32) -> Result<ResolutionPool> {
    if divisor == 0 {
        return Err(Error::config("pool.divisor", "must be positive"));
    }
    if min.height > max.height || min.width > max.width {
        return Err(Error::config(
            "pool.min",
            format!("min {min} exceeds max {max}"),
        ));
    }
    if min.height < divisor || min.width < divisor {
        return Err(Error::config(
            "pool.min",
            format!("min {min} is smaller than divisor {divisor}"),
        ));
    }
    let (h0, h1) = (snap_up(min.height, divisor), snap_down(max.height, divisor));
    let (w0, w1) = (snap_up(min.width, divisor), snap_down(max.width, divisor));
    if h0 > h1 || w0 > w1 {
        return Err(Error::config(
            "pool",
            format!("no multiple of {divisor} lies between {min} and {max}"),
        ));
    }
    let h_steps = (h1 - h0) / divisor;
    let w_steps = (w1 - w0) / divisor;
    let steps = h_steps.max(w_steps);
    let interp = |lo: u32, hi: u32, i: u32| -> u32 {
        if steps == 0 {
            return lo;
        }
        let exact = f64::from(lo) + f64::from(hi - lo) * f64::from(i) / f64::from(steps);
        ((exact / f64::from(divisor)).round() as u32) * divisor
    };
    let resolutions = (0..=steps)
        .map(|i| Resolution::new(interp(h0, h1, i), interp(w0, w1, i)))
        .collect();
    ResolutionPool::from_resolutions(resolutions, divisor)
}

/// `(round(rho*H/d)*d, round(rho*W/d)*d)`, clamped below at `d`.
pub fn compress_resolution(res: Resolution, rho: f64, divisor: u32) -> Resolution {
    let d = f64::from(divisor);
    let scale = |side: u32| -> u32 {
        let units = (rho * f64::from(side) / d).round().max(1.0);
        units as u32 * divisor
    };
    Resolution::new(scale(res.height), scale(res.width))
}

/// Scales every pool element by `rho` and collapses resulting duplicates,
/// preserving order. `rho == 1` returns the pool unchanged.
pub fn compress_pool(pool: &ResolutionPool, rho: f64) -> Result<ResolutionPool> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::config("rho", format!("must lie in (0, 1], got {rho}")));
    }
    if rho == 1.0 {
        return Ok(pool.clone());
    }
    let mut out: Vec<Resolution> = Vec::with_capacity(pool.len());
    for &r in pool.resolutions() {
        let c = compress_resolution(r, rho, pool.divisor);
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(ResolutionPool {
        resolutions: out,
        divisor: pool.divisor,
    })
}

/// `max(1, floor(B * H * W / (H_t * W_t)))`.
pub fn batch_size_for(reference: &ReferenceBatchShape, res: Resolution) -> u32 {
    let area = res.area().max(1);
    let b = reference.pixel_budget() / area;
    b.clamp(1, u64::from(u32::MAX)) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sides(pool: &ResolutionPool) -> Vec<u32> {
        pool.resolutions().iter().map(|r| r.height).collect()
    }

    #[test]
    fn resnet_pool() {
        let p = build_pool(Resolution::square(128), Resolution::square(320), 32).unwrap();
        assert_eq!(sides(&p), vec![128, 160, 192, 224, 256, 288, 320]);
        assert!(p.resolutions().iter().all(|r| r.height == r.width));
    }

    #[test]
    fn degenerate_pool() {
        let p = build_pool(Resolution::square(224), Resolution::square(224), 32).unwrap();
        assert_eq!(p.resolutions(), &[Resolution::square(224)]);
    }

    #[test]
    fn efficientnet_pool() {
        let p = build_pool(Resolution::square(160), Resolution::square(448), 32).unwrap();
        assert_eq!(p.len(), 10);
        assert_eq!(p.min(), Resolution::square(160));
        assert_eq!(p.max(), Resolution::square(448));
    }

    #[test]
    fn build_pool_errors() {
        assert!(build_pool(Resolution::square(320), Resolution::square(128), 32).is_err());
        assert!(build_pool(Resolution::square(128), Resolution::square(320), 0).is_err());
        assert!(build_pool(Resolution::square(16), Resolution::square(320), 32).is_err());
    }

    #[test]
    fn non_square_pool_is_strictly_increasing() {
        let p = build_pool(Resolution::new(128, 256), Resolution::new(256, 512), 32).unwrap();
        assert_eq!(p.min(), Resolution::new(128, 256));
        assert_eq!(p.max(), Resolution::new(256, 512));
        for w in p.resolutions().windows(2) {
            assert!(w[0].area() < w[1].area());
        }
        assert!(p
            .resolutions()
            .iter()
            .all(|r| r.height % 32 == 0 && r.width % 32 == 0));
    }

    #[test]
    fn compress_identity_and_quarter() {
        let p = build_pool(Resolution::square(128), Resolution::square(320), 32).unwrap();
        assert_eq!(compress_pool(&p, 1.0).unwrap(), p);
        let c = compress_pool(&p, 0.75).unwrap();
        assert_eq!(sides(&c), vec![96, 128, 160, 192, 224, 256]);
    }

    #[test]
    fn compress_detection_pool() {
        let p = build_pool(Resolution::square(512), Resolution::square(1280), 32).unwrap();
        let c = compress_pool(&p, 0.75).unwrap();
        assert_eq!(c.min(), Resolution::square(384));
    }

    #[test]
    fn compress_clamps_at_divisor() {
        let p = ResolutionPool::from_resolutions(vec![Resolution::square(32)], 32).unwrap();
        let c = compress_pool(&p, 0.1).unwrap();
        assert_eq!(c.resolutions(), &[Resolution::square(32)]);
        assert!(compress_pool(&p, 0.0).is_err());
    }

    #[test]
    fn batch_sizes() {
        let r = ReferenceBatchShape::new(256, 3, 224, 224).unwrap();
        assert_eq!(batch_size_for(&r, Resolution::square(224)), 256);
        assert_eq!(batch_size_for(&r, Resolution::square(160)), 501);
        assert_eq!(batch_size_for(&r, Resolution::square(320)), 125);
        let tiny = ReferenceBatchShape::new(1, 3, 32, 32).unwrap();
        assert_eq!(batch_size_for(&tiny, Resolution::square(64)), 1);
    }

    #[test]
    fn explicit_pool_rejects_misaligned_and_equal_area() {
        assert!(ResolutionPool::from_resolutions(vec![Resolution::square(100)], 32).is_err());
        assert!(ResolutionPool::from_resolutions(
            vec![Resolution::new(128, 256), Resolution::new(256, 128)],
            32
        )
        .is_err());
        let p = ResolutionPool::from_resolutions(
            vec![Resolution::square(320), Resolution::square(128), Resolution::square(128)],
            32,
        )
        .unwrap();
        assert_eq!(sides(&p), vec![128, 320]);
    }
}
