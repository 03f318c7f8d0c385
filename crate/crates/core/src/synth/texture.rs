//! Solid value noise in world coordinates.

use nalgebra::Vector3;

/// SplitMix64 finalizer; also the seed-split function for sub-seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueNoise {
    pub seed: u64,
    /// Lattice spacing in meters.
    pub cell: f64,
}

impl ValueNoise {
    fn lattice(&self, x: i64, y: i64, z: i64) -> f64 {
        let h = splitmix64(
            self.seed
                ^ (x as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7)
                ^ (y as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93)
                ^ (z as u64).wrapping_mul(0xA076_1D64_78BD_642F),
        );
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Smooth noise in `[0, 1)`.
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let q = p / self.cell;
        let base = q.map(f64::floor);
        let f = q - base;
        let fade = f.map(|t| t * t * t * (t * (t * 6.0 - 15.0) + 10.0));
        let (bx, by, bz) = (base.x as i64, base.y as i64, base.z as i64);
        let mut acc = 0.0;
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = |d: i32, t: f64| if d == 1 { t } else { 1.0 - t };
            acc += w(dx, fade.x) * w(dy, fade.y) * w(dz, fade.z) * self.lattice(bx + dx as i64, by + dy as i64, bz + dz as i64);
        }
        acc
    }
}
