use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Pose;

/// Perturbs `pose` with `R ← R·exp([ω]×)`, `ω ~ N(0, (σ_rot·π/180)²I)` and
/// `t ← t + ε`, `ε ~ N(0, (σ_trans·baseline)²I)`.
///
/// Six normals are always drawn so that the random stream stays aligned
/// across noise levels; a zero sigma leaves its component untouched.
pub fn inject_pose_noise<R: Rng + ?Sized>(pose: &Pose, sigma_rot_deg: f64, sigma_trans: f64, baseline: f64, rng: &mut R) -> Pose {
    let mut draw = || -> Vector3<f64> {
        Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
    };
    let (w, e) = (draw(), draw());
    let mut out = *pose;
    if sigma_rot_deg > 0.0 {
        let omega = w * sigma_rot_deg.to_radians();
        out.rotation = pose.rotation * Rotation3::new(omega).into_inner();
    }
    if sigma_trans > 0.0 {
        out.translation = pose.translation + e * (sigma_trans * baseline);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pose() -> Pose {
        Pose::new(Rotation3::new(Vector3::new(0.2, -0.1, 0.3)).into_inner(), Vector3::new(0.5, 0.0, -0.2)).unwrap()
    }

    #[test]
    fn zero_noise_is_bit_exact() {
        let p = pose();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(inject_pose_noise(&p, 0.0, 0.0, 0.5, &mut rng), p);
    }

    #[test]
    fn fixed_seed_repeats() {
        let p = pose();
        let a = inject_pose_noise(&p, 1.0, 0.05, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = inject_pose_noise(&p, 1.0, 0.05, 0.5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_ne!(a, p);
    }

    #[test]
    fn output_stays_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = pose();
        for _ in 0..200 {
            p = inject_pose_noise(&p, 5.0, 0.1, 1.0, &mut rng);
        }
        assert!(Pose::new(p.rotation, p.translation).is_ok());
    }
}
