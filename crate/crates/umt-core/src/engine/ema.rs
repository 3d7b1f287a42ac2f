//! Exponential moving average of the student into the teacher.

use crate::detector::DetectorParams;
use crate::{Error, Result};

/// In-place update `teacher <- alpha * teacher + (1 - alpha) * student`,
/// element-wise over the full parameter vector.
pub fn ema_update(
    teacher: &mut DetectorParams,
    student: &DetectorParams,
    alpha: f64,
) -> Result<()> {
    if !teacher.compatible(student) {
        return Err(Error::config(
            "teacher and student parameter shapes differ; identical architecture configs required",
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("ema alpha must lie in [0, 1]"));
    }
    for (t, s) in teacher.as_mut_slice().iter_mut().zip(student.as_slice()) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::ArchConfig;

    #[test]
    fn equal_params_are_a_fixed_point() {
        let arch = ArchConfig::default();
        let student = DetectorParams::init(&arch, 3);
        let mut teacher = student.clone();
        ema_update(&mut teacher, &student, 0.99).unwrap();
        // alpha*x + (1-alpha)*x re-rounds, so compare to one ulp scale.
        for (t, s) in teacher.as_slice().iter().zip(student.as_slice()) {
            assert!((t - s).abs() <= 1e-15 * (1.0 + s.abs()), "{t} vs {s}");
        }
    }

    #[test]
    fn single_step_from_zero() {
        let arch = ArchConfig::default();
        let mut teacher = DetectorParams::zeros(&arch);
        let mut student = DetectorParams::zeros(&arch);
        student.as_mut_slice().fill(1.0);
        ema_update(&mut teacher, &student, 0.99).unwrap();
        for v in teacher.as_slice() {
            assert!((v - 0.01).abs() < 1e-15);
        }
    }

    #[test]
    fn iterated_updates_match_closed_form() {
        // theta_n = alpha^n * theta_0 + (1 - alpha^n) * s for a constant
        // student.
        let arch = ArchConfig::default();
        let alpha = 0.99;
        let s = 0.73;
        let mut teacher = DetectorParams::zeros(&arch);
        let mut student = DetectorParams::zeros(&arch);
        student.as_mut_slice().fill(s);
        let mut n_done = 0u32;
        for n in [1u32, 10, 100, 1000] {
            for _ in n_done..n {
                ema_update(&mut teacher, &student, alpha).unwrap();
            }
            n_done = n;
            let expected = (1.0 - alpha.powi(n as i32)) * s;
            for v in teacher.as_slice() {
                assert!(
                    (v - expected).abs() <= 1e-10,
                    "n={n}: {v} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn incompatible_shapes_are_rejected() {
        let arch = ArchConfig::default();
        let other = ArchConfig {
            channels: [8, 12, 20],
            ..ArchConfig::default()
        };
        let mut teacher = DetectorParams::zeros(&arch);
        let student = DetectorParams::zeros(&other);
        assert!(ema_update(&mut teacher, &student, 0.5).is_err());
    }
}
