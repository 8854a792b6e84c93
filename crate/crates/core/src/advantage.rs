//! Group-relative advantage normalization.

use thiserror::Error;

/// Additive stabilizer on the group standard deviation.
pub const STD_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum AdvantageError {
    #[error("a rollout group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
}

/// `A_i = (r_i - mean) / (std + 1e-8)` with the population standard
/// deviation. A group whose rewards are all equal yields exact zeros.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>, AdvantageError> {
    if rewards.len() < 2 {
        return Err(AdvantageError::GroupTooSmall(rewards.len()));
    }
    let first = rewards[0];
    if rewards.iter().all(|&r| r == first) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + STD_EPSILON;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mean_std(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    #[test]
    fn three_point_example() {
        // mean 1, population std sqrt(2/3)
        let a = normalize_advantages(&[0.0, 1.0, 2.0]).unwrap();
        let s = (2.0f64 / 3.0).sqrt() + STD_EPSILON;
        assert!((a[0] + 1.0 / s).abs() < 1e-12);
        assert_eq!(a[1], 0.0);
        assert!((a[2] - 1.0 / s).abs() < 1e-12);
        assert!((a[2] - 1.224744871391589).abs() < 1e-7);
    }

    #[test]
    fn constant_group_is_exact_zero() {
        for c in [0.0, 0.1, 3.5, -2.25, 1e300] {
            assert_eq!(normalize_advantages(&[c; 7]).unwrap(), vec![0.0; 7]);
        }
    }

    #[test]
    fn two_point_symmetric() {
        for r in [0.5, 3.0, -2.0] {
            let a = normalize_advantages(&[r, -r]).unwrap();
            assert!((a[0] - r.signum()).abs() < 1e-7);
            assert!((a[1] + r.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn too_small() {
        assert_eq!(normalize_advantages(&[1.0]), Err(AdvantageError::GroupTooSmall(1)));
        assert_eq!(normalize_advantages(&[]), Err(AdvantageError::GroupTooSmall(0)));
    }

    proptest! {
        #[test]
        fn zero_sum_and_unit_std(rs in prop::collection::vec(0.0f64..4.0, 2..17)) {
            let a = normalize_advantages(&rs).unwrap();
            prop_assert!(a.iter().sum::<f64>().abs() <= 1e-9);
            prop_assert!(a.iter().all(|x| x.is_finite()));
            let (_, std_r) = mean_std(&rs);
            if std_r > 1e-3 {
                let (m, s) = mean_std(&a);
                prop_assert!(m.abs() <= 1e-9);
                // the epsilon in the denominator shrinks the std by ~eps/std_r
                prop_assert!((s - 1.0).abs() <= 2.0 * STD_EPSILON / std_r + 1e-9);
            }
        }

        #[test]
        fn shift_invariant(rs in prop::collection::vec(0.0f64..4.0, 2..17), c in -10.0f64..10.0) {
            let a = normalize_advantages(&rs).unwrap();
            let shifted: Vec<f64> = rs.iter().map(|r| r + c).collect();
            let b = normalize_advantages(&shifted).unwrap();
            let (_, std_r) = mean_std(&rs);
            prop_assume!(std_r > 1e-3);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }

        #[test]
        fn positive_scale_keeps_order(rs in prop::collection::vec(0.0f64..4.0, 2..17), k in 0.01f64..100.0) {
            let a = normalize_advantages(&rs).unwrap();
            let scaled: Vec<f64> = rs.iter().map(|r| r * k).collect();
            let b = normalize_advantages(&scaled).unwrap();
            for i in 0..rs.len() {
                if a[i].abs() > 1e-9 {
                    prop_assert_eq!(a[i] > 0.0, b[i] > 0.0);
                }
                for j in 0..rs.len() {
                    if rs[i] < rs[j] {
                        prop_assert!(a[i] <= a[j] && b[i] <= b[j]);
                    }
                }
            }
        }
    }
}
