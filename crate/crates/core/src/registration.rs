//! Needle registration: robust temporal filtering of stationary needle
//! observations and the 1D affine map from image rows to robot depth.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::table::fmt_sig;

/// Tukey fence multiplier.
pub const IQR_FENCE: f64 = 1.5;

/// Stationary needle observations collected before registration.
pub const REGISTRATION_SAMPLES: usize = 15;

pub const REGISTRATION_HEADER: &str = "b_mm_per_px,p_init_px,z_init_mm,n_rejected";

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be non-empty and ascending.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median_sorted(sorted: &[f64]) -> f64 {
    quantile_sorted(sorted, 0.5)
}

/// Tukey fences `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]` of ascending data.
pub fn fences_sorted(sorted: &[f64]) -> (f64, f64) {
    let q1 = quantile_sorted(sorted, 0.25);
    let q3 = quantile_sorted(sorted, 0.75);
    let iqr = q3 - q1;
    (q1 - IQR_FENCE * iqr, q3 + IQR_FENCE * iqr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredPosition {
    pub value_px: f64,
    pub n_used: usize,
    pub n_rejected: usize,
}

/// Drops samples outside `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]` and returns the
/// median of the survivors.
pub fn iqr_filter(samples: &[f64]) -> Result<FilteredPosition> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: samples.len(),
        });
    }
    ensure_finite("needle samples", samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = fences_sorted(&sorted);
    let kept: Vec<f64> = sorted.into_iter().filter(|x| (lo..=hi).contains(x)).collect();
    // The interquartile block itself always survives, so `kept` is never empty.
    Ok(FilteredPosition {
        value_px: median_sorted(&kept),
        n_used: kept.len(),
        n_rejected: samples.len() - kept.len(),
    })
}

/// How robot depth changes with the image row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisOrientation {
    /// Robot depth decreases as the row index grows: `dZ/dp = −b`.
    Opposed,
    /// Robot depth increases with the row index: `dZ/dp = +b`.
    Aligned,
}

impl AxisOrientation {
    pub fn sign(self) -> f64 {
        match self {
            AxisOrientation::Opposed => -1.0,
            AxisOrientation::Aligned => 1.0,
        }
    }
}

/// Orientation assumed by [`build_registration`].
pub const DEFAULT_ORIENTATION: AxisOrientation = AxisOrientation::Opposed;

/// `Z = s·b·p + (z_init − s·b·p_init)` with `s` the orientation sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationTransform {
    /// Scale (mm per pixel).
    pub b: f64,
    /// Image row of the reference pixel.
    pub p_init: f64,
    /// Robot depth of the reference pixel (mm).
    pub z_init: f64,
    pub orientation: AxisOrientation,
}

pub fn build_registration(p_filtered: f64, robot_z_now: f64, b: f64) -> Result<RegistrationTransform> {
    build_registration_oriented(p_filtered, robot_z_now, b, DEFAULT_ORIENTATION)
}

pub fn build_registration_oriented(
    p_filtered: f64,
    robot_z_now: f64,
    b: f64,
    orientation: AxisOrientation,
) -> Result<RegistrationTransform> {
    ensure_finite("registration input", &[p_filtered, robot_z_now, b])?;
    if b <= 0.0 {
        return Err(invalid("registration", format!("scale b = {b} must be positive")));
    }
    Ok(RegistrationTransform {
        b,
        p_init: p_filtered,
        z_init: robot_z_now,
        orientation,
    })
}

impl RegistrationTransform {
    pub fn slope(&self) -> f64 {
        self.orientation.sign() * self.b
    }

    /// Homogeneous 2×2 form `[[slope, offset], [0, 1]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[self.slope(), self.z_init - self.slope() * self.p_init], [0.0, 1.0]]
    }

    /// Robot depth (mm) of image row `p`. Evaluated about the reference
    /// pixel so that `apply(p_init) == z_init` holds exactly.
    pub fn apply(&self, p: f64) -> f64 {
        self.z_init + self.slope() * (p - self.p_init)
    }

    /// Image row of robot depth `z`.
    pub fn inverse(&self, z: f64) -> f64 {
        self.p_init + (z - self.z_init) / self.slope()
    }

    pub fn csv_row(&self, n_rejected: usize) -> String {
        format!(
            "{},{},{},{}",
            fmt_sig(self.b, 9),
            fmt_sig(self.p_init, 9),
            fmt_sig(self.z_init, 9),
            n_rejected
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const B: f64 = 3.379 / 1024.0;

    /// Reference quartiles written independently: nearest-rank bracketing
    /// followed by explicit interpolation on `(n - 1) q`.
    fn reference_quartile(xs: &[f64], q: f64) -> f64 {
        let mut v = xs.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q * (v.len() as f64 - 1.0);
        let below = v[pos as usize];
        let above = v[(pos.ceil()) as usize];
        below + (above - below) * pos.fract()
    }

    #[test]
    fn identical_values() {
        let f = iqr_filter(&[510.0; 15]).unwrap();
        assert_eq!(f, FilteredPosition { value_px: 510.0, n_used: 15, n_rejected: 0 });
    }

    #[test]
    fn single_gross_outlier_is_rejected() {
        let mut xs = vec![508.0, 509.0, 510.0, 511.0, 512.0, 510.0, 509.0, 511.0, 510.0, 508.0, 512.0, 510.0, 509.0, 511.0];
        xs.push(800.0);
        let q1 = reference_quartile(&xs, 0.25);
        let q3 = reference_quartile(&xs, 0.75);
        assert_eq!((q1, q3), (509.0, 511.0));
        // Fence [506, 514]: only 800 falls outside; the median of the other 14 is 510.
        let f = iqr_filter(&xs).unwrap();
        assert_eq!(f.n_rejected, 1);
        assert_eq!(f.n_used, 14);
        assert_eq!(f.value_px, 510.0);
    }

    #[test]
    fn recomputed_fences_can_tighten() {
        // One pass only: the quartiles of the survivors are narrower, so a
        // fresh pass over them may reject further points.
        let xs = [
            460.56, 482.05, 459.63, 400.0, 400.0, 558.38, 462.71, 471.01, 566.07, 596.02, 485.33, 400.0,
        ];
        let first = iqr_filter(&xs).unwrap();
        assert_eq!(first.n_rejected, 1);
        let kept: Vec<f64> = xs.iter().cloned().filter(|&x| x != 596.02).collect();
        assert_eq!(iqr_filter(&kept).unwrap().n_rejected, 1);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(iqr_filter(&[1.0, 2.0, 3.0]), Err(Error::InsufficientData { .. })));
        assert!(iqr_filter(&[1.0, 2.0, f64::NAN, 4.0]).is_err());
    }

    #[test]
    fn fixed_point_and_worked_example() {
        let tf = build_registration(512.0, 2.0, B).unwrap();
        assert_eq!(tf.apply(512.0), 2.0);
        assert_abs_diff_eq!(tf.apply(612.0), 1.670_019_53, epsilon = 1e-8);
        assert_abs_diff_eq!(tf.apply(612.0), 2.0 - B * 100.0, epsilon = 1e-15);
        assert_eq!(tf.inverse(2.0), 512.0);
        // Full image height spans the whole field depth.
        assert_abs_diff_eq!((tf.apply(0.0) - tf.apply(1024.0)).abs(), 3.379, epsilon = 1e-12);
    }

    #[test]
    fn slope_sign() {
        let opposed = build_registration(100.0, 1.0, B).unwrap();
        assert_abs_diff_eq!(opposed.apply(101.0) - opposed.apply(100.0), -B, epsilon = 1e-15);
        let aligned = build_registration_oriented(100.0, 1.0, B, AxisOrientation::Aligned).unwrap();
        assert_abs_diff_eq!(aligned.apply(101.0) - aligned.apply(100.0), B, epsilon = 1e-15);
        let m = opposed.matrix();
        assert_eq!(m[0][0], -B);
        assert_abs_diff_eq!(m[0][1], 1.0 + B * 100.0, epsilon = 1e-15);
        assert!(build_registration(1.0, 1.0, 0.0).is_err());
        assert!(build_registration(f64::INFINITY, 1.0, B).is_err());
    }

    proptest! {
        #[test]
        fn quartiles_match_reference(xs in prop::collection::vec(-1e3f64..1e3, 4..40), q in 0.0f64..1.0) {
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            prop_assert!((quantile_sorted(&s, q) - reference_quartile(&xs, q)).abs() < 1e-9);
        }

        #[test]
        fn apply_inverse_identity(p in -2000.0f64..3000.0, z in -5.0f64..5.0, p0 in 0.0f64..1024.0, z0 in 0.0f64..4.0) {
            for o in [AxisOrientation::Opposed, AxisOrientation::Aligned] {
                let tf = build_registration_oriented(p0, z0, B, o).unwrap();
                prop_assert!((tf.inverse(tf.apply(p)) - p).abs() < 1e-9);
                prop_assert!((tf.apply(tf.inverse(z)) - z).abs() < 1e-12);
            }
        }

        #[test]
        fn filter_is_permutation_invariant_and_idempotent(
            xs in prop::collection::vec(400.0f64..600.0, 4..30),
            rot in 0usize..30,
        ) {
            let a = iqr_filter(&xs).unwrap();
            let mut ys = xs.clone();
            let k = rot % ys.len();
            ys.rotate_left(k);
            ys.reverse();
            prop_assert_eq!(a, iqr_filter(&ys).unwrap());

            // The survivors sit inside the fences that selected them, so a
            // second pass against those fences removes nothing.
            let mut sorted = xs.clone();
            sorted.sort_by(f64::total_cmp);
            let (lo, hi) = fences_sorted(&sorted);
            let kept: Vec<f64> = xs.iter().cloned().filter(|x| (lo..=hi).contains(x)).collect();
            prop_assert_eq!(kept.len(), a.n_used);
            prop_assert!(kept.iter().all(|x| (lo..=hi).contains(x)));
            let mut ks = kept.clone();
            ks.sort_by(f64::total_cmp);
            prop_assert_eq!(median_sorted(&ks), a.value_px);
        }

        #[test]
        fn tolerates_three_corrupted_samples(
            clean in prop::collection::vec(500.0f64..520.0, 15),
            idx in prop::collection::hash_set(0usize..15, 3),
            junk in prop::collection::vec(-1e6f64..1e6, 3),
        ) {
            let spread = clean.iter().cloned().fold(f64::MIN, f64::max)
                - clean.iter().cloned().fold(f64::MAX, f64::min);
            let base = iqr_filter(&clean).unwrap().value_px;
            let mut dirty = clean.clone();
            for (i, v) in idx.into_iter().zip(junk) {
                dirty[i] = v;
            }
            let got = iqr_filter(&dirty).unwrap().value_px;
            prop_assert!((got - base).abs() <= spread + 1e-9);
        }
    }
}
