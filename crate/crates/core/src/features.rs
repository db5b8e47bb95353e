//! Per-azimuth feature extraction.
//!
//! Each row is split into a low-frequency part (a moving average along range)
//! and the high-frequency residual. The noise level of a row is the RMS of
//! the negative residuals; a bin is a feature when its residual exceeds
//! `z_score` noise levels and its raw intensity clears `min_intensity`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan_io::RadarScan;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Moving-average window in range bins, odd.
    pub smooth_window: usize,
    pub z_score: f64,
    pub min_intensity: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            smooth_window: 17,
            z_score: 3.0,
            min_intensity: 0.08,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_window == 0 || self.smooth_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "feature.smooth_window must be odd and positive, got {}",
                self.smooth_window
            )));
        }
        if !(self.z_score > 0.0 && self.z_score.is_finite()) {
            return Err(Error::Config("feature.z_score must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.min_intensity) {
            return Err(Error::Config(
                "feature.min_intensity must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_for_width(&self, range_bins: usize) -> Result<()> {
        self.validate()?;
        if self.smooth_window > range_bins {
            return Err(Error::Config(format!(
                "feature.smooth_window {} exceeds {} range bins",
                self.smooth_window, range_bins
            )));
        }
        Ok(())
    }
}

/// Boolean feature mask: `true` is a feature, `false` is free space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureImage {
    pub scan_id: u64,
    pub azimuths: usize,
    pub range_bins: usize,
    pub mask: Vec<bool>,
    pub feature_count: usize,
}

impl FeatureImage {
    pub fn from_mask(scan_id: u64, azimuths: usize, range_bins: usize, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), azimuths * range_bins, "mask length mismatch");
        let feature_count = mask.iter().filter(|&&m| m).count();
        FeatureImage {
            scan_id,
            azimuths,
            range_bins,
            mask,
            feature_count,
        }
    }

    pub fn empty(scan_id: u64, azimuths: usize, range_bins: usize) -> Self {
        Self::from_mask(
            scan_id,
            azimuths,
            range_bins,
            vec![false; azimuths * range_bins],
        )
    }

    #[inline]
    pub fn is_feature(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.range_bins + col]
    }

    #[inline]
    pub fn is_free(&self, row: usize, col: usize) -> bool {
        !self.is_feature(row, col)
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.range_bins..(i + 1) * self.range_bins]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.azimuths, self.range_bins)
    }

    /// Rotates rows so that output row `i` is input row `(i + shift) mod H`.
    pub fn shift_rows(&self, shift: usize) -> FeatureImage {
        let mut mask = self.mask.clone();
        mask.rotate_left((shift % self.azimuths) * self.range_bins);
        FeatureImage {
            mask,
            ..self.clone()
        }
    }
}

/// Moving average with a window that shrinks at the row ends.
pub(crate) fn moving_average(row: &[f64], window: usize) -> Vec<f64> {
    let n = row.len();
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in row {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

fn extract_row(row: &[f32], cfg: &FeatureConfig, out: &mut [bool]) {
    let raw: Vec<f64> = row.iter().map(|&v| v as f64).collect();
    let low = moving_average(&raw, cfg.smooth_window);
    let high: Vec<f64> = raw.iter().zip(&low).map(|(r, l)| r - l).collect();
    let neg_sq: f64 = high.iter().map(|&h| h.min(0.0).powi(2)).sum();
    let sigma = (neg_sq / high.len() as f64).sqrt().max(f64::EPSILON);
    let threshold = cfg.z_score * sigma;
    for (j, flag) in out.iter_mut().enumerate() {
        *flag = high[j] > threshold && raw[j] > cfg.min_intensity;
    }
}

pub fn extract_features(scan: &RadarScan, cfg: &FeatureConfig) -> Result<FeatureImage> {
    cfg.validate_for_width(scan.range_bins)?;
    let mut mask = vec![false; scan.azimuths * scan.range_bins];
    for (i, out) in mask.chunks_mut(scan.range_bins).enumerate() {
        extract_row(scan.row(i), cfg, out);
    }
    Ok(FeatureImage::from_mask(
        scan.scan_id,
        scan.azimuths,
        scan.range_bins,
        mask,
    ))
}

pub fn count_free_space(fi: &FeatureImage) -> usize {
    fi.azimuths * fi.range_bins - fi.feature_count
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scan_from_rows(rows: &[Vec<f32>]) -> RadarScan {
        let w = rows[0].len();
        let data = rows.iter().flatten().copied().collect();
        RadarScan::new(0, 0.0, rows.len(), w, 1.0, data).unwrap()
    }

    #[test]
    fn all_zero_scan_has_no_features() {
        let scan = scan_from_rows(&vec![vec![0.0; 32]; 4]);
        let fi = extract_features(&scan, &FeatureConfig::default()).unwrap();
        assert_eq!(fi.feature_count, 0);
        assert!(fi.mask.iter().all(|m| !m));
    }

    #[test]
    fn constant_row_has_no_features() {
        let scan = scan_from_rows(&vec![vec![0.5; 32]; 4]);
        let fi = extract_features(&scan, &FeatureConfig::default()).unwrap();
        assert_eq!(fi.feature_count, 0);
    }

    #[test]
    fn single_spike_is_the_only_feature() {
        // Scalar reference (python, float64): low[16] = 2.5/17, high[16] = 0.75294,
        // sigma = 0.03341, threshold 3*sigma = 0.10023; only bin 16 exceeds it.
        let mut row = vec![0.1f32; 32];
        row[16] = 0.9;
        let scan = scan_from_rows(&vec![row; 4]);
        let fi = extract_features(&scan, &FeatureConfig::default()).unwrap();
        for i in 0..4 {
            for j in 0..32 {
                assert_eq!(fi.is_feature(i, j), j == 16, "row {i} bin {j}");
            }
        }
        assert_eq!(fi.feature_count, 4);
    }

    #[test]
    fn moving_average_shrinks_at_borders() {
        let avg = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0], 3);
        assert_eq!(avg, vec![1.5, 2.0, 3.0, 4.0, 4.5]);
    }

    #[test]
    fn free_space_is_complement() {
        let mut mask = vec![false; 24];
        assert_eq!(
            count_free_space(&FeatureImage::from_mask(0, 4, 6, mask.clone())),
            24
        );
        mask[0] = true;
        mask[7] = true;
        mask[23] = true;
        assert_eq!(
            count_free_space(&FeatureImage::from_mask(0, 4, 6, mask)),
            21
        );
        assert_eq!(
            count_free_space(&FeatureImage::from_mask(0, 4, 6, vec![true; 24])),
            0
        );
    }

    #[test]
    fn rejects_even_or_oversized_window() {
        let scan = scan_from_rows(&vec![vec![0.0; 8]; 4]);
        let cfg = FeatureConfig {
            smooth_window: 4,
            ..Default::default()
        };
        assert!(extract_features(&scan, &cfg).is_err());
        assert!(extract_features(&scan, &FeatureConfig::default()).is_err());
    }

    fn arb_scan() -> impl Strategy<Value = RadarScan> {
        (4usize..10, 17usize..40).prop_flat_map(|(h, w)| {
            prop::collection::vec(0u8..=255, h * w).prop_map(move |v| {
                let data = v.into_iter().map(|b| b as f32 / 255.0).collect();
                RadarScan::new(0, 0.0, h, w, 1.0, data).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn row_cyclic_shift_is_equivariant(scan in arb_scan(), s in 0usize..10) {
            let cfg = FeatureConfig::default();
            let base = extract_features(&scan, &cfg).unwrap();
            let mut shifted = scan.clone();
            shifted.intensities.rotate_left((s % scan.azimuths) * scan.range_bins);
            let got = extract_features(&shifted, &cfg).unwrap();
            prop_assert_eq!(got.mask, base.shift_rows(s).mask);
        }

        #[test]
        fn higher_z_never_adds_features(scan in arb_scan(), z1 in 0.5f64..4.0, dz in 0.01f64..3.0) {
            let lo = extract_features(&scan, &FeatureConfig { z_score: z1, ..Default::default() }).unwrap();
            let hi = extract_features(&scan, &FeatureConfig { z_score: z1 + dz, ..Default::default() }).unwrap();
            for (a, b) in hi.mask.iter().zip(&lo.mask) {
                prop_assert!(!a || *b);
            }
        }

        #[test]
        fn extraction_is_deterministic(scan in arb_scan()) {
            let cfg = FeatureConfig::default();
            prop_assert_eq!(extract_features(&scan, &cfg).unwrap(), extract_features(&scan, &cfg).unwrap());
        }
    }
}
