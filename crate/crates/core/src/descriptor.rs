//! Free-space place descriptors.
//!
//! R-ReFeree sums free-space pixels over every azimuth inside each block of
//! `beta` range bins, so it does not change when rows are cyclically shifted.
//! A-ReFeree sums, for each block of `alpha` azimuths, the free pixels that lie
//! before each row's farthest feature; rotating the sensor rotates it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureImage;

/// Number of range blocks used when `beta` is left unset.
pub const DEFAULT_RANGE_BLOCKS: usize = 42;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DescriptorConfig {
    /// Range-wise block width in bins. `None` means `W / 42`.
    pub beta: Option<usize>,
    /// Angle-wise block height in rows.
    pub alpha: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            beta: None,
            alpha: 1,
        }
    }
}

/// Block sizes resolved against a concrete image shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub beta: usize,
    pub alpha: usize,
    pub n_w: usize,
    pub n_h: usize,
}

impl DescriptorConfig {
    pub fn layout(&self, azimuths: usize, range_bins: usize) -> Result<BlockLayout> {
        let beta = match self.beta {
            Some(b) => b,
            None => {
                if !range_bins.is_multiple_of(DEFAULT_RANGE_BLOCKS) {
                    return Err(Error::Divisibility {
                        dim: "range bins (default 42 blocks)",
                        size: range_bins,
                        block: DEFAULT_RANGE_BLOCKS,
                    });
                }
                range_bins / DEFAULT_RANGE_BLOCKS
            }
        };
        if beta == 0 || !range_bins.is_multiple_of(beta) {
            return Err(Error::Divisibility {
                dim: "range bins",
                size: range_bins,
                block: beta,
            });
        }
        if self.alpha == 0 || !azimuths.is_multiple_of(self.alpha) {
            return Err(Error::Divisibility {
                dim: "azimuths",
                size: azimuths,
                block: self.alpha,
            });
        }
        Ok(BlockLayout {
            beta,
            alpha: self.alpha,
            n_w: range_bins / beta,
            n_h: azimuths / self.alpha,
        })
    }
}

/// Rotation-invariant place descriptor, one value per range block.
#[derive(Clone, Debug, PartialEq)]
pub struct RReferee(pub Vec<f32>);

/// Heading descriptor, one value per angle block.
#[derive(Clone, Debug, PartialEq)]
pub struct AReferee(pub Vec<f32>);

impl RReferee {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AReferee {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Output block `k` takes input block `(k + shift) mod N_h`.
    pub fn rotate_left(&self, shift: usize) -> AReferee {
        let mut v = self.0.clone();
        if !v.is_empty() {
            let n = v.len();
            v.rotate_left(shift % n);
        }
        AReferee(v)
    }
}

pub fn r_referee(fi: &FeatureImage, cfg: &DescriptorConfig) -> Result<RReferee> {
    let layout = cfg.layout(fi.azimuths, fi.range_bins)?;
    let mut free_per_col = vec![0u32; fi.range_bins];
    for i in 0..fi.azimuths {
        for (col, &feat) in free_per_col.iter_mut().zip(fi.row(i)) {
            *col += u32::from(!feat);
        }
    }
    let values = free_per_col
        .chunks(layout.beta)
        .map(|block| block.iter().sum::<u32>() as f32)
        .collect();
    Ok(RReferee(values))
}

/// 1-based column of the farthest feature in each row, 0 for feature-free rows.
pub fn farthest_features(fi: &FeatureImage) -> Vec<usize> {
    (0..fi.azimuths)
        .map(|i| fi.row(i).iter().rposition(|&f| f).map_or(0, |j| j + 1))
        .collect()
}

pub fn a_referee(fi: &FeatureImage, cfg: &DescriptorConfig) -> Result<AReferee> {
    let layout = cfg.layout(fi.azimuths, fi.range_bins)?;
    let farthest = farthest_features(fi);
    // every feature of a row sits at or before its farthest one
    let per_row: Vec<u32> = (0..fi.azimuths)
        .map(|i| {
            let features = fi.row(i).iter().filter(|&&f| f).count();
            (farthest[i] - features) as u32
        })
        .collect();
    let values = per_row
        .chunks(layout.alpha)
        .map(|block| block.iter().sum::<u32>() as f32)
        .collect();
    Ok(AReferee(values))
}

/// Misclassification counts seen from the feature and the free-space side.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub fp_feature: usize,
    pub fn_feature: usize,
    pub fp_free: usize,
    pub fn_free: usize,
}

impl ConfusionCounts {
    pub fn false_detections(&self) -> usize {
        self.fp_feature + self.fn_feature
    }
}

pub fn confusion_duality(gt: &FeatureImage, pred: &FeatureImage) -> Result<ConfusionCounts> {
    if gt.shape() != pred.shape() {
        return Err(Error::LengthMismatch(gt.mask.len(), pred.mask.len()));
    }
    let mut c = ConfusionCounts::default();
    for (&g, &p) in gt.mask.iter().zip(&pred.mask) {
        match (g, p) {
            // feature predicted as free space
            (true, false) => {
                c.fn_feature += 1;
                c.fp_free += 1;
            }
            // free space predicted as feature
            (false, true) => {
                c.fp_feature += 1;
                c.fn_free += 1;
            }
            _ => {}
        }
    }
    assert_eq!(c.fp_feature + c.fn_feature, c.fn_free + c.fp_free);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::count_free_space;
    use proptest::prelude::*;

    fn mask_with(h: usize, w: usize, features: &[(usize, usize)]) -> FeatureImage {
        let mut m = vec![false; h * w];
        for &(i, j) in features {
            m[i * w + j] = true;
        }
        FeatureImage::from_mask(0, h, w, m)
    }

    fn cfg(beta: usize, alpha: usize) -> DescriptorConfig {
        DescriptorConfig {
            beta: Some(beta),
            alpha,
        }
    }

    // Independent references: plain double loops over the 1-based sums.
    fn naive_r(fi: &FeatureImage, beta: usize) -> Vec<f32> {
        let n_w = fi.range_bins / beta;
        let mut out = vec![0f32; n_w];
        for (k, slot) in out.iter_mut().enumerate() {
            for j in k * beta..(k + 1) * beta {
                for i in 0..fi.azimuths {
                    if fi.is_free(i, j) {
                        *slot += 1.0;
                    }
                }
            }
        }
        out
    }

    fn naive_a(fi: &FeatureImage, alpha: usize) -> Vec<f32> {
        let n_h = fi.azimuths / alpha;
        let mut out = vec![0f32; n_h];
        for (k, slot) in out.iter_mut().enumerate() {
            for i in k * alpha..(k + 1) * alpha {
                let mut r_i = 0;
                for j in 1..=fi.range_bins {
                    if fi.is_feature(i, j - 1) {
                        r_i = j;
                    }
                }
                for j in 1..=r_i {
                    if fi.is_free(i, j - 1) {
                        *slot += 1.0;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn r_all_free() {
        let fi = mask_with(4, 6, &[]);
        assert_eq!(r_referee(&fi, &cfg(3, 1)).unwrap().0, vec![12.0, 12.0]);
    }

    #[test]
    fn r_all_feature() {
        let fi = FeatureImage::from_mask(0, 4, 6, vec![true; 24]);
        assert_eq!(r_referee(&fi, &cfg(3, 1)).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn r_two_features() {
        let fi = mask_with(4, 6, &[(0, 1), (2, 4)]);
        assert_eq!(r_referee(&fi, &cfg(3, 1)).unwrap().0, vec![11.0, 11.0]);
    }

    #[test]
    fn a_counts_up_to_farthest_feature() {
        // row 0: only feature at 1-based column 3, so columns 1 and 2 are counted
        let fi = mask_with(4, 6, &[(0, 2)]);
        assert_eq!(a_referee(&fi, &cfg(3, 2)).unwrap().0, vec![2.0, 0.0]);
    }

    #[test]
    fn a_feature_free_mask_is_zero() {
        let fi = mask_with(4, 6, &[]);
        assert_eq!(a_referee(&fi, &cfg(3, 1)).unwrap().0, vec![0.0; 4]);
    }

    #[test]
    fn a_full_feature_row_contributes_nothing() {
        let fi = mask_with(4, 6, &[(1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (1, 5)]);
        assert_eq!(a_referee(&fi, &cfg(3, 1)).unwrap().0, vec![0.0; 4]);
    }

    #[test]
    fn default_layout_gives_42_blocks() {
        let l = DescriptorConfig::default().layout(400, 3360).unwrap();
        assert_eq!((l.beta, l.n_w, l.n_h), (80, 42, 400));
    }

    #[test]
    fn non_divisible_blocks_rejected() {
        let fi = mask_with(4, 6, &[]);
        assert!(matches!(
            r_referee(&fi, &cfg(4, 1)),
            Err(Error::Divisibility { .. })
        ));
        assert!(matches!(
            a_referee(&fi, &cfg(3, 3)),
            Err(Error::Divisibility { .. })
        ));
        assert!(DescriptorConfig::default().layout(4, 50).is_err());
    }

    #[test]
    fn confusion_identical_is_zero() {
        let fi = mask_with(3, 3, &[(1, 1)]);
        assert_eq!(
            confusion_duality(&fi, &fi).unwrap(),
            ConfusionCounts::default()
        );
    }

    #[test]
    fn confusion_exhaustive_miss() {
        let gt = mask_with(3, 3, &[]);
        let pred = FeatureImage::from_mask(0, 3, 3, vec![true; 9]);
        let c = confusion_duality(&gt, &pred).unwrap();
        assert_eq!(
            (c.fp_feature, c.fn_free, c.fn_feature, c.fp_free),
            (9, 9, 0, 0)
        );
    }

    #[test]
    fn confusion_shape_mismatch() {
        assert!(confusion_duality(&mask_with(3, 3, &[]), &mask_with(3, 4, &[])).is_err());
    }

    fn arb_mask() -> impl Strategy<Value = (FeatureImage, usize, usize)> {
        (1usize..=4, 1usize..=4, 1usize..=3, 1usize..=4).prop_flat_map(|(hb, wb, alpha, beta)| {
            let (h, w) = (hb * alpha, wb * beta);
            prop::collection::vec(prop::bool::weighted(0.3), h * w)
                .prop_map(move |m| (FeatureImage::from_mask(0, h, w, m), alpha, beta))
        })
    }

    proptest! {
        #[test]
        fn r_is_invariant_to_row_shift((fi, alpha, beta) in arb_mask(), s in 0usize..20) {
            let c = cfg(beta, alpha);
            prop_assert_eq!(r_referee(&fi.shift_rows(s), &c).unwrap(), r_referee(&fi, &c).unwrap());
        }

        #[test]
        fn a_is_equivariant_to_row_shift((fi, _alpha, beta) in arb_mask(), s in 0usize..20) {
            let c = cfg(beta, 1);
            let a = a_referee(&fi, &c).unwrap();
            prop_assert_eq!(a_referee(&fi.shift_rows(s), &c).unwrap(), a.rotate_left(s));
        }

        #[test]
        fn conservation_and_bounds((fi, alpha, beta) in arb_mask()) {
            let c = cfg(beta, alpha);
            let r = r_referee(&fi, &c).unwrap();
            let a = a_referee(&fi, &c).unwrap();
            prop_assert_eq!(r.0.iter().sum::<f32>() as usize, count_free_space(&fi));
            prop_assert!(r.0.iter().all(|&v| v >= 0.0 && v as usize <= fi.azimuths * beta));
            prop_assert!(a.0.iter().all(|&v| v >= 0.0 && v as usize <= alpha * fi.range_bins));
        }

        #[test]
        fn matches_naive_reference((fi, alpha, beta) in arb_mask()) {
            let c = cfg(beta, alpha);
            prop_assert_eq!(r_referee(&fi, &c).unwrap().0, naive_r(&fi, beta));
            prop_assert_eq!(a_referee(&fi, &c).unwrap().0, naive_a(&fi, alpha));
        }
    }
}
