//! Fusion of per-support predictions.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::pipeline::episode::KShotConfig;
use crate::tensor::Tensor;

/// Mean of `K` foreground-probability maps `[H, W]`, thresholded strictly
/// above `tau`.
pub fn kshot_fuse(preds: &[Tensor<f32>], cfg: &KShotConfig) -> Result<BinaryMask> {
    let first = preds
        .first()
        .ok_or_else(|| Error::validation("k-shot fusion of zero predictions"))?;
    let (h, w) = match first.dims() {
        &[h, w] => (h, w),
        d => return Err(Error::shape(format!("fusion expects [H, W] maps, got {d:?}"))),
    };
    if let Some(p) = preds.iter().find(|p| p.dims() != first.dims()) {
        return Err(Error::shape(format!(
            "fusion maps {:?} and {:?} differ",
            first.dims(),
            p.dims()
        )));
    }
    let k = preds.len() as f64;
    let data = (0..h * w)
        .map(|i| {
            let s: f64 = preds.iter().map(|p| p.data()[i] as f64).sum();
            (s / k > cfg.tau) as u8
        })
        .collect();
    BinaryMask::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_pair() {
        let cfg = KShotConfig::default();
        let p = Tensor::new([1, 3], vec![0.2f32, 0.5, 0.51]).unwrap();
        assert_eq!(kshot_fuse(&[p], &cfg).unwrap().data(), &[0, 0, 1]);
        let a = Tensor::new([1, 1], vec![0.8f32]).unwrap();
        let b = Tensor::new([1, 1], vec![0.4f32]).unwrap();
        assert_eq!(kshot_fuse(&[a, b], &cfg).unwrap().data(), &[1]);
    }

    #[test]
    fn empty_is_validation_error() {
        assert!(matches!(kshot_fuse(&[], &KShotConfig::default()), Err(Error::Validation(_))));
    }
}
