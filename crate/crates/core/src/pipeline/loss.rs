//! Two-class cross-entropy.

use crate::autograd::PROB_FLOOR;
use crate::decoder::PredictionMap;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Real;

/// `-sum_{h,w} log max(P[gt(h,w)], 1e-12)`, summed over pixels.
pub fn ce_loss<T: Real>(pred: &PredictionMap<T>, gt: &BinaryMask) -> Result<f64> {
    let (h, w) = pred.dims();
    if (h, w) != gt.dims() {
        return Err(Error::shape(format!(
            "prediction {h}x{w} and mask {:?} differ",
            gt.dims()
        )));
    }
    let p = pred.probs.data();
    Ok(gt
        .data()
        .iter()
        .enumerate()
        .map(|(i, &t)| -p[t as usize * h * w + i].as_f64().max(PROB_FLOOR).ln())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn pred(probs: Tensor<f32>) -> PredictionMap {
        PredictionMap {
            logits: probs.clone(),
            probs,
            coarse_fg: Tensor::zeros([1, 1, 1]),
        }
    }

    #[test]
    fn closed_forms() {
        let gt = BinaryMask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let uniform = pred(Tensor::full([2, 2, 2], 0.5));
        assert!((ce_loss(&uniform, &gt).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);
        let mut perfect = Tensor::zeros([2, 2, 2]);
        for (i, &t) in gt.data().iter().enumerate() {
            perfect.data_mut()[t as usize * 4 + i] = 1.0;
        }
        assert_eq!(ce_loss(&pred(perfect), &gt).unwrap(), 0.0);
        let wrong = BinaryMask::filled(3, 3, false);
        assert!(matches!(ce_loss(&uniform, &wrong), Err(Error::Shape(_))));
    }
}
