//! 4D cosine-similarity tensors between query and support feature maps.

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::ops;
use crate::tensor::{FeatureMap, Real, Tensor};

/// Added to both feature norms before dividing.
pub const NORM_EPS: f64 = 1e-8;

/// `[Ch, Hq, Wq, Hs, Ws]` tensor of ReLU-clamped cosine similarities.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation4D<T = f32>(Tensor<T>);

impl<T: Real> Correlation4D<T> {
    pub fn new(t: Tensor<T>) -> Result<Self> {
        if t.rank() != 5 {
            return Err(Error::shape(format!(
                "4D correlation must be [Ch, Hq, Wq, Hs, Ws], got {:?}",
                t.dims()
            )));
        }
        Ok(Self(t))
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn query_dims(&self) -> (usize, usize) {
        (self.0.dims()[1], self.0.dims()[2])
    }

    pub fn support_dims(&self) -> (usize, usize) {
        (self.0.dims()[3], self.0.dims()[4])
    }

    pub fn spatial_dims(&self) -> [usize; 4] {
        let d = self.0.dims();
        [d[1], d[2], d[3], d[4]]
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }
}

/// Three channel-stacked correlation groups ordered fine to coarse.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPyramid<T = f32> {
    pub levels: [Correlation4D<T>; 3],
}

impl<T: Real> CorrelationPyramid<T> {
    pub fn channels(&self) -> [usize; 3] {
        [
            self.levels[0].channels(),
            self.levels[1].channels(),
            self.levels[2].channels(),
        ]
    }
}

/// Position-major copy of a `[C, H, W]` map plus per-position norms.
struct Rows {
    c: usize,
    rows: Vec<f64>,
    norms: Vec<f64>,
}

impl Rows {
    fn new<T: Real>(f: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = f.chw()?;
        let n = h * w;
        let fd = f.data();
        let mut rows = vec![0.0; n * c];
        for ch in 0..c {
            for p in 0..n {
                rows[p * c + ch] = fd[ch * n + p].as_f64();
            }
        }
        let norms = rows
            .chunks(c)
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(Self { c, rows, norms })
    }

    fn row(&self, p: usize) -> &[f64] {
        &self.rows[p * self.c..(p + 1) * self.c]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_pair<T: Real>(fq: &Tensor<T>, fs: &Tensor<T>) -> Result<()> {
    let (cq, _, _) = fq.chw()?;
    let (cs, _, _) = fs.chw()?;
    if cq != cs {
        return Err(Error::shape(format!(
            "query has {cq} channels, support has {cs}"
        )));
    }
    Ok(())
}

/// Kernel behind [`cosine_correlation`]; returns a `[1, Hq, Wq, Hs, Ws]` tensor.
pub fn cosine_kernel<T: Real>(fq: &Tensor<T>, fs: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair(fq, fs)?;
    let (_, hq, wq) = fq.chw()?;
    let (_, hs, ws) = fs.chw()?;
    let (q, s) = (Rows::new(fq)?, Rows::new(fs)?);
    let mut out = Vec::with_capacity(hq * wq * hs * ws);
    for p in 0..hq * wq {
        let qa = q.norms[p] + NORM_EPS;
        for r in 0..hs * ws {
            let v = dot(q.row(p), s.row(r)) / (qa * (s.norms[r] + NORM_EPS));
            out.push(T::from_f64(v.max(0.0)));
        }
    }
    Tensor::new([1, hq, wq, hs, ws], out)
}

/// Gradients of [`cosine_kernel`] with respect to both feature maps.
pub fn cosine_backward<T: Real>(
    fq: &Tensor<T>,
    fs: &Tensor<T>,
    gy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (q, s) = (Rows::new(fq)?, Rows::new(fs)?);
    let c = q.c;
    let (np, nr) = (q.norms.len(), s.norms.len());
    let gd = gy.data();
    let mut gq = vec![0.0f64; np * c];
    let mut gs = vec![0.0f64; nr * c];
    let mut q_self = vec![0.0f64; np];
    let mut s_self = vec![0.0f64; nr];
    for p in 0..np {
        let qa = q.norms[p] + NORM_EPS;
        for r in 0..nr {
            let g = gd[p * nr + r].as_f64();
            if g == 0.0 {
                continue;
            }
            let sb = s.norms[r] + NORM_EPS;
            let u = dot(q.row(p), s.row(r));
            if u <= 0.0 {
                continue;
            }
            let inv = g / (qa * sb);
            for ch in 0..c {
                gq[p * c + ch] += inv * s.rows[r * c + ch];
                gs[r * c + ch] += inv * q.rows[p * c + ch];
            }
            q_self[p] += inv * u / qa;
            s_self[r] += inv * u / sb;
        }
    }
    let finish = |rows: &Rows, mut grad: Vec<f64>, selfc: Vec<f64>, like: &Tensor<T>| {
        let n = rows.norms.len();
        for p in 0..n {
            if rows.norms[p] > 0.0 {
                let k = selfc[p] / rows.norms[p];
                for ch in 0..c {
                    grad[p * c + ch] -= k * rows.rows[p * c + ch];
                }
            }
        }
        let mut out = vec![T::zero(); n * c];
        for ch in 0..c {
            for p in 0..n {
                out[ch * n + p] = T::from_f64(grad[p * c + ch]);
            }
        }
        Tensor::new(like.dims(), out)
    };
    Ok((finish(&q, gq, q_self, fq)?, finish(&s, gs, s_self, fs)?))
}

/// Unmasked ("dense integral") correlation: every query position against every
/// support position, background included.
pub fn cosine_correlation<T: Real>(fq: &FeatureMap<T>, fs: &FeatureMap<T>) -> Result<Correlation4D<T>> {
    Correlation4D::new(cosine_kernel(fq, fs)?)
}

/// Zeroes support features outside the mask, after resizing the mask to the
/// feature resolution with nearest-neighbour sampling.
pub fn mask_features<T: Real>(fs: &FeatureMap<T>, mask: &BinaryMask) -> Result<FeatureMap<T>> {
    let (_, h, w) = fs.chw()?;
    let m = ops::resize_nearest(&mask.to_tensor::<T>(), h, w)?;
    ops::mul_spatial(fs, &m)
}

/// Masked hypercorrelation: support features are filtered by the support mask
/// before the cosine, so masked-out support positions correlate to exactly 0.
pub fn masked_hypercorrelation<T: Real>(
    fq: &FeatureMap<T>,
    fs: &FeatureMap<T>,
    support_mask: &Tensor<T>,
) -> Result<Correlation4D<T>> {
    check_pair(fq, fs)?;
    let mask = BinaryMask::from_tensor(support_mask)?;
    cosine_correlation(fq, &mask_features(fs, &mask)?)
}

/// Channel-concatenates all correlations sharing a level tag (0 = finest).
pub fn stack_and_group<T: Real>(correlations: &[(Correlation4D<T>, usize)]) -> Result<CorrelationPyramid<T>> {
    if let Some((_, tag)) = correlations.iter().find(|(_, l)| *l > 2) {
        return Err(Error::shape(format!("level tag {tag} outside 0..3")));
    }
    let mut levels: Vec<Correlation4D<T>> = Vec::with_capacity(3);
    for level in 0..3 {
        let members: Vec<&Tensor<T>> = correlations
            .iter()
            .filter(|(_, l)| *l == level)
            .map(|(c, _)| c.tensor())
            .collect();
        if members.is_empty() {
            return Err(Error::shape(format!("pyramid level {level} has no correlations")));
        }
        let spatial = &members[0].dims()[1..];
        if let Some(bad) = members.iter().find(|m| &m.dims()[1..] != spatial) {
            return Err(Error::shape(format!(
                "level {level} mixes spatial dims {:?} and {:?}",
                spatial,
                &bad.dims()[1..]
            )));
        }
        levels.push(Correlation4D::new(ops::concat0(&members)?)?);
    }
    let pyramid = CorrelationPyramid {
        levels: levels.try_into().map_err(|_| Error::shape("pyramid needs 3 levels"))?,
    };
    for w in pyramid.levels.windows(2) {
        let (a, b) = (w[0].spatial_dims(), w[1].spatial_dims());
        if a.iter().zip(&b).any(|(x, y)| y > x) {
            return Err(Error::shape(format!(
                "pyramid spatial dims must not grow from fine to coarse: {a:?} then {b:?}"
            )));
        }
    }
    Ok(pyramid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_tensor, rel_err};

    fn vecmap(c: &[f32], h: usize, w: usize) -> Tensor<f32> {
        // Same vector `c` at every position.
        let n = h * w;
        Tensor::from_fn([c.len(), h, w], |i| c[i / n])
    }

    #[test]
    fn self_cosine_is_one() {
        let f = vecmap(&[0.3, -1.2, 2.0], 2, 3);
        let c = cosine_correlation(&f, &f).unwrap();
        assert!(c.tensor().data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn orthogonal_and_opposite_are_zero() {
        let q = vecmap(&[1.0, 0.0], 1, 1);
        let s = vecmap(&[0.0, 1.0], 1, 1);
        assert_eq!(cosine_correlation(&q, &s).unwrap().tensor().data(), &[0.0]);
        let s = vecmap(&[-1.0, 0.0], 1, 1);
        assert_eq!(cosine_correlation(&q, &s).unwrap().tensor().data(), &[0.0]);
    }

    #[test]
    fn zero_vectors_correlate_to_zero() {
        let q = Tensor::<f32>::zeros([2, 2, 2]);
        let s = rand_tensor(&[2, 2, 2], 4);
        let c = cosine_correlation(&q, &s).unwrap();
        assert!(c.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let q = Tensor::<f32>::zeros([2, 2, 2]);
        let s = Tensor::<f32>::zeros([3, 2, 2]);
        assert!(matches!(cosine_correlation(&q, &s), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let q = rand_tensor::<f32>(&[3, 2, 2], 31);
        let s = rand_tensor::<f32>(&[3, 2, 2], 32);
        let got = cosine_correlation(&q, &s).unwrap();
        let expect = crate::oracles::cosine_correlation(&q.to_f64_vec(), &s.to_f64_vec(), 3, (2, 2), (2, 2));
        assert!(rel_err(&got.tensor().to_f64_vec(), &expect) < 1e-6);
    }

    #[test]
    fn masked_identity_zero_and_checkerboard() {
        let q = rand_tensor::<f32>(&[3, 4, 4], 41);
        let s = rand_tensor::<f32>(&[3, 4, 4], 42);
        let ones = Tensor::full([4, 4], 1.0f32);
        assert_eq!(
            masked_hypercorrelation(&q, &s, &ones).unwrap(),
            cosine_correlation(&q, &s).unwrap()
        );
        let zeros = Tensor::zeros([4, 4]);
        let z = masked_hypercorrelation(&q, &s, &zeros).unwrap();
        assert!(z.tensor().data().iter().all(|&v| v == 0.0));

        let checker = BinaryMask::from_fn(4, 4, |y, x| (y + x) % 2 == 0).to_tensor::<f32>();
        let got = masked_hypercorrelation(&q, &s, &checker).unwrap();
        let mut sm = s.to_f64_vec();
        for ch in 0..3 {
            for p in 0..16 {
                sm[ch * 16 + p] *= checker.data()[p] as f64;
            }
        }
        let expect = crate::oracles::cosine_correlation(&q.to_f64_vec(), &sm, 3, (4, 4), (4, 4));
        assert!(rel_err(&got.tensor().to_f64_vec(), &expect) < 1e-6);
        for pq in 0..16 {
            for ps in 0..16 {
                if checker.data()[ps] == 0.0 {
                    assert_eq!(got.tensor().data()[pq * 16 + ps], 0.0);
                }
            }
        }
    }

    #[test]
    fn masked_rejects_non_binary_mask() {
        let q = rand_tensor::<f32>(&[2, 2, 2], 1);
        let m = Tensor::full([2, 2], 0.5f32);
        assert!(matches!(masked_hypercorrelation(&q, &q, &m), Err(Error::Validation(_))));
    }

    #[test]
    fn stacking_preserves_order_and_counts_channels() {
        let mk = |seed, h| cosine_correlation(&rand_tensor::<f32>(&[2, h, h], seed), &rand_tensor(&[2, h, h], seed + 1)).unwrap();
        let a = mk(1, 4);
        let b = mk(3, 4);
        let pyr = stack_and_group(&[(a.clone(), 0), (b.clone(), 0), (mk(5, 2), 1), (mk(7, 1), 2)]).unwrap();
        assert_eq!(pyr.channels(), [2, 1, 1]);
        let l0 = pyr.levels[0].tensor();
        assert_eq!(&l0.data()[..a.tensor().len()], a.tensor().data());
        assert_eq!(&l0.data()[a.tensor().len()..], b.tensor().data());

        let mut list = Vec::new();
        for (level, count, h) in [(0, 3, 4), (1, 4, 2), (2, 3, 1)] {
            for i in 0..count {
                list.push((mk(10 * level as u64 + i as u64, h), level));
            }
        }
        assert_eq!(stack_and_group(&list).unwrap().channels(), [3, 4, 3]);
    }

    #[test]
    fn stacking_rejects_mixed_dims() {
        let a = cosine_correlation(&rand_tensor::<f32>(&[2, 4, 4], 1), &rand_tensor(&[2, 4, 4], 2)).unwrap();
        let b = cosine_correlation(&rand_tensor::<f32>(&[2, 2, 2], 1), &rand_tensor(&[2, 2, 2], 2)).unwrap();
        let r = stack_and_group(&[(a.clone(), 0), (b.clone(), 0), (b.clone(), 1), (b, 2)]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
