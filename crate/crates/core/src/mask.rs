use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-major `H x W` map with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::validation(format!("mask value {bad} is not binary")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| f(y, x) as u8)
            .collect();
        Self {
            height,
            width,
            data,
        }
    }

    /// Accepts a `[H, W]` tensor whose entries are exactly 0 or 1.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match t.dims() {
            &[h, w] => (h, w),
            &[1, h, w] => (h, w),
            d => return Err(Error::shape(format!("mask must be [H, W], got {d:?}"))),
        };
        let data = t
            .data()
            .iter()
            .map(|&v| {
                if v == T::zero() {
                    Ok(0)
                } else if v == T::one() {
                    Ok(1)
                } else {
                    Err(Error::validation(format!(
                        "mask value {:?} is not in {{0, 1}}",
                        v
                    )))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1 - v).collect(),
        }
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            [self.height, self.width],
            self.data.iter().map(|&v| if v == 1 { T::one() } else { T::zero() }).collect(),
        )
        .expect("mask dims are consistent")
    }
}
