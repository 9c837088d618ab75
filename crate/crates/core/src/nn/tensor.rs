//! Minimal 4-D tensor (batch, channel, height, width), row-major.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_data(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "tensor data length {} != shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Offset of element (b, c, i, j).
    #[inline]
    pub fn idx(&self, b: usize, c: usize, i: usize, j: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + i) * self.shape[3] + j
    }

    /// One (batch, channel) spatial plane.
    #[inline]
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let hw = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * hw;
        &mut self.data[start..start + hw]
    }
}

/// Stack two tensors along the channel dimension.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3] {
        return Err(Error::ShapeMismatch(format!(
            "concat {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let [n, ca, h, w] = a.shape;
    let cb = b.shape[1];
    let mut out = Tensor4::zeros([n, ca + cb, h, w]);
    for bi in 0..n {
        for c in 0..ca {
            out.plane_mut(bi, c).copy_from_slice(a.plane(bi, c));
        }
        for c in 0..cb {
            out.plane_mut(bi, ca + c).copy_from_slice(b.plane(bi, c));
        }
    }
    Ok(out)
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels(g: &Tensor4, ca: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = g.shape;
    let cb = c - ca;
    let mut ga = Tensor4::zeros([n, ca, h, w]);
    let mut gb = Tensor4::zeros([n, cb, h, w]);
    for bi in 0..n {
        for ch in 0..ca {
            ga.plane_mut(bi, ch).copy_from_slice(g.plane(bi, ch));
        }
        for ch in 0..cb {
            gb.plane_mut(bi, ch).copy_from_slice(g.plane(bi, ca + ch));
        }
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_shapes() {
        let a = Tensor4::zeros([1, 2, 4, 4]);
        let b = Tensor4::zeros([1, 3, 4, 4]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape, [1, 5, 4, 4]);
        let (ga, gb) = split_channels(&c, 2);
        assert_eq!(ga.shape, a.shape);
        assert_eq!(gb.shape, b.shape);
    }
}
