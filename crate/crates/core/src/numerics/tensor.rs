use crate::error::{Error, Result};

/// Dense row-major tensor of rank 0 to 3.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(Error::shape(format!("rank {} exceeds 3", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension of a rank-2 tensor (time).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Trailing dimension of a rank-2 tensor (channels).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows `[start, end)` of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let c = self.cols();
        Tensor { shape: vec![end - start, c], data: self.data[start * c..end * c].to_vec() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Interpolation taps `(lo, hi, frac)` for fractional row positions in `[0, len-1]`.
pub(crate) fn interp_taps(len: usize, positions: &[f64]) -> Vec<(usize, usize, f64)> {
    positions
        .iter()
        .map(|&p| {
            if len == 1 {
                return (0, 0, 0.0);
            }
            let p = p.clamp(0.0, (len - 1) as f64);
            let lo = (p.floor() as usize).min(len - 2);
            (lo, lo + 1, p - lo as f64)
        })
        .collect()
}

/// Samples rows of `input` at fractional positions by linear blending of neighbours.
pub fn interpolate_rows(input: &Tensor, positions: &[f64]) -> Tensor {
    let c = input.cols();
    let taps = interp_taps(input.rows(), positions);
    let mut data = Vec::with_capacity(taps.len() * c);
    for &(lo, hi, a) in &taps {
        let (rl, rh) = (input.row(lo), input.row(hi));
        data.extend(rl.iter().zip(rh).map(|(l, h)| (1.0 - a) * l + a * h));
    }
    Tensor { shape: vec![taps.len(), c], data }
}

/// Endpoint-preserving resampling of an `M x C` sequence to `N x C`.
pub fn linear_interpolate(input: &Tensor, target_len: usize) -> Result<Tensor> {
    let m = input.rows();
    if m < 2 || target_len < 2 {
        return Err(Error::argument(format!(
            "linear interpolation needs at least 2 samples in and out (got {m} -> {target_len})"
        )));
    }
    Ok(interpolate_rows(input, &resample_positions(m, target_len)))
}

pub(crate) fn resample_positions(m: usize, n: usize) -> Vec<f64> {
    let scale = (m - 1) as f64 / (n - 1) as f64;
    (0..n)
        .map(|t| if t == n - 1 { (m - 1) as f64 } else { t as f64 * scale })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_payload() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 2, 2, 2], vec![0.0; 16]).is_err());
        assert_eq!(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap().cols(), 3);
    }

    #[test]
    fn ramp_midpoint() {
        let x = Tensor::new(vec![2, 1], vec![0.0, 2.0]).unwrap();
        let y = linear_interpolate(&x, 3).unwrap();
        assert_eq!(y.data(), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn same_length_is_identity() {
        let x = Tensor::new(vec![4, 2], vec![1.0, -1.0, 0.5, 3.0, 2.0, 2.0, -7.0, 0.25]).unwrap();
        assert_eq!(linear_interpolate(&x, 4).unwrap(), x);
    }

    #[test]
    fn too_short_rejected() {
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        assert!(linear_interpolate(&x, 5).is_err());
        let x = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(linear_interpolate(&x, 1).is_err());
    }

    #[test]
    fn endpoints_exact_and_positions_increase() {
        let x = Tensor::new(vec![7, 1], vec![0.3, 0.1, 9.7, -2.2, 1.0 / 3.0, 0.7, 5.5]).unwrap();
        for n in 2..40 {
            let y = linear_interpolate(&x, n).unwrap();
            assert_eq!(y.row(0), x.row(0));
            assert_eq!(y.row(n - 1), x.row(6));
            let pos = resample_positions(7, n);
            assert!(pos.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
