//! Dense rgb image with values in [0, 1], row-major.

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    /// Length width * height * 3; pixel (x, y) channel c at ((y*w)+x)*3+c.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Image {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = self.idx(x, y);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn same_shape(&self, other: &Image<T>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Snaps every value to the nearest 8-bit grid point k/255. Applied to
    /// synthetic ground truth so in-memory images equal their PNG encoding.
    /// The grid point is computed in f64 and rounded once, matching the PNG
    /// read path bit for bit.
    pub fn quantize_u8(&mut self) {
        for v in self.data.iter_mut() {
            let k = (v.as_f64().clamp(0.0, 1.0) * 255.0).round();
            *v = T::from_f64(k / 255.0);
        }
    }
}
