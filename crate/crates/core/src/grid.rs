//! Dense 2-D value and mask grids (row-major).

use crate::error::{Error, Result};

/// H×W grid of f64 values, row-major. Used for image pixels and saliency maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(h: usize, w: usize) -> Self {
        Grid {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Grid {
            h,
            w,
            data: vec![v; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} = {} values", h, w, h * w),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Grid { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.w + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamp every value into [lo, hi].
    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }

    /// 3×3 box blur with edge clamping, applied `passes` times.
    pub fn box_blur3(&self, passes: usize) -> Grid {
        let mut cur = self.clone();
        for _ in 0..passes {
            let mut next = Grid::zeros(self.h, self.w);
            for y in 0..self.h {
                for x in 0..self.w {
                    let mut acc = 0.0;
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let yy = (y as i64 + dy).clamp(0, self.h as i64 - 1) as usize;
                            let xx = (x as i64 + dx).clamp(0, self.w as i64 - 1) as usize;
                            acc += cur.at(yy, xx);
                        }
                    }
                    next.set(y, x, acc / 9.0);
                }
            }
            cur = next;
        }
        cur
    }

    /// Bilinear resample to (nh, nw). Exact integer box average when
    /// downscaling by an integer factor.
    pub fn resample(&self, nh: usize, nw: usize) -> Grid {
        if nh == self.h && nw == self.w {
            return self.clone();
        }
        if self.h % nh == 0 && self.w % nw == 0 {
            let fy = self.h / nh;
            let fx = self.w / nw;
            let mut out = Grid::zeros(nh, nw);
            let inv = 1.0 / (fy * fx) as f64;
            for y in 0..nh {
                for x in 0..nw {
                    let mut acc = 0.0;
                    for dy in 0..fy {
                        for dx in 0..fx {
                            acc += self.at(y * fy + dy, x * fx + dx);
                        }
                    }
                    out.set(y, x, acc * inv);
                }
            }
            return out;
        }
        let mut out = Grid::zeros(nh, nw);
        let sy = self.h as f64 / nh as f64;
        let sx = self.w as f64 / nw as f64;
        for y in 0..nh {
            for x in 0..nw {
                let fy = ((y as f64 + 0.5) * sy - 0.5).max(0.0);
                let fx = ((x as f64 + 0.5) * sx - 0.5).max(0.0);
                let y0 = (fy.floor() as usize).min(self.h - 1);
                let x0 = (fx.floor() as usize).min(self.w - 1);
                let y1 = (y0 + 1).min(self.h - 1);
                let x1 = (x0 + 1).min(self.w - 1);
                let ty = fy - y0 as f64;
                let tx = fx - x0 as f64;
                let v = self.at(y0, x0) * (1.0 - ty) * (1.0 - tx)
                    + self.at(y0, x1) * (1.0 - ty) * tx
                    + self.at(y1, x0) * ty * (1.0 - tx)
                    + self.at(y1, x1) * ty * tx;
                out.set(y, x, v);
            }
        }
        out
    }
}

/// H×W binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", h, w),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Mask { h, w, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    /// Morphological dilation with a disk of the given radius.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as i64;
        let mut out = Mask::empty(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                if !self.at(y, x) {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dy * dy + dx * dx > r * r {
                            continue;
                        }
                        let yy = y as i64 + dy;
                        let xx = x as i64 + dx;
                        if yy >= 0 && xx >= 0 && (yy as usize) < self.h && (xx as usize) < self.w {
                            out.set(yy as usize, xx as usize, true);
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_integer_box_average() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let d = g.resample(1, 1);
        assert_eq!(d.at(0, 0), 1.5);
    }

    #[test]
    fn blur_preserves_constant() {
        let g = Grid::filled(5, 5, 0.3);
        let b = g.box_blur3(2);
        for &v in b.values() {
            assert!((v - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn dilate_grows_mask() {
        let mut m = Mask::empty(7, 7);
        m.set(3, 3, true);
        let d = m.dilate(2);
        assert!(d.at(3, 5) && d.at(1, 3) && !d.at(0, 0));
        assert!(d.count() > 1);
    }
}
