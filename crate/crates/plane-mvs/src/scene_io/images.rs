//! Grayscale image container and raster loading.

use std::path::Path;

use super::SceneError;

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at a real-valued position; `None` outside
    /// `[0, w-1] x [0, h-1]`. Integer positions return the stored pixel
    /// value exactly.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let wm = (self.width - 1) as f64;
        let hm = (self.height - 1) as f64;
        if !(x >= 0.0 && x <= wm && y >= 0.0 && y <= hm) {
            return None;
        }
        let x0 = x as usize;
        let y0 = y as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let r0 = y0 * self.width;
        let r1 = y1 * self.width;
        let v00 = self.data[r0 + x0] as f64;
        let v01 = self.data[r0 + x1] as f64;
        let v10 = self.data[r1 + x0] as f64;
        let v11 = self.data[r1 + x1] as f64;
        let top = v00 + tx * (v01 - v00);
        let bot = v10 + tx * (v11 - v10);
        Some(top + ty * (bot - top))
    }

    /// Bilinear sample for positions already known to satisfy
    /// `0 <= x < w-1` and `0 <= y < h-1`; agrees with [`Self::sample`]
    /// exactly where both apply. Callers must bounds-check the enclosing
    /// region themselves.
    #[inline]
    pub fn sample_inside(&self, x: f64, y: f64) -> f64 {
        let x0 = x as usize;
        let y0 = y as usize;
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let r0 = y0 * self.width;
        let r1 = r0 + self.width;
        let v00 = self.data[r0 + x0] as f64;
        let v01 = self.data[r0 + x0 + 1] as f64;
        let v10 = self.data[r1 + x0] as f64;
        let v11 = self.data[r1 + x0 + 1] as f64;
        let top = v00 + tx * (v01 - v00);
        let bot = v10 + tx * (v11 - v10);
        top + ty * (bot - top)
    }

    /// Downsamples to `⌈w/2⌉ x ⌈h/2⌉` by averaging 2x2 blocks (edge pixels
    /// are clamped on odd dimensions).
    pub fn half_scale(&self) -> GrayImage {
        let nw = self.width.div_ceil(2);
        let nh = self.height.div_ceil(2);
        GrayImage::from_fn(nw, nh, |x, y| {
            let x0 = 2 * x;
            let y0 = 2 * y;
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            0.25 * (self.get(x0, y0) + self.get(x1, y0) + self.get(x0, y1) + self.get(x1, y1))
        })
    }

    /// Writes the image as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), SceneError> {
        let buf: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, buf)
            .expect("buffer size matches dimensions");
        img.save(path).map_err(|e| SceneError::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Loads a raster image as grayscale via the BT.601 luma weights
/// `0.299 R + 0.587 G + 0.114 B`, scaled to `[0, 1]`. With `half_scale`
/// the result is bilinearly downsampled to `⌈w/2⌉ x ⌈h/2⌉`.
pub fn load_gray(path: &Path, half_scale: bool) -> Result<GrayImage, SceneError> {
    let decoded = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            SceneError::FileMissing(path.to_path_buf())
        }
        other => SceneError::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    for px in rgb.pixels() {
        let [r, g, b] = px.0;
        data.push((0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0);
    }
    let img = GrayImage::from_vec(w, h, data);
    Ok(if half_scale { img.half_scale() } else { img })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_scale_constant_image_stays_constant() {
        let img = GrayImage::from_fn(4, 4, |_, _| 1.0);
        let half = img.half_scale();
        assert_eq!(half.width(), 2);
        assert_eq!(half.height(), 2);
        assert!(half.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_scale_checkerboard_averages_to_half() {
        let img = GrayImage::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { 0.0 } else { 1.0 });
        let half = img.half_scale();
        assert_eq!((half.width(), half.height()), (1, 1));
        assert!((half.get(0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn half_scale_odd_dimensions_round_up() {
        let img = GrayImage::from_fn(5, 3, |_, _| 0.25);
        let half = img.half_scale();
        assert_eq!((half.width(), half.height()), (3, 2));
        assert!(half.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn sample_handles_borders_and_rejects_outside() {
        let img = GrayImage::from_fn(3, 2, |x, y| (x + 3 * y) as f32 * 0.1);
        assert_eq!(img.sample(2.0, 1.0), Some(img.get(2, 1) as f64));
        assert!(img.sample(2.0001, 0.0).is_none());
        assert!(img.sample(0.0, -0.0001).is_none());
        let mid = img.sample(0.5, 0.5).unwrap();
        let expect = 0.25
            * (img.get(0, 0) as f64
                + img.get(1, 0) as f64
                + img.get(0, 1) as f64
                + img.get(1, 1) as f64);
        assert!((mid - expect).abs() < 1e-9);
    }

    #[test]
    fn load_gray_roundtrips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        GrayImage::from_fn(4, 4, |_, _| 1.0).save_png(&path).unwrap();

        let full = load_gray(&path, false).unwrap();
        assert_eq!((full.width(), full.height()), (4, 4));
        assert!(full.data().iter().all(|&v| v == 1.0));

        let half = load_gray(&path, true).unwrap();
        assert_eq!((half.width(), half.height()), (2, 2));
        assert!(half.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn load_gray_checkerboard_half_scales_to_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("check.png");
        GrayImage::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { 0.0 } else { 1.0 })
            .save_png(&path)
            .unwrap();
        let half = load_gray(&path, true).unwrap();
        assert_eq!((half.width(), half.height()), (1, 1));
        assert!((half.get(0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn load_gray_missing_file() {
        let err = load_gray(Path::new("/nonexistent/image.png"), false).unwrap_err();
        assert!(matches!(err, SceneError::FileMissing(_)));
    }
}
