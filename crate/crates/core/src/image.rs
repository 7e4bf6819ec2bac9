//! Grayscale images on a rectangular domain, frame ingestion and zero padding.
//!
//! Samples are stored row-major: index `j = i1 + width * i2`, where `i1`
//! runs along the first coordinate `x1` and `i2` along `x2`. Row `i2 = 0`
//! is the first row of the decoded raster.

use std::path::Path;

use image::DynamicImage;

use crate::error::{Error, Result};
use crate::grid::{cell_centered_grid, Grid};

/// Luminance weights applied to RGB input.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    /// The unit square `[0,1]²`.
    pub const UNIT: Domain = Domain {
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: 1.0,
    };

    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let d = Domain {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        if !(d.width() > 0.0 && d.height() > 0.0) || ![x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("degenerate domain {d:?}")));
        }
        Ok(d)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    /// Closed-set membership.
    #[inline]
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_min && p[0] <= self.x_max && p[1] >= self.y_min && p[1] <= self.y_max
    }
}

impl Default for Domain {
    fn default() -> Self {
        Domain::UNIT
    }
}

/// Grayscale intensity field sampled at the cell centers of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    width: usize,
    height: usize,
    samples: Vec<f64>,
    domain: Domain,
}

impl ScalarImage {
    pub fn new(width: usize, height: usize, samples: Vec<f64>, domain: Domain) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if samples.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} samples for a {width}x{height} image, got {}",
                width * height,
                samples.len()
            )));
        }
        if let Some(j) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {j} is not finite")));
        }
        Domain::new(domain.x_min, domain.x_max, domain.y_min, domain.y_max)?;
        Ok(ScalarImage {
            width,
            height,
            samples,
            domain,
        })
    }

    /// Square image on the unit domain.
    pub fn from_samples(n: usize, samples: Vec<f64>) -> Result<Self> {
        Self::new(n, n, samples, Domain::UNIT)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        ScalarImage {
            width,
            height,
            samples: vec![value; width * height],
            domain: Domain::UNIT,
        }
    }

    /// Samples `f` at the cell centers of a `width × height` grid on `[0,1]²`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let grid = cell_centered_grid(width, height, Domain::UNIT);
        let samples = grid.points().iter().map(|p| f(p[0], p[1])).collect();
        ScalarImage {
            width,
            height,
            samples,
            domain: Domain::UNIT,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.samples[i1 + self.width * i2]
    }

    /// The cell-centered grid the samples live on.
    pub fn grid(&self) -> Grid {
        cell_centered_grid(self.width, self.height, self.domain)
    }

    pub fn sum(&self) -> f64 {
        self.samples.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &ScalarImage) -> f64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Quantizes to 8 bits after clamping to `[0,1]`.
    pub fn to_gray8(&self) -> image::GrayImage {
        let data = self
            .samples
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, data)
            .expect("buffer size matches dimensions")
    }

    /// Writes an 8-bit raster; the format follows the file extension (png, pgm).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_gray8().save(path).map_err(|e| Error::Ingestion {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Per-axis area-averaging weights: for each target cell, the list of
/// `(source index, weight)` pairs that cover it. Weights sum to one.
fn area_weights(source: usize, target: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = source as f64 / target as f64;
    (0..target)
        .map(|k| {
            let lo = k as f64 * ratio;
            let hi = (k + 1) as f64 * ratio;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(source);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

/// Resamples by area averaging (box filter over each target cell's footprint).
///
/// Integer downsampling factors reduce to plain block means.
pub fn resample_area(img: &ScalarImage, width: usize, height: usize) -> Result<ScalarImage> {
    if width == 0 || height == 0 {
        return Err(Error::invalid("target dimensions must be positive"));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let wx = area_weights(img.width, width);
    let wy = area_weights(img.height, height);

    // rows first, then columns
    let mut tmp = vec![0.0; width * img.height];
    for i2 in 0..img.height {
        let row = &img.samples[i2 * img.width..(i2 + 1) * img.width];
        for (k, taps) in wx.iter().enumerate() {
            tmp[k + width * i2] = taps.iter().map(|&(s, w)| w * row[s]).sum();
        }
    }
    let mut out = vec![0.0; width * height];
    for (k2, taps) in wy.iter().enumerate() {
        for k1 in 0..width {
            out[k1 + width * k2] = taps.iter().map(|&(s, w)| w * tmp[k1 + width * s]).sum();
        }
    }
    ScalarImage::new(width, height, out, img.domain)
}

/// Converts a decoded raster to intensities in `[0,1]` and resamples it to
/// `target_n × target_n` on the unit domain.
pub fn from_dynamic_image(raster: &DynamicImage, target_n: usize) -> Result<ScalarImage> {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("empty raster"));
    }
    let samples: Vec<f64> = match raster {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(_) => raster
            .to_luma8()
            .as_raw()
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                (LUMA_WEIGHTS[0] * r as f64 + LUMA_WEIGHTS[1] * g as f64 + LUMA_WEIGHTS[2] * b as f64)
                    / 255.0
            })
            .collect(),
    };
    let native = ScalarImage::new(w, h, samples, Domain::UNIT)?;
    resample_area(&native, target_n, target_n)
}

/// Reads an 8-bit PNG/PGM frame, converts it to grayscale and resamples it
/// to the working resolution.
pub fn load_frame(path: impl AsRef<Path>, target_n: usize) -> Result<ScalarImage> {
    let path = path.as_ref();
    let raster = image::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if raster.width() != raster.height() {
        log::warn!(
            "{}: non-square frame {}x{} resampled to {target_n}x{target_n}",
            path.display(),
            raster.width(),
            raster.height()
        );
    }
    from_dynamic_image(&raster, target_n).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Shrinks the image into the central `(1 - 2·margin)` fraction of its
/// domain and fills the border band with zeros. The sample count is kept.
pub fn pad_image(img: &ScalarImage, margin_fraction: f64) -> Result<ScalarImage> {
    if !(0.0..0.5).contains(&margin_fraction) {
        return Err(Error::invalid(format!(
            "margin fraction {margin_fraction} outside [0, 0.5)"
        )));
    }
    if margin_fraction == 0.0 {
        return Ok(img.clone());
    }
    let inner = |n: usize| (((1.0 - 2.0 * margin_fraction) * n as f64).round() as usize).max(1);
    let (kw, kh) = (inner(img.width), inner(img.height));
    let shrunk = resample_area(img, kw, kh)?;
    let (ox, oy) = ((img.width - kw) / 2, (img.height - kh) / 2);
    let mut out = vec![0.0; img.len()];
    for i2 in 0..kh {
        for i1 in 0..kw {
            out[(i1 + ox) + img.width * (i2 + oy)] = shrunk.get(i1, i2);
        }
    }
    ScalarImage::new(img.width, img.height, out, img.domain)
}
