//! Spatial and Fourier-domain image filters.
//!
//! Spectra use the standard DFT layout: DC at index (0, 0), positive
//! frequencies first, negative frequencies wrapped to the end. All radial
//! math is done on signed frequency indices.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("dimension mismatch: image is {image:?}, filter is {filter:?}")]
    Dimensions {
        image: (usize, usize),
        filter: (usize, usize),
    },
    #[error("image I/O: {0}")]
    Image(#[from] image::ImageError),
    #[error("filter file: {0}")]
    FilterFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parameter(msg: impl Into<String>) -> FilterError {
    FilterError::Parameter(msg.into())
}

/// Planar image with samples nominally in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::from_data(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        assert!(channels == 1 || channels == 3, "images have 1 or 3 channels");
        assert_eq!(data.len(), width * height * channels, "sample count");
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::from_data(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn clamp_unit(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Quantizes to 8 bits and back.
    pub fn quantize_8bit(&mut self) {
        self.data
            .iter_mut()
            .for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FilterError> {
        let dynamic = image::open(path)?;
        Ok(Self::from_dynamic(&dynamic))
    }

    pub fn from_dynamic(dynamic: &image::DynamicImage) -> Self {
        let (width, height) = (dynamic.width() as usize, dynamic.height() as usize);
        if dynamic.color().has_color() {
            let rgb = dynamic.to_rgb8();
            Self::from_fn(width, height, 3, |c, y, x| {
                f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
            })
        } else {
            let luma = dynamic.to_luma8();
            Self::from_fn(width, height, 1, |_, y, x| {
                f64::from(luma.get_pixel(x as u32, y as u32)[0]) / 255.0
            })
        }
    }

    pub fn to_dynamic(&self) -> image::DynamicImage {
        let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            image::DynamicImage::ImageLuma8(image::ImageBuffer::from_fn(w, h, |x, y| {
                image::Luma([byte(self.get(0, y as usize, x as usize))])
            }))
        } else {
            image::DynamicImage::ImageRgb8(image::ImageBuffer::from_fn(w, h, |x, y| {
                let (x, y) = (x as usize, y as usize);
                image::Rgb([
                    byte(self.get(0, y, x)),
                    byte(self.get(1, y, x)),
                    byte(self.get(2, y, x)),
                ])
            }))
        }
    }

    /// Writes an 8-bit PNG.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FilterError> {
        self.to_dynamic().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Signed frequency of DFT bin `i` out of `n`; the Nyquist bin of an even
/// length maps to `-n/2`.
pub fn signed_frequency(i: usize, n: usize) -> isize {
    if 2 * i < n {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Radius of bin `(u, v)` in cycles per image (for square images).
pub fn bin_radius(u: usize, v: usize, height: usize, width: usize) -> f64 {
    let (fu, fv) = (signed_frequency(u, height) as f64, signed_frequency(v, width) as f64);
    fu.hypot(fv)
}

/// Largest bin radius of an image, `sqrt((h/2)^2 + (w/2)^2)`.
pub fn max_radius(height: usize, width: usize) -> f64 {
    ((height / 2) as f64).hypot((width / 2) as f64)
}

/// Row/column FFT plans for one image size.
#[derive(Clone)]
pub struct Fft2d {
    width: usize,
    height: usize,
    row_forward: Arc<dyn Fft<f64>>,
    row_inverse: Arc<dyn Fft<f64>>,
    col_forward: Arc<dyn Fft<f64>>,
    col_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2d")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl Fft2d {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_forward: planner.plan_fft_forward(width),
            row_inverse: planner.plan_fft_inverse(width),
            col_forward: planner.plan_fft_forward(height),
            col_inverse: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.width * self.height);
        rows.process(data);
        let mut transposed = transpose(data, self.height, self.width);
        cols.process(&mut transposed);
        data.copy_from_slice(&transpose(&transposed, self.width, self.height));
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_forward, &self.col_forward);
    }

    /// Inverse transform including the `1/(h w)` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.row_inverse, &self.col_inverse);
        let scale = 1.0 / (self.width * self.height) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    pub fn forward_real(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut data);
        data
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

/// Real amplitudes of the top-left (non-negative frequency) quadrant of a
/// spectral filter, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrant {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Quadrant {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "quadrant sample count");
        Self { rows, cols, values }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// CSV with one quadrant row per line, no header.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self, FilterError> {
        let mut csv = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut values = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for record in csv.records() {
            let record = record.map_err(|e| FilterError::FilterFile(e.to_string()))?;
            if *cols.get_or_insert(record.len()) != record.len() {
                return Err(FilterError::FilterFile(format!(
                    "row {} has {} columns",
                    rows + 1,
                    record.len()
                )));
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| FilterError::FilterFile(format!("row {}: {field:?}: {e}", rows + 1)))?;
                values.push(v);
            }
            rows += 1;
        }
        let cols = cols.ok_or_else(|| FilterError::FilterFile("empty filter file".into()))?;
        Ok(Self::new(rows, cols, values))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FilterError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FilterError> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut file)?;
        Ok(())
    }
}

/// Quadrant index that full-size bin `i` (of `n`) reads from.
fn fold_index(i: usize, n: usize) -> usize {
    (signed_frequency(i, n).unsigned_abs()).min(n / 2 - 1)
}

/// Real, phase-free amplitude map over the full DFT grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilter {
    pub height: usize,
    pub width: usize,
    pub amplitudes: Vec<f64>,
}

impl SpectralFilter {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            amplitudes: vec![1.0; height * width],
        }
    }

    pub fn amplitude(&self, u: usize, v: usize) -> f64 {
        self.amplitudes[u * self.width + v]
    }

    /// Largest deviation from `A(u, v) = A(-u, -v)`.
    pub fn symmetry_residue(&self) -> f64 {
        let (h, w) = (self.height, self.width);
        let mut worst: f64 = 0.0;
        for u in 0..h {
            for v in 0..w {
                let mirrored = self.amplitude((h - u) % h, (w - v) % w);
                worst = worst.max((self.amplitude(u, v) - mirrored).abs());
            }
        }
        worst
    }
}

/// Expands a quadrant to the full grid by mirroring it into the other three
/// quadrants. Bins with `|f| = n/2` reuse the last quadrant row/column, so
/// the map is symmetric about DC and filtered real images stay real.
pub fn expand_hermitian(quadrant: &Quadrant) -> Result<SpectralFilter, FilterError> {
    if quadrant.rows == 0 || quadrant.cols == 0 {
        return Err(parameter("empty quadrant"));
    }
    if let Some(bad) = quadrant.values.iter().find(|v| !v.is_finite()) {
        return Err(parameter(format!("non-finite quadrant entry {bad}")));
    }
    let (height, width) = (2 * quadrant.rows, 2 * quadrant.cols);
    let mut amplitudes = Vec::with_capacity(height * width);
    for u in 0..height {
        let r = fold_index(u, height);
        for v in 0..width {
            amplitudes.push(quadrant.get(r, fold_index(v, width)));
        }
    }
    Ok(SpectralFilter {
        height,
        width,
        amplitudes,
    })
}

/// Adjoint of [`expand_hermitian`]: sums full-grid values back onto the
/// quadrant entries they were copied from.
pub fn expand_hermitian_adjoint(full: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (height, width) = (2 * rows, 2 * cols);
    assert_eq!(full.len(), height * width);
    let mut out = vec![0.0; rows * cols];
    for u in 0..height {
        let r = fold_index(u, height);
        for v in 0..width {
            out[r * cols + fold_index(v, width)] += full[u * width + v];
        }
    }
    out
}

/// Result of a spectral filter before clamping.
#[derive(Debug, Clone)]
pub struct Filtered {
    pub image: Image,
    /// Largest imaginary part discarded by the inverse transform.
    pub max_imaginary: f64,
}

/// Multiplies every channel's spectrum by `filter` and transforms back,
/// without clamping.
pub fn apply_spectral_filter_raw(img: &Image, filter: &SpectralFilter) -> Result<Filtered, FilterError> {
    if (img.height(), img.width()) != (filter.height, filter.width) {
        return Err(FilterError::Dimensions {
            image: (img.height(), img.width()),
            filter: (filter.height, filter.width),
        });
    }
    let fft = Fft2d::new(img.height(), img.width());
    let mut out = img.clone();
    let mut max_imaginary: f64 = 0.0;
    for c in 0..img.channels() {
        let mut spectrum = fft.forward_real(img.plane(c));
        for (z, &a) in spectrum.iter_mut().zip(&filter.amplitudes) {
            *z *= a;
        }
        fft.inverse(&mut spectrum);
        for (dst, z) in out.plane_mut(c).iter_mut().zip(&spectrum) {
            *dst = z.re;
            max_imaginary = max_imaginary.max(z.im.abs());
        }
    }
    Ok(Filtered {
        image: out,
        max_imaginary,
    })
}

/// Spectral filtering followed by clamping to [0, 1].
pub fn apply_spectral_filter(img: &Image, filter: &SpectralFilter) -> Result<Image, FilterError> {
    let mut out = apply_spectral_filter_raw(img, filter)?.image;
    out.clamp_unit();
    Ok(out)
}

/// Radially symmetric filter with amplitude `curve(f)` at each bin, `f` in
/// cpd given the display sampling rate. The DC bin is 1.
pub fn radial_filter_from_curve(
    curve: impl Fn(f64) -> f64,
    height: usize,
    width: usize,
    degrees_per_px: f64,
) -> Result<SpectralFilter, FilterError> {
    if !(degrees_per_px > 0.0) {
        return Err(parameter(format!(
            "degrees per pixel must be positive, got {degrees_per_px}"
        )));
    }
    let mut amplitudes = Vec::with_capacity(height * width);
    for u in 0..height {
        let fu = signed_frequency(u, height) as f64 / height as f64;
        for v in 0..width {
            if u == 0 && v == 0 {
                amplitudes.push(1.0);
                continue;
            }
            let fv = signed_frequency(v, width) as f64 / width as f64;
            let cpd = fu.hypot(fv) / degrees_per_px;
            let a = curve(cpd);
            if !a.is_finite() {
                return Err(parameter(format!("curve undefined at {cpd} cpd")));
            }
            amplitudes.push(a);
        }
    }
    Ok(SpectralFilter {
        height,
        width,
        amplitudes,
    })
}

/// A curve sampled on a uniform grid from 0, evaluated by linear
/// interpolation. Used for curves that are expensive to evaluate per bin.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedCurve {
    step: f64,
    values: Vec<f64>,
}

impl TabulatedCurve {
    pub fn tabulate<E>(curve: impl Fn(f64) -> Result<f64, E>, max_frequency: f64, samples: usize) -> Result<Self, E> {
        assert!(samples >= 2 && max_frequency > 0.0);
        let step = max_frequency / (samples - 1) as f64;
        let values = (0..samples)
            .map(|i| curve(i as f64 * step))
            .collect::<Result<Vec<_>, E>>()?;
        Ok(Self { step, values })
    }

    /// `NaN` beyond the tabulated range.
    pub fn eval(&self, f: f64) -> f64 {
        let x = f / self.step;
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return if (x - (self.values.len() - 1) as f64).abs() < 1e-9 {
                *self.values.last().unwrap()
            } else {
                f64::NAN
            };
        }
        let t = x - i as f64;
        self.values[i] * (1.0 - t) + self.values[i + 1] * t
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

/// Zeroes every bin with radius at or below `cutoff` cycles per image
/// (none when `cutoff` is 0), then clamps.
pub fn ideal_highpass(img: &Image, cutoff: f64) -> Result<Image, FilterError> {
    let limit = max_radius(img.height(), img.width());
    if !(0.0..=limit).contains(&cutoff) {
        return Err(parameter(format!("cutoff {cutoff} outside [0, {limit}]")));
    }
    if cutoff == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = (img.height(), img.width());
    let mut amplitudes = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            amplitudes.push(if bin_radius(u, v, h, w) <= cutoff { 0.0 } else { 1.0 });
        }
    }
    apply_spectral_filter(
        img,
        &SpectralFilter {
            height: h,
            width: w,
            amplitudes,
        },
    )
}

/// Index into `0..n` with mirror reflection at both ends (edge sample not
/// repeated).
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Normalized, truncated 1D Gaussian kernel (radius `ceil(4 sigma)`),
/// applied separably with reflect padding.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub taps: Vec<f64>,
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Self {
        assert!(sigma >= 0.0);
        if sigma == 0.0 {
            return Self { sigma, taps: vec![1.0] };
        }
        let radius = (4.0 * sigma).ceil() as isize;
        let mut taps: Vec<f64> = (-radius..=radius)
            .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Self { sigma, taps }
    }

    pub fn radius(&self) -> usize {
        self.taps.len() / 2
    }

    fn convolve_line(&self, src: &[f64], stride: usize, n: usize, dst: &mut [f64]) {
        let r = self.radius() as isize;
        for (i, out) in dst.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (t, &k) in self.taps.iter().enumerate() {
                acc += k * src[reflect(i as isize + t as isize - r, n) * stride];
            }
            *out = acc;
        }
    }

    fn convolve_line_adjoint(&self, src: &[f64], n: usize, dst: &mut [f64], stride: usize) {
        let r = self.radius() as isize;
        for (i, &g) in src.iter().enumerate().take(n) {
            for (t, &k) in self.taps.iter().enumerate() {
                dst[reflect(i as isize + t as isize - r, n) * stride] += k * g;
            }
        }
    }

    /// Blurs a `height x width` plane: rows first, then columns.
    pub fn apply_plane(&self, plane: &[f64], height: usize, width: usize) -> Vec<f64> {
        let mut horizontal = vec![0.0; plane.len()];
        for y in 0..height {
            self.convolve_line(
                &plane[y * width..],
                1,
                width,
                &mut horizontal[y * width..(y + 1) * width],
            );
        }
        let mut out = vec![0.0; plane.len()];
        let mut column = vec![0.0; height];
        for x in 0..width {
            self.convolve_line(&horizontal[x..], width, height, &mut column);
            for (y, v) in column.iter().enumerate() {
                out[y * width + x] = *v;
            }
        }
        out
    }

    /// Transpose of [`GaussianKernel::apply_plane`].
    pub fn adjoint_plane(&self, grad: &[f64], height: usize, width: usize) -> Vec<f64> {
        let mut after_columns = vec![0.0; grad.len()];
        let mut column = vec![0.0; height];
        for x in 0..width {
            for (y, c) in column.iter_mut().enumerate() {
                *c = grad[y * width + x];
            }
            self.convolve_line_adjoint(&column, height, &mut after_columns[x..], width);
        }
        let mut out = vec![0.0; grad.len()];
        for y in 0..height {
            self.convolve_line_adjoint(
                &after_columns[y * width..(y + 1) * width],
                width,
                &mut out[y * width..(y + 1) * width],
                1,
            );
        }
        out
    }
}

/// Separable Gaussian blur with reflect padding; `sigma = 0` is the
/// identity.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image, FilterError> {
    if !(sigma >= 0.0) {
        return Err(parameter(format!("sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel = GaussianKernel::new(sigma);
    let mut out = img.clone();
    for c in 0..img.channels() {
        let blurred = kernel.apply_plane(img.plane(c), img.height(), img.width());
        out.plane_mut(c).copy_from_slice(&blurred);
    }
    Ok(out)
}

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

// (first input index, normalized weights) per output sample
fn resample_weights(input: usize, output: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = input as f64 / output as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..output)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
            let hi = ((center + support + 0.5).floor() as usize).min(input);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|x| cubic_kernel((x as f64 - center + 0.5) / filter_scale))
                .collect();
            let total: f64 = weights.iter().sum();
            if total != 0.0 {
                weights.iter_mut().for_each(|w| *w /= total);
            }
            (lo, weights)
        })
        .collect()
}

/// Separable bicubic resampling. When shrinking, the kernel is stretched by
/// the scale factor so the resize is antialiased.
pub fn resize_bicubic(img: &Image, width: usize, height: usize) -> Result<Image, FilterError> {
    if width == 0 || height == 0 {
        return Err(parameter("target size must be at least 1x1"));
    }
    let horizontal = resample_weights(img.width(), width);
    let vertical = resample_weights(img.height(), height);
    let mut out = Image::new(width, height, img.channels());
    for c in 0..img.channels() {
        let src = img.plane(c);
        let mut rows = vec![0.0; img.height() * width];
        for y in 0..img.height() {
            let line = &src[y * img.width()..(y + 1) * img.width()];
            for (x, (lo, weights)) in horizontal.iter().enumerate() {
                rows[y * width + x] = weights.iter().enumerate().map(|(t, w)| w * line[lo + t]).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, (lo, weights)) in vertical.iter().enumerate() {
            for x in 0..width {
                dst[y * width + x] = weights
                    .iter()
                    .enumerate()
                    .map(|(t, w)| w * rows[(lo + t) * width + x])
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Bicubic resize to `target x target` and back to the original size.
pub fn resize_roundtrip(img: &Image, target: usize) -> Result<Image, FilterError> {
    let limit = img.width().min(img.height());
    if target < 1 || target > limit {
        return Err(parameter(format!("target resolution {target} outside [1, {limit}]")));
    }
    let small = resize_bicubic(img, target, target)?;
    resize_bicubic(&small, img.width(), img.height())
}

/// Spectral power `|F|^2` of one channel.
pub fn power_spectrum(plane: &[f64], height: usize, width: usize) -> Vec<f64> {
    Fft2d::new(height, width)
        .forward_real(plane)
        .iter()
        .map(|z| z.norm_sqr())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, size: usize, channels: usize) -> Image {
        Image::from_fn(size, size, channels, |_, _, _| rng.random::<f64>())
    }

    #[test]
    fn signed_frequencies() {
        let s: Vec<isize> = (0..6).map(|i| signed_frequency(i, 6)).collect();
        assert_eq!(s, vec![0, 1, 2, -3, -2, -1]);
        assert!((max_radius(224, 224) - 158.391_919_3).abs() < 1e-6);
    }

    #[test]
    fn fft_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 12, 1);
        let fft = Fft2d::new(12, 12);
        let mut spec = fft.forward_real(img.plane(0));
        assert!((spec[0].re - img.plane(0).iter().sum::<f64>()).abs() < 1e-10);
        fft.inverse(&mut spec);
        for (z, v) in spec.iter().zip(img.plane(0)) {
            assert!((z.re - v).abs() < 1e-12 && z.im.abs() < 1e-12);
        }
    }

    #[test]
    fn ones_quadrant_expands_to_ones() {
        let f = expand_hermitian(&Quadrant::filled(4, 4, 1.0)).unwrap();
        assert!(f.amplitudes.iter().all(|&a| a == 1.0));
        assert_eq!((f.height, f.width), (8, 8));
        assert!(expand_hermitian(&Quadrant::new(1, 1, vec![f64::NAN])).is_err());
    }

    #[test]
    fn expansion_adjoint_identity() {
        // <E q, g> == <q, E^T g>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = Quadrant::new(5, 3, (0..15).map(|_| rng.random::<f64>()).collect());
        let g: Vec<f64> = (0..60).map(|_| rng.random::<f64>() - 0.5).collect();
        let lhs: f64 = expand_hermitian(&q)
            .unwrap()
            .amplitudes
            .iter()
            .zip(&g)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = q
            .values
            .iter()
            .zip(expand_hermitian_adjoint(&g, 5, 3))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identity_and_dc_only_filters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 16, 3);
        let out = apply_spectral_filter(&img, &SpectralFilter::identity(16, 16)).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut dc = SpectralFilter {
            height: 16,
            width: 16,
            amplitudes: vec![0.0; 256],
        };
        dc.amplitudes[0] = 1.0;
        let flat = apply_spectral_filter(&img, &dc).unwrap();
        for c in 0..3 {
            let mean = img.plane(c).iter().sum::<f64>() / 256.0;
            assert!(flat.plane(c).iter().all(|v| (v - mean).abs() < 1e-12));
        }
        assert!(matches!(
            apply_spectral_filter(&img, &SpectralFilter::identity(8, 8)),
            Err(FilterError::Dimensions { .. })
        ));
    }

    #[test]
    fn blur_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 20, 1);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        let flat = Image::from_fn(20, 20, 1, |_, _, _| 0.37);
        let blurred = gaussian_blur(&flat, 3.0).unwrap();
        assert!(blurred.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn blur_of_impulse_is_the_kernel() {
        let size = 41;
        let img = Image::from_fn(size, size, 1, |_, y, x| if y == 20 && x == 20 { 1.0 } else { 0.0 });
        let out = gaussian_blur(&img, 2.5).unwrap();
        let kernel = GaussianKernel::new(2.5);
        let r = kernel.radius() as isize;
        assert_eq!(r, 10);
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as isize - 20, x as isize - 20);
                let expected = if dy.abs() <= r && dx.abs() <= r {
                    kernel.taps[(dy + r) as usize] * kernel.taps[(dx + r) as usize]
                } else {
                    0.0
                };
                assert!((out.get(0, y, x) - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn blur_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (7, 9);
        let kernel = GaussianKernel::new(2.0);
        let x: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let g: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let lhs: f64 = kernel.apply_plane(&x, h, w).iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(kernel.adjoint_plane(&g, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn reflect_padding() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn resize_identity_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = random_image(&mut rng, 24, 1);
        let same = resize_roundtrip(&img, 24).unwrap();
        for (a, b) in same.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(resize_roundtrip(&img, 0).is_err());
        assert!(resize_roundtrip(&img, 25).is_err());
        let flat = Image::from_fn(24, 24, 1, |_, _, _| 0.6);
        let rt = resize_roundtrip(&flat, 7).unwrap();
        assert!(rt.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn cubic_kernel_values() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert!((cubic_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn highpass_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = random_image(&mut rng, 16, 1);
        assert_eq!(ideal_highpass(&img, 0.0).unwrap(), img);
        let all = ideal_highpass(&img, max_radius(16, 16)).unwrap();
        assert!(all.data().iter().all(|&v| v == 0.0));
        assert!(ideal_highpass(&img, -1.0).is_err());
        assert!(ideal_highpass(&img, 12.0).is_err());
    }

    #[test]
    fn radial_filters() {
        let ones = radial_filter_from_curve(|_| 1.0, 8, 8, 3.0 / 256.0).unwrap();
        assert_eq!(ones, SpectralFilter::identity(8, 8));
        let zero_dc = radial_filter_from_curve(|f| f / 100.0, 8, 8, 3.0 / 256.0).unwrap();
        assert_eq!(zero_dc.amplitude(0, 0), 1.0);
        assert_eq!(zero_dc.symmetry_residue(), 0.0);
        assert!(radial_filter_from_curve(|_| f64::NAN, 8, 8, 3.0 / 256.0).is_err());
    }

    #[test]
    fn tabulated_curve_interpolates() {
        let t = TabulatedCurve::tabulate(|f| Ok::<_, ()>(2.0 * f), 10.0, 11).unwrap();
        assert!((t.eval(3.3) - 6.6).abs() < 1e-12);
        assert_eq!(t.eval(10.0), 20.0);
        assert!(t.eval(10.5).is_nan());
    }

    #[test]
    fn quadrant_csv_roundtrip() {
        let q = Quadrant::new(2, 3, vec![1.0, 0.5, 0.25, -1.0, 1e-7, 3.0]);
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        assert_eq!(Quadrant::read_csv(buf.as_slice()).unwrap(), q);
        assert!(Quadrant::read_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(Quadrant::read_csv("1,x\n".as_bytes()).is_err());
    }

    #[test]
    fn png_roundtrip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let img = Image::from_fn(5, 4, 1, |_, y, x| (y * 5 + x) as f64 / 19.0);
        img.save(&path).unwrap();
        let back = Image::load(&path).unwrap();
        let mut q = img.clone();
        q.quantize_8bit();
        assert_eq!(back, q);

        let rgb = Image::from_fn(3, 3, 3, |c, y, x| ((c + y + x) % 4) as f64 / 3.0);
        let path = dir.path().join("c.png");
        rgb.save(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap().channels(), 3);
    }
}
