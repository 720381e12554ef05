//! Psychophysical models of human spatial vision and Gaussian fits to them.
//!
//! Frequencies are in cycles per degree (cpd) unless a name says
//! otherwise. Conversion to cycles per pixel uses the display sampling rate
//! in degrees per pixel (default 3/256: 256 px spanning 3 degrees).

use serde::{Deserialize, Serialize};

/// Default display sampling rate, degrees of visual angle per pixel.
pub const DEGREES_PER_PIXEL: f64 = 3.0 / 256.0;
/// Lowest frequency a 3 degree stimulus contains.
pub const F_MIN_CPD: f64 = 1.0 / 3.0;
/// Nyquist frequency of the presentation monitor.
pub const F_MAX_CPD: f64 = 42.58;
/// Presentation time of the benchmark stimuli, seconds.
pub const PRESENTATION_SECONDS: f64 = 0.2;
/// Node count of the log-spaced fitting grid.
pub const GRID_NODES: usize = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PsychophysError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Sensitivity at zero spatial frequency is not modelled; the caller
    /// substitutes 1.0 for the DC component.
    #[error("zero spatial frequency: apply the DC convention")]
    DcConvention,
    #[error("quadrature did not converge on [{lower}, {upper}]")]
    NonConvergent { lower: f64, upper: f64 },
}

fn parameter(msg: String) -> PsychophysError {
    PsychophysError::Parameter(msg)
}

/// Scale laws of Kelly's CSF at retinal velocity `v` (deg/s): the gain
/// `k = 6.1 + 7.3 |log10(v/3)|^3` and the peak position
/// `s_max = 45.9 / (v + 2)`.
pub fn kelly_scale(v: f64) -> (f64, f64) {
    let k = 6.1 + 7.3 * (v / 3.0).log10().abs().powi(3);
    let s_max = 45.9 / (v + 2.0);
    (k, s_max)
}

/// Kelly's travelling-wave CSF, `k v a^2 exp(-2 a / s_max)` with
/// `a = 2 pi f_s` the angular spatial frequency.
pub fn kelly_csf(f_s: f64, v: f64) -> Result<f64, PsychophysError> {
    if !(v > 0.0) {
        return Err(parameter(format!("retinal velocity must be positive, got {v}")));
    }
    if !(f_s >= 0.0) {
        return Err(parameter(format!("spatial frequency must be non-negative, got {f_s}")));
    }
    Ok(kelly_unchecked(f_s, v))
}

fn kelly_unchecked(f_s: f64, v: f64) -> f64 {
    let (k, s_max) = kelly_scale(v);
    let a = std::f64::consts::TAU * f_s;
    k * v * a * a * (-2.0 * a / s_max).exp()
}

/// Kelly's CSF as a function of spatial and temporal frequency, via the
/// retinal velocity `v = f_t / f_s`. At `f_t = 0` this is the `v -> 0+`
/// limit, which is 0.
pub fn kelly_csf_ft(f_s: f64, f_t: f64) -> Result<f64, PsychophysError> {
    if f_s == 0.0 {
        return Err(PsychophysError::DcConvention);
    }
    if !(f_s > 0.0) || !(f_t >= 0.0) {
        return Err(parameter(format!("need f_s > 0 and f_t >= 0, got ({f_s}, {f_t})")));
    }
    if f_t == 0.0 {
        return Ok(0.0);
    }
    Ok(kelly_unchecked(f_s, f_t / f_s))
}

/// Unnormalized sinc, `sin(x)/x`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Quadrature controls for [`boxcar_csf_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxcarQuadrature {
    /// Relative tolerance of each adaptive integral.
    pub rel_tol: f64,
    /// Integration stops once doubling the upper limit adds less than this
    /// fraction of the running total.
    pub tail_tol: f64,
    /// First upper limit in Hz.
    pub initial_upper_hz: f64,
    pub max_upper_hz: f64,
}

impl Default for BoxcarQuadrature {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            tail_tol: 1e-9,
            initial_upper_hz: 60.0,
            max_upper_hz: 1e5,
        }
    }
}

/// Sensitivity to a grating shown for `duration` seconds with hard on- and
/// offset: `[ ∫ S(f_s, f_t)^2 T^2 sinc^2(pi f_t T) df_t ]^(1/2)` over
/// `f_t >= 0`.
pub fn boxcar_csf(f_s: f64, duration: f64) -> Result<f64, PsychophysError> {
    boxcar_csf_with(f_s, duration, &BoxcarQuadrature::default())
}

pub fn boxcar_csf_with(f_s: f64, duration: f64, quad: &BoxcarQuadrature) -> Result<f64, PsychophysError> {
    if !(f_s > 0.0) || !(duration > 0.0) {
        return Err(parameter(format!(
            "need f_s > 0 and T > 0, got f_s = {f_s}, T = {duration}"
        )));
    }
    let integrand = |f_t: f64| {
        if f_t <= 0.0 {
            return 0.0;
        }
        let s = kelly_unchecked(f_s, f_t / f_s);
        let h = duration * sinc(std::f64::consts::PI * f_t * duration);
        s * s * h * h
    };
    // panels no wider than one sinc lobe
    let lobe = 1.0 / duration;
    let mut lower = 0.0;
    let mut upper = quad.initial_upper_hz;
    let mut total = 0.0;
    loop {
        let segment = integrate_panels(&integrand, lower, upper, lobe, quad.rel_tol)?;
        total += segment;
        if segment <= quad.tail_tol * total || (total == 0.0 && upper >= quad.max_upper_hz) {
            break;
        }
        if upper >= quad.max_upper_hz {
            return Err(PsychophysError::NonConvergent { lower: 0.0, upper });
        }
        lower = upper;
        upper *= 2.0;
    }
    Ok(total.sqrt())
}

fn integrate_panels(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    max_width: f64,
    rel_tol: f64,
) -> Result<f64, PsychophysError> {
    let panels = ((b - a) / max_width).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    let estimates: Vec<(f64, f64)> = (0..panels)
        .map(|i| gauss_kronrod(f, a + i as f64 * width, a + (i + 1) as f64 * width))
        .collect();
    let scale: f64 = estimates.iter().map(|e| e.0.abs()).sum();
    let tol = (rel_tol * scale).max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    for (i, (estimate, error)) in estimates.into_iter().enumerate() {
        let lo = a + i as f64 * width;
        total += adapt(f, lo, lo + width, estimate, error, tol / panels as f64, 0)?;
    }
    Ok(total)
}

fn adapt(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    estimate: f64,
    error: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, PsychophysError> {
    if error <= tol {
        return Ok(estimate);
    }
    if depth >= 40 {
        return Err(PsychophysError::NonConvergent { lower: a, upper: b });
    }
    let mid = 0.5 * (a + b);
    let (left, left_err) = gauss_kronrod(f, a, mid);
    let (right, right_err) = gauss_kronrod(f, mid, b);
    Ok(adapt(f, a, mid, left, left_err, tol / 2.0, depth + 1)?
        + adapt(f, mid, b, right, right_err, tol / 2.0, depth + 1)?)
}

// 7-point Gauss / 15-point Kronrod nodes on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod estimate and its difference to the embedded Gauss rule.
fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for i in 0..7 {
        let dx = half * XGK[i];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Williams' optical MTF of the eye, `D(f_s, s0) (w1 + w2 exp(-a f_s))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilliamsMtf {
    /// Diffraction cutoff in cpd (87.2 for a 3 mm pupil).
    pub s0: f64,
    pub w1: f64,
    pub w2: f64,
    /// Decay rate per cpd.
    pub a: f64,
}

impl Default for WilliamsMtf {
    /// Interferometric fit for a 3 mm pupil.
    fn default() -> Self {
        Self {
            s0: 87.2,
            w1: 0.3481,
            w2: 0.6519,
            a: 0.1212,
        }
    }
}

impl WilliamsMtf {
    pub fn eval(&self, f_s: f64) -> Result<f64, PsychophysError> {
        Ok(diffraction_mtf(f_s, self.s0)? * (self.w1 + self.w2 * (-self.a * f_s).exp()))
    }
}

/// Modulation transfer of a diffraction-limited system with cutoff `s0`.
pub fn diffraction_mtf(f_s: f64, s0: f64) -> Result<f64, PsychophysError> {
    if !(f_s >= 0.0) {
        return Err(parameter(format!("spatial frequency must be non-negative, got {f_s}")));
    }
    if !(s0 > 0.0) {
        return Err(parameter(format!("cutoff must be positive, got {s0}")));
    }
    if f_s >= s0 {
        return Ok(0.0);
    }
    let x = f_s / s0;
    Ok(std::f64::consts::FRAC_2_PI * (x.acos() - x * (1.0 - x * x).sqrt()))
}

pub fn williams_mtf(f_s: f64, params: &WilliamsMtf) -> Result<f64, PsychophysError> {
    params.eval(f_s)
}

/// Amplitude spectrum of a unit-mass spatial Gaussian of standard deviation
/// `sigma_px` pixels at frequency `f` cpd.
pub fn gaussian_spectrum(f: f64, sigma_px: f64, degrees_per_px: f64) -> Result<f64, PsychophysError> {
    if !(sigma_px > 0.0) {
        return Err(parameter(format!("sigma must be positive, got {sigma_px}")));
    }
    if !(degrees_per_px > 0.0) {
        return Err(parameter(format!(
            "degrees per pixel must be positive, got {degrees_per_px}"
        )));
    }
    Ok(gaussian_unchecked(f, sigma_px, degrees_per_px))
}

fn gaussian_unchecked(f: f64, sigma_px: f64, degrees_per_px: f64) -> f64 {
    let f_cpp = f * degrees_per_px;
    (-2.0 * std::f64::consts::PI.powi(2) * sigma_px * sigma_px * f_cpp * f_cpp).exp()
}

/// Log-spaced frequency grid used for the weighted error integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct LogGrid {
    pub frequencies: Vec<f64>,
    step: f64,
}

impl LogGrid {
    pub fn new(f_min: f64, f_max: f64, nodes: usize) -> Result<Self, PsychophysError> {
        if !(f_min > 0.0) {
            return Err(parameter(format!("f_min must be positive, got {f_min}")));
        }
        if !(f_max > f_min) || nodes < 2 {
            return Err(parameter(format!(
                "need f_max > f_min and at least 2 nodes, got [{f_min}, {f_max}] with {nodes}"
            )));
        }
        let (lo, hi) = (f_min.ln(), f_max.ln());
        let step = (hi - lo) / (nodes - 1) as f64;
        let frequencies = (0..nodes)
            .map(|i| {
                if i == nodes - 1 {
                    f_max
                } else {
                    (lo + step * i as f64).exp()
                }
            })
            .collect();
        Ok(Self { frequencies, step })
    }

    pub fn standard() -> Self {
        Self::new(F_MIN_CPD, F_MAX_CPD, GRID_NODES).expect("valid constants")
    }

    pub fn sample(&self, curve: impl Fn(f64) -> f64) -> Vec<f64> {
        self.frequencies.iter().map(|&f| curve(f)).collect()
    }

    /// Trapezoid rule in `ln f`.
    fn integrate(&self, values: impl Iterator<Item = f64>) -> f64 {
        let n = self.frequencies.len();
        let mut sum = 0.0;
        for (i, (v, &f)) in values.zip(&self.frequencies).enumerate() {
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            sum += w * v * f;
        }
        sum * self.step
    }
}

/// Divides by the maximum over the samples.
pub fn normalize_to_peak(values: &mut [f64]) {
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Power-weighted RMSE of two sampled curves on `grid`, with weight
/// `f^-beta`.
pub fn wrmse_sampled(a: &[f64], b: &[f64], grid: &LogGrid, beta: f64) -> f64 {
    let freqs = &grid.frequencies;
    let numerator = grid.integrate(
        a.iter()
            .zip(b)
            .zip(freqs)
            .map(|((x, y), f)| f.powf(-beta) * (x - y).powi(2)),
    );
    let denominator = grid.integrate(freqs.iter().map(|f| f.powf(-beta)));
    (numerator / denominator).sqrt()
}

/// `sqrt( ∫ f^-beta (A - B)^2 df / ∫ f^-beta df )` over `[f_min, f_max]` on a
/// 1024-node log grid. Both curves are expected to be normalized already.
pub fn wrmse(
    curve_a: impl Fn(f64) -> f64,
    curve_b: impl Fn(f64) -> f64,
    beta: f64,
    f_min: f64,
    f_max: f64,
) -> Result<f64, PsychophysError> {
    let grid = LogGrid::new(f_min, f_max, GRID_NODES)?;
    Ok(wrmse_sampled(&grid.sample(curve_a), &grid.sample(curve_b), &grid, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub f_min: f64,
    pub f_max: f64,
    pub degrees_per_px: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_step: f64,
    pub tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            f_min: F_MIN_CPD,
            f_max: F_MAX_CPD,
            degrees_per_px: DEGREES_PER_PIXEL,
            sigma_min: 0.1,
            sigma_max: 10.0,
            sigma_step: 0.05,
            tolerance: 1e-3,
        }
    }
}

impl FitConfig {
    pub fn grid(&self) -> Result<LogGrid, PsychophysError> {
        LogGrid::new(self.f_min, self.f_max, GRID_NODES)
    }

    pub fn sigma_candidates(&self) -> Vec<f64> {
        let steps = ((self.sigma_max - self.sigma_min) / self.sigma_step + 1e-9).floor() as usize;
        (0..=steps)
            .map(|i| self.sigma_min + self.sigma_step * i as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub sigma_px: f64,
    pub wrmse: f64,
    pub beta: f64,
    pub f_min: f64,
    pub f_max: f64,
}

/// Peak-normalized Gaussian spectrum sampled on `grid`.
pub fn normalized_gaussian(grid: &LogGrid, sigma_px: f64, degrees_per_px: f64) -> Vec<f64> {
    let mut g = grid.sample(|f| gaussian_unchecked(f, sigma_px, degrees_per_px));
    normalize_to_peak(&mut g);
    g
}

/// Error of the best-normalized Gaussian against a normalized target, for
/// each sigma.
pub fn sigma_scan(target: &[f64], grid: &LogGrid, beta: f64, sigmas: &[f64], degrees_per_px: f64) -> Vec<(f64, f64)> {
    sigmas
        .iter()
        .map(|&s| {
            (
                s,
                wrmse_sampled(target, &normalized_gaussian(grid, s, degrees_per_px), grid, beta),
            )
        })
        .collect()
}

/// Samples `target` on the fitting grid and normalizes it to its peak.
pub fn sample_target(
    target: impl Fn(f64) -> Result<f64, PsychophysError>,
    config: &FitConfig,
) -> Result<Vec<f64>, PsychophysError> {
    let grid = config.grid()?;
    let mut values = grid
        .frequencies
        .iter()
        .map(|&f| target(f))
        .collect::<Result<Vec<_>, _>>()?;
    normalize_to_peak(&mut values);
    Ok(values)
}

/// Gaussian width whose normalized spectrum best matches the normalized
/// target: grid search over sigma, then golden-section refinement around
/// the best candidate.
pub fn fit_sigma(
    target: impl Fn(f64) -> Result<f64, PsychophysError>,
    beta: f64,
    config: &FitConfig,
) -> Result<FitResult, PsychophysError> {
    let values = sample_target(target, config)?;
    fit_sigma_sampled(&values, beta, config)
}

pub fn fit_sigma_sampled(target: &[f64], beta: f64, config: &FitConfig) -> Result<FitResult, PsychophysError> {
    if !(config.sigma_min > 0.0) || !(config.sigma_max > config.sigma_min) || !(config.sigma_step > 0.0) {
        return Err(parameter(format!("invalid sigma search range {config:?}")));
    }
    let grid = config.grid()?;
    if target.len() != grid.frequencies.len() {
        return Err(parameter(format!(
            "target has {} samples, grid has {}",
            target.len(),
            grid.frequencies.len()
        )));
    }
    let dpp = config.degrees_per_px;
    let error = |s: f64| wrmse_sampled(target, &normalized_gaussian(&grid, s, dpp), &grid, beta);

    let scan = sigma_scan(target, &grid, beta, &config.sigma_candidates(), dpp);
    let (grid_sigma, grid_error) = scan
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty sigma grid");

    let (lo, hi) = (
        (grid_sigma - config.sigma_step).max(config.sigma_min),
        (grid_sigma + config.sigma_step).min(config.sigma_max),
    );
    let refined = golden_section(error, lo, hi, config.tolerance);
    let refined_error = error(refined);
    let (sigma_px, wrmse) = if refined_error <= grid_error {
        (refined, refined_error)
    } else {
        (grid_sigma, grid_error)
    };
    Ok(FitResult {
        sigma_px,
        wrmse,
        beta,
        f_min: config.f_min,
        f_max: config.f_max,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
