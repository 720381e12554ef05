use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use hvalign::imagefilter::{
    apply_spectral_filter, apply_spectral_filter_raw, bin_radius, expand_hermitian, gaussian_blur, ideal_highpass,
    max_radius, power_spectrum, radial_filter_from_curve, resize_roundtrip, TabulatedCurve,
};
use hvalign::psychophys::{
    boxcar_csf, gaussian_spectrum, williams_mtf, WilliamsMtf, DEGREES_PER_PIXEL, PRESENTATION_SECONDS,
};
use hvalign::{Image, PsychophysError, Quadrant, SpectralFilter};
use serde::Serialize;
use serde_json::json;

use crate::error::{usage, verification};
use crate::manifest::Run;
use crate::Common;

// Samples used to tabulate curves that are slow to evaluate per bin.
const CURVE_SAMPLES: usize = 4097;

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Op {
    /// Spatial Gaussian blur of width `--sigma`
    Blur,
    /// Bicubic resize to `--size` and back
    Resize,
    /// Remove every frequency at or below `--cutoff` cycles per image
    Highpass,
    /// Boxcar CSF of duration `--T`, peak-normalized
    Csf,
    /// Williams' optical MTF
    Mtf,
    /// Hermitian expansion of the quadrant in `--filter`
    Spectral,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FilterArgs {
    #[arg(long, value_enum)]
    pub op: Op,

    /// Input PNG images; outputs keep their file names
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,

    #[arg(long)]
    pub sigma: Option<f64>,

    /// Intermediate size of the resize roundtrip
    #[arg(long)]
    pub size: Option<usize>,

    /// High-pass cutoff in cycles per image
    #[arg(long)]
    pub cutoff: Option<f64>,

    /// Presentation time in seconds for the CSF filter
    #[arg(long = "T", visible_alias = "duration", default_value_t = PRESENTATION_SECONDS)]
    pub duration: f64,

    #[arg(long, default_value_t = DEGREES_PER_PIXEL)]
    pub degrees_per_px: f64,

    /// Quadrant CSV for the spectral op
    #[arg(long)]
    pub filter: Option<PathBuf>,

    #[command(flatten)]
    pub common: Common,
}

fn required<T: Copy>(value: Option<T>, flag: &str, op: Op) -> Result<T> {
    value.ok_or_else(|| usage(format!("--op {op:?} needs {flag}").to_lowercase()))
}

/// A peak-normalized radial curve, tabulated up to the highest frequency of
/// an `h x w` image.
fn radial(
    curve: impl Fn(f64) -> Result<f64, PsychophysError>,
    h: usize,
    w: usize,
    degrees_per_px: f64,
) -> Result<SpectralFilter> {
    let top = max_radius(h, w) / h.min(w) as f64 / degrees_per_px;
    let mut table = TabulatedCurve::tabulate(
        |f| if f == 0.0 { Ok(0.0) } else { curve(f) },
        top * 1.001,
        CURVE_SAMPLES,
    )?;
    let peak = (0..CURVE_SAMPLES)
        .map(|i| table.eval(top * i as f64 / (CURVE_SAMPLES - 1) as f64))
        .fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(usage("curve is zero everywhere"));
    }
    table.scale(1.0 / peak);
    Ok(radial_filter_from_curve(|f| table.eval(f), h, w, degrees_per_px)?)
}

pub struct Prepared {
    op: Op,
    quadrant: Option<Quadrant>,
    // filters already built, by image size
    cache: RefCell<BTreeMap<(usize, usize), SpectralFilter>>,
}

impl Prepared {
    pub fn new(op: Op, quadrant: Option<Quadrant>) -> Self {
        Self {
            op,
            quadrant,
            cache: RefCell::default(),
        }
    }

    pub fn spectral_filter(&self, args: &FilterArgs, h: usize, w: usize) -> Result<Option<SpectralFilter>> {
        if let Some(f) = self.cache.borrow().get(&(h, w)) {
            return Ok(Some(f.clone()));
        }
        let filter = self.build(args, h, w)?;
        if let Some(f) = &filter {
            self.cache.borrow_mut().insert((h, w), f.clone());
        }
        Ok(filter)
    }

    fn build(&self, args: &FilterArgs, h: usize, w: usize) -> Result<Option<SpectralFilter>> {
        let dpp = args.degrees_per_px;
        Ok(match self.op {
            Op::Csf => Some(radial(|f| boxcar_csf(f, args.duration), h, w, dpp)?),
            Op::Mtf => Some(radial(|f| williams_mtf(f, &WilliamsMtf::default()), h, w, dpp)?),
            Op::Spectral => {
                let q = self.quadrant.as_ref().expect("loaded");
                if (2 * q.rows, 2 * q.cols) != (h, w) {
                    return Err(usage(format!(
                        "filter quadrant is {}x{}, image needs {}x{}",
                        q.rows,
                        q.cols,
                        h / 2,
                        w / 2
                    )));
                }
                Some(expand_hermitian(q)?)
            }
            _ => None,
        })
    }
}

pub fn apply(args: &FilterArgs, prepared: &Prepared, img: &Image) -> Result<Image> {
    Ok(match args.op {
        Op::Blur => gaussian_blur(img, required(args.sigma, "--sigma", args.op)?)?,
        Op::Resize => resize_roundtrip(img, required(args.size, "--size", args.op)?)?,
        Op::Highpass => ideal_highpass(img, required(args.cutoff, "--cutoff", args.op)?)?,
        _ => {
            let filter = prepared
                .spectral_filter(args, img.height(), img.width())?
                .expect("spectral op");
            apply_spectral_filter(img, &filter)?
        }
    })
}

pub fn run(args: &FilterArgs) -> Result<()> {
    let mut run = Run::start(&args.common.out, "filter", args, args.common.threads as usize)?;
    let quadrant = match args.op {
        Op::Spectral => {
            let path = required(args.filter.as_deref(), "--filter", args.op)?;
            run.input(path);
            Some(Quadrant::load(path)?)
        }
        _ => None,
    };
    let prepared = Prepared::new(args.op, quadrant);
    let mut checks = Vec::new();
    for input in &args.inputs {
        run.input(input);
        let img = Image::load(input)?;
        let out = apply(args, &prepared, &img).with_context(|| format!("filtering {}", input.display()))?;
        if args.common.verify {
            checks.push(verify(args, &prepared, &img, input)?);
        }
        let name = input.file_name().context("input has no file name")?;
        let path = run.artifact(Path::new(name).with_extension("png"));
        out.save(&path)?;
    }
    if args.common.verify {
        run.verification = Some(json!({ "images": checks, "passed": true }));
    }
    run.finish()?;
    println!(
        "filtered {} image(s) into {}",
        args.inputs.len(),
        args.common.out.display()
    );
    Ok(())
}

fn verify(args: &FilterArgs, prepared: &Prepared, img: &Image, input: &Path) -> Result<serde_json::Value> {
    const BLUR_TOL: f64 = 1e-2;
    const REALNESS_TOL: f64 = 1e-10;
    const RESIZE_TOL: f64 = 1e-6;
    let (h, w) = (img.height(), img.width());
    let name = input.display().to_string();
    match args.op {
        Op::Blur => {
            // spatial blur against the same Gaussian applied in frequency space
            let sigma = required(args.sigma, "--sigma", args.op)?;
            let spatial = gaussian_blur(img, sigma)?;
            if sigma == 0.0 {
                return Ok(json!({ "image": name, "identity": spatial == *img }));
            }
            let dpp = args.degrees_per_px;
            let filter = radial_filter_from_curve(|f| gaussian_spectrum(f, sigma, dpp).unwrap_or(f64::NAN), h, w, dpp)?;
            let spectral = apply_spectral_filter(img, &filter)?;
            let margin = 2 * (4.0 * sigma).ceil() as usize;
            if 2 * margin >= h.min(w) {
                return Err(usage(format!(
                    "{name}: too small to compare interiors at sigma {sigma}"
                )));
            }
            let mut worst: f64 = 0.0;
            for c in 0..img.channels() {
                for y in margin..h - margin {
                    for x in margin..w - margin {
                        worst = worst.max((spatial.get(c, y, x) - spectral.get(c, y, x)).abs());
                    }
                }
            }
            if !(worst < BLUR_TOL) {
                return Err(verification(format!(
                    "{name}: spatial and spectral blur differ by {worst}"
                )));
            }
            Ok(json!({ "image": name, "interior_max_diff": worst }))
        }
        Op::Resize => {
            // a second roundtrip of a band-limited result changes little
            let size = required(args.size, "--size", args.op)?;
            let once = resize_roundtrip(img, size)?;
            if (once.width(), once.height(), once.channels()) != (w, h, img.channels()) {
                return Err(verification(format!("{name}: roundtrip changed the image shape")));
            }
            let mean = |i: &Image| i.data().iter().sum::<f64>() / i.data().len() as f64;
            let drift = (mean(&once) - mean(img)).abs();
            if size == w
                && w == h
                && !(once
                    .data()
                    .iter()
                    .zip(img.data())
                    .all(|(a, b)| (a - b).abs() < RESIZE_TOL))
            {
                return Err(verification(format!("{name}: same-size roundtrip is not the identity")));
            }
            Ok(json!({ "image": name, "mean_drift": drift }))
        }
        Op::Highpass => {
            // share of the input power the filter removes, before clamping
            let cutoff = required(args.cutoff, "--cutoff", args.op)?;
            let (mut removed, mut total) = (0.0, 0.0);
            for c in 0..img.channels() {
                for (i, p) in power_spectrum(img.plane(c), h, w).into_iter().enumerate() {
                    total += p;
                    if cutoff > 0.0 && bin_radius(i / w, i % w, h, w) <= cutoff {
                        removed += p;
                    }
                }
            }
            Ok(json!({ "image": name, "removed_power_fraction": removed / total.max(f64::MIN_POSITIVE) }))
        }
        _ => {
            let filter = prepared.spectral_filter(args, h, w)?.expect("spectral op");
            let raw = apply_spectral_filter_raw(img, &filter)?;
            if !(raw.max_imaginary < REALNESS_TOL) {
                return Err(verification(format!("{name}: imaginary residue {}", raw.max_imaginary)));
            }
            Ok(
                json!({ "image": name, "imaginary_residue": raw.max_imaginary, "symmetry_residue": filter.symmetry_residue() }),
            )
        }
    }
}
