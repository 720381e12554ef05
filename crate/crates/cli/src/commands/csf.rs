use std::time::Instant;

use anyhow::Result;
use clap::{Args, ValueEnum};
use hvalign::oracle::trapezoid;
use hvalign::psychophys::{
    boxcar_csf, fit_sigma_sampled, gaussian_spectrum, kelly_csf, normalized_gaussian, sample_target, sigma_scan,
    williams_mtf, WilliamsMtf, PRESENTATION_SECONDS,
};
use hvalign::{FitConfig, FitResult, PsychophysError};
use serde::Serialize;
use serde_json::json;

use super::csv_artifact;
use crate::error::verification;
use crate::manifest::Run;
use crate::Common;

#[derive(ValueEnum, Debug, Clone, Copy, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    /// Kelly's CSF integrated against a boxcar presentation of `--T` seconds
    Boxcar,
    /// Kelly's CSF at a fixed retinal velocity
    Kelly,
    /// Williams' optical MTF of the eye
    Williams,
    /// A Gaussian of width `--sigma`; the fit should recover it exactly
    Gaussian,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CsfFitArgs {
    #[arg(long, value_enum, default_value_t = Target::Boxcar)]
    pub target: Target,

    /// Presentation time in seconds (boxcar target)
    #[arg(long = "T", visible_alias = "duration", default_value_t = PRESENTATION_SECONDS)]
    pub duration: f64,

    /// Retinal velocity in deg/s (kelly target)
    #[arg(long, default_value_t = 3.0)]
    pub velocity: f64,

    /// Gaussian width in pixels (gaussian target)
    #[arg(long, default_value_t = 2.5)]
    pub sigma: f64,

    /// Exponent of the f^-beta error weight
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,

    /// Exponents for the robustness sweep, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1.5,2,2.5")]
    pub betas: Vec<f64>,

    #[arg(long, default_value_t = FitConfig::default().sigma_min)]
    pub sigma_min: f64,

    #[arg(long, default_value_t = FitConfig::default().sigma_max)]
    pub sigma_max: f64,

    #[arg(long, default_value_t = FitConfig::default().sigma_step)]
    pub sigma_step: f64,

    #[command(flatten)]
    pub common: Common,
}

impl CsfFitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            sigma_step: self.sigma_step,
            ..FitConfig::default()
        }
    }

    fn curve(&self, f: f64) -> Result<f64, PsychophysError> {
        match self.target {
            Target::Boxcar => boxcar_csf(f, self.duration),
            Target::Kelly => kelly_csf(f, self.velocity),
            Target::Williams => williams_mtf(f, &WilliamsMtf::default()),
            Target::Gaussian => gaussian_spectrum(f, self.sigma, FitConfig::default().degrees_per_px),
        }
    }
}

pub fn run(args: &CsfFitArgs) -> Result<()> {
    let mut run = Run::start(&args.common.out, "csf-fit", args, args.common.threads as usize)?;
    let config = args.config();
    let start = Instant::now();
    let target = sample_target(|f| args.curve(f), &config)?;
    let fit = fit_sigma_sampled(&target, args.beta, &config)?;
    let elapsed = start.elapsed();

    let sweep = args
        .betas
        .iter()
        .map(|&b| fit_sigma_sampled(&target, b, &config))
        .collect::<Result<Vec<_>, _>>()?;

    if args.common.verify {
        run.verification = Some(verify(args, &config, &target, &fit)?);
    }

    run.write_json(
        "fit.json",
        &json!({ "target": args.target, "fit": fit, "config": config }),
    )?;

    let grid = config.grid()?;
    let gaussian = normalized_gaussian(&grid, fit.sigma_px, config.degrees_per_px);
    let mut curves = csv_artifact(&mut run, "curves.csv")?;
    curves.write_record(["f_cpd", "target", "gaussian"])?;
    for ((f, t), g) in grid.frequencies.iter().zip(&target).zip(&gaussian) {
        curves.write_record([f.to_string(), t.to_string(), g.to_string()])?;
    }
    curves.flush()?;

    let mut betas = csv_artifact(&mut run, "beta_sweep.csv")?;
    betas.write_record(["beta", "sigma_px", "wrmse"])?;
    for r in &sweep {
        betas.write_record([r.beta.to_string(), r.sigma_px.to_string(), r.wrmse.to_string()])?;
    }
    betas.flush()?;
    run.finish()?;

    println!(
        "sigma              {:.4} px (wrmse {:.5}, beta {})",
        fit.sigma_px, fit.wrmse, fit.beta
    );
    for r in &sweep {
        println!("  beta {:<5} sigma {:.4}", r.beta, r.sigma_px);
    }
    eprintln!("fit took {elapsed:.2?}");
    Ok(())
}

/// Checks the fit against a ten times finer sigma scan and recomputes its
/// error with a linear-frequency trapezoid rule.
fn verify(args: &CsfFitArgs, config: &FitConfig, target: &[f64], fit: &FitResult) -> Result<serde_json::Value> {
    const INTERVALS: usize = 20_000;
    const QUADRATURE_TOL: f64 = 1e-3;
    let grid = config.grid()?;
    let fine = FitConfig {
        sigma_step: config.sigma_step / 10.0,
        ..*config
    };
    let best_fine = sigma_scan(target, &grid, fit.beta, &fine.sigma_candidates(), config.degrees_per_px)
        .into_iter()
        .map(|(_, e)| e)
        .fold(f64::INFINITY, f64::min);
    if fit.wrmse > best_fine * (1.0 + 1e-6) + 1e-12 {
        return Err(verification(format!(
            "fine sigma scan reaches {best_fine}, fit reports {}",
            fit.wrmse
        )));
    }

    let target_peak = grid
        .frequencies
        .iter()
        .map(|&f| args.curve(f))
        .collect::<Result<Vec<_>, _>>()?;
    let target_peak = target_peak.into_iter().fold(0.0, f64::max);
    let g = |f: f64| gaussian_spectrum(f, fit.sigma_px, config.degrees_per_px).unwrap_or(f64::NAN);
    let g_peak = grid.frequencies.iter().map(|&f| g(f)).fold(0.0, f64::max);
    let numerator = trapezoid(
        |f| {
            let t = args.curve(f).unwrap_or(f64::NAN) / target_peak;
            f.powf(-fit.beta) * (t - g(f) / g_peak).powi(2)
        },
        config.f_min,
        config.f_max,
        INTERVALS,
    );
    let denominator = trapezoid(|f| f.powf(-fit.beta), config.f_min, config.f_max, INTERVALS);
    let reference = (numerator / denominator).sqrt();
    let rel = (reference - fit.wrmse).abs() / reference.max(1e-12);
    // an exact self-fit has both errors at quadrature noise level
    if !(rel < QUADRATURE_TOL || (reference < 1e-6 && fit.wrmse < 1e-6)) {
        return Err(verification(format!(
            "wrmse {} vs linear quadrature {reference}",
            fit.wrmse
        )));
    }
    Ok(json!({
        "reference": "finer sigma scan and linear-frequency trapezoid",
        "fine_scan_wrmse": best_fine,
        "quadrature_wrmse": reference,
        "relative_diff": rel,
        "passed": true,
    }))
}
