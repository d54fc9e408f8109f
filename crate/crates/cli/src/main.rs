//! `fluxnv`: reproduce the spectroscopy, vacuum Rabi and ensemble-size
//! results from a TOML device description.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use fluxnv::dynamics::{calibrate_gamma, chevron_scan, fit_trace, vacuum_rabi_trace, GammaCalibration, RabiSetup};
use fluxnv::inference::{
    add_uniform_noise, consistency_report, density_cross_check, estimate_ensemble_size,
    fit_damped_cosine,
};
use fluxnv::io::{
    load_config, read_trace_column, render, DeviceConfig, EnsembleSizeReport, FitPayload, Format,
    Payload, ResultEnvelope, SpectrumPayload,
};
use fluxnv::spectroscopy::{extract_splitting, sweep_spectrum};
use fluxnv::{Error, Executor, Result};

#[derive(Parser)]
#[command(name = "fluxnv", version, about = "Flux qubit / NV-ensemble hybrid simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or `default` for the built-in parameters.
    #[arg(long, global = true, default_value = "default")]
    config: String,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// csv, json or svg; inferred from --out when absent, else csv.
    #[arg(long, global = true)]
    format: Option<String>,
    /// Config override `key=value` (`section.key`, bare keys refer to [grid]).
    #[arg(long = "grid", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed for noise injection.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Bias sweep of the coupled spectrum and the vacuum Rabi splitting.
    Spectrum,
    /// Resonant vacuum Rabi trace.
    Rabi {
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Switching probability versus detuning and hold time.
    Chevron {
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Fit a damped cosine to a trace file, or to a fresh simulation.
    FitRabi {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "p_qubit_excited")]
        column: String,
        /// Uniform noise amplitude added before fitting.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Ensemble size from the measured coupling and from the NV density.
    EstimateN {
        /// Coupling in MHz; defaults to inference.measured_g_ens_mhz.
        #[arg(long)]
        g_ens_mhz: Option<f64>,
    },
    /// Find the bright-mode dephasing that gives the target Rabi decay.
    CalibrateGamma {
        #[arg(long)]
        target_ns: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
    },
    /// Cross-check spectroscopy, dynamics and ensemble-size estimates.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\\', "\\\\").replace('"', "\\\"");
            eprintln!("error code={} kind={} message=\"{}\"", e.exit_code(), e.kind(), message);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let common = cli.common;
    let mut config = load_config(&common.config)?;
    for o in &common.overrides {
        config.apply_override(o)?;
    }
    let format = output_format(common.format.as_deref(), common.out.as_deref())?;
    let exec = Executor::with_threads(common.threads)?;
    info!("resolved config:\n{}", config.to_toml_string()?);

    let mut seed = None;
    let payload = match cli.command {
        Command::Spectrum => {
            let spectrum = sweep_spectrum(&config.device_model(), &config.bias_grid(), &exec)?;
            let splitting = match extract_splitting(&spectrum) {
                Ok(s) => {
                    info!(
                        "vacuum Rabi splitting {:.6} GHz at {:.4} mΦ₀",
                        s.gap_ghz, s.bias_mphi0
                    );
                    Some(s)
                }
                Err(e @ Error::NoAvoidedCrossing(_)) => {
                    warn!("{e}");
                    None
                }
                Err(e) => return Err(e),
            };
            Payload::Spectrum(SpectrumPayload { spectrum, splitting })
        }
        Command::Rabi { t_max } => {
            set_t_max(&mut config, t_max);
            let setup = resolve_setup(&mut config)?;
            Payload::TimeTrace(vacuum_rabi_trace(&setup, config.grid.t_max_ns, config.grid.dt_ns)?)
        }
        Command::Chevron { t_max } => {
            set_t_max(&mut config, t_max);
            let setup = resolve_setup(&mut config)?;
            Payload::Chevron(chevron_scan(
                &setup,
                &config.detuning_grid(),
                config.grid.t_max_ns,
                config.grid.dt_ns,
                &exec,
            )?)
        }
        Command::FitRabi {
            input,
            column,
            noise,
            t_max,
        } => {
            set_t_max(&mut config, t_max);
            let (times, values, source) = match &input {
                Some(path) => {
                    let (t, y) = read_trace_column(path, &column)?;
                    (t, y, format!("{}:{column}", path.display()))
                }
                None => {
                    let setup = resolve_setup(&mut config)?;
                    let tr = vacuum_rabi_trace(&setup, config.grid.t_max_ns, config.grid.dt_ns)?;
                    (tr.times_ns, tr.p_qubit_excited, "simulated:p_qubit_excited".to_string())
                }
            };
            if !(noise >= 0.0) {
                return Err(Error::Config("--noise must be >= 0".into()));
            }
            let values = if noise > 0.0 {
                seed = Some(common.seed);
                add_uniform_noise(&values, noise, common.seed)
            } else {
                values
            };
            let fit = fit_damped_cosine(&times, &values)?;
            info!(
                "f = {:.6} GHz, tau = {:.3} ns, rms = {:.3e}",
                fit.model.frequency_ghz, fit.model.decay_ns, fit.residual_rms
            );
            Payload::Fit(FitPayload {
                fit,
                source,
                noise_amplitude: noise,
            })
        }
        Command::EstimateN { g_ens_mhz } => {
            let g_ens_ghz = g_ens_mhz.unwrap_or(config.inference.measured_g_ens_mhz) * 1e-3;
            let inputs = config.report_inputs();
            let n_from_coupling = estimate_ensemble_size(g_ens_ghz, inputs.g_single_ghz)?;
            let n_from_density =
                density_cross_check(inputs.density_cm3, inputs.area_um2, inputs.thickness_um)?;
            Payload::EnsembleSize(EnsembleSizeReport {
                g_ens_ghz,
                g_single_ghz: inputs.g_single_ghz,
                n_from_coupling,
                n_from_density,
                discrepancy: (n_from_coupling - n_from_density).abs() / n_from_coupling,
            })
        }
        Command::CalibrateGamma { target_ns, t_max } => {
            set_t_max(&mut config, t_max);
            if let Some(t) = target_ns {
                config.dissipation.target_decay_ns = t;
            }
            config.dissipation.gamma_ens_ghz = None;
            let cal = calibrate(&config)?;
            config.dissipation.gamma_ens_ghz = Some(cal.gamma_ens_ghz);
            Payload::Calibration(cal)
        }
        Command::Report => {
            let gap = match extract_splitting(&sweep_spectrum(
                &config.device_model(),
                &config.bias_grid(),
                &exec,
            )?) {
                Ok(s) => Some(s.gap_ghz),
                Err(Error::NoAvoidedCrossing(m)) => {
                    warn!("no avoided crossing: {m}");
                    None
                }
                Err(e) => return Err(e),
            };
            let fit = if gap.is_some() {
                let setup = resolve_setup(&mut config)?;
                let tr = vacuum_rabi_trace(&setup, config.grid.t_max_ns, config.grid.dt_ns)?;
                Some(fit_trace(&tr)?)
            } else {
                None
            };
            Payload::Consistency(consistency_report(gap, fit.as_ref(), &config.report_inputs())?)
        }
    };

    let envelope = ResultEnvelope::new(config, payload, seed);
    write_output(&envelope, format, common.out.as_deref())?;
    info!("done in {:.3} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn output_format(flag: Option<&str>, out: Option<&Path>) -> Result<Format> {
    if let Some(f) = flag {
        return f.parse();
    }
    match out.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
        Some(ext) => ext.parse().or(Ok(Format::Csv)),
        None => Ok(Format::Csv),
    }
}

fn set_t_max(config: &mut DeviceConfig, t_max: Option<f64>) {
    if let Some(t) = t_max {
        config.grid.t_max_ns = t;
    }
}

fn calibrate(config: &DeviceConfig) -> Result<GammaCalibration> {
    let setup = config.rabi_setup()?;
    let cal = calibrate_gamma(
        config.dissipation.target_decay_ns,
        &setup,
        config.grid.t_max_ns,
        config.grid.dt_ns,
    )?;
    if let Some(d) = &cal.diagnostic {
        warn!("{d}");
    }
    info!(
        "gamma_ens = {:.6e} GHz gives a fitted decay of {:.3} ns",
        cal.gamma_ens_ghz, cal.fitted_decay_ns
    );
    Ok(cal)
}

/// Rabi setup with `gamma_ens` calibrated (and recorded in the config) when
/// the config leaves it unset.
fn resolve_setup(config: &mut DeviceConfig) -> Result<RabiSetup> {
    config.validate()?;
    if config.dissipation.gamma_ens_ghz.is_none() {
        let cal = calibrate(config)?;
        config.dissipation.gamma_ens_ghz = Some(cal.gamma_ens_ghz);
    }
    config.rabi_setup()
}

fn write_output(envelope: &ResultEnvelope, format: Format, out: Option<&Path>) -> Result<()> {
    let bytes = render(envelope, format)?;
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            if let Payload::EnsembleSize(r) = &envelope.payload {
                if format == Format::Csv {
                    print_ensemble_summary(r);
                }
            }
            std::io::stdout().write_all(&bytes).map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            })
        }
    }
}

fn print_ensemble_summary(r: &EnsembleSizeReport) {
    eprintln!("N from coupling: {:.2e}", r.n_from_coupling);
    eprintln!("N from density:  {:.2e}", r.n_from_density);
    eprintln!("discrepancy:     {:.1}%", 100.0 * r.discrepancy);
}
