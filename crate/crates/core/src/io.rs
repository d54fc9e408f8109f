//! Configuration files, result envelopes and CSV / JSON / SVG output.
//!
//! Config files are TOML. Every key carries its unit as a suffix
//! (`delta_ghz`, `t1_ns`, `g_single_khz`, ...); missing keys take the
//! defaults below, unknown keys are rejected.
//!
//! ```toml
//! [qubit]
//! delta_ghz = 2.878
//! flux_offset_mphi0 = 0.0
//! ip_na = 300.0
//! t1_ns = 150.0
//! t2echo_ns = 250.0
//!
//! [ensemble]
//! d_ghz = 2.878
//! e_ghz = 0.0
//! g_single_khz = 8.8
//! n_spins = 3.2e7
//! b_parallel_mt = 0.0
//!
//! [dissipation]
//! # gamma_ens_ghz = 0.05   # calibrated against target_decay_ns when absent
//! target_decay_ns = 20.0
//!
//! [readout]
//! contrast = 0.4
//! offset = 0.3
//!
//! [grid]
//! bias_min_mphi0 = -0.5
//! bias_max_mphi0 = 0.5
//! bias_points = 81
//! detuning_min_ghz = -0.2
//! detuning_max_ghz = 0.2
//! detuning_points = 81
//! t_max_ns = 100.0
//! time_points = 401
//! dt_ns = 0.01
//!
//! [model]
//! kind = "collective"   # or "exact", using `spins` identical centers
//! spins = 1
//!
//! [inference]
//! measured_g_ens_mhz = 70.0
//! density_cm3 = 1.1e18
//! area_um2 = 40.0
//! thickness_um = 0.7
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::device::{flux_to_epsilon, EnsembleParams, QubitParams, MAX_EXACT_SPINS};
use crate::dynamics::{
    ChevronGrid, CollectiveFamily, DissipationSpec, GammaCalibration, RabiSetup, ReadoutMap,
    TimeTrace,
};
use crate::error::{Error, Result};
use crate::inference::{ConsistencyReport, DampedCosineFit, ReportInputs};
use crate::spectroscopy::{linspace, DeviceModel, SpectrumResult, Splitting};

/// Version of the JSON envelope and CSV column layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QubitSection {
    pub delta_ghz: f64,
    /// Flux offset from `3Φ₀/2`, mΦ₀. Sets the bias for single-point runs.
    pub flux_offset_mphi0: f64,
    pub ip_na: f64,
    pub t1_ns: f64,
    pub t2echo_ns: f64,
}

impl Default for QubitSection {
    fn default() -> Self {
        let q = QubitParams::default();
        QubitSection {
            delta_ghz: q.delta_ghz,
            flux_offset_mphi0: 0.0,
            ip_na: q.ip_na,
            t1_ns: q.t1_ns,
            t2echo_ns: q.t2echo_ns,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub d_ghz: f64,
    pub e_ghz: f64,
    pub g_single_khz: f64,
    pub n_spins: f64,
    pub b_parallel_mt: f64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let e = EnsembleParams::default();
        EnsembleSection {
            d_ghz: e.d_ghz,
            e_ghz: e.e_ghz,
            g_single_khz: e.g_single_ghz * 1e6,
            n_spins: e.n_spins,
            b_parallel_mt: e.b_parallel_mt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DissipationSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_ens_ghz: Option<f64>,
    pub target_decay_ns: f64,
}

impl Default for DissipationSection {
    fn default() -> Self {
        DissipationSection {
            gamma_ens_ghz: None,
            target_decay_ns: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub contrast: f64,
    pub offset: f64,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        let r = ReadoutMap::default();
        ReadoutSection {
            contrast: r.contrast,
            offset: r.offset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub bias_min_mphi0: f64,
    pub bias_max_mphi0: f64,
    pub bias_points: usize,
    pub detuning_min_ghz: f64,
    pub detuning_max_ghz: f64,
    pub detuning_points: usize,
    pub t_max_ns: f64,
    pub time_points: usize,
    pub dt_ns: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            bias_min_mphi0: -0.5,
            bias_max_mphi0: 0.5,
            bias_points: 81,
            detuning_min_ghz: -0.2,
            detuning_max_ghz: 0.2,
            detuning_points: 81,
            t_max_ns: 100.0,
            time_points: 401,
            dt_ns: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Collective,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelChoice,
    /// Number of centers for the exact model (`n_spins` is ignored there).
    pub spins: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelChoice::Collective,
            spins: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub measured_g_ens_mhz: f64,
    pub density_cm3: f64,
    pub area_um2: f64,
    pub thickness_um: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            measured_g_ens_mhz: 70.0,
            density_cm3: 1.1e18,
            area_um2: 40.0,
            thickness_um: 0.7,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub qubit: QubitSection,
    pub ensemble: EnsembleSection,
    pub dissipation: DissipationSection,
    pub readout: ReadoutSection,
    pub grid: GridSection,
    pub model: ModelSection,
    pub inference: InferenceSection,
}

impl DeviceConfig {
    pub fn qubit_params(&self) -> QubitParams {
        let q = &self.qubit;
        QubitParams {
            delta_ghz: q.delta_ghz,
            epsilon_ghz: flux_to_epsilon(q.flux_offset_mphi0 * 1e-3, q.ip_na),
            ip_na: q.ip_na,
            t1_ns: q.t1_ns,
            t2echo_ns: q.t2echo_ns,
        }
    }

    pub fn ensemble_params(&self) -> EnsembleParams {
        let e = &self.ensemble;
        EnsembleParams {
            d_ghz: e.d_ghz,
            e_ghz: e.e_ghz,
            g_single_ghz: e.g_single_khz * 1e-6,
            n_spins: e.n_spins,
            b_parallel_mt: e.b_parallel_mt,
        }
    }

    pub fn device_model(&self) -> DeviceModel {
        match self.model.kind {
            ModelChoice::Collective => DeviceModel::collective(self.qubit_params(), self.ensemble_params()),
            ModelChoice::Exact => {
                DeviceModel::exact(self.qubit_params(), self.ensemble_params(), self.model.spins)
            }
        }
    }

    pub fn readout_map(&self) -> ReadoutMap {
        ReadoutMap {
            contrast: self.readout.contrast,
            offset: self.readout.offset,
        }
    }

    /// Dissipation with the configured `gamma_ens_ghz`, or zero if unset.
    pub fn dissipation_spec(&self) -> Result<DissipationSpec> {
        DissipationSpec::from_lifetimes(
            self.qubit.t1_ns,
            self.qubit.t2echo_ns,
            self.dissipation.gamma_ens_ghz.unwrap_or(0.0),
        )
    }

    pub fn rabi_setup(&self) -> Result<RabiSetup> {
        Ok(RabiSetup {
            family: CollectiveFamily::from_ensemble(&self.ensemble_params()),
            dissipation: self.dissipation_spec()?,
            readout: self.readout_map(),
            time_points: self.grid.time_points,
        })
    }

    pub fn bias_grid(&self) -> Vec<f64> {
        let g = &self.grid;
        linspace(g.bias_min_mphi0, g.bias_max_mphi0, g.bias_points)
    }

    pub fn detuning_grid(&self) -> Vec<f64> {
        let g = &self.grid;
        linspace(g.detuning_min_ghz, g.detuning_max_ghz, g.detuning_points)
    }

    pub fn report_inputs(&self) -> ReportInputs {
        ReportInputs {
            g_single_ghz: self.ensemble.g_single_khz * 1e-6,
            density_cm3: self.inference.density_cm3,
            area_um2: self.inference.area_um2,
            thickness_um: self.inference.thickness_um,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.qubit_params().validate().map_err(cfg)?;
        self.ensemble_params().validate().map_err(cfg)?;
        self.readout_map().validate().map_err(cfg)?;
        if let Some(g) = self.dissipation.gamma_ens_ghz {
            if !(g >= 0.0) {
                return Err(Error::Config("dissipation.gamma_ens_ghz must be >= 0".into()));
            }
        }
        if !(self.dissipation.target_decay_ns > 0.0) {
            return Err(Error::Config("dissipation.target_decay_ns must be > 0".into()));
        }
        let g = &self.grid;
        if g.bias_points < 1 || g.detuning_points < 1 {
            return Err(Error::Config("grid point counts must be >= 1".into()));
        }
        if g.time_points < 2 {
            return Err(Error::Config("grid.time_points must be >= 2".into()));
        }
        if !(g.t_max_ns > 0.0) || !(g.dt_ns > 0.0) {
            return Err(Error::Config("grid.t_max_ns and grid.dt_ns must be > 0".into()));
        }
        if !(g.bias_min_mphi0 <= g.bias_max_mphi0) || !(g.detuning_min_ghz <= g.detuning_max_ghz) {
            return Err(Error::Config("grid minimum exceeds maximum".into()));
        }
        if self.model.kind == ModelChoice::Exact
            && !(1..=MAX_EXACT_SPINS).contains(&self.model.spins)
        {
            return Err(Error::Config(format!(
                "model.spins must be in 1..={MAX_EXACT_SPINS} for the exact model"
            )));
        }
        Ok(())
    }

    /// Parse and validate TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        check_keys(&table, text)?;
        let cfg: DeviceConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(one_line(&e.to_string())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Set one value from a `key=value` override; `key` is `section.key`, or
    /// a bare key of the `[grid]` section.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let (section, key) = match key.trim().split_once('.') {
            Some((s, k)) => (s.to_string(), k.to_string()),
            None => ("grid".to_string(), key.trim().to_string()),
        };
        let value: toml::Value = format!("v = {}", value.trim())
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.trim().to_string()));
        let mut root = toml::Table::try_from(&*self).map_err(|e| Error::Serialization(e.to_string()))?;
        let sec = root
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        match sec {
            toml::Value::Table(t) => {
                t.insert(key, value);
            }
            _ => return Err(Error::Config(format!("`{section}` is not a section"))),
        }
        let text = toml::to_string(&root).map_err(|e| Error::Serialization(e.to_string()))?;
        *self = DeviceConfig::from_toml_str(&text)?;
        Ok(())
    }
}

/// Read and validate a config file; `"default"` yields the built-in defaults.
pub fn load_config(path: &str) -> Result<DeviceConfig> {
    if path == "default" {
        return Ok(DeviceConfig::default());
    }
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_string(),
        source,
    })?;
    DeviceConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{path}: {m}")),
        other => other,
    })
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("qubit", &["delta_ghz", "flux_offset_mphi0", "ip_na", "t1_ns", "t2echo_ns"]),
    ("ensemble", &["d_ghz", "e_ghz", "g_single_khz", "n_spins", "b_parallel_mt"]),
    ("dissipation", &["gamma_ens_ghz", "target_decay_ns"]),
    ("readout", &["contrast", "offset"]),
    (
        "grid",
        &[
            "bias_min_mphi0",
            "bias_max_mphi0",
            "bias_points",
            "detuning_min_ghz",
            "detuning_max_ghz",
            "detuning_points",
            "t_max_ns",
            "time_points",
            "dt_ns",
        ],
    ),
    ("model", &["kind", "spins"]),
    ("inference", &["measured_g_ens_mhz", "density_cm3", "area_um2", "thickness_um"]),
];

const UNIT_SUFFIXES: &[&str] = &[
    "ghz", "mhz", "khz", "hz", "ns", "us", "ms", "s", "na", "ua", "a", "mt", "t", "mphi0", "phi0",
    "cm3", "um2", "um",
];

fn split_unit(key: &str) -> (&str, Option<&str>) {
    match key.rsplit_once('_') {
        Some((stem, unit)) if UNIT_SUFFIXES.contains(&unit) => (stem, Some(unit)),
        _ => (key, None),
    }
}

fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('=') || rest.starts_with(']'))
            || l.strip_prefix('[')
                .and_then(|r| r.strip_prefix(key))
                .is_some_and(|r| r.starts_with(']'))
    })
    .map(|i| i + 1)
}

fn key_error(text: &str, key: &str, msg: String) -> Error {
    match line_of(text, key) {
        Some(line) => Error::Config(format!("line {line}: {msg}")),
        None => Error::Config(msg),
    }
}

fn check_keys(table: &toml::Table, text: &str) -> Result<()> {
    for (section, value) in table {
        let Some((_, known)) = SECTIONS.iter().find(|(s, _)| s == section) else {
            let names: Vec<&str> = SECTIONS.iter().map(|(s, _)| *s).collect();
            return Err(key_error(
                text,
                section,
                format!("unknown section `[{section}]`; expected one of {}", names.join(", ")),
            ));
        };
        let toml::Value::Table(entries) = value else {
            return Err(key_error(text, section, format!("`{section}` must be a section")));
        };
        for key in entries.keys() {
            if known.contains(&key.as_str()) {
                continue;
            }
            let (stem, unit) = split_unit(key);
            let expected = known.iter().find(|k| split_unit(k).0 == stem);
            let msg = match (expected, unit) {
                (Some(exp), None) => format!(
                    "key `{section}.{key}` lacks a unit suffix; expected `{section}.{exp}`"
                ),
                (Some(exp), Some(u)) => format!(
                    "unit-suffix mismatch for `{section}.{key}`: `{u}` given, expected `{section}.{exp}`"
                ),
                (None, _) => format!(
                    "unknown key `{section}.{key}`; known keys: {}",
                    known.join(", ")
                ),
            };
            return Err(key_error(text, key, msg));
        }
    }
    Ok(())
}

/// Ensemble-size estimates from the coupling and from density × volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSizeReport {
    pub g_ens_ghz: f64,
    pub g_single_ghz: f64,
    pub n_from_coupling: f64,
    pub n_from_density: f64,
    /// `|N_coupling − N_density| / N_coupling`
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPayload {
    pub spectrum: SpectrumResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splitting: Option<Splitting>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPayload {
    pub fit: DampedCosineFit,
    pub source: String,
    pub noise_amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "kebab-case")]
pub enum Payload {
    Spectrum(SpectrumPayload),
    TimeTrace(TimeTrace),
    Chevron(ChevronGrid),
    Fit(FitPayload),
    EnsembleSize(EnsembleSizeReport),
    Calibration(GammaCalibration),
    Consistency(ConsistencyReport),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Spectrum(_) => "spectrum",
            Payload::TimeTrace(_) => "time-trace",
            Payload::Chevron(_) => "chevron",
            Payload::Fit(_) => "fit",
            Payload::EnsembleSize(_) => "ensemble-size",
            Payload::Calibration(_) => "calibration",
            Payload::Consistency(_) => "consistency",
        }
    }

    pub fn axes(&self) -> Vec<Axis> {
        let ax = |name: &str, unit: &str, len: usize| Axis {
            name: name.into(),
            unit: unit.into(),
            len,
        };
        match self {
            Payload::Spectrum(s) => vec![ax("bias", "mphi0", s.spectrum.points.len())],
            Payload::TimeTrace(t) => vec![ax("time", "ns", t.len())],
            Payload::Chevron(c) => vec![
                ax("detuning", "ghz", c.detunings_ghz.len()),
                ax("time", "ns", c.times_ns.len()),
            ],
            _ => Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub unit: String,
    pub len: usize,
}

/// Self-describing result file. Wall-clock timing is logged but kept out of
/// the envelope so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub schema_version: u32,
    pub generator: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub config: DeviceConfig,
    pub axes: Vec<Axis>,
    pub payload: Payload,
}

impl ResultEnvelope {
    pub fn new(config: DeviceConfig, payload: Payload, seed: Option<u64>) -> Self {
        ResultEnvelope {
            schema_version: SCHEMA_VERSION,
            generator: concat!("fluxnv ", env!("CARGO_PKG_VERSION")).to_string(),
            seed,
            config,
            axes: payload.axes(),
            payload,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Config(format!(
                "unknown format `{other}`; expected csv, json or svg"
            ))),
        }
    }
}

/// Serialize `env` in the requested format.
pub fn render(env: &ResultEnvelope, format: Format) -> Result<Vec<u8>> {
    match format {
        Format::Json => {
            let mut s =
                serde_json::to_string_pretty(env).map_err(|e| Error::Serialization(e.to_string()))?;
            s.push('\n');
            Ok(s.into_bytes())
        }
        Format::Csv => render_csv(&env.payload),
        Format::Svg => render_svg(&env.payload).map(String::into_bytes),
    }
}

/// Write `env` to `path`.
pub fn emit(env: &ResultEnvelope, format: Format, path: &Path) -> Result<()> {
    let bytes = render(env, format)?;
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_envelope(path: &Path) -> Result<ResultEnvelope> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
}

/// `(time_ns, column)` from a time-trace CSV or JSON envelope.
pub fn read_trace_column(path: &Path, column: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let io_err = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    if path.extension().is_some_and(|e| e == "json") {
        let env = read_envelope(path)?;
        let Payload::TimeTrace(t) = env.payload else {
            return Err(Error::Config(format!(
                "{}: expected a time-trace payload, found {}",
                path.display(),
                env.payload.kind()
            )));
        };
        let ys = match column {
            "p_ground" => t.p_ground,
            "p_qubit_excited" => t.p_qubit_excited,
            "p_bright" => t.p_bright,
            "p_dark" => t.p_dark,
            "p_switch" => t.p_switch,
            other => return Err(Error::Config(format!("no column `{other}` in a time trace"))),
        };
        return Ok((t.times_ns, ys));
    }
    let file = fs::File::open(path).map_err(io_err)?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: no column `{name}`", path.display())))
    };
    let (ti, yi) = (find("time_ns")?, find(column)?);
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| {
                Error::Serialization(format!(
                    "{}: record {}: `{}` is not a number",
                    path.display(),
                    line + 1,
                    &rec[i]
                ))
            })
        };
        ts.push(parse(ti)?);
        ys.push(parse(yi)?);
    }
    Ok((ts, ys))
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Serialization(e.to_string())
}

fn render_csv(payload: &Payload) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let num = |v: f64| v.to_string();
    match payload {
        Payload::Spectrum(s) => {
            w.write_record(["bias_mphi0", "epsilon_ghz", "frequency_ghz", "weight"])
                .map_err(csv_error)?;
            for p in &s.spectrum.points {
                for t in &p.transitions {
                    w.write_record([
                        num(p.bias_mphi0),
                        num(p.epsilon_ghz),
                        num(t.frequency_ghz),
                        num(t.weight),
                    ])
                    .map_err(csv_error)?;
                }
            }
        }
        Payload::TimeTrace(t) => {
            w.write_record([
                "time_ns",
                "p_ground",
                "p_qubit_excited",
                "p_bright",
                "p_dark",
                "p_switch",
            ])
            .map_err(csv_error)?;
            for k in 0..t.len() {
                w.write_record([
                    num(t.times_ns[k]),
                    num(t.p_ground[k]),
                    num(t.p_qubit_excited[k]),
                    num(t.p_bright[k]),
                    num(t.p_dark[k]),
                    num(t.p_switch[k]),
                ])
                .map_err(csv_error)?;
            }
        }
        Payload::Chevron(c) => {
            w.write_record(["detuning_ghz", "time_ns", "p_switch"]).map_err(csv_error)?;
            for (d, row) in c.detunings_ghz.iter().zip(&c.values) {
                for (t, v) in c.times_ns.iter().zip(row) {
                    w.write_record([num(*d), num(*t), num(*v)]).map_err(csv_error)?;
                }
            }
        }
        other => {
            w.write_record(["quantity", "value"]).map_err(csv_error)?;
            for (k, v) in flatten_scalars(other)? {
                w.write_record([k, v]).map_err(csv_error)?;
            }
        }
    }
    w.into_inner().map_err(csv_error)
}

/// `(dotted.key, value)` rows for report-like payloads.
fn flatten_scalars(payload: &Payload) -> Result<Vec<(String, String)>> {
    let value = match payload {
        Payload::Fit(f) => serde_json::to_value(f),
        Payload::EnsembleSize(r) => serde_json::to_value(r),
        Payload::Calibration(c) => serde_json::to_value(c),
        Payload::Consistency(c) => serde_json::to_value(c),
        _ => unreachable!("tabular payloads have their own layout"),
    }
    .map_err(|e| Error::Serialization(e.to_string()))?;
    let mut rows = Vec::new();
    flatten_into("", &value, &mut rows);
    Ok(rows)
}

fn flatten_into(prefix: &str, v: &serde_json::Value, rows: &mut Vec<(String, String)>) {
    use serde_json::Value;
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                flatten_into(&join(k), v, rows);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_into(&join(&i.to_string()), v, rows);
            }
        }
        Value::Null => rows.push((prefix.to_string(), String::new())),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 420.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !(hi > lo) {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Frame {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (SVG_H - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, SVG_W - MARGIN, MARGIN, SVG_H - MARGIN);
        let _ = write!(
            out,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        for (v, x) in [(self.x.0, l), (self.x.1, r)] {
            let _ = write!(out, r#"<text x="{x}" y="{}" text-anchor="middle" font-size="11">{v:.4}</text>"#, b + 16.0);
        }
        for (v, y) in [(self.y.0, b), (self.y.1, t)] {
            let _ = write!(out, r#"<text x="{}" y="{y}" text-anchor="end" font-size="11">{v:.4}</text>"#, l - 6.0);
        }
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{xlabel}</text>"#,
            SVG_W / 2.0,
            SVG_H - 18.0
        );
        let _ = write!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {})">{ylabel}</text>"#,
            SVG_H / 2.0,
            SVG_H / 2.0
        );
    }
}

fn svg_open() -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}"><rect width="100%" height="100%" fill="white"/>"#
    )
}

fn render_svg(payload: &Payload) -> Result<String> {
    let mut out = svg_open();
    match payload {
        Payload::Spectrum(s) => {
            let pts: Vec<(f64, f64, f64)> = s
                .spectrum
                .points
                .iter()
                .flat_map(|p| {
                    p.transitions
                        .iter()
                        .filter(|t| t.weight > crate::spectroscopy::WEIGHT_FLOOR)
                        .map(move |t| (p.bias_mphi0, t.frequency_ghz, t.weight))
                })
                .collect();
            let frame = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1));
            frame.axes(&mut out, "flux offset (mΦ₀)", "frequency (GHz)");
            for (x, y, w) in &pts {
                let _ = write!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="navy" fill-opacity="{:.3}"/>"#,
                    frame.px(*x),
                    frame.py(*y),
                    w.sqrt().clamp(0.05, 1.0)
                );
            }
        }
        Payload::TimeTrace(t) => {
            let frame = Frame::new(t.times_ns.iter().copied(), [0.0, 1.0].into_iter());
            frame.axes(&mut out, "time (ns)", "population");
            for (ys, color) in [
                (&t.p_qubit_excited, "crimson"),
                (&t.p_bright, "seagreen"),
                (&t.p_switch, "navy"),
            ] {
                let path: Vec<String> = t
                    .times_ns
                    .iter()
                    .zip(ys.iter())
                    .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
                    .collect();
                let _ = write!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                    path.join(" ")
                );
            }
        }
        Payload::Chevron(c) => {
            let frame = Frame::new(c.times_ns.iter().copied(), c.detunings_ghz.iter().copied());
            frame.axes(&mut out, "time (ns)", "detuning (GHz)");
            let (lo, hi) = c
                .values
                .iter()
                .flatten()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            let nx = c.times_ns.len().max(1) as f64;
            let ny = c.detunings_ghz.len().max(1) as f64;
            let (w, h) = ((SVG_W - 2.0 * MARGIN) / nx, (SVG_H - 2.0 * MARGIN) / ny);
            for (i, row) in c.values.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let s = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let shade = (255.0 * (1.0 - s)).round() as u8;
                    let _ = write!(
                        out,
                        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb(255,{shade},{shade})"/>"#,
                        MARGIN + j as f64 * w,
                        SVG_H - MARGIN - (i + 1) as f64 * h,
                        w + 0.05,
                        h + 0.05
                    );
                }
            }
        }
        other => {
            return Err(Error::UnsupportedFormat {
                format: "svg".into(),
                payload: other.kind(),
            })
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_msg(text: &str) -> String {
        match DeviceConfig::from_toml_str(text) {
            Err(Error::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = DeviceConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, DeviceConfig::default());
        assert_eq!(cfg.qubit.delta_ghz, 2.878);
        assert_eq!(cfg.qubit.ip_na, 300.0);
        assert_eq!(cfg.ensemble.d_ghz, 2.878);
        assert_eq!(cfg.ensemble.g_single_khz, 8.8);
        assert_eq!(cfg.ensemble.n_spins, 3.2e7);
        assert_eq!(cfg.qubit.t1_ns, 150.0);
        assert_eq!(cfg.qubit.t2echo_ns, 250.0);
    }

    #[test]
    fn partial_override() {
        let cfg = DeviceConfig::from_toml_str("[ensemble]\nn_spins = 1e6\n").unwrap();
        let mut expected = DeviceConfig::default();
        expected.ensemble.n_spins = 1e6;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn missing_suffix_names_expected_key() {
        let m = err_msg("[qubit]\ndelta = 3.0\n");
        assert!(m.contains("qubit.delta_ghz"), "{m}");
        assert!(m.contains("line 2"), "{m}");
    }

    #[test]
    fn wrong_suffix_is_a_unit_mismatch() {
        let m = err_msg("[qubit]\nt1_us = 0.15\n");
        assert!(m.contains("unit-suffix mismatch"), "{m}");
        assert!(m.contains("qubit.t1_ns"), "{m}");
    }

    #[test]
    fn unknown_keys_and_sections() {
        assert!(err_msg("[qubit]\ncolour = 1\n").contains("unknown key"));
        assert!(err_msg("[cavity]\nq = 1\n").contains("unknown section"));
        let m = err_msg("[qubit\n");
        assert!(m.contains("line 1"), "{m}");
        assert!(err_msg("[qubit]\nt2echo_ns = 400.0\n").contains("T2echo"));
        assert!(err_msg("[model]\nkind = \"exact\"\nspins = 9\n").contains("model.spins"));
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = DeviceConfig::default();
        cfg.dissipation.gamma_ens_ghz = Some(0.0412);
        cfg.model.kind = ModelChoice::Exact;
        cfg.model.spins = 3;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(DeviceConfig::from_toml_str(&text).unwrap(), cfg);
        let text = DeviceConfig::default().to_toml_string().unwrap();
        assert_eq!(DeviceConfig::from_toml_str(&text).unwrap(), DeviceConfig::default());
    }

    #[test]
    fn overrides() {
        let mut cfg = DeviceConfig::default();
        cfg.apply_override("bias_points=161").unwrap();
        cfg.apply_override("ensemble.e_ghz = 5e-4").unwrap();
        cfg.apply_override("model.kind=exact").unwrap();
        assert_eq!(cfg.grid.bias_points, 161);
        assert_eq!(cfg.ensemble.e_ghz, 5e-4);
        assert_eq!(cfg.model.kind, ModelChoice::Exact);
        assert!(cfg.apply_override("bias=3").is_err());
        assert!(cfg.apply_override("no_equals").is_err());
    }

    #[test]
    fn derived_parameters() {
        let mut cfg = DeviceConfig::default();
        cfg.qubit.flux_offset_mphi0 = 1.0;
        let q = cfg.qubit_params();
        assert!((q.epsilon_ghz - flux_to_epsilon(1e-3, 300.0)).abs() < 1e-15);
        assert!((cfg.ensemble_params().g_single_ghz - 8.8e-6).abs() < 1e-18);
        assert_eq!(cfg.bias_grid().len(), 81);
        assert_eq!(cfg.detuning_grid().len(), 81);
    }

    fn trace() -> TimeTrace {
        TimeTrace {
            times_ns: vec![0.0, 0.5],
            p_ground: vec![0.0, 0.1],
            p_qubit_excited: vec![1.0, 0.7],
            p_bright: vec![0.0, 0.2],
            p_dark: vec![0.0, 0.0],
            p_switch: vec![0.7, 0.58],
        }
    }

    #[test]
    fn time_trace_csv_schema() {
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::TimeTrace(trace()), None);
        let text = String::from_utf8(render(&env, Format::Csv).unwrap()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time_ns,p_ground,p_qubit_excited,p_bright,p_dark,p_switch"
        );
        assert_eq!(lines.next().unwrap(), "0,0,1,0,0,0.7");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn chevron_csv_is_row_major_by_detuning() {
        let grid = ChevronGrid {
            detunings_ghz: vec![-0.1, 0.1],
            times_ns: vec![0.0, 1.0, 2.0],
            values: vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
        };
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::Chevron(grid), None);
        let text = String::from_utf8(render(&env, Format::Csv).unwrap()).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "detuning_ghz,time_ns,p_switch");
        assert_eq!(rows[1], "-0.1,0,1");
        assert_eq!(rows[3], "-0.1,2,3");
        assert_eq!(rows[4], "0.1,0,4");
        assert_eq!(rows.len(), 7);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.json");
        let mut t = trace();
        t.p_bright[1] = 0.1 + 0.2;
        t.times_ns[1] = 1.0 / 3.0;
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::TimeTrace(t), Some(7));
        emit(&env, Format::Json, &path).unwrap();
        let back = read_envelope(&path).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn report_payloads_as_csv_but_not_svg() {
        let r = EnsembleSizeReport {
            g_ens_ghz: 0.07,
            g_single_ghz: 8.8e-6,
            n_from_coupling: 3.16e7,
            n_from_density: 3.08e7,
            discrepancy: 0.026,
        };
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::EnsembleSize(r), None);
        let text = String::from_utf8(render(&env, Format::Csv).unwrap()).unwrap();
        assert!(text.starts_with("quantity,value\n"));
        assert!(text.contains("n_from_density,30800000"));
        assert!(matches!(
            render(&env, Format::Svg),
            Err(Error::UnsupportedFormat { payload: "ensemble-size", .. })
        ));
    }

    #[test]
    fn svg_has_axis_labels() {
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::TimeTrace(trace()), None);
        let svg = String::from_utf8(render(&env, Format::Svg).unwrap()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("time (ns)"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn unwritable_destination_is_io_error() {
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::TimeTrace(trace()), None);
        let e = emit(&env, Format::Csv, Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(matches!(load_config("/nonexistent-dir/c.toml"), Err(Error::Io { .. })));
    }

    #[test]
    fn trace_column_from_csv_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let env = ResultEnvelope::new(DeviceConfig::default(), Payload::TimeTrace(trace()), None);
        for ext in ["csv", "json"] {
            let path = dir.path().join(format!("t.{ext}"));
            emit(&env, ext.parse().unwrap(), &path).unwrap();
            let (t, y) = read_trace_column(&path, "p_qubit_excited").unwrap();
            assert_eq!(t, vec![0.0, 0.5]);
            assert_eq!(y, vec![1.0, 0.7]);
            assert!(read_trace_column(&path, "nope").is_err());
        }
    }

    #[test]
    fn format_parsing() {
        assert_eq!("CSV".parse::<Format>().unwrap(), Format::Csv);
        assert!("xml".parse::<Format>().is_err());
    }
}
