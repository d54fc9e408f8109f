//! Time-domain protocol: prepare, π-pulse, sudden flux shift, hold, readout.
//!
//! Evolution runs on the four-level collective model in a frame rotating at
//! the bright-mode frequency `D + E` on the single-excitation manifold. The
//! frame change commutes with every collapse operator used here, so
//! populations are identical to the lab frame while the fastest phase drops
//! from `F ≈ 3 GHz` to the detuning scale.

use serde::{Deserialize, Serialize};

use crate::device::{collective_basis, collective_hamiltonian, collective_index as idx, EnsembleParams};
use crate::error::{Error, Result};
use crate::inference::{fit_damped_cosine, DampedCosineFit};
use crate::par::Executor;
use crate::quantum::{eigh, CMatrix, Collapse, Lindbladian, Operator, C64};

/// Default integration step, ns.
pub const DEFAULT_DT_NS: f64 = 0.01;
/// The step must satisfy `dt ≤ PHASE_RESOLUTION / ν`, with `ν` the spectral
/// spread of the (rotating-frame) Hamiltonian in GHz.
pub const PHASE_RESOLUTION: f64 = 0.02;

/// One step of a pulse schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Event {
    PrepareGround,
    /// Perfect instantaneous `|g,0⟩ ↔ |e,0⟩` swap.
    PiPulse,
    /// Sudden change of the qubit detuning from the bright mode, GHz.
    SetDetuning { detuning_ghz: f64 },
    Hold { duration_ns: f64 },
    Readout,
}

/// Validated event timeline: exactly one readout, last, directly after a hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    events: Vec<Event>,
}

impl PulseSchedule {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        let readouts = events.iter().filter(|e| matches!(e, Event::Readout)).count();
        if readouts != 1 {
            return Err(Error::Schedule(format!(
                "expected exactly one readout, found {readouts}"
            )));
        }
        if events.last() != Some(&Event::Readout) {
            return Err(Error::Schedule("readout must be the last event".into()));
        }
        if !matches!(events.iter().rev().nth(1), Some(Event::Hold { .. })) {
            return Err(Error::Schedule("readout must directly follow a hold".into()));
        }
        for e in &events {
            match *e {
                Event::Hold { duration_ns } if !(duration_ns >= 0.0 && duration_ns.is_finite()) => {
                    return Err(Error::Schedule(format!(
                        "hold duration must be finite and >= 0, got {duration_ns}"
                    )));
                }
                Event::SetDetuning { detuning_ghz } if !detuning_ghz.is_finite() => {
                    return Err(Error::Schedule("detuning must be finite".into()));
                }
                _ => {}
            }
        }
        Ok(PulseSchedule { events })
    }

    /// Prepare, π-pulse, jump to `detuning_ghz`, hold for `hold_ns`, read out.
    pub fn vacuum_rabi(detuning_ghz: f64, hold_ns: f64) -> Result<Self> {
        Self::new(vec![
            Event::PrepareGround,
            Event::PiPulse,
            Event::SetDetuning { detuning_ghz },
            Event::Hold {
                duration_ns: hold_ns,
            },
            Event::Readout,
        ])
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

/// Lindblad rates, all in 1/ns. A channel at rate `γ` damps the affected
/// populations or coherences as `e^{−γt}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DissipationSpec {
    /// Qubit relaxation `1/T1`.
    pub relaxation_ghz: f64,
    /// Qubit pure dephasing `1/T2echo − 1/(2·T1)`.
    pub qubit_dephasing_ghz: f64,
    /// Pure dephasing of the bright collective mode.
    pub gamma_ens_ghz: f64,
}

impl DissipationSpec {
    pub fn none() -> Self {
        DissipationSpec {
            relaxation_ghz: 0.0,
            qubit_dephasing_ghz: 0.0,
            gamma_ens_ghz: 0.0,
        }
    }

    pub fn from_lifetimes(t1_ns: f64, t2echo_ns: f64, gamma_ens_ghz: f64) -> Result<Self> {
        if !(t1_ns > 0.0) {
            return Err(Error::param("t1_ns", "must be > 0"));
        }
        if !(t2echo_ns > 0.0 && t2echo_ns <= 2.0 * t1_ns) {
            return Err(Error::param("t2echo_ns", "must satisfy 0 < T2echo <= 2·T1"));
        }
        let spec = DissipationSpec {
            relaxation_ghz: 1.0 / t1_ns,
            qubit_dephasing_ghz: (1.0 / t2echo_ns - 0.5 / t1_ns).max(0.0),
            gamma_ens_ghz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_gamma_ens(self, gamma_ens_ghz: f64) -> Self {
        DissipationSpec {
            gamma_ens_ghz,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("relaxation_ghz", self.relaxation_ghz),
            ("qubit_dephasing_ghz", self.qubit_dephasing_ghz),
            ("gamma_ens_ghz", self.gamma_ens_ghz),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("rate must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Jump operators on the collective basis.
    ///
    /// * `|g,0⟩⟨e,0|` at `1/T1`;
    /// * qubit `σz` at `γφ/2`, so qubit coherences decay at `γφ`;
    /// * `|g,B⟩⟨g,B|` at `2·γ_ens`, so bright-mode coherences decay at `γ_ens`.
    pub fn collapses(&self) -> Vec<Collapse> {
        let op = |m: CMatrix| Operator::new(m, collective_basis()).expect("dim 4");
        let mut lower = CMatrix::zeros(4, 4);
        lower[(idx::GROUND, idx::QUBIT_EXCITED)] = C64::from(1.0);
        let mut sz = CMatrix::from_diagonal_element(4, 4, C64::from(-1.0));
        sz[(idx::QUBIT_EXCITED, idx::QUBIT_EXCITED)] = C64::from(1.0);
        let mut bright = CMatrix::zeros(4, 4);
        bright[(idx::BRIGHT, idx::BRIGHT)] = C64::from(1.0);
        vec![
            Collapse::new(op(lower), self.relaxation_ghz),
            Collapse::new(op(sz), 0.5 * self.qubit_dephasing_ghz),
            Collapse::new(op(bright), 2.0 * self.gamma_ens_ghz),
        ]
    }
}

/// Collective Hamiltonians indexed by the qubit detuning `δ = F − (D + E)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectiveFamily {
    pub d_ghz: f64,
    pub e_ghz: f64,
    pub g_ens_ghz: f64,
}

impl CollectiveFamily {
    pub fn from_ensemble(ep: &EnsembleParams) -> Self {
        CollectiveFamily {
            d_ghz: ep.d_ghz,
            e_ghz: ep.e_ghz,
            g_ens_ghz: ep.collective_coupling(),
        }
    }

    /// Lab-frame Hamiltonian with qubit splitting `D + E + δ`.
    pub fn lab_hamiltonian(&self, detuning_ghz: f64) -> Operator {
        collective_hamiltonian(
            self.d_ghz + self.e_ghz + detuning_ghz,
            self.d_ghz,
            self.e_ghz,
            self.g_ens_ghz,
        )
    }

    /// `diag(0, δ, 0, −2E)` plus the `g_ens/2` exchange.
    pub fn rotating_hamiltonian(&self, detuning_ghz: f64) -> Operator {
        let mut m = CMatrix::zeros(4, 4);
        m[(idx::QUBIT_EXCITED, idx::QUBIT_EXCITED)] = C64::from(detuning_ghz);
        m[(idx::DARK, idx::DARK)] = C64::from(-2.0 * self.e_ghz);
        m[(idx::QUBIT_EXCITED, idx::BRIGHT)] = C64::from(0.5 * self.g_ens_ghz);
        m[(idx::BRIGHT, idx::QUBIT_EXCITED)] = C64::from(0.5 * self.g_ens_ghz);
        Operator::new(m, collective_basis()).expect("dim 4")
    }
}

/// Affine map from qubit excited population to detector switching probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutMap {
    pub contrast: f64,
    pub offset: f64,
}

impl Default for ReadoutMap {
    fn default() -> Self {
        ReadoutMap {
            contrast: 0.4,
            offset: 0.3,
        }
    }
}

impl ReadoutMap {
    pub fn new(contrast: f64, offset: f64) -> Result<Self> {
        let m = ReadoutMap { contrast, offset };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offset >= 0.0) {
            return Err(Error::param("offset", "must be >= 0"));
        }
        if !(self.contrast >= 0.0) {
            return Err(Error::param("contrast", "must be >= 0"));
        }
        if !(self.offset + self.contrast <= 1.0) {
            return Err(Error::param("contrast", "offset + contrast must be <= 1"));
        }
        Ok(())
    }

    pub fn apply(&self, p_excited: f64) -> f64 {
        self.offset + self.contrast * p_excited
    }
}

/// `P_sw = p0 + c·P_e`, checking the parameter bounds.
pub fn readout_map(p_excited: f64, contrast: f64, offset: f64) -> Result<f64> {
    Ok(ReadoutMap::new(contrast, offset)?.apply(p_excited))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Requested integration step; shortened so it divides the sample interval.
    pub dt_ns: f64,
    pub sample_interval_ns: f64,
}

/// Populations sampled over the final hold, times measured from its start.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    pub times_ns: Vec<f64>,
    pub p_ground: Vec<f64>,
    pub p_qubit_excited: Vec<f64>,
    pub p_bright: Vec<f64>,
    pub p_dark: Vec<f64>,
    pub p_switch: Vec<f64>,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.times_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ns.is_empty()
    }

    fn push(&mut self, t: f64, rho: &CMatrix, readout: &ReadoutMap) {
        let p = |k: usize| rho[(k, k)].re;
        self.times_ns.push(t);
        self.p_ground.push(p(idx::GROUND));
        self.p_qubit_excited.push(p(idx::QUBIT_EXCITED));
        self.p_bright.push(p(idx::BRIGHT));
        self.p_dark.push(p(idx::DARK));
        self.p_switch.push(readout.apply(p(idx::QUBIT_EXCITED)));
    }
}

/// Stepwise executor for a schedule; exposes the density matrix between
/// events.
pub struct Simulation<'a> {
    family: &'a CollectiveFamily,
    collapses: Vec<Collapse>,
    rho: CMatrix,
    detuning_ghz: f64,
    dt_ns: f64,
}

impl<'a> Simulation<'a> {
    /// Starts in `|g,0⟩` at zero detuning.
    pub fn new(family: &'a CollectiveFamily, dissipation: &DissipationSpec, dt_ns: f64) -> Result<Self> {
        dissipation.validate()?;
        if !(dt_ns > 0.0) || !dt_ns.is_finite() {
            return Err(Error::param("dt_ns", format!("must be > 0, got {dt_ns}")));
        }
        Ok(Simulation {
            family,
            collapses: dissipation.collapses(),
            rho: ground_density(),
            detuning_ghz: 0.0,
            dt_ns,
        })
    }

    pub fn density(&self) -> &CMatrix {
        &self.rho
    }

    pub fn detuning_ghz(&self) -> f64 {
        self.detuning_ghz
    }

    /// Apply one instantaneous event. Holds go through [`Simulation::hold`].
    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match *event {
            Event::PrepareGround => self.rho = ground_density(),
            Event::PiPulse => {
                self.rho.swap_rows(idx::GROUND, idx::QUBIT_EXCITED);
                self.rho.swap_columns(idx::GROUND, idx::QUBIT_EXCITED);
            }
            Event::SetDetuning { detuning_ghz } => self.detuning_ghz = detuning_ghz,
            Event::Hold { duration_ns } => self.hold(duration_ns, None, |_, _| {})?,
            Event::Readout => {}
        }
        Ok(())
    }

    /// Evolve for `duration_ns`; when `sample_interval_ns` is given, call
    /// `observe(t, ρ)` at `t = 0, Δ, 2Δ, …, duration`.
    pub fn hold(
        &mut self,
        duration_ns: f64,
        sample_interval_ns: Option<f64>,
        mut observe: impl FnMut(f64, &CMatrix),
    ) -> Result<()> {
        let h = self.family.rotating_hamiltonian(self.detuning_ghz);
        check_step(&h, self.dt_ns)?;
        let lindblad = Lindbladian::new(&h, &self.collapses)?;
        let (samples, interval) = match sample_interval_ns {
            Some(iv) => {
                if !(iv > 0.0) {
                    return Err(Error::param("sample_interval_ns", "must be > 0"));
                }
                let k = (duration_ns / iv).round();
                if (k * iv - duration_ns).abs() > 1e-9 * duration_ns.max(1.0) {
                    return Err(Error::param(
                        "sample_interval_ns",
                        format!("{iv} ns does not divide the {duration_ns} ns hold"),
                    ));
                }
                (k as usize, iv)
            }
            None => (1, duration_ns),
        };
        if sample_interval_ns.is_some() {
            observe(0.0, &self.rho);
        }
        if interval == 0.0 {
            return Ok(());
        }
        let steps = (interval / self.dt_ns - 1e-9).ceil().max(1.0) as usize;
        let dt = interval / steps as f64;
        for s in 1..=samples {
            for _ in 0..steps {
                self.rho = lindblad.step(&self.rho, dt)?;
            }
            if sample_interval_ns.is_some() {
                observe(s as f64 * interval, &self.rho);
            }
        }
        Ok(())
    }
}

fn ground_density() -> CMatrix {
    let mut rho = CMatrix::zeros(4, 4);
    rho[(idx::GROUND, idx::GROUND)] = C64::from(1.0);
    rho
}

fn check_step(h: &Operator, dt_ns: f64) -> Result<()> {
    let values = eigh(h)?.values;
    let spread = values.last().unwrap() - values[0];
    if spread > 0.0 && dt_ns > PHASE_RESOLUTION / spread {
        return Err(Error::param(
            "dt_ns",
            format!(
                "{dt_ns} ns exceeds {:.3e} ns needed to resolve a {spread:.4} GHz spread",
                PHASE_RESOLUTION / spread
            ),
        ));
    }
    Ok(())
}

/// Execute `schedule`, sampling populations every `sample_interval_ns` over
/// the final hold.
pub fn run_schedule(
    family: &CollectiveFamily,
    schedule: &PulseSchedule,
    dissipation: &DissipationSpec,
    readout: &ReadoutMap,
    opts: &RunOptions,
) -> Result<TimeTrace> {
    readout.validate()?;
    let mut sim = Simulation::new(family, dissipation, opts.dt_ns)?;
    let events = schedule.events();
    let last_hold = events.len() - 2;
    let mut trace = TimeTrace::default();
    for (i, e) in events.iter().enumerate() {
        match (i == last_hold, e) {
            (true, Event::Hold { duration_ns }) => {
                sim.hold(*duration_ns, Some(opts.sample_interval_ns), |t, rho| {
                    trace.push(t, rho, readout)
                })?;
            }
            _ => sim.apply(e)?,
        }
    }
    Ok(trace)
}

/// Everything needed for a resonant or detuned vacuum Rabi run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabiSetup {
    pub family: CollectiveFamily,
    pub dissipation: DissipationSpec,
    pub readout: ReadoutMap,
    /// Samples over `[0, t_max]`, endpoints included.
    pub time_points: usize,
}

impl RabiSetup {
    pub fn new(family: CollectiveFamily, dissipation: DissipationSpec) -> Self {
        RabiSetup {
            family,
            dissipation,
            readout: ReadoutMap::default(),
            time_points: 401,
        }
    }

    fn options(&self, t_max_ns: f64, dt_ns: f64) -> Result<RunOptions> {
        if self.time_points < 2 {
            return Err(Error::param("time_points", "need at least 2"));
        }
        if !(t_max_ns > 0.0) || !t_max_ns.is_finite() {
            return Err(Error::param("t_max_ns", "must be > 0"));
        }
        Ok(RunOptions {
            dt_ns,
            sample_interval_ns: t_max_ns / (self.time_points - 1) as f64,
        })
    }

    pub fn trace_at(&self, detuning_ghz: f64, t_max_ns: f64, dt_ns: f64) -> Result<TimeTrace> {
        let opts = self.options(t_max_ns, dt_ns)?;
        let schedule = PulseSchedule::vacuum_rabi(detuning_ghz, t_max_ns)?;
        run_schedule(&self.family, &schedule, &self.dissipation, &self.readout, &opts)
    }
}

/// Resonant (`δ = 0`) vacuum Rabi trace over `[0, t_max_ns]`.
pub fn vacuum_rabi_trace(setup: &RabiSetup, t_max_ns: f64, dt_ns: f64) -> Result<TimeTrace> {
    setup.trace_at(0.0, t_max_ns, dt_ns)
}

/// Switching probability versus detuning and hold time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChevronGrid {
    pub detunings_ghz: Vec<f64>,
    pub times_ns: Vec<f64>,
    /// `values[i][j]`: detuning `i`, time `j`.
    pub values: Vec<Vec<f64>>,
}

/// One vacuum Rabi trace per detuning; rows are independent and merged in
/// grid order.
pub fn chevron_scan(
    setup: &RabiSetup,
    detunings_ghz: &[f64],
    t_max_ns: f64,
    dt_ns: f64,
    exec: &Executor,
) -> Result<ChevronGrid> {
    if detunings_ghz.is_empty() {
        return Err(Error::param("detunings", "grid must be non-empty"));
    }
    let rows = exec.try_map(detunings_ghz, |&d| setup.trace_at(d, t_max_ns, dt_ns))?;
    let times_ns = rows[0].times_ns.clone();
    Ok(ChevronGrid {
        detunings_ghz: detunings_ghz.to_vec(),
        times_ns,
        values: rows.into_iter().map(|r| r.p_switch).collect(),
    })
}

/// Fit the qubit excited population of a trace.
pub fn fit_trace(trace: &TimeTrace) -> Result<DampedCosineFit> {
    fit_damped_cosine(&trace.times_ns, &trace.p_qubit_excited)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCalibration {
    pub gamma_ens_ghz: f64,
    pub fitted_decay_ns: f64,
    pub evaluations: usize,
    pub diagnostic: Option<String>,
}

/// Upper end of the search interval for `γ_ens`, GHz.
pub const GAMMA_SEARCH_MAX: f64 = 1.0;
const GAMMA_SEARCH_START: f64 = 1e-3;

/// Find the bright-mode dephasing rate whose resonant trace fits to an
/// envelope decay of `target_decay_ns` (within 0.5%), by bracketing on a
/// doubling grid and bisecting in `log γ`.
pub fn calibrate_gamma(
    target_decay_ns: f64,
    setup: &RabiSetup,
    t_max_ns: f64,
    dt_ns: f64,
) -> Result<GammaCalibration> {
    if !(target_decay_ns > 0.0) || !target_decay_ns.is_finite() {
        return Err(Error::param("target_decay_ns", "must be > 0"));
    }
    let mut evaluations = 0;
    let mut decay_at = |gamma: f64| -> Result<f64> {
        evaluations += 1;
        let s = RabiSetup {
            dissipation: setup.dissipation.with_gamma_ens(gamma),
            ..*setup
        };
        Ok(fit_trace(&vacuum_rabi_trace(&s, t_max_ns, dt_ns)?)?.model.decay_ns)
    };

    let tau0 = decay_at(0.0)?;
    if tau0 <= target_decay_ns {
        return Ok(GammaCalibration {
            gamma_ens_ghz: 0.0,
            fitted_decay_ns: tau0,
            evaluations,
            diagnostic: Some(format!(
                "decay without ensemble dephasing is already {tau0:.3} ns <= target {target_decay_ns} ns"
            )),
        });
    }

    // bracket: lo decays slower than the target, hi faster
    let (mut lo, mut tau_lo) = (0.0, tau0);
    let mut hi = GAMMA_SEARCH_START;
    let mut tau_hi;
    loop {
        match decay_at(hi) {
            Ok(tau) if tau > target_decay_ns => {
                lo = hi;
                tau_lo = tau;
            }
            Ok(tau) => {
                tau_hi = tau;
                break;
            }
            Err(e) => return Err(e),
        }
        if hi >= GAMMA_SEARCH_MAX {
            return Err(Error::NoBracket(format!(
                "decay still {tau_lo:.3} ns > {target_decay_ns} ns at gamma_ens = {GAMMA_SEARCH_MAX} GHz"
            )));
        }
        hi = (2.0 * hi).min(GAMMA_SEARCH_MAX);
    }

    for _ in 0..60 {
        let best = if (tau_hi - target_decay_ns).abs() <= (tau_lo - target_decay_ns).abs() {
            (hi, tau_hi)
        } else {
            (lo, tau_lo)
        };
        if (best.1 - target_decay_ns).abs() <= 5e-3 * target_decay_ns {
            return Ok(GammaCalibration {
                gamma_ens_ghz: best.0,
                fitted_decay_ns: best.1,
                evaluations,
                diagnostic: None,
            });
        }
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        let tau = decay_at(mid)?;
        if tau > target_decay_ns {
            lo = mid;
            tau_lo = tau;
        } else {
            hi = mid;
            tau_hi = tau;
        }
    }
    Err(Error::NoBracket(format!(
        "bisection stalled between {lo:.6e} and {hi:.6e} GHz"
    )))
}
