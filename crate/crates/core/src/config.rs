//! Unit-aware run configuration: a TOML schema in which every dimensioned
//! number is written as a string with an explicit unit ("5182 MHz",
//! "3.52 us"), named parameter presets, dotted-path overrides, and resolution
//! into the runtime types the experiments consume.

use crate::device::{DeviceConfig, ResonatorParams, TransmonParams};
use crate::engine::ErasureInstrument;
use crate::noise::NoiseParams;
use crate::protocols::{CardinalState, CrParams, DdScheme, LifetimeConfig, RbConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config invalid: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("override error: {0}")]
    Override(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

// ---------------------------------------------------------------------------
// Dimensioned quantities
// ---------------------------------------------------------------------------

fn parse_with_unit(s: &str, kind: &str, units: &[(&str, f64)]) -> std::result::Result<f64, String> {
    let t = s.trim();
    // "inf us" needs special handling: the generic split below keys on the
    // first letter that cannot belong to an exponent, which "inf" trips.
    let (num_str, unit_str) = if let Some(rest) =
        t.strip_prefix("+inf").or_else(|| t.strip_prefix("inf"))
    {
        ("inf", rest.trim())
    } else {
        let split = t
            .char_indices()
            .find(|(_, c)| c.is_alphabetic() && *c != 'e' && *c != 'E')
            .map(|(i, _)| i)
            .unwrap_or(t.len());
        let (n, u) = t.split_at(split);
        (n.trim(), u.trim())
    };
    if unit_str.is_empty() {
        return Err(format!(
            "missing unit on {kind} quantity \"{s}\" (write e.g. \"{} {}\")",
            if num_str.is_empty() { "1.0" } else { num_str },
            units[0].0
        ));
    }
    let value: f64 = match num_str {
        "inf" => f64::INFINITY,
        _ => num_str
            .parse()
            .map_err(|_| format!("cannot parse number in {kind} quantity \"{s}\""))?,
    };
    for (name, scale) in units {
        if unit_str.eq_ignore_ascii_case(name) {
            return Ok(value * scale);
        }
    }
    Err(format!(
        "unknown {kind} unit \"{unit_str}\" in \"{s}\" (accepted: {})",
        units
            .iter()
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

macro_rules! quantity {
    ($name:ident, $kind:literal, $canon:literal, $units:expr) => {
        /// Dimensioned value stored in the canonical unit; written in configs
        /// as a string with an explicit unit suffix.
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub f64);

        impl $name {
            const UNITS: &'static [(&'static str, f64)] = $units;

            pub fn parse(s: &str) -> std::result::Result<Self, String> {
                parse_with_unit(s, $kind, Self::UNITS).map($name)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                if self.0.is_infinite() {
                    write!(f, "inf {}", $canon)
                } else {
                    write!(f, "{} {}", self.0, $canon)
                }
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                struct V;
                impl serde::de::Visitor<'_> for V {
                    type Value = $name;
                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        write!(f, concat!("a string like \"1.0 ", $canon, "\""))
                    }
                    fn visit_str<E: serde::de::Error>(
                        self,
                        v: &str,
                    ) -> std::result::Result<$name, E> {
                        $name::parse(v).map_err(E::custom)
                    }
                    fn visit_f64<E: serde::de::Error>(
                        self,
                        v: f64,
                    ) -> std::result::Result<$name, E> {
                        Err(E::custom(format!(
                            concat!(
                                "bare number {} for a ",
                                $kind,
                                " quantity; write a unit string like \"{} ",
                                $canon,
                                "\""
                            ),
                            v, v
                        )))
                    }
                    fn visit_i64<E: serde::de::Error>(
                        self,
                        v: i64,
                    ) -> std::result::Result<$name, E> {
                        self.visit_f64(v as f64)
                    }
                }
                d.deserialize_any(V)
            }
        }
    };
}

quantity!(
    Freq,
    "frequency",
    "MHz",
    &[("GHz", 1e3), ("MHz", 1.0), ("kHz", 1e-3), ("Hz", 1e-6)]
);
quantity!(
    Time,
    "time",
    "us",
    &[
        ("s", 1e6),
        ("ms", 1e3),
        ("us", 1.0),
        ("µs", 1.0),
        ("ns", 1e-3)
    ]
);

impl Freq {
    pub fn mhz(self) -> f64 {
        self.0
    }
    pub fn khz(self) -> f64 {
        self.0 * 1e3
    }
}

impl Time {
    pub fn us(self) -> f64 {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Config sections
// ---------------------------------------------------------------------------

fn default_levels() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmonSection {
    pub omega: Freq,
    pub alpha: Freq,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorSection {
    pub omega_r: Freq,
    pub kappa_r: Freq,
    pub g_r: Freq,
    pub chi_bias: Freq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    pub data: TransmonSection,
    pub ancilla: TransmonSection,
    pub coupling_g: Freq,
    pub resonator: ResonatorSection,
    pub drive_detuning: Freq,
    pub stark_shift: Freq,
}

impl DeviceSection {
    pub fn to_device(&self) -> DeviceConfig {
        DeviceConfig {
            data: TransmonParams {
                omega: self.data.omega.mhz(),
                alpha: self.data.alpha.mhz(),
                levels: self.data.levels,
            },
            ancilla: TransmonParams {
                omega: self.ancilla.omega.mhz(),
                alpha: self.ancilla.alpha.mhz(),
                levels: self.ancilla.levels,
            },
            coupling_g: self.coupling_g.mhz(),
            resonator: ResonatorParams {
                omega_r: self.resonator.omega_r.mhz(),
                kappa_r: self.resonator.kappa_r.mhz(),
                g_r: self.resonator.g_r.mhz(),
                chi_bias: self.resonator.chi_bias.mhz(),
            },
            drive_detuning: self.drive_detuning.mhz(),
            stark_shift: self.stark_shift.khz(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub t1_ge: Time,
    pub t1_ef: Time,
    pub tphi_gf: Time,
    pub p_thermal: f64,
    pub ancilla_t1: Time,
    pub ancilla_t2e: Time,
    pub readout_len: Time,
}

impl NoiseSection {
    pub fn to_noise(&self) -> NoiseParams {
        NoiseParams {
            t1_ge: self.t1_ge.us(),
            t1_ef: self.t1_ef.us(),
            tphi_gf: self.tphi_gf.us(),
            p_thermal: self.p_thermal,
            ancilla_t1: self.ancilla_t1.us(),
            ancilla_t2e: self.ancilla_t2e.us(),
            readout_len: self.readout_len.us(),
        }
    }

}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSection {
    pub p_false_pos_0l: f64,
    pub p_false_pos_1l: f64,
    pub p_fn_to_0l: f64,
    pub p_fn_to_1l: f64,
    pub p_fn_stay_e: f64,
    #[serde(default = "default_true")]
    pub reset: bool,
}

fn default_true() -> bool {
    true
}

impl InstrumentSection {
    pub fn to_instrument(&self) -> ErasureInstrument {
        ErasureInstrument {
            p_false_pos_0l: self.p_false_pos_0l,
            p_false_pos_1l: self.p_false_pos_1l,
            p_fn_to_0l: self.p_fn_to_0l,
            p_fn_to_1l: self.p_fn_to_1l,
            p_fn_stay_e: self.p_fn_stay_e,
            reset: self.reset,
        }
    }

}

// --- experiment blocks ------------------------------------------------------

/// Default crossing pairs: the level pairs whose avoided crossings the
/// frequency scan reports for a data-ancilla pair.
pub const DEFAULT_CROSSING_PAIRS: [(&str, &str); 9] = [
    ("eg", "0Le"),
    ("1Lg", "ee"),
    ("1Lg", "0Lf"),
    ("ee", "0Lf"),
    ("hg", "ef"),
    ("hg", "0Lh"),
    ("1Le", "ef"),
    ("1Le", "0Lh"),
    ("ef", "0Lh"),
];

fn default_crossing_pairs() -> Vec<(String, String)> {
    DEFAULT_CROSSING_PAIRS
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossingsSection {
    pub freq_start: Freq,
    pub freq_stop: Freq,
    #[serde(default = "default_crossing_pairs")]
    pub pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiSection {
    /// Mean readout photon number for the exact dispersive estimate.
    #[serde(default = "default_n_bar")]
    pub n_bar: f64,
}

impl Default for ChiSection {
    fn default() -> Self {
        ChiSection { n_bar: 1.0 }
    }
}

fn default_n_bar() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub t_cycle: Time,
    pub t1_ge: Time,
    pub t1_ef: Time,
    pub t1_eg: Option<Time>,
    pub p_0lg_given_eg: f64,
    pub p_1lg_given_eg: f64,
    pub p_eg_given_eg: f64,
    pub gate_error_per_pulse: f64,
    pub pulses_per_cycle: f64,
}

impl Default for BudgetSection {
    fn default() -> Self {
        let b = crate::analysis::BudgetInput::default();
        BudgetSection {
            t_cycle: Time(b.t_cycle),
            t1_ge: Time(b.t1_ge),
            t1_ef: Time(b.t1_ef),
            t1_eg: None,
            p_0lg_given_eg: b.p_0lg_given_eg,
            p_1lg_given_eg: b.p_1lg_given_eg,
            p_eg_given_eg: b.p_eg_given_eg,
            gate_error_per_pulse: b.gate_error_per_pulse,
            pulses_per_cycle: b.pulses_per_cycle,
        }
    }
}

impl BudgetSection {
    pub fn to_input(&self) -> crate::analysis::BudgetInput {
        crate::analysis::BudgetInput {
            t_cycle: self.t_cycle.us(),
            t1_ge: self.t1_ge.us(),
            t1_ef: self.t1_ef.us(),
            t1_eg: self.t1_eg.unwrap_or(self.t1_ge).us(),
            p_0lg_given_eg: self.p_0lg_given_eg,
            p_1lg_given_eg: self.p_1lg_given_eg,
            p_eg_given_eg: self.p_eg_given_eg,
            gate_error_per_pulse: self.gate_error_per_pulse,
            pulses_per_cycle: self.pulses_per_cycle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeSection {
    pub initial_state: CardinalState,
    pub dd: DdScheme,
    pub cycle_time: Time,
    #[serde(default = "default_rounds")]
    pub n_rounds_max: usize,
    #[serde(default = "default_shots")]
    pub n_shots: usize,
    #[serde(default = "default_lock_rabi")]
    pub lock_rabi: Freq,
    #[serde(default = "default_true")]
    pub checks_enabled: bool,
}

fn default_rounds() -> usize {
    40
}
fn default_shots() -> usize {
    2000
}
fn default_lock_rabi() -> Freq {
    Freq(1.0)
}

impl LifetimeSection {
    pub fn to_config(&self, instrument: &ErasureInstrument) -> LifetimeConfig {
        let mut cfg = LifetimeConfig::new(self.initial_state, self.dd, self.cycle_time.us());
        cfg.n_rounds_max = self.n_rounds_max;
        cfg.n_shots = self.n_shots;
        cfg.instrument = instrument.clone();
        cfg.lock_rabi = self.lock_rabi.mhz();
        cfg.checks_enabled = self.checks_enabled;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbSection {
    pub sequence_lengths: Vec<usize>,
    pub n_randomizations: usize,
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    #[serde(default = "default_rb_cycle")]
    pub cycle_time: Time,
    #[serde(default = "default_true")]
    pub post_select: bool,
    #[serde(default = "default_rb_shots")]
    pub n_shots_per_length: usize,
    #[serde(default)]
    pub ideal_gates: bool,
}

fn default_check_every() -> usize {
    29
}
fn default_rb_cycle() -> Time {
    Time(5.04)
}
fn default_rb_shots() -> usize {
    1000
}

impl RbSection {
    pub fn to_config(&self, instrument: &ErasureInstrument) -> RbConfig {
        let mut cfg = RbConfig::new(self.sequence_lengths.clone(), self.n_randomizations);
        cfg.check_every = self.check_every;
        cfg.cycle_time = self.cycle_time.us();
        cfg.post_select = self.post_select;
        cfg.instrument = instrument.clone();
        cfg.n_shots_per_length = self.n_shots_per_length;
        cfg.ideal_gates = self.ideal_gates;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BellSection {
    pub omega_eff: Freq,
    pub delta_ac: Freq,
    pub duration: Time,
    pub erasure_wait: Time,
    pub relabel: bool,
    pub with_erasure: bool,
    /// Noise on the second data qubit; falls back to the main noise block.
    pub noise_q2: Option<NoiseSection>,
    /// Shots per tomography basis; 0 skips tomography and reports exact
    /// fidelities only.
    pub tomography_shots: usize,
}

impl Default for BellSection {
    fn default() -> Self {
        let cr = CrParams::cnot();
        BellSection {
            omega_eff: Freq(cr.omega_eff),
            delta_ac: Freq(cr.delta_ac),
            duration: Time(cr.duration),
            erasure_wait: Time(cr.erasure_wait),
            relabel: cr.relabel,
            with_erasure: false,
            noise_q2: None,
            tomography_shots: 0,
        }
    }
}

impl BellSection {
    pub fn to_cr(&self) -> CrParams {
        CrParams {
            omega_eff: self.omega_eff.mhz(),
            delta_ac: self.delta_ac.mhz(),
            duration: self.duration.us(),
            erasure_wait: self.erasure_wait.us(),
            relabel: self.relabel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdPointSection {
    pub rabi: Freq,
    pub t1rho: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsdSection {
    pub points: Vec<PsdPointSection>,
    /// Overrides the f-level lifetime in the lock-decay relation; defaults
    /// to the noise block's t1_ef.
    #[serde(default)]
    pub t1_ef: Option<Time>,
}

fn default_cal_shots() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutCalSection {
    /// Target confusion matrix, rows = prepared level (g, e, f), columns =
    /// assigned outcome.
    pub confusion: [[f64; 3]; 3],
    #[serde(default = "default_cal_shots")]
    pub n_shots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentSection {
    Crossings(CrossingsSection),
    Chi(ChiSection),
    Budget(BudgetSection),
    Lifetime(LifetimeSection),
    Rb(RbSection),
    Bell(BellSection),
    Psd(PsdSection),
    ReadoutCal(ReadoutCalSection),
}

impl ExperimentSection {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentSection::Crossings(_) => "crossings",
            ExperimentSection::Chi(_) => "chi",
            ExperimentSection::Budget(_) => "budget",
            ExperimentSection::Lifetime(_) => "lifetime",
            ExperimentSection::Rb(_) => "rb",
            ExperimentSection::Bell(_) => "bell",
            ExperimentSection::Psd(_) => "psd",
            ExperimentSection::ReadoutCal(_) => "readout-cal",
        }
    }
}

// ---------------------------------------------------------------------------
// Top-level run configuration
// ---------------------------------------------------------------------------

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_gate_duration() -> Time {
    Time(0.08)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required so no run depends on wall-clock entropy.
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub output_dir: PathBuf,
    /// Named parameter preset filling device/noise/instrument; explicit
    /// blocks below override the preset wholesale.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub device: Option<DeviceSection>,
    #[serde(default)]
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub instrument: Option<InstrumentSection>,
    /// Logical-gate pulse length used wherever gates are compiled.
    #[serde(default = "default_gate_duration")]
    pub gate_duration: Time,
    pub experiment: ExperimentSection,
}

/// Device, noise, and instrument blocks of a named preset.
pub struct Preset {
    pub device: DeviceConfig,
    pub noise: NoiseParams,
    pub instrument: ErasureInstrument,
}

pub const PRESET_NAMES: [&str; 4] = ["cooldown-a", "cooldown-b", "ideal", "sim-baseline"];

fn device_b() -> DeviceConfig {
    DeviceConfig {
        data: TransmonParams {
            omega: 5182.0,
            alpha: 180.0,
            levels: 4,
        },
        ancilla: TransmonParams {
            omega: 5410.0,
            alpha: 183.0,
            levels: 4,
        },
        coupling_g: 12.5,
        resonator: ResonatorParams {
            omega_r: 7496.0,
            kappa_r: 0.30,
            g_r: 103.0,
            chi_bias: -0.53,
        },
        drive_detuning: 0.64,
        stark_shift: 70.0,
    }
}

/// Named presets for the two measured operating points, a decoherence-free
/// reference, and the benchmarking-simulation parameter set.
pub fn preset(name: &str) -> Option<Preset> {
    match name {
        "cooldown-b" => Some(Preset {
            device: device_b(),
            noise: NoiseParams {
                t1_ge: 52.0,
                t1_ef: 26.0,
                tphi_gf: 440.0,
                p_thermal: 0.007,
                ancilla_t1: 12.0,
                ancilla_t2e: 16.0,
                readout_len: 1.4,
            },
            instrument: ErasureInstrument::standard(),
        }),
        "cooldown-a" => Some(Preset {
            device: DeviceConfig {
                data: TransmonParams {
                    omega: 5239.0,
                    alpha: 180.0,
                    levels: 4,
                },
                ancilla: TransmonParams {
                    omega: 5472.0,
                    alpha: 183.0,
                    levels: 4,
                },
                ..device_b()
            },
            noise: NoiseParams {
                t1_ge: 50.0,
                t1_ef: 20.0,
                tphi_gf: 65.0,
                p_thermal: 0.007,
                ancilla_t1: 17.0,
                ancilla_t2e: 17.0,
                readout_len: 0.54,
            },
            instrument: ErasureInstrument::standard(),
        }),
        "ideal" => Some(Preset {
            device: device_b(),
            noise: NoiseParams::noiseless(),
            instrument: ErasureInstrument::ideal(),
        }),
        "sim-baseline" => Some(Preset {
            device: device_b(),
            noise: NoiseParams {
                t1_ge: 52.0,
                t1_ef: 26.0,
                tphi_gf: 440.0,
                p_thermal: 0.007,
                ancilla_t1: 12.0,
                ancilla_t2e: 16.0,
                readout_len: 1.4,
            },
            instrument: crate::protocols::benchmarking_instrument(),
        }),
        _ => None,
    }
}

/// Fully-resolved run: concrete parameter structs plus the experiment block.
pub struct ResolvedRun {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub device: DeviceConfig,
    pub noise: NoiseParams,
    pub instrument: ErasureInstrument,
    pub gate_duration: f64,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Every schema or invariant violation found, in one pass; empty means
    /// the config resolves and validates.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let base = match &self.preset {
            Some(name) => match preset(name) {
                Some(p) => Some(p),
                None => {
                    out.push(format!(
                        "unknown preset \"{name}\" (known: {})",
                        PRESET_NAMES.join(", ")
                    ));
                    None
                }
            },
            None => None,
        };
        let device = self
            .device
            .as_ref()
            .map(|d| d.to_device())
            .or_else(|| base.as_ref().map(|p| p.device.clone()));
        let noise = self
            .noise
            .as_ref()
            .map(|n| n.to_noise())
            .or_else(|| base.as_ref().map(|p| p.noise.clone()));
        let instrument = self
            .instrument
            .as_ref()
            .map(|i| i.to_instrument())
            .or_else(|| base.as_ref().map(|p| p.instrument.clone()));
        match &device {
            None => out.push("no device parameters: set preset or [device]".into()),
            Some(d) => {
                if let Err(e) = d.validate() {
                    out.push(format!("device: {e}"));
                }
            }
        }
        match &noise {
            None => out.push("no noise parameters: set preset or [noise]".into()),
            Some(n) => {
                if let Err(e) = n.validate() {
                    out.push(format!("noise: {e}"));
                }
            }
        }
        match &instrument {
            None => out.push("no instrument parameters: set preset or [instrument]".into()),
            Some(i) => {
                if let Err(e) = i.validate() {
                    out.push(format!("instrument: {e}"));
                }
            }
        }
        if !(self.gate_duration.us() > 0.0) {
            out.push(format!(
                "gate_duration must be positive, got {}",
                self.gate_duration
            ));
        }
        match &self.experiment {
            ExperimentSection::Crossings(c) => {
                if c.freq_start.mhz() >= c.freq_stop.mhz() {
                    out.push(format!(
                        "crossings: freq_start {} not below freq_stop {}",
                        c.freq_start, c.freq_stop
                    ));
                }
                for (name, f) in [("freq_start", c.freq_start), ("freq_stop", c.freq_stop)] {
                    if !(4000.0..=7000.0).contains(&f.mhz()) {
                        out.push(format!(
                            "crossings: {name} {f} outside the supported 4000-7000 MHz scan band"
                        ));
                    }
                }
                for (a, b) in &c.pairs {
                    for s in [a, b] {
                        if let Err(e) = crate::qsys::StateLabel::parse(s) {
                            out.push(format!("crossings: bad state label \"{s}\": {e}"));
                        }
                    }
                }
            }
            ExperimentSection::Chi(c) => {
                if !(c.n_bar > 0.0) {
                    out.push(format!("chi: n_bar must be positive, got {}", c.n_bar));
                }
            }
            ExperimentSection::Budget(b) => {
                if let Err(e) = b.to_input().validate() {
                    out.push(format!("budget: {e}"));
                }
            }
            ExperimentSection::Lifetime(l) => {
                let inst = instrument
                    .clone()
                    .unwrap_or_else(ErasureInstrument::standard);
                if let Err(e) = l.to_config(&inst).validate() {
                    out.push(format!("lifetime: {e}"));
                }
            }
            ExperimentSection::Rb(r) => {
                let inst = instrument
                    .clone()
                    .unwrap_or_else(ErasureInstrument::standard);
                if let Err(e) = r.to_config(&inst).validate() {
                    out.push(format!("rb: {e}"));
                }
            }
            ExperimentSection::Bell(b) => {
                if let Err(e) = b.to_cr().validate() {
                    out.push(format!("bell: {e}"));
                }
            }
            ExperimentSection::Psd(p) => {
                if p.points.is_empty() {
                    out.push("psd: points must be non-empty".into());
                }
                for pt in &p.points {
                    if !(pt.t1rho.us() > 0.0) {
                        out.push(format!("psd: t1rho must be positive, got {}", pt.t1rho));
                    }
                }
            }
            ExperimentSection::ReadoutCal(r) => {
                for (i, row) in r.confusion.iter().enumerate() {
                    let s: f64 = row.iter().sum();
                    if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (s - 1.0).abs() > 1e-6 {
                        out.push(format!(
                            "readout-cal: confusion row {i} is not a probability \
                             distribution (sums to {s})"
                        ));
                    }
                }
                if r.n_shots == 0 {
                    out.push("readout-cal: n_shots must be positive".into());
                }
            }
        }
        out
    }

    /// Resolves preset plus overrides into runtime parameter structs,
    /// erroring with the full violation list if anything is off.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let violations = self.violations();
        if !violations.is_empty() {
            return Err(ConfigError::Invalid(violations));
        }
        let base = self.preset.as_deref().and_then(preset);
        let device = self
            .device
            .as_ref()
            .map(|d| d.to_device())
            .or_else(|| base.as_ref().map(|p| p.device.clone()))
            .expect("checked by violations");
        let noise = self
            .noise
            .as_ref()
            .map(|n| n.to_noise())
            .or_else(|| base.as_ref().map(|p| p.noise.clone()))
            .expect("checked by violations");
        let instrument = self
            .instrument
            .as_ref()
            .map(|i| i.to_instrument())
            .or_else(|| base.as_ref().map(|p| p.instrument.clone()))
            .expect("checked by violations");
        Ok(ResolvedRun {
            seed: self.seed,
            output_dir: self.output_dir.clone(),
            device,
            noise,
            instrument,
            gate_duration: self.gate_duration.us(),
            experiment: self.experiment.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Dotted-path overrides
// ---------------------------------------------------------------------------

/// Applies `key.path=value` overrides to raw TOML text before parsing. The
/// value is parsed as a TOML literal when possible ("9", "true",
/// "[10, 20]"), otherwise taken as a string — so `noise.t1_ge=40 us` and
/// `noise.t1_ge="40 us"` both work.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml::Value =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(format!("override \"{ov}\" lacks '='")))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(ConfigError::Override(format!("override \"{ov}\" lacks a key")));
        }
        let value: toml::Value = match toml::from_str::<toml::Value>(&format!("v = {raw}")) {
            Ok(toml::Value::Table(t)) => t.get("v").cloned().unwrap(),
            _ => toml::Value::String(raw.trim().to_string()),
        };
        let mut node = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .as_table_mut()
                .ok_or_else(|| {
                    ConfigError::Override(format!("\"{path}\": \"{part}\" is not a table"))
                })?
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = node.as_table_mut().ok_or_else(|| {
            ConfigError::Override(format!("\"{path}\" does not address a table entry"))
        })?;
        table.insert(parts[parts.len() - 1].to_string(), value);
    }
    toml::to_string_pretty(&doc).map_err(|e| ConfigError::Parse(e.to_string()))
}
