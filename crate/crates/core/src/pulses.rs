//! Pulse shapes, sequence compilers (XY4, spin locking), the 24-element
//! Clifford decomposition table, and amplitude/carrier calibration of the
//! two-photon g-f gate.
//!
//! Timing convention: all durations are in us but compilers emit values on an
//! exact 1 ns grid; sequence totals are accumulated in integer nanoseconds so
//! "total equals sum of parts" holds exactly in f64.

use crate::device::{rad_per_us, DeviceConfig};
use crate::engine::{self, DriveTerm, EvolutionSpec};
use crate::qsys::{ket, OperatorMatrix, StateLabel, LVL_F, LVL_G};
use nalgebra::{DVector, Matrix2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PulseError {
    #[error("invalid pulse shape: {0}")]
    BadShape(String),
    #[error("time {t} us outside pulse window [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("cycle time {cycle} us cannot fit {need} us of pulses and check slot")]
    InfeasibleTiming { cycle: f64, need: f64 },
    #[error("Clifford index {0} out of range 0..24")]
    BadCliffordIndex(usize),
    #[error("calibration failed: best population {best:.6}; sweep data attached")]
    CalibrationFailed { best: f64, sweep: Vec<(f64, f64)> },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Qsys(#[from] crate::qsys::QsysError),
}

pub type Result<T> = std::result::Result<T, PulseError>;

/// Round a duration to the 1 ns compiler grid, returning integer ns.
pub fn ns_grid(us: f64) -> u64 {
    (us * 1000.0).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseKind {
    Gaussian,
    Flat,
    DragGaussian,
}

/// One shaped drive pulse. `amplitude` is the peak in rad/us; `carrier` is
/// the offset of the drive carrier from the data transmon's g-e frequency in
/// MHz; `phase` is the carrier phase in rad. For DRAG shapes `alpha` (rad/us)
/// scales the quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub kind: PulseKind,
    pub duration: f64,
    pub sigma: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub carrier: f64,
    pub drag_coeff: f64,
    pub alpha: f64,
}

impl PulseShape {
    pub fn flat(duration: f64, amplitude: f64, phase: f64, carrier: f64) -> Self {
        PulseShape {
            kind: PulseKind::Flat,
            duration,
            sigma: duration,
            amplitude,
            phase,
            carrier,
            drag_coeff: 0.0,
            alpha: 1.0,
        }
    }

    /// Gaussian with the sigma = duration/4 convention (window is +-2 sigma).
    pub fn gaussian(duration: f64, amplitude: f64, phase: f64, carrier: f64) -> Self {
        PulseShape {
            kind: PulseKind::Gaussian,
            duration,
            sigma: duration / 4.0,
            amplitude,
            phase,
            carrier,
            drag_coeff: 0.0,
            alpha: 1.0,
        }
    }

    pub fn drag(
        duration: f64,
        amplitude: f64,
        phase: f64,
        carrier: f64,
        drag_coeff: f64,
        alpha_rad: f64,
    ) -> Self {
        PulseShape {
            kind: PulseKind::DragGaussian,
            duration,
            sigma: duration / 4.0,
            amplitude,
            phase,
            carrier,
            drag_coeff,
            alpha: alpha_rad,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(PulseError::BadShape(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(PulseError::BadShape("amplitude must be finite".into()));
        }
        match self.kind {
            PulseKind::Flat => Ok(()),
            PulseKind::Gaussian | PulseKind::DragGaussian => {
                if !(self.sigma > 0.0) {
                    return Err(PulseError::BadShape(format!(
                        "sigma must be positive, got {}",
                        self.sigma
                    )));
                }
                if self.kind == PulseKind::DragGaussian && self.alpha == 0.0 {
                    return Err(PulseError::BadShape(
                        "DRAG quadrature needs a nonzero anharmonicity".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Complex baseband envelope at time `t` into the pulse: in-phase Gaussian
/// (or flat) part plus i times the DRAG quadrature
/// drag_coeff * d(in-phase)/dt / alpha. Carrier and phase are not applied
/// here; the evolution engine owns those.
///
/// Gaussians are offset-subtracted so the waveform is exactly zero at both
/// window edges (an abrupt truncation step would leave diabatic leakage far
/// above the gate-error scale); the peak is renormalized to `amplitude`.
pub fn drag_envelope(shape: &PulseShape, t: f64) -> Result<C64> {
    shape.validate()?;
    if !(0.0..=shape.duration).contains(&t) {
        return Err(PulseError::TimeOutOfRange {
            t,
            duration: shape.duration,
        });
    }
    Ok(match shape.kind {
        PulseKind::Flat => C64::new(shape.amplitude, 0.0),
        PulseKind::Gaussian | PulseKind::DragGaussian => {
            let c = shape.duration / 2.0;
            let x = t - c;
            let two_sig2 = 2.0 * shape.sigma * shape.sigma;
            let g = (-x * x / two_sig2).exp();
            let g_edge = (-c * c / two_sig2).exp();
            let scale = shape.amplitude / (1.0 - g_edge);
            let i_part = scale * (g - g_edge);
            if shape.kind == PulseKind::Gaussian || shape.drag_coeff == 0.0 {
                C64::new(i_part, 0.0)
            } else {
                let di = scale * g * (-x / (shape.sigma * shape.sigma));
                C64::new(i_part, shape.drag_coeff * di / shape.alpha)
            }
        }
    })
}

/// One scheduled element of a pulse program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceItem {
    Pulse { channel: String, shape: PulseShape },
    Delay { duration: f64 },
    ErasureCheck { slot: f64 },
    Readout { duration: f64 },
    VirtualZ { angle: f64 },
}

impl SequenceItem {
    pub fn duration(&self) -> f64 {
        match self {
            SequenceItem::Pulse { shape, .. } => shape.duration,
            SequenceItem::Delay { duration } => *duration,
            SequenceItem::ErasureCheck { slot } => *slot,
            SequenceItem::Readout { duration } => *duration,
            SequenceItem::VirtualZ { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub items: Vec<SequenceItem>,
    pub total_duration: f64,
}

impl PulseSequence {
    /// Build a sequence; the total is the exact ns-grid sum of the items.
    pub fn new(items: Vec<SequenceItem>) -> Self {
        let total_ns: u64 = items.iter().map(|i| ns_grid(i.duration())).sum();
        PulseSequence {
            items,
            total_duration: total_ns as f64 / 1000.0,
        }
    }

    pub fn concat(&self, other: &PulseSequence) -> PulseSequence {
        let mut items = self.items.clone();
        items.extend(other.items.iter().cloned());
        PulseSequence::new(items)
    }

    /// Line-oriented schedule: `start_us channel kind params`, one item per
    /// line, for golden-file comparison.
    pub fn schedule_text(&self) -> String {
        let mut out = String::new();
        let mut t_ns: u64 = 0;
        for item in &self.items {
            let start = t_ns as f64 / 1000.0;
            let line = match item {
                SequenceItem::Pulse { channel, shape } => format!(
                    "{start:.3} {channel} pulse kind={:?} dur={:.3} amp={:.3} phase={:.4} carrier={:.3}",
                    shape.kind, shape.duration, shape.amplitude, shape.phase, shape.carrier
                ),
                SequenceItem::Delay { duration } => {
                    format!("{start:.3} - delay dur={duration:.3}")
                }
                SequenceItem::ErasureCheck { slot } => {
                    format!("{start:.3} ancilla erasure_check slot={slot:.3}")
                }
                SequenceItem::Readout { duration } => {
                    format!("{start:.3} readout readout dur={duration:.3}")
                }
                SequenceItem::VirtualZ { angle } => {
                    format!("{start:.3} frame virtual_z angle={angle:.4}")
                }
            };
            out.push_str(&line);
            out.push('\n');
            t_ns += ns_grid(item.duration());
        }
        out
    }
}

/// The seven physical gates the Clifford decompositions draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gate {
    I,
    XPi,
    YPi,
    XPi2,
    XMPi2,
    YPi2,
    YMPi2,
}

impl Gate {
    /// Rotation angle and logical axis angle (rad) in the XY plane.
    pub fn angle_axis(self) -> (f64, f64) {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            Gate::I => (0.0, 0.0),
            Gate::XPi => (PI, 0.0),
            Gate::YPi => (PI, FRAC_PI_2),
            Gate::XPi2 => (FRAC_PI_2, 0.0),
            Gate::XMPi2 => (FRAC_PI_2, PI),
            Gate::YPi2 => (FRAC_PI_2, FRAC_PI_2),
            Gate::YMPi2 => (FRAC_PI_2, -FRAC_PI_2),
        }
    }

    pub fn is_pi(self) -> bool {
        matches!(self, Gate::XPi | Gate::YPi)
    }

    pub fn is_pi2(self) -> bool {
        matches!(self, Gate::XPi2 | Gate::XMPi2 | Gate::YPi2 | Gate::YMPi2)
    }
}

/// SU(2) matrix of a physical gate on the logical (g, f) subspace.
pub fn gate_unitary(g: Gate) -> Matrix2<C64> {
    let (theta, axis) = g.angle_axis();
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    // R = cos(t/2) I - i sin(t/2) (cos(a) sx + sin(a) sy)
    let off01 = C64::new(-s * axis.sin(), -s * axis.cos());
    let off10 = C64::new(s * axis.sin(), -s * axis.cos());
    Matrix2::new(C64::new(c, 0.0), off01, off10, C64::new(c, 0.0))
}

/// The 24 Clifford decompositions into physical gates, applied left to right.
/// Class structure: 4 Paulis, 8 axis cycles (2 pi/3), 6 pi/2 rotations,
/// 6 Hadamard-like; 8 pi + 1 identity + 36 pi/2 gates in total.
pub fn clifford_table() -> Vec<Vec<Gate>> {
    use Gate::*;
    vec![
        // Paulis
        vec![I],
        vec![XPi],
        vec![YPi],
        vec![YPi, XPi],
        // 2 pi / 3 axis cycles
        vec![XPi2, YPi2],
        vec![XPi2, YMPi2],
        vec![XMPi2, YPi2],
        vec![XMPi2, YMPi2],
        vec![YPi2, XPi2],
        vec![YPi2, XMPi2],
        vec![YMPi2, XPi2],
        vec![YMPi2, XMPi2],
        // pi/2 rotations
        vec![XPi2],
        vec![XMPi2],
        vec![YPi2],
        vec![YMPi2],
        vec![XMPi2, YPi2, XPi2],
        vec![XMPi2, YMPi2, XPi2],
        // Hadamard-like
        vec![XPi, YPi2],
        vec![XPi, YMPi2],
        vec![YPi, XPi2],
        vec![YPi, XMPi2],
        vec![XPi2, YPi2, XPi2],
        vec![XMPi2, YPi2, XMPi2],
    ]
}

/// Physical-gate decomposition of Clifford `i`.
pub fn compile_clifford(i: usize) -> Result<Vec<Gate>> {
    clifford_table()
        .into_iter()
        .nth(i)
        .ok_or(PulseError::BadCliffordIndex(i))
}

/// SU(2) matrix of table element `i` (its gates composed in order).
pub fn clifford_unitary(i: usize) -> Result<Matrix2<C64>> {
    let gates = compile_clifford(i)?;
    let mut u = Matrix2::identity();
    for g in gates {
        u = gate_unitary(g) * u;
    }
    Ok(u)
}

fn same_up_to_phase(a: &Matrix2<C64>, b: &Matrix2<C64>) -> bool {
    let tr = (a.adjoint() * b).trace();
    (tr.norm() - 2.0).abs() < 1e-9
}

/// Table index of the product "apply a, then b".
pub fn clifford_product_index(a: usize, b: usize) -> Result<usize> {
    let u = clifford_unitary(b)? * clifford_unitary(a)?;
    for i in 0..24 {
        if same_up_to_phase(&clifford_unitary(i)?, &u) {
            return Ok(i);
        }
    }
    unreachable!("Clifford group closure violated");
}

/// Table index of the inverse of element `i`.
pub fn clifford_inverse_index(i: usize) -> Result<usize> {
    let u = clifford_unitary(i)?;
    let inv = u.adjoint();
    for j in 0..24 {
        if same_up_to_phase(&clifford_unitary(j)?, &inv) {
            return Ok(j);
        }
    }
    unreachable!("Clifford group closure violated");
}

/// Calibrated physical pulses shared by the sequence compilers. The erasure
/// check slot covers syndrome SWAP, ancilla readout, and ring-down.
///
/// Both rotations share one carrier (phase coherence across a sequence
/// requires it); the pi/2 pulse's residual Stark phase — its drive is weaker
/// than the pi pulse the carrier was tuned for — is absorbed by an exact
/// virtual-z correction split equally before and after the pulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSet {
    pub pi: PulseShape,
    pub pi2: PulseShape,
    /// Total virtual-z angle (rad) wrapped around every pi/2 pulse.
    pub pi2_virtual_z: f64,
    /// Erasure-check slot length, us.
    pub check_slot: f64,
}

/// Two-photon drives imprint twice the carrier phase on the logical state:
/// the effective |1_L><0_L| coupling rides the squared drive amplitude, so
/// its phase is minus twice the carrier phase. A logical axis angle therefore
/// maps to minus half of it on the carrier.
pub fn two_photon_carrier_phase(logical_axis: f64) -> f64 {
    -logical_axis / 2.0
}

impl GateSet {
    /// Uncalibrated set with analytic-estimate amplitudes; adequate for
    /// timing/compilation tests, not for fidelity work.
    pub fn nominal(cfg: &DeviceConfig, gate_duration: f64) -> Self {
        let alpha_rad = rad_per_us(cfg.data.alpha);
        // Two-photon Rabi ~ A^2/(2*(alpha/2)); the squared-envelope area of
        // the lifted Gaussian gives the pi amplitude estimate.
        let sigma = gate_duration / 4.0;
        let q = (-2f64).exp();
        let area2 = sigma
            * (std::f64::consts::PI.sqrt() * erf(2.0)
                - 2.0 * q * (2.0 * std::f64::consts::PI).sqrt() * erf(2f64.sqrt())
                + 4.0 * q * q)
            / ((1.0 - q) * (1.0 - q));
        let a_pi = (std::f64::consts::PI * alpha_rad / area2).sqrt();
        let carrier = -cfg.data.alpha / 2.0;
        GateSet {
            pi: PulseShape::drag(gate_duration, a_pi, 0.0, carrier, 1.0, alpha_rad),
            pi2: PulseShape::drag(
                gate_duration,
                a_pi / std::f64::consts::SQRT_2,
                0.0,
                carrier,
                1.0,
                alpha_rad,
            ),
            pi2_virtual_z: 0.0,
            check_slot: 1.6,
        }
    }

    /// Fully calibrated set: the pi pulse fixes amplitude, shared carrier and
    /// DRAG weight; the pi/2 pulse is then calibrated at that carrier with a
    /// virtual-z correction as its third degree of freedom.
    pub fn calibrate(cfg: &DeviceConfig, gate_duration: f64) -> Result<Self> {
        let pi = calibrate_gf_pi(cfg, gate_duration)?;
        let (pi2, pi2_virtual_z) = calibrate_gf_pi2_at_carrier(cfg, gate_duration, pi.carrier)?;
        Ok(GateSet {
            pi,
            pi2,
            pi2_virtual_z,
            check_slot: 1.6,
        })
    }

    /// The shaped pulse realizing a physical gate; `None` for the identity
    /// (an idle of one gate duration).
    pub fn shape_for(&self, g: Gate) -> Option<PulseShape> {
        if g == Gate::I {
            return None;
        }
        let (theta, axis) = g.angle_axis();
        let base = if (theta - std::f64::consts::PI).abs() < 1e-12 {
            &self.pi
        } else {
            &self.pi2
        };
        let mut shape = base.clone();
        shape.phase = base.phase + two_photon_carrier_phase(axis);
        Some(shape)
    }

    pub fn gate_duration(&self) -> f64 {
        self.pi.duration
    }

    /// Sequence items realizing a physical gate, including the virtual-z
    /// halves around pi/2 pulses. The identity compiles to an idle of one
    /// gate duration.
    pub fn items_for(&self, g: Gate) -> Vec<SequenceItem> {
        let Some(shape) = self.shape_for(g) else {
            return vec![SequenceItem::Delay {
                duration: self.gate_duration(),
            }];
        };
        let pulse = SequenceItem::Pulse {
            channel: "data".into(),
            shape,
        };
        if g.is_pi2() && self.pi2_virtual_z != 0.0 {
            let half = SequenceItem::VirtualZ {
                angle: 0.5 * self.pi2_virtual_z,
            };
            vec![half.clone(), pulse, half]
        } else {
            vec![pulse]
        }
    }
}

/// XY4 decoupling cycle: tau/2 - Xpi - tau - Ypi - tau - Xpi - tau - Ypi -
/// tau/2, then the erasure-check slot; total is exactly `cycle_time`.
pub fn compile_xy4_cycle(gs: &GateSet, cycle_time: f64) -> Result<PulseSequence> {
    let gate = gs.gate_duration();
    let need = 4.0 * gate + gs.check_slot;
    let idle = cycle_time - need;
    if idle <= 0.0 {
        return Err(PulseError::InfeasibleTiming {
            cycle: cycle_time,
            need,
        });
    }
    // symmetric spacing on the 1 ns grid; remainder absorbed by the last gap
    let tau_ns = ns_grid(idle / 4.0);
    let half_ns = tau_ns / 2;
    let idle_ns = ns_grid(idle);
    let last_half_ns = idle_ns - half_ns - 3 * tau_ns;
    let tau = tau_ns as f64 / 1000.0;
    let half = half_ns as f64 / 1000.0;
    let last_half = last_half_ns as f64 / 1000.0;

    let x = gs.shape_for(Gate::XPi).expect("pi shape");
    let y = gs.shape_for(Gate::YPi).expect("pi shape");
    let p = |shape: &PulseShape| SequenceItem::Pulse {
        channel: "data".into(),
        shape: shape.clone(),
    };
    let items = vec![
        SequenceItem::Delay { duration: half },
        p(&x),
        SequenceItem::Delay { duration: tau },
        p(&y),
        SequenceItem::Delay { duration: tau },
        p(&x),
        SequenceItem::Delay { duration: tau },
        p(&y),
        SequenceItem::Delay { duration: last_half },
        SequenceItem::ErasureCheck { slot: gs.check_slot },
    ];
    Ok(PulseSequence::new(items))
}

/// Spin-locking cycle: Y(pi/2), continuous lock drive along X at the given
/// Rabi rate, Y(-pi/2), then the erasure-check slot.
pub fn compile_spin_locking(gs: &GateSet, rabi: f64, cycle_time: f64) -> Result<PulseSequence> {
    if rabi < 0.0 {
        return Err(PulseError::BadShape(format!(
            "lock Rabi rate must be nonnegative, got {rabi}"
        )));
    }
    let gate = gs.gate_duration();
    let need = 2.0 * gate + gs.check_slot;
    let lock = cycle_time - need;
    if lock <= 0.0 {
        return Err(PulseError::InfeasibleTiming {
            cycle: cycle_time,
            need,
        });
    }
    let lock_pulse = PulseShape::flat(
        ns_grid(lock) as f64 / 1000.0,
        rad_per_us(rabi),
        0.0,
        0.0,
    );
    let mut items = gs.items_for(Gate::YPi2);
    items.push(SequenceItem::Pulse {
        channel: "lock".into(),
        shape: lock_pulse,
    });
    items.extend(gs.items_for(Gate::YMPi2));
    items.push(SequenceItem::ErasureCheck { slot: gs.check_slot });
    Ok(PulseSequence::new(items))
}

/// Which rotation a calibration targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationAngle {
    Pi,
    PiHalf,
}

/// Noise-free single-transmon spec for the two-photon drive, built in the
/// drive-carrier ladder frame (level n rotates at n times the carrier) so the
/// drive term itself is slow and the residual detuning is zero.
fn calibration_spec(cfg: &DeviceConfig, shape: &PulseShape) -> EvolutionSpec {
    let d = cfg.data.levels;
    let ladder = cfg.data.omega + shape.carrier;
    let diag: Vec<f64> = (0..d)
        .map(|n| rad_per_us(cfg.data.bare_energy(n) - n as f64 * ladder))
        .collect();
    let h = OperatorMatrix::from_diag_single(d, &diag);
    EvolutionSpec {
        h_static: h,
        drives: vec![DriveTerm {
            lower_op: OperatorMatrix::lowering(d),
            shape: shape.clone(),
            t_start: 0.0,
            detuning_rad: 0.0,
        }],
        collapses: vec![],
        dt_pulse: 1e-4,
        dt_idle: 5e-3,
        sample_dt: None,
        frame: vec![ladder],
    }
}

/// (input, ideal output) pairs for the logical basis states plus the x-axis
/// eigenstate |+>. All three are needed to pin the full rotation: basis-state
/// magnitudes alone leave a residual pre-rotation about z unconstrained, and
/// a slightly detuned tilted pulse will happily exploit that freedom.
fn calibration_cases(d: usize, angle: RotationAngle) -> Vec<(DVector<C64>, DVector<C64>)> {
    let g = ket(&[d], &StateLabel::new(vec![LVL_G])).expect("basis ket");
    let f = ket(&[d], &StateLabel::new(vec![LVL_F])).expect("basis ket");
    let mi = C64::new(0.0, -1.0);
    let r = C64::new(1.0 / std::f64::consts::SQRT_2, 0.0);
    let plus = (&g + &f) * r;
    match angle {
        // R_x(pi): |g> -> -i|f>, |f> -> -i|g>, |+> -> -i|+>
        RotationAngle::Pi => vec![
            (g.clone(), &f * mi),
            (f.clone(), &g * mi),
            (plus.clone(), plus * mi),
        ],
        // R_x(pi/2): |g> -> (|g> - i|f>)/sqrt2, |f> -> (-i|g> + |f>)/sqrt2,
        // |+> -> e^{-i pi/4}|+>
        RotationAngle::PiHalf => vec![
            (g.clone(), (&g + &f * mi) * r),
            (f.clone(), (&g * mi + &f) * r),
            (
                plus.clone(),
                plus * C64::new(0.0, -std::f64::consts::FRAC_PI_4).exp(),
            ),
        ],
    }
}

/// Derivative-free simplex minimization in 3 parameters (standard
/// reflect/expand/contract/shrink with coefficients 1, 2, 1/2, 1/2).
fn nelder_mead(
    x0: [f64; 3],
    step: [f64; 3],
    max_iter: usize,
    f_tol: f64,
    f: &impl Fn(&[f64; 3]) -> f64,
) -> [f64; 3] {
    let mut pts: Vec<[f64; 3]> = vec![x0];
    for k in 0..3 {
        let mut p = x0;
        p[k] += step[k];
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    for _ in 0..max_iter {
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let (best, worst, second) = (order[0], order[3], order[2]);
        if (vals[worst] - vals[best]).abs() < f_tol {
            break;
        }
        let mut centroid = [0.0; 3];
        for &i in &order[..3] {
            for k in 0..3 {
                centroid[k] += pts[i][k] / 3.0;
            }
        }
        let blend = |a: f64, from: &[f64; 3], to: &[f64; 3]| -> [f64; 3] {
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = from[k] + a * (to[k] - from[k]);
            }
            p
        };
        let reflected = blend(2.0, &pts[worst], &centroid);
        let fr = f(&reflected);
        if fr < vals[best] {
            let expanded = blend(3.0, &pts[worst], &centroid);
            let fe = f(&expanded);
            if fe < fr {
                pts[worst] = expanded;
                vals[worst] = fe;
            } else {
                pts[worst] = reflected;
                vals[worst] = fr;
            }
        } else if fr < vals[second] {
            pts[worst] = reflected;
            vals[worst] = fr;
        } else {
            let contracted = blend(0.5, &pts[worst], &centroid);
            let fc = f(&contracted);
            if fc < vals[worst] {
                pts[worst] = contracted;
                vals[worst] = fc;
            } else {
                // shrink toward the best vertex
                let anchor = pts[best];
                for i in 0..4 {
                    if i != best {
                        pts[i] = blend(0.5, &pts[i], &anchor);
                        vals[i] = f(&pts[i]);
                    }
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..4 {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    pts[best]
}

/// Calibrate the two-photon g-f pulse of the given duration: coordinate
/// search over amplitude, carrier offset around omega_q - alpha_q/2 (Stark
/// cancellation), and DRAG weight, maximizing the mean noise-free fidelity
/// of the rotation applied to both logical basis states.
pub fn calibrate_gf_pulse(
    cfg: &DeviceConfig,
    duration: f64,
    angle: RotationAngle,
) -> Result<PulseShape> {
    cfg.validate().map_err(|e| PulseError::BadShape(e.to_string()))?;
    let d = cfg.data.levels;
    let alpha_rad = rad_per_us(cfg.data.alpha);
    let cases = calibration_cases(d, angle);

    let fidelity = |shape: &PulseShape| -> f64 {
        let spec = calibration_spec(cfg, shape);
        let mut acc = 0.0;
        for (psi0, target) in &cases {
            match engine::evolve_state_noiseless(&spec, psi0, (0.0, duration)) {
                Ok(psi) => acc += target.dotc(&psi).norm_sqr(),
                Err(_) => return 0.0,
            }
        }
        acc / cases.len() as f64
    };

    let base_carrier = -cfg.data.alpha / 2.0;
    let nominal = GateSet::nominal(cfg, duration);
    let a_nom = match angle {
        RotationAngle::Pi => nominal.pi.amplitude,
        RotationAngle::PiHalf => nominal.pi2.amplitude,
    };

    let mut best = PulseShape::drag(duration, a_nom, 0.0, base_carrier, 1.0, alpha_rad);
    let mut sweep: Vec<(f64, f64)> = Vec::new();

    // coarse amplitude bracket around the analytic estimate; refinement is
    // confined to the same bracket so the search cannot drift onto the
    // 2 pi + theta "long way around" branch (same unitary, more leakage)
    let (a_lo, a_hi) = (0.55 * a_nom, 1.45 * a_nom);
    let mut best_amp = a_nom;
    let mut best_fid = -1.0;
    for k in 0..17 {
        let a = a_nom * (0.55 + 0.05625 * k as f64);
        let mut s = best.clone();
        s.amplitude = a;
        let fid = fidelity(&s);
        sweep.push((a, fid));
        if fid > best_fid {
            best_fid = fid;
            best_amp = a;
        }
    }
    best.amplitude = best_amp;

    // joint simplex refinement over (amplitude, carrier, DRAG weight):
    // amplitude and carrier are strongly coupled through the drive-induced
    // Stark shift, so one-dimensional sweeps stall in a curved valley
    let lo = [a_lo, base_carrier - 12.0, 0.5];
    let hi = [a_hi, base_carrier + 12.0, 1.5];
    let objective = |x: &[f64; 3]| -> f64 {
        let mut s = best.clone();
        s.amplitude = x[0].clamp(lo[0], hi[0]);
        s.carrier = x[1].clamp(lo[1], hi[1]);
        s.drag_coeff = x[2].clamp(lo[2], hi[2]);
        1.0 - fidelity(&s)
    };
    let x = nelder_mead(
        [best_amp, base_carrier, 1.0],
        [0.04 * a_nom, 1.5, 0.12],
        300,
        1e-10,
        &objective,
    );
    best.amplitude = x[0].clamp(lo[0], hi[0]);
    best.carrier = x[1].clamp(lo[1], hi[1]);
    best.drag_coeff = x[2].clamp(lo[2], hi[2]);
    let final_fid = fidelity(&best);
    if final_fid < 0.999 {
        return Err(PulseError::CalibrationFailed {
            best: final_fid,
            sweep,
        });
    }
    Ok(best)
}

/// Calibrated pi pulse on the two-photon g-f transition.
pub fn calibrate_gf_pi(cfg: &DeviceConfig, duration: f64) -> Result<PulseShape> {
    calibrate_gf_pulse(cfg, duration, RotationAngle::Pi)
}

/// Exact logical z rotation: |0_L> picks up e^{-i beta/2}, |1_L> e^{+i beta/2}.
pub fn apply_logical_z(psi: &mut DVector<C64>, beta: f64) {
    psi[LVL_G] *= C64::new(0.0, -0.5 * beta).exp();
    psi[LVL_F] *= C64::new(0.0, 0.5 * beta).exp();
}

/// Calibrate the pi/2 pulse at a fixed carrier (shared with the pi pulse so
/// sequences stay phase coherent), searching amplitude, DRAG weight, and a
/// virtual-z correction that absorbs the Stark-phase mismatch between the
/// two drive strengths. Returns the shape and the total virtual-z angle,
/// half of which is applied before and half after the pulse.
pub fn calibrate_gf_pi2_at_carrier(
    cfg: &DeviceConfig,
    duration: f64,
    carrier: f64,
) -> Result<(PulseShape, f64)> {
    cfg.validate().map_err(|e| PulseError::BadShape(e.to_string()))?;
    let d = cfg.data.levels;
    let alpha_rad = rad_per_us(cfg.data.alpha);
    let cases = calibration_cases(d, RotationAngle::PiHalf);

    let fidelity = |shape: &PulseShape, z: f64| -> f64 {
        let spec = calibration_spec(cfg, shape);
        let mut acc = 0.0;
        for (psi0, target) in &cases {
            let mut input = psi0.clone();
            apply_logical_z(&mut input, 0.5 * z);
            match engine::evolve_state_noiseless(&spec, &input, (0.0, duration)) {
                Ok(mut psi) => {
                    apply_logical_z(&mut psi, 0.5 * z);
                    acc += target.dotc(&psi).norm_sqr();
                }
                Err(_) => return 0.0,
            }
        }
        acc / cases.len() as f64
    };

    // A time-symmetric drive acts on the logical pair as Rz(z0) Rx(theta) Rz(z0)
    // for some z0, so the phase of the evolved ground-state column pins the
    // symmetric z offset directly: z0 = pi/2 - arg(u_gg / u_fg).
    let z_estimate = |shape: &PulseShape| -> f64 {
        let spec = calibration_spec(cfg, shape);
        match engine::evolve_state_noiseless(&spec, &cases[0].0, (0.0, duration)) {
            Ok(psi) => {
                let ratio = psi[LVL_G] / psi[LVL_F];
                -2.0 * (std::f64::consts::FRAC_PI_2 - ratio.arg())
            }
            Err(_) => 0.0,
        }
    };

    let a_nom = GateSet::nominal(cfg, duration).pi2.amplitude;
    let (a_lo, a_hi) = (0.55 * a_nom, 1.45 * a_nom);
    let template = PulseShape::drag(duration, a_nom, 0.0, carrier, 1.0, alpha_rad);

    let mut sweep: Vec<(f64, f64)> = Vec::new();
    let mut best_amp = a_nom;
    let mut best_z = 0.0;
    let mut best_fid = -1.0;
    for k in 0..17 {
        let a = a_nom * (0.55 + 0.05625 * k as f64);
        let mut s = template.clone();
        s.amplitude = a;
        let z = z_estimate(&s);
        let fid = fidelity(&s, z);
        sweep.push((a, fid));
        if fid > best_fid {
            best_fid = fid;
            best_amp = a;
            best_z = z;
        }
    }

    let objective = |x: &[f64; 3]| -> f64 {
        let mut s = template.clone();
        s.amplitude = x[0].clamp(a_lo, a_hi);
        s.drag_coeff = x[1].clamp(0.5, 1.5);
        1.0 - fidelity(&s, x[2])
    };
    let x = nelder_mead(
        [best_amp, 1.0, best_z],
        [0.04 * a_nom, 0.12, 0.08],
        300,
        1e-10,
        &objective,
    );
    let mut best = template;
    best.amplitude = x[0].clamp(a_lo, a_hi);
    best.drag_coeff = x[1].clamp(0.5, 1.5);
    // Splitting z into halves makes the correction 4-pi periodic, so the
    // optimizer's value is kept as-is rather than wrapped.
    let z = x[2];
    let final_fid = fidelity(&best, z);
    if final_fid < 0.999 {
        return Err(PulseError::CalibrationFailed {
            best: final_fid,
            sweep,
        });
    }
    Ok((best, z))
}

/// Error function via Abramowitz-Stegun 7.1.26 (5-term), |err| < 1.5e-7;
/// plenty for amplitude seeding.
pub fn erf(x: f64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsys::LVL_E;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn test_device() -> DeviceConfig {
        use crate::device::{ResonatorParams, TransmonParams};
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

    #[test]
    fn envelope_peak_is_pure_in_phase() {
        let s = PulseShape::drag(0.08, 300.0, 0.0, -90.0, 1.0, rad_per_us(180.0));
        let e = drag_envelope(&s, 0.04).unwrap();
        assert_abs_diff_eq!(e.re, 300.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.im, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_drag_coeff_is_real_everywhere() {
        let s = PulseShape::drag(0.08, 300.0, 0.0, -90.0, 0.0, rad_per_us(180.0));
        for k in 0..=80 {
            let t = 0.001 * k as f64;
            assert_eq!(drag_envelope(&s, t).unwrap().im, 0.0);
        }
    }

    #[test]
    fn envelope_rejects_out_of_window_time() {
        let s = PulseShape::gaussian(0.08, 300.0, 0.0, 0.0);
        assert!(drag_envelope(&s, -0.001).is_err());
        assert!(drag_envelope(&s, 0.081).is_err());
    }

    #[test]
    fn gaussian_envelope_vanishes_at_both_edges() {
        let s = PulseShape::gaussian(0.08, 300.0, 0.0, 0.0);
        assert_abs_diff_eq!(drag_envelope(&s, 0.0).unwrap().re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(drag_envelope(&s, 0.08).unwrap().re, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_gaussian_integral_matches_quadrature() {
        // lifted Gaussian: A/(1-q) * [sigma sqrt(2 pi) erf(sqrt 2) - 4 sigma q],
        // q = e^{-2}
        let s = PulseShape::gaussian(0.08, 377.0, 0.0, 0.0);
        let sigma = 0.02;
        let q = (-2f64).exp();
        let closed = 377.0 / (1.0 - q)
            * (sigma * (2.0 * std::f64::consts::PI).sqrt() * erf(2f64.sqrt()) - 4.0 * sigma * q);
        let dt = 1e-4;
        let n = (0.08 / dt) as usize;
        let mut num = 0.0;
        for k in 0..=n {
            let t = k as f64 * dt;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            num += w * drag_envelope(&s, t).unwrap().re;
        }
        num *= dt;
        assert!(
            ((num - closed) / closed).abs() < 1e-6,
            "quadrature {num} vs closed form {closed}"
        );
    }

    #[test]
    fn clifford_table_gate_census() {
        let table = clifford_table();
        assert_eq!(table.len(), 24);
        let mut n_pi = 0;
        let mut n_pi2 = 0;
        let mut n_id = 0;
        let mut total = 0;
        for decomp in &table {
            for g in decomp {
                total += 1;
                if g.is_pi() {
                    n_pi += 1;
                } else if g.is_pi2() {
                    n_pi2 += 1;
                } else {
                    n_id += 1;
                }
            }
        }
        assert_eq!((n_pi, n_id, n_pi2), (8, 1, 36));
        assert_eq!(total, 45);
        assert_abs_diff_eq!(total as f64 / 24.0, 1.875, epsilon = 1e-12);
    }

    #[test]
    fn clifford_elements_distinct_and_closed() {
        let us: Vec<_> = (0..24).map(|i| clifford_unitary(i).unwrap()).collect();
        for i in 0..24 {
            for j in 0..24 {
                if i != j {
                    assert!(
                        !same_up_to_phase(&us[i], &us[j]),
                        "elements {i} and {j} coincide"
                    );
                }
            }
        }
        for i in 0..24 {
            for j in 0..24 {
                // panics internally if the product escapes the table
                clifford_product_index(i, j).unwrap();
            }
        }
    }

    #[test]
    fn clifford_inverse_recovers_identity() {
        for i in 0..24 {
            let inv = clifford_inverse_index(i).unwrap();
            let prod = clifford_product_index(i, inv).unwrap();
            assert_eq!(prod, 0, "element {i}: inverse {inv} gave product {prod}");
        }
    }

    #[test]
    fn random_word_recovery_under_ideal_unitaries() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = rng.gen_range(1..40);
            let mut acc = 0usize; // identity
            let mut u = Matrix2::<C64>::identity();
            for _ in 0..m {
                let c = rng.gen_range(0..24);
                acc = clifford_product_index(acc, c).unwrap();
                u = clifford_unitary(c).unwrap() * u;
            }
            let rec = clifford_inverse_index(acc).unwrap();
            let total = clifford_unitary(rec).unwrap() * u;
            // |<0| U |0>| = 1 up to phase
            assert_abs_diff_eq!(total[(0, 0)].norm(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(total[(1, 0)].norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn xy4_cycle_timing_is_exact() {
        let gs = GateSet::nominal(&test_device(), 0.08);
        let seq = compile_xy4_cycle(&gs, 3.52).unwrap();
        let n_pulses = seq
            .items
            .iter()
            .filter(|i| matches!(i, SequenceItem::Pulse { .. }))
            .count();
        let n_checks = seq
            .items
            .iter()
            .filter(|i| matches!(i, SequenceItem::ErasureCheck { .. }))
            .count();
        assert_eq!((n_pulses, n_checks), (4, 1));
        assert_eq!(seq.total_duration, 3.52);
        let sum_ns: u64 = seq.items.iter().map(|i| ns_grid(i.duration())).sum();
        assert_eq!(sum_ns, 3_520_000 / 1000);
    }

    #[test]
    fn xy4_alternates_x_and_y_axes() {
        let gs = GateSet::nominal(&test_device(), 0.08);
        let seq = compile_xy4_cycle(&gs, 3.52).unwrap();
        let phases: Vec<f64> = seq
            .items
            .iter()
            .filter_map(|i| match i {
                SequenceItem::Pulse { shape, .. } => Some(shape.phase),
                _ => None,
            })
            .collect();
        // X at carrier phase 0, Y at -pi/4 (two-photon axis doubling with
        // the squared-amplitude sign)
        assert_abs_diff_eq!(phases[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phases[1], -std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_abs_diff_eq!(phases[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phases[3], -std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn xy4_infeasible_cycle_is_an_error() {
        let gs = GateSet::nominal(&test_device(), 0.08);
        assert!(matches!(
            compile_xy4_cycle(&gs, 1.9),
            Err(PulseError::InfeasibleTiming { .. })
        ));
    }

    #[test]
    fn concatenated_cycles_add_durations() {
        let gs = GateSet::nominal(&test_device(), 0.08);
        let one = compile_xy4_cycle(&gs, 3.52).unwrap();
        let mut acc = one.clone();
        for _ in 0..4 {
            acc = acc.concat(&one);
        }
        assert_eq!(acc.total_duration, 5.0 * 3.52);
    }

    #[test]
    fn spin_locking_cycle_structure() {
        let gs = GateSet::nominal(&test_device(), 0.08);
        let seq = compile_spin_locking(&gs, 1.0, 4.8).unwrap();
        assert_eq!(seq.total_duration, 4.8);
        match &seq.items[1] {
            SequenceItem::Pulse { channel, shape } => {
                assert_eq!(channel, "lock");
                assert_eq!(shape.kind, PulseKind::Flat);
                assert_abs_diff_eq!(shape.amplitude, rad_per_us(1.0), epsilon = 1e-12);
            }
            other => panic!("expected lock pulse, got {other:?}"),
        }
    }

    #[test]
    fn schedule_text_is_line_per_item() {
        let gs = GateSet::nominal(&test_device(), 0.08);
        let seq = compile_xy4_cycle(&gs, 3.52).unwrap();
        let text = seq.schedule_text();
        assert_eq!(text.lines().count(), seq.items.len());
        assert!(text.lines().last().unwrap().contains("erasure_check"));
    }

    #[test]
    fn calibrated_pi_reaches_f_with_small_leakage() {
        let cfg = test_device();
        let shape = calibrate_gf_pi(&cfg, 0.08).unwrap();
        let spec = calibration_spec(&cfg, &shape);
        let psi0 = ket(&[4], &StateLabel::new(vec![LVL_G])).unwrap();
        let psi = engine::evolve_state_noiseless(&spec, &psi0, (0.0, 0.08)).unwrap();
        let p_f = psi[LVL_F].norm_sqr();
        assert!(p_f > 0.999, "pi pulse reached p_f = {p_f}");
        let p_e = psi[LVL_E].norm_sqr();
        assert!(p_e < 1e-3, "e leakage {p_e}");
    }

    #[test]
    fn half_amplitude_underrotates() {
        let cfg = test_device();
        let mut shape = calibrate_gf_pi(&cfg, 0.08).unwrap();
        shape.amplitude /= 2.0;
        let spec = calibration_spec(&cfg, &shape);
        let psi0 = ket(&[4], &StateLabel::new(vec![LVL_G])).unwrap();
        let psi = engine::evolve_state_noiseless(&spec, &psi0, (0.0, 0.08)).unwrap();
        let p_f = psi[LVL_F].norm_sqr();
        assert!(p_f < 0.6, "half amplitude still gave p_f = {p_f}");
    }
}
