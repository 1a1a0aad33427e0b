//! Experiment executors built on the pulse and evolution layers: logical
//! memory under dynamical decoupling with mid-circuit erasure checks,
//! randomized benchmarking over the two-photon gate set, the ancilla-mediated
//! parity experiment that heralds Bell pairs, and two-qubit state tomography.
//!
//! Everything here runs in the shared-carrier ladder frame the gate set was
//! calibrated in. In that frame the data pulses are exact logical rotations,
//! but the logical |1> level keeps a small residual precession whenever the
//! drive is off; executors undo it with virtual-z bookkeeping after every
//! idle, lock stretch and check slot, the same way an experiment's frame
//! tracking would. Trajectory protocols replay one compiled cycle across many
//! shots, so each drive window is integrated once into checkpointed no-jump
//! propagators and per-shot work reduces to matrix-vector products plus the
//! occasional jump refinement.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{rad_per_us, DeviceConfig, DeviceError};
use crate::engine::{
    advance_trajectory, apply_erasure_check_pure, apply_superop, effective_window_propagators,
    evolve_master_final, segment_superoperator, shot_rng, static_segment_superop, DriveTerm,
    EngineError, ErasureInstrument, EvolutionSpec, ShotRecord, TrajectoryState,
};
use crate::noise::{collapse_operators, CollapseOperator, NoiseError, NoiseParams};
use crate::pulses::{
    apply_logical_z, clifford_inverse_index, clifford_product_index, clifford_table, gate_unitary,
    ns_grid, Gate, GateSet, PulseError, PulseSequence, SequenceItem,
};
use crate::qsys::{ket, DensityMatrix, OperatorMatrix, QsysError, StateLabel, LVL_E, LVL_F, LVL_G};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad protocol config: {0}")]
    BadConfig(String),
    #[error("every shot was discarded before completing round 1; nothing to analyze")]
    AllShotsDiscarded,
    #[error("tomography needs all nine two-qubit measurement bases, missing: {0}")]
    MissingBases(String),
    #[error("numerical failure: {0}")]
    Numerics(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Pulse(#[from] PulseError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Qsys(#[from] QsysError),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

// ---------------------------------------------------------------------------
// frame bookkeeping

/// Residual precession rate of |1_L> relative to |0_L> in the shared-carrier
/// ladder frame, rad/us. An idle of length tau advances the logical phase by
/// `rate * tau`; executors cancel it with a virtual z after every segment
/// that is not a calibrated data pulse.
pub fn logical_frame_rate(cfg: &DeviceConfig, carrier: f64) -> f64 {
    let two_photon = 2.0 * (cfg.data.omega + carrier);
    rad_per_us(cfg.data.bare_energy(2) - two_photon)
}

/// Diagonal ladder-frame Hamiltonian of the data transmon: level n rotates at
/// its bare energy minus n carrier quanta.
fn ladder_hamiltonian(cfg: &DeviceConfig, carrier: f64) -> OperatorMatrix {
    let d = cfg.data.levels;
    let diag: Vec<f64> = (0..d)
        .map(|n| rad_per_us(cfg.data.bare_energy(n) - n as f64 * (cfg.data.omega + carrier)))
        .collect();
    OperatorMatrix::from_diag_single(d, &diag)
}

/// Identity-padded embedding of a logical 2x2 unitary on the (|0_L>, |1_L>)
/// pair of a d-level transmon.
fn embed_logical(d: usize, u: &Matrix2<C64>) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(d, d);
    m[(LVL_G, LVL_G)] = u[(0, 0)];
    m[(LVL_G, LVL_F)] = u[(0, 1)];
    m[(LVL_F, LVL_G)] = u[(1, 0)];
    m[(LVL_F, LVL_F)] = u[(1, 1)];
    m
}

/// Diagonal logical-z unitary on a d-level transmon: |0_L> picks up
/// exp(-i beta/2), |1_L> picks up exp(+i beta/2), other levels are untouched.
fn logical_z_matrix(d: usize, beta: f64) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(d, d);
    m[(LVL_G, LVL_G)] = C64::new(0.0, -0.5 * beta).exp();
    m[(LVL_F, LVL_F)] = C64::new(0.0, 0.5 * beta).exp();
    m
}

/// Column-stacking superoperator of conjugation by a unitary.
fn unitary_superop(u: &DMatrix<C64>) -> DMatrix<C64> {
    u.conjugate().kronecker(u)
}

// ---------------------------------------------------------------------------
// initial states

/// The six logical preparations used by memory runs. The +Z pole is the
/// excited code state |1_L> = |f>; -Z is |0_L> = |g>. Equator states are the
/// equal superpositions with the usual phase convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CardinalState {
    PlusZ,
    MinusZ,
    PlusX,
    MinusX,
    PlusY,
    MinusY,
}

pub const CARDINAL_STATES: [CardinalState; 6] = [
    CardinalState::PlusZ,
    CardinalState::MinusZ,
    CardinalState::PlusX,
    CardinalState::MinusX,
    CardinalState::PlusY,
    CardinalState::MinusY,
];

impl CardinalState {
    /// Logical amplitudes (c0 on |0_L>, c1 on |1_L>).
    pub fn logical_amplitudes(self) -> (C64, C64) {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            CardinalState::PlusZ => (C64::ZERO, C64::ONE),
            CardinalState::MinusZ => (C64::ONE, C64::ZERO),
            CardinalState::PlusX => (C64::new(s, 0.0), C64::new(s, 0.0)),
            CardinalState::MinusX => (C64::new(s, 0.0), C64::new(-s, 0.0)),
            CardinalState::PlusY => (C64::new(s, 0.0), C64::new(0.0, s)),
            CardinalState::MinusY => (C64::new(s, 0.0), C64::new(0.0, -s)),
        }
    }

    pub fn opposite(self) -> CardinalState {
        match self {
            CardinalState::PlusZ => CardinalState::MinusZ,
            CardinalState::MinusZ => CardinalState::PlusZ,
            CardinalState::PlusX => CardinalState::MinusX,
            CardinalState::MinusX => CardinalState::PlusX,
            CardinalState::PlusY => CardinalState::MinusY,
            CardinalState::MinusY => CardinalState::PlusY,
        }
    }

    /// Embedded d-level ket of the preparation.
    pub fn ket(self, d: usize) -> DVector<C64> {
        let (c0, c1) = self.logical_amplitudes();
        let mut v = DVector::zeros(d);
        v[LVL_G] = c0;
        v[LVL_F] = c1;
        v
    }
}

// ---------------------------------------------------------------------------
// config types

/// Dynamical-decoupling scheme applied inside every memory cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DdScheme {
    Xy4,
    #[serde(rename = "spinlock")]
    SpinLock,
    None,
}

/// Logical-memory run: prepare a cardinal state, repeat one decoupling cycle
/// ending in an erasure-check slot, discard a shot at its first flag, and
/// record populations round by round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LifetimeConfig {
    pub initial_state: CardinalState,
    pub dd: DdScheme,
    /// Cycle length, us (pulses plus idles plus the check slot).
    pub cycle_time: f64,
    pub n_rounds_max: usize,
    pub n_shots: usize,
    pub instrument: ErasureInstrument,
    /// Lock Rabi frequency for the spin-locking scheme, MHz.
    pub lock_rabi: f64,
    /// With checks disabled the slot time is still spent but no instrument
    /// fires, giving the uninterrupted reference the post-selected run is
    /// compared against.
    pub checks_enabled: bool,
}

impl LifetimeConfig {
    pub fn new(initial_state: CardinalState, dd: DdScheme, cycle_time: f64) -> Self {
        LifetimeConfig {
            initial_state,
            dd,
            cycle_time,
            n_rounds_max: 40,
            n_shots: 2000,
            instrument: ErasureInstrument::standard(),
            lock_rabi: 1.0,
            checks_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_time > 0.0) {
            return Err(ProtocolError::BadConfig(format!(
                "cycle_time must be positive, got {}",
                self.cycle_time
            )));
        }
        if self.n_rounds_max == 0 {
            return Err(ProtocolError::BadConfig("n_rounds_max must be at least 1".into()));
        }
        if self.n_shots == 0 {
            return Err(ProtocolError::BadConfig("n_shots must be at least 1".into()));
        }
        if self.lock_rabi < 0.0 {
            return Err(ProtocolError::BadConfig(format!(
                "lock_rabi must be nonnegative, got {}",
                self.lock_rabi
            )));
        }
        self.instrument.validate()?;
        Ok(())
    }
}

/// Interleaved-check randomized benchmarking over the 24 logical Cliffords.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbConfig {
    /// Word lengths (number of random Cliffords before the recovery), strictly
    /// increasing.
    pub sequence_lengths: Vec<usize>,
    /// Random words per length.
    pub n_randomizations: usize,
    /// A check fires after every this many word Cliffords.
    pub check_every: usize,
    /// Wall time budgeted per check-period: the slot idles for whatever this
    /// leaves after `check_every` average-length Cliffords.
    pub cycle_time: f64,
    /// Also produce the post-selected curve (the raw curve always runs).
    pub post_select: bool,
    pub instrument: ErasureInstrument,
    /// Readout samples per word; 0 reports exact probabilities instead of
    /// sampled estimates.
    pub n_shots_per_length: usize,
    /// Replace calibrated pulses by exact logical rotations (decoherence still
    /// acts over each gate's duration). Useful for isolating incoherent error.
    pub ideal_gates: bool,
}

impl RbConfig {
    pub fn new(sequence_lengths: Vec<usize>, n_randomizations: usize) -> Self {
        RbConfig {
            sequence_lengths,
            n_randomizations,
            check_every: 29,
            cycle_time: 5.04,
            post_select: true,
            instrument: benchmarking_instrument(),
            n_shots_per_length: 1000,
            ideal_gates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence_lengths.is_empty() {
            return Err(ProtocolError::BadConfig("sequence_lengths is empty".into()));
        }
        if self.sequence_lengths[0] == 0 {
            return Err(ProtocolError::BadConfig("sequence lengths start at 1".into()));
        }
        if !self.sequence_lengths.windows(2).all(|w| w[0] < w[1]) {
            return Err(ProtocolError::BadConfig(
                "sequence_lengths must be strictly increasing".into(),
            ));
        }
        if self.n_randomizations == 0 {
            return Err(ProtocolError::BadConfig("n_randomizations must be at least 1".into()));
        }
        if self.check_every == 0 {
            return Err(ProtocolError::BadConfig("check_every must be at least 1".into()));
        }
        if !(self.cycle_time > 0.0) {
            return Err(ProtocolError::BadConfig(format!(
                "cycle_time must be positive, got {}",
                self.cycle_time
            )));
        }
        self.instrument.validate()?;
        Ok(())
    }
}

/// Operating point of the checks used while benchmarking: standard false-flag
/// rates, but a raised false-negative total of which one third stays in the
/// detector level and remains catchable on the following check.
pub fn benchmarking_instrument() -> ErasureInstrument {
    let fn_total = 0.17;
    ErasureInstrument {
        p_false_pos_0l: 0.024,
        p_false_pos_1l: 0.027,
        p_fn_to_0l: 2.0 / 3.0 * fn_total,
        p_fn_to_1l: 0.0,
        p_fn_stay_e: fn_total / 3.0,
        reset: true,
    }
}

/// Ancilla-mediated parity interaction: while the data qubit sits in |0_L>
/// the ancilla Rabi-flops at `omega_eff`; the code levels are split by the
/// ac-Stark mismatch `delta_ac`. A pi of ancilla rotation realizes the
/// heralding CNOT.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrParams {
    /// Conditional ancilla Rabi frequency, MHz.
    pub omega_eff: f64,
    /// Differential code-level Stark shift during the interaction, MHz.
    pub delta_ac: f64,
    /// Interaction time, us.
    pub duration: f64,
    /// Storage gap between heralding and the erasure checks when the checked
    /// variant runs, us.
    pub erasure_wait: f64,
    /// Swap the two herald labels when reporting, for wirings whose ancilla
    /// readout convention is inverted.
    pub relabel: bool,
}

impl CrParams {
    /// A 400 ns CNOT: half a Rabi period at 1.25 MHz.
    pub fn cnot() -> Self {
        CrParams {
            omega_eff: 1.25,
            delta_ac: 0.4,
            duration: 0.4,
            erasure_wait: 1.3,
            relabel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_eff > 0.0) {
            return Err(ProtocolError::BadConfig(format!(
                "omega_eff must be positive, got {}",
                self.omega_eff
            )));
        }
        if !(self.duration > 0.0) {
            return Err(ProtocolError::BadConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.erasure_wait < 0.0 {
            return Err(ProtocolError::BadConfig(format!(
                "erasure_wait must be nonnegative, got {}",
                self.erasure_wait
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// compiled cycles for trajectory protocols

const DATA_CHECKPOINT: f64 = 1e-3;
const LOCK_CHECKPOINT: f64 = 5e-3;
const LOCK_DT_PULSE: f64 = 1e-3;

enum Step {
    /// Undriven stretch; the evolution engine's closed-form diagonal path.
    Idle { spec: EvolutionSpec, dur: f64 },
    /// Drive window replayed through checkpointed no-jump propagators. On a
    /// threshold crossing the state rolls back one checkpoint and the full
    /// integrator refines the jump.
    Window {
        spec: EvolutionSpec,
        props: Vec<DMatrix<C64>>,
        sub: f64,
        dur: f64,
    },
    /// Virtual-z bookkeeping; free.
    Phase { beta: f64 },
    /// The erasure instrument fires.
    Check,
}

/// One decoupling cycle lowered to executor steps, shared across shots.
pub struct CompiledCycle {
    steps: Vec<(f64, Step)>,
    pub duration: f64,
    dim: usize,
}

/// Lower a pulse sequence into executor steps. Frame phases are inserted
/// after every idle, lock stretch and check slot; calibrated data windows
/// need none because their unitaries were pinned in this frame. Checks are
/// compiled only when `include_checks` is set — the raw variant keeps the
/// slot time so both variants share a schedule.
pub fn compile_cycle(
    seq: &PulseSequence,
    cfg: &DeviceConfig,
    gs: &GateSet,
    noise: &NoiseParams,
    include_checks: bool,
) -> Result<CompiledCycle> {
    cfg.validate()?;
    let d = cfg.data.levels;
    let carrier = gs.pi.carrier;
    let eta = logical_frame_rate(cfg, carrier);
    let collapses = collapse_operators(noise, &[d])?;
    let h_idle = ladder_hamiltonian(cfg, carrier);
    let base_spec = |drives: Vec<DriveTerm>, dt_pulse: f64| EvolutionSpec {
        h_static: h_idle.clone(),
        drives,
        collapses: collapses.clone(),
        dt_pulse,
        dt_idle: 5e-3,
        sample_dt: None,
        frame: vec![cfg.data.omega + carrier],
    };

    let mut steps = Vec::new();
    let mut t = 0.0;
    let push_idle = |steps: &mut Vec<(f64, Step)>, t: &mut f64, dur: f64| {
        if dur > 0.0 {
            steps.push((*t, Step::Idle { spec: base_spec(vec![], 1e-4), dur }));
            steps.push((*t, Step::Phase { beta: eta * dur }));
            *t += dur;
        }
    };
    for item in &seq.items {
        match item {
            SequenceItem::Delay { duration } => push_idle(&mut steps, &mut t, *duration),
            SequenceItem::Readout { duration } => push_idle(&mut steps, &mut t, *duration),
            SequenceItem::VirtualZ { angle } => steps.push((t, Step::Phase { beta: *angle })),
            SequenceItem::ErasureCheck { slot } => {
                push_idle(&mut steps, &mut t, *slot);
                if include_checks {
                    steps.push((t, Step::Check));
                }
            }
            SequenceItem::Pulse { channel, shape } => {
                let dur = shape.duration;
                let (drive, dt_pulse, checkpoint, corrected) = if channel == "data" {
                    let drive = DriveTerm {
                        lower_op: OperatorMatrix::lowering(d),
                        shape: shape.clone(),
                        t_start: 0.0,
                        detuning_rad: 0.0,
                    };
                    (drive, 1e-4, DATA_CHECKPOINT, false)
                } else {
                    // lock drive: resonant logical x-axis drive, written in
                    // the ladder frame as a detuned |0_L><1_L| coupling
                    let drive = DriveTerm {
                        lower_op: OperatorMatrix::projector_pair(d, LVL_G, LVL_F),
                        shape: shape.clone(),
                        t_start: 0.0,
                        detuning_rad: eta,
                    };
                    (drive, LOCK_DT_PULSE, LOCK_CHECKPOINT, true)
                };
                let spec = base_spec(vec![drive], dt_pulse);
                let n_seg = (dur / checkpoint).round().max(1.0) as usize;
                let props = effective_window_propagators(&spec, (0.0, dur), n_seg)?;
                let sub = dur / n_seg as f64;
                steps.push((t, Step::Window { spec, props, sub, dur }));
                if corrected {
                    steps.push((t, Step::Phase { beta: eta * dur }));
                }
                t += dur;
            }
        }
    }
    Ok(CompiledCycle { steps, duration: seq.total_duration, dim: d })
}

impl CompiledCycle {
    /// Run one cycle on a trajectory. Jump timestamps are made absolute with
    /// `t_abs` as the cycle's start time. Returns whether any check flagged
    /// (None when the cycle carries no checks).
    pub fn execute(
        &self,
        traj: &mut TrajectoryState,
        inst: &ErasureInstrument,
        rng: &mut impl Rng,
        t_abs: f64,
    ) -> Result<Option<bool>> {
        let mut flagged: Option<bool> = None;
        for (offset, step) in &self.steps {
            match step {
                Step::Phase { beta } => apply_logical_z(&mut traj.psi, *beta),
                Step::Idle { spec, dur } => {
                    let mark = traj.jumps.len();
                    advance_trajectory(spec, traj, (0.0, *dur), rng)?;
                    for j in traj.jumps[mark..].iter_mut() {
                        j.0 += t_abs + offset;
                    }
                }
                Step::Window { spec, props, sub, dur } => {
                    let mark = traj.jumps.len();
                    let mut refined = false;
                    for (k, p) in props.iter().enumerate() {
                        let next = p * &traj.psi;
                        if next.norm_squared() <= traj.r_next {
                            // crossing inside checkpoint k: replay it exactly
                            advance_trajectory(spec, traj, (k as f64 * sub, *dur), rng)?;
                            refined = true;
                            break;
                        }
                        traj.psi = next;
                    }
                    let _ = refined;
                    for j in traj.jumps[mark..].iter_mut() {
                        j.0 += t_abs + offset;
                    }
                }
                Step::Check => {
                    let flag = apply_erasure_check_pure(&mut traj.psi, inst, rng)?;
                    // the instrument renormalized the state; restart the
                    // waiting-time threshold
                    traj.r_next = rng.gen::<f64>();
                    flagged = Some(flagged.unwrap_or(false) || flag);
                }
            }
        }
        Ok(flagged)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

// ---------------------------------------------------------------------------
// logical memory

/// Ensemble statistics of one memory round (1-based `round`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Elapsed storage time at the end of the round, us.
    pub time: f64,
    /// Shots still unflagged after this round's check.
    pub alive: usize,
    pub survival: f64,
    /// Mean level populations (g, e, f, h) over surviving shots.
    pub pops: [f64; 4],
    /// Mean projection difference onto the prepared state minus its
    /// antipode, over surviving shots.
    pub polarization: f64,
}

#[derive(Debug, Clone)]
pub struct LifetimeResult {
    pub rounds: Vec<RoundStats>,
    pub records: Vec<ShotRecord>,
    pub cycle_time: f64,
}

fn memory_sequence(cfg: &LifetimeConfig, gs: &GateSet) -> Result<PulseSequence> {
    match cfg.dd {
        DdScheme::Xy4 => Ok(crate::pulses::compile_xy4_cycle(gs, cfg.cycle_time)?),
        DdScheme::SpinLock => Ok(crate::pulses::compile_spin_locking(
            gs,
            cfg.lock_rabi,
            cfg.cycle_time,
        )?),
        DdScheme::None => {
            let idle = cfg.cycle_time - gs.check_slot;
            if idle <= 0.0 {
                return Err(ProtocolError::BadConfig(format!(
                    "cycle_time {} does not clear the {} us check slot",
                    cfg.cycle_time, gs.check_slot
                )));
            }
            Ok(PulseSequence::new(vec![
                SequenceItem::Delay { duration: ns_grid(idle) as f64 / 1000.0 },
                SequenceItem::ErasureCheck { slot: gs.check_slot },
            ]))
        }
    }
}

/// Run the logical-memory protocol. Shots evolve as quantum-jump
/// trajectories through the compiled cycle; a flagged check discards the
/// shot at that round. Survivors end with an ideal three-outcome logical
/// readout (0 = |0_L>, 1 = detector level, 2 = |1_L>, higher levels folded
/// into |1_L>'s bin).
pub fn run_lifetime(
    cfg: &LifetimeConfig,
    device: &DeviceConfig,
    gs: &GateSet,
    noise: &NoiseParams,
    seed: u64,
) -> Result<LifetimeResult> {
    use rayon::prelude::*;
    cfg.validate()?;
    let seq = memory_sequence(cfg, gs)?;
    let cycle = compile_cycle(&seq, device, gs, noise, cfg.checks_enabled)?;
    let d = cycle.dim();
    let psi0 = cfg.initial_state.ket(d);
    let plus = cfg.initial_state.ket(d);
    let minus = cfg.initial_state.opposite().ket(d);

    struct ShotOut {
        record: ShotRecord,
        // per completed round: (pops, polarization)
        samples: Vec<([f64; 4], f64)>,
    }

    let shots: Vec<ShotOut> = (0..cfg.n_shots)
        .into_par_iter()
        .map(|shot| -> Result<ShotOut> {
            let mut rng = shot_rng(seed, shot as u64);
            let mut traj = TrajectoryState::new(psi0.clone(), &mut rng);
            let mut flags = Vec::new();
            let mut samples = Vec::new();
            let mut survived = true;
            for round in 0..cfg.n_rounds_max {
                let t_abs = round as f64 * cycle.duration;
                let flag = cycle
                    .execute(&mut traj, &cfg.instrument, &mut rng, t_abs)?
                    .unwrap_or(false);
                flags.push(flag);
                if flag {
                    survived = false;
                    break;
                }
                let psi = traj.normalized();
                let mut pops = [0.0; 4];
                for (lvl, p) in pops.iter_mut().enumerate().take(d.min(4)) {
                    *p = psi[lvl].norm_sqr();
                }
                let pol = plus.dotc(&psi).norm_sqr() - minus.dotc(&psi).norm_sqr();
                samples.push((pops, pol));
            }
            let final_assignment = if survived {
                let psi = traj.normalized();
                let mut x = rng.gen::<f64>();
                let mut level = d - 1;
                for j in 0..d {
                    let p = psi[j].norm_sqr();
                    if x < p {
                        level = j;
                        break;
                    }
                    x -= p;
                }
                Some(match level {
                    LVL_G => 0u8,
                    LVL_E => 1u8,
                    _ => 2u8,
                })
            } else {
                None
            };
            Ok(ShotOut {
                record: ShotRecord { shot: shot as u64, flags, final_assignment, survived },
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rounds = Vec::with_capacity(cfg.n_rounds_max);
    for r in 0..cfg.n_rounds_max {
        let mut alive = 0usize;
        let mut pops = [0.0; 4];
        let mut pol = 0.0;
        for s in &shots {
            if let Some((p, q)) = s.samples.get(r) {
                alive += 1;
                for k in 0..4 {
                    pops[k] += p[k];
                }
                pol += q;
            }
        }
        if alive > 0 {
            for p in pops.iter_mut() {
                *p /= alive as f64;
            }
            pol /= alive as f64;
        }
        rounds.push(RoundStats {
            round: r + 1,
            time: (r + 1) as f64 * cycle.duration,
            alive,
            survival: alive as f64 / cfg.n_shots as f64,
            pops,
            polarization: pol,
        });
    }
    if rounds[0].alive == 0 {
        return Err(ProtocolError::AllShotsDiscarded);
    }
    let records = shots.into_iter().map(|s| s.record).collect();
    Ok(LifetimeResult { rounds, records, cycle_time: cycle.duration })
}

// ---------------------------------------------------------------------------
// unflagged-check channel

/// Density-matrix action of one erasure check conditioned on *no* flag,
/// matching the trajectory instrument branch by branch: detector-level weight
/// is rerouted by the false-negative splits, code weight survives with the
/// false-positive complement, coherence inside the code space is untouched.
/// The trace of the returned matrix over the input trace is the no-flag
/// probability.
pub fn unflagged_check_channel(rho: &DMatrix<C64>, inst: &ErasureInstrument) -> DMatrix<C64> {
    let d = rho.nrows();
    let p_e = rho[(LVL_E, LVL_E)].re.max(0.0);
    let mut out = rho.clone();
    for k in 0..d {
        out[(LVL_E, k)] = C64::ZERO;
        out[(k, LVL_E)] = C64::ZERO;
    }
    let w_code = out.trace().re.max(0.0);
    if w_code > 0.0 {
        let p0 = out[(LVL_G, LVL_G)].re.max(0.0);
        let p1 = out[(LVL_F, LVL_F)].re.max(0.0);
        let p_flag = (p0 * inst.p_false_pos_0l + p1 * inst.p_false_pos_1l) / w_code;
        out *= C64::new(1.0 - p_flag, 0.0);
    }
    out[(LVL_G, LVL_G)] += C64::new(inst.p_fn_to_0l * p_e, 0.0);
    out[(LVL_F, LVL_F)] += C64::new(inst.p_fn_to_1l * p_e, 0.0);
    out[(LVL_E, LVL_E)] += C64::new(inst.p_fn_stay_e * p_e, 0.0);
    out
}

/// Two-subsystem variant acting on one transmon of a joint state; the other
/// subsystem's correlations ride along unchanged.
pub fn unflagged_check_channel_sub(
    rho: &DMatrix<C64>,
    dims: &[usize],
    sub: usize,
    inst: &ErasureInstrument,
) -> Result<DMatrix<C64>> {
    if dims.len() != 2 || sub > 1 {
        return Err(ProtocolError::BadConfig(
            "subsystem check channel expects two subsystems".into(),
        ));
    }
    let (d0, d1) = (dims[0], dims[1]);
    if rho.nrows() != d0 * d1 {
        return Err(ProtocolError::BadConfig("state does not match dims".into()));
    }
    let level = |flat: usize| -> usize {
        if sub == 0 {
            flat / d1
        } else {
            flat % d1
        }
    };
    let compose = |lvl: usize, other: usize| -> usize {
        if sub == 0 {
            lvl * d1 + other
        } else {
            other * d1 + lvl
        }
    };
    let n = d0 * d1;
    let d_other = if sub == 0 { d1 } else { d0 };

    // code block: zero the checked transmon's detector level
    let mut out = rho.clone();
    for r in 0..n {
        for c in 0..n {
            if level(r) == LVL_E || level(c) == LVL_E {
                out[(r, c)] = C64::ZERO;
            }
        }
    }
    let mut w_code = 0.0;
    let mut p0 = 0.0;
    let mut p1 = 0.0;
    for k in 0..n {
        let p = rho[(k, k)].re.max(0.0);
        match level(k) {
            LVL_E => {}
            LVL_G => {
                p0 += p;
                w_code += p;
            }
            LVL_F => {
                p1 += p;
                w_code += p;
            }
            _ => w_code += p,
        }
    }
    if w_code > 0.0 {
        let p_flag = (p0 * inst.p_false_pos_0l + p1 * inst.p_false_pos_1l) / w_code;
        out *= C64::new(1.0 - p_flag, 0.0);
    }
    // detector-level weight rerouted, conditioned state of the partner kept
    for ro in 0..d_other {
        for co in 0..d_other {
            let b = rho[(compose(LVL_E, ro), compose(LVL_E, co))];
            out[(compose(LVL_G, ro), compose(LVL_G, co))] += b * inst.p_fn_to_0l;
            out[(compose(LVL_F, ro), compose(LVL_F, co))] += b * inst.p_fn_to_1l;
            out[(compose(LVL_E, ro), compose(LVL_E, co))] += b * inst.p_fn_stay_e;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gate-level channels

/// One-gate channels of the calibrated set as superoperators, in the fixed
/// gate order (I, Xpi, Ypi, Xpi/2, X-pi/2, Ypi/2, Y-pi/2).
fn gate_superops(
    cfg: &DeviceConfig,
    gs: &GateSet,
    noise: &NoiseParams,
    ideal_gates: bool,
) -> Result<Vec<DMatrix<C64>>> {
    let d = cfg.data.levels;
    let carrier = gs.pi.carrier;
    let eta = logical_frame_rate(cfg, carrier);
    let collapses = collapse_operators(noise, &[d])?;
    let h_idle = ladder_hamiltonian(cfg, carrier);
    let dur = gs.gate_duration();
    let corrected_idle = {
        let s = static_segment_superop(&h_idle.m, &collapses, dur);
        unitary_superop(&logical_z_matrix(d, eta * dur)) * s
    };
    let mut out = Vec::with_capacity(ALL_GATES.len());
    for &g in ALL_GATES.iter() {
        if g == Gate::I {
            out.push(corrected_idle.clone());
            continue;
        }
        if ideal_gates {
            let u = unitary_superop(&embed_logical(d, &gate_unitary(g)));
            out.push(u * &corrected_idle);
            continue;
        }
        let mut s = DMatrix::<C64>::identity(d * d, d * d);
        for item in gs.items_for(g) {
            match item {
                SequenceItem::VirtualZ { angle } => {
                    s = unitary_superop(&logical_z_matrix(d, angle)) * s;
                }
                SequenceItem::Pulse { shape, .. } => {
                    let spec = EvolutionSpec {
                        h_static: ladder_hamiltonian(cfg, shape.carrier),
                        drives: vec![DriveTerm {
                            lower_op: OperatorMatrix::lowering(d),
                            shape: shape.clone(),
                            t_start: 0.0,
                            detuning_rad: 0.0,
                        }],
                        collapses: collapses.clone(),
                        dt_pulse: 1e-4,
                        dt_idle: 5e-3,
                        sample_dt: None,
                        frame: vec![cfg.data.omega + shape.carrier],
                    };
                    let win = segment_superoperator(&spec, (0.0, shape.duration))?;
                    s = win * s;
                }
                other => {
                    return Err(ProtocolError::BadConfig(format!(
                        "unexpected item {:?} in a gate decomposition",
                        other.duration()
                    )))
                }
            }
        }
        out.push(s);
    }
    Ok(out)
}

const ALL_GATES: [Gate; 7] = [
    Gate::I,
    Gate::XPi,
    Gate::YPi,
    Gate::XPi2,
    Gate::XMPi2,
    Gate::YPi2,
    Gate::YMPi2,
];

fn gate_order_index(g: Gate) -> usize {
    ALL_GATES.iter().position(|&x| x == g).expect("gate in fixed order")
}

/// Per-Clifford channels composed from the gate channels per the standard
/// decomposition table, plus the group's multiplication and inverse tables.
struct CliffordChannels {
    sops: Vec<DMatrix<C64>>,
    /// Physical gates per Clifford (identity counts; it idles one duration).
    gate_counts: Vec<usize>,
    product: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

fn clifford_channels(gate_sops: &[DMatrix<C64>]) -> Result<CliffordChannels> {
    let table = clifford_table();
    let dim = gate_sops[0].nrows();
    let mut sops = Vec::with_capacity(table.len());
    let mut gate_counts = Vec::with_capacity(table.len());
    for decomp in &table {
        let mut s = DMatrix::<C64>::identity(dim, dim);
        for &g in decomp {
            s = &gate_sops[gate_order_index(g)] * s;
        }
        sops.push(s);
        gate_counts.push(decomp.len());
    }
    let n = table.len();
    let mut product = vec![vec![0usize; n]; n];
    let mut inverse = vec![0usize; n];
    for a in 0..n {
        inverse[a] = clifford_inverse_index(a)?;
        for b in 0..n {
            product[a][b] = clifford_product_index(a, b)?;
        }
    }
    Ok(CliffordChannels { sops, gate_counts, product, inverse })
}

// ---------------------------------------------------------------------------
// randomized benchmarking

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbCurve {
    pub lengths: Vec<usize>,
    /// Mean probability of reading |0_L> among code-space outcomes, per
    /// length.
    pub mean_return: Vec<f64>,
    /// Per-word return estimates behind each mean.
    pub per_word: Vec<Vec<f64>>,
    /// Mean fraction of shots kept (1 for the raw curve).
    pub survival: Vec<f64>,
    /// Mean final three-outcome distribution (|0_L>, detector, |1_L>+above).
    pub histogram: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct RbResult {
    pub raw: RbCurve,
    pub post_selected: Option<RbCurve>,
}

struct WordOutcome {
    ret: f64,
    survival: f64,
    hist: [f64; 3],
}

/// Evolve one sampled word and report either exact probabilities or sampled
/// estimates. `slot` pairs the check channel with its idle; None runs the
/// uninterrupted raw variant.
#[allow(clippy::too_many_arguments)]
fn run_rb_word(
    word: &[usize],
    ch: &CliffordChannels,
    slot_sop: &DMatrix<C64>,
    inst: &ErasureInstrument,
    check_every: usize,
    with_checks: bool,
    n_shots: usize,
    d: usize,
    rng: &mut impl Rng,
) -> WordOutcome {
    // recovery = inverse of the word product
    let mut net = 0usize;
    for &c in word {
        net = ch.product[net][c];
    }
    let rec = ch.inverse[net];

    let mut rho = DMatrix::<C64>::zeros(d, d);
    rho[(LVL_G, LVL_G)] = C64::ONE;
    let mut survival = 1.0;
    for (k, &c) in word.iter().enumerate() {
        rho = apply_superop(&ch.sops[c], &rho);
        if with_checks && (k + 1) % check_every == 0 {
            rho = apply_superop(slot_sop, &rho);
            let kept = unflagged_check_channel(&rho, inst);
            let w_in = rho.trace().re.max(1e-300);
            let w_out = kept.trace().re.max(0.0);
            let kept_frac = (w_out / w_in).clamp(0.0, 1.0);
            survival *= kept_frac;
            rho = if w_out > 0.0 { kept / C64::new(w_out, 0.0) } else { kept };
        }
    }
    rho = apply_superop(&ch.sops[rec], &rho);

    let tr = rho.trace().re.max(1e-300);
    let p_g = (rho[(LVL_G, LVL_G)].re / tr).clamp(0.0, 1.0);
    let p_e = (rho[(LVL_E, LVL_E)].re / tr).clamp(0.0, 1.0);
    let p_rest = (1.0 - p_g - p_e).clamp(0.0, 1.0);
    let hist = [p_g, p_e, p_rest];
    let p_code = p_g + p_rest;
    let ret_exact = if p_code > 0.0 { p_g / p_code } else { 0.0 };

    if n_shots == 0 {
        return WordOutcome { ret: ret_exact, survival, hist };
    }
    let binom = |n: usize, p: f64, rng: &mut dyn rand::RngCore| -> usize {
        let mut k = 0;
        for _ in 0..n {
            if rng.gen::<f64>() < p {
                k += 1;
            }
        }
        k
    };
    let n_kept = if with_checks { binom(n_shots, survival, rng) } else { n_shots };
    let n_e = binom(n_kept, p_e, rng);
    let n_code = n_kept - n_e;
    let n_zero = binom(n_code, ret_exact, rng);
    let ret = if n_code > 0 { n_zero as f64 / n_code as f64 } else { ret_exact };
    WordOutcome { ret, survival, hist }
}

/// Randomized benchmarking with interleaved erasure checks. Each random word
/// runs twice over the same draw — once uninterrupted (raw) and, when
/// enabled, once with a check after every `check_every` Cliffords whose flag
/// discards the shot. Both curves report the |0_L> return probability among
/// code-space outcomes.
pub fn run_rb(
    cfg: &RbConfig,
    device: &DeviceConfig,
    gs: &GateSet,
    noise: &NoiseParams,
    seed: u64,
) -> Result<RbResult> {
    use rayon::prelude::*;
    cfg.validate()?;
    device.validate()?;
    let d = device.data.levels;
    let gate_sops = gate_superops(device, gs, noise, cfg.ideal_gates)?;
    let ch = clifford_channels(&gate_sops)?;
    let mean_gates: f64 =
        ch.gate_counts.iter().sum::<usize>() as f64 / ch.gate_counts.len() as f64;
    let slot = cfg.cycle_time - cfg.check_every as f64 * mean_gates * gs.gate_duration();
    if slot <= 0.0 {
        return Err(ProtocolError::BadConfig(format!(
            "cycle_time {} leaves no check slot after {} Cliffords of {:.3} us average",
            cfg.cycle_time,
            cfg.check_every,
            mean_gates * gs.gate_duration()
        )));
    }
    let eta = logical_frame_rate(device, gs.pi.carrier);
    let collapses = collapse_operators(noise, &[d])?;
    let h_idle = ladder_hamiltonian(device, gs.pi.carrier);
    let slot_sop = unitary_superop(&logical_z_matrix(d, eta * slot))
        * static_segment_superop(&h_idle.m, &collapses, slot);

    let n_len = cfg.sequence_lengths.len();
    let jobs: Vec<(usize, usize)> = (0..n_len)
        .flat_map(|li| (0..cfg.n_randomizations).map(move |w| (li, w)))
        .collect();
    struct Pair {
        li: usize,
        raw: WordOutcome,
        ps: Option<WordOutcome>,
    }
    let outcomes: Vec<Pair> = jobs
        .into_par_iter()
        .map(|(li, w)| {
            let m = cfg.sequence_lengths[li];
            let stream = (li * cfg.n_randomizations + w) as u64;
            let mut rng = shot_rng(seed, stream);
            let word: Vec<usize> = (0..m).map(|_| rng.gen_range(0..ch.sops.len())).collect();
            let raw = run_rb_word(
                &word,
                &ch,
                &slot_sop,
                &cfg.instrument,
                cfg.check_every,
                false,
                cfg.n_shots_per_length,
                d,
                &mut rng,
            );
            let ps = cfg.post_select.then(|| {
                run_rb_word(
                    &word,
                    &ch,
                    &slot_sop,
                    &cfg.instrument,
                    cfg.check_every,
                    true,
                    cfg.n_shots_per_length,
                    d,
                    &mut rng,
                )
            });
            Pair { li, raw, ps }
        })
        .collect();

    let build = |pick: &dyn Fn(&Pair) -> Option<&WordOutcome>| -> RbCurve {
        let mut per_word = vec![Vec::new(); n_len];
        let mut survival = vec![0.0; n_len];
        let mut hist = vec![[0.0; 3]; n_len];
        for p in &outcomes {
            if let Some(o) = pick(p) {
                per_word[p.li].push(o.ret);
                survival[p.li] += o.survival;
                for k in 0..3 {
                    hist[p.li][k] += o.hist[k];
                }
            }
        }
        let n_w = cfg.n_randomizations as f64;
        let mean_return = per_word
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64)
            .collect();
        for s in survival.iter_mut() {
            *s /= n_w;
        }
        for h in hist.iter_mut() {
            for k in h.iter_mut() {
                *k /= n_w;
            }
        }
        RbCurve {
            lengths: cfg.sequence_lengths.clone(),
            mean_return,
            per_word,
            survival,
            histogram: hist,
        }
    };
    let raw = build(&|p: &Pair| Some(&p.raw));
    let post_selected = cfg.post_select.then(|| build(&|p: &Pair| p.ps.as_ref()));
    Ok(RbResult { raw, post_selected })
}

// ---------------------------------------------------------------------------
// per-gate error table

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateErrorRow {
    pub gate: Gate,
    /// Mean infidelity over the six cardinal preparations with decoherence
    /// switched off — the calibration residual.
    pub no_decoherence: f64,
    /// Same average with the full noise model.
    pub with_decoherence: f64,
    /// Error conditioned on an unflagged erasure check after the gate.
    /// Whatever weight the unflagged branch leaves outside the target —
    /// including undetected population still at the detector level — counts
    /// as error.
    pub post_selected: f64,
}

/// Cardinal-averaged error of every gate in the set, with and without
/// decoherence, plus the post-selected column behind one erasure check.
pub fn gate_error_table(
    device: &DeviceConfig,
    gs: &GateSet,
    noise: &NoiseParams,
    inst: &ErasureInstrument,
) -> Result<Vec<GateErrorRow>> {
    device.validate()?;
    inst.validate()?;
    let d = device.data.levels;
    let noiseless = NoiseParams::noiseless();
    let sops_coh = gate_superops(device, gs, &noiseless, false)?;
    let sops_full = gate_superops(device, gs, noise, false)?;

    let mut rows = Vec::with_capacity(ALL_GATES.len());
    for (gi, &g) in ALL_GATES.iter().enumerate() {
        let u_t = gate_unitary(g);
        let mut err_coh = 0.0;
        let mut err_full = 0.0;
        let mut err_ps = 0.0;
        for s in CARDINAL_STATES {
            let (c0, c1) = s.logical_amplitudes();
            let t2 = u_t * nalgebra::Vector2::new(c0, c1);
            let mut target = DVector::<C64>::zeros(d);
            target[LVL_G] = t2[0];
            target[LVL_F] = t2[1];

            let rho_in = {
                let v = s.ket(d);
                &v * v.adjoint()
            };
            let quad = |rho: &DMatrix<C64>| -> f64 { target.dotc(&(rho * &target)).re };

            let rho_coh = apply_superop(&sops_coh[gi], &rho_in);
            err_coh += 1.0 - quad(&rho_coh) / rho_coh.trace().re;

            let rho_full = apply_superop(&sops_full[gi], &rho_in);
            err_full += 1.0 - quad(&rho_full) / rho_full.trace().re;

            let kept = unflagged_check_channel(&rho_full, inst);
            let w_kept = kept.trace().re;
            err_ps += if w_kept > 0.0 { 1.0 - quad(&kept) / w_kept } else { 1.0 };
        }
        let n = CARDINAL_STATES.len() as f64;
        rows.push(GateErrorRow {
            gate: g,
            no_decoherence: err_coh / n,
            with_decoherence: err_full / n,
            post_selected: err_ps / n,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// parity-heralded Bell pairs

/// Outcome of the parity experiment: per-herald two-transmon states (the
/// ancilla projected and traced out), herald probabilities, and fidelities
/// against the heralded targets.
#[derive(Debug, Clone)]
pub struct BellOutcome {
    pub p_herald_g: f64,
    pub p_herald_e: f64,
    pub rho_herald_g: DensityMatrix,
    pub rho_herald_e: DensityMatrix,
    pub fidelity_g: f64,
    pub fidelity_e: f64,
    /// Fraction kept by the two erasure checks (1 when they don't run).
    pub accept_g: f64,
    pub accept_e: f64,
}

/// Total z-phase each interaction must imprint on its |1_L> branch so the
/// two heralds land on the reported targets.
const ZETA_1: f64 = std::f64::consts::FRAC_PI_4;
const ZETA_2: f64 = -3.0 * std::f64::consts::FRAC_PI_4;

/// Heralded target states on the two data transmons, as 3x3-level kets.
/// Checking shifts the even branch by one more quarter turn per qubit, which
/// flips the sign of its |1_L 1_L> phase; the odd branch is unaffected.
pub fn bell_target(herald_e: bool, with_erasure: bool) -> DVector<C64> {
    let dims = [3usize, 3usize];
    let amp = |l: [usize; 2]| ket(&dims, &StateLabel::new(l.to_vec())).expect("in range");
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    if herald_e {
        (amp([2, 0]) - amp([0, 2])) * s
    } else {
        let phase = if with_erasure { C64::new(0.0, 1.0) } else { C64::new(0.0, -1.0) };
        (amp([0, 0]) + amp([2, 2]) * phase) * s
    }
}

fn embedded_collapses(
    np: &NoiseParams,
    dims: &[usize],
    sub: usize,
) -> Result<Vec<CollapseOperator>> {
    let singles = collapse_operators(np, &[dims[sub]])?;
    let mut out = Vec::with_capacity(singles.len());
    for c in singles {
        out.push(CollapseOperator {
            operator: OperatorMatrix::embed(dims, sub, &c.operator)?,
            rate: c.rate,
        });
    }
    Ok(out)
}

fn ancilla_collapses(np: &NoiseParams, dims: &[usize], sub: usize) -> Result<Vec<CollapseOperator>> {
    let mut out = Vec::new();
    if np.ancilla_t1.is_finite() {
        out.push(CollapseOperator {
            operator: OperatorMatrix::embed(dims, sub, &OperatorMatrix::projector_pair(2, 0, 1))?,
            rate: 1.0 / np.ancilla_t1,
        });
    }
    // echo-limited coherence: whatever decay is not energy relaxation is
    // pure dephasing on the excited projector
    let gamma_phi = 1.0 / np.ancilla_t2e - 1.0 / (2.0 * np.ancilla_t1);
    if gamma_phi > 1e-12 {
        out.push(CollapseOperator {
            operator: OperatorMatrix::embed(
                dims,
                sub,
                &OperatorMatrix::from_diag_single(2, &[0.0, 1.0]),
            )?,
            rate: 2.0 * gamma_phi,
        });
    }
    Ok(out)
}

/// Run the ancilla-mediated parity experiment end to end on the density
/// matrix: ideal logical preparation, two conditional-Rabi interactions with
/// per-interaction virtual z, decoherence during ancilla readout, herald
/// projection, and optionally a storage gap followed by one erasure check
/// per data qubit (the unflagged branch). The first noise record also
/// carries the shared ancilla's lifetimes.
pub fn run_parity_bell(
    cr: &CrParams,
    noise_q1: &NoiseParams,
    noise_q2: &NoiseParams,
    inst: &ErasureInstrument,
    with_erasure: bool,
) -> Result<BellOutcome> {
    cr.validate()?;
    inst.validate()?;
    let dims = vec![3usize, 3, 2];
    let full: usize = dims.iter().product();

    let mut collapses = embedded_collapses(noise_q1, &dims, 0)?;
    collapses.extend(embedded_collapses(noise_q2, &dims, 1)?);
    collapses.extend(ancilla_collapses(noise_q1, &dims, 2)?);

    // ideal preparation: a logical x half-turn on each data transmon
    let mut rho = DensityMatrix::from_label(&dims, &StateLabel::new(vec![0, 0, 0]))?;
    let lx = embed_logical(3, &gate_unitary(Gate::XPi2));
    let prep = OperatorMatrix::embed(&dims, 0, &OperatorMatrix::new(vec![3], lx.clone())?)?.m
        * OperatorMatrix::embed(&dims, 1, &OperatorMatrix::new(vec![3], lx)?)?.m;
    rho.m = &prep * &rho.m * prep.adjoint();

    let spec = |h: DMatrix<C64>| -> Result<EvolutionSpec> {
        Ok(EvolutionSpec {
            h_static: OperatorMatrix::new(dims.clone(), h)?,
            drives: vec![],
            collapses: collapses.clone(),
            dt_pulse: 1e-4,
            dt_idle: 5e-3,
            sample_dt: None,
            frame: vec![],
        })
    };
    let x_anc = {
        let mut m = DMatrix::<C64>::zeros(2, 2);
        m[(0, 1)] = C64::ONE;
        m[(1, 0)] = C64::ONE;
        OperatorMatrix::new(vec![2], m)?
    };
    let cr_hamiltonian = |control: usize| -> Result<DMatrix<C64>> {
        let pi0 = OperatorMatrix::embed(
            &dims,
            control,
            &OperatorMatrix::from_diag_single(3, &[1.0, 0.0, 0.0]),
        )?;
        let pi1 = OperatorMatrix::embed(
            &dims,
            control,
            &OperatorMatrix::from_diag_single(3, &[0.0, 0.0, 1.0]),
        )?;
        let xa = OperatorMatrix::embed(&dims, 2, &x_anc)?;
        let half_omega = C64::new(0.5 * rad_per_us(cr.omega_eff), 0.0);
        let half_delta = C64::new(0.5 * rad_per_us(cr.delta_ac), 0.0);
        Ok((&pi0.m * &xa.m) * half_omega + (&pi0.m - &pi1.m) * half_delta)
    };

    let stark = rad_per_us(cr.delta_ac) * cr.duration;
    for (control, zeta) in [(0usize, ZETA_1), (1usize, ZETA_2)] {
        let s = spec(cr_hamiltonian(control)?)?;
        rho = evolve_master_final(&s, &rho, (0.0, cr.duration))?;
        let beta = zeta - stark;
        let z = {
            let single = logical_z_matrix(3, beta);
            OperatorMatrix::embed(&dims, control, &OperatorMatrix::new(vec![3], single)?)?.m
        };
        rho.m = &z * &rho.m * z.adjoint();
    }

    // data decoherence while the ancilla is read out
    if noise_q1.readout_len > 1e-12 {
        let s = spec(DMatrix::zeros(full, full))?;
        rho = evolve_master_final(&s, &rho, (0.0, noise_q1.readout_len))?;
    }

    // herald projection on the ancilla
    let branch = |anc: usize| -> Result<(f64, DensityMatrix)> {
        let mut m = rho.m.clone();
        for r in 0..full {
            for c in 0..full {
                if r % 2 != anc || c % 2 != anc {
                    m[(r, c)] = C64::ZERO;
                }
            }
        }
        let p = m.trace().re.max(0.0);
        let joint = DensityMatrix::new(dims.clone(), m)?;
        let mut data = joint.partial_trace(&[0, 1])?;
        if p > 0.0 {
            data.m /= C64::new(p, 0.0);
        }
        Ok((p, data))
    };
    let (mut p_g, mut rho_g) = branch(0)?;
    let (mut p_e, mut rho_e) = branch(1)?;

    let mut accept_g = 1.0;
    let mut accept_e = 1.0;
    if with_erasure {
        let data_dims = vec![3usize, 3];
        let mut wait_collapses = embedded_collapses(noise_q1, &data_dims, 0)?;
        wait_collapses.extend(embedded_collapses(noise_q2, &data_dims, 1)?);
        let wait_spec = EvolutionSpec {
            h_static: OperatorMatrix::zeros(data_dims.clone()),
            drives: vec![],
            collapses: wait_collapses,
            dt_pulse: 1e-4,
            dt_idle: 5e-3,
            sample_dt: None,
            frame: vec![],
        };
        let check_branch = |state: &mut DensityMatrix, accept: &mut f64| -> Result<()> {
            if cr.erasure_wait > 1e-12 {
                *state = evolve_master_final(&wait_spec, state, (0.0, cr.erasure_wait))?;
            }
            let mut m = state.m.clone();
            for sub in 0..2 {
                m = unflagged_check_channel_sub(&m, &data_dims, sub, inst)?;
            }
            let w = m.trace().re.max(0.0);
            *accept = w;
            if w > 0.0 {
                m /= C64::new(w, 0.0);
            }
            // swap-convention bookkeeping: a quarter z turn per qubit
            let z = logical_z_matrix(3, std::f64::consts::FRAC_PI_2);
            let z0 = OperatorMatrix::embed(&data_dims, 0, &OperatorMatrix::new(vec![3], z.clone())?)?;
            let z1 = OperatorMatrix::embed(&data_dims, 1, &OperatorMatrix::new(vec![3], z)?)?;
            let u = &z0.m * &z1.m;
            state.m = &u * &m * u.adjoint();
            Ok(())
        };
        check_branch(&mut rho_g, &mut accept_g)?;
        check_branch(&mut rho_e, &mut accept_e)?;
    }

    if cr.relabel {
        std::mem::swap(&mut p_g, &mut p_e);
        std::mem::swap(&mut rho_g, &mut rho_e);
        std::mem::swap(&mut accept_g, &mut accept_e);
    }

    let fidelity_g = rho_g.fidelity_pure(&bell_target(false, with_erasure))?;
    let fidelity_e = rho_e.fidelity_pure(&bell_target(true, with_erasure))?;
    Ok(BellOutcome {
        p_herald_g: p_g,
        p_herald_e: p_e,
        rho_herald_g: rho_g,
        rho_herald_e: rho_e,
        fidelity_g,
        fidelity_e,
        accept_g,
        accept_e,
    })
}

// ---------------------------------------------------------------------------
// two-qubit state tomography

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

pub const PAULIS: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

impl Pauli {
    fn index(self) -> usize {
        match self {
            Pauli::X => 0,
            Pauli::Y => 1,
            Pauli::Z => 2,
        }
    }

    fn matrix(self) -> Matrix2<C64> {
        let (o, i, z) = (C64::ONE, C64::new(0.0, 1.0), C64::ZERO);
        match self {
            Pauli::X => Matrix2::new(z, o, o, z),
            Pauli::Y => Matrix2::new(z, -i, i, z),
            Pauli::Z => Matrix2::new(o, z, z, -o),
        }
    }

    /// Pre-measurement rotation mapping this axis onto z.
    fn rotation(self) -> Matrix2<C64> {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let i = C64::new(0.0, 1.0);
        match self {
            // y half-turn backwards: x -> z
            Pauli::X => Matrix2::new(s, s, -s, s),
            // x half-turn forwards: y -> z
            Pauli::Y => Matrix2::new(s, -i * s, -i * s, s),
            Pauli::Z => Matrix2::identity(),
        }
    }
}

/// All nine two-qubit measurement bases in canonical order.
pub fn all_pauli_pairs() -> Vec<(Pauli, Pauli)> {
    let mut v = Vec::with_capacity(9);
    for p in PAULIS {
        for q in PAULIS {
            v.push((p, q));
        }
    }
    v
}

/// Embed a logical 2x2 on the (lowest, highest) levels of a 2- or 3-level
/// subsystem.
fn embed_tomo(d: usize, u: &Matrix2<C64>) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::identity(d, d);
    let hi = d - 1;
    m[(0, 0)] = u[(0, 0)];
    m[(0, hi)] = u[(0, 1)];
    m[(hi, 0)] = u[(1, 0)];
    m[(hi, hi)] = u[(1, 1)];
    m
}

/// Reconstruct the logical two-qubit state of a two-transmon density matrix
/// by Pauli-basis measurement and linear inversion. Each basis rotates both
/// subsystems onto z and reads level populations; outcomes on a detector
/// level are discarded and the basis renormalized. Single-qubit expectations
/// average over the three bases sharing that axis. `shots_per_basis = 0`
/// uses exact probabilities. The inverted matrix is clipped to the physical
/// cone (eigenvalues at zero, trace one).
///
/// Results are invariant under reordering of `bases`: the sampling stream is
/// keyed by basis identity, not list position.
pub fn tomography(
    rho: &DensityMatrix,
    bases: &[(Pauli, Pauli)],
    shots_per_basis: usize,
    seed: u64,
) -> Result<DensityMatrix> {
    if rho.dims.len() != 2 || rho.dims.iter().any(|&d| d < 2 || d > 3) {
        return Err(ProtocolError::BadConfig(format!(
            "tomography expects two 2- or 3-level subsystems, got dims {:?}",
            rho.dims
        )));
    }
    let mut missing: Vec<(Pauli, Pauli)> = all_pauli_pairs();
    missing.retain(|pq| !bases.contains(pq));
    if !missing.is_empty() {
        let names: Vec<String> = missing.iter().map(|(p, q)| format!("{p:?}{q:?}")).collect();
        return Err(ProtocolError::MissingBases(names.join(", ")));
    }
    let (d0, d1) = (rho.dims[0], rho.dims[1]);
    let value = |lvl: usize, d: usize| -> Option<f64> {
        if lvl == 0 {
            Some(1.0)
        } else if lvl == d - 1 {
            Some(-1.0)
        } else {
            None
        }
    };

    // accumulated over listed bases: joint, first-axis and second-axis sums
    let mut e2 = [[0.0f64; 3]; 3];
    let mut n2 = [[0.0f64; 3]; 3];
    let mut e1a = [0.0f64; 3];
    let mut n1a = [0.0f64; 3];
    let mut e1b = [0.0f64; 3];
    let mut n1b = [0.0f64; 3];

    for &(p, q) in bases {
        let u = embed_tomo(d0, &p.rotation())
            .kronecker(&embed_tomo(d1, &q.rotation()));
        let rotated = &u * &rho.m * u.adjoint();
        let probs: Vec<f64> = (0..d0 * d1).map(|k| rotated[(k, k)].re.max(0.0)).collect();
        let (mut sum_pq, mut sum_p, mut sum_q, mut kept) = (0.0, 0.0, 0.0, 0.0);
        let mut tally = |flat: usize, weight: f64| {
            let (l0, l1) = (flat / d1, flat % d1);
            if let (Some(v0), Some(v1)) = (value(l0, d0), value(l1, d1)) {
                kept += weight;
                sum_pq += weight * v0 * v1;
                sum_p += weight * v0;
                sum_q += weight * v1;
            }
        };
        if shots_per_basis == 0 {
            for (flat, w) in probs.iter().enumerate() {
                tally(flat, *w);
            }
        } else {
            let mut rng = shot_rng(seed, (3 * p.index() + q.index()) as u64);
            let total: f64 = probs.iter().sum();
            for _ in 0..shots_per_basis {
                let mut x = rng.gen::<f64>() * total.max(1e-300);
                let mut flat = probs.len() - 1;
                for (k, w) in probs.iter().enumerate() {
                    if x < *w {
                        flat = k;
                        break;
                    }
                    x -= w;
                }
                tally(flat, 1.0);
            }
        }
        if kept <= 0.0 {
            return Err(ProtocolError::Numerics(format!(
                "every outcome of basis {p:?}{q:?} fell outside the code space"
            )));
        }
        let (i, j) = (p.index(), q.index());
        e2[i][j] += sum_pq / kept;
        n2[i][j] += 1.0;
        e1a[i] += sum_p / kept;
        n1a[i] += 1.0;
        e1b[j] += sum_q / kept;
        n1b[j] += 1.0;
    }

    let id2 = Matrix2::<C64>::identity();
    let kron = |a: &Matrix2<C64>, b: &Matrix2<C64>| -> DMatrix<C64> {
        DMatrix::from_fn(4, 4, |r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
    };
    let mut m = kron(&id2, &id2);
    for p in PAULIS {
        let i = p.index();
        m += kron(&p.matrix(), &id2) * C64::new(e1a[i] / n1a[i], 0.0);
        m += kron(&id2, &p.matrix()) * C64::new(e1b[i] / n1b[i], 0.0);
        for q in PAULIS {
            let j = q.index();
            m += kron(&p.matrix(), &q.matrix()) * C64::new(e2[i][j] / n2[i][j], 0.0);
        }
    }
    m /= C64::new(4.0, 0.0);

    // project onto the physical cone
    let herm = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let (evals, vecs) = crate::qsys::eigh(&herm);
    let clipped: Vec<f64> = evals.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(ProtocolError::Numerics(
            "reconstruction collapsed to the zero matrix".into(),
        ));
    }
    let mut out = DMatrix::<C64>::zeros(4, 4);
    for (k, &lam) in clipped.iter().enumerate() {
        let v = vecs.column(k);
        out += (v * v.adjoint()) * C64::new(lam / total, 0.0);
    }
    Ok(DensityMatrix::new(vec![2, 2], out)?)
}
