//! Incoherent channels of the data transmon: energy relaxation down the
//! ladder, thermal excitation, and pure dephasing of the g-f coherence, plus
//! the spin-locking noise-spectroscopy relation.

use crate::qsys::{OperatorMatrix, LVL_E, LVL_F, LVL_G};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("invalid noise parameter: {0}")]
    BadParam(String),
    #[error(transparent)]
    Qsys(#[from] crate::qsys::QsysError),
}

pub type Result<T> = std::result::Result<T, NoiseError>;

/// Coherence parameters of the data transmon and its ancilla readout chain.
/// Times in us; `p_thermal` is the equilibrium excited-state population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// e -> g relaxation time, us.
    pub t1_ge: f64,
    /// f -> e relaxation time, us.
    pub t1_ef: f64,
    /// Pure dephasing time of the g-f coherence, us.
    pub tphi_gf: f64,
    /// Thermal excited-state population (drives the g -> e raising rate).
    pub p_thermal: f64,
    /// Ancilla relaxation time, us (enters the check-instrument error rates).
    pub ancilla_t1: f64,
    /// Ancilla echo coherence time, us.
    pub ancilla_t2e: f64,
    /// Readout window length, us.
    pub readout_len: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t1_ge", self.t1_ge),
            ("t1_ef", self.t1_ef),
            ("tphi_gf", self.tphi_gf),
            ("ancilla_t1", self.ancilla_t1),
            ("ancilla_t2e", self.ancilla_t2e),
            ("readout_len", self.readout_len),
        ] {
            if !(v > 0.0) {
                return Err(NoiseError::BadParam(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..0.5).contains(&self.p_thermal) {
            return Err(NoiseError::BadParam(format!(
                "p_thermal must be in [0, 0.5), got {}",
                self.p_thermal
            )));
        }
        Ok(())
    }

    /// Thermal g -> e excitation rate, 1/us.
    pub fn gamma_up(&self) -> f64 {
        self.p_thermal / self.t1_ge
    }

    /// Decoherence-free limit: every lifetime infinite, no thermal
    /// excitation. All derived rates vanish, so protocols run their full
    /// schedule with purely unitary dynamics.
    pub fn noiseless() -> Self {
        NoiseParams {
            t1_ge: f64::INFINITY,
            t1_ef: f64::INFINITY,
            tphi_gf: f64::INFINITY,
            p_thermal: 0.0,
            ancilla_t1: f64::INFINITY,
            ancilla_t2e: f64::INFINITY,
            readout_len: 0.54,
        }
    }
}

/// One Lindblad dissipator: D[sqrt(rate) * operator].
#[derive(Debug, Clone)]
pub struct CollapseOperator {
    pub operator: OperatorMatrix,
    /// 1/us.
    pub rate: f64,
}

impl CollapseOperator {
    /// sqrt(rate) * operator, the form the evolution engine consumes.
    pub fn scaled(&self) -> OperatorMatrix {
        self.operator
            .scale(num_complex::Complex64::new(self.rate.sqrt(), 0.0))
    }
}

/// Collapse operators for the data transmon, embedded on subsystem 0 of
/// `dims` (a lone transmon when `dims` has one entry).
///
/// Channels: |g><e| at 1/t1_ge, |e><f| at 1/t1_ef, |e><g| at p_thermal/t1_ge,
/// and the diagonal dephasing operator |f><f| at rate 2/tphi_gf so the g-f
/// coherence loses phase at exactly 1/tphi_gf.
pub fn collapse_operators(np: &NoiseParams, dims: &[usize]) -> Result<Vec<CollapseOperator>> {
    np.validate()?;
    collapse_operators_with_dephasing_weights(np, dims, &[0.0, 0.0, 1.0])
}

/// Same as [`collapse_operators`] with the diagonal dephasing operator
/// redistributed as sum_j w_j |j><j| over (g, e, f). The rate is renormalized
/// so the g-f coherence still dephases at 1/tphi_gf; (0, 0, 1) is the default
/// attribution entirely to the |f> phase.
pub fn collapse_operators_with_dephasing_weights(
    np: &NoiseParams,
    dims: &[usize],
    weights: &[f64; 3],
) -> Result<Vec<CollapseOperator>> {
    np.validate()?;
    if dims.is_empty() {
        return Err(NoiseError::BadParam("empty dims".into()));
    }
    let d = dims[0];
    if d < 3 {
        return Err(NoiseError::BadParam(format!(
            "data transmon needs at least 3 levels, got {d}"
        )));
    }
    let wdiff = weights[2] - weights[0];
    if wdiff == 0.0 {
        return Err(NoiseError::BadParam(
            "dephasing weights must distinguish |g> from |f>".into(),
        ));
    }

    let embed = |op: OperatorMatrix| -> Result<OperatorMatrix> {
        Ok(OperatorMatrix::embed(dims, 0, &op)?)
    };

    let mut out = Vec::new();
    out.push(CollapseOperator {
        operator: embed(OperatorMatrix::projector_pair(d, LVL_G, LVL_E))?,
        rate: 1.0 / np.t1_ge,
    });
    out.push(CollapseOperator {
        operator: embed(OperatorMatrix::projector_pair(d, LVL_E, LVL_F))?,
        rate: 1.0 / np.t1_ef,
    });
    if np.p_thermal > 0.0 {
        out.push(CollapseOperator {
            operator: embed(OperatorMatrix::projector_pair(d, LVL_E, LVL_G))?,
            rate: np.gamma_up(),
        });
    }
    let mut diag = vec![0.0; d];
    diag[LVL_G] = weights[0];
    diag[LVL_E] = weights[1];
    diag[LVL_F] = weights[2];
    out.push(CollapseOperator {
        operator: embed(OperatorMatrix::from_diag_single(d, &diag))?,
        // D[sqrt(r) L] decays rho_gf at r*(w_f - w_g)^2/2; solve for 1/tphi.
        rate: 2.0 / (np.tphi_gf * wdiff * wdiff),
    });
    Ok(out)
}

/// One spin-locking decay measurement: lock Rabi frequency and decay time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinLockPoint {
    /// Lock Rabi frequency, MHz.
    pub rabi_freq: f64,
    /// Rotating-frame relaxation time, us.
    pub t1rho: f64,
}

/// One extracted noise-spectral-density sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdPoint {
    /// Sample frequency (the lock Rabi frequency), MHz.
    pub freq: f64,
    /// Dephasing-noise power spectral density, 1/us.
    pub s_omega: f64,
    /// Set when the raw value came out negative and was clipped to zero.
    pub clipped: bool,
}

/// Dephasing-noise PSD from spin-locking decay times:
/// S(omega) = 2 (1/T1rho - 1/(2 t1_ef)), clipped at zero.
///
/// The decay-limited term subtracts the f-lifetime contribution to the
/// rotating-frame relaxation.
pub fn psd_from_spinlock(t1rho: &[SpinLockPoint], t1_ef: f64) -> Result<Vec<PsdPoint>> {
    if !(t1_ef > 0.0) {
        return Err(NoiseError::BadParam(format!(
            "t1_ef must be positive, got {t1_ef}"
        )));
    }
    let mut out = Vec::with_capacity(t1rho.len());
    for p in t1rho {
        if !(p.t1rho > 0.0) {
            return Err(NoiseError::BadParam(format!(
                "T1rho must be positive, got {}",
                p.t1rho
            )));
        }
        let raw = 2.0 * (1.0 / p.t1rho - 1.0 / (2.0 * t1_ef));
        out.push(PsdPoint {
            freq: p.rabi_freq,
            s_omega: raw.max(0.0),
            clipped: raw < 0.0,
        });
    }
    Ok(out)
}

/// Decoherence budget of the memory experiment — the fixture the in-crate
/// test suites share.
#[cfg(test)]
pub(crate) fn test_noise() -> NoiseParams {
    NoiseParams {
        t1_ge: 52.0,
        t1_ef: 26.0,
        tphi_gf: 440.0,
        p_thermal: 0.007,
        ancilla_t1: 30.0,
        ancilla_t2e: 20.0,
        readout_len: 0.54,
    }
}
