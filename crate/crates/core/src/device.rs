//! Static device model: two exchange-coupled transmons, avoided level
//! crossings as a function of ancilla frequency, and the dispersive-shift /
//! photon-shot-noise estimates for the ancilla readout chain.
//!
//! Unit policy: configs store *linear* frequencies in MHz (value = omega/2pi).
//! Hamiltonians are built in angular rad/us; [`rad_per_us`] is the single
//! place where the 2*pi conversion happens.

use crate::qsys::{eigh, ket, OperatorMatrix, StateLabel, LVL_F, LVL_G};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Linear MHz -> angular rad/us. The only 2*pi conversion in the crate.
pub fn rad_per_us(mhz: f64) -> f64 {
    std::f64::consts::TAU * mhz
}

/// Angular rad/us -> linear MHz.
pub fn mhz_from_rad(rad: f64) -> f64 {
    rad / std::f64::consts::TAU
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeviceError {
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("drive or resonator detuning invalid: {0}")]
    BadDetuning(String),
    #[error("scan range {0}..{1} MHz outside the supported 4000..7000 MHz window")]
    BadRange(f64, f64),
    #[error("dispersive estimate precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Qsys(#[from] crate::qsys::QsysError),
}

pub type Result<T> = std::result::Result<T, DeviceError>;

/// Anharmonic (Duffing) transmon ladder: E_n/2pi = omega*n - (alpha/2)n(n-1),
/// with `alpha` the positive anharmonicity in the subtractive convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmonParams {
    /// g-e transition frequency, MHz.
    pub omega: f64,
    /// Anharmonicity, MHz (positive; e-f sits alpha below g-e).
    pub alpha: f64,
    /// Ladder truncation (default 4: g,e,f,h).
    pub levels: usize,
}

impl TransmonParams {
    pub fn new(omega: f64, alpha: f64, levels: usize) -> Result<Self> {
        let p = TransmonParams {
            omega,
            alpha,
            levels,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.omega <= 0.0 {
            return Err(DeviceError::BadParam(format!(
                "transmon omega must be positive, got {}",
                self.omega
            )));
        }
        if self.alpha <= 0.0 {
            return Err(DeviceError::BadParam(format!(
                "transmon alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(2..=6).contains(&self.levels) {
            return Err(DeviceError::BadParam(format!(
                "transmon levels must be in 2..=6, got {}",
                self.levels
            )));
        }
        Ok(())
    }

    /// Bare ladder energy of level n in linear MHz.
    pub fn bare_energy(&self, n: usize) -> f64 {
        let nf = n as f64;
        self.omega * nf - 0.5 * self.alpha * nf * (nf - 1.0)
    }
}

/// Readout resonator attached to the ancilla transmon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonatorParams {
    /// Resonator frequency, MHz.
    pub omega_r: f64,
    /// Linewidth kappa/2pi, MHz.
    pub kappa_r: f64,
    /// Ancilla-resonator coupling, MHz.
    pub g_r: f64,
    /// Measured ancilla dispersive shift at the operating bias, MHz.
    pub chi_bias: f64,
}

impl ResonatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.kappa_r <= 0.0 {
            return Err(DeviceError::BadParam(format!(
                "kappa_r must be positive, got {}",
                self.kappa_r
            )));
        }
        Ok(())
    }
}

/// Full static description of the data/ancilla pair and readout chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub data: TransmonParams,
    pub ancilla: TransmonParams,
    /// Transmon-transmon exchange coupling g, MHz.
    pub coupling_g: f64,
    pub resonator: ResonatorParams,
    /// Readout drive detuning from the ancilla resonator, MHz.
    pub drive_detuning: f64,
    /// Measured drive-induced Stark shift on the data qubit, kHz.
    pub stark_shift: f64,
}

impl DeviceConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.ancilla.validate()?;
        self.resonator.validate()?;
        if self.coupling_g < 0.0 {
            return Err(DeviceError::BadParam(format!(
                "coupling_g must be nonnegative, got {}",
                self.coupling_g
            )));
        }
        Ok(())
    }
}

/// An avoided crossing located by the frequency scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub pair: (StateLabel, StateLabel),
    /// Ancilla frequency of the minimum gap, MHz.
    pub ancilla_freq: f64,
    /// Minimum eigenvalue gap, MHz.
    pub min_gap: f64,
}

/// Scan outcome: crossings found plus pairs with no interior gap minimum.
#[derive(Debug, Clone, Default)]
pub struct CrossingScan {
    pub found: Vec<Crossing>,
    pub absent: Vec<(StateLabel, StateLabel)>,
}

/// Static two-transmon Hamiltonian in rad/us:
/// bare ladders plus g(s + s^dag)(c + c^dag) exchange.
///
/// `ancilla_omega_override` substitutes the ancilla g-e frequency (used by the
/// crossing scan); `None` keeps the configured value.
pub fn build_static_hamiltonian(
    cfg: &DeviceConfig,
    ancilla_omega_override: Option<f64>,
) -> Result<OperatorMatrix> {
    cfg.validate()?;
    let mut anc = cfg.ancilla.clone();
    if let Some(w) = ancilla_omega_override {
        anc.omega = w;
    }
    let dims = vec![cfg.data.levels, anc.levels];
    let mut h = OperatorMatrix::zeros(dims.clone());

    let data_diag: Vec<f64> = (0..cfg.data.levels)
        .map(|n| rad_per_us(cfg.data.bare_energy(n)))
        .collect();
    let anc_diag: Vec<f64> = (0..anc.levels)
        .map(|n| rad_per_us(anc.bare_energy(n)))
        .collect();
    let hd = OperatorMatrix::from_diag_single(cfg.data.levels, &data_diag);
    let ha = OperatorMatrix::from_diag_single(anc.levels, &anc_diag);
    h.m += OperatorMatrix::embed(&dims, 0, &hd)?.m;
    h.m += OperatorMatrix::embed(&dims, 1, &ha)?.m;

    let s = OperatorMatrix::lowering(cfg.data.levels);
    let c_op = OperatorMatrix::lowering(anc.levels);
    let sx = &s.m + s.m.adjoint();
    let cx = &c_op.m + c_op.m.adjoint();
    let sx_full = OperatorMatrix::new(vec![cfg.data.levels], sx)?;
    let cx_full = OperatorMatrix::new(vec![anc.levels], cx)?;
    let exch = sx_full.tensor(&cx_full)?;
    h.m += exch.m * C64::new(rad_per_us(cfg.coupling_g), 0.0);
    Ok(h)
}

/// Exchange matrix element g<a|(s+s^dag)(c+c^dag)|b> between two bare product
/// states, in MHz. The minimum gap of a first-order avoided crossing is twice
/// this magnitude.
pub fn bare_exchange_element(cfg: &DeviceConfig, a: &StateLabel, b: &StateLabel) -> Result<f64> {
    let dims = [cfg.data.levels, cfg.ancilla.levels];
    let s = OperatorMatrix::lowering(cfg.data.levels);
    let c_op = OperatorMatrix::lowering(cfg.ancilla.levels);
    let sx = OperatorMatrix::new(vec![cfg.data.levels], &s.m + s.m.adjoint())?;
    let cx = OperatorMatrix::new(vec![cfg.ancilla.levels], &c_op.m + c_op.m.adjoint())?;
    let exch = sx.tensor(&cx)?;
    let va = ket(&dims, a)?;
    let vb = ket(&dims, b)?;
    let elem = va.dotc(&(&exch.m * vb));
    Ok(cfg.coupling_g * elem.norm())
}

/// Eigenstates tracked by maximum overlap against a reference vector set.
struct TrackedSpectrum {
    /// energies[label] in rad/us, indexed like the bare product basis.
    energies: Vec<f64>,
    vectors: DMatrix<C64>,
}

fn diag_tracked(h: &DMatrix<C64>, reference: &DMatrix<C64>) -> TrackedSpectrum {
    let (evals, vecs) = eigh(h);
    let n = evals.len();
    // Greedy max-overlap assignment of eigenvectors to reference columns,
    // largest overlaps first so hybridized pairs resolve consistently.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for ref_idx in 0..n {
        let r = reference.column(ref_idx);
        for eig_idx in 0..n {
            let ov = r.dotc(&vecs.column(eig_idx)).norm();
            pairs.push((ov, ref_idx, eig_idx));
        }
    }
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut label_of_ref = vec![usize::MAX; n];
    let mut used_eig = vec![false; n];
    let mut assigned = 0;
    for (_, ref_idx, eig_idx) in pairs {
        if label_of_ref[ref_idx] == usize::MAX && !used_eig[eig_idx] {
            label_of_ref[ref_idx] = eig_idx;
            used_eig[eig_idx] = true;
            assigned += 1;
            if assigned == n {
                break;
            }
        }
    }
    let mut energies = vec![0.0; n];
    let mut vectors = DMatrix::from_element(n, n, C64::ZERO);
    for ref_idx in 0..n {
        let eig_idx = label_of_ref[ref_idx];
        energies[ref_idx] = evals[eig_idx];
        vectors.set_column(ref_idx, &vecs.column(eig_idx));
    }
    TrackedSpectrum { energies, vectors }
}

/// Scan the ancilla frequency over `freq_range` (MHz), adiabatically track the
/// labeled eigenstates, and locate the minimum gap for each requested pair.
///
/// Scan step is 0.25 MHz; each local minimum is refined by golden-section
/// search. Pairs whose gap has no interior minimum are reported as absent.
pub fn find_level_crossings(
    cfg: &DeviceConfig,
    freq_range: (f64, f64),
    pairs: &[(StateLabel, StateLabel)],
) -> Result<CrossingScan> {
    let (lo, hi) = freq_range;
    if !(4000.0..=7000.0).contains(&lo) || !(4000.0..=7000.0).contains(&hi) || lo >= hi {
        return Err(DeviceError::BadRange(lo, hi));
    }
    cfg.validate()?;
    let dims = [cfg.data.levels, cfg.ancilla.levels];
    let n = dims[0] * dims[1];
    let step = 0.25;
    let n_steps = ((hi - lo) / step).ceil() as usize + 1;

    let mut pair_idx = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        pair_idx.push((a.flat_index(&dims)?, b.flat_index(&dims)?));
    }

    // Reference at scan start: the bare product basis itself.
    let mut reference = DMatrix::<C64>::identity(n, n);
    let mut gaps: Vec<Vec<f64>> = vec![Vec::with_capacity(n_steps); pairs.len()];
    let mut freqs: Vec<f64> = Vec::with_capacity(n_steps);
    // Tracked vectors at every step, for refinement re-labeling.
    let mut step_vectors: Vec<DMatrix<C64>> = Vec::with_capacity(n_steps);

    for k in 0..n_steps {
        let w = (lo + k as f64 * step).min(hi);
        let h = build_static_hamiltonian(cfg, Some(w))?;
        let tracked = diag_tracked(&h.m, &reference);
        for (p, &(ia, ib)) in pair_idx.iter().enumerate() {
            gaps[p].push(mhz_from_rad((tracked.energies[ia] - tracked.energies[ib]).abs()));
        }
        freqs.push(w);
        reference = tracked.vectors.clone();
        step_vectors.push(tracked.vectors);
    }

    let mut scan = CrossingScan::default();
    for (p, (la, lb)) in pairs.iter().enumerate() {
        let g = &gaps[p];
        // global interior minimum of the sampled gap
        let mut best = None;
        for k in 1..g.len() - 1 {
            if g[k] <= g[k - 1] && g[k] <= g[k + 1] {
                match best {
                    None => best = Some(k),
                    Some(kb) if g[k] < g[kb] => best = Some(k),
                    _ => {}
                }
            }
        }
        let Some(k) = best else {
            scan.absent.push((la.clone(), lb.clone()));
            continue;
        };
        let (ia, ib) = pair_idx[p];
        let anchor = &step_vectors[k];
        let gap_at = |w: f64| -> f64 {
            let h = build_static_hamiltonian(cfg, Some(w)).expect("validated config");
            let t = diag_tracked(&h.m, anchor);
            mhz_from_rad((t.energies[ia] - t.energies[ib]).abs())
        };
        let (w_min, gap_min) = golden_min(freqs[k - 1], freqs[k + 1], 1e-5, gap_at);
        scan.found.push(Crossing {
            pair: (la.clone(), lb.clone()),
            ancilla_freq: w_min,
            min_gap: gap_min,
        });
    }
    Ok(scan)
}

/// Golden-section minimization of a unimodal 1-D function.
fn golden_min(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INVPHI * (b - a);
    let mut x2 = a + INVPHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INVPHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INVPHI * (b - a);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

/// Dispersive pull formula chi = -2 g_r^2 alpha / [Delta (Delta - alpha)],
/// all arguments linear MHz, callable with any signs (used directly by the
/// symmetry property test).
pub fn chi_formula(g_r: f64, alpha: f64, delta: f64) -> f64 {
    -2.0 * g_r * g_r * alpha / (delta * (delta - alpha))
}

/// Ancilla-resonator dispersive shift at a given ancilla bias frequency, MHz.
pub fn chi_ancilla_bias(
    res: &ResonatorParams,
    ancilla: &TransmonParams,
    omega_bias: f64,
) -> Result<f64> {
    let d0 = omega_bias - res.omega_r;
    let d1 = omega_bias - ancilla.alpha - res.omega_r;
    if d0 == 0.0 || d1 == 0.0 {
        return Err(DeviceError::BadDetuning(
            "resonator resonant with an ancilla transition".into(),
        ));
    }
    if d0 * d1 < 0.0 {
        return Err(DeviceError::BadDetuning(
            "resonator straddles the ancilla g-e / e-f transitions".into(),
        ));
    }
    Ok(chi_formula(res.g_r, ancilla.alpha, d0))
}

/// Invert the pull formula: the coupling g_r (MHz) that reproduces a measured
/// dispersive shift at the given bias.
pub fn g_r_from_chi(
    res: &ResonatorParams,
    ancilla: &TransmonParams,
    omega_bias: f64,
    chi_measured: f64,
) -> Result<f64> {
    let d0 = omega_bias - res.omega_r;
    let d1 = omega_bias - ancilla.alpha - res.omega_r;
    if d0 == 0.0 || d1 == 0.0 || d0 * d1 < 0.0 {
        return Err(DeviceError::BadDetuning(
            "invalid detunings for inverse solve".into(),
        ));
    }
    let g2 = -chi_measured * d0 * d1 / (2.0 * ancilla.alpha);
    if g2 < 0.0 {
        return Err(DeviceError::BadDetuning(format!(
            "measured chi {chi_measured} MHz has the wrong sign for these detunings"
        )));
    }
    Ok(g2.sqrt())
}

/// How the logical (g-f differential) dispersive shift is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChiMode {
    /// Second-order formula: chi_bias * (sqrt(2) g / (omega_q - alpha_q - omega_a))^2.
    Analytic,
    /// Full diagonalization of data x ancilla with the resonator folded in as
    /// an ancilla-conditioned photon pull. The drive enters through the mean
    /// photon number, solved self-consistently so the total level displacement
    /// matches the measured Stark shift; the reported value is the local
    /// (tangent) shift per photon at that operating point, which is the
    /// coupling photon-number fluctuations actually see.
    Exact,
}

/// Per-photon resonator pull of ancilla level j relative to level g, MHz.
///
/// Second-order ladder result with the overall scale anchored to the measured
/// chi_bias (the e-level pull difference equals chi_bias by construction).
fn ancilla_conditioned_pulls(cfg: &DeviceConfig) -> Result<Vec<f64>> {
    let wa = cfg.ancilla.omega;
    let wr = cfg.resonator.omega_r;
    let alpha = cfg.ancilla.alpha;
    // scale anchored to the measured shift
    let g_eff = g_r_from_chi(&cfg.resonator, &cfg.ancilla, wa, cfg.resonator.chi_bias)?;
    let g2 = g_eff * g_eff;
    let delta = |j: f64| wa - j * alpha - wr;
    let mut pulls = Vec::with_capacity(cfg.ancilla.levels);
    for j in 0..cfg.ancilla.levels {
        let jf = j as f64;
        // d/dn of the second-order level shift of |j, n>
        let mut p = 0.0;
        if j + 1 < cfg.ancilla.levels + 1 {
            p += -(jf + 1.0) * g2 / delta(jf);
        }
        if j > 0 {
            p += jf * g2 / delta(jf - 1.0);
        }
        pulls.push(p);
    }
    let p0 = pulls[0];
    for p in &mut pulls {
        *p -= p0;
    }
    Ok(pulls)
}

/// Dressed eigenenergy (rad/us) of the level labeled by maximum overlap with
/// the bare product ket.
fn labeled_energy(h: &DMatrix<C64>, bare: &DVector<C64>) -> f64 {
    let (evals, vecs) = eigh(h);
    let mut best = 0;
    let mut best_ov = -1.0;
    for i in 0..evals.len() {
        let ov = bare.dotc(&vecs.column(i)).norm();
        if ov > best_ov {
            best_ov = ov;
            best = i;
        }
    }
    evals[best]
}

/// g-f differential dispersive shift per resonator photon, evaluated at mean
/// photon number `n_bar`, in kHz.
pub fn chi_logical_at_photon_number(cfg: &DeviceConfig, n_bar: f64) -> Result<f64> {
    cfg.validate()?;
    let dims = [cfg.data.levels, cfg.ancilla.levels];
    let pulls = ancilla_conditioned_pulls(cfg)?;
    let pull_rad: Vec<f64> = pulls.iter().map(|p| rad_per_us(*p)).collect();
    let pull_op = OperatorMatrix::embed(
        &dims,
        1,
        &OperatorMatrix::from_diag_single(cfg.ancilla.levels, &pull_rad),
    )?;
    let h0 = build_static_hamiltonian(cfg, None)?;
    let hn = &h0.m + &pull_op.m * C64::new(n_bar, 0.0);

    let fg = ket(&dims, &StateLabel::new(vec![LVL_F, LVL_G]))?;
    let gg = ket(&dims, &StateLabel::new(vec![LVL_G, LVL_G]))?;
    let e_fg_0 = labeled_energy(&h0.m, &fg);
    let e_gg_0 = labeled_energy(&h0.m, &gg);
    let e_fg_n = labeled_energy(&hn, &fg);
    let e_gg_n = labeled_energy(&hn, &gg);
    let diff_rad = ((e_fg_n - e_fg_0) - (e_gg_n - e_gg_0)) / n_bar;
    Ok(mhz_from_rad(diff_rad) * 1e3)
}

/// Logical (g-f differential) dispersive shift in kHz.
pub fn chi_logical_effective(cfg: &DeviceConfig, mode: ChiMode) -> Result<f64> {
    cfg.validate()?;
    match mode {
        ChiMode::Analytic => {
            let denom = cfg.data.omega - cfg.data.alpha - cfg.ancilla.omega;
            if denom == 0.0 {
                return Err(DeviceError::BadDetuning(
                    "data f-level resonant with ancilla".into(),
                ));
            }
            let w = (std::f64::consts::SQRT_2 * cfg.coupling_g / denom).powi(2);
            Ok(cfg.resonator.chi_bias * w * 1e3)
        }
        ChiMode::Exact => {
            if cfg.coupling_g == 0.0 {
                return Ok(0.0);
            }
            // Photon number from the measured Stark shift: n_bar such that the
            // accumulated displacement n_bar * secant(n_bar) equals the
            // measured shift.
            let mut chi = chi_logical_at_photon_number(cfg, 1.0)?;
            let stark = cfg.stark_shift.abs();
            if stark == 0.0 {
                return Ok(chi);
            }
            let mut n_bar = 1.0f64;
            for _ in 0..64 {
                let n_next = (stark / chi.abs()).max(1e-3);
                let chi_next = chi_logical_at_photon_number(cfg, n_next)?;
                let done = (n_next - n_bar).abs() < 1e-9 * n_bar.max(1.0);
                n_bar = n_next;
                chi = chi_next;
                if done {
                    break;
                }
            }
            // Local slope d(shift)/dn at the operating photon number.
            let d = 0.5f64.min(n_bar / 2.0);
            let ep = chi_logical_at_photon_number(cfg, n_bar + d)? * (n_bar + d);
            let em = chi_logical_at_photon_number(cfg, n_bar - d)? * (n_bar - d);
            Ok((ep - em) / (2.0 * d))
        }
    }
}

/// Photon-shot-noise dephasing of the logical qubit during ancilla readout.
///
/// Returns (stark passthrough in kHz, dephasing rate in Hz):
/// gamma = [(chi/2) kappa / (Delta_dr^2 + (kappa/2)^2)] * delta_omega.
/// The bracket is a ratio of like units, so linear MHz are used throughout;
/// mixing one angular factor in would silently scale gamma by 2*pi.
pub fn shot_noise_dephasing(cfg: &DeviceConfig, chi_eff_khz: f64) -> Result<(f64, f64)> {
    cfg.validate()?;
    let chi_mhz = chi_eff_khz.abs() * 1e-3;
    let kappa = cfg.resonator.kappa_r;
    let delta = cfg.drive_detuning;
    if delta.abs() < 50.0 * chi_mhz {
        return Err(DeviceError::Precondition(format!(
            "drive detuning {delta} MHz not large against chi_eff {chi_mhz} MHz"
        )));
    }
    let bracket = (chi_mhz / 2.0) * kappa / (delta * delta + (kappa / 2.0).powi(2));
    let stark_hz = cfg.stark_shift.abs() * 1e3;
    Ok((cfg.stark_shift, bracket * stark_hz))
}

/// Data/ancilla pair with the memory-experiment device values — the fixture
/// the in-crate test suites share.
#[cfg(test)]
pub(crate) fn test_device() -> DeviceConfig {
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

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn decoupled_hamiltonian_has_bare_ladder_spectrum() {
        let mut cfg = test_device();
        cfg.coupling_g = 0.0;
        let h = build_static_hamiltonian(&cfg, None).unwrap();
        let (evals, _) = eigh(&h.m);
        let mut expected: Vec<f64> = Vec::new();
        for nd in 0..4 {
            for na in 0..4 {
                expected
                    .push(rad_per_us(cfg.data.bare_energy(nd) + cfg.ancilla.bare_energy(na)));
            }
        }
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (got, want) in evals.iter().zip(&expected) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let h = build_static_hamiltonian(&test_device(), Some(5200.0)).unwrap();
        assert!(h.is_hermitian(1e-9));
    }

    #[test]
    fn two_photon_crossing_location_from_bare_energies() {
        // Bare degeneracy of |1_Lg> and |0_Lf>:
        //   2*omega_q - alpha_q = 2*omega_a - alpha_a
        // => omega_a = omega_q - (alpha_q - alpha_a)/2 = 5183.5 MHz here.
        let cfg = test_device();
        let oracle = cfg.data.omega - (cfg.data.alpha - cfg.ancilla.alpha) / 2.0;
        assert_abs_diff_eq!(oracle, 5183.5, epsilon = 1e-12);
        let pairs = vec![(
            StateLabel::parse("1Lg").unwrap(),
            StateLabel::parse("0Lf").unwrap(),
        )];
        let scan = find_level_crossings(&cfg, (5120.0, 5250.0), &pairs).unwrap();
        assert_eq!(scan.found.len(), 1);
        assert_abs_diff_eq!(scan.found[0].ancilla_freq, oracle, epsilon = 2.0);
    }

    #[test]
    fn exchange_gap_between_flat_ladder_states() {
        // |1_Lg>-|ee> gap: matrix element sqrt(2) g, avoided gap 2*sqrt(2)*g.
        let cfg = test_device();
        let a = StateLabel::parse("1Lg").unwrap();
        let b = StateLabel::parse("ee").unwrap();
        let elem = bare_exchange_element(&cfg, &a, &b).unwrap();
        assert_abs_diff_eq!(elem, 2f64.sqrt() * 12.5, epsilon = 1e-9);
        let scan = find_level_crossings(&cfg, (4950.0, 5060.0), &[(a, b)]).unwrap();
        assert_eq!(scan.found.len(), 1);
        let cr = &scan.found[0];
        assert_abs_diff_eq!(cr.ancilla_freq, 5002.0, epsilon = 2.0);
        let rel = (cr.min_gap - 2.0 * elem).abs() / (2.0 * elem);
        assert!(rel < 0.03, "gap {} vs 2|V| {}", cr.min_gap, 2.0 * elem);
    }

    #[test]
    fn absent_crossing_is_reported_not_erred() {
        let cfg = test_device();
        let pairs = vec![(
            StateLabel::parse("eg").unwrap(),
            StateLabel::parse("0Le").unwrap(),
        )];
        // window far above the 5182 MHz degeneracy
        let scan = find_level_crossings(&cfg, (6500.0, 6600.0), &pairs).unwrap();
        assert!(scan.found.is_empty());
        assert_eq!(scan.absent.len(), 1);
    }

    #[test]
    fn chi_formula_harmonic_limit_vanishes() {
        assert_abs_diff_eq!(chi_formula(103.0, 0.0, -2086.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn chi_bias_arithmetic_at_design_coupling() {
        // direct arithmetic: -2 * 103^2 * 183 / ((-2086)*(-2269)) = -0.8203 MHz
        let cfg = test_device();
        let chi = chi_ancilla_bias(&cfg.resonator, &cfg.ancilla, cfg.ancilla.omega).unwrap();
        assert_abs_diff_eq!(chi, -0.8203, epsilon = 5e-4);
    }

    #[test]
    fn g_r_inverse_solve_matches_measured_chi() {
        let cfg = test_device();
        let g = g_r_from_chi(&cfg.resonator, &cfg.ancilla, cfg.ancilla.omega, -0.53).unwrap();
        assert_abs_diff_eq!(g, 82.8, epsilon = 0.1);
        // round trip through the forward formula
        let mut res = cfg.resonator.clone();
        res.g_r = g;
        let chi = chi_ancilla_bias(&res, &cfg.ancilla, cfg.ancilla.omega).unwrap();
        assert_abs_diff_eq!(chi, -0.53, epsilon = 1e-12);
    }

    #[test]
    fn chi_logical_analytic_value() {
        // chi_bias * (sqrt(2)*12.5 / -408)^2 = -0.995e-3 MHz = -0.995 kHz
        let cfg = test_device();
        let chi = chi_logical_effective(&cfg, ChiMode::Analytic).unwrap();
        assert_abs_diff_eq!(chi, -0.995, epsilon = 0.005);
    }

    #[test]
    fn chi_logical_decoupled_is_zero() {
        let mut cfg = test_device();
        cfg.coupling_g = 0.0;
        for mode in [ChiMode::Analytic, ChiMode::Exact] {
            assert_abs_diff_eq!(chi_logical_effective(&cfg, mode).unwrap(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn shot_noise_dephasing_value() {
        // bracket = (5e-4 * 0.3) / (0.64^2 + 0.15^2) = 3.4714e-4;
        // gamma = bracket * 70e3 Hz = 24.3 Hz
        let cfg = test_device();
        let (stark, gamma) = shot_noise_dephasing(&cfg, -1.0).unwrap();
        assert_abs_diff_eq!(stark, 70.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gamma, 24.3, epsilon = 0.1);
    }

    #[test]
    fn shot_noise_zero_drive_gives_zero() {
        let mut cfg = test_device();
        cfg.stark_shift = 0.0;
        let (_, gamma) = shot_noise_dephasing(&cfg, -1.0).unwrap();
        assert_abs_diff_eq!(gamma, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn shot_noise_linear_in_drive_power() {
        let cfg = test_device();
        let mut cfg2 = cfg.clone();
        cfg2.stark_shift = 2.0 * cfg.stark_shift;
        let (_, g1) = shot_noise_dephasing(&cfg, -1.0).unwrap();
        let (_, g2) = shot_noise_dephasing(&cfg2, -1.0).unwrap();
        assert_abs_diff_eq!(g2, 2.0 * g1, epsilon = 1e-9);
    }

    #[test]
    fn shot_noise_precondition_enforced() {
        let mut cfg = test_device();
        cfg.drive_detuning = 0.01;
        assert!(shot_noise_dephasing(&cfg, -1.0).is_err());
    }
}
