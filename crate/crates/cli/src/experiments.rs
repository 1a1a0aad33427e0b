//! Execution of each experiment kind against a resolved run, producing the
//! three report artifacts: an RFC-4180 `results.csv`, a JSON summary
//! fragment, and — when the experiment has a pulse program — a timed
//! `schedule.txt` with one item per line.

use crate::CliError;
use gfsim::analysis::{
    erasure_fraction_from_flag_rate, error_budget, fit_exponential, rb_fit, FitResult,
    PHYSICAL_GATES_PER_CLIFFORD,
};
use gfsim::config::{
    BellSection, BudgetSection, ChiSection, CrossingsSection, ExperimentSection, LifetimeSection,
    PsdSection, RbSection, ReadoutCalSection, ResolvedRun,
};
use gfsim::device::{
    chi_logical_at_photon_number, chi_logical_effective, find_level_crossings, ChiMode,
};
use gfsim::engine::AssignmentModel;
use gfsim::noise::{psd_from_spinlock, NoiseParams, SpinLockPoint};
use gfsim::protocols::{
    all_pauli_pairs, bell_target, run_lifetime, run_parity_bell, run_rb, tomography, DdScheme,
};
use gfsim::pulses::{compile_spin_locking, compile_xy4_cycle, GateSet, PulseSequence, SequenceItem};
use gfsim::qsys::StateLabel;
use rand::SeedableRng;
use serde_json::{json, Value};

pub struct ExperimentReport {
    pub csv: Vec<u8>,
    pub summary: Value,
    pub schedule: Option<String>,
    /// One-line human outcome printed to stdout.
    pub note: String,
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

/// Render a table as RFC-4180 CSV (CRLF line ends, quoting as needed).
fn csv_table(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(header).map_err(run_err)?;
    for row in rows {
        w.write_record(row).map_err(run_err)?;
    }
    w.into_inner().map_err(run_err)
}

/// Shortest round-trip decimal for a float; deterministic for equal inputs.
fn num(x: f64) -> String {
    format!("{x}")
}

pub fn execute(run: &ResolvedRun) -> Result<ExperimentReport, CliError> {
    match &run.experiment {
        ExperimentSection::Crossings(c) => crossings(run, c),
        ExperimentSection::Chi(c) => chi(run, c),
        ExperimentSection::Budget(b) => budget(b),
        ExperimentSection::Lifetime(l) => lifetime(run, l),
        ExperimentSection::Rb(r) => rb(run, r),
        ExperimentSection::Bell(b) => bell(run, b),
        ExperimentSection::Psd(p) => psd(run, p),
        ExperimentSection::ReadoutCal(r) => readout_cal(run, r),
    }
}

fn crossings(run: &ResolvedRun, c: &CrossingsSection) -> Result<ExperimentReport, CliError> {
    let mut parsed = Vec::with_capacity(c.pairs.len());
    for (a, b) in &c.pairs {
        parsed.push((
            StateLabel::parse(a).map_err(run_err)?,
            StateLabel::parse(b).map_err(run_err)?,
        ));
    }
    let range = (c.freq_start.mhz(), c.freq_stop.mhz());
    let scan = find_level_crossings(&run.device, range, &parsed).map_err(run_err)?;

    // Report pairs under the names the config used, not the canonical
    // letters, so rows stay greppable against the input.
    let label_for = |pair: &(StateLabel, StateLabel)| -> String {
        parsed
            .iter()
            .position(|p| p == pair)
            .map(|i| format!("{}-{}", c.pairs[i].0, c.pairs[i].1))
            .unwrap_or_else(|| format!("{}-{}", pair.0, pair.1))
    };

    let mut rows = Vec::new();
    let mut found_json = Vec::new();
    for cr in &scan.found {
        let label = label_for(&cr.pair);
        rows.push(vec![label.clone(), num(cr.ancilla_freq), num(cr.min_gap)]);
        found_json.push(json!({
            "pair": label,
            "freq_mhz": cr.ancilla_freq,
            "gap_mhz": cr.min_gap,
        }));
    }
    let absent: Vec<String> = scan.absent.iter().map(|p| label_for(p)).collect();

    Ok(ExperimentReport {
        csv: csv_table(&["pair", "freq_mhz", "gap_mhz"], &rows)?,
        summary: json!({
            "scan_mhz": [range.0, range.1],
            "found": found_json,
            "absent": absent,
        }),
        schedule: None,
        note: format!(
            "crossings: {} of {} pairs have an interior gap minimum in {:.0}-{:.0} MHz",
            scan.found.len(),
            parsed.len(),
            range.0,
            range.1
        ),
    })
}

fn chi(run: &ResolvedRun, c: &ChiSection) -> Result<ExperimentReport, CliError> {
    let analytic = chi_logical_effective(&run.device, ChiMode::Analytic).map_err(run_err)?;
    let exact = chi_logical_effective(&run.device, ChiMode::Exact).map_err(run_err)?;
    let at_n = chi_logical_at_photon_number(&run.device, c.n_bar).map_err(run_err)?;
    let (stark_khz, gamma_hz) = gfsim::device::shot_noise_dephasing(&run.device, exact)
        .map_err(run_err)?;

    let rows = vec![
        vec!["chi_analytic".into(), num(analytic), "kHz".into()],
        vec!["chi_exact".into(), num(exact), "kHz".into()],
        vec![format!("chi_at_n_bar_{}", c.n_bar), num(at_n), "kHz".into()],
        vec!["stark_shift".into(), num(stark_khz), "kHz".into()],
        vec!["shot_noise_dephasing".into(), num(gamma_hz), "Hz".into()],
    ];
    Ok(ExperimentReport {
        csv: csv_table(&["quantity", "value", "unit"], &rows)?,
        summary: json!({
            "chi_analytic_khz": analytic,
            "chi_exact_khz": exact,
            "n_bar": c.n_bar,
            "chi_at_n_bar_khz": at_n,
            "stark_shift_khz": stark_khz,
            "shot_noise_dephasing_hz": gamma_hz,
        }),
        schedule: None,
        note: format!(
            "chi: analytic {analytic:.3} kHz, exact {exact:.3} kHz, shot-noise dephasing {gamma_hz:.1} Hz"
        ),
    })
}

fn budget(b: &BudgetSection) -> Result<ExperimentReport, CliError> {
    let input = b.to_input();
    let budget = error_budget(&input).map_err(run_err)?;

    let mut rows = Vec::new();
    let mut rows_json = Vec::new();
    let mut aligned = format!("{:<28}{:>14}{:>14}\n", "term", "+Z", "-Z");
    for (term, plus, minus) in budget.rows() {
        rows.push(vec![term.to_string(), num(plus), num(minus)]);
        rows_json.push(json!({"term": term, "plus_z": plus, "minus_z": minus}));
        aligned.push_str(&format!("{term:<28}{plus:>14.4e}{minus:>14.4e}\n"));
    }

    Ok(ExperimentReport {
        csv: csv_table(&["term", "error_plus_z", "error_minus_z"], &rows)?,
        summary: json!({
            "input": serde_json::to_value(&input).map_err(run_err)?,
            "rows": rows_json,
            "total_plus_z": budget.total_plus_z,
            "total_minus_z": budget.total_minus_z,
            "total_average": budget.total_average,
        }),
        schedule: None,
        note: format!(
            "{aligned}average undetected error per cycle: {:.4e}",
            budget.total_average
        ),
    })
}

/// Optional exponential fit: protocols with little or no decay (short runs,
/// the ideal preset) fail the fit legitimately, which nulls the derived
/// fields instead of failing the run.
fn fit_json(fit: &Option<FitResult>) -> Value {
    match fit {
        Some(f) => json!({
            "time_constant_us": f.time_constant,
            "time_constant_err_us": f.time_constant_err,
            "amplitude": f.amplitude,
            "offset": f.offset,
            "rms_residual": f.rms_residual,
        }),
        None => Value::Null,
    }
}

fn lifetime(run: &ResolvedRun, l: &LifetimeSection) -> Result<ExperimentReport, CliError> {
    let gs = GateSet::calibrate(&run.device, run.gate_duration).map_err(run_err)?;
    let schedule = memory_schedule(l, &gs)?;
    let cfg = l.to_config(&run.instrument);
    let out = run_lifetime(&cfg, &run.device, &gs, &run.noise, run.seed).map_err(run_err)?;

    let mut rows = Vec::with_capacity(out.rounds.len());
    for r in &out.rounds {
        rows.push(vec![
            r.round.to_string(),
            num(r.time),
            r.alive.to_string(),
            num(r.survival),
            num(r.pops[0]),
            num(r.pops[1]),
            num(r.pops[2]),
            num(r.pops[3]),
            num(r.polarization),
        ]);
    }

    let times: Vec<f64> = out.rounds.iter().map(|r| r.time).collect();
    let survival: Vec<f64> = out.rounds.iter().map(|r| r.survival).collect();
    let polarization: Vec<f64> = out.rounds.iter().map(|r| r.polarization).collect();
    let survival_fit = fit_exponential(&times, &survival).ok();
    let polarization_fit = fit_exponential(&times, &polarization).ok();

    // Unfold the instrument from the flag rate: the observed per-cycle flag
    // probability mixes real erasures with false positives, so invert
    // flag = eps(1 - fn) + (1 - eps) fp before quoting an erasure lifetime.
    let fp = 0.5 * (cfg.instrument.p_false_pos_0l + cfg.instrument.p_false_pos_1l);
    let fn_total = cfg.instrument.false_negative_total();
    let mut erasure_fraction = None;
    let mut erasure_lifetime = None;
    if let Some(f) = &survival_fit {
        let flag_per_cycle = 1.0 - (-out.cycle_time / f.time_constant).exp();
        if let Ok(eps) = erasure_fraction_from_flag_rate(flag_per_cycle, fp, fn_total) {
            erasure_fraction = Some(eps);
            if eps > 0.0 && eps < 1.0 {
                erasure_lifetime = Some(-out.cycle_time / (1.0 - eps).ln());
            }
        }
    }

    let note = match (&survival_fit, &erasure_lifetime) {
        (Some(f), Some(t)) => format!(
            "lifetime: raw survival constant {:.1} us, erasure lifetime {:.1} us over {} rounds",
            f.time_constant,
            t,
            out.rounds.len()
        ),
        (Some(f), None) => format!(
            "lifetime: raw survival constant {:.1} us over {} rounds",
            f.time_constant,
            out.rounds.len()
        ),
        _ => format!("lifetime: {} rounds recorded (no exponential fit)", out.rounds.len()),
    };

    Ok(ExperimentReport {
        csv: csv_table(
            &[
                "round",
                "time_us",
                "alive",
                "survival",
                "p_g",
                "p_e",
                "p_f",
                "p_h",
                "polarization",
            ],
            &rows,
        )?,
        summary: json!({
            "initial_state": serde_json::to_value(l.initial_state).map_err(run_err)?,
            "dd": serde_json::to_value(l.dd).map_err(run_err)?,
            "cycle_time_us": out.cycle_time,
            "n_shots": l.n_shots,
            "rounds": out.rounds.len(),
            "survival_fit": fit_json(&survival_fit),
            "polarization_fit": fit_json(&polarization_fit),
            "flag_false_positive_per_cycle": fp,
            "flag_false_negative_total": fn_total,
            "erasure_fraction_per_cycle": erasure_fraction,
            "erasure_lifetime_us": erasure_lifetime,
        }),
        schedule: Some(schedule),
        note,
    })
}

/// The per-cycle pulse program the memory run executes, as schedule text.
fn memory_schedule(l: &LifetimeSection, gs: &GateSet) -> Result<String, CliError> {
    let cycle = l.cycle_time.us();
    let seq = match l.dd {
        DdScheme::Xy4 => compile_xy4_cycle(gs, cycle).map_err(run_err)?,
        DdScheme::SpinLock => {
            compile_spin_locking(gs, l.lock_rabi.mhz(), cycle).map_err(run_err)?
        }
        DdScheme::None => {
            let idle = cycle - gs.check_slot;
            if idle <= 0.0 {
                return Err(CliError::Run(format!(
                    "cycle_time {cycle} us does not clear the {} us check slot",
                    gs.check_slot
                )));
            }
            PulseSequence::new(vec![
                SequenceItem::Delay { duration: idle },
                SequenceItem::ErasureCheck { slot: gs.check_slot },
            ])
        }
    };
    Ok(seq.schedule_text())
}

fn rb(run: &ResolvedRun, r: &RbSection) -> Result<ExperimentReport, CliError> {
    let gs = GateSet::calibrate(&run.device, run.gate_duration).map_err(run_err)?;
    let cfg = r.to_config(&run.instrument);
    let out = run_rb(&cfg, &run.device, &gs, &run.noise, run.seed).map_err(run_err)?;

    let blank = String::new();
    let mut rows = Vec::new();
    for (i, &m) in out.raw.lengths.iter().enumerate() {
        let mut row = vec![
            m.to_string(),
            num(out.raw.mean_return[i]),
            num(out.raw.histogram[i][0]),
            num(out.raw.histogram[i][1]),
            num(out.raw.histogram[i][2]),
        ];
        match &out.post_selected {
            Some(ps) => row.extend([num(ps.mean_return[i]), num(ps.survival[i])]),
            None => row.extend([blank.clone(), blank.clone()]),
        }
        rows.push(row);
    }

    // Raw curve: fit the all-outcome ground fraction to A p^m (no floor).
    // Leakage makes loss absorbing to first order, so 1 - p is the full
    // error per Clifford, not (1 - p)/2.
    let raw_ground: Vec<f64> = out.raw.histogram.iter().map(|h| h[0]).collect();
    let raw_fit = rb_fit(&out.raw.lengths, &raw_ground, Some(0.0)).ok();
    let raw_json = match &raw_fit {
        Some(f) => {
            let err = 1.0 - f.decay;
            json!({
                "decay": f.decay,
                "error_per_clifford": err,
                "error_per_physical_gate": err / PHYSICAL_GATES_PER_CLIFFORD,
                "convention": "total ground-fraction loss per Clifford over all outcomes",
            })
        }
        None => Value::Null,
    };
    // Post-selected curve: the kept code-space return decays to 1/2, so the
    // usual (1 - p)/2 error applies.
    let ps_fit = out
        .post_selected
        .as_ref()
        .and_then(|ps| rb_fit(&ps.lengths, &ps.mean_return, Some(0.5)).ok());
    let ps_json = match &ps_fit {
        Some(f) => json!({
            "decay": f.decay,
            "error_per_clifford": f.error_per_clifford,
            "error_per_clifford_err": f.error_per_clifford_err,
            "error_per_physical_gate": f.error_per_physical_gate,
            "convention": "return-probability error (1 - p)/2 among kept code outcomes",
        }),
        None => Value::Null,
    };

    let note = match (&raw_fit, &ps_fit) {
        (Some(rf), Some(pf)) => format!(
            "rb: raw {:.3e} per Clifford, post-selected {:.3e}",
            1.0 - rf.decay,
            pf.error_per_clifford
        ),
        (Some(rf), None) => format!("rb: raw {:.3e} per Clifford", 1.0 - rf.decay),
        _ => "rb: curves recorded (no decay fit)".to_string(),
    };

    Ok(ExperimentReport {
        csv: csv_table(
            &[
                "length",
                "raw_return",
                "raw_p_0l",
                "raw_p_e",
                "raw_p_1l",
                "ps_return",
                "ps_survival",
            ],
            &rows,
        )?,
        summary: json!({
            "lengths": out.raw.lengths,
            "n_randomizations": r.n_randomizations,
            "n_shots_per_length": r.n_shots_per_length,
            "raw_fit": raw_json,
            "post_selected_fit": ps_json,
        }),
        schedule: None,
        note,
    })
}

fn bell(run: &ResolvedRun, b: &BellSection) -> Result<ExperimentReport, CliError> {
    let noise_q2: NoiseParams = b
        .noise_q2
        .as_ref()
        .map(|n| n.to_noise())
        .unwrap_or_else(|| run.noise.clone());
    let cr = b.to_cr();
    let out = run_parity_bell(&cr, &run.noise, &noise_q2, &run.instrument, b.with_erasure)
        .map_err(run_err)?;

    let rows = vec![
        vec!["g".into(), num(out.p_herald_g), num(out.fidelity_g), num(out.accept_g)],
        vec!["e".into(), num(out.p_herald_e), num(out.fidelity_e), num(out.accept_e)],
    ];

    let tomo = if b.tomography_shots > 0 {
        let bases = all_pauli_pairs();
        let rec_g = tomography(&out.rho_herald_g, &bases, b.tomography_shots, run.seed)
            .map_err(run_err)?;
        let rec_e = tomography(&out.rho_herald_e, &bases, b.tomography_shots, run.seed + 1)
            .map_err(run_err)?;
        let f_g = rec_g
            .fidelity_pure(&bell_target(false, b.with_erasure))
            .map_err(run_err)?;
        let f_e = rec_e
            .fidelity_pure(&bell_target(true, b.with_erasure))
            .map_err(run_err)?;
        json!({
            "shots_per_basis": b.tomography_shots,
            "fidelity_g": f_g,
            "fidelity_e": f_e,
        })
    } else {
        Value::Null
    };

    Ok(ExperimentReport {
        csv: csv_table(&["herald", "probability", "fidelity", "acceptance"], &rows)?,
        summary: json!({
            "with_erasure": b.with_erasure,
            "herald_g": {
                "probability": out.p_herald_g,
                "fidelity": out.fidelity_g,
                "acceptance": out.accept_g,
            },
            "herald_e": {
                "probability": out.p_herald_e,
                "fidelity": out.fidelity_e,
                "acceptance": out.accept_e,
            },
            "tomography": tomo,
        }),
        schedule: Some(bell_schedule(&cr, run.noise.readout_len, b.with_erasure)),
        note: format!(
            "bell: herald-g fidelity {:.4} (p = {:.3}), herald-e {:.4} (p = {:.3})",
            out.fidelity_g, out.p_herald_g, out.fidelity_e, out.p_herald_e
        ),
    })
}

/// Timed program of the parity experiment, one item per line, matching the
/// pulse-schedule text format.
fn bell_schedule(cr: &gfsim::protocols::CrParams, readout_len: f64, with_erasure: bool) -> String {
    let mut t = 0.0;
    let mut out = String::new();
    let mut push = |t: &mut f64, channel: &str, what: &str, dur: f64| {
        out.push_str(&format!("{:.3} {channel} {what} dur={dur:.3}\n", *t));
        *t += dur;
    };
    push(&mut t, "q1-ancilla", "conditional-rabi", cr.duration);
    push(&mut t, "q2-ancilla", "conditional-rabi", cr.duration);
    push(&mut t, "ancilla", "readout", readout_len);
    if with_erasure {
        push(&mut t, "-", "storage", cr.erasure_wait);
        push(&mut t, "q1", "erasure_check", 0.0);
        push(&mut t, "q2", "erasure_check", 0.0);
    }
    out
}

fn psd(run: &ResolvedRun, p: &PsdSection) -> Result<ExperimentReport, CliError> {
    let t1_ef = p.t1_ef.map(|t| t.us()).unwrap_or(run.noise.t1_ef);
    let points: Vec<SpinLockPoint> = p
        .points
        .iter()
        .map(|q| SpinLockPoint {
            rabi_freq: q.rabi.mhz(),
            t1rho: q.t1rho.us(),
        })
        .collect();
    let psd = psd_from_spinlock(&points, t1_ef).map_err(run_err)?;

    let mut rows = Vec::new();
    let mut json_points = Vec::new();
    for (inp, out) in points.iter().zip(&psd) {
        rows.push(vec![
            num(out.freq),
            num(inp.t1rho),
            num(out.s_omega),
            out.clipped.to_string(),
        ]);
        json_points.push(json!({
            "freq_mhz": out.freq,
            "t1rho_us": inp.t1rho,
            "s_omega_per_us": out.s_omega,
            "clipped": out.clipped,
        }));
    }
    let clipped = psd.iter().filter(|p| p.clipped).count();

    Ok(ExperimentReport {
        csv: csv_table(&["freq_mhz", "t1rho_us", "s_omega_per_us", "clipped"], &rows)?,
        summary: json!({
            "t1_ef_us": t1_ef,
            "points": json_points,
            "clipped_points": clipped,
        }),
        schedule: None,
        note: format!(
            "psd: {} spectral points extracted against a {t1_ef} us f-lifetime backbone ({clipped} clipped)",
            psd.len()
        ),
    })
}

fn readout_cal(run: &ResolvedRun, r: &ReadoutCalSection) -> Result<ExperimentReport, CliError> {
    let model = AssignmentModel::Matrix { m: r.confusion };
    model.validate().map_err(run_err)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(run.seed);

    let names = ["g", "e", "f"];
    let mut rows = Vec::new();
    let mut rows_json = Vec::new();
    let mut max_dev = 0.0f64;
    for prepared in 0..3 {
        let mut counts = [0.0f64; 3];
        for _ in 0..r.n_shots {
            counts[model.assign(prepared, &mut rng)] += 1.0;
        }
        let freq: Vec<f64> = counts.iter().map(|c| c / r.n_shots as f64).collect();
        for (k, f) in freq.iter().enumerate() {
            max_dev = max_dev.max((f - r.confusion[prepared][k]).abs());
        }
        let corrected =
            gfsim::analysis::correct_readout(&counts, &r.confusion).map_err(run_err)?;
        rows.push(vec![
            names[prepared].to_string(),
            num(freq[0]),
            num(freq[1]),
            num(freq[2]),
            num(corrected.populations[0]),
            num(corrected.populations[1]),
            num(corrected.populations[2]),
            num(corrected.clipped_mass),
        ]);
        rows_json.push(json!({
            "prepared": names[prepared],
            "assigned": freq,
            "corrected": corrected.populations,
            "clipped_mass": corrected.clipped_mass,
        }));
    }

    Ok(ExperimentReport {
        csv: csv_table(
            &[
                "prepared",
                "assigned_g",
                "assigned_e",
                "assigned_f",
                "corrected_g",
                "corrected_e",
                "corrected_f",
                "clipped_mass",
            ],
            &rows,
        )?,
        summary: json!({
            "n_shots": r.n_shots,
            "target_matrix": r.confusion,
            "rows": rows_json,
            "max_abs_deviation": max_dev,
        }),
        schedule: None,
        note: format!(
            "readout-cal: sampled {} shots per prepared level, max |deviation| {:.4}",
            r.n_shots, max_dev
        ),
    })
}
