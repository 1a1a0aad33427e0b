// temporary scratch probe - delete before finalizing
use gfsim::device::{DeviceConfig, ResonatorParams, TransmonParams};
use gfsim::pulses::{apply_logical_z, GateSet};

fn dev() -> DeviceConfig {
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
fn probe_gateset_calibration() {
    use gfsim::device::rad_per_us;
    use gfsim::engine::{DriveTerm, EvolutionSpec};
    use gfsim::qsys::{ket, OperatorMatrix, StateLabel};
    use num_complex::Complex64 as C64;

    let cfg = dev();
    let t0 = std::time::Instant::now();
    let gs = GateSet::calibrate(&cfg, 0.08).unwrap();
    println!(
        "calibrated in {:?}: pi A={:.3} carrier={:.4} drag={:.4} | pi2 A={:.3} carrier={:.4} drag={:.4} vz={:.4}",
        t0.elapsed(),
        gs.pi.amplitude,
        gs.pi.carrier,
        gs.pi.drag_coeff,
        gs.pi2.amplitude,
        gs.pi2.carrier,
        gs.pi2.drag_coeff,
        gs.pi2_virtual_z,
    );
    assert_eq!(gs.pi.carrier, gs.pi2.carrier, "shared carrier");

    let run = |shape: &gfsim::pulses::PulseShape,
               psi0: &nalgebra::DVector<C64>|
     -> nalgebra::DVector<C64> {
        let ladder = cfg.data.omega + shape.carrier;
        let diag: Vec<f64> = (0..4)
            .map(|n| rad_per_us(cfg.data.bare_energy(n) - n as f64 * ladder))
            .collect();
        let spec = EvolutionSpec {
            h_static: OperatorMatrix::from_diag_single(4, &diag),
            drives: vec![DriveTerm {
                lower_op: OperatorMatrix::lowering(4),
                shape: shape.clone(),
                t_start: 0.0,
                detuning_rad: 0.0,
            }],
            collapses: vec![],
            dt_pulse: 1e-4,
            dt_idle: 5e-3,
            sample_dt: None,
            frame: vec![ladder],
        };
        gfsim::engine::evolve_state_noiseless(&spec, psi0, (0.0, shape.duration)).unwrap()
    };

    let mi = C64::new(0.0, -1.0);
    let r = C64::new(1.0 / std::f64::consts::SQRT_2, 0.0);
    let gk = ket(&[4], &StateLabel::new(vec![0])).unwrap();
    let fk = ket(&[4], &StateLabel::new(vec![2])).unwrap();
    let plus = (&gk + &fk) * r;

    // pi gate: bare pulse
    let pi_cases: Vec<(nalgebra::DVector<C64>, nalgebra::DVector<C64>)> = vec![
        (gk.clone(), &fk * mi),
        (fk.clone(), &gk * mi),
        (plus.clone(), &plus * mi),
    ];
    for (i, (p0, t)) in pi_cases.iter().enumerate() {
        let out = run(&gs.pi, p0);
        let f = t.dotc(&out).norm_sqr();
        let e = out[1].norm_sqr();
        let h = out[3].norm_sqr();
        println!("pi case {i}: F={f:.7} p_e={e:.3e} p_h={h:.3e}");
        assert!(f > 0.999);
    }

    // pi/2 gate: virtual-z half on each side of the pulse
    let pi2_cases: Vec<(nalgebra::DVector<C64>, nalgebra::DVector<C64>)> = vec![
        (gk.clone(), (&gk + &fk * mi) * r),
        (fk.clone(), (&gk * mi + &fk) * r),
        (
            plus.clone(),
            &plus * C64::new(0.0, -std::f64::consts::FRAC_PI_4).exp(),
        ),
    ];
    for (i, (p0, t)) in pi2_cases.iter().enumerate() {
        let mut pin = p0.clone();
        apply_logical_z(&mut pin, 0.5 * gs.pi2_virtual_z);
        let mut out = run(&gs.pi2, &pin);
        apply_logical_z(&mut out, 0.5 * gs.pi2_virtual_z);
        let f = t.dotc(&out).norm_sqr();
        let e = out[1].norm_sqr();
        let h = out[3].norm_sqr();
        println!("pi2 case {i}: F={f:.7} p_e={e:.3e} p_h={h:.3e}");
        assert!(f > 0.999);
    }
}
