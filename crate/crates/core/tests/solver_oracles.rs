use kfl_core::analysis::level_position;
use kfl_core::model::{Frame, InitialCondition, Nonlinearity};
use kfl_core::solver::{run, DtSchedule, Formulation, MemorySink, Snapshot, SolverConfig};

fn position_at(sink: &MemorySink, t: f64) -> f64 {
    sink.trace.iter().find(|r| r.t == t && r.level == 0.5).expect("trace row").position_lab
}

fn smooth_front() -> InitialCondition {
    let xs: Vec<f64> = (0..=120).map(|j| -3.0 + 0.05 * j as f64).collect();
    let us = xs.iter().map(|x| (std::f64::consts::PI * (x + 3.0) / 12.0).cos().powi(2)).collect();
    InitialCondition::custom_table(xs, us)
}

#[test]
fn step_data_front_advances_monotonically_in_the_lab() {
    let cfg = SolverConfig { dx: 0.04, formulation: Formulation::UForm, ..Default::default() };
    let mut sink = MemorySink::default();
    run(cfg, Nonlinearity::fisher(), &InitialCondition::step(), &mut sink).unwrap();
    let late: Vec<f64> = sink.trace.iter().filter(|r| r.t >= 10.0).map(|r| r.position_lab).collect();
    assert!(late.len() > 100);
    assert!(late.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn u_form_stays_in_the_unit_interval_for_several_nonlinearities() {
    let times: Vec<f64> = (1..=20).map(|j| 10.0 * j as f64).collect();
    for nl in [Nonlinearity::fisher(), Nonlinearity::cubic(), Nonlinearity::fisher_b(0.5)] {
        let cfg = SolverConfig {
            dx: 0.05,
            t_end: 200.0,
            formulation: Formulation::UForm,
            snapshot_times: times.clone(),
            ..Default::default()
        };
        let mut sink = MemorySink::default();
        run(cfg, nl, &InitialCondition::step_plus_bump(4.0, 2.0, 0.6), &mut sink).unwrap();
        for snap in &sink.snapshots {
            let (lo, hi) =
                snap.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            assert!(lo >= -1e-8 && hi <= 1.0 + 1e-8, "t = {}: [{lo}, {hi}]", snap.t);
        }
    }
}

#[test]
fn level_position_converges_at_second_order() {
    let sigma: Vec<f64> = [0.16, 0.08, 0.04]
        .iter()
        .map(|&dx| {
            let cfg = SolverConfig { dx, formulation: Formulation::UForm, ..Default::default() };
            let mut sink = MemorySink::default();
            run(cfg, Nonlinearity::fisher(), &InitialCondition::step(), &mut sink).unwrap();
            position_at(&sink, 1e3)
        })
        .collect();
    let coarse = (sigma[1] - sigma[0]).abs();
    let fine = (sigma[2] - sigma[1]).abs();
    assert!(coarse <= 4.0 * fine, "differences {coarse} and {fine}");
    let order = (coarse / fine).log2();
    assert!((1.7..=2.3).contains(&order), "observed order {order}");
}

fn final_snapshot(formulation: Formulation, frame: Frame, dx: f64, t_end: f64) -> (Snapshot, MemorySink) {
    let cfg = SolverConfig {
        dx,
        t_end,
        frame,
        formulation,
        dt: DtSchedule { courant: 1e6, ramp_time: 1.0, dt_max: 0.01 },
        snapshot_times: vec![t_end],
        ..Default::default()
    };
    let mut sink = MemorySink::default();
    run(cfg, Nonlinearity::fisher(), &smooth_front(), &mut sink).unwrap();
    (sink.snapshots.last().unwrap().clone(), sink)
}

#[test]
fn u_and_v_forms_agree_on_a_coarse_grid() {
    let dx = 0.01;
    let (u_snap, u_sink) = final_snapshot(Formulation::UForm, Frame::Bramson, dx, 100.0);
    let (v_snap, v_sink) = final_snapshot(Formulation::VForm, Frame::Bramson, dx, 100.0);
    assert_eq!(u_snap.grid, v_snap.grid);
    let (u, v) = (u_snap.u_values(), v_snap.u_values());
    let worst = u_snap
        .grid
        .nodes()
        .zip(u.iter().zip(&v))
        .filter(|(x, _)| (-10.0..=30.0).contains(x))
        .map(|(_, (a, b))| (a - b).abs())
        .fold(0.0, f64::max);
    // The discrepancy is spatial and second order: 1.07e-5 at dx = 0.002.
    assert!(worst < 4e-4, "max |u - e^-x v| = {worst:e}");
    for t in [10.0, 100.0] {
        let d = (position_at(&u_sink, t) - position_at(&v_sink, t)).abs();
        assert!(d <= 5.0 * dx, "t = {t}: positions differ by {d}");
    }
}

#[test]
fn level_positions_do_not_depend_on_the_frame() {
    let dx = 0.04;
    let (bramson, b_sink) = final_snapshot(Formulation::VForm, Frame::Bramson, dx, 200.0);
    let (refined, r_sink) = final_snapshot(Formulation::VForm, Frame::Refined, dx, 200.0);
    for t in [10.0, 100.0] {
        let d = (position_at(&b_sink, t) - position_at(&r_sink, t)).abs();
        assert!(d <= 5.0 * dx, "t = {t}: {d}");
    }
    let lab = |s: &Snapshot| level_position(&s.grid, &s.u_values(), 0.5).unwrap().position + s.frame.shift(s.t);
    assert!((lab(&bramson) - lab(&refined)).abs() <= 5.0 * dx);
}
