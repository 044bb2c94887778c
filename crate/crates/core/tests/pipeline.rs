//! End-to-end runs of the simulate and oracle commands.

use std::path::Path;

use simshield::runner::{cmd_oracle, cmd_simulate, preset, InitialState, ModulationConfig, Scenario, TimeUnit};

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

fn single_channel(gamma: f64, horizon: f64, step: f64) -> Scenario {
    let mut s = preset("fig2_unmodulated").unwrap();
    s.levels = vec![1];
    s.omega = vec![0.5];
    s.bath.gamma = gamma;
    s.bath.eta_over_pi = vec![0.0];
    s.bath.t_corr = vec![1.0];
    s.bath.positions = vec![0.0];
    s.modulation = ModulationConfig::None;
    s.initial_state = InitialState::Explicit { amplitudes: vec![[1.0, 0.0]] };
    s.time.horizon = horizon;
    s.time.step = step;
    s.time.unit = TimeUnit::Absolute;
    s
}

fn simulate(s: &Scenario) -> (Vec<String>, Vec<Vec<f64>>) {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_simulate(s, dir.path()).unwrap();
    assert_eq!(out.exit_code, 0);
    assert!(dir.path().join("manifest.json").exists());
    read_csv(&dir.path().join("fidelity.csv"))
}

#[test]
fn uncoupled_register_keeps_full_fidelity() {
    let mut s = preset("fig2_iit").unwrap();
    s.bath.gamma = 0.0;
    s.time.unit = TimeUnit::Absolute;
    s.time.horizon = 20.0;
    let (h, rows) = simulate(&s);
    let f = column(&h, "F");
    assert!(rows.iter().all(|r| r[f] == 1.0));
}

#[test]
fn fidelity_rows_factorize_on_presets() {
    for name in ["fig2_global", "fig2_iip", "fig2_iit"] {
        let (h, rows) = simulate(&preset(name).unwrap());
        let (f, fp, fc) = (column(&h, "F"), column(&h, "F_p"), column(&h, "F_c"));
        for r in &rows {
            assert!((r[f] - r[fp] * r[fc]).abs() <= 1e-12, "{name}");
            for x in [r[f], r[fp], r[fc]] {
                assert!((0.0..=1.0 + 1e-9).contains(&x), "{name}");
            }
        }
    }
}

#[test]
fn fig2_final_fidelity_ordering() {
    let last_f = |name: &str| {
        let (h, rows) = simulate(&preset(name).unwrap());
        let r = rows.last().unwrap();
        assert_eq!(r[0], 100.0);
        r[column(&h, "F")]
    };
    let (iit, iip, global) = (last_f("fig2_iit"), last_f("fig2_iip"), last_f("fig2_global"));
    assert!(iit > iip && iip > global, "IIT {iit}, IIP {iip}, global {global}");
}

#[test]
fn fig2_iip_preserves_correlation() {
    let (h, rows) = simulate(&preset("fig2_iip").unwrap());
    let fc = column(&h, "F_c");
    let min = rows.iter().map(|r| r[fc]).fold(f64::INFINITY, f64::min);
    assert!(min >= 0.99, "min F_c = {min}");
}

#[test]
fn jmatrix_labels_follow_channel_order() {
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&preset("fig2_iit").unwrap(), dir.path()).unwrap();
    let (h, rows) = read_csv(&dir.path().join("jmatrix.csv"));
    assert_eq!(h.len(), 1 + 2 * 16);
    assert_eq!(h[1], "Re_J[A1_A1]");
    assert_eq!(h[2], "Im_J[A1_A1]");
    assert_eq!(h[h.len() - 1], "Im_J[B2_B2]");
    assert_eq!(rows.len(), 101);
    assert!(rows[0][1..].iter().all(|&x| x == 0.0));
}

#[test]
fn oracle_without_coupling_has_zero_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let s = single_channel(0.0, 10.0, 1.0);
    cmd_oracle(&s, 500, dir.path()).unwrap();
    let (h, rows) = read_csv(&dir.path().join("oracle.csv"));
    let d = column(&h, "max_deviation");
    assert!(rows.iter().all(|r| r[d] == 0.0));
}

#[test]
fn oracle_matches_weak_coupling_decay() {
    let dir = tempfile::tempdir().unwrap();
    let s = single_channel(0.01, 50.0, 5.0);
    let out = cmd_oracle(&s, 2000, dir.path()).unwrap();
    let (h, rows) = read_csv(&dir.path().join("oracle.csv"));
    let (d, rec) = (column(&h, "max_deviation"), column(&h, "recurrence"));
    let worst = rows.iter().map(|r| r[d]).fold(0.0, f64::max);
    assert!(worst < 0.02, "max deviation {worst}");
    assert!(rows.iter().all(|r| r[rec] == 0.0));
    assert_eq!(out.manifest.diagnostics["recurrence_rows"], 0);
}

#[test]
fn oracle_flags_rows_past_recurrence() {
    let dir = tempfile::tempdir().unwrap();
    let s = single_channel(0.01, 400.0, 100.0);
    let out = cmd_oracle(&s, 500, dir.path()).unwrap();
    let t_rec = out.manifest.diagnostics["recurrence_time"].as_f64().unwrap();
    assert!(t_rec < 400.0, "recurrence time {t_rec}");
    let (h, rows) = read_csv(&dir.path().join("oracle.csv"));
    let rec = column(&h, "recurrence");
    for r in &rows {
        assert_eq!(r[rec] == 1.0, r[0] > t_rec, "t = {}", r[0]);
    }
}
