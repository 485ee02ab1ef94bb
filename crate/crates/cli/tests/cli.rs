use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TEC: &str = r#"{"mode":{"mfd_um":30.0,"wavelength_um":1.55,"modes":[{"l":0,"p":0,"weight":0.93},{"l":0,"p":1,"weight":0.07}]}}"#;
const SMF: &str =
    r#"{"mode":{"mfd_um":10.4,"wavelength_um":1.55,"modes":[{"l":0,"p":0,"weight":1.0}]},"n_events":100000,"seed":7}"#;

fn tofbeam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tofbeam"))
        .args(args)
        .env_remove("TOFBEAM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(
        v["error"]["kind"].is_string() && v["error"]["message"].is_string(),
        "{v}"
    );
    v
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Header and rows of a CSV; every row must have the header's width and
/// every cell must parse as a number.
fn numeric_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            assert_eq!(rec.len(), header.len());
            rec.iter()
                .map(|c| c.parse::<f64>().unwrap_or_else(|_| panic!("{c:?} in {path:?}")))
                .collect()
        })
        .collect();
    (header, rows)
}

/// Root is `<svg>`, every element closes, and nothing trails the root.
fn assert_well_formed_svg(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let body = text.trim();
    let body = body
        .strip_prefix("<?xml")
        .map_or(body, |rest| &rest[rest.find("?>").unwrap() + 2..])
        .trim();
    assert!(body.starts_with("<svg"), "{path:?}");
    let mut stack: Vec<String> = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('<') {
        let close = open + rest[open..].find('>').expect("unterminated tag");
        let tag = &rest[open + 1..close];
        if let Some(name) = tag.strip_prefix('/') {
            assert_eq!(stack.pop().as_deref(), Some(name.trim()), "{path:?}");
            if stack.is_empty() {
                assert!(rest[close + 1..].trim().is_empty(), "content after root in {path:?}");
            }
        } else if !tag.ends_with('/') && !tag.starts_with('!') && !tag.starts_with('?') {
            stack.push(tag.split_whitespace().next().unwrap().to_string());
        }
        rest = &rest[close + 1..];
    }
    assert!(stack.is_empty(), "unclosed {stack:?} in {path:?}");
}

#[test]
fn simulate_then_analyze_emits_valid_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "smf.json", SMF);
    let events = dir.path().join("events.csv");
    let sim = stdout_json(&tofbeam(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&events),
        "--svg",
    ]));
    assert_eq!(sim["events"], 100_000);
    assert_eq!(sim["seed"], 7);
    assert!(sim["acceptance_rate"].as_f64().unwrap() > 0.0);
    assert!((sim["pitch_dt_ps"].as_f64().unwrap() - 215.15).abs() < 0.01);

    let (header, rows) = numeric_csv(&events);
    assert_eq!(
        header,
        [
            "event_id",
            "true_column",
            "true_x_um",
            "true_y_um",
            "t_pos_ps",
            "t_neg_ps"
        ]
    );
    assert_eq!(rows.len(), 100_000);
    assert_well_formed_svg(&events.with_extension("svg"));

    let out = dir.path().join("analysis");
    let summary = stdout_json(&tofbeam(&[
        "analyze",
        "--events",
        s(&events),
        "--out",
        s(&out),
        "--svg",
    ]));
    assert_eq!(summary["events"], 100_000);
    assert_eq!(summary["misassigned"], 0);
    for key in ["assigned", "rejected", "comb", "fit", "tail_excess_2w", "files"] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
    let pitch = summary["comb"]["pitch_ps"].as_f64().unwrap();
    assert!((pitch - 215.0).abs() < 0.5);

    let fit: Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let mfd = fit["mfd_um"].as_f64().unwrap();
    assert!((mfd - 10.4).abs() < 0.2, "{mfd}");
    for key in ["mfd_sigma_um", "center_x_um", "chi2_per_dof"] {
        assert!(fit[key].is_f64(), "fit.json lacks {key}");
    }
    let weights = fit["weights"].as_array().unwrap();
    let total: f64 = weights.iter().map(|w| w["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    for w in weights {
        assert!(w["p"].is_u64() && w["sigma"].as_f64().unwrap() >= 0.0);
    }

    let (h, rows) = numeric_csv(&out.join("histogram.csv"));
    assert_eq!(h, ["bin_lo_ps", "bin_hi_ps", "count"]);
    assert_eq!(rows.iter().map(|r| r[2]).sum::<f64>(), 100_000.0);
    let (h, rows) = numeric_csv(&out.join("profile.csv"));
    assert_eq!(h, ["x_um", "count"]);
    assert_eq!(rows.len(), 17);
    assert!(rows.windows(2).all(|w| (w[1][0] - w[0][0] - 2.08).abs() < 1e-9));
    let (h, rows) = numeric_csv(&out.join("tail.csv"));
    assert_eq!(h, ["x_abs_um", "measured", "fit", "excess"]);
    assert!(rows.iter().all(|r| (r[1] - r[2] - r[3]).abs() < 1e-12));
    for svg in ["profile.svg", "tail.svg", "comb.svg"] {
        assert_well_formed_svg(&out.join(svg));
    }
}

#[test]
fn tec_mixture_reports_higher_order_weight() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tec.json", TEC);
    let events = dir.path().join("tec.csv");
    stdout_json(&tofbeam(&[
        "simulate",
        "--config",
        s(&cfg),
        "--n",
        "300000",
        "--seed",
        "3",
        "--out",
        s(&events),
    ]));
    let out = dir.path().join("fit");
    let summary = stdout_json(&tofbeam(&[
        "analyze",
        "--events",
        s(&events),
        "--max-p",
        "2",
        "--out",
        s(&out),
    ]));
    let weights = summary["fit"]["weights"].as_array().unwrap();
    let p1 = weights.iter().find(|w| w["p"] == 1).expect("p=1 weight reported");
    let p1 = p1["weight"].as_f64().unwrap();
    assert!((p1 - 0.07).abs() < 0.02, "{p1}");
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tec.json", TEC);
    let run = |name: &str| {
        let p = dir.path().join(name);
        stdout_json(&tofbeam(&[
            "simulate",
            "--config",
            s(&cfg),
            "--n",
            "20000",
            "--seed",
            "11",
            "--out",
            s(&p),
        ]));
        std::fs::read(p).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn zero_events_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tec.json", TEC);
    let out = tofbeam(&[
        "simulate",
        "--config",
        s(&cfg),
        "--n",
        "0",
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("n_events must be ≥ 1"));
}

#[test]
fn empty_events_csv_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.csv", "");
    let out = tofbeam(&["analyze", "--events", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    error_json(&out);
}

#[test]
fn malformed_row_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.csv",
        "event_id,true_column,true_x_um,true_y_um,t_pos_ps,t_neg_ps\n0,0,0,0,5000,5000\n1,0,0,0,oops,5000\n",
    );
    let out = tofbeam(&["analyze", "--events", s(&bad), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn couple_examples() {
    let v = stdout_json(&tofbeam(&[
        "couple",
        "--mfd-um",
        "10.5",
        "--diameter-um",
        "20",
        "--offset-um",
        "0",
    ]));
    // aligned Gaussian on a disk: 1 - exp(-2 R² / w²)
    let closed = 1.0 - (-2.0f64 * 10.0 * 10.0 / (5.25 * 5.25)).exp();
    assert!((v["efficiency"].as_f64().unwrap() - closed).abs() < 1e-9, "{v}");
    assert!((v["efficiency"].as_f64().unwrap() - 0.9993).abs() < 1e-4);
    assert!((v["loss"].as_f64().unwrap() + v["efficiency"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let v = stdout_json(&tofbeam(&[
        "couple",
        "--loss-budget",
        "0.01",
        "--diameter-um",
        "35",
        "--mfd-um",
        "10.5",
        "--solve-offset",
    ]));
    assert!((v["max_offset_um"].as_f64().unwrap() - 11.2).abs() < 0.1, "{v}");

    let v = stdout_json(&tofbeam(&[
        "couple",
        "--mfd-um",
        "10.5",
        "--diameter-um",
        "20",
        "--offset-um",
        "4.5",
        "--loss-budget",
        "0.01",
    ]));
    assert_eq!(v["within_budget"], false);
}

#[test]
fn couple_grid_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("grid.csv");
    let v = stdout_json(&tofbeam(&[
        "couple",
        "--mfd-um",
        "10.5",
        "--grid",
        "--diameters",
        "10,20,35",
        "--offsets",
        "0,4.5",
        "--out",
        s(&csv_path),
        "--svg",
    ]));
    assert!(v.is_object());
    let (h, rows) = numeric_csv(&csv_path);
    assert_eq!(h, ["diameter_um", "offset_0_um", "offset_4.5_um"]);
    assert_eq!(rows.len(), 3);
    assert!((rows[1][2] - 0.0287).abs() < 0.001);
    assert_well_formed_svg(&csv_path.with_extension("svg"));
}

#[test]
fn couple_rejects_bad_flags() {
    let out = tofbeam(&["couple", "--mfd-um", "10.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
    let out = tofbeam(&["couple", "--mfd-um", "-1", "--diameter-um", "20"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn builtin_stack_conserves_energy() {
    let v = stdout_json(&tofbeam(&[
        "stack",
        "--builtin-paper",
        "--mosi-n",
        "5.0",
        "--mosi-k",
        "4.0",
    ]));
    let (r, t, a) = (
        v["reflectance"].as_f64().unwrap(),
        v["transmittance"].as_f64().unwrap(),
        v["absorptance"].as_f64().unwrap(),
    );
    assert!((r + t + a - 1.0).abs() < 1e-9);
    let per_layer: f64 = v["per_layer_absorption"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .sum();
    assert!((per_layer - a).abs() < 1e-9);
}

#[test]
fn stack_from_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "stack.json",
        r#"{"wavelength_nm":1000.0,"ambient_n":1.0,"substrate_n":1.52,
            "layers":[{"thickness_nm":108.69565217391305,"n":2.3,"k":0.0},{"thickness_nm":181.15942028985506,"n":1.38,"k":0.0}]}"#,
    );
    let out_path = dir.path().join("resp.json");
    let v = stdout_json(&tofbeam(&["stack", "--input", s(&spec), "--out", s(&out_path)]));
    let y = (2.3f64 / 1.38).powi(2) * 1.52;
    let expect = ((1.0 - y) / (1.0 + y)).powi(2);
    assert!((v["reflectance"].as_f64().unwrap() - expect).abs() < 1e-9, "{v}");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(saved["reflectance"], v["reflectance"]);
}
