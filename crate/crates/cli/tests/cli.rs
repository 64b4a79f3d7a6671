use std::path::PathBuf;

use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("qbc").chain(args.iter().copied());
    let code = qbc_cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).expect("stdout is JSON")
}

#[test]
fn validate_accepts_fixtures() {
    for name in ["dephasing-pair.json", "identity-vs-z.json", "aborting-filter.json"] {
        let (code, out, err) = run(&["validate", &fixture(name)]);
        assert_eq!(code, 0, "{name}: {err}");
        assert_eq!(json(&out)["valid"], true);
    }
}

#[test]
fn validate_rejects_bad_eigenvalue() {
    let (code, out, err) = run(&["validate", &fixture("bad-eigenvalue.json")]);
    assert_eq!(code, 1);
    assert!(out.is_empty());
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("bit 0") && err.contains("1.500000"), "{err}");
}

#[test]
fn missing_file_is_a_failure() {
    let (code, _, err) = run(&["validate", "/nonexistent/protocol.json"]);
    assert_eq!(code, 1);
    assert!(err.starts_with("error:"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["analyze", &fixture("identity-vs-z.json"), "--bogus"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["scan"]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn priors_default_to_half() {
    let (code, out, _) = run(&["validate", &fixture("dephasing-pair.json")]);
    assert_eq!(code, 0);
    assert_eq!(json(&out)["priors"], serde_json::json!([0.5, 0.5]));
}

#[test]
fn analyze_dephasing_pair() {
    let (code, out, err) = run(&["analyze", &fixture("dephasing-pair.json"), "--seed", "7"]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out);
    assert!(r["epsilon_lower"].as_f64().unwrap() <= 1e-6);
    assert!((r["alice_minimax"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    assert!((r["bounds"]["z_trace_norm"].as_f64().unwrap() - 4.0).abs() <= 1e-8);
    assert_eq!(r["flags"]["perfectly_concealing"], true);
    assert_eq!(r["provenance"]["seed"], 7);
}

#[test]
fn analyze_aborting_filter_uses_monte_carlo() {
    let (code, out, err) = run(&["analyze", &fixture("aborting-filter.json"), "--samples", "2000"]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out);
    assert_eq!(r["alice_average"]["mode"], "monte-carlo");
    assert!(r["alice_average"]["standard_error"].as_f64().unwrap() > 0.0);
}

#[test]
fn scan_csv_has_header_and_rows() {
    let (code, out, err) = run(&["scan", "--family", "rotation", "--params", "0.5,1.0", "--restarts", "4", "--csv"]);
    assert_eq!(code, 0, "{err}");
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "parameter,epsilon,alice_minimax,alice_average");
    assert_eq!(lines.len(), 3);
    let first: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], 0.5);
    assert!((first[1] - 2.0 * 0.25f64.sin()).abs() < 1e-3);
}

#[test]
fn haar_check_passes() {
    let (code, out, err) = run(&["haar-check", "--dim", "3", "--samples", "100000", "--seed", "1"]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out);
    assert_eq!(r["pass"], true);
    assert_eq!(r["identity_pair"], 1.0);
}

#[test]
fn dilate_reports_small_residuals() {
    let (code, out, err) = run(&["dilate", &fixture("aborting-filter.json")]);
    assert_eq!(code, 0, "{err}");
    let r = json(&out);
    for bit in ["bit0", "bit1"] {
        assert_eq!(r[bit]["dim_out"], 3);
        for key in ["isometry_residual", "channel_residual", "unitary_residual"] {
            assert!(r[bit][key].as_f64().unwrap() <= 1e-10, "{bit} {key}");
        }
    }
}
