mod common;

use std::fmt::Write as _;

use common::{run, write, write_inputs};
use learnfx::panel::DesignKind;
use learnfx::simulate::{generate_experiment, SimulationConfig};
use learnfx_cli::export::{read_series_csv, series_tables, write_series_csv, Precision};
use learnfx_cli::report::{analyze, AnalyzeConfig};
use serde_json::Value;

const TWO_COHORT: &str = r#"{"design":"two-cohort","cohorts":2,"windows":WINDOWS}"#;

fn two_cohort_schedule(windows: usize) -> String {
    TWO_COHORT.replace("WINDOWS", &windows.to_string())
}

fn small_config(k: usize, design: DesignKind) -> SimulationConfig {
    SimulationConfig {
        n_units: 400,
        k,
        sigma: 1.0,
        effect_a: 1.0,
        effect_b: 0.5,
        effect_sd: None,
        baseline_intercept: 5.0,
        window_effects: Vec::new(),
        rho: 0.5,
        design,
        replications: 2,
        seed: 3,
        fit_curves: true,
    }
}

fn json(out: &std::process::Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn codes(report: &Value) -> Vec<String> {
    report["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w["code"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn identical_arms_report_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("unit_id,cohort,window,value\n");
    for u in 0..6 {
        for w in 1..=4 {
            let v = (u % 3 + w) as f64;
            writeln!(csv, "c{u},1,{w},{v}\nt{u},2,{w},{v}").unwrap();
        }
    }
    let input = write(dir.path(), "in.csv", &csv);
    let sched = write(dir.path(), "s.json", &two_cohort_schedule(4));
    let out = run(
        &[
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--schedule",
            sched.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let golden = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/identical_arms.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(&golden).unwrap());
    let report: Value = serde_json::from_str(&text).unwrap();
    for row in report["effects"]
        .as_array()
        .unwrap()
        .iter()
        .chain(report["learning"][0]["rows"].as_array().unwrap())
    {
        assert_eq!(row["estimate"], 0.0);
        assert_eq!(row["p_value"], 1.0);
    }
}

#[test]
fn same_inputs_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = SimulationConfig {
        n_units: 4500,
        ..small_config(9, DesignKind::Ladder)
    };
    let (panel, schedule) = generate_experiment::<f64>(&config, 4).unwrap();
    let (input, sched) = write_inputs(dir.path(), &panel, &schedule);
    let args = [
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--schedule",
        sched.to_str().unwrap(),
        "--bootstrap",
        "60",
        "--seed",
        "5",
    ];
    let a = run(&args, Some(1));
    let b = run(&args, Some(3));
    let c = run(&args, None);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
    let report = json(&a);
    assert_eq!(report["learning"].as_array().unwrap().len(), 3);
    assert_eq!(
        report["fits"][1]["bootstrap"]["replicates"], 60,
        "{:?}",
        report["warnings"]
    );
}

#[test]
fn srm_warning_and_strict_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("unit_id,cohort,window,value\n");
    for u in 0..1000 {
        let cohort = if u < 600 { 1 } else { 2 };
        for w in 1..=3 {
            writeln!(csv, "u{u},{cohort},{w},{}", (u * w % 11) as f64).unwrap();
        }
    }
    let input = write(dir.path(), "in.csv", &csv);
    let sched = write(dir.path(), "s.json", &two_cohort_schedule(3));
    let base = [
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--schedule",
        sched.to_str().unwrap(),
    ];
    let lenient = run(&base, None);
    assert_eq!(lenient.status.code(), Some(0));
    let report = json(&lenient);
    assert!(codes(&report).contains(&"srm".to_string()));
    assert_eq!(report["srm"]["flagged"], true);

    let mut strict = base.to_vec();
    strict.push("--strict-srm");
    let out = run(&strict, None);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["srm"]["flagged"], true);

    let mut declared = base.to_vec();
    declared.extend(["--expected-ratios", "0.6,0.4", "--strict-srm"]);
    assert_eq!(run(&declared, None).status.code(), Some(0));
}

#[test]
fn non_convergence_is_reported() {
    // A linear DID series has no finite-rate exponential fit.
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("unit_id,cohort,window,value\n");
    for u in 0..20 {
        for w in 1..=8 {
            let offset = (u % 5) as f64;
            writeln!(csv, "c{u},1,{w},{offset}\nt{u},2,{w},{}", offset + w as f64).unwrap();
        }
    }
    let input = write(dir.path(), "in.csv", &csv);
    let sched = write(dir.path(), "s.json", &two_cohort_schedule(8));
    let out = run(
        &[
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--schedule",
            sched.to_str().unwrap(),
            "--fit",
        ],
        None,
    );
    assert!(out.status.success());
    let report = json(&out);
    assert!(
        codes(&report).contains(&"fit-not-converged".to_string()),
        "{:?}",
        codes(&report)
    );
    assert_eq!(report["fits"][0]["fit"]["converged"], false);
    assert!(report["fits"][0]["long_term"].is_null());
}

/// Two-cohort panel following `e^{-t/2}` whose last window is observed for
/// only two treated units.
fn sparse_tail_csv() -> String {
    let mut csv = String::from("unit_id,cohort,window,value\n");
    for u in 0..10 {
        for w in 1..=8usize {
            let wiggle = ((u * 7 + w * 3) % 5) as f64 * 0.01;
            writeln!(csv, "c{u},1,{w},{}", 2.0 + wiggle).unwrap();
            if w < 8 || u < 2 {
                writeln!(csv, "t{u},2,{w},{}", 2.0 + wiggle + (-(w as f64) / 2.0).exp()).unwrap();
            }
        }
    }
    csv
}

#[test]
fn observed_only_fallback_and_dropped_bootstrap_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.csv", &sparse_tail_csv());
    let sched = write(dir.path(), "s.json", &two_cohort_schedule(8));
    let out = run(
        &[
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--schedule",
            sched.to_str().unwrap(),
            "--impute",
            "observed",
            "--bootstrap",
            "200",
            "--seed",
            "1",
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    let codes = codes(&report);
    for code in ["missingness", "unpaired-variance", "bootstrap-dropped"] {
        assert!(codes.contains(&code.to_string()), "{code} missing from {codes:?}");
    }
    let dropped = report["fits"][0]["bootstrap"]["dropped"].as_u64().unwrap();
    assert!(dropped > 0 && dropped <= 40, "{dropped}");
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning [bootstrap-dropped]"));
}

#[test]
fn malformed_input_exits_one_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(
        dir.path(),
        "in.csv",
        "unit_id,cohort,window,value\na,1,1,1.0\nb,2,1,oops\n",
    );
    let sched = write(dir.path(), "s.json", &two_cohort_schedule(1));
    let out = run(
        &[
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--schedule",
            sched.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("line 3"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(run(&["analyze", "--bogus"], None).status.code(), Some(1));
}

#[test]
fn ladder_methods_need_a_ladder_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, schedule) = generate_experiment::<f64>(&small_config(5, DesignKind::TwoCohort), 1).unwrap();
    let (input, sched) = write_inputs(dir.path(), &panel, &schedule);
    let args = [
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--schedule",
        sched.to_str().unwrap(),
        "--method",
        "ladder",
    ];
    assert_eq!(run(&args, None).status.code(), Some(1));
}

#[test]
fn detect_prints_contract_fields() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, schedule) = generate_experiment::<f64>(&small_config(9, DesignKind::TwoCohort), 2).unwrap();
    let (input, _) = write_inputs(dir.path(), &panel, &schedule);
    let out = run(&["detect", "--input", input.to_str().unwrap()], None);
    assert!(out.status.success());
    let v = json(&out);
    for key in ["delta2", "se", "p_value", "n_units"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["n_units"], 400);
    assert!(v["delta2"].as_f64().unwrap() < 0.0);

    let single = write(dir.path(), "one.csv", "unit_id,cohort,window,value\na,1,1,1\nb,2,1,2\n");
    assert_eq!(
        run(&["detect", "--input", single.to_str().unwrap()], None)
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn simulate_writes_two_rows_per_approach() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("records.csv");
    let out = run(
        &[
            "simulate",
            "--paper-preset",
            "--replications",
            "2",
            "--n-units",
            "3000",
            "--seed",
            "11",
            "--csv",
            csv.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&out);
    assert_eq!(summary["replications"], 2);
    for approach in ["observational", "experimental"] {
        let s = &summary[approach];
        assert_eq!(s["windows"].as_array().unwrap().len(), 14);
        if let Some(sd) = s["sd_a"].as_f64() {
            assert!(sd >= 0.0);
        }
    }
    let records = std::fs::read_to_string(csv).unwrap();
    assert_eq!(records.lines().filter(|l| l.contains(",observational,")).count(), 2);
    assert_eq!(records.lines().filter(|l| l.contains(",experimental,")).count(), 2);

    let bad = run(&["simulate", "--rho", "1.5"], None);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn power_examples() {
    let tie = json(&run(&["power", "--k", "3", "--rho", "0.25"], None));
    assert_eq!(tie["winner"], "tie");
    let v = json(&run(
        &["power", "--n", "1000", "--k", "14", "--sigma-sq", "4", "--rho", "0.5"],
        None,
    ));
    assert!((v["var_experimental"].as_f64().unwrap() - 0.112).abs() < 1e-12);
    assert!((v["var_observational"].as_f64().unwrap() - 0.016).abs() < 1e-12);
    assert_eq!(v["winner"], "observational");
    assert_eq!(run(&["power", "--k", "3", "--rho", "1.2"], None).status.code(), Some(1));
}

#[test]
fn series_csv_round_trips() {
    let (panel, schedule) = generate_experiment::<f64>(&small_config(7, DesignKind::Ladder), 8).unwrap();
    let csv = common::panel_csv(&panel);
    let sched = common::schedule_json(&schedule);
    let report = analyze(csv.as_bytes(), sched.as_bytes(), &AnalyzeConfig::default()).unwrap();
    let expected: Vec<(String, usize, [f64; 4])> = series_tables(&report)
        .into_iter()
        .flat_map(|(label, rows)| {
            rows.iter().map(move |r| {
                (
                    label.to_string(),
                    r.window,
                    [r.estimate, r.ci_low, r.ci_high, r.p_value],
                )
            })
        })
        .collect();
    for (precision, tol) in [(Precision::Full, 1e-12), (Precision::Readable, 5e-6)] {
        let mut buf = Vec::new();
        write_series_csv(&report, precision, &mut buf).unwrap();
        let rows = read_series_csv(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), expected.len());
        for (row, (label, window, values)) in rows.iter().zip(&expected) {
            assert_eq!((&row.series, row.window), (label, *window));
            for (got, want) in [row.estimate, row.ci_low, row.ci_high, row.p_value].iter().zip(values) {
                assert!((got - want).abs() <= tol * want.abs().max(1e-300), "{got} vs {want}");
            }
        }
        let mut again = Vec::new();
        let reparsed = read_series_csv(buf.as_slice()).unwrap();
        assert_eq!(reparsed, rows);
        write_series_csv(&report, precision, &mut again).unwrap();
        assert_eq!(again, buf);
    }
}

#[test]
fn csv_format_and_svg_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, schedule) = generate_experiment::<f64>(&small_config(7, DesignKind::Ladder), 8).unwrap();
    let (input, sched) = write_inputs(dir.path(), &panel, &schedule);
    let svg = dir.path().join("chart.svg");
    let out = run(
        &[
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--schedule",
            sched.to_str().unwrap(),
            "--format",
            "csv",
            "--svg",
            svg.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("series,window,estimate,ci_low,ci_high,p_value\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 6);
    let chart = std::fs::read_to_string(svg).unwrap();
    assert!(chart.starts_with("<svg") && chart.matches("<path").count() == 9);
}
