//! Acceptance run. Built without the libtest harness so that every PASS/FAIL
//! line reaches the output, then exits non-zero if any check failed.

mod common;

use common::gradients::gradient_suite;
use common::kde_oracles::kde_checks;
use common::metric_oracles::metric_checks;
use common::normalization::normalization_checks;
use common::Check;
use salbias::harness::{
    fixture_scales, planted_pair, planted_pair_config, synth_harness_data, Experiment, HarnessReport,
};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

fn gradient_checks() -> Vec<Check> {
    let t0 = Instant::now();
    let suite = gradient_suite(20);
    let elapsed = t0.elapsed();
    let worst = suite.iter().map(|c| c.worst).fold(0.0, f64::max);
    let min_instances = suite.iter().map(|c| c.instances).min().unwrap_or(0);
    let failing: Vec<&str> = suite.iter().filter(|c| !c.pass()).map(|c| c.name).collect();
    vec![Check::new(
        "gradient suite",
        failing.is_empty() && min_instances >= 20 && elapsed < Duration::from_secs(120),
        format!(
            "{} components, >= {min_instances} instances each, worst rel err {worst:.2e} < 1e-4, {:.1}s < 120s{}",
            suite.len(),
            elapsed.as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }
        ),
    )]
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn run_fixture(out: &Path) -> (HarnessReport, Experiment, Duration) {
    let t0 = Instant::now();
    let cfg = planted_pair_config();
    let (data, _) = synth_harness_data(&planted_pair(), &fixture_scales(), &cfg).expect("fixture data");
    let exp = Experiment::prepare(cfg, "builtin_lowlevel", fixture_scales(), data, out).expect("prepare");
    let report = exp.run_all().expect("harness run");
    (report, exp, t0.elapsed())
}

fn recovery_checks(report: &HarnessReport, elapsed: Duration) -> Vec<Check> {
    let planted: BTreeMap<String, f64> = planted_pair().into_iter().map(|(s, _)| (s.name, s.sigma_dva)).collect();
    let mut detail = Vec::new();
    let mut ok = true;
    for a in &report.adapted {
        let sigma = a.bias().sigma_dva();
        let target = planted[&a.dataset];
        let rel = (sigma - target).abs() / target;
        let row = report.gaps.rows.iter().find(|r| r.dataset == a.dataset).expect("gap row");
        let closed = row.fraction_closed_by_adaptation();
        ok &= rel <= 0.15 && closed >= 0.70;
        detail.push(format!(
            "{}: sigma {sigma:.4} vs {target} ({:.1}% <= 15%), gap closed {:.1}% >= 70%",
            a.dataset,
            100.0 * rel,
            100.0 * closed
        ));
    }
    ok &= report.adapted.len() == planted.len();
    let minutes = elapsed.as_secs_f64() / 60.0;
    vec![
        Check::new("planted bias recovery", ok, detail.join("; ")),
        Check::new("planted fixture runtime", minutes < 30.0, format!("{minutes:.1} min < 30 min")),
    ]
}

fn low_data_checks(report: &HarnessReport) -> Vec<Check> {
    let mut ok = true;
    let mut detail = Vec::new();
    for row in &report.gaps.rows {
        let igs = |n: Option<usize>| -> Vec<f64> {
            let rows = report.low_data.iter().filter(|r| r.dataset == row.dataset);
            let max_n = rows.clone().map(|r| r.n).max().unwrap_or(0);
            let want = n.unwrap_or(max_n);
            rows.filter(|r| r.n == want).map(|r| r.ig).collect()
        };
        let (n10, n50, full) = (igs(Some(10)), igs(Some(50)), igs(None));
        ok &= n10.len() >= 5 && n50.len() >= 5 && !full.is_empty();
        let (m10, m50, mfull) = (median(n10), median(n50), median(full));
        let averaged = row.ig_loo_generalized;
        ok &= m10 >= averaged && m50 >= 0.9 * mfull;
        detail.push(format!(
            "{}: median IG(10) {m10:.4} >= averaged {averaged:.4}, median IG(50) {m50:.4} >= 0.9*{mfull:.4}",
            row.dataset
        ));
    }
    vec![Check::new("low-data adaptation curve", ok, detail.join("; "))]
}

fn joint_naive_checks(report: &HarnessReport) -> Vec<Check> {
    let margins: Vec<(String, f64)> =
        report.joint_vs_naive.iter().map(|r| (r.dataset.clone(), r.ig_aware - r.ig_naive)).collect();
    let ok = !margins.is_empty() && margins.iter().all(|(_, m)| *m >= 0.05);
    let detail: Vec<String> = margins.iter().map(|(d, m)| format!("{d}: margin {m:+.4} >= 0.05")).collect();
    vec![Check::new("joint bias-aware beats joint naive", ok, detail.join("; "))]
}

fn sensitivity_checks(report: &HarnessReport) -> Vec<Check> {
    let m = &report.sensitivity;
    let mut ok = !m.eval_datasets.is_empty();
    let mut detail = Vec::new();
    for (i, e) in m.eval_datasets.iter().enumerate() {
        let Some(own) = m.sources.iter().position(|s| s == e) else {
            ok = false;
            continue;
        };
        let best_foreign = m
            .sources
            .iter()
            .enumerate()
            .filter(|(j, s)| *j != own && s.as_str() != "averaged")
            .map(|(j, _)| m.ig[i][j])
            .fold(f64::NEG_INFINITY, f64::max);
        ok &= m.ig[i][own] > best_foreign;
        detail.push(format!("{e}: own {:.4} > best foreign {best_foreign:.4}", m.ig[i][own]));
    }
    vec![Check::new("sensitivity diagonal dominance", ok, detail.join("; "))]
}

fn report_csvs(out: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(out.join("reports"))
        .expect("reports dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).expect("csv")))
        .collect()
}

fn determinism_check(first: &Path, second: &Path) -> Check {
    let (a, b) = (report_csvs(first), report_csvs(second));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let ok = !a.is_empty() && a.len() == b.len() && differing.is_empty();
    Check::new(
        "deterministic reports",
        ok,
        format!("{} csv files compared across two fresh runs, {} differ", a.len(), differing.len()),
    )
}

fn emit(all: &mut Vec<Check>, checks: Vec<Check>) {
    for c in &checks {
        println!("{}", c.line());
    }
    all.extend(checks);
}

fn main() {
    let mut all = Vec::new();
    emit(&mut all, gradient_checks());
    emit(&mut all, metric_checks());
    emit(&mut all, normalization_checks(100));
    emit(&mut all, kde_checks());

    let first = tempfile::tempdir().expect("tempdir");
    let (report, _exp, elapsed) = run_fixture(first.path());
    emit(&mut all, recovery_checks(&report, elapsed));
    emit(&mut all, low_data_checks(&report));
    emit(&mut all, joint_naive_checks(&report));
    emit(&mut all, sensitivity_checks(&report));

    let second = tempfile::tempdir().expect("tempdir");
    run_fixture(second.path());
    emit(&mut all, vec![determinism_check(first.path(), second.path())]);

    let failed = all.iter().filter(|c| !c.pass).count();
    println!("acceptance: {} passed, {failed} failed", all.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
