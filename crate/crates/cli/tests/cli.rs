use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use detec_cli::commands::{self, load_summary, report_table};
use detec_cli::exit;

fn detec(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detec"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) {
    fs::write(dir.join("run.toml"), body).unwrap();
}

const BASE: &[&str] = &["--config", "run.toml", "--out", "out"];

fn with(cmd: &str, extra: &[&str]) -> Vec<String> {
    std::iter::once(cmd)
        .chain(BASE.iter().copied())
        .chain(extra.iter().copied())
        .map(String::from)
        .collect()
}

fn run(dir: &Path, cmd: &str, extra: &[&str]) -> Output {
    let args = with(cmd, extra);
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    detec(&refs, dir)
}

#[test]
fn collect_writes_ten_rows_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "seed = 7\n");
    let o = run(dir.path(), "collect", &[]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("rank check passed"));
    let first = fs::read(dir.path().join("out/data.csv")).unwrap();
    let text = String::from_utf8_lossy(&first);
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 11, "header plus ten samples");
    assert!(text.starts_with("# detec "));
    assert!(text.lines().next().unwrap().contains("config_sha256="));

    let o = run(dir.path(), "collect", &[]);
    assert_eq!(code(&o), exit::SUCCESS);
    assert_eq!(first, fs::read(dir.path().join("out/data.csv")).unwrap());
}

#[test]
fn too_few_samples_fail_the_rank_check() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[experiment]\nsamples = 3\n");
    let o = run(dir.path(), "collect", &[]);
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("rank"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[scenario]\nhorizn = 5.0\n");
    let o = run(dir.path(), "collect", &[]);
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));
}

#[test]
fn dominating_uncertainty_is_infeasible_in_the_gain_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[design]\ndelta_scale = 1e6\n");
    assert_eq!(code(&run(dir.path(), "collect", &[])), exit::SUCCESS);
    let o = run(dir.path(), "synthesize", &[]);
    assert_eq!(code(&o), exit::INFEASIBLE, "{}", stderr(&o));
    assert!(stderr(&o).contains("design LMI"), "{}", stderr(&o));
}

#[test]
fn corrupted_data_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    assert_eq!(code(&run(dir.path(), "collect", &[])), exit::SUCCESS);
    let path = dir.path().join("out/data.csv");
    let text = fs::read_to_string(&path).unwrap().replacen("e0,", "e0x,", 1);
    fs::write(&path, text).unwrap();
    let o = run(dir.path(), "synthesize", &[]);
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("data.csv"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_then_report() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "seed = 2\n");
    for cmd in ["collect", "synthesize", "simulate"] {
        let o = run(dir.path(), cmd, &[]);
        assert_eq!(code(&o), exit::SUCCESS, "{cmd}: {}", stderr(&o));
    }
    let out = dir.path().join("out");
    for f in ["data.csv", "synthesis.json", "trace.csv", "events.csv", "summary.json"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains(detec_core::VERSION), "{f} lacks the version");
        assert!(text.contains("config_hash") || text.contains("config_sha256"), "{f} lacks the hash");
    }
    let s = load_summary(&out.join("summary.json")).unwrap();
    assert!((10..=500).contains(&s.event_count), "{}", s.event_count);
    assert!(s.miet_observed >= s.miet_bound);
    assert!(s.spectral_abscissa < 0.0);

    let o = detec(&["report", "out/summary.json"], dir.path());
    assert_eq!(code(&o), exit::SUCCESS);
    let table = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = table.trim_end().lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    for col in ["d_bar", "K", "alpha", "beta", "delta", "gamma", "events"] {
        assert!(lines[0].contains(col), "{col} missing: {}", lines[0]);
    }
    assert!(!lines[0].contains("mode"));
}

#[test]
fn zero_state_without_disturbance_triggers_once() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[scenario]\nx0 = [0.0, 0.0, 0.0]\ndisturbance = \"zero\"\nhorizon = 2.0\n",
    );
    for cmd in ["collect", "synthesize", "simulate"] {
        assert_eq!(code(&run(dir.path(), cmd, &[])), exit::SUCCESS, "{cmd}");
    }
    let s = load_summary(&dir.path().join("out/summary.json")).unwrap();
    assert_eq!(s.event_count, 1);
    let events = fs::read_to_string(dir.path().join("out/events.csv")).unwrap();
    assert_eq!(events.lines().filter(|l| !l.starts_with('#')).count(), 1);
}

#[test]
fn coarse_logarithmic_quantizer_warns_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        "[scenario]\nmode = \"logarithmic\"\ntheta = 0.5\nhorizon = 1.0\n",
    );
    for cmd in ["collect", "synthesize"] {
        assert_eq!(code(&run(dir.path(), cmd, &[])), exit::SUCCESS);
    }
    let o = run(dir.path(), "simulate", &[]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("warning"));
    let s = load_summary(&dir.path().join("out/summary.json")).unwrap();
    assert_eq!(s.warnings.len(), 1);
}

#[test]
fn seed_flag_changes_outputs_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    assert_eq!(code(&run(dir.path(), "collect", &["--seed", "1"])), exit::SUCCESS);
    let a = fs::read_to_string(dir.path().join("out/data.csv")).unwrap();
    assert_eq!(code(&run(dir.path(), "collect", &["--seed", "2"])), exit::SUCCESS);
    let b = fs::read_to_string(dir.path().join("out/data.csv")).unwrap();
    assert_ne!(a.lines().next(), b.lines().next());
    assert_ne!(a, b);
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "");
    let o = run(dir.path(), "sweep", &[]);
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("grid"));
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    // f̄ < 0 makes only the second point invalid
    write_config(
        dir.path(),
        "[scenario]\nhorizon = 1.0\n[sweep]\nf_bar = [100.0, -1.0]\n",
    );
    let o = run(dir.path(), "sweep", &[]);
    assert_eq!(code(&o), exit::SUCCESS, "{}", stderr(&o));
    let agg = fs::read_to_string(dir.path().join("out/aggregate.csv")).unwrap();
    let rows: Vec<&str> = agg.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0,") && rows[1].contains(",ok,"));
    assert!(rows[2].starts_with("1,") && rows[2].contains(",failed,3,"), "{}", rows[2]);
    assert!(dir.path().join("out/point_000/summary.json").exists());
    let n_fields = rows[0].split(',').count();
    assert!(rows.iter().all(|r| r.split(',').count() == n_fields));
}

#[test]
fn report_rejects_foreign_files_by_name() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bogus.json"), "{\"beta\": 1.0}").unwrap();
    let o = detec(&["report", "bogus.json"], dir.path());
    assert_eq!(code(&o), exit::VALIDATION);
    assert!(stderr(&o).contains("bogus.json"));
}

#[test]
fn mixed_modes_add_a_mode_column() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "[scenario]\nhorizon = 1.0\nmode = \"uniform\"\n[sweep]\ntheta = [0.1]\n");
    let cfg = detec_cli::RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let quant = commands::run_pipeline(&cfg.at(&cfg.grid().unwrap()[0]), &dir.path().join("q")).unwrap();
    let mut plain = quant.clone();
    plain.mode = detec_core::QuantMode::Plain;
    let t = report_table(std::slice::from_ref(&plain)).unwrap();
    assert!(!t.lines().next().unwrap().contains("mode"));
    let t = report_table(&[plain, quant]).unwrap();
    let header = t.lines().next().unwrap();
    assert!(header.contains("mode") && header.contains("theta"));
    assert!(t.contains("uniform") && t.contains("plain"));
    assert_eq!(t.lines().count(), 4);
}
