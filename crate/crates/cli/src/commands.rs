//! The five subcommands. Each returns a short human-readable status message.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use detec_core::data::{read_csv, write_csv};
use detec_core::format::{fmt17, to_json_string};
use detec_core::{QuantMode, SynthesisResult};

use crate::config::{GridPoint, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, Meta, SummaryReport, SynthesisFile};

pub const DATA_FILE: &str = "data.csv";
pub const SYNTHESIS_FILE: &str = "synthesis.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const REPORT_FILE: &str = "report.txt";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes the data set and checks the rank condition on it.
pub fn collect(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let (_, raw) = pipeline::collect(cfg)?;
    let path = out.join(DATA_FILE);
    let mut w = create(&path)?;
    write_csv(&raw, Some(&Meta::new(cfg).comment()), &mut w)?;
    finish(w, &path)?;
    pipeline::data_matrices(cfg, &raw)?;
    Ok(format!(
        "wrote {} ({} samples); rank check passed: [U0; X0] has full row rank",
        path.display(),
        raw.len()
    ))
}

pub fn load_data(path: &Path) -> CliResult<detec_core::RawSamples> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_csv(f).map_err(|e| CliError::file(path, e))
}

pub fn write_synthesis(cfg: &RunConfig, synth: &SynthesisResult, path: &Path) -> CliResult<()> {
    let file = SynthesisFile {
        meta: Meta::new(cfg),
        d_bar: cfg.d_bar,
        synthesis: synth.clone(),
    };
    write_text(path, &to_json_string(&file).map_err(detec_core::Error::from)?)
}

pub fn synthesize(cfg: &RunConfig, out: &Path, data: Option<&Path>) -> CliResult<String> {
    let data = data.map(Path::to_path_buf).unwrap_or_else(|| out.join(DATA_FILE));
    let raw = load_data(&data)?;
    let dm = pipeline::data_matrices(cfg, &raw)?;
    let synth = pipeline::synthesize(cfg, &dm)?;
    let path = out.join(SYNTHESIS_FILE);
    write_synthesis(cfg, &synth, &path)?;
    Ok(format!(
        "wrote {}\ndesign margin {:e}, λ_min(X0·Y) {:e}, trigger margin {:e}\nK = {:?}\nα = {:e}, β = {:e}, δ = {:e}, γ = {:e}",
        path.display(),
        synth.design_margin,
        synth.x0y_margin,
        synth.trigger_margin,
        synth.k.as_slice(),
        synth.alpha,
        synth.beta,
        synth.delta,
        synth.gamma
    ))
}

pub fn load_synthesis(path: &Path) -> CliResult<SynthesisFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: SynthesisFile = serde_json::from_str(&text).map_err(|e| CliError::file(path, e))?;
    file.synthesis.validate().map_err(|e| CliError::file(path, e))?;
    Ok(file)
}

/// Trace, events and summary for one closed-loop run in `dir`.
fn simulate_into(cfg: &RunConfig, synth: &SynthesisResult, dir: &Path) -> CliResult<SummaryReport> {
    let sys = cfg.plant.system()?;
    let outcome = pipeline::simulate(cfg, &sys, synth)?;
    let comment = Meta::new(cfg).comment();
    let trace_path = dir.join(TRACE_FILE);
    let mut w = create(&trace_path)?;
    outcome.trace.write_csv(Some(&comment), &mut w)?;
    finish(w, &trace_path)?;
    let events_path = dir.join(EVENTS_FILE);
    let mut w = create(&events_path)?;
    outcome.trace.write_events(Some(&comment), &mut w)?;
    finish(w, &events_path)?;
    if let Some(msg) = outcome.failure {
        return Err(CliError::Simulation(format!("{msg} (partial trace kept in {})", trace_path.display())));
    }
    let report = outcome.report.expect("report present when the run succeeds");
    let summary = pipeline::summary(cfg, &sys, synth, &report, outcome.warnings)?;
    write_text(&dir.join(SUMMARY_FILE), &to_json_string(&summary).map_err(detec_core::Error::from)?)?;
    Ok(summary)
}

pub fn simulate(cfg: &RunConfig, out: &Path, synthesis: Option<&Path>) -> CliResult<String> {
    let path = synthesis.map(Path::to_path_buf).unwrap_or_else(|| out.join(SYNTHESIS_FILE));
    let file = load_synthesis(&path)?;
    let s = simulate_into(cfg, &file.synthesis, out)?;
    let mut msg = format!(
        "wrote {}, {}, {}\nevents {}, MIET observed {:e} s, bound {:e} s, final ‖x‖/‖x0‖ {:e}",
        out.join(TRACE_FILE).display(),
        out.join(EVENTS_FILE).display(),
        out.join(SUMMARY_FILE).display(),
        s.event_count,
        s.miet_observed,
        s.miet_bound,
        s.final_norm_ratio
    );
    for w in &s.warnings {
        msg.push_str("\nwarning: ");
        msg.push_str(w);
    }
    Ok(msg)
}

/// Full collect → synthesize → simulate run into `dir`.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> CliResult<SummaryReport> {
    let (_, raw) = pipeline::collect(cfg)?;
    let data_path = dir.join(DATA_FILE);
    let mut w = create(&data_path)?;
    write_csv(&raw, Some(&Meta::new(cfg).comment()), &mut w)?;
    finish(w, &data_path)?;
    let dm = pipeline::data_matrices(cfg, &raw)?;
    let synth = pipeline::synthesize(cfg, &dm)?;
    write_synthesis(cfg, &synth, &dir.join(SYNTHESIS_FILE))?;
    simulate_into(cfg, &synth, dir)
}

pub fn point_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("point_{index:03}"))
}

/// One aggregate row.
pub struct SweepRow {
    pub point: GridPoint,
    pub result: Result<SummaryReport, (i32, String)>,
}

pub fn sweep_rows(cfg: &RunConfig, out: &Path) -> CliResult<Vec<SweepRow>> {
    let grid = cfg.grid()?;
    Ok(grid
        .par_iter()
        .map(|p| {
            let pc = cfg.at(p);
            let result = run_pipeline(&pc, &point_dir(out, p.index)).map_err(|e| {
                log::warn!("grid point {}: {e}", p.index);
                (e.exit_code(), e.to_string())
            });
            SweepRow { point: *p, result }
        })
        .collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

pub fn aggregate_csv(cfg: &RunConfig, rows: &[SweepRow]) -> CliResult<String> {
    let sys = cfg.plant.system()?;
    let nk = sys.n() * sys.m();
    let mut s = format!("# {}\n", Meta::new(cfg).comment());
    let mut header: Vec<String> = [
        "index",
        "d_bar",
        "theta",
        "f_bar",
        "mode",
        "status",
        "exit_code",
        "event_count",
        "miet_observed",
        "miet_bound",
        "final_residual",
        "final_norm_ratio",
        "lyapunov_violation",
        "iss_c2",
        "spectral_abscissa",
        "alpha",
        "beta",
        "delta",
        "gamma",
    ]
    .map(String::from)
    .to_vec();
    header.extend((1..=nk).map(|k| format!("k_{k}")));
    header.push("error".into());
    let _ = writeln!(s, "{}", header.join(","));
    for row in rows {
        let p = &row.point;
        let mut f = vec![p.index.to_string(), fmt17(p.d_bar), fmt17(p.theta), fmt17(p.f_bar), cfg.scenario.mode.to_string()];
        match &row.result {
            Ok(r) => {
                f.extend(["ok".to_string(), "0".to_string(), r.event_count.to_string()]);
                f.extend(
                    [
                        r.miet_observed,
                        r.miet_bound,
                        r.final_residual,
                        r.final_norm_ratio,
                        r.lyapunov_violation,
                        r.iss_fit.c2,
                        r.spectral_abscissa,
                        r.alpha,
                        r.beta,
                        r.delta,
                        r.gamma,
                    ]
                    .map(fmt17),
                );
                // row-major K
                f.extend((0..r.k.nrows()).flat_map(|i| (0..r.k.ncols()).map(move |j| (i, j))).map(|ij| fmt17(r.k[ij])));
                f.push(String::new());
            }
            Err((code, msg)) => {
                f.extend(["failed".to_string(), code.to_string()]);
                f.extend(std::iter::repeat_n(String::new(), 12 + nk));
                f.push(csv_field(msg));
            }
        }
        let _ = writeln!(s, "{}", f.join(","));
    }
    Ok(s)
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    let rows = sweep_rows(cfg, out)?;
    let path = out.join(AGGREGATE_FILE);
    write_text(&path, &aggregate_csv(cfg, &rows)?)?;
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    Ok(format!("wrote {} ({} points, {} failed)", path.display(), rows.len(), failed))
}

pub fn load_summary(path: &Path) -> CliResult<SummaryReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::file(path, format!("not a summary file: {e}")))
}

/// Aligned table of design parameters and event metrics, one row per summary.
pub fn report_table(summaries: &[SummaryReport]) -> CliResult<String> {
    if summaries.is_empty() {
        return Err(CliError::Config("report needs at least one summary file".into()));
    }
    let quantized = summaries.iter().any(|s| s.mode != QuantMode::Plain);
    let mut header = vec!["d_bar", "K", "alpha", "beta", "delta", "gamma"];
    if quantized {
        header.extend(["mode", "theta"]);
    }
    header.extend(["events", "MIET", "MIET bound"]);
    let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for s in summaries {
        let k: Vec<String> = s.k.iter().map(|v| format!("{v:.4}")).collect();
        let mut r = vec![
            format!("{}", s.d_bar),
            format!("[{}]", k.join(" ")),
            format!("{:.4e}", s.alpha),
            format!("{:.4e}", s.beta),
            format!("{:.4e}", s.delta),
            format!("{:.4e}", s.gamma),
        ];
        if quantized {
            r.push(s.mode.to_string());
            r.push(format!("{}", s.theta));
        }
        r.push(s.event_count.to_string());
        r.push(if s.miet_observed.is_finite() {
            format!("{:.3e}", s.miet_observed)
        } else {
            "-".into()
        });
        r.push(format!("{:.3e}", s.miet_bound));
        rows.push(r);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let cells: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    Ok(out)
}

pub fn report(files: &[PathBuf], out: Option<&Path>) -> CliResult<String> {
    let summaries = files.iter().map(|p| load_summary(p)).collect::<CliResult<Vec<_>>>()?;
    let table = report_table(&summaries)?;
    if let Some(dir) = out {
        write_text(&dir.join(REPORT_FILE), &table)?;
    }
    Ok(table)
}
