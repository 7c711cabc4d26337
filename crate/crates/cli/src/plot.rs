//! Two-column `.dat` files and a gnuplot script that draws them.

use std::fmt::Write as _;
use std::path::Path;

use mvsve::diagnostics::DiagnosticsReport;

use crate::io::io_err;
use crate::CliError;

struct Panel {
    file: String,
    title: String,
    xlabel: &'static str,
    ylabel: &'static str,
    logscale: bool,
    /// Optional fitted line `intercept + slope·x`.
    fit: Option<(f64, f64)>,
}

fn write_dat(dir: &Path, name: &str, header: &str, points: &[(f64, f64)]) -> Result<(), CliError> {
    let mut s = format!("# {header}\n");
    for (x, y) in points {
        let _ = writeln!(s, "{x} {y}");
    }
    let path = dir.join(name);
    std::fs::write(&path, s).map_err(|e| io_err(&path, e))
}

fn write_script(dir: &Path, name: &str, panels: &[Panel]) -> Result<(), CliError> {
    let mut s = String::from("# gnuplot script; run `gnuplot -p ");
    let _ = writeln!(s, "{name}` in this directory");
    let _ = writeln!(s, "set terminal pngcairo size 800,600");
    for p in panels {
        let stem = p.file.trim_end_matches(".dat");
        let _ = writeln!(s, "\nset output '{stem}.png'");
        let _ = writeln!(s, "set title '{}'", p.title);
        let _ = writeln!(s, "set xlabel '{}'\nset ylabel '{}'", p.xlabel, p.ylabel);
        let _ = writeln!(s, "{}", if p.logscale { "set logscale xy" } else { "unset logscale" });
        match p.fit {
            Some((a, b)) => {
                let _ = writeln!(
                    s,
                    "plot '{}' using 1:2 with linespoints title 'data', {a} + {b}*x title 'fit'",
                    p.file
                );
            }
            None => {
                let _ = writeln!(s, "plot '{}' using 1:2 with linespoints notitle", p.file);
            }
        }
    }
    let path = dir.join(name);
    std::fs::write(&path, s).map_err(|e| io_err(&path, e))
}

/// Writes the plot data of a diagnostics or convergence report into `dir`.
pub fn emit(dir: &Path, report: &DiagnosticsReport, script: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut panels = Vec::new();
    if let Some(m) = &report.moments {
        let mut qs: Vec<f64> = m.rows.iter().map(|r| r.q).collect();
        qs.dedup();
        qs.sort_by(f64::total_cmp);
        qs.dedup();
        for q in qs {
            let pts: Vec<(f64, f64)> = m.rows.iter().filter(|r| r.q == q).map(|r| (r.t, r.estimate)).collect();
            let file = format!("moments_q{q}.dat");
            write_dat(dir, &file, &format!("t  E|X(t)|^{q}"), &pts)?;
            panels.push(Panel {
                file,
                title: format!("moment q = {q}"),
                xlabel: "t",
                ylabel: "estimate",
                logscale: false,
                fit: None,
            });
        }
    }
    for f in report.increments.iter().filter(|f| !f.degenerate) {
        let pts: Vec<(f64, f64)> = f.h.iter().zip(&f.moments).map(|(h, m)| (h.ln(), m.ln())).collect();
        let file = format!("increments_p{}.dat", f.p);
        write_dat(dir, &file, &format!("log h  log E|dX|^{}", f.p), &pts)?;
        panels.push(Panel {
            file,
            title: format!("increment scaling p = {}, slope {:.4}", f.p, f.slope),
            xlabel: "log h",
            ylabel: "log moment",
            logscale: false,
            fit: Some((f.intercept, f.slope)),
        });
    }
    if let Some(r) = &report.refinement {
        for (name, levels) in [("mesh", &r.mesh), ("particles", &r.particles)] {
            if levels.is_empty() {
                continue;
            }
            let pts: Vec<(f64, f64)> = levels.iter().map(|l| (l.to as f64, l.distance)).collect();
            let file = format!("refinement_{name}.dat");
            write_dat(dir, &file, &format!("{name} level  W_{} to previous level", r.eta), &pts)?;
            panels.push(Panel {
                file,
                title: format!("{name} ladder"),
                xlabel: if name == "mesh" { "steps" } else { "particles" },
                ylabel: "distance",
                logscale: true,
                fit: None,
            });
        }
    }
    if let Some(r) = &report.frozen_integral {
        let pts: Vec<(f64, f64)> = r.levels.iter().zip(&r.sup_difference).map(|(m, d)| (*m as f64, *d)).collect();
        write_dat(dir, "frozen_integral.dat", "steps  sup-time RMS error", &pts)?;
        panels.push(Panel {
            file: "frozen_integral.dat".into(),
            title: "frozen-coefficient integral".into(),
            xlabel: "steps",
            ylabel: "error",
            logscale: true,
            fit: None,
        });
    }
    write_script(dir, script, &panels)
}
