//! Kernel density estimates and summary statistics for comparing traces.

use std::fmt::Write as _;

use crate::error::CliError;
use crate::io::TraceColumns;

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(xs: &[f64]) -> Result<f64, CliError> {
    let n = xs.len();
    if n < 2 {
        return Err(CliError::Numerical(format!(
            "kernel bandwidth needs at least two samples, got {n}"
        )));
    }
    let (_, sd) = mean_sd(xs);
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (n as f64).powf(-0.2);
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Err(CliError::Numerical("kernel bandwidth is zero; the samples are constant".into()))
    }
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

pub fn gaussian_kde(xs: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (xs.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|g| norm * xs.iter().map(|x| (-0.5 * ((g - x) / h).powi(2)).exp()).sum::<f64>())
        .collect()
}

/// Densities of every parameter of every trace on a shared grid per
/// parameter, as CSV with columns `parameter, x, density_1, ...`.
pub fn density_csv(traces: &[TraceColumns], points: usize) -> Result<String, CliError> {
    let mut out = String::from("parameter,x");
    for k in 1..=traces.len() {
        let _ = write!(out, ",density_{k}");
    }
    out.push('\n');
    for (j, name) in traces[0].names.iter().enumerate() {
        let bw = traces
            .iter()
            .map(|t| silverman_bandwidth(&t.columns[j]))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Numerical(format!("parameter {name}: {e}")))?;
        let hmax = bw.iter().cloned().fold(0.0, f64::max);
        let lo = traces.iter().flat_map(|t| &t.columns[j]).cloned().fold(f64::INFINITY, f64::min) - 3.0 * hmax;
        let hi = traces.iter().flat_map(|t| &t.columns[j]).cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * hmax;
        let grid: Vec<f64> = (0..points)
            .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
            .collect();
        let dens: Vec<Vec<f64>> = traces.iter().zip(&bw).map(|(t, h)| gaussian_kde(&t.columns[j], *h, &grid)).collect();
        for (i, g) in grid.iter().enumerate() {
            let _ = write!(out, "{name},{}", crate::io::num(*g));
            for d in &dens {
                let _ = write!(out, ",{}", crate::io::num(d[i]));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

/// Posterior mean and sd of each parameter in each trace.
pub fn summary_table(labels: &[String], traces: &[TraceColumns]) -> String {
    let mut out = format!("{:<14} {:<24} {:>14} {:>14}\n", "parameter", "trace", "mean", "sd");
    for (j, name) in traces[0].names.iter().enumerate() {
        for (label, t) in labels.iter().zip(traces) {
            let (m, s) = mean_sd(&t.columns[j]);
            let _ = writeln!(out, "{name:<14} {label:<24} {m:>14.6} {s:>14.6}");
        }
    }
    out
}

pub fn check_names(traces: &[TraceColumns], labels: &[String]) -> Result<(), CliError> {
    for (t, label) in traces.iter().zip(labels).skip(1) {
        if t.names != traces[0].names {
            return Err(CliError::Config(format!(
                "trace {label} has parameters {:?}, expected {:?}",
                t.names, traces[0].names
            )));
        }
    }
    Ok(())
}
