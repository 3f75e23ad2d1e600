//! Convergence plots: `tail_sum/(n−1) + k` and `min ψ²` against iteration.

use std::path::{Path, PathBuf};

use farescale::{FaError, FaModel};

pub const AVAILABLE: bool = cfg!(feature = "svg-plots");

#[cfg(feature = "svg-plots")]
fn output_path(prefix: &Path, stem: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!("_{stem}.svg"));
    PathBuf::from(s)
}

#[cfg(feature = "svg-plots")]
pub fn emit(prefix: &Path, model: &FaModel) -> Result<Vec<PathBuf>, FaError> {
    let k = model.k() as f64;
    let tail: Vec<(f64, f64)> = model
        .trace
        .records()
        .iter()
        .map(|r| (r.iter as f64, r.tail_sum + k))
        .collect();
    let min_psi: Vec<(f64, f64)> = model
        .trace
        .records()
        .iter()
        .map(|r| (r.iter as f64, r.min_psi2))
        .collect();
    let p = model.p() as f64;

    let tail_path = output_path(prefix, "tail_sum");
    line_chart(&tail_path, "tail sum / (n - 1) + k", &tail, Some(p))?;
    let psi_path = output_path(prefix, "min_psi2");
    line_chart(&psi_path, "min psi^2", &min_psi, None)?;
    Ok(vec![tail_path, psi_path])
}

#[cfg(not(feature = "svg-plots"))]
pub fn emit(_prefix: &Path, _model: &FaModel) -> Result<Vec<PathBuf>, FaError> {
    Ok(Vec::new())
}

#[cfg(feature = "svg-plots")]
fn line_chart(path: &Path, label: &str, points: &[(f64, f64)], reference: Option<f64>) -> Result<(), FaError> {
    use plotters::prelude::*;

    let fail = |e: &dyn std::fmt::Display| FaError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let x_max = points.last().map_or(1.0, |p| p.0).max(1.0);
    let values = points.iter().map(|p| p.1).chain(reference);
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let pad = ((hi - lo) * 0.05).max(hi.abs() * 1e-6).max(1e-12);

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(0.0..x_max, (lo - pad)..(hi + pad))
        .map_err(|e| fail(&e))?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(label)
        .draw()
        .map_err(|e| fail(&e))?;
    chart
        .draw_series(LineSeries::new(points.iter().copied(), &BLUE))
        .map_err(|e| fail(&e))?;
    if let Some(r) = reference {
        chart
            .draw_series(LineSeries::new([(0.0, r), (x_max, r)], &RED))
            .map_err(|e| fail(&e))?;
    }
    root.present().map_err(|e| fail(&e))?;
    Ok(())
}

#[cfg(all(test, feature = "svg-plots"))]
mod tests {
    use super::*;

    #[test]
    fn file_names_follow_prefix() {
        assert_eq!(output_path(Path::new("out/run"), "min_psi2"), PathBuf::from("out/run_min_psi2.svg"));
    }
}
