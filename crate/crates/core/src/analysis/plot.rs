//! Static SVG figures.

use std::path::Path;

use plotters::coord::combinators::IntoLogRange;
use plotters::prelude::*;

use crate::error::{Error, Result};

use super::metrics::{pareto_front, ParetoPoint};
use super::transfer::TransferMatrix;

const SIZE: (u32, u32) = (720, 480);

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> Error {
    Error::Invalid(format!("plot failed: {e}"))
}

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 8] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(127, 127, 127),
    ];
    COLORS[i % COLORS.len()]
}

/// Error against cumulative FLOPs on a log axis, with the front marked.
/// Returns the front that was drawn.
pub fn plot_pareto(points: &[ParetoPoint], path: &Path) -> Result<Vec<ParetoPoint>> {
    if points.is_empty() {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let front = pareto_front(points);
    let lo = points.iter().map(|p| p.flops.max(1)).min().unwrap() as f64;
    let hi = points.iter().map(|p| p.flops.max(1)).max().unwrap() as f64;
    let e_hi = points.iter().map(|p| p.error).fold(0.0, f64::max);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("error vs compute", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((lo / 2.0..hi * 2.0).log_scale(), 0.0..(e_hi * 1.1).max(0.01))
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("cFLOP").y_desc("error").draw().map_err(draw_err)?;
    chart
        .draw_series(points.iter().map(|p| Circle::new((p.flops.max(1) as f64, p.error), 4, palette(7).filled())))
        .map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(front.iter().map(|p| (p.flops.max(1) as f64, p.error)), palette(3)))
        .map_err(draw_err)?;
    chart
        .draw_series(front.iter().map(|p| Circle::new((p.flops.max(1) as f64, p.error), 6, palette(3).filled())))
        .map_err(draw_err)?;
    chart
        .draw_series(
            front
                .iter()
                .map(|p| Text::new(p.label.clone(), (p.flops.max(1) as f64, p.error), ("sans-serif", 12).into_font())),
        )
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(front)
}

/// One line per labelled cumulative regret sequence.
pub fn plot_regret(series: &[(String, Vec<f64>)], path: &Path) -> Result<()> {
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    if n == 0 {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let vals = series.iter().flat_map(|s| s.1.iter().copied());
    let (lo, hi) = vals.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let pad = ((hi - lo) * 0.1).max(0.01);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("cumulative error relative to reference", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0usize..n, (lo - pad)..(hi + pad))
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("task").y_desc("regret").draw().map_err(draw_err)?;
    for (i, (label, ys)) in series.iter().enumerate() {
        let color = palette(i);
        chart
            .draw_series(LineSeries::new(ys.iter().enumerate().map(|(k, v)| (k + 1, *v)), color))
            .map_err(draw_err)?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

/// One bar per labelled forward-transfer value.
pub fn plot_fwt(values: &[(String, f64)], path: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Invalid("nothing to plot".into()));
    }
    let lo = values.iter().map(|v| v.1).fold(0.0, f64::min);
    let hi = values.iter().map(|v| v.1).fold(0.0, f64::max);
    let pad = ((hi - lo) * 0.1).max(0.01);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("forward transfer", ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..values.len() as f64, (lo - pad)..(hi + pad))
        .map_err(draw_err)?;
    chart.configure_mesh().disable_x_mesh().x_labels(0).y_desc("FWT").draw().map_err(draw_err)?;
    chart
        .draw_series(
            values.iter().enumerate().map(|(i, (_, v))| {
                Rectangle::new([(i as f64 + 0.15, 0.0), (i as f64 + 0.85, *v)], palette(i).filled())
            }),
        )
        .map_err(draw_err)?;
    chart
        .draw_series(values.iter().enumerate().map(|(i, (label, _))| {
            Text::new(label.clone(), (i as f64 + 0.2, lo - pad * 0.5), ("sans-serif", 13).into_font())
        }))
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

fn heat(v: f64, scale: f64) -> RGBColor {
    let t = (v / scale).clamp(-1.0, 1.0);
    if t >= 0.0 {
        let c = (255.0 * (1.0 - t)) as u8;
        RGBColor(c, c, 255)
    } else {
        let c = (255.0 * (1.0 + t)) as u8;
        RGBColor(255, c, c)
    }
}

/// Upper-triangular heatmap of a transfer matrix; returns the cell count.
pub fn plot_transfer(matrix: &TransferMatrix, path: &Path) -> Result<usize> {
    let k = matrix.task_ids.len();
    if k < 2 {
        return Err(Error::Invalid("a transfer plot needs at least two tasks".into()));
    }
    let scale = matrix.entries.values().map(|v| v.abs()).fold(1e-9, f64::max);
    let root = SVGBackend::new(path, (560, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("transfer: scratch error minus finetuned error", ("sans-serif", 18))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0..k, 0..k)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("target task")
        .y_desc("source task")
        .x_label_formatter(&|i| matrix.task_ids.get(*i).cloned().unwrap_or_default())
        .y_label_formatter(&|i| matrix.task_ids.get(*i).cloned().unwrap_or_default())
        .draw()
        .map_err(draw_err)?;
    chart
        .draw_series(
            matrix
                .entries
                .iter()
                .map(|(&(i, j), &v)| Rectangle::new([(j, k - 1 - i), (j + 1, k - i)], heat(v, scale).filled())),
        )
        .map_err(draw_err)?;
    chart
        .draw_series(
            matrix
                .entries
                .iter()
                .map(|(&(i, j), &v)| Text::new(format!("{v:+.3}"), (j, k - i), ("sans-serif", 12).into_font())),
        )
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(matrix.entries.len())
}
