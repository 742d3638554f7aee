//! `varsim report`: line charts of a finished run.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use serde::de::DeserializeOwned;
use varsim_core::metrics::{AccuracyRow, VarianceRow, WeightDiffRow};

use crate::run::{Summary, ACCURACY_CSV, VARIANCE_CSV, WEIGHT_DIFF_CSV};
use crate::CliError;

pub const ACCURACY_SVG: &str = "accuracy.svg";
pub const VARIANCE_SVG: &str = "variance.svg";
pub const WEIGHT_DIFF_SVG: &str = "weight_diff.svg";

const SIZE: (u32, u32) = (960, 600);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn read_rows<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, CliError> {
    let path = dir.join(name);
    let mut reader = csv::Reader::from_path(&path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Invalid(format!("malformed {}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(CliError::Invalid(format!("{} has no records", path.display())));
    }
    Ok(rows)
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn draw_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Runtime(format!("drawing chart: {e:?}"))
}

fn x_range(series: &Series) -> std::ops::Range<f64> {
    let max = series
        .values()
        .flatten()
        .map(|p| p.0)
        .fold(1.0, f64::max);
    0.0..max
}

fn y_bounds(series: &Series) -> (f64, f64) {
    series
        .values()
        .flatten()
        .map(|p| p.1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// One line per series; `markers` become labelled vertical rules.
fn line_chart(
    path: &Path,
    title: &str,
    y_desc: &str,
    series: &Series,
    log_y: bool,
    markers: &[(&str, u64)],
) -> Result<(), CliError> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70);
    let xs = x_range(series);
    let (lo, hi) = y_bounds(series);

    macro_rules! finish {
        ($chart:expr, $ylo:expr, $yhi:expr) => {{
            let mut chart = $chart;
            chart
                .configure_mesh()
                .x_desc("tick")
                .y_desc(y_desc)
                .draw()
                .map_err(draw_err)?;
            for (i, (name, points)) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                let pts: Vec<(f64, f64)> = points
                    .iter()
                    .copied()
                    .filter(|p| !log_y || p.1 > 0.0)
                    .collect();
                chart
                    .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                    .map_err(draw_err)?
                    .label(name.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            }
            for (i, &(label, tick)) in markers.iter().enumerate() {
                let style = ShapeStyle::from(&BLACK.mix(0.6)).stroke_width(1);
                let x = tick as f64;
                chart
                    .draw_series(std::iter::once(PathElement::new(
                        vec![(x, $ylo), (x, $yhi)],
                        style,
                    )))
                    .map_err(draw_err)?
                    .label(format!("{label} @ {tick}"))
                    .legend(move |(x, y)| {
                        PathElement::new(vec![(x, y), (x + 20, y)], PALETTE[(i + 3) % PALETTE.len()])
                    });
            }
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .position(SeriesLabelPosition::LowerRight)
                .draw()
                .map_err(draw_err)?;
        }};
    }

    if log_y {
        let positive = series
            .values()
            .flatten()
            .map(|p| p.1)
            .filter(|&v| v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let (ylo, yhi) = if positive.is_finite() {
            let ylo = 10f64.powf(positive.log10().floor());
            let yhi = 10f64.powf(hi.max(positive).log10().ceil());
            (ylo.min(yhi / 100.0), yhi)
        } else {
            (1e-6, 1.0)
        };
        finish!(
            builder
                .build_cartesian_2d(xs, (ylo..yhi).log_scale())
                .map_err(draw_err)?,
            ylo,
            yhi
        );
    } else {
        let pad = ((hi - lo) * 0.05).max(1e-9);
        let (ylo, yhi) = (lo - pad, hi + pad);
        finish!(
            builder.build_cartesian_2d(xs, ylo..yhi).map_err(draw_err)?,
            ylo,
            yhi
        );
    }
    root.present().map_err(draw_err)
}

fn mean_by_tick<I: IntoIterator<Item = (u64, f64)>>(rows: I) -> Vec<(f64, f64)> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (t, v) in rows {
        let e = acc.entry(t).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(t, (s, n))| (t as f64, s / n as f64)).collect()
}

/// Writes the three charts into `dir`.
pub fn report(dir: &Path) -> Result<(), CliError> {
    let accuracy: Vec<AccuracyRow> = read_rows(dir, ACCURACY_CSV)?;
    let variance: Vec<VarianceRow> = read_rows(dir, VARIANCE_CSV)?;
    let diffs: Vec<WeightDiffRow> = read_rows(dir, WEIGHT_DIFF_CSV)?;
    let summary = Summary::read(dir).ok();

    let mut acc_series = Series::new();
    acc_series.insert(
        "mean accuracy".into(),
        mean_by_tick(accuracy.iter().map(|r| (r.tick, r.accuracy))),
    );
    let mut markers = Vec::new();
    if let Some(s) = &summary {
        if let Some(t) = s.plateau_delay {
            markers.push(("plateau delay", t));
        }
        if let Some(t) = s.first_90 {
            markers.push(("first 90%", t));
        }
        if let Some(t) = s.most_90 {
            markers.push(("most 90%", t));
        }
    }
    line_chart(&dir.join(ACCURACY_SVG), "Accuracy", "accuracy", &acc_series, false, &markers)?;

    let mut by_layer: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
    for r in &variance {
        by_layer.entry(r.layer.clone()).or_default().push((r.tick, r.variance));
    }
    let var_series: Series = by_layer
        .into_iter()
        .map(|(layer, rows)| (layer, mean_by_tick(rows)))
        .collect();
    line_chart(
        &dir.join(VARIANCE_SVG),
        "Layer weight variance (node mean)",
        "variance",
        &var_series,
        true,
        &[],
    )?;

    let mut diff_series = Series::new();
    for r in &diffs {
        diff_series
            .entry(r.layer.clone())
            .or_default()
            .push((r.tick as f64, r.diff));
    }
    line_chart(
        &dir.join(WEIGHT_DIFF_SVG),
        "Model weight difference",
        "L1 difference",
        &diff_series,
        false,
        &[],
    )
}
