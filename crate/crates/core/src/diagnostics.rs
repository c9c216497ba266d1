//! Training instrumentation: per-unit activation statistics, per-parameter
//! gradient norms and loss curves, written as `epoch,layer,kind,value` CSV
//! and rendered to static SVG line charts.

use std::collections::HashSet;
use std::fmt;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::numcore::Matrix;
use crate::scalar::Scalar;

/// Layer id used for model-wide series such as the training loss.
pub const MODEL_LAYER: &str = "model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    ActMean,
    ActStd,
    PreactStd,
    GradNorm,
    TrainLoss,
}

impl TraceKind {
    pub const ALL: [TraceKind; 5] = [
        TraceKind::ActMean,
        TraceKind::ActStd,
        TraceKind::PreactStd,
        TraceKind::GradNorm,
        TraceKind::TrainLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TraceKind::ActMean => "act_mean",
            TraceKind::ActStd => "act_std",
            TraceKind::PreactStd => "preact_std",
            TraceKind::GradNorm => "grad_norm",
            TraceKind::TrainLoss => "train_loss",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TraceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Render(format!("unknown trace kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub epoch: usize,
    pub layer: String,
    pub kind: TraceKind,
    pub value: f64,
}

/// Append-only, insertion-ordered event buffer. Each `(epoch, layer, kind)`
/// may appear once.
#[derive(Debug, Clone, Default)]
pub struct TraceSink {
    events: Vec<TraceEvent>,
    keys: HashSet<(usize, String, TraceKind)>,
}

impl TraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(
        &mut self,
        epoch: usize,
        layer: impl Into<String>,
        kind: TraceKind,
        value: f64,
    ) -> Result<()> {
        let layer = layer.into();
        if !value.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite {kind} for {layer} at epoch {epoch}"
            )));
        }
        if !self.keys.insert((epoch, layer.clone(), kind)) {
            return Err(Error::State(format!(
                "duplicate {kind} for {layer} at epoch {epoch}"
            )));
        }
        self.events.push(TraceEvent {
            epoch,
            layer,
            kind,
            value,
        });
        Ok(())
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<TraceEvent> {
        self.events
    }

    /// Value of one event, if recorded.
    pub fn value(&self, epoch: usize, layer: &str, kind: TraceKind) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.epoch == epoch && e.kind == kind && e.layer == layer)
            .map(|e| e.value)
    }

    /// All `(epoch, value)` points of one series, in insertion order.
    pub fn series(&self, layer: &str, kind: TraceKind) -> Vec<(usize, f64)> {
        series_points(&self.events, layer, kind)
    }
}

fn series_points(events: &[TraceEvent], layer: &str, kind: TraceKind) -> Vec<(usize, f64)> {
    events
        .iter()
        .filter(|e| e.kind == kind && e.layer == layer)
        .map(|e| (e.epoch, e.value))
        .collect()
}

/// Count, mean and sum of squared deviations, merged pairwise so pooled
/// statistics stay accurate without a second pass.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of<S: Scalar>(x: &Matrix<S>) -> Self {
        let count = x.len() as f64;
        if count == 0.0 {
            return Self::default();
        }
        let mean = x.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>() / count;
        let m2 = x
            .data()
            .iter()
            .map(|v| (v.to_f64_lossy() - mean).powi(2))
            .sum();
        Self { count, mean, m2 }
    }

    fn merge(&mut self, other: Self) {
        if other.count == 0.0 {
            return;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count / count;
        self.m2 += other.m2 + delta * delta * self.count * other.count / count;
        self.count = count;
    }

    fn std(&self) -> f64 {
        if self.count == 0.0 {
            0.0
        } else {
            (self.m2 / self.count).sqrt()
        }
    }
}

#[derive(Debug, Clone)]
struct UnitAccumulator {
    id: String,
    act: Moments,
    preact: Option<Moments>,
}

/// Running per-series sum, averaged when the epoch is flushed.
#[derive(Debug, Clone)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn value(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Accumulates forward statistics per batch and gradient norms per step,
/// then writes their epoch averages to a sink.
#[derive(Debug, Clone, Default)]
pub struct EpochMonitor {
    batch: Vec<UnitAccumulator>,
    forward: Vec<(String, TraceKind, Mean)>,
    grads: Vec<(String, Mean)>,
}

impl EpochMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds the unit outputs of the model's most recent forward pass into
    /// the current batch.
    pub fn observe_forward<S: Scalar>(&mut self, model: &Model<S>) -> Result<()> {
        if !model.has_forward_state() {
            return Err(Error::State("no cached forward state to record".into()));
        }
        let units = model.unit_outputs();
        if self.batch.is_empty() {
            self.batch = units
                .iter()
                .map(|u| UnitAccumulator {
                    id: u.id.clone(),
                    act: Moments::default(),
                    preact: u.pre_activation.map(|_| Moments::default()),
                })
                .collect();
        }
        for (acc, unit) in self.batch.iter_mut().zip(&units) {
            acc.act.merge(Moments::of(unit.output));
            if let (Some(m), Some(pre)) = (&mut acc.preact, unit.pre_activation) {
                m.merge(Moments::of(pre));
            }
        }
        Ok(())
    }

    /// Closes the current batch: its pooled statistics become one sample
    /// of the epoch average.
    pub fn end_batch(&mut self) {
        for acc in std::mem::take(&mut self.batch) {
            let mut samples = vec![
                (TraceKind::ActMean, acc.act.mean),
                (TraceKind::ActStd, acc.act.std()),
            ];
            if let Some(pre) = acc.preact {
                samples.push((TraceKind::PreactStd, pre.std()));
            }
            for (kind, v) in samples {
                match self
                    .forward
                    .iter_mut()
                    .find(|(id, k, _)| *k == kind && *id == acc.id)
                {
                    Some((_, _, m)) => m.add(v),
                    None => self
                        .forward
                        .push((acc.id.clone(), kind, Mean { sum: v, count: 1 })),
                }
            }
        }
    }

    /// Records the L2 norm of each parameter gradient for one optimiser step.
    pub fn observe_grads<S: Scalar>(&mut self, model: &Model<S>, grads: &[Matrix<S>]) {
        let info = model.param_info();
        if self.grads.is_empty() {
            self.grads = info
                .iter()
                .map(|p| (p.name.clone(), Mean { sum: 0.0, count: 0 }))
                .collect();
        }
        for ((_, m), g) in self.grads.iter_mut().zip(grads) {
            m.add(g.frobenius_norm().to_f64_lossy());
        }
    }

    /// Writes the epoch averages (and the loss, if given) and resets.
    pub fn flush(
        &mut self,
        sink: &mut TraceSink,
        epoch: usize,
        train_loss: Option<f64>,
    ) -> Result<()> {
        self.end_batch();
        for (id, kind, m) in std::mem::take(&mut self.forward) {
            sink.push(epoch, id, kind, m.value())?;
        }
        for (name, m) in std::mem::take(&mut self.grads) {
            if m.count > 0 {
                sink.push(epoch, name, TraceKind::GradNorm, m.value())?;
            }
        }
        if let Some(loss) = train_loss {
            sink.push(epoch, MODEL_LAYER, TraceKind::TrainLoss, loss)?;
        }
        Ok(())
    }
}

/// Activation statistics of the model's most recent forward pass.
pub fn record_forward<S: Scalar>(
    sink: &mut TraceSink,
    epoch: usize,
    model: &Model<S>,
) -> Result<()> {
    let mut monitor = EpochMonitor::new();
    monitor.observe_forward(model)?;
    monitor.flush(sink, epoch, None)
}

/// Gradient norms of one step, aligned with the model's parameter registry.
pub fn record_backward<S: Scalar>(
    sink: &mut TraceSink,
    epoch: usize,
    model: &Model<S>,
    grads: &[Matrix<S>],
) -> Result<()> {
    let mut monitor = EpochMonitor::new();
    monitor.observe_grads(model, grads);
    monitor.flush(sink, epoch, None)
}

pub fn emit_csv(events: &[TraceEvent], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?));
    // Written explicitly so an empty trace still gets a header.
    w.write_record(["epoch", "layer", "kind", "value"])?;
    for e in events {
        w.write_record([
            e.epoch.to_string(),
            e.layer.clone(),
            e.kind.to_string(),
            e.value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_csv(path: &Path) -> Result<Vec<TraceEvent>> {
    let mut r = csv::Reader::from_path(path)?;
    let events = r
        .deserialize()
        .collect::<std::result::Result<Vec<TraceEvent>, _>>()?;
    Ok(events)
}

/// One plotted line: a `(layer, kind)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Series {
    pub layer: String,
    pub kind: TraceKind,
}

impl FromStr for Series {
    type Err = Error;

    /// Parses `layer:kind`, e.g. `gcn1:act_std`.
    fn from_str(s: &str) -> Result<Self> {
        let (layer, kind) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Render(format!("series {s:?} is not of the form layer:kind")))?;
        Ok(Series {
            layer: layer.to_string(),
            kind: kind.parse()?,
        })
    }
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.layer, self.kind)
    }
}

/// Every distinct series in first-appearance order.
pub fn all_series(events: &[TraceEvent]) -> Vec<Series> {
    let mut seen = HashSet::new();
    events
        .iter()
        .filter(|e| seen.insert((e.layer.as_str(), e.kind)))
        .map(|e| Series {
            layer: e.layer.clone(),
            kind: e.kind,
        })
        .collect()
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

/// Renders the chosen series (all series when `series` is empty) as an SVG
/// line chart with linear axes, a legend and a title.
pub fn render_svg_string(events: &[TraceEvent], series: &[Series], title: &str) -> Result<String> {
    let series = if series.is_empty() {
        all_series(events)
    } else {
        series.to_vec()
    };
    if series.is_empty() {
        return Err(Error::Render("no series to plot".into()));
    }
    let lines = series
        .iter()
        .map(|s| {
            let pts = series_points(events, &s.layer, s.kind);
            if pts.is_empty() {
                Err(Error::Render(format!("unknown series {s}")))
            } else {
                Ok(pts)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let all = lines.iter().flatten();
    let (x_lo, x_hi) = all
        .clone()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(e, _)| {
            (lo.min(e as f64), hi.max(e as f64))
        });
    let (y_lo, y_hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
        (lo.min(v), hi.max(v))
    });
    let (x_lo, x_hi) = padded_range(x_lo, x_hi);
    let (y_lo, y_hi) = padded_range(y_lo, y_hi);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    // Writing to a String cannot fail.
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );
    let (x0, y0, x1, y1) = (
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP,
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for t in 0..=4 {
        let frac = t as f64 / 4.0;
        let xv = x_lo + frac * (x_hi - x_lo);
        let yv = y_lo + frac * (y_hi - y_lo);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            sx(xv),
            y0 + 16.0,
            format_tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            x0 - 6.0,
            sy(yv) + 4.0,
            format_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="12">epoch</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );

    for (i, (s, pts)) in series.iter().zip(&lines).enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = pts
            .iter()
            .map(|&(e, v)| format!("{:.2},{:.2}", sx(e as f64), sy(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx}" y="{:.1}" width="12" height="3" fill="{colour}"/>"#,
            ly - 4.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 18.0,
            escape(&s.to_string())
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Reads a trace CSV and writes the chart to `out`.
pub fn render_svg(csv_path: &Path, series: &[Series], out: &Path) -> Result<()> {
    let events = parse_csv(csv_path)?;
    let title = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let svg = render_svg_string(&events, series, &title)?;
    std::fs::write(out, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_events() -> Vec<TraceEvent> {
        let mut sink = TraceSink::new();
        for epoch in 1..=3 {
            for layer in ["gcn1", "gcn2"] {
                for kind in [TraceKind::ActMean, TraceKind::ActStd] {
                    sink.push(epoch, layer, kind, 0.1 * epoch as f64 + 1.0 / 3.0)
                        .unwrap();
                }
            }
        }
        sink.into_events()
    }

    #[test]
    fn duplicate_and_non_finite_events_are_rejected() {
        let mut sink = TraceSink::new();
        sink.push(1, "gcn1", TraceKind::ActStd, 0.5).unwrap();
        assert!(matches!(
            sink.push(1, "gcn1", TraceKind::ActStd, 0.6),
            Err(Error::State(_))
        ));
        assert!(sink.push(1, "gcn1", TraceKind::ActMean, f64::NAN).is_err());
        assert_eq!(sink.len(), 1);
    }

    #[test]
    fn empty_sink_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        emit_csv(&[], &path).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "epoch,layer,kind,value\n"
        );
        assert!(parse_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let events = toy_events();
        emit_csv(&events, &path).unwrap();
        assert_eq!(parse_csv(&path).unwrap(), events);
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let events = toy_events();
        let svg = render_svg_string(&events, &[], "toy").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2 * 2);
        let one = render_svg_string(&events, &["gcn2:act_std".parse().unwrap()], "toy").unwrap();
        assert_eq!(one.matches("<polyline").count(), 1);
        assert!(one.contains("gcn2:act_std"));
    }

    #[test]
    fn unknown_series_is_render_error() {
        let events = toy_events();
        let err =
            render_svg_string(&events, &["gcn9:act_std".parse().unwrap()], "toy").unwrap_err();
        assert!(matches!(err, Error::Render(_)));
        assert!(matches!("gcn1".parse::<Series>(), Err(Error::Render(_))));
        assert!(matches!(
            "gcn1:foo".parse::<Series>(),
            Err(Error::Render(_))
        ));
    }

    #[test]
    fn merged_moments_match_two_pass() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[10.0, -2.0, 0.5]]).unwrap();
        let mut m = Moments::of(&a);
        m.merge(Moments::of(&b));
        let (mean, std) = crate::numcore::pooled_stats([&a, &b].into_iter()).unwrap();
        assert!((m.mean - mean).abs() < 1e-12);
        assert!((m.std() - std).abs() < 1e-12);
    }
}
