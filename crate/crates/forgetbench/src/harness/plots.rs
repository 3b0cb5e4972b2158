//! Plot emission: per-curve CSV plus a small self-contained SVG line chart.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// Retention of the first session.
    Base,
    /// Immediate accuracy on each new session.
    New,
    /// Accuracy over everything seen so far.
    All,
}

impl CurveKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::Base => "base",
            CurveKind::New => "new",
            CurveKind::All => "all",
        }
    }

    pub fn all_kinds() -> [CurveKind; 3] {
        [CurveKind::Base, CurveKind::New, CurveKind::All]
    }
}

impl std::str::FromStr for CurveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(CurveKind::Base),
            "new" => Ok(CurveKind::New),
            "all" => Ok(CurveKind::All),
            other => Err(Error::Config(format!("unknown figure {other:?}"))),
        }
    }
}

fn check_same_protocol(records: &[RunRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Input("no records to plot".into()));
    }
    let p = records[0].protocol;
    if records.iter().any(|r| r.protocol != p) {
        return Err(Error::Input(
            "records mix protocols; plot one protocol at a time".into(),
        ));
    }
    Ok(())
}

fn curve_values(record: &RunRecord, kind: CurveKind) -> Vec<(usize, f64)> {
    record
        .sessions
        .iter()
        .map(|s| {
            let v = match kind {
                CurveKind::Base => s.alpha_base,
                CurveKind::New => s.alpha_new,
                CurveKind::All => s.alpha_all,
            };
            (s.session, v)
        })
        .collect()
}

/// `session,alpha,model` rows for one curve family.
pub fn curve_csv(records: &[RunRecord], kind: CurveKind) -> Result<String> {
    check_same_protocol(records)?;
    let mut out = String::from("session,alpha,model\n");
    for r in records {
        for (session, alpha) in curve_values(r, kind) {
            out.push_str(&format!("{session},{alpha:.12},{}\n", r.model.as_str()));
        }
    }
    Ok(out)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Minimal line chart: one polyline per record, legend, unit-interval y axis
/// (stretched if a curve exceeds 1).
pub fn curve_svg(records: &[RunRecord], kind: CurveKind) -> Result<String> {
    check_same_protocol(records)?;
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (60.0, 20.0, 30.0, 50.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let t_min = 2usize;
    let t_max = records
        .iter()
        .flat_map(|r| r.sessions.iter().map(|s| s.session))
        .max()
        .unwrap_or(2);
    let y_max = records
        .iter()
        .flat_map(|r| curve_values(r, kind).into_iter().map(|(_, v)| v))
        .fold(1.0f64, f64::max);

    let x_of = |t: usize| -> f64 {
        if t_max == t_min {
            ml + plot_w / 2.0
        } else {
            ml + plot_w * (t - t_min) as f64 / (t_max - t_min) as f64
        }
    };
    let y_of = |v: f64| -> f64 { mt + plot_h * (1.0 - v / y_max) };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + plot_h
    ));
    // y ticks at 0, .25, .5, .75, 1 of y_max
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ml}\" y2=\"{y}\" stroke=\"black\"/>\n",
            ml - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{v:.2}</text>\n",
            ml - 8.0,
            y + 4.0
        ));
    }
    // x ticks per session
    for t in t_min..=t_max {
        let x = x_of(t);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n",
            mt + plot_h,
            mt + plot_h + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{t}</text>\n",
            mt + plot_h + 18.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">session</text>\n",
        ml + plot_w / 2.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">alpha_{}</text>\n",
        mt + plot_h / 2.0,
        mt + plot_h / 2.0,
        kind.as_str()
    ));
    // curves + legend
    for (i, r) in records.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve_values(r, kind)
            .into_iter()
            .map(|(t, v)| format!("{:.2},{:.2}", x_of(t), y_of(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = mt + 14.0 * i as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ml + plot_w - 120.0,
            ml + plot_w - 100.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{} ({})</text>\n",
            ml + plot_w - 94.0,
            ly + 4.0,
            r.model.as_str(),
            r.dataset
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the three curve families as CSV + SVG into `out_dir`; returns the
/// written paths.
pub fn emit_plots(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    check_same_protocol(records)?;
    std::fs::create_dir_all(out_dir)?;
    let protocol = records[0].protocol.as_str();
    let mut written = Vec::new();
    for kind in CurveKind::all_kinds() {
        let csv_path = out_dir.join(format!("curve_{}_{}.csv", protocol, kind.as_str()));
        std::fs::write(&csv_path, curve_csv(records, kind)?)?;
        written.push(csv_path);
        let svg_path = out_dir.join(format!("curve_{}_{}.svg", protocol, kind.as_str()));
        std::fs::write(&svg_path, curve_svg(records, kind)?)?;
        written.push(svg_path);
    }
    Ok(written)
}
