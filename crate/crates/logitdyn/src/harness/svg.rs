//! Line-chart rendering of trajectory records as standalone SVG documents,
//! plus a structural checker used to keep the emitter honest in tests.
//!
//! Charts plot one polyline per (arm, series) pair against the step index:
//! per-class probabilities, refreshed-basis modal coefficients, or
//! per-class confidence ratios. Output is deterministic text with no
//! external references.

use crate::error::{Error, Result};
use crate::harness::scenario::TrajectoryRecord;

/// Which quantity a chart plots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartSelector {
    /// Per-class probabilities `p_i`.
    Probs,
    /// Refreshed-basis modal coefficients `e_refreshed_k`.
    Modal,
    /// Per-class step ratios `alpha_i`.
    Alphas,
}

impl ChartSelector {
    /// Stem used for output file names.
    pub fn file_stem(self) -> &'static str {
        match self {
            ChartSelector::Probs => "probs",
            ChartSelector::Modal => "modal",
            ChartSelector::Alphas => "alphas",
        }
    }

    fn title(self) -> &'static str {
        match self {
            ChartSelector::Probs => "class probabilities",
            ChartSelector::Modal => "modal coefficients (refreshed basis)",
            ChartSelector::Alphas => "per-step confidence ratios",
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 230.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 48.0;

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn series_for(records: &[TrajectoryRecord], selector: ChartSelector) -> Result<Vec<Series>> {
    let mut arm_order: Vec<&str> = Vec::new();
    for rec in records {
        if !arm_order.contains(&rec.optimizer.as_str()) {
            arm_order.push(&rec.optimizer);
        }
    }
    let mut out = Vec::new();
    for arm in arm_order {
        let mut rows: Vec<&TrajectoryRecord> =
            records.iter().filter(|r| r.optimizer == arm).collect();
        rows.sort_by_key(|r| r.step);
        let v = rows[0].probs.len();
        let (count, name, base): (usize, &str, usize) = match selector {
            ChartSelector::Probs => (v, "p", 0),
            ChartSelector::Modal => (v - 1, "e_refreshed", 1),
            ChartSelector::Alphas => (v, "alpha", 0),
        };
        for idx in 0..count {
            let points = rows
                .iter()
                .map(|r| {
                    let value = match selector {
                        ChartSelector::Probs => r.probs.as_slice()[idx],
                        ChartSelector::Modal => r.e_refreshed.as_slice()[idx],
                        ChartSelector::Alphas => r.alphas.alpha[idx],
                    };
                    (r.step as f64, value)
                })
                .collect();
            out.push(Series {
                label: format!("{arm} {name}_{}", base + idx),
                points,
            });
        }
    }
    Ok(out)
}

fn nice_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in values {
        if x.is_finite() {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn fmt_px(x: f64) -> String {
    format!("{x:.2}")
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders one chart over the given records.
///
/// # Errors
/// [`Error::EmptySelection`] when there are no records to plot.
pub fn emit_svg(records: &[TrajectoryRecord], selector: ChartSelector) -> Result<String> {
    if records.is_empty() {
        return Err(Error::EmptySelection(format!(
            "no records to plot for {}",
            selector.file_stem()
        )));
    }
    let series = series_for(records, selector)?;
    let (x0, x1) = nice_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = nice_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" fill=\"#111111\">{}</text>\n",
        fmt_px(MARGIN_LEFT),
        escape_text(selector.title())
    ));

    let axis_y = MARGIN_TOP + ph;
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        fmt_px(MARGIN_LEFT),
        fmt_px(axis_y),
        fmt_px(MARGIN_LEFT + pw),
        fmt_px(axis_y)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
        fmt_px(MARGIN_LEFT),
        fmt_px(MARGIN_TOP),
        fmt_px(MARGIN_LEFT),
        fmt_px(axis_y)
    ));

    for t in 0..=4 {
        let frac = f64::from(t) / 4.0;
        let xv = x0 + frac * (x1 - x0);
        let yv = y0 + frac * (y1 - y0);
        let xpix = sx(xv);
        let ypix = sy(yv);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            fmt_px(xpix),
            fmt_px(axis_y),
            fmt_px(xpix),
            fmt_px(axis_y + 5.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\" \
             text-anchor=\"middle\">{:.0}</text>\n",
            fmt_px(xpix),
            fmt_px(axis_y + 20.0),
            xv
        ));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            fmt_px(MARGIN_LEFT - 5.0),
            fmt_px(ypix),
            fmt_px(MARGIN_LEFT),
            fmt_px(ypix)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#333333\" \
             text-anchor=\"end\">{:.4e}</text>\n",
            fmt_px(MARGIN_LEFT - 8.0),
            fmt_px(ypix + 4.0),
            yv
        ));
    }

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .filter(|(_, y)| y.is_finite())
            .map(|&(x, y)| format!("{},{}", fmt_px(sx(x)), fmt_px(sy(y))))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN_TOP + 14.0 * k as f64;
        let lx = MARGIN_LEFT + pw + 16.0;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt_px(lx),
            fmt_px(ly),
            fmt_px(lx + 18.0),
            fmt_px(ly)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#111111\">{}</text>\n",
            fmt_px(lx + 24.0),
            fmt_px(ly + 4.0),
            escape_text(&s.label)
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes one chart to `dir` under the selector's file stem.
pub fn write_svg(
    dir: &std::path::Path,
    records: &[TrajectoryRecord],
    selector: ChartSelector,
) -> Result<std::path::PathBuf> {
    let path = dir.join(format!("{}.svg", selector.file_stem()));
    std::fs::write(&path, emit_svg(records, selector)?)?;
    Ok(path)
}

/// Structural check on an XML document: one root element, all tags closed
/// in order, attributes quoted. Sufficient to catch emitter regressions
/// like unbalanced or interleaved tags.
pub fn svg_well_formed(text: &str) -> Result<()> {
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0usize;
    let bad =
        |msg: &str, at: usize| Error::InvalidInput(format!("svg structure: {msg} at byte {at}"));

    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        if text[i..].starts_with("<?") {
            let end = text[i..]
                .find("?>")
                .ok_or_else(|| bad("unterminated processing instruction", i))?;
            i += end + 2;
            continue;
        }
        if text[i..].starts_with("<!--") {
            let end = text[i..]
                .find("-->")
                .ok_or_else(|| bad("unterminated comment", i))?;
            i += end + 3;
            continue;
        }
        let closing = text[i..].starts_with("</");
        let mut j = i + if closing { 2 } else { 1 };
        let name_start = j;
        while j < bytes.len()
            && (bytes[j].is_ascii_alphanumeric() || matches!(bytes[j], b'_' | b':' | b'-'))
        {
            j += 1;
        }
        if j == name_start {
            return Err(bad("tag without a name", i));
        }
        let name = &text[name_start..j];

        let mut in_quote: Option<u8> = None;
        let self_closing;
        loop {
            if j >= bytes.len() {
                return Err(bad("unterminated tag", i));
            }
            match (in_quote, bytes[j]) {
                (Some(q), c) if c == q => in_quote = None,
                (Some(_), _) => {}
                (None, b'"') | (None, b'\'') => in_quote = Some(bytes[j]),
                (None, b'<') => return Err(bad("nested tag open", j)),
                (None, b'>') => {
                    self_closing = j > 0 && bytes[j - 1] == b'/';
                    j += 1;
                    break;
                }
                (None, _) => {}
            }
            j += 1;
        }

        if closing {
            match stack.pop() {
                Some(open) if open == name => {}
                Some(open) => {
                    return Err(bad(&format!("expected </{open}>, found </{name}>"), i));
                }
                None => return Err(bad("close tag with no open element", i)),
            }
        } else if !self_closing {
            if stack.is_empty() {
                roots += 1;
            }
            stack.push(name.to_string());
        } else if stack.is_empty() {
            roots += 1;
        }
        i = j;
    }
    if let Some(open) = stack.pop() {
        return Err(bad(&format!("unclosed element <{open}>"), bytes.len()));
    }
    if roots != 1 {
        return Err(Error::InvalidInput(format!(
            "svg structure: expected exactly one root element, found {roots}"
        )));
    }
    Ok(())
}
