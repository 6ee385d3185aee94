//! Self-contained SVG renderings of analysis reports: grouped histograms and
//! per-layer retained-width bar charts. No external fonts, scripts or
//! stylesheets.

use anyhow::{bail, Result};
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;
const PALETTE: [&str; 4] = ["#3b6fb6", "#d1603d", "#4c9f70", "#8d6cab"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"#ffffff\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped histogram of one or more labeled series over a shared binning.
pub fn histogram(title: &str, x_label: &str, series: &[(String, Vec<f64>)], bins: usize) -> Result<String> {
    if series.is_empty() || bins == 0 {
        bail!("histogram needs at least one series and one bin");
    }
    for (name, values) in series {
        if values.is_empty() {
            bail!("histogram series '{name}' is empty");
        }
        if values.iter().any(|v| !v.is_finite()) {
            bail!("histogram series '{name}' contains non-finite values");
        }
    }
    let lo = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let hi = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut counts: Vec<Vec<usize>> = vec![vec![0; bins]; series.len()];
    for (s, (_, values)) in series.iter().enumerate() {
        for &v in values {
            let mut bin = ((v - lo) / span * bins as f64) as usize;
            if bin >= bins {
                bin = bins - 1;
            }
            counts[s][bin] += 1;
        }
    }
    let max_count = counts.iter().flatten().copied().max().unwrap_or(1).max(1);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let bin_w = plot_w / bins as f64;
    let bar_w = bin_w / series.len() as f64;

    let mut svg = header(title);
    // Axes.
    let _ = write!(
        svg,
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n\
         <line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{}\" stroke=\"#333\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM,
        HEIGHT - MARGIN_BOTTOM,
    );
    for (s, (_, _)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        for (b, &count) in counts[s].iter().enumerate() {
            if count == 0 {
                continue;
            }
            let h = plot_h * count as f64 / max_count as f64;
            let x = MARGIN_LEFT + b as f64 * bin_w + s as f64 * bar_w;
            let y = HEIGHT - MARGIN_BOTTOM - h;
            let _ = write!(
                svg,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{h:.2}\" \
                 fill=\"{color}\" fill-opacity=\"0.85\"/>\n",
                bar_w.max(1.0) - 0.5,
            );
        }
    }
    // X ticks at the bin edges (first, middle, last).
    for frac in [0.0, 0.5, 1.0] {
        let x = MARGIN_LEFT + plot_w * frac;
        let value = lo + span * frac;
        let _ = write!(
            svg,
            "<text x=\"{x:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{value:.3}</text>\n",
            HEIGHT - MARGIN_BOTTOM + 16.0,
        );
    }
    // Y max label and axis titles.
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
         text-anchor=\"end\">{max_count}</text>\n\
         <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">count</text>\n",
        MARGIN_LEFT - 6.0,
        MARGIN_TOP + 10.0,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label),
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
    );
    // Legend.
    for (s, (name, _)) in series.iter().enumerate() {
        let color = PALETTE[s % PALETTE.len()];
        let y = MARGIN_TOP + 4.0 + 18.0 * s as f64;
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"{y:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            WIDTH - MARGIN_RIGHT - 140.0,
            WIDTH - MARGIN_RIGHT - 122.0,
            y + 10.0,
            escape(name),
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Per-layer retained-width ratios as a bar chart on [0, 1].
pub fn width_ratio_chart(title: &str, ratios: &[f64]) -> Result<String> {
    if ratios.is_empty() {
        bail!("width-ratio chart needs at least one layer");
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0 || *r > 1.0) {
        bail!("retained ratios must lie in [0, 1]");
    }
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let slot_w = plot_w / ratios.len() as f64;
    let bar_w = slot_w * 0.7;

    let mut svg = header(title);
    let _ = write!(
        svg,
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333\"/>\n\
         <line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{}\" stroke=\"#333\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM,
        HEIGHT - MARGIN_BOTTOM,
    );
    for tick in [0.0f64, 0.25, 0.5, 0.75, 1.0] {
        let y = HEIGHT - MARGIN_BOTTOM - plot_h * tick;
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.2}\" stroke=\"#333\"/>\n\
             <text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{tick:.2}</text>\n",
            MARGIN_LEFT - 4.0,
            MARGIN_LEFT - 8.0,
            y + 4.0,
        );
    }
    for (i, &r) in ratios.iter().enumerate() {
        let h = plot_h * r;
        let x = MARGIN_LEFT + i as f64 * slot_w + (slot_w - bar_w) / 2.0;
        let y = HEIGHT - MARGIN_BOTTOM - h;
        let _ = write!(
            svg,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>\n\
             <text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            PALETTE[0],
            x + bar_w / 2.0,
            HEIGHT - MARGIN_BOTTOM + 16.0,
            i + 1,
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">layer</text>\n\
         <text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">retained width ratio</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_renders_legend_entries() {
        let series = vec![
            ("prior".to_string(), vec![0.5, 0.6, 0.62, 0.7]),
            ("random".to_string(), vec![0.4, 0.55, 0.58]),
        ];
        let svg = histogram("populations", "accuracy", &series, 10).unwrap();
        assert!(svg.starts_with("<svg xmlns"));
        assert!(svg.contains(">prior<"));
        assert!(svg.contains(">random<"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn empty_series_is_an_error() {
        let series = vec![("empty".to_string(), vec![])];
        assert!(histogram("t", "x", &series, 10).is_err());
        assert!(histogram("t", "x", &[], 10).is_err());
    }

    #[test]
    fn full_width_bars_sit_at_one() {
        let svg = width_ratio_chart("widths", &[1.0, 1.0, 1.0]).unwrap();
        // All bars have the full plot height.
        let expected_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let needle = format!("height=\"{expected_h:.2}\"");
        assert_eq!(svg.matches(&needle).count(), 3);
        assert!(width_ratio_chart("w", &[]).is_err());
        assert!(width_ratio_chart("w", &[1.5]).is_err());
    }
}
