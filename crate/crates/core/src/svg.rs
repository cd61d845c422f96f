//! Minimal SVG line charts: plain path elements, no external renderer.

/// Render series as polyline paths inside a framed plot area. Each series is
/// a name, a stroke color, and (x, y) points in data coordinates.
pub fn line_chart(
    title: &str,
    series: &[(&str, &str, Vec<(f64, f64)>)],
    width: u32,
    height: u32,
) -> String {
    let margin = 40.0;
    let (w, h) = (width as f64, height as f64);
    let (plot_w, plot_h) = (w - 2.0 * margin, h - 2.0 * margin);

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, _, pts) in series {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }

    let sx = |x: f64| margin + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| h - margin - (y - y_min) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
    ));
    out.push_str(&format!(
        "  <rect x=\"{margin}\" y=\"{margin}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" stroke=\"#888\"/>\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        w / 2.0
    ));
    for (i, (name, color, pts)) in series.iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (k, &(x, y)) in pts.iter().enumerate() {
            d.push_str(if k == 0 { "M" } else { "L" });
            d.push_str(&format!("{:.2},{:.2} ", sx(x), sy(y)));
        }
        out.push_str(&format!(
            "  <path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            d.trim_end()
        ));
        out.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            margin + 4.0,
            margin + 14.0 + 14.0 * i as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_a_path_per_series() {
        let svg = line_chart(
            "demo",
            &[
                ("a", "#d33", vec![(0.0, 0.0), (1.0, 1.0)]),
                ("b", "#33d", vec![(0.0, 1.0), (1.0, 0.0)]),
            ],
            400,
            300,
        );
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let svg = line_chart("flat", &[("c", "#000", vec![(0.0, 2.0), (5.0, 2.0)])], 200, 100);
        assert!(!svg.contains("NaN"));
    }
}
