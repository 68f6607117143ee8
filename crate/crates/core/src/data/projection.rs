//! 2-D PCA projection of item vectors, as CSV rows and an SVG scatter.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use crate::baselines::pca_fit;
use crate::data::ItemRecord;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub id: String,
    pub category: String,
    pub style: Option<usize>,
    pub x: f64,
    pub y: f64,
}

/// Reduces `vectors` (one per item) to two dimensions. `styles` maps item ids
/// to planted style labels when they are known.
pub fn project_2d(
    items: &[ItemRecord],
    vectors: &[Vec<f64>],
    styles: Option<&BTreeMap<String, usize>>,
) -> Result<Vec<ProjectedPoint>> {
    if items.len() != vectors.len() {
        return Err(Error::shape("project_2d", format!("{} items but {} vectors", items.len(), vectors.len())));
    }
    if vectors.len() < 3 {
        return Err(Error::invalid("project_2d", format!("need at least 3 points, got {}", vectors.len())));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::shape("project_2d", "vectors differ in dimension"));
    }
    let pca = pca_fit(vectors, 2.min(dim))?;
    items
        .iter()
        .zip(vectors)
        .map(|(it, v)| {
            let p = pca.transform(v)?;
            Ok(ProjectedPoint {
                id: it.id.clone(),
                category: it.category.clone(),
                style: styles.and_then(|s| s.get(&it.id).copied()),
                x: p.first().copied().unwrap_or(0.0),
                y: p.get(1).copied().unwrap_or(0.0),
            })
        })
        .collect()
}

/// Writes `id,category,style,x,y` rows; `style` is empty when unknown.
pub fn write_projection_csv<W: Write>(points: &[ProjectedPoint], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["id", "category", "style", "x", "y"])?;
    for p in points {
        let style = p.style.map(|s| s.to_string()).unwrap_or_default();
        w.write_record([p.id.as_str(), p.category.as_str(), &style, &p.x.to_string(), &p.y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("writing projection csv", e))?;
    Ok(())
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Scatter plot: fill colour by category; when styles are present, a second
/// panel colours the same points by planted style.
pub fn render_svg(points: &[ProjectedPoint]) -> String {
    let size = 400.0;
    let pad = 20.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let sx = if x1 > x0 { (size - 2.0 * pad) / (x1 - x0) } else { 1.0 };
    let sy = if y1 > y0 { (size - 2.0 * pad) / (y1 - y0) } else { 1.0 };
    let cats: Vec<&str> = {
        let mut c: Vec<&str> = points.iter().map(|p| p.category.as_str()).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let with_style = points.iter().any(|p| p.style.is_some());
    let panels = if with_style { 2.0 } else { 1.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{size}" viewBox="0 0 {} {size}">"#,
        size * panels,
        size * panels
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for panel in 0..panels as usize {
        let ox = panel as f64 * size;
        let title = if panel == 0 { "by category" } else { "by style" };
        let _ = writeln!(s, r#"<text x="{}" y="14" font-size="12" font-family="sans-serif">{title}</text>"#, ox + pad);
        for p in points {
            let colour = if panel == 0 {
                PALETTE[cats.binary_search(&p.category.as_str()).unwrap_or(0) % PALETTE.len()]
            } else {
                p.style.map_or("#000000", |st| PALETTE[st % PALETTE.len()])
            };
            let cx = ox + pad + (p.x - x0) * sx;
            let cy = size - pad - (p.y - y0) * sy;
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2" fill="{colour}" fill-opacity="0.7"/>"#);
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::squared_distance;

    fn items(n: usize) -> Vec<ItemRecord> {
        (0..n)
            .map(|i| ItemRecord { id: format!("i{i}"), category: format!("c{}", i % 2), features: vec![] })
            .collect()
    }

    #[test]
    fn two_d_input_is_rigid_motion() {
        let vecs = vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-1.0, 2.0], vec![2.5, -4.0], vec![0.3, 0.7]];
        let pts = project_2d(&items(5), &vecs, None).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let a = squared_distance(&vecs[i], &vecs[j]).sqrt();
                let b = ((pts[i].x - pts[j].x).powi(2) + (pts[i].y - pts[j].y).powi(2)).sqrt();
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(project_2d(&items(2), &[vec![0.0, 1.0], vec![1.0, 0.0]], None).is_err());
    }

    #[test]
    fn csv_has_header_and_empty_style() {
        let vecs = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]];
        let mut styles = BTreeMap::new();
        styles.insert("i1".to_string(), 4);
        let pts = project_2d(&items(3), &vecs, Some(&styles)).unwrap();
        let mut buf = Vec::new();
        write_projection_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "id,category,style,x,y");
        assert!(lines[1].starts_with("i0,c0,,"));
        assert!(lines[2].starts_with("i1,c1,4,"));
        assert!(render_svg(&pts).contains("by style"));
    }
}
