//! Exact t-SNE from signature space to the plane, plus CSV/SVG export.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, Normal};

use crate::dbn::Signature;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, TSNE_POINT_STREAM};

const MAX_BISECTION_STEPS: usize = 50;
const ENTROPY_TOLERANCE_BITS: f64 = 1e-5;
const INIT_STD: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct TsneParams {
    /// Clamped to `(n − 1) / 3` for small inputs.
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 100.0,
            early_exaggeration: 4.0,
            exaggeration_iterations: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            seed: 42,
        }
    }
}

impl TsneParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity >= 2.0) {
            return Err(Error::InvalidSpec(format!("perplexity {} must be at least 2", self.perplexity)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidSpec("t-SNE needs at least one iteration".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidSpec("t-SNE learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPoint {
    pub sample_id: String,
    pub x: f64,
    pub y: f64,
    pub label: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<EmbeddedPoint>,
}

impl Embedding2D {
    /// Sorted distinct labels; unlabeled points are left out.
    pub fn class_index(&self) -> Vec<String> {
        self.points
            .iter()
            .filter_map(|p| p.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// Result of a t-SNE run with its KL(P‖Q) trajectory.
#[derive(Clone, Debug)]
pub struct TsneRun {
    pub embedding: Embedding2D,
    /// KL after the first update, against the unexaggerated affinities.
    pub initial_kl: f64,
    pub final_kl: f64,
    /// `(iteration, KL)` samples, every 50 iterations and at the end.
    pub kl_trace: Vec<(usize, f64)>,
}

fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// Shannon entropy in bits of a probability row.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

/// Gaussian conditional probabilities over `dist` (squared distances to the
/// other points) whose entropy is `target_bits`, found by bisection on the
/// precision.
pub fn conditional_row(dist: &[f64], target_bits: f64) -> Vec<f64> {
    let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = dist.iter().map(|d| d - min).collect();
    let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
    let mut beta = if mean > 0.0 { 1.0 / mean } else { 1.0 };
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut probs = vec![0.0; dist.len()];
    for _ in 0..MAX_BISECTION_STEPS {
        let mut sum = 0.0;
        for (p, &d) in probs.iter_mut().zip(&shifted) {
            *p = (-beta * d).exp();
            sum += *p;
        }
        probs.iter_mut().for_each(|p| *p /= sum);
        let diff = entropy_bits(&probs) - target_bits;
        if diff.abs() < ENTROPY_TOLERANCE_BITS {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    probs
}

/// Symmetric joint affinities `(P + Pᵀ) / 2n` summing to one.
pub fn pairwise_affinities(points: ArrayView2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let d = squared_distances(points);
    let target = perplexity.log2();
    let mut cond = Array2::<f64>::zeros((n, n));
    let mut others = Vec::with_capacity(n - 1);
    for i in 0..n {
        others.clear();
        others.extend((0..n).filter(|&j| j != i).map(|j| d[[i, j]]));
        let row = conditional_row(&others, target);
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[[i, j]] = row[k];
        }
    }
    let mut p = &cond + &cond.t();
    p /= 2.0 * n as f64;
    Ok(p)
}

/// Student-t kernel values `1 / (1 + ‖yi − yj‖²)` and their off-diagonal sum.
fn student_kernel(y: &[[f64; 2]]) -> (Array2<f64>, f64) {
    let n = y.len();
    let mut num = Array2::zeros((n, n));
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[[i, j]] = v;
            num[[j, i]] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

/// KL(P‖Q) of a layout.
pub fn kl_divergence(p: &Array2<f64>, y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_kernel(y);
    let mut kl = 0.0;
    for ((i, j), &pij) in p.indexed_iter() {
        if i != j && pij > 0.0 {
            let q = (num[[i, j]] / z).max(f64::MIN_POSITIVE);
            kl += pij * (pij / q).ln();
        }
    }
    kl
}

fn center(y: &mut [[f64; 2]]) {
    let n = y.len() as f64;
    let mx = y.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = y.iter().map(|p| p[1]).sum::<f64>() / n;
    for p in y.iter_mut() {
        p[0] -= mx;
        p[1] -= my;
    }
}

/// Embeds signatures in 2-d.
///
/// Points are processed in `sample_id` order and point `r` of that order
/// draws its start position from its own stream, so permuting the input only
/// permutes the output.
pub fn tsne_embed(signatures: &[Signature], params: &TsneParams) -> Result<TsneRun> {
    params.validate()?;
    let n = signatures.len();
    if n < 3 {
        return Err(Error::TooFewPoints(n));
    }
    let width = signatures[0].values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| signatures[a].sample_id.cmp(&signatures[b].sample_id));
    let mut x = Array2::zeros((n, width));
    for (mut row, &i) in x.rows_mut().into_iter().zip(&order) {
        if signatures[i].values.len() != width {
            return Err(Error::ShapeMismatch {
                context: "signature width",
                expected: width,
                found: signatures[i].values.len(),
            });
        }
        row.assign(&ndarray::ArrayView1::from(&signatures[i].values));
    }

    let perplexity = params.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let p = pairwise_affinities(x.view(), perplexity)?;

    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|r| {
            let mut rng = stream_rng(params.seed, TSNE_POINT_STREAM + r as u64);
            [normal.sample(&mut rng), normal.sample(&mut rng)]
        })
        .collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut initial_kl = f64::NAN;
    let mut kl_trace = Vec::new();

    for it in 0..params.iterations {
        let exaggeration = if it < params.exaggeration_iterations {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < params.momentum_switch {
            params.initial_momentum
        } else {
            params.final_momentum
        };
        let (num, z) = student_kernel(&y);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = (exaggeration * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                gx += w * (y[i][0] - y[j][0]);
                gy += w * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * gx, 4.0 * gy];
        }
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                gains[i][d] = if (g > 0.0) != (velocity[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                velocity[i][d] = momentum * velocity[i][d] - params.learning_rate * gains[i][d] * g;
                y[i][d] += velocity[i][d];
            }
        }
        center(&mut y);
        if it == 0 {
            initial_kl = kl_divergence(&p, &y);
            kl_trace.push((1, initial_kl));
        } else if (it + 1) % 50 == 0 {
            kl_trace.push((it + 1, kl_divergence(&p, &y)));
        }
    }
    let final_kl = kl_divergence(&p, &y);
    if kl_trace.last().map(|&(i, _)| i) != Some(params.iterations) {
        kl_trace.push((params.iterations, final_kl));
    }
    if y.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::InvalidSpec("t-SNE produced non-finite coordinates".into()));
    }

    let mut points: Vec<Option<EmbeddedPoint>> = vec![None; n];
    for (r, &i) in order.iter().enumerate() {
        points[i] = Some(EmbeddedPoint {
            sample_id: signatures[i].sample_id.clone(),
            x: y[r][0],
            y: y[r][1],
            label: signatures[i].label.clone(),
        });
    }
    Ok(TsneRun {
        embedding: Embedding2D {
            points: points.into_iter().map(|p| p.expect("every rank placed")).collect(),
        },
        initial_kl,
        final_kl,
        kl_trace,
    })
}

pub fn write_embedding_csv<W: Write>(mut w: W, embedding: &Embedding2D) -> std::io::Result<()> {
    writeln!(w, "sample_id,label,x,y")?;
    for p in &embedding.points {
        let label = p.label.as_deref().unwrap_or("-");
        if p.sample_id.contains([',', '\n']) || label.contains([',', '\n']) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("point `{}` cannot be written as CSV", p.sample_id),
            ));
        }
        writeln!(w, "{},{},{:.16e},{:.16e}", p.sample_id, label, p.x, p.y)?;
    }
    Ok(())
}

pub fn read_embedding_csv<R: BufRead>(r: R) -> Result<Embedding2D> {
    let bad = |d: String| Error::format("embedding file", d);
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h == "sample_id,label,x,y" => {}
        _ => return Err(bad("bad header".into())),
    }
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| bad(e.to_string()))?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(format!("line {}: expected 4 fields", lineno + 2)));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("line {}: bad number `{s}`", lineno + 2)));
        points.push(EmbeddedPoint {
            sample_id: f[0].to_owned(),
            label: (f[1] != "-").then(|| f[1].to_owned()),
            x: num(f[2])?,
            y: num(f[3])?,
        });
    }
    Ok(Embedding2D { points })
}

const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];
const UNLABELED_COLOR: &str = "#b0b0b0";
const CANVAS: f64 = 1000.0;
const MARGIN: f64 = 60.0;

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Self-contained 1000×1000 SVG scatter, one color per label in sorted label
/// order, with a legend.
pub fn render_svg(embedding: &Embedding2D) -> String {
    let classes = embedding.class_index();
    let color = |label: Option<&str>| match label.and_then(|l| classes.iter().position(|c| c == l)) {
        Some(i) => PALETTE[i % PALETTE.len()],
        None => UNLABELED_COLOR,
    };
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &embedding.points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
    let usable = CANVAS - 2.0 * MARGIN;
    let sx = |x: f64| MARGIN + (x - x0) / span * usable;
    let sy = |y: f64| CANVAS - MARGIN - (y - y0) / span * usable;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="1000" height="1000" viewBox="0 0 1000 1000">"#
    );
    let _ = writeln!(svg, r##"<rect width="1000" height="1000" fill="#ffffff"/>"##);
    let _ = writeln!(svg, r#"<g id="points">"#);
    for p in &embedding.points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            color(p.label.as_deref()),
            xml_escape(&p.sample_id)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g id="legend" font-family="sans-serif" font-size="14">"#);
    for (i, c) in classes.iter().enumerate() {
        let y = 20.0 + 20.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="20" y="{y}" width="12" height="12" fill="{}"/><text x="38" y="{}">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            y + 11.0,
            xml_escape(c)
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

/// Writes the CSV and SVG views of an embedding.
pub fn export_scatter(embedding: &Embedding2D, csv_path: &Path, svg_path: &Path) -> Result<()> {
    let mut csv = Vec::new();
    write_embedding_csv(&mut csv, embedding).map_err(|e| Error::io(csv_path, e))?;
    std::fs::write(csv_path, csv).map_err(|e| Error::io(csv_path, e))?;
    std::fs::write(svg_path, render_svg(embedding)).map_err(|e| Error::io(svg_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn affinities_normalize_and_symmetrize() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 1.0], [2.0, 2.0]];
        let p = pairwise_affinities(x.view(), 2.0).unwrap();
        assert!((p.sum() - 1.0).abs() < 1e-9);
        for i in 0..5 {
            assert_eq!(p[[i, i]], 0.0);
            for j in 0..5 {
                assert_eq!(p[[i, j]], p[[j, i]]);
                assert!(p[[i, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn equidistant_points_are_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.5, h]];
        let p = pairwise_affinities(x.view(), 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((p[[i, j]] - 1.0 / 6.0).abs() < 1e-3, "{}", p[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn too_few_points() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(pairwise_affinities(x.view(), 2.0), Err(Error::TooFewPoints(2))));
        let s = |id: &str| Signature { sample_id: id.into(), values: vec![0.0], label: None };
        assert!(matches!(tsne_embed(&[s("a"), s("b")], &TsneParams::default()), Err(Error::TooFewPoints(2))));
    }

    #[test]
    fn empty_export() {
        let e = Embedding2D::default();
        let mut csv = Vec::new();
        write_embedding_csv(&mut csv, &e).unwrap();
        assert_eq!(csv, b"sample_id,label,x,y\n");
        let svg = render_svg(&e);
        assert!(svg.contains(r#"<g id="legend""#));
        assert!(!svg.contains("<circle"));
    }

    #[test]
    fn legend_has_one_entry_per_label() {
        let points = (0..12)
            .map(|i| EmbeddedPoint {
                sample_id: format!("s{i}"),
                x: i as f64,
                y: (i * i) as f64,
                label: Some(format!("fam{:02}", i % 6)),
            })
            .collect();
        let svg = render_svg(&Embedding2D { points });
        assert_eq!(svg.matches("<text").count(), 6);
        assert_eq!(svg.matches("<circle").count(), 12);
        assert!(svg.contains(r#"viewBox="0 0 1000 1000""#));
    }

    #[test]
    fn svg_escapes_labels() {
        let p = EmbeddedPoint { sample_id: "a<b".into(), x: 0.0, y: 0.0, label: Some("x&y".into()) };
        let svg = render_svg(&Embedding2D { points: vec![p] });
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
