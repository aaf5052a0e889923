use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv_levelset::Shape;
use crate::monotonicity::PixelPartition;

pub const INIT_THRESHOLD: f64 = 0.5;
pub const MIN_COMPONENT: usize = 2;
/// Axis ratios in `[1/1.25, 1.25]` are emitted as circles.
pub const CIRCLE_RATIO: f64 = 1.25;
/// Distance kept between every primitive and the boundary of the square.
pub const BOUNDARY_MARGIN: f64 = 0.02;

/// Circles and ellipses fitted to the regularized pixel field.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    pub shapes: Vec<Shape>,
    /// Pixel indices of each kept component, in shape order.
    pub components: Vec<Vec<usize>>,
    pub threshold: f64,
}

/// 4-connected components of `mask` on an `np × np` grid, index `j · np + i`,
/// ordered by smallest member.
pub fn label_components(mask: &[bool], np: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut stack = vec![start];
        while let Some(k) = stack.pop() {
            let (i, j) = (k % np, k / np);
            let mut nb = Vec::with_capacity(4);
            if i > 0 {
                nb.push(k - 1);
            }
            if i + 1 < np {
                nb.push(k + 1);
            }
            if j > 0 {
                nb.push(k - np);
            }
            if j + 1 < np {
                nb.push(k + np);
            }
            for q in nb {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    comp.push(q);
                    stack.push(q);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Area-matched moment ellipse of a union of pixels.
pub fn fit_component(component: &[usize], np: usize) -> Shape {
    let h = 1.0 / np as f64;
    let count = component.len() as f64;
    let centers: Vec<[f64; 2]> = component
        .iter()
        .map(|&k| [((k % np) as f64 + 0.5) * h, ((k / np) as f64 + 0.5) * h])
        .collect();
    let cx = centers.iter().map(|p| p[0]).sum::<f64>() / count;
    let cy = centers.iter().map(|p| p[1]).sum::<f64>() / count;
    // Each pixel contributes its own second moment h²/12 per axis.
    let own = h * h / 12.0;
    let mut cxx = own;
    let mut cyy = own;
    let mut cxy = 0.0;
    for p in &centers {
        cxx += (p[0] - cx).powi(2) / count;
        cyy += (p[1] - cy).powi(2) / count;
        cxy += (p[0] - cx) * (p[1] - cy) / count;
    }
    let mean = 0.5 * (cxx + cyy);
    let dev = (0.25 * (cxx - cyy).powi(2) + cxy * cxy).sqrt();
    let (l1, l2) = (mean + dev, (mean - dev).max(1e-300));
    let angle = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    let area = count * h * h;
    let ratio = (l1 / l2).sqrt();
    let center = [cx, cy];
    if ratio <= CIRCLE_RATIO {
        return Shape::circle(center, (area / std::f64::consts::PI).sqrt());
    }
    // Semi-axes proportional to the standard deviations, scaled so that πab = area.
    let b = (area / (std::f64::consts::PI * ratio)).sqrt();
    Shape::ellipse(center, [ratio * b, b], angle)
}

/// Moves and, if needed, shrinks a primitive so that it keeps
/// [`BOUNDARY_MARGIN`] from the boundary of the square.
pub fn clamp_into_domain(shape: Shape) -> Shape {
    let (lo, hi) = (BOUNDARY_MARGIN, 1.0 - BOUNDARY_MARGIN);
    let [bmin, bmax] = shape.bounding_box();
    let half = [0.5 * (bmax[0] - bmin[0]), 0.5 * (bmax[1] - bmin[1])];
    let limit = 0.5 * (hi - lo);
    let scale = (limit / half[0]).min(limit / half[1]).min(1.0);
    let c = shape.center();
    let center = [
        c[0].clamp(lo + half[0] * scale, hi - half[0] * scale),
        c[1].clamp(lo + half[1] * scale, hi - half[1] * scale),
    ];
    match shape {
        Shape::Circle { radius, .. } => Shape::circle(center, radius * scale),
        Shape::Ellipse {
            semi_axes, angle, ..
        } => Shape::ellipse(center, [semi_axes[0] * scale, semi_axes[1] * scale], angle),
    }
}

/// Thresholds the coefficients at `threshold · max a_k`, drops components
/// smaller than `min_component` pixels and fits one primitive per component.
pub fn extract_initial_guess_with(
    partition: &PixelPartition,
    threshold: f64,
    min_component: usize,
) -> Result<InitialGuess> {
    let np = partition.np;
    let amax = partition.coefficients.iter().cloned().fold(0.0, f64::max);
    if !(amax > 0.0) {
        return Err(Error::EmptyReconstruction);
    }
    let cut = threshold * amax;
    let mask: Vec<bool> = partition
        .coefficients
        .iter()
        .map(|&a| a > 0.0 && a >= cut)
        .collect();
    let components: Vec<Vec<usize>> = label_components(&mask, np)
        .into_iter()
        .filter(|c| c.len() >= min_component)
        .collect();
    if components.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    let shapes = components
        .iter()
        .map(|c| clamp_into_domain(fit_component(c, np)))
        .collect();
    Ok(InitialGuess {
        shapes,
        components,
        threshold: cut,
    })
}

pub fn extract_initial_guess(partition: &PixelPartition) -> Result<InitialGuess> {
    extract_initial_guess_with(partition, INIT_THRESHOLD, MIN_COMPONENT)
}

/// One primitive per line: `circle cx cy r` or `ellipse cx cy a b angle`.
pub fn shapes_to_text(shapes: &[Shape]) -> String {
    let mut s = String::new();
    for shape in shapes {
        match *shape {
            Shape::Circle { center, radius } => {
                writeln!(s, "circle {:?} {:?} {:?}", center[0], center[1], radius).unwrap()
            }
            Shape::Ellipse {
                center,
                semi_axes,
                angle,
            } => writeln!(
                s,
                "ellipse {:?} {:?} {:?} {:?} {:?}",
                center[0], center[1], semi_axes[0], semi_axes[1], angle
            )
            .unwrap(),
        }
    }
    s
}

pub fn shapes_from_text(text: &str) -> Result<Vec<Shape>> {
    let mut shapes = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("shape line {}: '{raw}'", lineno + 1));
        let mut it = line.split_whitespace();
        let kind = it.next().ok_or_else(bad)?;
        let nums = it
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        let shape = match (kind, nums.as_slice()) {
            ("circle", &[x, y, r]) => Shape::circle([x, y], r),
            ("ellipse", &[x, y, a, b, t]) => Shape::ellipse([x, y], [a, b], t),
            _ => return Err(bad()),
        };
        shape.validate()?;
        shapes.push(shape);
    }
    Ok(shapes)
}

pub fn write_shapes(path: impl AsRef<Path>, shapes: &[Shape]) -> Result<()> {
    std::fs::write(path, shapes_to_text(shapes))?;
    Ok(())
}

pub fn read_shapes(path: impl AsRef<Path>) -> Result<Vec<Shape>> {
    shapes_from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partition(np: usize, on: impl Fn(usize, usize) -> f64) -> PixelPartition {
        let coefficients: Vec<f64> = (0..np * np).map(|k| on(k % np, k / np)).collect();
        PixelPartition {
            np,
            bounds: vec![0.5; np * np],
            support: coefficients.iter().map(|&a| a > 0.0).collect(),
            coefficients,
        }
    }

    #[test]
    fn square_block_gives_centered_circle() {
        let p = partition(10, |i, j| {
            if (3..6).contains(&i) && (5..8).contains(&j) {
                0.4
            } else {
                0.0
            }
        });
        let g = extract_initial_guess(&p).unwrap();
        assert_eq!(g.shapes.len(), 1);
        match g.shapes[0] {
            Shape::Circle { center, radius } => {
                assert!((center[0] - 0.45).abs() < 1e-12 && (center[1] - 0.65).abs() < 1e-12);
                assert!((std::f64::consts::PI * radius * radius - 0.09).abs() < 1e-12);
            }
            ref s => panic!("expected a circle, got {s:?}"),
        }
    }

    #[test]
    fn separated_blocks_and_small_specks() {
        let p = partition(10, |i, j| match (i, j) {
            (1..=2, 1..=2) => 0.5,
            (6..=8, 6..=8) => 0.3,
            (9, 0) => 0.5,
            (5, 2) => 0.1,
            _ => 0.0,
        });
        let g = extract_initial_guess(&p).unwrap();
        assert_eq!(g.shapes.len(), 2);
        assert_eq!(g.components[0].len(), 4);
        assert_eq!(g.components[1].len(), 9);
    }

    #[test]
    fn elongated_component_gives_rotated_ellipse() {
        let p = partition(10, |i, j| {
            if i == j && (2..8).contains(&i) || i == j + 1 && (2..8).contains(&j) {
                1.0
            } else {
                0.0
            }
        });
        let g = extract_initial_guess(&p).unwrap();
        assert_eq!(g.shapes.len(), 1);
        match g.shapes[0] {
            Shape::Ellipse {
                semi_axes, angle, ..
            } => {
                assert!(semi_axes[0] > 2.0 * semi_axes[1]);
                assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 0.05);
                assert!((g.shapes[0].area() - 0.12).abs() < 1e-9);
            }
            ref s => panic!("expected an ellipse, got {s:?}"),
        }
        g.shapes[0].validate().unwrap();
    }

    #[test]
    fn empty_field_is_an_error() {
        let p = partition(10, |_, _| 0.0);
        assert!(matches!(
            extract_initial_guess(&p),
            Err(Error::EmptyReconstruction)
        ));
        let p = partition(10, |i, j| if (i, j) == (4, 4) { 1.0 } else { 0.0 });
        assert!(matches!(
            extract_initial_guess(&p),
            Err(Error::EmptyReconstruction)
        ));
    }

    #[test]
    fn boundary_components_are_clamped() {
        let p = partition(10, |i, j| if i < 3 && j < 3 { 1.0 } else { 0.0 });
        let g = extract_initial_guess(&p).unwrap();
        let [lo, hi] = g.shapes[0].bounding_box();
        assert!(lo[0] >= BOUNDARY_MARGIN - 1e-12 && lo[1] >= BOUNDARY_MARGIN - 1e-12);
        assert!(hi[0] <= 1.0 - BOUNDARY_MARGIN + 1e-12);
    }

    #[test]
    fn shapes_text_round_trip() {
        let shapes = vec![
            Shape::circle([0.3, 0.4], 0.1),
            Shape::ellipse([0.6, 0.6], [0.2, 0.1], 0.3),
        ];
        assert_eq!(shapes_from_text(&shapes_to_text(&shapes)).unwrap(), shapes);
        assert!(shapes_from_text("square 0.5 0.5 0.1").is_err());
        assert!(shapes_from_text("circle 0.95 0.5 0.1").is_err());
    }
}
