//! Planar polygon helpers: convex hull, clipping, dilation and pixel-center
//! rasterization under the even-odd rule.

use super::landmarks::Point;
use crate::error::{Error, Result};

const AREA_EPS: f64 = 1e-9;

/// Signed shoelace area (positive for counter-clockwise in x-right/y-up axes).
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

pub fn area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by monotone chain. Collinear points are dropped; fails when the
/// input spans no area.
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateGeometry("fewer than 3 distinct points".into()));
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 || area(&lower) <= AREA_EPS {
        return Err(Error::DegenerateGeometry("points are collinear".into()));
    }
    Ok(lower)
}

/// Sutherland–Hodgman clip against the half-plane `inside(p)`, with `cut`
/// returning the boundary crossing on segment `a→b`.
fn clip_halfplane(
    poly: &[Point],
    inside: impl Fn(Point) -> bool,
    cut: impl Fn(Point, Point) -> Point,
) -> Vec<Point> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 4);
    for i in 0..n {
        let cur = poly[i];
        let prev = poly[(i + n - 1) % n];
        match (inside(prev), inside(cur)) {
            (true, true) => out.push(cur),
            (true, false) => out.push(cut(prev, cur)),
            (false, true) => {
                out.push(cut(prev, cur));
                out.push(cur);
            }
            (false, false) => {}
        }
    }
    out.dedup();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn cut_x(a: Point, b: Point, x: f64) -> Point {
    let t = (x - a.0) / (b.0 - a.0);
    (x, a.1 + t * (b.1 - a.1))
}

fn cut_y(a: Point, b: Point, y: f64) -> Point {
    let t = (y - a.1) / (b.1 - a.1);
    (a.0 + t * (b.0 - a.0), y)
}

/// Keep the part of `poly` with `y >= y_min`.
pub fn clip_below(poly: &[Point], y_min: f64) -> Vec<Point> {
    clip_halfplane(poly, |p| p.1 >= y_min, |a, b| cut_y(a, b, y_min))
}

/// Clip to the image rectangle `[0, width] × [0, height]`.
pub fn clip_to_rect(poly: &[Point], width: f64, height: f64) -> Vec<Point> {
    let p = clip_halfplane(poly, |p| p.0 >= 0.0, |a, b| cut_x(a, b, 0.0));
    let p = clip_halfplane(&p, |p| p.0 <= width, |a, b| cut_x(a, b, width));
    let p = clip_halfplane(&p, |p| p.1 >= 0.0, |a, b| cut_y(a, b, 0.0));
    clip_halfplane(&p, |p| p.1 <= height, |a, b| cut_y(a, b, height))
}

/// Outward dilation of a convex polygon by `margin`: hull of the vertices
/// each expanded to a 16-gon of radius `margin`. Every output vertex lies
/// exactly `margin` from an input vertex.
pub fn dilate_convex(poly: &[Point], margin: f64) -> Result<Vec<Point>> {
    if margin <= 0.0 {
        return convex_hull(poly);
    }
    const DIRS: usize = 16;
    let mut pts = Vec::with_capacity(poly.len() * DIRS);
    for &(x, y) in poly {
        for k in 0..DIRS {
            let a = std::f64::consts::TAU * k as f64 / DIRS as f64;
            pts.push((x + margin * a.cos(), y + margin * a.sin()));
        }
    }
    convex_hull(&pts)
}

/// Whether no two non-adjacent edges intersect.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let seg = |i: usize| (poly[i], poly[(i + 1) % n]);
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (a, b) = seg(i);
            let (c, d) = seg(j);
            let d1 = cross(c, d, a);
            let d2 = cross(c, d, b);
            let d3 = cross(a, b, c);
            let d4 = cross(a, b, d);
            if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
                && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
            {
                return false;
            }
        }
    }
    true
}

/// Binary pixel grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }
}

/// Pixel `(y, x)` is set iff its center `(x + 0.5, y + 0.5)` is inside the
/// polygon under the even-odd rule. The polygon is first clipped to the image.
pub fn rasterize(poly: &[Point], height: usize, width: usize) -> Result<BinaryMask> {
    if poly.len() < 3 {
        return Err(Error::DegenerateGeometry("polygon has fewer than 3 vertices".into()));
    }
    let clipped = clip_to_rect(poly, width as f64, height as f64);
    if clipped.len() < 3 || area(&clipped) <= AREA_EPS {
        return Err(Error::DegenerateGeometry("polygon does not overlap the image".into()));
    }
    let n = clipped.len();
    let mut bits = vec![false; height * width];
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in 0..height {
        let py = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (xi, yi) = clipped[i];
            let (xj, yj) = clipped[(i + n - 1) % n];
            if (yi > py) != (yj > py) {
                xs.push((xj - xi) * (py - yi) / (yj - yi) + xi);
            }
        }
        if xs.is_empty() {
            continue;
        }
        for col in 0..width {
            let px = col as f64 + 0.5;
            let crossings = xs.iter().filter(|&&x| px < x).count();
            bits[row * width + col] = crossings % 2 == 1;
        }
    }
    Ok(BinaryMask { height, width, bits })
}
