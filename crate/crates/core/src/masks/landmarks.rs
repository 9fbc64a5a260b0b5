//! 68-point facial landmark sets and the per-frame landmark text format.
//!
//! Index convention (0-based): jawline 0–16, eyebrows 17–26, nose 27–35
//! (nose base = 33), eyes 36–47, outer lip 48–59, inner lip 60–67.

use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 68;

pub const JAW: Range<usize> = 0..17;
pub const BROWS: Range<usize> = 17..27;
pub const NOSE: Range<usize> = 27..36;
pub const NOSE_BASE: usize = 33;
pub const EYES: Range<usize> = 36..48;
pub const OUTER_LIP: Range<usize> = 48..60;
pub const INNER_LIP: Range<usize> = 60..68;
pub const MOUTH: Range<usize> = 48..68;
pub const MOUTH_LEFT: usize = 48;
pub const MOUTH_RIGHT: usize = 54;

pub type Point = (f64, f64);

/// 68 ordered landmark points in pixel units (x rightward, y downward).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
    width: usize,
    height: usize,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, width: usize, height: usize) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(Error::Shape(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            )));
        }
        for (i, &(x, y)) in points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Numerical(format!("landmark {i} is not finite")));
            }
            if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                return Err(Error::Data(format!(
                    "landmark {i} = ({x}, {y}) outside {width}x{height} image"
                )));
            }
        }
        Ok(LandmarkSet { points, width, height })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn subset(&self, range: Range<usize>) -> &[Point] {
        &self.points[range]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Distance between the two mouth corners (48 and 54).
    pub fn mouth_width(&self) -> f64 {
        let (a, b) = (self.points[MOUTH_LEFT], self.points[MOUTH_RIGHT]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    }

    /// Axis-aligned bounding box `(x_min, y_min, x_max, y_max)`.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.points.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }
}

/// One line of a landmark file: a frame index followed by 136 coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkRecord {
    pub frame_index: u32,
    pub points: Vec<Point>,
}

/// Parse a landmark file (`frame_index x0 y0 … x67 y67` per line, blank lines
/// and `#` comments ignored).
pub fn read_landmark_file<R: Read>(reader: R) -> Result<Vec<LandmarkRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<landmarks>", e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let frame_index = fields
            .next()
            .and_then(|f| f.parse::<u32>().ok())
            .ok_or_else(|| Error::Data(format!("line {}: bad frame index", lineno + 1)))?;
        let nums: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        if nums.len() != 2 * NUM_LANDMARKS {
            return Err(Error::Data(format!(
                "line {}: expected {} coordinates, got {}",
                lineno + 1,
                2 * NUM_LANDMARKS,
                nums.len()
            )));
        }
        let points = nums.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        out.push(LandmarkRecord { frame_index, points });
    }
    Ok(out)
}

pub fn write_landmark_file<W: Write>(mut w: W, records: &[LandmarkRecord]) -> Result<()> {
    for rec in records {
        let mut line = rec.frame_index.to_string();
        for (x, y) in &rec.points {
            line.push_str(&format!(" {x:.4} {y:.4}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io("<landmarks>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_points() -> Vec<Point> {
        (0..68).map(|i| (10.0 + (i % 10) as f64, 10.0 + (i / 10) as f64)).collect()
    }

    #[test]
    fn validates_count_and_bounds() {
        assert!(LandmarkSet::new(grid_points(), 64, 64).is_ok());
        assert!(LandmarkSet::new(grid_points()[..67].to_vec(), 64, 64).is_err());
        let mut p = grid_points();
        p[5] = (64.0, 3.0);
        assert!(LandmarkSet::new(p.clone(), 64, 64).is_err());
        p[5] = (f64::NAN, 3.0);
        assert!(LandmarkSet::new(p, 64, 64).is_err());
    }

    #[test]
    fn text_format_round_trips() {
        let recs = vec![
            LandmarkRecord { frame_index: 0, points: grid_points() },
            LandmarkRecord { frame_index: 3, points: grid_points() },
        ];
        let mut buf = Vec::new();
        write_landmark_file(&mut buf, &recs).unwrap();
        let back = read_landmark_file(&buf[..]).unwrap();
        assert_eq!(back, recs);
        assert!(read_landmark_file("0 1 2 3".as_bytes()).is_err());
    }
}
