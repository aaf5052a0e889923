use crate::error::{Error, Result};
use crate::grid_fem::{ConductivityField, CrossedMesh, Point};
use crate::kv_levelset::Shape;

/// Building block of a phantom geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Shape(Shape),
    /// Axis-aligned rectangle `[lo, hi]`.
    Rect(Point, Point),
}

impl Piece {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Piece::Shape(s) => s.contains(p),
            Piece::Rect(lo, hi) => p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1],
        }
    }

    fn bounding_box(&self) -> [Point; 2] {
        match self {
            Piece::Shape(s) => s.bounding_box(),
            Piece::Rect(lo, hi) => [*lo, *hi],
        }
    }
}

/// Named inclusion geometry with its conductivities.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub name: &'static str,
    pub description: &'static str,
    pub include: Vec<Piece>,
    pub exclude: Vec<Piece>,
    pub sigma0: f64,
    pub sigma1: f64,
}

pub const PHANTOM_NAMES: [&str; 4] = ["disk", "square", "kite", "pair"];

impl Phantom {
    pub fn by_name(name: &str, sigma0: f64, sigma1: f64) -> Result<Self> {
        let (description, include, exclude) = match name {
            "disk" => ("disk, center (0.5, 0.5), radius 0.2", vec![Piece::Shape(Shape::circle([0.5, 0.5], 0.2))], vec![]),
            "square" => ("axis-aligned square of side 0.3, centered", vec![Piece::Rect([0.35, 0.35], [0.65, 0.65])], vec![]),
            "kite" => (
                "concave shape: ellipse (0.5, 0.5), semi-axes 0.28 x 0.18, minus disk (0.5, 0.68) r 0.12",
                vec![Piece::Shape(Shape::ellipse([0.5, 0.5], [0.28, 0.18], 0.0))],
                vec![Piece::Shape(Shape::circle([0.5, 0.68], 0.12))],
            ),
            "pair" => (
                "disk (0.3, 0.3) r 0.12 and square [0.56, 0.8]²",
                vec![
                    Piece::Shape(Shape::circle([0.3, 0.3], 0.12)),
                    Piece::Rect([0.56, 0.56], [0.8, 0.8]),
                ],
                vec![],
            ),
            other => return Err(Error::invalid(format!("unknown phantom '{other}'"))),
        };
        let p = Self {
            name: PHANTOM_NAMES.iter().find(|&&n| n == name).copied().unwrap(),
            description,
            include,
            exclude,
            sigma0,
            sigma1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn gallery(sigma0: f64, sigma1: f64) -> Vec<Self> {
        PHANTOM_NAMES
            .iter()
            .map(|n| Self::by_name(n, sigma0, sigma1).unwrap())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma1 > 0.0) || self.sigma0 == self.sigma1 {
            return Err(Error::invalid(
                "phantom needs positive, distinct conductivities",
            ));
        }
        for piece in &self.include {
            let [lo, hi] = piece.bounding_box();
            if lo[0] <= 0.0 || lo[1] <= 0.0 || hi[0] >= 1.0 || hi[1] >= 1.0 {
                return Err(Error::invalid(format!(
                    "{} touches the boundary",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        self.include.iter().any(|s| s.contains(p)) && !self.exclude.iter().any(|s| s.contains(p))
    }

    pub fn conductivity(&self, mesh: &CrossedMesh) -> ConductivityField {
        ConductivityField::rasterize(mesh, self.sigma0, self.sigma1, |p| self.contains(p))
    }

    /// Area estimated at the midpoints of a `samples²` grid.
    pub fn area(&self, samples: usize) -> f64 {
        let mut inside = 0usize;
        for j in 0..samples {
            for i in 0..samples {
                if self.contains([
                    (i as f64 + 0.5) / samples as f64,
                    (j as f64 + 0.5) / samples as f64,
                ]) {
                    inside += 1;
                }
            }
        }
        inside as f64 / (samples * samples) as f64
    }

    /// Closed pixels of an `np × np` partition (index `j · np + i`) that meet
    /// the closure of the inclusion. Each pixel, widened by `1e-9`, is probed
    /// on a `(sub+1)²` grid that includes its edges, so tangencies at probe
    /// points count.
    pub fn pixel_mask(&self, np: usize, sub: usize) -> Vec<bool> {
        let h = 1.0 / np as f64;
        let eps = 1e-9;
        (0..np * np)
            .map(|k| {
                let (x0, y0) = ((k % np) as f64 * h - eps, (k / np) as f64 * h - eps);
                let step = (h + 2.0 * eps) / sub as f64;
                (0..=sub).any(|b| {
                    (0..=sub).any(|a| self.contains([x0 + a as f64 * step, y0 + b as f64 * step]))
                })
            })
            .collect()
    }
}
