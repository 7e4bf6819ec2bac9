use crate::image::Domain;

/// A point `(x1, x2)` in domain units.
pub type Point = [f64; 2];

/// Regular cell-centered grid over a rectangular domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    domain: Domain,
    cell_size: [f64; 2],
    points: Vec<Point>,
}

/// Builds the grid of `nx × ny` cell centers over `domain`, row-major with
/// the first coordinate running fastest.
pub fn cell_centered_grid(nx: usize, ny: usize, domain: Domain) -> Grid {
    assert!(nx >= 1 && ny >= 1, "grid needs at least one cell per axis");
    let h1 = domain.width() / nx as f64;
    let h2 = domain.height() / ny as f64;
    let mut points = Vec::with_capacity(nx * ny);
    for i2 in 0..ny {
        let y = domain.y_min + (i2 as f64 + 0.5) * h2;
        for i1 in 0..nx {
            points.push([domain.x_min + (i1 as f64 + 0.5) * h1, y]);
        }
    }
    Grid {
        nx,
        ny,
        domain,
        cell_size: [h1, h2],
        points,
    }
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `(h1, h2)`.
    pub fn cell_size(&self) -> [f64; 2] {
        self.cell_size
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size[0] * self.cell_size[1]
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    #[inline]
    pub fn point(&self, i1: usize, i2: usize) -> Point {
        self.points[i1 + self.nx * i2]
    }

    /// Continuous grid coordinates of a point: cell centers sit at integers.
    #[inline]
    pub fn to_index_space(&self, p: Point) -> [f64; 2] {
        [
            (p[0] - self.domain.x_min) / self.cell_size[0] - 0.5,
            (p[1] - self.domain.y_min) / self.cell_size[1] - 0.5,
        ]
    }
}
