use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Side of the unit square a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    /// x = 0
    Left,
    /// x = 1
    Right,
    /// y = 0
    Bottom,
    /// y = 1
    Top,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub segment: Segment,
}

/// Crossed-grid triangulation of the unit square.
///
/// Every one of the `n × n` square cells is split by both diagonals into four
/// triangles meeting at a cell-center node. Vertex order is row-major grid
/// nodes `(i, j) -> j·(n+1) + i` followed by the cell centers
/// `(n+1)² + j·n + i`. Triangle `4·(j·n + i) + q` is the bottom, right, top
/// or left quarter (`q = 0..4`) of cell `(i, j)`, all counter-clockwise.
#[derive(Debug, Clone)]
pub struct CrossedMesh {
    n: usize,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<BoundaryEdge>,
    /// Boundary nodes, counter-clockwise starting at the origin.
    boundary_nodes: Vec<usize>,
    boundary_slot: Vec<Option<usize>>,
    boundary_weights: Vec<f64>,
    areas: Vec<f64>,
    /// Gradients of the three barycentric basis functions per triangle.
    grads: Vec<[Point; 3]>,
}

impl CrossedMesh {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid(
                "crossed grid needs at least one cell per side",
            ));
        }
        let h = 1.0 / n as f64;
        let mut vertices = Vec::with_capacity((n + 1) * (n + 1) + n * n);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 * h, j as f64 * h]);
            }
        }
        for j in 0..n {
            for i in 0..n {
                vertices.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            }
        }
        let g = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::with_capacity(4 * n * n);
        for j in 0..n {
            for i in 0..n {
                let c = (n + 1) * (n + 1) + j * n + i;
                let (v00, v10, v11, v01) = (g(i, j), g(i + 1, j), g(i + 1, j + 1), g(i, j + 1));
                triangles.push([v00, v10, c]);
                triangles.push([v10, v11, c]);
                triangles.push([v11, v01, c]);
                triangles.push([v01, v00, c]);
            }
        }

        let mut boundary_nodes = Vec::with_capacity(4 * n);
        let mut segments = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_nodes.push(g(i, 0));
            segments.push(Segment::Bottom);
        }
        for j in 0..n {
            boundary_nodes.push(g(n, j));
            segments.push(Segment::Right);
        }
        for i in (1..=n).rev() {
            boundary_nodes.push(g(i, n));
            segments.push(Segment::Top);
        }
        for j in (1..=n).rev() {
            boundary_nodes.push(g(0, j));
            segments.push(Segment::Left);
        }
        let nb = boundary_nodes.len();
        let boundary_edges = (0..nb)
            .map(|p| BoundaryEdge {
                nodes: [boundary_nodes[p], boundary_nodes[(p + 1) % nb]],
                segment: segments[p],
            })
            .collect();

        Self::from_parts(n, vertices, triangles, boundary_edges, boundary_nodes)
    }

    fn from_parts(
        n: usize,
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<BoundaryEdge>,
        boundary_nodes: Vec<usize>,
    ) -> Result<Self> {
        let mut areas = Vec::with_capacity(triangles.len());
        let mut grads = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|v| vertices[v]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            if det <= 0.0 {
                return Err(Error::invalid(format!(
                    "triangle {t} is inverted or degenerate"
                )));
            }
            areas.push(0.5 * det);
            // grad λ_a = perp(c - b) / det, etc.
            let g = |p: Point, q: Point| [(p[1] - q[1]) / det, (q[0] - p[0]) / det];
            grads.push([g(b, c), g(c, a), g(a, b)]);
        }
        let mut boundary_slot = vec![None; vertices.len()];
        for (p, &v) in boundary_nodes.iter().enumerate() {
            boundary_slot[v] = Some(p);
        }
        let nb = boundary_nodes.len();
        let mut boundary_weights = vec![0.0; nb];
        for (p, e) in boundary_edges.iter().enumerate() {
            let [a, b] = e.nodes.map(|v| vertices[v]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            boundary_weights[p] += 0.5 * len;
            boundary_weights[(p + 1) % nb] += 0.5 * len;
        }
        Ok(Self {
            n,
            vertices,
            triangles,
            boundary_edges,
            boundary_nodes,
            boundary_slot,
            boundary_weights,
            areas,
            grads,
        })
    }

    /// Same topology with every vertex moved by `displacement`. Boundary
    /// nodes must stay put so that the square itself is unchanged.
    pub fn displaced(&self, displacement: &[Point]) -> Result<Self> {
        if displacement.len() != self.vertices.len() {
            return Err(Error::MeshMismatch("displacement length".into()));
        }
        for &v in &self.boundary_nodes {
            if displacement[v] != [0.0, 0.0] {
                return Err(Error::invalid("displacement must vanish on the boundary"));
            }
        }
        let vertices = self
            .vertices
            .iter()
            .zip(displacement)
            .map(|(p, d)| [p[0] + d[0], p[1] + d[1]])
            .collect();
        Self::from_parts(
            self.n,
            vertices,
            self.triangles.clone(),
            self.boundary_edges.clone(),
            self.boundary_nodes.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    /// Position of `node` in [`Self::boundary_nodes`], if it is on ∂Ω.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary_slot[node].is_some()
    }

    /// Trapezoidal quadrature weights per boundary node.
    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }

    pub fn area(&self, t: usize) -> f64 {
        self.areas[t]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn basis_gradients(&self, t: usize) -> &[Point; 3] {
        &self.grads[t]
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Index of grid node `(i, j)`.
    pub fn grid_node(&self, i: usize, j: usize) -> usize {
        j * (self.n + 1) + i
    }

    pub fn num_grid_nodes(&self) -> usize {
        (self.n + 1) * (self.n + 1)
    }

    /// Index of the center node of cell `(i, j)`.
    pub fn center_node(&self, i: usize, j: usize) -> usize {
        (self.n + 1) * (self.n + 1) + j * self.n + i
    }

    /// Gradient of a P1 field on triangle `t`.
    pub fn gradient(&self, t: usize, nodal: &[f64]) -> Point {
        let g = &self.grads[t];
        let tri = &self.triangles[t];
        let mut out = [0.0; 2];
        for a in 0..3 {
            out[0] += nodal[tri[a]] * g[a][0];
            out[1] += nodal[tri[a]] * g[a][1];
        }
        out
    }

    /// Triangle containing `p` on the undeformed grid (points on shared
    /// edges resolve to either neighbour).
    pub fn locate(&self, p: Point) -> usize {
        let n = self.n;
        let fx = (p[0].clamp(0.0, 1.0) * n as f64).min(n as f64 - 1e-12);
        let fy = (p[1].clamp(0.0, 1.0) * n as f64).min(n as f64 - 1e-12);
        let (i, j) = (fx.floor() as usize, fy.floor() as usize);
        let (sx, sy) = (fx - i as f64, fy - j as f64);
        // Diagonals of the unit cell split it into the four quarters.
        let below_main = sy <= sx;
        let below_anti = sy <= 1.0 - sx;
        let q = match (below_main, below_anti) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        4 * (j * n + i) + q
    }

    /// Value of a P1 field at `p`.
    pub fn interpolate(&self, nodal: &[f64], p: Point) -> f64 {
        let t = self.locate(p);
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        let tri = self.triangles[t];
        (1.0 - l1 - l2) * nodal[tri[0]] + l1 * nodal[tri[1]] + l2 * nodal[tri[2]]
    }

    /// Arc-length coordinate in `[0, 4)` of every boundary node, measured
    /// counter-clockwise from the origin.
    pub fn boundary_arclength(&self) -> Vec<f64> {
        self.boundary_nodes
            .iter()
            .map(|&v| arclength_of(self.vertices[v]))
            .collect()
    }
}

/// Counter-clockwise arc-length position of a point on ∂[0,1]².
pub fn arclength_of(p: Point) -> f64 {
    let [x, y] = p;
    let eps = 1e-12;
    if y <= eps && x < 1.0 - eps {
        x
    } else if x >= 1.0 - eps && y < 1.0 - eps {
        1.0 + y
    } else if y >= 1.0 - eps && x > eps {
        2.0 + (1.0 - x)
    } else {
        3.0 + (1.0 - y)
    }
}
