use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid_fem::{ConductivityField, CrossedMesh, Point};

use super::geometry::{union_distance, Shape};

/// How a level-set function decides the conductivity of a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Rasterization {
    /// Sign of the interpolated value at the centroid.
    #[default]
    Centroid,
    /// Exact area fraction of `{φ < 0}` for the P1 interpolant.
    AreaFraction,
}

/// Nodal level-set values on the `(n+1)²` grid nodes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetField {
    n: usize,
    pub values: Vec<f64>,
}

impl LevelSetField {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != (n + 1) * (n + 1) {
            return Err(Error::MeshMismatch(format!(
                "{} level-set values for a {n}×{n} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite level-set value"));
        }
        Ok(Self { n, values })
    }

    pub fn from_fn(mesh: &CrossedMesh, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = mesh.vertices()[..mesh.num_grid_nodes()]
            .iter()
            .map(|&p| f(p))
            .collect();
        Self::new(mesh.n(), values)
    }

    /// Explicitly empty shape: a positive constant.
    pub fn empty(mesh: &CrossedMesh) -> Self {
        Self {
            n: mesh.n(),
            values: vec![1.0; mesh.num_grid_nodes()],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * (self.n + 1) + i]
    }

    pub fn is_empty_shape(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    fn check(&self, mesh: &CrossedMesh) -> Result<()> {
        if mesh.n() != self.n {
            return Err(Error::MeshMismatch(format!(
                "level set on n={}, mesh n={}",
                self.n,
                mesh.n()
            )));
        }
        Ok(())
    }

    /// Values on every mesh vertex; a cell center takes the mean of its
    /// four corners.
    pub fn nodal(&self, mesh: &CrossedMesh) -> Result<Vec<f64>> {
        self.check(mesh)?;
        let n = self.n;
        let mut out = Vec::with_capacity(mesh.num_vertices());
        out.extend_from_slice(&self.values);
        for j in 0..n {
            for i in 0..n {
                out.push(
                    0.25 * (self.at(i, j)
                        + self.at(i + 1, j)
                        + self.at(i, j + 1)
                        + self.at(i + 1, j + 1)),
                );
            }
        }
        Ok(out)
    }

    /// Fraction of every triangle inside `{φ < 0}` under `rule`.
    pub fn inside_fraction(&self, mesh: &CrossedMesh, rule: Rasterization) -> Result<Vec<f64>> {
        let nodal = self.nodal(mesh)?;
        Ok(mesh
            .triangles()
            .iter()
            .map(|t| {
                let v = t.map(|k| nodal[k]);
                match rule {
                    Rasterization::Centroid => {
                        if (v[0] + v[1] + v[2]) / 3.0 < 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Rasterization::AreaFraction => negative_fraction(v),
                }
            })
            .collect())
    }

    pub fn conductivity(
        &self,
        mesh: &CrossedMesh,
        sigma0: f64,
        sigma1: f64,
        rule: Rasterization,
    ) -> Result<ConductivityField> {
        let frac = self.inside_fraction(mesh, rule)?;
        Ok(match rule {
            Rasterization::Centroid => ConductivityField::from_inclusion(
                sigma0,
                sigma1,
                frac.iter().map(|&f| f > 0.5).collect(),
            ),
            Rasterization::AreaFraction => ConductivityField::from_values(
                frac.iter()
                    .map(|f| sigma0 + (sigma1 - sigma0) * f)
                    .collect(),
            ),
        })
    }

    /// Area of `{φ < 0}` for the P1 interpolant.
    pub fn area(&self, mesh: &CrossedMesh) -> Result<f64> {
        let frac = self.inside_fraction(mesh, Rasterization::AreaFraction)?;
        Ok(frac.iter().zip(mesh.areas()).map(|(f, a)| f * a).sum())
    }

    /// Share of interface triangles whose P1 gradient norm lies in
    /// `[0.5, 1.5]` (1.0 when there is no interface).
    pub fn gradient_quality(&self, mesh: &CrossedMesh) -> Result<f64> {
        let nodal = self.nodal(mesh)?;
        let (mut total, mut good) = (0usize, 0usize);
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let v = tri.map(|k| nodal[k]);
            let neg = v.iter().filter(|&&x| x < 0.0).count();
            if neg == 0 || neg == 3 {
                continue;
            }
            total += 1;
            let g = mesh.gradient(t, &nodal);
            let norm = g[0].hypot(g[1]);
            if (0.5..=1.5).contains(&norm) {
                good += 1;
            }
        }
        Ok(if total == 0 {
            1.0
        } else {
            good as f64 / total as f64
        })
    }

    /// Area of the symmetric difference between `{φ < 0}` and the set
    /// described by `contains`, estimated at the midpoints of a
    /// `samples × samples` grid.
    pub fn symmetric_difference(
        &self,
        mesh: &CrossedMesh,
        contains: impl Fn(Point) -> bool,
        samples: usize,
    ) -> Result<f64> {
        let nodal = self.nodal(mesh)?;
        let mut miss = 0usize;
        for j in 0..samples {
            for i in 0..samples {
                let p = [
                    (i as f64 + 0.5) / samples as f64,
                    (j as f64 + 0.5) / samples as f64,
                ];
                if (mesh.interpolate(&nodal, p) < 0.0) != contains(p) {
                    miss += 1;
                }
            }
        }
        Ok(miss as f64 / (samples * samples) as f64)
    }

    /// Zero-level polylines by marching squares on the grid nodes. Closed
    /// curves repeat their first point at the end.
    pub fn contours(&self) -> Vec<Vec<Point>> {
        marching_squares(self)
    }
}

/// Area fraction of `{ℓ < 0}` on a triangle for the linear `ℓ` with vertex
/// values `v`.
fn negative_fraction(v: [f64; 3]) -> f64 {
    let neg = v.iter().filter(|&&x| x < 0.0).count();
    match neg {
        0 => 0.0,
        3 => 1.0,
        _ => {
            // The lone vertex is the one whose sign differs from the others.
            let lone_negative = neg == 1;
            let k = (0..3).find(|&k| (v[k] < 0.0) == lone_negative).unwrap();
            let (a, b, c) = (v[k], v[(k + 1) % 3], v[(k + 2) % 3]);
            let corner = a * a / ((a - b) * (a - c));
            if lone_negative {
                corner
            } else {
                1.0 - corner
            }
        }
    }
}

/// Signed distance to the union of `shapes` on the grid nodes.
pub fn init_signed_distance(shapes: &[Shape], mesh: &CrossedMesh) -> Result<LevelSetField> {
    if shapes.is_empty() {
        return Err(Error::EmptyReconstruction);
    }
    for s in shapes {
        s.validate()?;
    }
    LevelSetField::from_fn(mesh, |p| union_distance(shapes, p))
}

/// Nodal velocity on every mesh vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub values: Vec<Point>,
}

impl VelocityField {
    pub fn zeros(mesh: &CrossedMesh) -> Self {
        Self {
            values: vec![[0.0; 2]; mesh.num_vertices()],
        }
    }

    pub fn from_fn(mesh: &CrossedMesh, f: impl Fn(Point) -> Point) -> Self {
        let values = mesh
            .vertices()
            .iter()
            .enumerate()
            .map(|(k, &p)| if mesh.is_boundary(k) { [0.0; 2] } else { f(p) })
            .collect();
        Self { values }
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max)
    }

    /// Largest stable forward-Euler step on an `n × n` grid, `0.5 h / max|V|`.
    pub fn admissible_dt(&self, n: usize) -> f64 {
        let grid = (n + 1) * (n + 1);
        let vmax = self.values[..grid]
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f64::max);
        if vmax == 0.0 {
            f64::INFINITY
        } else {
            0.5 / (n as f64 * vmax)
        }
    }
}

/// One forward-Euler step of `φ_t + V·∇φ = 0` with the local Lax–Friedrichs
/// flux. Ghost nodes extrapolate linearly, so one-sided differences coincide
/// on the boundary.
pub fn transport_levelset(
    phi: &LevelSetField,
    v: &VelocityField,
    dt: f64,
) -> Result<LevelSetField> {
    let n = phi.n;
    let grid = (n + 1) * (n + 1);
    if v.values.len() < grid {
        return Err(Error::MeshMismatch(
            "velocity does not cover the grid".into(),
        ));
    }
    if !(dt >= 0.0) {
        return Err(Error::invalid("negative time step"));
    }
    let admissible = v.admissible_dt(n);
    if dt > admissible * (1.0 + 1e-12) {
        return Err(Error::Cfl { dt, admissible });
    }
    let h = phi.h();
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let vel = &v.values[..grid];
    // Dissipation coefficients from the 3×3 node neighbourhood.
    let mut ax = vec![0.0; grid];
    let mut ay = vec![0.0; grid];
    for j in 0..=n {
        for i in 0..=n {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            for jj in j.saturating_sub(1)..=(j + 1).min(n) {
                for ii in i.saturating_sub(1)..=(i + 1).min(n) {
                    let w = vel[idx(ii, jj)];
                    mx = mx.max(w[0].abs());
                    my = my.max(w[1].abs());
                }
            }
            ax[idx(i, j)] = mx;
            ay[idx(i, j)] = my;
        }
    }
    let f = &phi.values;
    let diff = |k: usize, lo: Option<usize>, hi: Option<usize>| -> (f64, f64) {
        match (lo, hi) {
            (Some(a), Some(b)) => ((f[k] - f[a]) / h, (f[b] - f[k]) / h),
            (None, Some(b)) => {
                let d = (f[b] - f[k]) / h;
                (d, d)
            }
            (Some(a), None) => {
                let d = (f[k] - f[a]) / h;
                (d, d)
            }
            (None, None) => (0.0, 0.0),
        }
    };
    let mut out = f.clone();
    for j in 0..=n {
        for i in 0..=n {
            let k = idx(i, j);
            let (pm, pp) = diff(
                k,
                (i > 0).then(|| idx(i - 1, j)),
                (i < n).then(|| idx(i + 1, j)),
            );
            let (qm, qp) = diff(
                k,
                (j > 0).then(|| idx(i, j - 1)),
                (j < n).then(|| idx(i, j + 1)),
            );
            let w = vel[k];
            let ham = w[0] * 0.5 * (pm + pp) + w[1] * 0.5 * (qm + qp)
                - ax[k] * 0.5 * (pp - pm)
                - ay[k] * 0.5 * (qp - qm);
            out[k] = f[k] - dt * ham;
        }
    }
    LevelSetField::new(n, out)
}

/// Restores the signed-distance property while keeping every node's sign.
///
/// Nodes adjacent to a sign change keep their value when the local slope is
/// already close to one and are rescaled by it otherwise; the remaining
/// nodes receive distances from those by fast sweeping.
pub fn reinitialize(phi: &LevelSetField) -> LevelSetField {
    let n = phi.n;
    let h = phi.h();
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let f = &phi.values;
    let neg = |k: usize| f[k] < 0.0;
    let mut d = vec![f64::INFINITY; f.len()];
    let mut fixed = vec![false; f.len()];
    for j in 0..=n {
        for i in 0..=n {
            let k = idx(i, j);
            let mut nbrs = Vec::with_capacity(4);
            if i > 0 {
                nbrs.push(idx(i - 1, j));
            }
            if i < n {
                nbrs.push(idx(i + 1, j));
            }
            if j > 0 {
                nbrs.push(idx(i, j - 1));
            }
            if j < n {
                nbrs.push(idx(i, j + 1));
            }
            if !nbrs.iter().any(|&m| neg(m) != neg(k)) {
                continue;
            }
            let gx = match (i > 0, i < n) {
                (true, true) => (f[idx(i + 1, j)] - f[idx(i - 1, j)]) / (2.0 * h),
                (false, _) => (f[idx(i + 1, j)] - f[k]) / h,
                (_, false) => (f[k] - f[idx(i - 1, j)]) / h,
            };
            let gy = match (j > 0, j < n) {
                (true, true) => (f[idx(i, j + 1)] - f[idx(i, j - 1)]) / (2.0 * h),
                (false, _) => (f[idx(i, j + 1)] - f[k]) / h,
                (_, false) => (f[k] - f[idx(i, j - 1)]) / h,
            };
            let g = gx.hypot(gy);
            d[k] = if (g - 1.0).abs() <= 0.1 || g < 1e-12 {
                f[k].abs()
            } else {
                f[k].abs() / g
            };
            fixed[k] = true;
        }
    }
    if !fixed.iter().any(|&x| x) {
        return phi.clone();
    }
    let orders: [(bool, bool); 4] = [(false, false), (true, false), (true, true), (false, true)];
    for _ in 0..2 {
        for &(rev_i, rev_j) in &orders {
            for jj in 0..=n {
                let j = if rev_j { n - jj } else { jj };
                for ii in 0..=n {
                    let i = if rev_i { n - ii } else { ii };
                    let k = idx(i, j);
                    if fixed[k] {
                        continue;
                    }
                    let a = match (i > 0, i < n) {
                        (true, true) => d[idx(i - 1, j)].min(d[idx(i + 1, j)]),
                        (false, _) => d[idx(i + 1, j)],
                        (_, false) => d[idx(i - 1, j)],
                    };
                    let b = match (j > 0, j < n) {
                        (true, true) => d[idx(i, j - 1)].min(d[idx(i, j + 1)]),
                        (false, _) => d[idx(i, j + 1)],
                        (_, false) => d[idx(i, j - 1)],
                    };
                    let cand = if a.is_infinite() && b.is_infinite() {
                        f64::INFINITY
                    } else if (a - b).abs() >= h {
                        a.min(b) + h
                    } else {
                        0.5 * (a + b + (2.0 * h * h - (a - b) * (a - b)).sqrt())
                    };
                    if cand < d[k] {
                        d[k] = cand;
                    }
                }
            }
        }
    }
    let values = d
        .iter()
        .zip(f)
        .map(|(&dist, &v)| if v < 0.0 { -dist } else { dist })
        .collect();
    LevelSetField { n, values }
}

fn marching_squares(phi: &LevelSetField) -> Vec<Vec<Point>> {
    let n = phi.n;
    let h = phi.h();
    let neg = |i: usize, j: usize| phi.at(i, j) < 0.0;
    // Edge ids: 2·node for the edge to the right, 2·node + 1 for the edge up.
    let node = |i: usize, j: usize| j * (n + 1) + i;
    let crossing = |i0: usize, j0: usize, i1: usize, j1: usize| -> Point {
        let (a, b) = (phi.at(i0, j0), phi.at(i1, j1));
        let t = a / (a - b);
        [
            (i0 as f64 + t * (i1 as f64 - i0 as f64)) * h,
            (j0 as f64 + t * (j1 as f64 - j0 as f64)) * h,
        ]
    };
    let mut points: HashMap<usize, Point> = HashMap::new();
    let mut segments: Vec<[usize; 2]> = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let corners = [neg(i, j), neg(i + 1, j), neg(i + 1, j + 1), neg(i, j + 1)];
            // Cell edges counter-clockwise: bottom, right, top, left.
            let edges = [
                (2 * node(i, j), (i, j, i + 1, j)),
                (2 * node(i + 1, j) + 1, (i + 1, j, i + 1, j + 1)),
                (2 * node(i, j + 1), (i, j + 1, i + 1, j + 1)),
                (2 * node(i, j) + 1, (i, j, i, j + 1)),
            ];
            let cut: Vec<usize> = (0..4)
                .filter(|&e| corners[e] != corners[(e + 1) % 4])
                .collect();
            for &e in &cut {
                let (id, (a, b, c, d)) = edges[e];
                points.entry(id).or_insert_with(|| crossing(a, b, c, d));
            }
            match cut.len() {
                2 => segments.push([edges[cut[0]].0, edges[cut[1]].0]),
                4 => {
                    let center = 0.25
                        * (phi.at(i, j)
                            + phi.at(i + 1, j)
                            + phi.at(i + 1, j + 1)
                            + phi.at(i, j + 1));
                    // Connect around the corners whose sign differs from the center.
                    let ids = edges.map(|e| e.0);
                    if (center < 0.0) == corners[0] {
                        segments.push([ids[0], ids[1]]);
                        segments.push([ids[2], ids[3]]);
                    } else {
                        segments.push([ids[3], ids[0]]);
                        segments.push([ids[1], ids[2]]);
                    }
                }
                _ => {}
            }
        }
    }
    let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
    for (s, seg) in segments.iter().enumerate() {
        for &e in seg {
            by_edge.entry(e).or_default().push(s);
        }
    }
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    let next = |edge: usize, from: usize, used: &[bool]| -> Option<usize> {
        by_edge[&edge]
            .iter()
            .copied()
            .find(|&s| s != from && !used[s])
    };
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain: Vec<usize> = segments[start].to_vec();
        let mut cur = start;
        while let Some(s) = next(*chain.last().unwrap(), cur, &used) {
            used[s] = true;
            let [a, b] = segments[s];
            chain.push(if a == *chain.last().unwrap() { b } else { a });
            cur = s;
        }
        if chain.first() != chain.last() {
            let mut cur = start;
            while let Some(s) = next(chain[0], cur, &used) {
                used[s] = true;
                let [a, b] = segments[s];
                chain.insert(0, if a == chain[0] { b } else { a });
                cur = s;
            }
        }
        out.push(chain.iter().map(|e| points[e]).collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_phi(mesh: &CrossedMesh, c: Point, r: f64) -> LevelSetField {
        init_signed_distance(&[Shape::circle(c, r)], mesh).unwrap()
    }

    #[test]
    fn nodal_centers_average_corners() {
        let mesh = CrossedMesh::new(4).unwrap();
        let phi = LevelSetField::from_fn(&mesh, |[x, y]| x + 2.0 * y).unwrap();
        let nodal = phi.nodal(&mesh).unwrap();
        for (k, p) in mesh.vertices().iter().enumerate() {
            assert!((nodal[k] - (p[0] + 2.0 * p[1])).abs() < 1e-14);
        }
    }

    #[test]
    fn area_fraction_of_linear_field() {
        assert_eq!(negative_fraction([-1.0, 1.0, 1.0]), 0.25);
        assert_eq!(negative_fraction([1.0, -1.0, -1.0]), 0.75);
        let mesh = CrossedMesh::new(8).unwrap();
        let phi = LevelSetField::from_fn(&mesh, |[x, y]| x + y - 0.7).unwrap();
        assert!((phi.area(&mesh).unwrap() - 0.245).abs() < 1e-14);
    }

    #[test]
    fn empty_inputs() {
        let mesh = CrossedMesh::new(4).unwrap();
        assert!(matches!(
            init_signed_distance(&[], &mesh),
            Err(Error::EmptyReconstruction)
        ));
        let e = LevelSetField::empty(&mesh);
        assert!(e.is_empty_shape());
        assert!(e.contours().is_empty());
    }

    #[test]
    fn two_circles_give_two_contours() {
        let mesh = CrossedMesh::new(32).unwrap();
        let phi = init_signed_distance(
            &[
                Shape::circle([0.25, 0.5], 0.1),
                Shape::circle([0.75, 0.5], 0.12),
            ],
            &mesh,
        )
        .unwrap();
        let c = phi.contours();
        assert_eq!(c.len(), 2);
        for poly in &c {
            assert_eq!(poly.first(), poly.last());
        }
    }

    #[test]
    fn contour_lies_on_circle() {
        let mesh = CrossedMesh::new(64).unwrap();
        let phi = circle_phi(&mesh, [0.5, 0.5], 0.2);
        let c = phi.contours();
        assert_eq!(c.len(), 1);
        for p in &c[0] {
            assert!(((p[0] - 0.5).hypot(p[1] - 0.5) - 0.2).abs() < 1e-3);
        }
    }

    #[test]
    fn zero_velocity_is_identity() {
        let mesh = CrossedMesh::new(16).unwrap();
        let phi = circle_phi(&mesh, [0.5, 0.5], 0.2);
        let out = transport_levelset(&phi, &VelocityField::zeros(&mesh), 0.1).unwrap();
        assert_eq!(out, phi);
    }

    #[test]
    fn plane_advects_exactly() {
        let mesh = CrossedMesh::new(32).unwrap();
        let phi = LevelSetField::from_fn(&mesh, |[x, _]| x - 0.5).unwrap();
        let v = VelocityField {
            values: vec![[1.0, 0.0]; mesh.num_vertices()],
        };
        let dt = 0.5 / 32.0;
        let out = transport_levelset(&phi, &v, dt).unwrap();
        for j in 0..=32 {
            for i in 0..=32 {
                let x = i as f64 / 32.0;
                assert!((out.at(i, j) - (x - 0.5 - dt)).abs() < 1e-14);
            }
        }
        assert!(matches!(
            transport_levelset(&phi, &v, 2.0 * dt),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn translation_conserves_area() {
        let mesh = CrossedMesh::new(64).unwrap();
        let mut phi = circle_phi(&mesh, [0.4, 0.45], 0.2);
        let a0 = phi.area(&mesh).unwrap();
        let v = VelocityField::from_fn(&mesh, |_| [1.0, 0.5]);
        let dt = v.admissible_dt(64);
        for _ in 0..10 {
            phi = transport_levelset(&phi, &v, dt).unwrap();
        }
        let a1 = phi.area(&mesh).unwrap();
        assert!((a1 - a0).abs() / a0 < 0.02, "{a0} {a1}");
    }

    #[test]
    fn transport_stays_bounded() {
        let mesh = CrossedMesh::new(32).unwrap();
        let mut phi = circle_phi(&mesh, [0.5, 0.5], 0.2);
        let m0 = phi.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let v = VelocityField::from_fn(&mesh, |[x, y]| {
            let s = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
            [s * (0.5 - y), s * (x - 0.5)]
        });
        let dt = v.admissible_dt(32);
        for _ in 0..500 {
            phi = transport_levelset(&phi, &v, dt).unwrap();
        }
        let m1 = phi.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(m1 <= 10.0 * m0);
    }

    #[test]
    fn signed_distance_is_fixed_near_interface() {
        let mesh = CrossedMesh::new(64).unwrap();
        let phi = circle_phi(&mesh, [0.5, 0.5], 0.2);
        let r = reinitialize(&phi);
        let n = 64;
        let mut band = 0;
        for j in 0..=n {
            for i in 0..=n {
                let s = phi.at(i, j) < 0.0;
                let straddles = [
                    (i.wrapping_sub(1), j),
                    (i + 1, j),
                    (i, j.wrapping_sub(1)),
                    (i, j + 1),
                ]
                .iter()
                .any(|&(a, b)| a <= n && b <= n && (phi.at(a, b) < 0.0) != s);
                if straddles {
                    band += 1;
                    assert!((phi.at(i, j) - r.at(i, j)).abs() < 1e-6);
                }
                assert_eq!(s, r.at(i, j) < 0.0);
            }
        }
        assert!(band > 100);
    }

    #[test]
    fn reinitialization_removes_scaling() {
        let mesh = CrossedMesh::new(64).unwrap();
        let sd = circle_phi(&mesh, [0.5, 0.5], 0.2);
        let scaled = LevelSetField::new(64, sd.values.iter().map(|v| 3.0 * v).collect()).unwrap();
        let r = reinitialize(&scaled);
        let h = sd.h();
        for (a, b) in sd.values.iter().zip(&r.values) {
            if a.abs() < 0.1 {
                assert!((a - b).abs() < h, "{a} {b}");
            }
        }
        assert!(r.gradient_quality(&mesh).unwrap() >= 0.95);
    }

    #[test]
    fn reinitialization_repairs_distorted_field() {
        let mesh = CrossedMesh::new(64).unwrap();
        let mut phi = circle_phi(&mesh, [0.45, 0.5], 0.18);
        let v = VelocityField::from_fn(&mesh, |[x, y]| {
            let s = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
            [s * (1.0 + 4.0 * (y - 0.5)), s * 3.0 * (x - 0.5)]
        });
        let dt = v.admissible_dt(64);
        for _ in 0..20 {
            phi = transport_levelset(&phi, &v, dt).unwrap();
        }
        let r = reinitialize(&phi);
        assert!(r.gradient_quality(&mesh).unwrap() >= 0.95);
        for (a, b) in phi.values.iter().zip(&r.values) {
            assert_eq!(*a < 0.0, *b < 0.0);
        }
    }

    #[test]
    fn symmetric_difference_of_itself_is_small() {
        let mesh = CrossedMesh::new(64).unwrap();
        let phi = circle_phi(&mesh, [0.5, 0.5], 0.2);
        let d = phi
            .symmetric_difference(&mesh, |p| (p[0] - 0.5).hypot(p[1] - 0.5) < 0.2, 512)
            .unwrap();
        assert!(d < 1e-3, "{d}");
        let shifted = phi
            .symmetric_difference(&mesh, |p| (p[0] - 0.55).hypot(p[1] - 0.5) < 0.2, 512)
            .unwrap();
        assert!((shifted - 0.0399).abs() < 2e-3, "{shifted}");
    }
}
