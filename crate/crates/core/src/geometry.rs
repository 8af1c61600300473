//! Structured triangulations of the perforated unit cell `Y* = Y \ T` and of
//! the perforated domain `Ω^ε = (0,1)² \ T^ε` with `ε = 1/n`.
//!
//! Every mesh is a uniform grid of squares, each split along its `(0,0)–(1,1)`
//! diagonal, with the squares covered by the hole removed. Holes are unions
//! of grid squares, so the meshes represent the geometry exactly and the
//! domain mesh restricted to any period cell is a translated, scaled copy of
//! the cell mesh.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default vertex budget for domain meshes.
pub const DEFAULT_VERTEX_BUDGET: usize = 100_000;

/// Read access shared by every triangulation in the crate.
pub trait Triangulation {
    fn vertices(&self) -> &[[f64; 2]];
    fn triangles(&self) -> &[[usize; 3]];
    fn areas(&self) -> &[f64];

    fn num_vertices(&self) -> usize {
        self.vertices().len()
    }

    fn num_triangles(&self) -> usize {
        self.triangles().len()
    }

    fn total_area(&self) -> f64 {
        self.areas().iter().sum()
    }
}

/// Meshes whose triangles are halves of squares of a periodic cell pattern.
pub trait CellPatterned: Triangulation {
    /// Resolution of the cell pattern (squares per cell side).
    fn pattern_resolution(&self) -> usize;
    /// `(i, j)` index of the cell-pattern square that triangle `t` halves.
    fn pattern_square(&self, t: usize) -> [usize; 2];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoleKind {
    None,
    Square,
    /// Staircase approximation of the disc inscribed in `hole_extent`.
    Polygon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGeometry {
    pub hole_kind: HoleKind,
    /// `[x_lo, y_lo, x_hi, y_hi]` in unit-cell coordinates.
    pub hole_extent: [f64; 4],
    pub resolution: usize,
}

impl CellGeometry {
    /// The canonical square hole `[3/8, 5/8]²`.
    pub fn square(resolution: usize) -> Self {
        Self {
            hole_kind: HoleKind::Square,
            hole_extent: [0.375, 0.375, 0.625, 0.625],
            resolution,
        }
    }

    pub fn no_hole(resolution: usize) -> Self {
        Self {
            hole_kind: HoleKind::None,
            hole_extent: [0.0; 4],
            resolution,
        }
    }

    pub fn polygon(resolution: usize, extent: [f64; 4]) -> Self {
        Self {
            hole_kind: HoleKind::Polygon,
            hole_extent: extent,
            resolution,
        }
    }

    pub fn with_resolution(&self, resolution: usize) -> Self {
        Self {
            resolution,
            ..self.clone()
        }
    }

    /// Checks the alignment and margin rules at the stored resolution.
    pub fn validate(&self) -> Result<()> {
        self.removed_squares().map(|_| ())
    }

    /// Row-major `m × m` mask of the squares covered by the hole.
    pub fn removed_squares(&self) -> Result<Vec<bool>> {
        let m = self.resolution;
        match self.hole_kind {
            HoleKind::None => {
                if m < 1 {
                    return Err(Error::Geometry("resolution must be positive".into()));
                }
                Ok(vec![false; m * m])
            }
            HoleKind::Square => {
                if m < 8 {
                    return Err(Error::Geometry(format!("resolution {m} below minimum 8")));
                }
                let [x0, y0, x1, y1] = self.hole_extent;
                if !(x0 < x1 && y0 < y1) {
                    return Err(Error::Geometry("empty square hole extent".into()));
                }
                if x0 <= 0.0 || y0 <= 0.0 || x1 >= 1.0 || y1 >= 1.0 {
                    return Err(Error::Geometry(
                        "hole must lie strictly inside the unit cell".into(),
                    ));
                }
                let mf = m as f64;
                let mut lines = [0usize; 4];
                for (k, &c) in self.hole_extent.iter().enumerate() {
                    let g = c * mf;
                    if (g - g.round()).abs() > 1e-9 {
                        return Err(Error::Geometry(format!(
                            "hole edge {c} is not a grid line at resolution {m}"
                        )));
                    }
                    lines[k] = g.round() as usize;
                }
                let mut mask = vec![false; m * m];
                for j in lines[1]..lines[3] {
                    for i in lines[0]..lines[2] {
                        mask[j * m + i] = true;
                    }
                }
                Ok(mask)
            }
            HoleKind::Polygon => {
                if m < 8 {
                    return Err(Error::Geometry(format!("resolution {m} below minimum 8")));
                }
                let [x0, y0, x1, y1] = self.hole_extent;
                if !(x0 < x1 && y0 < y1) || x0 <= 0.0 || y0 <= 0.0 || x1 >= 1.0 || y1 >= 1.0 {
                    return Err(Error::Geometry(
                        "polygon hole extent must be a non-empty box inside the cell".into(),
                    ));
                }
                let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
                let r = 0.5 * (x1 - x0).min(y1 - y0);
                let h = 1.0 / m as f64;
                let mut mask = vec![false; m * m];
                for j in 0..m {
                    for i in 0..m {
                        let (px, py) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                        if (px - cx).powi(2) + (py - cy).powi(2) < r * r {
                            if i == 0 || j == 0 || i == m - 1 || j == m - 1 {
                                return Err(Error::Geometry(
                                    "polygon hole touches the cell boundary".into(),
                                ));
                            }
                            mask[j * m + i] = true;
                        }
                    }
                }
                Ok(mask)
            }
        }
    }

    /// Exact hole area at the stored resolution.
    pub fn hole_area(&self) -> Result<f64> {
        let mask = self.removed_squares()?;
        let h = 1.0 / self.resolution as f64;
        Ok(mask.iter().filter(|&&r| r).count() as f64 * h * h)
    }
}

/// Triangulation of a uniform grid of `size × size` squares on `[0, extent]²`
/// with some squares removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMesh {
    pub size: usize,
    pub extent: f64,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub areas: Vec<f64>,
    /// Grid coordinates `(I, J)` of every vertex.
    pub grid_of_vertex: Vec<[usize; 2]>,
    /// Vertex index of every grid point, `None` if the point is inside a hole.
    pub vertex_of_grid: Vec<Option<usize>>,
    /// `(I, J)` square that each triangle halves.
    pub square_of_triangle: Vec<[usize; 2]>,
}

impl GridMesh {
    /// Full (unperforated) grid of the unit square.
    pub fn unit_square(size: usize) -> Self {
        Self::build(size, 1.0, |_, _| true)
    }

    fn build(size: usize, extent: f64, keep: impl Fn(usize, usize) -> bool) -> Self {
        let np = size + 1;
        let mut used = vec![false; np * np];
        for j in 0..size {
            for i in 0..size {
                if keep(i, j) {
                    for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        used[(j + dj) * np + i + di] = true;
                    }
                }
            }
        }
        let h = extent / size as f64;
        let mut vertices = Vec::new();
        let mut grid_of_vertex = Vec::new();
        let mut vertex_of_grid = vec![None; np * np];
        for j in 0..np {
            for i in 0..np {
                if used[j * np + i] {
                    vertex_of_grid[j * np + i] = Some(vertices.len());
                    vertices.push([i as f64 * h, j as f64 * h]);
                    grid_of_vertex.push([i, j]);
                }
            }
        }
        let mut triangles = Vec::new();
        let mut square_of_triangle = Vec::new();
        let v = |i: usize, j: usize| vertex_of_grid[j * np + i].expect("corner of kept square");
        for j in 0..size {
            for i in 0..size {
                if keep(i, j) {
                    let (p00, p10, p11, p01) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
                    triangles.push([p00, p10, p11]);
                    triangles.push([p00, p11, p01]);
                    square_of_triangle.push([i, j]);
                    square_of_triangle.push([i, j]);
                }
            }
        }
        let areas = triangles
            .iter()
            .map(|t| signed_area(&vertices, t))
            .collect();
        Self {
            size,
            extent,
            vertices,
            triangles,
            areas,
            grid_of_vertex,
            vertex_of_grid,
            square_of_triangle,
        }
    }

    pub fn vertex_at(&self, i: usize, j: usize) -> Option<usize> {
        self.vertex_of_grid[j * (self.size + 1) + i]
    }

    /// Vertices on the outer boundary of `[0, extent]²`.
    pub fn outer_boundary(&self) -> Vec<usize> {
        let n = self.size;
        self.grid_of_vertex
            .iter()
            .enumerate()
            .filter(|(_, &[i, j])| i == 0 || j == 0 || i == n || j == n)
            .map(|(v, _)| v)
            .collect()
    }

    /// Triangle containing point `x` of a full grid, with its barycentric
    /// coordinates. Points on shared edges resolve to the lower-left square.
    pub fn locate(&self, x: [f64; 2]) -> (usize, [f64; 3]) {
        let n = self.size;
        let h = self.extent / n as f64;
        let fx = (x[0] / h).clamp(0.0, n as f64);
        let fy = (x[1] / h).clamp(0.0, n as f64);
        let i = (fx.floor() as usize).min(n - 1);
        let j = (fy.floor() as usize).min(n - 1);
        let (s, t) = (fx - i as f64, fy - j as f64);
        let base = 2 * (j * n + i);
        if s >= t {
            // [p00, p10, p11]
            (base, [1.0 - s, s - t, t])
        } else {
            // [p00, p11, p01]
            (base + 1, [1.0 - t, s, t - s])
        }
    }
}

impl Triangulation for GridMesh {
    fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }
    fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }
    fn areas(&self) -> &[f64] {
        &self.areas
    }
}

pub(crate) fn signed_area(v: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let [a, b, c] = [v[t[0]], v[t[1]], v[t[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Triangulation of `Y*` with periodic identification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMesh {
    pub geometry: CellGeometry,
    pub grid: GridMesh,
    /// `(replica, master)`: vertices on the right/top faces and their
    /// partners on the left/bottom faces (corners map to the origin).
    pub periodic_pairs: Vec<(usize, usize)>,
    pub hole_boundary: Vec<usize>,
    /// Row-major mask of removed squares.
    pub removed: Vec<bool>,
}

impl Triangulation for CellMesh {
    fn vertices(&self) -> &[[f64; 2]] {
        &self.grid.vertices
    }
    fn triangles(&self) -> &[[usize; 3]] {
        &self.grid.triangles
    }
    fn areas(&self) -> &[f64] {
        &self.grid.areas
    }
}

impl CellPatterned for CellMesh {
    fn pattern_resolution(&self) -> usize {
        self.grid.size
    }
    fn pattern_square(&self, t: usize) -> [usize; 2] {
        self.grid.square_of_triangle[t]
    }
}

impl CellMesh {
    pub fn resolution(&self) -> usize {
        self.grid.size
    }

    /// Master vertex of each vertex under periodic identification.
    pub fn periodic_master(&self) -> Vec<usize> {
        let mut master: Vec<usize> = (0..self.num_vertices()).collect();
        for &(r, m) in &self.periodic_pairs {
            master[r] = m;
        }
        master
    }

    /// Cell-mesh vertex at grid point `(i mod m, j mod m)`.
    pub fn periodic_vertex(&self, i: usize, j: usize) -> usize {
        let m = self.resolution();
        self.grid
            .vertex_at(i % m, j % m)
            .expect("grid points reduced mod m lie outside the hole interior")
    }

    /// Index of the triangle covering half `half` (0 = lower-right,
    /// 1 = upper-left) of square `(i, j)`.
    pub fn triangle_of_square(&self) -> Vec<Option<usize>> {
        let m = self.resolution();
        let mut table = vec![None; 2 * m * m];
        for (t, &[i, j]) in self.grid.square_of_triangle.iter().enumerate() {
            let slot = 2 * (j * m + i);
            if table[slot].is_none() {
                table[slot] = Some(t);
            } else {
                table[slot + 1] = Some(t);
            }
        }
        table
    }

    /// The hole-filled cell (full `m × m` grid), used to extend cell fields
    /// into `T`.
    pub fn filled(&self) -> GridMesh {
        GridMesh::unit_square(self.resolution())
    }
}

pub fn build_cell_mesh(geom: &CellGeometry) -> Result<CellMesh> {
    let removed = geom.removed_squares()?;
    let m = geom.resolution;
    if removed.iter().all(|&r| r) {
        return Err(Error::Geometry("hole covers the whole cell".into()));
    }
    let grid = GridMesh::build(m, 1.0, |i, j| !removed[j * m + i]);

    let mut periodic_pairs = Vec::new();
    for (v, &[i, j]) in grid.grid_of_vertex.iter().enumerate() {
        if i == m || j == m {
            let master = grid
                .vertex_at(i % m, j % m)
                .ok_or_else(|| Error::Geometry("periodic partner missing".into()))?;
            periodic_pairs.push((v, master));
        }
    }

    let hole_boundary = hole_adjacent_vertices(&grid, |i, j| removed[j * m + i])
        .into_iter()
        .collect();

    Ok(CellMesh {
        geometry: geom.clone(),
        grid,
        periodic_pairs,
        hole_boundary,
        removed,
    })
}

fn hole_adjacent_vertices(grid: &GridMesh, removed: impl Fn(usize, usize) -> bool) -> BTreeSet<usize> {
    let n = grid.size;
    let mut set = BTreeSet::new();
    for j in 0..n {
        for i in 0..n {
            if removed(i, j) {
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if let Some(v) = grid.vertex_at(i + di, j + dj) {
                        set.insert(v);
                    }
                }
            }
        }
    }
    set
}

/// Triangulation of `Ω^ε` for `ε = 1/n`, `s` squares per cell side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainMesh {
    pub n: usize,
    pub s: usize,
    pub geometry: CellGeometry,
    pub grid: GridMesh,
    pub dirichlet_boundary: Vec<usize>,
    /// One vertex list per hole, holes ordered by cell (row-major).
    pub hole_boundaries: Vec<Vec<usize>>,
    /// Lattice coordinate `k` of the period cell containing each triangle.
    pub cell_index: Vec<[usize; 2]>,
    /// Fractional coordinate `x/ε mod 1` of each vertex.
    pub local_coord: Vec<[f64; 2]>,
    /// Cell-pattern grid point `(I mod s, J mod s)` of each vertex.
    pub local_grid: Vec<[usize; 2]>,
    /// Cell-pattern square of each triangle.
    pub local_square: Vec<[usize; 2]>,
}

impl Triangulation for DomainMesh {
    fn vertices(&self) -> &[[f64; 2]] {
        &self.grid.vertices
    }
    fn triangles(&self) -> &[[usize; 3]] {
        &self.grid.triangles
    }
    fn areas(&self) -> &[f64] {
        &self.grid.areas
    }
}

impl CellPatterned for DomainMesh {
    fn pattern_resolution(&self) -> usize {
        self.s
    }
    fn pattern_square(&self, t: usize) -> [usize; 2] {
        self.local_square[t]
    }
}

impl DomainMesh {
    pub fn eps(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// The hole-filled mesh of `Ω` at the same resolution.
    pub fn filled(&self) -> GridMesh {
        GridMesh::unit_square(self.n * self.s)
    }

    /// Index of each domain vertex in [`DomainMesh::filled`].
    pub fn filled_index(&self) -> Vec<usize> {
        let np = self.grid.size + 1;
        self.grid
            .grid_of_vertex
            .iter()
            .map(|&[i, j]| j * np + i)
            .collect()
    }

    /// Maps each triangle to the matching triangle of a cell mesh built at
    /// resolution `s` from the same geometry.
    pub fn cell_triangle_map(&self, cell: &CellMesh) -> Result<Vec<usize>> {
        if cell.resolution() != self.s || cell.removed != self.geometry.with_resolution(self.s).removed_squares()? {
            return Err(Error::Geometry(format!(
                "cell mesh at resolution {} does not match domain pattern s = {}",
                cell.resolution(),
                self.s
            )));
        }
        let table = cell.triangle_of_square();
        let s = self.s;
        Ok(self
            .local_square
            .iter()
            .enumerate()
            .map(|(t, &[i, j])| {
                let half = t % 2;
                table[2 * (j * s + i) + half].expect("square kept in both meshes")
            })
            .collect())
    }

    /// Maps each vertex to the cell-mesh vertex with the same local position.
    pub fn cell_vertex_map(&self, cell: &CellMesh) -> Result<Vec<usize>> {
        if cell.resolution() != self.s {
            return Err(Error::Geometry(format!(
                "cell resolution {} differs from domain pattern s = {}",
                cell.resolution(),
                self.s
            )));
        }
        Ok(self
            .local_grid
            .iter()
            .map(|&[i, j]| cell.periodic_vertex(i, j))
            .collect())
    }
}

pub fn build_domain_mesh(n: usize, s: usize, geom: &CellGeometry) -> Result<DomainMesh> {
    build_domain_mesh_with_budget(n, s, geom, DEFAULT_VERTEX_BUDGET)
}

pub fn build_domain_mesh_with_budget(
    n: usize,
    s: usize,
    geom: &CellGeometry,
    budget: usize,
) -> Result<DomainMesh> {
    if n == 0 || s == 0 {
        return Err(Error::Geometry("n and s must be positive".into()));
    }
    let size = n * s;
    if (size + 1) * (size + 1) > budget {
        return Err(Error::Budget(format!(
            "domain grid ({size}+1)² exceeds the vertex budget {budget}"
        )));
    }
    let pattern = geom.with_resolution(s);
    let removed = pattern.removed_squares()?;
    let grid = GridMesh::build(size, 1.0, |i, j| !removed[(j % s) * s + i % s]);

    let dirichlet_boundary = grid.outer_boundary();
    let mut holes: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for j in 0..size {
        for i in 0..size {
            if removed[(j % s) * s + i % s] {
                let entry = holes.entry((j / s, i / s)).or_default();
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    if let Some(v) = grid.vertex_at(i + di, j + dj) {
                        entry.insert(v);
                    }
                }
            }
        }
    }
    let hole_boundaries = holes.into_values().map(|s| s.into_iter().collect()).collect();
    let cell_index = grid
        .square_of_triangle
        .iter()
        .map(|&[i, j]| [i / s, j / s])
        .collect();
    let local_square = grid
        .square_of_triangle
        .iter()
        .map(|&[i, j]| [i % s, j % s])
        .collect();
    let local_grid: Vec<[usize; 2]> = grid
        .grid_of_vertex
        .iter()
        .map(|&[i, j]| [i % s, j % s])
        .collect();
    let local_coord = local_grid
        .iter()
        .map(|&[i, j]| [i as f64 / s as f64, j as f64 / s as f64])
        .collect();

    Ok(DomainMesh {
        n,
        s,
        geometry: pattern,
        grid,
        dirichlet_boundary,
        hole_boundaries,
        cell_index,
        local_coord,
        local_grid,
        local_square,
    })
}

/// Summary statistics and invariant flags for a triangulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshReport {
    pub vertices: usize,
    pub triangles: usize,
    pub edges: usize,
    pub min_angle_deg: f64,
    pub min_area: f64,
    pub total_area: f64,
    /// `V − E + F` of each connected component.
    pub euler_characteristic: Vec<i64>,
    /// Number of holes implied by the topology, `Σ (1 − χ)`.
    pub hole_components: usize,
    pub violations: Vec<String>,
}

pub fn mesh_report<M: Triangulation + ?Sized>(mesh: &M) -> MeshReport {
    let v = mesh.vertices();
    let tris = mesh.triangles();
    let mut violations = Vec::new();
    let mut min_angle = f64::INFINITY;
    let mut min_area = f64::INFINITY;
    let mut edges = BTreeSet::new();
    for (t, tri) in tris.iter().enumerate() {
        let area = signed_area(v, tri);
        min_area = min_area.min(area);
        if area <= 0.0 {
            violations.push(format!("triangle {t} has non-positive area {area:e}"));
        }
        for k in 0..3 {
            let (a, b, c) = (v[tri[k]], v[tri[(k + 1) % 3]], v[tri[(k + 2) % 3]]);
            let u = [b[0] - a[0], b[1] - a[1]];
            let w = [c[0] - a[0], c[1] - a[1]];
            let cos = (u[0] * w[0] + u[1] * w[1]) / ((u[0].hypot(u[1])) * (w[0].hypot(w[1])));
            min_angle = min_angle.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
            let (p, q) = (tri[k].min(tri[(k + 1) % 3]), tri[k].max(tri[(k + 1) % 3]));
            edges.insert((p, q));
        }
    }

    // Components through shared vertices.
    let mut parent: Vec<usize> = (0..v.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(a, b) in &edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut comp: BTreeMap<usize, (i64, i64, i64)> = BTreeMap::new();
    let mut used = vec![false; v.len()];
    for tri in tris {
        for &x in tri {
            used[x] = true;
        }
        let r = find(&mut parent, tri[0]);
        comp.entry(r).or_default().2 += 1;
    }
    for (x, &u) in used.iter().enumerate() {
        if u {
            let r = find(&mut parent, x);
            comp.entry(r).or_default().0 += 1;
        } else {
            violations.push(format!("vertex {x} belongs to no triangle"));
        }
    }
    for &(a, _) in &edges {
        let r = find(&mut parent, a);
        comp.entry(r).or_default().1 += 1;
    }
    let euler: Vec<i64> = comp.values().map(|&(vv, e, f)| vv - e + f).collect();
    let holes = euler.iter().map(|&c| (1 - c).max(0) as usize).sum();

    MeshReport {
        vertices: v.len(),
        triangles: tris.len(),
        edges: edges.len(),
        min_angle_deg: min_angle,
        min_area,
        total_area: mesh.total_area(),
        euler_characteristic: euler,
        hole_components: holes,
        violations,
    }
}

/// Writes `v x y`, `t i j k`, `tag name i...` and `field name` sections.
pub fn write_mesh_text<W: Write, M: Triangulation + ?Sized>(
    mut w: W,
    mesh: &M,
    tags: &[(&str, &[usize])],
    fields: &[(&str, &[f64])],
) -> Result<()> {
    for p in mesh.vertices() {
        writeln!(w, "v {:?} {:?}", p[0], p[1])?;
    }
    for t in mesh.triangles() {
        writeln!(w, "t {} {} {}", t[0], t[1], t[2])?;
    }
    for (name, ids) in tags {
        write!(w, "tag {name}")?;
        for i in *ids {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    for (name, values) in fields {
        writeln!(w, "field {name}")?;
        for x in *values {
            writeln!(w, "{x:?}")?;
        }
    }
    Ok(())
}

/// Parsed contents of the mesh text format.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeshText {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub tags: Vec<(String, Vec<usize>)>,
    pub fields: Vec<(String, Vec<f64>)>,
}

pub fn read_mesh_text<R: BufRead>(r: R) -> Result<MeshText> {
    let perr = |l: &str| Error::Parse(format!("malformed mesh line `{l}`"));
    let mut out = MeshText::default();
    let mut current_field: Option<usize> = None;
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                current_field = None;
                let xs: Vec<f64> = parts.map(|p| p.parse().map_err(|_| perr(line))).collect::<Result<_>>()?;
                if xs.len() != 2 {
                    return Err(perr(line));
                }
                out.vertices.push([xs[0], xs[1]]);
            }
            Some("t") => {
                current_field = None;
                let xs: Vec<usize> = parts.map(|p| p.parse().map_err(|_| perr(line))).collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(perr(line));
                }
                out.triangles.push([xs[0], xs[1], xs[2]]);
            }
            Some("tag") => {
                current_field = None;
                let name = parts.next().ok_or_else(|| perr(line))?.to_string();
                let ids = parts.map(|p| p.parse().map_err(|_| perr(line))).collect::<Result<_>>()?;
                out.tags.push((name, ids));
            }
            Some("field") => {
                let name = parts.next().ok_or_else(|| perr(line))?.to_string();
                out.fields.push((name, Vec::new()));
                current_field = Some(out.fields.len() - 1);
            }
            Some(tok) => {
                let f = current_field.ok_or_else(|| perr(line))?;
                out.fields[f].1.push(tok.parse().map_err(|_| perr(line))?);
            }
            None => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_cell_counts() {
        let mesh = build_cell_mesh(&CellGeometry::square(8)).unwrap();
        assert_eq!(mesh.num_vertices(), 80);
        assert_eq!(mesh.num_triangles(), 120);
        assert_eq!(mesh.hole_boundary.len(), 8);
        assert!((mesh.total_area() - 15.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_hole_rejected() {
        let g = CellGeometry::square(12);
        assert!(matches!(build_cell_mesh(&g), Err(Error::Geometry(_))));
    }

    #[test]
    fn hole_touching_boundary_rejected() {
        let g = CellGeometry {
            hole_kind: HoleKind::Square,
            hole_extent: [0.0, 0.25, 0.5, 0.75],
            resolution: 8,
        };
        assert!(build_cell_mesh(&g).is_err());
    }

    #[test]
    fn periodic_pairs_shift_by_lattice_vectors() {
        let mesh = build_cell_mesh(&CellGeometry::square(16)).unwrap();
        for &(r, m) in &mesh.periodic_pairs {
            let (a, b) = (mesh.grid.vertices[r], mesh.grid.vertices[m]);
            let d = [a[0] - b[0], a[1] - b[1]];
            assert!(d.iter().all(|c| *c == 0.0 || *c == 1.0));
            assert!(d != [0.0, 0.0]);
        }
        // Right face, top face, minus the doubly counted corner.
        assert_eq!(mesh.periodic_pairs.len(), 17 + 17 - 1);
    }

    #[test]
    fn locate_returns_barycentrics_summing_to_one() {
        let g = GridMesh::unit_square(4);
        for x in [[0.1, 0.05], [0.3, 0.7], [1.0, 1.0], [0.0, 0.99]] {
            let (t, b) = g.locate(x);
            let tri = g.triangles[t];
            let p: [f64; 2] = [0, 1].map(|c| (0..3).map(|k| b[k] * g.vertices[tri[k]][c]).sum());
            assert!((p[0] - x[0]).abs() < 1e-14 && (p[1] - x[1]).abs() < 1e-14);
            assert!(b.iter().all(|&w| w >= -1e-14));
        }
    }
}
