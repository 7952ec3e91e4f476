//! Finite weighted undirected graphs embedded in the plane.
//!
//! Edges are stored once in canonical orientation `(i, j)` with `i < j`.
//! Every builder validates the result: no self-loops, no duplicate edges,
//! strictly positive weights and a single connected component.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// A region removed from an outer domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Hole {
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    Disk { center: Point, radius: f64 },
}

impl Hole {
    fn contains(&self, p: Point) -> bool {
        match *self {
            Hole::Rect { x0, x1, y0, y1 } => p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1,
            Hole::Disk { center, radius } => dist2(p, center) < radius * radius,
        }
    }
}

/// Planar region used to place and clip graph nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DomainShape {
    /// Closed axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    Square { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// Open disk `‖x − center‖ < radius`.
    Disk { center: Point, radius: f64 },
    /// Open disk with excluded sub-regions.
    DiskWithHoles { center: Point, radius: f64, holes: Vec<Hole> },
}

impl DomainShape {
    pub fn square(lo: f64, hi: f64) -> Self {
        DomainShape::Square { x0: lo, x1: hi, y0: lo, y1: hi }
    }

    pub fn disk(radius: f64) -> Self {
        DomainShape::Disk { center: [0.0, 0.0], radius }
    }

    pub fn contains(&self, p: Point) -> bool {
        match self {
            DomainShape::Square { x0, x1, y0, y1 } => {
                p[0] >= *x0 && p[0] <= *x1 && p[1] >= *y0 && p[1] <= *y1
            }
            DomainShape::Disk { center, radius } => dist2(p, *center) < radius * radius,
            DomainShape::DiskWithHoles { center, radius, holes } => {
                dist2(p, *center) < radius * radius && !holes.iter().any(|h| h.contains(p))
            }
        }
    }

    /// Bounding box `(x0, x1, y0, y1)` of the outer region.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match self {
            DomainShape::Square { x0, x1, y0, y1 } => (*x0, *x1, *y0, *y1),
            DomainShape::Disk { center, radius } | DomainShape::DiskWithHoles { center, radius, .. } => {
                (center[0] - radius, center[0] + radius, center[1] - radius, center[1] + radius)
            }
        }
    }

    fn center(&self) -> Point {
        let (x0, x1, y0, y1) = self.bounds();
        [(x0 + x1) / 2.0, (y0 + y1) / 2.0]
    }

    /// Checks the outer region is nondegenerate and every hole overlaps it.
    pub fn validate(&self) -> Result<()> {
        match self {
            DomainShape::Square { x0, x1, y0, y1 } if !(x0 < x1 && y0 < y1) => {
                Err(Error::Construction("square bounds must satisfy x0 < x1 and y0 < y1".into()))
            }
            DomainShape::Disk { radius, .. } if *radius <= 0.0 => {
                Err(Error::Construction("disk radius must be positive".into()))
            }
            DomainShape::DiskWithHoles { center, radius, holes } => {
                if *radius <= 0.0 {
                    return Err(Error::Construction("disk radius must be positive".into()));
                }
                for h in holes {
                    let inside = match *h {
                        Hole::Rect { x0, x1, y0, y1 } => {
                            let nearest = [center[0].clamp(x0, x1), center[1].clamp(y0, y1)];
                            x0 < x1 && y0 < y1 && dist2(nearest, *center) < radius * radius
                        }
                        Hole::Disk { center: c, radius: r } => r > 0.0 && dist2(c, *center).sqrt() < *radius,
                    };
                    if !inside {
                        return Err(Error::Construction(format!("hole {h:?} does not intersect the outer disk")));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Weighted undirected edge in canonical orientation `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Connected weighted undirected graph with planar node coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    coords: Vec<Point>,
    edges: Vec<Edge>,
    /// Per node: `(neighbor, edge index)`, sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
    src: Vec<usize>,
    dst: Vec<usize>,
    weights: Vec<f64>,
}

impl Graph {
    /// Validates and assembles a graph. Edges may be given in either orientation.
    pub fn new(coords: Vec<Point>, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let n = coords.len();
        if n == 0 {
            return Err(Error::Construction("graph has no nodes".into()));
        }
        let mut seen = HashSet::new();
        let mut list = Vec::new();
        for (a, b, w) in edges {
            if a >= n || b >= n {
                return Err(Error::Construction(format!("edge ({a},{b}) references a node outside 0..{n}")));
            }
            if a == b {
                return Err(Error::Construction(format!("self-loop at node {a}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Construction(format!("edge ({a},{b}) has non-positive weight {w}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((i, j)) {
                return Err(Error::Construction(format!("duplicate edge ({i},{j})")));
            }
            list.push(Edge { i, j, w });
        }
        list.sort_by_key(|e| (e.i, e.j));

        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in list.iter().enumerate() {
            adjacency[e.i].push((e.j, k));
            adjacency[e.j].push((e.i, k));
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        let graph = Graph {
            src: list.iter().map(|e| e.i).collect(),
            dst: list.iter().map(|e| e.j).collect(),
            weights: list.iter().map(|e| e.w).collect(),
            coords,
            edges: list,
            adjacency,
        };
        let comps = graph.components();
        if comps.len() > 1 {
            let orphan_size = comps.iter().map(Vec::len).min().unwrap_or(0);
            return Err(Error::Disconnected { components: comps.len(), orphan_size });
        }
        Ok(graph)
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Lower endpoint of every canonical edge.
    pub fn edge_src(&self) -> &[usize] {
        &self.src
    }

    /// Upper endpoint of every canonical edge.
    pub fn edge_dst(&self) -> &[usize] {
        &self.dst
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Neighbors of `i` with the index of the connecting edge.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Index of edge `{i, j}` if present.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency
            .get(i)?
            .binary_search_by_key(&j, |&(nb, _)| nb)
            .ok()
            .map(|pos| self.adjacency[i][pos].1)
    }

    /// Breadth-first hop distances from `start` (`usize::MAX` if unreachable).
    pub fn hop_distances(&self, start: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n()];
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn components(&self) -> Vec<Vec<usize>> {
        component_lists(self.n(), |u| self.adjacency[u].iter().map(|&(v, _)| v).collect())
    }

    /// Text serialization: header `n m`, then `i x y` per node, then `i j w` per edge.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n(), self.m());
        for (i, p) in self.coords.iter().enumerate() {
            let _ = writeln!(out, "{i} {:?} {:?}", p[0], p[1]);
        }
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {:?}", e.i, e.j, e.w);
        }
        out
    }

    pub fn from_text(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let mut next_line = |what: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("unexpected end of input, expected {what}")))??;
            Ok(line.split_whitespace().map(str::to_owned).collect())
        };
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
        let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));

        let header = next_line("header")?;
        if header.len() != 2 {
            return Err(Error::Parse("header must be `n m`".into()));
        }
        let (n, m) = (parse_usize(&header[0])?, parse_usize(&header[1])?);
        let mut coords = vec![[0.0; 2]; n];
        for _ in 0..n {
            let f = next_line("node line")?;
            if f.len() != 3 {
                return Err(Error::Parse("node line must be `i x y`".into()));
            }
            let i = parse_usize(&f[0])?;
            if i >= n {
                return Err(Error::Parse(format!("node index {i} out of range")));
            }
            coords[i] = [parse_f64(&f[1])?, parse_f64(&f[2])?];
        }
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let f = next_line("edge line")?;
            if f.len() != 3 {
                return Err(Error::Parse("edge line must be `i j w`".into()));
            }
            edges.push((parse_usize(&f[0])?, parse_usize(&f[1])?, parse_f64(&f[2])?));
        }
        Graph::new(coords, edges)
    }
}

fn component_lists(n: usize, nbrs: impl Fn(usize) -> Vec<usize>) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; n];
    let mut comps = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut comp = vec![s];
        label[s] = id;
        let mut head = 0;
        while head < comp.len() {
            let u = comp[head];
            head += 1;
            for v in nbrs(u) {
                if label[v] == usize::MAX {
                    label[v] = id;
                    comp.push(v);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// `rows × cols` grid spread uniformly over the shape's bounding box with
/// 4-neighbor connectivity; nodes outside the shape and their edges are dropped.
pub fn build_lattice(rows: usize, cols: usize, shape: &DomainShape) -> Result<Graph> {
    build_lattice_in_box(rows, cols, shape.bounds(), shape)
}

/// Like [`build_lattice`] but spreads the grid over an explicit box
/// `(x0, x1, y0, y1)` before clipping.
pub fn build_lattice_in_box(rows: usize, cols: usize, grid_box: (f64, f64, f64, f64), shape: &DomainShape) -> Result<Graph> {
    if rows < 2 || cols < 2 {
        return Err(Error::Construction(format!("lattice needs rows, cols >= 2 (got {rows}x{cols})")));
    }
    shape.validate()?;
    let (x0, x1, y0, y1) = grid_box;
    if !(x1 > x0 && y1 > y0) {
        return Err(Error::Construction(format!("empty grid box {grid_box:?}")));
    }
    let hx = (x1 - x0) / (cols - 1) as f64;
    let hy = (y1 - y0) / (rows - 1) as f64;

    let mut id = vec![None; rows * cols];
    let mut coords = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let p = [x0 + c as f64 * hx, y0 + r as f64 * hy];
            if shape.contains(p) {
                id[r * cols + c] = Some(coords.len());
                coords.push(p);
            }
        }
    }
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let Some(a) = id[r * cols + c] else { continue };
            if c + 1 < cols {
                if let Some(b) = id[r * cols + c + 1] {
                    edges.push((a, b, 1.0));
                }
            }
            if r + 1 < rows {
                if let Some(b) = id[(r + 1) * cols + c] {
                    edges.push((a, b, 1.0));
                }
            }
        }
    }
    Graph::new(coords, edges)
}

/// Regular triangular lattice of the given spacing, anchored at the shape's
/// center, clipped to the shape. Odd rows are shifted by half a spacing.
pub fn build_triangular(spacing: f64, shape: &DomainShape) -> Result<Graph> {
    build_triangular_offset(spacing, [0.0, 0.0], shape)
}

/// Like [`build_triangular`] with the anchor node moved from the shape's
/// center by `offset`.
pub fn build_triangular_offset(spacing: f64, offset: Point, shape: &DomainShape) -> Result<Graph> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Construction(format!("spacing must be positive (got {spacing})")));
    }
    shape.validate()?;
    let (x0, x1, y0, y1) = shape.bounds();
    let c = shape.center();
    let center = [c[0] + offset[0], c[1] + offset[1]];
    let dy = spacing * 3f64.sqrt() / 2.0;
    let r_lo = ((y0 - center[1]) / dy).floor() as i64 - 1;
    let r_hi = ((y1 - center[1]) / dy).ceil() as i64 + 1;
    let c_lo = ((x0 - center[0]) / spacing).floor() as i64 - 1;
    let c_hi = ((x1 - center[0]) / spacing).ceil() as i64 + 1;

    let pos = |r: i64, c: i64| -> Point {
        let shift = if r.rem_euclid(2) == 1 { 0.5 } else { 0.0 };
        [center[0] + (c as f64 + shift) * spacing, center[1] + r as f64 * dy]
    };
    let width = (c_hi - c_lo + 1) as usize;
    let slot = |r: i64, c: i64| ((r - r_lo) as usize) * width + (c - c_lo) as usize;
    let mut id = vec![None; (r_hi - r_lo + 1) as usize * width];
    let mut coords = Vec::new();
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let p = pos(r, c);
            if shape.contains(p) {
                id[slot(r, c)] = Some(coords.len());
                coords.push(p);
            }
        }
    }
    if coords.is_empty() {
        return Err(Error::Construction("no lattice node falls inside the shape".into()));
    }
    let get = |r: i64, c: i64| -> Option<usize> {
        if r < r_lo || r > r_hi || c < c_lo || c > c_hi {
            None
        } else {
            id[slot(r, c)]
        }
    };
    let mut edges = Vec::new();
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            let Some(a) = get(r, c) else { continue };
            // Forward neighbors only: east, and the two in the row above.
            let up = if r.rem_euclid(2) == 1 { [c, c + 1] } else { [c - 1, c] };
            let fwd = [(r, c + 1), (r + 1, up[0]), (r + 1, up[1])];
            for (rr, cc) in fwd {
                if let Some(b) = get(rr, cc) {
                    edges.push((a, b, 1.0));
                }
            }
        }
    }
    Graph::new(coords, edges)
}

/// Random geometric graph with per-node degree targets drawn uniformly from
/// `[degree_min, degree_max]`, grown nearest-first, then made connected by
/// adding the shortest edge between each stray component and the rest.
pub fn build_random_inhomogeneous(
    n: usize,
    degree_min: usize,
    degree_max: usize,
    shape: &DomainShape,
    seed: u64,
) -> Result<Graph> {
    if degree_min < 1 || degree_max < degree_min {
        return Err(Error::Construction(format!(
            "infeasible degree range [{degree_min}, {degree_max}]"
        )));
    }
    if n <= degree_max {
        return Err(Error::Construction(format!(
            "degree_max {degree_max} must be below the node count {n}"
        )));
    }
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x0, x1, y0, y1) = shape.bounds();
    let mut coords = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while coords.len() < n {
        attempts += 1;
        if attempts > 1000 * n {
            return Err(Error::Construction("could not sample points inside the shape".into()));
        }
        let p = [rng.gen_range(x0..=x1), rng.gen_range(y0..=y1)];
        if shape.contains(p) {
            coords.push(p);
        }
    }
    let target: Vec<usize> = (0..n).map(|_| rng.gen_range(degree_min..=degree_max)).collect();

    // Candidate lists sorted by distance (ties broken by index).
    let ranked: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| {
                dist2(coords[i], coords[a]).total_cmp(&dist2(coords[i], coords[b])).then(a.cmp(&b))
            });
            others
        })
        .collect();

    let mut adj: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    // First pass grows toward each node's own target; second pass only
    // insists on the minimum degree.
    for (goal, cap) in [(&target, degree_max), (&vec![degree_min; n], degree_max)] {
        for i in 0..n {
            for &j in &ranked[i] {
                if adj[i].len() >= goal[i] {
                    break;
                }
                if adj[i].contains(&j) || adj[j].len() >= cap {
                    continue;
                }
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
    }
    if let Some(i) = (0..n).find(|&i| adj[i].len() < degree_min) {
        return Err(Error::Construction(format!(
            "node {i} could not reach degree {degree_min} under cap {degree_max}"
        )));
    }

    // Connectivity repair.
    loop {
        let comps = component_lists(n, |u| adj[u].iter().copied().collect());
        if comps.len() == 1 {
            break;
        }
        let main = comps.iter().enumerate().max_by_key(|(k, c)| (c.len(), std::cmp::Reverse(*k))).map(|(k, _)| k).unwrap();
        for (k, comp) in comps.iter().enumerate() {
            if k == main {
                continue;
            }
            let (a, b) = comp
                .iter()
                .flat_map(|&u| comps[main].iter().map(move |&v| (u, v)))
                .min_by(|&(a, b), &(c, d)| dist2(coords[a], coords[b]).total_cmp(&dist2(coords[c], coords[d])))
                .expect("nonempty components");
            adj[a].insert(b);
            adj[b].insert(a);
        }
    }

    let edges: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| {
            let mut nb: Vec<usize> = adj[i].iter().copied().filter(|&j| j > i).collect();
            nb.sort_unstable();
            nb.into_iter().map(move |j| (i, j, 1.0))
        })
        .collect();
    Graph::new(coords, edges)
}
