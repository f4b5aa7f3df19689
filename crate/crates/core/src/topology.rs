//! Symbolic cell structure of finitely ramified self-similar sets.
//!
//! A level-`m` vertex is named by one or more `(cell word, corner)` pairs.
//! Pairs naming the same point are merged through the identification rule of
//! the generating spec, lifted to every prefix, so no floating-point
//! coordinate is ever compared.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of vertices a level graph may have.
pub const DEFAULT_VERTEX_BUDGET: usize = 1_000_000;

/// Generating data of a post-critically finite self-similar structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractalSpec {
    pub name: String,
    /// Number of contraction maps `F_1..F_N`.
    pub n_maps: usize,
    /// Number of boundary vertices `q_1..q_k`.
    pub n_corners: usize,
    /// Energy renormalization factor as `(numerator, denominator)`.
    pub renormalization: (u32, u32),
    /// `fixed_map[a]` is the map whose fixed point is the corner `q_a`.
    pub fixed_map: Vec<usize>,
    /// Level-1 coincidences `F_i q_a = F_j q_b`, stored as `[(i, a), (j, b)]`.
    pub identifications: Vec<[(usize, usize); 2]>,
    /// Plot coordinates of `q_1..q_k`.
    pub boundary_coords: Vec<[f64; 2]>,
    /// Affine maps for plotting: `F_i(x) = contraction * x + map_offsets[i]`.
    pub contraction: f64,
    pub map_offsets: Vec<[f64; 2]>,
}

impl FractalSpec {
    /// The Sierpinski gasket with its standard resistance form, `r = 3/5`.
    pub fn sierpinski_gasket() -> Self {
        let q = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.75_f64.sqrt()]];
        let mut identifications = Vec::new();
        for i in 0..3 {
            for j in (i + 1)..3 {
                identifications.push([(i, j), (j, i)]);
            }
        }
        Self {
            name: "sg".into(),
            n_maps: 3,
            n_corners: 3,
            renormalization: (3, 5),
            fixed_map: vec![0, 1, 2],
            identifications,
            boundary_coords: q.to_vec(),
            contraction: 0.5,
            map_offsets: q.iter().map(|p| [0.5 * p[0], 0.5 * p[1]]).collect(),
        }
    }

    /// The unit interval as a two-map self-similar set, `r = 1/2`.
    pub fn unit_interval() -> Self {
        Self {
            name: "interval".into(),
            n_maps: 2,
            n_corners: 2,
            renormalization: (1, 2),
            fixed_map: vec![0, 1],
            identifications: vec![[(0, 1), (1, 0)]],
            boundary_coords: vec![[0.0, 0.0], [1.0, 0.0]],
            contraction: 0.5,
            map_offsets: vec![[0.0, 0.0], [0.5, 0.0]],
        }
    }

    /// Looks up a built-in spec by its id (`sg` or `interval`).
    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "sg" | "sierpinski" | "sierpinski_gasket" => Ok(Self::sierpinski_gasket()),
            "interval" | "unit_interval" => Ok(Self::unit_interval()),
            other => Err(Error::Unsupported(other.to_string())),
        }
    }

    pub fn is_sierpinski_gasket(&self) -> bool {
        *self == Self::sierpinski_gasket()
    }

    pub fn is_unit_interval(&self) -> bool {
        *self == Self::unit_interval()
    }

    pub fn r(&self) -> f64 {
        self.renormalization.0 as f64 / self.renormalization.1 as f64
    }

    /// Edge conductance `r^{-m}` of the level-`m` graph energy.
    pub fn conductance(&self, level: usize) -> f64 {
        let (num, den) = self.renormalization;
        (den as f64 / num as f64).powi(level as i32)
    }

    /// Corner pairs joined by an edge inside every cell.
    pub fn cell_edges(&self) -> Vec<(usize, usize)> {
        let k = self.n_corners;
        if k == 2 {
            return vec![(0, 1)];
        }
        // cyclic corner order: (q1 q2), (q2 q3), ..., then the chords
        let mut edges: Vec<(usize, usize)> = (0..k).map(|a| (a, (a + 1) % k)).collect();
        for a in 0..k {
            for b in (a + 2)..k {
                if !(a == 0 && b == k - 1) {
                    edges.push((a, b));
                }
            }
        }
        edges
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("{}: {msg}", self.name)));
        let (num, den) = self.renormalization;
        if num == 0 || den == 0 || num >= den {
            return bad("renormalization factor must satisfy 0 < r < 1");
        }
        if self.n_maps < 2 || self.n_corners < 2 {
            return bad("need at least two maps and two corners");
        }
        if self.fixed_map.len() != self.n_corners {
            return bad("fixed_map must list one map per corner");
        }
        let mut seen = vec![false; self.n_maps];
        for &i in &self.fixed_map {
            if i >= self.n_maps || seen[i] {
                return bad("fixed_map entries must be distinct map indices");
            }
            seen[i] = true;
        }
        for pair in &self.identifications {
            for &(i, a) in pair {
                if i >= self.n_maps || a >= self.n_corners {
                    return bad("identification index out of range");
                }
            }
            if pair[0].0 == pair[1].0 {
                return bad("an identification must join two different cells");
            }
            for &(i, a) in pair {
                if self.fixed_map[a] == i {
                    return bad("a fixed boundary point cannot be identified");
                }
            }
        }
        if self.boundary_coords.len() != self.n_corners || self.map_offsets.len() != self.n_maps {
            return bad("plot geometry has the wrong length");
        }
        // level-1 cells must form a connected graph through shared vertices
        let mut uf = UnionFind::new(self.n_maps);
        for pair in &self.identifications {
            uf.union(pair[0].0, pair[1].0);
        }
        let root = uf.find(0);
        if (1..self.n_maps).any(|i| uf.find(i) != root) {
            return bad("level-1 graph is not connected");
        }
        Ok(())
    }
}

/// A word `w = (w_1, ..., w_m)` naming the cell `F_w K`. Letters are stored
/// zero-based and printed one-based; the empty word prints as `-`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellAddress(pub Vec<u8>);

impl CellAddress {
    pub fn root() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, i: usize) -> Self {
        let mut w = self.0.clone();
        w.push(i as u8);
        Self(w)
    }

    /// Position of this word among all words of its length, lexicographically.
    pub fn index(&self, n_maps: usize) -> usize {
        self.0.iter().fold(0, |acc, &l| acc * n_maps + l as usize)
    }

    pub fn from_index(mut index: usize, level: usize, n_maps: usize) -> Self {
        let mut w = vec![0u8; level];
        for slot in w.iter_mut().rev() {
            *slot = (index % n_maps) as u8;
            index /= n_maps;
        }
        Self(w)
    }
}

impl fmt::Display for CellAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for &l in &self.0 {
            write!(f, "{}", l + 1)?;
        }
        Ok(())
    }
}

impl FromStr for CellAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "-" {
            return Ok(Self::root());
        }
        s.chars()
            .map(|c| match c.to_digit(10) {
                Some(d @ 1..=9) => Ok((d - 1) as u8),
                _ => Err(Error::Parse(format!("bad cell address `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

/// A point of `V_m` together with every `(cell, corner)` name it carries.
#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    /// All names, sorted; the first one is canonical.
    pub addresses: Vec<(CellAddress, usize)>,
    pub coords: [f64; 2],
}

impl Vertex {
    pub fn canonical(&self) -> &(CellAddress, usize) {
        &self.addresses[0]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub address: CellAddress,
    /// Vertex indices ordered by corner index.
    pub corners: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    /// Index of the unique level-`m` cell containing this edge.
    pub cell: usize,
}

/// The identified level-`m` graph `V_m`, immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelGraph {
    pub spec: FractalSpec,
    pub level: usize,
    pub vertices: Vec<Vertex>,
    /// Cells in lexicographic word order; cell `i` has address `from_index(i)`.
    pub cells: Vec<Cell>,
    /// Edges grouped by cell, in the cell's edge order.
    pub edges: Vec<Edge>,
    /// `boundary[a]` is the vertex index of `q_a`.
    pub boundary: Vec<usize>,
    pub conductance: f64,
}

impl LevelGraph {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges_per_cell(&self) -> usize {
        self.spec.cell_edges().len()
    }

    /// Edge index range of cell `c`.
    pub fn cell_edge_range(&self, c: usize) -> std::ops::Range<usize> {
        let e = self.edges_per_cell();
        c * e..(c + 1) * e
    }

    /// Cell addresses paired with their corner vertex indices.
    pub fn cells_at_level(&self) -> Vec<(CellAddress, Vec<usize>)> {
        self.cells
            .iter()
            .map(|c| (c.address.clone(), c.corners.clone()))
            .collect()
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary.contains(&v)
    }

    /// Index in `self` of the level-`n` cell `w · F_{fix(a)}^{n-|w|}`, which has
    /// the point `F_w q_a` as its corner `a`.
    fn descendant_cell(&self, word_index: usize, word_len: usize, corner: usize) -> usize {
        let n = self.spec.n_maps;
        let fix = self.spec.fixed_map[corner];
        (word_len..self.level).fold(word_index, |acc, _| acc * n + fix)
    }

    /// Vertex of `self` at the point `F_w q_a` for a word of length `<= level`.
    pub fn vertex_of(&self, word: &CellAddress, corner: usize) -> usize {
        let c = self.descendant_cell(word.index(self.spec.n_maps), word.len(), corner);
        self.cells[c].corners[corner]
    }

    /// Maps vertex indices of the coarser graph `coarse` into `self`.
    pub fn embedding_of(&self, coarse: &LevelGraph) -> Result<Vec<usize>> {
        if coarse.level > self.level || coarse.spec != self.spec {
            return Err(Error::LevelMismatch {
                expected: self.level,
                found: coarse.level,
            });
        }
        Ok(coarse
            .vertices
            .iter()
            .map(|v| {
                let (w, a) = v.canonical();
                self.vertex_of(w, *a)
            })
            .collect())
    }

    /// Number of vertices the standard instances have at level `m`.
    pub fn expected_vertex_count(spec: &FractalSpec, level: usize) -> Option<usize> {
        if spec.is_sierpinski_gasket() {
            Some(3 * (3usize.pow(level as u32) + 1) / 2)
        } else if spec.is_unit_interval() {
            Some((1usize << level) + 1)
        } else {
            None
        }
    }
}

/// Builds `V_m` for `spec` with the default vertex budget.
pub fn build_level(spec: &FractalSpec, level: usize) -> Result<LevelGraph> {
    build_level_with_budget(spec, level, DEFAULT_VERTEX_BUDGET)
}

pub fn build_level_with_budget(
    spec: &FractalSpec,
    level: usize,
    budget: usize,
) -> Result<LevelGraph> {
    spec.validate()?;
    let n = spec.n_maps;
    let k = spec.n_corners;
    let too_big = || Error::ResourceLimit {
        level,
        needed: usize::MAX,
        budget,
    };
    // a connected cell structure has more vertices than cells
    let n_cells = n.checked_pow(level as u32).ok_or_else(too_big)?;
    if n_cells >= budget {
        return Err(Error::ResourceLimit {
            level,
            needed: n_cells + 1,
            budget,
        });
    }
    let n_slots = n_cells.checked_mul(k).ok_or_else(too_big)?;

    // slot = cell * k + corner, which is also (word, corner) lexicographic order
    let mut uf = UnionFind::new(n_slots);
    let mut prefix_count = 1;
    for depth in 0..level {
        let pad = level - depth - 1;
        for prefix in 0..prefix_count {
            for pair in &spec.identifications {
                let slot = |(i, a): (usize, usize)| {
                    let fix = spec.fixed_map[a];
                    let cell = (0..pad).fold(prefix * n + i, |acc, _| acc * n + fix);
                    cell * k + a
                };
                uf.union(slot(pair[0]), slot(pair[1]));
            }
        }
        prefix_count *= n;
    }

    let mut class_of_root = vec![usize::MAX; n_slots];
    let mut vertex_of_slot = vec![0usize; n_slots];
    let mut n_vertices = 0;
    // slots are visited in increasing order, so each class is numbered by its
    // smallest member
    for slot in 0..n_slots {
        let root = uf.find(slot);
        if class_of_root[root] == usize::MAX {
            class_of_root[root] = n_vertices;
            n_vertices += 1;
        }
        vertex_of_slot[slot] = class_of_root[root];
    }
    if n_vertices > budget {
        return Err(Error::ResourceLimit {
            level,
            needed: n_vertices,
            budget,
        });
    }

    let mut addresses: Vec<Vec<(CellAddress, usize)>> = vec![Vec::new(); n_vertices];
    let mut cells = Vec::with_capacity(n_cells);
    for c in 0..n_cells {
        let address = CellAddress::from_index(c, level, n);
        let corners: Vec<usize> = (0..k).map(|a| vertex_of_slot[c * k + a]).collect();
        for (a, &v) in corners.iter().enumerate() {
            addresses[v].push((address.clone(), a));
        }
        cells.push(Cell { address, corners });
    }
    let vertices = addresses
        .into_iter()
        .map(|addrs| {
            let (w, a) = &addrs[0];
            let coords = plot_coords(spec, w, *a);
            Vertex {
                addresses: addrs,
                coords,
            }
        })
        .collect();

    let local_edges = spec.cell_edges();
    let mut edges = Vec::with_capacity(n_cells * local_edges.len());
    for (c, cell) in cells.iter().enumerate() {
        for &(a, b) in &local_edges {
            edges.push(Edge {
                u: cell.corners[a],
                v: cell.corners[b],
                cell: c,
            });
        }
    }

    let boundary = (0..k)
        .map(|a| {
            let fix = spec.fixed_map[a];
            let cell = (0..level).fold(0, |acc, _| acc * n + fix);
            vertex_of_slot[cell * k + a]
        })
        .collect();

    Ok(LevelGraph {
        spec: spec.clone(),
        level,
        vertices,
        cells,
        edges,
        boundary,
        conductance: spec.conductance(level),
    })
}

/// Plot position of `F_w q_a`. Used for export only.
pub fn plot_coords(spec: &FractalSpec, word: &CellAddress, corner: usize) -> [f64; 2] {
    let s = spec.contraction;
    word.0.iter().rev().fold(spec.boundary_coords[corner], |x, &i| {
        let t = spec.map_offsets[i as usize];
        [s * x[0] + t[0], s * x[1] + t[1]]
    })
}

/// How `refine` fills vertices that are new at the finer level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    /// Arithmetic mean of the already-known corners of the cells containing
    /// the new vertex, applied one level at a time.
    #[default]
    Copy,
}

/// Transports a vertex function from `coarse` to the finer graph `fine`.
pub fn refine(
    coarse: &LevelGraph,
    values: &[f64],
    fine: &LevelGraph,
    mode: RefineMode,
) -> Result<Vec<f64>> {
    if values.len() != coarse.n_vertices() {
        return Err(Error::LengthMismatch {
            expected: coarse.n_vertices(),
            found: values.len(),
        });
    }
    let embed = fine.embedding_of(coarse)?;
    let RefineMode::Copy = mode;
    let n = fine.spec.n_maps;
    let k = fine.spec.n_corners;

    let mut out = vec![0.0; fine.n_vertices()];
    let mut known = vec![false; fine.n_vertices()];
    for (i, &v) in embed.iter().enumerate() {
        out[v] = values[i];
        known[v] = true;
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); fine.n_vertices()];
    for depth in (coarse.level + 1)..=fine.level {
        let count = n.pow(depth as u32);
        let mut fresh = Vec::new();
        for w in 0..count {
            let corners: Vec<usize> = (0..k)
                .map(|a| fine.cells[fine.descendant_cell(w, depth, a)].corners[a])
                .collect();
            for &v in &corners {
                if known[v] {
                    continue;
                }
                if pools[v].is_empty() {
                    fresh.push(v);
                }
                for &u in &corners {
                    if known[u] && !pools[v].contains(&u) {
                        pools[v].push(u);
                    }
                }
            }
        }
        for v in fresh {
            let pool = std::mem::take(&mut pools[v]);
            out[v] = pool.iter().map(|&u| out[u]).sum::<f64>() / pool.len() as f64;
            known[v] = true;
        }
    }
    Ok(out)
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller root so representatives stay minimal
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
