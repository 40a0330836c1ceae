//! Structured meshes of the canonical geometries with a tagged boundary
//! partition into a pinched part (`Gamma0`) and a dynamic part (`Gamma1`).
//!
//! Elements are intervals in 1D and positively oriented triangles in 2D.
//! Boundary facets are single nodes in 1D and edges in 2D. Every node lying
//! on a `Gamma0` facet, including the corner nodes shared with `Gamma1`, is a
//! Dirichlet node.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Gamma0,
    Gamma1,
}

impl BoundaryTag {
    pub fn code(self) -> u8 {
        match self {
            BoundaryTag::Gamma0 => 0,
            BoundaryTag::Gamma1 => 1,
        }
    }
}

/// Side of the rectangle carrying the dynamic boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            "left" => Ok(Side::Left),
            "right" => Ok(Side::Right),
            other => Err(Error::InvalidParameter(format!(
                "unknown side selector '{other}' (expected top, bottom, left or right)"
            ))),
        }
    }
}

/// Ordered node sequence of one connected component of the dynamic boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryChain {
    pub nodes: Vec<usize>,
    pub closed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    elements: Vec<usize>,
    facets: Vec<usize>,
    facet_tags: Vec<BoundaryTag>,
    chains: Vec<BoundaryChain>,
}

impl Mesh {
    /// Builds a mesh from flat connectivity arrays and validates it.
    ///
    /// `coords` holds `dim` values per node, `elements` holds `dim + 1` node
    /// indices per element and `facets` holds `dim` node indices per boundary
    /// facet.
    pub fn new(
        dim: usize,
        coords: Vec<f64>,
        elements: Vec<usize>,
        facets: Vec<usize>,
        facet_tags: Vec<BoundaryTag>,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidMesh(format!("unsupported dimension {dim}")));
        }
        if coords.len() % dim != 0 || elements.len() % (dim + 1) != 0 || facets.len() % dim != 0 {
            return Err(Error::InvalidMesh("ragged connectivity arrays".into()));
        }
        if facets.len() / dim != facet_tags.len() {
            return Err(Error::InvalidMesh("one tag per boundary facet required".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite node coordinate".into()));
        }
        let mut mesh = Mesh {
            dim,
            coords,
            elements,
            facets,
            facet_tags,
            chains: Vec::new(),
        };
        mesh.validate()?;
        mesh.chains = mesh.build_chains()?;
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn num_facets(&self) -> usize {
        self.facet_tags.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let k = self.dim + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    pub fn facet_tag(&self, f: usize) -> BoundaryTag {
        self.facet_tags[f]
    }

    pub fn chains(&self) -> &[BoundaryChain] {
        &self.chains
    }

    /// Facets carrying the given tag.
    pub fn facets_tagged(&self, tag: BoundaryTag) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.num_facets())
            .filter(move |&f| self.facet_tags[f] == tag)
            .map(move |f| self.facet(f))
    }

    /// Per-node flag: true for nodes touching any `Gamma0` facet.
    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_nodes()];
        for facet in self.facets_tagged(BoundaryTag::Gamma0) {
            for &n in facet {
                mask[n] = true;
            }
        }
        mask
    }

    pub fn dirichlet_nodes(&self) -> Vec<usize> {
        self.dirichlet_mask()
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| d.then_some(i))
            .collect()
    }

    /// Per-node flag: true for nodes touching any `Gamma1` facet.
    pub fn gamma1_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_nodes()];
        for facet in self.facets_tagged(BoundaryTag::Gamma1) {
            for &n in facet {
                mask[n] = true;
            }
        }
        mask
    }

    /// Signed measure of an element: length in 1D, area in 2D.
    pub fn element_measure(&self, e: usize) -> f64 {
        let el = self.element(e);
        match self.dim {
            1 => self.node(el[1])[0] - self.node(el[0])[0],
            _ => {
                let (a, b, c) = (self.node(el[0]), self.node(el[1]), self.node(el[2]));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
            }
        }
    }

    /// Measure of a boundary facet: 1 for a point (counting measure), length for an edge.
    pub fn facet_measure(&self, f: usize) -> f64 {
        let fc = self.facet(f);
        match self.dim {
            1 => 1.0,
            _ => {
                let (a, b) = (self.node(fc[0]), self.node(fc[1]));
                (b[0] - a[0]).hypot(b[1] - a[1])
            }
        }
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_measure(e)).sum()
    }

    pub fn boundary_measure(&self, tag: BoundaryTag) -> f64 {
        (0..self.num_facets())
            .filter(|&f| self.facet_tags[f] == tag)
            .map(|f| self.facet_measure(f))
            .sum()
    }

    /// Copy of the mesh with every `Gamma1` facet retagged as `Gamma0`.
    pub fn without_gamma1(&self) -> Mesh {
        let mut mesh = self.clone();
        mesh.facet_tags.iter_mut().for_each(|t| *t = BoundaryTag::Gamma0);
        mesh.chains.clear();
        mesh
    }

    fn facet_key(&self, nodes: &[usize]) -> (usize, usize) {
        match nodes {
            [a] => (*a, *a),
            [a, b] => ((*a).min(*b), (*a).max(*b)),
            _ => unreachable!("facets have one or two nodes"),
        }
    }

    /// Facets of element `e`, each as a node list.
    fn element_facets(&self, e: usize) -> Vec<Vec<usize>> {
        let el = self.element(e);
        match self.dim {
            1 => vec![vec![el[0]], vec![el[1]]],
            _ => vec![vec![el[0], el[1]], vec![el[1], el[2]], vec![el[2], el[0]]],
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.elements.iter().chain(self.facets.iter()).any(|&i| i >= n) {
            return Err(Error::InvalidMesh("node index out of range".into()));
        }
        for e in 0..self.num_elements() {
            let m = self.element_measure(e);
            if !(m > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "element {e} has nonpositive measure {m}"
                )));
            }
        }
        let mut incidence: HashMap<(usize, usize), usize> = HashMap::new();
        for e in 0..self.num_elements() {
            for f in self.element_facets(e) {
                *incidence.entry(self.facet_key(&f)).or_default() += 1;
            }
        }
        if let Some((k, c)) = incidence.iter().find(|(_, &c)| c > 2) {
            return Err(Error::InvalidMesh(format!("facet {k:?} shared by {c} elements")));
        }
        let mut tagged: HashMap<(usize, usize), usize> = HashMap::new();
        for f in 0..self.num_facets() {
            let key = self.facet_key(self.facet(f));
            if tagged.insert(key, f).is_some() {
                return Err(Error::InvalidMesh(format!("facet {key:?} tagged twice")));
            }
            match incidence.get(&key) {
                Some(1) => {}
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "tagged facet {key:?} is not on the boundary"
                    )))
                }
            }
        }
        if let Some((k, _)) = incidence.iter().find(|(k, &c)| c == 1 && !tagged.contains_key(k)) {
            return Err(Error::InvalidMesh(format!("boundary facet {k:?} carries no tag")));
        }
        Ok(())
    }

    fn build_chains(&self) -> Result<Vec<BoundaryChain>> {
        let gamma1: Vec<&[usize]> = self.facets_tagged(BoundaryTag::Gamma1).collect();
        if self.dim == 1 {
            return Ok(gamma1
                .iter()
                .map(|f| BoundaryChain {
                    nodes: vec![f[0]],
                    closed: false,
                })
                .collect());
        }
        let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
        for f in &gamma1 {
            adjacency.entry(f[0]).or_default().push(f[1]);
            adjacency.entry(f[1]).or_default().push(f[0]);
        }
        if let Some((node, nb)) = adjacency.iter().find(|(_, nb)| nb.len() > 2) {
            return Err(Error::InvalidMesh(format!(
                "dynamic boundary node {node} has {} incident edges",
                nb.len()
            )));
        }
        let mut starts: Vec<usize> = adjacency.keys().copied().collect();
        // open chains start at an endpoint; closed ones at their lowest node
        starts.sort_by_key(|n| (adjacency[n].len(), *n));
        let mut visited = vec![false; self.num_nodes()];
        let mut chains = Vec::new();
        for start in starts {
            if visited[start] {
                continue;
            }
            let mut nodes = vec![start];
            visited[start] = true;
            let mut prev = usize::MAX;
            let mut cur = start;
            let mut closed = false;
            loop {
                let next = adjacency[&cur].iter().copied().filter(|&x| x != prev).min_by_key(|&x| {
                    // prefer an unvisited neighbour
                    (visited[x], x)
                });
                match next {
                    Some(x) if x == start && nodes.len() > 2 => {
                        closed = true;
                        break;
                    }
                    Some(x) if !visited[x] => {
                        visited[x] = true;
                        nodes.push(x);
                        prev = cur;
                        cur = x;
                    }
                    _ => break,
                }
            }
            chains.push(BoundaryChain { nodes, closed });
        }
        Ok(chains)
    }

    /// Serializes to the `dynbc-mesh v1` CSV exchange format.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# dynbc-mesh v1 dim={}\n", self.dim);
        for i in 0..self.num_nodes() {
            let _ = write!(out, "node,{i}");
            for c in self.node(i) {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        for e in 0..self.num_elements() {
            let _ = write!(out, "elem,{e}");
            for n in self.element(e) {
                let _ = write!(out, ",{n}");
            }
            out.push('\n');
        }
        for f in 0..self.num_facets() {
            let _ = write!(out, "bface,{f}");
            for n in self.facet(f) {
                let _ = write!(out, ",{n}");
            }
            let _ = writeln!(out, ",{}", self.facet_tags[f].code());
        }
        out
    }

    /// Parses the `dynbc-mesh v1` CSV exchange format. Record ids must be
    /// consecutive from zero within each record kind.
    pub fn from_csv(text: &str) -> Result<Mesh> {
        let mut lines = text.lines().enumerate();
        let dim = loop {
            let Some((i, line)) = lines.next() else {
                return Err(Error::MeshFormat {
                    line: 0,
                    msg: "missing header".into(),
                });
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let dim = line
                .strip_prefix("# dynbc-mesh v1 dim=")
                .and_then(|d| d.trim().parse::<usize>().ok())
                .ok_or_else(|| Error::MeshFormat {
                    line: i + 1,
                    msg: format!("bad header '{line}'"),
                })?;
            break dim;
        };
        if dim != 1 && dim != 2 {
            return Err(Error::MeshFormat {
                line: 1,
                msg: format!("unsupported dimension {dim}"),
            });
        }
        let (mut coords, mut elements, mut facets, mut tags) = (vec![], vec![], vec![], vec![]);
        for (i, line) in lines {
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::MeshFormat { line: lineno, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("'{s}': {e}")));
            let (kind, expected_id, width) = match fields[0] {
                "node" => ("node", coords.len() / dim, dim),
                "elem" => ("elem", elements.len() / (dim + 1), dim + 1),
                "bface" => ("bface", tags.len(), dim + 1),
                other => return Err(err(format!("unknown record '{other}'"))),
            };
            if fields.len() != 2 + width {
                return Err(err(format!("{kind} record needs {} fields", 2 + width)));
            }
            if int(fields[1])? != expected_id {
                return Err(err(format!("{kind} ids must be consecutive from 0")));
            }
            match kind {
                "node" => {
                    for s in &fields[2..] {
                        coords.push(s.parse::<f64>().map_err(|e| err(format!("'{s}': {e}")))?);
                    }
                }
                "elem" => {
                    for s in &fields[2..] {
                        elements.push(int(s)?);
                    }
                }
                _ => {
                    for s in &fields[2..2 + dim] {
                        facets.push(int(s)?);
                    }
                    tags.push(match fields[2 + dim] {
                        "0" => BoundaryTag::Gamma0,
                        "1" => BoundaryTag::Gamma1,
                        t => return Err(err(format!("boundary tag must be 0 or 1, got '{t}'"))),
                    });
                }
            }
        }
        Mesh::new(dim, coords, elements, facets, tags)
    }
}

/// Uniform interval `[0, length]` with the pinched end at 0 and the tip mass at `length`.
pub fn generate_interval(length: f64, n: usize) -> Result<Mesh> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidParameter(format!("length must be positive, got {length}")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 elements, got {n}")));
    }
    let coords = (0..=n).map(|i| length * i as f64 / n as f64).collect();
    let elements = (0..n).flat_map(|i| [i, i + 1]).collect();
    Mesh::new(
        1,
        coords,
        elements,
        vec![0, n],
        vec![BoundaryTag::Gamma0, BoundaryTag::Gamma1],
    )
}

/// Structured polar triangulation of the annulus `r0 < |x| < r1`: the inner
/// circle is pinched and the outer circle carries the dynamic condition.
pub fn generate_annulus(r0: f64, r1: f64, nr: usize, nt: usize) -> Result<Mesh> {
    if !(r0 > 0.0 && r0 < r1 && r1.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "radii must satisfy 0 < r0 < r1, got r0={r0}, r1={r1}"
        )));
    }
    if nr < 2 {
        return Err(Error::InvalidParameter(format!("need nr >= 2, got {nr}")));
    }
    if nt < 8 {
        return Err(Error::InvalidParameter(format!("need nt >= 8, got {nt}")));
    }
    let id = |i: usize, j: usize| i * nt + j % nt;
    let mut coords = Vec::with_capacity(2 * (nr + 1) * nt);
    for i in 0..=nr {
        let r = r0 + (r1 - r0) * i as f64 / nr as f64;
        for j in 0..nt {
            let theta = 2.0 * PI * j as f64 / nt as f64;
            coords.push(r * theta.cos());
            coords.push(r * theta.sin());
        }
    }
    let mut elements = Vec::with_capacity(6 * nr * nt);
    for i in 0..nr {
        for j in 0..nt {
            let (a, b, c, d) = (id(i, j), id(i, j + 1), id(i + 1, j + 1), id(i + 1, j));
            elements.extend_from_slice(&[a, d, c, a, c, b]);
        }
    }
    let mut facets = Vec::with_capacity(4 * nt);
    let mut tags = Vec::with_capacity(2 * nt);
    for j in 0..nt {
        facets.extend_from_slice(&[id(0, j + 1), id(0, j)]);
        tags.push(BoundaryTag::Gamma0);
    }
    for j in 0..nt {
        facets.extend_from_slice(&[id(nr, j), id(nr, j + 1)]);
        tags.push(BoundaryTag::Gamma1);
    }
    Mesh::new(2, coords, elements, facets, tags)
}

/// Structured triangulation of `[0, lx] x [0, ly]` with one side dynamic and
/// the other three pinched.
pub fn generate_rectangle(
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    gamma1_side: Side,
) -> Result<Mesh> {
    if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "side lengths must be positive, got {lx} x {ly}"
        )));
    }
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidParameter(format!(
            "need nx, ny >= 2, got {nx} x {ny}"
        )));
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut coords = Vec::with_capacity(2 * (nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            coords.push(lx * i as f64 / nx as f64);
            coords.push(ly * j as f64 / ny as f64);
        }
    }
    let mut elements = Vec::with_capacity(6 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            elements.extend_from_slice(&[a, b, c, a, c, d]);
        }
    }
    let tag = |side: Side| {
        if side == gamma1_side {
            BoundaryTag::Gamma1
        } else {
            BoundaryTag::Gamma0
        }
    };
    let mut facets = Vec::new();
    let mut tags = Vec::new();
    for i in 0..nx {
        facets.extend_from_slice(&[id(i, 0), id(i + 1, 0)]);
        tags.push(tag(Side::Bottom));
    }
    for j in 0..ny {
        facets.extend_from_slice(&[id(nx, j), id(nx, j + 1)]);
        tags.push(tag(Side::Right));
    }
    for i in 0..nx {
        facets.extend_from_slice(&[id(i + 1, ny), id(i, ny)]);
        tags.push(tag(Side::Top));
    }
    for j in 0..ny {
        facets.extend_from_slice(&[id(0, j + 1), id(0, j)]);
        tags.push(tag(Side::Left));
    }
    Mesh::new(2, coords, elements, facets, tags)
}
