//! Enriched Q1 displacement space and the interface multiplier space.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::mesh::{Classification, MeshLevel, MATRIX};

const NONE: usize = usize::MAX;

/// Vector Q1 space with one copy of every active node per subdomain.
///
/// Global numbering is subdomain-major (matrix first), then ascending node
/// id, then component: dof = `offset[s] + 2·k + c` for the `k`-th node of
/// subdomain `s`. Matrix nodes on `x = 0` are clamped and carry no dofs.
#[derive(Clone, Debug)]
pub struct EnrichedSpace {
    mesh: MeshLevel,
    nodes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    matrix_lookup: Vec<usize>,
}

pub fn build_enriched_space(cls: &Classification, mesh: &MeshLevel) -> EnrichedSpace {
    let nsub = cls.num_subdomains();
    let mut nodes = Vec::with_capacity(nsub);
    for s in 0..nsub {
        let mut set = BTreeSet::new();
        for &e in cls.active(s) {
            for nd in mesh.element_nodes(e) {
                if s == MATRIX && mesh.node_ij(nd).0 == 0 {
                    continue;
                }
                set.insert(nd);
            }
        }
        nodes.push(set.into_iter().collect::<Vec<_>>());
    }
    let mut offsets = vec![0];
    for list in &nodes {
        offsets.push(offsets.last().unwrap() + 2 * list.len());
    }
    let mut matrix_lookup = vec![NONE; mesh.num_nodes()];
    for (k, &nd) in nodes[MATRIX].iter().enumerate() {
        matrix_lookup[nd] = k;
    }
    EnrichedSpace {
        mesh: *mesh,
        nodes,
        offsets,
        matrix_lookup,
    }
}

impl EnrichedSpace {
    pub fn mesh(&self) -> &MeshLevel {
        &self.mesh
    }

    /// Total number of primal dofs.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_subdomains(&self) -> usize {
        self.nodes.len()
    }

    /// Sorted nodes carrying dofs in subdomain `s`.
    pub fn nodes(&self, s: usize) -> &[usize] {
        &self.nodes[s]
    }

    /// Dof range of subdomain `s`.
    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn dof(&self, s: usize, node: usize, comp: usize) -> Option<usize> {
        let k = if s == MATRIX {
            match self.matrix_lookup[node] {
                NONE => return None,
                k => k,
            }
        } else {
            self.nodes[s].binary_search(&node).ok()?
        };
        Some(self.offsets[s] + 2 * k + comp)
    }

    /// Dofs of element `e` in subdomain `s`, ordered local node major,
    /// component minor. `None` marks clamped or absent nodes.
    pub fn element_dofs(&self, e: usize, s: usize) -> [Option<usize>; 8] {
        let nodes = self.mesh.element_nodes(e);
        let mut out = [None; 8];
        for (a, &nd) in nodes.iter().enumerate() {
            for c in 0..2 {
                out[2 * a + c] = self.dof(s, nd, c);
            }
        }
        out
    }

    /// `(subdomain, node, component)` of a dof.
    pub fn dof_info(&self, dof: usize) -> (usize, usize, usize) {
        let s = self.offsets.partition_point(|&o| o <= dof) - 1;
        let local = dof - self.offsets[s];
        (s, self.nodes[s][local / 2], local % 2)
    }

    pub fn dof_coords(&self, dof: usize) -> Point {
        let (_, nd, _) = self.dof_info(dof);
        self.mesh.node_coords(nd)
    }
}

/// Q1 shape values at local coordinates in `[0,1]²`.
pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    [
        (1.0 - xi) * (1.0 - eta),
        xi * (1.0 - eta),
        xi * eta,
        (1.0 - xi) * eta,
    ]
}

/// Q1 shape gradients at local coordinates, for element width `h`.
pub fn shape_grad(xi: f64, eta: f64, h: f64) -> [[f64; 2]; 4] {
    let ih = 1.0 / h;
    [
        [-(1.0 - eta) * ih, -(1.0 - xi) * ih],
        [(1.0 - eta) * ih, -xi * ih],
        [eta * ih, xi * ih],
        [-eta * ih, (1.0 - xi) * ih],
    ]
}

/// Local coordinates of `p` in element `e`.
pub fn local_coords(mesh: &MeshLevel, e: usize, p: &Point) -> (f64, f64) {
    let o = mesh.element_origin(e);
    ((p.x - o.x) / mesh.h(), (p.y - o.y) / mesh.h())
}

/// Multipliers on each interface, attached to selected vertices of the cut
/// elements.
///
/// The multiplier basis function of vital vertex `k` is the trace on Γ of
/// `Σ φ_v` over the group of cut-element nodes `v` assigned to `k`; the
/// groups partition the nodes, so the traces sum to one along Γ. Two rows
/// (components) per vital vertex.
#[derive(Clone, Debug)]
pub struct MultiplierSpace {
    vital: Vec<Vec<usize>>,
    /// Per interface: (node, group index) sorted by node.
    groups: Vec<Vec<(usize, usize)>>,
    offsets: Vec<usize>,
}

impl MultiplierSpace {
    /// Number of multiplier dofs.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn num_interfaces(&self) -> usize {
        self.vital.len()
    }

    pub fn vital_vertices(&self, i: usize) -> &[usize] {
        &self.vital[i]
    }

    /// Group (vital-vertex index) of a cut-element node of interface `i`.
    pub fn group(&self, i: usize, node: usize) -> Option<usize> {
        let g = &self.groups[i];
        g.binary_search_by_key(&node, |e| e.0).ok().map(|k| g[k].1)
    }

    pub fn row(&self, i: usize, k: usize, comp: usize) -> usize {
        self.offsets[i] + 2 * k + comp
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Closed chain of cut elements of interface `i`, together with the edge
/// crossing point shared by chain elements `k` and `k+1`, given as
/// (edge endpoint nodes, intersection point).
fn interface_chain(
    cls: &Classification,
    mesh: &MeshLevel,
    i: usize,
) -> Result<Vec<([usize; 2], Point)>> {
    let cut = cls.interface(i);
    let degenerate = |reason: String| Error::DegenerateInterface {
        inclusion: i,
        reason,
    };
    if cut.is_empty() {
        return Err(degenerate("no cut elements".into()));
    }
    let start = cut[0];
    let mut chain = Vec::with_capacity(cut.len());
    let mut e = start;
    let mut entry: Option<usize> = None;
    loop {
        let info = cls.cut(e).expect("interface element is cut");
        let k = match entry {
            None => 0,
            Some(side) => info
                .edges
                .iter()
                .position(|&ed| ed != side)
                .expect("two crossed edges"),
        };
        let side = info.edges[k];
        let Some(nb) = mesh.neighbor(e, side) else {
            return Err(degenerate(format!("interface leaves the mesh at element {e}")));
        };
        if cls.cut(nb).map(|c| c.inclusion) != Some(i) {
            return Err(degenerate(format!("chain broken between elements {e} and {nb}")));
        }
        let nodes = mesh.element_nodes(e);
        chain.push(([nodes[side], nodes[(side + 1) % 4]], info.points[k]));
        entry = Some((side + 2) % 4);
        e = nb;
        if e == start {
            break;
        }
        if chain.len() > cut.len() {
            return Err(degenerate("chain does not close".into()));
        }
    }
    if chain.len() != cut.len() {
        return Err(degenerate(format!(
            "chain visits {} of {} cut elements",
            chain.len(),
            cut.len()
        )));
    }
    Ok(chain)
}

/// Vital vertices of interface `i`: walk the closed chain of cut elements
/// and take, at every second crossed edge, the edge endpoint nearest to the
/// crossing point.
pub fn select_vital_vertices(
    cls: &Classification,
    mesh: &MeshLevel,
    i: usize,
) -> Result<Vec<usize>> {
    let chain = interface_chain(cls, mesh, i)?;
    let mut selected: Vec<usize> = Vec::new();
    let pick = |(nodes, x): &([usize; 2], Point)| {
        let d0 = (mesh.node_coords(nodes[0]) - x).norm();
        let d1 = (mesh.node_coords(nodes[1]) - x).norm();
        if d0 <= d1 {
            nodes[0]
        } else {
            nodes[1]
        }
    };
    for (k, link) in chain.iter().enumerate() {
        // an odd-length chain would otherwise select both ends of one link
        if k % 2 == 0 && !(k + 1 == chain.len() && k > 0) {
            let v = pick(link);
            if !selected.contains(&v) {
                selected.push(v);
            }
        }
    }
    // every cut element must touch a vital vertex
    for &e in cls.interface(i) {
        let nodes = mesh.element_nodes(e);
        if !nodes.iter().any(|n| selected.contains(n)) {
            let info = cls.cut(e).unwrap();
            let x = info.points[0];
            let nd = *nodes
                .iter()
                .min_by(|a, b| {
                    let da = (mesh.node_coords(**a) - x).norm();
                    let db = (mesh.node_coords(**b) - x).norm();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            selected.push(nd);
        }
    }
    Ok(selected)
}

pub fn build_multiplier_space(cls: &Classification, mesh: &MeshLevel) -> Result<MultiplierSpace> {
    let ni = cls.num_inclusions();
    let mut vital = Vec::with_capacity(ni);
    let mut groups = Vec::with_capacity(ni);
    let mut offsets = vec![0];
    for i in 0..ni {
        let v = select_vital_vertices(cls, mesh, i)?;
        let mut nodes = BTreeSet::new();
        for &e in cls.interface(i) {
            nodes.extend(mesh.element_nodes(e));
        }
        let vc: Vec<Point> = v.iter().map(|&n| mesh.node_coords(n)).collect();
        let g: Vec<(usize, usize)> = nodes
            .into_iter()
            .map(|nd| {
                let p = mesh.node_coords(nd);
                // nearest vital vertex, ties to the lower index
                let k = (0..vc.len())
                    .min_by(|&a, &b| {
                        let da = (vc[a] - p).norm_squared();
                        let db = (vc[b] - p).norm_squared();
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    })
                    .unwrap();
                (nd, k)
            })
            .collect();
        offsets.push(offsets.last().unwrap() + 2 * v.len());
        vital.push(v);
        groups.push(g);
    }
    Ok(MultiplierSpace {
        vital,
        groups,
        offsets,
    })
}
