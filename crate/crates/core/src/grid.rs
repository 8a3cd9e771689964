//! Truncated computational box, obstacle mask and boundary-face labels.
//!
//! Entities of the box (nodes, edges, faces, cells) are numbered over the
//! *full* box regardless of the obstacle, so every field living on a domain
//! shares the layout of the box it was cut from:
//!
//! | kind | blocks | extents of block `d` | half-step offset |
//! |------|--------|----------------------|------------------|
//! | node | 1      | `(nx+1, ny+1, nz+1)` | `(0,0,0)`        |
//! | edge | x,y,z  | `n+1` except `n` along `d` | `+1` along `d` |
//! | face | x,y,z  | `n` except `n+1` along `d` | `+1` off `d`   |
//! | cell | 1      | `(nx, ny, nz)`       | `(1,1,1)`        |
//!
//! Inside a block the index is `i + ex * (j + ey * k)` (x fastest), and the
//! blocks of edges and faces are stored x, then y, then z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of a degree of freedom in the staggering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    /// 0-forms: potentials.
    Node,
    /// Primal 1-forms: electric fields and their sources.
    Edge,
    /// Primal 2-forms: magnetic fields, rotations.
    Face,
    /// 3-forms: primal divergences.
    Cell,
}

impl FieldKind {
    pub fn is_vector(self) -> bool {
        matches!(self, FieldKind::Edge | FieldKind::Face)
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Node => "node",
            FieldKind::Edge => "edge",
            FieldKind::Face => "face",
            FieldKind::Cell => "cell",
        }
    }
}

/// Part of the boundary a face belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryLabel {
    /// Tangential electric trace vanishes.
    Gamma1,
    /// Tangential magnetic trace vanishes.
    Gamma2,
}

impl BoundaryLabel {
    pub fn swapped(self) -> Self {
        match self {
            BoundaryLabel::Gamma1 => BoundaryLabel::Gamma2,
            BoundaryLabel::Gamma2 => BoundaryLabel::Gamma1,
        }
    }
}

/// Which boundary part has its degrees of freedom removed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mask {
    /// Whole-space operators: only the obstacle is removed.
    Unmasked,
    Gamma1,
    Gamma2,
}

impl Mask {
    pub fn label(self) -> Option<BoundaryLabel> {
        match self {
            Mask::Unmasked => None,
            Mask::Gamma1 => Some(BoundaryLabel::Gamma1),
            Mask::Gamma2 => Some(BoundaryLabel::Gamma2),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Mask::Unmasked => Mask::Unmasked,
            Mask::Gamma1 => Mask::Gamma2,
            Mask::Gamma2 => Mask::Gamma1,
        }
    }
}

/// A boundary face handed to a labeling rule.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryFace {
    pub index: usize,
    pub normal_axis: usize,
    /// +1 if the outward normal points along `+e_axis`.
    pub outward_sign: i8,
    pub center: [f64; 3],
    /// True for faces on the outer box, false for obstacle faces.
    pub on_box: bool,
}

type Labeler = Box<dyn Fn(&BoundaryFace) -> BoundaryLabel>;

/// Builder for [`GridDomain`].
pub struct GridBuilder {
    dims: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    obstacle: Vec<bool>,
    labeler: Labeler,
    inner_radius: Option<f64>,
    outer_radius: Option<f64>,
}

impl GridBuilder {
    pub fn origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    /// Removes the cells `lo..hi` (cell indices, half-open) from the domain.
    pub fn obstacle_box(mut self, lo: [usize; 3], hi: [usize; 3]) -> Self {
        let [nx, ny, _] = self.dims;
        for k in lo[2]..hi[2].min(self.dims[2]) {
            for j in lo[1]..hi[1].min(self.dims[1]) {
                for i in lo[0]..hi[0].min(self.dims[0]) {
                    self.obstacle[i + nx * (j + ny * k)] = true;
                }
            }
        }
        self
    }

    /// Removes every cell whose center satisfies `pred`.
    pub fn obstacle_where(mut self, pred: impl Fn([f64; 3]) -> bool) -> Self {
        let [nx, ny, nz] = self.dims;
        let lo = lower_corner(self.dims, self.spacing, self.origin);
        let h = self.spacing;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let c = [
                        lo[0] + (i as f64 + 0.5) * h,
                        lo[1] + (j as f64 + 0.5) * h,
                        lo[2] + (k as f64 + 0.5) * h,
                    ];
                    if pred(c) {
                        self.obstacle[i + nx * (j + ny * k)] = true;
                    }
                }
            }
        }
        self
    }

    pub fn label_all(mut self, label: BoundaryLabel) -> Self {
        self.labeler = Box::new(move |_| label);
        self
    }

    pub fn label_with(mut self, rule: impl Fn(&BoundaryFace) -> BoundaryLabel + 'static) -> Self {
        self.labeler = Box::new(rule);
        self
    }

    pub fn inner_radius(mut self, r: f64) -> Self {
        self.inner_radius = Some(r);
        self
    }

    pub fn outer_radius(mut self, r: f64) -> Self {
        self.outer_radius = Some(r);
        self
    }

    pub fn build(self) -> Result<GridDomain> {
        let GridBuilder { dims, spacing, origin, obstacle, labeler, inner_radius, outer_radius } = self;
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing}")));
        }
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::Geometry("every cell count must be at least 1".into()));
        }
        let mut dom = GridDomain::raw(dims, spacing, origin, obstacle.clone(), obstacle);
        // circumradius of the box
        let outer = outer_radius
            .unwrap_or_else(|| dims.iter().map(|&n| (n as f64 * spacing / 2.0).powi(2)).sum::<f64>().sqrt());
        let inner = match inner_radius {
            Some(r) => r,
            None if dom.has_obstacle() => dom.default_collar_radius(),
            None => spacing.min(outer / 2.0),
        };
        dom.inner_radius = inner;
        dom.outer_radius = outer;
        dom.assign_labels(|f| Some(labeler(f)));
        dom.validate()?;
        Ok(dom)
    }
}

fn lower_corner(dims: [usize; 3], h: f64, origin: [f64; 3]) -> [f64; 3] {
    [
        origin[0] - dims[0] as f64 * h / 2.0,
        origin[1] - dims[1] as f64 * h / 2.0,
        origin[2] - dims[2] as f64 * h / 2.0,
    ]
}

#[derive(Clone, Debug, Default)]
struct MaskSets {
    nodes: Vec<bool>,
    edges: Vec<bool>,
    faces: Vec<bool>,
}

/// Truncated computational box with obstacle and labeled boundary faces.
///
/// Immutable after construction. `excluded` cells are removed from the
/// domain; `obstacle` is the subset that models the complement of the
/// exterior domain (the rest of `excluded`, if any, comes from restricting
/// to a collar).
#[derive(Clone, Debug)]
pub struct GridDomain {
    dims: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    obstacle: Vec<bool>,
    excluded: Vec<bool>,
    labels: Vec<Option<BoundaryLabel>>,
    inner_radius: f64,
    outer_radius: f64,
    node_count: Vec<u8>,
    edge_count: Vec<u8>,
    face_count: Vec<u8>,
    masks: [MaskSets; 2],
}

impl GridDomain {
    pub fn builder(dims: [usize; 3], spacing: f64) -> GridBuilder {
        GridBuilder {
            dims,
            spacing,
            origin: [0.0; 3],
            obstacle: vec![false; dims.iter().product()],
            labeler: Box::new(|_| BoundaryLabel::Gamma1),
            inner_radius: None,
            outer_radius: None,
        }
    }

    /// Obstacle-free box, the truncation used for whole-space computations.
    pub fn whole_space(dims: [usize; 3], spacing: f64, origin: [f64; 3]) -> Result<Self> {
        Self::builder(dims, spacing).origin(origin).build()
    }

    fn raw(dims: [usize; 3], spacing: f64, origin: [f64; 3], obstacle: Vec<bool>, excluded: Vec<bool>) -> Self {
        let mut dom = GridDomain {
            dims,
            spacing,
            origin,
            obstacle,
            excluded,
            labels: Vec::new(),
            inner_radius: spacing,
            outer_radius: f64::INFINITY,
            node_count: Vec::new(),
            edge_count: Vec::new(),
            face_count: Vec::new(),
            masks: [MaskSets::default(), MaskSets::default()],
        };
        dom.count_adjacency();
        dom
    }

    fn count_adjacency(&mut self) {
        let mut buf = Vec::with_capacity(8);
        self.node_count = (0..self.len(FieldKind::Node))
            .map(|n| {
                self.adjacent_cells_into(FieldKind::Node, n, &mut buf);
                buf.iter().filter(|&&c| !self.excluded[c]).count() as u8
            })
            .collect();
        self.edge_count = (0..self.len(FieldKind::Edge))
            .map(|n| {
                self.adjacent_cells_into(FieldKind::Edge, n, &mut buf);
                buf.iter().filter(|&&c| !self.excluded[c]).count() as u8
            })
            .collect();
        self.face_count = (0..self.len(FieldKind::Face))
            .map(|n| {
                self.adjacent_cells_into(FieldKind::Face, n, &mut buf);
                buf.iter().filter(|&&c| !self.excluded[c]).count() as u8
            })
            .collect();
    }

    fn assign_labels(&mut self, rule: impl Fn(&BoundaryFace) -> Option<BoundaryLabel>) {
        let mut labels = vec![None; self.len(FieldKind::Face)];
        let mut buf = Vec::with_capacity(2);
        for f in 0..labels.len() {
            if self.face_count[f] != 1 {
                continue;
            }
            let (axis, p) = self.coords(FieldKind::Face, f);
            self.adjacent_cells_into(FieldKind::Face, f, &mut buf);
            let inside = buf.iter().copied().find(|&c| !self.excluded[c]).unwrap();
            let cp = self.coords(FieldKind::Cell, inside).1;
            // the included cell sits at p - e_axis when the outward normal is +e_axis
            let outward_sign = if cp[axis] < p[axis] { 1 } else { -1 };
            let on_box = p[axis] == 0 || p[axis] == self.dims[axis];
            let face = BoundaryFace {
                index: f,
                normal_axis: axis,
                outward_sign,
                center: self.position(FieldKind::Face, f),
                on_box,
            };
            labels[f] = rule(&face);
        }
        self.labels = labels;
        self.build_masks();
    }

    fn build_masks(&mut self) {
        let mut sets = [MaskSets::default(), MaskSets::default()];
        for (slot, label) in [BoundaryLabel::Gamma1, BoundaryLabel::Gamma2].into_iter().enumerate() {
            let mut nodes = vec![false; self.len(FieldKind::Node)];
            let mut edges = vec![false; self.len(FieldKind::Edge)];
            let mut faces = vec![false; self.len(FieldKind::Face)];
            for f in 0..faces.len() {
                if self.labels[f] != Some(label) {
                    continue;
                }
                faces[f] = true;
                for e in self.face_edges(f) {
                    edges[e] = true;
                }
                for n in self.face_nodes(f) {
                    nodes[n] = true;
                }
            }
            sets[slot] = MaskSets { nodes, edges, faces };
        }
        self.masks = sets;
    }

    fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0) {
            return Err(Error::Geometry("inner radius must be positive".into()));
        }
        if !(self.inner_radius < self.outer_radius) {
            return Err(Error::Geometry(format!(
                "inner radius {} must be smaller than outer radius {}",
                self.inner_radius, self.outer_radius
            )));
        }
        let h = self.spacing;
        for c in (0..self.len(FieldKind::Cell)).filter(|&c| self.obstacle[c]) {
            let ctr = self.position(FieldKind::Cell, c);
            let far = norm3([
                ctr[0].abs() + h / 2.0,
                ctr[1].abs() + h / 2.0,
                ctr[2].abs() + h / 2.0,
            ]);
            if !(far < self.inner_radius) {
                return Err(Error::Geometry(format!(
                    "obstacle cell {c} reaches radius {far:.4} outside the inner radius {:.4}",
                    self.inner_radius
                )));
            }
        }
        let included = self.included_cells();
        if included.is_empty() {
            return Err(Error::Geometry("domain has no included cells".into()));
        }
        if !self.is_connected() {
            return Err(Error::Geometry("included cells are not connected".into()));
        }
        for f in 0..self.len(FieldKind::Face) {
            if self.face_count[f] == 1 && self.labels[f].is_none() {
                return Err(Error::Config(format!("boundary face {f} carries no label")));
            }
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let ncell = self.len(FieldKind::Cell);
        let start = match (0..ncell).find(|&c| !self.excluded[c]) {
            Some(s) => s,
            None => return false,
        };
        let mut seen = vec![false; ncell];
        let mut stack = vec![start];
        seen[start] = true;
        let [nx, ny, nz] = self.dims;
        while let Some(c) = stack.pop() {
            let (_, [i, j, k]) = self.coords(FieldKind::Cell, c);
            let mut push = |ii: usize, jj: usize, kk: usize| {
                let n = ii + nx * (jj + ny * kk);
                if !self.excluded[n] && !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if i > 0 {
                push(i - 1, j, k);
            }
            if i + 1 < nx {
                push(i + 1, j, k);
            }
            if j > 0 {
                push(i, j - 1, k);
            }
            if j + 1 < ny {
                push(i, j + 1, k);
            }
            if k > 0 {
                push(i, j, k - 1);
            }
            if k + 1 < nz {
                push(i, j, k + 1);
            }
        }
        (0..ncell).all(|c| self.excluded[c] || seen[c])
    }

    /// Smallest multiple of `h/2` strictly beyond the centers of the cell
    /// layer surrounding the obstacle.
    fn default_collar_radius(&self) -> f64 {
        let h = self.spacing;
        let [nx, ny, nz] = self.dims;
        let mut reach: f64 = 0.0;
        for c in (0..self.len(FieldKind::Cell)).filter(|&c| self.obstacle[c]) {
            let (_, [i, j, k]) = self.coords(FieldKind::Cell, c);
            for dk in -1i64..=1 {
                for dj in -1i64..=1 {
                    for di in -1i64..=1 {
                        let (ii, jj, kk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                        if ii < 0 || jj < 0 || kk < 0 || ii >= nx as i64 || jj >= ny as i64 || kk >= nz as i64 {
                            continue;
                        }
                        let n = ii as usize + nx * (jj as usize + ny * kk as usize);
                        reach = reach.max(norm3(self.position(FieldKind::Cell, n)));
                    }
                }
            }
        }
        if reach == 0.0 {
            return h;
        }
        let half = h / 2.0;
        ((reach / half).floor() + 1.0) * half
    }

    // ----- geometry ------------------------------------------------------

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn inner_radius(&self) -> f64 {
        self.inner_radius
    }

    pub fn outer_radius(&self) -> f64 {
        self.outer_radius
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn lower_corner(&self) -> [f64; 3] {
        lower_corner(self.dims, self.spacing, self.origin)
    }

    pub fn is_excluded(&self, cell: usize) -> bool {
        self.excluded[cell]
    }

    pub fn is_obstacle(&self, cell: usize) -> bool {
        self.obstacle[cell]
    }

    pub fn has_obstacle(&self) -> bool {
        self.obstacle.iter().any(|&b| b)
    }

    pub fn included_cells(&self) -> Vec<usize> {
        (0..self.len(FieldKind::Cell)).filter(|&c| !self.excluded[c]).collect()
    }

    pub fn label(&self, face: usize) -> Option<BoundaryLabel> {
        self.labels[face]
    }

    pub fn boundary_faces(&self) -> impl Iterator<Item = (usize, BoundaryLabel)> + '_ {
        self.labels.iter().enumerate().filter_map(|(f, l)| l.map(|l| (f, l)))
    }

    /// Extents of block `dir` of an edge or face array (or the single block of
    /// a node or cell array).
    pub fn block_dims(&self, kind: FieldKind, dir: usize) -> [usize; 3] {
        let n = self.dims;
        match kind {
            FieldKind::Node => [n[0] + 1, n[1] + 1, n[2] + 1],
            FieldKind::Cell => n,
            FieldKind::Edge => {
                let mut e = [n[0] + 1, n[1] + 1, n[2] + 1];
                e[dir] = n[dir];
                e
            }
            FieldKind::Face => {
                let mut e = n;
                e[dir] = n[dir] + 1;
                e
            }
        }
    }

    fn block_offset(&self, kind: FieldKind, dir: usize) -> usize {
        (0..dir).map(|d| self.block_dims(kind, d).iter().product::<usize>()).sum()
    }

    pub fn len(&self, kind: FieldKind) -> usize {
        match kind {
            FieldKind::Node | FieldKind::Cell => self.block_dims(kind, 0).iter().product(),
            FieldKind::Edge | FieldKind::Face => {
                (0..3).map(|d| self.block_dims(kind, d).iter().product::<usize>()).sum()
            }
        }
    }

    /// Global index of entity `(dir, p)`; `dir` is ignored for nodes and cells.
    pub fn index(&self, kind: FieldKind, dir: usize, p: [usize; 3]) -> usize {
        let dir = if kind.is_vector() { dir } else { 0 };
        let e = self.block_dims(kind, dir);
        self.block_offset(kind, dir) + p[0] + e[0] * (p[1] + e[1] * p[2])
    }

    /// Like [`index`](Self::index) but returns `None` outside the block.
    pub fn checked_index(&self, kind: FieldKind, dir: usize, p: [i64; 3]) -> Option<usize> {
        let dir = if kind.is_vector() { dir } else { 0 };
        let e = self.block_dims(kind, dir);
        if (0..3).any(|a| p[a] < 0 || p[a] >= e[a] as i64) {
            return None;
        }
        Some(self.index(kind, dir, [p[0] as usize, p[1] as usize, p[2] as usize]))
    }

    /// Inverse of [`index`](Self::index): `(dir, p)`.
    pub fn coords(&self, kind: FieldKind, idx: usize) -> (usize, [usize; 3]) {
        let mut rem = idx;
        let mut dir = 0;
        if kind.is_vector() {
            while dir < 2 {
                let sz: usize = self.block_dims(kind, dir).iter().product();
                if rem < sz {
                    break;
                }
                rem -= sz;
                dir += 1;
            }
        }
        let e = self.block_dims(kind, dir);
        let i = rem % e[0];
        let j = (rem / e[0]) % e[1];
        let k = rem / (e[0] * e[1]);
        (dir, [i, j, k])
    }

    /// Position in units of `h/2` relative to the lower box corner.
    pub fn half_coords(&self, kind: FieldKind, idx: usize) -> [i64; 3] {
        let (dir, p) = self.coords(kind, idx);
        let mut hc = [2 * p[0] as i64, 2 * p[1] as i64, 2 * p[2] as i64];
        match kind {
            FieldKind::Node => {}
            FieldKind::Edge => hc[dir] += 1,
            FieldKind::Face => {
                for (a, c) in hc.iter_mut().enumerate() {
                    if a != dir {
                        *c += 1;
                    }
                }
            }
            FieldKind::Cell => {
                for c in hc.iter_mut() {
                    *c += 1;
                }
            }
        }
        hc
    }

    pub fn position(&self, kind: FieldKind, idx: usize) -> [f64; 3] {
        let hc = self.half_coords(kind, idx);
        let lo = self.lower_corner();
        let half = self.spacing / 2.0;
        [
            lo[0] + hc[0] as f64 * half,
            lo[1] + hc[1] as f64 * half,
            lo[2] + hc[2] as f64 * half,
        ]
    }

    /// Direction of an edge (tangent) or face (normal); 0 for scalars.
    pub fn direction(&self, kind: FieldKind, idx: usize) -> usize {
        self.coords(kind, idx).0
    }

    fn adjacent_cells_into(&self, kind: FieldKind, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let (dir, p) = self.coords(kind, idx);
        let p = [p[0] as i64, p[1] as i64, p[2] as i64];
        let mut push = |q: [i64; 3]| {
            if let Some(c) = self.checked_index(FieldKind::Cell, 0, q) {
                out.push(c);
            }
        };
        match kind {
            FieldKind::Cell => push(p),
            FieldKind::Node => {
                for dk in [-1, 0] {
                    for dj in [-1, 0] {
                        for di in [-1, 0] {
                            push([p[0] + di, p[1] + dj, p[2] + dk]);
                        }
                    }
                }
            }
            FieldKind::Edge => {
                let (a, b) = ((dir + 1) % 3, (dir + 2) % 3);
                for da in [-1, 0] {
                    for db in [-1, 0] {
                        let mut q = p;
                        q[a] += da;
                        q[b] += db;
                        push(q);
                    }
                }
            }
            FieldKind::Face => {
                let mut q = p;
                q[dir] -= 1;
                push(q);
                push(p);
            }
        }
    }

    /// Cells (inside the box) touching the entity.
    pub fn adjacent_cells(&self, kind: FieldKind, idx: usize) -> Vec<usize> {
        let mut v = Vec::with_capacity(8);
        self.adjacent_cells_into(kind, idx, &mut v);
        v
    }

    /// Number of included cells touching the entity.
    pub fn included_neighbors(&self, kind: FieldKind, idx: usize) -> usize {
        match kind {
            FieldKind::Node => self.node_count[idx] as usize,
            FieldKind::Edge => self.edge_count[idx] as usize,
            FieldKind::Face => self.face_count[idx] as usize,
            FieldKind::Cell => usize::from(!self.excluded[idx]),
        }
    }

    /// The four edges bounding a face.
    pub fn face_edges(&self, face: usize) -> [usize; 4] {
        let (d, p) = self.coords(FieldKind::Face, face);
        let (a, b) = ((d + 1) % 3, (d + 2) % 3);
        let mut pa = p;
        pa[a] += 1;
        let mut pb = p;
        pb[b] += 1;
        [
            self.index(FieldKind::Edge, a, p),
            self.index(FieldKind::Edge, a, pb),
            self.index(FieldKind::Edge, b, p),
            self.index(FieldKind::Edge, b, pa),
        ]
    }

    pub fn face_nodes(&self, face: usize) -> [usize; 4] {
        let (d, p) = self.coords(FieldKind::Face, face);
        let (a, b) = ((d + 1) % 3, (d + 2) % 3);
        let mut pa = p;
        pa[a] += 1;
        let mut pb = p;
        pb[b] += 1;
        let mut pab = pa;
        pab[b] += 1;
        [
            self.index(FieldKind::Node, 0, p),
            self.index(FieldKind::Node, 0, pa),
            self.index(FieldKind::Node, 0, pb),
            self.index(FieldKind::Node, 0, pab),
        ]
    }

    // ----- degrees of freedom ---------------------------------------------

    /// True if the entity belongs to the closure of the included cells.
    pub fn is_present(&self, kind: FieldKind, idx: usize) -> bool {
        self.included_neighbors(kind, idx) > 0
    }

    /// True if the entity lies in the closure of the faces labeled by `mask`.
    pub fn is_masked(&self, kind: FieldKind, idx: usize, mask: Mask) -> bool {
        let slot = match mask {
            Mask::Unmasked => return false,
            Mask::Gamma1 => 0,
            Mask::Gamma2 => 1,
        };
        let s = &self.masks[slot];
        match kind {
            FieldKind::Node => s.nodes[idx],
            FieldKind::Edge => s.edges[idx],
            FieldKind::Face => s.faces[idx],
            FieldKind::Cell => false,
        }
    }

    /// Present and not masked: an active degree of freedom.
    pub fn is_free(&self, kind: FieldKind, idx: usize, mask: Mask) -> bool {
        self.is_present(kind, idx) && !self.is_masked(kind, idx, mask)
    }

    pub fn free_indices(&self, kind: FieldKind, mask: Mask) -> Vec<usize> {
        (0..self.len(kind)).filter(|&i| self.is_free(kind, i, mask)).collect()
    }

    /// Mass-lumped volume attached to a degree of freedom: `h^3` times the
    /// share of the included cells around it.
    pub fn geometric_weight(&self, kind: FieldKind, idx: usize) -> f64 {
        let share = match kind {
            FieldKind::Node => 8.0,
            FieldKind::Edge => 4.0,
            FieldKind::Face => 2.0,
            FieldKind::Cell => 1.0,
        };
        self.cell_volume() * self.included_neighbors(kind, idx) as f64 / share
    }

    pub fn geometric_weights(&self, kind: FieldKind) -> Vec<f64> {
        (0..self.len(kind)).map(|i| self.geometric_weight(kind, i)).collect()
    }

    // ----- derived domains ------------------------------------------------

    /// The collar `Omega_rhat`: included cells whose centers lie within the
    /// inner radius. Faces on the cut sphere get `sphere_label`, all other
    /// boundary faces keep their label.
    pub fn collar(&self, sphere_label: BoundaryLabel) -> Result<GridDomain> {
        let r = self.inner_radius;
        let ncell = self.len(FieldKind::Cell);
        let mut excluded = self.excluded.clone();
        let mut any = false;
        for (c, ex) in excluded.iter_mut().enumerate() {
            if !*ex && norm3(self.position(FieldKind::Cell, c)) >= r {
                *ex = true;
            } else if !*ex {
                any = true;
            }
        }
        if !any {
            return Err(Error::Geometry(format!("collar of radius {r} contains no cells")));
        }
        let [nx, ny, nz] = self.dims;
        for c in 0..ncell {
            if excluded[c] {
                continue;
            }
            let (_, [i, j, k]) = self.coords(FieldKind::Cell, c);
            if i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz {
                return Err(Error::Geometry(format!(
                    "collar of radius {r} reaches the outer box; enlarge the box"
                )));
            }
        }
        let mut dom = GridDomain::raw(self.dims, self.spacing, self.origin, self.obstacle.clone(), excluded);
        dom.inner_radius = self.inner_radius;
        dom.outer_radius = self.outer_radius;
        // an obstacle face on the cut sphere would merge the two boundary parts
        for f in 0..dom.len(FieldKind::Face) {
            if dom.face_count[f] != 1 {
                continue;
            }
            let cells = dom.adjacent_cells(FieldKind::Face, f);
            let touches_obstacle = cells.iter().any(|&c| self.obstacle[c]);
            let touches_outside = cells.iter().any(|&c| !self.obstacle[c] && dom.excluded[c]);
            if touches_obstacle && touches_outside {
                return Err(Error::Geometry("obstacle touches the collar sphere".into()));
            }
        }
        let parent = &self.labels;
        dom.assign_labels(|bf| Some(parent[bf.index].unwrap_or(sphere_label)));
        Ok(dom)
    }

    /// Same box and obstacle with every label swapped.
    pub fn swapped_labels(&self) -> GridDomain {
        let mut dom = self.clone();
        for l in dom.labels.iter_mut().flatten() {
            *l = l.swapped();
        }
        dom.build_masks();
        dom
    }

    /// Relabels every boundary face with `rule`.
    pub fn relabeled(&self, rule: impl Fn(&BoundaryFace) -> BoundaryLabel) -> GridDomain {
        let mut dom = self.clone();
        dom.assign_labels(|f| Some(rule(f)));
        dom
    }

    /// Nodes whose every adjacent box cell is included (no boundary contact).
    pub fn is_interior(&self, kind: FieldKind, idx: usize) -> bool {
        let full = match kind {
            FieldKind::Node => 8,
            FieldKind::Edge => 4,
            FieldKind::Face => 2,
            FieldKind::Cell => 1,
        };
        self.included_neighbors(kind, idx) == full
    }
}

impl PartialEq for GridDomain {
    fn eq(&self, other: &Self) -> bool {
        self.dims == other.dims
            && self.spacing == other.spacing
            && self.origin == other.origin
            && self.excluded == other.excluded
            && self.labels == other.labels
    }
}

pub(crate) fn norm3(x: [f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Standard configurations used throughout the test suites and experiments.
pub mod presets {
    use super::*;

    /// Solid cube of `n^3` cells of size `h`, every boundary face labeled `label`.
    pub fn solid_cube(n: usize, h: f64, label: BoundaryLabel) -> Result<GridDomain> {
        GridDomain::builder([n; 3], h).label_all(label).build()
    }

    /// Cube of `n^3` cells with a centered cubical obstacle of `m^3` cells
    /// (`n - m` even).
    pub fn cube_with_cavity(n: usize, m: usize, h: f64, label: BoundaryLabel) -> Result<GridDomain> {
        if m >= n || (n - m) % 2 != 0 {
            return Err(Error::Geometry(format!("cannot center a {m}^3 obstacle in a {n}^3 box")));
        }
        let lo = (n - m) / 2;
        GridDomain::builder([n; 3], h)
            .obstacle_box([lo; 3], [lo + m; 3])
            .label_all(label)
            .build()
    }

    /// Cube of `n^3` cells around a flat square frame of outer side `m`
    /// cells, one cell wide and `t` cells thick (`n - m` and `n - t` even):
    /// an obstacle with one handle.
    pub fn ring_obstacle(n: usize, m: usize, t: usize, h: f64, label: BoundaryLabel) -> Result<GridDomain> {
        if m < 3 || m >= n || t >= n || (n - m) % 2 != 0 || (n - t) % 2 != 0 {
            return Err(Error::Geometry(format!("cannot center an {m}x{m}x{t} frame in a {n}^3 box")));
        }
        let outer = m as f64 * h / 2.0;
        let inner = outer - h;
        let half_t = t as f64 * h / 2.0;
        GridDomain::builder([n; 3], h)
            .obstacle_where(move |x| {
                let (ax, ay) = (x[0].abs(), x[1].abs());
                x[2].abs() < half_t && ax < outer && ay < outer && (ax > inner || ay > inner)
            })
            .label_all(label)
            .build()
    }

    /// `n x n x t` slab with a centered `m x m` hole through the thin axis: a
    /// solid ring with one handle.
    pub fn box_ring(n: usize, m: usize, t: usize, h: f64, label: BoundaryLabel) -> Result<GridDomain> {
        if m >= n || (n - m) % 2 != 0 {
            return Err(Error::Geometry(format!("cannot center a {m}x{m} hole in a {n}x{n} slab")));
        }
        let lo = (n - m) / 2;
        let reach = norm3([n as f64 * h / 2.0, n as f64 * h / 2.0, t as f64 * h / 2.0]);
        GridDomain::builder([n, n, t], h)
            .obstacle_box([lo, lo, 0], [lo + m, lo + m, t])
            .inner_radius(reach + h)
            .outer_radius(reach + 2.0 * h)
            .label_all(label)
            .build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_roundtrip() {
        let d = GridDomain::whole_space([3, 4, 5], 0.5, [0.0; 3]).unwrap();
        for kind in [FieldKind::Node, FieldKind::Edge, FieldKind::Face, FieldKind::Cell] {
            for idx in 0..d.len(kind) {
                let (dir, p) = d.coords(kind, idx);
                assert_eq!(d.index(kind, dir, p), idx);
            }
        }
        assert_eq!(d.len(FieldKind::Node), 4 * 5 * 6);
        assert_eq!(d.len(FieldKind::Edge), 3 * 5 * 6 + 4 * 4 * 6 + 4 * 5 * 5);
        assert_eq!(d.len(FieldKind::Face), 4 * 4 * 5 + 3 * 5 * 5 + 3 * 4 * 6);
    }

    #[test]
    fn positions_are_centered() {
        let d = GridDomain::whole_space([2, 2, 2], 1.0, [0.0; 3]).unwrap();
        assert_eq!(d.position(FieldKind::Node, 0), [-1.0, -1.0, -1.0]);
        assert_eq!(d.position(FieldKind::Cell, 0), [-0.5, -0.5, -0.5]);
        let e = d.index(FieldKind::Edge, 1, [0, 0, 0]);
        assert_eq!(d.position(FieldKind::Edge, e), [-1.0, -0.5, -1.0]);
        let f = d.index(FieldKind::Face, 2, [0, 0, 2]);
        assert_eq!(d.position(FieldKind::Face, f), [-0.5, -0.5, 1.0]);
    }

    #[test]
    fn every_boundary_face_is_labeled() {
        let d = presets::cube_with_cavity(6, 2, 1.0, BoundaryLabel::Gamma1).unwrap();
        let nb = d.boundary_faces().count();
        // outer box 6*36 faces, obstacle 6*4 faces
        assert_eq!(nb, 6 * 36 + 6 * 4);
    }

    #[test]
    fn mixed_labels_split_boundary() {
        let d = GridDomain::builder([4, 4, 4], 1.0)
            .label_with(|f| if f.center[0] < 0.0 { BoundaryLabel::Gamma1 } else { BoundaryLabel::Gamma2 })
            .build()
            .unwrap();
        let g1 = d.boundary_faces().filter(|(_, l)| *l == BoundaryLabel::Gamma1).count();
        let g2 = d.boundary_faces().filter(|(_, l)| *l == BoundaryLabel::Gamma2).count();
        assert!(g1 > 0 && g2 > 0);
        assert_eq!(g1 + g2, 96);
    }

    #[test]
    fn obstacle_outside_inner_radius_is_rejected() {
        let r = GridDomain::builder([6; 3], 1.0).obstacle_box([2; 3], [4; 3]).inner_radius(1.0).build();
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn disconnected_domain_is_rejected() {
        // a full wall splits the box
        let r = GridDomain::builder([5, 5, 5], 1.0)
            .obstacle_box([2, 0, 0], [3, 5, 5])
            .inner_radius(10.0)
            .outer_radius(11.0)
            .build();
        assert!(matches!(r, Err(Error::Geometry(_))));
    }

    #[test]
    fn weights_sum_to_volume() {
        let d = presets::cube_with_cavity(6, 2, 0.5, BoundaryLabel::Gamma1).unwrap();
        let vol = d.included_cells().len() as f64 * d.cell_volume();
        for (kind, comps) in [(FieldKind::Node, 1.0), (FieldKind::Edge, 3.0), (FieldKind::Face, 3.0), (FieldKind::Cell, 1.0)] {
            let s: f64 = d.geometric_weights(kind).iter().sum();
            assert!((s - comps * vol).abs() < 1e-12 * vol, "{kind:?}");
        }
    }

    #[test]
    fn collar_radius_leaves_one_layer() {
        let d = presets::cube_with_cavity(8, 2, 1.0, BoundaryLabel::Gamma1).unwrap();
        assert_eq!(d.inner_radius(), 3.0);
        let c = d.collar(BoundaryLabel::Gamma1).unwrap();
        // every cell adjacent to the obstacle stays in the collar
        for cell in 0..d.len(FieldKind::Cell) {
            let p = d.position(FieldKind::Cell, cell);
            if !d.is_obstacle(cell) && p.iter().all(|x| x.abs() < 2.0) {
                assert!(!c.is_excluded(cell));
            }
        }
    }
}
