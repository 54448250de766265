//! Structured grids over the cylinder `(0, L) x Omega`.
//!
//! The spatial domain is a box, optionally restricted by a cell mask. A node
//! belongs to the closed domain when it is a corner of at least one inside
//! cell, and it is an interior node when every cell touching it is inside.
//! Masked domains therefore approximate the boundary by the staircase of cell
//! faces, and every interior node has all `2n` axis neighbours in the closed
//! domain.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// Predicate on cell centres; `true` marks a cell inside the domain.
pub type CellMask = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;

#[derive(Clone)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
    length: f64,
    mask: Option<CellMask>,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Domain").field("bounds", &self.bounds).field("length", &self.length).field("masked", &self.mask.is_some()).finish()
    }
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>, length: f64) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > MAX_DIM {
            return Err(Error::Domain(format!("spatial dimension must be between 1 and {MAX_DIM}, got {}", bounds.len())));
        }
        for (k, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!("degenerate bounds on axis {}: [{lo}, {hi}]", k + 1)));
            }
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Domain(format!("cylinder length must be positive, got {length}")));
        }
        Ok(Self { bounds, length, mask: None })
    }

    pub fn with_mask(mut self, mask: CellMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Extent `L` of the `y` direction.
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn mask(&self) -> Option<&CellMask> {
        self.mask.as_ref()
    }

    /// Mirror image of the domain through the centre of each axis.
    pub fn reflected(&self) -> Self {
        let mask = self.mask.clone().map(|m| {
            let bounds = self.bounds.clone();
            Arc::new(move |x: &[f64]| {
                let mirrored: Vec<f64> = x.iter().zip(&bounds).map(|(&v, &(lo, hi))| lo + hi - v).collect();
                m(&mirrored)
            }) as CellMask
        });
        Self { bounds: self.bounds.clone(), length: self.length, mask }
    }
}

/// Role of a spatial node, independent of the slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpatialTag {
    Interior,
    Boundary,
    Outside,
}

/// Role of a node of the full `(y, x)` grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeClass {
    /// `x` in the open domain and `0 < y < L`.
    Interior,
    /// `x` on the boundary and `0 < y < L`.
    SpatialBoundary,
    /// `y = 0`, `x` in the closed domain.
    InitialFace,
    /// `y = L`. Never constrained by data.
    TerminalFace,
    /// `x` outside the masked domain.
    Outside,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub interior: usize,
    pub spatial_boundary: usize,
    pub initial_face: usize,
    pub terminal_face: usize,
    pub outside: usize,
}

#[derive(Debug, Clone)]
pub struct Grid {
    domain: Domain,
    nx: Vec<usize>,
    ny: usize,
    hx: Vec<f64>,
    hy: f64,
    strides: Vec<usize>,
    tags: Vec<SpatialTag>,
    interior: Vec<usize>,
}

impl Grid {
    /// Builds the grid and tags every spatial node.
    pub fn build(domain: Domain, nx: &[usize], ny: usize) -> Result<Self> {
        let dim = domain.dim();
        if nx.len() != dim {
            return Err(Error::Domain(format!("expected {dim} node counts, got {}", nx.len())));
        }
        if nx.iter().any(|&n| n < 3) || ny < 2 {
            return Err(Error::Domain(format!("insufficient resolution: need nx >= 3 per axis and ny >= 2, got nx = {nx:?}, ny = {ny}")));
        }
        let hx: Vec<f64> = domain.bounds().iter().zip(nx).map(|(&(lo, hi), &n)| (hi - lo) / (n - 1) as f64).collect();
        let hy = domain.length() / (ny - 1) as f64;
        let mut strides = vec![1usize; dim];
        for k in (0..dim.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * nx[k + 1];
        }
        let mut grid = Self { domain, nx: nx.to_vec(), ny, hx, hy, strides, tags: Vec::new(), interior: Vec::new() };
        grid.tag_nodes()?;
        Ok(grid)
    }

    fn tag_nodes(&mut self) -> Result<()> {
        let dim = self.dim();
        let cell_dims: Vec<usize> = self.nx.iter().map(|n| n - 1).collect();
        let n_cells: usize = cell_dims.iter().product();
        let mut inside = vec![true; n_cells];
        if let Some(mask) = self.domain.mask() {
            let mut centre = vec![0.0; dim];
            for (c, flag) in inside.iter_mut().enumerate() {
                let idx = unflatten(c, &cell_dims);
                for k in 0..dim {
                    centre[k] = self.domain.bounds()[k].0 + (idx[k] as f64 + 0.5) * self.hx[k];
                }
                *flag = mask(&centre);
            }
            check_connected(&inside, &cell_dims)?;
        }

        let n_nodes = self.spatial_len();
        let mut tags = Vec::with_capacity(n_nodes);
        let corners = 1usize << dim;
        for s in 0..n_nodes {
            let idx = self.multi_index(s);
            let mut touching = 0usize;
            let mut touching_inside = 0usize;
            let mut all_present = true;
            for corner in 0..corners {
                let mut cell = Vec::with_capacity(dim);
                let mut valid = true;
                for k in 0..dim {
                    let shift = (corner >> k) & 1;
                    if shift == 0 {
                        if idx[k] == 0 {
                            valid = false;
                            break;
                        }
                        cell.push(idx[k] - 1);
                    } else {
                        if idx[k] + 1 >= self.nx[k] {
                            valid = false;
                            break;
                        }
                        cell.push(idx[k]);
                    }
                }
                if !valid {
                    all_present = false;
                    continue;
                }
                touching += 1;
                if inside[flatten(&cell, &cell_dims)] {
                    touching_inside += 1;
                }
            }
            let tag = if touching_inside == 0 {
                SpatialTag::Outside
            } else if all_present && touching_inside == touching {
                SpatialTag::Interior
            } else {
                SpatialTag::Boundary
            };
            tags.push(tag);
        }
        self.interior = (0..n_nodes).filter(|&s| tags[s] == SpatialTag::Interior).collect();
        self.tags = tags;
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn nx(&self) -> &[usize] {
        &self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> &[f64] {
        &self.hx
    }

    pub fn hy(&self) -> f64 {
        self.hy
    }

    pub fn length(&self) -> f64 {
        self.domain.length()
    }

    /// Number of spatial nodes per slice.
    pub fn spatial_len(&self) -> usize {
        self.nx.iter().product()
    }

    /// Number of nodes of the full `(y, x)` grid.
    pub fn len(&self) -> usize {
        self.spatial_len() * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, slice: usize, spatial: usize) -> usize {
        slice * self.spatial_len() + spatial
    }

    /// Splits a full node index into `(slice, spatial)`.
    pub fn split(&self, node: usize) -> (usize, usize) {
        (node / self.spatial_len(), node % self.spatial_len())
    }

    pub fn y(&self, slice: usize) -> f64 {
        if slice + 1 == self.ny {
            self.length()
        } else {
            slice as f64 * self.hy
        }
    }

    pub fn multi_index(&self, spatial: usize) -> Vec<usize> {
        unflatten(spatial, &self.nx)
    }

    pub fn spatial_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coords(&self, spatial: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(spatial, &mut out);
        out
    }

    /// `(y, x1, .., xn)` of a full-grid node.
    pub fn location(&self, node: usize) -> Vec<f64> {
        let (slice, s) = self.split(node);
        std::iter::once(self.y(slice)).chain(self.coords(s)).collect()
    }

    pub fn coords_into(&self, spatial: usize, out: &mut [f64]) {
        let mut rem = spatial;
        for k in 0..self.dim() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            let (lo, hi) = self.domain.bounds()[k];
            out[k] = if i + 1 == self.nx[k] { hi } else { lo + i as f64 * self.hx[k] };
        }
    }

    /// Axis neighbour of a spatial node; `dir` is `-1` or `+1`.
    pub fn neighbor(&self, spatial: usize, axis: usize, dir: i32) -> Option<usize> {
        let i = (spatial / self.strides[axis]) % self.nx[axis];
        match dir {
            -1 if i > 0 => Some(spatial - self.strides[axis]),
            1 if i + 1 < self.nx[axis] => Some(spatial + self.strides[axis]),
            _ => None,
        }
    }

    pub fn tag(&self, spatial: usize) -> SpatialTag {
        self.tags[spatial]
    }

    pub fn tags(&self) -> &[SpatialTag] {
        &self.tags
    }

    /// Spatial indices of interior nodes in lexicographic order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.spatial_len()).filter(|&s| self.tags[s] == SpatialTag::Boundary)
    }

    /// Spatial nodes of the closed domain (interior and boundary).
    pub fn closure_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.spatial_len()).filter(|&s| self.tags[s] != SpatialTag::Outside)
    }

    /// Slices with `0 < y < L`.
    pub fn interior_slices(&self) -> std::ops::Range<usize> {
        1..self.ny - 1
    }

    pub fn class_of(&self, slice: usize, spatial: usize) -> NodeClass {
        let tag = self.tags[spatial];
        if tag == SpatialTag::Outside {
            NodeClass::Outside
        } else if slice == 0 {
            NodeClass::InitialFace
        } else if slice + 1 == self.ny {
            NodeClass::TerminalFace
        } else if tag == SpatialTag::Interior {
            NodeClass::Interior
        } else {
            NodeClass::SpatialBoundary
        }
    }

    /// Class of every node of the full grid, indexed like [`Grid::node`].
    pub fn classify_nodes(&self) -> (Vec<NodeClass>, ClassCounts) {
        let mut classes = Vec::with_capacity(self.len());
        let mut counts = ClassCounts::default();
        for slice in 0..self.ny {
            for s in 0..self.spatial_len() {
                let c = self.class_of(slice, s);
                match c {
                    NodeClass::Interior => counts.interior += 1,
                    NodeClass::SpatialBoundary => counts.spatial_boundary += 1,
                    NodeClass::InitialFace => counts.initial_face += 1,
                    NodeClass::TerminalFace => counts.terminal_face += 1,
                    NodeClass::Outside => counts.outside += 1,
                }
                classes.push(c);
            }
        }
        (classes, counts)
    }

    /// Index of the closed-domain node nearest to `x`.
    pub fn nearest_node(&self, x: &[f64]) -> Option<usize> {
        let mut buf = vec![0.0; self.dim()];
        self.closure_nodes()
            .map(|s| {
                self.coords_into(s, &mut buf);
                let d: f64 = buf.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (s, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s)
    }

    /// Lattice lookup without regard to the mask; `None` outside the box.
    pub fn lattice_node(&self, x: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let (lo, hi) = self.domain.bounds()[k];
            if x[k] < lo - 0.5 * self.hx[k] || x[k] > hi + 0.5 * self.hx[k] {
                return None;
            }
            let i = ((x[k] - lo) / self.hx[k]).round().clamp(0.0, (self.nx[k] - 1) as f64);
            idx.push(i as usize);
        }
        Some(self.spatial_index(&idx))
    }

    pub fn nearest_slice(&self, y: f64) -> usize {
        ((y / self.hy).round().max(0.0) as usize).min(self.ny - 1)
    }

    /// Largest distance between closed-domain nodes.
    pub fn diameter(&self) -> f64 {
        let nodes: Vec<Vec<f64>> = self.closure_nodes().map(|s| self.coords(s)).collect();
        let mut best = 0.0f64;
        for (a, p) in nodes.iter().enumerate() {
            for q in &nodes[a + 1..] {
                best = best.max(dist(p, q));
            }
        }
        best
    }
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn unflatten(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        idx[k] = flat % dims[k];
        flat /= dims[k];
    }
    idx
}

fn flatten(idx: &[usize], dims: &[usize]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, &d)| acc * d + i)
}

fn check_connected(inside: &[bool], dims: &[usize]) -> Result<()> {
    let Some(start) = inside.iter().position(|&b| b) else {
        return Err(Error::Domain("mask selects no cells".into()));
    };
    let mut seen = vec![false; inside.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut reached = 1usize;
    while let Some(c) = queue.pop_front() {
        let idx = unflatten(c, dims);
        for k in 0..dims.len() {
            for dir in [-1i64, 1] {
                let j = idx[k] as i64 + dir;
                if j < 0 || j >= dims[k] as i64 {
                    continue;
                }
                let mut nb = idx.clone();
                nb[k] = j as usize;
                let f = flatten(&nb, dims);
                if inside[f] && !seen[f] {
                    seen[f] = true;
                    reached += 1;
                    queue.push_back(f);
                }
            }
        }
    }
    let total = inside.iter().filter(|&&b| b).count();
    if reached != total {
        return Err(Error::Domain(format!("disconnected mask: flood fill reached {reached} of {total} cells")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Domain {
        Domain::new(vec![(0.0, 1.0); n], 1.0).unwrap()
    }

    #[test]
    fn spacings_follow_node_counts() {
        let g = Grid::build(unit(1), &[5], 3).unwrap();
        assert_eq!(g.hx(), &[0.25]);
        assert_eq!(g.hy(), 0.5);

        let d = Domain::new(vec![(0.0, 1.0), (0.0, 2.0)], 1.0).unwrap();
        let g = Grid::build(d, &[3, 5], 2).unwrap();
        assert_eq!(g.hx(), &[0.5, 0.5]);
    }

    #[test]
    fn two_nodes_is_insufficient() {
        let err = Grid::build(unit(2), &[5, 2], 3).unwrap_err();
        assert!(err.to_string().contains("insufficient resolution"));
        assert!(Grid::build(unit(1), &[5], 1).is_err());
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(Domain::new(vec![(1.0, 1.0)], 1.0).is_err());
        assert!(Domain::new(vec![(0.0, 1.0)], 0.0).is_err());
    }

    #[test]
    fn one_dimensional_classes() {
        let g = Grid::build(unit(1), &[5], 3).unwrap();
        let classes: Vec<NodeClass> = (0..5).map(|s| g.class_of(1, s)).collect();
        assert_eq!(classes[0], NodeClass::SpatialBoundary);
        assert_eq!(classes[4], NodeClass::SpatialBoundary);
        assert!(classes[1..4].iter().all(|&c| c == NodeClass::Interior));
        assert!((0..5).all(|s| g.class_of(0, s) == NodeClass::InitialFace));
        assert!((0..5).all(|s| g.class_of(2, s) == NodeClass::TerminalFace));
    }

    #[test]
    fn square_inner_slice_counts() {
        let g = Grid::build(unit(2), &[5, 5], 3).unwrap();
        let inner: Vec<NodeClass> = (0..25).map(|s| g.class_of(1, s)).collect();
        assert_eq!(inner.iter().filter(|&&c| c == NodeClass::Interior).count(), 9);
        assert_eq!(inner.iter().filter(|&&c| c == NodeClass::SpatialBoundary).count(), 16);
        let (_, counts) = g.classify_nodes();
        assert_eq!(counts.initial_face, 25);
        assert_eq!(counts.terminal_face, 25);
    }

    #[test]
    fn l_shaped_mask() {
        let mask: CellMask = Arc::new(|x: &[f64]| !(x[0] > 0.5 && x[1] > 0.5));
        let g = Grid::build(unit(2).with_mask(mask), &[5, 5], 3).unwrap();
        // the cut-out quadrant's far corner is outside
        let corner = g.spatial_index(&[4, 4]);
        assert_eq!(g.tag(corner), SpatialTag::Outside);
        // the re-entrant corner sits on the boundary
        let reentrant = g.spatial_index(&[2, 2]);
        assert_eq!(g.tag(reentrant), SpatialTag::Boundary);
        for &s in g.interior_nodes() {
            for k in 0..2 {
                for dir in [-1, 1] {
                    let nb = g.neighbor(s, k, dir).unwrap();
                    assert_ne!(g.tag(nb), SpatialTag::Outside);
                }
            }
        }
    }

    #[test]
    fn disconnected_mask_rejected() {
        let mask: CellMask = Arc::new(|x: &[f64]| (x[0] - 0.5).abs() > 0.3);
        let err = Grid::build(unit(1).with_mask(mask), &[11], 3).unwrap_err();
        assert!(err.to_string().contains("disconnected"));
    }

    #[test]
    fn reflection_mirrors_classification() {
        let mask: CellMask = Arc::new(|x: &[f64]| x[0] + 0.5 * x[1] < 1.1);
        let d = unit(2).with_mask(mask);
        let g = Grid::build(d.clone(), &[9, 7], 3).unwrap();
        let r = Grid::build(d.reflected(), &[9, 7], 3).unwrap();
        for s in 0..g.spatial_len() {
            let idx = g.multi_index(s);
            let mirrored: Vec<usize> = idx.iter().zip(g.nx()).map(|(&i, &n)| n - 1 - i).collect();
            assert_eq!(g.tag(s), r.tag(r.spatial_index(&mirrored)));
        }
    }

    #[test]
    fn refinement_keeps_coincident_tags() {
        let mask: CellMask = Arc::new(|x: &[f64]| !(x[0] > 0.5 && x[1] < 0.25));
        let d = unit(2).with_mask(mask);
        let coarse = Grid::build(d.clone(), &[5, 5], 3).unwrap();
        let fine = Grid::build(d, &[9, 9], 3).unwrap();
        for s in 0..coarse.spatial_len() {
            let idx: Vec<usize> = coarse.multi_index(s).iter().map(|i| 2 * i).collect();
            assert_eq!(coarse.tag(s), fine.tag(fine.spatial_index(&idx)));
        }
    }

    #[test]
    fn coordinates_hit_bounds_exactly() {
        let d = Domain::new(vec![(-0.3, 0.7)], 2.0).unwrap();
        let g = Grid::build(d, &[7], 4).unwrap();
        assert_eq!(g.coords(6), vec![0.7]);
        assert_eq!(g.coords(0), vec![-0.3]);
        assert_eq!(g.y(3), 2.0);
        assert_eq!(g.y(0), 0.0);
    }
}
