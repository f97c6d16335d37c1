//! Bounding volume hierarchy over scene triangles (median split, flattened).

use alloc::vec::Vec;

use crate::math::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn merge(&mut self, o: &Aabb) {
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    #[inline]
    pub fn hit(&self, origin: Vec3, inv_dir: Vec3, t_max: f64) -> bool {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for axis in 0..3 {
            let a = (self.min[axis] - origin[axis]) * inv_dir[axis];
            let b = (self.max[axis] - origin[axis]) * inv_dir[axis];
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            // NaN from 0 * inf compares false and leaves the interval untouched
            if near > t0 {
                t0 = near;
            }
            if far < t1 {
                t1 = far;
            }
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    // interior: index of the right child (left child follows the node); leaf: first primitive
    offset: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub(crate) struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(bounds: &[Aabb]) -> Self {
        let mut order: Vec<u32> = (0..bounds.len() as u32).collect();
        let centroids: Vec<Vec3> = bounds.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut nodes = Vec::with_capacity(2 * bounds.len() / LEAF_SIZE + 1);
        build_recursive(bounds, &centroids, &mut order, 0, bounds.len(), &mut nodes);
        Self { nodes, order }
    }

    /// Calls `visit` for every primitive whose leaf box the ray enters; `visit`
    /// returns the (possibly shrunk) maximum distance.
    pub fn traverse(&self, origin: Vec3, dir: Vec3, mut t_max: f64, mut visit: impl FnMut(usize, f64) -> f64) {
        if self.nodes.is_empty() {
            return;
        }
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = [0u32; 64];
        let mut top = 1;
        while top > 0 {
            top -= 1;
            let current = stack[top];
            let node = &self.nodes[current as usize];
            if !node.bounds.hit(origin, inv, t_max) {
                continue;
            }
            if node.count > 0 {
                let start = node.offset as usize;
                for &prim in &self.order[start..start + node.count as usize] {
                    t_max = visit(prim as usize, t_max);
                }
            } else {
                stack[top] = node.offset;
                stack[top + 1] = current + 1;
                top += 2;
            }
        }
    }
}

fn build_recursive(
    bounds: &[Aabb],
    centroids: &[Vec3],
    order: &mut [u32],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut node_bounds = Aabb::EMPTY;
    let mut centroid_bounds = Aabb::EMPTY;
    for &prim in &order[start..end] {
        node_bounds.merge(&bounds[prim as usize]);
        centroid_bounds.grow(centroids[prim as usize]);
    }
    let index = nodes.len();
    nodes.push(Node {
        bounds: node_bounds,
        offset: start as u32,
        count: (end - start) as u32,
    });
    if end - start <= LEAF_SIZE {
        return index;
    }
    let extent = centroid_bounds.max - centroid_bounds.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    if extent[axis] <= 0.0 {
        return index;
    }
    let mid = (start + end) / 2;
    order[start..end].sort_unstable_by(|a, b| {
        centroids[*a as usize][axis]
            .partial_cmp(&centroids[*b as usize][axis])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    build_recursive(bounds, centroids, order, start, mid, nodes);
    let right = build_recursive(bounds, centroids, order, mid, end, nodes);
    nodes[index].offset = right as u32;
    nodes[index].count = 0;
    index
}
