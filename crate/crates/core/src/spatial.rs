//! Static k-d tree over weighted points: open-ball masses, range scans and
//! nearest-neighbour queries with ascending-index tie-breaking.

use std::collections::HashMap;

use crate::geometry::{dist2, Point};
use crate::sum::Compensated;

const LEAF: usize = 16;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    lo: Point,
    hi: Point,
    start: usize,
    end: usize,
    left: u32,
    right: u32,
    mass: f64,
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point>,
    weights: Vec<f64>,
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point], weights: &[f64]) -> Self {
        assert_eq!(points.len(), weights.len());
        let mut tree = Self {
            points: points.to_vec(),
            weights: weights.to_vec(),
            perm: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    /// Unit weights.
    pub fn unweighted(points: &[Point]) -> Self {
        Self::new(points, &vec![1.0; points.len()])
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> u32 {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut mass = Compensated::new();
        for &i in &self.perm[start..end] {
            let p = self.points[i];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
            mass.add(self.weights[i]);
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            lo,
            hi,
            start,
            end,
            left: NONE,
            right: NONE,
            mass: mass.value(),
        });
        if end - start > LEAF {
            let axis = (0..3)
                .max_by(|a, b| (hi[*a] - lo[*a]).total_cmp(&(hi[*b] - lo[*b])))
                .unwrap();
            let mid = (start + end) / 2;
            let points = &self.points;
            self.perm[start..end].select_nth_unstable_by(mid - start, |a, b| {
                points[*a][axis].total_cmp(&points[*b][axis]).then(a.cmp(b))
            });
            let l = self.build(start, mid);
            let r = self.build(mid, end);
            self.nodes[id as usize].left = l;
            self.nodes[id as usize].right = r;
        }
        id
    }

    fn min_d2(node: &Node, c: &Point) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (node.lo[k] - c[k]).max(0.0).max(c[k] - node.hi[k]);
            s += d * d;
        }
        s
    }

    fn max_d2(node: &Node, c: &Point) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (c[k] - node.lo[k]).abs().max((node.hi[k] - c[k]).abs());
            s += d * d;
        }
        s
    }

    /// Total weight in the open ball `B(c, r)`.
    pub fn mass_within(&self, c: &Point, r: f64) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let r2 = r * r;
        let mut acc = Compensated::new();
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if Self::min_d2(node, c) >= r2 {
                continue;
            }
            if Self::max_d2(node, c) < r2 {
                acc.add(node.mass);
                continue;
            }
            if node.left == NONE {
                for &i in &self.perm[node.start..node.end] {
                    if dist2(&self.points[i], c) < r2 {
                        acc.add(self.weights[i]);
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
        acc.value()
    }

    /// Indices in the open ball `B(c, r)`, ascending.
    pub fn within(&self, c: &Point, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_within(c, r, |i| out.push(i));
        out.sort_unstable();
        out
    }

    /// Visits indices in the open ball `B(c, r)` in tree order.
    pub fn for_each_within<F: FnMut(usize)>(&self, c: &Point, r: f64, mut f: F) {
        if self.is_empty() {
            return;
        }
        let r2 = r * r;
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if Self::min_d2(node, c) >= r2 {
                continue;
            }
            if node.left == NONE {
                for &i in &self.perm[node.start..node.end] {
                    if dist2(&self.points[i], c) < r2 {
                        f(i);
                    }
                }
            } else {
                stack.push(node.right);
                stack.push(node.left);
            }
        }
    }

    /// Whether some point other than `skip` lies in the open ball.
    pub fn any_within(&self, c: &Point, r: f64, skip: Option<usize>) -> bool {
        let mut found = false;
        self.for_each_within(c, r, |i| {
            if Some(i) != skip {
                found = true;
            }
        });
        found
    }

    /// Nearest point; equal distances resolve to the smaller index.
    pub fn nearest(&self, c: &Point) -> Option<(usize, f64)> {
        self.nearest_except(c, None)
    }

    /// Nearest point other than `skip`.
    pub fn nearest_except(&self, c: &Point, skip: Option<usize>) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if Self::min_d2(node, c) > best.0 {
                continue;
            }
            if node.left == NONE {
                for &i in &self.perm[node.start..node.end] {
                    if Some(i) == skip {
                        continue;
                    }
                    let d = dist2(&self.points[i], c);
                    if d < best.0 || (d == best.0 && i < best.1) {
                        best = (d, i);
                    }
                }
            } else {
                let (l, r) = (&self.nodes[node.left as usize], &self.nodes[node.right as usize]);
                if Self::min_d2(l, c) <= Self::min_d2(r, c) {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        (best.1 != usize::MAX).then(|| (best.1, best.0.sqrt()))
    }
}

/// Uniform hash grid supporting insertion; used for greedy nets.
#[derive(Debug, Clone)]
pub struct HashGrid {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
}

impl HashGrid {
    pub fn new(cell: f64) -> Self {
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: &Point) -> [i64; 3] {
        [
            (p[0] / self.cell).floor() as i64,
            (p[1] / self.cell).floor() as i64,
            (p[2] / self.cell).floor() as i64,
        ]
    }

    pub fn insert(&mut self, p: &Point, id: usize) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(id);
    }

    /// Whether some inserted point lies within the closed ball `B̄(p, r)`,
    /// for `r ≤ cell`.
    pub fn any_within_closed(&self, p: &Point, r: f64, positions: &[Point]) -> bool {
        debug_assert!(r <= self.cell);
        let k = self.key(p);
        let r2 = r * r;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if b.iter().any(|&i| dist2(&positions[i], p) <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}
