//! Euclidean nearest-neighbor index with an exact linear-scan fallback.
//!
//! The planner's nearest-neighbor queries are linear scans by default, which
//! is exact for every metric.  Spaces that expose a Euclidean embedding can
//! opt into a k-d tree; queries filter dead (pruned) nodes on the fly and the
//! tree is rebuilt from the live set after a prune invalidates enough of it.

use super::{SearchSpace, Tree};

const NO_CHILD: i32 = -1;

/// Arena-allocated k-d tree over fixed-dimension points.  Points carry a
/// caller-chosen id; ties on distance resolve to the lowest id, matching the
/// planner's linear-scan tie rule.
pub struct KdTree {
    dim: usize,
    pts: Vec<f64>,
    ids: Vec<usize>,
    left: Vec<i32>,
    right: Vec<i32>,
    root: i32,
}

impl KdTree {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "k-d tree needs at least one dimension");
        Self {
            dim,
            pts: Vec::new(),
            ids: Vec::new(),
            left: Vec::new(),
            right: Vec::new(),
            root: NO_CHILD,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn point(&self, slot: usize) -> &[f64] {
        &self.pts[slot * self.dim..(slot + 1) * self.dim]
    }

    fn push_slot(&mut self, id: usize, point: &[f64]) -> usize {
        assert_eq!(point.len(), self.dim);
        let slot = self.ids.len();
        self.pts.extend_from_slice(point);
        self.ids.push(id);
        self.left.push(NO_CHILD);
        self.right.push(NO_CHILD);
        slot
    }

    /// Insert one point, walking down the existing tree.
    pub fn insert(&mut self, id: usize, point: &[f64]) {
        let slot = self.push_slot(id, point) as i32;
        if self.root == NO_CHILD {
            self.root = slot;
            return;
        }
        let mut cur = self.root as usize;
        let mut depth = 0usize;
        loop {
            let d = depth % self.dim;
            let go_left = point[d] < self.pts[cur * self.dim + d];
            let child = if go_left { &mut self.left[cur] } else { &mut self.right[cur] };
            if *child == NO_CHILD {
                *child = slot;
                return;
            }
            cur = *child as usize;
            depth += 1;
        }
    }

    /// Build a balanced tree from `(id, point)` pairs in one pass.
    pub fn bulk(dim: usize, items: &[(usize, &[f64])]) -> Self {
        let mut tree = Self::new(dim);
        let mut slots: Vec<usize> = Vec::with_capacity(items.len());
        for (id, p) in items {
            slots.push(tree.push_slot(*id, p));
        }
        tree.root = tree.build_rec(&mut slots, 0);
        tree
    }

    fn build_rec(&mut self, slots: &mut [usize], depth: usize) -> i32 {
        if slots.is_empty() {
            return NO_CHILD;
        }
        let d = depth % self.dim;
        slots.sort_by(|&a, &b| {
            let ka = self.pts[a * self.dim + d];
            let kb = self.pts[b * self.dim + d];
            ka.partial_cmp(&kb).unwrap().then(self.ids[a].cmp(&self.ids[b]))
        });
        let mid = slots.len() / 2;
        let node = slots[mid];
        // Split the slice around the median before recursing.
        let (lo, rest) = slots.split_at_mut(mid);
        let hi = &mut rest[1..];
        let l = self.build_rec(lo, depth + 1);
        let r = self.build_rec(hi, depth + 1);
        self.left[node] = l;
        self.right[node] = r;
        node as i32
    }

    /// Nearest accepted point to `q`; returns `(id, squared_distance)`.
    /// Equal distances resolve to the lowest id, exactly.
    pub fn nearest<F: Fn(usize) -> bool>(&self, q: &[f64], accept: F) -> Option<(usize, f64)> {
        assert_eq!(q.len(), self.dim);
        let mut best: Option<(usize, f64)> = None;
        if self.root != NO_CHILD {
            self.nearest_rec(self.root as usize, q, 0, &accept, &mut best);
        }
        best
    }

    fn nearest_rec<F: Fn(usize) -> bool>(
        &self,
        slot: usize,
        q: &[f64],
        depth: usize,
        accept: &F,
        best: &mut Option<(usize, f64)>,
    ) {
        let id = self.ids[slot];
        if accept(id) {
            let mut d2 = 0.0;
            let p = self.point(slot);
            for i in 0..self.dim {
                let diff = q[i] - p[i];
                d2 += diff * diff;
            }
            let better = match *best {
                None => true,
                Some((bid, bd2)) => d2 < bd2 || (d2 == bd2 && id < bid),
            };
            if better {
                *best = Some((id, d2));
            }
        }
        let d = depth % self.dim;
        let diff = q[d] - self.pts[slot * self.dim + d];
        let (near, far) = if diff < 0.0 {
            (self.left[slot], self.right[slot])
        } else {
            (self.right[slot], self.left[slot])
        };
        if near != NO_CHILD {
            self.nearest_rec(near as usize, q, depth + 1, accept, best);
        }
        // Cross the splitting plane when it could still hold a closer point,
        // or an equally close point with a lower id.
        let plane = diff * diff;
        let cross = match *best {
            None => true,
            Some((_, bd2)) => plane <= bd2,
        };
        if cross && far != NO_CHILD {
            self.nearest_rec(far as usize, q, depth + 1, accept, best);
        }
    }
}

/// Nearest-neighbor frontend used by the search loop: a k-d tree over the
/// space's embedding when enabled, otherwise exact linear scans.  Cost-
/// augmented queries append `w_c * cost` as an extra coordinate.
pub(crate) struct PlannerIndex {
    dim: Option<usize>,
    w_c: f64,
    emb: Vec<f64>,
    costs: Vec<f64>,
    state_tree: Option<KdTree>,
    aug_tree: Option<KdTree>,
    stale: bool,
    buf: Vec<f64>,
}

impl PlannerIndex {
    pub(crate) fn new<S: SearchSpace>(space: &S, config: &super::PlannerConfig) -> Self {
        let dim = if config.use_kd_tree { space.embedding_dim() } else { None };
        Self {
            dim,
            w_c: config.cost_dim_weight,
            emb: Vec::new(),
            costs: Vec::new(),
            state_tree: dim.map(KdTree::new),
            aug_tree: None,
            stale: false,
            buf: Vec::new(),
        }
    }

    pub(crate) fn insert<S: SearchSpace>(&mut self, space: &S, state: &S::State, cost: f64) {
        let Some(dim) = self.dim else { return };
        let id = self.costs.len();
        let base = self.emb.len();
        self.emb.resize(base + dim, 0.0);
        space.embed(state, &mut self.emb[base..]);
        self.costs.push(cost);
        if !self.stale {
            let point: Vec<f64> = self.emb[base..].to_vec();
            if let Some(t) = self.state_tree.as_mut() {
                t.insert(id, &point);
            }
            if let Some(t) = self.aug_tree.as_mut() {
                let mut aug = point;
                aug.push(self.w_c * cost);
                t.insert(id, &aug);
            }
        }
    }

    /// A prune removed nodes; rebuild from the live set at the next query.
    pub(crate) fn mark_stale(&mut self) {
        if self.dim.is_some() {
            self.stale = true;
        }
    }

    fn rebuild<St: Clone, C: Clone>(&mut self, tree: &Tree<St, C>) {
        let Some(dim) = self.dim else { return };
        let mut state_items: Vec<(usize, &[f64])> = Vec::with_capacity(tree.alive_count());
        let mut aug_pts: Vec<Vec<f64>> = Vec::with_capacity(tree.alive_count());
        let mut aug_ids: Vec<usize> = Vec::with_capacity(tree.alive_count());
        for id in 0..self.costs.len() {
            if !tree.is_alive(id) {
                continue;
            }
            let p = &self.emb[id * dim..(id + 1) * dim];
            state_items.push((id, p));
            let mut aug = p.to_vec();
            aug.push(self.w_c * self.costs[id]);
            aug_pts.push(aug);
            aug_ids.push(id);
        }
        self.state_tree = Some(KdTree::bulk(dim, &state_items));
        let aug_items: Vec<(usize, &[f64])> =
            aug_ids.iter().copied().zip(aug_pts.iter().map(|p| p.as_slice())).collect();
        self.aug_tree = Some(KdTree::bulk(dim + 1, &aug_items));
        self.stale = false;
    }

    pub(crate) fn nearest_state<S>(
        &mut self,
        space: &S,
        tree: &Tree<S::State, S::Control>,
        target: &S::State,
    ) -> Option<usize>
    where
        S: SearchSpace,
    {
        let Some(dim) = self.dim else {
            return tree.nearest_state(space, target);
        };
        if self.stale {
            self.rebuild(tree);
        }
        self.buf.resize(dim, 0.0);
        space.embed(target, &mut self.buf);
        self.state_tree
            .as_ref()
            .and_then(|t| t.nearest(&self.buf, |id| tree.is_alive(id)))
            .map(|(id, _)| id)
    }

    pub(crate) fn nearest_state_cost<S>(
        &mut self,
        space: &S,
        tree: &Tree<S::State, S::Control>,
        target: &S::State,
        target_cost: f64,
        w_c: f64,
    ) -> Option<usize>
    where
        S: SearchSpace,
    {
        let Some(dim) = self.dim else {
            return tree.nearest_state_cost(space, target, target_cost, w_c);
        };
        if self.stale || self.aug_tree.is_none() {
            self.rebuild(tree);
        }
        self.buf.resize(dim + 1, 0.0);
        space.embed(target, &mut self.buf[..dim]);
        self.buf[dim] = self.w_c * target_cost;
        self.aug_tree
            .as_ref()
            .and_then(|t| t.nearest(&self.buf, |id| tree.is_alive(id)))
            .map(|(id, _)| id)
    }
}
