//! Plane trees with vertex types and edge displacements, and their
//! contour, height, label and type-count encodings.
//!
//! Vertices are indexed by their position in lexicographic (depth-first)
//! order, so index 0 is always the root. Displacements and labels are kept
//! as doubled integers, which represents half-integer labels exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertex type, a small integer.
pub type Type = u8;

const NONE: usize = usize::MAX;

/// Rooted plane tree with per-vertex types and per-edge displacements.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabeledTypedTree {
    types: Vec<Type>,
    children: Vec<usize>,
    disp2: Vec<i64>,
    parent: Vec<usize>,
    kid_start: Vec<usize>,
    kid_list: Vec<usize>,
    depth: Vec<usize>,
    label2: Vec<i64>,
    size: Vec<usize>,
}

/// JSON wire format: per-vertex arrays in lexicographic order, with one
/// doubled displacement per non-root vertex.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TreeJson {
    pub types: Vec<Type>,
    pub children: Vec<usize>,
    pub disp2: Vec<i64>,
}

impl LabeledTypedTree {
    /// Builds a tree from lexicographic-order arrays. `disp2` holds one entry
    /// per non-root vertex.
    pub fn new(types: Vec<Type>, children: Vec<usize>, disp2: Vec<i64>) -> Result<Self> {
        let n = types.len();
        if n == 0 {
            return Err(Error::InvalidTree("empty vertex list".into()));
        }
        if children.len() != n {
            return Err(Error::InvalidTree(format!(
                "{} types but {} child counts",
                n,
                children.len()
            )));
        }
        if disp2.len() != n - 1 {
            return Err(Error::InvalidTree(format!(
                "{} vertices need {} displacements, got {}",
                n,
                n - 1,
                disp2.len()
            )));
        }
        let mut full = Vec::with_capacity(n);
        full.push(0);
        full.extend(disp2);
        Self::from_full(types, children, full)
    }

    fn from_full(types: Vec<Type>, children: Vec<usize>, disp2: Vec<i64>) -> Result<Self> {
        let n = types.len();
        let mut parent = vec![NONE; n];
        let mut stack: Vec<(usize, usize)> = vec![(0, children[0])];
        for v in 1..n {
            while matches!(stack.last(), Some(&(_, 0))) {
                stack.pop();
            }
            let top = stack
                .last_mut()
                .ok_or_else(|| Error::InvalidTree(format!("vertex {v} has no parent slot")))?;
            top.1 -= 1;
            parent[v] = top.0;
            stack.push((v, children[v]));
        }
        if stack.iter().any(|&(_, r)| r != 0) {
            return Err(Error::InvalidTree("child counts exceed vertex count".into()));
        }
        let mut kid_start = vec![0usize; n + 1];
        for v in 0..n {
            kid_start[v + 1] = kid_start[v] + children[v];
        }
        let mut fill = kid_start.clone();
        let mut kid_list = vec![0usize; n.saturating_sub(1)];
        let mut depth = vec![0usize; n];
        let mut label2 = vec![0i64; n];
        for v in 1..n {
            let p = parent[v];
            kid_list[fill[p]] = v;
            fill[p] += 1;
            depth[v] = depth[p] + 1;
            label2[v] = label2[p] + disp2[v];
        }
        let mut size = vec![1usize; n];
        for v in (1..n).rev() {
            size[parent[v]] += size[v];
        }
        Ok(Self {
            types,
            children,
            disp2,
            parent,
            kid_start,
            kid_list,
            depth,
            label2,
            size,
        })
    }

    /// The one-vertex tree.
    pub fn single(ty: Type) -> Self {
        Self::from_full(vec![ty], vec![0], vec![0]).expect("single vertex is valid")
    }

    /// Builds a tree from arbitrary node ids with ordered child lists. Node
    /// `root` becomes the root and `disp2[v]` is the displacement on the edge
    /// into `v`. The result is re-indexed in lexicographic order; the returned
    /// vector maps new indices to the original ids.
    pub fn from_child_lists(
        root: usize,
        kids: &[Vec<usize>],
        types: &[Type],
        disp2: &[i64],
    ) -> (Self, Vec<usize>) {
        let mut order = Vec::with_capacity(kids.len());
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            order.push(v);
            for &c in kids[v].iter().rev() {
                stack.push(c);
            }
        }
        let t = Self::from_full(
            order.iter().map(|&v| types[v]).collect(),
            order.iter().map(|&v| kids[v].len()).collect(),
            order
                .iter()
                .enumerate()
                .map(|(i, &v)| if i == 0 { 0 } else { disp2[v] })
                .collect(),
        )
        .expect("child lists describe a tree");
        (t, order)
    }

    /// Same shape and types with new per-vertex displacements (root entry ignored).
    pub fn with_disp2_full(&self, disp2: Vec<i64>) -> Self {
        let mut d = disp2;
        d[0] = 0;
        Self::from_full(self.types.clone(), self.children.clone(), d).expect("same shape")
    }

    /// Same shape and types with all displacements zero.
    pub fn unlabeled(&self) -> Self {
        self.with_disp2_full(vec![0; self.len()])
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn types(&self) -> &[Type] {
        &self.types
    }

    pub fn child_counts(&self) -> &[usize] {
        &self.children
    }

    pub fn ty(&self, v: usize) -> Type {
        self.types[v]
    }

    pub fn k(&self, v: usize) -> usize {
        self.children[v]
    }

    pub fn kids(&self, v: usize) -> &[usize] {
        &self.kid_list[self.kid_start[v]..self.kid_start[v + 1]]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        (self.parent[v] != NONE).then_some(self.parent[v])
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn subtree_size(&self, v: usize) -> usize {
        self.size[v]
    }

    /// Doubled label of `v`: twice the sum of displacements from the root.
    pub fn label2(&self, v: usize) -> i64 {
        self.label2[v]
    }

    pub fn label(&self, v: usize) -> f64 {
        self.label2[v] as f64 / 2.0
    }

    pub fn labels2(&self) -> &[i64] {
        &self.label2
    }

    /// Doubled displacement on the edge from the parent of `v` into `v`
    /// (0 for the root).
    pub fn disp2(&self, v: usize) -> i64 {
        self.disp2[v]
    }

    /// Per-vertex doubled displacements including a leading 0 for the root.
    pub fn disp2_full(&self) -> &[i64] {
        &self.disp2
    }

    /// Doubled displacements from `v` to each of its children, in order.
    pub fn child_disp2(&self, v: usize) -> Vec<i64> {
        self.kids(v).iter().map(|&c| self.disp2[c]).collect()
    }

    /// Types of the children of `v`, in order.
    pub fn ctype(&self, v: usize) -> Vec<Type> {
        self.kids(v).iter().map(|&c| self.types[c]).collect()
    }

    /// 1-based position of `v` among its siblings (0 for the root).
    pub fn child_index(&self, v: usize) -> usize {
        match self.parent(v) {
            None => 0,
            Some(p) => self.kids(p).iter().position(|&c| c == v).unwrap() + 1,
        }
    }

    /// Ulam-Harris address of `v`.
    pub fn address(&self, v: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.depth[v]);
        let mut u = v;
        while let Some(p) = self.parent(u) {
            out.push(self.child_index(u) as u32);
            u = p;
        }
        out.reverse();
        out
    }

    /// Vertex with the given Ulam-Harris address.
    pub fn vertex_of(&self, address: &[u32]) -> Option<usize> {
        let mut v = 0;
        for &i in address {
            let i = i as usize;
            if i == 0 || i > self.children[v] {
                return None;
            }
            v = self.kids(v)[i - 1];
        }
        Some(v)
    }

    pub fn lca(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth[u] > self.depth[v] {
            u = self.parent[u];
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v];
        }
        while u != v {
            u = self.parent[u];
            v = self.parent[v];
        }
        u
    }

    /// Graph distance in the tree.
    pub fn dist(&self, u: usize, v: usize) -> usize {
        let w = self.lca(u, v);
        self.depth[u] + self.depth[v] - 2 * self.depth[w]
    }

    /// Largest absolute edge displacement (doubled).
    pub fn max_abs_disp2(&self) -> i64 {
        self.disp2.iter().map(|d| d.abs()).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> TreeJson {
        TreeJson {
            types: self.types.clone(),
            children: self.children.clone(),
            disp2: self.disp2[1..].to_vec(),
        }
    }

    pub fn from_json(j: &TreeJson) -> Result<Self> {
        Self::new(j.types.clone(), j.children.clone(), j.disp2.clone())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("serializable")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: TreeJson = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_json(&j)
    }
}

/// Formats an Ulam-Harris address; the root is `∅` and letters are dot-separated.
pub fn format_address(a: &[u32]) -> String {
    if a.is_empty() {
        "∅".to_string()
    } else {
        a.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".")
    }
}

/// Rounds grid coordinates that are within floating-point noise of an integer.
fn snap(s: f64) -> f64 {
    let r = s.round();
    if (s - r).abs() < 1e-9 * s.abs().max(1.0) {
        r
    } else {
        s
    }
}

/// Piecewise-linear function on `[0,1]` given by its values on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PathFunction {
    values: Vec<f64>,
}

impl PathFunction {
    /// `values[i]` is the value at `i/N` where `N = values.len() - 1`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Domain("a path function needs at least two grid values".into()));
        }
        Ok(Self { values })
    }

    pub fn zero() -> Self {
        Self {
            values: vec![0.0, 0.0],
        }
    }

    pub fn grid_size(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at_grid(&self, i: usize) -> f64 {
        self.values[i]
    }

    fn check(x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::Domain(format!("{x} is outside [0,1]")))
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Self::check(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let n = self.grid_size();
        let s = snap(x * n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        if frac <= 0.0 {
            return self.values[i];
        }
        if frac >= 1.0 {
            return self.values[i + 1];
        }
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }

    /// Grid indices `i` with `x <= i/N <= y`.
    fn grid_range(&self, x: f64, y: f64) -> std::ops::Range<usize> {
        let n = self.grid_size();
        let lo = snap(x * n as f64).ceil() as usize;
        let hi = (snap(y * n as f64).floor() as usize).min(n);
        if lo > hi {
            return lo..lo;
        }
        lo..hi + 1
    }

    /// Exact infimum over `[x,y]` (arguments in either order).
    pub fn inf_on(&self, x: f64, y: f64) -> Result<f64> {
        Self::check(x)?;
        Self::check(y)?;
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        let ends = self.eval_unchecked(a).min(self.eval_unchecked(b));
        Ok(self.values[self.grid_range(a, b)]
            .iter()
            .fold(ends, |m, &v| m.min(v)))
    }

    /// Exact supremum over `[x,y]` (arguments in either order).
    pub fn sup_on(&self, x: f64, y: f64) -> Result<f64> {
        Self::check(x)?;
        Self::check(y)?;
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        let ends = self.eval_unchecked(a).max(self.eval_unchecked(b));
        Ok(self.values[self.grid_range(a, b)]
            .iter()
            .fold(ends, |m, &v| m.max(v)))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Zero at both ends and nonnegative, up to `tol`.
    pub fn is_excursion(&self, tol: f64) -> bool {
        self.values[0].abs() <= tol
            && self.values[self.grid_size()].abs() <= tol
            && self.values.iter().all(|&v| v >= -tol)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let n = self.grid_size() as f64;
        let mut out = String::from("s,value\n");
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{},{}\n", i as f64 / n, v));
        }
        out
    }
}

/// Depth-first contour exploration: `2|t|-1` vertex indices starting and
/// ending at the root.
pub fn contour_exploration(t: &LabeledTypedTree) -> Vec<usize> {
    let mut seq = Vec::with_capacity(2 * t.len() - 1);
    seq.push(0);
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some(top) = stack.last_mut() {
        let (v, next) = *top;
        if next < t.k(v) {
            top.1 += 1;
            let c = t.kids(v)[next];
            seq.push(c);
            stack.push((c, 0));
        } else {
            stack.pop();
            if let Some(&(p, _)) = stack.last() {
                seq.push(p);
            }
        }
    }
    seq
}

/// Contour exploration as Ulam-Harris addresses.
pub fn contour_addresses(t: &LabeledTypedTree) -> Vec<Vec<u32>> {
    contour_exploration(t).into_iter().map(|v| t.address(v)).collect()
}

fn along_contour(t: &LabeledTypedTree, f: impl Fn(usize) -> f64) -> PathFunction {
    if t.len() == 1 {
        return PathFunction::zero();
    }
    PathFunction {
        values: contour_exploration(t).into_iter().map(f).collect(),
    }
}

/// Contour process: heights along the contour exploration on a grid of size `2|t|-2`.
pub fn contour_process(t: &LabeledTypedTree) -> PathFunction {
    along_contour(t, |v| t.depth(v) as f64)
}

/// Label process: labels along the contour exploration.
pub fn label_process(t: &LabeledTypedTree) -> PathFunction {
    along_contour(t, |v| t.label(v))
}

/// Height and lexicographic label processes on a grid of size `|t|`,
/// closing at the root.
pub fn height_lex_processes(t: &LabeledTypedTree) -> (PathFunction, PathFunction) {
    let n = t.len();
    let mut h: Vec<f64> = (0..n).map(|v| t.depth(v) as f64).collect();
    let mut s: Vec<f64> = (0..n).map(|v| t.label(v)).collect();
    h.push(0.0);
    s.push(0.0);
    (PathFunction { values: h }, PathFunction { values: s })
}

/// Number of first visits to type-`q` vertices strictly before each contour step.
pub fn type_count_process(t: &LabeledTypedTree, q: Type) -> PathFunction {
    if t.len() == 1 {
        return PathFunction::zero();
    }
    let theta = contour_exploration(t);
    let mut seen = vec![false; t.len()];
    let mut values = Vec::with_capacity(theta.len());
    let mut count = 0usize;
    for &v in &theta {
        values.push(count as f64);
        if !seen[v] {
            seen[v] = true;
            if t.ty(v) == q {
                count += 1;
            }
        }
    }
    PathFunction { values }
}

/// `C(x) + C(y) - 2 inf_{[x,y]} C`.
pub fn dist_on_contour(c: &PathFunction, x: f64, y: f64) -> Result<f64> {
    let m = c.inf_on(x, y)?;
    Ok(c.eval_unchecked(x) + c.eval_unchecked(y) - 2.0 * m)
}

/// The farther from the root of `θ(⌊ny⌋)` and `θ(⌊ny⌋+1)` with `n = 2|t|-2`.
pub fn vertex_at(t: &LabeledTypedTree, y: f64) -> Result<usize> {
    if t.len() < 2 {
        return Err(Error::Domain("vertex_at needs a tree with an edge".into()));
    }
    if !(0.0..1.0).contains(&y) {
        return Err(Error::Domain(format!("{y} is outside [0,1)")));
    }
    let theta = contour_exploration(t);
    Ok(vertex_at_contour(t, &theta, y))
}

/// [`vertex_at`] with a precomputed contour.
pub fn vertex_at_contour(t: &LabeledTypedTree, theta: &[usize], y: f64) -> usize {
    let n = theta.len() - 1;
    let i = (snap(n as f64 * y).floor() as usize).min(n - 1);
    let (a, b) = (theta[i], theta[i + 1]);
    if t.depth(a) > t.depth(b) {
        a
    } else {
        b
    }
}

/// The time change `j(i) = 2i - h(v_i)` with `j(|t|) = 2|t|-2`, and
/// `phi(s) = sup{i : j(i) <= s(2|t|-2)} / |t|` sampled on the contour grid.
pub fn lex_time_change(t: &LabeledTypedTree) -> Result<(Vec<i64>, PathFunction)> {
    let (j, idx) = time_change_indices(t)?;
    let n = t.len() as f64;
    let phi = idx.iter().map(|&i| i as f64 / n).collect();
    Ok((j, PathFunction { values: phi }))
}

fn time_change_indices(t: &LabeledTypedTree) -> Result<(Vec<i64>, Vec<usize>)> {
    let n = t.len();
    if n < 2 {
        return Err(Error::Domain("time change needs a tree with an edge".into()));
    }
    let big_n = 2 * n - 2;
    let mut j: Vec<i64> = (0..n).map(|i| 2 * i as i64 - t.depth(i) as i64).collect();
    j.push(big_n as i64);
    let mut idx = Vec::with_capacity(big_n + 1);
    let mut i = 0usize;
    for k in 0..=big_n as i64 {
        while i < n && j[i + 1] <= k {
            i += 1;
        }
        idx.push(i);
    }
    Ok((j, idx))
}

/// Both sides of the three time-change inequalities for one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeChangeBounds {
    pub contour_gap: f64,
    pub contour_bound: f64,
    pub label_gap: f64,
    pub label_bound: f64,
    pub drift: f64,
    pub drift_bound: f64,
}

impl TimeChangeBounds {
    pub fn holds(&self) -> bool {
        let eps = 1e-9;
        self.contour_gap <= self.contour_bound + eps
            && self.label_gap <= self.label_bound + eps
            && self.drift <= self.drift_bound + eps
    }
}

/// Evaluates `sup|C - H∘φ|`, `sup|Z - S∘φ|` and `(2|t|-2) sup|φ(s) - s|`
/// exactly (φ is a step function, the other processes are linear between
/// grid points) together with their upper bounds.
pub fn time_change_bounds(t: &LabeledTypedTree) -> Result<TimeChangeBounds> {
    let n = t.len();
    let (_, idx) = time_change_indices(t)?;
    let theta = contour_exploration(t);
    let big_n = theta.len() - 1;
    let h_at = |i: usize| if i == n { 0.0 } else { t.depth(i) as f64 };
    let s_at = |i: usize| if i == n { 0 } else { t.label2(i) };
    let mut contour_gap = 0.0f64;
    let mut label_gap2 = 0i64;
    let mut drift = 0.0f64;
    for k in 0..big_n {
        let i = idx[k];
        for kk in [k, k + 1] {
            let v = theta[kk];
            contour_gap = contour_gap.max((t.depth(v) as f64 - h_at(i)).abs());
            label_gap2 = label_gap2.max((t.label2(v) - s_at(i)).abs());
            drift = drift.max((i as f64 / n as f64 - kk as f64 / big_n as f64).abs());
        }
    }
    let mut max_step = 0usize;
    for i in 0..n {
        max_step = max_step.max(t.dist(i, (i + 1) % n));
    }
    let alpha = 2 + max_step;
    Ok(TimeChangeBounds {
        contour_gap,
        contour_bound: alpha as f64,
        label_gap: label_gap2 as f64 / 2.0,
        label_bound: max_label_gap_within(t, alpha) as f64 / 2.0,
        drift: drift * big_n as f64,
        drift_bound: 4.0 + t.height() as f64,
    })
}

/// `max |ℓ(u) - ℓ(v)|` (doubled) over vertex pairs at tree distance at most
/// `radius`, by centroid decomposition.
pub fn max_label_gap_within(t: &LabeledTypedTree, radius: usize) -> i64 {
    let n = t.len();
    let nbrs = |v: usize| -> Vec<usize> {
        let mut out: Vec<usize> = t.kids(v).to_vec();
        if let Some(p) = t.parent(v) {
            out.push(p);
        }
        out
    };
    let mut removed = vec![false; n];
    let mut best = 0i64;
    let mut sub = vec![0usize; n];
    let mut pending = vec![0usize];
    while let Some(start) = pending.pop() {
        // Component traversal order with parents.
        let mut order = vec![(start, NONE)];
        let mut k = 0;
        while k < order.len() {
            let (v, p) = order[k];
            for w in nbrs(v) {
                if w != p && !removed[w] {
                    order.push((w, v));
                }
            }
            k += 1;
        }
        for &(v, _) in order.iter().rev() {
            sub[v] = 1;
        }
        for &(v, p) in order.iter().rev() {
            if p != NONE {
                sub[p] += sub[v];
            }
        }
        let total = order.len();
        let mut c = start;
        let mut prev = NONE;
        loop {
            let next = nbrs(c)
                .into_iter()
                .filter(|&w| !removed[w] && w != prev && sub[w] < sub[c] && sub[w] * 2 > total);
            match next.max_by_key(|&w| sub[w]) {
                Some(w) => {
                    prev = c;
                    c = w;
                }
                None => break,
            }
        }
        // Distances from the centroid within the radius.
        let mut max_at: Vec<i64> = Vec::new();
        let mut min_at: Vec<i64> = Vec::new();
        let mut frontier = vec![(c, NONE, 0usize)];
        while let Some((v, p, d)) = frontier.pop() {
            if max_at.len() <= d {
                max_at.resize(d + 1, i64::MIN);
                min_at.resize(d + 1, i64::MAX);
            }
            max_at[d] = max_at[d].max(t.label2(v));
            min_at[d] = min_at[d].min(t.label2(v));
            if d < radius {
                for w in nbrs(v) {
                    if w != p && !removed[w] {
                        frontier.push((w, v, d + 1));
                    }
                }
            }
        }
        let mut pref_min = min_at.clone();
        for d in 1..pref_min.len() {
            pref_min[d] = pref_min[d].min(pref_min[d - 1]);
        }
        for d in 0..max_at.len() {
            let other = (radius - d).min(pref_min.len() - 1);
            best = best.max(max_at[d] - pref_min[other]);
        }
        removed[c] = true;
        for w in nbrs(c) {
            if !removed[w] {
                pending.push(w);
            }
        }
    }
    best
}

/// A candidate tree-like path `(ζ, f)` with a comparison tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeLikePath {
    pub zeta: PathFunction,
    pub f: PathFunction,
    pub tolerance: f64,
}

/// True iff both paths vanish at the endpoints and, on every pair of points
/// of the merged grids, `Dist_ζ(x,y) <= tol` forces `|f(x) - f(y)| <= tol`.
pub fn check_tree_like(p: &TreeLikePath) -> bool {
    let tol = p.tolerance;
    let ends = [
        p.zeta.at_grid(0),
        p.zeta.at_grid(p.zeta.grid_size()),
        p.f.at_grid(0),
        p.f.at_grid(p.f.grid_size()),
    ];
    if ends.iter().any(|v| v.abs() > tol) {
        return false;
    }
    let mut pts: Vec<f64> = (0..=p.zeta.grid_size())
        .map(|i| i as f64 / p.zeta.grid_size() as f64)
        .chain((0..=p.f.grid_size()).map(|i| i as f64 / p.f.grid_size() as f64))
        .collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    let z: Vec<f64> = pts.iter().map(|&x| p.zeta.eval_unchecked(x)).collect();
    let f: Vec<f64> = pts.iter().map(|&x| p.f.eval_unchecked(x)).collect();
    for a in 0..pts.len() {
        let mut m = z[a];
        for b in a..pts.len() {
            m = m.min(z[b]);
            if z[a] + z[b] - 2.0 * m <= tol && (f[a] - f[b]).abs() > tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub fn path(d: (i64, i64)) -> LabeledTypedTree {
        LabeledTypedTree::new(vec![0, 0, 0], vec![1, 1, 0], vec![2 * d.0, 2 * d.1]).unwrap()
    }

    pub fn star(d: (i64, i64)) -> LabeledTypedTree {
        LabeledTypedTree::new(vec![0, 0, 0], vec![2, 0, 0], vec![2 * d.0, 2 * d.1]).unwrap()
    }

    fn grid(p: &PathFunction) -> Vec<f64> {
        p.values().to_vec()
    }

    /// Random plane tree from a random child-count sequence repaired by the
    /// cycle lemma; displacements uniform in `[-3, 3]`.
    pub fn arb_tree(max: usize) -> impl Strategy<Value = LabeledTypedTree> {
        (1..=max).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..4, n),
                proptest::collection::vec(-3i64..=3, n),
                proptest::collection::vec(0u8..3, n),
            )
                .prop_map(move |(raw, d, ty)| {
                    // Turn raw counts into a valid Lukasiewicz word.
                    let mut counts = vec![0usize; n];
                    let mut budget = n - 1;
                    for (i, &r) in raw.iter().enumerate() {
                        let c = r.min(budget);
                        counts[i] = c;
                        budget -= c;
                    }
                    counts[0] += budget;
                    let mut s: i64 = 0;
                    let mut low = 0i64;
                    let mut shift = 0usize;
                    for (i, &c) in counts.iter().enumerate() {
                        s += c as i64 - 1;
                        if s < low {
                            low = s;
                            shift = i + 1;
                        }
                    }
                    counts.rotate_left(shift % n);
                    LabeledTypedTree::new(ty, counts, d[1..].to_vec()).unwrap()
                })
        })
    }

    fn bfs_dist(t: &LabeledTypedTree, s: usize) -> Vec<usize> {
        let mut d = vec![usize::MAX; t.len()];
        d[s] = 0;
        let mut q = std::collections::VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            let mut nb: Vec<usize> = t.kids(v).to_vec();
            nb.extend(t.parent(v));
            for w in nb {
                if d[w] == usize::MAX {
                    d[w] = d[v] + 1;
                    q.push_back(w);
                }
            }
        }
        d
    }

    #[test]
    fn contour_examples() {
        assert_eq!(contour_addresses(&LabeledTypedTree::single(0)), vec![Vec::<u32>::new()]);
        assert_eq!(
            contour_addresses(&path((1, -2))),
            vec![vec![], vec![1], vec![1, 1], vec![1], vec![]]
        );
        assert_eq!(
            contour_addresses(&star((5, 5))),
            vec![vec![], vec![1], vec![], vec![2], vec![]]
        );
    }

    #[test]
    fn contour_and_label_examples() {
        let t = path((1, -2));
        assert_eq!(grid(&contour_process(&t)), vec![0.0, 1.0, 2.0, 1.0, 0.0]);
        assert_eq!(grid(&label_process(&t)), vec![0.0, 1.0, -1.0, 1.0, 0.0]);
        let one = LabeledTypedTree::single(0);
        assert_eq!(contour_process(&one).eval(0.4).unwrap(), 0.0);
        assert_eq!(label_process(&one).eval(0.9).unwrap(), 0.0);
        assert_eq!(grid(&label_process(&star((5, 5)))), vec![0.0, 5.0, 0.0, 5.0, 0.0]);
    }

    #[test]
    fn height_lex_examples() {
        let (h, s) = height_lex_processes(&path((1, -2)));
        assert_eq!(grid(&h), vec![0.0, 1.0, 2.0, 0.0]);
        assert_eq!(grid(&s), vec![0.0, 1.0, -1.0, 0.0]);
        let (h, s) = height_lex_processes(&LabeledTypedTree::single(0));
        assert_eq!(grid(&h), vec![0.0, 0.0]);
        assert_eq!(grid(&s), vec![0.0, 0.0]);
        assert_eq!(grid(&height_lex_processes(&star((5, 7))).1), vec![0.0, 5.0, 7.0, 0.0]);
    }

    #[test]
    fn type_count_examples() {
        let t = path((1, -2));
        assert_eq!(grid(&type_count_process(&t, 0)), vec![0.0, 1.0, 2.0, 3.0, 3.0]);
        assert_eq!(grid(&type_count_process(&t, 1)), vec![0.0; 5]);
        let s = LabeledTypedTree::new(vec![1, 0, 0], vec![2, 0, 0], vec![0, 0]).unwrap();
        assert_eq!(grid(&type_count_process(&s, 1)), vec![0.0, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn dist_on_contour_examples() {
        let c = contour_process(&path((1, -2)));
        assert_eq!(dist_on_contour(&c, 0.25, 0.75).unwrap(), 0.0);
        assert_eq!(dist_on_contour(&c, 0.3, 0.3).unwrap(), 0.0);
        assert_eq!(dist_on_contour(&c, 0.5, 1.0).unwrap(), 2.0);
        assert!(matches!(dist_on_contour(&c, -0.1, 0.5), Err(Error::Domain(_))));
        assert!(dist_on_contour(&c, 0.5, 1.5).is_err());
    }

    #[test]
    fn vertex_at_examples() {
        let t = path((1, -2));
        assert_eq!(t.address(vertex_at(&t, 0.3).unwrap()), vec![1, 1]);
        assert_eq!(t.address(vertex_at(&t, 0.0).unwrap()), vec![1]);
        let s = star((0, 0));
        assert_eq!(s.address(vertex_at(&s, 0.6).unwrap()), vec![2]);
        assert!(vertex_at(&LabeledTypedTree::single(0), 0.5).is_err());
        assert!(vertex_at(&t, 1.0).is_err());
    }

    #[test]
    fn lex_time_change_examples() {
        assert_eq!(lex_time_change(&path((0, 0))).unwrap().0, vec![0, 1, 2, 4]);
        assert_eq!(lex_time_change(&star((0, 0))).unwrap().0, vec![0, 1, 3, 4]);
        assert!(lex_time_change(&LabeledTypedTree::single(0)).is_err());
        let (_, phi) = lex_time_change(&path((0, 0))).unwrap();
        assert_eq!(phi.values(), &[0.0, 1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0]);
    }

    #[test]
    fn tree_like_examples() {
        let t = path((1, -2));
        let p = TreeLikePath {
            zeta: contour_process(&t),
            f: label_process(&t),
            tolerance: 0.0,
        };
        assert!(check_tree_like(&p));
        let bad = TreeLikePath {
            zeta: contour_process(&t),
            f: PathFunction::new(vec![0.0, 0.0, 0.5, 1.0, 0.0]).unwrap(),
            tolerance: 0.0,
        };
        assert!(!check_tree_like(&bad));
        let zero = TreeLikePath {
            zeta: PathFunction::zero(),
            f: PathFunction::zero(),
            tolerance: 0.0,
        };
        assert!(check_tree_like(&zero));
    }

    #[test]
    fn json_roundtrip_and_errors() {
        let t = path((1, -2));
        let s = t.to_json_string();
        assert_eq!(s, r#"{"types":[0,0,0],"children":[1,1,0],"disp2":[2,-4]}"#);
        assert_eq!(LabeledTypedTree::from_json_str(&s).unwrap(), t);
        assert!(LabeledTypedTree::new(vec![0, 0], vec![0, 0], vec![0]).is_err());
        assert!(LabeledTypedTree::new(vec![0, 0], vec![2, 0], vec![0]).is_err());
        assert!(LabeledTypedTree::new(vec![0], vec![0], vec![1]).is_err());
    }

    #[test]
    fn addresses_roundtrip() {
        let t = LabeledTypedTree::new(vec![0; 4], vec![2, 0, 1, 0], vec![0; 3]).unwrap();
        for v in 0..t.len() {
            assert_eq!(t.vertex_of(&t.address(v)), Some(v));
        }
        assert_eq!(t.vertex_of(&[3]), None);
        assert_eq!(format_address(&t.address(3)), "2.1");
        assert_eq!(format_address(&[]), "∅");
    }

    #[test]
    fn path_function_interpolation_and_extrema() {
        let f = PathFunction::new(vec![0.0, 2.0, -1.0, 1.0, 0.0]).unwrap();
        assert_eq!(f.eval(0.125).unwrap(), 1.0);
        assert_eq!(f.inf_on(0.1, 0.6).unwrap(), -1.0);
        assert_eq!(f.inf_on(0.6, 0.7).unwrap(), f.eval(0.6).unwrap());
        assert_eq!(f.sup_on(0.0, 1.0).unwrap(), 2.0);
        assert!(f.to_csv().starts_with("s,value\n0,0\n0.25,2\n"));
    }

    #[test]
    fn label_gap_small_case() {
        let t = path((1, -2));
        assert_eq!(max_label_gap_within(&t, 0), 0);
        assert_eq!(max_label_gap_within(&t, 1), 4);
        assert_eq!(max_label_gap_within(&t, 2), 4);
    }

    proptest! {
        #[test]
        fn contour_closure(t in arb_tree(30)) {
            let th = contour_exploration(&t);
            prop_assert_eq!(th.len(), 2 * t.len() - 1);
            prop_assert_eq!(th[0], 0);
            prop_assert_eq!(*th.last().unwrap(), 0);
            for w in th.windows(2) {
                prop_assert_eq!(t.dist(w[0], w[1]), 1);
            }
        }

        #[test]
        fn grid_identity(t in arb_tree(12)) {
            prop_assume!(t.len() >= 2);
            let c = contour_process(&t);
            let th = contour_exploration(&t);
            let n = c.grid_size() as f64;
            for i in 0..th.len() {
                let d = bfs_dist(&t, th[i]);
                for j in 0..th.len() {
                    let dc = dist_on_contour(&c, i as f64 / n, j as f64 / n).unwrap();
                    prop_assert_eq!(dc, d[th[j]] as f64);
                }
            }
        }

        #[test]
        fn type_counts_total(t in arb_tree(12)) {
            prop_assume!(t.len() >= 2);
            let total: f64 = (0..3u8).map(|q| type_count_process(&t, q).eval(1.0).unwrap()).sum();
            prop_assert_eq!(total, t.len() as f64);
        }

        #[test]
        fn label_gap_matches_brute_force(t in arb_tree(25), r in 0usize..6) {
            let mut best = 0;
            for u in 0..t.len() {
                for v in 0..t.len() {
                    if t.dist(u, v) <= r {
                        best = best.max((t.label2(u) - t.label2(v)).abs());
                    }
                }
            }
            prop_assert_eq!(max_label_gap_within(&t, r), best);
        }

        #[test]
        fn time_change_bounds_hold(t in arb_tree(60)) {
            prop_assume!(t.len() >= 2);
            let b = time_change_bounds(&t).unwrap();
            prop_assert!(b.holds(), "{:?}", b);
        }

        #[test]
        fn contour_is_tree_like(t in arb_tree(15)) {
            prop_assume!(t.len() >= 2);
            let p = TreeLikePath { zeta: contour_process(&t), f: label_process(&t), tolerance: 0.0 };
            prop_assert!(check_tree_like(&p));
        }
    }
}
