//! Rooted pointed planar maps as rotation systems, Boltzmann weights,
//! exhaustive enumeration of small maps and the BDG bijection with mobiles.
//!
//! Half-edge `h` sits at vertex `vertex(h)` and points to `vertex(alpha(h))`;
//! `sigma(h)` is the next half-edge counterclockwise around the same vertex.
//! Faces are the orbits of `sigma . alpha`, each face lying to the right of
//! its half-edges.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::mobile::{admissible_list, check_mobile, ConditionedSampler};
use crate::tree_core::{contour_exploration, LabeledTypedTree, Type};

/// Face weights `q_j`, finitely supported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightSeq {
    q: BTreeMap<usize, f64>,
}

impl WeightSeq {
    pub fn new(q: BTreeMap<usize, f64>) -> Result<Self> {
        if let Some((j, w)) = q.iter().find(|(&j, &w)| j == 0 || !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParams(format!("bad weight q_{j} = {w}")));
        }
        Ok(Self {
            q: q.into_iter().filter(|&(_, w)| w > 0.0).collect(),
        })
    }

    /// Weight concentrated on one degree.
    pub fn single(degree: usize, w: f64) -> Self {
        Self::new(BTreeMap::from([(degree, w)])).expect("valid weight")
    }

    /// Parses `{"5": 1.0}`.
    pub fn from_json(s: &str) -> Result<Self> {
        let raw: BTreeMap<String, f64> =
            serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let mut q = BTreeMap::new();
        for (k, w) in raw {
            let j: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("degree {k:?} is not an integer")))?;
            q.insert(j, w);
        }
        Self::new(q)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.q).expect("serializable")
    }

    pub fn get(&self, j: usize) -> f64 {
        self.q.get(&j).copied().unwrap_or(0.0)
    }

    /// Degrees with positive weight.
    pub fn support(&self) -> Vec<usize> {
        self.q.keys().copied().collect()
    }

    pub fn max_degree(&self) -> usize {
        self.q.keys().copied().max().unwrap_or(0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            q: self.q.iter().map(|(&j, &w)| (j, w * c)).collect(),
        }
    }

    /// The degree, if the support is a single degree.
    pub fn single_degree(&self) -> Option<usize> {
        (self.q.len() == 1).then(|| *self.q.keys().next().unwrap())
    }

    /// Some odd `p >= 3` carries positive weight.
    pub fn has_odd_face(&self) -> bool {
        self.q.keys().any(|&j| j >= 3 && j % 2 == 1)
    }
}

/// Position of the root edge relative to the pointed vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Null,
    Minus,
}

impl Sign {
    pub fn negate(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
            Sign::Null => Sign::Null,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "plus",
            Sign::Null => "null",
            Sign::Minus => "minus",
        })
    }
}

impl FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" | "+" | "positive" => Ok(Sign::Plus),
            "null" | "0" | "zero" => Ok(Sign::Null),
            "minus" | "-" | "negative" => Ok(Sign::Minus),
            _ => Err(Error::Parse(format!("unknown sign {s:?}"))),
        }
    }
}

/// Rooted, optionally pointed, planar map. The vertex map has no half-edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HalfEdgeMap {
    alpha: Vec<usize>,
    sigma: Vec<usize>,
    root: Option<usize>,
    point: Option<usize>,
    vertex: Vec<usize>,
    n_vertices: usize,
}

impl HalfEdgeMap {
    /// Validates the involution, connectivity and the Euler formula.
    /// `point` is a vertex id as numbered by [`HalfEdgeMap::vertex`].
    pub fn new(alpha: Vec<usize>, sigma: Vec<usize>, root: usize, point: Option<usize>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 || n % 2 == 1 || sigma.len() != n {
            return Err(Error::InvalidMap(format!("{n} half-edges with {} rotations", sigma.len())));
        }
        if root >= n {
            return Err(Error::InvalidMap(format!("root {root} out of range")));
        }
        for h in 0..n {
            if alpha[h] >= n || alpha[h] == h || alpha[alpha[h]] != h {
                return Err(Error::InvalidMap(format!("alpha is not a fixed-point-free involution at {h}")));
            }
        }
        let mut seen = vec![false; n];
        for &s in &sigma {
            if s >= n || std::mem::replace(&mut seen[s], true) {
                return Err(Error::InvalidMap("sigma is not a permutation".into()));
            }
        }
        let (vertex, n_vertices) = orbits(&sigma, |h| sigma[h]);
        let mut m = Self {
            alpha,
            sigma,
            root: Some(root),
            point: None,
            vertex,
            n_vertices,
        };
        m.check_connected()?;
        let f = m.n_faces();
        if m.n_vertices + f != m.n_edges() + 2 {
            return Err(Error::InvalidMap(format!(
                "not planar: V={} E={} F={f}",
                m.n_vertices,
                m.n_edges()
            )));
        }
        m.set_point(point)?;
        Ok(m)
    }

    /// The vertex map: one vertex, no edge, a face of degree 0.
    pub fn vertex_map(point: bool) -> Self {
        Self {
            alpha: Vec::new(),
            sigma: Vec::new(),
            root: None,
            point: point.then_some(0),
            vertex: Vec::new(),
            n_vertices: 1,
        }
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.alpha.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(h) = stack.pop() {
            for g in [self.alpha[h], self.sigma[h]] {
                if !seen[g] {
                    seen[g] = true;
                    count += 1;
                    stack.push(g);
                }
            }
        }
        if count != n {
            return Err(Error::InvalidMap("not connected".into()));
        }
        Ok(())
    }

    fn set_point(&mut self, point: Option<usize>) -> Result<()> {
        if let Some(p) = point {
            if p >= self.n_vertices {
                return Err(Error::InvalidMap(format!("pointed vertex {p} out of range")));
            }
        }
        self.point = point;
        Ok(())
    }

    /// Same map pointed at `p` (or unpointed).
    pub fn with_point(&self, p: Option<usize>) -> Result<Self> {
        let mut m = self.clone();
        m.set_point(p)?;
        Ok(m)
    }

    pub fn is_vertex_map(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn n_half_edges(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_edges(&self) -> usize {
        self.alpha.len() / 2
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_faces(&self) -> usize {
        if self.is_vertex_map() {
            1
        } else {
            orbits(&self.alpha, |h| self.phi(h)).1
        }
    }

    pub fn alpha(&self, h: usize) -> usize {
        self.alpha[h]
    }

    pub fn sigma(&self, h: usize) -> usize {
        self.sigma[h]
    }

    /// Face permutation `sigma . alpha`.
    pub fn phi(&self, h: usize) -> usize {
        self.sigma[self.alpha[h]]
    }

    /// Vertex id of a half-edge; ids follow the smallest half-edge of each orbit.
    pub fn vertex(&self, h: usize) -> usize {
        self.vertex[h]
    }

    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn point(&self) -> Option<usize> {
        self.point
    }

    /// Tail `e-` of the root edge (vertex 0 for the vertex map).
    pub fn root_tail(&self) -> usize {
        self.root.map_or(0, |r| self.vertex[r])
    }

    /// Head `e+` of the root edge (vertex 0 for the vertex map).
    pub fn root_head(&self) -> usize {
        self.root.map_or(0, |r| self.vertex[self.alpha[r]])
    }

    /// Face orbits, each starting at its smallest half-edge.
    pub fn faces(&self) -> Vec<Vec<usize>> {
        let n = self.alpha.len();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for h in 0..n {
            if seen[h] {
                continue;
            }
            let mut f = Vec::new();
            let mut g = h;
            while !seen[g] {
                seen[g] = true;
                f.push(g);
                g = self.phi(g);
            }
            out.push(f);
        }
        out
    }

    /// Sorted face degrees; `[0]` for the vertex map.
    pub fn face_degrees(&self) -> Vec<usize> {
        if self.is_vertex_map() {
            return vec![0];
        }
        let mut d: Vec<usize> = self.faces().iter().map(Vec::len).collect();
        d.sort_unstable();
        d
    }

    /// Half-edges at each vertex in counterclockwise order.
    pub fn rotations(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices];
        let mut seen = vec![false; self.alpha.len()];
        for h in 0..self.alpha.len() {
            if seen[h] {
                continue;
            }
            let v = self.vertex[h];
            let mut g = h;
            while !seen[g] {
                seen[g] = true;
                out[v].push(g);
                g = self.sigma[g];
            }
        }
        out
    }

    /// Graph distances from vertex `v`.
    pub fn bfs_distance(&self, v: usize) -> Vec<usize> {
        let rot = self.rotations();
        let mut d = vec![usize::MAX; self.n_vertices];
        d[v] = 0;
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            for &h in &rot[u] {
                let w = self.vertex[self.alpha[h]];
                if d[w] == usize::MAX {
                    d[w] = d[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        d
    }

    /// Sign of the root edge with respect to the pointed vertex.
    pub fn classify_sign(&self) -> Result<Sign> {
        let p = self
            .point
            .ok_or_else(|| Error::InvalidMap("map is not pointed".into()))?;
        let Some(r) = self.root else {
            return Ok(Sign::Plus);
        };
        let d = self.bfs_distance(p);
        let (a, b) = (d[self.vertex[r]], d[self.vertex[self.alpha[r]]]);
        Ok(match a.cmp(&b) {
            std::cmp::Ordering::Less => Sign::Plus,
            std::cmp::Ordering::Equal => Sign::Null,
            std::cmp::Ordering::Greater => Sign::Minus,
        })
    }

    /// Same map with the root edge oriented the other way.
    pub fn reverse_root(&self) -> Result<Self> {
        let r = self.root.ok_or(Error::VertexMap)?;
        let mut m = self.clone();
        m.root = Some(self.alpha[r]);
        Ok(m)
    }

    /// Product of `q_deg(f)` over faces; 1 for the vertex map.
    pub fn boltzmann_weight(&self, q: &WeightSeq) -> f64 {
        if self.is_vertex_map() {
            return 1.0;
        }
        self.faces().iter().map(|f| q.get(f.len())).product()
    }

    /// Breadth-first relabeling from `root`: position `i` holds the new ids
    /// of `alpha` and `sigma` of the `i`-th discovered half-edge.
    fn code_from(&self, root: usize) -> (Vec<usize>, Vec<u32>) {
        let n = self.alpha.len();
        let mut label = vec![u32::MAX; n];
        let mut order = Vec::with_capacity(n);
        label[root] = 0;
        order.push(root);
        let mut i = 0;
        while i < order.len() {
            let h = order[i];
            i += 1;
            for g in [self.alpha[h], self.sigma[h]] {
                if label[g] == u32::MAX {
                    label[g] = order.len() as u32;
                    order.push(g);
                }
            }
        }
        let mut code = Vec::with_capacity(2 * n + 1);
        for &h in &order {
            code.push(label[self.alpha[h]]);
            code.push(label[self.sigma[h]]);
        }
        (order, code)
    }

    /// Canonical code of the rooted pointed map; equal codes mean isomorphic maps.
    pub fn canonical_code(&self) -> Vec<u32> {
        let Some(r) = self.root else {
            return vec![u32::MAX, self.point.map_or(u32::MAX, |p| p as u32)];
        };
        let (order, mut code) = self.code_from(r);
        let p = match self.point {
            Some(p) => order.iter().position(|&h| self.vertex[h] == p).unwrap() as u32,
            None => u32::MAX,
        };
        code.push(p);
        code
    }

    /// Relabels half-edges in breadth-first order from the root (root becomes 0).
    pub fn canonical(&self) -> Self {
        let Some(r) = self.root else {
            return self.clone();
        };
        let (order, _) = self.code_from(r);
        let mut new_id = vec![0; order.len()];
        for (i, &h) in order.iter().enumerate() {
            new_id[h] = i;
        }
        let alpha = order.iter().map(|&h| new_id[self.alpha[h]]).collect();
        let sigma = order.iter().map(|&h| new_id[self.sigma[h]]).collect();
        let mut m = Self::new(alpha, sigma, 0, None).expect("relabeling preserves validity");
        if let Some(p) = self.point {
            let h = order.iter().position(|&h| self.vertex[h] == p).unwrap();
            m.point = Some(m.vertex[h]);
        }
        m
    }

    /// Line-based text form: `E`, `alpha`, `rot`, `root`, `point` lines.
    pub fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        format!(
            "E {}\nalpha {}\nrot {}\nroot {}\npoint {}\n",
            self.n_edges(),
            join(&self.alpha),
            join(&self.sigma),
            self.root.map_or(-1, |r| r as i64),
            self.point.map_or(-1, |p| p as i64)
        )
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut fields: HashMap<&str, Vec<i64>> = HashMap::new();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            let vals = it
                .map(|x| x.parse::<i64>().map_err(|_| Error::Parse(format!("bad integer {x:?}"))))
                .collect::<Result<Vec<_>>>()?;
            fields.insert(key, vals);
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| Error::Parse(format!("missing {k} line")));
        let e = *get("E")?.first().ok_or_else(|| Error::Parse("empty E line".into()))?;
        let to_usize = |v: &[i64]| -> Result<Vec<usize>> {
            v.iter()
                .map(|&x| usize::try_from(x).map_err(|_| Error::Parse(format!("negative index {x}"))))
                .collect()
        };
        let alpha = to_usize(get("alpha")?)?;
        let sigma = to_usize(get("rot")?)?;
        let root = get("root")?.first().copied().unwrap_or(-1);
        let point = get("point")?.first().copied().unwrap_or(-1);
        let point = (point >= 0).then_some(point as usize);
        if e == 0 {
            if !alpha.is_empty() || root >= 0 || point.is_some_and(|p| p > 0) {
                return Err(Error::Parse("vertex map must have no half-edges".into()));
            }
            return Ok(Self::vertex_map(point.is_some()));
        }
        if alpha.len() != 2 * e as usize {
            return Err(Error::Parse(format!("E {e} but {} alpha entries", alpha.len())));
        }
        if root < 0 {
            return Err(Error::Parse("missing root half-edge".into()));
        }
        Self::new(alpha, sigma, root as usize, point)
    }

    /// Inserts a new edge from the corner after `h1` to the corner after `h2`
    /// (corners are counterclockwise successors of a half-edge). Both corners
    /// must lie in one face; the new half-edge at `h1` becomes the root.
    fn insert_edge(&self, h1: usize, h2: usize) -> Self {
        let n = self.alpha.len();
        let (a, b) = (n, n + 1);
        let mut alpha = self.alpha.clone();
        let mut sigma = self.sigma.clone();
        alpha.extend([b, a]);
        sigma.extend([0, 0]);
        if h1 == h2 {
            let next = sigma[h1];
            sigma[h1] = a;
            sigma[a] = b;
            sigma[b] = next;
        } else {
            let n1 = sigma[h1];
            sigma[h1] = a;
            sigma[a] = n1;
            let n2 = sigma[h2];
            sigma[h2] = b;
            sigma[b] = n2;
        }
        Self::new(alpha, sigma, a, None).expect("edge inserted in one face")
    }

    /// Attaches a pendant edge to a new vertex in the corner after `h`.
    fn insert_leaf(&self, h: Option<usize>) -> Self {
        let n = self.alpha.len();
        let (a, b) = (n, n + 1);
        let mut alpha = self.alpha.clone();
        let mut sigma = self.sigma.clone();
        alpha.extend([b, a]);
        sigma.extend([a, b]);
        if let Some(h) = h {
            let next = sigma[h];
            sigma[h] = a;
            sigma[a] = next;
        }
        Self::new(alpha, sigma, a, None).expect("leaf attachment")
    }

    /// Face orbit index of every half-edge.
    fn face_index(&self) -> Vec<usize> {
        orbits(&self.alpha, |h| self.phi(h)).0
    }
}

/// Orbit index of each element under `next`, numbered by smallest member.
fn orbits(domain: &[usize], next: impl Fn(usize) -> usize) -> (Vec<usize>, usize) {
    let n = domain.len();
    let mut id = vec![usize::MAX; n];
    let mut k = 0;
    for h in 0..n {
        if id[h] != usize::MAX {
            continue;
        }
        let mut g = h;
        while id[g] == usize::MAX {
            id[g] = k;
            g = next(g);
        }
        k += 1;
    }
    (id, k)
}

/// Rooted unpointed maps with exactly `edges` edges, one per isomorphism class.
fn rooted_maps_with_edges(edges: usize, cap: usize) -> Result<Vec<HalfEdgeMap>> {
    if edges == 0 {
        return Ok(vec![HalfEdgeMap::vertex_map(false)]);
    }
    // Unrooted classes keyed by their smallest rooted code.
    let mut level: BTreeMap<Vec<u32>, HalfEdgeMap> = BTreeMap::new();
    let loop_map = HalfEdgeMap::new(vec![1, 0], vec![1, 0], 0, None)?;
    let bridge = HalfEdgeMap::new(vec![1, 0], vec![0, 1], 0, None)?;
    for m in [loop_map, bridge] {
        level.insert(unrooted_key(&m), m);
    }
    for _ in 1..edges {
        let mut next: BTreeMap<Vec<u32>, HalfEdgeMap> = BTreeMap::new();
        for m in level.values() {
            let n = m.n_half_edges();
            let face = m.face_index();
            let mut push = |g: HalfEdgeMap| -> Result<()> {
                next.entry(unrooted_key(&g)).or_insert(g);
                if next.len() > cap {
                    return Err(Error::CapExceeded(next.len()));
                }
                Ok(())
            };
            for h1 in 0..n {
                push(m.insert_leaf(Some(h1)))?;
                for h2 in h1..n {
                    if face[m.sigma[h1]] == face[m.sigma[h2]] {
                        push(m.insert_edge(h1, h2))?;
                    }
                }
            }
        }
        level = next;
    }
    let mut out = Vec::new();
    for m in level.values() {
        let mut codes = BTreeSet::new();
        for r in 0..m.n_half_edges() {
            let mut g = m.clone();
            g.root = Some(r);
            if codes.insert(g.canonical_code()) {
                out.push(g.canonical());
            }
        }
    }
    if out.len() > cap {
        return Err(Error::CapExceeded(out.len()));
    }
    Ok(out)
}

fn unrooted_key(m: &HalfEdgeMap) -> Vec<u32> {
    (0..m.n_half_edges()).map(|r| m.code_from(r).1).min().unwrap()
}

/// All rooted maps with at most `max_edges` edges whose sorted face degrees
/// pass `filter`, up to root-preserving isomorphism. The vertex map has face
/// degrees `[0]`.
pub fn enumerate_maps(max_edges: usize, filter: impl Fn(&[usize]) -> bool) -> Result<Vec<HalfEdgeMap>> {
    if max_edges > 6 {
        return Err(Error::Domain(format!("max_edges {max_edges} > 6")));
    }
    let mut out = Vec::new();
    for e in 0..=max_edges {
        for m in rooted_maps_with_edges(e, 1_000_000)? {
            if filter(&m.face_degrees()) {
                out.push(m);
            }
        }
    }
    Ok(out)
}

/// Every pointing of a rooted map.
pub fn pointed_variants(m: &HalfEdgeMap) -> Vec<HalfEdgeMap> {
    (0..m.n_vertices())
        .map(|p| m.with_point(Some(p)).expect("vertex in range"))
        .collect()
}

/// Filter accepting maps whose faces all have degrees in `degrees`
/// (the vertex map always passes).
pub fn degrees_in(degrees: &[usize]) -> impl Fn(&[usize]) -> bool + '_ {
    move |d: &[usize]| d == [0] || d.iter().all(|x| degrees.contains(x))
}

/// A map together with its mobile and the correspondence between type-1
/// mobile vertices and map vertices.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub map: HalfEdgeMap,
    pub mobile: LabeledTypedTree,
    /// Map vertex of each mobile vertex of type 1.
    pub node_vertex: Vec<Option<usize>>,
}

/// Item of a face of the map with flags inserted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Item {
    /// Corner of `vertex(h)` preceding `h` counterclockwise.
    Corner(usize),
    /// Flag on the edge of `h`, seen from the face of `h`.
    Flag(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Node {
    Vertex(usize),
    Flag(usize),
    Face(usize),
}

/// The BDG mobile of a positive or null pointed rooted map.
pub fn bdg_forward(m: &HalfEdgeMap) -> Result<Encoded> {
    let p = m.point.ok_or_else(|| Error::InvalidMap("map is not pointed".into()))?;
    let sign = m.classify_sign()?;
    if sign == Sign::Minus {
        return Err(Error::NegativeMap);
    }
    if m.is_vertex_map() {
        return Ok(Encoded {
            map: m.clone(),
            mobile: LabeledTypedTree::single(1),
            node_vertex: vec![Some(0)],
        });
    }
    let dist = m.bfs_distance(p);
    let lab = |v: usize| 2 * dist[v] as i64;
    let edge_flag = |h: usize| dist[m.vertex[h]] == dist[m.vertex[m.alpha[h]]];

    // Faces of M' as item cycles, with doubled labels and firing flags.
    let faces = m.faces();
    let mut face_of_item: HashMap<Item, (usize, usize)> = HashMap::new();
    let mut items: Vec<Vec<Item>> = Vec::with_capacity(faces.len());
    for (fi, f) in faces.iter().enumerate() {
        let mut seq = Vec::new();
        for &h in f {
            seq.push(Item::Corner(h));
            if edge_flag(h) {
                seq.push(Item::Flag(h));
            }
        }
        for (i, &it) in seq.iter().enumerate() {
            face_of_item.insert(it, (fi, i));
        }
        items.push(seq);
    }
    let item_label = |it: Item| match it {
        Item::Corner(h) => lab(m.vertex[h]),
        Item::Flag(h) => lab(m.vertex[h]) + 1,
    };
    let fires = |it: Item| {
        let (f, i) = face_of_item[&it];
        let seq = &items[f];
        item_label(seq[(i + 1) % seq.len()]) < item_label(it)
    };
    let edge_id = |h: usize| h.min(m.alpha[h]);

    let root = m.root.unwrap();
    let (root_node, base) = match sign {
        Sign::Plus => (Node::Vertex(m.vertex[m.alpha[root]]), lab(m.vertex[m.alpha[root]])),
        _ => (Node::Flag(edge_id(root)), lab(m.vertex[root]) + 1),
    };

    // Depth-first construction of the child lists.
    let mut nodes: Vec<Node> = vec![root_node];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new()];
    let mut seen: HashSet<Node> = HashSet::from([root_node]);
    let mut stack: Vec<(usize, Option<Item>)> = vec![(0, None)];
    while let Some((idx, via)) = stack.pop() {
        let node = nodes[idx];
        let mut children: Vec<(Node, Item)> = Vec::new();
        match node {
            Node::Vertex(v) => {
                // Corners in clockwise order, starting after the parent corner.
                let start = match via {
                    Some(Item::Corner(h)) => h,
                    None => m.alpha[root],
                    _ => unreachable!(),
                };
                let mut hs = vec![start];
                let mut g = inverse_sigma(m, start);
                while g != start {
                    hs.push(g);
                    g = inverse_sigma(m, g);
                }
                let skip = usize::from(via.is_some());
                for &h in &hs[skip..] {
                    debug_assert_eq!(m.vertex[h], v);
                    let it = Item::Corner(h);
                    if fires(it) {
                        children.push((Node::Face(face_of_item[&it].0), it));
                    }
                }
            }
            Node::Flag(_) => match via {
                Some(Item::Flag(h)) => {
                    let it = Item::Flag(m.alpha[h]);
                    children.push((Node::Face(face_of_item[&it].0), it));
                }
                None => {
                    for h in [m.alpha[root], root] {
                        let it = Item::Flag(h);
                        children.push((Node::Face(face_of_item[&it].0), it));
                    }
                }
                _ => unreachable!(),
            },
            Node::Face(f) => {
                let seq = &items[f];
                let (_, i0) = face_of_item[&via.unwrap()];
                for step in 1..seq.len() {
                    let it = seq[(i0 + step) % seq.len()];
                    if fires(it) {
                        let child = match it {
                            Item::Corner(h) => Node::Vertex(m.vertex[h]),
                            Item::Flag(h) => Node::Flag(edge_id(h)),
                        };
                        children.push((child, it));
                    }
                }
            }
        }
        let mut ids = Vec::with_capacity(children.len());
        for (child, it) in children {
            if !seen.insert(child) {
                return Err(Error::InvalidMap(format!("construction revisits {child:?}")));
            }
            nodes.push(child);
            kids.push(Vec::new());
            ids.push(nodes.len() - 1);
            stack.push((nodes.len() - 1, Some(it)));
        }
        kids[idx] = ids;
    }

    let types: Vec<Type> = (0..nodes.len())
        .map(|i| match nodes[i] {
            Node::Vertex(_) => 1,
            Node::Flag(_) => 2,
            Node::Face(_) => 0,
        })
        .collect();
    let mut full_types = types.clone();
    for (i, ks) in kids.iter().enumerate() {
        for &c in ks {
            if types[c] == 0 {
                full_types[c] = if types[i] == 1 { 3 } else { 4 };
            }
        }
    }
    let node_label = |i: usize, parent_label: i64| match nodes[i] {
        Node::Vertex(v) => lab(v) - base,
        Node::Flag(e) => lab(m.vertex[e]) + 1 - base,
        Node::Face(_) => parent_label,
    };
    let mut labels = vec![0i64; nodes.len()];
    let mut disp2 = vec![0i64; nodes.len()];
    labels[0] = node_label(0, 0);
    let mut order = vec![0];
    while let Some(i) = order.pop() {
        for &c in &kids[i] {
            labels[c] = node_label(c, labels[i]);
            disp2[c] = labels[c] - labels[i];
            order.push(c);
        }
    }
    let (tree, new_to_old) = LabeledTypedTree::from_child_lists(0, &kids, &full_types, &disp2);
    let node_vertex = new_to_old
        .iter()
        .map(|&i| match nodes[i] {
            Node::Vertex(v) => Some(v),
            _ => None,
        })
        .collect();
    let expected = (m.n_vertices() - 1) + m.n_faces() + (0..m.n_half_edges()).filter(|&h| h < m.alpha[h] && edge_flag(h)).count();
    if tree.len() != expected {
        return Err(Error::InvalidMap(format!("mobile has {} vertices, expected {expected}", tree.len())));
    }
    Ok(Encoded {
        map: m.clone(),
        mobile: tree,
        node_vertex,
    })
}

fn inverse_sigma(m: &HalfEdgeMap, h: usize) -> usize {
    let mut g = h;
    loop {
        let n = m.sigma[g];
        if n == h {
            return g;
        }
        g = n;
    }
}

/// Rebuilds the pointed rooted map of a mobile (root type 1 for `Plus`,
/// type 2 for `Null`) by the successor rule: every corner of a type-1 or
/// type-2 vertex is joined to the next type-1 corner along the contour with
/// the next smaller label, or to the pointed vertex.
pub fn bdg_inverse(t: &LabeledTypedTree, sign: Sign) -> Result<Encoded> {
    check_mobile(t)?;
    let want_root = match sign {
        Sign::Plus => 1,
        Sign::Null => 2,
        Sign::Minus => return Err(Error::Domain("invert the positive mobile and reverse the root".into())),
    };
    if t.ty(0) != want_root {
        return Err(Error::InvalidMobile(format!("root type {} for sign {sign}", t.ty(0))));
    }
    if t.len() == 1 {
        return Ok(Encoded {
            map: HalfEdgeMap::vertex_map(true),
            mobile: t.clone(),
            node_vertex: vec![Some(0)],
        });
    }
    let theta = contour_exploration(t);
    let nc = theta.len() - 1;
    let is_corner = |i: usize| matches!(t.ty(theta[i]), 1 | 2);
    let target = |i: usize| {
        let u = theta[i];
        t.label2(u) - if t.ty(u) == 1 { 2 } else { 1 }
    };
    // Next type-1 corner with each label, scanning the contour twice backwards.
    const POINT: usize = usize::MAX;
    let mut succ = vec![POINT; nc];
    let mut next_at: HashMap<i64, usize> = HashMap::new();
    for pass in 0..2 {
        for i in (0..nc).rev() {
            if pass == 1 && is_corner(i) {
                succ[i] = next_at.get(&target(i)).copied().unwrap_or(POINT);
            }
            if t.ty(theta[i]) == 1 {
                next_at.insert(t.label2(theta[i]), i);
            }
        }
    }
    // Every corner of a type-1 vertex reached by the scan is checked to lie
    // strictly ahead of the corner, cyclically.
    for i in (0..nc).filter(|&i| is_corner(i)) {
        if succ[i] == i {
            return Err(Error::InvalidMobile("corner is its own successor".into()));
        }
    }

    // Clockwise arc lists per corner: incoming arcs nearest first, then the outgoing arc.
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); nc];
    let mut into_point: Vec<usize> = Vec::new();
    for i in (0..nc).filter(|&i| is_corner(i)) {
        match succ[i] {
            POINT => into_point.push(i),
            s => incoming[s].push(i),
        }
    }
    for (s, list) in incoming.iter_mut().enumerate() {
        list.sort_by_key(|&c| (s + nc - c) % nc);
    }
    // Half-edges: out-half 2i and in-half 2i+1 of the arc of corner i.
    let out_h = |i: usize| 2 * i;
    let in_h = |i: usize| 2 * i + 1;
    let mut cw: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut corners_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in (0..nc).filter(|&i| is_corner(i)) {
        corners_of.entry(theta[i]).or_default().push(i);
    }
    for (&u, cs) in &corners_of {
        let mut list = Vec::new();
        for &c in cs {
            list.extend(incoming[c].iter().map(|&j| in_h(j)));
            list.push(out_h(c));
        }
        cw.insert(u, list);
    }
    into_point.sort_unstable_by(|a, b| b.cmp(a));
    let point_list: Vec<usize> = into_point.iter().map(|&j| in_h(j)).collect();

    // Smooth flags: their two arcs form one map edge joining two in-halves.
    let mut partner: HashMap<usize, usize> = HashMap::new();
    for (&u, cs) in &corners_of {
        if t.ty(u) == 1 {
            for &c in cs {
                partner.insert(out_h(c), in_h(c));
                partner.insert(in_h(c), out_h(c));
            }
        } else {
            if cs.len() != 2 {
                return Err(Error::InvalidMobile(format!("flag with {} corners", cs.len())));
            }
            partner.insert(in_h(cs[0]), in_h(cs[1]));
            partner.insert(in_h(cs[1]), in_h(cs[0]));
        }
    }
    let mut lists: Vec<(Option<usize>, Vec<usize>)> = Vec::new();
    for (&u, list) in &cw {
        if t.ty(u) == 1 {
            lists.push((Some(u), list.clone()));
        }
    }
    lists.push((None, point_list));
    // Dense renumbering of the half-edges that survive.
    let mut id: HashMap<usize, usize> = HashMap::new();
    for (_, list) in &lists {
        for &h in list {
            let k = id.len();
            id.insert(h, k);
        }
    }
    let n = id.len();
    let mut alpha = vec![0; n];
    let mut sigma = vec![0; n];
    for (_, list) in &lists {
        for (j, &h) in list.iter().enumerate() {
            // Counterclockwise is the reverse of the clockwise list.
            let prev = list[(j + list.len() - 1) % list.len()];
            sigma[id[&h]] = id[&prev];
            alpha[id[&h]] = id[&partner[&h]];
        }
    }
    let root_h = id[&in_h(0)];
    let mut map = HalfEdgeMap::new(alpha, sigma, root_h, None)?;
    let point_vertex = map.vertex(id[&lists.last().unwrap().1[0]]);
    map.set_point(Some(point_vertex))?;
    let mut node_vertex = vec![None; t.len()];
    for (u, list) in &lists {
        if let Some(u) = u {
            node_vertex[*u] = Some(map.vertex(id[&list[0]]));
        }
    }
    Ok(Encoded {
        map,
        mobile: t.clone(),
        node_vertex,
    })
}

/// Number of mobiles with root type by `sign`, `n_type1` type-1 vertices
/// and exactly `faces` face vertices whose degrees pass `filter`, counted
/// with their admissible labelings.
pub fn count_mobiles(sign: Sign, n_type1: usize, faces: usize, filter: &dyn Fn(usize) -> bool) -> u128 {
    // Pending child types form a stack; budgets are type-1 vertices and faces left.
    fn go(
        pending: &mut Vec<Type>,
        ones_left: usize,
        faces_left: usize,
        filter: &dyn Fn(usize) -> bool,
        memo: &mut HashMap<(Type, Vec<Type>), u128>,
    ) -> u128 {
        let Some(ty) = pending.pop() else {
            return u128::from(ones_left == 0 && faces_left == 0);
        };
        let mut total = 0u128;
        match ty {
            1 => {
                if ones_left > 0 {
                    for k in 0..=faces_left {
                        let before = pending.len();
                        pending.extend(std::iter::repeat(3).take(k));
                        total += go(pending, ones_left - 1, faces_left, filter, memo);
                        pending.truncate(before);
                    }
                }
            }
            2 => {
                pending.push(4);
                total += go(pending, ones_left, faces_left, filter, memo);
                pending.pop();
            }
            face => {
                if faces_left > 0 {
                    let extra = if face == 3 { 2 } else { 1 };
                    // Each type-2 child needs a face of its own below it.
                    for len in 0..=(ones_left + faces_left) {
                        for mask in 0..(1u32 << len) {
                            let ct: Vec<Type> = (0..len).map(|i| if mask >> i & 1 == 1 { 2 } else { 1 }).collect();
                            let k = ct.iter().filter(|&&c| c == 1).count();
                            let kp = len - k;
                            if k > ones_left || kp + 1 > faces_left || !filter(2 * k + kp + extra) {
                                continue;
                            }
                            let labelings = *memo
                                .entry((face, ct.clone()))
                                .or_insert_with(|| admissible_list(face, &ct, usize::MAX).unwrap().len() as u128);
                            let before = pending.len();
                            pending.extend(ct.iter().rev());
                            total += labelings * go(pending, ones_left, faces_left - 1, filter, memo);
                            pending.truncate(before);
                        }
                    }
                }
            }
        }
        pending.push(ty);
        total
    }
    let mut memo = HashMap::new();
    match sign {
        Sign::Plus | Sign::Minus => go(&mut vec![1], n_type1, faces, filter, &mut memo),
        Sign::Null => go(&mut vec![4, 4], n_type1, faces, filter, &mut memo),
    }
}

/// Boltzmann map with `n_vertices` vertices and root sign `sign`: samples the
/// conditioned mobile, labels it uniformly and inverts the bijection.
pub fn boltzmann_sample<R: Rng + ?Sized>(
    sampler: &mut ConditionedSampler,
    n_vertices: usize,
    sign: Sign,
    rng: &mut R,
    attempt_cap: u64,
) -> Result<Encoded> {
    if n_vertices == 0 {
        return Err(Error::Domain("maps have at least one vertex".into()));
    }
    if n_vertices == 1 {
        if sign != Sign::Plus {
            return Err(Error::Domain("the vertex map is positive".into()));
        }
        return bdg_inverse(&LabeledTypedTree::single(1), Sign::Plus);
    }
    let root = if sign == Sign::Null { 2 } else { 1 };
    for _ in 0..attempt_cap {
        let t = sampler.sample(root, n_vertices - 1, rng, attempt_cap)?;
        if t.len() == 1 {
            // The lone type-1 vertex encodes the vertex map.
            continue;
        }
        let mut enc = bdg_inverse(&t, if sign == Sign::Null { Sign::Null } else { Sign::Plus })?;
        if sign == Sign::Minus {
            enc.map = enc.map.reverse_root()?;
        }
        return Ok(enc);
    }
    Err(Error::Exhausted { attempts: attempt_cap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::mobile::solve_critical;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge() -> HalfEdgeMap {
        HalfEdgeMap::new(vec![1, 0], vec![0, 1], 0, None).unwrap()
    }

    fn lp() -> HalfEdgeMap {
        HalfEdgeMap::new(vec![1, 0], vec![1, 0], 0, None).unwrap()
    }

    /// Path a - b - c rooted at the a end.
    fn path2() -> HalfEdgeMap {
        HalfEdgeMap::new(vec![1, 0, 3, 2], vec![0, 2, 1, 3], 0, None).unwrap()
    }

    fn all_pointed(max_edges: usize) -> Vec<HalfEdgeMap> {
        enumerate_maps(max_edges, |_| true)
            .unwrap()
            .iter()
            .flat_map(pointed_variants)
            .collect()
    }

    #[test]
    fn weight_seq_json() {
        let q = WeightSeq::from_json(r#"{"5": 1.0, "3": 0}"#).unwrap();
        assert_eq!(q.support(), vec![5]);
        assert_eq!(q.single_degree(), Some(5));
        assert!(q.has_odd_face());
        assert!(WeightSeq::from_json(r#"{"x": 1}"#).is_err());
        assert!(WeightSeq::from_json(r#"{"2": -1}"#).is_err());
    }

    #[test]
    fn face_degree_examples() {
        assert_eq!(edge().face_degrees(), vec![2]);
        assert_eq!(path2().face_degrees(), vec![4]);
        assert_eq!(HalfEdgeMap::vertex_map(false).face_degrees(), vec![0]);
        assert_eq!(lp().face_degrees(), vec![1, 1]);
    }

    #[test]
    fn weight_examples() {
        let q = WeightSeq::single(2, 0.3);
        assert_eq!(edge().boltzmann_weight(&q), 0.3);
        assert_eq!(path2().boltzmann_weight(&q), 0.0);
        assert_eq!(HalfEdgeMap::vertex_map(false).boltzmann_weight(&q), 1.0);
    }

    #[test]
    fn sign_examples() {
        let e = edge();
        let (u, v) = (e.root_tail(), e.root_head());
        assert_eq!(e.with_point(Some(u)).unwrap().classify_sign().unwrap(), Sign::Plus);
        assert_eq!(e.with_point(Some(v)).unwrap().classify_sign().unwrap(), Sign::Minus);
        assert_eq!(lp().with_point(Some(0)).unwrap().classify_sign().unwrap(), Sign::Null);
        assert_eq!(HalfEdgeMap::vertex_map(true).classify_sign().unwrap(), Sign::Plus);
        let r = e.with_point(Some(u)).unwrap().reverse_root().unwrap();
        assert_eq!(r.classify_sign().unwrap(), Sign::Minus);
        assert_eq!(r.reverse_root().unwrap(), e.with_point(Some(u)).unwrap());
        assert_eq!(HalfEdgeMap::vertex_map(true).reverse_root(), Err(Error::VertexMap));
    }

    #[test]
    fn bfs_examples() {
        assert_eq!(edge().bfs_distance(edge().root_tail()), vec![0, 1]);
        assert_eq!(lp().bfs_distance(0), vec![0]);
        let p = path2();
        let d = p.bfs_distance(p.root_tail());
        let mut sorted = d.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn invalid_maps_rejected() {
        assert!(HalfEdgeMap::new(vec![0, 1], vec![0, 1], 0, None).is_err());
        // Two disjoint edges.
        assert!(HalfEdgeMap::new(vec![1, 0, 3, 2], vec![0, 1, 2, 3], 0, None).is_err());
        // Torus: one vertex, two loops interleaved, one face.
        assert!(HalfEdgeMap::new(vec![2, 3, 0, 1], vec![1, 2, 3, 0], 0, None).is_err());
    }

    #[test]
    fn text_round_trip() {
        for m in all_pointed(3) {
            let s = m.to_text();
            assert_eq!(HalfEdgeMap::from_text(&s).unwrap(), m);
        }
        assert!(HalfEdgeMap::from_text("E 1\nalpha 1 0\nrot 0 1\npoint -1\n").is_err());
    }

    #[test]
    fn rooted_map_counts() {
        let counts: Vec<usize> = (0..=5)
            .map(|e| rooted_maps_with_edges(e, 1 << 20).unwrap().len())
            .collect();
        assert_eq!(counts, vec![1, 2, 9, 54, 378, 2916]);
        let e1 = enumerate_maps(1, |_| true).unwrap();
        assert_eq!(e1.len(), 3);
        // The path rooted at a leaf and rooted at its middle vertex.
        let quad = enumerate_maps(2, |d| d == [4]).unwrap();
        assert_eq!(quad.len(), 2);
        assert!(quad.iter().all(|m| unrooted_key(m) == unrooted_key(&path2())));
        assert!(enumerate_maps(7, |_| true).is_err());
    }

    #[test]
    fn euler_on_enumerated_maps() {
        for m in enumerate_maps(4, |_| true).unwrap() {
            assert_eq!(m.n_vertices() + m.n_faces(), m.n_edges() + 2);
            assert_eq!(m.face_degrees().iter().sum::<usize>(), if m.is_vertex_map() { 0 } else { 2 * m.n_edges() });
        }
    }

    #[test]
    fn forward_single_edge() {
        let m = edge().with_point(Some(edge().root_tail())).unwrap();
        let enc = bdg_forward(&m).unwrap();
        assert_eq!(enc.mobile.types(), &[1, 3]);
        assert_eq!(enc.mobile.labels2(), &[0, 0]);
        let neg = edge().with_point(Some(edge().root_head())).unwrap();
        assert_eq!(bdg_forward(&neg).unwrap_err(), Error::NegativeMap);
        let back = bdg_inverse(&enc.mobile, Sign::Plus).unwrap();
        assert_eq!(back.map.canonical_code(), m.canonical_code());
    }

    #[test]
    fn forward_images_are_mobiles() {
        for m in all_pointed(4) {
            let sign = m.classify_sign().unwrap();
            let m = if sign == Sign::Minus { m.reverse_root().unwrap() } else { m };
            let enc = bdg_forward(&m).unwrap();
            check_mobile(&enc.mobile).unwrap_or_else(|e| panic!("{e}\n{}", m.to_text()));
            let ones = enc.mobile.types().iter().filter(|&&x| x == 1).count();
            if !m.is_vertex_map() {
                assert_eq!(ones, m.n_vertices() - 1);
            }
            assert_eq!(enc.mobile.ty(0), if m.classify_sign().unwrap() == Sign::Null { 2 } else { 1 });
        }
    }

    #[test]
    fn distances_from_labels() {
        for m in all_pointed(4) {
            let m = if m.classify_sign().unwrap() == Sign::Minus { m.reverse_root().unwrap() } else { m };
            if m.is_vertex_map() {
                continue;
            }
            let enc = bdg_forward(&m).unwrap();
            let d = m.bfs_distance(m.point().unwrap());
            let t = &enc.mobile;
            let Some(min1) = (0..t.len()).filter(|&u| t.ty(u) == 1).map(|u| t.label2(u)).min() else {
                continue;
            };
            let min = t.labels2().iter().copied().min().unwrap();
            let p = m.point().unwrap();
            let loop_at_point = (0..m.n_half_edges()).any(|h| m.vertex(h) == p && m.vertex(m.alpha(h)) == p);
            // Over all vertices the minimum can sit at a flag on a loop at the pointed vertex.
            assert_eq!(min == min1, !loop_at_point);
            for (u, v) in enc.node_vertex.iter().enumerate() {
                if let Some(v) = v {
                    assert_eq!(2 * d[*v] as i64, t.label2(u) - min1 + 2);
                }
            }
        }
    }

    #[test]
    fn round_trip_on_small_maps() {
        for m in all_pointed(4) {
            let m = if m.classify_sign().unwrap() == Sign::Minus { m.reverse_root().unwrap() } else { m };
            let sign = m.classify_sign().unwrap();
            let enc = bdg_forward(&m).unwrap();
            let back = bdg_inverse(&enc.mobile, sign).unwrap_or_else(|e| panic!("{e}\n{}", m.to_text()));
            assert_eq!(back.map.canonical_code(), m.canonical_code(), "\n{}", m.to_text());
            let again = bdg_forward(&back.map).unwrap();
            assert_eq!(again.mobile, enc.mobile);
        }
    }

    #[test]
    fn cardinalities_match() {
        let maps = all_pointed(4);
        let mut by_class: BTreeMap<(Sign, usize, usize), u128> = BTreeMap::new();
        for m in &maps {
            if m.is_vertex_map() {
                continue;
            }
            *by_class
                .entry((m.classify_sign().unwrap(), m.n_vertices(), m.n_faces()))
                .or_default() += 1;
        }
        for ((sign, n, f), count) in by_class {
            assert_eq!(count_mobiles(sign, n - 1, f, &|_| true), count, "{sign} n={n} f={f}");
        }
        assert_eq!(count_mobiles(Sign::Plus, 1, 0, &|_| true), 1);
    }

    #[test]
    fn sampled_maps_have_requested_size() {
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let mut s = ConditionedSampler::from_params(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (n, sign) in [(5, Sign::Plus), (5, Sign::Null), (8, Sign::Minus), (302, Sign::Plus)] {
            let enc = boltzmann_sample(&mut s, n, sign, &mut rng, 1_000_000).unwrap();
            assert_eq!(enc.map.n_vertices(), n);
            assert!(enc.map.face_degrees().iter().all(|&d| d == 5));
            assert_eq!(enc.map.classify_sign().unwrap(), sign);
        }
        assert!(boltzmann_sample(&mut s, 1, Sign::Plus, &mut rng, 10).unwrap().map.is_vertex_map());
    }
}
