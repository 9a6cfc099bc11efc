//! Snake pseudo-metrics, map distances along the mobile contour, discrete
//! Brownian snakes and exact Gromov-Hausdorff(-Prokhorov) distances of tiny
//! metric measure spaces.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::maps::Encoded;
use crate::tree_core::{contour_exploration, check_tree_like, LabeledTypedTree, PathFunction, TreeLikePath};

/// `D°(x,y) = Z(x) + Z(y) - 2 max(min_[x,y] Z, min_[y,1]∪[0,x] Z)`.
pub fn d_circ(z: &PathFunction, x: f64, y: f64) -> Result<f64> {
    let (x, y) = if x <= y { (x, y) } else { (y, x) };
    let inner = z.inf_on(x, y)?;
    let outer = z.inf_on(y, 1.0)?.min(z.inf_on(0.0, x)?);
    Ok(z.eval(x)? + z.eval(y)? - 2.0 * inner.max(outer))
}

/// Doubled `δ°(i,j)` from doubled labels along the contour, including the `+2`.
pub fn delta_circ2(t: &LabeledTypedTree, theta: &[usize], i: usize, j: usize) -> Result<i64> {
    let n = theta.len().saturating_sub(1).max(1);
    for &k in &[i, j] {
        if k > n || t.ty(theta[k]) != 1 {
            return Err(Error::Domain(format!("contour time {k} is not at a type-1 vertex")));
        }
    }
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    let lab = |k: usize| t.label2(theta[k]);
    let inner = (a..=b).map(lab).min().unwrap();
    let outer = (b..=n.min(theta.len() - 1)).chain(0..=a).map(lab).min().unwrap();
    Ok(lab(a) + lab(b) - 2 * inner.max(outer) + 4)
}

/// `δ°(i,j)` in label units.
pub fn delta_circ(t: &LabeledTypedTree, theta: &[usize], i: usize, j: usize) -> Result<f64> {
    Ok(delta_circ2(t, theta, i, j)? as f64 / 2.0)
}

/// All-pairs graph distances of a map.
#[derive(Clone, Debug)]
pub struct MapDistances {
    d: Vec<Vec<usize>>,
}

impl MapDistances {
    pub fn new(enc: &Encoded) -> Self {
        let m = &enc.map;
        Self {
            d: (0..m.n_vertices()).map(|v| m.bfs_distance(v)).collect(),
        }
    }

    pub fn get(&self, u: usize, v: usize) -> usize {
        self.d[u][v]
    }
}

/// `δ(i,j)`: map distance between the type-1 vertices visited at contour times `i` and `j`.
pub fn delta(enc: &Encoded, dist: &MapDistances, theta: &[usize], i: usize, j: usize) -> Result<usize> {
    let vertex = |k: usize| {
        theta
            .get(k)
            .and_then(|&u| enc.node_vertex[u])
            .ok_or_else(|| Error::Domain(format!("contour time {k} is not at a type-1 vertex")))
    };
    Ok(dist.get(vertex(i)?, vertex(j)?))
}

/// Contour times at type-1 vertices.
pub fn type1_times(t: &LabeledTypedTree, theta: &[usize]) -> Vec<usize> {
    (0..theta.len()).filter(|&k| t.ty(theta[k]) == 1).collect()
}

/// First contour visit of every vertex.
pub fn first_visits(t: &LabeledTypedTree, theta: &[usize]) -> Vec<usize> {
    let mut first = vec![usize::MAX; t.len()];
    for (k, &u) in theta.iter().enumerate() {
        if first[u] == usize::MAX {
            first[u] = k;
        }
    }
    first
}

/// Pairs `(i, j)` of type-1 contour times with `δ(i,j) > δ°(i,j)`.
pub fn delta_violations(enc: &Encoded) -> Result<Vec<(usize, usize)>> {
    let t = &enc.mobile;
    if t.len() == 1 {
        return Ok(Vec::new());
    }
    let theta = contour_exploration(t);
    let dist = MapDistances::new(enc);
    let mut bad = Vec::new();
    let mut err = None;
    for_each_circ2(t, &theta, |i, j, circ| match delta(enc, &dist, &theta, i, j) {
        Ok(d) if 2 * d as i64 > circ => bad.push((i, j)),
        Ok(_) => {}
        Err(e) => err = Some(e),
    });
    match err {
        Some(e) => Err(e),
        None => Ok(bad),
    }
}

/// Calls `f(i, j, 2δ°(i,j))` for every pair `i <= j` of type-1 contour times,
/// in O(1) per pair.
fn for_each_circ2(t: &LabeledTypedTree, theta: &[usize], mut f: impl FnMut(usize, usize, i64)) {
    let lab: Vec<i64> = theta.iter().map(|&u| t.label2(u)).collect();
    let n = lab.len();
    let mut prefix = lab.clone();
    let mut suffix = lab.clone();
    for k in 1..n {
        prefix[k] = prefix[k - 1].min(lab[k]);
        suffix[n - 1 - k] = suffix[n - k].min(lab[n - 1 - k]);
    }
    let is1: Vec<bool> = theta.iter().map(|&u| t.ty(u) == 1).collect();
    for i in (0..n).filter(|&i| is1[i]) {
        let mut inner = lab[i];
        for j in i..n {
            inner = inner.min(lab[j]);
            if is1[j] {
                f(i, j, lab[i] + lab[j] - 2 * inner.max(suffix[j].min(prefix[i])) + 4);
            }
        }
    }
}

/// Grid-restricted maximal pseudo-metric below `D°`: pairs with
/// `D° <= zero_tol` are glued and shortest chains are taken.
pub fn d_star_grid(z: &PathFunction, points: &[f64], zero_tol: f64) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let v = d_circ(z, points[a], points[b])?;
            let v = if v <= zero_tol { 0.0 } else { v };
            d[a][b] = v;
            d[b][a] = v;
        }
    }
    floyd_warshall(&mut d);
    Ok(d)
}

fn floyd_warshall(d: &mut [Vec<f64>]) {
    let n = d.len();
    for k in 0..n {
        for a in 0..n {
            let dak = d[a][k];
            for b in 0..n {
                let v = dak + d[k][b];
                if v < d[a][b] {
                    d[a][b] = v;
                }
            }
        }
    }
}

/// A discrete Brownian excursion with its snake labels on a grid of size `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct SnakeSample {
    pub e: PathFunction,
    pub z: PathFunction,
}

impl SnakeSample {
    /// Excursion and tree-like property at a tolerance scaled to the grid.
    pub fn is_valid(&self) -> bool {
        let tol = 1e-9;
        self.e.is_excursion(tol)
            && check_tree_like(&TreeLikePath {
                zeta: self.e.clone(),
                f: self.z.clone(),
                tolerance: tol,
            })
    }

    pub fn to_csv(&self) -> String {
        let n = self.e.grid_size();
        let mut out = String::from("s,e,z\n");
        for i in 0..=n {
            out.push_str(&format!("{},{},{}\n", i as f64 / n as f64, self.e.at_grid(i), self.z.at_grid(i)));
        }
        out
    }
}

/// Simple-walk excursion of even length `n`, uniform among Dyck paths, by
/// the cycle lemma on `n/2` up-steps and `n/2 + 1` down-steps.
pub fn dyck_path<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<i64>> {
    if n < 2 || n % 2 == 1 {
        return Err(Error::Domain(format!("excursion length {n} must be even and >= 2")));
    }
    let m = n / 2;
    let mut steps: Vec<i64> = std::iter::repeat(1).take(m).chain(std::iter::repeat(-1).take(m + 1)).collect();
    steps.shuffle(rng);
    // The unique rotation starting after the first minimum stays nonnegative
    // until its final step.
    let mut s = 0;
    let mut best = 0;
    let mut start = 0;
    for (i, &x) in steps.iter().enumerate() {
        s += x;
        if s < best {
            best = s;
            start = i + 1;
        }
    }
    let mut path = Vec::with_capacity(n + 1);
    let mut h = 0;
    path.push(0);
    for k in 0..n {
        h += steps[(start + k) % steps.len()];
        path.push(h);
    }
    debug_assert_eq!(h, 0);
    Ok(path)
}

/// Brownian snake discretized on a grid of size `n` (even): the excursion is
/// `S/sqrt(n)` for a uniform Dyck path `S`, and each up-step of the coded
/// tree carries an independent Gaussian label increment of variance `1/sqrt(n)`,
/// so that `Cov(Z(s), Z(t)) = min_[s,t] e` on grid points.
pub fn brownian_snake_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<SnakeSample> {
    let s = dyck_path(n, rng)?;
    let scale = 1.0 / (n as f64).sqrt();
    let sd = scale.sqrt();
    let mut z = Vec::with_capacity(n + 1);
    // Labels of the ancestors along the current branch, by height.
    let mut branch = vec![0.0f64];
    z.push(0.0);
    for k in 1..=n {
        if s[k] > s[k - 1] {
            let g: f64 = rng.sample(StandardNormal);
            let top = *branch.last().unwrap();
            branch.push(top + sd * g);
        } else {
            branch.pop();
        }
        z.push(*branch.last().unwrap());
    }
    Ok(SnakeSample {
        e: PathFunction::new(s.iter().map(|&h| h as f64 * scale).collect())?,
        z: PathFunction::new(z)?,
    })
}

/// Finite metric space with a probability measure.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMetricMeasureSpace {
    d: Vec<Vec<f64>>,
    mu: Vec<f64>,
}

impl FiniteMetricMeasureSpace {
    pub fn new(d: Vec<Vec<f64>>, mu: Vec<f64>) -> Result<Self> {
        let n = d.len();
        if n == 0 || mu.len() != n || d.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("distance matrix and weights must be n x n and n".into()));
        }
        let tol = 1e-12;
        for a in 0..n {
            if d[a][a] != 0.0 {
                return Err(Error::Domain("nonzero diagonal".into()));
            }
            for b in 0..n {
                if d[a][b] != d[b][a] || d[a][b] < 0.0 || !d[a][b].is_finite() {
                    return Err(Error::Domain(format!("bad distance at ({a},{b})")));
                }
                for c in 0..n {
                    if d[a][c] > d[a][b] + d[b][c] + tol {
                        return Err(Error::Domain(format!("triangle inequality fails at ({a},{b},{c})")));
                    }
                }
            }
        }
        if mu.iter().any(|&w| !(w >= 0.0)) || (mu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("weights must be a probability vector".into()));
        }
        Ok(Self { d, mu })
    }

    /// Uniform weights.
    pub fn uniform(d: Vec<Vec<f64>>) -> Result<Self> {
        let n = d.len();
        Self::new(d, vec![1.0 / n as f64; n])
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn dist(&self, a: usize, b: usize) -> f64 {
        self.d[a][b]
    }

    pub fn weights(&self) -> &[f64] {
        &self.mu
    }
}

const MAX_POINTS: usize = 7;

/// Correspondence `{(x, f(x))} ∪ {(g(y), y)}`; every correspondence contains
/// one of this form, so they suffice for minimal distortion.
struct Search<'a> {
    x: &'a FiniteMetricMeasureSpace,
    y: &'a FiniteMetricMeasureSpace,
    eps: f64,
    pairs: Vec<(usize, usize)>,
}

impl Search<'_> {
    fn compatible(&self, a: usize, b: usize) -> bool {
        self.pairs
            .iter()
            .all(|&(p, q)| (self.x.dist(a, p) - self.y.dist(b, q)).abs() <= self.eps)
    }

    fn run(&mut self, step: usize) -> bool {
        let (nx, ny) = (self.x.len(), self.y.len());
        if step == nx + ny {
            return true;
        }
        if step < nx {
            let a = step;
            for b in 0..ny {
                if self.compatible(a, b) {
                    self.pairs.push((a, b));
                    if self.run(step + 1) {
                        return true;
                    }
                    self.pairs.pop();
                }
            }
        } else {
            let b = step - nx;
            if self.pairs.iter().any(|&(_, q)| q == b) {
                return self.run(step + 1);
            }
            for a in 0..nx {
                if self.compatible(a, b) {
                    self.pairs.push((a, b));
                    if self.run(step + 1) {
                        return true;
                    }
                    self.pairs.pop();
                }
            }
        }
        false
    }
}

fn distortion_candidates(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace) -> Vec<f64> {
    let mut c = vec![0.0];
    for a in 0..x.len() {
        for p in 0..x.len() {
            for b in 0..y.len() {
                for q in 0..y.len() {
                    c.push((x.dist(a, p) - y.dist(b, q)).abs());
                }
            }
        }
    }
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    c.dedup();
    c
}

fn check_size(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace) -> Result<()> {
    if x.len() > MAX_POINTS || y.len() > MAX_POINTS {
        return Err(Error::CapExceeded(x.len().max(y.len())));
    }
    Ok(())
}

/// Smallest distortion among correspondences, with a minimizer.
fn min_distortion(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace) -> (f64, Vec<(usize, usize)>) {
    let cand = distortion_candidates(x, y);
    let feasible = |eps: f64| {
        let mut s = Search {
            x,
            y,
            eps,
            pairs: Vec::new(),
        };
        s.run(0).then_some(s.pairs)
    };
    let (mut lo, mut hi) = (0usize, cand.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(cand[mid]).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    (cand[lo], feasible(cand[lo]).expect("largest candidate is feasible"))
}

/// Gromov-Hausdorff distance: half the minimal distortion of a correspondence.
pub fn gh_distance_exact(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace) -> Result<f64> {
    check_size(x, y)?;
    Ok(min_distortion(x, y).0 / 2.0)
}

/// All correspondences with their distortion, for small instances.
fn each_correspondence(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace, mut f: impl FnMut(&[(usize, usize)], f64)) {
    let (nx, ny) = (x.len(), y.len());
    let all: Vec<(usize, usize)> = (0..nx).flat_map(|a| (0..ny).map(move |b| (a, b))).collect();
    for mask in 1u64..(1u64 << all.len()) {
        let r: Vec<(usize, usize)> = (0..all.len()).filter(|&i| mask >> i & 1 == 1).map(|i| all[i]).collect();
        let covers = (0..nx).all(|a| r.iter().any(|p| p.0 == a)) && (0..ny).all(|b| r.iter().any(|p| p.1 == b));
        if !covers {
            continue;
        }
        let mut dis: f64 = 0.0;
        for &(a, b) in &r {
            for &(p, q) in &r {
                dis = dis.max((x.dist(a, p) - y.dist(b, q)).abs());
            }
        }
        f(&r, dis);
    }
}

/// Gromov-Hausdorff distance by listing every correspondence; at most 16 pairs.
pub fn gh_distance_brute_force(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace) -> Result<f64> {
    if x.len() * y.len() > 16 {
        return Err(Error::CapExceeded(x.len() * y.len()));
    }
    let mut best = f64::INFINITY;
    each_correspondence(x, y, |_, dis| best = best.min(dis));
    Ok(best / 2.0)
}

/// Metric on the disjoint union glued along `r` with offset `dis/2`.
fn glued(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace, r: &[(usize, usize)], dis: f64) -> Vec<Vec<f64>> {
    let mut d = vec![vec![f64::INFINITY; y.len()]; x.len()];
    for (a, row) in d.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            for &(p, q) in r {
                *v = v.min(x.dist(a, p) + dis / 2.0 + y.dist(q, b));
            }
        }
    }
    d
}

/// Prokhorov distance between `mu` and `nu` given cross distances: the least
/// `eps` admitting a coupling with mass at most `eps` on pairs farther than `eps`.
fn prokhorov(mu: &[f64], nu: &[f64], d: &[Vec<f64>]) -> f64 {
    let mut levels: Vec<f64> = d.iter().flatten().copied().collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut best: f64 = 1.0;
    for &eps in &levels {
        if eps >= best {
            break;
        }
        let moved = max_flow(mu, nu, |a, b| d[a][b] <= eps);
        best = best.min(eps.max(1.0 - moved));
    }
    best.max(0.0)
}

/// Maximum mass transportable from `mu` to `nu` along allowed pairs.
fn max_flow(mu: &[f64], nu: &[f64], allowed: impl Fn(usize, usize) -> bool) -> f64 {
    let (nx, ny) = (mu.len(), nu.len());
    // Nodes: source, x side, y side, sink.
    let n = nx + ny + 2;
    let (s, t) = (0, n - 1);
    let mut cap = vec![vec![0.0f64; n]; n];
    for a in 0..nx {
        cap[s][1 + a] = mu[a];
        for b in 0..ny {
            if allowed(a, b) {
                cap[1 + a][1 + nx + b] = f64::INFINITY;
            }
        }
    }
    for b in 0..ny {
        cap[1 + nx + b][t] = nu[b];
    }
    let mut total = 0.0;
    loop {
        let mut prev = vec![usize::MAX; n];
        prev[s] = s;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if prev[v] == usize::MAX && cap[u][v] > 1e-15 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[t] == usize::MAX {
            return total;
        }
        let mut f = f64::INFINITY;
        let mut v = t;
        while v != s {
            f = f.min(cap[prev[v]][v]);
            v = prev[v];
        }
        let mut v = t;
        while v != s {
            let u = prev[v];
            cap[u][v] -= f;
            cap[v][u] += f;
            v = u;
        }
        total += f;
    }
}

/// Gromov-Hausdorff-Prokhorov distance over the gluings induced by
/// correspondences: the least `max(dis(R)/2, Prokhorov)` over `R`.
pub fn ghp_distance_exact(x: &FiniteMetricMeasureSpace, y: &FiniteMetricMeasureSpace) -> Result<f64> {
    check_size(x, y)?;
    let mut best = f64::INFINITY;
    // Correspondences of the form f ∪ g^T, enumerated exhaustively.
    let (nx, ny) = (x.len(), y.len());
    let total = (ny as u64).pow(nx as u32) * (nx as u64).pow(ny as u32);
    if total > 5_000_000 {
        return Err(Error::CapExceeded(total as usize));
    }
    for code in 0..total {
        let mut c = code;
        let mut r = Vec::with_capacity(nx + ny);
        for a in 0..nx {
            r.push((a, (c % ny as u64) as usize));
            c /= ny as u64;
        }
        for b in 0..ny {
            r.push(((c % nx as u64) as usize, b));
            c /= nx as u64;
        }
        let mut dis: f64 = 0.0;
        for &(a, b) in &r {
            for &(p, q) in &r {
                dis = dis.max((x.dist(a, p) - y.dist(b, q)).abs());
            }
        }
        if dis / 2.0 >= best {
            continue;
        }
        let g = glued(x, y, &r, dis);
        best = best.min((dis / 2.0).max(prokhorov(x.weights(), y.weights(), &g)));
    }
    Ok(best)
}

/// Random metric on `n` points: shortest paths over integer edge weights
/// drawn uniformly from `1..=max_weight`, with uniform measure.
pub fn random_metric_space<R: Rng + ?Sized>(n: usize, max_weight: u32, rng: &mut R) -> FiniteMetricMeasureSpace {
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let w = rng.gen_range(1..=max_weight.max(1)) as f64;
            d[a][b] = w;
            d[b][a] = w;
        }
    }
    floyd_warshall(&mut d);
    FiniteMetricMeasureSpace::uniform(d).expect("shortest-path metric")
}

/// Rescaled `D_n°` and `D_n` at the type-1 contour times nearest below the
/// grid points `k/grid`, `k = 0..=grid`, scaled by `b / n^{1/4}`.
pub fn rescaled_map_distance_matrix(enc: &Encoded, b: f64, n: usize, grid: usize) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !(b > 0.0) || n == 0 || grid == 0 {
        return Err(Error::Domain("scale, size and grid must be positive".into()));
    }
    let t = &enc.mobile;
    let theta = contour_exploration(t);
    let times = type1_times(t, &theta);
    let len = theta.len() - 1;
    let pick: Vec<usize> = (0..=grid)
        .map(|k| {
            let target = (k * len) / grid;
            let pos = times.partition_point(|&x| x <= target);
            times[pos.saturating_sub(1)]
        })
        .collect();
    let dist = MapDistances::new(enc);
    let c = b / (n as f64).powf(0.25);
    let g = pick.len();
    let mut dc = vec![vec![0.0; g]; g];
    let mut dm = vec![vec![0.0; g]; g];
    for a in 0..g {
        for bb in 0..g {
            dm[a][bb] = c * delta(enc, &dist, &theta, pick[a], pick[bb])? as f64;
            dc[a][bb] = c * delta_circ(t, &theta, pick[a], pick[bb])?;
        }
    }
    Ok((dc, dm))
}

/// Matrix as CSV rows.
pub fn matrix_csv(m: &[Vec<f64>]) -> String {
    m.iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::mobile::{solve_critical, ConditionedSampler};
    use crate::maps::{bdg_forward, boltzmann_sample, enumerate_maps, pointed_variants, Sign, WeightSeq};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pf(v: &[f64]) -> PathFunction {
        PathFunction::new(v.to_vec()).unwrap()
    }

    #[test]
    fn d_circ_examples() {
        let z = pf(&[0.0, 1.0, -1.0, 1.0, 0.0]);
        assert_eq!(d_circ(&z, 0.25, 0.5).unwrap(), 2.0);
        assert_eq!(d_circ(&z, 0.5, 0.25).unwrap(), 2.0);
        assert_eq!(d_circ(&z, 0.3, 0.3).unwrap(), 0.0);
        let c = pf(&[0.5; 5]);
        assert_eq!(d_circ(&c, 0.1, 0.9).unwrap(), 0.0);
        assert!(d_circ(&z, -0.1, 0.5).is_err());
    }

    #[test]
    fn d_star_examples() {
        let z = pf(&[0.0, 1.0, -1.0, 1.0, 0.0]);
        let d = d_star_grid(&z, &[0.25, 0.5], 1e-9).unwrap();
        assert_eq!(d[0][1], d_circ(&z, 0.25, 0.5).unwrap());
        let pts = [0.0, 0.125, 0.25, 0.4, 0.5, 0.75, 1.0];
        let d = d_star_grid(&z, &pts, 1e-9).unwrap();
        for a in 0..pts.len() {
            for b in 0..pts.len() {
                assert!(d[a][b] <= d_circ(&z, pts[a], pts[b]).unwrap() + 1e-12);
                for c in 0..pts.len() {
                    assert!(d[a][c] <= d[a][b] + d[b][c] + 1e-12);
                }
            }
        }
        // D°(0, 1) = 0 glues the endpoints.
        assert_eq!(d[0][6], 0.0);
        assert!(d[1][5] <= d_circ(&z, 0.125, 0.0).unwrap() + d_circ(&z, 1.0, 0.75).unwrap());
    }

    #[test]
    fn d_star_shrinks_on_finer_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = brownian_snake_sample(64, &mut rng).unwrap();
        let coarse = [0.1, 0.3, 0.55, 0.8];
        let fine: Vec<f64> = coarse.iter().copied().chain((0..=16).map(|k| k as f64 / 16.0)).collect();
        let dc = d_star_grid(&s.z, &coarse, 1e-9).unwrap();
        let df = d_star_grid(&s.z, &fine, 1e-9).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert!(df[a][b] <= dc[a][b] + 1e-12);
            }
        }
    }

    #[test]
    fn delta_single_vertex_cases() {
        let m = enumerate_maps(1, |_| true).unwrap();
        let edge = m.iter().find(|m| m.n_vertices() == 2).unwrap();
        let enc = bdg_forward(&edge.with_point(Some(edge.root_tail())).unwrap()).unwrap();
        let theta = contour_exploration(&enc.mobile);
        let dist = MapDistances::new(&enc);
        assert_eq!(type1_times(&enc.mobile, &theta), vec![0, 2]);
        assert_eq!(delta(&enc, &dist, &theta, 0, 0).unwrap(), 0);
        assert_eq!(delta_circ(&enc.mobile, &theta, 0, 0).unwrap(), 2.0);
        assert!(delta_circ2(&enc.mobile, &theta, 0, 1).is_err());
    }

    #[test]
    fn delta_bound_on_small_maps() {
        for m in enumerate_maps(4, |_| true).unwrap().iter().flat_map(pointed_variants) {
            let m = match m.classify_sign().unwrap() {
                Sign::Minus => m.reverse_root().unwrap(),
                _ => m,
            };
            let enc = bdg_forward(&m).unwrap();
            assert!(delta_violations(&enc).unwrap().is_empty(), "{}", m.to_text());
        }
    }

    #[test]
    fn delta_bound_on_sampled_maps() {
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let mut s = ConditionedSampler::from_params(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..3 {
            let enc = boltzmann_sample(&mut s, 200, Sign::Plus, &mut rng, 1_000_000).unwrap();
            assert!(delta_violations(&enc).unwrap().is_empty());
        }
    }

    #[test]
    fn fast_circ_matches_direct() {
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let mut s = ConditionedSampler::from_params(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = s.sample(1, 40, &mut rng, 1_000_000).unwrap();
        let theta = contour_exploration(&t);
        let mut pairs = 0;
        for_each_circ2(&t, &theta, |i, j, c| {
            pairs += 1;
            assert_eq!(c, delta_circ2(&t, &theta, i, j).unwrap());
            assert_eq!(c, delta_circ2(&t, &theta, j, i).unwrap());
        });
        let m = type1_times(&t, &theta).len();
        assert_eq!(pairs, m * (m + 1) / 2);
    }

    #[test]
    fn rescaled_matrices() {
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let mut s = ConditionedSampler::from_params(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = boltzmann_sample(&mut s, 101, Sign::Plus, &mut rng, 1_000_000).unwrap();
        let (dc, dm) = rescaled_map_distance_matrix(&enc, 1.0, 100, 20).unwrap();
        let (dc2, dm2) = rescaled_map_distance_matrix(&enc, 2.0, 100, 20).unwrap();
        for a in 0..dc.len() {
            assert_eq!(dm[a][a], 0.0);
            for b in 0..dc.len() {
                assert!(dm[a][b] <= dc[a][b]);
                assert!((dc2[a][b] - 2.0 * dc[a][b]).abs() < 1e-12);
                assert!((dm2[a][b] - 2.0 * dm[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn snake_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = brownian_snake_sample(64, &mut rng).unwrap();
            assert_eq!(s.z.at_grid(0), 0.0);
            assert!(s.is_valid());
        }
        assert!(brownian_snake_sample(7, &mut rng).is_err());
        assert!(s_csv_header(&brownian_snake_sample(4, &mut rng).unwrap()));
    }

    fn s_csv_header(s: &SnakeSample) -> bool {
        s.to_csv().starts_with("s,e,z\n")
    }

    #[test]
    fn snake_variance_matches_excursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut var = [0.0; 3];
        let mut mean_e = [0.0; 3];
        for _ in 0..draws {
            let s = brownian_snake_sample(256, &mut rng).unwrap();
            for (k, x) in [0.25, 0.5, 0.75].into_iter().enumerate() {
                var[k] += s.z.eval(x).unwrap().powi(2);
                mean_e[k] += s.e.eval(x).unwrap();
            }
        }
        for k in 0..3 {
            let rel = (var[k] - mean_e[k]).abs() / mean_e[k];
            assert!(rel < 0.05, "s index {k}: {rel}");
        }
    }

    fn two_point(a: f64) -> FiniteMetricMeasureSpace {
        FiniteMetricMeasureSpace::uniform(vec![vec![0.0, a], vec![a, 0.0]]).unwrap()
    }

    #[test]
    fn gh_examples() {
        assert_eq!(gh_distance_exact(&two_point(1.0), &two_point(3.0)).unwrap(), 1.0);
        assert_eq!(gh_distance_exact(&two_point(2.0), &two_point(2.0)).unwrap(), 0.0);
        let x = two_point(2.0);
        assert_eq!(ghp_distance_exact(&x, &x).unwrap(), 0.0);
        let y = FiniteMetricMeasureSpace::new(vec![vec![0.0, 2.0], vec![2.0, 0.0]], vec![0.8, 0.2]).unwrap();
        assert_eq!(gh_distance_exact(&x, &y).unwrap(), 0.0);
        assert!(ghp_distance_exact(&x, &y).unwrap() > 0.0);
        let big = FiniteMetricMeasureSpace::uniform(vec![vec![0.0; 8]; 8]).unwrap();
        assert!(gh_distance_exact(&big, &x).is_err());
        assert!(FiniteMetricMeasureSpace::uniform(vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]]).is_err());
    }

    #[test]
    fn gh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let x = random_metric_space(4, 6, &mut rng);
            let y = random_metric_space(4, 6, &mut rng);
            let g = gh_distance_exact(&x, &y).unwrap();
            assert_eq!(g, gh_distance_brute_force(&x, &y).unwrap());
            assert_eq!(g, gh_distance_exact(&y, &x).unwrap());
            assert!(ghp_distance_exact(&x, &y).unwrap() >= g);
        }
    }

    proptest! {
        #[test]
        fn d_circ_symmetric(v in prop::collection::vec(-3.0f64..3.0, 2..12), x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let z = PathFunction::new(v).unwrap();
            prop_assert!((d_circ(&z, x, y).unwrap() - d_circ(&z, y, x).unwrap()).abs() < 1e-12);
            prop_assert!(d_circ(&z, x, x).unwrap().abs() < 1e-12);
            prop_assert!(d_circ(&z, x, y).unwrap() >= -1e-12);
        }
    }
}
