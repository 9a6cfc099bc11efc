//! Child reorderings of plane trees, symmetrization, and subtrees spanned by
//! sampled vertices.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tree_core::LabeledTypedTree;

/// One permutation per vertex: `perm(v)[i]` is the new 0-based position of
/// the child at old position `i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PermVector {
    perms: Vec<Vec<usize>>,
}

impl PermVector {
    pub fn identity(t: &LabeledTypedTree) -> Self {
        Self {
            perms: (0..t.len()).map(|v| (0..t.k(v)).collect()).collect(),
        }
    }

    /// Builds a vector from per-vertex permutations in lexicographic vertex order.
    pub fn new(t: &LabeledTypedTree, perms: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self { perms };
        p.check(t)?;
        Ok(p)
    }

    pub fn perm(&self, v: usize) -> &[usize] {
        &self.perms[v]
    }

    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &j)| i == j))
    }

    fn check(&self, t: &LabeledTypedTree) -> Result<()> {
        if self.perms.len() != t.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} permutations for {} vertices",
                self.perms.len(),
                t.len()
            )));
        }
        for (v, p) in self.perms.iter().enumerate() {
            if p.len() != t.k(v) {
                return Err(Error::ShapeMismatch(format!(
                    "vertex {v} has {} children but permutation of length {}",
                    t.k(v),
                    p.len()
                )));
            }
            let mut seen = vec![false; p.len()];
            for &j in p {
                if j >= p.len() || std::mem::replace(&mut seen[j], true) {
                    return Err(Error::ShapeMismatch(format!(
                        "entry at vertex {v} is not a permutation"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `σ(t)` together with the map from old to new vertex indices.
pub fn apply_permutation_mapped(
    t: &LabeledTypedTree,
    sigma: &PermVector,
) -> Result<(LabeledTypedTree, Vec<usize>)> {
    sigma.check(t)?;
    let kids: Vec<Vec<usize>> = (0..t.len())
        .map(|v| {
            let mut out = vec![0; t.k(v)];
            for (i, &c) in t.kids(v).iter().enumerate() {
                out[sigma.perms[v][i]] = c;
            }
            out
        })
        .collect();
    let (nt, order) =
        LabeledTypedTree::from_child_lists(0, &kids, t.types(), t.disp2_full());
    let mut old_to_new = vec![0; t.len()];
    for (new, &old) in order.iter().enumerate() {
        old_to_new[old] = new;
    }
    Ok((nt, old_to_new))
}

/// Reorders the children of every vertex by `sigma`; types and displacements
/// follow their vertices and edges.
pub fn apply_permutation(t: &LabeledTypedTree, sigma: &PermVector) -> Result<LabeledTypedTree> {
    Ok(apply_permutation_mapped(t, sigma)?.0)
}

/// The vector `τ*` bound to `σ(t)` with `τ*_{σ(v)} = σ_v^{-1}`.
pub fn invert_perm(t: &LabeledTypedTree, sigma: &PermVector) -> Result<PermVector> {
    let (_, old_to_new) = apply_permutation_mapped(t, sigma)?;
    let mut perms = vec![Vec::new(); t.len()];
    for v in 0..t.len() {
        let p = &sigma.perms[v];
        let mut inv = vec![0; p.len()];
        for (i, &j) in p.iter().enumerate() {
            inv[j] = i;
        }
        perms[old_to_new[v]] = inv;
    }
    Ok(PermVector { perms })
}

/// Uniform random permutation vector, with the identity at vertices flagged in `fixed`.
pub fn random_perm<R: Rng + ?Sized>(t: &LabeledTypedTree, fixed: &[bool], rng: &mut R) -> PermVector {
    let perms = (0..t.len())
        .map(|v| {
            let mut p: Vec<usize> = (0..t.k(v)).collect();
            if !fixed.get(v).copied().unwrap_or(false) {
                p.shuffle(rng);
            }
            p
        })
        .collect();
    PermVector { perms }
}

/// Draws `σ` uniformly from all permutation vectors of `t` and returns `σ(t)`.
pub fn sample_symmetrization<R: Rng + ?Sized>(t: &LabeledTypedTree, rng: &mut R) -> LabeledTypedTree {
    let sigma = random_perm(t, &[], rng);
    apply_permutation(t, &sigma).expect("bound to t")
}

/// Every permutation vector of `t` that is the identity at the flagged vertices.
pub fn enumerate_perm_vectors(t: &LabeledTypedTree, fixed: &[bool]) -> Vec<PermVector> {
    (0..t.len())
        .map(|v| {
            let k = t.k(v);
            if fixed.get(v).copied().unwrap_or(false) || k < 2 {
                vec![(0..k).collect::<Vec<_>>()]
            } else {
                (0..k).permutations(k).collect()
            }
        })
        .multi_cartesian_product()
        .map(|perms| PermVector { perms })
        .collect()
}

/// Preorder string of `(type, k, doubled displacement)` triples.
pub fn canonical_key(t: &LabeledTypedTree) -> String {
    (0..t.len())
        .map(|v| format!("{},{},{}", t.ty(v), t.k(v), t.disp2(v)))
        .join(";")
}

/// Subtree spanned by sampled vertices and their ancestors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpannedSubtree {
    pub subtree: LabeledTypedTree,
    /// Address in the subtree of each sampled vertex, by sample index.
    pub u: Vec<Vec<u32>>,
    /// Branchpoints as addresses in the original tree, in lexicographic order.
    pub branchpoints: Vec<Vec<u32>>,
    /// Original vertex index of each subtree vertex.
    pub origin: Vec<usize>,
}

impl SpannedSubtree {
    /// Canonical key of `(subtree, U)`.
    pub fn key(&self) -> String {
        let u = self
            .u
            .iter()
            .map(|a| a.iter().join("."))
            .join("|");
        format!("{}#{}", canonical_key(&self.subtree), u)
    }
}

/// Resolves addresses to vertex indices.
pub fn resolve(t: &LabeledTypedTree, addrs: &[Vec<u32>]) -> Result<Vec<usize>> {
    addrs
        .iter()
        .map(|a| {
            t.vertex_of(a)
                .ok_or_else(|| Error::UnknownAddress(crate::tree_core::format_address(a)))
        })
        .collect()
}

fn check_indices(t: &LabeledTypedTree, v: &[usize]) -> Result<()> {
    match v.iter().find(|&&x| x >= t.len()) {
        Some(&x) => Err(Error::UnknownAddress(format!("vertex index {x}"))),
        None => Ok(()),
    }
}

fn marked(t: &LabeledTypedTree, v: &[usize]) -> Vec<bool> {
    let mut m = vec![false; t.len()];
    for &x in v {
        let mut u = x;
        while !m[u] {
            m[u] = true;
            match t.parent(u) {
                Some(p) => u = p,
                None => break,
            }
        }
    }
    m
}

/// Flags the vertices of `t` with at least two distinct children carrying
/// sampled descendants.
pub fn branch_flags(t: &LabeledTypedTree, v: &[usize]) -> Result<Vec<bool>> {
    check_indices(t, v)?;
    let m = marked(t, v);
    Ok((0..t.len())
        .map(|u| t.kids(u).iter().filter(|&&c| m[c]).count() >= 2)
        .collect())
}

/// Branchpoint addresses of the subtree spanned by `v` (vertex indices).
pub fn branchpoints(t: &LabeledTypedTree, v: &[usize]) -> Result<Vec<Vec<u32>>> {
    let f = branch_flags(t, v)?;
    Ok((0..t.len()).filter(|&u| f[u]).map(|u| t.address(u)).collect())
}

/// Subtree spanned by the sampled vertices `v` (vertex indices, repeats allowed).
pub fn spanning_subtree(t: &LabeledTypedTree, v: &[usize]) -> Result<SpannedSubtree> {
    check_indices(t, v)?;
    let m = marked(t, v);
    let kids: Vec<Vec<usize>> = (0..t.len())
        .map(|u| t.kids(u).iter().copied().filter(|&c| m[c]).collect())
        .collect();
    let (subtree, origin) =
        LabeledTypedTree::from_child_lists(0, &kids, t.types(), t.disp2_full());
    let mut to_sub = vec![usize::MAX; t.len()];
    for (i, &o) in origin.iter().enumerate() {
        to_sub[o] = i;
    }
    let u = v.iter().map(|&x| subtree.address(to_sub[x])).collect();
    let branch = (0..subtree.len())
        .filter(|&s| subtree.k(s) >= 2)
        .map(|s| t.address(origin[s]))
        .collect();
    Ok(SpannedSubtree {
        subtree,
        u,
        branchpoints: branch,
        origin,
    })
}

/// Sets the displacement of every subtree edge leaving a vertex with other
/// than one subtree child to zero.
pub fn zero_branch_displacements(sub: &SpannedSubtree) -> SpannedSubtree {
    let t = &sub.subtree;
    let d = (0..t.len())
        .map(|v| match t.parent(v) {
            Some(p) if t.k(p) == 1 => t.disp2(v),
            _ => 0,
        })
        .collect();
    SpannedSubtree {
        subtree: t.with_disp2_full(d),
        ..sub.clone()
    }
}

/// Symmetrizes `t` at every vertex except the branchpoints of the subtree
/// spanned by `v`, zeroing displacements on edges leaving branchpoints.
/// Returns the new tree and the images of the sampled vertices.
pub fn branch_restricted_symmetrize<R: Rng + ?Sized>(
    t: &LabeledTypedTree,
    v: &[usize],
    rng: &mut R,
) -> Result<(LabeledTypedTree, Vec<usize>)> {
    let fixed = branch_flags(t, v)?;
    let sigma = random_perm(t, &fixed, rng);
    branch_restricted_apply(t, v, &fixed, &sigma)
}

/// [`branch_restricted_symmetrize`] with a given permutation vector.
pub fn branch_restricted_apply(
    t: &LabeledTypedTree,
    v: &[usize],
    fixed: &[bool],
    sigma: &PermVector,
) -> Result<(LabeledTypedTree, Vec<usize>)> {
    let zeroed: Vec<i64> = (0..t.len())
        .map(|u| match t.parent(u) {
            Some(p) if fixed[p] => 0,
            _ => t.disp2(u),
        })
        .collect();
    let (nt, old_to_new) = apply_permutation_mapped(&t.with_disp2_full(zeroed), sigma)?;
    Ok((nt, v.iter().map(|&x| old_to_new[x]).collect()))
}
