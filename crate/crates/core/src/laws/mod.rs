//! Valid laws: symmetric tree laws with per-vertex displacement families,
//! multitype Galton-Watson samplers, exact enumeration and centering.

pub mod mobile;

use std::collections::BTreeMap;

use itertools::Itertools;
use num_traits::{One, Zero};
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rational::{factorial, multinomial, qi, to_f64, FiniteDistribution, Q};
use crate::symmetry::{apply_permutation, canonical_key, enumerate_perm_vectors};
use crate::tree_core::{LabeledTypedTree, Type};

pub use mobile::{
    admissible_labelings, check_mobile, mobile_offspring, solve_constants, solve_critical,
    MobileOffspring, MobileParams,
};

/// Parent type and ordered child types.
pub type FamilyKey = (Type, Vec<Type>);

/// Law of a vector of doubled displacements.
pub type DisplacementLaw = FiniteDistribution<Vec<i64>>;

/// Displacement laws indexed by parent type and child-type vector.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DisplacementFamily {
    entries: BTreeMap<FamilyKey, DisplacementLaw>,
}

impl DisplacementFamily {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entry; weights must be positive and sum to 1.
    pub fn insert(&mut self, r: Type, s: Vec<Type>, law: DisplacementLaw) -> Result<()> {
        if law.total() != Q::one() {
            return Err(Error::InvalidParams(format!(
                "weights for ({r}, {s:?}) sum to {}",
                law.total()
            )));
        }
        if let Some(x) = law.keys().find(|x| x.len() != s.len()) {
            return Err(Error::InvalidParams(format!(
                "support point {x:?} has wrong length for ({r}, {s:?})"
            )));
        }
        self.entries.insert((r, s), law);
        Ok(())
    }

    /// Convenience for a point mass.
    pub fn insert_point(&mut self, r: Type, s: Vec<Type>, x: Vec<i64>) -> Result<()> {
        self.insert(r, s, FiniteDistribution::point(x))
    }

    /// Entry for `(r, s)`; the empty child vector always maps to the empty displacement.
    pub fn get(&self, r: Type, s: &[Type]) -> Result<DisplacementLaw> {
        if s.is_empty() {
            return Ok(FiniteDistribution::point(Vec::new()));
        }
        self.entries
            .get(&(r, s.to_vec()))
            .cloned()
            .ok_or_else(|| Error::MissingKey(format!("({r}, {s:?})")))
    }

    pub fn contains(&self, r: Type, s: &[Type]) -> bool {
        s.is_empty() || self.entries.contains_key(&(r, s.to_vec()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FamilyKey, &DisplacementLaw)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Draws a displacement vector for `(r, s)`.
    pub fn sample<R: Rng + ?Sized>(&self, r: Type, s: &[Type], rng: &mut R) -> Result<Vec<i64>> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        let law = self
            .entries
            .get(&(r, s.to_vec()))
            .ok_or_else(|| Error::MissingKey(format!("({r}, {s:?})")))?;
        let mut u: f64 = rng.gen();
        let mut last = None;
        for (x, p) in law.iter() {
            u -= to_f64(p);
            last = Some(x);
            if u < 0.0 {
                return Ok(x.clone());
            }
        }
        Ok(last.expect("nonempty law").clone())
    }
}

/// Moves coordinate `i` of `x` to position `perm[i]`.
fn permute<T: Clone>(x: &[T], perm: &[usize]) -> Vec<T> {
    let mut out = x.to_vec();
    for (i, v) in x.iter().enumerate() {
        out[perm[i]] = v.clone();
    }
    out
}

/// Averages every entry over all simultaneous permutations of child types
/// and displacement coordinates.
pub fn symmetrize_family(fam: &DisplacementFamily) -> Result<DisplacementFamily> {
    let mut out = DisplacementFamily::new();
    for ((r, s), _) in fam.iter() {
        let k = s.len();
        let kf = Q::from_integer(factorial(k));
        let mut law = FiniteDistribution::new();
        for perm in (0..k).permutations(k) {
            let ps = permute(s, &perm);
            let src = fam.get(*r, &ps)?;
            for (y, p) in src.iter() {
                let x: Vec<i64> = (0..k).map(|i| y[perm[i]]).collect();
                law.add(x, p / &kf);
            }
        }
        out.entries.insert((*r, s.clone()), law);
    }
    Ok(out)
}

/// Centering notion tested by [`centering_check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Centering {
    Local,
    Centered,
}

/// Mean vector of one entry (doubled units).
pub fn mean_vector(law: &DisplacementLaw, k: usize) -> Vec<Q> {
    (0..k).map(|i| law.expect(|x| qi(x[i]))).collect()
}

fn count_class(s: &[Type]) -> Vec<(Type, usize)> {
    s.iter().copied().counts().into_iter().sorted().collect()
}

/// Exact centering predicate.
pub fn centering_check(fam: &DisplacementFamily, mode: Centering) -> bool {
    match mode {
        Centering::Local => fam
            .iter()
            .all(|((_, s), law)| mean_vector(law, s.len()).iter().all(|m| m.is_zero())),
        Centering::Centered => {
            let mut sums: BTreeMap<(Type, Vec<(Type, usize)>), Q> = BTreeMap::new();
            for ((r, s), law) in fam.iter() {
                let total = mean_vector(law, s.len()).into_iter().fold(Q::zero(), |a, m| a + m);
                *sums.entry((*r, count_class(s))).or_insert_with(Q::zero) += total;
            }
            sums.values().all(|v| v.is_zero())
        }
    }
}

/// Offspring law: draws the ordered child types of a vertex of a given type.
pub trait Offspring {
    fn draw<R: Rng + ?Sized>(&self, parent: Type, rng: &mut R) -> Vec<Type>;
}

/// Finite-support offspring laws with exact weights.
#[derive(Clone, Debug)]
pub struct OffspringFamily {
    laws: BTreeMap<Type, FiniteDistribution<Vec<Type>>>,
    tables: BTreeMap<Type, (Vec<Vec<Type>>, WeightedIndex<f64>)>,
}

impl PartialEq for OffspringFamily {
    fn eq(&self, other: &Self) -> bool {
        self.laws == other.laws
    }
}

fn not_invariant(s: Type, v: &[Type]) -> Error {
    Error::InvalidParams(format!(
        "offspring law of type {s} is not permutation invariant at {v:?}"
    ))
}

impl OffspringFamily {
    /// Validates normalization and permutation invariance.
    pub fn new(laws: BTreeMap<Type, FiniteDistribution<Vec<Type>>>) -> Result<Self> {
        Self::build(laws, true)
    }

    /// Like [`OffspringFamily::new`] but accepts total mass within `tol` of 1.
    pub fn new_approx(laws: BTreeMap<Type, FiniteDistribution<Vec<Type>>>) -> Result<Self> {
        Self::build(laws, false)
    }

    fn build(laws: BTreeMap<Type, FiniteDistribution<Vec<Type>>>, exact: bool) -> Result<Self> {
        let mut tables = BTreeMap::new();
        for (&s, law) in &laws {
            let total = law.total();
            if exact && total != Q::one() || !exact && (to_f64(&total) - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidParams(format!(
                    "offspring law of type {s} has mass {}",
                    to_f64(&total)
                )));
            }
            // Each multiset class must hold all its arrangements with one mass.
            let mut classes: BTreeMap<Vec<Type>, (usize, &Q, &Vec<Type>)> = BTreeMap::new();
            for (v, p) in law.iter() {
                let mut c = v.clone();
                c.sort_unstable();
                let e = classes.entry(c).or_insert((0, p, v));
                e.0 += 1;
                if e.1 != p {
                    return Err(not_invariant(s, v));
                }
            }
            for (c, (n, _, v)) in &classes {
                let mult: Vec<usize> = c.iter().dedup_with_count().map(|(m, _)| m).collect();
                if multinomial(c.len(), &mult) != num_bigint::BigInt::from(*n) {
                    return Err(not_invariant(s, v));
                }
            }
            let outcomes: Vec<Vec<Type>> = law.keys().cloned().collect();
            let weights: Vec<f64> = law.iter().map(|(_, p)| to_f64(p)).collect();
            let wi = WeightedIndex::new(weights)
                .map_err(|e| Error::InvalidParams(format!("type {s}: {e}")))?;
            tables.insert(s, (outcomes, wi));
        }
        Ok(Self { laws, tables })
    }

    pub fn law(&self, s: Type) -> Option<&FiniteDistribution<Vec<Type>>> {
        self.laws.get(&s)
    }

    pub fn types(&self) -> impl Iterator<Item = Type> + '_ {
        self.laws.keys().copied()
    }

    /// Single-type family from a law on child counts.
    pub fn single_type(counts: &[(usize, Q)]) -> Result<Self> {
        let mut law = FiniteDistribution::new();
        for (k, p) in counts {
            law.add(vec![0; *k], p.clone());
        }
        Self::new(BTreeMap::from([(0, law)]))
    }
}

impl Offspring for OffspringFamily {
    fn draw<R: Rng + ?Sized>(&self, parent: Type, rng: &mut R) -> Vec<Type> {
        match self.tables.get(&parent) {
            Some((outcomes, wi)) => outcomes[wi.sample(rng)].clone(),
            None => Vec::new(),
        }
    }
}

/// Breadth-first Galton-Watson sample with zero displacements. Aborts with
/// [`Error::Overflow`] once the population exceeds `vertex_cap`.
pub fn gw_sample<O: Offspring, R: Rng + ?Sized>(
    off: &O,
    root_type: Type,
    rng: &mut R,
    vertex_cap: usize,
) -> Result<LabeledTypedTree> {
    gw_sample_limited(off, root_type, rng, vertex_cap, None)
}

fn gw_sample_limited<O: Offspring, R: Rng + ?Sized>(
    off: &O,
    root_type: Type,
    rng: &mut R,
    vertex_cap: usize,
    limit: Option<(Type, usize)>,
) -> Result<LabeledTypedTree> {
    let mut types = vec![root_type];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new()];
    let mut count = usize::from(limit.is_some_and(|(q, _)| q == root_type));
    let mut next = 0;
    while next < types.len() {
        let c = off.draw(types[next], rng);
        for ty in c {
            if types.len() >= vertex_cap {
                return Err(Error::Overflow {
                    partial: types.len() + 1,
                });
            }
            if let Some((q, m)) = limit {
                if ty == q {
                    count += 1;
                    if count > m {
                        return Err(Error::Overflow {
                            partial: types.len() + 1,
                        });
                    }
                }
            }
            kids[next].push(types.len());
            types.push(ty);
            kids.push(Vec::new());
        }
        next += 1;
    }
    let zeros = vec![0; types.len()];
    Ok(LabeledTypedTree::from_child_lists(0, &kids, &types, &zeros).0)
}

/// Rejection sampler for a Galton-Watson tree with exactly `target.1`
/// vertices of type `target.0`. Overflowing draws count as rejections.
pub fn gw_sample_conditioned<O: Offspring, R: Rng + ?Sized>(
    off: &O,
    root_type: Type,
    target: (Type, usize),
    rng: &mut R,
    attempt_cap: u64,
    vertex_cap: usize,
) -> Result<LabeledTypedTree> {
    for _ in 0..attempt_cap {
        match gw_sample_limited(off, root_type, rng, vertex_cap, Some(target)) {
            Ok(t) => {
                let c = t.types().iter().filter(|&&x| x == target.0).count();
                if c == target.1 {
                    return Ok(t);
                }
            }
            Err(Error::Overflow { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::Exhausted {
        attempts: attempt_cap,
    })
}

/// Law of the tree shape in a valid law.
#[derive(Clone, Debug, PartialEq)]
pub enum TreeLaw {
    /// Explicit shapes (displacements ignored) with probabilities.
    Explicit(Vec<(LabeledTypedTree, Q)>),
    /// Galton-Watson law, optionally restricted to at most `max_vertices`
    /// vertices and renormalized.
    GaltonWatson {
        offspring: OffspringFamily,
        root: Type,
        max_vertices: Option<usize>,
    },
}

/// Symmetric tree law together with a displacement family.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidLaw {
    pub name: String,
    pub trees: TreeLaw,
    pub displacements: DisplacementFamily,
}

impl ValidLaw {
    /// Checks symmetry of explicit tree laws and coverage of the family.
    pub fn validate(&self, max_vertices: usize) -> Result<()> {
        let shapes = enumerate_shapes(&self.trees, max_vertices, 1_000_000)?;
        let table: BTreeMap<String, Q> = shapes
            .iter()
            .map(|(t, p)| (canonical_key(t), p.clone()))
            .collect();
        for (t, p) in &shapes {
            for v in 0..t.len() {
                if !self.displacements.contains(t.ty(v), &t.ctype(v)) {
                    return Err(Error::MissingKey(format!("({}, {:?})", t.ty(v), t.ctype(v))));
                }
            }
            if t.len() <= 8 {
                for sigma in enumerate_perm_vectors(t, &[]) {
                    let st = apply_permutation(t, &sigma)?;
                    if table.get(&canonical_key(&st)) != Some(p) {
                        return Err(Error::InvalidParams(format!(
                            "tree law of {} is not symmetric",
                            self.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Exact shape law (zero displacements). GW laws are truncated at
/// `max_vertices`, and renormalized when the law carries its own bound.
pub fn enumerate_shapes(
    law: &TreeLaw,
    max_vertices: usize,
    cap: usize,
) -> Result<Vec<(LabeledTypedTree, Q)>> {
    match law {
        TreeLaw::Explicit(list) => Ok(list
            .iter()
            .filter(|(t, _)| t.len() <= max_vertices)
            .map(|(t, p)| (t.unlabeled(), p.clone()))
            .collect()),
        TreeLaw::GaltonWatson {
            offspring,
            root,
            max_vertices: own,
        } => {
            let m = own.map_or(max_vertices, |b| b.min(max_vertices));
            let mut out = Vec::new();
            let mut types = vec![*root];
            let mut kids = vec![Vec::new()];
            gw_expand(offspring, &mut types, &mut kids, 0, Q::one(), m, cap, &mut out)?;
            if own.is_some() {
                let total = out.iter().fold(Q::zero(), |a, (_, p)| a + p);
                for (_, p) in out.iter_mut() {
                    *p = &*p / &total;
                }
            }
            Ok(out)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn gw_expand(
    off: &OffspringFamily,
    types: &mut Vec<Type>,
    kids: &mut Vec<Vec<usize>>,
    next: usize,
    prob: Q,
    max: usize,
    cap: usize,
    out: &mut Vec<(LabeledTypedTree, Q)>,
) -> Result<()> {
    if next == types.len() {
        if out.len() >= cap {
            return Err(Error::CapExceeded(out.len()));
        }
        let zeros = vec![0; types.len()];
        out.push((LabeledTypedTree::from_child_lists(0, kids, types, &zeros).0, prob));
        return Ok(());
    }
    let Some(law) = off.law(types[next]) else {
        return gw_expand(off, types, kids, next + 1, prob, max, cap, out);
    };
    for (c, p) in law.iter() {
        if types.len() + c.len() > max {
            continue;
        }
        let mark = types.len();
        for &ty in c {
            kids[next].push(types.len());
            types.push(ty);
            kids.push(Vec::new());
        }
        gw_expand(off, types, kids, next + 1, &prob * p, max, cap, out)?;
        types.truncate(mark);
        kids.truncate(mark);
        kids[next].clear();
    }
    Ok(())
}

/// All labelings of a shape with their conditional probabilities.
pub fn labelings(
    t: &LabeledTypedTree,
    fam: &DisplacementFamily,
    cap: usize,
) -> Result<Vec<(LabeledTypedTree, Q)>> {
    let mut partial: Vec<(Vec<i64>, Q)> = vec![(vec![0; t.len()], Q::one())];
    for v in 0..t.len() {
        if t.k(v) == 0 {
            continue;
        }
        let law = fam.get(t.ty(v), &t.ctype(v))?;
        let mut next = Vec::with_capacity(partial.len() * law.len());
        for (d, p) in &partial {
            for (x, px) in law.iter() {
                let mut d2 = d.clone();
                for (&c, &xi) in t.kids(v).iter().zip(x) {
                    d2[c] = xi;
                }
                next.push((d2, p * px));
            }
        }
        if next.len() > cap {
            return Err(Error::CapExceeded(next.len()));
        }
        partial = next;
    }
    Ok(partial
        .into_iter()
        .map(|(d, p)| (t.with_disp2_full(d), p))
        .collect())
}

/// Exact joint law of shape and displacements, as labeled trees with probabilities.
pub fn enumerate_labeled(
    law: &ValidLaw,
    max_vertices: usize,
    cap: usize,
) -> Result<Vec<(LabeledTypedTree, Q)>> {
    let mut out = Vec::new();
    for (t, p) in enumerate_shapes(&law.trees, max_vertices, cap)? {
        for (lt, pl) in labelings(&t, &law.displacements, cap)? {
            out.push((lt, &p * pl));
            if out.len() > cap {
                return Err(Error::CapExceeded(out.len()));
            }
        }
    }
    Ok(out)
}

/// Exact law keyed by canonical serialization.
pub fn exact_law_enumeration(
    law: &ValidLaw,
    max_vertices: usize,
    cap: usize,
) -> Result<FiniteDistribution<String>> {
    let mut d = FiniteDistribution::new();
    for (t, p) in enumerate_labeled(law, max_vertices, cap)? {
        d.add(canonical_key(&t), p);
    }
    Ok(d)
}

/// Samples the shape, then independent displacement vectors per vertex.
pub fn valid_sample<R: Rng + ?Sized>(law: &ValidLaw, rng: &mut R) -> Result<LabeledTypedTree> {
    let shape = match &law.trees {
        TreeLaw::Explicit(list) => {
            let wi = WeightedIndex::new(list.iter().map(|(_, p)| to_f64(p)))
                .map_err(|e| Error::InvalidParams(e.to_string()))?;
            list[wi.sample(rng)].0.unlabeled()
        }
        TreeLaw::GaltonWatson {
            offspring,
            root,
            max_vertices,
        } => {
            let cap = max_vertices.unwrap_or(usize::MAX);
            loop {
                match gw_sample(offspring, *root, rng, cap) {
                    Ok(t) => break t,
                    Err(Error::Overflow { .. }) if max_vertices.is_some() => continue,
                    Err(e) => return Err(e),
                }
            }
        }
    };
    label_shape(&shape, &law.displacements, rng)
}

/// Draws displacements independently per vertex for a fixed shape.
pub fn label_shape<R: Rng + ?Sized>(
    t: &LabeledTypedTree,
    fam: &DisplacementFamily,
    rng: &mut R,
) -> Result<LabeledTypedTree> {
    let mut d = vec![0; t.len()];
    for v in 0..t.len() {
        if t.k(v) == 0 {
            continue;
        }
        let x = fam.sample(t.ty(v), &t.ctype(v), rng)?;
        for (&c, xi) in t.kids(v).iter().zip(x) {
            d[c] = xi;
        }
    }
    Ok(t.with_disp2_full(d))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rational::q;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn binary_gw() -> OffspringFamily {
        OffspringFamily::single_type(&[(0, q(1, 2)), (2, q(1, 2))]).unwrap()
    }

    fn star_ab() -> LabeledTypedTree {
        LabeledTypedTree::new(vec![0, 1, 1], vec![2, 0, 0], vec![0, 0]).unwrap()
    }

    #[test]
    fn symmetrize_examples() {
        let mut fam = DisplacementFamily::new();
        fam.insert(
            0,
            vec![1],
            FiniteDistribution::uniform([vec![2], vec![-2]]),
        )
        .unwrap();
        assert_eq!(symmetrize_family(&fam).unwrap(), fam);

        let mut ab = DisplacementFamily::new();
        ab.insert_point(0, vec![1, 2], vec![2, 4]).unwrap();
        ab.insert_point(0, vec![2, 1], vec![4, 2]).unwrap();
        let s = symmetrize_family(&ab).unwrap();
        assert_eq!(s.get(0, &[1, 2]).unwrap(), FiniteDistribution::point(vec![2, 4]));

        let mut aa = DisplacementFamily::new();
        aa.insert_point(0, vec![1, 1], vec![2, 4]).unwrap();
        let s = symmetrize_family(&aa).unwrap();
        assert_eq!(
            s.get(0, &[1, 1]).unwrap(),
            FiniteDistribution::uniform([vec![2, 4], vec![4, 2]])
        );
        assert_eq!(symmetrize_family(&s).unwrap(), s);

        let mut missing = DisplacementFamily::new();
        missing.insert_point(0, vec![1, 2], vec![2, 4]).unwrap();
        assert!(matches!(symmetrize_family(&missing), Err(Error::MissingKey(_))));
    }

    #[test]
    fn centering_examples() {
        let mut zero = DisplacementFamily::new();
        zero.insert_point(0, vec![1, 2], vec![0, 0]).unwrap();
        zero.insert_point(0, vec![2, 1], vec![0, 0]).unwrap();
        assert!(centering_check(&zero, Centering::Local));
        assert!(centering_check(&zero, Centering::Centered));

        let mut w = DisplacementFamily::new();
        w.insert_point(0, vec![1, 2], vec![2, -2]).unwrap();
        w.insert_point(0, vec![2, 1], vec![-2, 2]).unwrap();
        assert!(!centering_check(&w, Centering::Local));
        assert!(centering_check(&w, Centering::Centered));
        // Each child keeps a type-dependent mean after symmetrization.
        assert!(!centering_check(&symmetrize_family(&w).unwrap(), Centering::Local));
    }

    #[test]
    fn insert_rejects_bad_entries() {
        let mut fam = DisplacementFamily::new();
        let mut half = FiniteDistribution::new();
        half.add(vec![0], q(1, 2));
        assert!(fam.insert(0, vec![1], half).is_err());
        assert!(fam.insert_point(0, vec![1], vec![0, 0]).is_err());
    }

    #[test]
    fn gw_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let leaf = OffspringFamily::single_type(&[(0, q(1, 1))]).unwrap();
        assert_eq!(gw_sample(&leaf, 0, &mut rng, 10).unwrap().len(), 1);

        let b = binary_gw();
        let n = 100_000;
        let (mut one, mut three) = (0, 0);
        for _ in 0..n {
            match gw_sample(&b, 0, &mut rng, 1000) {
                Ok(t) if t.len() == 1 => one += 1,
                Ok(t) if t.len() == 3 => three += 1,
                _ => {}
            }
        }
        assert!((one as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!((three as f64 / n as f64 - 0.125).abs() < 0.005);

        let sup = OffspringFamily::single_type(&[(3, q(1, 1))]).unwrap();
        assert!(matches!(gw_sample(&sup, 0, &mut rng, 50), Err(Error::Overflow { .. })));
    }

    #[test]
    fn conditioned_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = binary_gw();
        assert!(matches!(
            gw_sample_conditioned(&b, 0, (0, 4), &mut rng, 500, 100),
            Err(Error::Exhausted { attempts: 500 })
        ));
        for _ in 0..20 {
            let t = gw_sample_conditioned(&b, 0, (0, 3), &mut rng, 10_000, 100).unwrap();
            assert_eq!(t.child_counts(), &[2, 0, 0]);
        }
    }

    #[test]
    fn valid_sample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut point = DisplacementFamily::new();
        point.insert_point(0, vec![1, 1], vec![2, 4]).unwrap();
        let law = ValidLaw {
            name: "star point".into(),
            trees: TreeLaw::Explicit(vec![(star_ab(), q(1, 1))]),
            displacements: point,
        };
        assert_eq!(valid_sample(&law, &mut rng).unwrap().child_disp2(0), vec![2, 4]);

        let mut two = DisplacementFamily::new();
        two.insert(0, vec![1, 1], FiniteDistribution::uniform([vec![2, 4], vec![4, 2]]))
            .unwrap();
        let law2 = ValidLaw {
            name: "star two".into(),
            trees: TreeLaw::Explicit(vec![(star_ab(), q(1, 1))]),
            displacements: two,
        };
        let hits = (0..10_000)
            .filter(|_| valid_sample(&law2, &mut rng).unwrap().child_disp2(0) == vec![2, 4])
            .count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.03);
        let d = exact_law_enumeration(&law2, 5, 100).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.iter().next().unwrap().1, &q(1, 2));

        let empty = ValidLaw {
            name: "missing".into(),
            trees: TreeLaw::Explicit(vec![(star_ab(), q(1, 1))]),
            displacements: DisplacementFamily::new(),
        };
        assert!(matches!(valid_sample(&empty, &mut rng), Err(Error::MissingKey(_))));
    }

    #[test]
    fn two_level_product_law() {
        let t = LabeledTypedTree::new(vec![0, 0, 0], vec![1, 1, 0], vec![0, 0]).unwrap();
        let mut fam = DisplacementFamily::new();
        fam.insert(0, vec![0], FiniteDistribution::uniform([vec![-2], vec![0], vec![2]]))
            .unwrap();
        let law = ValidLaw {
            name: "path".into(),
            trees: TreeLaw::Explicit(vec![(t, q(1, 1))]),
            displacements: fam,
        };
        let d = exact_law_enumeration(&law, 5, 100).unwrap();
        assert_eq!(d.len(), 9);
        assert!(d.iter().all(|(_, p)| p == &q(1, 9)));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..9000 {
            *counts.entry(canonical_key(&valid_sample(&law, &mut rng).unwrap())).or_default() += 1;
        }
        assert_eq!(counts.len(), 9);
        assert!(counts.values().all(|&c| (c as f64 - 1000.0).abs() < 150.0));
    }

    #[test]
    fn truncated_binary_probabilities() {
        let law = TreeLaw::GaltonWatson {
            offspring: binary_gw(),
            root: 0,
            max_vertices: None,
        };
        let shapes = enumerate_shapes(&law, 5, 1000).unwrap();
        let by_size = |n: usize| -> Vec<Q> {
            shapes.iter().filter(|(t, _)| t.len() == n).map(|(_, p)| p.clone()).collect()
        };
        assert_eq!(by_size(1), vec![q(1, 2)]);
        assert_eq!(by_size(3), vec![q(1, 8)]);
        assert_eq!(by_size(5), vec![q(1, 32), q(1, 32)]);
    }

    #[test]
    fn gw_conditional_symmetry() {
        let mut s = FiniteDistribution::new();
        s.add(vec![], q(1, 2));
        s.add(vec![1, 2], q(1, 8));
        s.add(vec![2, 1], q(1, 8));
        s.add(vec![1, 1, 2], q(1, 12));
        s.add(vec![1, 2, 1], q(1, 12));
        s.add(vec![2, 1, 1], q(1, 12));
        let mut leaf = FiniteDistribution::new();
        leaf.add(vec![], q(2, 3));
        leaf.add(vec![1], q(1, 3));
        let off = OffspringFamily::new(BTreeMap::from([(0, s.clone()), (1, s), (2, leaf)])).unwrap();
        let tl = TreeLaw::GaltonWatson {
            offspring: off,
            root: 0,
            max_vertices: Some(7),
        };
        let law = ValidLaw {
            name: "sym".into(),
            trees: tl,
            displacements: DisplacementFamily::new(),
        };
        let shapes = enumerate_shapes(&law.trees, 7, 100_000).unwrap();
        assert!(shapes.len() > 10);
        let table: BTreeMap<String, Q> =
            shapes.iter().map(|(t, p)| (canonical_key(t), p.clone())).collect();
        for (t, p) in &shapes {
            for sigma in enumerate_perm_vectors(t, &[]) {
                let st = apply_permutation(t, &sigma).unwrap();
                assert_eq!(table.get(&canonical_key(&st)), Some(p));
            }
        }
    }

    #[test]
    fn offspring_family_rejects_asymmetric_laws() {
        let mut s = FiniteDistribution::new();
        s.add(vec![], q(1, 2));
        s.add(vec![1, 2], q(1, 2));
        assert!(OffspringFamily::new(BTreeMap::from([(0, s)])).is_err());
    }

    #[test]
    fn conditioned_validity_factorizes() {
        let mut fam = DisplacementFamily::new();
        fam.insert(0, vec![0, 0], FiniteDistribution::uniform([vec![2, -2], vec![0, 0], vec![-4, 2]]))
            .unwrap();
        let law = ValidLaw {
            name: "binary".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: binary_gw(),
                root: 0,
                max_vertices: Some(5),
            },
            displacements: fam.clone(),
        };
        let shapes = enumerate_shapes(&law.trees, 5, 1000).unwrap();
        let joint = enumerate_labeled(&law, 5, 10_000).unwrap();
        for (lt, p) in &joint {
            let shape = lt.unlabeled();
            let ps = &shapes.iter().find(|(s, _)| *s == shape).unwrap().1;
            let prod = (0..lt.len())
                .filter(|&v| lt.k(v) > 0)
                .fold(Q::one(), |a, v| a * fam.get(0, &lt.ctype(v)).unwrap().get(&lt.child_disp2(v)));
            assert_eq!(p, &(ps * prod));
        }
        let total = joint.iter().fold(Q::zero(), |a, (_, p)| a + p);
        assert_eq!(total, Q::one());
    }
}
