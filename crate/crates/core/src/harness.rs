//! Verification suites: exact distributional oracles, finite-n comparisons
//! of trees with their symmetrizations, scaling fits and bijection audits.
//! Every suite produces [`TestReport`]s and is deterministic given its seed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::mobile::{
    admissible_list, bdg_displacement_family, mobile_offspring, size_feasible, solve_constants, solve_critical,
    ConditionedSampler, MobileOffspring,
};
use crate::laws::{
    centering_check, enumerate_labeled, mean_vector, symmetrize_family, Centering, DisplacementFamily,
    OffspringFamily, TreeLaw, ValidLaw,
};
use crate::maps::{
    bdg_forward, bdg_inverse, boltzmann_sample, count_mobiles, degrees_in, enumerate_maps, pointed_variants,
    HalfEdgeMap, Sign, WeightSeq,
};
use crate::metrics::{
    brownian_snake_sample, delta_violations, dyck_path, gh_distance_brute_force, gh_distance_exact,
    random_metric_space, FiniteMetricMeasureSpace,
};
use crate::rational::{q, qi, to_f64, FiniteDistribution, Q};
use crate::symmetry::{
    apply_permutation, enumerate_perm_vectors, random_perm, sample_symmetrization, spanning_subtree,
    zero_branch_displacements, canonical_key,
};
use crate::tree_core::{
    contour_exploration, contour_process, dist_on_contour, label_process, time_change_bounds, type_count_process,
    LabeledTypedTree, Type,
};

/// Kind of decision behind a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `statistic` counts failures; passes when it is at most `threshold`.
    Exact,
    /// `statistic` is a p-value; passes when it exceeds `threshold`.
    ChiSquare,
    Ks,
    Energy,
    /// `statistic` is an estimate; passes when within `threshold` of `target`.
    Regression,
    /// `statistic` is a relative error; passes when at most `threshold`.
    Tolerance,
}

/// Outcome of one verification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub mode: Mode,
    pub statistic: f64,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    pub pass: bool,
    /// For a negative control, `pass` means the underlying test rejected.
    #[serde(default)]
    pub negative_control: bool,
    pub sizes: Vec<usize>,
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl TestReport {
    fn new(name: impl Into<String>, mode: Mode, statistic: f64, threshold: f64) -> Self {
        let mut r = Self {
            name: name.into(),
            mode,
            statistic,
            threshold,
            target: None,
            pass: false,
            negative_control: false,
            sizes: Vec::new(),
            seed: None,
            details: Vec::new(),
        };
        r.pass = r.accepts();
        r
    }

    fn regression(name: impl Into<String>, estimate: f64, target: f64, tol: f64) -> Self {
        let mut r = Self::new(name, Mode::Regression, estimate, tol);
        r.target = Some(target);
        r.pass = r.accepts();
        r
    }

    /// Whether the statistic is on the accepting side of the threshold.
    pub fn accepts(&self) -> bool {
        let s = self.statistic;
        match self.mode {
            Mode::Exact | Mode::Tolerance => s <= self.threshold,
            Mode::ChiSquare | Mode::Ks | Mode::Energy => s > self.threshold,
            Mode::Regression => (s - self.target.unwrap_or(f64::NAN)).abs() <= self.threshold,
        }
    }

    /// Invariant: the pass flag agrees with statistic and threshold.
    pub fn is_consistent(&self) -> bool {
        self.pass == (self.accepts() != self.negative_control)
    }

    fn as_negative_control(mut self) -> Self {
        self.negative_control = true;
        self.pass = !self.accepts();
        self
    }

    fn with_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sizes = sizes;
        self
    }

    fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn with_details(mut self, details: Vec<String>) -> Self {
        self.details = details;
        self
    }
}

impl fmt::Display for TestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({:?}: statistic {:.6}, threshold {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.mode,
            self.statistic,
            self.threshold
        )?;
        if let Some(t) = self.target {
            write!(f, ", target {t}")?;
        }
        write!(f, ")")
    }
}

/// Exact law of `(T(R), D⟨R⟩, U(R))` for `R` uniform of length `k`.
pub fn sampled_structure_law(labeled: &[(LabeledTypedTree, Q)], k: usize) -> Result<FiniteDistribution<String>> {
    let mut out = FiniteDistribution::new();
    for (t, p) in labeled {
        let n = t.len();
        let each = p / Q::from_integer(num_bigint::BigInt::from(n).pow(k as u32));
        let mut r = vec![0usize; k];
        loop {
            let sub = zero_branch_displacements(&spanning_subtree(t, &r)?);
            out.add(sub.key(), each.clone());
            // Odometer over V(t)^k.
            let mut i = 0;
            while i < k && r[i] + 1 == n {
                r[i] = 0;
                i += 1;
            }
            if i == k {
                break;
            }
            r[i] += 1;
        }
    }
    Ok(out)
}

/// Exact law of the symmetrization of a labeled tree law, merged by key.
pub fn symmetrized_law(labeled: &[(LabeledTypedTree, Q)]) -> Result<Vec<(LabeledTypedTree, Q)>> {
    let mut merged: BTreeMap<String, (LabeledTypedTree, Q)> = BTreeMap::new();
    for (t, p) in labeled {
        let perms = enumerate_perm_vectors(t, &[]);
        let each = p / qi(perms.len() as i64);
        for sigma in &perms {
            let st = apply_permutation(t, sigma)?;
            merged
                .entry(canonical_key(&st))
                .and_modify(|e| e.1 += &each)
                .or_insert((st, each.clone()));
        }
    }
    Ok(merged.into_values().collect())
}

/// Exact comparison of sampled structure laws of a labeled tree law and
/// its symmetrization.
pub fn eqdist_compare(name: &str, labeled: &[(LabeledTypedTree, Q)], k: usize) -> Result<TestReport> {
    let lhs = sampled_structure_law(labeled, k)?;
    let rhs = sampled_structure_law(&symmetrized_law(labeled)?, k)?;
    let mut differing = Vec::new();
    let mut tv = Q::from_integer(0.into());
    let keys: std::collections::BTreeSet<&String> = lhs.keys().chain(rhs.keys()).collect();
    for key in keys {
        let d = lhs.get(key) - rhs.get(key);
        if d != Q::from_integer(0.into()) {
            tv += crate::rational::abs(&d);
            if differing.len() < 5 {
                differing.push(format!("{key}: {} vs {}", lhs.get(key), rhs.get(key)));
            }
        }
    }
    let count = lhs.keys().chain(rhs.keys()).filter(|key| lhs.get(key) != rhs.get(key)).count() / 2
        + usize::from(false);
    let mut details = vec![format!("outcomes {} / {}", lhs.len(), rhs.len())];
    if !differing.is_empty() {
        details.push(format!("total variation {}", to_f64(&tv) / 2.0));
        details.extend(differing);
    }
    Ok(TestReport::new(format!("eqdist/{name}/k={k}"), Mode::Exact, count as f64, 0.0)
        .with_sizes(vec![labeled.len(), lhs.len()])
        .with_details(details))
}

/// Exact equality in law of sampled structures for a valid law with trees
/// of at most `max_vertices` vertices.
pub fn eqdist_check(law: &ValidLaw, k: usize, max_vertices: usize) -> Result<TestReport> {
    law.validate(max_vertices)?;
    let labeled = enumerate_labeled(law, max_vertices, 2_000_000)?;
    let mut r = eqdist_compare(&law.name, &labeled, k)?;
    r.sizes.insert(0, max_vertices);
    Ok(r)
}

fn tree(types: &[Type], children: &[usize], disp2: &[i64]) -> LabeledTypedTree {
    LabeledTypedTree::new(types.to_vec(), children.to_vec(), disp2.to_vec()).expect("well-formed corpus tree")
}

fn point_family(entries: &[(Type, &[Type], &[&[i64]])]) -> DisplacementFamily {
    let mut fam = DisplacementFamily::new();
    for (r, s, support) in entries {
        let law = FiniteDistribution::uniform(support.iter().map(|x| x.to_vec()));
        fam.insert(*r, s.to_vec(), law).expect("lengths match child types");
    }
    fam
}

fn family(laws: &[(Type, &[(&[Type], Q)])]) -> OffspringFamily {
    let mut m = BTreeMap::new();
    for (ty, list) in laws {
        let mut d = FiniteDistribution::new();
        for (c, p) in list.iter() {
            d.add(c.to_vec(), p.clone());
        }
        m.insert(*ty, d);
    }
    OffspringFamily::new(m).expect("normalized corpus family")
}

/// Critical mobile law of a single face degree, as a finite valid law.
fn mobile_law(name: &str, degree: usize, max_children: usize) -> Result<ValidLaw> {
    let (_, params) = solve_critical(&WeightSeq::single(degree, 1.0))?;
    let off = mobile_offspring(&params)?.truncated_family(60)?;
    Ok(ValidLaw {
        name: name.into(),
        trees: TreeLaw::GaltonWatson {
            offspring: off,
            root: 1,
            max_vertices: None,
        },
        displacements: bdg_displacement_family(max_children)?,
    })
}

/// Built-in corpus of valid laws: single-type and multitype, explicit and
/// Galton-Watson shapes, repeated child types and two mobile laws.
pub fn eqdist_corpus() -> Result<Vec<ValidLaw>> {
    let binary = OffspringFamily::single_type(&[(0, q(1, 2)), (2, q(1, 2))])?;
    let star = tree(&[0, 0, 0], &[2, 0, 0], &[0, 0]);
    let plane4 = vec![
        tree(&[0; 4], &[3, 0, 0, 0], &[0; 3]),
        tree(&[0; 4], &[2, 1, 0, 0], &[0; 3]),
        tree(&[0; 4], &[2, 0, 1, 0], &[0; 3]),
        tree(&[0; 4], &[1, 2, 0, 0], &[0; 3]),
        tree(&[0; 4], &[1, 1, 1, 0], &[0; 3]),
    ];
    let two_type_shapes = vec![
        (tree(&[1, 1, 2, 2], &[2, 1, 0, 0], &[0; 3]), q(1, 2)),
        (tree(&[1, 2, 1, 2], &[2, 0, 1, 0], &[0; 3]), q(1, 2)),
    ];
    Ok(vec![
        ValidLaw {
            name: "star-deterministic".into(),
            trees: TreeLaw::Explicit(vec![(star, qi(1))]),
            displacements: point_family(&[(0, &[0, 0], &[&[2, 4]])]),
        },
        ValidLaw {
            name: "binary-zero".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: binary.clone(),
                root: 0,
                max_vertices: None,
            },
            displacements: point_family(&[(0, &[0, 0], &[&[0, 0]])]),
        },
        ValidLaw {
            name: "binary-asymmetric".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: binary,
                root: 0,
                max_vertices: None,
            },
            displacements: point_family(&[(0, &[0, 0], &[&[-2, 0], &[0, 2], &[2, 2]])]),
        },
        ValidLaw {
            name: "path-truncated".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: OffspringFamily::single_type(&[(0, q(1, 2)), (1, q(1, 2))])?,
                root: 0,
                max_vertices: Some(6),
            },
            displacements: point_family(&[(0, &[0], &[&[2], &[-2]])]),
        },
        ValidLaw {
            name: "ternary-sibling-correlated".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: OffspringFamily::single_type(&[(0, q(1, 2)), (1, q(1, 4)), (3, q(1, 4))])?,
                root: 0,
                max_vertices: None,
            },
            displacements: point_family(&[
                (0, &[0], &[&[-2], &[2]]),
                (0, &[0, 0, 0], &[&[2, -2, 0], &[0, 0, 4]]),
            ]),
        },
        ValidLaw {
            name: "uniform-plane-4".into(),
            trees: TreeLaw::Explicit(plane4.into_iter().map(|t| (t, q(1, 5))).collect()),
            displacements: point_family(&[
                (0, &[0], &[&[2], &[-2], &[0]]),
                (0, &[0, 0], &[&[2, -2]]),
                (0, &[0, 0, 0], &[&[2, 0, 0], &[0, 4, -2]]),
            ]),
        },
        ValidLaw {
            name: "two-type-explicit".into(),
            trees: TreeLaw::Explicit(two_type_shapes),
            displacements: point_family(&[
                (1, &[1, 2], &[&[2, -2]]),
                (1, &[2, 1], &[&[0, 0], &[4, 2]]),
                (1, &[2], &[&[1], &[-1]]),
            ]),
        },
        ValidLaw {
            name: "two-type-gw".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: family(&[
                    (1, &[(&[], q(1, 2)), (&[1, 2], q(1, 8)), (&[2, 1], q(1, 8)), (&[2, 2], q(1, 4))]),
                    (2, &[(&[], q(2, 3)), (&[1], q(1, 3))]),
                ]),
                root: 1,
                max_vertices: None,
            },
            displacements: point_family(&[
                (1, &[1, 2], &[&[2, 0], &[-2, 2]]),
                (1, &[2, 1], &[&[0, 0]]),
                (1, &[2, 2], &[&[1, -1], &[3, 3]]),
                (2, &[1], &[&[2], &[0]]),
            ]),
        },
        ValidLaw {
            name: "repeated-types".into(),
            trees: TreeLaw::GaltonWatson {
                offspring: family(&[
                    (
                        1,
                        &[(&[], q(1, 2)), (&[1, 1, 2], q(1, 6)), (&[1, 2, 1], q(1, 6)), (&[2, 1, 1], q(1, 6))],
                    ),
                    (2, &[(&[], qi(1))]),
                ]),
                root: 1,
                max_vertices: None,
            },
            displacements: point_family(&[
                (1, &[1, 1, 2], &[&[2, -2, 0], &[0, 0, 2]]),
                (1, &[1, 2, 1], &[&[2, 2, 2]]),
                (1, &[2, 1, 1], &[&[-2, 0, 4]]),
            ]),
        },
        mobile_law("mobile-quadrangulation", 4, 6)?,
        mobile_law("mobile-pentagon", 5, 6)?,
    ])
}

/// A labeled law that is not valid: the displacement below the deeper child
/// of the root depends on whether that child comes first.
pub fn eqdist_counterexample() -> Vec<(LabeledTypedTree, Q)> {
    vec![
        (tree(&[0; 4], &[2, 1, 0, 0], &[0, 2, 0]), q(1, 2)),
        (tree(&[0; 4], &[2, 0, 1, 0], &[0, 0, 0]), q(1, 2)),
    ]
}

/// Source of random trees for finite-n comparisons.
pub trait TreeEnsemble {
    fn name(&self) -> String;
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<LabeledTypedTree>;
}

/// Conditioned mobiles with a prescribed number of type-1 vertices.
pub struct MobileEnsemble {
    pub sampler: ConditionedSampler,
    pub root: Type,
    pub n_type1: usize,
    pub label: String,
}

impl TreeEnsemble for MobileEnsemble {
    fn name(&self) -> String {
        format!("{}/n1={}", self.label, self.n_type1)
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<LabeledTypedTree> {
        self.sampler.sample(self.root, self.n_type1, rng, 10_000_000)
    }
}

/// Draws from a valid law.
pub struct LawEnsemble(pub ValidLaw);

impl TreeEnsemble for LawEnsemble {
    fn name(&self) -> String {
        self.0.name.clone()
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<LabeledTypedTree> {
        crate::laws::valid_sample(&self.0, rng)
    }
}

/// Uniform plane tree with `n` vertices from a uniform Dyck path.
pub fn uniform_plane_tree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<LabeledTypedTree> {
    if n <= 1 {
        return Ok(LabeledTypedTree::single(0));
    }
    shape_from_dyck(&dyck_path(2 * (n - 1), rng)?)
}

fn shape_from_dyck(path: &[i64]) -> Result<LabeledTypedTree> {
    let mut kids: Vec<Vec<usize>> = vec![Vec::new()];
    let mut stack = vec![0usize];
    for w in path.windows(2) {
        if w[1] > w[0] {
            let v = kids.len();
            kids.push(Vec::new());
            kids[*stack.last().unwrap()].push(v);
            stack.push(v);
        } else {
            stack.pop();
        }
    }
    let n = kids.len();
    Ok(LabeledTypedTree::from_child_lists(0, &kids, &vec![0; n], &vec![0; n]).0)
}

/// Uniform full binary tree with `internal` internal vertices. At every
/// internal vertex the child with the strictly larger subtree moves up by one
/// when it comes first and down by one when it comes second; the other child
/// keeps the parent label. Not a valid law.
pub struct SiblingShapeCounterexample {
    pub internal: usize,
}

impl TreeEnsemble for SiblingShapeCounterexample {
    fn name(&self) -> String {
        format!("sibling-shape-counterexample/internal={}", self.internal)
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<LabeledTypedTree> {
        let m = self.internal;
        // Lukasiewicz word with m binary vertices and m+1 leaves, rotated by
        // the cycle lemma.
        let mut steps: Vec<usize> = std::iter::repeat(2).take(m).chain(std::iter::repeat(0).take(m + 1)).collect();
        steps.shuffle(rng);
        let (mut s, mut best, mut start) = (0i64, 0i64, 0usize);
        for (i, &c) in steps.iter().enumerate() {
            s += c as i64 - 1;
            if s < best {
                best = s;
                start = i + 1;
            }
        }
        let n = steps.len();
        let counts: Vec<usize> = (0..n).map(|i| steps[(start + i) % n]).collect();
        let shape = LabeledTypedTree::new(vec![0; n], counts, vec![0; n - 1])?;
        let mut d = vec![0i64; n];
        for v in 0..n {
            if let [a, b] = *shape.kids(v) {
                let (sa, sb) = (shape.subtree_size(a), shape.subtree_size(b));
                match sa.cmp(&sb) {
                    std::cmp::Ordering::Greater => d[a] = 2,
                    std::cmp::Ordering::Less => d[b] = -2,
                    std::cmp::Ordering::Equal => {}
                }
            }
        }
        Ok(shape.with_disp2_full(d))
    }
}

/// Rescaled contour and label values at the sorted times `xs`.
fn fdd_vector(t: &LabeledTypedTree, xs: &[f64]) -> Result<Vec<f64>> {
    let n = t.len() as f64;
    let c = contour_process(t);
    let z = label_process(t);
    let mut out = Vec::with_capacity(2 * xs.len());
    for &x in xs {
        out.push(c.eval(x)? / n.sqrt());
    }
    for &x in xs {
        out.push(z.eval(x)? / n.powf(0.25));
    }
    Ok(out)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Permutation p-value of the energy distance between paired samples
/// `a[i]`, `b[i]`, computed within consecutive blocks of `block` pairs and
/// summed over blocks; permutations swap the members of random pairs.
/// Returns the statistic, the p-value and the z-score of the statistic
/// within the permutation distribution.
pub fn block_energy_test(a: &[Vec<f64>], b: &[Vec<f64>], block: usize, perms: usize, rng: &mut ChaCha8Rng) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() || a.len() < 2 || block < 2 {
        return Err(Error::Domain("paired samples of equal length >= 2 are required".into()));
    }
    let mut observed = 0.0;
    let mut permuted = vec![0.0; perms];
    for (ca, cb) in a.chunks(block).zip(b.chunks(block)) {
        let m = ca.len();
        if m < 2 {
            continue;
        }
        // Energy statistic as a quadratic form s^T W s in the swap signs s.
        let mut w = vec![0.0f64; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let cross = euclid(&ca[i], &cb[j]) + euclid(&ca[j], &cb[i]);
                let within = euclid(&ca[i], &ca[j]) + euclid(&cb[i], &cb[j]);
                w[i * m + j] = cross - within;
            }
        }
        let form = |s: &[f64]| -> f64 {
            let mut tot = 0.0;
            for i in 0..m {
                let row = &w[i * m..(i + 1) * m];
                let mut acc = 0.0;
                for j in i + 1..m {
                    acc += row[j] * s[j];
                }
                tot += s[i] * acc;
            }
            2.0 * tot / (m * m) as f64
        };
        observed += form(&vec![1.0; m]);
        let mut s = vec![1.0; m];
        for slot in permuted.iter_mut() {
            for x in s.iter_mut() {
                *x = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            }
            *slot += form(&s);
        }
    }
    let exceed = permuted.iter().filter(|&&v| v >= observed).count();
    let p = (exceed + 1) as f64 / (perms + 1) as f64;
    let mean = permuted.iter().sum::<f64>() / perms.max(1) as f64;
    let sd = (permuted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / perms.max(2).saturating_sub(1) as f64).sqrt();
    Ok((observed, p, (observed - mean) / sd))
}

/// Pairs per block and permutations of the energy test.
pub const ENERGY_BLOCK: usize = 500;
pub const ENERGY_PERMUTATIONS: usize = 999;
/// Significance level shared by the statistical tests.
pub const ALPHA: f64 = 0.001;

/// Compares `(C(X↑), Z(X↑))` at `k` uniform sorted times, rescaled by
/// `|t|^{1/2}` and `|t|^{1/4}`, between draws from `ens` and symmetrized
/// draws from an independent copy, on the same stream of times.
pub fn fdd_compare(ens: &mut dyn TreeEnsemble, k: usize, samples: usize, seed: u64) -> Result<TestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(samples);
    let mut b = Vec::with_capacity(samples);
    let mut sizes = 0usize;
    for _ in 0..samples {
        let mut xs: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        xs.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let t = ens.draw(&mut rng)?;
        let s = sample_symmetrization(&ens.draw(&mut rng)?, &mut rng);
        sizes += t.len();
        a.push(fdd_vector(&t, &xs)?);
        b.push(fdd_vector(&s, &xs)?);
    }
    let (stat, p, z) = block_energy_test(&a, &b, ENERGY_BLOCK, ENERGY_PERMUTATIONS, &mut rng)?;
    Ok(TestReport::new(format!("fdd/{}", ens.name()), Mode::Energy, p, ALPHA)
        .with_sizes(vec![k, samples, sizes / samples.max(1)])
        .with_seed(seed)
        .with_details(vec![format!("energy statistic {stat:.6e}, permutation z-score {z:.2}")]))
}

/// Centered, not locally centered, and locally centered after
/// symmetrization, for the BDG displacement family.
pub fn centering_audit(max_children: usize) -> Result<TestReport> {
    let fam = bdg_displacement_family(max_children)?;
    let centered = centering_check(&fam, Centering::Centered);
    let local = centering_check(&fam, Centering::Local);
    let sym_local = centering_check(&symmetrize_family(&fam)?, Centering::Local);
    let witness = fam
        .iter()
        .filter(|((_, s), law)| mean_vector(law, s.len()).iter().any(|m| *m != qi(0)))
        .min_by_key(|((r, s), _)| (s.len(), *r, s.clone()))
        .map(|((r, s), law)| {
            let means: Vec<String> = mean_vector(law, s.len()).iter().map(|m| (m / qi(2)).to_string()).collect();
            format!("witness: parent type {r}, child types {s:?}, coordinate means [{}]", means.join(", "))
        });
    let mut details = vec![format!("centered {centered}, locally centered {local}, symmetrization locally centered {sym_local}")];
    details.extend(witness);
    let failures = usize::from(!centered) + usize::from(local) + usize::from(!sym_local);
    Ok(TestReport::new("centering/bdg", Mode::Exact, failures as f64, 0.0)
        .with_sizes(vec![max_children, fam.len()])
        .with_details(details))
}

/// Functional of sampled maps for scaling fits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    /// Range of type-1 mobile labels.
    LabelRange,
    /// Map distance between two uniform vertices.
    DistancePair,
    /// Height of the mobile.
    Height,
}

impl Functional {
    /// Exponent of `n` in the growth of the functional.
    pub fn exponent(self) -> f64 {
        match self {
            Functional::LabelRange | Functional::DistancePair => 0.25,
            Functional::Height => 0.5,
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Functional::LabelRange => "label_range",
            Functional::DistancePair => "distance_pair",
            Functional::Height => "height",
        })
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "label_range" => Ok(Functional::LabelRange),
            "distance_pair" => Ok(Functional::DistancePair),
            "height" => Ok(Functional::Height),
            _ => Err(Error::Parse(format!("unknown functional {s}"))),
        }
    }
}

/// Sampler for `q`: solved as given when a fixed point exists, otherwise
/// after rescaling `q` to criticality.
pub fn sampler_for(q: &WeightSeq) -> Result<ConditionedSampler> {
    let params = match solve_constants(q, 1e-12) {
        Ok(p) => p,
        Err(_) => solve_critical(q)?.1,
    };
    ConditionedSampler::from_params(&params)
}

/// Feasible type-1 count closest to `n_type1`, ties broken downward.
pub fn nearest_feasible(q: &WeightSeq, root: Type, n_type1: usize) -> Result<usize> {
    for d in 0..=n_type1.max(64) {
        for cand in [n_type1.checked_sub(d), Some(n_type1 + d)].into_iter().flatten() {
            if cand > 0 && size_feasible(q, root, cand) {
                return Ok(cand);
            }
        }
    }
    Err(Error::Domain(format!("no feasible size near {n_type1}")))
}

fn functional_value(f: Functional, enc: &crate::maps::Encoded, rng: &mut ChaCha8Rng) -> f64 {
    let t = &enc.mobile;
    match f {
        Functional::LabelRange => {
            let l: Vec<i64> = (0..t.len()).filter(|&u| t.ty(u) == 1).map(|u| t.label2(u)).collect();
            (l.iter().max().unwrap() - l.iter().min().unwrap()) as f64 / 2.0
        }
        Functional::Height => t.height() as f64,
        Functional::DistancePair => {
            let n = enc.map.n_vertices();
            let (u, v) = (rng.gen_range(0..n), rng.gen_range(0..n));
            enc.map.bfs_distance(u)[v] as f64
        }
    }
}

/// Least-squares slope of `ln mean` against `ln n`, with a standard error
/// propagated from the per-size standard errors.
pub fn log_log_slope(ns: &[f64], means: &[f64], ses: &[f64]) -> Result<(f64, f64)> {
    if ns.len() < 2 {
        return Err(Error::Domain("a slope needs at least two sizes".into()));
    }
    let x: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let y: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let xm = x.iter().sum::<f64>() / x.len() as f64;
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let sxx: f64 = x.iter().map(|a| (a - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("sizes must not all be equal".into()));
    }
    let slope = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / sxx;
    let var: f64 = x
        .iter()
        .zip(means.iter().zip(ses))
        .map(|(a, (m, s))| (a - xm).powi(2) * (s / m).powi(2))
        .sum::<f64>()
        / (sxx * sxx);
    Ok((slope, var.sqrt()))
}

/// Monte Carlo growth exponent of a functional of positive maps with about
/// `n` vertices for each `n` in `n_list`.
pub fn scaling_estimate(q: &WeightSeq, n_list: &[usize], reps: usize, functional: Functional, seed: u64) -> Result<TestReport> {
    if n_list.len() < 2 {
        return Err(Error::Domain("a slope needs at least two sizes".into()));
    }
    if reps < 2 {
        return Err(Error::Domain("at least two repetitions are needed".into()));
    }
    let mut sampler = sampler_for(q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = Vec::new();
    let (mut ns, mut means, mut ses) = (Vec::new(), Vec::new(), Vec::new());
    let mut details = Vec::new();
    for &n in n_list {
        let n1 = nearest_feasible(q, 1, n.saturating_sub(1).max(1))?;
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                let enc = match functional {
                    Functional::DistancePair => boltzmann_sample(&mut sampler, n1 + 1, Sign::Plus, &mut rng, 10_000_000)?,
                    _ => crate::maps::Encoded {
                        mobile: sampler.sample(1, n1, &mut rng, 10_000_000)?,
                        map: HalfEdgeMap::vertex_map(false),
                        node_vertex: Vec::new(),
                    },
                };
                Ok(functional_value(functional, &enc, &mut rng))
            })
            .collect::<Result<_>>()?;
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        sizes.push(n1 + 1);
        ns.push((n1 + 1) as f64);
        means.push(mean);
        ses.push((var / reps as f64).sqrt());
        details.push(format!("n {} mean {mean:.4} se {:.4}", n1 + 1, (var / reps as f64).sqrt()));
    }
    let (slope, se) = log_log_slope(&ns, &means, &ses)?;
    details.insert(0, format!("slope {slope:.4}, 95% interval [{:.4}, {:.4}]", slope - 1.96 * se, slope + 1.96 * se));
    Ok(TestReport::regression(format!("scaling/{functional}"), slope, functional.exponent(), 0.05)
        .with_sizes(sizes)
        .with_seed(seed)
        .with_details(details))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok((d, kolmogorov_tail(lambda)))
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Mean-matching scale of `x` onto `reference`.
fn fit_scale(x: &[f64], reference: &[f64], second_moment: bool) -> f64 {
    let m = |v: &[f64]| {
        if second_moment {
            (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt()
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    m(reference) / m(x)
}

/// Snake-limit shape checks for conditioned mobiles with about `n` type-1
/// vertices: the contour and label values at time 1/2, each rescaled by a
/// constant fitted on a holdout half, against discrete Brownian snake
/// references by two-sample KS, and linearity of the type-2 count process.
pub fn snake_compare(q: &WeightSeq, n: usize, samples: usize, seed: u64) -> Result<Vec<TestReport>> {
    if samples < 4 {
        return Err(Error::Domain("at least four samples are needed".into()));
    }
    let mut sampler = sampler_for(q)?;
    let n1 = nearest_feasible(q, 1, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut c_half, mut z_half, mut lam) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..samples {
        let t = sampler.sample(1, n1, &mut rng, 10_000_000)?;
        let size = t.len() as f64;
        c_half.push(contour_process(&t).eval(0.5)? / size.sqrt());
        z_half.push(label_process(&t).eval(0.5)? / size.powf(0.25));
        lam.push(type_count_process(&t, 2).scaled(1.0 / size));
    }
    let ref_n = 1024;
    let (mut e_ref, mut z_ref) = (Vec::new(), Vec::new());
    for _ in 0..samples {
        let s = brownian_snake_sample(ref_n, &mut rng)?;
        e_ref.push(s.e.eval(0.5)?);
        z_ref.push(s.z.eval(0.5)?);
    }
    let h = samples / 2;
    let a = fit_scale(&c_half[..h], &e_ref[..h], false);
    let b = fit_scale(&z_half[..h], &z_ref[..h], true);
    let scaled = |v: &[f64], c: f64| v.iter().map(|x| x * c).collect::<Vec<_>>();
    let (dc, pc) = ks_two_sample(&scaled(&c_half[h..], a), &e_ref[h..])?;
    let (dz, pz) = ks_two_sample(&scaled(&z_half[h..], b), &z_ref[h..])?;
    let gamma = lam[..h].iter().map(|l| l.at_grid(l.grid_size())).sum::<f64>() / h as f64;
    let residual = lam[h..]
        .iter()
        .map(|l| {
            let g = l.grid_size();
            (0..=g)
                .map(|i| (l.at_grid(i) - gamma * i as f64 / g as f64).abs())
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / (samples - h) as f64;
    let sizes = vec![n1, samples, ref_n];
    Ok(vec![
        TestReport::new("snake/contour-half", Mode::Ks, pc, ALPHA)
            .with_sizes(sizes.clone())
            .with_seed(seed)
            .with_details(vec![format!("KS distance {dc:.4}, fitted scale {a:.4}")]),
        TestReport::new("snake/label-half", Mode::Ks, pz, ALPHA)
            .with_sizes(sizes.clone())
            .with_seed(seed)
            .with_details(vec![format!("KS distance {dz:.4}, fitted scale {b:.4}")]),
        TestReport::new("snake/type2-linearity", Mode::Tolerance, residual, 0.05)
            .with_sizes(sizes)
            .with_seed(seed)
            .with_details(vec![format!("fitted slope {gamma:.5}")]),
    ])
}

/// Empirical `Cov(Z(s), Z(t))` of the discrete snake against the mean of
/// `min_[s,t] e` on the 3 x 3 grid of quartiles.
pub fn snake_covariance_check(n: usize, samples: usize, seed: u64) -> Result<TestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = [0.25, 0.5, 0.75];
    let mut zz = [[0.0; 3]; 3];
    let mut zm = [0.0; 3];
    let mut inf = [[0.0; 3]; 3];
    for _ in 0..samples {
        let s = brownian_snake_sample(n, &mut rng)?;
        let z: Vec<f64> = pts.iter().map(|&x| s.z.eval(x)).collect::<Result<_>>()?;
        for a in 0..3 {
            zm[a] += z[a];
            for b in 0..3 {
                zz[a][b] += z[a] * z[b];
                inf[a][b] += s.e.inf_on(pts[a].min(pts[b]), pts[a].max(pts[b]))?;
            }
        }
    }
    let m = samples as f64;
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for a in 0..3 {
        for b in 0..3 {
            let cov = zz[a][b] / m - zm[a] * zm[b] / (m * m);
            let want = inf[a][b] / m;
            let rel = (cov - want).abs() / want;
            worst = worst.max(rel);
            details.push(format!("(s,t)=({},{}): cov {cov:.4}, mean inf e {want:.4}", pts[a], pts[b]));
        }
    }
    Ok(TestReport::new("snake/covariance", Mode::Tolerance, worst, 0.05)
        .with_sizes(vec![n, samples])
        .with_seed(seed)
        .with_details(details))
}

/// Exact GH solver against brute force on random 4-point spaces, plus the
/// two-point formula.
pub fn gh_audit(instances: usize, seed: u64) -> Result<TestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut details = Vec::new();
    let mut failures = 0usize;
    for i in 0..instances {
        let x = random_metric_space(4, 6, &mut rng);
        let y = random_metric_space(4, 6, &mut rng);
        let (g, bf) = (gh_distance_exact(&x, &y)?, gh_distance_brute_force(&x, &y)?);
        if g != bf {
            failures += 1;
            details.push(format!("instance {i}: exact {g}, brute force {bf}"));
        }
    }
    for (a, b) in [(1.0, 3.0), (2.5, 0.5), (4.0, 4.0), (0.0, 7.0)] {
        let sp = |d: f64| -> Result<FiniteMetricMeasureSpace> {
            if d == 0.0 {
                FiniteMetricMeasureSpace::uniform(vec![vec![0.0]])
            } else {
                FiniteMetricMeasureSpace::uniform(vec![vec![0.0, d], vec![d, 0.0]])
            }
        };
        let g = gh_distance_exact(&sp(a)?, &sp(b)?)?;
        if g != (a - b).abs() / 2.0 {
            failures += 1;
            details.push(format!("two points {a}, {b}: {g}"));
        }
    }
    Ok(TestReport::new("gh/exact-vs-brute-force", Mode::Exact, failures as f64, 0.0)
        .with_sizes(vec![instances, 4])
        .with_seed(seed)
        .with_details(details))
}

fn nonnegative(m: HalfEdgeMap) -> Result<HalfEdgeMap> {
    if m.classify_sign()? == Sign::Minus {
        m.reverse_root()
    } else {
        Ok(m)
    }
}

fn support_filter(support: Option<&[usize]>) -> impl Fn(&[usize]) -> bool + '_ {
    move |d: &[usize]| support.map_or(true, |s| degrees_in(s)(d))
}

/// Conditioned-mobile weight of a labeled mobile, up to a per-class constant.
fn mobile_weight(off: &MobileOffspring, t: &LabeledTypedTree) -> Result<f64> {
    let mut w = 1.0;
    for v in 0..t.len() {
        let c = t.ctype(v);
        match t.ty(v) {
            1 => w *= off.zeta1(c.len()),
            face @ (3 | 4) => {
                let k = c.iter().filter(|&&x| x == 1).count();
                let kp = c.len() - k;
                let arrangements = crate::laws::mobile::arrangements(k, kp).len() as f64;
                w *= off.zeta_face(face, k, kp) / arrangements;
                w /= admissible_list(face, &c, 10_000_000)?.len() as f64;
            }
            _ => {}
        }
    }
    Ok(w)
}

/// Exhaustive bijection checks on rooted pointed maps with at most
/// `max_edges` edges and face degrees in `support` (all maps when `None`):
/// cardinalities per class, round trip, the distance identity, the bound
/// `δ ≤ δ°`, and for a single face degree the proportionality of the
/// conditioned mobile law to Boltzmann weights.
pub fn bijection_audit(max_edges: usize, support: Option<&[usize]>) -> Result<TestReport> {
    if max_edges > 5 {
        return Err(Error::Domain(format!("max_edges {max_edges} > 5")));
    }
    let maps = enumerate_maps(max_edges, support_filter(support))?;
    let mut failures = Vec::new();
    let mut classes: BTreeMap<(Sign, usize, usize), u128> = BTreeMap::new();
    let single = support.and_then(|s| (s.len() == 1 && s[0] >= 3).then(|| s[0]));
    let off = match single {
        Some(d) => Some(mobile_offspring(&solve_critical(&WeightSeq::single(d, 1.0))?.1)?),
        None => None,
    };
    let mut ratios: BTreeMap<(Sign, usize), (f64, f64)> = BTreeMap::new();
    let mut checked = 0usize;
    for base in &maps {
        for m in pointed_variants(base) {
            checked += 1;
            let text = m.to_text();
            if !m.is_vertex_map() {
                *classes.entry((m.classify_sign()?, m.n_vertices(), m.n_faces())).or_default() += 1;
            }
            let m = nonnegative(m)?;
            let sign = m.classify_sign()?;
            let enc = bdg_forward(&m)?;
            match bdg_inverse(&enc.mobile, sign) {
                Ok(back) if back.map.canonical_code() == m.canonical_code() => {}
                Ok(_) => failures.push(format!("round trip: {text}")),
                Err(e) => failures.push(format!("inverse failed ({e}): {text}")),
            }
            if m.is_vertex_map() {
                continue;
            }
            let t = &enc.mobile;
            let d = m.bfs_distance(m.point().unwrap());
            if let Some(min1) = (0..t.len()).filter(|&u| t.ty(u) == 1).map(|u| t.label2(u)).min() {
                for (u, v) in enc.node_vertex.iter().enumerate() {
                    if let Some(v) = v {
                        if 2 * d[*v] as i64 != t.label2(u) - min1 + 2 {
                            failures.push(format!("distance identity at node {u}: {text}"));
                            break;
                        }
                    }
                }
            }
            if !delta_violations(&enc)?.is_empty() {
                failures.push(format!("delta bound: {text}"));
            }
            if let Some(off) = &off {
                let ratio = mobile_weight(off, t)? / m.boltzmann_weight(&WeightSeq::single(single.unwrap(), 1.0));
                let e = ratios.entry((sign, m.n_vertices())).or_insert((ratio, ratio));
                e.0 = e.0.min(ratio);
                e.1 = e.1.max(ratio);
            }
        }
    }
    let filter = |deg: usize| support.map_or(true, |s| s.contains(&deg));
    for ((sign, n, f), count) in &classes {
        let mobiles = count_mobiles(*sign, n - 1, *f, &filter);
        if mobiles != *count {
            failures.push(format!("cardinality {sign} n={n} f={f}: {count} maps, {mobiles} mobiles"));
        }
    }
    for ((sign, n), (lo, hi)) in &ratios {
        if (hi / lo - 1.0).abs() > 1e-9 {
            failures.push(format!("pushforward {sign} n={n}: weight ratios in [{lo:e}, {hi:e}]"));
        }
    }
    let label = support.map_or("all".to_string(), |s| format!("{s:?}"));
    let mut details = vec![format!(
        "{} rooted maps, {checked} pointed, {} classes, {} pushforward classes",
        maps.len(),
        classes.len(),
        ratios.len()
    )];
    let n_fail = failures.len();
    details.extend(failures.into_iter().take(20));
    Ok(TestReport::new(format!("bijection/{label}/edges<={max_edges}"), Mode::Exact, n_fail as f64, 0.0)
        .with_sizes(vec![max_edges, checked])
        .with_details(details))
}

/// Negative control: reversing every child order of the mobile before
/// inversion must break inversion or the distance identity somewhere.
pub fn chirality_control(max_edges: usize, support: Option<&[usize]>) -> Result<TestReport> {
    let maps = enumerate_maps(max_edges, support_filter(support))?;
    let mut broken = 0usize;
    let mut checked = 0usize;
    for base in &maps {
        for m in pointed_variants(base) {
            let m = nonnegative(m)?;
            if m.is_vertex_map() {
                continue;
            }
            checked += 1;
            let sign = m.classify_sign()?;
            let t = bdg_forward(&m)?.mobile;
            let reversal: Vec<Vec<usize>> = (0..t.len()).map(|v| (0..t.k(v)).rev().collect()).collect();
            let flipped = apply_permutation(&t, &crate::symmetry::PermVector::new(&t, reversal)?)?;
            let ok = match bdg_inverse(&flipped, sign) {
                Err(_) => false,
                Ok(enc) => {
                    let p = enc.map.point().unwrap();
                    let d = enc.map.bfs_distance(p);
                    let ft = &enc.mobile;
                    let min1 = (0..ft.len()).filter(|&u| ft.ty(u) == 1).map(|u| ft.label2(u)).min();
                    min1.map_or(true, |min1| {
                        enc.node_vertex
                            .iter()
                            .enumerate()
                            .all(|(u, v)| v.map_or(true, |v| 2 * d[v] as i64 == ft.label2(u) - min1 + 2))
                    }) && enc.map.canonical_code() == m.canonical_code()
                }
            };
            broken += usize::from(!ok);
        }
    }
    let label = support.map_or("all".to_string(), |s| format!("{s:?}"));
    Ok(TestReport::new(format!("bijection/{label}/chirality-flipped"), Mode::Exact, broken as f64, 0.0)
        .with_sizes(vec![max_edges, checked])
        .with_details(vec![format!("{broken} of {checked} pointed maps break")])
        .as_negative_control())
}

/// `δ ≤ δ°` on every pointed map with at most `max_edges` edges and on
/// `count` sampled positive maps with `n_vertices` vertices.
pub fn delta_audit(max_edges: usize, q: &WeightSeq, n_vertices: usize, count: usize, seed: u64) -> Result<TestReport> {
    let mut bad = Vec::new();
    let mut checked = 0usize;
    for base in enumerate_maps(max_edges, |_| true)? {
        for m in pointed_variants(&base) {
            let m = nonnegative(m)?;
            checked += 1;
            if !delta_violations(&bdg_forward(&m)?)?.is_empty() {
                bad.push(m.to_text());
            }
        }
    }
    let mut sampler = sampler_for(q)?;
    let n1 = nearest_feasible(q, 1, n_vertices.saturating_sub(1).max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let enc = boltzmann_sample(&mut sampler, n1 + 1, Sign::Plus, &mut rng, 10_000_000)?;
        if !delta_violations(&enc)?.is_empty() {
            bad.push(format!("sample {i}"));
        }
    }
    let n_bad = bad.len();
    Ok(TestReport::new("delta-bound", Mode::Exact, n_bad as f64, 0.0)
        .with_sizes(vec![max_edges, checked, n1 + 1, count])
        .with_seed(seed)
        .with_details(bad.into_iter().take(20).collect()))
}

fn plane_trees(n: usize, out: &mut Vec<LabeledTypedTree>) {
    // Lukasiewicz words: child counts in preorder, all proper prefixes
    // keeping the open-slot count positive.
    fn rec(counts: &mut Vec<usize>, slots: usize, n: usize, out: &mut Vec<LabeledTypedTree>) {
        let left = n - counts.len();
        if left == 0 {
            if slots == 0 {
                out.push(LabeledTypedTree::new(vec![0; n], counts.clone(), vec![0; n - 1]).expect("Lukasiewicz word"));
            }
            return;
        }
        if slots == 0 || slots > left {
            return;
        }
        for c in 0..left {
            if slots - 1 + c > left - 1 {
                break;
            }
            counts.push(c);
            rec(counts, slots - 1 + c, n, out);
            counts.pop();
        }
    }
    rec(&mut Vec::new(), 1, n, out);
}

/// Every plane tree with `n` vertices.
pub fn all_plane_trees(n: usize) -> Vec<LabeledTypedTree> {
    let mut out = Vec::new();
    if n > 0 {
        plane_trees(n, &mut out);
    }
    out
}

/// Deterministic identities: contour distances equal tree distances on all
/// trees with at most `max_enum` vertices; the time-change bounds and the
/// invariance of the maximal displacement under random reorderings on
/// `random_trees` random labeled trees with up to `max_vertices` vertices.
pub fn identities_audit(max_enum: usize, random_trees: usize, max_vertices: usize, perms: usize, seed: u64) -> Result<Vec<TestReport>> {
    let mut dist_fail = 0usize;
    let mut enumerated = 0usize;
    for n in 1..=max_enum {
        for t in all_plane_trees(n) {
            enumerated += 1;
            if n == 1 {
                continue;
            }
            let c = contour_process(&t);
            let theta = contour_exploration(&t);
            let g = theta.len() - 1;
            'pairs: for i in 0..=g {
                for j in i..=g {
                    let dc = dist_on_contour(&c, i as f64 / g as f64, j as f64 / g as f64)?;
                    if dc != t.dist(theta[i], theta[j]) as f64 {
                        dist_fail += 1;
                        break 'pairs;
                    }
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut bound_fail, mut inv_fail, mut total) = (0usize, 0usize, 0usize);
    for i in 0..random_trees {
        // Sizes spread log-uniformly from 2 to max_vertices.
        let e = (i as f64 + 1.0) / random_trees as f64;
        let n = ((max_vertices as f64).powf(e).round() as usize).clamp(2, max_vertices);
        let shape = uniform_plane_tree(n, &mut rng)?;
        let d: Vec<i64> = (0..shape.len()).map(|v| if v == 0 { 0 } else { rng.gen_range(-3..=3) }).collect();
        let t = shape.with_disp2_full(d);
        total += t.len();
        if !time_change_bounds(&t)?.holds() {
            bound_fail += 1;
        }
        let max = t.max_abs_disp2();
        for _ in 0..perms {
            let sigma = random_perm(&t, &[], &mut rng);
            if apply_permutation(&t, &sigma)?.max_abs_disp2() != max {
                inv_fail += 1;
            }
        }
    }
    Ok(vec![
        TestReport::new("identities/contour-distance", Mode::Exact, dist_fail as f64, 0.0)
            .with_sizes(vec![max_enum, enumerated]),
        TestReport::new("identities/time-change-bounds", Mode::Exact, bound_fail as f64, 0.0)
            .with_sizes(vec![random_trees, max_vertices, total])
            .with_seed(seed),
        TestReport::new("identities/max-displacement-invariance", Mode::Exact, inv_fail as f64, 0.0)
            .with_sizes(vec![random_trees, perms])
            .with_seed(seed),
    ])
}

/// Named suites run by the CLI.
pub const SUITES: &[&str] = &["bijection", "eqdist", "delta", "identities", "centering", "scaling", "fdd", "snake", "gh"];

/// Options shared by the suites; defaults are the acceptance sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub max_vertices: usize,
    pub max_k: usize,
    pub max_edges: usize,
    pub samples: usize,
    pub reps: usize,
    pub n_list: Vec<usize>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 1,
            max_vertices: 7,
            max_k: 3,
            max_edges: 4,
            samples: 10_000,
            reps: 200,
            n_list: vec![512, 1024, 2048, 4096, 8192],
        }
    }
}

/// Critical weights with faces of degrees 4 and 5 at equal weight.
pub fn quad_pent_weights() -> WeightSeq {
    WeightSeq::new(BTreeMap::from([(4, 1.0), (5, 1.0)])).expect("positive weights")
}

/// Runs a named suite.
pub fn run_suite(name: &str, o: &SuiteOptions) -> Result<Vec<TestReport>> {
    let q5 = WeightSeq::single(5, 1.0);
    match name {
        "bijection" => Ok(vec![
            bijection_audit(o.max_edges, Some(&[4]))?,
            bijection_audit(o.max_edges.max(5), Some(&[5]))?,
            bijection_audit(o.max_edges, None)?,
            chirality_control(o.max_edges.min(3), None)?,
        ]),
        "eqdist" => {
            let mut out = Vec::new();
            for law in eqdist_corpus()? {
                for k in 1..=o.max_k {
                    out.push(eqdist_check(&law, k, o.max_vertices)?);
                }
            }
            out.push(eqdist_compare("sibling-shape-counterexample", &eqdist_counterexample(), 2)?.as_negative_control());
            Ok(out)
        }
        "delta" => Ok(vec![delta_audit(o.max_edges, &q5, 1000, 100, o.seed)?]),
        "identities" => identities_audit(12, 1000, 10_000, 100, o.seed),
        "centering" => Ok(vec![centering_audit(4)?]),
        "scaling" => [Functional::LabelRange, Functional::DistancePair, Functional::Height]
            .into_iter()
            .map(|f| scaling_estimate(&q5, &o.n_list, o.reps, f, o.seed))
            .collect(),
        "fdd" => {
            let mut mobiles = MobileEnsemble {
                sampler: sampler_for(&quad_pent_weights())?,
                root: 1,
                n_type1: 200,
                label: "mobile-q45".into(),
            };
            let mut bad = SiblingShapeCounterexample { internal: 200 };
            Ok(vec![
                fdd_compare(&mut mobiles, 3, o.samples, o.seed)?,
                fdd_compare(&mut bad, 3, o.samples, o.seed)?.as_negative_control(),
            ])
        }
        "snake" => {
            let mut out = vec![snake_covariance_check(256, o.samples, o.seed)?];
            out.extend(snake_compare(&q5, 10_000, 400, o.seed)?);
            Ok(out)
        }
        "gh" => Ok(vec![gh_audit(50, o.seed)?]),
        _ => Err(Error::Domain(format!("unknown suite {name}; expected one of {}", SUITES.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_pass_flags() {
        let r = TestReport::new("x", Mode::Energy, 0.5, ALPHA);
        assert!(r.pass && r.is_consistent());
        let r = TestReport::new("x", Mode::Exact, 1.0, 0.0);
        assert!(!r.pass && r.is_consistent());
        let r = TestReport::regression("x", 0.27, 0.25, 0.05);
        assert!(r.pass && r.is_consistent());
        let r = TestReport::new("x", Mode::Ks, 1e-5, ALPHA).as_negative_control();
        assert!(r.pass && r.is_consistent());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"mode\":\"ks\""));
        assert_eq!(serde_json::from_str::<TestReport>(&json).unwrap(), r);
    }

    #[test]
    fn eqdist_examples() {
        let corpus = eqdist_corpus().unwrap();
        let star = &corpus[0];
        let r = eqdist_check(star, 1, 7).unwrap();
        assert!(r.pass, "{r:?}");
        // Conditional on a leaf, the retained displacement is uniform on {1, 2}.
        let law = sampled_structure_law(&enumerate_labeled(star, 7, 100).unwrap(), 1).unwrap();
        let leaf1 = law.iter().find(|(k, _)| k.contains("0,0,2#1")).map(|(_, p)| p.clone()).unwrap();
        let leaf2 = law.iter().find(|(k, _)| k.contains("0,0,4#1")).map(|(_, p)| p.clone()).unwrap();
        assert_eq!(leaf1, q(1, 3));
        assert_eq!(leaf1, leaf2);
        // Both leaves sampled: the branchpoint zeroes every retained displacement.
        let law = sampled_structure_law(&enumerate_labeled(star, 7, 100).unwrap(), 2).unwrap();
        let spanning: Vec<&String> = law.keys().filter(|k| k.starts_with("0,2,")).collect();
        assert_eq!(spanning.len(), 2);
        assert!(spanning.iter().all(|k| k.starts_with("0,2,0;0,0,0;0,0,0#")));
        assert!(eqdist_check(&corpus[1], 3, 7).unwrap().pass);
    }

    #[test]
    fn eqdist_counterexample_fails() {
        assert!(eqdist_compare("c", &eqdist_counterexample(), 1).unwrap().pass);
        assert!(!eqdist_compare("c", &eqdist_counterexample(), 2).unwrap().pass);
    }

    #[test]
    fn corpus_is_valid() {
        let corpus = eqdist_corpus().unwrap();
        assert!(corpus.len() >= 10);
        for law in &corpus {
            law.validate(7).unwrap_or_else(|e| panic!("{}: {e}", law.name));
        }
    }

    #[test]
    fn plane_tree_counts() {
        let catalan = [1, 1, 2, 5, 14, 42, 132, 429];
        for (n, &c) in catalan.iter().enumerate() {
            assert_eq!(all_plane_trees(n + 1).len(), c);
        }
    }

    #[test]
    fn uniform_plane_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = BTreeMap::new();
        for _ in 0..5000 {
            let t = uniform_plane_tree(4, &mut rng).unwrap();
            *counts.entry(canonical_key(&t)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&c| (800..1200).contains(&c)), "{counts:?}");
    }

    #[test]
    fn counterexample_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ens = SiblingShapeCounterexample { internal: 10 };
        for _ in 0..50 {
            let t = ens.draw(&mut rng).unwrap();
            assert_eq!(t.len(), 21);
            for v in 0..t.len() {
                if let [a, b] = *t.kids(v) {
                    let (sa, sb) = (t.subtree_size(a), t.subtree_size(b));
                    assert_eq!(t.disp2(a), if sa > sb { 2 } else { 0 });
                    assert_eq!(t.disp2(b), if sb > sa { -2 } else { 0 });
                }
            }
        }
    }

    #[test]
    fn energy_test_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let b: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let c: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen::<f64>() + 0.3, rng.gen::<f64>()]).collect();
        let (_, p, _) = block_energy_test(&a, &b, 100, 199, &mut rng).unwrap();
        assert!(p > 0.01, "{p}");
        let (_, p, z) = block_energy_test(&a, &c, 100, 199, &mut rng).unwrap();
        assert!(z > 3.0, "{z}");
        assert!(p <= 0.005, "{p}");
    }

    #[test]
    fn fdd_symmetric_law_passes() {
        // A law with symmetric displacements is its own symmetrization.
        let law = eqdist_corpus().unwrap().remove(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = rng.gen::<u8>();
        let r = fdd_compare(&mut LawEnsemble(law), 2, 600, 5).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn ks_examples() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let b: Vec<f64> = (0..400).map(|i| (i as f64 + 0.5) / 400.0).collect();
        let (d, p) = ks_two_sample(&a, &b).unwrap();
        assert!(d < 0.01 && p > 0.99);
        let c: Vec<f64> = b.iter().map(|x| x + 0.2).collect();
        let (d, p) = ks_two_sample(&a, &c).unwrap();
        assert!((d - 0.2).abs() < 0.01 && p < 1e-6);
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn slope_fit() {
        let ns = [100.0, 1000.0, 10000.0];
        let means: Vec<f64> = ns.iter().map(|n: &f64| 3.0 * n.powf(0.25)).collect();
        let (s, se) = log_log_slope(&ns, &means, &[0.0; 3]).unwrap();
        assert!((s - 0.25).abs() < 1e-12 && se == 0.0);
        assert!(log_log_slope(&[10.0], &[1.0], &[0.1]).is_err());
        assert!(scaling_estimate(&WeightSeq::single(5, 1.0), &[512], 10, Functional::Height, 1).is_err());
    }

    #[test]
    fn feasible_sizes() {
        let q5 = WeightSeq::single(5, 1.0);
        assert_eq!(nearest_feasible(&q5, 1, 511).unwrap(), 511);
        assert_eq!(nearest_feasible(&q5, 1, 1023).unwrap(), 1024);
        assert_eq!(nearest_feasible(&quad_pent_weights(), 1, 200).unwrap(), 200);
    }

    #[test]
    fn centering_report() {
        let r = centering_audit(3).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.details.iter().any(|d| d.starts_with("witness")));
    }

    #[test]
    fn small_audits() {
        let r = bijection_audit(3, Some(&[4])).unwrap();
        assert!(r.pass, "{r:?}");
        let r = bijection_audit(3, None).unwrap();
        assert!(r.pass, "{r:?}");
        let r = chirality_control(2, None).unwrap();
        assert!(r.pass && r.statistic > 0.0, "{r:?}");
        let r = gh_audit(5, 1).unwrap();
        assert!(r.pass, "{r:?}");
        let r = delta_audit(2, &WeightSeq::single(5, 1.0), 100, 2, 1).unwrap();
        assert!(r.pass, "{r:?}");
        for r in identities_audit(6, 20, 300, 3, 1).unwrap() {
            assert!(r.pass, "{r:?}");
        }
        assert!(run_suite("nope", &SuiteOptions::default()).is_err());
    }

    #[test]
    fn snake_covariance_small() {
        let r = snake_covariance_check(64, 2000, 3).unwrap();
        assert!(r.statistic < 0.15, "{r:?}");
    }
}
