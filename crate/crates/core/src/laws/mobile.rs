//! Offspring and labeling laws of the four-type mobiles encoding Boltzmann
//! maps, and samplers conditioned on the number of type-1 vertices.
//!
//! Types: 1 map vertices, 2 flag vertices, 3 faces below a type-1 vertex,
//! 4 faces below a flag. Labels are doubled.

use std::collections::{BTreeMap, HashMap};

use num_traits::ToPrimitive;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DisplacementFamily, Offspring, OffspringFamily};
use crate::error::{Error, Result};
use crate::maps::WeightSeq;
use crate::rational::{multinomial, FiniteDistribution, Q};
use crate::tree_core::{LabeledTypedTree, Type};

/// Constants of the mobile offspring laws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobileParams {
    pub q: WeightSeq,
    pub zplus: f64,
    pub zzero: f64,
    pub alpha: f64,
    /// Zero when `Z0 = 0`: no type-4 vertex occurs and its law is unused.
    pub beta: f64,
    pub truncation: usize,
}

/// `(k, k', coefficient)` with `k` type-1 and `k'` type-2 children.
type Terms = Vec<(usize, usize, f64)>;

/// Terms of the face laws: type-3 faces of degree `2k+k'+2` and type-4
/// faces of degree `2k+k'+1`.
fn face_terms(q: &WeightSeq) -> (Terms, Terms) {
    let mut t3 = Vec::new();
    let mut t4 = Vec::new();
    for j in q.support() {
        let w = q.get(j);
        if j >= 2 {
            let m = j - 2;
            for k in 0..=m / 2 {
                let kp = m - 2 * k;
                let c = multinomial(2 * k + kp + 1, &[k + 1, k, kp]).to_f64().unwrap();
                t3.push((k, kp, c * w));
            }
        }
        let m = j - 1;
        for k in 0..=m / 2 {
            let kp = m - 2 * k;
            let c = multinomial(2 * k + kp, &[k, k, kp]).to_f64().unwrap();
            t4.push((k, kp, c * w));
        }
    }
    (t3, t4)
}

/// `(value, d/dx, d/dy)` of `Σ c x^k y^k'`.
fn poly(terms: &Terms, x: f64, y: f64) -> (f64, f64, f64) {
    let mut v = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for &(k, kp, c) in terms {
        let xk = x.powi(k as i32);
        let yk = y.powi(kp as i32);
        v += c * xk * yk;
        if k > 0 {
            dx += c * k as f64 * x.powi(k as i32 - 1) * yk;
        }
        if kp > 0 {
            dy += c * kp as f64 * xk * y.powi(kp as i32 - 1);
        }
    }
    (v, dx, dy)
}

/// Fixed-point map `(x, y) -> (1 + c x A, c B)` with `x = Z+`, `y = sqrt(Z0)`.
struct System {
    t3: Terms,
    t4: Terms,
}

impl System {
    fn new(q: &WeightSeq) -> Self {
        let (t3, t4) = face_terms(q);
        Self { t3, t4 }
    }

    fn map(&self, x: f64, y: f64, c: f64) -> (f64, f64) {
        let a = poly(&self.t3, x, y).0;
        let b = poly(&self.t4, x, y).0;
        (1.0 + c * x * a, c * b)
    }

    /// Jacobian of the fixed-point map.
    fn jacobian(&self, x: f64, y: f64, c: f64) -> [[f64; 2]; 2] {
        let (a, ax, ay) = poly(&self.t3, x, y);
        let (_, bx, by) = poly(&self.t4, x, y);
        [[c * (a + x * ax), c * x * ay], [c * bx, c * by]]
    }

    fn residual(&self, x: f64, y: f64, c: f64) -> f64 {
        let (mx, my) = self.map(x, y, c);
        (mx - x).abs().max((my - y).abs())
    }

    fn spectral_radius(&self, x: f64, y: f64, c: f64) -> f64 {
        let j = self.jacobian(x, y, c);
        let tr = j[0][0] + j[1][1];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let disc = tr * tr / 4.0 - det;
        if disc >= 0.0 {
            (tr / 2.0).abs() + disc.sqrt()
        } else {
            det.abs().sqrt()
        }
    }

    /// Undamped iteration from `(1, 0)`: increases to the minimal fixed point
    /// when one exists. `None` on blow-up or without convergence.
    fn minimal(&self, c: f64, iters: usize, tol: f64) -> Option<(f64, f64)> {
        let (mut x, mut y) = (1.0, 0.0);
        for _ in 0..iters {
            let (nx, ny) = self.map(x, y, c);
            if !(nx.is_finite() && ny.is_finite()) || nx > 1e8 || ny > 1e8 {
                return None;
            }
            let done = (nx - x).abs() + (ny - y).abs() < tol;
            x = nx;
            y = ny;
            if done {
                return Some((x, y));
            }
        }
        None
    }

    fn newton2(&self, mut x: f64, mut y: f64, c: f64, iters: usize) -> (f64, f64) {
        for _ in 0..iters {
            let (mx, my) = self.map(x, y, c);
            let f = [mx - x, my - y];
            let j = self.jacobian(x, y, c);
            let m = [[j[0][0] - 1.0, j[0][1]], [j[1][0], j[1][1] - 1.0]];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            if det.abs() < 1e-300 {
                break;
            }
            let dx = (f[0] * m[1][1] - f[1] * m[0][1]) / det;
            let dy = (m[0][0] * f[1] - m[1][0] * f[0]) / det;
            x -= dx;
            y -= dy;
            if dx.abs() + dy.abs() < 1e-16 {
                break;
            }
        }
        (x, y)
    }
}

impl MobileParams {
    fn from_solution(q: &WeightSeq, x: f64, y: f64, truncation: usize) -> Result<Self> {
        let (t3, t4) = face_terms(q);
        let a = poly(&t3, x, y).0;
        let b = poly(&t4, x, y).0;
        if !(x > 1.0 && y >= 0.0 && a > 0.0 && (b > 0.0 || y == 0.0)) {
            return Err(Error::InvalidParams(
                "weights admit no consistent mobile law".into(),
            ));
        }
        Ok(Self {
            q: q.clone(),
            zplus: x,
            zzero: y * y,
            alpha: 1.0 / a,
            beta: if b > 0.0 { 1.0 / b } else { 0.0 },
            truncation,
        })
    }

    /// Residual of the consistency equations at these constants.
    pub fn residual(&self) -> f64 {
        System::new(&self.q).residual(self.zplus, self.zzero.sqrt(), 1.0)
    }

    /// Spectral radius of the linearized fixed-point map; 1 at criticality.
    pub fn criticality(&self) -> f64 {
        System::new(&self.q).spectral_radius(self.zplus, self.zzero.sqrt(), 1.0)
    }

    /// Largest deviation from 1 of the total masses of the type-1, type-3
    /// and type-4 laws, with the geometric law truncated at `truncation`.
    pub fn normalization_error(&self) -> f64 {
        let p = 1.0 / self.zplus;
        let geo: f64 = (0..=self.truncation).map(|k| p * (1.0 - p).powi(k as i32)).sum();
        let (t3, t4) = face_terms(&self.q);
        let y = self.zzero.sqrt();
        let s3 = self.alpha * poly(&t3, self.zplus, y).0;
        let s4 = self.beta * poly(&t4, self.zplus, y).0;
        let s4 = if self.beta > 0.0 { s4 } else { 1.0 };
        [geo, s3, s4]
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Solves the consistency system `Z+ = 1 + Z+ A`, `sqrt(Z0) = B` for the
/// given weights, where `A` and `B` are the total multinomial face weights
/// of type-3 and type-4 faces. Damped iteration from `(1.5, 1.0)`, then
/// monotone iteration from the bottom and a Newton polish.
pub fn solve_constants(q: &WeightSeq, tolerance: f64) -> Result<MobileParams> {
    let sys = System::new(q);
    if sys.t3.is_empty() {
        return Err(Error::InvalidParams(
            "no face of degree at least 2 carries weight".into(),
        ));
    }
    let (mut x, mut y) = (1.5f64, 1.0f64);
    let mut ok = false;
    for _ in 0..10_000 {
        let (mx, my) = sys.map(x, y, 1.0);
        if !(mx.is_finite() && my.is_finite()) || mx > 1e8 {
            break;
        }
        let nx = 0.5 * x + 0.5 * mx;
        let ny = 0.5 * y + 0.5 * my;
        x = nx;
        y = ny;
        if sys.residual(x, y, 1.0) < tolerance {
            ok = true;
            break;
        }
    }
    if !ok || sys.spectral_radius(x, y, 1.0) > 1.0 + 1e-6 {
        match sys.minimal(1.0, 100_000, 1e-15) {
            Some((a, b)) => {
                x = a;
                y = b;
            }
            None => {
                return Err(Error::NonConvergence {
                    residual: f64::INFINITY,
                })
            }
        }
    }
    if sys.residual(x, y, 1.0) >= tolerance {
        let (a, b) = sys.newton2(x, y, 1.0, 200);
        if sys.residual(a, b, 1.0) < sys.residual(x, y, 1.0) {
            x = a;
            y = b;
        }
    }
    let r = sys.residual(x, y, 1.0);
    if !(r < tolerance) || sys.spectral_radius(x, y, 1.0) > 1.0 + 1e-6 {
        return Err(Error::NonConvergence { residual: r });
    }
    MobileParams::from_solution(q, x, y, 200)
}

/// Scale `c` making `c q` critical, with the constants for `c q`.
///
/// The critical point is where the fixed point of the consistency system
/// meets `det(J - I) = 0`; it is bracketed by bisection on the existence
/// of a fixed point and refined by Newton's method on the three equations.
pub fn solve_critical(q: &WeightSeq) -> Result<(f64, MobileParams)> {
    let sys = System::new(q);
    if sys.t3.is_empty() {
        return Err(Error::InvalidParams(
            "no face of degree at least 2 carries weight".into(),
        ));
    }
    let exists = |c: f64| sys.minimal(c, 50_000, 1e-14).is_some();
    let mut hi = 1.0;
    while exists(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::InvalidParams("weights never become critical".into()));
        }
    }
    let mut lo = hi / 2.0;
    while !exists(lo) {
        hi = lo;
        lo /= 2.0;
        if lo < 1e-300 {
            return Err(Error::NonConvergence { residual: f64::INFINITY });
        }
    }
    while hi - lo > 1e-4 * lo {
        let m = 0.5 * (lo + hi);
        if exists(m) {
            lo = m;
        } else {
            hi = m;
        }
    }
    let (mut x, mut y) = sys.minimal(lo, 50_000, 1e-14).expect("bracketed");
    let mut c = lo;
    let f = |x: f64, y: f64, c: f64| -> [f64; 3] {
        let (mx, my) = sys.map(x, y, c);
        let j = sys.jacobian(x, y, c);
        let det = (j[0][0] - 1.0) * (j[1][1] - 1.0) - j[0][1] * j[1][0];
        [mx - x, my - y, det]
    };
    for _ in 0..100 {
        let f0 = f(x, y, c);
        let mut jac = [[0.0; 3]; 3];
        let p = [x, y, c];
        for col in 0..3 {
            let h = 1e-7 * p[col].abs().max(1e-3);
            let mut a = p;
            let mut b = p;
            a[col] += h;
            b[col] -= h;
            let fa = f(a[0], a[1], a[2]);
            let fb = f(b[0], b[1], b[2]);
            for row in 0..3 {
                jac[row][col] = (fa[row] - fb[row]) / (2.0 * h);
            }
        }
        let Some(d) = solve3(jac, [-f0[0], -f0[1], -f0[2]]) else {
            break;
        };
        x += d[0];
        y += d[1];
        c += d[2];
        if d.iter().map(|v| v.abs()).sum::<f64>() < 1e-15 {
            break;
        }
    }
    let r = f(x, y, c);
    if r.iter().any(|v| !(v.abs() < 1e-9)) || !(c > 0.0) {
        return Err(Error::NonConvergence {
            residual: r.iter().map(|v| v.abs()).fold(0.0, f64::max),
        });
    }
    let scaled = q.scaled(c);
    Ok((c, MobileParams::from_solution(&scaled, x, y, 200)?))
}

/// Cramer's rule for a 3x3 system.
fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *o = det(&mc) / d;
    }
    Some(out)
}

/// Offspring laws of the mobile tree.
#[derive(Clone, Debug)]
pub struct MobileOffspring {
    pub params: MobileParams,
    /// Success probability `1/Z+` of the geometric type-1 law.
    geo_p: f64,
    face3: Vec<(usize, usize)>,
    face3_w: Vec<f64>,
    face3_idx: WeightedIndex<f64>,
    face4: Vec<(usize, usize)>,
    face4_w: Vec<f64>,
    /// `None` when no type-4 vertex can occur (`Z0 = 0`).
    face4_idx: Option<WeightedIndex<f64>>,
}

/// Builds the four offspring laws from solved constants.
pub fn mobile_offspring(params: &MobileParams) -> Result<MobileOffspring> {
    let (t3, t4) = face_terms(&params.q);
    let x = params.zplus;
    let y = params.zzero.sqrt();
    let w3: Vec<f64> = t3
        .iter()
        .map(|&(k, kp, c)| params.alpha * c * x.powi(k as i32) * y.powi(kp as i32))
        .collect();
    let w4: Vec<f64> = t4
        .iter()
        .map(|&(k, kp, c)| params.beta * c * x.powi(k as i32) * y.powi(kp as i32))
        .collect();
    let s3: f64 = w3.iter().sum();
    let s4: f64 = w4.iter().sum();
    if (s3 - 1.0).abs() > 1e-9 || (params.beta > 0.0 && (s4 - 1.0).abs() > 1e-9) || !(params.zplus > 1.0) {
        return Err(Error::InvalidParams(format!(
            "face laws are not normalized (masses {s3}, {s4})"
        )));
    }
    Ok(MobileOffspring {
        params: params.clone(),
        geo_p: 1.0 / params.zplus,
        face3: t3.iter().map(|&(k, kp, _)| (k, kp)).collect(),
        face3_idx: WeightedIndex::new(&w3).map_err(|e| Error::InvalidParams(e.to_string()))?,
        face3_w: w3,
        face4: t4.iter().map(|&(k, kp, _)| (k, kp)).collect(),
        face4_idx: if params.beta > 0.0 {
            Some(WeightedIndex::new(&w4).map_err(|e| Error::InvalidParams(e.to_string()))?)
        } else {
            None
        },
        face4_w: w4,
    })
}

impl MobileOffspring {
    /// `ζ1(k)`: probability of `k` type-3 children.
    pub fn zeta1(&self, k: usize) -> f64 {
        self.geo_p * (1.0 - self.geo_p).powi(k as i32)
    }

    /// `ζ3(k, k')` or `ζ4(k, k')` for `face` in {3, 4}.
    pub fn zeta_face(&self, face: Type, k: usize, kp: usize) -> f64 {
        let (list, w) = if face == 3 {
            (&self.face3, &self.face3_w)
        } else {
            (&self.face4, &self.face4_w)
        };
        list.iter()
            .zip(w)
            .filter(|(&c, _)| c == (k, kp))
            .map(|(_, &p)| p)
            .sum()
    }

    /// Count classes `(k, k')` of a face type with their probabilities.
    pub fn face_law(&self, face: Type) -> Vec<((usize, usize), f64)> {
        let (list, w) = if face == 3 {
            (&self.face3, &self.face3_w)
        } else {
            (&self.face4, &self.face4_w)
        };
        list.iter().copied().zip(w.iter().copied()).collect()
    }

    fn draw_geometric<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        // Inverse CDF of P(k) = p (1-p)^k.
        let k = ((1.0 - u).ln() / (1.0 - self.geo_p).ln()).floor();
        if k.is_finite() {
            k as usize
        } else {
            0
        }
    }

    /// Child types of a face, counts drawn from its law and arrangement uniform.
    fn draw_face<R: Rng + ?Sized>(&self, face: Type, rng: &mut R, out: &mut Vec<Type>) {
        let (k, kp) = if face == 3 {
            self.face3[self.face3_idx.sample(rng)]
        } else {
            match &self.face4_idx {
                Some(idx) => self.face4[idx.sample(rng)],
                None => (0, 0),
            }
        };
        out.clear();
        out.extend(std::iter::repeat(1).take(k));
        out.extend(std::iter::repeat(2).take(kp));
        out.shuffle(rng);
    }

    /// Finite-support family with the geometric law truncated at `k_max`;
    /// masses are within `1e-10` of 1 when `k_max` is large enough.
    pub fn truncated_family(&self, k_max: usize) -> Result<OffspringFamily> {
        let mut laws = BTreeMap::new();
        let mut l1 = FiniteDistribution::new();
        for k in 0..=k_max {
            l1.add(vec![3; k], float_q(self.zeta1(k)));
        }
        laws.insert(1, l1);
        laws.insert(2, FiniteDistribution::point(vec![4]));
        for face in [3u8, 4] {
            let mut l = FiniteDistribution::new();
            for ((k, kp), p) in self.face_law(face) {
                let arrangements = arrangements(k, kp);
                let each = float_q(p / arrangements.len() as f64);
                for a in arrangements {
                    l.add(a, each.clone());
                }
            }
            if l.is_empty() {
                l = FiniteDistribution::point(Vec::new());
            }
            laws.insert(face, l);
        }
        OffspringFamily::new_approx(laws)
    }
}

fn float_q(x: f64) -> Q {
    Q::from_float(x).unwrap_or_default()
}

/// All orderings of `k` ones and `k'` twos.
pub fn arrangements(k: usize, kp: usize) -> Vec<Vec<Type>> {
    let n = k + kp;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn rec(cur: &mut Vec<Type>, ones: usize, twos: usize, out: &mut Vec<Vec<Type>>) {
        if ones == 0 && twos == 0 {
            out.push(cur.clone());
            return;
        }
        if ones > 0 {
            cur.push(1);
            rec(cur, ones - 1, twos, out);
            cur.pop();
        }
        if twos > 0 {
            cur.push(2);
            rec(cur, ones, twos - 1, out);
            cur.pop();
        }
    }
    rec(&mut cur, k, kp, &mut out);
    out
}

impl Offspring for MobileOffspring {
    fn draw<R: Rng + ?Sized>(&self, parent: Type, rng: &mut R) -> Vec<Type> {
        match parent {
            1 => vec![3; self.draw_geometric(rng)],
            2 => vec![4],
            3 | 4 => {
                let mut v = Vec::new();
                self.draw_face(parent, rng, &mut v);
                v
            }
            _ => Vec::new(),
        }
    }
}

/// Doubled drop allowed when stepping onto a vertex of type `ty`.
fn drop_onto(ty: Type) -> i64 {
    if ty == 1 {
        2
    } else {
        1
    }
}

/// Parity (mod 2) of the doubled displacement from a face of type `face`
/// to a child of type `child`.
fn child_parity(face: Type, child: Type) -> i64 {
    match (face, child) {
        (3, 1) | (4, 2) => 0,
        _ => 1,
    }
}

/// Every admissible doubled displacement vector of the children of a face
/// vertex, in lexicographic order. Errors when more than `cap` exist.
pub fn admissible_list(face: Type, ctype: &[Type], cap: usize) -> Result<Vec<Vec<i64>>> {
    if face != 3 && face != 4 {
        return Err(Error::Domain(format!("type {face} is not a face type")));
    }
    if let Some(c) = ctype.iter().find(|&&c| c != 1 && c != 2) {
        return Err(Error::InvalidMobile(format!("face child of type {c}")));
    }
    let parent = if face == 3 { 1 } else { 2 };
    let k = ctype.len();
    // suffix[i]: total drop allowance of steps i..=k (step i lands on child i).
    let mut suffix = vec![0i64; k + 2];
    suffix[k] = drop_onto(parent);
    for i in (0..k).rev() {
        suffix[i] = suffix[i + 1] + drop_onto(ctype[i]);
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(
        face: Type,
        ctype: &[Type],
        suffix: &[i64],
        prev: i64,
        cur: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
        cap: usize,
    ) -> Result<()> {
        let i = cur.len();
        if i == ctype.len() {
            out.push(cur.clone());
            if out.len() > cap {
                return Err(Error::CapExceeded(out.len()));
            }
            return Ok(());
        }
        let lo = prev - drop_onto(ctype[i]);
        let hi = suffix[i + 1];
        let par = child_parity(face, ctype[i]);
        let start = if (lo - par).rem_euclid(2) == 0 { lo } else { lo + 1 };
        let mut x = start;
        while x <= hi {
            cur.push(x);
            rec(face, ctype, suffix, x, cur, out, cap)?;
            cur.pop();
            x += 2;
        }
        Ok(())
    }
    rec(face, ctype, &suffix, 0, &mut cur, &mut out, cap)?;
    Ok(out)
}

/// Uniform law over admissible labelings of the children of a vertex of
/// type `parent_type`. Type-1 and type-2 parents give their face children
/// displacement zero.
pub fn admissible_labelings(
    parent_type: Type,
    ctype: &[Type],
    cap: usize,
) -> Result<FiniteDistribution<Vec<i64>>> {
    match parent_type {
        1 | 2 => Ok(FiniteDistribution::point(vec![0; ctype.len()])),
        _ => Ok(FiniteDistribution::uniform(admissible_list(
            parent_type,
            ctype,
            cap,
        )?)),
    }
}

/// Labeling family of mobiles for every child-type vector with at most
/// `max_children` children.
pub fn bdg_displacement_family(max_children: usize) -> Result<DisplacementFamily> {
    let mut fam = DisplacementFamily::new();
    for k in 1..=max_children {
        fam.insert_point(1, vec![3; k], vec![0; k])?;
    }
    fam.insert_point(2, vec![4], vec![0])?;
    fam.insert_point(2, vec![4, 4], vec![0, 0])?;
    for face in [3u8, 4] {
        for k in 1..=max_children {
            for ones in 0..=k {
                for a in arrangements(ones, k - ones) {
                    let law = admissible_labelings(face, &a, 1_000_000)?;
                    fam.insert(face, a, law)?;
                }
            }
        }
    }
    Ok(fam)
}

/// Checks every clause of the mobile definition; the error names the clause.
pub fn check_mobile(t: &LabeledTypedTree) -> Result<()> {
    let root = t.ty(0);
    if root != 1 && root != 2 {
        return Err(Error::InvalidMobile(format!("(i) root has type {root}")));
    }
    for v in 0..t.len() {
        let ty = t.ty(v);
        let even = t.depth(v) % 2 == 0;
        if even != (ty == 1 || ty == 2) || !(1..=4).contains(&ty) {
            return Err(Error::InvalidMobile(format!(
                "(i) vertex {} of type {ty} at depth {}",
                crate::tree_core::format_address(&t.address(v)),
                t.depth(v)
            )));
        }
        let ct = t.ctype(v);
        if ty == 1 && ct.iter().any(|&c| c != 3) {
            return Err(Error::InvalidMobile(format!("(ii) type-1 vertex {v} has child types {ct:?}")));
        }
        if ty == 2 {
            let want: &[Type] = if v == 0 { &[4, 4] } else { &[4] };
            if ct != want {
                return Err(Error::InvalidMobile(format!("(iii) type-2 vertex {v} has child types {ct:?}")));
            }
        }
        let integer = match (root, ty) {
            (1, 1 | 3) | (2, 2 | 4) => true,
            _ => false,
        };
        if (t.label2(v).rem_euclid(2) == 0) != integer {
            return Err(Error::InvalidMobile(format!(
                "({}) vertex {v} of type {ty} has label {}",
                if root == 1 { 1 } else { 2 },
                t.label(v)
            )));
        }
        if ty == 3 || ty == 4 {
            if t.disp2(v) != 0 {
                return Err(Error::InvalidMobile(format!("(4) face vertex {v} differs from its parent")));
            }
            let p = t.parent(v).expect("faces are not roots");
            let mut seq: Vec<(i64, Type)> = vec![(t.label2(p), t.ty(p))];
            seq.extend(t.kids(v).iter().map(|&c| (t.label2(c), t.ty(c))));
            seq.push((t.label2(p), t.ty(p)));
            for w in seq.windows(2) {
                if w[1].0 < w[0].0 - drop_onto(w[1].1) {
                    return Err(Error::InvalidMobile(format!(
                        "(3) label drop around face vertex {v}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Whether a map with `n_type1 + 1` vertices and faces of the supported
/// degrees exists: `2 (n_type1 - 1)` must be a sum of terms `d - 2`, with at
/// least one term for a flag root (the map has an edge).
pub fn size_feasible(q: &WeightSeq, root: Type, n_type1: usize) -> bool {
    let support = q.support();
    if support.contains(&1) {
        return root == 2 || n_type1 >= 1;
    }
    if n_type1 == 0 {
        return false;
    }
    let target = 2 * (n_type1 - 1);
    if support.contains(&2) && root == 2 {
        return size_feasible(q, 1, n_type1);
    }
    let steps: Vec<usize> = support.iter().filter(|&&d| d > 2).map(|d| d - 2).collect();
    let mut ok = vec![false; target + 1];
    ok[0] = true;
    for m in 1..=target {
        ok[m] = steps.iter().any(|&s| s <= m && ok[m - s]);
    }
    if root == 2 {
        target > 0 && ok[target]
    } else {
        ok[target]
    }
}

const HOLE: u32 = u32::MAX;

/// Sampler of mobiles with a prescribed number of type-1 vertices.
///
/// The tree induced on type-1 vertices is a single-type Galton-Watson tree
/// whose offspring are the type-1 descendants reached through faces and
/// flags. Each type-1 vertex carries such a gadget; gadgets are drawn i.i.d.,
/// the total is conditioned by rejection and the cycle lemma picks the
/// rotation that forms a tree (or forest, below a flag root).
pub struct ConditionedSampler {
    pub off: MobileOffspring,
    labels: HashMap<(Type, Vec<Type>), Vec<Vec<i64>>>,
    arena: Vec<(Type, u32)>,
    starts: Vec<usize>,
    scratch: Vec<Type>,
    stack: Vec<Type>,
}

impl ConditionedSampler {
    pub fn new(off: MobileOffspring) -> Self {
        Self {
            off,
            labels: HashMap::new(),
            arena: Vec::new(),
            starts: Vec::new(),
            scratch: Vec::new(),
            stack: Vec::new(),
        }
    }

    pub fn from_params(params: &MobileParams) -> Result<Self> {
        Ok(Self::new(mobile_offspring(params)?))
    }

    /// Appends the preorder of one gadget: the root entry, then faces, flags
    /// and type-1 holes. Returns the number of holes.
    fn gadget<R: Rng + ?Sized>(&mut self, root: Type, rng: &mut R) -> usize {
        let mut holes = 0;
        self.stack.clear();
        if root == 1 {
            let k = self.off.draw_geometric(rng);
            self.arena.push((1, k as u32));
            self.stack.extend(std::iter::repeat(3).take(k));
        } else {
            self.arena.push((2, 2));
            self.stack.extend([4, 4]);
        }
        while let Some(ty) = self.stack.pop() {
            match ty {
                1 => {
                    self.arena.push((1, HOLE));
                    holes += 1;
                }
                2 => {
                    self.arena.push((2, 1));
                    self.stack.push(4);
                }
                _ => {
                    let mut sc = std::mem::take(&mut self.scratch);
                    self.off.draw_face(ty, rng, &mut sc);
                    self.arena.push((ty, sc.len() as u32));
                    self.stack.extend(sc.iter().rev());
                    self.scratch = sc;
                }
            }
        }
        holes
    }

    /// Unlabeled mobile with root of type `root` (1 or 2) and exactly
    /// `n_type1` vertices of type 1.
    pub fn sample_shape<R: Rng + ?Sized>(
        &mut self,
        root: Type,
        n_type1: usize,
        rng: &mut R,
        attempt_cap: u64,
    ) -> Result<LabeledTypedTree> {
        if root != 1 && root != 2 {
            return Err(Error::Domain(format!("root type {root}")));
        }
        if root == 1 && n_type1 == 0 {
            return Err(Error::Domain("a type-1 root needs n_type1 >= 1".into()));
        }
        if !size_feasible(&self.off.params.q, root, n_type1) {
            return Err(Error::Domain(format!(
                "no mobile with {n_type1} type-1 vertices for these face degrees"
            )));
        }
        for _ in 0..attempt_cap {
            self.arena.clear();
            self.starts.clear();
            let mut counts = Vec::with_capacity(n_type1 + 1);
            // Roots of the forest on type-1 vertices.
            let trees = if root == 2 {
                self.starts.push(0);
                let c = self.gadget(2, rng);
                counts.push(c);
                c
            } else {
                1
            };
            if root == 2 && n_type1 == 0 {
                if trees == 0 {
                    return Ok(self.assemble(Some(0), 0, &[]));
                }
                continue;
            }
            if trees == 0 || trees > n_type1 {
                continue;
            }
            let need = n_type1 - trees;
            let mut total = 0usize;
            let mut holes = Vec::with_capacity(n_type1);
            let mut over = false;
            for _ in 0..n_type1 {
                self.starts.push(self.arena.len());
                let h = self.gadget(1, rng);
                total += h;
                holes.push(h);
                if total > need {
                    over = true;
                    break;
                }
            }
            // A walk with sum -trees codes a forest with probability trees/n.
            if over || total != need || (trees > 1 && rng.gen_range(0..n_type1) >= trees) {
                continue;
            }
            // Walk with steps h - 1 ends at -trees; valid starts are the
            // first argmin and then the first hitting times of each lower level.
            let mut s = 0i64;
            let mut best = i64::MAX;
            let mut tau = 0usize;
            for (i, &h) in holes.iter().enumerate() {
                s += h as i64 - 1;
                if s < best {
                    best = s;
                    tau = (i + 1) % n_type1;
                }
            }
            let pick = rng.gen_range(0..trees);
            let mut start = tau;
            if pick > 0 {
                let mut w = 0i64;
                for m in 0..n_type1 {
                    w += holes[(tau + m) % n_type1] as i64 - 1;
                    if w == -(pick as i64) {
                        start = (tau + m + 1) % n_type1;
                        break;
                    }
                }
            }
            let order: Vec<usize> = (0..n_type1).map(|m| (start + m) % n_type1).collect();
            let offset = usize::from(root == 2);
            let prefix = (root == 2).then_some(0);
            return Ok(self.assemble(prefix, offset, &order));
        }
        Err(Error::Exhausted {
            attempts: attempt_cap,
        })
    }

    /// Splices gadgets: each hole is replaced by the next gadget of `order`.
    fn assemble(&self, prefix: Option<usize>, offset: usize, order: &[usize]) -> LabeledTypedTree {
        let mut types = Vec::new();
        let mut children = Vec::new();
        let gadget_range = |g: usize| -> (usize, usize) {
            let s = self.starts[g];
            let e = self.starts.get(g + 1).copied().unwrap_or(self.arena.len());
            (s, e)
        };
        let mut next = 0usize;
        let mut stack: Vec<(usize, usize)> = Vec::new();
        let first = match prefix {
            Some(g) => g,
            None => {
                next = 1;
                order[0] + offset
            }
        };
        let (s, e) = gadget_range(first);
        stack.push((s, e));
        while let Some(top) = stack.last_mut() {
            if top.0 == top.1 {
                stack.pop();
                continue;
            }
            let pos = top.0;
            top.0 += 1;
            let (ty, c) = self.arena[pos];
            let is_root = self.starts.binary_search(&pos).is_ok();
            if c == HOLE && !is_root {
                let g = order[next] + offset;
                next += 1;
                let (s, e) = gadget_range(g);
                stack.push((s, e));
                continue;
            }
            types.push(ty);
            children.push(c as usize);
        }
        let n = types.len();
        LabeledTypedTree::new(types, children, vec![0; n - 1]).expect("gadgets splice into a tree")
    }

    /// Uniform admissible labeling of a mobile shape.
    pub fn label<R: Rng + ?Sized>(&mut self, t: &LabeledTypedTree, rng: &mut R) -> Result<LabeledTypedTree> {
        let mut d = vec![0i64; t.len()];
        for v in 0..t.len() {
            let ty = t.ty(v);
            if (ty == 3 || ty == 4) && t.k(v) > 0 {
                let key = (ty, t.ctype(v));
                if !self.labels.contains_key(&key) {
                    let list = admissible_list(ty, &key.1, 10_000_000)?;
                    self.labels.insert(key.clone(), list);
                }
                let list = &self.labels[&key];
                let x = &list[rng.gen_range(0..list.len())];
                for (&c, &xi) in t.kids(v).iter().zip(x) {
                    d[c] = xi;
                }
            }
        }
        Ok(t.with_disp2_full(d))
    }

    /// Labeled mobile with `n_type1` type-1 vertices.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        root: Type,
        n_type1: usize,
        rng: &mut R,
        attempt_cap: u64,
    ) -> Result<LabeledTypedTree> {
        let shape = self.sample_shape(root, n_type1, rng, attempt_cap)?;
        self.label(&shape, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{centering_check, gw_sample, gw_sample_conditioned, symmetrize_family, Centering};
    use crate::rational::{q, qi};
    use crate::symmetry::canonical_key;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q5() -> WeightSeq {
        WeightSeq::single(5, 0.02)
    }

    #[test]
    fn labeling_examples() {
        let d = admissible_labelings(3, &[1], 100).unwrap();
        assert_eq!(d, FiniteDistribution::uniform([vec![-2], vec![0], vec![2]]));
        let d = admissible_labelings(4, &[1], 100).unwrap();
        assert_eq!(d, FiniteDistribution::uniform([vec![-1], vec![1]]));
        assert_eq!(admissible_labelings(1, &[3, 3], 100).unwrap(), FiniteDistribution::point(vec![0, 0]));
        assert_eq!(admissible_labelings(2, &[4], 100).unwrap(), FiniteDistribution::point(vec![0]));
        assert_eq!(admissible_list(3, &[1, 2], 100).unwrap().len(), 6);
        assert!(admissible_list(3, &[1; 6], 10).is_err());
    }

    #[test]
    fn labeling_counts_match_multinomials() {
        // Summed over arrangements, labelings of a type-3 face count
        // multinom(2k+k'+1; k+1, k, k') and of a type-4 face multinom(2k+k'; k, k, k').
        for k in 0..4 {
            for kp in 0..4 {
                let s3: usize = arrangements(k, kp)
                    .iter()
                    .map(|a| admissible_list(3, a, 1 << 20).unwrap().len())
                    .sum();
                let s4: usize = arrangements(k, kp)
                    .iter()
                    .map(|a| admissible_list(4, a, 1 << 20).unwrap().len())
                    .sum();
                assert_eq!(s3, multinomial(2 * k + kp + 1, &[k + 1, k, kp]).to_usize().unwrap());
                assert_eq!(s4, multinomial(2 * k + kp, &[k, k, kp]).to_usize().unwrap());
            }
        }
    }

    #[test]
    fn bdg_family_centering() {
        let fam = bdg_displacement_family(2).unwrap();
        assert!(centering_check(&fam, Centering::Centered));
        assert!(!centering_check(&fam, Centering::Local));
        assert!(centering_check(&symmetrize_family(&fam).unwrap(), Centering::Local));
        let d = fam.get(3, &[1]).unwrap();
        assert_eq!(d.expect(|x| qi(x[0])), q(0, 1));
    }

    #[test]
    fn zeta1_geometric() {
        let p = MobileParams {
            q: WeightSeq::single(4, 0.1),
            zplus: 2.0,
            zzero: 0.0,
            alpha: 1.0,
            beta: 1.0,
            truncation: 10,
        };
        let sys = System::new(&p.q);
        let a = poly(&sys.t3, 2.0, 0.0).0;
        let b = poly(&sys.t4, 2.0, 0.0).0;
        let p = MobileParams {
            alpha: 1.0 / a,
            beta: if b > 0.0 { 1.0 / b } else { 0.0 },
            ..p
        };
        let off = mobile_offspring(&p).unwrap();
        for k in 0..5 {
            assert!((off.zeta1(k) - 0.5f64.powi(k as i32 + 1)).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = gw_sample(&off, 2, &mut rng, 10).unwrap_or_else(|_| LabeledTypedTree::single(2));
        assert_eq!(t.ctype(0).first().copied().unwrap_or(4), 4);
    }

    #[test]
    fn q5_support() {
        let params = solve_constants(&q5(), 1e-12).unwrap();
        let off = mobile_offspring(&params).unwrap();
        let law3: Vec<(usize, usize)> = off.face_law(3).into_iter().map(|(c, _)| c).collect();
        assert_eq!(law3, vec![(0, 3), (1, 1)]);
        let x = params.zplus;
        let z0 = params.zzero;
        let ratio = off.zeta_face(3, 0, 3) / off.zeta_face(3, 1, 1);
        let want = (z0.powf(1.5) * 4.0) / (x * z0.sqrt() * 12.0);
        assert!((ratio - want).abs() < 1e-12);
        assert!(params.residual() < 1e-12);
        assert!(params.normalization_error() < 1e-10);
    }

    #[test]
    fn solve_rejects_degenerate_weights() {
        assert!(solve_constants(&WeightSeq::single(1, 0.5), 1e-12).is_err());
        assert!(matches!(
            solve_constants(&WeightSeq::single(5, 1.0), 1e-12),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn quadrangulation_constants() {
        let params = solve_constants(&WeightSeq::single(4, 1.0 / 15.0), 1e-12).unwrap();
        let off = mobile_offspring(&params).unwrap();
        let s: f64 = (0..2000).map(|k| off.zeta1(k)).sum();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn critical_scale_for_pentagons() {
        let (c, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        assert!((c - 0.033203125).abs() < 1e-6, "c = {c}");
        assert!((params.criticality() - 1.0).abs() < 1e-6);
        assert!(params.residual() < 1e-9);
    }

    #[test]
    fn truncated_family_is_normalized() {
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let off = mobile_offspring(&params).unwrap();
        let fam = off.truncated_family(60).unwrap();
        for ty in 1..=4u8 {
            assert!((crate::rational::to_f64(&fam.law(ty).unwrap().total()) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sampled_mobiles_are_valid() {
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let mut s = ConditionedSampler::from_params(&params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in [1usize, 4, 7, 40, 301] {
            let t = s.sample(1, n, &mut rng, 1_000_000).unwrap();
            check_mobile(&t).unwrap();
            assert_eq!(t.types().iter().filter(|&&x| x == 1).count(), n);
        }
        for n in [4usize, 7, 40] {
            let t = s.sample(2, n, &mut rng, 1_000_000).unwrap();
            check_mobile(&t).unwrap();
            assert_eq!(t.ty(0), 2);
            assert_eq!(t.types().iter().filter(|&&x| x == 1).count(), n);
        }
    }

    #[test]
    fn pentagon_sizes() {
        let q = q5();
        let ok: Vec<usize> = (0..12).filter(|&n| size_feasible(&q, 1, n)).collect();
        assert_eq!(ok, vec![1, 4, 7, 10]);
        let ok: Vec<usize> = (0..12).filter(|&n| size_feasible(&q, 2, n)).collect();
        assert_eq!(ok, vec![4, 7, 10]);
        assert!((1..9).all(|n| size_feasible(&WeightSeq::single(4, 1.0), 1, n)));
        assert!(size_feasible(&WeightSeq::single(1, 1.0), 2, 0));
        let mut s = ConditionedSampler::from_params(&solve_constants(&q, 1e-12).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(s.sample_shape(1, 5, &mut rng, 10), Err(Error::Domain(_))));
    }

    #[test]
    fn check_mobile_reports_clauses() {
        let bad = LabeledTypedTree::new(vec![1, 4], vec![1, 0], vec![0]).unwrap();
        assert!(matches!(check_mobile(&bad), Err(Error::InvalidMobile(m)) if m.starts_with("(ii)")));
        let lab = LabeledTypedTree::new(vec![1, 3, 1], vec![1, 1, 0], vec![0, 1]).unwrap();
        assert!(matches!(check_mobile(&lab), Err(Error::InvalidMobile(m)) if m.starts_with("(1)")));
        let drop = LabeledTypedTree::new(vec![1, 3, 1], vec![1, 1, 0], vec![0, -4]).unwrap();
        assert!(matches!(check_mobile(&drop), Err(Error::InvalidMobile(m)) if m.starts_with("(3)")));
        let ok = LabeledTypedTree::new(vec![1, 3], vec![1, 0], vec![0]).unwrap();
        check_mobile(&ok).unwrap();
    }

    /// Two independent type-4 trees under a flag root, by rejection.
    fn flag_root_rejection(off: &MobileOffspring, n: usize, rng: &mut ChaCha8Rng) -> LabeledTypedTree {
        loop {
            let (Ok(l), Ok(r)) = (gw_sample(off, 4, rng, 200), gw_sample(off, 4, rng, 200)) else {
                continue;
            };
            let ones = |t: &LabeledTypedTree| t.types().iter().filter(|&&x| x == 1).count();
            if ones(&l) + ones(&r) != n {
                continue;
            }
            let types: Vec<Type> = std::iter::once(2).chain(l.types().iter().chain(r.types()).copied()).collect();
            let kids: Vec<usize> =
                std::iter::once(2).chain(l.child_counts().iter().chain(r.child_counts()).copied()).collect();
            let m = types.len();
            return LabeledTypedTree::new(types, kids, vec![0; m - 1]).unwrap();
        }
    }

    /// The cycle-lemma sampler and plain rejection agree on small shapes.
    #[test]
    fn cycle_lemma_matches_rejection() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let (_, params) = solve_critical(&WeightSeq::single(5, 1.0)).unwrap();
        let mut s = ConditionedSampler::from_params(&params).unwrap();
        let off = s.off.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for root in [1u8, 2] {
            let n = 7;
            let draws = 20_000;
            let mut a: BTreeMap<String, f64> = BTreeMap::new();
            let mut b: BTreeMap<String, f64> = BTreeMap::new();
            for _ in 0..draws {
                let t = s.sample_shape(root, n, &mut rng, 1_000_000).unwrap();
                *a.entry(canonical_key(&t)).or_default() += 1.0;
                let r = if root == 1 {
                    gw_sample_conditioned(&off, 1, (1, n), &mut rng, 10_000_000, 200).unwrap()
                } else {
                    flag_root_rejection(&off, n, &mut rng)
                };
                *b.entry(canonical_key(&r)).or_default() += 1.0;
            }
            let keys: std::collections::BTreeSet<_> = a.keys().chain(b.keys()).cloned().collect();
            let mut chi = 0.0;
            let mut df = 0;
            for k in keys {
                let x = a.get(&k).copied().unwrap_or(0.0);
                let y = b.get(&k).copied().unwrap_or(0.0);
                if x + y >= 10.0 {
                    chi += (x - y).powi(2) / (x + y);
                    df += 1;
                }
            }
            assert!(df > 5, "root {root}: only {df} shapes");
            let p = 1.0 - ChiSquared::new((df - 1) as f64).unwrap().cdf(chi);
            assert!(p > 1e-3, "root {root}: chi {chi}, df {df}, p {p}");
        }
    }
}
