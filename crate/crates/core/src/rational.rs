//! Exact rational helpers and finite probability tables.

use std::collections::BTreeMap;
use std::fmt::Display;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

pub fn q(num: i64, den: i64) -> Q {
    Q::new(BigInt::from(num), BigInt::from(den))
}

pub fn qi(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn one() -> Q {
    Q::one()
}

pub fn zero() -> Q {
    Q::zero()
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub fn factorial(k: usize) -> BigInt {
    (1..=k as u64).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// Multinomial coefficient n! / (k_1! ... k_r!), zero when the parts do not sum to n.
pub fn multinomial(n: usize, parts: &[usize]) -> BigInt {
    if parts.iter().sum::<usize>() != n {
        return BigInt::zero();
    }
    parts
        .iter()
        .fold(factorial(n), |acc, &k| acc / factorial(k))
}

/// `num/den` rendered as a compact string, used for CSV export.
pub fn parts(x: &Q) -> (String, String) {
    (x.numer().to_string(), x.denom().to_string())
}

pub fn abs(x: &Q) -> Q {
    x.abs()
}

/// Exact probability table over ordered outcomes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteDistribution<K: Ord = String> {
    probs: BTreeMap<K, Q>,
}

impl<K: Ord> Default for FiniteDistribution<K> {
    fn default() -> Self {
        Self {
            probs: BTreeMap::new(),
        }
    }
}

impl<K: Ord + Clone> FiniteDistribution<K> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn point(k: K) -> Self {
        let mut d = Self::new();
        d.add(k, one());
        d
    }

    /// Uniform over the distinct outcomes yielded.
    pub fn uniform(outcomes: impl IntoIterator<Item = K>) -> Self {
        let mut d = Self::new();
        for k in outcomes {
            d.probs.insert(k, one());
        }
        let n = qi(d.probs.len() as i64);
        for p in d.probs.values_mut() {
            *p = &*p / &n;
        }
        d
    }

    /// Adds mass `p` to outcome `k`; zero masses are dropped.
    pub fn add(&mut self, k: K, p: Q) {
        if p.is_zero() {
            return;
        }
        let e = self.probs.entry(k).or_insert_with(zero);
        *e += p;
    }

    pub fn get(&self, k: &K) -> Q {
        self.probs.get(k).cloned().unwrap_or_else(zero)
    }

    pub fn total(&self) -> Q {
        self.probs.values().fold(zero(), |a, p| a + p)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&K, &Q)> {
        self.probs.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &K> {
        self.probs.keys()
    }

    /// Rescales to total mass 1.
    pub fn normalized(&self) -> Self {
        let t = self.total();
        Self {
            probs: self.probs.iter().map(|(k, p)| (k.clone(), p / &t)).collect(),
        }
    }

    /// Push-forward through `f`.
    pub fn map<K2: Ord + Clone>(&self, f: impl Fn(&K) -> K2) -> FiniteDistribution<K2> {
        let mut d = FiniteDistribution::new();
        for (k, p) in &self.probs {
            d.add(f(k), p.clone());
        }
        d
    }

    pub fn scaled(&self, c: &Q) -> Self {
        Self {
            probs: self.probs.iter().map(|(k, p)| (k.clone(), p * c)).collect(),
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (k, p) in &other.probs {
            self.add(k.clone(), p.clone());
        }
    }

    /// Expectation of a rational-valued statistic.
    pub fn expect(&self, f: impl Fn(&K) -> Q) -> Q {
        self.probs.iter().fold(zero(), |a, (k, p)| a + f(k) * p)
    }
}

impl<K: Ord + Clone + Display> FiniteDistribution<K> {
    /// CSV with header `key,numerator,denominator`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("key,numerator,denominator\n");
        for (k, p) in &self.probs {
            let (n, d) = parts(p);
            out.push_str(&format!("\"{k}\",{n},{d}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multinomial_values() {
        assert_eq!(multinomial(4, &[1, 0, 3]), BigInt::from(4));
        assert_eq!(multinomial(4, &[2, 1, 1]), BigInt::from(12));
        assert_eq!(multinomial(3, &[1, 1]), BigInt::zero());
        assert_eq!(multinomial(0, &[0, 0, 0]), BigInt::one());
    }

    #[test]
    fn distribution_basics() {
        let d = FiniteDistribution::uniform(["a".to_string(), "b".to_string(), "a".to_string()]);
        assert_eq!(d.len(), 2);
        assert_eq!(d.get(&"a".to_string()), q(1, 2));
        assert_eq!(d.total(), one());
        let m = d.map(|_| 0u8);
        assert_eq!(m.get(&0), one());
        assert!(d.to_csv().starts_with("key,numerator,denominator\n\"a\",1,2\n"));
    }

    #[test]
    fn rational_roundtrip() {
        assert_eq!(q(2, 4), q(1, 2));
        assert!((to_f64(&q(1, 3)) - 1.0 / 3.0).abs() < 1e-15);
    }
}
