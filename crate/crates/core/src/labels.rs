//! Ulam–Harris labels.
//!
//! A label is the sequence of child indices leading from a founding particle
//! to a descendant. The empty sequence is the mother particle and renders as
//! `∅`; everything else renders dot-separated (`1.2.0`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Rendering of the empty label.
pub const ROOT_SYMBOL: &str = "∅";

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(Vec<u32>);

impl Label {
    pub fn root() -> Self {
        Label(Vec::new())
    }

    pub fn from_path(path: Vec<u32>) -> Self {
        Label(path)
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of indices in the path.
    pub fn generation(&self) -> usize {
        self.0.len()
    }

    pub fn parent(&self) -> Option<Label> {
        let (_, init) = self.0.split_last()?;
        Some(Label(init.to_vec()))
    }

    pub fn child(&self, k: u32) -> Label {
        let mut path = Vec::with_capacity(self.0.len() + 1);
        path.extend_from_slice(&self.0);
        path.push(k);
        Label(path)
    }

    pub fn concat(&self, other: &Label) -> Label {
        let mut path = Vec::with_capacity(self.0.len() + other.0.len());
        path.extend_from_slice(&self.0);
        path.extend_from_slice(&other.0);
        Label(path)
    }

    /// True when `self` is a proper prefix of `other`.
    pub fn is_strict_ancestor_of(&self, other: &Label) -> bool {
        self.0.len() < other.0.len() && other.0.starts_with(&self.0)
    }

    pub fn is_ancestor_or_self(&self, other: &Label) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn common_prefix_len(&self, other: &Label) -> usize {
        self.0
            .iter()
            .zip(&other.0)
            .take_while(|(a, b)| a == b)
            .count()
    }

    /// Tree distance where stepping to child `k` costs `k + 1`.
    pub fn ulam_distance(&self, other: &Label) -> u64 {
        let p = self.common_prefix_len(other);
        let cost = |s: &[u32]| s.iter().map(|&k| u64::from(k) + 1).sum::<u64>();
        cost(&self.0[p..]) + cost(&other.0[p..])
    }

    /// Distance to the mother particle, `ulam_distance(self, ∅)`.
    pub fn ulam_depth(&self) -> u64 {
        self.ulam_distance(&Label::root())
    }
}

pub fn concat(i: &Label, j: &Label) -> Label {
    i.concat(j)
}

/// `j` is the ancestor, `i` the descendant.
pub fn is_strict_ancestor(j: &Label, i: &Label) -> bool {
    j.is_strict_ancestor_of(i)
}

pub fn ulam_distance(i: &Label, j: &Label) -> u64 {
    i.ulam_distance(j)
}

pub fn generation(i: &Label) -> usize {
    i.generation()
}

/// True when no label is an ancestor of (or equal to) another.
///
/// After a lexicographic sort every extension of a label directly follows it,
/// so checking neighbours is enough.
pub fn is_antichain<'a, I>(labels: I) -> bool
where
    I: IntoIterator<Item = &'a Label>,
{
    let mut sorted: Vec<&Label> = labels.into_iter().collect();
    sorted.sort_unstable();
    sorted.windows(2).all(|w| !w[0].is_ancestor_or_self(w[1]))
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(ROOT_SYMBOL);
        }
        for (n, k) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(".")?;
            }
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == ROOT_SYMBOL {
            return Ok(Label::root());
        }
        s.split('.')
            .map(|part| {
                part.parse::<u32>()
                    .map_err(|_| Error::invalid(format!("bad label `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Label)
    }
}

impl From<Vec<u32>> for Label {
    fn from(path: Vec<u32>) -> Self {
        Label(path)
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(p: &[u32]) -> Label {
        Label::from_path(p.to_vec())
    }

    #[test]
    fn concat_examples() {
        assert_eq!(concat(&Label::root(), &l(&[3])), l(&[3]));
        assert_eq!(concat(&l(&[1, 2]), &l(&[0])), l(&[1, 2, 0]));
        assert_eq!(concat(&l(&[0]), &l(&[0])), l(&[0, 0]));
        assert_eq!(concat(&l(&[4]), &Label::root()), l(&[4]));
    }

    #[test]
    fn ancestry_examples() {
        assert!(is_strict_ancestor(&l(&[1]), &l(&[1, 0])));
        assert!(!is_strict_ancestor(&l(&[1]), &l(&[1])));
        assert!(!is_strict_ancestor(&l(&[1, 0]), &l(&[1])));
        assert!(is_strict_ancestor(&Label::root(), &l(&[7])));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(ulam_distance(&Label::root(), &Label::root()), 0);
        assert_eq!(ulam_distance(&l(&[0]), &Label::root()), 1);
        assert_eq!(ulam_distance(&l(&[1, 2]), &l(&[1, 0, 3])), 8);
        assert_eq!(l(&[2, 0]).ulam_depth(), 4);
    }

    #[test]
    fn parent_and_generation() {
        assert_eq!(Label::root().parent(), None);
        assert_eq!(l(&[1, 2]).parent(), Some(l(&[1])));
        assert_eq!(generation(&l(&[1, 2, 0])), 3);
        assert_eq!(l(&[5]).child(2), l(&[5, 2]));
    }

    #[test]
    fn antichain_examples() {
        assert!(!is_antichain(&[l(&[1]), l(&[1, 0])]));
        assert!(is_antichain(&[l(&[0]), l(&[1])]));
        assert!(is_antichain(&[]));
        assert!(!is_antichain(&[l(&[2]), l(&[2])]));
        // ancestor hidden behind a sibling in sort order
        assert!(!is_antichain(&[l(&[1, 0, 5]), l(&[1, 1]), l(&[1, 0])]));
    }

    #[test]
    fn render_and_parse() {
        assert_eq!(Label::root().to_string(), "∅");
        assert_eq!(l(&[1, 2, 0]).to_string(), "1.2.0");
        assert_eq!("1.2.0".parse::<Label>().unwrap(), l(&[1, 2, 0]));
        assert_eq!("∅".parse::<Label>().unwrap(), Label::root());
        assert!("1..2".parse::<Label>().is_err());
        let json = serde_json::to_string(&l(&[3, 1])).unwrap();
        assert_eq!(json, "\"3.1\"");
        assert_eq!(serde_json::from_str::<Label>(&json).unwrap(), l(&[3, 1]));
    }
}
