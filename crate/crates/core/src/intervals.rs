//! Finite unions of closed intervals on the line.

use serde::{Deserialize, Serialize};

/// Sorted, pairwise disjoint, non-degenerate closed intervals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct IntervalSet {
    parts: Vec<[f64; 2]>,
}

impl From<Vec<[f64; 2]>> for IntervalSet {
    fn from(v: Vec<[f64; 2]>) -> Self {
        Self::new(v)
    }
}

impl From<IntervalSet> for Vec<[f64; 2]> {
    fn from(s: IntervalSet) -> Self {
        s.parts
    }
}

impl IntervalSet {
    /// Normalizes: drops empty intervals, sorts, merges overlapping or touching ones.
    pub fn new(mut v: Vec<[f64; 2]>) -> Self {
        v.retain(|iv| iv[1] > iv[0]);
        v.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut parts: Vec<[f64; 2]> = Vec::with_capacity(v.len());
        for iv in v {
            match parts.last_mut() {
                Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
                _ => parts.push(iv),
            }
        }
        Self { parts }
    }

    pub fn single(lo: f64, hi: f64) -> Self {
        Self::new(vec![[lo, hi]])
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn parts(&self) -> &[[f64; 2]] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(|iv| iv[1] - iv[0]).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.parts.iter().any(|iv| iv[0] <= x && x <= iv[1])
    }

    /// Signed distance to the boundary: positive inside, negative outside.
    pub fn depth(&self, x: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for iv in &self.parts {
            let d = (x - iv[0]).min(iv[1] - x);
            best = best.max(d);
        }
        best
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut v = self.parts.clone();
        v.extend_from_slice(&other.parts);
        Self::new(v)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        for a in &self.parts {
            for b in &other.parts {
                let lo = a[0].max(b[0]);
                let hi = a[1].min(b[1]);
                if hi > lo {
                    out.push([lo, hi]);
                }
            }
        }
        Self::new(out)
    }

    /// `self ∖ other`, up to the boundary points.
    pub fn difference(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        let mut j = 0;
        for a in &self.parts {
            let mut lo = a[0];
            while j < other.parts.len() && other.parts[j][1] <= lo {
                j += 1;
            }
            let mut k = j;
            while k < other.parts.len() && other.parts[k][0] < a[1] {
                let b = other.parts[k];
                if b[0] > lo {
                    out.push([lo, b[0]]);
                }
                lo = lo.max(b[1]);
                k += 1;
            }
            if lo < a[1] {
                out.push([lo, a[1]]);
            }
        }
        Self::new(out)
    }

    /// Points whose δ-neighbourhood lies in the set.
    pub fn erode(&self, delta: f64) -> Self {
        Self::new(self.parts.iter().map(|iv| [iv[0] + delta, iv[1] - delta]).collect())
    }

    pub fn dilate(&self, delta: f64) -> Self {
        Self::new(self.parts.iter().map(|iv| [iv[0] - delta, iv[1] + delta]).collect())
    }

    /// Subset test with slack `tol`.
    pub fn is_subset_of(&self, other: &Self, tol: f64) -> bool {
        self.parts.iter().all(|iv| other.parts.iter().any(|o| o[0] - tol <= iv[0] && iv[1] <= o[1] + tol))
    }
}
