//! Subshifts of finite type: transition matrices, finite words, truncated leaves.
//!
//! Symbols are stored 0-based. They are shown 1-based in `Display`, in serialized
//! form and in the `from_one_based` constructors, which is how reports and
//! configs write them.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub type Symbol = u8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SymbolicError {
    #[error("symbol {symbol} out of range 1..={n}")]
    SymbolOutOfRange { symbol: usize, n: usize },
    #[error("transition matrix must be square with 0/1 entries")]
    BadMatrix,
    #[error("symbol {0} has an empty row or column")]
    DeadSymbol(usize),
    #[error("junction {0}->{1} is not admissible")]
    Junction(usize, usize),
    #[error("orientation mismatch")]
    Orientation,
    #[error("cannot parse word `{0}`")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TransitionMatrix {
    n: usize,
    entries: Vec<u8>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<u8>>) -> Result<Self, SymbolicError> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n || r.iter().any(|&e| e > 1)) {
            return Err(SymbolicError::BadMatrix);
        }
        let entries: Vec<u8> = rows.into_iter().flatten().collect();
        for i in 0..n {
            let row = (0..n).any(|j| entries[i * n + j] == 1);
            let col = (0..n).any(|j| entries[j * n + i] == 1);
            if !row || !col {
                return Err(SymbolicError::DeadSymbol(i + 1));
            }
        }
        Ok(Self { n, entries })
    }

    pub fn full_shift(n: usize) -> Self {
        Self { n, entries: vec![1; n * n] }
    }

    pub fn n_symbols(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn allows(&self, a: Symbol, b: Symbol) -> bool {
        self.entries[a as usize * self.n + b as usize] == 1
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.entries.chunks(self.n).map(|c| c.to_vec()).collect()
    }

    pub fn is_full_shift(&self) -> bool {
        self.entries.iter().all(|&e| e == 1)
    }

    fn check(&self, s: Symbol) -> Result<(), SymbolicError> {
        if (s as usize) < self.n {
            Ok(())
        } else {
            Err(SymbolicError::SymbolOutOfRange { symbol: s as usize + 1, n: self.n })
        }
    }

    /// Smallest symbol that may precede `b`.
    pub fn first_predecessor(&self, b: Symbol) -> Symbol {
        (0..self.n as Symbol).find(|&a| self.allows(a, b)).expect("no dead symbols")
    }

    /// Smallest symbol that may follow `a`.
    pub fn first_successor(&self, a: Symbol) -> Symbol {
        (0..self.n as Symbol).find(|&b| self.allows(a, b)).expect("no dead symbols")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Forward,
    Backward,
}

/// A finite word in reading order. For backward words the last letter is θ₀.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    letters: Vec<Symbol>,
    orientation: Orientation,
}

impl PartialOrd for Orientation {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Orientation {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

impl Word {
    pub fn forward(letters: Vec<Symbol>) -> Self {
        Self { letters, orientation: Orientation::Forward }
    }

    pub fn backward(letters: Vec<Symbol>) -> Self {
        Self { letters, orientation: Orientation::Backward }
    }

    pub fn empty(orientation: Orientation) -> Self {
        Self { letters: Vec::new(), orientation }
    }

    pub fn from_one_based(letters: &[usize], orientation: Orientation) -> Self {
        Self {
            letters: letters.iter().map(|&l| (l - 1) as Symbol).collect(),
            orientation,
        }
    }

    pub fn letters(&self) -> &[Symbol] {
        &self.letters
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.letters.iter().map(|&l| l as usize + 1).collect()
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn first(&self) -> Option<Symbol> {
        self.letters.first().copied()
    }

    pub fn last(&self) -> Option<Symbol> {
        self.letters.last().copied()
    }

    /// θ_{−i} of a backward word (i = 0 is the rightmost letter).
    pub fn back(&self, i: usize) -> Option<Symbol> {
        self.letters.len().checked_sub(i + 1).map(|k| self.letters[k])
    }

    pub fn push(&mut self, s: Symbol) {
        self.letters.push(s);
    }

    /// The last `k` letters, same orientation.
    pub fn suffix(&self, k: usize) -> Word {
        let k = k.min(self.len());
        Word { letters: self.letters[self.len() - k..].to_vec(), orientation: self.orientation }
    }

    pub fn prefix(&self, k: usize) -> Word {
        let k = k.min(self.len());
        Word { letters: self.letters[..k].to_vec(), orientation: self.orientation }
    }

    pub fn parse(text: &str, orientation: Orientation) -> Result<Self, SymbolicError> {
        let t = text.trim();
        if t.is_empty() {
            return Ok(Self::empty(orientation));
        }
        let letters = t
            .split(',')
            .map(|p| match p.trim().parse::<usize>() {
                Ok(v) if v >= 1 && v <= 256 => Ok((v - 1) as Symbol),
                _ => Err(SymbolicError::Parse(text.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { letters, orientation })
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.letters.iter().map(|l| (l + 1).to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

impl Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

pub fn is_admissible(word: &Word, a: &TransitionMatrix) -> Result<bool, SymbolicError> {
    for &s in word.letters() {
        a.check(s)?;
    }
    Ok(word.letters().windows(2).all(|p| a.allows(p[0], p[1])))
}

fn bool_mul(x: &[bool], y: &[bool], n: usize) -> Vec<bool> {
    let mut out = vec![false; n * n];
    for i in 0..n {
        for k in 0..n {
            if x[i * n + k] {
                for j in 0..n {
                    out[i * n + j] |= y[k * n + j];
                }
            }
        }
    }
    out
}

/// Smallest n ≤ n_max with every entry of Aⁿ positive.
pub fn mixing_exponent(a: &TransitionMatrix, n_max: usize) -> Option<usize> {
    let n = a.n;
    let base: Vec<bool> = a.entries.iter().map(|&e| e == 1).collect();
    let mut power = base.clone();
    for k in 1..=n_max {
        if power.iter().all(|&b| b) {
            return Some(k);
        }
        power = bool_mul(&power, &base, n);
    }
    None
}

/// All admissible forward words of `length`, lexicographic. With `following = Some(k)`
/// only words whose first letter b has A[k][b] = 1.
pub fn enumerate_words(a: &TransitionMatrix, length: usize, following: Option<Symbol>) -> Vec<Word> {
    let n = a.n as Symbol;
    let mut out = Vec::new();
    if length == 0 {
        out.push(Word::empty(Orientation::Forward));
        return out;
    }
    let mut stack: Vec<Symbol> = Vec::with_capacity(length);
    fn rec(
        a: &TransitionMatrix,
        n: Symbol,
        length: usize,
        following: Option<Symbol>,
        stack: &mut Vec<Symbol>,
        out: &mut Vec<Word>,
    ) {
        if stack.len() == length {
            out.push(Word::forward(stack.clone()));
            return;
        }
        for b in 0..n {
            let ok = match stack.last() {
                Some(&p) => a.allows(p, b),
                None => following.map_or(true, |k| a.allows(k, b)),
            };
            if ok {
                stack.push(b);
                rec(a, n, length, following, stack, out);
                stack.pop();
            }
        }
    }
    rec(a, n, length, following, &mut stack, &mut out);
    out
}

pub fn concat(w1: &Word, w2: &Word, a: &TransitionMatrix) -> Result<Word, SymbolicError> {
    if w1.orientation != w2.orientation {
        return Err(SymbolicError::Orientation);
    }
    if let (Some(x), Some(y)) = (w1.last(), w2.first()) {
        if !a.allows(x, y) {
            return Err(SymbolicError::Junction(x as usize + 1, y as usize + 1));
        }
    }
    let mut letters = w1.letters.clone();
    letters.extend_from_slice(&w2.letters);
    Ok(Word { letters, orientation: w1.orientation })
}

/// A leaf θ⁻ known through its last `depth` letters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeafApprox {
    pub suffix: Word,
    pub error_bound: f64,
}

impl LeafApprox {
    pub fn depth(&self) -> usize {
        self.suffix.len()
    }

    /// θ₀, the Markov box containing the leaf.
    pub fn box_symbol(&self) -> Symbol {
        self.suffix.last().expect("leaf truncation has at least one letter")
    }

    pub fn same_block(&self, other: &LeafApprox) -> bool {
        self.suffix == other.suffix
    }

    /// Future letters θ₀, θ₋₁, … up to `len`; past the truncation the leaf is
    /// continued with the smallest admissible predecessor.
    pub fn future(&self, a: &TransitionMatrix, len: usize) -> Vec<Symbol> {
        let mut out: Vec<Symbol> = self.suffix.letters().iter().rev().copied().take(len).collect();
        while out.len() < len {
            let prev = *out.last().expect("nonempty");
            out.push(a.first_predecessor(prev));
        }
        out
    }
}
