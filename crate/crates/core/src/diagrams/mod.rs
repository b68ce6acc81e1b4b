//! Connected pairings of diagram endpoints and the iterative decomposition
//! that builds order-m pairings from order m−2 ones.
//!
//! Points are labelled `1..=m`. A pairing is connected when its arcs form a
//! single component under the crossing relation `a < c < b < d`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use thiserror::Error;

/// Largest pairing order enumerated exhaustively.
pub const MAX_PAIRING_ORDER: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum DiagramError {
    #[error("invalid pairing order {m}: {reason}")]
    InvalidOrder { m: usize, reason: String },
    #[error("invalid pairing: {0}")]
    InvalidPairing(String),
}

/// Perfect pairing in canonical form: each pair `(j, k)` has `j < k`, pairs sorted by `j`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pairing {
    pairs: Vec<(usize, usize)>,
}

impl Pairing {
    /// Canonicalises and checks that `pairs` covers `1..=2·len` exactly once.
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, DiagramError> {
        let mut pairs: Vec<(usize, usize)> = pairs.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        pairs.sort_unstable();
        let m = 2 * pairs.len();
        let mut seen = vec![false; m + 1];
        for &(a, b) in &pairs {
            for x in [a, b] {
                if x == 0 || x > m || seen[x] {
                    return Err(DiagramError::InvalidPairing(format!("{pairs:?} is not a perfect pairing of 1..={m}")));
                }
                seen[x] = true;
            }
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of points `m`.
    pub fn order(&self) -> usize {
        2 * self.pairs.len()
    }

    /// Removes the pair containing point 1 and relabels the rest to `1..=m−2`.
    /// Returns the partner of point 1 and the remainder.
    pub fn remove_first_arc(&self) -> (usize, Pairing) {
        let j = self.pairs[0].1;
        let relabel = |x: usize| if x > j { x - 2 } else { x - 1 };
        let rest = self.pairs[1..].iter().map(|&(a, b)| (relabel(a), relabel(b))).collect();
        (j, Pairing { pairs: rest })
    }

    /// Inserts an arc `(1, j)` in front of `self` (relabelled to make room).
    pub fn with_first_arc(&self, j: usize) -> Pairing {
        let relabel = |x: usize| if x + 1 >= j { x + 2 } else { x + 1 };
        let mut pairs = vec![(1, j)];
        pairs.extend(self.pairs.iter().map(|&(a, b)| (relabel(a), relabel(b))));
        pairs.sort_unstable();
        Pairing { pairs }
    }
}

fn crosses((a, b): (usize, usize), (c, d): (usize, usize)) -> bool {
    (a < c && c < b && b < d) || (c < a && a < d && d < b)
}

/// Whether the crossing graph of the arcs is connected.
pub fn is_connected(p: &Pairing) -> bool {
    let arcs = p.pairs();
    if arcs.len() <= 1 {
        return true;
    }
    let mut reached = vec![false; arcs.len()];
    let mut stack = vec![0];
    reached[0] = true;
    while let Some(i) = stack.pop() {
        for k in 0..arcs.len() {
            if !reached[k] && crosses(arcs[i], arcs[k]) {
                reached[k] = true;
                stack.push(k);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

fn check_order(m: usize) -> Result<(), DiagramError> {
    if m < 2 || !m.is_multiple_of(2) {
        return Err(DiagramError::InvalidOrder { m, reason: "must be even and at least 2".into() });
    }
    if m > MAX_PAIRING_ORDER {
        return Err(DiagramError::InvalidOrder { m, reason: format!("exceeds the cap {MAX_PAIRING_ORDER}") });
    }
    Ok(())
}

fn all_pairings(m: usize) -> Vec<Pairing> {
    fn rec(free: &mut Vec<usize>, cur: &mut Vec<(usize, usize)>, out: &mut Vec<Pairing>) {
        if free.is_empty() {
            out.push(Pairing { pairs: cur.clone() });
            return;
        }
        let first = free.remove(0);
        for idx in 0..free.len() {
            let partner = free.remove(idx);
            cur.push((first, partner));
            rec(free, cur, out);
            cur.pop();
            free.insert(idx, partner);
        }
        free.insert(0, first);
    }
    let mut out = Vec::new();
    rec(&mut (1..=m).collect(), &mut Vec::new(), &mut out);
    out
}

/// All connected pairings of `1..=m` in lexicographic order (cached per `m`).
pub fn connected_pairings(m: usize) -> Result<Arc<Vec<Pairing>>, DiagramError> {
    check_order(m)?;
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<Pairing>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().expect("pairing cache poisoned").get(&m) {
        return Ok(Arc::clone(hit));
    }
    let set: Arc<Vec<Pairing>> = Arc::new(all_pairings(m).into_iter().filter(is_connected).collect());
    cache.lock().expect("pairing cache poisoned").insert(m, Arc::clone(&set));
    Ok(set)
}

/// Order-m connected pairings split into reusable and residual parts.
///
/// For each `j` in `reuse_terms`, every connected order-(m−2) pairing yields a
/// connected order-m pairing after inserting the arc `(1, j)`; the residual
/// pairings are the connected ones whose remainder after removing the arc at
/// point 1 is disconnected.
#[derive(Clone, Debug, PartialEq)]
pub struct IterativeDecomposition {
    pub m: usize,
    pub reuse_terms: Vec<usize>,
    pub residual_pairings: Vec<Pairing>,
}

impl IterativeDecomposition {
    pub fn term_count(&self) -> usize {
        self.reuse_terms.len() + self.residual_pairings.len()
    }

    /// Every pairing represented by the decomposition, reuse expansions first.
    pub fn expand(&self) -> Result<Vec<Pairing>, DiagramError> {
        let lower = connected_pairings(self.m - 2)?;
        let mut out: Vec<Pairing> = self
            .reuse_terms
            .iter()
            .flat_map(|&j| lower.iter().map(move |q| q.with_first_arc(j)))
            .collect();
        out.extend(self.residual_pairings.iter().cloned());
        Ok(out)
    }
}

pub fn iterative_decomposition(m: usize) -> Result<IterativeDecomposition, DiagramError> {
    check_order(m)?;
    if m < 6 {
        return Err(DiagramError::InvalidOrder { m, reason: "iterative decomposition starts at 6".into() });
    }
    let lower = connected_pairings(m - 2)?;
    let reuse_terms: Vec<usize> = (2..=m)
        .filter(|&j| lower.iter().all(|q| is_connected(&q.with_first_arc(j))))
        .collect();
    let residual_pairings = connected_pairings(m)?
        .iter()
        .filter(|p| {
            let (j, rest) = p.remove_first_arc();
            !(reuse_terms.contains(&j) && is_connected(&rest))
        })
        .cloned()
        .collect();
    Ok(IterativeDecomposition { m, reuse_terms, residual_pairings })
}
