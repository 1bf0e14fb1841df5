//! Homotopy-class bookkeeping and word growth of finitely generated groups.
//!
//! Classes are labelled by the deck transformation read off the covering-space
//! lift of a node chain, relative to a fixed reference chord. The reference is
//! always the class-neutral oracle minimizer, so labels are reproducible.

use std::collections::HashSet;

use crate::error::{GeodesicError, LabResult};
use crate::pathspace::DiscretePath;
use crate::{real, Real};

/// Label of a path-connected component of the endpoint-fixed path space:
/// an integer tuple (Z² for the torus, Z for cylinder and product).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HomotopyClass {
    pub invariant: Vec<i64>,
}

impl HomotopyClass {
    pub fn new(invariant: Vec<i64>) -> Self {
        Self { invariant }
    }

    pub fn neutral(rank: usize) -> Self {
        Self { invariant: vec![0; rank] }
    }

    pub fn rank(&self) -> usize {
        self.invariant.len()
    }

    pub fn is_neutral(&self) -> bool {
        self.invariant.iter().all(|&x| x == 0)
    }

    /// Composition adds invariants (deck transformations commute here).
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            invariant: self
                .invariant
                .iter()
                .zip(&other.invariant)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        Self { invariant: self.invariant.iter().map(|a| -a).collect() }
    }

    pub fn power(&self, m: i64) -> Self {
        Self { invariant: self.invariant.iter().map(|a| a * m).collect() }
    }

    /// Image under a fixed linear projection onto a chosen direction.
    pub fn pairing(&self, projection: &ClassProjection) -> i64 {
        self.invariant
            .iter()
            .zip(&projection.weights)
            .map(|(a, w)| a * w)
            .sum()
    }

    pub fn label(&self) -> String {
        self.invariant
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse(text: &str) -> Option<Self> {
        let parts: Result<Vec<i64>, _> = text.split(',').map(|t| t.trim().parse()).collect();
        parts.ok().map(Self::new)
    }
}

impl std::fmt::Display for HomotopyClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.label())
    }
}

/// Fixed linear projection H1 -> <h> ~ Z with `h` mapping to 1. Requires a
/// primitive direction.
#[derive(Clone, Debug)]
pub struct ClassProjection {
    pub direction: HomotopyClass,
    pub weights: Vec<i64>,
}

impl ClassProjection {
    pub fn onto<S: Real>(h: &HomotopyClass) -> LabResult<Self, S> {
        let weights = match h.invariant.as_slice() {
            [m] => {
                if m.abs() != 1 {
                    return Err(GeodesicError::Domain(format!(
                        "direction {h} is not primitive in Z"
                    )));
                }
                vec![*m]
            }
            [a, b] => {
                let (g, u, v) = extended_gcd(*a, *b);
                if g != 1 {
                    return Err(GeodesicError::Domain(format!(
                        "direction {h} is not primitive in Z²"
                    )));
                }
                vec![u, v]
            }
            _ => {
                return Err(GeodesicError::Domain(
                    "projection defined for rank 1 or 2 only".into(),
                ))
            }
        };
        Ok(Self { direction: h.clone(), weights })
    }
}

/// gcd with Bezout coefficients; gcd is non-negative, zero only for (0, 0).
fn extended_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    if b == 0 {
        if a < 0 {
            (-a, -1, 0)
        } else {
            (a, 1, 0)
        }
    } else {
        let (g, u, v) = extended_gcd(b, a.rem_euclid(b));
        (g, v, u - (a.div_euclid(b)) * v)
    }
}

/// Class of `reference⁻¹ · path`, read from the covering-space lifts.
/// The reference chord itself maps to the neutral class.
pub fn class_of<S: Real>(
    path: &DiscretePath<S>,
    reference: &DiscretePath<S>,
) -> LabResult<HomotopyClass, S> {
    let man = path.manifold();
    if man != reference.manifold() {
        return Err(GeodesicError::EndpointMismatch(
            "paths live on different manifolds".into(),
        ));
    }
    let tol = real::<S>(1e-9);
    if man.quotient_dist_sym(path.start(), reference.start()) > tol
        || man.quotient_dist_sym(path.end(), reference.end()) > tol
    {
        return Err(GeodesicError::EndpointMismatch(
            "paths do not share (p, q)".into(),
        ));
    }
    if (path.start() - reference.start()).norm() > tol {
        return Err(GeodesicError::EndpointMismatch(
            "start lifts differ; lift both paths from the same chart point".into(),
        ));
    }
    man.class_between(reference.end(), path.end())
}

// ----------------------------------------------------------------------
// Word growth
// ----------------------------------------------------------------------

/// Finitely generated group with its standard symmetric generating set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupSpec {
    FreeAbelian { rank: usize },
    Free { rank: usize },
}

impl GroupSpec {
    pub fn describe(&self) -> String {
        match self {
            Self::FreeAbelian { rank } => format!("free-abelian rank {rank}"),
            Self::Free { rank } => format!("free rank {rank}"),
        }
    }
}

/// Ball sizes `#B_r` for a list of radii.
#[derive(Clone, Debug)]
pub struct GroupBallTable {
    pub spec: GroupSpec,
    pub radii: Vec<usize>,
    pub counts: Vec<u64>,
}

/// Exact cardinality of the word-length ball of radius `r`, by breadth-first
/// enumeration over the standard symmetric generating set.
pub fn word_ball_count<S: Real>(spec: GroupSpec, r: usize, budget: usize) -> LabResult<u64, S> {
    let table = ball_table::<S>(spec, &[r], budget)?;
    Ok(table.counts[0])
}

/// Enumerates balls once up to the largest requested radius, memoizing the
/// frontier between radii.
pub fn ball_table<S: Real>(
    spec: GroupSpec,
    radii: &[usize],
    budget: usize,
) -> LabResult<GroupBallTable, S> {
    let max_r = radii.iter().copied().max().unwrap_or(0);
    let mut counts_by_radius = Vec::with_capacity(max_r + 1);
    match spec {
        GroupSpec::FreeAbelian { rank } => {
            let mut seen: HashSet<Vec<i64>> = HashSet::new();
            let origin = vec![0i64; rank];
            seen.insert(origin.clone());
            let mut frontier = vec![origin];
            counts_by_radius.push(seen.len() as u64);
            for r in 1..=max_r {
                let mut next = Vec::new();
                for g in &frontier {
                    for axis in 0..rank {
                        for step in [-1i64, 1] {
                            let mut h = g.clone();
                            h[axis] += step;
                            if seen.insert(h.clone()) {
                                next.push(h);
                            }
                        }
                    }
                }
                if seen.len() > budget {
                    return Err(GeodesicError::BudgetExceeded { budget, radius: r });
                }
                frontier = next;
                counts_by_radius.push(seen.len() as u64);
            }
        }
        GroupSpec::Free { rank } => {
            // Reduced words over letters 1..=rank and their inverses; BFS
            // never revisits because appending a non-cancelling letter always
            // lengthens a reduced word.
            let mut total: u64 = 1;
            let mut frontier: Vec<Vec<i64>> = vec![Vec::new()];
            counts_by_radius.push(total);
            for r in 1..=max_r {
                let mut next = Vec::new();
                for w in &frontier {
                    for letter in 1..=(rank as i64) {
                        for signed in [letter, -letter] {
                            if w.last() == Some(&-signed) {
                                continue;
                            }
                            let mut h = w.clone();
                            h.push(signed);
                            next.push(h);
                        }
                    }
                }
                total += next.len() as u64;
                if total as usize > budget {
                    return Err(GeodesicError::BudgetExceeded { budget, radius: r });
                }
                frontier = next;
                counts_by_radius.push(total);
            }
        }
    }
    Ok(GroupBallTable {
        spec,
        radii: radii.to_vec(),
        counts: radii.iter().map(|&r| counts_by_radius[r]).collect(),
    })
}

/// Least-squares slope of `log #B_r` against `log r`. Needs at least four
/// radii spanning a factor of four.
pub fn growth_degree_fit<S: Real>(table: &GroupBallTable) -> LabResult<S, S> {
    let pairs: Vec<(f64, f64)> = table
        .radii
        .iter()
        .zip(&table.counts)
        .filter(|(&r, &c)| r >= 1 && c >= 1)
        .map(|(&r, &c)| ((r as f64).ln(), (c as f64).ln()))
        .collect();
    if pairs.len() < 4 {
        return Err(GeodesicError::FitDegenerate(format!(
            "need at least 4 positive radii, got {}",
            pairs.len()
        )));
    }
    let rmin = table.radii.iter().copied().filter(|&r| r >= 1).min().unwrap();
    let rmax = table.radii.iter().copied().max().unwrap();
    if rmax < 4 * rmin {
        return Err(GeodesicError::FitDegenerate(format!(
            "radii span {rmin}..{rmax} is below a factor of 4"
        )));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(GeodesicError::FitDegenerate("all radii identical".into()));
    }
    Ok(real(sxy / sxx))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUDGET: usize = 5_000_000;

    #[test]
    fn abelian_ball_counts_match_closed_form() {
        assert_eq!(word_ball_count::<f64>(GroupSpec::FreeAbelian { rank: 2 }, 0, BUDGET).unwrap(), 1);
        assert_eq!(word_ball_count::<f64>(GroupSpec::FreeAbelian { rank: 2 }, 1, BUDGET).unwrap(), 5);
        assert_eq!(word_ball_count::<f64>(GroupSpec::FreeAbelian { rank: 2 }, 2, BUDGET).unwrap(), 13);
        let radii: Vec<usize> = (0..=64).collect();
        let table = ball_table::<f64>(GroupSpec::FreeAbelian { rank: 2 }, &radii, BUDGET).unwrap();
        for (&r, &c) in table.radii.iter().zip(&table.counts) {
            let r = r as u64;
            assert_eq!(c, 2 * r * r + 2 * r + 1, "radius {r}");
        }
    }

    #[test]
    fn rank_one_ball_is_interval() {
        let radii: Vec<usize> = (0..=32).collect();
        let table = ball_table::<f64>(GroupSpec::FreeAbelian { rank: 1 }, &radii, BUDGET).unwrap();
        for (&r, &c) in table.radii.iter().zip(&table.counts) {
            assert_eq!(c, 2 * r as u64 + 1);
        }
    }

    #[test]
    fn free_group_counts_follow_recursion() {
        // #B_r = 1 + 2k ((2k-1)^r - 1)/(2k - 2) for the free group of rank k.
        let radii: Vec<usize> = (0..=8).collect();
        let table = ball_table::<f64>(GroupSpec::Free { rank: 2 }, &radii, BUDGET).unwrap();
        let mut expected = vec![1u64];
        let mut sphere = 1u64;
        for r in 1..=8 {
            sphere = if r == 1 { 4 } else { sphere * 3 };
            expected.push(expected[r - 1] + sphere);
        }
        assert_eq!(table.counts, expected);
    }

    #[test]
    fn enumeration_budget_is_enforced() {
        let err = word_ball_count::<f64>(GroupSpec::Free { rank: 3 }, 12, 1000).unwrap_err();
        assert!(matches!(err, GeodesicError::BudgetExceeded { .. }));
    }

    #[test]
    fn balls_nest_and_are_submultiplicative() {
        let radii: Vec<usize> = (0..=12).collect();
        for spec in [GroupSpec::FreeAbelian { rank: 2 }, GroupSpec::Free { rank: 2 }] {
            let t = ball_table::<f64>(spec, &radii, BUDGET).unwrap();
            for w in t.counts.windows(2) {
                assert!(w[0] < w[1], "infinite group balls must strictly grow");
            }
            for r in 0..=6usize {
                for s in 0..=6usize {
                    assert!(t.counts[r + s] <= t.counts[r] * t.counts[s]);
                }
            }
        }
    }

    #[test]
    fn growth_degree_fits_match_known_rates() {
        let radii: Vec<usize> = (4..=64).collect();
        let t2 = ball_table::<f64>(GroupSpec::FreeAbelian { rank: 2 }, &radii, BUDGET).unwrap();
        let d2: f64 = growth_degree_fit(&t2).unwrap();
        assert!((d2 - 2.0).abs() < 0.1, "fitted degree {d2}");

        let t1 = ball_table::<f64>(GroupSpec::FreeAbelian { rank: 1 }, &radii, BUDGET).unwrap();
        let d1: f64 = growth_degree_fit(&t1).unwrap();
        assert!((d1 - 1.0).abs() < 0.05, "fitted degree {d1}");

        // Constant counts (a finite group would plateau): slope ~ 0.
        let flat = GroupBallTable {
            spec: GroupSpec::FreeAbelian { rank: 1 },
            radii: radii.clone(),
            counts: vec![6; radii.len()],
        };
        let d0: f64 = growth_degree_fit(&flat).unwrap();
        assert!(d0.abs() < 0.05);
    }

    #[test]
    fn fit_rejects_degenerate_tables() {
        let t = GroupBallTable {
            spec: GroupSpec::FreeAbelian { rank: 1 },
            radii: vec![4, 5, 6],
            counts: vec![9, 11, 13],
        };
        assert!(matches!(
            growth_degree_fit::<f64>(&t),
            Err(GeodesicError::FitDegenerate(_))
        ));
    }

    #[test]
    fn pairing_is_linear_in_the_power() {
        let h = HomotopyClass::new(vec![2, 3]);
        let proj = ClassProjection::onto::<f64>(&h).unwrap();
        for m in -5i64..=5 {
            assert_eq!(h.power(m).pairing(&proj), m);
        }
        let h1 = HomotopyClass::new(vec![-1]);
        let proj1 = ClassProjection::onto::<f64>(&h1).unwrap();
        for m in -5i64..=5 {
            assert_eq!(h1.power(m).pairing(&proj1), m);
        }
        assert!(ClassProjection::onto::<f64>(&HomotopyClass::new(vec![2, 4])).is_err());
    }

    #[test]
    fn class_composition_adds_and_inverts() {
        let a = HomotopyClass::new(vec![2, -1]);
        let b = HomotopyClass::new(vec![1, 4]);
        assert_eq!(a.compose(&b), HomotopyClass::new(vec![3, 3]));
        assert_eq!(a.compose(&a.inverse()), HomotopyClass::neutral(2));
    }
}
