//! Counting machinery: primitive decomposition, geometric counting functions,
//! growth fits, carrier sequences and recurrence lower bounds.
//!
//! Two chords are geometrically distinct when their images differ as point
//! sets; coincidence is decided by a sampled Hausdorff distance in the
//! symmetrized quotient metric. Chords whose image retraces decompose
//! uniquely as a primitive chord followed by iterates of the primitive loop
//! that contains it; the decomposition is detected by a covering-line
//! rationality test on the flat models and a closure test of the sphere arc
//! on the product.

use crate::error::{GeodesicError, LabResult};
use crate::metrics::{ModelManifold, Node};
use crate::pathspace::GeodesicRecord;
use crate::{real, Real};

/// Number of arc-length samples used for image comparisons.
const IMAGE_SAMPLES: usize = 128;
/// Records shorter than this count as the constant chord and are ignored.
const TRIVIAL_LENGTH: f64 = 1e-9;

// ----------------------------------------------------------------------
// Primitive decomposition
// ----------------------------------------------------------------------

/// `record = primitive · loop^k` up to reparametrization; `k = 0` means the
/// image never retraces and the record is its own primitive.
#[derive(Clone, Debug)]
pub struct PrimitiveDecomposition<S: Real> {
    pub primitive: GeodesicRecord<S>,
    pub loop_rec: Option<GeodesicRecord<S>>,
    pub k: usize,
}

/// Ratio of the curve to one closed period, when the image closes up.
enum Periodicity<S> {
    Open,
    Closed { periods: S },
}

/// Detects image repetition and splits the record accordingly. `tol` is the
/// acceptance scale of the rationality/closure residual; residuals in the
/// gray band `[tol, 100 tol)` are refused as undecided rather than guessed.
pub fn decompose_primitive<S: Real>(
    rec: &GeodesicRecord<S>,
    tol: S,
) -> LabResult<PrimitiveDecomposition<S>, S> {
    if tol <= S::zero() {
        return Err(GeodesicError::Domain("tolerance must be positive".into()));
    }
    let man = rec.path.manifold().clone();
    let whole = || -> LabResult<PrimitiveDecomposition<S>, S> {
        Ok(PrimitiveDecomposition { primitive: rec.clone(), loop_rec: None, k: 0 })
    };
    if rec.length < real(TRIVIAL_LENGTH) {
        return whole();
    }
    let periods = match &man {
        ModelManifold::FlatTorus { .. } | ModelManifold::FlatCylinder { .. } => {
            flat_periodicity(&man, rec, tol)?
        }
        ModelManifold::CircleTimesSphere { .. } => product_periodicity(&man, rec, tol)?,
    };
    let ratio = match periods {
        Periodicity::Open => return whole(),
        Periodicity::Closed { periods } => periods,
    };
    // Integral ratio means the chord is a pure loop iterate (p = q); the
    // primitive is then one full loop. Otherwise the primitive is the
    // fractional leftover reaching q.
    let nearest = ratio.round();
    let integral = (ratio - nearest).abs() < real::<S>(1e-9) * (S::one() + ratio);
    let k: usize = if integral {
        let g = nearest.to_usize().unwrap_or(0);
        if g <= 1 {
            return whole();
        }
        g - 1
    } else {
        if ratio < S::one() {
            return whole();
        }
        ratio.floor().to_usize().unwrap_or(0)
    };
    if k == 0 {
        return whole();
    }
    let ratio_eff = if integral { nearest } else { ratio };
    let t_period = S::one() / ratio_eff;
    let t_d = (ratio_eff - real(k as f64)) * t_period;
    let k_seg = rec.path.segments();
    let d_segments = ((real::<S>(k_seg as f64) * t_d).ceil().to_usize().unwrap_or(4)).max(4);
    let c_segments =
        ((real::<S>(k_seg as f64) * t_period).ceil().to_usize().unwrap_or(4)).max(4);
    let d_path = rec.path.subpath(S::zero(), t_d, d_segments);
    let c_path = rec.path.subpath(t_d, t_d + t_period, c_segments);
    let primitive = GeodesicRecord::measure(d_path, "primitive")?;
    let loop_rec = GeodesicRecord::measure(c_path, "primitive-loop")?;
    Ok(PrimitiveDecomposition { primitive, loop_rec: Some(loop_rec), k })
}

/// Covering-line rationality test: the image retraces exactly when the line
/// direction is parallel to a lattice vector; the number of periods is the
/// displacement measured in units of the shortest such vector.
fn flat_periodicity<S: Real>(
    man: &ModelManifold<S>,
    rec: &GeodesicRecord<S>,
    tol: S,
) -> LabResult<Periodicity<S>, S> {
    let start = rec.path.start();
    let end = rec.path.end();
    let dx = end[0] - start[0];
    let dy = end[1] - start[1];
    let norm = dx.hypot(dy);
    if norm == S::zero() {
        return Ok(Periodicity::Open);
    }
    // Candidate loop vectors: primitive lattice vectors on the torus, the
    // fiber circumference on the cylinder.
    let mut best_sin = S::max_value().unwrap();
    let mut best_len = S::zero();
    match man {
        ModelManifold::FlatCylinder { circumference } => {
            best_sin = dy.abs() / norm;
            best_len = *circumference;
        }
        ModelManifold::FlatTorus { .. } => {
            let bound = (norm.to_f64().unwrap_or(0.0).ceil() as i64 + 1).max(1);
            for a in -bound..=bound {
                for b in -bound..=bound {
                    if (a == 0 && b == 0) || gcd(a.unsigned_abs(), b.unsigned_abs()) != 1 {
                        continue;
                    }
                    let wa = real::<S>(a as f64);
                    let wb = real::<S>(b as f64);
                    let dot = wa * dx + wb * dy;
                    if dot <= S::zero() {
                        continue;
                    }
                    let wnorm = wa.hypot(wb);
                    let sin = (wa * dy - wb * dx).abs() / (norm * wnorm);
                    if sin < best_sin {
                        best_sin = sin;
                        best_len = wnorm;
                    }
                }
            }
        }
        ModelManifold::CircleTimesSphere { .. } => unreachable!(),
    }
    if best_sin < tol {
        Ok(Periodicity::Closed { periods: norm / best_len })
    } else if best_sin < tol * real(100.0) {
        Err(GeodesicError::Undecided(format!(
            "direction residual {best_sin} inside the gray band of tol {tol}"
        )))
    } else {
        Ok(Periodicity::Open)
    }
}

/// Sphere-arc closure test: the product curve is periodic exactly when some
/// whole number of sphere turns aligns with a whole number of circle wraps.
fn product_periodicity<S: Real>(
    man: &ModelManifold<S>,
    rec: &GeodesicRecord<S>,
    tol: S,
) -> LabResult<Periodicity<S>, S> {
    let circumference = man.circumference().unwrap();
    let start = rec.path.start();
    let end = rec.path.end();
    let dt = end[0] - start[0];
    let arc: S = rec
        .path
        .nodes()
        .windows(2)
        .map(|w| {
            crate::metrics::sphere_angle(
                &nalgebra::Vector3::new(w[0][1], w[0][2], w[0][3]),
                &nalgebra::Vector3::new(w[1][1], w[1][2], w[1][3]),
            )
        })
        .fold(S::zero(), |a, b| a + b);
    if arc < real(1e-9) {
        // Constant sphere factor: the curve is a fiber line; it closes once
        // per circumference.
        if dt.abs() == S::zero() {
            return Ok(Periodicity::Open);
        }
        return Ok(Periodicity::Closed { periods: dt.abs() / circumference });
    }
    let turns = (arc / S::two_pi()).floor().to_usize().unwrap_or(0);
    if turns == 0 {
        return Ok(Periodicity::Open);
    }
    let mut best_res = S::max_value().unwrap();
    let mut best_periods = S::zero();
    for i in 1..=turns {
        let t_period = S::two_pi() * real::<S>(i as f64) / arc;
        let wrap = dt * t_period / circumference;
        let res = (wrap - wrap.round()).abs() * circumference;
        if res < best_res {
            best_res = res;
            best_periods = S::one() / t_period;
        }
    }
    let scale = tol * (S::one() + dt.abs());
    if best_res < scale {
        Ok(Periodicity::Closed { periods: best_periods })
    } else if best_res < scale * real(100.0) {
        Err(GeodesicError::Undecided(format!(
            "sphere-arc closure residual {best_res} inside the gray band"
        )))
    } else {
        Ok(Periodicity::Open)
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// ----------------------------------------------------------------------
// Geometric counting
// ----------------------------------------------------------------------

/// Arc-length samples of a record's image, kept as cover nodes and compared
/// through the symmetrized quotient distance.
fn sample_image<S: Real>(rec: &GeodesicRecord<S>) -> Vec<Node<S>> {
    (0..IMAGE_SAMPLES)
        .map(|i| {
            rec.path
                .point_at(real::<S>(i as f64) / real((IMAGE_SAMPLES - 1) as f64))
        })
        .collect()
}

fn hausdorff_exceeds<S: Real>(
    man: &ModelManifold<S>,
    from: &[Node<S>],
    to: &[Node<S>],
    tol: S,
) -> bool {
    for a in from {
        let mut best = S::max_value().unwrap();
        for b in to {
            let d = man.quotient_dist_sym(a, b);
            if d < best {
                best = d;
            }
            if best <= tol {
                break;
            }
        }
        if best > tol {
            return true;
        }
    }
    false
}

/// Whether two records trace the same point set, up to `tol`.
pub fn images_coincide<S: Real>(
    man: &ModelManifold<S>,
    a: &GeodesicRecord<S>,
    b: &GeodesicRecord<S>,
    tol: S,
) -> bool {
    let sa = sample_image(a);
    let sb = sample_image(b);
    !hausdorff_exceeds(man, &sa, &sb, tol) && !hausdorff_exceeds(man, &sb, &sa, tol)
}

/// Partition of a record set into geometric coincidence classes.
pub struct ImageClasses {
    /// Class representative index per record.
    pub class_of: Vec<usize>,
    pub class_count: usize,
}

pub fn classify_images<S: Real>(
    man: &ModelManifold<S>,
    records: &[GeodesicRecord<S>],
    tol: S,
) -> ImageClasses {
    let samples: Vec<Vec<Node<S>>> = records.iter().map(sample_image).collect();
    let mut parent: Vec<usize> = (0..records.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..records.len() {
        for j in (i + 1)..records.len() {
            if find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            // Cheap one-point probe before the full two-sided scan.
            let probe = &samples[i][IMAGE_SAMPLES / 3];
            let mut best = S::max_value().unwrap();
            for b in &samples[j] {
                best = best.min(man.quotient_dist_sym(probe, b));
                if best <= tol {
                    break;
                }
            }
            if best > tol {
                continue;
            }
            if !hausdorff_exceeds(man, &samples[i], &samples[j], tol)
                && !hausdorff_exceeds(man, &samples[j], &samples[i], tol)
            {
                let ri = find(&mut parent, i);
                let rj = find(&mut parent, j);
                parent[ri] = rj;
            }
        }
    }
    let mut roots = std::collections::BTreeSet::new();
    let class_of: Vec<usize> = (0..records.len()).map(|i| find(&mut parent, i)).collect();
    for &r in &class_of {
        roots.insert(r);
    }
    ImageClasses { class_of, class_count: roots.len() }
}

/// Counting pair at threshold `ell`: `N` = records of length at most `ell`,
/// `n` = geometric coincidence classes among them. The trivial constant
/// chord (length ~ 0) never counts.
pub fn geometric_count<S: Real>(records: &[GeodesicRecord<S>], ell: S, tol: S) -> (u64, u64) {
    if records.is_empty() {
        return (0, 0);
    }
    let man = records[0].path.manifold().clone();
    let owned: Vec<GeodesicRecord<S>> = records
        .iter()
        .filter(|r| r.length > real(TRIVIAL_LENGTH) && r.length <= ell)
        .cloned()
        .collect();
    if owned.is_empty() {
        return (0, 0);
    }
    let classes = classify_images(&man, &owned, tol);
    (owned.len() as u64, classes.class_count as u64)
}

// ----------------------------------------------------------------------
// Growth tables
// ----------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GrowthRow<S: Real> {
    pub ell: S,
    /// All chords of length <= ell.
    pub total: u64,
    /// Geometrically distinct chords of length <= ell.
    pub distinct: u64,
}

#[derive(Clone, Debug)]
pub struct GrowthTable<S: Real> {
    pub rows: Vec<GrowthRow<S>>,
    /// Per-iterate length gain (twice the forward injectivity radius).
    pub b_p: S,
}

impl<S: Real> GrowthTable<S> {
    /// Classifies the database once and evaluates both counters on a grid.
    pub fn build(records: &[GeodesicRecord<S>], grid: &[S], tol: S) -> LabResult<Self, S> {
        if records.is_empty() {
            return Err(GeodesicError::Domain("empty record database".into()));
        }
        let man = records[0].path.manifold().clone();
        let eligible: Vec<GeodesicRecord<S>> = records
            .iter()
            .filter(|r| r.length > real(TRIVIAL_LENGTH))
            .cloned()
            .collect();
        let classes = classify_images(&man, &eligible, tol);
        let mut rows = Vec::with_capacity(grid.len());
        for &ell in grid {
            let mut total = 0u64;
            let mut class_roots = std::collections::BTreeSet::new();
            for (i, rec) in eligible.iter().enumerate() {
                if rec.length <= ell {
                    total += 1;
                    class_roots.insert(classes.class_of[i]);
                }
            }
            rows.push(GrowthRow { ell, total, distinct: class_roots.len() as u64 });
        }
        Ok(Self { rows, b_p: man.iterate_length_gain() })
    }

    pub fn is_monotone(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[0].total <= w[1].total && w[0].distinct <= w[1].distinct)
            && self.rows.iter().all(|r| r.distinct <= r.total)
    }
}

/// Row-by-row check of `n(l) >= (b_p / 2l) N(l)`.
#[derive(Clone, Debug)]
pub struct ConversionReport<S: Real> {
    pub b_p: S,
    pub violations: Vec<usize>,
    pub pass: bool,
}

pub fn conversion_bound_check<S: Real>(table: &GrowthTable<S>) -> ConversionReport<S> {
    let mut violations = Vec::new();
    for (i, row) in table.rows.iter().enumerate() {
        if row.ell <= S::zero() {
            continue;
        }
        let bound = table.b_p / (real::<S>(2.0) * row.ell) * real(row.total as f64);
        if real::<S>(row.distinct as f64) < bound - real(1e-9) {
            violations.push(i);
        }
    }
    ConversionReport { b_p: table.b_p, pass: violations.is_empty(), violations }
}

// ----------------------------------------------------------------------
// Carrier sequences
// ----------------------------------------------------------------------

/// One record in a carrier family: the class power it came from and how many
/// loop iterates it carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CarrierEntry {
    pub m: i64,
    pub k: usize,
}

/// All records of a scan that carry one primitive chord.
#[derive(Clone, Debug)]
pub struct CarrierSequence {
    pub entries: Vec<CarrierEntry>,
}

/// Linear envelope `a m + b <= L(delta_m) <= a' m + b'` fitted to measured
/// lengths: the common slope is the least-squares slope of the upper half of
/// the scan, the offsets are the extreme residuals.
#[derive(Clone, Copy, Debug)]
pub struct Envelope<S: Real> {
    pub slope: S,
    pub lower_offset: S,
    pub upper_offset: S,
}

impl<S: Real> Envelope<S> {
    pub fn lower(&self, m: S) -> S {
        self.slope * m + self.lower_offset
    }

    pub fn upper(&self, m: S) -> S {
        self.slope * m + self.upper_offset
    }
}

pub fn fit_envelope<S: Real>(ms: &[i64], lengths: &[S]) -> LabResult<Envelope<S>, S> {
    if ms.len() != lengths.len() || ms.len() < 4 {
        return Err(GeodesicError::FitDegenerate(
            "need at least four aligned scan points".into(),
        ));
    }
    // Tail slope: least squares over the upper half, where the asymptotic
    // linear rate dominates the sqrt-shaped early rows.
    let half = ms.len() / 2;
    let tail: Vec<(f64, f64)> = ms[half..]
        .iter()
        .zip(&lengths[half..])
        .map(|(&m, &l)| (m as f64, l.to_f64().unwrap()))
        .collect();
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &tail {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(GeodesicError::FitDegenerate("degenerate scan range".into()));
    }
    let slope = real::<S>(sxy / sxx);
    let mut lower = S::max_value().unwrap();
    let mut upper = S::min_value().unwrap();
    for (&m, &l) in ms.iter().zip(lengths) {
        let resid = l - slope * real(m as f64);
        lower = lower.min(resid);
        upper = upper.max(resid);
    }
    Ok(Envelope { slope, lower_offset: lower, upper_offset: upper })
}

#[derive(Clone, Debug)]
pub struct CarrierReport<S: Real> {
    /// Entries violating `k_i < n_top (max(k1, k2) + 1)`.
    pub k_violations: Vec<CarrierEntry>,
    /// Entries past the affine no-carry bound, when an envelope is supplied.
    pub affine_violations: Vec<CarrierEntry>,
    /// Entries past the quadratic no-carry bound, when a loop gap is known.
    pub quadratic_violations: Vec<CarrierEntry>,
    pub affine_bound: Option<S>,
    pub quadratic_bound: Option<S>,
    pub pass: bool,
}

/// Checks a carrier sequence against the index bound and, given the length
/// envelope and the shortest non-trivial loop length `r`, against the affine
/// and quadratic no-carry bounds.
pub fn carrier_bounds<S: Real>(
    seq: &CarrierSequence,
    n_top: usize,
    envelope: Option<&Envelope<S>>,
    loop_gap: Option<S>,
) -> LabResult<CarrierReport<S>, S> {
    if seq.entries.is_empty() {
        return Err(GeodesicError::Domain("empty carrier sequence".into()));
    }
    for w in seq.entries.windows(2) {
        if w[0].m >= w[1].m {
            return Err(GeodesicError::Domain(
                "carrier entries must be sorted by strictly increasing m".into(),
            ));
        }
    }
    let mut ks: Vec<usize> = seq.entries.iter().map(|e| e.k).collect();
    ks.sort_unstable();
    if ks.windows(2).any(|w| w[0] == w[1]) {
        return Err(GeodesicError::Domain(
            "iterate counts must be pairwise distinct".into(),
        ));
    }
    let kappa = if seq.entries.len() >= 2 {
        seq.entries[0].k.max(seq.entries[1].k)
    } else {
        seq.entries[0].k
    };
    let k_cap = n_top * (kappa + 1);
    let k_violations: Vec<CarrierEntry> =
        seq.entries.iter().copied().filter(|e| e.k >= k_cap).collect();

    let mut affine_violations = Vec::new();
    let mut affine_bound = None;
    let mut quadratic_violations = Vec::new();
    let mut quadratic_bound = None;
    if seq.entries.len() >= 2 {
        let m2 = real::<S>(seq.entries[1].m as f64);
        let n_s = real::<S>(n_top as f64);
        if let Some(env) = envelope {
            if env.slope > S::zero() {
                // Past this m the chord can no longer carry the primitive:
                // the index cap combines with the length envelope.
                let two = real::<S>(2.0);
                let bound = two * n_s * (env.slope * m2 + env.upper_offset) / env.slope
                    - env.lower_offset / env.slope;
                affine_bound = Some(bound);
                affine_violations = seq
                    .entries
                    .iter()
                    .copied()
                    .filter(|e| real::<S>(e.m as f64) > bound)
                    .collect();
            }
        }
        if let (Some(env), Some(r)) = (envelope, loop_gap) {
            if r > S::zero() {
                let cap_k = (env.slope * m2 + env.upper_offset) / r;
                let bound = m2 + cap_k * m2 + n_s * (cap_k + S::one()) * m2;
                quadratic_bound = Some(bound);
                quadratic_violations = seq
                    .entries
                    .iter()
                    .copied()
                    .filter(|e| real::<S>(e.m as f64) > bound)
                    .collect();
            }
        }
    }
    let pass = k_violations.is_empty()
        && affine_violations.is_empty()
        && quadratic_violations.is_empty();
    Ok(CarrierReport {
        k_violations,
        affine_violations,
        quadratic_violations,
        affine_bound,
        quadratic_bound,
        pass,
    })
}

/// Groups the decompositions of a scan by primitive image and returns one
/// carrier sequence per primitive chord, sorted by m.
pub fn carrier_sequences<S: Real>(
    man: &ModelManifold<S>,
    scan: &[(i64, PrimitiveDecomposition<S>)],
    tol: S,
) -> Vec<CarrierSequence> {
    let mut groups: Vec<(usize, Vec<CarrierEntry>)> = Vec::new();
    for (idx, (m, dec)) in scan.iter().enumerate() {
        let mut placed = false;
        for (rep, entries) in groups.iter_mut() {
            if images_coincide(man, &scan[*rep].1.primitive, &dec.primitive, tol) {
                entries.push(CarrierEntry { m: *m, k: dec.k });
                placed = true;
                break;
            }
        }
        if !placed {
            groups.push((idx, vec![CarrierEntry { m: *m, k: dec.k }]));
        }
    }
    groups
        .into_iter()
        .map(|(_, mut entries)| {
            entries.sort_by_key(|e| e.m);
            CarrierSequence { entries }
        })
        .collect()
}

// ----------------------------------------------------------------------
// Recurrence lower bounds
// ----------------------------------------------------------------------

/// Polynomial driving the no-carry recurrence.
#[derive(Clone, Copy, Debug)]
pub enum BoundPoly<S: Real> {
    Affine { slope: S, offset: S },
    Quadratic { a2: S, a1: S, a0: S },
}

impl<S: Real> BoundPoly<S> {
    pub fn eval(&self, x: S) -> S {
        match self {
            Self::Affine { slope, offset } => *slope * x + *offset,
            Self::Quadratic { a2, a1, a0 } => (*a2 * x + *a1) * x + *a0,
        }
    }

    fn leading(&self) -> S {
        match self {
            Self::Affine { slope, .. } => *slope,
            Self::Quadratic { a2, .. } => *a2,
        }
    }
}

/// Iterates `N_{j+1} = ceil(P(N_j))` from `N_0` and returns the chain points
/// `(N_j, j)` up to `m_max`: at scan index `m >= N_j` at least `j` distinct
/// primitives have appeared. Affine polynomials give a logarithmic lower
/// bound, quadratic ones an iterated-log bound.
pub fn recurrence_growth<S: Real>(
    poly: &BoundPoly<S>,
    n0: u64,
    m_max: u64,
) -> LabResult<Vec<(u64, u64)>, S> {
    if poly.leading() <= S::zero() {
        return Err(GeodesicError::FitDegenerate(
            "recurrence polynomial needs a positive leading coefficient".into(),
        ));
    }
    let mut chain = Vec::new();
    let mut current = n0.max(1);
    let mut level = 0u64;
    while current <= m_max {
        chain.push((current, level));
        let next_val = poly.eval(real::<S>(current as f64));
        let next = next_val.ceil().to_u64().unwrap_or(u64::MAX);
        if next <= current {
            return Err(GeodesicError::FitDegenerate(format!(
                "recurrence stalls at N = {current}"
            )));
        }
        current = next;
        level += 1;
        if level > 10_000 {
            break;
        }
    }
    Ok(chain)
}

/// Guaranteed lower bound at scan index `m` from a recurrence chain.
pub fn recurrence_bound_at(chain: &[(u64, u64)], m: u64) -> u64 {
    chain
        .iter()
        .filter(|(n, _)| *n <= m)
        .map(|(_, level)| *level)
        .max()
        .unwrap_or(0)
}

// ----------------------------------------------------------------------
// Growth-law fits
// ----------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitFamily {
    /// n ~ a l^p
    Power,
    /// n ~ a log l + b
    Log,
}

#[derive(Clone, Debug)]
pub struct GrowthFit<S: Real> {
    pub family: FitFamily,
    pub amplitude: S,
    pub offset: S,
    pub exponent: S,
    pub rms_residual: S,
    /// Offset shifted down so the fitted curve is one-sided below the data.
    pub shifted_offset: S,
    /// Whether the family bounds the data from below with a positive
    /// leading coefficient.
    pub lower_bound_ok: bool,
}

pub fn fit_growth<S: Real>(
    table: &GrowthTable<S>,
    family: FitFamily,
) -> LabResult<GrowthFit<S>, S> {
    let pts: Vec<(f64, f64)> = table
        .rows
        .iter()
        .filter(|r| r.distinct >= 1 && r.ell > S::zero())
        .map(|r| (r.ell.to_f64().unwrap(), r.distinct as f64))
        .collect();
    if pts.len() < 3 {
        return Err(GeodesicError::FitDegenerate(format!(
            "need at least 3 populated rows, got {}",
            pts.len()
        )));
    }
    let xy: Vec<(f64, f64)> = match family {
        FitFamily::Power => pts.iter().map(|&(l, n)| (l.ln(), n.ln())).collect(),
        FitFamily::Log => pts.iter().map(|&(l, n)| (l.ln(), n)).collect(),
    };
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &xy {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(GeodesicError::FitDegenerate("single abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (amplitude, offset, exponent) = match family {
        FitFamily::Power => (intercept.exp(), 0.0, slope),
        FitFamily::Log => (slope, intercept, 0.0),
    };
    let predict = |l: f64| -> f64 {
        match family {
            FitFamily::Power => amplitude * l.powf(exponent),
            FitFamily::Log => amplitude * l.ln() + offset,
        }
    };
    let mut ss = 0.0;
    let mut overshoot: f64 = 0.0;
    for &(l, count) in &pts {
        let resid = predict(l) - count;
        ss += resid * resid;
        overshoot = overshoot.max(resid);
    }
    let rms = (ss / pts.len() as f64).sqrt();
    let positive_leading = match family {
        FitFamily::Power => amplitude > 0.0 && exponent > 0.0,
        FitFamily::Log => amplitude > 0.0,
    };
    Ok(GrowthFit {
        family,
        amplitude: real(amplitude),
        offset: real(offset),
        exponent: real(exponent),
        rms_residual: real(rms),
        shifted_offset: real(offset - overshoot),
        lower_bound_ok: positive_leading,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homotopy::HomotopyClass;
    use crate::metrics::ChartPoint;
    use crate::pathspace::{descend, discrete_energy, DiscretePath};
    use nalgebra::Vector2;

    type M = ModelManifold<f64>;

    fn torus() -> M {
        M::flat_torus(Vector2::new(0.0, 0.0)).unwrap()
    }

    fn loop_record(man: &M, p: &ChartPoint<f64>, class: Vec<i64>) -> GeodesicRecord<f64> {
        let class = HomotopyClass::new(class);
        let set = man.oracle_geodesics(p, p, &class, 100.0).unwrap();
        let oracle = &set.geodesics[0];
        let k = DiscretePath::segments_for(man, oracle.length);
        descend(&DiscretePath::from_oracle(oracle, k), 1e-10).unwrap()
    }

    #[test]
    fn torus_loops_decompose_by_class_gcd() {
        let man = torus();
        let p = ChartPoint::plane(0.25, 0.5);
        let rec = loop_record(&man, &p, vec![2, 4]);
        let dec = decompose_primitive(&rec, 1e-9).unwrap();
        assert_eq!(dec.k, 1);
        let c = dec.loop_rec.as_ref().unwrap();
        assert_eq!(c.class, HomotopyClass::new(vec![1, 2]));
        assert_eq!(dec.primitive.class, HomotopyClass::new(vec![1, 2]));

        let rec = loop_record(&man, &p, vec![3, 6]);
        let dec = decompose_primitive(&rec, 1e-9).unwrap();
        assert_eq!(dec.k, 2);
        assert_eq!(dec.primitive.class, HomotopyClass::new(vec![1, 2]));
    }

    #[test]
    fn irrational_chord_is_its_own_primitive() {
        let man = torus();
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.0, 0.318_309_886_183_790_7); // 1/pi offset
        let class = HomotopyClass::new(vec![1, 0]);
        let set = man.oracle_geodesics(&p, &q, &class, 10.0).unwrap();
        let rec = descend(&DiscretePath::from_oracle(&set.geodesics[0], 12), 1e-10).unwrap();
        let dec = decompose_primitive(&rec, 1e-9).unwrap();
        assert_eq!(dec.k, 0);
        assert!(dec.loop_rec.is_none());
    }

    #[test]
    fn near_parallel_direction_is_refused_not_guessed() {
        let man = torus();
        // A long almost-horizontal chord whose direction residual lands in
        // the gray band between tol and 100 tol.
        let start = nalgebra::Vector4::new(0.0, 0.0, 0.0, 0.0);
        let end = nalgebra::Vector4::new(4.0, 4.0e-8, 0.0, 0.0);
        let k = 40;
        let nodes: Vec<_> = (0..=k)
            .map(|i| start + (end - start) * (i as f64 / k as f64))
            .collect();
        let path = DiscretePath::new(man, nodes).unwrap();
        let rec = GeodesicRecord::measure(path, "test").unwrap();
        assert!(matches!(
            decompose_primitive(&rec, 1e-9),
            Err(GeodesicError::Undecided(_))
        ));
    }

    #[test]
    fn decomposition_concatenates_back_to_the_record() {
        let man = torus();
        let p = ChartPoint::plane(0.25, 0.5);
        for class in [vec![2, 4], vec![3, 6], vec![0, 3]] {
            let rec = loop_record(&man, &p, class);
            let dec = decompose_primitive(&rec, 1e-9).unwrap();
            if dec.k == 0 {
                continue;
            }
            let mut rebuilt = dec.primitive.path.clone();
            for _ in 0..dec.k {
                rebuilt = rebuilt.concat(&dec.loop_rec.as_ref().unwrap().path).unwrap();
            }
            let rebuilt_rec = GeodesicRecord::measure(rebuilt, "rebuilt").unwrap();
            assert!((rebuilt_rec.length - rec.length).abs() < 1e-8);
            assert!(images_coincide(&man, &rebuilt_rec, &rec, 1e-4));
            // Length splits as L(d) + k L(c).
            let split =
                dec.primitive.length + dec.k as f64 * dec.loop_rec.as_ref().unwrap().length;
            assert!((split - rec.length).abs() < 1e-8);
        }
    }

    #[test]
    fn product_iterates_close_and_decompose() {
        let man = M::circle_times_sphere(1.0).unwrap();
        // Loop at p: one circle wrap per full great-circle turn; three turns.
        let k = 160;
        let turns = 3.0;
        let nodes: Vec<_> = (0..=k)
            .map(|i| {
                let t = i as f64 / k as f64;
                let phase = turns * 2.0 * std::f64::consts::PI * t;
                nalgebra::Vector4::new(turns * t, phase.sin(), 0.0, phase.cos())
            })
            .collect();
        let path = DiscretePath::new(man.clone(), nodes).unwrap();
        let rec = GeodesicRecord::measure(path, "test").unwrap();
        let dec = decompose_primitive(&rec, 1e-7).unwrap();
        assert_eq!(dec.k, 2);
        let c = dec.loop_rec.as_ref().unwrap();
        assert!((c.length - rec.length / 3.0).abs() < 1e-6);
    }

    #[test]
    fn empty_database_counts_zero() {
        let records: Vec<GeodesicRecord<f64>> = Vec::new();
        assert_eq!(geometric_count(&records, 10.0, 1e-4), (0, 0));
    }

    fn loop_record_cyl(man: &M, p: &ChartPoint<f64>, m: i64) -> GeodesicRecord<f64> {
        let class = HomotopyClass::new(vec![m]);
        let set = man.oracle_geodesics(p, p, &class, 100.0).unwrap();
        let k = DiscretePath::segments_for(man, set.geodesics[0].length);
        descend(&DiscretePath::from_oracle(&set.geodesics[0], k), 1e-10).unwrap()
    }

    #[test]
    fn cylinder_iterates_share_one_image() {
        let man = M::flat_cylinder(1.0).unwrap();
        let p = ChartPoint::plane(0.0, 0.0);
        let mut records = Vec::new();
        for m in 1..=5i64 {
            records.push(loop_record_cyl(&man, &p, m));
        }
        let (total, distinct) = geometric_count(&records, 10.0, 1e-4);
        assert_eq!(total, 5);
        assert_eq!(distinct, 1);
    }

    #[test]
    fn torus_point_loop_census_counts_primitive_directions() {
        // Independent oracle: primitive lattice directions modulo sign with
        // Euclidean length <= 5 within the class window max(|a|,|b|) <= 3.
        let mut expected = 0u64;
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                if (a, b) == (0, 0) || gcd(a.unsigned_abs(), b.unsigned_abs()) != 1 {
                    continue;
                }
                if ((a * a + b * b) as f64).sqrt() > 5.0 {
                    continue;
                }
                if (a, b) < (-a, -b) {
                    continue; // count each +/- pair once
                }
                expected += 1;
            }
        }
        assert_eq!(expected, 16);

        let man = torus();
        let p = ChartPoint::plane(0.125, 0.375);
        let mut records = Vec::new();
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                if (a, b) == (0, 0) {
                    continue;
                }
                records.push(loop_record(&man, &p, vec![a, b]));
            }
        }
        let (total, distinct) = geometric_count(&records, 5.0, 1e-4);
        assert_eq!(total, 48);
        assert_eq!(distinct, expected);
    }

    #[test]
    fn distinct_images_are_never_merged_for_distinct_endpoints() {
        let man = torus();
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.3, 0.218_281_828);
        let mut records = Vec::new();
        for class in [vec![1, 0], vec![-1, 0], vec![0, 1], vec![2, 1]] {
            let class = HomotopyClass::new(class);
            let set = man.oracle_geodesics(&p, &q, &class, 20.0).unwrap();
            let k = DiscretePath::segments_for(&man, set.geodesics[0].length);
            records.push(descend(&DiscretePath::from_oracle(&set.geodesics[0], k), 1e-10).unwrap());
        }
        let (total, distinct) = geometric_count(&records, 20.0, 1e-4);
        assert_eq!(total, 4);
        assert_eq!(distinct, 4);
    }

    #[test]
    fn counting_is_monotone_in_length() {
        let man = torus();
        let p = ChartPoint::plane(0.125, 0.375);
        let mut records = Vec::new();
        for a in -2i64..=2 {
            for b in -2i64..=2 {
                if (a, b) == (0, 0) {
                    continue;
                }
                records.push(loop_record(&man, &p, vec![a, b]));
            }
        }
        let grid: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let table = GrowthTable::build(&records, &grid, 1e-4).unwrap();
        assert!(table.is_monotone());
    }

    #[test]
    fn conversion_bound_holds_on_real_tables_and_fails_on_synthetic() {
        let man = torus();
        let p = ChartPoint::plane(0.125, 0.375);
        let mut records = Vec::new();
        for a in -2i64..=2 {
            for b in -2i64..=2 {
                if (a, b) == (0, 0) {
                    continue;
                }
                records.push(loop_record(&man, &p, vec![a, b]));
            }
        }
        let grid: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let table = GrowthTable::build(&records, &grid, 1e-4).unwrap();
        assert!((table.b_p - 1.0).abs() < 1e-12);
        let report = conversion_bound_check(&table);
        assert!(report.pass, "violations at {:?}", report.violations);

        let bad = GrowthTable {
            rows: vec![GrowthRow { ell: 1.0, total: 100, distinct: 1 }],
            b_p: 1.0,
        };
        assert!(!conversion_bound_check(&bad).pass);
    }

    #[test]
    fn carrier_bound_accepts_and_flags() {
        let seq = CarrierSequence {
            entries: vec![CarrierEntry { m: 1, k: 0 }, CarrierEntry { m: 3, k: 1 }],
        };
        let report = carrier_bounds::<f64>(&seq, 2, None, None).unwrap();
        assert!(report.pass);

        let bad = CarrierSequence {
            entries: vec![
                CarrierEntry { m: 1, k: 0 },
                CarrierEntry { m: 3, k: 1 },
                CarrierEntry { m: 5, k: 7 },
            ],
        };
        let report = carrier_bounds::<f64>(&bad, 2, None, None).unwrap();
        assert!(!report.pass);
        assert_eq!(report.k_violations, vec![CarrierEntry { m: 5, k: 7 }]);
    }

    #[test]
    fn carrier_entries_must_be_valid() {
        let dup = CarrierSequence {
            entries: vec![CarrierEntry { m: 1, k: 1 }, CarrierEntry { m: 2, k: 1 }],
        };
        assert!(carrier_bounds::<f64>(&dup, 2, None, None).is_err());
    }

    #[test]
    fn recurrence_examples() {
        let doubling = BoundPoly::Affine { slope: 2.0, offset: 0.0 };
        let chain = recurrence_growth::<f64>(&doubling, 1, 1024).unwrap();
        assert_eq!(recurrence_bound_at(&chain, 1024), 10);

        let squares = BoundPoly::Quadratic { a2: 1.0, a1: 0.0, a0: 0.0 };
        let chain = recurrence_growth::<f64>(&squares, 2, 1 << 16).unwrap();
        let ns: Vec<u64> = chain.iter().map(|c| c.0).collect();
        assert_eq!(ns, vec![2, 4, 16, 256, 65536]);
        assert_eq!(recurrence_bound_at(&chain, 1 << 16), 4);

        let stalling = BoundPoly::Affine { slope: 1.0, offset: 0.0 };
        assert!(recurrence_growth::<f64>(&stalling, 1, 100).is_err());
    }

    #[test]
    fn growth_fit_flags_constant_data() {
        let flat = GrowthTable {
            rows: (2..=20)
                .map(|i| GrowthRow { ell: i as f64, total: 3, distinct: 3 })
                .collect(),
            b_p: 1.0,
        };
        let fit = fit_growth(&flat, FitFamily::Log).unwrap();
        assert!(fit.amplitude.abs() < 1e-9);
        assert!(!fit.lower_bound_ok);
    }

    #[test]
    fn growth_fit_recovers_planted_power_law() {
        let table = GrowthTable {
            rows: (1..=30)
                .map(|i| {
                    let l = i as f64;
                    GrowthRow {
                        ell: l,
                        total: (3.0 * l * l) as u64,
                        distinct: (3.0 * l * l) as u64,
                    }
                })
                .collect(),
            b_p: 1.0,
        };
        let fit = fit_growth(&table, FitFamily::Power).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.05, "exponent {}", fit.exponent);
        assert!(fit.lower_bound_ok);
    }

    #[test]
    fn envelope_brackets_the_scan() {
        let ms: Vec<i64> = (0..=12).collect();
        let lengths: Vec<f64> = ms
            .iter()
            .map(|&m| ((4.0 * m as f64).powi(2) + 22.0).sqrt())
            .collect();
        let env = fit_envelope(&ms, &lengths).unwrap();
        for (&m, &l) in ms.iter().zip(&lengths) {
            assert!(env.lower(m as f64) <= l + 1e-12);
            assert!(env.upper(m as f64) >= l - 1e-12);
        }
        assert!((env.slope - 4.0).abs() / 4.0 < 0.05, "slope {}", env.slope);
    }

    #[test]
    fn energy_is_consistent_for_measured_subrecords() {
        let man = torus();
        let p = ChartPoint::plane(0.25, 0.5);
        let rec = loop_record(&man, &p, vec![2, 4]);
        let dec = decompose_primitive(&rec, 1e-9).unwrap();
        let c = dec.loop_rec.unwrap();
        let e = discrete_energy(&c.path).unwrap();
        assert!((e - c.energy).abs() < 1e-12);
        assert!(c.energy >= c.length * c.length - 1e-9);
    }
}
