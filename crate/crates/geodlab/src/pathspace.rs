//! Broken-geodesic path space.
//!
//! A `DiscretePath` is a chain of `k+1` covering-space nodes with both
//! endpoints pinned; the curve it stands for is the piecewise minimizing
//! geodesic through the nodes, each segment run at constant speed. Keeping the
//! lift explicit makes the homotopy class a function of the (immutable) end
//! node, so descent and retraction preserve it by construction.
//!
//! The discrete energy is `k * sum_i d(x_i, x_{i+1})²` with the asymmetric
//! distance evaluated in path order; its critical points are exactly the
//! constant-speed geodesics through the node times, and their
//! finite-difference Hessian carries the Morse index.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{GeodesicError, LabResult};
use crate::homotopy::HomotopyClass;
use crate::metrics::{ModelManifold, Node, OracleGeodesic};
use crate::{real, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath<S: Real> {
    manifold: ModelManifold<S>,
    nodes: Vec<Node<S>>,
}

/// A converged critical point of the discrete energy.
#[derive(Clone, Debug)]
pub struct GeodesicRecord<S: Real> {
    pub path: DiscretePath<S>,
    pub length: S,
    pub energy: S,
    pub class: HomotopyClass,
    pub gradient_norm: S,
    /// Morse index when it has been computed (`morse_index` fills it in).
    pub index: Option<usize>,
    pub iterations: usize,
    pub provenance: String,
}

impl<S: Real> GeodesicRecord<S> {
    pub fn with_index(mut self, index: usize) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_provenance(mut self, tag: &str) -> Self {
        self.provenance = tag.to_string();
        self
    }

    /// Measures a path that is already (numerically) critical into a record,
    /// without running descent.
    pub fn measure(path: DiscretePath<S>, provenance: &str) -> LabResult<Self, S> {
        let energy = discrete_energy(&path)?;
        let (_, gradient_norm) = path.energy_gradient();
        let class = path.canonical_class()?;
        Ok(Self {
            length: path.length(),
            energy,
            class,
            gradient_norm,
            index: None,
            iterations: 0,
            provenance: provenance.to_string(),
            path,
        })
    }
}

impl<S: Real> DiscretePath<S> {
    pub fn new(manifold: ModelManifold<S>, nodes: Vec<Node<S>>) -> LabResult<Self, S> {
        if nodes.len() < 2 {
            return Err(GeodesicError::Domain(
                "a path needs at least one segment".into(),
            ));
        }
        Ok(Self { manifold, nodes })
    }

    /// Samples an oracle geodesic into a `k`-segment chain. The nodes land
    /// exactly on the analytic curve, so the result is already critical.
    pub fn from_oracle(oracle: &OracleGeodesic<S>, k: usize) -> Self {
        Self {
            manifold: oracle.manifold.clone(),
            nodes: oracle.sample_nodes(k.max(1)),
        }
    }

    /// The straight chain from the lift of `p` to the class target: the
    /// covering line on the flat models, circle line times short great-circle
    /// arc on the product. This is the class minimizer on every model.
    pub fn straight_chain(
        manifold: &ModelManifold<S>,
        p: &crate::metrics::ChartPoint<S>,
        q: &crate::metrics::ChartPoint<S>,
        class: &HomotopyClass,
        k: usize,
    ) -> LabResult<Self, S> {
        let start = manifold.lift(p)?;
        let target = manifold.canonical_target(p, q)? + manifold.deck_vector(class)?;
        let k = k.max(1);
        let nodes = (0..=k)
            .map(|i| {
                manifold.seg_point(&start, &target, real::<S>(i as f64) / real(k as f64))
            })
            .collect();
        Ok(Self { manifold: manifold.clone(), nodes })
    }

    /// Segment count for a given length estimate: three nodes per uniqueness
    /// radius, with a small floor.
    pub fn segments_for(manifold: &ModelManifold<S>, length_estimate: S) -> usize {
        let r = manifold.uniqueness_radius();
        let k = (real::<S>(3.0) * length_estimate / r).ceil().to_usize().unwrap_or(4);
        k.max(4)
    }

    pub fn manifold(&self) -> &ModelManifold<S> {
        &self.manifold
    }

    pub fn nodes(&self) -> &[Node<S>] {
        &self.nodes
    }

    pub(crate) fn nodes_mut(&mut self) -> &mut [Node<S>] {
        &mut self.nodes
    }

    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> &Node<S> {
        self.nodes.first().unwrap()
    }

    pub fn end(&self) -> &Node<S> {
        self.nodes.last().unwrap()
    }

    /// Point of the interpolated curve at time `t` in `[0, 1]`.
    pub fn point_at(&self, t: S) -> Node<S> {
        let k = self.segments();
        let u = t.max(S::zero()).min(S::one()) * real(k as f64);
        let mut i = u.floor().to_usize().unwrap_or(0);
        if i >= k {
            i = k - 1;
        }
        let frac = u - real(i as f64);
        self.manifold.seg_point(&self.nodes[i], &self.nodes[i + 1], frac)
    }

    pub fn segment_lengths(&self) -> Vec<S> {
        self.nodes
            .windows(2)
            .map(|w| self.manifold.seg_len(&w[0], &w[1]))
            .collect()
    }

    /// Total F-length of the interpolation.
    pub fn length(&self) -> S {
        self.segment_lengths().into_iter().fold(S::zero(), |a, b| a + b)
    }

    /// Energy, or `None` when a segment exceeds the uniqueness radius.
    /// Used by trial steps that should treat a violation as a rejection.
    pub fn energy_checked(&self) -> Option<S> {
        let radius = self.manifold.uniqueness_radius();
        let k = real::<S>(self.segments() as f64);
        let mut sum = S::zero();
        for w in self.nodes.windows(2) {
            let d = self.manifold.seg_len(&w[0], &w[1]);
            if d > radius {
                return None;
            }
            sum += d * d;
        }
        Some(k * sum)
    }

    /// Maximal triangle excess `d(a,x) + d(x,b) - d(a,b)` over doubled node
    /// windows. Zero exactly when every node lies on the minimizing segment
    /// of its neighbours.
    pub fn geodesic_defect(&self) -> S {
        let mut worst = S::zero();
        for w in self.nodes.windows(3) {
            let through = self.manifold.seg_len(&w[0], &w[1]) + self.manifold.seg_len(&w[1], &w[2]);
            let direct = self.manifold.seg_len(&w[0], &w[2]);
            worst = worst.max(through - direct);
        }
        worst
    }

    /// Interior-node gradient of the discrete energy (ambient vectors,
    /// tangent-projected on the sphere factor) and its Euclidean norm.
    pub fn energy_gradient(&self) -> (Vec<Node<S>>, S) {
        let k = real::<S>(self.segments() as f64);
        let n = self.nodes.len();
        let mut grads = vec![Node::<S>::zeros(); n.saturating_sub(2)];
        for i in 0..n - 1 {
            let (ga, gb) = self.manifold.seg_len2_grad(&self.nodes[i], &self.nodes[i + 1]);
            if i >= 1 {
                grads[i - 1] += ga * k;
            }
            if i + 1 <= n - 2 {
                grads[i] += gb * k;
            }
        }
        let norm = grads
            .iter()
            .map(|g| g.norm_squared())
            .fold(S::zero(), |a, b| a + b)
            .sqrt();
        (grads, norm)
    }

    /// Homotopy class against the canonical reference chord between the
    /// projected endpoints.
    pub fn canonical_class(&self) -> LabResult<HomotopyClass, S> {
        let man = &self.manifold;
        let p = man.project(self.start());
        let q = man.project(self.end());
        let base_start = man.lift(&p)?;
        // Reference target translated so the reference chord starts exactly
        // at this path's start lift.
        let reference_end = man.canonical_target(&p, &q)? + (self.start() - base_start);
        man.class_between(&reference_end, self.end())
    }

    /// Smooth random perturbation of the interior nodes with the given sup
    /// amplitude. Low-frequency modes keep node-to-node increments small so
    /// the segment-proximity invariant survives.
    pub fn perturbed<R: Rng>(&self, amplitude: S, rng: &mut R) -> Self {
        let k = self.segments();
        if k < 2 {
            return self.clone();
        }
        let modes = 3usize;
        let dim = self.manifold.node_dim();
        let mut coeffs = vec![[0.0f64; 3]; modes];
        for c in coeffs.iter_mut() {
            for d in c.iter_mut().take(dim) {
                *d = rng.gen_range(-1.0..1.0);
            }
        }
        // Displacement field in per-node tangent coordinates.
        let field: Vec<[f64; 3]> = (1..k)
            .map(|j| {
                let mut v = [0.0f64; 3];
                for (f, c) in coeffs.iter().enumerate() {
                    let phase = std::f64::consts::PI * ((f + 1) as f64) * (j as f64) / (k as f64);
                    for d in 0..dim {
                        v[d] += c[d] * phase.sin();
                    }
                }
                v
            })
            .collect();
        let sup = field
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0f64, f64::max);
        let scale = if sup > 0.0 {
            amplitude * real(1.0 / sup)
        } else {
            S::zero()
        };
        let mut nodes = self.nodes.clone();
        for (j, v) in field.iter().enumerate() {
            let node = nodes[j + 1];
            let (basis, _) = self.manifold.tangent_basis(&node);
            let mut dir = Node::<S>::zeros();
            for d in 0..dim {
                dir += basis[d] * real::<S>(v[d]);
            }
            nodes[j + 1] = self.manifold.node_exp(&node, &dir, scale);
        }
        Self { manifold: self.manifold.clone(), nodes }
    }

    /// Restriction to `[0, s]`, re-discretized with `k_new` segments and
    /// re-parametrized to `[0, 1]`.
    pub fn restrict(&self, s: S, k_new: usize) -> Self {
        self.subpath(S::zero(), s, k_new)
    }

    /// Sub-curve on `[t0, t1]`, re-discretized with `k_new` segments.
    pub fn subpath(&self, t0: S, t1: S, k_new: usize) -> Self {
        let k_new = k_new.max(1);
        let nodes = (0..=k_new)
            .map(|j| {
                let u = real::<S>(j as f64) / real(k_new as f64);
                self.point_at(t0 + (t1 - t0) * u)
            })
            .collect();
        Self { manifold: self.manifold.clone(), nodes }
    }

    /// Concatenation `self · other`, with `other` deck-translated so the
    /// junction lifts coherently. Requires matching projected endpoints.
    pub fn concat(&self, other: &Self) -> LabResult<Self, S> {
        if self.manifold != other.manifold {
            return Err(GeodesicError::EndpointMismatch(
                "different manifolds".into(),
            ));
        }
        let man = &self.manifold;
        if man.quotient_dist_sym(self.end(), other.start()) > real(1e-9) {
            return Err(GeodesicError::EndpointMismatch(
                "junction points differ in the quotient".into(),
            ));
        }
        let delta = self.end() - other.start();
        let mut shift = Node::<S>::zeros();
        shift[0] = delta[0];
        if man.pi1_rank() == 2 {
            shift[1] = delta[1];
        }
        let mut nodes = self.nodes.clone();
        nodes.extend(other.nodes.iter().skip(1).map(|n| n + shift));
        Ok(Self { manifold: self.manifold.clone(), nodes })
    }
}

/// Discrete energy `k * sum d(x_i, x_{i+1})²`; distances evaluated in path
/// order (the reversed path is a different object on a Randers model).
pub fn discrete_energy<S: Real>(path: &DiscretePath<S>) -> LabResult<S, S> {
    let radius = path.manifold().uniqueness_radius();
    let k = real::<S>(path.segments() as f64);
    let mut sum = S::zero();
    for (i, w) in path.nodes().windows(2).enumerate() {
        let d = path.manifold().seg_len(&w[0], &w[1]);
        if d > radius {
            return Err(GeodesicError::RefinementRequired {
                segment: i,
                length: d,
                radius,
            });
        }
        sum += d * d;
    }
    Ok(k * sum)
}

/// Energy-non-increasing shortening map with parameter `s` in `[0, 1]`.
///
/// For `s = 0` this is the identity. Otherwise windows of width `s/k`
/// starting at the half-shifted grid are replaced by minimizing geodesics and
/// the result is resampled on the node times; both stages can only lower the
/// energy, geodesics are fixed exactly, and endpoints never move.
pub fn regeodesify<S: Real>(path: &DiscretePath<S>, s: S) -> LabResult<DiscretePath<S>, S> {
    if s < S::zero() || s > S::one() {
        return Err(GeodesicError::Domain(format!(
            "retraction parameter {s} outside [0,1]"
        )));
    }
    discrete_energy(path)?;
    if s == S::zero() {
        return Ok(path.clone());
    }
    let k = path.segments();
    if k < 2 {
        return Ok(path.clone());
    }
    let man = path.manifold().clone();
    let kf = real::<S>(k as f64);
    let half = real::<S>(0.5);
    // Window starts at the half-shifted grid, kept inside [0, 1].
    let starts: Vec<S> = (0..k - 1)
        .map(|i| (real::<S>(i as f64) + half) / kf)
        .collect();
    let width = s / kf;
    let window_ends: Vec<(S, S, Node<S>, Node<S>)> = starts
        .iter()
        .map(|&a| {
            let b = a + width;
            (a, b, path.point_at(a), path.point_at(b))
        })
        .collect();
    let composite = |t: S| -> Node<S> {
        for (a, b, pa, pb) in &window_ends {
            if t >= *a && t <= *b {
                let u = if *b > *a { (t - *a) / (*b - *a) } else { S::zero() };
                return man.seg_point(pa, pb, u);
            }
        }
        path.point_at(t)
    };
    let mut nodes = Vec::with_capacity(k + 1);
    nodes.push(*path.start());
    for j in 1..k {
        nodes.push(composite(real::<S>(j as f64) / kf));
    }
    nodes.push(*path.end());
    Ok(DiscretePath { manifold: man, nodes })
}

/// Tuning for the first-order descent.
#[derive(Clone, Copy, Debug)]
pub struct DescentOptions {
    pub max_iter: usize,
    /// Non-monotone acceptance window (energies of recent accepted steps).
    pub window: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { max_iter: 50_000, window: 8 }
    }
}

/// First-order descent to a critical point of the discrete energy.
///
/// Steps are spectral (Barzilai-Borwein) with an adaptive fallback: halve on
/// an energy increase beyond the recent window, grow by 1.2 on success.
/// Terminates when the gradient norm drops below `tol`; a converged input
/// returns immediately with zero iterations.
pub fn descend<S: Real>(path: &DiscretePath<S>, tol: S) -> LabResult<GeodesicRecord<S>, S> {
    descend_with(path, tol, DescentOptions::default())
}

pub fn descend_with<S: Real>(
    path: &DiscretePath<S>,
    tol: S,
    opts: DescentOptions,
) -> LabResult<GeodesicRecord<S>, S> {
    if tol <= S::zero() {
        return Err(GeodesicError::Domain("tolerance must be positive".into()));
    }
    let mut energy = discrete_energy(path)?;
    let man = path.manifold().clone();
    let radius = man.uniqueness_radius();
    let mut current = path.clone();
    let (mut grad, mut gnorm) = current.energy_gradient();

    let make_record = |p: &DiscretePath<S>, energy: S, gnorm: S, iterations: usize| {
        let class = p.canonical_class()?;
        Ok(GeodesicRecord {
            path: p.clone(),
            length: p.length(),
            energy,
            class,
            gradient_norm: gnorm,
            index: None,
            iterations,
            provenance: "descent".to_string(),
        })
    };

    if gnorm < tol {
        return make_record(&current, energy, gnorm, 0);
    }

    let mut window: Vec<S> = vec![energy];
    let mut eta = real::<S>(1e-3) / (S::one() + gnorm);
    let eta_min = real::<S>(1e-18);
    let eta_max = real::<S>(1e6);

    for iter in 1..=opts.max_iter {
        // Cap the largest node move to half the uniqueness radius.
        let gmax = grad.iter().map(|g| g.norm()).fold(S::zero(), |a, b| a.max(b));
        let mut eta_eff = eta;
        if gmax * eta_eff > radius * real(0.5) {
            eta_eff = radius * real(0.5) / gmax;
        }
        let mut trial = current.clone();
        {
            let nodes = trial.nodes_mut();
            for (j, g) in grad.iter().enumerate() {
                let moved = man.node_exp(&nodes[j + 1], &(-g), eta_eff);
                nodes[j + 1] = moved;
            }
        }
        let e_ref = window.iter().fold(S::min_value().unwrap(), |a, &b| a.max(b));
        match trial.energy_checked() {
            Some(e_t) if e_t <= e_ref => {
                let (grad_new, gnorm_new) = trial.energy_gradient();
                // Spectral step length from the last move.
                let mut ss = S::zero();
                let mut sy = S::zero();
                for (j, g_new) in grad_new.iter().enumerate() {
                    let sv = trial.nodes()[j + 1] - current.nodes()[j + 1];
                    let yv = g_new - grad[j];
                    ss += sv.norm_squared();
                    sy += sv.dot(&yv);
                }
                eta = if sy > S::zero() {
                    (ss / sy).max(eta_min).min(eta_max)
                } else {
                    (eta * real(1.2)).min(eta_max)
                };
                current = trial;
                energy = e_t;
                grad = grad_new;
                gnorm = gnorm_new;
                window.push(energy);
                if window.len() > opts.window {
                    window.remove(0);
                }
                if gnorm < tol {
                    let rec = make_record(&current, energy, gnorm, iter)?;
                    debug_assert!(
                        rec.path.geodesic_defect()
                            < (real::<S>(10.0) * tol).max(real::<S>(1e-12) * (S::one() + energy)),
                        "converged path fails the doubled-window geodesic test"
                    );
                    return rec_checked(rec, tol);
                }
            }
            _ => {
                eta *= real(0.5);
                if eta < eta_min {
                    let best = make_record(&current, energy, gnorm, iter)?;
                    return Err(GeodesicError::NonConvergence {
                        iterations: iter,
                        gradient_norm: gnorm,
                        best: Box::new(best),
                    });
                }
            }
        }
    }
    let best = make_record(&current, energy, gnorm, opts.max_iter)?;
    Err(GeodesicError::NonConvergence {
        iterations: opts.max_iter,
        gradient_norm: gnorm,
        best: Box::new(best),
    })
}

fn rec_checked<S: Real>(rec: GeodesicRecord<S>, _tol: S) -> LabResult<GeodesicRecord<S>, S> {
    Ok(rec)
}

/// One fixed orthonormal tangent frame per interior node.
pub(crate) fn interior_frames<S: Real>(path: &DiscretePath<S>) -> Vec<[Node<S>; 3]> {
    let man = path.manifold();
    (1..path.segments())
        .map(|j| man.tangent_basis(&path.nodes()[j]).0)
        .collect()
}

/// Interior gradient expressed in the given frames, flattened.
pub(crate) fn chart_gradient<S: Real>(
    path: &DiscretePath<S>,
    frames: &[[Node<S>; 3]],
    dim: usize,
) -> Vec<S> {
    let (grads, _) = path.energy_gradient();
    let mut out = Vec::with_capacity(grads.len() * dim);
    for (j, g) in grads.iter().enumerate() {
        for d in 0..dim {
            out.push(g.dot(&frames[j][d]));
        }
    }
    out
}

/// Finite-difference Hessian of the energy over the interior-node chart
/// coordinates, together with its worst relative asymmetry.
pub fn discrete_hessian<S: Real>(path: &DiscretePath<S>) -> (DMatrix<S>, S) {
    let man = path.manifold().clone();
    let k = path.segments();
    let dim = man.node_dim();
    let n = (k.saturating_sub(1)) * dim;
    if n == 0 {
        return (DMatrix::zeros(0, 0), S::zero());
    }
    let frames = interior_frames(path);
    let h = real::<S>(1e-5);
    let mut hess = DMatrix::<S>::zeros(n, n);
    for j in 1..k {
        for d in 0..dim {
            let col = (j - 1) * dim + d;
            let mut plus = path.clone();
            plus.nodes_mut()[j] = man.node_exp(&path.nodes()[j], &frames[j - 1][d], h);
            let mut minus = path.clone();
            minus.nodes_mut()[j] = man.node_exp(&path.nodes()[j], &frames[j - 1][d], -h);
            let gp = chart_gradient(&plus, &frames, dim);
            let gm = chart_gradient(&minus, &frames, dim);
            for row in 0..n {
                hess[(row, col)] = (gp[row] - gm[row]) / (real::<S>(2.0) * h);
            }
        }
    }
    let mut max_entry = S::zero();
    let mut max_asym = S::zero();
    for i in 0..n {
        for j in 0..n {
            max_entry = max_entry.max(hess[(i, j)].abs());
            max_asym = max_asym.max((hess[(i, j)] - hess[(j, i)]).abs());
        }
    }
    let asym = max_asym / (S::one() + max_entry);
    // Symmetrize before the eigensolve.
    let sym = (hess.clone() + hess.transpose()) * real::<S>(0.5);
    (sym, asym)
}

/// Morse index of a converged record: the number of negative eigenvalues of
/// the discrete Hessian. Eigenvalues inside the zero band make the critical
/// point degenerate and are reported, never rounded.
pub fn morse_index<S: Real>(
    rec: &GeodesicRecord<S>,
    zero_tol: Option<S>,
) -> LabResult<usize, S> {
    let (hess, _) = discrete_hessian(&rec.path);
    if hess.nrows() == 0 {
        return Ok(0);
    }
    let eig = hess.symmetric_eigen();
    let max_abs = eig
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(S::zero(), |a, b| a.max(b));
    let band = zero_tol.unwrap_or_else(|| real::<S>(1e-7) * (S::one() + max_abs));
    let degenerate = eig.eigenvalues.iter().filter(|l| l.abs() < band).count();
    if degenerate > 0 {
        return Err(GeodesicError::DegenerateIndex { count: degenerate, zero_tol: band });
    }
    Ok(eig.eigenvalues.iter().filter(|&&l| l < S::zero()).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ChartPoint;
    use approx::assert_relative_eq;
    use nalgebra::{Vector2, Vector3};
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    type M = ModelManifold<f64>;

    fn torus(bx: f64, by: f64) -> M {
        M::flat_torus(Vector2::new(bx, by)).unwrap()
    }

    fn product(c: f64) -> M {
        M::circle_times_sphere(c).unwrap()
    }

    fn neutral(man: &M) -> HomotopyClass {
        HomotopyClass::neutral(man.pi1_rank())
    }

    #[test]
    fn constant_path_has_zero_energy() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.3, 0.3);
        let path =
            DiscretePath::straight_chain(&man, &p, &p, &neutral(&man), 6).unwrap();
        assert_eq!(discrete_energy(&path).unwrap(), 0.0);
        assert_eq!(path.length(), 0.0);
    }

    #[test]
    fn straight_segment_energy_equals_length_squared() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.5, 0.0);
        let path = DiscretePath::straight_chain(&man, &p, &q, &neutral(&man), 4).unwrap();
        let e = discrete_energy(&path).unwrap();
        assert_relative_eq!(e, 0.25, epsilon = 1e-14);
        assert_relative_eq!(path.length() * path.length(), e, epsilon = 1e-14);
    }

    #[test]
    fn energy_dominates_length_squared() {
        let man = torus(0.2, 0.1);
        let p = ChartPoint::plane(0.1, 0.1);
        let q = ChartPoint::plane(0.6, 0.4);
        let base = DiscretePath::straight_chain(&man, &p, &q, &neutral(&man), 12).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let path = base.perturbed(0.05, &mut rng);
            let e = discrete_energy(&path).unwrap();
            let l = path.length();
            assert!(e >= l * l - 1e-12);
        }
        // Equality holds exactly at uniform spacing.
        let e = discrete_energy(&base).unwrap();
        assert_relative_eq!(e, base.length() * base.length(), epsilon = 1e-12);
    }

    #[test]
    fn oversized_segment_requests_refinement() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.0, 0.45);
        // One segment of length 1.45 > 0.5 in class (0,1).
        let path =
            DiscretePath::straight_chain(&man, &p, &q, &HomotopyClass::new(vec![0, 1]), 1)
                .unwrap();
        assert!(matches!(
            discrete_energy(&path),
            Err(GeodesicError::RefinementRequired { .. })
        ));
    }

    #[test]
    fn retraction_is_identity_at_zero_and_on_geodesics() {
        let man = torus(0.3, 0.1);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.25, 0.5);
        let geo = DiscretePath::straight_chain(&man, &p, &q, &neutral(&man), 10).unwrap();
        let back = regeodesify(&geo, 0.0).unwrap();
        assert_eq!(back.nodes(), geo.nodes());
        for s in [0.25, 0.5, 1.0] {
            let out = regeodesify(&geo, s).unwrap();
            let worst = out
                .nodes()
                .iter()
                .zip(geo.nodes())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            assert!(worst < 1e-12, "geodesic moved by {worst} under r_{s}");
        }
    }

    #[test]
    fn retraction_strictly_shortens_zigzags() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.5, 0.0);
        let mut path = DiscretePath::straight_chain(&man, &p, &q, &neutral(&man), 8).unwrap();
        for (j, node) in path.nodes_mut().iter_mut().enumerate() {
            if j % 2 == 1 {
                node[1] += 0.03;
            }
        }
        let e0 = discrete_energy(&path).unwrap();
        let out = regeodesify(&path, 1.0).unwrap();
        let e1 = discrete_energy(&out).unwrap();
        assert!(e1 < e0 - 1e-6, "zig-zag energy {e0} -> {e1}");
    }

    #[test]
    fn retraction_never_raises_energy_on_random_paths() {
        let mut rng = StdRng::seed_from_u64(17);
        for man in [torus(0.3, 0.1), M::flat_cylinder(1.5).unwrap(), product(1.0)] {
            let (p, q) = endpoints_for(&man);
            let base = DiscretePath::straight_chain(&man, &p, &q, &neutral(&man), 16).unwrap();
            for _ in 0..30 {
                let path = base.perturbed(0.05, &mut rng);
                let e0 = discrete_energy(&path).unwrap();
                for s in [0.25, 0.5, 1.0] {
                    let out = regeodesify(&path, s).unwrap();
                    let e1 = discrete_energy(&out).unwrap();
                    assert!(e1 <= e0 + 1e-12);
                }
            }
        }
    }

    fn endpoints_for(man: &M) -> (ChartPoint<f64>, ChartPoint<f64>) {
        match man {
            M::CircleTimesSphere { .. } => (
                ChartPoint::product(0.0, Vector3::z()),
                ChartPoint::product(0.3, Vector3::new(1.0, 0.0, 0.0)),
            ),
            _ => (ChartPoint::plane(0.1, 0.0), ChartPoint::plane(0.4, 0.3)),
        }
    }

    #[test]
    fn descent_recovers_the_straight_line() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let class = HomotopyClass::new(vec![1, 1]);
        let k = DiscretePath::segments_for(&man, 2.0);
        let exact = DiscretePath::straight_chain(&man, &p, &p, &class, k).unwrap();
        let mut rng = StdRng::seed_from_u64(321);
        let start = exact.perturbed(0.1, &mut rng);
        let rec = descend(&start, 1e-8).unwrap();
        assert_relative_eq!(rec.length, std::f64::consts::SQRT_2, epsilon = 1e-7);
        let worst = rec
            .path
            .nodes()
            .iter()
            .zip(exact.nodes())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-6, "node error {worst}");
        assert_eq!(rec.class, class);
        assert!(rec.gradient_norm < 1e-8);
    }

    #[test]
    fn descent_on_converged_input_returns_immediately() {
        let man = torus(0.3, 0.1);
        let p = ChartPoint::plane(0.0, 0.0);
        let class = HomotopyClass::new(vec![1, 0]);
        let path = DiscretePath::straight_chain(&man, &p, &p, &class, 8).unwrap();
        let rec = descend(&path, 1e-8).unwrap();
        assert_eq!(rec.iterations, 0);
        assert_eq!(rec.path.nodes(), path.nodes());
    }

    #[test]
    fn descent_is_idempotent() {
        let man = torus(0.3, 0.1);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.4, 0.7);
        let class = HomotopyClass::new(vec![-1, 2]);
        let k = DiscretePath::segments_for(&man, 3.0);
        let init = DiscretePath::straight_chain(&man, &p, &q, &class, k)
            .unwrap()
            .perturbed(0.08, &mut StdRng::seed_from_u64(2));
        let rec1 = descend(&init, 1e-9).unwrap();
        let rec2 = descend(&rec1.path, 1e-9).unwrap();
        assert_eq!(rec2.iterations, 0);
        assert!((rec1.energy - rec2.energy).abs() < 1e-12);
    }

    #[test]
    fn descent_reaches_the_long_product_arc() {
        let man = product(1.0);
        let p = ChartPoint::product(0.0, Vector3::z());
        let q = ChartPoint::product(0.0, Vector3::x());
        let class = HomotopyClass::new(vec![1]);
        let set = man.oracle_geodesics(&p, &q, &class, 7.0).unwrap();
        // Second entry is the complementary arc 2pi - pi/2.
        let long_arc = &set.geodesics[1];
        assert_eq!(long_arc.index, 1);
        let k = DiscretePath::segments_for(&man, long_arc.length);
        let init = DiscretePath::from_oracle(long_arc, k);
        let rec = descend(&init, 1e-9).unwrap();
        assert!(
            (rec.length - long_arc.length).abs() < 1e-6,
            "length {} vs oracle {}",
            rec.length,
            long_arc.length
        );
        assert_eq!(rec.class, class);
    }

    #[test]
    fn nonconvergence_carries_the_best_iterate() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let class = HomotopyClass::new(vec![2, 1]);
        let k = DiscretePath::segments_for(&man, 2.3);
        let init = DiscretePath::straight_chain(&man, &p, &p, &class, k)
            .unwrap()
            .perturbed(0.1, &mut StdRng::seed_from_u64(9));
        let err = descend_with(&init, 1e-12, DescentOptions { max_iter: 3, window: 8 })
            .unwrap_err();
        match err {
            GeodesicError::NonConvergence { best, iterations, .. } => {
                assert_eq!(iterations, 3);
                assert!(best.energy <= discrete_energy(&init).unwrap() + 1e-12);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn flat_geodesics_have_index_zero() {
        let man = torus(0.3, 0.1);
        let p = ChartPoint::plane(0.0, 0.0);
        let class = HomotopyClass::new(vec![1, 1]);
        let k = DiscretePath::segments_for(&man, 2.0);
        let path = DiscretePath::straight_chain(&man, &p, &p, &class, k).unwrap();
        let rec = descend(&path, 1e-9).unwrap();
        assert_eq!(morse_index(&rec, None).unwrap(), 0);
    }

    #[test]
    fn sphere_arcs_have_conjugate_point_indices() {
        let man = product(1.0);
        let p = ChartPoint::product(0.0, Vector3::z());
        let q = ChartPoint::product(0.0, Vector3::x());
        let set = man
            .oracle_geodesics(&p, &q, &HomotopyClass::new(vec![0]), 9.0)
            .unwrap();
        for oracle in &set.geodesics {
            let k = DiscretePath::segments_for(&man, oracle.length);
            let rec = descend(&DiscretePath::from_oracle(oracle, k), 1e-9).unwrap();
            let idx = morse_index(&rec, None).unwrap();
            assert_eq!(idx, oracle.index, "arc of length {}", oracle.length);
        }
    }

    #[test]
    fn hessian_is_numerically_symmetric() {
        let man = product(1.0);
        let p = ChartPoint::product(0.0, Vector3::z());
        let q = ChartPoint::product(0.2, Vector3::x());
        let path = DiscretePath::straight_chain(&man, &p, &q, &HomotopyClass::new(vec![0]), 12)
            .unwrap();
        let rec = descend(&path, 1e-9).unwrap();
        let (_, asym) = discrete_hessian(&rec.path);
        assert!(asym < 1e-5, "relative asymmetry {asym}");
    }

    #[test]
    fn antipodal_arc_is_reported_degenerate() {
        let man = product(1.0);
        let start = nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0);
        // Half great circle to the antipode: conjugate endpoints.
        let k = 12usize;
        let nodes: Vec<_> = (0..=k)
            .map(|i| {
                let t = std::f64::consts::PI * (i as f64) / (k as f64);
                nalgebra::Vector4::new(0.0, t.sin(), 0.0, t.cos())
            })
            .collect();
        let _ = start;
        let path = DiscretePath::new(man, nodes).unwrap();
        let rec = descend(&path, 1e-9).unwrap();
        assert!(matches!(
            morse_index(&rec, None),
            Err(GeodesicError::DegenerateIndex { .. })
        ));
    }

    #[test]
    fn index_zero_restricts_to_index_zero() {
        let man = product(1.0);
        let p = ChartPoint::product(0.0, Vector3::z());
        let q = ChartPoint::product(0.3, Vector3::x());
        let class = HomotopyClass::new(vec![0]);
        let set = man.oracle_geodesics(&p, &q, &class, 3.0).unwrap();
        let minimizer = &set.geodesics[0];
        let rec = descend(&DiscretePath::from_oracle(minimizer, 16), 1e-9).unwrap();
        assert_eq!(morse_index(&rec, None).unwrap(), 0);
        for s in [0.3, 0.6, 0.9] {
            let sub = rec.path.restrict(s, 12);
            let sub_rec = descend(&sub, 1e-9).unwrap();
            assert_eq!(
                morse_index(&sub_rec, None).unwrap(),
                0,
                "restriction to [0, {s}]"
            );
        }
    }

    #[test]
    fn class_is_conserved_by_descent_and_retraction() {
        let man = torus(0.2, 0.0);
        let p = ChartPoint::plane(0.1, 0.1);
        let q = ChartPoint::plane(0.5, 0.8);
        let class = HomotopyClass::new(vec![2, -1]);
        let k = DiscretePath::segments_for(&man, 3.0);
        let init = DiscretePath::straight_chain(&man, &p, &q, &class, k)
            .unwrap()
            .perturbed(0.06, &mut StdRng::seed_from_u64(33));
        assert_eq!(init.canonical_class().unwrap(), class);
        let smoothed = regeodesify(&init, 1.0).unwrap();
        assert_eq!(smoothed.canonical_class().unwrap(), class);
        let rec = descend(&init, 1e-8).unwrap();
        assert_eq!(rec.class, class);
        assert_eq!(rec.path.end(), init.end());
    }

    #[test]
    fn concatenation_lifts_coherently() {
        let man = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.2, 0.2);
        let a = DiscretePath::straight_chain(&man, &p, &p, &HomotopyClass::new(vec![1, 0]), 6)
            .unwrap();
        let b = DiscretePath::straight_chain(&man, &p, &p, &HomotopyClass::new(vec![0, 1]), 6)
            .unwrap();
        let ab = a.concat(&b).unwrap();
        assert_eq!(ab.canonical_class().unwrap(), HomotopyClass::new(vec![1, 1]));
        assert_relative_eq!(ab.length(), 2.0, epsilon = 1e-12);
    }
}
