//! Sweepout min-max over a homotopy class.
//!
//! On the product model the based loop space has a non-trivial circle of
//! loops: the family that lowers a latitude circle from the base point down
//! over the antipode and contracts back. Chaining the class minimizer with
//! that family produces a one-parameter loop of chords whose min-max energy
//! is a critical value sitting strictly above the minimum. Relaxing the
//! family member by member while keeping it from tearing drives the maximum
//! down onto the saddle geodesic, which is then extracted and certified by
//! its Morse index.

use crate::error::{GeodesicError, LabResult};
use crate::homotopy::HomotopyClass;
use crate::metrics::{ModelManifold, Node};
use crate::pathspace::{
    descend_with, discrete_energy, morse_index, regeodesify, DescentOptions, DiscretePath,
    GeodesicRecord,
};
use crate::{real, Real};
use nalgebra::Vector3;

/// Discretized one-parameter family of chords in a fixed class.
#[derive(Clone, Debug)]
pub struct Sweepout<S: Real> {
    pub members: Vec<DiscretePath<S>>,
    /// Position of the member equal to the reparametrized minimizer.
    pub base_index: usize,
    pub class: HomotopyClass,
    pub minimizer_energy: S,
    pub minimizer_length: S,
}

/// Outcome of relaxing a sweepout.
#[derive(Clone, Debug)]
pub struct MinmaxResult<S: Real> {
    pub class: HomotopyClass,
    /// Stalled family maximum: upper estimate of the min-max value.
    pub tau_upper: S,
    /// Energy of the extracted critical point.
    pub tau_critical: S,
    pub saddle: GeodesicRecord<S>,
    pub index: Option<usize>,
    /// True when the saddle is a genuine non-minimal critical point of index
    /// at most one and both tau estimates agree within two percent.
    pub certified: bool,
    pub minimizer_energy: S,
    pub minimizer_length: S,
    /// Per-iteration maximum-energy trace.
    pub trace: Vec<S>,
}

/// Loop of sphere loops used as the sweep generator, based at the sphere
/// part of `q`. `eval(s, t)` is the sphere point of the loop at family
/// parameter `s` and curve time `t`, both in `[0, 1]`.
#[derive(Clone, Debug)]
struct SphereSweep<S: Real> {
    pole: Vector3<S>,
    e1: Vector3<S>,
    e2: Vector3<S>,
}

impl<S: Real> SphereSweep<S> {
    fn new(man: &ModelManifold<S>, q: &Node<S>) -> Self {
        let (basis, _) = man.tangent_basis(q);
        Self {
            pole: Vector3::new(q[1], q[2], q[3]),
            e1: Vector3::new(basis[1][1], basis[1][2], basis[1][3]),
            e2: Vector3::new(basis[2][1], basis[2][2], basis[2][3]),
        }
    }

    fn point(&self, polar: S, azimuth: S) -> Vector3<S> {
        self.pole * polar.cos()
            + (self.e1 * azimuth.cos() + self.e2 * azimuth.sin()) * polar.sin()
    }

    /// First half of the family lowers the latitude circle at polar angle
    /// `2s*pi` (reached and left along a fixed meridian), second half
    /// retracts the leftover meridian spike through itself. Sweeping the
    /// latitude once over the whole sphere is what makes the family
    /// non-contractible.
    fn eval(&self, s: S, t: S) -> Vector3<S> {
        let half = real::<S>(0.5);
        if s <= half {
            let u = S::pi() * (s * real(2.0));
            let quarter = real::<S>(0.25);
            if t < quarter {
                self.point(u * t * real(4.0), S::zero())
            } else if t <= quarter * real(3.0) {
                let az = S::two_pi() * (t * real::<S>(2.0) - half);
                self.point(u, az)
            } else {
                self.point(u * (real::<S>(4.0) - t * real(4.0)), S::zero())
            }
        } else {
            let v = S::pi() * (real::<S>(2.0) - s * real(2.0));
            let tent = S::one() - (S::one() - t * real(2.0)).abs();
            self.point(v * tent, S::zero())
        }
    }

    /// Energy of the loop at parameter `s` (piecewise constant speeds).
    #[cfg(test)]
    fn loop_energy(&self, s: S) -> S {
        let half = real::<S>(0.5);
        let eight = real::<S>(8.0);
        if s <= half {
            let u = S::pi() * (s * real(2.0));
            eight * u * u + eight * S::pi() * S::pi() * u.sin() * u.sin()
        } else {
            let v = S::pi() * (real::<S>(2.0) - s * real(2.0));
            real::<S>(4.0) * v * v
        }
    }

    /// Largest loop length in the family, for sizing the discretization.
    fn max_loop_length(&self) -> S {
        // max over u of 2u + 2 pi sin u, attained at u = arccos(-1/pi).
        let u = (-S::one() / S::pi()).acos();
        real::<S>(2.0) * u + S::two_pi() * u.sin()
    }
}

/// Builds the sweepout attached to a class minimizer: member `s` is the
/// minimizer chained with the sphere loop `f(s)`, except near the base point
/// where the minimizer is slowed down to `gamma(t / lambda(s))` with
/// `lambda(s) = 1 - d(x0, s)/2`, so the base member is the minimizer itself.
pub fn build_sweepout<S: Real>(
    minimizer: &GeodesicRecord<S>,
    n_samples: usize,
) -> LabResult<Sweepout<S>, S> {
    let man = minimizer.path.manifold().clone();
    if !man.has_sphere_factor() {
        return Err(GeodesicError::NotApplicable(format!(
            "{} has no sphere factor: the based loop space has no class to sweep",
            man.variant_name()
        )));
    }
    if n_samples < 8 {
        return Err(GeodesicError::Domain("need at least 8 samples".into()));
    }
    let q = *minimizer.path.end();
    let sweep = SphereSweep::new(&man, &q);
    let est = minimizer.length + sweep.max_loop_length();
    let k = DiscretePath::segments_for(&man, est);
    let kf = real::<S>(k as f64);

    // Loops live on the region of the sample circle at round distance >= 1
    // from the base point; inside it only the reparametrization acts.
    let flat_lo = S::one() / S::two_pi();
    let flat_hi = S::one() - flat_lo;

    let mut members = Vec::with_capacity(n_samples);
    for j in 0..n_samples {
        let s = real::<S>(j as f64) / real(n_samples as f64);
        let round_dist = S::two_pi() * s.min(S::one() - s);
        let curve = |t: S| -> Node<S> {
            if round_dist < S::one() {
                let lambda = S::one() - round_dist * real(0.5);
                if t <= lambda {
                    minimizer.path.point_at(t / lambda)
                } else {
                    q
                }
            } else {
                let half = real::<S>(0.5);
                if t <= half {
                    minimizer.path.point_at(t * real(2.0))
                } else {
                    let s_hat = (s - flat_lo) / (flat_hi - flat_lo);
                    let y = sweep.eval(s_hat, t * real::<S>(2.0) - S::one());
                    Node::new(q[0], y.x, y.y, y.z)
                }
            }
        };
        let nodes: Vec<Node<S>> = (0..=k).map(|i| curve(real::<S>(i as f64) / kf)).collect();
        members.push(DiscretePath::new(man.clone(), nodes)?);
    }
    for member in &members {
        if member.canonical_class()? != minimizer.class {
            return Err(GeodesicError::Domain(
                "sweepout member left the minimizer's class".into(),
            ));
        }
        discrete_energy(member)?;
    }
    Ok(Sweepout {
        members,
        base_index: 0,
        class: minimizer.class.clone(),
        minimizer_energy: minimizer.energy,
        minimizer_length: minimizer.length,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct RelaxOptions<S: Real> {
    /// Gradient tolerance for the final saddle polish.
    pub descend_tol: S,
    /// Iterations over which the stall test averages the decrease.
    pub stall_window: usize,
    /// Member budget as a multiple of the initial family size.
    pub member_cap_factor: usize,
}

impl<S: Real> Default for RelaxOptions<S> {
    fn default() -> Self {
        Self {
            // The finite-difference Hessian bottoms Newton out near 1e-8;
            // at 1e-7 the saddle energy is still exact to ~1e-13.
            descend_tol: real(1e-7),
            stall_window: 20,
            member_cap_factor: 4,
        }
    }
}

/// Relaxes a sweepout with an energy-decreasing flow (shortening sweeps and
/// capped gradient steps) while repairing family continuity, then extracts
/// and certifies the saddle behind the stalled maximum.
pub fn relax<S: Real>(
    sweepout: Sweepout<S>,
    tol: S,
    max_iter: usize,
) -> LabResult<MinmaxResult<S>, S> {
    relax_with(sweepout, tol, max_iter, RelaxOptions::default())
}

pub fn relax_with<S: Real>(
    sweepout: Sweepout<S>,
    tol: S,
    max_iter: usize,
    opts: RelaxOptions<S>,
) -> LabResult<MinmaxResult<S>, S> {
    let man = sweepout.members[0].manifold().clone();
    let radius = man.uniqueness_radius();
    let member_cap = sweepout.members.len() * opts.member_cap_factor;
    let mut members = sweepout.members;
    let mut energies: Vec<S> = Vec::with_capacity(members.len());
    for m in &members {
        energies.push(discrete_energy(m)?);
    }
    let mut etas: Vec<S> = vec![real(1e-3); members.len()];
    let mut trace: Vec<S> = vec![max_of(&energies)];
    let mut stalled = false;

    for iter in 0..max_iter {
        if iter % 8 == 7 {
            // Shortening sweep: unconditionally monotone.
            for (m, e) in members.iter_mut().zip(energies.iter_mut()) {
                let smoothed = regeodesify(m, S::one())?;
                let en = discrete_energy(&smoothed)?;
                if en <= *e {
                    *m = smoothed;
                    *e = en;
                }
            }
        } else {
            for i in 0..members.len() {
                gradient_step(&mut members[i], &mut energies[i], &mut etas[i], radius, &man);
            }
        }
        if iter % 4 == 3 && members.len() < member_cap {
            repair_continuity(&mut members, &mut energies, &mut etas, radius, &man, member_cap);
        }
        let current_max = max_of(&energies);
        trace.push(current_max);
        let w = opts.stall_window;
        if trace.len() > w {
            let before = trace[trace.len() - 1 - w];
            if (before - current_max) / real(w as f64) < tol {
                stalled = true;
                break;
            }
        }
    }
    if !stalled {
        let n = trace.len();
        let w = opts.stall_window.min(n - 1).max(1);
        let last_decrease = (trace[n - 1 - w] - trace[n - 1]) / real(w as f64);
        return Err(GeodesicError::RelaxNotConverged {
            iterations: max_iter,
            last_decrease,
            trace,
        });
    }

    let tau_upper = *trace.last().unwrap();
    // Members ranked by stalled energy; ties break on the member index.
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let descent_opts = DescentOptions::default();
    let near_minimum = |e: S| {
        e <= sweepout.minimizer_energy
            + real::<S>(1e-6) * (S::one() + sweepout.minimizer_energy)
    };
    // Plain descent slides off the col, so the stalled maximum (and, if it
    // sits in the minimizing basin, the runners-up) is refined by driving
    // the gradient norm itself to zero.
    let mut saddle = None;
    for &candidate in order.iter().take(5) {
        let rec = match saddle_polish(&members[candidate], opts.descend_tol, 100) {
            Ok(rec) => rec,
            Err(GeodesicError::NonConvergence { best, .. }) => *best,
            Err(other) => return Err(other),
        };
        if rec.gradient_norm < opts.descend_tol && !near_minimum(rec.energy) {
            saddle = Some(rec);
            break;
        }
    }
    let saddle = match saddle {
        Some(rec) => rec,
        // Fully collapsed family: report the relaxed maximum member.
        None => match descend_with(&members[order[0]], opts.descend_tol, descent_opts) {
            Ok(rec) => rec,
            Err(GeodesicError::NonConvergence { best, .. }) => *best,
            Err(other) => return Err(other),
        },
    };
    let index = morse_index(&saddle, None).ok();
    let tau_critical = saddle.energy;
    let two_percent = real::<S>(0.02);
    let agree = (tau_upper - tau_critical).abs() <= two_percent * tau_critical.max(real(1e-9));
    let certified = index == Some(1) && !near_minimum(tau_critical) && agree;

    let lower = sweepout.minimizer_length * sweepout.minimizer_length;
    if tau_upper < lower - real::<S>(1e-6) * (S::one() + lower) {
        return Err(GeodesicError::Domain(format!(
            "min-max estimate {tau_upper} fell below the class minimum {lower}; \
             the family tore"
        )));
    }

    Ok(MinmaxResult {
        class: sweepout.class,
        tau_upper,
        tau_critical,
        saddle: saddle.with_provenance("minmax"),
        index,
        certified,
        minimizer_energy: sweepout.minimizer_energy,
        minimizer_length: sweepout.minimizer_length,
        trace,
    })
}

fn max_of<S: Real>(values: &[S]) -> S {
    values.iter().fold(S::min_value().unwrap(), |a, &b| a.max(b))
}

/// Refines a straddling family member to the critical point behind it.
///
/// Plain energy descent slides off a col along its unstable direction, but
/// the descent trajectory of a straddling path shadows the stable manifold
/// and passes close to the col before escaping: the iterate with the
/// smallest gradient norm along the way is a Newton seed. When Newton bottoms
/// out before the tolerance (the dip can sit on the ridge shell where the
/// Hessian turns singular), its best iterate seeds another dip round; each
/// round starts closer to the stable manifold, so the floors shrink fast.
fn saddle_polish<S: Real>(
    path: &DiscretePath<S>,
    tol: S,
    newton_iters: usize,
) -> LabResult<GeodesicRecord<S>, S> {
    let man = path.manifold().clone();
    let radius = man.uniqueness_radius();
    let mut seed = path.clone();
    let mut last_floor = S::max_value().unwrap();
    let mut last_err = None;
    for _round in 0..8 {
        let (dip, dip_gnorm) = descent_dip(&seed, tol, &man, radius)?;
        match newton_refine(dip, dip_gnorm, tol, newton_iters, &man, radius) {
            Ok(rec) => return Ok(rec),
            Err(GeodesicError::NonConvergence { iterations, gradient_norm, best }) => {
                let stagnated = gradient_norm > last_floor * real(0.5);
                last_floor = gradient_norm;
                seed = best.path.clone();
                last_err = Some(GeodesicError::NonConvergence {
                    iterations,
                    gradient_norm,
                    best,
                });
                if stagnated {
                    break;
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        GeodesicError::Domain("saddle refinement made no progress".into())
    }))
}

/// Capped monotone descent that returns the minimum-gradient iterate of the
/// trajectory.
fn descent_dip<S: Real>(
    path: &DiscretePath<S>,
    tol: S,
    man: &ModelManifold<S>,
    radius: S,
) -> LabResult<(DiscretePath<S>, S), S> {
    let mut current = path.clone();
    let mut energy = match current.energy_checked() {
        Some(e) => e,
        None => {
            return Err(GeodesicError::Domain(
                "family member violates the segment invariant".into(),
            ))
        }
    };
    let (mut grad, mut gnorm) = current.energy_gradient();
    let mut best = current.clone();
    let mut best_gnorm = gnorm;
    let mut eta = real::<S>(1e-3) / (S::one() + gnorm);
    let cap = radius * real(0.0625);
    for _ in 0..3000 {
        if gnorm < tol {
            return Ok((current, gnorm));
        }
        let gmax = grad.iter().map(|g| g.norm()).fold(S::zero(), |a, b| a.max(b));
        let eta_eff = if gmax * eta > cap { cap / gmax } else { eta };
        let mut trial = current.clone();
        {
            let nodes = trial.nodes_mut();
            for (j, g) in grad.iter().enumerate() {
                nodes[j + 1] = man.node_exp(&nodes[j + 1], &(-g), eta_eff);
            }
        }
        match trial.energy_checked() {
            Some(e_t) if e_t <= energy => {
                current = trial;
                energy = e_t;
                let (g_t, gn_t) = current.energy_gradient();
                grad = g_t;
                gnorm = gn_t;
                eta *= real(1.1);
                if gnorm < best_gnorm {
                    best = current.clone();
                    best_gnorm = gnorm;
                } else if gnorm > best_gnorm * real(20.0) {
                    break; // escaped well past the col
                }
            }
            _ => {
                eta *= real(0.5);
                if eta < real(1e-18) {
                    break;
                }
            }
        }
    }
    Ok((best, best_gnorm))
}

/// Damped Newton on the gradient system: converges quadratically to the
/// nearest non-degenerate critical point of any index once the seed is
/// inside its basin.
fn newton_refine<S: Real>(
    mut current: DiscretePath<S>,
    mut gnorm: S,
    tol: S,
    max_iter: usize,
    man: &ModelManifold<S>,
    radius: S,
) -> LabResult<GeodesicRecord<S>, S> {
    let dim = man.node_dim();
    for iter in 0..=max_iter {
        if gnorm < tol {
            let mut rec = GeodesicRecord::measure(current, "saddle")?;
            rec.iterations = iter;
            rec.gradient_norm = gnorm;
            return Ok(rec);
        }
        let frames = crate::pathspace::interior_frames(&current);
        let g_chart = crate::pathspace::chart_gradient(&current, &frames, dim);
        let (hess, _) = crate::pathspace::discrete_hessian(&current);
        let n = g_chart.len();
        if n == 0 {
            break;
        }
        let rhs = nalgebra::DVector::from_iterator(n, g_chart.iter().map(|&g| -g));
        let mut delta = match hess.clone().lu().solve(&rhs) {
            Some(d) => d,
            None => {
                let mut damped = hess;
                for i in 0..n {
                    let bump = real::<S>(1e-8) * (S::one() + damped[(i, i)].abs());
                    damped[(i, i)] += bump;
                }
                match damped.lu().solve(&rhs) {
                    Some(d) => d,
                    None => break,
                }
            }
        };
        // Trust cap: no node moves more than a quarter uniqueness radius.
        let mut worst = S::zero();
        for j in 0..n / dim {
            let mut sq = S::zero();
            for d in 0..dim {
                sq += delta[j * dim + d] * delta[j * dim + d];
            }
            worst = worst.max(sq.sqrt());
        }
        let trust = radius * real(0.25);
        if worst > trust {
            delta *= trust / worst;
        }
        // Damped acceptance on the gradient norm.
        let mut scale = S::one();
        let mut accepted = false;
        for _ in 0..12 {
            let mut trial = current.clone();
            {
                let nodes = trial.nodes_mut();
                for j in 0..n / dim {
                    let mut dir = Node::<S>::zeros();
                    for d in 0..dim {
                        dir += frames[j][d] * (delta[j * dim + d] * scale);
                    }
                    nodes[j + 1] = man.node_exp(&nodes[j + 1], &dir, S::one());
                }
            }
            if trial.energy_checked().is_some() {
                let (_, gnorm_t) = trial.energy_gradient();
                if gnorm_t.is_finite() && gnorm_t < gnorm {
                    current = trial;
                    gnorm = gnorm_t;
                    accepted = true;
                    break;
                }
            }
            scale *= real(0.5);
        }
        if !accepted {
            break;
        }
    }
    let best = GeodesicRecord::measure(current, "saddle")?;
    Err(GeodesicError::NonConvergence {
        iterations: max_iter,
        gradient_norm: gnorm,
        best: Box::new(best),
    })
}

/// One safeguarded gradient step; rejections halve the member's step size.
fn gradient_step<S: Real>(
    member: &mut DiscretePath<S>,
    energy: &mut S,
    eta: &mut S,
    radius: S,
    man: &ModelManifold<S>,
) {
    let (grads, gnorm) = member.energy_gradient();
    if gnorm == S::zero() {
        return;
    }
    let gmax = grads.iter().map(|g| g.norm()).fold(S::zero(), |a, b| a.max(b));
    let mut eta_eff = *eta;
    let cap = radius * real(0.125);
    if gmax * eta_eff > cap {
        eta_eff = cap / gmax;
    }
    let mut trial = member.clone();
    {
        let nodes = trial.nodes_mut();
        for (j, g) in grads.iter().enumerate() {
            nodes[j + 1] = man.node_exp(&nodes[j + 1], &(-g), eta_eff);
        }
    }
    match trial.energy_checked() {
        Some(e_t) if e_t <= *energy => {
            *member = trial;
            *energy = e_t;
            *eta = (*eta * real(1.2)).min(real(1e3));
        }
        _ => {
            *eta *= real(0.5);
        }
    }
}

/// Inserts node-wise midpoint members wherever adjacent members drifted
/// farther apart than the uniqueness radius, up to the member budget.
fn repair_continuity<S: Real>(
    members: &mut Vec<DiscretePath<S>>,
    energies: &mut Vec<S>,
    etas: &mut Vec<S>,
    radius: S,
    man: &ModelManifold<S>,
    member_cap: usize,
) {
    let mut i = 0;
    while i < members.len() && members.len() < member_cap {
        let j = (i + 1) % members.len();
        let gap = member_gap(man, &members[i], &members[j]);
        if gap > radius {
            let a = members[i].clone();
            let b = members[j].clone();
            let nodes: Vec<Node<S>> = a
                .nodes()
                .iter()
                .zip(b.nodes())
                .map(|(x, y)| man.seg_point(x, y, real(0.5)))
                .collect();
            let mut mid = DiscretePath::new(man.clone(), nodes).expect("midpoint family member");
            let mut e_mid = mid
                .energy_checked()
                .unwrap_or_else(|| S::max_value().unwrap());
            // Keep the trace monotone: pull the insert below its neighbours.
            let bound = energies[i].max(energies[j]);
            let mut eta_local = real::<S>(1e-3);
            let mut guard = 0;
            while e_mid > bound && guard < 50 {
                gradient_step(&mut mid, &mut e_mid, &mut eta_local, radius, man);
                guard += 1;
            }
            members.insert(i + 1, mid);
            energies.insert(i + 1, e_mid);
            etas.insert(i + 1, eta_local);
            i += 2;
        } else {
            i += 1;
        }
    }
}

/// Largest symmetrized node distance between two members.
fn member_gap<S: Real>(man: &ModelManifold<S>, a: &DiscretePath<S>, b: &DiscretePath<S>) -> S {
    let half = real::<S>(0.5);
    a.nodes()
        .iter()
        .zip(b.nodes())
        .map(|(x, y)| (man.seg_len(x, y) + man.seg_len(y, x)) * half)
        .fold(S::zero(), |acc, d| acc.max(d))
}

/// Sandwich report for a scan over the powers of a class.
#[derive(Clone, Debug)]
pub struct SandwichReport<S: Real> {
    pub rows: Vec<SandwichRow<S>>,
    /// Smallest constant with `tau <= 2 L² + C` across the scan.
    pub c_fit: S,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct SandwichRow<S: Real> {
    pub class: HomotopyClass,
    pub minimizer_length: S,
    pub tau_upper: S,
    pub tau_critical: S,
    pub certified: bool,
}

/// Checks `L(gamma)² <= tau <= 2 L(gamma)² + C` across aligned scans. The
/// lower bound is hard: a violation beyond 1e-6 is an implementation bug.
pub fn verify_sandwich<S: Real>(
    results: &[MinmaxResult<S>],
    minimizers: &[GeodesicRecord<S>],
) -> LabResult<SandwichReport<S>, S> {
    if results.len() != minimizers.len() || results.is_empty() {
        return Err(GeodesicError::Domain(
            "results and minimizers must align one to one".into(),
        ));
    }
    let mut rows = Vec::with_capacity(results.len());
    let mut c_fit = S::min_value().unwrap();
    let mut pass = true;
    for (res, min) in results.iter().zip(minimizers) {
        if res.class != min.class {
            return Err(GeodesicError::Domain(format!(
                "scan misaligned: result class {} vs minimizer class {}",
                res.class, min.class
            )));
        }
        let l2 = min.length * min.length;
        for tau in [res.tau_upper, res.tau_critical] {
            if tau < l2 - real::<S>(1e-6) * (S::one() + l2) {
                return Err(GeodesicError::Domain(format!(
                    "class {}: tau {} beats the minimizer energy {}",
                    res.class, tau, l2
                )));
            }
        }
        c_fit = c_fit.max(res.tau_critical - real::<S>(2.0) * l2);
        pass = pass && res.certified;
        rows.push(SandwichRow {
            class: res.class.clone(),
            minimizer_length: min.length,
            tau_upper: res.tau_upper,
            tau_critical: res.tau_critical,
            certified: res.certified,
        });
    }
    Ok(SandwichReport { rows, c_fit, pass })
}
