//! Model manifold catalog.
//!
//! Three geometries, each with a closed-form norm, fundamental tensor,
//! asymmetric distance and an exhaustive geodesic oracle:
//!
//! * `FlatTorus` — the square torus `[0,1)²` with a Randers norm
//!   `F(v) = |v| + <drift, v>`, `|drift| < 1`. Geodesics lift to straight
//!   lines because the drift term integrates to a constant on each class.
//! * `FlatCylinder` — `[0,c) x R` with the Euclidean norm.
//! * `CircleTimesSphere` — `S¹(c) x S²(1)` with the product Riemannian norm;
//!   sphere points are stored as unit 3-vectors so descent never meets a
//!   pole singularity.
//!
//! Internally paths live in the covering space: torus and cylinder nodes are
//! plain `R²` points, product nodes unwrap the circle coordinate. The first
//! four helpers below (`lift`, `project`, `seg_*`) are the whole interface the
//! path-space module needs.

use nalgebra::{DMatrix, Vector2, Vector3, Vector4};

use crate::error::{GeodesicError, LabResult};
use crate::homotopy::HomotopyClass;
use crate::{real, Real};

/// Covering-space point. Layout by variant:
/// torus/cylinder `(x, y, 0, 0)`, product `(t, y1, y2, y3)` with `y` on `S²`.
pub type Node<S> = Vector4<S>;

/// Tolerance for the unit-sphere invariant on chart points.
const UNIT_TOL: f64 = 1e-12;
/// Sphere arcs within this of a multiple of pi are conjugate-degenerate.
const DEGENERATE_ARC_TOL: f64 = 1e-9;

/// Chart coordinates of a point. Torus/cylinder use the first two slots,
/// the product uses all four (circle coordinate, then the sphere vector).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChartPoint<S: Real> {
    pub coords: Vector4<S>,
}

impl<S: Real> ChartPoint<S> {
    pub fn plane(x: S, y: S) -> Self {
        Self { coords: Vector4::new(x, y, S::zero(), S::zero()) }
    }

    pub fn product(t: S, y: Vector3<S>) -> Self {
        Self { coords: Vector4::new(t, y.x, y.y, y.z) }
    }

    pub fn sphere_part(&self) -> Vector3<S> {
        Vector3::new(self.coords[1], self.coords[2], self.coords[3])
    }
}

/// Tangent vector in the chart basis at some point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVec<S: Real> {
    pub coords: Vector4<S>,
}

impl<S: Real> TangentVec<S> {
    pub fn plane(x: S, y: S) -> Self {
        Self { coords: Vector4::new(x, y, S::zero(), S::zero()) }
    }

    pub fn product(t: S, w: Vector3<S>) -> Self {
        Self { coords: Vector4::new(t, w.x, w.y, w.z) }
    }

    pub fn zero() -> Self {
        Self { coords: Vector4::zeros() }
    }
}

/// One of the three model geometries.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelManifold<S: Real> {
    FlatTorus { drift: Vector2<S> },
    FlatCylinder { circumference: S },
    CircleTimesSphere { circumference: S },
}

impl<S: Real> ModelManifold<S> {
    pub fn flat_torus(drift: Vector2<S>) -> LabResult<Self, S> {
        if drift.norm() >= S::one() {
            return Err(GeodesicError::InvalidManifold(format!(
                "drift norm {} must be < 1 for Randers positivity",
                drift.norm()
            )));
        }
        Ok(Self::FlatTorus { drift })
    }

    pub fn flat_cylinder(circumference: S) -> LabResult<Self, S> {
        if circumference <= S::zero() {
            return Err(GeodesicError::InvalidManifold(
                "circumference must be positive".into(),
            ));
        }
        Ok(Self::FlatCylinder { circumference })
    }

    pub fn circle_times_sphere(circumference: S) -> LabResult<Self, S> {
        if circumference <= S::zero() {
            return Err(GeodesicError::InvalidManifold(
                "circumference must be positive".into(),
            ));
        }
        Ok(Self::CircleTimesSphere { circumference })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::FlatTorus { .. } => "flat-torus",
            Self::FlatCylinder { .. } => "flat-cylinder",
            Self::CircleTimesSphere { .. } => "circle-times-sphere",
        }
    }

    /// Rank of the fundamental group (2 for the torus, 1 otherwise).
    pub fn pi1_rank(&self) -> usize {
        match self {
            Self::FlatTorus { .. } => 2,
            _ => 1,
        }
    }

    /// Dimension of the chart coordinates (ambient for the product).
    pub fn chart_dim(&self) -> usize {
        match self {
            Self::CircleTimesSphere { .. } => 4,
            _ => 2,
        }
    }

    /// Intrinsic tangent dimension at a node.
    pub fn node_dim(&self) -> usize {
        match self {
            Self::CircleTimesSphere { .. } => 3,
            _ => 2,
        }
    }

    pub fn circumference(&self) -> Option<S> {
        match self {
            Self::FlatTorus { .. } => None,
            Self::FlatCylinder { circumference } | Self::CircleTimesSphere { circumference } => {
                Some(*circumference)
            }
        }
    }

    /// Whether the sweepout construction has a non-trivial class to represent.
    pub fn has_sphere_factor(&self) -> bool {
        matches!(self, Self::CircleTimesSphere { .. })
    }

    /// Stable 64-bit hash of the model parameters (FNV-1a over the canonical
    /// parameter string), used to key database records.
    pub fn model_hash(&self) -> u64 {
        let text = match self {
            Self::FlatTorus { drift } => format!(
                "flat-torus drift={:e},{:e}",
                drift.x.to_f64().unwrap(),
                drift.y.to_f64().unwrap()
            ),
            Self::FlatCylinder { circumference } => {
                format!("flat-cylinder c={:e}", circumference.to_f64().unwrap())
            }
            Self::CircleTimesSphere { circumference } => {
                format!("circle-times-sphere c={:e}", circumference.to_f64().unwrap())
            }
        };
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    fn check_chart(&self, p: &ChartPoint<S>) -> LabResult<(), S> {
        if let Self::CircleTimesSphere { .. } = self {
            let y = p.sphere_part();
            if (y.norm() - S::one()).abs() > real(UNIT_TOL) {
                return Err(GeodesicError::Domain(format!(
                    "sphere point has norm {} (must be unit to 1e-12)",
                    y.norm()
                )));
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------------
    // Norm, fundamental tensor, distance
    // ------------------------------------------------------------------

    /// Evaluates the Finsler norm `F(v)` at `x`.
    ///
    /// Positively 1-homogeneous and positive away from the zero vector. On
    /// the torus this is the Randers form `|v| + <drift, v>`.
    pub fn eval_norm(&self, x: &ChartPoint<S>, v: &TangentVec<S>) -> LabResult<S, S> {
        self.check_chart(x)?;
        Ok(self.norm_raw(&v.coords))
    }

    /// Norm formula on raw coordinates; the product formula extends to
    /// non-tangent vectors as the ambient Euclidean norm, which is what the
    /// finite-difference tensor checks differentiate.
    pub(crate) fn norm_raw(&self, v: &Vector4<S>) -> S {
        match self {
            Self::FlatTorus { drift } => {
                let w = Vector2::new(v[0], v[1]);
                w.norm() + drift.dot(&w)
            }
            Self::FlatCylinder { .. } => Vector2::new(v[0], v[1]).norm(),
            Self::CircleTimesSphere { .. } => v.norm(),
        }
    }

    /// Fundamental tensor `g_u` at `u != 0`, as a `chart_dim x chart_dim`
    /// matrix in the chart basis. Symmetric positive definite.
    pub fn fundamental_tensor(
        &self,
        x: &ChartPoint<S>,
        u: &TangentVec<S>,
    ) -> LabResult<DMatrix<S>, S> {
        self.check_chart(x)?;
        let dim = self.chart_dim();
        let uv = &u.coords;
        if uv.norm() == S::zero() {
            return Err(GeodesicError::ZeroTangent);
        }
        match self {
            Self::FlatTorus { drift } => {
                // g_u(v,w) = (du·v + b·v)(du·w + b·w) + (1 + b·du)(v·w - (du·v)(du·w))
                // with du = u/|u|; obtained by differentiating (|.| + <b,.>)² twice.
                let uu = Vector2::new(uv[0], uv[1]);
                let n = uu.norm();
                if n == S::zero() {
                    return Err(GeodesicError::ZeroTangent);
                }
                let du = uu / n;
                let lin = Vector2::new(du.x + drift.x, du.y + drift.y);
                let scale = S::one() + drift.dot(&du);
                let mut g = DMatrix::<S>::zeros(2, 2);
                for i in 0..2 {
                    for j in 0..2 {
                        let id = if i == j { S::one() } else { S::zero() };
                        g[(i, j)] = lin[i] * lin[j] + scale * (id - du[i] * du[j]);
                    }
                }
                Ok(g)
            }
            Self::FlatCylinder { .. } => Ok(DMatrix::identity(2, 2)),
            // The extended norm is Euclidean on the ambient chart, so the
            // tensor is the identity; its restriction to the tangent space of
            // S¹ x S² is the product metric.
            Self::CircleTimesSphere { .. } => Ok(DMatrix::identity(dim, dim)),
        }
    }

    /// Asymmetric distance `d(p, q)`: the infimum of lengths over connecting
    /// paths, computed as a minimum over covering-space candidates.
    pub fn asym_distance(&self, p: &ChartPoint<S>, q: &ChartPoint<S>) -> LabResult<S, S> {
        self.check_chart(p)?;
        self.check_chart(q)?;
        let a = self.lift(p)?;
        let b = self.lift(q)?;
        match self {
            Self::FlatTorus { drift } => {
                let delta = Vector2::new(b[0] - a[0], b[1] - a[1]);
                let (len, _) = torus_best_wrap(delta, *drift);
                Ok(len)
            }
            Self::FlatCylinder { circumference } => {
                let dy = b[1] - a[1];
                let dx = wrap_signed(b[0] - a[0], *circumference);
                let mut best = S::max_value().unwrap();
                for k in [-S::one(), S::zero(), S::one()] {
                    let cand = (dx + k * *circumference).hypot(dy);
                    if cand < best {
                        best = cand;
                    }
                }
                Ok(best)
            }
            Self::CircleTimesSphere { circumference } => {
                let dc = wrap_signed(b[0] - a[0], *circumference);
                let dc = dc.abs().min((*circumference - dc.abs()).abs());
                let ds = sphere_angle(&p.sphere_part(), &q.sphere_part());
                Ok(dc.hypot(ds))
            }
        }
    }

    // ------------------------------------------------------------------
    // Covering-space helpers
    // ------------------------------------------------------------------

    /// Canonical lift of a chart point: circle coordinates wrapped into the
    /// fundamental domain, sphere part validated.
    pub fn lift(&self, p: &ChartPoint<S>) -> LabResult<Node<S>, S> {
        self.check_chart(p)?;
        let c = p.coords;
        Ok(match self {
            Self::FlatTorus { .. } => {
                Vector4::new(wrap_unit(c[0]), wrap_unit(c[1]), S::zero(), S::zero())
            }
            Self::FlatCylinder { circumference } => Vector4::new(
                wrap_into(c[0], *circumference),
                c[1],
                S::zero(),
                S::zero(),
            ),
            Self::CircleTimesSphere { circumference } => {
                let mut y = p.sphere_part();
                y.normalize_mut();
                Vector4::new(wrap_into(c[0], *circumference), y.x, y.y, y.z)
            }
        })
    }

    /// Projects a covering-space node back to chart coordinates.
    pub fn project(&self, n: &Node<S>) -> ChartPoint<S> {
        match self {
            Self::FlatTorus { .. } => ChartPoint::plane(wrap_unit(n[0]), wrap_unit(n[1])),
            Self::FlatCylinder { circumference } => {
                ChartPoint::plane(wrap_into(n[0], *circumference), n[1])
            }
            Self::CircleTimesSphere { circumference } => ChartPoint::product(
                wrap_into(n[0], *circumference),
                Vector3::new(n[1], n[2], n[3]),
            ),
        }
    }

    /// F-length of the unique minimizing geodesic between two cover nodes.
    pub fn seg_len(&self, a: &Node<S>, b: &Node<S>) -> S {
        match self {
            Self::FlatTorus { drift } => {
                let d = Vector2::new(b[0] - a[0], b[1] - a[1]);
                d.norm() + drift.dot(&d)
            }
            Self::FlatCylinder { .. } => Vector2::new(b[0] - a[0], b[1] - a[1]).norm(),
            Self::CircleTimesSphere { .. } => {
                let dt = b[0] - a[0];
                let th = sphere_angle(&node_sphere(a), &node_sphere(b));
                dt.hypot(th)
            }
        }
    }

    /// Point at parameter `u` of the minimizing geodesic `a -> b`
    /// (constant speed in each factor).
    pub fn seg_point(&self, a: &Node<S>, b: &Node<S>, u: S) -> Node<S> {
        match self {
            Self::FlatTorus { .. } | Self::FlatCylinder { .. } => a + (b - a) * u,
            Self::CircleTimesSphere { .. } => {
                let t = a[0] + (b[0] - a[0]) * u;
                let ya = node_sphere(a);
                let yb = node_sphere(b);
                let y = slerp(&ya, &yb, u);
                Vector4::new(t, y.x, y.y, y.z)
            }
        }
    }

    /// Gradients of `seg_len(a,b)²` with respect to both endpoints, as
    /// ambient vectors projected onto the tangent space at each node.
    pub fn seg_len2_grad(&self, a: &Node<S>, b: &Node<S>) -> (Node<S>, Node<S>) {
        match self {
            Self::FlatTorus { drift } => {
                let d = Vector2::new(b[0] - a[0], b[1] - a[1]);
                let n = d.norm();
                if n == S::zero() {
                    return (Vector4::zeros(), Vector4::zeros());
                }
                let len = n + drift.dot(&d);
                let dir = Vector2::new(d.x / n + drift.x, d.y / n + drift.y);
                let gb = Vector4::new(
                    real::<S>(2.0) * len * dir.x,
                    real::<S>(2.0) * len * dir.y,
                    S::zero(),
                    S::zero(),
                );
                (-gb, gb)
            }
            Self::FlatCylinder { .. } => {
                let gb = Vector4::new(
                    real::<S>(2.0) * (b[0] - a[0]),
                    real::<S>(2.0) * (b[1] - a[1]),
                    S::zero(),
                    S::zero(),
                );
                (-gb, gb)
            }
            Self::CircleTimesSphere { .. } => {
                let two = real::<S>(2.0);
                let ya = node_sphere(a);
                let yb = node_sphere(b);
                let th = sphere_angle(&ya, &yb);
                // d/dy of theta² = -2 (theta/sin theta) P_y(other); the factor
                // tends to 1 as theta -> 0.
                let factor = if th < real(1e-9) {
                    two
                } else {
                    two * th / th.sin()
                };
                let proj_a = yb - ya * ya.dot(&yb);
                let proj_b = ya - yb * yb.dot(&ya);
                let dt = b[0] - a[0];
                let ga = Vector4::new(
                    -two * dt,
                    -factor * proj_a.x,
                    -factor * proj_a.y,
                    -factor * proj_a.z,
                );
                let gb = Vector4::new(
                    two * dt,
                    -factor * proj_b.x,
                    -factor * proj_b.y,
                    -factor * proj_b.z,
                );
                (ga, gb)
            }
        }
    }

    /// Orthonormal tangent basis at a node. Returns the basis vectors and the
    /// intrinsic dimension (2 on the flat models, 3 on the product).
    pub fn tangent_basis(&self, n: &Node<S>) -> ([Node<S>; 3], usize) {
        let e0 = Vector4::new(S::one(), S::zero(), S::zero(), S::zero());
        let e1 = Vector4::new(S::zero(), S::one(), S::zero(), S::zero());
        match self {
            Self::FlatTorus { .. } | Self::FlatCylinder { .. } => ([e0, e1, Vector4::zeros()], 2),
            Self::CircleTimesSphere { .. } => {
                let y = node_sphere(n);
                let seed = if y.x.abs() < real(0.9) {
                    Vector3::x()
                } else {
                    Vector3::y()
                };
                let mut u = seed - y * y.dot(&seed);
                u.normalize_mut();
                let v = y.cross(&u);
                (
                    [
                        e0,
                        Vector4::new(S::zero(), u.x, u.y, u.z),
                        Vector4::new(S::zero(), v.x, v.y, v.z),
                    ],
                    3,
                )
            }
        }
    }

    /// Moves a node along a tangent vector: straight on the flat models,
    /// exact exponential on the sphere factor.
    pub fn node_exp(&self, n: &Node<S>, dir: &Node<S>, t: S) -> Node<S> {
        match self {
            Self::FlatTorus { .. } | Self::FlatCylinder { .. } => n + dir * t,
            Self::CircleTimesSphere { .. } => {
                let tc = n[0] + dir[0] * t;
                let y = node_sphere(n);
                let w = Vector3::new(dir[1], dir[2], dir[3]) * t;
                let wn = w.norm();
                let y_new = if wn < real(1e-300) {
                    y
                } else {
                    y * wn.cos() + (w / wn) * wn.sin()
                };
                Vector4::new(tc, y_new.x, y_new.y, y_new.z)
            }
        }
    }

    /// Radius below which two points have a unique minimizing geodesic that
    /// lifts coherently; consecutive path nodes must stay within it.
    pub fn uniqueness_radius(&self) -> S {
        let half = real::<S>(0.5);
        match self {
            Self::FlatTorus { drift } => (S::one() - drift.norm()) * half,
            Self::FlatCylinder { circumference } => *circumference * half,
            Self::CircleTimesSphere { circumference } => {
                (*circumference * half).min(S::frac_pi_2())
            }
        }
    }

    /// Deck transformation (covering-space translation) attached to a class.
    pub fn deck_vector(&self, class: &HomotopyClass) -> LabResult<Node<S>, S> {
        if class.rank() != self.pi1_rank() {
            return Err(GeodesicError::Domain(format!(
                "class rank {} does not match fundamental group rank {}",
                class.rank(),
                self.pi1_rank()
            )));
        }
        Ok(match self {
            Self::FlatTorus { .. } => Vector4::new(
                real(class.invariant[0] as f64),
                real(class.invariant[1] as f64),
                S::zero(),
                S::zero(),
            ),
            Self::FlatCylinder { circumference } | Self::CircleTimesSphere { circumference } => {
                Vector4::new(
                    real::<S>(class.invariant[0] as f64) * *circumference,
                    S::zero(),
                    S::zero(),
                    S::zero(),
                )
            }
        })
    }

    /// Reads the deck transformation separating the lifts of two nodes that
    /// project to the same chart point.
    pub fn class_between(&self, from: &Node<S>, to: &Node<S>) -> LabResult<HomotopyClass, S> {
        let tol = real::<S>(1e-6);
        let ints = match self {
            Self::FlatTorus { .. } => {
                let dx = to[0] - from[0];
                let dy = to[1] - from[1];
                let mx = dx.round();
                let my = dy.round();
                if (dx - mx).abs() > tol || (dy - my).abs() > tol {
                    return Err(GeodesicError::Domain(format!(
                        "lift difference ({dx}, {dy}) is not a lattice vector"
                    )));
                }
                vec![mx.to_f64().unwrap() as i64, my.to_f64().unwrap() as i64]
            }
            Self::FlatCylinder { circumference } | Self::CircleTimesSphere { circumference } => {
                let dm = (to[0] - from[0]) / *circumference;
                let m = dm.round();
                if (dm - m).abs() > tol {
                    return Err(GeodesicError::Domain(format!(
                        "lift difference {dm} circumferences is not integral"
                    )));
                }
                vec![m.to_f64().unwrap() as i64]
            }
        };
        Ok(HomotopyClass::new(ints))
    }

    /// Covering target of the class-neutral reference chord: the lift of `q`
    /// reached by the oracle minimizer from the lift of `p`, with a
    /// deterministic lexicographic tie-break. Fixing it once makes every
    /// class label reproducible.
    pub fn canonical_target(&self, p: &ChartPoint<S>, q: &ChartPoint<S>) -> LabResult<Node<S>, S> {
        let a = self.lift(p)?;
        let b = self.lift(q)?;
        Ok(match self {
            Self::FlatTorus { drift } => {
                let delta = Vector2::new(b[0] - a[0], b[1] - a[1]);
                let (_, w) = torus_best_wrap(delta, *drift);
                Vector4::new(
                    b[0] + real(w.0 as f64),
                    b[1] + real(w.1 as f64),
                    S::zero(),
                    S::zero(),
                )
            }
            Self::FlatCylinder { circumference } | Self::CircleTimesSphere { circumference } => {
                let dt = b[0] - a[0];
                let m = best_circle_wrap(dt, *circumference);
                let mut out = b;
                out[0] = b[0] + real::<S>(m as f64) * *circumference;
                out
            }
        })
    }

    /// Symmetrized quotient distance between the projections of two nodes.
    /// Image comparisons use this; it is drift-independent by design.
    pub fn quotient_dist_sym(&self, a: &Node<S>, b: &Node<S>) -> S {
        match self {
            Self::FlatTorus { .. } => {
                let dx = wrap_unit(b[0] - a[0]);
                let dy = wrap_unit(b[1] - a[1]);
                let dx = dx.min(S::one() - dx);
                let dy = dy.min(S::one() - dy);
                dx.hypot(dy)
            }
            Self::FlatCylinder { circumference } => {
                let dx = wrap_into(b[0] - a[0], *circumference);
                let dx = dx.min(*circumference - dx);
                dx.hypot(b[1] - a[1])
            }
            Self::CircleTimesSphere { circumference } => {
                let dx = wrap_into(b[0] - a[0], *circumference);
                let dx = dx.min(*circumference - dx);
                let th = sphere_angle(&node_sphere(a), &node_sphere(b));
                dx.hypot(th)
            }
        }
    }

    /// A conservative diameter scale of the quotient, used to set census
    /// coincidence tolerances.
    pub fn diameter_scale(&self) -> S {
        match self {
            Self::FlatTorus { .. } => real(std::f64::consts::SQRT_2),
            Self::FlatCylinder { circumference } => circumference.max(S::one()),
            Self::CircleTimesSphere { circumference } => circumference.max(S::pi()),
        }
    }

    /// Twice the forward injectivity radius at any point: the length of the
    /// shortest closed geodesic through it. This is the per-iterate length
    /// gain used by the conversion bound.
    pub fn iterate_length_gain(&self) -> S {
        match self {
            Self::FlatTorus { drift } => {
                let mut best = S::max_value().unwrap();
                for m in -2i64..=2 {
                    for n in -2i64..=2 {
                        if m == 0 && n == 0 {
                            continue;
                        }
                        let w = Vector2::new(real(m as f64), real(n as f64));
                        let len = w.norm() + drift.dot(&w);
                        if len < best {
                            best = len;
                        }
                    }
                }
                best
            }
            Self::FlatCylinder { circumference } => *circumference,
            Self::CircleTimesSphere { circumference } => circumference.min(S::two_pi()),
        }
    }

    // ------------------------------------------------------------------
    // Geodesic oracle
    // ------------------------------------------------------------------

    /// Exhaustive list of geodesics from `p` to `q` in a homotopy class, up to
    /// `max_len`. Conjugate-degenerate sphere arcs (length in pi Z) are
    /// excluded and counted in the returned set.
    pub fn oracle_geodesics(
        &self,
        p: &ChartPoint<S>,
        q: &ChartPoint<S>,
        class: &HomotopyClass,
        max_len: S,
    ) -> LabResult<OracleSet<S>, S> {
        let start = self.lift(p)?;
        let target = self.canonical_target(p, q)? + self.deck_vector(class)?;
        let mut set = OracleSet { geodesics: Vec::new(), degenerate_excluded: 0 };
        match self {
            Self::FlatTorus { .. } | Self::FlatCylinder { .. } => {
                let len = self.seg_len(&start, &target);
                if len <= max_len {
                    set.geodesics.push(OracleGeodesic {
                        manifold: self.clone(),
                        class: class.clone(),
                        length: len,
                        index: 0,
                        kind: OracleKind::FlatLine { start, target },
                    });
                }
            }
            Self::CircleTimesSphere { .. } => {
                let dt = target[0] - start[0];
                let yp = node_sphere(&start);
                let yq = node_sphere(&target);
                let ds = sphere_angle(&yp, &yq);
                let near = |x: S, anchor: S| (x - anchor).abs() < real(DEGENERATE_ARC_TOL);
                if near(ds, S::zero()) {
                    // Coincident sphere endpoints: the straight circle line is
                    // the only non-degenerate geodesic; every full great
                    // circle through the point is a conjugate family.
                    if dt.abs() <= max_len {
                        set.geodesics.push(OracleGeodesic {
                            manifold: self.clone(),
                            class: class.clone(),
                            length: dt.abs(),
                            index: 0,
                            kind: OracleKind::ProductArc {
                                start,
                                dt,
                                arc: S::zero(),
                                axis: Vector3::zeros(),
                            },
                        });
                    }
                    let mut j = 1;
                    loop {
                        let sigma = S::two_pi() * real(j as f64);
                        if dt.hypot(sigma) > max_len {
                            break;
                        }
                        set.degenerate_excluded += 1;
                        j += 1;
                    }
                    return Ok(set);
                }
                if near(ds, S::pi()) {
                    // Antipodal endpoints: every arc family is conjugate.
                    let mut j = 0;
                    loop {
                        let sigma = S::pi() + S::two_pi() * real(j as f64);
                        if dt.hypot(sigma) > max_len {
                            break;
                        }
                        set.degenerate_excluded += 1;
                        j += 1;
                    }
                    return Ok(set);
                }
                let w = (yq - yp * ds.cos()) / ds.sin();
                let mut arcs: Vec<(S, Vector3<S>)> = Vec::new();
                for j in 0.. {
                    let shift = S::two_pi() * real(j as f64);
                    let a = ds + shift;
                    let b = (S::two_pi() - ds) + shift;
                    if dt.hypot(a) > max_len && dt.hypot(b) > max_len {
                        break;
                    }
                    arcs.push((a, w));
                    arcs.push((b, -w));
                }
                arcs.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
                for (sigma, axis) in arcs {
                    let len = dt.hypot(sigma);
                    if len > max_len {
                        continue;
                    }
                    let per_pi = sigma / S::pi();
                    if (per_pi - per_pi.round()).abs() < real(DEGENERATE_ARC_TOL) {
                        set.degenerate_excluded += 1;
                        continue;
                    }
                    set.geodesics.push(OracleGeodesic {
                        manifold: self.clone(),
                        class: class.clone(),
                        length: len,
                        index: per_pi.floor().to_usize().unwrap(),
                        kind: OracleKind::ProductArc { start, dt, arc: sigma, axis },
                    });
                }
            }
        }
        Ok(set)
    }
}

/// Result of an oracle enumeration.
#[derive(Clone, Debug)]
pub struct OracleSet<S: Real> {
    pub geodesics: Vec<OracleGeodesic<S>>,
    /// Number of conjugate-degenerate arcs excluded from the list.
    pub degenerate_excluded: usize,
}

impl<S: Real> OracleSet<S> {
    pub fn min_length(&self) -> Option<S> {
        self.geodesics
            .iter()
            .map(|g| g.length)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
    }
}

/// An analytic geodesic description: exact length, exact Morse index, and a
/// sampler for seeding the discrete solvers.
#[derive(Clone, Debug)]
pub struct OracleGeodesic<S: Real> {
    pub manifold: ModelManifold<S>,
    pub class: HomotopyClass,
    pub length: S,
    pub index: usize,
    kind: OracleKind<S>,
}

#[derive(Clone, Debug)]
enum OracleKind<S: Real> {
    FlatLine { start: Node<S>, target: Node<S> },
    ProductArc { start: Node<S>, dt: S, arc: S, axis: Vector3<S> },
}

impl<S: Real> OracleGeodesic<S> {
    /// Point of the geodesic at parameter `t` (constant speed on `[0,1]`).
    pub fn node_at(&self, t: S) -> Node<S> {
        match &self.kind {
            OracleKind::FlatLine { start, target } => start + (target - start) * t,
            OracleKind::ProductArc { start, dt, arc, axis } => {
                let yp = node_sphere(start);
                let phase = *arc * t;
                let y = if *arc == S::zero() {
                    yp
                } else {
                    yp * phase.cos() + axis * phase.sin()
                };
                Vector4::new(start[0] + *dt * t, y.x, y.y, y.z)
            }
        }
    }

    /// Uniform node chain with `k` segments.
    pub fn sample_nodes(&self, k: usize) -> Vec<Node<S>> {
        (0..=k)
            .map(|i| self.node_at(real::<S>(i as f64) / real(k as f64)))
            .collect()
    }
}

// ----------------------------------------------------------------------
// small numeric helpers
// ----------------------------------------------------------------------

pub(crate) fn node_sphere<S: Real>(n: &Node<S>) -> Vector3<S> {
    Vector3::new(n[1], n[2], n[3])
}

/// Wraps into [0, 1).
fn wrap_unit<S: Real>(x: S) -> S {
    let f = x - x.floor();
    if f >= S::one() {
        S::zero()
    } else {
        f
    }
}

/// Wraps into [0, c).
fn wrap_into<S: Real>(x: S, c: S) -> S {
    let f = x - (x / c).floor() * c;
    if f >= c {
        S::zero()
    } else {
        f
    }
}

/// Wraps a displacement into (-c/2, c/2].
fn wrap_signed<S: Real>(x: S, c: S) -> S {
    let mut f = x - (x / c).round() * c;
    let half = c * real(0.5);
    if f <= -half {
        f += c;
    }
    f
}

/// Robust angle between unit vectors.
pub(crate) fn sphere_angle<S: Real>(a: &Vector3<S>, b: &Vector3<S>) -> S {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Great-circle interpolation; callers keep the angle below pi/2.
fn slerp<S: Real>(a: &Vector3<S>, b: &Vector3<S>, u: S) -> Vector3<S> {
    let th = sphere_angle(a, b);
    if th < real(1e-9) {
        let mut y = a + (b - a) * u;
        y.normalize_mut();
        return y;
    }
    let s = th.sin();
    (a * ((S::one() - u) * th).sin() + b * (u * th).sin()) / s
}

/// Minimum of the Randers segment length over lattice wraps, with a
/// deterministic lexicographic tie-break on the wrap.
fn torus_best_wrap<S: Real>(delta: Vector2<S>, drift: Vector2<S>) -> (S, (i64, i64)) {
    let reversibility = S::one() - drift.norm();
    let mut best = S::max_value().unwrap();
    let mut best_w = (0i64, 0i64);
    let mut radius = 1i64;
    loop {
        for m in -radius..=radius {
            for n in -radius..=radius {
                let w = Vector2::new(delta.x + real(m as f64), delta.y + real(n as f64));
                let len = w.norm() + drift.dot(&w);
                let tie = real::<S>(1e-13) * (S::one() + best.abs());
                if len < best - tie
                    || (len < best + tie && (m, n) < best_w)
                {
                    best = len;
                    best_w = (m, n);
                }
            }
        }
        // Any wrap outside the current box is at Euclidean distance at least
        // radius - |delta| and so costs at least reversibility times that.
        let reach = real::<S>(radius as f64) - delta.norm();
        if reach > S::zero() && reversibility * reach > best {
            return (best, best_w);
        }
        radius += 1;
        if radius > 64 {
            return (best, best_w);
        }
    }
}

fn best_circle_wrap<S: Real>(dt: S, c: S) -> i64 {
    let mut best = S::max_value().unwrap();
    let mut best_m = 0i64;
    let base = -(dt / c).round().to_f64().unwrap() as i64;
    for m in (base - 1)..=(base + 1) {
        let cand = (dt + real::<S>(m as f64) * c).abs();
        let tie = real::<S>(1e-13) * (S::one() + best.abs());
        if cand < best - tie || (cand < best + tie && m < best_m) {
            best = cand;
            best_m = m;
        }
    }
    best_m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    type M = ModelManifold<f64>;

    fn torus(bx: f64, by: f64) -> M {
        M::flat_torus(Vector2::new(bx, by)).unwrap()
    }

    fn product(c: f64) -> M {
        M::circle_times_sphere(c).unwrap()
    }

    fn sphere_pt(theta: f64, phi: f64) -> Vector3<f64> {
        Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    #[test]
    fn randers_norm_matches_formula() {
        let m = torus(0.0, 0.0);
        let x = ChartPoint::plane(0.2, 0.3);
        let f = m.eval_norm(&x, &TangentVec::plane(3.0, 4.0)).unwrap();
        assert_relative_eq!(f, 5.0, epsilon = 1e-14);

        let m = torus(0.5, 0.0);
        assert_relative_eq!(m.eval_norm(&x, &TangentVec::plane(1.0, 0.0)).unwrap(), 1.5);
        assert_relative_eq!(m.eval_norm(&x, &TangentVec::plane(-1.0, 0.0)).unwrap(), 0.5);

        for man in [torus(0.3, 0.1), M::flat_cylinder(2.0).unwrap(), product(1.0)] {
            let p = match man {
                M::CircleTimesSphere { .. } => ChartPoint::product(0.1, Vector3::z()),
                _ => ChartPoint::plane(0.1, 0.4),
            };
            assert_eq!(man.eval_norm(&p, &TangentVec::zero()).unwrap(), 0.0);
        }
    }

    #[test]
    fn norm_rejects_non_unit_sphere_point() {
        let m = product(1.0);
        let bad = ChartPoint::product(0.0, Vector3::new(0.0, 0.0, 1.0 + 1e-9));
        assert!(matches!(
            m.eval_norm(&bad, &TangentVec::zero()),
            Err(GeodesicError::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn norm_is_positively_homogeneous(
            vx in -3.0f64..3.0, vy in -3.0f64..3.0, lambda in 1e-3f64..10.0,
            bx in -0.4f64..0.4, by in -0.4f64..0.4,
        ) {
            let m = torus(bx, by);
            let x = ChartPoint::plane(0.0, 0.0);
            let f1 = m.eval_norm(&x, &TangentVec::plane(lambda * vx, lambda * vy)).unwrap();
            let f2 = lambda * m.eval_norm(&x, &TangentVec::plane(vx, vy)).unwrap();
            prop_assert!((f1 - f2).abs() < 1e-12 * (1.0 + f2.abs()));
        }
    }

    #[test]
    fn tensor_is_identity_without_drift() {
        let m = torus(0.0, 0.0);
        let g = m
            .fundamental_tensor(&ChartPoint::plane(0.0, 0.0), &TangentVec::plane(0.3, -0.8))
            .unwrap();
        assert_relative_eq!(g[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(g[(1, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(g[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn tensor_rejects_zero_vector() {
        let m = torus(0.3, 0.0);
        assert!(matches!(
            m.fundamental_tensor(&ChartPoint::plane(0.0, 0.0), &TangentVec::zero()),
            Err(GeodesicError::ZeroTangent)
        ));
    }

    /// Independent oracle: central finite differences of F²/2 with step 1e-5.
    fn fd_tensor(m: &M, x: &ChartPoint<f64>, u: &Vector4<f64>, dim: usize) -> DMatrix<f64> {
        let h = 1e-5;
        let fsq = |v: &Vector4<f64>| {
            let f = m.norm_raw(v);
            f * f
        };
        let mut g = DMatrix::zeros(dim, dim);
        let _ = x;
        for i in 0..dim {
            for j in 0..dim {
                let mut ei = Vector4::zeros();
                ei[i] = h;
                let mut ej = Vector4::zeros();
                ej[j] = h;
                let val = (fsq(&(u + ei + ej)) - fsq(&(u + ei - ej)) - fsq(&(u - ei + ej))
                    + fsq(&(u - ei - ej)))
                    / (4.0 * h * h);
                g[(i, j)] = 0.5 * val;
            }
        }
        g
    }

    #[test]
    fn tensor_matches_finite_differences() {
        let m = torus(0.3, 0.0);
        let x = ChartPoint::plane(0.1, 0.2);
        let u = TangentVec::plane(1.0, 0.0);
        let g = m.fundamental_tensor(&x, &u).unwrap();
        let g_fd = fd_tensor(&m, &x, &u.coords, 2);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (g[(i, j)] - g_fd[(i, j)]).abs() < 1e-6,
                    "entry ({i},{j}): {} vs {}",
                    g[(i, j)],
                    g_fd[(i, j)]
                );
            }
        }
        // And at a handful of generic unit directions, on torus and product
        // (the tensor only depends on the direction of u, and unit scale
        // keeps the finite-difference truncation error within tolerance).
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..25 {
            let raw = Vector2::new(rng.gen_range(-1.0..1.0f64), rng.gen_range(-1.0..1.0));
            if raw.norm() < 1e-3 {
                continue;
            }
            let unit = raw / raw.norm();
            let u = TangentVec::plane(unit.x, unit.y);
            let g = m.fundamental_tensor(&x, &u).unwrap();
            let g_fd = fd_tensor(&m, &x, &u.coords, 2);
            for i in 0..2 {
                for j in 0..2 {
                    // Step-1e-5 central differences carry ~eps/h² = 2e-6 of
                    // rounding noise at generic directions.
                    assert!((g[(i, j)] - g_fd[(i, j)]).abs() < 5e-6);
                }
            }
        }
        let mp = product(1.0);
        let xp = ChartPoint::product(0.2, Vector3::z());
        let up = TangentVec::product(0.7, Vector3::new(0.3, -0.4, 0.0));
        let g = mp.fundamental_tensor(&xp, &up).unwrap();
        let g_fd = fd_tensor(&mp, &xp, &up.coords, 4);
        for i in 0..4 {
            for j in 0..4 {
                assert!((g[(i, j)] - g_fd[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tensor_symmetry_and_positivity_randomized() {
        let mut rng = StdRng::seed_from_u64(42);
        let models = [torus(0.3, 0.1), torus(0.0, 0.0), M::flat_cylinder(1.5).unwrap(), product(2.0)];
        let mut checked = 0;
        while checked < 1000 {
            let m = &models[checked % models.len()];
            let (x, u) = match m {
                M::CircleTimesSphere { .. } => {
                    let y = sphere_pt(rng.gen_range(0.1..3.0), rng.gen_range(0.0..6.28));
                    (
                        ChartPoint::product(rng.gen_range(0.0..1.0), y),
                        TangentVec::product(
                            rng.gen_range(-1.0..1.0),
                            Vector3::new(
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                            ),
                        ),
                    )
                }
                _ => (
                    ChartPoint::plane(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
                    TangentVec::plane(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                ),
            };
            if u.coords.norm() < 1e-6 {
                continue;
            }
            let g = m.fundamental_tensor(&x, &u).unwrap();
            let dim = g.nrows();
            for i in 0..dim {
                for j in 0..dim {
                    assert!((g[(i, j)] - g[(j, i)]).abs() < 1e-12);
                }
            }
            let eig = g.symmetric_eigen();
            assert!(
                eig.eigenvalues.iter().all(|&l| l > 0.0),
                "non-positive eigenvalue for {m:?} at u={:?}",
                u.coords
            );
            checked += 1;
        }
    }

    #[test]
    fn torus_distance_minimizes_over_wraps() {
        let m = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.3, 0.4);
        assert_relative_eq!(m.asym_distance(&p, &q).unwrap(), 0.5, epsilon = 1e-14);
        assert_eq!(m.asym_distance(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn randers_distance_is_asymmetric() {
        // Forward, the wrapped segment (-0.6, 0) costs 0.6 - 0.3 = 0.3 and
        // beats the direct 0.4 + 0.2 = 0.6; backward the direct segment wins.
        let m = torus(0.5, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let q = ChartPoint::plane(0.4, 0.0);
        let forward = m.asym_distance(&p, &q).unwrap();
        let backward = m.asym_distance(&q, &p).unwrap();
        assert_relative_eq!(forward, 0.3, epsilon = 1e-14);
        assert_relative_eq!(backward, 0.2, epsilon = 1e-14);
        assert!(forward != backward);
    }

    #[test]
    fn triangle_inequality_holds_on_random_triples() {
        let mut rng = StdRng::seed_from_u64(3);
        let m = torus(0.3, 0.1);
        for _ in 0..200 {
            let p = ChartPoint::plane(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let q = ChartPoint::plane(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let r = ChartPoint::plane(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let pr = m.asym_distance(&p, &r).unwrap();
            let pq = m.asym_distance(&p, &q).unwrap();
            let qr = m.asym_distance(&q, &r).unwrap();
            assert!(pr <= pq + qr + 1e-12);
        }
    }

    #[test]
    fn oracle_lists_flat_line() {
        let m = torus(0.0, 0.0);
        let p = ChartPoint::plane(0.0, 0.0);
        let set = m
            .oracle_geodesics(&p, &p, &HomotopyClass::new(vec![1, 0]), 5.0)
            .unwrap();
        assert_eq!(set.geodesics.len(), 1);
        let g = &set.geodesics[0];
        assert_relative_eq!(g.length, 1.0, epsilon = 1e-14);
        assert_eq!(g.index, 0);
    }

    #[test]
    fn oracle_enumerates_product_arcs() {
        let m = product(1.0);
        let p = ChartPoint::product(0.0, Vector3::z());
        let q = ChartPoint::product(0.0, Vector3::x()); // gap pi/2
        let class = HomotopyClass::new(vec![0]);
        let set = m.oracle_geodesics(&p, &q, &class, 8.0).unwrap();
        let arcs: Vec<f64> = set.geodesics.iter().map(|g| g.length).collect();
        let idx: Vec<usize> = set.geodesics.iter().map(|g| g.index).collect();
        assert_eq!(arcs.len(), 3);
        assert_relative_eq!(arcs[0], std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(arcs[1], 3.0 * std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(arcs[2], 5.0 * std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(idx, vec![0, 1, 2]);
        // 5pi/2 is above 7, so a cutoff at 7 keeps only two arcs.
        let set7 = m.oracle_geodesics(&p, &q, &class, 7.0).unwrap();
        assert_eq!(set7.geodesics.len(), 2);
    }

    #[test]
    fn oracle_excludes_degenerate_arcs() {
        let m = product(1.0);
        let p = ChartPoint::product(0.0, Vector3::z());
        let q = ChartPoint::product(0.0, -Vector3::z()); // antipodal: all arcs degenerate
        let set = m
            .oracle_geodesics(&p, &q, &HomotopyClass::new(vec![0]), 10.0)
            .unwrap();
        assert!(set.geodesics.is_empty());
        assert!(set.degenerate_excluded >= 2);
    }

    #[test]
    fn cylinder_oracle_fiber_circle() {
        let m = M::flat_cylinder(1.0).unwrap();
        let p = ChartPoint::plane(0.25, 0.0);
        let set = m
            .oracle_geodesics(&p, &p, &HomotopyClass::new(vec![2]), 10.0)
            .unwrap();
        assert_eq!(set.geodesics.len(), 1);
        assert_relative_eq!(set.geodesics[0].length, 2.0, epsilon = 1e-14);
        // The doubled fiber circle covers the circle exactly: both parameter
        // halves project onto the same image.
        let g = &set.geodesics[0];
        let a = m.project(&g.node_at(0.2));
        let b = m.project(&g.node_at(0.7));
        assert!((a.coords - b.coords).norm() < 1e-12);
    }

    #[test]
    fn distance_agrees_with_oracle_minimum() {
        let m = torus(0.3, 0.1);
        let p = ChartPoint::plane(0.12, 0.77);
        let q = ChartPoint::plane(0.9, 0.31);
        let d = m.asym_distance(&p, &q).unwrap();
        let mut best = f64::INFINITY;
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                let set = m
                    .oracle_geodesics(&p, &q, &HomotopyClass::new(vec![a, b]), 50.0)
                    .unwrap();
                if let Some(l) = set.min_length() {
                    best = best.min(l);
                }
            }
        }
        assert!((d - best).abs() < 1e-10);

        let mp = product(1.7);
        let pp = ChartPoint::product(0.3, Vector3::z());
        let qp = ChartPoint::product(1.1, sphere_pt(1.2, 0.4));
        let d = mp.asym_distance(&pp, &qp).unwrap();
        let mut best = f64::INFINITY;
        for mcl in -3i64..=3 {
            let set = mp
                .oracle_geodesics(&pp, &qp, &HomotopyClass::new(vec![mcl]), 50.0)
                .unwrap();
            if let Some(l) = set.min_length() {
                best = best.min(l);
            }
        }
        assert!((d - best).abs() < 1e-10);
    }

    #[test]
    fn reversal_defect_is_twice_drift_dot_displacement() {
        let m = torus(0.3, 0.1);
        let drift = Vector2::new(0.3, 0.1);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..50 {
            let a = Vector4::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0, 0.0);
            let b = Vector4::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0, 0.0);
            let fwd = m.seg_len(&a, &b);
            let bwd = m.seg_len(&b, &a);
            let disp = Vector2::new(b[0] - a[0], b[1] - a[1]);
            assert_relative_eq!(fwd - bwd, 2.0 * drift.dot(&disp), epsilon = 1e-12);
        }
    }

    #[test]
    fn class_arithmetic_round_trips_through_deck_vectors() {
        let m = torus(0.2, 0.0);
        let p = ChartPoint::plane(0.4, 0.6);
        let q = ChartPoint::plane(0.1, 0.2);
        let t0 = m.canonical_target(&p, &q).unwrap();
        let class = HomotopyClass::new(vec![3, -2]);
        let shifted = t0 + m.deck_vector(&class).unwrap();
        let read = m.class_between(&t0, &shifted).unwrap();
        assert_eq!(read, class);
    }
}
