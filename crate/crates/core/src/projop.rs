//! Euclidean projections onto the elementary sets and their intersections.
//!
//! Ball, subspace and Lorentz-cone projections are closed form. The preimage
//! of a cone under an affine map, `{x : ||Bx + b|| <= c^T x + d}`, has no
//! closed-form projection; `min ||x - z||^2 / 2` over it is solved as a small
//! cone program by a primal-dual interior-point method. The same solver
//! handles a whole descriptor family at once.
//! Dykstra's method with correction terms is the generic route for
//! intersections.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::transform::ConvexSetDescriptor;

/// Which algorithm computes the projection onto an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    /// One interior-point solve over the whole family.
    #[default]
    InteriorPoint,
    /// Dykstra's alternating method over the individual sets.
    Dykstra,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    pub engine: Engine,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            inner_tol: 1e-8,
            max_inner_iters: 20_000,
            engine: Engine::default(),
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol > 0.0) || self.max_inner_iters == 0 {
            return Err(Error::InvalidInput(
                "inner_tol must be > 0 and max_inner_iters >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub point: DVector<f64>,
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ProjectionResult {
    fn new(z: &DVector<f64>, point: DVector<f64>, converged: bool, iterations: usize) -> Self {
        let distance = (z - &point).norm();
        ProjectionResult {
            point,
            distance,
            converged,
            iterations,
        }
    }
}

/// Projection of `(u, t)` onto `{(u, t) : ||u|| <= t}`.
pub fn project_soc(u: &[f64], t: f64) -> (Vec<f64>, f64) {
    let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nu <= t {
        (u.to_vec(), t)
    } else if nu <= -t {
        (vec![0.0; u.len()], 0.0)
    } else {
        let a = 0.5 * (t + nu);
        (u.iter().map(|v| a * v / nu).collect(), a)
    }
}

fn project_ball_in_place(v: &mut [f64], r: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > r {
        let s = if n > 0.0 { r / n } else { 0.0 };
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Projection onto the centered ball of radius `r`.
pub fn project_ball(z: &DVector<f64>, r: f64) -> DVector<f64> {
    let mut out = z.clone();
    project_ball_in_place(out.as_mut_slice(), r);
    out
}

/// Orthogonal projector onto `{x : E x = 0}` with a cached factorization of `E E^T`.
#[derive(Debug, Clone)]
pub struct AffineProjector {
    e: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl AffineProjector {
    pub fn new(e: &DMatrix<f64>) -> Result<Self> {
        let rank = crate::transform::numeric_rank(e);
        if rank < e.nrows() {
            return Err(Error::RankDeficient { rows: e.nrows(), rank });
        }
        let gram = e * e.transpose();
        let chol = Cholesky::new(gram).ok_or(Error::RankDeficient { rows: e.nrows(), rank })?;
        Ok(AffineProjector { e: e.clone(), chol })
    }

    pub fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        let lam = self.chol.solve(&(&self.e * z));
        z - self.e.tr_mul(&lam)
    }
}

/// `z - E^T (E E^T)^{-1} E z`.
pub fn project_affine(z: &DVector<f64>, e: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(AffineProjector::new(e)?.project(z))
}

/// Exact projection onto `{x : ||Bx + b|| <= c^T x + d}`.
pub fn project_soc_affine_composed(
    z: &DVector<f64>,
    desc: &ConvexSetDescriptor,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    if !matches!(desc, ConvexSetDescriptor::SocEpigraph { .. }) {
        return Err(Error::InvalidInput("expected a SOC epigraph descriptor".into()));
    }
    check_dim(z, std::slice::from_ref(desc))?;
    cfg.validate()?;
    if desc.violation(z) == 0.0 {
        return Ok(ProjectionResult::new(z, z.clone(), true, 0));
    }
    Ok(ConicProjector::new(std::slice::from_ref(desc))?.project(z, cfg))
}

fn check_dim(z: &DVector<f64>, sets: &[ConvexSetDescriptor]) -> Result<()> {
    if let Some(d) = sets.iter().find(|d| d.dim() != z.len()) {
        return Err(Error::Dimension(format!(
            "point has dimension {}, set has {}",
            z.len(),
            d.dim()
        )));
    }
    Ok(())
}

/// Nearest point of the intersection of `sets`, by Dykstra's method.
///
/// With an empty intersection the iterates never settle inside every set;
/// the result then carries `converged = false`.
pub fn project_intersection(
    z: &DVector<f64>,
    sets: &[ConvexSetDescriptor],
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    if sets.is_empty() {
        return Err(Error::InvalidInput("empty set list".into()));
    }
    check_dim(z, sets)?;
    cfg.validate()?;
    DykstraProjector::new(sets)?.project(z, cfg)
}

enum Elementary {
    Soc(ConicProjector, ConvexSetDescriptor),
    Ball(Vec<usize>, f64),
    Affine(AffineProjector),
}

impl Elementary {
    fn project(&self, v: &DVector<f64>, cfg: &ProjectionConfig) -> DVector<f64> {
        match self {
            Elementary::Soc(p, d) => {
                if d.violation(v) == 0.0 {
                    v.clone()
                } else {
                    p.project(v, cfg).point
                }
            }
            Elementary::Ball(idx, r) => {
                let n2: f64 = idx.iter().map(|&i| v[i] * v[i]).sum();
                let n = n2.sqrt();
                let mut out = v.clone();
                if n > *r {
                    let s = if n > 0.0 { r / n } else { 0.0 };
                    idx.iter().for_each(|&i| out[i] *= s);
                }
                out
            }
            Elementary::Affine(p) => p.project(v),
        }
    }
}

/// Dykstra's method over a fixed list of sets.
pub struct DykstraProjector {
    sets: Vec<Elementary>,
    descriptors: Vec<ConvexSetDescriptor>,
}

impl DykstraProjector {
    pub fn new(sets: &[ConvexSetDescriptor]) -> Result<Self> {
        let compiled = sets
            .iter()
            .map(|d| {
                Ok(match d {
                    ConvexSetDescriptor::SocEpigraph { .. } => {
                        Elementary::Soc(ConicProjector::new(std::slice::from_ref(d))?, d.clone())
                    }
                    ConvexSetDescriptor::Ball { indices, radius, .. } => Elementary::Ball(indices.clone(), *radius),
                    ConvexSetDescriptor::Affine { e } => Elementary::Affine(AffineProjector::new(e)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DykstraProjector {
            sets: compiled,
            descriptors: sets.to_vec(),
        })
    }

    pub fn project(&self, z: &DVector<f64>, cfg: &ProjectionConfig) -> Result<ProjectionResult> {
        check_dim(z, &self.descriptors)?;
        let tol = cfg.inner_tol;
        // solves of single sets must be well below the outer tolerance
        let inner = ProjectionConfig {
            inner_tol: (1e-3 * tol).max(1e-14),
            ..*cfg
        };
        let mut x = z.clone();
        let mut corr = vec![DVector::<f64>::zeros(z.len()); self.sets.len()];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_inner_iters {
            iterations += 1;
            let start = x.clone();
            let mut corr_change = 0.0f64;
            for (set, p) in self.sets.iter().zip(corr.iter_mut()) {
                let shifted = &x + &*p;
                let y = set.project(&shifted, &inner);
                let new_p = shifted - &y;
                corr_change += (&new_p - &*p).norm_squared();
                *p = new_p;
                x = y;
            }
            let moved = (&x - &start).norm();
            if moved < tol && corr_change.sqrt() < tol {
                let worst = self.descriptors.iter().map(|d| d.violation(&x)).fold(0.0, f64::max);
                if worst <= 10.0 * tol {
                    converged = true;
                    break;
                }
            }
        }
        Ok(ProjectionResult::new(z, x, converged, iterations))
    }
}

/// Interior-point projector onto the intersection of a descriptor family.
///
/// Subspace descriptors are eliminated through an orthonormal basis `N` of
/// their common null space, so with `x = N y` the problem becomes
/// `min ||y - N^T z||^2 / 2` subject to `G y + s = h`, `s` in a product of
/// Lorentz cones (one per SOC preimage and one per ball). That cone program
/// is solved by a primal-dual method with Nesterov-Todd scaling and a
/// Mehrotra predictor-corrector step.
#[derive(Debug, Clone)]
pub struct ConicProjector {
    dim: usize,
    basis: DMatrix<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    blocks: Vec<std::ops::Range<usize>>,
    descriptors: Vec<ConvexSetDescriptor>,
}

/// Iteration cap of one interior-point solve.
const IPM_MAX_ITERS: usize = 100;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 2;

impl ConicProjector {
    pub fn new(sets: &[ConvexSetDescriptor]) -> Result<Self> {
        let dim = match sets.first() {
            Some(d) => d.dim(),
            None => return Err(Error::InvalidInput("empty set list".into())),
        };
        if sets.iter().any(|d| d.dim() != dim) {
            return Err(Error::Dimension("descriptors of differing dimension".into()));
        }
        // rows of s = h - G x, each block ordered (t, u) with ||u|| <= t
        let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
        let mut blocks = Vec::new();
        let mut eq_rows: Vec<Vec<f64>> = Vec::new();
        for d in sets {
            let start = rows.len();
            match d {
                ConvexSetDescriptor::SocEpigraph { b_mat, b_vec, c, d } => {
                    let mut block = recondition_soc(b_mat, b_vec, c, *d);
                    let sc = block_scale(&block);
                    let axis = block.pop().expect("axis row");
                    // identically zero rows would pin the block to the cone apex
                    block.retain(|(coef, off)| *off != 0.0 || coef.iter().any(|v| *v != 0.0));
                    for (coef, off) in std::iter::once(axis).chain(block) {
                        rows.push((coef.iter().map(|v| -v * sc).collect(), off * sc));
                    }
                }
                ConvexSetDescriptor::Ball { indices, radius, .. } => {
                    rows.push((vec![0.0; dim], *radius));
                    for &ix in indices {
                        let mut r = vec![0.0; dim];
                        r[ix] = -1.0;
                        rows.push((r, 0.0));
                    }
                }
                ConvexSetDescriptor::Affine { e } => {
                    let rank = crate::transform::numeric_rank(e);
                    if rank < e.nrows() {
                        return Err(Error::RankDeficient { rows: e.nrows(), rank });
                    }
                    eq_rows.extend((0..e.nrows()).map(|r| e.row(r).iter().cloned().collect::<Vec<_>>()));
                }
            }
            if rows.len() > start {
                blocks.push(start..rows.len());
            }
        }
        let basis = null_space_basis(&eq_rows, dim)?;
        let g_full = DMatrix::from_fn(rows.len(), dim, |r, c| rows[r].0[c]);
        let g = &g_full * &basis;
        let h = DVector::from_fn(rows.len(), |r, _| rows[r].1);
        Ok(ConicProjector {
            dim,
            basis,
            g,
            h,
            blocks,
            descriptors: sets.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn project(&self, z: &DVector<f64>, cfg: &ProjectionConfig) -> ProjectionResult {
        if self.descriptors.iter().all(|d| d.violation(z) == 0.0) {
            return ProjectionResult::new(z, z.clone(), true, 0);
        }
        let y0 = self.basis.tr_mul(z);
        let on_plane = &self.basis * &y0;
        let slack = 1e-12 * (1.0 + z.norm());
        if self.blocks.is_empty() || self.descriptors.iter().all(|d| d.violation(&on_plane) <= slack) {
            return ProjectionResult::new(z, on_plane, true, 0);
        }
        let (y, converged, iterations) = self.solve(&y0, cfg);
        ProjectionResult::new(z, &self.basis * y, converged, iterations)
    }

    fn solve(&self, y0: &DVector<f64>, cfg: &ProjectionConfig) -> (DVector<f64>, bool, usize) {
        let g = &self.g;
        let h = &self.h;
        let n = g.ncols();
        let nu = self.blocks.len() as f64;
        let tol = cfg.inner_tol;
        let res_scale_x = 1.0 + y0.norm();
        let res_scale_z = 1.0 + h.norm();

        let mut hess = g.tr_mul(g);
        for i in 0..n {
            hess[(i, i)] += 1.0;
        }
        let mut y = match Cholesky::new(hess) {
            Some(c) => c.solve(&(y0 + g.tr_mul(h))),
            None => return (y0.clone(), false, 0),
        };
        let mut s = h - g * &y;
        let mut zd = -&s;
        self.shift_into_cone(&mut s);
        self.shift_into_cone(&mut zd);

        let max_iters = cfg.max_inner_iters.min(IPM_MAX_ITERS);
        let mut best = (f64::INFINITY, y.clone());
        for it in 1..=max_iters {
            let r_x = &y - y0 + g.tr_mul(&zd);
            let r_z = g * &y + &s - h;
            let gap = s.dot(&zd);
            let res = (r_x.norm() / res_scale_x).max(r_z.norm() / res_scale_z);
            if !(res.is_finite() && gap.is_finite()) {
                break;
            }
            let merit = res.max(gap.max(0.0));
            if merit < best.0 {
                best = (merit, y.clone());
            } else if best.0 <= tol && merit > 10.0 * best.0 {
                // rounding has taken over
                return (best.1, true, it - 1);
            }
            if res <= 1e-2 * tol && gap <= tol * tol {
                return (y, true, it - 1);
            }
            let mu = gap / nu;

            let scaling = match self.nt_scaling(&s, &zd) {
                Some(w) => w,
                None => break,
            };
            let lambda = scaling.apply(&zd, false);
            let g_hat = scaling.apply_mat_inv(g);
            let mut hess = g_hat.tr_mul(&g_hat);
            for i in 0..n {
                hess[(i, i)] += 1.0;
            }
            let chol = match Cholesky::new(hess) {
                Some(c) => c,
                None => break,
            };
            let solve_scaled = |bx: &DVector<f64>, bz: &DVector<f64>, u: &DVector<f64>| {
                let bz_hat = scaling.apply(bz, true);
                let dy = chol.solve(&(bx - g_hat.tr_mul(&(u - &bz_hat))));
                let dz_s = &g_hat * &dy + u - &bz_hat;
                let ds_s = u - &dz_s;
                (dy, dz_s, ds_s)
            };
            // W dz + W^-1 ds = u holds by construction; refine the other two rows
            let newton = |u: &DVector<f64>| {
                let bx = -&r_x;
                let bz = -&r_z;
                let (mut dy, mut dz_s, mut ds_s) = solve_scaled(&bx, &bz, u);
                for _ in 0..REFINE_STEPS {
                    let dz = scaling.apply(&dz_s, true);
                    let ds = scaling.apply(&ds_s, false);
                    let ex = &bx - &dy - g.tr_mul(&dz);
                    let ez = &bz - g * &dy - ds;
                    let (cy, cz, cs) = solve_scaled(&ex, &ez, &DVector::zeros(u.len()));
                    dy += cy;
                    dz_s += cz;
                    ds_s += cs;
                }
                (dy, dz_s, ds_s)
            };

            // predictor
            let (_, dz_a, ds_a) = newton(&(-&lambda));
            let alpha_a = self
                .max_step(&lambda, &ds_a)
                .min(self.max_step(&lambda, &dz_a))
                .min(1.0);
            let sigma = (1.0 - alpha_a).powi(3);

            // corrector
            let mut r_s = -self.jordan(&lambda, &lambda) - self.jordan(&ds_a, &dz_a);
            for b in &self.blocks {
                r_s[b.start] += sigma * mu;
            }
            let u = self.jordan_solve(&lambda, &r_s);
            let (dy, dz_s, ds_s) = newton(&u);
            let step = self.max_step(&lambda, &ds_s).min(self.max_step(&lambda, &dz_s));
            let alpha = (STEP_FRACTION * step).min(1.0);
            if !(alpha > 0.0) {
                break;
            }
            y += &dy * alpha;
            s += scaling.apply(&ds_s, false) * alpha;
            zd += scaling.apply(&dz_s, true) * alpha;
        }
        let ok = best.0 <= tol;
        (best.1, ok, max_iters)
    }

    fn shift_into_cone(&self, v: &mut DVector<f64>) {
        let worst = self
            .blocks
            .iter()
            .map(|b| {
                let seg = &v.as_slice()[b.clone()];
                seg[1..].iter().map(|x| x * x).sum::<f64>().sqrt() - seg[0]
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if worst >= 0.0 {
            for b in &self.blocks {
                v[b.start] += 1.0 + worst;
            }
        }
    }

    fn nt_scaling(&self, s: &DVector<f64>, zd: &DVector<f64>) -> Option<NtScaling> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let sb = &s.as_slice()[b.clone()];
            let zb = &zd.as_slice()[b.clone()];
            let sn = j_norm(sb)?;
            let zn = j_norm(zb)?;
            let sbar: Vec<f64> = sb.iter().map(|v| v / sn).collect();
            let zbar: Vec<f64> = zb.iter().map(|v| v / zn).collect();
            let dot: f64 = sbar.iter().zip(&zbar).map(|(a, b)| a * b).sum();
            let gamma = ((1.0 + dot) / 2.0).sqrt();
            let w: Vec<f64> = (0..sb.len())
                .map(|k| if k == 0 { sbar[0] + zbar[0] } else { sbar[k] - zbar[k] } / (2.0 * gamma))
                .collect();
            blocks.push(NtBlock {
                range: b.clone(),
                eta: (sn / zn).sqrt(),
                w,
            });
        }
        Some(NtScaling { blocks })
    }

    fn jordan(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(a.len());
        for r in &self.blocks {
            let (a0, b0) = (a[r.start], b[r.start]);
            out[r.start] = (r.start..r.end).map(|k| a[k] * b[k]).sum();
            for k in r.start + 1..r.end {
                out[k] = a0 * b[k] + b0 * a[k];
            }
        }
        out
    }

    /// Solves `l o x = v` blockwise.
    fn jordan_solve(&self, l: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(l.len());
        for r in &self.blocks {
            let l0 = l[r.start];
            let det = l0 * l0 - (r.start + 1..r.end).map(|k| l[k] * l[k]).sum::<f64>();
            let x0 = (l0 * v[r.start] - (r.start + 1..r.end).map(|k| l[k] * v[k]).sum::<f64>()) / det;
            out[r.start] = x0;
            for k in r.start + 1..r.end {
                out[k] = (v[k] - x0 * l[k]) / l0;
            }
        }
        out
    }

    /// Largest `a` with `x + a d` in the cone product, `x` interior.
    fn max_step(&self, x: &DVector<f64>, d: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|r| cone_step(&x.as_slice()[r.clone()], &d.as_slice()[r.clone()]))
            .fold(f64::INFINITY, f64::min)
    }
}

fn j_norm(v: &[f64]) -> Option<f64> {
    let t = v[0];
    let u = v[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
    let q = (t - u) * (t + u);
    if t > 0.0 && q > 0.0 {
        Some(q.sqrt())
    } else {
        None
    }
}

fn cone_step(x: &[f64], d: &[f64]) -> f64 {
    // (x0 + a d0)^2 - ||x1 + a d1||^2 = qa a^2 + qb a + qc
    let qa = d[0] * d[0] - d[1..].iter().map(|v| v * v).sum::<f64>();
    let qb = 2.0 * (x[0] * d[0] - x[1..].iter().zip(&d[1..]).map(|(a, b)| a * b).sum::<f64>());
    let xu = x[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
    let qc = (x[0] - xu) * (x[0] + xu);
    let mut best = f64::INFINITY;
    if qa.abs() <= 1e-300 {
        if qb < 0.0 {
            best = -qc / qb;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            for root in [q / qa, if q != 0.0 { qc / q } else { f64::INFINITY }] {
                if root > 0.0 {
                    best = best.min(root);
                }
            }
        }
    }
    if d[0] < 0.0 {
        best = best.min(-x[0] / d[0]);
    }
    best
}

struct NtBlock {
    range: std::ops::Range<usize>,
    eta: f64,
    w: Vec<f64>,
}

/// Block-diagonal Nesterov-Todd scaling `W` with `W z = W^{-1} s`.
struct NtScaling {
    blocks: Vec<NtBlock>,
}

impl NtBlock {
    /// `W v` or `W^{-1} v` on one block.
    fn apply(&self, v: &[f64], out: &mut [f64], inverse: bool) {
        let w0 = self.w[0];
        let w1 = &self.w[1..];
        let sgn = if inverse { -1.0 } else { 1.0 };
        let scale = if inverse { 1.0 / self.eta } else { self.eta };
        let w1v: f64 = w1.iter().zip(&v[1..]).map(|(a, b)| a * b).sum();
        out[0] = scale * (w0 * v[0] + sgn * w1v);
        let coef = sgn * v[0] + w1v / (1.0 + w0);
        for k in 1..v.len() {
            out[k] = scale * (v[k] + coef * w1[k - 1]);
        }
    }
}

impl NtScaling {
    fn apply(&self, v: &DVector<f64>, inverse: bool) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for b in &self.blocks {
            b.apply(
                &v.as_slice()[b.range.clone()],
                &mut out.as_mut_slice()[b.range.clone()],
                inverse,
            );
        }
        out
    }

    fn apply_mat_inv(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            let col: DVector<f64> = m.column(c).into_owned();
            out.set_column(c, &self.apply(&col, true));
        }
        out
    }
}

/// Orthonormal basis of `{x : E x = 0}` for the stacked rows of `E`.
fn null_space_basis(eq_rows: &[Vec<f64>], dim: usize) -> Result<DMatrix<f64>> {
    if eq_rows.is_empty() {
        return Ok(DMatrix::identity(dim, dim));
    }
    let e = DMatrix::from_fn(eq_rows.len(), dim, |r, c| eq_rows[r][c]);
    let rank = crate::transform::numeric_rank(&e);
    if rank < e.nrows() {
        return Err(Error::RankDeficient { rows: e.nrows(), rank });
    }
    let p = AffineProjector::new(&e)?;
    let proj = DMatrix::from_fn(dim, dim, |r, c| {
        let mut unit = DVector::zeros(dim);
        unit[c] = 1.0;
        p.project(&unit)[r]
    });
    let eig = nalgebra::SymmetricEigen::new(proj);
    let keep: Vec<usize> = (0..dim).filter(|&k| eig.eigenvalues[k] > 0.5).collect();
    Ok(DMatrix::from_fn(dim, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]))
}

/// Rows `[B | b]` and axis `[c | d]` of an equivalent, better conditioned cone.
///
/// When `[c | d] = [B | b]^T g` for some `g` with `||g|| > 1`, the component of
/// `Bx + b` along `g` is `t / ||g||` with `t = c^T x + d`, so
/// `||Bx + b|| <= t` is the same set as `||P (Bx + b)|| <= sqrt(1 - 1/||g||^2) t`
/// with `P` the projector orthogonal to `g`. Removing the component that
/// nearly cancels against the axis keeps the splitting iteration well scaled.
fn recondition_soc(b_mat: &DMatrix<f64>, b_vec: &DVector<f64>, c: &DVector<f64>, d: f64) -> Vec<(Vec<f64>, f64)> {
    let m = b_mat.nrows();
    let n = b_mat.ncols();
    let raw = || -> Vec<(Vec<f64>, f64)> {
        let mut rows: Vec<(Vec<f64>, f64)> = (0..m)
            .map(|r| (b_mat.row(r).iter().cloned().collect(), b_vec[r]))
            .collect();
        rows.push((c.iter().cloned().collect(), d));
        rows
    };
    if m == 0 {
        return raw();
    }
    // R^T g = a with R = [B | b]
    let mut rt = DMatrix::<f64>::zeros(n + 1, m);
    for r in 0..m {
        for col in 0..n {
            rt[(col, r)] = b_mat[(r, col)];
        }
        rt[(n, r)] = b_vec[r];
    }
    let mut a = DVector::<f64>::zeros(n + 1);
    a.rows_mut(0, n).copy_from(c);
    a[n] = d;
    let svd = rt.clone().svd(true, true);
    let g = match svd.solve(&a, 1e-12 * a.norm().max(1.0)) {
        Ok(g) => g,
        Err(_) => return raw(),
    };
    let resid = (&rt * &g - &a).norm();
    let gn = g.norm();
    if !(resid <= 1e-10 * a.norm().max(1e-300) && gn > 1.0 + 1e-9) {
        return raw();
    }
    let gh = &g / gn;
    let scale = (1.0 - 1.0 / (gn * gn)).sqrt();
    // P R = R - gh (gh^T R)
    let ghr = &rt * &gh;
    let mut rows = Vec::with_capacity(m + 1);
    for r in 0..m {
        let row: Vec<f64> = (0..=n).map(|col| rt[(col, r)] - gh[r] * ghr[col]).collect();
        let (coef, off) = row.split_at(n);
        rows.push((coef.to_vec(), off[0]));
    }
    rows.push(((0..n).map(|col| c[col] * scale).collect(), d * scale));
    rows
}

fn block_scale(block: &[(Vec<f64>, f64)]) -> f64 {
    let max_row = block
        .iter()
        .map(|(r, _)| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if max_row > 0.0 {
        1.0 / max_row
    } else {
        1.0
    }
}

/// Projector onto one cell family, built once and reused every round.
pub struct FamilyProjector {
    inner: FamilyEngine,
    cfg: ProjectionConfig,
}

enum FamilyEngine {
    /// The splitting projector is the fallback for degenerate solves.
    InteriorPoint(ConicProjector, DykstraProjector),
    Dykstra(DykstraProjector),
}

impl FamilyProjector {
    pub fn new(sets: &[ConvexSetDescriptor], cfg: ProjectionConfig) -> Result<Self> {
        cfg.validate()?;
        let inner = match cfg.engine {
            Engine::InteriorPoint => {
                FamilyEngine::InteriorPoint(ConicProjector::new(sets)?, DykstraProjector::new(sets)?)
            }
            Engine::Dykstra => FamilyEngine::Dykstra(DykstraProjector::new(sets)?),
        };
        Ok(FamilyProjector { inner, cfg })
    }

    pub fn project(&self, z: &DVector<f64>) -> ProjectionResult {
        match &self.inner {
            FamilyEngine::InteriorPoint(p, fallback) => {
                let r = p.project(z, &self.cfg);
                if r.converged {
                    return r;
                }
                match fallback.project(z, &self.cfg) {
                    Ok(f) if f.converged => ProjectionResult {
                        iterations: r.iterations + f.iterations,
                        ..f
                    },
                    _ => r,
                }
            }
            FamilyEngine::Dykstra(p) => p.project(z, &self.cfg).expect("dimension checked at construction"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn soc_cases() {
        assert_eq!(project_soc(&[3.0, 4.0], 6.0), (vec![3.0, 4.0], 6.0));
        assert_eq!(project_soc(&[3.0, 4.0], -6.0), (vec![0.0, 0.0], 0.0));
        let (u, t) = project_soc(&[3.0, 4.0], 0.0);
        assert!((u[0] - 1.5).abs() < 1e-15 && (u[1] - 2.0).abs() < 1e-15 && (t - 2.5).abs() < 1e-15);
    }

    #[test]
    fn soc_matches_boundary_scan() {
        // brute force over the cone boundary {(r cos a, r sin a, r)}
        let z = [3.0, 4.0, 0.0];
        let mut best = (f64::INFINITY, [0.0; 3]);
        for ia in 0..720 {
            let a = ia as f64 * std::f64::consts::PI / 360.0;
            for ir in 0..=4000 {
                let r = ir as f64 * 1e-3;
                let p = [r * a.cos(), r * a.sin(), r];
                let d = (0..3).map(|k| (p[k] - z[k]).powi(2)).sum::<f64>();
                if d < best.0 {
                    best = (d, p);
                }
            }
        }
        let (u, t) = project_soc(&z[..2], z[2]);
        assert!((u[0] - best.1[0]).abs() < 1e-2 && (u[1] - best.1[1]).abs() < 1e-2 && (t - best.1[2]).abs() < 1e-2);
    }

    #[test]
    fn ball_cases() {
        assert_eq!(project_ball(&v(&[3.0, 4.0]), 10.0), v(&[3.0, 4.0]));
        assert!(close(&project_ball(&v(&[3.0, 4.0]), 1.0), &v(&[0.6, 0.8]), 1e-15));
        assert_eq!(project_ball(&v(&[0.0, 0.0]), 0.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn affine_cases() {
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert!(close(
            &project_affine(&v(&[2.0, 3.0]), &e).unwrap(),
            &v(&[0.0, 3.0]),
            1e-15
        ));
        assert!(close(
            &project_affine(&v(&[0.0, 3.0]), &e).unwrap(),
            &v(&[0.0, 3.0]),
            1e-15
        ));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let e = DMatrix::from_row_slice(1, 2, &[s, s]);
        assert!(close(
            &project_affine(&v(&[1.0, 0.0]), &e).unwrap(),
            &v(&[0.5, -0.5]),
            1e-15
        ));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        assert!(matches!(
            project_affine(&v(&[1.0, 0.0]), &bad),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn composed_soc_reductions() {
        let cfg = ProjectionConfig::default();
        // pure cone in disguise: ||x_1|| <= x_2
        let d = ConvexSetDescriptor::soc(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            v(&[0.0]),
            v(&[0.0, 1.0]),
            0.0,
        )
        .unwrap();
        let r = project_soc_affine_composed(&v(&[2.0, 0.5]), &d, &cfg).unwrap();
        let (u, t) = project_soc(&[2.0], 0.5);
        assert!(r.converged);
        assert!(close(&r.point, &v(&[u[0], t]), 1e-7));
        let inside = project_soc_affine_composed(&v(&[0.5, 2.0]), &d, &cfg).unwrap();
        assert_eq!(inside.distance, 0.0);
        assert!(
            project_soc_affine_composed(&v(&[0.5, 2.0]), &ConvexSetDescriptor::full_ball(2, 1.0).unwrap(), &cfg)
                .is_err()
        );
    }

    #[test]
    fn intersection_examples() {
        let cfg = ProjectionConfig {
            engine: Engine::Dykstra,
            ..Default::default()
        };
        let balls = [
            ConvexSetDescriptor::full_ball(2, 5.0).unwrap(),
            ConvexSetDescriptor::ball(2, vec![0], 4.0).unwrap(),
        ];
        let r = project_intersection(&v(&[1.0, 1.0]), &balls, &cfg).unwrap();
        assert_eq!(r.point, v(&[1.0, 1.0]));

        let ball_line = [
            ConvexSetDescriptor::full_ball(2, 1.0).unwrap(),
            ConvexSetDescriptor::affine(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap(),
        ];
        let r = project_intersection(&v(&[2.0, 1.0]), &ball_line, &cfg).unwrap();
        assert!(r.converged && close(&r.point, &v(&[0.0, 1.0]), 1e-7));

        let diag = [
            ConvexSetDescriptor::full_ball(2, 1.0).unwrap(),
            ConvexSetDescriptor::affine(DMatrix::from_row_slice(1, 2, &[1.0, -1.0])).unwrap(),
        ];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let r = project_intersection(&v(&[3.0, 4.0]), &diag, &cfg).unwrap();
        assert!(r.converged && close(&r.point, &v(&[s, s]), 1e-7));

        let split = ConicProjector::new(&diag).unwrap().project(&v(&[3.0, 4.0]), &cfg);
        assert!(split.converged && close(&split.point, &v(&[s, s]), 1e-7));
    }

    #[test]
    fn disjoint_intersection_does_not_converge() {
        let cfg = ProjectionConfig {
            max_inner_iters: 500,
            engine: Engine::Dykstra,
            ..Default::default()
        };
        let sets = [
            ConvexSetDescriptor::full_ball(2, 1.0).unwrap(),
            ConvexSetDescriptor::affine(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap(),
            ConvexSetDescriptor::soc(DMatrix::zeros(1, 2), v(&[2.0]), v(&[0.0, 0.0]), 0.0).unwrap(),
        ];
        let r = project_intersection(&v(&[0.3, 0.3]), &sets, &cfg).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn nonexpansive_and_idempotent_on_random_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for engine in [Engine::InteriorPoint, Engine::Dykstra] {
            let cfg = ProjectionConfig {
                engine,
                ..Default::default()
            };
            for _ in 0..20 {
                let b = DMatrix::from_fn(2, 3, |_, _| rng.random_range(-1.0..1.0));
                let sets = vec![
                    ConvexSetDescriptor::soc(b, v(&[0.2, -0.1]), v(&[0.3, 0.2, 2.0]), 0.5).unwrap(),
                    ConvexSetDescriptor::full_ball(3, 2.0).unwrap(),
                    ConvexSetDescriptor::affine(DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0])).unwrap(),
                ];
                let p = FamilyProjector::new(&sets, cfg).unwrap();
                let z1 = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
                let z2 = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
                let p1 = p.project(&z1);
                let p2 = p.project(&z2);
                assert!(p1.converged && p2.converged);
                assert!((&p1.point - &p2.point).norm() <= (&z1 - &z2).norm() + 10.0 * cfg.inner_tol);
                let again = p.project(&p1.point);
                assert!((&again.point - &p1.point).norm() < 10.0 * cfg.inner_tol);
                for s in &sets {
                    assert!(s.violation(&p1.point) <= 10.0 * cfg.inner_tol);
                }
            }
        }
    }

    #[test]
    fn engines_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let b = DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
            let sets = vec![
                ConvexSetDescriptor::soc(b, v(&[0.1, 0.0, 0.4]), v(&[0.0, 0.5, 1.0, 1.5]), 0.2).unwrap(),
                ConvexSetDescriptor::ball(4, vec![0, 1], 1.0).unwrap(),
                ConvexSetDescriptor::ball(4, vec![2, 3], 1.5).unwrap(),
            ];
            let z = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let a = FamilyProjector::new(
                &sets,
                ProjectionConfig {
                    engine: Engine::InteriorPoint,
                    ..Default::default()
                },
            )
            .unwrap()
            .project(&z);
            let d = FamilyProjector::new(
                &sets,
                ProjectionConfig {
                    engine: Engine::Dykstra,
                    ..Default::default()
                },
            )
            .unwrap()
            .project(&z);
            assert!(a.converged && d.converged);
            assert!((&a.point - &d.point).norm() < 1e-6, "{} vs {}", a.point, d.point);
        }
    }
}
