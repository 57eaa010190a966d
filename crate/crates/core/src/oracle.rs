//! Brute-force references for checking the algorithms.
//!
//! Nothing here calls into the projection or feasibility code: SINRs, set
//! membership and subspace bases are recomputed from the raw scenario and
//! descriptor data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::transform::ConvexSetDescriptor;

pub const DEFAULT_POWER_GRID: usize = 400;

fn k1_gains(s: &Scenario) -> Result<[[f64; 2]; 2]> {
    if s.cells() != 2 || s.antennas() != 1 {
        return Err(Error::InvalidInput(format!(
            "power-grid oracle needs M = 2, K = 1, got M = {}, K = {}",
            s.cells(),
            s.antennas()
        )));
    }
    let mut g = [[0.0; 2]; 2];
    for (j, row) in g.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            *v = s.channel(j, i)[0].norm_sqr();
        }
    }
    Ok(g)
}

fn linspace(hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| if n == 1 { hi } else { hi * k as f64 / (n - 1) as f64 })
}

/// Best value over the power grid of `min_i SINR_i / beta_i` and the power
/// pair attaining it. Cells with `beta_i = 0` are ignored; the value is
/// infinite (at zero power) when every target is zero.
pub fn grid_best_point_m2k1(s: &Scenario, betas: &[f64], grid_n: usize) -> Result<(f64, [f64; 2])> {
    let g = k1_gains(s)?;
    if betas.len() != 2 || betas.iter().any(|b| !(*b >= 0.0)) {
        return Err(Error::InvalidInput("need two targets >= 0".into()));
    }
    if betas.iter().all(|&b| b == 0.0) {
        return Ok((f64::INFINITY, [0.0, 0.0]));
    }
    let n = grid_n.max(1);
    let (p, sigma) = (s.powers(), s.noise_vars());
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for p1 in linspace(p[0], n) {
        for p2 in linspace(p[1], n) {
            let sinr1 = g[0][0] * p1 / (g[1][0] * p2 + sigma[0]);
            let sinr2 = g[1][1] * p2 / (g[0][1] * p1 + sigma[1]);
            let mut worst = f64::INFINITY;
            if betas[0] > 0.0 {
                worst = worst.min(sinr1 / betas[0]);
            }
            if betas[1] > 0.0 {
                worst = worst.min(sinr2 / betas[1]);
            }
            if worst > best.0 {
                best = (worst, [p1, p2]);
            }
        }
    }
    Ok(best)
}

pub fn grid_best_ratio_m2k1(s: &Scenario, betas: &[f64], grid_n: usize) -> Result<f64> {
    Ok(grid_best_point_m2k1(s, betas, grid_n)?.0)
}

/// Exhaustive `(p_1, p_2)` grid search for a power pair meeting every target.
///
/// With one antenna per base station a beamformer is a scalar whose phase
/// never changes any `|h_ji w_j|`, so powers alone decide feasibility.
pub fn grid_feasible_m2k1(s: &Scenario, betas: &[f64], grid_n: usize) -> Result<bool> {
    Ok(grid_best_ratio_m2k1(s, betas, grid_n)? >= 1.0)
}

/// Relative slack of the best grid point, `max min_i SINR_i / beta_i - 1`.
pub fn grid_margin_m2k1(s: &Scenario, betas: &[f64], grid_n: usize) -> Result<f64> {
    Ok(grid_best_ratio_m2k1(s, betas, grid_n)? - 1.0)
}

fn dot_h(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

fn unit(v: Vec<Complex64>) -> Vec<Complex64> {
    let n = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n > 1e-14 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        vec![Complex64::new(0.0, 0.0); v.len()]
    }
}

/// Non-dominated rate pairs (bits) of full-power MRT/ZF combinations.
///
/// Each base station uses `w_i ∝ l_i MRT_i + (1 - l_i) ZF_i` scaled to
/// `||w_i||^2 = P_i`, with `l_i` on a uniform grid of `grid_n` points in
/// `[0, 1]` (only `l = 1` when `grid_n = 1`). Pairs are returned sorted by
/// decreasing `R_1`.
pub fn mrt_zf_boundary_m2(s: &Scenario, grid_n: usize) -> Result<Vec<[f64; 2]>> {
    if s.cells() != 2 {
        return Err(Error::InvalidInput(format!(
            "MRT/ZF oracle needs M = 2, got {}",
            s.cells()
        )));
    }
    if s.antennas() < 2 {
        return Err(Error::InvalidInput("zero forcing needs K >= 2".into()));
    }
    if grid_n == 0 {
        return Err(Error::InvalidInput("lambda grid must have at least one point".into()));
    }
    let lambdas: Vec<f64> = linspace(1.0, grid_n).collect();
    // per BS: candidate beamformers over the lambda grid
    let candidates: Vec<Vec<Vec<Complex64>>> = (0..2)
        .map(|i| {
            let other = 1 - i;
            let own = s.channel(i, i);
            let cross = s.channel(i, other);
            let mrt = unit(own.to_vec());
            let cn = cross.iter().map(|x| x.norm_sqr()).sum::<f64>();
            let zf = if cn > 0.0 {
                let c = dot_h(cross, own) / cn;
                unit(own.iter().zip(cross).map(|(h, g)| h - g * c).collect())
            } else {
                mrt.clone()
            };
            let amp = s.powers()[i].sqrt();
            lambdas
                .iter()
                .map(|&l| {
                    let mix = unit(mrt.iter().zip(&zf).map(|(a, b)| a * l + b * (1.0 - l)).collect());
                    mix.into_iter().map(|x| x * amp).collect()
                })
                .collect()
        })
        .collect();
    // |h_ji^H w_j|^2 for every candidate of BS j, towards both receivers
    let gains: Vec<Vec<[f64; 2]>> = (0..2)
        .map(|j| {
            candidates[j]
                .iter()
                .map(|w| {
                    [
                        dot_h(s.channel(j, 0), w).norm_sqr(),
                        dot_h(s.channel(j, 1), w).norm_sqr(),
                    ]
                })
                .collect()
        })
        .collect();
    let sigma = s.noise_vars();
    let mut pairs = Vec::with_capacity(grid_n * grid_n);
    for g1 in &gains[0] {
        for g2 in &gains[1] {
            let r1 = (1.0 + g1[0] / (g2[0] + sigma[0])).log2();
            let r2 = (1.0 + g2[1] / (g1[1] + sigma[1])).log2();
            pairs.push([r1, r2]);
        }
    }
    Ok(non_dominated(pairs))
}

/// Keeps the pairs no other pair weakly dominates, sorted by decreasing first entry.
pub fn non_dominated(mut pairs: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pairs.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    let mut front: Vec<[f64; 2]> = Vec::new();
    for p in pairs {
        if front.last().is_none_or(|q| p[1] > q[1]) {
            front.push(p);
        }
    }
    front
}

/// Largest `t` with `t alpha` weakly dominated by a point of `front`.
pub fn ray_reach(front: &[[f64; 2]], alpha: &[f64]) -> f64 {
    front
        .iter()
        .map(|p| {
            (0..2)
                .filter(|&i| alpha[i] > 0.0)
                .map(|i| p[i] / alpha[i])
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

struct Member<'a> {
    sets: &'a [ConvexSetDescriptor],
    basis: Vec<Vec<f64>>,
    dim: usize,
}

impl Member<'_> {
    fn lift(&self, w: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (coef, q) in w.iter().zip(&self.basis) {
            for (xi, qi) in x.iter_mut().zip(q) {
                *xi += coef * qi;
            }
        }
        x
    }

    /// Smallest slack over the non-subspace sets; `>= 0` means member.
    /// Smallest slack and a supergradient of that set in reduced coordinates.
    fn worst_with_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        let x = self.lift(w);
        let n = x.len();
        let mut worst = (f64::INFINITY, vec![0.0; n]);
        for set in self.sets {
            let (s, g) = match set {
                ConvexSetDescriptor::SocEpigraph { b_mat, b_vec, c, d } => {
                    let v: Vec<f64> = (0..b_mat.nrows())
                        .map(|r| b_vec[r] + (0..n).map(|k| b_mat[(r, k)] * x[k]).sum::<f64>())
                        .collect();
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let s = d + (0..n).map(|k| c[k] * x[k]).sum::<f64>() - norm;
                    let mut g: Vec<f64> = c.iter().copied().collect();
                    if norm > 0.0 {
                        for (r, vr) in v.iter().enumerate() {
                            for (k, gk) in g.iter_mut().enumerate() {
                                *gk -= b_mat[(r, k)] * vr / norm;
                            }
                        }
                    }
                    (s, g)
                }
                ConvexSetDescriptor::Ball { indices, radius, .. } => {
                    let norm = indices.iter().map(|&ix| x[ix] * x[ix]).sum::<f64>().sqrt();
                    let mut g = vec![0.0; n];
                    if norm > 0.0 {
                        indices.iter().for_each(|&ix| g[ix] = -x[ix] / norm);
                    }
                    (radius - norm, g)
                }
                ConvexSetDescriptor::Affine { .. } => continue,
            };
            if s < worst.0 {
                worst = (s, g);
            }
        }
        let reduced = self
            .basis
            .iter()
            .map(|q| q.iter().zip(&worst.1).map(|(a, b)| a * b).sum())
            .collect();
        (worst.0, reduced)
    }

    fn slack(&self, w: &[f64]) -> f64 {
        let x = self.lift(w);
        let mut worst = f64::INFINITY;
        for set in self.sets {
            let s = match set {
                ConvexSetDescriptor::SocEpigraph { b_mat, b_vec, c, d } => {
                    let mut n2 = 0.0;
                    for r in 0..b_mat.nrows() {
                        let v: f64 = b_vec[r] + (0..x.len()).map(|k| b_mat[(r, k)] * x[k]).sum::<f64>();
                        n2 += v * v;
                    }
                    d + (0..x.len()).map(|k| c[k] * x[k]).sum::<f64>() - n2.sqrt()
                }
                ConvexSetDescriptor::Ball { indices, radius, .. } => {
                    radius - indices.iter().map(|&ix| x[ix] * x[ix]).sum::<f64>().sqrt()
                }
                ConvexSetDescriptor::Affine { .. } => continue,
            };
            worst = worst.min(s);
        }
        worst
    }
}

/// Orthonormal basis of the common null space of the subspace descriptors,
/// by Gram-Schmidt against their rows.
fn subspace_basis(sets: &[ConvexSetDescriptor], dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let push_orth = |v: Vec<f64>, into: &mut Vec<Vec<f64>>, against: &[Vec<f64>]| {
        let mut v = v;
        for _ in 0..2 {
            for q in against.iter().chain(into.iter()) {
                let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            into.push(v.into_iter().map(|a| a / n).collect());
        }
    };
    for set in sets {
        if let ConvexSetDescriptor::Affine { e } = set {
            for r in 0..e.nrows() {
                let row: Vec<f64> = (0..dim).map(|k| e[(r, k)]).collect();
                push_orth(row, &mut rows, &[]);
            }
        }
    }
    let mut basis = Vec::new();
    for k in 0..dim {
        let mut ek = vec![0.0; dim];
        ek[k] = 1.0;
        push_orth(ek, &mut basis, &rows);
    }
    basis
}

/// Brute-force search for the point of `∩ sets` nearest to `z`, dimension at most 4.
///
/// The intersection is restricted to the null space of its subspace
/// descriptors. A strictly interior point bounds the search to a ball
/// around `z`, which is then shrunk by membership cuts until the
/// remaining region is smaller than `resolution / 16`. `interior` may
/// supply that point; otherwise the point of largest slack on a coarse
/// grid is used.
pub fn projection_grid_check(
    z: &DVector<f64>,
    sets: &[ConvexSetDescriptor],
    interior: Option<&DVector<f64>>,
    resolution: f64,
) -> Result<DVector<f64>> {
    let n = z.len();
    if n > 4 {
        return Err(Error::InvalidInput(format!(
            "grid check supports dimension <= 4, got {n}"
        )));
    }
    if sets.is_empty() || sets.iter().any(|s| s.dim() != n) {
        return Err(Error::Dimension("descriptor dimensions differ from the point".into()));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidInput("resolution must be > 0".into()));
    }
    let basis = subspace_basis(sets, n);
    let d = basis.len();
    let member = Member { sets, basis, dim: n };
    let to_reduced = |x: &[f64]| -> Vec<f64> {
        member
            .basis
            .iter()
            .map(|q| q.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    };
    let zw = to_reduced(z.as_slice());
    if member.slack(&zw) >= 0.0 || d == 0 {
        if d == 0 && member.slack(&[]) < 0.0 {
            return Err(Error::InvalidInput("intersection is empty".into()));
        }
        return Ok(DVector::from_vec(member.lift(&zw)));
    }

    let c = match interior {
        Some(p) => {
            let cw = to_reduced(p.as_slice());
            if member.slack(&cw) <= 0.0 {
                return Err(Error::InvalidInput("supplied interior point is not interior".into()));
            }
            cw
        }
        None => find_interior(&member, d, &zw)?,
    };
    let gap: f64 = zw.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    // the nearest point lies in the ball around z through the interior point
    let radius = gap * (1.0 + 1e-9) + 1e-12;
    let best = if d == 1 {
        let (mut lo, mut hi) = (zw[0] - radius, zw[0] + radius);
        while hi - lo > resolution / 16.0 {
            let mid = 0.5 * (lo + hi);
            let g = match member.worst_with_grad(&[mid]) {
                (s, g) if s < 0.0 => -g[0],
                _ => mid - zw[0],
            };
            if g > 0.0 {
                hi = mid;
            } else if g < 0.0 {
                lo = mid;
            } else {
                lo = mid;
                hi = mid;
            }
        }
        vec![0.5 * (lo + hi)]
    } else {
        ellipsoid_minimize(&member, &zw, radius, resolution / 16.0)
    };
    Ok(DVector::from_vec(member.lift(&best)))
}

/// Central-cut ellipsoid method for the nearest member point to `zw`,
/// starting from the ball of the given radius around it. Cuts never remove
/// the minimizer, so once every semi-axis is below `tol` the centre is
/// within `tol` of it.
fn ellipsoid_minimize(member: &Member, zw: &[f64], radius: f64, tol: f64) -> Vec<f64> {
    let n = zw.len();
    let nf = n as f64;
    let mut x = DVector::from_column_slice(zw);
    let mut p = DMatrix::<f64>::identity(n, n) * (radius * radius);
    for _ in 0..100_000 {
        if p.trace() <= tol * tol {
            break;
        }
        let (s, g) = member.worst_with_grad(x.as_slice());
        let g = if s < 0.0 {
            -DVector::from_vec(g)
        } else {
            &x - DVector::from_column_slice(zw)
        };
        let pg = &p * &g;
        let gpg = g.dot(&pg);
        if !(gpg > 0.0) {
            break;
        }
        let pg = pg / gpg.sqrt();
        x -= &pg / (nf + 1.0);
        p = (p - (&pg * pg.transpose()) * (2.0 / (nf + 1.0))) * (nf * nf / (nf * nf - 1.0));
        p = (&p + p.transpose()) * 0.5;
    }
    x.as_slice().to_vec()
}

/// Maximizes the (concave) smallest slack by a grid and a compass search.
fn find_interior(member: &Member, d: usize, zw: &[f64]) -> Result<Vec<f64>> {
    let half = 4.0 * (1.0 + zw.iter().map(|v| v * v).sum::<f64>().sqrt());
    let per: usize = match d {
        1 => 41,
        2 => 41,
        3 => 17,
        _ => 11,
    };
    let mut best = (f64::NEG_INFINITY, vec![0.0; d]);
    let total = per.pow(d as u32);
    for code in 0..total {
        let mut c = code;
        let p: Vec<f64> = (0..d)
            .map(|_| {
                let k = c % per;
                c /= per;
                -half + 2.0 * half * k as f64 / (per - 1) as f64
            })
            .collect();
        let s = member.slack(&p);
        if s > best.0 {
            best = (s, p);
        }
    }
    // the search stays in the box: slack may grow without bound along a cone axis
    let mut step = 2.0 * half / (per - 1) as f64;
    while step > 1e-9 {
        let mut improved = false;
        for k in 0..d {
            for sgn in [-1.0, 1.0] {
                let mut p = best.1.clone();
                p[k] += sgn * step;
                if p[k].abs() > half {
                    continue;
                }
                let s = member.slack(&p);
                if s > best.0 {
                    best = (s, p);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    if best.0 > 0.0 {
        Ok(best.1)
    } else {
        Err(Error::InvalidInput("no strictly interior point found".into()))
    }
}
