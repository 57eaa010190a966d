//! From a scenario and SNR targets to per-cell convex sets.
//!
//! The complex decision vector is `x = [w_1; ...; w_M; 0]` of length `KM + 1`.
//! Cell `i` demands
//!
//! ```text
//! sqrt(b_i) * ||A_i x + n_i|| <= sqrt(1 + b_i) * h_ii^H S_i x
//! ```
//!
//! with `A_i = diag(h_1i^H, ..., h_Mi^H, 0)` and `n_i = [0; ...; 0; sigma_i]`,
//! plus the per-BS power balls and a zero last coordinate. The real lifting
//! `xbar = [Re x; Im x]` turns each cell's constraints into one family of
//! elementary sets (a SOC preimage, one affine subspace, M balls).

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{inner, BeamformerSet, LogBase, Scenario};

/// Fraction of the sum rate allotted to each user.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile(Vec<f64>);

impl RateProfile {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidInput("rate profile is empty".into()));
        }
        if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidInput("rate profile entries must be >= 0".into()));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("rate profile sums to {sum}, expected 1")));
        }
        Ok(RateProfile(alpha))
    }

    pub fn uniform(m: usize) -> Self {
        RateProfile(vec![1.0 / m as f64; m])
    }

    /// All profiles on the simplex lattice with spacing `1 / (n - 1)`, in
    /// lexicographic order of the first coordinates (descending alpha_1).
    pub fn simplex_grid(m: usize, n: usize) -> Result<Vec<RateProfile>> {
        if m == 0 {
            return Err(Error::InvalidInput("M must be at least 1".into()));
        }
        if m == 1 {
            return Ok(vec![RateProfile(vec![1.0])]);
        }
        if n < 2 {
            return Err(Error::InvalidInput("alpha grid needs at least 2 points".into()));
        }
        let steps = n - 1;
        let mut out = Vec::new();
        let mut parts = vec![0usize; m];
        compositions(steps, 0, &mut parts, &mut out);
        Ok(out
            .into_iter()
            .map(|p| {
                let mut a: Vec<f64> = p.iter().map(|&k| k as f64 / steps as f64).collect();
                // force an exact unit sum
                let head: f64 = a[..m - 1].iter().sum();
                a[m - 1] = (1.0 - head).max(0.0);
                RateProfile(a)
            })
            .collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn compositions(remaining: usize, pos: usize, parts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let m = parts.len();
    if pos == m - 1 {
        parts[pos] = remaining;
        out.push(parts.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        parts[pos] = k;
        compositions(remaining - k, pos + 1, parts, out);
    }
}

/// Target sum rate and the per-cell SINR targets it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityTarget {
    pub r0: Option<f64>,
    pub betas: Vec<f64>,
}

impl FeasibilityTarget {
    /// Direct SINR targets, no associated sum rate.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidInput("SNR targets must be finite and >= 0".into()));
        }
        Ok(FeasibilityTarget { r0: None, betas })
    }
}

/// `beta_i = base^(alpha_i r0) - 1`.
pub fn make_betas(alpha: &RateProfile, r0: f64, base: LogBase) -> Result<FeasibilityTarget> {
    if !(r0.is_finite() && r0 >= 0.0) {
        return Err(Error::InvalidInput(format!("target sum rate must be >= 0, got {r0}")));
    }
    let betas = alpha
        .as_slice()
        .iter()
        .map(|a| {
            let e = a * r0;
            if e == 0.0 {
                0.0
            } else {
                base.pow(e) - 1.0
            }
        })
        .collect();
    Ok(FeasibilityTarget { r0: Some(r0), betas })
}

/// The stacked complex SOC feasibility problem.
#[derive(Debug, Clone)]
pub struct StackedInstance {
    scenario: Scenario,
    betas: Vec<f64>,
    a: Vec<DMatrix<Complex64>>,
    n: Vec<DVector<Complex64>>,
}

pub fn build_stacked(s: &Scenario, t: &FeasibilityTarget) -> Result<StackedInstance> {
    let m = s.cells();
    let k = s.antennas();
    if t.betas.len() != m {
        return Err(Error::Dimension(format!(
            "{} SNR targets for M = {m} cells",
            t.betas.len()
        )));
    }
    let dim = k * m + 1;
    let mut a = Vec::with_capacity(m);
    let mut n = Vec::with_capacity(m);
    for i in 0..m {
        let mut ai = DMatrix::<Complex64>::zeros(m + 1, dim);
        for j in 0..m {
            for (kk, h) in s.channel(j, i).iter().enumerate() {
                ai[(j, j * k + kk)] = h.conj();
            }
        }
        let mut ni = DVector::<Complex64>::zeros(m + 1);
        ni[m] = Complex64::new(s.noise_vars()[i].sqrt(), 0.0);
        a.push(ai);
        n.push(ni);
    }
    Ok(StackedInstance {
        scenario: s.clone(),
        betas: t.betas.clone(),
        a,
        n,
    })
}

impl StackedInstance {
    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn cells(&self) -> usize {
        self.scenario.cells()
    }

    /// `KM + 1`.
    pub fn complex_dim(&self) -> usize {
        self.scenario.cells() * self.scenario.antennas() + 1
    }

    /// Index range of `w_j` inside `x` (the selector `S_j`).
    pub fn omega_range(&self, j: usize) -> Range<usize> {
        let k = self.scenario.antennas();
        j * k..(j + 1) * k
    }

    pub fn a(&self, i: usize) -> &DMatrix<Complex64> {
        &self.a[i]
    }

    pub fn n(&self, i: usize) -> &DVector<Complex64> {
        &self.n[i]
    }

    /// `||A_i x + n_i||`.
    pub fn interference_norm(&self, i: usize, x: &DVector<Complex64>) -> f64 {
        (&self.a[i] * x + &self.n[i]).norm()
    }

    /// `h_ii^H S_i x`.
    pub fn direct_term(&self, i: usize, x: &DVector<Complex64>) -> Complex64 {
        let r = self.omega_range(i);
        inner(self.scenario.channel(i, i), &x.as_slice()[r])
    }

    /// Checks every constraint of the stacked problem on a complex `x`.
    /// The SOC right-hand side must be real, so `Im(h_ii^H S_i x)` is held to `tol`.
    pub fn satisfies(&self, x: &DVector<Complex64>, tol: f64) -> bool {
        let m = self.cells();
        if x.len() != self.complex_dim() || x[self.complex_dim() - 1].norm() > tol {
            return false;
        }
        for i in 0..m {
            let g = self.direct_term(i, x);
            let lhs = self.betas[i].sqrt() * self.interference_norm(i, x);
            if g.im.abs() > tol || lhs > (1.0 + self.betas[i]).sqrt() * g.re + tol {
                return false;
            }
        }
        (0..m).all(|j| {
            let w = &x.as_slice()[self.omega_range(j)];
            let p: f64 = w.iter().map(|c| c.norm_sqr()).sum();
            p.sqrt() <= self.scenario.powers()[j].sqrt() + tol
        })
    }
}

/// One closed convex set in the lifted real space.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexSetDescriptor {
    /// `{x : ||B x + b|| <= c^T x + d}`.
    SocEpigraph {
        b_mat: DMatrix<f64>,
        b_vec: DVector<f64>,
        c: DVector<f64>,
        d: f64,
    },
    /// `{x : ||x[indices]|| <= radius}`.
    Ball {
        dim: usize,
        indices: Vec<usize>,
        radius: f64,
    },
    /// `{x : E x = 0}` with `E` of full row rank.
    Affine { e: DMatrix<f64> },
}

impl ConvexSetDescriptor {
    pub fn soc(b_mat: DMatrix<f64>, b_vec: DVector<f64>, c: DVector<f64>, d: f64) -> Result<Self> {
        if b_mat.nrows() != b_vec.len() || b_mat.ncols() != c.len() {
            return Err(Error::Dimension(format!(
                "SOC data: B is {}x{}, b has {}, c has {}",
                b_mat.nrows(),
                b_mat.ncols(),
                b_vec.len(),
                c.len()
            )));
        }
        Ok(ConvexSetDescriptor::SocEpigraph { b_mat, b_vec, c, d })
    }

    pub fn ball(dim: usize, indices: Vec<usize>, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) {
            return Err(Error::InvalidInput("ball radius must be >= 0".into()));
        }
        if indices.iter().any(|&ix| ix >= dim) {
            return Err(Error::Dimension("ball selector index out of range".into()));
        }
        Ok(ConvexSetDescriptor::Ball { dim, indices, radius })
    }

    pub fn full_ball(dim: usize, radius: f64) -> Result<Self> {
        Self::ball(dim, (0..dim).collect(), radius)
    }

    /// Rejects a rank-deficient `E`.
    pub fn affine(e: DMatrix<f64>) -> Result<Self> {
        let rank = numeric_rank(&e);
        if rank < e.nrows() {
            return Err(Error::RankDeficient { rows: e.nrows(), rank });
        }
        Ok(ConvexSetDescriptor::Affine { e })
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSetDescriptor::SocEpigraph { c, .. } => c.len(),
            ConvexSetDescriptor::Ball { dim, .. } => *dim,
            ConvexSetDescriptor::Affine { e } => e.ncols(),
        }
    }

    /// Zero inside the set; otherwise a constraint residual in the set's own units.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConvexSetDescriptor::SocEpigraph { b_mat, b_vec, c, d } => {
                ((b_mat * x + b_vec).norm() - c.dot(x) - d).max(0.0)
            }
            ConvexSetDescriptor::Ball { indices, radius, .. } => {
                let n2: f64 = indices.iter().map(|&ix| x[ix] * x[ix]).sum();
                (n2.sqrt() - radius).max(0.0)
            }
            ConvexSetDescriptor::Affine { e } => (e * x).norm(),
        }
    }
}

pub(crate) fn numeric_rank(e: &DMatrix<f64>) -> usize {
    if e.nrows() == 0 {
        return 0;
    }
    let sv = e.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let tol = max * 1e-10 * e.nrows().max(e.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol && s > 0.0).count()
}

/// Raw lifted data of one cell, kept for inspection and tests.
#[derive(Debug, Clone)]
pub struct LiftedCell {
    /// `[[Re A, -Im A], [Im A, Re A]]`.
    pub a_bar: DMatrix<f64>,
    pub n_bar: DVector<f64>,
    /// Row with `h_bar . xbar = Re(h_ii^H w_i)`.
    pub h_bar: DVector<f64>,
    /// Row with `d . xbar = Im(h_ii^H w_i)`.
    pub d_row: DVector<f64>,
    /// SOC, affine, then the M power balls.
    pub family: Vec<ConvexSetDescriptor>,
}

/// The feasibility problem in the real space of dimension `2(KM + 1)`.
#[derive(Debug, Clone)]
pub struct LiftedInstance {
    scenario: Scenario,
    betas: Vec<f64>,
    complex_dim: usize,
    cells: Vec<LiftedCell>,
}

pub fn lift_real(si: &StackedInstance) -> Result<LiftedInstance> {
    let s = si.scenario();
    let m = s.cells();
    let k = s.antennas();
    let nc = si.complex_dim();
    let dim = 2 * nc;
    let last = nc - 1;
    let mut cells = Vec::with_capacity(m);
    for i in 0..m {
        let a = si.a(i);
        let rows = a.nrows();
        let mut a_bar = DMatrix::<f64>::zeros(2 * rows, dim);
        for r in 0..rows {
            for col in 0..nc {
                let v = a[(r, col)];
                a_bar[(r, col)] = v.re;
                a_bar[(r, nc + col)] = -v.im;
                a_bar[(rows + r, col)] = v.im;
                a_bar[(rows + r, nc + col)] = v.re;
            }
        }
        let mut n_bar = DVector::<f64>::zeros(2 * rows);
        for r in 0..rows {
            n_bar[r] = si.n(i)[r].re;
            n_bar[rows + r] = si.n(i)[r].im;
        }
        let mut h_bar = DVector::<f64>::zeros(dim);
        let mut d_row = DVector::<f64>::zeros(dim);
        for (kk, h) in s.channel(i, i).iter().enumerate() {
            let col = i * k + kk;
            h_bar[col] = h.re;
            h_bar[nc + col] = h.im;
            d_row[col] = -h.im;
            d_row[nc + col] = h.re;
        }

        let beta = si.betas()[i];
        let soc = ConvexSetDescriptor::soc(
            &a_bar * beta.sqrt(),
            &n_bar * beta.sqrt(),
            &h_bar * (1.0 + beta).sqrt(),
            0.0,
        )?;

        let mut affine_rows: Vec<DVector<f64>> = Vec::with_capacity(3);
        if d_row.norm() > 0.0 {
            affine_rows.push(d_row.clone());
        }
        let mut re_last = DVector::<f64>::zeros(dim);
        re_last[last] = 1.0;
        let mut im_last = DVector::<f64>::zeros(dim);
        im_last[nc + last] = 1.0;
        affine_rows.push(re_last);
        affine_rows.push(im_last);
        let e = DMatrix::from_fn(affine_rows.len(), dim, |r, c| affine_rows[r][c]);
        let affine = ConvexSetDescriptor::affine(e)?;

        let mut family = vec![soc, affine];
        for j in 0..m {
            let indices = (j * k..(j + 1) * k).chain(nc + j * k..nc + (j + 1) * k).collect();
            family.push(ConvexSetDescriptor::ball(dim, indices, s.powers()[j].sqrt())?);
        }
        cells.push(LiftedCell {
            a_bar,
            n_bar,
            h_bar,
            d_row,
            family,
        });
    }
    Ok(LiftedInstance {
        scenario: s.clone(),
        betas: si.betas().to_vec(),
        complex_dim: nc,
        cells,
    })
}

impl LiftedInstance {
    /// Stacks, lifts and assembles the per-cell families in one step.
    pub fn build(s: &Scenario, t: &FeasibilityTarget) -> Result<Self> {
        lift_real(&build_stacked(s, t)?)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn cells(&self) -> usize {
        self.cells.len()
    }

    pub fn complex_dim(&self) -> usize {
        self.complex_dim
    }

    pub fn dim(&self) -> usize {
        2 * self.complex_dim
    }

    pub fn cell(&self, i: usize) -> &LiftedCell {
        &self.cells[i]
    }

    /// The descriptor list F_i of cell `i`.
    pub fn family(&self, i: usize) -> &[ConvexSetDescriptor] {
        &self.cells[i].family
    }

    pub fn lift(&self, x: &DVector<Complex64>) -> DVector<f64> {
        let nc = self.complex_dim;
        DVector::from_fn(2 * nc, |r, _| if r < nc { x[r].re } else { x[r - nc].im })
    }

    pub fn unlift(&self, xbar: &DVector<f64>) -> DVector<Complex64> {
        let nc = self.complex_dim;
        DVector::from_fn(nc, |r, _| Complex64::new(xbar[r], xbar[nc + r]))
    }

    /// Stacks `w` into a lifted vector after rotating each `w_i` so that
    /// `h_ii^H w_i` is real and non-negative.
    pub fn stack_beamformers(&self, w: &BeamformerSet) -> DVector<f64> {
        let aligned = w.phase_aligned(&self.scenario);
        let mut x = DVector::<Complex64>::zeros(self.complex_dim);
        let k = self.scenario.antennas();
        for (j, o) in aligned.omegas.iter().enumerate() {
            for (kk, v) in o.iter().enumerate() {
                x[j * k + kk] = *v;
            }
        }
        self.lift(&x)
    }

    pub fn beamformers(&self, xbar: &DVector<f64>) -> BeamformerSet {
        let x = self.unlift(xbar);
        let k = self.scenario.antennas();
        let omegas = (0..self.cells())
            .map(|j| x.as_slice()[j * k..(j + 1) * k].to_vec())
            .collect();
        BeamformerSet::new(omegas)
    }

    /// Cells whose set F_i is empty on its own: even with every other BS
    /// silent, full-power MRT misses the target.
    pub fn empty_cells(&self) -> Vec<usize> {
        (0..self.cells())
            .filter(|&i| self.betas[i] > self.scenario.single_user_snr(i) * (1.0 + 1e-12))
            .collect()
    }

    /// Largest descriptor violation of `xbar` within each cell family.
    pub fn violations(&self, xbar: &DVector<f64>) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| c.family.iter().map(|d| d.violation(xbar)).fold(0.0, f64::max))
            .collect()
    }

    /// Human-readable dump of all lifted matrices.
    pub fn dump_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# lifted instance: M={} K={} dim={}",
            self.cells(),
            self.scenario.antennas(),
            self.dim()
        );
        for (i, c) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "cell {} beta {:.12e}", i + 1, self.betas[i]);
            write_matrix(&mut out, "A_bar", &c.a_bar);
            write_matrix(
                &mut out,
                "n_bar",
                &DMatrix::from_column_slice(1, c.n_bar.len(), c.n_bar.as_slice()),
            );
            write_matrix(
                &mut out,
                "h_bar",
                &DMatrix::from_column_slice(1, c.h_bar.len(), c.h_bar.as_slice()),
            );
            write_matrix(
                &mut out,
                "d",
                &DMatrix::from_column_slice(1, c.d_row.len(), c.d_row.as_slice()),
            );
            for d in &c.family {
                if let ConvexSetDescriptor::Ball { indices, radius, .. } = d {
                    let _ = writeln!(out, "ball radius {:.12e} indices {:?}", radius, indices);
                }
            }
        }
        out
    }
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {}x{}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.6e}", m[(r, c)])).collect();
        let _ = writeln!(out, "  {}", row.join(" "));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_rates, compute_sinrs};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_x(rng: &mut ChaCha8Rng, n: usize, last_zero: bool) -> DVector<Complex64> {
        let mut x = DVector::from_fn(n, |_, _| {
            Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))
        });
        if last_zero {
            x[n - 1] = Complex64::new(0.0, 0.0);
        }
        x
    }

    fn random_scenario(seed: u64, m: usize, k: usize) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let powers = (0..m).map(|_| rng.random_range(1.0..5.0)).collect();
        let noise = (0..m).map(|_| rng.random_range(0.2..2.0)).collect();
        Scenario::random_cscg(m, k, powers, noise, &mut rng).unwrap()
    }

    #[test]
    fn betas_basic() {
        let a = RateProfile::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(make_betas(&a, 2.0, LogBase::Two).unwrap().betas, vec![1.0, 1.0]);
        assert_eq!(make_betas(&a, 0.0, LogBase::Two).unwrap().betas, vec![0.0, 0.0]);
        let one = RateProfile::new(vec![1.0]).unwrap();
        assert_eq!(make_betas(&one, 1.0, LogBase::Two).unwrap().betas, vec![1.0]);
        let e = make_betas(&one, 1.0, LogBase::E).unwrap().betas[0];
        assert!((e - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!(make_betas(&a, -1.0, LogBase::Two).is_err());
    }

    #[test]
    fn betas_monotone_in_r0() {
        let a = RateProfile::new(vec![0.2, 0.3, 0.5]).unwrap();
        let mut prev = vec![0.0; 3];
        for step in 0..50 {
            let t = make_betas(&a, step as f64 * 0.3, LogBase::Two).unwrap();
            for (b, p) in t.betas.iter().zip(&prev) {
                assert!(b >= p);
            }
            prev = t.betas;
        }
    }

    #[test]
    fn rate_profile_validation() {
        assert!(RateProfile::new(vec![0.5, 0.6]).is_err());
        assert!(RateProfile::new(vec![-0.1, 1.1]).is_err());
        let g = RateProfile::simplex_grid(2, 21).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g[0].as_slice(), &[1.0, 0.0]);
        assert_eq!(g[20].as_slice(), &[0.0, 1.0]);
        assert_eq!(RateProfile::simplex_grid(3, 3).unwrap().len(), 6);
        assert_eq!(RateProfile::simplex_grid(1, 9).unwrap().len(), 1);
    }

    #[test]
    fn stacked_interference_expansion() {
        // oracle: direct sum of |h_ji^H w_j|^2 + sigma_i^2
        let s = random_scenario(11, 3, 2);
        let t = FeasibilityTarget::from_betas(vec![1.0, 2.0, 3.0]).unwrap();
        let si = build_stacked(&s, &t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = random_x(&mut rng, si.complex_dim(), true);
            for i in 0..3 {
                let mut expect = s.noise_vars()[i];
                for j in 0..3 {
                    let w = &x.as_slice()[j * 2..j * 2 + 2];
                    let v: Complex64 = s.channel(j, i).iter().zip(w).map(|(h, o)| h.conj() * o).sum();
                    expect += v.norm_sqr();
                }
                let got = si.interference_norm(i, &x).powi(2);
                assert!((got - expect).abs() < 1e-10 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn scalar_soc_threshold() {
        // M=K=1, h=1, sigma^2=1, beta=1: sqrt(|w|^2+1) <= sqrt(2) w iff w >= 1
        let s = Scenario::new(1, 1, vec![vec![Complex64::new(1.0, 0.0)]], vec![4.0], vec![1.0]).unwrap();
        let t = FeasibilityTarget::from_betas(vec![1.0]).unwrap();
        let si = build_stacked(&s, &t).unwrap();
        let x = |w: f64| DVector::from_vec(vec![Complex64::new(w, 0.0), Complex64::new(0.0, 0.0)]);
        assert!(si.satisfies(&x(1.0), 1e-12));
        assert!(si.satisfies(&x(1.5), 1e-12));
        assert!(!si.satisfies(&x(0.99), 1e-12));
    }

    #[test]
    fn zero_beta_only_needs_nonnegative_direct_term() {
        let s = random_scenario(3, 2, 2);
        let li = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![0.0, 0.0]).unwrap()).unwrap();
        let zero = DVector::zeros(li.dim());
        assert!(li.violations(&zero).iter().all(|&v| v == 0.0));
        if let ConvexSetDescriptor::SocEpigraph { b_mat, b_vec, .. } = &li.family(0)[0] {
            assert_eq!(b_mat.norm(), 0.0);
            assert_eq!(b_vec.norm(), 0.0);
        } else {
            panic!("first descriptor must be the SOC");
        }
    }

    #[test]
    fn lifting_preserves_norms_and_rows() {
        let s = random_scenario(21, 2, 3);
        let t = FeasibilityTarget::from_betas(vec![1.0, 1.0]).unwrap();
        let si = build_stacked(&s, &t).unwrap();
        let li = lift_real(&si).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let x = random_x(&mut rng, si.complex_dim(), false);
            let xb = li.lift(&x);
            assert_eq!(li.unlift(&xb), x);
            for i in 0..2 {
                let c = li.cell(i);
                let lifted = (&c.a_bar * &xb + &c.n_bar).norm();
                let direct = (si.a(i) * &x + si.n(i)).norm();
                assert!((lifted - direct).abs() < 1e-12 * direct.max(1.0));
                let g = si.direct_term(i, &x);
                assert!((c.h_bar.dot(&xb) - g.re).abs() < 1e-12);
                assert!((c.d_row.dot(&xb) - g.im).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lifted_and_complex_feasibility_agree() {
        let s = random_scenario(33, 2, 2);
        let t = FeasibilityTarget::from_betas(vec![0.5, 0.7]).unwrap();
        let si = build_stacked(&s, &t).unwrap();
        let li = lift_real(&si).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = 0;
        for _ in 0..4000 {
            let w = BeamformerSet::new(
                (0..2)
                    .map(|_| {
                        (0..2)
                            .map(|_| Complex64::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)))
                            .collect()
                    })
                    .collect(),
            );
            let xb = li.stack_beamformers(&w);
            let x = li.unlift(&xb);
            let complex_ok = si.satisfies(&x, 1e-12);
            let lifted_ok = li.violations(&xb).iter().all(|&v| v <= 1e-12);
            assert_eq!(complex_ok, lifted_ok);
            // feasibility also matches the model's SINR / power view
            let sinr = compute_sinrs(&s, &w).unwrap();
            let model_ok =
                (0..2).all(|i| sinr[i] >= t.betas[i] * (1.0 + 1e-9) && w.power(i) <= s.powers()[i] * (1.0 - 1e-9));
            if model_ok {
                assert!(lifted_ok);
                hits += 1;
            }
        }
        assert!(hits > 10, "too few feasible samples: {hits}");
    }

    #[test]
    fn rate_meeting_beamformers_lie_in_every_family() {
        let s = random_scenario(8, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = RateProfile::new(vec![0.3, 0.3, 0.4]).unwrap();
        for _ in 0..200 {
            let w = BeamformerSet::new(
                (0..3)
                    .map(|j| {
                        let v: Vec<Complex64> = (0..2)
                            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                            .collect();
                        let n: f64 = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                        let scale = s.powers()[j].sqrt() / n * rng.random_range(0.1..1.0);
                        v.into_iter().map(|c| c * scale).collect()
                    })
                    .collect(),
            );
            let rates = compute_rates(&s, &w).unwrap();
            let r0 = rates
                .as_slice()
                .iter()
                .zip(a.as_slice())
                .map(|(r, al)| r / al)
                .fold(f64::INFINITY, f64::min);
            let t = make_betas(&a, r0 * 0.999, LogBase::Two).unwrap();
            let li = LiftedInstance::build(&s, &t).unwrap();
            let xb = li.stack_beamformers(&w);
            assert!(li.violations(&xb).iter().all(|&v| v < 1e-9));
        }
    }

    #[test]
    fn affine_rank_check() {
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(matches!(
            ConvexSetDescriptor::affine(e),
            Err(Error::RankDeficient { rows: 2, rank: 1 })
        ));
    }

    #[test]
    fn empty_cell_detection() {
        let s = Scenario::new(1, 1, vec![vec![Complex64::new(1.0, 0.0)]], vec![4.0], vec![1.0]).unwrap();
        let ok = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![4.0]).unwrap()).unwrap();
        assert!(ok.empty_cells().is_empty());
        let bad = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![4.1]).unwrap()).unwrap();
        assert_eq!(bad.empty_cells(), vec![0]);
    }

    #[test]
    fn dump_mentions_every_cell() {
        let s = random_scenario(1, 2, 1);
        let li = LiftedInstance::build(&s, &FeasibilityTarget::from_betas(vec![1.0, 1.0]).unwrap()).unwrap();
        let text = li.dump_text();
        assert!(text.contains("cell 1") && text.contains("cell 2"));
        assert!(text.contains("A_bar 6x6"));
    }
}
