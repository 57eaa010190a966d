//! Cellular scenario, beamformers and rate evaluation.
//!
//! Channel convention: `channel(j, i)` is the K-vector from BS `j` to the
//! mobile in cell `i`. The received signal at MS `i` is
//! `h_ii^H w_i s_i + sum_{j != i} h_ji^H w_j s_j + z_i`, so the interference
//! seen by MS `i` always goes through the cross channels `h_ji`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base of the logarithm used for rates and SNR targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    /// Bits per channel use.
    #[default]
    Two,
    /// Nats per channel use.
    E,
}

impl LogBase {
    pub fn log(self, v: f64) -> f64 {
        match self {
            LogBase::Two => v.log2(),
            LogBase::E => v.ln(),
        }
    }

    pub fn pow(self, v: f64) -> f64 {
        match self {
            LogBase::Two => v.exp2(),
            LogBase::E => v.exp(),
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" | "2" | "bits" => Ok(LogBase::Two),
            "e" | "nats" => Ok(LogBase::E),
            other => Err(Error::InvalidInput(format!("unknown log base '{other}'"))),
        }
    }
}

/// An M-cell, K-antenna MISO interference channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFile", into = "ScenarioFile")]
pub struct Scenario {
    cells: usize,
    antennas: usize,
    /// Row-major `[j * cells + i]` = h_ji.
    channels: Vec<Vec<Complex64>>,
    powers: Vec<f64>,
    noise_vars: Vec<f64>,
}

/// On-disk JSON layout: `channels[j][i][k] = [re, im]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScenarioFile {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    channels: Vec<Vec<Vec<[f64; 2]>>>,
    powers: Vec<f64>,
    noise_vars: Vec<f64>,
}

impl TryFrom<ScenarioFile> for Scenario {
    type Error = Error;

    fn try_from(f: ScenarioFile) -> Result<Self> {
        if f.channels.len() != f.m {
            return Err(Error::Dimension(format!(
                "channels has {} rows, expected M = {}",
                f.channels.len(),
                f.m
            )));
        }
        let mut channels = Vec::with_capacity(f.m * f.m);
        for (j, row) in f.channels.into_iter().enumerate() {
            if row.len() != f.m {
                return Err(Error::Dimension(format!(
                    "channels[{j}] has {} entries, expected M = {}",
                    row.len(),
                    f.m
                )));
            }
            for h in row {
                channels.push(h.into_iter().map(|[re, im]| Complex64::new(re, im)).collect());
            }
        }
        Scenario::new(f.m, f.k, channels, f.powers, f.noise_vars)
    }
}

impl From<Scenario> for ScenarioFile {
    fn from(s: Scenario) -> Self {
        let channels = (0..s.cells)
            .map(|j| {
                (0..s.cells)
                    .map(|i| s.channel(j, i).iter().map(|c| [c.re, c.im]).collect())
                    .collect()
            })
            .collect();
        ScenarioFile {
            m: s.cells,
            k: s.antennas,
            channels,
            powers: s.powers,
            noise_vars: s.noise_vars,
        }
    }
}

impl Scenario {
    /// `channels` is row-major over (transmitting BS j, receiving MS i).
    pub fn new(
        cells: usize,
        antennas: usize,
        channels: Vec<Vec<Complex64>>,
        powers: Vec<f64>,
        noise_vars: Vec<f64>,
    ) -> Result<Self> {
        if cells == 0 || antennas == 0 {
            return Err(Error::InvalidInput("M and K must be at least 1".into()));
        }
        if channels.len() != cells * cells {
            return Err(Error::Dimension(format!(
                "expected {} channel vectors, got {}",
                cells * cells,
                channels.len()
            )));
        }
        if let Some((idx, h)) = channels.iter().enumerate().find(|(_, h)| h.len() != antennas) {
            return Err(Error::Dimension(format!(
                "channel h_{}{} has {} entries, expected K = {antennas}",
                idx / cells + 1,
                idx % cells + 1,
                h.len()
            )));
        }
        if channels
            .iter()
            .flatten()
            .any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::InvalidInput("channel entries must be finite".into()));
        }
        check_positive("powers", &powers, cells)?;
        check_positive("noise_vars", &noise_vars, cells)?;
        Ok(Scenario {
            cells,
            antennas,
            channels,
            powers,
            noise_vars,
        })
    }

    /// I.i.d. CN(0, 1) channel entries.
    pub fn random_cscg<R: Rng + ?Sized>(
        cells: usize,
        antennas: usize,
        powers: Vec<f64>,
        noise_vars: Vec<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let channels = (0..cells * cells)
            .map(|_| {
                (0..antennas)
                    .map(|_| {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        Complex64::new(scale * re, scale * im)
                    })
                    .collect()
            })
            .collect();
        Scenario::new(cells, antennas, channels, powers, noise_vars)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization is infallible")
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// Channel from BS `j` to MS `i` (0-based).
    pub fn channel(&self, j: usize, i: usize) -> &[Complex64] {
        &self.channels[j * self.cells + i]
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    /// Interference-free SNR of cell `i` at full power with MRT.
    pub fn single_user_snr(&self, i: usize) -> f64 {
        let g: f64 = self.channel(i, i).iter().map(|c| c.norm_sqr()).sum();
        self.powers[i] * g / self.noise_vars[i]
    }

    fn check_beamformers(&self, w: &BeamformerSet) -> Result<()> {
        if w.omegas.len() != self.cells {
            return Err(Error::Dimension(format!(
                "beamformer set has {} vectors, scenario has M = {}",
                w.omegas.len(),
                self.cells
            )));
        }
        if let Some(j) = w.omegas.iter().position(|o| o.len() != self.antennas) {
            return Err(Error::Dimension(format!(
                "beamformer {} has {} entries, expected K = {}",
                j + 1,
                w.omegas[j].len(),
                self.antennas
            )));
        }
        Ok(())
    }
}

fn check_positive(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension(format!(
            "{name} has {} entries, expected {len}",
            v.len()
        )));
    }
    if v.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::InvalidInput(format!("{name} must be finite and > 0")));
    }
    Ok(())
}

/// One transmit beamformer per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub omegas: Vec<Vec<Complex64>>,
}

impl BeamformerSet {
    pub fn new(omegas: Vec<Vec<Complex64>>) -> Self {
        BeamformerSet { omegas }
    }

    pub fn zeros(cells: usize, antennas: usize) -> Self {
        BeamformerSet {
            omegas: vec![vec![Complex64::new(0.0, 0.0); antennas]; cells],
        }
    }

    pub fn power(&self, j: usize) -> f64 {
        self.omegas[j].iter().map(|c| c.norm_sqr()).sum()
    }

    /// Rotates each `w_i` so that `h_ii^H w_i` is real and non-negative.
    pub fn phase_aligned(&self, s: &Scenario) -> BeamformerSet {
        let omegas = self
            .omegas
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let g = inner(s.channel(i, i), w);
                if g.norm() == 0.0 {
                    return w.clone();
                }
                let rot = g.conj() / g.norm();
                w.iter().map(|c| c * rot).collect()
            })
            .collect();
        BeamformerSet { omegas }
    }
}

/// Achieved rates, one per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTuple(Vec<f64>);

impl RateTuple {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidInput("rates must be non-negative".into()));
        }
        Ok(RateTuple(rates))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// SINR of cell `i` (0-based), interference through the cross channels h_ji.
pub fn compute_sinr(s: &Scenario, w: &BeamformerSet, i: usize) -> Result<f64> {
    s.check_beamformers(w)?;
    if i >= s.cells {
        return Err(Error::Dimension(format!(
            "cell index {i} out of range for M = {}",
            s.cells
        )));
    }
    Ok(sinr_unchecked(s, w, i))
}

fn sinr_unchecked(s: &Scenario, w: &BeamformerSet, i: usize) -> f64 {
    let signal = inner(s.channel(i, i), &w.omegas[i]).norm_sqr();
    let interference: f64 = (0..s.cells)
        .filter(|&j| j != i)
        .map(|j| inner(s.channel(j, i), &w.omegas[j]).norm_sqr())
        .sum();
    signal / (interference + s.noise_vars[i])
}

pub fn compute_sinrs(s: &Scenario, w: &BeamformerSet) -> Result<Vec<f64>> {
    s.check_beamformers(w)?;
    Ok((0..s.cells).map(|i| sinr_unchecked(s, w, i)).collect())
}

/// Rates in bits per channel use.
pub fn compute_rates(s: &Scenario, w: &BeamformerSet) -> Result<RateTuple> {
    compute_rates_with(s, w, LogBase::Two)
}

pub fn compute_rates_with(s: &Scenario, w: &BeamformerSet, base: LogBase) -> Result<RateTuple> {
    let rates = compute_sinrs(s, w)?.into_iter().map(|g| base.log(1.0 + g)).collect();
    Ok(RateTuple(rates))
}

/// Per-cell check of `||w_j||^2 <= P_j (1 + tol)`.
pub fn check_power(s: &Scenario, w: &BeamformerSet, tol: f64) -> Vec<bool> {
    (0..s.cells.min(w.omegas.len()))
        .map(|j| w.power(j) <= s.powers[j] * (1.0 + tol))
        .collect()
}

/// True when `b` weakly dominates `a` componentwise and differs from it.
pub fn is_pareto_dominated(a: &RateTuple, b: &RateTuple) -> Result<bool> {
    if a.0.len() != b.0.len() {
        return Err(Error::Dimension(format!(
            "rate tuples of length {} and {}",
            a.0.len(),
            b.0.len()
        )));
    }
    let geq = a.0.iter().zip(&b.0).all(|(x, y)| y >= x);
    Ok(geq && a.0 != b.0)
}
