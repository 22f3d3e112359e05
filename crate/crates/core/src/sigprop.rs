//! Mean-field signal propagation for identity-initialized hard-tanh networks: the variance fixed
//! point, the Dirac-mixture Jacobian spectrum at initialization, `(sigma, q*)` calibration, and
//! Monte-Carlo validators.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{erf, erfc};
use crate::network::{InitKind, InterpretableMLP, NetworkConfig};
use crate::rng::SeededRng;

/// Variance fixed-point equation `q = V(beta)` with `beta = 2 sigma^(2(l-1)) q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointProblem {
    pub sigma: f64,
    /// `l` in the exponent of `beta`.
    pub layer_index: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl FixedPointProblem {
    /// Problem for a depth-`layers` network, with `l = layers` in `beta`.
    pub fn for_depth(sigma: f64, layers: usize) -> Self {
        FixedPointProblem {
            sigma,
            layer_index: layers,
            tolerance: 1e-12,
            max_iterations: 10_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.layer_index == 0 {
            return Err(Error::InvalidConfig("layer_index must be >= 1".into()));
        }
        Ok(())
    }

    fn beta_scale(&self) -> f64 {
        2.0 * self.sigma.powi(2 * (self.layer_index as i32 - 1))
    }
}

/// `E[phi(h)^2]` for `h ~ N(0, beta / 2)` and hard-tanh `phi`:
/// `(beta/2) erf(a) + erfc(a) - sqrt(beta/pi) exp(-a^2)` with `a = 1/sqrt(beta)`.
pub fn clipped_second_moment(beta: f64) -> f64 {
    assert!(beta > 0.0, "beta must be positive, got {beta}");
    let a = 1.0 / beta.sqrt();
    if beta <= 1.0 {
        return 0.5 * beta * erf(a) + erfc(a) - (beta / PI).sqrt() * (-a * a).exp();
    }
    // For large beta the first and last terms cancel; their combination
    // (beta/2) (erf(a) - 2a e^{-a^2} / sqrt(pi)) is summed as a series in a instead.
    let a2 = a * a;
    let mut power = a; // a^(2n-1)
    let mut factorial = 1.0;
    let mut sum = 0.0;
    for n in 1..60 {
        factorial *= n as f64;
        let term = 2.0 * n as f64 * power / ((2 * n + 1) as f64 * factorial);
        sum += if n % 2 == 1 { term } else { -term };
        if term < 1e-18 * sum.abs() {
            break;
        }
        power *= a2;
    }
    sum / PI.sqrt() + erfc(a)
}

/// Right-hand side of the fixed-point equation at `q`. Panics unless `q > 0`.
pub fn fixed_point_rhs(q: f64, problem: &FixedPointProblem) -> f64 {
    assert!(q > 0.0, "fixed_point_rhs needs q > 0, got {q}");
    clipped_second_moment(problem.beta_scale() * q)
}

/// A positive root of `rhs(q) - q`.
///
/// Damped iteration `q <- q + (rhs(q) - q) / 2` from `q_init`; if that stalls or lands on the
/// trivial root at 0, the residual is scanned over `(0, 2]` for a sign change and bisected.
/// A result is accepted only when the residual is below tolerance and changes sign within a
/// relative `1e-3` of `q`.
pub fn solve_fixed_point(problem: &FixedPointProblem, q_init: f64) -> Result<f64> {
    problem.validate()?;
    if !(q_init > 0.0 && q_init.is_finite()) {
        return Err(Error::InvalidConfig(format!("q_init must be positive, got {q_init}")));
    }
    let residual = |q: f64| fixed_point_rhs(q, problem) - q;
    let mut trace = Vec::new();

    let mut q = q_init;
    for _ in 0..problem.max_iterations {
        let r = residual(q);
        trace.push(r);
        if r.abs() < problem.tolerance {
            if is_genuine_root(&residual, q) {
                return Ok(q);
            }
            break;
        }
        q += 0.5 * r;
        if !(q > 0.0) {
            break;
        }
    }

    const GRID: usize = 2000;
    const UPPER: f64 = 2.0;
    let mut lo = UPPER / GRID as f64;
    let mut r_lo = residual(lo);
    for k in 2..=GRID {
        let hi = UPPER * k as f64 / GRID as f64;
        let r_hi = residual(hi);
        if strict_sign_change(r_lo, r_hi) {
            let root = bisect(&residual, lo, hi, r_lo, problem, &mut trace);
            if residual(root).abs() < problem.tolerance {
                return Ok(root);
            }
            break;
        }
        lo = hi;
        r_lo = r_hi;
    }
    Err(Error::NoConvergence {
        iterations: trace.len(),
        residual_trace: trace,
    })
}

fn is_genuine_root(residual: &impl Fn(f64) -> f64, q: f64) -> bool {
    strict_sign_change(residual(q * (1.0 - 1e-3)), residual(q * (1.0 + 1e-3)))
}

/// Exact zeros do not count: near `q = 0` the residual underflows to 0.
fn strict_sign_change(a: f64, b: f64) -> bool {
    (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)
}

fn bisect(
    residual: &impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    mut r_lo: f64,
    problem: &FixedPointProblem,
    trace: &mut Vec<f64>,
) -> f64 {
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..problem.max_iterations.max(200) {
        mid = 0.5 * (lo + hi);
        let r = residual(mid);
        trace.push(r);
        if r == 0.0 || (hi - lo) < f64::EPSILON * mid {
            break;
        }
        if (r < 0.0) == (r_lo < 0.0) {
            lo = mid;
            r_lo = r;
        } else {
            hi = mid;
        }
    }
    mid
}

/// `erf(1 / (sigma^l sqrt(2 q*)))`, the fraction of coordinates that never saturate.
pub fn alpha(sigma: f64, ell: usize, q_star: f64) -> f64 {
    assert!(sigma > 0.0 && q_star > 0.0, "alpha needs sigma > 0 and q* > 0");
    erf(1.0 / (sigma.powi(ell as i32) * (2.0 * q_star).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SigmaLeOne,
    SigmaGtOne,
}

impl Regime {
    pub fn of(sigma: f64) -> Regime {
        if sigma <= 1.0 {
            Regime::SigmaLeOne
        } else {
            Regime::SigmaGtOne
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SigmaLeOne => "sigma_le_one",
            Regime::SigmaGtOne => "sigma_gt_one",
        }
    }
}

/// Two-atom law of the eigenvalues of `J J^T`: mass at `sigma^(2L)`, the rest at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub atom_value: f64,
    pub mass_at_atom: f64,
    pub mass_at_zero: f64,
    pub regime: Regime,
}

pub fn theoretical_spectrum(sigma: f64, layers: usize, q_star: f64) -> SpectrumSummary {
    assert!(layers >= 1, "theoretical_spectrum needs L >= 1");
    let regime = Regime::of(sigma);
    let ell = match regime {
        Regime::SigmaLeOne => 1,
        Regime::SigmaGtOne => layers,
    };
    let mass = alpha(sigma, ell, q_star);
    SpectrumSummary {
        atom_value: sigma.powi(2 * layers as i32),
        mass_at_atom: mass,
        mass_at_zero: 1.0 - mass,
        regime,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma: f64,
    pub q_star: f64,
    pub mass_at_atom: f64,
    pub target_mass: f64,
    pub layers: usize,
}

const SIGMA_MIN: f64 = 1.0 + 1e-6;
const SIGMA_MAX: f64 = 2.0;

fn mass_at(sigma: f64, layers: usize) -> Result<(f64, f64)> {
    let q = solve_fixed_point(&FixedPointProblem::for_depth(sigma, layers), 0.29)?;
    Ok((theoretical_spectrum(sigma, layers, q).mass_at_atom, q))
}

/// Finds `sigma` whose fixed point `q*` puts `target_mass` of the spectrum at the atom.
///
/// For `sigma <= 1` the fixed-point equation (with `l = L`) has no positive root, so the search
/// runs over `(1, 2]`, where the mass decreases monotonically in `sigma`.
pub fn calibrate(target_mass: f64, layers: usize) -> Result<Calibration> {
    if !(target_mass > 0.0 && target_mass < 1.0) {
        return Err(Error::InvalidConfig(format!("target mass must lie in (0, 1), got {target_mass}")));
    }
    if layers == 0 {
        return Err(Error::InvalidConfig("layers must be >= 1".into()));
    }
    let (m_hi, _) = mass_at(SIGMA_MIN, layers)?;
    let (m_lo, _) = mass_at(SIGMA_MAX, layers)?;
    if !(m_lo..=m_hi).contains(&target_mass) {
        return Err(Error::Unreachable {
            target: target_mass,
            achieved_min: m_lo,
            achieved_max: m_hi,
        });
    }
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    let mut best = (lo, mass_at(lo, layers)?);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (mass, q) = mass_at(mid, layers)?;
        best = (mid, (mass, q));
        if (mass - target_mass).abs() < 1e-9 || hi - lo < 1e-15 {
            break;
        }
        if mass > target_mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (sigma, (mass, q_star)) = best;
    Ok(Calibration {
        sigma,
        q_star,
        mass_at_atom: mass,
        target_mass,
        layers,
    })
}

/// Per-layer variance and saturation fraction of `h^l`, `l = 1..=L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationProfile {
    pub per_layer_variance: Vec<f64>,
    pub per_layer_saturation_fraction: Vec<f64>,
}

impl PropagationProfile {
    pub fn max_relative_drift(&self, reference: f64) -> f64 {
        self.per_layer_variance
            .iter()
            .map(|v| (v - reference).abs() / reference)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,q_ell,saturation_fraction\n");
        for (l, (q, s)) in self
            .per_layer_variance
            .iter()
            .zip(&self.per_layer_saturation_fraction)
            .enumerate()
        {
            let _ = writeln!(out, "{},{q},{s}", l + 1);
        }
        out
    }
}

/// Count, mean and sum of squared deviations, merged chunk by chunk.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Moments {
        let (n, sum) = values.clone().fold((0.0, 0.0), |(n, s), v| (n + 1.0, s + v));
        if n == 0.0 {
            return Moments::default();
        }
        let mean = sum / n;
        let m2 = values.map(|v| (v - mean) * (v - mean)).sum();
        Moments { n, mean, m2 }
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0.0 {
            return other;
        }
        if other.n == 0.0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }

    fn variance(&self) -> f64 {
        if self.n == 0.0 {
            0.0
        } else {
            self.m2 / self.n
        }
    }
}

const MC_BATCH: usize = 250;

fn require_identity(config: &NetworkConfig) -> Result<()> {
    if config.init != InitKind::Identity {
        return Err(Error::InvalidConfig("signal propagation probes need an identity-initialized network".into()));
    }
    Ok(())
}

/// Feeds `n_samples` inputs with i.i.d. `N(0, q_star)` data coordinates through a fresh
/// identity-initialized network and records, per layer, the population variance of the data
/// coordinates of `h^l` pooled over samples and the fraction with `|h| >= 1`.
pub fn monte_carlo_profile(config: &NetworkConfig, rng: &mut SeededRng, n_samples: usize) -> Result<PropagationProfile> {
    require_identity(config)?;
    let mlp = InterpretableMLP::init_identity(config.clone())?;
    let sd = config.q_star.sqrt();
    monte_carlo_with(&mlp, n_samples, |row| {
        for v in row {
            *v = sd * rng.standard_normal();
        }
    })
}

/// Same as [`monte_carlo_profile`], with every data coordinate set by `fill`.
fn monte_carlo_with(mlp: &InterpretableMLP, n_samples: usize, mut fill: impl FnMut(&mut [f64])) -> Result<PropagationProfile> {
    let layers = mlp.layers();
    let c = mlp.classes();
    let m = mlp.width();
    let mut moments = vec![Moments::default(); layers];
    let mut saturated = vec![0usize; layers];
    let mut done = 0;
    while done < n_samples {
        let batch = MC_BATCH.min(n_samples - done);
        let mut inputs = vec![0.0; batch * m];
        for row in inputs.chunks_exact_mut(m) {
            fill(&mut row[c..]);
        }
        mlp.forward_batch_each(&inputs, |layer, h, _| {
            let data = h.chunks_exact(m).flat_map(|row| row[c..].iter().copied());
            moments[layer - 1] = moments[layer - 1].merge(Moments::of(data.clone()));
            saturated[layer - 1] += data.filter(|v| v.abs() >= 1.0).count();
        });
        done += batch;
    }
    let total = (n_samples * mlp.data_width()).max(1) as f64;
    Ok(PropagationProfile {
        per_layer_variance: moments.iter().map(Moments::variance).collect(),
        per_layer_saturation_fraction: saturated.iter().map(|&s| s as f64 / total).collect(),
    })
}

/// Profile for inputs all equal to zero; used as a smoke check.
pub fn monte_carlo_zero_input(config: &NetworkConfig, n_samples: usize) -> Result<PropagationProfile> {
    require_identity(config)?;
    let mlp = InterpretableMLP::init_identity(config.clone())?;
    monte_carlo_with(&mlp, n_samples, |row| row.fill(0.0))
}

/// Eigenvalues of `J J^T` over the data coordinates, one per sample and coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalSpectrum {
    pub summary: SpectrumSummary,
    pub eigenvalues: Vec<f64>,
}

impl EmpiricalSpectrum {
    pub fn eigenvalues_csv(&self) -> String {
        let mut out = String::from("eigenvalue\n");
        for v in &self.eigenvalues {
            let _ = writeln!(out, "{v}");
        }
        out
    }
}

/// Relative tolerance for classifying an eigenvalue as the atom.
pub const ATOM_RTOL: f64 = 1e-9;

/// With diagonal weights the Jacobian is diagonal, so each eigenvalue of `J J^T` is
/// `prod_l (W^l_ii phi'(h^l_i))^2`. Inputs are drawn as in [`monte_carlo_profile`].
pub fn empirical_spectrum_at_init(config: &NetworkConfig, rng: &mut SeededRng, n_samples: usize) -> Result<EmpiricalSpectrum> {
    require_identity(config)?;
    let mlp = InterpretableMLP::init_identity(config.clone())?;
    empirical_spectrum_of(&mlp, rng, n_samples)
}

/// [`empirical_spectrum_at_init`] for given weights, which must be diagonal.
pub fn empirical_spectrum_of(mlp: &InterpretableMLP, rng: &mut SeededRng, n_samples: usize) -> Result<EmpiricalSpectrum> {
    let m = mlp.width();
    let c = mlp.classes();
    let n = mlp.data_width();
    let mut diagonals = Vec::with_capacity(mlp.layers());
    for layer in 1..=mlp.layers() {
        let w = mlp.weight(layer);
        for i in 0..m {
            for j in 0..m {
                if i != j && w[(i, j)] != 0.0 {
                    return Err(Error::NotDiagonal { layer });
                }
            }
        }
        diagonals.push((0..m).map(|i| w[(i, i)]).collect::<Vec<f64>>());
    }
    let activation = mlp.config().activation;
    let sd = mlp.config().q_star.sqrt();
    let mut eigenvalues = Vec::with_capacity(n_samples * n);
    let mut done = 0;
    while done < n_samples {
        let batch = MC_BATCH.min(n_samples - done);
        let mut inputs = vec![0.0; batch * m];
        for row in inputs.chunks_exact_mut(m) {
            for v in &mut row[c..] {
                *v = sd * rng.standard_normal();
            }
        }
        let mut gain = vec![1.0; batch * n];
        mlp.forward_batch_each(&inputs, |layer, h, _| {
            let d = &diagonals[layer - 1];
            for (row, g) in h.chunks_exact(m).zip(gain.chunks_exact_mut(n)) {
                for (i, gi) in g.iter_mut().enumerate() {
                    let j = d[c + i] * activation.derivative(row[c + i]);
                    *gi *= j * j;
                }
            }
        });
        eigenvalues.extend_from_slice(&gain);
        done += batch;
    }

    let sigma = mlp.config().sigma;
    let atom = sigma.powi(2 * mlp.layers() as i32);
    let at_atom = eigenvalues
        .iter()
        .filter(|&&v| (v - atom).abs() <= ATOM_RTOL * atom.abs())
        .count();
    let mass = at_atom as f64 / eigenvalues.len().max(1) as f64;
    Ok(EmpiricalSpectrum {
        summary: SpectrumSummary {
            atom_value: atom,
            mass_at_atom: mass,
            mass_at_zero: 1.0 - mass,
            regime: Regime::of(sigma),
        },
        eigenvalues,
    })
}

/// `spectrum.csv`: theoretical and empirical summaries side by side.
pub fn spectrum_csv(theory: &SpectrumSummary, empirical: &SpectrumSummary) -> String {
    let mut out = String::from("source,atom_value,mass_at_atom,mass_at_zero,regime\n");
    for (name, s) in [("theory", theory), ("empirical", empirical)] {
        let _ = writeln!(
            out,
            "{name},{},{},{},{}",
            s.atom_value,
            s.mass_at_atom,
            s.mass_at_zero,
            s.regime.as_str()
        );
    }
    out
}
