//! Source models: pdf, sampler, CDF and closed-form entropies.
//!
//! Scalar families are lifted to `d` dimensions as i.i.d. products, which
//! keeps every closed-form entropy additive over components.

use std::f64::consts::{E, LN_2, PI, SQRT_2};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{invalid, Error, Result};

/// Tail mass left out when summing CDF differences over unit cells.
pub const FLOOR_ENTROPY_TAIL: f64 = 1e-12;

/// Truncated realization of the one-dimensional source with pdf
/// `sum_m p_m m 1{m <= x < m + 1/m}`, `p_m ∝ 1/(m log^2 m)`.
///
/// The weights are renormalized by the partial sum `K_M`, so every finite
/// truncation is a genuine density.
#[derive(Debug, Clone, PartialEq)]
pub struct PathologicalSpec {
    max_index: usize,
    partial_sum: f64,
    /// renormalized cell masses, entry `k` belongs to `m = k + 2`
    masses: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PathologicalSpec {
    pub fn new(max_index: usize) -> Result<Self> {
        if max_index < 2 {
            return Err(invalid(format!("truncation level must be >= 2, got {max_index}")));
        }
        let raw: Vec<f64> = (2..=max_index)
            .map(|m| {
                let m = m as f64;
                1.0 / (m * m.ln().powi(2))
            })
            .collect();
        // small terms first
        let partial_sum: f64 = raw.iter().rev().sum();
        let masses: Vec<f64> = raw.iter().map(|w| w / partial_sum).collect();
        let mut acc = 0.0;
        let cumulative = masses
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect();
        Ok(Self { max_index, partial_sum, masses, cumulative })
    }

    /// Truncation level `M`.
    pub fn max_index(&self) -> usize {
        self.max_index
    }

    /// `K_M = sum_{m=2}^{M} 1/(m log^2 m)`.
    pub fn partial_sum(&self) -> f64 {
        self.partial_sum
    }

    /// Renormalized mass of the cell `[m, m + 1/m)`.
    pub fn mass(&self, m: usize) -> f64 {
        if (2..=self.max_index).contains(&m) {
            self.masses[m - 2]
        } else {
            0.0
        }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Exact `H(floor X)` by direct summation.
    pub fn floor_entropy(&self) -> f64 {
        self.masses.iter().rev().filter(|q| **q > 0.0).map(|q| -q * q.ln()).sum()
    }

    /// Exact `h(X)` by direct summation: the density on cell `m` is `q_m m`.
    pub fn differential_entropy(&self) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .rev()
            .filter(|(_, q)| **q > 0.0)
            .map(|(k, q)| -q * (q.ln() + ((k + 2) as f64).ln()))
            .sum()
    }

    fn pdf(&self, x: f64) -> f64 {
        if !(x >= 2.0) {
            return 0.0;
        }
        let m = x.floor() as usize;
        if m > self.max_index {
            return 0.0;
        }
        let mf = m as f64;
        if x < mf + 1.0 / mf {
            self.masses[m - 2] * mf
        } else {
            0.0
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        if !(x >= 2.0) {
            return 0.0;
        }
        let m = x.floor() as usize;
        if m > self.max_index {
            return 1.0;
        }
        let below = if m > 2 { self.cumulative[m - 3] } else { 0.0 };
        let mf = m as f64;
        below + self.masses[m - 2] * ((x - mf) * mf).min(1.0)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
        let k = self.cumulative.partition_point(|c| *c <= u).min(self.masses.len() - 1);
        let m = (k + 2) as f64;
        m + rng.random::<f64>() / m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalarLaw {
    Gaussian { mean: f64, variance: f64 },
    /// density `rate/2 exp(-rate |x - location|)`
    Laplacian { rate: f64, location: f64 },
    Uniform { low: f64, high: f64 },
    /// density `exponent / (2 scale Gamma(1/exponent)) exp(-(|x|/scale)^exponent)`
    GeneralizedGaussian { exponent: f64, scale: f64 },
    Pathological(Arc<PathologicalSpec>),
}

impl ScalarLaw {
    pub(crate) fn pdf(&self, x: f64) -> f64 {
        match self {
            Self::Gaussian { mean, variance } => {
                (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
            }
            Self::Laplacian { rate, location } => 0.5 * rate * (-rate * (x - location).abs()).exp(),
            Self::Uniform { low, high } => {
                if x >= *low && x < *high {
                    1.0 / (high - low)
                } else {
                    0.0
                }
            }
            Self::GeneralizedGaussian { exponent, scale } => {
                let log_norm = exponent.ln() - LN_2 - scale.ln() - ln_gamma(1.0 / exponent);
                (log_norm - (x.abs() / scale).powf(*exponent)).exp()
            }
            Self::Pathological(spec) => spec.pdf(x),
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Gaussian { mean, variance } => 0.5 * erfc(-(x - mean) / (SQRT_2 * variance.sqrt())),
            Self::Laplacian { rate, location } => {
                let t = x - location;
                if t < 0.0 {
                    0.5 * (rate * t).exp()
                } else {
                    1.0 - 0.5 * (-rate * t).exp()
                }
            }
            Self::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            Self::GeneralizedGaussian { exponent, scale } => {
                let t = (x.abs() / scale).powf(*exponent);
                if t == 0.0 {
                    return 0.5;
                }
                if x < 0.0 {
                    0.5 * gamma_ur(1.0 / exponent, t)
                } else {
                    1.0 - 0.5 * gamma_ur(1.0 / exponent, t)
                }
            }
            Self::Pathological(spec) => spec.cdf(x),
        }
    }

    /// `1 - cdf(x)` without cancellation in the right tail.
    fn sf(&self, x: f64) -> f64 {
        match self {
            Self::Gaussian { mean, variance } => 0.5 * erfc((x - mean) / (SQRT_2 * variance.sqrt())),
            Self::Laplacian { rate, location } => {
                let t = x - location;
                if t > 0.0 {
                    0.5 * (-rate * t).exp()
                } else {
                    1.0 - 0.5 * (rate * t).exp()
                }
            }
            Self::GeneralizedGaussian { exponent, scale } if x > 0.0 => {
                0.5 * gamma_ur(1.0 / exponent, (x / scale).powf(*exponent))
            }
            _ => 1.0 - self.cdf(x),
        }
    }

    fn median(&self) -> f64 {
        match self {
            Self::Gaussian { mean, .. } => *mean,
            Self::Laplacian { location, .. } => *location,
            Self::Uniform { low, high } => 0.5 * (low + high),
            Self::GeneralizedGaussian { .. } => 0.0,
            Self::Pathological(spec) => {
                let k = spec.cumulative.partition_point(|c| *c < 0.5);
                (k + 2) as f64
            }
        }
    }

    /// Rough spread used to size grids and search brackets.
    fn spread(&self) -> f64 {
        match self {
            Self::Gaussian { variance, .. } => variance.sqrt(),
            Self::Laplacian { rate, .. } => SQRT_2 / rate,
            Self::Uniform { low, high } => high - low,
            Self::GeneralizedGaussian { exponent, scale } => {
                scale * (ln_gamma(3.0 / exponent) - ln_gamma(1.0 / exponent)).exp().sqrt()
            }
            Self::Pathological(spec) => spec.max_index as f64,
        }
    }

    pub(crate) fn bounded_support(&self) -> Option<(f64, f64)> {
        match self {
            Self::Uniform { low, high } => Some((*low, *high)),
            Self::Pathological(spec) => Some((2.0, spec.max_index as f64 + 1.0 / spec.max_index as f64)),
            _ => None,
        }
    }

    /// Points in `(a, b)` where the pdf jumps or has a kink, ascending.
    pub(crate) fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts = match self {
            Self::Gaussian { .. } => Vec::new(),
            Self::Laplacian { location, .. } => vec![*location],
            Self::Uniform { low, high } => vec![*low, *high],
            Self::GeneralizedGaussian { .. } => vec![0.0],
            Self::Pathological(spec) => {
                let first = a.max(2.0).floor() as usize;
                let last = (b.floor() as usize).min(spec.max_index);
                (first..=last).flat_map(|m| [m as f64, m as f64 + 1.0 / m as f64]).collect()
            }
        };
        pts.retain(|x| *x > a && *x < b);
        pts
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            Self::Laplacian { rate, location } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                // inverse CDF; 1 - 2|u| lies in (0, 1]
                location - u.signum() * (1.0 - 2.0 * u.abs()).ln() / rate
            }
            Self::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Self::GeneralizedGaussian { exponent, scale } => {
                let g = Gamma::new(1.0 / exponent, 1.0).expect("validated exponent");
                let mag = scale * g.sample(rng).powf(1.0 / exponent);
                if rng.random::<bool>() { mag } else { -mag }
            }
            Self::Pathological(spec) => spec.sample(rng),
        }
    }

    fn differential_entropy(&self) -> f64 {
        match self {
            Self::Gaussian { variance, .. } => 0.5 * (2.0 * PI * E * variance).ln(),
            Self::Laplacian { rate, .. } => (2.0 * E / rate).ln(),
            Self::Uniform { low, high } => (high - low).ln(),
            Self::GeneralizedGaussian { exponent, scale } => {
                1.0 / exponent + (2.0 * scale / exponent).ln() + ln_gamma(1.0 / exponent)
            }
            Self::Pathological(spec) => spec.differential_entropy(),
        }
    }

    fn has_floor_entropy(&self) -> bool {
        !matches!(self, Self::GeneralizedGaussian { .. })
    }

    /// Probability of `[a, b)`, using whichever tail avoids cancellation.
    pub(crate) fn interval_mass(&self, a: f64, b: f64) -> f64 {
        if a >= self.median() {
            (self.sf(a) - self.sf(b)).max(0.0)
        } else {
            (self.cdf(b) - self.cdf(a)).max(0.0)
        }
    }

    fn floor_entropy(&self) -> Result<f64> {
        if let Self::Pathological(spec) = self {
            return Ok(spec.floor_entropy());
        }
        let masses = unit_cell_masses(self, FLOOR_ENTROPY_TAIL, 10_000_000)?;
        Ok(masses.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum())
    }
}

/// Masses of the cells `[i, i+1)` expanding outward from the median until
/// both tails hold less than `tail / 2`.
fn unit_cell_masses(law: &ScalarLaw, tail: f64, budget: usize) -> Result<Vec<f64>> {
    let start = law.median().floor();
    let mut masses = vec![law.interval_mass(start, start + 1.0)];
    let (mut lo, mut hi) = (start, start + 1.0);
    while law.cdf(lo) >= 0.5 * tail || law.sf(hi) >= 0.5 * tail {
        if masses.len() >= budget {
            return Err(Error::Numerical(format!("cell budget {budget} exhausted before tail < {tail:e}")));
        }
        if law.cdf(lo) >= 0.5 * tail {
            masses.push(law.interval_mass(lo - 1.0, lo));
            lo -= 1.0;
        }
        if law.sf(hi) >= 0.5 * tail {
            masses.push(law.interval_mass(hi, hi + 1.0));
            hi += 1.0;
        }
    }
    Ok(masses)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceKind {
    /// `dim` independent copies of a scalar law.
    Product { law: ScalarLaw, dim: usize },
    /// Discrete part with probability `weight`, continuous part otherwise.
    Mixture { weight: f64, atoms: Vec<(Vec<f64>, f64)>, continuous: Box<SourceModel> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    name: String,
    kind: SourceKind,
}

pub fn make_gaussian(dim: usize, variance: f64) -> Result<SourceModel> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(invalid(format!("variance must be positive, got {variance}")));
    }
    product("gaussian", ScalarLaw::Gaussian { mean: 0.0, variance }, dim)
}

pub fn make_laplacian(rate: f64) -> Result<SourceModel> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(invalid(format!("rate must be positive, got {rate}")));
    }
    product("laplacian", ScalarLaw::Laplacian { rate, location: 0.0 }, 1)
}

pub fn make_uniform(low: f64, high: f64) -> Result<SourceModel> {
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(invalid(format!("uniform needs low < high, got [{low}, {high})")));
    }
    product("uniform", ScalarLaw::Uniform { low, high }, 1)
}

pub fn make_generalized_gaussian(exponent: f64, scale: f64) -> Result<SourceModel> {
    if !(exponent > 0.0) || !(scale > 0.0) || !exponent.is_finite() || !scale.is_finite() {
        return Err(invalid(format!(
            "generalized Gaussian needs exponent > 0 and scale > 0, got ({exponent}, {scale})"
        )));
    }
    product("generalized-gaussian", ScalarLaw::GeneralizedGaussian { exponent, scale }, 1)
}

pub fn make_pathological(max_index: usize) -> Result<SourceModel> {
    let spec = PathologicalSpec::new(max_index)?;
    product("pathological", ScalarLaw::Pathological(Arc::new(spec)), 1)
}

/// `weight` is the probability of the discrete part; atom probabilities must
/// sum to one.
pub fn make_mixture(weight: f64, atoms: Vec<(Vec<f64>, f64)>, continuous: SourceModel) -> Result<SourceModel> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(invalid(format!("mixture weight must lie in [0, 1], got {weight}")));
    }
    if matches!(continuous.kind, SourceKind::Mixture { .. }) {
        return Err(invalid("continuous part of a mixture must be absolutely continuous"));
    }
    if weight > 0.0 && atoms.is_empty() {
        return Err(invalid("mixture with positive weight needs at least one atom"));
    }
    let total: f64 = atoms.iter().map(|(_, p)| *p).sum();
    if atoms.iter().any(|(_, p)| !(*p >= 0.0)) || (!atoms.is_empty() && (total - 1.0).abs() > 1e-9) {
        return Err(invalid(format!("atom probabilities must be nonnegative and sum to 1 (sum {total})")));
    }
    if let Some((pt, _)) = atoms.iter().find(|(pt, _)| pt.len() != continuous.dim()) {
        return Err(Error::DimensionMismatch { expected: continuous.dim(), got: pt.len() });
    }
    Ok(SourceModel {
        name: format!("mixture({})", continuous.name),
        kind: SourceKind::Mixture { weight, atoms, continuous: Box::new(continuous) },
    })
}

fn product(name: &str, law: ScalarLaw, dim: usize) -> Result<SourceModel> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    Ok(SourceModel { name: name.to_string(), kind: SourceKind::Product { law, dim } })
}

impl SourceModel {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &SourceKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SourceKind::Product { dim, .. } => *dim,
            SourceKind::Mixture { continuous, .. } => continuous.dim(),
        }
    }

    /// The scalar law when this is a one-dimensional product model.
    pub fn scalar_law(&self) -> Option<&ScalarLaw> {
        match &self.kind {
            SourceKind::Product { law, dim: 1 } => Some(law),
            _ => None,
        }
    }

    /// A mixture with a positive atom weight has no density.
    pub fn is_absolutely_continuous(&self) -> bool {
        match &self.kind {
            SourceKind::Product { .. } => true,
            SourceKind::Mixture { weight, .. } => *weight == 0.0,
        }
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        match &self.kind {
            SourceKind::Product { law, .. } => Ok(x.iter().map(|v| law.pdf(*v)).product()),
            SourceKind::Mixture { weight, continuous, .. } if *weight == 0.0 => continuous.pdf(x),
            SourceKind::Mixture { .. } => {
                Err(Error::Unsupported("mixture with atoms has no pdf".to_string()))
            }
        }
    }

    /// One-dimensional CDF.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(self.require_scalar("cdf")?.cdf(x))
    }

    /// One-dimensional survival function `P(X > x)`.
    pub fn sf(&self, x: f64) -> Result<f64> {
        Ok(self.require_scalar("sf")?.sf(x))
    }

    /// `P(a <= X < b)` for one-dimensional models.
    pub fn interval_mass(&self, a: f64, b: f64) -> Result<f64> {
        Ok(self.require_scalar("interval_mass")?.interval_mass(a, b))
    }

    pub fn median(&self) -> Result<f64> {
        Ok(self.require_scalar("median")?.median())
    }

    fn require_scalar(&self, op: &str) -> Result<&ScalarLaw> {
        self.scalar_law()
            .ok_or_else(|| Error::Unsupported(format!("{op} is only available for one-dimensional product models")))
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.kind {
            SourceKind::Product { law, .. } => out.iter_mut().for_each(|v| *v = law.sample(rng)),
            SourceKind::Mixture { weight, atoms, continuous } => {
                if *weight > 0.0 && rng.random::<f64>() < *weight {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = &atoms[atoms.len() - 1].0;
                    for (pt, p) in atoms {
                        acc += p;
                        if u < acc {
                            chosen = pt;
                            break;
                        }
                    }
                    out.copy_from_slice(chosen);
                } else {
                    continuous.sample_into(rng, out);
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    /// `n` draws stored row-major in a flat vector of length `n * dim`.
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        for row in out.chunks_exact_mut(d) {
            self.sample_into(rng, row);
        }
        out
    }

    /// `h(X)` in nats.
    pub fn closed_form_h(&self) -> Option<f64> {
        match &self.kind {
            SourceKind::Product { law, dim } => Some(*dim as f64 * law.differential_entropy()),
            SourceKind::Mixture { weight, continuous, .. } if *weight == 0.0 => continuous.closed_form_h(),
            SourceKind::Mixture { .. } => None,
        }
    }

    /// `H(floor X)` in nats, from CDF differences (or direct summation for
    /// the pathological family).
    pub fn closed_form_floor_entropy(&self) -> Option<f64> {
        match &self.kind {
            SourceKind::Product { law, dim } if law.has_floor_entropy() => {
                law.floor_entropy().ok().map(|h| *dim as f64 * h)
            }
            _ => None,
        }
    }

    /// Per-axis interval holding all but roughly `tail` of the mass.
    pub fn covering_interval(&self, tail: f64) -> Result<(f64, f64)> {
        let law = match &self.kind {
            SourceKind::Product { law, .. } => law,
            SourceKind::Mixture { .. } => {
                return Err(Error::Unsupported("covering interval of a mixture".to_string()))
            }
        };
        if let Some(b) = law.bounded_support() {
            return Ok(b);
        }
        let per_axis = tail / (2.0 * self.dim() as f64);
        let med = law.median();
        let step = law.spread();
        let mut lo = med - step;
        while law.cdf(lo) > per_axis {
            lo -= step;
        }
        let mut hi = med + step;
        while law.sf(hi) > per_axis {
            hi += step;
        }
        Ok((lo, hi))
    }

    /// Typical scale of one component (standard deviation or width).
    pub fn spread(&self) -> f64 {
        match &self.kind {
            SourceKind::Product { law, .. } => law.spread(),
            SourceKind::Mixture { continuous, .. } => continuous.spread(),
        }
    }

    /// The same model translated by `delta` along every axis.
    pub fn shifted(&self, delta: f64) -> Result<SourceModel> {
        self.map_law(|law| match law {
            ScalarLaw::Gaussian { mean, variance } => Ok(ScalarLaw::Gaussian { mean: mean + delta, variance: *variance }),
            ScalarLaw::Laplacian { rate, location } => {
                Ok(ScalarLaw::Laplacian { rate: *rate, location: location + delta })
            }
            ScalarLaw::Uniform { low, high } => Ok(ScalarLaw::Uniform { low: low + delta, high: high + delta }),
            _ => Err(Error::Unsupported("shift of this family".to_string())),
        })
    }

    /// Law of `factor * X` for `factor > 0` about the origin.
    pub fn scaled(&self, factor: f64) -> Result<SourceModel> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(invalid(format!("scale factor must be positive, got {factor}")));
        }
        self.map_law(|law| match law {
            ScalarLaw::Gaussian { mean, variance } => {
                Ok(ScalarLaw::Gaussian { mean: mean * factor, variance: variance * factor * factor })
            }
            ScalarLaw::Laplacian { rate, location } => {
                Ok(ScalarLaw::Laplacian { rate: rate / factor, location: location * factor })
            }
            ScalarLaw::Uniform { low, high } => Ok(ScalarLaw::Uniform { low: low * factor, high: high * factor }),
            ScalarLaw::GeneralizedGaussian { exponent, scale } => {
                Ok(ScalarLaw::GeneralizedGaussian { exponent: *exponent, scale: scale * factor })
            }
            ScalarLaw::Pathological(_) => Err(Error::Unsupported("scaling the pathological family".to_string())),
        })
    }

    fn map_law(&self, f: impl Fn(&ScalarLaw) -> Result<ScalarLaw>) -> Result<SourceModel> {
        match &self.kind {
            SourceKind::Product { law, dim } => {
                Ok(SourceModel { name: self.name.clone(), kind: SourceKind::Product { law: f(law)?, dim: *dim } })
            }
            SourceKind::Mixture { .. } => Err(Error::Unsupported("transforming a mixture".to_string())),
        }
    }
}
