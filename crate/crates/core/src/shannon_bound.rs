//! The Shannon lower bound and the additive test channel that sandwiches
//! the rate-distortion function from above.
//!
//! For a source with density and finite `h(X)`,
//!
//! ```text
//! R_SLB(D) = h(X) - h(Z_D) <= R(D) <= h(X + Z_D) - h(Z_D)
//! ```
//!
//! where `Z_D` has density proportional to `exp(-(d / (r D)) ||z||^r)`.
//! Everything is evaluated in log-Gamma arithmetic.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::entropy::{diff_entropy_grid, diff_entropy_knn, EntropyEstimate, EntropyMethod, DEFAULT_KNN_K};
use crate::error::{invalid, Error, Result};
use crate::geometry::{sample_cone_direction, NormSpec};
use crate::rng::stream;
use crate::sources::SourceModel;

/// Distortion `E||X - X̂||^r <= D` for a norm on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    norm: NormSpec,
    exponent: f64,
    distortion: f64,
}

impl DistortionSpec {
    pub fn new(norm: NormSpec, exponent: f64, distortion: f64) -> Result<Self> {
        if !(exponent > 0.0) || !exponent.is_finite() {
            return Err(invalid(format!("distortion exponent r must be positive, got {exponent}")));
        }
        if !(distortion > 0.0) || !distortion.is_finite() {
            return Err(invalid(format!("distortion D must be positive, got {distortion}")));
        }
        Ok(Self { norm, exponent, distortion })
    }

    pub fn norm(&self) -> &NormSpec {
        &self.norm
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    /// `r`.
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `D`.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    pub fn with_distortion(&self, distortion: f64) -> Result<Self> {
        Self::new(self.norm, self.exponent, distortion)
    }

    /// `d / r`, the shape of the radial Gamma law.
    fn shape(&self) -> f64 {
        self.dim() as f64 / self.exponent
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound {
    pub value: f64,
    /// Set when the bound is negative and therefore says nothing.
    pub vacuous: bool,
}

/// `R_SLB(D) = h + (d/r) log(1/D) - (d/r) log((r/d) (V_d Gamma(1 + d/r))^(r/d) e)`.
pub fn slb(h_x: f64, dim: usize, spec: &DistortionSpec) -> Result<LowerBound> {
    if !h_x.is_finite() {
        return Err(invalid(format!("differential entropy must be finite, got {h_x}")));
    }
    if dim != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: dim });
    }
    let a = spec.shape();
    let ln_vd = spec.norm().ln_unit_ball_volume();
    let constant = (1.0 / a).ln() + (ln_vd + ln_gamma(1.0 + a)) / a + 1.0;
    let value = h_x - a * spec.distortion().ln() - a * constant;
    Ok(LowerBound { value, vacuous: value < 0.0 })
}

/// The test-channel noise `Z_D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseChannel {
    spec: DistortionSpec,
}

impl NoiseChannel {
    pub fn new(spec: DistortionSpec) -> Self {
        Self { spec }
    }

    pub fn spec(&self) -> &DistortionSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// `log` of `(d/r)^(d/r - 1) / (V_d Gamma(d/r) D^(d/r))`.
    fn ln_normalizer(&self) -> f64 {
        let a = self.spec.shape();
        (a - 1.0) * a.ln() - self.spec.norm().ln_unit_ball_volume() - ln_gamma(a) - a * self.spec.distortion().ln()
    }

    /// Coefficient `d / (r D)` of `||z||^r` in the exponent.
    fn rate(&self) -> f64 {
        self.spec.shape() / self.spec.distortion()
    }

    pub fn ln_pdf(&self, z: &[f64]) -> Result<f64> {
        let norm = self.spec.norm().eval(z)?;
        Ok(self.ln_pdf_at_radius(norm))
    }

    fn ln_pdf_at_radius(&self, radius: f64) -> f64 {
        self.ln_normalizer() - self.rate() * radius.powf(self.spec.exponent())
    }

    pub fn pdf(&self, z: &[f64]) -> Result<f64> {
        self.ln_pdf(z).map(f64::exp)
    }

    /// `log(V_d Gamma(d/r) (r/d)^(d/r - 1) D^(d/r)) + d/r`.
    pub fn entropy(&self) -> f64 {
        let a = self.spec.shape();
        self.spec.norm().ln_unit_ball_volume() + ln_gamma(a) + (a - 1.0) * (1.0 / a).ln()
            + a * self.spec.distortion().ln()
            + a
    }

    /// `Z = T^(1/r) Θ` with `Θ` cone-distributed and `T ~ Gamma(d/r, rD/d)`.
    ///
    /// Under `t = ρ^r` the radial density `ρ^(d-1) exp(-(d/(rD)) ρ^r)`
    /// becomes `t^(d/r - 1) exp(-(d/(rD)) t)`, a Gamma law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let radial = self.radial_law()?;
        self.sample_with(&radial, rng)
    }

    fn radial_law(&self) -> Result<Gamma<f64>> {
        Gamma::new(self.spec.shape(), 1.0 / self.rate()).map_err(|e| Error::SamplingFailure(e.to_string()))
    }

    fn sample_with<R: Rng + ?Sized>(&self, radial: &Gamma<f64>, rng: &mut R) -> Result<Vec<f64>> {
        let mut dir = sample_cone_direction(self.spec.norm(), rng)?;
        let radius = radial.sample(rng).powf(1.0 / self.spec.exponent());
        dir.iter_mut().for_each(|c| *c *= radius);
        Ok(dir)
    }

    /// `n` draws, row-major.
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<f64>> {
        let radial = self.radial_law()?;
        let mut out = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            out.extend(self.sample_with(&radial, rng)?);
        }
        Ok(out)
    }

    /// Radius beyond which the density has dropped by `exp(-40)`.
    fn effective_radius(&self) -> f64 {
        (40.0 / self.rate()).powf(1.0 / self.spec.exponent())
    }
}

pub fn noise_pdf(channel: &NoiseChannel, z: &[f64]) -> Result<f64> {
    channel.pdf(z)
}

pub fn noise_entropy(channel: &NoiseChannel) -> f64 {
    channel.entropy()
}

pub fn sample_noise<R: Rng + ?Sized>(channel: &NoiseChannel, rng: &mut R) -> Result<Vec<f64>> {
    channel.sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapSettings {
    /// Grid points per noise scale `D^(1/r)` (d = 1 convolution).
    pub points_per_scale: usize,
    /// Hard cap on grid points for the d = 1 convolution.
    pub max_cells: usize,
    /// Sample count for the k-NN path (d > 1).
    pub knn_samples: usize,
    pub knn_k: usize,
}

impl Default for GapSettings {
    fn default() -> Self {
        Self { points_per_scale: 32, max_cells: 1 << 24, knn_samples: 100_000, knn_k: DEFAULT_KNN_K }
    }
}

/// Estimate of `h(X + Z_D) - h(X)`, an upper bound on `R(D) - R_SLB(D)`.
///
/// The raw value is returned unclamped; see [`reported_gap`]. For `d = 1`
/// the density of `X + Z_D` is computed by discrete convolution of exact
/// cell masses with the noise pdf, at two resolutions, and Richardson
/// extrapolated; the standard error is the extrapolation correction. For
/// `d > 1` the k-NN estimator is applied to summed samples.
pub fn gap_upper_bound<R: Rng + ?Sized>(
    source: &SourceModel,
    spec: &DistortionSpec,
    settings: &GapSettings,
    rng: &mut R,
) -> Result<EntropyEstimate> {
    if source.dim() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: source.dim() });
    }
    if !source.is_absolutely_continuous() {
        return Err(Error::NotAbsolutelyContinuous(format!("{} has no density", source.name())));
    }
    let channel = NoiseChannel::new(*spec);
    let (sum_entropy, method) = if source.dim() == 1 {
        (convolved_entropy_1d(source, &channel, settings)?, EntropyMethod::GridPlugin)
    } else {
        let mut xs = source.sample_n(rng, settings.knn_samples);
        let zs = channel.sample_n(rng, settings.knn_samples)?;
        xs.iter_mut().zip(zs.iter()).for_each(|(x, z)| *x += z);
        (diff_entropy_knn(&xs, source.dim(), settings.knn_k)?, EntropyMethod::Knn)
    };
    let source_entropy = source_entropy(source)?;
    let mut est = EntropyEstimate {
        value: sum_entropy.value - source_entropy.value,
        standard_error: sum_entropy.standard_error.hypot(source_entropy.standard_error),
        method,
        size: sum_entropy.size,
        captured_mass: sum_entropy.captured_mass,
        warning: sum_entropy.warning.or(source_entropy.warning),
    };
    if est.standard_error == 0.0 {
        est.standard_error = f64::EPSILON * est.value.abs().max(1.0);
    }
    Ok(est)
}

/// The gap bound as reported: clamped below at zero.
pub fn reported_gap(est: &EntropyEstimate) -> f64 {
    est.value.max(0.0)
}

fn source_entropy(source: &SourceModel) -> Result<EntropyEstimate> {
    if let Some(h) = source.closed_form_h() {
        return Ok(EntropyEstimate::exact(h, 1));
    }
    if source.dim() > 2 {
        return Err(Error::Unsupported(format!("no entropy available for {}", source.name())));
    }
    let (lo, hi) = source.covering_interval(1e-10)?;
    let bounds = vec![(lo, hi); source.dim()];
    let cells = if source.dim() == 1 { 1 << 16 } else { 1 << 10 };
    diff_entropy_grid(|x| source.pdf(x).unwrap_or(0.0), &bounds, cells)
}

fn convolved_entropy_1d(source: &SourceModel, channel: &NoiseChannel, settings: &GapSettings) -> Result<EntropyEstimate> {
    let noise_scale = channel.spec.distortion().powf(1.0 / channel.spec.exponent());
    let step = noise_scale.min(source.spread()) / settings.points_per_scale as f64;
    let fine = convolved_plugin(source, channel, step, settings.max_cells)?;
    let coarse = convolved_plugin(source, channel, 2.0 * step, settings.max_cells)?;
    let correction = (fine.0 - coarse.0) / 3.0;
    let mut est = EntropyEstimate {
        value: fine.0 + correction,
        standard_error: correction.abs(),
        method: EntropyMethod::GridPlugin,
        size: fine.2,
        captured_mass: Some(fine.1),
        warning: None,
    };
    if fine.1 < 1.0 - 1e-4 {
        est.warning = Some(format!("convolution grid captures only {:.6} of the mass", fine.1));
    }
    Ok(est)
}

/// Plug-in entropy of `X + Z` on a lattice of spacing `step`; returns
/// `(entropy, captured mass, cells)`.
fn convolved_plugin(
    source: &SourceModel,
    channel: &NoiseChannel,
    step: f64,
    max_cells: usize,
) -> Result<(f64, f64, usize)> {
    let (lo, hi) = source.covering_interval(1e-14)?;
    let nx = ((hi - lo) / step).ceil() as usize;
    let half = (channel.effective_radius() / step).ceil() as usize;
    let ny = nx + 2 * half;
    if ny > max_cells {
        return Err(Error::Numerical(format!("convolution grid needs {ny} cells (cap {max_cells})")));
    }
    // exact cell masses, located at cell midpoints
    let edges: Vec<f64> = (0..=nx).map(|j| lo + j as f64 * step).collect();
    let masses: Vec<f64> =
        edges.windows(2).map(|w| source.interval_mass(w[0], w[1])).collect::<Result<_>>()?;
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|t| (channel.ln_pdf_at_radius((t as f64 - half as f64).abs() * step)).exp())
        .collect();

    // y_i = lo + (i - half + 1/2) step, density sum_j m_j k(y_i - x_j)
    let density: Vec<f64> = (0..ny)
        .into_par_iter()
        .map(|i| {
            let j_lo = i.saturating_sub(2 * half);
            let j_hi = i.min(nx - 1);
            let mut acc = 0.0;
            for j in j_lo..=j_hi {
                acc += masses[j] * kernel[i - j];
            }
            acc
        })
        .collect();
    let mut h = 0.0;
    let mut mass = 0.0;
    for f in density {
        if f > 0.0 {
            h -= f * f.ln();
            mass += f;
        }
    }
    Ok((h * step, mass * step, ny))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapPoint {
    pub distortion: f64,
    pub slb: LowerBound,
    pub gap: std::result::Result<EntropyEstimate, Error>,
}

/// Gap bounds over a strictly decreasing distortion grid. Point `i` uses
/// random stream `i` of `seed`; failures are kept per point.
pub fn gap_sweep(
    source: &SourceModel,
    norm: NormSpec,
    exponent: f64,
    distortions: &[f64],
    settings: &GapSettings,
    seed: u64,
) -> Result<Vec<GapPoint>> {
    if distortions.is_empty() {
        return Err(invalid("empty distortion grid"));
    }
    if distortions.iter().any(|d| !(*d > 0.0)) || distortions.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("distortion grid must be positive and strictly decreasing"));
    }
    let h_x = source_entropy(source)?.value;
    distortions
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let spec = DistortionSpec::new(norm, exponent, d)?;
            let bound = slb(h_x, source.dim(), &spec)?;
            let mut rng = stream(seed, i as u64);
            let gap = gap_upper_bound(source, &spec, settings, &mut rng);
            Ok(GapPoint { distortion: d, slb: bound, gap })
        })
        .collect()
}
