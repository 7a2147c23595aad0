//! Information dimension, the perturbation lemma experiments and the
//! floor-entropy inequalities used by the converse.
//!
//! Every experiment evaluates its grid points independently. Monte Carlo
//! experiments draw their samples once and reuse them at every grid point,
//! so neighbouring estimates share most of their sampling error.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;

use crate::entropy::{floor_entropy_of_samples, EntropyEstimate, MIN_SAMPLES};
use crate::error::{invalid, Error, Result};
use crate::rng::stream;
use crate::shannon_bound::NoiseChannel;
use crate::sources::{SourceKind, SourceModel};

/// Smallest sample count accepted by the dimension estimator.
pub const MIN_DIMENSION_SAMPLES: usize = 10_000;
/// A grid point is undersampled once it occupies more than `n / 10` cells.
pub const UNDERSAMPLING_RATIO: f64 = 0.1;
const MAX_CLIP_CELLS: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionEstimate {
    pub m_grid: Vec<u64>,
    /// `H(floor(m X))` for every `m`.
    pub entropies: Vec<EntropyEstimate>,
    /// Occupied cells at every `m`.
    pub cells: Vec<usize>,
    /// Least-squares slope of `H` against `log m` over the top half of the
    /// grid points that are not undersampled.
    pub slope: f64,
    /// Root-mean-square residual of that fit.
    pub residual: f64,
    /// Grid indices entering the fit.
    pub fit: std::ops::Range<usize>,
    pub samples: usize,
    pub undersampled: bool,
}

fn check_m_grid(m_grid: &[u64]) -> Result<()> {
    if m_grid.len() < 2 {
        return Err(invalid("information dimension needs at least two grid values"));
    }
    if let Some(m) = m_grid.iter().find(|m| !m.is_power_of_two()) {
        return Err(invalid(format!("grid values must be powers of two, got {m}")));
    }
    if m_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("grid values must be strictly increasing"));
    }
    if *m_grid.last().unwrap() > 1 << 40 {
        return Err(invalid("grid values above 2^40 are not supported"));
    }
    Ok(())
}

/// Slope and RMS residual of the least-squares line through `(x, y)`.
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    (slope, (rss / n).sqrt())
}

/// Estimates `lim H(floor(m X)) / log m` from `n` draws of `source`.
pub fn info_dimension<R: Rng + ?Sized>(
    source: &SourceModel,
    m_grid: &[u64],
    n: usize,
    rng: &mut R,
) -> Result<DimensionEstimate> {
    if n < MIN_DIMENSION_SAMPLES {
        return Err(invalid(format!("information dimension needs n >= {MIN_DIMENSION_SAMPLES}, got {n}")));
    }
    check_m_grid(m_grid)?;
    let samples = source.sample_n(rng, n);
    info_dimension_of_samples(&samples, source.dim(), m_grid)
}

/// As [`info_dimension`], for a row-major sample set.
pub fn info_dimension_of_samples(samples: &[f64], dim: usize, m_grid: &[u64]) -> Result<DimensionEstimate> {
    check_m_grid(m_grid)?;
    if dim == 0 || samples.len() % dim != 0 {
        return Err(invalid("sample buffer length is not a multiple of the dimension"));
    }
    let n = samples.len() / dim;
    if n < MIN_DIMENSION_SAMPLES {
        return Err(invalid(format!("information dimension needs n >= {MIN_DIMENSION_SAMPLES}, got {n}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("samples must be finite"));
    }
    let points = m_grid
        .par_iter()
        .map(|&m| floor_entropy_of_samples(samples, dim, m as f64))
        .collect::<Result<Vec<_>>>()?;
    let (entropies, cells): (Vec<_>, Vec<_>) = points.into_iter().unzip();

    let limit = UNDERSAMPLING_RATIO * n as f64;
    let undersampled = cells.iter().any(|c| *c as f64 > limit);
    // undersampled points stay in the report but not in the fit
    let usable = match cells.iter().take_while(|c| **c as f64 <= limit).count() {
        u if u >= 2 => u,
        _ => m_grid.len(),
    };
    let fit_points = usable.div_ceil(2).max(2);
    let fit = usable - fit_points..usable;
    let x: Vec<f64> = m_grid[fit.clone()].iter().map(|m| (*m as f64).ln()).collect();
    let y: Vec<f64> = entropies[fit.clone()].iter().map(|e| e.value).collect();
    let (slope, residual) = least_squares(&x, &y);
    Ok(DimensionEstimate {
        m_grid: m_grid.to_vec(),
        entropies,
        cells,
        slope,
        residual,
        fit,
        samples: n,
        undersampled,
    })
}

fn exact_floor_entropy(source: &SourceModel) -> Option<EntropyEstimate> {
    source.closed_form_floor_entropy().map(|h| EntropyEstimate::exact(h, 0))
}

fn check_channel(source: &SourceModel, noise: &NoiseChannel) -> Result<()> {
    if noise.dim() != source.dim() {
        return Err(Error::DimensionMismatch { expected: source.dim(), got: noise.dim() });
    }
    Ok(())
}

/// `H(floor(X + eps Z))` for each `eps`, from one shared draw of `(X, Z)`.
///
/// `eps = 0` returns the exact `H(floor X)` when the source has one.
pub fn lemma1_convergence<R: Rng + ?Sized>(
    source: &SourceModel,
    noise: &NoiseChannel,
    eps_grid: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<(f64, EntropyEstimate)>> {
    check_channel(source, noise)?;
    if let Some(e) = eps_grid.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(invalid(format!("perturbation scales must be finite and nonnegative, got {e}")));
    }
    if eps_grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(invalid("perturbation grid must be strictly decreasing"));
    }
    if n < MIN_SAMPLES {
        return Err(invalid(format!("perturbation experiment needs n >= {MIN_SAMPLES}, got {n}")));
    }
    let x = source.sample_n(rng, n);
    let z = noise.sample_n(rng, n)?;
    let dim = source.dim();
    let exact = exact_floor_entropy(source);
    eps_grid
        .par_iter()
        .map(|&eps| {
            if eps == 0.0 {
                if let Some(e) = &exact {
                    return Ok((eps, e.clone()));
                }
            }
            let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a + eps * b).collect();
            floor_entropy_of_samples(&y, dim, 1.0).map(|(e, _)| (eps, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub max_index: usize,
    /// `H(floor(X_M + eps Z))`.
    pub perturbed: EntropyEstimate,
    /// Exact `H(floor X_M)`.
    pub unperturbed: f64,
    /// `H(floor(eps Z))` from the same noise draws.
    pub noise_floor: EntropyEstimate,
    /// `H(floor X_M) + H(floor(eps Z)) + d log 2`.
    pub upper_bound: f64,
}

/// Perturbed floor entropies along truncations of the pathological family.
pub fn lemma1_divergence<R: Rng + ?Sized>(
    max_indices: &[usize],
    eps: f64,
    noise: &NoiseChannel,
    n: usize,
    rng: &mut R,
) -> Result<Vec<DivergenceRow>> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid(format!("perturbation scale must be finite and nonnegative, got {eps}")));
    }
    if max_indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("truncation grid must be strictly increasing"));
    }
    if noise.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: noise.dim() });
    }
    if n < MIN_SAMPLES {
        return Err(invalid(format!("perturbation experiment needs n >= {MIN_SAMPLES}, got {n}")));
    }
    let sources = max_indices
        .iter()
        .map(|m| crate::sources::make_pathological(*m))
        .collect::<Result<Vec<_>>>()?;
    let z: Vec<f64> = noise.sample_n(rng, n)?.into_iter().map(|v| eps * v).collect();
    let (noise_floor, _) = floor_entropy_of_samples(&z, 1, 1.0)?;
    let seed: u64 = rng.random();
    sources
        .par_iter()
        .enumerate()
        .map(|(i, source)| {
            let unperturbed = source.closed_form_floor_entropy().expect("pathological floor entropy is exact");
            let perturbed = if eps == 0.0 {
                EntropyEstimate::exact(unperturbed, 0)
            } else {
                let mut x = source.sample_n(&mut stream(seed, i as u64), n);
                x.iter_mut().zip(&z).for_each(|(a, b)| *a += b);
                floor_entropy_of_samples(&x, 1, 1.0)?.0
            };
            Ok(DivergenceRow {
                max_index: max_indices[i],
                perturbed,
                unperturbed,
                noise_floor: noise_floor.clone(),
                upper_bound: unperturbed + noise_floor.value + std::f64::consts::LN_2,
            })
        })
        .collect()
}

fn check_upsilons(upsilons: &[f64]) -> Result<()> {
    if let Some(u) = upsilons.iter().find(|u| !(**u > 0.0) || !u.is_finite()) {
        return Err(invalid(format!("clipping levels must be positive and finite, got {u}")));
    }
    if upsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("clipping levels must be strictly increasing"));
    }
    if upsilons.iter().any(|u| 2.0 * u > MAX_CLIP_CELLS) {
        return Err(invalid(format!("clipping levels above {} are not supported", MAX_CLIP_CELLS / 2.0)));
    }
    Ok(())
}

/// `H(g(floor X))` where `g` clips every coordinate to `[-u, u]`, computed
/// exactly from the marginal CDF.
///
/// Cells `k <= -u` and `k >= u` merge into the two boundary values.
pub fn clipped_floor_entropy(source: &SourceModel, upsilons: &[f64]) -> Result<Vec<(f64, EntropyEstimate)>> {
    check_upsilons(upsilons)?;
    let (law, dim) = match source.kind() {
        SourceKind::Product { law, dim } => (law, *dim),
        SourceKind::Mixture { .. } => {
            return Err(Error::Unsupported("exact clipped entropy of a mixture; use samples".to_string()))
        }
    };
    Ok(upsilons
        .iter()
        .map(|&u| {
            let lo = (-u).floor() + 1.0;
            let hi = u.ceil();
            let mut masses = vec![law.interval_mass(f64::NEG_INFINITY, lo)];
            let mut k = lo;
            while k < hi {
                masses.push(law.interval_mass(k, k + 1.0));
                k += 1.0;
            }
            masses.push(law.interval_mass(hi, f64::INFINITY));
            let h: f64 = masses.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
            (u, EntropyEstimate::exact(dim as f64 * h, masses.len()))
        })
        .collect())
}

/// Plug-in `H(g(floor X))` from row-major samples.
pub fn clipped_floor_entropy_of_samples(
    samples: &[f64],
    dim: usize,
    upsilons: &[f64],
) -> Result<Vec<(f64, EntropyEstimate)>> {
    check_upsilons(upsilons)?;
    if dim == 0 || samples.len() % dim != 0 {
        return Err(invalid("sample buffer length is not a multiple of the dimension"));
    }
    upsilons
        .par_iter()
        .map(|&u| {
            // clipping to the boundary cell keeps floor() of the clipped value on the merged cell
            let clipped: Vec<f64> = samples.iter().map(|x| x.floor().clamp((-u).floor(), u.ceil())).collect();
            floor_entropy_of_samples(&clipped, dim, 1.0).map(|(e, _)| (u, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConverseReport {
    pub dim: usize,
    /// `H(floor X | floor X̂)`.
    pub h_x_given_xhat: f64,
    /// `H(floor(X - X̂))`.
    pub h_difference: f64,
    /// `H(floor X | floor X̂, floor(X - X̂))`.
    pub h_x_given_xhat_difference: f64,
    /// `d log 2`.
    pub carry_bound: f64,
}

impl ConverseReport {
    /// Slack allowed for rounding in the entropy sums.
    const SLACK: f64 = 1e-12;

    pub fn chain_rhs(&self) -> f64 {
        self.h_difference + self.h_x_given_xhat_difference
    }

    /// `H(floor X | floor X̂) <= H(floor(X - X̂)) + H(floor X | floor X̂, floor(X - X̂))`.
    pub fn chain_holds(&self) -> bool {
        self.h_x_given_xhat <= self.chain_rhs() + Self::SLACK
    }

    /// `H(floor X | floor X̂, floor(X - X̂)) <= d log 2`.
    pub fn carry_holds(&self) -> bool {
        self.h_x_given_xhat_difference <= self.carry_bound + Self::SLACK
    }
}

type Cell = Vec<i64>;

fn joint_entropy<K: Ord>(masses: &BTreeMap<K, f64>) -> f64 {
    masses.values().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

fn marginal<K: Ord + Clone, J: Ord>(masses: &BTreeMap<K, f64>, key: impl Fn(&K) -> J) -> BTreeMap<J, f64> {
    let mut out = BTreeMap::new();
    for (k, p) in masses {
        *out.entry(key(k)).or_insert(0.0) += p;
    }
    out
}

/// Evaluates both converse inequalities on a finite joint law given as
/// weighted pairs `(x, x̂, probability)`.
pub fn converse_inequality_check(law: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<ConverseReport> {
    let dim = law.first().map(|(x, _, _)| x.len()).ok_or_else(|| invalid("empty joint law"))?;
    if dim == 0 {
        return Err(invalid("points must have positive dimension"));
    }
    let mut total = 0.0;
    let mut cells: BTreeMap<(Cell, Cell, Cell), f64> = BTreeMap::new();
    for (x, xh, p) in law {
        if x.len() != dim || xh.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: if x.len() != dim { x.len() } else { xh.len() } });
        }
        if !(*p >= 0.0) || !p.is_finite() {
            return Err(invalid(format!("probabilities must be finite and nonnegative, found {p}")));
        }
        if x.iter().chain(xh).any(|v| !v.is_finite()) {
            return Err(invalid("points must be finite"));
        }
        let fx = x.iter().map(|v| v.floor() as i64).collect();
        let fxh = xh.iter().map(|v| v.floor() as i64).collect();
        let fd = x.iter().zip(xh).map(|(a, b)| (a - b).floor() as i64).collect();
        *cells.entry((fx, fxh, fd)).or_insert(0.0) += p;
        total += p;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("joint law sums to {total}, not 1")));
    }
    let h_all = joint_entropy(&cells);
    let h_x_xh = joint_entropy(&marginal(&cells, |(a, b, _)| (a.clone(), b.clone())));
    let h_xh = joint_entropy(&marginal(&cells, |(_, b, _)| b.clone()));
    let h_xh_d = joint_entropy(&marginal(&cells, |(_, b, c)| (b.clone(), c.clone())));
    let h_d = joint_entropy(&marginal(&cells, |(_, _, c)| c.clone()));
    Ok(ConverseReport {
        dim,
        h_x_given_xhat: (h_x_xh - h_xh).max(0.0),
        h_difference: h_d,
        h_x_given_xhat_difference: (h_all - h_xh_d).max(0.0),
        carry_bound: dim as f64 * std::f64::consts::LN_2,
    })
}
