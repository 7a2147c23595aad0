//! High-resolution uniform scalar quantization: output entropy and
//! distortion of `q(x) = c_i` on cells `[iΔ, (i+1)Δ)`, and the excess rate
//! over `R(D)` and `R_SLB(D)`.

use std::f64::consts::{E, PI};
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rayon::prelude::*;

use crate::entropy::discrete_entropy;
use crate::error::{invalid, Error, Result};
use crate::geometry::NormSpec;
use crate::rd_solver::RdCurve;
use crate::shannon_bound::{slb, DistortionSpec};
use crate::sources::{ScalarLaw, SourceModel};

/// Mass allowed outside the enumerated cells.
pub const TAIL_MASS: f64 = 1e-12;
pub const CELL_BUDGET: usize = 10_000_000;
const QUAD_NODES: usize = 8;
const MEDIAN_BISECTIONS: usize = 80;

/// `½ log(πe/6)`, the high-resolution excess rate of uniform quantization
/// under squared error.
pub fn high_resolution_excess() -> f64 {
    0.5 * (PI * E / 6.0).ln()
}

/// Where each cell maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reconstruction {
    /// Centroid for `r = 2`, median for `r = 1`, midpoint otherwise.
    #[default]
    WithinCell,
    Midpoint,
}

/// Reference `R(D)` for the excess-rate comparison.
#[derive(Debug, Clone)]
pub enum RdOracle {
    /// Closed forms: Gaussian with `r = 2`, Laplacian with `r = 1`.
    Analytic,
    Curve(RdCurve),
    None,
}

impl RdOracle {
    /// `R(D)`, or `None` where the oracle has no value.
    pub fn rate(&self, source: &SourceModel, exponent: f64, distortion: f64) -> Option<f64> {
        match self {
            RdOracle::Analytic => analytic_rate(source, exponent, distortion),
            RdOracle::Curve(curve) => curve.rate_at(distortion),
            RdOracle::None => None,
        }
    }
}

/// Closed-form `R(D)` where one is known in one dimension.
pub fn analytic_rate(source: &SourceModel, exponent: f64, distortion: f64) -> Option<f64> {
    if source.dim() != 1 || !(distortion > 0.0) {
        return None;
    }
    match (source.scalar_law()?, exponent) {
        (ScalarLaw::Gaussian { variance, .. }, r) if r == 2.0 => Some((0.5 * (variance / distortion).ln()).max(0.0)),
        (ScalarLaw::Laplacian { rate, .. }, r) if r == 1.0 => Some((-(rate * distortion).ln()).max(0.0)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerReport {
    pub step: f64,
    /// `H(q(X))`, nats.
    pub entropy: f64,
    /// `E|X - q(X)|^r`.
    pub distortion: f64,
    /// `H - R(D)`, when the oracle covers `D`.
    pub gap_to_rd: Option<f64>,
    /// `H - R_SLB(D)`.
    pub gap_to_slb: f64,
    pub cells: usize,
}

/// Entropy and distortion of the uniform quantizer with step `step`.
pub fn uniform_quantizer_report(
    source: &SourceModel,
    step: f64,
    exponent: f64,
    reconstruction: Reconstruction,
    oracle: &RdOracle,
) -> Result<QuantizerReport> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(invalid(format!("quantizer step must be positive, got {step}")));
    }
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(invalid(format!("distortion exponent must be positive, got {exponent}")));
    }
    let law = match source.scalar_law() {
        Some(law) if source.is_absolutely_continuous() => law,
        _ => return Err(Error::Unsupported("uniform quantization needs a one-dimensional density".to_string())),
    };
    let h_x = source
        .closed_form_h()
        .ok_or_else(|| Error::Unsupported("no differential entropy for this source".to_string()))?;
    let (first, count) = cell_range(source, law, step)?;
    let rule = GaussLegendre::new(NonZeroUsize::new(QUAD_NODES).unwrap());
    let nodes = rule.as_node_weight_pairs();
    let cell_edge = |i: i64| i as f64 * step;
    let mut masses = Vec::with_capacity(count);
    let mut distortion = 0.0;
    for k in 0..count as i64 {
        let (a, b) = (cell_edge(first + k), cell_edge(first + k + 1));
        let mass = law.interval_mass(a, b);
        masses.push(mass);
        if mass == 0.0 {
            continue;
        }
        let center = match (reconstruction, exponent) {
            (Reconstruction::WithinCell, r) if r == 2.0 => {
                let (m0, m1) = pieces(law, a, b, None).fold((0.0, 0.0), |acc, (lo, hi)| {
                    let m = moments(law, nodes, lo, hi, a);
                    (acc.0 + m.0, acc.1 + m.1)
                });
                if m0 > 0.0 {
                    a + m1 / m0
                } else {
                    0.5 * (a + b)
                }
            }
            (Reconstruction::WithinCell, r) if r == 1.0 => cell_median(law, a, b, mass),
            _ => 0.5 * (a + b),
        };
        distortion += pieces(law, a, b, Some(center))
            .map(|(lo, hi)| {
                let half = 0.5 * (hi - lo);
                let mid = 0.5 * (hi + lo);
                half * nodes
                    .iter()
                    .map(|(x, w)| {
                        let t = mid + half * x;
                        w * (t - center).abs().powf(exponent) * law.pdf(t)
                    })
                    .sum::<f64>()
            })
            .sum::<f64>();
    }
    let entropy = discrete_entropy(&masses)?.value;
    let spec = DistortionSpec::new(NormSpec::euclidean(1)?, exponent, distortion)?;
    let gap_to_slb = entropy - slb(h_x, 1, &spec)?.value;
    let gap_to_rd = oracle.rate(source, exponent, distortion).map(|r| entropy - r);
    Ok(QuantizerReport { step, entropy, distortion, gap_to_rd, gap_to_slb, cells: count })
}

/// Index of the first cell and the number of cells leaving at most
/// `TAIL_MASS` outside.
fn cell_range(source: &SourceModel, law: &ScalarLaw, step: f64) -> Result<(i64, usize)> {
    let (lo, hi) = source.covering_interval(TAIL_MASS)?;
    let first = (lo / step).floor();
    let last = (hi / step).ceil();
    let count = last - first;
    if !(count <= CELL_BUDGET as f64) {
        return Err(Error::Numerical(format!(
            "reaching tail mass {TAIL_MASS:e} at step {step} needs {count:.3e} cells, budget is {CELL_BUDGET}"
        )));
    }
    let (first, count) = (first as i64, count as usize);
    let outside = law.interval_mass(f64::NEG_INFINITY, first as f64 * step)
        + law.interval_mass((first + count as i64) as f64 * step, f64::INFINITY);
    if outside > TAIL_MASS {
        return Err(Error::Numerical(format!("tail mass {outside:e} left outside the cells exceeds {TAIL_MASS:e}")));
    }
    Ok((first, count))
}

/// `[a, b]` split at pdf breakpoints and at `extra`.
fn pieces(law: &ScalarLaw, a: f64, b: f64, extra: Option<f64>) -> impl Iterator<Item = (f64, f64)> {
    let mut cuts = vec![a];
    let mut inner = law.breakpoints(a, b);
    if let Some(c) = extra.filter(|c| *c > a && *c < b) {
        inner.push(c);
        inner.sort_by(f64::total_cmp);
    }
    cuts.extend(inner);
    cuts.push(b);
    let pairs: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).filter(|(l, h)| h > l).collect();
    pairs.into_iter()
}

/// `(∫ f, ∫ (x - origin) f)` over `[lo, hi]`.
fn moments(law: &ScalarLaw, nodes: &[(f64, f64)], lo: f64, hi: f64, origin: f64) -> (f64, f64) {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    nodes.iter().fold((0.0, 0.0), |acc, (x, w)| {
        let t = mid + half * x;
        let f = w * half * law.pdf(t);
        (acc.0 + f, acc.1 + f * (t - origin))
    })
}

/// Point splitting the cell mass in half, by bisection on CDF differences.
fn cell_median(law: &ScalarLaw, a: f64, b: f64, mass: f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    for _ in 0..MEDIAN_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if law.interval_mass(a, mid) < 0.5 * mass {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `H(q_Δ(X)) - R(D_Δ)` over a grid of steps. Each entry is the full report
/// or the reason it is missing, including oracle coverage gaps.
pub fn gish_pierce_gap(
    source: &SourceModel,
    steps: &[f64],
    exponent: f64,
    oracle: &RdOracle,
) -> Vec<(f64, Result<QuantizerReport>)> {
    steps
        .par_iter()
        .map(|&step| {
            let report = uniform_quantizer_report(source, step, exponent, Reconstruction::WithinCell, oracle)
                .and_then(|rep| match rep.gap_to_rd {
                    Some(_) => Ok(rep),
                    None => Err(Error::Numerical(format!("rate oracle does not cover D = {:e}", rep.distortion))),
                });
            (step, report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rd_solver::{discretize, rd_curve, BaSettings};
    use crate::sources::{make_gaussian, make_laplacian, make_uniform};
    use std::f64::consts::LN_2;

    fn report(source: &SourceModel, step: f64, r: f64) -> QuantizerReport {
        uniform_quantizer_report(source, step, r, Reconstruction::WithinCell, &RdOracle::Analytic).unwrap()
    }

    /// Composite Simpson over a fine sub-grid of every cell, reconstruction
    /// chosen by the same rule but computed from scratch.
    fn simpson_distortion(pdf: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64, r: f64) -> f64 {
        let sub = 400;
        let simpson = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| {
            let h = (b - a) / sub as f64;
            let mut s = g(a) + g(b);
            for k in 1..sub {
                s += g(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        let first = (lo / step).floor() as i64;
        let last = (hi / step).ceil() as i64;
        let mut total = 0.0;
        for i in first..last {
            let (a, b) = (i as f64 * step, (i + 1) as f64 * step);
            let m0 = simpson(&|x| pdf(x), a, b);
            if m0 < 1e-300 {
                continue;
            }
            let c = if r == 2.0 {
                simpson(&|x| x * pdf(x), a, b) / m0
            } else {
                // median by bisection on the Simpson CDF
                let (mut l, mut h) = (a, b);
                for _ in 0..60 {
                    let m = 0.5 * (l + h);
                    if simpson(&|x| pdf(x), a, m) < 0.5 * m0 {
                        l = m;
                    } else {
                        h = m;
                    }
                }
                0.5 * (l + h)
            };
            total += simpson(&|x| (x - c).abs().powf(r) * pdf(x), a, c.max(a)) + simpson(&|x| (x - c).abs().powf(r) * pdf(x), c.min(b), b);
        }
        total
    }

    #[test]
    fn uniform_eighth_is_exact() {
        let u = make_uniform(0.0, 1.0).unwrap();
        let rep = report(&u, 0.125, 2.0);
        assert_eq!(rep.cells, 8);
        assert!((rep.entropy - 8f64.ln()).abs() < 1e-12);
        assert!((rep.distortion - 1.0 / 768.0).abs() < 1e-16);
        assert!(rep.gap_to_rd.is_none());
    }

    #[test]
    fn gaussian_entropy_plus_log_step_tends_to_h() {
        let g = make_gaussian(1, 1.0).unwrap();
        let h = 0.5 * (2.0 * PI * E).ln();
        let rep = report(&g, 1e-3, 2.0);
        assert!((rep.entropy + 1e-3f64.ln() - h).abs() < 1e-3);
    }

    #[test]
    fn gaussian_distortion_matches_quadrature_oracle() {
        let g = make_gaussian(1, 1.0).unwrap();
        let pdf = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        for step in [0.5, 0.1] {
            let rep = report(&g, step, 2.0);
            let oracle = simpson_distortion(pdf, -8.0, 8.0, step, 2.0);
            assert!((rep.distortion - oracle).abs() < 1e-9 * oracle, "{step}: {} vs {oracle}", rep.distortion);
        }
        let rep = report(&g, 1e-2, 2.0);
        assert!((rep.distortion / (1e-4 / 12.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn laplacian_median_reconstruction_matches_oracle() {
        let l = make_laplacian(1.0).unwrap();
        let pdf = |x: f64| 0.5 * (-x.abs()).exp();
        let step = 0.3;
        let rep = report(&l, step, 1.0);
        let oracle = simpson_distortion(pdf, -30.0, 30.0, step, 1.0);
        assert!((rep.distortion - oracle).abs() < 1e-9 * oracle, "{} vs {oracle}", rep.distortion);
        // the median never does worse than the midpoint
        let mid = uniform_quantizer_report(&l, step, 1.0, Reconstruction::Midpoint, &RdOracle::Analytic).unwrap();
        assert!(rep.distortion < mid.distortion);
        assert_eq!(rep.entropy, mid.entropy);
    }

    #[test]
    fn distortion_scales_as_step_squared_over_twelve() {
        let sources = [make_gaussian(1, 1.0).unwrap(), make_laplacian(1.0).unwrap(), make_uniform(0.0, 1.0).unwrap()];
        for s in &sources {
            let rep = report(s, 1e-3, 2.0);
            assert!((rep.distortion / 1e-6 * 12.0 - 1.0).abs() < 0.01, "{}", s.name());
        }
    }

    #[test]
    fn entropy_non_increasing_in_step() {
        for s in [make_gaussian(1, 1.0).unwrap(), make_laplacian(1.0).unwrap()] {
            let steps = [1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0];
            let hs: Vec<f64> = steps.iter().map(|d| report(&s, *d, 2.0).entropy).collect();
            assert!(hs.windows(2).all(|w| w[1] <= w[0]), "{hs:?}");
        }
    }

    #[test]
    fn half_step_shift_barely_moves_entropy() {
        let g = make_gaussian(1, 1.0).unwrap();
        let a = report(&g, 1e-3, 2.0).entropy;
        let b = report(&g.shifted(0.5e-3).unwrap(), 1e-3, 2.0).entropy;
        assert!((a - b).abs() < 1e-2);
    }

    #[test]
    fn gaussian_excess_approaches_high_resolution_limit() {
        let g = make_gaussian(1, 1.0).unwrap();
        let pts = gish_pierce_gap(&g, &[1e-1, 1e-2, 1e-3], 2.0, &RdOracle::Analytic);
        let excess: Vec<f64> = pts.iter().map(|(_, r)| r.as_ref().unwrap().gap_to_rd.unwrap()).collect();
        let limit = high_resolution_excess();
        assert!((excess[2] - limit).abs() < 0.01, "{excess:?}");
        let dist: Vec<f64> = excess.iter().map(|e| (e - limit).abs()).collect();
        assert!(dist.windows(2).all(|w| w[1] <= w[0]), "{dist:?}");
        // the Shannon lower bound is R(D) itself for a Gaussian under squared error
        for (_, r) in &pts {
            let rep = r.as_ref().unwrap();
            assert!((rep.gap_to_slb - rep.gap_to_rd.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_oracle_agrees_with_lower_bound_gap() {
        // Laplacian under squared error: R(D) is not known in closed form,
        // the Shannon lower bound is tight as D -> 0
        let l = make_laplacian(1.0).unwrap();
        let step = 0.3;
        let problem = discretize(&l, (-20.0, 20.0), 2000, 2000, 2.0).unwrap();
        let slopes: Vec<f64> = (0..16).map(|k| -20.0 * 1.25f64.powi(k)).collect();
        let curve = rd_curve(&problem, &slopes, &BaSettings::default()).unwrap();
        let rep = uniform_quantizer_report(&l, step, 2.0, Reconstruction::WithinCell, &RdOracle::Curve(curve)).unwrap();
        let gap = rep.gap_to_rd.expect("curve covers the quantizer distortion");
        assert!((rep.gap_to_slb - gap).abs() < 2.0 * crate::rd_solver::DISCRETIZATION_ALLOWANCE);
        // uncovered distortions are reported as failures
        let far = gish_pierce_gap(&l, &[1e-3], 2.0, &RdOracle::Curve(rd_curve(&problem, &[-30.0], &BaSettings::default()).unwrap()));
        assert!(far[0].1.is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let g = make_gaussian(1, 1.0).unwrap();
        assert!(uniform_quantizer_report(&g, 0.0, 2.0, Reconstruction::WithinCell, &RdOracle::None).is_err());
        assert!(uniform_quantizer_report(&g, 1e-7, 2.0, Reconstruction::WithinCell, &RdOracle::None).is_err());
        let g2 = make_gaussian(2, 1.0).unwrap();
        assert!(uniform_quantizer_report(&g2, 0.1, 2.0, Reconstruction::WithinCell, &RdOracle::None).is_err());
        assert!((analytic_rate(&g, 2.0, 0.25).unwrap() - LN_2).abs() < 1e-15);
    }
}
