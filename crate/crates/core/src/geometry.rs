//! Norms on `R^d`, volumes of their unit balls, and direction sampling.
//!
//! Only the `p`-norm family is supported. The max-norm is a separate
//! variant so that `Gamma(1 + 1/p)` never has to be evaluated at `p = inf`.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Error, Result};

/// Above this dimension `p`-norm directions are drawn from the
/// generalized-Gaussian product law instead of cube rejection.
pub const REJECTION_MAX_DIM: usize = 8;

pub const DEFAULT_REJECTION_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `(sum |x_i|^p)^(1/p)` with `1 <= p < inf`.
    P(f64),
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSpec {
    kind: NormKind,
    dim: usize,
}

impl NormSpec {
    /// `p = f64::INFINITY` maps to [`NormKind::Max`].
    pub fn p_norm(p: f64, dim: usize) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            return Self::max_norm(dim);
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(invalid(format!("norm exponent must satisfy p >= 1, got {p}")));
        }
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(Self { kind: NormKind::P(p), dim })
    }

    pub fn max_norm(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        Ok(Self { kind: NormKind::Max, dim })
    }

    pub fn euclidean(dim: usize) -> Result<Self> {
        Self::p_norm(2.0, dim)
    }

    pub fn kind(&self) -> NormKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same norm family in another dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        match self.kind {
            NormKind::P(p) => Self::p_norm(p, dim),
            NormKind::Max => Self::max_norm(dim),
        }
    }

    /// Exponent as a float; `inf` for the max-norm.
    pub fn exponent(&self) -> f64 {
        match self.kind {
            NormKind::P(p) => p,
            NormKind::Max => f64::INFINITY,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64]) -> f64 {
        match self.kind {
            NormKind::Max => x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            NormKind::P(p) if p == 1.0 => x.iter().map(|v| v.abs()).sum(),
            NormKind::P(p) if p == 2.0 => {
                // scaled to avoid overflow for huge entries
                let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if scale == 0.0 {
                    return 0.0;
                }
                scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
            }
            NormKind::P(p) => {
                let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if scale == 0.0 {
                    return 0.0;
                }
                scale * x.iter().map(|v| (v.abs() / scale).powf(p)).sum::<f64>().powf(1.0 / p)
            }
        }
    }

    /// `log V_d`, evaluated with log-Gamma arithmetic.
    pub fn ln_unit_ball_volume(&self) -> f64 {
        let d = self.dim as f64;
        match self.kind {
            NormKind::Max => d * std::f64::consts::LN_2,
            NormKind::P(p) => {
                d * (std::f64::consts::LN_2 + ln_gamma(1.0 + 1.0 / p)) - ln_gamma(1.0 + d / p)
            }
        }
    }

    /// Lebesgue volume of `{x : ||x|| <= 1}`.
    pub fn unit_ball_volume(&self) -> f64 {
        self.ln_unit_ball_volume().exp()
    }
}

pub fn norm_eval(x: &[f64], norm: &NormSpec) -> Result<f64> {
    norm.eval(x)
}

pub fn unit_ball_volume(norm: &NormSpec) -> f64 {
    norm.unit_ball_volume()
}

/// Draws `V / ||V||` with `V` uniform on the unit ball, i.e. a direction
/// distributed according to the cone measure of the norm's unit sphere.
pub fn sample_cone_direction<R: Rng + ?Sized>(norm: &NormSpec, rng: &mut R) -> Result<Vec<f64>> {
    sample_cone_direction_with_cap(norm, rng, DEFAULT_REJECTION_CAP)
}

pub fn sample_cone_direction_with_cap<R: Rng + ?Sized>(
    norm: &NormSpec,
    rng: &mut R,
    cap: usize,
) -> Result<Vec<f64>> {
    let d = norm.dim();
    if d == 1 {
        return Ok(vec![if rng.random::<bool>() { 1.0 } else { -1.0 }]);
    }
    match norm.kind() {
        NormKind::P(p) if d > REJECTION_MAX_DIM => generalized_gaussian_direction(norm, p, rng),
        _ => rejection_direction(norm, rng, cap),
    }
}

fn rejection_direction<R: Rng + ?Sized>(norm: &NormSpec, rng: &mut R, cap: usize) -> Result<Vec<f64>> {
    let d = norm.dim();
    let mut v = vec![0.0; d];
    for _ in 0..cap {
        for c in v.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        let n = norm.eval_unchecked(&v);
        if n <= 1.0 && n > 0.0 {
            v.iter_mut().for_each(|c| *c /= n);
            return Ok(v);
        }
    }
    Err(Error::SamplingFailure(format!(
        "cube rejection exceeded {cap} iterations (d = {d}, expected acceptance {:.3e})",
        (norm.ln_unit_ball_volume() - d as f64 * std::f64::consts::LN_2).exp()
    )))
}

/// Product of densities proportional to `exp(-|t|^p)`, normalized by its
/// `p`-norm. The normalized vector follows the cone measure.
fn generalized_gaussian_direction<R: Rng + ?Sized>(norm: &NormSpec, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    let gamma = Gamma::new(1.0 / p, 1.0).map_err(|e| Error::SamplingFailure(e.to_string()))?;
    loop {
        let v: Vec<f64> = (0..norm.dim())
            .map(|_| {
                let mag = gamma.sample(rng).powf(1.0 / p);
                if rng.random::<bool>() { mag } else { -mag }
            })
            .collect();
        let n = norm.eval_unchecked(&v);
        if n > 0.0 && n.is_finite() {
            return Ok(v.into_iter().map(|c| c / n).collect());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use std::f64::consts::PI;

    #[test]
    fn norm_examples() {
        let l2 = NormSpec::euclidean(2).unwrap();
        assert_eq!(l2.eval(&[3.0, 4.0]).unwrap(), 5.0);
        let l1 = NormSpec::p_norm(1.0, 3).unwrap();
        assert_eq!(l1.eval(&[1.0, -2.0, 3.0]).unwrap(), 6.0);
        for spec in [l1, NormSpec::max_norm(3).unwrap(), NormSpec::p_norm(3.5, 3).unwrap()] {
            assert_eq!(spec.eval(&[0.0; 3]).unwrap(), 0.0);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let l2 = NormSpec::euclidean(2).unwrap();
        assert_eq!(l2.eval(&[1.0]), Err(Error::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(NormSpec::p_norm(0.5, 2).is_err());
        assert!(NormSpec::p_norm(f64::NAN, 2).is_err());
        assert!(NormSpec::p_norm(2.0, 0).is_err());
        assert_eq!(NormSpec::p_norm(f64::INFINITY, 2).unwrap().kind(), NormKind::Max);
    }

    #[test]
    fn ball_volumes() {
        assert!((NormSpec::euclidean(2).unwrap().unit_ball_volume() - PI).abs() < 1e-13);
        let cross = NormSpec::p_norm(1.0, 3).unwrap().unit_ball_volume();
        assert!((cross - 4.0 / 3.0).abs() < 1e-13);
        assert!((NormSpec::max_norm(4).unwrap().unit_ball_volume() - 16.0).abs() < 1e-12);
        assert!((NormSpec::euclidean(3).unwrap().unit_ball_volume() - 4.0 * PI / 3.0).abs() < 1e-13);
        // large d stays finite through log-Gamma
        let v = NormSpec::p_norm(1.5, 400).unwrap().ln_unit_ball_volume();
        assert!(v.is_finite());
    }

    #[test]
    fn one_dimensional_directions_are_signs() {
        let norm = NormSpec::euclidean(1).unwrap();
        let mut rng = stream(3, 0);
        let n = 20_000;
        let pos = (0..n)
            .map(|_| sample_cone_direction(&norm, &mut rng).unwrap()[0])
            .inspect(|v| assert!(*v == 1.0 || *v == -1.0))
            .filter(|v| *v > 0.0)
            .count();
        let frac = pos as f64 / n as f64;
        assert!((frac - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn directions_lie_on_unit_sphere() {
        let mut rng = stream(11, 0);
        for spec in [
            NormSpec::p_norm(1.0, 3).unwrap(),
            NormSpec::p_norm(1.5, 5).unwrap(),
            NormSpec::max_norm(4).unwrap(),
            NormSpec::p_norm(3.0, 12).unwrap(),
            NormSpec::euclidean(20).unwrap(),
        ] {
            for _ in 0..500 {
                let v = sample_cone_direction(&spec, &mut rng).unwrap();
                assert!((spec.eval(&v).unwrap() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn planar_direction_mean_and_angle_law() {
        let norm = NormSpec::euclidean(2).unwrap();
        let mut rng = stream(5, 0);
        let n = 100_000;
        let mut angles = Vec::with_capacity(n);
        let (mut sx, mut sy) = (0.0, 0.0);
        for _ in 0..n {
            let v = sample_cone_direction(&norm, &mut rng).unwrap();
            sx += v[0];
            sy += v[1];
            angles.push(v[1].atan2(v[0]).rem_euclid(2.0 * PI));
        }
        // each coordinate has variance 1/2 on the circle
        let se = (0.5 / n as f64).sqrt();
        assert!((sx / n as f64).abs() < 3.0 * se);
        assert!((sy / n as f64).abs() < 3.0 * se);

        angles.sort_by(f64::total_cmp);
        let ks = angles
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let cdf = a / (2.0 * PI);
                (cdf - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - cdf).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn rejection_cap_reports_failure() {
        let norm = NormSpec::p_norm(1.0, 8).unwrap();
        let mut rng = stream(1, 0);
        // acceptance rate 1/8! makes one iteration almost surely fail
        let err = sample_cone_direction_with_cap(&norm, &mut rng, 1);
        match err {
            Err(Error::SamplingFailure(msg)) => assert!(msg.contains("rejection")),
            Ok(v) => assert!((norm.eval(&v).unwrap() - 1.0).abs() < 1e-9),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
