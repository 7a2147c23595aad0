//! Discrete and differential entropy, in nats.
//!
//! Estimators never return infinite values. Count-based estimates use the
//! Miller–Madow correction, k-NN estimates use the Kozachenko–Leonenko
//! estimator under the Euclidean metric whatever distortion norm is in use.

use std::collections::HashMap;
use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::Rng;
use statrs::function::gamma::digamma;

use crate::error::{invalid, Error, Result};
use crate::geometry::NormSpec;
use crate::rng::stream;
use crate::sources::SourceModel;

pub const JACKKNIFE_BLOCKS: usize = 10;
pub const KNN_RESAMPLES: usize = 10;
// subset membership is a u16 bitmask
const _: () = assert!(KNN_RESAMPLES <= 16);
pub const DEFAULT_KNN_K: usize = 3;
pub const MIN_SAMPLES: usize = 1000;
/// Fraction of exactly repeated samples above which k-NN input is refused.
pub const MAX_TIE_FRACTION: f64 = 0.01;
const JITTER_SCALE: f64 = 1e-12;
const JITTER_SEED: u64 = 0x6a69_7474_6572;
const QUERY_CHUNK: usize = 4096;
/// Neighbors fetched per query before widening.
const SHARED_NEIGHBORS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntropyMethod {
    Exact,
    GridPlugin,
    Knn,
    McCounts,
}

impl EntropyMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::GridPlugin => "grid-plugin",
            Self::Knn => "knn",
            Self::McCounts => "mc-counts",
        }
    }
}

impl std::fmt::Display for EntropyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub method: EntropyMethod,
    /// Number of samples, or cells for grid and exact computations.
    pub size: usize,
    /// Mass captured by the integration box (grid estimates only).
    pub captured_mass: Option<f64>,
    pub warning: Option<String>,
}

impl EntropyEstimate {
    pub fn exact(value: f64, size: usize) -> Self {
        Self { value, standard_error: 0.0, method: EntropyMethod::Exact, size, captured_mass: None, warning: None }
    }

    fn estimated(value: f64, standard_error: f64, method: EntropyMethod, size: usize) -> Self {
        Self { value, standard_error, method, size, captured_mass: None, warning: None }
    }
}

fn check_pmf(pmf: &[f64]) -> Result<()> {
    if pmf.is_empty() {
        return Err(invalid("empty pmf"));
    }
    if let Some(p) = pmf.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(invalid(format!("pmf entries must be finite and nonnegative, found {p}")));
    }
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("pmf sums to {total}, not 1")));
    }
    Ok(())
}

fn entropy_unchecked(pmf: &[f64]) -> f64 {
    pmf.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

/// `-sum p log p` with `0 log 0 = 0`.
pub fn discrete_entropy(pmf: &[f64]) -> Result<EntropyEstimate> {
    check_pmf(pmf)?;
    Ok(EntropyEstimate::exact(entropy_unchecked(pmf), pmf.len()))
}

/// `H(row | column)` for a joint pmf given as rows.
pub fn conditional_entropy(joint: &[Vec<f64>]) -> Result<f64> {
    let cols = joint.first().map(|r| r.len()).unwrap_or(0);
    if joint.iter().any(|r| r.len() != cols) {
        return Err(invalid("joint pmf rows have unequal lengths"));
    }
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    check_pmf(&flat)?;
    let column: Vec<f64> = (0..cols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    Ok(entropy_unchecked(&flat) - entropy_unchecked(&column))
}

/// Plug-in entropy of counts plus the Miller–Madow term `(K - 1) / 2n`.
fn miller_madow(counts: &[u64], n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let mut h = 0.0;
    let mut occupied = 0usize;
    for &c in counts {
        if c > 0 {
            let cf = c as f64;
            h += cf * (nf / cf).ln();
            occupied += 1;
        }
    }
    h / nf + (occupied.saturating_sub(1)) as f64 / (2.0 * nf)
}

/// Assigns every row of `samples` (scaled by `scale`, then floored) a dense
/// cell id in order of first appearance.
fn floor_cell_ids(samples: &[f64], dim: usize, scale: f64) -> (Vec<u32>, usize) {
    let mut ids = Vec::with_capacity(samples.len() / dim);
    if dim == 1 {
        let mut map: HashMap<i64, u32> = HashMap::new();
        for x in samples {
            let key = (scale * x).floor() as i64;
            let next = map.len() as u32;
            ids.push(*map.entry(key).or_insert(next));
        }
        return (ids, map.len());
    }
    let mut map: HashMap<Vec<i64>, u32> = HashMap::new();
    for row in samples.chunks_exact(dim) {
        let key: Vec<i64> = row.iter().map(|x| (scale * x).floor() as i64).collect();
        let next = map.len() as u32;
        ids.push(*map.entry(key).or_insert(next));
    }
    (ids, map.len())
}

/// Miller–Madow entropy of `floor(scale * X)` from row-major samples, with a
/// jackknife standard error over contiguous blocks.
pub fn floor_entropy_of_samples(samples: &[f64], dim: usize, scale: f64) -> Result<(EntropyEstimate, usize)> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(invalid("sample buffer length is not a multiple of the dimension"));
    }
    let n = samples.len() / dim;
    if n < JACKKNIFE_BLOCKS {
        return Err(invalid(format!("need at least {JACKKNIFE_BLOCKS} samples")));
    }
    let (ids, cells) = floor_cell_ids(samples, dim, scale);
    let mut counts = vec![0u64; cells];
    for &id in &ids {
        counts[id as usize] += 1;
    }
    let full = miller_madow(&counts, n as u64);

    let block = n / JACKKNIFE_BLOCKS;
    let mut leave_out = Vec::with_capacity(JACKKNIFE_BLOCKS);
    for b in 0..JACKKNIFE_BLOCKS {
        let range = b * block..if b + 1 == JACKKNIFE_BLOCKS { n } else { (b + 1) * block };
        let removed = range.len() as u64;
        for &id in &ids[range.clone()] {
            counts[id as usize] -= 1;
        }
        leave_out.push(miller_madow(&counts, n as u64 - removed));
        for &id in &ids[range] {
            counts[id as usize] += 1;
        }
    }
    let b = JACKKNIFE_BLOCKS as f64;
    let mean = leave_out.iter().sum::<f64>() / b;
    let var = (b - 1.0) / b * leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((EntropyEstimate::estimated(full, var.sqrt(), EntropyMethod::McCounts, n), cells))
}

/// Monte Carlo estimate of `H(floor X)`.
pub fn floor_entropy_mc<R: Rng + ?Sized>(source: &SourceModel, n: usize, rng: &mut R) -> Result<EntropyEstimate> {
    if n < MIN_SAMPLES {
        return Err(invalid(format!("floor entropy needs n >= {MIN_SAMPLES}, got {n}")));
    }
    let samples = source.sample_n(rng, n);
    floor_entropy_of_samples(&samples, source.dim(), 1.0).map(|(e, _)| e)
}

/// Midpoint-rule plug-in of `-∫ f log f` over an axis-aligned box.
///
/// The standard error is the Richardson estimate `|H_n - H_{n/2}| / 3` of
/// the discretization error.
pub fn diff_entropy_grid<F>(pdf: F, bounds: &[(f64, f64)], cells_per_axis: usize) -> Result<EntropyEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    let d = bounds.len();
    if d == 0 || d > 2 {
        return Err(invalid(format!("grid entropy supports d = 1 or 2, got {d}")));
    }
    if cells_per_axis < 256 {
        return Err(invalid(format!("need at least 256 cells per axis, got {cells_per_axis}")));
    }
    if bounds.iter().any(|(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(invalid("grid bounds must be finite with lo < hi"));
    }
    let (h, mass) = grid_plugin(&pdf, bounds, cells_per_axis)?;
    let (h_coarse, _) = grid_plugin(&pdf, bounds, cells_per_axis / 2)?;
    let mut est = EntropyEstimate::estimated(
        h,
        (h - h_coarse).abs() / 3.0,
        EntropyMethod::GridPlugin,
        cells_per_axis.pow(d as u32),
    );
    est.captured_mass = Some(mass);
    if mass < 1.0 - 1e-4 {
        est.warning = Some(format!("box captures only {mass:.6} of the mass"));
    }
    Ok(est)
}

fn grid_plugin<F: Fn(&[f64]) -> f64>(pdf: &F, bounds: &[(f64, f64)], cells: usize) -> Result<(f64, f64)> {
    let widths: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / cells as f64).collect();
    let vol: f64 = widths.iter().product();
    let mid = |axis: usize, i: usize| bounds[axis].0 + (i as f64 + 0.5) * widths[axis];
    let mut h = 0.0;
    let mut mass = 0.0;
    let mut visit = |x: &[f64]| -> Result<()> {
        let f = pdf(x);
        if !f.is_finite() || f < 0.0 {
            return Err(Error::Numerical(format!("pdf returned {f} at {x:?}")));
        }
        if f > 0.0 {
            h -= f * f.ln();
            mass += f;
        }
        Ok(())
    };
    if bounds.len() == 1 {
        for i in 0..cells {
            visit(&[mid(0, i)])?;
        }
    } else {
        for i in 0..cells {
            let x0 = mid(0, i);
            for j in 0..cells {
                visit(&[x0, mid(1, j)])?;
            }
        }
    }
    Ok((h * vol, mass * vol))
}

/// Kozachenko–Leonenko estimate of `h(X)` from row-major samples.
///
/// Standard error from [`KNN_RESAMPLES`] half-size subsamples, scaled by
/// `1/sqrt(2)`. Ties are broken by a deterministic jitter; inputs with more
/// than 1% exact repeats are refused.
pub fn diff_entropy_knn(samples: &[f64], dim: usize, k: usize) -> Result<EntropyEstimate> {
    if dim == 0 || samples.len() % dim != 0 {
        return Err(invalid("sample buffer length is not a multiple of the dimension"));
    }
    let n = samples.len() / dim;
    if n < MIN_SAMPLES {
        return Err(invalid(format!("k-NN entropy needs at least {MIN_SAMPLES} samples, got {n}")));
    }
    if k == 0 || k >= n / 2 {
        return Err(invalid(format!("neighbor order k = {k} out of range")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite sample".to_string()));
    }
    let ties = repeated_fraction(samples, dim);
    if ties > MAX_TIE_FRACTION {
        return Err(Error::NotAbsolutelyContinuous(format!(
            "{:.2}% of samples are exact repeats (limit {:.0}%)",
            100.0 * ties,
            100.0 * MAX_TIE_FRACTION
        )));
    }
    let mut rng = stream(JITTER_SEED, n as u64);
    let jittered: Vec<f64> = samples
        .iter()
        .map(|x| x + JITTER_SCALE * x.abs().max(1.0) * rng.random_range(-1.0..1.0))
        .collect();

    let half = n / 2;
    let mut order: Vec<usize> = (0..n).collect();
    let mut subsets = Vec::with_capacity(KNN_RESAMPLES);
    for _ in 0..KNN_RESAMPLES {
        order.shuffle(&mut rng);
        subsets.push(order[..half].to_vec());
    }
    let sums = knn_log_distance_sums(&jittered, dim, k, &subsets)?;
    let value = kozachenko_leonenko(n, dim, k, sums[0])?;
    let halves = sums[1..].iter().map(|s| kozachenko_leonenko(half, dim, k, *s)).collect::<Result<Vec<_>>>()?;
    let m = halves.iter().sum::<f64>() / halves.len() as f64;
    let var = halves.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (halves.len() - 1) as f64;
    Ok(EntropyEstimate::estimated(value, (var / 2.0).sqrt(), EntropyMethod::Knn, n))
}

fn repeated_fraction(samples: &[f64], dim: usize) -> f64 {
    let mut rows: Vec<&[f64]> = samples.chunks_exact(dim).collect();
    rows.sort_by(|a, b| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let repeats = rows.windows(2).filter(|w| w[0] == w[1]).count();
    repeats as f64 / rows.len() as f64
}

/// `psi(n) - psi(k) + log V_d + (d/n) sum log eps_i` with `eps_i` the
/// Euclidean distance to the k-th neighbor.
fn kozachenko_leonenko(n: usize, dim: usize, k: usize, log_dist_sum: f64) -> Result<f64> {
    if !log_dist_sum.is_finite() {
        return Err(Error::NotAbsolutelyContinuous("zero neighbor distance after jitter".to_string()));
    }
    let ln_vd = NormSpec::euclidean(dim)?.ln_unit_ball_volume();
    Ok(digamma(n as f64) - digamma(k as f64) + ln_vd + dim as f64 * log_dist_sum / n as f64)
}

/// `sum log eps_i` over the full sample (entry 0) and within each subset.
fn knn_log_distance_sums(samples: &[f64], dim: usize, k: usize, subsets: &[Vec<usize>]) -> Result<Vec<f64>> {
    if dim == 1 {
        let mut sums = vec![knn_log_distances_1d(samples, k)];
        for subset in subsets {
            let sub: Vec<f64> = subset.iter().map(|&i| samples[i]).collect();
            sums.push(knn_log_distances_1d(&sub, k));
        }
        return Ok(sums);
    }
    let mut member = vec![0u16; samples.len() / dim];
    for (r, subset) in subsets.iter().enumerate() {
        for &i in subset {
            member[i] |= 1 << r;
        }
    }
    Ok(match dim {
        2 => knn_log_distances::<2>(samples, k, &member, subsets.len()),
        3 => knn_log_distances::<3>(samples, k, &member, subsets.len()),
        4 => knn_log_distances::<4>(samples, k, &member, subsets.len()),
        5 => knn_log_distances::<5>(samples, k, &member, subsets.len()),
        6 => knn_log_distances::<6>(samples, k, &member, subsets.len()),
        7 => knn_log_distances::<7>(samples, k, &member, subsets.len()),
        8 => knn_log_distances::<8>(samples, k, &member, subsets.len()),
        _ => return Err(Error::Unsupported(format!("k-NN entropy for d = {dim} > 8"))),
    })
}

fn knn_log_distances_1d(samples: &[f64], k: usize) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let mut total = 0.0;
    for i in 0..n {
        // merge the left and right neighbor runs until k are taken
        let (mut l, mut r) = (i, i + 1);
        let mut dist = 0.0;
        for _ in 0..k {
            let dl = if l > 0 { xs[i] - xs[l - 1] } else { f64::INFINITY };
            let dr = if r < n { xs[r] - xs[i] } else { f64::INFINITY };
            if dl <= dr {
                dist = dl;
                l -= 1;
            } else {
                dist = dr;
                r += 1;
            }
        }
        total += dist.ln();
    }
    total
}

/// One tree over the full sample serves every subset: the k-th neighbor
/// within a subset is read off the full-sample neighbor list, which is
/// widened for the rare points where the list holds too few members.
fn knn_log_distances<const K: usize>(samples: &[f64], k: usize, member: &[u16], subsets: usize) -> Vec<f64> {
    let points: Vec<[f64; K]> =
        samples.chunks_exact(K).map(|c| std::array::from_fn(|i| c[i])).collect();
    let n = points.len();
    let tree: ImmutableKdTree<f64, K> = ImmutableKdTree::new_from_slice(&points);
    let order = z_order(&points);
    let partial: Vec<Vec<f64>> = order
        .par_chunks(QUERY_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; subsets + 1];
            for &i in chunk {
                let mut qty = (SHARED_NEIGHBORS + 1).min(n);
                let mut nn = tree.nearest_n::<SquaredEuclidean>(&points[i], NonZero::new(qty).expect("n > 0"));
                // slot 0 is the full sample
                for slot in 0..=subsets {
                    let inside = |j: usize| slot == 0 || member[j] & (1 << (slot - 1)) != 0;
                    if !inside(i) {
                        continue;
                    }
                    loop {
                        let hit = nn.iter().filter(|h| h.item as usize != i && inside(h.item as usize)).nth(k - 1);
                        if let Some(h) = hit {
                            acc[slot] += 0.5 * h.distance.ln();
                            break;
                        }
                        qty = (4 * qty).min(n);
                        nn = tree.nearest_n::<SquaredEuclidean>(&points[i], NonZero::new(qty).expect("n > 0"));
                    }
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; subsets + 1];
    for acc in &partial {
        sums.iter_mut().zip(acc).for_each(|(s, a)| *s += a);
    }
    sums
}

/// Point indices sorted by the bit-interleaved per-axis ranks, so that
/// consecutive queries touch the same leaves.
fn z_order<const K: usize>(points: &[[f64; K]]) -> Vec<usize> {
    let n = points.len();
    let bits = (64 / K).min(32) as u32;
    let mut ranks = vec![[0u64; K]; n];
    let mut pairs: Vec<(u64, u32)> = Vec::with_capacity(n);
    for axis in 0..K {
        pairs.clear();
        pairs.extend(points.iter().enumerate().map(|(i, p)| (ordered_bits(p[axis]), i as u32)));
        pairs.sort_unstable();
        for (r, &(_, i)) in pairs.iter().enumerate() {
            ranks[i as usize][axis] = ((r as u128 * (1u128 << bits)) / n as u128) as u64;
        }
    }
    pairs.clear();
    pairs.extend(ranks.iter().enumerate().map(|(i, r)| {
        let mut key = 0u64;
        for b in (0..bits).rev() {
            for v in r {
                key = (key << 1) | ((v >> b) & 1);
            }
        }
        (key, i as u32)
    }));
    pairs.sort_unstable();
    pairs.into_iter().map(|(_, i)| i as usize).collect()
}

/// Monotone map from `f64` under the total order to `u64`.
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Exact `H(Y)` for an integer-valued `Y`, and the k-NN estimate of
/// `h(Y + U)` with `U` uniform on `[0, 1)^d`; the two coincide.
pub fn dither_identity_check<R: Rng + ?Sized>(
    pmf: &[(Vec<i64>, f64)],
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<(EntropyEstimate, EntropyEstimate)> {
    let dim = pmf.first().map(|(p, _)| p.len()).ok_or_else(|| invalid("empty pmf"))?;
    if dim == 0 || pmf.iter().any(|(p, _)| p.len() != dim) {
        return Err(invalid("pmf support points must share a positive dimension"));
    }
    let probs: Vec<f64> = pmf.iter().map(|(_, p)| *p).collect();
    let exact = discrete_entropy(&probs)?;
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut samples = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let idx = cumulative.partition_point(|c| *c <= u).min(pmf.len() - 1);
        for &y in &pmf[idx].0 {
            samples.push(y as f64 + rng.random::<f64>());
        }
    }
    let dithered = diff_entropy_knn(&samples, dim, k)?;
    Ok((exact, dithered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sources::{make_gaussian, make_laplacian, make_uniform};
    use proptest::prelude::{any, prop, prop_assert, prop_assume, proptest, ProptestConfig};
    use std::f64::consts::{E, LN_2, PI};

    #[test]
    fn discrete_examples() {
        assert!((discrete_entropy(&[0.25; 4]).unwrap().value - 4f64.ln()).abs() < 1e-15);
        assert_eq!(discrete_entropy(&[1.0, 0.0, 0.0]).unwrap().value, 0.0);
        // -0.11 ln 0.11 - 0.89 ln 0.89
        let h = discrete_entropy(&[0.11, 0.89]).unwrap();
        assert!((h.value - 0.346_515_336_918_666).abs() < 1e-12);
        assert_eq!(h.standard_error, 0.0);
        assert_eq!(h.method, EntropyMethod::Exact);
        assert!(discrete_entropy(&[0.5, -0.1, 0.6]).is_err());
        assert!(discrete_entropy(&[0.5, 0.4]).is_err());
    }

    #[test]
    fn conditional_examples() {
        let ind = vec![vec![0.25, 0.25], vec![0.25, 0.25]];
        assert!((conditional_entropy(&ind).unwrap() - LN_2).abs() < 1e-15);
        let copy = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        assert!(conditional_entropy(&copy).unwrap().abs() < 1e-15);
        let noisy = vec![vec![0.4, 0.1], vec![0.1, 0.4]];
        assert!((conditional_entropy(&noisy).unwrap() - 0.500_402_423_538_188).abs() < 1e-12);
        assert!(conditional_entropy(&[vec![0.5], vec![0.4]]).is_err());
    }

    #[test]
    fn miller_madow_counts() {
        // two equally filled cells: ln 2 + 1/(2n)
        assert!((miller_madow(&[50, 50], 100) - (LN_2 + 0.005)).abs() < 1e-15);
        assert_eq!(miller_madow(&[7], 7), 0.0);
    }

    #[test]
    fn floor_entropy_examples() {
        let mut rng = stream(21, 0);
        let u = make_uniform(0.0, 1.0).unwrap();
        let e = floor_entropy_mc(&u, 10_000, &mut rng).unwrap();
        assert_eq!(e.value, 0.0);
        let s = make_uniform(0.5, 1.5).unwrap();
        let e = floor_entropy_mc(&s, 1_000_000, &mut rng).unwrap();
        // at p = 1/2 the first-order fluctuation vanishes; allow the O(1/n) bias term
        assert!((e.value - LN_2).abs() < 3.0 * e.standard_error + 1e-6, "{e:?}");
        assert!(floor_entropy_mc(&u, 10, &mut rng).is_err());
    }

    #[test]
    fn floor_entropy_gaussian_against_cdf_oracle() {
        let g = make_gaussian(1, 1.0).unwrap();
        let exact = g.closed_form_floor_entropy().unwrap();
        let mut rng = stream(22, 0);
        let e = floor_entropy_mc(&g, 1_000_000, &mut rng).unwrap();
        assert!((e.value - exact).abs() < 4.0 * e.standard_error, "{e:?} vs {exact}");
        assert!(e.standard_error > 0.0 && e.standard_error < 5e-3);
    }

    #[test]
    fn floor_entropy_standard_error_shrinks() {
        let g = make_gaussian(1, 1.0).unwrap();
        let ses: Vec<f64> = [10_000, 100_000, 1_000_000]
            .iter()
            .enumerate()
            .map(|(i, n)| floor_entropy_mc(&g, *n, &mut stream(23, i as u64)).unwrap().standard_error)
            .collect();
        for w in ses.windows(2) {
            let ratio = w[0] / w[1];
            let expected = 10f64.sqrt();
            assert!(ratio > expected / 2.0 && ratio < expected * 2.0, "{ses:?}");
        }
    }

    #[test]
    fn grid_examples() {
        let g = make_gaussian(1, 1.0).unwrap();
        let e = diff_entropy_grid(|x| g.pdf(x).unwrap(), &[(-8.0, 8.0)], 1 << 16).unwrap();
        assert!((e.value - 0.5 * (2.0 * PI * E).ln()).abs() < 1e-4);
        assert!(e.warning.is_none());
        let u = make_uniform(0.0, 1.0).unwrap();
        let e = diff_entropy_grid(|x| u.pdf(x).unwrap(), &[(0.0, 1.0)], 1 << 10).unwrap();
        assert!(e.value.abs() < 1e-12);
        let l = make_laplacian(1.0).unwrap();
        let e = diff_entropy_grid(|x| l.pdf(x).unwrap(), &[(-20.0, 20.0)], 1 << 16).unwrap();
        assert!((e.value - (2.0 * E).ln()).abs() < 1e-4);
    }

    #[test]
    fn grid_two_dimensional_and_errors() {
        let g = make_gaussian(2, 1.0).unwrap();
        let e = diff_entropy_grid(|x| g.pdf(x).unwrap(), &[(-8.0, 8.0), (-8.0, 8.0)], 1024).unwrap();
        assert!((e.value - g.closed_form_h().unwrap()).abs() < 1e-4);
        let narrow = diff_entropy_grid(|x| g.pdf(x).unwrap(), &[(-1.0, 1.0), (-8.0, 8.0)], 256).unwrap();
        assert!(narrow.warning.is_some());
        assert!(diff_entropy_grid(|_| f64::NAN, &[(0.0, 1.0)], 256).is_err());
        assert!(diff_entropy_grid(|_| 1.0, &[(0.0, 1.0)], 16).is_err());
        assert!(diff_entropy_grid(|_| 1.0, &[(0.0, 1.0); 3], 256).is_err());
    }

    #[test]
    fn grid_translation_invariance() {
        let g = make_gaussian(1, 1.0).unwrap();
        let a = diff_entropy_grid(|x| g.pdf(x).unwrap(), &[(-8.0, 8.0)], 4096).unwrap();
        let shift = 0.375;
        let b = diff_entropy_grid(|x| g.pdf(&[x[0] - shift]).unwrap(), &[(-8.0 + shift, 8.0 + shift)], 4096).unwrap();
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn knn_examples() {
        let mut rng = stream(31, 0);
        let g = make_gaussian(1, 1.0).unwrap();
        let xs = g.sample_n(&mut rng, 100_000);
        let e = diff_entropy_knn(&xs, 1, DEFAULT_KNN_K).unwrap();
        assert!((e.value - 0.5 * (2.0 * PI * E).ln()).abs() < 0.01, "{e:?}");
        assert!(e.standard_error > 0.0 && e.standard_error < 0.01);

        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!(diff_entropy_knn(&u, 1, 3).unwrap().value.abs() < 0.01);
        let u2: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        assert!((diff_entropy_knn(&u2, 1, 3).unwrap().value - LN_2).abs() < 0.01);
    }

    #[test]
    fn knn_multivariate_gaussian() {
        let mut rng = stream(32, 0);
        for d in [2, 3] {
            let g = make_gaussian(d, 1.0).unwrap();
            let xs = g.sample_n(&mut rng, 50_000);
            let e = diff_entropy_knn(&xs, d, 3).unwrap();
            assert!((e.value - g.closed_form_h().unwrap()).abs() < 0.05, "d={d}: {e:?}");
        }
    }

    fn brute_force_log_sum(points: &[Vec<f64>], k: usize) -> f64 {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                    .collect();
                d.sort_by(f64::total_cmp);
                0.5 * d[k - 1].ln()
            })
            .sum()
    }

    #[test]
    fn shared_neighbor_lists_match_brute_force() {
        let mut rng = stream(8, 0);
        for dim in [2usize, 3, 5] {
            let n = 1200;
            let samples: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            // small subsets force the widened queries
            let mut subsets = Vec::new();
            for size in [600, 60, 20] {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                subsets.push(order[..size].to_vec());
            }
            let sums = knn_log_distance_sums(&samples, dim, 3, &subsets).unwrap();
            let rows: Vec<Vec<f64>> = samples.chunks_exact(dim).map(|c| c.to_vec()).collect();
            assert!((sums[0] - brute_force_log_sum(&rows, 3)).abs() < 1e-9 * n as f64);
            for (r, subset) in subsets.iter().enumerate() {
                let sub: Vec<Vec<f64>> = subset.iter().map(|&i| rows[i].clone()).collect();
                assert!((sums[r + 1] - brute_force_log_sum(&sub, 3)).abs() < 1e-9 * n as f64, "d={dim} subset {r}");
            }
        }
    }

    #[test]
    fn knn_rejects_atoms() {
        let mut rng = stream(33, 0);
        let xs: Vec<f64> =
            (0..5000).map(|i| if i % 10 == 0 { 0.0 } else { rng.random::<f64>() }).collect();
        assert!(matches!(diff_entropy_knn(&xs, 1, 3), Err(Error::NotAbsolutelyContinuous(_))));
        assert!(diff_entropy_knn(&xs[..500], 1, 3).is_err());
    }

    #[test]
    fn knn_and_grid_agree_on_catalog() {
        let mut rng = stream(34, 0);
        for m in [make_gaussian(1, 2.0).unwrap(), make_laplacian(1.0).unwrap(), make_uniform(-1.0, 3.0).unwrap()] {
            let (lo, hi) = m.covering_interval(1e-10).unwrap();
            let grid = diff_entropy_grid(|x| m.pdf(x).unwrap(), &[(lo, hi)], 1 << 16).unwrap();
            let xs = m.sample_n(&mut rng, 100_000);
            let knn = diff_entropy_knn(&xs, 1, 3).unwrap();
            let tol = 3.0 * (grid.standard_error.powi(2) + knn.standard_error.powi(2)).sqrt() + 2e-3;
            assert!((grid.value - knn.value).abs() < tol, "{}: {grid:?} vs {knn:?}", m.name());
        }
    }

    #[test]
    fn dither_examples() {
        let mut rng = stream(35, 0);
        let (h, est) = dither_identity_check(&[(vec![0], 1.0)], 100_000, 3, &mut rng).unwrap();
        assert_eq!(h.value, 0.0);
        assert!(est.value.abs() < 0.01);
        let (h, est) = dither_identity_check(&[(vec![0], 0.5), (vec![1], 0.5)], 100_000, 3, &mut rng).unwrap();
        assert!((h.value - LN_2).abs() < 1e-15);
        assert!((est.value - LN_2).abs() < 0.01);
        let pmf = [(vec![0], 0.7), (vec![1], 0.2), (vec![2], 0.1)];
        let (h, est) = dither_identity_check(&pmf, 100_000, 3, &mut rng).unwrap();
        assert!((h.value - 0.801_818_552_543_337).abs() < 1e-12);
        assert!((est.value - h.value).abs() < 0.01);
    }

    #[test]
    fn dither_identity_in_two_dimensions() {
        let mut rng = stream(36, 0);
        let pmf = [(vec![0, 0], 0.4), (vec![1, 0], 0.3), (vec![0, 2], 0.3)];
        let (h, est) = dither_identity_check(&pmf, 50_000, 3, &mut rng).unwrap();
        assert!((h.value - est.value).abs() < 0.03, "{h:?} {est:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn entropy_permutation_invariant_and_bounded(weights in prop::collection::vec(0.0f64..1.0, 1..64), seed in any::<u64>()) {
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 1e-6);
            let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
            let h = discrete_entropy(&pmf).unwrap().value;
            let mut shuffled = pmf.clone();
            shuffled.shuffle(&mut stream(seed, 0));
            let hs = discrete_entropy(&shuffled).unwrap().value;
            prop_assert!((h - hs).abs() < 1e-12);
            prop_assert!(h <= (pmf.len() as f64).ln() + 1e-12);
            prop_assert!(h >= 0.0);
        }
    }
}
