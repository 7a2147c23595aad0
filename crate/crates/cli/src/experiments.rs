//! One runner per subcommand. Each returns its rows in grid order.

use rand::Rng;
use rayon::prelude::*;

use slb_core::entropy::{discrete_entropy, dither_identity_check, floor_entropy_mc, DEFAULT_KNN_K};
use slb_core::geometry::NormSpec;
use slb_core::infodim::{clipped_floor_entropy, converse_inequality_check, info_dimension, lemma1_convergence, lemma1_divergence};
use slb_core::quantizer_bench::{high_resolution_excess, uniform_quantizer_report, RdOracle};
use slb_core::rd_solver::{discretize, rate_at_distortion, BaSettings};
use slb_core::rng::stream;
use slb_core::shannon_bound::{gap_sweep, noise_entropy, reported_gap, slb, DistortionSpec, GapSettings, NoiseChannel};
use slb_core::sources::{make_gaussian, make_laplacian, make_pathological, make_uniform, PathologicalSpec, ScalarLaw, SourceModel};
use slb_core::{Error, Result};

use crate::config::{Experiment, ExperimentConfig};
use crate::output::{Table, Value};

pub fn run(cfg: &ExperimentConfig) -> Result<Table> {
    match cfg.experiment {
        Experiment::Slb => run_slb(cfg),
        Experiment::GapSweep => run_gap_sweep(cfg),
        Experiment::BaCurve => run_ba_curve(cfg),
        Experiment::Quantize => run_quantize(cfg),
        Experiment::Infodim => run_infodim(cfg),
        Experiment::Lemma1 => run_lemma1(cfg),
        Experiment::Pathological => run_pathological(cfg),
        Experiment::ConverseCheck => run_converse(cfg),
        Experiment::Validate => run_validate(cfg),
    }
}

fn error_text(e: &Error) -> Value {
    Value::Text(e.to_string())
}

/// Pushes `row` and an empty error cell, or blanks and the error.
fn push_or_fail(table: &mut Table, row: Result<Vec<Value>>, lead: Vec<Value>) {
    let width = table.header.len();
    match row {
        Ok(mut r) => {
            r.push(Value::Empty);
            table.push(r);
        }
        Err(e) => {
            let mut r = lead;
            r.resize(width - 1, Value::Empty);
            r.push(error_text(&e));
            table.push(r);
            table.failed_rows += 1;
        }
    }
}

fn exact_h(source: &SourceModel) -> Result<f64> {
    source
        .closed_form_h()
        .ok_or_else(|| Error::Unsupported(format!("no closed-form differential entropy for {}", source.name())))
}

fn run_slb(cfg: &ExperimentConfig) -> Result<Table> {
    let source = cfg.source.build()?;
    let h = exact_h(&source)?;
    let norm = cfg.distortion.norm(source.dim())?;
    let mut table = Table::new(&["distortion", "slb", "vacuous", "h_source", "noise_entropy", "error"]);
    for &d in &cfg.distortion.grid {
        let row = DistortionSpec::new(norm, cfg.distortion.r, d).and_then(|spec| {
            let bound = slb(h, source.dim(), &spec)?;
            let noise = noise_entropy(&NoiseChannel::new(spec));
            Ok(vec![d.into(), bound.value.into(), bound.vacuous.into(), h.into(), noise.into()])
        });
        push_or_fail(&mut table, row, vec![d.into()]);
    }
    Ok(table)
}

fn run_gap_sweep(cfg: &ExperimentConfig) -> Result<Table> {
    let source = cfg.source.build()?;
    let norm = cfg.distortion.norm(source.dim())?;
    let settings = GapSettings {
        points_per_scale: cfg.estimator.points_per_scale,
        knn_samples: cfg.estimator.samples,
        knn_k: cfg.estimator.k,
        ..GapSettings::default()
    };
    let points = gap_sweep(&source, norm, cfg.distortion.r, &cfg.distortion.grid, &settings, cfg.seed)?;
    let mut table = Table::new(&[
        "distortion",
        "slb",
        "gap_bound",
        "gap_raw",
        "gap_se",
        "method",
        "rate_upper",
        "warning",
        "error",
    ]);
    for p in points {
        let lead = vec![p.distortion.into(), p.slb.value.into()];
        let row = p.gap.map(|g| {
            let gap = reported_gap(&g);
            vec![
                p.distortion.into(),
                p.slb.value.into(),
                gap.into(),
                g.value.into(),
                g.standard_error.into(),
                g.method.tag().into(),
                (p.slb.value.max(0.0) + gap).into(),
                g.warning.clone().into(),
            ]
        });
        push_or_fail(&mut table, row, lead);
    }
    Ok(table)
}

fn run_ba_curve(cfg: &ExperimentConfig) -> Result<Table> {
    let source = cfg.source.build()?;
    let bounds = match cfg.ba.support {
        Some(b) => b,
        None => source.covering_interval(1e-12)?,
    };
    let r = cfg.distortion.r;
    let problem = discretize(&source, bounds, cfg.ba.cells, cfg.ba.cells, r)?;
    let settings = BaSettings { max_iter: cfg.estimator.max_iter, tol: cfg.estimator.tol };
    let slb_at = |d: f64| -> Option<f64> {
        let h = source.closed_form_h()?;
        let spec = DistortionSpec::new(NormSpec::euclidean(1).ok()?, r, d).ok()?;
        slb(h, 1, &spec).ok().map(|b| b.value)
    };
    let results: Vec<_> = cfg
        .distortion
        .grid
        .par_iter()
        .map(|&d| (d, rate_at_distortion(&problem, d, &settings, cfg.ba.rel_tol)))
        .collect();
    let mut table = Table::new(&[
        "distortion",
        "rate",
        "rate_lower",
        "achieved_distortion",
        "slope",
        "iterations",
        "solves",
        "converged",
        "slb",
        "warning",
        "error",
    ]);
    for (d, res) in results {
        let row = res.map(|t| {
            vec![
                d.into(),
                t.rate.into(),
                t.point.rate_lower.into(),
                t.point.distortion.into(),
                t.point.slope.into(),
                t.point.iterations.into(),
                t.solves.into(),
                t.point.converged.into(),
                slb_at(d).into(),
                problem.warning.clone().into(),
            ]
        });
        push_or_fail(&mut table, row, vec![d.into()]);
    }
    Ok(table)
}

fn run_quantize(cfg: &ExperimentConfig) -> Result<Table> {
    let source = cfg.source.build()?;
    let r = cfg.distortion.r;
    let oracle = RdOracle::Analytic;
    let results: Vec<_> = cfg
        .quantizer_steps
        .par_iter()
        .map(|&s| (s, uniform_quantizer_report(&source, s, r, cfg.reconstruction, &oracle)))
        .collect();
    let mut table = Table::new(&[
        "step",
        "entropy",
        "distortion",
        "rd_rate",
        "gap_to_rd",
        "gap_to_slb",
        "high_resolution_excess",
        "cells",
        "error",
    ]);
    for (s, res) in results {
        let row = res.map(|q| {
            vec![
                s.into(),
                q.entropy.into(),
                q.distortion.into(),
                oracle.rate(&source, r, q.distortion).into(),
                q.gap_to_rd.into(),
                q.gap_to_slb.into(),
                high_resolution_excess().into(),
                q.cells.into(),
            ]
        });
        push_or_fail(&mut table, row, vec![s.into()]);
    }
    Ok(table)
}

fn run_infodim(cfg: &ExperimentConfig) -> Result<Table> {
    let source = cfg.source.build()?;
    let est = info_dimension(&source, &cfg.infodim_m_grid, cfg.estimator.samples, &mut stream(cfg.seed, 0))?;
    let limit = slb_core::infodim::UNDERSAMPLING_RATIO * est.samples as f64;
    let mut table = Table::new(&[
        "m", "log_m", "entropy", "se", "cells", "undersampled", "in_fit", "slope", "residual", "error",
    ]);
    for (i, (m, e)) in est.m_grid.iter().zip(&est.entropies).enumerate() {
        table.push(vec![
            (*m).into(),
            (*m as f64).ln().into(),
            e.value.into(),
            e.standard_error.into(),
            est.cells[i].into(),
            (est.cells[i] as f64 > limit).into(),
            est.fit.contains(&i).into(),
            est.slope.into(),
            est.residual.into(),
            Value::Empty,
        ]);
    }
    Ok(table)
}

/// `H(floor(X + eps Z))` in closed form when both `X` and `Z` are centred
/// one-dimensional Gaussians.
fn gaussian_sum_oracle(source: &SourceModel, noise: &NoiseChannel, eps: f64) -> Option<f64> {
    let variance = match source.scalar_law()? {
        ScalarLaw::Gaussian { mean, variance } if *mean == 0.0 => *variance,
        _ => return None,
    };
    // for d = 1 and r = 2 the test channel at D is N(0, D)
    if noise.dim() != 1 || noise.spec().exponent() != 2.0 {
        return None;
    }
    make_gaussian(1, variance + eps * eps * noise.spec().distortion()).ok()?.closed_form_floor_entropy()
}

fn run_lemma1(cfg: &ExperimentConfig) -> Result<Table> {
    let source = cfg.source.build()?;
    let spec = DistortionSpec::new(cfg.distortion.norm(source.dim())?, cfg.distortion.r, 1.0)?;
    let noise = NoiseChannel::new(spec);
    let rows = lemma1_convergence(&source, &noise, &cfg.lemma1_eps, cfg.estimator.samples, &mut stream(cfg.seed, 0))?;
    let h0 = source.closed_form_floor_entropy();
    let mut table = Table::new(&["eps", "entropy", "se", "method", "floor_entropy", "abs_diff", "oracle", "error"]);
    for (eps, e) in rows {
        table.push(vec![
            eps.into(),
            e.value.into(),
            e.standard_error.into(),
            e.method.tag().into(),
            h0.into(),
            h0.map(|h| (e.value - h).abs()).into(),
            gaussian_sum_oracle(&source, &noise, eps).into(),
            Value::Empty,
        ]);
    }
    Ok(table)
}

fn run_pathological(cfg: &ExperimentConfig) -> Result<Table> {
    let spec = DistortionSpec::new(NormSpec::euclidean(1)?, cfg.distortion.r, 1.0)?;
    let noise = NoiseChannel::new(spec);
    let ms = &cfg.pathological_m_grid;
    let divergence =
        lemma1_divergence(ms, cfg.pathological_eps, &noise, cfg.estimator.samples, &mut stream(cfg.seed, 0))?;
    let clipped: Vec<_> = ms
        .par_iter()
        .map(|&m| clipped_floor_entropy(&make_pathological(m)?, &cfg.pathological_upsilon))
        .collect::<Result<_>>()?;
    let mut header: Vec<String> = [
        "max_index",
        "partial_sum",
        "floor_entropy",
        "differential_entropy",
        "perturbed_entropy",
        "perturbed_se",
        "noise_floor_entropy",
        "perturbed_upper_bound",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(cfg.pathological_upsilon.iter().map(|u| format!("clipped_{u}")));
    header.push("error".to_string());
    let mut table = Table { header, ..Default::default() };
    for ((&m, div), clip) in ms.iter().zip(divergence).zip(clipped) {
        let p = PathologicalSpec::new(m)?;
        let mut row: Vec<Value> = vec![
            m.into(),
            p.partial_sum().into(),
            div.unperturbed.into(),
            p.differential_entropy().into(),
            div.perturbed.value.into(),
            div.perturbed.standard_error.into(),
            div.noise_floor.value.into(),
            div.upper_bound.into(),
        ];
        row.extend(clip.into_iter().map(|(_, e)| Value::from(e.value)));
        row.push(Value::Empty);
        table.push(row);
    }
    Ok(table)
}

/// A random finite joint law of `(X, X̂)` with `points` atoms in
/// `[-range, range]^dim`.
pub fn random_joint_law<R: Rng + ?Sized>(rng: &mut R, points: usize, dim: usize, range: f64) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let mut law: Vec<_> = (0..points)
        .map(|_| {
            let x = (0..dim).map(|_| rng.random_range(-range..range)).collect();
            let xh = (0..dim).map(|_| rng.random_range(-range..range)).collect();
            (x, xh, rng.random_range(0.01..1.0))
        })
        .collect();
    let total: f64 = law.iter().map(|r| r.2).sum();
    law.iter_mut().for_each(|r| r.2 /= total);
    law
}

fn run_converse(cfg: &ExperimentConfig) -> Result<Table> {
    let reports: Vec<_> = (0..cfg.converse_laws)
        .into_par_iter()
        .map(|i| {
            let law = random_joint_law(&mut stream(cfg.seed, i as u64), cfg.converse_points, cfg.converse_dim, cfg.converse_range);
            converse_inequality_check(&law)
        })
        .collect();
    let mut table = Table::new(&[
        "law",
        "dim",
        "points",
        "h_x_given_xhat",
        "h_difference",
        "h_x_given_xhat_difference",
        "chain_rhs",
        "carry_bound",
        "chain_holds",
        "carry_holds",
        "error",
    ]);
    for (i, rep) in reports.into_iter().enumerate() {
        let row = rep.and_then(|r| {
            let cells = vec![
                i.into(),
                r.dim.into(),
                cfg.converse_points.into(),
                r.h_x_given_xhat.into(),
                r.h_difference.into(),
                r.h_x_given_xhat_difference.into(),
                r.chain_rhs().into(),
                r.carry_bound.into(),
                r.chain_holds().into(),
                r.carry_holds().into(),
            ];
            if r.chain_holds() && r.carry_holds() {
                Ok(cells)
            } else {
                Err(Error::Numerical(format!("converse inequality violated on law {i}")))
            }
        });
        push_or_fail(&mut table, row, vec![i.into()]);
    }
    Ok(table)
}

struct Check {
    name: &'static str,
    value: f64,
    reference: f64,
    tolerance: f64,
}

impl Check {
    fn new(name: &'static str, value: f64, reference: f64, tolerance: f64) -> Self {
        Self { name, value, reference, tolerance }
    }

    fn passes(&self) -> bool {
        (self.value - self.reference).abs() <= self.tolerance
    }
}

/// A fixed battery of identity and normalization checks across modules.
fn validation_checks(seed: u64) -> Result<Vec<Check>> {
    use std::f64::consts::{E, LN_2, PI};
    let mut checks = Vec::new();

    let gauss = DistortionSpec::new(NormSpec::euclidean(1)?, 2.0, 0.25)?;
    checks.push(Check::new("slb_gaussian_exact", slb(0.5 * (2.0 * PI * E).ln(), 1, &gauss)?.value, LN_2, 1e-12));
    let lap = DistortionSpec::new(NormSpec::p_norm(1.0, 1)?, 1.0, 0.5)?;
    checks.push(Check::new("slb_laplacian_exact", slb((2.0 * E).ln(), 1, &lap)?.value, LN_2, 1e-12));

    // h - noise_entropy over randomized parameters
    let mut rng = stream(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=4);
        let p = [1.0, 2.0, f64::INFINITY][rng.random_range(0..3)];
        let r = [0.5, 1.0, 2.0, 3.0][rng.random_range(0..4)];
        let dist = 10f64.powf(rng.random_range(-6.0..1.0));
        let h = rng.random_range(-5.0..5.0);
        let spec = DistortionSpec::new(NormSpec::p_norm(p, d)?, r, dist)?;
        let diff = slb(h, d, &spec)?.value - (h - noise_entropy(&NoiseChannel::new(spec)));
        worst = worst.max(diff.abs());
    }
    checks.push(Check::new("slb_noise_identity", worst, 0.0, 1e-12));

    // E||Z||^r = D for a two-dimensional l1 channel
    let spec = DistortionSpec::new(NormSpec::p_norm(1.0, 2)?, 3.0, 0.7)?;
    let channel = NoiseChannel::new(spec);
    let n = 200_000;
    let z = channel.sample_n(&mut stream(seed, 1), n)?;
    let powers: Vec<f64> = z.chunks_exact(2).map(|c| (c[0].abs() + c[1].abs()).powi(3)).collect();
    let mean = powers.iter().sum::<f64>() / n as f64;
    let var = powers.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    checks.push(Check::new("noise_moment", mean, 0.7, 4.0 * (var / n as f64).sqrt()));

    // the test-channel density integrates to one
    let spec = DistortionSpec::new(NormSpec::p_norm(1.0, 1)?, 1.0, 0.5)?;
    let channel = NoiseChannel::new(spec);
    let step = 1e-3;
    let mass: f64 = (-40_000..40_000).map(|i| channel.pdf(&[(i as f64 + 0.5) * step]).unwrap_or(0.0) * step).sum();
    checks.push(Check::new("noise_normalization", mass, 1.0, 1e-6));

    checks.push(Check::new("discrete_entropy_uniform8", discrete_entropy(&[0.125; 8])?.value, 8f64.ln(), 1e-12));

    let g = make_gaussian(1, 1.0)?;
    let exact = g.closed_form_floor_entropy().unwrap_or(f64::NAN);
    let mc = floor_entropy_mc(&g, 200_000, &mut stream(seed, 2))?;
    checks.push(Check::new("floor_entropy_gaussian_mc", mc.value, exact, 4.0 * mc.standard_error + 1e-3));

    let pmf = vec![(vec![0], 0.2), (vec![1], 0.5), (vec![3], 0.3)];
    let (h, dithered) = dither_identity_check(&pmf, 50_000, DEFAULT_KNN_K, &mut stream(seed, 3))?;
    checks.push(Check::new("dither_identity", dithered.value, h.value, 0.02));

    let u = make_uniform(0.0, 1.0)?;
    let q = uniform_quantizer_report(&u, 0.125, 2.0, Default::default(), &RdOracle::None)?;
    checks.push(Check::new("quantizer_uniform_entropy", q.entropy, 8f64.ln(), 1e-12));
    checks.push(Check::new("quantizer_uniform_distortion", q.distortion, 1.0 / 768.0, 1e-12));

    let l = make_laplacian(1.0)?;
    let problem = discretize(&l, (-12.0, 12.0), 512, 512, 1.0)?;
    let target = rate_at_distortion(&problem, 0.5, &BaSettings::default(), 1e-3)?;
    checks.push(Check::new("ba_laplacian_rate", target.rate, LN_2, 1e-2));

    let mut failures = 0.0;
    for i in 0..20 {
        let law = random_joint_law(&mut stream(seed, 100 + i), 20, 1, 3.0);
        let r = converse_inequality_check(&law)?;
        if !(r.chain_holds() && r.carry_holds()) {
            failures += 1.0;
        }
    }
    checks.push(Check::new("converse_inequalities", failures, 0.0, 0.0));

    let hs: Vec<f64> = [100, 1000, 10_000].iter().map(|&m| PathologicalSpec::new(m).map(|p| p.floor_entropy())).collect::<Result<_>>()?;
    let increments = hs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    checks.push(Check::new("pathological_floor_entropy_increasing", increments.min(0.0), 0.0, 0.0));
    let p = PathologicalSpec::new(10_000)?;
    checks.push(Check::new("pathological_h_below_floor_entropy", (p.differential_entropy() - p.floor_entropy()).max(0.0), 0.0, 0.0));
    Ok(checks)
}

fn run_validate(cfg: &ExperimentConfig) -> Result<Table> {
    let checks = validation_checks(cfg.seed)?;
    let mut table = Table::new(&["check", "value", "reference", "tolerance", "pass", "error"]);
    for c in checks {
        let pass = c.passes();
        table.push(vec![
            c.name.into(),
            c.value.into(),
            c.reference.into(),
            c.tolerance.into(),
            pass.into(),
            if pass { Value::Empty } else { "outside tolerance".into() },
        ]);
        if !pass {
            table.failed_rows += 1;
        }
    }
    Ok(table)
}
