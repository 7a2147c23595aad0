//! Flat `key = value` experiment configs with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Every experiment
//! accepts a fixed set of keys; anything else is a violation. A parsed
//! config echoes back through [`ExperimentConfig::to_entries`], and the
//! echo re-parses to an equal config.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use slb_core::geometry::NormSpec;
use slb_core::quantizer_bench::Reconstruction;
use slb_core::sources::{
    make_gaussian, make_generalized_gaussian, make_laplacian, make_mixture, make_pathological, make_uniform,
    SourceModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Slb,
    GapSweep,
    BaCurve,
    Quantize,
    Infodim,
    Lemma1,
    Pathological,
    ConverseCheck,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::Slb,
        Experiment::GapSweep,
        Experiment::BaCurve,
        Experiment::Quantize,
        Experiment::Infodim,
        Experiment::Lemma1,
        Experiment::Pathological,
        Experiment::ConverseCheck,
        Experiment::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Slb => "slb",
            Experiment::GapSweep => "gap-sweep",
            Experiment::BaCurve => "ba-curve",
            Experiment::Quantize => "quantize",
            Experiment::Infodim => "infodim",
            Experiment::Lemma1 => "lemma1",
            Experiment::Pathological => "pathological",
            Experiment::ConverseCheck => "converse-check",
            Experiment::Validate => "validate",
        }
    }

    fn uses_source(self) -> bool {
        !matches!(self, Experiment::Pathological | Experiment::ConverseCheck | Experiment::Validate)
    }

    /// Keys outside `source.*` that the experiment reads.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Experiment::Slb => &["distortion.p", "distortion.r", "distortion.d"],
            Experiment::GapSweep => &[
                "distortion.p",
                "distortion.r",
                "distortion.d",
                "estimator.samples",
                "estimator.k",
                "estimator.points_per_scale",
            ],
            Experiment::BaCurve => &[
                "distortion.r",
                "distortion.d",
                "estimator.tol",
                "estimator.max_iter",
                "ba.cells",
                "ba.support",
                "ba.rel_tol",
            ],
            Experiment::Quantize => &["distortion.r", "quantizer.steps", "quantizer.reconstruction"],
            Experiment::Infodim => &["estimator.samples", "infodim.m_grid"],
            Experiment::Lemma1 => &["distortion.p", "distortion.r", "estimator.samples", "lemma1.eps"],
            Experiment::Pathological => &[
                "distortion.r",
                "estimator.samples",
                "pathological.m_grid",
                "pathological.eps",
                "pathological.upsilon",
            ],
            Experiment::ConverseCheck => &["converse.laws", "converse.points", "converse.dim", "converse.range"],
            Experiment::Validate => &[],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Experiment::ALL.into_iter().find(|e| e.name() == s).ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Gaussian { dim: usize, variance: f64 },
    Laplacian { rate: f64 },
    Uniform { low: f64, high: f64 },
    GeneralizedGaussian { exponent: f64, scale: f64 },
    Pathological { max_index: usize },
    /// Atom at `atom` with probability `weight`, centred Gaussian otherwise.
    Mixture { weight: f64, atom: f64, variance: f64 },
}

impl SourceSpec {
    pub fn build(&self) -> slb_core::Result<SourceModel> {
        match *self {
            SourceSpec::Gaussian { dim, variance } => make_gaussian(dim, variance),
            SourceSpec::Laplacian { rate } => make_laplacian(rate),
            SourceSpec::Uniform { low, high } => make_uniform(low, high),
            SourceSpec::GeneralizedGaussian { exponent, scale } => make_generalized_gaussian(exponent, scale),
            SourceSpec::Pathological { max_index } => make_pathological(max_index),
            SourceSpec::Mixture { weight, atom, variance } => {
                make_mixture(weight, vec![(vec![atom], 1.0)], make_gaussian(1, variance)?)
            }
        }
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        match self {
            SourceSpec::Gaussian { dim, variance } => {
                vec![("source.name", "gaussian".into()), ("source.dim", dim.to_string()), ("source.variance", real(*variance))]
            }
            SourceSpec::Laplacian { rate } => vec![("source.name", "laplacian".into()), ("source.rate", real(*rate))],
            SourceSpec::Uniform { low, high } => {
                vec![("source.name", "uniform".into()), ("source.low", real(*low)), ("source.high", real(*high))]
            }
            SourceSpec::GeneralizedGaussian { exponent, scale } => vec![
                ("source.name", "generalized-gaussian".into()),
                ("source.exponent", real(*exponent)),
                ("source.scale", real(*scale)),
            ],
            SourceSpec::Pathological { max_index } => {
                vec![("source.name", "pathological".into()), ("source.max_index", max_index.to_string())]
            }
            SourceSpec::Mixture { weight, atom, variance } => vec![
                ("source.name", "mixture".into()),
                ("source.weight", real(*weight)),
                ("source.atom", real(*atom)),
                ("source.variance", real(*variance)),
            ],
        }
    }

    fn parse(entries: &mut Entries) -> SourceSpec {
        let name = entries.take("source.name").unwrap_or_else(|| "gaussian".to_string());
        let spec = match name.as_str() {
            "gaussian" => SourceSpec::Gaussian {
                dim: entries.parse_or("source.dim", 1),
                variance: entries.parse_or("source.variance", 1.0),
            },
            "laplacian" => SourceSpec::Laplacian { rate: entries.parse_or("source.rate", 1.0) },
            "uniform" => SourceSpec::Uniform {
                low: entries.parse_or("source.low", 0.0),
                high: entries.parse_or("source.high", 1.0),
            },
            "generalized-gaussian" => SourceSpec::GeneralizedGaussian {
                exponent: entries.parse_or("source.exponent", 2.0),
                scale: entries.parse_or("source.scale", 1.0),
            },
            "pathological" => SourceSpec::Pathological { max_index: entries.parse_or("source.max_index", 10_000) },
            "mixture" => SourceSpec::Mixture {
                weight: entries.parse_or("source.weight", 0.5),
                atom: entries.parse_or("source.atom", 0.0),
                variance: entries.parse_or("source.variance", 1.0),
            },
            other => {
                entries.violation(format!("source.name: unknown source `{other}`"));
                SourceSpec::Gaussian { dim: 1, variance: 1.0 }
            }
        };
        spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionConfig {
    /// Norm exponent; `inf` selects the max norm.
    pub p: f64,
    pub r: f64,
    pub grid: Vec<f64>,
}

impl DistortionConfig {
    pub fn norm(&self, dim: usize) -> slb_core::Result<NormSpec> {
        NormSpec::p_norm(self.p, dim)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub samples: usize,
    pub k: usize,
    pub points_per_scale: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaConfig {
    pub cells: usize,
    /// `None` picks an interval holding all but `1e-12` of the mass.
    pub support: Option<(f64, f64)>,
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub source: SourceSpec,
    pub distortion: DistortionConfig,
    pub estimator: EstimatorConfig,
    pub ba: BaConfig,
    pub quantizer_steps: Vec<f64>,
    pub reconstruction: Reconstruction,
    pub infodim_m_grid: Vec<u64>,
    pub lemma1_eps: Vec<f64>,
    pub pathological_m_grid: Vec<usize>,
    pub pathological_eps: f64,
    pub pathological_upsilon: Vec<f64>,
    pub converse_laws: usize,
    pub converse_points: usize,
    pub converse_dim: usize,
    pub converse_range: f64,
}

/// Every violation found while reading a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

/// Shortest decimal form that parses back to the same value.
fn real(x: f64) -> String {
    format!("{x:?}")
}

fn list<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

struct Entries {
    map: BTreeMap<String, String>,
    violations: Vec<String>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn violation(&mut self, msg: String) {
        self.violations.push(msg);
    }

    /// Falls back to `default` after recording a violation, so parsing can
    /// continue and report everything at once.
    fn parse_or<T: FromStr>(&mut self, key: &str, default: T) -> T {
        match self.take(key) {
            None => default,
            Some(v) => v.parse().unwrap_or_else(|_| {
                self.violation(format!("{key}: cannot parse `{v}`"));
                default
            }),
        }
    }

    fn list_or<T: FromStr + Clone>(&mut self, key: &str, default: &[T]) -> Vec<T> {
        match self.take(key) {
            None => default.to_vec(),
            Some(v) => match v.split(',').map(|s| s.trim().parse()).collect::<Result<Vec<T>, _>>() {
                Ok(xs) => xs,
                Err(_) => {
                    self.violation(format!("{key}: cannot parse list `{v}`"));
                    default.to_vec()
                }
            },
        }
    }
}

/// Splits config text into key/value pairs; later keys override earlier ones.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut bad = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            _ => bad.push(format!("line {}: expected `key = value`, got `{line}`", no + 1)),
        }
    }
    if bad.is_empty() {
        Ok(map)
    } else {
        Err(ConfigError(bad))
    }
}

/// Recovers the config echoed in the `#` block of a CSV artifact.
pub fn parse_metadata(csv: &str) -> Result<ExperimentConfig, ConfigError> {
    let echo: String = csv
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains('=') && !l.starts_with("version."))
        .map(|l| format!("{l}\n"))
        .collect();
    let entries = parse_entries(&echo)?;
    let experiment = match entries.get("experiment").map(|e| e.parse::<Experiment>()) {
        Some(Ok(e)) => e,
        Some(Err(e)) => return Err(ConfigError(vec![e])),
        None => return Err(ConfigError(vec!["metadata has no experiment line".to_string()])),
    };
    ExperimentConfig::from_entries(experiment, entries)
}

const DEFAULT_M_GRID: [u64; 17] =
    [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768, 65536];

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        Self::from_entries(experiment, BTreeMap::new()).expect("defaults are valid")
    }

    pub fn from_text(experiment: Experiment, text: &str) -> Result<Self, ConfigError> {
        Self::from_entries(experiment, parse_entries(text)?)
    }

    pub fn from_entries(experiment: Experiment, map: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut e = Entries { map, violations: Vec::new() };
        if let Some(named) = e.take("experiment") {
            if named != experiment.name() {
                e.violation(format!("experiment: config is for `{named}`, subcommand is `{experiment}`"));
            }
        }
        let seed = e.parse_or("seed", 0u64);
        let source = if experiment.uses_source() {
            SourceSpec::parse(&mut e)
        } else {
            SourceSpec::Gaussian { dim: 1, variance: 1.0 }
        };

        // keys the experiment does not read are errors, not silently dropped
        let allowed = experiment.keys();
        let stray: Vec<String> = e
            .map
            .keys()
            .filter(|k| !allowed.contains(&k.as_str()))
            .cloned()
            .collect();
        for k in stray {
            e.map.remove(&k);
            if k.starts_with("source.") && experiment.uses_source() {
                e.violation(format!("{k}: not a parameter of the selected source"));
            } else {
                e.violation(format!("{k}: not used by `{experiment}`"));
            }
        }

        let p = match e.take("distortion.p") {
            None => 2.0,
            Some(v) if v == "inf" => f64::INFINITY,
            Some(v) => v.parse::<f64>().unwrap_or_else(|_| {
                e.violation(format!("distortion.p: cannot parse `{v}`"));
                2.0
            }),
        };
        let support = match e.take("ba.support") {
            None => None,
            Some(v) if v == "auto" => None,
            Some(v) => match v.split_once(',').map(|(a, b)| (a.trim().parse::<f64>(), b.trim().parse::<f64>())) {
                Some((Ok(a), Ok(b))) => Some((a, b)),
                _ => {
                    e.violation(format!("ba.support: expected `auto` or `lo,hi`, got `{v}`"));
                    None
                }
            },
        };
        let reconstruction = match e.take("quantizer.reconstruction").as_deref() {
            None | Some("within-cell") => Reconstruction::WithinCell,
            Some("midpoint") => Reconstruction::Midpoint,
            Some(v) => {
                e.violation(format!("quantizer.reconstruction: expected `within-cell` or `midpoint`, got `{v}`"));
                Reconstruction::WithinCell
            }
        };
        let cfg = ExperimentConfig {
            experiment,
            seed,
            source,
            distortion: DistortionConfig {
                p,
                r: e.parse_or("distortion.r", 2.0),
                grid: e.list_or("distortion.d", &[0.1, 0.01, 0.001]),
            },
            estimator: EstimatorConfig {
                samples: e.parse_or("estimator.samples", 1_000_000),
                k: e.parse_or("estimator.k", 3),
                points_per_scale: e.parse_or("estimator.points_per_scale", 32),
                tol: e.parse_or("estimator.tol", 1e-9),
                max_iter: e.parse_or("estimator.max_iter", 100_000),
            },
            ba: BaConfig { cells: e.parse_or("ba.cells", 1024), support, rel_tol: e.parse_or("ba.rel_tol", 1e-3) },
            quantizer_steps: e.list_or("quantizer.steps", &[1.0, 0.1, 0.01, 0.001]),
            reconstruction,
            infodim_m_grid: e.list_or("infodim.m_grid", &DEFAULT_M_GRID),
            lemma1_eps: e.list_or("lemma1.eps", &[1.0, 0.1, 0.01, 0.0]),
            pathological_m_grid: e.list_or("pathological.m_grid", &[100, 1000, 10_000, 100_000, 1_000_000]),
            pathological_eps: e.parse_or("pathological.eps", 0.1),
            pathological_upsilon: e.list_or("pathological.upsilon", &[10.0, 100.0, 1000.0]),
            converse_laws: e.parse_or("converse.laws", 100),
            converse_points: e.parse_or("converse.points", 20),
            converse_dim: e.parse_or("converse.dim", 1),
            converse_range: e.parse_or("converse.range", 3.0),
        };
        cfg.check(&mut e.violations);
        if e.violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError(e.violations))
        }
    }

    /// Range checks that need more than one key.
    fn check(&self, out: &mut Vec<String>) {
        let uses = |k: &str| self.experiment.keys().contains(&k);
        if self.experiment.uses_source() {
            if let Err(err) = self.source.build() {
                out.push(format!("source: {err}"));
            }
        }
        if uses("distortion.p") && !(self.distortion.p >= 1.0) {
            out.push(format!("distortion.p: must be >= 1 or `inf`, got {}", self.distortion.p));
        }
        if uses("distortion.r") && !(self.distortion.r > 0.0 && self.distortion.r.is_finite()) {
            out.push(format!("distortion.r: must be positive, got {}", self.distortion.r));
        }
        if uses("distortion.d") {
            let g = &self.distortion.grid;
            if g.iter().any(|d| !(*d > 0.0 && d.is_finite())) || g.windows(2).any(|w| w[1] >= w[0]) {
                out.push("distortion.d: must be positive and strictly decreasing".to_string());
            }
        }
        if uses("estimator.samples") && self.estimator.samples < 1000 {
            out.push(format!("estimator.samples: must be at least 1000, got {}", self.estimator.samples));
        }
        if uses("estimator.k") && self.estimator.k == 0 {
            out.push("estimator.k: must be positive".to_string());
        }
        if uses("estimator.points_per_scale") && self.estimator.points_per_scale < 2 {
            out.push("estimator.points_per_scale: must be at least 2".to_string());
        }
        if uses("estimator.tol") && !(self.estimator.tol > 0.0) {
            out.push("estimator.tol: must be positive".to_string());
        }
        if uses("ba.cells") && self.ba.cells < 2 {
            out.push("ba.cells: must be at least 2".to_string());
        }
        if let Some((lo, hi)) = self.ba.support {
            if !(lo < hi) {
                out.push(format!("ba.support: need lo < hi, got {lo},{hi}"));
            }
        }
        if uses("ba.rel_tol") && !(self.ba.rel_tol > 0.0) {
            out.push("ba.rel_tol: must be positive".to_string());
        }
        if uses("quantizer.steps") && self.quantizer_steps.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            out.push("quantizer.steps: must be positive".to_string());
        }
        if uses("infodim.m_grid") {
            let g = &self.infodim_m_grid;
            if g.len() < 2 || g.iter().any(|m| !m.is_power_of_two()) || g.windows(2).any(|w| w[1] <= w[0]) {
                out.push("infodim.m_grid: need at least two increasing powers of two".to_string());
            }
        }
        if uses("lemma1.eps") {
            let g = &self.lemma1_eps;
            if g.iter().any(|e| !(*e >= 0.0 && e.is_finite())) || g.windows(2).any(|w| w[1] >= w[0]) {
                out.push("lemma1.eps: must be nonnegative and strictly decreasing".to_string());
            }
        }
        if uses("pathological.m_grid") {
            let g = &self.pathological_m_grid;
            if g.iter().any(|m| *m < 2) || g.windows(2).any(|w| w[1] <= w[0]) {
                out.push("pathological.m_grid: must be strictly increasing integers >= 2".to_string());
            }
        }
        if uses("pathological.eps") && !(self.pathological_eps >= 0.0 && self.pathological_eps.is_finite()) {
            out.push("pathological.eps: must be nonnegative".to_string());
        }
        if uses("pathological.upsilon") {
            let g = &self.pathological_upsilon;
            if g.iter().any(|u| !(*u > 0.0 && *u <= 5e6)) || g.windows(2).any(|w| w[1] <= w[0]) {
                out.push("pathological.upsilon: must be increasing and in (0, 5e6]".to_string());
            }
        }
        if uses("converse.laws") && self.converse_laws == 0 {
            out.push("converse.laws: must be positive".to_string());
        }
        if uses("converse.points") && self.converse_points == 0 {
            out.push("converse.points: must be positive".to_string());
        }
        if uses("converse.dim") && !(1..=8).contains(&self.converse_dim) {
            out.push("converse.dim: must lie in 1..=8".to_string());
        }
        if uses("converse.range") && !(self.converse_range > 0.0 && self.converse_range.is_finite()) {
            out.push("converse.range: must be positive".to_string());
        }
    }

    /// The effective config as `(key, value)` pairs, restricted to the keys
    /// this experiment reads.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = vec![("experiment", self.experiment.name().to_string()), ("seed", self.seed.to_string())];
        if self.experiment.uses_source() {
            out.extend(self.source.entries());
        }
        let all: Vec<(&str, String)> = vec![
            ("distortion.p", if self.distortion.p.is_infinite() { "inf".to_string() } else { real(self.distortion.p) }),
            ("distortion.r", real(self.distortion.r)),
            ("distortion.d", list(&self.distortion.grid)),
            ("estimator.samples", self.estimator.samples.to_string()),
            ("estimator.k", self.estimator.k.to_string()),
            ("estimator.points_per_scale", self.estimator.points_per_scale.to_string()),
            ("estimator.tol", real(self.estimator.tol)),
            ("estimator.max_iter", self.estimator.max_iter.to_string()),
            ("ba.cells", self.ba.cells.to_string()),
            (
                "ba.support",
                match self.ba.support {
                    None => "auto".to_string(),
                    Some((a, b)) => format!("{},{}", real(a), real(b)),
                },
            ),
            ("ba.rel_tol", real(self.ba.rel_tol)),
            ("quantizer.steps", list(&self.quantizer_steps)),
            (
                "quantizer.reconstruction",
                match self.reconstruction {
                    Reconstruction::WithinCell => "within-cell".to_string(),
                    Reconstruction::Midpoint => "midpoint".to_string(),
                },
            ),
            ("infodim.m_grid", list(&self.infodim_m_grid)),
            ("lemma1.eps", list(&self.lemma1_eps)),
            ("pathological.m_grid", list(&self.pathological_m_grid)),
            ("pathological.eps", real(self.pathological_eps)),
            ("pathological.upsilon", list(&self.pathological_upsilon)),
            ("converse.laws", self.converse_laws.to_string()),
            ("converse.points", self.converse_points.to_string()),
            ("converse.dim", self.converse_dim.to_string()),
            ("converse.range", real(self.converse_range)),
        ];
        let keys = self.experiment.keys();
        out.extend(all.into_iter().filter(|(k, _)| keys.contains(k)));
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_for_every_experiment() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::defaults(e);
            let text: String = cfg.to_entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            assert_eq!(ExperimentConfig::from_text(e, &text).unwrap(), cfg, "{e}");
        }
    }

    #[test]
    fn parses_comments_spacing_and_lists() {
        let text = "# a comment\n\nsource.name = laplacian\nsource.rate=2.5\n distortion.d = 0.5, 0.25 ,0.125\ndistortion.p=inf\nseed=42\n";
        let cfg = ExperimentConfig::from_text(Experiment::Slb, text).unwrap();
        assert_eq!(cfg.source, SourceSpec::Laplacian { rate: 2.5 });
        assert_eq!(cfg.distortion.grid, vec![0.5, 0.25, 0.125]);
        assert!(cfg.distortion.p.is_infinite());
        assert_eq!(cfg.seed, 42);
        let echo: String = cfg.to_entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        assert!(echo.contains("distortion.p=inf\n"));
        assert_eq!(ExperimentConfig::from_text(Experiment::Slb, &echo).unwrap(), cfg);
    }

    #[test]
    fn reports_every_violation() {
        let text = "source.variance=-1\ndistortion.r=abc\nba.cells=10\nsource.rate=2\nnot a pair\n";
        let err = ExperimentConfig::from_text(Experiment::Slb, text).unwrap_err();
        assert_eq!(err.0.len(), 1, "{err}");
        let text = "source.variance=-1\ndistortion.r=abc\nba.cells=10\nsource.rate=2\ndistortion.d=0.1,0.2\n";
        let err = ExperimentConfig::from_text(Experiment::Slb, text).unwrap_err();
        let msg = err.to_string();
        for needle in ["source: ", "distortion.r", "ba.cells", "source.rate", "distortion.d"] {
            assert!(msg.contains(needle), "{msg}");
        }
        assert_eq!(err.0.len(), 5, "{msg}");
    }

    #[test]
    fn range_errors_are_listed_together() {
        let text = "source.variance=-1\ndistortion.d=0.1,0.2\n";
        let err = ExperimentConfig::from_text(Experiment::Slb, text).unwrap_err();
        assert_eq!(err.0.len(), 2, "{err}");
    }

    #[test]
    fn experiment_key_must_match_subcommand() {
        assert!(ExperimentConfig::from_text(Experiment::Slb, "experiment=quantize\n").is_err());
        assert!(ExperimentConfig::from_text(Experiment::Slb, "experiment=slb\n").is_ok());
    }

    #[test]
    fn float_echo_is_exact() {
        let cfg = ExperimentConfig::from_text(Experiment::Quantize, "quantizer.steps=0.1,0.30000000000000004,1e-300\n").unwrap();
        let echo: String = cfg.to_entries().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let back = ExperimentConfig::from_text(Experiment::Quantize, &echo).unwrap();
        assert_eq!(back.quantizer_steps, vec![0.1, 0.30000000000000004, 1e-300]);
    }
}
