//! Synthetic multivariate series.
//!
//! Two generators are provided:
//!
//! * [`gen_mscred_synthetic`]: sin/cos metrics with a random period and delay
//!   each; metrics are paired and each pair shares its period, so pairs are
//!   strongly correlated up to a phase shift.
//! * [`gen_genad_synthetic`]: base metrics from four waveform families
//!   (sin, cos, sawtooth, square) plus derived metrics built by recipes
//!   (linear blends, ReLU, square, product), where a recipe over derived
//!   metrics yields higher-order dependencies.
//!
//! Gaussian noise is always added last, independently per metric and point.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::anomaly::{inject_anomalies, AnomalyKind, AnomalyPlan};
use super::frame::SeriesFrame;
use crate::error::{Error, Result};

/// Timestamp of the first point of every generated series.
pub const SYNTH_EPOCH: i64 = 1_600_000_000;
pub const SYNTH_STEP: i64 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Waveform {
    Sin,
    Cos,
    Sawtooth,
    Square,
}

impl Waveform {
    /// Unit-amplitude waveform at phase angle `x` (radians).
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Waveform::Sin => x.sin(),
            Waveform::Cos => x.cos(),
            Waveform::Sawtooth => 2.0 * (x / TAU).rem_euclid(1.0) - 1.0,
            Waveform::Square => {
                if x.sin() >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    #[default]
    Genad,
    Mscred,
}

/// How a derived metric is computed from earlier metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    /// `Σ weights[j]·x[inputs[j]] + bias`
    Linear {
        inputs: Vec<usize>,
        weights: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
    /// `max(0, x[input] − shift)`
    Relu {
        input: usize,
        #[serde(default)]
        shift: f64,
    },
    /// `x[input]²`
    Square { input: usize },
    /// `x[left]·x[right]`
    Product { left: usize, right: usize },
}

impl Recipe {
    pub fn inputs(&self) -> Vec<usize> {
        match self {
            Recipe::Linear { inputs, .. } => inputs.clone(),
            Recipe::Relu { input, .. } | Recipe::Square { input } => vec![*input],
            Recipe::Product { left, right } => vec![*left, *right],
        }
    }

    /// Applies the recipe at point `t` of `values`.
    pub fn eval(&self, values: &[Vec<f64>], t: usize) -> f64 {
        match self {
            Recipe::Linear { inputs, weights, bias } => {
                let mut acc = 0.0;
                for (&i, &w) in inputs.iter().zip(weights) {
                    acc += w * values[i][t];
                }
                acc + bias
            }
            Recipe::Relu { input, shift } => (values[*input][t] - shift).max(0.0),
            Recipe::Square { input } => values[*input][t] * values[*input][t],
            Recipe::Product { left, right } => values[*left][t] * values[*right][t],
        }
    }
}

fn default_waveforms() -> Vec<Waveform> {
    vec![Waveform::Sin, Waveform::Cos, Waveform::Sawtooth, Waveform::Square]
}

fn default_period_range() -> [f64; 2] {
    [40.0, 50.0]
}

fn default_fleet_size() -> usize {
    32
}

/// Everything needed to regenerate a synthetic entity or fleet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_metrics: usize,
    pub n_points: usize,
    pub seed: u64,
    #[serde(default)]
    pub generator: Generator,
    /// Base metric `b` uses `waveforms[b % len]`.
    #[serde(default = "default_waveforms")]
    pub waveforms: Vec<Waveform>,
    /// Derived metrics; recipe `r` defines metric `n_metrics − recipes.len() + r`.
    #[serde(default)]
    pub recipes: Vec<Recipe>,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default)]
    pub noise: f64,
    /// Range of ω in `wave((t − t0)/ω)`.
    #[serde(default = "default_period_range")]
    pub period_range: [f64; 2],
    #[serde(default)]
    pub anomalies: AnomalyPlan,
    #[serde(default = "default_fleet_size")]
    pub fleet_size: usize,
}

impl SyntheticSpec {
    /// The reference entity: 18 metrics (8 base, 10 derived), 4800 points,
    /// ten anomalies placed after the first 1920 points.
    pub fn genad_default() -> Self {
        use Recipe::*;
        let lin = |inputs: Vec<usize>, weights: Vec<f64>| Linear { inputs, weights, bias: 0.0 };
        Self {
            n_metrics: 18,
            n_points: 4800,
            seed: 2021,
            generator: Generator::Genad,
            waveforms: default_waveforms(),
            // Recipes read only the sin/cos bases (0, 1, 4, 5) and each other, so a
            // sawtooth or square edge stays confined to its own metric.
            recipes: vec![
                lin(vec![0, 1], vec![0.5, 0.5]),
                lin(vec![4, 5], vec![0.7, -0.3]),
                lin(vec![0, 4, 5], vec![0.4, 0.3, 0.3]),
                Relu { input: 1, shift: 0.0 },
                Square { input: 0 },
                Product { left: 1, right: 4 },
                lin(vec![1, 5], vec![0.5, 0.5]),
                // Higher-order: non-linear recipes over derived metrics.
                Relu { input: 8, shift: 0.2 },
                Product { left: 9, right: 10 },
                Square { input: 14 },
            ],
            noise: 0.02,
            // Several periods fit in one window, so the target segment is
            // predictable from the four before it.
            period_range: [6.0, 10.0],
            anomalies: AnomalyPlan {
                count: 10,
                min_duration: 5,
                max_duration: 20,
                magnitude: 0.6,
                kinds: vec![AnomalyKind::Spike, AnomalyKind::Flatline, AnomalyKind::CorrelationBreak],
                start: 1920,
                metric_fraction: 0.3,
            },
            fleet_size: default_fleet_size(),
        }
    }

    /// Sin/cos pairs in the style of the MSCRED benchmark.
    pub fn mscred_default() -> Self {
        Self {
            n_metrics: 10,
            n_points: 4800,
            seed: 2018,
            generator: Generator::Mscred,
            waveforms: vec![Waveform::Sin, Waveform::Cos],
            recipes: vec![],
            noise: 0.1,
            period_range: default_period_range(),
            anomalies: AnomalyPlan::default(),
            fleet_size: 5,
        }
    }

    pub fn n_base(&self) -> usize {
        self.n_metrics.saturating_sub(self.recipes.len())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_metrics < 2 {
            return Err(Error::Spec(format!("n_metrics must be at least 2, got {}", self.n_metrics)));
        }
        if self.n_points == 0 {
            return Err(Error::Spec("n_points must be positive".into()));
        }
        if self.fleet_size == 0 {
            return Err(Error::Spec("fleet_size must be positive".into()));
        }
        if self.waveforms.is_empty() {
            return Err(Error::Spec("waveforms must not be empty".into()));
        }
        let [lo, hi] = self.period_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Spec(format!("period_range must satisfy 0 < lo ≤ hi, got {lo}..{hi}")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Spec("noise must be a finite non-negative number".into()));
        }
        match self.generator {
            Generator::Mscred => {
                if !self.recipes.is_empty() {
                    return Err(Error::Spec("the mscred generator takes no recipes".into()));
                }
                if self.waveforms.iter().any(|w| !matches!(w, Waveform::Sin | Waveform::Cos)) {
                    return Err(Error::Spec("the mscred generator only supports sin and cos".into()));
                }
            }
            Generator::Genad => {
                if self.n_metrics < 4 {
                    return Err(Error::Spec(format!(
                        "the genad generator needs at least 4 metrics, got {}",
                        self.n_metrics
                    )));
                }
                if self.recipes.len() >= self.n_metrics {
                    return Err(Error::Spec("at least one base metric is required".into()));
                }
                let n_base = self.n_base();
                for (r, recipe) in self.recipes.iter().enumerate() {
                    let target = n_base + r;
                    if let Recipe::Linear { inputs, weights, .. } = recipe {
                        if inputs.is_empty() || inputs.len() != weights.len() {
                            return Err(Error::Spec(format!(
                                "recipes[{r}]: linear recipe needs matching non-empty inputs and weights"
                            )));
                        }
                    }
                    if let Some(bad) = recipe.inputs().into_iter().find(|&i| i >= target) {
                        return Err(Error::Spec(format!(
                            "recipes[{r}] (metric {target}) references metric {bad}, which does not exist before it"
                        )));
                    }
                }
            }
        }
        self.anomalies.validate(self.n_points)
    }
}

/// Seed for entity `k` of a fleet (splitmix64 over the base seed).
pub fn entity_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Base {
    wave: Waveform,
    omega: f64,
    delay: f64,
}

impl Base {
    fn at(&self, t: usize) -> f64 {
        self.wave.eval((t as f64 - self.delay) / self.omega)
    }
}

fn draw_omega(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> f64 {
    let [lo, hi] = spec.period_range;
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn add_noise(values: &mut [Vec<f64>], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma == 0.0 {
        return;
    }
    for m in values.iter_mut() {
        for x in m.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *x += sigma * e;
        }
    }
}

fn finish(spec: &SyntheticSpec, values: Vec<Vec<f64>>, rng: &mut ChaCha8Rng) -> Result<SeriesFrame> {
    let mut frame = SeriesFrame::from_values(values, SYNTH_EPOCH)?;
    let n_base = spec.n_base();
    frame.meta.recipes = spec.recipes.iter().cloned().enumerate().map(|(r, x)| (n_base + r, x)).collect();
    inject_anomalies(&frame, &spec.anomalies, rng)
}

/// Sin/cos metrics; metrics `2p` and `2p+1` share a period.
pub fn gen_mscred_synthetic(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    let mut spec = spec.clone();
    spec.generator = Generator::Mscred;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut bases = Vec::with_capacity(spec.n_metrics);
    let mut omega = 0.0;
    for i in 0..spec.n_metrics {
        if i % 2 == 0 {
            omega = draw_omega(&spec, &mut rng);
        }
        let delay = rng.random_range(0.0..TAU * omega);
        bases.push(Base { wave: spec.waveforms[i % spec.waveforms.len()], omega, delay });
    }
    let mut values: Vec<Vec<f64>> = bases.iter().map(|b| (0..spec.n_points).map(|t| b.at(t)).collect()).collect();
    add_noise(&mut values, spec.noise, &mut rng);
    finish(&spec, values, &mut rng)
}

/// Waveform bases plus recipe-derived metrics.
pub fn gen_genad_synthetic(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    let mut spec = spec.clone();
    spec.generator = Generator::Genad;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_base = spec.n_base();
    let mut values: Vec<Vec<f64>> = Vec::with_capacity(spec.n_metrics);
    for b in 0..n_base {
        let omega = draw_omega(&spec, &mut rng);
        let delay = rng.random_range(0.0..TAU * omega);
        let base = Base { wave: spec.waveforms[b % spec.waveforms.len()], omega, delay };
        values.push((0..spec.n_points).map(|t| base.at(t)).collect());
    }
    for recipe in &spec.recipes {
        let derived = (0..spec.n_points).map(|t| recipe.eval(&values, t)).collect();
        values.push(derived);
    }
    add_noise(&mut values, spec.noise, &mut rng);
    finish(&spec, values, &mut rng)
}

/// Generates one entity with the spec's generator.
pub fn generate(spec: &SyntheticSpec) -> Result<SeriesFrame> {
    match spec.generator {
        Generator::Genad => gen_genad_synthetic(spec),
        Generator::Mscred => gen_mscred_synthetic(spec),
    }
}

/// `fleet_size` entities sharing recipe structure, each with its own
/// periods, delays, noise draws and anomaly placement.
pub fn gen_fleet(spec: &SyntheticSpec) -> Result<Vec<SeriesFrame>> {
    spec.validate()?;
    (0..spec.fleet_size)
        .map(|k| {
            let mut s = spec.clone();
            s.seed = entity_seed(spec.seed, k);
            generate(&s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn mscred_pair_is_correlated_up_to_shift() {
        let spec = SyntheticSpec {
            n_metrics: 2,
            n_points: 2000,
            waveforms: vec![Waveform::Sin],
            noise: 0.0,
            ..SyntheticSpec::mscred_default()
        };
        let f = gen_mscred_synthetic(&spec).unwrap();
        let (a, b) = (f.metric(0), f.metric(1));
        let best = (0..400)
            .flat_map(|lag| [pearson(&a[lag..1500 + lag], &b[..1500]), pearson(&a[..1500], &b[lag..1500 + lag])])
            .fold(f64::MIN, f64::max);
        assert!(best > 0.999, "best lagged correlation {best}");
    }

    #[test]
    fn generation_is_a_pure_function_of_the_spec() {
        let spec = SyntheticSpec::genad_default();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed += 1;
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn mscred_fleet_is_finite() {
        let spec = SyntheticSpec { noise: 0.1, period_range: [40.0, 50.0], ..SyntheticSpec::mscred_default() };
        let fleet = gen_fleet(&spec).unwrap();
        assert_eq!(fleet.len(), 5);
        assert!(fleet.iter().all(|f| f.values().iter().flatten().all(|x| x.is_finite())));
    }

    #[test]
    fn linear_recipe_holds_exactly_without_noise() {
        let spec = SyntheticSpec {
            n_metrics: 4,
            n_points: 500,
            recipes: vec![Recipe::Linear { inputs: vec![1, 2], weights: vec![0.5, 0.5], bias: 0.0 }],
            noise: 0.0,
            anomalies: AnomalyPlan::default(),
            ..SyntheticSpec::genad_default()
        };
        let f = gen_genad_synthetic(&spec).unwrap();
        for t in 0..500 {
            assert_eq!(f.metric(3)[t], 0.5 * f.metric(1)[t] + 0.5 * f.metric(2)[t]);
        }
        assert_eq!(f.meta.recipes.len(), 1);
        assert_eq!(f.meta.recipes[0].0, 3);
    }

    #[test]
    fn square_wave_takes_two_levels() {
        let noise = 0.01;
        let spec = SyntheticSpec {
            n_metrics: 4,
            n_points: 1000,
            waveforms: vec![Waveform::Square],
            recipes: vec![],
            noise,
            anomalies: AnomalyPlan::default(),
            ..SyntheticSpec::genad_default()
        };
        let f = gen_genad_synthetic(&spec).unwrap();
        let bound = 6.0 * noise;
        for &x in f.metric(0) {
            assert!((x - 1.0).abs() <= bound || (x + 1.0).abs() <= bound, "{x}");
        }
    }

    #[test]
    fn recipe_referencing_a_later_metric_is_rejected() {
        let spec = SyntheticSpec {
            n_metrics: 4,
            recipes: vec![Recipe::Square { input: 3 }],
            ..SyntheticSpec::genad_default()
        };
        assert!(matches!(gen_genad_synthetic(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let mut v = serde_json::to_value(SyntheticSpec::genad_default()).unwrap();
        assert!(SyntheticSpec::from_json(&v.to_string()).is_ok());
        v["colour"] = serde_json::json!("blue");
        assert!(matches!(SyntheticSpec::from_json(&v.to_string()), Err(Error::Spec(_))));
        let bad = r#"{"n_metrics": 1, "n_points": 10, "seed": 1}"#;
        assert!(matches!(SyntheticSpec::from_json(bad), Err(Error::Spec(_))));
    }
}
