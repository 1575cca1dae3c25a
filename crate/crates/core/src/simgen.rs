//! Seeded generators for the simulated collections used in the examples and
//! acceptance tests. Every dataset draws from its own child stream, so a
//! collection is reproducible from `(scenario, n, seed)` alone.

use std::f64::consts::{SQRT_2, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::transport::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// 15 univariate normals with unit variance, 5 around each of three means.
    Ex11dGauss3,
    /// 20 standard normals and 20 fair coin flips on {-1, 1}.
    Ex21dGaussVsTwopoint,
    /// Three groups of symmetric two-component normal mixtures, all rescaled to
    /// mean 0 and variance 1 so that only their shape differs.
    Ex31dMixtures,
    /// 20 bivariate N(0, I), 20 N((5, 5), I) and 20 uniform on the unit square.
    Biv1GaussGaussUnif,
    /// Four groups of 10 uniform-on-circle datasets.
    Biv2Circles4,
    /// 50 bivariate N(0, I) and 50 uniform on the circle of radius sqrt(2).
    Biv3GaussVsCircle,
    /// 80 bivariate normals whose means scatter around four centers.
    Medoid4Gauss,
    /// 50 bivariate N(0, I) and 50 uniform on the circle with the same mean and covariance.
    MarginalNormalCircle,
    /// 50 univariate N(0, 1) and 50 Rademacher samples.
    TransformedNormalRademacher,
}

impl Scenario {
    pub const ALL: [Scenario; 9] = [
        Scenario::Ex11dGauss3,
        Scenario::Ex21dGaussVsTwopoint,
        Scenario::Ex31dMixtures,
        Scenario::Biv1GaussGaussUnif,
        Scenario::Biv2Circles4,
        Scenario::Biv3GaussVsCircle,
        Scenario::Medoid4Gauss,
        Scenario::MarginalNormalCircle,
        Scenario::TransformedNormalRademacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Ex11dGauss3 => "ex1_1d_gauss3",
            Scenario::Ex21dGaussVsTwopoint => "ex2_1d_gauss_vs_twopoint",
            Scenario::Ex31dMixtures => "ex3_1d_mixtures",
            Scenario::Biv1GaussGaussUnif => "biv1_gauss_gauss_unif",
            Scenario::Biv2Circles4 => "biv2_circles4",
            Scenario::Biv3GaussVsCircle => "biv3_gauss_vs_circle",
            Scenario::Medoid4Gauss => "medoid4_gauss",
            Scenario::MarginalNormalCircle => "marginal_normal_circle",
            Scenario::TransformedNormalRademacher => "transformed_normal_rademacher",
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            Scenario::TransformedNormalRademacher => 1000,
            _ => 100,
        }
    }

    /// Group sizes, in label order.
    pub fn groups(self) -> &'static [usize] {
        match self {
            Scenario::Ex11dGauss3 => &[5, 5, 5],
            Scenario::Ex21dGaussVsTwopoint => &[20, 20],
            Scenario::Ex31dMixtures => &[5, 5, 5],
            Scenario::Biv1GaussGaussUnif => &[20, 20, 20],
            Scenario::Biv2Circles4 => &[10, 10, 10, 10],
            Scenario::Biv3GaussVsCircle => &[50, 50],
            Scenario::Medoid4Gauss => &[20, 20, 20, 20],
            Scenario::MarginalNormalCircle => &[50, 50],
            Scenario::TransformedNormalRademacher => &[50, 50],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown scenario {s:?}")))
    }
}

/// A scenario with its sample size, seed and tunable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n_per_dataset: usize,
    pub seed: u64,
    /// Group means for `ex1_1d_gauss3`.
    pub ex1_means: [f64; 3],
    /// Per group of `ex3_1d_mixtures`: distance between the two unit-variance
    /// components, before rescaling to mean 0 and variance 1.
    pub ex3_offsets: [f64; 3],
    /// Per group of `ex3_1d_mixtures`: weight of the shifted component.
    pub ex3_weights: [f64; 3],
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            n_per_dataset: scenario.default_n(),
            seed,
            ex1_means: [0.0, 2.0, 4.0],
            ex3_offsets: [0.0, 6.0, 6.0],
            ex3_weights: [0.5, 0.5, 0.15],
        }
    }
}

/// Generated datasets with their true group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub datasets: Vec<Dataset>,
    pub labels: Vec<usize>,
}

const CIRCLE_ANCHORS: [(f64, f64); 4] = [(-5.0, -5.0), (5.0, -5.0), (-5.0, 5.0), (5.0, 5.0)];
const CIRCLE_RADII: [(f64, f64); 4] = [(0.5, 1.0), (1.5, 2.0), (2.5, 3.0), (3.5, 4.0)];
const MEDOID_CENTERS: [(f64, f64); 4] = [(0.0, 0.0), (8.0, 0.0), (0.0, 12.0), (12.0, 12.0)];

pub fn generate(spec: &ScenarioSpec) -> Result<Simulation> {
    let n = spec.n_per_dataset;
    if n < 2 {
        return Err(Error::InvalidParam(format!("datasets need at least 2 observations, got {n}")));
    }
    if spec.ex3_weights.iter().any(|w| !(0.0..=1.0).contains(w)) || spec.ex3_offsets.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParam("ex3 weights must lie in [0, 1] and offsets be finite".into()));
    }
    let labels: Vec<usize> = spec
        .scenario
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(g, &count)| std::iter::repeat_n(g, count))
        .collect();
    let datasets = labels
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let mut s = rng::stream(rng::indexed_seed(spec.seed, rng::DATASET, j as u64));
            let points = draw(spec, g, n, &mut s);
            Dataset::new(format!("{}_{j:03}", spec.scenario.name()), points)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation { datasets, labels })
}

fn normal(s: &mut StreamRng) -> f64 {
    s.sample(StandardNormal)
}

fn column(n: usize, s: &mut StreamRng, mut f: impl FnMut(&mut StreamRng) -> f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 1, |_, _| f(s))
}

fn plane(n: usize, s: &mut StreamRng, mut f: impl FnMut(&mut StreamRng) -> (f64, f64)) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, 2);
    for i in 0..n {
        let (x, y) = f(s);
        m[(i, 0)] = x;
        m[(i, 1)] = y;
    }
    m
}

fn on_circle(s: &mut StreamRng, cx: f64, cy: f64, r: f64) -> (f64, f64) {
    let t = s.random_range(0.0..TAU);
    (cx + r * t.cos(), cy + r * t.sin())
}

fn draw(spec: &ScenarioSpec, g: usize, n: usize, s: &mut StreamRng) -> DMatrix<f64> {
    match spec.scenario {
        Scenario::Ex11dGauss3 => {
            let mu = spec.ex1_means[g];
            column(n, s, |s| mu + normal(s))
        }
        Scenario::Ex21dGaussVsTwopoint => match g {
            0 => column(n, s, normal),
            _ => {
                // half the points at each atom, so mean and variance are exactly 0 and 1
                let mut v: Vec<f64> = (0..n).map(|i| if i < n / 2 { -1.0 } else { 1.0 }).collect();
                if n % 2 == 1 && s.random_bool(0.5) {
                    v[n / 2] = -1.0;
                }
                v.shuffle(s);
                DMatrix::from_vec(n, 1, v)
            }
        },
        Scenario::Ex31dMixtures => {
            // (1 - w) N(0, 1) + w N(d, 1) has mean w d and variance 1 + w (1 - w) d^2
            let (d, w) = (spec.ex3_offsets[g], spec.ex3_weights[g]);
            let mean = w * d;
            let scale = (1.0 + w * (1.0 - w) * d * d).sqrt().recip();
            column(n, s, |s| {
                let shift = if s.random_bool(w) { d } else { 0.0 };
                scale * (shift + normal(s) - mean)
            })
        }
        Scenario::Biv1GaussGaussUnif => match g {
            0 => plane(n, s, |s| (normal(s), normal(s))),
            1 => plane(n, s, |s| (5.0 + normal(s), 5.0 + normal(s))),
            _ => plane(n, s, |s| (s.random_range(0.0..1.0), s.random_range(0.0..1.0))),
        },
        Scenario::Biv2Circles4 => {
            let (ax, ay) = CIRCLE_ANCHORS[g];
            let (lo, hi) = CIRCLE_RADII[g];
            let cx = ax + s.random_range(-1.0..1.0);
            let cy = ay + s.random_range(-1.0..1.0);
            let r = s.random_range(lo..hi);
            plane(n, s, |s| on_circle(s, cx, cy, r))
        }
        Scenario::Biv3GaussVsCircle | Scenario::MarginalNormalCircle => match g {
            0 => plane(n, s, |s| (normal(s), normal(s))),
            // uniform on a circle of radius r has covariance (r^2 / 2) I
            _ => plane(n, s, |s| on_circle(s, 0.0, 0.0, SQRT_2)),
        },
        Scenario::Medoid4Gauss => {
            let (gx, gy) = MEDOID_CENTERS[g];
            let cx = gx + normal(s);
            let cy = gy + normal(s);
            plane(n, s, |s| (cx + normal(s), cy + normal(s)))
        }
        Scenario::TransformedNormalRademacher => match g {
            0 => column(n, s, normal),
            _ => {
                // half the points at each atom, so mean and variance are exactly 0 and 1
                let mut v: Vec<f64> = (0..n).map(|i| if i < n / 2 { -1.0 } else { 1.0 }).collect();
                if n % 2 == 1 && s.random_bool(0.5) {
                    v[n / 2] = -1.0;
                }
                v.shuffle(s);
                DMatrix::from_vec(n, 1, v)
            }
        },
    }
}
