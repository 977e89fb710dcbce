//! Synthetic tasks with known conditional distributions. Every regression
//! task draws `x ~ U(0, 3)` and splits the domain into the unit subintervals
//! `[0,1)`, `[1,2)`, `[2,3)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{domain, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyTask {
    /// Three disjoint line segments plus N(0, 0.3²) noise.
    A,
    /// Two uniform boxes of y per subinterval.
    B,
    /// Same distribution as `B` with a fifth of the rows.
    C,
    /// Sine, constant and quadratic segments plus N(0, 0.2²) noise.
    D,
    /// `y = 2x` with noise standard deviation `0.1 + 0.5x`.
    E,
}

pub const TASK_A_NOISE: f64 = 0.3;
pub const TASK_D_NOISE: f64 = 0.2;

impl ToyTask {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(Self::A),
            "b" => Some(Self::B),
            "c" => Some(Self::C),
            "d" => Some(Self::D),
            "e" => Some(Self::E),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::A => 'a',
            Self::B => 'b',
            Self::C => 'c',
            Self::D => 'd',
            Self::E => 'e',
        }
    }

    pub fn segment(x: f64) -> usize {
        (x.floor().max(0.0) as usize).min(2)
    }

    /// Noise-free curve of task `A` on segment `k`.
    pub fn line_a(x: f64, k: usize) -> f64 {
        match k {
            0 => x,
            1 => x + 3.0,
            _ => -x + 2.0,
        }
    }

    /// The two y-boxes of tasks `B`/`C` on segment `k`.
    pub fn boxes(k: usize) -> [(f64, f64); 2] {
        match k {
            0 => [(-4.0, -3.0), (-1.0, 0.0)],
            1 => [(1.0, 2.0), (4.0, 5.0)],
            _ => [(-2.0, -1.0), (2.0, 3.0)],
        }
    }

    fn curve_d(x: f64) -> f64 {
        match Self::segment(x) {
            0 => 1.5 * (2.0 * std::f64::consts::PI * x).sin(),
            1 => 4.0,
            _ => 4.0 * (x - 2.5).powi(2) - 3.0,
        }
    }

    /// Conditional mean of y given x.
    pub fn mean(self, x: f64) -> f64 {
        match self {
            Self::A => Self::line_a(x, Self::segment(x)),
            Self::B | Self::C => {
                let [(a, b), (c, d)] = Self::boxes(Self::segment(x));
                0.25 * (a + b + c + d)
            }
            Self::D => Self::curve_d(x),
            Self::E => 2.0 * x,
        }
    }

    /// Conditional standard deviation of the additive Gaussian noise, for the
    /// unimodal tasks.
    pub fn noise_std(self, x: f64) -> Option<f64> {
        match self {
            Self::A => Some(TASK_A_NOISE),
            Self::D => Some(TASK_D_NOISE),
            Self::E => Some(0.1 + 0.5 * x),
            Self::B | Self::C => None,
        }
    }

    /// Draw y for a given x.
    pub fn sample_y<R: Rng + ?Sized>(self, x: f64, rng: &mut R) -> f64 {
        match self {
            Self::B | Self::C => {
                let boxes = Self::boxes(Self::segment(x));
                let (lo, hi) = boxes[usize::from(rng.random::<bool>())];
                rng.random_range(lo..hi)
            }
            _ => {
                let sd = self.noise_std(x).unwrap_or(0.0);
                let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
                self.mean(x) + sd * z
            }
        }
    }

    /// Rows actually produced for a requested size `n`.
    pub fn row_count(self, n: usize) -> usize {
        match self {
            Self::C => (n / 5).max(1),
            _ => n,
        }
    }
}

/// Draw a toy dataset with one feature `x` and response `y`.
pub fn toy_generate(task: ToyTask, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("toy task needs at least one row"));
    }
    let rows = task.row_count(n);
    let mut rng = stream(seed, domain::TOY, task.letter() as u64);
    let mut xs = Vec::with_capacity(rows);
    let mut ys = Vec::with_capacity(rows);
    for _ in 0..rows {
        let x = rng.random_range(0.0..3.0);
        xs.push(x);
        ys.push(task.sample_y(x, &mut rng));
    }
    let mut d = Dataset::from_numeric(format!("toy_{}", task.letter()), vec![("x".into(), xs)], ys)?;
    d.response_name = "y".into();
    Ok(d)
}

/// Binary task with a clean region (`x1 < 1`) where `x2` separates the
/// classes at 0.5, and a noisy region (`x1 ≥ 1`) where `x2` lands on the
/// wrong side with probability `noisy_error`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClfToyConfig {
    pub positive_rate: f64,
    pub noisy_fraction: f64,
    pub noisy_error: f64,
}

impl Default for ClfToyConfig {
    fn default() -> Self {
        Self {
            positive_rate: 0.5,
            noisy_fraction: 0.5,
            noisy_error: 0.25,
        }
    }
}

impl ClfToyConfig {
    pub fn is_noisy(x1: f64) -> bool {
        x1 >= 1.0
    }

    /// Best achievable accuracy inside the noisy region.
    pub fn noisy_bayes_accuracy(&self) -> f64 {
        let (p, e) = (self.positive_rate, self.noisy_error);
        let upper = (p * (1.0 - e)).max((1.0 - p) * e);
        let lower = (p * e).max((1.0 - p) * (1.0 - e));
        upper + lower
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) || !unit(self.noisy_fraction) || !(0.0..=0.5).contains(&self.noisy_error) {
            return Err(Error::invalid(format!("invalid classification toy config {self:?}")));
        }
        Ok(())
    }
}

pub fn clf_toy_generate(n: usize, seed: u64, config: &ClfToyConfig) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("classification toy needs at least two rows"));
    }
    config.validate()?;
    let mut rng = stream(seed, domain::TOY, 100);
    let mut x1 = Vec::with_capacity(n);
    let mut x2 = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random::<f64>() < config.positive_rate;
        let noisy = rng.random::<f64>() < config.noisy_fraction;
        let region = if noisy { 1.0 } else { 0.0 };
        let flipped = noisy && rng.random::<f64>() < config.noisy_error;
        let upper = label != flipped;
        x1.push(region + rng.random::<f64>());
        x2.push(if upper { 0.5 } else { 0.0 } + 0.5 * rng.random::<f64>());
        y.push(if label { 1.0 } else { 0.0 });
    }
    Dataset::from_numeric("clf_toy", vec![("x1".into(), x1), ("x2".into(), x2)], y)
}
