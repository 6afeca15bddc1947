//! Hidden mixtures of product distributions over the sampling box, plug-in
//! entropy estimation for discrete outcomes, and the preset scenarios used
//! by the benchmarks.

use std::collections::HashMap;
use std::hash::Hash;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{pt, Point};

/// Lower bound demanded of `lambda_min * n`: every component must carry at
/// least this much mass relative to 1/n.
pub const LAMBDA_MASS: f64 = 0.25;

/// Box half-extent used by the presets.
pub const PRESET_HALF: f64 = 8.0;

#[derive(Debug, Error, PartialEq)]
pub enum MixtureError {
    #[error("mixture needs at least one component and one coordinate")]
    Empty,
    #[error("weights must sum to 1, got {0}")]
    BadWeightSum(f64),
    #[error("component weight {weight} is below the floor {floor}")]
    WeightBelowFloor { weight: f64, floor: f64 },
    #[error("weight floor {floor} with n = {n} falls short of the mass bound")]
    WeightFloorTooLow { floor: f64, n: usize },
    #[error("component {comp} has {got} samplers for n = {n}")]
    WrongArity { comp: usize, got: usize, n: usize },
    #[error("sampler for component {comp}, coordinate {i} is invalid: {why}")]
    BadSampler { comp: usize, i: usize, why: &'static str },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

/// One per-coordinate distribution of a product component. Every draw lands
/// inside the box `[-half, half]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    UniformRect { lo: Point, hi: Point },
    /// Redrawn until the sample lands inside the box.
    GaussianClipped { mean: Point, sd: f64 },
    PointMass { at: Point, jitter: f64 },
}

impl Sampler {
    pub fn draw(&self, half: f64, rng: &mut impl Rng) -> Point {
        match *self {
            Sampler::UniformRect { lo, hi } => pt(
                lo.x + (hi.x - lo.x) * rng.random::<f64>(),
                lo.y + (hi.y - lo.y) * rng.random::<f64>(),
            ),
            Sampler::GaussianClipped { mean, sd } => {
                let nx = Normal::new(mean.x, sd).expect("validated sd");
                let ny = Normal::new(mean.y, sd).expect("validated sd");
                for _ in 0..65_536 {
                    let p = pt(nx.sample(rng), ny.sample(rng));
                    if p.x.abs() <= half && p.y.abs() <= half {
                        return p;
                    }
                }
                // the mean is validated to be inside the box, so rejection
                // terminates with overwhelming probability long before this
                pt(mean.x.clamp(-half, half), mean.y.clamp(-half, half))
            }
            Sampler::PointMass { at, jitter } => pt(
                at.x + jitter * (2.0 * rng.random::<f64>() - 1.0),
                at.y + jitter * (2.0 * rng.random::<f64>() - 1.0),
            ),
        }
    }

    fn check(&self, half: f64) -> Result<(), &'static str> {
        let inside = |p: Point| p.x.abs() <= half && p.y.abs() <= half;
        match *self {
            Sampler::UniformRect { lo, hi } => {
                if lo.x > hi.x || lo.y > hi.y {
                    return Err("inverted rectangle");
                }
                if !inside(lo) || !inside(hi) {
                    return Err("rectangle leaves the box");
                }
            }
            Sampler::GaussianClipped { mean, sd } => {
                if !(sd > 0.0) {
                    return Err("nonpositive standard deviation");
                }
                if !inside(mean) {
                    return Err("mean outside the box");
                }
            }
            Sampler::PointMass { at, jitter } => {
                if !(jitter >= 0.0) {
                    return Err("negative jitter");
                }
                if !inside(pt(at.x - jitter, at.y - jitter))
                    || !inside(pt(at.x + jitter, at.y + jitter))
                {
                    return Err("jitter square leaves the box");
                }
            }
        }
        Ok(())
    }
}

/// A hidden mixture of `m` product distributions over instances of `n`
/// points in the box `[-half, half]^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub m: usize,
    pub n: usize,
    pub half: f64,
    /// Component weights; sum 1, each at least `lambda_min`.
    pub weights: Vec<f64>,
    /// Weight floor; `lambda_min * n` must reach `LAMBDA_MASS`.
    pub lambda_min: f64,
    /// `comps[a][i]` draws point i under component a.
    pub comps: Vec<Vec<Sampler>>,
    pub seed: u64,
}

impl MixtureModel {
    pub fn new(
        half: f64,
        weights: Vec<f64>,
        lambda_min: f64,
        comps: Vec<Vec<Sampler>>,
        seed: u64,
    ) -> Result<MixtureModel, MixtureError> {
        let n = comps.first().map_or(0, Vec::len);
        let mx = MixtureModel { m: comps.len(), n, half, weights, lambda_min, comps, seed };
        mx.validate()?;
        Ok(mx)
    }

    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.m == 0 || self.n == 0 {
            return Err(MixtureError::Empty);
        }
        if self.lambda_min * self.n as f64 + 1e-12 < LAMBDA_MASS {
            return Err(MixtureError::WeightFloorTooLow { floor: self.lambda_min, n: self.n });
        }
        let sum: f64 = self.weights.iter().sum();
        if self.weights.len() != self.m || (sum - 1.0).abs() > 1e-9 {
            return Err(MixtureError::BadWeightSum(sum));
        }
        for &w in &self.weights {
            if w + 1e-12 < self.lambda_min {
                return Err(MixtureError::WeightBelowFloor { weight: w, floor: self.lambda_min });
            }
        }
        for (a, comp) in self.comps.iter().enumerate() {
            if comp.len() != self.n {
                return Err(MixtureError::WrongArity { comp: a, got: comp.len(), n: self.n });
            }
            for (i, s) in comp.iter().enumerate() {
                s.check(self.half)
                    .map_err(|why| MixtureError::BadSampler { comp: a, i, why })?;
            }
        }
        Ok(())
    }

    /// Fresh deterministic generator for this model.
    pub fn stream(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    pub fn sample_component(&self, rng: &mut impl Rng) -> usize {
        WeightedIndex::new(&self.weights)
            .expect("validated weights")
            .sample(rng)
    }

    /// Draws the component, then each point independently from that
    /// component's per-coordinate sampler.
    pub fn sample_instance_with(&self, rng: &mut impl Rng) -> (usize, Vec<Point>) {
        let a = self.sample_component(rng);
        let instance = self.comps[a].iter().map(|s| s.draw(self.half, rng)).collect();
        (a, instance)
    }

    pub fn sample_instance(&self, rng: &mut impl Rng) -> Vec<Point> {
        self.sample_instance_with(rng).1
    }
}

/// Plug-in entropy of a discrete empirical distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntropyEstimate {
    /// Bits.
    pub h: f64,
    pub samples: usize,
    pub distinct: usize,
    /// Delta-method standard error, bits.
    pub se: f64,
}

pub fn empirical_entropy<T: Hash + Eq>(outcomes: &[T]) -> EntropyEstimate {
    assert!(!outcomes.is_empty(), "entropy needs at least one outcome");
    let mut counts: HashMap<&T, u64> = HashMap::new();
    for o in outcomes {
        *counts.entry(o).or_insert(0) += 1;
    }
    let mut cs: Vec<u64> = counts.into_values().collect();
    cs.sort_unstable_by(|a, b| b.cmp(a));
    let n = outcomes.len() as f64;
    let mut h = 0.0f64;
    let mut m2 = 0.0f64;
    for &c in &cs {
        let f = c as f64 / n;
        let l = f.log2();
        h -= f * l;
        m2 += f * l * l;
    }
    let var = ((m2 - h * h) / n).max(0.0);
    EntropyEstimate { h: h.max(0.0), samples: outcomes.len(), distinct: cs.len(), se: var.sqrt() }
}

/// Pearson chi-square statistic and degrees of freedom of an r x c
/// contingency table. Cells with zero expectation contribute nothing.
pub fn chi_square(table: &[Vec<u64>]) -> (f64, usize) {
    let r = table.len();
    let c = table.first().map_or(0, Vec::len);
    assert!(r >= 2 && c >= 2, "table must be at least 2x2");
    let row: Vec<f64> = table.iter().map(|t| t.iter().sum::<u64>() as f64).collect();
    let mut col = vec![0.0f64; c];
    for t in table {
        assert_eq!(t.len(), c, "ragged table");
        for (j, &v) in t.iter().enumerate() {
            col[j] += v as f64;
        }
    }
    let total: f64 = row.iter().sum();
    let mut stat = 0.0;
    for i in 0..r {
        for j in 0..c {
            let e = row[i] * col[j] / total;
            if e > 0.0 {
                let d = table[i][j] as f64 - e;
                stat += d * d / e;
            }
        }
    }
    (stat, (r - 1) * (c - 1))
}

/// Named benchmark scenarios with uniform component weights.
pub fn preset_mixtures(name: &str, n: usize, m: usize) -> Result<MixtureModel, MixtureError> {
    use rand::SeedableRng;
    if n == 0 || m == 0 {
        return Err(MixtureError::Empty);
    }
    let half = PRESET_HALF;
    let weights = vec![1.0 / m as f64; m];
    let lambda_min = (LAMBDA_MASS / n as f64).min(1.0 / m as f64);
    let mut geo = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let comps: Vec<Vec<Sampler>> = match name {
        "low_entropy" => (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| Sampler::PointMass {
                        at: pt(
                            geo.random_range(-0.9 * half..0.9 * half),
                            geo.random_range(-0.9 * half..0.9 * half),
                        ),
                        jitter: 1e-4 * half,
                    })
                    .collect()
            })
            .collect(),
        "clustered" => {
            // disjoint rectangles on a grid, one per component
            let g = (m as f64).sqrt().ceil() as usize;
            let cell = 2.0 * half / g as f64;
            (0..m)
                .map(|a| {
                    let (r, c) = (a / g, a % g);
                    let x0 = -half + c as f64 * cell + 0.25 * cell;
                    let y0 = -half + r as f64 * cell + 0.25 * cell;
                    let rect = Sampler::UniformRect {
                        lo: pt(x0, y0),
                        hi: pt(x0 + 0.5 * cell, y0 + 0.5 * cell),
                    };
                    vec![rect; n]
                })
                .collect()
        }
        "adversarial_uniform" => {
            let full = Sampler::UniformRect { lo: pt(-half, -half), hi: pt(half, half) };
            vec![vec![full; n]; m]
        }
        other => return Err(MixtureError::UnknownPreset(other.to_string())),
    };
    MixtureModel::new(half, weights, lambda_min, comps, 0x5eed_0002)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn point_masses_without_jitter_repeat_exactly() {
        let s = Sampler::PointMass { at: pt(1.0, -2.0), jitter: 0.0 };
        let mx = MixtureModel::new(8.0, vec![1.0], 0.25, vec![vec![s; 4]], 3).unwrap();
        let mut rng = mx.stream();
        let a = mx.sample_instance(&mut rng);
        let b = mx.sample_instance(&mut rng);
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p == pt(1.0, -2.0)));
    }

    #[test]
    fn degenerate_weights_pick_the_first_component() {
        let near = Sampler::PointMass { at: pt(-3.0, 0.0), jitter: 0.0 };
        let far = Sampler::PointMass { at: pt(3.0, 0.0), jitter: 0.0 };
        // zero weight fails validation, so build the model literally
        let mx = MixtureModel {
            m: 2,
            n: 1,
            half: 8.0,
            weights: vec![1.0, 0.0],
            lambda_min: 0.0,
            comps: vec![vec![near], vec![far]],
            seed: 11,
        };
        let mut rng = mx.stream();
        for _ in 0..200 {
            let (a, inst) = mx.sample_instance_with(&mut rng);
            assert_eq!(a, 0);
            assert_eq!(inst[0], pt(-3.0, 0.0));
        }
    }

    #[test]
    fn component_frequencies_match_weights_within_3_sigma() {
        let s = Sampler::UniformRect { lo: pt(-1.0, -1.0), hi: pt(1.0, 1.0) };
        let weights = vec![0.5, 0.3, 0.2];
        let mx = MixtureModel::new(8.0, weights.clone(), 0.15, vec![vec![s; 2]; 3], 99).unwrap();
        let mut rng = mx.stream();
        let trials = 10_000usize;
        let mut hits = vec![0usize; 3];
        for _ in 0..trials {
            hits[mx.sample_component(&mut rng)] += 1;
        }
        for (a, &w) in weights.iter().enumerate() {
            let f = hits[a] as f64 / trials as f64;
            let sigma = (w * (1.0 - w) / trials as f64).sqrt();
            assert!(
                (f - w).abs() <= 3.0 * sigma,
                "component {a}: freq {f} vs weight {w}"
            );
        }
    }

    #[test]
    fn entropy_of_identical_outcomes_is_zero() {
        let e = empirical_entropy(&[7u32; 50]);
        assert_eq!(e.h, 0.0);
        assert_eq!(e.distinct, 1);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn balanced_coin_is_one_bit() {
        let outcomes: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
        let e = empirical_entropy(&outcomes);
        assert_eq!(e.h, 1.0);
        assert_eq!(e.distinct, 2);
    }

    #[test]
    fn uniform_outcomes_approach_log_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = 16u32;
        let outcomes: Vec<u32> = (0..20_000).map(|_| rng.random_range(0..k)).collect();
        let e = empirical_entropy(&outcomes);
        assert!((e.h - 4.0).abs() <= 3.0 * e.se + 0.01, "h = {} se = {}", e.h, e.se);
        assert!(e.h <= (e.distinct as f64).log2() + 1e-12);
    }

    #[test]
    fn presets_sample_inside_the_box_and_reject_unknown_names() {
        for name in ["low_entropy", "clustered", "adversarial_uniform"] {
            let mx = preset_mixtures(name, 24, 4).unwrap();
            mx.validate().unwrap();
            let mut rng = mx.stream();
            for _ in 0..100 {
                for p in mx.sample_instance(&mut rng) {
                    assert!(p.x.abs() <= mx.half && p.y.abs() <= mx.half, "{name}: {p:?}");
                }
            }
        }
        assert_eq!(
            preset_mixtures("bogus", 8, 2),
            Err(MixtureError::UnknownPreset("bogus".into()))
        );
    }

    #[test]
    fn clustered_preset_uses_disjoint_component_rectangles() {
        let mx = preset_mixtures("clustered", 6, 4).unwrap();
        let rects: Vec<(Point, Point)> = mx
            .comps
            .iter()
            .map(|c| match c[0] {
                Sampler::UniformRect { lo, hi } => (lo, hi),
                ref other => panic!("unexpected sampler {other:?}"),
            })
            .collect();
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                let (al, ah) = rects[i];
                let (bl, bh) = rects[j];
                let overlap_x = al.x < bh.x && bl.x < ah.x;
                let overlap_y = al.y < bh.y && bl.y < ah.y;
                assert!(!(overlap_x && overlap_y), "components {i} and {j} overlap");
            }
        }
    }

    #[test]
    fn clipped_gaussian_stays_inside_the_box() {
        let s = Sampler::GaussianClipped { mean: pt(7.0, 7.0), sd: 5.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5000 {
            let p = s.draw(8.0, &mut rng);
            assert!(p.x.abs() <= 8.0 && p.y.abs() <= 8.0);
        }
    }

    #[test]
    fn product_draws_pass_chi_square_and_dependence_fails_it() {
        // critical value of the chi-square distribution, df = 9, at 0.999
        let crit = 27.88;
        let s = Sampler::UniformRect { lo: pt(-4.0, -4.0), hi: pt(4.0, 4.0) };
        let mx = MixtureModel::new(8.0, vec![1.0], 0.25, vec![vec![s; 2]], 17).unwrap();
        let mut rng = mx.stream();
        let bins = 4usize;
        let bin_of = |x: f64| (((x + 4.0) / 8.0 * bins as f64) as usize).min(bins - 1);
        let mut indep = vec![vec![0u64; bins]; bins];
        let mut dep = vec![vec![0u64; bins]; bins];
        for _ in 0..4000 {
            let inst = mx.sample_instance(&mut rng);
            indep[bin_of(inst[0].x)][bin_of(inst[1].x)] += 1;
            dep[bin_of(inst[0].x)][bin_of(inst[0].x)] += 1;
        }
        let (stat, df) = chi_square(&indep);
        assert_eq!(df, 9);
        assert!(stat < crit, "independent coordinates flagged: {stat}");
        let (stat, _) = chi_square(&dep);
        assert!(stat > crit, "dependent coordinates passed: {stat}");
    }

    #[test]
    fn mixture_spec_round_trips_through_json() {
        let mx = preset_mixtures("clustered", 12, 3).unwrap();
        let json = serde_json::to_string(&mx).unwrap();
        let back: MixtureModel = serde_json::from_str(&json).unwrap();
        assert_eq!(mx, back);
    }

    #[test]
    fn validation_rejects_malformed_models() {
        let s = Sampler::UniformRect { lo: pt(-1.0, -1.0), hi: pt(1.0, 1.0) };
        let bad_sum = MixtureModel::new(8.0, vec![0.6, 0.6], 0.1, vec![vec![s.clone(); 4]; 2], 0);
        assert!(matches!(bad_sum, Err(MixtureError::BadWeightSum(_))));
        let below = MixtureModel::new(8.0, vec![0.99, 0.01], 0.1, vec![vec![s.clone(); 4]; 2], 0);
        assert!(matches!(below, Err(MixtureError::WeightBelowFloor { .. })));
        let floor = MixtureModel::new(8.0, vec![1.0], 0.01, vec![vec![s.clone(); 4]], 0);
        assert!(matches!(floor, Err(MixtureError::WeightFloorTooLow { .. })));
        let arity = MixtureModel {
            m: 1,
            n: 4,
            half: 8.0,
            weights: vec![1.0],
            lambda_min: 0.25,
            comps: vec![vec![s.clone(); 3]],
            seed: 0,
        };
        assert_eq!(
            arity.validate(),
            Err(MixtureError::WrongArity { comp: 0, got: 3, n: 4 })
        );
        let outside = Sampler::UniformRect { lo: pt(-9.0, 0.0), hi: pt(1.0, 1.0) };
        let escape = MixtureModel::new(8.0, vec![1.0], 0.25, vec![vec![outside; 4]], 0);
        assert!(matches!(escape, Err(MixtureError::BadSampler { .. })));
    }
}
