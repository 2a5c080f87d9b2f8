//! Procedural stand-in corpus. Positive sketches are small, sparse and dull;
//! negative ones are colorful and fill most of the page.

use super::{AgeBand, DatasetRecord, Demographics, EvalError, FeatsVector, Gender, Phq9Response};
use crate::sketch::{Sketch, Stroke, CANVAS_SIZE};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

const DULL: [[u8; 3]; 5] = [[0, 0, 0], [90, 90, 90], [120, 110, 100], [70, 60, 50], [140, 140, 150]];
const BRIGHT: [[u8; 3]; 9] = [
    [230, 30, 40],
    [40, 170, 60],
    [30, 90, 220],
    [250, 210, 30],
    [250, 140, 20],
    [150, 60, 200],
    [240, 120, 190],
    [80, 200, 230],
    [140, 80, 30],
];

const AGE_WEIGHTS: [u32; 4] = [123, 531, 32, 4];
const AGES: [AgeBand; 4] = [AgeBand::Under20, AgeBand::From20To40, AgeBand::From40To60, AgeBand::Over60];
const GENDER_WEIGHTS: [u32; 2] = [302, 388];

/// FEATS dimensions shifted down for the positive class: color prominence,
/// appropriate color, effort, space use, detail and environment.
const FEATS_SHIFTED: [usize; 5] = [0, 1, 2, 3, 9];
const FEATS_SHIFT: f64 = 0.35;
const FEATS_NEG_MEAN: f64 = 3.0;
const FEATS_SD: f64 = 1.0;

/// `n` records with `round(n * positive_fraction)` positives, shuffled.
pub fn synth_corpus(n: usize, positive_fraction: f64, seed: u64) -> Result<Vec<DatasetRecord>, EvalError> {
    if !(positive_fraction.is_finite() && (0.0..=1.0).contains(&positive_fraction)) {
        return Err(EvalError::InvalidFraction(positive_fraction));
    }
    if n < 10 {
        return Err(EvalError::InvalidCount(n));
    }
    let positives = (n as f64 * positive_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < positives)).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let id = format!("synth-{seed}-{i:04}");
            let strokes = if label == 1 {
                sparse_strokes(&mut rng)
            } else {
                full_strokes(&mut rng)
            };
            let sketch = Sketch::new(id.clone(), strokes)?;
            let phq9 = phq9_for(label, &mut rng);
            let feats = feats_for(label, &mut rng);
            let demographics = demographics(&mut rng);
            Ok(DatasetRecord::new(id, sketch, phq9, Some(feats), Some(demographics)))
        })
        .collect()
}

fn coord(v: f64) -> f64 {
    ((v.clamp(0.0, f64::from(CANVAS_SIZE))) * 10.0).round() / 10.0
}

struct Clock(u64);

impl Clock {
    fn stroke(&mut self, rng: &mut ChaCha8Rng, points: Vec<[f64; 2]>, color: [u8; 3], width: f64) -> Stroke {
        let start = self.0 + rng.random_range(100..800);
        let end = start + 150 + 40 * points.len() as u64 + rng.random_range(0..400);
        self.0 = end;
        Stroke {
            points,
            color,
            width,
            t_start: start,
            t_end: end,
        }
    }
}

fn sparse_strokes(rng: &mut ChaCha8Rng) -> Vec<Stroke> {
    let count = rng.random_range(1..=2);
    let colors: Vec<[u8; 3]> = DULL.choose_multiple(rng, count).copied().collect();
    let (cx, cy) = (rng.random_range(150.0..362.0), rng.random_range(150.0..362.0));
    let half: f64 = rng.random_range(40.0..90.0);
    let mut clock = Clock(0);
    (0..rng.random_range(3..=9))
        .map(|_| {
            let points = (0..rng.random_range(2..=5))
                .map(|_| {
                    [
                        coord(cx + rng.random_range(-half..half)),
                        coord(cy + rng.random_range(-half..half)),
                    ]
                })
                .collect();
            let color = *colors.choose(rng).unwrap();
            let width = rng.random_range(2.0..4.0f64).round();
            clock.stroke(rng, points, color, width)
        })
        .collect()
}

fn full_strokes(rng: &mut ChaCha8Rng) -> Vec<Stroke> {
    let count = rng.random_range(3..=7);
    let colors: Vec<[u8; 3]> = BRIGHT.choose_multiple(rng, count).copied().collect();
    let (cx, cy) = (256.0 + rng.random_range(-20.0..20.0), 256.0 + rng.random_range(-20.0..20.0));
    let half: f64 = rng.random_range(170.0..240.0);
    let (lo_x, lo_y) = (cx - half, cy - half);
    let mut clock = Clock(0);
    let mut strokes = Vec::new();
    for k in 0..rng.random_range(3..=5) {
        let (w, h): (f64, f64) = (rng.random_range(150.0..260.0), rng.random_range(100.0..200.0));
        let x0 = lo_x + rng.random_range(0.0..(2.0 * half - w).max(1.0f64));
        let y0 = lo_y + rng.random_range(0.0..(2.0 * half - h).max(1.0f64));
        let mut points = Vec::new();
        let mut y = y0;
        let mut left = true;
        while y <= y0 + h {
            let (a, b) = if left { (x0, x0 + w) } else { (x0 + w, x0) };
            points.push([coord(a), coord(y)]);
            points.push([coord(b), coord(y)]);
            left = !left;
            y += 10.0;
        }
        let width = rng.random_range(14.0..20.0f64).round();
        strokes.push(clock.stroke(rng, points, colors[k % colors.len()], width));
    }
    for _ in 0..rng.random_range(10..=25) {
        let points = (0..rng.random_range(2..=6))
            .map(|_| {
                [
                    coord(lo_x + rng.random_range(0.0..2.0 * half)),
                    coord(lo_y + rng.random_range(0.0..2.0 * half)),
                ]
            })
            .collect();
        let color = *colors.choose(rng).unwrap();
        let width = rng.random_range(6.0..10.0f64).round();
        strokes.push(clock.stroke(rng, points, color, width));
    }
    strokes
}

fn phq9_for(label: usize, rng: &mut ChaCha8Rng) -> Phq9Response {
    let mut items = [0u8; 9];
    if label == 1 {
        items.iter_mut().for_each(|v| *v = rng.random_range(1..=3));
        while items.iter().map(|&v| u32::from(v)).sum::<u32>() < 10 {
            let i = rng.random_range(0..9);
            items[i] = (items[i] + 1).min(3);
        }
    } else {
        items.iter_mut().for_each(|v| *v = *[0, 0, 0, 1, 1, 2].choose(rng).unwrap());
        while items.iter().map(|&v| u32::from(v)).sum::<u32>() >= 10 {
            let i = rng.random_range(0..9);
            items[i] = items[i].saturating_sub(1);
        }
    }
    Phq9Response::new(items).expect("items generated in range")
}

fn feats_for(label: usize, rng: &mut ChaCha8Rng) -> FeatsVector {
    let noise = Normal::new(0.0, FEATS_SD).expect("positive sd");
    let mut scores = [0.0; 14];
    for (d, s) in scores.iter_mut().enumerate() {
        let shift = if label == 1 && FEATS_SHIFTED.contains(&d) { FEATS_SHIFT } else { 0.0 };
        let v = FEATS_NEG_MEAN - shift + noise.sample(rng);
        *s = (v.clamp(0.0, 5.0) * 100.0).round() / 100.0;
    }
    FeatsVector::new(scores).expect("clamped to range")
}

fn demographics(rng: &mut ChaCha8Rng) -> Demographics {
    let age = WeightedIndex::new(AGE_WEIGHTS).expect("nonzero weights");
    let gender = WeightedIndex::new(GENDER_WEIGHTS).expect("nonzero weights");
    Demographics {
        age_band: AGES[age.sample(rng)],
        gender: [Gender::Male, Gender::Female][gender.sample(rng)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::write_corpus;
    use crate::sketch::rasterize;

    #[test]
    fn corpus_shape_positive_count() {
        let recs = synth_corpus(690, 117.0 / 690.0, 7).unwrap();
        assert_eq!(recs.len(), 690);
        assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 117);
        let recs = synth_corpus(690, 0.1696, 7).unwrap();
        assert_eq!(recs.iter().filter(|r| r.label == 1).count(), 117);
        assert!(recs.iter().all(|r| r.label == r.phq9.label()));
    }

    #[test]
    fn invalid_arguments() {
        assert!(matches!(synth_corpus(100, 1.5, 1), Err(EvalError::InvalidFraction(_))));
        assert!(matches!(synth_corpus(100, f64::NAN, 1), Err(EvalError::InvalidFraction(_))));
        assert!(matches!(synth_corpus(9, 0.5, 1), Err(EvalError::InvalidCount(9))));
    }

    #[test]
    fn byte_identical_for_seed() {
        let bytes = |seed| {
            let mut buf = Vec::new();
            write_corpus(&synth_corpus(40, 0.3, seed).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(5), bytes(5));
        assert_ne!(bytes(5), bytes(6));
    }

    #[test]
    fn ink_coverage_separates_classes() {
        let recs = synth_corpus(120, 0.5, 11).unwrap();
        let mut sums = [0.0; 2];
        let mut counts = [0usize; 2];
        for r in &recs {
            sums[r.label] += rasterize(&r.sketch, 96, 96).unwrap().ink_coverage();
            counts[r.label] += 1;
        }
        let (neg, pos) = (sums[0] / counts[0] as f64, sums[1] / counts[1] as f64);
        assert!(neg - pos >= 0.2, "neg {neg} pos {pos}");
    }

    #[test]
    fn colors_and_strokes_differ_by_class() {
        for r in synth_corpus(60, 0.5, 2).unwrap() {
            if r.label == 1 {
                assert!(r.sketch.distinct_colors() <= 2 && r.sketch.stroke_count() <= 9);
            } else {
                assert!(r.sketch.distinct_colors() >= 3 && r.sketch.stroke_count() >= 13);
            }
        }
    }

    #[test]
    fn demographics_follow_cohort_proportions() {
        let recs = synth_corpus(2000, 0.2, 3).unwrap();
        let male = recs
            .iter()
            .filter(|r| r.demographics.unwrap().gender == Gender::Male)
            .count() as f64
            / 2000.0;
        assert!((male - 302.0 / 690.0).abs() < 0.05, "{male}");
        let young = recs
            .iter()
            .filter(|r| r.demographics.unwrap().age_band == AgeBand::From20To40)
            .count() as f64
            / 2000.0;
        assert!((young - 531.0 / 690.0).abs() < 0.05, "{young}");
    }
}
