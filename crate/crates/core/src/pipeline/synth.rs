//! Synthetic stand-in for recorded sensor sessions: a slowly drifting
//! ambient plane, sensor noise, and one warm Gaussian blob per person.
//! People wander smoothly; the count changes in runs of frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::train::network::{FRAME_PIXELS, FRAME_SIDE, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub sessions: u32,
    pub per_session: usize,
    pub seed: u64,
    /// Half-width of the ambient range around 20 C.
    pub ambient_spread: f32,
    /// Largest ambient slope across the frame (Celsius per pixel).
    pub gradient: f32,
    /// Standard deviation of the per-pixel sensor noise (Celsius).
    pub noise: f32,
    /// Blob peak above ambient (Celsius), drawn per person.
    pub amplitude: (f32, f32),
    /// Blob radius (standard deviation in pixels), drawn per person.
    pub radius: (f32, f32),
    /// Run length of a constant people count, in frames.
    pub run_length: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sessions: 5,
            per_session: 400,
            seed: 0,
            ambient_spread: 1.0,
            gradient: 0.15,
            noise: 0.25,
            amplitude: (3.0, 4.5),
            radius: (0.7, 0.9),
            run_length: (20, 80),
        }
    }
}

struct Person {
    x: f32,
    y: f32,
    vx: f32,
    vy: f32,
    amp: f32,
    radius: f32,
}

impl Person {
    fn spawn(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let (lo, hi) = (MARGIN, (FRAME_SIDE - 1) as f32 - MARGIN);
        Self {
            x: rng.gen_range(lo..hi),
            y: rng.gen_range(lo..hi),
            vx: rng.gen_range(-0.3..0.3),
            vy: rng.gen_range(-0.3..0.3),
            amp: rng.gen_range(cfg.amplitude.0..cfg.amplitude.1),
            radius: rng.gen_range(cfg.radius.0..cfg.radius.1),
        }
    }

    fn distance(&self, o: &Person) -> f32 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        let (lo, hi) = (MARGIN, (FRAME_SIDE - 1) as f32 - MARGIN);
        self.vx = (self.vx + rng.gen_range(-0.08..0.08)).clamp(-0.4, 0.4);
        self.vy = (self.vy + rng.gen_range(-0.08..0.08)).clamp(-0.4, 0.4);
        self.x += self.vx;
        self.y += self.vy;
        if !(lo..=hi).contains(&self.x) {
            self.vx = -self.vx;
            self.x = self.x.clamp(lo, hi);
        }
        if !(lo..=hi).contains(&self.y) {
            self.vy = -self.vy;
            self.y = self.y.clamp(lo, hi);
        }
    }
}

/// People closer than this (pixels) are pushed apart.
const MIN_SEPARATION: f32 = 3.0;
/// Blob centres stay this far inside the frame.
const MARGIN: f32 = 0.5;

fn separate(people: &mut [Person]) {
    let (lo, hi) = (MARGIN, (FRAME_SIDE - 1) as f32 - MARGIN);
    for i in 0..people.len() {
        for j in i + 1..people.len() {
            let d = people[i].distance(&people[j]);
            if d >= MIN_SEPARATION {
                continue;
            }
            let (dx, dy) = if d > 1e-3 {
                ((people[j].x - people[i].x) / d, (people[j].y - people[i].y) / d)
            } else {
                (1.0, 0.0)
            };
            let push = (MIN_SEPARATION - d) / 2.0;
            people[i].x = (people[i].x - dx * push).clamp(lo, hi);
            people[i].y = (people[i].y - dy * push).clamp(lo, hi);
            people[j].x = (people[j].x + dx * push).clamp(lo, hi);
            people[j].y = (people[j].y + dy * push).clamp(lo, hi);
            people[i].vx = -people[i].vx;
            people[i].vy = -people[i].vy;
        }
    }
}

/// Generates `cfg.sessions` sessions of `cfg.per_session` frames each,
/// numbered from 1. The same config always yields the same dataset.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    if cfg.per_session == 0 || cfg.sessions == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs at least one session and one frame".into()));
    }
    if cfg.run_length.0 == 0 || cfg.run_length.0 > cfg.run_length.1 {
        return Err(Error::InvalidArgument("run length range must be non-empty and start at 1 or more".into()));
    }
    let noise = Normal::new(0.0f32, cfg.noise).map_err(|e| Error::InvalidArgument(format!("noise: {e}")))?;
    let mut samples = Vec::with_capacity(cfg.sessions as usize * cfg.per_session);
    for session in 1..=cfg.sessions {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(session as u64));
        // ambient level and slope wander slowly inside their ranges
        let mut drift = [0f32; 3].map(|_| rng.gen_range(-1.0f32..=1.0));
        let mut people: Vec<Person> = Vec::new();
        // run labels come from shuffled bags of all classes, so every
        // session stays roughly balanced and consecutive runs differ
        let mut bag: Vec<usize> = Vec::new();
        let mut label = usize::MAX;
        let mut left = 0usize;
        for frame in 0..cfg.per_session {
            if left == 0 {
                if bag.is_empty() {
                    bag = (0..NUM_CLASSES).collect();
                    bag.shuffle(&mut rng);
                    if bag.last() == Some(&label) {
                        bag.swap(0, NUM_CLASSES - 1);
                    }
                }
                label = bag.pop().expect("refilled");
                left = rng.gen_range(cfg.run_length.0..=cfg.run_length.1);
            }
            left -= 1;
            people.truncate(label);
            while people.len() < label {
                let mut p = Person::spawn(&mut rng, cfg);
                for _ in 0..32 {
                    if people.iter().all(|q| p.distance(q) >= MIN_SEPARATION) {
                        break;
                    }
                    p = Person::spawn(&mut rng, cfg);
                }
                people.push(p);
            }
            for d in drift.iter_mut() {
                *d = (*d + rng.gen_range(-0.05f32..0.05)).clamp(-1.0, 1.0);
            }
            let ambient = 20.0 + drift[0] * cfg.ambient_spread;
            let gradient = (drift[1] * cfg.gradient, drift[2] * cfg.gradient);
            let mut pixels = [0f32; FRAME_PIXELS];
            for (i, v) in pixels.iter_mut().enumerate() {
                let (py, px) = ((i / FRAME_SIDE) as f32, (i % FRAME_SIDE) as f32);
                let mut t = ambient + gradient.0 * (px - 3.5) + gradient.1 * (py - 3.5) + noise.sample(&mut rng);
                for p in &people {
                    let d2 = (px - p.x).powi(2) + (py - p.y).powi(2);
                    t += p.amp * (-d2 / (2.0 * p.radius * p.radius)).exp();
                }
                *v = t;
            }
            samples.push(Sample {
                session,
                frame: frame as u64,
                label,
                pixels,
            });
            for p in people.iter_mut() {
                p.step(&mut rng);
            }
            for _ in 0..3 {
                separate(&mut people);
            }
        }
    }
    Dataset::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sessions_are_balanced_and_runs_change_count() {
        let data = synth_generate(&SynthConfig { sessions: 3, ..Default::default() }).unwrap();
        for s in data.sessions() {
            let labels = data.select(&[s]).labels();
            let mut counts = [0usize; NUM_CLASSES];
            labels.iter().for_each(|&l| counts[l] += 1);
            assert!(counts.iter().all(|&c| c * 8 >= labels.len()), "session {s}: {counts:?}");
            let changes = labels.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(changes >= labels.len() / 80 - 1, "session {s}: {changes} changes");
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig { sessions: 2, per_session: 30, ..Default::default() };
        assert_eq!(synth_generate(&cfg).unwrap(), synth_generate(&cfg).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_generate(&cfg).unwrap(), synth_generate(&other).unwrap());
    }

    #[test]
    fn empty_frames_carry_only_noise() {
        let cfg = SynthConfig { sessions: 1, per_session: 400, ..Default::default() };
        let d = synth_generate(&cfg).unwrap();
        let mut vars = Vec::new();
        for s in d.samples.iter().filter(|s| s.label == 0) {
            // remove the ambient plane by differencing horizontal neighbours
            let (mut sum, mut acc, mut n) = (0.0f32, 0.0f32, 0);
            for y in 0..FRAME_SIDE {
                for x in 1..FRAME_SIDE {
                    let d = s.pixels[y * FRAME_SIDE + x] - s.pixels[y * FRAME_SIDE + x - 1];
                    sum += d;
                    acc += d * d;
                    n += 1;
                }
            }
            let m = sum / n as f32;
            vars.push((acc / n as f32 - m * m) / 2.0);
        }
        assert!(!vars.is_empty());
        let mean = vars.iter().sum::<f32>() / vars.len() as f32;
        let expect = cfg.noise * cfg.noise;
        assert!((mean - expect).abs() < 0.25 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn labels_cover_all_classes_and_frames_increase() {
        let d = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(d.len(), 2000);
        for c in 0..NUM_CLASSES {
            assert!(d.samples.iter().any(|s| s.label == c));
        }
    }
}
