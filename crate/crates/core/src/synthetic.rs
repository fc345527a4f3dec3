//! Synthetic labeled trajectories from a per-class random-walk kinematic model.
//!
//! Each trajectory alternates driving segments (a target speed drawn from the
//! class range, approached with accelerations bounded by the class range, and
//! a constant turn rate) with occasional stops. Positions are integrated on the
//! sphere; recorded fixes carry uniform-in-disk positional noise and bounded
//! timestamp jitter.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geodesy::{destination, GeoPoint, EARTH_RADIUS_M};
use crate::seed::sub_rng;
use crate::trajectory::{RawSample, RoadUserClass, Trajectory, TrajectoryCollection};

const SEGMENT_S: (f64, f64) = (5.0, 30.0);
const STOP_S: (f64, f64) = (5.0, 20.0);
const BASE_EPOCH_MS: i64 = 1_700_000_000_000;

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Dataset(format!(
                "profile {name} range [{}, {}] is empty or non-finite",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Kinematic parameters of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    /// Target cruising speeds, m/s.
    pub speed: Range,
    /// `min` is the strongest deceleration (<= 0), `max` the strongest
    /// acceleration (>= 0), m/s².
    pub acceleration: Range,
    /// Signed heading change rate while moving, rad/s.
    pub turn_rate: Range,
    /// Probability per step of starting a stop.
    pub stop_probability: f64,
    /// Radius of the uniform positional noise disk, meters.
    pub position_noise_m: f64,
    /// Maximum absolute timestamp jitter, ms.
    pub timestamp_jitter_ms: i64,
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<()> {
        self.speed.check("speed")?;
        self.acceleration.check("acceleration")?;
        self.turn_rate.check("turn rate")?;
        if self.speed.min < 0.0 {
            return Err(Error::Dataset(format!(
                "profile speed range [{}, {}] must be non-negative",
                self.speed.min, self.speed.max
            )));
        }
        if self.acceleration.min > 0.0 || self.acceleration.max < 0.0 {
            return Err(Error::Dataset("profile acceleration range must contain 0".into()));
        }
        if !(0.0..=1.0).contains(&self.stop_probability) {
            return Err(Error::Dataset("stop probability must lie in [0, 1]".into()));
        }
        if !(self.position_noise_m >= 0.0) || self.timestamp_jitter_ms < 0 {
            return Err(Error::Dataset("noise magnitudes must be non-negative".into()));
        }
        Ok(())
    }

    /// Noise-free straight motion at a constant speed.
    pub fn constant(speed_mps: f64) -> Self {
        Self {
            speed: Range::new(speed_mps, speed_mps),
            acceleration: Range::new(0.0, 0.0),
            turn_rate: Range::new(0.0, 0.0),
            stop_probability: 0.0,
            position_noise_m: 0.0,
            timestamp_jitter_ms: 0,
        }
    }

    /// Upper bound on the excess of any derived velocity over `speed.max`
    /// caused by noise and jitter at the given sampling interval.
    pub fn velocity_noise_bound(&self, sample_interval_s: f64) -> f64 {
        let jitter_s = self.timestamp_jitter_ms as f64 / 1000.0;
        let min_dt = sample_interval_s - 2.0 * jitter_s;
        (2.0 * self.position_noise_m + self.speed.max * 2.0 * jitter_s) / min_dt
    }
}

/// Default fixture profiles, one per class in enumeration order. The two
/// motorized classes share a speed range and differ in acceleration and
/// turning behaviour.
pub fn default_profiles() -> [SyntheticProfile; 4] {
    let base = |speed, accel, turn, stop| SyntheticProfile {
        speed,
        acceleration: accel,
        turn_rate: turn,
        stop_probability: stop,
        position_noise_m: 0.3,
        timestamp_jitter_ms: 10,
    };
    [
        base(Range::new(0.5, 2.0), Range::new(-0.8, 0.8), Range::new(-0.35, 0.35), 0.01),
        base(Range::new(2.5, 8.0), Range::new(-1.5, 1.2), Range::new(-0.2, 0.2), 0.005),
        base(Range::new(5.0, 35.0), Range::new(-4.0, 4.0), Range::new(-0.15, 0.15), 0.003),
        base(Range::new(5.0, 35.0), Range::new(-3.0, 2.5), Range::new(-0.06, 0.06), 0.003),
    ]
}

/// Parameters of a synthetic collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub profiles: [SyntheticProfile; 4],
    pub count_per_class: usize,
    pub duration_s: f64,
    pub sample_interval_s: f64,
    pub seed: u64,
}

pub fn generate_synthetic_collection(config: &SyntheticConfig) -> Result<TrajectoryCollection> {
    for p in &config.profiles {
        p.validate()?;
        if 2.0 * p.timestamp_jitter_ms as f64 >= config.sample_interval_s * 1000.0 {
            return Err(Error::Dataset(
                "timestamp jitter must be below half the sampling interval".into(),
            ));
        }
    }
    if config.count_per_class == 0 {
        return Err(Error::Dataset("count per class must be at least 1".into()));
    }
    if !(config.sample_interval_s > 0.0) {
        return Err(Error::Dataset("sample interval must be positive".into()));
    }
    let n_samples = (config.duration_s / config.sample_interval_s).floor() as usize + 1;
    if !config.duration_s.is_finite() || n_samples < 3 {
        return Err(Error::Dataset(format!(
            "duration {} s at interval {} s yields fewer than 3 samples",
            config.duration_s, config.sample_interval_s
        )));
    }

    let jobs: Vec<(RoadUserClass, usize)> = RoadUserClass::ALL
        .iter()
        .flat_map(|c| (0..config.count_per_class).map(move |k| (*c, k)))
        .collect();
    let trajectories = jobs
        .par_iter()
        .enumerate()
        .map(|(index, &(class, k))| {
            let id = format!("{}_{k:04}", class.name());
            let mut rng = sub_rng(config.seed, index as u64);
            simulate(
                &id,
                class,
                &config.profiles[class.index()],
                n_samples,
                config.sample_interval_s,
                index as i64,
                &mut rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryCollection::new(
        trajectories,
        format!(
            "synthetic: seed {}, {} per class, {} s at {} s",
            config.seed, config.count_per_class, config.duration_s, config.sample_interval_s
        ),
    )
}

fn simulate<R: Rng>(
    id: &str,
    class: RoadUserClass,
    profile: &SyntheticProfile,
    n_samples: usize,
    interval_s: f64,
    index: i64,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut position = GeoPoint {
        lat: rng.gen_range(49.0..50.0),
        lon: rng.gen_range(10.5..11.5),
    };
    let mut heading = rng.gen_range(-PI..PI);
    let mut speed = profile.speed.sample(rng);
    let mut target = speed;
    let mut accel_limit = profile.acceleration.max;
    let mut decel_limit = -profile.acceleration.min;
    let mut turn = 0.0;
    let mut segment_left = 0.0;
    let start_ms = BASE_EPOCH_MS + index * 86_400_000;

    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        let nominal_ms = start_ms + (k as f64 * interval_s * 1000.0).round() as i64;
        let jitter = if profile.timestamp_jitter_ms > 0 {
            rng.gen_range(-profile.timestamp_jitter_ms..=profile.timestamp_jitter_ms)
        } else {
            0
        };
        let fix = perturb(position, profile.position_noise_m, rng);
        samples.push(RawSample::new(nominal_ms + jitter, fix.lat, fix.lon, profile.position_noise_m)?);

        if segment_left <= 0.0 {
            if profile.stop_probability > 0.0 && rng.gen_bool(profile.stop_probability) {
                target = 0.0;
                segment_left = Range::new(STOP_S.0, STOP_S.1).sample(rng);
            } else {
                target = profile.speed.sample(rng);
                segment_left = Range::new(SEGMENT_S.0, SEGMENT_S.1).sample(rng);
            }
            accel_limit = profile.acceleration.max * Range::new(0.5, 1.0).sample(rng);
            decel_limit = -profile.acceleration.min * Range::new(0.5, 1.0).sample(rng);
            turn = profile.turn_rate.sample(rng);
        } else if profile.stop_probability > 0.0 && target > 0.0 && rng.gen_bool(profile.stop_probability) {
            target = 0.0;
            segment_left = Range::new(STOP_S.0, STOP_S.1).sample(rng);
        }

        let dv = (target - speed).clamp(-decel_limit * interval_s, accel_limit * interval_s);
        let next_speed = (speed + dv).max(0.0);
        let distance = 0.5 * (speed + next_speed) * interval_s;
        if distance > 0.0 {
            heading = wrap(heading + turn * interval_s);
            position = destination(position, heading, distance);
        }
        speed = next_speed;
        segment_left -= interval_s;
    }
    Trajectory::new(id, class, samples)
}

fn wrap(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Offsets `p` by a point drawn uniformly from a disk of `radius_m` meters.
fn perturb<R: Rng>(p: GeoPoint, radius_m: f64, rng: &mut R) -> GeoPoint {
    if radius_m == 0.0 {
        return p;
    }
    let r = radius_m * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..2.0 * PI);
    let north = r * theta.cos();
    let east = r * theta.sin();
    GeoPoint {
        lat: (p.lat + (north / EARTH_RADIUS_M).to_degrees()).clamp(-90.0, 90.0),
        lon: p.lon + (east / (EARTH_RADIUS_M * p.lat.to_radians().cos())).to_degrees(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::compute_features;

    fn config(profiles: [SyntheticProfile; 4], count: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            profiles,
            count_per_class: count,
            duration_s: 120.0,
            sample_interval_s: 1.0,
            seed,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic_collection(&config(default_profiles(), 3, 9)).unwrap();
        let b = generate_synthetic_collection(&config(default_profiles(), 3, 9)).unwrap();
        assert_eq!(a, b);
        let csv_a: Vec<String> = a.trajectories().iter().map(|t| t.to_csv()).collect();
        let csv_b: Vec<String> = b.trajectories().iter().map(|t| t.to_csv()).collect();
        assert_eq!(csv_a, csv_b);
        let c = generate_synthetic_collection(&config(default_profiles(), 3, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_and_lengths() {
        let c = generate_synthetic_collection(&config(default_profiles(), 2, 1)).unwrap();
        assert_eq!(c.len(), 8);
        for (i, t) in c.trajectories().iter().enumerate() {
            assert_eq!(t.label(), RoadUserClass::ALL[i / 2]);
            assert_eq!(t.len(), 121);
        }
    }

    #[test]
    fn pedestrian_velocity_bound() {
        let profiles = default_profiles();
        let ped = &profiles[0];
        let bound = ped.speed.max + 3.0 * ped.velocity_noise_bound(1.0);
        let c = generate_synthetic_collection(&config(profiles.clone(), 20, 4)).unwrap();
        for t in c.trajectories().iter().filter(|t| t.label() == RoadUserClass::Pedestrian) {
            let f = compute_features(t).unwrap();
            for s in &f.steps {
                assert!(s.velocity <= bound, "{} > {bound}", s.velocity);
            }
        }
    }

    #[test]
    fn straight_constant_motion_has_no_dynamics() {
        let p = SyntheticProfile::constant(10.0);
        let c = generate_synthetic_collection(&config([p.clone(), p.clone(), p.clone(), p], 1, 2)).unwrap();
        for t in c.trajectories() {
            let f = compute_features(t).unwrap();
            for s in &f.steps[2..] {
                assert!(s.accel_pos < 1e-6 && s.accel_neg < 1e-6, "{s:?}");
                assert!(s.bearing_rate < 1e-6, "{s:?}");
            }
        }
    }

    #[test]
    fn mean_speed_ordering() {
        let c = generate_synthetic_collection(&SyntheticConfig {
            duration_s: 60.0,
            ..config(default_profiles(), 100, 12)
        })
        .unwrap();
        let mut sum = [0.0; 4];
        let mut n = [0usize; 4];
        for t in c.trajectories() {
            let f = compute_features(t).unwrap();
            sum[t.label().index()] += f.steps.iter().map(|s| s.velocity).sum::<f64>();
            n[t.label().index()] += f.len();
        }
        let mean: Vec<f64> = (0..4).map(|i| sum[i] / n[i] as f64).collect();
        assert!(mean[0] < mean[1] && mean[1] < mean[2] && mean[1] < mean[3], "{mean:?}");
        assert!((mean[2] - mean[3]).abs() / mean[3] < 0.2, "{mean:?}");
    }

    #[test]
    fn infeasible_profiles_rejected() {
        let mut p = default_profiles();
        p[1].speed = Range::new(-3.0, -1.0);
        assert!(generate_synthetic_collection(&config(p, 1, 0)).is_err());
        let mut p = default_profiles();
        p[0].position_noise_m = -1.0;
        assert!(generate_synthetic_collection(&config(p, 1, 0)).is_err());
        let short = SyntheticConfig {
            duration_s: 1.0,
            ..config(default_profiles(), 1, 0)
        };
        assert!(generate_synthetic_collection(&short).is_err());
        assert!(generate_synthetic_collection(&config(default_profiles(), 0, 0)).is_err());
    }
}
