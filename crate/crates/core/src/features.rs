//! Per-timestep kinematic features and z-score standardization.
//!
//! Each fix `t` of a trajectory yields `[dt, velocity, accel_pos, accel_neg,
//! bearing_rate]`:
//!
//! * `dt_t = (ts_t - ts_{t-1}) / 1000`, with `dt_1 = 0`
//! * `v_t = s_t / dt_t` where `s_t` is the haversine distance
//! * `a+_t = max(dv, 0)`, `a-_t = -min(dv, 0)` with `dv = (v_t - v_{t-1}) / avg_dt`
//! * `w_t = (pi - ||b_t - b_{t-1}| - pi|) / avg_dt`, `b_t` the initial bearing
//!
//! where `avg_dt = (dt_t + dt_{t-1}) / 2`. Velocity and bearing are not
//! computable for a step whose time difference is zero or whose fix repeats
//! the previous coordinates; such steps take the last computable value. The
//! first step (and any leading non-computable steps) take the first
//! computable value. Accelerations and bearing rate are zero for the first two
//! steps and for any step with `avg_dt = 0`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geodesy::{haversine_distance, initial_bearing};
use crate::trajectory::{Labeled, RoadUserClass, Trajectory};

pub const FEATURE_COUNT: usize = 5;
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["dt", "velocity", "accel_pos", "accel_neg", "bearing_rate"];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Seconds since the previous fix.
    pub dt: f64,
    /// m/s
    pub velocity: f64,
    /// m/s²
    pub accel_pos: f64,
    /// m/s²
    pub accel_neg: f64,
    /// rad/s
    pub bearing_rate: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [self.dt, self.velocity, self.accel_pos, self.accel_neg, self.bearing_rate]
    }

    pub fn from_array(v: [f64; FEATURE_COUNT]) -> Self {
        Self {
            dt: v[0],
            velocity: v[1],
            accel_pos: v[2],
            accel_neg: v[3],
            bearing_rate: v[4],
        }
    }
}

/// A labeled sequence of feature vectors, one per fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    pub id: String,
    pub label: RoadUserClass,
    pub steps: Vec<FeatureVector>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Writes the audit CSV (`dt,velocity,accel_pos,accel_neg,bearing_rate`).
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(FEATURE_NAMES)?;
        for step in &self.steps {
            w.write_record(step.to_array().iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("feature dump", e))
    }
}

impl Labeled for FeatureSequence {
    fn label(&self) -> RoadUserClass {
        self.label
    }
}

/// Computes the feature sequence of a trajectory with at least two fixes.
pub fn compute_features(traj: &Trajectory) -> Result<FeatureSequence> {
    let samples = traj.samples();
    let n = samples.len();
    if n < 2 {
        return Err(Error::Features(format!(
            "trajectory {:?} has {n} sample(s); at least 2 are required",
            traj.id()
        )));
    }

    let mut dt = vec![0.0; n];
    for t in 1..n {
        dt[t] = (samples[t].timestamp_ms - samples[t - 1].timestamp_ms) as f64 / 1000.0;
    }

    // Raw velocity and bearing where computable.
    let raw: Vec<Option<(f64, f64)>> = (0..n)
        .map(|t| {
            if t == 0 || dt[t] <= 0.0 || samples[t].point == samples[t - 1].point {
                return None;
            }
            let (a, b) = (samples[t - 1].point, samples[t].point);
            Some((haversine_distance(a, b) / dt[t], initial_bearing(a, b)))
        })
        .collect();

    let (velocity, bearing) = match raw.iter().flatten().next() {
        Some(&first) => {
            let mut last = first;
            let mut v = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for r in &raw {
                if let Some(value) = r {
                    last = *value;
                }
                v.push(last.0);
                b.push(last.1);
            }
            (v, b)
        }
        // every fix repeats the first position, but time passes: stationary
        None if dt.iter().any(|&d| d > 0.0) => (vec![0.0; n], vec![0.0; n]),
        None => {
            return Err(Error::Features(format!(
                "trajectory {:?}: no computable velocity (all time differences are zero)",
                traj.id()
            )))
        }
    };

    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let mut fv = FeatureVector {
            dt: dt[t],
            velocity: velocity[t],
            ..FeatureVector::default()
        };
        if t >= 2 {
            let avg_dt = (dt[t] + dt[t - 1]) / 2.0;
            if avg_dt > 0.0 {
                let dv = (velocity[t] - velocity[t - 1]) / avg_dt;
                if dv > 0.0 {
                    fv.accel_pos = dv;
                } else if dv < 0.0 {
                    fv.accel_neg = -dv;
                }
                let turn = PI - ((bearing[t] - bearing[t - 1]).abs() - PI).abs();
                fv.bearing_rate = turn.max(0.0) / avg_dt;
            }
        }
        steps.push(fv);
    }

    Ok(FeatureSequence {
        id: traj.id().to_string(),
        label: traj.label(),
        steps,
    })
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; FEATURE_COUNT],
    pub std: [f64; FEATURE_COUNT],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; FEATURE_COUNT],
            std: [1.0; FEATURE_COUNT],
        }
    }

    /// Rebuilds a standardizer from stored statistics, checking `std > 0`.
    pub fn from_stats(mean: [f64; FEATURE_COUNT], std: [f64; FEATURE_COUNT]) -> Result<Self> {
        for (i, s) in std.iter().enumerate() {
            if !(*s > 0.0) || !s.is_finite() || !mean[i].is_finite() {
                return Err(Error::Features(format!(
                    "invalid statistics for feature {}: mean {}, std {s}",
                    FEATURE_NAMES[i], mean[i]
                )));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply_vector(&self, v: &FeatureVector) -> FeatureVector {
        let raw = v.to_array();
        FeatureVector::from_array(std::array::from_fn(|i| (raw[i] - self.mean[i]) / self.std[i]))
    }
}

/// Fits a standardizer over all timesteps of `train`, pooled.
pub fn fit_standardizer(train: &[FeatureSequence]) -> Result<Standardizer> {
    if train.is_empty() {
        return Err(Error::Features("cannot fit a standardizer on zero sequences".into()));
    }
    // Welford's running update, one accumulator per feature.
    let mut count = 0usize;
    let mut mean = [0.0; FEATURE_COUNT];
    let mut m2 = [0.0; FEATURE_COUNT];
    for step in train.iter().flat_map(|s| s.steps.iter()) {
        count += 1;
        for (i, x) in step.to_array().into_iter().enumerate() {
            let delta = x - mean[i];
            mean[i] += delta / count as f64;
            m2[i] += delta * (x - mean[i]);
        }
    }
    if count < 2 {
        return Err(Error::Features(format!(
            "standardizer needs at least 2 pooled timesteps, got {count}"
        )));
    }
    let std = m2.map(|m| (m / count as f64).sqrt());
    for (i, s) in std.iter().enumerate() {
        if !(*s > 0.0) {
            return Err(Error::Features(format!(
                "feature {} has zero standard deviation across the training corpus",
                FEATURE_NAMES[i]
            )));
        }
    }
    Ok(Standardizer { mean, std })
}

pub fn apply_standardizer(s: &Standardizer, seq: &FeatureSequence) -> FeatureSequence {
    FeatureSequence {
        id: seq.id.clone(),
        label: seq.label,
        steps: seq.steps.iter().map(|v| s.apply_vector(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::EARTH_RADIUS_M;
    use crate::trajectory::RawSample;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn traj(rows: &[(i64, f64, f64)]) -> Trajectory {
        let samples = rows
            .iter()
            .map(|&(ts, lat, lon)| RawSample::new(ts, lat, lon, 1.0).unwrap())
            .collect();
        Trajectory::new("t", RoadUserClass::Cyclist, samples).unwrap()
    }

    /// Equatorial arc length for `deg` degrees of longitude.
    fn equator_arc(deg: f64) -> f64 {
        EARTH_RADIUS_M * deg * PI / 180.0
    }

    #[test]
    fn equatorial_example() {
        let f = compute_features(&traj(&[(0, 0.0, 0.0), (1000, 0.0, 0.0001), (2000, 0.0, 0.0003)])).unwrap();
        let dt: Vec<f64> = f.steps.iter().map(|s| s.dt).collect();
        assert_eq!(dt, vec![0.0, 1.0, 1.0]);
        let v1 = equator_arc(0.0001);
        let v2 = equator_arc(0.0002);
        assert!((v1 - 11.119).abs() < 1e-3 && (v2 - 22.239).abs() < 1e-3);
        let expected_v = [v1, v1, v2];
        for (s, v) in f.steps.iter().zip(expected_v) {
            assert!((s.velocity - v).abs() < 1e-6, "{} vs {v}", s.velocity);
        }
        let expected_ap = [0.0, 0.0, v2 - v1];
        for (s, a) in f.steps.iter().zip(expected_ap) {
            assert!((s.accel_pos - a).abs() < 1e-6);
            assert_eq!(s.accel_neg, 0.0);
            assert!(s.bearing_rate.abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_duplicate_forward_fills() {
        let f = compute_features(&traj(&[
            (0, 10.0, 10.0),
            (1000, 10.0, 10.0001),
            (2000, 10.0, 10.0001),
            (3000, 10.0, 10.0002),
        ]))
        .unwrap();
        assert_eq!(f.steps[2].velocity, f.steps[1].velocity);
        assert_eq!(f.steps[2].accel_pos, 0.0);
        assert_eq!(f.steps[2].accel_neg, 0.0);
        assert_eq!(f.steps[2].bearing_rate, 0.0);
    }

    #[test]
    fn zero_dt_forward_fills_and_zeroes_dependents() {
        let f = compute_features(&traj(&[
            (0, 10.0, 10.0),
            (1000, 10.0, 10.0001),
            (2000, 10.0, 10.0003),
            (2000, 10.0, 10.0004),
            (3000, 10.0, 10.0005),
        ]))
        .unwrap();
        assert_eq!(f.steps[3].dt, 0.0);
        assert_eq!(f.steps[3].velocity, f.steps[2].velocity);
        // avg_dt at step 4 is 0.5: velocity change against the filled value
        assert!(f.steps[4].accel_neg > 0.0);
    }

    #[test]
    fn zero_average_dt_gives_zero_dependents() {
        let f = compute_features(&traj(&[
            (0, 10.0, 10.0),
            (0, 10.0, 10.0001),
            (0, 10.0, 10.0002),
            (1000, 10.0, 10.0005),
        ]))
        .unwrap();
        assert_eq!(f.steps[2].accel_pos, 0.0);
        assert_eq!(f.steps[2].accel_neg, 0.0);
        assert_eq!(f.steps[2].bearing_rate, 0.0);
        // backward fill from the first computable value
        assert_eq!(f.steps[0].velocity, f.steps[3].velocity);
    }

    #[test]
    fn constant_straight_run_has_no_dynamics() {
        let rows: Vec<(i64, f64, f64)> = (0..20).map(|i| (i * 1000, 0.0, i as f64 * 1e-4)).collect();
        let f = compute_features(&traj(&rows)).unwrap();
        for s in &f.steps[2..] {
            assert!(s.accel_pos < 1e-6 && s.accel_neg < 1e-6 && s.bearing_rate < 1e-9);
        }
    }

    #[test]
    fn heading_reversal_rate() {
        // east then west: |db| = pi
        let f = compute_features(&traj(&[(0, 0.0, 0.0), (1000, 0.0, 0.001), (2000, 0.0, 0.0)])).unwrap();
        assert!((f.steps[2].bearing_rate - PI).abs() < 1e-9);
    }

    #[test]
    fn wraparound_uses_short_angle() {
        // just west of south to just east of south: a small turn, not ~2 pi
        let a = (0.0, 0.0);
        let f = compute_features(&traj(&[
            (0, 1.0, a.1 + 0.0001),
            (1000, a.0, a.1),
            (2000, -1.0, a.1 + 0.0001),
        ]))
        .unwrap();
        assert!(f.steps[2].bearing_rate < 0.01, "{}", f.steps[2].bearing_rate);
    }

    #[test]
    fn too_short_or_frozen_errors() {
        let one = traj(&[(0, 0.0, 0.0)]);
        assert!(compute_features(&one).is_err());
        let frozen = traj(&[(0, 0.0, 0.0), (0, 0.0, 0.001), (0, 0.0, 0.002)]);
        assert!(compute_features(&frozen).is_err());
    }

    #[test]
    fn fully_stationary_is_zero_velocity() {
        let f = compute_features(&traj(&[(0, 5.0, 5.0), (1000, 5.0, 5.0), (2000, 5.0, 5.0)])).unwrap();
        assert!(f.steps.iter().all(|s| s.velocity == 0.0));
    }

    fn seq(values: &[[f64; 5]]) -> FeatureSequence {
        FeatureSequence {
            id: "s".into(),
            label: RoadUserClass::Pedestrian,
            steps: values.iter().map(|v| FeatureVector::from_array(*v)).collect(),
        }
    }

    /// Two-pass mean / population variance.
    fn two_pass(corpus: &[FeatureSequence]) -> ([f64; 5], [f64; 5]) {
        let rows: Vec<[f64; 5]> = corpus.iter().flat_map(|s| s.steps.iter().map(|v| v.to_array())).collect();
        let n = rows.len() as f64;
        let mean: [f64; 5] = std::array::from_fn(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n);
        let std = std::array::from_fn(|i| {
            (rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt()
        });
        (mean, std)
    }

    #[test]
    fn two_point_population_std() {
        let s = fit_standardizer(&[seq(&[[0.0, 1.0, 0.0, 0.0, 0.0], [1.0, 3.0, 1.0, 1.0, 1.0]])]).unwrap();
        assert_eq!(s.mean[1], 2.0);
        assert_eq!(s.std[1], 1.0);
    }

    #[test]
    fn duplication_invariance() {
        let base = seq(&[[0.0, 1.0, 2.0, 0.5, 0.1], [1.0, 2.0, 0.0, 0.0, 0.3], [1.0, 4.0, 1.0, 2.0, 0.0]]);
        let once = fit_standardizer(std::slice::from_ref(&base)).unwrap();
        let many = fit_standardizer(&vec![base; 7]).unwrap();
        for i in 0..5 {
            assert!((once.mean[i] - many.mean[i]).abs() < 1e-12);
            assert!((once.std[i] - many.std[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_two_pass_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let corpus: Vec<FeatureSequence> = (0..20)
            .map(|_| {
                let rows: Vec<[f64; 5]> = (0..rng.gen_range(2..30))
                    .map(|_| std::array::from_fn(|_| rng.gen_range(-50.0..50.0)))
                    .collect();
                seq(&rows)
            })
            .collect();
        let fitted = fit_standardizer(&corpus).unwrap();
        let (mean, std) = two_pass(&corpus);
        for i in 0..5 {
            assert!((fitted.mean[i] - mean[i]).abs() < 1e-12);
            assert!((fitted.std[i] - std[i]).abs() < 1e-12);
        }

        let standardized: Vec<_> = corpus.iter().map(|s| apply_standardizer(&fitted, s)).collect();
        let (m, s) = two_pass(&standardized);
        for i in 0..5 {
            assert!(m[i].abs() < 1e-9 && (s[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_feature_named() {
        let err = fit_standardizer(&[seq(&[[0.0, 1.0, 0.0, 0.0, 1.0], [1.0, 2.0, 1.0, 0.0, 0.0]])]).unwrap_err();
        assert!(err.to_string().contains("accel_neg"), "{err}");
        assert!(fit_standardizer(&[]).is_err());
        assert!(fit_standardizer(&[seq(&[[1.0; 5]])]).is_err());
    }

    #[test]
    fn apply_arithmetic_and_identity() {
        let s = Standardizer { mean: [1.0; 5], std: [2.0; 5] };
        let out = apply_standardizer(&s, &seq(&[[2.0; 5]]));
        assert_eq!(out.steps[0].to_array(), [0.5; 5]);
        let input = seq(&[[3.0, -1.0, 2.5, 0.0, 7.0]]);
        assert_eq!(apply_standardizer(&Standardizer::identity(), &input), input);
    }

    #[test]
    fn feature_dump_has_header() {
        let mut buf = Vec::new();
        seq(&[[0.0, 1.0, 2.0, 3.0, 4.0]]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "dt,velocity,accel_pos,accel_neg,bearing_rate\n0,1,2,3,4\n");
    }

    proptest! {
        #[test]
        fn invariants_hold(
            steps in prop::collection::vec((0i64..3000, -0.001f64..0.001, -0.001f64..0.001), 2..60),
            shift in -1_000_000i64..1_000_000,
        ) {
            let mut ts = 1_000_000_000i64;
            let (mut lat, mut lon) = (45.0, 9.0);
            let mut rows = Vec::new();
            for (i, (dt, dlat, dlon)) in steps.iter().enumerate() {
                if i > 0 { ts += dt; lat += dlat; lon += dlon; }
                rows.push((ts, lat, lon));
            }
            if rows.windows(2).all(|w| w[0].0 == w[1].0) {
                return Ok(());
            }
            let f = compute_features(&traj(&rows)).unwrap();
            prop_assert_eq!(f.len(), rows.len());
            for (t, s) in f.steps.iter().enumerate() {
                prop_assert!(s.velocity >= 0.0 && s.accel_pos >= 0.0 && s.accel_neg >= 0.0 && s.bearing_rate >= 0.0);
                prop_assert_eq!(s.accel_pos * s.accel_neg, 0.0);
                if t >= 1 {
                    let avg = (s.dt + f.steps[t - 1].dt) / 2.0;
                    if avg > 0.0 {
                        prop_assert!(s.bearing_rate * avg <= PI + 1e-12);
                    }
                }
            }
            let shifted: Vec<_> = rows.iter().map(|&(t, a, b)| (t + shift, a, b)).collect();
            let g = compute_features(&traj(&shifted)).unwrap();
            prop_assert_eq!(f, g);
        }
    }
}
