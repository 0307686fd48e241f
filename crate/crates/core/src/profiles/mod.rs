//! Procedural road-elevation and driving-speed profiles, and the road-rate
//! disturbance `ż0(t_k) = dz0/ds(s(t_k)) · v(t_k)` they induce.

mod io;

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CcdError, Result};

pub use io::{read_road_csv, read_speed_csv, write_road_csv, write_speed_csv};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoadSpec {
    pub length_m: f64,
    pub spacing_m: f64,
    pub bumps: usize,
    pub dents: usize,
    pub ramps: usize,
    pub jumps: usize,
    pub bump_height_m: f64,
    pub bump_width_m: f64,
    /// Rise of each ramp (m), spread over `ramp_length_m`.
    pub ramp_height_m: f64,
    pub ramp_length_m: f64,
    pub jump_height_m: f64,
    /// Standard deviation of the band-limited roughness (m).
    pub noise_std_m: f64,
    /// Shortest and longest roughness wavelength (m).
    pub noise_wavelengths_m: [f64; 2],
    pub max_abs_elevation_m: f64,
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            length_m: 3000.0,
            spacing_m: 0.05,
            bumps: 40,
            dents: 40,
            ramps: 20,
            jumps: 20,
            bump_height_m: 0.05,
            bump_width_m: 2.0,
            ramp_height_m: 0.04,
            ramp_length_m: 2.0,
            jump_height_m: 0.02,
            noise_std_m: 0.002,
            noise_wavelengths_m: [1.0, 20.0],
            max_abs_elevation_m: 0.15,
        }
    }
}

impl RoadSpec {
    pub fn flat() -> Self {
        Self {
            bumps: 0,
            dents: 0,
            ramps: 0,
            jumps: 0,
            noise_std_m: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RoadFeature {
    /// Raised-cosine pulse; negative height for a dent.
    Bump { center: f64, width: f64, height: f64 },
    /// Linear rise of `height` over `[start, start + length]`, held afterwards.
    Ramp { start: f64, length: f64, height: f64 },
    /// Step of `height` at `at`.
    Jump { at: f64, height: f64 },
}

impl RoadFeature {
    pub fn elevation(&self, s: f64) -> f64 {
        match *self {
            RoadFeature::Bump {
                center,
                width,
                height,
            } => {
                let d = s - center;
                if d.abs() <= width / 2.0 {
                    height * 0.5 * (1.0 + (2.0 * PI * d / width).cos())
                } else {
                    0.0
                }
            }
            RoadFeature::Ramp {
                start,
                length,
                height,
            } => height * ((s - start) / length).clamp(0.0, 1.0),
            RoadFeature::Jump { at, height } => {
                if s >= at {
                    height
                } else {
                    0.0
                }
            }
        }
    }

    fn span(&self) -> (f64, f64) {
        match *self {
            RoadFeature::Bump { center, width, .. } => (center - width / 2.0, center + width / 2.0),
            RoadFeature::Ramp { start, length, .. } => (start, start + length),
            RoadFeature::Jump { at, .. } => (at, at),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadProfile {
    pub spacing_m: f64,
    pub elevation_m: Vec<f64>,
    pub features: Vec<RoadFeature>,
    pub noise_std_m: f64,
    pub seed: u64,
    /// Central-difference slope `dz0/ds` on the grid.
    pub slope: Vec<f64>,
}

fn central_slope(z: &[f64], ds: f64) -> Vec<f64> {
    let n = z.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (z[1] - z[0]) / ds
                } else if i == n - 1 {
                    (z[n - 1] - z[n - 2]) / ds
                } else {
                    (z[i + 1] - z[i - 1]) / (2.0 * ds)
                }
            })
            .collect(),
    }
}

impl RoadProfile {
    pub fn from_elevation(spacing_m: f64, elevation_m: Vec<f64>, seed: u64) -> Result<Self> {
        if !(spacing_m > 0.0) {
            return Err(CcdError::Config("road spacing must be positive".into()));
        }
        if elevation_m.len() < 2 || elevation_m.iter().any(|z| !z.is_finite()) {
            return Err(CcdError::Config(
                "road needs at least two finite elevation samples".into(),
            ));
        }
        let slope = central_slope(&elevation_m, spacing_m);
        Ok(Self {
            spacing_m,
            elevation_m,
            features: Vec::new(),
            noise_std_m: 0.0,
            seed,
            slope,
        })
    }

    pub fn len(&self) -> usize {
        self.elevation_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elevation_m.is_empty()
    }

    pub fn length_m(&self) -> f64 {
        self.spacing_m * (self.len() - 1) as f64
    }

    pub fn distance(&self, i: usize) -> f64 {
        i as f64 * self.spacing_m
    }

    /// Slope at distance `s`, linearly interpolated on the grid. Positions
    /// past the end wrap around.
    pub fn slope_at(&self, s: f64) -> f64 {
        let length = self.length_m();
        let mut s = s;
        if s < 0.0 || s > length {
            static WRAP_LOGGED: AtomicBool = AtomicBool::new(false);
            if !WRAP_LOGGED.swap(true, Ordering::Relaxed) {
                log::info!("vehicle position {s:.1} m is past the road end ({length:.1} m); wrapping");
            }
            s = s.rem_euclid(length);
        }
        let u = s / self.spacing_m;
        let i = (u.floor() as usize).min(self.len() - 2);
        let f = u - i as f64;
        self.slope[i] * (1.0 - f) + self.slope[i + 1] * f
    }
}

/// Builds a road from `spec`; deterministic given `seed`.
pub fn generate_road(spec: &RoadSpec, seed: u64) -> Result<RoadProfile> {
    if !(spec.spacing_m > 0.0) || !(spec.length_m > spec.spacing_m) {
        return Err(CcdError::Config(
            "road length and spacing must be positive with length > spacing".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let length = spec.length_m;
    let mut features = Vec::new();
    let place = |rng: &mut ChaCha8Rng| rng.gen_range(0.05 * length..0.95 * length);
    for _ in 0..spec.bumps {
        features.push(RoadFeature::Bump {
            center: place(&mut rng),
            width: spec.bump_width_m,
            height: spec.bump_height_m,
        });
    }
    for _ in 0..spec.dents {
        features.push(RoadFeature::Bump {
            center: place(&mut rng),
            width: spec.bump_width_m,
            height: -spec.bump_height_m,
        });
    }
    for _ in 0..spec.ramps {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        features.push(RoadFeature::Ramp {
            start: place(&mut rng),
            length: spec.ramp_length_m,
            height: sign * spec.ramp_height_m,
        });
    }
    for _ in 0..spec.jumps {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        features.push(RoadFeature::Jump {
            at: place(&mut rng),
            height: sign * spec.jump_height_m,
        });
    }
    features.sort_by(|a, b| a.span().0.total_cmp(&b.span().0));
    let overlaps = features
        .windows(2)
        .filter(|w| w[1].span().0 < w[0].span().1)
        .count();
    if overlaps > 0 {
        log::debug!("{overlaps} overlapping road features are summed");
    }

    // Band-limited roughness: random-phase sinusoids with log-uniform
    // wavelengths, scaled to the requested standard deviation.
    const TONES: usize = 32;
    let [lmin, lmax] = spec.noise_wavelengths_m;
    let amplitude = spec.noise_std_m * (2.0 / TONES as f64).sqrt();
    let tones: Vec<(f64, f64)> = (0..TONES)
        .map(|_| {
            let lambda = (rng.gen_range(lmin.ln()..=lmax.ln())).exp();
            let phase = rng.gen_range(0.0..2.0 * PI);
            (2.0 * PI / lambda, phase)
        })
        .collect();

    let n = (length / spec.spacing_m).round() as usize + 1;
    let mut clipped = false;
    let elevation: Vec<f64> = (0..n)
        .map(|i| {
            let s = i as f64 * spec.spacing_m;
            let mut z: f64 = features.iter().map(|f| f.elevation(s)).sum();
            if amplitude > 0.0 {
                z += tones
                    .iter()
                    .map(|(k, ph)| amplitude * (k * s + ph).sin())
                    .sum::<f64>();
            }
            if z.abs() > spec.max_abs_elevation_m {
                clipped = true;
                z = z.clamp(-spec.max_abs_elevation_m, spec.max_abs_elevation_m);
            }
            z
        })
        .collect();
    if clipped {
        log::info!(
            "road elevation clipped to ±{} m",
            spec.max_abs_elevation_m
        );
    }
    let slope = central_slope(&elevation, spec.spacing_m);
    Ok(RoadProfile {
        spacing_m: spec.spacing_m,
        elevation_m: elevation,
        features,
        noise_std_m: spec.noise_std_m,
        seed,
        slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedSpec {
    pub steps: usize,
    pub period_s: f64,
    pub max_speed_mps: f64,
    /// Time between speed waypoints (s).
    pub waypoint_interval_s: f64,
    /// Probability that a waypoint is a stop.
    pub stop_probability: f64,
}

impl Default for SpeedSpec {
    fn default() -> Self {
        Self {
            steps: 15000,
            period_s: 0.05,
            max_speed_mps: 30.0,
            waypoint_interval_s: 20.0,
            stop_probability: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub period_s: f64,
    pub speed_mps: Vec<f64>,
    pub seed: u64,
}

impl SpeedProfile {
    pub fn constant(period_s: f64, speed: f64, steps: usize) -> Self {
        Self {
            period_s,
            speed_mps: vec![speed.max(0.0); steps],
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.speed_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed_mps.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.period_s
    }

    /// Vehicle position at each step, integrating speed from zero.
    pub fn positions(&self) -> Vec<f64> {
        let mut s = 0.0;
        self.speed_mps
            .iter()
            .map(|v| {
                let here = s;
                s += v * self.period_s;
                here
            })
            .collect()
    }
}

/// Smooth speed trace through random waypoints; deterministic given `seed`.
pub fn generate_speed(spec: &SpeedSpec, seed: u64) -> Result<SpeedProfile> {
    if spec.steps == 0 || !(spec.period_s > 0.0) || !(spec.waypoint_interval_s > 0.0) {
        return Err(CcdError::Config(
            "speed profile needs positive steps, period and waypoint interval".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = (spec.waypoint_interval_s / spec.period_s).round().max(1.0) as usize;
    let n_way = spec.steps / per + 2;
    let waypoints: Vec<f64> = (0..n_way)
        .map(|i| {
            if i > 0 && rng.gen_bool(spec.stop_probability) {
                0.0
            } else {
                rng.gen_range(0.3 * spec.max_speed_mps..=spec.max_speed_mps)
            }
        })
        .collect();
    let speed = (0..spec.steps)
        .map(|k| {
            let seg = k / per;
            let f = (k % per) as f64 / per as f64;
            let w = 0.5 * (1.0 - (PI * f).cos());
            (waypoints[seg] * (1.0 - w) + waypoints[seg + 1] * w).max(0.0)
        })
        .collect();
    Ok(SpeedProfile {
        period_s: spec.period_s,
        speed_mps: speed,
        seed,
    })
}

/// `ż0` at step `k` of the speed profile.
pub fn road_disturbance(road: &RoadProfile, speed: &SpeedProfile, positions: &[f64], k: usize) -> f64 {
    let v = speed.speed_mps[k];
    if v == 0.0 {
        return 0.0;
    }
    road.slope_at(positions[k]) * v
}

/// Precomputed `ż0` sequence along a speed profile; indices wrap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceTrack {
    pub rates: Vec<f64>,
}

impl DisturbanceTrack {
    pub fn new(road: &RoadProfile, speed: &SpeedProfile) -> Self {
        let pos = speed.positions();
        Self {
            rates: (0..speed.len())
                .map(|k| road_disturbance(road, speed, &pos, k))
                .collect(),
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            rates: vec![0.0; len.max(1)],
        }
    }

    pub fn rate_at(&self, k: usize) -> f64 {
        self.rates[k % self.rates.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_road_and_zero_speed() {
        let road = generate_road(&RoadSpec::flat(), 3).unwrap();
        assert!(road.elevation_m.iter().all(|&z| z == 0.0));
        let speed = generate_speed(&SpeedSpec::default(), 1).unwrap();
        let track = DisturbanceTrack::new(&road, &speed);
        assert!(track.rates.iter().all(|&r| r == 0.0));

        let bumpy = generate_road(&RoadSpec::default(), 3).unwrap();
        let stopped = SpeedProfile::constant(0.05, 0.0, 100);
        let track = DisturbanceTrack::new(&bumpy, &stopped);
        assert!(track.rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn bump_peak_at_center() {
        let f = RoadFeature::Bump {
            center: 10.0,
            width: 2.0,
            height: 0.05,
        };
        assert_eq!(f.elevation(10.0), 0.05);
        assert_eq!(f.elevation(11.5), 0.0);
    }

    #[test]
    fn ramp_rate_is_grade_times_speed() {
        let spacing = 0.05;
        let z: Vec<f64> = (0..2001).map(|i| 0.02 * i as f64 * spacing).collect();
        let road = RoadProfile::from_elevation(spacing, z, 0).unwrap();
        let speed = SpeedProfile::constant(0.05, 10.0, 100);
        let track = DisturbanceTrack::new(&road, &speed);
        for r in &track.rates {
            assert!((r - 0.2).abs() < 1e-12, "{r}");
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let spec = RoadSpec::default();
        let a = generate_road(&spec, 42).unwrap();
        let b = generate_road(&spec, 42).unwrap();
        assert_eq!(a, b);
        assert!(a
            .elevation_m
            .iter()
            .all(|z| z.is_finite() && z.abs() <= spec.max_abs_elevation_m));
        let s1 = generate_speed(&SpeedSpec::default(), 9).unwrap();
        assert_eq!(s1, generate_speed(&SpeedSpec::default(), 9).unwrap());
        assert!(s1.speed_mps.iter().all(|&v| v >= 0.0));
        assert_eq!(s1.len(), 15000);
    }

    #[test]
    fn slope_integrates_back_to_elevation() {
        // Smooth features on a fine grid so the central-difference
        // truncation error stays far below the tolerance.
        let spec = RoadSpec {
            length_m: 200.0,
            spacing_m: 0.001,
            ramps: 0,
            jumps: 0,
            bumps: 5,
            dents: 5,
            ..RoadSpec::default()
        };
        let road = generate_road(&spec, 5).unwrap();
        let mut integral = road.elevation_m[0];
        let mut worst: f64 = 0.0;
        for i in 1..road.len() {
            integral += 0.5 * (road.slope[i - 1] + road.slope[i]) * road.spacing_m;
            worst = worst.max((integral - road.elevation_m[i]).abs());
        }
        assert!(worst < 1e-6, "max trapezoid error {worst}");
    }

    #[test]
    fn rate_scales_with_speed_at_matched_positions() {
        let road = generate_road(&RoadSpec::default(), 8).unwrap();
        for i in 0..200 {
            let s = 37.0 + i as f64 * 0.731;
            let slope = road.slope_at(s);
            let single = SpeedProfile::constant(0.05, 12.0, 1);
            let double = SpeedProfile::constant(0.05, 24.0, 1);
            let r1 = road_disturbance(&road, &single, &[s], 0);
            let r2 = road_disturbance(&road, &double, &[s], 0);
            assert_eq!(r2, 2.0 * r1);
            assert_eq!(r1, slope * 12.0);
        }
    }

    #[test]
    fn positions_wrap_past_road_end() {
        let z: Vec<f64> = (0..101).map(|i| (i as f64 * 0.1).sin()).collect();
        let road = RoadProfile::from_elevation(0.1, z, 0).unwrap();
        let inside = road.slope_at(3.3);
        let wrapped = road.slope_at(3.3 + road.length_m());
        assert!((inside - wrapped).abs() < 1e-9);
    }
}
