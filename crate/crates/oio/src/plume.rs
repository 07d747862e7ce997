//! Odour field: a point source whose plume develops over time, stretches
//! downwind, gusts with mean-reverting wind, decays, and can be purged.
//!
//! The deterministic field is an analytic Gaussian-plume shape anchored at
//! the source; multiplicative log-normal filament noise on each query
//! emulates intermittency. Filament noise is a pure hash of (state, query
//! cell), so reads stay side-effect free and replays are identical.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Concentration below this is treated as "no signal".
pub const DETECTION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlumeParams {
    /// meters
    pub source_position: [f64; 3],
    /// field mass added per second while emitting
    pub emission_rate: f64,
    /// m^2/s, controls upwind suppression
    pub diffusion_coefficient: f64,
    /// m/s
    pub wind_mean: [f64; 3],
    /// m/s, gust noise scale of the mean-reverting wind
    pub wind_gust_scale: f64,
    /// 1/s, relaxation of field mass toward ambient
    pub decay_rate: f64,
    /// m, radius of the plume envelope right after a purge
    pub initial_spread: f64,
    /// m, envelope radius of the fully developed plume
    pub max_spread: f64,
    /// s, time constant of envelope growth toward max_spread
    pub spread_tau: f64,
    /// log-normal sigma of per-query filament noise; 0 disables it
    pub filament_sigma: f64,
    /// 1/s, pull of the wind back toward its mean
    pub wind_reversion: f64,
    /// m/s per m/s of effector speed; local gust kick from robot motion
    /// (experimental, off by default)
    pub robot_disturbance_gain: f64,
}

impl Default for PlumeParams {
    fn default() -> Self {
        PlumeParams {
            source_position: [-0.55, 0.0, 0.0],
            emission_rate: 1.0,
            diffusion_coefficient: 0.03,
            wind_mean: [-0.02, 0.0, 0.0],
            wind_gust_scale: 0.008,
            decay_rate: 0.15,
            initial_spread: 0.05,
            max_spread: 0.55,
            spread_tau: 12.0,
            filament_sigma: 0.3,
            wind_reversion: 0.5,
            robot_disturbance_gain: 0.0,
        }
    }
}

impl PlumeParams {
    pub fn validate(&self) -> Result<()> {
        if self.emission_rate < 0.0 {
            return Err(Error::Config("emission_rate must be >= 0".into()));
        }
        if self.diffusion_coefficient <= 0.0 {
            return Err(Error::Config("diffusion_coefficient must be > 0".into()));
        }
        if self.decay_rate < 0.0 {
            return Err(Error::Config("decay_rate must be >= 0".into()));
        }
        if self.initial_spread <= 0.0 || self.max_spread < self.initial_spread || self.spread_tau <= 0.0 {
            return Err(Error::Config("spread parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Ambient conditions; by default these shape the sensor response, not the
/// field itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// degrees C
    pub temperature: f64,
    /// percent relative humidity, 0..=100
    pub humidity: f64,
    /// kPa
    pub pressure: f64,
}

impl Default for Environment {
    fn default() -> Self {
        Environment { temperature: 25.0, humidity: 50.0, pressure: 101.3 }
    }
}

impl Environment {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.humidity) {
            return Err(Error::Config(format!("humidity {} outside [0, 100]", self.humidity)));
        }
        Ok(())
    }
}

/// Evolving plume field. Reads are pure; [`PlumeState::step`] produces the
/// next state in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlumeState {
    pub params: PlumeParams,
    pub elapsed_time: f64,
    /// m/s
    pub current_wind: [f64; 3],
    /// accumulated field mass (normalized units)
    mass: f64,
    /// freshly drawn per step; decorrelates filament noise across steps
    filament_salt: u64,
    emitting: bool,
}

impl PlumeState {
    pub fn new(params: PlumeParams) -> Result<Self> {
        params.validate()?;
        Ok(PlumeState {
            current_wind: params.wind_mean,
            params,
            elapsed_time: 0.0,
            mass: 0.0,
            filament_salt: 0,
            emitting: true,
        })
    }

    /// The scent "runs out": emission stops, decay continues.
    pub fn stop_emission(&mut self) {
        self.emitting = false;
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn source(&self) -> Vector3<f64> {
        Vector3::from(self.params.source_position)
    }

    /// Deterministic field component at a point: maximal at the source,
    /// non-increasing with centerline distance, suppressed upwind, zero in
    /// the far field.
    pub fn deterministic_concentration_at(&self, point: &Vector3<f64>) -> f64 {
        let p = self.params;
        let d = point - self.source();
        let r = d.norm();
        let core = 0.05;
        let near = core / (r + core);

        let wind = Vector3::from(self.current_wind);
        let speed = wind.norm();
        let upwind = if speed > 1e-12 {
            let downwind = d.dot(&wind) / speed;
            (-speed * (r - downwind) / (2.0 * p.diffusion_coefficient)).exp()
        } else {
            1.0
        };

        let spread = p.max_spread
            - (p.max_spread - p.initial_spread) * (-self.elapsed_time / p.spread_tau).exp();
        let envelope = (-r * r / (2.0 * spread * spread)).exp();

        self.mass * near * upwind * envelope
    }

    /// Field query including filament intermittency. Pure: the noise factor
    /// is a hash of the state's per-step salt and the query cell.
    pub fn concentration_at(&self, point: &Vector3<f64>) -> f64 {
        let c = self.deterministic_concentration_at(point);
        if self.params.filament_sigma <= 0.0 || c <= 0.0 {
            return c;
        }
        c * filament_factor(self.filament_salt, point, self.params.filament_sigma)
    }

    /// Advance the field: wind gusts (mean-reverting), emission and decay of
    /// field mass, envelope growth via elapsed time.
    pub fn step<R: Rng + ?Sized>(&mut self, _env: &Environment, dt: f64, rng: &mut R) -> Result<()> {
        if dt <= 0.0 {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        let p = self.params;

        let mean = Vector3::from(p.wind_mean);
        let mut wind = Vector3::from(self.current_wind);
        wind += (mean - wind) * (p.wind_reversion * dt).min(1.0);
        if p.wind_gust_scale > 0.0 {
            let gust = Normal::new(0.0, p.wind_gust_scale * dt.sqrt())
                .map_err(|e| Error::Domain(format!("bad gust scale: {e}")))?;
            wind += Vector3::new(gust.sample(rng), gust.sample(rng), gust.sample(rng));
        }
        self.current_wind = wind.into();

        let emission = if self.emitting { p.emission_rate } else { 0.0 };
        self.mass += (emission - p.decay_rate * self.mass) * dt;
        self.mass = self.mass.max(0.0);

        self.elapsed_time += dt;
        // fresh filament pattern each step, still fully seed-determined
        self.filament_salt = if p.filament_sigma > 0.0 {
            rng.random::<u64>()
        } else {
            self.filament_salt.wrapping_add(1)
        };
        Ok(())
    }

    /// Transient wind kick from the robot stirring the air near the sensor.
    pub fn apply_robot_disturbance(&mut self, effector_velocity: &Vector3<f64>) {
        let gain = self.params.robot_disturbance_gain;
        if gain > 0.0 {
            let kicked = Vector3::from(self.current_wind) + effector_velocity * gain;
            self.current_wind = kicked.into();
        }
    }
}

/// Reset the field to zero everywhere, then let it develop for
/// `develop_time` seconds in 0.1 s steps.
pub fn purge_and_develop<R: Rng + ?Sized>(
    params: PlumeParams,
    develop_time: f64,
    rng: &mut R,
) -> Result<PlumeState> {
    if develop_time < 0.0 {
        return Err(Error::Domain(format!("develop_time must be >= 0, got {develop_time}")));
    }
    let mut state = PlumeState::new(params)?;
    let env = Environment::default();
    let dt = 0.1;
    let steps = (develop_time / dt).round() as u64;
    for _ in 0..steps {
        state.step(&env, dt, rng)?;
    }
    Ok(state)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Mean-one log-normal factor from a hash of (salt, 2 cm query cell).
fn filament_factor(salt: u64, point: &Vector3<f64>, sigma: f64) -> f64 {
    let cell = 0.02;
    let qx = (point.x / cell).floor() as i64 as u64;
    let qy = (point.y / cell).floor() as i64 as u64;
    let qz = (point.z / cell).floor() as i64 as u64;
    let mut h = splitmix64(salt ^ qx.rotate_left(17));
    h = splitmix64(h ^ qy.rotate_left(31));
    h = splitmix64(h ^ qz.rotate_left(47));
    let u1 = ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = ((splitmix64(h) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    (sigma * z - 0.5 * sigma * sigma).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_free_params() -> PlumeParams {
        PlumeParams { filament_sigma: 0.0, wind_gust_scale: 0.0, ..Default::default() }
    }

    fn developed(params: PlumeParams, seed: u64) -> PlumeState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        purge_and_develop(params, 30.0, &mut rng).unwrap()
    }

    #[test]
    fn source_is_global_maximum() {
        let state = developed(noise_free_params(), 0);
        let src = state.source();
        let c_src = state.concentration_at(&src);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let probe = src
                + Vector3::new(
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                );
            assert!(state.concentration_at(&probe) <= c_src);
        }
    }

    #[test]
    fn far_field_below_detection_floor() {
        let state = developed(noise_free_params(), 0);
        let probe = state.source() + Vector3::new(100.0, 0.0, 0.0);
        assert!(state.concentration_at(&probe) < DETECTION_FLOOR);
    }

    #[test]
    fn centerline_monotone_decreasing() {
        let state = developed(noise_free_params(), 0);
        let wind = Vector3::from(state.current_wind).normalize();
        // dense line sampling of the analytic field along the downwind ray
        let mut prev = f64::INFINITY;
        let mut samples = Vec::new();
        for k in 1..=120 {
            let d = 0.005 * k as f64;
            let c = state.deterministic_concentration_at(&(state.source() + wind * d));
            assert!(c <= prev, "centerline not monotone at {d}");
            prev = c;
            samples.push((d, c));
        }
        let at = |d: f64| {
            samples
                .iter()
                .min_by(|a, b| (a.0 - d).abs().partial_cmp(&(b.0 - d).abs()).unwrap())
                .unwrap()
                .1
        };
        assert!(at(0.2) > at(0.6));
    }

    #[test]
    fn purge_zero_develop_is_empty_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = purge_and_develop(noise_free_params(), 0.0, &mut rng).unwrap();
        let b = purge_and_develop(noise_free_params(), 0.0, &mut rng).unwrap();
        assert_eq!(a.mass(), 0.0);
        assert_eq!(a, b);
        let probe = a.source() + Vector3::new(0.3, 0.0, 0.0);
        assert_eq!(a.concentration_at(&probe), 0.0);
    }

    #[test]
    fn develop_30s_detectable_downwind() {
        let state = developed(noise_free_params(), 3);
        let wind = Vector3::from(state.current_wind).normalize();
        let c = state.concentration_at(&(state.source() + wind * 0.5));
        assert!(c > DETECTION_FLOOR, "developed plume too weak: {c}");
    }

    #[test]
    fn deterministic_replay_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let mut state = purge_and_develop(PlumeParams::default(), 30.0, &mut rng).unwrap();
            let env = Environment::default();
            let probe = state.source() + Vector3::new(0.4, 0.1, 0.0);
            let mut series = Vec::new();
            for _ in 0..50 {
                state.step(&env, 0.5, &mut rng).unwrap();
                series.push(state.concentration_at(&probe));
            }
            (series, state.current_wind)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_free_step_is_deterministic_diffusion() {
        let params = PlumeParams { wind_gust_scale: 0.0, decay_rate: 0.0, filament_sigma: 0.0, ..Default::default() };
        let env = Environment::default();
        let mut a = PlumeState::new(params).unwrap();
        let mut b = PlumeState::new(params).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(1);
        let mut rng_b = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            a.step(&env, 0.1, &mut rng_a).unwrap();
            b.step(&env, 0.1, &mut rng_b).unwrap();
        }
        // different rng seeds, same trajectory: nothing stochastic remains
        assert_eq!(a, b);
        assert_eq!(a.current_wind, a.params.wind_mean);
    }

    #[test]
    fn scent_runs_out_under_decay() {
        let params = PlumeParams { decay_rate: 2.0, filament_sigma: 0.0, wind_gust_scale: 0.0, ..Default::default() };
        let mut state = developed(params, 7);
        state.stop_emission();
        let env = Environment::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut prev_max = f64::INFINITY;
        for _ in 0..200 {
            state.step(&env, 0.5, &mut rng).unwrap();
            let c = state.concentration_at(&state.source());
            assert!(c <= prev_max + 1e-15, "max concentration increased after emission stopped");
            prev_max = c;
        }
        assert!(state.concentration_at(&state.source()) < DETECTION_FLOOR);
    }

    #[test]
    fn concentration_non_negative_fuzz() {
        let state = developed(PlumeParams::default(), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5000 {
            let probe = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            assert!(state.concentration_at(&probe) >= 0.0);
        }
    }

    #[test]
    fn filament_factor_mean_near_one() {
        let state = developed(PlumeParams::default(), 21);
        let det = {
            let mut s = state.clone();
            s.params.filament_sigma = 0.0;
            s
        };
        let probe_base = state.source() + Vector3::new(0.25, 0.0, 0.0);
        let mut sum = 0.0;
        let n = 4000;
        for k in 0..n {
            // distinct cells sample distinct hash draws
            let probe = probe_base + Vector3::new(0.0, 0.021 * k as f64 % 1.9, 0.021 * (k / 90) as f64);
            let c = state.concentration_at(&probe);
            let d = det.deterministic_concentration_at(&probe);
            if d > 0.0 {
                sum += c / d;
            }
        }
        let mean = sum / n as f64;
        assert!((mean - 1.0).abs() < 0.05, "filament factor mean {mean}");
    }
}
