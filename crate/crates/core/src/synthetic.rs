//! Seeded synthetic tracks: a periodic carrier with Gaussian noise, optional
//! planted spikes, and slowly varying weather columns.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::track::{Column, Provenance, TrackFrame, TrackKey};

pub const SIGNAL_COLUMNS: [&str; 2] = ["SSNR", "PCNO"];
pub const WEATHER_COLUMNS: [&str; 4] = ["WX_HUMID", "RAIN", "TEMP", "WIND"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub key: TrackKey,
    pub n_points: usize,
    /// Carrier period in samples.
    pub period: f64,
    pub noise_sigma: f64,
    pub n_spikes: usize,
    /// Spike height in units of `noise_sigma`.
    pub spike_sigmas: f64,
    pub seed: u64,
    pub step_us: i64,
    pub start_us: i64,
    pub weather: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            key: TrackKey::new(34, 21),
            n_points: 1000,
            period: 50.0,
            noise_sigma: 0.1,
            n_spikes: 5,
            spike_sigmas: 8.0,
            seed: 0,
            step_us: 2_000_000,
            start_us: 1_735_689_600_000_000,
            weather: true,
        }
    }
}

impl SyntheticSpec {
    /// The 200-point single-carrier track used for training checks.
    pub fn sine(seed: u64) -> Self {
        Self {
            n_points: 200,
            period: 25.0,
            noise_sigma: 0.05,
            n_spikes: 0,
            seed,
            weather: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_points < 2 {
            return Err("a synthetic track needs at least 2 points".into());
        }
        if !(self.period > 0.0) || !(self.noise_sigma >= 0.0) || self.step_us <= 0 {
            return Err("period and step must be positive, noise non-negative".into());
        }
        if self.n_spikes > 0 && self.n_points < 4 * self.n_spikes + 20 {
            return Err(format!("{} points cannot hold {} spikes", self.n_points, self.n_spikes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrack {
    pub frame: TrackFrame,
    /// Rows carrying a planted spike, ascending.
    pub spike_rows: Vec<usize>,
}

/// Spikes are spread over equal segments of the interior (10 rows from either
/// edge) so no two share a neighbourhood.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticTrack, String> {
    spec.validate()?;
    let n = spec.n_points;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| e.to_string())?;

    let mut ssnr = Vec::with_capacity(n);
    let mut pcno = Vec::with_capacity(n);
    for i in 0..n {
        let phase = TAU * i as f64 / spec.period;
        ssnr.push(phase.sin() + noise.sample(&mut rng));
        pcno.push(phase.cos() + noise.sample(&mut rng));
    }

    let mut spike_rows = Vec::with_capacity(spec.n_spikes);
    if spec.n_spikes > 0 {
        let margin = 10;
        let seg = (n - 2 * margin) / spec.n_spikes;
        for s in 0..spec.n_spikes {
            let lo = margin + s * seg + seg / 4;
            let hi = margin + s * seg + (3 * seg) / 4;
            let row = rng.random_range(lo..hi.max(lo + 1));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let h = sign * spec.spike_sigmas * spec.noise_sigma;
            ssnr[row] += h;
            pcno[row] -= h;
            spike_rows.push(row);
        }
    }

    let mut columns = vec![column("SSNR", ssnr), column("PCNO", pcno)];
    if spec.weather {
        let slow = |i: usize, p: f64| (TAU * i as f64 / p).sin();
        let jitter = Normal::new(0.0, 0.2).map_err(|e| e.to_string())?;
        let mut hum = Vec::with_capacity(n);
        let mut rain = Vec::with_capacity(n);
        let mut temp = Vec::with_capacity(n);
        let mut wind = Vec::with_capacity(n);
        for i in 0..n {
            hum.push(26.0 + 0.5 * slow(i, 400.0) + 0.1 * jitter.sample(&mut rng));
            let shower = slow(i, 300.0) - 0.8;
            rain.push(if shower > 0.0 { (shower * 10.0 * 100.0).round() / 100.0 } else { 0.0 });
            temp.push(18.0 + 3.0 * slow(i + 100, 500.0) + jitter.sample(&mut rng));
            wind.push((12.0 + 6.0 * slow(i + 50, 350.0) + jitter.sample(&mut rng)).max(0.0));
        }
        columns.extend([
            column("WX_HUMID", hum),
            column("RAIN", rain),
            column("TEMP", temp),
            column("WIND", wind),
        ]);
    }

    let frame = TrackFrame {
        key: spec.key,
        timestamps: (0..n as i64).map(|i| spec.start_us + i * spec.step_us).collect(),
        columns,
        provenance: Provenance::Synthetic,
    };
    Ok(SyntheticTrack { frame, spike_rows })
}

fn column(name: &str, values: Vec<f64>) -> Column {
    Column {
        name: name.to_string(),
        values: values.into_iter().map(Some).collect(),
    }
}
