//! Seeded synthetic campaign in the ingest schema: a known masked model,
//! daily passenger profiles, injected congestion episodes, sparse
//! diversion messages and bounded uniform process noise.
//!
//! Passenger counts are built so that the normalized arriving and departing
//! volumes of every bin sum to one. The volume columns of `B` then carry the
//! free-flow level of each state, which a model without an intercept could
//! not otherwise represent.

use nalgebra::Matrix4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{format_timestamp, RawRecord};
use crate::plant::PlantStepper;
use crate::types::{
    Action, ControlInput, DynamicsModel, Facility, MinMax, NoiseModel, StructureMasks,
    TrafficState, VolumeScale, Volumes,
};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub episodes: usize,
    pub bin_minutes: u32,
    /// UTC epoch second of the first bin.
    pub start: i64,
    /// Combined passengers per bin.
    pub passengers_per_bin: u32,
    /// Probability that a bin away from episodes shows a message.
    pub message_rate: f64,
    /// Process noise bounds; the seed is taken from the run seed.
    pub noise_lo: [f64; 4],
    pub noise_hi: [f64; 4],
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 60,
            episodes: 50,
            bin_minutes: 15,
            // 2022-03-01T00:00:00Z
            start: 1_646_092_800,
            passengers_per_bin: 400,
            message_rate: 0.05,
            noise_lo: [-34.6, -2.9, -43.3, -3.5],
            noise_hi: [38.5, 3.4, 46.5, 3.9],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bin_minutes == 0 || 120 % self.bin_minutes != 0 {
            return Err(Error::param("bin size must divide two hours"));
        }
        if self.days < 2 {
            return Err(Error::param("at least two days are required"));
        }
        if self.episodes > self.days - 1 {
            return Err(Error::param(format!(
                "{} episodes do not fit in {} days (one per day after the first)",
                self.episodes, self.days
            )));
        }
        if self.passengers_per_bin == 0 {
            return Err(Error::param("passengers_per_bin must be positive"));
        }
        if !(0.0..=1.0).contains(&self.message_rate) {
            return Err(Error::param("message_rate must lie in [0, 1]"));
        }
        NoiseModel::new(self.noise_lo, self.noise_hi, 0)?;
        Ok(())
    }

    pub fn window_bins(&self) -> usize {
        (120 / self.bin_minutes) as usize
    }

    fn bins_per_day(&self) -> usize {
        (24 * 60 / self.bin_minutes) as usize
    }
}

/// Injected episode; `start..end` are the bins whose passenger mix is fully
/// one-sided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub facility: Facility,
    pub start_index: usize,
    pub end_index: usize,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub schema_version: u32,
    pub seed: u64,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<RawRecord>,
    pub truth: DynamicsModel,
    pub episodes: EpisodeLog,
}

/// Ground-truth dynamics; satisfies the default masks strictly.
pub fn truth_matrices() -> (Matrix4<f64>, Matrix4<f64>) {
    #[rustfmt::skip]
    let a = Matrix4::new(
        0.5,   0.0, 0.0,   0.0,
        -0.01, 0.6, 0.0,   0.0,
        0.0,   0.0, 0.5,   0.0,
        0.0,   0.0, -0.01, 0.6,
    );
    #[rustfmt::skip]
    let b = Matrix4::new(
        -50.0, 40.0,  200.0, 75.0,
        8.0,   -0.5,  8.0,   33.5,
        50.0,  -40.0, 75.0,  200.0,
        -1.0,  6.0,   39.9,  10.0,
    );
    (a, b)
}

/// Departure share of the passenger mix outside episodes: two daily peaks.
fn regular_share(hour: f64, jitter: f64) -> f64 {
    let s = 0.5 + 0.18 * (4.0 * std::f64::consts::PI * (hour - 4.0) / 24.0).sin();
    (s + jitter).clamp(0.0, 1.0)
}

pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = config.window_bins();
    let per_day = config.bins_per_day();
    let n = config.days * per_day;
    let p = config.passengers_per_bin;
    let bin_hours = f64::from(config.bin_minutes) / 60.0;

    // Episodes: one per chosen day, alternating facility in time order.
    let mut days: Vec<usize> = (1..config.days).collect();
    for i in 0..config.episodes {
        let j = rng.gen_range(i..days.len());
        days.swap(i, j);
    }
    let mut chosen = days[..config.episodes].to_vec();
    chosen.sort_unstable();
    let episode_len = 2 * w;
    let mut episodes = Vec::with_capacity(chosen.len());
    for (i, day) in chosen.iter().enumerate() {
        let offset = rng.gen_range(6 * w / 2..=14 * w / 2);
        let len = episode_len + rng.gen_range(0..=w / 2);
        let start = day * per_day + offset;
        let facility = if i % 2 == 0 {
            Facility::Departures
        } else {
            Facility::Arrivals
        };
        episodes.push(Episode {
            facility,
            start_index: start,
            end_index: start + len,
            start: format_timestamp(config.start + start as i64 * 60 * i64::from(config.bin_minutes)),
            end: format_timestamp(
                config.start + (start + len) as i64 * 60 * i64::from(config.bin_minutes),
            ),
        });
    }

    // Departure share and passenger counts, with `w + 1` bins of look-ahead.
    let total = n + w + 1;
    let mut share: Vec<f64> = (0..total)
        .map(|k| {
            let hour = (k % per_day) as f64 * bin_hours;
            regular_share(hour, rng.gen_range(-0.02..0.02))
        })
        .collect();
    for e in &episodes {
        let v = match e.facility {
            Facility::Departures => 1.0,
            Facility::Arrivals => 0.0,
        };
        share[e.start_index..e.end_index].fill(v);
    }
    let departing: Vec<u32> = share.iter().map(|s| (f64::from(p) * s).round() as u32).collect();
    let arriving: Vec<u32> = (0..n).map(|m| p - departing[m + w + 1]).collect();

    // Messages, kept well clear of every episode.
    let protected = |k: usize| {
        episodes
            .iter()
            .any(|e| k + 3 * w / 2 >= e.start_index && k < e.end_index + 3 * w / 2)
    };
    let actions: Vec<Action> = (0..n)
        .map(|k| {
            let show = rng.gen_bool(config.message_rate);
            let which = rng.gen_bool(0.5);
            if !show || protected(k) {
                Action::Idle
            } else if which {
                Action::DivertDepartures
            } else {
                Action::DivertArrivals
            }
        })
        .collect();

    let full = f64::from(p) * w as f64;
    let scale = VolumeScale {
        dv: MinMax { min: 0.0, max: full },
        av: MinMax { min: 0.0, max: full },
    };
    let volumes = |k: usize| -> Volumes {
        let dv: u64 = departing[k + 1..=k + w].iter().map(|&v| u64::from(v)).sum();
        let av: f64 = if k >= w {
            arriving[k - w..k].iter().map(|&v| f64::from(v)).sum()
        } else {
            // No complete history yet; the complement of the departing sum.
            full - dv as f64
        };
        scale.normalize(dv as f64, av)
    };

    let (a, b) = truth_matrices();
    let truth = DynamicsModel::new(a, b, StructureMasks::domain_default(), scale)?;
    let noise = NoiseModel::new(config.noise_lo, config.noise_hi, rng.gen())?;
    let mut plant = PlantStepper::new(truth.clone(), noise);

    let round_state = |x: TrafficState| -> (u32, f64, u32, f64) {
        (
            x.df().round() as u32,
            (x.ds() * 100.0).round() / 100.0,
            x.af().round() as u32,
            (x.as_() * 100.0).round() / 100.0,
        )
    };
    let mut x = TrafficState::new(275.0, 50.0, 275.0, 61.0)?;
    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let (df, ds, af, as_) = round_state(x);
        let action = actions[k];
        records.push(RawRecord {
            timestamp: config.start + k as i64 * 60 * i64::from(config.bin_minutes),
            df,
            ds,
            af,
            as_,
            td: action.td(),
            ta: action.ta(),
            pax_arriving: arriving[k],
            pax_departing: departing[k],
        });
        let observed = TrafficState::new(f64::from(df), ds, f64::from(af), as_)?;
        x = plant.step(&observed, &ControlInput::new(action, volumes(k))?);
    }

    Ok(SynthOutput {
        records,
        truth,
        episodes: EpisodeLog {
            schema_version: SCHEMA_VERSION,
            seed,
            episodes,
        },
    })
}
