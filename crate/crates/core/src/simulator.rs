//! Seeded synthetic sessions and multi-session cohorts.
//!
//! Each channel follows an exponential drift toward its baseline plus
//! Gaussian noise whose standard deviation relaxes toward a floor:
//!
//! ```text
//! value(t) = clamp(baseline + amplitude * exp(-t / drift_tau) + sigma(t) * xi)
//! sigma(t) = sigma0 * (floor + (1 - floor) * exp(-t / noise_tau))
//! ```
//!
//! Noise variates come from [`NormalStream`]: Box-Muller over a ChaCha20
//! keystream, one ChaCha stream id per channel. Transcendentals go through
//! `libm` so output bytes do not depend on the platform's math library.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::channel::{Channel, PerChannel};
use crate::frame::{encode_frame, SensorFrame, MAX_DEVICE_ID_CHARS};

pub const DEFAULT_START_EPOCH_MS: i64 = 1_700_000_000_000;
pub const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub baseline: f64,
    /// Signed offset at t = 0 that decays away; positive starts above baseline.
    pub drift_amplitude: f64,
    pub drift_tau_s: f64,
    pub noise_sigma0: f64,
    /// Values above 1 make the noise grow toward `sigma0 * floor`.
    pub noise_floor_fraction: f64,
    pub noise_tau_s: f64,
    pub sample_period_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimProfile {
    pub channels: PerChannel<ChannelProfile>,
    pub session_duration_s: f64,
    pub seed: u64,
    pub device_id: String,
    pub participant_id: String,
    #[serde(default = "default_start")]
    pub start_epoch_ms: i64,
}

fn default_start() -> i64 {
    DEFAULT_START_EPOCH_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_sessions: usize,
    pub base_profile: SimProfile,
    /// Baseline change per session index, in channel units.
    pub baseline_slope: PerChannel<f64>,
    pub jitter_sigma: PerChannel<f64>,
    pub seed: u64,
    #[serde(default = "default_spacing")]
    pub session_spacing_ms: i64,
}

fn default_spacing() -> i64 {
    DAY_MS
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("{channel}: {field} must be {rule}, got {value}")]
    Channel { channel: Channel, field: &'static str, rule: &'static str, value: f64 },
    #[error("session duration must be positive, got {0}")]
    Duration(f64),
    #[error("device id must be 1..={MAX_DEVICE_ID_CHARS} chars")]
    DeviceId,
    #[error("cohort needs at least one session")]
    NoSessions,
    #[error("{channel}: jitter sigma must be finite and >= 0, got {value}")]
    Jitter { channel: Channel, value: f64 },
    #[error("session spacing must be positive, got {0}")]
    Spacing(i64),
}

impl ChannelProfile {
    fn validate(&self, channel: Channel) -> Result<(), ProfileError> {
        let fail = |field, rule, value| Err(ProfileError::Channel { channel, field, rule, value });
        if !self.baseline.is_finite() {
            return fail("baseline", "finite", self.baseline);
        }
        if !self.drift_amplitude.is_finite() {
            return fail("drift_amplitude", "finite", self.drift_amplitude);
        }
        if !(self.drift_tau_s.is_finite() && self.drift_tau_s > 0.0) {
            return fail("drift_tau_s", "> 0", self.drift_tau_s);
        }
        if !(self.noise_sigma0.is_finite() && self.noise_sigma0 >= 0.0) {
            return fail("noise_sigma0", ">= 0", self.noise_sigma0);
        }
        if !(self.noise_floor_fraction.is_finite() && self.noise_floor_fraction >= 0.0) {
            return fail("noise_floor_fraction", ">= 0", self.noise_floor_fraction);
        }
        if !(self.noise_tau_s.is_finite() && self.noise_tau_s > 0.0) {
            return fail("noise_tau_s", "> 0", self.noise_tau_s);
        }
        if self.sample_period_ms <= 0 {
            return fail("sample_period_ms", "> 0", self.sample_period_ms as f64);
        }
        Ok(())
    }

    /// Noise-free trajectory at `t_s` seconds, before clamping.
    pub fn drift_at(&self, t_s: f64) -> f64 {
        self.baseline + self.drift_amplitude * libm::exp(-t_s / self.drift_tau_s)
    }

    pub fn sigma_at(&self, t_s: f64) -> f64 {
        let f = self.noise_floor_fraction;
        self.noise_sigma0 * (f + (1.0 - f) * libm::exp(-t_s / self.noise_tau_s))
    }

    fn flat(baseline: f64, sample_period_ms: i64) -> Self {
        ChannelProfile {
            baseline,
            drift_amplitude: 0.0,
            drift_tau_s: 60.0,
            noise_sigma0: 0.0,
            noise_floor_fraction: 1.0,
            noise_tau_s: 60.0,
            sample_period_ms,
        }
    }
}

/// Nominal sample periods: 10 SPS for the load cell and microphone, 5 s
/// heart rate, 15 s respiratory rate.
pub const DEFAULT_PERIODS_MS: PerChannel<i64> =
    PerChannel { pressure_gf: 100, audio_rms: 100, heart_rate: 5000, respiratory_rate: 15000 };

impl SimProfile {
    /// Every channel constant at a plausible resting value.
    pub fn flat(seed: u64) -> Self {
        SimProfile {
            channels: PerChannel {
                pressure_gf: ChannelProfile::flat(12600.0, DEFAULT_PERIODS_MS.pressure_gf),
                audio_rms: ChannelProfile::flat(0.2, DEFAULT_PERIODS_MS.audio_rms),
                heart_rate: ChannelProfile::flat(68.0, DEFAULT_PERIODS_MS.heart_rate),
                respiratory_rate: ChannelProfile::flat(14.0, DEFAULT_PERIODS_MS.respiratory_rate),
            },
            session_duration_s: 600.0,
            seed,
            device_id: "carrier-01".into(),
            participant_id: "p-01".into(),
            start_epoch_ms: DEFAULT_START_EPOCH_MS,
        }
    }

    /// Heart and breathing rates settle downward, microphone noise and its
    /// dispersion fall, brush pressure rises toward a steadier level.
    pub fn calming(seed: u64) -> Self {
        let mut p = SimProfile::flat(seed);
        p.channels = PerChannel {
            pressure_gf: ChannelProfile {
                baseline: 12600.0,
                drift_amplitude: -3000.0,
                drift_tau_s: 60.0,
                noise_sigma0: 400.0,
                noise_floor_fraction: 0.3,
                noise_tau_s: 180.0,
                sample_period_ms: DEFAULT_PERIODS_MS.pressure_gf,
            },
            audio_rms: ChannelProfile {
                baseline: 0.20,
                drift_amplitude: 0.25,
                drift_tau_s: 240.0,
                noise_sigma0: 0.04,
                noise_floor_fraction: 0.3,
                noise_tau_s: 200.0,
                sample_period_ms: DEFAULT_PERIODS_MS.audio_rms,
            },
            heart_rate: ChannelProfile {
                baseline: 68.0,
                drift_amplitude: 18.0,
                drift_tau_s: 300.0,
                noise_sigma0: 1.5,
                noise_floor_fraction: 0.3,
                noise_tau_s: 300.0,
                sample_period_ms: DEFAULT_PERIODS_MS.heart_rate,
            },
            respiratory_rate: ChannelProfile {
                baseline: 14.0,
                drift_amplitude: 6.0,
                drift_tau_s: 300.0,
                noise_sigma0: 0.8,
                noise_floor_fraction: 0.3,
                noise_tau_s: 300.0,
                sample_period_ms: DEFAULT_PERIODS_MS.respiratory_rate,
            },
        };
        p
    }

    /// The calming preset with every drift amplitude negated. Baselines of
    /// the audio and physiological channels move to the calming start value
    /// so the trajectories stay in range, and noise grows instead of decaying.
    pub fn agitated(seed: u64) -> Self {
        let mut p = SimProfile::calming(seed);
        for channel in Channel::ALL {
            let c = p.channels.get_mut(channel);
            if channel != Channel::PressureRaw {
                c.baseline += c.drift_amplitude;
            }
            c.drift_amplitude = -c.drift_amplitude;
            c.noise_sigma0 *= c.noise_floor_fraction;
            c.noise_floor_fraction = 1.0 / c.noise_floor_fraction;
        }
        p
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        for (channel, c) in self.channels.iter() {
            c.validate(channel)?;
        }
        if !(self.session_duration_s.is_finite() && self.session_duration_s > 0.0) {
            return Err(ProfileError::Duration(self.session_duration_s));
        }
        let n = self.device_id.chars().count();
        if n == 0 || n > MAX_DEVICE_ID_CHARS {
            return Err(ProfileError::DeviceId);
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> i64 {
        (self.session_duration_s * 1000.0).round() as i64
    }
}

impl CohortSpec {
    /// Flat cohort: no baseline trend and no jitter.
    pub fn flat(n_sessions: usize, base_profile: SimProfile, seed: u64) -> Self {
        CohortSpec {
            n_sessions,
            base_profile,
            baseline_slope: PerChannel::default(),
            jitter_sigma: PerChannel::default(),
            seed,
            session_spacing_ms: DAY_MS,
        }
    }

    /// Calming sessions whose mean noise falls and mean pressure rises from
    /// one session to the next.
    pub fn calming(n_sessions: usize, seed: u64) -> Self {
        CohortSpec {
            baseline_slope: PerChannel { pressure_gf: 60.0, audio_rms: -0.004, heart_rate: 0.0, respiratory_rate: 0.0 },
            jitter_sigma: PerChannel { pressure_gf: 150.0, audio_rms: 0.01, heart_rate: 2.0, respiratory_rate: 0.5 },
            ..CohortSpec::flat(n_sessions, SimProfile::calming(seed), seed)
        }
    }

    pub fn agitated(n_sessions: usize, seed: u64) -> Self {
        CohortSpec {
            base_profile: SimProfile::agitated(seed),
            ..CohortSpec::calming(n_sessions, seed)
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.n_sessions == 0 {
            return Err(ProfileError::NoSessions);
        }
        if self.session_spacing_ms <= 0 {
            return Err(ProfileError::Spacing(self.session_spacing_ms));
        }
        for (channel, s) in self.jitter_sigma.iter() {
            if !(s.is_finite() && *s >= 0.0) {
                return Err(ProfileError::Jitter { channel, value: *s });
            }
        }
        self.base_profile.validate()
    }
}

/// Standard normal variates: Box-Muller on a ChaCha20 stream.
///
/// Uniforms take the top 53 bits of each `u64`. Both Box-Muller outputs are
/// used, cosine branch first.
pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NormalStream { rng, spare: None }
    }

    fn unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.unit(); // (0, 1]
        let u2 = self.unit();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * libm::sin(theta));
        radius * libm::cos(theta)
    }
}

/// Generate one session's frames in global timestamp order.
pub fn generate_session(profile: &SimProfile) -> Result<Vec<SensorFrame>, ProfileError> {
    profile.validate()?;
    let duration_ms = profile.duration_ms();
    let mut frames = Vec::new();
    for channel in Channel::ALL {
        let c = profile.channels.get(channel);
        let mut noise = NormalStream::new(profile.seed, channel.index() as u64);
        let mut t = 0i64;
        let mut seq = 0u64;
        while t <= duration_ms {
            let t_s = t as f64 / 1000.0;
            let xi = noise.next_normal();
            let value = channel.clamp(c.drift_at(t_s) + c.sigma_at(t_s) * xi);
            frames.push(SensorFrame::new(profile.device_id.clone(), channel, profile.start_epoch_ms + t, value).with_seq(seq));
            seq += 1;
            t += c.sample_period_ms;
        }
    }
    // stable: channel order breaks timestamp ties
    frames.sort_by_key(|f| f.timestamp_ms);
    Ok(frames)
}

/// Encode frames as wire lines.
pub fn frames_to_lines(frames: &[SensorFrame]) -> String {
    frames
        .iter()
        .map(|f| encode_frame(f).expect("simulator frames are clamped into range"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub file: String,
    pub baseline_jitter: PerChannel<f64>,
    pub profile: SimProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub n_sessions: usize,
    pub noise_generator: String,
    pub baseline_slope: PerChannel<f64>,
    pub jitter_sigma: PerChannel<f64>,
    pub sessions: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub sessions: Vec<Vec<SensorFrame>>,
    pub manifest: CohortManifest,
}

/// splitmix64 finalizer; spreads a cohort seed into per-session seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const JITTER_STREAM: u64 = 1000;

/// Effective per-session profiles, without generating any frames.
pub fn cohort_profiles(spec: &CohortSpec) -> Result<Vec<ManifestEntry>, ProfileError> {
    spec.validate()?;
    let mut jitter = NormalStream::new(spec.seed, JITTER_STREAM);
    let mut entries = Vec::with_capacity(spec.n_sessions);
    for k in 0..spec.n_sessions {
        let mut profile = spec.base_profile.clone();
        profile.seed = derive_seed(spec.seed, k as u64);
        profile.start_epoch_ms = spec.base_profile.start_epoch_ms + k as i64 * spec.session_spacing_ms;
        let mut offsets = PerChannel::default();
        for channel in Channel::ALL {
            let z = jitter.next_normal();
            let offset = spec.jitter_sigma.get(channel) * z;
            *offsets.get_mut(channel) = offset;
            let c = profile.channels.get_mut(channel);
            c.baseline += spec.baseline_slope.get(channel) * k as f64 + offset;
        }
        entries.push(ManifestEntry { index: k, file: session_file_name(k), baseline_jitter: offsets, profile });
    }
    Ok(entries)
}

pub fn session_file_name(index: usize) -> String {
    format!("session_{index:03}.jsonl")
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort, ProfileError> {
    let entries = cohort_profiles(spec)?;
    let sessions = entries
        .iter()
        .map(|e| generate_session(&e.profile))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Cohort {
        sessions,
        manifest: CohortManifest {
            seed: spec.seed,
            n_sessions: spec.n_sessions,
            noise_generator: "box-muller/chacha20/libm".into(),
            baseline_slope: spec.baseline_slope,
            jitter_sigma: spec.jitter_sigma,
            sessions: entries,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(mut p: SimProfile) -> SimProfile {
        for c in Channel::ALL {
            p.channels.get_mut(c).noise_sigma0 = 0.0;
        }
        p
    }

    #[test]
    fn flat_noiseless_profile_is_constant() {
        let p = SimProfile::flat(3);
        let frames = generate_session(&p).unwrap();
        for f in &frames {
            assert_eq!(f.value, p.channels.get(f.channel).baseline);
        }
    }

    #[test]
    fn heart_rate_follows_closed_form() {
        let p = noiseless(SimProfile::calming(1));
        let frames = generate_session(&p).unwrap();
        let hr: Vec<_> = frames.iter().filter(|f| f.channel == Channel::HeartRate).collect();
        assert_eq!(hr[0].value, 86.0);
        let at_300 = hr.iter().find(|f| f.timestamp_ms - p.start_epoch_ms == 300_000).unwrap();
        assert!((at_300.value - 74.62183).abs() < 1e-5, "{}", at_300.value);
        assert!((at_300.value - (68.0 + 18.0 / std::f64::consts::E)).abs() < 1e-9);
    }

    #[test]
    fn noiseless_values_match_drift_formula() {
        let p = noiseless(SimProfile::calming(9));
        for f in generate_session(&p).unwrap() {
            let t_s = (f.timestamp_ms - p.start_epoch_ms) as f64 / 1000.0;
            let c = p.channels.get(f.channel);
            let expected = f.channel.clamp(c.baseline + c.drift_amplitude * (-t_s / c.drift_tau_s).exp());
            assert!((f.value - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn same_seed_same_bytes_different_seed_differs() {
        let a = frames_to_lines(&generate_session(&SimProfile::calming(7)).unwrap());
        let b = frames_to_lines(&generate_session(&SimProfile::calming(7)).unwrap());
        let c = frames_to_lines(&generate_session(&SimProfile::calming(8)).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn per_channel_timestamps_step_by_period_and_seq_is_monotonic() {
        let p = SimProfile::calming(2);
        let frames = generate_session(&p).unwrap();
        assert!(frames.windows(2).all(|w| w[0].timestamp_ms <= w[1].timestamp_ms));
        for channel in Channel::ALL {
            let own: Vec<_> = frames.iter().filter(|f| f.channel == channel).collect();
            let period = p.channels.get(channel).sample_period_ms;
            assert_eq!(own.len() as i64, p.duration_ms() / period + 1);
            for (i, pair) in own.windows(2).enumerate() {
                assert_eq!(pair[1].timestamp_ms - pair[0].timestamp_ms, period);
                assert_eq!(pair[0].seq, Some(i as u64));
            }
        }
    }

    #[test]
    fn every_frame_is_wire_valid() {
        for p in [SimProfile::calming(4), SimProfile::agitated(4)] {
            for f in generate_session(&p).unwrap() {
                f.validate().unwrap();
            }
        }
    }

    #[test]
    fn extreme_noise_is_clamped() {
        let mut p = SimProfile::flat(5);
        p.session_duration_s = 30.0;
        p.channels.audio_rms.noise_sigma0 = 10.0;
        for f in generate_session(&p).unwrap() {
            f.validate().unwrap();
        }
    }

    #[test]
    fn normal_stream_moments() {
        let mut s = NormalStream::new(42, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn cohort_baseline_slope() {
        let mut spec = CohortSpec::flat(30, SimProfile::flat(1), 11);
        spec.base_profile.channels.audio_rms.baseline = 0.20;
        spec.baseline_slope.audio_rms = -0.004;
        let entries = cohort_profiles(&spec).unwrap();
        assert_eq!(entries.len(), 30);
        assert!((entries[29].profile.channels.audio_rms.baseline - 0.084).abs() < 1e-12);
    }

    #[test]
    fn flat_cohort_has_identical_effective_channels() {
        let spec = CohortSpec::flat(30, SimProfile::calming(1), 5);
        let entries = cohort_profiles(&spec).unwrap();
        for e in &entries {
            assert_eq!(e.profile.channels, entries[0].profile.channels);
            assert_eq!(e.profile.session_duration_s, entries[0].profile.session_duration_s);
        }
    }

    #[test]
    fn cohort_is_deterministic() {
        let spec = CohortSpec::calming(3, 7);
        let a = generate_cohort(&spec).unwrap();
        let b = generate_cohort(&spec).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.sessions, b.sessions);
        assert_ne!(a.manifest.sessions[0].profile.seed, a.manifest.sessions[1].profile.seed);
        assert_eq!(a.manifest.sessions[1].profile.start_epoch_ms - a.manifest.sessions[0].profile.start_epoch_ms, DAY_MS);
    }

    #[test]
    fn invalid_profiles_rejected() {
        let mut p = SimProfile::flat(1);
        p.session_duration_s = 0.0;
        assert!(matches!(generate_session(&p), Err(ProfileError::Duration(_))));
        let mut p = SimProfile::flat(1);
        p.channels.heart_rate.drift_tau_s = 0.0;
        assert!(generate_session(&p).is_err());
        let spec = CohortSpec::flat(0, SimProfile::flat(1), 1);
        assert!(matches!(generate_cohort(&spec), Err(ProfileError::NoSessions)));
    }
}
