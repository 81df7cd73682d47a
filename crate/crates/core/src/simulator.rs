//! Deterministic virtual sensor fleet.
//!
//! Every site carries one device that reports `readings_per_bucket` times in
//! each Morning/Noon/Afternoon window of every campaign day. Concentrations
//! are drawn from a normal distribution around the bucket mean, clamped to
//! `[0, MAX_PPM]` and quantized to four fraction digits. Noise comes from a
//! ChaCha8 generator seeded with [`CampaignConfig::seed`], drawn in
//! day → profile → bucket → sample order.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::domain::{is_valid_device_id, InvalidInput, Reading, MAX_PPM};
use crate::geo::LatLng;
use crate::protocol::encode_frame;
use crate::report::Bucket;

pub const DEFAULT_DAYS: u32 = 5;
pub const DEFAULT_READINGS_PER_BUCKET: u32 = 6;
pub const DEFAULT_TZ_OFFSET_MINUTES: i32 = 420;
pub const DEFAULT_RELATIVE_SIGMA: f64 = 0.10;

/// Bundled profiles for the five campaign sites.
pub const DEFAULT_PROFILES_CSV: &str = include_str!("../data/profiles.csv");

const PROFILES_HEADER: [&str; 9] = [
    "site_id",
    "device_id",
    "lat",
    "lng",
    "morning",
    "noon",
    "afternoon",
    "sigma",
    "per_bucket",
];

pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date")
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("campaign needs at least one day")]
    NoDays,
    #[error("campaign needs at least one site profile")]
    NoProfiles,
    #[error("profile {site_id}: {message}")]
    InvalidProfile { site_id: String, message: String },
    #[error("timezone offset {0} minutes is outside -720..=840")]
    InvalidTzOffset(i32),
    #[error("cannot read profiles file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("profiles file: expected header `site_id,device_id,lat,lng,morning,noon,afternoon,sigma,per_bucket`, found `{0}`")]
    BadHeader(String),
    #[error("profiles file line {line}: {message}")]
    MalformedRow { line: u64, message: String },
}

/// Standard deviation of the concentration noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Fraction of each bucket's mean.
    Relative(f64),
    /// Fixed ppm for every bucket.
    Absolute(f64),
}

impl Noise {
    pub fn sigma_for(self, mean: f64) -> f64 {
        match self {
            Noise::Relative(f) => f * mean,
            Noise::Absolute(s) => s,
        }
    }
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Relative(DEFAULT_RELATIVE_SIGMA)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteProfile {
    pub site_id: String,
    pub device_id: String,
    pub lat: f64,
    pub lng: f64,
    /// Morning, Noon, Afternoon.
    pub bucket_means: [f64; 3],
    pub noise: Noise,
    pub readings_per_bucket: u32,
}

impl SiteProfile {
    pub fn mean_for(&self, bucket: Bucket) -> Option<f64> {
        Bucket::REPORTED
            .iter()
            .position(|b| *b == bucket)
            .map(|i| self.bucket_means[i])
    }

    fn validate(&self) -> Result<(), SimError> {
        let invalid = |message: String| SimError::InvalidProfile {
            site_id: self.site_id.clone(),
            message,
        };
        if self.site_id.is_empty() {
            return Err(invalid("empty site_id".into()));
        }
        if !is_valid_device_id(&self.device_id) {
            return Err(invalid(InvalidInput::DeviceId(self.device_id.clone()).to_string()));
        }
        LatLng::new(self.lat, self.lng).map_err(|e| invalid(e.to_string()))?;
        for mean in self.bucket_means {
            if !(mean.is_finite() && (0.0..=MAX_PPM).contains(&mean)) {
                return Err(invalid(format!("bucket mean {mean} outside [0, {MAX_PPM}]")));
            }
        }
        let sigma_ok = match self.noise {
            Noise::Relative(f) => f.is_finite() && f >= 0.0,
            Noise::Absolute(s) => s.is_finite() && s >= 0.0,
        };
        if !sigma_ok {
            return Err(invalid(format!("noise {:?} must be finite and non-negative", self.noise)));
        }
        if self.readings_per_bucket == 0 {
            return Err(invalid("readings_per_bucket must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub profiles: Vec<SiteProfile>,
    pub days: u32,
    pub seed: u64,
    pub tz_offset_minutes: i32,
    pub start_date: NaiveDate,
}

impl CampaignConfig {
    pub fn new(profiles: Vec<SiteProfile>) -> Self {
        Self {
            profiles,
            days: DEFAULT_DAYS,
            seed: 0,
            tz_offset_minutes: DEFAULT_TZ_OFFSET_MINUTES,
            start_date: default_start_date(),
        }
    }

    /// Overrides the noise of every profile with a fixed sigma.
    pub fn with_sigma(mut self, sigma: f64) -> Self {
        for p in &mut self.profiles {
            p.noise = Noise::Absolute(sigma);
        }
        self
    }

    pub fn with_readings_per_bucket(mut self, n: u32) -> Self {
        for p in &mut self.profiles {
            p.readings_per_bucket = n;
        }
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.days == 0 {
            return Err(SimError::NoDays);
        }
        if self.profiles.is_empty() {
            return Err(SimError::NoProfiles);
        }
        if !(-720..=840).contains(&self.tz_offset_minutes) {
            return Err(SimError::InvalidTzOffset(self.tz_offset_minutes));
        }
        self.profiles.iter().try_for_each(SiteProfile::validate)
    }

    /// Unix time of local midnight on campaign day `day`.
    pub fn day_start(&self, day: u32) -> i64 {
        let utc_midnight = self
            .start_date
            .and_hms_opt(0, 0, 0)
            .expect("midnight exists")
            .and_utc()
            .timestamp();
        utc_midnight - i64::from(self.tz_offset_minutes) * 60 + i64::from(day) * 86_400
    }
}

/// The five campaign sites with their published bucket means, devices
/// DEV01..DEV05.
pub fn default_profiles() -> Vec<SiteProfile> {
    profiles_from_csv_reader(DEFAULT_PROFILES_CSV.as_bytes()).expect("bundled profiles.csv is valid")
}

#[derive(Deserialize)]
struct ProfileRow {
    site_id: String,
    device_id: String,
    lat: f64,
    lng: f64,
    morning: f64,
    noon: f64,
    afternoon: f64,
    sigma: Option<f64>,
    per_bucket: Option<u32>,
}

/// Parses `site_id,device_id,lat,lng,morning,noon,afternoon,sigma,per_bucket`.
/// An empty `sigma` means 10% of each bucket mean; an empty `per_bucket`
/// means the default of 6.
pub fn profiles_from_csv_reader<R: Read>(reader: R) -> Result<Vec<SiteProfile>, SimError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| SimError::MalformedRow {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().map(str::trim).ne(PROFILES_HEADER) {
        return Err(SimError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut profiles = Vec::new();
    for row in rdr.deserialize::<ProfileRow>() {
        let row = row.map_err(|e| SimError::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let profile = SiteProfile {
            site_id: row.site_id,
            device_id: row.device_id,
            lat: row.lat,
            lng: row.lng,
            bucket_means: [row.morning, row.noon, row.afternoon],
            noise: row.sigma.map_or_else(Noise::default, Noise::Absolute),
            readings_per_bucket: row.per_bucket.unwrap_or(DEFAULT_READINGS_PER_BUCKET),
        };
        profile.validate().map_err(|e| SimError::MalformedRow {
            line: profiles.len() as u64 + 2,
            message: e.to_string(),
        })?;
        profiles.push(profile);
    }
    Ok(profiles)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<SiteProfile>, SimError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    profiles_from_csv_reader(std::io::BufReader::new(file))
}

/// `n` timestamps evenly spaced inside `[start, start + len)`, one at the
/// middle of each of `n` equal slices.
fn slice_midpoints(start: i64, len: i64, n: u32) -> impl Iterator<Item = i64> {
    let n = i64::from(n);
    (0..n).map(move |k| start + (2 * k + 1) * len / (2 * n))
}

/// Generates the full campaign, ordered by timestamp then site_id.
pub fn generate_campaign(cfg: &CampaignConfig) -> Result<Vec<Reading>, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<(i64, usize, Reading)> = Vec::new();

    for day in 0..cfg.days {
        let midnight = cfg.day_start(day);
        for (idx, profile) in cfg.profiles.iter().enumerate() {
            for (bucket, mean) in Bucket::REPORTED.into_iter().zip(profile.bucket_means) {
                let (lo, hi) = bucket.hours().expect("reported buckets have hours");
                let start = midnight + i64::from(lo) * 3600;
                let len = i64::from(hi - lo) * 3600;
                let sigma = profile.noise.sigma_for(mean);
                let normal = (sigma > 0.0).then(|| Normal::new(mean, sigma).expect("sigma is finite and positive"));
                for ts in slice_midpoints(start, len, profile.readings_per_bucket) {
                    let ppm = match &normal {
                        Some(n) => n.sample(&mut rng).clamp(0.0, MAX_PPM),
                        None => mean,
                    };
                    let reading = Reading::new(profile.device_id.clone(), ts, profile.lat, profile.lng, ppm)
                        .map_err(|e| SimError::InvalidProfile {
                            site_id: profile.site_id.clone(),
                            message: e.to_string(),
                        })?;
                    out.push((ts, idx, reading));
                }
            }
        }
    }

    out.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then_with(|| cfg.profiles[a.1].site_id.cmp(&cfg.profiles[b.1].site_id))
    });
    Ok(out.into_iter().map(|(_, _, r)| r).collect())
}

#[derive(Debug, Error)]
#[error("frame sink failed after {written} frames: {source}")]
pub struct EmitError {
    pub written: usize,
    #[source]
    pub source: std::io::Error,
}

/// Writes one canonical frame per reading and returns how many were written.
pub fn emit_frames<'a, W: Write>(
    readings: impl IntoIterator<Item = &'a Reading>,
    sink: &mut W,
) -> Result<usize, EmitError> {
    let mut written = 0;
    for r in readings {
        sink.write_all(encode_frame(r).as_bytes())
            .map_err(|source| EmitError { written, source })?;
        written += 1;
    }
    sink.flush().map_err(|source| EmitError { written, source })?;
    Ok(written)
}
