//! Core reading type and CO hazard classification.
//!
//! Concentrations are classified into six ordered hazard bands whose lower
//! bounds are 0, 25, 30, 40, 50 and 80 ppm. Each band covers the half-open
//! interval `[lower, next_lower)`, so the bands partition `[0, ∞)`.
//!
//! ```
//! use cosentinel_core::domain::{classify, max_safe_exposure, HazardBand};
//!
//! assert_eq!(classify(89.79).unwrap(), HazardBand::VeryDanger15);
//! assert_eq!(max_safe_exposure(80.0).unwrap(), 15);
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest concentration a reading may carry. Anything above is treated as
/// corrupt telemetry.
pub const MAX_PPM: f64 = 10_000.0;

/// Fraction digits kept for latitude and longitude.
pub const COORD_DIGITS: u32 = 6;
/// Fraction digits kept for concentrations.
pub const PPM_DIGITS: u32 = 4;

const MAX_DEVICE_ID_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidInput {
    #[error("concentration must be finite and non-negative, got {0}")]
    Concentration(f64),
    #[error("concentration {0} exceeds the {MAX_PPM} ppm sanity bound")]
    ConcentrationTooHigh(f64),
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("timestamp {0} is negative")]
    Timestamp(i64),
    #[error("device id {0:?} must be 1-16 characters of A-Z, 0-9, '_' or '-'")]
    DeviceId(String),
}

/// Rounds `value` to `digits` fraction digits. Negative zero collapses to zero.
pub fn quantize(value: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    (value * scale).round() / scale + 0.0
}

pub fn is_valid_device_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= MAX_DEVICE_ID_LEN
        && id
            .bytes()
            .all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

/// One timestamped, geolocated CO measurement from one device.
///
/// Fields are private so that a `Reading` always holds quantized, in-range
/// values; build one with [`Reading::new`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reading {
    device_id: String,
    ts: i64,
    lat: f64,
    lng: f64,
    ppm: f64,
}

impl Reading {
    /// Validates and quantizes the fields. Range checks apply to the
    /// quantized values.
    pub fn new(
        device_id: impl Into<String>,
        ts: i64,
        lat: f64,
        lng: f64,
        ppm: f64,
    ) -> Result<Self, InvalidInput> {
        let device_id = device_id.into();
        if !is_valid_device_id(&device_id) {
            return Err(InvalidInput::DeviceId(device_id));
        }
        if ts < 0 {
            return Err(InvalidInput::Timestamp(ts));
        }
        let lat = quantize(lat, COORD_DIGITS);
        if !(-90.0..=90.0).contains(&lat) {
            return Err(InvalidInput::Latitude(lat));
        }
        let lng = quantize(lng, COORD_DIGITS);
        if !(-180.0..=180.0).contains(&lng) {
            return Err(InvalidInput::Longitude(lng));
        }
        if !ppm.is_finite() || ppm < 0.0 {
            return Err(InvalidInput::Concentration(ppm));
        }
        let ppm = quantize(ppm, PPM_DIGITS);
        if ppm > MAX_PPM {
            return Err(InvalidInput::ConcentrationTooHigh(ppm));
        }
        Ok(Self {
            device_id,
            ts,
            lat,
            lng,
            ppm,
        })
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn ts(&self) -> i64 {
        self.ts
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }

    pub fn ppm(&self) -> f64 {
        self.ppm
    }

    pub fn point(&self) -> crate::geo::LatLng {
        crate::geo::LatLng {
            lat: self.lat,
            lng: self.lng,
        }
    }
}

#[derive(Deserialize)]
struct RawReading {
    device_id: String,
    ts: i64,
    lat: f64,
    lng: f64,
    ppm: f64,
}

impl<'de> Deserialize<'de> for Reading {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawReading::deserialize(deserializer)?;
        Reading::new(raw.device_id, raw.ts, raw.lat, raw.lng, raw.ppm)
            .map_err(serde::de::Error::custom)
    }
}

/// Ordered hazard classification. Declaration order is severity order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HazardBand {
    Safe,
    LittleDanger45,
    Danger30,
    Danger30Heart,
    Danger30Headache,
    VeryDanger15,
}

impl HazardBand {
    pub const ALL: [HazardBand; 6] = [
        HazardBand::Safe,
        HazardBand::LittleDanger45,
        HazardBand::Danger30,
        HazardBand::Danger30Heart,
        HazardBand::Danger30Headache,
        HazardBand::VeryDanger15,
    ];

    /// Inclusive lower ppm bound of the band.
    pub fn lower_bound(self) -> f64 {
        match self {
            HazardBand::Safe => 0.0,
            HazardBand::LittleDanger45 => 25.0,
            HazardBand::Danger30 => 30.0,
            HazardBand::Danger30Heart => 40.0,
            HazardBand::Danger30Headache => 50.0,
            HazardBand::VeryDanger15 => 80.0,
        }
    }

    pub fn severity(self) -> u8 {
        self as u8
    }

    pub fn description(self) -> &'static str {
        match self {
            HazardBand::Safe => "Classified as safe for human",
            HazardBand::LittleDanger45 => {
                "A little dangerous if we are in the room for more than 45 minutes"
            }
            HazardBand::Danger30 => {
                "Classified as dangerous if we are outside the room for more than 30 minutes"
            }
            HazardBand::Danger30Heart => {
                "Classified as dangerous if we are outside the room for more than 30 minutes, \
                 can interfere with the function of the heart"
            }
            HazardBand::Danger30Headache => {
                "Classified as dangerous if we are outside the room for more than 30 minutes, \
                 can make headaches"
            }
            HazardBand::VeryDanger15 => {
                "Very dangerous if inhalation of more than 15 minutes, will make it difficult to breathe"
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HazardBand::Safe => "Safe",
            HazardBand::LittleDanger45 => "LittleDanger45",
            HazardBand::Danger30 => "Danger30",
            HazardBand::Danger30Heart => "Danger30Heart",
            HazardBand::Danger30Headache => "Danger30Headache",
            HazardBand::VeryDanger15 => "VeryDanger15",
        }
    }
}

impl fmt::Display for HazardBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown hazard band {0:?}")]
pub struct UnknownBand(pub String);

impl FromStr for HazardBand {
    type Err = UnknownBand;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HazardBand::ALL
            .into_iter()
            .find(|b| b.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownBand(s.to_string()))
    }
}

fn check_concentration(ppm: f64) -> Result<(), InvalidInput> {
    if ppm.is_finite() && ppm >= 0.0 {
        Ok(())
    } else {
        Err(InvalidInput::Concentration(ppm))
    }
}

/// Returns the band whose half-open interval contains `ppm`.
pub fn classify(ppm: f64) -> Result<HazardBand, InvalidInput> {
    check_concentration(ppm)?;
    Ok(HazardBand::ALL
        .into_iter()
        .rev()
        .find(|b| ppm >= b.lower_bound())
        .unwrap_or(HazardBand::Safe))
}

pub fn severity(band: HazardBand) -> u8 {
    band.severity()
}

pub fn band_description(band: HazardBand) -> &'static str {
    band.description()
}

/// WHO exposure tiers as `(ppm ceiling, max safe minutes)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureLimit {
    pub ceiling_ppm: f64,
    pub minutes: u32,
}

pub const EXPOSURE_LIMITS: [ExposureLimit; 4] = [
    ExposureLimit {
        ceiling_ppm: 8.0,
        minutes: 480,
    },
    ExposureLimit {
        ceiling_ppm: 24.0,
        minutes: 60,
    },
    ExposureLimit {
        ceiling_ppm: 48.0,
        minutes: 30,
    },
    ExposureLimit {
        ceiling_ppm: 80.0,
        minutes: 15,
    },
];

/// Maximum safe exposure in minutes: the minutes of the smallest tier
/// ceiling at or above `ppm`, or 0 above the last tier.
pub fn max_safe_exposure(ppm: f64) -> Result<u32, InvalidInput> {
    check_concentration(ppm)?;
    Ok(EXPOSURE_LIMITS
        .iter()
        .find(|limit| ppm <= limit.ceiling_ppm)
        .map_or(0, |limit| limit.minutes))
}

/// Everything known about one concentration: band, description and WHO
/// exposure limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub ppm: f64,
    pub band: HazardBand,
    pub severity: u8,
    pub description: String,
    pub max_safe_minutes: u32,
}

pub fn assess(ppm: f64) -> Result<Assessment, InvalidInput> {
    let band = classify(ppm)?;
    Ok(Assessment {
        ppm,
        band,
        severity: band.severity(),
        description: band.description().to_string(),
        max_safe_minutes: max_safe_exposure(ppm)?,
    })
}
