//! Monitoring sites, great-circle distance, reading-to-site matching and
//! GeoJSON export.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{HazardBand, InvalidInput};
use crate::report::{Bucket, CampaignReport};

/// Mean earth radius used for all distance computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const DEFAULT_MATCH_RADIUS_M: f64 = 150.0;

/// Bundled registry with the five campaign sites.
pub const DEFAULT_SITES_CSV: &str = include_str!("../data/sites.csv");

const SITES_HEADER: [&str; 4] = ["site_id", "name", "lat", "lng"];

#[derive(Debug, Error)]
pub enum GeoError {
    #[error(transparent)]
    InvalidInput(#[from] InvalidInput),
    #[error("cannot read sites file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sites file: expected header `site_id,name,lat,lng`, found `{0}`")]
    BadHeader(String),
    #[error("sites file line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("sites file line {line}: duplicate site_id {site_id:?}")]
    DuplicateSiteId { line: u64, site_id: String },
    #[error("site registry is empty")]
    EmptyRegistry,
    #[error("match radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("report references site {0:?} which is not in the registry")]
    UnknownSite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLng {
    pub lat: f64,
    pub lng: f64,
}

impl LatLng {
    pub fn new(lat: f64, lng: f64) -> Result<Self, InvalidInput> {
        let p = Self { lat, lng };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), InvalidInput> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(InvalidInput::Latitude(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lng) {
            return Err(InvalidInput::Longitude(self.lng));
        }
        Ok(())
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine(a: LatLng, b: LatLng) -> Result<f64, InvalidInput> {
    a.validate()?;
    b.validate()?;
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlng = (b.lng - a.lng).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlng / 2.0).sin().powi(2);
    // Rounding can push h a hair above 1 for antipodal points.
    Ok(2.0 * EARTH_RADIUS_M * h.min(1.0).sqrt().asin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub site_id: String,
    pub name: String,
    pub lat: f64,
    pub lng: f64,
}

impl Site {
    pub fn point(&self) -> LatLng {
        LatLng {
            lat: self.lat,
            lng: self.lng,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiteRegistry {
    sites: Vec<Site>,
    match_radius_m: f64,
}

impl SiteRegistry {
    pub fn new(sites: Vec<Site>) -> Result<Self, GeoError> {
        let mut seen = HashSet::new();
        for (i, site) in sites.iter().enumerate() {
            site.point().validate()?;
            if !seen.insert(site.site_id.as_str()) {
                return Err(GeoError::DuplicateSiteId {
                    line: i as u64 + 2,
                    site_id: site.site_id.clone(),
                });
            }
        }
        Ok(Self {
            sites,
            match_radius_m: DEFAULT_MATCH_RADIUS_M,
        })
    }

    pub fn with_match_radius(mut self, meters: f64) -> Result<Self, GeoError> {
        if !(meters.is_finite() && meters > 0.0) {
            return Err(GeoError::InvalidRadius(meters));
        }
        self.match_radius_m = meters;
        Ok(self)
    }

    /// The bundled five-site campaign registry.
    pub fn bundled() -> Self {
        Self::from_csv_reader(DEFAULT_SITES_CSV.as_bytes()).expect("bundled sites.csv is valid")
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, GeoError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(|e| GeoError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().map(str::trim).ne(SITES_HEADER) {
            return Err(GeoError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
        }

        let mut sites = Vec::new();
        let mut seen = HashSet::new();
        for row in rdr.deserialize::<Site>() {
            let site = row.map_err(|e| GeoError::MalformedRow {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = sites.len() as u64 + 2;
            if site.site_id.is_empty() {
                return Err(GeoError::MalformedRow {
                    line,
                    message: "empty site_id".into(),
                });
            }
            site.point().validate().map_err(|e| GeoError::MalformedRow {
                line,
                message: e.to_string(),
            })?;
            if !seen.insert(site.site_id.clone()) {
                return Err(GeoError::DuplicateSiteId {
                    line,
                    site_id: site.site_id,
                });
            }
            sites.push(site);
        }
        Self::new(sites)
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn match_radius_m(&self) -> f64 {
        self.match_radius_m
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn get(&self, site_id: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }

    pub fn position(&self, site_id: &str) -> Option<usize> {
        self.sites.iter().position(|s| s.site_id == site_id)
    }
}

/// Reads a header-bearing `site_id,name,lat,lng` CSV file.
pub fn load_site_registry(path: impl AsRef<Path>) -> Result<SiteRegistry, GeoError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| GeoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SiteRegistry::from_csv_reader(std::io::BufReader::new(file))
}

/// The closest site within the registry's match radius. Ties go to the
/// earlier registry entry.
pub fn nearest_site(p: LatLng, reg: &SiteRegistry) -> Result<Option<&Site>, GeoError> {
    p.validate()?;
    if reg.is_empty() {
        return Err(GeoError::EmptyRegistry);
    }
    let mut best: Option<(&Site, f64)> = None;
    for site in reg.sites() {
        let d = haversine(p, site.point())?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((site, d));
        }
    }
    Ok(best
        .filter(|&(_, d)| d <= reg.match_radius_m())
        .map(|(site, _)| site))
}

#[derive(Debug, Serialize)]
struct FeatureCollection {
    r#type: &'static str,
    features: Vec<Feature>,
}

#[derive(Debug, Serialize)]
struct Feature {
    r#type: &'static str,
    geometry: Point,
    properties: SiteProperties,
}

#[derive(Debug, Serialize)]
struct Point {
    r#type: &'static str,
    coordinates: [f64; 2],
}

#[derive(Debug, Serialize)]
struct SiteProperties {
    site_id: String,
    name: String,
    max_band: HazardBand,
    buckets: Vec<BucketProperties>,
}

#[derive(Debug, Serialize)]
struct BucketProperties {
    bucket: Bucket,
    mean_ppm: f64,
    count: usize,
    band: HazardBand,
    description: &'static str,
}

/// Renders the report as a GeoJSON FeatureCollection, one Point per reported
/// site, in registry order.
pub fn export_geojson(report: &CampaignReport, reg: &SiteRegistry) -> Result<String, GeoError> {
    if let Some(unknown) = report.site_ids().find(|id| reg.get(id).is_none()) {
        return Err(GeoError::UnknownSite(unknown.to_string()));
    }

    let features = reg
        .sites()
        .iter()
        .filter_map(|site| {
            let cells: Vec<_> = report.cells_for(&site.site_id).collect();
            let max_band = cells.iter().map(|c| c.band).max()?;
            Some(Feature {
                r#type: "Feature",
                geometry: Point {
                    r#type: "Point",
                    coordinates: [site.lng, site.lat],
                },
                properties: SiteProperties {
                    site_id: site.site_id.clone(),
                    name: site.name.clone(),
                    max_band,
                    buckets: cells
                        .into_iter()
                        .map(|c| BucketProperties {
                            bucket: c.bucket,
                            mean_ppm: c.mean_ppm,
                            count: c.count,
                            band: c.band,
                            description: c.band.description(),
                        })
                        .collect(),
                },
            })
        })
        .collect();

    let doc = FeatureCollection {
        r#type: "FeatureCollection",
        features,
    };
    Ok(serde_json::to_string_pretty(&doc).expect("GeoJSON document serializes"))
}
