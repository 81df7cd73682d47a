//! Carbon-monoxide monitoring pipeline.
//!
//! A simulated GPS-equipped sensor fleet emits checksummed ASCII frames;
//! ingest decodes them, classifies each concentration into a hazard band,
//! matches it to the nearest monitoring site and appends it to a JSONL store;
//! reports aggregate the store per site and time of day.

pub mod domain;
pub mod fixtures;
pub mod geo;
pub mod ingest;
pub mod protocol;
pub mod report;
pub mod simulator;

pub use domain::{
    assess, band_description, classify, max_safe_exposure, severity, Assessment, HazardBand, InvalidInput, Reading,
};
pub use geo::{
    export_geojson, haversine, load_site_registry, nearest_site, GeoError, LatLng, Site,
    SiteRegistry,
};
pub use ingest::{
    append_reading, ingest_stream, load_store, EnrichedReading, IngestError, IngestSession,
    IngestStats, LoadedStore, Store, StoreError,
};
pub use protocol::{checksum, decode_frame, encode_frame, DecodeError, DecodeErrorKind};
pub use report::{
    bucket_of, campaign_report, cross_site_summary, recommend_sites, Bucket, CampaignReport,
    CrossSiteSummary, RenderedReport,
};
pub use simulator::{
    default_profiles, emit_frames, generate_campaign, CampaignConfig, SimError, SiteProfile,
};
