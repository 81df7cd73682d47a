//! The five-site campaign results as published: fifteen (site, bucket) means
//! with their printed hazard descriptions.

use crate::report::{Bucket, CampaignReport};

pub struct PublishedCell {
    pub site_id: &'static str,
    pub bucket: Bucket,
    pub mean_ppm: f64,
    /// Description text exactly as printed next to the value.
    pub printed_description: &'static str,
}

const DANGER_30: &str =
    "Classified as dangerous if we are outside the room for more than 30 minutes";
const DANGER_30_HEART: &str = "Classified as dangerous if we are outside the room for more than 30 minutes, can interfere with the function of the heart";
const DANGER_30_HEADACHE: &str =
    "Classified as dangerous if we are outside the room for more than 30 minutes, can make headaches";
const LITTLE_45: &str = "A little dangerous if we are in the room for more than 45 minutes";
const VERY_15: &str =
    "Very dangerous if inhalation of more than 15 minutes, will make it difficult to breathe";
const SAFE: &str = "Classified as safe for human";

// Decimal commas in the source tables ("32,916") are decimal points.
pub const PUBLISHED_CELLS: [PublishedCell; 15] = [
    cell("SITE-UNSIKA", Bucket::Morning, 32.916, DANGER_30),
    cell("SITE-UNSIKA", Bucket::Noon, 36.0164, DANGER_30),
    cell("SITE-UNSIKA", Bucket::Afternoon, 46.7436, DANGER_30_HEART),
    cell("SITE-UBP", Bucket::Morning, 30.134, DANGER_30),
    cell("SITE-UBP", Bucket::Noon, 30.3468, DANGER_30),
    cell("SITE-UBP", Bucket::Afternoon, 41.23, DANGER_30_HEART),
    cell("SITE-SKYBRIDGE", Bucket::Morning, 26.9292, LITTLE_45),
    cell("SITE-SKYBRIDGE", Bucket::Noon, 31.6068, DANGER_30),
    cell("SITE-SKYBRIDGE", Bucket::Afternoon, 41.5176, DANGER_30_HEART),
    cell("SITE-BINTANGALAM", Bucket::Morning, 39.0796, DANGER_30),
    cell("SITE-BINTANGALAM", Bucket::Noon, 62.3468, DANGER_30_HEADACHE),
    cell("SITE-BINTANGALAM", Bucket::Afternoon, 89.79, VERY_15),
    cell("SITE-MCD", Bucket::Morning, 24.038, SAFE),
    cell("SITE-MCD", Bucket::Noon, 32.0756, DANGER_30),
    cell("SITE-MCD", Bucket::Afternoon, 28.7016, LITTLE_45),
];

const fn cell(
    site_id: &'static str,
    bucket: Bucket,
    mean_ppm: f64,
    printed_description: &'static str,
) -> PublishedCell {
    PublishedCell {
        site_id,
        bucket,
        mean_ppm,
        printed_description,
    }
}

/// The published table as a report with one sample per cell.
pub fn published_report() -> CampaignReport {
    CampaignReport::from_cells(
        PUBLISHED_CELLS
            .iter()
            .map(|c| (c.site_id.to_string(), c.bucket, c.mean_ppm, 1)),
    )
}
