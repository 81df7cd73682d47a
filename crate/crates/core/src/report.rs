//! Time-of-day aggregation of enriched readings into per-site tables, the
//! cross-site summary and the tree-planting recommendation list.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};

use crate::domain::{classify, HazardBand};
use crate::ingest::EnrichedReading;

const SECONDS_PER_DAY: i64 = 86_400;

/// Local time-of-day window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bucket {
    Morning,
    Noon,
    Afternoon,
    Other,
}

impl Bucket {
    /// The buckets that appear in reports.
    pub const REPORTED: [Bucket; 3] = [Bucket::Morning, Bucket::Noon, Bucket::Afternoon];

    /// `[start, end)` local hours, `None` for [`Bucket::Other`].
    pub fn hours(self) -> Option<(u32, u32)> {
        match self {
            Bucket::Morning => Some((6, 11)),
            Bucket::Noon => Some((11, 15)),
            Bucket::Afternoon => Some((15, 19)),
            Bucket::Other => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Morning => "Morning",
            Bucket::Noon => "Noon",
            Bucket::Afternoon => "Afternoon",
            Bucket::Other => "Other",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seconds since local midnight.
pub fn local_second_of_day(ts: i64, tz_offset_minutes: i32) -> i64 {
    (ts + i64::from(tz_offset_minutes) * 60).rem_euclid(SECONDS_PER_DAY)
}

pub fn bucket_of(ts: i64, tz_offset_minutes: i32) -> Bucket {
    let hour = (local_second_of_day(ts, tz_offset_minutes) / 3600) as u32;
    Bucket::REPORTED
        .into_iter()
        .find(|b| b.hours().is_some_and(|(lo, hi)| (lo..hi).contains(&hour)))
        .unwrap_or(Bucket::Other)
}

/// One (site, bucket) table cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub site_id: String,
    pub bucket: Bucket,
    pub mean_ppm: f64,
    pub count: usize,
    pub band: HazardBand,
}

impl Cell {
    pub fn description(&self) -> &'static str {
        self.band.description()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    /// Ordered by site_id, then bucket.
    pub cells: Vec<Cell>,
    pub first_ts: Option<i64>,
    pub last_ts: Option<i64>,
    /// Site-assigned readings outside every reported window.
    pub other_bucket_count: usize,
    /// Readings that matched no site.
    pub unassigned_count: usize,
}

impl CampaignReport {
    /// Builds a report directly from cell means, e.g. published tables.
    pub fn from_cells(cells: impl IntoIterator<Item = (String, Bucket, f64, usize)>) -> Self {
        let mut cells: Vec<Cell> = cells
            .into_iter()
            .map(|(site_id, bucket, mean_ppm, count)| Cell {
                band: classify(mean_ppm).expect("cell means are non-negative"),
                site_id,
                bucket,
                mean_ppm,
                count,
            })
            .collect();
        cells.sort_by(|a, b| (&a.site_id, a.bucket).cmp(&(&b.site_id, b.bucket)));
        Self {
            cells,
            ..Self::default()
        }
    }

    pub fn cell(&self, site_id: &str, bucket: Bucket) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.site_id == site_id && c.bucket == bucket)
    }

    pub fn cells_for<'a>(&'a self, site_id: &'a str) -> impl Iterator<Item = &'a Cell> + 'a {
        self.cells.iter().filter(move |c| c.site_id == site_id)
    }

    /// Distinct site ids in cell order.
    pub fn site_ids(&self) -> impl Iterator<Item = &str> {
        let mut last: Option<&str> = None;
        self.cells.iter().filter_map(move |c| {
            let id = c.site_id.as_str();
            (last.replace(id) != Some(id)).then_some(id)
        })
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Default)]
struct Accumulator {
    // Sum of quantized ppm in ten-thousandths, so equal inputs average exactly.
    units: i128,
    count: usize,
}

/// Arithmetic mean ppm per (site, bucket) over site-assigned readings.
/// `Other`-bucket and unassigned readings are counted but not tabulated.
pub fn campaign_report(records: &[EnrichedReading]) -> CampaignReport {
    let mut acc: BTreeMap<(&str, Bucket), Accumulator> = BTreeMap::new();
    let mut report = CampaignReport::default();
    for rec in records {
        let ts = rec.reading.ts();
        report.first_ts = Some(report.first_ts.map_or(ts, |t| t.min(ts)));
        report.last_ts = Some(report.last_ts.map_or(ts, |t| t.max(ts)));
        let Some(site_id) = rec.site_id.as_deref() else {
            report.unassigned_count += 1;
            continue;
        };
        if rec.bucket == Bucket::Other {
            report.other_bucket_count += 1;
            continue;
        }
        let cell = acc.entry((site_id, rec.bucket)).or_default();
        cell.units += (rec.reading.ppm() * 1e4).round() as i128;
        cell.count += 1;
    }
    report.cells = acc
        .into_iter()
        .map(|((site_id, bucket), a)| {
            let mean_ppm = a.units as f64 / (a.count as f64 * 1e4);
            Cell {
                site_id: site_id.to_string(),
                bucket,
                mean_ppm,
                count: a.count,
                band: classify(mean_ppm).expect("means of valid readings are non-negative"),
            }
        })
        .collect();
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub bucket: Bucket,
    /// Unweighted mean of the per-site means.
    pub mean_ppm: f64,
    pub sites: usize,
    pub band: HazardBand,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrossSiteSummary {
    pub rows: Vec<SummaryRow>,
}

impl CrossSiteSummary {
    pub fn get(&self, bucket: Bucket) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }
}

/// Per bucket, the unweighted mean of per-site means (not the pooled mean of
/// raw readings).
pub fn cross_site_summary(rep: &CampaignReport) -> CrossSiteSummary {
    let rows = Bucket::REPORTED
        .into_iter()
        .filter_map(|bucket| {
            let means: Vec<f64> = rep
                .cells
                .iter()
                .filter(|c| c.bucket == bucket)
                .map(|c| c.mean_ppm)
                .collect();
            if means.is_empty() {
                return None;
            }
            let mean_ppm = means.iter().sum::<f64>() / means.len() as f64;
            Some(SummaryRow {
                bucket,
                mean_ppm,
                sites: means.len(),
                band: classify(mean_ppm).expect("mean of non-negative means"),
            })
        })
        .collect();
    CrossSiteSummary { rows }
}

/// Sites with at least one cell at or above `min_band`, worst first by their
/// highest cell mean. Equal maxima fall back to site_id order.
pub fn recommend_sites(rep: &CampaignReport, min_band: HazardBand) -> Vec<String> {
    let mut flagged: Vec<(&str, f64)> = rep
        .site_ids()
        .filter(|id| rep.cells_for(id).any(|c| c.band >= min_band))
        .map(|id| {
            let max = rep.cells_for(id).map(|c| c.mean_ppm).fold(f64::MIN, f64::max);
            (id, max)
        })
        .collect();
    flagged.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    flagged.into_iter().map(|(id, _)| id.to_string()).collect()
}

/// Up to five fraction digits with trailing zeros trimmed.
pub fn format_ppm(ppm: f64) -> String {
    let s = format!("{ppm:.5}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn tz_label(tz_offset_minutes: i32) -> String {
    let sign = if tz_offset_minutes < 0 { '-' } else { '+' };
    let abs = tz_offset_minutes.unsigned_abs();
    format!("UTC{sign}{:02}:{:02}", abs / 60, abs % 60)
}

fn local_date(ts: i64, tz_offset_minutes: i32) -> String {
    let offset = FixedOffset::east_opt(tz_offset_minutes * 60).unwrap_or(FixedOffset::east_opt(0).unwrap());
    DateTime::from_timestamp(ts, 0)
        .map(|t| t.with_timezone(&offset).format("%Y-%m-%d").to_string())
        .unwrap_or_else(|| ts.to_string())
}

/// Everything the text and CSV renderers print.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderedReport {
    pub report: CampaignReport,
    pub summary: CrossSiteSummary,
    pub min_band: HazardBand,
    pub recommended: Vec<String>,
    pub tz_offset_minutes: i32,
}

impl RenderedReport {
    pub fn new(report: CampaignReport, min_band: HazardBand, tz_offset_minutes: i32) -> Self {
        let summary = cross_site_summary(&report);
        let recommended = recommend_sites(&report, min_band);
        Self {
            report,
            summary,
            min_band,
            recommended,
            tz_offset_minutes,
        }
    }

    fn span(&self) -> String {
        match (self.report.first_ts, self.report.last_ts) {
            (Some(a), Some(b)) => format!(
                "{} .. {} ({})",
                local_date(a, self.tz_offset_minutes),
                local_date(b, self.tz_offset_minutes),
                tz_label(self.tz_offset_minutes)
            ),
            _ => "no readings".into(),
        }
    }

    /// Aligned text table followed by the summary footer.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "CO campaign report: {}", self.span());
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<18} {:<10} {:>10} {:>6}  {:<17} {}",
            "site_id", "bucket", "mean_ppm", "count", "band", "description"
        );
        for c in &self.report.cells {
            let _ = writeln!(
                out,
                "{:<18} {:<10} {:>10} {:>6}  {:<17} {}",
                c.site_id,
                c.bucket.name(),
                format_ppm(c.mean_ppm),
                c.count,
                c.band.name(),
                c.description()
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Cross-site summary (mean of site means)");
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>6}  {:<17} {}",
            "bucket", "mean_ppm", "sites", "band", "description"
        );
        for r in &self.summary.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>6}  {:<17} {}",
                r.bucket.name(),
                format_ppm(r.mean_ppm),
                r.sites,
                r.band.name(),
                r.band.description()
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Excluded from tables: {} outside reporting windows, {} not matched to a site",
            self.report.other_bucket_count, self.report.unassigned_count
        );
        let _ = writeln!(
            out,
            "Tree planting recommended (band >= {}): {}",
            self.min_band,
            if self.recommended.is_empty() {
                "none".to_string()
            } else {
                self.recommended.join(", ")
            }
        );
        out
    }

    /// `site_id,bucket,mean_ppm,count,band,description` rows, then a blank
    /// line and the summary block `bucket,mean_ppm,sites,band,description`,
    /// then the recommendation block.
    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["site_id", "bucket", "mean_ppm", "count", "band", "description"])
                .expect("in-memory write");
            for c in &self.report.cells {
                w.write_record([
                    c.site_id.as_str(),
                    c.bucket.name(),
                    &format_ppm(c.mean_ppm),
                    &c.count.to_string(),
                    c.band.name(),
                    c.description(),
                ])
                .expect("in-memory write");
            }
            w.flush().expect("in-memory flush");
        }
        out.push(b'\n');
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["bucket", "mean_ppm", "sites", "band", "description"])
                .expect("in-memory write");
            for r in &self.summary.rows {
                w.write_record([
                    r.bucket.name(),
                    &format_ppm(r.mean_ppm),
                    &r.sites.to_string(),
                    r.band.name(),
                    r.band.description(),
                ])
                .expect("in-memory write");
            }
            w.flush().expect("in-memory flush");
        }
        out.push(b'\n');
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(["recommended_site_id", "min_band"]).expect("in-memory write");
            for id in &self.recommended {
                w.write_record([id.as_str(), self.min_band.name()])
                    .expect("in-memory write");
            }
            w.flush().expect("in-memory flush");
        }
        String::from_utf8(out).expect("CSV output is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Reading;
    use crate::fixtures::published_report;

    fn rec(site: Option<&str>, ts: i64, ppm: f64, bucket: Bucket) -> EnrichedReading {
        let reading = Reading::new("DEV01", ts, -6.329349, 107.296362, ppm).unwrap();
        EnrichedReading::from_parts(reading, site.map(str::to_string), bucket)
    }

    #[test]
    fn bucket_boundaries() {
        // 2020-03-01 00:00 local at UTC+7.
        let midnight = 1_582_995_600;
        let at = |h: i64, m: i64| midnight + h * 3600 + m * 60;
        assert_eq!(bucket_of(at(7, 30), 420), Bucket::Morning);
        assert_eq!(bucket_of(at(14, 59), 420), Bucket::Noon);
        assert_eq!(bucket_of(at(15, 0), 420), Bucket::Afternoon);
        assert_eq!(bucket_of(at(2, 0), 420), Bucket::Other);
        assert_eq!(bucket_of(at(6, 0), 420), Bucket::Morning);
        assert_eq!(bucket_of(at(5, 59) + 59, 420), Bucket::Other);
        assert_eq!(bucket_of(at(11, 0), 420), Bucket::Noon);
        assert_eq!(bucket_of(at(19, 0), 420), Bucket::Other);
        assert_eq!(bucket_of(at(18, 59), 420), Bucket::Afternoon);
    }

    #[test]
    fn bucket_with_negative_offset() {
        // 12:00 UTC is 07:00 at UTC-5.
        assert_eq!(bucket_of(12 * 3600, -300), Bucket::Morning);
        assert_eq!(bucket_of(0, -300), Bucket::Other);
    }

    #[test]
    fn singleton_mean() {
        let rep = campaign_report(&[rec(Some("SITE-MCD"), 0, 24.038, Bucket::Morning)]);
        let cell = rep.cell("SITE-MCD", Bucket::Morning).unwrap();
        assert_eq!(cell.mean_ppm, 24.038);
        assert_eq!(cell.count, 1);
        assert_eq!(cell.band, HazardBand::Safe);
    }

    #[test]
    fn excluded_records_are_counted() {
        let rep = campaign_report(&[
            rec(None, 0, 10.0, Bucket::Morning),
            rec(Some("A"), 5, 10.0, Bucket::Other),
            rec(Some("A"), 9, 12.0, Bucket::Noon),
        ]);
        assert_eq!(rep.unassigned_count, 1);
        assert_eq!(rep.other_bucket_count, 1);
        assert_eq!(rep.cells.len(), 1);
        assert_eq!((rep.first_ts, rep.last_ts), (Some(0), Some(9)));
    }

    #[test]
    fn empty_input() {
        let rep = campaign_report(&[]);
        assert!(rep.is_empty());
        assert!(cross_site_summary(&rep).rows.is_empty());
        assert!(recommend_sites(&rep, HazardBand::Safe).is_empty());
    }

    #[test]
    fn published_fixture_summary() {
        let s = cross_site_summary(&published_report());
        let get = |b| s.get(b).unwrap();
        assert!((get(Bucket::Afternoon).mean_ppm - 49.59656).abs() < 1e-9);
        assert!((get(Bucket::Morning).mean_ppm - 30.61936).abs() < 1e-9);
        assert!((get(Bucket::Noon).mean_ppm - 38.47848).abs() < 1e-9);
        assert_eq!(get(Bucket::Afternoon).sites, 5);
        assert_eq!(get(Bucket::Afternoon).band, HazardBand::Danger30Heart);
    }

    #[test]
    fn published_fixture_recommendations() {
        let rep = published_report();
        assert_eq!(
            recommend_sites(&rep, HazardBand::Danger30Heart),
            ["SITE-BINTANGALAM", "SITE-UNSIKA", "SITE-SKYBRIDGE", "SITE-UBP"]
        );
        assert_eq!(recommend_sites(&rep, HazardBand::VeryDanger15), ["SITE-BINTANGALAM"]);
        assert_eq!(recommend_sites(&rep, HazardBand::Safe).len(), 5);
    }

    #[test]
    fn format_ppm_trims() {
        assert_eq!(format_ppm(49.59656), "49.59656");
        assert_eq!(format_ppm(41.23), "41.23");
        assert_eq!(format_ppm(46.7436), "46.7436");
        assert_eq!(format_ppm(80.0), "80");
        assert_eq!(format_ppm(0.0), "0");
        assert_eq!(format_ppm(30.619360000001), "30.61936");
    }

    #[test]
    fn tz_labels() {
        assert_eq!(tz_label(420), "UTC+07:00");
        assert_eq!(tz_label(-330), "UTC-05:30");
    }

    #[test]
    fn renderings_contain_summary() {
        let r = RenderedReport::new(published_report(), HazardBand::Danger30Heart, 420);
        let table = r.to_table();
        assert!(table.contains("49.59656"));
        assert!(table.contains("SITE-BINTANGALAM, SITE-UNSIKA, SITE-SKYBRIDGE, SITE-UBP"));
        let csv = r.to_csv();
        assert!(csv.starts_with("site_id,bucket,mean_ppm,count,band,description\n"));
        assert!(csv.contains(
            "SITE-UNSIKA,Afternoon,46.7436,1,Danger30Heart,\"Classified as dangerous if we are outside the room for more than 30 minutes, can interfere with the function of the heart\"\n"
        ));
        assert!(csv.contains("\nbucket,mean_ppm,sites,band,description\n"));
        assert!(csv.contains("Afternoon,49.59656,5,Danger30Heart,"));
    }
}
