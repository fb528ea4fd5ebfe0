//! Imbalance price series: CSV ingestion, validation, day-of-month splits,
//! quartile thresholds for the rule-based controller and a synthetic
//! generator.
//!
//! A series holds one record per minute. Each record carries the minute's
//! indicative price and the settled price of the quarter hour the minute
//! belongs to, so every group of 15 consecutive records shares one settled
//! price. Only complete days (1440 records) are kept.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, TimeDelta, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MINUTES_PER_DAY: usize = 1440;
pub const MINUTES_PER_QH: usize = 15;
pub const QH_PER_DAY: usize = 96;

pub const CSV_HEADER: [&str; 3] = [
    "timestamp_utc",
    "indicative_price_eur_mwh",
    "settled_price_eur_mwh",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceRecord {
    pub timestamp: DateTime<Utc>,
    /// Real-time indicative imbalance price, EUR/MWh.
    pub indicative_price: f64,
    /// Final imbalance price of the enclosing quarter hour, EUR/MWh.
    pub settled_price: f64,
}

impl PriceRecord {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }

    pub fn minute_of_day(&self) -> usize {
        (self.timestamp.hour() * 60 + self.timestamp.minute()) as usize
    }
}

/// Minute-resolution price series made of complete days.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriceSeries {
    records: Vec<PriceRecord>,
    day_index: BTreeMap<NaiveDate, Range<usize>>,
}

impl PriceSeries {
    /// Builds a series from records that already form complete, ordered days.
    pub fn from_complete_days(records: Vec<PriceRecord>) -> Result<Self> {
        if records.len() % MINUTES_PER_DAY != 0 {
            return Err(Error::invalid(format!(
                "{} records do not form whole days",
                records.len()
            )));
        }
        let mut day_index = BTreeMap::new();
        for (chunk_no, chunk) in records.chunks(MINUTES_PER_DAY).enumerate() {
            let date = chunk[0].date();
            for (minute, rec) in chunk.iter().enumerate() {
                if rec.date() != date || rec.minute_of_day() != minute {
                    return Err(Error::invalid(format!(
                        "record {} is not minute {minute} of {date}",
                        chunk_no * MINUTES_PER_DAY + minute
                    )));
                }
            }
            let start = chunk_no * MINUTES_PER_DAY;
            if day_index.insert(date, start..start + MINUTES_PER_DAY).is_some() {
                return Err(Error::invalid(format!("day {date} appears twice")));
            }
        }
        if let Some(w) = day_index.keys().collect::<Vec<_>>().windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("days out of order at {}", w[1])));
        }
        Ok(PriceSeries { records, day_index })
    }

    pub fn records(&self) -> &[PriceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn day_count(&self) -> usize {
        self.day_index.len()
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.day_index.keys().copied()
    }

    pub fn day_range(&self, day: NaiveDate) -> Option<Range<usize>> {
        self.day_index.get(&day).cloned()
    }

    pub fn day(&self, day: NaiveDate) -> Result<&[PriceRecord]> {
        self.day_index
            .get(&day)
            .map(|r| &self.records[r.clone()])
            .ok_or(Error::UnknownDay(day))
    }

    /// New series holding only the days accepted by `keep`.
    pub fn filter_days(&self, mut keep: impl FnMut(NaiveDate) -> bool) -> PriceSeries {
        let mut records = Vec::new();
        let mut day_index = BTreeMap::new();
        for (day, range) in &self.day_index {
            if keep(*day) {
                let start = records.len();
                records.extend_from_slice(&self.records[range.clone()]);
                day_index.insert(*day, start..records.len());
            }
        }
        PriceSeries { records, day_index }
    }

    /// One settled price per quarter hour, in time order.
    pub fn settled_quarter_hours(&self) -> Vec<f64> {
        self.records
            .iter()
            .step_by(MINUTES_PER_QH)
            .map(|r| r.settled_price)
            .collect()
    }

    pub fn indicative_prices(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.indicative_price)
    }
}

/// Result of reading a price file.
#[derive(Debug, Clone)]
pub struct LoadedSeries {
    pub series: PriceSeries,
    /// Days present in the file but dropped because they were incomplete.
    pub dropped_days: usize,
}

pub fn load_price_csv(path: impl AsRef<Path>) -> Result<LoadedSeries> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_price_csv(file)
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(ts) = DateTime::parse_from_rfc3339(raw) {
        return Some(ts.with_timezone(&Utc));
    }
    // RFC 3339 requires seconds; minute-only stamps such as 2023-01-01T00:00Z are common.
    let body = raw.strip_suffix('Z').or_else(|| raw.strip_suffix("+00:00"))?;
    NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M")
        .ok()
        .map(|n| n.and_utc())
}

fn parse_price(raw: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("{column}: cannot parse {raw:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{column}: non-finite value {raw:?}"),
        });
    }
    Ok(v)
}

/// Reads and validates a price CSV. Line numbers in errors count the header as line 1.
pub fn read_price_csv(reader: impl Read) -> Result<LoadedSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut rows: Vec<PriceRecord> = Vec::new();
    // (date, quarter hour) -> settled price seen first
    let mut qh_price: Option<((NaiveDate, usize), f64)> = None;
    let mut record = csv::StringRecord::new();
    let mut line = 1u64;
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(line + 1);
                return Err(Error::Parse { line, message: e.to_string() });
            }
        }
        line = record.position().map(|p| p.line()).unwrap_or(line + 1);
        if record.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let timestamp = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            line,
            message: format!("bad timestamp {:?}", &record[0]),
        })?;
        if timestamp.second() != 0 || timestamp.nanosecond() != 0 {
            return Err(Error::Parse {
                line,
                message: format!("timestamp {:?} is not on a minute boundary", &record[0]),
            });
        }
        let indicative_price = parse_price(&record[1], line, CSV_HEADER[1])?;
        let settled_price = parse_price(&record[2], line, CSV_HEADER[2])?;

        if let Some(prev) = rows.last() {
            if timestamp <= prev.timestamp {
                return Err(Error::Ordering { line, timestamp: record[0].to_string() });
            }
        }
        let rec = PriceRecord { timestamp, indicative_price, settled_price };
        let key = (rec.date(), rec.minute_of_day() / MINUTES_PER_QH);
        match qh_price {
            Some((k, expected)) if k == key => {
                if expected != settled_price {
                    return Err(Error::Consistency { line, expected, found: settled_price });
                }
            }
            _ => qh_price = Some((key, settled_price)),
        }
        rows.push(rec);
    }

    let mut complete = Vec::with_capacity(rows.len());
    let mut dropped_days = 0;
    let mut start = 0;
    while start < rows.len() {
        let date = rows[start].date();
        let end = rows[start..]
            .iter()
            .position(|r| r.date() != date)
            .map_or(rows.len(), |off| start + off);
        // Timestamps are strictly increasing, so 1440 rows of one date cover every minute.
        if end - start == MINUTES_PER_DAY {
            complete.extend_from_slice(&rows[start..end]);
        } else {
            dropped_days += 1;
        }
        start = end;
    }
    if dropped_days > 0 {
        log::warn!("dropped {dropped_days} incomplete day(s)");
    }
    Ok(LoadedSeries {
        series: PriceSeries::from_complete_days(complete)?,
        dropped_days,
    })
}

pub fn write_price_csv(series: &PriceSeries, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in series.records() {
        w.write_record([
            r.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            r.indicative_price.to_string(),
            r.settled_price.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Which part of the data a calendar day belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl SplitPart {
    /// Days 1-20 train, 21-25 validation, the rest test.
    pub fn of(day: NaiveDate) -> SplitPart {
        match day.day() {
            1..=20 => SplitPart::Train,
            21..=25 => SplitPart::Validation,
            _ => SplitPart::Test,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: PriceSeries,
    pub validation: PriceSeries,
    pub test: PriceSeries,
}

pub fn split_dataset(series: &PriceSeries) -> DatasetSplit {
    DatasetSplit {
        train: series.filter_days(|d| SplitPart::of(d) == SplitPart::Train),
        validation: series.filter_days(|d| SplitPart::of(d) == SplitPart::Validation),
        test: series.filter_days(|d| SplitPart::of(d) == SplitPart::Test),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbcThresholds {
    pub lower: f64,
    pub upper: f64,
}

impl RbcThresholds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::invalid(format!("threshold lower {lower} > upper {upper}")));
        }
        Ok(RbcThresholds { lower, upper })
    }
}

/// Quantile by linear interpolation between order statistics at position `(n-1)q`.
pub fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// First and third quartiles of a sample.
pub fn quartiles_of(samples: &[f64]) -> Result<RbcThresholds> {
    if samples.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "quartiles need at least 4 samples, got {}",
            samples.len()
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    RbcThresholds::new(quantile_linear(&sorted, 0.25), quantile_linear(&sorted, 0.75))
}

/// RBC thresholds from the per-quarter-hour settled prices of a series.
pub fn quartile_thresholds(series: &PriceSeries) -> Result<RbcThresholds> {
    quartiles_of(&series.settled_quarter_hours())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: i64,
    pub start_date: NaiveDate,
    /// Long-run price level, EUR/MWh.
    pub level: f64,
    /// Amplitude of the twice-daily swing added to the level, EUR/MWh.
    pub daily_amplitude: f64,
    /// Fraction of the deviation from the level removed each minute.
    pub reversion_rate: f64,
    /// Standard deviation of the per-minute innovation, EUR/MWh.
    pub noise_scale: f64,
    /// Probability that a quarter hour carries a price spike.
    pub spike_probability: f64,
    pub spike_min: f64,
    pub spike_max: f64,
    /// Share of spikes that push the price down.
    pub negative_spike_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 30,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(),
            level: 90.0,
            daily_amplitude: 40.0,
            reversion_rate: 0.05,
            noise_scale: 6.0,
            spike_probability: 0.01,
            spike_min: 250.0,
            spike_max: 1100.0,
            negative_spike_share: 0.5,
        }
    }
}

impl SynthConfig {
    /// Mean-reversion target at a minute of the day.
    pub fn reversion_level(&self, minute_of_day: usize) -> f64 {
        let phase = 4.0 * std::f64::consts::PI * minute_of_day as f64 / MINUTES_PER_DAY as f64;
        self.level - self.daily_amplitude * phase.cos()
    }

    fn validate(&self) -> Result<()> {
        if self.days <= 0 {
            return Err(Error::invalid(format!("day count must be positive, got {}", self.days)));
        }
        if !(0.0..=1.0).contains(&self.reversion_rate) {
            return Err(Error::invalid("reversion_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.spike_probability)
            || !(0.0..=1.0).contains(&self.negative_spike_share)
        {
            return Err(Error::invalid("spike probabilities must lie in [0, 1]"));
        }
        if self.noise_scale < 0.0 || !(0.0 <= self.spike_min && self.spike_min <= self.spike_max) {
            return Err(Error::invalid("noise scale and spike range must be non-negative and ordered"));
        }
        Ok(())
    }
}

/// Mean-reverting minute prices around a daily profile, with whole-quarter-hour
/// spikes of either sign. The settled price of a quarter hour is the mean of its
/// 15 indicative prices.
pub fn generate_synthetic_prices(config: &SynthConfig, seed: u64) -> Result<PriceSeries> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = config.days as usize;
    let mut records = Vec::with_capacity(days * MINUTES_PER_DAY);
    let mut deviation = 0.0f64;
    let start = config.start_date.and_hms_opt(0, 0, 0).unwrap().and_utc();

    for day in 0..days {
        for qh in 0..QH_PER_DAY {
            let spike = if rng.random::<f64>() < config.spike_probability {
                let magnitude = rng.random_range(config.spike_min..=config.spike_max);
                if rng.random::<f64>() < config.negative_spike_share {
                    -magnitude
                } else {
                    magnitude
                }
            } else {
                0.0
            };
            let mut minute_prices = [0.0; MINUTES_PER_QH];
            for (m, price) in minute_prices.iter_mut().enumerate() {
                let minute_of_day = qh * MINUTES_PER_QH + m;
                *price = config.reversion_level(minute_of_day) + deviation + spike;
                let shock: f64 = rng.sample(StandardNormal);
                deviation = (1.0 - config.reversion_rate) * deviation + config.noise_scale * shock;
            }
            let settled = minute_prices.iter().sum::<f64>() / MINUTES_PER_QH as f64;
            for (m, &indicative_price) in minute_prices.iter().enumerate() {
                let minutes = (day * MINUTES_PER_DAY + qh * MINUTES_PER_QH + m) as i64;
                records.push(PriceRecord {
                    timestamp: start + TimeDelta::minutes(minutes),
                    indicative_price,
                    settled_price: settled,
                });
            }
        }
    }
    PriceSeries::from_complete_days(records)
}
