//! Directory layout of a generated dataset.
//!
//! ```text
//! synth.json          config + seed
//! feeders.csv         one row per feeder, base profile as p00..p95
//! weather.csv         15-min grid
//! events.csv
//! ground_truth.csv    noise-free planted components
//! ev_sessions.csv
//! traces/<id>.csv     sparse meter rows of one event
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{
    CityConfig, EvSession, EventTrace, FeederTemplate, OutageEvent, SyntheticDataset, TraceRow,
    WeatherSample, WeatherTrace, STEPS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::metrics::SurgeComponents;
use crate::numfmt::g9;

pub const TIME_FMT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn fmt_time(t: NaiveDateTime) -> String {
    t.format(TIME_FMT).to_string()
}

pub fn parse_time(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIME_FMT)
        .map_err(|e| Error::Format(format!("bad timestamp {s:?}: {e}")))
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    config: CityConfig,
}

/// Write CSV rows (already formatted) under a mandatory header.
pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

/// Parsed CSV table with a verified header.
pub struct Table {
    path: PathBuf,
    pub rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path, header: &[&str]) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let got = r.headers()?.clone();
        if got.len() != header.len() || got.iter().zip(header).any(|(a, b)| a != *b) {
            return Err(Error::Format(format!(
                "{}: expected header {:?}",
                path.display(),
                header.join(",")
            )));
        }
        let rows = r.records().collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            path: path.to_path_buf(),
            rows,
        })
    }

    pub fn get<T: FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let s = self.rows[row].get(col).unwrap_or("");
        s.parse().map_err(|_| {
            Error::Format(format!(
                "{}: row {} column {}: cannot parse {s:?}",
                self.path.display(),
                row + 2,
                col + 1
            ))
        })
    }

    pub fn time(&self, row: usize, col: usize) -> Result<NaiveDateTime> {
        parse_time(self.rows[row].get(col).unwrap_or(""))
    }
}

const FEEDER_COLS: [&str; 6] = [
    "feeder_id",
    "n_smart_meters",
    "n_ev_submeters",
    "n_hp_submeters",
    "der_capacity_kw",
    "daily_peak_kw",
];
const WEATHER_COLS: [&str; 4] = ["timestamp", "temp_c", "ghi", "precip_water_mm"];
const EVENT_COLS: [&str; 9] = [
    "event_id",
    "feeder_id",
    "start_time",
    "duration_h",
    "n_customers_affected",
    "restoration_time",
    "temp_c",
    "ghi",
    "precip_water_mm",
];
const TRUTH_COLS: [&str; 6] = ["event_id", "s_tot", "s_ev", "s_hp", "s_der", "s_oth"];
const SESSION_COLS: [&str; 4] = ["event_id", "charger", "power_kw", "session_min"];
const TRACE_COLS: [&str; 5] = ["timestamp", "total_kw", "ev_kw", "hp_kw", "der_kw"];

fn feeder_header() -> Vec<String> {
    FEEDER_COLS
        .iter()
        .map(|s| s.to_string())
        .chain((0..STEPS_PER_DAY).map(|i| format!("p{i:02}")))
        .collect()
}

pub fn write_dataset(data: &SyntheticDataset, dir: &Path) -> Result<()> {
    let traces_dir = dir.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;

    let header = Header {
        seed: data.seed,
        config: data.config.clone(),
    };
    let json = serde_json::to_string_pretty(&header)?;
    let p = dir.join("synth.json");
    fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;

    let fh = feeder_header();
    let fh: Vec<&str> = fh.iter().map(String::as_str).collect();
    write_rows(
        &dir.join("feeders.csv"),
        &fh,
        data.feeders.iter().map(|f| {
            let mut r = vec![
                f.feeder_id.to_string(),
                f.n_smart_meters.to_string(),
                f.n_ev_submeters.to_string(),
                f.n_hp_submeters.to_string(),
                g9(f.der_capacity_kw),
                g9(f.daily_peak_kw),
            ];
            r.extend(f.base_profile.iter().map(|v| g9(*v)));
            r
        }),
    )?;

    let w = &data.weather;
    write_rows(
        &dir.join("weather.csv"),
        &WEATHER_COLS,
        (0..w.len()).map(|s| {
            vec![
                fmt_time(w.timestamp(s)),
                g9(w.temp_c[s]),
                g9(w.ghi[s]),
                g9(w.precip_water_mm[s]),
            ]
        }),
    )?;

    write_rows(
        &dir.join("events.csv"),
        &EVENT_COLS,
        data.events.iter().map(|e| {
            vec![
                e.event_id.to_string(),
                e.feeder_id.to_string(),
                fmt_time(e.start_time),
                g9(e.duration_h),
                e.n_customers_affected.to_string(),
                fmt_time(e.restoration_time),
                g9(e.weather_at_restoration.temp_c),
                g9(e.weather_at_restoration.ghi),
                g9(e.weather_at_restoration.precip_water_mm),
            ]
        }),
    )?;

    write_rows(
        &dir.join("ground_truth.csv"),
        &TRUTH_COLS,
        data.events.iter().zip(&data.ground_truth).map(|(e, c)| {
            vec![
                e.event_id.to_string(),
                g9(c.s_tot),
                g9(c.s_ev),
                g9(c.s_hp),
                g9(c.s_der),
                g9(c.s_oth),
            ]
        }),
    )?;

    write_rows(
        &dir.join("ev_sessions.csv"),
        &SESSION_COLS,
        data.ev_sessions.iter().map(|s| {
            vec![
                s.event_id.to_string(),
                s.charger.to_string(),
                g9(s.power_kw),
                g9(s.session_min),
            ]
        }),
    )?;

    for t in &data.traces {
        write_rows(
            &traces_dir.join(format!("{}.csv", t.event_id)),
            &TRACE_COLS,
            t.rows.iter().map(|r| {
                vec![
                    fmt_time(r.time),
                    g9(r.total_kw),
                    g9(r.ev_kw),
                    g9(r.hp_kw),
                    g9(r.der_kw),
                ]
            }),
        )?;
    }
    Ok(())
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing dataset file"),
        ))
    }
}

pub fn read_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let p = require(dir.join("synth.json"))?;
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let header: Header = serde_json::from_str(&text)?;

    let fh = feeder_header();
    let fh: Vec<&str> = fh.iter().map(String::as_str).collect();
    let t = Table::read(&require(dir.join("feeders.csv"))?, &fh)?;
    let mut feeders = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        let f = FeederTemplate {
            feeder_id: t.get(i, 0)?,
            n_smart_meters: t.get(i, 1)?,
            n_ev_submeters: t.get(i, 2)?,
            n_hp_submeters: t.get(i, 3)?,
            der_capacity_kw: t.get(i, 4)?,
            daily_peak_kw: t.get(i, 5)?,
            base_profile: (0..STEPS_PER_DAY).map(|j| t.get(i, 6 + j)).collect::<Result<_>>()?,
        };
        f.validate()?;
        feeders.push(f);
    }

    let t = Table::read(&require(dir.join("weather.csv"))?, &WEATHER_COLS)?;
    if t.rows.is_empty() {
        return Err(Error::Format("weather.csv has no rows".into()));
    }
    let mut weather = WeatherTrace {
        start: t.time(0, 0)?,
        temp_c: Vec::with_capacity(t.rows.len()),
        ghi: Vec::with_capacity(t.rows.len()),
        precip_water_mm: Vec::with_capacity(t.rows.len()),
    };
    for i in 0..t.rows.len() {
        if t.time(i, 0)? != weather.timestamp(i) {
            return Err(Error::Format(format!("weather.csv row {} is off the 15-min grid", i + 2)));
        }
        weather.temp_c.push(t.get(i, 1)?);
        weather.ghi.push(t.get(i, 2)?);
        weather.precip_water_mm.push(t.get(i, 3)?);
    }

    let t = Table::read(&require(dir.join("events.csv"))?, &EVENT_COLS)?;
    let mut events = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        events.push(OutageEvent {
            event_id: t.get(i, 0)?,
            feeder_id: t.get(i, 1)?,
            start_time: t.time(i, 2)?,
            duration_h: t.get(i, 3)?,
            n_customers_affected: t.get(i, 4)?,
            restoration_time: t.time(i, 5)?,
            weather_at_restoration: WeatherSample {
                temp_c: t.get(i, 6)?,
                ghi: t.get(i, 7)?,
                precip_water_mm: t.get(i, 8)?,
            },
        });
    }

    let t = Table::read(&require(dir.join("ground_truth.csv"))?, &TRUTH_COLS)?;
    if t.rows.len() != events.len() {
        return Err(Error::Format("ground_truth.csv does not align with events.csv".into()));
    }
    let mut ground_truth = Vec::with_capacity(events.len());
    for (i, e) in events.iter().enumerate() {
        if t.get::<u64>(i, 0)? != e.event_id {
            return Err(Error::Format("ground_truth.csv does not align with events.csv".into()));
        }
        ground_truth.push(SurgeComponents {
            s_tot: t.get(i, 1)?,
            s_ev: t.get(i, 2)?,
            s_hp: t.get(i, 3)?,
            s_der: t.get(i, 4)?,
            s_oth: t.get(i, 5)?,
        });
    }

    let t = Table::read(&require(dir.join("ev_sessions.csv"))?, &SESSION_COLS)?;
    let mut ev_sessions = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        ev_sessions.push(EvSession {
            event_id: t.get(i, 0)?,
            charger: t.get(i, 1)?,
            power_kw: t.get(i, 2)?,
            session_min: t.get(i, 3)?,
        });
    }

    let traces = events
        .iter()
        .map(|e| read_trace(&dir.join("traces"), e.event_id))
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticDataset {
        config: header.config,
        seed: header.seed,
        feeders,
        weather,
        events,
        traces,
        ground_truth,
        ev_sessions,
    })
}

fn read_trace(dir: &Path, event_id: u64) -> Result<EventTrace> {
    let t = Table::read(&require(dir.join(format!("{event_id}.csv")))?, &TRACE_COLS)?;
    let mut rows = Vec::with_capacity(t.rows.len());
    for i in 0..t.rows.len() {
        rows.push(TraceRow::new(
            t.time(i, 0)?,
            [t.get(i, 1)?, t.get(i, 2)?, t.get(i, 3)?, t.get(i, 4)?],
        ));
    }
    if rows.windows(2).any(|w| w[0].time >= w[1].time) {
        return Err(Error::Format(format!("trace {event_id} is not sorted by time")));
    }
    Ok(EventTrace { event_id, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_city, GroundTruthParams};

    #[test]
    fn dataset_round_trips_through_disk() {
        let data = gen_city(3, 20, GroundTruthParams::default(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&data, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.events.len(), data.events.len());
        assert_eq!(back.config, data.config);
        for (a, b) in back.events.iter().zip(&data.events) {
            assert_eq!(a.restoration_time, b.restoration_time);
            assert!((a.weather_at_restoration.temp_c - b.weather_at_restoration.temp_c).abs() < 1e-6);
        }
        for (a, b) in back.traces.iter().zip(&data.traces) {
            assert_eq!(a.rows.len(), b.rows.len());
            for (x, y) in a.rows.iter().zip(&b.rows) {
                assert!((x.total_kw - y.total_kw).abs() <= 1e-8 * y.total_kw.abs().max(1.0));
            }
        }
        // Writing again yields identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(&back, dir2.path()).unwrap();
        for f in ["events.csv", "feeders.csv", "weather.csv", "ground_truth.csv", "traces/3.csv"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("synth.json"), "{err}");
    }
}
