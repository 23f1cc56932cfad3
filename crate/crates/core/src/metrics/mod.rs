//! Per-event surge ratios, penetration rates and the DER missing-power term.

pub mod quadrature;

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::g9;
use crate::synth::io::{fmt_time, write_rows, Table};
use crate::synth::{EventTrace, FeederTemplate, OutageEvent, SyntheticDataset, STEP_MIN};

pub use quadrature::{
    der_missing_power, missing_power, DelayDensity, DerDelayModel, DerMissing, GenerationProfile,
};

/// Incremental surge ratios of one event, relative to total baseline load.
///
/// `s_oth` is residual, so the components always add back to `s_tot`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SurgeComponents {
    pub s_tot: f64,
    pub s_ev: f64,
    pub s_hp: f64,
    pub s_der: f64,
    pub s_oth: f64,
}

impl SurgeComponents {
    /// Build from a measured total; the residual absorbs the rest.
    pub fn from_total(s_tot: f64, s_ev: f64, s_hp: f64, s_der: f64) -> Self {
        Self {
            s_tot,
            s_ev,
            s_hp,
            s_der,
            s_oth: s_tot - s_ev - s_hp - s_der,
        }
    }

    /// Build from the four parts; the total is their sum.
    pub fn from_parts(s_ev: f64, s_hp: f64, s_der: f64, s_oth: f64) -> Self {
        Self {
            s_tot: s_ev + s_hp + s_der + s_oth,
            s_ev,
            s_hp,
            s_der,
            s_oth,
        }
    }

    /// `[ev, hp, der, oth]`, the estimator head order.
    pub fn parts(&self) -> [f64; 4] {
        [self.s_ev, self.s_hp, self.s_der, self.s_oth]
    }

    pub fn is_finite(&self) -> bool {
        [self.s_tot, self.s_ev, self.s_hp, self.s_der, self.s_oth]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// EV/HP: share of smart meters with the asset. DER: capacity over daily peak.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenetrationRates {
    pub r_ev: f64,
    pub r_hp: f64,
    pub r_der: f64,
}

/// How the pre-outage reference load is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineRule {
    /// Mean of the same clock-time interval over the `days` days whose
    /// interval ends before the outage starts.
    SameClockTime { days: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurgeWindow {
    pub length_min: f64,
    pub baseline: BaselineRule,
}

impl Default for SurgeWindow {
    fn default() -> Self {
        Self {
            length_min: 15.0,
            baseline: BaselineRule::SameClockTime { days: 7 },
        }
    }
}

impl SurgeWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_min > 0.0) {
            return Err(Error::invalid("surge window length must be > 0"));
        }
        let BaselineRule::SameClockTime { days } = self.baseline;
        if days == 0 {
            return Err(Error::invalid("baseline needs at least one day"));
        }
        Ok(())
    }

    /// Number of 15-min rows the window spans.
    pub fn rows(&self) -> usize {
        (self.length_min / STEP_MIN as f64).ceil().max(1.0) as usize
    }

    /// Timestamps of the baseline intervals' first rows, oldest first.
    pub fn baseline_starts(&self, event: &OutageEvent) -> Vec<NaiveDateTime> {
        let BaselineRule::SameClockTime { days } = self.baseline;
        let win = Duration::minutes(STEP_MIN * self.rows() as i64);
        let mut k0 = 1i64;
        while event.restoration_time - Duration::days(k0) + win > event.start_time {
            k0 += 1;
        }
        (0..days as i64)
            .rev()
            .map(|j| event.restoration_time - Duration::days(k0 + j))
            .collect()
    }
}

/// Surge ratios of one event from its meter traces.
pub fn surge_ratios(
    event: &OutageEvent,
    trace: &EventTrace,
    window: &SurgeWindow,
    der: &DerDelayModel,
) -> Result<SurgeComponents> {
    Ok(surge_detail(event, trace, window, der)?.components)
}

/// Surge ratios plus the baseline they were normalised by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurgeDetail {
    pub components: SurgeComponents,
    pub base_total_kw: f64,
    pub der_missing_kw: f64,
    pub der_no_mass_in_window: bool,
}

pub fn surge_detail(
    event: &OutageEvent,
    trace: &EventTrace,
    window: &SurgeWindow,
    der: &DerDelayModel,
) -> Result<SurgeDetail> {
    window.validate()?;
    let rows = window.rows();
    let missing = |what: String| Error::MissingTraceRows {
        event_id: event.event_id,
        detail: what,
    };

    let interval_mean = |start: NaiveDateTime| -> Result<[f64; 3]> {
        let mut acc = [0.0; 3];
        for j in 0..rows {
            let t = start + Duration::minutes(STEP_MIN * j as i64);
            let r = trace.row(t).ok_or_else(|| missing(format!("no row at {t}")))?;
            acc[0] += r.total_kw;
            acc[1] += r.ev_kw;
            acc[2] += r.hp_kw;
        }
        Ok(acc.map(|v| v / rows as f64))
    };

    let starts = window.baseline_starts(event);
    let mut base = [0.0; 3];
    for &s in &starts {
        let m = interval_mean(s)?;
        for (b, v) in base.iter_mut().zip(m) {
            *b += v;
        }
    }
    let base = base.map(|v| v / starts.len() as f64);
    let res = interval_mean(event.restoration_time)?;

    let p_base = base[0];
    if !(p_base > 0.0) {
        return Err(Error::DegenerateBaseline(p_base));
    }

    let knots = ((window.length_min + 3.0 * der.sigma) / STEP_MIN as f64).ceil() as usize + 1;
    let mut gen = Vec::with_capacity(knots);
    for j in 0..knots {
        let t = event.restoration_time + Duration::minutes(STEP_MIN * j as i64);
        let r = trace
            .row(t)
            .ok_or_else(|| missing(format!("DER profile needs a row at {t}")))?;
        gen.push(r.der_kw);
    }
    let profile = GenerationProfile::new(STEP_MIN as f64, gen)?;
    let der_missing = der_missing_power(&profile, der, window.length_min)?;

    let components = SurgeComponents::from_total(
        (res[0] - base[0]) / p_base,
        (res[1] - base[1]) / p_base,
        (res[2] - base[2]) / p_base,
        der_missing.kw / p_base,
    );
    Ok(SurgeDetail {
        components,
        base_total_kw: p_base,
        der_missing_kw: der_missing.kw,
        der_no_mass_in_window: der_missing.no_mass_in_window,
    })
}

pub fn penetration(event: &OutageEvent, feeder: &FeederTemplate) -> Result<PenetrationRates> {
    if event.feeder_id != feeder.feeder_id {
        return Err(Error::invalid(format!(
            "event {} belongs to feeder {}, not {}",
            event.event_id, event.feeder_id, feeder.feeder_id
        )));
    }
    if feeder.n_smart_meters == 0 {
        return Err(Error::invalid(format!(
            "feeder {} has no smart meters",
            feeder.feeder_id
        )));
    }
    if !(feeder.daily_peak_kw > 0.0) {
        return Err(Error::invalid(format!(
            "feeder {} has a non-positive daily peak",
            feeder.feeder_id
        )));
    }
    let sm = feeder.n_smart_meters as f64;
    Ok(PenetrationRates {
        r_ev: feeder.n_ev_submeters as f64 / sm,
        r_hp: feeder.n_hp_submeters as f64 / sm,
        r_der: feeder.der_capacity_kw / feeder.daily_peak_kw,
    })
}

/// One row of `surges.csv`: components, rates and the covariates the
/// downstream analyses condition on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: u64,
    pub feeder_id: u32,
    pub s_tot: f64,
    pub s_ev: f64,
    pub s_hp: f64,
    pub s_der: f64,
    pub s_oth: f64,
    pub r_ev: f64,
    pub r_hp: f64,
    pub r_der: f64,
    pub restoration_time: NaiveDateTime,
    /// Fractional clock hour of restoration.
    pub hour: f64,
    pub day_of_week: u32,
    pub month: u32,
    pub duration_h: f64,
    pub n_customers: u32,
    pub temp_c: f64,
    pub ghi: f64,
    pub precip_water_mm: f64,
    pub base_kw: f64,
}

impl EventRecord {
    pub fn components(&self) -> SurgeComponents {
        SurgeComponents {
            s_tot: self.s_tot,
            s_ev: self.s_ev,
            s_hp: self.s_hp,
            s_der: self.s_der,
            s_oth: self.s_oth,
        }
    }

    pub fn rates(&self) -> PenetrationRates {
        PenetrationRates {
            r_ev: self.r_ev,
            r_hp: self.r_hp,
            r_der: self.r_der,
        }
    }
}

pub fn event_record(
    event: &OutageEvent,
    feeder: &FeederTemplate,
    detail: &SurgeDetail,
) -> Result<EventRecord> {
    let r = penetration(event, feeder)?;
    let c = detail.components;
    let t = event.restoration_time;
    Ok(EventRecord {
        event_id: event.event_id,
        feeder_id: event.feeder_id,
        s_tot: c.s_tot,
        s_ev: c.s_ev,
        s_hp: c.s_hp,
        s_der: c.s_der,
        s_oth: c.s_oth,
        r_ev: r.r_ev,
        r_hp: r.r_hp,
        r_der: r.r_der,
        restoration_time: t,
        hour: t.hour() as f64 + t.minute() as f64 / 60.0,
        day_of_week: t.weekday().num_days_from_monday(),
        month: t.month(),
        duration_h: event.duration_h,
        n_customers: event.n_customers_affected,
        temp_c: event.weather_at_restoration.temp_c,
        ghi: event.weather_at_restoration.ghi,
        precip_water_mm: event.weather_at_restoration.precip_water_mm,
        base_kw: detail.base_total_kw,
    })
}

/// Surge records for every event of a dataset, in event order.
pub fn compute_surges(
    data: &SyntheticDataset,
    window: &SurgeWindow,
    der: &DerDelayModel,
) -> Result<Vec<EventRecord>> {
    data.events
        .par_iter()
        .zip(data.traces.par_iter())
        .map(|(event, trace)| {
            let feeder = data.feeder(event.feeder_id)?;
            let detail = surge_detail(event, trace, window, der)?;
            event_record(event, feeder, &detail)
        })
        .collect()
}

pub const RECORD_COLS: [&str; 20] = [
    "event_id",
    "feeder_id",
    "s_tot",
    "s_ev",
    "s_hp",
    "s_der",
    "s_oth",
    "r_ev",
    "r_hp",
    "r_der",
    "restoration_time",
    "hour",
    "day_of_week",
    "month",
    "duration_h",
    "n_customers",
    "temp_c",
    "ghi",
    "precip_water_mm",
    "base_kw",
];

/// Write surge records as CSV, floats at 9 significant digits.
pub fn write_records(path: &Path, records: &[EventRecord]) -> Result<()> {
    write_rows(
        path,
        &RECORD_COLS,
        records.iter().map(|r| {
            vec![
                r.event_id.to_string(),
                r.feeder_id.to_string(),
                g9(r.s_tot),
                g9(r.s_ev),
                g9(r.s_hp),
                g9(r.s_der),
                g9(r.s_oth),
                g9(r.r_ev),
                g9(r.r_hp),
                g9(r.r_der),
                fmt_time(r.restoration_time),
                g9(r.hour),
                r.day_of_week.to_string(),
                r.month.to_string(),
                g9(r.duration_h),
                r.n_customers.to_string(),
                g9(r.temp_c),
                g9(r.ghi),
                g9(r.precip_water_mm),
                g9(r.base_kw),
            ]
        }),
    )
}

pub fn read_records(path: &Path) -> Result<Vec<EventRecord>> {
    let t = Table::read(path, &RECORD_COLS)?;
    (0..t.rows.len())
        .map(|i| {
            Ok(EventRecord {
                event_id: t.get(i, 0)?,
                feeder_id: t.get(i, 1)?,
                s_tot: t.get(i, 2)?,
                s_ev: t.get(i, 3)?,
                s_hp: t.get(i, 4)?,
                s_der: t.get(i, 5)?,
                s_oth: t.get(i, 6)?,
                r_ev: t.get(i, 7)?,
                r_hp: t.get(i, 8)?,
                r_der: t.get(i, 9)?,
                restoration_time: t.time(i, 10)?,
                hour: t.get(i, 11)?,
                day_of_week: t.get(i, 12)?,
                month: t.get(i, 13)?,
                duration_h: t.get(i, 14)?,
                n_customers: t.get(i, 15)?,
                temp_c: t.get(i, 16)?,
                ghi: t.get(i, 17)?,
                precip_water_mm: t.get(i, 18)?,
                base_kw: t.get(i, 19)?,
            })
        })
        .collect()
}
