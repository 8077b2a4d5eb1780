use super::{ConflictEvent, DyadMonthSeries};
use crate::error::{Error, Result};
use crate::month::{Month, MonthRange};

/// Monthly fatality totals for one dyad over `window`; months without events
/// are zero. `log_fatalities = ln(1 + raw)`.
pub fn aggregate_monthly(
    events: &[ConflictEvent],
    dyad_id: &str,
    window: MonthRange,
) -> Result<DyadMonthSeries> {
    let mut raw = vec![0u64; window.len()];
    let mut country_id: Option<&str> = None;
    for e in events.iter().filter(|e| e.dyad_id == dyad_id) {
        let m = Month::from_date(e.date);
        if !window.contains(m) {
            return Err(Error::invalid(format!(
                "event {} dated {} lies outside window {window}",
                e.event_id, e.date
            )));
        }
        raw[m.since(window.start) as usize] += e.fatalities;
        if country_id.is_none() && !e.country_id.is_empty() {
            country_id = Some(&e.country_id);
        }
    }
    Ok(DyadMonthSeries {
        dyad_id: dyad_id.to_string(),
        country_id: country_id.unwrap_or("unknown").to_string(),
        months: window.iter().collect(),
        log_fatalities: raw.iter().map(|&r| (r as f64).ln_1p()).collect(),
        raw_fatalities: raw,
    })
}
