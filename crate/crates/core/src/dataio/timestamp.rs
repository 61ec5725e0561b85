use chrono::{DateTime, FixedOffset, NaiveDateTime, SecondsFormat, TimeZone, Utc};

/// Western Massachusetts standard time.
pub const DEFAULT_UTC_OFFSET_SECS: i32 = -5 * 3600;

const NAIVE_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Accepts RFC 3339 / ISO 8601 with an explicit offset, a naive ISO 8601
/// timestamp (read in the fixed `utc_offset_secs` zone), or integer epoch
/// seconds.
pub fn parse_timestamp(s: &str, utc_offset_secs: i32) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    if let Ok(secs) = s.parse::<i64>() {
        return Utc.timestamp_opt(secs, 0).single();
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    let zone = FixedOffset::east_opt(utc_offset_secs)?;
    NAIVE_FORMATS.iter().find_map(|fmt| {
        NaiveDateTime::parse_from_str(s, fmt)
            .ok()
            .and_then(|n| zone.from_local_datetime(&n).single())
            .map(|t| t.with_timezone(&Utc))
    })
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepted_forms_agree() {
        let expect = Utc.with_ymd_and_hms(2016, 4, 29, 18, 0, 0).unwrap();
        assert_eq!(parse_timestamp("2016-04-29T13:00:00", DEFAULT_UTC_OFFSET_SECS), Some(expect));
        assert_eq!(parse_timestamp("2016-04-29 13:00:00", DEFAULT_UTC_OFFSET_SECS), Some(expect));
        assert_eq!(parse_timestamp("2016-04-29T13:00:00-05:00", 0), Some(expect));
        assert_eq!(parse_timestamp("2016-04-29T18:00:00Z", DEFAULT_UTC_OFFSET_SECS), Some(expect));
        assert_eq!(parse_timestamp(&expect.timestamp().to_string(), 0), Some(expect));
        assert_eq!(parse_timestamp("yesterday", 0), None);
    }

    #[test]
    fn format_round_trips() {
        let t = Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap();
        assert_eq!(format_timestamp(t), "2016-01-01T00:00:00Z");
        assert_eq!(parse_timestamp(&format_timestamp(t), 3600), Some(t));
    }
}
