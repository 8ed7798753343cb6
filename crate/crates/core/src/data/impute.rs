use crate::data::record::SurgeryRecord;

/// Longest carry-forward, in minutes after the last observation.
pub const MAX_CARRY_MINUTES: usize = 20;

/// SpO2 readings below this percentage are aberrant and dropped.
pub const SPO2_FLOOR: f64 = 60.0;

/// Carry-forward imputation.
///
/// A missing value at minute `t` takes the last observation at minute `s`
/// when `t − s ≤ 20`; otherwise (or if the channel was never observed) it
/// becomes 0. SpO2 readings below 60% are treated as missing first. In the
/// returned record `observed` marks every minute that now holds a real or
/// carried value.
pub fn impute(record: &SurgeryRecord, spo2_channel: Option<usize>) -> SurgeryRecord {
    let (v, t_len) = (record.channels(), record.minutes());
    let mut values = record.values.clone();
    let mut available = record.observed.clone();
    for c in 0..v {
        let row = c * t_len;
        let mut last: Option<(usize, f64)> = None;
        for t in 0..t_len {
            let idx = row + t;
            let mut seen = record.observed[idx];
            if seen && Some(c) == spo2_channel && record.values.data()[idx] < SPO2_FLOOR {
                seen = false;
            }
            if seen {
                last = Some((t, record.values.data()[idx]));
                available[idx] = true;
                continue;
            }
            match last {
                Some((s, x)) if t - s <= MAX_CARRY_MINUTES => {
                    values.data_mut()[idx] = x;
                    available[idx] = true;
                }
                _ => {
                    values.data_mut()[idx] = 0.0;
                    available[idx] = false;
                }
            }
        }
    }
    SurgeryRecord {
        id: record.id.clone(),
        values,
        observed: available,
    }
}
