//! Training-efficiency arithmetic: wall-time parsing, sample throughput and
//! scaling efficiency against a baseline GPU count.
//!
//! The profiler only reads records (CSV rows or a trainer event log); it
//! never runs anything distributed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::StepEvent;

/// Steps covered by the `time_per_100k` column.
pub const STEPS_PER_RECORD: f64 = 100_000.0;

/// Raw columns of one throughput measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputRecord {
    pub gpus: u32,
    pub per_gpu_batch: u32,
    /// Defaults to `gpus × per_gpu_batch` when the column is absent.
    #[serde(default)]
    pub global_batch: Option<u32>,
    pub time_per_100k: String,
    /// Passed through untouched; never measured here.
    #[serde(default)]
    pub gpu_util: Option<String>,
}

/// A record plus its derived columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub gpus: u32,
    pub per_gpu_batch: u32,
    pub global_batch: u32,
    pub time_per_100k: String,
    pub sec_per_step: f64,
    pub samples_per_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gpu_util: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    /// GPU count of the efficiency baseline, if the rows span several.
    pub baseline_gpus: Option<u32>,
    pub rows: Vec<ProfileRow>,
}

/// `"H+:MM:SS"` to whole seconds.
pub fn parse_duration(text: &str) -> Result<u64> {
    let bad = |why: &str| Error::format("duration", format!("`{text}`: {why}"));
    let parts: Vec<&str> = text.trim().split(':').collect();
    if parts.len() != 3 {
        return Err(bad("expected H:MM:SS"));
    }
    let mut v = [0u64; 3];
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("fields must be unsigned integers"));
        }
        if i > 0 && p.len() != 2 {
            return Err(bad("minutes and seconds take two digits"));
        }
        v[i] = p.parse().map_err(|_| bad("hours out of range"))?;
    }
    if v[1] >= 60 || v[2] >= 60 {
        return Err(bad("minutes and seconds must be below 60"));
    }
    v[0].checked_mul(3600)
        .and_then(|h| h.checked_add(60 * v[1] + v[2]))
        .ok_or_else(|| bad("hours out of range"))
}

pub fn format_duration(seconds: u64) -> String {
    format!("{}:{:02}:{:02}", seconds / 3600, seconds / 60 % 60, seconds % 60)
}

pub fn samples_per_second(global_batch: f64, sec_per_step: f64) -> Result<f64> {
    if !(sec_per_step > 0.0) || !sec_per_step.is_finite() {
        return Err(Error::Domain(format!("seconds per step must be positive, got {sec_per_step}")));
    }
    if !(global_batch > 0.0) {
        return Err(Error::Domain(format!("global batch must be positive, got {global_batch}")));
    }
    Ok(global_batch / sec_per_step)
}

/// Percentage of the throughput a linear extrapolation from the baseline
/// would predict at `gpus_n`.
pub fn scaling_efficiency(throughput_n: f64, gpus_n: u32, throughput_base: f64, gpus_base: u32) -> Result<f64> {
    if gpus_base == 0 || gpus_n < gpus_base {
        return Err(Error::Domain(format!(
            "need gpus_n >= gpus_base > 0, got {gpus_n} and {gpus_base}"
        )));
    }
    if !(throughput_base > 0.0) || !(throughput_n > 0.0) {
        return Err(Error::Domain("throughputs must be positive".into()));
    }
    let ideal = throughput_base * (gpus_n as f64 / gpus_base as f64);
    Ok(100.0 * (throughput_n / ideal))
}

impl ThroughputRecord {
    pub fn global_batch(&self) -> u32 {
        self.global_batch.unwrap_or(self.gpus * self.per_gpu_batch)
    }

    fn derive(&self, row: usize) -> Result<ProfileRow> {
        if self.gpus == 0 || self.per_gpu_batch == 0 {
            return Err(Error::Integrity(format!("row {row}: gpus and per_gpu_batch must be positive")));
        }
        let gb = self.global_batch();
        if gb != self.gpus * self.per_gpu_batch {
            return Err(Error::Integrity(format!(
                "row {row}: global_batch {gb} != gpus {} x per_gpu_batch {}",
                self.gpus, self.per_gpu_batch
            )));
        }
        let sec = parse_duration(&self.time_per_100k)? as f64 / STEPS_PER_RECORD;
        Ok(ProfileRow {
            gpus: self.gpus,
            per_gpu_batch: self.per_gpu_batch,
            global_batch: gb,
            time_per_100k: self.time_per_100k.clone(),
            sec_per_step: sec,
            samples_per_s: samples_per_second(gb as f64, sec)?,
            scaling_eff: None,
            gpu_util: self.gpu_util.clone(),
        })
    }
}

/// Reads rows with columns `gpus, per_gpu_batch, time_per_100k` and the
/// optional `global_batch, gpu_util`.
pub fn read_csv(text: &str) -> Result<Vec<ThroughputRecord>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::format("csv", format!("row {}: {e}", i + 1))))
        .collect()
}

/// Derives every row. When the rows span more than one GPU count the
/// smallest count is the efficiency baseline.
pub fn profile_records(records: &[ThroughputRecord]) -> Result<ProfileReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = records
        .iter()
        .enumerate()
        .map(|(i, r)| r.derive(i + 1))
        .collect::<Result<Vec<_>>>()?;
    let min = rows.iter().map(|r| r.gpus).min().unwrap();
    let max = rows.iter().map(|r| r.gpus).max().unwrap();
    let mut baseline_gpus = None;
    if min != max {
        let base = rows.iter().find(|r| r.gpus == min).unwrap().samples_per_s;
        for r in &mut rows {
            r.scaling_eff = Some(scaling_efficiency(r.samples_per_s, r.gpus, base, min)?);
        }
        baseline_gpus = Some(min);
    }
    Ok(ProfileReport { baseline_gpus, rows })
}

/// One row from a trainer event log. Every step is counted, so
/// checkpoint writes attributed to a step are included in its time.
pub fn profile_events(events: &[StepEvent], gpus: u32) -> Result<ProfileReport> {
    let first = events.first().ok_or(Error::EmptyDataset)?;
    if gpus == 0 {
        return Err(Error::Domain("gpus must be positive".into()));
    }
    let gb = first.global_batch;
    if let Some(e) = events.iter().find(|e| e.global_batch != gb) {
        return Err(Error::Integrity(format!(
            "step {}: global_batch {} differs from {gb}",
            e.step, e.global_batch
        )));
    }
    let sec = events.iter().map(|e| e.wall_ms).sum::<f64>() / events.len() as f64 / 1000.0;
    let gb = u32::try_from(gb).map_err(|_| Error::Domain("global batch too large".into()))?;
    Ok(ProfileReport {
        baseline_gpus: None,
        rows: vec![ProfileRow {
            gpus,
            per_gpu_batch: gb / gpus,
            global_batch: gb,
            time_per_100k: format_duration((sec * STEPS_PER_RECORD).round() as u64),
            sec_per_step: sec,
            samples_per_s: samples_per_second(gb as f64, sec)?,
            scaling_eff: None,
            gpu_util: None,
        }],
    })
}

impl ProfileReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let mut head = vec!["GPUs", "Per-GPU batch", "Global batch", "Time / 100K", "Sec / step", "Samples / s"];
        let eff = self.baseline_gpus.is_some();
        let util = self.rows.iter().any(|r| r.gpu_util.is_some());
        if eff {
            head.push("Scaling eff.");
        }
        if util {
            head.push("GPU util");
        }
        let mut cells: Vec<Vec<String>> = vec![head.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut c = vec![
                r.gpus.to_string(),
                r.per_gpu_batch.to_string(),
                r.global_batch.to_string(),
                r.time_per_100k.clone(),
                format!("{:.3}", r.sec_per_step),
                format!("{:.1}", r.samples_per_s),
            ];
            if eff {
                c.push(r.scaling_eff.map_or("-".into(), |e| format!("{e:.1}%")));
            }
            if util {
                c.push(r.gpu_util.clone().unwrap_or_else(|| "-".into()));
            }
            cells.push(c);
        }
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|j| cells.iter().map(|row| row[j].len()).max().unwrap())
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SINGLE: &str = include_str!("../tests/data/single_node.csv");
    const MULTI: &str = include_str!("../tests/data/multi_node.csv");

    #[test]
    fn durations() {
        assert_eq!(parse_duration("19:32:17").unwrap(), 70337);
        assert_eq!(parse_duration("66:47:02").unwrap(), 240422);
        assert_eq!(parse_duration("00:00:00").unwrap(), 0);
        assert_eq!(parse_duration("123:00:01").unwrap(), 442801);
        for bad in ["1:60:00", "1:00:60", "1:2:03", "1:02", "a:00:00", "", "1:-1:00", "-1:00:00"] {
            assert!(matches!(parse_duration(bad), Err(Error::Format { .. })), "{bad}");
        }
    }

    #[test]
    fn throughput_examples() {
        assert!((samples_per_second(128.0, 1.774).unwrap() - 72.2).abs() <= 0.05);
        assert!((samples_per_second(64.0, 0.735).unwrap() - 87.07).abs() <= 0.005);
        assert!((samples_per_second(2048.0, 0.931).unwrap() - 2199.8).abs() <= 0.05);
        assert!(matches!(samples_per_second(8.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(samples_per_second(8.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn efficiency_examples() {
        assert!((scaling_efficiency(150.7, 16, 87.0, 8).unwrap() - 86.6).abs() < 0.05);
        assert!((scaling_efficiency(2200.0, 256, 87.0, 8).unwrap() - 79.0).abs() < 0.05);
        assert_eq!(scaling_efficiency(87.0, 8, 87.0, 8).unwrap(), 100.0);
        assert!(scaling_efficiency(1.0, 4, 1.0, 8).is_err());
        assert!(scaling_efficiency(1.0, 8, 0.0, 8).is_err());
    }

    #[test]
    fn single_node_table() {
        let r = profile_records(&read_csv(SINGLE).unwrap()).unwrap();
        let got: Vec<f64> = r.rows.iter().map(|r| r.samples_per_s).collect();
        for (g, want) in got.iter().zip([22.7, 36.1, 56.6, 72.2, 79.9]) {
            assert!((g - want).abs() <= 0.1, "{g} vs {want}");
        }
        assert_eq!(r.baseline_gpus, None);
        assert_eq!(r.rows[0].gpu_util.as_deref(), Some("74%"));
        assert!(r.to_text().contains("GPU util"));
    }

    #[test]
    fn multi_node_table() {
        let r = profile_records(&read_csv(MULTI).unwrap()).unwrap();
        assert_eq!(r.baseline_gpus, Some(8));
        for (row, want) in r.rows.iter().zip([100.0, 86.7, 81.9, 79.6, 79.9, 79.1]) {
            let e = row.scaling_eff.unwrap();
            assert!((e - want).abs() <= 0.5, "{} gpus: {e} vs {want}", row.gpus);
        }
        let back: ProfileReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn inconsistent_global_batch_names_the_row() {
        let text = MULTI.replace("16,8,128", "16,8,127");
        match profile_records(&read_csv(&text).unwrap()) {
            Err(Error::Integrity(m)) => assert!(m.starts_with("row 2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_global_batch_is_derived() {
        let recs = read_csv("gpus,per_gpu_batch,time_per_100k\n2,3,1:00:00\n").unwrap();
        assert_eq!(profile_records(&recs).unwrap().rows[0].global_batch, 6);
    }

    #[test]
    fn event_log_throughput() {
        let ev: Vec<StepEvent> = (1..=10)
            .map(|step| StepEvent {
                step,
                lr: 1e-3,
                action_loss: 1.0,
                aux_loss: None,
                total_loss: 1.0,
                grad_norm: 1.0,
                wall_ms: 500.0,
                global_batch: 32,
            })
            .collect();
        let r = profile_events(&ev, 1).unwrap();
        assert_eq!(r.rows[0].samples_per_s, 64.0);
        assert_eq!(r.rows[0].time_per_100k, "13:53:20");
        let mut bad = ev.clone();
        bad[4].global_batch = 16;
        assert!(matches!(profile_events(&bad, 1), Err(Error::Integrity(m)) if m.contains("step 5")));
    }

    proptest! {
        #[test]
        fn duration_round_trips(s in 0u64..10_000_000) {
            prop_assert_eq!(parse_duration(&format_duration(s)).unwrap(), s);
        }

        #[test]
        fn throughput_is_homogeneous(b in 1u32..100_000, sec in 1e-3f64..100.0) {
            let one = samples_per_second(b as f64, sec).unwrap();
            let two = samples_per_second(2.0 * b as f64, sec).unwrap();
            prop_assert_eq!(two, 2.0 * one);
        }

        #[test]
        fn baseline_is_exactly_one_hundred(t in 1e-3f64..1e6, g in 1u32..1024) {
            prop_assert_eq!(scaling_efficiency(t, g, t, g).unwrap(), 100.0);
        }
    }
}
