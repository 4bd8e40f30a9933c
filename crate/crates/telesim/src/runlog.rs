//! Time-stamped multi-rate record of one run, with CSV serialization in a
//! fixed column order and a TOML metadata sidecar.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SimError};

/// Fixed CSV column order. Forces are in newtons, positions in meters,
/// velocities in m/s, energy in joules, time in seconds.
pub const CSV_COLUMNS: [&str; 11] = [
    "t",
    "x_des",
    "xdot_des",
    "x",
    "xdot",
    "f_c",
    "f_feedback",
    "f_passive",
    "e_win",
    "psm_position",
    "f_ground_truth",
];

/// One log-rate sample. Values reflect the state after all tasks due on the
/// tick have run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    pub x_des: f64,
    pub xdot_des: f64,
    pub x: f64,
    pub xdot: f64,
    pub f_c: f64,
    pub f_feedback: f64,
    pub f_passive: f64,
    pub e_win: f64,
    pub psm_position: f64,
    pub f_ground_truth: f64,
}

impl LogRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.x_des,
            self.xdot_des,
            self.x,
            self.xdot,
            self.f_c,
            self.f_feedback,
            self.f_passive,
            self.e_win,
            self.psm_position,
            self.f_ground_truth,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Run provenance carried alongside the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunMeta {
    /// Hash of the effective configuration (hex).
    pub config_hash: String,
    pub estimator_id: String,
    pub protocol: String,
    pub material_id: u32,
    pub repetition: u32,
    pub popc_enabled: bool,
    pub seed: u64,
    pub scale: f64,
    pub master_rate_hz: u32,
    pub plant_rate_hz: u32,
    pub estimator_rate_hz: u32,
    pub popc_rate_hz: u32,
    pub log_rate_hz: u32,
    /// Set when the run was aborted by the divergence guard.
    pub diverged_at: Option<f64>,
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub meta: RunMeta,
    pub records: Vec<LogRecord>,
}

impl RunLog {
    /// Column extractors for analysis code.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let f: fn(&LogRecord) -> f64 = match name {
            "t" => |r| r.t,
            "x_des" => |r| r.x_des,
            "xdot_des" => |r| r.xdot_des,
            "x" => |r| r.x,
            "xdot" => |r| r.xdot,
            "f_c" => |r| r.f_c,
            "f_feedback" => |r| r.f_feedback,
            "f_passive" => |r| r.f_passive,
            "e_win" => |r| r.e_win,
            "psm_position" => |r| r.psm_position,
            "f_ground_truth" => |r| r.f_ground_truth,
            _ => return None,
        };
        Some(self.records.iter().map(f).collect())
    }

    /// Write the sample table as CSV in the fixed column order.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(CSV_COLUMNS)?;
        for r in &self.records {
            wtr.write_record(&[
                r.t.to_string(),
                r.x_des.to_string(),
                r.xdot_des.to_string(),
                r.x.to_string(),
                r.xdot.to_string(),
                r.f_c.to_string(),
                r.f_feedback.to_string(),
                r.f_passive.to_string(),
                r.e_win.to_string(),
                r.psm_position.to_string(),
                r.f_ground_truth.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| SimError::io("<csv>", e))?;
        Ok(())
    }

    /// Write `<stem>.csv` and the `<stem>.meta.toml` sidecar.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let f = std::fs::File::create(&csv_path).map_err(|e| SimError::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let meta_path = dir.join(format!("{stem}.meta.toml"));
        let text = toml::to_string(&self.meta)?;
        std::fs::write(&meta_path, text).map_err(|e| SimError::io(&meta_path, e))?;
        Ok(())
    }

    /// Load a log previously written by [`RunLog::save`].
    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let meta_path = dir.join(format!("{stem}.meta.toml"));
        let mut text = String::new();
        std::fs::File::open(&meta_path)
            .map_err(|e| SimError::io(&meta_path, e))?
            .read_to_string(&mut text)
            .map_err(|e| SimError::io(&meta_path, e))?;
        let meta: RunMeta = toml::from_str(&text)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let f = std::fs::File::open(&csv_path).map_err(|e| SimError::io(&csv_path, e))?;
        let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(f));
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let get = |i: usize| -> Result<f64> {
                row.get(i)
                    .ok_or_else(|| SimError::InvalidConfig(format!("missing column {i}")))?
                    .parse::<f64>()
                    .map_err(|e| SimError::InvalidConfig(format!("bad float in csv: {e}")))
            };
            records.push(LogRecord {
                t: get(0)?,
                x_des: get(1)?,
                xdot_des: get(2)?,
                x: get(3)?,
                xdot: get(4)?,
                f_c: get(5)?,
                f_feedback: get(6)?,
                f_passive: get(7)?,
                e_win: get(8)?,
                psm_position: get(9)?,
                f_ground_truth: get(10)?,
            });
        }
        Ok(RunLog { meta, records })
    }

    /// Timestamps strictly increase with the constant log step and every
    /// record is finite.
    pub fn check_invariants(&self) -> Result<()> {
        let dt = 1.0 / self.meta.log_rate_hz as f64;
        for (i, pair) in self.records.windows(2).enumerate() {
            let step = pair[1].t - pair[0].t;
            if step <= 0.0 || (step - dt).abs() > 1e-9 {
                return Err(SimError::InvalidConfig(format!(
                    "log step {step} at row {i} deviates from 1/{} s",
                    self.meta.log_rate_hz
                )));
            }
        }
        for (i, r) in self.records.iter().enumerate() {
            if !r.is_finite() {
                return Err(SimError::InvalidConfig(format!(
                    "non-finite record at row {i}"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> RunLog {
        let records = (0..100)
            .map(|k| {
                let t = k as f64 / 1000.0;
                LogRecord {
                    t,
                    x_des: t.sin(),
                    xdot_des: t.cos(),
                    x: t.sin() * 0.9,
                    xdot: t.cos() * 0.9,
                    f_c: 1.0,
                    f_feedback: 0.5,
                    f_passive: 0.0,
                    e_win: 1e-6,
                    psm_position: t.sin() * 0.18,
                    f_ground_truth: 0.5,
                }
            })
            .collect();
        RunLog {
            meta: RunMeta {
                config_hash: "deadbeef".into(),
                estimator_id: "fs".into(),
                protocol: "closed_loop_z".into(),
                material_id: 1,
                repetition: 1,
                popc_enabled: false,
                seed: 42,
                scale: 0.2,
                master_rate_hz: 6000,
                plant_rate_hz: 500,
                estimator_rate_hz: 1000,
                popc_rate_hz: 1000,
                log_rate_hz: 1000,
                diverged_at: None,
            },
            records,
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let log = sample_log();
        log.save(dir.path(), "run").unwrap();
        let loaded = RunLog::load(dir.path(), "run").unwrap();
        assert_eq!(log, loaded);
    }

    #[test]
    fn invariants_hold_on_sample() {
        sample_log().check_invariants().unwrap();
    }

    #[test]
    fn invariants_catch_nonfinite() {
        let mut log = sample_log();
        log.records[3].f_feedback = f64::NAN;
        assert!(log.check_invariants().is_err());
    }

    #[test]
    fn column_extraction() {
        let log = sample_log();
        assert_eq!(log.column("f_c").unwrap()[0], 1.0);
        assert!(log.column("nope").is_none());
    }
}
