//! JSON Lines trajectory datasets: one trajectory object per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use super::{ModeId, Trajectory};
use crate::{Error, Result};

/// On-disk form of one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    #[serde(deserialize_with = "string_or_int")]
    pub id: String,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_times: Option<Vec<f64>>,
}

fn string_or_int<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        I(i64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::I(i) => i.to_string(),
    })
}

impl From<&Trajectory> for DatasetRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            id: t.id.clone(),
            times: t.times.clone(),
            states: t.states.clone(),
            modes: t
                .mode_labels
                .as_ref()
                .map(|m| m.iter().map(|z| z.0).collect()),
            event_times: t.event_times.clone(),
        }
    }
}

impl DatasetRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.times.len() != self.states.len() {
            return Err(format!(
                "{} times but {} states",
                self.times.len(),
                self.states.len()
            ));
        }
        let dim = self.states.first().map_or(0, Vec::len);
        if self.states.iter().any(|s| s.len() != dim) {
            return Err("states have inconsistent dimension".into());
        }
        if self
            .times
            .iter()
            .chain(self.states.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err("non-finite time or state value".into());
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] < w[0]) {
            return Err(format!("times decrease at index {}", i + 1));
        }
        if let Some(m) = &self.modes {
            if m.len() != self.times.len() {
                return Err(format!(
                    "{} modes for {} samples",
                    m.len(),
                    self.times.len()
                ));
            }
        }
        if let Some(ev) = &self.event_times {
            if ev.windows(2).any(|w| w[1] < w[0]) {
                return Err("event_times not sorted".into());
            }
        }
        Ok(())
    }

    pub fn into_trajectory(self) -> Trajectory {
        Trajectory {
            id: self.id,
            times: self.times,
            states: self.states,
            mode_labels: self.modes.map(|m| m.into_iter().map(ModeId).collect()),
            event_times: self.event_times,
        }
    }
}

/// Parses a dataset held in memory. `origin` only decorates error messages.
pub fn read_dataset_str(text: &str, origin: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let schema_err = |message: String| Error::Schema {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| schema_err(e.to_string()))?;
        rec.validate().map_err(schema_err)?;
        out.push(rec.into_trajectory());
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    read_dataset_str(&text, &path.display().to_string())
}

pub fn write_dataset(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in trajectories {
        serde_json::to_writer(&mut w, &DatasetRecord::from(t))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_line_numbers() {
        let text = concat!(
            "{\"id\": 0, \"times\": [0.0, 1.0], \"states\": [[1.0], [2.0]]}\n",
            "{\"id\": \"b\", \"times\": [0.0], \"states\": [[1.0], [2.0]]}\n",
        );
        match read_dataset_str(text, "mem") {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut t = Trajectory::new(
            "x",
            vec![0.1, 1.0 / 3.0],
            vec![vec![std::f64::consts::PI], vec![1e-300]],
        );
        t.mode_labels = Some(vec![ModeId(0), ModeId(2)]);
        t.event_times = Some(vec![0.7]);
        let dir = std::env::temp_dir().join(format!("nha-ds-{}", std::process::id()));
        write_dataset(&dir, std::slice::from_ref(&t)).unwrap();
        let back = read_dataset(&dir).unwrap();
        std::fs::remove_file(&dir).ok();
        assert_eq!(back, vec![t]);
    }
}
