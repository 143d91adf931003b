use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ipop_dispatch::dispatch::DispatchSchedule;
use ipop_dispatch::{EfficiencySample, Error, Fleet, ModuleProfile};
use serde::Serialize;
use serde_json::Value;

pub const SAMPLE_HEADER: [&str; 4] = ["module_id", "current_a", "p_in_w", "p_out_w"];
pub const SCHEDULE_HEADER: [&str; 5] = [
    "p_lo_w",
    "p_hi_w",
    "active_modules",
    "example_demand_w",
    "eta",
];

/// Rounds to 9 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round_sig)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn rounded<T: Serialize>(value: &T) -> Result<Value> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    Ok(v)
}

/// Pretty JSON with every float rounded to 9 significant digits.
pub fn report_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&rounded(value)?)? + "\n")
}

/// As [`report_json`], on one line.
pub fn report_json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(&rounded(value)?)? + "\n")
}

/// Writes to `path`, or to standard output when `path` is `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub fn read_samples(path: &Path) -> Result<Vec<EfficiencySample>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_samples(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_samples(bytes: &[u8]) -> Result<Vec<EfficiencySample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .context("line 1: unreadable header")?
        .clone();
    if header.iter().ne(SAMPLE_HEADER) {
        return Err(Error::Input(format!(
            "line 1: header must be exactly `{}`, got `{}`",
            SAMPLE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        ))
        .into());
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Input(format!("line {line}: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |k: usize| -> Result<f64> {
            let raw = record[k].trim();
            match raw.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::Input(format!(
                    "line {line}: {} `{raw}` is not a finite number",
                    SAMPLE_HEADER[k]
                ))
                .into()),
            }
        };
        let sample = EfficiencySample::new(record[0].trim(), number(1)?, number(2)?, number(3)?)
            .with_context(|| format!("line {line}"))?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Input("no data rows".into()).into());
    }
    Ok(samples)
}

pub fn samples_csv(samples: &[EfficiencySample]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SAMPLE_HEADER)?;
    for s in samples {
        w.write_record([
            s.module_id.clone(),
            s.current.to_string(),
            s.p_in.to_string(),
            s.p_out.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Samples grouped by module id, in order of first appearance.
pub fn group_by_module(samples: Vec<EfficiencySample>) -> Vec<(String, Vec<EfficiencySample>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<EfficiencySample>> = BTreeMap::new();
    for s in samples {
        if !groups.contains_key(&s.module_id) {
            order.push(s.module_id.clone());
        }
        groups.entry(s.module_id.clone()).or_default().push(s);
    }
    order
        .into_iter()
        .map(|id| {
            let rows = groups.remove(&id).unwrap_or_default();
            (id, rows)
        })
        .collect()
}

pub fn read_profile(path: &Path) -> Result<ModuleProfile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())).into())
}

pub fn read_fleet(paths: &[PathBuf]) -> Result<Fleet> {
    if paths.is_empty() {
        bail!(Error::Input("at least one --profile is required".into()));
    }
    let profiles = paths
        .iter()
        .map(|p| read_profile(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(Fleet::new(profiles)?)
}

/// Full-precision profile JSON, so fitted models reload bit-for-bit.
pub fn profile_json(profile: &ModuleProfile) -> Result<String> {
    Ok(serde_json::to_string_pretty(profile)? + "\n")
}

pub fn schedule_csv(schedule: &DispatchSchedule) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCHEDULE_HEADER)?;
    for r in &schedule.ranges {
        let active = r.active.as_ref().map(|a| a.to_string()).unwrap_or_default();
        let eta = r
            .eta()
            .map(|e| round_sig(e).to_string())
            .unwrap_or_default();
        w.write_record([
            round_sig(r.p_lo).to_string(),
            round_sig(r.p_hi).to_string(),
            active,
            round_sig(r.example_demand).to_string(),
            eta,
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_nine_digits() {
        assert_eq!(round_sig(0.81300813008130), 0.81300813);
        assert_eq!(round_sig(123456.78912), 123456.789);
        assert_eq!(round_sig(0.0), 0.0);
        assert_eq!(round_sig(-1.0 / 3.0), -0.333333333);
    }

    #[test]
    fn sample_errors_carry_line_numbers() {
        let bad = b"module_id,current_a,p_in_w,p_out_w\nA,1,100,80\nA,x,100,80\n";
        let err = parse_samples(bad).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");

        let short = b"module_id,current_a,p_in_w,p_out_w\nA,1,100\n";
        let err = parse_samples(short).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");

        let header = b"module,current_a,p_in_w,p_out_w\n";
        assert!(parse_samples(header)
            .unwrap_err()
            .to_string()
            .contains("header"));

        let empty = b"module_id,current_a,p_in_w,p_out_w\n";
        assert!(parse_samples(empty)
            .unwrap_err()
            .to_string()
            .contains("no data rows"));
    }

    #[test]
    fn samples_round_trip() {
        let rows = vec![
            EfficiencySample::new("A", 0.1, 9.123456789012345, 8.0).unwrap(),
            EfficiencySample::new("B", 1.0 / 3.0, 30.0, 80.0 / 3.0).unwrap(),
        ];
        let text = samples_csv(&rows).unwrap();
        assert_eq!(parse_samples(text.as_bytes()).unwrap(), rows);
    }
}
