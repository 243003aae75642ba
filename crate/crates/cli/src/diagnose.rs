//! `diagnose`: Durbin-Watson and move rate per parameter trace.
//!
//! Accepts the long `iteration,cohort,parameter,value` layout written by
//! `fit`, or a wide layout with one numeric column per trace.

use std::collections::HashMap;
use std::io::Read;

use hbsimex::durbin_watson;
use serde::Serialize;

use crate::failure::Failure;

const LONG_HEADER: [&str; 4] = ["iteration", "cohort", "parameter", "value"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceDiagnostic {
    pub name: String,
    pub draws: usize,
    /// On the thinned trace; absent when undefined.
    pub durbin_watson: Option<f64>,
    /// Fraction of successive unthinned draws that differ.
    pub move_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnosis {
    pub thin: usize,
    pub traces: Vec<TraceDiagnostic>,
}

/// Traces in order of first appearance.
pub fn read_traces<R: Read>(reader: R) -> Result<Vec<(String, Vec<f64>)>, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::data(format!("draws header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Failure::data("draws file is empty"));
    }
    let long = header.iter().map(String::as_str).eq(LONG_HEADER);
    let mut traces: Vec<(String, Vec<f64>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    if !long {
        traces = header.iter().map(|h| (h.clone(), Vec::new())).collect();
    }
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Failure::data(format!("draws row {row}: {e}")))?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Failure::data(format!("draws row {row}: cannot parse `{s}`")))
        };
        if long {
            let key = format!("{}/{}", &rec[1], &rec[2]);
            let v = parse(&rec[3])?;
            let k = *index.entry(key.clone()).or_insert_with(|| {
                traces.push((key, Vec::new()));
                traces.len() - 1
            });
            traces[k].1.push(v);
        } else {
            for (slot, cell) in traces.iter_mut().zip(rec.iter()) {
                slot.1.push(parse(cell)?);
            }
        }
    }
    if traces.iter().all(|(_, t)| t.is_empty()) {
        return Err(Failure::data("draws file holds no draws"));
    }
    Ok(traces)
}

pub fn move_rate(trace: &[f64]) -> Option<f64> {
    if trace.len() < 2 {
        return None;
    }
    let moves = trace.windows(2).filter(|w| w[0] != w[1]).count();
    Some(moves as f64 / (trace.len() - 1) as f64)
}

pub fn diagnose<R: Read>(reader: R, thin: usize) -> Result<Diagnosis, Failure> {
    if thin == 0 {
        return Err(Failure::config("thin must be at least 1"));
    }
    let traces = read_traces(reader)?
        .into_iter()
        .map(|(name, t)| {
            let thinned: Vec<f64> = t.iter().step_by(thin).copied().collect();
            TraceDiagnostic {
                name,
                draws: t.len(),
                durbin_watson: durbin_watson(&thinned).ok(),
                move_rate: move_rate(&t),
            }
        })
        .collect();
    Ok(Diagnosis { thin, traces })
}
