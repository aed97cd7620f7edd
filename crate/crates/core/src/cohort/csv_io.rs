use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{validate_cohort, Outcome, PatientTimeline, VisitRecord};
use crate::features::N_FEATURES;
use crate::{Error, Result};

/// Exact header of the cohort CSV format.
pub const CSV_HEADER: [&str; 12] = [
    "patient_id",
    "visit_day",
    "current_age",
    "days_since_last_visit",
    "dose_reduced",
    "ecog",
    "sae_count",
    "systolic_bp",
    "bmi",
    "pulse",
    "death_day",
    "last_followup_day",
];

pub fn load_cohort(path: impl AsRef<Path>) -> Result<Vec<PatientTimeline>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(std::io::BufReader::new(file))
}

struct Pending {
    visits: Vec<VisitRecord>,
    death_day: Option<i64>,
    last_followup_day: Option<i64>,
    first_line: usize,
}

/// Parses a cohort from CSV. Patients are returned in order of first
/// appearance; rows of one patient must be in increasing `visit_day` order.
pub fn read_cohort<R: Read>(reader: R) -> Result<Vec<PatientTimeline>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut pending: HashMap<String, Pending> = HashMap::new();

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", CSV_HEADER.len(), record.len()),
            });
        }
        let pid = record[0].trim();
        if pid.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty patient_id".into(),
            });
        }
        let visit_day = parse_int(&record[1], line, "visit_day")?.ok_or_else(|| Error::Parse {
            line,
            message: "visit_day is required".into(),
        })?;
        let mut features = [None; N_FEATURES];
        for (j, slot) in features.iter_mut().enumerate() {
            *slot = parse_real(&record[2 + j], line, CSV_HEADER[2 + j])?;
        }
        let death_day = parse_int(&record[10], line, "death_day")?;
        let last_followup_day = parse_int(&record[11], line, "last_followup_day")?;

        let entry = pending.entry(pid.to_string()).or_insert_with(|| {
            order.push(pid.to_string());
            Pending {
                visits: Vec::new(),
                death_day,
                last_followup_day,
                first_line: line,
            }
        });
        if entry.death_day != death_day || entry.last_followup_day != last_followup_day {
            return Err(Error::Integrity(format!(
                "patient {pid}: outcome columns differ between line {} and line {line}",
                entry.first_line
            )));
        }
        if let Some(prev) = entry.visits.last() {
            if visit_day <= prev.visit_day {
                return Err(Error::Integrity(format!(
                    "patient {pid}: visit_day {visit_day} at line {line} does not increase after {}",
                    prev.visit_day
                )));
            }
        }
        entry.visits.push(VisitRecord {
            patient_id: pid.to_string(),
            visit_day,
            features,
        });
    }

    let mut cohort = Vec::with_capacity(order.len());
    for pid in order {
        let p = pending.remove(&pid).expect("recorded patient");
        let outcome = match (p.death_day, p.last_followup_day) {
            (Some(d), _) => Outcome::died(d),
            (None, Some(f)) => Outcome::alive(f),
            (None, None) => {
                return Err(Error::Integrity(format!(
                    "patient {pid}: neither death_day nor last_followup_day is present"
                )))
            }
        };
        cohort.push(PatientTimeline {
            patient_id: pid,
            visits: p.visits,
            outcome,
        });
    }
    validate_cohort(&cohort)?;
    Ok(cohort)
}

fn parse_int(field: &str, line: usize, column: &str) -> Result<Option<i64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field.parse::<i64>().map(Some).map_err(|_| Error::Parse {
        line,
        message: format!("{column}: `{field}` is not an integer"),
    })
}

fn parse_real(field: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            line,
            message: format!("{column}: `{field}` is not a finite number"),
        }),
    }
}

pub fn write_cohort(path: impl AsRef<Path>, cohort: &[PatientTimeline]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    write_cohort_to(&mut out, cohort).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes the cohort CSV. Died patients repeat their death day in
/// `last_followup_day` so the column is populated on every row.
pub fn write_cohort_to<W: Write>(out: &mut W, cohort: &[PatientTimeline]) -> std::io::Result<()> {
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for patient in cohort {
        let (death, followup) = if patient.outcome.is_death() {
            (patient.outcome.event_day.to_string(), patient.outcome.event_day.to_string())
        } else {
            (String::new(), patient.outcome.event_day.to_string())
        };
        for visit in &patient.visits {
            write!(out, "{},{}", patient.patient_id, visit.visit_day)?;
            for value in &visit.features {
                match value {
                    Some(v) => write!(out, ",{v}")?,
                    None => write!(out, ",")?,
                }
            }
            writeln!(out, ",{death},{followup}")?;
        }
    }
    Ok(())
}
