use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use super::{ChainOutput, SummaryRow};

/// One row per kept iteration: parameters, then the log posterior.
pub fn write_chain_csv<W: Write>(chain: &ChainOutput, out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = chain.names.clone();
    header.push("log_posterior".into());
    w.write_record(&header)?;
    for (r, lp) in chain.log_posterior.iter().enumerate() {
        let mut row: Vec<String> = chain.samples.row(r).iter().map(|v| v.to_string()).collect();
        row.push(lp.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_chain_csv`]: parameter names, samples and log posterior.
pub fn read_chain_csv<R: Read>(
    input: R,
) -> Result<(Vec<String>, DMatrix<f64>, Vec<f64>), csv::Error> {
    let mut r = csv::Reader::from_reader(input);
    let mut names: Vec<String> = r.headers()?.iter().map(String::from).collect();
    names.pop();
    let dim = names.len();
    let mut values = Vec::new();
    let mut lp = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                csv::Error::from(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("bad number {field:?}"),
                ))
            })?;
            if k < dim {
                values.push(v);
            } else {
                lp.push(v);
            }
        }
    }
    Ok((names, DMatrix::from_row_slice(lp.len(), dim, &values), lp))
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Acceptance statistics plus the caller's config echo.
pub fn chain_sidecar(chain: &ChainOutput, config: Value) -> Value {
    json!({
        "kept": chain.len(),
        "blocks": chain.blocks.iter().map(|b| json!({
            "name": b.name,
            "proposed": b.proposed,
            "accepted": b.accepted,
            "infeasible": b.infeasible,
            "rate": b.rate(),
        })).collect::<Vec<_>>(),
        "infeasible": chain.infeasible,
        "audit": chain.audit,
        "config": config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_csv_round_trip() {
        let chain = ChainOutput {
            names: vec!["beta0".into(), "tau".into()],
            samples: DMatrix::from_row_slice(2, 2, &[1.5, 0.1, -2.25, 1e-300]),
            theta: DMatrix::zeros(2, 0),
            log_posterior: vec![-10.0, -11.5],
            blocks: vec![],
            infeasible: 0,
            audit: None,
        };
        let mut buf = Vec::new();
        write_chain_csv(&chain, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("beta0,tau,log_posterior\n"));
        let (names, samples, lp) = read_chain_csv(buf.as_slice()).unwrap();
        assert_eq!(names, chain.names);
        assert_eq!(samples, chain.samples);
        assert_eq!(lp, chain.log_posterior);
    }
}
