//! Result rows and their CSV form.

use std::path::Path;

use crate::error::CliError;

pub const CSV_HEADER: [&str; 6] = ["seed", "network", "method", "params", "metric", "value"];

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub seed: u64,
    /// `fp` or `bnn`.
    pub network: &'static str,
    pub method: &'static str,
    /// `key=value` pairs joined by `;`.
    pub params: String,
    pub metric: &'static str,
    pub value: f64,
}

impl ResultRow {
    pub fn new(
        seed: u64,
        network: &'static str,
        method: &'static str,
        params: impl Into<String>,
        metric: &'static str,
        value: f64,
    ) -> Self {
        Self {
            seed,
            network,
            method,
            params: params.into(),
            metric,
            value,
        }
    }
}

pub fn encode_csv(rows: &[ResultRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| CliError::Config(format!("csv: {e}"));
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in rows {
        if !r.value.is_finite() {
            return Err(CliError::Config(format!(
                "non-finite value for {} {} {} {}",
                r.seed, r.network, r.method, r.metric
            )));
        }
        w.write_record([
            r.seed.to_string(),
            r.network.to_string(),
            r.method.to_string(),
            r.params.clone(),
            r.metric.to_string(),
            r.value.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv: {e}")))
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<(), CliError> {
    let bytes = encode_csv(rows)?;
    std::fs::write(path, bytes).map_err(|e| CliError::from_io(path, e))
}

/// Parsed CSV row: `(seed, network, method, params, metric, value)`.
pub type RawRow = (u64, String, String, String, String, f64);

pub fn read_csv(path: &Path) -> Result<Vec<RawRow>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| CliError::Config(format!("csv: {e}")))?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(CliError::Config(format!("unexpected csv header {headers:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::Config(format!("csv: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_values() {
        let rows = vec![
            ResultRow::new(3, "bnn", "smoothgrad", "noise=0.2;n=25", "total_variation", 0.125),
            ResultRow::new(3, "fp", "train", "epoch=1", "train_accuracy", 1.0),
        ];
        let text = String::from_utf8(encode_csv(&rows).unwrap()).unwrap();
        assert_eq!(
            text,
            "seed,network,method,params,metric,value\n\
             3,bnn,smoothgrad,noise=0.2;n=25,total_variation,0.125\n\
             3,fp,train,epoch=1,train_accuracy,1\n"
        );
    }

    #[test]
    fn non_finite_rejected() {
        let rows = vec![ResultRow::new(0, "fp", "gradient", "", "total_variation", f64::NAN)];
        assert!(encode_csv(&rows).is_err());
    }
}
