//! File output: trajectory CSV and report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::monitor::{FunctionalSeries, MonitorSample};

/// Writes the header and one row per sample.
pub fn write_series_csv(path: &Path, series: &FunctionalSeries<f64>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", MonitorSample::<f64>::CSV_HEADER)?;
    for s in &series.samples {
        writeln!(w, "{}", s.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.txt` (key=value) and `<stem>.json` into `dir`.
pub fn write_report(dir: &Path, stem: &str, key_value: &str, json: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let txt = dir.join(format!("{stem}.txt"));
    let js = dir.join(format!("{stem}.json"));
    fs::write(&txt, key_value)?;
    fs::write(&js, json)?;
    Ok((txt, js))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_fixed_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/traj.csv");
        let mut series = FunctionalSeries::default();
        series.samples.push(MonitorSample {
            t: 0.0,
            gamma: 1.0,
            mean_r: 2.0,
            sup_a: 3.0,
            h_delta: 4.0,
            h_delta_integral: 0.0,
            h_alpha_beta: 5.0,
            v: 6.0,
            lb_margin: 0.0,
            lemma32_margin: 7.0,
            g1_norm: 0.0,
            g2_norm: 0.0,
        });
        write_series_csv(&path, &series).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,gamma,mean_r,sup_A,h_delta,h_delta_integral,h_alpha_beta,v,lb_margin,lemma32_margin"
        );
        assert_eq!(lines.next().unwrap(), "0,1,2,3,4,0,5,6,0,7");
    }
}
