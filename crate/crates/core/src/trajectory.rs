//! Uniformly sampled COI angle/speed records and their CSV form.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Relative tolerance when checking sample times read from CSV.
const TIME_TOL: f64 = 1e-6;

/// Samples of `δ̃` and `ω̃` for the independent machines. Row `i` is taken at
/// `start_time + i·sample_period`; columns are all angles then all speeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    sample_period: f64,
    start_time: f64,
    machines: Vec<usize>,
    data: Vec<f64>,
}

impl Trajectory {
    /// `machines` holds the generator labels of the recorded columns.
    pub fn new(sample_period: f64, start_time: f64, machines: Vec<usize>) -> Result<Self> {
        if !(sample_period > 0.0) {
            return Err(Error::InvalidInput("sample period must be positive".into()));
        }
        if machines.is_empty() {
            return Err(Error::InvalidInput("trajectory needs at least one machine".into()));
        }
        Ok(Self { sample_period, start_time, machines, data: Vec::new() })
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::InvalidInput(format!("row has {} values, expected {}", row.len(), self.width())));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn machines(&self) -> &[usize] {
        &self.machines
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn width(&self) -> usize {
        2 * self.machines.len()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn time(&self, row: usize) -> f64 {
        self.start_time + row as f64 * self.sample_period
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width())
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    /// Column names: `dtilde_<label>` then `wtilde_<label>`.
    pub fn column_names(&self) -> Vec<String> {
        let d = self.machines.iter().map(|m| format!("dtilde_{m}"));
        let w = self.machines.iter().map(|m| format!("wtilde_{m}"));
        d.chain(w).collect()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidInput(format!("no column '{name}' (have {})", self.column_names().join(", "))))
    }

    /// Rows with sample time in `[t_start, t_end]`.
    pub fn window_rows(&self, t_start: f64, t_end: f64) -> Result<Range<usize>> {
        if !(t_end > t_start) {
            return Err(Error::InvalidInput(format!("empty window [{t_start}, {t_end}]")));
        }
        let slack = 1e-9 * self.sample_period;
        let first = ((t_start - self.start_time - slack) / self.sample_period).ceil().max(0.0) as usize;
        let last = ((t_end - self.start_time + slack) / self.sample_period).floor();
        if last < 0.0 || first >= self.len() || t_end > self.end_time() + self.sample_period * 1e-6 {
            return Err(Error::InvalidInput(format!(
                "window [{t_start}, {t_end}] s is outside the recorded span [{}, {}] s",
                self.start_time,
                self.end_time()
            )));
        }
        Ok(first..(last as usize + 1).min(self.len()))
    }

    /// Copy of the rows inside `[t_start, t_end]`.
    pub fn slice(&self, t_start: f64, t_end: f64) -> Result<Self> {
        let r = self.window_rows(t_start, t_end)?;
        let w = self.width();
        Ok(Self {
            sample_period: self.sample_period,
            start_time: self.time(r.start),
            machines: self.machines.clone(),
            data: self.data[r.start * w..r.end * w].to_vec(),
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.column_names());
        w.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(self.width() + 1);
        for (i, row) in self.rows().enumerate() {
            rec.clear();
            rec.push(self.time(i).to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let machines = parse_header(&header)?;
        let mut times = Vec::new();
        let mut data = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::InvalidInput(format!("row {} has {} fields", times.len() + 1, rec.len())));
            }
            let mut vals = rec.iter().map(|s| {
                s.parse::<f64>().map_err(|_| Error::InvalidInput(format!("not a number: '{s}'")))
            });
            times.push(vals.next().unwrap()?);
            for v in vals {
                data.push(v?);
            }
        }
        if times.len() < 2 {
            return Err(Error::InvalidInput("trajectory CSV needs at least two rows".into()));
        }
        let start = times[0];
        let period = (times[times.len() - 1] - start) / (times.len() - 1) as f64;
        if !(period > 0.0) {
            return Err(Error::InvalidInput("sample times must increase".into()));
        }
        for (i, &t) in times.iter().enumerate() {
            let expect = start + i as f64 * period;
            if (t - expect).abs() > TIME_TOL * period.max(expect.abs()) {
                return Err(Error::InvalidInput(format!("non-uniform sampling at row {} (t = {t})", i + 1)));
            }
        }
        Ok(Self { sample_period: period, start_time: start, machines, data })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn parse_header(header: &[String]) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("unexpected trajectory header: {}", header.join(",")));
    if header.first().map(String::as_str) != Some("t") || header.len() < 3 || header.len() % 2 == 0 {
        return Err(bad());
    }
    let k = (header.len() - 1) / 2;
    let label = |name: &str, prefix: &str| name.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok());
    let machines: Vec<usize> = header[1..=k].iter().map(|h| label(h, "dtilde_")).collect::<Option<_>>().ok_or_else(bad)?;
    let speeds: Vec<usize> = header[k + 1..].iter().map(|h| label(h, "wtilde_")).collect::<Option<_>>().ok_or_else(bad)?;
    if machines != speeds {
        return Err(bad());
    }
    Ok(machines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let mut t = Trajectory::new(0.01, 0.0, vec![1, 2]).unwrap();
        for i in 0..101 {
            let x = i as f64 * 0.1;
            t.push_row(&[x.sin(), x.cos(), 0.1 * x, -1.0 / 3.0]).unwrap();
        }
        t
    }

    #[test]
    fn header_and_shape() {
        let t = sample();
        assert_eq!(t.len(), 101);
        assert_eq!(t.column_names(), ["dtilde_1", "dtilde_2", "wtilde_1", "wtilde_2"]);
        assert_eq!(t.column_index("wtilde_1").unwrap(), 2);
        assert!(t.column_index("wtilde_3").is_err());
        assert!((t.end_time() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = sample();
        let text = t.to_csv_string().unwrap();
        assert!(text.starts_with("t,dtilde_1,dtilde_2,wtilde_1,wtilde_2\n"));
        let back = Trajectory::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.machines(), t.machines());
        assert_eq!(back.data, t.data);
        assert!((back.sample_period() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn window_selection_is_inclusive() {
        let t = sample();
        assert_eq!(t.window_rows(0.0, 1.0).unwrap(), 0..101);
        assert_eq!(t.window_rows(0.2, 0.3).unwrap(), 20..31);
        assert!(t.window_rows(0.5, 2.0).is_err());
        assert!(t.window_rows(0.5, 0.5).is_err());
        let s = t.slice(0.2, 0.3).unwrap();
        assert_eq!(s.len(), 11);
        assert!((s.start_time() - 0.2).abs() < 1e-12);
        assert_eq!(s.row(0), t.row(20));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Trajectory::read_csv("t,x\n0,1\n1,2\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,dtilde_1,wtilde_1\n0,1,2\n1,2,3\n3,1,1\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,dtilde_1,wtilde_1\n0,1,2\n".as_bytes()).is_err());
        let mut t = Trajectory::new(0.1, 0.0, vec![1]).unwrap();
        assert!(t.push_row(&[1.0]).is_err());
    }
}
