//! Delimited trace files: one row per recorded sample.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::identify::{Chain, Sample, TraceLayout};
use crate::scalar::{lit, to_f64, Real};

pub fn header(layout: &TraceLayout) -> Vec<String> {
    let mut h = vec!["iteration".to_string()];
    h.extend(layout.parameter_names());
    h.extend(layout.factor_names());
    h
}

/// Streams samples to `writer`, flushing after each row.
pub struct TraceWriter<W: Write> {
    out: csv::Writer<W>,
    layout: TraceLayout,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(writer: W, layout: TraceLayout) -> Result<Self> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(header(&layout))?;
        Ok(TraceWriter { out, layout })
    }

    pub fn write<T: Real>(&mut self, sample: &Sample<T>) -> Result<()> {
        let mut row = vec![sample.iteration.to_string()];
        row.extend(sample.parameters(&self.layout).iter().map(|v| format!("{v}")));
        if self.layout.factors {
            let f = sample
                .factors
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("sample is missing its factors".into()))?;
            for i in 0..f.nrows() {
                for c in 0..f.ncols() {
                    row.push(format!("{}", to_f64(f[(i, c)])));
                }
            }
        }
        self.out.write_record(&row)?;
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        self.out
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn write_trace<T: Real, W: Write>(chain: &Chain<T>, writer: W) -> Result<()> {
    let mut w = TraceWriter::new(writer, chain.layout.clone())?;
    for s in &chain.samples {
        w.write(s)?;
    }
    w.finish()?;
    Ok(())
}

fn indices(name: &str, prefix: &str) -> Option<Vec<usize>> {
    let inner = name.strip_prefix(prefix)?.strip_prefix('[')?.strip_suffix(']')?;
    inner.split(',').map(|s| s.trim().parse().ok()).collect()
}

fn parse_err(msg: String) -> Error {
    Error::Parse(msg)
}

/// Reads a trace written by [`write_trace`]; the chain is taken to be at
/// temperature 1.
pub fn read_trace<T: Real, R: Read>(reader: R) -> Result<Chain<T>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let head: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if head.first().map(String::as_str) != Some("iteration") {
        return Err(parse_err("trace header must start with 'iteration'".into()));
    }
    let (mut k, mut p, mut n) = (0, 0, 0);
    let mut cut_labels = Vec::new();
    let mut has_factors = false;
    for name in &head[1..] {
        if let Some(ix) = indices(name, "Lambda") {
            p = p.max(ix[0]);
        } else if let Some(ix) = indices(name, "L") {
            k = k.max(ix[0]);
        } else if let Some(ix) = indices(name, "gamma") {
            if ix.len() != 2 {
                return Err(parse_err(format!("bad cut-point column '{name}'")));
            }
            cut_labels.push((ix[0], ix[1]));
        } else if let Some(ix) = indices(name, "F") {
            has_factors = true;
            n = n.max(ix[0]);
        } else {
            return Err(parse_err(format!("unrecognized trace column '{name}'")));
        }
    }
    let layout = TraceLayout { n_taxa: n, n_traits: p, k, cut_labels, factors: has_factors };
    if header(&layout) != head {
        return Err(parse_err("trace columns are not in the expected layout".into()));
    }
    let entries = layout.loading_entries();
    let n_cuts = layout.cut_labels.len();
    let mut samples = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |c: usize| -> Result<f64> {
            record[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(format!("row {}: cannot parse '{}' in {}", line + 2, &record[c], head[c])))
        };
        let iteration = record[0]
            .trim()
            .parse::<u64>()
            .map_err(|_| parse_err(format!("row {}: bad iteration '{}'", line + 2, &record[0])))?;
        let mut col = 1;
        let mut loadings = DMatrix::zeros(k, p);
        for &(r, j) in &entries {
            loadings[(r, j)] = lit(field(col)?);
            col += 1;
        }
        let mut precision = DVector::zeros(p);
        for j in 0..p {
            precision[j] = lit(field(col)?);
            col += 1;
        }
        let mut cutpoints = Vec::with_capacity(n_cuts);
        for _ in 0..n_cuts {
            cutpoints.push(lit(field(col)?));
            col += 1;
        }
        let factors = if has_factors {
            let mut f = DMatrix::zeros(n, k);
            for i in 0..n {
                for c in 0..k {
                    f[(i, c)] = lit(field(col)?);
                    col += 1;
                }
            }
            Some(f)
        } else {
            None
        };
        samples.push(Sample { iteration, loadings, precision, cutpoints, factors });
    }
    Ok(Chain { layout, beta: T::one(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traits::ColumnKind;

    #[test]
    fn round_trip() {
        let kinds = [ColumnKind::Continuous, ColumnKind::Ordinal(4), ColumnKind::Binary];
        let layout = TraceLayout::new(2, 3, 2, &kinds, true);
        let sample = |m: u64| Sample {
            iteration: m,
            loadings: DMatrix::from_row_slice(2, 3, &[0.1 * m as f64, -0.2, 1.0 / 3.0, 0.0, 5e-20, -7.0]),
            precision: DVector::from_vec(vec![2.5, 1.0, 1.0]),
            cutpoints: vec![0.4, 1.1],
            factors: Some(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, m as f64])),
        };
        let chain = Chain { layout, beta: 1.0, samples: vec![sample(1), sample(2)] };
        let mut buf = Vec::new();
        write_trace(&chain, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("iteration,\"L[1,1]\",\"L[1,2]\",\"L[1,3]\",\"L[2,2]\",\"L[2,3]\",Lambda[1],"));
        assert!(first.ends_with("\"gamma[2,2]\",\"gamma[2,3]\",\"F[1,1]\",\"F[1,2]\",\"F[2,1]\",\"F[2,2]\""));
        let back: Chain<f64> = read_trace(buf.as_slice()).unwrap();
        assert_eq!(back, chain);
    }
}
