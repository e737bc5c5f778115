//! Instance files (JSON) and iteration traces (CSV).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gen::GeneratedProblem;
use crate::lo::{dual_slack, proximity, LoInstance};
use crate::scalar::{lit, to_f64, Real};
use crate::solver::TraceRecord;

/// Header of every trace file.
pub const TRACE_HEADER: [&str; 11] = [
    "k",
    "round",
    "mu",
    "delta",
    "lambda_star",
    "cos_psi",
    "err_ratio",
    "gap",
    "min_slack",
    "kappa_as_inv",
    "omega",
];

/// On-disk instance with optional starting data. `A` is stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    /// `δ(s0, μ0)` measured when the file was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
}

/// Allowed difference between a stored `delta0` and its recomputation.
pub const DELTA_CERTIFICATE_TOL: f64 = 1e-6;

fn vec_f64<T: Real>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| to_f64(*x)).collect()
}

fn check_len(context: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

impl InstanceFile {
    pub fn from_instance<T: Real>(inst: &LoInstance<T>) -> Self {
        let (m, n) = (inst.m(), inst.n());
        let a = inst.a();
        Self {
            m,
            n,
            a: (0..m).flat_map(|i| (0..n).map(move |j| to_f64(a[(i, j)]))).collect(),
            b: vec_f64(inst.b()),
            c: vec_f64(inst.c()),
            y0: None,
            s0: None,
            x0: None,
            mu0: None,
            delta0: None,
        }
    }

    pub fn from_problem<T: Real>(p: &GeneratedProblem<T>) -> Self {
        Self {
            y0: Some(vec_f64(&p.y0)),
            s0: Some(vec_f64(&p.s0)),
            x0: Some(vec_f64(&p.x0)),
            mu0: Some(to_f64(p.mu0)),
            delta0: Some(to_f64(p.delta0)),
            ..Self::from_instance(&p.instance)
        }
    }

    /// Checks array lengths and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n < self.m {
            return Err(Error::InvalidInstance(format!(
                "need n >= m >= 1, got m = {}, n = {}",
                self.m, self.n
            )));
        }
        check_len("A", &self.a, self.m * self.n)?;
        check_len("b", &self.b, self.m)?;
        check_len("c", &self.c, self.n)?;
        for (name, v, len) in [("y0", &self.y0, self.m), ("s0", &self.s0, self.n), ("x0", &self.x0, self.n)] {
            if let Some(v) = v {
                check_len(name, v, len)?;
            }
        }
        let all = self
            .a
            .iter()
            .chain(&self.b)
            .chain(&self.c)
            .chain(self.y0.iter().flatten())
            .chain(self.s0.iter().flatten())
            .chain(self.x0.iter().flatten())
            .chain(self.mu0.iter())
            .chain(self.delta0.iter());
        for v in all {
            if !v.is_finite() {
                return Err(Error::InvalidInstance("non-finite number in instance file".into()));
            }
        }
        Ok(())
    }

    pub fn instance<T: Real>(&self) -> Result<LoInstance<T>> {
        self.validate()?;
        let a = DMatrix::from_row_iterator(self.m, self.n, self.a.iter().map(|v| lit::<T>(*v)));
        LoInstance::new(a, to_vec(&self.b), to_vec(&self.c))
    }

    pub fn y0<T: Real>(&self) -> Option<DVector<T>> {
        self.y0.as_deref().map(to_vec)
    }

    /// Loads the instance and its start, re-checking `s0 = c − Aᵀy0` and
    /// the embedded proximity certificate.
    pub fn start<T: Real>(&self) -> Result<(LoInstance<T>, DVector<T>, T)> {
        let inst = self.instance::<T>()?;
        let (Some(y0), Some(mu0)) = (self.y0::<T>(), self.mu0) else {
            return Err(Error::InvalidInstance("instance file has no y0/mu0 start".into()));
        };
        let mu0: T = lit(mu0);
        let s = dual_slack(&inst, &y0)?;
        if let Some(s0) = &self.s0 {
            let drift = (&s - to_vec::<T>(s0)).norm();
            let tol = crate::lo::reconstruction_tolerance(&inst);
            if drift > tol {
                return Err(Error::InvalidInstance(format!(
                    "s0 differs from c - A^T y0 by {:e}",
                    to_f64(drift)
                )));
            }
        }
        if let Some(d) = self.delta0 {
            if s.min() > T::zero() && mu0 > T::zero() {
                let measured = to_f64(proximity(&inst, &s, mu0)?.delta);
                if (measured - d).abs() > DELTA_CERTIFICATE_TOL {
                    return Err(Error::InvalidInstance(format!(
                        "embedded delta0 = {d:e} but the start measures {measured:e}"
                    )));
                }
            }
        }
        Ok((inst, y0, mu0))
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let f: Self = serde_json::from_reader(r)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_writer<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

fn to_vec<T: Real>(v: &[f64]) -> DVector<T> {
    DVector::from_iterator(v.len(), v.iter().map(|x| lit::<T>(*x)))
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `records` under [`TRACE_HEADER`].
pub fn write_trace<W: Write>(w: W, records: &[TraceRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(TRACE_HEADER)?;
    for r in records {
        out.write_record([
            r.k.to_string(),
            r.round.to_string(),
            fmt_f64(r.mu),
            fmt_f64(r.delta),
            fmt_f64(r.lambda_star),
            fmt_f64(r.cos_psi),
            fmt_f64(r.err_ratio),
            fmt_f64(r.gap),
            fmt_f64(r.min_slack),
            fmt_f64(r.kappa_as_inv),
            fmt_f64(r.omega),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a trace, rejecting any header other than [`TRACE_HEADER`].
pub fn read_trace<R: Read>(r: R) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::InvalidInstance(format!(
            "unexpected trace header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<Vec<TraceRecord>, _>>()?)
}

pub fn write_trace_file(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), records)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    read_trace(BufReader::new(File::open(path)?))
}
