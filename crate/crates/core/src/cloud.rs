use std::io::{Read, Write};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamDescriptor;

/// An `n x d` array of particle positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    positions: Array2<f64>,
    pub stream: Option<StreamDescriptor>,
}

impl ParticleCloud {
    pub fn new(positions: Array2<f64>) -> Self {
        Self { positions, stream: None }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self::new(Array2::zeros((n, dim)))
    }

    /// Builds a cloud from row vectors, which must all have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            flat.extend_from_slice(row);
        }
        let positions = Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self::new(positions))
    }

    pub fn from_flat(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let positions = Array2::from_shape_vec((n, dim), data).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self::new(positions))
    }

    pub fn with_stream(mut self, stream: StreamDescriptor) -> Self {
        self.stream = Some(stream);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut Array2<f64> {
        &mut self.positions
    }

    pub fn into_positions(self) -> Array2<f64> {
        self.positions
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.positions.row(i)
    }

    /// Row `i` as a contiguous slice.
    pub fn particle(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.as_slice()[i * d..(i + 1) * d]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.positions.as_slice().expect("particle clouds are stored in standard layout")
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let d = self.dim().max(1);
        self.as_slice().chunks_exact(d).take(self.len())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        self.positions.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_else(|| vec![f64::NAN; self.dim()])
    }

    /// Per-coordinate unbiased sample variance.
    pub fn variance(&self) -> Vec<f64> {
        self.positions.var_axis(Axis(0), 1.0).to_vec()
    }

    /// Selects the given rows, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self::new(self.positions.select(Axis(0), indices))
    }

    /// Writes the `x0,...,x{d-1}` CSV layout with LF line endings.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        let header: Vec<String> = (0..self.dim()).map(|j| format!("x{j}")).collect();
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.dim());
        for row in self.rows() {
            record.clear();
            record.extend(row.iter().map(|v| format!("{v:?}")));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len();
        let mut flat = Vec::new();
        let mut n = 0;
        for record in r.records() {
            let record = record?;
            if record.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: record.len() });
            }
            for field in record.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("not a number in samples CSV: {field:?}")))?;
                flat.push(v);
            }
            n += 1;
        }
        Self::from_flat(n, dim, flat)
    }
}

/// Serializable summary of a cloud used in reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CloudSummary {
    pub n: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl From<&ParticleCloud> for CloudSummary {
    fn from(c: &ParticleCloud) -> Self {
        Self { n: c.len(), dim: c.dim(), mean: c.mean(), variance: c.variance() }
    }
}
