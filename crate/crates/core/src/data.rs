//! Data ingestion, block layout and the normalized-rank (copula) transform.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{DepError, Result};

/// Largest number of blocks; subsets are enumerated as `u32` bitmasks.
pub const MAX_BLOCKS: usize = 16;

/// Row-major `n x p` matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl DataMatrix {
    pub fn new(values: Vec<f64>, nrows: usize, ncols: usize) -> Result<Self> {
        if ncols == 0 {
            return Err(DepError::NoColumns);
        }
        if nrows < 2 {
            return Err(DepError::TooFewRows { n: nrows, min: 2 });
        }
        if values.len() != nrows * ncols {
            return Err(DepError::DimensionMismatch {
                expected: nrows * ncols,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DepError::NonFinite {
                row: pos / ncols,
                column: pos % ncols,
            });
        }
        Ok(Self {
            values,
            nrows,
            ncols,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(DepError::Ragged {
                    row: i as u64 + 1,
                    expected: ncols,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(values, rows.len(), ncols)
    }

    /// Single-column matrix.
    pub fn from_column(column: &[f64]) -> Result<Self> {
        Self::new(column.to_vec(), column.len(), 1)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ncols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    /// New matrix holding the given columns in order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        for &c in columns {
            if c >= self.ncols {
                return Err(DepError::ColumnOutOfRange {
                    column: c,
                    ncols: self.ncols,
                });
            }
        }
        let mut values = Vec::with_capacity(self.nrows * columns.len());
        for i in 0..self.nrows {
            let row = self.row(i);
            values.extend(columns.iter().map(|&c| row[c]));
        }
        Self::new(values, self.nrows, columns.len())
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let end = end.min(self.nrows);
        let start = start.min(end);
        Self::new(
            self.values[start * self.ncols..end * self.ncols].to_vec(),
            end - start,
            self.ncols,
        )
    }

    /// Row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        debug_assert_eq!(perm.len(), self.nrows);
        let mut values = Vec::with_capacity(self.values.len());
        for &src in perm {
            values.extend_from_slice(self.row(src));
        }
        Self {
            values,
            nrows: self.nrows,
            ncols: self.ncols,
        }
    }

    /// Apply `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.values.iter().map(|&v| f(v)).collect(),
            self.nrows,
            self.ncols,
        )
    }

    /// Write as CSV with a `c0,c1,...` header. Values use the shortest
    /// representation that parses back to the same bits.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let io_err = |source| DepError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
        let header: Vec<String> = (0..self.ncols).map(|j| format!("c{j}")).collect();
        writeln!(out, "{}", header.join(",")).map_err(io_err)?;
        for i in 0..self.nrows {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(",")).map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }
}

/// Ordered list of disjoint column-index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    blocks: Vec<Vec<usize>>,
}

impl BlockSpec {
    pub fn new(blocks: Vec<Vec<usize>>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() > MAX_BLOCKS {
            return Err(DepError::BlockCount {
                d: blocks.len(),
                min: 1,
                max: MAX_BLOCKS,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        for (k, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(DepError::EmptyBlock(k));
            }
            for &c in block {
                if !seen.insert(c) {
                    return Err(DepError::OverlappingBlocks(c));
                }
            }
        }
        Ok(Self { blocks })
    }

    /// One single-column block per column `0..ncols`.
    pub fn singletons(ncols: usize) -> Result<Self> {
        Self::new((0..ncols).map(|c| vec![c]).collect())
    }

    /// Parse a layout descriptor such as `"0;1"`, `"0:2;2:4"` or `"0,3;1:3"`.
    ///
    /// Blocks are separated by `;`. Inside a block, items are separated by
    /// `,` and are either a single column index or a half-open range `a:b`.
    pub fn parse(descriptor: &str) -> Result<Self> {
        let bad = |reason: String| DepError::BlockDescriptor {
            descriptor: descriptor.to_string(),
            reason,
        };
        let mut blocks = Vec::new();
        for (k, part) in descriptor.split(';').enumerate() {
            let part = part.trim();
            if part.is_empty() {
                return Err(DepError::EmptyBlock(k));
            }
            let mut block = Vec::new();
            for item in part.split(',') {
                let item = item.trim();
                let index = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| bad(format!("{s:?} is not a column index")))
                };
                match item.split_once(':') {
                    Some((a, b)) => {
                        let (a, b) = (index(a)?, index(b)?);
                        if a >= b {
                            return Err(bad(format!("empty range {a}:{b}")));
                        }
                        block.extend(a..b);
                    }
                    None => block.push(index(item)?),
                }
            }
            blocks.push(block);
        }
        Self::new(blocks)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn check_against(&self, ncols: usize) -> Result<()> {
        for &c in self.blocks.iter().flatten() {
            if c >= ncols {
                return Err(DepError::ColumnOutOfRange { column: c, ncols });
            }
        }
        Ok(())
    }
}

/// Observations split into `d` column blocks, each block materialized as
/// its own matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSample {
    data: DataMatrix,
    spec: BlockSpec,
    blocks: Vec<DataMatrix>,
}

impl BlockSample {
    pub fn new(data: DataMatrix, spec: BlockSpec) -> Result<Self> {
        spec.check_against(data.ncols())?;
        let blocks = spec
            .blocks()
            .iter()
            .map(|cols| data.select_columns(cols))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { data, spec, blocks })
    }

    /// Two-block sample from separate `X` and `Y` matrices.
    pub fn from_pair(x: &DataMatrix, y: &DataMatrix) -> Result<Self> {
        Self::from_blocks(&[x.clone(), y.clone()])
    }

    /// Concatenate blocks column-wise.
    pub fn from_blocks(blocks: &[DataMatrix]) -> Result<Self> {
        let n = blocks.first().map_or(0, DataMatrix::nrows);
        let mut layout = Vec::with_capacity(blocks.len());
        let mut offset = 0;
        for b in blocks {
            if b.nrows() != n {
                return Err(DepError::DimensionMismatch {
                    expected: n,
                    found: b.nrows(),
                });
            }
            layout.push((offset..offset + b.ncols()).collect());
            offset += b.ncols();
        }
        let spec = BlockSpec::new(layout)?;
        let mut values = Vec::with_capacity(n * offset);
        for i in 0..n {
            for b in blocks {
                values.extend_from_slice(b.row(i));
            }
        }
        Self::new(DataMatrix::new(values, n, offset)?, spec)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.spec.len()
    }

    pub fn data(&self) -> &DataMatrix {
        &self.data
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    pub fn block(&self, k: usize) -> &DataMatrix {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[DataMatrix] {
        &self.blocks
    }

    /// Block sizes `p_1..p_d`.
    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(DataMatrix::ncols).collect()
    }

    /// Same layout with every column replaced by its normalized ranks.
    pub fn to_ranks(&self) -> Result<Self> {
        Self::new(to_ranks(&self.data).into_inner(), self.spec.clone())
    }

    /// Rows of block `k` reordered by `perms[k]` (identity where `None`).
    pub fn permute_blocks(&self, perms: &[Option<Vec<usize>>]) -> Result<Self> {
        let blocks: Vec<DataMatrix> = self
            .blocks
            .iter()
            .zip(perms)
            .map(|(b, p)| match p {
                Some(p) => b.permute_rows(p),
                None => b.clone(),
            })
            .collect();
        Self::from_blocks(&blocks)
    }
}

/// Matrix of normalized ranks `R / n` with mid-ranks for ties.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix(DataMatrix);

impl RankMatrix {
    pub fn as_matrix(&self) -> &DataMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DataMatrix {
        self.0
    }
}

/// Column-wise normalized ranks; tied values share the average of their
/// positions.
pub fn to_ranks(data: &DataMatrix) -> RankMatrix {
    let n = data.nrows();
    let p = data.ncols();
    let nf = n as f64;
    let mut out = vec![0.0; n * p];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for j in 0..p {
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| data.get(a, j).total_cmp(&data.get(b, j)));
        let mut start = 0;
        while start < n {
            let v = data.get(order[start], j);
            let mut end = start + 1;
            while end < n && data.get(order[end], j) == v {
                end += 1;
            }
            // positions start+1 ..= end, averaged
            let rank = (start + 1 + end) as f64 / 2.0;
            for &i in &order[start..end] {
                out[i * p + j] = rank / nf;
            }
            start = end;
        }
    }
    RankMatrix(DataMatrix {
        values: out,
        nrows: n,
        ncols: p,
    })
}

/// Read a numeric CSV. A first row containing any non-numeric cell is
/// treated as a header.
pub fn read_csv(path: &Path) -> Result<(DataMatrix, Option<Vec<String>>)> {
    let file = File::open(path).map_err(|source| DepError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut header: Option<Vec<String>> = None;
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DepError::Csv(e.to_string()))?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if idx == 0 && record.iter().any(|cell| cell.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_string).collect());
            ncols = Some(record.len());
            continue;
        }
        let expected = *ncols.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DepError::Ragged {
                row: line,
                expected,
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let column = || {
                header
                    .as_ref()
                    .and_then(|h| h.get(j).cloned())
                    .unwrap_or_else(|| j.to_string())
            };
            let v: f64 = cell.parse().map_err(|_| DepError::NonNumeric {
                row: line,
                column: column(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DepError::NonNumeric {
                    row: line,
                    column: column(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
        nrows += 1;
    }
    let data = DataMatrix::new(values, nrows, ncols.unwrap_or(0))?;
    Ok((data, header))
}

/// Read a CSV and split it into blocks.
pub fn load_csv(path: &Path, spec: &BlockSpec) -> Result<BlockSample> {
    let (data, _) = read_csv(path)?;
    BlockSample::new(data, spec.clone())
}
