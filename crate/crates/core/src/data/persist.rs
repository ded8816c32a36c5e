//! On-disk formats: the `LRDM` binary matrix, the key/value text document,
//! PNG image output and decomposition results.
//!
//! `LRDM` layout (all little-endian):
//!
//! ```text
//! offset 0   b"LRDM"
//! offset 4   u32 version (= 1)
//! offset 8   u32 rows
//! offset 12  u32 cols
//! offset 16  rows * cols f64 entries, column by column
//! ```

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{LrdError, Result};
use crate::geometry::{Image, TransformGroup, TransformParams, TransformStack};
use crate::ops::DenseMatrix;
use crate::solver::{DecompositionResult, Method, TraceRecord};

pub const LRDM_MAGIC: &[u8; 4] = b"LRDM";
pub const LRDM_VERSION: u32 = 1;
pub const LRDM_HEADER_LEN: usize = 16;

pub fn encode_matrix(m: &DenseMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(LRDM_HEADER_LEN + 8 * m.len());
    out.extend_from_slice(LRDM_MAGIC);
    out.extend_from_slice(&LRDM_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<DenseMatrix> {
    if bytes.len() < LRDM_HEADER_LEN {
        return Err(LrdError::format(path, "truncated header"));
    }
    if &bytes[0..4] != LRDM_MAGIC {
        return Err(LrdError::format(path, "bad magic"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = word(4);
    if version != LRDM_VERSION {
        return Err(LrdError::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(LRDM_HEADER_LEN))
        .ok_or_else(|| LrdError::format(path, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(LrdError::format(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes[LRDM_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DenseMatrix::from_vec(rows, cols, data))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)).map_err(|e| LrdError::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| LrdError::io(path, e))?;
    decode_matrix(&bytes, path)
}

/// Text document of `key: value` lines followed by named tables.
///
/// ```text
/// method: rasl
/// converged: true
///
/// [table transforms]
/// image p0 p1
/// 0 1.5 -2
/// ```
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextDoc {
    pub fields: Vec<(String, String)>,
    pub tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }
}

impl TextDoc {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.fields.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.fields {
            s.push_str(&format!("{k}: {v}\n"));
        }
        for t in &self.tables {
            s.push_str(&format!("\n[table {}]\n{}\n", t.name, t.columns.join(" ")));
            for r in &t.rows {
                s.push_str(&r.join(" "));
                s.push('\n');
            }
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut doc = TextDoc::default();
        let mut current: Option<Table> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                if let Some(t) = current.take() {
                    doc.tables.push(t);
                }
                continue;
            }
            if let Some(name) = line
                .strip_prefix("[table ")
                .and_then(|r| r.strip_suffix(']'))
            {
                if let Some(t) = current.take() {
                    doc.tables.push(t);
                }
                current = Some(Table {
                    name: name.trim().to_string(),
                    columns: Vec::new(),
                    rows: Vec::new(),
                });
                continue;
            }
            match current.as_mut() {
                Some(t) if t.columns.is_empty() => {
                    t.columns = line.split_whitespace().map(str::to_string).collect();
                }
                Some(t) => t
                    .rows
                    .push(line.split_whitespace().map(str::to_string).collect()),
                None => {
                    let (k, v) = line.split_once(':').ok_or_else(|| {
                        LrdError::format(path, format!("line {}: expected 'key: value'", lineno + 1))
                    })?;
                    doc.set(k.trim(), v.trim());
                }
            }
        }
        if let Some(t) = current.take() {
            doc.tables.push(t);
        }
        Ok(doc)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render()).map_err(|e| LrdError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LrdError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub(crate) fn require(&self, key: &str, path: &Path) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| LrdError::format(path, format!("missing field '{key}'")))
    }

    pub(crate) fn require_parsed<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        self.require(key, path)?
            .parse()
            .map_err(|_| LrdError::format(path, format!("field '{key}' is malformed")))
    }

    pub(crate) fn require_table(&self, name: &str, path: &Path) -> Result<&Table> {
        self.table(name)
            .ok_or_else(|| LrdError::format(path, format!("missing table '{name}'")))
    }
}

pub(crate) fn parse_cell<T: std::str::FromStr>(cell: &str, path: &Path) -> Result<T> {
    cell.parse()
        .map_err(|_| LrdError::format(path, format!("malformed value '{cell}'")))
}

/// Writes parameters as rows `index p0 p1 ...`.
pub(crate) fn transforms_table(name: &str, taus: &TransformStack) -> Table {
    let p = taus.group().map_or(0, |g| g.param_count());
    let mut cols = vec!["image".to_string()];
    cols.extend((0..p).map(|k| format!("p{k}")));
    let mut t = Table {
        name: name.to_string(),
        columns: cols,
        rows: Vec::new(),
    };
    for (i, tau) in taus.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(tau.params().iter().map(|v| v.to_string()));
        t.push(row);
    }
    t
}

pub(crate) fn read_transforms(table: &Table, group: TransformGroup, path: &Path) -> Result<TransformStack> {
    let per_image = table
        .rows
        .iter()
        .map(|row| {
            if row.len() != group.param_count() + 1 {
                return Err(LrdError::format(path, "transform row has wrong width"));
            }
            let zeta = row[1..]
                .iter()
                .map(|c| parse_cell(c, path))
                .collect::<Result<Vec<f64>>>()?;
            TransformParams::new(group, zeta)
        })
        .collect::<Result<Vec<_>>>()?;
    TransformStack::new(per_image)
}

/// Saves an image as 16-bit grayscale PNG, clamping to [0, 1].
pub fn save_png16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img.get(y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    });
    buf.save(path).map_err(|e| LrdError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Saves an image as 8-bit grayscale PNG, clamping to [0, 1].
pub fn save_png8(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let v = img.get(y as usize, x as usize).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    });
    buf.save(path).map_err(|e| LrdError::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// How montage tiles map values to gray levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileScale {
    /// Each tile stretched to its own min..max.
    MinMax,
    /// `|v|` stretched to the tile maximum.
    Magnitude,
}

/// Lays the columns of `m` out as `height x width` tiles on a near-square
/// grid with a one-pixel gutter.
pub fn montage(m: &DenseMatrix, shape: (usize, usize), scale: TileScale) -> Result<Image> {
    let (h, w) = shape;
    if m.nrows() != h * w {
        return Err(LrdError::ShapeMismatch {
            expected: (h * w, m.ncols()),
            got: m.shape(),
        });
    }
    let n = m.ncols().max(1);
    let grid_cols = (n as f64).sqrt().ceil() as usize;
    let grid_rows = n.div_ceil(grid_cols);
    let mut out = Image::constant(grid_rows * (h + 1) + 1, grid_cols * (w + 1) + 1, 0.0);
    for (i, col) in m.column_iter().enumerate() {
        let (lo, hi) = match scale {
            TileScale::MinMax => (col.min(), col.max()),
            TileScale::Magnitude => (0.0, col.amax()),
        };
        let span = if hi > lo { hi - lo } else { 1.0 };
        let r0 = (i / grid_cols) * (h + 1) + 1;
        let c0 = (i % grid_cols) * (w + 1) + 1;
        for c in 0..w {
            for r in 0..h {
                let v = col[c * h + r];
                let v = match scale {
                    TileScale::MinMax => v,
                    TileScale::Magnitude => v.abs(),
                };
                out.set(r0 + r, c0 + c, (v - lo) / span);
            }
        }
    }
    Ok(out)
}

/// Places montages side by side with a gutter.
pub fn hstack(panels: &[Image]) -> Image {
    let h = panels.iter().map(Image::height).max().unwrap_or(0);
    let w: usize = panels.iter().map(|p| p.width() + 2).sum();
    let mut out = Image::constant(h, w, 1.0);
    let mut x0 = 0;
    for p in panels {
        for r in 0..p.height() {
            for c in 0..p.width() {
                out.set(r, x0 + c, p.get(r, c));
            }
        }
        x0 += p.width() + 2;
    }
    out
}

pub const RESULT_DOC: &str = "result.txt";
pub const VR_FILE: &str = "low_rank.lrdm";
pub const E_FILE: &str = "sparse_error.lrdm";
pub const ALIGNED_FILE: &str = "aligned.lrdm";

/// Writes matrices, the text document and (for image batches) the aligned,
/// low-rank and error montages.
pub fn save_result(result: &DecompositionResult, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LrdError::io(dir, e))?;
    write_matrix(dir.join(VR_FILE), &result.vr)?;
    write_matrix(dir.join(E_FILE), &result.e)?;
    write_matrix(dir.join(ALIGNED_FILE), &result.aligned)?;

    let mut doc = TextDoc::default();
    doc.set("method", result.method);
    if let Some((h, w)) = result.image_shape {
        doc.set("height", h);
        doc.set("width", w);
    }
    doc.set("images", result.vr.ncols());
    doc.set(
        "group",
        result.taus.group().map_or("none".to_string(), |g| g.to_string()),
    );
    doc.set("converged", result.converged);
    doc.set("outer_iterations", result.objective_trace.len());
    if let Some(last) = result.objective_trace.last() {
        doc.set("final_objective", last);
    }

    let mut trace = Table::new("objective_trace", &["outer", "objective", "inner_iterations"]);
    for (i, (o, n)) in result
        .objective_trace
        .iter()
        .zip(&result.inner_iters)
        .enumerate()
    {
        trace.push(vec![i.to_string(), o.to_string(), n.to_string()]);
    }
    doc.tables.push(trace);
    doc.tables.push(transforms_table("transforms", &result.taus));
    if result.method == Method::Meadmm {
        let mut t = Table::new("manifold_trace", &["outer", "projection_shift", "intrinsic_dim"]);
        for r in &result.manifold_trace {
            if let TraceRecord::Manifold {
                outer,
                projection_shift,
                intrinsic_dim,
            } = r
            {
                t.push(vec![
                    outer.to_string(),
                    projection_shift.to_string(),
                    intrinsic_dim.to_string(),
                ]);
            }
        }
        doc.tables.push(t);
    }
    doc.write(dir.join(RESULT_DOC))?;

    if let Some(shape) = result.image_shape {
        save_png8(&montage(&result.aligned, shape, TileScale::MinMax)?, dir.join("aligned.png"))?;
        save_png8(&montage(&result.vr, shape, TileScale::MinMax)?, dir.join("low_rank.png"))?;
        save_png8(&montage(&result.e, shape, TileScale::Magnitude)?, dir.join("error.png"))?;
    }
    Ok(())
}

pub fn load_result(out_dir: impl AsRef<Path>) -> Result<DecompositionResult> {
    let dir = out_dir.as_ref();
    let doc_path = dir.join(RESULT_DOC);
    let doc = TextDoc::read(&doc_path)?;
    let p = doc_path.as_path();
    let method: Method = doc
        .require(
            "method", p,
        )?
        .parse()
        .map_err(|_| LrdError::format(p, "unknown method"))?;
    let image_shape = match (doc.get("height"), doc.get("width")) {
        (Some(_), Some(_)) => Some((doc.require_parsed("height", p)?, doc.require_parsed("width", p)?)),
        _ => None,
    };
    let converged: bool = doc.require_parsed("converged", p)?;
    let group = doc.require("group", p)?;
    let taus = if group == "none" {
        TransformStack::new(Vec::new())?
    } else {
        let g: TransformGroup = group
            .parse()
            .map_err(|_| LrdError::format(p, "unknown group"))?;
        read_transforms(doc.require_table("transforms", p)?, g, p)?
    };
    let trace = doc.require_table("objective_trace", p)?;
    let mut objective_trace = Vec::new();
    let mut inner_iters = Vec::new();
    for row in &trace.rows {
        if row.len() != 3 {
            return Err(LrdError::format(p, "objective_trace row has wrong width"));
        }
        objective_trace.push(parse_cell(&row[1], p)?);
        inner_iters.push(parse_cell(&row[2], p)?);
    }
    let mut manifold_trace = Vec::new();
    if let Some(t) = doc.table("manifold_trace") {
        for row in &t.rows {
            if row.len() != 3 {
                return Err(LrdError::format(p, "manifold_trace row has wrong width"));
            }
            manifold_trace.push(TraceRecord::Manifold {
                outer: parse_cell(&row[0], p)?,
                projection_shift: parse_cell(&row[1], p)?,
                intrinsic_dim: parse_cell(&row[2], p)?,
            });
        }
    }
    Ok(DecompositionResult {
        method,
        image_shape,
        vr: read_matrix(dir.join(VR_FILE))?,
        e: read_matrix(dir.join(E_FILE))?,
        aligned: read_matrix(dir.join(ALIGNED_FILE))?,
        taus,
        objective_trace,
        inner_iters,
        converged,
        manifold_trace,
    })
}
