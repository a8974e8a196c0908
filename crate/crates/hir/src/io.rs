//! File formats: binary PGM images, numeric CSV grids, labeled input
//! directories, and descriptor tables.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::engine::FeatureMap;
use crate::error::{HirError, Result};
use crate::invariant::InvariantVector;

fn io_err(path: &Path, source: std::io::Error) -> HirError {
    HirError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> HirError {
    HirError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Read a binary (P5) PGM image. Samples are scaled by the stated maximum
/// value, so pixels land in [0, 1].
pub fn read_pgm(path: &Path) -> Result<FeatureMap> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // skip whitespace and '#' comment lines between header tokens
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes)? != "P5" {
        return Err(parse_err(path, "not a binary PGM (expected magic P5)"));
    }
    let nj: usize = token(&bytes)?
        .parse()
        .map_err(|_| parse_err(path, "bad width"))?;
    let ni: usize = token(&bytes)?
        .parse()
        .map_err(|_| parse_err(path, "bad height"))?;
    let maxval: u32 = token(&bytes)?
        .parse()
        .map_err(|_| parse_err(path, "bad maxval"))?;
    if maxval == 0 || maxval > 65_535 {
        return Err(parse_err(path, format!("maxval {maxval} out of range")));
    }
    pos += 1; // single whitespace byte after the header
    let wide = maxval > 255;
    let sample_len = if wide { 2 } else { 1 };
    let needed = ni * nj * sample_len;
    if bytes.len() < pos + needed {
        return Err(parse_err(
            path,
            format!("raster truncated: need {needed} bytes"),
        ));
    }
    let raster = &bytes[pos..pos + needed];
    let scale = 1.0 / maxval as f64;
    let data: Vec<f64> = if wide {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 * scale).collect()
    };
    Ok(FeatureMap::from_real(ni, nj, &data))
}

/// Write the real part of a map as an 8-bit binary PGM, clamped to [0, 1].
pub fn write_pgm(path: &Path, map: &FeatureMap) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{} {}\n255\n", map.nj, map.ni).map_err(|e| io_err(path, e))?;
    let raster: Vec<u8> = map
        .data
        .iter()
        .map(|v| (v.re.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    out.write_all(&raster).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Read a rectangular numeric CSV grid (one image row per line).
pub fn read_csv_grid(path: &Path) -> Result<FeatureMap> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    parse_err(path, format!("line {}: bad number {:?}", lineno + 1, cell))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(parse_err(
                    path,
                    format!(
                        "line {}: expected {} columns, found {}",
                        lineno + 1,
                        first.len(),
                        row.len()
                    ),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, "no rows"));
    }
    let ni = rows.len();
    let nj = rows[0].len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(FeatureMap::from_real(ni, nj, &data))
}

/// Read one image, dispatching on extension (.pgm or .csv).
pub fn read_image(path: &Path) -> Result<FeatureMap> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("csv") => read_csv_grid(path),
        other => Err(parse_err(
            path,
            format!("unsupported image extension {other:?} (expected pgm or csv)"),
        )),
    }
}

/// One image discovered under the input directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputEntry {
    pub path: PathBuf,
    /// stem-based identifier, prefixed with the label when present
    pub id: String,
    /// name of the containing subdirectory, when the image sits in one
    pub label: Option<String>,
}

/// Scan an input directory. Images directly inside it are unlabeled; images
/// one level down take the subdirectory name as their class label. The result
/// is sorted by id for reproducible ordering.
pub fn scan_input_dir(dir: &Path) -> Result<Vec<InputEntry>> {
    let mut out = Vec::new();
    let is_image = |p: &Path| {
        matches!(
            p.extension().and_then(|e| e.to_str()),
            Some("pgm") | Some("csv")
        )
    };
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image(&path) {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            out.push(InputEntry {
                id: stem.into_owned(),
                label: None,
                path,
            });
        } else if path.is_dir() {
            let label = entry.file_name().to_string_lossy().into_owned();
            let inner = fs::read_dir(&path).map_err(|e| io_err(&path, e))?;
            for file in inner {
                let file = file.map_err(|e| io_err(&path, e))?;
                let fpath = file.path();
                if fpath.is_file() && is_image(&fpath) {
                    let stem = fpath.file_stem().unwrap_or_default().to_string_lossy();
                    out.push(InputEntry {
                        id: format!("{label}/{stem}"),
                        label: Some(label.clone()),
                        path: fpath,
                    });
                }
            }
        }
    }
    if out.is_empty() {
        return Err(parse_err(dir, "no .pgm or .csv images found"));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

/// Render a float with nine significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.8e}")
}

/// Write descriptors as CSV: header `id,label,<node>:b<band>,...`, one image
/// per row. All vectors must share one layout.
pub fn write_features_csv(
    path: &Path,
    entries: &[(String, Option<String>)],
    vectors: &[InvariantVector],
) -> Result<()> {
    if entries.len() != vectors.len() || vectors.is_empty() {
        return Err(HirError::Shape(format!(
            "{} ids but {} descriptor rows",
            entries.len(),
            vectors.len()
        )));
    }
    let layout = &vectors[0].meta;
    for v in vectors {
        if v.meta != *layout {
            return Err(HirError::Shape(
                "descriptor layouts differ between images".into(),
            ));
        }
    }
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = String::from("id,label");
    for meta in layout {
        header.push_str(&format!(",{}:b{}", meta.node, meta.band));
    }
    writeln!(out, "{header}").map_err(|e| io_err(path, e))?;
    for ((id, label), vector) in entries.iter().zip(vectors) {
        let mut line = format!("{id},{}", label.as_deref().unwrap_or(""));
        for v in &vector.values {
            line.push(',');
            line.push_str(&format_sig9(*v));
        }
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// A descriptor table read back from CSV.
#[derive(Clone, Debug)]
pub struct FeatureTable {
    pub ids: Vec<String>,
    pub labels: Vec<Option<String>>,
    /// column headers, `<node>:b<band>`
    pub columns: Vec<String>,
    /// row-major values, `ids.len()` rows by `columns.len()` columns
    pub values: Vec<f64>,
}

/// Read a descriptor table produced by [`write_features_csv`].
pub fn read_features_csv(path: &Path) -> Result<FeatureTable> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, "empty file"))?;
    let mut fields = header.split(',');
    if fields.next() != Some("id") || fields.next() != Some("label") {
        return Err(parse_err(path, "header must start with id,label"));
    }
    let columns: Vec<String> = fields.map(str::to_string).collect();
    if columns.is_empty() {
        return Err(parse_err(path, "no feature columns"));
    }
    let mut table = FeatureTable {
        ids: Vec::new(),
        labels: Vec::new(),
        columns,
        values: Vec::new(),
    };
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let id = cells
            .next()
            .ok_or_else(|| parse_err(path, format!("line {}: missing id", lineno + 1)))?;
        let label = cells
            .next()
            .ok_or_else(|| parse_err(path, format!("line {}: missing label", lineno + 1)))?;
        let row: Vec<f64> = cells
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    parse_err(path, format!("line {}: bad number {:?}", lineno + 1, cell))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != table.columns.len() {
            return Err(parse_err(
                path,
                format!(
                    "line {}: expected {} values, found {}",
                    lineno + 1,
                    table.columns.len(),
                    row.len()
                ),
            ));
        }
        table.ids.push(id.to_string());
        table.labels.push(if label.is_empty() {
            None
        } else {
            Some(label.to_string())
        });
        table.values.extend(row);
    }
    if table.ids.is_empty() {
        return Err(parse_err(path, "no data rows"));
    }
    Ok(table)
}

/// Write a string to a file, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}
