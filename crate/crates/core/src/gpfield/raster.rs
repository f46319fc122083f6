//! ESRI ASCII grid export and import.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::frames::EnuPoint;
use crate::worldsim::{RasterGeometry, ScalarField};

pub const NODATA: f64 = -9999.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Parsed ESRI ASCII grid. Values are row-major with row 0 at the south
/// edge, matching [`RasterGeometry`]; NODATA cells are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct EsriGrid {
    pub geometry: RasterGeometry,
    pub values: Vec<f64>,
}

pub fn write_esri_ascii<W: Write>(field: &ScalarField, mut out: W) -> io::Result<()> {
    let g = field.geometry;
    writeln!(out, "ncols {}", g.width)?;
    writeln!(out, "nrows {}", g.height)?;
    writeln!(out, "xllcorner {}", g.origin.east)?;
    writeln!(out, "yllcorner {}", g.origin.north)?;
    writeln!(out, "cellsize {}", g.cell_size)?;
    writeln!(out, "NODATA_value -9999")?;
    let mut line = String::new();
    for row in (0..g.height).rev() {
        line.clear();
        for col in 0..g.width {
            if col > 0 {
                line.push(' ');
            }
            let v = field.values[g.index(row, col)];
            if v.is_finite() {
                line.push_str(&v.to_string());
            } else {
                line.push_str("-9999");
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_esri_ascii<R: BufRead>(input: R) -> Result<EsriGrid, RasterError> {
    let mut lines = input.lines().enumerate();
    let keys = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"];
    let mut header = [0f64; 6];
    for (slot, key) in header.iter_mut().zip(keys) {
        let (i, line) = lines.next().ok_or(RasterError::Parse {
            line: 0,
            message: format!("missing {key}"),
        })?;
        let line = line?;
        let mut parts = line.split_whitespace();
        let bad = |message: String| RasterError::Parse { line: i + 1, message };
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k.eq_ignore_ascii_case(key) => {
                *slot = v.parse().map_err(|_| bad(format!("bad value for {key}")))?;
            }
            _ => return Err(bad(format!("expected '{key} <value>'"))),
        }
    }
    let [ncols, nrows, xll, yll, cellsize, nodata] = header;
    if ncols < 1.0 || nrows < 1.0 || ncols.fract() != 0.0 || nrows.fract() != 0.0 || !(cellsize > 0.0) {
        return Err(RasterError::Parse {
            line: 1,
            message: "invalid raster dimensions".into(),
        });
    }
    let (width, height) = (ncols as usize, nrows as usize);
    let geometry = RasterGeometry {
        origin: EnuPoint { east: xll, north: yll },
        cell_size: cellsize,
        width,
        height,
    };
    let mut values = vec![f64::NAN; width * height];
    for k in 0..height {
        let (i, line) = lines.next().ok_or(RasterError::Parse {
            line: 7 + k,
            message: "missing data row".into(),
        })?;
        let line = line?;
        let row = height - 1 - k;
        let mut count = 0;
        for (col, tok) in line.split_whitespace().enumerate() {
            if col >= width {
                count = col + 1;
                break;
            }
            let v: f64 = tok.parse().map_err(|_| RasterError::Parse {
                line: i + 1,
                message: format!("bad value '{tok}'"),
            })?;
            values[row * width + col] = if v == nodata { f64::NAN } else { v };
            count = col + 1;
        }
        if count != width {
            return Err(RasterError::Parse {
                line: i + 1,
                message: format!("expected {width} values, found {count}"),
            });
        }
    }
    if let Some((i, Ok(extra))) = lines.next() {
        if !extra.trim().is_empty() {
            return Err(RasterError::Parse {
                line: i + 1,
                message: "trailing data after last row".into(),
            });
        }
    }
    Ok(EsriGrid { geometry, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::Parameter;

    fn field() -> ScalarField {
        ScalarField {
            geometry: RasterGeometry {
                origin: EnuPoint { east: -10.0, north: 2.5 },
                cell_size: 5.0,
                width: 3,
                height: 2,
            },
            parameter: Parameter::Depth,
            // row 0 (south) then row 1 (north)
            values: vec![1.0, 2.5, f64::NAN, 4.0, 5.125, 6.0],
        }
    }

    #[test]
    fn header_and_row_order() {
        let mut buf = Vec::new();
        write_esri_ascii(&field(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "ncols 3\nnrows 2\nxllcorner -10\nyllcorner 2.5\ncellsize 5\nNODATA_value -9999\n4 5.125 6\n1 2.5 -9999\n"
        );
    }

    #[test]
    fn reads_back() {
        let f = field();
        let mut buf = Vec::new();
        write_esri_ascii(&f, &mut buf).unwrap();
        let g = read_esri_ascii(buf.as_slice()).unwrap();
        assert_eq!(g.geometry, f.geometry);
        for (a, b) in g.values.iter().zip(&f.values) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_esri_ascii("ncols 2\nnrows 1\n".as_bytes()).is_err());
        let short = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1\n";
        assert!(read_esri_ascii(short.as_bytes()).is_err());
        let swapped = "nrows 1\nncols 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n";
        assert!(read_esri_ascii(swapped.as_bytes()).is_err());
    }
}
