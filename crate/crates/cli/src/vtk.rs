//! Legacy ASCII VTK export of velocity, pressure and control on the Q2 node grid.

use std::fmt::Write as _;
use std::path::Path;

use nsk_core::{ControlField, DofMap, PressureField, VelocityField};

use crate::error::CliError;
use crate::output::write_text;

/// Point data of one export, all on the `(2n+1)²` Q2 nodes in lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkFields {
    pub dims: (usize, usize),
    pub points: Vec<[f64; 3]>,
    pub velocity: Vec<[f64; 3]>,
    pub pressure: Vec<f64>,
    pub control: Vec<[f64; 3]>,
}

fn vectors(field: &VelocityField) -> Vec<[f64; 3]> {
    let (a, b) = field.components();
    a.iter().zip(b).map(|(&x, &y)| [x, y, 0.0]).collect()
}

pub fn collect(
    dofs: &DofMap,
    velocity: &VelocityField,
    pressure: &PressureField,
    control: &ControlField,
) -> Result<VtkFields, CliError> {
    let n = dofs.n();
    if let Some(found) = [velocity.n(), pressure.n(), control.n()]
        .into_iter()
        .find(|&m| m != n)
    {
        return Err(nsk_core::Error::LevelMismatch { expected: n, found }.into());
    }
    let side = dofs.q2_side();
    let count = dofs.q2_scalar_count();
    let points: Vec<[f64; 3]> = (0..count)
        .map(|k| {
            let (x, y) = dofs.q2_coords(k);
            [x, y, 0.0]
        })
        .collect();
    let pressure = points
        .iter()
        .map(|p| pressure.evaluate(dofs, p[0], p[1]))
        .collect();
    Ok(VtkFields {
        dims: (side, side),
        points,
        velocity: vectors(velocity),
        pressure,
        control: vectors(control),
    })
}

pub fn render(f: &VtkFields) -> String {
    let (nx, ny) = f.dims;
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "nsk fields");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_GRID");
    let _ = writeln!(s, "DIMENSIONS {nx} {ny} 1");
    let _ = writeln!(s, "POINTS {} double", f.points.len());
    let vec3 = |s: &mut String, v: &[f64; 3]| {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]);
    };
    f.points.iter().for_each(|p| vec3(&mut s, p));
    let _ = writeln!(s, "POINT_DATA {}", f.points.len());
    let _ = writeln!(s, "VECTORS velocity double");
    f.velocity.iter().for_each(|p| vec3(&mut s, p));
    let _ = writeln!(s, "SCALARS pressure double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for p in &f.pressure {
        let _ = writeln!(s, "{p:.16e}");
    }
    let _ = writeln!(s, "VECTORS control double");
    f.control.iter().for_each(|p| vec3(&mut s, p));
    s
}

pub fn write(path: &Path, fields: &VtkFields) -> Result<(), CliError> {
    write_text(path, &render(fields))
}

struct Cursor<'a> {
    lines: Box<dyn Iterator<Item = &'a str> + 'a>,
}

fn vtk_error(m: &str) -> CliError {
    CliError::Config(format!("VTK: {m}"))
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: Box::new(text.lines().map(str::trim).filter(|l| !l.is_empty())),
        }
    }

    fn expect(&mut self, prefix: &str) -> Result<&'a str, CliError> {
        let l = self.lines.next().ok_or_else(|| vtk_error("truncated"))?;
        if l.starts_with(prefix) {
            Ok(l)
        } else {
            Err(vtk_error(&format!("expected {prefix:?}, got {l:?}")))
        }
    }

    fn rows(&mut self, count: usize, width: usize) -> Result<Vec<Vec<f64>>, CliError> {
        (0..count)
            .map(|_| {
                let l = self
                    .lines
                    .next()
                    .ok_or_else(|| vtk_error("truncated data"))?;
                let v: Vec<f64> = l
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| vtk_error(&format!("number {t:?}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() == width {
                    Ok(v)
                } else {
                    Err(vtk_error("row width"))
                }
            })
            .collect()
    }

    fn vectors(&mut self, count: usize) -> Result<Vec<[f64; 3]>, CliError> {
        Ok(self
            .rows(count, 3)?
            .into_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect())
    }
}

/// Reads back a file produced by [`render`].
pub fn parse(text: &str) -> Result<VtkFields, CliError> {
    let mut c = Cursor::new(text);
    c.expect("# vtk")?;
    c.expect("")?;
    c.expect("ASCII")?;
    c.expect("DATASET STRUCTURED_GRID")?;
    let dims: Vec<usize> = c
        .expect("DIMENSIONS")?
        .split_whitespace()
        .skip(1)
        .map(|t| t.parse().map_err(|_| vtk_error("dimensions")))
        .collect::<Result<_, _>>()?;
    if dims.len() != 3 {
        return Err(vtk_error("dimensions"));
    }
    let count = dims[0] * dims[1] * dims[2];
    c.expect("POINTS")?;
    let points = c.vectors(count)?;
    c.expect("POINT_DATA")?;
    c.expect("VECTORS velocity")?;
    let velocity = c.vectors(count)?;
    c.expect("SCALARS pressure")?;
    c.expect("LOOKUP_TABLE")?;
    let pressure = c.rows(count, 1)?.into_iter().map(|r| r[0]).collect();
    c.expect("VECTORS control")?;
    let control = c.vectors(count)?;
    Ok(VtkFields {
        dims: (dims[0], dims[1]),
        points,
        velocity,
        pressure,
        control,
    })
}
