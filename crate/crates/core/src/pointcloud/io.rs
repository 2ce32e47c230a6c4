//! ASCII `.xyz` and `.ply` readers and writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use super::{Point, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    PlyAscii,
    Xyz,
}

impl CloudFormat {
    /// Guesses the format from the file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => Ok(CloudFormat::PlyAscii),
            Some("xyz") | Some("txt") => Ok(CloudFormat::Xyz),
            _ => Err(Error::InvalidInput(format!(
                "cannot infer cloud format from {}",
                path.display()
            ))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(text)
        .map_err(|_| Error::parse(0, "file is not valid UTF-8 (binary PLY is not supported)"))?;
    match format {
        CloudFormat::Xyz => parse_xyz(&text),
        CloudFormat::PlyAscii => parse_ply(&text),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let text = match format {
        CloudFormat::Xyz => write_xyz(cloud),
        CloudFormat::PlyAscii => write_ply(cloud),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| Error::parse(line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

fn make_point(values: &[f64], line: usize) -> Result<Point> {
    let position = Vector3::new(values[0], values[1], values[2]);
    let normal = if values.len() >= 6 {
        let n = Vector3::new(values[3], values[4], values[5]);
        let len = n.norm();
        if len == 0.0 {
            return Err(Error::parse(line, "zero-length normal"));
        }
        // unit normals are kept bit-identical so save/load round-trips
        if (len - 1.0).abs() <= 1e-12 {
            Some(n)
        } else {
            Some(n / len)
        }
    } else {
        None
    };
    Ok(Point { position, normal })
}

/// Parses whitespace-separated `x y z [nx ny nz]` lines; `#` starts a comment.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut columns: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|t| parse_number(t, line_no))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != 3 && values.len() != 6 {
            return Err(Error::parse(
                line_no,
                format!("expected 3 or 6 columns, found {}", values.len()),
            ));
        }
        match columns {
            None => columns = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::parse(
                    line_no,
                    format!("column count changed from {c} to {}", values.len()),
                ))
            }
            _ => {}
        }
        points.push(make_point(&values, line_no)?);
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud::new(points))
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Parses an ASCII PLY file, reading `x y z` and optional `nx ny nz` of the
/// `vertex` element and ignoring every other property and element.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(Error::parse(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut header_done = false;
    for (i, raw) in lines.by_ref() {
        let line_no = i + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(Error::parse(
                        line_no,
                        format!("unsupported PLY format {fmt:?}; only ascii is supported"),
                    ));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| Error::parse(line_no, "bad element count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", _, _, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                el.properties.push(format!("list:{name}"));
            }
            ["property", _ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(line_no, "property before element"))?;
                el.properties.push(name.to_string());
            }
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(Error::parse(line_no, format!("unrecognized header line {raw:?}"))),
        }
    }
    if !header_done {
        return Err(Error::parse(0, "missing end_header"));
    }
    let mut points = Vec::new();
    let mut found_vertex = false;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines
                    .next()
                    .ok_or_else(|| Error::parse(0, format!("truncated {} element", el.name)))?;
            }
            continue;
        }
        found_vertex = true;
        if el.properties.iter().any(|p| p.starts_with("list:")) {
            return Err(Error::parse(0, "list properties on vertex are not supported"));
        }
        let col = |name: &str| el.properties.iter().position(|p| p == name);
        let (x, y, z) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::parse(0, "vertex element lacks x, y, z")),
        };
        let normal_cols = match (col("nx"), col("ny"), col("nz")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        for _ in 0..el.count {
            let (i, raw) = lines
                .next()
                .ok_or_else(|| Error::parse(0, "truncated vertex element"))?;
            let line_no = i + 1;
            let toks: Vec<&str> = raw.split_whitespace().collect();
            if toks.len() != el.properties.len() {
                return Err(Error::parse(
                    line_no,
                    format!("expected {} values, found {}", el.properties.len(), toks.len()),
                ));
            }
            let get = |c: usize| parse_number(toks[c], line_no);
            let mut values = vec![get(x)?, get(y)?, get(z)?];
            if let Some((a, b, c)) = normal_cols {
                values.extend([get(a)?, get(b)?, get(c)?]);
            }
            points.push(make_point(&values, line_no)?);
        }
    }
    if !found_vertex {
        return Err(Error::parse(0, "no vertex element"));
    }
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(PointCloud::new(points))
}

fn push_point(out: &mut String, p: &Point, with_normals: bool) {
    let v = &p.position;
    let _ = write!(out, "{} {} {}", v.x, v.y, v.z);
    if with_normals {
        let n = p.normal.unwrap_or_else(Vector3::z);
        let _ = write!(out, " {} {} {}", n.x, n.y, n.z);
    }
    out.push('\n');
}

fn write_xyz(cloud: &PointCloud) -> String {
    let with_normals = cloud.has_normals();
    let mut out = String::new();
    for p in cloud.points() {
        push_point(&mut out, p, with_normals);
    }
    out
}

fn write_ply(cloud: &PointCloud) -> String {
    let with_normals = cloud.has_normals();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if with_normals {
        out.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    out.push_str("end_header\n");
    for p in cloud.points() {
        push_point(&mut out, p, with_normals);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xyz_three_points() {
        let c = parse_xyz("0 0 0\n1 0 0 # comment\n\n0 1 0\n").unwrap();
        assert_eq!(c.len(), 3);
        assert!(!c.has_normals());
    }

    #[test]
    fn xyz_nan_is_error_with_line() {
        match parse_xyz("0 0 0\n1 nan 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn xyz_mixed_columns_rejected() {
        assert!(parse_xyz("0 0 0\n1 0 0 0 0 1\n").is_err());
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(parse_xyz("# nothing\n"), Err(Error::EmptyCloud)));
    }

    #[test]
    fn ply_normals_renormalized_and_extra_props_ignored() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 2\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property uchar red\n\
                    property float nx\nproperty float ny\nproperty float nz\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255 0 0 2\n1 2 3 0 3 4 0\n3 0 1 1\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 2);
        let n = c.points()[1].normal.unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-12);
        assert!((n.x - 0.6).abs() < 1e-12);
        assert!((c.points()[1].position.z - 3.0).abs() < 1e-12);
    }

    #[test]
    fn binary_ply_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        let err = parse_ply(text).unwrap_err();
        assert!(err.to_string().contains("ascii"));
    }
}
