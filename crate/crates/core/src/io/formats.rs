//! OFF, ASCII PLY and XYZ readers; ASCII PLY writer.

use std::io::{BufRead, Write};

use super::{IoError, MeshShape};
use crate::geometry::{PointCloud, Vec3};

/// Non-empty, non-comment lines with 1-based line numbers.
fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), IoError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(IoError::Io(e))),
            Ok(l) => {
                let body = l.split('#').next().unwrap_or("").trim().to_string();
                (!body.is_empty()).then_some(Ok((i + 1, body)))
            }
        })
}

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, IoError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("expected a number, found {tok:?}")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize, IoError> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("expected a count, found {tok:?}")))
}

fn parse_xyz(toks: &[&str], line: usize) -> Result<Vec3, IoError> {
    if toks.len() < 3 {
        return Err(parse_err(line, "expected three coordinates"));
    }
    Ok(Vec3::new(
        parse_f64(toks[0], line)?,
        parse_f64(toks[1], line)?,
        parse_f64(toks[2], line)?,
    ))
}

/// Reads an OFF mesh. Polygons are fan-triangulated. Also accepts headers
/// where the counts are glued to the keyword (`OFF490 518 0`).
pub fn read_off<R: BufRead>(reader: R) -> Result<MeshShape, IoError> {
    let mut lines = content_lines(reader);
    let (first_no, first) = lines
        .next()
        .transpose()?
        .ok_or_else(|| parse_err(1, "empty file"))?;
    let rest = first
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(first_no, "missing OFF header"))?
        .trim()
        .to_string();
    let (count_no, counts) = if rest.is_empty() {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(first_no + 1, "missing element counts"))?
    } else {
        (first_no, rest)
    };
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(parse_err(count_no, "expected vertex and face counts"));
    }
    let nv = parse_usize(toks[0], count_no)?;
    let nf = parse_usize(toks[1], count_no)?;

    let mut vertices = Vec::with_capacity(nv);
    for k in 0..nv {
        let (no, line) = lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(count_no + k + 1, "unexpected end of file in vertices"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        vertices.push(parse_xyz(&toks, no)?);
    }
    let mut triangles = Vec::with_capacity(nf);
    for k in 0..nf {
        let (no, line) = lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(count_no + nv + k + 1, "unexpected end of file in faces"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let n = parse_usize(toks.first().copied().unwrap_or(""), no)?;
        if n < 3 || toks.len() < n + 1 {
            return Err(parse_err(no, format!("face needs at least 3 indices, got {n}")));
        }
        let idx = toks[1..=n]
            .iter()
            .map(|t| {
                let i = parse_usize(t, no)?;
                if i >= nv {
                    Err(parse_err(no, format!("vertex index {i} out of range")))
                } else {
                    Ok(i)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        for w in 1..n - 1 {
            triangles.push([idx[0], idx[w], idx[w + 1]]);
        }
    }
    MeshShape::new(vertices, triangles)
}

struct PlyHeader {
    vertex_count: usize,
    x: usize,
    y: usize,
    z: usize,
    label: Option<usize>,
    n_props: usize,
    // Elements declared before the vertices; their lines are skipped.
    skip_before: usize,
}

fn read_ply_header<I>(lines: &mut I) -> Result<(PlyHeader, usize), IoError>
where
    I: Iterator<Item = Result<(usize, String), IoError>>,
{
    let mut next = |expect: &str| -> Result<(usize, String), IoError> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(0, format!("unexpected end of header, expected {expect}")))
    };
    let (no, magic) = next("ply")?;
    if magic != "ply" {
        return Err(parse_err(no, "missing ply magic"));
    }
    let mut vertex: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    let mut skip_before = 0;
    let mut seen_format = false;
    loop {
        let (no, line) = next("end_header")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "format" => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(IoError::UnsupportedFormat(format!(
                        "PLY encoding {}",
                        toks.get(1).unwrap_or(&"?")
                    )));
                }
                seen_format = true;
            }
            "comment" | "obj_info" => {}
            "element" => {
                if toks.len() < 3 {
                    return Err(parse_err(no, "malformed element line"));
                }
                let count = parse_usize(toks[2], no)?;
                in_vertex = toks[1] == "vertex";
                if in_vertex {
                    vertex = Some(count);
                } else if vertex.is_none() {
                    skip_before += count;
                }
            }
            "property" => {
                if in_vertex {
                    if toks.get(1) == Some(&"list") {
                        return Err(parse_err(no, "list properties on vertices are not supported"));
                    }
                    let name = toks.last().copied().unwrap_or("");
                    props.push(name.to_string());
                }
            }
            "end_header" => {
                if !seen_format {
                    return Err(parse_err(no, "missing format line"));
                }
                let vertex_count =
                    vertex.ok_or_else(|| parse_err(no, "no vertex element"))?;
                let find = |n: &str| props.iter().position(|p| p == n);
                let (x, y, z) = match (find("x"), find("y"), find("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(parse_err(no, "vertex element lacks x/y/z")),
                };
                return Ok((
                    PlyHeader {
                        vertex_count,
                        x,
                        y,
                        z,
                        label: find("label"),
                        n_props: props.len(),
                        skip_before,
                    },
                    no,
                ));
            }
            other => return Err(parse_err(no, format!("unknown header keyword {other:?}"))),
        }
    }
}

/// Reads the vertex element of an ASCII PLY file as a point cloud. A vertex
/// property named `label` becomes the per-point label.
pub fn read_ply<R: BufRead>(reader: R) -> Result<PointCloud, IoError> {
    let mut lines = content_lines_keep_comments(reader);
    let (h, header_end) = read_ply_header(&mut lines)?;
    for _ in 0..h.skip_before {
        lines.next().transpose()?;
    }
    let mut points = Vec::with_capacity(h.vertex_count);
    let mut labels = Vec::with_capacity(h.vertex_count);
    for k in 0..h.vertex_count {
        let (no, line) = lines
            .next()
            .transpose()?
            .ok_or_else(|| parse_err(header_end + k + 1, "unexpected end of file in vertices"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < h.n_props {
            return Err(parse_err(no, format!("expected {} values", h.n_props)));
        }
        points.push(Vec3::new(
            parse_f64(toks[h.x], no)?,
            parse_f64(toks[h.y], no)?,
            parse_f64(toks[h.z], no)?,
        ));
        labels.push(match h.label {
            Some(l) => parse_f64(toks[l], no)?,
            None => 1.0,
        });
    }
    Ok(PointCloud::with_labels(points, labels).expect("one label per point"))
}

// PLY comments are keyword lines, not '#'; keep everything but blank lines.
fn content_lines_keep_comments<R: BufRead>(
    reader: R,
) -> impl Iterator<Item = Result<(usize, String), IoError>> {
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(IoError::Io(e))),
            Ok(l) => {
                let body = l.trim().to_string();
                (!body.is_empty()).then_some(Ok((i + 1, body)))
            }
        })
}

/// Whitespace-separated `x y z` per line; extra columns are ignored.
pub fn read_xyz<R: BufRead>(reader: R) -> Result<PointCloud, IoError> {
    let mut points = Vec::new();
    for line in content_lines(reader) {
        let (no, line) = line?;
        let toks: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .collect();
        points.push(parse_xyz(&toks, no)?);
    }
    Ok(PointCloud::new(points))
}

/// ASCII PLY with double-precision coordinates, printed in shortest
/// round-trip form. Labels are written only when some label differs from 1.
pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> Result<(), IoError> {
    let with_labels = cloud.labels().iter().any(|&l| l != 1.0);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property double x")?;
    writeln!(w, "property double y")?;
    writeln!(w, "property double z")?;
    if with_labels {
        writeln!(w, "property double label")?;
    }
    writeln!(w, "end_header")?;
    for (p, l) in cloud.points().iter().zip(cloud.labels()) {
        if with_labels {
            writeln!(w, "{:?} {:?} {:?} {:?}", p.x, p.y, p.z, l)?;
        } else {
            writeln!(w, "{:?} {:?} {:?}", p.x, p.y, p.z)?;
        }
    }
    Ok(())
}
