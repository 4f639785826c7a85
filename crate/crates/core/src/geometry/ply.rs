//! ASCII Stanford polygon (PLY) reading and writing.
//!
//! Vertices carry `x y z nx ny nz`; faces are `vertex_indices` lists.
//! Polygons with more than three corners are fan-triangulated on read.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::Vector3;

use super::{GeometryError, TriangleMesh};
use crate::Real;

pub fn write_ply<T: Real, W: Write>(mesh: &TriangleMesh<T>, mut out: W) -> Result<(), GeometryError> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.len());
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        let _ = writeln!(s, "property double {p}");
    }
    let _ = writeln!(s, "element face {}", mesh.triangles().len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (v, n) in mesh.vertices().iter().zip(mesh.normals()) {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            v.x.to_f64_lossy(),
            v.y.to_f64_lossy(),
            v.z.to_f64_lossy(),
            n.x.to_f64_lossy(),
            n.y.to_f64_lossy(),
            n.z.to_f64_lossy()
        );
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

struct Element {
    name: String,
    count: usize,
    props: Vec<String>,
    list_prop: Option<String>,
}

pub fn read_ply<T: Real, R: Read>(input: R) -> Result<TriangleMesh<T>, GeometryError> {
    let mut lines = BufReader::new(input).lines();
    let mut next_line = move || -> Result<Option<String>, GeometryError> {
        match lines.next() {
            Some(l) => Ok(Some(l?)),
            None => Ok(None),
        }
    };
    let bad = |msg: String| GeometryError::Ply(msg);

    if next_line()?.as_deref().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?.ok_or_else(|| bad("unterminated header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(bad(format!("unsupported format '{fmt}'")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad(format!("bad element count '{count}'")))?,
                props: Vec::new(),
                list_prop: None,
            }),
            ["property", "list", _, _, name] => {
                let e = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                e.list_prop = Some(name.to_string());
                e.props.push(name.to_string());
            }
            ["property", _, name] => {
                let e = elements.last_mut().ok_or_else(|| bad("property before element".into()))?;
                e.props.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(bad(format!("unexpected header line '{line}'"))),
        }
    }

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut has_normals = false;
    let mut triangles = Vec::new();
    for e in &elements {
        let col = |name: &str| e.props.iter().position(|p| p == name);
        for _ in 0..e.count {
            let line = next_line()?.ok_or_else(|| bad(format!("truncated '{}' data", e.name)))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if e.name == "vertex" {
                let num = |c: Option<usize>| -> Result<Option<f64>, GeometryError> {
                    match c {
                        None => Ok(None),
                        Some(c) => toks
                            .get(c)
                            .ok_or_else(|| bad(format!("short vertex line '{line}'")))?
                            .parse::<f64>()
                            .map(Some)
                            .map_err(|_| bad(format!("bad number in '{line}'"))),
                    }
                };
                let (x, y, z) = (num(col("x"))?, num(col("y"))?, num(col("z"))?);
                let (Some(x), Some(y), Some(z)) = (x, y, z) else {
                    return Err(bad("vertex element lacks x/y/z".into()));
                };
                vertices.push(Vector3::new(T::lit(x), T::lit(y), T::lit(z)));
                if let (Some(nx), Some(ny), Some(nz)) = (num(col("nx"))?, num(col("ny"))?, num(col("nz"))?) {
                    has_normals = true;
                    normals.push(Vector3::new(T::lit(nx), T::lit(ny), T::lit(nz)));
                }
            } else if e.name == "face" && e.list_prop.is_some() {
                let n: usize = toks
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| bad(format!("bad face line '{line}'")))?;
                let idx: Vec<usize> = toks
                    .iter()
                    .skip(1)
                    .take(n)
                    .map(|t| t.parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad(format!("bad face index in '{line}'")))?;
                if idx.len() != n || n < 3 {
                    return Err(bad(format!("bad face line '{line}'")));
                }
                for k in 1..n - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, has_normals.then_some(normals), triangles)
}

pub fn save_ply<T: Real>(mesh: &TriangleMesh<T>, path: &std::path::Path) -> Result<(), GeometryError> {
    let f = std::fs::File::create(path)?;
    write_ply(mesh, std::io::BufWriter::new(f))
}

pub fn load_ply<T: Real>(path: &std::path::Path) -> Result<TriangleMesh<T>, GeometryError> {
    read_ply(std::fs::File::open(path)?)
}
