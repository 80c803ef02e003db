//! ASCII OBJ subset: `v`, `vn` and triangular or polygonal `f` records.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};

/// Serializes with shortest round-trip float formatting, so output bytes are
/// a pure function of the mesh.
pub fn to_obj_string(mesh: &TriangleMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 64 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
    }
    if let Some(ns) = &mesh.normals {
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", n[0], n[1], n[2]);
        }
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        }
    } else {
        for t in &mesh.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            let _ = writeln!(s, "f {a} {b} {c}");
        }
    }
    s
}

pub fn write_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    fs::write(path, to_obj_string(mesh)).map_err(|e| Error::io(path, e))
}

fn parse_floats(rest: &[&str], origin: &Path, line: usize) -> Result<[f64; 3]> {
    if rest.len() < 3 {
        return Err(Error::format(origin, format!("line {line}: expected 3 coordinates")));
    }
    let mut out = [0.0; 3];
    for (o, tok) in out.iter_mut().zip(rest) {
        *o = tok
            .parse()
            .map_err(|_| Error::format(origin, format!("line {line}: bad number {tok:?}")))?;
    }
    Ok(out)
}

pub fn parse_obj(text: &str, origin: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut triangles = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let mut toks = line.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        let rest: Vec<&str> = toks.collect();
        match tag {
            "v" => vertices.push(parse_floats(&rest, origin, line_no)?),
            "vn" => normals.push(parse_floats(&rest, origin, line_no)?),
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::format(origin, format!("line {line_no}: face needs 3 corners")));
                }
                let idx = rest
                    .iter()
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|_| Error::format(origin, format!("line {line_no}: bad index {tok:?}")))?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        if resolved < 0 || resolved >= vertices.len() as i64 {
                            return Err(Error::format(origin, format!("line {line_no}: index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<u32>>>()?;
                for m in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[m], idx[m + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriangleMesh::new(vertices, triangles);
    if !normals.is_empty() && normals.len() == mesh.vertices.len() {
        mesh.normals = Some(normals);
    }
    Ok(mesh)
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::{cube, icosphere};

    #[test]
    fn round_trip_is_exact() {
        let s = icosphere(0.37, 2, [0.1, -0.2, 0.3]);
        let back = parse_obj(&to_obj_string(&s), Path::new("mem")).unwrap();
        assert_eq!(back, s);
        let c = cube(0.5);
        assert_eq!(parse_obj(&to_obj_string(&c), Path::new("mem")).unwrap(), c);
    }

    #[test]
    fn polygons_and_malformed_input() {
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 -1\n";
        let m = parse_obj(quad, Path::new("mem")).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(parse_obj("v 0 0\n", Path::new("mem")).is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n", Path::new("mem")).is_err());
    }
}
