//! OBJ and ASCII-PLY triangle mesh loading. Quads are fan-triangulated,
//! higher-order polygons rejected. Loaders are single-threaded per file.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Point3;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::num::{cast, Real};

/// Load a mesh from `.obj` or `.ply` based on the file extension.
/// Degenerate faces are dropped; the dropped count is logged.
pub fn load_mesh<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("obj") => load_obj(path),
        Some("ply") => load_ply(path),
        other => Err(Error::InvalidConfig(format!(
            "unsupported mesh extension {:?} for {}",
            other,
            path.display()
        ))),
    }
}

pub fn load_obj<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut vertices: Vec<Point3<T>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coord = |name: &str| -> Result<T> {
                    tokens
                        .next()
                        .ok_or_else(|| Error::parse(path, lineno, format!("missing {name}")))?
                        .parse::<f64>()
                        .map(cast)
                        .map_err(|e| Error::parse(path, lineno, format!("bad {name}: {e}")))
                };
                let (x, y, z) = (coord("x")?, coord("y")?, coord("z")?);
                vertices.push(Point3::new(x, y, z));
            }
            Some("f") => {
                let mut idx: Vec<u32> = Vec::with_capacity(4);
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or(tok);
                    let i: i64 = first
                        .parse()
                        .map_err(|e| Error::parse(path, lineno, format!("bad face index: {e}")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(Error::parse(path, lineno, "face index 0 is invalid"));
                    };
                    if resolved < 0 || resolved as usize >= vertices.len() {
                        return Err(Error::parse(path, lineno, "face index out of range"));
                    }
                    idx.push(resolved as u32);
                }
                append_polygon(&mut faces, &idx, path, lineno)?;
            }
            _ => {} // vn/vt/usemtl/o/g/s and friends are ignored
        }
    }

    finish(vertices, faces, path)
}

pub fn load_ply<T: Real>(path: impl AsRef<Path>) -> Result<TriangleMesh<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(n, l)| (n + 1, l.trim()));

    let (_, magic) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    if magic != "ply" {
        return Err(Error::parse(path, 1, "missing ply magic"));
    }

    let mut vertex_count = 0usize;
    let mut face_count = 0usize;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut in_vertex_element = false;
    for (lineno, line) in lines.by_ref() {
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(Error::parse(path, lineno, "only ascii ply is supported"));
                }
            }
            Some("element") => match (tok.next(), tok.next()) {
                (Some("vertex"), Some(n)) => {
                    vertex_count = n.parse().map_err(|e| {
                        Error::parse(path, lineno, format!("bad vertex count: {e}"))
                    })?;
                    in_vertex_element = true;
                }
                (Some("face"), Some(n)) => {
                    face_count = n
                        .parse()
                        .map_err(|e| Error::parse(path, lineno, format!("bad face count: {e}")))?;
                    in_vertex_element = false;
                }
                _ => in_vertex_element = false,
            },
            Some("property") if in_vertex_element => {
                let tokens: Vec<&str> = tok.collect();
                if let Some(name) = tokens.last() {
                    vertex_props.push((*name).to_string());
                }
            }
            _ => {}
        }
    }

    let find = |name: &str| vertex_props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(Error::parse(
                path,
                0,
                "vertex element lacks x/y/z properties",
            ))
        }
    };

    let mut vertices: Vec<Point3<T>> = Vec::with_capacity(vertex_count);
    for _ in 0..vertex_count {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of vertex data"))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        let get = |i: usize| -> Result<T> {
            vals.get(i)
                .ok_or_else(|| Error::parse(path, lineno, "short vertex record"))?
                .parse::<f64>()
                .map(cast)
                .map_err(|e| Error::parse(path, lineno, format!("bad coordinate: {e}")))
        };
        vertices.push(Point3::new(get(ix)?, get(iy)?, get(iz)?));
    }

    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(face_count);
    for _ in 0..face_count {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 0, "unexpected end of face data"))?;
        let mut tok = line.split_whitespace();
        let n: usize = tok
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "empty face record"))?
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad face arity: {e}")))?;
        let mut idx = Vec::with_capacity(n);
        for _ in 0..n {
            let i: u32 = tok
                .next()
                .ok_or_else(|| Error::parse(path, lineno, "short face record"))?
                .parse()
                .map_err(|e| Error::parse(path, lineno, format!("bad face index: {e}")))?;
            if i as usize >= vertices.len() {
                return Err(Error::parse(path, lineno, "face index out of range"));
            }
            idx.push(i);
        }
        append_polygon(&mut faces, &idx, path, lineno)?;
    }

    finish(vertices, faces, path)
}

/// Write a mesh as OBJ (v/f records).
pub fn save_obj<T: Real>(mesh: &TriangleMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!(
            "v {} {} {}\n",
            crate::num::to_f64(v.x),
            crate::num::to_f64(v.y),
            crate::num::to_f64(v.z)
        ));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

fn append_polygon(
    faces: &mut Vec<[u32; 3]>,
    idx: &[u32],
    path: &Path,
    lineno: usize,
) -> Result<()> {
    match idx.len() {
        3 => faces.push([idx[0], idx[1], idx[2]]),
        4 => {
            faces.push([idx[0], idx[1], idx[2]]);
            faces.push([idx[0], idx[2], idx[3]]);
        }
        n => {
            return Err(Error::parse(
                path,
                lineno,
                format!("{n}-gon faces are not supported (triangles and quads only)"),
            ))
        }
    }
    Ok(())
}

fn finish<T: Real>(
    vertices: Vec<Point3<T>>,
    faces: Vec<[u32; 3]>,
    path: &Path,
) -> Result<TriangleMesh<T>> {
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let (mesh, dropped) = TriangleMesh::new_counting_dropped(vertices, faces)?;
    if dropped > 0 {
        log::info!("{}: dropped {dropped} degenerate face(s)", path.display());
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_OBJ: &str = "\
v -0.5 -0.5 -0.5
v 0.5 -0.5 -0.5
v 0.5 0.5 -0.5
v -0.5 0.5 -0.5
v -0.5 -0.5 0.5
v 0.5 -0.5 0.5
v 0.5 0.5 0.5
v -0.5 0.5 0.5
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

    fn write_temp(name: &str, content: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap().keep();
        let p = dir.join(name);
        fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn loads_unit_cube_obj() {
        let p = write_temp("cube.obj", CUBE_OBJ);
        let mesh: TriangleMesh<f64> = load_mesh(&p).unwrap();
        assert_eq!(mesh.vertex_count(), 8);
        assert_eq!(mesh.face_count(), 12);
    }

    #[test]
    fn drops_degenerate_face_from_file() {
        let content = format!("{CUBE_OBJ}f 1 1 2\n");
        let p = write_temp("degen.obj", &content);
        let mesh: TriangleMesh<f64> = load_mesh(&p).unwrap();
        assert_eq!(mesh.face_count(), 12);
    }

    #[test]
    fn empty_file_is_an_error() {
        let p = write_temp("empty.obj", "");
        assert!(load_mesh::<f64>(&p).is_err());
    }

    #[test]
    fn quads_are_fan_triangulated() {
        let content = "\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3 4
";
        let p = write_temp("quad.obj", content);
        let mesh: TriangleMesh<f64> = load_mesh(&p).unwrap();
        assert_eq!(mesh.face_count(), 2);
    }

    #[test]
    fn pentagons_are_rejected() {
        let content = "\
v 0 0 0
v 1 0 0
v 1 1 0
v 0.5 1.5 0
v 0 1 0
f 1 2 3 4 5
";
        let p = write_temp("pent.obj", content);
        assert!(load_mesh::<f64>(&p).is_err());
    }

    #[test]
    fn obj_face_with_slashes_parses() {
        let content = "\
v 0 0 0
v 1 0 0
v 0 1 0
f 1/1/1 2/2/2 3/3/3
";
        let p = write_temp("slash.obj", content);
        let mesh: TriangleMesh<f64> = load_mesh(&p).unwrap();
        assert_eq!(mesh.face_count(), 1);
    }

    #[test]
    fn loads_ascii_ply() {
        let content = "\
ply
format ascii 1.0
element vertex 3
property float x
property float y
property float z
element face 1
property list uchar int vertex_indices
end_header
0 0 0
1 0 0
0 1 0
3 0 1 2
";
        let p = write_temp("tri.ply", content);
        let mesh: TriangleMesh<f64> = load_mesh(&p).unwrap();
        assert_eq!(mesh.vertex_count(), 3);
        assert_eq!(mesh.face_count(), 1);
    }

    #[test]
    fn obj_roundtrip_via_save() {
        let p = write_temp("cube.obj", CUBE_OBJ);
        let mesh: TriangleMesh<f64> = load_mesh(&p).unwrap();
        let out = p.with_file_name("copy.obj");
        save_obj(&mesh, &out).unwrap();
        let back: TriangleMesh<f64> = load_mesh(&out).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        assert_eq!(back.face_count(), mesh.face_count());
    }
}
