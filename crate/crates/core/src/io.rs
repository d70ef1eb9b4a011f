//! Mesh file reading (OBJ, PLY, STL) and OBJ writing.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use ply_rs::parser::Parser;
use ply_rs::ply::{DefaultElement, Property};
use serde::{Deserialize, Serialize};

use crate::mesh::TriangleMesh;
use crate::{GeomError, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Obj,
    Ply,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        ext.parse().ok()
    }
}

impl FromStr for MeshFormat {
    type Err = GeomError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            "stl" => Ok(Self::Stl),
            other => Err(GeomError::Parse(format!("unknown mesh format {other:?}"))),
        }
    }
}

/// Reads a mesh and cleans it (welds duplicates, drops degenerate faces).
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    let (verts, tris) = match format {
        MeshFormat::Obj => read_obj(path)?,
        MeshFormat::Ply => read_ply(path)?,
        MeshFormat::Stl => read_stl(path)?,
    };
    if tris.is_empty() {
        return Err(GeomError::EmptyMesh);
    }
    TriangleMesh::new_cleaned(verts, tris)
}

/// Picks the format from the file extension.
pub fn load_mesh_auto(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| GeomError::Parse(format!("cannot infer format of {}", path.display())))?;
    load_mesh(path, format)
}

type RawMesh = (Vec<Vec3>, Vec<[u32; 3]>);

fn read_obj(path: &Path) -> Result<RawMesh> {
    let opts = tobj::LoadOptions {
        triangulate: true,
        ..Default::default()
    };
    let (models, _) = tobj::load_obj(path, &opts).map_err(|e| GeomError::Parse(e.to_string()))?;
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for m in models {
        let base = verts.len() as u32;
        let p = &m.mesh.positions;
        verts.extend(p.chunks_exact(3).map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64)));
        let idx = &m.mesh.indices;
        if idx.len() % 3 != 0 {
            return Err(GeomError::Parse("face index count not a multiple of 3".into()));
        }
        tris.extend(idx.chunks_exact(3).map(|c| [c[0] + base, c[1] + base, c[2] + base]));
    }
    check_indices(&verts, &tris)?;
    Ok((verts, tris))
}

fn scalar(p: &Property) -> Option<f64> {
    Some(match *p {
        Property::Char(v) => v as f64,
        Property::UChar(v) => v as f64,
        Property::Short(v) => v as f64,
        Property::UShort(v) => v as f64,
        Property::Int(v) => v as f64,
        Property::UInt(v) => v as f64,
        Property::Float(v) => v as f64,
        Property::Double(v) => v,
        _ => return None,
    })
}

fn index_list(p: &Property) -> Option<Vec<i64>> {
    Some(match p {
        Property::ListChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUChar(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUShort(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListInt(v) => v.iter().map(|&x| x as i64).collect(),
        Property::ListUInt(v) => v.iter().map(|&x| x as i64).collect(),
        _ => return None,
    })
}

fn read_ply(path: &Path) -> Result<RawMesh> {
    let mut reader = BufReader::new(File::open(path)?);
    let parser = Parser::<DefaultElement>::new();
    let ply = parser
        .read_ply(&mut reader)
        .map_err(|e| GeomError::Parse(e.to_string()))?;
    let vertex_els = ply
        .payload
        .get("vertex")
        .ok_or_else(|| GeomError::Parse("PLY has no vertex element".into()))?;
    let mut verts = Vec::with_capacity(vertex_els.len());
    for el in vertex_els {
        let get = |k: &str| {
            el.get(k)
                .and_then(scalar)
                .ok_or_else(|| GeomError::Parse(format!("vertex missing scalar {k:?}")))
        };
        verts.push(Vec3::new(get("x")?, get("y")?, get("z")?));
    }
    let mut tris = Vec::new();
    if let Some(faces) = ply.payload.get("face") {
        for el in faces {
            let list = el
                .get("vertex_indices")
                .or_else(|| el.get("vertex_index"))
                .and_then(index_list)
                .ok_or_else(|| GeomError::Parse("face missing vertex index list".into()))?;
            if list.len() < 3 || list.iter().any(|&i| i < 0) {
                return Err(GeomError::Parse("malformed face".into()));
            }
            // fan triangulation of polygons
            for k in 1..list.len() - 1 {
                tris.push([list[0] as u32, list[k] as u32, list[k + 1] as u32]);
            }
        }
    }
    check_indices(&verts, &tris)?;
    Ok((verts, tris))
}

fn read_stl(path: &Path) -> Result<RawMesh> {
    let mut file = BufReader::new(File::open(path)?);
    let stl = stl_io::read_stl(&mut file).map_err(|e| GeomError::Parse(e.to_string()))?;
    let verts = stl
        .vertices
        .iter()
        .map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
        .collect();
    let tris = stl
        .faces
        .iter()
        .map(|f| f.vertices.map(|i| i as u32))
        .collect();
    Ok((verts, tris))
}

fn check_indices(verts: &[Vec3], tris: &[[u32; 3]]) -> Result<()> {
    for (i, t) in tris.iter().enumerate() {
        if t.iter().any(|&v| v as usize >= verts.len()) {
            return Err(GeomError::IndexOutOfRange {
                triangle: i,
                vertex_count: verts.len(),
            });
        }
    }
    Ok(())
}

/// Formats with 9 significant digits, `%g` style.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

/// Writes ASCII OBJ with 9 significant digits per coordinate.
pub fn write_obj(mesh: &TriangleMesh, out: &mut impl Write) -> Result<()> {
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", fmt_sig9(v.x), fmt_sig9(v.y), fmt_sig9(v.z))?;
    }
    for t in mesh.triangles() {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
