//! ASCII Gmsh MSH 2.2 import and export.
//!
//! Only 4-node tetrahedra (type 4) and 3-node triangles (type 2) carry mesh
//! data. Point (15) and line (1) elements are skipped; any other element type
//! is rejected.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::mesh::{Mesh, MeshError, Point};

const ELEM_LINE: usize = 1;
const ELEM_TRIANGLE: usize = 2;
const ELEM_TET: usize = 4;
const ELEM_POINT: usize = 15;

pub fn read_msh(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
    parse_msh(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Option<&'a str> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Some(t);
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<&'a str, MeshError> {
        self.next().ok_or_else(|| MeshError::Parse {
            line: self.line,
            message: format!("unexpected end of file, expected {what}"),
        })
    }

    fn err(&self, message: impl Into<String>) -> MeshError {
        MeshError::Parse { line: self.line, message: message.into() }
    }
}

fn parse_usize(lines: &Lines, tok: &str, what: &str) -> Result<usize, MeshError> {
    tok.parse().map_err(|_| lines.err(format!("invalid {what} '{tok}'")))
}

pub fn parse_msh(text: &str) -> Result<Mesh, MeshError> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    let mut saw_format = false;
    let mut nodes: Vec<(usize, Point)> = Vec::new();
    let mut tets: Vec<[usize; 4]> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    while let Some(header) = lines.next() {
        match header {
            "$MeshFormat" => {
                let l = lines.expect("format line")?;
                let toks: Vec<&str> = l.split_whitespace().collect();
                if toks.len() < 3 {
                    return Err(lines.err(format!("malformed $MeshFormat line '{l}'")));
                }
                if !toks[0].starts_with("2.") {
                    return Err(lines.err(format!("unsupported MSH version {}", toks[0])));
                }
                if toks[1] != "0" {
                    return Err(lines.err("binary MSH files are not supported"));
                }
                if lines.expect("$EndMeshFormat")? != "$EndMeshFormat" {
                    return Err(lines.err("missing $EndMeshFormat"));
                }
                saw_format = true;
            }
            "$Nodes" => {
                if !saw_format {
                    return Err(lines.err("$Nodes before $MeshFormat"));
                }
                let count_line = lines.expect("node count")?;
                let count = parse_usize(&lines, count_line, "node count")?;
                nodes.reserve(count);
                for _ in 0..count {
                    let l = lines.expect("node")?;
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    if toks.len() != 4 {
                        return Err(lines.err(format!("malformed node line '{l}'")));
                    }
                    let tag = parse_usize(&lines, toks[0], "node tag")?;
                    let mut p = [0.0; 3];
                    for d in 0..3 {
                        p[d] = toks[d + 1]
                            .parse()
                            .map_err(|_| lines.err(format!("invalid coordinate '{}'", toks[d + 1])))?;
                    }
                    nodes.push((tag, p));
                }
                if lines.expect("$EndNodes")? != "$EndNodes" {
                    return Err(lines.err("node count does not match $EndNodes position"));
                }
            }
            "$Elements" => {
                if !saw_format {
                    return Err(lines.err("$Elements before $MeshFormat"));
                }
                let count_line = lines.expect("element count")?;
                let count = parse_usize(&lines, count_line, "element count")?;
                for _ in 0..count {
                    let l = lines.expect("element")?;
                    let toks: Vec<usize> = l
                        .split_whitespace()
                        .map(|t| parse_usize(&lines, t, "element field"))
                        .collect::<Result<_, _>>()?;
                    if toks.len() < 3 {
                        return Err(lines.err(format!("malformed element line '{l}'")));
                    }
                    let (tag, kind, ntags) = (toks[0], toks[1], toks[2]);
                    let node_ids = toks.get(3 + ntags..).unwrap_or(&[]);
                    let expected = match kind {
                        ELEM_POINT => 1,
                        ELEM_LINE => 2,
                        ELEM_TRIANGLE => 3,
                        ELEM_TET => 4,
                        _ => return Err(MeshError::UnsupportedElement { tag, kind }),
                    };
                    if node_ids.len() != expected {
                        return Err(lines.err(format!(
                            "element {tag} of type {kind} has {} nodes, expected {expected}",
                            node_ids.len()
                        )));
                    }
                    match kind {
                        ELEM_TRIANGLE => triangles.push([node_ids[0], node_ids[1], node_ids[2]]),
                        ELEM_TET => tets.push([node_ids[0], node_ids[1], node_ids[2], node_ids[3]]),
                        _ => {}
                    }
                }
                if lines.expect("$EndElements")? != "$EndElements" {
                    return Err(lines.err("element count does not match $EndElements position"));
                }
            }
            other if other.starts_with("$End") => {
                return Err(lines.err(format!("unexpected {other}")));
            }
            other if other.starts_with('$') => {
                // skip unknown sections such as $PhysicalNames
                let end = format!("$End{}", &other[1..]);
                loop {
                    if lines.expect(&end)? == end {
                        break;
                    }
                }
            }
            other => return Err(lines.err(format!("unexpected content '{other}'"))),
        }
    }
    if !saw_format {
        return Err(MeshError::Parse { line: lines.line, message: "missing $MeshFormat header".into() });
    }
    if tets.is_empty() {
        return Err(MeshError::Parse { line: lines.line, message: "file contains no tetrahedra".into() });
    }

    // compact to the nodes referenced by tetrahedra, keeping file order
    let mut by_tag: HashMap<usize, usize> = HashMap::with_capacity(nodes.len());
    for (i, (tag, _)) in nodes.iter().enumerate() {
        if by_tag.insert(*tag, i).is_some() {
            return Err(MeshError::Parse { line: 0, message: format!("duplicate node tag {tag}") });
        }
    }
    let mut used = vec![false; nodes.len()];
    let lookup = |tag: usize| {
        by_tag
            .get(&tag)
            .copied()
            .ok_or_else(|| MeshError::Parse { line: 0, message: format!("element references unknown node {tag}") })
    };
    let tets: Vec<[usize; 4]> = tets
        .into_iter()
        .map(|t| -> Result<_, MeshError> { Ok([lookup(t[0])?, lookup(t[1])?, lookup(t[2])?, lookup(t[3])?]) })
        .collect::<Result<_, _>>()?;
    for t in &tets {
        for &v in t {
            used[v] = true;
        }
    }
    let triangles: Vec<[usize; 3]> = triangles
        .into_iter()
        .map(|f| -> Result<_, MeshError> { Ok([lookup(f[0])?, lookup(f[1])?, lookup(f[2])?]) })
        .collect::<Result<_, _>>()?;
    let mut new_index = vec![usize::MAX; nodes.len()];
    let mut vertices = Vec::new();
    for (i, (_, p)) in nodes.iter().enumerate() {
        if used[i] {
            new_index[i] = vertices.len();
            vertices.push(*p);
        }
    }
    let tets = tets.into_iter().map(|t| t.map(|v| new_index[v])).collect();
    let boundary = if triangles.is_empty() {
        None
    } else {
        let mut faces = Vec::with_capacity(triangles.len());
        for (k, f) in triangles.into_iter().enumerate() {
            if f.iter().any(|&v| new_index[v] == usize::MAX) {
                return Err(MeshError::NotWatertight(format!(
                    "triangle {k} uses a node that belongs to no tetrahedron"
                )));
            }
            faces.push(f.map(|v| new_index[v]));
        }
        Some(faces)
    };
    Mesh::new(vertices, tets, boundary)
}

/// Serializes a mesh as ASCII MSH 2.2 with boundary triangles listed before tetrahedra.
pub fn write_msh_string(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n");
    let _ = writeln!(out, "{}", mesh.vertex_count());
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = writeln!(out, "{} {:e} {:e} {:e}", i + 1, p[0], p[1], p[2]);
    }
    out.push_str("$EndNodes\n$Elements\n");
    let _ = writeln!(out, "{}", mesh.face_count() + mesh.tet_count());
    let mut tag = 1;
    for f in mesh.boundary_faces() {
        let _ = writeln!(out, "{tag} {ELEM_TRIANGLE} 2 1 1 {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        tag += 1;
    }
    for t in mesh.tets() {
        let _ = writeln!(out, "{tag} {ELEM_TET} 2 2 2 {} {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1);
        tag += 1;
    }
    out.push_str("$EndElements\n");
    out
}

pub fn write_msh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let path = path.as_ref();
    fs::write(path, write_msh_string(mesh)).map_err(|source| MeshError::Io { path: path.display().to_string(), source })
}
