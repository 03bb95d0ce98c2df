//! ASCII OFF reader.
//!
//! Accepts both `OFF\n<v> <f> <e>` and the `OFF<v> <f> <e>` variant with the
//! counts glued onto the header line. `#` starts a comment.

use super::{fan_triangulate, MeshError, TriMesh};

pub fn parse_off(bytes: &[u8]) -> Result<TriMesh, MeshError> {
    let (mesh, dropped) = parse_off_counted(bytes)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} degenerate OFF faces");
    }
    Ok(mesh)
}

/// Like [`parse_off`], also returning how many degenerate triangles were dropped.
pub fn parse_off_counted(bytes: &[u8]) -> Result<(TriMesh, usize), MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|_| MeshError::NotText)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| MeshError::parse(1, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| MeshError::parse(hline, "missing OFF header"))?;
    let (cline, counts) = if rest.trim().is_empty() {
        lines
            .next()
            .ok_or_else(|| MeshError::parse(hline, "missing element counts"))?
    } else {
        (hline, rest.trim())
    };
    let counts: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| MeshError::parse(cline, "element counts must be integers"))?;
    if counts.len() < 2 {
        return Err(MeshError::parse(cline, "expected vertex and face counts"));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv.min(1 << 20));
    for _ in 0..nv {
        let (line, l) = lines
            .next()
            .ok_or_else(|| MeshError::parse(text.lines().count(), "unexpected end of file in vertex list"))?;
        let mut p = [0.0f64; 3];
        let mut toks = l.split_whitespace();
        for c in &mut p {
            let tok = toks
                .next()
                .ok_or_else(|| MeshError::parse(line, "vertex needs three coordinates"))?;
            *c = tok
                .parse::<f64>()
                .map_err(|_| MeshError::parse(line, format!("bad coordinate `{tok}`")))?;
            if !c.is_finite() {
                return Err(MeshError::parse(line, "non-finite coordinate"));
            }
        }
        vertices.push(p);
    }

    let mut faces = Vec::with_capacity(nf.min(1 << 20));
    let mut dropped = 0;
    let mut poly = Vec::new();
    for _ in 0..nf {
        let (line, l) = lines
            .next()
            .ok_or_else(|| MeshError::parse(text.lines().count(), "unexpected end of file in face list"))?;
        let mut toks = l.split_whitespace();
        let n: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| MeshError::parse(line, "face must start with a vertex count"))?;
        if n < 3 {
            return Err(MeshError::parse(line, format!("face has {n} vertices")));
        }
        poly.clear();
        for _ in 0..n {
            let tok = toks
                .next()
                .ok_or_else(|| MeshError::parse(line, "face has fewer indices than declared"))?;
            let idx: usize = tok
                .parse()
                .map_err(|_| MeshError::parse(line, format!("bad vertex index `{tok}`")))?;
            if idx >= nv {
                return Err(MeshError::parse(
                    line,
                    format!("vertex index {idx} out of range ({nv} vertices)"),
                ));
            }
            poly.push(idx);
        }
        dropped += fan_triangulate(&poly, &mut faces);
    }
    let mesh = TriMesh::new(vertices, faces)?;
    Ok((mesh, dropped))
}

/// ASCII OFF text with shortest round-trip float formatting.
pub fn format_off(mesh: &TriMesh) -> String {
    use std::fmt::Write;
    let mut s = format!("OFF\n{} {} 0\n", mesh.vertices().len(), mesh.face_count());
    for v in mesh.vertices() {
        let _ = writeln!(s, "{:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}
