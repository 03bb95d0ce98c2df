//! Wavefront OBJ reader. Only `v` and `f` records are consumed.

use super::{fan_triangulate, MeshError, TriMesh};

pub fn parse_obj(bytes: &[u8]) -> Result<TriMesh, MeshError> {
    let (mesh, dropped) = parse_obj_counted(bytes)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} degenerate OBJ faces");
    }
    Ok(mesh)
}

pub fn parse_obj_counted(bytes: &[u8]) -> Result<(TriMesh, usize), MeshError> {
    let text = std::str::from_utf8(bytes).map_err(|_| MeshError::NotText)?;
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    let mut dropped = 0;
    let mut poly = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.split('#').next().unwrap_or("").trim();
        let mut toks = l.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for c in &mut p {
                    let tok = toks
                        .next()
                        .ok_or_else(|| MeshError::parse(line, "vertex needs three coordinates"))?;
                    *c = tok
                        .parse()
                        .map_err(|_| MeshError::parse(line, format!("bad coordinate `{tok}`")))?;
                    if !c.is_finite() {
                        return Err(MeshError::parse(line, "non-finite coordinate"));
                    }
                }
                vertices.push(p);
            }
            Some("f") => {
                poly.clear();
                for tok in toks {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = head
                        .parse()
                        .map_err(|_| MeshError::parse(line, format!("bad face index `{tok}`")))?;
                    let n = vertices.len() as i64;
                    let idx = match raw {
                        0 => return Err(MeshError::parse(line, "face index 0 is invalid in OBJ")),
                        r if r > 0 => r - 1,
                        r => n + r,
                    };
                    if idx < 0 || idx >= n {
                        return Err(MeshError::parse(
                            line,
                            format!("face index {raw} out of range ({n} vertices so far)"),
                        ));
                    }
                    poly.push(idx as usize);
                }
                if poly.len() < 3 {
                    return Err(MeshError::parse(line, format!("face has {} vertices", poly.len())));
                }
                dropped += fan_triangulate(&poly, &mut faces);
            }
            _ => {}
        }
    }
    let mesh = TriMesh::new(vertices, faces)?;
    Ok((mesh, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TET: &str = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 3 2\nf 1 2 4\nf 2 3 4\nf 3 1 4\n";

    #[test]
    fn tetrahedron() {
        let m = parse_obj(TET.as_bytes()).unwrap();
        assert_eq!(m.face_count(), 4);
        assert_eq!(m.vertices().len(), 4);
    }

    #[test]
    fn suffixes_are_stripped() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/2/2 3/3/3\n";
        assert_eq!(parse_obj(src.as_bytes()).unwrap().faces(), &[[0, 1, 2]]);
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1//1 2//1 3//1\n";
        assert_eq!(parse_obj(src.as_bytes()).unwrap().faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn negative_indices_are_relative() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n";
        assert_eq!(parse_obj(src.as_bytes()).unwrap().faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn quads_are_fanned() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        assert_eq!(parse_obj(src.as_bytes()).unwrap().faces(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n";
        assert!(matches!(
            parse_obj(src.as_bytes()),
            Err(MeshError::Parse { line: 4, .. })
        ));
        let src = "v 0 0 0\nv 1 x 0\n";
        assert!(matches!(
            parse_obj(src.as_bytes()),
            Err(MeshError::Parse { line: 2, .. })
        ));
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n";
        assert!(matches!(
            parse_obj(src.as_bytes()),
            Err(MeshError::Parse { line: 4, .. })
        ));
    }
}
