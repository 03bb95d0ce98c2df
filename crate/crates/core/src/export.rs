//! Colored mesh and CSV output for per-face feature channels.

use std::io::{self, Write};

/// Linear blue→red ramp over the range of `values`. A constant channel maps
/// to the midpoint.
pub fn colormap(values: &[f64]) -> Vec<[u8; 3]> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let r = (255.0 * t).round() as u8;
            [r, 0, 255 - r]
        })
        .collect()
}

/// ASCII PLY with three unshared vertices per face and a per-face color.
pub fn write_face_ply<W: Write>(w: &mut W, faces: &[[[f64; 3]; 3]], colors: &[[u8; 3]]) -> io::Result<()> {
    if faces.len() != colors.len() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("{} faces but {} colors", faces.len(), colors.len()),
        ));
    }
    writeln!(w, "ply\nformat ascii 1.0")?;
    writeln!(w, "element vertex {}", 3 * faces.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "element face {}", faces.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    writeln!(
        w,
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header"
    )?;
    for f in faces {
        for v in f {
            writeln!(w, "{} {} {}", v[0] as f32, v[1] as f32, v[2] as f32)?;
        }
    }
    for (i, c) in colors.iter().enumerate() {
        writeln!(w, "3 {} {} {} {} {} {}", 3 * i, 3 * i + 1, 3 * i + 2, c[0], c[1], c[2])?;
    }
    Ok(())
}

pub fn write_channel_csv<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    writeln!(w, "face,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    Ok(())
}
