//! PLY export for external viewers.
//!
//! Vertex properties, in order: `float x, y, z`, `float t` (capture time in
//! seconds), `uchar sensor_id`, `uchar dynamic`, `uchar red, green, blue`.

use std::io::{BufRead, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{HimoError, Result};
use crate::geometry::{Frame, Vec3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlyColoring {
    #[default]
    Sensor,
    Dynamic,
}

const SENSOR_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
];
const DYNAMIC_COLOR: [u8; 3] = [214, 39, 40];
const STATIC_COLOR: [u8; 3] = [160, 160, 160];

/// One vertex as stored in a PLY file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlyVertex {
    pub position: Vec3,
    pub t: f64,
    pub sensor_id: u8,
    pub dynamic: bool,
    pub color: [u8; 3],
}

/// Writes `frame` as PLY. `dynamic` overrides the frame's ground-truth
/// dynamic flags when given.
pub fn write_ply<W: Write>(
    mut w: W,
    frame: &Frame,
    dynamic: Option<&[bool]>,
    encoding: PlyEncoding,
    coloring: PlyColoring,
) -> Result<()> {
    let n = frame.len();
    let dynamic: Vec<bool> = match (dynamic, &frame.gt) {
        (Some(d), _) if d.len() == n => d.to_vec(),
        (Some(d), _) => {
            return Err(HimoError::CorrespondenceBroken(format!(
                "{} dynamic flags for {n} points",
                d.len()
            )))
        }
        (None, Some(gt)) => gt.dynamic.clone(),
        (None, None) => vec![false; n],
    };
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        w,
        "ply\nformat {format} 1.0\ncomment frame {}\nelement vertex {n}\n\
         property float x\nproperty float y\nproperty float z\nproperty float t\n\
         property uchar sensor_id\nproperty uchar dynamic\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        frame.frame_index
    )?;
    for (p, &d) in frame.points.iter().zip(&dynamic) {
        let color = match coloring {
            PlyColoring::Sensor => SENSOR_COLORS[p.sensor_id as usize % SENSOR_COLORS.len()],
            PlyColoring::Dynamic if d => DYNAMIC_COLOR,
            PlyColoring::Dynamic => STATIC_COLOR,
        };
        let [x, y, z] = [
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
        ];
        match encoding {
            PlyEncoding::Ascii => writeln!(
                w,
                "{x} {y} {z} {} {} {} {} {} {}",
                p.t as f32, p.sensor_id, d as u8, color[0], color[1], color[2]
            )?,
            PlyEncoding::BinaryLittleEndian => {
                for v in [x, y, z, p.t as f32] {
                    w.write_f32::<LE>(v)?;
                }
                w.write_all(&[p.sensor_id, d as u8])?;
                w.write_all(&color)?;
            }
        }
    }
    Ok(())
}

fn bad(msg: &str) -> HimoError {
    HimoError::Format(format!("ply: {msg}"))
}

/// Reads a PLY file written by [`write_ply`].
pub fn read_ply<R: BufRead>(mut r: R) -> Result<Vec<PlyVertex>> {
    let mut line = String::new();
    let mut header = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("missing end_header"));
        }
        let l = line.trim_end().to_string();
        if l == "end_header" {
            break;
        }
        header.push(l);
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(bad("missing magic"));
    }
    let ascii = match header.get(1).map(String::as_str) {
        Some("format ascii 1.0") => true,
        Some("format binary_little_endian 1.0") => false,
        _ => return Err(bad("unsupported format")),
    };
    let n: usize = header
        .iter()
        .find_map(|l| l.strip_prefix("element vertex "))
        .ok_or_else(|| bad("no vertex element"))?
        .parse()
        .map_err(|_| bad("bad vertex count"))?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = if ascii {
            line.clear();
            r.read_line(&mut line)?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 9 {
                return Err(bad("wrong number of vertex fields"));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("bad number"));
            let byte = |i: usize| f[i].parse::<u8>().map_err(|_| bad("bad byte"));
            PlyVertex {
                position: Vec3::new(num(0)?, num(1)?, num(2)?),
                t: num(3)?,
                sensor_id: byte(4)?,
                dynamic: byte(5)? != 0,
                color: [byte(6)?, byte(7)?, byte(8)?],
            }
        } else {
            let mut f = [0f32; 4];
            r.read_f32_into::<LE>(&mut f)
                .map_err(|_| bad("truncated"))?;
            let mut b = [0u8; 5];
            r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            PlyVertex {
                position: Vec3::new(f[0] as f64, f[1] as f64, f[2] as f64),
                t: f[3] as f64,
                sensor_id: b[0],
                dynamic: b[1] != 0,
                color: [b[2], b[3], b[4]],
            }
        };
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TimedPoint;

    fn two_sensor_frame() -> Frame {
        Frame::new(
            vec![
                TimedPoint::new(Vec3::new(1.5, -2.0, 0.25), 0.0, 0),
                TimedPoint::new(Vec3::new(3.0, 4.0, 1.0), 0.05, 1),
            ],
            0.1,
        )
    }

    fn round_trip(
        f: &Frame,
        enc: PlyEncoding,
        col: PlyColoring,
        d: Option<&[bool]>,
    ) -> Vec<PlyVertex> {
        let mut buf = Vec::new();
        write_ply(&mut buf, f, d, enc, col).unwrap();
        read_ply(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_frame_is_valid() {
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply(
                &mut buf,
                &Frame::new(vec![], 0.1),
                None,
                enc,
                PlyColoring::Sensor,
            )
            .unwrap();
            let text = String::from_utf8_lossy(&buf);
            assert!(text.contains("element vertex 0\n"));
            assert!(text.ends_with("end_header\n"));
        }
    }

    #[test]
    fn both_encodings_preserve_points() {
        let f = two_sensor_frame();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let v = round_trip(&f, enc, PlyColoring::Sensor, None);
            assert_eq!(v.len(), 2);
            assert_eq!(v[1].position, Vec3::new(3.0, 4.0, 1.0));
            assert_eq!(v[1].sensor_id, 1);
            assert_ne!(v[0].color, v[1].color);
        }
    }

    #[test]
    fn dynamic_coloring() {
        let f = two_sensor_frame();
        let v = round_trip(
            &f,
            PlyEncoding::Ascii,
            PlyColoring::Dynamic,
            Some(&[true, false]),
        );
        assert_eq!(v[0].color, DYNAMIC_COLOR);
        assert_eq!(v[1].color, STATIC_COLOR);
        assert!(v[0].dynamic && !v[1].dynamic);
    }

    #[test]
    fn flag_length_mismatch() {
        let mut buf = Vec::new();
        let r = write_ply(
            &mut buf,
            &two_sensor_frame(),
            Some(&[true]),
            PlyEncoding::Ascii,
            PlyColoring::Dynamic,
        );
        assert!(r.is_err());
    }
}
