//! Binary frame container.
//!
//! Layout, little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"HIMO"` |
//! | version | u16 |
//! | point count `n` | u64 |
//! | scan duration | f64 |
//! | ego start, ego end | 2 × 12 f64 (rotation row-major, then translation; NaN when absent) |
//! | x, y, z, t | n × f32 each |
//! | sensor id, ground | n × u8 each |
//! | ground-truth flag | u8 |
//! | correction x, y, z; flow x, y, z | n × f32 each (if flag = 1) |
//! | dynamic | n × u8 (if flag = 1) |
//! | track id | n × i32 (if flag = 1) |

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{HimoError, Result};
use crate::geometry::{EgoTrajectory, Frame, GroundTruth, RigidMotion, TimedPoint, Vec3};

pub const MAGIC: &[u8; 4] = b"HIMO";
pub const FORMAT_VERSION: u16 = 1;

/// Serializes `frame`. Positions, timestamps and ground truth are stored as
/// f32; see [`quantize`] for frames that must round-trip exactly.
pub fn write_frame<W: Write>(mut w: W, frame: &Frame) -> Result<()> {
    let n = frame.len();
    w.write_all(MAGIC)?;
    w.write_u16::<LE>(FORMAT_VERSION)?;
    w.write_u64::<LE>(n as u64)?;
    w.write_f64::<LE>(frame.scan_duration)?;
    let poses = match frame.ego {
        Some(e) => [e.start.to_array(), e.end.to_array()],
        None => [[f64::NAN; 12]; 2],
    };
    for v in poses.iter().flatten() {
        w.write_f64::<LE>(*v)?;
    }
    for axis in 0..3 {
        for p in &frame.points {
            w.write_f32::<LE>(p.position[axis] as f32)?;
        }
    }
    for p in &frame.points {
        w.write_f32::<LE>(p.t as f32)?;
    }
    for p in &frame.points {
        w.write_u8(p.sensor_id)?;
    }
    for p in &frame.points {
        w.write_u8(p.ground as u8)?;
    }
    match &frame.gt {
        None => w.write_u8(0)?,
        Some(gt) => {
            if gt.len() != n {
                return Err(HimoError::Format(
                    "ground truth length does not match point count".into(),
                ));
            }
            w.write_u8(1)?;
            for field in [&gt.correction, &gt.flow] {
                for axis in 0..3 {
                    for v in field {
                        w.write_f32::<LE>(v[axis] as f32)?;
                    }
                }
            }
            for &d in &gt.dynamic {
                w.write_u8(d as u8)?;
            }
            for &id in &gt.track_id {
                w.write_i32::<LE>(id)?;
            }
        }
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> HimoError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        HimoError::Format("truncated frame file".into())
    } else {
        HimoError::Io(e)
    }
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut v = vec![0f32; n];
    r.read_f32_into::<LE>(&mut v).map_err(truncated)?;
    Ok(v)
}

fn read_u8s<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut v = vec![0u8; n];
    r.read_exact(&mut v).map_err(truncated)?;
    Ok(v)
}

fn read_vec3s<R: Read>(r: &mut R, n: usize) -> Result<Vec<Vec3>> {
    let (x, y, z) = (read_f32s(r, n)?, read_f32s(r, n)?, read_f32s(r, n)?);
    Ok((0..n)
        .map(|i| Vec3::new(x[i] as f64, y[i] as f64, z[i] as f64))
        .collect())
}

/// Parses a frame. The frame index is not part of the container and is left
/// at zero; [`read_frame_file`] takes it from the file name.
pub fn read_frame<R: Read>(mut r: R) -> Result<Frame> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(HimoError::Format("bad magic, not a frame file".into()));
    }
    let version = r.read_u16::<LE>().map_err(truncated)?;
    if version != FORMAT_VERSION {
        return Err(HimoError::Format(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n = usize::try_from(r.read_u64::<LE>().map_err(truncated)?)
        .map_err(|_| HimoError::Format("point count overflows".into()))?;
    let scan_duration = r.read_f64::<LE>().map_err(truncated)?;
    let mut poses = [[0f64; 12]; 2];
    for pose in poses.iter_mut() {
        r.read_f64_into::<LE>(pose).map_err(truncated)?;
    }
    let ego = match poses.iter().flatten().filter(|v| v.is_nan()).count() {
        0 => Some(EgoTrajectory {
            start: RigidMotion::from_array(&poses[0]),
            end: RigidMotion::from_array(&poses[1]),
        }),
        24 => None,
        _ => return Err(HimoError::Format("partially missing ego trajectory".into())),
    };

    let positions = read_vec3s(&mut r, n)?;
    let t = read_f32s(&mut r, n)?;
    let sensor = read_u8s(&mut r, n)?;
    let ground = read_u8s(&mut r, n)?;
    let points = (0..n)
        .map(|i| TimedPoint {
            position: positions[i],
            t: t[i] as f64,
            sensor_id: sensor[i],
            ground: ground[i] != 0,
        })
        .collect();

    let gt = match r.read_u8().map_err(truncated)? {
        0 => None,
        1 => {
            let correction = read_vec3s(&mut r, n)?;
            let flow = read_vec3s(&mut r, n)?;
            let dynamic = read_u8s(&mut r, n)?.into_iter().map(|d| d != 0).collect();
            let mut track_id = vec![0i32; n];
            r.read_i32_into::<LE>(&mut track_id).map_err(truncated)?;
            Some(GroundTruth {
                correction,
                flow,
                dynamic,
                track_id,
            })
        }
        flag => return Err(HimoError::Format(format!("bad ground-truth flag {flag}"))),
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(HimoError::Format("trailing bytes after frame".into()));
    }
    let frame = Frame {
        points,
        scan_duration,
        ego,
        frame_index: 0,
        gt,
    };
    frame.validate()?;
    Ok(frame)
}

/// File name of frame `index` inside an output directory.
pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.himo")
}

/// Index encoded in a name produced by [`frame_file_name`].
pub fn frame_index_from_name(path: &Path) -> Option<u64> {
    path.file_stem()?
        .to_str()?
        .strip_prefix("frame_")?
        .parse()
        .ok()
}

pub fn read_frame_file(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path)?;
    let mut frame = read_frame(bytes.as_slice())?;
    frame.frame_index = frame_index_from_name(path).unwrap_or(0);
    Ok(frame)
}

pub fn frame_to_bytes(frame: &Frame) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(64 + frame.len() * 50);
    write_frame(&mut buf, frame)?;
    Ok(buf)
}

/// Largest f32 not above `v`.
fn f32_floor(v: f64) -> f64 {
    let q = v as f32;
    if (q as f64) <= v {
        q as f64
    } else {
        q.next_down() as f64
    }
}

/// Rounds every stored quantity to the precision of the frame file, so that
/// writing and reading the frame is the identity. Timestamps round down to
/// stay within the sweep.
pub fn quantize(frame: &mut Frame) {
    let round = |v: &mut Vec3| v.apply(|c| *c = *c as f32 as f64);
    for p in frame.points.iter_mut() {
        round(&mut p.position);
        p.t = f32_floor(p.t);
    }
    if let Some(gt) = frame.gt.as_mut() {
        gt.correction
            .iter_mut()
            .chain(gt.flow.iter_mut())
            .for_each(round);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(with_ego: bool, with_gt: bool) -> Frame {
        let pts = vec![
            TimedPoint::new(Vec3::new(1.0, 2.0, 3.0), 0.0, 0),
            TimedPoint {
                ground: true,
                ..TimedPoint::new(Vec3::new(-4.5, 0.25, -1.75), 0.05, 1)
            },
        ];
        let mut f = Frame::new(pts, 0.1);
        if with_ego {
            f.ego = Some(EgoTrajectory {
                start: RigidMotion::from_yaw(0.1, Vec3::new(1.0, 2.0, 0.0)),
                end: RigidMotion::from_yaw(0.2, Vec3::new(2.0, 2.5, 0.0)),
            });
        }
        if with_gt {
            let mut gt = GroundTruth::with_len(2);
            gt.correction[0] = Vec3::new(0.5, 0.0, 0.0);
            gt.flow[0] = Vec3::new(1.0, 0.0, 0.0);
            gt.dynamic[0] = true;
            gt.track_id[0] = 7;
            f.gt = Some(gt);
        }
        f
    }

    #[test]
    fn round_trip_variants() {
        for (e, g) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut f = sample(e, g);
            quantize(&mut f);
            let back = read_frame(frame_to_bytes(&f).unwrap().as_slice()).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn empty_frame() {
        let f = Frame::new(Vec::new(), 0.1);
        let bytes = frame_to_bytes(&f).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 8 + 8 + 24 * 8 + 1);
        assert_eq!(read_frame(bytes.as_slice()).unwrap(), f);
    }

    #[test]
    fn header_layout() {
        let bytes = frame_to_bytes(&sample(true, false)).unwrap();
        assert_eq!(&bytes[..4], b"HIMO");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[14..22].try_into().unwrap()), 0.1);
        let n = 2;
        let expected = 22 + 24 * 8 + n * (4 * 4 + 2) + 1;
        assert_eq!(bytes.len(), expected);
    }

    #[test]
    fn version_mismatch_is_an_error() {
        let mut bytes = frame_to_bytes(&sample(false, false)).unwrap();
        bytes[4] = 9;
        let err = read_frame(bytes.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = frame_to_bytes(&sample(true, true)).unwrap();
        assert!(read_frame(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_frame(extra.as_slice()).is_err());
        let mut magic = bytes;
        magic[0] = b'X';
        assert!(read_frame(magic.as_slice()).is_err());
    }

    #[test]
    fn names() {
        assert_eq!(frame_file_name(12), "frame_000012.himo");
        assert_eq!(
            frame_index_from_name(Path::new("out/frame_000012.himo")),
            Some(12)
        );
        assert_eq!(frame_index_from_name(Path::new("out/x.himo")), None);
    }

    #[test]
    fn quantized_time_stays_in_sweep() {
        let mut f = Frame::new(vec![TimedPoint::new(Vec3::zeros(), 0.1, 0)], 0.1);
        quantize(&mut f);
        assert!(f.points[0].t <= 0.1);
        f.validate().unwrap();
    }

    proptest! {
        #[test]
        fn quantized_frames_round_trip(
            pts in prop::collection::vec(
                ((-200.0..200.0f64, -200.0..200.0f64, -5.0..20.0f64), 0.0..0.1f64, 0u8..4, any::<bool>()),
                0..50,
            ),
        ) {
            let points = pts
                .iter()
                .map(|&((x, y, z), t, s, g)| TimedPoint { ground: g, ..TimedPoint::new(Vec3::new(x, y, z), t, s) })
                .collect();
            let mut f = Frame::new(points, 0.1);
            quantize(&mut f);
            let bytes = frame_to_bytes(&f).unwrap();
            let back = read_frame(bytes.as_slice()).unwrap();
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(frame_to_bytes(&back).unwrap(), bytes);
        }
    }
}
