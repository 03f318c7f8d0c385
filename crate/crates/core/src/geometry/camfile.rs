//! Camera text files: three lines of the 3×3 intrinsic matrix followed by
//! four lines of the 4×4 world-to-camera matrix.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{Intrinsics, Pose};
use crate::error::{CoreError, Result};

pub fn format_cam(k: &Intrinsics, pose: &Pose) -> String {
    let mut s = String::new();
    let km = k.matrix();
    for r in 0..3 {
        let _ = writeln!(s, "{:e} {:e} {:e}", km[(r, 0)], km[(r, 1)], km[(r, 2)]);
    }
    for r in 0..3 {
        let rr = pose.rotation.row(r);
        let _ = writeln!(s, "{:e} {:e} {:e} {:e}", rr[0], rr[1], rr[2], pose.translation[r]);
    }
    s.push_str("0 0 0 1\n");
    s
}

pub fn parse_cam(text: &str, path: &Path) -> Result<(Intrinsics, Pose)> {
    let err = |line: usize, msg: String| CoreError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let rows: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if rows.len() != 7 {
        return Err(err(rows.last().map_or(1, |r| r.0), format!("expected 7 non-empty lines, found {}", rows.len())));
    }
    let mut vals = Vec::with_capacity(7);
    for (i, &(line, text)) in rows.iter().enumerate() {
        let want = if i < 3 { 3 } else { 4 };
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(line, format!("`{t}` is not a number"))))
            .collect::<Result<_>>()?;
        if nums.len() != want {
            return Err(err(line, format!("expected {want} values, found {}", nums.len())));
        }
        vals.push((line, nums));
    }
    let k = &vals[..3];
    if k[0].1[1] != 0.0 || k[1].1[0] != 0.0 || k[2].1 != [0.0, 0.0, 1.0] {
        return Err(err(k[0].0, "intrinsic matrix must be [fx 0 cx; 0 fy cy; 0 0 1]".into()));
    }
    let intr = Intrinsics::new(k[0].1[0], k[1].1[1], k[0].1[2], k[1].1[2]).map_err(|e| err(k[0].0, e.to_string()))?;
    let e = &vals[3..];
    if e[3].1 != [0.0, 0.0, 0.0, 1.0] {
        return Err(err(e[3].0, "last extrinsic row must be 0 0 0 1".into()));
    }
    let r = Matrix3::from_fn(|i, j| e[i].1[j]);
    let t = Vector3::new(e[0].1[3], e[1].1[3], e[2].1[3]);
    let pose = Pose::new(r, t).map_err(|x| err(e[0].0, x.to_string()))?;
    Ok((intr, pose))
}

pub fn write_cam(path: &Path, k: &Intrinsics, pose: &Pose) -> Result<()> {
    fs::write(path, format_cam(k, pose)).map_err(|e| CoreError::io(path, e))
}

pub fn read_cam(path: &Path) -> Result<(Intrinsics, Pose)> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_cam(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn round_trip_is_exact() {
        let k = Intrinsics::new(32.1, 31.7, 15.5, 15.25).unwrap();
        let p = Pose::new(Rotation3::new(Vector3::new(0.0, 0.013, 0.0)).into_inner(), Vector3::new(-0.5, 0.0, 1e-3)).unwrap();
        let (k2, p2) = parse_cam(&format_cam(&k, &p), Path::new("x.cam")).unwrap();
        assert_eq!(k, k2);
        assert_eq!(p, p2);
    }

    #[test]
    fn bad_token_reports_line() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let text = format_cam(&k, &Pose::identity()).replacen("1e0 0e0 0e0 0e0", "1e0 zz 0e0 0e0", 1);
        let e = parse_cam(&text, Path::new("c.cam")).unwrap_err();
        assert!(matches!(e, CoreError::Parse { line: 4, .. }), "{e}");
    }

    #[test]
    fn short_file_is_error() {
        assert!(parse_cam("1 0 0\n0 1 0\n", Path::new("c.cam")).is_err());
    }
}
