//! On-disk formats: MOTChallenge text rows, DGRID1 depth grids and APPR1
//! float tables.
//!
//! DGRID1: `b"DGRID1"`, `u32` rows, `u32` cols, then `rows·cols` `f32`
//! values row-major. APPR1: `b"APPR1"`, `u32` count, `u32` dim, then
//! `count·dim` `f32` values. All integers and floats are little-endian.

use std::path::Path;

use crate::error::{bail, Error, Result};
use crate::geometry::Box2D;
use crate::tracker::TrackRecord;

/// One MOTChallenge row; `id` is −1 for anonymous detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotRow {
    pub frame: u32,
    pub id: i64,
    pub bbox: Box2D,
    pub conf: f64,
}

pub fn parse_mot(text: &str) -> Result<Vec<MotRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 7 {
            bail!(Format, "line {}: expected at least 7 fields, got {}", n + 1, f.len());
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>().map_err(|_| Error::Format(format!("line {}: bad number {:?}", n + 1, f[i])))
        };
        let frame = num(0)?;
        if frame < 1.0 || frame.fract() != 0.0 || frame > u32::MAX as f64 {
            bail!(Format, "line {}: frame {frame} must be a positive integer", n + 1);
        }
        let id = num(1)?;
        if id.fract() != 0.0 {
            bail!(Format, "line {}: id {id} is not an integer", n + 1);
        }
        let bbox = Box2D { x: num(2)?, y: num(3)?, w: num(4)?, h: num(5)? };
        if !bbox.is_valid() {
            bail!(Format, "line {}: invalid box", n + 1);
        }
        rows.push(MotRow { frame: frame as u32, id: id as i64, bbox, conf: num(6)? });
    }
    Ok(rows)
}

pub fn mot_line(frame: u32, id: i64, b: &Box2D, conf: f64) -> String {
    format!("{frame},{id},{:.2},{:.2},{:.2},{:.2},{conf:.4},-1,-1,-1\n", b.x, b.y, b.w, b.h)
}

pub fn write_tracks(records: &[TrackRecord]) -> String {
    records.iter().map(|r| mot_line(r.frame, r.id as i64, &r.bbox, r.confidence)).collect()
}

/// Rows as track records; every id must be ≥ 1.
pub fn tracks_from_rows(rows: &[MotRow]) -> Result<Vec<TrackRecord>> {
    rows.iter()
        .map(|r| {
            if r.id < 1 || r.id > u32::MAX as i64 {
                bail!(Format, "frame {}: track id {} must be ≥ 1", r.frame, r.id);
            }
            Ok(TrackRecord::new(r.frame, r.id as u32, r.bbox, r.conf))
        })
        .collect()
}

pub fn read_tracks(path: &Path) -> Result<Vec<TrackRecord>> {
    tracks_from_rows(&parse_mot(&std::fs::read_to_string(path)?)?)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        bail!(Format, "{what}: truncated");
    }
    let (a, b) = bytes.split_at(n);
    *bytes = b;
    Ok(a)
}

fn take_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4, what)?.try_into().unwrap()))
}

fn encode(magic: &[u8], a: u32, b: u32, values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(magic.len() + 8 + 4 * values.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&a.to_le_bytes());
    out.extend_from_slice(&b.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(magic: &[u8], mut bytes: &[u8], what: &str) -> Result<(u32, u32, Vec<f32>)> {
    if take(&mut bytes, magic.len(), what)? != magic {
        bail!(Format, "{what}: bad magic");
    }
    let a = take_u32(&mut bytes, what)?;
    let b = take_u32(&mut bytes, what)?;
    let n = (a as usize).checked_mul(b as usize).ok_or_else(|| Error::Format(format!("{what}: size overflow")))?;
    if bytes.len() != 4 * n {
        bail!(Format, "{what}: expected {} payload bytes, found {}", 4 * n, bytes.len());
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((a, b, values))
}

/// Dense depth map in `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl DepthGrid {
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(b"DGRID1", self.rows as u32, self.cols as u32, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (rows, cols, values) = decode(b"DGRID1", bytes, "DGRID1")?;
        Ok(Self { rows: rows as usize, cols: cols as usize, values })
    }
}

/// `count` vectors of length `dim`, stored as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApprTable {
    pub count: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl ApprTable {
    pub fn from_rows(dim: usize, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != dim) {
            bail!(Shape, "APPR1 rows must all have length {dim}");
        }
        Ok(Self { count: rows.len(), dim, values: rows.iter().flatten().map(|&v| v as f32).collect() })
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values[i * self.dim..(i + 1) * self.dim].iter().map(|&v| v as f64).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(b"APPR1", self.count as u32, self.dim as u32, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (count, dim, values) = decode(b"APPR1", bytes, "APPR1")?;
        Ok(Self { count: count as usize, dim: dim as usize, values })
    }
}

/// Rounds to the nearest `f32`, so values survive a binary round trip.
pub fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Rounds to two decimals, so values survive a MOT text round trip.
pub fn to_centi(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    #[test]
    fn mot_round_trip() {
        let mut rng = SimRng::new(1);
        let recs: Vec<TrackRecord> = (0..50)
            .map(|i| {
                let b = Box2D { x: to_centi(rng.range(-5.0, 600.0)), y: to_centi(rng.range(0.0, 300.0)), w: to_centi(rng.range(1.0, 80.0)), h: to_centi(rng.range(1.0, 90.0)) };
                TrackRecord::new(1 + i / 7, 1 + i % 7, b, 1.0)
            })
            .collect();
        let text = write_tracks(&recs);
        let back = tracks_from_rows(&parse_mot(&text).unwrap()).unwrap();
        assert_eq!(back, recs);
        assert_eq!(write_tracks(&back), text);
    }

    #[test]
    fn mot_errors() {
        assert!(parse_mot("1,2,3").is_err());
        assert!(parse_mot("0,1,0,0,1,1,1,-1,-1,-1").is_err());
        assert!(parse_mot("1,1,0,0,-1,1,1,-1,-1,-1").is_err());
        assert!(parse_mot("1,x,0,0,1,1,1").is_err());
        let rows = parse_mot("\n1,-1,0,0,1,1,0.9,-1,-1,-1\n").unwrap();
        assert_eq!(rows[0].id, -1);
        assert!(tracks_from_rows(&rows).is_err());
        // MOT17-style ground truth with class and visibility columns
        assert_eq!(parse_mot("3,4,1,2,3,4,1,1,1.0").unwrap()[0].frame, 3);
    }

    #[test]
    fn binary_round_trips() {
        let g = DepthGrid { rows: 2, cols: 3, values: vec![1.0, 2.5, 3.0, 4.0, 5.0, 6.25] };
        assert_eq!(DepthGrid::from_bytes(&g.to_bytes()).unwrap(), g);
        let a = ApprTable::from_rows(2, &[vec![0.1, 0.2], vec![-1.0, 3.0]]).unwrap();
        let back = ApprTable::from_bytes(&a.to_bytes()).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.row(1), vec![-1.0, 3.0]);
        assert_eq!(&a.to_bytes()[..5], b"APPR1");
    }

    #[test]
    fn binary_errors() {
        let g = DepthGrid { rows: 1, cols: 2, values: vec![1.0, 2.0] };
        let mut bytes = g.to_bytes();
        bytes.pop();
        assert!(DepthGrid::from_bytes(&bytes).is_err());
        assert!(DepthGrid::from_bytes(b"DGRIDX").is_err());
        assert!(ApprTable::from_bytes(&g.to_bytes()).is_err());
        assert!(ApprTable::from_rows(3, &[vec![1.0]]).is_err());
    }
}
