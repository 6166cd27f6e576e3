//! Sparse haptic map: one embedding per mapped foothold, queried by 2D
//! nearest neighbour.
//!
//! `.hmap` layout (little-endian): magic `HMAP`, version u32 (1),
//! embed_dim u32, entry count u64, then per entry: source_step_id u64,
//! x f64, y f64, elevation f64, embedding as `embed_dim` f32 values.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::NetworkParams;
use crate::signal_io::{HapticSignal, Trial};

/// Grid cell size of the spatial index, in meters.
pub const GRID_CELL: f64 = 0.25;

const MAGIC: &[u8; 4] = b"HMAP";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 4 + 8;
const ENTRY_FIXED_BYTES: usize = 8 + 3 * 8;

#[derive(Clone, Debug, PartialEq)]
pub struct MapEntry {
    pub xy: [f64; 2],
    pub elevation: f64,
    pub embedding: Vec<f32>,
    pub source_step_id: u64,
}

/// Uniform grid hash over entry positions.
#[derive(Clone, Debug, Default)]
struct GridIndex {
    cells: HashMap<(i64, i64), Vec<usize>>,
    lo: (i64, i64),
    hi: (i64, i64),
}

fn cell_of(xy: [f64; 2]) -> (i64, i64) {
    ((xy[0] / GRID_CELL).floor() as i64, (xy[1] / GRID_CELL).floor() as i64)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

impl GridIndex {
    fn build(entries: &[MapEntry]) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN);
        for (i, e) in entries.iter().enumerate() {
            let c = cell_of(e.xy);
            lo = (lo.0.min(c.0), lo.1.min(c.1));
            hi = (hi.0.max(c.0), hi.1.max(c.1));
            cells.entry(c).or_default().push(i);
        }
        Self { cells, lo, hi }
    }

    /// Searches square rings of cells outward from the query cell. After ring
    /// `r` every unvisited entry is at least `r · GRID_CELL` away, so the
    /// search stops once the best candidate is strictly closer than that.
    fn nearest(&self, entries: &[MapEntry], q: [f64; 2]) -> Option<(usize, f64)> {
        if entries.is_empty() {
            return None;
        }
        let (cx, cy) = cell_of(q);
        let gap_x = (self.lo.0 - cx).max(cx - self.hi.0).max(0);
        let gap_y = (self.lo.1 - cy).max(cy - self.hi.1).max(0);
        let covered = |r: i64| cx - r <= self.lo.0 && cx + r >= self.hi.0 && cy - r <= self.lo.1 && cy + r >= self.hi.1;
        let mut best: Option<(usize, f64)> = None;
        let consider = |cell: (i64, i64), best: &mut Option<(usize, f64)>| {
            if let Some(ids) = self.cells.get(&cell) {
                for &i in ids {
                    let d2 = dist2(entries[i].xy, q);
                    let better = match *best {
                        None => true,
                        Some((j, bd2)) => {
                            d2 < bd2 || (d2 == bd2 && entries[i].source_step_id < entries[j].source_step_id)
                        }
                    };
                    if better {
                        *best = Some((i, d2));
                    }
                }
            }
        };
        let mut r = gap_x.max(gap_y);
        loop {
            if r == 0 {
                consider((cx, cy), &mut best);
            } else {
                for dx in -r..=r {
                    consider((cx + dx, cy - r), &mut best);
                    consider((cx + dx, cy + r), &mut best);
                }
                for dy in (-r + 1)..r {
                    consider((cx - r, cy + dy), &mut best);
                    consider((cx + r, cy + dy), &mut best);
                }
            }
            if let Some((_, bd2)) = best {
                // Slack guards against cell assignment rounding at boundaries.
                let reach = r as f64 * GRID_CELL - 1e-9;
                if reach > 0.0 && bd2 < reach * reach {
                    break;
                }
            }
            if covered(r) {
                break;
            }
            r += 1;
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

#[derive(Clone, Debug)]
pub struct SparseHapticMap {
    embed_dim: usize,
    entries: Vec<MapEntry>,
    index: GridIndex,
}

impl PartialEq for SparseHapticMap {
    fn eq(&self, other: &Self) -> bool {
        self.embed_dim == other.embed_dim && self.entries == other.entries
    }
}

impl SparseHapticMap {
    pub fn new(embed_dim: usize, entries: Vec<MapEntry>) -> Result<Self> {
        if embed_dim == 0 {
            return Err(Error::Shape("map embed_dim must be positive".into()));
        }
        for e in &entries {
            if e.embedding.len() != embed_dim {
                return Err(Error::Shape(format!(
                    "entry for step {} has embedding length {}, map dim is {embed_dim}",
                    e.source_step_id,
                    e.embedding.len()
                )));
            }
            if !(e.xy[0].is_finite() && e.xy[1].is_finite() && e.elevation.is_finite()) {
                return Err(Error::Shape(format!(
                    "entry for step {} has non-finite position",
                    e.source_step_id
                )));
            }
        }
        let index = GridIndex::build(&entries);
        Ok(Self {
            embed_dim,
            entries,
            index,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry closest to `xy` in the plane and its distance `d_2D`. Ties go to
    /// the lowest `source_step_id`.
    pub fn nearest(&self, xy: [f64; 2]) -> Result<(&MapEntry, f64)> {
        self.index
            .nearest(&self.entries, xy)
            .map(|(i, d)| (&self.entries[i], d))
            .ok_or(Error::EmptyMap)
    }

    /// Linear scan with the same ordering as [`nearest`](Self::nearest).
    pub fn nearest_brute_force(&self, xy: [f64; 2]) -> Result<(&MapEntry, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d2 = dist2(e.xy, xy);
            let better = match best {
                None => true,
                Some((j, bd2)) => d2 < bd2 || (d2 == bd2 && e.source_step_id < self.entries[j].source_step_id),
            };
            if better {
                best = Some((i, d2));
            }
        }
        best.map(|(i, d2)| (&self.entries[i], d2.sqrt())).ok_or(Error::EmptyMap)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.entries.len() * (ENTRY_FIXED_BYTES + 4 * self.embed_dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.embed_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.source_step_id.to_le_bytes());
            for v in [e.xy[0], e.xy[1], e.elevation] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in &e.embedding {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let short = || Error::Format(format!("truncated map file ({} bytes)", buf.len()));
        if buf.len() < HEADER_BYTES {
            return Err(short());
        }
        if &buf[0..4] != MAGIC {
            return Err(Error::Format("not a haptic map file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported map version {version}")));
        }
        let embed_dim = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes"));
        let entry_bytes = ENTRY_FIXED_BYTES + 4 * embed_dim;
        let expected = (count as u128) * entry_bytes as u128 + HEADER_BYTES as u128;
        if (buf.len() as u128) < expected {
            return Err(short());
        }
        if (buf.len() as u128) > expected {
            return Err(Error::Format("trailing bytes after map entries".into()));
        }
        let f64_at = |o: usize| f64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
        let mut entries = Vec::with_capacity(count as usize);
        for k in 0..count as usize {
            let o = HEADER_BYTES + k * entry_bytes;
            let source_step_id = u64::from_le_bytes(buf[o..o + 8].try_into().expect("8 bytes"));
            let embedding = buf[o + ENTRY_FIXED_BYTES..o + entry_bytes]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            entries.push(MapEntry {
                xy: [f64_at(o + 8), f64_at(o + 16)],
                elevation: f64_at(o + 24),
                embedding,
                source_step_id,
            });
        }
        Self::new(embed_dim, entries)
    }
}

/// Embeds every step of a mapping walk and stores it at its ground-truth
/// foothold.
pub fn build_map(trial: &Trial, params: &NetworkParams) -> Result<SparseHapticMap> {
    let mut positions = Vec::with_capacity(trial.events.len());
    for ev in &trial.events {
        let f = ev.foothold_world_truth.ok_or_else(|| Error::InvalidStep {
            step_id: ev.step_id,
            msg: "map building needs foothold_world_truth".into(),
        })?;
        positions.push(f);
    }
    let signals: Vec<HapticSignal> = trial.events.iter().map(|e| e.signal.clone()).collect();
    let embeddings = params.embed(&signals)?;
    let entries = trial
        .events
        .iter()
        .zip(positions)
        .zip(embeddings)
        .map(|((ev, f), emb)| MapEntry {
            xy: [f.x, f.y],
            elevation: f.z,
            embedding: emb.iter().map(|&v| v as f32).collect(),
            source_step_id: ev.step_id,
        })
        .collect();
    SparseHapticMap::new(params.config.embed_dim, entries)
}

pub fn save_map(map: &SparseHapticMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<SparseHapticMap> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    SparseHapticMap::from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: u64, x: f64, y: f64, dim: usize) -> MapEntry {
        MapEntry {
            xy: [x, y],
            elevation: 0.01 * id as f64,
            embedding: (0..dim).map(|k| (id as f32) * 0.5 + k as f32).collect(),
            source_step_id: id,
        }
    }

    #[test]
    fn single_entry() {
        let m = SparseHapticMap::new(2, vec![entry(4, 1.0, 1.0, 2)]).unwrap();
        let (e, d) = m.nearest([4.0, 5.0]).unwrap();
        assert_eq!(e.source_step_id, 4);
        assert_eq!(d, 5.0);
        let (_, d0) = m.nearest([1.0, 1.0]).unwrap();
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn ties_prefer_lower_step_id() {
        let m = SparseHapticMap::new(
            1,
            vec![entry(9, 0.25, 0.5, 1), entry(2, 0.25, 0.5, 1), entry(5, 1.0, 0.5, 1)],
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.nearest([0.25, 0.5]).unwrap().0.source_step_id, 2);
        // equidistant from steps 9/2 and step 5
        assert_eq!(m.nearest([0.625, 0.5]).unwrap().0.source_step_id, 2);
    }

    #[test]
    fn far_queries_and_negative_coordinates() {
        let m = SparseHapticMap::new(1, vec![entry(0, -3.1, 2.0, 1), entry(1, 5.0, -7.5, 1)]).unwrap();
        assert_eq!(m.nearest([-100.0, 50.0]).unwrap().0.source_step_id, 0);
        assert_eq!(m.nearest([1e4, -1e4]).unwrap().0.source_step_id, 1);
    }

    #[test]
    fn empty_map_query_fails() {
        let m = SparseHapticMap::new(3, vec![]).unwrap();
        assert!(matches!(m.nearest([0.0, 0.0]), Err(Error::EmptyMap)));
    }

    #[test]
    fn bytes_round_trip_and_truncation() {
        let m = SparseHapticMap::new(2, (0..10).map(|i| entry(i, i as f64 * 0.1, 0.5, 2)).collect()).unwrap();
        let bytes = m.to_bytes();
        let back = SparseHapticMap::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.embed_dim(), 2);
        assert!(matches!(
            SparseHapticMap::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            SparseHapticMap::from_bytes(&bytes[..10]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn embedding_payload_scales_with_dim() {
        let n = 50;
        let size = |dim: usize| {
            let m = SparseHapticMap::new(dim, (0..n).map(|i| entry(i, i as f64, 0.0, dim)).collect()).unwrap();
            m.to_bytes().len() - HEADER_BYTES - n as usize * ENTRY_FIXED_BYTES
        };
        assert_eq!(size(256), 128 * size(2));
    }

    #[test]
    fn mismatched_embedding_rejected() {
        assert!(SparseHapticMap::new(3, vec![entry(0, 0.0, 0.0, 2)]).is_err());
    }
}
