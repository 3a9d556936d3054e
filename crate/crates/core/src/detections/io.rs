//! Detection file formats.
//!
//! The canonical text form is a JSON document:
//!
//! ```text
//! {
//!   "version": 1,
//!   "topology_hash": "<16 hex chars>",
//!   "camera_ids": [0, 1, ...],
//!   "frames": [
//!     { "frame": 0,
//!       "views": [
//!         { "camera": 0,
//!           "joints": [ [[u, v, conf], ...], ... ],      // one list per joint
//!           "pafs":   [ [[s00, s01], [s10, s11]], ... ]  // one matrix per limb
//!         } ] } ]
//! }
//! ```
//!
//! A limb matrix may instead be given sparsely as `{"sparse": [[m, n, s], ...]}`;
//! missing entries are zero. The binary form (magic `A4DB`) stores the same
//! content little-endian and is selected on load by its magic bytes.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{DetectionFrame, JointCandidate, PafMatrix, SkeletonTopology, ViewDetections};
use crate::error::{Error, Result};

pub const DETECTIONS_VERSION: u32 = 1;
const BINARY_MAGIC: &[u8; 4] = b"A4DB";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionHeader {
    pub topology_hash: String,
    pub camera_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Doc {
    version: u32,
    topology_hash: String,
    camera_ids: Vec<usize>,
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame: usize,
    views: Vec<ViewRecord>,
}

#[derive(Serialize, Deserialize)]
struct ViewRecord {
    camera: usize,
    joints: Vec<Vec<[f64; 3]>>,
    pafs: Vec<PafRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PafRecord {
    Dense(Vec<Vec<f64>>),
    Sparse { sparse: Vec<(usize, usize, f64)> },
}

fn header_for(topology: &SkeletonTopology, frames: &[DetectionFrame]) -> DetectionHeader {
    let mut ids: Vec<usize> = frames.iter().flat_map(|f| f.views.iter().map(|v| v.camera)).collect();
    ids.sort_unstable();
    ids.dedup();
    DetectionHeader {
        topology_hash: topology.hash(),
        camera_ids: ids,
    }
}

pub fn save_frames(path: &Path, topology: &SkeletonTopology, frames: &[DetectionFrame]) -> Result<()> {
    std::fs::write(path, to_text(topology, frames))?;
    Ok(())
}

pub(crate) fn to_text(topology: &SkeletonTopology, frames: &[DetectionFrame]) -> String {
    let header = header_for(topology, frames);
    let doc = Doc {
        version: DETECTIONS_VERSION,
        topology_hash: header.topology_hash,
        camera_ids: header.camera_ids,
        frames: frames
            .iter()
            .map(|f| FrameRecord {
                frame: f.index,
                views: f
                    .views
                    .iter()
                    .map(|v| ViewRecord {
                        camera: v.camera,
                        joints: v
                            .joints
                            .iter()
                            .map(|cs| cs.iter().map(|c| [c.pixel.u, c.pixel.v, c.confidence]).collect())
                            .collect(),
                        pafs: v
                            .pafs
                            .iter()
                            .map(|p| {
                                PafRecord::Dense(
                                    (0..p.rows()).map(|m| (0..p.cols()).map(|n| p.get(m, n)).collect()).collect(),
                                )
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("detections serialize")
}

fn from_text(text: &str, topology: &SkeletonTopology) -> Result<(DetectionHeader, Vec<DetectionFrame>)> {
    let doc: Doc = serde_json::from_str(text)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    if doc.version != DETECTIONS_VERSION {
        return Err(Error::parse("header", format!("unsupported version {}", doc.version)));
    }
    let header = DetectionHeader {
        topology_hash: doc.topology_hash,
        camera_ids: doc.camera_ids,
    };
    let mut frames = Vec::with_capacity(doc.frames.len());
    for fr in doc.frames {
        let mut views = Vec::with_capacity(fr.views.len());
        for vr in fr.views {
            let joints: Vec<Vec<JointCandidate>> = vr
                .joints
                .iter()
                .map(|cs| cs.iter().map(|c| JointCandidate::new(c[0], c[1], c[2])).collect())
                .collect();
            if joints.len() != topology.joint_count() {
                return Err(Error::parse(
                    format!("frame {} view {}", fr.frame, vr.camera),
                    format!("{} joint lists, topology has {}", joints.len(), topology.joint_count()),
                ));
            }
            if vr.pafs.len() != topology.limb_count() {
                return Err(Error::parse(
                    format!("frame {} view {}", fr.frame, vr.camera),
                    format!("{} paf matrices, topology has {} limbs", vr.pafs.len(), topology.limb_count()),
                ));
            }
            let mut pafs = Vec::with_capacity(vr.pafs.len());
            for (l, rec) in vr.pafs.into_iter().enumerate() {
                let (a, b) = topology.limb(l);
                let (rows, cols) = (joints[a].len(), joints[b].len());
                let loc = || format!("frame {} view {} limb {l}", fr.frame, vr.camera);
                let mut paf = PafMatrix::zeros(rows, cols);
                match rec {
                    PafRecord::Dense(data) => {
                        if data.len() != rows || data.iter().any(|r| r.len() != cols) {
                            return Err(Error::parse(loc(), format!("dense matrix is not {rows}x{cols}")));
                        }
                        for (m, row) in data.iter().enumerate() {
                            for (n, &s) in row.iter().enumerate() {
                                paf.set(m, n, s);
                            }
                        }
                    }
                    PafRecord::Sparse { sparse } => {
                        for (m, n, s) in sparse {
                            if m >= rows || n >= cols {
                                return Err(Error::parse(loc(), format!("sparse entry ({m},{n}) out of range")));
                            }
                            paf.set(m, n, s);
                        }
                    }
                }
                pafs.push(paf);
            }
            views.push(ViewDetections {
                camera: vr.camera,
                joints,
                pafs,
            });
        }
        frames.push(DetectionFrame { index: fr.frame, views });
    }
    Ok((header, frames))
}

pub fn save_frames_binary(path: &Path, topology: &SkeletonTopology, frames: &[DetectionFrame]) -> Result<()> {
    std::fs::write(path, to_binary(topology, frames)?)?;
    Ok(())
}

pub(crate) fn to_binary(topology: &SkeletonTopology, frames: &[DetectionFrame]) -> Result<Vec<u8>> {
    let header = header_for(topology, frames);
    let mut w = Vec::new();
    w.write_all(BINARY_MAGIC)?;
    w.write_u32::<LittleEndian>(DETECTIONS_VERSION)?;
    w.write_u32::<LittleEndian>(header.topology_hash.len() as u32)?;
    w.write_all(header.topology_hash.as_bytes())?;
    w.write_u32::<LittleEndian>(header.camera_ids.len() as u32)?;
    for &id in &header.camera_ids {
        w.write_u32::<LittleEndian>(id as u32)?;
    }
    w.write_u32::<LittleEndian>(frames.len() as u32)?;
    for f in frames {
        w.write_u64::<LittleEndian>(f.index as u64)?;
        w.write_u32::<LittleEndian>(f.views.len() as u32)?;
        for v in &f.views {
            w.write_u32::<LittleEndian>(v.camera as u32)?;
            for cands in &v.joints {
                w.write_u32::<LittleEndian>(cands.len() as u32)?;
                for c in cands {
                    w.write_f64::<LittleEndian>(c.pixel.u)?;
                    w.write_f64::<LittleEndian>(c.pixel.v)?;
                    w.write_f64::<LittleEndian>(c.confidence)?;
                }
            }
            for p in &v.pafs {
                for &s in p.scores() {
                    w.write_f64::<LittleEndian>(s)?;
                }
            }
        }
    }
    Ok(w)
}

fn from_binary(bytes: &[u8], topology: &SkeletonTopology) -> Result<(DetectionHeader, Vec<DetectionFrame>)> {
    let mut r = Cursor::new(bytes);
    fn eof(what: &str) -> impl Fn(std::io::Error) -> Error + '_ {
        move |e| Error::parse(what.to_string(), e.to_string())
    }
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof("magic"))?;
    let version = r.read_u32::<LittleEndian>().map_err(eof("header"))?;
    if version != DETECTIONS_VERSION {
        return Err(Error::parse("header", format!("unsupported version {version}")));
    }
    let hlen = r.read_u32::<LittleEndian>().map_err(eof("header"))? as usize;
    let mut hash = vec![0u8; hlen];
    r.read_exact(&mut hash).map_err(eof("header"))?;
    let topology_hash = String::from_utf8(hash).map_err(|e| Error::parse("header", e.to_string()))?;
    let ncam = r.read_u32::<LittleEndian>().map_err(eof("header"))? as usize;
    let camera_ids = (0..ncam)
        .map(|_| r.read_u32::<LittleEndian>().map(|x| x as usize))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(eof("header"))?;
    let nframes = r.read_u32::<LittleEndian>().map_err(eof("header"))? as usize;
    let mut frames = Vec::with_capacity(nframes.min(1 << 16));
    for fi in 0..nframes {
        let loc = format!("frame #{fi}");
        let index = r.read_u64::<LittleEndian>().map_err(eof(&loc))? as usize;
        let nviews = r.read_u32::<LittleEndian>().map_err(eof(&loc))? as usize;
        let mut views = Vec::with_capacity(nviews.min(1 << 10));
        for _ in 0..nviews {
            let camera = r.read_u32::<LittleEndian>().map_err(eof(&loc))? as usize;
            let mut joints = Vec::with_capacity(topology.joint_count());
            for _ in 0..topology.joint_count() {
                let n = r.read_u32::<LittleEndian>().map_err(eof(&loc))? as usize;
                let mut cands = Vec::with_capacity(n.min(1 << 12));
                for _ in 0..n {
                    let u = r.read_f64::<LittleEndian>().map_err(eof(&loc))?;
                    let v = r.read_f64::<LittleEndian>().map_err(eof(&loc))?;
                    let c = r.read_f64::<LittleEndian>().map_err(eof(&loc))?;
                    cands.push(JointCandidate::new(u, v, c));
                }
                joints.push(cands);
            }
            let mut pafs = Vec::with_capacity(topology.limb_count());
            for &(a, b) in topology.limbs() {
                let (rows, cols) = (joints[a].len(), joints[b].len());
                let scores = (0..rows * cols)
                    .map(|_| r.read_f64::<LittleEndian>())
                    .collect::<std::io::Result<Vec<_>>>()
                    .map_err(eof(&loc))?;
                pafs.push(PafMatrix::from_rows(rows, cols, scores)?);
            }
            views.push(ViewDetections { camera, joints, pafs });
        }
        frames.push(DetectionFrame { index, views });
    }
    Ok((DetectionHeader { topology_hash, camera_ids }, frames))
}

/// Parses a detection document (text or binary) and validates it against
/// `topology`. Frames come back in ascending frame order.
pub fn parse_detections(bytes: &[u8], topology: &SkeletonTopology) -> Result<(DetectionHeader, Vec<DetectionFrame>)> {
    let (header, mut frames) = if bytes.starts_with(BINARY_MAGIC) {
        from_binary(bytes, topology)?
    } else {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::parse("file", e.to_string()))?;
        from_text(text, topology)?
    };
    if header.topology_hash != topology.hash() {
        return Err(Error::parse(
            "header",
            format!("topology hash {} does not match {}", header.topology_hash, topology.hash()),
        ));
    }
    frames.sort_by_key(|f| f.index);
    for w in frames.windows(2) {
        if w[0].index == w[1].index {
            return Err(Error::parse(format!("frame {}", w[0].index), "duplicate frame index"));
        }
    }
    for f in &frames {
        for v in &f.views {
            if !header.camera_ids.contains(&v.camera) {
                return Err(Error::parse(
                    format!("frame {} view {}", f.index, v.camera),
                    "camera id missing from header",
                ));
            }
        }
        f.validate(topology)?;
    }
    Ok((header, frames))
}

pub fn load_frames(path: &Path, topology: &SkeletonTopology) -> Result<Vec<DetectionFrame>> {
    let bytes = std::fs::read(path)?;
    parse_detections(&bytes, topology).map(|(_, f)| f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_frame() -> (SkeletonTopology, Vec<DetectionFrame>) {
        let topo = SkeletonTopology::chain(3).unwrap();
        let mut view = ViewDetections::empty(4, &topo);
        view.joints[0].push(JointCandidate::new(10.5, 20.25, 0.9));
        view.joints[1].push(JointCandidate::new(11.0, 30.0, 0.5));
        view.joints[2].push(JointCandidate::new(12.0, 40.0, 1.0));
        view.pafs[0] = PafMatrix::from_rows(1, 1, vec![0.75]).unwrap();
        view.pafs[1] = PafMatrix::from_rows(1, 1, vec![0.6]).unwrap();
        (topo, vec![DetectionFrame { index: 3, views: vec![view] }])
    }

    #[test]
    fn empty_file() {
        let topo = SkeletonTopology::chain(3).unwrap();
        let text = to_text(&topo, &[]);
        let (_, frames) = parse_detections(text.as_bytes(), &topo).unwrap();
        assert!(frames.is_empty());
    }

    #[test]
    fn verbatim_ingestion() {
        let (topo, frames) = one_frame();
        let (header, back) = parse_detections(to_text(&topo, &frames).as_bytes(), &topo).unwrap();
        assert_eq!(header.camera_ids, vec![4]);
        assert_eq!(back, frames);
        let (_, back) = parse_detections(&to_binary(&topo, &frames).unwrap(), &topo).unwrap();
        assert_eq!(back, frames);
    }

    #[test]
    fn sparse_pafs_fill_zero() {
        let topo = SkeletonTopology::chain(2).unwrap();
        let text = format!(
            r#"{{"version":1,"topology_hash":"{}","camera_ids":[0],"frames":[{{"frame":0,"views":[{{"camera":0,
            "joints":[[[1,2,0.5],[3,4,0.5]],[[5,6,0.5]]],"pafs":[{{"sparse":[[1,0,0.8]]}}]}}]}}]}}"#,
            topo.hash()
        );
        let (_, frames) = parse_detections(text.as_bytes(), &topo).unwrap();
        let paf = &frames[0].views[0].pafs[0];
        assert_eq!((paf.rows(), paf.cols()), (2, 1));
        assert_eq!(paf.get(0, 0), 0.0);
        assert_eq!(paf.get(1, 0), 0.8);
    }

    #[test]
    fn errors_are_located() {
        let (topo, mut frames) = one_frame();
        frames[0].views[0].joints[2][0].confidence = 2.0;
        let err = parse_detections(to_text(&topo, &frames).as_bytes(), &topo).unwrap_err();
        assert!(err.to_string().contains("frame 3 view 4 joint 2"), "{err}");

        let other = SkeletonTopology::chain(3).unwrap();
        let bad = to_text(&topo, &frames[..0]).replace(&other.hash(), "0000000000000000");
        assert!(parse_detections(bad.as_bytes(), &topo).is_err());
        assert!(matches!(parse_detections(b"{not json", &topo), Err(Error::Parse { .. })));
    }

    #[test]
    fn frames_sorted_on_load() {
        let (topo, mut frames) = one_frame();
        let mut second = frames[0].clone();
        second.index = 1;
        frames.push(second);
        let (_, back) = parse_detections(to_text(&topo, &frames).as_bytes(), &topo).unwrap();
        assert_eq!(back.iter().map(|f| f.index).collect::<Vec<_>>(), vec![1, 3]);
    }
}
