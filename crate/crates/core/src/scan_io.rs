//! Session loading and descriptor/trajectory serialization.
//!
//! A session directory holds one 8-bit grayscale image per scan, named
//! `scan_<id>.png` or `scan_<id>.pgm` (row = azimuth, column = range bin),
//! and a `poses.csv` with header
//! `scan_id,timestamp,x,y,yaw[,odom_x,odom_y,odom_yaw]`.
//!
//! Descriptor files are little-endian:
//!
//! ```text
//! "RFRE" | version u16 | N_w u32 | N_h u32 | config_hash u64 | count u64
//! count × ( scan_id u64 | N_w × f32 | N_h × f32 )
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{ColorType, GrayImage, ImageReader};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::Pose2;

pub const DESCRIPTOR_MAGIC: [u8; 4] = *b"RFRE";
pub const DESCRIPTOR_VERSION: u16 = 1;
pub const DESCRIPTOR_HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 8;

/// Polar radar intensity image, rows are azimuths and columns range bins.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarScan {
    pub scan_id: u64,
    pub timestamp: f64,
    pub azimuths: usize,
    pub range_bins: usize,
    /// Meters per range bin.
    pub range_resolution: f64,
    /// Row-major intensities in `[0, 1]`.
    pub intensities: Vec<f32>,
}

impl RadarScan {
    pub fn new(
        scan_id: u64,
        timestamp: f64,
        azimuths: usize,
        range_bins: usize,
        range_resolution: f64,
        intensities: Vec<f32>,
    ) -> Result<Self> {
        if azimuths < 4 || range_bins < 4 {
            return Err(Error::Malformed(format!(
                "scan {scan_id}: shape {azimuths}x{range_bins} is below the 4x4 minimum"
            )));
        }
        if intensities.len() != azimuths * range_bins {
            return Err(Error::LengthMismatch(
                intensities.len(),
                azimuths * range_bins,
            ));
        }
        if !(range_resolution > 0.0 && range_resolution.is_finite()) {
            return Err(Error::Malformed(format!(
                "scan {scan_id}: range resolution must be positive"
            )));
        }
        if intensities.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Malformed(format!(
                "scan {scan_id}: intensities must lie in [0, 1]"
            )));
        }
        Ok(RadarScan {
            scan_id,
            timestamp,
            azimuths,
            range_bins,
            range_resolution,
            intensities,
        })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.intensities[i * self.range_bins..(i + 1) * self.range_bins]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.azimuths, self.range_bins)
    }

    pub fn to_gray_image(&self) -> GrayImage {
        let data = self
            .intensities
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        GrayImage::from_raw(self.range_bins as u32, self.azimuths as u32, data)
            .expect("buffer length matches shape")
    }
}

/// One row of `poses.csv`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseEntry {
    pub timestamp: f64,
    pub ground_truth: Pose2,
    pub odometry: Option<Pose2>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionPoses {
    pub entries: BTreeMap<u64, PoseEntry>,
}

impl SessionPoses {
    pub fn get(&self, scan_id: u64) -> Option<&PoseEntry> {
        self.entries.get(&scan_id)
    }

    pub fn ground_truth(&self, scan_id: u64) -> Option<Pose2> {
        self.entries.get(&scan_id).map(|e| e.ground_truth)
    }

    pub fn has_odometry(&self) -> bool {
        !self.entries.is_empty() && self.entries.values().all(|e| e.odometry.is_some())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseRow {
    scan_id: u64,
    timestamp: f64,
    x: f64,
    y: f64,
    yaw: f64,
    #[serde(default)]
    odom_x: Option<f64>,
    #[serde(default)]
    odom_y: Option<f64>,
    #[serde(default)]
    odom_yaw: Option<f64>,
}

pub fn read_poses(path: &Path) -> Result<SessionPoses> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    let headers = reader.headers().map_err(|e| with_path(e, path))?.clone();
    for required in ["scan_id", "timestamp", "x", "y", "yaw"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Malformed(format!(
                "{}: missing column '{required}'",
                path.display()
            )));
        }
    }
    let mut poses = SessionPoses::default();
    for row in reader.deserialize::<PoseRow>() {
        let row = row.map_err(|e| with_path(e, path))?;
        let odometry = match (row.odom_x, row.odom_y, row.odom_yaw) {
            (Some(x), Some(y), Some(yaw)) => Some(Pose2::new(x, y, yaw)),
            (None, None, None) => None,
            _ => {
                return Err(Error::Malformed(format!(
                    "{}: scan {} has partial odometry",
                    path.display(),
                    row.scan_id
                )))
            }
        };
        let ground_truth = Pose2::new(row.x, row.y, row.yaw);
        if !ground_truth.is_finite() || !row.timestamp.is_finite() {
            return Err(Error::Malformed(format!(
                "{}: scan {} has a non-finite pose",
                path.display(),
                row.scan_id
            )));
        }
        let entry = PoseEntry {
            timestamp: row.timestamp,
            ground_truth,
            odometry,
        };
        if poses.entries.insert(row.scan_id, entry).is_some() {
            return Err(Error::Malformed(format!(
                "{}: duplicate scan_id {}",
                path.display(),
                row.scan_id
            )));
        }
    }
    Ok(poses)
}

pub fn write_poses(path: &Path, poses: &SessionPoses) -> Result<()> {
    let mut out = String::from("scan_id,timestamp,x,y,yaw");
    let with_odom = poses.has_odometry();
    if with_odom {
        out.push_str(",odom_x,odom_y,odom_yaw");
    }
    out.push('\n');
    for (id, e) in &poses.entries {
        let g = e.ground_truth;
        out.push_str(&format!("{id},{},{},{},{}", e.timestamp, g.x, g.y, g.yaw));
        if let (true, Some(o)) = (with_odom, e.odometry) {
            out.push_str(&format!(",{},{},{}", o.x, o.y, o.yaw));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn with_path(e: csv::Error, path: &Path) -> Error {
    match Error::from(e) {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Malformed(m) => Error::Malformed(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// A loaded session: scans sorted by id with their poses.
#[derive(Clone, Debug)]
pub struct Session {
    pub root: PathBuf,
    pub scans: Vec<RadarScan>,
    pub poses: SessionPoses,
}

impl Session {
    pub fn shape(&self) -> (usize, usize) {
        self.scans[0].shape()
    }

    pub fn ground_truth(&self) -> Vec<Pose2> {
        self.scans
            .iter()
            .map(|s| self.poses.entries[&s.scan_id].ground_truth)
            .collect()
    }

    pub fn odometry(&self) -> Option<Vec<Pose2>> {
        self.scans
            .iter()
            .map(|s| self.poses.entries[&s.scan_id].odometry)
            .collect()
    }
}

fn parse_scan_name(name: &str) -> Option<u64> {
    let stem = name
        .strip_suffix(".png")
        .or_else(|| name.strip_suffix(".pgm"))?;
    stem.strip_prefix("scan_")?.parse().ok()
}

pub fn scan_file_name(scan_id: u64) -> String {
    format!("scan_{scan_id:06}.png")
}

fn read_scan_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if img.color() != ColorType::L8 {
        return Err(Error::NonGrayscale {
            path: path.to_path_buf(),
            found: format!("{:?}", img.color()),
        });
    }
    let gray = img.into_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 255.0)
        .collect();
    Ok((h, w, data))
}

/// Loads every `scan_<id>.{png,pgm}` in `dir` together with `poses.csv`.
pub fn load_session(dir: &Path, config: &PipelineConfig) -> Result<Session> {
    let mut files: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(id) = name.to_str().and_then(parse_scan_name) {
            files.push((id, entry.path()));
        }
    }
    if files.is_empty() {
        return Err(Error::EmptySession(dir.to_path_buf()));
    }
    files.sort();
    if let Some(w) = files.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::Malformed(format!("scan {} appears twice", w[0].0)));
    }

    let poses = read_poses(&dir.join("poses.csv"))?;
    for (id, _) in &files {
        if poses.get(*id).is_none() {
            return Err(Error::MissingPose(*id));
        }
    }

    let images: Vec<(usize, usize, Vec<f32>)> = files
        .par_iter()
        .map(|(_, path)| read_scan_image(path))
        .collect::<Result<_>>()?;

    let expected = (images[0].0, images[0].1);
    config.validate_for_shape(expected.0, expected.1)?;
    let resolution = config.session.range_resolution;
    let mut scans = Vec::with_capacity(files.len());
    let mut last_time = f64::NEG_INFINITY;
    for ((id, _), (h, w, data)) in files.iter().zip(images) {
        if (h, w) != expected {
            return Err(Error::DimensionMismatch {
                scan_id: *id,
                expected,
                found: (h, w),
            });
        }
        let timestamp = poses.entries[id].timestamp;
        if timestamp < last_time {
            return Err(Error::Malformed(format!(
                "scan {id}: timestamp {timestamp} goes backwards"
            )));
        }
        last_time = timestamp;
        scans.push(RadarScan::new(*id, timestamp, h, w, resolution, data)?);
    }
    Ok(Session {
        root: dir.to_path_buf(),
        scans,
        poses,
    })
}

/// Writes scans as PNG plus `poses.csv`, the layout `load_session` reads.
pub fn write_session(dir: &Path, scans: &[RadarScan], poses: &SessionPoses) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    scans.par_iter().try_for_each(|scan| {
        let path = dir.join(scan_file_name(scan.scan_id));
        scan.to_gray_image()
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })
    })?;
    write_poses(&dir.join("poses.csv"), poses)
}

/// R-ReFeree and A-ReFeree of one scan, tagged with the parameter fingerprint.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorRecord {
    pub scan_id: u64,
    pub r_referee: Vec<f32>,
    pub a_referee: Vec<f32>,
    pub config_hash: u64,
}

pub fn encode_descriptors(db: &[DescriptorRecord]) -> Result<Vec<u8>> {
    let (n_w, n_h, hash) = match db.first() {
        Some(r) => (r.r_referee.len(), r.a_referee.len(), r.config_hash),
        None => (0, 0, 0),
    };
    for r in db {
        if r.config_hash != hash {
            return Err(Error::ConfigHashMismatch {
                expected: hash,
                found: r.config_hash,
            });
        }
        if r.r_referee.len() != n_w {
            return Err(Error::LengthMismatch(n_w, r.r_referee.len()));
        }
        if r.a_referee.len() != n_h {
            return Err(Error::LengthMismatch(n_h, r.a_referee.len()));
        }
    }
    let record_len = 8 + 4 * (n_w + n_h);
    let mut buf = Vec::with_capacity(DESCRIPTOR_HEADER_LEN + record_len * db.len());
    buf.extend_from_slice(&DESCRIPTOR_MAGIC);
    buf.extend_from_slice(&DESCRIPTOR_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n_w as u32).to_le_bytes());
    buf.extend_from_slice(&(n_h as u32).to_le_bytes());
    buf.extend_from_slice(&hash.to_le_bytes());
    buf.extend_from_slice(&(db.len() as u64).to_le_bytes());
    for r in db {
        buf.extend_from_slice(&r.scan_id.to_le_bytes());
        for v in r.r_referee.iter().chain(&r.a_referee) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self.buf.get(self.pos..end).ok_or_else(|| {
            Error::CorruptFile(format!(
                "truncated at byte {} of {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        self.pos = end;
        Ok(bytes.try_into().expect("slice has length N"))
    }
}

pub fn decode_descriptors(buf: &[u8]) -> Result<Vec<DescriptorRecord>> {
    let mut cur = Cursor { buf, pos: 0 };
    let magic: [u8; 4] = cur.take()?;
    if magic != DESCRIPTOR_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(cur.take()?);
    if version != DESCRIPTOR_VERSION {
        return Err(Error::CorruptFile(format!("unsupported version {version}")));
    }
    let n_w = u32::from_le_bytes(cur.take()?) as usize;
    let n_h = u32::from_le_bytes(cur.take()?) as usize;
    let config_hash = u64::from_le_bytes(cur.take()?);
    let count = u64::from_le_bytes(cur.take()?);

    let record_len = 8 + 4 * (n_w + n_h) as u64;
    let expected = record_len
        .checked_mul(count)
        .and_then(|b| b.checked_add(DESCRIPTOR_HEADER_LEN as u64));
    if expected != Some(buf.len() as u64) {
        return Err(Error::CorruptFile(format!(
            "{count} records of {record_len} bytes do not fit a {}-byte file",
            buf.len()
        )));
    }

    let read_f32s = |cur: &mut Cursor, n: usize| -> Result<Vec<f32>> {
        (0..n)
            .map(|_| Ok(f32::from_le_bytes(cur.take()?)))
            .collect()
    };
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let scan_id = u64::from_le_bytes(cur.take()?);
        let r_referee = read_f32s(&mut cur, n_w)?;
        let a_referee = read_f32s(&mut cur, n_h)?;
        records.push(DescriptorRecord {
            scan_id,
            r_referee,
            a_referee,
            config_hash,
        });
    }
    Ok(records)
}

pub fn save_descriptors(db: &[DescriptorRecord], path: &Path) -> Result<()> {
    let buf = encode_descriptors(db)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_descriptors(path: &Path) -> Result<Vec<DescriptorRecord>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_descriptors(&buf)
}

/// Reads only the header fingerprint, also valid for empty files.
pub fn descriptor_file_hash(path: &Path) -> Result<u64> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < DESCRIPTOR_HEADER_LEN {
        return Err(Error::CorruptFile("truncated header".into()));
    }
    if buf[..4] != DESCRIPTOR_MAGIC {
        return Err(Error::BadMagic(buf[..4].try_into().unwrap()));
    }
    Ok(u64::from_le_bytes(buf[14..22].try_into().unwrap()))
}

/// Writes `scan_id,x,y,yaw` rows.
pub fn write_trajectory(path: &Path, ids: &[u64], poses: &[Pose2]) -> Result<()> {
    let mut out = String::from("scan_id,x,y,yaw\n");
    for (id, p) in ids.iter().zip(poses) {
        out.push_str(&format!("{id},{},{},{}\n", p.x, p.y, p.yaw));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Vec<(u64, Pose2)>> {
    #[derive(Deserialize)]
    struct Row {
        scan_id: u64,
        x: f64,
        y: f64,
        yaw: f64,
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    reader
        .deserialize::<Row>()
        .map(|r| {
            let r = r.map_err(|e| with_path(e, path))?;
            Ok((r.scan_id, Pose2::new(r.x, r.y, r.yaw)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: u64, r: Vec<f32>, a: Vec<f32>) -> DescriptorRecord {
        DescriptorRecord {
            scan_id: id,
            r_referee: r,
            a_referee: a,
            config_hash: 0xfeed,
        }
    }

    #[test]
    fn two_records_roundtrip() {
        let db = vec![
            record(0, vec![1.0, 2.0, 3.0], vec![4.0, 5.0]),
            record(7, vec![0.5, -0.0, f32::MAX], vec![1e-30, 9.0]),
        ];
        let back = decode_descriptors(&encode_descriptors(&db).unwrap()).unwrap();
        assert_eq!(back, db);
    }

    #[test]
    fn empty_db_roundtrip() {
        let buf = encode_descriptors(&[]).unwrap();
        assert_eq!(buf.len(), DESCRIPTOR_HEADER_LEN);
        assert_eq!(u64::from_le_bytes(buf[22..30].try_into().unwrap()), 0);
        assert!(decode_descriptors(&buf).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let db = vec![
            record(1, vec![1.0; 4], vec![2.0; 3]),
            record(2, vec![1.0; 4], vec![2.0; 3]),
        ];
        let buf = encode_descriptors(&db).unwrap();
        let cut = &buf[..buf.len() - 6];
        assert!(matches!(
            decode_descriptors(cut),
            Err(Error::CorruptFile(_))
        ));
        assert!(matches!(
            decode_descriptors(&buf[..10]),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn wrong_magic_rejected() {
        let mut buf = encode_descriptors(&[record(1, vec![1.0], vec![1.0])]).unwrap();
        buf[0] = b'X';
        assert!(matches!(decode_descriptors(&buf), Err(Error::BadMagic(_))));
    }

    #[test]
    fn mixed_hash_refused_on_save() {
        let mut b = record(2, vec![1.0], vec![1.0]);
        b.config_hash = 1;
        let db = vec![record(1, vec![1.0], vec![1.0]), b];
        assert!(matches!(
            encode_descriptors(&db),
            Err(Error::ConfigHashMismatch { .. })
        ));
    }

    #[test]
    fn scan_names() {
        assert_eq!(parse_scan_name("scan_12.png"), Some(12));
        assert_eq!(parse_scan_name("scan_000003.pgm"), Some(3));
        assert_eq!(parse_scan_name("scan_x.png"), None);
        assert_eq!(parse_scan_name("poses.csv"), None);
    }

    #[test]
    fn normalization_is_exact_division() {
        for v in 0u8..=255 {
            let n = v as f32 / 255.0;
            assert!((0.0..=1.0).contains(&n));
            assert_eq!((n * 255.0).round() as u8, v);
        }
    }

    proptest! {
        #[test]
        fn descriptor_roundtrip_is_identity(
            rows in prop::collection::vec(
                (any::<u64>(), prop::collection::vec(any::<f32>().prop_filter("nan", |v| !v.is_nan()), 5),
                 prop::collection::vec(0.0f32..1e6, 3)),
                0..20),
            hash in any::<u64>(),
        ) {
            let db: Vec<_> = rows.into_iter().map(|(id, r, a)| DescriptorRecord {
                scan_id: id, r_referee: r, a_referee: a, config_hash: hash,
            }).collect();
            let back = decode_descriptors(&encode_descriptors(&db).unwrap()).unwrap();
            if db.is_empty() {
                prop_assert!(back.is_empty());
            } else {
                prop_assert_eq!(back, db);
            }
        }
    }
}
