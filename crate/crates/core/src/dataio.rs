//! On-disk formats: scene directories (JSON metadata, Netpbm frames, text
//! point models), binary checkpoints and the per-object metrics table.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{
    CameraIntrinsics, ColorImage, DepthMap, Image, LabelMap, ObjectModel, PointCloud, Pose, RgbdFrame, Scene, Vec3,
};
use crate::network::ModelConfig;
use crate::numerics::{ParamSet, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DataIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: blob truncated at parameter {param:?} (needs bytes {start}..{end}, blob has {available})")]
    Truncated {
        path: PathBuf,
        param: String,
        start: usize,
        end: usize,
        available: usize,
    },
    #[error("checkpoint config does not match\n  expected: {expected}\n  found:    {found}")]
    ConfigMismatch { expected: String, found: String },
    #[error("{0}: directory is locked by another writer")]
    Locked(PathBuf),
    #[error("{0}: scene directory must be empty or absent")]
    NotEmpty(PathBuf),
}

pub type Result<T> = std::result::Result<T, DataIoError>;

/// Run record a scene directory may already hold when the scene is written.
pub const RUN_RECORD: &str = "run.json";

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataIoError + '_ {
    move |source| DataIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> DataIoError {
    DataIoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Writes via a sibling temporary file and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

// ------------------------------------------------------------------ netpbm

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], path: &Path) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format_err(
            path,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(format_err(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, "malformed header field"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(format_err(path, "missing whitespace after header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format_err(
            path,
            format!("invalid header {width}x{height} maxval {maxval}"),
        ));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], h: &Header, sample_bytes: usize, channels: usize, path: &Path) -> Result<&'a [u8]> {
    let need = h.width * h.height * channels * sample_bytes;
    let data = &bytes[h.data_start..];
    if data.len() != need {
        return Err(format_err(
            path,
            format!("expected {need} bytes of pixel data, found {}", data.len()),
        ));
    }
    Ok(data)
}

pub fn encode_ppm(img: &ColorImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for px in &img.data {
        out.extend_from_slice(px);
    }
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<ColorImage> {
    let h = parse_header(bytes, b"P6", path)?;
    if h.maxval != 255 {
        return Err(format_err(path, "color images must be 8-bit"));
    }
    let data = payload(bytes, &h, 1, 3, path)?;
    Ok(Image {
        width: h.width,
        height: h.height,
        data: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    })
}

pub fn encode_pgm8(img: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn decode_pgm8(bytes: &[u8], path: &Path) -> Result<LabelMap> {
    let h = parse_header(bytes, b"P5", path)?;
    if h.maxval > 255 {
        return Err(format_err(path, "label maps must be 8-bit"));
    }
    let data = payload(bytes, &h, 1, 1, path)?;
    Ok(Image {
        width: h.width,
        height: h.height,
        data: data.to_vec(),
    })
}

/// Largest storable depth, meters.
pub const MAX_DEPTH_M: f64 = 65.535;

/// Depth in integer millimeters, big-endian 16-bit.
pub fn encode_depth_pgm(depth: &DepthMap) -> std::result::Result<Vec<u8>, String> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    for &d in &depth.data {
        if !(0.0..=MAX_DEPTH_M).contains(&d) {
            return Err(format!("depth {d} m outside storable range"));
        }
        let mm = (d * 1000.0).round() as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    Ok(out)
}

pub fn decode_depth_pgm(bytes: &[u8], path: &Path) -> Result<DepthMap> {
    let h = parse_header(bytes, b"P5", path)?;
    if h.maxval <= 255 {
        return Err(format_err(path, "depth maps must be 16-bit"));
    }
    let data = payload(bytes, &h, 2, 1, path)?;
    Ok(Image {
        width: h.width,
        height: h.height,
        data: data
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
            .collect(),
    })
}

// ------------------------------------------------------------------- scene

#[derive(Serialize, Deserialize)]
struct MetaObject {
    id: u8,
    name: String,
    symmetric: bool,
    diameter_m: f64,
}

#[derive(Serialize, Deserialize)]
struct MetaFrame {
    id: u32,
    poses: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    intrinsics: CameraIntrinsics,
    objects: Vec<MetaObject>,
    frames: Vec<MetaFrame>,
}

fn frame_stem(id: u32) -> String {
    format!("{id:06}")
}

fn check_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Exclusive writer lock on a directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(DataIoError::Locked(dir.to_path_buf())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn encode_xyzrgb(model: &ObjectModel) -> String {
    let mut s = String::with_capacity(model.surface.len() * 48);
    for (p, c) in model.surface.points.iter().zip(&model.colors) {
        s.push_str(&format!("{} {} {} {} {} {}\n", p.x, p.y, p.z, c[0], c[1], c[2]));
    }
    s
}

fn decode_xyzrgb(text: &str, path: &Path) -> Result<(PointCloud, Vec<[u8; 3]>)> {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = || format_err(path, format!("line {}: expected \"x y z r g b\"", i + 1));
        if f.len() != 6 {
            return Err(bad());
        }
        let xyz: Vec<f64> = f[..3]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let rgb: Vec<u8> = f[3..]
            .iter()
            .map(|s| s.parse::<u8>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        if xyz.iter().any(|v| !v.is_finite()) {
            return Err(bad());
        }
        points.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
        colors.push([rgb[0], rgb[1], rgb[2]]);
    }
    if points.is_empty() {
        return Err(format_err(path, "model has no points"));
    }
    Ok((PointCloud::new(points), colors))
}

/// Writes `scene` under `root`, which must be empty or absent.
pub fn write_scene(scene: &Scene, root: &Path) -> Result<()> {
    if root.exists() {
        let entries = fs::read_dir(root).map_err(io_err(root))?;
        let mut others = entries.filter(|e| e.as_ref().map_or(true, |e| e.file_name() != RUN_RECORD));
        if others.next().is_some() {
            return Err(DataIoError::NotEmpty(root.to_path_buf()));
        }
    }
    let _lock = DirLock::acquire(root)?;
    let models_dir = root.join("models");
    let frames_dir = root.join("frames");
    fs::create_dir_all(&models_dir).map_err(io_err(&models_dir))?;
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;

    let mut objects = Vec::new();
    for m in &scene.models {
        if !check_name(&m.name) {
            return Err(format_err(
                root,
                format!("object name {:?} must be ASCII letters, digits, '_' or '-'", m.name),
            ));
        }
        let path = models_dir.join(format!("{}.xyzrgb", m.name));
        write_atomic(&path, encode_xyzrgb(m).as_bytes())?;
        objects.push(MetaObject {
            id: m.id,
            name: m.name.clone(),
            symmetric: m.symmetric,
            diameter_m: m.diameter,
        });
    }
    let mut frames = Vec::new();
    for f in &scene.frames {
        let stem = frames_dir.join(frame_stem(f.id));
        let with = |ext: &str| PathBuf::from(format!("{}.{ext}", stem.display()));
        write_atomic(&with("color.ppm"), &encode_ppm(&f.color))?;
        let depth_path = with("depth.pgm");
        let depth = encode_depth_pgm(&f.depth).map_err(|m| format_err(&depth_path, m))?;
        write_atomic(&depth_path, &depth)?;
        write_atomic(&with("mask.pgm"), &encode_pgm8(&f.mask))?;
        frames.push(MetaFrame {
            id: f.id,
            poses: f
                .gt_poses
                .iter()
                .map(|(id, p)| (id.to_string(), p.to_row_major().to_vec()))
                .collect(),
        });
    }
    let meta = Meta {
        intrinsics: scene.intrinsics,
        objects,
        frames,
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    write_atomic(&root.join("meta.json"), json.as_bytes())
}

pub fn load_scene(root: &Path) -> Result<Scene> {
    let meta_path = root.join("meta.json");
    let meta: Meta = serde_json::from_slice(&read(&meta_path)?).map_err(|e| format_err(&meta_path, e.to_string()))?;
    let k = meta.intrinsics;
    k.validate().map_err(|e| format_err(&meta_path, e.to_string()))?;

    let mut models = Vec::new();
    for o in &meta.objects {
        if !check_name(&o.name) || o.id == 0 {
            return Err(format_err(
                &meta_path,
                format!("invalid object entry {:?} (id {})", o.name, o.id),
            ));
        }
        let path = root.join("models").join(format!("{}.xyzrgb", o.name));
        let text = String::from_utf8(read(&path)?).map_err(|_| format_err(&path, "not UTF-8"))?;
        let (surface, colors) = decode_xyzrgb(&text, &path)?;
        models.push(ObjectModel::new(
            o.id,
            &o.name,
            o.symmetric,
            surface,
            colors,
            o.diameter_m,
        ));
    }
    let known: std::collections::BTreeSet<u8> = models.iter().map(|m| m.id).collect();

    let mut frames = Vec::new();
    for mf in &meta.frames {
        let stem = root.join("frames").join(frame_stem(mf.id));
        let with = |ext: &str| PathBuf::from(format!("{}.{ext}", stem.display()));
        let color_path = with("color.ppm");
        let depth_path = with("depth.pgm");
        let mask_path = with("mask.pgm");
        let color = decode_ppm(&read(&color_path)?, &color_path)?;
        let depth = decode_depth_pgm(&read(&depth_path)?, &depth_path)?;
        let mask = decode_pgm8(&read(&mask_path)?, &mask_path)?;
        for (p, w, h) in [
            (&color_path, color.width, color.height),
            (&depth_path, depth.width, depth.height),
            (&mask_path, mask.width, mask.height),
        ] {
            if (w, h) != (k.width, k.height) {
                return Err(format_err(
                    p,
                    format!("size {w}x{h} differs from intrinsics {}x{}", k.width, k.height),
                ));
            }
        }
        let mut gt_poses = BTreeMap::new();
        for (key, m) in &mf.poses {
            let id: u8 = key
                .parse()
                .map_err(|_| format_err(&meta_path, format!("frame {}: bad object id {key:?}", mf.id)))?;
            if !known.contains(&id) {
                return Err(format_err(&meta_path, format!("frame {}: unknown object {id}", mf.id)));
            }
            let pose = Pose::from_row_major(m)
                .map_err(|e| format_err(&meta_path, format!("frame {} object {id}: {e}", mf.id)))?;
            gt_poses.insert(id, pose);
        }
        if let Some(&bad) = mask.data.iter().find(|&&v| v != 0 && !gt_poses.contains_key(&v)) {
            return Err(format_err(&mask_path, format!("label {bad} has no pose in meta.json")));
        }
        frames.push(RgbdFrame {
            id: mf.id,
            color,
            depth,
            mask,
            intrinsics: k,
            gt_poses,
        });
    }
    Ok(Scene {
        intrinsics: k,
        models,
        frames,
    })
}

// -------------------------------------------------------------- checkpoint

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &str = "dttd-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    trained_objects: Vec<u8>,
    manifest: Vec<ManifestEntry>,
    blob_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Object ids seen in training.
    pub trained_objects: Vec<u8>,
}

/// Layout: a magic line, the JSON header length, the JSON header, then
/// every parameter as little-endian `f64` at its manifest offset.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut manifest = Vec::new();
    let mut blob = Vec::new();
    for (name, t) in ckpt.params.iter() {
        manifest.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: ckpt.config,
        trained_objects: ckpt.trained_objects.clone(),
        manifest,
        blob_bytes: blob.len(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = format!("{CHECKPOINT_MAGIC}\n{}\n", json.len()).into_bytes();
    out.extend_from_slice(json.as_bytes());
    out.extend_from_slice(&blob);
    out
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt))
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut lines = bytes.splitn(3, |&b| b == b'\n');
    if lines.next() != Some(CHECKPOINT_MAGIC.as_bytes()) {
        return Err(format_err(path, "not a checkpoint file"));
    }
    let len_line = lines.next().ok_or_else(|| format_err(path, "missing header length"))?;
    let len: usize = std::str::from_utf8(len_line)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "malformed header length"))?;
    let rest = lines.next().unwrap_or(&[]);
    if rest.len() < len {
        return Err(format_err(path, "truncated header"));
    }
    let raw: serde_json::Value = serde_json::from_slice(&rest[..len]).map_err(|e| format_err(path, e.to_string()))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != CHECKPOINT_VERSION {
        return Err(DataIoError::Version {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let header: CheckpointHeader = serde_json::from_value(raw).map_err(|e| format_err(path, e.to_string()))?;
    let blob = &rest[len..];

    let mut expected_offset = 0;
    let mut params = ParamSet::new();
    for e in &header.manifest {
        if e.offset != expected_offset {
            return Err(format_err(
                path,
                format!(
                    "parameter {:?} at offset {}, expected {expected_offset}",
                    e.name, e.offset
                ),
            ));
        }
        let n: usize = e.shape.iter().product();
        let end = e.offset + 8 * n;
        if end > blob.len() {
            return Err(DataIoError::Truncated {
                path: path.to_path_buf(),
                param: e.name.clone(),
                start: e.offset,
                end,
                available: blob.len(),
            });
        }
        let data = blob[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape.clone(), data).map_err(|err| format_err(path, format!("{}: {err}", e.name)))?;
        params.insert(e.name.clone(), t);
        expected_offset = end;
    }
    if expected_offset != blob.len() || blob.len() != header.blob_bytes {
        return Err(format_err(
            path,
            format!(
                "manifest covers {expected_offset} bytes, blob has {} (header says {})",
                blob.len(),
                header.blob_bytes
            ),
        ));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        trained_objects: header.trained_objects,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?, path)
}

/// Loads a checkpoint and insists on a specific model config.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != expected {
        return Err(DataIoError::ConfigMismatch {
            expected: serde_json::to_string(expected).expect("config serializes"),
            found: serde_json::to_string(&ckpt.config).expect("config serializes"),
        });
    }
    Ok(ckpt)
}

// ----------------------------------------------------------------- metrics

/// One object's evaluation summary. `None` marks a value that could not be
/// computed (no overlapping depth, or an object the model never saw).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub object_id: u8,
    pub object: String,
    pub depth_add_m: Option<f64>,
    pub add_auc: Option<f64>,
    pub adds_auc: Option<f64>,
    pub add_1cm: Option<f64>,
    pub adds_1cm: Option<f64>,
}

impl MetricsRow {
    fn values(&self) -> [Option<f64>; 5] {
        [
            self.depth_add_m,
            self.add_auc,
            self.adds_auc,
            self.add_1cm,
            self.adds_1cm,
        ]
    }
}

pub const METRICS_HEADER: &str = "object,depth_add_m,add_auc,adds_auc,add_1cm,adds_1cm";
pub const AVERAGE_ROW: &str = "Average";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// Header, one row per object in id order, then the column means over rows
/// with a value. No rows means no average row.
pub fn encode_metrics_csv(rows: &[MetricsRow]) -> String {
    let mut sorted: Vec<&MetricsRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.object_id);
    let mut out = format!("{METRICS_HEADER}\n");
    for r in &sorted {
        let cells: Vec<String> = r.values().iter().map(|v| cell(*v)).collect();
        out.push_str(&format!("{},{}\n", r.object, cells.join(",")));
    }
    if !sorted.is_empty() {
        let means: Vec<String> = (0..5)
            .map(|c| {
                let vals: Vec<f64> = sorted.iter().filter_map(|r| r.values()[c]).collect();
                cell((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
            })
            .collect();
        out.push_str(&format!("{AVERAGE_ROW},{}\n", means.join(",")));
    }
    out
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    write_atomic(path, encode_metrics_csv(rows).as_bytes())
}

/// Parses a metrics table back into `(object, values)` rows, the average
/// row included.
/// Object name and the five value cells of one metrics CSV row.
pub type ParsedMetricsRow = (String, [Option<f64>; 5]);

pub fn parse_metrics_csv(text: &str) -> std::result::Result<Vec<ParsedMetricsRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err("unexpected header".into());
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(format!("expected 6 columns in {line:?}"));
            }
            let mut vals = [None; 5];
            for (slot, s) in vals.iter_mut().zip(&f[1..]) {
                *slot = match *s {
                    "NA" => None,
                    s => Some(s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"))?),
                };
            }
            Ok((f[0].to_string(), vals))
        })
        .collect()
}
