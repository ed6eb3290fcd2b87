//! File formats, pipeline configuration and synthetic test grooms.
//!
//! Binary formats are little-endian with a 4-byte magic and a `u32` version:
//!
//! - `GRM1`: strand count, points per strand, strand-major f32 xyz, then optional
//!   tagged chunks `(tag, u32 length, body)`. `COL0` holds per-segment f32 rgb;
//!   other chunks are skipped.
//! - `GAN1`: frame count, strand count, points per strand, frame-major f32 xyz.
//!   The frame interval is not stored.
//! - `SKN1`: dense strand count, k, f32 epsilon, then k `(u32 guide, f32 weight)`
//!   pairs per dense strand.
//!
//! Values are narrowed to f32 on write, so any file read back and re-written is
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::appearance::{FitLogEntry, FitSettings, StrandColors};
use crate::dynamics::{Capsule, ColliderSet, HairParams, PoseKey, PoseTrack, SimConfig, Sphere};
use crate::metrics::MetricsReport;
use crate::skinning::{GuideAnimation, SkinningMap};
use crate::splat::{Camera, Image};
use crate::strand::{resample_strand, Groom};
use crate::{Error, Result, Vec3};

pub const GROOM_MAGIC: &[u8; 4] = b"GRM1";
pub const ANIM_MAGIC: &[u8; 4] = b"GAN1";
pub const SKIN_MAGIC: &[u8; 4] = b"SKN1";
pub const COLOR_TAG: &[u8; 4] = b"COL0";
pub const FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// byte-level helpers

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self, what: &str) -> Result<f64> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(at as u64, format!("non-finite {what}")));
        }
        Ok(v as f64)
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                0,
                format!(
                    "unknown magic `{}`, expected `{}`",
                    String::from_utf8_lossy(got).escape_debug(),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        let version = self.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                4,
                format!(
                    "{} version {version} is not supported, expected {FORMAT_VERSION}",
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    /// Checks that `count` records of `size` bytes are present before allocating.
    fn expect_records(&self, count: u64, size: u64, what: &str) -> Result<usize> {
        let need = count.checked_mul(size).filter(|&n| n <= self.remaining() as u64);
        match need {
            Some(_) => Ok(count as usize),
            None => Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated {what}: header declares {count} records of {size} bytes, {} bytes left",
                    self.remaining()
                ),
            )),
        }
    }

    fn points(&mut self, count: usize, what: &str) -> Result<Vec<Vec3>> {
        (0..count)
            .map(|_| Ok(Vec3::new(self.f32(what)?, self.f32(what)?, self.f32(what)?)))
            .collect()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_points(out: &mut Vec<u8>, points: &[Vec3]) {
    for p in points {
        for c in p.iter() {
            put_f32(out, *c);
        }
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} exceeds the u32 range")))
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        Error::InvalidInput(m) => Error::InvalidInput(format!("{}: {m}", path.display())),
        other => other,
    }
}

// ---------------------------------------------------------------------------
// GRM1

#[derive(Debug, Clone, PartialEq)]
pub struct GroomFile {
    pub groom: Groom,
    pub colors: Option<StrandColors>,
}

pub fn encode_groom(groom: &Groom, colors: Option<&StrandColors>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + groom.points().len() * 12);
    out.extend_from_slice(GROOM_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, to_u32(groom.strand_count(), "strand count")?);
    put_u32(&mut out, to_u32(groom.points_per_strand(), "points per strand")?);
    put_points(&mut out, groom.points());
    if let Some(c) = colors {
        if !c.matches(groom) {
            return Err(Error::invalid("colors do not match the groom shape"));
        }
        out.extend_from_slice(COLOR_TAG);
        put_u32(&mut out, to_u32(c.values().len() * 12, "color chunk length")?);
        put_points(&mut out, c.values());
    }
    Ok(out)
}

pub fn decode_groom(bytes: &[u8]) -> Result<GroomFile> {
    let mut r = Reader::new(bytes);
    r.header(GROOM_MAGIC)?;
    let strands = r.u32("strand count")? as u64;
    let pps = r.u32("points per strand")? as u64;
    if pps < 2 {
        return Err(Error::format(12, format!("points per strand must be >= 2, got {pps}")));
    }
    let count = r.expect_records(strands * pps, 12, "point data")?;
    let groom = Groom::new(r.points(count, "point coordinate")?, pps as usize)?;

    let mut colors = None;
    while r.remaining() > 0 {
        let tag_at = r.pos;
        let tag: [u8; 4] = r.take(4, "chunk tag")?.try_into().expect("4 bytes");
        let len = r.u32("chunk length")? as usize;
        if &tag == COLOR_TAG {
            let expected = groom.strand_count() * groom.segments_per_strand() * 12;
            if len != expected {
                return Err(Error::format(
                    tag_at as u64 + 4,
                    format!("COL0 chunk length {len}, expected {expected}"),
                ));
            }
            if colors.is_some() {
                return Err(Error::format(tag_at as u64, "duplicate COL0 chunk"));
            }
            r.expect_records(len as u64, 1, "COL0 chunk")?;
            let values = r.points(len / 12, "color")?;
            colors = Some(
                StrandColors::new(values, groom.segments_per_strand())
                    .map_err(|e| Error::format(tag_at as u64, e.to_string()))?,
            );
        } else {
            r.take(len, "chunk body")?;
        }
    }
    Ok(GroomFile { groom, colors })
}

pub fn save_groom(path: &Path, groom: &Groom, colors: Option<&StrandColors>) -> Result<()> {
    write_atomic(path, &encode_groom(groom, colors)?)
}

pub fn load_groom(path: &Path) -> Result<GroomFile> {
    decode_groom(&read(path)?).map_err(|e| in_file(path, e))
}

// ---------------------------------------------------------------------------
// GAN1

pub fn encode_animation(anim: &GuideAnimation) -> Result<Vec<u8>> {
    let rest = anim.rest();
    let mut out = Vec::with_capacity(20 + anim.frame_count() * rest.points().len() * 12);
    out.extend_from_slice(ANIM_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, to_u32(anim.frame_count(), "frame count")?);
    put_u32(&mut out, to_u32(rest.strand_count(), "strand count")?);
    put_u32(&mut out, to_u32(rest.points_per_strand(), "points per strand")?);
    for f in &anim.frames {
        put_points(&mut out, f.points());
    }
    Ok(out)
}

pub fn decode_animation(bytes: &[u8], frame_dt: f64) -> Result<GuideAnimation> {
    let mut r = Reader::new(bytes);
    r.header(ANIM_MAGIC)?;
    let frames = r.u32("frame count")? as u64;
    let strands = r.u32("strand count")? as u64;
    let pps = r.u32("points per strand")? as u64;
    if frames == 0 {
        return Err(Error::format(8, "animation has no frames"));
    }
    if pps < 2 {
        return Err(Error::format(16, format!("points per strand must be >= 2, got {pps}")));
    }
    let per_frame = strands * pps;
    r.expect_records(frames * per_frame, 12, "frame data")?;
    let mut out = Vec::with_capacity(frames as usize);
    for _ in 0..frames {
        out.push(Groom::new(r.points(per_frame as usize, "point coordinate")?, pps as usize)?);
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.pos as u64, format!("{} trailing bytes", r.remaining())));
    }
    GuideAnimation::new(out, frame_dt)
}

pub fn save_animation(path: &Path, anim: &GuideAnimation) -> Result<()> {
    write_atomic(path, &encode_animation(anim)?)
}

pub fn load_animation(path: &Path, frame_dt: f64) -> Result<GuideAnimation> {
    decode_animation(&read(path)?, frame_dt).map_err(|e| in_file(path, e))
}

// ---------------------------------------------------------------------------
// SKN1

pub fn encode_skinning(map: &SkinningMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + map.indices.len() * 8);
    out.extend_from_slice(SKIN_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, to_u32(map.dense_count(), "dense count")?);
    put_u32(&mut out, to_u32(map.k, "k")?);
    put_f32(&mut out, map.epsilon);
    for (i, w) in map.indices.iter().zip(&map.weights) {
        put_u32(&mut out, *i);
        put_f32(&mut out, *w);
    }
    Ok(out)
}

/// `dense_points` restores the arc parameters, which depend only on the dense point count.
pub fn decode_skinning(bytes: &[u8], dense_points: usize) -> Result<SkinningMap> {
    if dense_points < 2 {
        return Err(Error::invalid("dense strands need at least 2 points"));
    }
    let mut r = Reader::new(bytes);
    r.header(SKIN_MAGIC)?;
    let dense = r.u32("dense count")? as u64;
    let k = r.u32("k")? as u64;
    let epsilon = r.f32("epsilon")?;
    if k == 0 {
        return Err(Error::format(12, "k must be >= 1"));
    }
    let count = r.expect_records(dense * k, 8, "influence data")?;
    let mut indices = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for _ in 0..count {
        indices.push(r.u32("guide index")?);
        weights.push(r.f32("weight")?);
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.pos as u64, format!("{} trailing bytes", r.remaining())));
    }
    Ok(SkinningMap {
        k: k as usize,
        epsilon,
        indices,
        weights,
        arc_params: (0..dense_points)
            .map(|j| j as f64 / (dense_points - 1) as f64)
            .collect(),
    })
}

pub fn save_skinning(path: &Path, map: &SkinningMap) -> Result<()> {
    write_atomic(path, &encode_skinning(map)?)
}

pub fn load_skinning(path: &Path, dense_points: usize) -> Result<SkinningMap> {
    decode_skinning(&read(path)?, dense_points).map_err(|e| in_file(path, e))
}

// ---------------------------------------------------------------------------
// text formats

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn numbers(line: &str, lineno: usize, what: &str) -> Result<Vec<f64>> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                Error::invalid(format!("{what} line {lineno}: `{t}` is not a finite number"))
            })
        })
        .collect()
}

/// Pose track CSV: `t,qw,qx,qy,qz,tx,ty,tz` per line; an optional header line starting with `t,` is skipped.
pub fn parse_track(text: &str) -> Result<PoseTrack> {
    let mut keys = Vec::new();
    for (n, line) in data_lines(text) {
        if keys.is_empty() && line.starts_with('t') {
            continue;
        }
        let v = numbers(line, n, "pose track")?;
        if v.len() != 8 {
            return Err(Error::invalid(format!(
                "pose track line {n}: expected 8 values, got {}",
                v.len()
            )));
        }
        keys.push(
            PoseTrack::key_from_raw(v[0], [v[1], v[2], v[3], v[4]], [v[5], v[6], v[7]])
                .map_err(|e| Error::invalid(format!("pose track line {n}: {e}")))?,
        );
    }
    PoseTrack::new(keys)
}

pub fn format_track(track: &PoseTrack) -> String {
    let mut out = String::from("t,qw,qx,qy,qz,tx,ty,tz\n");
    for PoseKey { time, pose } in track.keys() {
        let q = pose.rotation.quaternion();
        let t = pose.translation;
        let _ = writeln!(out, "{time},{},{},{},{},{},{},{}", q.w, q.i, q.j, q.k, t.x, t.y, t.z);
    }
    out
}

pub fn load_track(path: &Path) -> Result<PoseTrack> {
    parse_track(&read_text(path)?).map_err(|e| in_file(path, e))
}

/// One camera per line: `f cx cy w h r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz`.
pub fn parse_cameras(text: &str) -> Result<Vec<Camera>> {
    let mut cams = Vec::new();
    for (n, line) in data_lines(text) {
        let v = numbers(line, n, "cameras")?;
        if v.len() != 17 {
            return Err(Error::invalid(format!("cameras line {n}: expected 17 values, got {}", v.len())));
        }
        let dim = |x: f64| {
            if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(Error::invalid(format!("cameras line {n}: image size {x} is not a positive integer")))
            }
        };
        let rotation = Matrix3::from_row_slice(&v[5..14]);
        cams.push(
            Camera::new(v[0], v[1], v[2], dim(v[3])?, dim(v[4])?, rotation, Vec3::new(v[14], v[15], v[16]))
                .map_err(|e| Error::invalid(format!("cameras line {n}: {e}")))?,
        );
    }
    if cams.is_empty() {
        return Err(Error::invalid("cameras file lists no cameras"));
    }
    Ok(cams)
}

pub fn format_cameras(cameras: &[Camera]) -> String {
    let mut out = String::new();
    for c in cameras {
        let _ = write!(out, "{} {} {} {} {}", c.focal, c.cx, c.cy, c.width, c.height);
        for r in 0..3 {
            for k in 0..3 {
                let _ = write!(out, " {}", c.rotation[(r, k)]);
            }
        }
        let t = c.translation;
        let _ = writeln!(out, " {} {} {}", t.x, t.y, t.z);
    }
    out
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    parse_cameras(&read_text(path)?).map_err(|e| in_file(path, e))
}

/// Colliders: `sphere cx cy cz r` or `capsule ax ay az bx by bz r`, one per line.
pub fn parse_colliders(text: &str) -> Result<ColliderSet> {
    let (mut spheres, mut capsules) = (Vec::new(), Vec::new());
    for (n, line) in data_lines(text) {
        let (kind, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let v = numbers(rest, n, "colliders")?;
        match (kind, v.len()) {
            ("sphere", 4) => spheres.push(Sphere {
                center: Vec3::new(v[0], v[1], v[2]),
                radius: v[3],
            }),
            ("capsule", 7) => capsules.push(Capsule {
                start: Vec3::new(v[0], v[1], v[2]),
                end: Vec3::new(v[3], v[4], v[5]),
                radius: v[6],
            }),
            _ => {
                return Err(Error::invalid(format!(
                    "colliders line {n}: expected `sphere cx cy cz r` or `capsule ax ay az bx by bz r`"
                )))
            }
        }
    }
    ColliderSet::new(spheres, capsules)
}

pub fn format_colliders(set: &ColliderSet) -> String {
    let mut out = String::new();
    for s in &set.spheres {
        let c = s.center;
        let _ = writeln!(out, "sphere {} {} {} {}", c.x, c.y, c.z, s.radius);
    }
    for c in &set.capsules {
        let (a, b) = (c.start, c.end);
        let _ = writeln!(out, "capsule {} {} {} {} {} {} {}", a.x, a.y, a.z, b.x, b.y, b.z, c.radius);
    }
    out
}

pub fn load_colliders(path: &Path) -> Result<ColliderSet> {
    parse_colliders(&read_text(path)?).map_err(|e| in_file(path, e))
}

// ---------------------------------------------------------------------------
// images and CSV outputs

fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.reserve(image.pixels.len() * 3);
    for p in &image.pixels {
        out.extend(p.iter().map(|&c| quantize(c)));
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PPM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P6" {
        return Err(Error::format(0, format!("unknown magic `{}`, expected `P6`", fields[0].1.escape_debug())));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| Error::format(fields[i].0 as u64, format!("bad PPM header value `{}`", fields[i].1)))
    };
    let (w, h, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(Error::format(fields[3].0 as u64, format!("maxval {max} unsupported, expected 255")));
    }
    pos += 1; // single whitespace before raster
    let need = w.checked_mul(h).and_then(|n| n.checked_mul(3));
    let Some(need) = need.filter(|&n| pos <= bytes.len() && n <= bytes.len() - pos) else {
        return Err(Error::format(pos.min(bytes.len()) as u64, "truncated PPM raster"));
    };
    let pixels = bytes[pos..pos + need]
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0)
        .collect();
    Ok(Image { width: w, height: h, pixels })
}

pub fn save_ppm(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &encode_ppm(image))
}

pub fn load_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&read(path)?).map_err(|e| in_file(path, e))
}

/// Linear image as three f32 planes (r, g, b), each row-major.
pub fn encode_raw_planes(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(image.pixels.len() * 12);
    for ch in 0..3 {
        for p in &image.pixels {
            put_f32(&mut out, p[ch]);
        }
    }
    out
}

pub fn format_fit_log(log: &[FitLogEntry]) -> String {
    let mut out = String::from("iter,loss_rgb,loss_consistency,total\n");
    for e in log {
        let _ = writeln!(out, "{},{},{},{}", e.iter, e.loss_rgb, e.loss_consistency, e.total);
    }
    out
}

pub fn format_metrics(report: &MetricsReport) -> String {
    format!("pc1_percent,ts,components\n{},{},{}\n", report.pc1_percent, report.ts, report.components)
}

pub fn format_pc_tracks(report: &MetricsReport) -> String {
    let t = &report.tracks;
    let k = t.projections.first().map_or(0, Vec::len);
    let mut out = String::from("frame,time");
    for c in 1..=k {
        let _ = write!(out, ",pc{c}");
    }
    for c in 1..=k {
        let _ = write!(out, ",std{c}");
    }
    out.push('\n');
    for (f, (proj, std)) in t.projections.iter().zip(&t.running_std).enumerate() {
        let _ = write!(out, "{f},{}", t.times[f]);
        for v in proj.iter().chain(std) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    StraightBob,
    Wavy,
    SingleStrand,
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight-bob" => Ok(Style::StraightBob),
            "wavy" => Ok(Style::Wavy),
            "single-strand" => Ok(Style::SingleStrand),
            _ => Err(Error::Config(format!(
                "unknown style `{s}` (expected straight-bob, wavy or single-strand)"
            ))),
        }
    }
}

impl std::fmt::Display for Style {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Style::StraightBob => "straight-bob",
            Style::Wavy => "wavy",
            Style::SingleStrand => "single-strand",
        })
    }
}

/// Every setting of the command-line pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    /// overrides the primary output path of a single command
    pub output: Option<PathBuf>,
    pub groom: Option<PathBuf>,
    pub guides: Option<PathBuf>,
    pub anim: Option<PathBuf>,
    pub colliders: Option<PathBuf>,
    pub track: Option<PathBuf>,
    pub cameras: Option<PathBuf>,
    pub target_groom: Option<PathBuf>,
    pub params: HairParams,
    pub sim: SimConfig,
    pub frame_count: usize,
    pub frame_dt: f64,
    pub k: usize,
    pub epsilon: f64,
    pub resample_points: usize,
    pub fit: FitSettings,
    pub components: usize,
    pub frame: Option<usize>,
    pub style: Style,
    pub strands: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            output: None,
            groom: None,
            guides: None,
            anim: None,
            colliders: None,
            track: None,
            cameras: None,
            target_groom: None,
            params: HairParams::default(),
            sim: SimConfig::default(),
            frame_count: 30,
            frame_dt: 1.0 / 30.0,
            k: crate::skinning::DEFAULT_K,
            epsilon: crate::skinning::DEFAULT_EPSILON,
            resample_points: 50,
            fit: FitSettings::default(),
            components: crate::metrics::DEFAULT_COMPONENTS,
            frame: None,
            style: Style::StraightBob,
            strands: 700,
            points: 16,
            seed: 0,
        }
    }
}

/// Keys accepted by [`PipelineConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "output_dir", "output", "groom", "guides", "anim", "colliders", "track", "cameras", "target_groom",
    "mass", "drag", "tangential_drag", "damp", "stretch_damp", "stretch_resistance",
    "compression_resistance", "bend_resistance", "twist_resistance", "extra_bend_links",
    "start_curve_attract", "self_collide", "friction", "stickiness", "dynamics_weight", "static_cling",
    "dt", "substeps", "solver_iters", "gravity", "wind_direction", "wind_strength",
    "wind_gust_frequency", "self_collision_radius", "frame_count", "frame_dt", "k", "epsilon",
    "resample_points", "lambda_consistency", "iterations", "phase_fraction", "learning_rate",
    "final_learning_rate", "graph_k", "initial_color", "background", "components", "frame", "style",
    "strands", "points", "seed",
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let x: f64 = parse_num(key, v)?;
    if !x.is_finite() {
        return Err(Error::Config(format!("{key}: value must be finite")));
    }
    Ok(x)
}

fn parse_vec3(key: &str, v: &str) -> Result<Vec3> {
    let parts: Vec<&str> = v
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("{key}: expected 3 components, got `{v}`")));
    }
    Ok(Vec3::new(parse_f64(key, parts[0])?, parse_f64(key, parts[1])?, parse_f64(key, parts[2])?))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

fn fmt_vec3(v: &Vec3) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

impl PipelineConfig {
    /// Sets one key from its text value. Keys may use `-` in place of `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let v = value.trim();
        let p = &mut self.params;
        let s = &mut self.sim;
        let f = &mut self.fit;
        let path = || Some(PathBuf::from(v));
        match key.as_str() {
            "output_dir" => self.output_dir = PathBuf::from(v),
            "output" => self.output = path(),
            "groom" => self.groom = path(),
            "guides" => self.guides = path(),
            "anim" => self.anim = path(),
            "colliders" => self.colliders = path(),
            "track" => self.track = path(),
            "cameras" => self.cameras = path(),
            "target_groom" => self.target_groom = path(),
            "mass" => p.mass = parse_f64(&key, v)?,
            "drag" => p.drag = parse_f64(&key, v)?,
            "tangential_drag" => p.tangential_drag = parse_f64(&key, v)?,
            "damp" => p.damp = parse_f64(&key, v)?,
            "stretch_damp" => p.stretch_damp = parse_f64(&key, v)?,
            "stretch_resistance" => p.stretch_resistance = parse_f64(&key, v)?,
            "compression_resistance" => p.compression_resistance = parse_f64(&key, v)?,
            "bend_resistance" => p.bend_resistance = parse_f64(&key, v)?,
            "twist_resistance" => p.twist_resistance = parse_f64(&key, v)?,
            "extra_bend_links" => p.extra_bend_links = parse_num(&key, v)?,
            "start_curve_attract" => p.start_curve_attract = parse_f64(&key, v)?,
            "self_collide" => p.self_collide = parse_bool(&key, v)?,
            "friction" => p.friction = parse_f64(&key, v)?,
            "stickiness" => p.stickiness = parse_f64(&key, v)?,
            "dynamics_weight" => p.dynamics_weight = parse_f64(&key, v)?,
            "static_cling" => p.static_cling = parse_f64(&key, v)?,
            "dt" => s.dt = parse_f64(&key, v)?,
            "substeps" => s.substeps = parse_num(&key, v)?,
            "solver_iters" => s.solver_iters = parse_num(&key, v)?,
            "gravity" => s.gravity = parse_vec3(&key, v)?,
            "wind_direction" => s.wind.direction = parse_vec3(&key, v)?,
            "wind_strength" => s.wind.strength = parse_f64(&key, v)?,
            "wind_gust_frequency" => {
                s.wind.gust_frequency = if v == "none" { None } else { Some(parse_f64(&key, v)?) }
            }
            "self_collision_radius" => s.self_collision_radius = parse_f64(&key, v)?,
            "frame_count" => self.frame_count = parse_num(&key, v)?,
            "frame_dt" => self.frame_dt = parse_f64(&key, v)?,
            "k" => self.k = parse_num(&key, v)?,
            "epsilon" => self.epsilon = parse_f64(&key, v)?,
            "resample_points" => self.resample_points = parse_num(&key, v)?,
            "lambda_consistency" => f.lambda_consistency = parse_f64(&key, v)?,
            "iterations" => f.iterations = parse_num(&key, v)?,
            "phase_fraction" => f.phase_fraction = parse_f64(&key, v)?,
            "learning_rate" => f.learning_rate = parse_f64(&key, v)?,
            "final_learning_rate" => f.final_learning_rate = parse_f64(&key, v)?,
            "graph_k" => f.graph_k = parse_num(&key, v)?,
            "initial_color" => f.initial_color = parse_vec3(&key, v)?,
            "background" => f.background = parse_vec3(&key, v)?,
            "components" => self.components = parse_num(&key, v)?,
            "frame" => self.frame = if v == "none" { None } else { Some(parse_num(&key, v)?) },
            "style" => self.style = v.parse()?,
            "strands" => self.strands = parse_num(&key, v)?,
            "points" => self.points = parse_num(&key, v)?,
            "seed" => self.seed = parse_num(&key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Text value of one key, `None` for unset optional paths.
    pub fn get(&self, key: &str) -> Option<String> {
        let p = &self.params;
        let s = &self.sim;
        let f = &self.fit;
        let path = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string());
        Some(match key {
            "output_dir" => self.output_dir.display().to_string(),
            "output" => return path(&self.output),
            "groom" => return path(&self.groom),
            "guides" => return path(&self.guides),
            "anim" => return path(&self.anim),
            "colliders" => return path(&self.colliders),
            "track" => return path(&self.track),
            "cameras" => return path(&self.cameras),
            "target_groom" => return path(&self.target_groom),
            "mass" => p.mass.to_string(),
            "drag" => p.drag.to_string(),
            "tangential_drag" => p.tangential_drag.to_string(),
            "damp" => p.damp.to_string(),
            "stretch_damp" => p.stretch_damp.to_string(),
            "stretch_resistance" => p.stretch_resistance.to_string(),
            "compression_resistance" => p.compression_resistance.to_string(),
            "bend_resistance" => p.bend_resistance.to_string(),
            "twist_resistance" => p.twist_resistance.to_string(),
            "extra_bend_links" => p.extra_bend_links.to_string(),
            "start_curve_attract" => p.start_curve_attract.to_string(),
            "self_collide" => p.self_collide.to_string(),
            "friction" => p.friction.to_string(),
            "stickiness" => p.stickiness.to_string(),
            "dynamics_weight" => p.dynamics_weight.to_string(),
            "static_cling" => p.static_cling.to_string(),
            "dt" => s.dt.to_string(),
            "substeps" => s.substeps.to_string(),
            "solver_iters" => s.solver_iters.to_string(),
            "gravity" => fmt_vec3(&s.gravity),
            "wind_direction" => fmt_vec3(&s.wind.direction),
            "wind_strength" => s.wind.strength.to_string(),
            "wind_gust_frequency" => s.wind.gust_frequency.map_or("none".into(), |g| g.to_string()),
            "self_collision_radius" => s.self_collision_radius.to_string(),
            "frame_count" => self.frame_count.to_string(),
            "frame_dt" => self.frame_dt.to_string(),
            "k" => self.k.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "resample_points" => self.resample_points.to_string(),
            "lambda_consistency" => f.lambda_consistency.to_string(),
            "iterations" => f.iterations.to_string(),
            "phase_fraction" => f.phase_fraction.to_string(),
            "learning_rate" => f.learning_rate.to_string(),
            "final_learning_rate" => f.final_learning_rate.to_string(),
            "graph_k" => f.graph_k.to_string(),
            "initial_color" => fmt_vec3(&f.initial_color),
            "background" => fmt_vec3(&f.background),
            "components" => self.components.to_string(),
            "frame" => self.frame.map_or("none".into(), |x| x.to_string()),
            "style" => self.style.to_string(),
            "strands" => self.strands.to_string(),
            "points" => self.points.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in data_lines(text) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {n}: expected `key = value`")))?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {n}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            if let Some(v) = self.get(key) {
                let _ = writeln!(out, "{key} = {v}");
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sim.validate()?;
        self.fit.validate()?;
        if self.frame_count == 0 {
            return Err(Error::Config("frame_count must be >= 1".into()));
        }
        if !(self.frame_dt > 0.0) {
            return Err(Error::Config("frame_dt must be > 0".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if self.resample_points < 2 || self.points < 2 {
            return Err(Error::Config("resample_points and points must be >= 2".into()));
        }
        if self.components == 0 {
            return Err(Error::Config("components must be >= 1".into()));
        }
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

// ---------------------------------------------------------------------------
// synthetic grooms

pub const SCALP_RADIUS: f64 = 0.1;
const HAIR_LENGTH: f64 = 0.22;
/// Hair lifts off the scalp by this much by the time it reaches the equator.
const LIFT: f64 = 0.012;
const MAX_POLAR: f64 = 1.2;
const DENSE_SAMPLES: usize = 256;

fn grow(theta0: f64, phi: f64, wave_phase: Option<f64>) -> Vec<Vec3> {
    let radial = |theta: f64| Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
    let side = Vec3::new(-phi.sin(), phi.cos(), 0.0);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let over = (half_pi - theta0).max(0.0);
    let arc = (SCALP_RADIUS + LIFT / 2.0) * over;
    let equator = radial(half_pi) * (SCALP_RADIUS + LIFT);
    (0..DENSE_SAMPLES)
        .map(|i| {
            let s = HAIR_LENGTH * i as f64 / (DENSE_SAMPLES - 1) as f64;
            let mut p = if s < arc {
                let u = s / arc;
                radial(theta0 + u * over) * (SCALP_RADIUS + LIFT * u)
            } else {
                equator - Vec3::z() * (s - arc)
            };
            if let Some(phase) = wave_phase {
                let fade = (s / 0.03).min(1.0);
                p += side * (0.008 * fade * (2.0 * std::f64::consts::PI * s / 0.06 + phase).sin());
            }
            p
        })
        .collect()
}

/// Deterministic wig on the upper cap of a sphere of radius [`SCALP_RADIUS`] at the
/// origin (z up). Strands run over the scalp to the equator, then hang straight down.
/// Coordinates are rounded to f32 so the groom survives GRM1 unchanged.
pub fn make_synthetic(style: Style, strands: usize, points: usize, seed: u64) -> Result<Groom> {
    if points < 2 {
        return Err(Error::invalid("synthetic strands need at least 2 points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if style == Style::SingleStrand { 1 } else { strands };
    let cos_max = MAX_POLAR.cos();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (theta, phi) = if style == Style::SingleStrand {
            (0.5, 0.0)
        } else {
            let c: f64 = rng.random_range(cos_max..1.0);
            (c.acos(), rng.random_range(0.0..std::f64::consts::TAU))
        };
        let wave = (style == Style::Wavy).then(|| rng.random_range(0.0..std::f64::consts::TAU));
        let dense = grow(theta, phi, wave);
        let strand = resample_strand(&dense, points)?;
        out.push(strand.into_iter().map(|p| p.map(|c| c as f32 as f64)).collect());
    }
    Groom::from_strands(out)
}

/// Smooth ground-truth colors: hue varies with root azimuth, brightness with arc position.
pub fn synthetic_colors(groom: &Groom) -> StrandColors {
    let segs = groom.segments_per_strand();
    let mut values = Vec::with_capacity(groom.strand_count() * segs);
    for root in groom.roots() {
        let az = root.y.atan2(root.x);
        for j in 0..segs {
            let u = j as f64 / segs.max(2).saturating_sub(1).max(1) as f64;
            let c = Vec3::new(0.5 + 0.3 * az.cos(), 0.4 + 0.25 * az.sin(), 0.25 + 0.2 * u);
            values.push(c.map(|v| v as f32 as f64));
        }
    }
    StrandColors::new(values, segs.max(1)).expect("synthetic colors lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groom_round_trip_and_size() {
        let g = make_synthetic(Style::Wavy, 20, 8, 4).unwrap();
        let bytes = encode_groom(&g, None).unwrap();
        assert_eq!(bytes.len(), 16 + 20 * 8 * 12);
        let back = decode_groom(&bytes).unwrap();
        assert_eq!(back.groom, g);
        assert!(back.colors.is_none());

        let colors = synthetic_colors(&g);
        let bytes = encode_groom(&g, Some(&colors)).unwrap();
        assert_eq!(bytes.len(), 16 + 20 * 8 * 12 + 8 + 20 * 7 * 12);
        assert_eq!(decode_groom(&bytes).unwrap().colors.unwrap(), colors);
    }

    #[test]
    fn wrong_magic_and_version() {
        let g = make_synthetic(Style::StraightBob, 2, 4, 0).unwrap();
        let mut bytes = encode_groom(&g, None).unwrap();
        bytes[3] = b'X';
        let msg = decode_groom(&bytes).unwrap_err().to_string();
        assert!(msg.contains("GRMX") && msg.contains("GRM1"), "{msg}");
        bytes[3] = b'1';
        bytes[4] = 2;
        let msg = decode_groom(&bytes).unwrap_err().to_string();
        assert!(msg.contains("version 2"), "{msg}");
    }

    #[test]
    fn truncation_reports_offset() {
        let g = make_synthetic(Style::StraightBob, 2, 4, 0).unwrap();
        let bytes = encode_groom(&g, None).unwrap();
        match decode_groom(&bytes[..50]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_chunk_skipped() {
        let g = make_synthetic(Style::StraightBob, 2, 4, 0).unwrap();
        let mut bytes = encode_groom(&g, None).unwrap();
        bytes.extend_from_slice(b"XTRA");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(decode_groom(&bytes).unwrap().groom, g);
    }

    #[test]
    fn animation_and_skinning_round_trip() {
        let g = make_synthetic(Style::StraightBob, 3, 5, 1).unwrap();
        let anim = GuideAnimation::new(vec![g.clone(), g.clone()], 0.04).unwrap();
        let bytes = encode_animation(&anim).unwrap();
        assert_eq!(decode_animation(&bytes, 0.04).unwrap(), anim);

        let map = crate::skinning::build_skinning(&g, &g, 2, 1.0 / 1024.0).unwrap();
        let bytes = encode_skinning(&map).unwrap();
        let back = decode_skinning(&bytes, 5).unwrap();
        assert_eq!(encode_skinning(&back).unwrap(), bytes);
        assert_eq!(back.indices, map.indices);
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let a = make_synthetic(Style::StraightBob, 50, 16, 9).unwrap();
        assert_eq!(a, make_synthetic(Style::StraightBob, 50, 16, 9).unwrap());
        assert_ne!(a, make_synthetic(Style::StraightBob, 50, 16, 10).unwrap());
        for s in a.strands() {
            assert!(s[0].z > 0.0);
            assert!((s[0].norm() - SCALP_RADIUS).abs() < 1e-6);
            assert!(s.windows(2).all(|w| (w[1] - w[0]).norm() > 1e-4));
        }
        assert_eq!(make_synthetic(Style::SingleStrand, 50, 16, 0).unwrap().strand_count(), 1);
    }

    #[test]
    fn config_round_trip_every_key() {
        let mut cfg = PipelineConfig::default();
        for key in CONFIG_KEYS {
            let value = match *key {
                "self_collide" => "false".to_string(),
                "style" => "wavy".to_string(),
                "gravity" | "wind_direction" | "initial_color" | "background" => "0.1 -0.25 1e-7".to_string(),
                "extra_bend_links" | "substeps" | "solver_iters" | "frame_count" | "k" | "resample_points"
                | "iterations" | "graph_k" | "components" | "frame" | "strands" | "points" | "seed" => "7".to_string(),
                k if ["output_dir", "output", "groom", "guides", "anim", "colliders", "track", "cameras", "target_groom"]
                    .contains(&k) => format!("dir/{k}.bin"),
                _ => "0.1234567890123".to_string(),
            };
            cfg.set(key, &value).unwrap();
            assert_eq!(cfg.get(key).unwrap().split_whitespace().count(), value.split_whitespace().count());
        }
        let text = cfg.to_text();
        let back = PipelineConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), text);
        assert_ne!(cfg, PipelineConfig::default());
    }

    #[test]
    fn config_rejects_unknown_key() {
        let err = PipelineConfig::parse("mass = 1\nbogus_key = 3\n").unwrap_err().to_string();
        assert!(err.contains("bogus_key") && err.contains("line 2"), "{err}");
    }

    #[test]
    fn text_formats_round_trip() {
        let track = parse_track("t,qw,qx,qy,qz,tx,ty,tz\n0,1,0,0,0,0,0,0\n1.5,0.7071067811865476,0,0,0.7071067811865476,0.1,0,0\n").unwrap();
        assert_eq!(parse_track(&format_track(&track)).unwrap(), track);

        let cams = parse_cameras("300 64 64 128 128 1 0 0 0 1 0 0 0 1 0 0 0.5\n").unwrap();
        assert_eq!(parse_cameras(&format_cameras(&cams)).unwrap(), cams);

        let col = parse_colliders("# head\nsphere 0 0 0 0.1\ncapsule 0 0 -0.1 0 0 -0.3 0.05\n").unwrap();
        assert_eq!(parse_colliders(&format_colliders(&col)).unwrap(), col);
        assert!(parse_colliders("cube 1 2 3").is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let mut img = Image::filled(3, 2, Vec3::new(0.0, 0.5, 1.0));
        img.pixels[4] = Vec3::new(2.0, -1.0, 0.25);
        let bytes = encode_ppm(&img);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&back), bytes);
        assert_eq!(back.get(1, 1), Vec3::new(1.0, 0.0, 64.0 / 255.0));
    }
}
