//! File formats: pattern images, intensity stacks, projection functions,
//! candidate lists, point clouds and metrics tables.
//!
//! Binary payloads are little-endian and described by a plain-text manifest
//! of `key = value` lines next to them.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Point3;

use crate::ltc_sim::{GroupKind, IntensityStack, StackGroup};
use crate::matching::{CandidateMatch, PeakTuple};
use crate::patterns::{PatternImage, PatternRaster, PatternSpec, ProjectionAxis};
use crate::pipeline::DirectionRecon;
use crate::pointcloud::{CloudPoint, PixelMatches, PointCloud};
use crate::recon::{mask_span, ProjectionFunction};
use crate::{Error, Result};

/// Ordered `key = value` text file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format("manifest", format!("missing key {key}")))
    }

    pub fn parse_key<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::format("manifest", format!("bad value for {key}: {v}")))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format("manifest", format!("bad list entry for {key}: {t}"))))
            .collect()
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::format("manifest", format!("line {}: expected key = value", n + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, self.render().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn join_list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

// ---------------------------------------------------------------- images

/// Pattern image file formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    /// 16-bit binary greymap, values quantised from `[0, 1]`.
    Pgm,
    /// Single-channel float map.
    Pfm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Pfm => "pfm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pgm" => Some(ImageFormat::Pgm),
            "pfm" => Some(ImageFormat::Pfm),
            _ => None,
        }
    }
}

pub fn encode_pgm16(img: &PatternImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.cols, img.rows).into_bytes();
    for &x in &img.data {
        let q = (x.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Split `n` whitespace-separated header tokens off a Netpbm-style file.
fn header_tokens(bytes: &[u8], n: usize, what: &str) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(what, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the payload.
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], what: &str) -> Result<(usize, usize)> {
    let p = |s: &str| s.parse::<usize>().map_err(|_| Error::format(what, format!("bad dimension {s}")));
    Ok((p(&tokens[1])?, p(&tokens[2])?))
}

pub fn decode_pgm16(bytes: &[u8]) -> Result<PatternImage> {
    let (t, start) = header_tokens(bytes, 4, "PGM")?;
    if t[0] != "P5" || t[3] != "65535" {
        return Err(Error::format("PGM", format!("expected 16-bit P5, got {} with maxval {}", t[0], t[3])));
    }
    let (cols, rows) = dims(&t, "PGM")?;
    let body = bytes.get(start..start + 2 * cols * rows).ok_or_else(|| Error::format("PGM", "truncated payload"))?;
    let data = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0).collect();
    Ok(PatternImage { cols, rows, data })
}

/// Little-endian float map; rows are stored bottom to top.
pub fn encode_pfm(img: &PatternImage) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.cols, img.rows).into_bytes();
    for r in (0..img.rows).rev() {
        for &x in &img.data[r * img.cols..(r + 1) * img.cols] {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PatternImage> {
    let (t, start) = header_tokens(bytes, 4, "PFM")?;
    if t[0] != "Pf" {
        return Err(Error::format("PFM", format!("expected single-channel Pf, got {}", t[0])));
    }
    let (cols, rows) = dims(&t, "PFM")?;
    let scale: f64 = t[3].parse().map_err(|_| Error::format("PFM", "bad scale"))?;
    let body = bytes.get(start..start + 4 * cols * rows).ok_or_else(|| Error::format("PFM", "truncated payload"))?;
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            (if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }) as f64
        })
        .collect();
    let mut data = Vec::with_capacity(vals.len());
    for r in (0..rows).rev() {
        data.extend_from_slice(&vals[r * cols..(r + 1) * cols]);
    }
    Ok(PatternImage { cols, rows, data })
}

pub fn write_image(path: &Path, img: &PatternImage, format: ImageFormat) -> Result<()> {
    let bytes = match format {
        ImageFormat::Pgm => encode_pgm16(img),
        ImageFormat::Pfm => encode_pfm(img),
    };
    write_file(path, &bytes)
}

pub fn read_image(path: &Path) -> Result<PatternImage> {
    let bytes = read_bytes(path)?;
    match bytes.get(..2) {
        Some(b"P5") => decode_pgm16(&bytes),
        Some(b"Pf") => decode_pfm(&bytes),
        _ => Err(Error::format("image", format!("{} is neither PGM nor PFM", path.display()))),
    }
}

/// File stem of one pattern image.
pub fn pattern_name(degrees: f64, k: usize, i: usize) -> String {
    format!("pat_t{degrees}_k{k}_i{i}")
}

/// One pattern group to export.
#[derive(Clone, Debug)]
pub struct PatternSet {
    pub kind: GroupKind,
    pub axis: ProjectionAxis,
    pub family: PatternSpec,
}

/// Render every pattern of `sets` into `dir/coarse` and `dir/fine` and write
/// `dir/patterns.manifest`. Returns the number of images written.
pub fn export_patterns(dir: &Path, device: &crate::geometry::DeviceSpec, sets: &[PatternSet], format: ImageFormat) -> Result<usize> {
    let mut manifest = Manifest::default();
    manifest.set("projector_cols", device.projector_cols);
    manifest.set("projector_rows", device.projector_rows);
    manifest.set("format", format.extension());
    manifest.set("groups", sets.len());
    let mut count = 0;
    for (g, set) in sets.iter().enumerate() {
        set.family.validate()?;
        let raster = PatternRaster::new(set.axis, *device);
        let sub = match set.kind {
            GroupKind::Coarse => "coarse",
            GroupKind::Fine | GroupKind::Full => "fine",
        };
        let deg = set.axis.degrees();
        for &k in &set.family.frequencies {
            for i in 0..set.family.phase_count {
                let img = raster.render(&set.family, k, i)?;
                let path = dir.join(sub).join(format!("{}.{}", pattern_name(deg, k, i), format.extension()));
                write_image(&path, &img, format)?;
                count += 1;
            }
        }
        let p = format!("group.{g}");
        manifest.set(format!("{p}.kind"), set.kind.as_str());
        manifest.set(format!("{p}.degrees"), deg);
        manifest.set(format!("{p}.period"), set.family.period);
        manifest.set(format!("{p}.phase_count"), set.family.phase_count);
        manifest.set(format!("{p}.frequencies"), join_list(&set.family.frequencies));
    }
    manifest.set("total", count);
    manifest.write(&dir.join("patterns.manifest"))?;
    Ok(count)
}

// ---------------------------------------------------------------- stacks

pub const STACK_MANIFEST: &str = "stack.manifest";
pub const STACK_DATA: &str = "stack.bin";

/// Write the stack as `f32` samples ordered by group (direction, then
/// coarse before fine), frequency, phase, row and column.
pub fn write_stack(dir: &Path, stack: &IntensityStack) -> Result<()> {
    let mut m = Manifest::default();
    m.set("camera_cols", stack.camera_cols);
    m.set("camera_rows", stack.camera_rows);
    m.set("mean", stack.mean);
    m.set("contrast", stack.contrast);
    m.set("groups", stack.groups.len());
    let mut bytes = Vec::new();
    for (g, grp) in stack.groups.iter().enumerate() {
        let p = format!("group.{g}");
        m.set(format!("{p}.direction"), grp.direction);
        m.set(format!("{p}.kind"), grp.kind.as_str());
        m.set(format!("{p}.theta"), grp.axis.theta);
        m.set(format!("{p}.length"), grp.axis.length);
        m.set(format!("{p}.offset"), grp.axis.offset);
        m.set(format!("{p}.period"), grp.period);
        m.set(format!("{p}.phase_count"), grp.phase_count);
        m.set(format!("{p}.frequencies"), join_list(&grp.frequencies));
        for &x in &grp.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    m.write(&dir.join(STACK_MANIFEST))?;
    write_file(&dir.join(STACK_DATA), &bytes)
}

pub fn read_stack(dir: &Path) -> Result<IntensityStack> {
    let m = Manifest::read(&dir.join(STACK_MANIFEST))?;
    let bytes = read_bytes(&dir.join(STACK_DATA))?;
    let mut stack = IntensityStack::new(m.parse_key("camera_cols")?, m.parse_key("camera_rows")?, m.parse_key("mean")?, m.parse_key("contrast")?);
    let pixels = stack.pixels();
    let mut samples = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    for g in 0..m.parse_key::<usize>("groups")? {
        let p = format!("group.{g}");
        let kind_s = m.get(&format!("{p}.kind"))?;
        let kind = GroupKind::parse(kind_s).ok_or_else(|| Error::format("stack manifest", format!("unknown kind {kind_s}")))?;
        let frequencies: Vec<usize> = m.parse_list(&format!("{p}.frequencies"))?;
        let phase_count: usize = m.parse_key(&format!("{p}.phase_count"))?;
        let n = frequencies.len() * phase_count * pixels;
        let data: Vec<f64> = samples.by_ref().take(n).collect();
        if data.len() != n {
            return Err(Error::DimensionMismatch { expected: format!("{n} samples in group {g}"), got: data.len().to_string() });
        }
        stack.groups.push(StackGroup {
            direction: m.parse_key(&format!("{p}.direction"))?,
            axis: ProjectionAxis { theta: m.parse_key(&format!("{p}.theta"))?, length: m.parse_key(&format!("{p}.length"))?, offset: m.parse_key(&format!("{p}.offset"))? },
            kind,
            period: m.parse_key(&format!("{p}.period"))?,
            frequencies,
            phase_count,
            data,
        });
    }
    if samples.next().is_some() || bytes.len() % 4 != 0 {
        return Err(Error::format("stack", "payload longer than the manifest describes"));
    }
    Ok(stack)
}

// ---------------------------------------------------------------- projection functions

pub const RECON_MANIFEST: &str = "recon.manifest";
pub const RECON_VALUES: &str = "functions.bin";
pub const RECON_MASKS: &str = "masks.bin";

/// Reconstructed projection functions with the capture they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconFile {
    pub camera: (usize, usize),
    /// Capture ratio used for the fine step.
    pub eta: f64,
    /// Patterns the reconstruction consumed, over all directions.
    pub patterns: usize,
    pub directions: Vec<DirectionRecon>,
}

/// Write functions and masks as `f64` arrays ordered by direction, pixel
/// and bin. Masks are stored as 0 or 1.
pub fn write_recon(dir: &Path, file: &ReconFile) -> Result<()> {
    let (camera, recon) = (file.camera, &file.directions);
    let mut m = Manifest::default();
    m.set("camera_cols", camera.0);
    m.set("camera_rows", camera.1);
    m.set("eta", file.eta);
    m.set("patterns", file.patterns);
    m.set("directions", recon.len());
    let (mut vals, mut masks) = (Vec::new(), Vec::new());
    for (d, r) in recon.iter().enumerate() {
        let p = format!("dir.{d}");
        m.set(format!("{p}.direction"), r.direction);
        m.set(format!("{p}.theta"), r.axis.theta);
        m.set(format!("{p}.length"), r.axis.length);
        m.set(format!("{p}.offset"), r.axis.offset);
        m.set(format!("{p}.fine_period"), r.fine_period);
        m.set(format!("{p}.scale"), r.functions.first().map_or(0.0, |f| f.scale));
        for f in &r.functions {
            if f.len() != r.axis.length {
                return Err(Error::DimensionMismatch { expected: format!("{} bins", r.axis.length), got: f.len().to_string() });
            }
            for (&v, &b) in f.values.iter().zip(&f.mask) {
                vals.extend_from_slice(&v.to_le_bytes());
                masks.extend_from_slice(&(if b { 1.0f64 } else { 0.0 }).to_le_bytes());
            }
        }
    }
    m.write(&dir.join(RECON_MANIFEST))?;
    write_file(&dir.join(RECON_VALUES), &vals)?;
    write_file(&dir.join(RECON_MASKS), &masks)
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect()
}

pub fn read_recon(dir: &Path) -> Result<ReconFile> {
    let m = Manifest::read(&dir.join(RECON_MANIFEST))?;
    let camera = (m.parse_key("camera_cols")?, m.parse_key("camera_rows")?);
    let pixels = camera.0 * camera.1;
    let vals = f64s(&read_bytes(&dir.join(RECON_VALUES))?);
    let masks = f64s(&read_bytes(&dir.join(RECON_MASKS))?);
    if vals.len() != masks.len() {
        return Err(Error::format("projection functions", "value and mask files differ in length"));
    }
    let mut at = 0;
    let mut out = Vec::new();
    for d in 0..m.parse_key::<usize>("directions")? {
        let p = format!("dir.{d}");
        let axis = ProjectionAxis { theta: m.parse_key(&format!("{p}.theta"))?, length: m.parse_key(&format!("{p}.length"))?, offset: m.parse_key(&format!("{p}.offset"))? };
        let fine_period: usize = m.parse_key(&format!("{p}.fine_period"))?;
        let scale: f64 = m.parse_key(&format!("{p}.scale"))?;
        let l = axis.length;
        if vals.len() < at + pixels * l {
            return Err(Error::DimensionMismatch { expected: format!("{} values", at + pixels * l), got: vals.len().to_string() });
        }
        let functions = (0..pixels)
            .map(|px| {
                let s = at + px * l;
                let mask: Vec<bool> = masks[s..s + l].iter().map(|&x| x != 0.0).collect();
                let support = mask_span(&mask);
                ProjectionFunction { theta: axis.theta, values: vals[s..s + l].to_vec(), mask, support, scale, aliased: support > fine_period }
            })
            .collect();
        at += pixels * l;
        out.push(DirectionRecon { direction: m.parse_key(&format!("{p}.direction"))?, axis, fine_period, functions });
    }
    if at != vals.len() {
        return Err(Error::format("projection functions", "payload longer than the manifest describes"));
    }
    Ok(ReconFile { camera, eta: m.parse_key("eta")?, patterns: m.parse_key("patterns")?, directions: out })
}

// ---------------------------------------------------------------- candidates

pub const CANDIDATES_HEADER: &str = "u,v,proj_u,proj_v,consensus,residual,tuple";

/// One row per candidate; `tuple` lists peak indices separated by `;`.
pub fn candidates_csv(matches: &[PixelMatches]) -> String {
    let mut s = String::from(CANDIDATES_HEADER);
    s.push('\n');
    for pm in matches {
        for c in &pm.matches {
            let t = c.tuple.iter().map(i32::to_string).collect::<Vec<_>>().join(";");
            s.push_str(&format!("{},{},{},{},{},{},{t}\n", pm.pixel.0, pm.pixel.1, c.projector.0, c.projector.1, c.consensus, c.epipolar_residual));
        }
    }
    s
}

pub fn parse_candidates_csv(text: &str) -> Result<Vec<PixelMatches>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CANDIDATES_HEADER) {
        return Err(Error::format("candidates", format!("expected header {CANDIDATES_HEADER}")));
    }
    let mut out: Vec<PixelMatches> = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format("candidates", format!("line {}: bad {what}", n + 2));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return Err(bad("field count"));
        }
        let pixel = (f[0].parse().map_err(|_| bad("u"))?, f[1].parse().map_err(|_| bad("v"))?);
        let tuple: PeakTuple = f[6].split(';').filter(|t| !t.is_empty()).map(|t| t.parse().map_err(|_| bad("tuple"))).collect::<Result<_>>()?;
        let c = CandidateMatch {
            projector: (f[2].parse().map_err(|_| bad("proj_u"))?, f[3].parse().map_err(|_| bad("proj_v"))?),
            tuple,
            epipolar_residual: f[5].parse().map_err(|_| bad("residual"))?,
            consensus: f[4].parse().map_err(|_| bad("consensus"))?,
        };
        match out.last_mut() {
            Some(last) if last.pixel == pixel => last.matches.push(c),
            _ => out.push(PixelMatches { pixel, matches: vec![c] }),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- point clouds

/// ASCII PLY with the source pixel, candidate index and consensus per vertex.
pub fn ply_string(cloud: &PointCloud) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property int cam_u\nproperty int cam_v\nproperty int candidate\nproperty double proj_u\nproperty double proj_v\n\
         property int consensus\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        s.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            p.position.x, p.position.y, p.position.z, p.pixel.0, p.pixel.1, p.candidate, p.projector.0, p.projector.1, p.consensus
        ));
    }
    s
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(Error::format("PLY", "missing magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["end_header"] => break,
            ["format", f, _] if *f != "ascii" => return Err(Error::format("PLY", format!("unsupported format {f}"))),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| Error::format("PLY", "bad vertex count"))?),
            ["property", _, name] => props.push(name.to_string()),
            _ => {}
        }
    }
    let count = count.ok_or_else(|| Error::format("PLY", "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::format("PLY", "vertices need x, y and z")),
    };
    let (cu, cv, ci, cc) = (col("cam_u"), col("cam_v"), col("candidate"), col("consensus"));
    let (pu, pv) = (col("proj_u"), col("proj_v"));
    let mut points = Vec::with_capacity(count);
    for (n, line) in lines.take(count).enumerate() {
        let v: Vec<f64> = line.split_whitespace().map(|t| t.parse().map_err(|_| Error::format("PLY", format!("vertex {n}: bad number {t}")))).collect::<Result<_>>()?;
        if v.len() < props.len() {
            return Err(Error::format("PLY", format!("vertex {n}: {} of {} fields", v.len(), props.len())));
        }
        let int = |c: Option<usize>, default: usize| c.map_or(default, |c| v[c] as usize);
        let float = |c: Option<usize>| c.map_or(0.0, |c| v[c]);
        points.push(CloudPoint {
            position: Point3::new(v[x], v[y], v[z]),
            pixel: (int(cu, n), int(cv, 0)),
            candidate: int(ci, 0),
            projector: (float(pu), float(pv)),
            consensus: int(cc, 0),
        });
    }
    if points.len() != count {
        return Err(Error::format("PLY", format!("expected {count} vertices, found {}", points.len())));
    }
    Ok(PointCloud { points })
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(ply_string(cloud).as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    BufReader::new(f).read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

pub fn read_text_file(path: &Path) -> Result<String> {
    read_text(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DeviceSpec;

    fn img() -> PatternImage {
        PatternImage { cols: 3, rows: 2, data: vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125] }
    }

    #[test]
    fn pgm_round_trip() {
        let b = encode_pgm16(&img());
        assert!(b.starts_with(b"P5\n3 2\n65535\n"));
        let back = decode_pgm16(&b).unwrap();
        assert_eq!((back.cols, back.rows), (3, 2));
        for (a, b) in back.data.iter().zip(&img().data) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
        assert!(decode_pgm16(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values() {
        let b = encode_pfm(&img());
        assert_eq!(decode_pfm(&b).unwrap(), img());
        assert!(decode_pfm(b"P5\n1 1\n-1.0\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.set("a", 3);
        m.set("list", join_list(&[1, 2, 5]));
        let back = Manifest::parse(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.parse_list::<usize>("list").unwrap(), vec![1, 2, 5]);
        assert!(back.get("missing").is_err());
        assert!(Manifest::parse("novalue").is_err());
    }

    #[test]
    fn pattern_names() {
        assert_eq!(pattern_name(45.0, 3, 1), "pat_t45_k3_i1");
        assert_eq!(pattern_name(22.5, 0, 0), "pat_t22.5_k0_i0");
    }

    #[test]
    fn export_writes_every_pattern() {
        let dir = tempfile::tempdir().unwrap();
        let dev = DeviceSpec::new(16, 8, 2, 2).unwrap();
        let axis = ProjectionAxis::from_degrees(45.0, &dev).unwrap();
        let family = PatternSpec { theta: axis.theta, period: axis.length, frequencies: vec![0, 1], phase_count: 3, mean: 0.5, contrast: 0.4 };
        let n = export_patterns(dir.path(), &dev, &[PatternSet { kind: GroupKind::Coarse, axis, family: family.clone() }], ImageFormat::Pgm).unwrap();
        assert_eq!(n, 6);
        let im = read_image(&dir.path().join("coarse/pat_t45_k1_i2.pgm")).unwrap();
        let want = PatternRaster::new(axis, dev).render(&family, 1, 2).unwrap();
        for (a, b) in im.data.iter().zip(&want.data) {
            assert!((a - b).abs() <= 0.5 / 65535.0);
        }
        let m = Manifest::read(&dir.path().join("patterns.manifest")).unwrap();
        assert_eq!(m.parse_key::<usize>("total").unwrap(), 6);
    }

    #[test]
    fn stack_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dev = DeviceSpec::new(16, 8, 2, 2).unwrap();
        let axis = ProjectionAxis::from_degrees(0.0, &dev).unwrap();
        let mut s = IntensityStack::new(2, 2, 0.5, 0.4);
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.25).collect();
        s.groups.push(StackGroup { direction: 0, axis, kind: GroupKind::Coarse, period: 16, frequencies: vec![0, 1], phase_count: 3, data });
        write_stack(dir.path(), &s).unwrap();
        assert_eq!(fs::metadata(dir.path().join(STACK_DATA)).unwrap().len(), 24 * 4);
        assert_eq!(read_stack(dir.path()).unwrap(), s);
    }

    #[test]
    fn recon_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let axis = ProjectionAxis { theta: 0.5, length: 4, offset: 1 };
        let f = |v: Vec<f64>, m: Vec<bool>| {
            let support = mask_span(&m);
            ProjectionFunction { theta: 0.5, values: v, mask: m, support, scale: 0.6, aliased: support > 2 }
        };
        let r = vec![DirectionRecon {
            direction: 0,
            axis,
            fine_period: 2,
            functions: vec![f(vec![0.0, 1.5, 2.0, 0.0], vec![false, true, true, false]), f(vec![0.0; 4], vec![false; 4])],
        }];
        let file = ReconFile { camera: (2, 1), eta: 0.25, patterns: 84, directions: r };
        write_recon(dir.path(), &file).unwrap();
        assert_eq!(read_recon(dir.path()).unwrap(), file);
    }

    #[test]
    fn candidates_round_trip() {
        let m = vec![
            PixelMatches {
                pixel: (3, 4),
                matches: vec![
                    CandidateMatch { projector: (10.5, 20.25), tuple: vec![0, -1, 2, 1], epipolar_residual: 0.125, consensus: 3 },
                    CandidateMatch { projector: (1.0 / 3.0, 2.0), tuple: vec![1], epipolar_residual: 0.0, consensus: 1 },
                ],
            },
            PixelMatches { pixel: (5, 0), matches: vec![CandidateMatch { projector: (0.0, 0.0), tuple: vec![0, 0], epipolar_residual: 1e-9, consensus: 2 }] },
        ];
        let s = candidates_csv(&m);
        assert!(s.starts_with("u,v,proj_u,proj_v,consensus,residual,tuple\n3,4,10.5,20.25,3,0.125,0;-1;2;1\n"));
        assert_eq!(parse_candidates_csv(&s).unwrap(), m);
        assert!(parse_candidates_csv("x\n").is_err());
    }

    #[test]
    fn ply_round_trip() {
        let c = PointCloud {
            points: vec![
                CloudPoint { position: Point3::new(1.0, -2.5, 300.125), pixel: (7, 9), candidate: 1, projector: (12.5, 40.0), consensus: 4 },
                CloudPoint { position: Point3::new(0.1, 0.2, 0.3), pixel: (0, 0), candidate: 0, projector: (0.1, 1e-3), consensus: 1 },
            ],
        };
        let s = ply_string(&c);
        assert!(s.contains("element vertex 2\n"));
        assert_eq!(parse_ply(&s).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        write_ply(&p, &c).unwrap();
        assert_eq!(read_ply(&p).unwrap(), c);
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
    }
}
