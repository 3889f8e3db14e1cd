//! Anchor-cloud files.
//!
//! Native `.lgac`: `"LGAC"`, u8 version 1, u32 anchor count, u32 channels,
//! u32 offsets, f32 base voxel size, then one record per anchor of
//! `3 + C + 3 + 3 K + 1` little-endian f32 values (position, feature,
//! scaling, offsets row by row, mean opacity).
//!
//! CSV: optional `# base_voxel_size=<v>` comment lines, a header row
//! `x,y,z,f0..f{C-1},s0,s1,s2,o0x,o0y,o0z,..,opacity`, one anchor per row.

use std::fs;
use std::io::Write;
use std::path::Path;

use anchorzip_core::{Anchor, AnchorCloud};

use crate::error::{AppError, AppResult, Location};

pub const NATIVE_MAGIC: [u8; 4] = *b"LGAC";
pub const NATIVE_VERSION: u8 = 1;
const NATIVE_HEADER: usize = 21;
/// Base voxel size assumed for CSV files without a metadata comment.
pub const CSV_DEFAULT_VOXEL: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Native,
    Csv,
}

impl Format {
    /// `.csv` is CSV, anything else native.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Native,
        }
    }
}

pub fn load_cloud(path: &Path, format: Format) -> AppResult<AnchorCloud> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    match format {
        Format::Native => parse_native(&bytes),
        Format::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| AppError::parse(Location::Offset(e.utf8_error().valid_up_to()), "not UTF-8"))?;
            parse_csv(&text)
        }
    }
}

pub fn save_cloud(cloud: &AnchorCloud, path: &Path) -> AppResult<()> {
    let bytes = match Format::from_path(path) {
        Format::Native => to_native(cloud),
        Format::Csv => to_csv(cloud)?.into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| AppError::io(path, e))
}

pub fn to_native(cloud: &AnchorCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(NATIVE_HEADER + 4 * cloud.len() * (cloud.coded_width() + 4));
    out.extend_from_slice(&NATIVE_MAGIC);
    out.push(NATIVE_VERSION);
    for v in [cloud.len(), cloud.channel_count(), cloud.offsets_count()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cloud.base_voxel_size().to_le_bytes());
    for a in cloud.anchors() {
        let values = a
            .position
            .iter()
            .chain(&a.feature)
            .chain(&a.scaling)
            .chain(a.offsets.iter().flatten())
            .chain(std::iter::once(&a.mean_opacity));
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn parse_native(bytes: &[u8]) -> AppResult<AnchorCloud> {
    let word = |at: usize| -> AppResult<[u8; 4]> {
        bytes
            .get(at..at + 4)
            .and_then(|s| s.try_into().ok())
            .ok_or_else(|| AppError::parse(Location::Offset(bytes.len()), "truncated header"))
    };
    if word(0)? != NATIVE_MAGIC {
        return Err(AppError::parse(Location::Offset(0), "bad magic, expected LGAC"));
    }
    match bytes.get(4) {
        Some(&NATIVE_VERSION) => {}
        Some(v) => return Err(AppError::parse(Location::Offset(4), format!("unsupported version {v}"))),
        None => return Err(AppError::parse(Location::Offset(4), "truncated header")),
    }
    let n = u32::from_le_bytes(word(5)?) as usize;
    let c = u32::from_le_bytes(word(9)?) as usize;
    let k = u32::from_le_bytes(word(13)?) as usize;
    let eps = f32::from_le_bytes(word(17)?);
    let record = 3 + c + 3 + 3 * k + 1;
    let expected = record
        .checked_mul(4)
        .and_then(|r| r.checked_mul(n))
        .and_then(|b| b.checked_add(NATIVE_HEADER))
        .ok_or_else(|| AppError::parse(Location::Offset(5), "anchor count overflows"))?;
    if bytes.len() != expected {
        let at = bytes.len().min(expected);
        return Err(AppError::parse(
            Location::Offset(at),
            format!("expected {expected} bytes for {n} anchors, found {}", bytes.len()),
        ));
    }
    let mut values = bytes[NATIVE_HEADER..].chunks_exact(4).map(|w| f32::from_le_bytes([w[0], w[1], w[2], w[3]]));
    let mut next = || values.next().unwrap_or(f32::NAN);
    let anchors = (0..n)
        .map(|_| {
            let position = [next(), next(), next()];
            let feature = (0..c).map(|_| next()).collect();
            let scaling = [next(), next(), next()];
            let offsets = (0..k).map(|_| [next(), next(), next()]).collect();
            Anchor { position, feature, scaling, offsets, mean_opacity: next() }
        })
        .collect();
    Ok(AnchorCloud::new(anchors, eps, c, k)?)
}

fn csv_header(c: usize, k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["x", "y", "z"].map(String::from).to_vec();
    h.extend((0..c).map(|i| format!("f{i}")));
    h.extend(["s0", "s1", "s2"].map(String::from));
    for r in 0..k {
        h.extend(["x", "y", "z"].map(|a| format!("o{r}{a}")));
    }
    h.push("opacity".into());
    h
}

pub fn to_csv(cloud: &AnchorCloud) -> AppResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| AppError::Usage(format!("csv write failed: {e}"));
    w.write_record(csv_header(cloud.channel_count(), cloud.offsets_count())).map_err(csv_err)?;
    for a in cloud.anchors() {
        let row: Vec<String> = a
            .position
            .iter()
            .chain(&a.feature)
            .chain(&a.scaling)
            .chain(a.offsets.iter().flatten())
            .chain(std::iter::once(&a.mean_opacity))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    let body = w.into_inner().map_err(|e| AppError::Usage(format!("csv write failed: {e}")))?;
    let mut out = format!("# base_voxel_size={}\n", cloud.base_voxel_size()).into_bytes();
    out.write_all(&body).map_err(|e| AppError::io("<memory>", e))?;
    String::from_utf8(out).map_err(|_| AppError::Usage("csv output is not UTF-8".into()))
}

pub fn parse_csv(text: &str) -> AppResult<AnchorCloud> {
    let mut eps = CSV_DEFAULT_VOXEL;
    for (i, line) in text.lines().enumerate() {
        let Some(meta) = line.trim().strip_prefix('#') else { break };
        if let Some(v) = meta.trim().strip_prefix("base_voxel_size=") {
            eps = v.trim().parse().map_err(|_| AppError::parse(Location::Line(i + 1), format!("bad base_voxel_size {v:?}")))?;
        }
    }
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| csv_parse_error(&e))?.clone();
    let names: Vec<&str> = header.iter().collect();
    let c = names.iter().filter(|h| h.starts_with('f')).count();
    let k = names.iter().filter(|h| h.starts_with('o') && *h != &"opacity").count() / 3;
    let expected = csv_header(c, k);
    if names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(AppError::parse(Location::Line(header_line(text)), format!("unexpected header, expected {}", expected.join(","))));
    }
    let mut anchors = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_parse_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let vals = rec
            .iter()
            .enumerate()
            .map(|(col, s)| {
                s.parse::<f32>()
                    .map_err(|_| AppError::parse(Location::Line(line), format!("column {}: {s:?} is not a number", names[col])))
            })
            .collect::<AppResult<Vec<f32>>>()?;
        let o = &vals[3 + c + 3..3 + c + 3 + 3 * k];
        anchors.push(Anchor {
            position: [vals[0], vals[1], vals[2]],
            feature: vals[3..3 + c].to_vec(),
            scaling: [vals[3 + c], vals[4 + c], vals[5 + c]],
            offsets: o.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect(),
            mean_opacity: vals[vals.len() - 1],
        });
    }
    Ok(AnchorCloud::new(anchors, eps, c, k)?)
}

fn header_line(text: &str) -> usize {
    text.lines().take_while(|l| l.trim_start().starts_with('#')).count() + 1
}

fn csv_parse_error(e: &csv::Error) -> AppError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    AppError::parse(Location::Line(line), e.to_string())
}
