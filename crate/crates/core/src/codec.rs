//! Encode/decode pipeline and the `.lghc` container.
//!
//! ```text
//! header   "LGHC" u8 version
//!          u32 total, level1, level2, channels, offsets
//!          f32 base voxel, voxel scale, 3 base steps
//!          u32 k, f32 radius (0 = unbounded), f32 neighbourhood scale
//!          u8 flags (bit 0 adaptive steps, bit 1 bounded radius)
//! section  u32 payload bytes, u32 symbols, u32 model digest, payload
//!          x4: geometry, level1, level2, model
//! trailer  u32 CRC-32 of everything before it
//! ```
//!
//! The geometry payload is the voxel origin (3 x i32) then the coder bytes.
//! Level payloads hold three coder streams (features, scaling, offsets),
//! each prefixed by its u32 length. The model payload is
//! `u32 embed, u32 phi hidden, u32 head hidden, u32 table resolution,
//! f32 sigma_min, u32 count` and `count` f32 parameters in
//! [`ContextModelParams::to_flat`] order; when there is no level 2 only the
//! level-1 prior is stored. Level digests are CRC-32s of the models used for
//! every symbol; the model digest is a CRC-32 of its payload. All integers
//! are little-endian.
//!
//! Anchors are coded in Morton order of their voxel, so the decoded cloud
//! is a permutation of the input; [`EncodeOutput::order`] maps it back.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::entropy::{
    channel_models, fit_context_model, warm_start, AttributeKind, FitProblem, FitResult, FitSettings, LevelTwoData,
    ModelDigest, QuantSpec, RangeDecoder, RangeEncoder, SymbolModel,
};
use crate::error::{Error, Result, StageExt};
use crate::geometry::{decode_voxels, encode_voxels, VoxelGrid};
use crate::ggconv::{ContextModelParams, ModelShape, DEFAULT_EMBED, DEFAULT_HIDDEN, DEFAULT_SIGMA_MIN, DEFAULT_TABLE_RESOLUTION};
use crate::hierarchy::{partition_positions, preliminary_context, Hierarchy, DEFAULT_VOXEL_SCALE};
use crate::math::widen3;
use crate::spatial::build_graph;
use crate::types::{Anchor, AnchorCloud};

pub const MAGIC: [u8; 4] = *b"LGHC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 58;
pub const SECTION_HEADER_LEN: usize = 12;
pub const TRAILER_LEN: usize = 4;
pub const SECTION_NAMES: [&str; 4] = ["geometry", "level1", "level2", "model"];

const FLAG_ADAPTIVE: u8 = 1;
const FLAG_RADIUS: u8 = 2;
const MAX_CHANNELS: u32 = 1 << 16;
const MAX_ANCHORS: u32 = 1 << 28;
const MAX_K: u32 = 1 << 12;
const MAX_WIDTH: u32 = 1 << 14;

/// Codec settings. Values stored in the header as `f32` are rounded before
/// use so the encoder sees exactly what the decoder will.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecProfile {
    pub voxel_scale: f64,
    pub k: usize,
    pub radius: Option<f64>,
    /// Fixed offset normalization; `None` derives it from the graph.
    pub neighborhood_scale: Option<f64>,
    pub quant: QuantSpec,
    pub embed: usize,
    pub hidden: usize,
    pub table_resolution: usize,
    pub sigma_min: f64,
    pub fit_iterations: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub distortion_weight: f64,
    /// Decode the output inside `encode` and compare.
    pub self_check: bool,
}

impl Default for CodecProfile {
    fn default() -> Self {
        Self {
            voxel_scale: DEFAULT_VOXEL_SCALE,
            k: 8,
            radius: None,
            neighborhood_scale: None,
            quant: QuantSpec { base_steps: [0.05, 0.05, 0.002], adaptive: false },
            embed: DEFAULT_EMBED,
            hidden: DEFAULT_HIDDEN,
            table_resolution: DEFAULT_TABLE_RESOLUTION,
            sigma_min: DEFAULT_SIGMA_MIN,
            fit_iterations: 150,
            learning_rate: 0.01,
            batch_size: None,
            distortion_weight: 1.0,
            self_check: true,
        }
    }
}

impl CodecProfile {
    pub fn validate(&self) -> Result<()> {
        self.quant.validate()?;
        if !(self.voxel_scale > 1.0 && self.voxel_scale.is_finite()) {
            return Err(Error::invalid("voxel_scale must be finite and greater than 1"));
        }
        if self.k == 0 || self.k > MAX_K as usize {
            return Err(Error::invalid("k must lie in [1, 4096]"));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("radius must be positive and finite"));
            }
        }
        if let Some(s) = self.neighborhood_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("neighborhood scale must be positive and finite"));
            }
        }
        if self.embed == 0 || self.embed > MAX_WIDTH as usize || self.hidden > MAX_WIDTH as usize {
            return Err(Error::invalid("network widths must lie in [1, 16384]"));
        }
        if !(2..=64).contains(&self.table_resolution) {
            return Err(Error::invalid("table resolution must lie in [2, 64]"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(Error::invalid("sigma_min must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.distortion_weight >= 0.0 && self.distortion_weight.is_finite()) {
            return Err(Error::invalid("distortion weight must be non-negative"));
        }
        Ok(())
    }

    /// The profile as the decoder will see it.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| v as f32 as f64;
        let mut p = self.clone();
        p.voxel_scale = r(p.voxel_scale);
        p.radius = p.radius.map(r);
        p.neighborhood_scale = p.neighborhood_scale.map(r);
        p.quant.base_steps = p.quant.base_steps.map(r);
        p.sigma_min = r(p.sigma_min);
        p
    }

    pub fn model_shape(&self, channels: usize, offsets: usize) -> ModelShape {
        ModelShape {
            channels,
            offsets,
            embed: self.embed,
            phi_hidden: self.hidden,
            head_hidden: self.hidden,
            table_resolution: self.table_resolution,
        }
    }

    pub fn fit_settings(&self, seed: u64) -> FitSettings {
        FitSettings {
            quant: self.rounded().quant,
            iterations: self.fit_iterations,
            learning_rate: self.learning_rate,
            seed,
            batch_size: self.batch_size,
            distortion_weight: self.distortion_weight,
        }
    }
}

/// A cloud in coding order with quantized positions, ready to fit or encode.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Canonical order, positions snapped to the voxel grid.
    pub canonical: AnchorCloud,
    /// `order[i]` is the input index of canonical anchor `i`.
    pub order: Vec<usize>,
    pub grid: VoxelGrid,
    /// `None` for an empty cloud.
    pub problem: Option<FitProblem>,
    /// The rounded profile.
    pub profile: CodecProfile,
}

pub fn prepare(cloud: &AnchorCloud, profile: &CodecProfile) -> Result<Prepared> {
    profile.validate()?;
    let profile = profile.rounded();
    let eps = cloud.base_voxel_size();
    let grid = VoxelGrid::quantize(&cloud.positions(), eps as f64).stage("position quantization")?;
    let order = grid.canonical_order();
    let grid = grid.permuted(&order);
    let anchors: Vec<Anchor> = order
        .iter()
        .enumerate()
        .map(|(i, &src)| Anchor { position: grid.position(i, eps), ..cloud.anchors()[src].clone() })
        .collect();
    let canonical = AnchorCloud::new(anchors, eps, cloud.channel_count(), cloud.offsets_count())?;
    let problem = if canonical.is_empty() {
        None
    } else {
        let hierarchy = partition_positions(&canonical.positions(), eps as f64, profile.voxel_scale).stage("hierarchy")?;
        let level2 = level2_data(&canonical.positions(), &hierarchy, &profile).stage("level-2 graph")?;
        Some(FitProblem::with_level2(&canonical, &hierarchy, level2)?)
    };
    Ok(Prepared { canonical, order, grid, problem, profile })
}

fn level2_data(positions: &[crate::math::Vec3], h: &Hierarchy, profile: &CodecProfile) -> Result<LevelTwoData> {
    let pos: Vec<_> = h.level2.iter().map(|&i| positions[i]).collect();
    match profile.neighborhood_scale {
        None => LevelTwoData::build(pos, profile.k, profile.radius),
        Some(s) => {
            let graph = build_graph(&pos, profile.k, profile.radius)?;
            LevelTwoData::with_scale(pos, graph, s)
        }
    }
}

/// Seeded initialization, warm start and fit on a prepared cloud.
pub fn fit_prepared(prepared: &Prepared, seed: u64) -> Result<(ContextModelParams, Option<FitResult>)> {
    let profile = &prepared.profile;
    let shape = profile.model_shape(prepared.canonical.channel_count(), prepared.canonical.offsets_count());
    let init = ContextModelParams::seeded(shape, profile.sigma_min, seed)?;
    let Some(problem) = &prepared.problem else {
        return Ok((init, None));
    };
    let warm = warm_start(problem, &profile.quant, &init).stage("warm start")?;
    let fit = fit_context_model(problem, &warm, &profile.fit_settings(seed)).stage("model fitting")?;
    Ok((fit.params.clone(), Some(fit)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeOutput {
    pub bytes: Vec<u8>,
    pub report: RateReport,
    /// What `decode` returns for `bytes`.
    pub reconstruction: AnchorCloud,
    /// `order[i]` is the input index of decoded anchor `i`.
    pub order: Vec<usize>,
}

pub fn encode(cloud: &AnchorCloud, params: &ContextModelParams, profile: &CodecProfile) -> Result<EncodeOutput> {
    encode_prepared(&prepare(cloud, profile)?, params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Header {
    total: u32,
    level1: u32,
    level2: u32,
    channels: u32,
    offsets: u32,
    eps: f32,
    voxel_scale: f32,
    steps: [f32; 3],
    k: u32,
    radius: f32,
    neighborhood_scale: f32,
    flags: u8,
}

impl Header {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        for v in [self.total, self.level1, self.level2, self.channels, self.offsets] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in [self.eps, self.voxel_scale, self.steps[0], self.steps[1], self.steps[2]] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.radius.to_le_bytes());
        out.extend_from_slice(&self.neighborhood_scale.to_le_bytes());
        out.push(self.flags);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(Error::corrupt("header", 0, "bad magic"));
        }
        if r.u8()? != VERSION {
            return Err(Error::corrupt("header", 4, "unsupported version"));
        }
        Ok(Header {
            total: r.u32()?,
            level1: r.u32()?,
            level2: r.u32()?,
            channels: r.u32()?,
            offsets: r.u32()?,
            eps: r.f32()?,
            voxel_scale: r.f32()?,
            steps: [r.f32()?, r.f32()?, r.f32()?],
            k: r.u32()?,
            radius: r.f32()?,
            neighborhood_scale: r.f32()?,
            flags: r.u8()?,
        })
    }

    /// Semantic checks; any failure here is a corrupt header.
    fn check(&self) -> Result<()> {
        let bad = |reason| Err(Error::corrupt("header", 0, reason));
        if self.total > MAX_ANCHORS || self.level1 as u64 + self.level2 as u64 != self.total as u64 {
            return bad("inconsistent anchor counts");
        }
        if self.total > 0 && self.level1 == 0 {
            return bad("no level-1 anchors");
        }
        if self.channels > MAX_CHANNELS || self.offsets > MAX_CHANNELS {
            return bad("attribute widths out of range");
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) || !(self.voxel_scale > 1.0 && self.voxel_scale.is_finite()) {
            return bad("bad voxel sizes");
        }
        if self.steps.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("bad quantization steps");
        }
        if self.k == 0 || self.k > MAX_K || !(self.neighborhood_scale > 0.0 && self.neighborhood_scale.is_finite()) {
            return bad("bad graph parameters");
        }
        if self.flags & !(FLAG_ADAPTIVE | FLAG_RADIUS) != 0 {
            return bad("unknown flags");
        }
        if self.flags & FLAG_RADIUS != 0 && !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad("bad radius");
        }
        Ok(())
    }

    fn quant(&self) -> QuantSpec {
        QuantSpec { base_steps: self.steps.map(|s| s as f64), adaptive: self.flags & FLAG_ADAPTIVE != 0 }
    }

    fn radius(&self) -> Option<f64> {
        (self.flags & FLAG_RADIUS != 0).then_some(self.radius as f64)
    }

    fn coded_width(&self) -> usize {
        self.channels as usize + 3 + 3 * self.offsets as usize
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: &'static str,
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], section: &'static str, base: usize) -> Self {
        Self { bytes, pos: 0, section, base }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::corrupt(self.section, self.base + self.bytes.len(), "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap_or([0; 4])))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap_or([0; 4])))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap_or([0; 4])))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Section<'a> {
    payload: &'a [u8],
    symbols: u32,
    digest: u32,
    /// File offset of the section header.
    offset: usize,
}

/// Coded attribute level: one stream per attribute kind.
struct LevelCode {
    streams: [Vec<u8>; 3],
    estimated: [f64; 3],
    symbols: [usize; 3],
    digest: u32,
}

impl LevelCode {
    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.streams {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        out
    }
}

fn encode_level<'m>(
    symbols: &[Vec<i64>],
    models: impl Fn(usize) -> &'m [SymbolModel],
    channels: usize,
) -> Result<LevelCode> {
    let mut enc = [RangeEncoder::new(), RangeEncoder::new(), RangeEncoder::new()];
    let mut estimated = [0.0; 3];
    let mut counts = [0usize; 3];
    let mut digest = ModelDigest::new();
    for (i, row) in symbols.iter().enumerate() {
        for (c, (&q, m)) in row.iter().zip(models(i)).enumerate() {
            let k = AttributeKind::of_channel(c, channels).index();
            digest.add(m);
            estimated[k] += m.bits(q);
            counts[k] += 1;
            m.encode(&mut enc[k], q)?;
        }
    }
    let [a, b, c] = enc;
    Ok(LevelCode { streams: [a.finish(), b.finish(), c.finish()], estimated, symbols: counts, digest: digest.finish() })
}

struct LevelDecode {
    symbols: Vec<Vec<i64>>,
    estimated: [f64; 3],
    stream_bytes: [usize; 3],
    counts: [usize; 3],
    digest: u32,
}

fn decode_level<'m>(
    section: &Section<'_>,
    name: &'static str,
    anchors: usize,
    models: impl Fn(usize) -> &'m [SymbolModel],
    channels: usize,
    width: usize,
) -> Result<LevelDecode> {
    if section.symbols as usize != anchors * width {
        return Err(Error::corrupt(name, section.offset, "symbol count disagrees with header"));
    }
    let mut r = Reader::new(section.payload, name, section.offset + SECTION_HEADER_LEN);
    let mut streams = [&[][..]; 3];
    for s in &mut streams {
        let len = r.u32()? as usize;
        *s = r.take(len)?;
    }
    if !r.rest().is_empty() {
        return Err(Error::corrupt(name, r.offset(), "trailing bytes in level payload"));
    }
    let mut dec = streams.map(|s| RangeDecoder::new(s, name));
    let mut estimated = [0.0; 3];
    let mut counts = [0usize; 3];
    let mut digest = ModelDigest::new();
    let mut out = Vec::with_capacity(anchors);
    for i in 0..anchors {
        let ms = models(i);
        let mut row = Vec::with_capacity(width);
        for (c, m) in ms.iter().enumerate() {
            let k = AttributeKind::of_channel(c, channels).index();
            digest.add(m);
            let q = m.decode(&mut dec[k])?;
            estimated[k] += m.bits(q);
            counts[k] += 1;
            row.push(q);
        }
        out.push(row);
    }
    Ok(LevelDecode { symbols: out, estimated, stream_bytes: streams.map(<[u8]>::len), counts, digest: digest.finish() })
}

fn model_payload(params: &ContextModelParams, full: bool) -> Vec<u8> {
    let s = params.shape;
    let mut out = Vec::new();
    for v in [s.embed, s.phi_hidden, s.head_hidden, s.table_resolution] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.sigma_min as f32).to_le_bytes());
    let flat = params.to_flat();
    let n = if full { flat.len() } else { params.level1.param_count() };
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for v in &flat[..n] {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

fn parse_model(section: &Section<'_>, header: &Header) -> Result<ContextModelParams> {
    let name = "model";
    let mut r = Reader::new(section.payload, name, section.offset + SECTION_HEADER_LEN);
    let bad = |r: &Reader<'_>, reason| Err(Error::corrupt(name, r.offset(), reason));
    let (embed, phi_hidden, head_hidden, res) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let sigma_min = r.f32()? as f64;
    let count = r.u32()? as usize;
    if embed == 0 || embed > MAX_WIDTH || phi_hidden > MAX_WIDTH || head_hidden > MAX_WIDTH || !(2..=64).contains(&res) {
        return bad(&r, "bad model shape");
    }
    if !(sigma_min > 0.0 && sigma_min.is_finite()) {
        return bad(&r, "bad sigma_min");
    }
    let shape = ModelShape {
        channels: header.channels as usize,
        offsets: header.offsets as usize,
        embed: embed as usize,
        phi_hidden: phi_hidden as usize,
        head_hidden: head_hidden as usize,
        table_resolution: res as usize,
    };
    let full = shape.param_count();
    let prior = 3 * shape.coded_width();
    let expect = if header.level2 > 0 { full } else { prior };
    if count != expect || section.payload.len() - r.pos != 4 * count || section.symbols as usize != count {
        return bad(&r, "model parameter count disagrees with shape");
    }
    let mut flat = vec![0.0; full];
    for v in flat.iter_mut().take(count) {
        let x = r.f32()?;
        if !x.is_finite() {
            return bad(&r, "non-finite model parameter");
        }
        *v = x as f64;
    }
    let mut params = ContextModelParams::zeros(shape, sigma_min)?;
    params.load_flat(&flat)?;
    Ok(params)
}

pub const MODEL_MAGIC: [u8; 4] = *b"LGCM";

/// Standalone model file: `"LGCM"`, u8 version, u32 channels, u32 offsets,
/// then a full model payload as stored in the container.
pub fn serialize_model(params: &ContextModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(params.shape.channels as u32).to_le_bytes());
    out.extend_from_slice(&(params.shape.offsets as u32).to_le_bytes());
    out.extend_from_slice(&model_payload(params, true));
    out
}

pub fn deserialize_model(bytes: &[u8]) -> Result<ContextModelParams> {
    let mut r = Reader::new(bytes, "model", 0);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::corrupt("model", 0, "bad magic"));
    }
    if r.u8()? != VERSION {
        return Err(Error::corrupt("model", 4, "unsupported version"));
    }
    let (channels, offsets) = (r.u32()?, r.u32()?);
    if channels > MAX_CHANNELS || offsets > MAX_CHANNELS {
        return Err(Error::corrupt("model", 5, "attribute widths out of range"));
    }
    let payload = r.rest();
    let header = Header {
        total: 1,
        level1: 0,
        level2: 1,
        channels,
        offsets,
        eps: 1.0,
        voxel_scale: 2.0,
        steps: [1.0; 3],
        k: 1,
        radius: 0.0,
        neighborhood_scale: 1.0,
        flags: 0,
    };
    let count = payload.len().saturating_sub(24) / 4;
    let section = Section { payload, symbols: count as u32, digest: 0, offset: 13 - SECTION_HEADER_LEN };
    parse_model(&section, &header)
}

fn section_bytes(out: &mut Vec<u8>, payload: &[u8], symbols: usize, digest: u32) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&(symbols as u32).to_le_bytes());
    out.extend_from_slice(&digest.to_le_bytes());
    out.extend_from_slice(payload);
}

/// Per-stream accounting gathered while coding.
#[derive(Debug, Clone, Default)]
struct Accounting {
    streams: Vec<StreamReport>,
    digests: [u32; 4],
}

pub fn encode_prepared(prepared: &Prepared, params: &ContextModelParams) -> Result<EncodeOutput> {
    let profile = &prepared.profile;
    let cloud = &prepared.canonical;
    let quant = profile.quant;
    let (channels, offsets) = (cloud.channel_count(), cloud.offsets_count());
    let width = cloud.coded_width();
    if params.shape.channels != channels || params.shape.offsets != offsets {
        return Err(Error::DimensionMismatch { what: "model coded width", expected: width, found: params.coded_width() });
    }
    let params = params.rounded_to_f32();
    if !params.is_finite() {
        return Err(Error::NonFinite("model parameters"));
    }
    let h = prepared.problem.as_ref().map(|p| p.hierarchy());
    let level2 = prepared.problem.as_ref().map(|p| p.level2());
    let mut header = Header {
        total: cloud.len() as u32,
        level1: h.map_or(0, |h| h.level1.len() as u32),
        level2: h.map_or(0, |h| h.level2.len() as u32),
        channels: channels as u32,
        offsets: offsets as u32,
        eps: cloud.base_voxel_size(),
        voxel_scale: profile.voxel_scale as f32,
        steps: quant.base_steps.map(|s| s as f32),
        k: profile.k as u32,
        radius: profile.radius.unwrap_or(0.0) as f32,
        neighborhood_scale: level2.map_or(1.0, |l| l.neighborhood_scale as f32),
        flags: 0,
    };
    if quant.adaptive {
        header.flags |= FLAG_ADAPTIVE;
    }
    if profile.radius.is_some() {
        header.flags |= FLAG_RADIUS;
    }
    if cloud.len() > MAX_ANCHORS as usize || channels > MAX_CHANNELS as usize || offsets > MAX_CHANNELS as usize {
        return Err(Error::invalid("cloud exceeds container limits"));
    }

    let mut out = Vec::new();
    header.write(&mut out);
    let mut acc = Accounting::default();
    let mut anchors: Vec<Option<Anchor>> = vec![None; cloud.len()];

    if let Some(problem) = &prepared.problem {
        let hierarchy = problem.hierarchy();
        let geo = encode_voxels(&prepared.grid.voxels).stage("geometry")?;
        let mut payload = Vec::new();
        for o in prepared.grid.origin {
            payload.extend_from_slice(&o.to_le_bytes());
        }
        payload.extend_from_slice(&geo.payload);
        section_bytes(&mut out, &payload, geo.symbols, geo.digest);
        acc.digests[0] = geo.digest;
        acc.streams.push(StreamReport::new("geometry", "positions", geo.symbols, geo.estimated_bits, geo.payload.len()));

        let models1 = problem.level1_models(&params, &quant).stage("level-1 attributes")?;
        let symbols1 = problem.level1_symbols(&models1, true).stage("level-1 attributes")?;
        let decoded1 = problem.decode_level1(&models1, &symbols1);
        let code1 = encode_level(&symbols1, |_| &models1[..], channels).stage("level-1 attributes")?;
        section_bytes(&mut out, &code1.payload(), symbols1.len() * width, code1.digest);
        acc.digests[1] = code1.digest;
        push_level_streams(&mut acc, "level1", &code1.symbols, &code1.estimated, &code1.streams.each_ref().map(Vec::len));

        let prelim = problem.prelim(&decoded1).stage("level-2 context")?;
        let derive = |i: usize| problem.level2_models(&params, &prelim, &quant, i);
        let n2 = hierarchy.level2.len();
        #[cfg(feature = "parallel")]
        let models2: Vec<Result<Vec<SymbolModel>>> = {
            use rayon::prelude::*;
            (0..n2).into_par_iter().map(derive).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let models2: Vec<Result<Vec<SymbolModel>>> = (0..n2).map(derive).collect();
        let models2 = models2.into_iter().collect::<Result<Vec<_>>>().stage("level-2 context")?;
        let symbols2 = problem
            .level2_values()
            .iter()
            .zip(&models2)
            .map(|(x, ms)| {
                x.iter().zip(ms).map(|(&v, m)| crate::entropy::quantize_bounded(v, m.step(), m.bound())).collect()
            })
            .collect::<Result<Vec<Vec<i64>>>>()
            .stage("level-2 attributes")?;
        let code2 = encode_level(&symbols2, |i| &models2[i][..], channels).stage("level-2 attributes")?;
        section_bytes(&mut out, &code2.payload(), n2 * width, code2.digest);
        acc.digests[2] = code2.digest;
        push_level_streams(&mut acc, "level2", &code2.symbols, &code2.estimated, &code2.streams.each_ref().map(Vec::len));

        for (s, &i) in hierarchy.level1.iter().enumerate() {
            anchors[i] = Some(decoded1[s].clone());
        }
        for (j, &i) in hierarchy.level2.iter().enumerate() {
            let p = cloud.anchors()[i].position;
            anchors[i] = Some(crate::entropy::reconstruct(p, &symbols2[j], &models2[j], channels, offsets));
        }

        let model = model_payload(&params, n2 > 0);
        let count = (model.len() - 24) / 4;
        let digest = crc32fast::hash(&model);
        section_bytes(&mut out, &model, count, digest);
        acc.digests[3] = digest;
        acc.streams.push(StreamReport::new("model", "parameters", count, (model.len() * 8) as f64, model.len()));
    } else {
        for _ in 0..4 {
            section_bytes(&mut out, &[], 0, 0);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());

    let anchors: Vec<Anchor> = anchors.into_iter().map(|a| a.unwrap_or_else(|| unreachable_anchor(width))).collect();
    let reconstruction = AnchorCloud::new(anchors, cloud.base_voxel_size(), channels, offsets)?;
    let report = RateReport::build(&out, &header, acc.streams.clone())?;

    if profile.self_check {
        let decoded = decode_inner(&out).stage("self-check")?;
        if decoded.digests != acc.digests {
            return Err(Error::SelfCheck("decoder model digests differ"));
        }
        if decoded.cloud != reconstruction {
            return Err(Error::SelfCheck("decoded cloud differs from the reconstruction"));
        }
    }
    Ok(EncodeOutput { bytes: out, report, reconstruction, order: prepared.order.clone() })
}

fn unreachable_anchor(width: usize) -> Anchor {
    // Every index is level 1 or level 2; this only keeps the types total.
    Anchor { position: [0.0; 3], feature: vec![0.0; width], scaling: [1.0; 3], offsets: Vec::new(), mean_opacity: 1.0 }
}

fn push_level_streams(acc: &mut Accounting, section: &'static str, counts: &[usize; 3], est: &[f64; 3], bytes: &[usize; 3]) {
    for kind in AttributeKind::ALL {
        let k = kind.index();
        acc.streams.push(StreamReport::new(section, kind.name(), counts[k], est[k], bytes[k]));
    }
}

struct Decoded {
    cloud: AnchorCloud,
    digests: [u32; 4],
    streams: Vec<StreamReport>,
    header: Header,
}

/// Splits the stream into header, sections and trailer, checking lengths
/// and the CRC before anything is interpreted.
fn split(bytes: &[u8]) -> Result<(Header, [Section<'_>; 4])> {
    let mut r = Reader::new(bytes, "header", 0);
    let header = Header::read(&mut r)?;
    let mut sections = [Section { payload: &[], symbols: 0, digest: 0, offset: 0 }; 4];
    for (s, name) in sections.iter_mut().zip(SECTION_NAMES) {
        r.section = name;
        let offset = r.offset();
        let len = r.u32()? as usize;
        let symbols = r.u32()?;
        let digest = r.u32()?;
        let payload = r.take(len)?;
        *s = Section { payload, symbols, digest, offset };
    }
    r.section = "trailer";
    let body = r.offset();
    let crc = r.u32()?;
    if !r.rest().is_empty() {
        return Err(Error::corrupt("trailer", body + TRAILER_LEN, "trailing bytes after checksum"));
    }
    if crc32fast::hash(&bytes[..body]) != crc {
        return Err(Error::corrupt("trailer", body, "checksum mismatch"));
    }
    header.check()?;
    Ok((header, sections))
}

fn decode_inner(bytes: &[u8]) -> Result<Decoded> {
    let (header, sections) = split(bytes)?;
    let channels = header.channels as usize;
    let offsets = header.offsets as usize;
    let width = header.coded_width();
    let n = header.total as usize;
    let mut streams = Vec::new();
    if n == 0 {
        if sections.iter().any(|s| !s.payload.is_empty() || s.symbols != 0) {
            return Err(Error::corrupt("geometry", HEADER_LEN, "sections present in an empty stream"));
        }
        let cloud = AnchorCloud::empty(header.eps, channels, offsets)?;
        return Ok(Decoded { cloud, digests: [0; 4], streams, header });
    }
    let quant = header.quant();

    let [geo, sec1, sec2, sec_model] = sections;
    if crc32fast::hash(sec_model.payload) != sec_model.digest {
        return Err(Error::ModelMismatch { section: "model" });
    }
    let params = parse_model(&sec_model, &header)?;

    if geo.symbols as usize != 3 * n {
        return Err(Error::corrupt("geometry", geo.offset, "symbol count disagrees with header"));
    }
    let mut r = Reader::new(geo.payload, "geometry", geo.offset + SECTION_HEADER_LEN);
    let origin = [r.i32()?, r.i32()?, r.i32()?];
    let coded = r.rest();
    let (voxels, geo_digest, geo_bits) = decode_voxels(coded, n)?;
    if geo_digest != geo.digest {
        return Err(Error::ModelMismatch { section: "geometry" });
    }
    streams.push(StreamReport::new("geometry", "positions", 3 * n, geo_bits, coded.len()));
    let grid = VoxelGrid { origin, voxels };
    let positions: Vec<[f32; 3]> = (0..n).map(|i| grid.position(i, header.eps)).collect();
    let pos64: Vec<_> = positions.iter().map(|&p| widen3(p)).collect();

    let hierarchy = partition_positions(&pos64, header.eps as f64, header.voxel_scale as f64).stage("hierarchy")?;
    if hierarchy.level1.len() != header.level1 as usize {
        return Err(Error::corrupt("geometry", geo.offset, "hierarchy disagrees with header counts"));
    }

    let ep1 = params.level1.entropy_params(params.sigma_min);
    let models1 = channel_models(&ep1, &quant, channels)?;
    let l1 = decode_level(&sec1, "level1", hierarchy.level1.len(), |_| &models1[..], channels, width)?;
    if l1.digest != sec1.digest {
        return Err(Error::ModelMismatch { section: "level1" });
    }
    let mut anchors: Vec<Option<Anchor>> = vec![None; n];
    for (s, &i) in hierarchy.level1.iter().enumerate() {
        anchors[i] = Some(crate::entropy::reconstruct(positions[i], &l1.symbols[s], &models1, channels, offsets));
    }
    push_decoded_streams(&mut streams, "level1", &l1);

    let pos2: Vec<_> = hierarchy.level2.iter().map(|&i| pos64[i]).collect();
    let graph = build_graph(&pos2, header.k as usize, header.radius()).stage("level-2 graph")?;
    let level2 = LevelTwoData::with_scale(pos2, graph, header.neighborhood_scale as f64)?;
    let prelim = preliminary_context(&hierarchy, |i| anchors.get(i).and_then(Option::as_ref), &level2.positions)
        .stage("level-2 context")?;
    let derive = |i: usize| -> Result<Vec<SymbolModel>> {
        let ep = params.level2_params(i, &prelim, &level2.graph, level2.neighborhood_scale)?;
        channel_models(&ep, &quant, channels)
    };
    let n2 = hierarchy.level2.len();
    #[cfg(feature = "parallel")]
    let models2: Vec<Result<Vec<SymbolModel>>> = {
        use rayon::prelude::*;
        (0..n2).into_par_iter().map(derive).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let models2: Vec<Result<Vec<SymbolModel>>> = (0..n2).map(derive).collect();
    let models2 = models2.into_iter().collect::<Result<Vec<_>>>().stage("level-2 context")?;
    let l2 = decode_level(&sec2, "level2", n2, |i| &models2[i][..], channels, width)?;
    if l2.digest != sec2.digest {
        return Err(Error::ModelMismatch { section: "level2" });
    }
    for (j, &i) in hierarchy.level2.iter().enumerate() {
        anchors[i] = Some(crate::entropy::reconstruct(positions[i], &l2.symbols[j], &models2[j], channels, offsets));
    }
    push_decoded_streams(&mut streams, "level2", &l2);
    let count = sec_model.symbols as usize;
    streams.push(StreamReport::new("model", "parameters", count, (sec_model.payload.len() * 8) as f64, sec_model.payload.len()));

    let anchors: Vec<Anchor> = anchors.into_iter().map(|a| a.unwrap_or_else(|| unreachable_anchor(width))).collect();
    let cloud = AnchorCloud::new(anchors, header.eps, channels, offsets)?;
    Ok(Decoded { cloud, digests: [geo.digest, sec1.digest, sec2.digest, sec_model.digest], streams, header })
}

fn push_decoded_streams(streams: &mut Vec<StreamReport>, section: &'static str, l: &LevelDecode) {
    for kind in AttributeKind::ALL {
        let k = kind.index();
        streams.push(StreamReport::new(section, kind.name(), l.counts[k], l.estimated[k], l.stream_bytes[k]));
    }
}

/// Decodes a container. Anchors come back in coding order with
/// `mean_opacity = 1`.
pub fn decode(bytes: &[u8]) -> Result<AnchorCloud> {
    Ok(decode_inner(bytes)?.cloud)
}

/// Size accounting of a container; decodes it to obtain the estimates.
pub fn rate_report(bytes: &[u8]) -> Result<RateReport> {
    let d = decode_inner(bytes)?;
    RateReport::build(bytes, &d.header, d.streams)
}

/// One entropy-coded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub section: &'static str,
    pub kind: &'static str,
    pub symbols: usize,
    /// `sum -log2 P` under the coder's models.
    pub estimated_bits: f64,
    /// Coder output size.
    pub actual_bits: u64,
}

impl StreamReport {
    fn new(section: &'static str, kind: &'static str, symbols: usize, estimated_bits: f64, bytes: usize) -> Self {
        Self { section, kind, symbols, estimated_bits, actual_bits: 8 * bytes as u64 }
    }

    /// Coder output minus the ideal code length.
    pub fn overhead_bits(&self) -> f64 {
        self.actual_bits as f64 - self.estimated_bits
    }
}

/// One container section; `bytes` includes its 12-byte header and any
/// framing inside the payload.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionReport {
    pub name: &'static str,
    pub bytes: usize,
    pub symbols: usize,
    pub estimated_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub anchors: usize,
    pub level1: usize,
    pub level2: usize,
    pub header_bytes: usize,
    pub trailer_bytes: usize,
    pub total_bytes: usize,
    pub sections: Vec<SectionReport>,
    pub streams: Vec<StreamReport>,
}

impl RateReport {
    fn build(bytes: &[u8], header: &Header, streams: Vec<StreamReport>) -> Result<Self> {
        let (_, parts) = split(bytes)?;
        let sections = parts
            .iter()
            .zip(SECTION_NAMES)
            .map(|(s, name)| SectionReport {
                name,
                bytes: SECTION_HEADER_LEN + s.payload.len(),
                symbols: s.symbols as usize,
                estimated_bits: streams.iter().filter(|st| st.section == name).map(|st| st.estimated_bits).sum(),
            })
            .collect();
        Ok(Self {
            anchors: header.total as usize,
            level1: header.level1 as usize,
            level2: header.level2 as usize,
            header_bytes: HEADER_LEN,
            trailer_bytes: TRAILER_LEN,
            total_bytes: bytes.len(),
            sections,
            streams,
        })
    }

    pub fn section(&self, name: &str) -> Option<&SectionReport> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn stream(&self, section: &str, kind: &str) -> Option<&StreamReport> {
        self.streams.iter().find(|s| s.section == section && s.kind == kind)
    }

    pub fn total_bits(&self) -> u64 {
        8 * self.total_bytes as u64
    }

    pub fn bits_per_anchor(&self) -> f64 {
        if self.anchors == 0 {
            0.0
        } else {
            self.total_bits() as f64 / self.anchors as f64
        }
    }

    /// `R_geo`, `R_attr` and `R_model` in bits (section framing included).
    pub fn budget(&self) -> [u64; 3] {
        let b = |n: &str| self.section(n).map_or(0, |s| 8 * s.bytes as u64);
        [b("geometry"), b("level1") + b("level2"), b("model")]
    }

    /// Line-oriented `key=value` rendering.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let [geo, attr, model] = self.budget();
        let _ = writeln!(s, "anchors={}", self.anchors);
        let _ = writeln!(s, "level1_anchors={}", self.level1);
        let _ = writeln!(s, "level2_anchors={}", self.level2);
        let _ = writeln!(s, "total_bytes={}", self.total_bytes);
        let _ = writeln!(s, "total_bits={}", self.total_bits());
        let _ = writeln!(s, "bits_per_anchor={:.4}", self.bits_per_anchor());
        let _ = writeln!(s, "header_bytes={}", self.header_bytes);
        let _ = writeln!(s, "trailer_bytes={}", self.trailer_bytes);
        let _ = writeln!(s, "r_geo_bits={geo}");
        let _ = writeln!(s, "r_attr_bits={attr}");
        let _ = writeln!(s, "r_model_bits={model}");
        for sec in &self.sections {
            let _ = writeln!(s, "section.{}.bytes={}", sec.name, sec.bytes);
            let _ = writeln!(s, "section.{}.symbols={}", sec.name, sec.symbols);
            let _ = writeln!(s, "section.{}.estimated_bits={:.3}", sec.name, sec.estimated_bits);
        }
        for st in &self.streams {
            let key = alloc::format!("stream.{}.{}", st.section, st.kind);
            let _ = writeln!(s, "{key}.symbols={}", st.symbols);
            let _ = writeln!(s, "{key}.estimated_bits={:.3}", st.estimated_bits);
            let _ = writeln!(s, "{key}.actual_bits={}", st.actual_bits);
        }
        s
    }
}
