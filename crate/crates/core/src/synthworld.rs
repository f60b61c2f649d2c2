//! Reproducible synthetic temporal worlds and the latent embedding oracle.
//!
//! A corpus of `SyntheticVideo`s stands in for raw video: each video is a
//! duration tiled contiguously by latent events, and frames are the event
//! latent perturbed by keyed Gaussian noise. The oracle exposes the same
//! cosine-similarity interface a learned frame encoder would.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{l2_norm, parse_latent, EmbedError, Embedder};
use crate::moment::Moment;
use crate::rng::{fnv1a64, substream};

/// Frame-time quantization grid for RNG keying, in samples per second.
pub const FRAME_KEY_RATE: f64 = 2.0;

const CORPUS_FORMAT: &str = "synthetic-corpus";
const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("infeasible world config: {0}")]
    Infeasible(String),
    #[error("corrupt corpus file: {0}")]
    CorruptCorpus(String),
    #[error("video violates world invariants: {0}")]
    InvalidVideo(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Generation parameters for a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub latent_dim: usize,
    pub videos: usize,
    /// `(min, max)` video duration in seconds.
    pub duration_range: (f64, f64),
    /// `(min, max)` number of events per video, inclusive.
    pub events_per_video: (usize, usize),
    pub min_event_length: f64,
    /// Std of the isotropic Gaussian noise added to frame embeddings.
    pub frame_noise: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            latent_dim: 16,
            videos: 100,
            duration_range: (40.0, 90.0),
            events_per_video: (3, 8),
            min_event_length: 4.0,
            frame_noise: 0.15,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidConfig(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        let (dmin, dmax) = self.duration_range;
        if !(dmin.is_finite() && dmax.is_finite()) || dmin <= 0.0 || dmin > dmax {
            return bad(format!("duration_range ({dmin}, {dmax}) must be a nonempty positive range"));
        }
        let (emin, emax) = self.events_per_video;
        if emin == 0 || emin > emax {
            return bad(format!("events_per_video ({emin}, {emax}) must be a nonempty range from 1"));
        }
        if !self.min_event_length.is_finite() || self.min_event_length <= 0.0 {
            return bad(format!("min_event_length {} must be positive", self.min_event_length));
        }
        if !self.frame_noise.is_finite() || self.frame_noise < 0.0 {
            return bad(format!("frame_noise {} must be nonnegative", self.frame_noise));
        }
        // Even the shortest video must fit the largest event count.
        let needed = emax as f64 * self.min_event_length;
        if dmin < needed {
            return Err(WorldError::Infeasible(format!(
                "duration_range.min {dmin} cannot fit {emax} events of length >= {}",
                self.min_event_length
            )));
        }
        Ok(())
    }
}

/// One latent temporal event: a ground-truth interval plus a unit latent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEvent {
    pub interval: Moment,
    pub latent: Vec<f64>,
}

/// A synthetic stand-in for a raw video: ordered, non-overlapping events
/// covering `[0, duration]` contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub id: String,
    pub duration: f64,
    pub events: Vec<LatentEvent>,
}

impl SyntheticVideo {
    /// Index of the event containing `t` (half-open intervals, the final
    /// event also owns `t == duration`). `None` outside `[0, duration]` or
    /// when the video has no events.
    pub fn event_index_at(&self, t: f64) -> Option<usize> {
        if self.events.is_empty() || !(0.0..=self.duration).contains(&t) {
            return None;
        }
        for (i, ev) in self.events.iter().enumerate() {
            if ev.interval.contains(t) {
                return Some(i);
            }
        }
        // t == duration exactly.
        Some(self.events.len() - 1)
    }

    /// Check the tiling and unit-latent invariants.
    pub fn validate(&self, min_event_length: f64) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidVideo(format!("{}: {m}", self.id)));
        if self.events.is_empty() {
            return bad("no events".into());
        }
        if self.events[0].interval.start != 0.0 {
            return bad("first event must start at 0".into());
        }
        if self.events.last().unwrap().interval.end != self.duration {
            return bad("last event must end at duration".into());
        }
        let mut prev_end = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            if !ev.interval.is_well_formed() {
                return bad(format!("event {i} interval is malformed"));
            }
            if i > 0 && ev.interval.start != prev_end {
                return bad(format!("event {i} does not share a boundary with its predecessor"));
            }
            if ev.interval.length() < min_event_length - 1e-9 {
                return bad(format!("event {i} shorter than min_event_length"));
            }
            let n = l2_norm(&ev.latent);
            if (n - 1.0).abs() > 1e-9 {
                return bad(format!("event {i} latent norm {n} is not 1"));
            }
            prev_end = ev.interval.end;
        }
        Ok(())
    }
}

/// Cosine of the angle between two vectors.
///
/// Exactly symmetric in its arguments. Clamped to `[-1, 1]` against
/// floating-point spill.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch { got: b.len(), expected: a.len() });
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn unit_sphere_sample<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = l2_norm(&v);
        if n > 1e-12 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Generate a corpus. Deterministic for a fixed seed; every video satisfies
/// the tiling invariants.
pub fn gen_corpus(config: &WorldConfig) -> Result<Vec<SyntheticVideo>, WorldError> {
    config.validate()?;
    let (dmin, dmax) = config.duration_range;
    let (emin, emax) = config.events_per_video;
    let mut corpus = Vec::with_capacity(config.videos);
    for idx in 0..config.videos {
        let mut rng = substream(config.seed, "video", &[idx as u64]);
        let duration = if dmin == dmax { dmin } else { rng.gen_range(dmin..=dmax) };
        let count = rng.gen_range(emin..=emax);
        // Uniform partition of the slack over the simplex (normalized
        // exponentials), on top of the guaranteed minimum length.
        let slack = duration - count as f64 * config.min_event_length;
        let draws: Vec<f64> = (0..count).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = draws.iter().sum();
        let mut events = Vec::with_capacity(count);
        let mut start = 0.0;
        for (i, d) in draws.iter().enumerate() {
            let len = config.min_event_length + slack * d / total;
            let end = if i + 1 == count { duration } else { start + len };
            let latent = unit_sphere_sample(&mut rng, config.latent_dim);
            events.push(LatentEvent { interval: Moment::new(start, end), latent });
            start = end;
        }
        let video = SyntheticVideo {
            id: format!("w{:016x}-{idx:05}", config.seed),
            duration,
            events,
        };
        video.validate(config.min_event_length)?;
        corpus.push(video);
    }
    Ok(corpus)
}

/// Embedding of the frame at time `t`: the owning event's latent plus keyed
/// isotropic Gaussian noise, renormalized.
///
/// `frame_noise` scales the expected norm of the noise vector (per-coordinate
/// std `frame_noise / sqrt(d)`), keeping the perturbation size independent of
/// the latent dimension. The noise substream is keyed by `(video.id, t
/// quantized to the [`FRAME_KEY_RATE`] grid)`, so repeated calls agree and
/// the function is pure given the corpus seed. With `frame_noise == 0` the
/// event latent is returned exactly.
pub fn frame_embedding(video: &SyntheticVideo, t: f64, frame_noise: f64) -> Result<Vec<f64>, EmbedError> {
    let idx = video
        .event_index_at(t)
        .ok_or(EmbedError::TimeOutOfRange { t, duration: video.duration })?;
    let latent = &video.events[idx].latent;
    if frame_noise == 0.0 {
        return Ok(latent.clone());
    }
    let key = (t * FRAME_KEY_RATE).round() as i64 as u64;
    let mut rng = substream(fnv1a64(video.id.as_bytes()), "frame", &[key]);
    let coord_std = frame_noise / (latent.len() as f64).sqrt();
    let noisy: Vec<f64> = latent
        .iter()
        .map(|x| x + coord_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = l2_norm(&noisy);
    if n < 1e-12 {
        // Measure-zero fallback; keep the oracle total.
        return Ok(latent.clone());
    }
    Ok(noisy.iter().map(|x| x / n).collect())
}

/// The synthetic similarity oracle for one video.
pub struct SyntheticEmbedder<'a> {
    video: &'a SyntheticVideo,
    frame_noise: f64,
}

impl<'a> SyntheticEmbedder<'a> {
    pub fn new(video: &'a SyntheticVideo, frame_noise: f64) -> Self {
        SyntheticEmbedder { video, frame_noise }
    }
}

impl Embedder for SyntheticEmbedder<'_> {
    fn resolve_query(&self, query_text: &str) -> Option<Vec<f64>> {
        let dim = self.video.events.first().map(|e| e.latent.len())?;
        parse_latent(query_text).filter(|v| v.len() == dim)
    }

    fn similarity(&self, query_latent: &[f64], t: f64) -> Result<f64, EmbedError> {
        let frame = frame_embedding(self.video, t, self.frame_noise)?;
        cosine_similarity(query_latent, &frame)
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    latent_dim: usize,
    seed: u64,
    videos: usize,
}

/// Write a corpus as a versioned record-per-line file: a header record, then
/// one JSON video per line with full-precision floats.
pub fn write_corpus<W: Write>(mut w: W, corpus: &[SyntheticVideo], config: &WorldConfig) -> Result<(), WorldError> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        latent_dim: config.latent_dim,
        seed: config.seed,
        videos: corpus.len(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for v in corpus {
        writeln!(w, "{}", serde_json::to_string(v)?)?;
    }
    Ok(())
}

/// Read a corpus written by [`write_corpus`], validating the header.
pub fn read_corpus<R: BufRead>(r: R) -> Result<Vec<SyntheticVideo>, WorldError> {
    let mut lines = r.lines();
    let head_line = lines
        .next()
        .ok_or_else(|| WorldError::CorruptCorpus("empty file".into()))??;
    let header: CorpusHeader = serde_json::from_str(&head_line)
        .map_err(|e| WorldError::CorruptCorpus(format!("bad header: {e}")))?;
    if header.format != CORPUS_FORMAT {
        return Err(WorldError::CorruptCorpus(format!("unknown format {:?}", header.format)));
    }
    if header.version != CORPUS_VERSION {
        return Err(WorldError::CorruptCorpus(format!("unsupported version {}", header.version)));
    }
    let mut corpus = Vec::with_capacity(header.videos);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let video: SyntheticVideo = serde_json::from_str(&line)
            .map_err(|e| WorldError::CorruptCorpus(format!("bad record: {e}")))?;
        // Structural invariants only; the configured minimum event length
        // is not part of the file format.
        video
            .validate(0.0)
            .map_err(|e| WorldError::CorruptCorpus(e.to_string()))?;
        if video.events.iter().any(|ev| ev.latent.len() != header.latent_dim) {
            return Err(WorldError::CorruptCorpus(format!(
                "{}: latent dimension does not match header ({})",
                video.id, header.latent_dim
            )));
        }
        corpus.push(video);
    }
    if corpus.len() != header.videos {
        return Err(WorldError::CorruptCorpus(format!(
            "header promised {} videos, found {}",
            header.videos,
            corpus.len()
        )));
    }
    Ok(corpus)
}

pub fn save_corpus(path: &Path, corpus: &[SyntheticVideo], config: &WorldConfig) -> Result<(), WorldError> {
    let file = std::fs::File::create(path)?;
    write_corpus(std::io::BufWriter::new(file), corpus, config)
}

pub fn load_corpus(path: &Path) -> Result<Vec<SyntheticVideo>, WorldError> {
    let file = std::fs::File::open(path)?;
    read_corpus(std::io::BufReader::new(file))
}
