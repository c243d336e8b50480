//! Dataset ingestion: image loading and normalization, plus representative-
//! frame extraction for video-derived expression sequences.
//!
//! Frame selection scores consecutive-frame differences after Gaussian
//! smoothing, then sweeps a maximum filter of decreasing size over the
//! scores: at each window size, an index survives only if it is the maximum
//! of its centered window, so changes clustered in time are represented by a
//! single frame until the window shrinks.

use crate::dataset::NETWORK_INPUT_HW;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use std::path::Path;

/// Ordered grayscale frames of one recording session.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub session: String,
    /// Rank-3 `[1, H, W]` tensors, uniform H and W.
    pub frames: Vec<Tensor<f32>>,
    /// Source frame numbers, parallel to `frames`.
    pub frame_ids: Vec<usize>,
}

impl FrameSequence {
    pub fn new(session: String, frames: Vec<Tensor<f32>>, frame_ids: Vec<usize>) -> Result<Self> {
        if frames.len() != frame_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: frames.len(),
                got: frame_ids.len(),
            });
        }
        if let Some(first) = frames.first() {
            let (_, h, w) = first.chw()?;
            for f in &frames[1..] {
                let (_, fh, fw) = f.chw()?;
                if fh != h || fw != w {
                    return Err(Error::SpatialMismatch { h_a: h, w_a: w, h_b: fh, w_b: fw });
                }
            }
        }
        Ok(FrameSequence { session, frames, frame_ids })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum DiffMetric {
    #[default]
    MeanAbsolute,
    MeanSquared,
}

/// Loads an image as grayscale `[1, H, W]` scaled to `[0, 1]`. Color inputs
/// are converted with luma weights 0.299/0.587/0.114.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::Unsupported(u) => Error::UnsupportedFormat(u.to_string()),
        other => Error::UnreadableFile {
            path: path.display().to_string(),
            detail: other.to_string(),
        },
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data: Vec<f32> = rgb
        .pixels()
        .map(|p| {
            (0.299 * p.0[0] as f32 + 0.587 * p.0[1] as f32 + 0.114 * p.0[2] as f32) / 255.0
        })
        .collect();
    Tensor::from_vec(Shape::new(vec![1, h as usize, w as usize])?, data)
}

/// Bilinear resize of a `[1, H, W]` tensor; sampling uses half-pixel centers
/// with edge clamping, so a same-size resize is the identity.
pub fn resize_bilinear(t: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (_, h, w) = t.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::InvalidShape(format!("cannot resize degenerate {h}x{w} input")));
    }
    let data = t.as_slice();
    let scale_y = h as f32 / out_h as f32;
    let scale_x = w as f32 / out_w as f32;
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = ((oy as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f32;
        for ox in 0..out_w {
            let sx = ((ox as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f32;
            let top = data[y0 * w + x0] * (1.0 - fx) + data[y0 * w + x1] * fx;
            let bot = data[y1 * w + x0] * (1.0 - fx) + data[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Tensor::from_vec(Shape::new(vec![1, out_h, out_w])?, out)
}

/// Resizes to the network input resolution.
pub fn resize_to_input(t: &Tensor<f32>) -> Result<Tensor<f32>> {
    resize_bilinear(t, NETWORK_INPUT_HW, NETWORK_INPUT_HW)
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i as f32).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    kernel
}

fn mirror(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = idx;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * n - 2 - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Separable Gaussian blur, kernel radius `ceil(3*sigma)`, kernel normalized
/// to sum 1, mirrored borders.
pub fn gaussian_smooth(frame: &Tensor<f32>, sigma: f32) -> Result<Tensor<f32>> {
    if sigma <= 0.0 {
        return Err(Error::InvalidConfig(format!("sigma must be > 0, got {sigma}")));
    }
    let (_, h, w) = frame.chw()?;
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let data = frame.as_slice();

    let mut horiz = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = mirror(x as isize + ki as isize - radius, w);
                acc += kv * data[y * w + sx];
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = mirror(y as isize + ki as isize - radius, h);
                acc += kv * horiz[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Tensor::from_vec(frame.shape().clone(), out)
}

/// Difference scores between smoothed consecutive frames; `scores[t-1]`
/// covers the transition from frame `t-1` to frame `t`.
pub fn frame_differences(
    seq: &FrameSequence,
    sigma: f32,
    metric: DiffMetric,
) -> Result<Vec<f32>> {
    if seq.frames.len() < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: seq.frames.len() });
    }
    let smoothed: Vec<Tensor<f32>> = seq
        .frames
        .iter()
        .map(|f| gaussian_smooth(f, sigma))
        .collect::<Result<_>>()?;
    let mut scores = Vec::with_capacity(smoothed.len() - 1);
    for pair in smoothed.windows(2) {
        let (a, b) = (pair[0].as_slice(), pair[1].as_slice());
        if a.len() != b.len() {
            let (_, h_a, w_a) = pair[0].chw()?;
            let (_, h_b, w_b) = pair[1].chw()?;
            return Err(Error::SpatialMismatch { h_a, w_a, h_b, w_b });
        }
        let sum: f32 = a
            .iter()
            .zip(b)
            .map(|(&x, &y)| match metric {
                DiffMetric::MeanAbsolute => (x - y).abs(),
                DiffMetric::MeanSquared => (x - y) * (x - y),
            })
            .sum();
        scores.push(sum / a.len() as f32);
    }
    Ok(scores)
}

/// The shrinking-maximum-filter window schedule: the full score length,
/// halved each round down to 3, then a final size-1 round that admits every
/// remaining index, guaranteeing termination.
pub fn window_schedule(n_scores: usize) -> Vec<usize> {
    let mut ws = Vec::new();
    let mut w = n_scores.max(3);
    loop {
        ws.push(w);
        if w <= 3 {
            break;
        }
        w = (w / 2).max(3);
    }
    ws.push(1);
    ws
}

/// Indices (into the score vector) selected by one maximum-filter round:
/// index `t` survives iff `scores[t]` is the maximum over the window of size
/// `w` centered at `t` (clipped at the ends), ties going to the lowest index.
pub fn windowed_maxima(scores: &[f32], window: usize) -> Vec<usize> {
    let n = scores.len();
    let radius = window / 2;
    (0..n)
        .filter(|&t| {
            let lo = t.saturating_sub(radius);
            let hi = (t + radius).min(n - 1);
            let best = (lo..=hi)
                .min_by(|&a, &b| {
                    scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
                })
                .expect("non-empty window");
            best == t
        })
        .collect()
}

/// Selects `count` score indices by sweeping [`windowed_maxima`] over the
/// shrinking window schedule, accumulating distinct survivors. A round that
/// overshoots is truncated to the highest-scoring candidates.
pub fn select_from_scores(scores: &[f32], count: usize) -> Result<Vec<usize>> {
    if scores.len() < count {
        return Err(Error::TooFewFrames { needed: count + 1, got: scores.len() + 1 });
    }
    let mut selected: Vec<usize> = Vec::with_capacity(count);
    for w in window_schedule(scores.len()) {
        if selected.len() == count {
            break;
        }
        let mut fresh: Vec<usize> = windowed_maxima(scores, w)
            .into_iter()
            .filter(|t| !selected.contains(t))
            .collect();
        let room = count - selected.len();
        if fresh.len() > room {
            // Keep the strongest changes of the final batch.
            fresh.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            fresh.truncate(room);
        }
        selected.extend(fresh);
    }
    debug_assert_eq!(selected.len(), count, "size-1 round admits every index");
    selected.sort_unstable();
    Ok(selected)
}

/// Representative frame indices (positions in `seq.frames`, each >= 1 since
/// scores describe transitions into a frame), sorted ascending.
pub fn select_representative_frames(
    seq: &FrameSequence,
    sigma: f32,
    metric: DiffMetric,
    count: usize,
) -> Result<Vec<usize>> {
    if seq.frames.len() < count + 1 {
        return Err(Error::TooFewFrames { needed: count + 1, got: seq.frames.len() });
    }
    let scores = frame_differences(seq, sigma, metric)?;
    Ok(select_from_scores(&scores, count)?.into_iter().map(|t| t + 1).collect())
}

pub struct ExtractionOutcome {
    /// Frames kept, resized to the network input; 18 per session under the
    /// default settings (20 selected minus the 2 earliest, which show the
    /// neutral face).
    pub images: Vec<Tensor<f32>>,
    pub kept_indices: Vec<usize>,
    pub discarded_indices: Vec<usize>,
}

pub fn extract_mmi_style(
    seq: &FrameSequence,
    sigma: f32,
    metric: DiffMetric,
    count: usize,
) -> Result<ExtractionOutcome> {
    let selected = select_representative_frames(seq, sigma, metric, count)?;
    let discard = 2.min(selected.len());
    let (discarded, kept) = selected.split_at(discard);
    let images = kept
        .iter()
        .map(|&i| resize_to_input(&seq.frames[i]))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExtractionOutcome {
        images,
        kept_indices: kept.to_vec(),
        discarded_indices: discarded.to_vec(),
    })
}

/// Reads the image files of `dir` (sorted by file name) as one session.
pub fn load_frame_directory(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let session = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "session".into());
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    paths.sort();
    let frames = paths.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    let frame_ids = (0..frames.len()).collect();
    FrameSequence::new(session, frames, frame_ids)
}

pub(crate) fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg" | "pgm")
    )
}
