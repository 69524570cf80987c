//! Video self-stitching: cutting sequences into short clips, up-scaling a
//! clip, and stitching original and up-scaled copies around a zero gap.
//!
//! All indices are zero-based snippet positions; spans are half-open.

use crate::error::{Error, Result};
use crate::numerics::{linear_interpolate, Tensor};

/// Half-open snippet interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// A labelled action in snippet coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionAnnotation {
    pub start: f64,
    pub end: f64,
    pub label: usize,
}

impl ActionAnnotation {
    pub fn new(start: f64, end: f64, label: usize) -> Self {
        Self { start, end, label }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Which part of an input sequence a position falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    ClipO,
    Gap,
    ClipU,
    /// A plain, un-stitched sequence.
    Unpartitioned,
    /// Zero fill after the valid part of an un-stitched sequence.
    Padding,
}

impl Region {
    /// Gap and padding hold no video content.
    pub fn is_content(self) -> bool {
        !matches!(self, Region::Gap | Region::Padding)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::ClipO => "clip_o",
            Region::Gap => "gap",
            Region::ClipU => "clip_u",
            Region::Unpartitioned => "unpartitioned",
            Region::Padding => "padding",
        }
    }
}

/// Coordinate bookkeeping of one stitched sequence:
/// Clip O at `[0, M)`, gap at `[M, M+G)`, Clip U at `[M+G, L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipLayout {
    /// Snippet index of the clip's first frame in the source sequence.
    pub source_start: usize,
    pub original_len: usize,
    pub gap: usize,
    pub stitched_len: usize,
}

impl ClipLayout {
    pub fn clip_o_span(&self) -> Span {
        Span::new(0, self.original_len)
    }

    pub fn gap_span(&self) -> Span {
        Span::new(self.original_len, self.original_len + self.gap)
    }

    pub fn clip_u_span(&self) -> Span {
        Span::new(self.original_len + self.gap, self.stitched_len)
    }

    pub fn upscaled_len(&self) -> usize {
        self.stitched_len - self.gap - self.original_len
    }

    /// Stretch factor of Clip U relative to Clip O.
    pub fn scale(&self) -> f64 {
        self.upscaled_len() as f64 / self.original_len as f64
    }
}

/// Layout of any network input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Layout {
    Stitched(ClipLayout),
    /// An uncut sequence occupying `[0, valid_len)` of a length-`len` input.
    Unpartitioned { source_start: usize, valid_len: usize, len: usize },
}

impl Layout {
    pub fn len(&self) -> usize {
        match self {
            Layout::Stitched(c) => c.stitched_len,
            Layout::Unpartitioned { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_start(&self) -> usize {
        match self {
            Layout::Stitched(c) => c.source_start,
            Layout::Unpartitioned { source_start, .. } => *source_start,
        }
    }

    pub fn is_stitched(&self) -> bool {
        matches!(self, Layout::Stitched(_))
    }

    /// Region containing input coordinate `x`.
    pub fn region_at(&self, x: f64) -> Region {
        match self {
            Layout::Stitched(c) => {
                if x < c.original_len as f64 {
                    Region::ClipO
                } else if x < (c.original_len + c.gap) as f64 {
                    Region::Gap
                } else {
                    Region::ClipU
                }
            }
            Layout::Unpartitioned { valid_len, .. } => {
                if x < *valid_len as f64 {
                    Region::Unpartitioned
                } else {
                    Region::Padding
                }
            }
        }
    }

    /// Region tags of a map whose position `j` is centred at `(j + 0.5) * stride`.
    pub fn level_tags(&self, positions: usize, stride: f64) -> Vec<Region> {
        (0..positions).map(|j| self.region_at((j as f64 + 0.5) * stride)).collect()
    }
}

/// Result of cutting one sub-sequence. `clips[0]` is always the uncut sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipSet {
    pub clips: Vec<Span>,
    pub short_len: usize,
}

impl ClipSet {
    pub fn original(&self) -> Span {
        self.clips[0]
    }

    /// Clips no longer than the short-clip threshold; these get stitched.
    pub fn short_clips(&self) -> impl Iterator<Item = Span> + '_ {
        self.clips.iter().copied().filter(|c| c.len() <= self.short_len)
    }

    /// Whether the uncut sequence is long enough to be processed on its own.
    pub fn has_long_original(&self) -> bool {
        self.original().len() > self.short_len
    }
}

/// Largest clip length counted as short: `floor(gamma * L)`.
pub fn short_length(input_len: usize, gamma: f64) -> usize {
    (gamma * input_len as f64 + 1e-9).floor() as usize
}

/// Length-`window` sub-sequences with stride `window / 4`, plus a final
/// window ending at `total` so that every snippet is covered.
pub fn slide_windows(total: usize, window: usize) -> Vec<Span> {
    if total <= window {
        return vec![Span::new(0, total)];
    }
    let stride = (window / 4).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= total {
        out.push(Span::new(start, start + window));
        start += stride;
    }
    if out.last().map_or(true, |w| w.end < total) {
        out.push(Span::new(total - window, total));
    }
    out
}

/// Training-time cutting of a sub-sequence of length `len <= L`.
///
/// Short clips extend each short action to the threshold length, absorb
/// later actions that fit, and pull a boundary inward whenever it would
/// split an action. Actions at least as long as the threshold seed no clip.
pub fn cut_training(len: usize, actions: &[ActionAnnotation], input_len: usize, gamma: f64) -> Result<ClipSet> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("short factor must lie in (0, 1), got {gamma}")));
    }
    if len > input_len {
        return Err(Error::argument(format!("sub-sequence of {len} snippets exceeds input length {input_len}")));
    }
    let short = short_length(input_len, gamma) as i64;
    let mut clips = vec![Span::new(0, len)];
    if len as i64 <= short {
        return Ok(ClipSet { clips, short_len: short as usize });
    }
    let t = len as i64;
    let mut acts: Vec<(i64, i64)> = actions
        .iter()
        .map(|a| ((a.start.floor() as i64).clamp(0, t), (a.end.ceil() as i64).clamp(0, t)))
        .filter(|(s, e)| e > s)
        .collect();
    acts.sort();

    let mut emit = |s: i64, e: i64| {
        if e - s >= 2 {
            clips.push(Span::new(s as usize, e as usize));
        }
    };
    let mut candidate: Option<(i64, i64)> = None;
    for (i, &(s, e)) in acts.iter().enumerate() {
        if let Some((bs, be)) = candidate {
            if e <= be {
                continue;
            }
            // a straddling action truncates the candidate; a disjoint one closes it
            emit(bs, if s < be { s } else { be });
            candidate = None;
        }
        if e - s < short {
            let extra = short - (e - s);
            let left = extra / 2;
            let (mut bs, mut be) = (s - left, e + (extra - left));
            if bs < 0 {
                be -= bs;
                bs = 0;
            }
            if be > t {
                bs = (bs - (be - t)).max(0);
                be = t;
            }
            for &(ps, pe) in &acts[..i] {
                if ps < bs && pe > bs {
                    bs = pe;
                }
            }
            candidate = Some((bs, be));
        }
    }
    if let Some((bs, be)) = candidate {
        emit(bs, be);
    }
    Ok(ClipSet { clips, short_len: short as usize })
}

/// Inference-time cutting: consecutive threshold-length clips plus the uncut sequence.
pub fn cut_inference(len: usize, input_len: usize, gamma: f64) -> Result<ClipSet> {
    if len == 0 {
        return Err(Error::argument("cannot cut an empty sequence"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("short factor must lie in (0, 1), got {gamma}")));
    }
    let short = short_length(input_len, gamma);
    let mut clips = vec![Span::new(0, len)];
    if len > short {
        let mut start = 0;
        while start < len {
            let end = (start + short).min(len);
            if end - start >= 2 {
                clips.push(Span::new(start, end));
            }
            start += short;
        }
    }
    Ok(ClipSet { clips, short_len: short })
}

/// Linearly stretches an `M x C` clip to `L - G - M` snippets.
pub fn upscale_clip(clip: &Tensor, input_len: usize, gap: usize) -> Result<Tensor> {
    let m = clip.rows();
    if m < 2 {
        return Err(Error::argument(format!("clip of {m} snippets cannot be interpolated")));
    }
    let target = input_len
        .checked_sub(gap + m)
        .filter(|&t| t >= m)
        .ok_or_else(|| Error::argument(format!("clip of {m} snippets does not fit twice in {input_len} with gap {gap}")))?;
    linear_interpolate(clip, target)
}

/// Concatenates `clip_o`, `gap` zero rows and `clip_u` along time.
pub fn stitch(clip_o: &Tensor, clip_u: &Tensor, gap: usize, input_len: usize, source_start: usize) -> Result<(Tensor, ClipLayout)> {
    let (m, c) = (clip_o.rows(), clip_o.cols());
    if clip_u.cols() != c {
        return Err(Error::argument(format!("clip channels differ: {c} vs {}", clip_u.cols())));
    }
    if m + gap + clip_u.rows() != input_len {
        return Err(Error::argument(format!(
            "stitched length {} + {gap} + {} does not equal {input_len}",
            m,
            clip_u.rows()
        )));
    }
    let mut data = Vec::with_capacity(input_len * c);
    data.extend_from_slice(clip_o.data());
    data.resize(data.len() + gap * c, 0.0);
    data.extend_from_slice(clip_u.data());
    let layout = ClipLayout { source_start, original_len: m, gap, stitched_len: input_len };
    Ok((Tensor::new(vec![input_len, c], data)?, layout))
}

/// Stitched input for snippets `clip` of `sequence`, whose first row sits at
/// `sequence_offset` in the source video.
pub fn stitch_clip(sequence: &Tensor, clip: Span, input_len: usize, gap: usize, sequence_offset: usize) -> Result<(Tensor, ClipLayout)> {
    if clip.end > sequence.rows() || clip.is_empty() {
        return Err(Error::argument(format!("clip {clip:?} outside sequence of {} snippets", sequence.rows())));
    }
    let original = sequence.slice_rows(clip.start, clip.end);
    let upscaled = upscale_clip(&original, input_len, gap)?;
    stitch(&original, &upscaled, gap, input_len, sequence_offset + clip.start)
}

/// Zero-pads an uncut sequence of at most `input_len` snippets.
pub fn pad_sequence(sequence: &Tensor, input_len: usize, source_start: usize) -> Result<(Tensor, Layout)> {
    let (t, c) = (sequence.rows(), sequence.cols());
    if t > input_len || t == 0 {
        return Err(Error::argument(format!("sequence of {t} snippets does not fit input length {input_len}")));
    }
    let mut data = sequence.data().to_vec();
    data.resize(input_len * c, 0.0);
    let layout = Layout::Unpartitioned { source_start, valid_len: t, len: input_len };
    Ok((Tensor::new(vec![input_len, c], data)?, layout))
}

/// An annotation in network-input coordinates, tagged with its region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedAnnotation {
    pub start: f64,
    pub end: f64,
    pub label: usize,
    pub region: Region,
}

/// Copies each source-coordinate action into Clip O and Clip U.
pub fn map_annotations(actions: &[ActionAnnotation], layout: &ClipLayout) -> Result<Vec<PlacedAnnotation>> {
    let s0 = layout.source_start as f64;
    let m = layout.original_len as f64;
    let u0 = (layout.original_len + layout.gap) as f64;
    let rho = layout.scale();
    let mut out = Vec::with_capacity(actions.len() * 2);
    for a in actions {
        if a.start < s0 || a.end > s0 + m || a.end <= a.start {
            return Err(Error::argument(format!(
                "action [{}, {}) is not inside clip [{}, {})",
                a.start,
                a.end,
                s0,
                s0 + m
            )));
        }
        let (rs, re) = (a.start - s0, a.end - s0);
        out.push(PlacedAnnotation { start: rs, end: re, label: a.label, region: Region::ClipO });
        out.push(PlacedAnnotation { start: u0 + rs * rho, end: u0 + re * rho, label: a.label, region: Region::ClipU });
    }
    Ok(out)
}

/// Places source-coordinate actions into an un-stitched input, clipping to its valid part.
pub fn place_unpartitioned(actions: &[ActionAnnotation], source_start: usize, valid_len: usize) -> Vec<PlacedAnnotation> {
    let s0 = source_start as f64;
    actions
        .iter()
        .filter_map(|a| {
            let s = (a.start - s0).max(0.0);
            let e = (a.end - s0).min(valid_len as f64);
            (e - s >= 1.0).then_some(PlacedAnnotation { start: s, end: e, label: a.label, region: Region::Unpartitioned })
        })
        .collect()
}
