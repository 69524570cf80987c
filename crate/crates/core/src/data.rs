//! Feature files, the dataset manifest, prediction files, and the
//! synthetic dataset generator.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Map, Value};

use crate::config::{parse_value, KeyValues};
use crate::error::{Error, Result};
use crate::eval::{Detection, GroundTruth};
use crate::numerics::checkpoint::Reader;
use crate::numerics::Tensor;
use crate::vss::ActionAnnotation;

pub const FEATURE_MAGIC: &[u8; 4] = b"VSGF";
pub const FEATURE_VERSION: u32 = 1;

/// A `T x C` snippet feature sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub snippet_duration: f64,
    pub features: Tensor,
}

pub fn encode_features(file: &FeatureFile) -> Vec<u8> {
    let f = &file.features;
    let mut out = Vec::with_capacity(24 + 4 * f.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(f.cols() as u32).to_le_bytes());
    out.extend_from_slice(&file.snippet_duration.to_le_bytes());
    for v in f.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureFile> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != FEATURE_MAGIC {
        return Reader::new(bytes).fail("not a feature file (bad magic)");
    }
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return r.fail(format!("unsupported feature file version {version}"));
    }
    let t = r.u32("snippet count")? as usize;
    let c = r.u32("channel count")? as usize;
    if t == 0 || c == 0 {
        return r.fail(format!("degenerate feature shape {t} x {c}"));
    }
    let snippet_duration = r.f64("snippet duration")?;
    if !(snippet_duration > 0.0 && snippet_duration.is_finite()) {
        return r.fail(format!("snippet duration must be positive, got {snippet_duration}"));
    }
    let mut data = Vec::with_capacity(t * c);
    for _ in 0..t * c {
        let at = r.offset();
        let v = r.f32("feature values")?;
        if !v.is_finite() {
            return Err(Error::Format { offset: at, message: "non-finite feature value".into() });
        }
        data.push(v as f64);
    }
    if !r.finished() {
        return r.fail("trailing bytes after feature payload");
    }
    Ok(FeatureFile { snippet_duration, features: Tensor::new(vec![t, c], data)? })
}

pub fn write_features(file: &FeatureFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_features(file))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureFile> {
    decode_features(&std::fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub label: String,
    /// Seconds.
    pub segment: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEntry {
    pub duration: f64,
    pub snippet_duration: f64,
    /// As written in the manifest; relative paths resolve against its directory.
    pub features: String,
    pub subset: String,
    pub annotations: Vec<Annotation>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    pub classes: Vec<String>,
    pub videos: BTreeMap<String, VideoEntry>,
    pub base_dir: PathBuf,
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::schema(path, format!("missing field {key:?}")))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| Error::schema(path, "expected a finite number"))
}

fn string<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::schema(path, "expected a string"))
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::schema(path, "expected an object"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::schema(path, "expected an array"))
}

fn segment(v: &Value, path: &str) -> Result<(f64, f64)> {
    let a = array(v, path)?;
    if a.len() != 2 {
        return Err(Error::schema(path, format!("expected [start, end], got {} values", a.len())));
    }
    let (s, e) = (number(&a[0], &format!("{path}[0]"))?, number(&a[1], &format!("{path}[1]"))?);
    if !(e > s) {
        return Err(Error::schema(path, format!("segment end {e} must exceed start {s}")));
    }
    Ok((s, e))
}

impl Manifest {
    pub fn from_json(value: &Value, base_dir: PathBuf) -> Result<Self> {
        let root = object(value, "$")?;
        let classes: Vec<String> = array(field(root, "classes", "$")?, "$.classes")?
            .iter()
            .enumerate()
            .map(|(i, c)| string(c, &format!("$.classes[{i}]")).map(str::to_string))
            .collect::<Result<_>>()?;
        for (i, c) in classes.iter().enumerate() {
            if classes[..i].contains(c) {
                return Err(Error::schema(format!("$.classes[{i}]"), format!("duplicate class {c:?}")));
            }
        }
        let mut videos = BTreeMap::new();
        for (id, v) in object(field(root, "videos", "$")?, "$.videos")? {
            let p = format!("$.videos.{id}");
            let o = object(v, &p)?;
            let duration = number(field(o, "duration", &p)?, &format!("{p}.duration"))?;
            let snippet_duration = number(field(o, "snippet_duration", &p)?, &format!("{p}.snippet_duration"))?;
            if duration < 0.0 {
                return Err(Error::schema(format!("{p}.duration"), "duration must be non-negative"));
            }
            if snippet_duration <= 0.0 {
                return Err(Error::schema(format!("{p}.snippet_duration"), "snippet duration must be positive"));
            }
            let features = string(field(o, "features", &p)?, &format!("{p}.features"))?.to_string();
            let subset = string(field(o, "subset", &p)?, &format!("{p}.subset"))?.to_string();
            let mut annotations = Vec::new();
            for (i, a) in array(field(o, "annotations", &p)?, &format!("{p}.annotations"))?.iter().enumerate() {
                let ap = format!("{p}.annotations[{i}]");
                let ao = object(a, &ap)?;
                let label = string(field(ao, "label", &ap)?, &format!("{ap}.label"))?.to_string();
                if !classes.contains(&label) {
                    return Err(Error::schema(format!("{ap}.label"), format!("label {label:?} is not a declared class")));
                }
                let seg = segment(field(ao, "segment", &ap)?, &format!("{ap}.segment"))?;
                if seg.0 < 0.0 || seg.1 > duration + 1e-6 {
                    return Err(Error::schema(format!("{ap}.segment"), format!("segment {seg:?} outside [0, {duration}]")));
                }
                annotations.push(Annotation { label, segment: seg });
            }
            videos.insert(id.clone(), VideoEntry { duration, snippet_duration, features, subset, annotations });
        }
        Ok(Self { classes, videos, base_dir })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let value: Value = serde_json::from_str(&text)?;
        Self::from_json(&value, path.parent().map(Path::to_path_buf).unwrap_or_default())
    }

    pub fn to_json(&self) -> Value {
        let videos: Map<String, Value> = self
            .videos
            .iter()
            .map(|(id, v)| {
                let anns: Vec<Value> =
                    v.annotations.iter().map(|a| json!({"label": a.label, "segment": [a.segment.0, a.segment.1]})).collect();
                (
                    id.clone(),
                    json!({
                        "duration": v.duration,
                        "snippet_duration": v.snippet_duration,
                        "features": v.features,
                        "subset": v.subset,
                        "annotations": anns,
                    }),
                )
            })
            .collect();
        json!({"classes": self.classes, "videos": videos})
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json())?)?;
        Ok(())
    }

    pub fn feature_path(&self, video: &VideoEntry) -> PathBuf {
        let p = Path::new(&video.features);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Videos of `subset`, or all when it is `None`.
    pub fn select<'a>(&'a self, subset: Option<&'a str>) -> impl Iterator<Item = (&'a String, &'a VideoEntry)> + 'a {
        self.videos.iter().filter(move |(_, v)| subset.map_or(true, |s| v.subset == s))
    }

    pub fn ground_truths(&self, subset: Option<&str>) -> Vec<GroundTruth> {
        self.select(subset)
            .flat_map(|(id, v)| {
                v.annotations
                    .iter()
                    .map(move |a| GroundTruth { video: id.clone(), start: a.segment.0, end: a.segment.1, label: a.label.clone() })
            })
            .collect()
    }
}

/// A manifest video with its features loaded and annotations in snippets.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedVideo {
    pub id: String,
    pub snippet_duration: f64,
    pub features: Tensor,
    pub actions: Vec<ActionAnnotation>,
}

impl Manifest {
    /// Reads the feature files of `subset` (all when `None`) in id order.
    pub fn load_videos(&self, subset: Option<&str>) -> Result<Vec<LoadedVideo>> {
        let mut out = Vec::new();
        let mut channels = None;
        for (id, v) in self.select(subset) {
            let path = self.feature_path(v);
            let file = read_features(&path).map_err(|e| match e {
                Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
                other => other,
            })?;
            if (file.snippet_duration - v.snippet_duration).abs() > 1e-9 * v.snippet_duration.max(1.0) {
                return Err(Error::schema(
                    format!("$.videos.{id}.snippet_duration"),
                    format!("manifest says {} but the feature file says {}", v.snippet_duration, file.snippet_duration),
                ));
            }
            let c = file.features.cols();
            if *channels.get_or_insert(c) != c {
                return Err(Error::schema(format!("$.videos.{id}.features"), format!("{c} channels, other videos have {}", channels.unwrap())));
            }
            let actions = v
                .annotations
                .iter()
                .map(|a| {
                    let label = self.class_index(&a.label).expect("validated on read");
                    ActionAnnotation::new(a.segment.0 / v.snippet_duration, a.segment.1 / v.snippet_duration, label)
                })
                .collect();
            out.push(LoadedVideo { id: id.clone(), snippet_duration: v.snippet_duration, features: file.features, actions });
        }
        Ok(out)
    }
}

/// Detections per video, in seconds.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PredictionSet {
    pub results: BTreeMap<String, Vec<Detection>>,
}

impl PredictionSet {
    pub fn detections(&self) -> Vec<Detection> {
        self.results.values().flatten().cloned().collect()
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let root = object(value, "$")?;
        let mut results = BTreeMap::new();
        for (id, list) in object(field(root, "results", "$")?, "$.results")? {
            let p = format!("$.results.{id}");
            let mut dets = Vec::new();
            for (i, d) in array(list, &p)?.iter().enumerate() {
                let dp = format!("{p}[{i}]");
                let o = object(d, &dp)?;
                let (start, end) = segment(field(o, "segment", &dp)?, &format!("{dp}.segment"))?;
                let score = number(field(o, "score", &dp)?, &format!("{dp}.score"))?;
                let label = string(field(o, "label", &dp)?, &format!("{dp}.label"))?.to_string();
                dets.push(Detection { video: id.clone(), start, end, score, label });
            }
            results.insert(id.clone(), dets);
        }
        Ok(Self { results })
    }

    /// JSON form; `config` is echoed alongside the results when given.
    pub fn to_json(&self, config: Option<Value>) -> Value {
        let results: Map<String, Value> = self
            .results
            .iter()
            .map(|(id, ds)| {
                let list: Vec<Value> =
                    ds.iter().map(|d| json!({"segment": [d.start, d.end], "score": d.score, "label": d.label})).collect();
                (id.clone(), Value::Array(list))
            })
            .collect();
        let mut root = Map::new();
        root.insert("results".into(), Value::Object(results));
        if let Some(c) = config {
            root.insert("config".into(), c);
        }
        Value::Object(root)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_json(&value)
    }

    pub fn write(&self, path: impl AsRef<Path>, config: Option<Value>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json(config))?)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub train_videos: usize,
    pub val_videos: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub channels: usize,
    pub classes: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    pub min_action_len: usize,
    pub max_action_len: usize,
    /// Standard deviation of the per-channel Gaussian noise.
    pub noise: f64,
    pub snippet_duration: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_videos: 200,
            val_videos: 50,
            min_len: 96,
            max_len: 256,
            channels: 32,
            classes: 5,
            min_actions: 1,
            max_actions: 3,
            min_action_len: 4,
            max_action_len: 64,
            noise: 0.1,
            snippet_duration: 1.0,
            seed: 0,
        }
    }
}

/// Minimum number of background snippets between consecutive actions.
pub const ACTION_SPACING: usize = 2;

impl SyntheticSpec {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut s = Self::default();
        for (k, v) in &kv.entries {
            match k.as_str() {
                "train_videos" => s.train_videos = parse_value(k, v)?,
                "val_videos" => s.val_videos = parse_value(k, v)?,
                "min_len" => s.min_len = parse_value(k, v)?,
                "max_len" => s.max_len = parse_value(k, v)?,
                "channels" => s.channels = parse_value(k, v)?,
                "classes" => s.classes = parse_value(k, v)?,
                "min_actions" => s.min_actions = parse_value(k, v)?,
                "max_actions" => s.max_actions = parse_value(k, v)?,
                "min_action_len" => s.min_action_len = parse_value(k, v)?,
                "max_action_len" => s.max_action_len = parse_value(k, v)?,
                "noise" => s.noise = parse_value(k, v)?,
                "snippet_duration" => s.snippet_duration = parse_value(k, v)?,
                "seed" => s.seed = parse_value(k, v)?,
                other => return Err(Error::config(format!("unknown synthetic spec key {other:?}"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("video length range must be non-empty and positive");
        }
        if self.min_action_len == 0 || self.min_action_len > self.max_action_len || self.max_action_len > self.max_len {
            return bad("action length range must be non-empty and fit within the video length range");
        }
        if self.min_actions > self.max_actions || self.channels == 0 || self.classes == 0 {
            return bad("action count range, channels and classes must be valid");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.snippet_duration > 0.0) {
            return bad("noise must be non-negative and snippet_duration positive");
        }
        Ok(())
    }
}

/// An action in snippet coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticAction {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticVideo {
    pub id: String,
    pub subset: String,
    pub features: Tensor,
    pub actions: Vec<SyntheticAction>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub class_names: Vec<String>,
    /// Unit-norm class prototypes.
    pub prototypes: Vec<Vec<f64>>,
    pub videos: Vec<SyntheticVideo>,
}

const PLACEMENT_ATTEMPTS: usize = 100;

fn place_actions(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, len: usize) -> Result<Vec<(usize, usize)>> {
    let count = rng.gen_range(spec.min_actions..=spec.max_actions);
    for _ in 0..PLACEMENT_ATTEMPTS {
        let lens: Vec<usize> = (0..count).map(|_| rng.gen_range(spec.min_action_len..=spec.max_action_len)).collect();
        let needed = lens.iter().sum::<usize>() + ACTION_SPACING * count.saturating_sub(1);
        if needed > len {
            continue;
        }
        // Distribute the slack over the count + 1 gaps around the actions.
        let slack = len - needed;
        let mut cuts: Vec<usize> = (0..count).map(|_| rng.gen_range(0..=slack)).collect();
        cuts.sort_unstable();
        let mut out = Vec::with_capacity(count);
        let mut pos = 0;
        let mut prev = 0;
        for (i, l) in lens.iter().enumerate() {
            pos += cuts[i] - prev;
            prev = cuts[i];
            out.push((pos, pos + l));
            pos += l + ACTION_SPACING;
        }
        return Ok(out);
    }
    Err(Error::Generation(format!(
        "cannot pack {count} actions of {}..{} snippets into {len} snippets",
        spec.min_action_len, spec.max_action_len
    )))
}

/// A dataset determined entirely by `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("valid");
    let prototypes: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.channels).map(|_| unit.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let class_names = (0..spec.classes).map(|k| format!("class_{k}")).collect();
    let total = spec.train_videos + spec.val_videos;
    let mut videos = Vec::with_capacity(total);
    for i in 0..total {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let spans = place_actions(&mut rng, spec, len)?;
        let mut labels: Vec<usize> = (0..spans.len()).map(|_| rng.gen_range(0..spec.classes)).collect();
        labels.shuffle(&mut rng);
        let mut data = vec![0.0; len * spec.channels];
        for (span, &label) in spans.iter().zip(&labels) {
            for t in span.0..span.1 {
                data[t * spec.channels..(t + 1) * spec.channels].copy_from_slice(&prototypes[label]);
            }
        }
        if spec.noise > 0.0 {
            for v in &mut data {
                *v += spec.noise * unit.sample(&mut rng);
            }
        }
        let actions = spans.iter().zip(&labels).map(|(s, &label)| SyntheticAction { start: s.0, end: s.1, label }).collect();
        let (subset, id) = if i < spec.train_videos {
            ("train", format!("train_{i:04}"))
        } else {
            ("val", format!("val_{:04}", i - spec.train_videos))
        };
        videos.push(SyntheticVideo {
            id,
            subset: subset.into(),
            features: Tensor::new(vec![len, spec.channels], data)?,
            actions,
        });
    }
    Ok(SyntheticDataset { spec: spec.clone(), class_names, prototypes, videos })
}

impl SyntheticDataset {
    /// Manifest referencing `features/<id>.vsgf` relative to `base_dir`.
    pub fn manifest(&self, base_dir: PathBuf) -> Manifest {
        let sd = self.spec.snippet_duration;
        let videos = self
            .videos
            .iter()
            .map(|v| {
                let annotations = v
                    .actions
                    .iter()
                    .map(|a| Annotation { label: self.class_names[a.label].clone(), segment: (a.start as f64 * sd, a.end as f64 * sd) })
                    .collect();
                let entry = VideoEntry {
                    duration: v.features.rows() as f64 * sd,
                    snippet_duration: sd,
                    features: format!("features/{}.vsgf", v.id),
                    subset: v.subset.clone(),
                    annotations,
                };
                (v.id.clone(), entry)
            })
            .collect();
        Manifest { classes: self.class_names.clone(), videos, base_dir }
    }

    /// Writes feature files and `manifest.json` under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("features"))?;
        for v in &self.videos {
            let file = FeatureFile { snippet_duration: self.spec.snippet_duration, features: v.features.clone() };
            write_features(&file, dir.join("features").join(format!("{}.vsgf", v.id)))?;
        }
        let path = dir.join("manifest.json");
        self.manifest(dir.to_path_buf()).write(&path)?;
        Ok(path)
    }
}
