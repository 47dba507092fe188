//! Seeded synthetic corpus: in-body-like and out-of-body-like frame-directory
//! videos with segment annotations, a manifest and an extracted frame store.
//!
//! In-body scenes are dark, red-dominant tissue lit from the top, with
//! specular highlights and instruments entering from the bottom edge; 10% of
//! in-body frames carry smoke or motion blur. Out-of-body scenes are bright
//! gray/blue rooms with ceiling lights, monitors and rows of text-like marks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    extract_frames, validate_segments, write_annotations, write_manifest, Annotations, ClassLabel, Fps, FrameDirVideo,
    FrameStore, ManifestEntry, SegmentAnnotation,
};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_videos: usize,
    /// Inclusive range of video durations in seconds.
    pub duration_s: [u32; 2],
    /// Target irrelevant:relevant frame ratio over the corpus.
    pub irrelevant_ratio: f64,
    pub seed: u64,
    pub height: u32,
    pub width: u32,
    /// Source frame rate (integer frames per second).
    pub fps: u32,
    /// Share of in-body frames rendered with smoke or motion blur.
    pub distractor_rate: f64,
    pub max_segments: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 20,
            duration_s: [45, 105],
            irrelevant_ratio: 0.073,
            seed: 1,
            height: 720,
            width: 1280,
            fps: 1,
            distractor_rate: 0.10,
            max_segments: 6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_videos == 0 {
            return bad("n_videos must be positive");
        }
        if !(self.irrelevant_ratio > 0.0 && self.irrelevant_ratio < 1.0) {
            return bad("irrelevant_ratio must be in (0, 1)");
        }
        if self.duration_s[0] < 4 || self.duration_s[1] < self.duration_s[0] {
            return bad("duration range must satisfy 4 <= min <= max");
        }
        if self.fps == 0 || self.height < 16 || self.width < 16 {
            return bad("fps and frame size must be positive");
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad("distractor_rate must be in [0, 1]");
        }
        if !(1..=6).contains(&self.max_segments) {
            return bad("max_segments must be in 1..=6");
        }
        Ok(())
    }
}

/// Paths and contents of a generated corpus.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub annotations_csv: PathBuf,
    pub frame_store: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub annotations: Annotations,
    /// Seconds rendered as smoke/blur distractors, per video.
    pub distractors: BTreeMap<String, Vec<u32>>,
}

/// Per-video segment layouts. Irrelevant seconds are budgeted over the whole
/// corpus so the irrelevant:relevant ratio lands on the target.
pub fn plan_segments(cfg: &SynthConfig) -> Result<Vec<(String, u32, Vec<SegmentAnnotation>)>> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "synth-layout", 0);
    let mut videos = Vec::with_capacity(cfg.n_videos);
    for v in 0..cfg.n_videos {
        let duration = rng.random_range(cfg.duration_s[0]..=cfg.duration_s[1]);
        let n_seg = rng.random_range(1..=cfg.max_segments.min(duration as usize / 2).max(1));
        let first = if n_seg > 1 && rng.random_bool(0.5) {
            ClassLabel::Irrelevant
        } else {
            ClassLabel::Relevant
        };
        let labels: Vec<ClassLabel> = (0..n_seg)
            .map(|i| if i % 2 == 0 { first } else { first.other() })
            .collect();
        videos.push((format!("synth_{v:03}"), duration, labels));
    }
    if !videos.iter().any(|(_, _, l)| l.contains(&ClassLabel::Irrelevant)) {
        let (_, d, labels) = &mut videos[0];
        *labels = vec![ClassLabel::Relevant, ClassLabel::Irrelevant, ClassLabel::Relevant];
        *d = (*d).max(6);
    }

    let total: u32 = videos.iter().map(|(_, d, _)| d).sum();
    let r = cfg.irrelevant_ratio;
    let budget = (total as f64 * r / (1.0 + r)).round() as u32;

    // irrelevant segment lengths: random shares of the budget, at least one second each
    let irr_slots: Vec<(usize, usize)> = videos
        .iter()
        .enumerate()
        .flat_map(|(v, (_, _, labels))| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == ClassLabel::Irrelevant)
                .map(move |(s, _)| (v, s))
        })
        .collect();
    let weights: Vec<f64> = irr_slots.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let mut irr_len: Vec<u32> = weights
        .iter()
        .map(|w| ((budget as f64 * w / wsum).floor() as u32).max(1))
        .collect();
    let mut assigned: u32 = irr_len.iter().sum();
    let mut k = 0;
    while assigned < budget {
        let n = irr_len.len();
        irr_len[k % n] += 1;
        assigned += 1;
        k += 1;
    }

    let mut out = Vec::with_capacity(videos.len());
    for (v, (id, duration, labels)) in videos.into_iter().enumerate() {
        let n_rel = labels.iter().filter(|l| **l == ClassLabel::Relevant).count() as u32;
        let mut lens: Vec<u32> = vec![0; labels.len()];
        for ((vv, s), len) in irr_slots.iter().zip(&irr_len) {
            if *vv == v {
                lens[*s] = *len;
            }
        }
        // leave at least two seconds per relevant segment
        let cap = duration.saturating_sub(2 * n_rel).max(1);
        let mut irr_total: u32 = lens.iter().sum();
        while irr_total > cap {
            let i = (0..lens.len()).max_by_key(|&i| lens[i]).expect("segments");
            lens[i] -= 1;
            irr_total -= 1;
        }
        let rel_total = duration - irr_total;
        let rel_idx: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == ClassLabel::Relevant)
            .collect();
        if !rel_idx.is_empty() {
            let w: Vec<f64> = rel_idx.iter().map(|_| rng.random_range(0.5..1.5)).collect();
            let ws: f64 = w.iter().sum();
            let mut given = 0;
            for (j, &i) in rel_idx.iter().enumerate() {
                lens[i] = ((rel_total as f64 * w[j] / ws).floor() as u32).max(1);
                given += lens[i];
            }
            let mut j = 0;
            while given < rel_total {
                lens[rel_idx[j % rel_idx.len()]] += 1;
                given += 1;
                j += 1;
            }
            while given > rel_total {
                let i = *rel_idx.iter().max_by_key(|&&i| lens[i]).expect("relevant segment");
                lens[i] -= 1;
                given -= 1;
            }
        }
        let mut start = 0;
        let mut segments = Vec::new();
        for (label, len) in labels.iter().zip(&lens) {
            if *len == 0 {
                continue;
            }
            segments.push(SegmentAnnotation {
                video_id: id.clone(),
                start_s: start,
                end_s: start + len,
                label: *label,
            });
            start += len;
        }
        // merge neighbours that ended up with the same label after zero-length drops
        let mut merged: Vec<SegmentAnnotation> = Vec::new();
        for s in segments {
            match merged.last_mut() {
                Some(last) if last.label == s.label => last.end_s = s.end_s,
                _ => merged.push(s),
            }
        }
        validate_segments(&id, duration, &merged)?;
        out.push((id, duration, merged));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Wave {
    fx: f32,
    fy: f32,
    phase_x: f32,
    phase_y: f32,
    amp: f32,
}

#[derive(Debug, Clone)]
struct Spot {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    color: [f32; 3],
}

#[derive(Debug, Clone)]
struct Rect {
    y0: f32,
    x0: f32,
    y1: f32,
    x1: f32,
    color: [f32; 3],
}

#[derive(Debug, Clone)]
struct Instrument {
    /// Entry point on the bottom edge (fraction of width).
    x_bottom: f32,
    /// Horizontal travel per unit of height climbed.
    slope: f32,
    /// Fraction of the height reached.
    reach: f32,
    half_width: f32,
    shade: f32,
}

#[derive(Debug, Clone)]
enum Scene {
    InBody {
        base: [f32; 3],
        brightness: f32,
        waves: Vec<Wave>,
        highlights: Vec<Spot>,
        instruments: Vec<Instrument>,
    },
    Room {
        wall: [f32; 3],
        floor: [f32; 3],
        horizon: f32,
        rects: Vec<Rect>,
        text: Vec<Rect>,
        lights: Vec<Spot>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Distractor {
    Smoke { alpha: f32 },
    Blur { radius: usize },
}

fn in_body_scene(rng: &mut Stream) -> Scene {
    let base = [
        rng.random_range(0.55..0.75),
        rng.random_range(0.10..0.22),
        rng.random_range(0.10..0.20),
    ];
    let waves = (0..4)
        .map(|_| Wave {
            fx: rng.random_range(1.0..6.0),
            fy: rng.random_range(1.0..6.0),
            phase_x: rng.random_range(0.0..std::f32::consts::TAU),
            phase_y: rng.random_range(0.0..std::f32::consts::TAU),
            amp: rng.random_range(0.08..0.2),
        })
        .collect();
    let highlights = (0..rng.random_range(2..=6))
        .map(|_| {
            let r = rng.random_range(0.008..0.03);
            Spot {
                cy: rng.random_range(0.15..0.85),
                cx: rng.random_range(0.25..0.75),
                ry: r,
                rx: r * rng.random_range(0.8..1.6),
                color: [0.95, 0.9, 0.88],
            }
        })
        .collect();
    let instruments = (0..rng.random_range(1..=2))
        .map(|_| Instrument {
            x_bottom: rng.random_range(0.3..0.7),
            slope: rng.random_range(-0.6..0.6),
            reach: rng.random_range(0.35..0.65),
            half_width: rng.random_range(0.015..0.03),
            shade: rng.random_range(0.35..0.6),
        })
        .collect();
    Scene::InBody {
        base,
        brightness: rng.random_range(0.55..0.85),
        waves,
        highlights,
        instruments,
    }
}

fn room_scene(rng: &mut Stream) -> Scene {
    let tint = rng.random_range(0.0..0.12);
    let level = rng.random_range(0.6..0.8);
    let wall = [level - tint, level - tint * 0.3, level + tint];
    let f = rng.random_range(0.35..0.5);
    let floor = [f, f + 0.02, f + 0.05];
    let mut rects = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let y0 = rng.random_range(0.2..0.5);
        let x0 = rng.random_range(0.1..0.7);
        let dark = rng.random_range(0.15..0.3);
        rects.push(Rect {
            y0,
            x0,
            y1: y0 + rng.random_range(0.15..0.3),
            x1: x0 + rng.random_range(0.12..0.3),
            color: [dark, dark + 0.03, dark + 0.08],
        });
    }
    // drapes
    if rng.random_bool(0.5) {
        let x0 = rng.random_range(0.0..0.5);
        rects.push(Rect {
            y0: rng.random_range(0.5..0.7),
            x0,
            y1: 1.0,
            x1: x0 + rng.random_range(0.2..0.5),
            color: [0.35, 0.55, 0.65],
        });
    }
    let mut text = Vec::new();
    for r in rects.iter().take(rects.len().min(3)) {
        let rows = ((r.y1 - r.y0) / 0.025) as usize;
        for row in 1..rows.saturating_sub(1) {
            let y = r.y0 + row as f32 * 0.025;
            let mut x = r.x0 + 0.01;
            while x < r.x1 - 0.03 {
                let len = rng.random_range(0.01..0.04);
                if rng.random_bool(0.8) {
                    text.push(Rect {
                        y0: y,
                        x0: x,
                        y1: y + 0.008,
                        x1: (x + len).min(r.x1 - 0.01),
                        color: [0.85, 0.9, 0.95],
                    });
                }
                x += len + 0.012;
            }
        }
    }
    let lights = (0..rng.random_range(2..=5))
        .map(|_| {
            let r = rng.random_range(0.01..0.035);
            Spot {
                cy: rng.random_range(0.03..0.2),
                cx: rng.random_range(0.2..0.8),
                ry: r,
                rx: r * rng.random_range(1.0..2.0),
                color: [1.0, 1.0, 0.97],
            }
        })
        .collect();
    Scene::Room {
        wall,
        floor,
        horizon: rng.random_range(0.65..0.8),
        rects,
        text,
        lights,
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders one frame; `t` is the time in seconds and drives a slow camera drift.
fn render(scene: &Scene, t: f32, h: u32, w: u32) -> RgbImage {
    let (hf, wf) = (h as f32, w as f32);
    let dy = 0.02 * (0.31 * t).sin();
    let dx = 0.02 * (0.23 * t + 1.0).cos();
    let mut buf = vec![[0.0f32; 3]; (h * w) as usize];
    let ny = |y: u32| y as f32 / hf + dy;
    let nx = |x: u32| x as f32 / wf + dx;
    match scene {
        Scene::InBody {
            base,
            brightness,
            waves,
            highlights,
            instruments,
        } => {
            let tables: Vec<(Vec<f32>, Vec<f32>, f32)> = waves
                .iter()
                .map(|wv| {
                    let col: Vec<f32> = (0..w).map(|x| (wv.fx * nx(x) * 6.0 + wv.phase_x).sin()).collect();
                    let row: Vec<f32> = (0..h).map(|y| (wv.fy * ny(y) * 6.0 + wv.phase_y).cos()).collect();
                    (row, col, wv.amp)
                })
                .collect();
            let aspect = wf / hf;
            for y in 0..h {
                // light from the top: brightness falls off downwards
                let light = brightness * (1.0 - 0.75 * (y as f32 / hf));
                for x in 0..w {
                    let mut tex = 1.0;
                    for (row, col, amp) in &tables {
                        tex += amp * row[y as usize] * col[x as usize];
                    }
                    // circular scope field
                    let ry = (y as f32 / hf - 0.5) * 2.0;
                    let rx = (x as f32 / wf - 0.5) * 2.0 * aspect;
                    let rr = (rx * rx + ry * ry).sqrt();
                    let vignette = if rr < 1.15 {
                        1.0
                    } else {
                        (1.0 - (rr - 1.15) * 3.0).max(0.08)
                    };
                    let k = light * tex * vignette;
                    buf[(y * w + x) as usize] = [base[0] * k, base[1] * k, base[2] * k];
                }
            }
            for ins in instruments {
                let top = 1.0 - ins.reach;
                for y in (top * hf) as u32..h {
                    let climb = 1.0 - y as f32 / hf;
                    let cx = ins.x_bottom + dx + ins.slope * climb * hf / wf;
                    let half = ins.half_width * (1.0 + climb * 0.3);
                    let (x0, x1) = (((cx - half) * wf).max(0.0) as u32, ((cx + half) * wf).min(wf) as u32);
                    for x in x0..x1 {
                        let across = ((x as f32 / wf - cx) / half).abs();
                        let s = ins.shade * (1.0 - 0.4 * across);
                        buf[(y * w + x) as usize] = [s, s, s * 1.02];
                    }
                }
            }
            paint_spots(&mut buf, highlights, h, w, dy, dx);
        }
        Scene::Room {
            wall,
            floor,
            horizon,
            rects,
            text,
            lights,
        } => {
            for y in 0..h {
                let yy = ny(y);
                let c = if yy < *horizon {
                    let g = 1.0 - 0.15 * yy;
                    [wall[0] * g, wall[1] * g, wall[2] * g]
                } else {
                    *floor
                };
                for x in 0..w {
                    buf[(y * w + x) as usize] = c;
                }
            }
            for r in rects.iter().chain(text.iter()) {
                let (y0, y1) = (((r.y0 + dy) * hf).max(0.0) as u32, ((r.y1 + dy) * hf).min(hf) as u32);
                let (x0, x1) = (((r.x0 + dx) * wf).max(0.0) as u32, ((r.x1 + dx) * wf).min(wf) as u32);
                for y in y0..y1 {
                    for x in x0..x1 {
                        buf[(y * w + x) as usize] = r.color;
                    }
                }
            }
            paint_spots(&mut buf, lights, h, w, dy, dx);
        }
    }
    let mut img = RgbImage::new(w, h);
    for (p, c) in img.pixels_mut().zip(&buf) {
        *p = Rgb([to_u8(c[0]), to_u8(c[1]), to_u8(c[2])]);
    }
    img
}

fn paint_spots(buf: &mut [[f32; 3]], spots: &[Spot], h: u32, w: u32, dy: f32, dx: f32) {
    let (hf, wf) = (h as f32, w as f32);
    for s in spots {
        let (cy, cx) = ((s.cy + dy) * hf, (s.cx + dx) * wf);
        let (ry, rx) = (s.ry * hf * 2.0, s.rx * hf * 2.0);
        let y0 = (cy - 2.0 * ry).max(0.0) as u32;
        let y1 = (cy + 2.0 * ry).min(hf) as u32;
        let x0 = (cx - 2.0 * rx).max(0.0) as u32;
        let x1 = (cx + 2.0 * rx).min(wf) as u32;
        for y in y0..y1 {
            for x in x0..x1 {
                let d2 = ((y as f32 - cy) / ry).powi(2) + ((x as f32 - cx) / rx).powi(2);
                let a = (-d2 * 1.5).exp();
                let p = &mut buf[(y * w + x) as usize];
                for c in 0..3 {
                    p[c] = p[c] * (1.0 - a) + s.color[c] * a;
                }
            }
        }
    }
}

fn apply_distractor(img: &mut RgbImage, d: Distractor, t: f32) {
    match d {
        Distractor::Smoke { alpha } => {
            let (w, h) = (img.width() as f32, img.height() as f32);
            for (x, y, p) in img.enumerate_pixels_mut() {
                let swirl = 0.5 + 0.5 * ((x as f32 / w) * 5.0 + (y as f32 / h) * 3.0 + t).sin();
                let a = alpha * (0.7 + 0.3 * swirl);
                let haze = [0.78, 0.74, 0.73];
                for c in 0..3 {
                    p[c] = to_u8(p[c] as f32 / 255.0 * (1.0 - a) + haze[c] * a);
                }
            }
        }
        Distractor::Blur { radius } => {
            // horizontal motion blur by a running box sum
            let w = img.width() as usize;
            let raw = img.as_mut();
            let mut row = vec![0u32; w * 3];
            for line in raw.chunks_exact_mut(w * 3) {
                let mut acc = [0u32; 3];
                let n = (2 * radius + 1) as u32;
                let at = |line: &[u8], x: isize, c: usize| line[(x.clamp(0, w as isize - 1) as usize) * 3 + c] as u32;
                for c in 0..3 {
                    for k in -(radius as isize)..=radius as isize {
                        acc[c] += at(line, k, c);
                    }
                }
                for x in 0..w {
                    for c in 0..3 {
                        row[x * 3 + c] = acc[c];
                        acc[c] += at(line, x as isize + radius as isize + 1, c);
                        acc[c] -= at(line, x as isize - radius as isize, c);
                    }
                }
                for (v, s) in line.iter_mut().zip(&row) {
                    *v = ((*s + n / 2) / n) as u8;
                }
            }
        }
    }
}

/// Generates the corpus under `out`: `videos/<id>/`, `frames/<id>/`,
/// `manifest.json` and `annotations.csv`.
pub fn generate_corpus(cfg: &SynthConfig, out: &Path) -> Result<SynthCorpus> {
    let plan = plan_segments(cfg)?;
    let videos_dir = out.join("videos");
    let store = FrameStore::new(out.join("frames"));
    let mut entries = Vec::new();
    let mut annotations = Annotations::new();
    let mut distractors = BTreeMap::new();
    for (v, (id, duration, segments)) in plan.iter().enumerate() {
        let mut rng = rng::stream(cfg.seed, "synth-video", v as u64);
        let scenes: Vec<Scene> = segments
            .iter()
            .map(|s| match s.label {
                ClassLabel::Relevant => in_body_scene(&mut rng),
                ClassLabel::Irrelevant => room_scene(&mut rng),
            })
            .collect();
        let mut per_second: Vec<Option<Distractor>> = Vec::with_capacity(*duration as usize);
        for seg in segments {
            for _ in seg.start_s..seg.end_s {
                let d = (seg.label == ClassLabel::Relevant && rng.random_bool(cfg.distractor_rate)).then(|| {
                    if rng.random_bool(0.5) {
                        Distractor::Smoke {
                            alpha: rng.random_range(0.45..0.7),
                        }
                    } else {
                        Distractor::Blur {
                            radius: rng.random_range(12..30),
                        }
                    }
                });
                per_second.push(d);
            }
        }
        distractors.insert(
            id.clone(),
            per_second
                .iter()
                .enumerate()
                .filter(|(_, d)| d.is_some())
                .map(|(t, _)| t as u32)
                .collect::<Vec<_>>(),
        );
        let video_root = videos_dir.join(id);
        let mut writer = FrameDirVideo::create(&video_root, Fps::integer(cfg.fps), cfg.width, cfg.height)?;
        for i in 0..(*duration as u64 * cfg.fps as u64) {
            let t = i as f32 / cfg.fps as f32;
            let second = (i / cfg.fps as u64) as u32;
            let seg = segments
                .iter()
                .position(|s| s.start_s <= second && second < s.end_s)
                .expect("segments tile the video");
            let mut frame = render(&scenes[seg], t + v as f32 * 10.0, cfg.height, cfg.width);
            if let Some(d) = per_second[second as usize] {
                apply_distractor(&mut frame, d, t);
            }
            writer.push_frame(&frame)?;
        }
        let video = writer.finish()?;
        extract_frames(&video, 1, &store.video_dir(id))?;
        entries.push(ManifestEntry {
            video_id: id.clone(),
            procedure_type: "synthetic".into(),
            duration_s: *duration,
            path: video_root,
        });
        annotations.insert(id.clone(), segments.clone());
    }
    let manifest = out.join("manifest.json");
    write_manifest(&manifest, &entries)?;
    let annotations_csv = out.join("annotations.csv");
    write_annotations(&annotations_csv, &annotations)?;
    Ok(SynthCorpus {
        root: out.to_path_buf(),
        manifest,
        annotations_csv,
        frame_store: store.root().to_path_buf(),
        entries,
        annotations,
        distractors,
    })
}
