//! Procedural editing pairs: small RGB scenes of circles and squares on a
//! flat background, rendered as single images or as short clips in which one
//! shape moves along a straight line. Each task's target is rendered from an
//! edited copy of the source scene, so it is exact by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;

use crate::codec::VideoClip;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from, stream, Rng};

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    RecolorObject,
    RemoveObject,
    AddObject,
    GlobalStyleInvert,
    TranslateObject,
    MultiRefPaletteTransfer,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::RecolorObject,
        Task::RemoveObject,
        Task::AddObject,
        Task::GlobalStyleInvert,
        Task::TranslateObject,
        Task::MultiRefPaletteTransfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::RecolorObject => "recolor_object",
            Task::RemoveObject => "remove_object",
            Task::AddObject => "add_object",
            Task::GlobalStyleInvert => "global_style_invert",
            Task::TranslateObject => "translate_object",
            Task::MultiRefPaletteTransfer => "multi_ref_palette_transfer",
        }
    }

    pub fn index(self) -> usize {
        Task::ALL.iter().position(|&t| t == self).expect("listed")
    }

    pub fn num_references(self) -> usize {
        if self == Task::MultiRefPaletteTransfer {
            2
        } else {
            1
        }
    }

    pub fn is_multi_reference(self) -> bool {
        self.num_references() > 1
    }

    /// Every task can be generated from both origins.
    pub fn supports(self, _origin: Origin) -> bool {
        true
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Data(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Image,
    Video,
}

impl Origin {
    pub fn name(self) -> &'static str {
        match self {
            Origin::Image => "image",
            Origin::Video => "video",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Origin {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Origin::Image),
            "video" => Ok(Origin::Video),
            _ => Err(Error::Data(format!("unknown origin {s:?}"))),
        }
    }
}

pub const COLOR_NAMES: [&str; 8] = ["red", "green", "blue", "yellow", "purple", "orange", "cyan", "white"];
pub const COLORS: [[f32; 3]; 8] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.8, 0.2],
    [0.15, 0.25, 0.95],
    [0.95, 0.9, 0.1],
    [0.6, 0.15, 0.8],
    [1.0, 0.55, 0.05],
    [0.1, 0.85, 0.9],
    [0.95, 0.95, 0.95],
];
/// Unnamed background tones, darker than every shape color.
pub const BACKGROUNDS: [[f32; 3]; 4] = [[0.1, 0.1, 0.12], [0.2, 0.15, 0.1], [0.08, 0.15, 0.2], [0.15, 0.15, 0.15]];
pub const POSITIONS: [(&str, (i32, i32)); 5] = [
    ("top left", (4, 4)),
    ("top right", (11, 4)),
    ("bottom left", (4, 11)),
    ("bottom right", (11, 11)),
    ("center", (8, 8)),
];
pub const DIRECTIONS: [(&str, (i32, i32)); 4] = [("left", (-1, 0)), ("right", (1, 0)), ("up", (0, -1)), ("down", (0, 1))];
/// Pixel offset applied by `translate_object`.
pub const SHIFT: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub color: usize,
    /// Center at frame 0.
    pub x: i32,
    pub y: i32,
    /// Radius or half side.
    pub size: i32,
    /// Center displacement per frame.
    pub step: (i32, i32),
}

impl Shape {
    pub fn center(&self, frame: usize) -> (i32, i32) {
        (self.x + frame as i32 * self.step.0, self.y + frame as i32 * self.step.1)
    }

    pub fn covers(&self, frame: usize, px: i32, py: i32) -> bool {
        let (cx, cy) = self.center(frame);
        let (dx, dy) = (px - cx, py - cy);
        match self.kind {
            ShapeKind::Circle => dx * dx + dy * dy <= self.size * self.size,
            ShapeKind::Square => dx.abs() <= self.size && dy.abs() <= self.size,
        }
    }

    fn inside(&self, frames: usize, side: i32) -> bool {
        (0..frames).all(|f| {
            let (cx, cy) = self.center(f);
            cx - self.size >= 0 && cy - self.size >= 0 && cx + self.size < side && cy + self.size < side
        })
    }

    /// Conservative separation test over every frame.
    fn apart(&self, other: &Shape, frames: usize) -> bool {
        (0..frames).all(|f| {
            let (a, b) = (self.center(f), other.center(f));
            let gap = self.size + other.size + 1;
            (a.0 - b.0).abs() > gap || (a.1 - b.1).abs() > gap
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub background: [f32; 3],
    pub shapes: Vec<Shape>,
}

impl Scene {
    pub fn render(&self, frames: usize, side: usize) -> VideoClip {
        let mut clip = VideoClip::filled(frames, 3, side, side, 0.0);
        for f in 0..frames {
            for y in 0..side {
                for x in 0..side {
                    let mut color = self.background;
                    for s in &self.shapes {
                        if s.covers(f, x as i32, y as i32) {
                            color = COLORS[s.color];
                        }
                    }
                    for (c, &v) in color.iter().enumerate() {
                        let i = clip.index(f, c, y, x);
                        clip.pixels[i] = v;
                    }
                }
            }
        }
        clip
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditSample {
    pub references: Vec<VideoClip>,
    pub target: VideoClip,
    pub instruction: String,
    pub task: Task,
    pub origin: Origin,
    pub seed: u64,
}

/// Scene size and clip length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub size: usize,
    pub video_frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 16,
            video_frames: 9,
        }
    }
}

/// Parsed form of every instruction template.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Instruction {
    Recolor { old: usize, kind: ShapeKind, new: usize },
    Remove { color: usize, kind: ShapeKind },
    Add { color: usize, kind: ShapeKind, position: usize },
    Invert,
    Translate { color: usize, kind: ShapeKind, direction: usize },
    Palette { color: usize, kind: ShapeKind },
}

impl Instruction {
    pub fn task(&self) -> Task {
        match self {
            Instruction::Recolor { .. } => Task::RecolorObject,
            Instruction::Remove { .. } => Task::RemoveObject,
            Instruction::Add { .. } => Task::AddObject,
            Instruction::Invert => Task::GlobalStyleInvert,
            Instruction::Translate { .. } => Task::TranslateObject,
            Instruction::Palette { .. } => Task::MultiRefPaletteTransfer,
        }
    }

    pub fn render(&self) -> String {
        match *self {
            Instruction::Recolor { old, kind, new } => {
                format!("recolor the {} {} to {}", COLOR_NAMES[old], kind.name(), COLOR_NAMES[new])
            }
            Instruction::Remove { color, kind } => format!("remove the {} {}", COLOR_NAMES[color], kind.name()),
            Instruction::Add { color, kind, position } => {
                format!("add a {} {} at the {}", COLOR_NAMES[color], kind.name(), POSITIONS[position].0)
            }
            Instruction::Invert => "invert the colors".to_string(),
            Instruction::Translate { color, kind, direction } => {
                format!("move the {} {} {}", COLOR_NAMES[color], kind.name(), DIRECTIONS[direction].0)
            }
            Instruction::Palette { color, kind } => {
                format!("paint the {} {} with the reference color", COLOR_NAMES[color], kind.name())
            }
        }
    }

    pub fn parse(text: &str) -> Option<Instruction> {
        let w: Vec<&str> = text.split_whitespace().collect();
        let color = |s: &str| COLOR_NAMES.iter().position(|&c| c == s);
        let kind = |s: &str| match s {
            "circle" => Some(ShapeKind::Circle),
            "square" => Some(ShapeKind::Square),
            _ => None,
        };
        match w.as_slice() {
            ["recolor", "the", c, k, "to", n] => Some(Instruction::Recolor {
                old: color(c)?,
                kind: kind(k)?,
                new: color(n)?,
            }),
            ["remove", "the", c, k] => Some(Instruction::Remove {
                color: color(c)?,
                kind: kind(k)?,
            }),
            ["add", "a", c, k, "at", "the", rest @ ..] => Some(Instruction::Add {
                color: color(c)?,
                kind: kind(k)?,
                position: POSITIONS.iter().position(|(p, _)| *p == rest.join(" "))?,
            }),
            ["invert", "the", "colors"] => Some(Instruction::Invert),
            ["move", "the", c, k, d] => Some(Instruction::Translate {
                color: color(c)?,
                kind: kind(k)?,
                direction: DIRECTIONS.iter().position(|(n, _)| n == d)?,
            }),
            ["paint", "the", c, k, "with", "the", "reference", "color"] => Some(Instruction::Palette {
                color: color(c)?,
                kind: kind(k)?,
            }),
            _ => None,
        }
    }
}

/// One instantiation of every template word, for vocabulary building.
pub fn template_texts() -> Vec<String> {
    let mut out = vec![Instruction::Invert.render()];
    for kind in [ShapeKind::Circle, ShapeKind::Square] {
        for c in 0..COLORS.len() {
            out.push(Instruction::Recolor { old: c, kind, new: c }.render());
            out.push(Instruction::Palette { color: c, kind }.render());
            for position in 0..POSITIONS.len() {
                out.push(Instruction::Add { color: c, kind, position }.render());
            }
            for direction in 0..DIRECTIONS.len() {
                out.push(Instruction::Translate { color: c, kind, direction }.render());
            }
        }
    }
    out
}

const MAX_TRIES: usize = 1000;

fn random_shape(rng: &mut Rng, cfg: &SynthConfig, frames: usize, moving: bool, used: &[usize]) -> Shape {
    let side = cfg.size as i32;
    let kind = if rng.random_bool(0.5) { ShapeKind::Circle } else { ShapeKind::Square };
    let mut color = rng.random_range(0..COLORS.len());
    while used.contains(&color) {
        color = rng.random_range(0..COLORS.len());
    }
    let size = rng.random_range(2..=3);
    let step = if moving {
        loop {
            let s = (rng.random_range(-1..=1), rng.random_range(-1..=1));
            if s != (0, 0) {
                break s;
            }
        }
    } else {
        (0, 0)
    };
    // Start range keeping the whole trajectory inside the frame.
    let travel = |d: i32| d * (frames as i32 - 1);
    let range = |d: i32| {
        let lo = size - travel(d).min(0);
        let hi = side - size - travel(d).max(0);
        if lo < hi {
            (lo, hi)
        } else {
            (size, side - size)
        }
    };
    let (xr, yr) = (range(step.0), range(step.1));
    Shape {
        kind,
        color,
        x: rng.random_range(xr.0..xr.1),
        y: rng.random_range(yr.0..yr.1),
        size,
        step,
    }
}

/// Scene with `count` shapes of distinct colors that stay in bounds and
/// apart over `frames` frames (the first shape moves when `moving`), and
/// for which `accept` holds.
fn random_scene(
    rng: &mut Rng,
    cfg: &SynthConfig,
    frames: usize,
    count: usize,
    moving: bool,
    accept: impl Fn(&Scene) -> bool,
) -> Result<Scene> {
    let side = cfg.size as i32;
    for _ in 0..MAX_TRIES {
        let background = BACKGROUNDS[rng.random_range(0..BACKGROUNDS.len())];
        let mut shapes: Vec<Shape> = Vec::with_capacity(count);
        for i in 0..count {
            let used: Vec<usize> = shapes.iter().map(|s| s.color).collect();
            shapes.push(random_shape(rng, cfg, frames, moving && i == 0, &used));
        }
        let ok = shapes.iter().all(|s| s.inside(frames, side))
            && shapes.iter().enumerate().all(|(i, a)| shapes[i + 1..].iter().all(|b| a.apart(b, frames)));
        let scene = Scene { background, shapes };
        if ok && accept(&scene) {
            return Ok(scene);
        }
    }
    Err(Error::Data(format!("no valid scene after {MAX_TRIES} tries")))
}

/// Generates one sample. `seed` is recorded in the sample; all randomness
/// comes from `rng`.
pub fn gen_sample(task: Task, origin: Origin, seed: u64, rng: &mut Rng, cfg: &SynthConfig) -> Result<EditSample> {
    if !task.supports(origin) {
        return Err(Error::Data(format!("task {task} has no {origin} form")));
    }
    let frames = match origin {
        Origin::Image => 1,
        Origin::Video => cfg.video_frames,
    };
    let moving = origin == Origin::Video;
    let side = cfg.size as i32;
    let count = rng.random_range(1..=2);
    let render = |s: &Scene| s.render(frames, cfg.size);

    let (source, target, instruction, extra_ref) = match task {
        Task::RecolorObject => {
            let scene = random_scene(rng, cfg, frames, count, moving, |_| true)?;
            let i = rng.random_range(0..scene.shapes.len());
            let old = scene.shapes[i].color;
            let mut new = rng.random_range(0..COLORS.len() - 1);
            if new >= old {
                new += 1;
            }
            let mut edited = scene.clone();
            edited.shapes[i].color = new;
            let kind = scene.shapes[i].kind;
            (scene, edited, Instruction::Recolor { old, kind, new }, None)
        }
        Task::RemoveObject => {
            let scene = random_scene(rng, cfg, frames, count, moving, |_| true)?;
            let i = rng.random_range(0..scene.shapes.len());
            let mut edited = scene.clone();
            let s = edited.shapes.remove(i);
            (scene, edited, Instruction::Remove { color: s.color, kind: s.kind }, None)
        }
        Task::AddObject => {
            let kind = if rng.random_bool(0.5) { ShapeKind::Circle } else { ShapeKind::Square };
            let size = 2;
            let probe = |p: usize| {
                let (x, y) = POSITIONS[p].1;
                Shape { kind, color: 0, x, y, size, step: (0, 0) }
            };
            let free_positions =
                |s: &Scene| (0..POSITIONS.len()).filter(|&p| s.shapes.iter().all(|o| o.apart(&probe(p), frames))).collect::<Vec<_>>();
            let scene = random_scene(rng, cfg, frames, count, moving, |s| !free_positions(s).is_empty())?;
            let positions = free_positions(&scene);
            let position = positions[rng.random_range(0..positions.len())];
            let used: Vec<usize> = scene.shapes.iter().map(|s| s.color).collect();
            let free: Vec<usize> = (0..COLORS.len()).filter(|c| !used.contains(c)).collect();
            let color = free[rng.random_range(0..free.len())];
            let mut edited = scene.clone();
            edited.shapes.push(Shape { color, ..probe(position) });
            (scene, edited, Instruction::Add { color, kind, position }, None)
        }
        Task::GlobalStyleInvert => {
            let scene = random_scene(rng, cfg, frames, count, moving, |_| true)?;
            (scene.clone(), scene, Instruction::Invert, None)
        }
        Task::TranslateObject => {
            let direction = rng.random_range(0..DIRECTIONS.len());
            let (dx, dy) = DIRECTIONS[direction].1;
            let pick = rng.random_range(0..count);
            let shifted = |s: &Scene| {
                let mut e = s.clone();
                e.shapes[pick].x += SHIFT * dx;
                e.shapes[pick].y += SHIFT * dy;
                e
            };
            let scene = random_scene(rng, cfg, frames, count, moving, |s| {
                let e = shifted(s);
                let moved = &e.shapes[pick];
                moved.inside(frames, side)
                    && e.shapes.iter().enumerate().all(|(j, o)| j == pick || o.apart(moved, frames))
            })?;
            let s = scene.shapes[pick];
            let edited = shifted(&scene);
            (scene, edited, Instruction::Translate { color: s.color, kind: s.kind, direction }, None)
        }
        Task::MultiRefPaletteTransfer => {
            let scene = random_scene(rng, cfg, frames, count, moving, |_| true)?;
            let i = rng.random_range(0..scene.shapes.len());
            let old = scene.shapes[i].color;
            let mut new = rng.random_range(0..COLORS.len() - 1);
            if new >= old {
                new += 1;
            }
            let palette = Scene {
                background: COLORS[new],
                shapes: Vec::new(),
            };
            let mut edited = scene.clone();
            edited.shapes[i].color = new;
            let kind = scene.shapes[i].kind;
            (scene, edited, Instruction::Palette { color: old, kind }, Some(render(&palette)))
        }
    };

    let mut target_clip = render(&target);
    if task == Task::GlobalStyleInvert {
        target_clip.pixels.iter_mut().for_each(|p| *p = 1.0 - *p);
    }
    let mut references = vec![render(&source)];
    references.extend(extra_ref);
    Ok(EditSample {
        references,
        target: target_clip,
        instruction: instruction.render(),
        task,
        origin,
        seed,
    })
}

/// Regenerates a sample from its seed alone.
pub fn sample_from_seed(task: Task, origin: Origin, seed: u64, cfg: &SynthConfig) -> Result<EditSample> {
    let mut rng = rng_from(&[stream::DATASET, seed]);
    gen_sample(task, origin, seed, &mut rng, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    HeldOut,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "heldout",
        }
    }

    pub fn of_seed(seed: u64) -> Split {
        if seed % 2 == 0 {
            Split::Train
        } else {
            Split::HeldOut
        }
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "heldout" => Ok(Split::HeldOut),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

/// Seed of sample `index` of `(task, origin)`; parity encodes the split.
pub fn sample_seed(base_seed: u64, task: Task, origin: Origin, index: usize, split: Split) -> u64 {
    let h = derive_seed(&[stream::DATASET, base_seed, task.index() as u64, origin as u64, index as u64]);
    match split {
        Split::Train => h & !1,
        Split::HeldOut => h | 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub seed: u64,
    pub task: Task,
    pub origin: Origin,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub version: u32,
    pub size: usize,
    pub video_frames: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn counts(&self) -> BTreeMap<(Task, Origin), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.task, e.origin)).or_insert(0) += 1;
        }
        out
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            size: self.size,
            video_frames: self.video_frames,
        }
    }

    /// Entries of one `(task, origin)` pool, in manifest order.
    pub fn pool(&self, task: Task, origin: Origin) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.task == task && e.origin == origin).collect()
    }

    pub fn regenerate(&self) -> Result<Vec<EditSample>> {
        let cfg = self.synth_config();
        self.entries
            .iter()
            .map(|e| sample_from_seed(e.task, e.origin, e.seed, &cfg))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# mixedit dataset manifest\nversion {}\nsize {}\nvideo_frames {}\n",
            self.version, self.size, self.video_frames
        );
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.seed, e.task, e.origin));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut header: BTreeMap<&str, u64> = BTreeMap::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::Data(format!("manifest line {}: {d}", n + 1));
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [key @ ("version" | "size" | "video_frames"), v] => {
                    header.insert(key, v.parse().map_err(|_| bad("bad number"))?);
                }
                [seed, task, origin] => entries.push(ManifestEntry {
                    seed: seed.parse().map_err(|_| bad("bad seed"))?,
                    task: task.parse()?,
                    origin: origin.parse()?,
                }),
                _ => return Err(bad("unrecognized line")),
            }
        }
        let get = |k: &str| header.get(k).copied().ok_or_else(|| Error::Data(format!("manifest lacks {k}")));
        let version = get("version")? as u32;
        if version != GENERATOR_VERSION {
            return Err(Error::Data(format!("manifest version {version}, generator is {GENERATOR_VERSION}")));
        }
        Ok(DatasetManifest {
            version,
            size: get("size")? as usize,
            video_frames: get("video_frames")? as usize,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::io(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(Error::io(path))?)
    }
}

/// Samples for every `(task, origin, count)` of `counts`, in that order.
pub fn gen_dataset(
    counts: &[(Task, Origin, usize)],
    base_seed: u64,
    split: Split,
    cfg: &SynthConfig,
) -> Result<(DatasetManifest, Vec<EditSample>)> {
    let mut entries = Vec::new();
    let mut samples = Vec::new();
    for &(task, origin, n) in counts {
        for i in 0..n {
            let seed = sample_seed(base_seed, task, origin, i, split);
            samples.push(sample_from_seed(task, origin, seed, cfg)?);
            entries.push(ManifestEntry { seed, task, origin });
        }
    }
    let manifest = DatasetManifest {
        version: GENERATOR_VERSION,
        size: cfg.size,
        video_frames: cfg.video_frames,
        entries,
    };
    Ok((manifest, samples))
}

/// Raw clip bytes: `frames, channels, height, width` as little-endian u32,
/// then the pixels as little-endian f32.
pub fn clip_to_bytes(clip: &VideoClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * clip.pixels.len());
    for d in [clip.frames, clip.channels, clip.height, clip.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in &clip.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn clip_from_bytes(bytes: &[u8]) -> Result<VideoClip> {
    if bytes.len() < 16 {
        return Err(Error::Data("raw clip shorter than its header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (f, c, h, w) = (dim(0), dim(1), dim(2), dim(3));
    let n = f * c * h * w;
    if bytes.len() != 16 + 4 * n {
        return Err(Error::Data(format!(
            "raw clip {f}x{c}x{h}x{w} needs {} bytes, found {}",
            16 + 4 * n,
            bytes.len()
        )));
    }
    let pixels = bytes[16..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    VideoClip::new(f, c, h, w, pixels)
}

/// Binary PPM of one frame.
pub fn frame_to_ppm(clip: &VideoClip, frame: usize) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", clip.width, clip.height).into_bytes();
    for y in 0..clip.height {
        for x in 0..clip.width {
            for c in 0..3.min(clip.channels) {
                out.push((clip.get(frame, c, y, x) * 255.0).round() as u8);
            }
        }
    }
    out
}
