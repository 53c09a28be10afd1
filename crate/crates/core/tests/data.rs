use std::collections::HashSet;

use mixedit_core::codec::VideoClip;
use mixedit_core::curriculum::{default_stages, ratio_sweep, Schedule, STAGE1_IMAGE_FRACTION, STAGE2_IMAGE_FRACTION};
use mixedit_core::eval::{psnr, score, task_sr, temporal_consistency, SampleMetrics};
use mixedit_core::synth::{gen_dataset, sample_from_seed, Instruction, Origin, Split, SynthConfig, Task, COLORS, DIRECTIONS, SHIFT};

fn cfg() -> SynthConfig {
    SynthConfig::default()
}

/// Pixels (any channel, any frame) that differ between two clips.
fn changed_pixels(a: &VideoClip, b: &VideoClip) -> usize {
    let plane = a.height * a.width;
    let mut changed = HashSet::new();
    for f in 0..a.frames {
        for c in 0..a.channels {
            for i in 0..plane {
                let k = (f * a.channels + c) * plane + i;
                if a.pixels[k] != b.pixels[k] {
                    changed.insert((f, i));
                }
            }
        }
    }
    changed.len()
}

#[test]
fn recolor_changes_only_a_small_region() {
    for seed in 0..20 {
        for origin in [Origin::Image, Origin::Video] {
            let s = sample_from_seed(Task::RecolorObject, origin, seed, &cfg()).unwrap();
            let n = changed_pixels(&s.references[0], &s.target);
            let per_frame = n as f64 / s.target.frames as f64;
            assert!(n > 0, "seed {seed}: nothing changed");
            assert!(per_frame < 0.5 * 16.0 * 16.0, "seed {seed}: {per_frame} pixels per frame");
        }
    }
}

#[test]
fn invert_is_the_complement() {
    for seed in 0..5 {
        let s = sample_from_seed(Task::GlobalStyleInvert, Origin::Video, seed, &cfg()).unwrap();
        for (a, b) in s.references[0].pixels.iter().zip(&s.target.pixels) {
            assert!((a + b - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn video_sources_move_and_images_are_single_frames() {
    for task in Task::ALL {
        let img = sample_from_seed(task, Origin::Image, 3, &cfg()).unwrap();
        assert_eq!(img.target.frames, 1);
        assert_eq!(img.references.len(), task.num_references());
        let vid = sample_from_seed(task, Origin::Video, 3, &cfg()).unwrap();
        assert_eq!(vid.target.frames, 9);
        assert!(temporal_consistency(&vid.references[0]).unwrap() < 1.0, "{task}: static source");
    }
}

/// Centroid of the pixels of frame 0 painted exactly in `rgb`.
fn centroid(clip: &VideoClip, rgb: [f32; 3]) -> (f64, f64) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..clip.height {
        for x in 0..clip.width {
            if (0..3).all(|c| clip.get(0, c, y, x) == rgb[c]) {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    assert!(n > 0.0);
    (sx / n, sy / n)
}

#[test]
fn translate_moves_by_the_instructed_offset() {
    for seed in 0..20 {
        let s = sample_from_seed(Task::TranslateObject, Origin::Image, seed, &cfg()).unwrap();
        let Some(Instruction::Translate { color, direction, .. }) = Instruction::parse(&s.instruction) else {
            panic!("unparsed {:?}", s.instruction);
        };
        let (x0, y0) = centroid(&s.references[0], COLORS[color]);
        let (x1, y1) = centroid(&s.target, COLORS[color]);
        let (dx, dy) = DIRECTIONS[direction].1;
        assert_eq!((x1 - x0, y1 - y0), ((SHIFT * dx) as f64, (SHIFT * dy) as f64), "seed {seed}");
    }
}

#[test]
fn instructions_parse_back_to_their_task() {
    for task in Task::ALL {
        for seed in 0..10 {
            let s = sample_from_seed(task, Origin::Video, seed, &cfg()).unwrap();
            let parsed = Instruction::parse(&s.instruction).unwrap();
            assert_eq!(parsed.task(), task);
            assert_eq!(parsed.render(), s.instruction);
        }
    }
}

#[test]
fn generation_is_deterministic_and_splits_are_disjoint() {
    let counts: Vec<_> = Task::ALL.iter().map(|&t| (t, Origin::Video, 6)).collect();
    let (ma, sa) = gen_dataset(&counts, 3, Split::Train, &cfg()).unwrap();
    let (mb, sb) = gen_dataset(&counts, 3, Split::Train, &cfg()).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(sa, sb);
    assert_eq!(ma.regenerate().unwrap(), sa);
    assert!(ma.counts().values().all(|&n| n == 6));

    let (mh, _) = gen_dataset(&counts, 3, Split::HeldOut, &cfg()).unwrap();
    let train: HashSet<u64> = ma.entries.iter().map(|e| e.seed).collect();
    assert!(mh.entries.iter().all(|e| !train.contains(&e.seed)));
    assert!(ma.entries.iter().all(|e| Split::of_seed(e.seed) == Split::Train));
    assert!(mh.entries.iter().all(|e| Split::of_seed(e.seed) == Split::HeldOut));
}

#[test]
fn curriculum_fractions_over_ten_thousand_draws() {
    let schedule = Schedule::new(default_stages(), 11).unwrap();
    let starts = schedule.boundaries();
    for (stage, want) in [(0, STAGE1_IMAGE_FRACTION), (1, STAGE2_IMAGE_FRACTION)] {
        let mut images = 0;
        let mut multi = 0;
        let n = 10_000;
        let steps = schedule.stages[stage].steps;
        for i in 0..n {
            let step = starts[stage] + (i as u64) % steps;
            let d = schedule.next_sample(step, i / steps as usize).unwrap();
            assert_eq!(d.stage, stage);
            images += usize::from(d.origin == Origin::Image);
            multi += usize::from(d.task.is_multi_reference());
        }
        let frac = images as f64 / n as f64;
        assert!((frac - want).abs() < 0.02, "stage {stage}: {frac} vs {want}");
        assert_eq!(multi > 0, stage == 1, "stage {stage}: {multi} multi-reference draws");
    }
    assert!((STAGE1_IMAGE_FRACTION - 0.851).abs() < 1e-3);
    assert!((STAGE2_IMAGE_FRACTION - 0.691).abs() < 1e-3);
}

#[test]
fn ratio_sweep_changes_only_the_mix() {
    let base = default_stages()[0].clone();
    let sweep = ratio_sweep(&[(1, 1), (1, 4)], &base, 0).unwrap();
    assert_eq!(sweep[0].stages[0].image_fraction, 0.5);
    assert_eq!(sweep[1].stages[0].image_fraction, 0.8);
    assert_eq!(sweep[0].stages[0].tasks, base.tasks);
    assert_eq!(sweep[0].total_steps(), sweep[1].total_steps());
}

fn flat(frames: usize, value: f32) -> VideoClip {
    VideoClip::filled(frames, 3, 4, 4, value)
}

#[test]
fn psnr_of_uniform_offset() {
    // MSE 0.01 on a [0, 1] scale is 20 dB.
    let p = psnr(&flat(1, 0.5), &flat(1, 0.6)).unwrap();
    assert!((p - 20.0).abs() < 1e-4, "{p}");
    assert!(psnr(&flat(1, 0.5), &flat(2, 0.5)).is_err());
}

#[test]
fn consistency_fixtures() {
    assert!((temporal_consistency(&flat(3, 0.4)).unwrap() - 1.0).abs() < 1e-12);
    // Orthogonal frames: one channel lit per frame.
    let mut v = VideoClip::filled(2, 3, 1, 1, 0.0);
    v.pixels[0] = 1.0;
    v.pixels[4] = 1.0;
    assert!(temporal_consistency(&v).unwrap().abs() < 1e-12);
    assert!(temporal_consistency(&flat(1, 0.4)).is_err());
}

#[test]
fn moving_square_consistency_fixture() {
    // 3x3 white square on a 0.2 background, stepping one pixel right per
    // frame. Brute-force cosine value: 16.96 / 18.88.
    let mut v = VideoClip::filled(4, 1, 16, 16, 0.2);
    for f in 0..4 {
        for y in 5..8 {
            for x in 2 + f..5 + f {
                let i = v.index(f, 0, y, x);
                v.pixels[i] = 1.0;
            }
        }
    }
    let c = temporal_consistency(&v).unwrap();
    assert!((c - 0.8983050847457625).abs() < 1e-6, "{c}");
}

fn metric(task: Task, psnr: f64) -> SampleMetrics {
    SampleMetrics {
        task,
        origin: Origin::Video,
        seed: 0,
        psnr,
        mse: 0.0,
        consistency: f64::NAN,
        target_consistency: f64::NAN,
        success: psnr >= 25.0,
    }
}

#[test]
fn task_sr_is_monotone_and_order_invariant() {
    let mut reports = vec![
        metric(Task::RecolorObject, 30.0),
        metric(Task::RecolorObject, 24.0),
        metric(Task::RemoveObject, 10.0),
        metric(Task::AddObject, 40.0),
    ];
    let a = task_sr(&reports, 25.0).unwrap();
    assert!((a.task_sr - 2.0 / 3.0).abs() < 1e-12);
    reports.reverse();
    assert_eq!(task_sr(&reports, 25.0).unwrap().task_sr, a.task_sr);
    let mut last = f64::INFINITY;
    for th in [0.0, 10.0, 20.0, 27.0, 35.0, 50.0] {
        let sr = task_sr(&reports, th).unwrap().task_sr;
        assert!(sr <= last);
        last = sr;
    }
    assert!(task_sr(&[], 25.0).is_err());
}

#[test]
fn perfect_output_scores_the_cap() {
    let s = sample_from_seed(Task::RemoveObject, Origin::Video, 2, &cfg()).unwrap();
    let m = score(&s.target, &s, 25.0).unwrap();
    assert!(m.success);
    assert_eq!(m.dynamics_error(), 0.0);
}
