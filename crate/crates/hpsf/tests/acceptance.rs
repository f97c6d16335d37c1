//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. `ACCEPTANCE_ONLY=3,5` runs a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use hpsf::bench;
use hpsf::Pool;
use hpsf_core::keys::{derive_key, hashes, jitter_offset, CellKey};
use hpsf_core::oracle::{brute_voxel_average, image_mse};
use hpsf_core::pipeline::{key_hashes, render_still, trace_parallel, FrameOutput, FrameState, Sequential};
use hpsf_core::rng::splitmix64;
use hpsf_core::table::{decode_count, Probe, TableConfig};
use hpsf_core::temporal::{level_shift, TemporalMode};
use hpsf_core::tracer::TraceSettings;
use hpsf_core::{FilterConfig, HashTable, Image, Rgb, Scene, SumMode, Vec3};

/// Filtered-over-unfiltered MSE reduction required by criterion 3. A pilot
/// over seeds 101..=108 at 64x64 measured factors between 8.96 and 10.52;
/// the target sits below that range.
const VARIANCE_TARGET: f64 = 6.0;

const SIDE: usize = 64;
const REFERENCE_SPP: u32 = 1024;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

/// Probe and fingerprint health gathered across every criterion.
#[derive(Default)]
struct Integrity {
    false_merges: u64,
    max_probes: u32,
    probe_limit: u32,
    frames: usize,
}

impl Integrity {
    fn record(&mut self, out: &FrameOutput, probe_limit: u32) {
        self.false_merges += out.stats.false_merges;
        self.max_probes = self.max_probes.max(out.stats.max_probes);
        self.probe_limit = self.probe_limit.max(probe_limit);
        assert!(out.stats.max_probes <= probe_limit);
        self.frames += 1;
    }
}

struct Ctx {
    pool: Pool,
    integrity: Integrity,
    reference: Option<Image>,
}

impl Ctx {
    fn cornell(&self) -> Scene {
        Scene::cornell_box(SIDE, SIDE)
    }

    /// The Cornell box tilted down so the light itself stays out of frame.
    /// Pixels straddling a visible emitter's edge carry antialiasing noise
    /// that no vertex filter can touch.
    fn cornell_framed(&self) -> Scene {
        let mut scene = self.cornell();
        scene.camera.look_at = Vec3::new(0.0, -0.4, 0.0);
        scene
    }

    fn reference(&mut self) -> Image {
        if self.reference.is_none() {
            let scene = self.cornell_framed();
            self.reference = Some(trace_parallel(&scene, &TraceSettings::new(REFERENCE_SPP, 7), &self.pool).unfiltered);
        }
        self.reference.clone().unwrap()
    }
}

fn rel(a: Rgb, b: Rgb) -> f64 {
    (a - b).l1() / b.l1().max(1e-12)
}

fn c1_oracle(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let scene = ctx.cornell();
    let mut detail = Vec::new();
    let mut pass = true;
    for mode in [SumMode::Fixed, SumMode::Float] {
        let cfg = FilterConfig {
            jitter: false,
            sum_mode: mode,
            ..FilterConfig::for_camera(&scene.camera)
        };
        let mut state = FrameState::new(cfg).unwrap();
        let out = state.render_frame(&scene, &TraceSettings::new(1, 11), &Sequential).unwrap();
        ctx.integrity.record(&out, cfg.probe_limit);
        let jittered: Vec<Vec3> = out.accumulated.iter().map(|a| a.jittered).collect();
        let oracle = brute_voxel_average(&out.trace.vertices, &jittered, &cfg, mode, 0).unwrap();
        let (mut worst, mut exact, mut missing) = (0.0f64, true, 0);
        for (i, a) in out.accumulated.iter().enumerate() {
            let want = oracle.mean(&oracle.keys[i]).unwrap();
            match state.fine().lookup(&key_hashes(&a.key, &cfg)) {
                Some(got) if a.key == oracle.keys[i] && got.1 == want.1 => {
                    exact &= got.0 == want.0;
                    worst = worst.max(rel(got.0, want.0));
                }
                _ => missing += 1,
            }
        }
        let ok = missing == 0 && worst <= 1e-5 && (mode == SumMode::Float || exact);
        pass &= ok;
        detail.push(format!("{mode:?}: max rel error {worst:.2e}, mismatches {missing}"));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 30.0;
    Outcome::new(pass, format!("{} ({secs:.1} s < 30 s)", detail.join("; ")))
}

fn c2_conservation(ctx: &mut Ctx) -> Outcome {
    let mut worst_float = 0.0f64;
    let mut failures_seen = 0;
    let mut pass = true;
    for seed in 0..10u64 {
        let mut s = splitmix64(seed + 1000);
        let mut next = || {
            s = splitmix64(s);
            s
        };
        let n = 2000 + (next() % 40_000) as usize;
        let universe = 50 + next() % 20_000;
        let capacity = 1usize << (8 + next() % 7);
        let probe_limit = 4 + (next() % 29) as u32;
        let items: Vec<(CellKey, Rgb)> = (0..n)
            .map(|_| {
                let k = next() % universe;
                let key = CellKey {
                    qx: (k % 97) as i32 - 48,
                    qy: (k / 97 % 97) as i32,
                    qz: (k / 9409) as i32,
                    level: 3,
                    aux: 0,
                };
                let r = next();
                let c = Rgb::new((r & 0xFFFF) as f64 / 997.0, (r >> 16 & 0xFFFF) as f64 / 31.0, (r >> 32 & 0xFF) as f64);
                (key, c)
            })
            .collect();
        for mode in [SumMode::Fixed, SumMode::Float] {
            let table = HashTable::new(TableConfig {
                capacity,
                probe_limit,
                sum_mode: mode,
                record_keys: true,
            })
            .unwrap();
            let outcomes = hpsf_core::pipeline::Executor::map(&ctx.pool, &items, |(k, c)| {
                table.accumulate_keyed(k, &hashes(k), *c, 0).succeeded()
            });
            let failed = outcomes.iter().filter(|ok| !**ok).count();
            failures_seen += failed;
            let counts: u64 = table.occupied_slots().map(|s| table.cell(s).count as u64).sum();
            pass &= counts == (n - failed) as u64;
            pass &= table.false_merges() == 0;
            let kept = items.iter().zip(&outcomes).filter(|(_, ok)| **ok).map(|(i, _)| i.1);
            match mode {
                SumMode::Fixed => {
                    let mut want = [0u64; 3];
                    for c in kept {
                        for (w, v) in want.iter_mut().zip(c.to_array()) {
                            *w += mode.encode(v);
                        }
                    }
                    let mut got = [0u64; 3];
                    for slot in table.occupied_slots() {
                        for (g, v) in got.iter_mut().zip(table.raw_sum(slot)) {
                            *g += v;
                        }
                    }
                    pass &= got == want;
                }
                SumMode::Float => {
                    let want = kept.fold(Rgb::BLACK, |a, c| a + c);
                    let got = table.occupied_slots().fold(Rgb::BLACK, |a, s| a + table.cell(s).sum);
                    worst_float = worst_float.max(rel(got, want));
                }
            }
        }
    }
    pass &= worst_float <= 1e-6;
    Outcome::new(
        pass,
        format!("10 seeds, fixed exact, float max rel error {worst_float:.1e}, {failures_seen} probe failures exercised"),
    )
}

fn c3_variance(ctx: &mut Ctx) -> Outcome {
    let start = Instant::now();
    let reference = ctx.reference();
    let scene = ctx.cornell_framed();
    let cfg = FilterConfig::for_camera(&scene.camera);
    let out = render_still(&scene, &TraceSettings::new(1, 101), cfg, &ctx.pool).unwrap();
    ctx.integrity.record(&out, cfg.probe_limit);
    let unfiltered = image_mse(&out.unfiltered, &reference).unwrap();
    let filtered = image_mse(&out.filtered, &reference).unwrap();
    let factor = unfiltered / filtered;
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        filtered < unfiltered && factor >= VARIANCE_TARGET && secs < 600.0,
        format!(
            "MSE unfiltered {unfiltered:.4e}, filtered {filtered:.4e}, reduction {factor:.2}x (target {VARIANCE_TARGET}x), {secs:.1} s"
        ),
    )
}

fn c4_integration(ctx: &mut Ctx) -> Outcome {
    let scene = Scene::cornell_box(32, 32);
    let mut detail = Vec::new();
    let mut pass = true;
    for mode in [SumMode::Fixed, SumMode::Float] {
        let cfg = FilterConfig {
            sum_mode: mode,
            sample_cap: 0,
            capacity: 1 << 15,
            temporal_mode: TemporalMode::Integrate,
            ..FilterConfig::for_camera(&scene.camera)
        };
        let mut state = FrameState::new(cfg).unwrap();
        for f in 0..8 {
            let s = TraceSettings {
                first_sample: 4 * f,
                ..TraceSettings::new(4, 99)
            };
            let out = state.render_frame(&scene, &s, &ctx.pool).unwrap();
            ctx.integrity.record(&out, cfg.probe_limit);
        }
        let mut shot = FrameState::new(cfg).unwrap();
        let out = shot.render_frame(&scene, &TraceSettings::new(32, 99), &ctx.pool).unwrap();
        ctx.integrity.record(&out, cfg.probe_limit);
        let (mut voxels, mut missing, mut worst, mut exact) = (0, 0, 0.0f64, true);
        for slot in shot.fine().occupied_slots() {
            let want = shot.fine().cell(slot);
            let key = want.key.unwrap();
            let Probe::Found { slot: s, .. } = state.fine().find(&key_hashes(&key, &cfg)) else {
                missing += 1;
                continue;
            };
            voxels += 1;
            let hist = state.fine().raw_history(s);
            let live = state.fine().raw_sum(s);
            let n = decode_count(hist.count) + state.fine().cell(s).count as f64;
            exact &= n == want.count as f64;
            let want_raw = shot.fine().raw_sum(slot);
            for c in 0..3 {
                match mode {
                    SumMode::Fixed => exact &= hist.sum[c] + live[c] == want_raw[c],
                    SumMode::Float => {
                        let got = mode.decode(hist.sum[c]) + mode.decode(live[c]);
                        let w = mode.decode(want_raw[c]);
                        worst = worst.max((got - w).abs() / w.abs().max(1e-12));
                    }
                }
            }
        }
        let ok = missing == 0 && exact && worst <= 1e-6;
        pass &= ok;
        detail.push(format!("{mode:?}: {voxels} voxels, counts and sums {}, max rel error {worst:.1e}", if exact { "match" } else { "differ" }));
    }
    Outcome::new(pass, detail.join("; "))
}

/// Per-pixel luminance.
fn lum(img: &Image) -> Vec<f64> {
    img.pixels().iter().map(|p| (p.r + p.g + p.b) / 3.0).collect()
}

fn masked_mse(a: &Image, b: &Image, mask: &[bool]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for ((p, q), m) in a.pixels().iter().zip(b.pixels()).zip(mask) {
        if *m {
            let d = *p - *q;
            s += d.r * d.r + d.g * d.g + d.b * d.b;
            n += 3;
        }
    }
    s / n.max(1) as f64
}

const MOVING_FRAMES: u32 = 12;
const MOVING_SIDE: usize = 48;
const LIGHT_STEP: f64 = 0.06;
const MOVING_SPP: u32 = 4;

fn moving_scene(frame: u32) -> Scene {
    let mut scene = Scene::cornell_box(MOVING_SIDE, MOVING_SIDE);
    scene.camera.look_at = Vec3::new(0.0, -0.4, 0.0);
    scene.translate_light(0, Vec3::new(LIGHT_STEP * frame as f64, 0.0, 0.0))
}

fn c5_hybrid(ctx: &mut Ctx) -> Outcome {
    let refs: Vec<Image> = (0..MOVING_FRAMES)
        .map(|f| trace_parallel(&moving_scene(f), &TraceSettings::new(REFERENCE_SPP, 500 + f as u64), &ctx.pool).unfiltered)
        .collect();
    // pixels whose reference changes over the sequence, and pixels that barely do
    let first = lum(&refs[0]);
    let last = lum(&refs[MOVING_FRAMES as usize - 1]);
    let change: Vec<f64> = first.iter().zip(&last).map(|(a, b)| (a - b).abs() / a.max(*b).max(1e-3)).collect();
    let boundary: Vec<bool> = change.iter().map(|c| *c > 0.3).collect();
    let stable: Vec<bool> = change.iter().map(|c| *c < 0.05).collect();
    let warmup = 4;
    let seeds = [31u64, 32, 33];
    let mut errors: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for mode in [TemporalMode::Integrate, TemporalMode::Hybrid, TemporalMode::Filter] {
        let cfg = FilterConfig {
            temporal_mode: mode,
            ..FilterConfig::for_camera(&moving_scene(0).camera)
        };
        let (mut eb, mut es) = (0.0, 0.0);
        for seed in seeds {
            let mut state = FrameState::new(cfg).unwrap();
            for f in 0..MOVING_FRAMES {
                let s = TraceSettings {
                    first_sample: MOVING_SPP * f,
                    ..TraceSettings::new(MOVING_SPP, seed)
                };
                let out = state.render_frame(&moving_scene(f), &s, &ctx.pool).unwrap();
                ctx.integrity.record(&out, cfg.probe_limit);
                if f >= warmup {
                    eb += masked_mse(&out.filtered, &refs[f as usize], &boundary);
                    es += masked_mse(&out.filtered, &refs[f as usize], &stable);
                }
            }
        }
        let k = ((MOVING_FRAMES - warmup) as usize * seeds.len()) as f64;
        errors.insert(mode.name(), (eb / k, es / k));
    }
    let (ib, _) = errors["integrate"];
    let (hb, hs) = errors["hybrid"];
    let (_, fs) = errors["filter"];
    let nb = boundary.iter().filter(|b| **b).count();
    let ns = stable.iter().filter(|b| **b).count();
    Outcome::new(
        ib > hb && hs <= fs,
        format!(
            "changing pixels ({nb}): integrate {ib:.4e} > hybrid {hb:.4e}; stable pixels ({ns}): hybrid {hs:.4e} <= filter {fs:.4e}"
        ),
    )
}

fn c6_scaling(ctx: &mut Ctx) -> Outcome {
    let rows: Vec<bench::BenchRow> = bench::decades(100_000, 10_000_000)
        .into_iter()
        .map(|n| bench::measure(n, &ctx.pool).unwrap())
        .collect();
    let spread = bench::spread(&rows);
    let per: Vec<String> = rows
        .iter()
        .map(|r| format!("{}: {:.0} ns", r.vertices, r.ns_per_vertex()))
        .collect();
    let failures: usize = rows.iter().map(|r| r.probe_failures).sum();
    let unfiltered: usize = rows.iter().map(|r| r.unfiltered).sum();
    Outcome::new(
        spread < 2.0,
        format!(
            "per-vertex accumulate+lookup {}; spread {spread:.2}x < 2x; {failures} probe failures, {unfiltered} unfiltered",
            per.join(", ")
        ),
    )
}

fn c7_integrity(ctx: &mut Ctx) -> Outcome {
    // planted instances: cells of one voxel with several normal bins, mixed
    // with unrelated cells, all recovered by a fingerprint scan
    let mut recovered_all = true;
    let mut planted = 0;
    for round in 0..50u64 {
        let cfg = FilterConfig {
            normal_in_fingerprint: true,
            ..FilterConfig::default()
        };
        let table = HashTable::new(TableConfig {
            capacity: 1 << 10,
            probe_limit: 64,
            sum_mode: SumMode::Fixed,
            record_keys: true,
        })
        .unwrap();
        let mut s = splitmix64(round);
        let target = CellKey {
            qx: round as i32,
            qy: -3,
            qz: 7,
            level: 2,
            aux: 0,
        };
        let mut bins = BTreeSet::new();
        for i in 0..200u64 {
            s = splitmix64(s);
            if i % 4 == 0 {
                let bin = (s % 64) as u32;
                let k = CellKey {
                    aux: CellKey::pack_aux(bin, 0, 0),
                    ..target
                };
                bins.insert(bin);
                table.accumulate_keyed(&k, &key_hashes(&k, &cfg), Rgb::WHITE, 0);
            } else {
                let k = CellKey {
                    qx: (s % 1000) as i32,
                    qy: (s >> 20) as i32 % 1000,
                    qz: 9,
                    level: 2,
                    aux: CellKey::pack_aux((s >> 40) as u32 % 64, 0, 0),
                };
                table.accumulate_keyed(&k, &key_hashes(&k, &cfg), Rgb::WHITE, 0);
            }
        }
        let h = key_hashes(&target, &cfg);
        let found: BTreeSet<u32> = table
            .probe_scan(&h, |f| hpsf_core::keys::same_voxel(f, h.fingerprint))
            .iter()
            .map(|c| c.key.unwrap().normal_bin())
            .collect();
        planted += bins.len();
        recovered_all &= found == bins;
        ctx.integrity.false_merges += table.false_merges();
    }
    let i = &ctx.integrity;
    Outcome::new(
        i.false_merges == 0 && i.max_probes <= i.probe_limit && recovered_all,
        format!(
            "{} frames: {} false merges, max probes {} (limit {}); {planted} planted cells in 50 scans {}",
            i.frames,
            i.false_merges,
            i.max_probes,
            i.probe_limit,
            if recovered_all { "all recovered" } else { "NOT all recovered" }
        ),
    )
}

fn c8_jitter(ctx: &mut Ctx) -> Outcome {
    // disc statistics
    let cfg = FilterConfig::default();
    let n = Vec3::new(0.3, -0.5, 0.81).normalized();
    let level = 3;
    let half = 0.5 * cfg.voxel_size(level);
    let draws = 100_000;
    let (mut residual, mut longest) = (0.0f64, 0.0f64);
    let (mut sum, mut sq) = (Vec3::ZERO, Vec3::ZERO);
    let mut s = 17u64;
    for _ in 0..draws {
        s = splitmix64(s);
        let u = (s >> 11) as f64 / (1u64 << 53) as f64;
        s = splitmix64(s);
        let v = (s >> 11) as f64 / (1u64 << 53) as f64;
        let o = jitter_offset(n, level, (u, v), &cfg);
        residual = residual.max(o.dot(n).abs());
        longest = longest.max(o.length());
        sum += o;
        sq += Vec3::new(o.x * o.x, o.y * o.y, o.z * o.z);
    }
    let m = sum / draws as f64;
    let mut mean_ok = true;
    for (mean, sq) in [(m.x, sq.x), (m.y, sq.y), (m.z, sq.z)] {
        let var = sq / draws as f64 - mean * mean;
        mean_ok &= mean.abs() <= 3.0 * (var / draws as f64).sqrt();
    }
    let disc_ok = residual <= 1e-6 && longest <= half * (1.0 + 1e-12) && mean_ok;

    // image effect: single-seed MSE, and the error of the seed-averaged image
    // at block boundaries where the reference itself is smooth; at hard
    // features the error is set by the feature, not by the voxel grid
    let reference = ctx.reference();
    let scene = ctx.cornell_framed();
    let smooth = smooth_pixels(&reference, 0.2);
    let seeds: Vec<u64> = (101..133).collect();
    let mut results = Vec::new();
    let mut boundary = Vec::new();
    for jitter in [false, true] {
        let cfg = FilterConfig {
            jitter,
            ..FilterConfig::for_camera(&scene.camera)
        };
        let mut mse = 0.0;
        let mut mean = Image::new(SIDE, SIDE);
        for &seed in &seeds {
            let out = render_still(&scene, &TraceSettings::new(1, seed), cfg, &ctx.pool).unwrap();
            ctx.integrity.record(&out, cfg.probe_limit);
            mse += image_mse(&out.filtered, &reference).unwrap() / seeds.len() as f64;
            for (a, b) in mean.pixels_mut().iter_mut().zip(out.filtered.pixels()) {
                *a += *b / seeds.len() as f64;
            }
            if boundary.is_empty() {
                boundary = voxel_boundaries(&out, &cfg);
            }
        }
        let err: Vec<f64> = mean.pixels().iter().zip(reference.pixels()).map(|(a, b)| (*a - *b).l1() / 3.0).collect();
        let max_where = |keep: &dyn Fn(usize) -> bool| (0..err.len()).filter(|i| keep(*i)).map(|i| err[i]).fold(0.0, f64::max);
        results.push((mse, max_where(&|i| boundary[i] && smooth[i]), max_where(&|i| boundary[i])));
    }
    let (mse_off, worst_off, all_off) = results[0];
    let (mse_on, worst_on, all_on) = results[1];
    let n_smooth = (0..boundary.len()).filter(|i| boundary[*i] && smooth[*i]).count();
    let image_ok = mse_on <= 1.5 * mse_off && worst_on < worst_off;
    Outcome::new(
        disc_ok && image_ok,
        format!(
            "disc: residual {residual:.1e}, max offset {:.3} voxel, mean within 3 sigma {mean_ok}; \
             MSE on/off {:.2} (<= 1.5); max error at {n_smooth} smooth block-boundary pixels off {worst_off:.4} -> on {worst_on:.4} \
             (all {} boundary pixels: {all_off:.4} -> {all_on:.4})",
            longest / cfg.voxel_size(level),
            mse_on / mse_off,
            boundary.iter().filter(|m| **m).count()
        ),
    )
}

/// Pixels whose luminance differs from each 4-neighbor's by less than
/// `tolerance` relative.
fn smooth_pixels(img: &Image, tolerance: f64) -> Vec<bool> {
    let l = lum(img);
    let w = img.width();
    let h = l.len() / w;
    (0..l.len())
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let mut n = vec![];
            if r > 0 {
                n.push(i - w);
            }
            if r + 1 < h {
                n.push(i + w);
            }
            if c > 0 {
                n.push(i - 1);
            }
            if c + 1 < w {
                n.push(i + 1);
            }
            n.iter().all(|j| (l[i] - l[*j]).abs() < tolerance * l[i].max(1e-3))
        })
        .collect()
}

/// Pixels on a block boundary with jitter off: a horizontal or vertical
/// neighbor's vertex lies in the adjacent voxel of the same surface (same
/// level and bins, one grid step away). Assumes one sample per pixel.
fn voxel_boundaries(out: &FrameOutput, cfg: &FilterConfig) -> Vec<bool> {
    let w = SIDE;
    let mut key: Vec<Option<CellKey>> = vec![None; w * w];
    for v in &out.trace.vertices {
        let i = v.pixel.0 as usize * w + v.pixel.1 as usize;
        key[i] = Some(derive_key(v, cfg, (0.0, 0.0), 0).key);
    }
    let adjacent = |a: CellKey, b: CellKey| {
        let step = (a.qx - b.qx).abs() + (a.qy - b.qy).abs() + (a.qz - b.qz).abs();
        a.level == b.level && a.aux == b.aux && step == 1
    };
    let mut mask = vec![false; w * w];
    for r in 0..w {
        for c in 0..w {
            for (r2, c2) in [(r + 1, c), (r, c + 1)] {
                if r2 >= w || c2 >= w {
                    continue;
                }
                let (i, j) = (r * w + c, r2 * w + c2);
                if let (Some(a), Some(b)) = (key[i], key[j]) {
                    if adjacent(a, b) {
                        mask[i] = true;
                        mask[j] = true;
                    }
                }
            }
        }
    }
    mask
}

struct Pan {
    capacity: usize,
    max_occupancy: f64,
    unfiltered: f64,
    worst_frame: f64,
    lost_recent: usize,
    distinct: usize,
    evicted: usize,
    displaced: usize,
}

/// 200-frame camera pan along the long wall. Before each frame, records
/// the cells touched in the previous two frames; afterwards each must still
/// be in the table unless the camera move shifted its level.
fn pan(ctx: &mut Ctx, capacity: usize) -> Pan {
    let frames = 200u32;
    let scene = Scene::long_wall(48, 36, 20.0);
    let cfg = FilterConfig {
        capacity,
        ..FilterConfig::for_camera(&scene.camera)
    };
    let step = 18.0 / frames as f64;
    let mut state = FrameState::new(cfg).unwrap();
    let mut p = Pan {
        capacity,
        max_occupancy: 0.0,
        unfiltered: 0.0,
        worst_frame: 0.0,
        lost_recent: 0,
        distinct: 0,
        evicted: 0,
        displaced: 0,
    };
    let (mut vertices, mut unfiltered) = (0, 0);
    let mut seen = BTreeSet::new();
    let mut camera = scene.camera.position;
    for f in 0..frames {
        let frame_scene = scene.move_camera(Vec3::new(step * f as f64, 0.0, 0.0));
        let new_camera = frame_scene.camera.position;
        let recent: Vec<CellKey> = state
            .fine()
            .occupied_slots()
            .map(|s| state.fine().cell(s))
            .filter(|c| f >= 1 && c.last_touch + 2 >= f)
            .filter_map(|c| c.key)
            .collect();
        let s = TraceSettings {
            first_sample: f,
            ..TraceSettings::new(1, 77)
        };
        let out = state.render_frame(&frame_scene, &s, &ctx.pool).unwrap();
        ctx.integrity.record(&out, cfg.probe_limit);
        for k in recent {
            let migrated = level_shift(&k, &cfg, camera, new_camera) != 0;
            let present = matches!(state.fine().find(&key_hashes(&k, &cfg)), Probe::Found { .. });
            if !present && !migrated {
                p.lost_recent += 1;
            }
        }
        seen.extend(state.fine().occupied_slots().filter_map(|s| state.fine().cell(s).key));
        camera = new_camera;
        p.max_occupancy = p.max_occupancy.max(out.stats.occupancy());
        p.worst_frame = p.worst_frame.max(out.stats.unfiltered_fraction());
        vertices += out.stats.vertices;
        unfiltered += out.stats.unfiltered;
        p.displaced += out.stats.displaced;
        p.evicted += out.stats.evicted;
    }
    p.unfiltered = unfiltered as f64 / vertices as f64;
    p.distinct = seen.len();
    p
}

fn c9_eviction(ctx: &mut Ctx) -> Outcome {
    // a table holding a fraction of the cells the pan creates, and a tighter
    // one that forces displacement of live cells
    let main = pan(ctx, 8192);
    let tight = pan(ctx, 4096);
    let pass = main.max_occupancy < 0.9
        && main.distinct > 4 * main.capacity
        && [&main, &tight].iter().all(|p| p.lost_recent == 0 && p.unfiltered < 0.05);
    let line = |p: &Pan| {
        format!(
            "capacity {} ({} distinct cells over the pan): max occupancy {:.1}%, recently touched cells lost {}, \
             unfiltered {:.2}% (worst frame {:.2}%), horizon evictions {}, displacements {}",
            p.capacity,
            p.distinct,
            100.0 * p.max_occupancy,
            p.lost_recent,
            100.0 * p.unfiltered,
            100.0 * p.worst_frame,
            p.evicted,
            p.displaced
        )
    };
    Outcome::new(pass, format!("200 frames; {}; tight {}", line(&main), line(&tight)))
}

fn main() {
    let only: Option<BTreeSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut ctx = Ctx {
        pool: Pool::new(0).expect("thread pool"),
        integrity: Integrity::default(),
        reference: None,
    };
    type Criterion = fn(&mut Ctx) -> Outcome;
    let criteria: [(u32, &str, Criterion); 9] = [
        (1, "oracle equivalence", c1_oracle),
        (2, "conservation", c2_conservation),
        (3, "variance reduction", c3_variance),
        (4, "temporal integration identity", c4_integration),
        (5, "hybrid temporal behavior", c5_hybrid),
        (6, "constant-time scaling", c6_scaling),
        (7, "fingerprint and probing integrity", c7_integrity),
        (8, "jitter", c8_jitter),
        (9, "eviction soundness", c9_eviction),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = run(&mut ctx);
        println!(
            "criterion {n} {name}: {} | {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
