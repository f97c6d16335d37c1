use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use hpsf_core::oracle::brute_voxel_average;
use hpsf_core::pipeline::{key_hashes, Executor, FrameState};
use hpsf_core::temporal::TemporalMode;
use hpsf_core::tracer::TraceSettings;
use hpsf_core::{FilterConfig, FrameStats, SumMode, Vec3};

use crate::config_file::{parse_bool, parse_sum_mode, ConfigFile};
use crate::dump::{partition_csv, TableDump};
use crate::error::{Error, Result};
use crate::exec::Pool;
use crate::scene_file::{self, SceneFile, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use crate::{bench, ppm, stats_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Filtered,
    Unfiltered,
    Both,
    OracleCompare,
    Bench,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Filtered => "filtered",
            Mode::Unfiltered => "unfiltered",
            Mode::Both => "both",
            Mode::OracleCompare => "oracle-compare",
            Mode::Bench => "bench",
        }
    }

    fn from_str_name(s: &str) -> Option<Self> {
        <Mode as ValueEnum>::from_str(s, true).ok()
    }
}

fn flag_bool(s: &str) -> std::result::Result<bool, String> {
    parse_bool(s).ok_or_else(|| format!("expected on/off, got '{s}'"))
}

fn flag_sum_mode(s: &str) -> std::result::Result<SumMode, String> {
    parse_sum_mode(s).ok_or_else(|| format!("expected fixed or float, got '{s}'"))
}

fn flag_temporal(s: &str) -> std::result::Result<TemporalMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

/// Parses `1e5`, `100000` or `1e5..1e7`.
pub fn parse_vertex_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let one = |t: &str| -> std::result::Result<usize, String> {
        let v: f64 = t.trim().parse().map_err(|_| format!("bad vertex count '{t}'"))?;
        if !(1.0..=1e9).contains(&v) {
            return Err(format!("vertex count {t} out of range"));
        }
        Ok(v.round() as usize)
    };
    match s.split_once("..") {
        Some((a, b)) => {
            let (lo, hi) = (one(a)?, one(b)?);
            if lo > hi {
                return Err(format!("empty range {s}"));
            }
            Ok((lo, hi))
        }
        None => one(s).map(|n| (n, n)),
    }
}

/// Renders stills and sequences with hashed path space filtering.
#[derive(Debug, Clone, Parser)]
#[command(name = "hpsf", version)]
pub struct Args {
    /// Builtin scene (`cornell`, `long_wall`) or scene file.
    #[arg(long)]
    pub scene: Option<String>,
    /// `key = value` configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub spp: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub frames: Option<u32>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Voxel footprint in pixels.
    #[arg(long)]
    pub s_pixels: Option<f64>,
    #[arg(long, value_parser = flag_bool)]
    pub jitter: Option<bool>,
    #[arg(long, value_parser = flag_bool)]
    pub include_normal: Option<bool>,
    /// filter, integrate or hybrid.
    #[arg(long, value_parser = flag_temporal)]
    pub temporal_mode: Option<TemporalMode>,
    #[arg(long, value_parser = flag_sum_mode)]
    pub sum_mode: Option<SumMode>,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Worker threads; 1 runs sequentially and deterministically, 0 uses all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bench vertex counts, e.g. `1e5..1e7`.
    #[arg(long, value_parser = parse_vertex_range)]
    pub vertices: Option<(usize, usize)>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scene: SceneFile,
    pub scene_name: String,
    pub filter: FilterConfig,
    pub spp: u32,
    pub seed: u64,
    pub frames: u32,
    pub threads: usize,
    pub mode: Mode,
    pub out: PathBuf,
    pub vertices: (usize, usize),
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

impl RunConfig {
    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &Args) -> Result<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let scene_name = pick(args.scene.clone(), file.get("scene")?, "cornell".to_string());
        let width = pick(args.width, file.get("width")?, DEFAULT_WIDTH);
        let height = pick(args.height, file.get("height")?, DEFAULT_HEIGHT);
        let scene = scene_file::load(&scene_name, width, height)?;

        let mut filter = FilterConfig::for_camera(&scene.scene.camera);
        file.apply(&mut filter)?;
        if let Some(v) = args.s_pixels {
            filter.s_pixels = v;
        }
        if let Some(v) = args.jitter {
            filter.jitter = v;
        }
        if let Some(v) = args.include_normal {
            filter.include_normal = v;
        }
        if let Some(v) = args.temporal_mode {
            filter.temporal_mode = v;
        }
        if let Some(v) = args.sum_mode {
            filter.sum_mode = v;
        }
        if let Some(v) = args.capacity {
            filter.capacity = v;
        }
        filter.validate()?;

        let mode = match args.mode {
            Some(m) => m,
            None => match file.raw("mode") {
                Some(s) => Mode::from_str_name(s).ok_or_else(|| Error::Usage(format!("unknown mode '{s}'")))?,
                None => Mode::Both,
            },
        };
        let vertices = match (args.vertices, file.raw("vertices")) {
            (Some(v), _) => v,
            (None, Some(s)) => parse_vertex_range(s).map_err(Error::Usage)?,
            (None, None) => (100_000, 10_000_000),
        };
        let cfg = RunConfig {
            scene,
            scene_name,
            filter,
            spp: pick(args.spp, file.get("spp")?, 1),
            seed: pick(args.seed, file.get("seed")?, 1),
            frames: pick(args.frames, file.get("frames")?, 1),
            threads: pick(args.threads, file.get("threads")?, 1),
            mode,
            out: pick(args.out.clone(), file.get("out")?, PathBuf::from("out")),
            vertices,
        };
        if cfg.spp == 0 {
            return Err(Error::Usage("--spp must be at least 1".into()));
        }
        if cfg.frames == 0 {
            return Err(Error::Usage("--frames must be at least 1".into()));
        }
        Ok(cfg)
    }
}

/// Files written and headline numbers of a run.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub files: Vec<PathBuf>,
    pub last: FrameStats,
    pub oracle_max_rel_error: Option<f64>,
    pub bench: Vec<bench::BenchRow>,
}

struct Writer<'a> {
    dir: &'a Path,
    files: Vec<PathBuf>,
}

impl Writer<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    }
}

fn frame_name(frame: u32, frames: u32, what: &str, ext: &str) -> String {
    if frames == 1 {
        format!("{what}.{ext}")
    } else {
        format!("{what}_{frame:04}.{ext}")
    }
}

fn run_entries(cfg: &RunConfig, pool: &Pool) -> Vec<(String, String)> {
    let f = &cfg.filter;
    [
        ("mode", cfg.mode.name().to_string()),
        ("scene", cfg.scene_name.clone()),
        ("spp", cfg.spp.to_string()),
        ("seed", cfg.seed.to_string()),
        ("frames", cfg.frames.to_string()),
        ("threads", pool.threads().to_string()),
        ("s_pixels", f.s_pixels.to_string()),
        ("jitter", f.jitter.to_string()),
        ("include_normal", f.include_normal.to_string()),
        ("temporal_mode", f.temporal_mode.name().to_string()),
        ("sum_mode", format!("{:?}", f.sum_mode).to_lowercase()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Executes a resolved run, writing into `cfg.out`.
pub fn execute(cfg: &RunConfig) -> Result<Summary> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let pool = Pool::new(cfg.threads).map_err(|e| Error::Usage(format!("cannot start {} threads: {e}", cfg.threads)))?;
    let mut w = Writer {
        dir: &cfg.out,
        files: Vec::new(),
    };
    let mut summary = Summary::default();
    let mut extra = run_entries(cfg, &pool);

    if cfg.mode == Mode::Bench {
        let counts = bench::decades(cfg.vertices.0, cfg.vertices.1);
        for n in counts {
            summary.bench.push(bench::measure(n, &pool)?);
        }
        let table = bench::table(&summary.bench);
        print!("{table}");
        w.text("bench.csv", &table)?;
        extra.push(("bench_spread".into(), format!("{:.4}", bench::spread(&summary.bench))));
        let p = w.path("stats.txt");
        stats_file::write(&p, &FrameStats::default(), &extra)?;
        summary.files = w.files;
        return Ok(summary);
    }

    let mut state = FrameState::new(cfg.filter)?;
    let frames = if cfg.mode == Mode::OracleCompare { 1 } else { cfg.frames };
    let mut false_merges = 0;
    let mut max_probes = 0;
    let mut failures = 0;
    for frame in 0..frames {
        let scene = cfg.scene.scene_at(frame);
        let settings = TraceSettings {
            first_sample: frame * cfg.spp,
            ..TraceSettings::new(cfg.spp, cfg.seed)
        };
        let out = state.render_frame(&scene, &settings, &pool)?;
        false_merges += out.stats.false_merges;
        max_probes = max_probes.max(out.stats.max_probes);
        failures += out.stats.fine_probe_failures;
        if matches!(cfg.mode, Mode::Filtered | Mode::Both | Mode::OracleCompare) {
            let p = w.path(&frame_name(frame, frames, "filtered", "ppm"));
            ppm::write(&p, &out.filtered)?;
        }
        if matches!(cfg.mode, Mode::Unfiltered | Mode::Both | Mode::OracleCompare) {
            let p = w.path(&frame_name(frame, frames, "unfiltered", "ppm"));
            ppm::write(&p, &out.unfiltered)?;
        }
        if frames > 1 {
            let p = w.path(&frame_name(frame, frames, "stats", "txt"));
            stats_file::write(&p, &out.stats, &[])?;
        }
        if cfg.mode == Mode::OracleCompare {
            let jittered: Vec<Vec3> = out.accumulated.iter().map(|a| a.jittered).collect();
            let oracle = brute_voxel_average(&out.trace.vertices, &jittered, &cfg.filter, cfg.filter.sum_mode, 0)?;
            let (mut max, mut total, mut mismatched) = (0.0f64, 0.0, 0);
            for (i, a) in out.accumulated.iter().enumerate() {
                if a.key != oracle.keys[i] {
                    mismatched += 1;
                    continue;
                }
                let (Some(got), Some(want)) = (
                    state.fine().lookup(&key_hashes(&a.key, &cfg.filter)),
                    oracle.mean(&a.key),
                ) else {
                    mismatched += 1;
                    continue;
                };
                let err = if got.1 != want.1 {
                    f64::INFINITY
                } else {
                    (got.0 - want.0).l1() / want.0.l1().max(1e-12)
                };
                max = max.max(err);
                total += err;
            }
            let n = out.accumulated.len().max(1) as f64;
            extra.push(("oracle_voxels".into(), oracle.len().to_string()));
            extra.push(("oracle_mismatched_vertices".into(), mismatched.to_string()));
            extra.push(("oracle_max_rel_error".into(), format!("{max:e}")));
            extra.push(("oracle_mean_rel_error".into(), format!("{:e}", total / n)));
            summary.oracle_max_rel_error = Some(if mismatched > 0 { f64::INFINITY } else { max });
            w.text("oracle.csv", &partition_csv(&oracle))?;
            let dump = TableDump::of(state.fine());
            w.text("table.csv", &dump.to_csv())?;
            let p = w.path("table.bin");
            dump.write(&p)?;
        }
        summary.last = out.stats;
    }
    extra.push(("total_false_merges".into(), false_merges.to_string()));
    extra.push(("total_fine_probe_failures".into(), failures.to_string()));
    extra.push(("overall_max_probes".into(), max_probes.to_string()));
    extra.push(("wall_seconds".into(), format!("{:.6}", pool.now())));
    let p = w.path("stats.txt");
    stats_file::write(&p, &summary.last, &extra)?;
    summary.files = w.files;
    Ok(summary)
}

/// Parses `argv` (program name first) and executes the run.
pub fn run<I, T>(argv: I) -> Result<Summary>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    execute(&RunConfig::resolve(&args)?)
}
