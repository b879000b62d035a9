use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use hafpn_core::ablation::{format_ablation, run_ablation, AblationOptions};
use hafpn_core::config::load_neck_cfg;
use hafpn_core::dataio::{
    load_detections, load_index, load_tensor, load_tensor_as, parse_fractions, read_bundle, save_levels, save_tensor,
    split_dataset, AnyTensor, SplitSpec,
};
use hafpn_core::gradcheck::{run_scope, Scope};
use hafpn_core::heatmap::{activation_heatmap, write_pgm};
use hafpn_core::metrics::{evaluate, ClassTable, EvalOptions};
use hafpn_core::pyramid::{NeckConfig, PyramidModel, Variant, LEVEL_NAMES};
use hafpn_core::{Error, Rng, Tensor};

use crate::{
    AblationArgs, BenchArgs, EvalArgs, ForwardArgs, GradcheckArgs, HeatmapArgs, NeckArgs, ScopeArg, SplitArgs,
    SynthArgs,
};

pub enum Outcome {
    Success,
    NumericFailure,
}

pub type CmdResult = anyhow::Result<Outcome>;

/// Non-finite values are numeric failures; everything else is bad input.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let numeric = e
        .chain()
        .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::NonFinite { .. })));
    if numeric {
        1
    } else {
        2
    }
}

fn print_config(command: &str, pairs: &[(&str, &dyn Display)]) {
    println!("[config]");
    println!("command={command}");
    for (k, v) in pairs {
        println!("{k}={v}");
    }
    println!();
}

fn print_neck_config(command: &str, cfg: &NeckConfig, pairs: &[(&str, &dyn Display)]) {
    print_config(command, pairs);
    println!("[neck]\n{cfg}\n");
}

fn resolve_neck(a: &NeckArgs) -> anyhow::Result<NeckConfig> {
    let mut c = NeckConfig::default();
    if let Some(p) = &a.config {
        c = load_neck_cfg(p, c)?;
    }
    if let Some(v) = a.variant {
        c.variant = v;
    }
    if let Some(v) = a.use_emsa {
        c.use_emsa = v;
    }
    if let Some(v) = a.use_ca {
        c.use_ca = v;
    }
    if let Some(v) = a.channels {
        c.channels = v;
    }
    if let Some(v) = a.heads {
        c.heads = v;
    }
    if let Some(v) = a.reduction {
        c.reduction = v;
    }
    if let Some(v) = a.hidden_ratio {
        c.hidden_ratio = v;
    }
    if let Some(v) = a.placement {
        c.placement = v;
    }
    if let Some(v) = a.merge {
        c.merge = v;
    }
    if let Some(v) = a.attention {
        c.attention = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    c.validate()?;
    Ok(c)
}

fn parse_shape(s: &str) -> anyhow::Result<Vec<usize>> {
    let dims = s
        .split(',')
        .map(|d| {
            d.trim()
                .parse::<usize>()
                .with_context(|| format!("bad shape extent `{d}`"))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    if dims.is_empty() || dims.contains(&0) {
        bail!("shape `{s}` must have positive extents");
    }
    Ok(dims)
}

fn shape_str(s: &[usize]) -> String {
    let parts: Vec<String> = s.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join(","))
}

pub fn forward(a: ForwardArgs) -> CmdResult {
    let cfg = resolve_neck(&a.neck)?;
    print_neck_config(
        "forward",
        &cfg,
        &[("input", &a.input.display()), ("output", &a.output.display())],
    );
    let image = load_tensor_as::<f32>(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let model = PyramidModel::<f32>::from_config(&cfg)?;
    let levels = model.forward(&image)?;
    save_levels(&a.output, &levels)?;
    println!("input {}", shape_str(image.shape()));
    for (name, shape) in LEVEL_NAMES.iter().zip(levels.shapes()) {
        println!("{name} {}", shape_str(&shape));
    }
    Ok(Outcome::Success)
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let scopes: Vec<Scope> = match a.scope {
        ScopeArg::All => Scope::ALL.to_vec(),
        ScopeArg::One(s) => vec![s],
    };
    let names: Vec<&str> = scopes.iter().map(|s| s.name()).collect();
    print_config("gradcheck", &[("scope", &names.join(",")), ("seed", &a.seed)]);
    let mut ok = true;
    for s in scopes {
        let report = run_scope(s, a.seed)?;
        print!("{report}");
        ok &= report.passed();
    }
    println!("{}", if ok { "all ops passed" } else { "gradient check FAILED" });
    Ok(if ok { Outcome::Success } else { Outcome::NumericFailure })
}

fn index_paths(gt: &Path, classes: Option<&PathBuf>) -> (PathBuf, Option<PathBuf>) {
    if gt.is_dir() {
        let table = gt.join("classes.txt");
        let table = classes.cloned().or_else(|| table.is_file().then_some(table));
        (gt.join("index.txt"), table)
    } else {
        (gt.to_path_buf(), classes.cloned())
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let opts = EvalOptions {
        iou_thr: a.iou_thr,
        ap_method: a.ap_method,
    };
    let (index_path, class_path) = index_paths(&a.gt, a.classes.as_ref());
    let class_display = class_path
        .as_ref()
        .map_or_else(|| "builtin".to_string(), |p| p.display().to_string());
    let output = a
        .output
        .as_ref()
        .map_or_else(|| "-".to_string(), |p| p.display().to_string());
    print_config(
        "eval",
        &[
            ("gt", &index_path.display()),
            ("classes", &class_display),
            ("input", &a.input.display()),
            ("iou_thr", &opts.iou_thr),
            ("ap_method", &opts.ap_method),
            ("output", &output),
        ],
    );

    let index = load_index(&index_path, class_path.as_deref())?;
    let gts = index.load_ground_truth()?;
    let dets = load_detections(&a.input)?;
    if dets.is_empty() {
        log::warn!("{}: no detections; every score is zero", a.input.display());
    }
    if let Some(d) = dets.iter().find(|d| index.get(&d.image_id).is_none()) {
        log::warn!("detections reference image `{}` which is not in the index", d.image_id);
    }
    let report = evaluate(&dets, &gts, &index.classes, &opts)?;
    println!("{report}");

    if let Some(dir) = &a.output {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let kv = dir.join("report.kv");
        fs::write(&kv, report.to_kv()).with_context(|| format!("writing {}", kv.display()))?;
        for c in &report.classes {
            let p = dir.join(format!("pr_{}.txt", file_stem(&c.name)));
            fs::write(&p, c.pr_table()).with_context(|| format!("writing {}", p.display()))?;
        }
        println!("wrote {}", kv.display());
    }
    Ok(Outcome::Success)
}

pub fn heatmap(a: HeatmapArgs) -> CmdResult {
    print_config(
        "heatmap",
        &[
            ("input", &a.input.display()),
            ("level", &a.level),
            ("output", &a.output.display()),
        ],
    );
    let tensor = if a.input.is_dir() {
        read_bundle(&a.input)?
            .into_iter()
            .find(|(name, _)| *name == a.level)
            .map(|(_, t)| t)
            .with_context(|| format!("{}: no level `{}` in bundle", a.input.display(), a.level))?
    } else {
        load_tensor(&a.input)?
    };
    let img = match tensor {
        AnyTensor::F32(t) => activation_heatmap(&t)?,
        AnyTensor::F64(t) => activation_heatmap(&t)?,
    };
    write_pgm(&a.output, &img)?;
    println!("heatmap {}x{}", img.width, img.height);
    Ok(Outcome::Success)
}

pub fn split(a: SplitArgs) -> CmdResult {
    print_config(
        "split",
        &[
            ("input", &a.input.display()),
            ("fractions", &a.fractions),
            ("seed", &a.seed),
            ("output", &a.output.display()),
        ],
    );
    let [tr, va, te] = parse_fractions(&a.fractions)?;
    let spec = SplitSpec::new(tr, va, te, a.seed)?;
    let index = load_index(&a.input, None)?;
    let split = split_dataset(&index.ids(), &spec)?;
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    for (name, ids) in split.parts() {
        let p = a.output.join(format!("{name}.txt"));
        let body: String = ids.iter().map(|id| format!("{id}\n")).collect();
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        println!("{name} {}", ids.len());
    }
    Ok(Outcome::Success)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn bench(a: BenchArgs) -> CmdResult {
    let cfg = resolve_neck(&a.neck)?;
    let shape = parse_shape(&a.shape)?;
    if a.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    print_neck_config(
        "bench",
        &cfg,
        &[
            ("shape", &shape_str(&shape)),
            ("repeat", &a.repeat),
            ("threads", &rayon_threads()),
        ],
    );

    let mut rng = Rng::new(cfg.seed).fork(0xBE);
    let image = Tensor::<f32>::rand_uniform(&shape, &mut rng, 0.0, 1.0)?;
    println!("timings are wall-clock and not deterministic");
    println!("{:<8} {:>6} {:>10} {:>10}", "variant", "repeat", "mean_ms", "std_ms");
    for &variant in Variant::ALL.iter() {
        let vcfg = match variant {
            Variant::Hafpn => NeckConfig { variant, ..cfg.clone() },
            _ => NeckConfig {
                variant,
                use_emsa: false,
                use_ca: false,
                ..cfg.clone()
            },
        };
        let model = PyramidModel::<f32>::from_config(&vcfg)?;
        let feats = model.features(&image)?;
        model.neck.forward(&feats)?;
        let times: Vec<f64> = (0..a.repeat)
            .map(|_| {
                let t = Instant::now();
                model.neck.forward(&feats).map(|_| t.elapsed().as_secs_f64() * 1e3)
            })
            .collect::<hafpn_core::Result<_>>()?;
        let (mean, std) = mean_std(&times);
        println!("{:<8} {:>6} {:>10.3} {:>10.3}", variant.name(), a.repeat, mean, std);
    }
    Ok(Outcome::Success)
}

fn rayon_threads() -> String {
    if hafpn_core::parallel::enabled() {
        "pool".to_string()
    } else {
        "1 (sequential build)".to_string()
    }
}

pub fn ablation(a: AblationArgs) -> CmdResult {
    let base = resolve_neck(&a.neck)?;
    let opts = AblationOptions {
        scenes: a.scenes,
        image_size: a.image_size,
        base,
        eval: EvalOptions {
            iou_thr: a.iou_thr,
            ap_method: a.ap_method,
        },
        ..AblationOptions::default()
    };
    let output = a
        .output
        .as_ref()
        .map_or_else(|| "-".to_string(), |p| p.display().to_string());
    print_neck_config(
        "ablation",
        &opts.base,
        &[
            ("scenes", &opts.scenes),
            ("image_size", &opts.image_size),
            ("iou_thr", &opts.eval.iou_thr),
            ("ap_method", &opts.eval.ap_method),
            ("output", &output),
        ],
    );
    let rows = run_ablation(&opts, &ClassTable::solder_joint())?;
    print!("{}", format_ablation(&rows));
    if let Some(dir) = &a.output {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for r in &rows {
            let p = dir.join(format!("{}.kv", file_stem(&r.label)));
            fs::write(&p, r.report.to_kv()).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(Outcome::Success)
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let shape = parse_shape(&a.shape)?;
    print_config(
        "synth",
        &[
            ("shape", &shape_str(&shape)),
            ("seed", &a.seed),
            ("output", &a.output.display()),
        ],
    );
    let t = Tensor::<f32>::rand_uniform(&shape, &mut Rng::new(a.seed), 0.0, 1.0)?;
    save_tensor(&a.output, &t)?;
    println!("wrote {}", a.output.display());
    Ok(Outcome::Success)
}
