use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hafpn_core::dataio::{load_levels, save_tensor};
use hafpn_core::heatmap::GrayImage;
use hafpn_core::metrics::{EvalReport, PrTable};
use hafpn_core::Tensor;
use tempfile::TempDir;

fn hafpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hafpn"))
        .args(args)
        .output()
        .expect("spawn hafpn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_image(dir: &Path) -> std::path::PathBuf {
    let img = dir.join("img.htsr");
    let o = hafpn(&["synth", "--shape", "1,3,32,32", "--seed", "3", "--output", p(&img)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    img
}

#[test]
fn forward_writes_levels_with_stride_shapes() {
    let dir = TempDir::new().unwrap();
    let img = synth_image(dir.path());
    let out = dir.path().join("out");
    let o = hafpn(&[
        "forward",
        "--variant",
        "hafpn",
        "--channels",
        "8",
        "--input",
        p(&img),
        "--output",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("[config]\ncommand=forward\n"));
    assert!(text.contains("variant=hafpn"));
    assert!(text.contains("p3 [1,8,16,16]"));
    assert!(text.contains("p5 [1,8,4,4]"));
    let levels = load_levels::<f32>(&out).unwrap();
    assert_eq!(levels.p4.shape(), &[1, 8, 8, 8]);
    assert!(out.join("manifest.txt").is_file());
}

#[test]
fn identity_hafpn_files_match_fpn_bytes() {
    let dir = TempDir::new().unwrap();
    let img = synth_image(dir.path());
    let fpn = dir.path().join("fpn");
    let ham = dir.path().join("ham");
    let a = hafpn(&[
        "forward",
        "--variant",
        "fpn",
        "--use-emsa",
        "false",
        "--use-ca",
        "false",
        "--seed",
        "5",
        "--input",
        p(&img),
        "--output",
        p(&fpn),
    ]);
    let b = hafpn(&[
        "forward",
        "--variant",
        "hafpn",
        "--attention",
        "identity",
        "--seed",
        "5",
        "--input",
        p(&img),
        "--output",
        p(&ham),
    ]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0, "{}", stderr(&b));
    for f in ["p3.htsr", "p4.htsr", "p5.htsr", "manifest.txt"] {
        assert_eq!(fs::read(fpn.join(f)).unwrap(), fs::read(ham.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_inputs_exit_two() {
    let dir = TempDir::new().unwrap();
    let junk = dir.path().join("junk.htsr");
    fs::write(&junk, b"HTSX\x01\x00garbage").unwrap();
    let out = dir.path().join("out");
    let o = hafpn(&["forward", "--input", p(&junk), "--output", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));

    assert_eq!(code(&hafpn(&["forward", "--frobnicate"])), 2);
    assert_eq!(
        code(&hafpn(&[
            "forward",
            "--input",
            p(&junk),
            "--output",
            p(&out),
            "--variant",
            "bifpn"
        ])),
        2
    );

    let img = synth_image(dir.path());
    let o = hafpn(&[
        "forward",
        "--variant",
        "hafpn",
        "--use-emsa",
        "false",
        "--use-ca",
        "false",
        "--input",
        p(&img),
        "--output",
        p(&out),
    ]);
    assert_eq!(code(&o), 2);

    let cfg = dir.path().join("neck.cfg");
    fs::write(&cfg, "variant=pafpn\nwidth=3\n").unwrap();
    let o = hafpn(&["forward", "--config", p(&cfg), "--input", p(&img), "--output", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown key `width`"));
}

#[test]
fn config_file_then_flags() {
    let dir = TempDir::new().unwrap();
    let img = synth_image(dir.path());
    let cfg = dir.path().join("neck.cfg");
    fs::write(
        &cfg,
        "# plain pafpn\nvariant=pafpn\nuse_emsa=false\nuse_ca=false\nchannels=4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = hafpn(&[
        "forward",
        "--config",
        p(&cfg),
        "--channels",
        "6",
        "--input",
        p(&img),
        "--output",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("variant=pafpn\n"));
    assert!(text.contains("channels=6\n"));
    assert!(text.contains("p3 [1,6,16,16]"));
}

#[test]
fn gradcheck_layer_scope_lists_each_op_once() {
    let o = hafpn(&["gradcheck", "--scope", "layer", "--seed", "1"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(rows.len() >= 5);
    let mut seen = std::collections::HashSet::new();
    for r in &rows {
        let op = r.split_whitespace().nth(1).unwrap();
        assert!(seen.insert(op.to_string()), "{op} listed twice");
    }
    assert_eq!(code(&hafpn(&["gradcheck", "--scope", "everything"])), 2);
}

struct EvalFixture {
    dir: TempDir,
}

impl EvalFixture {
    /// Two 100x100 images. `insufficient` has three boxes, `shifting` one.
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let d = dir.path();
        fs::write(d.join("a.txt"), "0 0.2 0.2 0.2 0.2\n1 0.7 0.7 0.4 0.4\n").unwrap();
        fs::write(d.join("b.txt"), "0 0.25 0.25 0.5 0.5\n0 0.7 0.7 0.2 0.2\n").unwrap();
        fs::write(d.join("index.txt"), "a 100 100 a.txt\nb 100 100 b.txt\n").unwrap();
        fs::write(d.join("classes.txt"), "0 ineffective\n1 shifting\n").unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn eval(&self, dets: &str) -> (Output, std::path::PathBuf) {
        let det = self.path().join("dets.txt");
        fs::write(&det, dets).unwrap();
        let out = self.path().join("report");
        let o = hafpn(&["eval", "--gt", p(self.path()), "--input", p(&det), "--output", p(&out)]);
        (o, out)
    }
}

fn read_report(dir: &Path) -> EvalReport {
    EvalReport::from_kv(&fs::read_to_string(dir.join("report.kv")).unwrap()).unwrap()
}

#[test]
fn eval_perfect_detections() {
    let fx = EvalFixture::new();
    let (o, out) = fx.eval("a 0 0.9 10 10 30 30\na 1 0.8 50 50 90 90\nb 0 0.7 0 0 50 50\nb 0 0.6 60 60 80 80\n");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_report(&out);
    assert_eq!(r.map, 1.0);
    assert_eq!(r.precision, 1.0);
    assert_eq!(r.recall, 1.0);
    assert!(fs::read_to_string(out.join("report.kv"))
        .unwrap()
        .contains("map.all=1\n"));
}

#[test]
fn eval_two_class_fixture_matches_hand_computation() {
    let fx = EvalFixture::new();
    // insufficient ranks TP TP FP TP over 3 gts; shifting ranks TP FP over 1 gt.
    let (o, out) = fx.eval(
        "a 0 0.9 10 10 30 30\n\
         b 0 0.8 0 0 50 50\n\
         b 0 0.7 10 60 20 70\n\
         b 0 0.6 60 60 80 80\n\
         a 1 0.5 50 50 90 90\n\
         a 1 0.4 0 0 10 10\n",
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_report(&out);

    // Envelope areas: 1/3 * (1 + 1 + 3/4) and 1 * 1.
    let ap0 = (1.0 + 1.0 + 0.75) / 3.0;
    let expect: HashMap<&str, f64> = HashMap::from([
        ("precision.all", 4.0 / 6.0),
        ("recall.all", 1.0),
        ("map.all", (ap0 + 1.0) / 2.0),
        ("precision.macro", (0.75 + 0.5) / 2.0),
        ("recall.macro", 1.0),
        ("tp.all", 4.0),
        ("fp.all", 2.0),
        ("fn.all", 0.0),
        ("class.insufficient", 0.0),
        ("gt.insufficient", 3.0),
        ("det.insufficient", 4.0),
        ("tp.insufficient", 3.0),
        ("fp.insufficient", 1.0),
        ("fn.insufficient", 0.0),
        ("precision.insufficient", 0.75),
        ("recall.insufficient", 1.0),
        ("ap.insufficient", ap0),
        ("class.shifting", 1.0),
        ("gt.shifting", 1.0),
        ("det.shifting", 2.0),
        ("tp.shifting", 1.0),
        ("fp.shifting", 1.0),
        ("fn.shifting", 0.0),
        ("precision.shifting", 0.5),
        ("recall.shifting", 1.0),
        ("ap.shifting", 1.0),
    ]);
    let kv = fs::read_to_string(out.join("report.kv")).unwrap();
    let mut got = HashMap::new();
    for line in kv.lines() {
        let (k, v) = line.split_once('=').unwrap();
        if k == "iou_thr" || k == "ap_method" {
            continue;
        }
        got.insert(k.to_string(), v.parse::<f64>().unwrap());
    }
    assert_eq!(got.len(), expect.len());
    for (k, v) in &expect {
        let g = got[*k];
        assert!((g - v).abs() <= 1e-12, "{k}: got {g}, want {v}");
    }
    assert_eq!(r.classes.len(), 2);

    let pr = PrTable::parse(&fs::read_to_string(out.join("pr_insufficient.txt")).unwrap()).unwrap();
    assert_eq!(pr.gt, 3);
    let recalls: Vec<f64> = pr.points.iter().map(|q| q.recall).collect();
    assert_eq!(recalls, vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0]);
    let precisions: Vec<f64> = pr.points.iter().map(|q| q.precision).collect();
    assert_eq!(precisions, vec![1.0, 1.0, 2.0 / 3.0, 0.75]);
}

#[test]
fn eval_empty_detections_warns_and_reports_zeros() {
    let fx = EvalFixture::new();
    let (o, out) = fx.eval("");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("no detections"), "{}", stderr(&o));
    let r = read_report(&out);
    assert_eq!((r.map, r.precision, r.recall), (0.0, 0.0, 0.0));
    assert_eq!(r.fn_count, 4);
}

#[test]
fn eval_rejects_bad_detections() {
    let fx = EvalFixture::new();
    let (o, _) = fx.eval("a 7 0.9 10 10 30 30\n");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("unknown class id 7"));
    let (o, _) = fx.eval("a 0 0.9 10 10 30\n");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(":1:"), "{}", stderr(&o));
}

#[test]
fn heatmap_fixtures() {
    let dir = TempDir::new().unwrap();
    let constant = dir.path().join("c.htsr");
    save_tensor(&constant, &Tensor::<f32>::fill(&[1, 2, 3, 5], 0.7).unwrap()).unwrap();
    let pgm = dir.path().join("c.pgm");
    let o = hafpn(&["heatmap", "--input", p(&constant), "--output", p(&pgm)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bytes = fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
    let img = GrayImage::from_pgm(&bytes).unwrap();
    assert!(img.pixels.iter().all(|&v| v == 128));

    let mut hot = Tensor::<f64>::zeros(&[1, 3, 4, 4]).unwrap();
    hot.data_mut()[16 + 6] = -2.0;
    let hot_path = dir.path().join("h.htsr");
    save_tensor(&hot_path, &hot).unwrap();
    let o = hafpn(&["heatmap", "--input", p(&hot_path), "--output", p(&pgm)]);
    assert_eq!(code(&o), 0);
    let img = GrayImage::from_pgm(&fs::read(&pgm).unwrap()).unwrap();
    assert_eq!((img.width, img.height), (4, 4));
    for (i, &v) in img.pixels.iter().enumerate() {
        assert_eq!(v, if i == 6 { 255 } else { 0 });
    }

    let flat = dir.path().join("f.htsr");
    save_tensor(&flat, &Tensor::<f32>::zeros(&[4, 4]).unwrap()).unwrap();
    assert_eq!(code(&hafpn(&["heatmap", "--input", p(&flat), "--output", p(&pgm)])), 2);
    let batch = dir.path().join("b.htsr");
    save_tensor(&batch, &Tensor::<f32>::zeros(&[2, 1, 4, 4]).unwrap()).unwrap();
    assert_eq!(code(&hafpn(&["heatmap", "--input", p(&batch), "--output", p(&pgm)])), 2);
}

#[test]
fn split_files_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let index = dir.path().join("index.txt");
    let body: String = (0..10).map(|i| format!("img{i} 64 64 ann/img{i}.txt\n")).collect();
    fs::write(&index, body).unwrap();
    let run = |out: &Path, fr: &str, seed: &str| {
        hafpn(&[
            "split",
            "--input",
            p(&index),
            "--fractions",
            fr,
            "--seed",
            seed,
            "--output",
            p(out),
        ])
    };

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&a, "0.8,0.1,0.1", "9")), 0);
    assert_eq!(code(&run(&b, "80%,10%,10%", "9")), 0);
    let mut all = Vec::new();
    for (name, n) in [("train", 8), ("val", 1), ("test", 1)] {
        let fa = fs::read(a.join(format!("{name}.txt"))).unwrap();
        assert_eq!(fa, fs::read(b.join(format!("{name}.txt"))).unwrap());
        let ids: Vec<String> = String::from_utf8(fa).unwrap().lines().map(str::to_string).collect();
        assert_eq!(ids.len(), n);
        all.extend(ids);
    }
    all.sort();
    let mut want: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
    want.sort();
    assert_eq!(all, want);

    let c = dir.path().join("c");
    let o = run(&c, "0.5,0.2,0.2", "9");
    assert_eq!(code(&o), 2);
    assert!(!c.exists());
}

#[test]
fn bench_reports_every_variant() {
    let o = hafpn(&[
        "bench",
        "--shape",
        "1,3,16,16",
        "--repeat",
        "1",
        "--channels",
        "4",
        "--heads",
        "1",
        "--reduction",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("not deterministic"));
    for v in ["fpn", "pafpn", "hafpn"] {
        let rows = text.lines().filter(|l| l.split_whitespace().next() == Some(v)).count();
        assert_eq!(rows, 1, "{v}");
    }
    assert_eq!(code(&hafpn(&["bench", "--repeat", "0"])), 2);
}

#[test]
fn ablation_writes_six_reports() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("abl");
    let o = hafpn(&[
        "ablation",
        "--scenes",
        "2",
        "--image-size",
        "16",
        "--channels",
        "4",
        "--heads",
        "1",
        "--reduction",
        "2",
        "--output",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let n = fs::read_dir(&out).unwrap().count();
    assert_eq!(n, 6);
    for f in fs::read_dir(&out).unwrap() {
        let text = fs::read_to_string(f.unwrap().path()).unwrap();
        EvalReport::from_kv(&text).unwrap();
    }
}
