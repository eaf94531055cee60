use std::path::Path;

use meshsplat::scene_io::cli::{run, EXIT_IO, EXIT_OK, EXIT_USAGE};
use meshsplat::scene_io::{load_image, load_scene, save_image};
use meshsplat::{Image, SamplingMask};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut o = Vec::new();
    let mut e = Vec::new();
    let code = run(std::iter::once("meshsplat").chain(args.iter().copied()), &mut o, &mut e);
    (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn demo_render_metrics_fit() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("demo/scene.toml");
    let (code, out, err) = call(&[
        "demo",
        "-o",
        p(&scene),
        "--gaussians",
        "300",
        "--size",
        "48",
        "--views",
        "2",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("gaussians = 300"));

    let targets = dir.path().join("targets");
    for v in ["0", "1"] {
        let img = targets.join(format!("{v}.png"));
        assert_eq!(call(&["render", p(&scene), "--view", v, "-o", p(&img)]).0, EXIT_OK);
        let loaded = load_image(&img).unwrap();
        assert_eq!((loaded.width(), loaded.height()), (48, 48));
    }
    let a = targets.join("0.png");
    let (code, out, _) = call(&["metrics", p(&a), p(&a)]);
    assert_eq!(code, EXIT_OK);
    assert!(
        out.contains("mae = 0.000000") && out.contains("psnr = 100.000000") && out.contains("ssim = 1.000000"),
        "{out}"
    );

    let weights = dir.path().join("w.toml");
    std::fs::write(&weights, "photo = 1.0\nlaplacian = 0.0\n").unwrap();
    let fitted = dir.path().join("fit/out.toml");
    let trace = dir.path().join("fit/trace.csv");
    let (code, out, err) = call(&[
        "fit",
        "--scene",
        p(&scene),
        "--targets",
        p(&targets),
        "--iters",
        "3",
        "--weights",
        p(&weights),
        "-o",
        p(&fitted),
        "--trace",
        p(&trace),
        "--log-every",
        "1",
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(out.contains("iterations = 3"));
    let (s, cams) = load_scene(&fitted).unwrap();
    assert_eq!((s.gaussians.len(), cams.len()), (300, 2));
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
}

#[test]
fn fit_rejects_mismatched_targets() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("s.toml");
    assert_eq!(
        call(&[
            "demo",
            "-o",
            p(&scene),
            "--gaussians",
            "50",
            "--size",
            "32",
            "--views",
            "3"
        ])
        .0,
        EXIT_OK
    );
    let targets = dir.path().join("t");
    save_image(&Image::new(32, 32), &targets.join("a.png"), false).unwrap();
    let (code, _, err) = call(&[
        "fit",
        "--scene",
        p(&scene),
        "--targets",
        p(&targets),
        "-o",
        p(&dir.path().join("o.toml")),
    ]);
    assert_eq!(code, EXIT_IO);
    assert!(err.contains("1 target images for 3 cameras"), "{err}");
}

#[test]
fn make_mask_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = Image::new(16, 16);
    for y in 0..8 {
        for x in 0..16 {
            img.set(x, y, [1.0; 3]);
        }
    }
    let prio = dir.path().join("p.png");
    save_image(&img, &prio, false).unwrap();
    let out = dir.path().join("mask.json");
    let (code, text, err) = call(&[
        "make-mask",
        "--priority",
        p(&prio),
        "--budget",
        "40",
        "--frac",
        "0.75",
        "--seed",
        "3",
        "-o",
        p(&out),
    ]);
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(
        text.contains("selected = 40") && text.contains("priority = 30"),
        "{text}"
    );
    let mask: SamplingMask = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(mask.selected.len(), 40);
    assert_eq!(mask.selected.iter().filter(|&&i| i < 128).count(), 30);
}

#[test]
fn errors_go_to_the_diagnostic_stream() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, err) = call(&["metrics", "/no/such/a.png", "/no/such/b.png"]);
    assert_eq!(code, EXIT_IO);
    assert!(out.is_empty() && err.contains("missing"));
    assert_eq!(call(&["render", "x.toml", "--frobnicate"]).0, EXIT_USAGE);
    assert_eq!(call(&["bench"]).0, EXIT_USAGE);
    // a failed render leaves no output file behind
    let target = dir.path().join("never.png");
    assert_eq!(call(&["render", "/no/scene.toml", "-o", p(&target)]).0, EXIT_IO);
    assert!(!target.exists());
}

#[test]
fn verify_passes_and_is_stable() {
    let a = call(&["verify", "--seed", "4", "--cases", "1"]);
    let b = call(&["verify", "--seed", "4", "--cases", "1"]);
    assert_eq!(a.0, EXIT_OK, "{}", a.2);
    assert_eq!(a.1, b.1);
    assert!(a.1.contains("1 of 1 cases passed"));
}
