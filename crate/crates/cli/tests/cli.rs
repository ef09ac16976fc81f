use std::path::Path;
use std::process::{Command, Output};

use octuf::io::checkpoint;
use octuf::io::image::save_image;
use octuf::synth::smooth_images;
use octuf::{OctufModel, ParamStore, RunConfig, Tensor};

fn octuf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octuf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config() -> RunConfig {
    RunConfig {
        block_size: 8,
        ratio: 0.25,
        channels: 3,
        iterations: 2,
        ffb_expansion: 2,
        epochs: 2,
        warmup_epochs: 1.0,
        lr_max: 1e-3,
        lr_min: 1e-4,
        batch_size: 2,
        patch_size: 16,
        patches_per_epoch: 4,
        ..RunConfig::default()
    }
}

fn write_images(dir: &Path, count: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in smooth_images::<f32>(count, 24, 20, 3).iter().enumerate() {
        save_image(&dir.join(format!("img{i}.pgm")), img).unwrap();
    }
}

#[test]
fn count_defaults_report_budget() {
    let o = octuf(&["count", "--hw", "64x64"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("name,params,flops\n"));
    let total = out.lines().find(|l| l.starts_with("total,")).unwrap();
    let params: usize = total.split(',').nth(1).unwrap().parse().unwrap();
    assert!((380_000..=420_000).contains(&params), "{params}");
    assert!(stderr(&o).contains("multiply-accumulate counts as 2 FLOPs"));
}

#[test]
fn invalid_config_names_fields_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"ratio": 1.5, "chanels": 4}"#).unwrap();
    let o = octuf(&["count", "--config", arg(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("ratio") && err.contains("chanels"), "{err}");
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(octuf(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(octuf(&["count", "--hw", "64by64"]).status.code(), Some(1));
    assert_eq!(octuf(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_files_exit_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("nope.ckpt");
    let o = octuf(&[
        "reconstruct",
        "--ckpt",
        arg(&ckpt),
        "--input",
        "x.png",
        "--output",
        "y.png",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.ckpt"));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = octuf(&["eval", "--ckpt", arg(&garbage), "--data", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("garbage.ckpt"));
}

/// Full-rate identity sampling with every block reduced to a pass-through of
/// the image channel: the reconstruction is exact.
#[test]
fn reconstruct_lossless_path_reports_infinite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        block_size: 4,
        ratio: 1.0,
        channels: 2,
        iterations: 1,
        ..RunConfig::default()
    };
    let mut m = OctufModel::<f32>::new(cfg.model(), 0).unwrap();
    let set = |p: &mut ParamStore<f32>, id, f: &dyn Fn(usize) -> f32| {
        let shape = p.get(id).shape().to_vec();
        p.set(id, Tensor::from_fn(&shape, f)).unwrap();
    };
    set(&mut m.params, m.sampler.phi, &|i| {
        f32::from(i / 16 == i % 16)
    });
    set(&mut m.params, m.conv0.weight, &|i| f32::from(i == 4));
    set(&mut m.params, m.conv0.bias, &|_| 0.0);
    let it = m.iterations[0].clone();
    set(&mut m.params, it.pgca.rho, &|_| 0.0);
    // output channel 0 takes the gradient-step channel (last input)
    set(&mut m.params, it.pgca.conv_o.weight, &|i| f32::from(i == 1));
    set(&mut m.params, it.pgca.conv_o.bias, &|_| 0.0);
    set(&mut m.params, it.ffn.ffb2.project.weight, &|_| 0.0);
    set(&mut m.params, it.ffn.ffb2.project.bias, &|_| 0.0);
    let ckpt = dir.path().join("identity.ckpt");
    checkpoint::save(&ckpt, &cfg, &m, None).unwrap();

    // 21x14 is not block aligned, so padding and cropping are exercised
    let img = &smooth_images::<f32>(1, 21, 14, 8)[0];
    let input = dir.path().join("in.pgm");
    save_image(&input, img).unwrap();
    let output = dir.path().join("out.png");
    let o = octuf(&[
        "reconstruct",
        "--ckpt",
        arg(&ckpt),
        "--input",
        arg(&input),
        "--output",
        arg(&output),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "psnr_db,ssim\ninf,1.000000\n");
    let back = octuf::io::load_image::<f32>(&output).unwrap();
    assert_eq!(back, octuf::io::load_image::<f32>(&input).unwrap());
}

#[test]
fn train_eval_and_sweep_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_images(&data, 3);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, tiny_config().to_json()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = octuf(&[
            "train",
            "--config",
            arg(&cfg),
            "--data",
            arg(&data),
            "--out",
            arg(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in [
        "metrics.csv",
        "epoch_001.ckpt",
        "epoch_002.ckpt",
        "final.ckpt",
    ] {
        let bytes = std::fs::read(a.join(file)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(file)).unwrap(), "{file}");
    }
    let metrics = std::fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("epoch,step,lr,loss,train_psnr\n"));
    let restored = checkpoint::load(&a.join("final.ckpt")).unwrap();
    assert_eq!(restored.config, tiny_config());
    assert_eq!(restored.optimizer.unwrap().step, 4);

    let ckpt = a.join("final.ckpt");
    let o = octuf(&["eval", "--ckpt", arg(&ckpt), "--data", arg(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = stdout(&o);
    assert!(table.starts_with("image,psnr_db,ssim\nimg0.pgm,"));
    assert!(table.lines().last().unwrap().starts_with("mean,"));

    let sweep = |csv: &Path| {
        let o = octuf(&[
            "noise-sweep",
            "--ckpt",
            arg(&ckpt),
            "--data",
            arg(&data),
            "--sigmas",
            "0,0.05,0.1",
            "--out",
            arg(csv),
            "--seed",
            "3",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(csv).unwrap()
    };
    let first = sweep(&dir.path().join("s1.csv"));
    assert_eq!(first, sweep(&dir.path().join("s2.csv")));
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("sigma,psnr_db,ssim\n0,"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn train_rejects_patch_larger_than_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_images(&data, 1);
    let cfg = dir.path().join("cfg.json");
    let big = RunConfig {
        patch_size: 32,
        ..tiny_config()
    };
    std::fs::write(&cfg, big.to_json()).unwrap();
    let out = dir.path().join("out");
    let o = octuf(&[
        "train",
        "--config",
        arg(&cfg),
        "--data",
        arg(&data),
        "--out",
        arg(&out),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("patch_size"));
}

#[test]
fn gradcheck_f64_single_seed_passes() {
    let o = octuf(&["gradcheck", "--f64", "--seeds", "1"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains(", 0 failed"));
}
