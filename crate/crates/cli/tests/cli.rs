use std::fs;
use std::path::Path;
use std::process::Command;

use ttnet::format::{encode_wav_pcm, load_model, save_model, FloatWidth};
use ttnet::{Architecture, TensorNet};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn ttnet(args: &[&str]) -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_ttnet")).args(args).output().unwrap();
    Outcome {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) -> Outcome {
    ttnet(&[
        "synth-data",
        "--out",
        path(dir),
        "--utterances",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--seconds",
        "0.25",
    ])
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn count_params_prints_the_layer_table() {
    let r = ttnet(&["count-params", "--convention", "table1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for needle in [
        "10,264",
        "10,256",
        "1,472",
        "512",
        "32,760",
        "2,623,488",
        "2,099,200",
        "65,664",
        "8,256",
        "6,895,808",
    ] {
        assert!(r.stdout.contains(needle), "missing {needle}:\n{}", r.stdout);
    }
    let total = r.stdout.lines().find(|l| l.starts_with("Total")).unwrap();
    assert!(total.contains("4.75e-3"), "{total}");
    assert!(r
        .stdout
        .lines()
        .any(|l| l.starts_with("Layer 4") && l.contains("2.24e-2")));
    assert!(r.stdout.contains("10,255"));
    assert_eq!(ttnet(&["count-params"]).stdout, r.stdout);

    let m = ttnet(&["count-params", "--convention", "model"]);
    assert_eq!(m.code, 0);
    assert!(m.stdout.contains("32,808") && m.stdout.contains("+48"), "{}", m.stdout);
}

#[test]
fn count_params_follows_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("small.conf");
    fs::write(&conf, "architecture = reduced\n").unwrap();
    let r = ttnet(&["count-params", "--config", path(&conf)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let total = r.stdout.lines().find(|l| l.starts_with("Total")).unwrap();
    assert!(!total.contains("32,760"), "{total}");
    fs::write(&conf, "nonsense = 1\n").unwrap();
    let r = ttnet(&["count-params", "--config", path(&conf)]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("line 1"), "{}", r.stderr);
}

#[test]
fn exit_codes() {
    assert_eq!(ttnet(&["--help"]).code, 0);
    assert_eq!(ttnet(&["--version"]).code, 0);
    assert_eq!(ttnet(&[]).code, 1);
    assert_eq!(ttnet(&["no-such-command"]).code, 1);
    assert_eq!(ttnet(&["count-params", "--convention", "bogus"]).code, 1);
    assert_eq!(ttnet(&["gradcheck", "--size", "huge"]).code, 1);
    assert_eq!(
        ttnet(&["synth-data", "--out", "/dev/null/x", "--utterances", "1"]).code,
        1
    );
    assert_eq!(ttnet(&["evaluate", "--data", "/nonexistent"]).code, 1);
}

#[test]
fn gradcheck_passes_repeats_and_catches_faults() {
    let a = ttnet(&["gradcheck", "--size", "small", "--seed", "3"]);
    assert_eq!(a.code, 0, "{}{}", a.stdout, a.stderr);
    assert_eq!(ttnet(&["gradcheck", "--size", "small", "--seed", "3"]).stdout, a.stdout);
    let full = ttnet(&["gradcheck"]);
    assert_eq!(full.code, 0, "{}{}", full.stdout, full.stderr);
    let bad = ttnet(&["gradcheck", "--size", "small", "--inject-fault", "0.01"]);
    assert_eq!(bad.code, 2);
    assert!(bad.stderr.contains("numeric failure"), "{}", bad.stderr);
}

#[test]
fn synth_data_is_byte_reproducible() {
    let (a, b, c) = (
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
        tempfile::tempdir().unwrap(),
    );
    assert_eq!(synth(a.path(), 4, 9).code, 0);
    assert_eq!(synth(b.path(), 4, 9).code, 0);
    assert_eq!(synth(c.path(), 4, 10).code, 0);
    let files = sorted_files(a.path());
    assert_eq!(files.len(), 1 + 4 * 5);
    assert_eq!(files, sorted_files(b.path()));
    assert_ne!(files, sorted_files(c.path()));

    let r = ttnet(&[
        "synth-data",
        "--out",
        path(a.path()),
        "--utterances",
        "2",
        "--snr",
        "-6,9",
        "--seconds",
        "0.25",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(
        r.stdout.contains("snr=-6") && r.stdout.contains("snr=9"),
        "{}",
        r.stdout
    );
}

#[test]
fn empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let r = synth(dir.path(), 0, 1);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    let ev = ttnet(&["evaluate", "--oracle", "--data", path(dir.path())]);
    assert_eq!(ev.code, 1);
    assert!(ev.stderr.contains("no utterances"), "{}", ev.stderr);
    let model = dir.path().join("m.ttnn");
    let tr = ttnet(&["train", "--data", path(dir.path()), "--out", path(&model)]);
    assert_eq!(tr.code, 1);
}

#[test]
fn train_rejects_a_missing_data_directory() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let r = ttnet(&[
        "train",
        "--data",
        path(&missing),
        "--out",
        path(&dir.path().join("m.ttnn")),
    ]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("does not exist"), "{}", r.stderr);
}

#[test]
fn training_is_byte_reproducible_and_reports_losses() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(synth(&data, 2, 5).code, 0);
    let run = |name: &str| {
        let model = dir.path().join(format!("{name}.ttnn"));
        let r = ttnet(&[
            "train",
            "--data",
            path(&data),
            "--out",
            path(&model),
            "--epochs",
            "2",
            "--seed",
            "4",
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        (
            fs::read(&model).unwrap(),
            fs::read_to_string(model.with_extension("report.csv")).unwrap(),
            r.stdout,
        )
    };
    let (m1, rep1, out1) = run("a");
    let (m2, rep2, _) = run("b");
    assert_eq!(m1, m2);
    assert_eq!(rep1, rep2);
    assert_eq!(rep1.lines().count(), 4);
    assert_eq!(rep1.lines().next().unwrap(), "epoch,train_loss,eval_loss,val_loss");
    assert!(out1.contains("epoch   2/2"), "{out1}");
    let model = load_model(&dir.path().join("a.ttnn")).unwrap();
    assert_eq!(model.architecture(), Architecture::fig2());
}

#[test]
fn divergence_exits_with_the_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(synth(&data, 1, 6).code, 0);
    let conf = dir.path().join("hot.conf");
    fs::write(
        &conf,
        "learning_rate = 1e308\nclip_norm = 1e308\nmomentum = 0\ndropout = 0\nepochs = 3\n",
    )
    .unwrap();
    let r = ttnet(&[
        "train",
        "--data",
        path(&data),
        "--config",
        path(&conf),
        "--out",
        path(&dir.path().join("m.ttnn")),
    ]);
    assert_eq!(r.code, 2, "{}{}", r.stdout, r.stderr);
    assert!(r.stderr.contains("diverged"), "{}", r.stderr);
}

#[test]
fn enhance_preserves_length_and_silence() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.ttnn");
    save_model(
        &TensorNet::new(&Architecture::fig2(), 3, 0.5).unwrap(),
        &model,
        FloatWidth::F64,
    )
    .unwrap();
    let data = dir.path().join("data");
    assert_eq!(synth(&data, 1, 7).code, 0);
    let noisy = data.join("utt0000_noisy.wav");
    let (o1, o2) = (dir.path().join("e1.wav"), dir.path().join("e2.wav"));
    for o in [&o1, &o2] {
        let r = ttnet(&[
            "enhance",
            "--model",
            path(&model),
            "--in",
            path(&noisy),
            "--out",
            path(o),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    assert_eq!(fs::read(&o1).unwrap(), fs::read(&o2).unwrap());
    let (a, b) = (
        ttnet::format::read_wav(&noisy).unwrap(),
        ttnet::format::read_wav(&o1).unwrap(),
    );
    assert_eq!(a.len(), b.len());

    let silent = dir.path().join("silent.wav");
    fs::write(&silent, encode_wav_pcm(&vec![0i16; 8000]).unwrap()).unwrap();
    let out = dir.path().join("silent_out.wav");
    let r = ttnet(&[
        "enhance",
        "--model",
        path(&model),
        "--in",
        path(&silent),
        "--out",
        path(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let w = ttnet::format::read_wav(&out).unwrap();
    assert_eq!(w.len(), 8000);
    assert!(w.samples.iter().all(|&v| v == 0.0));

    // A model that does not map 768 features to 64 channels is refused.
    let toy = dir.path().join("toy.ttnn");
    save_model(
        &TensorNet::new(&Architecture::reduced(), 1, 0.5).unwrap(),
        &toy,
        FloatWidth::F64,
    )
    .unwrap();
    let r = ttnet(&[
        "enhance",
        "--model",
        path(&toy),
        "--in",
        path(&noisy),
        "--out",
        path(&out),
    ]);
    assert_eq!(r.code, 1);
    let garbage = dir.path().join("garbage.ttnn");
    fs::write(&garbage, b"TTNN garbage").unwrap();
    assert_eq!(
        ttnet(&[
            "enhance",
            "--model",
            path(&garbage),
            "--in",
            path(&noisy),
            "--out",
            path(&out)
        ])
        .code,
        1
    );
}

#[test]
fn evaluate_writes_a_four_column_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        ttnet(&[
            "synth-data",
            "--out",
            path(&data),
            "--utterances",
            "4",
            "--snr",
            "0,6",
            "--seconds",
            "0.5"
        ])
        .code,
        0
    );
    let model = dir.path().join("m.ttnn");
    save_model(
        &TensorNet::new(&Architecture::fig2(), 3, 0.5).unwrap(),
        &model,
        FloatWidth::F64,
    )
    .unwrap();
    let csv = dir.path().join("m.csv");
    let r = ttnet(&[
        "evaluate",
        "--model",
        path(&model),
        "--data",
        path(&data),
        "--csv",
        path(&csv),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "snr,count,mask_mse,segsnr_gain");
    assert_eq!(lines.len(), 3);
    for l in &lines[1..] {
        let fields: Vec<&str> = l.split(',').collect();
        assert_eq!(fields.len(), 4, "{l}");
        assert_eq!(fields[1], "2");
        assert!(fields[2].parse::<f64>().unwrap() > 0.0);
        fields[3].parse::<f64>().unwrap();
    }
    let again = ttnet(&["evaluate", "--model", path(&model), "--data", path(&data)]);
    assert!(again.stdout.ends_with(&text), "{}", again.stdout);

    let oracle = ttnet(&["evaluate", "--oracle", "--data", path(&data)]);
    assert_eq!(oracle.code, 0);
    let rows: Vec<Vec<String>> = oracle
        .stdout
        .lines()
        .skip_while(|l| !l.starts_with("snr,"))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row[2], "0.000000");
        assert!(row[3].parse::<f64>().unwrap() > 0.0);
    }
    assert_eq!(ttnet(&["evaluate", "--data", path(&data)]).code, 1);
}
