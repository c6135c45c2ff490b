//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::time::Instant;

use rgmorph::datapipe::{dataset_plan, split_counts, synth_dataset, AugFactors, Split};
use rgmorph::dnnae::{
    evaluate, one_hot, train, ArchSpec, DnnaeModel, EpochMetrics, GradProbe, LossSelector,
    Regularizer, TrainConfig,
};
use rgmorph::gmm::{em_fit, match_components, CovType, Covariances, EmOptions, GmmModel};
use rgmorph::neural::{grad_check, Matrix, Mode};
use rgmorph::persistence::{
    decode_checkpoint, decode_dataset, decode_gmm, encode_checkpoint, encode_dataset, encode_gmm,
    encode_pgm,
};
use rgmorph::{Label, RngStream};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn toy_arch() -> ArchSpec {
    ArchSpec {
        input_side: 4,
        ..ArchSpec::symmetric(vec![8], 4, Regularizer::Bn)
    }
}

fn toy_batch(n: usize, seed: u64) -> (Matrix, Vec<Label>) {
    let mut rng = RngStream::new(seed, 0);
    let x = Matrix::from_shape_simple_fn((n, 16), || rng.uniform());
    let labels = (0..n).map(|i| Label::ALL[i % 2]).collect();
    (x, labels)
}

fn gradient_correctness() -> Outcome {
    let t0 = Instant::now();
    let (x, labels) = toy_batch(6, 3);
    let mut worst: Vec<String> = Vec::new();
    let mut ok = true;
    for (name, selector) in [
        ("mse", LossSelector::Mse),
        ("ce", LossSelector::Ce),
        ("combined", LossSelector::Combined),
    ] {
        let mut probe = GradProbe {
            model: DnnaeModel::new(toy_arch(), 21).map_err(|e| e.to_string())?,
            input: x.clone(),
            onehot: one_hot(&labels, 2),
            selector,
            seed: 0,
        };
        let err = grad_check(&mut probe).map_err(|e| e.to_string())?;
        ok &= err < 1e-4;
        worst.push(format!("{name} {err:.2e}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    check(
        ok && secs < 60.0,
        format!("max rel err {} in {secs:.2}s", worst.join(", ")),
    )
}

fn update_routing() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for arch in [
        toy_arch(),
        ArchSpec::symmetric(vec![256, 128, 128], 32, Regularizer::Bn),
    ] {
        let n_in = arch.input_len();
        let mut rng = RngStream::new(9, 0);
        let x = Matrix::from_shape_simple_fn((10, n_in), || rng.uniform());
        let labels: Vec<Label> = (0..10).map(|i| Label::ALL[i % 2]).collect();
        let y = one_hot(&labels, 2);
        let err = |e: rgmorph::Error| e.to_string();

        let mut m = DnnaeModel::new(arch.clone(), 4).map_err(err)?;
        // snapshot after the forward pass, which refreshes BN running statistics
        let pass = m
            .forward(&x, Mode::Train, &mut RngStream::new(1, 0))
            .map_err(err)?;
        let before = m.decoder_layers().to_vec();
        let before_out = m.output_layer().clone();
        let enc_before = m.code_layer().clone();
        m.ce_step(&pass, &y, 1e-3).map_err(err)?;
        let dec_same = m.decoder_layers() == before.as_slice() && *m.output_layer() == before_out;
        let code_moved = *m.code_layer() != enc_before;

        let mut m = DnnaeModel::new(arch.clone(), 4).map_err(err)?;
        let pass = m
            .forward(&x, Mode::Train, &mut RngStream::new(1, 0))
            .map_err(err)?;
        let head_before = m.head.clone();
        m.mse_step(&pass, &x, 1e-3).map_err(err)?;
        let head_same = m.head == head_before;
        ok &= dec_same && head_same && code_moved;
        detail.push(format!(
            "input {n_in}: decoder unchanged after CE {dec_same}, head unchanged after MSE {head_same}"
        ));
    }
    check(ok, detail.join("; "))
}

fn three_blobs(rng: &mut RngStream, centers: &[[f64; 2]], per: usize, scale: f64) -> Matrix {
    let mut x = Matrix::zeros((centers.len() * per, 2));
    for (c, mu) in centers.iter().enumerate() {
        for i in 0..per {
            x[[c * per + i, 0]] = mu[0] + scale * rng.normal();
            x[[c * per + i, 1]] = mu[1] + scale * rng.normal();
        }
    }
    x
}

fn em_monotonicity() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = RngStream::new(seed, 0x3);
        let x = three_blobs(&mut rng, &[[0.0, 0.0], [2.5, 0.5], [0.5, 3.0]], 100, 1.0);
        let cov_type = if seed % 2 == 0 {
            CovType::Full
        } else {
            CovType::Diag
        };
        let fit = em_fit(
            &x,
            3,
            &EmOptions {
                seed,
                cov_type,
                ..EmOptions::default()
            },
        )
        .map_err(|e| e.to_string())?;
        for w in fit.log_lik_trace.windows(2) {
            worst = worst.max(w[0] - w[1]);
        }
    }
    check(
        worst <= 1e-9,
        format!("largest per-iteration decrease {worst:.3e} over 100 runs"),
    )
}

fn gmm_recovery() -> Outcome {
    let truth = Matrix::from_shape_vec((3, 2), vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0]).unwrap();
    let mut rng = RngStream::new(2024, 0);
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let x = three_blobs(&mut rng, &centers, 1000, 1.0);
    let fit = em_fit(
        &x,
        3,
        &EmOptions {
            seed: 5,
            cov_type: CovType::Full,
            ..EmOptions::default()
        },
    )
    .map_err(|e| e.to_string())?;
    let g = &fit.model;
    let idx = match_components(&truth, &g.means);
    let (mut mean_err, mut w_err) = (0.0f64, 0.0f64);
    for (t, &f) in idx.iter().enumerate() {
        let d = (&truth.row(t) - &g.means.row(f)).mapv(f64::abs);
        mean_err = mean_err.max(d.fold(0.0, |a: f64, &b| a.max(b)));
        w_err = w_err.max((g.weights[f] - 1.0 / 3.0).abs());
    }
    check(
        mean_err <= 0.1 && w_err <= 0.05,
        format!("max mean error {mean_err:.4}, max weight error {w_err:.4}"),
    )
}

fn density_normalization() -> Outcome {
    let g = GmmModel {
        weights: vec![0.2, 0.5, 0.3],
        means: Matrix::from_shape_vec((3, 1), vec![-3.0, 0.5, 4.0]).unwrap(),
        covariances: Covariances::Diag(
            Matrix::from_shape_vec((3, 1), vec![0.25, 1.0, 2.25]).unwrap(),
        ),
        ridge: 0.0,
    };
    let (lo, hi) = (-3.0 - 10.0 * 0.5, 4.0 + 10.0 * 1.5);
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let grid = Matrix::from_shape_fn((n + 1, 1), |(i, _)| lo + i as f64 * h);
    let dens = g
        .log_density(&grid)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(f64::exp)
        .collect::<Vec<_>>();
    let integral = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[n]));
    check(
        (integral - 1.0).abs() <= 1e-3,
        format!("integral {integral:.8}"),
    )
}

struct DeskRun {
    bn_history: Vec<EpochMetrics>,
    ratio: f64,
    accuracy: f64,
    separability: f64,
    secs: f64,
}

fn desk_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 30,
        batch_size: 50,
        seed: 42,
        ..TrainConfig::default()
    }
}

fn desk_run() -> rgmorph::Result<DeskRun> {
    let t0 = Instant::now();
    let ds = synth_dataset((200, 50, 50), 42);
    let (tr, va, te) = (
        ds.subset(&[Split::Train]),
        ds.subset(&[Split::Val]),
        ds.subset(&[Split::Test]),
    );
    let arch = ArchSpec::symmetric(vec![256, 128, 128], 32, Regularizer::Bn);
    let mut model = DnnaeModel::new(arch, 42)?;
    let before = evaluate(&model, &te)?.mse;
    let bn_history = train(&mut model, &tr, &va, &desk_cfg())?;
    let report = evaluate(&model, &te)?;
    let secs = t0.elapsed().as_secs_f64();

    let mut gmms = Vec::new();
    for label in Label::ALL {
        let set = ds.select(|s| s.split == Split::Train && s.label == label);
        let codes = model.encode(&set.pixels)?;
        let opts = EmOptions {
            seed: 1,
            ..EmOptions::default()
        };
        gmms.push(em_fit(&codes, 3, &opts)?.model);
    }
    let codes = model.encode(&te.pixels)?;
    let d_fri = gmms[0].log_density(&codes)?;
    let d_frii = gmms[1].log_density(&codes)?;
    let own = te
        .labels
        .iter()
        .enumerate()
        .filter(|&(i, l)| match l {
            Label::Fri => d_fri[i] > d_frii[i],
            Label::Frii => d_frii[i] > d_fri[i],
        })
        .count();
    Ok(DeskRun {
        bn_history,
        ratio: report.mse / before,
        accuracy: report.accuracy,
        separability: own as f64 / te.len() as f64,
        secs,
    })
}

fn bn_vs_dropout(bn: &[EpochMetrics]) -> Outcome {
    let ds = synth_dataset((200, 50, 50), 42);
    let (tr, va) = (ds.subset(&[Split::Train]), ds.subset(&[Split::Val]));
    let mut arch = ArchSpec::symmetric(vec![256, 128, 128], 32, Regularizer::Dropout);
    arch.keep_prob = 0.5;
    let mut model = DnnaeModel::new(arch, 42).map_err(|e| e.to_string())?;
    let dropout = train(&mut model, &tr, &va, &desk_cfg()).map_err(|e| e.to_string())?;
    let (b, d) = (bn[29].val_mse, dropout[29].val_mse);
    check(
        b <= d,
        format!("epoch-30 val mse: bn {b:.3}, dropout {d:.3}"),
    )
}

fn split_arithmetic() -> Outcome {
    let counts = split_counts(192);
    let labels: Vec<Label> = (0..192).map(|_| Label::Fri).collect();
    let plan = dataset_plan(
        &labels,
        AugFactors {
            fri: 200,
            frii: 400,
        },
        0,
    )
    .map_err(|e| e.to_string())?;
    let n = |s: Split| plan.iter().filter(|r| r.1 == s).count();
    let (tr, va, te) = (n(Split::Train), n(Split::Val), n(Split::Test));
    check(
        counts == (123, 31, 38) && (tr, va, te) == (24_600, 6_200, 38),
        format!("split {counts:?}, augmented train {tr}, val {va}, test {te}"),
    )
}

/// Synth, train, fit both mixtures, generate; returns every artifact's bytes.
fn pipeline_artifacts(seed: u64) -> rgmorph::Result<Vec<Vec<u8>>> {
    let ds = synth_dataset((30, 10, 10), seed);
    let (tr, va) = (ds.subset(&[Split::Train]), ds.subset(&[Split::Val]));
    let arch = ArchSpec::symmetric(vec![64, 32], 8, Regularizer::Bn);
    let mut model = DnnaeModel::new(arch, seed)?;
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 20,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &tr, &va, &cfg)?;
    let mut out = vec![encode_dataset(&ds)?, encode_checkpoint(&model, true)];
    for label in Label::ALL {
        let set = ds.select(|s| s.split == Split::Train && s.label == label);
        let g = em_fit(
            &model.encode(&set.pixels)?,
            3,
            &EmOptions {
                seed,
                ..EmOptions::default()
            },
        )?
        .model;
        out.push(encode_gmm(&g));
        let mut rng = RngStream::for_parts(seed, &[label.index() as u64]);
        for img in rgmorph::cli::generate_images(&model, &g, 4, &mut rng)? {
            out.push(encode_pgm(&img)?);
        }
    }
    Ok(out)
}

fn determinism_and_persistence() -> Outcome {
    let err = |e: rgmorph::Error| e.to_string();
    let a = pipeline_artifacts(7).map_err(err)?;
    let b = pipeline_artifacts(7).map_err(err)?;
    let identical = a == b;

    let ds_rt = encode_dataset(&decode_dataset(&a[0]).map_err(err)?).map_err(err)? == a[0];
    let ck_rt = encode_checkpoint(&decode_checkpoint(&a[1]).map_err(err)?, true) == a[1];
    let gm_rt = encode_gmm(&decode_gmm(&a[2]).map_err(err)?) == a[2];

    let ds = synth_dataset((30, 10, 10), 8);
    let (tr, va) = (ds.subset(&[Split::Train]), ds.subset(&[Split::Val]));
    let arch = ArchSpec::symmetric(vec![64, 32], 8, Regularizer::Bn);
    let cfg = |epochs, start_epoch| TrainConfig {
        epochs,
        start_epoch,
        batch_size: 20,
        seed: 8,
        ..TrainConfig::default()
    };
    let mut full = DnnaeModel::new(arch.clone(), 8).map_err(err)?;
    let straight = train(&mut full, &tr, &va, &cfg(4, 0)).map_err(err)?;
    let mut first = DnnaeModel::new(arch, 8).map_err(err)?;
    let mut resumed = train(&mut first, &tr, &va, &cfg(2, 0)).map_err(err)?;
    let mut reloaded = decode_checkpoint(&encode_checkpoint(&first, true)).map_err(err)?;
    resumed.extend(train(&mut reloaded, &tr, &va, &cfg(2, 2)).map_err(err)?);
    let resume_ok = resumed == straight && reloaded == full;

    check(
        identical && ds_rt && ck_rt && gm_rt && resume_ok,
        format!(
            "{} artifacts identical {identical}; round trips dataset {ds_rt} checkpoint {ck_rt} \
             gmm {gm_rt}; resume matches {resume_ok}",
            a.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "update routing", update_routing()),
        (3, "EM monotonicity", em_monotonicity()),
        (4, "GMM recovery", gmm_recovery()),
        (5, "density normalization", density_normalization()),
    ];
    match desk_run() {
        Ok(run) => {
            results.push((
                6,
                "desk-scale end to end",
                check(
                    run.ratio <= 0.25 && run.accuracy >= 0.9 && run.secs < 600.0,
                    format!(
                        "test mse ratio {:.4}, accuracy {:.3}, {:.1}s",
                        run.ratio, run.accuracy, run.secs
                    ),
                ),
            ));
            results.push((
                7,
                "code-class separability",
                check(
                    run.separability >= 0.8,
                    format!("own-class preference {:.3}", run.separability),
                ),
            ));
            results.push((8, "BN vs dropout", bn_vs_dropout(&run.bn_history)));
        }
        Err(e) => {
            for (i, name) in [
                (6, "desk-scale end to end"),
                (7, "code-class separability"),
                (8, "BN vs dropout"),
            ] {
                results.push((i, name, Err(format!("desk run failed: {e}"))));
            }
        }
    }
    results.push((9, "split arithmetic", split_arithmetic()));
    results.push((
        10,
        "determinism and persistence",
        determinism_and_persistence(),
    ));

    let mut failed = 0;
    for (i, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("PASS {i:>2} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {i:>2} {name}: {d}")
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
