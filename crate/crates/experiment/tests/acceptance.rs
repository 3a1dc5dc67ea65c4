//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Numeric arguments select criteria, e.g.
//! `cargo test --test acceptance -- 1 4 5`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use mtseg_core::fdk::{fdk_reconstruct, nrmse};
use mtseg_core::patching::{extract_unchecked, reaggregate};
use mtseg_core::projector::ray_integral;
use mtseg_core::{make_phantom, simulate_projections, ConeBeamGeometry, Grid, PatchSpec, Volume3};
use mtseg_experiment::dataset::{build_dataset, Dataset};
use mtseg_experiment::report::{read_results_csv, RESULTS_FILE, SUMMARY_CSV, SUMMARY_JSON};
use mtseg_experiment::run::RUNS_FILE;
use mtseg_experiment::{run_experiment, select_recon_target, ExperimentConfig, Mode, Outcome, RunResult, Scale};
use mtseg_model::losses::{bce, dice_score, l2, soft_dice_loss, BCE_CLAMP, DICE_EPSILON};
use mtseg_model::{loss1, loss2, LossConfig, MtUnet, UnetConfig};
use mtseg_tensor::gradcheck::check_gradients;
use mtseg_tensor::{BnState, Graph, Mode as BnMode, Padding, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn criterion(n: usize, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {n} [{name}] {}: {} ({:.1} s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail,
        start.elapsed().as_secs_f64()
    );
    v.pass
}

// ---------------------------------------------------------------- 1

/// Chords of random rays through a uniform unit cube: entry and exit points
/// are drawn on two different faces, so the chord length is their distance.
fn projector_oracle() -> Verdict {
    let start = Instant::now();
    let n = 7;
    let cube = Volume3::filled(Grid::centered([n; 3], [1.0 / n as f64; 3]).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let face_point = |face: usize, rng: &mut ChaCha8Rng| -> [f64; 3] {
        let (axis, side) = (face / 2, if face % 2 == 0 { -0.5 } else { 0.5 });
        std::array::from_fn(|a| if a == axis { side } else { rng.random_range(-0.49..0.49) })
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f0 = rng.random_range(0..6);
        let f1 = (f0 + rng.random_range(1..6)) % 6;
        let (entry, exit) = (face_point(f0, &mut rng), face_point(f1, &mut rng));
        let d: [f64; 3] = std::array::from_fn(|a| exit[a] - entry[a]);
        let chord = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        let p0 = std::array::from_fn(|a| entry[a] - 0.5 * d[a]);
        let p1 = std::array::from_fn(|a| exit[a] + 0.5 * d[a]);
        let got = ray_integral(&cube, p0, p1);
        worst = worst.max((got - chord).abs() / chord);
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-6 && secs < 5.0,
        format!("max relative error {worst:.2e} over 100 rays (limit 1e-6), {secs:.2} s (limit 5 s)"),
    )
}

// ---------------------------------------------------------------- 2

fn fdk_ladder() -> Verdict {
    let start = Instant::now();
    let (phantom, _) = make_phantom([48; 3], 0).unwrap();
    let grid = *phantom.grid();
    let ladder = [32, 64, 128, 256, 490];
    let errs: Vec<f64> = ladder
        .iter()
        .map(|&n_p| {
            let p = simulate_projections(&phantom, &ConeBeamGeometry::default_for(&grid, n_p)).unwrap();
            nrmse(&fdk_reconstruct(&p, grid.dims, grid.spacing).unwrap(), &phantom)
        })
        .collect();
    let inversions: Vec<f64> = errs.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[1] - w[0]) / w[0]).collect();
    let monotone = inversions.len() <= 1 && inversions.iter().all(|&r| r <= 0.02);
    let ratio = errs[4] / errs[0];
    let secs = start.elapsed().as_secs_f64();
    let table: Vec<String> = ladder.iter().zip(&errs).map(|(n, e)| format!("{n}:{e:.4}")).collect();
    verdict(
        monotone && ratio < 0.5 && secs < 600.0,
        format!(
            "NRMSE {}; {} inversion(s); NRMSE(490)/NRMSE(32) = {ratio:.3} (limit 0.5); {secs:.0} s (limit 600 s)",
            table.join(" "),
            inversions.len()
        ),
    )
}

// ---------------------------------------------------------------- 3

fn random(shape: [usize; 5], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..g.value(y).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    g.weighted_sum(y, &w).unwrap()
}

fn gradient_suite() -> Verdict {
    const ELEMENTWISE: f64 = 1e-6;
    const GENERAL: f64 = 1e-4;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut results: Vec<(&str, f64, f64)> = Vec::new();
    let mut check = |name, tol, inputs: &[Tensor<f64>], build: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var| {
        results.push((name, check_gradients(inputs, h, build).relative(), tol));
    };

    let x = random([2, 2, 4, 4, 4], -1.0, 1.0, &mut rng);
    let w = random([3, 2, 3, 3, 3], -1.0, 1.0, &mut rng);
    let b = random([1, 3, 1, 1, 1], -1.0, 1.0, &mut rng);
    check("conv3d same", GENERAL, &[x.clone(), w.clone(), b], &|g, v| {
        let y = g.conv3d(v[0], v[1], Some(v[2]), Padding::Same).unwrap();
        readout(g, y, 1)
    });
    check("conv3d valid", GENERAL, &[x.clone(), w], &|g, v| {
        let y = g.conv3d(v[0], v[1], None, Padding::None).unwrap();
        readout(g, y, 2)
    });
    let w1 = random([2, 2, 1, 1, 1], -1.0, 1.0, &mut rng);
    check("conv3d 1x1x1", GENERAL, &[x.clone(), w1], &|g, v| {
        let y = g.conv3d(v[0], v[1], None, Padding::Same).unwrap();
        readout(g, y, 3)
    });

    // Distinct values 0.01 apart keep every pooling window's argmax fixed.
    let n = 2 * 2 * 4 * 4 * 4;
    let mut ramp: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        ramp.swap(i, rng.random_range(0..=i));
    }
    check("maxpool", GENERAL, &[Tensor::new([2, 2, 4, 4, 4], ramp).unwrap()], &|g, v| {
        let y = g.maxpool3d_2(v[0]).unwrap();
        readout(g, y, 4)
    });

    let gamma = random([1, 2, 1, 1, 1], 0.5, 1.5, &mut rng);
    let beta = random([1, 2, 1, 1, 1], -1.0, 1.0, &mut rng);
    for (name, mode) in [("batchnorm train", BnMode::Train), ("batchnorm eval", BnMode::Eval)] {
        check(name, GENERAL, &[x.clone(), gamma.clone(), beta.clone()], &|g, v| {
            let mut state = BnState {
                running_mean: vec![0.1, -0.2],
                running_var: vec![0.5, 1.5],
            };
            let y = g.batchnorm3d(v[0], v[1], v[2], &mut state, mode).unwrap();
            readout(g, y, 5)
        });
    }

    let small = random([1, 2, 2, 3, 2], -1.0, 1.0, &mut rng);
    let other = random([1, 2, 2, 3, 2], -1.0, 1.0, &mut rng);
    let one_channel = random([1, 1, 2, 3, 2], -1.0, 1.0, &mut rng);
    // Away from the kink: |x| >= 0.1 while h is 1e-5.
    let away = small.map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
    check("relu", ELEMENTWISE, &[away], &|g, v| {
        let y = g.relu(v[0]);
        readout(g, y, 6)
    });
    check("sigmoid", ELEMENTWISE, &[small.clone()], &|g, v| {
        let y = g.sigmoid(v[0]);
        readout(g, y, 7)
    });
    check("add", ELEMENTWISE, &[small.clone(), other.clone()], &|g, v| {
        let y = g.add(v[0], v[1]).unwrap();
        readout(g, y, 8)
    });
    check("scale", ELEMENTWISE, &[small.clone()], &|g, v| {
        let y = g.scale(v[0], 0.3);
        readout(g, y, 9)
    });
    check("lincomb", ELEMENTWISE, &[small.clone(), other.clone()], &|g, v| {
        let y = g.lincomb(&[(v[0], 0.8), (v[1], 0.2)]).unwrap();
        readout(g, y, 10)
    });
    check("concat", ELEMENTWISE, &[small.clone(), one_channel], &|g, v| {
        let y = g.concat_channels(v[0], v[1]).unwrap();
        readout(g, y, 11)
    });
    check("upsample", ELEMENTWISE, &[small.clone()], &|g, v| {
        let y = g.upsample3d_2(v[0]);
        readout(g, y, 12)
    });

    let shape = [2, 2, 2, 3, 2];
    let p = random(shape, 0.05, 0.95, &mut rng);
    let t = Tensor::new(shape, (0..48).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
    let r = random([2, 1, 2, 3, 2], -1.0, 1.0, &mut rng);
    let y = random([2, 1, 2, 3, 2], -1.0, 1.0, &mut rng);
    let cfg = LossConfig::default();
    check("bce", GENERAL, &[p.clone()], &|g, v| {
        let t = g.constant(t.clone());
        bce(g, v[0], t, BCE_CLAMP).unwrap()
    });
    check("soft dice", GENERAL, &[p.clone()], &|g, v| {
        let t = g.constant(t.clone());
        soft_dice_loss(g, v[0], t, DICE_EPSILON).unwrap()
    });
    check("l2", GENERAL, &[r.clone(), y.clone()], &|g, v| l2(g, v[0], v[1]).unwrap());
    check("loss1", GENERAL, &[p.clone()], &|g, v| {
        let t = g.constant(t.clone());
        loss1(g, v[0], t, &cfg).unwrap()
    });
    check("loss2", GENERAL, &[p, r], &|g, v| {
        let (t, y) = (g.constant(t.clone()), g.constant(y.clone()));
        loss2(g, v[0], t, v[1], y, &cfg).unwrap()
    });

    // Three filters per level, both heads, trained-mode batch norm.
    let model = MtUnet::<f64>::new(&UnetConfig {
        in_channels: 1,
        encoder_filters: vec![3, 3, 3, 3],
        seg_classes: 2,
        multitask: true,
        seed: 5,
    })
    .unwrap();
    let xin = random([2, 1, 8, 8, 8], 0.0, 1.0, &mut rng);
    let seg_t = Tensor::new([2, 2, 8, 8, 8], (0..2048).map(|_| rng.random_range(0..2) as f64).collect()).unwrap();
    let rec_t = random([2, 1, 8, 8, 8], 0.0, 1.0, &mut rng);
    let bn = model.bn_states().to_vec();
    let err = check_gradients(model.params(), 1e-6, |g, vars| {
        let x = g.constant(xin.clone());
        let mut bn = bn.clone();
        let out = model.forward_with(g, vars, &mut bn, x, BnMode::Train).unwrap();
        let (st, rt) = (g.constant(seg_t.clone()), g.constant(rec_t.clone()));
        loss2(g, out.seg, st, out.recon.unwrap(), rt, &cfg).unwrap()
    });
    results.push(("micro-model", err.relative(), GENERAL));

    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = results
        .iter()
        .filter(|(_, e, tol)| !(e < tol))
        .map(|(n, e, tol)| format!("{n} {e:.2e} >= {tol:.0e}"))
        .collect();
    let worst = |tol: f64| results.iter().filter(|r| r.2 == tol).map(|r| r.1).fold(0.0, f64::max);
    verdict(
        failed.is_empty() && secs < 120.0,
        format!(
            "{} checks in f64, worst elementwise {:.2e} (limit 1e-6), worst other {:.2e} (limit 1e-4){}; {secs:.0} s (limit 120 s)",
            results.len(),
            worst(ELEMENTWISE),
            worst(GENERAL),
            if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 4

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..100 {
        let seg = [2, 2, 4, 4, 4];
        let rec = [2, 1, 4, 4, 4];
        let n: usize = seg.iter().product();
        let p = Tensor::<f32>::new(seg, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        let t = Tensor::<f32>::new(seg, (0..n).map(|_| rng.random_range(0..2) as f32).collect()).unwrap();
        let r = Tensor::<f32>::new(rec, (0..n / 2).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let y = Tensor::<f32>::new(rec, (0..n / 2).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut g = Graph::<f32>::new();
        let (pv, tv, rv, yv) = (g.constant(p), g.constant(t), g.constant(r), g.constant(y));
        for alpha in [1.0, 0.0] {
            let cfg = LossConfig {
                alpha,
                ..LossConfig::default()
            };
            let both = loss2(&mut g, pv, tv, rv, yv, &cfg).unwrap();
            let alone = if alpha == 1.0 {
                loss1(&mut g, pv, tv, &cfg).unwrap()
            } else {
                l2(&mut g, rv, yv).unwrap()
            };
            mismatches += (g.value(both).item().to_bits() != g.value(alone).item().to_bits()) as usize;
        }
    }
    let hand: [(&str, Vec<f32>, Vec<bool>, f64); 5] = [
        ("identical", vec![0.9, 0.1, 0.7], vec![true, false, true], 1.0),
        ("both empty", vec![0.1, 0.2], vec![false, false], 1.0),
        ("disjoint", vec![0.9, 0.1], vec![false, true], 0.0),
        ("prediction empty", vec![0.1, 0.4], vec![true, true], 0.0),
        ("half overlap", vec![0.9, 0.8, 0.1], vec![false, true, true], 0.5),
    ];
    let wrong: Vec<String> = hand
        .iter()
        .filter(|(_, p, t, want)| dice_score(p, t, 0.5) != *want)
        .map(|(name, p, t, want)| format!("{name}: {} != {want}", dice_score(p, t, 0.5)))
        .collect();
    verdict(
        mismatches == 0 && wrong.is_empty(),
        format!(
            "{mismatches} bitwise mismatches in 200 endpoint comparisons; dice hand cases {}",
            if wrong.is_empty() { "exact (1.0, 1.0, 0.0, 0.0, 0.5)".to_string() } else { wrong.join(", ") }
        ),
    )
}

// ---------------------------------------------------------------- 5

fn patch_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut exact, mut clamped, mut padded) = (0, 0, 0);
    for i in 0..20 {
        let dims: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..24));
        let size: [usize; 3] = std::array::from_fn(|a| {
            // Every fourth spec is larger than the volume on some axis.
            if i % 4 == 3 && a == 0 {
                dims[0] + rng.random_range(1..4)
            } else {
                rng.random_range(1..=dims[a].min(10))
            }
        });
        let stride: [usize; 3] = std::array::from_fn(|a| rng.random_range(1..=size[a]));
        let spec = PatchSpec {
            size,
            stride,
            pad_value: -3.0,
        };
        let data: Vec<f32> = (0..dims.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let patches = extract_unchecked(&data, dims, &spec);
        let origins: Vec<[usize; 3]> = patches.iter().map(|p| p.origin).collect();
        let outputs: Vec<Vec<f32>> = patches.into_iter().map(|p| p.values).collect();
        let back = reaggregate(&outputs, &origins, size, dims).unwrap();
        let same = back.len() == data.len() && back.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits());
        exact += same as usize;
        clamped += (0..3).any(|a| dims[a] > size[a] && (dims[a] - size[a]) % stride[a] != 0) as usize;
        padded += (0..3).any(|a| size[a] > dims[a]) as usize;
    }
    verdict(
        exact == 20 && clamped > 0 && padded > 0,
        format!("{exact}/20 bitwise round trips; {clamped} with a clamped last patch, {padded} with a patch larger than the volume"),
    )
}

// ---------------------------------------------------------------- 6

fn target_policy(ds: &Dataset) -> Verdict {
    let bits = |v: Option<Volume3>| v.unwrap().values().iter().map(|x| x.to_bits()).collect::<Vec<u32>>();
    let mut same = 0;
    for case in &ds.manifest.cases {
        let b = bits(select_recon_target(ds, Mode::MtBest, case, 490).unwrap());
        let c = bits(select_recon_target(ds, Mode::MtCurrent, case, 490).unwrap());
        same += (b == c) as usize;
    }
    let n = ds.manifest.cases.len();
    // Control: at a lower quality the two policies must differ.
    let case = &ds.manifest.cases[0];
    let differ_at_32 = bits(select_recon_target(ds, Mode::MtBest, case, 32).unwrap())
        != bits(select_recon_target(ds, Mode::MtCurrent, case, 32).unwrap());
    verdict(
        same == n && differ_at_32,
        format!("{same}/{n} cases bitwise identical at n_p=490; targets differ at n_p=32: {differ_at_32}"),
    )
}

// ---------------------------------------------------------------- 7

const DESK_LEVELS: [usize; 2] = [490, 32];

fn desk_configs(root: &Path) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for mode in Mode::ALL {
        for n_p in DESK_LEVELS {
            out.push(ExperimentConfig {
                mode,
                scale: Scale::Patched,
                n_p,
                repeats: 4,
                n_cases: 20,
                dims: 32,
                levels: DESK_LEVELS.to_vec(),
                dataset_root: root.join("data"),
                results_dir: root.join(format!("results/{mode}_patched_{n_p}")),
                ..ExperimentConfig::default()
            });
        }
    }
    out
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

/// Problems with one configuration's output files.
fn schema_problems(cfg: &ExperimentConfig, n_test: usize) -> Vec<String> {
    let dir = &cfg.results_dir;
    let mut bad = Vec::new();
    let mut expect = |ok: bool, what: String| {
        if !ok {
            bad.push(format!("{}: {what}", dir.display()));
        }
    };

    let results = dir.join(RESULTS_FILE);
    expect(header(&results) == "mode,scale,n_p,seed,case_id,channel,dice", "results.csv header".into());
    let rows = match read_results_csv(&results) {
        Ok(r) => r,
        Err(e) => {
            expect(false, format!("results.csv unreadable: {e}"));
            return bad;
        }
    };
    expect(rows.len() == n_test * 2 * cfg.repeats, format!("{} result rows", rows.len()));
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    expect(seeds == (0..cfg.repeats as u64).collect(), format!("seeds {seeds:?}"));
    expect(
        rows.iter().all(|r| {
            r.mode == cfg.mode
                && r.scale == cfg.scale
                && r.n_p == cfg.n_p
                && ["liver", "tumor"].contains(&r.channel.as_str())
                && (0.0..=1.0).contains(&r.dice)
        }),
        "row fields".into(),
    );

    expect(
        header(&dir.join(SUMMARY_CSV)) == "mode,scale,n_p,channel,count,mean,median,q1,q3,min,max",
        "summary.csv header".into(),
    );
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join(SUMMARY_JSON)).unwrap()).unwrap();
    let map = json.as_object().cloned().unwrap_or_default();
    for channel in ["liver", "tumor"] {
        let key = format!("{}/patched/{}/{channel}", cfg.mode, cfg.n_p);
        let Some(entry) = map.get(&key) else {
            expect(false, format!("summary.json lacks {key}"));
            continue;
        };
        let num = |f: &str| entry[f].as_f64().unwrap_or(f64::NAN);
        let dice: Vec<f64> = rows.iter().filter(|r| r.channel == channel).map(|r| r.dice).collect();
        let mean = dice.iter().sum::<f64>() / dice.len() as f64;
        expect(entry["mode"] == cfg.mode.as_str() && entry["channel"] == channel, format!("{key} labels"));
        expect(entry["count"].as_u64() == Some(dice.len() as u64), format!("{key} count"));
        expect((num("mean") - mean).abs() < 1e-12, format!("{key} mean {} vs {mean}", num("mean")));
        let order = [num("min"), num("q1"), num("median"), num("q3"), num("max")];
        expect(order.windows(2).all(|w| w[0] <= w[1]), format!("{key} order statistics {order:?}"));
    }
    expect(map.len() == 2, format!("summary.json has {} entries", map.len()));

    match serde_json::from_slice::<Vec<RunResult>>(&std::fs::read(dir.join(RUNS_FILE)).unwrap()) {
        Ok(runs) => {
            expect(runs.len() == cfg.repeats, format!("{} runs", runs.len()));
            expect(
                runs.iter().all(|r| r.training.epoch_losses.len() == cfg.epochs && r.cases.len() == n_test),
                "runs.json contents".into(),
            );
        }
        Err(e) => expect(false, format!("runs.json: {e}")),
    }
    bad
}

struct Desk {
    configs: Vec<ExperimentConfig>,
    outcomes: Vec<Outcome>,
}

fn desk_run(root: &Path, dataset_secs: f64) -> (Verdict, Option<Desk>) {
    let start = Instant::now();
    let configs = desk_configs(root);
    let outcomes: Vec<Outcome> = configs.iter().map(|c| run_experiment(c).unwrap()).collect();
    let secs = dataset_secs + start.elapsed().as_secs_f64();

    let mut worst_ratio = 0.0f64;
    let mut loss_failures = Vec::new();
    for (cfg, out) in configs.iter().zip(&outcomes) {
        for r in &out.runs {
            let ratio = r.training.final_loss / r.training.initial_loss;
            worst_ratio = worst_ratio.max(ratio);
            if !(ratio < 0.5) {
                loss_failures.push(format!("{}/{} seed {}: {ratio:.3}", cfg.mode, cfg.n_p, r.seed));
            }
        }
    }

    // Mean liver Dice per (mode, n_p), straight from the rows.
    let mut liver: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for out in &outcomes {
        for r in out.rows.iter().filter(|r| r.channel == "liver") {
            let e = liver.entry((r.mode.to_string(), r.n_p)).or_default();
            e.0 += r.dice;
            e.1 += 1;
        }
    }
    let mean = |mode: Mode, n_p: usize| {
        let (s, n) = liver[&(mode.to_string(), n_p)];
        s / n as f64
    };
    let mut trend_ok = true;
    let mut trend = Vec::new();
    for mode in Mode::ALL {
        let (hi, lo) = (mean(mode, 490), mean(mode, 32));
        trend_ok &= hi > lo;
        trend.push(format!("{mode} {hi:.4}{}{lo:.4}", if hi > lo { ">" } else { "<=" }));
    }

    let n_test = outcomes[0].split.test.len();
    let split_ok = outcomes.iter().all(|o| o.split == outcomes[0].split);
    let schema: Vec<String> = configs.iter().flat_map(|c| schema_problems(c, n_test)).collect();
    let pass = loss_failures.is_empty() && trend_ok && schema.is_empty() && split_ok && secs <= 3600.0;
    let detail = format!(
        "{} runs; final/initial loss worst {worst_ratio:.3} (limit 0.5){}; mean liver Dice 490 vs 32: {}; \
         schemas {}; one split across configs: {split_ok}; {:.1} min (limit 60)",
        outcomes.iter().map(|o| o.runs.len()).sum::<usize>(),
        if loss_failures.is_empty() { String::new() } else { format!(" [{}]", loss_failures.join(", ")) },
        trend.join(", "),
        if schema.is_empty() { "valid".to_string() } else { format!("INVALID: {}", schema.join("; ")) },
        secs / 60.0
    );
    (verdict(pass, detail), Some(Desk { configs, outcomes }))
}

// ---------------------------------------------------------------- 8

fn output_files(cfg: &ExperimentConfig) -> Vec<(PathBuf, Vec<u8>)> {
    [RESULTS_FILE, SUMMARY_CSV]
        .iter()
        .map(|f| {
            let p = cfg.results_dir.join(f);
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect()
}

fn reproducibility(desk: &Desk) -> Verdict {
    let before: Vec<_> = desk.configs.iter().flat_map(output_files).collect();
    for cfg in &desk.configs {
        run_experiment(cfg).unwrap();
    }
    let after: Vec<_> = desk.configs.iter().flat_map(output_files).collect();
    let differing: Vec<String> = before
        .iter()
        .zip(&after)
        .filter(|(a, b)| a.1 != b.1)
        .map(|(a, _)| a.0.display().to_string())
        .collect();
    let rows_match = desk
        .configs
        .iter()
        .zip(&desk.outcomes)
        .all(|(c, o)| read_results_csv(&c.results_dir.join(RESULTS_FILE)).unwrap() == o.rows);
    verdict(
        differing.is_empty() && rows_match,
        format!(
            "{} of {} result/summary CSVs bitwise identical after rerunning every configuration{}",
            before.len() - differing.len(),
            before.len(),
            if differing.is_empty() { String::new() } else { format!("; differ: {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut outcomes: Vec<bool> = Vec::new();

    if wants(1) {
        outcomes.push(criterion(1, "projector analytic oracle", projector_oracle));
    }
    if wants(2) {
        outcomes.push(criterion(2, "FDK quality ladder", fdk_ladder));
    }
    if wants(3) {
        outcomes.push(criterion(3, "gradient suite", gradient_suite));
    }
    if wants(4) {
        outcomes.push(criterion(4, "loss identities", loss_identities));
    }
    if wants(5) {
        outcomes.push(criterion(5, "patch round trip", patch_round_trip));
    }

    if [6, 7, 8].into_iter().any(wants) {
        let tmp = tempfile::tempdir().unwrap();
        let start = Instant::now();
        let ds = build_dataset(&tmp.path().join("data"), 20, 32, 0, &DESK_LEVELS);
        let dataset_secs = start.elapsed().as_secs_f64();
        if wants(6) {
            outcomes.push(criterion(6, "target-policy equivalence", || target_policy(ds.as_ref().unwrap())));
        }
        let mut desk = None;
        if wants(7) || wants(8) {
            let ok = criterion(7, "end-to-end desk-scale run", || {
                let (v, d) = desk_run(tmp.path(), dataset_secs);
                desk = d;
                v
            });
            if wants(7) {
                outcomes.push(ok);
            }
        }
        if wants(8) {
            outcomes.push(criterion(8, "reproducibility", || match &desk {
                Some(d) => reproducibility(d),
                None => verdict(false, "the desk-scale run did not complete"),
            }));
        }
    }

    let passed = outcomes.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if passed != outcomes.len() {
        std::process::exit(1);
    }
}
