//! Acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line per criterion; exits nonzero if any failed.
//!
//! `TOPDOWN_ACCEPTANCE=1,4,9` runs a subset.

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tch::{Device, Kind, Tensor};
use topdown_core::capsule::{dynamic_routing, squash, ConvCapsule};
use topdown_core::checkpoint::{checkpoint_dir, list_checkpoints, PARAMS_FILE};
use topdown_core::encoders::{Encoder, EncoderKind};
use topdown_core::gan::{Networks, ScaleState, CRITIC_IN_CHANNELS};
use topdown_core::layers::{minibatch_stddev, pixel_norm, upsample2x, PIXELNORM_EPS};
use topdown_core::losses::gradient_penalty;
use topdown_core::params::ParamStore;
use topdown_core::trainer::{read_log, LOG_FILE};
use topdown_core::{schedule_state, ModelPredictor, ModelSpec, ScaleSchedule, FEATURE_DIM};
use topdown_envgen::geometry::cell_center;
use topdown_envgen::{
    generate_dataset, read_dataset, sample_environment, simulate_episode, write_dataset, DatasetConfig,
    EnvironmentSpec, GenConfig, ObjectBox, RenderConfig, Rgb8, RotationPolicy, Split, IMAGE_SIZE,
};
use topdown_metrics::{
    area_downsample, evaluate_model, mean_target_image, psnr, ssim, ConstantPredictor, EvalSampling, Image,
    SsimParams,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

const F64: (Kind, Device) = (Kind::Double, Device::Cpu);

// ---------------------------------------------------------------- 1

fn gradient_penalty_correctness() -> Check {
    tch::manual_seed(21);
    let w1 = Tensor::randn([8, 12], F64);
    let b1 = Tensor::randn([12], F64);
    let w2 = Tensor::randn([12], F64);
    let critic = |x: &Tensor| Ok((x.matmul(&w1) + &b1).tanh().matmul(&w2));
    let x = Tensor::randn([16, 8], F64);
    let pen = gradient_penalty(&critic, &x, 10.0).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0f64;
    for b in 0..16 {
        let row: Vec<f64> = Vec::try_from(x.get(b)).unwrap();
        let f = |v: &[f64]| critic(&Tensor::from_slice(v).view([1, 8])).unwrap().double_value(&[0]);
        let sq: f64 = (0..8)
            .map(|i| {
                let (mut p, mut m) = (row.clone(), row.clone());
                p[i] += h;
                m[i] -= h;
                ((f(&p) - f(&m)) / (2.0 * h)).powi(2)
            })
            .sum();
        let rel = (pen.norms.double_value(&[b]) - sq.sqrt()).abs() / sq.sqrt();
        worst = worst.max(rel);
    }
    ensure(worst < 1e-4, format!("norm vs finite differences rel err {worst:.2e}"))?;

    let constant = |x: &Tensor| Ok(x.sum_dim_intlist(1, false, None::<Kind>) * 0.0 + 1.5);
    let c = gradient_penalty(&constant, &x, 10.0).unwrap().term.double_value(&[]);
    ensure(c == 10.0, format!("constant critic penalty {c}, want exactly 10"))?;

    let u = Tensor::randn([8], F64);
    let u = &u / u.norm();
    let linear = |x: &Tensor| Ok(x.matmul(&u));
    let l = gradient_penalty(&linear, &x, 10.0).unwrap().term.double_value(&[]);
    ensure(l < 1e-10, format!("unit-gradient critic penalty {l:.2e}"))?;
    Ok(format!("fd rel err {worst:.1e}, constant {c}, unit {l:.1e}"))
}

// ---------------------------------------------------------------- 2

fn random_image(rng: &mut ChaCha8Rng, n: u32) -> Image {
    Image::from_fn(n, n, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

fn naive_psnr(a: &Image, b: &Image) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for c in 0..3 {
                let d = f64::from(a.get_pixel(x, y)[c]) - f64::from(b.get_pixel(x, y)[c]);
                sum += d * d;
                count += 1.0;
            }
        }
    }
    10.0 * (1.0 / (sum / count)).log10()
}

fn naive_ssim(a: &Image, b: &Image) -> f64 {
    let lum = |img: &Image, x: u32, y: u32| {
        let p = img.get_pixel(x, y);
        0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
    };
    let (win, sigma) = (11u32, 1.5f64);
    let mut weights = vec![vec![0.0; win as usize]; win as usize];
    let mut total = 0.0;
    for i in 0..win {
        for j in 0..win {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            let w = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            weights[i as usize][j as usize] = w;
            total += w;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut n = 0.0;
    for y0 in 0..=a.height() - win {
        for x0 in 0..=a.width() - win {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let w = weights[i as usize][j as usize] / total;
                    ma += w * lum(a, x0 + j, y0 + i);
                    mb += w * lum(b, x0 + j, y0 + i);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let w = weights[i as usize][j as usize] / total;
                    let (da, db) = (lum(a, x0 + j, y0 + i) - ma, lum(b, x0 + j, y0 + i) - mb);
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1.0;
        }
    }
    acc / n
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let params = SsimParams::default();
    let (mut wp, mut ws) = (0f64, 0f64);
    for _ in 0..50 {
        let a = random_image(&mut rng, 16);
        let b = random_image(&mut rng, 16);
        wp = wp.max((psnr(&a, &b, 1.0).unwrap() - naive_psnr(&a, &b)).abs());
        ws = ws.max((ssim(&a, &b, &params).unwrap() - naive_ssim(&a, &b)).abs());
    }
    ensure(wp < 1e-9, format!("PSNR max abs err {wp:.2e}"))?;
    ensure(ws < 1e-6, format!("SSIM max abs err {ws:.2e}"))?;
    let zero = Image::from_pixel(16, 16, image::Rgb([0.0; 3]));
    let one = Image::from_pixel(16, 16, image::Rgb([1.0; 3]));
    let db = psnr(&zero, &one, 1.0).unwrap();
    ensure(db.abs() < 1e-9, format!("0/1 PSNR {db}"))?;
    let s = ssim(&zero, &one, &params).unwrap();
    let c1 = 1e-4;
    ensure((s - c1 / (1.0 + c1)).abs() < 1e-9, format!("constant SSIM {s}"))?;
    Ok(format!("psnr err {wp:.1e}, ssim err {ws:.1e}, 0 dB, ssim {s:.6e}"))
}

// ---------------------------------------------------------------- 3

fn capsule_invariants() -> Check {
    tch::manual_seed(3);
    let s = Tensor::randn([10_000, 8], F64) * (Tensor::randn([10_000, 1], F64) * 2.0).exp();
    let max = squash(&s, 1).square().sum_dim_intlist(1, false, None::<Kind>).sqrt().max().double_value(&[]);
    ensure(max < 1.0, format!("squash norm {max}"))?;
    let unit = Tensor::from_slice(&[0.0f64, 0.6, 0.0, 0.8]);
    let half = squash(&unit, 0).norm().double_value(&[]);
    ensure((half - 0.5).abs() < 1e-9, format!("unit squash norm {half}"))?;

    let routed = dynamic_routing(&Tensor::randn([3, 30, 10, 8], F64), 3).unwrap();
    let mut worst = 0f64;
    for c in &routed.coefficients {
        worst = worst.max((c.sum_dim_intlist(2, false, None::<Kind>) - 1.0).abs().max().double_value(&[]));
    }
    let mut store = ParamStore::new(4);
    let layer = ConvCapsule::new(&mut store, "cc", (4, 4), (3, 6), 3, 2, 1, 3).unwrap();
    let u = Tensor::randn([2, 16, 8, 8], (Kind::Float, Device::Cpu));
    let (_, trace) = layer.forward_traced(&store, &u).unwrap();
    for c in &trace {
        worst = worst.max((c.sum_dim_intlist(1, false, None::<Kind>) - 1.0).abs().max().double_value(&[]));
    }
    ensure(worst < 1e-6, format!("coefficient sums off by {worst:.2e}"))?;

    // 2 children x 2 parents, 3 iterations, against scalar arithmetic
    let u: [[[f64; 2]; 2]; 2] = [[[0.5, -0.1], [0.2, 0.3]], [[-0.4, 0.25], [0.1, -0.35]]];
    let flat: Vec<f64> = u.iter().flatten().flatten().copied().collect();
    let got = dynamic_routing(&Tensor::from_slice(&flat).view([1, 2, 2, 2]), 3).unwrap();
    let mut b = [[0.0f64; 2]; 2];
    let mut v = [[0.0f64; 2]; 2];
    let mut err = 0f64;
    for it in 0..3 {
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            let z = b[i][0].exp() + b[i][1].exp();
            c[i] = [b[i][0].exp() / z, b[i][1].exp() / z];
        }
        for j in 0..2 {
            let s = [c[0][j] * u[0][j][0] + c[1][j] * u[1][j][0], c[0][j] * u[0][j][1] + c[1][j] * u[1][j][1]];
            let n2 = s[0] * s[0] + s[1] * s[1];
            let f = n2 / (1.0 + n2) / n2.sqrt();
            v[j] = [s[0] * f, s[1] * f];
        }
        for i in 0..2 {
            for j in 0..2 {
                err = err.max((got.coefficients[it].double_value(&[0, i as i64, j as i64]) - c[i][j]).abs());
                b[i][j] += u[i][j][0] * v[j][0] + u[i][j][1] * v[j][1];
            }
        }
    }
    for j in 0..2 {
        for d in 0..2 {
            err = err.max((got.parents.double_value(&[0, j as i64, d as i64]) - v[j][d]).abs());
        }
    }
    ensure(err < 1e-9, format!("routing fixture err {err:.2e}"))?;
    Ok(format!("max norm {max:.6}, unit {half}, sums {worst:.1e}, fixture {err:.1e}"))
}

// ---------------------------------------------------------------- 4

fn schedule_state_machine() -> Check {
    let s = ScaleSchedule::default();
    let mut bad = Vec::new();
    for (it, scale, alpha) in [(0u64, 4i64, 1.0f64), (25_000, 8, 0.0), (31_250, 8, 0.5), (100_000, 64, 1.0)] {
        let st = schedule_state(it, &s);
        if st.scale != scale || st.alpha != alpha {
            bad.push(format!("{it} -> ({}, {}) want ({scale}, {alpha})", st.scale, st.alpha));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut probes: Vec<u64> = (0..1_000_000).map(|_| rng.gen_range(0..250_000)).collect();
    probes.sort_unstable();
    for w in probes.windows(2) {
        let (a, b) = (schedule_state(w[0], &s), schedule_state(w[1], &s));
        if b.scale < a.scale || (a.scale == b.scale && b.alpha < a.alpha) {
            bad.push(format!("not monotone between {} and {}", w[0], w[1]));
            break;
        }
    }
    ensure(bad.is_empty(), bad.join("; "))?;
    Ok("constants exact, 1e6 probes monotone".into())
}

// ---------------------------------------------------------------- 5

fn spec(encoder: EncoderKind) -> ModelSpec {
    ModelSpec {
        encoder,
        seed: 5,
        routing_iterations: 3,
    }
}

fn pgan_layer_kit() -> Check {
    tch::manual_seed(5);
    let one = Tensor::randn([1, 7, 4, 4], (Kind::Float, Device::Cpu));
    let y = minibatch_stddev(&one.repeat([6, 1, 1, 1]));
    let extra = y.narrow(1, 7, 1).abs().max().double_value(&[]);
    ensure(extra == 0.0, format!("stddev channel {extra}"))?;

    let mut worst = 0f64;
    for scale in [1e-2, 0.1, 1.0, 10.0, 1e3] {
        let x = Tensor::randn([4, 32, 5, 5], (Kind::Float, Device::Cpu));
        let rms = x.square().mean_dim(1, true, Kind::Float).sqrt();
        let x = &x / &rms * scale; // every channel vector has RMS exactly `scale`
        let out = pixel_norm(&x, PIXELNORM_EPS);
        let r = out.square().mean_dim(1, false, Kind::Float).sqrt();
        worst = worst.max((r - 1.0).abs().max().double_value(&[]));
    }
    ensure(worst < 1e-3, format!("pixelnorm RMS off by {worst:.2e}"))?;

    let mut nets = Networks::new(spec(EncoderKind::Baseline)).unwrap();
    let feats = Tensor::randn([3, FEATURE_DIM], (Kind::Float, Device::Cpu));
    for scale in [8, 16, 32, 64] {
        let before = nets.generate(&feats, ScaleState::new(scale / 2, 1.0).unwrap()).unwrap();
        nets.grow(scale).unwrap();
        let after = nets.generate(&feats, ScaleState::new(scale, 0.0).unwrap()).unwrap();
        ensure(after.equal(&upsample2x(&before)), format!("fade-in not continuous at {scale}"))?;
    }
    Ok(format!("stddev 0, pixelnorm err {worst:.1e}, fade-in bit-exact 8..64"))
}

// ---------------------------------------------------------------- 6

fn shape_contracts() -> Check {
    let volume = Tensor::rand([2, 21, 3, 64, 64], (Kind::Float, Device::Cpu));
    for kind in EncoderKind::ALL {
        let mut store = ParamStore::new(6);
        let enc = Encoder::new(kind, &mut store, "enc", 3).unwrap();
        let f = enc.forward(&store, &volume).map_err(|e| e.to_string())?;
        ensure(f.size() == [2, FEATURE_DIM], format!("{kind} features {:?}", f.size()))?;
    }
    let mut nets = Networks::new(spec(EncoderKind::Baseline)).unwrap();
    let feats = nets.encode(&volume).unwrap();
    let cond = Networks::stack_condition(&volume).unwrap();
    for scale in [4i64, 8, 16, 32, 64] {
        if scale > 4 {
            nets.grow(scale).unwrap();
        }
        let chans = nets.critic.input_channels(&nets.store);
        ensure(
            chans.iter().all(|&c| c == CRITIC_IN_CHANNELS) && CRITIC_IN_CHANNELS == 66,
            format!("critic inputs {chans:?} at {scale}"),
        )?;
        let st = ScaleState::new(scale, 1.0).unwrap();
        let img = nets.generate(&feats, st).unwrap();
        ensure(img.size() == [2, 3, scale, scale], format!("generator {:?} at {scale}", img.size()))?;
        let score = nets.critic_score(&img, &cond, st).map_err(|e| e.to_string())?;
        ensure(score.numel() == 2, format!("critic scores {:?} at {scale}", score.size()))?;
    }
    Ok("4 encoders -> 4096, critic 66 ch, generator 4..64".into())
}

// ---------------------------------------------------------------- 7

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let within = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| {
        p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    let (d1, d2, d3, d4) = (orient(q1, q2, p1), orient(q1, q2, p2), orient(p1, p2, q1), orient(p1, p2, q2));
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return true;
    }
    (d1 == 0.0 && within(q1, q2, p1))
        || (d2 == 0.0 && within(q1, q2, p2))
        || (d3 == 0.0 && within(p1, p2, q1))
        || (d4 == 0.0 && within(p1, p2, q2))
}

fn in_box(o: &ObjectBox, p: [f64; 2]) -> bool {
    (p[0] - o.center[0]).abs() <= o.half_extent && (p[1] - o.center[1]).abs() <= o.half_extent
}

fn sight_blocked(o: &ObjectBox, a: [f64; 2], b: [f64; 2]) -> bool {
    if in_box(o, a) || in_box(o, b) {
        return true;
    }
    let (x0, x1) = (o.center[0] - o.half_extent, o.center[0] + o.half_extent);
    let (z0, z1) = (o.center[1] - o.half_extent, o.center[1] + o.half_extent);
    let c = [[x0, z0], [x1, z0], [x1, z1], [x0, z1]];
    (0..4).any(|i| segments_cross(a, b, c[i], c[(i + 1) % 4]))
}

fn sweep_oracle(env: &EnvironmentSpec, yaws: &[f64], fov_deg: f64) -> Vec<bool> {
    let cos_half = (fov_deg.to_radians() / 2.0).cos();
    let p = env.agent_position;
    let cell = env.room_size / IMAGE_SIZE as f64;
    let own = ((p[1] / cell) as usize, (p[0] / cell) as usize);
    let mut out = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE);
    for r in 0..IMAGE_SIZE {
        for c in 0..IMAGE_SIZE {
            if (r, c) == own {
                out.push(true);
                continue;
            }
            let q = cell_center(env, r, c);
            let v = [q[0] - p[0], q[1] - p[1]];
            let len = v[0].hypot(v[1]);
            let in_fov = yaws.iter().any(|y| (v[0] * y.cos() + v[1] * y.sin()) / len >= cos_half);
            let clear = env.objects.iter().all(|o| in_box(o, q) || !sight_blocked(o, p, q));
            out.push(in_fov && clear);
        }
    }
    out
}

fn dataset_properties() -> Check {
    let render = RenderConfig::default();
    for seed in 0..20u64 {
        let env = sample_environment(seed, &GenConfig::default()).map_err(|e| e.to_string())?;
        let ep = simulate_episode(&env, 20, RotationPolicy::default(), seed + 500, &render).unwrap();
        for i in 1..ep.len() {
            ensure(ep.visibility[i - 1].is_subset_of(&ep.visibility[i]), format!("seed {seed}: visibility shrank at {i}"))?;
        }
        let objects: HashSet<Rgb8> = ep.env.objects.iter().map(|o| o.color).collect();
        for i in 0..ep.len() {
            for (x, y, p) in ep.targets[i].enumerate_pixels() {
                if objects.contains(&Rgb8(p.0)) {
                    for later in &ep.targets[i + 1..] {
                        ensure(later.get_pixel(x, y) == p, format!("seed {seed}: object pixel lost after step {i}"))?;
                    }
                }
            }
        }
        let yaws: Vec<f64> = ep.poses.iter().map(|p| p.yaw).collect();
        let oracle = sweep_oracle(&ep.env, &yaws, render.fov_deg);
        ensure(ep.visibility[19].cells() == oracle.as_slice(), format!("seed {seed}: sweep visibility differs from oracle"))?;
    }
    let cfg = DatasetConfig {
        seed: 7,
        train_envs: 15,
        test_envs: 5,
        episode_len: 8,
        ..DatasetConfig::default()
    };
    let episodes = generate_dataset(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&cfg, &episodes, dir.path()).unwrap();
    let back = read_dataset(dir.path()).map_err(|e| e.to_string())?;
    ensure(back.train == episodes[&Split::Train] && back.test == episodes[&Split::Test], "round trip differs")?;
    Ok("20 episodes: monotone, memory, oracle sweep, round trip".into())
}

// ---------------------------------------------------------------- CLI helpers

fn topdown(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_topdown"))
        .args(args)
        .env_remove("TOPDOWN_DATA_ROOT")
        .output()
        .expect("run topdown");
    out
}

fn topdown_ok(args: &[&str]) -> Result<std::process::Output, String> {
    let out = topdown(args);
    if !out.status.success() {
        return Err(format!(
            "`topdown {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")
        ));
    }
    Ok(out)
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------- 8

fn overfit_smoke(work: &Path) -> Check {
    let data = work.join("overfit_data");
    let run = work.join("overfit_run");
    topdown_ok(&[
        "--seed", "8", "--out", &s(&data), "gen-data", "--train-envs", "1", "--test-envs", "1",
        "--episodes-per-env", "8", "--episode-len", "40",
    ])?;
    topdown_ok(&[
        "--seed", "8", "--deterministic", "--out", &s(&run), "train", "--encoder", "baseline", "--profile", "desk",
        "--data", &s(&data), "--log-every", "100",
    ])?;
    let dataset = read_dataset(&data).map_err(|e| e.to_string())?;
    let cks = list_checkpoints(&run).map_err(|e| e.to_string())?;
    ensure(cks.len() >= 3, "fewer than three checkpoints")?;
    let sampling = EvalSampling {
        count: 512,
        seed: 88,
        allow_reduced_scale: true,
        ..EvalSampling::default()
    };
    let mut ssims = Vec::new();
    let mut last_psnr = f64::NAN;
    for (it, dir) in &cks[cks.len() - 3..] {
        let (_, model) = ModelPredictor::from_checkpoint(dir).map_err(|e| e.to_string())?;
        let m = evaluate_model(&model, &dataset.train, &sampling).map_err(|e| e.to_string())?;
        ssims.push((*it, m.ssim_mean));
        last_psnr = m.psnr_mean;
    }
    let scale = ModelPredictor::from_checkpoint(&cks.last().unwrap().1).unwrap().1.state().scale as u32;
    let mean = mean_target_image(&dataset.train).unwrap();
    let constant = ConstantPredictor {
        label: "constant-mean".into(),
        image: area_downsample(&mean, scale).unwrap(),
    };
    let base = evaluate_model(&constant, &dataset.train, &sampling).map_err(|e| e.to_string())?;
    let gain = last_psnr - base.psnr_mean;
    let trend = ssims.windows(2).all(|w| w[1].1 >= w[0].1);
    let detail = format!(
        "train PSNR {last_psnr:.2} dB vs constant-mean {:.2} dB (+{gain:.2}); SSIM {}",
        base.psnr_mean,
        ssims.iter().map(|(i, v)| format!("{i}:{v:.4}")).collect::<Vec<_>>().join(" ")
    );
    ensure(gain >= 3.0 && trend, detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn determinism_and_resume(work: &Path) -> Check {
    let data = work.join("det_data");
    topdown_ok(&[
        "--seed", "9", "--out", &s(&data), "gen-data", "--train-envs", "2", "--test-envs", "1",
        "--episode-len", "12",
    ])?;
    let common = |out: &Path| -> Vec<String> {
        [
            "--seed", "9", "--deterministic", "--out", &s(out), "train", "--encoder", "baseline", "--profile", "desk",
            "--data", &s(&data), "--batch-size", "4", "--total-iterations", "200", "--iterations-per-scale", "50",
            "--fade-iterations", "25", "--checkpoint-every", "50", "--log-every", "1000",
        ]
        .iter()
        .map(|a| a.to_string())
        .collect()
    };
    let (a, b, c) = (work.join("det_a"), work.join("det_b"), work.join("det_c"));
    for out in [&a, &b] {
        let args = common(out);
        topdown_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    }
    let log_a = read_log(&a.join(LOG_FILE)).map_err(|e| e.to_string())?;
    let log_b = read_log(&b.join(LOG_FILE)).map_err(|e| e.to_string())?;
    ensure(log_a.len() == 200, format!("log has {} rows", log_a.len()))?;
    ensure(log_a == log_b, "two runs produced different loss logs")?;

    let mut args = common(&c);
    args.extend(["--resume".to_string(), s(&checkpoint_dir(&a, 100))]);
    topdown_ok(&args.iter().map(String::as_str).collect::<Vec<_>>())?;
    let log_c = read_log(&c.join(LOG_FILE)).map_err(|e| e.to_string())?;
    ensure(log_c == log_a[100..], format!("resumed log differs ({} rows)", log_c.len()))?;
    let pa = fs::read(checkpoint_dir(&a, 200).join(PARAMS_FILE)).map_err(|e| e.to_string())?;
    let pc = fs::read(checkpoint_dir(&c, 200).join(PARAMS_FILE)).map_err(|e| e.to_string())?;
    ensure(pa == pc, "final parameters differ after resume")?;
    Ok("200-row logs identical; resume at 100 matches rows 100..200 and final parameters".into())
}

// ---------------------------------------------------------------- 10

fn known_failure(work: &Path) -> Check {
    let data = work.join("c2d_data");
    let run = work.join("c2d_run");
    let ev = work.join("c2d_eval");
    topdown_ok(&[
        "--seed", "10", "--out", &s(&data), "gen-data", "--train-envs", "2", "--test-envs", "1",
        "--episode-len", "20",
    ])?;
    let out = topdown_ok(&[
        "--seed", "10", "--out", &s(&run), "train", "--encoder", "conv2d1d", "--profile", "desk", "--data",
        &s(&data), "--total-iterations", "200", "--log-every", "1000",
    ])?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(stderr.contains("known not to learn"), "no known-nonlearning warning")?;
    let rows = read_log(&run.join(LOG_FILE)).map_err(|e| e.to_string())?;
    ensure(rows.len() == 200, format!("{} log rows", rows.len()))?;
    topdown_ok(&[
        "--out", &s(&ev), "eval", "--checkpoint", &s(&run), "--data", &s(&data), "--count", "32",
    ])?;
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).map_err(|e| e.to_string())?;
    let flagged = json[0]["report"]["known_nonlearning"].as_bool() == Some(true);
    let csv = fs::read_to_string(ev.join("report.csv")).unwrap();
    ensure(flagged && csv.contains("known-nonlearning"), "report not flagged known-nonlearning")?;
    Ok("200 iterations, warning printed, report flagged known-nonlearning".into())
}

// ---------------------------------------------------------------- driver

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: Box<dyn Fn(&Path) -> Check>,
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let only: Option<HashSet<u32>> = std::env::var("TOPDOWN_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria = vec![
        Criterion { id: 1, name: "gradient penalty", limit: Duration::from_secs(10), run: Box::new(|_| gradient_penalty_correctness()) },
        Criterion { id: 2, name: "metric oracles", limit: Duration::from_secs(30), run: Box::new(|_| metric_oracles()) },
        Criterion { id: 3, name: "capsule invariants", limit: Duration::from_secs(10), run: Box::new(|_| capsule_invariants()) },
        Criterion { id: 4, name: "schedule state machine", limit: Duration::from_secs(5), run: Box::new(|_| schedule_state_machine()) },
        Criterion { id: 5, name: "PGAN layer kit", limit: Duration::from_secs(30), run: Box::new(|_| pgan_layer_kit()) },
        Criterion { id: 6, name: "shape contracts", limit: Duration::from_secs(30), run: Box::new(|_| shape_contracts()) },
        Criterion { id: 7, name: "dataset properties", limit: min(2), run: Box::new(|_| dataset_properties()) },
        Criterion { id: 8, name: "overfit smoke", limit: min(180), run: Box::new(overfit_smoke) },
        Criterion { id: 9, name: "determinism and resume", limit: min(15), run: Box::new(determinism_and_resume) },
        Criterion { id: 10, name: "known-failure documentation", limit: min(10), run: Box::new(known_failure) },
    ];
    let mut failed = 0;
    for c in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| (c.run)(work.path())))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0}s limit", c.limit.as_secs_f64())),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<28} {} ({:.1}s) {detail}",
            c.id,
            c.name,
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
