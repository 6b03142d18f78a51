//! Scratch probe for tuning training hyperparameters; not part of the crate.

use kite::learning::*;
use kite::systems::pusher::{push_mean, push_noise_std};
use kite::systems::PusherConstants;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn vecd(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn linear_dataset(n: usize, w: &DMatrix<f64>, noise: f64, seed: u64) -> TransitionDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let u = DVector::from_fn(w.ncols(), |_, _| rng.gen_range(-1.0..=1.0));
        let mut y = w * &u;
        if noise > 0.0 {
            for v in y.iter_mut() {
                *v += noise * kite::belief::standard_normal(&mut rng);
            }
        }
        inputs.push(u);
        targets.push(y);
    }
    TransitionDataset { inputs, targets }
}

fn linear_probe() {
    let w = DMatrix::from_row_slice(3, 6, &[
        0.03, -0.02, 0.01, 0.04, -0.01, 0.02,
        -0.02, 0.05, 0.00, -0.03, 0.02, 0.01,
        0.01, 0.01, -0.04, 0.02, 0.03, -0.02,
    ]);
    let rmse_of = |mlp: &Mlp, data: &TransitionDataset| {
        let mut sq = 0.0;
        for (u, y) in data.inputs.iter().zip(&data.targets) {
            let (m, _) = mlp.forward(u);
            sq += (m - y).norm_squared();
        }
        (sq / (data.len() as f64 * 3.0)).sqrt()
    };
    let schedule: &[(usize, f64)] = &[(4000, 0.2), (4000, 0.2)];
    for n in [128usize, 96] {
        let data = linear_dataset(n, &w, 0.0, 8);
        for net_seed in [4u64, 5, 6] {
            let mut mlp = Mlp::with_sizes(&[6, 64], 32, 3, net_seed);
            let t0 = std::time::Instant::now();
            print!("linear n={n} seed={net_seed}: ");
            for (stage, &(epochs, lr)) in schedule.iter().enumerate() {
                let config = TrainConfig {
                    epochs,
                    batch_size: 32,
                    learning_rate: lr,
                    momentum: 0.9,
                    loss: LossKind::Mse,
                    seed: 2 + stage as u64,
                };
                train(&mut mlp, &data, &config);
                print!("{:.2e} ", rmse_of(&mlp, &data));
            }
            println!("t={:.1}s", t0.elapsed().as_secs_f64());
        }
    }
}

fn het_probe() {
    let sigma = |u: f64| 0.05 + 0.25 * u.abs();
    for (arch, epochs, lr, n) in [
        (0u32, 500usize, 0.01, 1000usize),
        (1, 500, 0.01, 1000),
        (1, 300, 0.01, 1000),
        (1, 500, 0.01, 2000),
        (0, 500, 0.01, 2000),
        (1, 800, 0.005, 2000),
    ] {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for _ in 0..n {
            let u = rng.gen_range(-1.0..=1.0);
            let y = sigma(u) * kite::belief::standard_normal(&mut rng);
            inputs.push(vecd(&[u]));
            targets.push(vecd(&[y]));
        }
        let data = TransitionDataset { inputs, targets };
        let mut mlp = match arch {
            0 => Mlp::with_sizes(&[1, 16, 16], 8, 1, 6),
            _ => Mlp::with_sizes(&[1, 16], 8, 1, 6),
        };
        let config = TrainConfig {
            epochs,
            batch_size: 32,
            learning_rate: lr,
            momentum: 0.9,
            loss: LossKind::Nll,
            seed: 3,
        };
        train(&mut mlp, &data, &config);
        print!("het arch={arch} epochs={epochs} lr={lr} n={n}: ");
        for u in [-0.9, -0.5, -0.1, 0.1, 0.5, 0.9] {
            let (m, lv) = mlp.forward(&vecd(&[u]));
            let ratio = lv[0].exp().sqrt() / sigma(u);
            print!("({u}: m={:+.3} r={:.2}) ", m[0], ratio);
        }
        println!();
    }
}

fn run_stages(mlp: &mut Mlp, data: &TransitionDataset, seed: u64, stages: &[(usize, f64, usize, LossKind)]) {
    for (stage, &(epochs, lr, batch, loss)) in stages.iter().enumerate() {
        let config = TrainConfig {
            epochs,
            batch_size: batch,
            learning_rate: lr,
            momentum: 0.9,
            loss,
            seed: seed + stage as u64,
        };
        train(mlp, data, &config);
    }
}

fn recipe_nll(mlp: &mut Mlp, data: &TransitionDataset, seed: u64) {
    run_stages(mlp, data, seed, &[
        (600, 0.05, 32, LossKind::Mse),
        (600, 0.001, 125, LossKind::Nll),
        (300, 0.0003, 250, LossKind::Nll),
    ]);
}

fn recipe_mse(mlp: &mut Mlp, data: &TransitionDataset, seed: u64) {
    run_stages(mlp, data, seed, &[
        (600, 0.05, 32, LossKind::Mse),
        (600, 0.01, 32, LossKind::Mse),
        (300, 0.002, 32, LossKind::Mse),
    ]);
}

fn mse_nll_probe() {
    let constants = PusherConstants::default();
    let eval = generate_pusher_eval(100, 10, &constants, 23);
    let calib = |mlp: &Mlp| -> (f64, f64, f64) {
        let model = TransitionModel {
            mlp: mlp.clone(),
            composition: CompositionRule::LieExponential,
            input_mode: InputMode::ControlOnly,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let mut worst_mean_err = 0.0f64;
        let mut ratio_lo = f64::INFINITY;
        let mut ratio_hi = 0.0f64;
        for _ in 0..200 {
            let mut u = sample_push_control(&constants, &mut rng);
            if u.dist < 0.05 {
                continue;
            }
            u.offset = u.offset.clamp(-0.9, 0.9);
            let (mean, var) = model.predict(&encode_push_control(&u, &constants));
            let mu = push_mean(&u).as_vector();
            let sd = push_noise_std(&u);
            for dim in 0..3 {
                worst_mean_err = worst_mean_err.max((mean[dim] - mu[dim]).abs());
                let ratio = var[dim].sqrt() / sd[dim];
                ratio_lo = ratio_lo.min(ratio);
                ratio_hi = ratio_hi.max(ratio);
            }
        }
        (worst_mean_err, ratio_lo, ratio_hi)
    };
    let total = std::time::Instant::now();
    let (mut sum_m200, mut sum_n200) = (0.0f64, 0.0f64);
    let (mut worst_lo, mut worst_hi) = (f64::INFINITY, 0.0f64);
    let mut worst_gap = 0.0f64;
    for seed in [1u64, 2, 3, 4, 5] {
        let fit = |n: usize, nll: bool| -> Mlp {
            let data = generate_pusher_dataset(n, &constants, 100 + seed).unwrap();
            let mut mlp = Mlp::standard(6, 3, 500 + seed);
            if nll {
                recipe_nll(&mut mlp, &data, 10 * seed);
            } else {
                recipe_mse(&mut mlp, &data, 10 * seed);
            }
            mlp
        };
        let rmse = |mlp: &Mlp| -> f64 {
            let model = TransitionModel {
                mlp: mlp.clone(),
                composition: CompositionRule::LieExponential,
                input_mode: InputMode::ControlOnly,
            };
            eval_model(&model, &eval).0
        };
        let t0 = std::time::Instant::now();
        let m200 = rmse(&fit(200, false));
        let n200 = rmse(&fit(200, true));
        let m1000 = rmse(&fit(1000, false));
        let nll1000 = fit(1000, true);
        let n1000 = rmse(&nll1000);
        let (me, rl, rh) = calib(&nll1000);
        let gap = (m1000 - n1000).abs() / m1000.max(n1000);
        sum_m200 += m200;
        sum_n200 += n200;
        worst_lo = worst_lo.min(rl);
        worst_hi = worst_hi.max(rh);
        worst_gap = worst_gap.max(gap);
        println!(
            "c7 seed={seed}: 200: mse={m200:.4} nll={n200:.4} | 1000: mse={m1000:.4} nll={n1000:.4} gap={gap:.3} me={me:.4} r=({rl:.2},{rh:.2}) t={:.1}s",
            t0.elapsed().as_secs_f64()
        );
    }
    println!(
        "c7 TOTAL: mean200 mse={:.5} nll={:.5} ordering_ok={} ratios=({worst_lo:.2},{worst_hi:.2}) worst_gap={worst_gap:.3} t={:.1}s",
        sum_m200 / 5.0,
        sum_n200 / 5.0,
        sum_m200 <= sum_n200,
        total.elapsed().as_secs_f64()
    );
}

fn smooth_probe() {
    let constants = PusherConstants::default();
    let data = generate_pusher_dataset(500, &constants, 41).unwrap();
    for (lr, epochs, loss) in [
        (0.005, 400usize, LossKind::Nll),
        (0.01, 400, LossKind::Nll),
        (0.01, 400, LossKind::Mse),
        (0.02, 400, LossKind::Mse),
    ] {
        let mut mlp = Mlp::standard(6, 3, 7);
        let config = TrainConfig {
            epochs,
            batch_size: 500,
            learning_rate: lr,
            momentum: 0.9,
            loss,
            seed: 13,
        };
        let report = train(&mut mlp, &data, &config);
        let smoothed = report.smoothed(10);
        let mut rise = 0.0f64;
        for p in smoothed.windows(2) {
            rise = rise.max(p[1] - p[0]);
        }
        let mut raw_rise = 0.0f64;
        for p in report.epoch_losses.windows(2) {
            raw_rise = raw_rise.max(p[1] - p[0]);
        }
        println!(
            "smooth lr={lr} loss={loss:?}: smoothed_rise={rise:.2e} raw_rise={raw_rise:.2e} first={:.4} last={:.4}",
            report.epoch_losses[0],
            report.epoch_losses.last().unwrap()
        );
    }
}

fn shared_probe() {
    let constants = PusherConstants::default();
    let calib = |mlp: &Mlp| -> (f64, f64, f64) {
        let model = TransitionModel {
            mlp: mlp.clone(),
            composition: CompositionRule::LieExponential,
            input_mode: InputMode::ControlOnly,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let mut worst_mean_err = 0.0f64;
        let mut ratio_lo = f64::INFINITY;
        let mut ratio_hi = 0.0f64;
        for _ in 0..200 {
            let mut u = sample_push_control(&constants, &mut rng);
            if u.dist < 0.05 {
                continue;
            }
            u.offset = u.offset.clamp(-0.9, 0.9);
            let (mean, var) = model.predict(&encode_push_control(&u, &constants));
            let mu = push_mean(&u).as_vector();
            let sd = push_noise_std(&u);
            for dim in 0..3 {
                worst_mean_err = worst_mean_err.max((mean[dim] - mu[dim]).abs());
                let ratio = var[dim].sqrt() / sd[dim];
                ratio_lo = ratio_lo.min(ratio);
                ratio_hi = ratio_hi.max(ratio);
            }
        }
        (worst_mean_err, ratio_lo, ratio_hi)
    };
    for seed in [1u64, 2, 3, 4, 5] {
        let data = generate_pusher_dataset(1000, &constants, 100 + seed).unwrap();
        let mut mlp = Mlp::standard(6, 3, 500 + seed);
        let t0 = std::time::Instant::now();
        recipe_nll(&mut mlp, &data, 10 * seed);
        let (me, rl, rh) = calib(&mlp);
        println!(
            "shared seed={seed}: me={me:.4} r=({rl:.2},{rh:.2}) t={:.1}s",
            t0.elapsed().as_secs_f64()
        );
        // Residual structure split by rolling/flat sides, worst ratio per group.
        let model = TransitionModel {
            mlp: mlp.clone(),
            composition: CompositionRule::LieExponential,
            input_mode: InputMode::ControlOnly,
        };
        let mut flat_me = [0.0f64; 3];
        let mut roll_me = [0.0f64; 3];
        let mut flat_ratio: (f64, f64) = (f64::INFINITY, 0.0);
        let mut roll_ratio: (f64, f64) = (f64::INFINITY, 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        for _ in 0..400 {
            let u = sample_push_control(&constants, &mut rng);
            if u.dist < 0.05 {
                continue;
            }
            let (mean, var) = model.predict(&encode_push_control(&u, &constants));
            let mu = push_mean(&u).as_vector();
            let sd = push_noise_std(&u);
            let rolling = u.side == 1 || u.side == 3;
            for dim in 0..3 {
                let e = (mean[dim] - mu[dim]).abs();
                let r = var[dim].sqrt() / sd[dim];
                if rolling {
                    roll_me[dim] = roll_me[dim].max(e);
                    roll_ratio = (roll_ratio.0.min(r), roll_ratio.1.max(r));
                } else {
                    flat_me[dim] = flat_me[dim].max(e);
                    flat_ratio = (flat_ratio.0.min(r), flat_ratio.1.max(r));
                }
            }
        }
        println!(
            "  flat me={flat_me:.4?} ratio=({:.2},{:.2}) | roll me={roll_me:.4?} ratio=({:.2},{:.2})",
            flat_ratio.0, flat_ratio.1, roll_ratio.0, roll_ratio.1
        );
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "all".into());
    match which.as_str() {
        "linear" => linear_probe(),
        "het" => het_probe(),
        "msenll" => mse_nll_probe(),
        "shared" => shared_probe(),
        "smooth" => smooth_probe(),
        _ => {
            linear_probe();
            het_probe();
            shared_probe();
            mse_nll_probe();
        }
    }
}
