use super::*;
use crate::nn::gradcheck::{max_rel_error, numeric_gradient};

fn config(backbone: &str) -> DenoiserConfig {
    DenoiserConfig {
        backbone: backbone.into(),
        d_z: 4,
        classes: 3,
        hidden: 8,
        blocks: 2,
        time_dim: 6,
        channels: 3,
        steps: 20,
    }
}

fn randm(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, normal_vec(rng, r * c)).unwrap()
}

#[test]
fn unknown_backbone_is_a_config_error() {
    let err = Denoiser::new(&mut stream(0, 0), config("transformer")).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn loss_gradient_matches_fd_for_each_backbone() {
    for kind in ["resmlp", "unet1d"] {
        let mut rng = stream(1, 0);
        let den = Denoiser::new(&mut rng, config(kind)).unwrap();
        let sched = make_schedule(20, 1e-3, 0.2).unwrap();
        let z0 = randm(&mut rng, 5, 4);
        let eps = randm(&mut rng, 5, 4);
        let t = [1, 5, 9, 20, 13];
        let cond = [
            PerformanceClass::Id(0),
            PerformanceClass::Null,
            PerformanceClass::Id(2),
            PerformanceClass::Id(1),
            PerformanceClass::Id(2),
        ];
        let (_, grad) = loss_and_grad(&den, &sched, &z0, &t, &cond, &eps).unwrap();
        assert!(grad.class_table.row(0).iter().all(|&v| v == 0.0));
        let theta = den.flatten();
        let mut probe = den.clone();
        let num = numeric_gradient(&theta, 1e-6, |p| {
            probe.load_flat(p).unwrap();
            loss_and_grad(&probe, &sched, &z0, &t, &cond, &eps).unwrap().0
        });
        // The null row is frozen by design; compare everything else.
        let mut null = 0..0;
        let mut off = 0;
        den.visit(&mut |name, m| {
            if name == "class_table" {
                null = off..off + m.cols();
            }
            off += m.data().len();
        });
        let keep = |v: Vec<f64>| -> Vec<f64> {
            v.into_iter()
                .enumerate()
                .filter(|(i, _)| !null.contains(i))
                .map(|(_, x)| x)
                .collect()
        };
        let err = max_rel_error(&keep(grad.flatten()), &keep(num));
        assert!(err <= 1e-4, "{kind}: {err}");
    }
}

#[test]
fn null_row_stays_zero_through_training() {
    let mut rng = stream(2, 0);
    let mut den = Denoiser::new(&mut rng, config("resmlp")).unwrap();
    let sched = make_schedule(20, 1e-3, 0.2).unwrap();
    let mut adam = Adam::for_model(AdamConfig::default(), &den);
    let z0 = randm(&mut rng, 16, 4);
    let labels: Vec<PerformanceClass> = (0..16).map(|i| PerformanceClass::Id(i % 3)).collect();
    for _ in 0..50 {
        train_step(&mut den, &mut adam, &sched, &z0, &labels, 0.5, &mut rng).unwrap();
    }
    assert!(den.class_table.row(0).iter().all(|&v| v == 0.0));
    assert!(den.class_table.row(1).iter().any(|&v| v != 0.0));
}

#[test]
fn full_dropout_trains_only_the_unconditional_path() {
    let mut rng = stream(3, 0);
    let mut den = Denoiser::new(&mut rng, config("resmlp")).unwrap();
    let before = den.class_table.clone();
    let sched = make_schedule(20, 1e-3, 0.2).unwrap();
    let mut adam = Adam::for_model(AdamConfig::default(), &den);
    let z0 = randm(&mut rng, 8, 4);
    let labels = vec![PerformanceClass::Id(1); 8];
    for _ in 0..10 {
        train_step(&mut den, &mut adam, &sched, &z0, &labels, 1.0, &mut rng).unwrap();
    }
    assert_eq!(den.class_table, before);
}

#[test]
fn guidance_combines_predictions() {
    let mut rng = stream(4, 0);
    let den = Denoiser::new(&mut rng, config("resmlp")).unwrap();
    let z = randm(&mut rng, 3, 4);
    let c = PerformanceClass::Id(1);
    let ec = den.forward(&z, &[7; 3], &[c; 3]).unwrap();
    let en = den.forward(&z, &[7; 3], &[PerformanceClass::Null; 3]).unwrap();
    assert_eq!(cfg_noise(&den, &z, 7, c, 0.0).unwrap(), ec);
    let g = cfg_noise(&den, &z, 7, c, 3.0).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            assert!((g[(i, j)] - (4.0 * ec[(i, j)] - 3.0 * en[(i, j)])).abs() < 1e-12);
        }
    }
    assert!(matches!(
        cfg_noise(&den, &z, 7, PerformanceClass::Null, 3.0),
        Err(Error::Domain(_))
    ));
    assert!(den.forward(&z, &[7; 3], &[PerformanceClass::Id(3); 3]).is_err());
}

#[test]
fn sampling_is_reproducible_and_independent_of_grouping() {
    let mut rng = stream(5, 0);
    let den = Denoiser::new(&mut rng, config("unet1d")).unwrap();
    let sched = make_schedule(20, 1e-3, 0.2).unwrap();
    let a = sample(&den, &sched, PerformanceClass::Id(0), 3.0, 70, &mut stream(9, 1)).unwrap();
    let b = sample(&den, &sched, PerformanceClass::Id(0), 3.0, 70, &mut stream(9, 1)).unwrap();
    assert_eq!(a, b);
    let c = sample(&den, &sched, PerformanceClass::Id(0), 3.0, 5, &mut stream(9, 1)).unwrap();
    assert_eq!(&a[..5], &c[..]);
    let d = sample(&den, &sched, PerformanceClass::Null, 0.0, 5, &mut stream(9, 1)).unwrap();
    assert_ne!(c, d);
}

/// Closed-form draws against the step-by-step forward chain driven by the
/// same per-step noise.
#[test]
fn q_sample_matches_iterated_forward_chain() {
    let s = BetaSchedule::default();
    let mut rng = stream(6, 0);
    let z0 = 1.5;
    for t in [100, 500, 1000] {
        let (mut closed, mut chain) = (Vec::with_capacity(10_000), Vec::with_capacity(10_000));
        for _ in 0..10_000 {
            let mut z = z0;
            // Combined noise of the chain, normalized to unit variance.
            let mut acc = 0.0;
            for k in 1..=t {
                let e = normal(&mut rng);
                z = (1.0 - s.beta(k)).sqrt() * z + s.beta(k).sqrt() * e;
                acc = (1.0 - s.beta(k)).sqrt() * acc + s.beta(k).sqrt() * e;
            }
            chain.push(z);
            let eps = acc / (1.0 - s.alpha_bar(t)).sqrt();
            closed.push(s.q_sample(&[z0], t, &[eps]).unwrap()[0]);
        }
        let moments = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
        };
        let ((mc, vc), (mi, vi)) = (moments(&closed), moments(&chain));
        assert!(
            (mc - mi).abs() <= 0.01 * vi.sqrt().max(mi.abs()),
            "t={t}: mean {mc} vs {mi}"
        );
        assert!((vc - vi).abs() <= 0.01 * vi, "t={t}: var {vc} vs {vi}");
        // Both agree with the analytic marginal within sampling error.
        let (ma, va) = (s.alpha_bar(t).sqrt() * z0, 1.0 - s.alpha_bar(t));
        assert!((mi - ma).abs() <= 5.0 * (va / 1e4).sqrt(), "t={t}");
        assert!((vi - va).abs() <= 5.0 * va * (2.0 / 1e4f64).sqrt(), "t={t}");
    }
}

/// Reverse chain driven by the exact noise posterior mean of a Gaussian
/// source distribution.
#[test]
fn oracle_reverse_chain_recovers_gaussian_moments() {
    let s = BetaSchedule::default();
    let (mu, sd) = ([1.5, -0.5], [0.5, 0.8]);
    let mut rng = stream(7, 0);
    let chains = 5000;
    let mut out = Vec::with_capacity(chains);
    for _ in 0..chains {
        let mut z: Vec<f64> = (0..2).map(|_| normal(&mut rng)).collect();
        for t in (1..=s.steps()).rev() {
            let ab = s.alpha_bar(t);
            let eps: Vec<f64> = (0..2)
                .map(|j| (1.0 - ab).sqrt() * (z[j] - ab.sqrt() * mu[j]) / (ab * sd[j] * sd[j] + 1.0 - ab))
                .collect();
            z = s.p_sample_step(&z, t, &eps, &mut rng).unwrap();
        }
        out.push(z);
    }
    for j in 0..2 {
        let m = out.iter().map(|z| z[j]).sum::<f64>() / chains as f64;
        let v = out.iter().map(|z| (z[j] - m).powi(2)).sum::<f64>() / chains as f64;
        assert!((m - mu[j]).abs() <= 0.05, "mean {j}: {m}");
        assert!((v.sqrt() - sd[j]).abs() <= 0.05 * sd[j], "std {j}: {}", v.sqrt());
    }
}

#[test]
fn latent_norm_round_trips() {
    let mut rng = stream(8, 0);
    let z = randm(&mut rng, 50, 3);
    let n = LatentNorm::fit(&z).unwrap();
    let zn = n.apply(&z);
    for i in 0..50 {
        let back = n.invert(zn.row(i));
        for j in 0..3 {
            assert!((back.0[j] - z[(i, j)]).abs() < 1e-12);
        }
    }
}

#[test]
fn model_save_load_round_trip() {
    let mut rng = stream(10, 0);
    let m = DiffusionModel::new(
        &mut rng,
        config("resmlp"),
        DiffusionTrainConfig::default(),
        LatentNorm::identity(4),
    )
    .unwrap();
    let dir = std::env::temp_dir().join(format!("dm-rt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (c, s) = (dir.join("d.ckpt"), dir.join("d.json"));
    m.save(&c, &s).unwrap();
    let back = DiffusionModel::load(&c, &s).unwrap();
    assert_eq!(back.denoiser.flatten(), m.denoiser.flatten());
    assert_eq!(back.schedule, m.schedule);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cosine_lr_anneals_from_lr_to_zero() {
    assert_eq!(cosine_lr(1e-3, 0, 100), 1e-3);
    assert!((cosine_lr(1e-3, 50, 100) - 5e-4).abs() < 1e-15);
    assert!(cosine_lr(1e-3, 99, 100) < 1e-6);
    let lrs: Vec<f64> = (0..100).map(|i| cosine_lr(1e-3, i, 100)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}
