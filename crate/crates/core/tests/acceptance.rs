//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use contactloc::features::{gcc_phat_pair, tdoa_estimate, MelAnalyzer};
use contactloc::geometry::{chamfer_rms, chamfer_rms_brute_force, med, ContactPoint, CylinderSpec, PointCloud, Vec3};
use contactloc::localize::input::EventFeatures;
use contactloc::localize::network::{loss, Architecture, Batch, Network, HIDDEN};
use contactloc::localize::{evaluate, extract, train, Localizer, Modalities, Pipeline, RegressorModel, TdoaLocalizer, TrainConfig};
use contactloc::mapping::{default_threshold, execute_mapping, plan_strikes, score_map, BranchScene, Rig, SURFACE_SPACING};
use contactloc::preprocess::{build_noise_profile, GateConfig};
use contactloc::simulate::{child_seed, default_layout, split_events, synth_reference_noise, DatasetPlan, SimConfig, Split};

const SEED: u64 = 2024;
const N_TRAIN: usize = 2000;
const N_TEST: usize = 300;

struct Suite {
    lines: Vec<(usize, bool, String)>,
}

impl Suite {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        let line = format!("{} criterion {id:>2}: {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push((id, pass, line));
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------- 1, 2: GCC-PHAT ----------

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Brute-force normalized cross-correlation argmax; positive when `xj` lags `xi`.
fn ncc_argmax(xi: &[f64], xj: &[f64], max_lag: isize) -> isize {
    let n = xi.len() as isize;
    let mut best = (f64::NEG_INFINITY, 0);
    for d in -max_lag..=max_lag {
        let (mut s, mut ei, mut ej) = (0.0, 0.0, 0.0);
        for t in 0.max(-d)..n.min(n - d) {
            let (a, b) = (xi[t as usize], xj[(t + d) as usize]);
            s += a * b;
            ei += a * a;
            ej += b * b;
        }
        let v = s / (ei * ej).sqrt();
        if v > best.0 {
            best = (v, d);
        }
    }
    best.1
}

/// `x` delayed by `d` samples (circular, band-limited), via a linear phase ramp.
fn frac_delay(planner: &mut FftPlanner<f64>, x: &[f64], d: f64) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        *b *= if k == n / 2 { Complex64::new(0.0, 0.0) } else { Complex64::from_polar(1.0, -2.0 * PI * f * d / n as f64) };
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn criterion_1(s: &mut Suite) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(SEED, 100, 0));
    let mut planner = FftPlanner::new();
    let n = 2048;
    let (mut int_ok, mut ncc_ok, mut frac_ok) = (0, 0, 0);
    let mut worst_frac: f64 = 0.0;
    let trials = 500;
    for _ in 0..trials {
        let k = rng.random_range(-32i64..=32) as isize;
        let src = white(&mut rng, n + 100);
        let xi = src[50..50 + n].to_vec();
        let xj = src[(50 - k) as usize..(50 - k) as usize + n].to_vec();
        let est = tdoa_estimate(&gcc_phat_pair(&xi, &xj, 64).unwrap()).lag;
        int_ok += (est.round() as isize == k) as usize;
        ncc_ok += (ncc_argmax(&xi, &xj, 64) == k) as usize;

        let d = rng.random_range(-32.0..32.0);
        let src = white(&mut rng, 2 * n);
        let delayed = frac_delay(&mut planner, &src, d);
        let est = tdoa_estimate(&gcc_phat_pair(&src[n / 2..n / 2 + n], &delayed[n / 2..n / 2 + n], 64).unwrap()).lag;
        worst_frac = worst_frac.max((est - d).abs());
        frac_ok += ((est - d).abs() <= 0.25) as usize;
    }
    let el = t.elapsed();
    let pass = int_ok == trials && ncc_ok == trials && frac_ok == trials && el < Duration::from_secs(30);
    s.record(
        1,
        pass,
        format!(
            "integer exact {int_ok}/{trials}, NCC oracle agrees {ncc_ok}/{trials}, fractional within 0.25 {frac_ok}/{trials} (worst {worst_frac:.3}), {:.1} s (limit 30 s)",
            secs(el)
        ),
    );
}

fn criterion_2(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(SEED, 101, 0));
    let mut worst: f64 = 0.0;
    let mut ok = 0;
    for _ in 0..100 {
        let xi = white(&mut rng, 2048);
        let xj = white(&mut rng, 2048);
        let base = gcc_phat_pair(&xi, &xj, 64).unwrap();
        let mut trial: f64 = 0.0;
        for c in [1e-3, 1.0, 1e3] {
            let si: Vec<f64> = xi.iter().map(|v| c * v).collect();
            let sj: Vec<f64> = xj.iter().map(|v| c * v).collect();
            for v in [gcc_phat_pair(&si, &xj, 64).unwrap(), gcc_phat_pair(&xi, &sj, 64).unwrap()] {
                trial = trial.max(v.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
        }
        worst = worst.max(trial);
        ok += (trial < 1e-6) as usize;
    }
    s.record(2, ok == 100, format!("{ok}/100 trials under 1e-6, worst max-abs change {worst:.2e}"));
}

// ---------- 3: analytical baseline ----------

fn baseline_meds() -> (f64, usize, f64, usize, Duration) {
    let t = Instant::now();
    let cyl = CylinderSpec::default();
    let layout = default_layout();
    let plan = DatasetPlan { n_test: 200, ..Default::default() };
    let mut out = Vec::new();
    for cfg in [SimConfig::default().noiseless(), SimConfig { snr_db: Some(20.0), ..SimConfig::default() }] {
        let loc = TdoaLocalizer::new(&layout, &cyl, &cfg, Pipeline::default());
        let (mut preds, mut truth, mut failed) = (Vec::new(), Vec::new(), 0);
        for e in split_events(&plan, Split::Test1, &layout, &cyl, &cfg, child_seed(SEED, 102, 0)).unwrap() {
            let e = e.unwrap();
            match loc.locate(&e) {
                Ok(p) => {
                    preds.push(p);
                    truth.push(e.label.unwrap());
                }
                Err(_) => failed += 1,
            }
        }
        out.push((med(&preds, &truth, &cyl).unwrap(), failed));
    }
    (out[0].0, out[0].1, out[1].0, out[1].1, t.elapsed())
}

fn criterion_3(s: &mut Suite) -> String {
    let (clean, f0, snr, f1, el) = baseline_meds();
    let pass = clean <= 0.010 && snr <= 0.025 && f0 == 0 && f1 == 0 && el < Duration::from_secs(300);
    s.record(
        3,
        pass,
        format!(
            "noiseless MED {:.3} cm (limit 1.0), SNR 20 dB MED {:.3} cm (limit 2.5), unresolved {f0}+{f1} of 400, {:.1} s (limit 300 s)",
            clean * 100.0,
            snr * 100.0,
            secs(el)
        ),
    );
    format!("{clean:e} {f0} {snr:e} {f1}")
}

// ---------- 4, 5, 9, 10, 11: learned localizer and mapping ----------

fn cylinder() -> CylinderSpec {
    CylinderSpec::default()
}

fn plan() -> DatasetPlan {
    DatasetPlan { n_train: N_TRAIN, n_test: N_TEST, ..Default::default() }
}

fn gated_pipeline(cfg: &SimConfig) -> Pipeline {
    let reference = synth_reference_noise(&default_layout(), &cylinder(), cfg, plan().reference_noise_s, child_seed(SEED, 5, 0)).unwrap();
    Pipeline { gate: Some(build_noise_profile(&reference, &GateConfig::default()).unwrap()), ..Pipeline::default() }
}

fn features(split: Split, cfg: &SimConfig, pipeline: &Pipeline) -> Vec<EventFeatures> {
    let analyzer = MelAnalyzer::default();
    let p = plan();
    let layout = default_layout();
    let cyl = cylinder();
    split_events(&p, split, &layout, &cyl, cfg, SEED).unwrap().map(|e| extract(&e.unwrap(), pipeline, &analyzer).unwrap()).collect()
}

fn fit(train_set: &[EventFeatures], modalities: Modalities, pipeline: &Pipeline) -> (RegressorModel, Duration) {
    let t = Instant::now();
    let cfg = TrainConfig { modalities, seed: child_seed(SEED, 103, 0), ..TrainConfig::default() };
    let out = train(train_set, None, &cfg, pipeline.clone(), default_layout(), cylinder(), |_| {}).unwrap();
    (out.model, t.elapsed())
}

fn med_of(model: &RegressorModel, set: &[EventFeatures]) -> f64 {
    evaluate(model, set, None).unwrap().med
}

struct MapResult {
    chamfer: f64,
    med: f64,
    accepted: usize,
    planned: usize,
    elapsed: Duration,
}

fn run_mapping(model: &RegressorModel, cfg: &SimConfig) -> MapResult {
    let t = Instant::now();
    let scene = BranchScene::default();
    let rig = Rig { layout: default_layout(), cylinder: cylinder(), sim: cfg.clone() };
    let mut plan = plan_strikes(&scene, &rig.cylinder, 100, child_seed(SEED, 104, 0)).unwrap();
    plan.poses.truncate(200);
    let threshold = default_threshold(&rig, child_seed(SEED, 105, 0)).unwrap();
    let out = execute_mapping(&plan, &scene, model, &rig, threshold, child_seed(SEED, 106, 0)).unwrap();
    let score = score_map(&out.predicted(), &scene.surface_samples(SURFACE_SPACING), &out.truth()).unwrap();
    MapResult { chamfer: score.chamfer_rms, med: score.med, accepted: out.events.len(), planned: out.planned, elapsed: t.elapsed() }
}

// ---------- 6, 7, 8: network and metric oracles ----------

fn criterion_6(s: &mut Suite) {
    let arch = Architecture::with_inputs(96, 60, 24, HIDDEN);
    let net = Network::init(arch, child_seed(SEED, 107, 0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(SEED, 108, 0));
    let b = 6;
    let dims = [96, 60, 24];
    let inputs = dims.map(|d| ndarray::Array2::from_shape_fn((b, d), |_| rng.random_range(-1.0..1.0)));
    let mask = ndarray::Array2::from_shape_fn((b, 3), |(r, k)| if r == 0 && k == 2 { 0.0 } else { 1.0 });
    let batch = Batch { inputs, mask };
    let targets = ndarray::Array2::from_shape_fn((b, 3), |_| rng.random_range(-1.0..1.0));
    let (_, grad) = net.loss_gradient(&batch, &targets).unwrap();
    let probes = 600;
    let h = 1e-5;
    let (mut ok, mut worst) = (0, 0.0f64);
    for _ in 0..probes {
        let i = rng.random_range(0..net.params.len());
        let mut p = net.clone();
        p.params[i] = net.params[i] + h;
        let lp = p.batch_loss(&batch, &targets).unwrap();
        p.params[i] = net.params[i] - h;
        let lm = p.batch_loss(&batch, &targets).unwrap();
        let num = (lp - lm) / (2.0 * h);
        let rel = (grad[i] - num).abs() / grad[i].abs().max(num.abs()).max(1e-7);
        worst = worst.max(rel);
        ok += (rel < 1e-4) as usize;
    }
    s.record(6, ok == probes, format!("{ok}/{probes} probes under 1e-4 relative error (worst {worst:.2e}, floor 1e-7 on the denominator)"));
}

fn criterion_7(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(SEED, 109, 0));
    let mut ok = 0;
    for _ in 0..1000 {
        let pred = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let z = rng.random_range(-0.1..0.1);
        let th = rng.random_range(-PI..PI);
        let base = loss(pred, &ContactPoint::new(z, th)).to_bits();
        let plus = loss(pred, &ContactPoint::new(z, th + 2.0 * PI)).to_bits();
        let minus = loss(pred, &ContactPoint::new(z, th - 2.0 * PI)).to_bits();
        ok += (base == plus && base == minus) as usize;
    }
    s.record(7, ok == 1000, format!("{ok}/1000 pairs bit-identical under theta +/- 2 pi"));
}

fn criterion_8(s: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(SEED, 110, 0));
    let mut ok = 0;
    for trial in 0..100 {
        let lattice = trial % 2 == 1;
        let (na, nb) = (rng.random_range(1..=200), rng.random_range(1..=200));
        let mut cloud = |n: usize| {
            PointCloud::new(
                (0..n)
                    .map(|_| {
                        let mut c = || {
                            let v: f64 = rng.random_range(-0.3..0.3);
                            if lattice { (v * 20.0).round() / 20.0 } else { v }
                        };
                        Vec3::new(c(), c(), c())
                    })
                    .collect(),
            )
        };
        let a = cloud(na);
        let b = cloud(nb);
        ok += (chamfer_rms(&a, &b).unwrap().to_bits() == chamfer_rms_brute_force(&a, &b).unwrap().to_bits()) as usize;
    }
    let p = PointCloud::new((0..50).map(|i| Vec3::new(i as f64 * 0.01, (i * i) as f64 * 1e-3, 0.2)).collect());
    let self_zero = chamfer_rms(&p, &p).unwrap() == 0.0;
    let sub = PointCloud::new(vec![Vec3::ZERO]);
    let sup = PointCloud::new(vec![Vec3::ZERO, Vec3::new(0.05, 0.0, 0.0)]);
    let (fwd, back) = (chamfer_rms(&sub, &sup).unwrap(), chamfer_rms(&sup, &sub).unwrap());
    let pass = ok == 100 && self_zero && fwd == 0.0 && back > 0.0;
    s.record(
        8,
        pass,
        format!("{ok}/100 pairs equal brute force exactly, chamfer(P,P)=0: {self_zero}, subset->superset {fwd} vs superset->subset {back:.4} m"),
    );
}

fn main() {
    let start = Instant::now();
    let mut s = Suite { lines: Vec::new() };
    criterion_1(&mut s);
    criterion_2(&mut s);
    criterion_6(&mut s);
    criterion_7(&mut s);
    criterion_8(&mut s);
    let c3 = criterion_3(&mut s);

    let cfg = SimConfig::default();
    let gated = gated_pipeline(&cfg);
    let tests: Vec<Vec<EventFeatures>> = [Split::Test1, Split::Test2, Split::Test3, Split::Test4].iter().map(|&sp| features(sp, &cfg, &gated)).collect();
    let tr = features(Split::Train, &cfg, &gated);

    let (model, train_time) = fit(&tr, Modalities::ALL, &gated);
    let meds: Vec<f64> = tests.iter().map(|t| med_of(&model, t)).collect();
    s.record(
        4,
        meds[0] <= 0.015 && train_time <= Duration::from_secs(1200),
        format!("split-1 MED {:.3} cm on {N_TEST} events (limit 1.5), trained on {N_TRAIN} events in {:.0} s (limit 1200 s)", meds[0] * 100.0, secs(train_time)),
    );

    let (audio, _) = fit(&tr, "mel,gcc".parse().unwrap(), &gated);
    let audio_meds: Vec<f64> = tests.iter().map(|t| med_of(&audio, t)).collect();
    let order = meds[0] < meds[1] && meds[1] <= meds[2];
    let audio_ratio = audio_meds[3] / audio_meds[2];
    let fused_ratio = meds[3] / meds[2];
    s.record(
        5,
        order && audio_ratio <= 1.5 && fused_ratio > 1.5,
        format!(
            "audio+proprio MED by split {:.2}/{:.2}/{:.2}/{:.2} cm; split4/split3 audio-only {audio_ratio:.2} (limit 1.5), audio+proprio {fused_ratio:.2} (needs > 1.5); audio-only MED {:.2}/{:.2}/{:.2}/{:.2} cm",
            meds[0] * 100.0,
            meds[1] * 100.0,
            meds[2] * 100.0,
            meds[3] * 100.0,
            audio_meds[0] * 100.0,
            audio_meds[1] * 100.0,
            audio_meds[2] * 100.0,
            audio_meds[3] * 100.0
        ),
    );
    drop(audio);

    let map = run_mapping(&model, &cfg);
    s.record(
        9,
        map.chamfer <= 0.03 && map.med <= 0.025 && map.elapsed <= Duration::from_secs(600),
        format!(
            "{} of {} planned strikes accepted, Chamfer {:.3} cm (limit 3.0), MED {:.3} cm (limit 2.5), {:.0} s (limit 600 s)",
            map.accepted,
            map.planned,
            map.chamfer * 100.0,
            map.med * 100.0,
            secs(map.elapsed)
        ),
    );

    // ablation: same training without background subtraction
    drop(tr);
    let plain = Pipeline { gate: None, ..gated.clone() };
    let tr_plain = features(Split::Train, &cfg, &plain);
    let (plain_model, _) = fit(&tr_plain, Modalities::ALL, &plain);
    drop(tr_plain);
    let plain_meds: Vec<f64> = [Split::Test1, Split::Test2, Split::Test3, Split::Test4].iter().map(|&sp| med_of(&plain_model, &features(sp, &cfg, &plain))).collect();
    drop(plain_model);
    let mut table = String::from("pipeline,split1_med_cm,split2_med_cm,split3_med_cm,split4_med_cm\n");
    for (name, m) in [("full", &meds), ("no_background_subtraction", &plain_meds)] {
        let _ = writeln!(table, "{name},{:.4},{:.4},{:.4},{:.4}", m[0] * 100.0, m[1] * 100.0, m[2] * 100.0, m[3] * 100.0);
    }
    let table_path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("ablation.csv");
    let _ = std::fs::write(&table_path, &table);
    print!("{table}");
    s.record(
        11,
        plain_meds[2] > meds[2],
        format!("split-3 MED {:.3} cm without background subtraction vs {:.3} cm with it; table written to {}", plain_meds[2] * 100.0, meds[2] * 100.0, table_path.display()),
    );
    drop(tests);

    // determinism: everything rebuilt from the seeds
    let c3_again = {
        let (clean, f0, snr, f1, _) = baseline_meds();
        format!("{clean:e} {f0} {snr:e} {f1}")
    };
    let gated2 = gated_pipeline(&cfg);
    let tr2 = features(Split::Train, &cfg, &gated2);
    let (model2, _) = fit(&tr2, Modalities::ALL, &gated2);
    drop(tr2);
    let med2 = med_of(&model2, &features(Split::Test1, &cfg, &gated2));
    let map2 = run_mapping(&model2, &cfg);
    let same3 = c3 == c3_again;
    let same4 = med2.to_bits() == meds[0].to_bits();
    let same9 = (map2.chamfer.to_bits(), map2.med.to_bits(), map2.accepted) == (map.chamfer.to_bits(), map.med.to_bits(), map.accepted);
    s.record(
        10,
        same3 && same4 && same9,
        format!("bit-identical reruns: baseline {same3}, learned split-1 MED {same4}, mapping {same9}"),
    );

    s.lines.sort_by_key(|l| l.0);
    println!("\nsummary:");
    for (_, _, line) in &s.lines {
        println!("{line}");
    }
    let failed = s.lines.iter().filter(|l| !l.1).count();
    println!("acceptance: {} passed, {failed} failed, {:.0} s total", s.lines.len() - failed, secs(start.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}
