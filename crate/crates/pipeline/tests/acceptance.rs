//! Acceptance suite: one `[PASS]`/`[FAIL]` line per criterion, nonzero exit if any fails.

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use base64::Engine as _;
use eet_core::diffusion::{
    draw_sample, sample, Checkpoint, Conditioning, DiffusionModel, ModelConfig, OutputInit, SampleDraw, SampleMode,
    TrainConfig, TrainContext, TrainSample,
};
use eet_core::facemodel::{make_synthetic_model, mesh_vertex_bytes, MeshSequence, ParamSequence, SyntheticModelConfig};
use eet_core::losses::{
    accel_loss, emo_loss, mesh_loss, recon_loss, sample_train_mode, velocity_loss, FrameMask, LossWeights, MappingInput,
    TrainMode,
};
use eet_core::manifold::{
    build_dictionary, classify, edit, scan_crossover, train_classifier, ClassifierConfig, Edit, EditDirection, EditRequest,
    EditVectorDictionary, EmotionEmbedding, LabeledEmbeddingSet, LinearClassifier, TrainingMeta,
};
use eet_core::metrics::{ch_index, delta_ch, fdd, lve, mouth_opening_deviation, ve, LveMode};
use eet_core::numerics::{dot, grad_check, norm, Matrix};
use eet_pipeline::artifacts::{RunArtifacts, CHECKPOINT_FILE, DICTIONARY_FILE, LOG_FILE, METRICS_FILE};
use eet_pipeline::commands::{eval_cmd, server_state, synth_data, train_cmd, EngineArgs, EvalArgs, ServeArgs};
use eet_pipeline::engine::{EditSpec, Engine, GenerateRequest};
use eet_pipeline::eval::{EvalReport, EvalSource};
use eet_pipeline::train::LogRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

// ---------------------------------------------------------------------------------------------
// shared training runs

struct Runs {
    _dir: tempfile::TempDir,
    data: PathBuf,
    full: PathBuf,
    full_time: Duration,
    no_emo: PathBuf,
    no_dual: PathBuf,
}

fn runs() -> &'static Runs {
    static R: OnceLock<Runs> = OnceLock::new();
    R.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = |n: &str| dir.path().join(n);
        synth_data(None, None, &p("data"), false).unwrap();
        let started = Instant::now();
        train_cmd(None, &p("data"), None, &p("full"), false).unwrap();
        let full_time = started.elapsed();
        for (name, toml) in [("no_emo", "emo_loss_enabled = false\n"), ("no_dual", "dual_train = false\n")] {
            std::fs::write(p(&format!("{name}.toml")), toml).unwrap();
            train_cmd(Some(&p(&format!("{name}.toml"))), &p("data"), None, &p(name), false).unwrap();
        }
        Runs { data: p("data"), full: p("full"), full_time, no_emo: p("no_emo"), no_dual: p("no_dual"), _dir: dir }
    })
}

fn engine(run: &Path) -> Engine {
    Engine::load(&run.join(CHECKPOINT_FILE), None, None).unwrap()
}

fn eval(run: &Path, source: EvalSource, out: Option<PathBuf>) -> Result<EvalReport> {
    eval_cmd(&EvalArgs {
        engine: EngineArgs { checkpoint: run.join(CHECKPOINT_FILE), ..Default::default() },
        data: runs().data.clone(),
        seed: None,
        source,
        out,
        force: false,
    })
}

fn alphas() -> Vec<f64> {
    (0..=60).map(|i| i as f64 * 0.05).collect()
}

// ---------------------------------------------------------------------------------------------
// gradient certification

fn grad_certification() -> Result<Outcome> {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for input in [MappingInput::Expression, MappingInput::FullParams] {
        for mode in [TrainMode::Original, TrainMode::Edited] {
            let face = make_synthetic_model(&SyntheticModelConfig { grid: 4, n_id: 2, n_exp: 3, n_pose: 1, seed: 5 })?;
            let layout = face.layout();
            let mut cfg = ModelConfig::new(layout, 2, 3);
            cfg.denoiser.d_model = 16;
            cfg.denoiser.ffn_hidden = 16;
            cfg.denoiser.time_dim = 4;
            cfg.denoiser.output_init = OutputInit::Random;
            cfg.mapping_hidden = 8;
            cfg.mapping_input = input;
            cfg.schedule.steps = 10;
            cfg.schedule.beta_max = 0.2;
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut model = DiffusionModel::new(cfg, &mut rng)?;
            let centroids = [[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0]];
            let (mut rows, mut labels) = (Vec::new(), Vec::new());
            for (k, c) in centroids.iter().enumerate() {
                for _ in 0..10 {
                    rows.push(c.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect::<Vec<f64>>());
                    labels.push(k);
                }
            }
            let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
            let set = LabeledEmbeddingSet::new(Matrix::from_rows(&rows)?, labels, names.clone())?;
            let dict = build_dictionary(&train_classifier(&set, &ClassifierConfig::default())?, &names)?;
            let samples: Vec<TrainSample> = (0..3)
                .map(|k| TrainSample {
                    x0: ParamSequence::new(Matrix::from_fn(4, layout.dim(), |_, _| rng.random_range(-1.0..1.0))).unwrap(),
                    audio: Matrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0)),
                    emotion: EmotionEmbedding::new(rows[10 * k].clone()).unwrap(),
                    label: k,
                    mask: FrameMask::full(4),
                })
                .collect();
            let schedule = cfg.schedule.build()?;
            let ctx = TrainContext { face: &face, schedule: &schedule, dictionary: Some(&dict) };
            let tcfg = TrainConfig { mode_override: Some(mode), ..Default::default() };
            let draws: Vec<SampleDraw> =
                samples.iter().map(|s| draw_sample(s, &ctx, &tcfg, &mut rng)).collect::<Result<_, _>>()?;
            let arch = model.arch;
            let weights = LossWeights::default();
            let report = grad_check(&mut model.params, 1e-5, |store, with_grad| {
                store.zero_grad();
                let mut total = 0.0;
                for (s, d) in samples.iter().zip(&draws) {
                    total += arch.sample_objective(store, &ctx, &weights, s, d, with_grad)?.total;
                }
                Ok(total)
            })?;
            worst = worst.max(report.max_rel_error);
            checked += report.entries_checked;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 60.0,
        format!("max rel error {worst:.2e} (≤ 1e-4) over {checked} entries, 4 objective variants, {secs:.1} s (< 60 s)"),
    )
}

// ---------------------------------------------------------------------------------------------
// edit algebra

fn edit_algebra() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for _ in 0..100 {
        let (k_n, d) = (rng.random_range(2..6), rng.random_range(2..20));
        let w = Matrix::from_fn(k_n, d, |_, _| rng.random_range(-2.0..2.0));
        let b: Vec<f64> = (0..k_n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let meta = TrainingMeta { iterations: 0, final_loss: 0.0, l2: 0.0, seed: 0 };
        let clf = LinearClassifier::new(w, b, meta)?;
        let names: Vec<String> = (0..k_n).map(|i| format!("c{i}")).collect();
        let dict = build_dictionary(&clf, &names)?;
        let e: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let base = EmotionEmbedding::new(e.clone())?;
        let k = rng.random_range(0..k_n);
        let j = (k + rng.random_range(1..k_n)) % k_n;
        let (a1, a2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let run = |edits: Vec<Edit>| edit(&EditRequest { base: base.clone(), edits }, &dict).map(EmotionEmbedding::into_inner);
        let cls = |alpha| Edit { direction: EditDirection::Class(k), alpha };
        let pair = |alpha| Edit { direction: EditDirection::Pair(k, j), alpha };

        let zero = run(vec![cls(0.0), pair(0.0)])?;
        ensure!(zero == e, "α = 0 changed the embedding");
        let v = dict.direction(EditDirection::Class(k))?;
        let both = run(vec![cls(a1), cls(a2)])?;
        let summed: Vec<f64> = e.iter().zip(v).map(|(x, vi)| x + (a1 + a2) * vi).collect();
        let once = EmotionEmbedding::new(run(vec![cls(a1)])?)?;
        let twice = edit(&EditRequest { base: once, edits: vec![cls(a2)] }, &dict)?.into_inner();
        worst = worst.max(close(&both, &summed)).max(close(&twice, &summed));
        worst = worst.max(close(&run(vec![cls(a1), cls(-a1)])?, &e));
        worst = worst.max(close(&run(vec![pair(a2), pair(-a2)])?, &e));
        let shifted = run(vec![cls(a1)])?;
        let shift = clf.logit(&shifted, k) - clf.logit(&e, k);
        worst = worst.max((shift - a1 * norm(clf.weights.row(k))).abs());
    }
    outcome(worst <= 1e-9, format!("100 cases, max deviation {worst:.2e} (≤ 1e-9)"))
}

// ---------------------------------------------------------------------------------------------
// argmax crossover

fn argmax_crossover() -> Result<Outcome> {
    let eng = engine(&runs().full);
    let mut ok = 0;
    let mut notes = Vec::new();
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let scan = scan_crossover(&eng.dictionary, eng.centroids.row(i), i, j, &alphas())?;
            let start = classify(eng.centroids.row(i), eng.dictionary.classifier())?.argmax;
            let good = start == i && scan.alpha_star.is_some() && !scan.returned_to_source;
            ok += usize::from(good);
            notes.push(format!("{i}→{j} α*={}", scan.alpha_star.map_or("none".into(), |a| format!("{a:.2}"))));
        }
    }
    outcome(ok == 6, format!("{ok}/6 ordered pairs cross over without return ({})", notes.join(", ")))
}

// ---------------------------------------------------------------------------------------------
// metric oracles

type Seq = Vec<Vec<[f64; 3]>>;

fn random_seq(rng: &mut impl Rng, t: usize, v: usize) -> Seq {
    (0..t).map(|_| (0..v).map(|_| [0, 1, 2].map(|_| rng.random_range(-20.0..20.0))).collect()).collect()
}

fn mesh(p: &Seq) -> MeshSequence {
    let rows: Vec<Vec<f64>> = p.iter().map(|f| f.iter().flatten().copied().collect()).collect();
    MeshSequence::new(Matrix::from_rows(&rows).unwrap()).unwrap()
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

fn ch_oracle(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let sq = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sq(&points[i], &points[j]);
        }
    }
    total /= n as f64;
    let mut classes = labels.to_vec();
    classes.sort();
    classes.dedup();
    let mut within = 0.0;
    for c in &classes {
        let m: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| *l == c).map(|(p, _)| p).collect();
        let mut s = 0.0;
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                s += sq(m[i], m[j]);
            }
        }
        within += s / m.len() as f64;
    }
    let k = classes.len() as f64;
    ((total - within) / (k - 1.0)) / (within / (n as f64 - k))
}

fn metric_oracles() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let mut worst = [0.0f64; 5];
    for _ in 0..50 {
        let (t_n, v_n) = (rng.random_range(2..9), rng.random_range(3..12));
        let (p, g) = (random_seq(&mut rng, t_n, v_n), random_seq(&mut rng, t_n, v_n));
        let (ps, gs) = (mesh(&p), mesh(&g));
        let mut order: Vec<u32> = (0..v_n as u32).collect();
        order.shuffle(&mut rng);
        let subset = &order[..rng.random_range(1..=v_n)];

        let mut s = 0.0;
        for t in 0..t_n {
            for v in 0..v_n {
                s += dist(p[t][v], g[t][v]);
            }
        }
        worst[0] = worst[0].max(rel(ve(&ps, &gs)?, s / (t_n * v_n) as f64));

        let mut m = 0.0;
        for t in 0..t_n {
            let mut best = f64::MIN;
            for &v in subset {
                best = best.max(dist(p[t][v as usize], g[t][v as usize]));
            }
            m += best;
        }
        worst[1] = worst[1].max(rel(lve(&ps, &gs, subset, LveMode::Max)?, m / t_n as f64));

        let (u, l) = (order[0] as usize, order[v_n - 1] as usize);
        let mut o = 0.0;
        for t in 0..t_n {
            o += (dist(p[t][u], p[t][l]) - dist(g[t][u], g[t][l])).abs();
        }
        worst[2] = worst[2].max(rel(mouth_opening_deviation(&ps, &gs, u, l)?, o / t_n as f64));

        let spread = |s: &Seq, v: usize| {
            let n = t_n as f64;
            let second = s.iter().map(|f| f[v].iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n;
            let first: f64 = (0..3).map(|k| (s.iter().map(|f| f[v][k]).sum::<f64>() / n).powi(2)).sum();
            (second - first).max(0.0).sqrt()
        };
        let mut f = 0.0;
        for &v in subset {
            f += (spread(&p, v as usize) - spread(&g, v as usize)).abs();
        }
        worst[3] = worst[3].max((fdd(&ps, &gs, subset)? - f / subset.len() as f64).abs());

        let (k_n, dim) = (rng.random_range(2..5), rng.random_range(1..6));
        let (mut pts, mut labels) = (Vec::new(), Vec::new());
        for c in 0..k_n {
            let centre: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
            for _ in 0..rng.random_range(2..10) {
                pts.push(centre.iter().map(|x| x + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
                labels.push(c);
            }
        }
        worst[4] = worst[4].max(rel(ch_index(&Matrix::from_rows(&pts)?, &labels)?, ch_oracle(&pts, &labels)));
    }

    // ΔCH(gt, gt) and CH invariances
    let (mut pts, mut labels) = (Vec::new(), Vec::new());
    for c in 0..3usize {
        for _ in 0..8 {
            pts.push((0..4).map(|d| if d == c { 5.0 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            labels.push(c);
        }
    }
    let m = Matrix::from_rows(&pts)?;
    let base = ch_index(&m, &labels)?;
    let self_delta = delta_ch(&m, &labels, &m, &labels)?;
    let shift: Vec<f64> = (0..4).map(|_| rng.random_range(-100.0..100.0)).collect();
    let translated = Matrix::from_fn(m.rows(), 4, |r, c| m.get(r, c) + shift[c]);
    let scaled = m.scale(7.5);
    let mut perm: Vec<usize> = (0..m.rows()).collect();
    perm.shuffle(&mut rng);
    let permuted = Matrix::from_fn(m.rows(), 4, |r, c| m.get(perm[r], c));
    let permuted_labels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
    let renamed: Vec<usize> = labels.iter().map(|l| [7, 2, 40][*l]).collect();
    let inv = [
        ch_index(&translated, &labels)?,
        ch_index(&scaled, &labels)?,
        ch_index(&permuted, &permuted_labels)?,
        ch_index(&m, &renamed)?,
    ]
    .iter()
    .map(|c| (c - base).abs() / base)
    .fold(0.0, f64::max);

    let pass = worst.iter().all(|w| *w <= 1e-12) && self_delta == 0.0 && inv <= 1e-9;
    outcome(
        pass,
        format!(
            "50 instances each, max rel error VE {:.1e} LVE {:.1e} MOD {:.1e} FDD {:.1e} CH {:.1e} (≤ 1e-12); ΔCH(gt,gt) = {self_delta}; CH invariance {inv:.1e} (≤ 1e-9)",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// loss analytic cases

fn loss_cases() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let (t, d, v) = (6, 5, 7);
    let gt = Matrix::from_fn(t, d, |_, _| rng.random_range(-1.0..1.0));
    let c = 0.375;
    let r = recon_loss(
        &ParamSequence::new(gt.map(|x| x + c))?,
        &ParamSequence::new(gt.clone())?,
        &FrameMask::full(t),
    )?;
    worst = worst.max((r - c * c).abs());

    let g = Matrix::from_fn(t, 3 * v, |_, _| rng.random_range(-10.0..10.0));
    let ml = mesh_loss(&MeshSequence::new(g.map(|x| x + c))?, &MeshSequence::new(g.clone())?)?;
    worst = worst.max((ml - 3.0 * c * c).abs());

    let frame_a: Vec<f64> = (0..3 * v).map(|_| rng.random_range(-10.0..10.0)).collect();
    let frame_b: Vec<f64> = (0..3 * v).map(|_| rng.random_range(-10.0..10.0)).collect();
    let static_a = MeshSequence::new(Matrix::from_fn(t, 3 * v, |_, i| frame_a[i]))?;
    let static_b = MeshSequence::new(Matrix::from_fn(t, 3 * v, |_, i| frame_b[i]))?;
    worst = worst.max(velocity_loss(&static_a, &static_b)?.abs());

    let slope_a: Vec<f64> = (0..3 * v).map(|_| rng.random_range(-2.0..2.0)).collect();
    let slope_b: Vec<f64> = (0..3 * v).map(|_| rng.random_range(-2.0..2.0)).collect();
    let lin_a = MeshSequence::new(Matrix::from_fn(t, 3 * v, |f, i| frame_a[i] + slope_a[i] * f as f64))?;
    let lin_b = MeshSequence::new(Matrix::from_fn(t, 3 * v, |f, i| frame_b[i] + slope_b[i] * f as f64))?;
    worst = worst.max(accel_loss(&lin_a, &lin_b)?.abs());

    let e = EmotionEmbedding::new(vec![1.0, 2.0, -0.5])?;
    let orth = EmotionEmbedding::new(vec![2.0, -1.0, 0.0])?;
    let opp = EmotionEmbedding::new(vec![-2.0, -4.0, 1.0])?;
    assert_eq!(dot(e.as_slice(), orth.as_slice()), 0.0);
    let triple = [emo_loss(&e, &e)?, emo_loss(&e, &orth)?, emo_loss(&e, &opp)?];
    for (got, want) in triple.iter().zip([0.0, 1.0, 2.0]) {
        worst = worst.max((got - want).abs());
    }
    outcome(
        worst <= 1e-12,
        format!("recon c², mesh 3c², static velocity 0, linear acceleration 0, cosine {triple:?}; max deviation {worst:.1e} (≤ 1e-12)"),
    )
}

// ---------------------------------------------------------------------------------------------
// training signal

fn training_signal() -> Result<Outcome> {
    let r = runs();
    let log = std::fs::read_to_string(r.full.join(LOG_FILE))?;
    let records: Vec<LogRecord> = log.lines().map(serde_json::from_str).collect::<Result<_, _>>()?;
    let (initial, last) = records
        .iter()
        .find_map(|rec| match rec {
            LogRecord::Done { initial_val_recon, final_val_recon, .. } => Some((*initial_val_recon, *final_val_recon)),
            _ => None,
        })
        .ok_or_else(|| anyhow::anyhow!("log has no done record"))?;
    let ratio = last / initial;
    let trained = eval(&r.full, EvalSource::Model, None)?;
    let untrained = eval(&r.full, EvalSource::Untrained, None)?;
    let secs = r.full_time.as_secs_f64();
    outcome(
        ratio <= 0.2 && trained.delta_ch < untrained.delta_ch && secs <= 600.0,
        format!(
            "val recon {initial:.4} → {last:.4} (ratio {ratio:.3} ≤ 0.2); ΔCH trained {:.4} < untrained {:.4}; training {secs:.1} s (≤ 600 s)",
            trained.delta_ch, untrained.delta_ch
        ),
    )
}

// ---------------------------------------------------------------------------------------------
// steering efficacy

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn steering() -> Result<Outcome> {
    let eng = engine(&runs().full);
    let mut hits = 0;
    let mut notes = Vec::new();
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        let scan = scan_crossover(&eng.dictionary, eng.centroids.row(i), i, j, &alphas())?;
        let Some(star) = scan.alpha_star else {
            notes.push(format!("{i}→{j}: no crossover"));
            continue;
        };
        let alpha = 2.0 * star;
        for seed in 0..3u64 {
            let req = GenerateRequest {
                label: None,
                embedding: Some(eng.centroids.row(i).to_vec()),
                edits: vec![EditSpec { k: i, alpha, to: Some(j) }],
                frames: eng.config.synth.frames,
                seed: Some(seed),
                deterministic: true,
                identity: 0,
            };
            let g = eng.generate(&req)?;
            let emb = eng.model.embed(&g.params)?;
            let (to_j, to_i) = (cosine(emb.as_slice(), eng.centroids.row(j)), cosine(emb.as_slice(), eng.centroids.row(i)));
            hits += usize::from(to_j > to_i);
            notes.push(format!("{i}→{j}/s{seed} α={alpha:.2}: {to_j:.3} vs {to_i:.3}"));
        }
    }
    outcome(hits >= 8, format!("{hits}/9 edited generations closer to the target centroid (≥ 8) [{}]", notes.join("; ")))
}

// ---------------------------------------------------------------------------------------------
// ablation direction

fn ablation() -> Result<Outcome> {
    let r = runs();
    let full = eval(&r.full, EvalSource::Model, None)?.emo_loss;
    let no_emo = eval(&r.no_emo, EvalSource::Model, None)?.emo_loss;
    let no_dual = eval(&r.no_dual, EvalSource::Model, None)?.emo_loss;
    outcome(
        full <= no_emo,
        format!("eval L_emo full {full:.4} ≤ w/o L_emo {no_emo:.4} (w/o dual-train {no_dual:.4}, not asserted)"),
    )
}

// ---------------------------------------------------------------------------------------------
// dual-train statistics

fn dual_train_frequency() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    let n = 10_000;
    let original = (0..n).filter(|_| sample_train_mode(&mut rng) == TrainMode::Original).count();
    let f = original as f64 / n as f64;
    outcome((0.487..=0.513).contains(&f), format!("Original-mode frequency {f:.4} over {n} draws (in [0.487, 0.513])"))
}

// ---------------------------------------------------------------------------------------------
// reproducibility and round trips

fn reproducibility() -> Result<Outcome> {
    let r = runs();
    let dir = tempfile::tempdir()?;
    let mut checks: Vec<(&str, bool)> = Vec::new();

    // second dataset and training run with the same seed
    let data2 = dir.path().join("data");
    synth_data(None, None, &data2, false)?;
    let same_data = ["manifest.json", "face.eetm", "samples/00000.bin", "samples/00119.bin"]
        .iter()
        .all(|f| std::fs::read(r.data.join(f)).ok() == std::fs::read(data2.join(f)).ok());
    checks.push(("dataset bytes", same_data));
    let run2 = dir.path().join("run");
    train_cmd(None, &r.data, None, &run2, false)?;
    let same = |f: &str| std::fs::read(r.full.join(f)).ok() == std::fs::read(run2.join(f)).ok();
    checks.push(("checkpoint bytes", same(CHECKPOINT_FILE)));
    checks.push(("dictionary bytes", same(DICTIONARY_FILE)));
    checks.push(("log bytes", same(LOG_FILE)));
    let m1 = dir.path().join("m1.json");
    eval(&r.full, EvalSource::Model, Some(m1.clone()))?;
    eval(&run2, EvalSource::Model, Some(run2.join(METRICS_FILE)))?;
    checks.push(("metrics bytes", std::fs::read(&m1)? == std::fs::read(run2.join(METRICS_FILE))?));
    let artifacts = RunArtifacts::load(&run2)?;
    checks.push(("artifact digests", artifacts.metrics.is_some() && artifacts.verify(&run2).is_ok()));

    // checkpoint and dictionary round trips with digest verification
    let ckpt = Checkpoint::load(r.full.join(CHECKPOINT_FILE))?;
    let ck2 = dir.path().join("c.eetk");
    ckpt.save(&ck2)?;
    checks.push(("checkpoint save/load", std::fs::read(&ck2)? == std::fs::read(r.full.join(CHECKPOINT_FILE))?));
    let mut bytes = std::fs::read(&ck2)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(&ck2, &bytes)?;
    checks.push(("corrupt checkpoint rejected", Checkpoint::load(&ck2).is_err()));
    let dict = EditVectorDictionary::load(r.full.join(DICTIONARY_FILE))?;
    let d2 = dir.path().join("d.json");
    dict.save(&d2)?;
    let reloaded = EditVectorDictionary::load(&d2)?;
    checks.push(("dictionary save/load", reloaded == dict && reloaded.digest() == dict.digest()));
    let tampered = std::fs::read_to_string(&d2)?.replacen(&dict.digest()[..8], "00000000", 1);
    checks.push(("tampered dictionary rejected", EditVectorDictionary::from_json(&tampered).is_err()));

    // service against direct library calls
    let state = Arc::new(server_state(&ServeArgs {
        engine: EngineArgs { checkpoint: r.full.join(CHECKPOINT_FILE), ..Default::default() },
        metrics: None,
        seed: 0,
        bind: String::new(),
    })?);
    let rt = tokio::runtime::Runtime::new()?;
    let (addr, _) = rt.block_on(eet_pipeline::server::spawn(state.clone(), "127.0.0.1:0"))?;
    let post = |path: &str, body: Value| -> Result<Value> {
        rt.block_on(async {
            let resp = reqwest::Client::new().post(format!("http://{addr}{path}")).json(&body).send().await?;
            ensure!(resp.status().is_success(), "{path} returned {}", resp.status());
            Ok(resp.json::<Value>().await?)
        })
    };
    let lib = Checkpoint::load(r.full.join(CHECKPOINT_FILE))?;
    let model = lib.model()?;
    let schedule = lib.schedule()?;
    let face = eet_core::facemodel::BlendshapeModel::load(r.full.join("face.eetm"))?;
    let centroids = lib.get(eet_pipeline::train::CENTROIDS_TENSOR)?;
    let identities = lib.get(eet_pipeline::train::IDENTITIES_TENSOR)?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut edit_ok = true;
    let mut gen_ok = true;
    for case in 0..5u64 {
        let e: Vec<f64> = (0..dict.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (k, a) = (rng.random_range(0..3usize), rng.random_range(-3.0..3.0));
        let served = post("/api/edit", json!({"embedding": e, "edits": [{"k": k, "alpha": a}]}))?;
        let direct = edit(
            &EditRequest { base: EmotionEmbedding::new(e.clone())?, edits: vec![Edit { direction: EditDirection::Class(k), alpha: a }] },
            &dict,
        )?;
        let served: Vec<f64> = serde_json::from_value(served["embedding"].clone())?;
        edit_ok &= served == direct.as_slice();

        let label = case as usize % 3;
        let body = json!({"label": dict.class_names()[label], "edits": [{"k": k, "alpha": a}], "frames": 16, "seed": case, "deterministic": true});
        let served = post("/api/generate", body)?;
        let base = EmotionEmbedding::new(centroids.row(label).to_vec())?;
        let edited = edit(&EditRequest { base, edits: vec![Edit { direction: EditDirection::Class(k), alpha: a }] }, &dict)?;
        let audio = eet_core::synthdata::FeatureProvider::audio_features(
            &eet_core::synthdata::SynthAudio::from_config(&state.engine.config.synth),
            16,
            case,
        )?;
        let cond = Conditioning::new(audio, edited, identities.row(0).to_vec())?;
        let params = sample(&model, &cond, &schedule, &mut ChaCha8Rng::seed_from_u64(case), SampleMode::Deterministic, 16, model.config().layout.dim())?;
        let direct = mesh_vertex_bytes(&face.decode_sequence(&params)?);
        let bytes = base64::engine::general_purpose::STANDARD.decode(served["vertices_b64"].as_str().unwrap_or_default())?;
        gen_ok &= bytes == direct;
    }
    checks.push(("service /api/edit = library", edit_ok));
    checks.push(("service /api/generate = library", gen_ok));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} checks bit-exact: {}", checks.len(), checks.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "))
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("gradient certification", grad_certification),
        ("edit algebra", edit_algebra),
        ("argmax crossover", argmax_crossover),
        ("metric oracles", metric_oracles),
        ("loss analytic cases", loss_cases),
        ("end-to-end training signal", training_signal),
        ("steering efficacy", steering),
        ("ablation direction", ablation),
        ("dual-train statistics", dual_train_frequency),
        ("reproducibility and round trips", reproducibility),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check);
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok(Ok(o)) => (o.pass, o.detail),
            Ok(Err(e)) => (false, format!("error: {e:#}")),
            Err(_) => (false, "panicked".to_string()),
        };
        failures += usize::from(!pass);
        println!("[{}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
