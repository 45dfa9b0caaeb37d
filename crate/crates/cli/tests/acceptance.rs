//! Acceptance suite. Prints one line per criterion and exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use setseq::data::{Objective, ObjectiveMatrix, ObjectiveSet, Session, NUM_OBJECTIVES};
use setseq::datagen::{generate, split, GenConfig};
use setseq::decoder::{is_unmasked, jmo_beam_search, relative_drops, setrank_sort, wtsum_rank, DecodeConfig};
use setseq::encoder::{EncoderConfig, EncoderModel};
use setseq::eval::{epsilon_sweep, evaluate, interplay_analysis, score_sessions, MethodReport, Ranker};
use setseq::featurizer::{featurize_session, FeatureLayout};
use setseq::metrics::{good_all, map_at_k, ndcg_at_k, GoodAll};
use setseq::model::Model;
use setseq::numerics::gradcheck::relative_error;
use setseq::numerics::Tensor;
use setseq::trainer::{labels, session_gradients, session_loss, train, LabelMode, Loss, TrainConfig};
use setseq_cli::api::{router, AppState};

const REFERENCE_SHA256: &str = "9227d39d853eb94a926d095c5f3af87eb86df5ce7abebea97e9fa94d3a25d222";

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || {
        format!("took {:.1?}, limit {:.0?}", elapsed, limit)
    })
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = t.elapsed().as_secs_f64();
    match &res {
        Ok(detail) => println!("PASS  {:<22} {} [{:.1}s]", name, detail, secs),
        Err(why) => println!("FAIL  {:<22} {} [{:.1}s]", name, why, secs),
    }
    res.is_ok()
}

fn tiny_encoder(layout: FeatureLayout, seed: u64) -> Model {
    let cfg = EncoderConfig {
        layers: 2,
        heads: 2,
        inducing_points: 4,
        hidden: 16,
        ff_hidden: 32,
    };
    EncoderModel::new(cfg, layout, seed).unwrap().into()
}

fn small_sessions(n_users: usize, tracks: [usize; 2], seed: u64) -> Vec<Session> {
    let cfg = GenConfig {
        n_users,
        sessions_per_user: 2,
        tracks_per_session: tracks,
        seed,
        ..GenConfig::default()
    };
    generate(&cfg).unwrap().sessions
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let sessions = small_sessions(4, [6, 6], 5);
    let session = sessions
        .iter()
        .find(|s| s.sat.contains(&1) && s.sat.contains(&0))
        .unwrap();
    let model = tiny_encoder(FeatureLayout::Standard, 9);
    let x = featurize_session(session, FeatureLayout::Standard).unwrap();
    let (step, floor) = (1e-5, 1e-6);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for loss in [Loss::Rmse, Loss::Bce, Loss::AttRank] {
        let y = labels(session, LabelMode::Sat, loss);
        let (_, grads) = session_gradients(&model, &x, &y, loss).unwrap().unwrap();
        let mut probe = model.clone();
        for (p, g) in grads.iter().enumerate() {
            for i in 0..g.len() {
                let orig = probe.params()[p].value.data()[i];
                let mut eval_at = |v: f64| {
                    Arc::make_mut(&mut probe.params_mut()[p].value).data_mut()[i] = v;
                    session_loss(&probe, &x, &y, loss).unwrap().unwrap()
                };
                let numeric = (eval_at(orig + step) - eval_at(orig - step)) / (2.0 * step);
                eval_at(orig);
                let e = relative_error(g.data()[i], numeric, floor);
                if e > worst {
                    worst = e;
                }
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {:.2e}", worst))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "{} coordinates over 3 losses, max rel err {:.2e}",
        checked, worst
    ))
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn permutation_equivariance() -> Outcome {
    let t = Instant::now();
    let model = EncoderModel::new(EncoderConfig::default(), FeatureLayout::Standard, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=50);
        let x = random_features(&mut rng, n, model.d_in());
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let rows: Vec<&[f64]> = perm.iter().map(|&i| x.row(i)).collect();
        let px = Tensor::from_rows(&rows).unwrap();
        let base = model.logits(&x, None).unwrap();
        let moved = model.logits(&px, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            worst = worst.max((moved[k] - base[i]).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {:.2e}", worst))?;
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(format!("100 sets, max deviation {:.1e}", worst))
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, ObjectiveMatrix) {
    let r: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let rows: Vec<[u8; NUM_OBJECTIVES]> = (0..n)
        .map(|_| std::array::from_fn(|_| u8::from(rng.random_bool(0.35))))
        .collect();
    (r, ObjectiveMatrix::new(rows).unwrap())
}

/// Best achievable score over every order that respects the relevance mask.
fn brute_force_best(r: &[f64], e: &ObjectiveMatrix, eps: f64, enabled: ObjectiveSet) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn go(
        r: &[f64],
        e: &ObjectiveMatrix,
        eps: f64,
        enabled: ObjectiveSet,
        left: &mut Vec<usize>,
        counts: [u32; NUM_OBJECTIVES],
        score: f64,
        best: &mut f64,
    ) {
        if left.is_empty() {
            *best = best.max(score);
            return;
        }
        let n = r.len() - left.len() + 1;
        let top = left.iter().map(|&i| r[i]).fold(f64::NEG_INFINITY, f64::max);
        for k in 0..left.len() {
            let t = left[k];
            let drop = if top < 1e-9 { 0.0 } else { (top - r[t]) / top };
            if !(drop < eps || drop == 0.0) {
                continue;
            }
            let mut c = counts;
            let mut root_sum = 0.0;
            for o in Objective::ALL {
                c[o.column()] += u32::from(e.get(t, o));
                if enabled.contains(o) {
                    root_sum += (c[o.column()] as f64).sqrt();
                }
            }
            let gain = r[t] + (1.0 / n as f64) * root_sum;
            left.remove(k);
            go(r, e, eps, enabled, left, c, score + gain, best);
            left.insert(k, t);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(
        r,
        e,
        eps,
        enabled,
        &mut (0..r.len()).collect(),
        [0; NUM_OBJECTIVES],
        0.0,
        &mut best,
    );
    best
}

fn beam_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let epsilons = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0];
    let mut narrow_below = 0usize;
    for case in 0..500 {
        let n = rng.random_range(1..=7);
        let (r, e) = random_instance(&mut rng, n);
        let eps = epsilons[rng.random_range(0..epsilons.len())];
        let enabled = ObjectiveSet::all();
        let oracle = brute_force_best(&r, &e, eps, enabled);
        let full = jmo_beam_search(&r, &e, &DecodeConfig::exhaustive(eps, enabled)).unwrap();
        ensure(full.score == Some(oracle), || {
            format!("case {}: exhaustive {:?} vs oracle {}", case, full.score, oracle)
        })?;
        for k in [1, 2, 4] {
            let s = jmo_beam_search(&r, &e, &DecodeConfig::new(eps, k, enabled).unwrap())
                .unwrap()
                .score
                .unwrap();
            ensure(s <= oracle, || {
                format!("case {}: k={} scored {} above oracle {}", case, k, s, oracle)
            })?;
            narrow_below += usize::from(s < oracle);
        }
    }
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "500 instances exact; narrow beams below oracle in {} of 1500 runs",
        narrow_below
    ))
}

fn reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for case in 0..1000 {
        let n = rng.random_range(1..=40);
        let (r, e) = random_instance(&mut rng, n);
        let reference = setrank_sort(&r).order;
        let k = rng.random_range(1..=6);
        let tiny = DecodeConfig::new(0.0, k, ObjectiveSet::all()).unwrap();
        let got = jmo_beam_search(&r, &e, &tiny).unwrap().order;
        ensure(got == reference, || format!("case {}: eps=0 order differs", case))?;
        let got = wtsum_rank(&r, &e, 0.0).unwrap().order;
        ensure(got == reference, || format!("case {}: wtsum alpha=0 differs", case))?;
        let off = DecodeConfig::new(0.0, k, ObjectiveSet::none()).unwrap();
        let got = jmo_beam_search(&r, &e, &off).unwrap().order;
        ensure(got == reference, || format!("case {}: no objectives differs", case))?;
    }
    Ok("1000 instances, three reductions exact".into())
}

fn epsilon_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let grid = [0.01, 0.05, 0.1, 0.2];
    let mut sizes = [0usize; 4];
    for case in 0..1000 {
        let n = rng.random_range(1..=60);
        let mut r: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        match case % 4 {
            1 => r.iter_mut().for_each(|v| *v = (*v * 10.0).round() / 10.0),
            2 => r.iter_mut().for_each(|v| *v *= 1e-10),
            _ => {}
        }
        let drops = relative_drops(&r);
        let sets: Vec<Vec<bool>> = grid
            .iter()
            .map(|&eps| drops.iter().map(|&d| is_unmasked(d, eps)).collect())
            .collect();
        for w in 0..grid.len() - 1 {
            let nested = sets[w].iter().zip(&sets[w + 1]).all(|(&a, &b)| !a || b);
            ensure(nested, || {
                format!("state {}: eps {} not inside eps {}", case, grid[w], grid[w + 1])
            })?;
        }
        for (s, set) in sizes.iter_mut().zip(&sets) {
            *s += set.iter().filter(|&&b| b).count();
        }
    }
    Ok(format!("1000 states, total unmasked {:?}", sizes))
}

struct Trends {
    relevance: MethodReport,
    setrank: MethodReport,
    moltr: MethodReport,
    sweep: Vec<(f64, MethodReport)>,
}

fn pilot_config(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_sessions: 64,
        lr: 2e-3,
        decay_at: vec![steps * 8 / 10],
        eval_every: 100,
        ..TrainConfig::default()
    }
}

fn pilot_encoder(layout: FeatureLayout) -> Model {
    let cfg = EncoderConfig {
        layers: 2,
        heads: 4,
        inducing_points: 8,
        hidden: 32,
        ff_hidden: 64,
    };
    EncoderModel::new(cfg, layout, 1).unwrap().into()
}

fn train_trends() -> Result<Trends, String> {
    let data = generate(&GenConfig::reference()).map_err(|e| e.to_string())?;
    ensure(data.manifest.sha256 == REFERENCE_SHA256, || {
        format!("reference checksum {}", data.manifest.sha256)
    })?;
    ensure(data.sessions.len() == 10_000, || "reference size".into())?;
    let parts = split(&data.sessions, &[0.9, 0.1], 7).map_err(|e| e.to_string())?;
    let (train_s, test_s) = (&parts[0], &parts[1]);
    let cfg = pilot_config(300);

    let sat =
        train(train_s, &pilot_encoder(FeatureLayout::Standard), &cfg, LabelMode::Sat).map_err(|e| e.to_string())?;
    let scores = score_sessions(&sat.model, test_s).map_err(|e| e.to_string())?;
    let composite = train(
        train_s,
        &pilot_encoder(FeatureLayout::WithObjectives),
        &cfg,
        LabelMode::MoLtr,
    )
    .map_err(|e| e.to_string())?;
    let composite_scores = score_sessions(&composite.model, test_s).map_err(|e| e.to_string())?;

    let eval = |name: &str, ranker: &Ranker, s: Option<&[Vec<f64>]>| evaluate(name, ranker, test_s, s).unwrap();
    let sweep =
        epsilon_sweep(test_s, &scores, &[0.01, 0.05, 0.1], 4, ObjectiveSet::all()).map_err(|e| e.to_string())?;
    Ok(Trends {
        relevance: eval("relevance", &Ranker::Relevance, None),
        setrank: eval("setrank", &Ranker::Sort, Some(&scores)),
        moltr: eval("moltr", &Ranker::Sort, Some(&composite_scores)),
        sweep: sweep.points.into_iter().map(|p| (p.epsilon, p.report)).collect(),
    })
}

fn end_to_end(trends: &Result<Trends, String>) -> Outcome {
    let tr = trends.as_ref().map_err(|e| e.clone())?;
    let sr = tr.setrank.ndcg5.sat;
    let mut fails = Vec::new();

    let gap = sr - tr.relevance.ndcg5.sat;
    if gap < 0.03 {
        fails.push(format!(
            "(a) setrank {:.4} vs relevance {:.4}",
            sr, tr.relevance.ndcg5.sat
        ));
    }
    let col = |f: fn(&MethodReport) -> f64| tr.sweep.iter().map(|(_, r)| f(r)).collect::<Vec<_>>();
    let boost = col(|r| r.ndcg5.boost);
    let exposure = col(|r| r.ndcg5.exposure);
    let sat = col(|r| r.ndcg5.sat);
    let up = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    if !up(&boost) || !up(&exposure) || !sat.windows(2).all(|w| w[0] >= w[1]) || (sat[0] - sr).abs() > 0.01 {
        fails.push(format!(
            "(b) boost {:?} exposure {:?} sat {:?} setrank {:.4}",
            boost, exposure, sat, sr
        ));
    }
    if tr.moltr.ndcg5.sat >= sr {
        fails.push(format!("(c) moltr {:.4} vs setrank {:.4}", tr.moltr.ndcg5.sat, sr));
    }
    let summary = format!(
        "relevance {:.3}, setrank {:.3}, moltr {:.3}; sweep sat {:.3?} boost {:.3?} exposure {:.3?}",
        tr.relevance.ndcg5.sat, sr, tr.moltr.ndcg5.sat, sat, boost, exposure
    );
    if fails.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}; {}", fails.join("; "), summary))
    }
}

fn interplay() -> Outcome {
    let t = Instant::now();
    let rho = |beta: f64| {
        let cfg = GenConfig {
            beta_discovery: beta,
            ..GenConfig::reference()
        };
        let data = generate(&cfg).unwrap();
        let report = interplay_analysis(&data.sessions).unwrap();
        report.objectives[Objective::Discovery.column()].sat_correlation
    };
    let (penalised, null) = (rho(2.0), rho(0.0));
    let p = penalised.ok_or("correlation undefined at beta 2")?;
    let z = null.ok_or("correlation undefined at beta 0")?;
    ensure(p < 0.0, || format!("beta 2 gave {:.4}", p))?;
    ensure(z.abs() < 0.05, || format!("beta 0 gave {:.4}", z))?;
    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("rho(beta=2) = {:.4}, rho(beta=0) = {:.4}", p, z))
}

fn metric_units() -> Outcome {
    ensure(ndcg_at_k(&[2, 0, 1], &[1.0, 0.0, 1.0], 3) == 1.0, || {
        "perfect ranking".into()
    })?;
    let v = ndcg_at_k(&[0, 1, 2], &[1.0, 0.0, 1.0], 3);
    ensure(v == 1.5 / (1.0 + 1.0 / 3f64.log2()), || format!("[1,0,1] gave {}", v))?;
    ensure((v - 0.9198).abs() < 1e-4, || format!("[1,0,1] gave {}", v))?;
    ensure(ndcg_at_k(&[0, 1, 2], &[0.0; 3], 5) == 1.0, || {
        "all-zero convention".into()
    })?;
    ensure(map_at_k(&[0, 1, 2], &[1.0, 0.0, 0.0], 5) == 1.0, || {
        "single relevant".into()
    })?;
    ensure(map_at_k(&[0, 1, 2, 3, 4], &[0.0, 1.0, 0.0, 1.0, 0.0], 5) == 0.5, || {
        "ranks 2 and 4".into()
    })?;
    ensure(map_at_k(&[0, 1], &[0.0, 0.0], 5) == 0.0, || "no relevant".into())?;
    let e = ObjectiveMatrix::new(vec![[1, 0, 0], [0, 0, 0], [1, 0, 0], [0, 0, 0], [0, 0, 0], [1, 0, 0]]).unwrap();
    let ga = good_all(&[0, 1, 2, 3, 4, 5], &e, &[1, 1, 0, 1, 1, 1], 5);
    ensure(ga[0] == GoodAll { all: 2, good: 1 }, || format!("boost {:?}", ga[0]))?;
    ensure(ga[1] == GoodAll::default() && ga[2] == GoodAll::default(), || {
        "empty objectives".into()
    })?;
    Ok("9 hand examples exact".into())
}

fn service_contract() -> Outcome {
    let sessions = small_sessions(20, [5, 40], 41);
    let model = tiny_encoder(FeatureLayout::Standard, 2);
    let state = Arc::new(AppState::new(Some(model.clone()), sessions.clone(), DecodeConfig::default()).unwrap());
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap();
    let post = |body: Value| {
        let req = axum::http::Request::post("/sequence")
            .header("content-type", "application/json")
            .body(axum::body::Body::from(body.to_string()))
            .unwrap();
        rt.block_on(async {
            let resp = router(state.clone()).oneshot(req).await.unwrap();
            let status = resp.status();
            (
                status,
                axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap(),
            )
        })
    };
    for s in &sessions {
        let body = json!({"session_id": s.session_id, "epsilon": 0.0, "beam_width": 4});
        let (status, a) = post(body.clone());
        ensure(status.is_success(), || format!("{}: status {}", s.session_id, status))?;
        let (_, b) = post(body);
        ensure(a == b, || format!("{}: repeated bodies differ", s.session_id))?;
        let v: Value = serde_json::from_slice(&a).unwrap();
        let got = serde_json::to_vec(&v["ranking"]).unwrap();
        let r = model.score_session(s).unwrap().0;
        let ids: Vec<&str> = setrank_sort(&r)
            .order
            .iter()
            .map(|&i| s.tracks[i].id.as_str())
            .collect();
        let expect = serde_json::to_vec(&ids).unwrap();
        ensure(got == expect, || {
            format!("{}: ranking differs from offline sort", s.session_id)
        })?;
    }
    Ok(format!(
        "{} sessions, byte-identical rankings and repeat bodies",
        sessions.len()
    ))
}

fn main() {
    let t = Instant::now();
    let trends = train_trends();
    let trained = t.elapsed();
    let passed = [
        run("gradient-correctness", gradient_correctness),
        run("permutation-equivariance", permutation_equivariance),
        run("beam-oracle", beam_oracle),
        run("reductions", reductions),
        run("epsilon-nesting", epsilon_nesting),
        run("end-to-end-trends", || {
            let per_run = trained / 2;
            within(per_run, Duration::from_secs(30 * 60))?;
            end_to_end(&trends).map(|s| format!("{} (two training runs {:.0?})", s, trained))
        }),
        run("interplay", interplay),
        run("metric-units", metric_units),
        run("service-contract", service_contract),
    ];
    let failed = passed.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {} failed", passed.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
