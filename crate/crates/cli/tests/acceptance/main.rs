//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2, 3 and 10 (with a short predator-prey rerun) run on every
//! `cargo test`. The desk-scale training criteria take hours on one core
//! and run only with `--ignored` (or `--include-ignored`); the full
//! five-seed traffic-junction variant of criterion 6 additionally needs
//! `DICG_ACCEPTANCE_TJ_FULL=1`. `DICG_ACCEPTANCE_ONLY=4,7` restricts the
//! run to the listed criteria. Build with `--release` for the timed ones.

mod coordination;
mod desk;
mod gradients;
mod invariants;

use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use dicg_cli::commands::{self, AttentionArgs, PredictionArgs, FAR_DISTANCE};
use dicg_core::trainer::{derive_seed, read_csv, EvalRow};

#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Report {
    failed: Vec<usize>,
}

impl Report {
    fn line(&mut self, criterion: usize, pass: bool, text: String) {
        println!(
            "criterion {criterion:>2}  {}  {text}",
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            self.failed.push(criterion);
        }
    }

    fn skip(&self, criterion: usize, text: &str) {
        println!("criterion {criterion:>2}  SKIP  {text}");
    }
}

fn gradient_suite(r: &mut Report) {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut bad = Vec::new();
    for (k, name) in gradients::PRIMITIVES.iter().enumerate() {
        let e = gradients::worst_error(name, 1000 + k as u64);
        if e >= gradients::TOL || e.is_nan() {
            bad.push(format!("{name} {e:.1e}"));
        }
        if e > worst.0 {
            worst = (e, name);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        1,
        bad.is_empty() && secs < 60.0,
        format!(
            "gradient suite: {} operations x {} cases, worst relative error {:.1e} ({}), tolerance {:.0e}, {secs:.1} s (limit 60 s){}",
            gradients::PRIMITIVES.len(),
            gradients::CASES,
            worst.0,
            worst.1,
            gradients::TOL,
            if bad.is_empty() { String::new() } else { format!("; over tolerance: {}", bad.join(", ")) }
        ),
    );
}

fn structural_invariants(r: &mut Report) {
    let start = Instant::now();
    let stochastic = invariants::row_stochastic(1);
    let oracle = invariants::simplified_matches_normalized(2);
    let residual = invariants::zero_gcn_is_identity(3);
    let uniform = invariants::zero_attention_is_uniform(4);
    let perm = invariants::permutation_equivariance(5);
    let isolated = invariants::dead_agents_are_isolated(6);
    let secs = start.elapsed().as_secs_f64();
    let pass =
        stochastic < 1e-9 && oracle < 1e-12 && residual && uniform < 1e-12 && perm < 1e-12 && isolated && secs < 60.0;
    r.line(
        2,
        pass,
        format!(
            "structural invariants over {} random cases each: row sums {stochastic:.1e} (< 1e-9), normalized-layer oracle {oracle:.1e} (< 1e-12), \
             zero-weight residual identity {}, zero-attention uniform {uniform:.1e} (< 1e-12), permutation {perm:.1e} (< 1e-12), \
             dead-agent isolation {}, {secs:.1} s (limit 60 s)",
            invariants::CASES,
            if residual { "exact" } else { "broken" },
            if isolated { "exact" } else { "broken" },
        ),
    );
}

type CoordinationRuns = Vec<(String, u64, coordination::Outcome, PathBuf)>;

fn coordination_runs(tag: &str) -> CoordinationRuns {
    let mut out = Vec::new();
    for algo in ["dicg_ce", "dicg_de"] {
        for seed in 0..coordination::SEEDS {
            let path = desk::cache_root()
                .join("coordination")
                .join(tag)
                .join(format!("{algo}_s{seed}.csv"));
            let o = coordination::run(algo, seed, &path);
            out.push((algo.to_string(), seed, o, path));
        }
    }
    out
}

fn coordination_sanity(r: &mut Report) -> CoordinationRuns {
    let start = Instant::now();
    let runs = coordination_runs("a");
    let secs = start.elapsed().as_secs_f64();
    let mut parts = Vec::new();
    let mut ok = true;
    for algo in ["dicg_ce", "dicg_de"] {
        let mine: Vec<_> = runs.iter().filter(|x| x.0 == algo).collect();
        let hits = mine.iter().filter(|x| x.2.reached_at.is_some()).count();
        ok &= hits == mine.len();
        let at: Vec<String> = mine
            .iter()
            .map(|x| x.2.reached_at.map_or("never".into(), |i| i.to_string()))
            .collect();
        let worst_final = mine.iter().map(|x| x.2.final_expected).fold(f64::INFINITY, f64::min);
        parts.push(format!(
            "{algo} {hits}/{} seeds (first iteration {}; lowest final {worst_final:.3})",
            mine.len(),
            at.join(",")
        ));
    }
    r.line(
        3,
        ok && secs < 300.0,
        format!(
            "coordination game, exact expected reward >= {} within {} iterations: {}, {secs:.1} s (limit 300 s)",
            coordination::TARGET,
            coordination::ITERATIONS,
            parts.join("; ")
        ),
    );
    runs
}

fn same_bytes(a: &std::path::Path, b: &std::path::Path) -> bool {
    matches!((fs::read(a), fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

const SHORT_RERUN_ITERATIONS: usize = 3;

fn determinism(r: &mut Report, first: Option<CoordinationRuns>, full: bool) {
    let first = first.unwrap_or_else(|| coordination_runs("a"));
    let second = coordination_runs("b");
    let coord_same = first
        .iter()
        .zip(&second)
        .filter(|(a, b)| same_bytes(&a.3, &b.3))
        .count();

    let root = desk::cache_root().join("determinism");
    let stem = "predator_prey_p1_dicg_de";
    let a = desk::train_into(stem, 0, Some(SHORT_RERUN_ITERATIONS), &root.join("short_a"), false);
    let b = desk::train_into(stem, 0, Some(SHORT_RERUN_ITERATIONS), &root.join("short_b"), false);
    let short_same = same_bytes(&a.files.metrics(), &b.files.metrics());

    let (full_same, full_text) = if full {
        let cached = desk::run(stem, 0, None);
        let again = desk::train_into(stem, 0, None, &root.join("full"), false);
        let same = same_bytes(&cached.files.metrics(), &again.files.metrics());
        (
            same,
            format!(
                "; {stem} seed 0 full {} iterations rerun {}",
                cached.config.iterations,
                if same { "identical" } else { "differs" }
            ),
        )
    } else {
        (true, "; full-length predator-prey rerun needs --ignored".to_string())
    };
    r.line(
        10,
        coord_same == first.len() && short_same && full_same,
        format!(
            "determinism: coordination metrics identical for {coord_same}/{} runs; {stem} seed 0 {SHORT_RERUN_ITERATIONS}-iteration rerun {}{full_text}",
            first.len(),
            if short_same { "identical" } else { "differs" }
        ),
    );
}

const HOUR: f64 = 3600.0;

fn final_returns(stem: &str) -> (Vec<f64>, f64) {
    let mut total = 0.0;
    let returns = (0..desk::SEEDS)
        .map(|s| {
            let run = desk::run(stem, s, None);
            total += run.seconds;
            desk::final_return(&run)
        })
        .collect();
    (returns, total)
}

fn overgeneralization(r: &mut Report) {
    let (de, t1) = final_returns("predator_prey_p1_dicg_de");
    let (dec, t2) = final_returns("predator_prey_p1_dec");
    let (cent, t3) = final_returns("predator_prey_p1_cent");
    let secs = t1 + t2 + t3;
    let (m_de, m_dec, m_cent) = (desk::mean(&de), desk::mean(&dec), desk::mean(&cent));
    r.line(
        4,
        m_de > m_dec && m_de > m_cent && m_de > 0.0 && secs <= HOUR,
        format!(
            "penalty -1 ordering, final return over {} seeds: DICG-DE {m_de:.3} [{}], DEC {m_dec:.3} [{}], CENT {m_cent:.3} [{}]; \
             need DICG-DE > DEC, DICG-DE > CENT, DICG-DE > 0; training {:.0} min (limit 60)",
            desk::SEEDS,
            desk::fmt_all(&de),
            desk::fmt_all(&dec),
            desk::fmt_all(&cent),
            secs / 60.0
        ),
    );
}

fn no_penalty_parity(r: &mut Report) {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut secs = 0.0;
    for (label, stem) in [("DEC", "predator_prey_p0_dec"), ("DICG-DE", "predator_prey_p0_dicg_de")] {
        let mut returns = Vec::new();
        let mut success = Vec::new();
        for s in 0..desk::SEEDS {
            let run = desk::run(stem, s, None);
            secs += run.seconds;
            returns.push(desk::final_return(&run));
            success.push(desk::greedy(&run, derive_seed(s, &[70])).success_rate);
        }
        let (m_ret, m_succ) = (desk::mean(&returns), desk::mean(&success));
        ok &= m_ret > 0.0 && m_succ >= 0.8;
        parts.push(format!(
            "{label} final return {m_ret:.3} [{}], greedy all-prey capture {m_succ:.2} [{}]",
            desk::fmt_all(&returns),
            desk::fmt_all(&success)
        ));
    }
    r.line(
        5,
        ok && secs <= HOUR,
        format!(
            "penalty 0 parity over {} seeds ({} greedy episodes each): {}; need return > 0 and capture rate >= 0.80; training {:.0} min (limit 60)",
            desk::SEEDS,
            desk::GREEDY_EPISODES,
            parts.join("; "),
            secs / 60.0
        ),
    );
}

const TJ_CI_STEPS: usize = 1_000_000;
const TJ_FULL_STEPS: usize = 5_000_000;

fn iterations_for(stem: &str, steps: usize) -> usize {
    let cfg = dicg_cli::RunConfig::load(&desk::config_path(stem)).unwrap();
    steps.div_ceil(cfg.ppo.batch_size)
}

fn traffic_junction(r: &mut Report, tj_full: bool) {
    let ce_stem = "traffic_junction_easy_dicg_ce";
    let dec_stem = "traffic_junction_easy_dec";
    let it = iterations_for(ce_stem, TJ_CI_STEPS);
    let ce = desk::run(ce_stem, 0, Some(it));
    let dec = desk::run(dec_stem, 0, Some(iterations_for(dec_stem, TJ_CI_STEPS)));
    let ce_succ = desk::greedy(&ce, derive_seed(0, &[60])).success_rate;
    let dec_succ = desk::greedy(&dec, derive_seed(0, &[60])).success_rate;
    let secs = ce.seconds + dec.seconds;
    let ci_pass = ce_succ > dec_succ && secs < HOUR;
    let mut text = format!(
        "traffic junction easy, 1e6-step variant (seed 0, {it} iterations): greedy success DICG-CE {ce_succ:.2} vs DEC {dec_succ:.2}, need DICG-CE > DEC; \
         training {:.0} min (limit 60)",
        secs / 60.0
    );
    let mut pass = ci_pass;
    if tj_full {
        let full_it = iterations_for(ce_stem, TJ_FULL_STEPS);
        let mut best = Vec::new();
        for s in 0..desk::SEEDS {
            let run = desk::run(ce_stem, s, Some(full_it));
            let evals: Vec<EvalRow> = read_csv(&run.files.eval(), &EvalRow::HEADER).unwrap();
            let periodic = evals.iter().map(|e| e.success_rate).fold(0.0, f64::max);
            best.push(periodic.max(desk::greedy(&run, derive_seed(s, &[60])).success_rate));
        }
        let hits = best.iter().filter(|&&b| b >= 0.9).count();
        pass &= hits >= 3;
        text.push_str(&format!(
            "; 5e6-step variant: {hits}/{} seeds reach greedy success >= 0.90 (best per seed [{}]), need >= 3",
            desk::SEEDS,
            desk::fmt_all(&best)
        ));
    } else {
        text.push_str("; 5e6-step five-seed variant not run (set DICG_ACCEPTANCE_TJ_FULL=1)");
    }
    r.line(6, pass, text);
}

fn ablation(r: &mut Report) {
    let (de, _) = final_returns("predator_prey_p1_dicg_de");
    let (uni, _) = final_returns("predator_prey_p1_dicg_de_uniform");
    let (amlp, _) = final_returns("predator_prey_p1_amlp_de");
    let (m_de, m_uni, m_amlp) = (desk::mean(&de), desk::mean(&uni), desk::mean(&amlp));
    r.line(
        7,
        m_de >= m_uni && m_uni >= m_amlp,
        format!(
            "ablation ordering at penalty -1, final return over {} seeds: DICG-DE {m_de:.3} [{}], DICG-DE-uniform {m_uni:.3} [{}], AMLP-DE {m_amlp:.3} [{}]; \
             need DICG-DE >= uniform >= AMLP",
            desk::SEEDS,
            desk::fmt_all(&de),
            desk::fmt_all(&uni),
            desk::fmt_all(&amlp)
        ),
    );
}

fn probe_prediction(r: &mut Report) {
    let run = desk::run("predator_prey_p1_dicg_de", 0, None);
    let start = Instant::now();
    let (rows, _) = commands::probe_prediction(&PredictionArgs {
        checkpoint: run.files.final_checkpoint(),
        config: run.files.config(),
        pairs: 5,
        epochs: 50,
        episodes: 100,
        seed: 0,
        greedy: true,
        out: Some(run.files.dir.join("prediction.csv")),
    })
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let better = rows.iter().filter(|p| p.post_accuracy > p.pre_accuracy).count();
    let detail: Vec<String> = rows
        .iter()
        .map(|p| format!("({},{}) {:.3}->{:.3}", p.i, p.j, p.pre_accuracy, p.post_accuracy))
        .collect();
    r.line(
        8,
        better >= 4 && rows.len() == 5 && secs < 600.0,
        format!(
            "action prediction from greedy rollouts of the penalty -1 DICG-DE seed 0 checkpoint: post > pre for {better}/{} pairs [{}], need >= 4; {secs:.0} s (limit 600)",
            rows.len(),
            detail.join(", ")
        ),
    );
}

fn far_mass(stem: &str) -> Vec<f64> {
    (0..desk::SEEDS)
        .map(|s| {
            let run = desk::run(stem, s, None);
            commands::probe_attention(&AttentionArgs {
                checkpoint: run.files.final_checkpoint(),
                config: run.files.config(),
                episodes: 50,
                seed: 0,
                greedy: true,
                out: Some(run.files.dir.join("attention.csv")),
            })
            .unwrap()
            .far_mass
        })
        .collect()
}

fn attention_distance(r: &mut Report) {
    let p1 = far_mass("predator_prey_p1_dicg_de");
    let p0 = far_mass("predator_prey_p0_dicg_de");
    let (m1, m0) = (desk::mean(&p1), desk::mean(&p0));
    r.line(
        9,
        m1 > m0,
        format!(
            "attention mass at distance >= {FAR_DISTANCE} on greedy rollouts (qualitative trend), mean over {} DICG-DE checkpoints: penalty -1 {m1:.4} [{}] vs penalty 0 {m0:.4} [{}]; \
             need penalty -1 larger",
            desk::SEEDS,
            p1.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" "),
            p0.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
        ),
    );
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let full = args.iter().any(|a| a == "--ignored" || a == "--include-ignored");
    let tj_full = std::env::var("DICG_ACCEPTANCE_TJ_FULL").is_ok_and(|v| v == "1");
    let only: Option<BTreeSet<usize>> = std::env::var("DICG_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |c: usize| only.as_ref().is_none_or(|o| o.contains(&c));
    let expensive = "desk-scale training; run with --ignored";

    let mut r = Report { failed: Vec::new() };
    if wanted(1) {
        gradient_suite(&mut r);
    }
    if wanted(2) {
        structural_invariants(&mut r);
    }
    let coordination = wanted(3).then(|| coordination_sanity(&mut r));
    let desk_criteria: [(usize, Box<dyn Fn(&mut Report)>); 6] = [
        (4, Box::new(overgeneralization)),
        (5, Box::new(no_penalty_parity)),
        (6, Box::new(move |r: &mut Report| traffic_junction(r, tj_full))),
        (7, Box::new(ablation)),
        (8, Box::new(probe_prediction)),
        (9, Box::new(attention_distance)),
    ];
    for (c, f) in desk_criteria {
        if wanted(c) {
            if full {
                f(&mut r);
            } else {
                r.skip(c, expensive);
            }
        }
    }
    if wanted(10) {
        determinism(&mut r, coordination, full);
    }
    if r.failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {:?}", r.failed);
        ExitCode::FAILURE
    }
}
