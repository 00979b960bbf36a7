//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dualgrad::config::{ExperimentConfig, Kind};
use dualgrad::fig7::{run_fig7, Fig7Settings};
use dualgrad::optimize::run_seed;
use dualgrad_core::dual::{
    build_dual_attention, build_dual_gqa, build_dual_stack, build_dual_transformer, gqa_dual_forward, loss_gradient,
    loss_icl, with_value_regularization, DualModel,
};
use dualgrad_core::kernelmap::FourierFeatureMap;
use dualgrad_core::metric::effect_d;
use dualgrad_core::model::ffn::{layer_forward, Activation};
use dualgrad_core::model::gqa::gqa_attention;
use dualgrad_core::model::stack::stack_forward;
use dualgrad_core::model::{exact_attention, kernel_attention, AttentionMode, AttentionParams, SegmentedSequence};
use dualgrad_core::testkit::{
    random_ffn, random_gqa, random_matrix, random_perturbed_sequence, random_sequence, random_stack, rel_diff,
    AttentionCase, CaseShape,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Kernel attention summed directly over the preceding positions, with the
/// task (instruction and lead) values scaled by `task_scale`.
fn kernel_oracle(
    params: &AttentionParams,
    map: &FourierFeatureMap,
    seq: &SegmentedSequence,
    p: usize,
    task_scale: f64,
) -> DVector<f64> {
    let s = (params.d_out() as f64).powf(-0.25);
    let q = map.phi(&(params.query(p, seq.token(p).unwrap()).unwrap() * s)).unwrap();
    let mut num = DVector::zeros(params.d_out());
    let mut den = 0.0;
    for i in 1..p {
        let x = seq.token(i).unwrap();
        let w = map.phi(&(params.key(i, x).unwrap() * s)).unwrap().dot(&q);
        let scale = if seq.tag(i).unwrap().is_task() { task_scale } else { 1.0 };
        num += params.value(x) * (w * scale);
        den += w;
    }
    num / den
}

/// Softmax attention computed without the library's attention code.
fn softmax_oracle(params: &AttentionParams, seq: &SegmentedSequence, p: usize) -> DVector<f64> {
    let q = params.query(p, seq.token(p).unwrap()).unwrap();
    let scores: Vec<f64> =
        (1..p).map(|i| params.key(i, seq.token(i).unwrap()).unwrap().dot(&q) / (q.len() as f64).sqrt()).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = DVector::zeros(params.d_out());
    let mut den = 0.0;
    for (i, sc) in (1..p).zip(&scores) {
        let e = (sc - max).exp();
        num += params.value(seq.token(i).unwrap()) * e;
        den += e;
    }
    num / den
}

/// Shape for the equivalence sweeps: `d_i <= 16, d_o <= 8, 4 <= N_T <= 20, 2 <= N_D <= 12`.
fn sweep_case(seed: u64) -> AttentionCase {
    AttentionCase::sample(seed, 128)
}

fn dual_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let cs = sweep_case(seed);
        let p = cs.query_pos();
        let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, p).unwrap();
        let oracle = kernel_oracle(&cs.params, &cs.map, &cs.seq, p, 1.0);
        let lib = kernel_attention(&cs.params, &cs.map, &cs.seq, p).unwrap();
        worst = worst.max(rel_diff(&dual.forward_at_build(), &oracle)).max(rel_diff(&lib, &oracle));
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && t < Duration::from_secs(10),
        format!("100 configs, max rel diff {worst:.3e} (<= 1e-9), {t:.2?} (< 10s)"),
    )
}

fn fig7_reproduction() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::defaults(Kind::Fig7);
    let settings = Fig7Settings::from(&cfg);
    let caption = (settings.d_in, settings.d_out, settings.n_instruction, settings.n_lead) == (11, 1, 15, 2);
    let report = match run_fig7(&settings) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("construction failed: {e}")),
    };
    let t = start.elapsed();
    let se = |d: &dualgrad::fig7::DemoOutcome| d.curves.iter().map(|c| c.terminal_se()).fold(0.0, f64::max);
    let (g, b) = (&report.good, &report.bad);
    let pass = caption
        && g.demo.current.len() == 15
        && b.demo.current.len() == 10
        && g.score.hit_position == Some(1)
        && g.score.value == 1.0
        && b.score.hit_position == Some(3)
        && b.score.value == 0.5
        && se(g) <= 1e-9
        && se(b) <= 1e-9
        && t < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "good N_D={} hit {:?} Effect_D {}; bad N_D={} hit {:?} Effect_D {}; terminal SE {:.1e}/{:.1e}; {t:.2?} (< 5s)",
            g.demo.current.len(),
            g.score.hit_position,
            g.score.value,
            b.demo.current.len(),
            b.score.hit_position,
            b.score.value,
            se(g),
            se(b)
        ),
    )
}

fn layered_duals() -> Outcome {
    let start = Instant::now();
    let (mut layer, mut stack, mut gqa) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..50 {
        let cs = sweep_case(seed);
        let p = cs.query_pos();
        let mode = AttentionMode::Kernel(cs.map.clone());
        let ffn = random_ffn(seed, cs.shape.d_out, 2 * cs.shape.d_out + 1, Activation::Relu);
        let dual = build_dual_transformer(&cs.params, &ffn, &cs.map, &cs.seq, p).unwrap();
        let want = layer_forward(&cs.params, &ffn, &mode, &cs.seq, p).unwrap();
        layer = layer.max(rel_diff(&dual.forward_at_build(), &want));

        let d = cs.shape.d_in.min(8);
        let map = FourierFeatureMap::sample(d, 128, 1.0, seed).unwrap();
        let seq = random_sequence(seed, d, cs.shape.n_instr, cs.shape.n_demo, cs.shape.n_lead);
        let st = random_stack(seed, 3, d, 2 * d);
        let ds = build_dual_stack(&st, &map, &seq, seq.len()).unwrap();
        let got = ds.forward(&st, seq.token(seq.len()).unwrap()).unwrap();
        stack = stack.max(rel_diff(&got, &stack_forward(&st, &AttentionMode::Kernel(map), &seq, seq.len()).unwrap()));

        let d_out = if seed % 2 == 0 { 4 } else { 8 };
        let g = random_gqa(seed, 2, 2, cs.shape.d_in, d_out);
        let hmap = FourierFeatureMap::sample(d_out / 4, 128, 1.0, seed).unwrap();
        let blocks = build_dual_gqa(&g, &hmap, &cs.seq, p).unwrap();
        gqa = gqa.max(rel_diff(&gqa_dual_forward(&blocks), &gqa_attention(&g, &hmap, &cs.seq, p).unwrap()));
    }
    let t = start.elapsed();
    let pass = layer.max(stack).max(gqa) <= 1e-9 && t < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "50 configs each: layer {layer:.2e}, stack(L=3) {stack:.2e}, gqa(2x2) {gqa:.2e} (<= 1e-9), {t:.2?} (< 30s)"
        ),
    )
}

fn central_difference(dual: &DualModel, w: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| {
        let (mut plus, mut minus) = (w.clone(), w.clone());
        plus[(r, c)] += h;
        minus[(r, c)] -= h;
        (loss_icl(dual, &plus).unwrap() - loss_icl(dual, &minus).unwrap()) / (2.0 * h)
    })
}

fn gradient_check() -> Outcome {
    let mut worst = 0.0f64;
    let mut kinds = [0usize; 4];
    for pair in 0..20u64 {
        let mut rng = dualgrad_core::rng::stream(pair, "acceptance/gradient");
        let shape = CaseShape::sample(pair);
        let perturbed = pair % 2 == 1;
        let alpha = if pair % 4 >= 2 { rng.random_range(0.1..1.0) } else { 0.0 };
        kinds[(perturbed as usize) + 2 * (alpha > 0.0) as usize] += 1;
        let beta = rng.random_range(0.25..2.0);
        let n_per = if perturbed { rng.random_range(1..=4) } else { 0 };
        let seq = random_perturbed_sequence(pair, shape.d_in, shape.n_instr, shape.n_demo, n_per, shape.n_lead);
        let cs = AttentionCase::new(pair, shape, 64);
        let base = build_dual_attention(&cs.params, &cs.map, &seq, seq.len()).unwrap();
        let dual = with_value_regularization(&base, alpha).unwrap().with_beta(beta).unwrap();
        let w = random_matrix(pair, "acceptance/w", shape.d_out, 64, 2.0);
        let fd = central_difference(&dual, &w, 1e-5) * beta;
        worst = worst.max((fd - loss_gradient(&dual, &w).unwrap()).amax());
    }
    outcome(
        worst <= 1e-5,
        format!("20 pairs (plain/perturbed/alpha/both = {kinds:?}), max abs diff {worst:.2e} (<= 1e-5)"),
    )
}

fn regularization() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let cs = sweep_case(seed);
        let p = cs.query_pos();
        let dual = build_dual_attention(&cs.params, &cs.map, &cs.seq, p).unwrap();
        for alpha in [0.0, 0.3, 1.0] {
            let got = with_value_regularization(&dual, alpha).unwrap().forward_at_build();
            worst = worst.max(rel_diff(&got, &kernel_oracle(&cs.params, &cs.map, &cs.seq, p, 1.0 - alpha)));
        }
    }
    outcome(worst <= 1e-10, format!("alpha in {{0, 0.3, 1}} x 50 configs, max rel diff {worst:.2e} (<= 1e-10)"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn kernel_consistency() -> Outcome {
    let dims = [128usize, 1024, 4096];
    let medians: Vec<f64> = dims
        .iter()
        .map(|&d| {
            median(
                (0..32u64)
                    .map(|seed| {
                        let shape = CaseShape::sample(seed);
                        let cs = AttentionCase::new(seed, shape, d);
                        let p = cs.query_pos();
                        let exact = softmax_oracle(&cs.params, &cs.seq, p);
                        debug_assert!(rel_diff(&exact_attention(&cs.params, &cs.seq, p).unwrap(), &exact) < 1e-12);
                        assert!(cs.seq.tokens().iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
                        rel_diff(&kernel_attention(&cs.params, &cs.map, &cs.seq, p).unwrap(), &exact)
                    })
                    .collect(),
            )
        })
        .collect();
    let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing && medians[2] <= 0.10;
    outcome(
        pass,
        format!(
            "median rel err over 32 seeds: D=128 {:.4}, D=1024 {:.4}, D=4096 {:.4} (strictly decreasing, last <= 0.10)",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn effect_d_exactness() -> Outcome {
    let one = effect_d(Some(1)).unwrap();
    let three = effect_d(Some(3)).unwrap();
    let values: Vec<f64> = (1..=1000).map(|p| effect_d(Some(p)).unwrap()).collect();
    let monotone = values.windows(2).all(|w| w[1] < w[0]);
    let formula = values.iter().enumerate().all(|(i, v)| (v - 1.0 / ((i + 2) as f64).log2()).abs() <= 1e-15);
    let pass = one == 1.0 && three == 0.5 && monotone && formula && effect_d(None).unwrap() == 0.0;
    outcome(pass, format!("effect_d(1) = {one}, effect_d(3) = {three}, strictly decreasing on 1..=1000: {monotone}"))
}

fn collapse_mitigation() -> Outcome {
    let cfg = ExperimentConfig { paired: true, ..ExperimentConfig::defaults(Kind::Optimize) };
    let (mut sim_on, mut sim_off, mut best_on, mut best_off) = (Vec::new(), Vec::new(), 0.0, 0.0);
    for seed in 0..20 {
        let run = run_seed(&cfg, seed).unwrap();
        let base = run.baseline.as_ref().unwrap();
        best_on += run.trace.mean_best_effect_d() / 20.0;
        best_off += base.mean_best_effect_d() / 20.0;
        if let Some(t) = base.first_collapse() {
            if let (Some(a), Some(b)) = (run.trace.mean_similarity_from(t), base.mean_similarity_from(t)) {
                sim_on.push(a);
                sim_off.push(b);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (a, b) = (mean(&sim_on), mean(&sim_off));
    let pass = !sim_on.is_empty() && a < b && best_on >= best_off;
    outcome(
        pass,
        format!(
            "m={}, {} iterations, {} seeds with collapse: similarity after collapse {a:.4} vs {b:.4}; best Effect_D {best_on:.4} vs {best_off:.4}",
            cfg.paths,
            cfg.iterations,
            sim_on.len()
        ),
    )
}

fn run_cli(args: &[&str], dir: &TempDir) -> (Vec<u8>, Option<i32>) {
    let out = Command::new(env!("CARGO_BIN_EXE_dualgrad"))
        .args(args)
        .current_dir(dir.path())
        .env_remove("DUALGRAD_SEED")
        .output()
        .expect("binary runs");
    (out.stdout, out.status.code())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), "cases = 2\nreps = 3\niterations = 4\n").unwrap();
    let commands: [&[&str]; 7] = [
        &["equiv", "--config", "small.toml", "--seed", "5"],
        &["equiv", "--config", "small.toml", "--mode", "exact", "--schedule", "fractional:3"],
        &["fig7"],
        &["props", "--config", "small.toml", "--seed", "9"],
        &["optimize", "--config", "small.toml", "--reps", "1"],
        &["generate", "--seed", "3"],
        &["optimize", "--config", "small.toml", "--reps", "2", "--out", "opt.csv"],
    ];
    let mut failures = Vec::new();
    for cmd in commands {
        let (a, code_a) = run_cli(cmd, &dir);
        let first = files(&dir);
        let (b, code_b) = run_cli(cmd, &dir);
        if a != b || code_a != Some(0) || code_b != Some(0) || first != files(&dir) || a.is_empty() {
            failures.push(cmd.join(" "));
        }
    }
    let (svg_a, _) = run_cli(&["plot", "opt-s1.csv"], &dir);
    let (svg_b, _) = run_cli(&["plot", "opt-s1.csv"], &dir);
    if svg_a != svg_b || svg_a.is_empty() {
        failures.push("plot".into());
    }
    let detail = if failures.is_empty() {
        format!("{} commands repeated, byte-identical output", commands.len() + 1)
    } else {
        format!("differing output: {}", failures.join("; "))
    };
    outcome(failures.is_empty(), detail)
}

fn files(dir: &TempDir) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("dual-equivalence", dual_equivalence),
        ("engineered-demonstrations", fig7_reproduction),
        ("layer-stack-gqa-duals", layered_duals),
        ("gradient-check", gradient_check),
        ("value-regularization", regularization),
        ("kernel-consistency", kernel_consistency),
        ("effect-d-exactness", effect_d_exactness),
        ("collapse-mitigation", collapse_mitigation),
        ("cli-determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {}/{} passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
