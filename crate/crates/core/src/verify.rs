//! Self-checks shipped with the library: finite-difference gradient checks,
//! brute-force knapsack and segmentation oracles, and metric examples.
//!
//! The oracles here never call the code paths they check; each one
//! recomputes its answer by enumeration or direct summation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::Result;
use crate::evaluation::{fscore, kendall_tau, spearman_rho};
use crate::generator::{Generator, ModelConfig};
use crate::postprocess::{
    knapsack_select, kts_changepoints, optimal_segmentation, KtsParams, ShotSegmentation, Summary,
};
use crate::tensor::{Activation, NormAxis, Tape, Tensor, Var};
use crate::training::{adversarial_losses, sparsity_loss};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Step for the full generator graph. Temporal batch norm over the few
/// frames left at the deepest U-Net levels makes that graph strongly curved,
/// so central differences at [`FD_STEP`] carry O(h²) truncation error well
/// above the tolerance; at this step the truncation term is negligible and
/// f64 round-off stays far below it.
pub const DEEP_FD_STEP: f64 = 1e-6;
/// Maximum tolerated relative error between analytic and numeric gradients.
pub const GRAD_TOL: f64 = 1e-3;

/// Result of comparing one input's analytic gradient to central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub input: usize,
    pub checked: usize,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the
    /// checked coordinates.
    pub rel_error: f64,
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `build` receives fresh leaves for `inputs` and returns the scalar output.
/// At most `max_coords` coordinates per input are perturbed (chosen with
/// `seed`); all are checked when the input is smaller.
pub fn grad_check<F>(inputs: &[Tensor<f64>], max_coords: usize, seed: u64, build: F) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with_step(inputs, max_coords, seed, FD_STEP, build)
}

/// [`grad_check`] with an explicit finite-difference step.
pub fn grad_check_with_step<F>(
    inputs: &[Tensor<f64>],
    max_coords: usize,
    seed: u64,
    step: f64,
    build: F,
) -> Result<Vec<GradCheck>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| tape.constant(v.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = build(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let coords: Vec<usize> = if input.len() <= max_coords {
            (0..input.len()).collect()
        } else {
            let mut all: Vec<usize> = (0..input.len()).collect();
            for k in 0..max_coords {
                let j = rng.random_range(k..all.len());
                all.swap(k, j);
            }
            all.truncate(max_coords);
            all
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[c] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            diff += (analytic[c] - numeric).powi(2);
            na += analytic[c].powi(2);
            nn += numeric.powi(2);
        }
        let scale = na.sqrt().max(nn.sqrt());
        let rel_error = if scale < 1e-12 { 0.0 } else { diff.sqrt() / scale };
        report.push(GradCheck {
            input: i,
            checked: coords.len(),
            rel_error,
        });
    }
    Ok(report)
}

/// Outcome of one named verification case.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CaseResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub const SUITES: [&str; 4] = ["gradients", "knapsack", "segmentation", "metrics"];

/// Runs a suite by name; `None` for unknown names.
pub fn run_suite(name: &str) -> Option<Vec<CaseResult>> {
    match name {
        "gradients" => Some(gradient_suite()),
        "knapsack" => Some(knapsack_suite(200, 10_000)),
        "segmentation" => Some(segmentation_suite(30)),
        "metrics" => Some(metric_suite()),
        _ => None,
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

fn grad_case<F>(name: &str, inputs: Vec<Tensor<f64>>, build: F) -> CaseResult
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    match grad_check(&inputs, 64, 7, build) {
        Ok(checks) => {
            let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
            CaseResult::new(name, worst < GRAD_TOL, format!("max relative error {worst:.2e}"))
        }
        Err(e) => CaseResult::new(name, false, e.to_string()),
    }
}

/// Weighted sum so that every output element gets a distinct cotangent.
fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, tape.value(y).shape());
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

pub fn gradient_suite() -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_24);
    let mut out = Vec::new();

    out.push(grad_case(
        "matmul",
        vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[3, 5])],
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y, 1)
        },
    ));
    out.push(grad_case(
        "conv1d_temporal",
        vec![rand_tensor(&mut rng, &[7, 3]), rand_tensor(&mut rng, &[3, 3, 2])],
        |t, v| {
            let y = t.conv1d(v[0], v[1], 1, 1)?;
            probe(t, y, 2)
        },
    ));
    out.push(grad_case(
        "conv1d_temporal_strided",
        vec![rand_tensor(&mut rng, &[8, 2]), rand_tensor(&mut rng, &[4, 2, 3])],
        |t, v| {
            let y = t.conv1d(v[0], v[1], 2, 1)?;
            probe(t, y, 3)
        },
    ));
    out.push(grad_case(
        "transposed_conv1d_temporal",
        vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[4, 2, 3])],
        |t, v| {
            let y = t.conv_transpose1d(v[0], v[1], 2, 1)?;
            probe(t, y, 4)
        },
    ));
    out.push(grad_case("max_pool1d", vec![rand_tensor(&mut rng, &[8, 3])], |t, v| {
        let y = t.max_pool2(v[0])?;
        probe(t, y, 5)
    }));
    for (i, kind) in [Activation::Relu, Activation::Sigmoid, Activation::Tanh].into_iter().enumerate() {
        out.push(grad_case(
            &format!("activation_{kind:?}").to_lowercase(),
            vec![rand_tensor(&mut rng, &[5, 4])],
            move |t, v| {
                let y = t.activation(v[0], kind);
                probe(t, y, 6 + i as u64)
            },
        ));
    }
    out.push(grad_case("softmax_rows", vec![rand_tensor(&mut rng, &[4, 5])], |t, v| {
        let y = t.softmax_rows(v[0])?;
        probe(t, y, 9)
    }));
    for (i, axis) in [NormAxis::Temporal, NormAxis::Feature].into_iter().enumerate() {
        out.push(grad_case(
            &format!("norm_layer_{axis:?}").to_lowercase(),
            vec![
                rand_tensor(&mut rng, &[6, 4]),
                rand_tensor(&mut rng, &[4]),
                rand_tensor(&mut rng, &[4]),
            ],
            move |t, v| {
                let y = t.norm(v[0], v[1], v[2], 1e-5, axis)?;
                probe(t, y, 10 + i as u64)
            },
        ));
    }
    out.push(grad_case(
        "lstm_forward",
        vec![
            rand_tensor(&mut rng, &[5, 3]),
            rand_tensor(&mut rng, &[3, 16]),
            rand_tensor(&mut rng, &[4, 16]),
            rand_tensor(&mut rng, &[16]),
        ],
        |t, v| {
            let h0 = t.constant(Tensor::zeros(&[1, 4]));
            let c0 = t.constant(Tensor::zeros(&[1, 4]));
            let w = crate::tensor::LstmVars {
                w_ih: v[1],
                w_hh: v[2],
                bias: v[3],
            };
            let o = crate::tensor::lstm_forward(t, v[0], w, h0, c0)?;
            probe(t, o.last_hidden, 12)
        },
    ));
    out.push(grad_case(
        "composite",
        vec![rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[3, 3])],
        |t, v| {
            let a = t.matmul(v[0], v[1])?;
            let a = t.tanh(a);
            let b = t.transpose(a)?;
            let c = t.matmul(a, b)?;
            let s = t.softmax_rows(c)?;
            let cat = t.concat_cols(&[s, a])?;
            let l = t.slice_cols(cat, 1, 5)?;
            let l = t.scale(l, 0.5);
            let l = t.add_scalar(l, 2.0);
            let l = t.log(l);
            let sum = t.mean(l);
            let sq = t.sqrt(sum);
            Ok(t.abs(sq))
        },
    ));

    out.extend(generator_grad_cases());
    out.push(discriminator_grad_case());
    out
}

fn summarize_checks(name: &str, r: Result<Vec<GradCheck>>) -> CaseResult {
    match r {
        Ok(checks) => {
            let worst = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
            CaseResult::new(
                name,
                worst < GRAD_TOL,
                format!("max relative error {worst:.2e} over {} tensors", checks.len()),
            )
        }
        Err(e) => CaseResult::new(name, false, e.to_string()),
    }
}

fn generator_grad_cases() -> Vec<CaseResult> {
    let gen = match Generator::<f64>::new(ModelConfig::tiny(8), 11) {
        Ok(g) => g,
        Err(e) => return vec![CaseResult::new("generator", false, e.to_string())],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let params: Vec<Tensor<f64>> = gen.params().iter().map(|(_, t)| t.clone()).collect();
    let mut out = Vec::new();

    let mut inputs = vec![rand_tensor(&mut rng, &[16, 8])];
    inputs.extend(params.iter().cloned());
    out.push(summarize_checks(
        "fcsn_sum_y",
        grad_check_with_step(&inputs, 12, 13, DEEP_FD_STEP, |t, v| {
            let y = gen.fcsn_forward(t, v[0], &v[1..])?;
            Ok(t.sum(y))
        }),
    ));

    // attention and score head on a fixed (X, Y) pair
    let x = rand_tensor(&mut rng, &[8, 8]);
    let y = rand_tensor(&mut rng, &[8, 8]);
    let mut inputs = vec![x, y];
    inputs.extend(params.iter().cloned());
    out.push(summarize_checks(
        "attention_sum_s",
        grad_check(&inputs, 32, 16, |t, v| {
            let a = gen.attention_forward(t, v[0], v[1], &v[2..])?;
            Ok(t.sum(a.scores))
        }),
    ));

    let mut inputs = vec![rand_tensor(&mut rng, &[16, 8])];
    inputs.extend(params.iter().cloned());
    out.push(summarize_checks(
        "generator",
        grad_check_with_step(&inputs, 12, 13, DEEP_FD_STEP, |t, v| {
            let out = gen.forward_with(t, v[0], &v[1..])?;
            let s = probe(t, out.scores, 14)?;
            let w = probe(t, out.weighted, 15)?;
            t.add(s, w)
        }),
    ));
    out
}

fn discriminator_grad_case() -> CaseResult {
    let cfg = DiscriminatorConfig {
        feature_dim: 8,
        hidden: 8,
    };
    let disc = Discriminator::<f64>::new(cfg, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = rand_tensor(&mut rng, &[6, 8]);
    let mut inputs = vec![x];
    inputs.extend(disc.params().iter().map(|(_, t)| t.clone()));
    summarize_checks(
        "discriminator",
        grad_check(&inputs, 24, 23, |t, v| {
            let out = disc.forward_with(t, v[0], &v[1..])?;
            let p = t.log(out.prob);
            Ok(t.neg(p))
        }),
    )
}

/// Best value over all subsets with total length within `budget`, by
/// enumeration. Ties go to fewer frames, then the lexicographically smallest
/// index set.
pub fn knapsack_brute_force(values: &[f64], lengths: &[usize], budget: usize) -> (f64, Vec<usize>) {
    let n = values.len();
    let mut best = (0.0, 0usize, Vec::new());
    for mask in 1u64..(1u64 << n) {
        let set: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let len: usize = set.iter().map(|&i| lengths[i]).sum();
        if len > budget {
            continue;
        }
        let val: f64 = set.iter().map(|&i| values[i]).sum();
        let better = val > best.0 + 1e-12
            || ((val - best.0).abs() <= 1e-12 && (len < best.1 || (len == best.1 && set < best.2)));
        if better {
            best = (val, len, set);
        }
    }
    (best.0, best.2)
}

pub fn knapsack_suite(instances: usize, fuzzed: usize) -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut optimal = 0;
    let mut first_failure = None;
    for k in 0..instances {
        let n = rng.random_range(1..=18);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(1..=20)).collect();
        let budget = rng.random_range(0..=60);
        let chosen = knapsack_select(&values, &lengths, budget);
        let got: f64 = chosen.iter().map(|&i| values[i]).sum();
        let used: usize = chosen.iter().map(|&i| lengths[i]).sum();
        let (want, _) = knapsack_brute_force(&values, &lengths, budget);
        if (got - want).abs() <= 1e-9 && used <= budget {
            optimal += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!("instance {k}: got {got}, optimum {want}"));
        }
    }
    let mut over = 0;
    for _ in 0..fuzzed {
        let n = rng.random_range(1..=60);
        let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let lengths: Vec<usize> = (0..n).map(|_| rng.random_range(1..=50)).collect();
        let budget = rng.random_range(0..=200);
        let chosen = knapsack_select(&values, &lengths, budget);
        let used: usize = chosen.iter().map(|&i| lengths[i]).sum();
        if used > budget {
            over += 1;
        }
    }
    vec![
        CaseResult::new(
            "knapsack_optimality",
            optimal == instances,
            first_failure.unwrap_or_else(|| format!("{optimal}/{instances} instances optimal")),
        ),
        CaseResult::new(
            "knapsack_budget",
            over == 0,
            format!("{over} of {fuzzed} fuzzed instances over budget"),
        ),
    ]
}

/// Sum of squared distances to the segment mean over rows `a..b`.
pub fn direct_scatter(x: &Tensor<f64>, a: usize, b: usize) -> f64 {
    let n = (b - a) as f64;
    (0..x.cols())
        .map(|j| {
            let mean = (a..b).map(|i| x.at(i, j)).sum::<f64>() / n;
            (a..b).map(|i| (x.at(i, j) - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Minimum total scatter for each exact segment count `1..=max_segments`,
/// by enumerating every boundary set. Index 0 is unused.
pub fn segmentation_brute_force(x: &Tensor<f64>, max_segments: usize) -> Vec<f64> {
    let f = x.rows();
    let mut best = vec![f64::INFINITY; max_segments + 1];
    let mut stack = vec![(0usize, 0usize, 0.0f64)];
    while let Some((start, segs, acc)) = stack.pop() {
        for end in start + 1..=f {
            let c = acc + direct_scatter(x, start, end);
            if end == f {
                best[segs + 1] = best[segs + 1].min(c);
            } else if segs + 1 < max_segments {
                stack.push((end, segs + 1, c));
            }
        }
    }
    best
}

pub fn segmentation_suite(instances: usize) -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut agree = 0;
    let mut first_failure = None;
    for k in 0..instances {
        let f = rng.random_range(2..=24);
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..=4usize).min(f);
        let x32: Tensor<f32> = Tensor::uniform(&[f, d], 1.0, &mut rng);
        let x = x32.cast::<f64>();
        let oracle = segmentation_brute_force(&x, m);
        let ok = (1..=m).all(|segs| {
            let dp = optimal_segmentation(&x32, segs).map(|s| {
                s.shots().map(|r| direct_scatter(&x, r.start, r.end)).sum::<f64>()
            });
            match dp {
                Ok(c) => (c - oracle[segs]).abs() <= 1e-6 * (1.0 + oracle[segs].abs()),
                Err(_) => false,
            }
        });
        if ok {
            agree += 1;
        } else if first_failure.is_none() {
            first_failure = Some(format!("instance {k} (F={f}, m={m}) disagrees"));
        }
    }

    // two-level planted sequence, no noise
    let x = Tensor::<f32>::from_fn(20, 2, |i, j| if i < 10 { 1.0 + j as f32 } else { -1.0 });
    let planted = kts_changepoints(&x, &KtsParams { max_segments: 4, penalty: 1.0 });
    let planted_ok = matches!(&planted, Ok(s) if s.boundaries() == [0, 10, 20]);

    vec![
        CaseResult::new(
            "segmentation_optimality",
            agree == instances,
            first_failure.unwrap_or_else(|| format!("{agree}/{instances} instances match enumeration")),
        ),
        CaseResult::new(
            "segmentation_planted_boundary",
            planted_ok,
            format!("{:?}", planted.map(|s| s.boundaries().to_vec())),
        ),
    ]
}

pub fn metric_suite() -> Vec<CaseResult> {
    let mut out = Vec::new();
    let mask = |n: usize, sel: &[std::ops::Range<usize>]| {
        let mut m = vec![false; n];
        for r in sel {
            m[r.clone()].iter_mut().for_each(|v| *v = true);
        }
        Summary::from_mask(m)
    };
    let a = mask(100, &[0..20]);
    let same = fscore(&a, &a).map(|r| r.fscore);
    out.push(CaseResult::new("fscore_identical", matches!(same, Ok(f) if (f - 100.0).abs() < 1e-12), format!("{same:?}")));
    let b = mask(100, &[50..70]);
    let disj = fscore(&a, &b).map(|r| r.fscore);
    out.push(CaseResult::new("fscore_disjoint", matches!(disj, Ok(f) if f == 0.0), format!("{disj:?}")));
    let c = mask(100, &[10..30]);
    let half = fscore(&a, &c).map(|r| r.fscore);
    out.push(CaseResult::new("fscore_half_overlap", matches!(half, Ok(f) if (f - 50.0).abs() < 1e-12), format!("{half:?}")));

    let s: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let rev: Vec<f64> = s.iter().rev().copied().collect();
    let checks = [
        ("kendall_identical", kendall_tau(&s, &s), 1.0),
        ("kendall_reversed", kendall_tau(&s, &rev), -1.0),
        ("spearman_identical", spearman_rho(&s, &s), 1.0),
        ("spearman_reversed", spearman_rho(&s, &rev), -1.0),
    ];
    for (name, got, want) in checks {
        out.push(CaseResult::new(name, matches!(got, Ok(v) if (v - want).abs() < 1e-12), format!("{got:?}")));
    }

    // independent uniform scores: population value of both coefficients is 0
    let mut worst: f64 = 0.0;
    let mut undefined = false;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        match (kendall_tau(&a, &b), spearman_rho(&a, &b)) {
            (Ok(t), Ok(r)) => worst = worst.max(t.abs()).max(r.abs()),
            _ => undefined = true,
        }
    }
    out.push(CaseResult::new(
        "random_scores_uncorrelated",
        !undefined && worst < 0.08,
        format!("max |tau|, |rho| over 20 seeds at F=1000: {worst:.4}"),
    ));

    let (d, _) = adversarial_losses(0.5, 0.5, false);
    out.push(CaseResult::new(
        "adversarial_d_loss_half",
        (d - 2.0 * std::f64::consts::LN_2).abs() < 1e-12,
        format!("{d}"),
    ));
    let spar = sparsity_loss(&[1.0; 10], 0.3);
    out.push(CaseResult::new(
        "sparsity_all_ones",
        matches!(spar, Ok(v) if (v - 0.7).abs() < 1e-12),
        format!("{spar:?}"),
    ));
    out
}

/// Checks that a segmentation is a valid partition of `frames`.
pub fn is_partition(seg: &ShotSegmentation, frames: usize) -> bool {
    let b = seg.boundaries();
    b.first() == Some(&0) && b.last() == Some(&frames) && b.windows(2).all(|w| w[0] < w[1])
}
