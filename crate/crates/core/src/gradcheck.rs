//! Central finite-difference checks of every differentiable op and block.
//!
//! Each case builds a small random problem, reduces its output to a scalar
//! with fixed random weights, and compares the tape gradient of every input
//! and parameter against `(L(x + h) - L(x - h)) / 2h`. Large tensors are
//! checked on a seeded sample of elements.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attention, Msa};
use crate::autodiff::{concat, Conv2dSpec, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::glae::{h_swish, split_sequence, GlaeBlock, Grid, LocalPart};
use crate::kan::{KanLayer, KanStack, SplineGrid};
use crate::model::{KansformerBlock, ModelConfig, SCKansformer, Variant};
use crate::nn::{Mode, Module, Param};
use crate::rng::substream;
use crate::scconv::{Cru, ScConv, ScConvConfig, Sru};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seeds: Vec<u64>,
    /// Elements checked per tensor; smaller tensors are checked fully.
    pub max_elements: usize,
    /// Case whose analytic gradient is deliberately scaled by 1.01.
    pub inject_fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-5,
            seeds: vec![0, 1, 2],
            max_elements: 64,
            inject_fault: None,
        }
    }
}

/// Worst mismatch of one case over all seeds.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub module: &'static str,
    pub case: &'static str,
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
    pub elapsed: Duration,
    pub error: Option<String>,
}

impl CaseResult {
    pub fn passed(&self, tol: f64) -> bool {
        self.error.is_none() && self.max_rel_err < tol
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub cases: Vec<CaseResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed(self.tolerance))
    }

    pub fn worst(&self) -> Option<&CaseResult> {
        self.cases
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    /// One line per case.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            let status = if c.passed(self.tolerance) { "ok  " } else { "FAIL" };
            let detail = match &c.error {
                Some(e) => format!("error: {e}"),
                None => format!("max rel err {:.3e} at {} ({} checks)", c.max_rel_err, c.worst, c.checked),
            };
            s.push_str(&format!("{status} {:<10} {:<22} {detail}\n", c.module, c.case));
        }
        s
    }
}

struct Stats {
    max_rel_err: f64,
    worst: String,
    checked: usize,
}

impl Stats {
    fn merge(&mut self, other: Stats) {
        if other.max_rel_err > self.max_rel_err || self.checked == 0 {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
    }
}

/// Per-run context passed to a case.
pub struct Ctx<'a> {
    case: &'static str,
    seed: u64,
    opts: &'a GradcheckOptions,
}

/// Stand-in module for cases whose inputs are all plain leaves.
#[derive(Debug, Default)]
pub struct NoParams;

impl Module for NoParams {
    fn visit_params(&self, _f: &mut dyn FnMut(&Param)) {}
    fn visit_params_mut(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
}

fn weighted_loss<'t>(out: Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    out.mul(out.tape().constant(weights.clone()))?.sum()
}

impl Ctx<'_> {
    fn rng(&self, stream: &str) -> ChaCha8Rng {
        substream(self.seed, &format!("gradcheck/{}/{stream}", self.case))
    }

    fn loss<M, F>(&self, m: &M, xs: &[Tensor], f: &F, w: &Tensor) -> Result<f64>
    where
        M: Module,
        F: for<'t> Fn(&M, &'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(m, &tape, &vars)?;
        Ok(weighted_loss(out, w)?.value().item())
    }

    fn elements(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if n <= self.opts.max_elements {
            (0..n).collect()
        } else {
            let mut v = sample(rng, n, self.opts.max_elements).into_vec();
            v.sort_unstable();
            v
        }
    }

    fn compare(&self, stats: &mut Stats, what: &str, j: usize, analytic: f64, numeric: f64) {
        let analytic = if self.opts.inject_fault.as_deref() == Some(self.case) {
            analytic * 1.01 + 1e-3
        } else {
            analytic
        };
        let denom = analytic.abs().max(numeric.abs()).max(self.opts.floor);
        let err = (analytic - numeric).abs() / denom;
        if err > stats.max_rel_err || stats.checked == 0 {
            stats.max_rel_err = err;
            stats.worst = format!("{what}[{j}] analytic {analytic:.6e} numeric {numeric:.6e}");
        }
        stats.checked += 1;
    }

    /// Compares tape gradients of `f` with central differences for every
    /// input and parameter of `m`.
    fn check<M, F>(&self, m: &mut M, mut xs: Vec<Tensor>, f: F) -> Result<Stats>
    where
        M: Module,
        F: for<'t> Fn(&M, &'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        let h = self.opts.step;
        let mut rng = self.rng("weights");
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(m, &tape, &vars)?;
        let w = Tensor::randn(out.shape(), 1.0, &mut rng);
        let grads = tape.backward(weighted_loss(out, &w)?)?;

        let mut stats = Stats {
            max_rel_err: 0.0,
            worst: String::new(),
            checked: 0,
        };
        for i in 0..xs.len() {
            let analytic = grads.wrt(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(xs[i].shape()));
            for j in self.elements(xs[i].numel(), &mut rng) {
                let orig = xs[i].data()[j];
                xs[i].data_mut()[j] = orig + h;
                let up = self.loss(m, &xs, &f, &w)?;
                xs[i].data_mut()[j] = orig - h;
                let down = self.loss(m, &xs, &f, &w)?;
                xs[i].data_mut()[j] = orig;
                self.compare(&mut stats, &format!("input{i}"), j, analytic.data()[j], (up - down) / (2.0 * h));
            }
        }
        let mut params: Vec<(String, usize)> = Vec::new();
        m.visit_params(&mut |p| params.push((p.name().to_string(), p.value().numel())));
        for (name, n) in params {
            let analytic = grads.param(&name).map(|g| g.data().to_vec());
            for j in self.elements(n, &mut rng) {
                let nudge = |m: &mut M, delta: f64| {
                    m.visit_params_mut(&mut |p| {
                        if p.name() == name {
                            p.value_mut().data_mut()[j] += delta;
                        }
                    })
                };
                nudge(m, h);
                let up = self.loss(m, &xs, &f, &w)?;
                nudge(m, -2.0 * h);
                let down = self.loss(m, &xs, &f, &w)?;
                nudge(m, h);
                let a = analytic.as_ref().map_or(0.0, |g| g[j]);
                self.compare(&mut stats, &name, j, a, (up - down) / (2.0 * h));
            }
        }
        Ok(stats)
    }

    /// Plain leaves only.
    fn check_fn<F>(&self, xs: Vec<Tensor>, f: F) -> Result<Stats>
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
    {
        self.check(&mut NoParams, xs, |_: &NoParams, t, v| f(t, v))
    }
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, rng)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(shape, lo, hi, rng)
}

/// Smallest distance of an SRU gate value from its threshold.
fn sru_margin(sru: &Sru, x: &Tensor) -> Result<f64> {
    let tape = Tape::new();
    let t = sru.trace(&tape, tape.constant(x.clone()))?;
    Ok(t.reweight
        .data()
        .iter()
        .map(|r| (r - sru.threshold).abs())
        .fold(f64::INFINITY, f64::min))
}

const GATE_MARGIN: f64 = 2e-4;
const MAX_RESAMPLES: usize = 64;

fn gate_safe_input<F>(mut draw: F) -> Result<Tensor>
where
    F: FnMut() -> Result<(Tensor, f64)>,
{
    for _ in 0..MAX_RESAMPLES {
        let (x, margin) = draw()?;
        if margin > GATE_MARGIN {
            return Ok(x);
        }
    }
    Err(Error::Numerical("could not sample SRU inputs away from the gate threshold".into()))
}

/// Margin of the SRU gate inside a full model for images `x`.
fn model_gate_margin(m: &SCKansformer, x: &Tensor) -> Result<f64> {
    let Some(sc) = &m.scconv else { return Ok(f64::INFINITY) };
    let tape = Tape::new();
    let patches = m.patch_embed(&tape, tape.constant(x.clone()))?;
    let img = crate::glae::s2i(patches, m.config.grid())?;
    sru_margin(&sc.sru, &img.value())
}

type CaseFn = fn(&Ctx) -> Result<Stats>;

pub struct Case {
    pub module: &'static str,
    pub name: &'static str,
    run: CaseFn,
}

macro_rules! case {
    ($module:literal, $name:literal, $body:expr) => {
        Case {
            module: $module,
            name: $name,
            run: $body,
        }
    };
}

fn model_case(ctx: &Ctx, variant: Option<Variant>) -> Result<Stats> {
    let mut rng = ctx.rng("model");
    let base = ModelConfig::tiny(3);
    let cfg = match variant {
        Some(v) => base.variant(v),
        None => ModelConfig {
            use_scconv: false,
            use_glae: false,
            use_kan: false,
            ..base
        },
    };
    let mut m = SCKansformer::new(&cfg, &mut rng)?;
    let x = gate_safe_input(|| {
        let x = randn(&[2, 3, 8, 8], &mut rng);
        let margin = model_gate_margin(&m, &x)?;
        Ok((x, margin))
    })?;
    ctx.check(&mut m, vec![x], |m, t, v| m.forward(t, v[0], Mode::Train))
}

fn block_case(ctx: &Ctx, use_kan: bool) -> Result<Stats> {
    let mut rng = ctx.rng("block");
    let cfg = ModelConfig {
        use_kan,
        ..ModelConfig::tiny(3)
    };
    let mut b = KansformerBlock::new("block.0", &cfg, &mut rng)?;
    let z = randn(&[2, 5, 8], &mut rng);
    ctx.check(&mut b, vec![z], |b, t, v| b.forward(t, v[0]))
}

/// Every registered case, grouped by module name.
pub fn cases() -> Vec<Case> {
    vec![
        case!("autodiff", "add_broadcast", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[3, 4], &mut r), randn(&[4], &mut r)], |_, v| v[0].add(v[1]))
        }),
        case!("autodiff", "sub", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3], &mut r), randn(&[2, 3], &mut r)], |_, v| v[0].sub(v[1]))
        }),
        case!("autodiff", "mul_broadcast", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4], &mut r), randn(&[3, 1], &mut r)], |_, v| v[0].mul(v[1]))
        }),
        case!("autodiff", "scale", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[5], &mut r)], |_, v| v[0].scale(-1.7))
        }),
        case!("autodiff", "sigmoid", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 5], &mut r)], |_, v| v[0].sigmoid())
        }),
        case!("autodiff", "silu", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 5], &mut r)], |_, v| v[0].silu())
        }),
        case!("autodiff", "gelu", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 5], &mut r)], |_, v| v[0].gelu())
        }),
        case!("autodiff", "exp", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 5], &mut r)], |_, v| v[0].exp())
        }),
        case!("autodiff", "square", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 5], &mut r)], |_, v| v[0].square())
        }),
        case!("autodiff", "broadcast_to", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[1, 3], &mut r)], |_, v| v[0].broadcast_to(&[4, 3]))
        }),
        case!("autodiff", "matmul", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[3, 4], &mut r), randn(&[4, 2], &mut r)], |_, v| v[0].matmul(v[1]))
        }),
        case!("autodiff", "bmm", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4], &mut r), randn(&[2, 4, 5], &mut r)], |_, v| v[0].bmm(v[1]))
        }),
        case!("autodiff", "transpose", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[3, 4], &mut r)], |_, v| v[0].t())
        }),
        case!("autodiff", "reshape_permute", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4], &mut r)], |_, v| {
                v[0].permute(&[2, 0, 1])?.reshape(&[4, 6])
            })
        }),
        case!("autodiff", "concat_split", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3], &mut r), randn(&[2, 2], &mut r)], |_, v| {
                let parts = concat(&[v[0], v[1]], 1)?.split(1, &[1, 4])?;
                parts[1].mul(parts[1])
            })
        }),
        case!("autodiff", "sum_axis", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4], &mut r)], |_, v| v[0].sum_axis(1, false)?.square())
        }),
        case!("autodiff", "mean", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4], &mut r)], |_, v| {
                v[0].mean_axis(2, true)?.mul(v[0])?.add(v[0].mean()?)
            })
        }),
        case!("autodiff", "softmax", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[3, 5], &mut r)], |_, v| v[0].softmax(1)?.add(v[0].softmax(0)?))
        }),
        case!("autodiff", "cross_entropy", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[4, 5], &mut r)], |_, v| v[0].cross_entropy(&[0, 3, 1, 4]))
        }),
        case!("autodiff", "layer_norm", |c| {
            let mut r = c.rng("x");
            let xs = vec![randn(&[3, 6], &mut r), uniform(&[6], 0.5, 1.5, &mut r), randn(&[6], &mut r)];
            c.check_fn(xs, |_, v| v[0].layer_norm(v[1], v[2], 1e-5))
        }),
        case!("autodiff", "group_norm", |c| {
            let mut r = c.rng("x");
            let xs = vec![randn(&[2, 4, 3, 3], &mut r), uniform(&[4], 0.5, 1.5, &mut r), randn(&[4], &mut r)];
            c.check_fn(xs, |_, v| v[0].group_norm(2, v[1], v[2], 1e-5))
        }),
        case!("autodiff", "batch_norm", |c| {
            let mut r = c.rng("x");
            let xs = vec![randn(&[3, 4, 2, 2], &mut r), uniform(&[4], 0.5, 1.5, &mut r), randn(&[4], &mut r)];
            c.check_fn(xs, |_, v| {
                let mut stats = RunningStats::new(4);
                v[0].batch_norm(v[1], v[2], &mut stats, Mode::Train, 1e-5)
            })
        }),
        case!("autodiff", "conv2d_grouped", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 4, 5, 5], &mut r), randn(&[6, 2, 3, 3], &mut r)], |_, v| {
                v[0].conv2d(v[1], Conv2dSpec::new(1, 1, 2))
            })
        }),
        case!("autodiff", "conv2d_strided", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[1, 3, 6, 6], &mut r), randn(&[4, 3, 3, 3], &mut r)], |_, v| {
                v[0].conv2d(v[1], Conv2dSpec::new(2, 0, 1))
            })
        }),
        case!("autodiff", "conv2d_depthwise", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4, 4], &mut r), randn(&[3, 1, 3, 3], &mut r)], |_, v| {
                v[0].conv2d(v[1], Conv2dSpec::new(1, 1, 3))
            })
        }),
        case!("autodiff", "global_avg_pool", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[2, 3, 4, 4], &mut r)], |_, v| v[0].global_avg_pool())
        }),
        case!("autodiff", "matmul_softmax_sum", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[3, 4], &mut r), randn(&[4, 5], &mut r)], |_, v| {
                v[0].matmul(v[1])?.softmax(1)?.sum_axis(0, false)
            })
        }),
        case!("kan", "bspline", |c| {
            let mut r = c.rng("x");
            let grid = SplineGrid::new(-1.0, 1.0, 5, 3)?;
            c.check_fn(vec![uniform(&[4, 3], -1.2, 1.2, &mut r)], move |_, v| v[0].bspline(&grid))
        }),
        case!("kan", "kan_layer", |c| {
            let mut r = c.rng("x");
            let mut layer = KanLayer::new("kan.0", 3, 4, SplineGrid::new(-1.0, 1.0, 5, 3)?, &mut r);
            let x = uniform(&[5, 3], -1.3, 1.3, &mut r);
            c.check(&mut layer, vec![x], |l, t, v| l.forward(t, v[0]))
        }),
        case!("kan", "kan_stack", |c| {
            let mut r = c.rng("x");
            let grid = SplineGrid::new(-1.0, 1.0, 5, 3)?;
            let mut stack = KanStack::new("kan", &[3, 5, 2], &grid, &mut r)?;
            let x = uniform(&[4, 3], -1.0, 1.0, &mut r);
            c.check(&mut stack, vec![x], |s, t, v| s.forward(t, v[0]))
        }),
        case!("attention", "attention", |c| {
            let mut r = c.rng("x");
            let xs = (0..3).map(|_| randn(&[5, 4], &mut r)).collect();
            c.check_fn(xs, |_, v| attention(v[0], v[1], v[2]))
        }),
        case!("attention", "attention_batched", |c| {
            let mut r = c.rng("x");
            let xs = (0..3).map(|_| randn(&[2, 5, 4], &mut r)).collect();
            c.check_fn(xs, |_, v| attention(v[0], v[1], v[2]))
        }),
        case!("attention", "msa", |c| {
            let mut r = c.rng("x");
            let mut msa = Msa::new("msa", 6, 2, &mut r)?;
            let x = randn(&[2, 5, 6], &mut r);
            c.check(&mut msa, vec![x], |m, t, v| m.forward(t, v[0]))
        }),
        case!("glae", "h_swish", |c| {
            let mut r = c.rng("x");
            c.check_fn(vec![randn(&[3, 4], &mut r)], |_, v| h_swish(v[0]))
        }),
        case!("glae", "local_part", |c| {
            let mut r = c.rng("x");
            let mut lp = LocalPart::new("glae.0.lp", 4, 2, &mut r)?;
            let z = randn(&[2, 5, 4], &mut r);
            c.check(&mut lp, vec![z], |lp, t, v| {
                let seq = split_sequence(v[0], Grid::new(2, 2))?;
                lp.forward(t, &seq, Mode::Train)?.concat()
            })
        }),
        case!("glae", "glae_block", |c| {
            let mut r = c.rng("x");
            let mut block = GlaeBlock::new("glae.0", 4, 2, 2, &mut r)?;
            let z = randn(&[2, 5, 4], &mut r);
            c.check(&mut block, vec![z], |b, t, v| b.forward(t, v[0], Grid::new(2, 2), Mode::Train))
        }),
        case!("scconv", "sru", |c| {
            let mut r = c.rng("x");
            let mut sru = Sru::new("scconv.sru", 4, 2, 0.5)?;
            *sru.gamma.value_mut() = uniform(&[4], 0.5, 1.5, &mut r);
            *sru.beta.value_mut() = Tensor::randn([4], 0.5, &mut r);
            let x = gate_safe_input(|| {
                let x = randn(&[2, 4, 3, 3], &mut r);
                let margin = sru_margin(&sru, &x)?;
                Ok((x, margin))
            })?;
            c.check(&mut sru, vec![x], |s, t, v| s.forward(t, v[0]))
        }),
        case!("scconv", "cru", |c| {
            let mut r = c.rng("x");
            let mut cru = Cru::new("scconv.cru", 8, 0.5, 2, 2, &mut r)?;
            let x = randn(&[2, 8, 3, 3], &mut r);
            c.check(&mut cru, vec![x], |m, t, v| m.forward(t, v[0]))
        }),
        case!("scconv", "sru_cru", |c| {
            let mut r = c.rng("x");
            let mut sc = ScConv::new("scconv", 8, &ScConvConfig::default(), &mut r)?;
            let x = gate_safe_input(|| {
                let x = randn(&[2, 8, 2, 2], &mut r);
                let margin = sru_margin(&sc.sru, &x)?;
                Ok((x, margin))
            })?;
            c.check(&mut sc, vec![x], |m, t, v| m.forward_image(t, v[0]))
        }),
        case!("model", "kansformer_block", |c| block_case(c, true)),
        case!("model", "mlp_block", |c| block_case(c, false)),
        case!("model", "full", |c| model_case(c, Some(Variant::Full))),
        case!("model", "no_scconv", |c| model_case(c, Some(Variant::NoScConv))),
        case!("model", "no_glae", |c| model_case(c, Some(Variant::NoGlae))),
        case!("model", "no_kan", |c| model_case(c, Some(Variant::NoKan))),
        case!("model", "plain_encoder", |c| model_case(c, None)),
    ]
}

pub const MODULES: [&str; 6] = ["autodiff", "kan", "attention", "glae", "scconv", "model"];

/// Runs the cases of `scope` (`"all"` or a module name) for every seed.
pub fn run(scope: &str, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    if scope != "all" && !MODULES.contains(&scope) {
        return Err(Error::Config(format!(
            "unknown gradcheck scope {scope:?}; expected all or one of {}",
            MODULES.join(", ")
        )));
    }
    if let Some(f) = &opts.inject_fault {
        if !cases().iter().any(|c| c.name == f) {
            return Err(Error::Config(format!("unknown gradcheck case {f:?}")));
        }
    }
    let mut results = Vec::new();
    for case in cases().into_iter().filter(|c| scope == "all" || c.module == scope) {
        let start = Instant::now();
        let mut stats = Stats {
            max_rel_err: 0.0,
            worst: String::new(),
            checked: 0,
        };
        let mut error = None;
        for &seed in &opts.seeds {
            let ctx = Ctx {
                case: case.name,
                seed,
                opts,
            };
            match (case.run)(&ctx) {
                Ok(s) => stats.merge(s),
                Err(e) => {
                    error = Some(format!("seed {seed}: {e}"));
                    break;
                }
            }
        }
        results.push(CaseResult {
            module: case.module,
            case: case.name,
            max_rel_err: stats.max_rel_err,
            worst: stats.worst,
            checked: stats.checked,
            elapsed: start.elapsed(),
            error,
        });
    }
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        cases: results,
    })
}
