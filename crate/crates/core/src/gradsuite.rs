//! Gradient-check cases for every differentiable op the model uses.
//!
//! Each case reduces its output to a scalar through a fixed random weighting,
//! so every output element contributes a distinct coefficient.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ConvLstmCell, ConvLstmState, Mode, ParameterStore, Session};
use crate::tensor::gradcheck::{GradCheck, GradCheckReport};
use crate::tensor::{Conv2dOptions, OpKind, Shape, Tape, Tensor, Var};

/// Op groups selectable with `--ops`.
pub const OPS: &[&str] = &[
    "conv2d",
    "batch_norm",
    "relu",
    "sigmoid",
    "tanh",
    "upsample",
    "global_pool",
    "concat",
    "slice",
    "add",
    "mul",
    "sum",
    "dice_loss",
    "convlstm",
];

const FAULTABLE: &[OpKind] = &[
    OpKind::Conv2d,
    OpKind::BatchNorm,
    OpKind::Relu,
    OpKind::Sigmoid,
    OpKind::Tanh,
    OpKind::Concat,
    OpKind::SliceChannels,
    OpKind::Resize,
    OpKind::GlobalAvgPool,
    OpKind::Add,
    OpKind::Mul,
    OpKind::Sum,
    OpKind::DiceLoss,
];

/// Parses `all` or a comma-separated list of names from [`OPS`].
pub fn parse_ops(spec: &str) -> Result<Vec<&'static str>> {
    if spec.trim() == "all" {
        return Ok(OPS.to_vec());
    }
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let op = OPS
            .iter()
            .find(|o| **o == name)
            .ok_or_else(|| Error::Invalid(format!("unknown op `{name}`; expected one of {}", OPS.join(", "))))?;
        if !out.contains(op) {
            out.push(*op);
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid("no ops selected".into()));
    }
    Ok(out)
}

/// Op kind whose backward rule `name` corrupts, by its display name.
pub fn parse_fault(name: &str) -> Result<OpKind> {
    FAULTABLE
        .iter()
        .copied()
        .find(|k| k.to_string() == name)
        .ok_or_else(|| Error::Invalid(format!("cannot inject a fault into `{name}`")))
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub op: &'static str,
    pub case: String,
    pub report: GradCheckReport,
}

type CaseFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

struct Case {
    op: &'static str,
    name: String,
    inputs: Vec<Tensor<f64>>,
    f: CaseFn,
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn uniform(&mut self, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| self.0.random_range(lo..hi))
    }

    fn signed(&mut self, shape: Shape) -> Tensor<f64> {
        self.uniform(shape, -1.0, 1.0)
    }

    /// Magnitudes in `[0.1, 1)` with random sign, clear of the relu kink.
    fn away_from_zero(&mut self, shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| {
            let m = self.0.random_range(0.1..1.0);
            if self.0.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
    }
}

fn weighted(t: &mut Tape<f64>, y: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = t.constant(w.clone());
    let m = t.mul(y, wv)?;
    Ok(t.sum(m))
}

fn conv_case(g: &mut Gen, name: &str, x: Shape, k: Shape, opts: Conv2dOptions, bias: bool) -> Result<Case> {
    let (oh, ow) = opts.output_size(x, k)?;
    let w = g.signed(Shape::new(x.n, k.n, oh, ow));
    let mut inputs = vec![g.signed(x), g.signed(k)];
    if bias {
        inputs.push(g.signed(Shape::new(k.n, 1, 1, 1)));
    }
    Ok(Case {
        op: "conv2d",
        name: name.to_string(),
        inputs,
        f: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], v.get(2).copied(), opts)?;
            weighted(t, y, &w)
        }),
    })
}

fn unary_case(
    g: &mut Gen,
    op: &'static str,
    x: Tensor<f64>,
    f: impl Fn(&mut Tape<f64>, Var) -> Result<Var> + 'static,
    out: Shape,
) -> Case {
    let w = g.signed(out);
    Case {
        op,
        name: op.to_string(),
        inputs: vec![x],
        f: Box::new(move |t, v| {
            let y = f(t, v[0])?;
            weighted(t, y, &w)
        }),
    }
}

fn cases(op: &'static str, g: &mut Gen) -> Result<Vec<Case>> {
    let s = Shape::new(2, 3, 4, 5);
    Ok(match op {
        "conv2d" => {
            let mut v = vec![
                conv_case(g, "k3 s1 p1", Shape::new(2, 2, 6, 6), Shape::new(3, 2, 3, 3), Conv2dOptions::new(1, 1, 1), false)?,
                conv_case(g, "k3 s1 p1 bias", Shape::new(1, 2, 5, 5), Shape::new(2, 2, 3, 3), Conv2dOptions::new(1, 1, 1), true)?,
                conv_case(g, "k3 s2 p1", Shape::new(1, 2, 8, 8), Shape::new(3, 2, 3, 3), Conv2dOptions::new(2, 1, 1), false)?,
            ];
            for stride in [1, 2, 4, 8, 16] {
                v.push(conv_case(
                    g,
                    &format!("k1 s{stride}"),
                    Shape::new(1, 2, 16, 16),
                    Shape::new(2, 2, 1, 1),
                    Conv2dOptions::new(stride, 1, 0),
                    false,
                )?);
            }
            v.push(conv_case(g, "k1 s1 bias", Shape::new(1, 3, 4, 4), Shape::new(1, 3, 1, 1), Conv2dOptions::new(1, 1, 0), true)?);
            for d in [6, 12, 18] {
                v.push(conv_case(
                    g,
                    &format!("k3 d{d} p{d}"),
                    Shape::new(1, 2, 20, 20),
                    Shape::new(2, 2, 3, 3),
                    Conv2dOptions::new(1, d, d),
                    false,
                )?);
            }
            v
        }
        "batch_norm" => {
            let c = Shape::new(3, 1, 1, 1);
            let w_train = g.signed(s);
            let w_eval = g.signed(s);
            let mean: Vec<f64> = (0..3).map(|_| g.0.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..3).map(|_| g.0.random_range(0.5..1.5)).collect();
            let params = |g: &mut Gen| vec![g.signed(s), g.uniform(c, 0.5, 1.5), g.signed(c)];
            vec![
                Case {
                    op,
                    name: "batch_norm train".into(),
                    inputs: params(g),
                    f: Box::new(move |t, v| {
                        let (y, _) = t.batch_norm_train(v[0], v[1], v[2], 1e-5)?;
                        weighted(t, y, &w_train)
                    }),
                },
                Case {
                    op,
                    name: "batch_norm eval".into(),
                    inputs: params(g),
                    f: Box::new(move |t, v| {
                        let y = t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?;
                        weighted(t, y, &w_eval)
                    }),
                },
            ]
        }
        "relu" => {
            let x = g.away_from_zero(s);
            vec![unary_case(g, op, x, |t, x| Ok(t.relu(x)), s)]
        }
        "sigmoid" => {
            let x = g.uniform(s, -3.0, 3.0);
            vec![unary_case(g, op, x, |t, x| Ok(t.sigmoid(x)), s)]
        }
        "tanh" => {
            let x = g.uniform(s, -2.0, 2.0);
            vec![unary_case(g, op, x, |t, x| Ok(t.tanh(x)), s)]
        }
        "upsample" => {
            let x2 = g.signed(Shape::new(1, 2, 3, 4));
            let x1 = g.signed(Shape::new(2, 2, 1, 1));
            let xr = g.signed(Shape::new(1, 1, 4, 6));
            vec![
                unary_case(g, op, x2, |t, x| t.upsample_bilinear(x, 2), Shape::new(1, 2, 6, 8)),
                unary_case(g, op, x1, |t, x| t.resize_bilinear(x, 3, 4), Shape::new(2, 2, 3, 4)),
                unary_case(g, op, xr, |t, x| t.resize_bilinear(x, 5, 3), Shape::new(1, 1, 5, 3)),
            ]
        }
        "global_pool" => {
            let x = g.signed(s);
            vec![unary_case(g, op, x, |t, x| Ok(t.global_avg_pool(x)), Shape::new(2, 3, 1, 1))]
        }
        "concat" => {
            let w = g.signed(Shape::new(2, 6, 3, 3));
            vec![Case {
                op,
                name: op.into(),
                inputs: vec![g.signed(Shape::new(2, 1, 3, 3)), g.signed(Shape::new(2, 3, 3, 3)), g.signed(Shape::new(2, 2, 3, 3))],
                f: Box::new(move |t, v| {
                    let y = t.concat_channels(v)?;
                    weighted(t, y, &w)
                }),
            }]
        }
        "slice" => {
            let x = g.signed(Shape::new(2, 5, 3, 3));
            vec![unary_case(g, op, x, |t, x| t.slice_channels(x, 1, 3), Shape::new(2, 3, 3, 3))]
        }
        "add" | "mul" => {
            let w = g.signed(s);
            let w_self = g.signed(s);
            let is_mul = op == "mul";
            let apply = move |t: &mut Tape<f64>, a: Var, b: Var| if is_mul { t.mul(a, b) } else { t.add(a, b) };
            vec![
                Case {
                    op,
                    name: op.into(),
                    inputs: vec![g.signed(s), g.signed(s)],
                    f: Box::new(move |t, v| {
                        let y = apply(t, v[0], v[1])?;
                        weighted(t, y, &w)
                    }),
                },
                Case {
                    op,
                    name: format!("{op} shared operand"),
                    inputs: vec![g.signed(s)],
                    f: Box::new(move |t, v| {
                        let y = apply(t, v[0], v[0])?;
                        weighted(t, y, &w_self)
                    }),
                },
            ]
        }
        "sum" => vec![Case {
            op,
            name: op.into(),
            inputs: vec![g.signed(s)],
            f: Box::new(|t, v| Ok(t.sum(v[0]))),
        }],
        "dice_loss" => vec![Case {
            op,
            name: op.into(),
            inputs: vec![g.uniform(s, 0.0, 1.0), g.uniform(s, 0.0, 1.0)],
            f: Box::new(|t, v| t.dice_loss(v[0], v[1], 1.0)),
        }],
        "convlstm" => vec![convlstm_case(g)?],
        _ => return Err(Error::Invalid(format!("unknown op `{op}`"))),
    })
}

/// One full cell step; inputs are `x`, `h`, `c` followed by every gate weight.
fn convlstm_case(g: &mut Gen) -> Result<Case> {
    let (c_in, hidden) = (3, 2);
    let mut store = ParameterStore::<f64>::new();
    let cell = ConvLstmCell::new(&mut store, "lstm", c_in, hidden)?;
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let state = Shape::new(1, hidden, 5, 5);
    let mut inputs = vec![g.signed(Shape::new(1, c_in, 5, 5)), g.signed(state), g.signed(state)];
    for &id in &ids {
        let shape = store.get(id).tensor.shape();
        inputs.push(g.uniform(shape, -0.5, 0.5));
    }
    let wh = g.signed(state);
    let wc = g.signed(state);
    let store = RefCell::new(store);
    Ok(Case {
        op: "convlstm",
        name: "convlstm step".into(),
        inputs,
        f: Box::new(move |t, v| {
            let mut store = store.borrow_mut();
            let mut s = Session::with_tape(&mut store, Mode::Eval, std::mem::take(t));
            for (&id, &var) in ids.iter().zip(&v[3..]) {
                s.bind(id, var);
            }
            let (h, next) = cell.step(&mut s, v[0], ConvLstmState { h: v[1], c: v[2] })?;
            *t = s.into_tape();
            let lh = weighted(t, h, &wh)?;
            let lc = weighted(t, next.c, &wc)?;
            t.add(lh, lc)
        }),
    })
}

/// Runs every case of the selected ops. Inputs and loss weights come from `seed`.
pub fn run_suite(ops: &[&'static str], seed: u64, check: GradCheck) -> Result<Vec<CaseResult>> {
    let mut g = Gen(ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();
    for &op in ops {
        for case in cases(op, &mut g)? {
            let report = check.run(&case.f, &case.inputs)?;
            out.push(CaseResult {
                op: case.op,
                case: case.name,
                report,
            });
        }
    }
    Ok(out)
}
