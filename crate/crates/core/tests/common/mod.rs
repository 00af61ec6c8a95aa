#![allow(dead_code)]

use aenet::error::Result;
use aenet::eval::PredictionScores;
use aenet::numerics::{gradcheck, Graph, Rng, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

pub fn gaussian(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gaussian()).collect()).unwrap()
}

pub fn dim(rng: &mut Rng) -> usize {
    1 + rng.below(4)
}

type Inputs = Box<dyn Fn(&mut Rng) -> Vec<Tensor>>;
type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Inputs,
    pub build: Build,
}

fn case(
    name: &'static str,
    inputs: impl Fn(&mut Rng) -> Vec<Tensor> + 'static,
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
) -> OpCase {
    OpCase {
        name,
        inputs: Box::new(inputs),
        build: Box::new(build),
    }
}

fn pair(rng: &mut Rng) -> Vec<Tensor> {
    let (m, n) = (dim(rng), dim(rng));
    vec![gaussian(rng, &[m, n]), gaussian(rng, &[m, n])]
}

fn one(rng: &mut Rng) -> Vec<Tensor> {
    let (m, n) = (dim(rng), dim(rng));
    vec![gaussian(rng, &[m, n])]
}

/// Every differentiable graph operation with an input generator that keeps
/// the inputs inside the operation's smooth domain.
pub fn op_cases() -> Vec<OpCase> {
    vec![
        case("add", pair, |g, v| g.add(v[0], v[1])),
        case("sub", pair, |g, v| g.sub(v[0], v[1])),
        case("mul", pair, |g, v| g.mul(v[0], v[1])),
        case(
            "div",
            |r| {
                let (m, n) = (dim(r), dim(r));
                vec![gaussian(r, &[m, n]), random(r, &[m, n], 0.5, 2.0)]
            },
            |g, v| g.div(v[0], v[1]),
        ),
        case("scale", one, |g, v| g.scale(v[0], -1.7)),
        case(
            "add_row",
            |r| {
                let (m, n) = (dim(r), dim(r));
                vec![gaussian(r, &[m, n]), gaussian(r, &[1, n])]
            },
            |g, v| g.add_row(v[0], v[1]),
        ),
        case(
            "mul_scalar",
            |r| {
                let (m, n) = (dim(r), dim(r));
                vec![gaussian(r, &[m, n]), gaussian(r, &[1])]
            },
            |g, v| g.mul_scalar(v[0], v[1]),
        ),
        case("expand", |r| vec![gaussian(r, &[1])], |g, v| g.expand(v[0], &[2, 3])),
        case(
            "matmul",
            |r| {
                let (m, k, n) = (dim(r), dim(r), dim(r));
                vec![gaussian(r, &[m, k]), gaussian(r, &[k, n])]
            },
            |g, v| g.matmul(v[0], v[1]),
        ),
        case("transpose", one, |g, v| g.transpose(v[0])),
        case("softmax", one, |g, v| g.softmax(v[0])),
        case("gmp_rows", one, |g, v| g.gmp_rows(v[0])),
        case(
            "concat_rows",
            |r| {
                let (m1, m2, n) = (dim(r), dim(r), dim(r));
                vec![gaussian(r, &[m1, n]), gaussian(r, &[m2, n])]
            },
            |g, v| g.concat(&[v[0], v[1]], 0),
        ),
        case(
            "concat_cols",
            |r| {
                let (m, n1, n2) = (dim(r), dim(r), dim(r));
                vec![gaussian(r, &[m, n1]), gaussian(r, &[m, n2])]
            },
            |g, v| g.concat(&[v[0], v[1]], 1),
        ),
        case(
            "slice_rows",
            |r| {
                let n = dim(r);
                vec![gaussian(r, &[4, n])]
            },
            |g, v| g.slice_rows(v[0], 1, 2),
        ),
        case("mean_axis0", one, |g, v| g.mean_axis(v[0], 0)),
        case("mean_axis1", one, |g, v| g.mean_axis(v[0], 1)),
        case("sum", one, |g, v| g.sum(v[0])),
        case("mean", one, |g, v| g.mean(v[0])),
        case("exp", one, |g, v| g.exp(v[0])),
        case(
            "log",
            |r| {
                let (m, n) = (dim(r), dim(r));
                vec![random(r, &[m, n], 0.2, 3.0)]
            },
            |g, v| g.log(v[0]),
        ),
        case("norm", one, |g, v| g.norm(v[0])),
        case("gelu", one, |g, v| g.gelu(v[0])),
        case(
            "layer_norm",
            |r| {
                let (m, n) = (dim(r), 2 + dim(r));
                vec![gaussian(r, &[m, n]), gaussian(r, &[1, n]), gaussian(r, &[1, n])]
            },
            |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
        ),
        case(
            "gather",
            |r| vec![gaussian(r, &[2, 3])],
            |g, v| g.gather(v[0], &[5, 0, 3, 3]),
        ),
        case("reshape", |r| vec![gaussian(r, &[2, 3])], |g, v| g.reshape(v[0], &[3, 2])),
        case(
            "cosine",
            |r| {
                let n = 2 + dim(r);
                vec![gaussian(r, &[1, n]), gaussian(r, &[1, n])]
            },
            |g, v| g.cosine(v[0], v[1]),
        ),
    ]
}

/// Worst relative error over `trials` seeded draws of one operation. Each
/// output is reduced against a fixed random weight so every output element
/// carries a distinct upstream gradient.
pub fn op_worst_error(case: &OpCase, trials: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let inputs = (case.inputs)(&mut rng);
        let out_shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = (case.build)(&mut g, &vars).unwrap();
            g.value(out).shape().to_vec()
        };
        let weight = gaussian(&mut rng, &out_shape);
        let named: Vec<(String, Tensor)> = inputs
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("{}[{i}]", case.name), t))
            .collect();
        let report = gradcheck(
            |g, v| {
                let out = (case.build)(g, v)?;
                let w = g.constant(weight.clone());
                let prod = g.mul(out, w)?;
                g.sum(prod)
            },
            &named,
            FD_STEP,
        )
        .unwrap();
        worst = worst.max(report.max_rel_error());
    }
    worst
}

/// Whether `p` lies in the convex hull of `pts` in the plane, by enumerating
/// every point, segment and triangle.
pub fn in_hull_2d(p: [f64; 2], pts: &[[f64; 2]], tol: f64) -> bool {
    let n = pts.len();
    let near = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]) <= tol;
    for i in 0..n {
        if near(p, pts[i]) {
            return true;
        }
        for j in i + 1..n {
            let (a, b) = (pts[i], pts[j]);
            let d = [b[0] - a[0], b[1] - a[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            if len2 > 0.0 {
                let t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2;
                if (0.0..=1.0).contains(&t) && near(p, [a[0] + t * d[0], a[1] + t * d[1]]) {
                    return true;
                }
            }
            for &c in &pts[j + 1..] {
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                if det.abs() < 1e-15 {
                    continue;
                }
                let l1 = ((b[0] - p[0]) * (c[1] - p[1]) - (c[0] - p[0]) * (b[1] - p[1])) / det;
                let l2 = ((c[0] - p[0]) * (a[1] - p[1]) - (a[0] - p[0]) * (c[1] - p[1])) / det;
                let l3 = 1.0 - l1 - l2;
                if l1 >= -tol && l2 >= -tol && l3 >= -tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Random scores with a seen bias so the sweep has something to trade off.
pub fn seeded_scores(seed: u64) -> PredictionScores {
    let mut rng = Rng::new(seed);
    let (c, per) = (6, 5);
    let seen: Vec<bool> = (0..c).map(|k| k < 4).collect();
    let labels: Vec<usize> = (0..c).flat_map(|k| std::iter::repeat(k).take(per)).collect();
    let data = labels
        .iter()
        .flat_map(|&y| {
            let row: Vec<f64> = (0..c)
                .map(|k| {
                    let bias = if seen[k] { 0.3 } else { 0.0 };
                    let hit = if k == y { 0.4 } else { 0.0 };
                    rng.uniform_range(-1.0, 1.0) * 0.5 + bias + hit
                })
                .collect();
            row
        })
        .collect();
    PredictionScores::new(
        Tensor::new(&[labels.len(), c], data).unwrap(),
        (0..c).map(|k| format!("class{k:02}")).collect(),
        seen,
        labels,
    )
    .unwrap()
}

