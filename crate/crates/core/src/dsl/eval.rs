//! Evaluation of parsed expressions against a system.
//!
//! Each distinct `E[…]` body is evaluated once per disorder sample, all
//! bodies of a batch jointly, so that combinations of several averages get
//! delta-method errors from the full covariance. Inside one sample every
//! distinct Duhamel product is computed once.

use std::collections::HashMap;

use super::{expand_block, print_canonical, validate, Expr};
use crate::disorder::{average_vec, Averaging, EstimatorResult, VectorEstimate};
use crate::error::{Error, Result};
use crate::model::System;
use crate::pauli::{Axis, CMatrix, DisorderSample, C64};
use crate::replica::{Atom, AtomTerm, Evaluator, ReplicaContext};
use crate::spectral::SpectralData;

/// Tolerance on the imaginary part of a Gibbs block.
const GIBBS_IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub system: &'a System,
    /// Axis of `R` and `h`.
    pub axis: Axis,
    pub avg: Averaging,
}

#[derive(Debug, Clone)]
enum Body {
    Num(f64),
    D(Vec<AtomTerm>),
    G(Vec<AtomTerm>),
    Neg(Box<Body>),
    Add(Box<Body>, Box<Body>),
    Sub(Box<Body>, Box<Body>),
    Mul(Box<Body>, Box<Body>),
}

#[derive(Debug, Clone)]
enum Top {
    Num(f64),
    Avg(usize),
    Neg(Box<Top>),
    Add(Box<Top>, Box<Top>),
    Sub(Box<Top>, Box<Top>),
    Mul(Box<Top>, Box<Top>),
}

/// A batch of expressions lowered to per-sample bodies and a top level
/// combining their averages.
#[derive(Debug, Clone)]
pub struct Compiled {
    tops: Vec<Top>,
    bodies: Vec<Body>,
    keys: Vec<String>,
}

impl Compiled {
    pub fn n_bodies(&self) -> usize {
        self.bodies.len()
    }
}

fn lower_body(e: &Expr, beta: f64, j: f64) -> Result<Body> {
    Ok(match e {
        Expr::Num(v) => Body::Num(*v),
        Expr::Beta => Body::Num(beta),
        Expr::Coupling => Body::Num(j),
        Expr::D(x) => Body::D(expand_block(x, beta, j)?),
        Expr::G(x) => Body::G(expand_block(x, beta, j)?),
        Expr::Neg(x) => Body::Neg(Box::new(lower_body(x, beta, j)?)),
        Expr::Add(a, b) => Body::Add(Box::new(lower_body(a, beta, j)?), Box::new(lower_body(b, beta, j)?)),
        Expr::Sub(a, b) => Body::Sub(Box::new(lower_body(a, beta, j)?), Box::new(lower_body(b, beta, j)?)),
        Expr::Mul(a, b) => Body::Mul(Box::new(lower_body(a, beta, j)?), Box::new(lower_body(b, beta, j)?)),
        Expr::E(_) => return Err(Error::Context("nested E block".into())),
        Expr::Spin { .. } | Expr::Overlap(..) | Expr::Field(_) => {
            return Err(Error::Context("spin operator outside a D or G block".into()))
        }
    })
}

fn lower_top(e: &Expr, beta: f64, j: f64, c: &mut Compiled) -> Result<Top> {
    Ok(match e {
        Expr::Num(v) => Top::Num(*v),
        Expr::Beta => Top::Num(beta),
        Expr::Coupling => Top::Num(j),
        Expr::E(x) => {
            let key = print_canonical(x);
            let idx = match c.keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    c.bodies.push(lower_body(x, beta, j)?);
                    c.keys.push(key);
                    c.bodies.len() - 1
                }
            };
            Top::Avg(idx)
        }
        Expr::Neg(x) => Top::Neg(Box::new(lower_top(x, beta, j, c)?)),
        Expr::Add(a, b) => Top::Add(Box::new(lower_top(a, beta, j, c)?), Box::new(lower_top(b, beta, j, c)?)),
        Expr::Sub(a, b) => Top::Sub(Box::new(lower_top(a, beta, j, c)?), Box::new(lower_top(b, beta, j, c)?)),
        Expr::Mul(a, b) => Top::Mul(Box::new(lower_top(a, beta, j, c)?), Box::new(lower_top(b, beta, j, c)?)),
        Expr::D(_) | Expr::G(_) => {
            return Err(Error::Context(format!(
                "block '{}' must sit inside E[…] to have a disorder-averaged value",
                print_canonical(e)
            )))
        }
        Expr::Spin { .. } | Expr::Overlap(..) | Expr::Field(_) => {
            return Err(Error::Context("spin operator outside a D or G block".into()))
        }
    })
}

/// Lower a batch of expressions with `beta` and `J` substituted.
pub fn compile(exprs: &[&Expr], beta: f64, j: f64) -> Result<Compiled> {
    let mut c = Compiled { tops: Vec::new(), bodies: Vec::new(), keys: Vec::new() };
    for e in exprs {
        validate(e)?;
        let t = lower_top(e, beta, j, &mut c)?;
        c.tops.push(t);
    }
    Ok(c)
}

fn top_value(t: &Top, means: &[f64]) -> (f64, Vec<f64>) {
    let n = means.len();
    match t {
        Top::Num(v) => (*v, vec![0.0; n]),
        Top::Avg(i) => {
            let mut g = vec![0.0; n];
            g[*i] = 1.0;
            (means[*i], g)
        }
        Top::Neg(x) => {
            let (v, g) = top_value(x, means);
            (-v, g.into_iter().map(|d| -d).collect())
        }
        Top::Add(a, b) | Top::Sub(a, b) => {
            let (va, ga) = top_value(a, means);
            let (vb, gb) = top_value(b, means);
            let s = if matches!(t, Top::Add(..)) { 1.0 } else { -1.0 };
            (va + s * vb, ga.iter().zip(&gb).map(|(x, y)| x + s * y).collect())
        }
        Top::Mul(a, b) => {
            let (va, ga) = top_value(a, means);
            let (vb, gb) = top_value(b, means);
            (va * vb, ga.iter().zip(&gb).map(|(x, y)| x * vb + va * y).collect())
        }
    }
}

/// Equal-time products in the eigenbasis, cached per Pauli string.
struct GibbsCache<'s> {
    sd: &'s SpectralData,
    ctx: &'s ReplicaContext,
    ops: HashMap<(Axis, Vec<usize>), CMatrix>,
}

impl GibbsCache<'_> {
    fn op(&mut self, axis: Axis, support: &[usize]) -> Result<&CMatrix> {
        let key = (axis, support.to_vec());
        if !self.ops.contains_key(&key) {
            let s = crate::pauli::SpinOperator::new(axis, support, self.ctx.n_sites)?;
            self.ops.insert(key.clone(), self.sd.spin_to_eigenbasis(&s));
        }
        Ok(&self.ops[&key])
    }

    fn term(&mut self, t: &AtomTerm) -> Result<f64> {
        let mut total = 0.0;
        for m in self.ctx.expand(t)? {
            let mut v = C64::new(m.coeff, 0.0);
            let by = m.by_replica();
            for ops in by.values() {
                let mut prod: Option<CMatrix> = None;
                for o in ops {
                    let mat = self.op(o.axis, &o.support)?.clone();
                    prod = Some(match prod {
                        None => mat,
                        Some(p) => p * mat,
                    });
                }
                let p = prod.expect("replica with no operators");
                let tr: C64 = (0..self.sd.dim()).map(|i| p[(i, i)] * self.sd.weights[i]).sum::<C64>() / self.sd.z_shifted;
                v *= tr;
            }
            total += v.re;
            if v.im.abs() > GIBBS_IMAG_TOL * (1.0 + v.re.abs()) {
                return Err(Error::NonReal(v.im));
            }
        }
        Ok(total)
    }
}

struct SampleState<'s> {
    ev: Evaluator<'s>,
    gibbs: GibbsCache<'s>,
    memo: HashMap<Vec<Atom>, f64>,
}

impl SampleState<'_> {
    fn duhamel(&mut self, terms: &[AtomTerm]) -> Result<f64> {
        let mut s = 0.0;
        for t in terms {
            let mut key = t.atoms.clone();
            key.sort();
            let v = match self.memo.get(&key) {
                Some(v) => *v,
                None => {
                    let v = self.ev.eval_term(&AtomTerm::new(1.0, key.clone()))?;
                    self.memo.insert(key, v);
                    v
                }
            };
            s += t.coeff * v;
        }
        Ok(s)
    }

    fn body(&mut self, b: &Body) -> Result<f64> {
        Ok(match b {
            Body::Num(v) => *v,
            Body::D(t) => self.duhamel(t)?,
            Body::G(t) => {
                let mut s = 0.0;
                for term in t {
                    s += self.gibbs.term(term)?;
                }
                s
            }
            Body::Neg(x) => -self.body(x)?,
            Body::Add(a, b) => self.body(a)? + self.body(b)?,
            Body::Sub(a, b) => self.body(a)? - self.body(b)?,
            Body::Mul(a, b) => self.body(a)? * self.body(b)?,
        })
    }
}

/// Values of every `E` body of `c` on one realization.
pub fn sample_values(c: &Compiled, system: &System, axis: Axis, g: &DisorderSample) -> Result<Vec<f64>> {
    let sd = system.spectral(g)?;
    let ctx = system.replica_context(axis, g)?;
    let mut st = SampleState {
        ev: Evaluator::new(&sd, &ctx)?,
        gibbs: GibbsCache { sd: &sd, ctx: &ctx, ops: HashMap::new() },
        memo: HashMap::new(),
    };
    c.bodies.iter().map(|b| st.body(b)).collect()
}

/// Evaluate several expressions on shared samples.
pub fn evaluate_many(exprs: &[&Expr], ctx: &EvalContext) -> Result<Vec<EstimatorResult>> {
    Ok(evaluate_joint(exprs, ctx)?.1)
}

/// Like [`evaluate_many`], also returning the joint estimate of the
/// `E` bodies.
pub fn evaluate_joint(exprs: &[&Expr], ctx: &EvalContext) -> Result<(VectorEstimate, Vec<EstimatorResult>)> {
    let sys = ctx.system;
    let c = compile(exprs, sys.beta, sys.spec.j)?;
    if sys.spec.axis_position(ctx.axis).is_none() {
        return Err(Error::Context(format!("axis {} carries no random couplings", ctx.axis)));
    }
    let est = if c.bodies.is_empty() {
        VectorEstimate { means: vec![], cov: vec![], n_samples: 0, mode: ctx.avg.mode, seed: ctx.avg.seed }
    } else {
        average_vec(|g| sample_values(&c, sys, ctx.axis, g), &sys.spec, &ctx.avg)?
    };
    let out = c
        .tops
        .iter()
        .map(|t| {
            let (v, grad) = top_value(t, &est.means);
            if est.means.is_empty() {
                EstimatorResult { mean: v, std_error: 0.0, n_samples: 0, mode: ctx.avg.mode, seed: ctx.avg.seed }
            } else {
                est.delta(v, &grad)
            }
        })
        .collect();
    Ok((est, out))
}

pub fn evaluate(e: &Expr, ctx: &EvalContext) -> Result<EstimatorResult> {
    Ok(evaluate_many(&[e], ctx)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;
    use crate::disorder::Mode;

    fn one_site(beta: f64, j: f64) -> System {
        System::random_field(1, 1, &[Axis::Z], j, 0.0, beta).unwrap()
    }

    fn ctx(s: &System, avg: Averaging) -> EvalContext<'_> {
        EvalContext { system: s, axis: Axis::Z, avg }
    }

    fn simpson(f: impl Fn(f64) -> f64) -> f64 {
        let n = 20_000;
        let h = 24.0 / n as f64;
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = 0.0;
        for i in 0..=n {
            let x = -12.0 + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(x) * phi(x);
        }
        s * h / 3.0
    }

    #[test]
    fn single_spin_overlap_is_mean_tanh_squared() {
        let s = one_site(1.0, 1.0);
        let e = parse("E[D[R(1,2)]]").unwrap();
        let v = evaluate(&e, &ctx(&s, Averaging::trapezoid(0.25, 9.0))).unwrap();
        let oracle = simpson(|g| g.tanh().powi(2));
        assert!((v.mean - oracle).abs() < 1e-10, "{} {oracle}", v.mean);
        let gh = evaluate(&e, &ctx(&s, Averaging::gh(15))).unwrap();
        // poles of tanh at ±iπ/2 limit Gauss–Hermite to a few digits
        assert!((gh.mean - oracle).abs() < 1e-3, "{} {oracle}", gh.mean);
        assert_eq!(gh.mode, Mode::Gh);
    }

    #[test]
    fn duhamel_overlap_equals_gibbs_overlap() {
        let s = System::random_field(1, 2, &[Axis::Z, Axis::X], 1.0, 1.0, 0.8).unwrap();
        let e = parse("E[D[R(1,2)] - G[R(1,2)]]").unwrap();
        let v = evaluate(&e, &ctx(&s, Averaging::mc(30, 4))).unwrap();
        assert!(v.mean.abs() < 1e-12 && v.std_error < 1e-12, "{v:?}");
    }

    #[test]
    fn classical_self_overlap_is_one() {
        let s = System::random_bond(1, 3, &[Axis::Z], 1.0, 0.2, 1.1).unwrap();
        let v = evaluate(&parse("E[D[R(1,1)]]").unwrap(), &ctx(&s, Averaging::gh(5))).unwrap();
        assert!((v.mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_over_addition() {
        let s = System::random_field(1, 2, &[Axis::Z], 0.9, 1.0, 1.2).unwrap();
        let c = ctx(&s, Averaging::gh(7));
        let a = evaluate(&parse("E[D[R(1,1)*R(1,2)]]").unwrap(), &c).unwrap().mean;
        let b = evaluate(&parse("E[D[h(1)]]").unwrap(), &c).unwrap().mean;
        let ab = evaluate(&parse("E[D[R(1,1)*R(1,2)]] + E[D[h(1)]]").unwrap(), &c).unwrap().mean;
        let inner = evaluate(&parse("E[D[R(1,1)*R(1,2) + h(1)]]").unwrap(), &c).unwrap().mean;
        assert!((a + b - ab).abs() < 1e-14);
        assert!((a + b - inner).abs() < 1e-13);
        let mc = ctx(&s, Averaging::mc(200, 3));
        let r = evaluate_many(&[&parse("E[D[R(1,2)]]").unwrap(), &parse("E[D[h(1)]]").unwrap(), &parse("E[D[R(1,2)]] + E[D[h(1)]]").unwrap()], &mc).unwrap();
        assert!((r[0].mean + r[1].mean - r[2].mean).abs() < 1e-14);
    }

    #[test]
    fn products_inside_and_outside_averages_differ() {
        let s = System::random_field(1, 2, &[Axis::Z], 1.0, 0.5, 1.0).unwrap();
        let c = ctx(&s, Averaging::gh(9));
        let inside = evaluate(&parse("E[D[h(1)]*D[h(1)]]").unwrap(), &c).unwrap();
        let outside = evaluate(&parse("E[D[h(1)]]*E[D[h(1)]]").unwrap(), &c).unwrap();
        assert!(inside.mean > outside.mean + 1e-3);
    }

    #[test]
    fn delta_method_error_of_products() {
        let s = one_site(1.0, 1.0);
        let c = ctx(&s, Averaging::mc(400, 8));
        let r = evaluate_many(&[&parse("E[D[h(1)]]").unwrap(), &parse("E[D[h(1)]]*E[D[h(1)]]").unwrap()], &c).unwrap();
        assert!((r[1].mean - r[0].mean.powi(2)).abs() < 1e-15);
        assert!((r[1].std_error - 2.0 * r[0].mean.abs() * r[0].std_error).abs() < 1e-12);
    }

    #[test]
    fn context_errors() {
        let s = one_site(1.0, 1.0);
        let c = ctx(&s, Averaging::gh(5));
        assert!(matches!(evaluate(&parse("D[R(1,2)]").unwrap(), &c), Err(Error::Context(_))));
        let cx = EvalContext { system: &s, axis: Axis::X, avg: Averaging::gh(5) };
        assert!(matches!(evaluate(&parse("E[D[R(1,2)]]").unwrap(), &cx), Err(Error::Context(_))));
        assert!(evaluate(&parse("E[D[S(z,2,1)]]").unwrap(), &c).is_err());
        assert_eq!(evaluate(&parse("2*beta*J").unwrap(), &c).unwrap().mean, 2.0);
    }
}
