//! Genetic-programming search.
//!
//! Individuals are scored in their monomial normal form: the coefficients
//! of the top-level terms are solved by linear least squares, so the search
//! only has to find the right terms and exponents. Scored individuals
//! replace their parents' genotype with the fitted canonical expression.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::canon::{canonicalize, to_poly, Base, Factor, Monomial, Poly};
use super::expr::{pow, sign, BinaryOp, Expr, UnaryOp, VarSet};
use super::{FrontMember, Op, ParetoFront, SRConfig};
use crate::error::{Error, Result};
use crate::numeric::{lstsq_equilibrated, mean, rms};
use crate::optim::{nelder_mead, NelderMead};

const RIDGE: f64 = 1e-12;
const CACHE_LIMIT: usize = 200_000;

struct Data {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    norm: f64,
}

impl Data {
    fn new(cols: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        let norm = normalizer(&y);
        Self { cols, y, norm }
    }

    fn col_refs(&self) -> Vec<&[f64]> {
        self.cols.iter().map(Vec::as_slice).collect()
    }
}

/// Denominator of the normalized MSE. Falls back to the squared mean for a
/// constant target so that a constant fit scores zero rather than NaN.
fn normalizer(y: &[f64]) -> f64 {
    let m = mean(y);
    let var = y.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / y.len() as f64;
    var.max(m * m).max(1e-300)
}

#[derive(Clone, Debug)]
struct Scored {
    expr: Expr,
    poly: Poly,
    nmse: f64,
    complexity: usize,
    fitness: f64,
}

fn factor_value(v: f64, exp: f64, odd: bool) -> f64 {
    let a = if exp == 1.0 {
        v.abs()
    } else if exp == 2.0 {
        v * v
    } else if exp == 0.0 {
        1.0
    } else {
        pow(v.abs(), exp)
    };
    if odd {
        a * sign(v)
    } else {
        a
    }
}

fn factor_column(f: &Factor, cols: &[&[f64]], n: usize, out: &mut [f64]) {
    let atom;
    let base: &[f64] = match &f.base {
        Base::Var(i) => &cols[*i][..n],
        Base::Atom(e, _) => {
            atom = e.eval_columns(cols, n);
            &atom
        }
    };
    if f.exp == 1.0 && f.odd {
        out.iter_mut().zip(base).for_each(|(o, v)| *o *= v);
    } else {
        out.iter_mut().zip(base).for_each(|(o, v)| *o *= factor_value(*v, f.exp, f.odd));
    }
}

fn monomial_column(m: &Monomial, cols: &[&[f64]], n: usize) -> Vec<f64> {
    let mut out = vec![1.0; n];
    for f in &m.factors {
        factor_column(f, cols, n, &mut out);
    }
    out
}

/// Least-squares coefficients for the monomials of `poly`, dropping terms
/// whose contribution is negligible. Returns the fitted polynomial and its
/// normalized MSE.
fn fit_linear(poly: &Poly, cols: &[&[f64]], y: &[f64], norm: f64) -> Option<(Poly, f64)> {
    let n = y.len();
    let mons = poly.monomials();
    let columns: Vec<Vec<f64>> = mons.iter().map(|m| monomial_column(m, cols, n)).collect();
    if columns.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return None;
    }
    let refs: Vec<&[f64]> = columns.iter().map(Vec::as_slice).collect();
    let coefs = lstsq_equilibrated(&refs, y, RIDGE)?;
    let ry = rms(y);
    let mut pred = vec![0.0; n];
    let mut terms = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let c = coefs[j];
        if c == 0.0 || c.abs() * rms(col) <= 1e-10 * ry {
            continue;
        }
        pred.iter_mut().zip(col).for_each(|(p, v)| *p += c * v);
        terms.push((c, mons[j].clone()));
    }
    let mse = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
    let nmse = mse / norm;
    nmse.is_finite().then_some((Poly { terms }, nmse))
}

fn score(raw: &Expr, data: &Data, cfg: &SRConfig) -> Option<Scored> {
    let poly = to_poly(raw);
    let (poly, nmse) = fit_linear(&poly, &data.col_refs(), &data.y, data.norm)?;
    let expr = poly.to_expr();
    let complexity = expr.complexity();
    if complexity > cfg.max_complexity {
        return None;
    }
    Some(Scored {
        expr,
        poly,
        nmse,
        complexity,
        fitness: nmse + cfg.parsimony * complexity as f64,
    })
}

fn structure_key(poly: &Poly) -> String {
    poly.monomials().iter().map(|m| m.key()).collect::<Vec<_>>().join("+")
}

/// Nelder-Mead over the exponents of variable factors, with the linear
/// coefficients re-solved at every point. Exponents that end up near an
/// integer are snapped to it when that does not hurt the fitness.
fn refine(s: &Scored, data: &Data, cfg: &SRConfig, passes: usize) -> Scored {
    let slots: Vec<(usize, usize)> = s
        .poly
        .terms
        .iter()
        .enumerate()
        .flat_map(|(t, (_, m))| {
            m.factors
                .iter()
                .enumerate()
                .filter(|(_, f)| matches!(f.base, Base::Var(_)) && f.exp != 0.0)
                .map(move |(k, _)| (t, k))
        })
        .collect();
    if slots.is_empty() || cfg.refine_iters == 0 {
        return s.clone();
    }
    let with = |x: &[f64]| -> Expr {
        let mut p = s.poly.clone();
        for (&(t, k), &e) in slots.iter().zip(x) {
            p.terms[t].1.factors[k].exp = e;
        }
        p.to_expr()
    };
    let mut objective = |x: &[f64]| score(&with(x), data, cfg).map_or(f64::INFINITY, |r| r.nmse);
    let x0: Vec<f64> = slots.iter().map(|&(t, k)| s.poly.terms[t].1.factors[k].exp).collect();
    let step = vec![0.05; x0.len()];
    let nm = NelderMead {
        max_iters: cfg.refine_iters,
        f_tol: 1e-14,
        x_tol: 1e-9,
    };
    let mut m = nelder_mead(&mut objective, &x0, &step, nm);
    // Restarting from a fresh, smaller simplex undoes premature collapse.
    for _ in 1..passes {
        let next = nelder_mead(&mut objective, &m.x, &vec![0.01; x0.len()], nm);
        let gained = next.f < m.f * (1.0 - 1e-3);
        m = next;
        if !gained {
            break;
        }
    }
    let mut x = m.x;
    let mut best = match score(&with(&x), data, cfg) {
        Some(r) if r.nmse < s.nmse => r,
        _ => s.clone(),
    };
    for k in 0..x.len() {
        let snapped = x[k].round();
        if snapped == x[k] || (snapped - x[k]).abs() > 0.05 || snapped == 0.0 {
            continue;
        }
        let mut trial = x.clone();
        trial[k] = snapped;
        if let Some(r) = score(&with(&trial), data, cfg) {
            if r.fitness <= best.fitness {
                best = r;
                x = trial;
            }
        }
    }
    best
}

/// Random tree and variation operators.
struct Breeder {
    n_vars: usize,
    unary: Vec<UnaryOp>,
    binary: Vec<BinaryOp>,
    pow: bool,
    max_raw: usize,
}

const EXPONENT_GRID: [f64; 5] = [0.5, 1.5, 2.0, 2.5, 3.0];

impl Breeder {
    fn new(n_vars: usize, cfg: &SRConfig) -> Self {
        let mut unary = Vec::new();
        let mut binary = Vec::new();
        for op in &cfg.alphabet {
            match op {
                Op::Neg => unary.push(UnaryOp::Neg),
                Op::Abs => unary.push(UnaryOp::Abs),
                Op::Sign => unary.push(UnaryOp::Sign),
                Op::Sin => unary.push(UnaryOp::Sin),
                Op::Cos => unary.push(UnaryOp::Cos),
                Op::Exp => unary.push(UnaryOp::Exp),
                Op::Add => binary.push(BinaryOp::Add),
                Op::Sub => binary.push(BinaryOp::Sub),
                Op::Mul => binary.push(BinaryOp::Mul),
                Op::Div => binary.push(BinaryOp::Div),
                Op::Pow => {}
            }
        }
        Self {
            n_vars,
            unary,
            binary,
            pow: cfg.alphabet.contains(&Op::Pow),
            max_raw: 2 * cfg.max_complexity,
        }
    }

    fn exponent(&self, rng: &mut ChaCha8Rng) -> f64 {
        if rng.gen_bool(0.5) {
            *EXPONENT_GRID.choose(rng).expect("non-empty grid")
        } else {
            rng.gen_range(0.25..4.0)
        }
    }

    fn terminal(&self, rng: &mut ChaCha8Rng) -> Expr {
        if rng.gen_bool(0.85) {
            Expr::Var(rng.gen_range(0..self.n_vars))
        } else {
            Expr::Const((rng.gen_range(-2.0f64..2.0) * 10.0).round() / 10.0)
        }
    }

    fn tree(&self, rng: &mut ChaCha8Rng, depth: usize, full: bool) -> Expr {
        if depth <= 1 || (!full && rng.gen_bool(0.3)) {
            return self.terminal(rng);
        }
        let r: f64 = rng.gen();
        if self.pow && r < 0.2 {
            let base = self.tree(rng, depth.saturating_sub(2).max(1), full);
            Expr::pow(Expr::abs(base), self.exponent(rng))
        } else if !self.unary.is_empty() && r < 0.45 {
            let op = *self.unary.choose(rng).expect("non-empty");
            Expr::unary(op, self.tree(rng, depth - 1, full))
        } else {
            let op = *self.binary.choose(rng).expect("validated alphabet");
            Expr::binary(op, self.tree(rng, depth - 1, full), self.tree(rng, depth - 1, full))
        }
    }

    fn crossover(&self, rng: &mut ChaCha8Rng, a: &Expr, b: &Expr) -> Expr {
        for _ in 0..5 {
            let mut child = a.clone();
            let i = rng.gen_range(0..child.size());
            let j = rng.gen_range(0..b.size());
            *child.node_mut(i) = b.node(j).clone();
            if child.complexity() <= self.max_raw {
                return child;
            }
        }
        a.clone()
    }

    fn mutate(&self, rng: &mut ChaCha8Rng, e: &Expr) -> Expr {
        let child = match rng.gen_range(0..5) {
            0 => self.subtree(rng, e),
            1 => self.point(rng, e),
            2 => self.jitter(rng, e),
            3 => {
                let term = self.tree(rng, 3, false);
                if rng.gen_bool(0.5) {
                    Expr::add(e.clone(), term)
                } else {
                    Expr::sub(e.clone(), term)
                }
            }
            _ => {
                let mut p = to_poly(e);
                if p.terms.len() > 1 {
                    let k = rng.gen_range(0..p.terms.len());
                    p.terms.remove(k);
                    p.to_expr()
                } else {
                    self.subtree(rng, e)
                }
            }
        };
        if child.complexity() <= self.max_raw {
            child
        } else {
            e.clone()
        }
    }

    fn subtree(&self, rng: &mut ChaCha8Rng, e: &Expr) -> Expr {
        let mut child = e.clone();
        let i = rng.gen_range(0..child.size());
        *child.node_mut(i) = self.tree(rng, 3, false);
        child
    }

    fn point(&self, rng: &mut ChaCha8Rng, e: &Expr) -> Expr {
        let mut child = e.clone();
        let i = rng.gen_range(0..child.size());
        let replacement = match child.node(i) {
            Expr::Unary(_, a) if !self.unary.is_empty() => {
                Expr::unary(*self.unary.choose(rng).expect("non-empty"), (**a).clone())
            }
            Expr::Binary(_, a, b) => {
                Expr::binary(*self.binary.choose(rng).expect("non-empty"), (**a).clone(), (**b).clone())
            }
            Expr::Pow(a, _) => Expr::pow((**a).clone(), self.exponent(rng)),
            _ => self.terminal(rng),
        };
        *child.node_mut(i) = replacement;
        child
    }

    /// Perturbs one constant or exponent; exponents move by N(0, 0.25)
    /// clamped to [0.25, 4].
    fn jitter(&self, rng: &mut ChaCha8Rng, e: &Expr) -> Expr {
        let mut child = e.clone();
        let mut slots = Vec::new();
        for i in 0..child.size() {
            if matches!(child.node(i), Expr::Const(_) | Expr::Pow(..)) {
                slots.push(i);
            }
        }
        let Some(&i) = slots.choose(rng) else {
            return self.point(rng, e);
        };
        let n = Normal::new(0.0, 1.0).expect("valid normal");
        match child.node_mut(i) {
            Expr::Const(c) => *c = *c * (1.0 + 0.1 * n.sample(rng)) + 0.01 * n.sample(rng),
            Expr::Pow(_, p) => *p = (*p + 0.25 * n.sample(rng)).clamp(0.25, 4.0),
            _ => unreachable!("slot holds a constant"),
        }
        child
    }
}

struct Search<'a> {
    data: &'a Data,
    cfg: &'a SRConfig,
    cache: HashMap<String, Option<Scored>>,
    refined: HashMap<String, Scored>,
}

impl Search<'_> {
    /// Scores `raws` in parallel; results follow input order.
    fn evaluate(&mut self, raws: Vec<Expr>) -> Vec<Scored> {
        if self.cache.len() > CACHE_LIMIT {
            self.cache.clear();
        }
        let keys: Vec<String> = raws.iter().map(|e| structure_key(&to_poly(e))).collect();
        let mut todo: Vec<(String, &Expr)> = Vec::new();
        for (k, e) in keys.iter().zip(&raws) {
            if !self.cache.contains_key(k) && !todo.iter().any(|(t, _)| t == k) {
                todo.push((k.clone(), e));
            }
        }
        let (data, cfg) = (self.data, self.cfg);
        let results: Vec<Option<Scored>> = todo.par_iter().map(|(_, e)| score(e, data, cfg)).collect();
        for ((k, _), r) in todo.into_iter().zip(results) {
            self.cache.insert(k, r);
        }
        keys.iter().filter_map(|k| self.cache[k].clone()).collect()
    }

    /// Refines the top decile by fitness.
    fn refine_top(&mut self, pop: &mut Vec<Scored>) {
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| pop[a].fitness.total_cmp(&pop[b].fitness).then(a.cmp(&b)));
        order.truncate((pop.len() / 10).max(1));
        let keys: Vec<String> = order.iter().map(|&i| structure_key(&pop[i].poly)).collect();
        let mut todo: Vec<usize> = Vec::new();
        for (slot, k) in keys.iter().enumerate() {
            if !self.refined.contains_key(k) && !todo.iter().any(|&t| keys[t] == *k) {
                todo.push(slot);
            }
        }
        let (data, cfg) = (self.data, self.cfg);
        let results: Vec<Scored> = todo.par_iter().map(|&slot| refine(&pop[order[slot]], data, cfg, 2)).collect();
        for (slot, r) in todo.into_iter().zip(results) {
            self.refined.insert(keys[slot].clone(), r);
        }
        // A refined copy that fits better but costs more complexity joins
        // the population instead of replacing its parent.
        let mut extra = Vec::new();
        for (slot, &i) in order.iter().enumerate() {
            let r = &self.refined[&keys[slot]];
            if r.fitness < pop[i].fitness {
                pop[i] = r.clone();
            } else if r.nmse < pop[i].nmse {
                extra.push(r.clone());
            }
        }
        pop.extend(extra);
    }
}

fn tournament<'p>(rng: &mut ChaCha8Rng, pop: &'p [Scored], size: usize) -> &'p Scored {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..size {
        let c = rng.gen_range(0..pop.len());
        if pop[c].fitness < pop[best].fitness || (pop[c].fitness == pop[best].fitness && c < best) {
            best = c;
        }
    }
    &pop[best]
}

/// Best individual per complexity.
struct Archive {
    slots: Vec<Option<Scored>>,
}

impl Archive {
    fn update(&mut self, pop: &[Scored]) -> bool {
        let mut changed = false;
        for s in pop {
            let slot = &mut self.slots[s.complexity];
            if slot.as_ref().map_or(true, |b| s.nmse < b.nmse) {
                *slot = Some(s.clone());
                changed = true;
            }
        }
        changed
    }

    fn front(&self) -> Vec<&Scored> {
        let mut out: Vec<&Scored> = Vec::new();
        for s in self.slots.iter().flatten() {
            if out.last().map_or(true, |b| s.nmse < b.nmse) {
                out.push(s);
            }
        }
        out
    }
}

fn subsample(n: usize, max_rows: usize) -> Vec<usize> {
    if n <= max_rows {
        (0..n).collect()
    } else {
        (0..max_rows).map(|i| i * n / max_rows).collect()
    }
}

/// Searches for expressions of `features` that reproduce `target`.
///
/// Features and target are divided by their RMS before the search; the
/// returned expressions are in the original units, with linear
/// coefficients refit on every row.
pub fn discover(target: &[f64], features: &[(&str, &[f64])], cfg: &SRConfig) -> Result<ParetoFront> {
    cfg.validate()?;
    let n = target.len();
    if features.is_empty() {
        return Err(Error::Config("at least one feature is required".into()));
    }
    if features.iter().any(|(_, c)| c.len() != n) {
        return Err(Error::Config("features and target must have equal length".into()));
    }
    if n < 10 * cfg.max_complexity {
        return Err(Error::Config(format!(
            "{n} samples is fewer than 10 x max_complexity ({})",
            cfg.max_complexity
        )));
    }
    if target.iter().chain(features.iter().flat_map(|(_, c)| c.iter())).any(|v| !v.is_finite()) {
        return Err(Error::Config("features and target must be finite".into()));
    }
    let vars = VarSet::new(&features.iter().map(|(name, _)| *name).collect::<Vec<_>>());
    let scale = |c: &[f64]| {
        let s = rms(c);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    };
    let x_scales: Vec<f64> = features.iter().map(|(_, c)| scale(c)).collect();
    let y_scale = scale(target);
    let rows = subsample(n, cfg.max_rows);
    let cols: Vec<Vec<f64>> = features
        .iter()
        .zip(&x_scales)
        .map(|((_, c), s)| rows.iter().map(|&i| c[i] / s).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|&i| target[i] / y_scale).collect();
    let data = Data::new(cols, y);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let breeder = Breeder::new(features.len(), cfg);
    let mut search = Search {
        data: &data,
        cfg,
        cache: HashMap::new(),
        refined: HashMap::new(),
    };
    let init: Vec<Expr> = (0..cfg.population)
        .map(|i| breeder.tree(&mut rng, 2 + i % 4, i % 2 == 0))
        .collect();
    let mut pop = search.evaluate(init);
    if pop.is_empty() {
        return Err(Error::NoViableExpression);
    }
    let mut archive = Archive {
        slots: vec![None; cfg.max_complexity + 1],
    };
    archive.update(&pop);
    let mut stalled = 0;
    for gen in 0..cfg.generations {
        search.refine_top(&mut pop);
        if archive.update(&pop) {
            stalled = 0;
        } else {
            stalled += 1;
        }
        log::debug!(
            "generation {gen}: front {:?}",
            archive.front().iter().map(|s| (s.complexity, s.nmse)).collect::<Vec<_>>()
        );
        if cfg.stall_generations.is_some_and(|s| stalled >= s) || gen + 1 == cfg.generations {
            break;
        }
        let elites: Vec<Scored> = archive.front().into_iter().cloned().collect();
        let mut children = Vec::with_capacity(cfg.population);
        while elites.len() + children.len() < cfg.population {
            let r: f64 = rng.gen();
            let child = if r < cfg.p_crossover {
                let a = tournament(&mut rng, &pop, cfg.tournament).expr.clone();
                let b = tournament(&mut rng, &pop, cfg.tournament).expr.clone();
                breeder.crossover(&mut rng, &a, &b)
            } else if r < cfg.p_crossover + cfg.p_mutation {
                let a = tournament(&mut rng, &pop, cfg.tournament).expr.clone();
                breeder.mutate(&mut rng, &a)
            } else {
                tournament(&mut rng, &pop, cfg.tournament).expr.clone()
            };
            children.push(child);
        }
        let mut next = elites;
        next.extend(search.evaluate(children));
        pop = next;
    }

    // Polish the exponents of the front on every row before leaving the
    // standardized space.
    let full = Data::new(
        features.iter().zip(&x_scales).map(|((_, c), s)| c.iter().map(|v| v / s).collect()).collect(),
        target.iter().map(|v| v / y_scale).collect(),
    );
    let polish = SRConfig {
        refine_iters: 4 * cfg.refine_iters,
        ..cfg.clone()
    };
    let front: Vec<Scored> = archive
        .front()
        .into_par_iter()
        .map(|s| match score(&s.expr, &full, cfg) {
            Some(base) => {
                let r = refine(&base, &full, &polish, 10);
                if r.complexity == base.complexity {
                    r
                } else {
                    base
                }
            }
            None => s.clone(),
        })
        .collect();

    let full_cols: Vec<&[f64]> = features.iter().map(|(_, c)| *c).collect();
    let full_norm = normalizer(target);
    let members = front
        .into_iter()
        .map(|s| {
            let physical = canonicalize(&Expr::mul(
                Expr::Const(y_scale),
                s.expr.substitute(&|i| Expr::mul(Expr::Const(1.0 / x_scales[i]), Expr::Var(i))),
            ));
            let (expr, loss) = match fit_linear(&to_poly(&physical), &full_cols, target, full_norm) {
                Some((p, loss)) => (p.to_expr(), loss),
                None => {
                    let pred = physical.eval_columns(&full_cols, n);
                    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n as f64;
                    (physical, mse / full_norm)
                }
            };
            FrontMember {
                complexity: expr.complexity(),
                loss,
                expr,
            }
        })
        .collect();
    let front = ParetoFront::from_candidates(vars, members);
    if front.is_empty() {
        return Err(Error::NoViableExpression);
    }
    Ok(front)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_coefficients() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.1).sin()).collect();
        let b: Vec<f64> = (0..100).map(|i| (i as f64 * 0.07).cos()).collect();
        let y: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 2.0 * a - 3.0 * a * b.abs()).collect();
        let e = Expr::add(Expr::var(0), Expr::mul(Expr::var(0), Expr::abs(Expr::var(1))));
        let (p, nmse) = fit_linear(&to_poly(&e), &[&a, &b], &y, normalizer(&y)).unwrap();
        assert!(nmse < 1e-20);
        let c: Vec<f64> = p.terms.iter().map(|t| t.0).collect();
        assert!((c[0] - 2.0).abs() < 1e-9 && (c[1] + 3.0).abs() < 1e-9, "{c:?}");
    }

    #[test]
    fn constant_target_gives_constant_member() {
        let x: Vec<f64> = (0..400).map(|i| i as f64 * 0.01).collect();
        let y = vec![2.5; 400];
        let cfg = SRConfig {
            population: 64,
            generations: 5,
            ..Default::default()
        };
        let front = discover(&y, &[("x", &x)], &cfg).unwrap();
        let first = &front.members[0];
        assert_eq!(first.complexity, 1);
        assert!(first.loss < 1e-20);
        assert!(matches!(first.expr, Expr::Const(c) if (c - 2.5).abs() < 1e-9), "{:?}", first.expr);
    }

    #[test]
    fn too_few_samples_is_rejected() {
        let x = vec![1.0; 20];
        assert!(matches!(discover(&x, &[("x", &x)], &SRConfig::default()), Err(Error::Config(_))));
    }
}
