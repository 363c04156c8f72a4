//! Replica-indexed polynomials of spin operators and their Duhamel
//! expectations. All replicas share one disorder realization, so a monomial
//! factorizes into per-replica Duhamel expectations over the same spectrum.
//!
//! Two evaluation paths exist. [`eval_polynomial`] works on fully expanded
//! [`ReplicaMonomial`]s. [`Evaluator`] works on products of overlap, field and
//! spin atoms and contracts the range sums without expanding them.

use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, AddAssign, Mul};
use std::rc::Rc;

use crate::divdiff::exp_divdiff;
use crate::error::{Error, Result};
use crate::lattice::RangeFamily;
use crate::pauli::{Axis, CMatrix, SpinOperator, C64};
use crate::spectral::{duhamel_eig, SpectralData, DIM_CAP_K4, MAX_DUHAMEL_ORDER};

/// Upper bound on label assignments enumerated by the generic contraction.
const ENUMERATION_CAP: usize = 2_000_000;
/// Below this gap the 4-point divided difference is not formed from a
/// difference of 3-point tables.
const F4_SPLIT: f64 = 0.05;

/// `coeff · Π (σ on replica a)`. Every factor carries its own time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaMonomial {
    pub coeff: f64,
    pub factors: Vec<(usize, SpinOperator)>,
}

impl ReplicaMonomial {
    pub fn constant(c: f64) -> Self {
        Self { coeff: c, factors: vec![] }
    }

    pub fn replica_count(&self) -> usize {
        self.factors.iter().map(|f| f.0).max().unwrap_or(0)
    }

    pub fn times(&self, other: &ReplicaMonomial) -> ReplicaMonomial {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().cloned());
        ReplicaMonomial { coeff: self.coeff * other.coeff, factors }
    }

    /// Factors grouped by replica, in ascending replica order.
    pub fn by_replica(&self) -> BTreeMap<usize, Vec<&SpinOperator>> {
        let mut g: BTreeMap<usize, Vec<&SpinOperator>> = BTreeMap::new();
        for (a, op) in &self.factors {
            g.entry(*a).or_default().push(op);
        }
        g
    }

    /// Relabel replicas through `perm` (`perm[a-1]` is the new index of `a`).
    pub fn relabel(&self, perm: &[usize]) -> ReplicaMonomial {
        ReplicaMonomial {
            coeff: self.coeff,
            factors: self.factors.iter().map(|(a, op)| (perm[a - 1], op.clone())).collect(),
        }
    }
}

/// Product of two expanded polynomials.
pub fn multiply(p: &[ReplicaMonomial], q: &[ReplicaMonomial]) -> Vec<ReplicaMonomial> {
    p.iter().flat_map(|a| q.iter().map(move |b| a.times(b))).collect()
}

/// `R(σ_a, σ_b) = (1/|C|) Σ_X σ^μ_{X,a} σ^μ_{X,b}`
#[derive(Debug, Clone)]
pub struct OverlapObservable {
    pub axis: Axis,
    pub a: usize,
    pub b: usize,
    pub family: RangeFamily,
    pub n_sites: usize,
}

impl OverlapObservable {
    pub fn expansion(&self) -> Result<Vec<ReplicaMonomial>> {
        check_replica(self.a)?;
        check_replica(self.b)?;
        let c = 1.0 / self.family.len() as f64;
        self.family
            .ranges
            .iter()
            .map(|x| {
                let op = SpinOperator::new(self.axis, x, self.n_sites)?;
                Ok(ReplicaMonomial { coeff: c, factors: vec![(self.a, op.clone()), (self.b, op)] })
            })
            .collect()
    }
}

/// `h(σ^μ_a, g^μ) = (1/|C|) Σ_X g_X σ^μ_{X,a}`
#[derive(Debug, Clone)]
pub struct HFieldObservable {
    pub axis: Axis,
    pub replica: usize,
    pub family: RangeFamily,
    /// `g^μ_X` in family order.
    pub couplings: Vec<f64>,
    pub n_sites: usize,
}

impl HFieldObservable {
    pub fn expansion(&self) -> Result<Vec<ReplicaMonomial>> {
        check_replica(self.replica)?;
        if self.couplings.len() != self.family.len() {
            return Err(Error::Dimension { expected: self.family.len(), got: self.couplings.len() });
        }
        let c = 1.0 / self.family.len() as f64;
        self.family
            .ranges
            .iter()
            .zip(&self.couplings)
            .map(|(x, &g)| {
                let op = SpinOperator::new(self.axis, x, self.n_sites)?;
                Ok(ReplicaMonomial { coeff: c * g, factors: vec![(self.replica, op)] })
            })
            .collect()
    }
}

fn check_replica(a: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Argument("replica indices start at 1".into()));
    }
    Ok(())
}

/// `coeff · Π_a (ops of replica a)_D`
pub fn eval_replica_duhamel(sd: &SpectralData, m: &ReplicaMonomial) -> Result<f64> {
    let mut cache = HashMap::new();
    eval_monomial_cached(sd, m, &mut cache)
}

fn eval_monomial_cached(
    sd: &SpectralData,
    m: &ReplicaMonomial,
    cache: &mut HashMap<SpinOperator, CMatrix>,
) -> Result<f64> {
    let mut value = m.coeff;
    for (a, ops) in m.by_replica() {
        check_replica(a)?;
        if ops.len() > MAX_DUHAMEL_ORDER {
            return Err(Error::Order { order: ops.len(), max: MAX_DUHAMEL_ORDER });
        }
        for op in &ops {
            if op.dim() != sd.dim() {
                return Err(Error::Dimension { expected: sd.dim(), got: op.dim() });
            }
            if !cache.contains_key(*op) {
                cache.insert((*op).clone(), sd.spin_to_eigenbasis(op));
            }
        }
        let mats: Vec<&CMatrix> = ops.iter().map(|op| &cache[*op]).collect();
        value *= duhamel_eig(sd, &mats)?.re;
    }
    Ok(value)
}

/// Sum of monomial values.
pub fn eval_polynomial(sd: &SpectralData, monomials: &[ReplicaMonomial]) -> Result<f64> {
    let mut cache = HashMap::new();
    let mut s = 0.0;
    for m in monomials {
        s += eval_monomial_cached(sd, m, &mut cache)?;
    }
    Ok(s)
}

/// `(1/|C|) Σ_X g_X · (σ_{X,a} · companion)_D`
pub fn eval_h_field(sd: &SpectralData, h: &HFieldObservable, companion: &[ReplicaMonomial]) -> Result<f64> {
    let hx = h.expansion()?;
    if companion.is_empty() {
        return eval_polynomial(sd, &hx);
    }
    eval_polynomial(sd, &multiply(&hx, companion))
}

// ---------------------------------------------------------------------------
// Structured evaluation

/// Building block of a product inside one Duhamel block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    /// `R(a, b)` over the context family and axis.
    Overlap { a: usize, b: usize },
    /// `h(a)` over the context family and axis.
    Field { a: usize },
    /// `σ^axis_X` on replica `a`, `X` the `range`-th member of the family.
    Spin { axis: Axis, range: usize, a: usize },
}

impl Atom {
    pub fn replicas(&self) -> Vec<usize> {
        match *self {
            Atom::Overlap { a, b } => vec![a, b],
            Atom::Field { a } | Atom::Spin { a, .. } => vec![a],
        }
    }
}

/// `coeff · Π atoms`
#[derive(Debug, Clone, PartialEq)]
pub struct AtomTerm {
    pub coeff: f64,
    pub atoms: Vec<Atom>,
}

impl AtomTerm {
    pub fn new(coeff: f64, atoms: Vec<Atom>) -> Self {
        Self { coeff, atoms }
    }

    pub fn times(&self, other: &AtomTerm) -> AtomTerm {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        AtomTerm { coeff: self.coeff * other.coeff, atoms }
    }

    /// Operator count per replica.
    pub fn replica_degrees(&self) -> BTreeMap<usize, usize> {
        let mut d = BTreeMap::new();
        for at in &self.atoms {
            for a in at.replicas() {
                *d.entry(a).or_insert(0) += 1;
            }
        }
        d
    }
}

/// Family, axis and couplings against which atoms are interpreted.
#[derive(Debug, Clone)]
pub struct ReplicaContext {
    pub family: RangeFamily,
    pub axis: Axis,
    /// `g^axis_X` in family order; used by `h`.
    pub field: Vec<f64>,
    pub n_sites: usize,
}

impl ReplicaContext {
    /// Flat expansion of one atom product.
    pub fn expand(&self, term: &AtomTerm) -> Result<Vec<ReplicaMonomial>> {
        let mut acc = vec![ReplicaMonomial::constant(term.coeff)];
        for at in &term.atoms {
            let part = match *at {
                Atom::Overlap { a, b } => OverlapObservable {
                    axis: self.axis,
                    a,
                    b,
                    family: self.family.clone(),
                    n_sites: self.n_sites,
                }
                .expansion()?,
                Atom::Field { a } => HFieldObservable {
                    axis: self.axis,
                    replica: a,
                    family: self.family.clone(),
                    couplings: self.field.clone(),
                    n_sites: self.n_sites,
                }
                .expansion()?,
                Atom::Spin { axis, range, a } => {
                    check_replica(a)?;
                    let x = self.family.ranges.get(range).ok_or_else(|| {
                        Error::Context(format!("range index {} outside family of {}", range + 1, self.family.len()))
                    })?;
                    vec![ReplicaMonomial { coeff: 1.0, factors: vec![(a, SpinOperator::new(axis, x, self.n_sites)?)] }]
                }
            };
            acc = multiply(&acc, &part);
        }
        Ok(acc)
    }
}

/// Range operators of one axis in the eigenbasis, with their Gibbs values.
struct AxisOps {
    mats: Vec<CMatrix>,
    expect: Vec<f64>,
    real: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum OpKey {
    Spin(Axis, usize),
    Mat(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Label(usize),
    Op(OpKey),
}

/// Per-sample evaluator: caches eigenbasis operators across terms.
pub struct Evaluator<'a> {
    sd: &'a SpectralData,
    ctx: &'a ReplicaContext,
    axes: HashMap<Axis, Rc<AxisOps>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(sd: &'a SpectralData, ctx: &'a ReplicaContext) -> Result<Self> {
        if ctx.n_sites >= usize::BITS as usize || 1usize << ctx.n_sites != sd.dim() {
            return Err(Error::Dimension { expected: sd.dim(), got: 1usize << ctx.n_sites.min(62) });
        }
        if ctx.field.len() != ctx.family.len() {
            return Err(Error::Dimension { expected: ctx.family.len(), got: ctx.field.len() });
        }
        if ctx.family.is_empty() {
            return Err(Error::Context("empty range family".into()));
        }
        Ok(Self { sd, ctx, axes: HashMap::new() })
    }

    pub fn spectral(&self) -> &SpectralData {
        self.sd
    }

    fn axis_ops(&mut self, mu: Axis) -> Result<Rc<AxisOps>> {
        if let Some(a) = self.axes.get(&mu) {
            return Ok(a.clone());
        }
        let mut mats = Vec::with_capacity(self.ctx.family.len());
        for x in &self.ctx.family.ranges {
            mats.push(self.sd.spin_to_eigenbasis(&SpinOperator::new(mu, x, self.ctx.n_sites)?));
        }
        let expect = mats.iter().map(|m| self.sd.expect_eig(m)).collect();
        let real = mats.iter().all(|m| m.iter().all(|z| z.im == 0.0));
        let ops = Rc::new(AxisOps { mats, expect, real });
        self.axes.insert(mu, ops.clone());
        Ok(ops)
    }

    /// `⟨σ^μ_X⟩` for every `X` in the family.
    pub fn expectations(&mut self, mu: Axis) -> Result<Vec<f64>> {
        Ok(self.axis_ops(mu)?.expect.clone())
    }

    /// `Σ_i coeff_i (Π atoms_i)_D`
    pub fn eval(&mut self, terms: &[AtomTerm]) -> Result<f64> {
        let mut s = 0.0;
        for t in terms {
            s += self.eval_term(t)?;
        }
        Ok(s)
    }

    pub fn eval_term(&mut self, term: &AtomTerm) -> Result<f64> {
        if term.coeff == 0.0 {
            return Ok(0.0);
        }
        for (a, k) in term.replica_degrees() {
            check_replica(a)?;
            if k > MAX_DUHAMEL_ORDER {
                return Err(Error::Order { order: k, max: MAX_DUHAMEL_ORDER });
            }
        }
        let ctx_axis = self.axis_ops(self.ctx.axis)?;
        let nc = self.ctx.family.len();
        let inv = 1.0 / nc as f64;

        let mut labels: Vec<Option<Vec<f64>>> = Vec::new();
        let mut reps: BTreeMap<usize, Vec<Slot>> = BTreeMap::new();
        for at in &term.atoms {
            match *at {
                Atom::Overlap { a, b } => {
                    labels.push(Some(vec![inv; nc]));
                    let l = labels.len() - 1;
                    reps.entry(a).or_default().push(Slot::Label(l));
                    reps.entry(b).or_default().push(Slot::Label(l));
                }
                Atom::Field { a } => {
                    labels.push(Some(self.ctx.field.iter().map(|g| g * inv).collect()));
                    reps.entry(a).or_default().push(Slot::Label(labels.len() - 1));
                }
                Atom::Spin { axis, range, a } => {
                    if range >= nc {
                        return Err(Error::Context(format!("range index {} outside family of {nc}", range + 1)));
                    }
                    self.axis_ops(axis)?;
                    reps.entry(a).or_default().push(Slot::Op(OpKey::Spin(axis, range)));
                }
            }
        }

        let mut scalar = term.coeff;
        let mut mats: Vec<CMatrix> = Vec::new();
        loop {
            let mut changed = false;
            let singles: Vec<usize> = reps.iter().filter(|(_, s)| s.len() == 1).map(|(a, _)| *a).collect();
            for a in singles {
                let slot = reps.remove(&a).unwrap()[0];
                match slot {
                    Slot::Op(key) => scalar *= self.op_expect(key, &mats),
                    Slot::Label(l) => {
                        let w = labels[l].as_mut().unwrap();
                        for (wx, e) in w.iter_mut().zip(&ctx_axis.expect) {
                            *wx *= e;
                        }
                    }
                }
                changed = true;
            }
            reps.retain(|_, s| !s.is_empty());
            for l in 0..labels.len() {
                if labels[l].is_none() {
                    continue;
                }
                let uses: Vec<(usize, usize)> = reps
                    .iter()
                    .flat_map(|(a, s)| {
                        s.iter().enumerate().filter(|(_, sl)| **sl == Slot::Label(l)).map(move |(i, _)| (*a, i))
                    })
                    .collect();
                match uses.len() {
                    0 => {
                        scalar *= labels[l].take().unwrap().iter().sum::<f64>();
                        changed = true;
                    }
                    1 => {
                        let w = labels[l].take().unwrap();
                        mats.push(weighted_sum(&ctx_axis.mats, &w));
                        let (a, i) = uses[0];
                        reps.get_mut(&a).unwrap()[i] = Slot::Op(OpKey::Mat(mats.len() - 1));
                        changed = true;
                    }
                    _ => {}
                }
            }
            if !changed || scalar == 0.0 {
                break;
            }
        }
        if scalar == 0.0 {
            return Ok(0.0);
        }

        for (rs, ls) in components(&reps, labels.len()) {
            let v = self.eval_component(&rs, &ls, &reps, &labels, &mats, &ctx_axis)?;
            scalar *= v;
            if scalar == 0.0 {
                break;
            }
        }
        Ok(scalar)
    }

    fn op_matrix<'m>(&'m self, key: OpKey, mats: &'m [CMatrix]) -> &'m CMatrix {
        match key {
            OpKey::Spin(axis, r) => &self.axes[&axis].mats[r],
            OpKey::Mat(m) => &mats[m],
        }
    }

    fn op_expect(&self, key: OpKey, mats: &[CMatrix]) -> f64 {
        match key {
            OpKey::Spin(axis, r) => self.axes[&axis].expect[r],
            OpKey::Mat(m) => self.sd.expect_eig(&mats[m]),
        }
    }

    fn eval_component(
        &self,
        rs: &[usize],
        ls: &[usize],
        reps: &BTreeMap<usize, Vec<Slot>>,
        labels: &[Option<Vec<f64>>],
        mats: &[CMatrix],
        axis: &AxisOps,
    ) -> Result<f64> {
        let sd = self.sd;
        if ls.is_empty() {
            let slots = &reps[&rs[0]];
            let ops: Vec<&CMatrix> = slots
                .iter()
                .map(|s| match s {
                    Slot::Op(k) => self.op_matrix(*k, mats),
                    Slot::Label(_) => unreachable!(),
                })
                .collect();
            return Ok(duhamel_eig(sd, &ops)?.re);
        }
        if rs.len() == 1 {
            let slots = &reps[&rs[0]];
            let fixed: Vec<&CMatrix> = slots
                .iter()
                .filter_map(|s| match s {
                    Slot::Op(k) => Some(self.op_matrix(*k, mats)),
                    Slot::Label(_) => None,
                })
                .collect();
            let w = |l: usize| labels[l].as_deref().unwrap();
            match (ls, fixed.as_slice()) {
                ([l], []) if slots.len() == 2 => return Ok(pair2(sd, &axis.mats, w(*l))),
                ([l], [m]) if slots.len() == 3 => return Ok(pair3(sd, &axis.mats, w(*l), m)),
                ([l1, l2], []) if slots.len() == 4 && sd.dim() <= DIM_CAP_K4 => {
                    return Ok(pair_pair(sd, &axis.mats, axis.real, w(*l1), w(*l2)));
                }
                _ => {}
            }
        }
        self.enumerate(rs, ls, reps, labels, mats)
    }

    fn enumerate(
        &self,
        rs: &[usize],
        ls: &[usize],
        reps: &BTreeMap<usize, Vec<Slot>>,
        labels: &[Option<Vec<f64>>],
        mats: &[CMatrix],
    ) -> Result<f64> {
        let nc = self.ctx.family.len();
        let total = (nc as f64).powi(ls.len() as i32);
        if total > ENUMERATION_CAP as f64 {
            return Err(Error::Size { what: "label assignments", value: total as usize, cap: ENUMERATION_CAP });
        }
        let ctx_axis = self.ctx.axis;
        let mut cache: HashMap<Vec<OpKey>, f64> = HashMap::new();
        let mut assign = vec![0usize; ls.len()];
        let mut sum = 0.0;
        'outer: loop {
            let mut w = 1.0;
            for (i, &l) in ls.iter().enumerate() {
                w *= labels[l].as_ref().unwrap()[assign[i]];
            }
            if w != 0.0 {
                let mut prod = w;
                for a in rs {
                    let mut key: Vec<OpKey> = reps[a]
                        .iter()
                        .map(|s| match *s {
                            Slot::Op(k) => k,
                            Slot::Label(l) => {
                                let pos = ls.iter().position(|&x| x == l).unwrap();
                                OpKey::Spin(ctx_axis, assign[pos])
                            }
                        })
                        .collect();
                    key.sort_unstable();
                    let v = match cache.get(&key) {
                        Some(v) => *v,
                        None => {
                            let ops: Vec<&CMatrix> = key.iter().map(|k| self.op_matrix(*k, mats)).collect();
                            let v = duhamel_eig(self.sd, &ops)?.re;
                            cache.insert(key, v);
                            v
                        }
                    };
                    prod *= v;
                }
                sum += prod;
            }
            for d in 0..assign.len() {
                assign[d] += 1;
                if assign[d] < nc {
                    continue 'outer;
                }
                assign[d] = 0;
            }
            break;
        }
        Ok(sum)
    }
}

/// Connected components of the replica–label incidence graph.
fn components(reps: &BTreeMap<usize, Vec<Slot>>, n_labels: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let rlist: Vec<usize> = reps.keys().copied().collect();
    let mut seen_r = vec![false; rlist.len()];
    let mut out = Vec::new();
    for start in 0..rlist.len() {
        if seen_r[start] {
            continue;
        }
        let mut rs = vec![];
        let mut ls: Vec<usize> = vec![];
        let mut stack = vec![start];
        seen_r[start] = true;
        while let Some(ri) = stack.pop() {
            rs.push(rlist[ri]);
            for s in &reps[&rlist[ri]] {
                if let Slot::Label(l) = *s {
                    if ls.contains(&l) {
                        continue;
                    }
                    ls.push(l);
                    for (rj, a) in rlist.iter().enumerate() {
                        if !seen_r[rj] && reps[a].contains(&Slot::Label(l)) {
                            seen_r[rj] = true;
                            stack.push(rj);
                        }
                    }
                }
            }
        }
        debug_assert!(ls.iter().all(|&l| l < n_labels));
        rs.sort_unstable();
        ls.sort_unstable();
        out.push((rs, ls));
    }
    out
}

fn weighted_sum(mats: &[CMatrix], w: &[f64]) -> CMatrix {
    let n = mats[0].nrows();
    let mut acc = CMatrix::zeros(n, n);
    for (m, &wx) in mats.iter().zip(w) {
        if wx != 0.0 {
            acc += m * C64::new(wx, 0.0);
        }
    }
    acc
}

/// `Σ_X w_X (A^X A^X)_D`
fn pair2(sd: &SpectralData, mats: &[CMatrix], w: &[f64]) -> f64 {
    let n = sd.dim();
    let f2 = sd.f2_table();
    let mut s = 0.0;
    for (a, &wx) in mats.iter().zip(w) {
        if wx == 0.0 {
            continue;
        }
        let mut t = 0.0;
        for j in 0..n {
            for i in 0..n {
                t += a[(i, j)].norm_sqr() * f2[i * n + j];
            }
        }
        s += wx * t;
    }
    s / sd.z_shifted
}

/// `Σ_X w_X (A^X A^X M)_D`
fn pair3(sd: &SpectralData, mats: &[CMatrix], w: &[f64], m: &CMatrix) -> f64 {
    let n = sd.dim();
    let mut s = C64::new(0.0, 0.0);
    let mut p = vec![C64::new(0.0, 0.0); n];
    let mut q = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        for j in 0..n {
            // p_k = Σ_X w A_ij A_jk,  q_k = Σ_X w A_ij A_ki
            p.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            q.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            for (a, &wx) in mats.iter().zip(w) {
                if wx == 0.0 {
                    continue;
                }
                let aij = a[(i, j)] * wx;
                if aij == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..n {
                    p[k] += aij * a[(j, k)];
                    q[k] += aij * a[(k, i)];
                }
            }
            for k in 0..n {
                s += (p[k] * m[(k, i)] + q[k] * m[(j, k)]) * sd.f3(i, j, k);
            }
        }
    }
    s.re / sd.z_shifted
}

trait Scalar: Copy + Default + Add<Output = Self> + Mul<Output = Self> + AddAssign + Mul<f64, Output = Self> {
    fn conj(self) -> Self;
    fn re(self) -> f64;
    fn from_c64(z: C64) -> Self;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn re(self) -> f64 {
        self
    }
    fn from_c64(z: C64) -> Self {
        z.re
    }
}

impl Scalar for C64 {
    fn conj(self) -> Self {
        C64::conj(&self)
    }
    fn re(self) -> f64 {
        self.re
    }
    fn from_c64(z: C64) -> Self {
        z
    }
}

/// `Σ_{X,Y} w_X v_Y (A^X A^X A^Y A^Y)_D`
fn pair_pair(sd: &SpectralData, mats: &[CMatrix], real: bool, w: &[f64], v: &[f64]) -> f64 {
    if real {
        pair_pair_impl::<f64>(sd, mats, w, v)
    } else {
        pair_pair_impl::<C64>(sd, mats, w, v)
    }
}

/// With `G_i[j,(k,l)] = Σ_X w_X A_ij A_kl` the sum over both labels is
/// `(2/Z) Σ F_{ijkl} [2 P^w_{ijk} P^v_{kli} + G^w_i[j,(k,l)] conj(G^v_i[l,(k,j)])]`
/// where `P_{ijk} = G_i[j,(j,k)]` and `F` is the 4-point divided difference.
fn pair_pair_impl<T: Scalar>(sd: &SpectralData, mats: &[CMatrix], w: &[f64], v: &[f64]) -> f64 {
    let n = sd.dim();
    let n2 = n * n;
    let lam = sd.lambdas();
    let f3 = sd.f3_table().expect("pair kernel needs the 3-point table");
    // rows: a[X][i*n + j]
    let a: Vec<Vec<T>> = mats.iter().map(|m| {
        let mut r = vec![T::default(); n2];
        for i in 0..n {
            for j in 0..n {
                r[i * n + j] = T::from_c64(m[(i, j)]);
            }
        }
        r
    }).collect();
    let same = w == v;
    let build = |i: usize, wt: &[f64], g: &mut [T]| {
        g.iter_mut().for_each(|z| *z = T::default());
        for (ax, &wx) in a.iter().zip(wt) {
            if wx == 0.0 {
                continue;
            }
            for j in 0..n {
                let c = ax[i * n + j] * wx;
                let row = &mut g[j * n2..(j + 1) * n2];
                for (gz, &az) in row.iter_mut().zip(ax.iter()) {
                    *gz += c * az;
                }
            }
        }
    };
    let mut gw = vec![T::default(); n * n2];
    let mut gv = if same { Vec::new() } else { vec![T::default(); n * n2] };
    // bt[k][j][l] = conj(G^v_i[l,(k,j)])
    let mut bt = vec![T::default(); n * n2];
    let mut pw = vec![T::default(); n2];
    let mut qv = vec![T::default(); n2];
    let mut fbuf = vec![0.0f64; n];
    let mut accv = vec![T::default(); n];
    let mut rowc = vec![T::default(); n];
    let mut inv = vec![0.0f64; n];
    let mut close: Vec<usize> = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        build(i, w, &mut gw);
        if !same {
            build(i, v, &mut gv);
        }
        let gvr: &[T] = if same { &gw } else { &gv };
        // bt[k][j][l] = Σ_Y v_Y conj(A_kj) conj(A_il)
        bt.iter_mut().for_each(|z| *z = T::default());
        for (ax, &vy) in a.iter().zip(v) {
            if vy == 0.0 {
                continue;
            }
            for (l, z) in rowc.iter_mut().enumerate() {
                *z = ax[i * n + l].conj();
            }
            for kj in 0..n2 {
                let c = ax[kj].conj() * vy;
                let row = &mut bt[kj * n..(kj + 1) * n];
                for (bz, &rz) in row.iter_mut().zip(rowc.iter()) {
                    *bz += c * rz;
                }
            }
        }
        for j in 0..n {
            for k in 0..n {
                pw[j * n + k] = gw[j * n2 + j * n + k];
            }
        }
        for k in 0..n {
            for l in 0..n {
                qv[k * n + l] = gvr[l * n2 + l * n + k].conj();
            }
        }
        close.clear();
        for l in 0..n {
            let d = lam[i] - lam[l];
            if d.abs() > F4_SPLIT {
                inv[l] = 1.0 / d;
            } else {
                inv[l] = 0.0;
                close.push(l);
            }
        }
        accv.iter_mut().for_each(|z| *z = T::default());
        for j in 0..n {
            for k in 0..n {
                let fijk = f3[(i * n + j) * n + k];
                let f3row = &f3[(j * n + k) * n..(j * n + k + 1) * n];
                for l in 0..n {
                    fbuf[l] = (fijk - f3row[l]) * inv[l];
                }
                for &l in &close {
                    fbuf[l] = f4_close(lam, f3, n, i, j, k, l);
                }
                let grow = &gw[j * n2 + k * n..j * n2 + (k + 1) * n];
                let brow = &bt[(k * n + j) * n..(k * n + j + 1) * n];
                let p = pw[j * n + k] * 2.0;
                let qrow = &qv[k * n..(k + 1) * n];
                for l in 0..n {
                    accv[l] += (grow[l] * brow[l] + p * qrow[l]) * fbuf[l];
                }
            }
        }
        let mut acc = T::default();
        for &z in &accv {
            acc += z;
        }
        total += acc.re();
    }
    2.0 * total / sd.z_shifted
}

/// 4-point divided difference when `λ_i` and `λ_l` are close: use the most
/// separated pair if any, else the clustered series.
#[inline(never)]
fn f4_close(lam: &[f64], f3: &[f64], n: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
    let idx = [i, j, k, l];
    let (mut lo, mut hi) = (0, 0);
    for p in 1..4 {
        if lam[idx[p]] < lam[idx[lo]] {
            lo = p;
        }
        if lam[idx[p]] > lam[idx[hi]] {
            hi = p;
        }
    }
    let spread = lam[idx[hi]] - lam[idx[lo]];
    if spread > F4_SPLIT {
        let rest = |skip: usize| {
            let r: Vec<usize> = (0..4).filter(|&p| p != skip).map(|p| idx[p]).collect();
            f3[(r[0] * n + r[1]) * n + r[2]]
        };
        (rest(lo) - rest(hi)) / spread
    } else {
        exp_divdiff(&[lam[i], lam[j], lam[k], lam[l]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, build_ranges, nearest_neighbor_bonds, BaseSet, Lattice};
    use crate::pauli::{assemble_hamiltonian, DisorderSample, HamiltonianSpec, NonRandomTerm};
    use crate::spectral::{duhamel_fd_oracle, eigendecompose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    struct Sys {
        lat: Lattice,
        spec: HamiltonianSpec,
        sd: SpectralData,
        ctx: ReplicaContext,
        h: CMatrix,
    }

    fn field_chain(n: usize, axes: Vec<Axis>, ctx_axis: Axis, beta: f64, seed: u64) -> Sys {
        let lat = build_lattice(1, n).unwrap();
        let bonds = nearest_neighbor_bonds(&lat);
        let spec = HamiltonianSpec {
            j: 1.0,
            random: build_ranges(&lat, &[BaseSet::single_site(1)]).unwrap(),
            axes,
            nonrandom: bonds
                .ranges
                .iter()
                .map(|b| NonRandomTerm { sites: b.clone(), axis: Axis::X, coeff: -0.6 })
                .collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DisorderSample::from_values((0..spec.num_couplings()).map(|_| rng.sample(StandardNormal)).collect());
        let h = assemble_hamiltonian(&spec, &g, &lat).unwrap();
        let sd = eigendecompose(&h, beta).unwrap();
        let field = g.axis_values(&spec, ctx_axis).unwrap();
        let ctx = ReplicaContext { family: spec.random.clone(), axis: ctx_axis, field, n_sites: n };
        Sys { lat, spec, sd, ctx, h }
    }

    fn flat(sys: &Sys, t: &AtomTerm) -> f64 {
        eval_polynomial(&sys.sd, &sys.ctx.expand(t).unwrap()).unwrap()
    }

    fn structured(sys: &Sys, t: &AtomTerm) -> f64 {
        Evaluator::new(&sys.sd, &sys.ctx).unwrap().eval_term(t).unwrap()
    }

    fn ov(a: usize, b: usize) -> Atom {
        Atom::Overlap { a, b }
    }

    #[test]
    fn overlap_expansion_shape() {
        let sys = field_chain(3, vec![Axis::Z], Axis::Z, 1.0, 1);
        let m = sys.ctx.expand(&AtomTerm::new(1.0, vec![ov(1, 2)])).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().all(|x| (x.coeff - 1.0 / 3.0).abs() < 1e-15 && x.factors.len() == 2));
    }

    #[test]
    fn r12_is_gibbs_overlap() {
        let sys = field_chain(3, vec![Axis::Z, Axis::X], Axis::Z, 1.2, 2);
        let r = flat(&sys, &AtomTerm::new(1.0, vec![ov(1, 2)]));
        let mut e = Evaluator::new(&sys.sd, &sys.ctx).unwrap();
        let expect = e.expectations(Axis::Z).unwrap();
        let oracle = expect.iter().map(|x| x * x).sum::<f64>() / 3.0;
        assert!((r - oracle).abs() < 1e-13);
        assert!((structured(&sys, &AtomTerm::new(1.0, vec![ov(2, 1)])) - oracle).abs() < 1e-13);
    }

    #[test]
    fn r11_free_hamiltonian_is_one() {
        let lat = build_lattice(1, 2).unwrap();
        let sd = eigendecompose(&CMatrix::zeros(4, 4), 1.0).unwrap();
        let ctx = ReplicaContext {
            family: nearest_neighbor_bonds(&lat),
            axis: Axis::X,
            field: vec![0.0],
            n_sites: 2,
        };
        let t = AtomTerm::new(1.0, vec![ov(1, 1)]);
        assert!((eval_polynomial(&sd, &ctx.expand(&t).unwrap()).unwrap() - 1.0).abs() < 1e-14);
        assert!((Evaluator::new(&sd, &ctx).unwrap().eval_term(&t).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn basic_polynomial_cases() {
        let sys = field_chain(2, vec![Axis::Z, Axis::X], Axis::X, 0.9, 3);
        assert_eq!(eval_polynomial(&sys.sd, &[]).unwrap(), 0.0);
        let r12 = sys.ctx.expand(&AtomTerm::new(1.0, vec![ov(1, 2)])).unwrap();
        let mut r21 = sys.ctx.expand(&AtomTerm::new(-1.0, vec![ov(2, 1)])).unwrap();
        r21.extend(r12);
        assert!(eval_polynomial(&sys.sd, &r21).unwrap().abs() < 1e-15);
        let x = SpinOperator::new(Axis::X, &[0], 2).unwrap();
        let single = ReplicaMonomial { coeff: 1.0, factors: vec![(1, x.clone())] };
        let g = crate::spectral::gibbs_expect(&sys.sd, &x.to_dense()).unwrap();
        assert!((eval_replica_duhamel(&sys.sd, &single).unwrap() - g).abs() < 1e-13);
    }

    #[test]
    fn h_field_cases() {
        let sys = field_chain(2, vec![Axis::Z], Axis::Z, 1.0, 4);
        let h = HFieldObservable {
            axis: Axis::Z,
            replica: 1,
            family: sys.ctx.family.clone(),
            couplings: vec![0.0, 0.0],
            n_sites: 2,
        };
        assert_eq!(eval_h_field(&sys.sd, &h, &[]).unwrap(), 0.0);
        let lat1 = build_lattice(1, 1).unwrap();
        let fam = build_ranges(&lat1, &[BaseSet::single_site(1)]).unwrap();
        let ham = crate::spectral::diagonal(&[-0.7, 0.7]);
        let sd = eigendecompose(&ham, 1.0).unwrap();
        let h1 = HFieldObservable { axis: Axis::Z, replica: 1, family: fam, couplings: vec![0.7], n_sites: 1 };
        assert!((eval_h_field(&sd, &h1, &[]).unwrap() - 0.7 * 0.7f64.tanh()).abs() < 1e-14);
    }

    fn term_zoo() -> Vec<AtomTerm> {
        let f = |a| Atom::Field { a };
        let s = |axis, range, a| Atom::Spin { axis, range, a };
        vec![
            AtomTerm::new(1.0, vec![ov(1, 1)]),
            AtomTerm::new(0.5, vec![ov(1, 2)]),
            AtomTerm::new(1.0, vec![f(1)]),
            AtomTerm::new(1.0, vec![f(1), f(1)]),
            AtomTerm::new(1.0, vec![f(1), ov(1, 1)]),
            AtomTerm::new(1.0, vec![f(1), ov(1, 2)]),
            AtomTerm::new(1.0, vec![ov(1, 1), ov(1, 1)]),
            AtomTerm::new(1.0, vec![ov(1, 2), ov(1, 1)]),
            AtomTerm::new(1.0, vec![ov(1, 2), ov(1, 2)]),
            AtomTerm::new(1.0, vec![ov(1, 3), ov(1, 2)]),
            AtomTerm::new(1.0, vec![ov(1, 3), ov(2, 3)]),
            AtomTerm::new(1.0, vec![ov(1, 2), ov(3, 4)]),
            AtomTerm::new(1.0, vec![ov(1, 2), ov(2, 3), ov(3, 1)]),
            AtomTerm::new(1.0, vec![ov(1, 1), ov(2, 3)]),
            AtomTerm::new(1.0, vec![ov(1, 1), ov(2, 2)]),
            AtomTerm::new(-2.0, vec![f(1), ov(1, 1), ov(2, 2)]),
            AtomTerm::new(1.0, vec![s(Axis::Z, 0, 1), ov(1, 2)]),
            AtomTerm::new(1.0, vec![s(Axis::Y, 1, 1), s(Axis::Y, 1, 1)]),
            AtomTerm::new(1.0, vec![s(Axis::X, 0, 1), s(Axis::Z, 1, 1), ov(1, 2)]),
            AtomTerm::new(1.0, vec![f(2), ov(1, 2), ov(1, 1)]),
            AtomTerm::new(1.0, vec![ov(1, 2), ov(1, 2), ov(2, 3)]),
        ]
    }

    #[test]
    fn structured_matches_flat_expansion() {
        for (axes, ctx_axis, seed) in [
            (vec![Axis::Z, Axis::X], Axis::Z, 5u64),
            (vec![Axis::Z, Axis::X], Axis::X, 6),
            (Axis::ALL.to_vec(), Axis::Y, 7),
        ] {
            let sys = field_chain(3, axes, ctx_axis, 1.1, seed);
            for t in term_zoo() {
                let a = structured(&sys, &t);
                let b = flat(&sys, &t);
                assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0), "{t:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn pair_pair_kernel_on_degenerate_and_wide_spectra() {
        for beta in [0.0, 0.4, 3.0, 12.0] {
            let sys = field_chain(4, vec![Axis::Z, Axis::X], Axis::Z, beta, 12);
            let t = AtomTerm::new(1.0, vec![ov(1, 1), ov(1, 1)]);
            let a = structured(&sys, &t);
            let b = flat(&sys, &t);
            assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0), "β={beta}: {a} vs {b}");
        }
        // exactly degenerate: H_non only, commuting ops
        let lat = build_lattice(1, 3).unwrap();
        let bonds = nearest_neighbor_bonds(&lat);
        let h = crate::pauli::hamiltonian_terms(
            &HamiltonianSpec {
                j: 0.0,
                random: bonds.clone(),
                axes: vec![Axis::Z],
                nonrandom: bonds.ranges.iter().map(|b| NonRandomTerm { sites: b.clone(), axis: Axis::Z, coeff: -1.0 }).collect(),
            },
            &DisorderSample::from_values(vec![0.0, 0.0]),
            &lat,
        )
        .unwrap()
        .to_dense();
        let sd = eigendecompose(&h, 1.0).unwrap();
        let ctx = ReplicaContext { family: build_ranges(&lat, &[BaseSet::single_site(1)]).unwrap(), axis: Axis::X, field: vec![0.0; 3], n_sites: 3 };
        let t = AtomTerm::new(1.0, vec![ov(1, 1), ov(1, 1)]);
        let a = Evaluator::new(&sd, &ctx).unwrap().eval_term(&t).unwrap();
        let b = eval_polynomial(&sd, &ctx.expand(&t).unwrap()).unwrap();
        assert!((a - b).abs() <= 1e-11 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn replica_exchange_symmetry() {
        let sys = field_chain(3, vec![Axis::Z, Axis::X], Axis::Z, 0.8, 9);
        let perms: [[usize; 4]; 3] = [[2, 1, 3, 4], [3, 1, 2, 4], [4, 3, 2, 1]];
        for t in term_zoo() {
            let base = flat(&sys, &t);
            let flatm = sys.ctx.expand(&t).unwrap();
            for p in &perms {
                let moved: Vec<ReplicaMonomial> = flatm.iter().map(|m| m.relabel(p)).collect();
                assert!((eval_polynomial(&sys.sd, &moved).unwrap() - base).abs() < 1e-12);
                let atoms = t
                    .atoms
                    .iter()
                    .map(|a| match *a {
                        Atom::Overlap { a, b } => Atom::Overlap { a: p[a - 1], b: p[b - 1] },
                        Atom::Field { a } => Atom::Field { a: p[a - 1] },
                        Atom::Spin { axis, range, a } => Atom::Spin { axis, range, a: p[a - 1] },
                    })
                    .collect();
                let st = structured(&sys, &AtomTerm::new(t.coeff, atoms));
                assert!((st - base).abs() < 1e-11 * base.abs().max(1.0));
            }
        }
    }

    #[test]
    fn overlap_products_bounded() {
        let sys = field_chain(3, Axis::ALL.to_vec(), Axis::X, 2.0, 13);
        for t in term_zoo().into_iter().filter(|t| t.atoms.iter().all(|a| matches!(a, Atom::Overlap { .. }))) {
            assert!(structured(&sys, &t).abs() <= 1.0 + 1e-12);
        }
    }

    fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let (ra, ca) = a.shape();
        let (rb, cb) = b.shape();
        CMatrix::from_fn(ra * rb, ca * cb, |i, j| a[(i / rb, j / cb)] * b[(i % rb, j % cb)])
    }

    /// Embed `op` on replica `a` of `n` copies.
    fn embed(op: &CMatrix, a: usize, n: usize) -> CMatrix {
        let d = op.nrows();
        let id = CMatrix::identity(d, d);
        let mut m = CMatrix::identity(1, 1);
        for r in 1..=n {
            m = kron(&m, if r == a { op } else { &id });
        }
        m
    }

    fn tensor_oracle(sys: &Sys, m: &ReplicaMonomial, n: usize) -> f64 {
        let d = sys.h.nrows();
        let id = CMatrix::identity(d, d);
        let mut big = CMatrix::zeros(d.pow(n as u32), d.pow(n as u32));
        for a in 1..=n {
            big += embed(&sys.h, a, n);
        }
        let sd = eigendecompose(&big, sys.sd.beta).unwrap();
        let ops: Vec<CMatrix> = m.factors.iter().map(|(a, op)| embed(&op.to_dense(), *a, n)).collect();
        let refs: Vec<&CMatrix> = ops.iter().collect();
        let _ = id;
        m.coeff * crate::spectral::duhamel(&sd, &refs).unwrap().value
    }

    #[test]
    fn tensor_oracle_equivalence() {
        let sys = field_chain(1, vec![Axis::Z, Axis::X], Axis::Z, 1.3, 14);
        let sx = SpinOperator::new(Axis::X, &[0], 1).unwrap();
        let sz = SpinOperator::new(Axis::Z, &[0], 1).unwrap();
        let cases = vec![
            ReplicaMonomial { coeff: 1.0, factors: vec![(1, sz.clone()), (2, sz.clone())] },
            ReplicaMonomial { coeff: 0.5, factors: vec![(1, sz.clone()), (1, sz.clone()), (2, sx.clone()), (3, sz.clone())] },
            ReplicaMonomial { coeff: 1.0, factors: vec![(1, sx.clone()), (2, sz.clone()), (2, sx.clone()), (3, sz.clone())] },
        ];
        for m in &cases {
            let a = eval_replica_duhamel(&sys.sd, m).unwrap();
            let b = tensor_oracle(&sys, m, 3);
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn r11_r23_against_fd_on_tripled_system() {
        let sys = field_chain(1, vec![Axis::Z, Axis::X], Axis::X, 0.9, 15);
        let sx = SpinOperator::new(Axis::X, &[0], 1).unwrap();
        let m = ReplicaMonomial { coeff: 1.0, factors: vec![(1, sx.clone()), (1, sx.clone()), (2, sx.clone()), (3, sx.clone())] };
        let a = eval_replica_duhamel(&sys.sd, &m).unwrap();
        let mut big = CMatrix::zeros(8, 8);
        for r in 1..=3 {
            big += embed(&sys.h, r, 3);
        }
        let ops: Vec<CMatrix> = m.factors.iter().map(|(r, op)| embed(&op.to_dense(), *r, 3)).collect();
        let refs: Vec<&CMatrix> = ops.iter().collect();
        let b = duhamel_fd_oracle(&big, 0.9, &refs, 1e-2).unwrap().value;
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn order_cap_enforced() {
        let sys = field_chain(2, vec![Axis::Z], Axis::Z, 1.0, 16);
        let t = AtomTerm::new(1.0, vec![ov(1, 1), ov(1, 1), Atom::Field { a: 1 }]);
        assert!(matches!(
            Evaluator::new(&sys.sd, &sys.ctx).unwrap().eval_term(&t),
            Err(Error::Order { .. })
        ));
        assert!(matches!(eval_polynomial(&sys.sd, &sys.ctx.expand(&t).unwrap()), Err(Error::Order { .. })));
        let _ = &sys.lat;
        let _ = &sys.spec;
    }
}
