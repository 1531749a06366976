//! Expression trees for analytic (and one meromorphic) maps of the closed
//! unit disk, with forward-mode exact differentiation and a small textual
//! grammar.
//!
//! Every tree is normalized so that `f(0) = 0`. Construction validates the
//! parameters and computes the pole set once; afterwards a [`FunctionSpec`]
//! is immutable and all evaluation is a pure function of `(spec, z)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Image-plane and domain-plane points share this type.
pub type ComplexValue = Complex64;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Parameters of `(a z + b) / (c z + d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

impl Mobius {
    /// `z / (eps + 2 z)`, conformal from the disk onto the complement of a
    /// small disk around `1/2`.
    pub fn counterexample(eps: f64) -> Self {
        Mobius {
            a: ONE,
            b: ZERO,
            c: Complex64::new(2.0, 0.0),
            d: Complex64::new(eps, 0.0),
        }
    }

    /// The `eps` of [`Mobius::counterexample`] when the parameters have that form.
    pub fn counterexample_eps(&self) -> Option<f64> {
        let is_form = self.a == ONE
            && self.b == ZERO
            && self.c == Complex64::new(2.0, 0.0)
            && self.d.im == 0.0
            && self.d.re > 0.0;
        is_form.then_some(self.d.re)
    }

    pub fn pole(&self) -> Option<Complex64> {
        (self.c != ZERO).then(|| -self.d / self.c)
    }
}

/// One node of the expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `z^n`, `n >= 1`.
    Monomial(u32),
    /// Real coefficients from degree 0 upward; the constant term is 0.
    Polynomial(Vec<f64>),
    Mobius(Mobius),
    /// `zeta * (1 - e^{k z})`, which never takes the value `zeta`.
    ExpAffine { zeta: f64, k: f64 },
    /// `B(z) - B(0)` for the finite Blaschke product with the given zeros.
    Blaschke(Vec<Complex64>),
    Sum(Box<Node>, Box<Node>),
    Product(Box<Node>, Box<Node>),
    /// `outer(inner(z))`; the outer tree must be pole-free.
    Compose { outer: Box<Node>, inner: Box<Node> },
    Scale(Complex64, Box<Node>),
    /// `f(t z)` with `0 < t <= 1`.
    Dilate(Box<Node>, f64),
}

impl Node {
    /// Value and derivative at `z`.
    fn eval_dual(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        match self {
            Node::Monomial(n) => {
                let n = *n as i32;
                let lower = if n == 1 { ONE } else { z.powi(n - 1) };
                Ok((lower * z, lower * n as f64))
            }
            Node::Polynomial(coeffs) => {
                let mut v = ZERO;
                let mut d = ZERO;
                for &c in coeffs.iter().rev() {
                    d = d * z + v;
                    v = v * z + c;
                }
                Ok((v, d))
            }
            Node::Mobius(m) => {
                let den = m.c * z + m.d;
                let scale = m.c.norm() * z.norm() + m.d.norm();
                if den.norm() <= f64::EPSILON * scale {
                    return Err(Error::PoleAtPoint { z });
                }
                let v = (m.a * z + m.b) / den;
                let d = (m.a * m.d - m.b * m.c) / (den * den);
                Ok((v, d))
            }
            Node::ExpAffine { zeta, k } => {
                let e = (z * *k).exp();
                Ok(((ONE - e) * *zeta, -e * (*zeta * *k)))
            }
            Node::Blaschke(zeros) => {
                let mut v = ONE;
                let mut d = ZERO;
                let mut at_zero = ONE;
                for &alpha in zeros {
                    let den = ONE - alpha.conj() * z;
                    if den.norm() <= f64::EPSILON {
                        return Err(Error::PoleAtPoint { z });
                    }
                    let phi = (z - alpha) / den;
                    let dphi = Complex64::new(1.0 - alpha.norm_sqr(), 0.0) / (den * den);
                    d = d * phi + v * dphi;
                    v *= phi;
                    at_zero *= -alpha;
                }
                Ok((v - at_zero, d))
            }
            Node::Sum(a, b) => {
                let (va, da) = a.eval_dual(z)?;
                let (vb, db) = b.eval_dual(z)?;
                Ok((va + vb, da + db))
            }
            Node::Product(a, b) => {
                let (va, da) = a.eval_dual(z)?;
                let (vb, db) = b.eval_dual(z)?;
                Ok((va * vb, da * vb + va * db))
            }
            Node::Compose { outer, inner } => {
                let (vi, di) = inner.eval_dual(z)?;
                let (vo, d_o) = outer.eval_dual(vi)?;
                Ok((vo, d_o * di))
            }
            Node::Scale(c, a) => {
                let (v, d) = a.eval_dual(z)?;
                Ok((v * c, d * c))
            }
            Node::Dilate(a, t) => {
                let (v, d) = a.eval_dual(z * *t)?;
                Ok((v, d * *t))
            }
        }
    }

    /// Poles of the tree in the finite plane.
    fn poles(&self) -> Vec<Complex64> {
        match self {
            Node::Monomial(_) | Node::Polynomial(_) | Node::ExpAffine { .. } => Vec::new(),
            Node::Mobius(m) => m.pole().into_iter().collect(),
            Node::Blaschke(zeros) => zeros
                .iter()
                .filter(|a| a.norm() > 0.0)
                .map(|a| ONE / a.conj())
                .collect(),
            Node::Sum(a, b) | Node::Product(a, b) => {
                let mut p = a.poles();
                p.extend(b.poles());
                p
            }
            Node::Compose { inner, .. } => inner.poles(),
            Node::Scale(_, a) => a.poles(),
            Node::Dilate(a, t) => a.poles().into_iter().map(|p| p / *t).collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::BadParameter(format!("{what} must be finite")))
            }
        };
        match self {
            Node::Monomial(n) => {
                if *n == 0 {
                    return Err(Error::BadParameter("monomial degree must be >= 1".into()));
                }
            }
            Node::Polynomial(c) => {
                if c.len() < 2 {
                    return Err(Error::BadParameter("polynomial needs degree >= 1".into()));
                }
                if c[0] != 0.0 {
                    return Err(Error::BadParameter(
                        "degree-0 coefficient must be 0".into(),
                    ));
                }
                for &x in c {
                    finite(x, "coefficient")?;
                }
            }
            Node::Mobius(m) => {
                for v in [m.a, m.b, m.c, m.d] {
                    finite(v.re, "mobius parameter")?;
                    finite(v.im, "mobius parameter")?;
                }
                if m.b != ZERO || m.d == ZERO {
                    return Err(Error::BadParameter(
                        "mobius map must satisfy f(0) = 0 (b = 0, d != 0)".into(),
                    ));
                }
                if m.a * m.d - m.b * m.c == ZERO {
                    return Err(Error::BadParameter("degenerate mobius map".into()));
                }
            }
            Node::ExpAffine { zeta, k } => {
                finite(*zeta, "zeta")?;
                finite(*k, "k")?;
            }
            Node::Blaschke(zeros) => {
                if zeros.is_empty() {
                    return Err(Error::BadParameter("blaschke product needs a zero".into()));
                }
                for a in zeros {
                    if !(a.norm() < 1.0) {
                        return Err(Error::BadParameter(format!(
                            "blaschke zero {a} must lie inside the disk"
                        )));
                    }
                }
            }
            Node::Sum(a, b) | Node::Product(a, b) => {
                a.validate()?;
                b.validate()?;
            }
            Node::Compose { outer, inner } => {
                outer.validate()?;
                inner.validate()?;
                if !outer.poles().is_empty() {
                    return Err(Error::BadParameter(
                        "outer map of a composition must be pole-free".into(),
                    ));
                }
            }
            Node::Scale(c, a) => {
                finite(c.re, "scale")?;
                finite(c.im, "scale")?;
                a.validate()?;
            }
            Node::Dilate(a, t) => {
                if !(*t > 0.0 && *t <= 1.0) {
                    return Err(Error::BadParameter(format!("dilation {t} not in (0, 1]")));
                }
                a.validate()?;
            }
        }
        Ok(())
    }
}

/// A validated, normalized expression tree.
#[derive(Debug, Clone)]
pub struct FunctionSpec {
    root: Node,
    poles: Vec<Complex64>,
    analytic: bool,
}

impl PartialEq for FunctionSpec {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl FunctionSpec {
    pub fn new(root: Node) -> Result<Self> {
        root.validate()?;
        let poles = root.poles();
        let analytic = poles.iter().all(|p| p.norm() > 1.0 + 1e-12);
        let spec = FunctionSpec {
            root,
            poles,
            analytic,
        };
        let f0 = spec.eval(ZERO)?;
        if f0.norm() > 1e-14 {
            return Err(Error::BadParameter(format!("f(0) = {f0}, expected 0")));
        }
        Ok(spec)
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// True when the tree is pole-free on the closed unit disk.
    pub fn is_analytic(&self) -> bool {
        self.analytic
    }

    /// Poles in the finite plane (possibly outside the disk).
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Poles with modulus at most one.
    pub fn poles_in_disk(&self) -> Vec<Complex64> {
        self.poles
            .iter()
            .copied()
            .filter(|p| p.norm() <= 1.0 + 1e-12)
            .collect()
    }

    pub fn eval(&self, z: Complex64) -> Result<Complex64> {
        self.eval_with_derivative(z).map(|(v, _)| v)
    }

    pub fn derivative(&self, z: Complex64) -> Result<Complex64> {
        self.eval_with_derivative(z).map(|(_, d)| d)
    }

    pub fn eval_with_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        let (v, d) = self.root.eval_dual(z)?;
        if !(v.re.is_finite() && v.im.is_finite() && d.re.is_finite() && d.im.is_finite()) {
            return Err(Error::NonFinite { z });
        }
        Ok((v, d))
    }

    /// `z -> f(t z)`.
    pub fn dilate(&self, t: f64) -> Result<FunctionSpec> {
        FunctionSpec::new(Node::Dilate(Box::new(self.root.clone()), t))
    }

    /// Heuristic constancy test: derivative vanishes at a handful of points.
    pub fn is_constant(&self) -> bool {
        (0..8).all(|j| {
            let z = Complex64::from_polar(0.5, 2.0 * PI * j as f64 / 8.0 + 0.3);
            self.derivative(z).map(|d| d.norm() < 1e-14).unwrap_or(false)
        })
    }
}

/// Anything that can be evaluated with its derivative: a spec or a
/// normalized view of one.
pub trait HoloMap: Sync {
    fn value_and_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)>;

    fn value(&self, z: Complex64) -> Result<Complex64> {
        self.value_and_derivative(z).map(|(v, _)| v)
    }

    /// Poles inside the closed disk, used for exclusion neighbourhoods.
    fn disk_poles(&self) -> Vec<Complex64>;
}

impl HoloMap for FunctionSpec {
    fn value_and_derivative(&self, z: Complex64) -> Result<(Complex64, Complex64)> {
        self.eval_with_derivative(z)
    }

    fn disk_poles(&self) -> Vec<Complex64> {
        self.poles_in_disk()
    }
}

pub fn evaluate(spec: &FunctionSpec, z: ComplexValue) -> Result<ComplexValue> {
    spec.eval(z)
}

pub fn derivative(spec: &FunctionSpec, z: ComplexValue) -> Result<ComplexValue> {
    spec.derivative(z)
}

const MAX_MOD_SAMPLES: usize = 1024;
const MAX_MOD_BRACKETS: usize = 3;

/// `M(r) = max_{|z| = r} |f(z)|` by dense angular sampling followed by
/// golden-section refinement of the best brackets.
pub fn max_modulus_on_circle<F: HoloMap + ?Sized>(spec: &F, r: f64, tol: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::BadParameter(format!("radius {r} not in (0, 1]")));
    }
    let n = MAX_MOD_SAMPLES;
    let step = 2.0 * PI / n as f64;
    let mut moduli = Vec::with_capacity(n);
    let mut lipschitz = 0.0f64;
    for j in 0..n {
        let z = Complex64::from_polar(r, j as f64 * step);
        let (v, d) = spec.value_and_derivative(z)?;
        moduli.push(v.norm());
        lipschitz = lipschitz.max(d.norm());
    }
    // |d|f|/dθ| <= r |f'|; pad the sampled bound for variation between samples.
    let lipschitz = 2.0 * r * lipschitz + f64::MIN_POSITIVE;

    let mut order: Vec<usize> = (0..n)
        .filter(|&j| {
            let prev = moduli[(j + n - 1) % n];
            let next = moduli[(j + 1) % n];
            moduli[j] >= prev && moduli[j] >= next
        })
        .collect();
    if order.is_empty() {
        order = (0..n).collect();
    }
    order.sort_by(|&a, &b| moduli[b].total_cmp(&moduli[a]));
    order.truncate(MAX_MOD_BRACKETS);

    let modulus_at = |theta: f64| -> Result<f64> {
        Ok(spec.value(Complex64::from_polar(r, theta))?.norm())
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut best = moduli.iter().copied().fold(0.0, f64::max);
    for &j in &order {
        let mut lo = (j as f64 - 1.0) * step;
        let mut hi = (j as f64 + 1.0) * step;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = modulus_at(x1)?;
        let mut f2 = modulus_at(x2)?;
        let mut iterations = 0;
        while (hi - lo) * lipschitz > tol {
            if iterations >= 200 {
                return Err(Error::ToleranceNotMet {
                    tol,
                    achieved: (hi - lo) * lipschitz,
                });
            }
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = modulus_at(x2)?;
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = modulus_at(x1)?;
            }
            iterations += 1;
        }
        best = best.max(f1).max(f2);
    }
    Ok(best)
}

/// Parameterized generators for the test corpus.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Monomial { n: u32 },
    Polynomial { coeffs: Vec<f64> },
    /// `zeta (1 - e^{k z})`, omitting the value `zeta`.
    OmitPoint { zeta: f64, k: f64 },
    /// `z / (eps + 2 z)`.
    MobiusCounterexample { eps: f64 },
    Blaschke { zeros: Vec<Complex64> },
}

pub fn make_family(family: &Family) -> Result<FunctionSpec> {
    let node = match family {
        Family::Monomial { n } => Node::Monomial(*n),
        Family::Polynomial { coeffs } => Node::Polynomial(coeffs.clone()),
        Family::OmitPoint { zeta, k } => {
            if *zeta == 0.0 || *k == 0.0 {
                return Err(Error::BadParameter(
                    "omit-point family needs nonzero zeta and k".into(),
                ));
            }
            Node::ExpAffine { zeta: *zeta, k: *k }
        }
        Family::MobiusCounterexample { eps } => {
            if !(*eps > 0.0 && eps.is_finite()) {
                return Err(Error::BadParameter(format!("eps = {eps} must be > 0")));
            }
            Node::Mobius(Mobius::counterexample(*eps))
        }
        Family::Blaschke { zeros } => Node::Blaschke(zeros.clone()),
    };
    FunctionSpec::new(node)
}

// ---------------------------------------------------------------------------
// Grammar
// ---------------------------------------------------------------------------

fn fmt_real(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-4 || x.abs() >= 1e15) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn fmt_complex(c: Complex64) -> String {
    format!("({},{})", fmt_real(c.re), fmt_real(c.im))
}

fn write_node(node: &Node, out: &mut String) {
    match node {
        Node::Monomial(n) => out.push_str(&format!("mono({n})")),
        Node::Polynomial(c) => {
            let body: Vec<String> = c.iter().map(|&x| fmt_real(x)).collect();
            out.push_str(&format!("poly[{}]", body.join(",")));
        }
        Node::Mobius(m) => match m.counterexample_eps() {
            Some(eps) => out.push_str(&format!("mobius(eps={})", fmt_real(eps))),
            None => out.push_str(&format!(
                "mobius(a={},b={},c={},d={})",
                fmt_complex(m.a),
                fmt_complex(m.b),
                fmt_complex(m.c),
                fmt_complex(m.d)
            )),
        },
        Node::ExpAffine { zeta, k } => {
            out.push_str(&format!("omit(zeta={},k={})", fmt_real(*zeta), fmt_real(*k)))
        }
        Node::Blaschke(z) => {
            let body: Vec<String> = z.iter().map(|&c| fmt_complex(c)).collect();
            out.push_str(&format!("blaschke[{}]", body.join(",")));
        }
        Node::Sum(a, b) | Node::Product(a, b) | Node::Compose { outer: a, inner: b } => {
            out.push_str(match node {
                Node::Sum(..) => "sum(",
                Node::Product(..) => "prod(",
                _ => "comp(",
            });
            write_node(a, out);
            out.push(',');
            write_node(b, out);
            out.push(')');
        }
        Node::Scale(c, a) => {
            out.push_str("scale(");
            write_node(a, out);
            out.push(',');
            if c.im == 0.0 {
                out.push_str(&fmt_real(c.re));
            } else {
                out.push_str(&fmt_complex(*c));
            }
            out.push(')');
        }
        Node::Dilate(a, t) => {
            out.push_str("dilate(");
            write_node(a, out);
            out.push(',');
            out.push_str(&fmt_real(*t));
            out.push(')');
        }
    }
}

pub fn serialize_spec(spec: &FunctionSpec) -> String {
    let mut s = String::new();
    write_node(&spec.root, &mut s);
    s
}

impl fmt::Display for FunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize_spec(self))
    }
}

impl FromStr for FunctionSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse_spec(s)
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(|c: char| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn error(&self, expected: &str) -> Error {
        let rest = &self.src[self.pos..];
        let found: String = rest.chars().take(12).collect();
        Error::ParseError {
            position: self.pos,
            expected: expected.to_string(),
            found: if found.is_empty() { "end of input".into() } else { found },
        }
    }

    fn peek_is(&mut self, lit: &str) -> bool {
        self.skip_ws();
        self.src[self.pos..].starts_with(lit)
    }

    fn eat(&mut self, lit: &str) -> Result<()> {
        if self.peek_is(lit) {
            self.pos += lit.len();
            Ok(())
        } else {
            Err(self.error(&format!("{lit:?}")))
        }
    }

    fn real(&mut self) -> Result<f64> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .char_indices()
            .take_while(|&(i, c)| {
                c.is_ascii_digit()
                    || c == '.'
                    || c == 'e'
                    || c == 'E'
                    || ((c == '-' || c == '+')
                        && (i == 0 || matches!(rest.as_bytes()[i - 1], b'e' | b'E')))
            })
            .count();
        let token = &rest[..len];
        match token.parse::<f64>() {
            Ok(x) if x.is_finite() => {
                self.pos += len;
                Ok(x)
            }
            _ => Err(self.error("real number")),
        }
    }

    fn int(&mut self) -> Result<u32> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.chars().take_while(|c| c.is_ascii_digit()).count();
        match rest[..len].parse::<u32>() {
            Ok(n) => {
                self.pos += len;
                Ok(n)
            }
            Err(_) => Err(self.error("integer")),
        }
    }

    fn complex(&mut self) -> Result<Complex64> {
        self.eat("(")?;
        let re = self.real()?;
        self.eat(",")?;
        let im = self.real()?;
        self.eat(")")?;
        Ok(Complex64::new(re, im))
    }

    fn list<T>(&mut self, item: impl Fn(&mut Self) -> Result<T>) -> Result<Vec<T>> {
        let mut out = vec![item(self)?];
        while self.peek_is(",") {
            self.eat(",")?;
            out.push(item(self)?);
        }
        self.eat("]")?;
        Ok(out)
    }

    fn node(&mut self) -> Result<Node> {
        let start = self.pos;
        let wrap = |e: Error, start: usize| match e {
            Error::BadParameter(msg) => Error::ParseError {
                position: start,
                expected: "valid parameters".into(),
                found: msg,
            },
            other => other,
        };
        if self.peek_is("poly[") {
            self.eat("poly[")?;
            let c = self.list(Self::real)?;
            if c.first() != Some(&0.0) {
                return Err(Error::ParseError {
                    position: start,
                    expected: "degree-0 coefficient 0".into(),
                    found: format!("{:?}", c.first()),
                });
            }
            Ok(Node::Polynomial(c))
        } else if self.peek_is("mono(") {
            self.eat("mono(")?;
            let n = self.int()?;
            self.eat(")")?;
            Ok(Node::Monomial(n))
        } else if self.peek_is("blaschke[") {
            self.eat("blaschke[")?;
            Ok(Node::Blaschke(self.list(Self::complex)?))
        } else if self.peek_is("omit(") {
            self.eat("omit(")?;
            self.eat("zeta=")?;
            let zeta = self.real()?;
            self.eat(",")?;
            self.eat("k=")?;
            let k = self.real()?;
            self.eat(")")?;
            make_family(&Family::OmitPoint { zeta, k })
                .map(|s| s.root)
                .map_err(|e| wrap(e, start))
        } else if self.peek_is("mobius(") {
            self.eat("mobius(")?;
            if self.peek_is("eps=") {
                self.eat("eps=")?;
                let eps = self.real()?;
                self.eat(")")?;
                if !(eps > 0.0) {
                    return Err(wrap(Error::BadParameter("eps must be > 0".into()), start));
                }
                Ok(Node::Mobius(Mobius::counterexample(eps)))
            } else {
                let mut p = [ZERO; 4];
                for (i, key) in ["a=", "b=", "c=", "d="].iter().enumerate() {
                    if i > 0 {
                        self.eat(",")?;
                    }
                    self.eat(key)?;
                    p[i] = self.complex()?;
                }
                self.eat(")")?;
                Ok(Node::Mobius(Mobius {
                    a: p[0],
                    b: p[1],
                    c: p[2],
                    d: p[3],
                }))
            }
        } else if self.peek_is("dilate(") {
            self.eat("dilate(")?;
            let inner = self.node()?;
            self.eat(",")?;
            let t = self.real()?;
            self.eat(")")?;
            Ok(Node::Dilate(Box::new(inner), t))
        } else if self.peek_is("scale(") {
            self.eat("scale(")?;
            let inner = self.node()?;
            self.eat(",")?;
            let c = if self.peek_is("(") {
                self.complex()?
            } else {
                Complex64::new(self.real()?, 0.0)
            };
            self.eat(")")?;
            Ok(Node::Scale(c, Box::new(inner)))
        } else {
            for (lit, kind) in [("sum(", 0), ("prod(", 1), ("comp(", 2)] {
                if self.peek_is(lit) {
                    self.eat(lit)?;
                    let a = Box::new(self.node()?);
                    self.eat(",")?;
                    let b = Box::new(self.node()?);
                    self.eat(")")?;
                    return Ok(match kind {
                        0 => Node::Sum(a, b),
                        1 => Node::Product(a, b),
                        _ => Node::Compose { outer: a, inner: b },
                    });
                }
            }
            Err(self.error(
                "one of poly[, mono(, blaschke[, omit(, mobius(, dilate(, sum(, prod(, comp(, scale(",
            ))
        }
    }
}

/// Parses the function-spec grammar. Validation failures are reported as
/// parse errors at the start of the offending node.
pub fn parse_spec(text: &str) -> Result<FunctionSpec> {
    let mut p = Parser { src: text, pos: 0 };
    let node = p.node()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.error("end of input"));
    }
    FunctionSpec::new(node).map_err(|e| match e {
        Error::BadParameter(msg) => Error::ParseError {
            position: 0,
            expected: "valid parameters".into(),
            found: msg,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn monomial_values() {
        let f = make_family(&Family::Monomial { n: 2 }).unwrap();
        assert_abs_diff_eq!(f.eval(c(0.5, 0.0)).unwrap().re, 0.25, epsilon = 1e-15);
        let g = make_family(&Family::Monomial { n: 3 }).unwrap();
        assert_abs_diff_eq!(g.derivative(c(0.5, 0.0)).unwrap().re, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn counterexample_hits_minus_one() {
        let eps = 0.01;
        let f = make_family(&Family::MobiusCounterexample { eps }).unwrap();
        let v = f.eval(c(-eps / 3.0, 0.0)).unwrap();
        assert!((v + 1.0).norm() <= 1e-12, "{v}");
        assert!(!f.is_analytic());
    }

    #[test]
    fn pole_is_reported() {
        let f = make_family(&Family::MobiusCounterexample { eps: 0.5 }).unwrap();
        assert!(matches!(
            f.eval(c(-0.25, 0.0)),
            Err(Error::PoleAtPoint { .. })
        ));
    }

    #[test]
    fn exp_affine_derivative_at_zero() {
        let f = make_family(&Family::OmitPoint { zeta: 0.125, k: 3.0 }).unwrap();
        let d = f.derivative(Complex64::new(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(d.re, -0.375, epsilon = 1e-15);
        assert!(f.is_analytic());
    }

    #[test]
    fn polynomial_derivative_at_i() {
        let f = parse_spec("poly[0,1,1]").unwrap();
        let d = f.derivative(c(0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(d.re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.im, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn blaschke_normalized_and_derivative() {
        let f = parse_spec("blaschke[(0.5,0),(0,0.3)]").unwrap();
        assert!(f.eval(Complex64::new(0.0, 0.0)).unwrap().norm() < 1e-15);
        let z = c(0.5, 0.0);
        // Zero of the product at 0.5, so f(0.5) = -B(0) = -0.15i.
        let v = f.eval(z).unwrap();
        assert!((v - c(0.0, -0.15)).norm() < 1e-15, "{v}");
    }

    #[test]
    fn max_modulus_examples() {
        let id = parse_spec("mono(1)").unwrap();
        assert_abs_diff_eq!(max_modulus_on_circle(&id, 0.3, 1e-10).unwrap(), 0.3, epsilon = 1e-10);
        let sq = parse_spec("mono(2)").unwrap();
        assert_abs_diff_eq!(max_modulus_on_circle(&sq, 0.5, 1e-10).unwrap(), 0.25, epsilon = 1e-10);
        let om = parse_spec("omit(zeta=0.125,k=3)").unwrap();
        let expected = 0.125 * (3f64.exp() - 1.0);
        assert_abs_diff_eq!(max_modulus_on_circle(&om, 1.0, 1e-10).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn max_modulus_matches_dense_sampling() {
        let f = parse_spec("sum(poly[0,1,0.3,-0.2],blaschke[(0.4,0.2)])").unwrap();
        let dense = (0..200_000)
            .map(|j| {
                let z = Complex64::from_polar(0.8, 2.0 * PI * j as f64 / 200_000.0);
                f.eval(z).unwrap().norm()
            })
            .fold(0.0, f64::max);
        let m = max_modulus_on_circle(&f, 0.8, 1e-10).unwrap();
        assert!(m >= dense - 1e-10 && m - dense < 1e-8, "{m} vs {dense}");
    }

    #[test]
    fn make_family_rejects_bad_parameters() {
        assert!(make_family(&Family::MobiusCounterexample { eps: 0.0 }).is_err());
        assert!(make_family(&Family::Blaschke { zeros: vec![c(1.0, 0.0)] }).is_err());
        assert!(make_family(&Family::Polynomial { coeffs: vec![1.0, 1.0] }).is_err());
        assert!(FunctionSpec::new(Node::Dilate(Box::new(Node::Monomial(1)), 1.5)).is_err());
    }

    #[test]
    fn parse_examples() {
        let id = parse_spec("poly[0,1]").unwrap();
        assert_eq!(id.root(), &Node::Polynomial(vec![0.0, 1.0]));
        let om = parse_spec("omit(zeta=0.125,k=3)").unwrap();
        assert_eq!(om.root(), &Node::ExpAffine { zeta: 0.125, k: 3.0 });
        let mob = parse_spec("mobius(eps=0.01)").unwrap();
        assert_eq!(mob.root(), &Node::Mobius(Mobius::counterexample(0.01)));
        assert!(!mob.is_analytic());
    }

    #[test]
    fn parse_errors_carry_position() {
        match parse_spec("sum(mono(1),mon(2))") {
            Err(Error::ParseError { position, .. }) => assert_eq!(position, 12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_spec("poly[1,1]"), Err(Error::ParseError { .. })));
        assert!(matches!(parse_spec("mono(2) x"), Err(Error::ParseError { .. })));
        assert!(matches!(
            parse_spec("comp(mobius(eps=0.1),mono(1))"),
            Err(Error::ParseError { .. })
        ));
    }

    #[test]
    fn serialize_round_trip_examples() {
        for s in [
            "mono(5)",
            "poly[0,1,0.2]",
            "omit(zeta=0.125,k=3)",
            "mobius(eps=0.01)",
            "blaschke[(0,0),(0.5,-0.25)]",
            "dilate(sum(mono(1),prod(mono(2),poly[0,0.5])),0.9)",
            "comp(omit(zeta=0.9,k=1),scale(mono(1),(0,2.5)))",
            "mobius(a=(1,0),b=(0,0),c=(0.5,0.5),d=(3,0))",
        ] {
            let spec = parse_spec(s).unwrap();
            assert_eq!(serialize_spec(&spec), s);
            assert_eq!(parse_spec(&serialize_spec(&spec)).unwrap(), spec);
        }
    }

    #[test]
    fn dilation_node() {
        let f = parse_spec("omit(zeta=0.125,k=3)").unwrap();
        let g = f.dilate(0.7).unwrap();
        let z = c(0.3, -0.4);
        assert_abs_diff_eq!(
            (g.eval(z).unwrap() - f.eval(z * 0.7).unwrap()).norm(),
            0.0,
            epsilon = 1e-15
        );
    }
}
