use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

type FieldFn = dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync;

/// A closed-form coefficient field (scalar or planar vector) with a declared
/// polynomial degree used for quadrature selection.
#[derive(Clone)]
pub struct Field {
    name: Arc<str>,
    degree: usize,
    value_size: usize,
    f: Arc<FieldFn>,
}

impl Field {
    pub fn constant(v: f64) -> Self {
        Field { name: format!("{v}").into(), degree: 0, value_size: 1, f: Arc::new(move |_| [v, 0.0]) }
    }

    pub fn scalar(name: &str, degree: usize, f: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        Field { name: name.into(), degree, value_size: 1, f: Arc::new(move |x| [f(x), 0.0]) }
    }

    pub fn vector(name: &str, degree: usize, f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> Self {
        Field { name: name.into(), degree, value_size: 2, f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn value_size(&self) -> usize {
        self.value_size
    }

    #[inline]
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        (self.f)(x)
    }
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Field({}, deg {})", self.name, self.degree)
    }
}

/// Integrand vocabulary. `Test(i)` / `Trial(i)` refer to field `i` of the
/// corresponding argument's mixed space.
#[derive(Debug, Clone)]
pub enum Expr {
    Test(usize),
    Trial(usize),
    Coefficient(usize),
    Grad(Box<Expr>),
    Div(Box<Expr>),
    /// Outward unit normal of the current cell's facet.
    Normal,
    /// This cell's side of the jump: `v . n` for vectors, `v n` for scalars.
    Jump(Box<Expr>),
    Field(Field),
    Constant(f64),
    Dot(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

impl Expr {
    pub fn test(field: usize) -> Self {
        Expr::Test(field)
    }

    pub fn trial(field: usize) -> Self {
        Expr::Trial(field)
    }

    pub fn coef(i: usize) -> Self {
        Expr::Coefficient(i)
    }

    pub fn field(f: Field) -> Self {
        Expr::Field(f)
    }

    pub fn constant(v: f64) -> Self {
        Expr::Constant(v)
    }

    pub fn grad(self) -> Self {
        Expr::Grad(Box::new(self))
    }

    pub fn div(self) -> Self {
        Expr::Div(Box::new(self))
    }

    pub fn jump(self) -> Self {
        Expr::Jump(Box::new(self))
    }

    pub fn dot(self, other: Expr) -> Self {
        Expr::Dot(Box::new(self), Box::new(other))
    }

    /// `self . n`.
    pub fn normal_component(self) -> Self {
        self.dot(Expr::Normal)
    }

    /// Renumbers argument fields and coefficients.
    pub(crate) fn remap(&self, test: &dyn Fn(usize) -> usize, trial: &dyn Fn(usize) -> usize, coef: &dyn Fn(usize) -> usize) -> Expr {
        let r = |e: &Expr| Box::new(e.remap(test, trial, coef));
        match self {
            Expr::Test(i) => Expr::Test(test(*i)),
            Expr::Trial(i) => Expr::Trial(trial(*i)),
            Expr::Coefficient(i) => Expr::Coefficient(coef(*i)),
            Expr::Grad(e) => Expr::Grad(r(e)),
            Expr::Div(e) => Expr::Div(r(e)),
            Expr::Normal => Expr::Normal,
            Expr::Jump(e) => Expr::Jump(r(e)),
            Expr::Field(f) => Expr::Field(f.clone()),
            Expr::Constant(v) => Expr::Constant(*v),
            Expr::Dot(a, b) => Expr::Dot(r(a), r(b)),
            Expr::Mul(a, b) => Expr::Mul(r(a), r(b)),
            Expr::Add(a, b) => Expr::Add(r(a), r(b)),
            Expr::Neg(e) => Expr::Neg(r(e)),
        }
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(rhs))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(Expr::Neg(Box::new(rhs))))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(rhs))
    }
}

impl Mul<Expr> for f64 {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Mul(Box::new(Expr::Constant(self)), Box::new(rhs))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}
