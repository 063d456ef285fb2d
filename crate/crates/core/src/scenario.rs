//! Scenario files: a line-oriented, round-trippable description of a
//! verification run (grid, base metric, frame, direction field, times,
//! regions, tolerances), plus the restricted expression grammar used for
//! field definitions.
//!
//! Grammar of a scenario file (one `key = value` per line, `#` comments):
//!
//! ```text
//! name = rotation-t3
//! dim = 3
//! res = 64
//! seed = 7
//! g0 = flat | conformal EXPR | file PATH
//! frame = identity | generator | file PATH
//! gen A B = EXPR          # generator coefficient V_AB (1-based, A < B)
//! h = eigen | file PATH
//! m = 1 1 1
//! lambda I = EXPR | balance
//! sblock I A B = EXPR    # block I entry (A, B); last diagonal balances
//! times = 0 0.5 1
//! region NAME = lo1 hi1 lo2 hi2 ...   # fractions of [0,1) per axis
//! gap_tol = 1e-6
//! margin_tol = 1e-4
//! eps = 0.01              # optional cluster half-width override
//! eps_divisor = 24000
//! fit_window = 3 6
//! spike_c = 10
//! ```
//!
//! Expressions use `+ - * /`, unary minus, `sin cos exp`, the constant
//! `pi`, decimal literals, and the variables `x1..x8`. Serialisation is
//! canonical (fully parenthesised, shortest-round-trip numerals), so
//! parse -> serialize -> parse is the identity.
//!
//! Generator entries must make exp(V) periodic on the torus: periodic
//! coefficients always qualify, and a winding term like `2*pi*x1` only
//! when it is alone in its rotation plane and no other plane interferes
//! (a full turn is the identity in one plane, but exponentials of
//! non-commuting planes do not split).

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cluster::{BlockFrame, ClusterSpec, DEFAULT_EPS_DIVISOR};
use crate::error::{Error, Result};
use crate::field::{
    assemble_endo, frame_from_generator, gram_schmidt_frame, BlockData, EndoField, FrameField,
    MatField, MetricField, Region, ScalarField, TorusGrid,
};
use crate::symcore::Multiplicity;
use nalgebra::DMatrix;

/// Expression AST over the restricted grammar.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    /// 0-based variable index for x1..x8.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Exp(a) => a.eval(x).exp(),
        }
    }

    /// Canonical fully parenthesised form; reparses to the same tree.
    pub fn to_text(&self) -> String {
        match self {
            Expr::Num(v) => format!("{v}"),
            Expr::Pi => "pi".into(),
            Expr::Var(i) => format!("x{}", i + 1),
            Expr::Neg(a) => format!("(-{})", a.to_text()),
            Expr::Add(a, b) => format!("({} + {})", a.to_text(), b.to_text()),
            Expr::Sub(a, b) => format!("({} - {})", a.to_text(), b.to_text()),
            Expr::Mul(a, b) => format!("({} * {})", a.to_text(), b.to_text()),
            Expr::Div(a, b) => format!("({} / {})", a.to_text(), b.to_text()),
            Expr::Sin(a) => format!("sin({})", a.to_text()),
            Expr::Cos(a) => format!("cos({})", a.to_text()),
            Expr::Exp(a) => format!("exp({})", a.to_text()),
        }
    }

    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Config(format!(
                "trailing tokens in expression '{src}'"
            )));
        }
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '-' => {
                out.push(Tok::Minus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '/' => {
                out.push(Tok::Slash);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || chars[i] == '.'
                        || chars[i] == 'e'
                        || chars[i] == 'E'
                        || ((chars[i] == '+' || chars[i] == '-')
                            && i > start
                            && (chars[i - 1] == 'e' || chars[i - 1] == 'E')))
                {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number '{text}'")))?;
                out.push(Tok::Num(v));
            }
            'a'..='z' | 'A'..='Z' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Ident(chars[start..i].iter().collect()));
            }
            other => {
                return Err(Error::Config(format!(
                    "unexpected character '{other}' in expression"
                )))
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.next();
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.next();
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.next();
                    acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.next();
                    acc = Expr::Div(Box::new(acc), Box::new(self.factor()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Tok::Minus) => Ok(Expr::Neg(Box::new(self.factor()?))),
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Tok::RParen) => Ok(e),
                    _ => Err(Error::Config("unbalanced parenthesis".into())),
                }
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "pi" => Ok(Expr::Pi),
                "sin" | "cos" | "exp" => {
                    match self.next() {
                        Some(Tok::LParen) => {}
                        _ => {
                            return Err(Error::Config(format!(
                                "function '{name}' needs parentheses"
                            )))
                        }
                    }
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Tok::RParen) => {}
                        _ => return Err(Error::Config("unbalanced parenthesis".into())),
                    }
                    Ok(match name.as_str() {
                        "sin" => Expr::Sin(Box::new(arg)),
                        "cos" => Expr::Cos(Box::new(arg)),
                        _ => Expr::Exp(Box::new(arg)),
                    })
                }
                v if v.starts_with('x') => {
                    let idx: usize = v[1..]
                        .parse()
                        .map_err(|_| Error::Config(format!("bad variable '{v}'")))?;
                    if !(1..=8).contains(&idx) {
                        return Err(Error::Config(format!("variable '{v}' out of range")));
                    }
                    Ok(Expr::Var(idx - 1))
                }
                other => Err(Error::Config(format!("unknown identifier '{other}'"))),
            },
            other => Err(Error::Config(format!("unexpected token {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetricSpec {
    Flat,
    Conformal(Expr),
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameSpec {
    Identity,
    /// Antisymmetric generator entries (a, b, expr), 1-based, a < b.
    Generator(Vec<(usize, usize, Expr)>),
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    Expr(Expr),
    /// Balance the pointwise trace against the other eigenvalue fields.
    Balance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EndoSpec {
    Eigen {
        m: Vec<usize>,
        lambdas: Vec<LambdaSpec>,
        /// Block entries (block, a, b, expr), all 1-based, a <= b; the last
        /// diagonal entry of each block balances the block trace.
        sblocks: Vec<(usize, usize, usize, Expr)>,
    },
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub dim: usize,
    pub res: usize,
    pub seed: u64,
    pub g0: MetricSpec,
    pub frame: FrameSpec,
    pub h: EndoSpec,
    pub times: Vec<f64>,
    /// Named sub-boxes as per-axis fractions (lo, hi) of [0, 1].
    pub regions: BTreeMap<String, Vec<(f64, f64)>>,
    pub gap_tol: f64,
    pub margin_tol: f64,
    pub eps: Option<f64>,
    pub eps_divisor: f64,
    pub fit_window: (f64, f64),
    pub spike_c: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            dim: 2,
            res: 16,
            seed: 0,
            g0: MetricSpec::Flat,
            frame: FrameSpec::Identity,
            h: EndoSpec::Eigen {
                m: vec![1, 1],
                lambdas: vec![LambdaSpec::Expr(Expr::Num(1.0)), LambdaSpec::Balance],
                sblocks: Vec::new(),
            },
            times: vec![0.0, 0.5, 1.0],
            regions: BTreeMap::new(),
            gap_tol: 1e-6,
            margin_tol: 1e-4,
            eps: None,
            eps_divisor: DEFAULT_EPS_DIVISOR,
            fit_window: (3.0, 6.0),
            spike_c: 10.0,
        }
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

impl Scenario {
    pub fn parse(src: &str) -> Result<Scenario> {
        let mut sc = Scenario::default();
        let mut gen_entries = Vec::new();
        let mut lambdas: BTreeMap<usize, LambdaSpec> = BTreeMap::new();
        let mut sblocks = Vec::new();
        let mut m: Option<Vec<usize>> = None;
        let mut saw_frame_generator = false;
        let mut h_kind: Option<String> = None;
        for (lineno, raw) in src.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let key_tokens: Vec<&str> = key.split_whitespace().collect();
            let value = value.trim();
            let bad = |msg: &str| Error::Config(format!("line {}: {msg}", lineno + 1));
            match key_tokens.as_slice() {
                ["name"] => sc.name = value.to_string(),
                ["dim"] => sc.dim = value.parse().map_err(|_| bad("bad dim"))?,
                ["res"] => sc.res = value.parse().map_err(|_| bad("bad res"))?,
                ["seed"] => sc.seed = value.parse().map_err(|_| bad("bad seed"))?,
                ["g0"] => {
                    sc.g0 = if value == "flat" {
                        MetricSpec::Flat
                    } else if let Some(rest) = value.strip_prefix("conformal ") {
                        MetricSpec::Conformal(Expr::parse(rest)?)
                    } else if let Some(rest) = value.strip_prefix("file ") {
                        MetricSpec::File(rest.trim().to_string())
                    } else {
                        return Err(bad("g0 must be flat | conformal EXPR | file PATH"));
                    };
                }
                ["frame"] => {
                    if value == "identity" {
                        sc.frame = FrameSpec::Identity;
                    } else if value == "generator" {
                        saw_frame_generator = true;
                    } else if let Some(rest) = value.strip_prefix("file ") {
                        sc.frame = FrameSpec::File(rest.trim().to_string());
                    } else {
                        return Err(bad("frame must be identity | generator | file PATH"));
                    }
                }
                ["gen", a, b] => {
                    let a: usize = a.parse().map_err(|_| bad("bad gen row"))?;
                    let b: usize = b.parse().map_err(|_| bad("bad gen col"))?;
                    if a >= b {
                        return Err(bad("generator entries need a < b"));
                    }
                    gen_entries.push((a, b, Expr::parse(value)?));
                }
                ["h"] => {
                    if value == "eigen" {
                        h_kind = Some("eigen".into());
                    } else if let Some(rest) = value.strip_prefix("file ") {
                        h_kind = Some(format!("file {}", rest.trim()));
                    } else {
                        return Err(bad("h must be eigen | file PATH"));
                    }
                }
                ["m"] => {
                    let parts: Vec<usize> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| bad("bad multiplicity part")))
                        .collect::<Result<_>>()?;
                    m = Some(parts);
                }
                ["lambda", i] => {
                    let i: usize = i.parse().map_err(|_| bad("bad lambda index"))?;
                    let spec = if value == "balance" {
                        LambdaSpec::Balance
                    } else {
                        LambdaSpec::Expr(Expr::parse(value)?)
                    };
                    lambdas.insert(i, spec);
                }
                ["sblock", i, a, b] => {
                    let i: usize = i.parse().map_err(|_| bad("bad block index"))?;
                    let a: usize = a.parse().map_err(|_| bad("bad block row"))?;
                    let b: usize = b.parse().map_err(|_| bad("bad block col"))?;
                    if a > b {
                        return Err(bad("block entries use a <= b"));
                    }
                    sblocks.push((i, a, b, Expr::parse(value)?));
                }
                ["times"] => {
                    sc.times = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| bad("bad time")))
                        .collect::<Result<_>>()?;
                }
                ["region", name] => {
                    let vals: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| bad("bad region bound")))
                        .collect::<Result<_>>()?;
                    if vals.len() % 2 != 0 {
                        return Err(bad("region needs lo hi pairs"));
                    }
                    let pairs: Vec<(f64, f64)> =
                        vals.chunks(2).map(|c| (c[0], c[1])).collect();
                    sc.regions.insert(name.to_string(), pairs);
                }
                ["gap_tol"] => sc.gap_tol = value.parse().map_err(|_| bad("bad gap_tol"))?,
                ["margin_tol"] => {
                    sc.margin_tol = value.parse().map_err(|_| bad("bad margin_tol"))?
                }
                ["eps"] => sc.eps = Some(value.parse().map_err(|_| bad("bad eps"))?),
                ["eps_divisor"] => {
                    sc.eps_divisor = value.parse().map_err(|_| bad("bad eps_divisor"))?
                }
                ["fit_window"] => {
                    let vals: Vec<f64> = value
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| bad("bad fit window")))
                        .collect::<Result<_>>()?;
                    if vals.len() != 2 {
                        return Err(bad("fit_window needs two values"));
                    }
                    sc.fit_window = (vals[0], vals[1]);
                }
                ["spike_c"] => sc.spike_c = value.parse().map_err(|_| bad("bad spike_c"))?,
                other => {
                    return Err(bad(&format!("unknown key {other:?}")));
                }
            }
        }
        if saw_frame_generator {
            gen_entries.sort_by_key(|&(a, b, _)| (a, b));
            sc.frame = FrameSpec::Generator(gen_entries);
        } else if !gen_entries.is_empty() {
            return Err(Error::Config(
                "gen entries given but frame is not 'generator'".into(),
            ));
        }
        match h_kind.as_deref() {
            Some("eigen") | None => {
                let m = m.ok_or_else(|| Error::Config("h = eigen needs m".into()))?;
                let l = m.len();
                let mut ls = Vec::with_capacity(l);
                for i in 1..=l {
                    ls.push(lambdas.remove(&i).ok_or_else(|| {
                        Error::Config(format!("missing lambda {i} (of {l})"))
                    })?);
                }
                if !lambdas.is_empty() {
                    return Err(Error::Config("lambda index out of range".into()));
                }
                sblocks.sort_by_key(|&(i, a, b, _)| (i, a, b));
                sc.h = EndoSpec::Eigen {
                    m,
                    lambdas: ls,
                    sblocks,
                };
            }
            Some(other) => {
                let path = other.strip_prefix("file ").expect("file kind");
                sc.h = EndoSpec::File(path.to_string());
            }
        }
        Ok(sc)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut push = |line: String| {
            out.push_str(&line);
            out.push('\n');
        };
        push(format!("name = {}", self.name));
        push(format!("dim = {}", self.dim));
        push(format!("res = {}", self.res));
        push(format!("seed = {}", self.seed));
        match &self.g0 {
            MetricSpec::Flat => push("g0 = flat".into()),
            MetricSpec::Conformal(e) => push(format!("g0 = conformal {}", e.to_text())),
            MetricSpec::File(p) => push(format!("g0 = file {p}")),
        }
        match &self.frame {
            FrameSpec::Identity => push("frame = identity".into()),
            FrameSpec::Generator(entries) => {
                push("frame = generator".into());
                for (a, b, e) in entries {
                    push(format!("gen {a} {b} = {}", e.to_text()));
                }
            }
            FrameSpec::File(p) => push(format!("frame = file {p}")),
        }
        match &self.h {
            EndoSpec::Eigen {
                m,
                lambdas,
                sblocks,
            } => {
                push("h = eigen".into());
                push(format!(
                    "m = {}",
                    m.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(" ")
                ));
                for (i, l) in lambdas.iter().enumerate() {
                    match l {
                        LambdaSpec::Balance => push(format!("lambda {} = balance", i + 1)),
                        LambdaSpec::Expr(e) => {
                            push(format!("lambda {} = {}", i + 1, e.to_text()))
                        }
                    }
                }
                for (i, a, b, e) in sblocks {
                    push(format!("sblock {i} {a} {b} = {}", e.to_text()));
                }
            }
            EndoSpec::File(p) => push(format!("h = file {p}")),
        }
        push(format!(
            "times = {}",
            self.times.iter().map(|t| fmt_f64(*t)).collect::<Vec<_>>().join(" ")
        ));
        for (name, pairs) in &self.regions {
            let body = pairs
                .iter()
                .map(|(lo, hi)| format!("{} {}", fmt_f64(*lo), fmt_f64(*hi)))
                .collect::<Vec<_>>()
                .join(" ");
            push(format!("region {name} = {body}"));
        }
        push(format!("gap_tol = {}", fmt_f64(self.gap_tol)));
        push(format!("margin_tol = {}", fmt_f64(self.margin_tol)));
        if let Some(eps) = self.eps {
            push(format!("eps = {}", fmt_f64(eps)));
        }
        push(format!("eps_divisor = {}", fmt_f64(self.eps_divisor)));
        push(format!(
            "fit_window = {} {}",
            fmt_f64(self.fit_window.0),
            fmt_f64(self.fit_window.1)
        ));
        push(format!("spike_c = {}", fmt_f64(self.spike_c)));
        out
    }

    pub fn load(path: &std::path::Path) -> Result<Scenario> {
        let src = std::fs::read_to_string(path)?;
        Scenario::parse(&src)
    }

    /// Materialise the scenario into fields. Relative file paths resolve
    /// against `base_dir`.
    pub fn build(&self, base_dir: &std::path::Path) -> Result<Built> {
        let grid = TorusGrid::new(self.dim, self.res)?;
        let n = self.dim;
        let g0 = match &self.g0 {
            MetricSpec::Flat => MetricField::flat(grid),
            MetricSpec::Conformal(expr) => {
                let phi = ScalarField::from_fn(grid, |x| expr.eval(x));
                MetricField::conformal(grid, &phi)
            }
            MetricSpec::File(p) => {
                let mat = read_mat(base_dir, p)?;
                MetricField::new(mat)?
            }
        };
        let frame = match &self.frame {
            FrameSpec::Identity => gram_schmidt_frame(&g0),
            FrameSpec::Generator(entries) => {
                let v = MatField::from_fn(grid, n, n, |x| {
                    let mut m = DMatrix::zeros(n, n);
                    for (a, b, e) in entries {
                        let val = e.eval(x);
                        m[(a - 1, b - 1)] = val;
                        m[(b - 1, a - 1)] = -val;
                    }
                    m
                });
                frame_from_generator(&g0, &v)?
            }
            FrameSpec::File(p) => {
                let mat = read_mat(base_dir, p)?;
                FrameField::new(mat, &g0, 1e-8)?
            }
        };
        let frame = Arc::new(frame);
        let (h, m, lambdas, blocks) = match &self.h {
            EndoSpec::File(p) => {
                let mat = read_mat(base_dir, p)?;
                let h = EndoField::new(Arc::clone(&frame), mat)?;
                (h, None, Vec::new(), Vec::new())
            }
            EndoSpec::Eigen {
                m,
                lambdas,
                sblocks,
            } => {
                let mult = Multiplicity::new(m.clone())?;
                if mult.total() != n {
                    return Err(Error::Config(format!(
                        "multiplicity sums to {}, dim is {n}",
                        mult.total()
                    )));
                }
                // Blocks first (their traces enter the balance).
                let mut blocks: Vec<MatField> = mult
                    .parts()
                    .iter()
                    .map(|&mi| MatField::zeros(grid, mi, mi))
                    .collect();
                for (bi, a, b, e) in sblocks {
                    let i = bi - 1;
                    if i >= blocks.len() {
                        return Err(Error::Config(format!("sblock index {bi} out of range")));
                    }
                    let mi = mult.parts()[i];
                    if *a > mi || *b > mi {
                        return Err(Error::Config(format!(
                            "sblock entry ({a},{b}) outside block of size {mi}"
                        )));
                    }
                    if *a == mi && *b == mi {
                        return Err(Error::Config(
                            "the last diagonal block entry is balanced, not set".into(),
                        ));
                    }
                    for idx in 0..grid.len() {
                        let x = grid.point(idx);
                        let v = e.eval(&x);
                        blocks[i].set_entry(idx, a - 1, b - 1, v);
                        blocks[i].set_entry(idx, b - 1, a - 1, v);
                    }
                }
                // Balance the last diagonal entry of every block.
                for (i, blk) in blocks.iter_mut().enumerate() {
                    let mi = mult.parts()[i];
                    if mi < 2 {
                        continue;
                    }
                    for idx in 0..grid.len() {
                        let mut tr = 0.0;
                        for a in 0..mi - 1 {
                            tr += blk.entry(idx, a, a);
                        }
                        blk.set_entry(idx, mi - 1, mi - 1, -tr);
                    }
                }
                // Eigenvalue fields with at most one balance slot.
                let balance_count = lambdas
                    .iter()
                    .filter(|l| matches!(l, LambdaSpec::Balance))
                    .count();
                if balance_count > 1 {
                    return Err(Error::Config("at most one lambda may balance".into()));
                }
                let mut fields: Vec<Option<ScalarField>> = lambdas
                    .iter()
                    .map(|l| match l {
                        LambdaSpec::Expr(e) => {
                            Some(ScalarField::from_fn(grid, |x| e.eval(x)))
                        }
                        LambdaSpec::Balance => None,
                    })
                    .collect();
                if let Some(bal) = fields.iter().position(|f| f.is_none()) {
                    let mb = mult.parts()[bal] as f64;
                    let mut data = vec![0.0; grid.len()];
                    for (idx, v) in data.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (i, f) in fields.iter().enumerate() {
                            if let Some(f) = f {
                                acc += mult.parts()[i] as f64 * f.get(idx);
                            }
                        }
                        // Block traces vanish by construction.
                        *v = -acc / mb;
                    }
                    fields[bal] = Some(ScalarField::from_data(grid, data)?);
                }
                let lam: Vec<ScalarField> =
                    fields.into_iter().map(|f| f.expect("filled")).collect();
                let h = assemble_endo(
                    Arc::clone(&frame),
                    &BlockData {
                        m: &mult,
                        lambdas: &lam,
                        blocks: Some(&blocks),
                    },
                )?;
                (h, Some(mult), lam, blocks)
            }
        };
        let full = Region::full(&grid);
        let mut regions = BTreeMap::new();
        for (name, pairs) in &self.regions {
            if pairs.len() != n {
                return Err(Error::Config(format!(
                    "region '{name}' has {} axes, grid has {n}",
                    pairs.len()
                )));
            }
            let lo: Vec<usize> = pairs
                .iter()
                .map(|(l, _)| (l * self.res as f64).round() as usize)
                .collect();
            let hi: Vec<usize> = pairs
                .iter()
                .map(|(_, h)| ((h * self.res as f64).round() as usize).min(self.res))
                .collect();
            regions.insert(name.clone(), Region::new(lo, hi, &grid)?);
        }
        Ok(Built {
            grid,
            g0,
            frame,
            h,
            m,
            lambdas,
            blocks,
            regions,
            full,
            scenario: self.clone(),
        })
    }
}

fn read_mat(base: &std::path::Path, rel: &str) -> Result<MatField> {
    let path = if std::path::Path::new(rel).is_absolute() {
        std::path::PathBuf::from(rel)
    } else {
        base.join(rel)
    };
    let file = std::fs::File::open(&path)?;
    let mut reader = std::io::BufReader::new(file);
    MatField::read_text(&mut reader)
}

/// A materialised scenario.
pub struct Built {
    pub grid: TorusGrid,
    pub g0: MetricField,
    pub frame: Arc<FrameField>,
    pub h: EndoField,
    /// Declared clustering, when H came from eigenvalue data.
    pub m: Option<Multiplicity>,
    pub lambdas: Vec<ScalarField>,
    pub blocks: Vec<MatField>,
    pub regions: BTreeMap<String, Region>,
    pub full: Region,
    pub scenario: Scenario,
}

impl Built {
    /// The block frame carried by the declared eigenvalue data: reference
    /// values are grid means shifted to weighted sum zero; eps comes from
    /// the scenario override or r / eps_divisor.
    pub fn block_frame(&self) -> Result<BlockFrame> {
        let m = self
            .m
            .clone()
            .ok_or_else(|| Error::Config("scenario has no declared block data".into()))?;
        let mut stars: Vec<f64> = self
            .lambdas
            .iter()
            .map(|f| f.mean_over(&self.full))
            .collect();
        let n = m.total() as f64;
        let shift: f64 = stars
            .iter()
            .zip(m.parts())
            .map(|(&s, &p)| s * p as f64)
            .sum::<f64>()
            / n;
        for s in &mut stars {
            *s -= shift;
        }
        let spec = ClusterSpec::new(m, stars, self.scenario.eps)?;
        let bf = BlockFrame {
            frame: (*self.frame).clone(),
            lambdas: self.lambdas.clone(),
            blocks: self.blocks.clone(),
            spec,
            region: self.full.clone(),
        };
        bf.audit(&self.h, &self.g0)?;
        Ok(bf)
    }

    /// The cover used by membership checks: the scenario's named regions,
    /// or the full grid when none are declared.
    pub fn cover(&self) -> Vec<Region> {
        if self.regions.is_empty() {
            vec![self.full.clone()]
        } else {
            self.regions.values().cloned().collect()
        }
    }
}
