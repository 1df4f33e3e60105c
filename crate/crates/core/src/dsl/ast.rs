use std::fmt;

/// Parsed composition formula.
///
/// Operator parameters hold the bracket value `c` as written (`con[0.95]`);
/// the interpolation weight is `alpha = 1 - c`. Observation labels are stored
/// zero-based and printed one-based.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Base(String),
    Hm { left: Box<Expr>, right: Box<Expr>, bracket: Option<f64> },
    Con { left: Box<Expr>, right: Box<Expr>, bracket: Option<f64> },
    Post { observations: Vec<usize>, bases: Vec<String> },
}

/// Interpolation weight for an operator bracket.
pub fn alpha_of(bracket: Option<f64>) -> f64 {
    bracket.map_or(0.5, |c| 1.0 - c)
}

impl Expr {
    pub fn base(name: &str) -> Expr {
        Expr::Base(name.to_string())
    }

    pub fn hm(left: Expr, right: Expr, bracket: Option<f64>) -> Expr {
        Expr::Hm { left: Box::new(left), right: Box::new(right), bracket }
    }

    pub fn con(left: Expr, right: Expr, bracket: Option<f64>) -> Expr {
        Expr::Con { left: Box::new(left), right: Box::new(right), bracket }
    }

    /// Observations are zero-based here.
    pub fn post(observations: Vec<usize>, bases: &[&str]) -> Expr {
        Expr::Post { observations, bases: bases.iter().map(|s| s.to_string()).collect() }
    }

    /// Every base name mentioned, in order of first appearance.
    pub fn base_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut Vec<String>) {
        let mut push = |n: &String| {
            if !out.contains(n) {
                out.push(n.clone());
            }
        };
        match self {
            Expr::Base(n) => push(n),
            Expr::Post { bases, .. } => bases.iter().for_each(push),
            Expr::Hm { left, right, .. } | Expr::Con { left, right, .. } => {
                left.collect_names(out);
                right.collect_names(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Base(_) | Expr::Post { .. } => 1,
            Expr::Hm { left, right, .. } | Expr::Con { left, right, .. } => {
                1 + left.depth().max(right.depth())
            }
        }
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parenthesize: bool) -> fmt::Result {
    if parenthesize {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn is_binary(e: &Expr) -> bool {
    matches!(e, Expr::Hm { .. } | Expr::Con { .. })
}

/// Pretty printer. Operators are left-associative with equal precedence, so
/// only a binary right operand needs parentheses.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Base(n) => write!(f, "{n}"),
            Expr::Post { observations, bases } => {
                let obs: Vec<String> = observations.iter().map(|o| (o + 1).to_string()).collect();
                write!(f, "post(y=[{}]; {})", obs.join(","), bases.join(","))
            }
            Expr::Hm { left, right, bracket } | Expr::Con { left, right, bracket } => {
                let kw = if matches!(self, Expr::Hm { .. }) { "hm" } else { "con" };
                write_operand(f, left, false)?;
                write!(f, " {kw}")?;
                if let Some(c) = bracket {
                    write!(f, "[{c}]")?;
                }
                write!(f, " ")?;
                write_operand(f, right, is_binary(right))
            }
        }
    }
}
