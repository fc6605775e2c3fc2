//! Symbolic integer expressions over size symbols, used for range bounds
//! before sizes are known.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;



/// Non-linear leaves of a [`Sym`].
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    Var(String),
    Min(Vec<Sym>),
    Max(Vec<Sym>),
    FloorDiv(Sym, Sym),
    Mul(Sym, Sym),
}

/// `c + Σ k·atom`
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Sym {
    c: i64,
    terms: BTreeMap<Atom, i64>,
}

impl Sym {
    pub fn constant(c: i64) -> Sym {
        Sym { c, terms: BTreeMap::new() }
    }

    pub fn var(name: &str) -> Sym {
        Sym::atom(Atom::Var(name.to_string()))
    }

    fn atom(a: Atom) -> Sym {
        let mut terms = BTreeMap::new();
        terms.insert(a, 1);
        Sym { c: 0, terms }
    }

    pub fn as_const(&self) -> Option<i64> {
        self.terms.is_empty().then_some(self.c)
    }

    fn as_atom(&self) -> Option<&Atom> {
        if self.c == 0 && self.terms.len() == 1 {
            let (a, k) = self.terms.iter().next().unwrap();
            (*k == 1).then_some(a)
        } else {
            None
        }
    }

    pub fn add(&self, o: &Sym) -> Sym {
        let mut r = self.clone();
        r.c += o.c;
        for (a, k) in &o.terms {
            let e = r.terms.entry(a.clone()).or_insert(0);
            *e += k;
            if *e == 0 {
                r.terms.remove(a);
            }
        }
        r
    }

    pub fn add_const(&self, c: i64) -> Sym {
        self.add(&Sym::constant(c))
    }

    pub fn scale(&self, k: i64) -> Sym {
        if k == 0 {
            return Sym::constant(0);
        }
        Sym { c: self.c * k, terms: self.terms.iter().map(|(a, v)| (a.clone(), v * k)).collect() }
    }

    pub fn neg(&self) -> Sym {
        self.scale(-1)
    }

    pub fn sub(&self, o: &Sym) -> Sym {
        self.add(&o.neg())
    }

    pub fn mul(&self, o: &Sym) -> Sym {
        if let Some(k) = self.as_const() {
            return o.scale(k);
        }
        if let Some(k) = o.as_const() {
            return self.scale(k);
        }
        let (a, b) = if self <= o { (self.clone(), o.clone()) } else { (o.clone(), self.clone()) };
        Sym::atom(Atom::Mul(a, b))
    }

    /// Floor division; the divisor must be positive.
    pub fn floor_div(&self, d: &Sym) -> Sym {
        if let Some(dv) = d.as_const() {
            assert!(dv > 0, "floor_div by non-positive constant");
            if dv == 1 {
                return self.clone();
            }
            if let Some(v) = self.as_const() {
                return Sym::constant(num_integer::Integer::div_floor(&v, &dv));
            }
            if self.terms.values().all(|k| k % dv == 0) {
                // (c + dv·t) / dv = t + floor(c / dv)
                let mut r = Sym { c: 0, terms: self.terms.iter().map(|(a, k)| (a.clone(), k / dv)).collect() };
                r.c = num_integer::Integer::div_floor(&self.c, &dv);
                return r;
            }
        }
        if self == d {
            return Sym::constant(1);
        }
        // (k·d + c) / d = k + c / d when c is a constant in [0, d) impossible to
        // prove symbolically in general; only the exact case is folded.
        if self.c == 0 && self.terms.len() == 1 {
            let (a, k) = self.terms.iter().next().unwrap();
            if d.as_atom() == Some(a) {
                return Sym::constant(*k);
            }
        }
        Sym::atom(Atom::FloorDiv(self.clone(), d.clone()))
    }

    /// Ceiling division by a positive divisor.
    pub fn ceil_div(&self, d: &Sym) -> Sym {
        self.add(d).add_const(-1).floor_div(d)
    }

    pub fn min_with(&self, o: &Sym) -> Sym {
        Sym::extremum(vec![self.clone(), o.clone()], true)
    }

    pub fn max_with(&self, o: &Sym) -> Sym {
        Sym::extremum(vec![self.clone(), o.clone()], false)
    }

    pub fn min_all(items: Vec<Sym>) -> Sym {
        Sym::extremum(items, true)
    }

    pub fn max_all(items: Vec<Sym>) -> Sym {
        Sym::extremum(items, false)
    }

    fn extremum(items: Vec<Sym>, is_min: bool) -> Sym {
        let mut flat: Vec<Sym> = Vec::new();
        for it in items {
            match it.as_atom() {
                Some(Atom::Min(v)) if is_min => flat.extend(v.iter().cloned()),
                Some(Atom::Max(v)) if !is_min => flat.extend(v.iter().cloned()),
                _ => flat.push(it),
            }
        }
        let mut keep: Vec<Sym> = Vec::new();
        'outer: for x in flat {
            let mut i = 0;
            while i < keep.len() {
                match x.compare(&keep[i]) {
                    Some(ord) => {
                        let x_wins = if is_min { ord == Ordering::Less } else { ord == Ordering::Greater };
                        if x_wins {
                            keep.remove(i);
                            continue;
                        }
                        continue 'outer;
                    }
                    None => i += 1,
                }
            }
            keep.push(x);
        }
        if keep.len() == 1 {
            return keep.pop().unwrap();
        }
        keep.sort();
        Sym::atom(if is_min { Atom::Min(keep) } else { Atom::Max(keep) })
    }

    /// Ordering when provable assuming every variable is ≥ 1. `Greater` and
    /// `Less` are non-strict unless the difference folds to a constant.
    pub fn compare(&self, o: &Sym) -> Option<Ordering> {
        let d = self.sub(o);
        if d.as_const() == Some(0) {
            return Some(Ordering::Equal);
        }
        if d.is_provably_nonneg() {
            return Some(Ordering::Greater);
        }
        if d.neg().is_provably_nonneg() {
            return Some(Ordering::Less);
        }
        None
    }

    /// `self ≥ 0` under the assumption that all variables are ≥ 1.
    pub fn is_provably_nonneg(&self) -> bool {
        self.lower_bound().is_some_and(|l| l >= 0)
    }

    pub fn is_provably_positive(&self) -> bool {
        self.lower_bound().is_some_and(|l| l >= 1)
    }

    /// A lower bound valid when every variable is ≥ 1, if one is easy to find.
    fn lower_bound(&self) -> Option<i64> {
        let mut lb = self.c;
        for (a, k) in &self.terms {
            if *k < 0 {
                return None;
            }
            let al = match a {
                Atom::Var(_) => 1,
                Atom::Mul(x, y) => {
                    let (lx, ly) = (x.lower_bound()?, y.lower_bound()?);
                    if lx < 0 || ly < 0 {
                        return None;
                    }
                    lx * ly
                }
                Atom::Min(v) => v.iter().map(|s| s.lower_bound()).collect::<Option<Vec<_>>>()?.into_iter().min()?,
                Atom::Max(v) => v.iter().filter_map(|s| s.lower_bound()).max()?,
                Atom::FloorDiv(x, _) => {
                    if x.lower_bound()? >= 0 {
                        0
                    } else {
                        return None;
                    }
                }
            };
            lb += k * al;
        }
        Some(lb)
    }

    pub fn eval(&self, bind: &dyn Fn(&str) -> Option<i64>) -> Result<i64, String> {
        let mut v = self.c;
        for (a, k) in &self.terms {
            let av = match a {
                Atom::Var(n) => bind(n).ok_or_else(|| n.clone())?,
                Atom::Min(xs) => xs.iter().map(|x| x.eval(bind)).collect::<Result<Vec<_>, _>>()?.into_iter().min().unwrap(),
                Atom::Max(xs) => xs.iter().map(|x| x.eval(bind)).collect::<Result<Vec<_>, _>>()?.into_iter().max().unwrap(),
                Atom::FloorDiv(x, d) => {
                    let dv = d.eval(bind)?;
                    if dv <= 0 {
                        return Err(format!("division by non-positive {d}"));
                    }
                    num_integer::Integer::div_floor(&x.eval(bind)?, &dv)
                }
                Atom::Mul(x, y) => x.eval(bind)? * y.eval(bind)?,
            };
            v += k * av;
        }
        Ok(v)
    }

    /// Variables mentioned anywhere in the expression.
    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        for a in self.terms.keys() {
            match a {
                Atom::Var(n) => out.push(n.clone()),
                Atom::Min(v) | Atom::Max(v) => v.iter().for_each(|s| s.collect_vars(out)),
                Atom::FloorDiv(x, y) | Atom::Mul(x, y) => {
                    x.collect_vars(out);
                    y.collect_vars(out);
                }
            }
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &Vec<Sym>| v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        match self {
            Atom::Var(n) => write!(f, "{n}"),
            Atom::Min(v) => write!(f, "min({})", list(v)),
            Atom::Max(v) => write!(f, "max({})", list(v)),
            Atom::FloorDiv(x, d) => write!(f, "floor(({x}) / ({d}))"),
            Atom::Mul(x, y) => write!(f, "({x})*({y})"),
        }
    }
}

impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (a, k) in &self.terms {
            let (sign, mag) = if *k < 0 { ("-", -k) } else { ("+", *k) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            if mag != 1 {
                write!(f, "{mag}*")?;
            }
            write!(f, "{a}")?;
            first = false;
        }
        if first {
            write!(f, "{}", self.c)
        } else if self.c > 0 {
            write!(f, " + {}", self.c)
        } else if self.c < 0 {
            write!(f, " - {}", -self.c)
        } else {
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(n: &str) -> Sym {
        Sym::var(n)
    }

    #[test]
    fn linear_folding() {
        let e = v("M").sub(&v("N")).add_const(1);
        assert_eq!(e.to_string(), "M - N + 1");
        assert_eq!(e.sub(&v("M")).to_string(), "-N + 1");
        assert_eq!(v("M").sub(&v("M")).as_const(), Some(0));
    }

    #[test]
    fn min_drops_dominated() {
        assert_eq!(v("M").min_with(&v("M").add_const(-1)), v("M").add_const(-1));
        assert_eq!(Sym::constant(0).max_with(&Sym::constant(-3)), Sym::constant(0));
        let m = v("M").min_with(&v("N"));
        assert_eq!(m.to_string(), "min(M, N)");
        assert_eq!(m.min_with(&v("N")), m);
    }

    #[test]
    fn exact_division() {
        let e = v("H").scale(4).add_const(6).floor_div(&Sym::constant(2));
        assert_eq!(e, v("H").scale(2).add_const(3));
        let s = v("sh");
        assert_eq!(s.scale(3).floor_div(&s), Sym::constant(3));
    }

    #[test]
    fn provable_signs() {
        assert!(v("M").is_provably_positive());
        assert!(!v("M").sub(&v("N")).is_provably_nonneg());
        assert_eq!(v("M").add_const(1).compare(&v("M")), Some(Ordering::Greater));
    }

    proptest! {
        #[test]
        fn eval_matches_arithmetic(a in 1i64..50, b in 1i64..50, c in -20i64..20, d in 1i64..7) {
            let bind = |n: &str| match n { "A" => Some(a), "B" => Some(b), _ => None };
            let e = v("A").scale(3).sub(&v("B")).add_const(c);
            prop_assert_eq!(e.eval(&bind).unwrap(), 3 * a - b + c);
            prop_assert_eq!(e.floor_div(&Sym::constant(d)).eval(&bind).unwrap(), num_integer::Integer::div_floor(&(3 * a - b + c), &d));
            prop_assert_eq!(e.ceil_div(&Sym::constant(d)).eval(&bind).unwrap(), num_integer::Integer::div_ceil(&(3 * a - b + c), &d));
            prop_assert_eq!(e.min_with(&v("A")).eval(&bind).unwrap(), (3 * a - b + c).min(a));
            prop_assert_eq!(e.max_with(&Sym::constant(0)).eval(&bind).unwrap(), (3 * a - b + c).max(0));
            prop_assert_eq!(v("A").mul(&v("B")).eval(&bind).unwrap(), a * b);
        }
    }
}
