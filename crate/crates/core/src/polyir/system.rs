//! Integer constraint systems over bounded boxes and their emptiness test.

use std::collections::BTreeSet;
use std::fmt;

use num_integer::Integer;

/// `coeffs·x + c = 0` or `coeffs·x + c >= 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Constraint {
    pub coeffs: Vec<i64>,
    pub c: i64,
    pub eq: bool,
}

impl Constraint {
    pub fn ge(coeffs: Vec<i64>, c: i64) -> Self {
        Constraint { coeffs, c, eq: false }
    }

    pub fn eq(coeffs: Vec<i64>, c: i64) -> Self {
        Constraint { coeffs, c, eq: true }
    }

    pub fn eval(&self, x: &[i64]) -> i64 {
        self.c + self.coeffs.iter().zip(x).map(|(a, b)| a * b).sum::<i64>()
    }

    pub fn holds(&self, x: &[i64]) -> bool {
        let v = self.eval(x);
        if self.eq {
            v == 0
        } else {
            v >= 0
        }
    }

    fn is_constant(&self) -> bool {
        self.coeffs.iter().all(|a| *a == 0)
    }

    /// Divide by the coefficient gcd, rounding the constant of inequalities
    /// down. `None` when an equality has no integer solution.
    fn normalized(mut self) -> Option<Self> {
        let g = self.coeffs.iter().fold(0i64, |g, a| g.gcd(a));
        if g > 1 {
            if self.eq {
                if self.c % g != 0 {
                    return None;
                }
                self.c /= g;
            } else {
                self.c = Integer::div_floor(&self.c, &g);
            }
            self.coeffs.iter_mut().for_each(|a| *a /= g);
        }
        if self.eq {
            // Canonical sign: first nonzero coefficient positive.
            if let Some(a) = self.coeffs.iter().find(|a| **a != 0) {
                if *a < 0 {
                    self.coeffs.iter_mut().for_each(|a| *a = -*a);
                    self.c = -self.c;
                }
            }
        }
        Some(self)
    }
}

/// Conjunction of affine constraints over integer variables, each restricted
/// to a half-open box `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct System {
    pub names: Vec<String>,
    pub bounds: Vec<(i64, i64)>,
    pub cons: Vec<Constraint>,
}

impl System {
    pub fn new(names: Vec<String>, bounds: Vec<(i64, i64)>) -> Self {
        assert_eq!(names.len(), bounds.len());
        System { names, bounds, cons: Vec::new() }
    }

    pub fn nvars(&self) -> usize {
        self.bounds.len()
    }

    /// Number of integer points of the box.
    pub fn box_size(&self) -> u128 {
        self.bounds.iter().map(|(l, h)| (h - l).max(0) as u128).product()
    }

    pub fn add(&mut self, c: Constraint) {
        assert_eq!(c.coeffs.len(), self.nvars());
        self.cons.push(c);
    }

    /// Append a fresh variable; existing constraints get a zero coefficient.
    pub fn add_var(&mut self, name: impl Into<String>, lo: i64, hi: i64) -> usize {
        self.names.push(name.into());
        self.bounds.push((lo, hi));
        for c in &mut self.cons {
            c.coeffs.push(0);
        }
        self.nvars() - 1
    }

    pub fn zero(&self) -> Vec<i64> {
        vec![0; self.nvars()]
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.iter().zip(&self.bounds).all(|(v, (l, h))| l <= v && v < h) && self.cons.iter().all(|c| c.holds(x))
    }

    pub fn is_empty(&self) -> bool {
        self.witness().is_none()
    }

    /// Some integer point of the system. Unit-coefficient equalities are
    /// substituted away and bounds tightened first; each independent group
    /// of variables is then enumerated when small or searched otherwise.
    pub fn witness(&self) -> Option<Vec<i64>> {
        let (reduced, subst) = self.presolve()?;
        let n = reduced.nvars();
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut v: usize) -> usize {
            while p[v] != v {
                p[v] = p[p[v]];
                v = p[v];
            }
            v
        }
        for c in &reduced.cons {
            let vs: Vec<usize> = (0..n).filter(|v| c.coeffs[*v] != 0).collect();
            for w in vs.windows(2) {
                let (a, b) = (root(&mut parent, w[0]), root(&mut parent, w[1]));
                parent[a] = b;
            }
        }
        let mut point: Vec<i64> = reduced.bounds.iter().map(|b| b.0).collect();
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
        for v in 0..n {
            let r = root(&mut parent, v);
            groups.entry(r).or_default().push(v);
        }
        for vars in groups.values() {
            let cons: Vec<Constraint> = reduced
                .cons
                .iter()
                .filter(|c| vars.iter().any(|v| c.coeffs[*v] != 0))
                .map(|c| Constraint { coeffs: vars.iter().map(|v| c.coeffs[*v]).collect(), c: c.c, eq: c.eq })
                .collect();
            if cons.is_empty() {
                continue;
            }
            let mut sub = System::new(vars.iter().map(|v| reduced.names[*v].clone()).collect(), vars.iter().map(|v| reduced.bounds[*v]).collect());
            sub.cons = cons;
            let w = if sub.box_size() <= BRUTE_FORCE_LIMIT { sub.brute_force() } else { sub.solve_exact() }?;
            for (k, v) in vars.iter().enumerate() {
                point[*v] = w[k];
            }
        }
        for (v, e) in subst.iter().rev() {
            let a = e.coeffs[*v];
            let rest: i64 = e.c + e.coeffs.iter().enumerate().filter(|(k, _)| k != v).map(|(k, x)| x * point[k]).sum::<i64>();
            point[*v] = -a * rest;
        }
        debug_assert!(self.contains(&point));
        Some(point)
    }

    /// Substitute variables fixed by unit-coefficient equalities and tighten
    /// the remaining bounds. Returns the reduced system (same variables, with
    /// substituted ones unused) and the substitutions in order.
    fn presolve(&self) -> Option<(System, Vec<(usize, Constraint)>)> {
        if self.bounds.iter().any(|(l, h)| h <= l) {
            return None;
        }
        let n = self.nvars();
        let mut bounds = self.bounds.clone();
        let mut cons = simplify(self.cons.clone())?;
        let mut subst = Vec::new();
        loop {
            let pick = cons.iter().enumerate().find_map(|(k, c)| {
                if !c.eq {
                    return None;
                }
                let v = (0..n).find(|v| c.coeffs[*v].abs() == 1)?;
                Some((k, v))
            });
            let Some((k, v)) = pick else { break };
            let e = cons.remove(k);
            let a = e.coeffs[v];
            let mut next = Vec::with_capacity(cons.len() + 2);
            for d in cons {
                let b = d.coeffs[v];
                if b == 0 {
                    next.push(d);
                    continue;
                }
                let coeffs = d.coeffs.iter().zip(&e.coeffs).map(|(x, y)| x - b * a * y).collect();
                next.push(Constraint { coeffs, c: d.c - b * a * e.c, eq: d.eq });
            }
            // v = -a·(rest + c) must stay within its bounds.
            let (lo, hi) = bounds[v];
            let mut rest: Vec<i64> = e.coeffs.iter().map(|x| -a * x).collect();
            rest[v] = 0;
            next.push(Constraint::ge(rest.clone(), -a * e.c - lo));
            next.push(Constraint::ge(rest.iter().map(|x| -x).collect(), hi - 1 + a * e.c));
            bounds[v] = (0, 1);
            subst.push((v, e));
            cons = simplify(next)?;
        }
        let eliminated: Vec<bool> = (0..n).map(|v| subst.iter().any(|(w, _)| *w == v)).collect();
        tighten(&mut bounds, &cons, &eliminated)?;
        let mut sys = System::new(self.names.clone(), bounds);
        sys.cons = cons;
        Some((sys, subst))
    }

    /// Exhaustive enumeration of the box, lexicographically first point.
    pub fn brute_force(&self) -> Option<Vec<i64>> {
        let mut found = None;
        for_each_box_point(&self.bounds, &mut |p| {
            if found.is_none() && self.cons.iter().all(|c| c.holds(p)) {
                found = Some(p.to_vec());
                false
            } else {
                found.is_none()
            }
        });
        found
    }

    /// Exact search: Fourier-Motzkin projection bounds each variable in turn,
    /// then every integer value in the projected interval is tried.
    pub fn solve_exact(&self) -> Option<Vec<i64>> {
        if self.bounds.iter().any(|(l, h)| h <= l) {
            return None;
        }
        let n = self.nvars();
        let mut cons: Vec<Constraint> = Vec::new();
        for c in &self.cons {
            cons.push(c.clone().normalized()?);
        }
        for (v, (lo, hi)) in self.bounds.iter().enumerate() {
            let mut a = vec![0; n];
            a[v] = 1;
            cons.push(Constraint::ge(a.clone(), -lo));
            a[v] = -1;
            cons.push(Constraint::ge(a, hi - 1));
        }
        let cons = simplify(cons)?;
        let mut point = Vec::with_capacity(n);
        search(&cons, n, &mut point).then_some(point)
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = self
            .names
            .iter()
            .zip(&self.bounds)
            .map(|(n, (l, h))| format!("{l} <= {n} < {h}"))
            .collect();
        for c in &self.cons {
            parts.push(format!("{} {} 0", affine_text(&c.coeffs, c.c, &self.names), if c.eq { "=" } else { ">=" }));
        }
        write!(f, "{}", parts.join(" and "))
    }
}

/// `3i - j + 2` style rendering.
pub fn affine_text(coeffs: &[i64], c: i64, names: &[String]) -> String {
    let mut s = String::new();
    for (a, n) in coeffs.iter().zip(names) {
        if *a == 0 {
            continue;
        }
        let mag = a.abs();
        if s.is_empty() {
            if *a < 0 {
                s.push('-');
            }
        } else {
            s.push_str(if *a < 0 { " - " } else { " + " });
        }
        if mag != 1 {
            s.push_str(&format!("{mag}*"));
        }
        s.push_str(n);
    }
    if s.is_empty() {
        return c.to_string();
    }
    if c > 0 {
        s.push_str(&format!(" + {c}"));
    } else if c < 0 {
        s.push_str(&format!(" - {}", -c));
    }
    s
}

pub const BRUTE_FORCE_LIMIT: u128 = 100_000;

/// Constraint count above which projection stops eliminating and drops the
/// constraints that still mention eliminated variables (a sound relaxation).
const PROJECTION_CAP: usize = 400;

/// Visit box points in lexicographic order until `f` returns false.
pub fn for_each_box_point(b: &[(i64, i64)], f: &mut dyn FnMut(&[i64]) -> bool) {
    if b.iter().any(|(l, h)| h <= l) {
        return;
    }
    let mut p: Vec<i64> = b.iter().map(|r| r.0).collect();
    loop {
        if !f(&p) {
            return;
        }
        let mut d = b.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            p[d] += 1;
            if p[d] < b[d].1 {
                break;
            }
            p[d] = b[d].0;
        }
    }
}

/// Interval propagation over the constraints; `None` when some bound
/// becomes empty.
fn tighten(bounds: &mut [(i64, i64)], cons: &[Constraint], skip: &[bool]) -> Option<()> {
    for _ in 0..32 {
        let mut changed = false;
        for c in cons {
            let sides: &[i64] = if c.eq { &[1, -1] } else { &[1] };
            for s in sides {
                // s·(a·x + c) >= 0
                let (mut max_sum, mut c0) = (0i128, (s * c.c) as i128);
                for (v, a) in c.coeffs.iter().enumerate() {
                    let a = (s * a) as i128;
                    if a == 0 {
                        continue;
                    }
                    let (l, h) = (bounds[v].0 as i128, bounds[v].1 as i128 - 1);
                    max_sum += (a * l).max(a * h);
                }
                c0 += max_sum;
                if c0 < 0 {
                    return None;
                }
                for (v, a) in c.coeffs.iter().enumerate() {
                    let a = (s * a) as i128;
                    if a == 0 || skip[v] {
                        continue;
                    }
                    let (l, h) = (bounds[v].0 as i128, bounds[v].1 as i128 - 1);
                    // a·x >= a·(best x) - c0
                    let others = c0 - (a * l).max(a * h);
                    if a > 0 {
                        let lo = Integer::div_ceil(&(-others), &a);
                        if lo > l {
                            bounds[v].0 = lo as i64;
                            changed = true;
                        }
                    } else {
                        let hi = Integer::div_floor(&others, &(-a));
                        if hi < h {
                            bounds[v].1 = hi as i64 + 1;
                            changed = true;
                        }
                    }
                    if bounds[v].1 <= bounds[v].0 {
                        return None;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Some(())
}

/// Normalize, check constant constraints and drop duplicates.
fn simplify(cons: Vec<Constraint>) -> Option<Vec<Constraint>> {
    let mut set = BTreeSet::new();
    for c in cons {
        let c = c.normalized()?;
        if c.is_constant() {
            if (c.eq && c.c != 0) || (!c.eq && c.c < 0) {
                return None;
            }
            continue;
        }
        set.insert(c);
    }
    // Opposite inequalities with equal coefficients: a·x + c >= 0, -a·x + d >= 0.
    let list: Vec<Constraint> = set.into_iter().collect();
    for c in list.iter().filter(|c| !c.eq) {
        let neg: Vec<i64> = c.coeffs.iter().map(|a| -a).collect();
        if let Some(d) = list.iter().find(|d| !d.eq && d.coeffs == neg) {
            if c.c + d.c < 0 {
                return None;
            }
        }
    }
    Some(list)
}

/// Eliminate variable `v`: exact substitution through an equality when one
/// mentions it, Fourier-Motzkin pairing otherwise.
fn eliminate(cons: &[Constraint], v: usize) -> Option<Vec<Constraint>> {
    if let Some(e) = cons.iter().find(|c| c.eq && c.coeffs[v] != 0) {
        let a = e.coeffs[v];
        let mut out = Vec::with_capacity(cons.len());
        for c in cons {
            if std::ptr::eq(c, e) {
                continue;
            }
            let b = c.coeffs[v];
            if b == 0 {
                out.push(c.clone());
                continue;
            }
            // |a|·c - sign(a)·b·e cancels v and keeps the inequality direction.
            let s = a.signum();
            let coeffs = c.coeffs.iter().zip(&e.coeffs).map(|(x, y)| a.abs() * x - s * b * y).collect();
            out.push(Constraint { coeffs, c: a.abs() * c.c - s * b * e.c, eq: c.eq });
        }
        return simplify(out);
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut out = Vec::new();
    for c in cons {
        match c.coeffs[v].signum() {
            1 => pos.push(c),
            -1 => neg.push(c),
            _ => out.push(c.clone()),
        }
    }
    for p in &pos {
        for q in &neg {
            let (a, b) = (p.coeffs[v], -q.coeffs[v]);
            let coeffs = p.coeffs.iter().zip(&q.coeffs).map(|(x, y)| b * x + a * y).collect();
            out.push(Constraint::ge(coeffs, b * p.c + a * q.c));
        }
    }
    simplify(out)
}

/// Interval of variable `v` implied by constraints mentioning only `v`.
/// `None` when that interval is empty.
fn var_interval(cons: &[Constraint], v: usize) -> Option<(i64, i64)> {
    let mut lo = i64::MIN;
    let mut hi = i64::MAX;
    for c in cons {
        let a = c.coeffs[v];
        if a == 0 || c.coeffs.iter().enumerate().any(|(k, x)| k != v && *x != 0) {
            continue;
        }
        if c.eq {
            if (-c.c) % a != 0 {
                return None;
            }
            let x = -c.c / a;
            lo = lo.max(x);
            hi = hi.min(x);
        } else if a > 0 {
            // a·x >= -c
            lo = lo.max(Integer::div_ceil(&(-c.c), &a));
        } else {
            // -|a|·x >= -c  →  x <= c / |a|
            hi = hi.min(Integer::div_floor(&c.c, &(-a)));
        }
    }
    (lo <= hi).then_some((lo, hi))
}

fn substitute(cons: &[Constraint], v: usize, x: i64) -> Option<Vec<Constraint>> {
    simplify(
        cons.iter()
            .map(|c| {
                let mut d = c.clone();
                d.c += d.coeffs[v] * x;
                d.coeffs[v] = 0;
                d
            })
            .collect(),
    )
}

/// Assign variables in index order. At each depth the later variables are
/// projected out to bound the current one.
fn search(cons: &[Constraint], n: usize, point: &mut Vec<i64>) -> bool {
    let d = point.len();
    if d == n {
        return cons.is_empty();
    }
    let mut proj = cons.to_vec();
    for v in (d + 1..n).rev() {
        if !proj.iter().any(|c| c.coeffs[v] != 0) {
            continue;
        }
        match eliminate(&proj, v) {
            None => return false,
            Some(p) if p.len() > PROJECTION_CAP => {
                proj = p.into_iter().filter(|c| c.coeffs[d + 1..].iter().all(|a| *a == 0)).collect();
                break;
            }
            Some(p) => proj = p,
        }
    }
    let proj: Vec<Constraint> = proj.into_iter().filter(|c| c.coeffs[d + 1..].iter().all(|a| *a == 0)).collect();
    let Some((lo, hi)) = var_interval(&proj, d) else { return false };
    for x in lo..=hi {
        if let Some(next) = substitute(cons, d, x) {
            point.push(x);
            if search(&next, n, point) {
                return true;
            }
            point.pop();
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(bounds: &[(i64, i64)]) -> System {
        System::new((0..bounds.len()).map(|k| format!("x{k}")).collect(), bounds.to_vec())
    }

    #[test]
    fn identity_overlap_is_nonempty() {
        let mut s = sys(&[(0, 4), (0, 4), (0, 4), (0, 4)]);
        s.add(Constraint::eq(vec![1, 0, -1, 0], 0));
        s.add(Constraint::eq(vec![0, 1, 0, -1], 0));
        assert!(!s.is_empty());
        assert!(s.solve_exact().is_some());
    }

    #[test]
    fn contradictory_equalities_are_empty() {
        let mut s = sys(&[(0, 10), (0, 10)]);
        s.add(Constraint::eq(vec![1, -1], -1));
        s.add(Constraint::eq(vec![1, -1], 0));
        assert!(s.is_empty());
        assert!(s.solve_exact().is_none());
    }

    #[test]
    fn parity_gap_needs_integer_reasoning() {
        // 2x = 2y + 1 has rational but no integer solutions.
        let mut s = sys(&[(0, 1000), (0, 1000)]);
        s.add(Constraint::eq(vec![2, -2], -1));
        assert!(s.solve_exact().is_none());
        // 1 <= 3x - 3y <= 2 likewise.
        let mut s = sys(&[(0, 1000), (0, 1000)]);
        s.add(Constraint::ge(vec![3, -3], -1));
        s.add(Constraint::ge(vec![-3, 3], 2));
        assert!(s.solve_exact().is_none());
    }

    #[test]
    fn large_box_uses_search() {
        let mut s = sys(&[(0, 1000), (0, 1000), (0, 1000)]);
        s.add(Constraint::eq(vec![1, 1, 1], -2997));
        let w = s.witness().unwrap();
        assert!(s.contains(&w));
    }

    #[test]
    fn rendering() {
        let names = vec!["i".to_string(), "j".to_string()];
        assert_eq!(affine_text(&[1, -2], 3, &names), "i - 2*j + 3");
        assert_eq!(affine_text(&[0, 0], -1, &names), "-1");
        assert_eq!(affine_text(&[-1, 0], 0, &names), "-i");
    }
}
