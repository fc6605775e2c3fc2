//! Static checks: the in-place rule, access bounds and definedness of reads.

use std::collections::BTreeSet;

use super::infer::{statement_accesses, InferredRanges, SymSubscript};
use super::inst::{InstantiatedDef, StmtKind, Subscript};
use super::SemanticError;
use crate::frontend::{AssignOp, CheckedDef, TensorRole};

/// A statement may read the tensor it writes only at the element it writes,
/// and not at all when the read would observe a partial reduction.
pub fn check_inplace(c: &CheckedDef, r: &InferredRanges) -> Result<(), SemanticError> {
    for (s, st) in c.def.stmts.iter().enumerate() {
        let mut scalars = BTreeSet::new();
        let accesses = statement_accesses(c, s, &mut scalars)?;
        let has_rhs_only = r.stmts[s].iters.iter().any(|i| i.rhs_only);
        let reduction = !matches!(st.op, AssignOp::Assign);
        for a in accesses.iter().filter(|a| !a.is_lhs && a.tensor == st.lhs.name) {
            let identity = a.subs.len() == st.lhs_indices.len()
                && a.subs.iter().zip(&st.lhs_indices).all(|(sub, idx)| match sub {
                    SymSubscript::Affine(aff) => {
                        aff.offset.as_const() == Some(0)
                            && aff.coeffs.len() == 1
                            && aff.coeffs.get(&idx.name).and_then(|k| k.as_const()) == Some(1)
                    }
                    SymSubscript::Indirect => false,
                });
            if !identity || (reduction && has_rhs_only) {
                return Err(SemanticError::LivenessInterference { stmt: s, tensor: st.lhs.name.clone(), span: a.span });
            }
        }
    }
    Ok(())
}

/// Every affine subscript stays inside its dimension over the whole iteration box.
pub fn check_bounds(inst: &InstantiatedDef) -> Result<(), SemanticError> {
    for st in &inst.stmts {
        for a in &st.accesses {
            let t = &inst.tensors[a.tensor];
            for (dim, sub) in a.subs.iter().enumerate() {
                let Subscript::Affine(aff) = sub else { continue };
                let (lo, hi) = aff.range(&st.iters);
                let extent = t.shape[dim] as i64;
                if lo < 0 || hi >= extent {
                    return Err(SemanticError::OutOfBounds {
                        stmt: st.source,
                        tensor: t.name.clone(),
                        dim,
                        lo,
                        hi,
                        extent,
                        span: st.span,
                    });
                }
            }
        }
    }
    Ok(())
}

type Region = Vec<(i64, i64)>;

fn contains(outer: &Region, inner: &Region) -> bool {
    outer.iter().zip(inner).all(|(o, i)| o.0 <= i.0 && i.1 <= o.1)
}

fn covered(boxes: &[Region], p: &[i64]) -> bool {
    boxes.iter().any(|b| b.iter().zip(p).all(|(r, x)| r.0 <= *x && *x < r.1))
}

const ENUMERATION_LIMIT: u64 = 1 << 22;

/// Reads of outputs and temporaries must follow a write of the same element.
/// An output read by a plain assignment before any writer holds
/// caller-supplied values and is marked in/out.
pub fn check_initialization(inst: &mut InstantiatedDef) -> Result<(), SemanticError> {
    let mut written: Vec<Vec<Region>> = vec![Vec::new(); inst.tensors.len()];
    let mut inout = BTreeSet::new();
    for st in &inst.stmts {
        for a in st.accesses.iter().filter(|a| !a.write) {
            let t = &inst.tensors[a.tensor];
            if t.role == TensorRole::Input {
                continue;
            }
            let boxes = &written[a.tensor];
            if boxes.is_empty() && t.role == TensorRole::Output && st.kind == StmtKind::Assign {
                inout.insert(a.tensor);
                continue;
            }
            if inout.contains(&a.tensor) {
                continue;
            }
            let hull: Region = a
                .subs
                .iter()
                .zip(&t.shape)
                .map(|(s, e)| match s {
                    Subscript::Affine(aff) => {
                        let (lo, hi) = aff.range(&st.iters);
                        (lo, hi + 1)
                    }
                    Subscript::Indirect(_) => (0, *e as i64),
                })
                .collect();
            if boxes.iter().any(|b| contains(b, &hull)) {
                continue;
            }
            let ok = if st.cardinality() <= ENUMERATION_LIMIT && !a.is_indirect() {
                let affs: Vec<_> = a.subs.iter().filter_map(|s| s.as_affine()).collect();
                let mut ok = true;
                for_each_point(&st.instance_box(), &mut |p| {
                    if ok {
                        let img: Vec<i64> = affs.iter().map(|f| f.eval(p)).collect();
                        ok = covered(boxes, &img);
                    }
                });
                ok
            } else {
                false
            };
            if !ok {
                return Err(SemanticError::UninitializedRead { stmt: st.source, tensor: t.name.clone(), span: st.span });
            }
        }
        let w = st.write();
        let region: Region = w
            .subs
            .iter()
            .map(|s| {
                let (lo, hi) = s.as_affine().expect("writes are affine").range(&st.iters);
                (lo, hi + 1)
            })
            .collect();
        written[w.tensor].push(region);
    }
    for t in inout {
        inst.tensors[t].inout = true;
    }
    Ok(())
}

/// Visit every integer point of a box in lexicographic order.
pub fn for_each_point(b: &[(i64, i64)], f: &mut dyn FnMut(&[i64])) {
    if b.iter().any(|(lo, hi)| hi <= lo) {
        return;
    }
    let mut p: Vec<i64> = b.iter().map(|r| r.0).collect();
    loop {
        f(&p);
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
