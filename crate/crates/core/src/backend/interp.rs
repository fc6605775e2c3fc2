//! Sequential reference interpreter: statements in textual order, each
//! over its iteration box in lexicographic order.

use std::collections::BTreeMap;

use crate::polyir::for_each_box_point;
use crate::semantics::InstantiatedDef;

use super::value::{initial_memory, Bindings, Instance, Reader, Tensor, Value};
use super::BackendError;

struct GlobalReader<'a> {
    inst: &'a InstantiatedDef,
    stmt: usize,
    mem: &'a [Tensor],
}

impl Reader for GlobalReader<'_> {
    fn read(&mut self, access: usize, idx: &[i64]) -> Result<Value, BackendError> {
        let t = self.inst.stmts[self.stmt].accesses[access].tensor;
        let off = self.mem[t].offset(idx).ok_or_else(|| out_of_range(self.inst, self.stmt, t, idx))?;
        Ok(self.mem[t].data[off])
    }
}

pub(crate) fn out_of_range(inst: &InstantiatedDef, stmt: usize, tensor: usize, idx: &[i64]) -> BackendError {
    BackendError::IndexOutOfRange {
        stmt: inst.stmts[stmt].name.clone(),
        tensor: inst.tensors[tensor].name.clone(),
        index: idx.to_vec(),
        shape: inst.tensors[tensor].shape.clone(),
    }
}

/// Run the definition and return every output, narrowed to its type.
pub fn run_reference(inst: &InstantiatedDef, b: &Bindings) -> Result<BTreeMap<String, Tensor>, BackendError> {
    let (mut mem, scalars) = initial_memory(inst, b)?;
    for (s, st) in inst.stmts.iter().enumerate() {
        let mut err = None;
        for_each_box_point(&st.instance_box(), &mut |p| {
            if err.is_some() {
                return false;
            }
            let ins = Instance { inst, stmt: st, iters: p, scalars: &scalars };
            let res = (|| {
                let mut r = GlobalReader { inst, stmt: s, mem: &mem };
                let v = ins.execute(&mut r)?;
                let w = st.write();
                let idx = ins.subscripts(w, &mut r)?;
                let off = mem[w.tensor].offset(&idx).ok_or_else(|| out_of_range(inst, s, w.tensor, &idx))?;
                Ok::<_, BackendError>((w.tensor, off, v))
            })();
            match res {
                Ok((t, off, v)) => mem[t].data[off] = v,
                Err(e) => err = Some(e),
            }
            err.is_none()
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(collect_outputs(inst, &mem))
}

pub(crate) fn collect_outputs(inst: &InstantiatedDef, mem: &[Tensor]) -> BTreeMap<String, Tensor> {
    inst.outputs().map(|(k, t)| (t.name.clone(), mem[k].narrowed())).collect()
}
