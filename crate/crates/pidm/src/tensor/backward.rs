//! Reverse-mode gradient accumulation over the tape.

use std::collections::BTreeMap;

use super::kernels;
use super::{
    clamp_prob, gelu_bwd, numel, Id, Node, Op, ParamStore, Result, Scalar, Tensor, TensorError,
};

impl<E: Scalar> Tensor<E> {
    /// Walk the tape backwards from this scalar and return one gradient per
    /// parameter in `store`. Parameters the loss never touched get zeros.
    pub fn backward(&self, store: &ParamStore<E>) -> Result<ParamStore<E>> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        let mut named: BTreeMap<String, Vec<E>> = BTreeMap::new();
        self.graph.with_nodes(|nodes| {
            let mut grads: Vec<Option<Vec<E>>> = vec![None; nodes.len()];
            grads[self.id()] = Some(vec![E::one()]);
            for id in (0..=self.id()).rev() {
                let Some(g) = grads[id].take() else { continue };
                if !nodes[id].needs_grad {
                    continue;
                }
                step(nodes, id, &g, &mut grads, &mut named);
            }
        });
        let mut out = ParamStore::new();
        for (name, p) in store.iter() {
            let data = named
                .remove(name)
                .unwrap_or_else(|| vec![E::zero(); p.data.len()]);
            debug_assert_eq!(data.len(), p.data.len());
            out.insert(name, p.shape.clone(), data)?;
        }
        Ok(out)
    }
}

fn slot<'a, E: Scalar>(
    grads: &'a mut [Option<Vec<E>>],
    nodes: &[Node<E>],
    id: Id,
) -> Option<&'a mut Vec<E>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let n = nodes[id].data.len();
    Some(grads[id].get_or_insert_with(|| vec![E::zero(); n]))
}

/// dst (small, len sn) += reduce(src) summing over leading repetitions.
fn acc_reduced<E: Scalar>(dst: &mut [E], src_iter: impl Iterator<Item = E>, sn: usize) {
    for (i, v) in src_iter.enumerate() {
        let j = i % sn;
        dst[j] = dst[j] + v;
    }
}

fn step<E: Scalar>(
    nodes: &[Node<E>],
    id: Id,
    g: &[E],
    grads: &mut [Option<Vec<E>>],
    named: &mut BTreeMap<String, Vec<E>>,
) {
    match &nodes[id].op {
        Op::Leaf { name } => {
            if let Some(name) = name {
                let entry = named
                    .entry(name.clone())
                    .or_insert_with(|| vec![E::zero(); g.len()]);
                for (d, &gv) in entry.iter_mut().zip(g) {
                    *d = *d + gv;
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = slot(grads, nodes, *a) {
                acc_reduced(da, g.iter().copied(), nodes[*a].data.len());
            }
            if let Some(db) = slot(grads, nodes, *b) {
                acc_reduced(db, g.iter().copied(), nodes[*b].data.len());
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(grads, nodes, *a) {
                acc_reduced(da, g.iter().copied(), nodes[*a].data.len());
            }
            if let Some(db) = slot(grads, nodes, *b) {
                acc_reduced(db, g.iter().map(|&v| -v), nodes[*b].data.len());
            }
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (&nodes[*a].data, &nodes[*b].data);
            let (na, nb) = (ad.len(), bd.len());
            if let Some(da) = slot(grads, nodes, *a) {
                acc_reduced(
                    da,
                    g.iter().enumerate().map(|(i, &gv)| gv * bd[i % nb]),
                    na,
                );
            }
            if let Some(db) = slot(grads, nodes, *b) {
                acc_reduced(
                    db,
                    g.iter().enumerate().map(|(i, &gv)| gv * ad[i % na]),
                    nb,
                );
            }
        }
        Op::MatMul(a, b) => {
            let (ls, rs) = (&nodes[*a].shape, &nodes[*b].shape);
            let (m, k) = (ls[ls.len() - 2], ls[ls.len() - 1]);
            let n = rs[rs.len() - 1];
            let lb: usize = ls[..ls.len() - 2].iter().product();
            let rb: usize = rs[..rs.len() - 2].iter().product();
            let batch = lb.max(rb);
            let (ad, bd) = (&nodes[*a].data, &nodes[*b].data);
            if nodes[*a].needs_grad {
                let da = slot(grads, nodes, *a).expect("slot");
                if lb == 1 && batch > 1 {
                    for bi in 0..batch {
                        kernels::gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[(bi % rb) * k * n..(bi % rb) * k * n + k * n],
                            m,
                            n,
                            k,
                            da,
                        );
                    }
                } else {
                    for bi in 0..batch {
                        kernels::gemm_nt_acc(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &bd[(bi % rb) * k * n..(bi % rb) * k * n + k * n],
                            m,
                            n,
                            k,
                            &mut da[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                }
            }
            if nodes[*b].needs_grad {
                let db = slot(grads, nodes, *b).expect("slot");
                if rb == 1 {
                    // Shared rhs: fold all batches into one tall A.
                    kernels::gemm_tn_acc(ad, g, batch * m, k, n, db);
                } else {
                    for bi in 0..batch {
                        kernels::gemm_tn_acc(
                            &ad[(bi % lb) * m * k..(bi % lb) * m * k + m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut db[bi * k * n..(bi + 1) * k * n],
                        );
                    }
                }
            }
        }
        Op::Transpose(a) => {
            let s = &nodes[id].shape;
            let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
            let batch: usize = s[..s.len() - 2].iter().product();
            if let Some(da) = slot(grads, nodes, *a) {
                // grad of output [.., r, c] flows to input [.., c, r]
                for bi in 0..batch {
                    let go = bi * r * c;
                    for i in 0..r {
                        for j in 0..c {
                            let di = go + j * r + i;
                            da[di] = da[di] + g[go + i * c + j];
                        }
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if let Some(da) = slot(grads, nodes, *a) {
                for (d, &gv) in da.iter_mut().zip(g) {
                    *d = *d + gv;
                }
            }
        }
        Op::Concat { axis, parts } => {
            let out_shape = &nodes[id].shape;
            let inner: usize = out_shape[axis + 1..].iter().product();
            let outer: usize = out_shape[..*axis].iter().product();
            let total_mid = out_shape[*axis];
            let mut offset = 0;
            for &pid in parts {
                let mid = nodes[pid].shape[*axis];
                if nodes[pid].needs_grad {
                    let dp = slot(grads, nodes, pid).expect("slot");
                    for o in 0..outer {
                        let src = (o * total_mid + offset) * inner;
                        let dst = o * mid * inner;
                        for i in 0..mid * inner {
                            dp[dst + i] = dp[dst + i] + g[src + i];
                        }
                    }
                }
                offset += mid;
            }
        }
        Op::Slice { input, axis, start } => {
            let in_shape = &nodes[*input].shape;
            let (outer, mid, inner) = {
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[*axis + 1..].iter().product();
                (outer, in_shape[*axis], inner)
            };
            let len = nodes[id].shape[*axis];
            if let Some(da) = slot(grads, nodes, *input) {
                for o in 0..outer {
                    let dst = (o * mid + start) * inner;
                    let src = o * len * inner;
                    for i in 0..len * inner {
                        da[dst + i] = da[dst + i] + g[src + i];
                    }
                }
            }
        }
        Op::Gather {
            input,
            axis,
            indices,
        } => {
            let in_shape = &nodes[*input].shape;
            let outer: usize = in_shape[..*axis].iter().product();
            let mid = in_shape[*axis];
            let inner: usize = in_shape[*axis + 1..].iter().product();
            if let Some(da) = slot(grads, nodes, *input) {
                for o in 0..outer {
                    for (j, &ix) in indices.iter().enumerate() {
                        let dst = (o * mid + ix) * inner;
                        let src = (o * indices.len() + j) * inner;
                        for i in 0..inner {
                            da[dst + i] = da[dst + i] + g[src + i];
                        }
                    }
                }
            }
        }
        Op::Broadcast { input } => {
            let n = nodes[*input].data.len();
            if let Some(da) = slot(grads, nodes, *input) {
                acc_reduced(da, g.iter().copied(), n);
            }
        }
        Op::Softmax(a) => {
            let d = *nodes[id].shape.last().unwrap();
            let p = &nodes[id].data;
            if let Some(da) = slot(grads, nodes, *a) {
                for ((prow, grow), darow) in
                    p.chunks(d).zip(g.chunks(d)).zip(da.chunks_mut(d))
                {
                    let mut dot = E::zero();
                    for (&pv, &gv) in prow.iter().zip(grow) {
                        dot = dot + pv * gv;
                    }
                    for ((dv, &pv), &gv) in darow.iter_mut().zip(prow).zip(grow) {
                        *dv = *dv + pv * (gv - dot);
                    }
                }
            }
        }
        Op::MaskedFill { input, mask } => {
            let mn = mask.data.len();
            if let Some(da) = slot(grads, nodes, *input) {
                for (i, &gv) in g.iter().enumerate() {
                    if !mask.data[i % mn] {
                        da[i] = da[i] + gv;
                    }
                }
            }
        }
        Op::LayerNorm { input, gamma, beta } => {
            let d = *nodes[id].shape.last().unwrap();
            let x = &nodes[*input].data;
            let gam = &nodes[*gamma].data;
            let eps = E::from_f64(super::LN_EPS);
            let dn = E::from_f64(d as f64);
            // Recompute row stats; cheaper than saving them.
            let rows = x.len() / d;
            // dgamma / dbeta accumulate across rows.
            if nodes[*beta].needs_grad {
                let db = slot(grads, nodes, *beta).expect("slot");
                for grow in g.chunks(d) {
                    for (dv, &gv) in db.iter_mut().zip(grow) {
                        *dv = *dv + gv;
                    }
                }
            }
            if nodes[*gamma].needs_grad {
                let dg = slot(grads, nodes, *gamma).expect("slot");
                for r in 0..rows {
                    let xr = &x[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let (mean, inv) = row_stats(xr, dn, eps);
                    for (j, dv) in dg.iter_mut().enumerate() {
                        *dv = *dv + gr[j] * (xr[j] - mean) * inv;
                    }
                }
            }
            if nodes[*input].needs_grad {
                let da = slot(grads, nodes, *input).expect("slot");
                for r in 0..rows {
                    let xr = &x[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dar = &mut da[r * d..(r + 1) * d];
                    let (mean, inv) = row_stats(xr, dn, eps);
                    // dxhat_j = g_j * gamma_j; dx via the standard two-sum form.
                    let mut sum_dxhat = E::zero();
                    let mut sum_dxhat_xhat = E::zero();
                    for j in 0..d {
                        let xhat = (xr[j] - mean) * inv;
                        let dxhat = gr[j] * gam[j];
                        sum_dxhat = sum_dxhat + dxhat;
                        sum_dxhat_xhat = sum_dxhat_xhat + dxhat * xhat;
                    }
                    for j in 0..d {
                        let xhat = (xr[j] - mean) * inv;
                        let dxhat = gr[j] * gam[j];
                        let dx = (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn) * inv;
                        dar[j] = dar[j] + dx;
                    }
                }
            }
        }
        Op::Relu(a) => {
            let x = &nodes[*a].data;
            if let Some(da) = slot(grads, nodes, *a) {
                for ((dv, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                    if xv > E::zero() {
                        *dv = *dv + gv;
                    }
                }
            }
        }
        Op::Gelu(a) => {
            let x = &nodes[*a].data;
            if let Some(da) = slot(grads, nodes, *a) {
                for ((dv, &gv), &xv) in da.iter_mut().zip(g).zip(x) {
                    *dv = *dv + gv * gelu_bwd(xv);
                }
            }
        }
        Op::Tanh(a) => {
            let y = &nodes[id].data;
            if let Some(da) = slot(grads, nodes, *a) {
                for ((dv, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                    *dv = *dv + gv * (E::one() - yv * yv);
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = &nodes[id].data;
            if let Some(da) = slot(grads, nodes, *a) {
                for ((dv, &gv), &yv) in da.iter_mut().zip(g).zip(y) {
                    *dv = *dv + gv * yv * (E::one() - yv);
                }
            }
        }
        Op::Scale { input, c } => {
            let ce = E::from_f64(*c);
            if let Some(da) = slot(grads, nodes, *input) {
                for (dv, &gv) in da.iter_mut().zip(g) {
                    *dv = *dv + gv * ce;
                }
            }
        }
        Op::AddScalar { input, .. } => {
            if let Some(da) = slot(grads, nodes, *input) {
                for (dv, &gv) in da.iter_mut().zip(g) {
                    *dv = *dv + gv;
                }
            }
        }
        Op::SumAll(a) => {
            let gv = g[0];
            if let Some(da) = slot(grads, nodes, *a) {
                for dv in da.iter_mut() {
                    *dv = *dv + gv;
                }
            }
        }
        Op::MeanAll(a) => {
            let n = nodes[*a].data.len();
            let gv = g[0] / E::from_f64(n as f64);
            if let Some(da) = slot(grads, nodes, *a) {
                for dv in da.iter_mut() {
                    *dv = *dv + gv;
                }
            }
        }
        Op::SmoothL1(p, t) => {
            let (pd, td) = (&nodes[*p].data, &nodes[*t].data);
            let deriv = |i: usize| {
                let x = pd[i] - td[i];
                if x.abs() < E::one() {
                    x
                } else if x > E::zero() {
                    E::one()
                } else {
                    -E::one()
                }
            };
            if let Some(dp) = slot(grads, nodes, *p) {
                for (i, (dv, &gv)) in dp.iter_mut().zip(g).enumerate() {
                    *dv = *dv + gv * deriv(i);
                }
            }
            if let Some(dt) = slot(grads, nodes, *t) {
                for (i, (dv, &gv)) in dt.iter_mut().zip(g).enumerate() {
                    *dv = *dv - gv * deriv(i);
                }
            }
        }
        Op::Bce(p, t) => {
            let (pd, td) = (&nodes[*p].data, &nodes[*t].data);
            let lo = E::from_f64(super::BCE_EPS);
            let hi = E::one() - lo;
            if nodes[*p].needs_grad {
                let dp = slot(grads, nodes, *p).expect("slot");
                for (i, (dv, &gv)) in dp.iter_mut().zip(g).enumerate() {
                    let pv = pd[i];
                    // Clamp saturates: no gradient outside (lo, hi).
                    if pv > lo && pv < hi {
                        let y = td[i];
                        *dv = *dv + gv * (-y / pv + (E::one() - y) / (E::one() - pv));
                    }
                }
            }
            if nodes[*t].needs_grad {
                let dt = slot(grads, nodes, *t).expect("slot");
                for (i, (dv, &gv)) in dt.iter_mut().zip(g).enumerate() {
                    let pc = clamp_prob(pd[i]);
                    *dv = *dv + gv * ((E::one() - pc).ln() - pc.ln());
                }
            }
        }
    }
    debug_assert_eq!(numel(&nodes[id].shape), g.len());
}

fn row_stats<E: Scalar>(row: &[E], dn: E, eps: E) -> (E, E) {
    let mut mean = E::zero();
    for &v in row {
        mean = mean + v;
    }
    mean = mean / dn;
    let mut var = E::zero();
    for &v in row {
        let c = v - mean;
        var = var + c * c;
    }
    var = var / dn;
    (mean, E::one() / (var + eps).sqrt())
}
