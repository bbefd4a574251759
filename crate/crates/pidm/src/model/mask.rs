//! Per-timestep token layout and the readout attention mask.
//!
//! Every timestep contributes, in order: one goal token, 2k resampled image
//! tokens (k per view), one robot-state token, two foresight readouts (one
//! per view), and n action readouts. Input tokens never see readouts;
//! foresight readouts never see action readouts; action readouts additionally
//! see the same timestep's foresight readouts, which is the edge that couples
//! action prediction to the predicted future.
//!
//! Fine-tuning attention is block-causal (anything at timesteps <= own).
//! Pretraining restricts *all* tokens to their own timestep so that, at any
//! depth, readouts carry no information about earlier noisy-play steps.

use std::rc::Rc;

use crate::data::Mode;
use crate::tensor::BoolMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Goal,
    Img,
    State,
    Frs,
    Inv,
}

impl Group {
    pub fn is_input(self) -> bool {
        matches!(self, Group::Goal | Group::Img | Group::State)
    }
}

/// Bijection between flat token indices and (timestep, group, offset).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenLayout {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl TokenLayout {
    /// Tokens per timestep: goal + 2k image + state + 2 foresight + n action.
    pub fn width(&self) -> usize {
        4 + 2 * self.k + self.n
    }

    pub fn total(&self) -> usize {
        self.m * self.width()
    }

    pub fn goal(&self, t: usize) -> usize {
        t * self.width()
    }

    pub fn img(&self, t: usize, j: usize) -> usize {
        debug_assert!(j < 2 * self.k);
        t * self.width() + 1 + j
    }

    pub fn state(&self, t: usize) -> usize {
        t * self.width() + 1 + 2 * self.k
    }

    pub fn frs(&self, t: usize, view: usize) -> usize {
        debug_assert!(view < 2);
        t * self.width() + 2 + 2 * self.k + view
    }

    pub fn inv(&self, t: usize, slot: usize) -> usize {
        debug_assert!(slot < self.n);
        t * self.width() + 4 + 2 * self.k + slot
    }

    pub fn group_of(&self, idx: usize) -> (usize, Group, usize) {
        let w = self.width();
        let t = idx / w;
        let o = idx % w;
        if o == 0 {
            (t, Group::Goal, 0)
        } else if o < 1 + 2 * self.k {
            (t, Group::Img, o - 1)
        } else if o == 1 + 2 * self.k {
            (t, Group::State, 0)
        } else if o < 4 + 2 * self.k {
            (t, Group::Frs, o - 2 - 2 * self.k)
        } else {
            (t, Group::Inv, o - 4 - 2 * self.k)
        }
    }
}

/// Query x key attendability matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    pub size: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.size + k]
    }

    /// Negated matrix in the form [`crate::tensor::Tensor::masked_fill`]
    /// consumes: true marks blocked entries.
    pub fn blocked(&self) -> Rc<BoolMask> {
        Rc::new(BoolMask::new(
            vec![self.size, self.size],
            self.allowed.iter().map(|&a| !a).collect(),
        ))
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|a| **a).count()
    }
}

/// Whether query token `q` may attend key token `kq` under the given regime.
///
/// Rules: (a) input tokens attend input tokens at visible timesteps, never
/// readouts; (b) foresight readouts attend visible inputs plus themselves;
/// (c) action readouts attend visible inputs, both same-timestep foresight
/// readouts (unless `detach_frs`), and themselves; (d) pretraining shrinks
/// "visible" from `<= own timestep` to `== own timestep`; (e) foresight
/// readouts never attend action readouts; (f) readouts never attend readouts
/// of other timesteps.
fn may_attend(
    layout: &TokenLayout,
    mode: Mode,
    detach_frs: bool,
    q: usize,
    kq: usize,
) -> bool {
    let (tq, gq, oq) = layout.group_of(q);
    let (tk, gk, ok) = layout.group_of(kq);
    let input_visible = match mode {
        Mode::Finetune => tk <= tq,
        Mode::Pretrain => tk == tq,
    };
    match gq {
        Group::Goal | Group::Img | Group::State => gk.is_input() && input_visible,
        Group::Frs => {
            (gk.is_input() && input_visible) || (gk == Group::Frs && tk == tq && ok == oq)
        }
        Group::Inv => {
            (gk.is_input() && input_visible)
                || (!detach_frs && gk == Group::Frs && tk == tq)
                || (gk == Group::Inv && tk == tq && ok == oq)
        }
    }
}

pub fn build_mask(layout: &TokenLayout, mode: Mode, detach_frs: bool) -> AttentionMask {
    let size = layout.total();
    let mut allowed = vec![false; size * size];
    for q in 0..size {
        for k in 0..size {
            allowed[q * size + k] = may_attend(layout, mode, detach_frs, q, k);
        }
    }
    AttentionMask { size, allowed }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent enumerator: constructs each query's allowed-key set from
    /// the rules directly, instead of evaluating a pairwise predicate.
    fn oracle_mask(layout: &TokenLayout, mode: Mode, detach_frs: bool) -> AttentionMask {
        let size = layout.total();
        let mut allowed = vec![false; size * size];
        let visible_steps = |tq: usize| -> Vec<usize> {
            match mode {
                Mode::Finetune => (0..=tq).collect(),
                Mode::Pretrain => vec![tq],
            }
        };
        let input_keys = |t: usize| -> Vec<usize> {
            let mut keys = vec![layout.goal(t)];
            for j in 0..2 * layout.k {
                keys.push(layout.img(t, j));
            }
            keys.push(layout.state(t));
            keys
        };
        for tq in 0..layout.m {
            // Inputs of this timestep all share the same key set.
            let mut base = Vec::new();
            for ts in visible_steps(tq) {
                base.extend(input_keys(ts));
            }
            let mut mark = |q: usize, keys: &[usize]| {
                for &k in keys {
                    allowed[q * size + k] = true;
                }
            };
            for q in input_keys(tq) {
                mark(q, &base);
            }
            for view in 0..2 {
                let q = layout.frs(tq, view);
                let mut keys = base.clone();
                keys.push(q);
                mark(q, &keys);
            }
            for slot in 0..layout.n {
                let q = layout.inv(tq, slot);
                let mut keys = base.clone();
                if !detach_frs {
                    keys.push(layout.frs(tq, 0));
                    keys.push(layout.frs(tq, 1));
                }
                keys.push(q);
                mark(q, &keys);
            }
        }
        AttentionMask { size, allowed }
    }

    #[test]
    fn layout_index_group_bijection() {
        for (m, k, n) in [(1, 1, 1), (3, 2, 3), (7, 4, 3)] {
            let layout = TokenLayout { m, k, n };
            for idx in 0..layout.total() {
                let (t, g, o) = layout.group_of(idx);
                let back = match g {
                    Group::Goal => layout.goal(t),
                    Group::Img => layout.img(t, o),
                    Group::State => layout.state(t),
                    Group::Frs => layout.frs(t, o),
                    Group::Inv => layout.inv(t, o),
                };
                assert_eq!(back, idx);
            }
        }
    }

    #[test]
    fn builder_matches_oracle_for_all_small_configs() {
        for m in 1..=3 {
            for k in 1..=2 {
                for n in 1..=3 {
                    let layout = TokenLayout { m, k, n };
                    for mode in [Mode::Pretrain, Mode::Finetune] {
                        for detach in [false, true] {
                            let built = build_mask(&layout, mode, detach);
                            let oracle = oracle_mask(&layout, mode, detach);
                            assert_eq!(
                                built, oracle,
                                "m={m} k={k} n={n} mode={mode:?} detach={detach}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn named_invariants_hold_on_the_toy_layout() {
        let layout = TokenLayout { m: 7, k: 4, n: 3 };
        for mode in [Mode::Pretrain, Mode::Finetune] {
            let mask = build_mask(&layout, mode, false);
            for q in 0..layout.total() {
                assert!(mask.allowed(q, q), "diagonal");
                let (tq, gq, _) = layout.group_of(q);
                for k in 0..layout.total() {
                    let (tk, gk, _) = layout.group_of(k);
                    if mask.allowed(q, k) {
                        assert!(tk <= tq, "causality: {q} -> {k}");
                    }
                    if gq.is_input() && !gk.is_input() {
                        assert!(!mask.allowed(q, k), "inputs must not see readouts");
                    }
                    if gq == Group::Frs && gk == Group::Inv {
                        assert!(!mask.allowed(q, k), "FRS must not see INV");
                    }
                }
            }
        }
    }

    #[test]
    fn spec_edge_examples() {
        let layout = TokenLayout { m: 3, k: 2, n: 3 };
        let ft = build_mask(&layout, Mode::Finetune, false);
        assert!(ft.allowed(layout.inv(1, 0), layout.frs(1, 0)));
        let pt = build_mask(&layout, Mode::Pretrain, false);
        assert!(!pt.allowed(layout.frs(2, 0), layout.img(1, 0)));
        // detach_frs severs exactly the INV -> FRS edges.
        let det = build_mask(&layout, Mode::Finetune, true);
        assert!(!det.allowed(layout.inv(1, 0), layout.frs(1, 0)));
        assert!(det.allowed(layout.inv(1, 0), layout.img(1, 0)));
    }

    #[test]
    fn every_query_attends_something() {
        let layout = TokenLayout { m: 7, k: 4, n: 3 };
        for mode in [Mode::Pretrain, Mode::Finetune] {
            let mask = build_mask(&layout, mode, true);
            for q in 0..layout.total() {
                assert!((0..layout.total()).any(|k| mask.allowed(q, k)));
            }
        }
    }
}
