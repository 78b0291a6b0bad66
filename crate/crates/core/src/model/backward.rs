//! Reverse-mode gradients for [`Network`], written out by hand.
//!
//! Rows whose activations depend only on non-trainable parameters receive no
//! activation gradient: with frozen text experts this skips the whole text
//! prefix of a conversation.

use super::network::{Network, Routing, TableRow, Trace};
use super::ops::{gelu_grad, rms_norm_backward, Rope};
use super::params::{ExpertPair, Grads, ParamId};
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_slices, transpose, Mat};

fn slice_rows(m: &Mat, from: usize) -> Mat {
    Mat::from_vec(m.rows - from, m.cols, m.data[from * m.cols..].to_vec())
}

impl Network {
    /// First row whose activations can depend on a trainable parameter.
    fn first_grad_row(&self, routing: &Routing, grads: &Grads) -> usize {
        let text_side_trainable = grads.is_trainable(self.embed.base)
            || self.blocks.iter().any(|b| {
                b.components()
                    .iter()
                    .any(|(_, pair)| grads.is_trainable(pair.text))
            });
        if text_side_trainable {
            0
        } else {
            routing.speech_rows.first().copied().unwrap_or(routing.len())
        }
    }

    /// Adds the gradient of `sum(dlogits ⊙ logits)` with respect to every
    /// trainable parameter into `grads`.
    pub fn backward(&self, trace: &Trace, dlogits: &Mat, grads: &mut Grads) -> Result<()> {
        let t = trace.ids.len();
        if dlogits.rows != t || dlogits.cols != self.columns.len() {
            return Err(Error::Shape(format!(
                "dlogits is {}x{}, expected {}x{}",
                dlogits.rows,
                dlogits.cols,
                t,
                self.columns.len()
            )));
        }
        if grads.slots.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match network".into()));
        }
        let d = self.cfg.d_model;
        let g0 = self.first_grad_row(&trace.routing, grads);

        // Output head.
        let mut d_nf = Mat::zeros(t, d);
        let mut head_back = |table: ParamId, cols: &[usize], grads: &mut Grads| {
            let mut dl = Mat::zeros(t, cols.len());
            for i in 0..t {
                let src = dlogits.row(i);
                for (j, &c) in cols.iter().enumerate() {
                    dl.data[i * cols.len() + j] = src[c];
                }
            }
            if grads.is_trainable(table) {
                let dh = matmul(&dl.transpose(), &trace.nf);
                grads.accumulate(table, &dh.data);
            }
            let part = matmul_slices(&dl.data, t, cols.len(), self.data(table), d);
            d_nf.add_assign(&part);
        };
        head_back(self.head.base, &self.base_cols, grads);
        if let Some(extra) = self.head.extra {
            head_back(extra, &self.extra_cols, grads);
        }

        // Final norm: gains see every row, activations only rows >= g0.
        let d_x = self.norm_backward(
            self.final_norm,
            &trace.x_out,
            &trace.inv_f,
            &d_nf,
            &trace.routing,
            g0,
            grads,
        );
        if g0 == t {
            return Ok(());
        }
        let routing = trace.routing.suffix(g0);
        let rope = Rope::new(self.cfg.head_dim, self.cfg.rope_base, 0, t);
        let mut d_x = d_x;

        for (block, lt) in self.blocks.iter().zip(&trace.layers).rev() {
            // Feed-forward branch.
            let act = slice_rows(&lt.act, g0);
            let d_act = self.linear_backward(block.w_down, &act, &d_x, &routing, grads);
            let up = slice_rows(&lt.up, g0);
            let mut d_up = d_act;
            for (g, u) in d_up.data.iter_mut().zip(&up.data) {
                *g *= gelu_grad(*u);
            }
            let n2 = slice_rows(&lt.n2, g0);
            let d_n2 = self.linear_backward(block.w_up, &n2, &d_up, &routing, grads);
            let mut d_mid = d_x;
            let d_from_norm = self.norm_backward(
                block.ffn_norm,
                &lt.x_mid,
                &lt.inv2,
                &embed_rows(&d_n2, g0, t),
                &trace.routing,
                g0,
                grads,
            );
            d_mid.add_assign(&d_from_norm);

            // Attention branch.
            let ctx = slice_rows(&lt.ctx, g0);
            let d_ctx = self.linear_backward(block.wo, &ctx, &d_mid, &routing, grads);
            let (mut dq, mut dk, dv) = self.attention_backward(lt, &d_ctx, g0);
            for i in 0..dq.rows {
                rope.apply_transpose(dq.row_mut(i), g0 + i);
                rope.apply_transpose(dk.row_mut(i), g0 + i);
            }
            let n1 = slice_rows(&lt.n1, g0);
            let mut d_n1 = self.linear_backward(block.wq, &n1, &dq, &routing, grads);
            d_n1.add_assign(&self.linear_backward(block.wk, &n1, &dk, &routing, grads));
            d_n1.add_assign(&self.linear_backward(block.wv, &n1, &dv, &routing, grads));
            let mut d_in = d_mid;
            let d_from_norm = self.norm_backward(
                block.attn_norm,
                &lt.x_in,
                &lt.inv1,
                &embed_rows(&d_n1, g0, t),
                &trace.routing,
                g0,
                grads,
            );
            d_in.add_assign(&d_from_norm);
            d_x = d_in;
        }

        // Embedding rows.
        for (i, &id) in trace.ids[g0..].iter().enumerate() {
            let (table, r) = match self.lookup(id)? {
                TableRow::Base(r) => (self.embed.base, r),
                TableRow::Extra(r) => (self.embed.extra.expect("extra row"), r),
            };
            if let Some(g) = grads.slot_mut(table) {
                for (a, b) in g[r * d..(r + 1) * d].iter_mut().zip(d_x.row(i)) {
                    *a += b;
                }
            }
        }
        Ok(())
    }

    /// Backward of a routed norm. `dy` covers all rows; gains accumulate over all
    /// rows, the returned input gradient covers rows `>= from`.
    #[allow(clippy::too_many_arguments)]
    fn norm_backward(
        &self,
        pair: ExpertPair,
        x: &Mat,
        inv: &[f64],
        dy: &Mat,
        routing: &Routing,
        from: usize,
        grads: &mut Grads,
    ) -> Mat {
        let d = x.cols;
        let mut dx = Mat::zeros(x.rows - from, d);
        let mut scratch = vec![0.0; d];
        let mut dg_text = grads.is_trainable(pair.text).then(|| vec![0.0; d]);
        let mut dg_speech = pair
            .speech
            .filter(|&s| grads.is_trainable(s))
            .map(|_| vec![0.0; d]);
        for i in 0..x.rows {
            let m = routing.modality[i];
            let id = self.expert(pair, m);
            let dg = if id == pair.text {
                dg_text.as_deref_mut()
            } else {
                dg_speech.as_deref_mut()
            };
            let dst: &mut [f64] = if i >= from {
                dx.row_mut(i - from)
            } else {
                if dg.is_none() {
                    continue;
                }
                &mut scratch
            };
            rms_norm_backward(x.row(i), self.data(id), inv[i], dy.row(i), dst, dg);
        }
        if let Some(g) = dg_text {
            grads.accumulate(pair.text, &g);
        }
        if let (Some(g), Some(s)) = (dg_speech, pair.speech) {
            grads.accumulate(s, &g);
        }
        dx
    }

    /// Backward of a routed linear map over rows already restricted by the caller.
    fn linear_backward(
        &self,
        pair: ExpertPair,
        x: &Mat,
        dy: &Mat,
        routing: &Routing,
        grads: &mut Grads,
    ) -> Mat {
        let shape = &self.param(pair.text).shape;
        let (din, dout) = (shape[0], shape[1]);
        let mut dx = Mat::zeros(x.rows, din);
        let groups: Vec<(Vec<usize>, ParamId)> = match pair.speech {
            None => vec![((0..x.rows).collect(), pair.text)],
            Some(s) => vec![
                (routing.text_rows.clone(), pair.text),
                (routing.speech_rows.clone(), s),
            ],
        };
        for (rows, id) in groups {
            if rows.is_empty() {
                continue;
            }
            let whole = rows.len() == x.rows;
            let (xe, dye) = if whole {
                (x.clone(), dy.clone())
            } else {
                (x.gather_rows(&rows), dy.gather_rows(&rows))
            };
            if grads.is_trainable(id) {
                let dw = matmul(&xe.transpose(), &dye);
                grads.accumulate(id, &dw.data);
            }
            let w_t = transpose(self.data(id), din, dout);
            let dxe = matmul_slices(&dye.data, dye.rows, dout, &w_t.data, din);
            if whole {
                dx = dxe;
            } else {
                dx.scatter_rows(&rows, &dxe);
            }
        }
        dx
    }

    /// Gradients of queries, keys and values (rows `>= from`, post-rotary frame)
    /// given the gradient of the attention context for rows `>= from`.
    fn attention_backward(
        &self,
        lt: &super::network::LayerTrace,
        d_ctx: &Mat,
        from: usize,
    ) -> (Mat, Mat, Mat) {
        let (h, dk) = (self.cfg.heads, self.cfg.head_dim);
        let t = lt.q.rows;
        let tg = t - from;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut dq = Mat::zeros(tg, h * dk);
        let mut dkm = Mat::zeros(tg, h * dk);
        let mut dv = Mat::zeros(tg, h * dk);
        for head in 0..h {
            let p = &lt.probs[head];
            let dctx = d_ctx.columns(head * dk, dk);
            let vh_t = lt.v.columns(head * dk, dk).transpose();
            let dp = matmul_slices(&dctx.data, tg, dk, &vh_t.data, t);
            let mut ds = Mat::zeros(tg, t);
            for i in 0..tg {
                let a = from + i;
                let prow = &p.row(a)[..=a];
                let dprow = &dp.row(i)[..=a];
                let rowsum: f64 = prow.iter().zip(dprow).map(|(x, y)| x * y).sum();
                let dst = &mut ds.row_mut(i)[..=a];
                for j in 0..=a {
                    dst[j] = prow[j] * (dprow[j] - rowsum) * scale;
                }
            }
            let kh = lt.k.columns(head * dk, dk);
            let dqh = matmul(&ds, &kh);
            dq.set_columns(head * dk, &dqh);

            // Keys/values only for rows >= from.
            let ds_tail = ds.columns(from, tg);
            let qh_tail = slice_rows(&lt.q.columns(head * dk, dk), from);
            let dkh = matmul(&ds_tail.transpose(), &qh_tail);
            dkm.set_columns(head * dk, &dkh);
            let p_tail = slice_rows(p, from).columns(from, tg);
            let dvh = matmul(&p_tail.transpose(), &dctx);
            dv.set_columns(head * dk, &dvh);
        }
        (dq, dkm, dv)
    }
}

/// Pads a rows-`>= from` gradient back to full height with zero rows on top.
fn embed_rows(m: &Mat, from: usize, total: usize) -> Mat {
    let mut out = Mat::zeros(total, m.cols);
    out.data[from * m.cols..].copy_from_slice(&m.data);
    out
}
