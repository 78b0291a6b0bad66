//! Transformer body shared by the dense text model and the modality-routed model.

use super::config::ModelConfig;
use super::ops::{causal_softmax, gelu, inv_rms, Rope};
use super::params::{ExpertPair, Param, ParamId, Role, Table};
use crate::error::{Error, Result};
use crate::linalg::{matmul_slices, transpose, Mat};
use crate::seqfmt::{Modality, TokenId};

/// Which parameter layout a network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    /// Text-only vocabulary, single components.
    Dense,
    /// Extended vocabulary, single components. Used as an equivalence reference.
    DenseExtended,
    /// Extended vocabulary, every routed component holds a text and a speech expert.
    Routed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub attn_norm: ExpertPair,
    pub wq: ExpertPair,
    pub wk: ExpertPair,
    pub wv: ExpertPair,
    pub wo: ExpertPair,
    pub ffn_norm: ExpertPair,
    pub w_up: ExpertPair,
    pub w_down: ExpertPair,
}

impl Block {
    pub fn components(&self) -> [(&'static str, ExpertPair); 8] {
        [
            ("attn_norm", self.attn_norm),
            ("wq", self.wq),
            ("wk", self.wk),
            ("wv", self.wv),
            ("wo", self.wo),
            ("ffn_norm", self.ffn_norm),
            ("w_up", self.w_up),
            ("w_down", self.w_down),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TableRow {
    Base(usize),
    Extra(usize),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub(crate) cfg: ModelConfig,
    pub(crate) arch: Arch,
    pub(crate) params: Vec<Param>,
    pub(crate) embed: Table,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_norm: ExpertPair,
    pub(crate) head: Table,
    /// Table row of each token id, `None` for ids the network does not know.
    pub(crate) rows: Vec<Option<TableRow>>,
    /// Token id of each logit column.
    pub(crate) columns: Vec<TokenId>,
    pub(crate) base_cols: Vec<usize>,
    pub(crate) extra_cols: Vec<usize>,
}

/// Partition of sequence rows by modality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Routing {
    pub modality: Vec<Modality>,
    pub text_rows: Vec<usize>,
    pub speech_rows: Vec<usize>,
}

impl Routing {
    pub fn new(modality: &[Modality]) -> Self {
        let mut text_rows = Vec::new();
        let mut speech_rows = Vec::new();
        for (i, m) in modality.iter().enumerate() {
            match m {
                Modality::Text => text_rows.push(i),
                Modality::Speech => speech_rows.push(i),
            }
        }
        Routing {
            modality: modality.to_vec(),
            text_rows,
            speech_rows,
        }
    }

    /// Routing of rows `[from, len)`, re-indexed from zero.
    pub fn suffix(&self, from: usize) -> Routing {
        Routing::new(&self.modality[from..])
    }

    pub fn len(&self) -> usize {
        self.modality.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modality.is_empty()
    }
}

/// Activations recorded by a traced forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub x_in: Mat,
    pub inv1: Vec<f64>,
    pub n1: Mat,
    /// Post-rotary queries and keys.
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Attention probabilities per head, `T x T`.
    pub probs: Vec<Mat>,
    pub ctx: Mat,
    pub x_mid: Mat,
    pub inv2: Vec<f64>,
    pub n2: Mat,
    pub up: Mat,
    pub act: Mat,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub ids: Vec<TokenId>,
    pub routing: Routing,
    pub layers: Vec<LayerTrace>,
    pub x_out: Mat,
    pub inv_f: Vec<f64>,
    pub nf: Mat,
}

/// Cached post-rotary keys and values per layer for incremental decoding.
#[derive(Debug, Clone)]
pub struct KvCache {
    pub(crate) keys: Vec<Mat>,
    pub(crate) values: Vec<Mat>,
}

impl KvCache {
    pub fn new(layers: usize, d_model: usize) -> Self {
        KvCache {
            keys: vec![Mat::zeros(0, d_model); layers],
            values: vec![Mat::zeros(0, d_model); layers],
        }
    }

    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, |k| k.rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn append_rows(dst: &mut Mat, src: &Mat) {
    debug_assert_eq!(dst.cols, src.cols);
    dst.data.extend_from_slice(&src.data);
    dst.rows += src.rows;
}

impl Network {
    /// Parameter layout for `arch` with zeroed data and conversion-time roles/flags.
    pub fn skeleton(cfg: &ModelConfig, arch: Arch) -> Result<Network> {
        cfg.validate()?;
        let vocab = cfg.vocab;
        let d = cfg.d_model;
        let base_ids = vocab.base_ids();
        let ext_ids = vocab.extension_ids();
        let extended = arch != Arch::Dense;
        let routed = arch == Arch::Routed;

        let mut params: Vec<Param> = Vec::new();
        let mut add = |name: String, role: Role, frozen: bool, shape: Vec<usize>| {
            let numel = shape.iter().product();
            params.push(Param {
                name,
                role,
                frozen,
                shape,
                data: vec![0.0; numel],
            });
            ParamId(params.len() - 1)
        };
        let (base_role, base_frozen) = if routed {
            (Role::Text, true)
        } else {
            (Role::Shared, false)
        };

        let table = |add: &mut dyn FnMut(String, Role, bool, Vec<usize>) -> ParamId, name: &str| {
            let base = add(format!("{name}.base"), base_role, base_frozen, vec![base_ids.len(), d]);
            let extra = extended.then(|| {
                let role = if routed { Role::Speech } else { Role::Shared };
                add(format!("{name}.extra"), role, false, vec![ext_ids.len(), d])
            });
            Table { base, extra }
        };
        let pair = |add: &mut dyn FnMut(String, Role, bool, Vec<usize>) -> ParamId,
                        name: String,
                        shape: Vec<usize>| {
            if routed {
                let text = add(format!("{name}.text"), Role::Text, true, shape.clone());
                let speech = add(format!("{name}.speech"), Role::Speech, false, shape);
                ExpertPair {
                    text,
                    speech: Some(speech),
                }
            } else {
                ExpertPair {
                    text: add(name, Role::Shared, false, shape),
                    speech: None,
                }
            }
        };

        let embed = table(&mut add, "embed");
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            blocks.push(Block {
                attn_norm: pair(&mut add, p("attn_norm"), vec![d]),
                wq: pair(&mut add, p("wq"), vec![d, d]),
                wk: pair(&mut add, p("wk"), vec![d, d]),
                wv: pair(&mut add, p("wv"), vec![d, d]),
                wo: pair(&mut add, p("wo"), vec![d, d]),
                ffn_norm: pair(&mut add, p("ffn_norm"), vec![d]),
                w_up: pair(&mut add, p("w_up"), vec![d, cfg.ffn_dim]),
                w_down: pair(&mut add, p("w_down"), vec![cfg.ffn_dim, d]),
            });
        }
        let final_norm = pair(&mut add, "final_norm".to_string(), vec![d]);
        let head = table(&mut add, "head");

        let mut rows = vec![None; vocab.total_size()];
        for (r, &id) in base_ids.iter().enumerate() {
            rows[id as usize] = Some(TableRow::Base(r));
        }
        let (columns, base_cols, extra_cols) = if extended {
            for (r, &id) in ext_ids.iter().enumerate() {
                rows[id as usize] = Some(TableRow::Extra(r));
            }
            let columns: Vec<TokenId> = (0..vocab.total_size() as u32).collect();
            let base_cols = base_ids.iter().map(|&id| id as usize).collect();
            let extra_cols = ext_ids.iter().map(|&id| id as usize).collect();
            (columns, base_cols, extra_cols)
        } else {
            (base_ids.clone(), (0..base_ids.len()).collect(), Vec::new())
        };

        Ok(Network {
            cfg: cfg.clone(),
            arch,
            params,
            embed,
            blocks,
            final_norm,
            head,
            rows,
            columns,
            base_cols,
            extra_cols,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn final_norm(&self) -> ExpertPair {
        self.final_norm
    }

    pub fn embedding(&self) -> Table {
        self.embed
    }

    pub fn output_head(&self) -> Table {
        self.head
    }

    /// Every routed component in layer order, then the final norm.
    pub fn routed_components(&self) -> Vec<(String, ExpertPair)> {
        let mut out = Vec::new();
        for (l, b) in self.blocks.iter().enumerate() {
            for (name, pair) in b.components() {
                out.push((format!("layers.{l}.{name}"), pair));
            }
        }
        out.push(("final_norm".to_string(), self.final_norm));
        out
    }

    /// Token id of each logit column.
    pub fn columns(&self) -> &[TokenId] {
        &self.columns
    }

    pub fn column_of(&self, id: TokenId) -> Option<usize> {
        match self.rows.get(id as usize).copied().flatten()? {
            TableRow::Base(r) => Some(self.base_cols[r]),
            TableRow::Extra(r) => Some(self.extra_cols[r]),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Param::numel).sum()
    }

    pub(crate) fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub(crate) fn expert(&self, pair: ExpertPair, m: Modality) -> ParamId {
        match (m, pair.speech) {
            (Modality::Speech, Some(s)) => s,
            _ => pair.text,
        }
    }

    fn table_row(&self, table: Table, row: TableRow) -> &[f64] {
        let d = self.cfg.d_model;
        match row {
            TableRow::Base(r) => &self.data(table.base)[r * d..(r + 1) * d],
            TableRow::Extra(r) => {
                let extra = table.extra.expect("extra row without extra table");
                &self.data(extra)[r * d..(r + 1) * d]
            }
        }
    }

    pub(crate) fn lookup(&self, id: TokenId) -> Result<TableRow> {
        self.rows
            .get(id as usize)
            .copied()
            .flatten()
            .ok_or(Error::InvalidToken {
                id,
                size: self.cfg.vocab.total_size(),
            })
    }

    /// Routing for `ids`; a dense network sends everything to its single expert.
    pub fn routing_for(&self, ids: &[TokenId]) -> Result<Routing> {
        let mask = ids
            .iter()
            .map(|&id| self.cfg.vocab.modality_of(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(Routing::new(&mask))
    }

    /// Applies a routed linear map (`x · W`, no bias) row by row.
    pub fn routed_linear(&self, pair: ExpertPair, x: &Mat, routing: &Routing) -> Result<Mat> {
        let w = self.param(pair.text);
        if w.shape.len() != 2 || w.shape[0] != x.cols || routing.len() != x.rows {
            return Err(Error::Shape(format!(
                "linear `{}` {:?} applied to {}x{} with mask of {}",
                w.name,
                w.shape,
                x.rows,
                x.cols,
                routing.len()
            )));
        }
        let (din, dout) = (w.shape[0], w.shape[1]);
        let dense = |id: ParamId| matmul_slices(&x.data, x.rows, din, self.data(id), dout);
        match pair.speech {
            None => Ok(dense(pair.text)),
            Some(_) if routing.speech_rows.is_empty() => Ok(dense(pair.text)),
            Some(s) if routing.text_rows.is_empty() => Ok(dense(s)),
            Some(s) => {
                let mut out = Mat::zeros(x.rows, dout);
                for (rows, id) in [(&routing.text_rows, pair.text), (&routing.speech_rows, s)] {
                    let part = x.gather_rows(rows);
                    let y = matmul_slices(&part.data, part.rows, din, self.data(id), dout);
                    out.scatter_rows(rows, &y);
                }
                Ok(out)
            }
        }
    }

    /// Routed root-mean-square norm. Returns the output and per-row `1/rms`.
    pub fn routed_norm(&self, pair: ExpertPair, x: &Mat, routing: &Routing) -> Result<(Mat, Vec<f64>)> {
        let g = self.param(pair.text);
        if g.shape != [x.cols] || routing.len() != x.rows {
            return Err(Error::Shape(format!(
                "norm `{}` {:?} applied to {}x{} with mask of {}",
                g.name,
                g.shape,
                x.rows,
                x.cols,
                routing.len()
            )));
        }
        let eps = self.cfg.norm_epsilon;
        let mut out = Mat::zeros(x.rows, x.cols);
        let mut inv = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let gain = self.data(self.expert(pair, routing.modality[i]));
            let row = x.row(i);
            let r = inv_rms(row, eps);
            for (o, (v, gv)) in out.row_mut(i).iter_mut().zip(row.iter().zip(gain)) {
                *o = v * r * gv;
            }
            inv.push(r);
        }
        Ok((out, inv))
    }

    /// Forward over `ids` appended after the contents of `cache` (if any).
    /// Records a [`Trace`] when `record` is set, which requires an empty cache.
    pub(crate) fn run(
        &self,
        ids: &[TokenId],
        cache: Option<&mut KvCache>,
        record: bool,
    ) -> Result<(Mat, Option<Trace>)> {
        let cfg = &self.cfg;
        let (d, h, dk) = (cfg.d_model, cfg.heads, cfg.head_dim);
        let n = ids.len();
        let past = cache.as_ref().map_or(0, |c| c.len());
        if record && past > 0 {
            return Err(Error::Contract("traced forward requires an empty cache".into()));
        }
        let routing = self.routing_for(ids)?;

        let mut x = Mat::zeros(n, d);
        for (i, &id) in ids.iter().enumerate() {
            let row = self.lookup(id)?;
            x.row_mut(i).copy_from_slice(self.table_row(self.embed, row));
        }

        let rope = Rope::new(dk, cfg.rope_base, past, n);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut cache = cache;
        let mut traces = Vec::new();

        for (l, block) in self.blocks.iter().enumerate() {
            let (n1, inv1) = self.routed_norm(block.attn_norm, &x, &routing)?;
            let mut q = self.routed_linear(block.wq, &n1, &routing)?;
            let mut k = self.routed_linear(block.wk, &n1, &routing)?;
            let v = self.routed_linear(block.wv, &n1, &routing)?;
            for i in 0..n {
                rope.apply(q.row_mut(i), i);
                rope.apply(k.row_mut(i), i);
            }

            let (k_all, v_all) = match cache.as_deref_mut() {
                Some(c) => {
                    append_rows(&mut c.keys[l], &k);
                    append_rows(&mut c.values[l], &v);
                    (c.keys[l].clone(), c.values[l].clone())
                }
                None => (k.clone(), v.clone()),
            };
            let total = past + n;

            let mut ctx = Mat::zeros(n, d);
            let mut probs = Vec::new();
            for head in 0..h {
                let qh = q.columns(head * dk, dk);
                let kh_t = k_all.columns(head * dk, dk).transpose();
                let vh = v_all.columns(head * dk, dk);
                let mut p = matmul_slices(&qh.data, n, dk, &kh_t.data, total);
                for i in 0..n {
                    let row = p.row_mut(i);
                    let limit = past + i;
                    for s in &mut row[..=limit] {
                        *s *= scale;
                    }
                    causal_softmax(row, limit);
                }
                let c = matmul_slices(&p.data, n, total, &vh.data, dk);
                ctx.set_columns(head * dk, &c);
                if record {
                    probs.push(p);
                }
            }

            let o = self.routed_linear(block.wo, &ctx, &routing)?;
            let mut x_mid = x.clone();
            x_mid.add_assign(&o);

            let (n2, inv2) = self.routed_norm(block.ffn_norm, &x_mid, &routing)?;
            let up = self.routed_linear(block.w_up, &n2, &routing)?;
            let mut act = up.clone();
            act.data.iter_mut().for_each(|u| *u = gelu(*u));
            let f = self.routed_linear(block.w_down, &act, &routing)?;
            let mut x_out = x_mid.clone();
            x_out.add_assign(&f);

            if record {
                traces.push(LayerTrace {
                    x_in: std::mem::replace(&mut x, x_out),
                    inv1,
                    n1,
                    q,
                    k,
                    v,
                    probs,
                    ctx,
                    x_mid,
                    inv2,
                    n2,
                    up,
                    act,
                });
            } else {
                x = x_out;
            }
        }

        let (nf, inv_f) = self.routed_norm(self.final_norm, &x, &routing)?;
        let logits = self.logits(&nf);
        let trace = record.then(|| Trace {
            ids: ids.to_vec(),
            routing,
            layers: traces,
            x_out: x,
            inv_f,
            nf,
        });
        Ok((logits, trace))
    }

    fn logits(&self, nf: &Mat) -> Mat {
        let d = self.cfg.d_model;
        let mut logits = Mat::zeros(nf.rows, self.columns.len());
        let mut write = |table: ParamId, cols: &[usize]| {
            let head_t = transpose(self.data(table), cols.len(), d);
            let part = matmul_slices(&nf.data, nf.rows, d, &head_t.data, cols.len());
            for i in 0..nf.rows {
                let dst = logits.row_mut(i);
                for (j, &c) in cols.iter().enumerate() {
                    dst[c] = part.data[i * cols.len() + j];
                }
            }
        };
        write(self.head.base, &self.base_cols);
        if let Some(extra) = self.head.extra {
            write(extra, &self.extra_cols);
        }
        logits
    }

    /// Logits for every position of `ids`, one column per entry of [`Network::columns`].
    pub fn forward_ids(&self, ids: &[TokenId]) -> Result<Mat> {
        Ok(self.run(ids, None, false)?.0)
    }

    pub fn forward_traced(&self, ids: &[TokenId]) -> Result<(Mat, Trace)> {
        let (logits, trace) = self.run(ids, None, true)?;
        Ok((logits, trace.expect("trace requested")))
    }

    /// Runs `ids` after the cached prefix and appends their keys/values.
    pub fn extend(&self, cache: &mut KvCache, ids: &[TokenId]) -> Result<Mat> {
        Ok(self.run(ids, Some(cache), false)?.0)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.cfg.layers, self.cfg.d_model)
    }
}
