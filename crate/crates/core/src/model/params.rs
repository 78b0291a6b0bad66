use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Text,
    Speech,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: Role,
    pub frozen: bool,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// A routed component: the text expert and, after conversion, a speech expert
/// of identical shape. A dense model has no speech expert.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpertPair {
    pub text: ParamId,
    pub speech: Option<ParamId>,
}

/// An embedding or output table split into rows known to the text model and rows
/// added for speech.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Table {
    pub base: ParamId,
    pub extra: Option<ParamId>,
}

/// Per-parameter gradient buffers, allocated only for trainable parameters.
#[derive(Debug, Clone)]
pub struct Grads {
    pub slots: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn new(params: &[Param], trainable: &[bool]) -> Self {
        Grads {
            slots: params
                .iter()
                .zip(trainable)
                .map(|(p, &t)| t.then(|| vec![0.0; p.numel()]))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    pub fn slot_mut(&mut self, id: ParamId) -> Option<&mut Vec<f64>> {
        self.slots[id.0].as_mut()
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].is_some()
    }

    pub fn zero(&mut self) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn accumulate(&mut self, id: ParamId, src: &[f64]) {
        if let Some(g) = self.slots[id.0].as_mut() {
            for (a, b) in g.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}
