//! Cross-attention teacher scorer.
//!
//! Claim and document are embedded and run through separate recurrent
//! encoders; the affinity matrix between the per-step encodings drives
//! row- and column-softmax attention in both directions. Each document
//! position is fused with its attended claim summary and the second-level
//! coattention context, re-encoded by another recurrent layer, mean-pooled
//! over time and mapped to a single relevance logit. Every stage mixes the
//! two inputs, so the score cannot be decomposed into independent encodings.

use super::{
    prepare_tokens, EncoderConfig, ModelError, ModelParams, ParamBinding, ParamInit,
};
use crate::tensor::{lstm_cell, LstmGates, Tape, TensorId};

pub struct TeacherModel {
    pub config: EncoderConfig,
    pub params: ModelParams,
}

impl TeacherModel {
    /// Initializes a teacher: embedding, claim encoder, document encoder,
    /// fusion encoder, scalar head; weights uniform(-0.1, 0.1) in section
    /// order from the documented seeded generator, biases zero.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let h = config.teacher_hidden_dim;
        let mut draw = ParamInit::new(seed);
        let mut sections = Vec::new();
        sections.push(draw.weight("embedding", &[config.vocab_size, config.embed_dim]));
        for (tower, input) in
            [("claim", config.embed_dim + h), ("doc", config.embed_dim + h), ("fusion", 4 * h)]
        {
            for gate in ["input", "forget", "candidate", "output"] {
                sections.push(draw.weight(&format!("{tower}.w_{gate}"), &[h, input]));
                sections.push(draw.zeros(&format!("{tower}.b_{gate}"), &[h]));
            }
        }
        sections.push(draw.weight("head.weight", &[1, h]));
        sections.push(draw.zeros("head.bias", &[1]));
        Ok(TeacherModel { config, params: ModelParams { sections } })
    }

    pub fn from_parts(config: EncoderConfig, params: ModelParams) -> Result<Self, ModelError> {
        let expected = Self::init(config.clone(), 0)?;
        if params.sections.len() != expected.params.sections.len() {
            return Err(ModelError::Checkpoint { detail: "section count mismatch".into() });
        }
        for (have, want) in params.sections.iter().zip(&expected.params.sections) {
            if have.name != want.name || have.shape != want.shape {
                return Err(ModelError::Checkpoint {
                    detail: format!("section {} {:?} unexpected", have.name, have.shape),
                });
            }
        }
        Ok(TeacherModel { config, params })
    }

    fn gates(&self, binding: &ParamBinding, tower: &str) -> LstmGates {
        let id = |gate: &str| binding.id(self.params.index_of(&format!("{tower}.w_{gate}")));
        let bias = |gate: &str| binding.id(self.params.index_of(&format!("{tower}.b_{gate}")));
        LstmGates {
            w_input: id("input"),
            b_input: bias("input"),
            w_forget: id("forget"),
            b_forget: bias("forget"),
            w_candidate: id("candidate"),
            b_candidate: bias("candidate"),
            w_output: id("output"),
            b_output: bias("output"),
        }
    }

    /// Runs a recurrent tower over embedding rows, stacking the per-step
    /// hidden states into `[T, hidden]`.
    fn encode_states(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        tower: &str,
        emb: TensorId,
        steps: usize,
    ) -> Result<TensorId, ModelError> {
        let h = self.config.teacher_hidden_dim;
        let gates = self.gates(binding, tower);
        let mut hidden = tape.leaf(vec![0.0; h], &[h])?;
        let mut cell = tape.leaf(vec![0.0; h], &[h])?;
        let mut rows = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.row(emb, t)?;
            let (nh, nc) = lstm_cell(tape, x, hidden, cell, &gates)?;
            hidden = nh;
            cell = nc;
            rows.push(tape.reshape(nh, &[1, h])?);
        }
        Ok(tape.concat(&rows, 0)?)
    }

    fn forward(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        claim_tokens: &[usize],
        doc_tokens: &[usize],
    ) -> Result<(TensorId, TensorId), ModelError> {
        let cfg = &self.config;
        let claim_ids = prepare_tokens(claim_tokens, cfg.max_claim_len, 1, cfg.vocab_size)?;
        let doc_ids = prepare_tokens(doc_tokens, cfg.max_doc_len, 1, cfg.vocab_size)?;
        let table = binding.id(self.params.index_of("embedding"));
        let claim_emb = tape.embed(table, &claim_ids)?;
        let doc_emb = tape.embed(table, &doc_ids)?;

        let q = self.encode_states(tape, binding, "claim", claim_emb, claim_ids.len())?; // [Tq, h]
        let d = self.encode_states(tape, binding, "doc", doc_emb, doc_ids.len())?; // [Td, h]

        // Affinity: L[i][j] = d_i . q_j
        let qt = tape.transpose(q)?;
        let affinity = tape.matmul(d, qt)?; // [Td, Tq]

        // Row softmax: each document position attends over claim positions.
        let doc_to_claim = tape.softmax_rows(affinity)?;
        let claim_summary = tape.matmul(doc_to_claim, q)?; // [Td, h]

        // Column softmax: each claim position attends over document positions.
        let affinity_t = tape.transpose(affinity)?;
        let claim_to_doc = tape.softmax_rows(affinity_t)?;
        let doc_summary = tape.matmul(claim_to_doc, d)?; // [Tq, h]

        // Second-level coattention: route the claim-side document summaries
        // back to document positions.
        let context = tape.matmul(doc_to_claim, doc_summary)?; // [Td, h]

        let fused = tape.concat(&[d, claim_summary, context], 1)?; // [Td, 3h]
        let states = self.fusion_states(tape, binding, fused, doc_ids.len())?; // [Td, h]
        let pooled = tape.mean_rows(states)?;
        let weight = binding.id(self.params.index_of("head.weight"));
        let bias = binding.id(self.params.index_of("head.bias"));
        let logit = tape.affine(weight, pooled, bias)?;
        Ok((logit, affinity))
    }

    fn fusion_states(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        fused: TensorId,
        steps: usize,
    ) -> Result<TensorId, ModelError> {
        let h = self.config.teacher_hidden_dim;
        let gates = self.gates(binding, "fusion");
        let mut hidden = tape.leaf(vec![0.0; h], &[h])?;
        let mut cell = tape.leaf(vec![0.0; h], &[h])?;
        let mut rows = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.row(fused, t)?;
            let (nh, nc) = lstm_cell(tape, x, hidden, cell, &gates)?;
            hidden = nh;
            cell = nc;
            rows.push(tape.reshape(nh, &[1, h])?);
        }
        Ok(tape.concat(&rows, 0)?)
    }

    /// Joint relevance logit for one ⟨document, claim⟩ pair.
    pub fn score_on(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        claim_tokens: &[usize],
        doc_tokens: &[usize],
    ) -> Result<TensorId, ModelError> {
        Ok(self.forward(tape, binding, claim_tokens, doc_tokens)?.0)
    }

    /// Forward-only joint score.
    pub fn score(&self, claim_tokens: &[usize], doc_tokens: &[usize]) -> Result<f64, ModelError> {
        let mut tape = Tape::no_grad();
        let binding = ParamBinding::bind(&self.params, &mut tape)?;
        let logit = self.score_on(&mut tape, &binding, claim_tokens, doc_tokens)?;
        Ok(tape.value(logit)[0])
    }

    /// The affinity matrix between encoded document and claim positions,
    /// with its `[doc_len, claim_len]` shape.
    pub fn affinity(
        &self,
        claim_tokens: &[usize],
        doc_tokens: &[usize],
    ) -> Result<(Vec<f64>, (usize, usize)), ModelError> {
        let mut tape = Tape::no_grad();
        let binding = ParamBinding::bind(&self.params, &mut tape)?;
        let (_, affinity) = self.forward(&mut tape, &binding, claim_tokens, doc_tokens)?;
        let shape = tape.shape(affinity);
        let dims = (shape[0], shape[1]);
        Ok((tape.value(affinity).to_vec(), dims))
    }

    /// Per-step encodings `[T, hidden]` of one side, for tests and probes.
    pub fn side_states(
        &self,
        tower_claim: bool,
        tokens: &[usize],
    ) -> Result<(Vec<f64>, (usize, usize)), ModelError> {
        let cfg = &self.config;
        let (tower, max_len) = if tower_claim {
            ("claim", cfg.max_claim_len)
        } else {
            ("doc", cfg.max_doc_len)
        };
        let ids = prepare_tokens(tokens, max_len, 1, cfg.vocab_size)?;
        let mut tape = Tape::no_grad();
        let binding = ParamBinding::bind(&self.params, &mut tape)?;
        let table = binding.id(self.params.index_of("embedding"));
        let emb = tape.embed(table, &ids)?;
        let states = self.encode_states(&mut tape, &binding, tower, emb, ids.len())?;
        let shape = tape.shape(states);
        let dims = (shape[0], shape[1]);
        Ok((tape.value(states).to_vec(), dims))
    }
}
