//! Claim-independent student scorers.
//!
//! Both variants embed tokens, encode claim and document through separate
//! towers into fixed `hidden_dim` vectors, and join the encodings with a
//! single affine layer over `[claim ; doc ; claim*doc]`. Because
//! `encode_document_on` takes only document tokens, document encodings are
//! claim-independent by construction and can be pre-indexed.

use serde::{Deserialize, Serialize};

use super::{
    prepare_tokens, EncoderConfig, ModelError, ModelParams, ParamBinding, ParamInit,
};
use crate::tensor::{lstm_cell, LstmGates, Tape, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudentVariant {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "lstm")]
    Lstm,
}

impl std::fmt::Display for StudentVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudentVariant::Cnn => "cnn",
            StudentVariant::Lstm => "lstm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Claim,
    Doc,
}

impl Side {
    fn prefix(self) -> &'static str {
        match self {
            Side::Claim => "claim",
            Side::Doc => "doc",
        }
    }
}

pub struct StudentModel {
    pub variant: StudentVariant,
    pub config: EncoderConfig,
    pub params: ModelParams,
}

impl StudentModel {
    /// Initializes a student. Weights are drawn uniform(-0.1, 0.1) from the
    /// documented seeded generator in section order: embedding first, then
    /// the claim tower, the document tower, and the join head; biases zero.
    pub fn init(
        config: EncoderConfig,
        variant: StudentVariant,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut draw = ParamInit::new(seed);
        let mut sections = Vec::new();
        sections.push(draw.weight("embedding", &[config.vocab_size, config.embed_dim]));
        for side in ["claim", "doc"] {
            match variant {
                StudentVariant::Lstm => {
                    let h = config.hidden_dim;
                    let input = config.embed_dim + h;
                    for gate in ["input", "forget", "candidate", "output"] {
                        sections.push(draw.weight(&format!("{side}.w_{gate}"), &[h, input]));
                        sections.push(draw.zeros(&format!("{side}.b_{gate}"), &[h]));
                    }
                }
                StudentVariant::Cnn => {
                    let f = config.cnn_filters_per_width;
                    for &w in &config.cnn_kernel_widths {
                        sections.push(draw.weight(
                            &format!("{side}.conv_w{w}"),
                            &[f, config.embed_dim, w],
                        ));
                    }
                    let total = f * config.cnn_kernel_widths.len();
                    sections.push(
                        draw.weight(&format!("{side}.proj_weight"), &[config.hidden_dim, total]),
                    );
                    sections.push(draw.zeros(&format!("{side}.proj_bias"), &[config.hidden_dim]));
                }
            }
        }
        sections.push(draw.weight("join.weight", &[1, 3 * config.hidden_dim]));
        sections.push(draw.zeros("join.bias", &[1]));
        Ok(StudentModel { variant, config, params: ModelParams { sections } })
    }

    pub fn from_parts(
        config: EncoderConfig,
        variant: StudentVariant,
        params: ModelParams,
    ) -> Result<Self, ModelError> {
        let expected = Self::init(config.clone(), variant, 0)?;
        for (have, want) in params.sections.iter().zip(&expected.params.sections) {
            if have.name != want.name || have.shape != want.shape {
                return Err(ModelError::Checkpoint {
                    detail: format!(
                        "section {} {:?} does not match architecture ({} {:?})",
                        have.name, have.shape, want.name, want.shape
                    ),
                });
            }
        }
        if params.sections.len() != expected.params.sections.len() {
            return Err(ModelError::Checkpoint { detail: "section count mismatch".into() });
        }
        Ok(StudentModel { variant, config, params })
    }

    fn min_len(&self) -> usize {
        match self.variant {
            // Every configured kernel width must fit.
            StudentVariant::Cnn => self.config.cnn_kernel_widths.iter().copied().max().unwrap(),
            StudentVariant::Lstm => 1,
        }
    }

    fn lstm_gates(&self, binding: &ParamBinding, side: Side) -> LstmGates {
        let id = |gate: &str| {
            binding.id(self.params.index_of(&format!("{}.w_{gate}", side.prefix())))
        };
        let bias = |gate: &str| {
            binding.id(self.params.index_of(&format!("{}.b_{gate}", side.prefix())))
        };
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

    fn encode_on(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        tokens: &[usize],
        side: Side,
    ) -> Result<TensorId, ModelError> {
        let max_len = match side {
            Side::Claim => self.config.max_claim_len,
            Side::Doc => self.config.max_doc_len,
        };
        let ids = prepare_tokens(tokens, max_len, self.min_len(), self.config.vocab_size)?;
        let table = binding.id(self.params.index_of("embedding"));
        let emb = tape.embed(table, &ids)?; // [T, d]
        match self.variant {
            StudentVariant::Lstm => {
                let h = self.config.hidden_dim;
                let gates = self.lstm_gates(binding, side);
                let mut hidden = tape.leaf(vec![0.0; h], &[h])?;
                let mut cell = tape.leaf(vec![0.0; h], &[h])?;
                for t in 0..ids.len() {
                    let x = tape.row(emb, t)?;
                    let (nh, nc) = lstm_cell(tape, x, hidden, cell, &gates)?;
                    hidden = nh;
                    cell = nc;
                }
                Ok(hidden) // final hidden state
            }
            StudentVariant::Cnn => {
                let x = tape.transpose(emb)?; // [d, T]
                let f = self.config.cnn_filters_per_width;
                let mut pooled = Vec::new();
                for &w in &self.config.cnn_kernel_widths {
                    let kernel = binding
                        .id(self.params.index_of(&format!("{}.conv_w{w}", side.prefix())));
                    let conv = tape.conv1d(x, kernel)?; // [f, T-w+1]
                    let act = tape.tanh(conv);
                    let span = ids.len() - w + 1;
                    let pool = tape.max_pool1d(act, span)?; // [f, 1]
                    pooled.push(tape.reshape(pool, &[f])?);
                }
                let features = tape.concat(&pooled, 0)?;
                let weight =
                    binding.id(self.params.index_of(&format!("{}.proj_weight", side.prefix())));
                let bias =
                    binding.id(self.params.index_of(&format!("{}.proj_bias", side.prefix())));
                Ok(tape.affine(weight, features, bias)?)
            }
        }
    }

    /// Document encoding; reads only document tokens and student weights.
    pub fn encode_document_on(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        tokens: &[usize],
    ) -> Result<TensorId, ModelError> {
        self.encode_on(tape, binding, tokens, Side::Doc)
    }

    pub fn encode_claim_on(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        tokens: &[usize],
    ) -> Result<TensorId, ModelError> {
        self.encode_on(tape, binding, tokens, Side::Claim)
    }

    /// Join head: `affine([claim ; doc ; claim*doc]) -> scalar logit`.
    pub fn score_on(
        &self,
        tape: &mut Tape,
        binding: &ParamBinding,
        claim_enc: TensorId,
        doc_enc: TensorId,
    ) -> Result<TensorId, ModelError> {
        let prod = tape.mul(claim_enc, doc_enc)?;
        let joined = tape.concat(&[claim_enc, doc_enc, prod], 0)?;
        let weight = binding.id(self.params.index_of("join.weight"));
        let bias = binding.id(self.params.index_of("join.bias"));
        Ok(tape.affine(weight, joined, bias)?)
    }

    /// Forward-only document encoding.
    pub fn encode_document(&self, tokens: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::no_grad();
        let binding = ParamBinding::bind(&self.params, &mut tape)?;
        let enc = self.encode_document_on(&mut tape, &binding, tokens)?;
        Ok(tape.value(enc).to_vec())
    }

    /// Forward-only claim encoding.
    pub fn encode_claim(&self, tokens: &[usize]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::no_grad();
        let binding = ParamBinding::bind(&self.params, &mut tape)?;
        let enc = self.encode_claim_on(&mut tape, &binding, tokens)?;
        Ok(tape.value(enc).to_vec())
    }

    /// Scalar logit from two precomputed encodings.
    pub fn score(&self, claim_enc: &[f64], doc_enc: &[f64]) -> Result<f64, ModelError> {
        let h = self.config.hidden_dim;
        if claim_enc.len() != h || doc_enc.len() != h {
            return Err(ModelError::Tensor(crate::tensor::TensorError::Shape {
                op: "student_score",
                detail: format!("encodings {}/{} vs hidden {h}", claim_enc.len(), doc_enc.len()),
            }));
        }
        let mut tape = Tape::no_grad();
        let binding = ParamBinding::bind(&self.params, &mut tape)?;
        let c = tape.leaf(claim_enc.to_vec(), &[h])?;
        let d = tape.leaf(doc_enc.to_vec(), &[h])?;
        let s = self.score_on(&mut tape, &binding, c, d)?;
        Ok(tape.value(s)[0])
    }
}
