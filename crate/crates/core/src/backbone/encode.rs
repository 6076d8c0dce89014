use super::{run_encoder, ModelParams};
use crate::corpus::{Document, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// A document as character ids, one vector per sentence. Id [`PAD`] marks
/// padding: padded positions and all-padding sentences are masked out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DocInput {
    pub sentences: Vec<Vec<usize>>,
}

impl DocInput {
    pub fn from_document(doc: &Document, vocab: &Vocabulary) -> Self {
        Self { sentences: doc.sentences.iter().map(|s| vocab.encode(s)).collect() }
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }
}

/// Graph handles for one encoded document.
#[derive(Clone, Debug)]
pub struct EncodedDocument {
    /// Per sentence, `n_j × d` contextual character vectors.
    pub char_reprs: Vec<Var>,
    pub char_masks: Vec<Vec<bool>>,
    /// `N × d` max-pooled sentence vectors before the document encoder.
    pub raw_sent_reprs: Var,
    /// `N × d` document-aware sentence vectors.
    pub sent_reprs: Var,
    pub sentence_mask: Vec<bool>,
    /// `1 × d`
    pub doc_repr: Var,
}

impl EncodedDocument {
    pub fn num_sentences(&self) -> usize {
        self.char_reprs.len()
    }
}

pub fn encode_document(g: &mut Graph, params: &ModelParams, input: &DocInput) -> Result<EncodedDocument> {
    let vocab = params.config.vocab_size;
    if input.sentences.is_empty() {
        return Err(Error::Data("document has no sentences".into()));
    }
    for &id in input.sentences.iter().flatten() {
        if id >= vocab {
            return Err(Error::OutOfVocab { id, vocab });
        }
    }
    let ids = &params.ids;
    let positional = params.config.positional;
    let embed_scale = (params.dim() as f64).sqrt();

    let mut char_reprs = Vec::with_capacity(input.sentences.len());
    let mut char_masks = Vec::with_capacity(input.sentences.len());
    let mut pooled = Vec::with_capacity(input.sentences.len());
    let mut sentence_mask = Vec::with_capacity(input.sentences.len());
    for sentence in &input.sentences {
        if sentence.is_empty() {
            return Err(Error::Data("empty sentence".into()));
        }
        let mask: Vec<bool> = sentence.iter().map(|&c| c != PAD).collect();
        let any = mask.iter().any(|&m| m);
        let all = mask.iter().all(|&m| m);
        let x = g.gather(ids.char_embed, sentence);
        let x = g.scale(x, embed_scale);
        let h = run_encoder(g, x, (!all).then_some(&mask[..]), &ids.sentence_encoder, positional);
        pooled.push(if any { g.max_pool_rows(h, Some(&mask)) } else { g.row(h, 0) });
        char_reprs.push(h);
        char_masks.push(mask);
        sentence_mask.push(any);
    }
    if !sentence_mask.iter().any(|&m| m) {
        return Err(Error::Data("document holds only padding".into()));
    }
    let all = sentence_mask.iter().all(|&m| m);
    let raw = g.concat_rows(&pooled);
    let sent = run_encoder(g, raw, (!all).then_some(&sentence_mask[..]), &ids.document_encoder, positional);
    let doc = g.max_pool_rows(sent, Some(&sentence_mask));
    Ok(EncodedDocument { char_reprs, char_masks, raw_sent_reprs: raw, sent_reprs: sent, sentence_mask, doc_repr: doc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::ModelConfig;
    use crate::corpus::EventSchema;
    use crate::tensor::Matrix;
    use proptest::prelude::*;

    fn model(layers: usize, dim: usize) -> ModelParams {
        let schema = EventSchema::new(vec!["A".into()], vec![vec!["x".into()]]).unwrap();
        ModelParams::init(ModelConfig { seed: 11, ..ModelConfig::new(dim, layers, 2, 7, &schema) }).unwrap()
    }

    #[test]
    fn one_char_shapes() {
        let p = model(1, 8);
        let mut g = Graph::new(&p.store);
        let e = encode_document(&mut g, &p, &DocInput { sentences: vec![vec![3]] }).unwrap();
        assert_eq!(g.shape(e.char_reprs[0]), (1, 8));
        assert_eq!(g.shape(e.sent_reprs), (1, 8));
        assert_eq!(g.shape(e.doc_repr), (1, 8));
    }

    #[test]
    fn out_of_vocab_is_an_error() {
        let p = model(1, 8);
        let mut g = Graph::new(&p.store);
        let err = encode_document(&mut g, &p, &DocInput { sentences: vec![vec![3, 7]] }).unwrap_err();
        assert!(matches!(err, Error::OutOfVocab { id: 7, vocab: 7 }));
    }

    #[test]
    fn identity_encoders_reduce_to_pooling() {
        let mut p = model(0, 2);
        p.config.positional = false;
        let table = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.0, 0.0],
            vec![1.0, -4.0],
            vec![-2.0, 3.0],
            vec![0.5, 0.5],
            vec![2.0, -1.0],
            vec![0.0, 0.0],
        ]);
        *p.store.get_mut(p.ids.char_embed) = table;
        let mut g = Graph::new(&p.store);
        let e = encode_document(&mut g, &p, &DocInput { sentences: vec![vec![2, 3], vec![4, 5]] }).unwrap();
        // Embeddings are scaled by sqrt(2); hand-pooled: s1 = (1, 3), s2 = (2, 0.5).
        let k = 2f64.sqrt();
        let s = g.value(e.sent_reprs);
        assert_eq!(s.row(0), &[k, 3.0 * k]);
        assert_eq!(s.row(1), &[2.0 * k, 0.5 * k]);
        assert_eq!(g.value(e.doc_repr).row(0), &[2.0 * k, 3.0 * k]);
    }

    proptest! {
        #[test]
        fn padding_never_changes_pooled_vectors(
            sents in prop::collection::vec(prop::collection::vec(1usize..7, 1..6), 1..4),
            pad_chars in 0usize..3,
            pad_sents in 0usize..3,
        ) {
            let p = model(2, 8);
            let mut padded: Vec<Vec<usize>> = sents.iter().map(|s| {
                let mut s = s.clone();
                s.extend(std::iter::repeat(PAD).take(pad_chars));
                s
            }).collect();
            padded.extend(std::iter::repeat(vec![PAD; 2]).take(pad_sents));
            let mut g = Graph::new(&p.store);
            let a = encode_document(&mut g, &p, &DocInput { sentences: sents.clone() }).unwrap();
            let b = encode_document(&mut g, &p, &DocInput { sentences: padded }).unwrap();
            let close = |x: &Matrix, y: &Matrix, rows: usize| {
                (0..rows).all(|r| x.row(r).iter().zip(y.row(r)).all(|(u, v)| (u - v).abs() < 1e-10))
            };
            let n = sents.len();
            prop_assert!(close(g.value(a.raw_sent_reprs), g.value(b.raw_sent_reprs), n));
            prop_assert!(close(g.value(a.sent_reprs), g.value(b.sent_reprs), n));
            prop_assert!(close(g.value(a.doc_repr), g.value(b.doc_repr), 1));
        }
    }
}
